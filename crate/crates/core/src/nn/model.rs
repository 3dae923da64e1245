use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::{leaky_relu_backward, leaky_relu_forward};
use super::conv::{conv2d_backward_opt, conv2d_forward, inflate_weights, ConvLayer};
use super::head::{Anchor, HeadLayout, OBJ, SLOT_LEN};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Architecture of the toy detector.
///
/// The backbone is a stack of 3×3 stride-2 convolutions, each followed by a
/// LeakyReLU; the head is a single 1×1 convolution producing
/// `anchors · (5 + 4)` channels on the final grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub anchors: Vec<Anchor>,
    /// Append coordinate channels to every backbone convolution.
    pub coordconv: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_width: 256,
            input_height: 256,
            input_channels: 1,
            channels: vec![8, 16, 32, 64, 64],
            kernel: 3,
            leaky_slope: 0.1,
            anchors: vec![
                Anchor { w: 128.0, h: 32.0 },
                Anchor { w: 128.0, h: 96.0 },
                Anchor { w: 128.0, h: 192.0 },
            ],
            coordconv: true,
        }
    }
}

impl DetectorConfig {
    pub fn plain() -> Self {
        Self {
            coordconv: false,
            ..Self::default()
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.channels.len()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let s = self.stride();
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("backbone needs at least one block with nonzero channels".into());
        }
        if self.input_width % s != 0 || self.input_height % s != 0 || self.input_width == 0 || self.input_height == 0 {
            return bad(format!(
                "input {}x{} not divisible by total stride {s}",
                self.input_width, self.input_height
            ));
        }
        if self.input_channels == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return bad("input channels must be >= 1 and the kernel odd".into());
        }
        if self.anchors.is_empty() || self.anchors.iter().any(|a| !(a.w > 0.0 && a.h > 0.0)) {
            return bad("anchors must be non-empty and positive".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> HeadLayout {
        let s = self.stride();
        HeadLayout {
            anchors: self.anchors.clone(),
            stride: s as f64,
            grid_w: self.input_width / s,
            grid_h: self.input_height / s,
        }
    }

    /// Shapes of every layer's `(weight, bias)` buffer, in declared order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut in_ch = self.input_channels;
        let extra = if self.coordconv { 2 } else { 0 };
        for &out in &self.channels {
            shapes.push((out * (in_ch + extra) * self.kernel * self.kernel, out));
            in_ch = out;
        }
        let head = self.anchors.len() * SLOT_LEN;
        shapes.push((head * in_ch, head));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(w, b)| w + b).sum()
    }
}

/// Backbone plus head; the last layer is the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector<T> {
    pub config: DetectorConfig,
    pub layers: Vec<ConvLayer<T>>,
}

/// Layer inputs recorded by [`Detector::forward_train`].
#[derive(Debug)]
pub struct ForwardCache<T> {
    inputs: Vec<Tensor<T>>,
}

/// Per-layer parameter gradients, same order as [`Detector::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

/// Prior objectness logit for the head bias, σ(-4.6) ≈ 0.01.
pub const OBJECTNESS_PRIOR_LOGIT: f64 = -4.6;

impl<T: Scalar> Detector<T> {
    /// Fresh network with Kaiming-uniform kernels: `U(-b, b)` with
    /// `b = gain · sqrt(3 / fan_in)`, `gain = sqrt(2 / (1 + slope²))` for
    /// backbone layers and 1 for the head. `fan_in` counts coordinate
    /// channels. Biases start at zero except the head objectness bias, which
    /// starts at [`OBJECTNESS_PRIOR_LOGIT`].
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel;
        let mut layers = Vec::with_capacity(config.channels.len() + 1);
        let mut in_ch = config.input_channels;
        let gain = (2.0 / (1.0 + config.leaky_slope * config.leaky_slope)).sqrt();
        for &out in &config.channels {
            let mut layer = ConvLayer::zeros(out, in_ch, k, 2, k / 2, config.coordconv);
            let bound = gain * (3.0 / (layer.in_ch * k * k) as f64).sqrt();
            layer
                .weight
                .iter_mut()
                .for_each(|w| *w = T::of(rng.random_range(-bound..bound)));
            layers.push(layer);
            in_ch = out;
        }
        let head_ch = config.anchors.len() * SLOT_LEN;
        let mut head = ConvLayer::zeros(head_ch, in_ch, 1, 1, 0, false);
        let bound = (3.0 / in_ch as f64).sqrt();
        head.weight
            .iter_mut()
            .for_each(|w| *w = T::of(rng.random_range(-bound..bound)));
        for a in 0..config.anchors.len() {
            head.bias[a * SLOT_LEN + OBJ] = T::of(OBJECTNESS_PRIOR_LOGIT);
        }
        layers.push(head);
        Ok(Self { config, layers })
    }

    pub fn slope(&self) -> T {
        T::of(self.config.leaky_slope)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let [_, c, h, w] = x.shape();
        let cfg = &self.config;
        if (c, h, w) != (cfg.input_channels, cfg.input_height, cfg.input_width) {
            return Err(NnError::ShapeMismatch(format!(
                "detector input {:?}, expected [_, {}, {}, {}]",
                x.shape(),
                cfg.input_channels,
                cfg.input_height,
                cfg.input_width
            )));
        }
        Ok(())
    }

    /// Raw head map for a batch.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let (last, backbone) = self.layers.split_last().expect("detector has a head");
        let mut h = x.clone();
        for layer in backbone {
            h = leaky_relu_forward(&conv2d_forward(&h, layer)?, self.slope());
        }
        conv2d_forward(&h, last)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        self.check_input(x)?;
        let (last, backbone) = self.layers.split_last().expect("detector has a head");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in backbone {
            let next = leaky_relu_forward(&conv2d_forward(&h, layer)?, self.slope());
            inputs.push(std::mem::replace(&mut h, next));
        }
        let out = conv2d_forward(&h, last)?;
        inputs.push(h);
        Ok((out, ForwardCache { inputs }))
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the head map.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<ParamGrads<T>, NnError> {
        let n = self.layers.len();
        let mut weight = vec![Vec::new(); n];
        let mut bias = vec![Vec::new(); n];
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            let x = &cache.inputs[i];
            let grads = conv2d_backward_opt(x, &self.layers[i], &g, i > 0)?;
            weight[i] = grads.grad_w;
            bias[i] = grads.grad_b;
            if i > 0 {
                // The input of layer i is the LeakyReLU output of layer i-1;
                // its sign matches the pre-activation's.
                g = leaky_relu_backward(x, &grads.grad_x, self.slope());
            }
        }
        Ok(ParamGrads { weight, bias })
    }

    /// All parameters in declared order: each layer's weights then bias.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn from_flat(config: DetectorConfig, flat: &[T]) -> Result<Self, NnError> {
        let mut det = Self::new(config, 0)?;
        if flat.len() != det.param_count() {
            return Err(NnError::CheckpointMismatch(format!(
                "{} parameters for a config that needs {}",
                flat.len(),
                det.param_count()
            )));
        }
        let mut rest = flat;
        for l in &mut det.layers {
            let (w, r) = rest.split_at(l.weight.len());
            l.weight.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(det)
    }

    /// CoordConv version of a plain network: every backbone convolution is
    /// inflated with channel-mean initialised coordinate slices.
    pub fn inflate(&self) -> Self {
        assert!(!self.config.coordconv, "detector already uses CoordConv");
        let n = self.layers.len();
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| if i + 1 < n { inflate_weights(l) } else { l.clone() })
            .collect();
        Self {
            config: DetectorConfig {
                coordconv: true,
                ..self.config.clone()
            },
            layers,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Detector<U> {
        Detector {
            config: self.config.clone(),
            layers: self.layers.iter().map(ConvLayer::cast).collect(),
        }
    }
}
