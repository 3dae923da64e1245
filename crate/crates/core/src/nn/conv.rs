//! 2-D convolution (cross-correlation) with optional CoordConv input
//! augmentation, lowered to im2col + GEMM.

use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Convolution weights and geometry.
///
/// `in_ch` counts every input channel the kernel sees; for a CoordConv layer
/// that includes the two coordinate channels appended after the data
/// channels (x first, then y).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub coordconv: bool,
    /// `out_ch × in_ch × kernel × kernel`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(
        out_ch: usize,
        data_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        coordconv: bool,
    ) -> Self {
        let in_ch = data_ch + if coordconv { 2 } else { 0 };
        Self {
            out_ch,
            in_ch,
            kernel,
            stride,
            padding,
            coordconv,
            weight: vec![T::zero(); out_ch * in_ch * kernel * kernel],
            bias: vec![T::zero(); out_ch],
        }
    }

    /// Channels expected in the layer input, excluding coordinate channels.
    pub fn data_channels(&self) -> usize {
        self.in_ch - if self.coordconv { 2 } else { 0 }
    }

    #[inline]
    pub fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + i) * self.kernel + ky) * self.kernel + kx
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let span = |n: usize| -> Result<usize, NnError> {
            let padded = n + 2 * self.padding;
            if padded < self.kernel || self.stride == 0 {
                return Err(NnError::ShapeMismatch(format!(
                    "input extent {n} too small for kernel {}",
                    self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((span(h)?, span(w)?))
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            out_ch: self.out_ch,
            in_ch: self.in_ch,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            coordconv: self.coordconv,
            weight: self.weight.iter().map(|v| U::of(Scalar::to_f64(*v))).collect(),
            bias: self.bias.iter().map(|v| U::of(Scalar::to_f64(*v))).collect(),
        }
    }
}

/// Coordinate channels for an `h × w` map: channel 0 holds `x = j / (w-1)`,
/// channel 1 holds `y = i / (h-1)`, both in `[0, 1]`.
pub fn coord_channels<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([1, 2, h, w]);
    let wd = T::of((w.max(2) - 1) as f64);
    let hd = T::of((h.max(2) - 1) as f64);
    for i in 0..h {
        for j in 0..w {
            t.set(0, 0, i, j, T::of(j as f64) / wd);
            t.set(0, 1, i, j, T::of(i as f64) / hd);
        }
    }
    t
}

/// Append the coordinate channels to every sample of `x`.
pub fn augment_with_coords<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let coords = coord_channels::<T>(h, w);
    let mut out = Tensor::zeros([n, c + 2, h, w]);
    for s in 0..n {
        let dst = out.sample_mut(s);
        dst[..c * h * w].copy_from_slice(x.sample(s));
        dst[c * h * w..].copy_from_slice(coords.data());
    }
    out
}

fn check_input<T: Scalar>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<(), NnError> {
    let c = x.shape()[1];
    if c != layer.data_channels() {
        return Err(NnError::ShapeMismatch(format!(
            "conv expects {} input channels, got {c}",
            layer.data_channels()
        )));
    }
    if layer.weight.len() != layer.out_ch * layer.in_ch * layer.kernel * layer.kernel
        || layer.bias.len() != layer.out_ch
    {
        return Err(NnError::ShapeMismatch("conv parameter buffers have the wrong size".into()));
    }
    Ok(())
}

/// Unfold one `C × H × W` sample into a `(C·k·k) × (Ho·Wo)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back into an image, accumulating overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dst: &mut [T],
) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * p;
                let src = &cols[row..row + p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass. Output extent per axis is `floor((in + 2p - k) / s) + 1`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>, NnError> {
    check_input(x, layer)?;
    let augmented;
    let input = if layer.coordconv {
        augmented = augment_with_coords(x);
        &augmented
    } else {
        x
    };
    let [n, c, h, w] = input.shape();
    let (ho, wo) = layer.output_size(h, w)?;
    let (k, p) = (layer.kernel, ho * wo);
    let kk = c * k * k;
    let mut cols = vec![T::zero(); kk * p];
    let mut out = Tensor::zeros([n, layer.out_ch, ho, wo]);
    for s in 0..n {
        im2col(input.sample(s), c, h, w, k, layer.stride, layer.padding, ho, wo, &mut cols);
        let dst = out.sample_mut(s);
        for (o, plane) in dst.chunks_exact_mut(p).enumerate() {
            plane.fill(layer.bias[o]);
        }
        T::gemm(
            layer.out_ch,
            kk,
            p,
            T::one(),
            &layer.weight,
            kk as isize,
            1,
            &cols,
            p as isize,
            1,
            T::one(),
            dst,
            p as isize,
            1,
        );
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input (data channels
/// only), weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Vec<T>,
    pub grad_b: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    conv2d_backward_opt(x, layer, upstream, true)
}

/// Backward pass; skips the input gradient when `need_grad_x` is false
/// (first layer of a network).
pub fn conv2d_backward_opt<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    upstream: &Tensor<T>,
    need_grad_x: bool,
) -> Result<ConvGrads<T>, NnError> {
    check_input(x, layer)?;
    let augmented;
    let input = if layer.coordconv {
        augmented = augment_with_coords(x);
        &augmented
    } else {
        x
    };
    let [n, c, h, w] = input.shape();
    let (ho, wo) = layer.output_size(h, w)?;
    if upstream.shape() != [n, layer.out_ch, ho, wo] {
        return Err(NnError::ShapeMismatch(format!(
            "upstream gradient {:?}, expected {:?}",
            upstream.shape(),
            [n, layer.out_ch, ho, wo]
        )));
    }
    let (k, p) = (layer.kernel, ho * wo);
    let kk = c * k * k;
    let data_c = layer.data_channels();
    let mut cols = vec![T::zero(); kk * p];
    let mut grad_cols = vec![T::zero(); kk * p];
    let mut grad_w = vec![T::zero(); layer.weight.len()];
    let mut grad_b = vec![T::zero(); layer.out_ch];
    let mut grad_x = Tensor::zeros([n, data_c, h, w]);
    let mut grad_in = vec![T::zero(); c * h * w];
    for s in 0..n {
        let dy = upstream.sample(s);
        for (o, plane) in dy.chunks_exact(p).enumerate() {
            grad_b[o] = grad_b[o] + plane.iter().copied().sum::<T>();
        }
        im2col(input.sample(s), c, h, w, k, layer.stride, layer.padding, ho, wo, &mut cols);
        // dW += dY · colsᵀ
        T::gemm(
            layer.out_ch,
            p,
            kk,
            T::one(),
            dy,
            p as isize,
            1,
            &cols,
            1,
            p as isize,
            T::one(),
            &mut grad_w,
            kk as isize,
            1,
        );
        if !need_grad_x {
            continue;
        }
        // dcols = Wᵀ · dY
        T::gemm(
            kk,
            layer.out_ch,
            p,
            T::one(),
            &layer.weight,
            1,
            kk as isize,
            dy,
            p as isize,
            1,
            T::zero(),
            &mut grad_cols,
            p as isize,
            1,
        );
        grad_in.fill(T::zero());
        col2im(&grad_cols, c, h, w, k, layer.stride, layer.padding, ho, wo, &mut grad_in);
        grad_x
            .sample_mut(s)
            .copy_from_slice(&grad_in[..data_c * h * w]);
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

/// Turn a plain convolution into a CoordConv one. Each of the two new input
/// slices is initialised, per output filter and kernel position, with the
/// mean of the original weights across input channels; the original slices
/// are copied unchanged.
pub fn inflate_weights<T: Scalar>(layer: &ConvLayer<T>) -> ConvLayer<T> {
    assert!(!layer.coordconv, "layer already carries coordinate channels");
    assert!(layer.in_ch >= 1);
    let k2 = layer.kernel * layer.kernel;
    let mut out = ConvLayer::zeros(
        layer.out_ch,
        layer.in_ch,
        layer.kernel,
        layer.stride,
        layer.padding,
        true,
    );
    out.bias.clone_from(&layer.bias);
    let n = T::of(layer.in_ch as f64);
    for o in 0..layer.out_ch {
        let src = &layer.weight[o * layer.in_ch * k2..(o + 1) * layer.in_ch * k2];
        let dst = &mut out.weight[o * out.in_ch * k2..(o + 1) * out.in_ch * k2];
        dst[..src.len()].copy_from_slice(src);
        for pos in 0..k2 {
            let mean = (0..layer.in_ch).map(|i| src[i * k2 + pos]).sum::<T>() / n;
            dst[layer.in_ch * k2 + pos] = mean;
            dst[(layer.in_ch + 1) * k2 + pos] = mean;
        }
    }
    out
}
