use super::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Forward,
    Backward,
}

/// `max(x, slope·x)`.
pub fn leaky_relu_forward<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// Upstream gradient times `1` where `x > 0` and `slope` elsewhere (including 0).
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, upstream: &Tensor<T>, slope: T) -> Tensor<T> {
    assert_eq!(x.shape(), upstream.shape(), "leaky_relu_backward shapes");
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { slope * g })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Both directions behind one entry point; `upstream` is ignored going forward.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, upstream: Option<&Tensor<T>>, slope: T, mode: Mode) -> Tensor<T> {
    match mode {
        Mode::Forward => leaky_relu_forward(x, slope),
        Mode::Backward => {
            leaky_relu_backward(x, upstream.expect("backward needs an upstream gradient"), slope)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn forward_values() {
        assert_eq!(leaky_relu_forward(&t(&[5.0, -10.0, 0.0]), 0.1).data(), &[5.0, -1.0, 0.0]);
    }

    #[test]
    fn backward_values() {
        let g = leaky_relu(&t(&[-2.0, 3.0, 0.0]), Some(&t(&[1.0, 1.0, 1.0])), 0.1, Mode::Backward);
        assert_eq!(g.data(), &[0.1, 1.0, 0.1]);
    }
}
