//! Dense row-major tensors and the spike backward-mode selector.

use crate::error::{Error, Result};

/// Shape-carrying dense array of `f64` values in row-major order.
///
/// A tensor may additionally carry a gradient buffer of the same shape,
/// populated by [`crate::tape::Tape::backward`] for leaves that were
/// registered with `requires_grad` set.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, checking that the shape product matches the value count.
    pub fn new(shape: impl Into<Vec<usize>>, values: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            values: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-1 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self::full([1], value)
    }

    /// Marks the tensor as a gradient target when used as a tape leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        if let Some(g) = &grad {
            debug_assert_eq!(g.len(), self.values.len());
        }
        self.grad = grad;
    }

    /// Value of the single element of a rank-anything one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor with {} elements",
                self.numel()
            )));
        }
        Ok(self.values[0])
    }

    /// Reinterpret the same values under a new shape.
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.values.clone())
    }

    /// Axis treated as the channel axis by channel-broadcast operations.
    pub fn channel_axis(&self) -> usize {
        channel_axis_of(&self.shape)
    }

    pub fn channel_count(&self) -> usize {
        self.shape[self.channel_axis()]
    }

    /// True when every value is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Axis treated as the channel axis by channel-broadcast operations.
///
/// Feature tensors are `B x C x H x W` or `C x H x W` (axis `ndim - 3`);
/// flat layouts `B x C` or `C` use their last axis.
pub fn channel_axis_of(shape: &[usize]) -> usize {
    if shape.len() >= 3 {
        shape.len() - 3
    } else {
        shape.len() - 1
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Backward semantics of the spike nonlinearity.
///
/// Forward is the Heaviside step (ties at zero fire) except in `Relaxed`
/// mode, which swaps in the smooth logistic so finite differences can probe
/// the whole computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeBackward {
    /// True derivative of the step: zero everywhere it exists.
    ExactZero,
    /// Sigmoid surrogate with steepness `alpha`.
    Surrogate { alpha: f64 },
    /// Smooth forward `sigmoid(alpha * u)` with its true derivative.
    Relaxed { alpha: f64 },
}

/// Default surrogate steepness; gives slope 1 at the threshold crossing.
pub const DEFAULT_ALPHA: f64 = 4.0;

impl SpikeBackward {
    pub fn surrogate() -> Self {
        SpikeBackward::Surrogate {
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn relaxed() -> Self {
        SpikeBackward::Relaxed {
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            SpikeBackward::ExactZero => None,
            SpikeBackward::Surrogate { alpha } | SpikeBackward::Relaxed { alpha } => Some(alpha),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if let Some(alpha) = self.alpha() {
            if !(alpha > 0.0) {
                return Err(Error::Contract(format!(
                    "spike surrogate steepness must be positive, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for SpikeBackward {
    fn default() -> Self {
        SpikeBackward::surrogate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_values() {
        assert!(Tensor::new([2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new([2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Tensor::new([0, 3], vec![]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn channel_axis_convention() {
        assert_eq!(Tensor::zeros([2, 3, 4, 5]).channel_axis(), 1);
        assert_eq!(Tensor::zeros([3, 4, 5]).channel_axis(), 0);
        assert_eq!(Tensor::zeros([2, 3]).channel_axis(), 1);
        assert_eq!(Tensor::zeros([3]).channel_axis(), 0);
    }

    #[test]
    fn sigmoid_matches_closed_form() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((sigmoid(-30.0)).abs() < 1e-12);
        assert!((logit(sigmoid(1.7)) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn surrogate_alpha_validated() {
        assert!(SpikeBackward::Surrogate { alpha: -1.0 }.validate().is_err());
        assert!(SpikeBackward::surrogate().validate().is_ok());
        assert!(SpikeBackward::ExactZero.validate().is_ok());
    }
}
