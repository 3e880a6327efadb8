//! The black-box objective interface shared by the optimizers.

use crate::error::Result;

/// A function on `[-1, 1]^d` to be maximized.
///
/// `Err` signals a failed evaluation (the optimizer aborts the current
/// step); a non-finite `Ok` value is treated as a failed point and recorded
/// as `-inf`.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, x: &[f64]) -> Result<f64>;
}

/// Adapts a plain closure into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: FnMut(&[f64]) -> f64,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&[f64]) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}

impl<T: Objective + ?Sized> Objective for &mut T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        (**self).evaluate(x)
    }
}
