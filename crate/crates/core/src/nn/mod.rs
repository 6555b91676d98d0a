//! Small dense-network engine: parameter sets, a reverse-mode tape over
//! batched matrix primitives, MLP/dueling/quantile networks and Adam.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient checks use `f64`.

mod adam;
mod heads;
mod layers;
mod param;
mod tape;

pub use adam::AdamState;
pub use heads::{combine, midpoint_fractions, DuelingNet, QuantileNet};
pub(crate) use heads::atom_means;
pub use layers::{Activation, DenseStack, Mlp, MlpSpec};
pub use param::ParamSet;
pub use tape::{Grads, Tape, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("loss node has shape {0:?}; backward needs a 1x1 scalar")]
    NonScalarLoss(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

/// Floating-point element type of networks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: DType;

    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn lit(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn lit(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Stacks observations into a batch, dividing every entry by `norm`.
pub fn normalized_batch<F: Real, S: AsRef<[f64]>>(rows: &[S], norm: f64) -> Array2<F> {
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        for (d, &s) in dst.iter_mut().zip(src.as_ref()) {
            *d = F::lit(s / norm);
        }
    }
    out
}

pub(crate) fn check_cols<F>(x: &ArrayView2<F>, cols: usize, context: &'static str) -> Result<(), NnError> {
    if x.ncols() != cols {
        return Err(NnError::ShapeMismatch {
            context,
            expected: vec![x.nrows(), cols],
            got: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index. NaN never wins
/// over a number.
pub fn argmax<F: PartialOrd + Copy>(values: impl IntoIterator<Item = F>) -> Option<usize> {
    let mut best: Option<(usize, F)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}
