//! A sequential convolutional regressor written out by hand: forward and
//! reverse passes, mean-square loss, SGD with a step learning-rate
//! schedule, evaluation under detector noise and a checksummed checkpoint
//! format.

mod checkpoint;
mod config;
mod network;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use checkpoint::{decode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_FILE, PARAMS_FILE};
pub use config::{Init, Layer, NetworkConfig, Precision, Shape};
pub use network::{loss_mse, LayerParams, Network, ParameterSet, Trace};
pub use train::{
    evaluate, predict_m2, sgd_step, train, EpochStats, LrSchedule, NoiseEvaluation, Prediction, SgdConfig, SigmaRange,
    TrainOptions, TrainState, PE_THRESHOLDS,
};

/// A strided matrix view: `(rows, cols, row stride, column stride)`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Layout { rows, cols, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major `cols × rows` matrix.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Layout { rows, cols, rs: 1, cs: rows }
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < len
    }
}

/// Floating-point element type of a network.
pub trait Scalar:
    num_traits::Float + Sum + AddAssign + SubAssign + MulAssign + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Raw `C ← A·B + β·C`.
    #[doc(hidden)]
    ///
    /// # Safety
    /// Every view must lie inside its slice and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(m: usize, k: usize, n: usize, a: *const Self, la: Layout, b: *const Self, lb: Layout, beta: Self, c: *mut Self, lc: Layout);
}

/// `C ← A·B + β·C`.
pub(crate) fn gemm<T: Scalar>(a: &[T], la: Layout, b: &[T], lb: Layout, beta: T, c: &mut [T], lc: Layout) {
    assert!(la.cols == lb.rows && la.rows == lc.rows && lb.cols == lc.cols, "gemm dimensions");
    assert!(la.fits(a.len()) && lb.fits(b.len()) && lc.fits(c.len()), "gemm view out of bounds");
    // SAFETY: the views were checked against the slice lengths, and `c` is a
    // unique borrow so it cannot alias the shared `a` and `b`.
    unsafe { T::gemm_raw(la.rows, la.cols, lb.cols, a.as_ptr(), la, b.as_ptr(), lb, beta, c.as_mut_ptr(), lc) }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $from:expr, $to:expr) => {
        impl Scalar for $t {
            fn from_f64(v: f64) -> Self {
                $from(v)
            }
            fn as_f64(self) -> f64 {
                $to(self)
            }
            unsafe fn gemm_raw(m: usize, k: usize, n: usize, a: *const Self, la: Layout, b: *const Self, lb: Layout, beta: Self, c: *mut Self, lc: Layout) {
                $gemm(
                    m, k, n, 1.0,
                    a, la.rs as isize, la.cs as isize,
                    b, lb.rs as isize, lb.cs as isize,
                    beta, c, lc.rs as isize, lc.cs as isize,
                )
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, |v: f64| v as f32, f64::from);
impl_scalar!(f64, matrixmultiply::dgemm, |v: f64| v, |v: f64| v);
