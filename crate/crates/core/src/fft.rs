//! Square-array FFT helpers on top of `rustfft`.
//!
//! Arrays are row-major `n × n`, rows along y and columns along x. Inverse
//! transforms are normalized so that `inverse(forward(a)) == a`.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) struct SquareFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SquareFft {
    pub fn new(n: usize) -> Self {
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        SquareFft {
            n,
            forward,
            inverse,
        }
    }

    /// Transforms every row (the x direction).
    pub fn rows_forward(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.n * self.n);
        self.forward.process(data);
    }

    pub fn rows_inverse(&self, data: &mut [Complex64]) {
        self.inverse.process(data);
        let s = 1.0 / self.n as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn forward_2d(&self, data: &mut [Complex64]) {
        self.forward.process(data);
        transpose(data, self.n);
        self.forward.process(data);
        transpose(data, self.n);
    }

    pub fn inverse_2d(&self, data: &mut [Complex64]) {
        self.inverse.process(data);
        transpose(data, self.n);
        self.inverse.process(data);
        transpose(data, self.n);
        let s = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

pub(crate) fn transpose<T>(data: &mut [T], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// DFT sample frequencies in cycles per unit length, in FFT order.
pub(crate) fn frequencies(n: usize, spacing: f64) -> Vec<f64> {
    let df = 1.0 / (n as f64 * spacing);
    (0..n)
        .map(|i| {
            if i < n.div_ceil(2) {
                i as f64 * df
            } else {
                (i as f64 - n as f64) * df
            }
        })
        .collect()
}
