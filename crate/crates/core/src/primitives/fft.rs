//! Unitary multi-axis DFT on row-major buffers.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::tensor::strides;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unitary DFT (or its inverse) along each of `axes`.
pub fn fft_axes(data: &mut [Complex64], shape: &[usize], axes: &[usize], inverse: bool) {
    let st = strides(shape);
    for &axis in axes {
        let n = shape[axis];
        if n == 1 {
            continue;
        }
        let plan = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        });
        let stride = st[axis];
        let outer = data.len() / (n * stride);
        let norm = 1.0 / (n as f64).sqrt();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[base + k * stride];
                }
                plan.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[base + k * stride] = v * norm;
                }
            }
        }
    }
}

/// Signed DFT frequency index for bin `k` of an `n`-point transform.
pub fn freq_index(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}
