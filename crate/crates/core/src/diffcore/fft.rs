//! 2-D FFT plumbing for circular convolution. All transforms run in `f64`;
//! results are rounded to `f32` only at the tensor boundary.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place 2-D FFT of a row-major `h x w` buffer.
pub fn fft2d(buf: &mut [Complex<f64>], h: usize, w: usize, direction: FftDirection) {
    debug_assert_eq!(buf.len(), h * w);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        let col_fft = planner.plan_fft(h, direction);

        for row in buf.chunks_exact_mut(w) {
            row_fft.process(row);
        }

        let mut col = vec![Complex::new(0.0, 0.0); h];
        for j in 0..w {
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = buf[i * w + j];
            }
            col_fft.process(&mut col);
            for (i, value) in col.iter().enumerate() {
                buf[i * w + j] = *value;
            }
        }
    });
}

pub fn to_complex(data: &[f32]) -> Vec<Complex<f64>> {
    data.iter().map(|&v| Complex::new(f64::from(v), 0.0)).collect()
}

/// Real part scaled by `1/(h*w)` (rustfft transforms are unnormalized).
pub fn to_real_f32(buf: &[Complex<f64>], h: usize, w: usize) -> Vec<f32> {
    let scale = 1.0 / (h * w) as f64;
    buf.iter().map(|c| (c.re * scale) as f32).collect()
}
