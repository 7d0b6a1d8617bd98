//! Batched 3-D complex FFT on top of rustfft.
//!
//! Data is kept in standard layout (axis 0 slowest, axis 2 fastest). Each
//! axis is transformed by a contiguous batched pass over the last axis,
//! interleaved with cyclic axis rotations (a,b,c) -> (b,c,a). Three
//! rotations restore the original layout, so the pipeline returns a buffer
//! in the same index order it received.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, Mutex, OnceLock};

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = planner().lock().unwrap();
    if inverse {
        p.plan_fft_inverse(len)
    } else {
        p.plan_fft_forward(len)
    }
}

/// One batched pass over contiguous rows of length `row_len`.
/// `rows_per_task` rows are handed to each rayon task with its own scratch.
fn fft_rows(buf: &mut [Complex64], row_len: usize, rows_per_task: usize, fft: &Arc<dyn Fft<f64>>) {
    let chunk = row_len * rows_per_task.max(1);
    buf.par_chunks_mut(chunk).for_each_init(
        || vec![Complex64::default(); fft.get_inplace_scratch_len()],
        |scratch, chunk| fft.process_with_scratch(chunk, scratch),
    );
}

/// Cyclic rotation of a (a,b,c) standard-layout buffer into (b,c,a):
/// dst[(ib*c + ic)*a + ia] = src[(ia*b + ib)*c + ic].
fn rotate(src: &[Complex64], dims: (usize, usize, usize), dst: &mut [Complex64]) {
    let (a, b, c) = dims;
    dst.par_chunks_mut(c * a).enumerate().for_each(|(ib, plane)| {
        for ia in 0..a {
            let base = (ia * b + ib) * c;
            let row = &src[base..base + c];
            for (ic, &v) in row.iter().enumerate() {
                plane[ic * a + ia] = v;
            }
        }
    });
}

/// Unnormalized 3-D DFT (or inverse DFT) of a standard-layout buffer.
/// Consumes the input buffer and returns the transformed one.
pub(crate) fn fft3(mut buf: Vec<Complex64>, n: [usize; 3], inverse: bool) -> Vec<Complex64> {
    let [n1, n2, n3] = n;
    debug_assert_eq!(buf.len(), n1 * n2 * n3);
    let mut tmp = vec![Complex64::default(); buf.len()];

    // axis 2 on (n1,n2,n3)
    fft_rows(&mut buf, n3, n2, &plan(n3, inverse));
    rotate(&buf, (n1, n2, n3), &mut tmp);
    // axis 0, now last on (n2,n3,n1)
    fft_rows(&mut tmp, n1, n3, &plan(n1, inverse));
    rotate(&tmp, (n2, n3, n1), &mut buf);
    // axis 1, now last on (n3,n1,n2)
    fft_rows(&mut buf, n2, n1, &plan(n2, inverse));
    rotate(&buf, (n3, n1, n2), &mut tmp);

    tmp
}
