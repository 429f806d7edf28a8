//! Minimal 2-D FFT plumbing over rustfft.
//!
//! Layout convention: row-major `data[i * n2 + j]` where `i` indexes the
//! first (alpha) direction and `j` the second (beta) direction.  Forward
//! transforms are unnormalized; the inverse divides by `n1 * n2`, so the
//! Fourier coefficient of mode `(m, n)` is `forward[m * n2 + n] / (n1 * n2)`.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(len: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    let inverse = matches!(dir, FftDirection::Inverse);
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| FftPlanner::new().plan_fft(len, dir))
            .clone()
    })
}

/// In-place 2-D transform of `data` (n1 rows, n2 columns, row-major).
fn transform2(data: &mut [Complex64], n1: usize, n2: usize, dir: FftDirection) {
    debug_assert_eq!(data.len(), n1 * n2);
    // Rows are contiguous: one batched pass handles all n1 of them.
    plan(n2, dir).process(data);
    // Columns via transpose, batched pass, transpose back.
    let mut t = vec![Complex64::default(); n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            t[j * n1 + i] = data[i * n2 + j];
        }
    }
    plan(n1, dir).process(&mut t);
    for i in 0..n1 {
        for j in 0..n2 {
            data[i * n2 + j] = t[j * n1 + i];
        }
    }
}

/// Forward 2-D transform of a real field (unnormalized).
pub fn forward(values: &[f64], n1: usize, n2: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform2(&mut data, n1, n2, FftDirection::Forward);
    data
}

/// Inverse 2-D transform back to a real field (normalized by `1/(n1*n2)`).
///
/// The imaginary parts are discarded; callers keep spectra Hermitian
/// (real multipliers, conjugate-symmetric masks) so they are at roundoff.
pub fn inverse_real(spectrum: &[Complex64], n1: usize, n2: usize) -> Vec<f64> {
    let mut data = spectrum.to_vec();
    transform2(&mut data, n1, n2, FftDirection::Inverse);
    let scale = 1.0 / (n1 * n2) as f64;
    data.iter().map(|c| c.re * scale).collect()
}
