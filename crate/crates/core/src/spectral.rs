use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::kernel::Kernel;

/// In-place forward 2D FFT of a square `side x side` row-major grid.
pub(crate) struct Fft2 {
    side: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(side: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(side);
        Self { side, fft }
    }

    pub(crate) fn side(&self) -> usize {
        self.side
    }

    pub(crate) fn process(&self, grid: &mut [Complex64]) {
        let m = self.side;
        debug_assert_eq!(grid.len(), m * m);
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        // rows are contiguous
        self.fft.process_with_scratch(grid, &mut scratch);
        let mut column = vec![Complex64::default(); m];
        for c in 0..m {
            for r in 0..m {
                column[r] = grid[r * m + c];
            }
            self.fft.process_with_scratch(&mut column, &mut scratch);
            for r in 0..m {
                grid[r * m + c] = column[r];
            }
        }
    }
}

/// Eigenvalues of the block-circulant matrix obtained by wrapping `kernel` onto
/// a `side x side` torus, indexed like the torus frequencies (row-major).
///
/// The caller guarantees `side >= 2 * radius + 1` so that distinct lags land
/// on distinct torus cells.
pub(crate) fn torus_spectrum(kernel: &Kernel, fft: &Fft2) -> Vec<f64> {
    let m = fft.side();
    let mut grid = vec![Complex64::default(); m * m];
    for (&(u, v), &r) in kernel.iter() {
        let iu = u.rem_euclid(m as i64) as usize;
        let iv = v.rem_euclid(m as i64) as usize;
        grid[iu * m + iv] += Complex64::new(r, 0.0);
    }
    fft.process(&mut grid);
    // R(u,v) = R(-u,-v) makes the transform real up to rounding.
    grid.into_iter().map(|z| z.re).collect()
}
