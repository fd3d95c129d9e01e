//! History term of the L1 scheme for vector-valued marches.
//!
//! Stepping `x_n = x_{n-1} + scale·F - h_n` with
//! `h_n = Σ_{m=1}^{n-1} b_{n-m} d_m` and `d_m = x_m - x_{m-1}`.
//! The far part of `h_n` (increments older than the current block) is
//! computed for a whole block of future steps at once as one matrix product;
//! the near part is accumulated directly.

use crate::error::Result;
use crate::fractional::L1Weights;

const BLOCK: usize = 64;

pub(crate) struct L1Memory {
    weights: L1Weights,
    channels: usize,
    /// Increments `d_1, d_2, ...`, one row per step.
    increments: Vec<f64>,
    count: usize,
    /// Far history for steps `block_start .. block_start + BLOCK`.
    far: Vec<f64>,
    block_start: usize,
    kernel: Vec<f64>,
}

impl L1Memory {
    /// Memory for a march of `steps` steps over `channels` unknowns.
    pub(crate) fn new(alpha: f64, steps: usize, channels: usize) -> Result<Self> {
        let weights = L1Weights::new(alpha, steps + 1)?;
        let local = weights.is_local();
        Ok(L1Memory {
            weights,
            channels,
            increments: if local {
                Vec::new()
            } else {
                Vec::with_capacity(steps * channels)
            },
            count: 0,
            far: Vec::new(),
            block_start: 0,
            kernel: Vec::new(),
        })
    }

    pub(crate) fn scale(&self, dt: f64) -> f64 {
        self.weights.scale(dt)
    }

    /// `b_j`, zero beyond the precomputed range.
    pub(crate) fn weight(&self, j: usize) -> f64 {
        self.weights.coefficients().get(j).copied().unwrap_or(0.0)
    }

    /// Writes `h_n` for the next step `n = count + 1`.
    pub(crate) fn history(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        out.fill(0.0);
        if self.weights.is_local() || self.count == 0 {
            return;
        }
        let n = self.count + 1;
        if self.far.is_empty() || n >= self.block_start + BLOCK {
            self.refresh_far(n);
        }
        let c = self.channels;
        let row = n - self.block_start;
        out.copy_from_slice(&self.far[row * c..(row + 1) * c]);
        let b = self.weights.coefficients();
        for m in self.block_start..n {
            let w = b[n - m];
            let d = &self.increments[(m - 1) * c..m * c];
            for (o, &v) in out.iter_mut().zip(d) {
                *o += w * v;
            }
        }
    }

    /// Far history for the block of steps starting at `start`, using the
    /// increments `d_1 .. d_{start-1}`.
    fn refresh_far(&mut self, start: usize) {
        let c = self.channels;
        let k = start - 1;
        self.block_start = start;
        self.far.clear();
        self.far.resize(BLOCK * c, 0.0);
        if k == 0 {
            return;
        }
        let b = self.weights.coefficients();
        self.kernel.clear();
        self.kernel.reserve(BLOCK * k);
        for r in 0..BLOCK {
            // weight of increment m (1-based) for step start + r
            self.kernel.extend((1..=k).map(|m| b.get(start + r - m).copied().unwrap_or(0.0)));
        }
        // SAFETY: the slices hold BLOCK×k, k×c and BLOCK×c row-major matrices.
        unsafe {
            matrixmultiply::dgemm(
                BLOCK,
                k,
                c,
                1.0,
                self.kernel.as_ptr(),
                k as isize,
                1,
                self.increments.as_ptr(),
                c as isize,
                1,
                0.0,
                self.far.as_mut_ptr(),
                c as isize,
                1,
            );
        }
    }

    /// Records `d_n` for the step just taken.
    pub(crate) fn push(&mut self, increment: &[f64]) {
        debug_assert_eq!(increment.len(), self.channels);
        self.count += 1;
        if !self.weights.is_local() {
            self.increments.extend_from_slice(increment);
        }
    }
}
