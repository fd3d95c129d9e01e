//! Scalar fractional-calculus kernels.
//!
//! Everything here works on uniformly sampled time series `f(t_n)`, `t_n = n·dt`.
//! The Caputo derivatives use the L1 (piecewise-linear) scheme
//!
//! ```text
//! D^α f(t_n) ≈ 1/(dt^α Γ(2-α)) Σ_{j=0}^{n-1} b_j (f_{n-j} - f_{n-j-1}),
//! b_j = (j+1)^{1-α} - j^{1-α},
//! ```
//!
//! which collapses to the backward difference at `α = 1`. The fractional
//! integral uses product-trapezoidal weights.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Hard cap on Mittag-Leffler series terms.
pub const MITTAG_LEFFLER_MAX_TERMS: usize = 10_000;

fn check_alpha(function: &'static str, alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            function,
            value: alpha,
            expected: "order in (0, 1]",
        })
    }
}

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument (original minus one)
    LANCZOS_COEFFS[1..]
        .iter()
        .enumerate()
        .fold(LANCZOS_COEFFS[0], |acc, (k, c)| acc + c / (x + k as f64 + 1.0))
}

/// Γ(x) for `x > 0`, relative accuracy around 1e-15.
///
/// Small positive integers are returned as exact factorials so that integer
/// orders (notably `α = 1`) reduce without rounding.
pub fn gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain {
            function: "gamma",
            value: x,
            expected: "x > 0",
        });
    }
    if x.fract() == 0.0 && x <= 23.0 {
        return Ok((2..x as u32).fold(1.0, |acc, k| acc * k as f64));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_unchecked(1.0 - x))
    } else {
        let x = x - 1.0;
        let t = x + LANCZOS_G + 0.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * lanczos_sum(x)
    }
}

/// ln Γ(x) for `x > 0`; used where Γ itself would overflow.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain {
            function: "ln_gamma",
            value: x,
            expected: "x > 0",
        });
    }
    if x < 0.5 {
        return Ok(gamma_unchecked(x).ln());
    }
    let x = x - 1.0;
    let t = x + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + lanczos_sum(x).ln())
}

/// One-parameter Mittag-Leffler function `E_α(z) = Σ z^k / Γ(αk + 1)` by direct
/// series summation.
///
/// Terms are added until two consecutive terms fall below `1e-14` of the
/// running sum. For `z ≥ 0` the result is accurate to a few ulps up to
/// `|z| ≈ 50`. For negative `z` the series alternates, so the absolute error
/// grows like `1e-16 · max_k |z|^k / Γ(αk+1)`; keep `|z|` modest there.
pub fn mittag_leffler(alpha: f64, z: f64) -> Result<f64> {
    check_alpha("mittag_leffler", alpha)?;
    if !z.is_finite() {
        return Err(Error::Domain {
            function: "mittag_leffler",
            value: z,
            expected: "finite argument",
        });
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    let ln_abs_z = z.abs().ln();
    let mut sum = 0.0;
    let mut quiet = 0;
    for k in 0..MITTAG_LEFFLER_MAX_TERMS {
        let arg = alpha * k as f64 + 1.0;
        let power = z.powi(k as i32);
        let term = if arg < 170.0 && power.is_finite() {
            power / gamma(arg)?
        } else {
            let magnitude = (k as f64 * ln_abs_z - ln_gamma(arg)?).exp();
            if z < 0.0 && k % 2 == 1 {
                -magnitude
            } else {
                magnitude
            }
        };
        sum += term;
        if !sum.is_finite() {
            break;
        }
        // the terms only shrink monotonically once αk exceeds |z|^{1/α}
        let past_peak = arg > z.abs().powf(1.0 / alpha) + 1.0;
        if past_peak && term.abs() <= 1e-14 * sum.abs().max(f64::MIN_POSITIVE) {
            quiet += 1;
            if quiet == 2 {
                return Ok(sum);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::Convergence {
        what: "Mittag-Leffler series",
        terms: MITTAG_LEFFLER_MAX_TERMS,
    })
}

/// Uniformly sampled scalar signal, `values[n] = f(n·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    dt: f64,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::validation("series", "needs at least 2 samples", values.len()));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::validation("dt", "strictly positive", dt));
        }
        Ok(TimeSeries { values, dt })
    }

    /// Samples `f` on `0, dt, …, steps·dt`.
    pub fn sample(f: impl Fn(f64) -> f64, dt: f64, steps: usize) -> Result<Self> {
        Self::new((0..=steps).map(|n| f(n as f64 * dt)).collect(), dt)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The same samples in reverse order (time reflected about the horizon).
    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        TimeSeries { values, dt: self.dt }
    }
}

/// Memory weights `b_j` of the L1 scheme for one order `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Weights {
    alpha: f64,
    coefficients: Vec<f64>,
}

impl L1Weights {
    /// Weights `b_0 .. b_{len-1}`.
    pub fn new(alpha: f64, len: usize) -> Result<Self> {
        check_alpha("L1Weights", alpha)?;
        let exponent = 1.0 - alpha;
        let coefficients = (0..len)
            .map(|j| {
                if j == 0 {
                    1.0
                } else if exponent == 0.0 {
                    0.0
                } else {
                    // j^{1-α} ((1 + 1/j)^{1-α} - 1) avoids cancellation for large j
                    let j = j as f64;
                    j.powf(exponent) * (exponent * (1.0 / j).ln_1p()).exp_m1()
                }
            })
            .collect();
        Ok(L1Weights { alpha, coefficients })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `dt^α Γ(2-α)`: the reciprocal of the L1 prefactor. Equals `dt` at `α = 1`.
    pub fn scale(&self, dt: f64) -> f64 {
        dt.powf(self.alpha) * gamma_unchecked_order(self.alpha)
    }

    /// True when only the newest increment carries weight (`α = 1`).
    pub fn is_local(&self) -> bool {
        self.alpha == 1.0
    }
}

fn gamma_unchecked_order(alpha: f64) -> f64 {
    // 2 - α lies in [1, 2); gamma() only fails for non-positive input
    gamma(2.0 - alpha).expect("2 - alpha is positive")
}

/// L1 approximation of the left Caputo derivative at the final sample.
pub fn caputo_left(series: &TimeSeries, alpha: f64) -> Result<f64> {
    let f = series.values();
    let n = f.len() - 1;
    let weights = L1Weights::new(alpha, n)?;
    let sum: f64 = weights
        .coefficients()
        .iter()
        .enumerate()
        .map(|(j, b)| b * (f[n - j] - f[n - j - 1]))
        .sum();
    Ok(sum / weights.scale(series.dt()))
}

/// Left Caputo derivative evaluated at every sample; the first entry is 0.
pub fn caputo_left_history(series: &TimeSeries, alpha: f64) -> Result<TimeSeries> {
    let f = series.values();
    let weights = L1Weights::new(alpha, f.len())?;
    let b = weights.coefficients();
    let scale = weights.scale(series.dt());
    let mut out = Vec::with_capacity(f.len());
    out.push(0.0);
    for n in 1..f.len() {
        let sum: f64 = (0..n).map(|j| b[j] * (f[n - j] - f[n - j - 1])).sum();
        out.push(sum / scale);
    }
    TimeSeries::new(out, series.dt())
}

/// L1 approximation of the right (backward) Caputo derivative with base point
/// at the final sample, evaluated at the first sample.
///
/// Carries the leading minus sign of the backward operator, so a reversed
/// series gives back the left derivative: `caputo_right(f.reversed()) ==
/// caputo_left(f)`.
pub fn caputo_right(series: &TimeSeries, alpha: f64) -> Result<f64> {
    let f = series.values();
    let n = f.len() - 1;
    let weights = L1Weights::new(alpha, n)?;
    let sum: f64 = weights
        .coefficients()
        .iter()
        .enumerate()
        .map(|(j, b)| b * (f[j] - f[j + 1]))
        .sum();
    Ok(sum / weights.scale(series.dt()))
}

/// Riemann-Liouville fractional integral `I^α f` at the final sample, by
/// product-trapezoidal quadrature (exact for piecewise-linear `f`).
pub fn fractional_integral(series: &TimeSeries, alpha: f64) -> Result<f64> {
    check_alpha("fractional_integral", alpha)?;
    let f = series.values();
    let n = f.len() - 1;
    let a1 = alpha + 1.0;
    let pw = |m: usize| (m as f64).powf(a1);
    let nf = n as f64;
    let mut sum = (pw(n - 1) - (nf - alpha - 1.0) * nf.powf(alpha)) * f[0] + f[n];
    for (j, fj) in f.iter().enumerate().take(n).skip(1) {
        let m = n - j;
        sum += (pw(m + 1) + pw(m - 1) - 2.0 * pw(m)) * fj;
    }
    Ok(series.dt().powf(alpha) / gamma(alpha + 2.0)? * sum)
}
