//! Normal and Student-t tail probabilities, plus a correctly rounded
//! floating-point sum.
//!
//! The incomplete beta and error functions come from `statrs`; this module
//! only fixes conventions (upper tails, argument domains) used by the tests.

use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

/// Degrees of freedom above which the Student-t tail is replaced by the normal tail.
pub const NORMAL_DF_CUTOFF: f64 = 1e6;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, `Phi(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal upper tail, `1 - Phi(x)`, accurate far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// The `x` with `1 - Phi(x) = p`.
///
/// `p = 0` maps to `+inf` and `p = 0.5` to `0`. Computed from the upper tail
/// directly so that tiny `p` does not lose precision to `1 - p`.
pub fn normal_upper_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
    if p == 0.0 {
        return f64::INFINITY;
    }
    if p == 1.0 {
        return f64::NEG_INFINITY;
    }
    let mut x = SQRT_2 * erfc_inv(2.0 * p);
    // statrs' inverse is good to ~1e-10 relative; two Newton steps polish it
    for _ in 0..2 {
        let dens = normal_pdf(x);
        if dens <= 0.0 || !x.is_finite() {
            break;
        }
        x += (normal_sf(x) - p) / dens;
    }
    x
}

/// Upper tail of the standard Student-t distribution with `df` degrees of freedom
/// at `t_abs >= 0`: `1 - F_df(t_abs)`, always in `[0, 0.5]`.
pub fn student_t_sf(t_abs: f64, df: f64) -> f64 {
    debug_assert!(df >= 1.0, "df must be at least 1");
    debug_assert!(t_abs >= 0.0 || t_abs.is_nan());
    if t_abs == 0.0 {
        return 0.5;
    }
    if t_abs.is_infinite() {
        return 0.0;
    }
    if df > NORMAL_DF_CUTOFF {
        return normal_sf(t_abs);
    }
    let t2 = t_abs * t_abs;
    if t_abs < 1.0 {
        // Small |t|: 1 - x would round away, so use the complementary tail.
        let y = t2 / (df + t2);
        return (0.5 - 0.5 * beta_reg(0.5, 0.5 * df, y)).clamp(0.0, 0.5);
    }
    let x = df / (df + t2);
    (0.5 * beta_reg(0.5 * df, 0.5, x)).clamp(0.0, 0.5)
}

pub use statrs::function::gamma::ln_gamma;

/// Natural log of the beta function.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `log(sigmoid(a))` without overflow for large `|a|`.
pub fn log_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        -(-a).exp().ln_1p()
    } else {
        a - a.exp().ln_1p()
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Correctly rounded running sum of `f64` values (Shewchuk's partials with a
/// final half-way correction).
///
/// The result does not depend on the order of the additions, which is what
/// lets a sequential test that has consumed every datapoint in a random order
/// reach bit-for-bit the same mean as a full pass in index order.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let mut x = value;
        let mut i = 0;
        let len = self.partials.len();
        let p = self.partials.as_mut_slice();
        for j in 0..len {
            let y = p[j];
            let hi = x + y;
            let b = hi - x;
            let lo = (x - (hi - b)) + (y - b);
            p[i] = lo;
            i += usize::from(lo != 0.0);
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}
