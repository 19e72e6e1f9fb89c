//! Plackett copula.
//!
//! The Plackett family is the bivariate copula with a constant cross-ratio:
//! for every interior point `(u, v)` the 2×2 table obtained by dichotomizing
//! both margins at `u` and `v` has odds ratio exactly `theta`. That makes
//! `theta` the *global odds ratio* between the two margins.
//!
//! All functions here are pure. The `cdf` is evaluated in the rationalized
//! form `2θuv / (A + S)`, which is algebraically equal to
//! `(A − S) / (2(θ − 1))` but has no cancellation near `θ = 1` or at large
//! `θ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the band around `θ = 1` evaluated by the independence series.
const INDEPENDENCE_BAND: f64 = 1e-8;

/// Residual above which the closed-form conditional quantile is rejected.
const QUANTILE_ACCEPT: f64 = 1e-8;

/// Target residual for the conditional quantile.
const QUANTILE_TOL: f64 = 1e-10;

/// Copula parameter (global odds ratio), `theta > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CopulaParam(f64);

impl CopulaParam {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && theta > 0.0 {
            Ok(CopulaParam(theta))
        } else {
            Err(Error::domain(format!("copula parameter must be positive, got {theta}")))
        }
    }

    pub const INDEPENDENCE: CopulaParam = CopulaParam(1.0);

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_independence(self) -> bool {
        (self.0 - 1.0).abs() < INDEPENDENCE_BAND
    }

    /// Parameter of the copula of `(1 − U₁, U₂)`.
    pub fn mirrored(self) -> CopulaParam {
        CopulaParam(1.0 / self.0)
    }
}

impl TryFrom<f64> for CopulaParam {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        CopulaParam::new(value)
    }
}

impl From<CopulaParam> for f64 {
    fn from(p: CopulaParam) -> f64 {
        p.0
    }
}

fn check_closed(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in [0, 1], got {x}")))
    }
}

fn check_open(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in (0, 1), got {x}")))
    }
}

/// `A = 1 + (θ−1)(u+v)` and `S = sqrt(A² − 4θ(θ−1)uv)`.
#[inline]
fn a_and_s(u: f64, v: f64, theta: f64) -> (f64, f64) {
    let q = theta - 1.0;
    let a = 1.0 + q * (u + v);
    let s2 = if theta > 1.0 {
        let k = 2.0 * (theta * q * u * v).sqrt();
        (a - k) * (a + k)
    } else {
        a * a + 4.0 * theta * (-q) * u * v
    };
    (a, s2.max(0.0).sqrt())
}

#[inline]
fn cdf_raw(u: f64, v: f64, theta: f64) -> f64 {
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    if v == 1.0 {
        return u;
    }
    if u == 1.0 {
        return v;
    }
    let q = theta - 1.0;
    if q.abs() < INDEPENDENCE_BAND {
        return u * v * (1.0 + q * (1.0 - u) * (1.0 - v));
    }
    let (a, s) = a_and_s(u, v, theta);
    2.0 * theta * u * v / (a + s)
}

/// `∂C/∂u` given `v(1−v)` supplied separately for precision.
#[inline]
fn cond_raw(u: f64, v: f64, v_vbar: f64, theta: f64) -> f64 {
    let (a, s) = a_and_s(u, v, theta);
    if s <= 0.0 {
        return v;
    }
    let x = a - 2.0 * theta * v;
    if x >= 0.0 {
        2.0 * theta * v_vbar / (s * (s + x))
    } else {
        (s - x) / (2.0 * s)
    }
}

/// Plackett copula `C_θ(u, v)`.
pub fn cdf(u: f64, v: f64, theta: CopulaParam) -> Result<f64> {
    check_closed("u", u)?;
    check_closed("v", v)?;
    Ok(cdf_raw(u, v, theta.0))
}

/// Copula density `∂²C/∂u∂v` on the open unit square.
pub fn density(u: f64, v: f64, theta: CopulaParam) -> Result<f64> {
    check_open("u", u)?;
    check_open("v", v)?;
    let t = theta.0;
    let (_, s) = a_and_s(u, v, t);
    Ok(t * (1.0 + (t - 1.0) * (u + v - 2.0 * u * v)) / (s * s * s))
}

/// `P(U₂ ≤ v | U₁ = u) = ∂C/∂u`.
pub fn conditional_cdf_given_u(u: f64, v: f64, theta: CopulaParam) -> Result<f64> {
    check_open("u", u)?;
    check_closed("v", v)?;
    if v == 0.0 {
        return Ok(0.0);
    }
    if v == 1.0 {
        return Ok(1.0);
    }
    if theta.is_independence() {
        let q = theta.0 - 1.0;
        return Ok(v + q * v * (1.0 - v) * (1.0 - 2.0 * u));
    }
    Ok(cond_raw(u, v, v * (1.0 - v), theta.0).clamp(0.0, 1.0))
}

/// Inverse of [`conditional_cdf_given_u`] in `v`.
///
/// Evaluates the closed-form quadratic root and accepts it only if the
/// round-trip residual is below `1e-8`; otherwise bisects on the
/// conditional CDF. Accepted roots are polished to a residual of `1e-10`.
pub fn conditional_quantile_given_u(u: f64, p: f64, theta: CopulaParam) -> Result<f64> {
    check_open("u", u)?;
    check_open("p", p)?;
    let t = theta.0;
    if t == 1.0 {
        return Ok(p);
    }

    let residual = |v: f64| conditional_cdf_given_u(u, v, theta).map(|c| c - p);

    let w = p * (1.0 - p);
    let b = t + w * (t - 1.0) * (t - 1.0);
    let c = 2.0 * w * (u * t * t + 1.0 - u) + t * (1.0 - 2.0 * w);
    let d = t.sqrt() * (t + 4.0 * w * u * (1.0 - u) * (1.0 - t) * (1.0 - t)).sqrt();
    let mut v = (c - (1.0 - 2.0 * p) * d) / (2.0 * b);

    let closed_ok = v.is_finite() && v > 0.0 && v < 1.0 && residual(v)?.abs() <= QUANTILE_ACCEPT;
    if !closed_ok {
        v = bisect_conditional(u, p, theta)?;
    }

    // Newton polish; the slope of the conditional cdf in v is the density.
    for _ in 0..4 {
        let r = residual(v)?;
        if r.abs() <= QUANTILE_TOL * 0.01 {
            break;
        }
        let slope = density(u, v, theta)?;
        let next = v - r / slope;
        if !(next > 0.0 && next < 1.0) || residual(next)?.abs() >= r.abs() {
            break;
        }
        v = next;
    }

    let r = residual(v)?.abs();
    if r > QUANTILE_TOL {
        return Err(Error::numeric("conditional quantile did not converge", r));
    }
    Ok(v)
}

fn bisect_conditional(u: f64, p: f64, theta: CopulaParam) -> Result<f64> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if conditional_cdf_given_u(u, mid, theta)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    let r = (conditional_cdf_given_u(u, v, theta)? - p).abs();
    if r > QUANTILE_TOL {
        return Err(Error::numeric("bisection on the conditional cdf failed", r));
    }
    Ok(v)
}

/// Conditional-inversion sampler: maps two independent uniforms onto a
/// Plackett-distributed pair `(u₁, u₂)`.
pub fn sample_pair(v1: f64, v2: f64, theta: CopulaParam) -> Result<(f64, f64)> {
    check_open("v1", v1)?;
    check_open("v2", v2)?;
    let u2 = conditional_quantile_given_u(v1, v2, theta)?;
    Ok((v1, u2))
}

/// Odds ratio of the 2×2 table formed by dichotomizing both margins at
/// `(u, v)`. Equals `theta` everywhere on the open square.
pub fn cross_ratio(u: f64, v: f64, theta: CopulaParam) -> Result<f64> {
    check_open("u", u)?;
    check_open("v", v)?;
    let t = theta.0;
    // Each cell from its own stable copula evaluation; the Plackett family is
    // radially symmetric and reflecting one margin maps θ to 1/θ.
    let both_low = cdf_raw(u, v, t);
    let both_high = cdf_raw(1.0 - u, 1.0 - v, t);
    let low_high = cdf_raw(u, 1.0 - v, 1.0 / t);
    let high_low = cdf_raw(1.0 - u, v, 1.0 / t);
    if low_high <= 0.0 || high_low <= 0.0 {
        return Err(Error::domain("degenerate 2x2 table"));
    }
    Ok(both_low * both_high / (low_high * high_low))
}

/// Copula value and first/second partial derivatives at one point, as used by
/// the censored-data likelihood. Unchecked: callers guarantee `u, v ∈ (0,1)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Partials {
    pub c: f64,
    pub cu: f64,
    pub cv: f64,
    pub density: f64,
    pub cvv: f64,
    pub dc_dtheta: f64,
    pub dcv_dtheta: f64,
}

/// `u_bar = 1 − u` and `v_bar = 1 − v` are passed explicitly so that callers
/// working on the log-odds / log-hazard scale keep full precision.
#[inline]
pub(crate) fn partials(u: f64, u_bar: f64, v: f64, v_bar: f64, theta: f64) -> Partials {
    let q = theta - 1.0;
    let (a, s) = a_and_s(u, v, theta);
    let s3 = s * s * s;
    let c = 2.0 * theta * u * v / (a + s);

    let xu = a - 2.0 * theta * v;
    let cu = if xu >= 0.0 {
        2.0 * theta * v * v_bar / (s * (s + xu))
    } else {
        (s - xu) / (2.0 * s)
    };
    let xv = a - 2.0 * theta * u;
    let cv = if xv >= 0.0 {
        2.0 * theta * u * u_bar / (s * (s + xv))
    } else {
        (s - xv) / (2.0 * s)
    };

    let density = theta * (1.0 + q * (u * v_bar + v * u_bar)) / s3;
    let cvv = -2.0 * q * theta * u * u_bar / s3;

    let ds = (a * (u + v) - 2.0 * u * v * (2.0 * theta - 1.0)) / s;
    let dc_dtheta = c / theta - c * (u + v + ds) / (a + s);
    let dcv_dtheta = -0.5 * ((v - u) / s - xv * ds / (s * s));

    Partials {
        c,
        cu,
        cv,
        density,
        cvv,
        dc_dtheta,
        dcv_dtheta,
    }
}
