//! Second stage: association between per-trial treatment effects on the
//! surrogate (log odds ratio, `α̂_i`) and on the true endpoint (log hazard
//! ratio, `β̂_i`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialEffects;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

const Z975: f64 = 1.959_963_984_540_054;

/// Between-trial covariance of `(α_i, β_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionMatrix {
    pub d_aa: f64,
    pub d_ab: f64,
    pub d_bb: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionMethod {
    /// Sample covariance of the estimated effects.
    #[default]
    Raw,
    /// Sample covariance minus the mean within-trial sampling variances
    /// (within-trial covariance of `α̂` and `β̂` taken as zero).
    Adjusted,
}

fn sample_covariance(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    (sxx / (n - 1.0), sxy / (n - 1.0), syy / (n - 1.0))
}

/// Sample covariance (denominator `N − 1`) of the `(α̂_i, β̂_i)` pairs.
pub fn fit_dispersion(effects: &[TrialEffects]) -> Result<DispersionMatrix> {
    fit_dispersion_with(effects, DispersionMethod::Raw)
}

pub fn fit_dispersion_with(effects: &[TrialEffects], method: DispersionMethod) -> Result<DispersionMatrix> {
    if effects.len() < 3 {
        return Err(Error::domain(format!(
            "the trial-level model needs at least 3 trials, got {}",
            effects.len()
        )));
    }
    let alpha: Vec<f64> = effects.iter().map(|e| e.alpha).collect();
    let beta: Vec<f64> = effects.iter().map(|e| e.beta).collect();
    let (mut d_aa, d_ab, mut d_bb) = sample_covariance(&alpha, &beta);
    if method == DispersionMethod::Adjusted {
        let mut va = 0.0;
        let mut vb = 0.0;
        for e in effects {
            match (e.se_alpha, e.se_beta) {
                (Some(a), Some(b)) => {
                    va += a * a;
                    vb += b * b;
                }
                _ => return Err(Error::domain("adjusted dispersion needs standard errors for every trial")),
            }
        }
        d_aa -= va / effects.len() as f64;
        d_bb -= vb / effects.len() as f64;
    }
    if !(d_aa > 0.0 && d_bb > 0.0) {
        return Err(Error::Degenerate(format!(
            "treatment effects have no between-trial spread (d_aa = {d_aa}, d_bb = {d_bb})"
        )));
    }
    Ok(DispersionMatrix { d_aa, d_ab, d_bb })
}

/// `d_ab² / (d_aa d_bb)`; may exceed 1 only for the adjusted dispersion.
pub fn r2_copula(d: &DispersionMatrix) -> Result<f64> {
    if !(d.d_aa > 0.0 && d.d_bb > 0.0) {
        return Err(Error::domain("dispersion variances must be positive"));
    }
    Ok(d.d_ab * d.d_ab / (d.d_aa * d.d_bb))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w_i = 1 / se(α̂_i)²`.
    InverseVarLogOr,
    /// `w_i = n_i`.
    #[default]
    SampleSize,
    /// `w_i = 1 / n_i`.
    InverseSampleSize,
}

impl WeightScheme {
    pub fn weights(self, effects: &[TrialEffects], trial_ns: &[usize]) -> Result<Vec<f64>> {
        if effects.len() != trial_ns.len() {
            return Err(Error::domain("one sample size per trial is required"));
        }
        let w: Vec<f64> = match self {
            WeightScheme::SampleSize => trial_ns.iter().map(|&n| n as f64).collect(),
            WeightScheme::InverseSampleSize => trial_ns.iter().map(|&n| 1.0 / n as f64).collect(),
            WeightScheme::InverseVarLogOr => effects
                .iter()
                .map(|e| match e.se_alpha {
                    Some(se) if se > 0.0 => Ok(1.0 / (se * se)),
                    _ => Err(Error::domain("inverse-variance weights need a positive se_alpha")),
                })
                .collect::<Result<_>>()?,
        };
        if w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::domain("weights must be positive and finite"));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlsFit {
    pub r2: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Weighted least squares of `y` on `x` with an intercept.
pub fn wls(x: &[f64], y: &[f64], w: &[f64]) -> Result<WlsFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::domain("x, y and weights must have equal length"));
    }
    if x.len() < 3 {
        return Err(Error::domain("weighted regression needs at least 3 points"));
    }
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for ((w, x), y) in w.iter().zip(x).zip(y) {
        let (dx, dy) = (x - mx, y - my);
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    if sxx <= 1e-14 * (1.0 + mx * mx) * sw {
        return Err(Error::domain("predictor is constant across trials"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        let ssr: f64 = w
            .iter()
            .zip(x)
            .zip(y)
            .map(|((w, x), y)| {
                let r = y - intercept - slope * x;
                w * r * r
            })
            .sum();
        1.0 - ssr / syy
    } else {
        // Constant response lies exactly on the (flat) fitted line.
        1.0
    };
    Ok(WlsFit { r2, slope, intercept })
}

/// WLS of `β̂_i` on `α̂_i` under `scheme`.
pub fn r2_weighted(effects: &[TrialEffects], trial_ns: &[usize], scheme: WeightScheme) -> Result<WlsFit> {
    let w = scheme.weights(effects, trial_ns)?;
    let x: Vec<f64> = effects.iter().map(|e| e.alpha).collect();
    let y: Vec<f64> = effects.iter().map(|e| e.beta).collect();
    wls(&x, &y, &w)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum CiMethod {
    #[default]
    FisherZ,
    TrialBootstrap { resamples: usize },
}

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// An endpoint fell outside `[0, 1]` and was clipped.
    pub clipped: bool,
    /// `R² = 1` made the Fisher transform singular; the lower bound is the
    /// smallest leave-one-out estimate.
    pub jackknife: bool,
}

fn clip01(x: f64, flag: &mut bool) -> f64 {
    if x < 0.0 {
        *flag = true;
        0.0
    } else if x > 1.0 {
        *flag = true;
        1.0
    } else {
        x
    }
}

/// Square an interval on `r`, keeping `lower ≤ upper`.
fn square_interval(a: f64, b: f64) -> (f64, f64) {
    if a >= 0.0 {
        (a * a, b * b)
    } else if b <= 0.0 {
        (b * b, a * a)
    } else {
        (0.0, (a * a).max(b * b))
    }
}

/// Fisher-z interval for `R²` with correlation sign `sign`.
/// Returns `None` when `R² = 1` (the transform is singular there).
pub fn fisher_z_interval(r2: f64, sign: f64, n_trials: usize) -> Result<Option<(f64, f64)>> {
    if n_trials < 4 {
        return Err(Error::domain("the Fisher-z interval needs at least 4 trials"));
    }
    let r2 = r2.clamp(0.0, 1.0);
    if r2 >= 1.0 - 1e-14 {
        return Ok(None);
    }
    let r = if sign < 0.0 { -r2.sqrt() } else { r2.sqrt() };
    let z = r.atanh();
    let half = Z975 / ((n_trials - 3) as f64).sqrt();
    Ok(Some(square_interval((z - half).tanh(), (z + half).tanh())))
}

/// Recomputes `(R², sign)` on a subset of trials given by index.
pub trait Resample: Sync {
    fn estimate(&self, indices: &[usize]) -> Result<(f64, f64)>;
}

impl<F> Resample for F
where
    F: Fn(&[usize]) -> Result<(f64, f64)> + Sync,
{
    fn estimate(&self, indices: &[usize]) -> Result<(f64, f64)> {
        self(indices)
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95% interval for an R² estimate computed from `n_trials` trials.
pub fn r2_confidence_interval(
    r2: f64,
    sign: f64,
    n_trials: usize,
    method: CiMethod,
    source: &dyn Resample,
    key: StreamKey,
    label: &str,
) -> Result<Interval> {
    let mut clipped = false;
    match method {
        CiMethod::FisherZ => match fisher_z_interval(r2, sign, n_trials)? {
            Some((lo, hi)) => Ok(Interval {
                lower: clip01(lo, &mut clipped),
                upper: clip01(hi, &mut clipped),
                clipped,
                jackknife: false,
            }),
            None => {
                let mut lower = f64::INFINITY;
                for leave in 0..n_trials {
                    let idx: Vec<usize> = (0..n_trials).filter(|&i| i != leave).collect();
                    if let Ok((r, _)) = source.estimate(&idx) {
                        lower = lower.min(r);
                    }
                }
                if !lower.is_finite() {
                    return Err(Error::Degenerate("no leave-one-out estimate could be computed".into()));
                }
                Ok(Interval {
                    lower: clip01(lower, &mut clipped),
                    upper: 1.0,
                    clipped,
                    jackknife: true,
                })
            }
        },
        CiMethod::TrialBootstrap { resamples } => {
            if n_trials < 5 {
                return Err(Error::domain("the trial bootstrap needs at least 5 trials"));
            }
            if resamples < 2 {
                return Err(Error::domain("the trial bootstrap needs at least 2 resamples"));
            }
            let draws: Vec<Option<f64>> = (0..resamples)
                .into_par_iter()
                .map(|b| {
                    let mut rng = key.aux_rng(&format!("bootstrap/{label}/{b}"));
                    let idx: Vec<usize> = (0..n_trials).map(|_| rng.random_range(0..n_trials)).collect();
                    source.estimate(&idx).ok().map(|(r, _)| r)
                })
                .collect();
            let mut ok: Vec<f64> = draws.into_iter().flatten().filter(|r| r.is_finite()).collect();
            if ok.len() * 2 < resamples {
                return Err(Error::Degenerate(format!(
                    "only {} of {resamples} bootstrap resamples were estimable",
                    ok.len()
                )));
            }
            ok.sort_by(f64::total_cmp);
            Ok(Interval {
                lower: clip01(percentile(&ok, 0.025), &mut clipped),
                upper: clip01(percentile(&ok, 0.975), &mut clipped),
                clipped,
                jackknife: false,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialLevelConfig {
    pub dispersion: DispersionMethod,
    /// Weights for `R²_WLS`; `R²_adj` always uses inverse-variance weights.
    pub wls_weights: WeightScheme,
    pub ci: CiMethod,
}

impl Default for TrialLevelConfig {
    fn default() -> Self {
        TrialLevelConfig {
            dispersion: DispersionMethod::Raw,
            wls_weights: WeightScheme::SampleSize,
            ci: CiMethod::FisherZ,
        }
    }
}

/// A point estimate in `[0, 1]` with its 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Estimate {
    pub est: f64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLevelResult {
    pub r2_copula: R2Estimate,
    pub r2_wls: R2Estimate,
    pub r2_adj: R2Estimate,
    pub dispersion: DispersionMatrix,
    /// WLS line (log-HR on log-OR) under `weights_used`.
    pub slope: f64,
    pub intercept: f64,
    pub weights_used: WeightScheme,
}

fn subset(effects: &[TrialEffects], ns: &[usize], idx: &[usize]) -> (Vec<TrialEffects>, Vec<usize>) {
    (idx.iter().map(|&i| effects[i]).collect(), idx.iter().map(|&i| ns[i]).collect())
}

fn finish(
    r2: f64,
    sign: f64,
    n: usize,
    cfg: &TrialLevelConfig,
    src: &dyn Resample,
    key: StreamKey,
    label: &str,
) -> Result<R2Estimate> {
    let mut clipped = false;
    let est = clip01(r2, &mut clipped);
    let mut interval = r2_confidence_interval(est, sign, n, cfg.ci, src, key, label)?;
    interval.clipped |= clipped;
    Ok(R2Estimate { est, interval })
}

/// All three trial-level R² estimates with intervals. `key` seeds the
/// bootstrap when that interval method is selected.
pub fn trial_level(
    effects: &[TrialEffects],
    trial_ns: &[usize],
    cfg: &TrialLevelConfig,
    key: StreamKey,
) -> Result<TrialLevelResult> {
    let n = effects.len();
    let dispersion = fit_dispersion_with(effects, cfg.dispersion)?;
    let cop = r2_copula(&dispersion)?;
    let wls_fit = r2_weighted(effects, trial_ns, cfg.wls_weights)?;
    let adj_fit = r2_weighted(effects, trial_ns, WeightScheme::InverseVarLogOr)?;

    let cop_src = |idx: &[usize]| -> Result<(f64, f64)> {
        let (e, _) = subset(effects, trial_ns, idx);
        let d = fit_dispersion_with(&e, cfg.dispersion)?;
        Ok((r2_copula(&d)?, d.d_ab))
    };
    let wls_src = |scheme: WeightScheme| {
        move |idx: &[usize]| -> Result<(f64, f64)> {
            let (e, ns) = subset(effects, trial_ns, idx);
            let f = r2_weighted(&e, &ns, scheme)?;
            Ok((f.r2, f.slope))
        }
    };

    Ok(TrialLevelResult {
        r2_copula: finish(cop, dispersion.d_ab, n, cfg, &cop_src, key, "r2_copula")?,
        r2_wls: finish(wls_fit.r2, wls_fit.slope, n, cfg, &wls_src(cfg.wls_weights), key, "r2_wls")?,
        r2_adj: finish(
            adj_fit.r2,
            adj_fit.slope,
            n,
            cfg,
            &wls_src(WeightScheme::InverseVarLogOr),
            key,
            "r2_adj",
        )?,
        dispersion,
        slope: wls_fit.slope,
        intercept: wls_fit.intercept,
        weights_used: cfg.wls_weights,
    })
}
