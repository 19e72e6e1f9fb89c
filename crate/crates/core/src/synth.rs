//! Multi-trial data generator.
//!
//! Trial effects `(γ_i, log λ_0i, α_i, β_i)` are drawn from a block
//! covariance with unit variances and correlation `−√R²` inside the
//! (γ, log λ₀) and (α, β) blocks. Each patient then receives a Plackett pair
//! `(u₁, u₂)`: `u₁` is thresholded at the arm's response probability and
//! `u₂` is inverted through the exponential survival function. Exponential
//! censoring is applied independently and patients whose follow-up ends
//! before the assessment time are recorded as non-responders.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::copula::{sample_pair, CopulaParam};
use crate::data::{expit, PatientRecord, PopulationParams, TrialDataset, TrialEffects, NON_RESPONDER, RESPONDER};
use crate::error::{Error, Result};
use crate::mvn::mvn_sample;
use crate::rng::StreamKey;

/// Cycled sizes of the mixed-size design.
pub const MIXED_SIZES: [usize; 3] = [300, 500, 1000];

/// Trial sizes within a study.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSizes {
    Equal(usize),
    /// Cycles 300, 500, 1000 in trial order.
    Mixed,
    Explicit(Vec<usize>),
}

impl TrialSizes {
    pub fn sizes(&self, n_trials: usize) -> Vec<usize> {
        match self {
            TrialSizes::Equal(n) => vec![*n; n_trials],
            TrialSizes::Mixed => (0..n_trials).map(|i| MIXED_SIZES[i % MIXED_SIZES.len()]).collect(),
            TrialSizes::Explicit(v) => v.iter().copied().cycle().take(n_trials).collect(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TrialSizes::Equal(n) => n.to_string(),
            TrialSizes::Mixed => "mixed".to_string(),
            TrialSizes::Explicit(v) => v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("/"),
        }
    }
}

/// Covariance of `(γ_i, log λ_0i, α_i, β_i)`, row-major.
pub fn trial_effect_covariance(r2: f64) -> Result<[f64; 16]> {
    if !(0.0..=1.0).contains(&r2) {
        return Err(Error::domain(format!("r2_true must lie in [0, 1], got {r2}")));
    }
    let r = -r2.sqrt();
    #[rustfmt::skip]
    let cov = [
        1.0, r,   0.0, 0.0,
        r,   1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, r,
        0.0, 0.0, r,   1.0,
    ];
    Ok(cov)
}

pub fn draw_trial_effects<R: Rng + ?Sized>(pop: &PopulationParams, rng: &mut R) -> Result<TrialEffects> {
    let cov = trial_effect_covariance(pop.r2_true)?;
    let mean = [pop.gamma, pop.log_lambda0, pop.alpha, pop.beta];
    let x = mvn_sample(&mean, &cov, rng)?;
    TrialEffects::new(x[0], x[1], x[2], x[3])
}

/// Everything drawn for one patient, including quantities the observed
/// record hides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPatient {
    pub u1: f64,
    pub u2: f64,
    pub event_time: f64,
    pub censor_time: f64,
    /// Surrogate status before the landmark override.
    pub surrogate_pre: u8,
    pub record: PatientRecord,
}

/// Allocation: the first `⌈n/2⌉` positions of a stream-determined
/// permutation are treated.
fn allocation(n: usize, key: &StreamKey) -> Vec<u8> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut key.aux_rng("allocation"));
    let n_treated = n.div_ceil(2);
    let mut z = vec![0u8; n];
    for &j in &order[..n_treated] {
        z[j] = 1;
    }
    z
}

pub fn synthesize_trial_latent(
    effects: &TrialEffects,
    n: usize,
    pop: &PopulationParams,
    key: &StreamKey,
) -> Result<Vec<LatentPatient>> {
    if n < 2 {
        return Err(Error::domain(format!("trial size must be at least 2, got {n}")));
    }
    effects.validate()?;
    let theta = CopulaParam::new(pop.theta_true)?;
    let lambda_c = pop.censoring_hazard();
    let lambda0 = effects.log_lambda0.exp();
    let z = allocation(n, key);

    (0..n)
        .map(|j| {
            let treated = z[j];
            let zf = f64::from(treated);
            let mut rng = key.patient_rng(j as u64);
            let v1: f64 = rng.sample(Open01);
            let v2: f64 = rng.sample(Open01);
            let vc: f64 = rng.sample(Open01);
            let (u1, u2) = sample_pair(v1, v2, theta)?;

            let p_response = expit(effects.gamma + effects.alpha * zf);
            let surrogate_pre = if u1 < p_response { RESPONDER } else { NON_RESPONDER };
            let hazard = lambda0 * (effects.beta * zf).exp();
            let event_time = -u2.ln() / hazard;
            let censor_time = if lambda_c > 0.0 { -vc.ln() / lambda_c } else { f64::INFINITY };

            let time = event_time.min(censor_time);
            let event = event_time <= censor_time;
            let surrogate = if time < pop.t_assess { NON_RESPONDER } else { surrogate_pre };
            Ok(LatentPatient {
                u1,
                u2,
                event_time,
                censor_time,
                surrogate_pre,
                record: PatientRecord {
                    time,
                    event,
                    surrogate,
                    treatment: treated,
                },
            })
        })
        .collect()
}

pub fn synthesize_trial(
    trial_id: impl Into<String>,
    effects: &TrialEffects,
    n: usize,
    pop: &PopulationParams,
    key: &StreamKey,
) -> Result<TrialDataset> {
    let patients = synthesize_trial_latent(effects, n, pop, key)?
        .into_iter()
        .map(|p| p.record)
        .collect();
    TrialDataset::new(trial_id, patients)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub trials: Vec<TrialDataset>,
    pub true_effects: Vec<TrialEffects>,
}

pub fn trial_label(index: usize) -> String {
    format!("trial{:02}", index + 1)
}

/// One study; trial `i` draws from the substream `key.trial(i)`.
pub fn synthesize_study(pop: &PopulationParams, trial_sizes: &[usize], key: StreamKey) -> Result<Study> {
    if trial_sizes.is_empty() {
        return Err(Error::domain("trial_sizes must not be empty"));
    }
    pop.validate()?;
    let mut trials = Vec::with_capacity(trial_sizes.len());
    let mut true_effects = Vec::with_capacity(trial_sizes.len());
    for (i, &n) in trial_sizes.iter().enumerate() {
        let tkey = key.trial(i as u64);
        let effects = draw_trial_effects(pop, &mut tkey.trial_rng())?;
        trials.push(synthesize_trial(trial_label(i), &effects, n, pop, &tkey)?);
        true_effects.push(effects);
    }
    Ok(Study { trials, true_effects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop() -> PopulationParams {
        PopulationParams::default()
    }

    #[test]
    fn r2_zero_gives_uncorrelated_effects() {
        let p = PopulationParams { r2_true: 0.0, ..pop() };
        let mut rng = StreamKey::new(3).trial_rng();
        let draws: Vec<TrialEffects> = (0..100_000).map(|_| draw_trial_effects(&p, &mut rng).unwrap()).collect();
        let cols: [fn(&TrialEffects) -> f64; 4] = [|e| e.gamma, |e| e.log_lambda0, |e| e.alpha, |e| e.beta];
        for i in 0..4 {
            for j in 0..i {
                let r = corr(&draws, cols[i], cols[j]);
                assert!(r.abs() < 0.01, "pair ({i},{j}) corr {r}");
            }
        }
    }

    #[test]
    fn r2_one_is_perfectly_anticorrelated() {
        let p = PopulationParams { r2_true: 1.0, ..pop() };
        let mut rng = StreamKey::new(4).trial_rng();
        for _ in 0..1000 {
            let e = draw_trial_effects(&p, &mut rng).unwrap();
            assert!(((e.beta - p.beta) + (e.alpha - p.alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn r2_065_correlation() {
        let p = PopulationParams { r2_true: 0.65, ..pop() };
        let mut rng = StreamKey::new(5).trial_rng();
        let draws: Vec<TrialEffects> = (0..100_000).map(|_| draw_trial_effects(&p, &mut rng).unwrap()).collect();
        let r = corr(&draws, |e| e.alpha, |e| e.beta);
        assert!((r + 0.65f64.sqrt()).abs() < 0.01, "corr {r}");
    }

    #[test]
    fn invalid_r2_is_rejected() {
        let p = PopulationParams { r2_true: 1.2, ..pop() };
        let mut rng = StreamKey::new(5).trial_rng();
        assert!(draw_trial_effects(&p, &mut rng).is_err());
    }

    fn corr(d: &[TrialEffects], f: fn(&TrialEffects) -> f64, g: fn(&TrialEffects) -> f64) -> f64 {
        let n = d.len() as f64;
        let mx = d.iter().map(f).sum::<f64>() / n;
        let my = d.iter().map(g).sum::<f64>() / n;
        let sxy: f64 = d.iter().map(|e| (f(e) - mx) * (g(e) - my)).sum();
        let sxx: f64 = d.iter().map(|e| (f(e) - mx).powi(2)).sum();
        let syy: f64 = d.iter().map(|e| (g(e) - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn no_censoring_means_all_events() {
        let p = PopulationParams { censor_rate: 0.0, ..pop() };
        let e = TrialEffects::new(0.0, 0.15f64.ln(), 0.5, -0.5).unwrap();
        let t = synthesize_trial("a", &e, 500, &p, &StreamKey::new(9)).unwrap();
        assert!(t.patients.iter().all(|p| p.event));
    }

    #[test]
    fn certain_response_without_landmark() {
        let p = PopulationParams { t_assess: 0.0, theta_true: 3.0, ..pop() };
        let e = TrialEffects::new(f64::MAX.sqrt(), 0.15f64.ln(), 0.0, -0.5).unwrap();
        let t = synthesize_trial("a", &e, 500, &p, &StreamKey::new(9)).unwrap();
        assert!(t.patients.iter().all(|p| p.surrogate == RESPONDER));
    }

    #[test]
    fn pre_landmark_response_rate() {
        let p = PopulationParams { theta_true: 1.0, ..pop() };
        let e = TrialEffects::new((0.4f64 / 0.6).ln(), 0.15f64.ln(), 0.7, -0.5).unwrap();
        let latent = synthesize_trial_latent(&e, 200_000, &p, &StreamKey::new(21)).unwrap();
        let control: Vec<_> = latent.iter().filter(|l| l.record.treatment == 0).collect();
        assert_eq!(control.len(), 100_000);
        let resp = control.iter().filter(|l| l.surrogate_pre == RESPONDER).count() as f64 / control.len() as f64;
        assert!((resp - 0.4).abs() < 0.005, "rate {resp}");
    }

    #[test]
    fn allocation_is_exact_one_to_one() {
        for n in [2, 3, 300, 301] {
            let z = allocation(n, &StreamKey::new(n as u64));
            assert_eq!(z.iter().filter(|&&t| t == 1).count(), n.div_ceil(2));
        }
    }

    #[test]
    fn tiny_trials_rejected() {
        let e = TrialEffects::new(0.0, 0.0, 0.0, 0.0).unwrap();
        assert!(synthesize_trial("a", &e, 1, &pop(), &StreamKey::new(1)).is_err());
    }

    #[test]
    fn study_shapes_and_determinism() {
        let sizes = TrialSizes::Equal(300).sizes(10);
        let a = synthesize_study(&pop(), &sizes, StreamKey::new(77)).unwrap();
        assert_eq!(a.trials.len(), 10);
        assert!(a.trials.iter().all(|t| t.n() == 300));
        let b = synthesize_study(&pop(), &sizes, StreamKey::new(77)).unwrap();
        assert_eq!(a, b);
        let c = synthesize_study(&pop(), &sizes, StreamKey::new(78)).unwrap();
        assert_ne!(a, c);

        let mixed = TrialSizes::Mixed.sizes(7);
        assert_eq!(mixed, vec![300, 500, 1000, 300, 500, 1000, 300]);
    }

    #[test]
    fn landmark_is_monotone() {
        let e = TrialEffects::new(0.2, 0.3f64.ln(), 0.5, -0.3).unwrap();
        let mut prev = 0;
        for t in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let p = PopulationParams { t_assess: t, theta_true: 3.0, ..pop() };
            let d = synthesize_trial("a", &e, 2000, &p, &StreamKey::new(5)).unwrap();
            let nr = d.patients.iter().filter(|p| p.surrogate == NON_RESPONDER).count();
            assert!(nr >= prev);
            prev = nr;
        }
    }

    #[test]
    fn censoring_fraction_orders() {
        let e = TrialEffects::new(0.0, 0.2f64.ln(), 0.5, -0.3).unwrap();
        let frac = |rc: f64, ll0: f64| {
            let e = TrialEffects { log_lambda0: ll0, ..e };
            let p = PopulationParams { censor_rate: rc, ..pop() };
            synthesize_trial("a", &e, 5000, &p, &StreamKey::new(8)).unwrap().censored_fraction()
        };
        assert!(frac(0.05, 0.2f64.ln()) < frac(0.15, 0.2f64.ln()));
        assert!(frac(0.10, 0.5f64.ln()) <= frac(0.10, 0.2f64.ln()));
    }
}
