//! First-stage marginal models fitted trial by trial: logistic regression of
//! the surrogate on treatment, Cox regression of the event time on treatment
//! and the exponential proportional-hazards model.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};

/// Bound on `|β|` beyond which the partial likelihood is treated as monotone.
pub const COX_BETA_BOUND: f64 = 20.0;
const COX_MAX_ITER: usize = 50;
const COX_SCORE_TOL: f64 = 1e-10;
const COX_STEP_TOL: f64 = 1e-12;

/// Response table of one trial. "Responder" is surrogate status 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub control_responders: u64,
    pub control_nonresponders: u64,
    pub treated_responders: u64,
    pub treated_nonresponders: u64,
}

impl ResponseTable {
    pub fn from_trial(data: &TrialDataset) -> Self {
        let mut t = ResponseTable {
            control_responders: 0,
            control_nonresponders: 0,
            treated_responders: 0,
            treated_nonresponders: 0,
        };
        for p in &data.patients {
            match (p.is_treated(), p.is_responder()) {
                (false, true) => t.control_responders += 1,
                (false, false) => t.control_nonresponders += 1,
                (true, true) => t.treated_responders += 1,
                (true, false) => t.treated_nonresponders += 1,
            }
        }
        t
    }

    fn cells(&self) -> [u64; 4] {
        [
            self.control_responders,
            self.control_nonresponders,
            self.treated_responders,
            self.treated_nonresponders,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub gamma_hat: f64,
    pub alpha_hat: f64,
    pub se_gamma: f64,
    pub se_alpha: f64,
    pub counts: ResponseTable,
    /// A zero cell was present and 0.5 was added to every cell.
    pub continuity_corrected: bool,
}

/// Saturated logistic model `logit P(S=0 | z) = γ + αz`; the MLE is the
/// empirical log odds and log odds ratio.
pub fn fit_logistic_treatment(data: &TrialDataset) -> Result<LogisticFit> {
    let counts = ResponseTable::from_trial(data);
    let [a, b, c, d] = counts.cells();
    if a + b == 0 || c + d == 0 {
        return Err(Error::estimation(format!(
            "trial {}: both treatment arms are required for the logistic fit",
            data.trial_id
        )));
    }
    let corrected = [a, b, c, d].contains(&0);
    let shift = if corrected { 0.5 } else { 0.0 };
    let [a, b, c, d] = [a, b, c, d].map(|x| x as f64 + shift);
    Ok(LogisticFit {
        gamma_hat: (a / b).ln(),
        alpha_hat: ((c * b) / (d * a)).ln(),
        se_gamma: (1.0 / a + 1.0 / b).sqrt(),
        se_alpha: (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt(),
        counts,
        continuity_corrected: corrected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta_hat: f64,
    pub se_beta: f64,
    pub n_events: usize,
    pub loglik: f64,
    pub iterations: usize,
}

/// Event-time groups in decreasing time order: `(n_at_time, n_treated_at_time,
/// events, treated_events)`.
struct CoxData {
    groups: Vec<[u64; 4]>,
}

impl CoxData {
    fn new(data: &TrialDataset) -> Self {
        let mut idx: Vec<usize> = (0..data.n()).collect();
        idx.sort_by(|&i, &j| data.patients[j].time.total_cmp(&data.patients[i].time));
        let mut groups: Vec<[u64; 4]> = Vec::new();
        let mut last = f64::NAN;
        for i in idx {
            let p = &data.patients[i];
            if p.time != last {
                groups.push([0; 4]);
                last = p.time;
            }
            let g = groups.last_mut().unwrap();
            let z = u64::from(p.treatment);
            g[0] += 1;
            g[1] += z;
            if p.event {
                g[2] += 1;
                g[3] += z;
            }
        }
        CoxData { groups }
    }

    /// Partial log-likelihood, score and information at `beta`.
    fn evaluate(&self, beta: f64, ties: TieMethod) -> (f64, f64, f64) {
        let eb = beta.exp();
        let (mut s0, mut s1) = (0.0, 0.0);
        let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
        for &[n, nz, d, dz] in &self.groups {
            s0 += (n - nz) as f64 + nz as f64 * eb;
            s1 += nz as f64 * eb;
            if d == 0 {
                continue;
            }
            let d0 = (d - dz) as f64 + dz as f64 * eb;
            let d1 = dz as f64 * eb;
            ll += beta * dz as f64;
            score += dz as f64;
            for l in 0..d {
                let frac = match ties {
                    TieMethod::Efron => l as f64 / d as f64,
                    TieMethod::Breslow => 0.0,
                };
                let r0 = s0 - frac * d0;
                let r1 = s1 - frac * d1;
                let m = r1 / r0;
                ll -= r0.ln();
                score -= m;
                info += m - m * m;
            }
        }
        (ll, score, info)
    }
}

/// Partial-likelihood Newton–Raphson from `β = 0` with step halving.
pub fn fit_cox_treatment(data: &TrialDataset, ties: TieMethod) -> Result<CoxFit> {
    let n_events = data.n_events();
    if n_events == 0 {
        return Err(Error::estimation(format!("trial {}: no events for the Cox fit", data.trial_id)));
    }
    if !data.has_both_arms() {
        return Err(Error::estimation(format!(
            "trial {}: both treatment arms are required for the Cox fit",
            data.trial_id
        )));
    }
    let cd = CoxData::new(data);
    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = cd.evaluate(beta, ties);
    for iter in 1..=COX_MAX_ITER {
        if score.abs() < COX_SCORE_TOL {
            return finish_cox(beta, info, n_events, ll, iter - 1, &data.trial_id);
        }
        if !(info > 0.0) {
            return Err(Error::MonotoneLikelihood(format!(
                "trial {}: information vanished at beta = {beta}",
                data.trial_id
            )));
        }
        let mut step = score / info;
        let mut next = beta + step;
        let mut eval = cd.evaluate(next, ties);
        let mut halvings = 0;
        while !(eval.0 >= ll - 1e-12 * ll.abs().max(1.0)) && halvings < 40 {
            step *= 0.5;
            next = beta + step;
            eval = cd.evaluate(next, ties);
            halvings += 1;
        }
        if next.abs() > COX_BETA_BOUND {
            return Err(Error::MonotoneLikelihood(format!(
                "trial {}: |beta| exceeded {COX_BETA_BOUND} (events concentrated in one arm)",
                data.trial_id
            )));
        }
        beta = next;
        (ll, score, info) = eval;
        if step.abs() < COX_STEP_TOL {
            return finish_cox(beta, info, n_events, ll, iter, &data.trial_id);
        }
    }
    Err(Error::numeric(
        format!("trial {}: Cox Newton iterations did not converge", data.trial_id),
        score.abs(),
    ))
}

fn finish_cox(beta: f64, info: f64, n_events: usize, loglik: f64, iterations: usize, id: &str) -> Result<CoxFit> {
    if !(info > 0.0) {
        return Err(Error::MonotoneLikelihood(format!("trial {id}: zero information at the estimate")));
    }
    Ok(CoxFit {
        beta_hat: beta,
        se_beta: info.sqrt().recip(),
        n_events,
        loglik,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub lambda0_hat: f64,
    pub beta_hat: f64,
    pub control_events: usize,
    pub control_exposure: f64,
    pub treated_events: usize,
    pub treated_exposure: f64,
}

/// Exponential PH model: per-arm rate MLE `events / exposure`.
pub fn fit_exponential_ph(data: &TrialDataset) -> Result<ExponentialFit> {
    let arm = |treated: bool| {
        data.arm(treated)
            .fold((0usize, 0.0f64), |(d, e), p| (d + usize::from(p.event), e + p.time))
    };
    let (d0, e0) = arm(false);
    let (d1, e1) = arm(true);
    if d0 == 0 || d1 == 0 {
        return Err(Error::estimation(format!(
            "trial {}: the exponential fit needs at least one event per arm",
            data.trial_id
        )));
    }
    let r0 = d0 as f64 / e0;
    let r1 = d1 as f64 / e1;
    Ok(ExponentialFit {
        lambda0_hat: r0,
        beta_hat: (r1 / r0).ln(),
        control_events: d0,
        control_exposure: e0,
        treated_events: d1,
        treated_exposure: e1,
    })
}
