//! Censored-data Plackett-copula likelihood and the first-stage joint fit.
//!
//! Within arm `z` of trial `i` the surrogate has response probability
//! `u = expit(γ_i + α_i z)` and the event time is exponential with hazard
//! `h = λ_0i exp(β_i z)`, survival `v(t) = exp(−h t)`. The copula couples
//! the latent response variable with the survival scale, so
//! `P(S = 0, T > t) = C_θ(u, v(t))` and each patient contributes
//!
//! | surrogate | status   | contribution            |
//! |-----------|----------|-------------------------|
//! | 0         | event    | `f(t) ∂C/∂v (u, v)`     |
//! | 1         | event    | `f(t) (1 − ∂C/∂v)`      |
//! | 0         | censored | `C(u, v)`               |
//! | 1         | censored | `v − C(u, v)`           |
//!
//! with `f(t) = h v(t)`. Because every arm has its own `(u, h)`, the
//! log-likelihood of a trial splits into two independent arm terms; the
//! fit profiles the shared `θ` over per-arm Newton maximizations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{partials, CopulaParam};
use crate::data::{expit, logit, TrialDataset, TrialEffects};
use crate::error::{Error, Result};
use crate::optimize::brent_max;

/// Contributions at or below this value are clamped.
pub const UNDERFLOW_CLAMP: f64 = 1e-300;
const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointConfig {
    /// Inner Newton tolerance on the sup-norm of the arm gradient.
    pub inner_grad_tol: f64,
    pub inner_max_iter: usize,
    /// Outer Brent tolerance in `log θ`.
    pub outer_tol: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Coarse grid points used to bracket the profile maximum.
    pub grid_points: usize,
    /// Step in `log θ` for the profile curvature.
    pub curvature_step: f64,
    /// Fit fails when more than this fraction of trials do not converge.
    pub max_failed_fraction: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            inner_grad_tol: 1e-8,
            inner_max_iter: 100,
            outer_tol: 1e-6,
            theta_min: 0.05,
            theta_max: 400.0,
            grid_points: 9,
            curvature_step: 1e-2,
            max_failed_fraction: 0.2,
        }
    }
}

/// Observed outcome category of one patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    RespondEvent,
    NonRespondEvent,
    RespondCensored,
    NonRespondCensored,
}

#[derive(Debug, Clone, Default)]
struct ArmData {
    times: Vec<f64>,
    outcomes: Vec<Outcome>,
}

impl ArmData {
    fn split(data: &TrialDataset) -> [ArmData; 2] {
        let mut arms = [ArmData::default(), ArmData::default()];
        for p in &data.patients {
            let arm = &mut arms[usize::from(p.treatment)];
            arm.times.push(p.time);
            arm.outcomes.push(match (p.is_responder(), p.event) {
                (true, true) => Outcome::RespondEvent,
                (false, true) => Outcome::NonRespondEvent,
                (true, false) => Outcome::RespondCensored,
                (false, false) => Outcome::NonRespondCensored,
            });
        }
        arms
    }

    fn len(&self) -> usize {
        self.times.len()
    }

    /// Marginal starting values: empirical log odds of response and log of
    /// events over exposure (half-counts guard empty cells).
    fn start(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let responders = self
            .outcomes
            .iter()
            .filter(|o| matches!(o, Outcome::RespondEvent | Outcome::RespondCensored))
            .count() as f64;
        let events = self
            .outcomes
            .iter()
            .filter(|o| matches!(o, Outcome::RespondEvent | Outcome::NonRespondEvent))
            .count() as f64;
        let exposure: f64 = self.times.iter().sum();
        let p = (responders + 0.5) / (n + 1.0);
        [logit(p), ((events.max(0.5)) / exposure.max(f64::MIN_POSITIVE)).ln()]
    }
}

/// Log-likelihood of one arm with gradient in `(a, b) = (logit u, log h)`
/// and in `θ`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ArmEval {
    ll: f64,
    grad: [f64; 2],
    d_theta: f64,
    clamped: usize,
}

#[inline]
fn arm_eval(x: [f64; 2], theta: f64, arm: &ArmData) -> ArmEval {
    let [a, b] = x;
    let u = expit(a);
    let u_bar = expit(-a);
    let du = u * u_bar;
    let h = b.exp();
    let inv = 1.0 / theta;
    let dinv = -inv * inv;

    let mut out = ArmEval::default();
    for (&t, &o) in arm.times.iter().zip(&arm.outcomes) {
        let ht = h * t;
        let v = (-ht).exp();
        let v_bar = -(-ht).exp_m1();
        let dv = -ht * v;
        let (val, ga, gb, gt, base) = match o {
            Outcome::RespondEvent => {
                let p = partials(u, u_bar, v, v_bar, theta);
                (p.cv, p.density * du, p.cvv * dv, p.dcv_dtheta, true)
            }
            Outcome::NonRespondEvent => {
                let p = partials(u_bar, u, v, v_bar, inv);
                (p.cv, -p.density * du, p.cvv * dv, p.dcv_dtheta * dinv, true)
            }
            Outcome::RespondCensored => {
                let p = partials(u, u_bar, v, v_bar, theta);
                (p.c, p.cu * du, p.cv * dv, p.dc_dtheta, false)
            }
            Outcome::NonRespondCensored => {
                let p = partials(u_bar, u, v, v_bar, inv);
                (p.c, -p.cu * du, p.cv * dv, p.dc_dtheta * dinv, false)
            }
        };
        if base {
            // log f(t) = b − h t
            out.ll += b - ht;
            out.grad[1] += 1.0 - ht;
        }
        if val > UNDERFLOW_CLAMP && val.is_finite() {
            out.ll += val.ln();
            out.grad[0] += ga / val;
            out.grad[1] += gb / val;
            out.d_theta += gt / val;
        } else {
            out.ll += UNDERFLOW_CLAMP.ln();
            out.clamped += 1;
        }
    }
    out
}

fn effects_to_arms(e: &TrialEffects) -> [[f64; 2]; 2] {
    [
        [e.gamma, e.log_lambda0],
        [e.gamma + e.alpha, e.log_lambda0 + e.beta],
    ]
}

/// Value and gradient of a trial log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialLoglik {
    pub value: f64,
    /// Gradient in `(γ, log λ₀, α, β)`.
    pub grad: [f64; 4],
    pub d_theta: f64,
    /// Number of contributions clamped at the underflow floor.
    pub clamped: usize,
}

pub fn loglik_trial_with_gradient(
    effects: &TrialEffects,
    theta: CopulaParam,
    data: &TrialDataset,
) -> Result<TrialLoglik> {
    effects.validate()?;
    let arms = ArmData::split(data);
    let x = effects_to_arms(effects);
    let e0 = arm_eval(x[0], theta.value(), &arms[0]);
    let e1 = arm_eval(x[1], theta.value(), &arms[1]);
    // a1 = γ + α, b1 = log λ₀ + β
    Ok(TrialLoglik {
        value: e0.ll + e1.ll,
        grad: [
            e0.grad[0] + e1.grad[0],
            e0.grad[1] + e1.grad[1],
            e1.grad[0],
            e1.grad[1],
        ],
        d_theta: e0.d_theta + e1.d_theta,
        clamped: e0.clamped + e1.clamped,
    })
}

/// Copula log-likelihood of one trial at the given parameters.
pub fn loglik_trial(effects: &TrialEffects, theta: CopulaParam, data: &TrialDataset) -> Result<f64> {
    Ok(loglik_trial_with_gradient(effects, theta, data)?.value)
}

/// Result of maximizing one arm for fixed `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ArmOpt {
    x: [f64; 2],
    ll: f64,
    /// Hessian of the log-likelihood at `x`.
    hessian: [[f64; 2]; 2],
    converged: bool,
    clamped: usize,
}

fn hessian_fd(x: [f64; 2], theta: f64, arm: &ArmData) -> [[f64; 2]; 2] {
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        let step = 1e-5 * x[i].abs().max(1.0);
        let mut xp = x;
        let mut xm = x;
        xp[i] += step;
        xm[i] -= step;
        let gp = arm_eval(xp, theta, arm).grad;
        let gm = arm_eval(xm, theta, arm).grad;
        for j in 0..2 {
            h[j][i] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    let off = 0.5 * (h[0][1] + h[1][0]);
    h[0][1] = off;
    h[1][0] = off;
    h
}

/// Newton ascent with Levenberg damping and backtracking.
fn maximize_arm(start: [f64; 2], theta: f64, arm: &ArmData, cfg: &JointConfig) -> ArmOpt {
    let mut x = start;
    let mut cur = arm_eval(x, theta, arm);
    let mut converged = false;
    for _ in 0..cfg.inner_max_iter {
        if cur.grad.iter().all(|g| g.abs() < cfg.inner_grad_tol) {
            converged = true;
            break;
        }
        let h = hessian_fd(x, theta, arm);
        // Solve (−H + μI) d = g with μ raised until the system is positive definite.
        let (p00, p01, p11) = (-h[0][0], -h[0][1], -h[1][1]);
        let mut mu = 0.0;
        let dir = loop {
            let (m00, m11) = (p00 + mu, p11 + mu);
            let det = m00 * m11 - p01 * p01;
            if m00 > 0.0 && det > 0.0 && det.is_finite() {
                break [
                    (m11 * cur.grad[0] - p01 * cur.grad[1]) / det,
                    (m00 * cur.grad[1] - p01 * cur.grad[0]) / det,
                ];
            }
            mu = if mu == 0.0 { 1e-6 * (p00.abs() + p11.abs()).max(1.0) } else { mu * 4.0 };
            if !mu.is_finite() {
                break [0.0, 0.0];
            }
        };
        // Near the optimum the gradient is dominated by rounding in the
        // summed log-likelihood; stop once the predicted gain is negligible.
        let decrement = dir[0] * cur.grad[0] + dir[1] * cur.grad[1];
        if mu == 0.0 && decrement < 1e-13 * cur.ll.abs().max(1.0) {
            converged = true;
            break;
        }
        let norm = dir[0].abs().max(dir[1].abs());
        let mut scale = if norm > 5.0 { 5.0 / norm } else { 1.0 };
        let mut accepted = false;
        for _ in 0..50 {
            let trial = [x[0] + scale * dir[0], x[1] + scale * dir[1]];
            let eval = arm_eval(trial, theta, arm);
            if eval.ll.is_finite() && eval.ll >= cur.ll {
                let moved = trial != x;
                x = trial;
                cur = eval;
                accepted = moved;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        converged = cur.grad.iter().all(|g| g.abs() < cfg.inner_grad_tol);
    }
    ArmOpt {
        x,
        ll: cur.ll,
        hessian: hessian_fd(x, theta, arm),
        converged,
        clamped: cur.clamped,
    }
}

#[derive(Debug, Clone)]
struct TrialState {
    arms: [ArmData; 2],
    start: [[f64; 2]; 2],
    opt: Option<[ArmOpt; 2]>,
}

impl TrialState {
    fn new(data: &TrialDataset) -> Self {
        let arms = ArmData::split(data);
        let start = [arms[0].start(), arms[1].start()];
        TrialState { arms, start, opt: None }
    }

    fn solve(&mut self, theta: f64, cfg: &JointConfig) -> (f64, bool, usize) {
        let warm = match &self.opt {
            Some(o) => [o[0].x, o[1].x],
            None => self.start,
        };
        let r0 = maximize_arm(warm[0], theta, &self.arms[0], cfg);
        let r1 = maximize_arm(warm[1], theta, &self.arms[1], cfg);
        let out = (r0.ll + r1.ll, r0.converged && r1.converged, r0.clamped + r1.clamped);
        self.opt = Some([r0, r1]);
        out
    }

    fn effects(&self) -> Result<TrialEffects> {
        let o = self.opt.as_ref().ok_or_else(|| Error::estimation("trial not fitted"))?;
        let cov = |h: &[[f64; 2]; 2]| -> Result<[f64; 2]> {
            let (a, b, d) = (-h[0][0], -h[0][1], -h[1][1]);
            let det = a * d - b * b;
            if !(a > 0.0 && det > 0.0) {
                return Err(Error::estimation("observed information is not positive definite"));
            }
            Ok([d / det, a / det])
        };
        let v0 = cov(&o[0].hessian)?;
        let v1 = cov(&o[1].hessian)?;
        let mut e = TrialEffects::new(
            o[0].x[0],
            o[0].x[1],
            o[1].x[0] - o[0].x[0],
            o[1].x[1] - o[0].x[1],
        )?;
        e.se_alpha = Some((v0[0] + v1[0]).sqrt());
        e.se_beta = Some((v0[1] + v1[1]).sqrt());
        Ok(e)
    }
}

/// Profile log-likelihood of `log θ`, carrying warm starts between calls.
struct Profile<'c> {
    trials: Vec<TrialState>,
    cfg: &'c JointConfig,
    evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct ProfilePoint {
    value: f64,
    failed: usize,
    clamped: usize,
}

impl<'c> Profile<'c> {
    fn eval(&mut self, log_theta: f64) -> ProfilePoint {
        self.evaluations += 1;
        let theta = log_theta.exp();
        let cfg = self.cfg;
        let parts: Vec<(f64, bool, usize)> = self.trials.par_iter_mut().map(|t| t.solve(theta, cfg)).collect();
        ProfilePoint {
            value: parts.iter().map(|p| p.0).sum(),
            failed: parts.iter().filter(|p| !p.1).count(),
            clamped: parts.iter().map(|p| p.2).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFitResult {
    pub theta_hat: f64,
    pub theta_ci: (f64, f64),
    /// Negative second derivative of the profile log-likelihood in `log θ`.
    pub profile_curvature: f64,
    pub per_trial: Vec<TrialEffects>,
    pub loglik: f64,
    /// Profile evaluations performed.
    pub iterations: usize,
    pub converged: bool,
    /// Trials whose inner maximization missed tolerance at `θ̂`.
    pub inner_failures: usize,
    /// Likelihood contributions clamped at the underflow floor at `θ̂`.
    pub clamped: usize,
    /// More than one local maximum was seen on the bracketing grid.
    pub multimodal_grid: bool,
}

/// Wald interval for `θ` on the log scale from the profile curvature.
pub fn theta_confidence_interval(theta_hat: f64, profile_curvature: f64) -> Result<(f64, f64)> {
    if !(profile_curvature > 0.0) || !profile_curvature.is_finite() {
        return Err(Error::numeric(
            "profile log-likelihood is flat or convex at the estimate",
            profile_curvature,
        ));
    }
    let half = Z975 / profile_curvature.sqrt();
    let l = theta_hat.ln();
    Ok(((l - half).exp(), (l + half).exp()))
}

/// Maximum-likelihood fit of one shared `θ` and per-trial marginal
/// parameters across trials.
pub fn fit_joint(trials: &[TrialDataset], cfg: &JointConfig) -> Result<JointFitResult> {
    if trials.len() < 2 {
        return Err(Error::domain("the joint fit needs at least two trials"));
    }
    for t in trials {
        if !t.has_both_arms() {
            return Err(Error::estimation(format!("trial {} lacks one treatment arm", t.trial_id)));
        }
    }
    if !(cfg.theta_min > 0.0 && cfg.theta_max > cfg.theta_min && cfg.grid_points >= 3) {
        return Err(Error::domain("invalid theta search range"));
    }
    let mut profile = Profile {
        trials: trials.iter().map(TrialState::new).collect(),
        cfg,
        evaluations: 0,
    };

    let (lo, hi) = (cfg.theta_min.ln(), cfg.theta_max.ln());
    let k = cfg.grid_points;
    let grid: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&g| profile.eval(g).value).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > values[b] { i } else { b });
    let local_maxima = (0..k)
        .filter(|&i| (i == 0 || values[i] > values[i - 1]) && (i == k - 1 || values[i] > values[i + 1]))
        .count();

    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(k - 1)];
    let opt = brent_max(|x| profile.eval(x).value, a, b, cfg.outer_tol);
    let psi = opt.x;
    if psi - lo < 10.0 * cfg.outer_tol || hi - psi < 10.0 * cfg.outer_tol {
        return Err(Error::numeric(
            format!(
                "profile maximum lies on the search boundary (theta = {:.4})",
                psi.exp()
            ),
            psi,
        ));
    }

    let step = cfg.curvature_step;
    let up = profile.eval(psi + step).value;
    let down = profile.eval(psi - step).value;
    let centre = profile.eval(psi);
    let curvature = -(up - 2.0 * centre.value + down) / (step * step);
    let theta_hat = psi.exp();
    let theta_ci = theta_confidence_interval(theta_hat, curvature)?;

    if centre.failed as f64 > cfg.max_failed_fraction * trials.len() as f64 {
        return Err(Error::estimation(format!(
            "inner maximization failed in {} of {} trials",
            centre.failed,
            trials.len()
        )));
    }
    let per_trial = profile
        .trials
        .iter()
        .map(|t| t.effects())
        .collect::<Result<Vec<_>>>()?;

    Ok(JointFitResult {
        theta_hat,
        theta_ci,
        profile_curvature: curvature,
        per_trial,
        loglik: centre.value,
        iterations: profile.evaluations,
        converged: centre.failed == 0,
        inner_failures: centre.failed,
        clamped: centre.clamped,
        multimodal_grid: local_maxima > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PatientRecord, PopulationParams};
    use crate::rng::StreamKey;
    use crate::synth::{synthesize_study, synthesize_trial};

    fn trial(theta: f64, n: usize, seed: u64) -> TrialDataset {
        let pop = PopulationParams {
            theta_true: theta,
            censor_rate: 0.3,
            t_assess: 0.0,
            ..Default::default()
        };
        let e = TrialEffects::new(-0.3, 0.4f64.ln(), 0.6, -0.5).unwrap();
        synthesize_trial("t", &e, n, &pop, &StreamKey::new(seed)).unwrap()
    }

    #[test]
    fn independence_factorizes() {
        let d = trial(2.0, 200, 1);
        let e = TrialEffects::new(-0.2, 0.3f64.ln(), 0.4, -0.6).unwrap();
        let ll = loglik_trial(&e, CopulaParam::INDEPENDENCE, &d).unwrap();

        let mut reference = 0.0;
        for p in &d.patients {
            let z = f64::from(p.treatment);
            let u = expit(e.gamma + e.alpha * z);
            reference += if p.is_responder() { u.ln() } else { (1.0 - u).ln() };
            let h = (e.log_lambda0 + e.beta * z).exp();
            reference += if p.event { h.ln() - h * p.time } else { -h * p.time };
        }
        assert!((ll - reference).abs() < 1e-10, "{ll} vs {reference}");
    }

    /// Contribution of a single patient, evaluated through the public API.
    fn single(t: f64, event: bool, surrogate: u8, a: f64, b: f64, theta: f64) -> f64 {
        let rec = PatientRecord {
            time: t,
            event,
            surrogate,
            treatment: 0,
        };
        let pad = PatientRecord {
            time: 1.0,
            event: false,
            surrogate: 0,
            treatment: 1,
        };
        let d = TrialDataset::new("one", vec![rec, pad]).unwrap();
        let e = TrialEffects::new(a, b, 0.0, 0.0).unwrap();
        let full = loglik_trial(&e, CopulaParam::new(theta).unwrap(), &d).unwrap();
        let pad_only = arm_eval([a, b], theta, &ArmData::split(&d)[1]).ll;
        (full - pad_only).exp()
    }

    #[test]
    fn outcome_probabilities_total() {
        for &theta in &[0.2, 1.0, 3.0, 40.0] {
            for &(t, a, b) in &[(0.3, 0.4, -1.0), (2.0, -1.5, -0.2), (0.01, 2.0, 0.5)] {
                let h: f64 = f64::exp(b);
                let f = h * (-h * t).exp();
                let s = (-h * t).exp();
                let dens = single(t, true, 0, a, b, theta) + single(t, true, 1, a, b, theta);
                let surv = single(t, false, 0, a, b, theta) + single(t, false, 1, a, b, theta);
                assert!((dens - f).abs() < 1e-12, "theta {theta}: {dens} vs {f}");
                assert!((surv - s).abs() < 1e-12, "theta {theta}: {surv} vs {s}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = trial(3.0, 50, 2);
        let e = TrialEffects::new(-0.1, 0.5f64.ln(), 0.3, -0.4).unwrap();
        for &theta in &[0.5, 3.0, 12.0] {
            let th = CopulaParam::new(theta).unwrap();
            let g = loglik_trial_with_gradient(&e, th, &d).unwrap();
            let h = 1e-6 * theta;
            let up = loglik_trial(&e, CopulaParam::new(theta + h).unwrap(), &d).unwrap();
            let dn = loglik_trial(&e, CopulaParam::new(theta - h).unwrap(), &d).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!((g.d_theta - fd).abs() <= 1e-5 * fd.abs().max(1.0), "theta {theta}: {} vs {fd}", g.d_theta);

            let base = [e.gamma, e.log_lambda0, e.alpha, e.beta];
            for k in 0..4 {
                let mut p = base;
                let mut m = base;
                p[k] += 1e-6;
                m[k] -= 1e-6;
                let ep = TrialEffects::new(p[0], p[1], p[2], p[3]).unwrap();
                let em = TrialEffects::new(m[0], m[1], m[2], m[3]).unwrap();
                let fd = (loglik_trial(&ep, th, &d).unwrap() - loglik_trial(&em, th, &d).unwrap()) / 2e-6;
                assert!((g.grad[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "k {k}: {} vs {fd}", g.grad[k]);
            }
        }
    }

    #[test]
    fn nan_parameters_rejected() {
        let d = trial(1.0, 20, 3);
        let e = TrialEffects {
            gamma: f64::NAN,
            log_lambda0: 0.0,
            alpha: 0.0,
            beta: 0.0,
            se_alpha: None,
            se_beta: None,
        };
        assert!(loglik_trial(&e, CopulaParam::INDEPENDENCE, &d).is_err());
    }

    #[test]
    fn ci_is_symmetric_on_log_scale() {
        let (lo, hi) = theta_confidence_interval(3.7, 25.0).unwrap();
        assert!((hi / 3.7 - 3.7 / lo).abs() < 1e-10);
        assert!((lo - (3.7f64.ln() - Z975 / 5.0).exp()).abs() < 1e-12);
        assert!(theta_confidence_interval(3.7, 0.0).is_err());
        assert!(theta_confidence_interval(3.7, -1.0).is_err());
    }

    fn study(theta: f64, n_trials: usize, n: usize, seed: u64) -> Vec<TrialDataset> {
        let pop = PopulationParams {
            theta_true: theta,
            censor_rate: 0.0,
            t_assess: 0.0,
            r2_true: 0.5,
            ..Default::default()
        };
        synthesize_study(&pop, &vec![n; n_trials], StreamKey::new(seed)).unwrap().trials
    }

    #[test]
    fn recovers_theta() {
        let fit = fit_joint(&study(3.0, 8, 500, 17), &JointConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(!fit.multimodal_grid);
        assert!((fit.theta_hat - 3.0).abs() < 0.6, "theta_hat {}", fit.theta_hat);
        assert!(fit.theta_ci.0 < fit.theta_hat && fit.theta_hat < fit.theta_ci.1);
        for e in &fit.per_trial {
            assert!(e.se_alpha.unwrap() > 0.0 && e.se_beta.unwrap() > 0.0);
        }
    }

    #[test]
    fn time_scale_invariance() {
        let trials = study(2.0, 4, 200, 5);
        let k = 3.5;
        let scaled: Vec<TrialDataset> = trials
            .iter()
            .map(|t| {
                let mut s = t.clone();
                for p in &mut s.patients {
                    p.time *= k;
                }
                s
            })
            .collect();
        let a = fit_joint(&trials, &JointConfig::default()).unwrap();
        let b = fit_joint(&scaled, &JointConfig::default()).unwrap();
        assert!((a.theta_hat - b.theta_hat).abs() < 1e-6 * a.theta_hat);
        for (x, y) in a.per_trial.iter().zip(&b.per_trial) {
            assert!((x.alpha - y.alpha).abs() < 1e-6);
            assert!((x.beta - y.beta).abs() < 1e-6);
            assert!((x.log_lambda0 - k.ln() - y.log_lambda0).abs() < 1e-6);
        }
    }

    #[test]
    fn needs_two_trials() {
        assert!(fit_joint(&study(1.0, 1, 50, 1), &JointConfig::default()).is_err());
    }
}
