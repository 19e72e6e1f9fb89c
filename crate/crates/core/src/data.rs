//! Patient- and trial-level records shared by the generator and the estimators.

use serde::{Deserialize, Serialize};

use crate::copula::CopulaParam;
use crate::error::{Error, Result};

/// Surrogate coding: 0 = responder, 1 = non-responder.
pub const RESPONDER: u8 = 0;
pub const NON_RESPONDER: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    /// Observed follow-up, `min(event time, censoring time)`.
    pub time: f64,
    /// `true` when the failure was observed.
    pub event: bool,
    pub surrogate: u8,
    pub treatment: u8,
}

impl PatientRecord {
    pub fn is_responder(&self) -> bool {
        self.surrogate == RESPONDER
    }

    pub fn is_treated(&self) -> bool {
        self.treatment == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub trial_id: String,
    pub patients: Vec<PatientRecord>,
}

impl TrialDataset {
    pub fn new(trial_id: impl Into<String>, patients: Vec<PatientRecord>) -> Result<Self> {
        let trial_id = trial_id.into();
        if patients.len() < 2 {
            return Err(Error::domain(format!(
                "trial {trial_id} has {} patients; at least 2 are required",
                patients.len()
            )));
        }
        for (j, p) in patients.iter().enumerate() {
            if !(p.time >= 0.0 && p.time.is_finite()) || p.surrogate > 1 || p.treatment > 1 {
                return Err(Error::domain(format!("trial {trial_id}: invalid patient record {j}")));
            }
        }
        Ok(TrialDataset { trial_id, patients })
    }

    pub fn n(&self) -> usize {
        self.patients.len()
    }

    pub fn arm(&self, treated: bool) -> impl Iterator<Item = &PatientRecord> {
        self.patients.iter().filter(move |p| p.is_treated() == treated)
    }

    pub fn has_both_arms(&self) -> bool {
        self.arm(true).next().is_some() && self.arm(false).next().is_some()
    }

    pub fn n_events(&self) -> usize {
        self.patients.iter().filter(|p| p.event).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.n() as f64
    }
}

/// Per-trial parameters: true values on the generator side, estimates (with
/// standard errors) on the estimation side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEffects {
    /// Control-arm log-odds of response.
    pub gamma: f64,
    /// Log baseline hazard (per year).
    pub log_lambda0: f64,
    /// Treatment log odds ratio on the surrogate.
    pub alpha: f64,
    /// Treatment log hazard ratio on the true endpoint.
    pub beta: f64,
    pub se_alpha: Option<f64>,
    pub se_beta: Option<f64>,
}

impl TrialEffects {
    pub fn new(gamma: f64, log_lambda0: f64, alpha: f64, beta: f64) -> Result<Self> {
        let e = TrialEffects {
            gamma,
            log_lambda0,
            alpha,
            beta,
            se_alpha: None,
            se_beta: None,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.gamma, self.log_lambda0, self.alpha, self.beta]
            .iter()
            .all(|x| x.is_finite())
        {
            Ok(())
        } else {
            Err(Error::domain("trial effects must be finite"))
        }
    }
}

/// Population-level generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationParams {
    /// Mean control-arm log-odds of response; default `logit(0.40)`.
    pub gamma: f64,
    /// Mean log baseline hazard; default `ln(0.15)` per year.
    pub log_lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Trial-level R² of the generating covariance.
    pub r2_true: f64,
    pub theta_true: f64,
    /// One-year censoring probability; the exponential censoring rate is
    /// `−ln(1 − censor_rate)`.
    pub censor_rate: f64,
    /// Surrogate assessment (landmark) time in years.
    pub t_assess: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        PopulationParams {
            gamma: (0.4f64 / 0.6).ln(),
            log_lambda0: 0.15f64.ln(),
            alpha: 0.8,
            beta: -0.74,
            r2_true: 0.65,
            theta_true: 1.0,
            censor_rate: 0.05,
            t_assess: 0.5,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.gamma, self.log_lambda0, self.alpha, self.beta]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::domain("population means must be finite"));
        }
        if !(0.0..=1.0).contains(&self.r2_true) {
            return Err(Error::domain(format!("r2_true must lie in [0, 1], got {}", self.r2_true)));
        }
        CopulaParam::new(self.theta_true)?;
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(Error::domain(format!(
                "censor_rate must lie in [0, 1), got {}",
                self.censor_rate
            )));
        }
        if !(self.t_assess >= 0.0 && self.t_assess.is_finite()) {
            return Err(Error::domain("t_assess must be a finite non-negative time"));
        }
        Ok(())
    }

    pub fn copula(&self) -> Result<CopulaParam> {
        CopulaParam::new(self.theta_true)
    }

    /// Exponential censoring rate `λ_c = −ln(1 − r_c)`.
    pub fn censoring_hazard(&self) -> f64 {
        -(-self.censor_rate).ln_1p()
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
