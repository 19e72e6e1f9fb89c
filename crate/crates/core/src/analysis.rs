//! Full two-stage analysis of one collection of trials: marginal fits,
//! joint copula fit, trial-level R², and the surrogacy verdict.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{TrialDataset, TrialEffects};
use crate::error::Result;
use crate::joint::{fit_joint, JointConfig, JointFitResult};
use crate::marginal::{fit_cox_treatment, fit_logistic_treatment, CoxFit, LogisticFit, TieMethod};
use crate::rng::StreamKey;
use crate::trial_level::{trial_level, R2Estimate, TrialLevelConfig, TrialLevelResult};
use crate::verdict::{Criteria, Estimate, RuleSet, SurrogacyEstimates, Verdict};

/// Which per-trial treatment effects feed the second stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSource {
    /// Logistic log-OR and Cox log-HR.
    #[default]
    Marginal,
    /// Per-trial optima of the joint copula fit.
    Joint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub ties: TieMethod,
    pub joint: JointConfig,
    pub trial_level: TrialLevelConfig,
    pub second_stage_effects: EffectSource,
    pub criteria: Criteria,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFits {
    pub trial_id: String,
    pub n: usize,
    pub logistic: LogisticFit,
    pub cox: CoxFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyAnalysis {
    pub marginal: Vec<MarginalFits>,
    pub joint: JointFitResult,
    /// Effects used by the second stage, in trial order.
    pub stage_two_effects: Vec<TrialEffects>,
    pub trial_level: TrialLevelResult,
    pub estimates: SurrogacyEstimates,
    pub verdict: Verdict,
}

impl StudyAnalysis {
    pub fn theta(&self) -> Estimate {
        self.estimates.global_or
    }
}

fn r2_estimate(r: &R2Estimate) -> Estimate {
    Estimate::new(r.est, r.interval.lower, r.interval.upper)
}

pub fn analyze_study(trials: &[TrialDataset], cfg: &AnalysisConfig, key: StreamKey) -> Result<StudyAnalysis> {
    let marginal = trials
        .par_iter()
        .map(|t| {
            Ok(MarginalFits {
                trial_id: t.trial_id.clone(),
                n: t.n(),
                logistic: fit_logistic_treatment(t)?,
                cox: fit_cox_treatment(t, cfg.ties)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let joint = fit_joint(trials, &cfg.joint)?;

    let stage_two_effects: Vec<TrialEffects> = match cfg.second_stage_effects {
        EffectSource::Joint => joint.per_trial.clone(),
        EffectSource::Marginal => marginal
            .iter()
            .zip(&joint.per_trial)
            .map(|(m, j)| TrialEffects {
                gamma: m.logistic.gamma_hat,
                log_lambda0: j.log_lambda0,
                alpha: m.logistic.alpha_hat,
                beta: m.cox.beta_hat,
                se_alpha: Some(m.logistic.se_alpha),
                se_beta: Some(m.cox.se_beta),
            })
            .collect(),
    };
    let ns: Vec<usize> = trials.iter().map(|t| t.n()).collect();
    let tl = trial_level(&stage_two_effects, &ns, &cfg.trial_level, key)?;

    let mut flags = Vec::new();
    for m in &marginal {
        if m.logistic.continuity_corrected {
            flags.push(format!("continuity_corrected:{}", m.trial_id));
        }
    }
    if joint.multimodal_grid {
        flags.push("theta_profile_multimodal".to_string());
    }
    if joint.inner_failures > 0 {
        flags.push(format!("inner_failures:{}", joint.inner_failures));
    }
    if joint.clamped > 0 {
        flags.push(format!("clamped_contributions:{}", joint.clamped));
    }
    for (name, r) in [("r2_copula", &tl.r2_copula), ("r2_wls", &tl.r2_wls), ("r2_adj", &tl.r2_adj)] {
        if r.interval.clipped {
            flags.push(format!("clipped:{name}"));
        }
        if r.interval.jackknife {
            flags.push(format!("jackknife_interval:{name}"));
        }
    }

    let estimates = SurrogacyEstimates {
        r2_copula: r2_estimate(&tl.r2_copula),
        r2_wls: r2_estimate(&tl.r2_wls),
        global_or: Estimate::new(joint.theta_hat, joint.theta_ci.0, joint.theta_ci.1),
        flags,
    };
    let verdict = cfg.criteria.classify(&estimates)?;
    Ok(StudyAnalysis {
        marginal,
        joint,
        stage_two_effects,
        trial_level: tl,
        estimates,
        verdict,
    })
}
