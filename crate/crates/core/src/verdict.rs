//! Surrogacy decision rules: fully validated surrogate (FVS), reasonably
//! likely surrogate (RLS), or not established.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point estimate with an optional 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub est: f64,
    pub interval: Option<(f64, f64)>,
}

impl Estimate {
    pub fn new(est: f64, lower: f64, upper: f64) -> Self {
        Estimate {
            est,
            interval: Some((lower, upper)),
        }
    }

    fn lower(&self, name: &str) -> Result<f64> {
        match self.interval {
            Some((lo, hi)) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(lo),
            Some(_) => Err(Error::Classification(format!("{name} has an invalid interval"))),
            None => Err(Error::Classification(format!("{name} has no confidence interval"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogacyEstimates {
    pub r2_copula: Estimate,
    pub r2_wls: Estimate,
    pub global_or: Estimate,
    /// Quality markers carried over from fitting.
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Which R² lower confidence limit the CL clauses test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClTarget {
    /// The estimate with the larger point value.
    Max,
    /// Both estimates.
    Both,
    /// Any estimate whose point value clears the R² threshold.
    #[default]
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Criteria {
    pub cl_applies_to: ClTarget,
    pub r2_threshold: f64,
    pub r2_floor: f64,
    pub fvs_r2_lower: f64,
    pub rls_r2_lower: f64,
    pub or_threshold: f64,
    pub or_lower: f64,
}

impl Default for Criteria {
    fn default() -> Self {
        Criteria {
            cl_applies_to: ClTarget::Either,
            r2_threshold: 0.8,
            r2_floor: 0.7,
            fvs_r2_lower: 0.6,
            rls_r2_lower: 0.5,
            or_threshold: 3.0,
            or_lower: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerdictClass {
    NotEstablished,
    #[serde(rename = "RLS")]
    Rls,
    #[serde(rename = "FVS")]
    Fvs,
}

impl fmt::Display for VerdictClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictClass::Fvs => "FVS",
            VerdictClass::Rls => "RLS",
            VerdictClass::NotEstablished => "NotEstablished",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEval {
    pub rule: String,
    pub operands: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub class: VerdictClass,
    pub rationale: Vec<RuleEval>,
}

/// A surrogacy rule set.
pub trait RuleSet {
    fn classify(&self, est: &SurrogacyEstimates) -> Result<Verdict>;
}

impl Criteria {
    fn cl_clause(&self, est: &SurrogacyEstimates, lowers: [f64; 2], threshold: f64) -> (Vec<f64>, bool) {
        let points = [est.r2_wls.est, est.r2_copula.est];
        match self.cl_applies_to {
            ClTarget::Max => {
                let i = if points[0] > points[1] {
                    0
                } else if points[1] > points[0] {
                    1
                } else if lowers[0] >= lowers[1] {
                    0
                } else {
                    1
                };
                (vec![lowers[i], threshold], lowers[i] > threshold)
            }
            ClTarget::Both => (
                vec![lowers[0], lowers[1], threshold],
                lowers[0] > threshold && lowers[1] > threshold,
            ),
            ClTarget::Either => {
                let ok = (0..2).any(|i| points[i] > self.r2_threshold && lowers[i] > threshold);
                (vec![lowers[0], lowers[1], threshold], ok)
            }
        }
    }
}

impl RuleSet for Criteria {
    fn classify(&self, est: &SurrogacyEstimates) -> Result<Verdict> {
        let lo_wls = est.r2_wls.lower("r2_wls")?;
        let lo_cop = est.r2_copula.lower("r2_copula")?;
        let lo_or = est.global_or.lower("global_or")?;
        for (name, v) in [
            ("r2_wls", est.r2_wls.est),
            ("r2_copula", est.r2_copula.est),
            ("global_or", est.global_or.est),
        ] {
            if !v.is_finite() {
                return Err(Error::Classification(format!("{name} is not finite")));
            }
        }
        let hi = est.r2_wls.est.max(est.r2_copula.est);
        let lo = est.r2_wls.est.min(est.r2_copula.est);

        let r2_high = hi > self.r2_threshold;
        let r2_floor = lo >= self.r2_floor;
        let (fvs_cl_ops, fvs_cl) = self.cl_clause(est, [lo_wls, lo_cop], self.fvs_r2_lower);
        let (rls_cl_ops, rls_cl) = self.cl_clause(est, [lo_wls, lo_cop], self.rls_r2_lower);
        let or_high = est.global_or.est > self.or_threshold;
        let or_sig = lo_or > self.or_lower;

        let fvs = r2_high && r2_floor && fvs_cl && or_high && or_sig;
        let rls_r2 = r2_high && rls_cl && r2_floor;
        let rls_or = or_high && or_sig;
        let class = if fvs {
            VerdictClass::Fvs
        } else if rls_r2 || rls_or {
            VerdictClass::Rls
        } else {
            VerdictClass::NotEstablished
        };

        let rule = |name: &str, operands: Vec<f64>, passed: bool| RuleEval {
            rule: name.to_string(),
            operands,
            passed,
        };
        let rationale = vec![
            rule("r2_max_above_threshold", vec![hi, self.r2_threshold], r2_high),
            rule("r2_min_at_least_floor", vec![lo, self.r2_floor], r2_floor),
            rule("r2_lower_cl_fvs", fvs_cl_ops, fvs_cl),
            rule("r2_lower_cl_rls", rls_cl_ops, rls_cl),
            rule("global_or_above_threshold", vec![est.global_or.est, self.or_threshold], or_high),
            rule("global_or_lower_cl", vec![lo_or, self.or_lower], or_sig),
            rule("fvs", vec![], fvs),
            rule("rls_r2_branch", vec![], rls_r2),
            rule("rls_or_branch", vec![], rls_or),
        ];
        Ok(Verdict { class, rationale })
    }
}

/// Classify under the default criteria.
pub fn classify(est: &SurrogacyEstimates) -> Result<Verdict> {
    Criteria::default().classify(est)
}

/// Percentages `(FVS, RLS or better)`.
pub fn acceptance_rates(verdicts: &[Verdict]) -> Result<(f64, f64)> {
    acceptance_rates_of(verdicts.iter().map(|v| v.class))
}

pub fn acceptance_rates_of(classes: impl IntoIterator<Item = VerdictClass>) -> Result<(f64, f64)> {
    let (mut n, mut fvs, mut rls) = (0usize, 0usize, 0usize);
    for c in classes {
        n += 1;
        match c {
            VerdictClass::Fvs => fvs += 1,
            VerdictClass::Rls => rls += 1,
            VerdictClass::NotEstablished => {}
        }
    }
    if n == 0 {
        return Err(Error::domain("no verdicts to summarize"));
    }
    let pct = |k: usize| 100.0 * k as f64 / n as f64;
    Ok((pct(fvs), pct(fvs + rls)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(wls: (f64, f64), cop: (f64, f64), or: (f64, f64)) -> SurrogacyEstimates {
        SurrogacyEstimates {
            r2_wls: Estimate::new(wls.0, wls.1, 1.0),
            r2_copula: Estimate::new(cop.0, cop.1, 1.0),
            global_or: Estimate::new(or.0, or.1, 100.0),
            flags: vec![],
        }
    }

    #[test]
    fn worked_classifications() {
        let c = |r| classify(&r).unwrap().class;
        assert_eq!(c(record((0.85, 0.65), (0.75, 0.4), (4.0, 1.5))), VerdictClass::Fvs);
        assert_eq!(c(record((0.85, 0.55), (0.75, 0.4), (2.0, 0.9))), VerdictClass::Rls);
        assert_eq!(c(record((0.60, 0.3), (0.50, 0.2), (3.5, 1.2))), VerdictClass::Rls);
        assert_eq!(c(record((0.60, 0.3), (0.50, 0.2), (2.0, 0.8))), VerdictClass::NotEstablished);
    }

    #[test]
    fn boundaries() {
        // "neither below 0.7" admits 0.7 itself; the other comparisons are strict.
        let v = classify(&record((0.85, 0.65), (0.7, 0.4), (4.0, 1.5))).unwrap();
        assert_eq!(v.class, VerdictClass::Fvs);
        let v = classify(&record((0.8, 0.65), (0.75, 0.4), (4.0, 1.5))).unwrap();
        assert_eq!(v.class, VerdictClass::Rls);
        let v = classify(&record((0.6, 0.3), (0.5, 0.2), (3.0, 1.5))).unwrap();
        assert_eq!(v.class, VerdictClass::NotEstablished);
    }

    #[test]
    fn missing_interval_is_an_error() {
        let mut r = record((0.85, 0.65), (0.75, 0.4), (4.0, 1.5));
        r.global_or.interval = None;
        assert!(matches!(classify(&r), Err(Error::Classification(_))));
    }

    #[test]
    fn rationale_is_complete() {
        let v = classify(&record((0.2, 0.1), (0.1, 0.0), (1.0, 0.5))).unwrap();
        assert_eq!(v.rationale.len(), 9);
        assert!(v.rationale.iter().all(|r| !r.passed));
    }

    #[test]
    fn max_target_is_not_monotone() {
        // Raising the non-qualifying estimate above the qualifying one moves the
        // CL test to an estimate with a weak interval and demotes the record.
        let crit = Criteria {
            cl_applies_to: ClTarget::Max,
            ..Default::default()
        };
        let before = crit.classify(&record((0.85, 0.65), (0.75, 0.3), (4.0, 1.5))).unwrap();
        let after = crit.classify(&record((0.85, 0.65), (0.9, 0.3), (4.0, 1.5))).unwrap();
        assert_eq!(before.class, VerdictClass::Fvs);
        assert!(after.class < before.class);
        // The default target keeps the record FVS.
        assert_eq!(classify(&record((0.85, 0.65), (0.9, 0.3), (4.0, 1.5))).unwrap().class, VerdictClass::Fvs);
    }

    #[test]
    fn rates() {
        let mk = |class| Verdict { class, rationale: vec![] };
        let v = [
            mk(VerdictClass::Fvs),
            mk(VerdictClass::Rls),
            mk(VerdictClass::NotEstablished),
            mk(VerdictClass::NotEstablished),
        ];
        assert_eq!(acceptance_rates(&v).unwrap(), (25.0, 50.0));
        assert_eq!(acceptance_rates(&v[..1]).unwrap(), (100.0, 100.0));
        assert!(acceptance_rates(&[]).is_err());
    }

    #[test]
    fn display_names() {
        assert_eq!(VerdictClass::Fvs.to_string(), "FVS");
        assert_eq!(VerdictClass::Rls.to_string(), "RLS");
        assert_eq!(VerdictClass::NotEstablished.to_string(), "NotEstablished");
    }
}
