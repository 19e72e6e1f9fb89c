//! Factorial simulation: scenario grids, replicated
//! synthesize → fit → classify pipelines, and metric aggregation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_study, AnalysisConfig};
use crate::data::{PopulationParams, TrialDataset};
use crate::error::{Error, Result};
use crate::rng::{stable_id, StreamKey};
use crate::synth::{synthesize_study, TrialSizes};
use crate::verdict::{acceptance_rates_of, VerdictClass};

/// Levels of each simulation factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Factors {
    pub r2_true: Vec<f64>,
    pub theta_true: Vec<f64>,
    pub n_trials: Vec<usize>,
    pub trial_sizes: Vec<TrialSizes>,
    pub censor_rate: Vec<f64>,
    /// `(α, β)` population treatment effects.
    pub effects: Vec<(f64, f64)>,
}

impl Default for Factors {
    fn default() -> Self {
        Factors::standard_grid()
    }
}

impl Factors {
    /// The full factorial design with equal trial sizes.
    pub fn standard_grid() -> Self {
        Factors {
            r2_true: vec![0.3, 0.65, 0.95],
            theta_true: vec![1.0, 3.0, 7.0],
            n_trials: vec![10, 20, 30],
            trial_sizes: vec![TrialSizes::Equal(300), TrialSizes::Equal(1000)],
            censor_rate: vec![0.05, 0.10, 0.15],
            effects: vec![(0.8, -0.74), (0.3, -0.25), (1.2, -1.05)],
        }
    }

    /// Every factor fixed at a single level.
    pub fn single(r2: f64, theta: f64, n_trials: usize, sizes: TrialSizes, censor: f64, effects: (f64, f64)) -> Self {
        Factors {
            r2_true: vec![r2],
            theta_true: vec![theta],
            n_trials: vec![n_trials],
            trial_sizes: vec![sizes],
            censor_rate: vec![censor],
            effects: vec![effects],
        }
    }
}

/// Settings shared by all scenarios of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub replications: usize,
    pub master_seed: u64,
    pub t_assess: f64,
    pub gamma: f64,
    pub log_lambda0: f64,
    pub analysis: AnalysisConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        let pop = PopulationParams::default();
        RunSettings {
            replications: 100,
            master_seed: 0,
            t_assess: pop.t_assess,
            gamma: pop.gamma,
            log_lambda0: pop.log_lambda0,
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u64,
    pub r2_true: f64,
    pub theta_true: f64,
    pub n_trials: usize,
    pub trial_sizes: TrialSizes,
    pub censor_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub t_assess: f64,
    pub gamma: f64,
    pub log_lambda0: f64,
    pub replications: usize,
    pub master_seed: u64,
    pub analysis: AnalysisConfig,
}

impl ScenarioSpec {
    pub fn population(&self) -> PopulationParams {
        PopulationParams {
            gamma: self.gamma,
            log_lambda0: self.log_lambda0,
            alpha: self.alpha,
            beta: self.beta,
            r2_true: self.r2_true,
            theta_true: self.theta_true,
            censor_rate: self.censor_rate,
            t_assess: self.t_assess,
        }
    }

    /// Canonical text of the generating factors; hashed into the id.
    pub fn canonical_factors(&self) -> String {
        format!(
            "r2={:?};theta={:?};n_trials={};sizes={};censor={:?};alpha={:?};beta={:?};t_assess={:?};gamma={:?};log_lambda0={:?}",
            self.r2_true,
            self.theta_true,
            self.n_trials,
            self.trial_sizes.label(),
            self.censor_rate,
            self.alpha,
            self.beta,
            self.t_assess,
            self.gamma,
            self.log_lambda0
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if self.n_trials < 3 {
            return Err(Error::domain("the trial-level model needs at least 3 trials"));
        }
        let sizes = self.trial_sizes.sizes(self.n_trials);
        if sizes.len() != self.n_trials {
            return Err(Error::domain("explicit trial sizes must not be empty"));
        }
        for n in sizes {
            if n < 4 {
                return Err(Error::domain(format!("trial size {n} is too small")));
            }
        }
        self.population().validate()
    }

    pub fn replicate_key(&self, replicate: usize) -> StreamKey {
        StreamKey::new(self.master_seed)
            .scenario(self.id)
            .replicate(replicate as u64)
    }

    /// Synthesized trials of one replicate.
    pub fn synthesize(&self, replicate: usize) -> Result<Vec<TrialDataset>> {
        let sizes = self.trial_sizes.sizes(self.n_trials);
        Ok(synthesize_study(&self.population(), &sizes, self.replicate_key(replicate))?.trials)
    }
}

/// Cartesian product of the factor levels.
pub fn expand_grid(factors: &Factors, settings: &RunSettings) -> Result<Vec<ScenarioSpec>> {
    let f = factors;
    if f.r2_true.is_empty()
        || f.theta_true.is_empty()
        || f.n_trials.is_empty()
        || f.trial_sizes.is_empty()
        || f.censor_rate.is_empty()
        || f.effects.is_empty()
    {
        return Err(Error::domain("every factor needs at least one level"));
    }
    let mut out = Vec::new();
    for &r2 in &f.r2_true {
        for &theta in &f.theta_true {
            for &n_trials in &f.n_trials {
                for sizes in &f.trial_sizes {
                    for &censor in &f.censor_rate {
                        for &(alpha, beta) in &f.effects {
                            let mut spec = ScenarioSpec {
                                id: 0,
                                r2_true: r2,
                                theta_true: theta,
                                n_trials,
                                trial_sizes: sizes.clone(),
                                censor_rate: censor,
                                alpha,
                                beta,
                                t_assess: settings.t_assess,
                                gamma: settings.gamma,
                                log_lambda0: settings.log_lambda0,
                                replications: settings.replications,
                                master_seed: settings.master_seed,
                                analysis: settings.analysis,
                            };
                            spec.id = stable_id(spec.canonical_factors().as_bytes());
                            spec.validate()?;
                            out.push(spec);
                        }
                    }
                }
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|s| seen.insert(s.id));
    Ok(out)
}

/// Estimates from one successful replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimates {
    pub r2_copula: f64,
    pub r2_copula_ci: (f64, f64),
    pub r2_wls: f64,
    pub r2_wls_ci: (f64, f64),
    pub r2_adj: f64,
    pub r2_adj_ci: (f64, f64),
    pub global_or: f64,
    pub global_or_ci: (f64, f64),
    pub verdict: VerdictClass,
    pub censored_fraction: f64,
    pub clipped: usize,
    pub continuity_corrected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub outcome: std::result::Result<ReplicateEstimates, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub replicates: Vec<ReplicateRecord>,
}

impl ScenarioResult {
    pub fn successes(&self) -> impl Iterator<Item = &ReplicateEstimates> {
        self.replicates.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Synthesize and analyze one replicate.
pub fn run_replicate(spec: &ScenarioSpec, replicate: usize) -> Result<ReplicateEstimates> {
    let trials = spec.synthesize(replicate)?;
    let a = analyze_study(&trials, &spec.analysis, spec.replicate_key(replicate))?;
    let total: usize = trials.iter().map(|t| t.n()).sum();
    let censored: usize = trials.iter().map(|t| t.n() - t.n_events()).sum();
    let tl = &a.trial_level;
    let iv = |r: &crate::trial_level::R2Estimate| (r.interval.lower, r.interval.upper);
    Ok(ReplicateEstimates {
        r2_copula: tl.r2_copula.est,
        r2_copula_ci: iv(&tl.r2_copula),
        r2_wls: tl.r2_wls.est,
        r2_wls_ci: iv(&tl.r2_wls),
        r2_adj: tl.r2_adj.est,
        r2_adj_ci: iv(&tl.r2_adj),
        global_or: a.joint.theta_hat,
        global_or_ci: a.joint.theta_ci,
        verdict: a.verdict.class,
        censored_fraction: censored as f64 / total as f64,
        clipped: [&tl.r2_copula, &tl.r2_wls, &tl.r2_adj]
            .iter()
            .filter(|r| r.interval.clipped)
            .count(),
        continuity_corrected: a.marginal.iter().filter(|m| m.logistic.continuity_corrected).count(),
    })
}

/// Run every replicate of a scenario on the current rayon pool.
pub fn execute_scenario(spec: &ScenarioSpec) -> ScenarioResult {
    let replicates = (0..spec.replications)
        .into_par_iter()
        .map(|r| ReplicateRecord {
            replicate: r,
            outcome: run_replicate(spec, r).map_err(|e| e.to_string()),
        })
        .collect();
    ScenarioResult {
        spec: spec.clone(),
        replicates,
    }
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))
}

/// Run every replicate of a scenario on `workers` threads. Output does not
/// depend on `workers`.
pub fn run_scenario(spec: &ScenarioSpec, workers: usize) -> Result<ScenarioResult> {
    spec.validate()?;
    Ok(worker_pool(workers)?.install(|| execute_scenario(spec)))
}

/// Run several scenarios on one pool, in input order.
pub fn run_scenarios(specs: &[ScenarioSpec], workers: usize) -> Result<Vec<ScenarioResult>> {
    for s in specs {
        s.validate()?;
    }
    Ok(worker_pool(workers)?.install(|| specs.par_iter().map(execute_scenario).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean: f64,
    pub bias: f64,
    /// Mean over replicates of `(est − truth) / truth × 100`.
    pub percent_change: f64,
    /// `√MSE / mean(est)`.
    pub nrmse: f64,
}

pub fn metrics(estimates: &[f64], truth: f64) -> Result<Metrics> {
    if estimates.is_empty() {
        return Err(Error::domain("no estimates"));
    }
    if !truth.is_finite() {
        return Err(Error::domain("truth must be finite"));
    }
    if truth == 0.0 {
        return Err(Error::domain("percent change is undefined for a zero truth"));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::domain("NRMSE is undefined when the mean estimate is zero"));
    }
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
    let percent_change = estimates.iter().map(|e| (e - truth) / truth * 100.0).sum::<f64>() / n;
    Ok(Metrics {
        mean,
        bias: mean - truth,
        percent_change,
        nrmse: mse.sqrt() / mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioStatus {
    Ok,
    /// More than half of the replicates failed.
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandMetrics {
    pub r2_copula: Metrics,
    pub r2_wls: Metrics,
    pub r2_adj: Metrics,
    pub global_or: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub spec: ScenarioSpec,
    pub requested: usize,
    pub completed: usize,
    pub failed: usize,
    pub status: ScenarioStatus,
    /// `None` when no replicate succeeded or a metric is undefined.
    pub metrics: Option<EstimandMetrics>,
    pub fvs_rate: Option<f64>,
    pub rls_or_better_rate: Option<f64>,
    pub mean_censored_fraction: Option<f64>,
    pub clipped_intervals: usize,
    pub continuity_corrections: usize,
}

pub fn summarize(result: &ScenarioResult) -> ScenarioSummary {
    let ok: Vec<&ReplicateEstimates> = result.successes().collect();
    let failed = result.failures();
    let spec = &result.spec;
    let col = |f: fn(&ReplicateEstimates) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let metrics = (|| {
        Some(EstimandMetrics {
            r2_copula: metrics(&col(|r| r.r2_copula), spec.r2_true).ok()?,
            r2_wls: metrics(&col(|r| r.r2_wls), spec.r2_true).ok()?,
            r2_adj: metrics(&col(|r| r.r2_adj), spec.r2_true).ok()?,
            global_or: metrics(&col(|r| r.global_or), spec.theta_true).ok()?,
        })
    })();
    let rates = acceptance_rates_of(ok.iter().map(|r| r.verdict)).ok();
    let cens = col(|r| r.censored_fraction);
    ScenarioSummary {
        spec: spec.clone(),
        requested: result.replicates.len(),
        completed: ok.len(),
        failed,
        status: if 2 * failed > result.replicates.len() {
            ScenarioStatus::Warning
        } else {
            ScenarioStatus::Ok
        },
        metrics,
        fvs_rate: rates.map(|r| r.0),
        rls_or_better_rate: rates.map(|r| r.1),
        mean_censored_fraction: (!cens.is_empty()).then(|| cens.iter().sum::<f64>() / cens.len() as f64),
        clipped_intervals: ok.iter().map(|r| r.clipped).sum(),
        continuity_corrections: ok.iter().map(|r| r.continuity_corrected).sum(),
    }
}

/// Average of per-scenario metrics over the scenarios at one factor level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub factor: String,
    pub level: String,
    pub scenarios: usize,
    pub metrics: EstimandMetrics,
}

/// Verdict rates pooled over all replicates sharing `(r2_true, theta_true)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    pub r2_true: f64,
    pub theta_true: f64,
    pub replicates: usize,
    pub fvs_rate: f64,
    pub rls_or_better_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenarios: Vec<ScenarioSummary>,
    pub marginals: Vec<MarginalRow>,
    pub acceptance: Vec<AcceptanceRow>,
}

fn average(ms: &[EstimandMetrics]) -> EstimandMetrics {
    let n = ms.len() as f64;
    let avg = |f: fn(&EstimandMetrics) -> Metrics| {
        let mut m = Metrics {
            mean: 0.0,
            bias: 0.0,
            percent_change: 0.0,
            nrmse: 0.0,
        };
        for x in ms {
            let x = f(x);
            m.mean += x.mean / n;
            m.bias += x.bias / n;
            m.percent_change += x.percent_change / n;
            m.nrmse += x.nrmse / n;
        }
        m
    };
    EstimandMetrics {
        r2_copula: avg(|m| m.r2_copula),
        r2_wls: avg(|m| m.r2_wls),
        r2_adj: avg(|m| m.r2_adj),
        global_or: avg(|m| m.global_or),
    }
}

fn level(x: f64) -> String {
    format!("{x:?}")
}

/// Per-scenario summaries, factor marginals, and pooled acceptance rates.
///
/// Mixed trial sizes form their own stratum: they appear as a level of the
/// `trial_sizes` factor but are left out of the other factors' averages
/// whenever equal-size scenarios are present.
pub fn aggregate(results: &[ScenarioResult]) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(Error::domain("nothing to aggregate"));
    }
    let mut sorted: Vec<&ScenarioResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.spec.id);
    let scenarios: Vec<ScenarioSummary> = sorted.iter().map(|r| summarize(r)).collect();

    let is_mixed = |s: &ScenarioSummary| matches!(s.spec.trial_sizes, TrialSizes::Mixed);
    let any_equal = scenarios.iter().any(|s| !is_mixed(s));
    type Key = fn(&ScenarioSpec) -> String;
    let factors: [(&str, Key); 6] = [
        ("r2_true", |s| level(s.r2_true)),
        ("theta_true", |s| level(s.theta_true)),
        ("n_trials", |s| s.n_trials.to_string()),
        ("trial_sizes", |s| s.trial_sizes.label()),
        ("censor_rate", |s| level(s.censor_rate)),
        ("effects", |s| format!("({:?}, {:?})", s.alpha, s.beta)),
    ];
    let mut marginals = Vec::new();
    for (name, key) in factors {
        let mut groups: BTreeMap<String, Vec<EstimandMetrics>> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for s in &scenarios {
            if name != "trial_sizes" && any_equal && is_mixed(s) {
                continue;
            }
            let Some(m) = s.metrics else { continue };
            let k = key(&s.spec);
            if !groups.contains_key(&k) {
                order.push(k.clone());
            }
            groups.entry(k).or_default().push(m);
        }
        order.sort_by(|a, b| {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => x.total_cmp(&y),
                _ => a.cmp(b),
            }
        });
        for k in order {
            let ms = &groups[&k];
            marginals.push(MarginalRow {
                factor: name.to_string(),
                level: k,
                scenarios: ms.len(),
                metrics: average(ms),
            });
        }
    }

    let mut strata: BTreeMap<(u64, u64), Vec<VerdictClass>> = BTreeMap::new();
    for r in &sorted {
        let k = (r.spec.r2_true.to_bits(), r.spec.theta_true.to_bits());
        strata.entry(k).or_default().extend(r.successes().map(|e| e.verdict));
    }
    let mut acceptance = Vec::new();
    let mut keys: Vec<(u64, u64)> = strata.keys().copied().collect();
    keys.sort_by(|a, b| {
        f64::from_bits(a.0)
            .total_cmp(&f64::from_bits(b.0))
            .then(f64::from_bits(a.1).total_cmp(&f64::from_bits(b.1)))
    });
    for k in keys {
        let v = &strata[&k];
        if let Ok((fvs, rls)) = acceptance_rates_of(v.iter().copied()) {
            acceptance.push(AcceptanceRow {
                r2_true: f64::from_bits(k.0),
                theta_true: f64::from_bits(k.1),
                replicates: v.len(),
                fvs_rate: fvs,
                rls_or_better_rate: rls,
            });
        }
    }
    Ok(Aggregate {
        scenarios,
        marginals,
        acceptance,
    })
}
