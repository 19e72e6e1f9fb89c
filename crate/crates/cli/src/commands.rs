use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use surrogacy_core::analysis::{analyze_study, StudyAnalysis};
use surrogacy_core::data::{TrialDataset, TrialEffects};
use surrogacy_core::marginal::fit_cox_treatment;
use surrogacy_core::rng::StreamKey;
use surrogacy_core::sim::{aggregate, execute_scenario, expand_grid, Aggregate, EstimandMetrics, ScenarioResult};
use surrogacy_core::synth::synthesize_study;
use surrogacy_core::trial_level::WeightScheme;
use surrogacy_core::verdict::{Estimate, Verdict};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ipd::{ingest_ipd, trial_summary, write_ipd};
use crate::output::{ensure_dir, fmt_f64, fmt_opt, write_atomic, write_json, Table};

const Z975: f64 = 1.959_963_984_540_054;

fn config_error(e: surrogacy_core::Error) -> CliError {
    CliError::config(e.to_string())
}

#[derive(Debug, Serialize)]
struct GeneratedTrial<'a> {
    trial_id: &'a str,
    n: usize,
    events: usize,
    censored_fraction: f64,
    response_rate_control: f64,
    response_rate_treated: f64,
    true_effects: &'a TrialEffects,
}

#[derive(Debug, Serialize)]
struct GenerateManifest<'a> {
    seed: u64,
    rows: usize,
    realized_censored_fraction: f64,
    response_rate_control: f64,
    response_rate_treated: f64,
    trials: Vec<GeneratedTrial<'a>>,
    config: &'a RunConfig,
}

fn response_rate<'a>(patients: impl Iterator<Item = &'a surrogacy_core::data::PatientRecord>) -> f64 {
    let (n, r) = patients.fold((0usize, 0usize), |(n, r), p| (n + 1, r + usize::from(p.is_responder())));
    r as f64 / n as f64
}

/// Synthesize one study and write `ipd.csv` and `manifest.json`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Vec<TrialDataset>> {
    let seed = cfg.seed.unwrap_or(0);
    let g = &cfg.generate;
    if g.n_trials == 0 {
        return Err(CliError::config("generate.n_trials must be at least 1"));
    }
    let sizes = g.trial_sizes.sizes(g.n_trials);
    if sizes.len() != g.n_trials {
        return Err(CliError::config("generate.trial_sizes must not be empty"));
    }
    let study = synthesize_study(&g.population, &sizes, StreamKey::new(seed)).map_err(config_error)?;

    ensure_dir(out)?;
    write_atomic(&out.join("ipd.csv"), write_ipd(&study.trials).as_bytes())?;
    let mut resolved = cfg.clone();
    resolved.seed = Some(seed);
    let all = || study.trials.iter().flat_map(|t| t.patients.iter());
    let rows = all().count();
    let manifest = GenerateManifest {
        seed,
        rows,
        realized_censored_fraction: all().filter(|p| !p.event).count() as f64 / rows as f64,
        response_rate_control: response_rate(all().filter(|p| !p.is_treated())),
        response_rate_treated: response_rate(all().filter(|p| p.is_treated())),
        trials: study
            .trials
            .iter()
            .zip(&study.true_effects)
            .map(|(t, e)| GeneratedTrial {
                trial_id: &t.trial_id,
                n: t.n(),
                events: t.n_events(),
                censored_fraction: t.censored_fraction(),
                response_rate_control: response_rate(t.arm(false)),
                response_rate_treated: response_rate(t.arm(true)),
                true_effects: e,
            })
            .collect(),
        config: &resolved,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(study.trials)
}

#[derive(Debug, Serialize)]
struct Interval3 {
    est: f64,
    lo: f64,
    hi: f64,
}

impl From<Estimate> for Interval3 {
    fn from(e: Estimate) -> Self {
        let (lo, hi) = e.interval.unwrap_or((f64::NAN, f64::NAN));
        Interval3 { est: e.est, lo, hi }
    }
}

#[derive(Debug, Serialize)]
struct WlsLine {
    slope: f64,
    intercept: f64,
    weights: WeightScheme,
}

#[derive(Debug, Serialize)]
struct EstimatesReport<'a> {
    theta: Interval3,
    r2_copula: Interval3,
    r2_wls: Interval3,
    r2_adj: Interval3,
    verdict: &'a Verdict,
    wls_line: WlsLine,
    flags: &'a [String],
    config: &'a RunConfig,
}

fn ci(est: f64, se: f64) -> (f64, f64) {
    ((est - Z975 * se).exp(), (est + Z975 * se).exp())
}

/// Cox hazard ratio and interval within one surrogate stratum.
fn subgroup_hr(t: &TrialDataset, responders: bool, cfg: &RunConfig) -> [Option<f64>; 3] {
    let patients: Vec<_> = t.patients.iter().filter(|p| p.is_responder() == responders).cloned().collect();
    let fit = TrialDataset::new(t.trial_id.clone(), patients)
        .ok()
        .filter(|d| d.has_both_arms())
        .and_then(|d| fit_cox_treatment(&d, cfg.analysis.ties).ok());
    match fit {
        Some(f) => {
            let (lo, hi) = ci(f.beta_hat, f.se_beta);
            [Some(f.beta_hat.exp()), Some(lo), Some(hi)]
        }
        None => [None; 3],
    }
}

fn effects_table(trials: &[TrialDataset], a: &StudyAnalysis, cfg: &RunConfig) -> Table {
    let mut t = Table::new(&[
        "trial_id",
        "n",
        "events",
        "log_or",
        "se_log_or",
        "or",
        "or_lo",
        "or_hi",
        "log_hr",
        "se_log_hr",
        "hr",
        "hr_lo",
        "hr_hi",
        "hr_responders",
        "hr_responders_lo",
        "hr_responders_hi",
        "hr_nonresponders",
        "hr_nonresponders_lo",
        "hr_nonresponders_hi",
        "joint_alpha",
        "joint_beta",
        "joint_se_alpha",
        "joint_se_beta",
    ]);
    for ((d, m), j) in trials.iter().zip(&a.marginal).zip(&a.joint.per_trial) {
        let (or_lo, or_hi) = ci(m.logistic.alpha_hat, m.logistic.se_alpha);
        let (hr_lo, hr_hi) = ci(m.cox.beta_hat, m.cox.se_beta);
        let r = subgroup_hr(d, true, cfg);
        let nr = subgroup_hr(d, false, cfg);
        t.row([
            m.trial_id.clone(),
            m.n.to_string(),
            m.cox.n_events.to_string(),
            fmt_f64(m.logistic.alpha_hat),
            fmt_f64(m.logistic.se_alpha),
            fmt_f64(m.logistic.alpha_hat.exp()),
            fmt_f64(or_lo),
            fmt_f64(or_hi),
            fmt_f64(m.cox.beta_hat),
            fmt_f64(m.cox.se_beta),
            fmt_f64(m.cox.beta_hat.exp()),
            fmt_f64(hr_lo),
            fmt_f64(hr_hi),
            fmt_opt(r[0]),
            fmt_opt(r[1]),
            fmt_opt(r[2]),
            fmt_opt(nr[0]),
            fmt_opt(nr[1]),
            fmt_opt(nr[2]),
            fmt_f64(j.alpha),
            fmt_f64(j.beta),
            fmt_opt(j.se_alpha),
            fmt_opt(j.se_beta),
        ]);
    }
    t
}

fn scatter_table(a: &StudyAnalysis) -> Result<Table> {
    let tl = &a.trial_level;
    let ns: Vec<usize> = a.marginal.iter().map(|m| m.n).collect();
    let w = tl.weights_used.weights(&a.stage_two_effects, &ns)?;
    let mut t = Table::new(&["trial_id", "n", "weight", "log_or", "log_hr", "fitted_log_hr", "slope", "intercept"]);
    for ((m, e), w) in a.marginal.iter().zip(&a.stage_two_effects).zip(w) {
        t.row([
            m.trial_id.clone(),
            m.n.to_string(),
            fmt_f64(w),
            fmt_f64(e.alpha),
            fmt_f64(e.beta),
            fmt_f64(tl.intercept + tl.slope * e.alpha),
            fmt_f64(tl.slope),
            fmt_f64(tl.intercept),
        ]);
    }
    Ok(t)
}

/// Analyze trials with the fit-mode settings.
pub fn fit_trials(trials: &[TrialDataset], cfg: &RunConfig) -> Result<StudyAnalysis> {
    let mut analysis = cfg.analysis;
    analysis.trial_level.ci = cfg.fit.ci;
    Ok(analyze_study(trials, &analysis, StreamKey::new(cfg.seed.unwrap_or(0)))?)
}

/// Fit an IPD file; writes `estimates.json`, `effects.csv`, `scatter.csv`.
pub fn cmd_fit(cfg: &RunConfig, ipd: &Path, out: &Path) -> Result<StudyAnalysis> {
    let trials = ingest_ipd(ipd)?;
    for t in &trials {
        println!("{}", trial_summary(t));
    }
    let a = fit_trials(&trials, cfg)?;

    ensure_dir(out)?;
    let mut resolved = cfg.clone();
    resolved.seed = Some(cfg.seed.unwrap_or(0));
    let tl = &a.trial_level;
    let r2 = |r: &surrogacy_core::trial_level::R2Estimate| Interval3 {
        est: r.est,
        lo: r.interval.lower,
        hi: r.interval.upper,
    };
    let report = EstimatesReport {
        theta: a.estimates.global_or.into(),
        r2_copula: r2(&tl.r2_copula),
        r2_wls: r2(&tl.r2_wls),
        r2_adj: r2(&tl.r2_adj),
        verdict: &a.verdict,
        wls_line: WlsLine {
            slope: tl.slope,
            intercept: tl.intercept,
            weights: tl.weights_used,
        },
        flags: &a.estimates.flags,
        config: &resolved,
    };
    write_json(&out.join("estimates.json"), &report)?;
    effects_table(&trials, &a, cfg).write(&out.join("effects.csv"))?;
    scatter_table(&a)?.write(&out.join("scatter.csv"))?;
    Ok(a)
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    version: &'static str,
    scenarios: usize,
    replicates_requested: usize,
    replicates_failed: usize,
    scenarios_with_warnings: usize,
    resumed_scenarios: usize,
    wall_time_seconds: f64,
    config: &'a RunConfig,
}

pub struct SimulateOutcome {
    pub aggregate: Aggregate,
    pub results: Vec<ScenarioResult>,
    pub resumed: usize,
}

fn scenario_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("{id:016x}.json"))
}

/// Run the configured grid; completed scenarios found in `out/scenarios`
/// with a matching specification are reused.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, threads: usize) -> Result<SimulateOutcome> {
    let start = Instant::now();
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::config("simulate requires a seed (config key \"seed\" or --seed)"))?;
    let specs = expand_grid(&cfg.simulate.factors, &cfg.run_settings(seed)).map_err(config_error)?;
    let dir = out.join("scenarios");
    ensure_dir(&dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<(ScenarioResult, bool)> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let path = scenario_path(&dir, spec.id);
                let cached = std::fs::read_to_string(&path)
                    .ok()
                    .and_then(|s| serde_json::from_str::<ScenarioResult>(&s).ok())
                    .filter(|r| &r.spec == spec);
                match cached {
                    Some(r) => Ok((r, true)),
                    None => {
                        let r = execute_scenario(spec);
                        write_json(&path, &r)?;
                        Ok((r, false))
                    }
                }
            })
            .collect::<Result<_>>()
    })?;
    let resumed = runs.iter().filter(|r| r.1).count();
    let results: Vec<ScenarioResult> = runs.into_iter().map(|r| r.0).collect();
    let aggregate = write_reports(out, &results)?;

    let mut resolved = cfg.clone();
    resolved.seed = Some(seed);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        scenarios: results.len(),
        replicates_requested: results.iter().map(|r| r.replicates.len()).sum(),
        replicates_failed: results.iter().map(|r| r.failures()).sum(),
        scenarios_with_warnings: aggregate
            .scenarios
            .iter()
            .filter(|s| s.status != surrogacy_core::sim::ScenarioStatus::Ok)
            .count(),
        resumed_scenarios: resumed,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: &resolved,
    };
    write_json(&out.join("run_manifest.json"), &manifest)?;
    Ok(SimulateOutcome {
        aggregate,
        results,
        resumed,
    })
}

/// Load every per-scenario result file of a run directory, sorted by id.
pub fn load_scenarios(run: &Path) -> Result<Vec<ScenarioResult>> {
    let dir = run.join("scenarios");
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::data(format!("cannot list {}: {e}", dir.display())))?;
    let mut results = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::data(e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let r: ScenarioResult = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        results.push(r);
    }
    if results.is_empty() {
        return Err(CliError::data(format!("no scenario results in {}", dir.display())));
    }
    results.sort_by_key(|r| r.spec.id);
    Ok(results)
}

/// Rebuild the report tables of a run directory from its scenario files.
pub fn cmd_report(run: &Path) -> Result<Aggregate> {
    let results = load_scenarios(run)?;
    let agg = write_reports(run, &results)?;
    println!("r2_true,theta_true,replicates,fvs_rate,rls_or_better_rate");
    for a in &agg.acceptance {
        println!(
            "{},{},{},{:.1},{:.1}",
            a.r2_true, a.theta_true, a.replicates, a.fvs_rate, a.rls_or_better_rate
        );
    }
    Ok(agg)
}

const ESTIMANDS: [&str; 4] = ["r2_copula", "r2_wls", "r2_adj", "global_or"];
const METRIC_FIELDS: [&str; 4] = ["mean", "bias", "percent_change", "nrmse"];

fn metric_header() -> Vec<String> {
    ESTIMANDS
        .iter()
        .flat_map(|e| METRIC_FIELDS.iter().map(move |m| format!("{e}_{m}")))
        .collect()
}

fn metric_cells(m: Option<&EstimandMetrics>) -> Vec<String> {
    match m {
        Some(m) => [m.r2_copula, m.r2_wls, m.r2_adj, m.global_or]
            .iter()
            .flat_map(|x| [x.mean, x.bias, x.percent_change, x.nrmse].map(fmt_f64))
            .collect(),
        None => vec![String::new(); ESTIMANDS.len() * METRIC_FIELDS.len()],
    }
}

/// Write `scenario_metrics.csv`, `marginal_metrics.csv`,
/// `acceptance_rates.csv`, `scatter_by_truth.csv` and
/// `replicate_failures.csv`.
pub fn write_reports(out: &Path, results: &[ScenarioResult]) -> Result<Aggregate> {
    let agg = aggregate(results)?;

    let mut header: Vec<String> = [
        "scenario_id",
        "r2_true",
        "theta_true",
        "n_trials",
        "trial_sizes",
        "censor_rate",
        "alpha",
        "beta",
        "t_assess",
        "requested",
        "completed",
        "failed",
        "status",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(metric_header());
    header.extend(
        ["fvs_rate", "rls_or_better_rate", "mean_censored_fraction", "clipped_intervals", "continuity_corrections"]
            .iter()
            .map(|s| s.to_string()),
    );
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&hdr);
    for s in &agg.scenarios {
        let p = &s.spec;
        let mut row = vec![
            format!("{:016x}", p.id),
            fmt_f64(p.r2_true),
            fmt_f64(p.theta_true),
            p.n_trials.to_string(),
            p.trial_sizes.label(),
            fmt_f64(p.censor_rate),
            fmt_f64(p.alpha),
            fmt_f64(p.beta),
            fmt_f64(p.t_assess),
            s.requested.to_string(),
            s.completed.to_string(),
            s.failed.to_string(),
            format!("{:?}", s.status).to_lowercase(),
        ];
        row.extend(metric_cells(s.metrics.as_ref()));
        row.extend([
            fmt_opt(s.fvs_rate),
            fmt_opt(s.rls_or_better_rate),
            fmt_opt(s.mean_censored_fraction),
            s.clipped_intervals.to_string(),
            s.continuity_corrections.to_string(),
        ]);
        t.row(row);
    }
    t.write(&out.join("scenario_metrics.csv"))?;

    let mut header = vec!["factor".to_string(), "level".to_string(), "scenarios".to_string()];
    header.extend(metric_header());
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&hdr);
    for m in &agg.marginals {
        let mut row = vec![m.factor.clone(), m.level.clone(), m.scenarios.to_string()];
        row.extend(metric_cells(Some(&m.metrics)));
        t.row(row);
    }
    t.write(&out.join("marginal_metrics.csv"))?;

    let mut t = Table::new(&["r2_true", "theta_true", "replicates", "fvs_rate", "rls_or_better_rate"]);
    for a in &agg.acceptance {
        t.row([
            fmt_f64(a.r2_true),
            fmt_f64(a.theta_true),
            a.replicates.to_string(),
            fmt_f64(a.fvs_rate),
            fmt_f64(a.rls_or_better_rate),
        ]);
    }
    t.write(&out.join("acceptance_rates.csv"))?;

    let mut sorted: Vec<&ScenarioResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.spec.id);
    let mut t = Table::new(&[
        "scenario_id",
        "r2_true",
        "theta_true",
        "replicate",
        "r2_copula",
        "r2_wls",
        "r2_adj",
        "global_or",
        "global_or_lo",
        "global_or_hi",
        "verdict",
    ]);
    let mut f = Table::new(&["scenario_id", "replicate", "error"]);
    for r in sorted {
        for rep in &r.replicates {
            match &rep.outcome {
                Ok(e) => t.row([
                    format!("{:016x}", r.spec.id),
                    fmt_f64(r.spec.r2_true),
                    fmt_f64(r.spec.theta_true),
                    rep.replicate.to_string(),
                    fmt_f64(e.r2_copula),
                    fmt_f64(e.r2_wls),
                    fmt_f64(e.r2_adj),
                    fmt_f64(e.global_or),
                    fmt_f64(e.global_or_ci.0),
                    fmt_f64(e.global_or_ci.1),
                    e.verdict.to_string(),
                ]),
                Err(msg) => f.row([format!("{:016x}", r.spec.id), rep.replicate.to_string(), msg.clone()]),
            }
        }
    }
    t.write(&out.join("scatter_by_truth.csv"))?;
    f.write(&out.join("replicate_failures.csv"))?;
    Ok(agg)
}
