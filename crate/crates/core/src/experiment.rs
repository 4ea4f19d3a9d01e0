//! Config-driven multi-seed runs and their artifacts.
//!
//! An output directory holds `config.toml`, `trace_seed<S>.csv` per seed,
//! `gap_table.csv`, `summary.json` and `timing.json`. Everything except
//! `timing.json` is byte-identical across reruns of the same config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::composite::{composite_residuals, validate_composite, CompositeValidation};
use crate::config::ExperimentConfig;
use crate::diagnostics::{
    fejer_tracker, fill_slopes, FejerReport, gap_and_bound, kkt_residual, seed_average, GapConstant, GapRow,
};
use crate::error::{Error, Result};
use crate::linop::Vector;
use crate::solver::{
    run_with, validate_hypotheses, Checkpoint, HypothesisReport, RunOptions, RunRecord, Schedules,
    Variant,
};
use crate::stochastic::{summability_certificate, NoiseModel, Regime, SummabilityReport};
use crate::zoo::ZooInstance;

pub const TRACE_HEADER: &str =
    "n,gamma_n,tau_n,primal_res,dual_res,fejer_phi,dist_x_oracle,dist_v_oracle,grad_gap_partial_sum";
pub const GAP_HEADER: &str = "N,gap,bound,sum_gamma,slope_window";

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunSettings {
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Run even when a hypothesis check fails.
    pub force: bool,
    pub seed_override: Option<u64>,
}

/// A config resolved against its problem, with all certificates.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub instance: ZooInstance,
    pub schedules: Schedules,
    pub noise: NoiseModel,
    pub variant: Variant,
    pub regime: Regime,
    pub checkpoints: Vec<usize>,
    pub hypotheses: HypothesisReport,
    /// `Err` carries the reason the noise condition fails.
    pub summability: std::result::Result<SummabilityReport, String>,
    pub composite: Option<CompositeValidation>,
}

impl Prepared {
    pub fn certified(&self) -> bool {
        self.hypotheses.passed()
            && self.summability.is_ok()
            && self.composite.as_ref().is_none_or(CompositeValidation::passed)
    }

    /// One line per failed check.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .hypotheses
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        if let Err(e) = &self.summability {
            out.push(format!("noise summability: {e}"));
        }
        if let Some(cv) = &self.composite {
            if !cv.passed() {
                out.push(format!(
                    "composite step sizes: blockwise {}, lifted {}",
                    if cv.blockwise.iter().all(|c| c.accepted()) { "accepted" } else { "rejected" },
                    if cv.lifted.passed() { "accepted" } else { "rejected" },
                ));
            }
        }
        out
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let instance = config.instance()?;
    let schedules = config.schedules(&instance)?;
    let noise = config.noise_model()?;
    let regime = config.regime()?;
    let horizon = config.run.horizon;
    let hypotheses = validate_hypotheses(&instance.spec, &schedules, horizon, regime)?;
    let summability = match summability_certificate(
        &noise,
        &schedules.gamma,
        horizon,
        regime,
        Some(instance.h.components().len()),
    ) {
        Ok(r) => Ok(r),
        Err(e @ Error::RegimeViolation(_)) => Err(e.to_string()),
        Err(e) => return Err(e),
    };
    let composite = match &instance.composite {
        Some(cp) => Some(validate_composite(cp, &schedules, horizon, regime)?),
        None => None,
    };
    Ok(Prepared {
        config: config.clone(),
        checkpoints: config.checkpoints(),
        variant: config.variant()?,
        instance,
        schedules,
        noise,
        regime,
        hypotheses,
        summability,
        composite,
    })
}

/// One row of a trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub gamma: f64,
    pub tau: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub fejer_phi: f64,
    pub dist_x: f64,
    pub dist_v: f64,
    pub grad_gap_partial_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: &'static str,
    pub error: Option<String>,
    pub steps: usize,
    pub dist_x: f64,
    pub dist_v: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    /// Per-block dual residuals (composite problems).
    pub block_dual_res: Option<Vec<f64>>,
    pub fejer_max_increase: f64,
    /// Checked only for certified deterministic runs.
    pub fejer_monotone: Option<bool>,
    pub grad_gap_total: f64,
    /// Increment of the gradient-gap partial sum over the last tenth of the
    /// run, relative to its total.
    pub grad_gap_last_decile: f64,
    pub gap_final: Option<f64>,
    pub gap_slope: Option<f64>,
    /// Every checkpoint has `gap ≤ bound` (deterministic runs).
    pub gap_within_bound: Option<bool>,
}

/// Everything one seed produced.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub summary: SeedSummary,
    pub rows: Vec<TraceRow>,
    /// Checkpoints mapped to base-space coordinates.
    pub checkpoints: Vec<Checkpoint>,
    /// `Σ γ_n² ‖r_n - ∇h(x_n)‖²` along the path.
    pub empirical_c0: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificates {
    pub passed: bool,
    pub forced: bool,
    pub checks: Vec<CheckSummary>,
    pub noise_summable: bool,
    pub noise_note: String,
    pub composite_discrepancy: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleSummary {
    pub gamma0: f64,
    pub tau0: f64,
    pub tau_cap: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub diverged_seeds: Vec<u64>,
    pub max_dist_x: f64,
    pub max_dist_v: f64,
    pub c0: f64,
    pub c_reference: f64,
    pub bound_final: Option<f64>,
    pub mean_gap_final: Option<f64>,
    pub se_gap_final: Option<f64>,
    /// Deterministic: every seed within the bound at every checkpoint.
    /// Stochastic: seed-mean gap ≤ bound + 2 standard errors at every checkpoint.
    pub gap_within_bound: Option<bool>,
    pub gap_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub problem: String,
    pub primal_dim: usize,
    pub dual_dim: usize,
    pub variant: String,
    pub regime: String,
    pub deterministic: bool,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub schedule: ScheduleSummary,
    pub certificates: Certificates,
    pub oracle_x: Vec<f64>,
    pub oracle_v: Vec<f64>,
    pub per_seed: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub runs: Vec<SeedRun>,
    pub gap_table: Vec<GapRow>,
}

impl ExperimentOutcome {
    pub fn diverged(&self) -> bool {
        !self.summary.aggregate.diverged_seeds.is_empty()
    }
}

/// Runs one seed of a prepared experiment without writing anything.
pub fn run_seed(p: &Prepared, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let inst = &p.instance;
    let spec = &inst.spec;
    let oracle = inst.oracle(p.noise.clone(), seed)?;
    let opts = RunOptions::new(p.config.run.horizon)
        .with_variant(p.variant)
        .with_checkpoints(p.checkpoints.clone());
    let stride = opts.stride();
    let bx_bar = spec.b.apply(&inst.x_bar);
    let mut partial = Vec::new();
    let mut sum = 0.0;
    let mut c0 = 0.0;
    let mut prev: Option<(Vector, f64)> = None;
    let result = run_with(spec, &p.schedules, &oracle, &inst.x0(), &inst.v0(), &opts, |s, gamma, _| {
        sum += (spec.b.apply(&s.x) - &bx_bar).norm_squared();
        if let Some((x_prev, g_prev)) = prev.take() {
            let err = &s.last_r - oracle.mean(&x_prev);
            c0 += g_prev * g_prev * spec.primal_geometry.norm_sq(&err);
        }
        prev = Some((s.x.clone(), gamma));
        if s.n % stride == 0 || s.n == opts.horizon {
            partial.push((s.n, sum));
        }
    });
    let (record, error): (RunRecord, Option<Error>) = match result {
        Ok(r) => (r, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    let deterministic = p.noise.is_deterministic();
    let assert_monotone = deterministic && p.certified() && error.is_none();
    // the weight of Φ is indefinite when τ is inadmissible (forced runs)
    let fejer = match fejer_tracker(
        &record.trace,
        (&inst.x_bar, &inst.v_bar),
        spec,
        Some(&p.hypotheses),
        assert_monotone,
    ) {
        Err(Error::StepSizeViolation(_)) if !p.certified() => FejerReport {
            phi: record.trace.iter().map(|t| (t.n, f64::NAN)).collect(),
            max_increase: f64::NAN,
            monotone: None,
        },
        other => other?,
    };
    let mut rows = Vec::with_capacity(record.trace.len());
    for (i, t) in record.trace.iter().enumerate() {
        let kkt = kkt_residual(&t.x, &t.v, spec)?;
        let grad = partial
            .iter()
            .find(|(n, _)| *n == t.n)
            .map_or(f64::NAN, |(_, s)| *s);
        rows.push(TraceRow {
            n: t.n,
            gamma: t.gamma,
            tau: t.tau,
            primal_res: kkt.primal,
            dual_res: kkt.dual,
            fejer_phi: fejer.phi[i].1,
            dist_x: spec.primal_geometry.norm_sq(&(&t.x - &inst.x_bar)).sqrt(),
            dist_v: spec.dual_geometry.norm_sq(&(&t.v - &inst.v_bar)).sqrt(),
            grad_gap_partial_sum: grad,
        });
    }
    let total = partial.last().map_or(0.0, |p| p.1);
    let horizon = record.final_state.n;
    let decile_start = horizon - horizon / 10;
    let before = partial
        .iter()
        .take_while(|(n, _)| *n < decile_start)
        .last()
        .map_or(0.0, |p| p.1);
    let last = rows.last().cloned();
    let fin = &record.final_state;
    let block_dual_res = match &inst.composite {
        Some(cp) => Some(
            composite_residuals(cp, &inst.flat_primal(&fin.x), &cp.split_duals(&fin.v))?.blocks,
        ),
        None => None,
    };
    let checkpoints = record
        .checkpoints
        .iter()
        .map(|c| Checkpoint {
            n: c.n,
            sum_gamma: c.sum_gamma,
            x_avg: inst.flat_primal(&c.x_avg),
            v_avg: c.v_avg.clone(),
        })
        .collect();
    let summary = SeedSummary {
        seed,
        status: if error.is_some() { "diverged" } else { "ok" },
        error: error.map(|e| e.to_string()),
        steps: horizon,
        dist_x: last.as_ref().map_or(f64::NAN, |r| r.dist_x),
        dist_v: last.as_ref().map_or(f64::NAN, |r| r.dist_v),
        primal_res: last.as_ref().map_or(f64::NAN, |r| r.primal_res),
        dual_res: last.as_ref().map_or(f64::NAN, |r| r.dual_res),
        block_dual_res,
        fejer_max_increase: fejer.max_increase,
        fejer_monotone: fejer.monotone,
        grad_gap_total: total,
        grad_gap_last_decile: if total > 0.0 { (total - before) / total } else { 0.0 },
        gap_final: None,
        gap_slope: None,
        gap_within_bound: None,
    };
    Ok(SeedRun {
        summary,
        rows,
        checkpoints,
        empirical_c0: c0,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `c_0` of the gap bound: exact for gaussian noise, seed-averaged path
/// estimate for minibatch noise.
fn noise_constant(p: &Prepared, runs: &[SeedRun]) -> f64 {
    match &p.noise {
        NoiseModel::Gaussian(s) => {
            let d = p.instance.h.dim() as f64;
            (0..p.config.run.horizon)
                .map(|n| p.schedules.gamma(n).powi(2) * d * s.variance(n))
                .sum()
        }
        NoiseModel::Minibatch(_) => {
            runs.iter().map(|r| r.empirical_c0).sum::<f64>() / runs.len().max(1) as f64
        }
    }
}

/// Runs every seed, writes the artifacts and returns the summary.
pub fn run_experiment(config: &ExperimentConfig, settings: &RunSettings) -> Result<ExperimentOutcome> {
    let mut config = config.clone();
    if let Some(s) = settings.seed_override {
        config.run.seeds = vec![s];
    }
    if let Some(out) = &settings.out {
        config.run.output = out.clone();
    }
    let p = prepare(&config)?;
    if !p.certified() && !settings.force {
        return Err(Error::StepSizeViolation(format!(
            "hypotheses rejected (use --force to run anyway):\n  {}",
            p.failures().join("\n  ")
        )));
    }
    let out_dir = config.run.output.clone();
    create_dir(&out_dir)?;
    write(&out_dir.join("config.toml"), &config.to_toml())?;

    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut runs: Vec<SeedRun> = pool.install(|| {
        config
            .run
            .seeds
            .par_iter()
            .map(|&seed| {
                let run = run_seed(&p, seed)?;
                write(&out_dir.join(format!("trace_seed{seed}.csv")), &trace_csv(&run.rows))?;
                Ok(run)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let inst = &p.instance;
    let c0 = noise_constant(&p, &runs);
    let gc = GapConstant::new(&inst.spec, &p.schedules, c0);
    let c_ref = match gc.c_of(&inst.spec, &inst.x0(), &inst.v0(), &inst.x_bar, &inst.v_bar) {
        Err(Error::StepSizeViolation(_)) if !p.certified() => f64::NAN,
        other => other?,
    };
    let x_flat = inst.flat_primal(&inst.x_bar);
    let mut tables = Vec::with_capacity(runs.len());
    for run in runs.iter_mut() {
        let rows = gap_and_bound(&run.checkpoints, &inst.saddle, (&x_flat, &inst.v_bar), c_ref)?;
        let s = &mut run.summary;
        s.gap_final = rows.last().and_then(|r| r.gap);
        s.gap_slope = rows.last().and_then(|r| r.slope_window);
        if p.noise.is_deterministic() {
            s.gap_within_bound = Some(rows.iter().all(|r| r.gap.is_some_and(|g| g <= r.bound)));
        }
        tables.push(rows);
    }
    let deterministic = p.noise.is_deterministic();
    let (gap_table, gap_ok, se_final) = if tables.len() == 1 {
        let ok = tables[0].iter().all(|r| r.gap.is_some_and(|g| g <= r.bound));
        (tables[0].clone(), ok, tables[0].last().map(|_| 0.0))
    } else {
        let avg = seed_average(&tables);
        let mut rows: Vec<GapRow> = avg
            .iter()
            .zip(&tables[0])
            .map(|(&(n, mean, _, bound), r)| GapRow {
                n,
                gap: Some(mean),
                bound,
                sum_gamma: r.sum_gamma,
                slope_window: None,
            })
            .collect();
        fill_slopes(&mut rows);
        let ok = if deterministic {
            runs.iter().all(|r| r.summary.gap_within_bound == Some(true))
        } else {
            avg.len() == tables[0].len() && avg.iter().all(|&(_, m, se, b)| m <= b + 2.0 * se)
        };
        (rows, ok, avg.last().map(|a| a.2))
    };
    write(&out_dir.join("gap_table.csv"), &gap_csv(&gap_table))?;

    let fold = |f: fn(&SeedSummary) -> f64| runs.iter().map(|r| f(&r.summary)).fold(0.0, f64::max);
    let summary = Summary {
        problem: inst.name.to_string(),
        primal_dim: inst.spec.primal_dim(),
        dual_dim: inst.spec.dual_dim(),
        variant: config.run.variant.clone(),
        regime: p.regime.as_str().to_string(),
        deterministic,
        horizon: config.run.horizon,
        seeds: config.run.seeds.clone(),
        schedule: ScheduleSummary {
            gamma0: p.schedules.gamma(0),
            tau0: p.schedules.tau(0),
            tau_cap: p.schedules.tau_cap,
            beta: p.schedules.beta,
        },
        certificates: Certificates {
            passed: p.certified(),
            forced: settings.force,
            checks: p
                .hypotheses
                .checks
                .iter()
                .map(|c| CheckSummary {
                    name: c.name.to_string(),
                    passed: c.passed,
                    detail: c.detail.clone(),
                })
                .collect(),
            noise_summable: p.summability.is_ok(),
            noise_note: match &p.summability {
                Ok(r) => r.note.clone(),
                Err(e) => e.clone(),
            },
            composite_discrepancy: p.composite.as_ref().map(|c| c.discrepancy),
        },
        oracle_x: inst.x_bar.iter().copied().collect(),
        oracle_v: inst.v_bar.iter().copied().collect(),
        aggregate: Aggregate {
            diverged_seeds: runs
                .iter()
                .filter(|r| r.summary.status != "ok")
                .map(|r| r.summary.seed)
                .collect(),
            max_dist_x: fold(|s| s.dist_x),
            max_dist_v: fold(|s| s.dist_v),
            c0,
            c_reference: c_ref,
            bound_final: gap_table.last().map(|r| r.bound),
            mean_gap_final: gap_table.last().and_then(|r| r.gap),
            se_gap_final: se_final,
            gap_within_bound: Some(gap_ok),
            gap_slope: gap_table.last().and_then(|r| r.slope_window),
        },
        per_seed: runs.iter().map(|r| r.summary.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write(&out_dir.join("summary.json"), &json)?;
    let timing = serde_json::json!({
        "total_seconds": started.elapsed().as_secs_f64(),
        "per_seed_seconds": runs.iter().map(|r| serde_json::json!({"seed": r.summary.seed, "seconds": r.seconds})).collect::<Vec<_>>(),
    });
    write(&out_dir.join("timing.json"), &(serde_json::to_string_pretty(&timing).expect("timing serializes") + "\n"))?;
    Ok(ExperimentOutcome {
        out_dir,
        summary,
        runs,
        gap_table,
    })
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 160);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            num(r.gamma),
            num(r.tau),
            num(r.primal_res),
            num(r.dual_res),
            num(r.fejer_phi),
            num(r.dist_x),
            num(r.dist_v),
            num(r.grad_gap_partial_sum)
        );
    }
    s
}

pub fn gap_csv(rows: &[GapRow]) -> String {
    let mut s = String::from(GAP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.n,
            opt(r.gap),
            num(r.bound),
            num(r.sum_gamma),
            opt(r.slope_window)
        );
    }
    s
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(problem: &str, horizon: usize, seeds: &str, noise: &str, out: &Path) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            "[problem]\nname = \"{problem}\"\n{noise}\n[run]\nhorizon = {horizon}\nseeds = {seeds}\noutput = {:?}\n",
            out.display().to_string()
        ))
        .unwrap()
    }

    #[test]
    fn deterministic_cls_reaches_the_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config("cls", 10_000, "[1]", "", dir.path());
        let out = run_experiment(&cfg, &RunSettings::default()).unwrap();
        assert!(!out.diverged());
        let s = &out.summary;
        assert!(s.aggregate.max_dist_x <= 1e-8, "{}", s.aggregate.max_dist_x);
        assert_eq!(s.per_seed[0].fejer_monotone, Some(true));
        assert_eq!(s.aggregate.gap_within_bound, Some(true));
        for f in ["config.toml", "trace_seed1.csv", "gap_table.csv", "summary.json", "timing.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let trace = std::fs::read_to_string(dir.path().join("trace_seed1.csv")).unwrap();
        assert_eq!(trace.lines().next(), Some(TRACE_HEADER));
        assert_eq!(trace.lines().count(), 10_002);
    }

    #[test]
    fn rejected_hypotheses_need_force() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config("lasso", 50, "[1]", "", dir.path());
        cfg.schedule.tau0 = Some(10.0);
        assert!(matches!(
            run_experiment(&cfg, &RunSettings::default()),
            Err(Error::StepSizeViolation(_))
        ));
        let forced = RunSettings {
            force: true,
            ..Default::default()
        };
        let out = run_experiment(&cfg, &forced).unwrap();
        assert!(!out.summary.certificates.passed);
        assert!(out.summary.certificates.forced);
    }

    #[test]
    fn seed_override_and_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            "lasso",
            200,
            "[1, 2, 3]",
            "[noise]\nkind = \"gaussian\"\nsigma0 = 1.0\nepsilon = 1.0",
            dir.path(),
        );
        let settings = RunSettings {
            jobs: Some(2),
            seed_override: Some(9),
            ..Default::default()
        };
        let out = run_experiment(&cfg, &settings).unwrap();
        assert_eq!(out.summary.seeds, vec![9]);
        assert!(dir.path().join("trace_seed9.csv").exists());
        assert!(!dir.path().join("trace_seed1.csv").exists());
    }
}
