//! Acceptance suite: ten criteria, run in sequence so that the wall-clock
//! limits are measured without competing tests. Each criterion prints one
//! `PASS`/`FAIL` line; the test fails if any criterion does.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use papc::composite::{composite_residuals, lift_flat_equivalence, run_flat, CompositeState};
use papc::config::ExperimentConfig;
use papc::diagnostics::{fejer_tracker, gap_and_bound, kkt_residual, rate_fit, seed_average, GapConstant};
use papc::experiment::{run_experiment, RunSettings};
use papc::linop::{
    adjoint_consistency_check, validate_tau, Geometry, LinearMap, LinearOperator, Matrix, OrthoProjector,
    SpdOperator, TauStatus, Vector,
};
use papc::monotone::{
    conjugate_prox_via_moreau, firm_nonexpansiveness_violation, inverse_resolvent, metric_inverse_resolvent,
    MonotoneBlock, ProxFunction,
};
use papc::solver::{run, validate_hypotheses, Checkpoint, RunOptions, Variant};
use papc::stochastic::{NoiseModel, Regime, StochasticOracle, VarianceSchedule};
use papc::zoo::{self, ZooInstance, ZooParams};
use rand::RngExt;
use rayon::prelude::*;

const CALCULUS_TOL: f64 = 1e-10;
const PROJECTOR_TOL: f64 = 1e-12;
const SAMPLED_PAIRS: usize = 200;
const CALCULUS_LIMIT: Duration = Duration::from_secs(10);

const TAU_INSTANCES: usize = 20;
const TAU_MAX_DIM: usize = 20;
const TAU_MARGIN: f64 = 1e-6;
const TAU_LIMIT: Duration = Duration::from_secs(5);

const DETERMINISTIC_HORIZON: usize = 10_000;
const DIST_TOL: f64 = 1e-8;
const KKT_TOL: f64 = 1e-7;
const CONVERGENCE_LIMIT: Duration = Duration::from_secs(30);

const FEJER_SLACK: f64 = 1e-10;
const DECILE_TOL: f64 = 1e-10;

const AS_SEEDS: u64 = 20;
const AS_HORIZON: usize = 100_000;
const AS_TOL: f64 = 1e-2;
const AS_LIMIT: Duration = Duration::from_secs(300);

const GAP_SEEDS: u64 = 20;
const SLOPE_WINDOW: (f64, f64) = (1e2, 1e4);
const SLOPE_MAX: f64 = -0.9;

const LIFT_TOL: f64 = 1e-12;
const LIFT_STEPS: usize = 100;
const LIFT_SEEDS: u64 = 3;
const BLOCK_RES_TOL: f64 = 1e-6;
const COMPOSITE_HORIZON: usize = 20_000;

const FD_POINTS: usize = 10;
const FD_TOL: f64 = 1e-6;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn instance(name: &str) -> ZooInstance {
    zoo::build(name, &ZooParams::default()).unwrap()
}

fn deterministic_run(inst: &ZooInstance, horizon: usize, checkpoints: Vec<usize>) -> papc::solver::RunRecord {
    let sched = inst.default_schedules().unwrap();
    let oracle = StochasticOracle::deterministic(inst.spec.b.clone());
    let opts = RunOptions::new(horizon).with_checkpoints(checkpoints);
    *Box::new(run(&inst.spec, &sched, &oracle, &inst.x0(), &inst.v0(), &opts).unwrap())
}

// 1 ------------------------------------------------------------------------

fn operator_calculus() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let n = 1 + seed as usize % 6;

        // projectors
        let k = r.random_range(1..=n);
        let q = gauss_matrix(&mut r, n, k).qr().q();
        let projectors = [
            OrthoProjector::full(n),
            OrthoProjector::from_matrix(&q * q.transpose()).unwrap(),
            OrthoProjector::from_basis(q).unwrap(),
            OrthoProjector::averaging(vec![0.2, 0.3, 0.5], n).unwrap(),
        ];
        for p in &projectors {
            let g = p.geometry();
            for _ in 0..100 {
                let x = gauss(&mut r, p.dim());
                let y = gauss(&mut r, p.dim());
                let px = p.apply(&x);
                let idem = (p.apply(&px) - &px).amax() / (1.0 + x.amax());
                let adj = (g.inner(&px, &y) - g.inner(&x, &p.apply(&y))).abs() / (1.0 + x.norm() * y.norm());
                ensure(idem.max(adj) <= PROJECTOR_TOL, || format!("projector {p:?}: {idem:e} / {adj:e}"))?;
            }
        }

        // adjoints
        let maps = [
            LinearMap::dense(gauss_matrix(&mut r, n + 2, n)),
            LinearMap::forward_difference(n + 1).unwrap(),
            LinearMap::block_diagonal(vec![LinearMap::identity(n), LinearMap::diagonal(gauss(&mut r, n).as_slice())]).unwrap(),
        ];
        for m in &maps {
            ensure(adjoint_consistency_check(m, 100, rng(seed)).unwrap(), || "adjoint mismatch".into())?;
        }

        // resolvents and proxes
        let samples = pairs(&mut r, n, SAMPLED_PAIRS, 3.0);
        let fs = random_functions(&mut r, n);
        let g = &gauss_matrix(&mut r, n, n);
        let s = &gauss_matrix(&mut r, n, n);
        let mut blocks: Vec<MonotoneBlock> = fs.iter().cloned().map(MonotoneBlock::Subdifferential).collect();
        blocks.push(MonotoneBlock::linear(g * g.transpose() * 0.3 + (s - s.transpose())).unwrap());
        let e = Geometry::Euclidean;
        for lambda in [0.1, 1.0, 10.0] {
            for f in &fs {
                worst = worst.max(firm_nonexpansiveness_violation(|x| f.prox(lambda, x), &samples, &e));
                // Moreau identity
                for (x, _) in samples.iter().take(20) {
                    let back = conjugate_prox_via_moreau(f, lambda, x).unwrap() + f.prox(1.0 / lambda, &(x / lambda)) * lambda;
                    worst = worst.max((back - x).amax() / (1.0 + x.amax()));
                }
            }
            for b in &blocks {
                worst = worst.max(firm_nonexpansiveness_violation(
                    |x| papc::monotone::resolvent(b, lambda, x).unwrap(), &samples, &e));
                worst = worst.max(firm_nonexpansiveness_violation(
                    |x| inverse_resolvent(b, lambda, x).unwrap(), &samples, &e));
            }
        }
        // dual resolvent in a per-coordinate metric, firmly nonexpansive for ⟨·, U^{-1}·⟩
        let d = Vector::from_fn(n, |_, _| r.random_range(0.3..3.0));
        let metric = SpdOperator::diagonal(d.clone()).unwrap();
        let geom = Geometry::Weighted(d.map(|t| 1.0 / t));
        for f in fs.iter().filter(|f| !matches!(f, ProxFunction::LeastSquares { .. })) {
            let b = MonotoneBlock::Subdifferential(f.clone());
            worst = worst.max(firm_nonexpansiveness_violation(
                |x| metric_inverse_resolvent(&b, 0.8, &metric, x).unwrap(), &samples, &geom));
        }
        ensure(worst <= CALCULUS_TOL, || format!("seed {seed}: worst violation {worst:e}"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, CALCULUS_LIMIT)?;
    Ok(format!("worst violation {worst:.1e} in {elapsed:.2?}"))
}

// 2 ------------------------------------------------------------------------

fn tau_gate() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let (mut accepted, mut rejected) = (0, 0);
    for i in 0..TAU_INSTANCES {
        let n = r.random_range(1..=TAU_MAX_DIM);
        let k = r.random_range(1..=TAU_MAX_DIM);
        let u = match i % 3 {
            0 => Matrix::identity(k, k) * r.random_range(0.2..4.0),
            1 => Matrix::from_diagonal(&Vector::from_fn(k, |_, _| r.random_range(0.2..4.0))),
            _ => random_spd(&mut r, k),
        };
        let metric = match i % 3 {
            0 => SpdOperator::scalar(k, u[(0, 0)]).unwrap(),
            1 => SpdOperator::diagonal(u.diagonal()).unwrap(),
            _ => SpdOperator::dense(u.clone()).unwrap(),
        };
        let l = gauss_matrix(&mut r, k, n);
        let dim_v = r.random_range(1..=n);
        let q = gauss_matrix(&mut r, n, dim_v).qr().q();
        let p = &q * q.transpose();
        let exact = dense_lambda_max(&u, &l, &p);
        let tau = r.random_range(0.5..1.5) / exact;
        let expect_accept = tau * exact < 1.0 - TAU_MARGIN;
        let cert = validate_tau(&metric, &LinearMap::dense(l), &OrthoProjector::from_basis(q).unwrap(), tau, TAU_MARGIN).unwrap();
        let agree = match cert.status {
            TauStatus::Accepted => expect_accept,
            TauStatus::Rejected => !expect_accept,
            TauStatus::Indeterminate => false,
        };
        ensure(agree, || format!("instance {i}: {:?} but τλ = {}", cert.status, tau * exact))?;
        if expect_accept {
            accepted += 1
        } else {
            rejected += 1
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, TAU_LIMIT)?;
    ensure(accepted > 0 && rejected > 0, || "instances do not exercise both verdicts".into())?;
    Ok(format!("{accepted} accepted, {rejected} rejected, all agree, {elapsed:.2?}"))
}

// 3 ------------------------------------------------------------------------

fn deterministic_convergence() -> Outcome {
    let start = Instant::now();
    let mut detail = Vec::new();
    for name in ["cls", "lasso"] {
        let inst = instance(name);
        let sched = inst.default_schedules().unwrap();
        ensure((sched.gamma(0) - 0.9 * inst.spec.beta()).abs() <= 1e-15, || "γ is not 0.9β".into())?;
        let report = validate_hypotheses(&inst.spec, &sched, DETERMINISTIC_HORIZON, Regime::AlmostSure).unwrap();
        ensure(report.passed(), || format!("{name}: hypotheses rejected"))?;
        let rec = deterministic_run(&inst, DETERMINISTIC_HORIZON, Vec::new());
        let s = &rec.final_state;
        let dist = inst.spec.primal_geometry.norm(&(&s.x - &inst.x_bar));
        let kkt = kkt_residual(&s.x, &s.v, &inst.spec).unwrap().max();
        ensure(dist <= DIST_TOL && kkt <= KKT_TOL, || format!("{name}: dist {dist:e}, kkt {kkt:e}"))?;
        detail.push(format!("{name} dist {dist:.1e} kkt {kkt:.1e}"));
    }
    let elapsed = start.elapsed();
    within(elapsed, CONVERGENCE_LIMIT)?;
    Ok(format!("{} in {elapsed:.2?}", detail.join(", ")))
}

// 4 ------------------------------------------------------------------------

fn fejer_monotonicity() -> Outcome {
    let mut detail = Vec::new();
    for name in zoo::names() {
        let inst = instance(name);
        let sched = inst.default_schedules().unwrap();
        let report = validate_hypotheses(&inst.spec, &sched, DETERMINISTIC_HORIZON, Regime::AlmostSure).unwrap();
        let rec = deterministic_run(&inst, DETERMINISTIC_HORIZON, Vec::new());
        ensure(rec.stride == 1 && rec.trace.len() == DETERMINISTIC_HORIZON + 1, || "trace is strided".into())?;
        let fejer = fejer_tracker(&rec.trace, (&inst.x_bar, &inst.v_bar), &inst.spec, Some(&report), true).unwrap();
        let phi0 = fejer.phi[0].1;
        let slack = FEJER_SLACK * (1.0 + phi0);
        let worst = fejer.phi.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max);
        ensure(worst <= slack && fejer.monotone == Some(true), || format!("{name}: Φ rises by {worst:e}"))?;
        detail.push(format!("{name} {:.1e}", worst / (1.0 + phi0)));
    }
    Ok(format!("largest relative step in Φ: {}", detail.join(", ")))
}

// 5 ------------------------------------------------------------------------

fn gradient_gap_summability() -> Outcome {
    let mut detail = Vec::new();
    for name in zoo::names() {
        let inst = instance(name);
        let rec = deterministic_run(&inst, DETERMINISTIC_HORIZON, Vec::new());
        let b = &inst.spec.b;
        let bx = b.apply(&inst.x_bar);
        let terms: Vec<f64> = rec.trace.iter().map(|t| (b.apply(&t.x) - &bx).norm_squared()).collect();
        let total: f64 = terms.iter().sum();
        let tail: f64 = terms[DETERMINISTIC_HORIZON - DETERMINISTIC_HORIZON / 10..].iter().sum();
        let ratio = if total > 0.0 { tail / total } else { 0.0 };
        ensure(ratio <= DECILE_TOL, || format!("{name}: last decile holds {ratio:e} of the sum"))?;
        detail.push(format!("{name} {ratio:.1e}"));
    }
    Ok(format!("last-decile share: {}", detail.join(", ")))
}

// 6 ------------------------------------------------------------------------

fn almost_sure_proxy() -> Outcome {
    let start = Instant::now();
    let inst = instance("lasso");
    let sched = inst.default_schedules().unwrap();
    let noise = NoiseModel::Gaussian(VarianceSchedule::Polynomial { sigma0_sq: 1.0, epsilon: 1.0 });
    let opts = RunOptions { stride: Some(AS_HORIZON), ..RunOptions::new(AS_HORIZON) };
    let dists: Vec<f64> = (0..AS_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let oracle = inst.oracle(noise.clone(), seed).unwrap();
            let rec = run(&inst.spec, &sched, &oracle, &inst.x0(), &inst.v0(), &opts).unwrap();
            (&rec.final_state.x - &inst.x_bar).norm()
        })
        .collect();
    let worst = dists.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    ensure(worst <= AS_TOL, || format!("worst seed ends at distance {worst:e}"))?;
    within(elapsed, AS_LIMIT)?;
    Ok(format!("{AS_SEEDS} seeds, worst final distance {worst:.2e}, {elapsed:.2?}"))
}

// 7 ------------------------------------------------------------------------

fn flat_checkpoints(inst: &ZooInstance, cps: &[Checkpoint]) -> Vec<Checkpoint> {
    cps.iter()
        .map(|c| Checkpoint { x_avg: inst.flat_primal(&c.x_avg), ..c.clone() })
        .collect()
}

fn ergodic_gap_bound() -> Outcome {
    let checkpoints = papc::solver::log_checkpoints(DETERMINISTIC_HORIZON, 20);
    let mut detail = Vec::new();
    for name in zoo::names() {
        let inst = instance(name);
        let sched = inst.default_schedules().unwrap();
        let rec = deterministic_run(&inst, DETERMINISTIC_HORIZON, checkpoints.clone());
        let gc = GapConstant::new(&inst.spec, &sched, 0.0);
        let c = gc.c_of(&inst.spec, &inst.x0(), &inst.v0(), &inst.x_bar, &inst.v_bar).unwrap();
        let x_flat = inst.flat_primal(&inst.x_bar);
        let rows = gap_and_bound(&flat_checkpoints(&inst, &rec.checkpoints), &inst.saddle, (&x_flat, &inst.v_bar), c).unwrap();
        for row in &rows {
            let gap = row.gap.ok_or_else(|| format!("{name}: infinite gap at N={}", row.n))?;
            ensure(gap <= row.bound, || format!("{name} N={}: gap {gap:e} > bound {:e}", row.n, row.bound))?;
        }
        let series: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.gap.map(|g| (r.n as f64, g))).collect();
        let slope = rate_fit(&series, SLOPE_WINDOW).map_err(|e| format!("{name}: {e}"))?;
        ensure(slope <= SLOPE_MAX, || format!("{name}: slope {slope}"))?;
        detail.push(format!("{name} slope {slope:.2}"));
    }

    // stochastic: seed-mean gap against the bound with c0 = Σ γ_n² d σ_n²
    let inst = instance("lasso");
    let sched = inst.default_schedules().unwrap();
    let schedule = VarianceSchedule::Polynomial { sigma0_sq: 1.0, epsilon: 1.0 };
    let d = inst.h.dim() as f64;
    let c0: f64 = (0..DETERMINISTIC_HORIZON).map(|n| sched.gamma(n).powi(2) * d * schedule.variance(n)).sum();
    let c = GapConstant::new(&inst.spec, &sched, c0)
        .c_of(&inst.spec, &inst.x0(), &inst.v0(), &inst.x_bar, &inst.v_bar)
        .unwrap();
    let opts = RunOptions { stride: Some(DETERMINISTIC_HORIZON), ..RunOptions::new(DETERMINISTIC_HORIZON) }
        .with_checkpoints(checkpoints);
    let tables: Vec<_> = (0..GAP_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let oracle = inst.oracle(NoiseModel::Gaussian(schedule.clone()), seed).unwrap();
            let rec = run(&inst.spec, &sched, &oracle, &inst.x0(), &inst.v0(), &opts).unwrap();
            gap_and_bound(&rec.checkpoints, &inst.saddle, (&inst.x_bar, &inst.v_bar), c).unwrap()
        })
        .collect();
    let avg = seed_average(&tables);
    ensure(avg.len() == tables[0].len(), || "infinite gaps in a stochastic run".into())?;
    let mut tightest = f64::INFINITY;
    for &(n, mean, se, bound) in &avg {
        ensure(mean <= bound + 2.0 * se, || format!("stochastic N={n}: mean {mean:e} > {bound:e} + 2·{se:e}"))?;
        tightest = tightest.min(bound + 2.0 * se - mean);
    }
    Ok(format!("{}; stochastic lasso within bound + 2se at all {} checkpoints", detail.join(", "), avg.len()))
}

// 8 ------------------------------------------------------------------------

fn product_space_equivalence() -> Outcome {
    let inst = instance("multi");
    let cp = inst.composite.clone().ok_or("multi is not composite")?;
    let sched = inst.default_schedules().unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..LIFT_SEEDS {
        let oracle = StochasticOracle::new(cp.c.clone(), NoiseModel::Gaussian(VarianceSchedule::Constant(1.0)), seed).unwrap();
        for variant in [Variant::Papc, Variant::Saddle] {
            worst = worst.max(lift_flat_equivalence(&cp, &sched, &oracle, LIFT_STEPS, variant).unwrap());
        }
    }
    ensure(worst <= LIFT_TOL, || format!("flat and lifted iterates differ by {worst:e}"))?;

    let oracle = StochasticOracle::deterministic(cp.c.clone());
    let flat = run_flat(&cp, &sched, &oracle, CompositeState::zeros(&cp), COMPOSITE_HORIZON, Variant::Papc).unwrap();
    let res = composite_residuals(&cp, &flat.state.x, &flat.state.v).unwrap();
    let block_worst = res.blocks.iter().copied().fold(0.0, f64::max);
    ensure(
        block_worst <= BLOCK_RES_TOL && res.stationarity <= BLOCK_RES_TOL,
        || format!("residuals {res:?}"),
    )?;
    Ok(format!(
        "lift deviation {worst:.1e}; block residuals {:?}, stationarity {:.1e}",
        res.blocks.iter().map(|b| format!("{b:.1e}")).collect::<Vec<_>>(),
        res.stationarity
    ))
}

// 9 ------------------------------------------------------------------------

fn gradient_finite_differences() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in zoo::names() {
        let h = instance(name).h;
        let n = h.dim();
        let mut r = rng(9);
        for _ in 0..FD_POINTS {
            let x = gauss(&mut r, n) * 2.0;
            let g = h.gradient(&x);
            let step = 1e-4 * (1.0 + x.amax());
            let fd = Vector::from_fn(n, |i, _| {
                let mut e = Vector::zeros(n);
                e[i] = step;
                (h.value(&(&x + &e)) - h.value(&(&x - &e))) / (2.0 * step)
            });
            let rel = (&fd - &g).norm() / g.norm().max(1e-300);
            ensure(rel <= FD_TOL, || format!("{name}: relative error {rel:e}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

// 10 -----------------------------------------------------------------------

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (name, noise) in [
        ("lasso", "kind = \"gaussian\"\nsigma0 = 1.0\nepsilon = 1.0"),
        ("multi", "kind = \"gaussian\"\nsigma0 = 0.3"),
        ("cls", "kind = \"none\""),
    ] {
        let out = dir.path().join(name);
        let cfg = ExperimentConfig::parse(&format!(
            "[problem]\nname = \"{name}\"\n[noise]\n{noise}\n[run]\nhorizon = 2000\nseeds = [3, 4, 5]\nregime = \"ergodic\"\noutput = {:?}\n",
            out.display().to_string()
        ))
        .unwrap();
        let mut snapshots = Vec::new();
        for jobs in [1, 3] {
            let settings = RunSettings { jobs: Some(jobs), ..RunSettings::default() };
            run_experiment(&cfg, &settings).unwrap();
            let files: Vec<Vec<u8>> =
                [3, 4, 5].iter().map(|s| std::fs::read(out.join(format!("trace_seed{s}.csv"))).unwrap()).collect();
            snapshots.push(files);
        }
        ensure(snapshots[0] == snapshots[1], || format!("{name}: trace CSVs differ between runs"))?;
        checked += snapshots[0].len();
    }
    Ok(format!("{checked} trace files byte-identical across reruns"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("operator calculus", operator_calculus),
        ("step-size gate vs dense eigendecomposition", tau_gate),
        ("deterministic convergence on cls and lasso", deterministic_convergence),
        ("Fejer monotonicity", fejer_monotonicity),
        ("gradient-gap summability", gradient_gap_summability),
        ("almost-sure convergence proxy", almost_sure_proxy),
        ("ergodic gap bound", ergodic_gap_bound),
        ("product-space equivalence", product_space_equivalence),
        ("gradient finite differences", gradient_finite_differences),
        ("reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let line = match &outcome {
            Ok(detail) => format!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => format!("FAIL {:>2} {name}: {detail}", i + 1),
        };
        // straight to stdout so the verdicts show up in captured runs too
        let _ = writeln!(std::io::stdout().lock(), "{line}");
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[allow(dead_code)]
fn unused(_: &dyn LinearOperator) {}
