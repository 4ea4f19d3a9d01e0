//! The projected primal-dual iteration with correction step.
//!
//! One step at iteration `n`, with a single oracle draw `r_n ≈ B x_n`:
//!
//! ```text
//! p_n     = P_V(x_n - γ_n (L* v_n + r_n))
//! v_{n+1} = J_{(τ_n/γ_n) U A^{-1}}(v_n + (τ_n/γ_n) U L p_n)
//! x_{n+1} = P_V(x_n - γ_n (L* v_{n+1} + r_n))
//! ```

use crate::error::{check_dim, Error, Result};
use crate::linop::{
    validate_tau_with, Definiteness, Geometry, LinearMap, LinearOperator, OrthoProjector,
    SpdOperator, TauCertificate, TauOptions, Vector,
};
use crate::monotone::{conjugate_prox_via_moreau, metric_inverse_resolvent, CocoerciveMap, MonotoneBlock};
use crate::stochastic::{Regime, StochasticOracle};

/// Horizon above which the trace is subsampled.
pub const FULL_TRACE_LIMIT: usize = 100_000;

/// A positive step-size sequence indexed from `n = 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `initial / (n+1)^power`.
    Harmonic { initial: f64, power: f64 },
    /// `limit · (1 + coef / (n + shift))`; decreasing to `limit` for
    /// `coef > 0`, increasing for `coef < 0`.
    Relaxing { limit: f64, coef: f64, shift: f64 },
    /// Explicit values; the last entry persists.
    Table(Vec<f64>),
}

impl StepSchedule {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            StepSchedule::Constant(c) => *c,
            StepSchedule::Harmonic { initial, power } => initial / ((n + 1) as f64).powf(*power),
            StepSchedule::Relaxing { limit, coef, shift } => limit * (1.0 + coef / (n as f64 + shift)),
            StepSchedule::Table(t) => t.get(n).or(t.last()).copied().unwrap_or(f64::NAN),
        }
    }

    /// `inf_n` of the schedule over all `n`.
    pub fn infimum(&self) -> f64 {
        match self {
            StepSchedule::Constant(c) => *c,
            StepSchedule::Harmonic { initial, power } if *power > 0.0 => initial.min(0.0),
            StepSchedule::Harmonic { initial, .. } => *initial,
            StepSchedule::Relaxing { limit, coef, shift } => {
                let first = limit * (1.0 + coef / shift);
                first.min(*limit)
            }
            StepSchedule::Table(t) => t.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// Whether `Σ γ_n²` converges.
    pub fn square_summable(&self) -> bool {
        match self {
            StepSchedule::Constant(c) => *c == 0.0,
            StepSchedule::Harmonic { power, .. } => *power > 0.5,
            StepSchedule::Relaxing { limit, .. } => *limit == 0.0,
            StepSchedule::Table(t) => t.last().is_none_or(|&v| v == 0.0),
        }
    }

    pub fn scaled(&self, c: f64) -> StepSchedule {
        match self {
            StepSchedule::Constant(v) => StepSchedule::Constant(v * c),
            StepSchedule::Harmonic { initial, power } => StepSchedule::Harmonic {
                initial: initial * c,
                power: *power,
            },
            StepSchedule::Relaxing { limit, coef, shift } => StepSchedule::Relaxing {
                limit: limit * c,
                coef: *coef,
                shift: *shift,
            },
            StepSchedule::Table(t) => StepSchedule::Table(t.iter().map(|v| v * c).collect()),
        }
    }
}

/// Step sizes `γ_n`, dual scalings `τ_n ≤ τ`, and the cocoercivity constant.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedules {
    pub gamma: StepSchedule,
    pub tau: StepSchedule,
    pub tau_cap: f64,
    pub beta: f64,
}

impl Schedules {
    /// `γ_n ≡ gamma`, `τ_n ≡ tau`.
    pub fn constant(gamma: f64, tau: f64, beta: f64) -> Self {
        Self {
            gamma: StepSchedule::Constant(gamma),
            tau: StepSchedule::Constant(tau),
            tau_cap: tau,
            beta,
        }
    }

    pub fn gamma(&self, n: usize) -> f64 {
        self.gamma.value(n)
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.tau.value(n)
    }
}

/// Inclusion datum `0 ∈ B x + L* A(L x) + N_V x` with dual preconditioner `U`.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub b: CocoerciveMap,
    pub a: MonotoneBlock,
    pub l: LinearMap,
    pub projector: OrthoProjector,
    pub metric: SpdOperator,
    pub primal_geometry: Geometry,
    pub dual_geometry: Geometry,
}

impl ProblemSpec {
    pub fn new(
        b: CocoerciveMap,
        a: MonotoneBlock,
        l: LinearMap,
        projector: OrthoProjector,
        metric: SpdOperator,
    ) -> Result<Self> {
        check_dim("problem: B vs L domain", l.cols(), b.dim())?;
        check_dim("problem: P_V vs L domain", l.cols(), projector.dim())?;
        check_dim("problem: A vs L codomain", l.rows(), a.dim())?;
        check_dim("problem: U vs L codomain", l.rows(), metric.dim())?;
        let primal_geometry = projector.geometry();
        Ok(Self {
            b,
            a,
            l,
            projector,
            metric,
            primal_geometry,
            dual_geometry: Geometry::Euclidean,
        })
    }

    pub fn with_dual_geometry(mut self, geometry: Geometry) -> Self {
        self.dual_geometry = geometry;
        self
    }

    pub fn primal_dim(&self) -> usize {
        self.l.cols()
    }

    pub fn dual_dim(&self) -> usize {
        self.l.rows()
    }

    pub fn beta(&self) -> f64 {
        self.b.beta()
    }
}

/// One named hypothesis check.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub regime: Regime,
    pub horizon: usize,
    pub checks: Vec<HypothesisCheck>,
    pub tau: Option<TauCertificate>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn failed(&self, name: &str) -> bool {
        self.failures().any(|c| c.name == name)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let msg = self
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::StepSizeViolation(msg))
    }
}

/// Checks the step-size hypotheses over `n = 0..=horizon`, each reported
/// separately. Monotonicity is non-strict.
pub fn validate_hypotheses(
    spec: &ProblemSpec,
    sched: &Schedules,
    horizon: usize,
    regime: Regime,
) -> Result<HypothesisReport> {
    let mut checks = Vec::new();
    let mut push = |name, passed, detail: String| checks.push(HypothesisCheck { name, passed, detail });

    let gammas: Vec<f64> = (0..=horizon).map(|n| sched.gamma(n)).collect();
    let taus: Vec<f64> = (0..=horizon).map(|n| sched.tau(n)).collect();
    let first_bad = |xs: &[f64], ok: &dyn Fn(f64, f64) -> bool| {
        xs.windows(2).position(|w| !ok(w[0], w[1]))
    };

    let gamma_pos = gammas.iter().position(|g| !(*g > 0.0 && g.is_finite()));
    push(
        "gamma positive",
        gamma_pos.is_none(),
        gamma_pos.map_or("ok".into(), |n| format!("gamma_{n} = {}", gammas[n])),
    );
    let tau_pos = taus.iter().position(|t| !(*t > 0.0 && t.is_finite()));
    push(
        "tau positive",
        tau_pos.is_none(),
        tau_pos.map_or("ok".into(), |n| format!("tau_{n} = {}", taus[n])),
    );
    let g_mono = first_bad(&gammas, &|a, b| b <= a);
    push(
        "gamma non-increasing",
        g_mono.is_none(),
        g_mono.map_or("ok".into(), |n| {
            format!("gamma_{} = {} > gamma_{n} = {}", n + 1, gammas[n + 1], gammas[n])
        }),
    );
    let t_mono = first_bad(&taus, &|a, b| b >= a);
    push(
        "tau non-decreasing",
        t_mono.is_none(),
        t_mono.map_or("ok".into(), |n| {
            format!("tau_{} = {} < tau_{n} = {}", n + 1, taus[n + 1], taus[n])
        }),
    );
    let over_cap = taus.iter().position(|t| *t > sched.tau_cap);
    push(
        "tau cap",
        over_cap.is_none(),
        over_cap.map_or("ok".into(), |n| format!("tau_{n} = {} exceeds cap {}", taus[n], sched.tau_cap)),
    );
    let beta = sched.beta;
    push(
        "gamma0 below beta",
        gammas[0] < beta,
        if gammas[0] < beta {
            "ok".into()
        } else {
            format!("gamma0 exceeds beta: gamma0 = {} >= beta = {beta}", gammas[0])
        },
    );
    if regime == Regime::AlmostSure {
        let inf = sched.gamma.infimum().min(gammas.iter().copied().fold(f64::INFINITY, f64::min));
        push(
            "gamma bounded away from zero",
            inf > 0.0,
            if inf > 0.0 {
                "ok".into()
            } else {
                format!("inf gamma_n = {inf}; the almost-sure regime needs inf gamma_n > 0")
            },
        );
    }

    let tau_cert = if sched.tau_cap > 0.0 && sched.tau_cap.is_finite() {
        let opts = TauOptions {
            margin: if regime == Regime::AlmostSure { 1e-6 } else { 0.0 },
            definiteness: if regime == Regime::AlmostSure {
                Definiteness::Strict
            } else {
                Definiteness::Semi
            },
            dual_geometry: spec.dual_geometry.clone(),
            ..TauOptions::default()
        };
        let cert = validate_tau_with(&spec.metric, &spec.l, &spec.projector, sched.tau_cap, &opts)?;
        push(
            "tau admissible",
            cert.accepted(),
            format!(
                "{:?}: tau·lambda_max = {:.6e} (lambda_max = {:.6e} ± {:.1e}, margin {})",
                cert.status,
                cert.tau * cert.lambda_max,
                cert.lambda_max,
                cert.residual,
                cert.margin
            ),
        );
        Some(cert)
    } else {
        push("tau admissible", false, format!("tau cap {} is not positive", sched.tau_cap));
        None
    };

    Ok(HypothesisReport {
        regime,
        horizon,
        checks,
        tau: tau_cert,
    })
}

/// Iterates of the method at index `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PapcState {
    pub n: usize,
    pub x: Vector,
    pub v: Vector,
    /// Predictor from the previous step (`x_0` initially).
    pub p: Vector,
    /// Oracle sample used in the previous step (zero initially).
    pub last_r: Vector,
}

impl PapcState {
    /// Initial state; `x0` is projected onto `V`.
    pub fn new(spec: &ProblemSpec, x0: &Vector, v0: &Vector) -> Result<Self> {
        check_dim("initial x", spec.primal_dim(), x0.len())?;
        check_dim("initial v", spec.dual_dim(), v0.len())?;
        let x = spec.projector.apply(x0);
        Ok(Self {
            n: 0,
            p: x.clone(),
            last_r: Vector::zeros(x.len()),
            x,
            v: v0.clone(),
        })
    }

    pub fn zeros(spec: &ProblemSpec) -> Self {
        Self::new(spec, &Vector::zeros(spec.primal_dim()), &Vector::zeros(spec.dual_dim()))
            .expect("dimensions match by construction")
    }
}

/// Which dual update the run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Variant {
    /// Resolvent of `A^{-1}` via the inverse-resolvent identity.
    #[default]
    Papc,
    /// Conjugate prox of `g` via the Moreau decomposition; needs `A = ∂g`.
    Saddle,
}

fn finite(v: &Vector, iteration: usize, quantity: &'static str) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, quantity })
    }
}

fn step_with(
    state: &PapcState,
    spec: &ProblemSpec,
    sched: &Schedules,
    oracle: &StochasticOracle,
    dual: impl FnOnce(f64, &Vector) -> Result<Vector>,
) -> Result<PapcState> {
    let n = state.n;
    let gamma = sched.gamma(n);
    let c = sched.tau(n) / gamma;
    let r = oracle.sample(&state.x, n)?;
    finite(&r, n, "r")?;
    let p = spec
        .projector
        .apply(&(&state.x - (spec.l.adjoint_apply(&state.v) + &r) * gamma));
    finite(&p, n, "p")?;
    let y = &state.v + spec.metric.apply(&spec.l.apply(&p)) * c;
    let v = dual(c, &y)?;
    finite(&v, n, "v")?;
    let x = spec
        .projector
        .apply(&(&state.x - (spec.l.adjoint_apply(&v) + &r) * gamma));
    finite(&x, n, "x")?;
    Ok(PapcState {
        n: n + 1,
        x,
        v,
        p,
        last_r: r,
    })
}

/// One iteration with the dual resolvent `J_{(τ_n/γ_n) U A^{-1}}`.
pub fn papc_step(
    state: &PapcState,
    spec: &ProblemSpec,
    sched: &Schedules,
    oracle: &StochasticOracle,
) -> Result<PapcState> {
    step_with(state, spec, sched, oracle, |c, y| {
        metric_inverse_resolvent(&spec.a, c, &spec.metric, y)
    })
}

/// One iteration with the dual update `prox^{U^{-1}}_{(τ_n/γ_n) g*}`, for
/// `A = ∂g` (or a product of such blocks).
pub fn saddle_step(
    state: &PapcState,
    spec: &ProblemSpec,
    sched: &Schedules,
    oracle: &StochasticOracle,
) -> Result<PapcState> {
    if !spec.a.is_subdifferential() {
        return Err(Error::InvalidArgument(
            "saddle variant needs A = ∂g for a proximable g".into(),
        ));
    }
    step_with(state, spec, sched, oracle, |c, y| {
        match (spec.a.as_function(), spec.metric.scalar_value()) {
            (Some(g), Some(sigma)) => conjugate_prox_via_moreau(g, c * sigma, y),
            // product of subdifferentials or non-scalar U: blockwise Moreau
            _ => metric_inverse_resolvent(&spec.a, c, &spec.metric, y),
        }
    })
}

pub fn step(
    variant: Variant,
    state: &PapcState,
    spec: &ProblemSpec,
    sched: &Schedules,
    oracle: &StochasticOracle,
) -> Result<PapcState> {
    match variant {
        Variant::Papc => papc_step(state, spec, sched, oracle),
        Variant::Saddle => saddle_step(state, spec, sched, oracle),
    }
}

/// Running `γ`-weighted averages of `x_{n+1}` and `v_{n+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicAccumulator {
    pub weight_sum: f64,
    pub x_avg: Vector,
    pub v_avg: Vector,
}

impl ErgodicAccumulator {
    pub fn new(primal_dim: usize, dual_dim: usize) -> Self {
        Self {
            weight_sum: 0.0,
            x_avg: Vector::zeros(primal_dim),
            v_avg: Vector::zeros(dual_dim),
        }
    }

    pub fn update(&mut self, gamma: f64, x_next: &Vector, v_next: &Vector) -> Result<()> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("ergodic weight must be positive, got {gamma}")));
        }
        self.weight_sum += gamma;
        let w = gamma / self.weight_sum;
        self.x_avg += (x_next - &self.x_avg) * w;
        self.v_avg += (v_next - &self.v_avg) * w;
        Ok(())
    }
}

/// `ergodic_update` as a pure function.
pub fn ergodic_update(
    acc: &ErgodicAccumulator,
    gamma: f64,
    x_next: &Vector,
    v_next: &Vector,
) -> Result<ErgodicAccumulator> {
    let mut out = acc.clone();
    out.update(gamma, x_next, v_next)?;
    Ok(out)
}

/// Snapshot of `(x_n, v_n)` and the schedule values at `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub n: usize,
    pub gamma: f64,
    pub tau: f64,
    pub x: Vector,
    pub v: Vector,
}

/// Ergodic averages `x̃_N, ṽ_N` over `n = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub n: usize,
    pub sum_gamma: f64,
    pub x_avg: Vector,
    pub v_avg: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub horizon: usize,
    pub variant: Variant,
    /// Values of `N` at which to store ergodic averages.
    pub checkpoints: Vec<usize>,
    /// Trace stride; `None` picks 1 up to [`FULL_TRACE_LIMIT`] and
    /// `⌈horizon / FULL_TRACE_LIMIT⌉` above.
    pub stride: Option<usize>,
}

impl RunOptions {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            variant: Variant::Papc,
            checkpoints: Vec::new(),
            stride: None,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<usize>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    pub fn stride(&self) -> usize {
        self.stride
            .unwrap_or_else(|| self.horizon.div_ceil(FULL_TRACE_LIMIT).max(1))
            .max(1)
    }
}

/// `per_decade` roughly log-spaced checkpoints in `[0, horizon - 1]`, always
/// including both ends.
pub fn log_checkpoints(horizon: usize, per_decade: usize) -> Vec<usize> {
    if horizon == 0 {
        return Vec::new();
    }
    let last = horizon - 1;
    let mut out = vec![0];
    let top = (last.max(1) as f64).log10();
    let steps = (top * per_decade as f64).ceil() as usize;
    for k in 0..=steps {
        let n = 10f64.powf(k as f64 / per_decade as f64).round() as usize;
        if n <= last {
            out.push(n);
        }
    }
    out.push(last);
    out.sort_unstable();
    out.dedup();
    out
}

/// Trace and ergodic averages of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub stride: usize,
    pub trace: Vec<TracePoint>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_state: PapcState,
    /// Ergodic averages after the last completed step.
    pub ergodic: ErgodicAccumulator,
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: RunRecord,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} steps)", self.error, self.partial.final_state.n)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

/// Runs `horizon` steps from `(x0, v0)`.
pub fn run(
    spec: &ProblemSpec,
    sched: &Schedules,
    oracle: &StochasticOracle,
    x0: &Vector,
    v0: &Vector,
    opts: &RunOptions,
) -> Result<RunRecord, Box<RunFailure>> {
    run_with(spec, sched, oracle, x0, v0, opts, |_, _, _| {})
}

/// [`run`] calling `callback(state, γ_n, τ_n)` on every state `n = 0..=horizon`
/// before it is stepped (and on the terminal state).
pub fn run_with(
    spec: &ProblemSpec,
    sched: &Schedules,
    oracle: &StochasticOracle,
    x0: &Vector,
    v0: &Vector,
    opts: &RunOptions,
    mut callback: impl FnMut(&PapcState, f64, f64),
) -> Result<RunRecord, Box<RunFailure>> {
    let mut state = PapcState::new(spec, x0, v0).map_err(|error| {
        Box::new(RunFailure {
            error,
            partial: RunRecord {
                stride: 1,
                trace: Vec::new(),
                checkpoints: Vec::new(),
                final_state: PapcState {
                    n: 0,
                    x: x0.clone(),
                    v: v0.clone(),
                    p: x0.clone(),
                    last_r: x0.clone(),
                },
                ergodic: ErgodicAccumulator::new(x0.len(), v0.len()),
            },
        })
    })?;
    let stride = opts.stride();
    let mut record = RunRecord {
        stride,
        trace: Vec::new(),
        checkpoints: Vec::new(),
        final_state: state.clone(),
        ergodic: ErgodicAccumulator::new(spec.primal_dim(), spec.dual_dim()),
    };
    let mut wanted = opts.checkpoints.clone();
    wanted.sort_unstable();
    wanted.dedup();
    let mut next_cp = wanted.iter().peekable();

    let snapshot = |s: &PapcState| TracePoint {
        n: s.n,
        gamma: sched.gamma(s.n),
        tau: sched.tau(s.n),
        x: s.x.clone(),
        v: s.v.clone(),
    };

    for n in 0..opts.horizon {
        let (gamma, tau) = (sched.gamma(n), sched.tau(n));
        callback(&state, gamma, tau);
        if n % stride == 0 {
            record.trace.push(snapshot(&state));
        }
        let next = match step(opts.variant, &state, spec, sched, oracle) {
            Ok(s) => s,
            Err(error) => {
                record.final_state = state;
                return Err(Box::new(RunFailure {
                    error,
                    partial: record,
                }));
            }
        };
        if let Err(error) = record.ergodic.update(gamma, &next.x, &next.v) {
            record.final_state = state;
            return Err(Box::new(RunFailure {
                error,
                partial: record,
            }));
        }
        while next_cp.peek().is_some_and(|&&c| c < n) {
            next_cp.next();
        }
        if next_cp.peek() == Some(&&n) {
            record.checkpoints.push(Checkpoint {
                n,
                sum_gamma: record.ergodic.weight_sum,
                x_avg: record.ergodic.x_avg.clone(),
                v_avg: record.ergodic.v_avg.clone(),
            });
            next_cp.next();
        }
        state = next;
    }
    let (gamma, tau) = (sched.gamma(state.n), sched.tau(state.n));
    callback(&state, gamma, tau);
    record.trace.push(snapshot(&state));
    record.final_state = state;
    Ok(record)
}
