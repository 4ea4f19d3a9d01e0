//! Stochastic oracles for the cocoercive operator.
//!
//! The sample at step `n` is drawn from ChaCha stream `n` of the oracle seed,
//! so it depends only on `(seed, n, x_n)` and the conditional mean is `B x_n`
//! by construction.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::linop::{gaussian_vector, Vector};
use crate::monotone::CocoerciveMap;
use crate::solver::StepSchedule;

/// Per-coordinate noise variance `σ_n²`.
#[derive(Clone, Debug, PartialEq)]
pub enum VarianceSchedule {
    Constant(f64),
    /// `σ0² / (n+1)^{1+ε}`.
    Polynomial { sigma0_sq: f64, epsilon: f64 },
    /// Explicit values; zero past the end.
    Table(Vec<f64>),
}

impl VarianceSchedule {
    pub fn zero() -> Self {
        VarianceSchedule::Constant(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("variance schedule: {what}")));
        match self {
            VarianceSchedule::Constant(s) if !(*s >= 0.0 && s.is_finite()) => {
                bad("constant variance must be finite and nonnegative")
            }
            VarianceSchedule::Polynomial { sigma0_sq, epsilon }
                if !(*sigma0_sq >= 0.0 && sigma0_sq.is_finite()) || !(*epsilon > 0.0) =>
            {
                bad("polynomial schedule needs sigma0² >= 0 and epsilon > 0")
            }
            VarianceSchedule::Table(t) if t.iter().any(|s| !(*s >= 0.0 && s.is_finite())) => {
                bad("table entries must be finite and nonnegative")
            }
            _ => Ok(()),
        }
    }

    pub fn variance(&self, n: usize) -> f64 {
        match self {
            VarianceSchedule::Constant(s) => *s,
            VarianceSchedule::Polynomial { sigma0_sq, epsilon } => {
                sigma0_sq / ((n + 1) as f64).powf(1.0 + epsilon)
            }
            VarianceSchedule::Table(t) => t.get(n).copied().unwrap_or(0.0),
        }
    }

    pub fn is_summable(&self) -> bool {
        match self {
            VarianceSchedule::Constant(s) => *s == 0.0,
            VarianceSchedule::Polynomial { .. } | VarianceSchedule::Table(_) => true,
        }
    }

    /// Upper bound on `Σ_{n>N} σ_n²`, `None` when the series diverges.
    ///
    /// For the polynomial schedule the integral comparison gives
    /// `σ0² / (ε (N+1)^ε)`.
    pub fn tail_bound(&self, horizon: usize) -> Option<f64> {
        match self {
            VarianceSchedule::Constant(s) => (*s == 0.0).then_some(0.0),
            VarianceSchedule::Polynomial { sigma0_sq, epsilon } => {
                Some(sigma0_sq / (epsilon * ((horizon + 1) as f64).powf(*epsilon)))
            }
            VarianceSchedule::Table(t) => Some(t.iter().skip(horizon + 1).sum()),
        }
    }
}

/// Minibatch size `b_n`, capped at the number of components.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchSchedule {
    Constant(usize),
    /// `initial + ⌊n · per_step⌋`.
    Linear { initial: usize, per_step: f64 },
    /// Explicit sizes; the last entry persists.
    Table(Vec<usize>),
    Full,
}

impl BatchSchedule {
    pub fn size(&self, n: usize, components: usize) -> usize {
        let b = match self {
            BatchSchedule::Constant(b) => *b,
            BatchSchedule::Linear { initial, per_step } => {
                initial.saturating_add((n as f64 * per_step).floor() as usize)
            }
            BatchSchedule::Table(t) => t.get(n).or(t.last()).copied().unwrap_or(components),
            BatchSchedule::Full => components,
        };
        b.clamp(1, components)
    }

    /// First iteration at which the batch covers every component.
    pub fn full_from(&self, components: usize) -> Option<usize> {
        match self {
            BatchSchedule::Full => Some(0),
            BatchSchedule::Constant(b) => (*b >= components).then_some(0),
            BatchSchedule::Linear { initial, per_step } => {
                if *initial >= components {
                    Some(0)
                } else if *per_step > 0.0 {
                    let need = (components - initial) as f64;
                    let mut n = (need / per_step).ceil() as usize;
                    while n > 0 && self.size(n - 1, components) >= components {
                        n -= 1;
                    }
                    while self.size(n, components) < components {
                        n += 1;
                    }
                    Some(n)
                } else {
                    None
                }
            }
            BatchSchedule::Table(t) => match t.last() {
                Some(&last) if last >= components => {
                    (0..t.len()).rev().take_while(|&i| t[i] >= components).last()
                }
                _ => None,
            },
        }
    }

    /// Parses `full`, `constant:<b>`, `linear:<b0>:<per_step>` or
    /// `table:<b0>,<b1>,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad batch schedule `{text}`"));
        let mut parts = text.trim().splitn(2, ':');
        let kind = parts.next().unwrap_or("");
        let rest = parts.next();
        match (kind, rest) {
            ("full", None) => Ok(BatchSchedule::Full),
            ("constant", Some(b)) => Ok(BatchSchedule::Constant(b.trim().parse().map_err(|_| bad())?)),
            ("linear", Some(r)) => {
                let (b0, step) = r.split_once(':').ok_or_else(bad)?;
                Ok(BatchSchedule::Linear {
                    initial: b0.trim().parse().map_err(|_| bad())?,
                    per_step: step.trim().parse().map_err(|_| bad())?,
                })
            }
            ("table", Some(r)) => r
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()
                .map(BatchSchedule::Table),
            _ => Err(bad()),
        }
    }

    pub fn render(&self) -> String {
        match self {
            BatchSchedule::Full => "full".into(),
            BatchSchedule::Constant(b) => format!("constant:{b}"),
            BatchSchedule::Linear { initial, per_step } => format!("linear:{initial}:{per_step}"),
            BatchSchedule::Table(t) => format!(
                "table:{}",
                t.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    /// `r_n = B x + σ_n ξ` with `ξ` standard normal.
    Gaussian(VarianceSchedule),
    /// Mean of the gradients of `b_n` components drawn without replacement.
    Minibatch(BatchSchedule),
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel::Gaussian(VarianceSchedule::zero())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, NoiseModel::Gaussian(VarianceSchedule::Constant(s)) if *s == 0.0)
            || matches!(self, NoiseModel::Minibatch(BatchSchedule::Full))
    }
}

/// Which convergence theorem the noise is meant to satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Iterate convergence: needs `Σ σ_n² < ∞`.
    AlmostSure,
    /// Ergodic gap bound: needs `Σ γ_n² σ_n² < ∞`.
    Ergodic,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::AlmostSure => "almost-sure",
            Regime::Ergodic => "ergodic",
        }
    }
}

/// Unbiased stochastic evaluation of a cocoercive map.
///
/// With `copies > 1` the oracle serves the product-space problem: its input
/// has `copies` blocks and one base-space noise draw is added to every block.
#[derive(Clone, Debug)]
pub struct StochasticOracle {
    base: CocoerciveMap,
    noise: NoiseModel,
    seed: u64,
    copies: usize,
}

impl StochasticOracle {
    pub fn new(base: CocoerciveMap, noise: NoiseModel, seed: u64) -> Result<Self> {
        match &noise {
            NoiseModel::Gaussian(s) => s.validate()?,
            NoiseModel::Minibatch(_) if base.smooth().is_none() => {
                return Err(Error::InvalidArgument(
                    "minibatch noise needs B = ∇h with explicit components".into(),
                ))
            }
            NoiseModel::Minibatch(_) => {}
        }
        Ok(Self {
            base,
            noise,
            seed,
            copies: 1,
        })
    }

    pub fn deterministic(base: CocoerciveMap) -> Self {
        Self {
            base,
            noise: NoiseModel::none(),
            seed: 0,
            copies: 1,
        }
    }

    /// The same oracle acting diagonally on `copies` blocks.
    pub fn replicated(mut self, copies: usize) -> Self {
        self.copies = copies.max(1);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn base(&self) -> &CocoerciveMap {
        &self.base
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    pub fn dim(&self) -> usize {
        self.base.dim() * self.copies
    }

    fn stream(&self, n: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(n as u64);
        rng
    }

    fn per_block(&self, x: &Vector, f: impl Fn(&Vector) -> Vector) -> Vector {
        if self.copies == 1 {
            return f(x);
        }
        let d = self.base.dim();
        let mut out = Vector::zeros(x.len());
        for k in 0..self.copies {
            let xb = x.rows(k * d, d).into_owned();
            out.rows_mut(k * d, d).copy_from(&f(&xb));
        }
        out
    }

    /// `E[r_n | x_n = x] = B x`.
    pub fn mean(&self, x: &Vector) -> Vector {
        self.per_block(x, |xb| self.base.apply(xb))
    }

    /// Draws `r_n` at `x`.
    pub fn sample(&self, x: &Vector, n: usize) -> Result<Vector> {
        check_dim("oracle input", self.dim(), x.len())?;
        Ok(self.sample_unchecked(x, n))
    }

    pub(crate) fn sample_unchecked(&self, x: &Vector, n: usize) -> Vector {
        match &self.noise {
            NoiseModel::Gaussian(schedule) => {
                let mean = self.mean(x);
                let var = schedule.variance(n);
                if var == 0.0 {
                    return mean;
                }
                let xi = gaussian_vector(&mut self.stream(n), self.base.dim()) * var.sqrt();
                self.per_block(&mean, |mb| mb + &xi)
            }
            NoiseModel::Minibatch(batch) => {
                let h = self.base.smooth().expect("checked at construction");
                let terms = h.components();
                let m = terms.len();
                let b = batch.size(n, m);
                if b == m {
                    return self.mean(x);
                }
                let picks = index::sample(&mut self.stream(n), m, b);
                self.per_block(x, |xb| {
                    let mut g = Vector::zeros(xb.len());
                    for j in picks.iter() {
                        g += terms[j].gradient(xb);
                    }
                    g / b as f64
                })
            }
        }
    }

    /// Scheduled `E‖r_n - B x‖² / dim` in the base space at `x`.
    pub fn scheduled_variance(&self, x: &Vector, n: usize) -> f64 {
        let d = self.base.dim();
        match &self.noise {
            NoiseModel::Gaussian(s) => s.variance(n),
            NoiseModel::Minibatch(batch) => {
                let h = self.base.smooth().expect("checked at construction");
                let terms = h.components();
                let m = terms.len();
                let b = batch.size(n, m);
                if b == m {
                    return 0.0;
                }
                let xb = x.rows(0, d).into_owned();
                let mean = h.gradient(&xb);
                let spread: f64 = terms
                    .iter()
                    .map(|t| (t.gradient(&xb) - &mean).norm_squared())
                    .sum();
                // sampling without replacement from a finite population
                spread * (m - b) as f64 / (b * m * (m - 1)) as f64 / d as f64
            }
        }
    }
}

/// Mean over coordinates of the unbiased sample variance of `r_n(x)` over
/// independent draws. Draw `t` uses the stream of step `n + t`; for the
/// shipped models the law of `r_n` at fixed `x` depends on `n` only through
/// the schedule, so the schedule is evaluated at `n` throughout.
pub fn empirical_variance(
    oracle: &StochasticOracle,
    x: &Vector,
    n: usize,
    trials: usize,
) -> Result<f64> {
    if trials < 2 {
        return Err(Error::InvalidArgument("empirical variance needs at least 2 trials".into()));
    }
    let fixed = StochasticOracle {
        noise: match oracle.noise() {
            NoiseModel::Gaussian(s) => {
                NoiseModel::Gaussian(VarianceSchedule::Constant(s.variance(n)))
            }
            NoiseModel::Minibatch(b) => {
                let m = oracle.base().smooth().map_or(1, |h| h.components().len());
                NoiseModel::Minibatch(BatchSchedule::Constant(b.size(n, m)))
            }
        },
        ..oracle.clone()
    };
    let dim = oracle.dim();
    let mut mean = Vector::zeros(dim);
    let mut m2 = Vector::zeros(dim);
    for t in 0..trials {
        let r = fixed.sample(x, n.wrapping_add(t))?;
        let delta = &r - &mean;
        mean += &delta / (t + 1) as f64;
        m2 += delta.component_mul(&(&r - &mean));
    }
    Ok(m2.sum() / ((trials - 1) * dim) as f64)
}

/// Partial sums and tail bounds backing a noise/step-size pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct SummabilityReport {
    pub regime: Regime,
    pub horizon: usize,
    /// `Σ_{n≤N} σ_n²` (gaussian model only).
    pub variance_sum: Option<f64>,
    /// `Σ_{n≤N} γ_n² σ_n²` (gaussian model only).
    pub weighted_sum: Option<f64>,
    /// Bound on `Σ_{n>N} σ_n²` when the series converges.
    pub tail_bound: Option<f64>,
    /// The weighted series is only finite because the horizon is.
    pub finite_horizon_only: bool,
    pub note: String,
}

/// Certifies the noise condition of the declared regime.
///
/// Almost-sure: `Σ σ_n²` must converge. Ergodic: `Σ γ_n² σ_n²` is finite over
/// any finite horizon; the report says whether it also converges.
pub fn summability_certificate(
    noise: &NoiseModel,
    gamma: &StepSchedule,
    horizon: usize,
    regime: Regime,
    components: Option<usize>,
) -> Result<SummabilityReport> {
    let mut report = SummabilityReport {
        regime,
        horizon,
        variance_sum: None,
        weighted_sum: None,
        tail_bound: None,
        finite_horizon_only: false,
        note: String::new(),
    };
    let summable = match noise {
        NoiseModel::Gaussian(s) => {
            s.validate()?;
            let (mut vs, mut ws) = (0.0, 0.0);
            for n in 0..=horizon {
                let var = s.variance(n);
                vs += var;
                ws += gamma.value(n).powi(2) * var;
            }
            report.variance_sum = Some(vs);
            report.weighted_sum = Some(ws);
            report.tail_bound = s.tail_bound(horizon);
            s.is_summable()
        }
        NoiseModel::Minibatch(b) => {
            let m = components.ok_or_else(|| {
                Error::InvalidArgument("minibatch certificate needs the component count".into())
            })?;
            match b.full_from(m) {
                Some(n0) if n0 <= horizon => {
                    report.note = format!("batch is full from iteration {n0}");
                    report.tail_bound = Some(0.0);
                    true
                }
                _ => false,
            }
        }
    };
    match regime {
        Regime::AlmostSure if !summable => Err(Error::RegimeViolation(format!(
            "{noise:?} is not summable; the almost-sure regime needs Σ σ_n² < ∞"
        ))),
        Regime::AlmostSure => Ok(report),
        Regime::Ergodic => {
            if !summable && !gamma.square_summable() {
                report.finite_horizon_only = true;
                report.note = "Σ γ_n² σ_n² is finite only over the finite horizon".into();
            }
            Ok(report)
        }
    }
}
