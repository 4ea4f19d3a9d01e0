//! Test problems with solutions computed independently of the solver.
//!
//! | name    | problem                                              | oracle                         |
//! |---------|------------------------------------------------------|--------------------------------|
//! | `cls`   | `½‖Dx - a‖² + ½‖Lx - b‖²` over a proper subspace `V`  | dense KKT solve on a basis of V |
//! | `lasso` | `½x'Hx - c'x + Σ w_i |x_i|`                           | sign-pattern enumeration        |
//! | `fused` | `½‖x - a‖² + λ‖Dx‖₁`, `D` forward differences         | proximal gradient on the dual   |
//! | `multi` | quadratic plus three weighted composite blocks        | proximal gradient on the dual   |

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composite::{lift, CompositeBlock, CompositeProblem};
use crate::diagnostics::{kkt_residual, SaddleFunction, SaddleTerm};
use crate::error::{Error, Result};
use crate::linop::{
    admissible_tau, gaussian_vector, read_matrix, Geometry, LinearMap, Matrix, OrthoProjector,
    SpdOperator, Vector,
};
use crate::monotone::{CocoerciveMap, MonotoneBlock, ProxFunction, QuadraticTerm, SmoothQuadratic};
use crate::solver::{papc_step, PapcState, ProblemSpec, Schedules};
use crate::stochastic::{NoiseModel, StochasticOracle};

/// Oracle solutions must pass this KKT residual before use.
pub const ORACLE_KKT_TOL: f64 = 1e-8;
/// Acceptance threshold for the iterative dual oracle.
pub const ITERATIVE_ORACLE_TOL: f64 = 1e-9;
const ITERATIVE_ORACLE_MAX_STEPS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ZooParams {
    /// Primal dimension; `None` selects the problem default.
    pub dim: Option<usize>,
    pub seed: u64,
}

impl Default for ZooParams {
    fn default() -> Self {
        Self { dim: None, seed: 1 }
    }
}

/// A built problem with its reference solution.
#[derive(Clone, Debug)]
pub struct ZooInstance {
    pub name: String,
    /// The inclusion the solver runs on (the lifted one for composite problems).
    pub spec: ProblemSpec,
    pub composite: Option<CompositeProblem>,
    /// Smooth term `h` on the base space.
    pub h: SmoothQuadratic,
    /// Saddle function in base-space coordinates.
    pub saddle: SaddleFunction,
    /// Reference solution in solver coordinates.
    pub x_bar: Vector,
    pub v_bar: Vector,
}

impl ZooInstance {
    /// Base-space primal point: the weighted block average for composite
    /// problems, the point itself otherwise.
    pub fn flat_primal(&self, x: &Vector) -> Vector {
        match &self.composite {
            Some(cp) => self.spec.projector.apply(x).rows(0, cp.dim()).into_owned(),
            None => x.clone(),
        }
    }

    /// Constant schedules `γ = 0.9 β` and `τ = 0.99 τ_max`, where `τ_max` is
    /// the largest `τ` admitted by every applicable step-size condition.
    pub fn default_schedules(&self) -> Result<Schedules> {
        let beta = self.spec.beta();
        let gamma = if beta.is_finite() { 0.9 * beta } else { 1.0 };
        let tau = 0.99 * self.tau_max()?;
        Ok(Schedules::constant(gamma, tau, beta))
    }

    /// Largest admissible `τ` (before safety factors): the lifted bound and,
    /// for composite problems, every blockwise bound.
    pub fn tau_max(&self) -> Result<f64> {
        tau_max_of(&self.spec, self.composite.as_ref())
    }

    /// Oracle for `B`, replicated across blocks for composite problems.
    pub fn oracle(&self, noise: NoiseModel, seed: u64) -> Result<StochasticOracle> {
        Ok(match &self.composite {
            Some(cp) => StochasticOracle::new(cp.c.clone(), noise, seed)?.replicated(cp.m()),
            None => StochasticOracle::new(self.spec.b.clone(), noise, seed)?,
        })
    }

    pub fn x0(&self) -> Vector {
        Vector::zeros(self.spec.primal_dim())
    }

    pub fn v0(&self) -> Vector {
        Vector::zeros(self.spec.dual_dim())
    }
}

pub struct ZooEntry {
    pub name: &'static str,
    pub description: &'static str,
    build: fn(&ZooParams) -> Result<ZooInstance>,
}

const ZOO: &[ZooEntry] = &[
    ZooEntry {
        name: "cls",
        description: "constrained least squares on a proper subspace (dense KKT oracle)",
        build: build_cls,
    },
    ZooEntry {
        name: "lasso",
        description: "quadratic plus weighted l1, dim <= 5 (sign-enumeration oracle)",
        build: build_lasso,
    },
    ZooEntry {
        name: "fused",
        description: "1-D total-variation denoising, dim <= 30 (dual proximal-gradient oracle)",
        build: build_fused,
    },
    ZooEntry {
        name: "multi",
        description: "quadratic plus l1, box-support and quadratic blocks, m = 3 (dual proximal-gradient oracle)",
        build: build_multi,
    },
];

pub fn zoo() -> &'static [ZooEntry] {
    ZOO
}

pub fn names() -> Vec<&'static str> {
    ZOO.iter().map(|e| e.name).collect()
}

/// Builds a registered problem and self-checks its oracle.
pub fn build(name: &str, params: &ZooParams) -> Result<ZooInstance> {
    let entry = ZOO.iter().find(|e| e.name == name).ok_or_else(|| Error::Unknown {
        kind: "zoo problem",
        name: name.to_string(),
        available: names().join(", "),
    })?;
    let inst = (entry.build)(params)?;
    let res = kkt_residual(&inst.x_bar, &inst.v_bar, &inst.spec)?;
    if !(res.max() <= ORACLE_KKT_TOL) {
        return Err(Error::Oracle(format!(
            "{name}: oracle KKT residual {:.3e} exceeds {ORACLE_KKT_TOL:e}",
            res.max()
        )));
    }
    Ok(inst)
}

fn rng(params: &ZooParams, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let v = gaussian_vector(rng, rows * cols);
    Matrix::from_column_slice(rows, cols, v.as_slice())
}

fn dim_in(params: &ZooParams, default: usize, lo: usize, hi: usize, name: &str) -> Result<usize> {
    let d = params.dim.unwrap_or(default);
    if d < lo || d > hi {
        return Err(Error::InvalidArgument(format!("{name}: dimension must lie in [{lo}, {hi}], got {d}")));
    }
    Ok(d)
}

// ---------------------------------------------------------------- cls

/// Data of the constrained least-squares problem.
#[derive(Clone, Debug)]
pub struct ClsData {
    pub d: Matrix,
    pub a: Vector,
    pub l: Matrix,
    pub b: Vector,
    /// Columns span `V`.
    pub span: Matrix,
}

fn build_cls(params: &ZooParams) -> Result<ZooInstance> {
    let n = dim_in(params, 6, 2, 40, "cls")?;
    let mut r = rng(params, 0xc15);
    let k = (2 * n).div_ceil(3);
    let mut d = Matrix::zeros(n + 2, n);
    d.view_mut((0, 0), (n, n)).fill_with_identity();
    d += random_matrix(&mut r, n + 2, n) * (0.25 / (n as f64).sqrt());
    let data = ClsData {
        d,
        a: gaussian_vector(&mut r, n + 2),
        l: random_matrix(&mut r, k, n) * (0.5 / (n as f64).sqrt()),
        b: gaussian_vector(&mut r, k),
        span: random_matrix(&mut r, n, n - n / 3),
    };
    cls_from_data(data)
}

/// Constrained least squares on explicit data; `v̄ = L x̄ - b`.
pub fn cls_from_data(data: ClsData) -> Result<ZooInstance> {
    let projector = OrthoProjector::from_spanning_set(data.span.clone())?;
    let q = match &projector {
        OrthoProjector::Basis(q) => q.clone(),
        _ => unreachable!("spanning sets give a basis projector"),
    };
    let term = QuadraticTerm::least_squares(&data.d, &data.a)?;
    let h = SmoothQuadratic::single(term);
    // reduced normal equations Q'(D'D + L'L)Q z = Q'(D'a + L'b)
    let lhs = q.transpose() * (data.d.transpose() * &data.d + data.l.transpose() * &data.l) * &q;
    let rhs = q.transpose() * (data.d.transpose() * &data.a + data.l.transpose() * &data.b);
    let z = lhs
        .cholesky()
        .ok_or_else(|| Error::Oracle("cls: reduced normal matrix is singular".into()))?
        .solve(&rhs);
    let x_bar = &q * z;
    let v_bar = &data.l * &x_bar - &data.b;
    let g = ProxFunction::squared_distance(data.b.clone());
    let l = LinearMap::dense(data.l.clone());
    let spec = ProblemSpec::new(
        CocoerciveMap::gradient(h.clone()),
        MonotoneBlock::Subdifferential(g.clone()),
        l.clone(),
        projector.clone(),
        SpdOperator::identity(data.l.nrows()),
    )?;
    let saddle = SaddleFunction::new(h.clone(), g, l, projector)?;
    Ok(ZooInstance {
        name: "cls".into(),
        spec,
        composite: None,
        h,
        saddle,
        x_bar,
        v_bar,
    })
}

// ---------------------------------------------------------------- lasso

/// `½ x'Hx - c'x + Σ w_i |x_i|`.
#[derive(Clone, Debug)]
pub struct LassoData {
    pub hessian: Matrix,
    pub linear: Vector,
    pub weights: Vector,
}

fn build_lasso(params: &ZooParams) -> Result<ZooInstance> {
    let n = dim_in(params, 4, 1, 5, "lasso")?;
    let mut r = rng(params, 0x1a55);
    let m = random_matrix(&mut r, n, n);
    let hessian = m.transpose() * &m * (0.5 / n as f64) + Matrix::identity(n, n);
    let linear = gaussian_vector(&mut r, n) * 1.5;
    lasso_from_data(LassoData {
        hessian,
        linear,
        weights: Vector::from_element(n, 1.0),
    })
}

/// Lasso on explicit data, solved by enumerating all `3^n` sign patterns.
pub fn lasso_from_data(data: LassoData) -> Result<ZooInstance> {
    let n = data.linear.len();
    if n > 5 {
        return Err(Error::InvalidArgument(format!("lasso: sign enumeration limited to dim 5, got {n}")));
    }
    let x_bar = lasso_sign_enumeration(&data)?;
    let v_bar = &data.linear - &data.hessian * &x_bar;
    let h = SmoothQuadratic::single(QuadraticTerm::new(data.hessian.clone(), data.linear.clone(), 0.0)?);
    let g = ProxFunction::l1(data.weights.clone())?;
    let spec = ProblemSpec::new(
        CocoerciveMap::gradient(h.clone()),
        MonotoneBlock::Subdifferential(g.clone()),
        LinearMap::identity(n),
        OrthoProjector::full(n),
        SpdOperator::identity(n),
    )?;
    let saddle = SaddleFunction::new(h.clone(), g, LinearMap::identity(n), OrthoProjector::full(n))?;
    Ok(ZooInstance {
        name: "lasso".into(),
        spec,
        composite: None,
        h,
        saddle,
        x_bar,
        v_bar,
    })
}

/// Exhaustive search over sign patterns `s ∈ {-1, 0, 1}^n`: solve
/// `H_AA x_A = c_A - w_A s_A` on the support and keep the pattern whose
/// signs agree and whose off-support subgradient fits in `[-w, w]`.
pub fn lasso_sign_enumeration(data: &LassoData) -> Result<Vector> {
    let n = data.linear.len();
    let (h, c, w) = (&data.hessian, &data.linear, &data.weights);
    let mut found: Vec<Vector> = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut signs = vec![0i8; n];
        let mut rest = code;
        for s in signs.iter_mut() {
            *s = (rest % 3) as i8 - 1;
            rest /= 3;
        }
        let active: Vec<usize> = (0..n).filter(|&i| signs[i] != 0).collect();
        let mut x = Vector::zeros(n);
        if !active.is_empty() {
            let k = active.len();
            let hs = Matrix::from_fn(k, k, |i, j| h[(active[i], active[j])]);
            let rhs = Vector::from_fn(k, |i, _| c[active[i]] - w[active[i]] * signs[active[i]] as f64);
            let Some(chol) = hs.cholesky() else { continue };
            let xa = chol.solve(&rhs);
            for (i, &a) in active.iter().enumerate() {
                x[a] = xa[i];
            }
        }
        let signs_ok = active.iter().all(|&i| x[i] * signs[i] as f64 > 0.0);
        let grad = c - h * &x;
        let slack_ok = (0..n)
            .filter(|i| signs[*i] == 0)
            .all(|i| grad[i].abs() <= w[i] * (1.0 + 1e-12) + 1e-14);
        if signs_ok && slack_ok {
            found.push(x);
        }
    }
    let first = found
        .first()
        .cloned()
        .ok_or_else(|| Error::Oracle("lasso: no sign pattern satisfies the optimality conditions".into()))?;
    if found.iter().any(|x| (x - &first).amax() > 1e-9) {
        return Err(Error::Oracle("lasso: several distinct sign-pattern solutions".into()));
    }
    Ok(first)
}

/// The lasso solved by proximal gradient on its dual instead of by
/// enumeration; used to cross-check [`lasso_sign_enumeration`].
pub fn lasso_dual_oracle(data: &LassoData) -> Result<Vector> {
    let n = data.linear.len();
    let g = ProxFunction::l1(data.weights.clone())?;
    let spec = ProblemSpec::new(
        CocoerciveMap::gradient(SmoothQuadratic::single(QuadraticTerm::new(
            data.hessian.clone(),
            data.linear.clone(),
            0.0,
        )?)),
        MonotoneBlock::Subdifferential(g.clone()),
        LinearMap::identity(n),
        OrthoProjector::full(n),
        SpdOperator::identity(n),
    )?;
    let blocks = [DualBlock {
        weight: 1.0,
        l: Matrix::identity(n, n),
        g: &g,
    }];
    let kkt = |x: &Vector, u: &[Vector]| kkt_residual(x, &u[0], &spec).map(|r| r.max());
    let (x, _) = dual_proximal_gradient(&data.hessian, &data.linear, &blocks, kkt, ITERATIVE_ORACLE_TOL)?;
    Ok(x)
}

// ---------------------------------------------------------------- dual oracle

/// One block `ω g(L x)` of a strongly convex composite problem.
struct DualBlock<'a> {
    weight: f64,
    l: Matrix,
    g: &'a ProxFunction,
}

/// `prox_{λ g*}` in closed form for the functions the iterative oracle
/// supports, written out directly from the conjugates.
fn closed_form_conjugate_prox(g: &ProxFunction, lambda: f64, z: &Vector) -> Result<Vector> {
    Ok(match g {
        // g* = indicator of [-w, w]
        ProxFunction::WeightedL1 { weights } => z.zip_map(weights, |zi, wi| zi.clamp(-wi, wi)),
        // g* = indicator of [lo, hi]
        ProxFunction::BoxSupport { lo, hi } => {
            Vector::from_fn(z.len(), |i, _| z[i].clamp(lo[i], hi[i]))
        }
        // g* = ½‖u‖² + ⟨u, b⟩
        ProxFunction::SquaredDistance { center } => (z - center * lambda) / (1.0 + lambda),
        other => {
            return Err(Error::Oracle(format!(
                "dual oracle has no closed-form conjugate prox for {other:?}"
            )))
        }
    })
}

/// Minimizes `h*(-Σ ω_i L_i' u_i) + Σ ω_i g_i*(u_i)` by proximal gradient,
/// for `h(x) = ½x'Hx - c'x` with `H ≻ 0`. Returns `x(u)` and the `u_i`;
/// stops once `kkt(x, u) ≤ tol / 10` (checked every 100 steps) and fails
/// unless `kkt ≤ tol` within the step cap.
fn dual_proximal_gradient(
    hessian: &Matrix,
    linear: &Vector,
    blocks: &[DualBlock<'_>],
    kkt: impl Fn(&Vector, &[Vector]) -> Result<f64>,
    tol: f64,
) -> Result<(Vector, Vec<Vector>)> {
    let h_inv = hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Oracle("dual oracle needs a positive definite Hessian".into()))?
        .inverse();
    let total: usize = blocks.iter().map(|b| b.l.nrows()).sum();
    let n = hessian.nrows();
    let mut stacked = Matrix::zeros(total, n);
    let mut at = 0;
    for b in blocks {
        stacked.view_mut((at, 0), (b.l.nrows(), n)).copy_from(&(&b.l * b.weight));
        at += b.l.nrows();
    }
    let lip = (&stacked * &h_inv * stacked.transpose()).symmetric_eigen().eigenvalues.max();
    let t = 1.0 / lip;
    let primal = |u: &[Vector]| {
        let mut s = linear.clone();
        for (b, ui) in blocks.iter().zip(u) {
            s -= b.l.transpose() * ui * b.weight;
        }
        &h_inv * s
    };
    let mut u: Vec<Vector> = blocks.iter().map(|b| Vector::zeros(b.l.nrows())).collect();
    let mut last = f64::INFINITY;
    for step in 0..ITERATIVE_ORACLE_MAX_STEPS {
        let x = primal(&u);
        if step % 100 == 0 {
            last = kkt(&x, &u)?;
            if last <= tol / 10.0 {
                return Ok((x, u));
            }
        }
        for (b, ui) in blocks.iter().zip(u.iter_mut()) {
            let grad = -(&b.l * &x) * b.weight;
            let lambda = t * b.weight;
            *ui = closed_form_conjugate_prox(b.g, lambda, &(&*ui - grad * t))?;
        }
    }
    let x = primal(&u);
    last = last.min(kkt(&x, &u)?);
    if last <= tol {
        Ok((x, u))
    } else {
        Err(Error::Oracle(format!(
            "dual proximal gradient reached KKT residual {last:.3e} after {ITERATIVE_ORACLE_MAX_STEPS} steps"
        )))
    }
}

type CachedSolution = (Vector, Vec<Vector>);

fn oracle_cache() -> &'static Mutex<HashMap<(String, ZooParams), CachedSolution>> {
    static CACHE: OnceLock<Mutex<HashMap<(String, ZooParams), CachedSolution>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cached(
    name: &str,
    params: &ZooParams,
    compute: impl FnOnce() -> Result<CachedSolution>,
) -> Result<CachedSolution> {
    let key = (name.to_string(), params.clone());
    if let Some(hit) = oracle_cache().lock().expect("cache lock").get(&key) {
        return Ok(hit.clone());
    }
    let sol = compute()?;
    oracle_cache().lock().expect("cache lock").insert(key, sol.clone());
    Ok(sol)
}

/// Whether the dual oracle applies: `H ≻ 0`, `V` the whole space and every
/// `g_i` with a closed-form conjugate prox.
fn dual_oracle_applies(h: &SmoothQuadratic, projector: &OrthoProjector, gs: &[ProxFunction]) -> bool {
    matches!(projector, OrthoProjector::Full(_))
        && h.components().len() == 1
        && h.hessian().cholesky().is_some()
        && gs.iter().all(|g| {
            matches!(
                g,
                ProxFunction::WeightedL1 { .. } | ProxFunction::BoxSupport { .. } | ProxFunction::SquaredDistance { .. }
            )
        })
}

/// Fallback oracle for problems outside the dual oracle's reach: a long
/// deterministic run at half the default step sizes, accepted under the same
/// KKT tolerance.
fn long_run_oracle(spec: &ProblemSpec, tau_max: f64) -> Result<(Vector, Vector)> {
    let beta = spec.beta();
    let gamma = if beta.is_finite() { 0.5 * beta } else { 1.0 };
    let sched = Schedules::constant(gamma, 0.5 * tau_max, beta);
    let oracle = StochasticOracle::deterministic(spec.b.clone());
    let mut state = PapcState::zeros(spec);
    let mut res = f64::INFINITY;
    for n in 0..ITERATIVE_ORACLE_MAX_STEPS {
        if n % 1000 == 0 {
            res = kkt_residual(&state.x, &state.v, spec)?.max();
            if res <= ITERATIVE_ORACLE_TOL / 10.0 {
                break;
            }
        }
        state = papc_step(&state, spec, &sched, &oracle)?;
    }
    res = res.min(kkt_residual(&state.x, &state.v, spec)?.max());
    if res > ITERATIVE_ORACLE_TOL {
        return Err(Error::Oracle(format!(
            "long-run oracle reached KKT residual {res:.3e} after {ITERATIVE_ORACLE_MAX_STEPS} steps"
        )));
    }
    Ok((state.x, state.v))
}

fn tau_max_of(spec: &ProblemSpec, cp: Option<&CompositeProblem>) -> Result<f64> {
    let lifted = admissible_tau(&spec.metric, &spec.l, &spec.projector, 1.0, &spec.dual_geometry)?;
    Ok(match cp {
        Some(cp) => cp
            .blocks
            .iter()
            .map(|b| 1.0 / (b.sigma * b.l.norm().powi(2)))
            .fold(lifted, f64::min),
        None => lifted,
    })
}

/// Instance `h + ι_V + Σ ω_i g_i(L_i x)` with its reference solution; the
/// product-space form is used when there are several blocks.
fn composite_instance(
    name: String,
    cache_key: String,
    params: &ZooParams,
    h: SmoothQuadratic,
    weights: Vec<f64>,
    blocks: Vec<CompositeBlock>,
    projector: OrthoProjector,
) -> Result<ZooInstance> {
    let cp = CompositeProblem::new(weights.clone(), CocoerciveMap::gradient(h.clone()), blocks)?;
    let single = cp.m() == 1;
    let spec = if single {
        let b = &cp.blocks[0];
        ProblemSpec::new(
            cp.c.clone(),
            b.a.clone(),
            b.l.clone(),
            projector.clone(),
            SpdOperator::scalar(b.l.rows(), b.sigma)?,
        )?
    } else {
        if !matches!(projector, OrthoProjector::Full(_)) {
            return Err(Error::InvalidArgument(
                "problems with several blocks take no subspace constraint".into(),
            ));
        }
        lift(&cp)?
    };
    let gs: Vec<ProxFunction> = cp
        .blocks
        .iter()
        .map(|b| {
            b.a.as_function()
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("blocks must be subdifferentials".into()))
        })
        .collect::<Result<_>>()?;
    let (x_flat, u) = cached(&cache_key, params, || {
        if !dual_oracle_applies(&h, &projector, &gs) {
            let (x, v) = long_run_oracle(&spec, tau_max_of(&spec, (!single).then_some(&cp))?)?;
            let x = if single { x } else { spec.projector.apply(&x).rows(0, cp.dim()).into_owned() };
            let u = if single { vec![v] } else { cp.split_duals(&v) };
            return Ok((x, u));
        }
        let term = &h.components()[0];
        let dual_blocks: Vec<DualBlock> = cp
            .blocks
            .iter()
            .zip(&gs)
            .zip(&weights)
            .map(|((b, g), w)| DualBlock {
                weight: *w,
                l: b.l.to_dense(),
                g,
            })
            .collect();
        let kkt = |x: &Vector, u: &[Vector]| {
            let (xs, vs) = if single {
                (x.clone(), u[0].clone())
            } else {
                (cp.replicate(x), cp.stack_duals(u))
            };
            kkt_residual(&xs, &vs, &spec).map(|r| r.max())
        };
        dual_proximal_gradient(&term.hessian, &term.linear, &dual_blocks, kkt, ITERATIVE_ORACLE_TOL)
    })?;
    let saddle = SaddleFunction {
        h: h.clone(),
        terms: cp
            .blocks
            .iter()
            .zip(gs)
            .zip(&weights)
            .map(|((b, g), w)| SaddleTerm {
                weight: *w,
                g,
                l: b.l.clone(),
            })
            .collect(),
        projector,
    };
    let (x_bar, v_bar) = if single {
        (x_flat, u[0].clone())
    } else {
        (cp.replicate(&x_flat), cp.stack_duals(&u))
    };
    Ok(ZooInstance {
        name,
        spec,
        composite: (!single).then_some(cp),
        h,
        saddle,
        x_bar,
        v_bar,
    })
}

// ---------------------------------------------------------------- custom

/// One `ω g(L x)` term of a problem defined in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomBlock {
    /// Prox tag, e.g. `l1(weight=0.5)`.
    pub g: String,
    /// `identity`, `difference` or `matrix:<path>`.
    #[serde(rename = "L", default = "identity_map")]
    pub l: String,
    #[serde(default = "one")]
    pub weight: f64,
    /// Dual preconditioner `U = σ Id`.
    #[serde(default = "one")]
    pub sigma: f64,
}

fn identity_map() -> String {
    "identity".into()
}

fn one() -> f64 {
    1.0
}

/// A problem `h + ι_V + Σ ω_i g_i(L_i x)` given by tags and matrix files.
#[derive(Clone, Debug, PartialEq)]
pub struct CustomProblem {
    pub dim: usize,
    /// Smooth term tag: `quadratic(A=<path>, b=..)`, `sqdist(center=..)` or `zero`.
    pub h: String,
    /// `full | matrix:<path> | basis:<path>`.
    pub projector: String,
    pub blocks: Vec<CustomBlock>,
}

fn linear_map_from_spec(spec: &str, dim: usize, base_dir: &Path) -> Result<LinearMap> {
    let spec = spec.trim();
    let map = match spec {
        "identity" => LinearMap::identity(dim),
        "difference" => LinearMap::forward_difference(dim)?,
        _ => match spec.strip_prefix("matrix:") {
            Some(path) => LinearMap::dense(read_matrix(&base_dir.join(path.trim()))?),
            None => {
                return Err(Error::Unknown {
                    kind: "linear map",
                    name: spec.to_string(),
                    available: "identity, difference, matrix:<path>".into(),
                })
            }
        },
    };
    if map.cols() != dim {
        return Err(Error::DimensionMismatch {
            context: "L columns vs problem dimension",
            expected: dim,
            found: map.cols(),
        });
    }
    Ok(map)
}

fn smooth_from_tag(tag: &str, dim: usize, base_dir: &Path) -> Result<SmoothQuadratic> {
    let term = match ProxFunction::from_tag(tag, dim, base_dir)? {
        ProxFunction::LeastSquares { a, b } => QuadraticTerm::least_squares(&a, &b)?,
        ProxFunction::SquaredDistance { center } => {
            let c = 0.5 * center.norm_squared();
            QuadraticTerm::new(Matrix::identity(dim, dim), center, c)?
        }
        ProxFunction::Zero { .. } => QuadraticTerm::new(Matrix::zeros(dim, dim), Vector::zeros(dim), 0.0)?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "h must be a smooth quadratic (quadratic, sqdist or zero), got {other:?}"
            )))
        }
    };
    Ok(SmoothQuadratic::single(term))
}

/// Builds a config-defined problem; file paths are relative to `base_dir`.
pub fn custom(def: &CustomProblem, base_dir: &Path) -> Result<ZooInstance> {
    if def.blocks.is_empty() {
        return Err(Error::InvalidArgument("a custom problem needs at least one block".into()));
    }
    let h = smooth_from_tag(&def.h, def.dim, base_dir)?;
    let projector = OrthoProjector::from_spec(&def.projector, def.dim, base_dir)?;
    let mut weights = Vec::with_capacity(def.blocks.len());
    let mut blocks = Vec::with_capacity(def.blocks.len());
    for b in &def.blocks {
        let l = linear_map_from_spec(&b.l, def.dim, base_dir)?;
        let g = ProxFunction::from_tag(&b.g, l.rows(), base_dir)?;
        weights.push(b.weight);
        blocks.push(CompositeBlock {
            a: MonotoneBlock::Subdifferential(g),
            l,
            sigma: b.sigma,
        });
    }
    let key = format!("custom:{}:{def:?}", base_dir.display());
    let inst = composite_instance("custom".into(), key, &ZooParams::default(), h, weights, blocks, projector)?;
    let res = kkt_residual(&inst.x_bar, &inst.v_bar, &inst.spec)?;
    if !(res.max() <= ORACLE_KKT_TOL) {
        return Err(Error::Oracle(format!("custom: oracle KKT residual {:.3e}", res.max())));
    }
    Ok(inst)
}

// ---------------------------------------------------------------- fused

fn build_fused(params: &ZooParams) -> Result<ZooInstance> {
    let n = dim_in(params, 12, 2, 30, "fused")?;
    let mut r = rng(params, 0xf05ed);
    let noise = gaussian_vector(&mut r, n) * 0.1;
    let signal = Vector::from_fn(n, |i, _| match 3 * i / n {
        0 => 0.0,
        1 => 2.0,
        _ => 1.0,
    });
    fused_from_signal(params, &(signal + noise), 0.5)
}

/// `½‖x - a‖² + λ Σ |x_{i+1} - x_i|`.
pub fn fused_from_signal(params: &ZooParams, signal: &Vector, lambda: f64) -> Result<ZooInstance> {
    let n = signal.len();
    let h = SmoothQuadratic::single(QuadraticTerm::new(
        Matrix::identity(n, n),
        signal.clone(),
        0.5 * signal.norm_squared(),
    )?);
    let blocks = vec![CompositeBlock {
        a: MonotoneBlock::Subdifferential(ProxFunction::l1(Vector::from_element(n - 1, lambda))?),
        l: LinearMap::forward_difference(n)?,
        sigma: 1.0,
    }];
    composite_instance("fused".into(), "fused".into(), params, h, vec![1.0], blocks, OrthoProjector::full(n))
}

// ---------------------------------------------------------------- multi

fn build_multi(params: &ZooParams) -> Result<ZooInstance> {
    let n = dim_in(params, 5, 2, 12, "multi")?;
    let mut r = rng(params, 0x3b1);
    let m = random_matrix(&mut r, n, n);
    let hessian = m.transpose() * &m * (0.3 / n as f64) + Matrix::identity(n, n);
    let linear = gaussian_vector(&mut r, n) * 1.5;
    let h = SmoothQuadratic::single(QuadraticTerm::new(hessian, linear, 0.0)?);
    let k = n.div_ceil(2) + 1;
    let l3 = random_matrix(&mut r, k, n) * (0.8 / (n as f64).sqrt());
    let b3 = gaussian_vector(&mut r, k);
    let blocks = vec![
        CompositeBlock {
            a: MonotoneBlock::Subdifferential(ProxFunction::l1(Vector::from_element(n, 0.4))?),
            l: LinearMap::identity(n),
            sigma: 1.0,
        },
        CompositeBlock {
            a: MonotoneBlock::Subdifferential(ProxFunction::box_support(
                Vector::from_element(n - 1, -0.5),
                Vector::from_element(n - 1, 0.2),
            )?),
            l: LinearMap::forward_difference(n)?,
            sigma: 0.5,
        },
        CompositeBlock {
            a: MonotoneBlock::Subdifferential(ProxFunction::squared_distance(b3)),
            l: LinearMap::dense(l3),
            sigma: 1.0,
        },
    ];
    composite_instance(
        "multi".into(),
        "multi".into(),
        params,
        h,
        vec![0.3, 0.3, 0.4],
        blocks,
        OrthoProjector::full(n),
    )
}

/// Weighted primal geometry of the instance (Euclidean unless lifted).
pub fn primal_geometry(inst: &ZooInstance) -> &Geometry {
    &inst.spec.primal_geometry
}
