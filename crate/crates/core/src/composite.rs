//! Sums of composite terms via the product space.
//!
//! `0 ∈ Σ_i ω_i L_i* A_i(L_i x) + C x` lifts to a single inclusion on `H^m`
//! with the `ω`-weighted inner product, the diagonal subspace as `V`, and
//! block-diagonal `A`, `L`, `U`. The flat iteration below never forms the
//! lifted objects; [`lift_flat_equivalence`] runs both side by side.

use log::warn;

use crate::error::{check_dim, Error, Result};
use crate::linop::{
    validate_tau, Geometry, LinearMap, LinearOperator, OrthoProjector, SpdOperator,
    TauCertificate, Vector,
};
use crate::monotone::{
    conjugate_prox_via_moreau, inverse_resolvent, CocoerciveMap, MonotoneBlock,
};
use crate::solver::{
    self, validate_hypotheses, ErgodicAccumulator, HypothesisReport, PapcState, ProblemSpec,
    Schedules, Variant,
};
use crate::stochastic::{Regime, StochasticOracle};

/// One composite term `ω_i L_i* A_i L_i` with dual preconditioner `σ_i Id`.
#[derive(Clone, Debug)]
pub struct CompositeBlock {
    pub a: MonotoneBlock,
    pub l: LinearMap,
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct CompositeProblem {
    pub weights: Vec<f64>,
    pub c: CocoerciveMap,
    pub blocks: Vec<CompositeBlock>,
}

impl CompositeProblem {
    pub fn new(weights: Vec<f64>, c: CocoerciveMap, blocks: Vec<CompositeBlock>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("composite problem needs at least one block".into()));
        }
        check_dim("composite: weights vs blocks", blocks.len(), weights.len())?;
        if weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::InvalidArgument("block weights must lie in (0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("block weights sum to {total}, not 1")));
        }
        let d = c.dim();
        for b in &blocks {
            check_dim("composite: L_i domain", d, b.l.cols())?;
            check_dim("composite: A_i vs L_i codomain", b.l.rows(), b.a.dim())?;
            if b.l.is_zero() {
                return Err(Error::InvalidArgument("composite blocks need nonzero L_i".into()));
            }
            if !(b.sigma > 0.0 && b.sigma.is_finite()) {
                return Err(Error::NotSpd(format!("block scalar {} is not positive", b.sigma)));
            }
        }
        Ok(Self { weights, c, blocks })
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    pub fn dual_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.l.rows()).collect()
    }

    pub fn mu(&self) -> f64 {
        self.c.beta()
    }

    /// Dual geometry of the lifted space: block `i` carries weight `ω_i`.
    pub fn dual_geometry(&self) -> Geometry {
        Geometry::Weighted(Vector::from_iterator(
            self.dual_dims().iter().sum(),
            self.blocks
                .iter()
                .zip(&self.weights)
                .flat_map(|(b, w)| std::iter::repeat_n(*w, b.l.rows())),
        ))
    }

    /// Stacks per-block dual vectors.
    pub fn stack_duals(&self, vs: &[Vector]) -> Vector {
        let total = vs.iter().map(|v| v.len()).sum();
        Vector::from_iterator(total, vs.iter().flat_map(|v| v.iter().copied()))
    }

    /// Splits a stacked dual vector into blocks.
    pub fn split_duals(&self, v: &Vector) -> Vec<Vector> {
        let mut at = 0;
        self.dual_dims()
            .into_iter()
            .map(|n| {
                let out = v.rows(at, n).into_owned();
                at += n;
                out
            })
            .collect()
    }

    /// `(x, …, x)`.
    pub fn replicate(&self, x: &Vector) -> Vector {
        let d = x.len();
        Vector::from_iterator(d * self.m(), (0..self.m()).flat_map(|_| x.iter().copied()))
    }
}

/// The product-space problem.
pub fn lift(cp: &CompositeProblem) -> Result<ProblemSpec> {
    let projector = OrthoProjector::averaging(cp.weights.clone(), cp.dim())?;
    let l = LinearMap::block_diagonal(cp.blocks.iter().map(|b| b.l.clone()).collect())?;
    let a = MonotoneBlock::Product(cp.blocks.iter().map(|b| b.a.clone()).collect());
    let metric = SpdOperator::block_scalar(cp.blocks.iter().map(|b| (b.l.rows(), b.sigma)).collect())?;
    let b = CocoerciveMap::replicated(cp.c.clone(), cp.m());
    Ok(ProblemSpec::new(b, a, l, projector, metric)?.with_dual_geometry(cp.dual_geometry()))
}

/// Iterates of the flat composite method.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeState {
    pub n: usize,
    pub x: Vector,
    pub v: Vec<Vector>,
    pub p: Vector,
    pub last_r: Vector,
}

impl CompositeState {
    pub fn new(cp: &CompositeProblem, x0: &Vector, v0: &[Vector]) -> Result<Self> {
        check_dim("composite: x0", cp.dim(), x0.len())?;
        check_dim("composite: number of duals", cp.m(), v0.len())?;
        for (v, n) in v0.iter().zip(cp.dual_dims()) {
            check_dim("composite: dual block", n, v.len())?;
        }
        Ok(Self {
            n: 0,
            x: x0.clone(),
            v: v0.to_vec(),
            p: x0.clone(),
            last_r: Vector::zeros(x0.len()),
        })
    }

    pub fn zeros(cp: &CompositeProblem) -> Self {
        let v0: Vec<Vector> = cp.dual_dims().into_iter().map(Vector::zeros).collect();
        Self::new(cp, &Vector::zeros(cp.dim()), &v0).expect("dimensions match by construction")
    }

    /// The lifted state `((x, …, x), (v_1, …, v_m))`.
    pub fn lifted(&self, cp: &CompositeProblem) -> PapcState {
        PapcState {
            n: self.n,
            x: cp.replicate(&self.x),
            v: cp.stack_duals(&self.v),
            p: cp.replicate(&self.p),
            last_r: cp.replicate(&self.last_r),
        }
    }
}

fn weighted_adjoint_sum(cp: &CompositeProblem, v: &[Vector], r: &Vector) -> Vector {
    let mut s = Vector::zeros(cp.dim());
    for ((b, w), vi) in cp.blocks.iter().zip(&cp.weights).zip(v) {
        s.axpy(*w, &(b.l.adjoint_apply(vi) + r), 1.0);
    }
    s
}

fn composite_step_with(
    state: &CompositeState,
    cp: &CompositeProblem,
    sched: &Schedules,
    oracle: &StochasticOracle,
    dual: impl Fn(&CompositeBlock, f64, &Vector) -> Result<Vector>,
) -> Result<CompositeState> {
    let n = state.n;
    let gamma = sched.gamma(n);
    let c = sched.tau(n) / gamma;
    let r = oracle.sample(&state.x, n)?;
    let finite = |v: &Vector, q| {
        if v.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence {
                iteration: n,
                quantity: q,
            })
        }
    };
    finite(&r, "r")?;
    let p = &state.x - weighted_adjoint_sum(cp, &state.v, &r) * gamma;
    finite(&p, "p")?;
    let v = cp
        .blocks
        .iter()
        .zip(&state.v)
        .map(|(b, vi)| {
            let y = vi + (b.l.apply(&p) * b.sigma) * c;
            let out = dual(b, c * b.sigma, &y)?;
            finite(&out, "v")?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let x = &state.x - weighted_adjoint_sum(cp, &v, &r) * gamma;
    finite(&x, "x")?;
    Ok(CompositeState {
        n: n + 1,
        x,
        v,
        p,
        last_r: r,
    })
}

/// One step of the flat composite method:
///
/// ```text
/// p_n       = x_n - γ_n Σ ω_i (L_i* v_{i,n} + r_n)
/// v_{i,n+1} = J_{(τ_n/γ_n) σ_i A_i^{-1}}(v_{i,n} + (τ_n/γ_n) σ_i L_i p_n)
/// x_{n+1}   = x_n - γ_n Σ ω_i (L_i* v_{i,n+1} + r_n)
/// ```
pub fn composite_step(
    state: &CompositeState,
    cp: &CompositeProblem,
    sched: &Schedules,
    oracle: &StochasticOracle,
) -> Result<CompositeState> {
    composite_step_with(state, cp, sched, oracle, |b, lambda, y| {
        inverse_resolvent(&b.a, lambda, y)
    })
}

/// [`composite_step`] with `A_i = ∂g_i`, the dual lines computed as
/// `prox_{(τ_n σ_i/γ_n) g_i*}` by the Moreau decomposition.
pub fn structured_min_step(
    state: &CompositeState,
    cp: &CompositeProblem,
    sched: &Schedules,
    oracle: &StochasticOracle,
) -> Result<CompositeState> {
    if !cp.blocks.iter().all(|b| b.a.as_function().is_some()) {
        return Err(Error::InvalidArgument(
            "structured minimization needs every A_i = ∂g_i".into(),
        ));
    }
    composite_step_with(state, cp, sched, oracle, |b, lambda, y| {
        conjugate_prox_via_moreau(b.a.as_function().expect("checked"), lambda, y)
    })
}

pub fn flat_step(
    variant: Variant,
    state: &CompositeState,
    cp: &CompositeProblem,
    sched: &Schedules,
    oracle: &StochasticOracle,
) -> Result<CompositeState> {
    match variant {
        Variant::Papc => composite_step(state, cp, sched, oracle),
        Variant::Saddle => structured_min_step(state, cp, sched, oracle),
    }
}

/// Final state and ergodic averages of a flat run.
#[derive(Clone, Debug)]
pub struct FlatRun {
    pub state: CompositeState,
    /// Averages of `x_{n+1}` and of the stacked duals.
    pub ergodic: ErgodicAccumulator,
}

pub fn run_flat(
    cp: &CompositeProblem,
    sched: &Schedules,
    oracle: &StochasticOracle,
    start: CompositeState,
    steps: usize,
    variant: Variant,
) -> Result<FlatRun> {
    let mut state = start;
    let mut ergodic = ErgodicAccumulator::new(cp.dim(), cp.dual_dims().iter().sum());
    for _ in 0..steps {
        let gamma = sched.gamma(state.n);
        state = flat_step(variant, &state, cp, sched, oracle)?;
        ergodic.update(gamma, &state.x, &cp.stack_duals(&state.v))?;
    }
    Ok(FlatRun { state, ergodic })
}

/// Largest relative deviation between the flat method on `cp` and the lifted
/// iteration on `lifted`, over `steps` lockstep iterations from zero.
///
/// Both paths share `oracle`; the lifted path replicates each draw across the
/// copies. Deviations are measured coordinatewise, relative to
/// `1 + max |coordinate|`.
pub fn lockstep_deviation(
    cp: &CompositeProblem,
    lifted: &ProblemSpec,
    sched: &Schedules,
    oracle: &StochasticOracle,
    steps: usize,
    variant: Variant,
) -> Result<f64> {
    let lifted_oracle = oracle.clone().replicated(cp.m());
    let mut flat = CompositeState::zeros(cp);
    let mut big = PapcState::zeros(lifted);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        flat = flat_step(variant, &flat, cp, sched, oracle)?;
        big = solver::step(variant, &big, lifted, sched, &lifted_oracle)?;
        let fx = cp.replicate(&flat.x);
        let fv = cp.stack_duals(&flat.v);
        let scale = 1.0 + fx.amax().max(fv.amax()).max(big.x.amax()).max(big.v.amax());
        let dev = (&fx - &big.x).amax().max((&fv - &big.v).amax());
        worst = worst.max(dev / scale);
    }
    Ok(worst)
}

/// [`lockstep_deviation`] against `lift(cp)`.
pub fn lift_flat_equivalence(
    cp: &CompositeProblem,
    sched: &Schedules,
    oracle: &StochasticOracle,
    steps: usize,
    variant: Variant,
) -> Result<f64> {
    lockstep_deviation(cp, &lift(cp)?, sched, oracle, steps, variant)
}

/// Step-size certificates for the composite method: the blockwise conditions
/// `(τ σ_i)^{-1} - ‖L_i‖² > 0` and the hypotheses of the lifted problem.
#[derive(Clone, Debug)]
pub struct CompositeValidation {
    pub blockwise: Vec<TauCertificate>,
    pub lifted: HypothesisReport,
    /// Blockwise and lifted tau checks disagree.
    pub discrepancy: bool,
}

impl CompositeValidation {
    pub fn passed(&self) -> bool {
        self.blockwise.iter().all(TauCertificate::accepted) && self.lifted.passed()
    }
}

pub fn validate_composite(
    cp: &CompositeProblem,
    sched: &Schedules,
    horizon: usize,
    regime: Regime,
) -> Result<CompositeValidation> {
    let margin = if regime == Regime::AlmostSure { 1e-6 } else { 0.0 };
    let blockwise = cp
        .blocks
        .iter()
        .map(|b| {
            validate_tau(
                &SpdOperator::scalar(b.l.rows(), b.sigma)?,
                &b.l,
                &OrthoProjector::full(cp.dim()),
                sched.tau_cap,
                margin,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let lifted = validate_hypotheses(&lift(cp)?, sched, horizon, regime)?;
    let block_ok = blockwise.iter().all(TauCertificate::accepted);
    let lifted_ok = !lifted.failed("tau admissible");
    let discrepancy = block_ok != lifted_ok;
    if discrepancy {
        warn!(
            "blockwise tau check ({}) and lifted tau check ({}) disagree; the stricter one gates the run",
            if block_ok { "pass" } else { "fail" },
            if lifted_ok { "pass" } else { "fail" },
        );
    }
    Ok(CompositeValidation {
        blockwise,
        lifted,
        discrepancy,
    })
}

/// Residuals of the dual inclusion at `(x, v_1, …, v_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeResiduals {
    /// `‖Σ ω_i L_i* v_i + C x‖`.
    pub stationarity: f64,
    /// `‖v_i - J_{A_i^{-1}}(v_i + L_i x)‖` per block.
    pub blocks: Vec<f64>,
}

pub fn composite_residuals(cp: &CompositeProblem, x: &Vector, v: &[Vector]) -> Result<CompositeResiduals> {
    check_dim("composite residuals: x", cp.dim(), x.len())?;
    check_dim("composite residuals: duals", cp.m(), v.len())?;
    let mut s = cp.c.apply(x);
    for ((b, w), vi) in cp.blocks.iter().zip(&cp.weights).zip(v) {
        s.axpy(*w, &b.l.adjoint_apply(vi), 1.0);
    }
    let blocks = cp
        .blocks
        .iter()
        .zip(v)
        .map(|(b, vi)| Ok((vi - inverse_resolvent(&b.a, 1.0, &(vi + b.l.apply(x)))?).norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompositeResiduals {
        stationarity: s.norm(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::Matrix;
    use crate::monotone::{ProxFunction, QuadraticTerm, SmoothQuadratic};
    use crate::stochastic::{NoiseModel, VarianceSchedule};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn quad(center: &[f64]) -> CocoerciveMap {
        let d = center.len();
        CocoerciveMap::gradient(SmoothQuadratic::single(
            QuadraticTerm::new(Matrix::identity(d, d), v(center), 0.0).unwrap(),
        ))
    }

    fn two_blocks(weights: Vec<f64>) -> CompositeProblem {
        CompositeProblem::new(
            weights,
            quad(&[3.0, -1.0, 0.5]),
            vec![
                CompositeBlock {
                    a: MonotoneBlock::Subdifferential(ProxFunction::l1(v(&[0.5, 0.5, 0.5])).unwrap()),
                    l: LinearMap::identity(3),
                    sigma: 1.0,
                },
                CompositeBlock {
                    a: MonotoneBlock::Subdifferential(ProxFunction::l1(v(&[1.0, 1.0])).unwrap()),
                    l: LinearMap::forward_difference(3).unwrap(),
                    sigma: 0.5,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn averaging_projector_examples() {
        let p = OrthoProjector::averaging(vec![0.5, 0.5], 1).unwrap();
        assert_eq!(p.apply(&v(&[1.0, 3.0])), v(&[2.0, 2.0]));
        let p = OrthoProjector::averaging(vec![0.25, 0.75], 1).unwrap();
        assert_eq!(p.apply(&v(&[4.0, 0.0])), v(&[1.0, 1.0]));
    }

    #[test]
    fn single_block_lift_is_the_base_problem() {
        let cp = CompositeProblem::new(
            vec![1.0],
            quad(&[1.0, 2.0]),
            vec![CompositeBlock {
                a: MonotoneBlock::Subdifferential(ProxFunction::l1(v(&[1.0, 1.0])).unwrap()),
                l: LinearMap::identity(2),
                sigma: 1.0,
            }],
        )
        .unwrap();
        let spec = lift(&cp).unwrap();
        let x = v(&[0.3, -7.0]);
        assert_eq!(spec.projector.apply(&x), x);
        assert_eq!(spec.primal_geometry, Geometry::Weighted(v(&[1.0, 1.0])));
        let sched = Schedules::constant(0.9, 0.5, 1.0);
        let oracle = StochasticOracle::new(
            cp.c.clone(),
            NoiseModel::Gaussian(VarianceSchedule::Constant(0.3)),
            5,
        )
        .unwrap();
        for variant in [Variant::Papc, Variant::Saddle] {
            assert_eq!(lift_flat_equivalence(&cp, &sched, &oracle, 50, variant).unwrap(), 0.0);
        }
    }

    #[test]
    fn flat_and_lifted_paths_agree() {
        let cp = two_blocks(vec![0.4, 0.6]);
        let sched = Schedules::constant(0.9, 0.3, 1.0);
        assert!(validate_composite(&cp, &sched, 100, Regime::AlmostSure).unwrap().passed());
        for seed in 0..3 {
            let oracle = StochasticOracle::new(
                cp.c.clone(),
                NoiseModel::Gaussian(VarianceSchedule::Constant(0.1)),
                seed,
            )
            .unwrap();
            for variant in [Variant::Papc, Variant::Saddle] {
                let dev = lift_flat_equivalence(&cp, &sched, &oracle, 100, variant).unwrap();
                assert!(dev <= 1e-12, "seed {seed}: {dev:e}");
            }
        }
    }

    #[test]
    fn mismatched_weights_break_equivalence() {
        let cp = two_blocks(vec![0.4, 0.6]);
        let other = lift(&two_blocks(vec![0.7, 0.3])).unwrap();
        let sched = Schedules::constant(0.9, 0.3, 1.0);
        let oracle = StochasticOracle::deterministic(cp.c.clone());
        let dev = lockstep_deviation(&cp, &other, &sched, &oracle, 100, Variant::Papc).unwrap();
        assert!(dev > 1e-6, "{dev:e}");
    }

    #[test]
    fn zero_duals_reduce_to_gradient_descent() {
        // all g_i = 0: the conjugates are ι_{0}, so duals vanish and
        // x_{n+1} = x_n - γ ∇h(x_n).
        let cp = CompositeProblem::new(
            vec![0.5, 0.5],
            quad(&[2.0, -2.0]),
            vec![
                CompositeBlock {
                    a: MonotoneBlock::zero(2),
                    l: LinearMap::identity(2),
                    sigma: 1.0,
                },
                CompositeBlock {
                    a: MonotoneBlock::zero(1),
                    l: LinearMap::dense(Matrix::from_row_slice(1, 2, &[1.0, 1.0])),
                    sigma: 2.0,
                },
            ],
        )
        .unwrap();
        let sched = Schedules::constant(0.5, 0.1, 1.0);
        let oracle = StochasticOracle::deterministic(cp.c.clone());
        let mut s = CompositeState::new(&cp, &v(&[1.0, 1.0]), &[v(&[0.0, 0.0]), v(&[0.0])]).unwrap();
        let mut x = v(&[1.0, 1.0]);
        for _ in 0..20 {
            s = structured_min_step(&s, &cp, &sched, &oracle).unwrap();
            x = &x - (&x - v(&[2.0, -2.0])) * 0.5;
            assert!(s.v.iter().all(|vi| vi.iter().all(|c| *c == 0.0)));
            assert!((&s.x - &x).amax() < 1e-15);
        }
    }

    #[test]
    fn fixed_point_with_zero_gradient_and_duals() {
        let cp = two_blocks(vec![0.5, 0.5]);
        let cp = CompositeProblem {
            c: CocoerciveMap::zero(3),
            ..cp
        };
        let sched = Schedules::constant(0.5, 0.3, f64::INFINITY);
        let oracle = StochasticOracle::deterministic(cp.c.clone());
        let s0 = CompositeState::zeros(&cp);
        let s1 = composite_step(&s0, &cp, &sched, &oracle).unwrap();
        assert_eq!(s1.x, s0.x);
        assert_eq!(s1.v, s0.v);
    }

    #[test]
    fn single_block_structured_step_matches_saddle_step() {
        let g = ProxFunction::l1(v(&[1.0, 1.0])).unwrap();
        let c = quad(&[3.0, 0.1]);
        let cp = CompositeProblem::new(
            vec![1.0],
            c.clone(),
            vec![CompositeBlock {
                a: MonotoneBlock::Subdifferential(g.clone()),
                l: LinearMap::identity(2),
                sigma: 1.0,
            }],
        )
        .unwrap();
        let spec = ProblemSpec::new(
            c.clone(),
            MonotoneBlock::Subdifferential(g),
            LinearMap::identity(2),
            OrthoProjector::full(2),
            SpdOperator::identity(2),
        )
        .unwrap();
        let sched = Schedules::constant(0.9, 0.5, 1.0);
        let oracle = StochasticOracle::deterministic(c);
        let mut a = CompositeState::zeros(&cp);
        let mut b = PapcState::zeros(&spec);
        for _ in 0..30 {
            a = structured_min_step(&a, &cp, &sched, &oracle).unwrap();
            b = solver::saddle_step(&b, &spec, &sched, &oracle).unwrap();
            assert_eq!(a.x, b.x);
            assert_eq!(a.v[0], b.v);
        }
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let blocks = two_blocks(vec![0.5, 0.5]).blocks;
        assert!(CompositeProblem::new(vec![0.5, 0.6], quad(&[0.0, 0.0, 0.0]), blocks.clone()).is_err());
        assert!(CompositeProblem::new(vec![1.0], quad(&[0.0, 0.0, 0.0]), blocks.clone()).is_err());
        let mut zero_l = blocks;
        zero_l[0].l = LinearMap::zero(3, 3);
        assert!(CompositeProblem::new(vec![0.5, 0.5], quad(&[0.0, 0.0, 0.0]), zero_l).is_err());
    }
}
