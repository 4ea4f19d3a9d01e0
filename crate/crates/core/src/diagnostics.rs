//! Convergence measurements: KKT residuals, the Fejér quantity, the saddle
//! function and its ergodic gap bound, and log-log rate fits.

use crate::error::{check_dim, Error, Result};
use crate::linop::{weighted_norm_sq_in, LinearMap, LinearOperator, OrthoProjector, Vector};
use crate::monotone::{inverse_resolvent, CocoerciveMap, ExtReal, ProxFunction, SmoothQuadratic};
use crate::solver::{Checkpoint, HypothesisReport, ProblemSpec, Schedules, TracePoint};

/// Residuals of `-L* v ∈ B x + N_V x`, `L x ∈ A^{-1} v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResidual {
    /// `‖x - P_V x‖ + ‖P_V(B x + L* v)‖`.
    pub primal: f64,
    /// `‖v - J_{A^{-1}}(v + L x)‖`.
    pub dual: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual)
    }
}

/// KKT residuals, measured in the spec's primal and dual geometries.
pub fn kkt_residual(x: &Vector, v: &Vector, spec: &ProblemSpec) -> Result<KktResidual> {
    check_dim("kkt: x", spec.primal_dim(), x.len())?;
    check_dim("kkt: v", spec.dual_dim(), v.len())?;
    let gp = &spec.primal_geometry;
    let px = spec.projector.apply(x);
    let station = spec.projector.apply(&(spec.b.apply(x) + spec.l.adjoint_apply(v)));
    let primal = gp.norm(&(x - px)) + gp.norm(&station);
    let j = inverse_resolvent(&spec.a, 1.0, &(v + spec.l.apply(x)))?;
    let dual = spec.dual_geometry.norm(&(v - j));
    Ok(KktResidual { primal, dual })
}

/// One term `ω (⟨L x, v⟩ - g*(v))` of a saddle function.
#[derive(Clone, Debug)]
pub struct SaddleTerm {
    pub weight: f64,
    pub g: ProxFunction,
    pub l: LinearMap,
}

/// `K(x, v) = h(x) + ι_V(x) + Σ_i ω_i (⟨L_i x, v_i⟩ - g_i*(v_i))`, where `v`
/// stacks the `v_i`. A single term with weight 1 is the standard form.
#[derive(Clone, Debug)]
pub struct SaddleFunction {
    pub h: SmoothQuadratic,
    pub terms: Vec<SaddleTerm>,
    pub projector: OrthoProjector,
}

impl SaddleFunction {
    pub fn new(h: SmoothQuadratic, g: ProxFunction, l: LinearMap, projector: OrthoProjector) -> Result<Self> {
        check_dim("saddle: g vs L", l.rows(), g.dim())?;
        check_dim("saddle: h vs L", l.cols(), h.dim())?;
        check_dim("saddle: V vs L", l.cols(), projector.dim())?;
        Ok(Self {
            h,
            terms: vec![SaddleTerm { weight: 1.0, g, l }],
            projector,
        })
    }

    /// Saddle function of a spec with `B = ∇h` and `A = ∂g`.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let h = smooth_of(&spec.b)?;
        let g = spec
            .a
            .as_function()
            .ok_or_else(|| Error::InvalidArgument("saddle function needs A = ∂g".into()))?;
        Self::new(h, g.clone(), spec.l.clone(), spec.projector.clone())
    }

    pub fn dual_dim(&self) -> usize {
        self.terms.iter().map(|t| t.l.rows()).sum()
    }

    /// `K(x, v)`; `+∞` off `V` (tolerance `1e-10`), `-∞` off `dom g*`.
    pub fn value(&self, x: &Vector, v: &Vector) -> Result<ExtReal> {
        check_dim("saddle value: x", self.projector.dim(), x.len())?;
        check_dim("saddle value: v", self.dual_dim(), v.len())?;
        let in_v = self.projector.contains(x, 1e-10);
        let mut coupling = 0.0;
        let mut conj = ExtReal::Finite(0.0);
        let mut at = 0;
        for t in &self.terms {
            let n = t.l.rows();
            let vi = v.rows(at, n).into_owned();
            at += n;
            let gi = t.g.conjugate_value(&vi).ok_or_else(|| {
                Error::InvalidArgument(format!("no conjugate value oracle for {:?}", t.g))
            })?;
            coupling += t.weight * t.l.apply(x).dot(&vi);
            conj = match gi {
                ExtReal::Finite(c) => conj.checked_add(ExtReal::Finite(t.weight * c)).expect("no -inf terms"),
                other => conj.checked_add(other).expect("conjugates are proper"),
            };
        }
        match (in_v, conj) {
            (false, ExtReal::PosInf) => Err(Error::Indeterminate(
                "x is outside V and v is outside dom g*".into(),
            )),
            (false, _) => Ok(ExtReal::PosInf),
            (true, ExtReal::PosInf) => Ok(ExtReal::NegInf),
            (true, ExtReal::Finite(c)) => Ok(ExtReal::Finite(self.h.value(x) + coupling - c)),
            (true, ExtReal::NegInf) => unreachable!("conjugate of a proper function is > -inf"),
        }
    }
}

/// `K(x, v)` as a free function.
pub fn saddle_value(k: &SaddleFunction, x: &Vector, v: &Vector) -> Result<ExtReal> {
    k.value(x, v)
}

fn smooth_of(b: &CocoerciveMap) -> Result<SmoothQuadratic> {
    b.smooth()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("saddle function needs B = ∇h".into()))
}

/// Constants of the ergodic gap bound.
#[derive(Clone, Debug, PartialEq)]
pub struct GapConstant {
    /// `Σ γ_n² E‖r_n - ∇h(x_n)‖²`.
    pub c0: f64,
    pub gamma0: f64,
    pub tau0: f64,
    pub tau_cap: f64,
    pub norm_u: f64,
    pub norm_l: f64,
}

impl GapConstant {
    pub fn new(spec: &ProblemSpec, sched: &Schedules, c0: f64) -> Self {
        Self {
            c0,
            gamma0: sched.gamma(0),
            tau0: sched.tau(0),
            tau_cap: sched.tau_cap,
            norm_u: spec.metric.operator_norm(),
            norm_l: spec.l.norm(),
        }
    }

    /// `σ_n = γ_n ((τ_n γ_n ‖U‖)^{1/2} ‖L‖² + 1)`.
    pub fn sigma_n(&self, gamma_n: f64, tau_n: f64) -> f64 {
        gamma_n * ((tau_n * gamma_n * self.norm_u).sqrt() * self.norm_l.powi(2) + 1.0)
    }

    /// `c(x, v) = ‖x_0 - x‖² + γ_0² ‖v_0 - v‖²_{(τ_0 U)^{-1} - L P_V L*}
    ///            + 2 ((τ γ_0 ‖U‖)^{1/2} ‖L‖² + 1) c_0`.
    pub fn c_of(
        &self,
        spec: &ProblemSpec,
        x0: &Vector,
        v0: &Vector,
        x: &Vector,
        v: &Vector,
    ) -> Result<f64> {
        let primal = spec.primal_geometry.norm_sq(&(x0 - x));
        let dual = weighted_norm_sq_in(
            &(v0 - v),
            &spec.metric,
            self.tau0,
            self.gamma0,
            &spec.l,
            &spec.projector,
            &spec.dual_geometry,
        )?;
        let noise = 2.0 * ((self.tau_cap * self.gamma0 * self.norm_u).sqrt() * self.norm_l.powi(2) + 1.0) * self.c0;
        Ok(primal + dual + noise)
    }
}

/// One row of a gap table.
#[derive(Clone, Debug, PartialEq)]
pub struct GapRow {
    pub n: usize,
    /// `K(x̃_N, v) - K(x, ṽ_N)`, `None` when either value is infinite.
    pub gap: Option<f64>,
    pub bound: f64,
    pub sum_gamma: f64,
    /// Log-log slope of the gap over `[N/100, N]`, when enough rows exist.
    pub slope_window: Option<f64>,
}

/// Gap and bound `c(x, v) / (2 Σ_{n≤N} γ_n)` at every checkpoint.
pub fn gap_and_bound(
    checkpoints: &[Checkpoint],
    k: &SaddleFunction,
    reference: (&Vector, &Vector),
    c: f64,
) -> Result<Vec<GapRow>> {
    let (x, v) = reference;
    if !k.value(x, v)?.is_finite() {
        return Err(Error::Diagnostics(
            "gap reference needs x ∈ V and v ∈ dom g*".into(),
        ));
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for cp in checkpoints {
        let left = k.value(&cp.x_avg, v)?;
        let right = k.value(x, &cp.v_avg)?;
        let gap = match (left, right) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => Some(a - b),
            _ => None,
        };
        rows.push(GapRow {
            n: cp.n,
            gap,
            bound: c / (2.0 * cp.sum_gamma),
            sum_gamma: cp.sum_gamma,
            slope_window: None,
        });
    }
    fill_slopes(&mut rows);
    Ok(rows)
}

/// Fills `slope_window` of every row from the gaps over `[N/100, N]`.
pub fn fill_slopes(rows: &mut [GapRow]) {
    for i in 0..rows.len() {
        let hi = rows[i].n;
        let lo = hi / 100;
        let series: Vec<(f64, f64)> = rows[..=i]
            .iter()
            .filter(|r| r.n >= lo && r.n >= 1)
            .filter_map(|r| r.gap.map(|g| (r.n as f64, g)))
            .collect();
        rows[i].slope_window = rate_fit(&series, (lo.max(1) as f64, hi as f64)).ok();
    }
}

/// Smallest checkpoint `N` whose largest gap over the supplied saddle points
/// is at most `eps`; `Ok(None)` when never reached. One table per saddle
/// point, all over the same checkpoints.
pub fn epsilon_saddle_check(tables: &[Vec<GapRow>], eps: f64) -> Result<Option<usize>> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Diagnostics("epsilon-saddle check needs at least one saddle point".into()))?;
    if !(eps > 0.0) {
        return Ok(None);
    }
    for (i, row) in first.iter().enumerate() {
        let mut sup = f64::NEG_INFINITY;
        for t in tables {
            let r = t.get(i).filter(|r| r.n == row.n).ok_or_else(|| {
                Error::Diagnostics("gap tables do not share checkpoints".into())
            })?;
            sup = sup.max(r.gap.unwrap_or(f64::INFINITY));
        }
        if sup <= eps {
            return Ok(Some(row.n));
        }
    }
    Ok(None)
}

/// Smallest `N` with `α / (2 Σ_{n≤N} γ_n) ≤ ε` among `(N, Σγ)` pairs.
pub fn n_epsilon_from_bound(sums: &[(usize, f64)], alpha: f64, eps: f64) -> Option<usize> {
    if !(eps > 0.0) {
        return None;
    }
    sums.iter().find(|(_, s)| alpha / (2.0 * s) <= eps).map(|(n, _)| *n)
}

/// `Φ_n` along a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct FejerReport {
    pub phi: Vec<(usize, f64)>,
    /// Largest `Φ_{n+1} - Φ_n` over consecutive trace points.
    pub max_increase: f64,
    /// Whether `Φ_{n+1} ≤ Φ_n + 1e-10 (1 + Φ_0)` held throughout; only set
    /// when the assertion was requested.
    pub monotone: Option<bool>,
}

/// `Φ_n = ‖x_n - x̄‖² + ‖v_n - v̄‖²_{R_n}` with
/// `R_n = γ_n² ((τ_n U)^{-1} - L P_V L*)`.
///
/// `certificate` must be a passing hypothesis report when `assert_monotone`
/// is set; the decrease only holds for certified step sizes and zero noise.
pub fn fejer_tracker(
    trace: &[TracePoint],
    reference: (&Vector, &Vector),
    spec: &ProblemSpec,
    certificate: Option<&HypothesisReport>,
    assert_monotone: bool,
) -> Result<FejerReport> {
    if assert_monotone && !certificate.is_some_and(HypothesisReport::passed) {
        return Err(Error::Diagnostics(
            "no passing step-size certificate; refusing the monotonicity assertion".into(),
        ));
    }
    let (xb, vb) = reference;
    let phi = trace
        .iter()
        .map(|t| {
            let dv = weighted_norm_sq_in(
                &(&t.v - vb),
                &spec.metric,
                t.tau,
                t.gamma,
                &spec.l,
                &spec.projector,
                &spec.dual_geometry,
            )?;
            Ok((t.n, spec.primal_geometry.norm_sq(&(&t.x - xb)) + dv))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_increase = phi
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = assert_monotone.then(|| {
        let slack = 1e-10 * (1.0 + phi.first().map_or(0.0, |p| p.1));
        phi.windows(2).all(|w| w[1].1 <= w[0].1 + slack)
    });
    Ok(FejerReport {
        phi,
        max_increase,
        monotone,
    })
}

/// Partial sums `Σ_{k≤n} ‖B x_k - B x̄‖²` along a trace.
pub fn gradient_gap_sums(trace: &[TracePoint], b: &CocoerciveMap, x_bar: &Vector) -> Vec<f64> {
    let bx = b.apply(x_bar);
    let mut total = 0.0;
    trace
        .iter()
        .map(|t| {
            total += (b.apply(&t.x) - &bx).norm_squared();
            total
        })
        .collect()
}

/// Least-squares slope of `log(value)` against `log(N)` over `N` in
/// `window`. Non-positive values are skipped; fewer than 10 usable points is
/// an error.
pub fn rate_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(n, v)| *n >= window.0 && *n <= window.1 && *n > 0.0 && *v > 0.0)
        .map(|(n, v)| (n.ln(), v.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Diagnostics(format!(
            "rate fit needs 10 positive values in the window, found {}",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / k, b + y / k));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
    if sxx == 0.0 {
        return Err(Error::Diagnostics("rate fit window has a single abscissa".into()));
    }
    Ok(sxy / sxx)
}

/// Mean and standard error per checkpoint over seeds, for stochastic gap
/// tables. Rows with an infinite gap in any seed are skipped.
pub fn seed_average(tables: &[Vec<GapRow>]) -> Vec<(usize, f64, f64, f64)> {
    let Some(first) = tables.first() else {
        return Vec::new();
    };
    let k = tables.len() as f64;
    first
        .iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let gaps: Option<Vec<f64>> = tables.iter().map(|t| t.get(i).and_then(|r| r.gap)).collect();
            let gaps = gaps?;
            let mean = gaps.iter().sum::<f64>() / k;
            let se = if tables.len() > 1 {
                (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
            let bound = tables.iter().map(|t| t[i].bound).sum::<f64>() / k;
            Some((row.n, mean, se, bound))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{Matrix, SpdOperator};
    use crate::monotone::{MonotoneBlock, QuadraticTerm};
    use crate::stochastic::Regime;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn half_sq(dim: usize) -> SmoothQuadratic {
        SmoothQuadratic::single(QuadraticTerm::new(Matrix::identity(dim, dim), Vector::zeros(dim), 0.0).unwrap())
    }

    fn zero_spec(dim: usize) -> ProblemSpec {
        ProblemSpec::new(
            CocoerciveMap::zero(dim),
            MonotoneBlock::zero(dim),
            LinearMap::zero(dim, dim),
            OrthoProjector::full(dim),
            SpdOperator::identity(dim),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_spec_residuals() {
        let spec = zero_spec(2);
        let r = kkt_residual(&v(&[3.0, -1.0]), &v(&[0.0, 0.0]), &spec).unwrap();
        assert_eq!((r.primal, r.dual), (0.0, 0.0));
        // J_{A^{-1}} maps everything to 0 when A = 0
        let vv = v(&[0.6, 0.8]);
        let r = kkt_residual(&v(&[3.0, -1.0]), &vv, &spec).unwrap();
        let j = inverse_resolvent(&spec.a, 1.0, &vv).unwrap();
        assert_eq!(r.dual, (&vv - j).norm());
        assert_eq!(r.dual, 1.0);
    }

    #[test]
    fn primal_residual_sees_subspace_violation() {
        let p = OrthoProjector::from_spanning_set(Matrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let spec = ProblemSpec {
            projector: p,
            ..zero_spec(2)
        };
        let x = v(&[1.0, 2.0]);
        let r = kkt_residual(&x, &v(&[0.0, 0.0]), &spec).unwrap();
        assert!(r.primal >= 2.0);
    }

    #[test]
    fn saddle_values() {
        let k = SaddleFunction::new(
            SmoothQuadratic::single(QuadraticTerm::new(Matrix::zeros(1, 1), v(&[0.0]), 0.0).unwrap()),
            ProxFunction::singleton(v(&[0.0])),
            LinearMap::zero(1, 1),
            OrthoProjector::full(1),
        )
        .unwrap();
        assert_eq!(k.value(&v(&[2.0]), &v(&[-3.0])).unwrap(), ExtReal::Finite(0.0));

        let k = SaddleFunction::new(
            half_sq(1),
            ProxFunction::squared_distance(v(&[0.0])),
            LinearMap::identity(1),
            OrthoProjector::full(1),
        )
        .unwrap();
        assert_eq!(k.value(&v(&[1.0]), &v(&[1.0])).unwrap(), ExtReal::Finite(1.0));

        let p = OrthoProjector::from_spanning_set(Matrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
        let k = SaddleFunction::new(half_sq(2), ProxFunction::l1(v(&[1.0, 1.0])).unwrap(), LinearMap::identity(2), p)
            .unwrap();
        assert_eq!(k.value(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), ExtReal::PosInf);
        assert_eq!(k.value(&v(&[1.0, 1.0]), &v(&[2.0, 0.0])).unwrap(), ExtReal::NegInf);
        assert!(matches!(
            k.value(&v(&[1.0, 0.0]), &v(&[2.0, 0.0])),
            Err(Error::Indeterminate(_))
        ));
    }

    #[test]
    fn gap_is_zero_when_averages_equal_reference() {
        let k = SaddleFunction::new(
            half_sq(1),
            ProxFunction::squared_distance(v(&[0.0])),
            LinearMap::identity(1),
            OrthoProjector::full(1),
        )
        .unwrap();
        let cp = Checkpoint {
            n: 0,
            sum_gamma: 0.5,
            x_avg: v(&[0.3]),
            v_avg: v(&[-0.2]),
        };
        let rows = gap_and_bound(&[cp], &k, (&v(&[0.3]), &v(&[-0.2])), 1.0).unwrap();
        assert_eq!(rows[0].gap, Some(0.0));
        assert_eq!(rows[0].bound, 1.0);
    }

    #[test]
    fn constant_step_bound_has_unit_slope() {
        let gamma = 0.3;
        let c = 2.5;
        let series: Vec<(f64, f64)> = (1..=1000)
            .map(|n| (n as f64, c / (2.0 * gamma * (n as f64 + 1.0))))
            .collect();
        // bound_N = c / (2γ(N+1)); fit against N+1 for the exact power law
        let shifted: Vec<(f64, f64)> = series.iter().map(|(n, b)| (n + 1.0, *b)).collect();
        let slope = rate_fit(&shifted, (2.0, 1001.0)).unwrap();
        assert!((slope + 1.0).abs() < 1e-9);
    }

    #[test]
    fn rate_fit_examples() {
        let s: Vec<(f64, f64)> = (1..=50).map(|n| (n as f64, 7.0 / n as f64)).collect();
        assert!((rate_fit(&s, (1.0, 50.0)).unwrap() + 1.0).abs() < 1e-9);
        let s: Vec<(f64, f64)> = (1..=50).map(|n| (n as f64, 5.0)).collect();
        assert!(rate_fit(&s, (1.0, 50.0)).unwrap().abs() < 1e-12);
        let s: Vec<(f64, f64)> = (1..=50).map(|n| (n as f64, if n > 5 { -1.0 } else { 1.0 })).collect();
        assert!(rate_fit(&s, (1.0, 50.0)).is_err());
    }

    #[test]
    fn epsilon_examples() {
        let rows: Vec<GapRow> = [(0usize, 1.0), (10, 0.1), (100, 0.01), (1000, 1e-3)]
            .iter()
            .map(|&(n, g)| GapRow {
                n,
                gap: Some(g),
                bound: 2.0 * g,
                sum_gamma: n as f64,
                slope_window: None,
            })
            .collect();
        let tables = vec![rows];
        assert_eq!(epsilon_saddle_check(&tables, 1e-3).unwrap(), Some(1000));
        assert_eq!(epsilon_saddle_check(&tables, 0.05).unwrap(), Some(100));
        assert_eq!(epsilon_saddle_check(&tables, 1e300).unwrap(), Some(0));
        assert_eq!(epsilon_saddle_check(&tables, 0.0).unwrap(), None);
        assert!(epsilon_saddle_check(&[], 1.0).is_err());
        assert_eq!(n_epsilon_from_bound(&[(0, 1.0), (9, 10.0), (99, 100.0)], 2.0, 0.1), Some(9));
    }

    #[test]
    fn fejer_at_reference_is_zero_and_needs_certificate() {
        let spec = ProblemSpec::new(
            CocoerciveMap::gradient(half_sq(1)),
            MonotoneBlock::zero(1),
            LinearMap::identity(1),
            OrthoProjector::full(1),
            SpdOperator::identity(1),
        )
        .unwrap();
        let sched = Schedules::constant(0.5, 0.5, 1.0);
        let oracle = crate::stochastic::StochasticOracle::deterministic(spec.b.clone());
        let rec = crate::solver::run(
            &spec,
            &sched,
            &oracle,
            &v(&[0.0]),
            &v(&[0.0]),
            &crate::solver::RunOptions::new(20),
        )
        .unwrap();
        assert!(fejer_tracker(&rec.trace, (&v(&[0.0]), &v(&[0.0])), &spec, None, true).is_err());
        let cert = crate::solver::validate_hypotheses(&spec, &sched, 20, Regime::AlmostSure).unwrap();
        let rep = fejer_tracker(&rec.trace, (&v(&[0.0]), &v(&[0.0])), &spec, Some(&cert), true).unwrap();
        assert!(rep.phi.iter().all(|p| p.1 == 0.0));
        assert_eq!(rep.monotone, Some(true));
    }

    #[test]
    fn sigma_n_formula() {
        let spec = ProblemSpec::new(
            CocoerciveMap::gradient(half_sq(2)),
            MonotoneBlock::zero(2),
            LinearMap::diagonal(&[2.0, 1.0]),
            OrthoProjector::full(2),
            SpdOperator::scalar(2, 4.0).unwrap(),
        )
        .unwrap();
        let g = GapConstant::new(&spec, &Schedules::constant(0.5, 0.01, 1.0), 0.0);
        // γ((τγ‖U‖)^{1/2}‖L‖² + 1) = 0.5 (sqrt(0.01·0.5·4)·4 + 1)
        let expect = 0.5 * ((0.01f64 * 0.5 * 4.0).sqrt() * 4.0 + 1.0);
        assert!((g.sigma_n(0.5, 0.01) - expect).abs() < 1e-12);
        let c = g.c_of(&spec, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(c, 1.0);
    }
}
