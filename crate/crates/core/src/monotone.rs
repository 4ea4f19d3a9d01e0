//! Resolvent and proximal calculus.
//!
//! Operators cross module boundaries only through their resolvents. The
//! resolvent of `A^{-1}` is always synthesized from the resolvent of `A` via
//! `J_{λA^{-1}}(x) = x - λ J_{λ^{-1}A}(x/λ)`; for `A = ∂g` this is the
//! Moreau decomposition `prox_{λg*}(x) = x - λ prox_{g/λ}(x/λ)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::linop::{read_matrix, Geometry, Matrix, SpdOperator, Vector};

/// Relative slack when testing membership in an indicator's domain. Averages
/// of points inside a box can land one ulp outside it.
const DOMAIN_TOL: f64 = 1e-10;

/// Value in `R ∪ {-∞, +∞}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInf,
    NegInf,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    fn neg(self) -> ExtReal {
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(-v),
            ExtReal::PosInf => ExtReal::NegInf,
            ExtReal::NegInf => ExtReal::PosInf,
        }
    }

    /// Sum, or `None` when `+∞` meets `-∞`.
    pub fn checked_add(self, other: ExtReal) -> Option<ExtReal> {
        use ExtReal::*;
        match (self, other) {
            (Finite(a), Finite(b)) => Some(Finite(a + b)),
            (PosInf, NegInf) | (NegInf, PosInf) => None,
            (PosInf, _) | (_, PosInf) => Some(PosInf),
            (NegInf, _) | (_, NegInf) => Some(NegInf),
        }
    }

    pub fn checked_sub(self, other: ExtReal) -> Option<ExtReal> {
        self.checked_add(other.neg())
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v:e}"),
            ExtReal::PosInf => f.write_str("inf"),
            ExtReal::NegInf => f.write_str("-inf"),
        }
    }
}

fn indicator(inside: bool) -> ExtReal {
    if inside {
        ExtReal::Finite(0.0)
    } else {
        ExtReal::PosInf
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo - DOMAIN_TOL * (1.0 + lo.abs()) && x <= hi + DOMAIN_TOL * (1.0 + hi.abs())
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// A user-supplied proximable function.
pub trait Proximable: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// `prox_{λf}(x)`.
    fn prox(&self, lambda: f64, x: &Vector) -> Vector;
    fn value(&self, _x: &Vector) -> Option<ExtReal> {
        None
    }
    fn conjugate_value(&self, _a: &Vector) -> Option<ExtReal> {
        None
    }
    /// `argmin_y f(y) + Σ_i (y_i - x_i)² / (2 steps_i)` for separable `f`.
    fn prox_separable(&self, _steps: &Vector, _x: &Vector) -> Option<Vector> {
        None
    }
}

/// Proper lsc convex function accessed through its proximity operator.
#[derive(Clone, Debug)]
pub enum ProxFunction {
    Zero { dim: usize },
    /// `½‖x - center‖²`.
    SquaredDistance { center: Vector },
    /// `Σ w_i |x_i|`.
    WeightedL1 { weights: Vector },
    /// Indicator of `[lo, hi]`.
    Box { lo: Vector, hi: Vector },
    /// Indicator of `{point}`.
    Singleton { point: Vector },
    /// Support function of `[lo, hi]`: `Σ max(lo_i x_i, hi_i x_i)`.
    BoxSupport { lo: Vector, hi: Vector },
    /// `½‖A x - b‖²`.
    LeastSquares { a: Matrix, b: Vector },
    Custom(Arc<dyn Proximable>),
}

impl ProxFunction {
    pub fn zero(dim: usize) -> Self {
        ProxFunction::Zero { dim }
    }

    pub fn squared_distance(center: Vector) -> Self {
        ProxFunction::SquaredDistance { center }
    }

    pub fn l1(weights: Vector) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("l1 weights must be nonnegative".into()));
        }
        Ok(ProxFunction::WeightedL1 { weights })
    }

    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self> {
        Self::check_box(&lo, &hi)?;
        Ok(ProxFunction::Box { lo, hi })
    }

    pub fn singleton(point: Vector) -> Self {
        ProxFunction::Singleton { point }
    }

    pub fn box_support(lo: Vector, hi: Vector) -> Result<Self> {
        Self::check_box(&lo, &hi)?;
        Ok(ProxFunction::BoxSupport { lo, hi })
    }

    pub fn least_squares(a: Matrix, b: Vector) -> Result<Self> {
        check_dim("least squares: rows of A vs b", a.nrows(), b.len())?;
        Ok(ProxFunction::LeastSquares { a, b })
    }

    fn check_box(lo: &Vector, hi: &Vector) -> Result<()> {
        check_dim("box bounds", lo.len(), hi.len())?;
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("box needs lo <= hi".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ProxFunction::Zero { dim } => *dim,
            ProxFunction::SquaredDistance { center } => center.len(),
            ProxFunction::WeightedL1 { weights } => weights.len(),
            ProxFunction::Box { lo, .. } | ProxFunction::BoxSupport { lo, .. } => lo.len(),
            ProxFunction::Singleton { point } => point.len(),
            ProxFunction::LeastSquares { a, .. } => a.ncols(),
            ProxFunction::Custom(f) => f.dim(),
        }
    }

    /// `prox_{λf}(x)`.
    pub fn prox(&self, lambda: f64, x: &Vector) -> Vector {
        match self {
            ProxFunction::LeastSquares { a, b } => {
                let n = a.ncols();
                let lhs = Matrix::identity(n, n) + a.transpose() * a * lambda;
                let rhs = x + a.transpose() * b * lambda;
                lhs.cholesky()
                    .expect("I + λA'A is positive definite")
                    .solve(&rhs)
            }
            ProxFunction::Custom(f) => f.prox(lambda, x),
            _ => self
                .prox_separable(&Vector::from_element(x.len(), lambda), x)
                .expect("shipped coordinate-separable function"),
        }
    }

    /// Coordinatewise prox with one step per coordinate; `None` for
    /// non-separable functions.
    pub fn prox_separable(&self, steps: &Vector, x: &Vector) -> Option<Vector> {
        let out = match self {
            ProxFunction::Zero { .. } => x.clone(),
            ProxFunction::SquaredDistance { center } => {
                Vector::from_iterator(x.len(), (0..x.len()).map(|i| {
                    (x[i] + steps[i] * center[i]) / (1.0 + steps[i])
                }))
            }
            ProxFunction::WeightedL1 { weights } => Vector::from_iterator(
                x.len(),
                (0..x.len()).map(|i| soft_threshold(x[i], steps[i] * weights[i])),
            ),
            ProxFunction::Box { lo, hi } => Vector::from_iterator(
                x.len(),
                (0..x.len()).map(|i| x[i].clamp(lo[i], hi[i])),
            ),
            ProxFunction::Singleton { point } => point.clone(),
            ProxFunction::BoxSupport { lo, hi } => Vector::from_iterator(
                x.len(),
                (0..x.len()).map(|i| x[i] - steps[i] * (x[i] / steps[i]).clamp(lo[i], hi[i])),
            ),
            ProxFunction::LeastSquares { .. } => return None,
            ProxFunction::Custom(f) => return f.prox_separable(steps, x),
        };
        Some(out)
    }

    /// `f(x)`, `None` when no value oracle exists.
    pub fn value(&self, x: &Vector) -> Option<ExtReal> {
        let v = match self {
            ProxFunction::Zero { .. } => ExtReal::Finite(0.0),
            ProxFunction::SquaredDistance { center } => {
                ExtReal::Finite(0.5 * (x - center).norm_squared())
            }
            ProxFunction::WeightedL1 { weights } => ExtReal::Finite(
                x.iter().zip(weights.iter()).map(|(a, w)| w * a.abs()).sum(),
            ),
            ProxFunction::Box { lo, hi } => indicator(
                (0..x.len()).all(|i| within(x[i], lo[i], hi[i])),
            ),
            ProxFunction::Singleton { point } => {
                indicator((0..x.len()).all(|i| within(x[i], point[i], point[i])))
            }
            ProxFunction::BoxSupport { lo, hi } => ExtReal::Finite(
                (0..x.len())
                    .map(|i| (lo[i] * x[i]).max(hi[i] * x[i]))
                    .sum(),
            ),
            ProxFunction::LeastSquares { a, b } => {
                ExtReal::Finite(0.5 * (a * x - b).norm_squared())
            }
            ProxFunction::Custom(f) => return f.value(x),
        };
        Some(v)
    }

    /// `f*(a)`, `None` when no closed form is available.
    pub fn conjugate_value(&self, a: &Vector) -> Option<ExtReal> {
        let v = match self {
            ProxFunction::Zero { .. } => indicator(a.iter().all(|&ai| within(ai, 0.0, 0.0))),
            ProxFunction::SquaredDistance { center } => {
                ExtReal::Finite(0.5 * a.norm_squared() + a.dot(center))
            }
            ProxFunction::WeightedL1 { weights } => indicator(
                (0..a.len()).all(|i| within(a[i], -weights[i], weights[i])),
            ),
            ProxFunction::Box { lo, hi } => ExtReal::Finite(
                (0..a.len())
                    .map(|i| (lo[i] * a[i]).max(hi[i] * a[i]))
                    .sum(),
            ),
            ProxFunction::Singleton { point } => ExtReal::Finite(a.dot(point)),
            ProxFunction::BoxSupport { lo, hi } => {
                indicator((0..a.len()).all(|i| within(a[i], lo[i], hi[i])))
            }
            ProxFunction::LeastSquares { .. } => return None,
            ProxFunction::Custom(f) => return f.conjugate_value(a),
        };
        Some(v)
    }

    /// Builds a function from a config tag such as `l1(weight=0.5)`,
    /// `box(lo=-1, hi=1)` or `quadratic(A=a.txt, b=b.txt)`. Scalar
    /// parameters are broadcast to `dim` coordinates; relative paths resolve
    /// against `base_dir`.
    pub fn from_tag(tag: &str, dim: usize, base_dir: &Path) -> Result<Self> {
        let (name, params) = parse_tag(tag)?;
        let scalar = |key: &str, default: Option<f64>| -> Result<f64> {
            match params.get(key) {
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Parse(format!("`{tag}`: `{key}` is not a number"))),
                None => default.ok_or_else(|| Error::Parse(format!("`{tag}`: missing `{key}`"))),
            }
        };
        let filled = |v: f64| Vector::from_element(dim, v);
        let vector_param = |key: &str| -> Result<Option<Vector>> {
            let Some(raw) = params.get(key) else {
                return Ok(None);
            };
            if let Ok(v) = raw.parse::<f64>() {
                return Ok(Some(filled(v)));
            }
            let m = read_matrix(&base_dir.join(raw))?;
            Ok(Some(Vector::from_column_slice(m.as_slice())))
        };
        let f = match name.as_str() {
            "zero" => Self::zero(dim),
            "sqdist" => Self::squared_distance(vector_param("center")?.unwrap_or(filled(0.0))),
            "l1" => Self::l1(filled(scalar("weight", Some(1.0))?))?,
            "box" => Self::boxed(filled(scalar("lo", None)?), filled(scalar("hi", None)?))?,
            "singleton" => Self::singleton(vector_param("point")?.unwrap_or(filled(0.0))),
            "box_support" => {
                Self::box_support(filled(scalar("lo", None)?), filled(scalar("hi", None)?))?
            }
            "quadratic" => {
                let a_path = params
                    .get("A")
                    .ok_or_else(|| Error::Parse(format!("`{tag}`: missing `A`")))?;
                let a = read_matrix(&base_dir.join(a_path))?;
                let b = vector_param("b")?.unwrap_or_else(|| Vector::zeros(a.nrows()));
                Self::least_squares(a, b)?
            }
            other => {
                return Err(Error::Unknown {
                    kind: "prox function",
                    name: other.to_string(),
                    available: PROX_LIBRARY.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "),
                })
            }
        };
        check_dim("prox tag dimension", dim, f.dim())?;
        Ok(f)
    }
}

/// Names and parameter lists of the shipped proximable functions.
pub const PROX_LIBRARY: &[(&str, &str)] = &[
    ("zero", "f = 0"),
    ("sqdist", "f = ½‖x - center‖²; center=<number|path> (default 0)"),
    ("l1", "f = weight·‖x‖₁; weight=<number> (default 1)"),
    ("box", "indicator of [lo, hi]; lo=<number>, hi=<number>"),
    ("singleton", "indicator of {point}; point=<number|path> (default 0)"),
    ("box_support", "support function of [lo, hi]; lo=<number>, hi=<number>"),
    ("quadratic", "f = ½‖A x - b‖²; A=<path>, b=<number|path> (default 0)"),
];

pub fn prox_library() -> &'static [(&'static str, &'static str)] {
    PROX_LIBRARY
}

/// Splits `name(k1=v1, k2=v2)` into its name and parameters.
pub fn parse_tag(tag: &str) -> Result<(String, BTreeMap<String, String>)> {
    let tag = tag.trim();
    let (name, rest) = match tag.find('(') {
        Some(i) => (&tag[..i], &tag[i + 1..]),
        None => (tag, ")"),
    };
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| Error::Parse(format!("unbalanced parentheses in `{tag}`")))?;
    let mut params = BTreeMap::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value in `{tag}`, got `{part}`")))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    if name.trim().is_empty() {
        return Err(Error::Parse(format!("empty function name in `{tag}`")));
    }
    Ok((name.trim().to_string(), params))
}

/// A maximally monotone operator with a user-supplied resolvent.
pub trait Resolvent: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// `J_{λA}(x)`.
    fn resolvent(&self, lambda: f64, x: &Vector) -> Vector;
    /// `J_{c U A^{-1}}(x)` for non-scalar `U`, when the user can supply it.
    fn metric_inverse_resolvent(&self, _c: f64, _metric: &SpdOperator, _x: &Vector) -> Option<Vector> {
        None
    }
}

/// Maximally monotone operator exposed through its resolvent.
#[derive(Clone, Debug)]
pub enum MonotoneBlock {
    /// `A = ∂g`; the resolvent is `prox_{λg}`.
    Subdifferential(ProxFunction),
    /// `A x = M x` with `M + M^T` positive semidefinite.
    Linear(Matrix),
    /// `A = A_1 × … × A_m` acting on consecutive blocks.
    Product(Vec<MonotoneBlock>),
    Custom(Arc<dyn Resolvent>),
}

impl MonotoneBlock {
    pub fn linear(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument("linear monotone map must be square".into()));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let min = sym.symmetric_eigen().eigenvalues.min();
        if min < -1e-12 * (1.0 + matrix.norm()) {
            return Err(Error::InvalidArgument(format!(
                "linear map is not monotone (min eigenvalue of symmetric part {min:.3e})"
            )));
        }
        Ok(MonotoneBlock::Linear(matrix))
    }

    pub fn zero(dim: usize) -> Self {
        MonotoneBlock::Subdifferential(ProxFunction::zero(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            MonotoneBlock::Subdifferential(f) => f.dim(),
            MonotoneBlock::Linear(m) => m.nrows(),
            MonotoneBlock::Product(blocks) => blocks.iter().map(MonotoneBlock::dim).sum(),
            MonotoneBlock::Custom(r) => r.dim(),
        }
    }

    /// The function `g` when `A = ∂g`.
    pub fn as_function(&self) -> Option<&ProxFunction> {
        match self {
            MonotoneBlock::Subdifferential(f) => Some(f),
            _ => None,
        }
    }

    /// Whether every factor is the subdifferential of a proximable function.
    pub fn is_subdifferential(&self) -> bool {
        match self {
            MonotoneBlock::Subdifferential(_) => true,
            MonotoneBlock::Product(blocks) => blocks.iter().all(MonotoneBlock::is_subdifferential),
            _ => false,
        }
    }

    /// Value of `g` when `A = ∂g` has a value oracle.
    pub fn value(&self, x: &Vector) -> Option<ExtReal> {
        self.as_function().and_then(|f| f.value(x))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "resolvent parameter must be positive, got {lambda}"
        )))
    }
}

/// `J_{λA}(x) = (Id + λA)^{-1} x`.
pub fn resolvent(a: &MonotoneBlock, lambda: f64, x: &Vector) -> Result<Vector> {
    check_lambda(lambda)?;
    check_dim("resolvent", a.dim(), x.len())?;
    Ok(resolvent_unchecked(a, lambda, x))
}

fn resolvent_unchecked(a: &MonotoneBlock, lambda: f64, x: &Vector) -> Vector {
    match a {
        MonotoneBlock::Subdifferential(f) => f.prox(lambda, x),
        MonotoneBlock::Linear(m) => {
            let n = m.nrows();
            (Matrix::identity(n, n) + m * lambda)
                .lu()
                .solve(x)
                .expect("Id + λA is invertible for monotone A")
        }
        MonotoneBlock::Product(blocks) => {
            let mut out = Vector::zeros(x.len());
            let mut at = 0;
            for b in blocks {
                let d = b.dim();
                let xb = x.rows(at, d).into_owned();
                out.rows_mut(at, d)
                    .copy_from(&resolvent_unchecked(b, lambda, &xb));
                at += d;
            }
            out
        }
        MonotoneBlock::Custom(r) => r.resolvent(lambda, x),
    }
}

/// `J_{λA^{-1}}(x) = x - λ J_{λ^{-1}A}(x/λ)`.
pub fn inverse_resolvent(a: &MonotoneBlock, lambda: f64, x: &Vector) -> Result<Vector> {
    check_lambda(lambda)?;
    check_dim("inverse resolvent", a.dim(), x.len())?;
    Ok(inverse_resolvent_unchecked(a, lambda, x))
}

fn inverse_resolvent_unchecked(a: &MonotoneBlock, lambda: f64, x: &Vector) -> Vector {
    x - resolvent_unchecked(a, 1.0 / lambda, &(x / lambda)) * lambda
}

/// `J_{c U A^{-1}}(x)`, the dual resolvent of the primal-dual iteration.
///
/// Supported metrics: scalar `U` for any `A`; block-scalar `U` for a product
/// operator with matching blocks; diagonal `U` when `A = ∂g` with separable
/// `g`; any `U` a custom resolvent can handle.
pub fn metric_inverse_resolvent(
    a: &MonotoneBlock,
    c: f64,
    metric: &SpdOperator,
    x: &Vector,
) -> Result<Vector> {
    check_lambda(c)?;
    check_dim("metric resolvent: U", a.dim(), metric.dim())?;
    check_dim("metric resolvent: x", a.dim(), x.len())?;
    if let Some(sigma) = metric.scalar_value() {
        return Ok(inverse_resolvent_unchecked(a, c * sigma, x));
    }
    match (a, metric) {
        (MonotoneBlock::Product(blocks), SpdOperator::BlockScalar(scalars))
            if blocks.len() == scalars.len()
                && blocks.iter().zip(scalars).all(|(b, (n, _))| b.dim() == *n) =>
        {
            let mut out = Vector::zeros(x.len());
            let mut at = 0;
            for (b, (n, sigma)) in blocks.iter().zip(scalars) {
                let xb = x.rows(at, *n).into_owned();
                out.rows_mut(at, *n)
                    .copy_from(&inverse_resolvent_unchecked(b, c * sigma, &xb));
                at += n;
            }
            Ok(out)
        }
        (MonotoneBlock::Subdifferential(g), _) => {
            let unsupported = || {
                Error::UnsupportedMetric(format!(
                    "no coordinatewise prox for {g:?} under a non-scalar metric"
                ))
            };
            let d = metric
                .diagonal_entries()
                .ok_or_else(|| Error::UnsupportedMetric("dense metric needs a custom resolvent".into()))?
                * c;
            // Per coordinate: prox_{d_i g_i*}(x_i) = x_i - d_i prox_{g_i/d_i}(x_i/d_i).
            let scaled = x.component_div(&d);
            let steps = d.map(|s| 1.0 / s);
            let inner = g.prox_separable(&steps, &scaled).ok_or_else(unsupported)?;
            Ok(x - inner.component_mul(&d))
        }
        (MonotoneBlock::Custom(r), _) => r.metric_inverse_resolvent(c, metric, x).ok_or_else(|| {
            Error::UnsupportedMetric("custom resolvent does not support this metric".into())
        }),
        _ => Err(Error::UnsupportedMetric(format!(
            "{metric:?} is not supported for this operator"
        ))),
    }
}

/// `prox^W_f(x) = argmin_y f(y) + ½‖x - y‖²_W` for scalar or diagonal `W`.
pub fn prox_in_metric(f: &ProxFunction, metric: &SpdOperator, x: &Vector) -> Result<Vector> {
    check_dim("prox_in_metric", f.dim(), x.len())?;
    check_dim("prox_in_metric: metric", f.dim(), metric.dim())?;
    if let Some(w) = metric.scalar_value() {
        return Ok(f.prox(1.0 / w, x));
    }
    let d = metric.diagonal_entries().ok_or_else(|| {
        Error::UnsupportedMetric("dense metric needs a user-supplied metric prox".into())
    })?;
    f.prox_separable(&d.map(|w| 1.0 / w), x).ok_or_else(|| {
        Error::UnsupportedMetric(format!("{f:?} is not separable; diagonal metric unsupported"))
    })
}

/// `prox_{λg*}(x) = x - λ prox_{g/λ}(x/λ)`.
pub fn conjugate_prox_via_moreau(g: &ProxFunction, lambda: f64, x: &Vector) -> Result<Vector> {
    check_lambda(lambda)?;
    check_dim("conjugate prox", g.dim(), x.len())?;
    Ok(x - g.prox(1.0 / lambda, &(x / lambda)) * lambda)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxInequalityReport {
    pub max_violation: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Checks `f(p) - f(y) ≤ ⟨y - p, U(p - x)⟩` for `p = prox^U_f(x)` on every
/// `(x, y)` sample. Passes when the largest violation is at most `1e-9`.
pub fn prox_inequality_check(
    f: &ProxFunction,
    metric: &SpdOperator,
    samples: &[(Vector, Vector)],
) -> Result<ProxInequalityReport> {
    let mut worst = f64::NEG_INFINITY;
    for (x, y) in samples {
        let p = prox_in_metric(f, metric, x)?;
        let fp = f
            .value(&p)
            .ok_or_else(|| Error::InvalidArgument("function has no value oracle".into()))?;
        let fy = f.value(y).expect("value oracle present");
        let rhs = (y - &p).dot(&metric.apply(&(&p - x)));
        let violation = match (fp, fy) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a - b - rhs,
            (_, ExtReal::PosInf) => f64::NEG_INFINITY,
            // p outside dom f is itself a violation
            _ => f64::INFINITY,
        };
        worst = worst.max(violation);
    }
    let max_violation = if samples.is_empty() { 0.0 } else { worst.max(0.0) };
    Ok(ProxInequalityReport {
        max_violation,
        samples: samples.len(),
        pass: max_violation <= 1e-9,
    })
}

/// Largest violation of `‖Tx - Ty‖² ≤ ⟨x - y, Tx - Ty⟩` over the sampled
/// pairs, measured in `geometry`. Zero means firmly nonexpansive on the
/// samples.
pub fn firm_nonexpansiveness_violation(
    map: impl Fn(&Vector) -> Vector,
    pairs: &[(Vector, Vector)],
    geometry: &Geometry,
) -> f64 {
    pairs
        .iter()
        .map(|(x, y)| {
            let d = map(x) - map(y);
            geometry.norm_sq(&d) - geometry.inner(&(x - y), &d)
        })
        .fold(0.0, f64::max)
}

/// `h(x) = ½ x^T H x - l^T x + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTerm {
    pub hessian: Matrix,
    pub linear: Vector,
    pub constant: f64,
}

impl QuadraticTerm {
    pub fn new(hessian: Matrix, linear: Vector, constant: f64) -> Result<Self> {
        check_dim("quadratic term", hessian.nrows(), linear.len())?;
        if !hessian.is_square() {
            return Err(Error::InvalidArgument("hessian must be square".into()));
        }
        Ok(Self {
            hessian,
            linear,
            constant,
        })
    }

    /// `½‖D x - a‖²`.
    pub fn least_squares(d: &Matrix, a: &Vector) -> Result<Self> {
        check_dim("least squares term", d.nrows(), a.len())?;
        Self::new(d.transpose() * d, d.transpose() * a, 0.5 * a.norm_squared())
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) - self.linear.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.hessian * x - &self.linear
    }
}

/// Convex quadratic `h = (1/m) Σ_j h_j`; the components feed minibatch
/// oracles.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothQuadratic {
    terms: Vec<QuadraticTerm>,
}

impl SmoothQuadratic {
    pub fn new(terms: Vec<QuadraticTerm>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("smooth function needs terms".into()))?;
        let n = first.linear.len();
        for t in &terms {
            check_dim("smooth function terms", n, t.linear.len())?;
        }
        Ok(Self { terms })
    }

    pub fn single(term: QuadraticTerm) -> Self {
        Self { terms: vec![term] }
    }

    pub fn dim(&self) -> usize {
        self.terms[0].linear.len()
    }

    pub fn components(&self) -> &[QuadraticTerm] {
        &self.terms
    }

    pub fn value(&self, x: &Vector) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum::<f64>() / self.terms.len() as f64
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim());
        for t in &self.terms {
            g += t.gradient(x);
        }
        g / self.terms.len() as f64
    }

    pub fn hessian(&self) -> Matrix {
        let n = self.dim();
        self.terms
            .iter()
            .fold(Matrix::zeros(n, n), |acc, t| acc + &t.hessian)
            / self.terms.len() as f64
    }

    /// Lipschitz constant of the gradient, `λ_max(H)`.
    pub fn lipschitz(&self) -> f64 {
        let h = self.hessian();
        let sym = (&h + h.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.max().max(0.0)
    }
}

/// Single-valued `β`-cocoercive operator.
#[derive(Clone)]
pub enum CocoerciveMap {
    /// `B = ∇h` with `β = 1/‖∇²h‖`.
    Gradient { h: SmoothQuadratic, beta: f64 },
    /// `(x_1, …, x_m) ↦ (B x_1, …, B x_m)`.
    Replicated { base: Box<CocoerciveMap>, copies: usize },
    Custom {
        dim: usize,
        beta: f64,
        map: Arc<dyn Fn(&Vector) -> Vector + Send + Sync>,
    },
}

impl fmt::Debug for CocoerciveMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CocoerciveMap::Gradient { h, beta } => f
                .debug_struct("Gradient")
                .field("dim", &h.dim())
                .field("terms", &h.components().len())
                .field("beta", beta)
                .finish(),
            CocoerciveMap::Replicated { base, copies } => f
                .debug_struct("Replicated")
                .field("base", base)
                .field("copies", copies)
                .finish(),
            CocoerciveMap::Custom { dim, beta, .. } => f
                .debug_struct("Custom")
                .field("dim", dim)
                .field("beta", beta)
                .finish(),
        }
    }
}

impl CocoerciveMap {
    /// Gradient of a convex quadratic; `β = +∞` when the Hessian vanishes.
    pub fn gradient(h: SmoothQuadratic) -> Self {
        let lip = h.lipschitz();
        let beta = if lip > 0.0 { 1.0 / lip } else { f64::INFINITY };
        CocoerciveMap::Gradient { h, beta }
    }

    pub fn zero(dim: usize) -> Self {
        Self::gradient(SmoothQuadratic::single(QuadraticTerm {
            hessian: Matrix::zeros(dim, dim),
            linear: Vector::zeros(dim),
            constant: 0.0,
        }))
    }

    pub fn custom(
        dim: usize,
        beta: f64,
        map: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument("cocoercivity constant must be positive".into()));
        }
        Ok(CocoerciveMap::Custom {
            dim,
            beta,
            map: Arc::new(map),
        })
    }

    pub fn replicated(base: CocoerciveMap, copies: usize) -> Self {
        CocoerciveMap::Replicated {
            base: Box::new(base),
            copies,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CocoerciveMap::Gradient { h, .. } => h.dim(),
            CocoerciveMap::Replicated { base, copies } => base.dim() * copies,
            CocoerciveMap::Custom { dim, .. } => *dim,
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            CocoerciveMap::Gradient { beta, .. } | CocoerciveMap::Custom { beta, .. } => *beta,
            CocoerciveMap::Replicated { base, .. } => base.beta(),
        }
    }

    /// The smooth function when `B = ∇h` (for replicated maps, the base
    /// function).
    pub fn smooth(&self) -> Option<&SmoothQuadratic> {
        match self {
            CocoerciveMap::Gradient { h, .. } => Some(h),
            CocoerciveMap::Replicated { base, .. } => base.smooth(),
            CocoerciveMap::Custom { .. } => None,
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        match self {
            CocoerciveMap::Gradient { h, .. } => h.gradient(x),
            CocoerciveMap::Replicated { base, copies } => {
                let d = base.dim();
                let mut out = Vector::zeros(d * copies);
                for i in 0..*copies {
                    let xb = x.rows(i * d, d).into_owned();
                    out.rows_mut(i * d, d).copy_from(&base.apply(&xb));
                }
                out
            }
            CocoerciveMap::Custom { map, .. } => map(x),
        }
    }
}

/// Largest violation of `⟨Bx - By, x - y⟩ ≥ β‖Bx - By‖² - 1e-10(1 + ‖x - y‖²)`
/// over the sampled pairs; zero when the inequality holds everywhere.
pub fn cocoercivity_violation(
    b: &CocoerciveMap,
    pairs: &[(Vector, Vector)],
    geometry: &Geometry,
) -> f64 {
    let beta = b.beta();
    pairs
        .iter()
        .map(|(x, y)| {
            let d = b.apply(x) - b.apply(y);
            let nd = geometry.norm_sq(&d);
            let lhs = geometry.inner(&d, &(x - y));
            let required = if nd == 0.0 { 0.0 } else { beta * nd };
            required - lhs - 1e-10 * (1.0 + geometry.norm_sq(&(x - y)))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn abs1() -> MonotoneBlock {
        MonotoneBlock::Subdifferential(ProxFunction::l1(v(&[1.0])).unwrap())
    }

    #[test]
    fn resolvent_examples() {
        let id = MonotoneBlock::linear(dmatrix![1.0]).unwrap();
        assert!((resolvent(&id, 1.0, &v(&[2.0])).unwrap()[0] - 1.0).abs() < 1e-15);
        let zero = MonotoneBlock::zero(3);
        let x = v(&[1.0, -2.0, 0.5]);
        assert_eq!(resolvent(&zero, 7.0, &x).unwrap(), x);
        assert_eq!(resolvent(&abs1(), 0.5, &v(&[2.0])).unwrap()[0], 1.5);
        assert!(resolvent(&abs1(), 0.0, &v(&[2.0])).is_err());
        assert!(resolvent(&abs1(), 1.0, &v(&[2.0, 1.0])).is_err());
    }

    #[test]
    fn inverse_resolvent_examples() {
        let id = MonotoneBlock::linear(dmatrix![1.0]).unwrap();
        assert!((inverse_resolvent(&id, 1.0, &v(&[2.0])).unwrap()[0] - 1.0).abs() < 1e-15);
        assert_eq!(inverse_resolvent(&abs1(), 1.0, &v(&[2.0])).unwrap()[0], 1.0);
        assert!((inverse_resolvent(&abs1(), 1.0, &v(&[0.3])).unwrap()[0] - 0.3).abs() < 1e-16);
    }

    #[test]
    fn inverse_resolvent_of_zero_operator_is_zero() {
        // A = 0 gives A^{-1} = N_{0}, whose resolvent maps everything to 0.
        let out = inverse_resolvent(&MonotoneBlock::zero(2), 3.0, &v(&[1.0, -4.0])).unwrap();
        assert_eq!(out, Vector::zeros(2));
    }

    #[test]
    fn prox_in_metric_examples() {
        let zero = ProxFunction::zero(2);
        let x = v(&[1.0, 2.0]);
        assert_eq!(prox_in_metric(&zero, &SpdOperator::scalar(2, 3.0).unwrap(), &x).unwrap(), x);

        let abs = ProxFunction::l1(v(&[1.0])).unwrap();
        assert_eq!(prox_in_metric(&abs, &SpdOperator::identity(1), &v(&[2.0])).unwrap()[0], 1.0);

        // metric U^{-1} with U = 2: argmin ½y² + ¼(y - 3)², i.e. y = 1.
        let half_sq = ProxFunction::squared_distance(v(&[0.0]));
        let u_inv = SpdOperator::scalar(1, 2.0).unwrap().inverse();
        let p = prox_in_metric(&half_sq, &u_inv, &v(&[3.0])).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prox_in_metric_rejects_unsupported_metrics() {
        let dense = SpdOperator::dense(dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let f = ProxFunction::l1(v(&[1.0, 1.0])).unwrap();
        assert!(matches!(
            prox_in_metric(&f, &dense, &v(&[1.0, 1.0])),
            Err(Error::UnsupportedMetric(_))
        ));
        let ls = ProxFunction::least_squares(dmatrix![1.0, 1.0], v(&[0.0])).unwrap();
        let diag = SpdOperator::diagonal(v(&[1.0, 2.0])).unwrap();
        assert!(matches!(
            prox_in_metric(&ls, &diag, &v(&[1.0, 1.0])),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    #[test]
    fn diagonal_metric_prox_solves_separable_problem() {
        // argmin |y| + ½ w (y - x)² per coordinate: soft threshold at 1/w.
        let f = ProxFunction::l1(v(&[1.0, 1.0])).unwrap();
        let metric = SpdOperator::diagonal(v(&[1.0, 4.0])).unwrap();
        let p = prox_in_metric(&f, &metric, &v(&[3.0, 3.0])).unwrap();
        assert_eq!(p, v(&[2.0, 2.75]));
    }

    #[test]
    fn conjugate_prox_examples() {
        let abs = ProxFunction::l1(v(&[1.0])).unwrap();
        assert_eq!(conjugate_prox_via_moreau(&abs, 1.0, &v(&[2.0])).unwrap()[0], 1.0);
        let half_sq = ProxFunction::squared_distance(v(&[0.0]));
        assert!((conjugate_prox_via_moreau(&half_sq, 1.0, &v(&[4.0])).unwrap()[0] - 2.0).abs() < 1e-15);
        let l1 = ProxFunction::l1(v(&[1.0, 1.0, 1.0])).unwrap();
        let out = conjugate_prox_via_moreau(&l1, 2.0, &v(&[3.0, -0.5, 1.0])).unwrap();
        assert!((out - v(&[1.0, -0.5, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn library_examples() {
        let bx = ProxFunction::boxed(v(&[-1.0]), v(&[1.0])).unwrap();
        assert_eq!(bx.prox(1.0, &v(&[5.0]))[0], 1.0);
        let sq = ProxFunction::squared_distance(v(&[0.0]));
        assert_eq!(sq.prox(1.0, &v(&[2.0]))[0], 1.0);
        let l1 = ProxFunction::l1(v(&[2.0])).unwrap();
        assert_eq!(l1.prox(1.0, &v(&[3.0]))[0], 1.0);
        let single = ProxFunction::singleton(v(&[0.5, 0.5]));
        assert_eq!(single.prox(3.0, &v(&[9.0, 1.0])), v(&[0.5, 0.5]));
        // support of [-2, 2] is 2|x|
        let supp = ProxFunction::box_support(v(&[-2.0]), v(&[2.0])).unwrap();
        assert!((supp.prox(1.0, &v(&[3.0]))[0] - 1.0).abs() < 1e-15);
        assert_eq!(supp.value(&v(&[-3.0])), Some(ExtReal::Finite(6.0)));
    }

    #[test]
    fn indicator_values_are_explicitly_infinite() {
        let bx = ProxFunction::boxed(v(&[-1.0]), v(&[1.0])).unwrap();
        assert_eq!(bx.value(&v(&[2.0])), Some(ExtReal::PosInf));
        assert_eq!(bx.value(&v(&[1.0])), Some(ExtReal::Finite(0.0)));
        let l1 = ProxFunction::l1(v(&[1.0])).unwrap();
        assert_eq!(l1.conjugate_value(&v(&[1.5])), Some(ExtReal::PosInf));
        assert_eq!(ProxFunction::zero(1).conjugate_value(&v(&[0.1])), Some(ExtReal::PosInf));
        assert_eq!(ExtReal::PosInf.checked_add(ExtReal::NegInf), None);
        assert_eq!(ExtReal::Finite(1.0).checked_sub(ExtReal::PosInf), Some(ExtReal::NegInf));
    }

    #[test]
    fn prox_inequality_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<_> = (0..100)
            .map(|_| {
                (
                    crate::linop::gaussian_vector(&mut rng, 1) * 3.0,
                    crate::linop::gaussian_vector(&mut rng, 1) * 3.0,
                )
            })
            .collect();
        let id = SpdOperator::identity(1);
        assert!(prox_inequality_check(&ProxFunction::zero(1), &id, &samples).unwrap().pass);
        let abs = ProxFunction::l1(v(&[1.0])).unwrap();
        assert!(prox_inequality_check(&abs, &id, &samples).unwrap().pass);

        #[derive(Debug)]
        struct OffByTenth;
        impl Proximable for OffByTenth {
            fn dim(&self) -> usize {
                1
            }
            fn prox(&self, lambda: f64, x: &Vector) -> Vector {
                x.map(|a| soft_threshold(a, lambda) + 0.1)
            }
            fn value(&self, x: &Vector) -> Option<ExtReal> {
                Some(ExtReal::Finite(x[0].abs()))
            }
        }
        let broken = ProxFunction::Custom(Arc::new(OffByTenth));
        let report = prox_inequality_check(&broken, &id, &samples).unwrap();
        assert!(!report.pass);
        assert!(report.max_violation > 1e-3);
    }

    #[test]
    fn tags_parse_into_functions() {
        let dir = std::env::temp_dir();
        let f = ProxFunction::from_tag("l1(weight=0.5)", 3, &dir).unwrap();
        assert_eq!(f.prox(1.0, &v(&[1.0, 0.2, -2.0])), v(&[0.5, 0.0, -1.5]));
        let b = ProxFunction::from_tag("box(lo=-1, hi=1)", 2, &dir).unwrap();
        assert_eq!(b.prox(1.0, &v(&[3.0, -0.5])), v(&[1.0, -0.5]));
        assert!(matches!(
            ProxFunction::from_tag("huber(delta=1)", 2, &dir),
            Err(Error::Unknown { .. })
        ));
        assert!(ProxFunction::from_tag("box(lo=-1)", 2, &dir).is_err());
        assert!(ProxFunction::from_tag("l1(weight=0.5", 2, &dir).is_err());
    }

    #[test]
    fn quadratic_tag_reads_matrix_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "2 2\n2 0\n0 1\n").unwrap();
        std::fs::write(dir.path().join("b.txt"), "2 1\n1\n1\n").unwrap();
        let f = ProxFunction::from_tag("quadratic(A=a.txt, b=b.txt)", 2, dir.path()).unwrap();
        // prox of ½‖Ax - b‖² at x = b solves (I + A'A) y = x + A'b.
        let y = f.prox(1.0, &v(&[1.0, 1.0]));
        assert!((y - v(&[0.6, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn metric_resolvent_routes() {
        let g = ProxFunction::l1(v(&[1.0, 1.0])).unwrap();
        let a = MonotoneBlock::Subdifferential(g.clone());
        let x = v(&[3.0, -0.2]);
        // scalar and equal-diagonal metrics agree
        let s = metric_inverse_resolvent(&a, 2.0, &SpdOperator::scalar(2, 1.5).unwrap(), &x).unwrap();
        let d = metric_inverse_resolvent(&a, 2.0, &SpdOperator::diagonal(v(&[1.5, 1.5])).unwrap(), &x)
            .unwrap();
        assert!((s - d).norm() < 1e-14);
        // product operator with block-scalar metric
        let prod = MonotoneBlock::Product(vec![abs1(), MonotoneBlock::linear(dmatrix![1.0]).unwrap()]);
        let bs = SpdOperator::block_scalar(vec![(1, 2.0), (1, 0.5)]).unwrap();
        let out = metric_inverse_resolvent(&prod, 1.0, &bs, &v(&[3.0, 3.0])).unwrap();
        assert_eq!(out[0], 1.0);
        // A = Id: J_{c A^{-1}}(x) = x / (1 + c) with c = 0.5
        assert!((out[1] - 2.0).abs() < 1e-15);
        let lin = MonotoneBlock::linear(dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
        assert!(matches!(
            metric_inverse_resolvent(&lin, 1.0, &SpdOperator::diagonal(v(&[1.0, 2.0])).unwrap(), &x),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    #[test]
    fn gradient_map_cocoercivity() {
        let h = SmoothQuadratic::single(
            QuadraticTerm::least_squares(&dmatrix![2.0, 0.0; 1.0, 1.0], &v(&[1.0, 0.0])).unwrap(),
        );
        let b = CocoerciveMap::gradient(h);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<_> = (0..50)
            .map(|_| {
                (
                    crate::linop::gaussian_vector(&mut rng, 2),
                    crate::linop::gaussian_vector(&mut rng, 2),
                )
            })
            .collect();
        assert_eq!(cocoercivity_violation(&b, &pairs, &Geometry::Euclidean), 0.0);
        let wrong = CocoerciveMap::custom(2, 10.0 * b.beta(), move |x| b.apply(x)).unwrap();
        assert!(cocoercivity_violation(&wrong, &pairs, &Geometry::Euclidean) > 0.0);
        assert_eq!(CocoerciveMap::zero(3).beta(), f64::INFINITY);
    }
}
