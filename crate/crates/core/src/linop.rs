//! Finite-dimensional linear operators: maps with adjoints, orthogonal
//! projectors onto subspaces, SPD preconditioners, power iteration and the
//! step-size admissibility check `(τU)^{-1} - L P_V L^* ≻ 0`.
//!
//! Spaces are real coordinate spaces. The product-space construction needs a
//! block-constant weighted inner product, carried by [`Geometry`]; every
//! operator used with a weighted geometry is block diagonal with blocks
//! aligned to the weights, so its Euclidean adjoint is also its adjoint in the
//! weighted geometry.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Seed used for the internal spectral estimates (cached operator norms).
const NORM_SEED: u64 = 0x5eed_0f1a;

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Inner-product structure of a coordinate space.
#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Euclidean,
    /// `⟨x, y⟩ = Σ_k w_k x_k y_k`, one positive weight per coordinate.
    Weighted(Vector),
}

impl Geometry {
    pub fn inner(&self, x: &Vector, y: &Vector) -> f64 {
        match self {
            Geometry::Euclidean => x.dot(y),
            Geometry::Weighted(w) => x
                .iter()
                .zip(y.iter())
                .zip(w.iter())
                .map(|((a, b), w)| w * a * b)
                .sum(),
        }
    }

    pub fn norm_sq(&self, x: &Vector) -> f64 {
        self.inner(x, x)
    }

    pub fn norm(&self, x: &Vector) -> f64 {
        self.norm_sq(x).sqrt()
    }
}

/// Anything that maps vectors linearly and knows its adjoint.
pub trait LinearOperator: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn codomain_dim(&self) -> usize;
    fn apply(&self, x: &Vector) -> Vector;
    fn adjoint_apply(&self, y: &Vector) -> Vector;
}

/// Operator assembled from closures, used for composite operators such as
/// `U^{1/2} L P_V L^* U^{1/2}`.
pub struct FnOperator<F, G> {
    domain: usize,
    codomain: usize,
    forward: F,
    adjoint: G,
}

impl<F, G> FnOperator<F, G>
where
    F: Fn(&Vector) -> Vector + Send + Sync,
    G: Fn(&Vector) -> Vector + Send + Sync,
{
    pub fn new(domain: usize, codomain: usize, forward: F, adjoint: G) -> Self {
        Self {
            domain,
            codomain,
            forward,
            adjoint,
        }
    }
}

impl<F, G> LinearOperator for FnOperator<F, G>
where
    F: Fn(&Vector) -> Vector + Send + Sync,
    G: Fn(&Vector) -> Vector + Send + Sync,
{
    fn domain_dim(&self) -> usize {
        self.domain
    }
    fn codomain_dim(&self) -> usize {
        self.codomain
    }
    fn apply(&self, x: &Vector) -> Vector {
        (self.forward)(x)
    }
    fn adjoint_apply(&self, y: &Vector) -> Vector {
        (self.adjoint)(y)
    }
}

#[derive(Clone, Debug)]
enum MapKind {
    Dense { matrix: Matrix, adjoint: Matrix },
    Identity(usize),
    Zero { rows: usize, cols: usize },
    /// `(Dx)_i = x_{i+1} - x_i`, from `R^n` to `R^{n-1}`.
    ForwardDifference(usize),
    BlockDiagonal(Vec<LinearMap>),
}

/// A bounded linear map between coordinate spaces, with its adjoint and a
/// lazily estimated operator norm.
#[derive(Clone)]
pub struct LinearMap {
    kind: MapKind,
    norm: OnceLock<f64>,
}

impl fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MapKind::Dense { matrix, .. } => {
                write!(f, "LinearMap::Dense({}x{})", matrix.nrows(), matrix.ncols())
            }
            MapKind::Identity(n) => write!(f, "LinearMap::Identity({n})"),
            MapKind::Zero { rows, cols } => write!(f, "LinearMap::Zero({rows}x{cols})"),
            MapKind::ForwardDifference(n) => write!(f, "LinearMap::ForwardDifference({n})"),
            MapKind::BlockDiagonal(blocks) => {
                f.debug_tuple("LinearMap::BlockDiagonal").field(blocks).finish()
            }
        }
    }
}

impl LinearMap {
    fn from_kind(kind: MapKind) -> Self {
        Self {
            kind,
            norm: OnceLock::new(),
        }
    }

    /// Dense matrix; the adjoint is its transpose.
    pub fn dense(matrix: Matrix) -> Self {
        let adjoint = matrix.transpose();
        Self::from_kind(MapKind::Dense { matrix, adjoint })
    }

    /// Dense matrix with an explicitly supplied adjoint. No consistency check
    /// is made here; see [`adjoint_consistency_check`].
    pub fn dense_with_adjoint(matrix: Matrix, adjoint: Matrix) -> Result<Self> {
        if adjoint.nrows() != matrix.ncols() || adjoint.ncols() != matrix.nrows() {
            return Err(Error::InvalidArgument(format!(
                "adjoint shape {}x{} does not fit a {}x{} map",
                adjoint.nrows(),
                adjoint.ncols(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self::from_kind(MapKind::Dense { matrix, adjoint }))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_kind(MapKind::Identity(dim))
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self::from_kind(MapKind::Zero { rows, cols })
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        Self::dense(Matrix::from_diagonal(&Vector::from_column_slice(entries)))
    }

    pub fn forward_difference(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(
                "forward difference needs dimension >= 2".into(),
            ));
        }
        Ok(Self::from_kind(MapKind::ForwardDifference(dim)))
    }

    pub fn block_diagonal(blocks: Vec<LinearMap>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("block diagonal map needs blocks".into()));
        }
        Ok(Self::from_kind(MapKind::BlockDiagonal(blocks)))
    }

    pub fn rows(&self) -> usize {
        match &self.kind {
            MapKind::Dense { matrix, .. } => matrix.nrows(),
            MapKind::Identity(n) => *n,
            MapKind::Zero { rows, .. } => *rows,
            MapKind::ForwardDifference(n) => n - 1,
            MapKind::BlockDiagonal(blocks) => blocks.iter().map(LinearMap::rows).sum(),
        }
    }

    pub fn cols(&self) -> usize {
        match &self.kind {
            MapKind::Dense { matrix, .. } => matrix.ncols(),
            MapKind::Identity(n) => *n,
            MapKind::Zero { cols, .. } => *cols,
            MapKind::ForwardDifference(n) => *n,
            MapKind::BlockDiagonal(blocks) => blocks.iter().map(LinearMap::cols).sum(),
        }
    }

    /// True when the map is identically zero by construction or has an
    /// all-zero matrix.
    pub fn is_zero(&self) -> bool {
        match &self.kind {
            MapKind::Zero { .. } => true,
            MapKind::Dense { matrix, .. } => matrix.iter().all(|&a| a == 0.0),
            MapKind::BlockDiagonal(blocks) => blocks.iter().all(LinearMap::is_zero),
            _ => false,
        }
    }

    /// Dense matrix of the forward map.
    pub fn to_dense(&self) -> Matrix {
        match &self.kind {
            MapKind::Dense { matrix, .. } => matrix.clone(),
            MapKind::Identity(n) => Matrix::identity(*n, *n),
            MapKind::Zero { rows, cols } => Matrix::zeros(*rows, *cols),
            MapKind::ForwardDifference(n) => {
                let mut d = Matrix::zeros(n - 1, *n);
                for i in 0..n - 1 {
                    d[(i, i)] = -1.0;
                    d[(i, i + 1)] = 1.0;
                }
                d
            }
            MapKind::BlockDiagonal(blocks) => {
                let mut out = Matrix::zeros(self.rows(), self.cols());
                let (mut r, mut c) = (0, 0);
                for b in blocks {
                    out.view_mut((r, c), (b.rows(), b.cols()))
                        .copy_from(&b.to_dense());
                    r += b.rows();
                    c += b.cols();
                }
                out
            }
        }
    }

    /// `‖L‖ = sqrt(λ_max(L^* L))`, estimated once by power iteration and cached.
    pub fn norm(&self) -> f64 {
        *self.norm.get_or_init(|| match &self.kind {
            MapKind::Identity(_) => 1.0,
            MapKind::Zero { .. } => 0.0,
            _ => {
                let gram = FnOperator::new(
                    self.cols(),
                    self.cols(),
                    |x: &Vector| self.adjoint_apply(&self.apply(x)),
                    |x: &Vector| self.adjoint_apply(&self.apply(x)),
                );
                let rng = ChaCha8Rng::seed_from_u64(NORM_SEED);
                let est = power_iteration(&gram, 1e-12, 200_000, rng).estimate();
                (est.value + est.residual).max(0.0).sqrt()
            }
        })
    }
}

impl LinearOperator for LinearMap {
    fn domain_dim(&self) -> usize {
        self.cols()
    }

    fn codomain_dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        match &self.kind {
            MapKind::Dense { matrix, .. } => matrix * x,
            MapKind::Identity(_) => x.clone(),
            MapKind::Zero { rows, .. } => Vector::zeros(*rows),
            MapKind::ForwardDifference(n) => {
                Vector::from_iterator(n - 1, (0..n - 1).map(|i| x[i + 1] - x[i]))
            }
            MapKind::BlockDiagonal(blocks) => {
                let mut out = Vector::zeros(self.rows());
                let (mut r, mut c) = (0, 0);
                for b in blocks {
                    let xb = x.rows(c, b.cols()).into_owned();
                    out.rows_mut(r, b.rows()).copy_from(&b.apply(&xb));
                    r += b.rows();
                    c += b.cols();
                }
                out
            }
        }
    }

    fn adjoint_apply(&self, y: &Vector) -> Vector {
        match &self.kind {
            MapKind::Dense { adjoint, .. } => adjoint * y,
            MapKind::Identity(_) => y.clone(),
            MapKind::Zero { cols, .. } => Vector::zeros(*cols),
            MapKind::ForwardDifference(n) => Vector::from_iterator(
                *n,
                (0..*n).map(|j| {
                    let left = if j > 0 { y[j - 1] } else { 0.0 };
                    let right = if j < n - 1 { y[j] } else { 0.0 };
                    left - right
                }),
            ),
            MapKind::BlockDiagonal(blocks) => {
                let mut out = Vector::zeros(self.cols());
                let (mut r, mut c) = (0, 0);
                for b in blocks {
                    let yb = y.rows(r, b.rows()).into_owned();
                    out.rows_mut(c, b.cols()).copy_from(&b.adjoint_apply(&yb));
                    r += b.rows();
                    c += b.cols();
                }
                out
            }
        }
    }
}

/// Samples `trials` Gaussian pairs and checks
/// `|⟨Lx, y⟩ - ⟨x, L^*y⟩| ≤ 1e-10 (1 + ‖x‖‖y‖)`.
pub fn adjoint_consistency_check<R: Rng>(
    map: &dyn LinearOperator,
    trials: usize,
    mut rng: R,
) -> Result<bool> {
    let (n, m) = (map.domain_dim(), map.codomain_dim());
    for _ in 0..trials {
        let x = gaussian_vector(&mut rng, n);
        let y = gaussian_vector(&mut rng, m);
        let lx = map.apply(&x);
        let lty = map.adjoint_apply(&y);
        check_dim("adjoint check: L x", m, lx.len())?;
        check_dim("adjoint check: L* y", n, lty.len())?;
        let gap = (lx.dot(&y) - x.dot(&lty)).abs();
        if gap > 1e-10 * (1.0 + x.norm() * y.norm()) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Orthogonal projector onto a subspace `V`.
#[derive(Clone, Debug, PartialEq)]
pub enum OrthoProjector {
    /// `V = H`.
    Full(usize),
    /// Explicit symmetric idempotent matrix.
    Matrix(Matrix),
    /// `P = Q Q^*` for a matrix with orthonormal columns.
    Basis(Matrix),
    /// Diagonal subspace of `H^m` under the `ω`-weighted inner product:
    /// `(P x)_k = Σ_i ω_i x_i` for every block `k`.
    Averaging { weights: Vec<f64>, block_dim: usize },
}

impl OrthoProjector {
    pub fn full(dim: usize) -> Self {
        OrthoProjector::Full(dim)
    }

    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotProjector("matrix is not square".into()));
        }
        let scale = 1.0 + matrix.norm();
        let asym = (&matrix - matrix.transpose()).norm();
        let idem = (&matrix * &matrix - &matrix).norm();
        if asym > 1e-10 * scale || idem > 1e-10 * scale {
            return Err(Error::NotProjector(format!(
                "asymmetry {asym:.3e}, idempotence defect {idem:.3e}"
            )));
        }
        Ok(OrthoProjector::Matrix(matrix))
    }

    /// `basis` must have orthonormal columns.
    pub fn from_basis(basis: Matrix) -> Result<Self> {
        let gram = basis.transpose() * &basis;
        let defect = (&gram - Matrix::identity(gram.nrows(), gram.ncols())).norm();
        if defect > 1e-10 {
            return Err(Error::NotProjector(format!(
                "basis columns are not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(OrthoProjector::Basis(basis))
    }

    /// Orthonormalizes the columns of `spanning` (which must be linearly
    /// independent) and projects onto their span.
    pub fn from_spanning_set(spanning: Matrix) -> Result<Self> {
        let qr = spanning.clone().qr();
        let r = qr.r();
        let scale = spanning.norm().max(1.0);
        if (0..r.nrows().min(r.ncols())).any(|i| r[(i, i)].abs() <= 1e-12 * scale) {
            return Err(Error::NotProjector("spanning set is rank deficient".into()));
        }
        Self::from_basis(qr.q())
    }

    pub fn averaging(weights: Vec<f64>, block_dim: usize) -> Result<Self> {
        if weights.is_empty() || block_dim == 0 {
            return Err(Error::InvalidArgument("averaging projector needs blocks".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::InvalidArgument(
                "averaging weights must lie in (0, 1]".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "averaging weights sum to {total}, not 1"
            )));
        }
        Ok(OrthoProjector::Averaging { weights, block_dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            OrthoProjector::Full(n) => *n,
            OrthoProjector::Matrix(m) => m.nrows(),
            OrthoProjector::Basis(q) => q.nrows(),
            OrthoProjector::Averaging { weights, block_dim } => weights.len() * block_dim,
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        match self {
            OrthoProjector::Full(_) => x.clone(),
            OrthoProjector::Matrix(m) => m * x,
            OrthoProjector::Basis(q) => q * (q.transpose() * x),
            OrthoProjector::Averaging { weights, block_dim } => {
                let d = *block_dim;
                let mut avg = Vector::zeros(d);
                for (i, w) in weights.iter().enumerate() {
                    avg.axpy(*w, &x.rows(i * d, d), 1.0);
                }
                let mut out = Vector::zeros(x.len());
                for i in 0..weights.len() {
                    out.rows_mut(i * d, d).copy_from(&avg);
                }
                out
            }
        }
    }

    /// Geometry in which this projector is orthogonal.
    pub fn geometry(&self) -> Geometry {
        match self {
            OrthoProjector::Averaging { weights, block_dim } => Geometry::Weighted(
                Vector::from_iterator(
                    weights.len() * block_dim,
                    weights
                        .iter()
                        .flat_map(|w| std::iter::repeat_n(*w, *block_dim)),
                ),
            ),
            _ => Geometry::Euclidean,
        }
    }

    /// Membership `x ∈ V`, i.e. `‖P x - x‖ ≤ tol (1 + ‖x‖)`.
    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        let g = self.geometry();
        g.norm(&(self.apply(x) - x)) <= tol * (1.0 + g.norm(x))
    }

    pub fn is_full(&self) -> bool {
        matches!(self, OrthoProjector::Full(_))
    }

    /// Projector spec as written in config files: `full`, `matrix:<path>`,
    /// `basis:<path>` or `averaging:<m>` (equal weights over `m` blocks of
    /// size `dim / m`).
    pub fn from_spec(spec: &str, dim: usize, base_dir: &Path) -> Result<Self> {
        let spec = spec.trim();
        let p = if spec == "full" {
            Self::full(dim)
        } else if let Some(path) = spec.strip_prefix("matrix:") {
            Self::from_matrix(read_matrix(&base_dir.join(path.trim()))?)?
        } else if let Some(path) = spec.strip_prefix("basis:") {
            Self::from_basis(read_matrix(&base_dir.join(path.trim()))?)?
        } else if let Some(m) = spec.strip_prefix("averaging:") {
            let m: usize = m
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad block count in `{spec}`")))?;
            if m == 0 || !dim.is_multiple_of(m) {
                return Err(Error::Parse(format!(
                    "`{spec}`: {m} blocks do not divide dimension {dim}"
                )));
            }
            Self::averaging(vec![1.0 / m as f64; m], dim / m)?
        } else {
            return Err(Error::Parse(format!(
                "unknown projector spec `{spec}` (expected full | matrix:<path> | basis:<path> | averaging:<m>)"
            )));
        };
        check_dim("projector spec", dim, p.dim())?;
        Ok(p)
    }
}

/// Self-adjoint strongly positive operator `U`.
#[derive(Clone, Debug, PartialEq)]
pub enum SpdOperator {
    /// `σ Id`.
    Scalar { dim: usize, sigma: f64 },
    Diagonal(Vector),
    /// `σ_i Id` on consecutive blocks of the given sizes.
    BlockScalar(Vec<(usize, f64)>),
    Dense {
        matrix: Matrix,
        inverse: Matrix,
        sqrt: Matrix,
        chi: f64,
        norm: f64,
    },
}

impl SpdOperator {
    pub fn scalar(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::NotSpd(format!("scalar {sigma} is not positive")));
        }
        Ok(SpdOperator::Scalar { dim, sigma })
    }

    pub fn identity(dim: usize) -> Self {
        SpdOperator::Scalar { dim, sigma: 1.0 }
    }

    pub fn diagonal(entries: Vector) -> Result<Self> {
        if entries.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::NotSpd("diagonal entries must be positive".into()));
        }
        Ok(SpdOperator::Diagonal(entries))
    }

    pub fn block_scalar(blocks: Vec<(usize, f64)>) -> Result<Self> {
        if blocks.iter().any(|(_, s)| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::NotSpd("block scalars must be positive".into()));
        }
        Ok(SpdOperator::BlockScalar(blocks))
    }

    /// General dense SPD matrix; inverse and square root come from its
    /// symmetric eigendecomposition.
    pub fn dense(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSpd("matrix is not square".into()));
        }
        if (&matrix - matrix.transpose()).norm() > 1e-12 * (1.0 + matrix.norm()) {
            return Err(Error::NotSpd("matrix is not symmetric".into()));
        }
        let eig = matrix.clone().symmetric_eigen();
        let chi = eig.eigenvalues.min();
        if !(chi > 0.0) {
            return Err(Error::NotSpd(format!("smallest eigenvalue {chi:.3e}")));
        }
        let q = &eig.eigenvectors;
        let with = |f: fn(f64) -> f64| {
            q * Matrix::from_diagonal(&eig.eigenvalues.map(f)) * q.transpose()
        };
        Ok(SpdOperator::Dense {
            inverse: with(|l| 1.0 / l),
            sqrt: with(f64::sqrt),
            chi,
            norm: eig.eigenvalues.max(),
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdOperator::Scalar { dim, .. } => *dim,
            SpdOperator::Diagonal(d) => d.len(),
            SpdOperator::BlockScalar(blocks) => blocks.iter().map(|(n, _)| n).sum(),
            SpdOperator::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    /// Diagonal of `U` when `U` is diagonal in the coordinate basis.
    pub fn diagonal_entries(&self) -> Option<Vector> {
        match self {
            SpdOperator::Scalar { dim, sigma } => Some(Vector::from_element(*dim, *sigma)),
            SpdOperator::Diagonal(d) => Some(d.clone()),
            SpdOperator::BlockScalar(blocks) => Some(Vector::from_iterator(
                self.dim(),
                blocks.iter().flat_map(|(n, s)| std::iter::repeat_n(*s, *n)),
            )),
            SpdOperator::Dense { .. } => None,
        }
    }

    pub fn scalar_value(&self) -> Option<f64> {
        match self {
            SpdOperator::Scalar { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    fn map_diag(&self, x: &Vector, f: impl Fn(f64) -> f64) -> Vector {
        match self {
            SpdOperator::Scalar { sigma, .. } => x * f(*sigma),
            _ => {
                let d = self.diagonal_entries().expect("diagonal operator");
                x.zip_map(&d, |a, s| a * f(s))
            }
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        match self {
            SpdOperator::Dense { matrix, .. } => matrix * x,
            _ => self.map_diag(x, |s| s),
        }
    }

    pub fn apply_inverse(&self, x: &Vector) -> Vector {
        match self {
            SpdOperator::Dense { inverse, .. } => inverse * x,
            _ => self.map_diag(x, |s| 1.0 / s),
        }
    }

    pub fn apply_sqrt(&self, x: &Vector) -> Vector {
        match self {
            SpdOperator::Dense { sqrt, .. } => sqrt * x,
            _ => self.map_diag(x, f64::sqrt),
        }
    }

    /// `‖U‖`.
    pub fn operator_norm(&self) -> f64 {
        match self {
            SpdOperator::Scalar { sigma, .. } => *sigma,
            SpdOperator::Dense { norm, .. } => *norm,
            _ => self.diagonal_entries().map(|d| d.max()).unwrap_or(0.0),
        }
    }

    /// Strong positivity constant `χ` with `⟨Ux, x⟩ ≥ χ‖x‖²`.
    pub fn chi(&self) -> f64 {
        match self {
            SpdOperator::Scalar { sigma, .. } => *sigma,
            SpdOperator::Dense { chi, .. } => *chi,
            _ => self.diagonal_entries().map(|d| d.min()).unwrap_or(0.0),
        }
    }

    /// `U^{-1}` as an operator of the same kind.
    pub fn inverse(&self) -> SpdOperator {
        match self {
            SpdOperator::Scalar { dim, sigma } => SpdOperator::Scalar {
                dim: *dim,
                sigma: 1.0 / sigma,
            },
            SpdOperator::Diagonal(d) => SpdOperator::Diagonal(d.map(|s| 1.0 / s)),
            SpdOperator::BlockScalar(b) => {
                SpdOperator::BlockScalar(b.iter().map(|(n, s)| (*n, 1.0 / s)).collect())
            }
            SpdOperator::Dense {
                matrix,
                inverse,
                sqrt,
                chi,
                norm,
            } => SpdOperator::Dense {
                matrix: inverse.clone(),
                inverse: matrix.clone(),
                sqrt: sqrt.clone().try_inverse().expect("SPD square root is invertible"),
                chi: 1.0 / norm,
                norm: 1.0 / chi,
            },
        }
    }

    /// `c U` for `c > 0`.
    pub fn scaled(&self, c: f64) -> SpdOperator {
        match self {
            SpdOperator::Scalar { dim, sigma } => SpdOperator::Scalar {
                dim: *dim,
                sigma: c * sigma,
            },
            SpdOperator::Diagonal(d) => SpdOperator::Diagonal(d * c),
            SpdOperator::BlockScalar(b) => {
                SpdOperator::BlockScalar(b.iter().map(|(n, s)| (*n, c * s)).collect())
            }
            SpdOperator::Dense {
                matrix,
                inverse,
                sqrt,
                chi,
                norm,
            } => SpdOperator::Dense {
                matrix: matrix * c,
                inverse: inverse / c,
                sqrt: sqrt * c.sqrt(),
                chi: chi * c,
                norm: norm * c,
            },
        }
    }
}

/// Result of a power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate {
    /// Rayleigh quotient at the last iterate.
    pub value: f64,
    /// `‖S v - λ̂ v‖` for the last unit iterate `v`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PowerIteration {
    Converged(SpectralEstimate),
    /// `max_iter` reached before the residual fell below tolerance.
    Unconverged(SpectralEstimate),
}

impl PowerIteration {
    pub fn estimate(&self) -> SpectralEstimate {
        match self {
            PowerIteration::Converged(e) | PowerIteration::Unconverged(e) => *e,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, PowerIteration::Converged(_))
    }
}

/// Largest eigenvalue of a self-adjoint positive semidefinite operator.
///
/// Stops when `‖S v - λ̂ v‖ ≤ tol · max(1, λ̂)`; for a self-adjoint operator
/// the residual bounds the distance from `λ̂` to the spectrum.
pub fn power_iteration<R: Rng>(
    op: &dyn LinearOperator,
    tol: f64,
    max_iter: usize,
    rng: R,
) -> PowerIteration {
    power_iteration_in(op, &Geometry::Euclidean, tol, max_iter, rng)
}

/// [`power_iteration`] for an operator self-adjoint in `geometry`.
pub fn power_iteration_in<R: Rng>(
    op: &dyn LinearOperator,
    geometry: &Geometry,
    tol: f64,
    max_iter: usize,
    mut rng: R,
) -> PowerIteration {
    let dim = op.domain_dim();
    let mut v = gaussian_vector(&mut rng, dim);
    let nv = geometry.norm(&v);
    if nv == 0.0 {
        v = Vector::from_element(dim, 1.0);
    }
    v /= geometry.norm(&v);
    let mut est = SpectralEstimate {
        value: 0.0,
        residual: f64::INFINITY,
        iterations: 0,
    };
    for it in 1..=max_iter {
        let w = op.apply(&v);
        let lambda = geometry.inner(&v, &w);
        let residual = geometry.norm(&(&w - &v * lambda));
        est = SpectralEstimate {
            value: lambda,
            residual,
            iterations: it,
        };
        if residual <= tol * lambda.abs().max(1.0) {
            return PowerIteration::Converged(est);
        }
        let nw = geometry.norm(&w);
        if nw == 0.0 {
            return PowerIteration::Converged(est);
        }
        v = w / nw;
    }
    PowerIteration::Unconverged(est)
}

/// Whether `(τU)^{-1} - L P_V L^*` must be definite or only semidefinite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Definiteness {
    Strict,
    Semi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TauStatus {
    Accepted,
    Rejected,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TauCertificate {
    pub status: TauStatus,
    pub tau: f64,
    pub margin: f64,
    /// Estimate of `λ_max(U^{1/2} L P_V L^* U^{1/2})`.
    pub lambda_max: f64,
    /// Residual bound on `lambda_max`.
    pub residual: f64,
    pub converged: bool,
}

impl TauCertificate {
    pub fn accepted(&self) -> bool {
        self.status == TauStatus::Accepted
    }
}

#[derive(Clone, Debug)]
pub struct TauOptions {
    pub margin: f64,
    pub definiteness: Definiteness,
    /// Inner product of the dual space.
    pub dual_geometry: Geometry,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TauOptions {
    fn default() -> Self {
        Self {
            margin: 1e-6,
            definiteness: Definiteness::Strict,
            dual_geometry: Geometry::Euclidean,
            tol: 1e-10,
            max_iter: 200_000,
            seed: 0x7a0,
        }
    }
}

/// `v ↦ U^{1/2} L P_V L^* U^{1/2} v`.
pub fn symmetrized_coupling<'a>(
    metric: &'a SpdOperator,
    map: &'a LinearMap,
    projector: &'a OrthoProjector,
) -> impl LinearOperator + 'a {
    let f = move |v: &Vector| {
        let w = metric.apply_sqrt(v);
        metric.apply_sqrt(&map.apply(&projector.apply(&map.adjoint_apply(&w))))
    };
    FnOperator::new(map.rows(), map.rows(), f, f)
}

/// Checks `τ λ_max(U^{1/2} L P_V L^* U^{1/2}) < 1 - margin` with the default
/// options.
pub fn validate_tau(
    metric: &SpdOperator,
    map: &LinearMap,
    projector: &OrthoProjector,
    tau: f64,
    margin: f64,
) -> Result<TauCertificate> {
    validate_tau_with(
        metric,
        map,
        projector,
        tau,
        &TauOptions {
            margin,
            ..TauOptions::default()
        },
    )
}

/// Step-size admissibility: `(τU)^{-1} - L P_V L^*` positive (semi)definite.
///
/// The spectral estimate is bracketed by `[λ̂, λ̂ + residual]`; the check
/// accepts only when the upper end passes, rejects when the lower end fails,
/// and is indeterminate in between or when power iteration did not converge.
pub fn validate_tau_with(
    metric: &SpdOperator,
    map: &LinearMap,
    projector: &OrthoProjector,
    tau: f64,
    opts: &TauOptions,
) -> Result<TauCertificate> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    check_dim("validate_tau: U vs L codomain", map.rows(), metric.dim())?;
    check_dim("validate_tau: P vs L domain", map.cols(), projector.dim())?;

    let threshold = 1.0 - opts.margin;
    let passes = |lambda: f64| match opts.definiteness {
        Definiteness::Strict => tau * lambda < threshold,
        Definiteness::Semi => tau * lambda <= threshold,
    };

    if map.is_zero() {
        return Ok(TauCertificate {
            status: if passes(0.0) {
                TauStatus::Accepted
            } else {
                TauStatus::Rejected
            },
            tau,
            margin: opts.margin,
            lambda_max: 0.0,
            residual: 0.0,
            converged: true,
        });
    }

    let op = symmetrized_coupling(metric, map, projector);
    let rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let outcome = power_iteration_in(&op, &opts.dual_geometry, opts.tol, opts.max_iter, rng);
    let est = outcome.estimate();
    let status = if !outcome.is_converged() {
        TauStatus::Indeterminate
    } else if passes(est.value + est.residual) {
        TauStatus::Accepted
    } else if !passes(est.value) {
        TauStatus::Rejected
    } else {
        TauStatus::Indeterminate
    };
    Ok(TauCertificate {
        status,
        tau,
        margin: opts.margin,
        lambda_max: est.value,
        residual: est.residual,
        converged: outcome.is_converged(),
    })
}

/// Largest `τ` accepted by [`validate_tau`] up to a safety factor:
/// `fraction / λ_max(U^{1/2} L P_V L^* U^{1/2})`.
pub fn admissible_tau(
    metric: &SpdOperator,
    map: &LinearMap,
    projector: &OrthoProjector,
    fraction: f64,
    dual_geometry: &Geometry,
) -> Result<f64> {
    if map.is_zero() {
        return Ok(fraction);
    }
    let op = symmetrized_coupling(metric, map, projector);
    let rng = ChaCha8Rng::seed_from_u64(TauOptions::default().seed);
    match power_iteration_in(&op, dual_geometry, 1e-12, 200_000, rng) {
        PowerIteration::Converged(e) if e.value + e.residual > 0.0 => {
            Ok(fraction / (e.value + e.residual))
        }
        PowerIteration::Converged(_) => Ok(fraction),
        PowerIteration::Unconverged(e) => Err(Error::Indeterminate(format!(
            "power iteration did not converge (estimate {:.6e}, residual {:.3e})",
            e.value, e.residual
        ))),
    }
}

/// `‖v‖²_{R_n}` with `R_n = γ_n² ((τ_n U)^{-1} - L P_V L^*)`, in the
/// Euclidean dual geometry.
pub fn weighted_norm_sq(
    v: &Vector,
    metric: &SpdOperator,
    tau_n: f64,
    gamma_n: f64,
    map: &LinearMap,
    projector: &OrthoProjector,
) -> Result<f64> {
    weighted_norm_sq_in(v, metric, tau_n, gamma_n, map, projector, &Geometry::Euclidean)
}

/// [`weighted_norm_sq`] in an arbitrary dual geometry.
pub fn weighted_norm_sq_in(
    v: &Vector,
    metric: &SpdOperator,
    tau_n: f64,
    gamma_n: f64,
    map: &LinearMap,
    projector: &OrthoProjector,
    dual_geometry: &Geometry,
) -> Result<f64> {
    check_dim("weighted_norm_sq", metric.dim(), v.len())?;
    let scaled = metric.apply_inverse(v) / tau_n;
    let coupling = map.apply(&projector.apply(&map.adjoint_apply(v)));
    let base = dual_geometry.inner(&scaled, v) - dual_geometry.inner(&coupling, v);
    let value = gamma_n * gamma_n * base;
    let floor = -1e-12 * gamma_n * gamma_n * dual_geometry.norm_sq(v) / tau_n.min(1.0);
    if value < floor {
        return Err(Error::StepSizeViolation(format!(
            "‖v‖²_R = {value:.6e} is negative; (τU)^-1 - L P L* is not positive semidefinite"
        )));
    }
    Ok(value.max(0.0))
}

/// Parses a dense matrix: first line `rows cols`, then row-major
/// whitespace-separated entries.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut tokens = text.split_whitespace();
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {what}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad {what}")))
    };
    let rows = next_usize("row count")?;
    let cols = next_usize("column count")?;
    let entries: Vec<f64> = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad matrix entry `{t}`")))
        })
        .collect::<Result<_>>()?;
    if entries.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} entries for a {rows}x{cols} matrix, found {}",
            rows * cols,
            entries.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, &entries))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix(&text)
}

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
