//! Constraint oracles and simple-set projections.
//!
//! Each component constraint `g(x, ω) ≤ 0` is represented by its violation
//! `g⁺(x, ω) = max{g(x, ω), 0}` together with a subgradient of `g⁺` at
//! points where it is positive. The algorithm never asks for a subgradient at
//! a satisfied point: that step is skipped instead.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algorithm::{Objective, ObjectiveOracle};
use crate::linalg::{dist, norm};
use crate::{Error, Result};

/// `g⁺ <= SATISFIED_TOLERANCE` counts as satisfied and no step is taken.
pub const SATISFIED_TOLERANCE: f64 = 1e-12;

/// Eigenvalues at or below this are dropped from the PSD part.
pub const EIGEN_ZERO_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// A set whose Euclidean projection is cheap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimpleSet {
    FullSpace { dim: usize },
    /// Bounds may be infinite.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `{x >= 0, Σ x = scale}`
    Simplex { dim: usize, scale: f64 },
    /// Cartesian product; blocks act on consecutive coordinates.
    Product { blocks: Vec<SimpleSet> },
}

impl SimpleSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FullSpace { .. } => Ok(()),
            Self::Box { lower, upper } => {
                check_dim(lower.len(), upper.len())?;
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::InvalidSet("box needs lower <= upper".into()));
                }
                Ok(())
            }
            Self::Ball { radius, .. } if !(*radius > 0.0) => {
                Err(Error::InvalidSet("ball radius must be positive".into()))
            }
            Self::Ball { .. } => Ok(()),
            Self::Simplex { dim, scale } => {
                if *dim == 0 || !(*scale > 0.0) {
                    Err(Error::InvalidSet("simplex needs dim >= 1 and scale > 0".into()))
                } else {
                    Ok(())
                }
            }
            Self::Product { blocks } => blocks.iter().try_for_each(Self::validate),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::FullSpace { dim } | Self::Simplex { dim, .. } => *dim,
            Self::Box { lower, .. } => lower.len(),
            Self::Ball { center, .. } => center.len(),
            Self::Product { blocks } => blocks.iter().map(Self::dim).sum(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            Self::FullSpace { dim } => *dim == 0,
            Self::Box { lower, upper } => lower.iter().chain(upper).all(|v| v.is_finite()),
            Self::Ball { .. } | Self::Simplex { .. } => true,
            Self::Product { blocks } => blocks.iter().all(Self::is_bounded),
        }
    }

    /// Euclidean projection.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        Ok(out)
    }

    /// Projection without the dimension check; `x.len()` must equal `dim()`.
    pub fn project_in_place(&self, x: &mut [f64]) {
        match self {
            Self::FullSpace { .. } => {}
            Self::Box { lower, upper } => {
                for ((xi, l), u) in x.iter_mut().zip(lower).zip(upper) {
                    *xi = xi.clamp(*l, *u);
                }
            }
            Self::Ball { center, radius } => {
                let d = dist(x, center);
                if d > *radius {
                    let t = radius / d;
                    for (xi, c) in x.iter_mut().zip(center) {
                        *xi = c + t * (*xi - c);
                    }
                }
            }
            Self::Simplex { scale, .. } => project_simplex(x, *scale),
            Self::Product { blocks } => {
                let mut start = 0;
                for b in blocks {
                    let end = start + b.dim();
                    b.project_in_place(&mut x[start..end]);
                    start = end;
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && self
                .project(x)
                .is_ok_and(|p| dist(&p, x) <= tol)
    }

    /// Uniform sample from a bounded set, `None` if the set is unbounded.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        if !self.is_bounded() {
            return None;
        }
        let mut out = Vec::with_capacity(self.dim());
        self.sample_into(rng, &mut out);
        Some(out)
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            Self::FullSpace { .. } => {}
            Self::Box { lower, upper } => {
                out.extend(lower.iter().zip(upper).map(|(l, u)| l + (u - l) * rng.random::<f64>()));
            }
            Self::Ball { center, radius } => {
                let n = center.len();
                let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                let len = norm(&dir).max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                out.extend(center.iter().zip(&dir).map(|(c, d)| c + r * d / len));
            }
            Self::Simplex { dim, scale } => {
                let e: Vec<f64> = (0..*dim).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = e.iter().sum();
                out.extend(e.iter().map(|v| scale * v / total));
            }
            Self::Product { blocks } => {
                for b in blocks {
                    b.sample_into(rng, out);
                }
            }
        }
    }
}

/// Sort-based projection onto `{x >= 0, Σ x = scale}`.
fn project_simplex(x: &mut [f64], scale: f64) {
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - scale) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for xi in x.iter_mut() {
        *xi = (*xi - theta).max(0.0);
    }
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in i + 1..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Projection of a symmetric matrix onto the PSD cone: eigenvalues clipped at
/// zero.
pub fn psd_part(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(a.nrows(), a.ncols())?;
    let asymmetry = max_asymmetry(a);
    if asymmetry > 1e-10 * a.amax().max(1.0) {
        return Err(Error::Asymmetric { asymmetry });
    }
    Ok(psd_part_unchecked(a.clone()))
}

fn psd_part_unchecked(a: DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut out = DMatrix::zeros(m, m);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > EIGEN_ZERO_TOLERANCE {
            let v = eig.eigenvectors.column(k);
            out.ger(lambda, &v, &v, 1.0);
        }
    }
    out
}

/// Outcome of evaluating one component constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Satisfied { violation: f64 },
    Violated { violation: f64, subgradient: Vec<f64> },
}

impl Evaluation {
    pub fn violation(&self) -> f64 {
        match self {
            Self::Satisfied { violation } | Self::Violated { violation, .. } => *violation,
        }
    }
}

/// One component constraint `g(·, ω) ≤ 0` seen through its violation.
pub trait ConstraintOracle {
    fn dim(&self) -> usize;

    /// `g⁺(x, ω) >= 0`.
    fn violation(&self, x: &[f64]) -> Result<f64>;

    /// A subgradient of `g⁺` at `x`; [`Error::Satisfied`] when `g⁺(x) <=`
    /// [`SATISFIED_TOLERANCE`].
    fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.evaluate(x)? {
            Evaluation::Violated { subgradient, .. } => Ok(subgradient),
            Evaluation::Satisfied { .. } => Err(Error::Satisfied),
        }
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;
}

/// Block of linear inequalities `A x <= b` handled together through
/// `g⁺(x) = ‖(Ax - b)⁺‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearBlockData", into = "LinearBlockData")]
pub struct LinearBlock {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct LinearBlockData {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
    for r in rows {
        check_dim(ncols, r.len())?;
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl TryFrom<LinearBlockData> for LinearBlock {
    type Error = Error;
    fn try_from(d: LinearBlockData) -> Result<Self> {
        LinearBlock::new(matrix_from_rows(&d.a, 0)?, DVector::from_vec(d.b))
    }
}

impl From<LinearBlock> for LinearBlockData {
    fn from(l: LinearBlock) -> Self {
        LinearBlockData {
            a: matrix_to_rows(&l.a),
            b: l.b.iter().copied().collect(),
        }
    }
}

impl LinearBlock {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        Ok(Self { a, b })
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        Self::new(matrix_from_rows(a, 0)?, DVector::from_column_slice(b))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `(Ax - b)⁺`
    fn positive_residual(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.a.ncols(), x.len())?;
        let r = &self.a * DVector::from_column_slice(x) - &self.b;
        Ok(r.map(|v| v.max(0.0)))
    }

    fn lift(&self, dim: usize) -> Self {
        let mut a = DMatrix::zeros(self.a.nrows(), dim);
        a.columns_mut(0, self.a.ncols()).copy_from(&self.a);
        Self { a, b: self.b.clone() }
    }
}

pub fn linear_block_violation(block: &LinearBlock, x: &[f64]) -> Result<f64> {
    Ok(block.positive_residual(x)?.norm())
}

/// `Aᵀ(Ax - b)⁺ / ‖(Ax - b)⁺‖`
pub fn linear_block_subgradient(block: &LinearBlock, x: &[f64]) -> Result<Vec<f64>> {
    block.subgradient(x)
}

impl ConstraintOracle for LinearBlock {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn violation(&self, x: &[f64]) -> Result<f64> {
        linear_block_violation(self, x)
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let r = self.positive_residual(x)?;
        let violation = r.norm();
        if violation <= SATISFIED_TOLERANCE {
            return Ok(Evaluation::Satisfied { violation });
        }
        let d = self.a.tr_mul(&r) / violation;
        Ok(Evaluation::Violated {
            violation,
            subgradient: d.iter().copied().collect(),
        })
    }
}

/// Linear matrix inequality `A_0 + Σ_j x_j A_j ⪯ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LmiData", into = "LmiData")]
pub struct LmiConstraint {
    /// `A_0, A_1, …, A_n`.
    matrices: Vec<DMatrix<f64>>,
    /// Nonzero `(row, col, value)` triplets of `A_1..A_n`.
    sparse: Vec<Vec<(usize, usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct LmiData {
    matrices: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<LmiData> for LmiConstraint {
    type Error = Error;
    fn try_from(d: LmiData) -> Result<Self> {
        let matrices = d
            .matrices
            .iter()
            .map(|m| matrix_from_rows(m, 0))
            .collect::<Result<Vec<_>>>()?;
        LmiConstraint::new(matrices)
    }
}

impl From<LmiConstraint> for LmiData {
    fn from(l: LmiConstraint) -> Self {
        LmiData {
            matrices: l.matrices.iter().map(matrix_to_rows).collect(),
        }
    }
}

impl LmiConstraint {
    /// `matrices[0]` is the constant term; the rest multiply `x_1..x_n`.
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(Error::InvalidParameter("LMI needs at least A_0".into()));
        };
        let m = first.nrows();
        for a in &matrices {
            check_dim(m, a.nrows())?;
            check_dim(m, a.ncols())?;
            let asymmetry = max_asymmetry(a);
            if asymmetry > SYMMETRY_TOLERANCE {
                return Err(Error::Asymmetric { asymmetry });
            }
        }
        let sparse = matrices[1..]
            .iter()
            .map(|a| {
                let mut t = Vec::new();
                for c in 0..m {
                    for r in 0..m {
                        if a[(r, c)] != 0.0 {
                            t.push((r, c, a[(r, c)]));
                        }
                    }
                }
                t
            })
            .collect();
        Ok(Self { matrices, sparse })
    }

    /// Matrix size `m`.
    pub fn size(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// `A(x) = A_0 + Σ x_j A_j`
    pub fn assemble(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.sparse.len(), x.len())?;
        let mut a = self.matrices[0].clone();
        for (xj, triplets) in x.iter().zip(&self.sparse) {
            if *xj != 0.0 {
                for &(r, c, v) in triplets {
                    a[(r, c)] += xj * v;
                }
            }
        }
        Ok(a)
    }

    fn lift(&self, dim: usize) -> Self {
        let m = self.size();
        let mut matrices = self.matrices.clone();
        matrices.resize(dim + 1, DMatrix::zeros(m, m));
        let mut sparse = self.sparse.clone();
        sparse.resize(dim, Vec::new());
        Self { matrices, sparse }
    }
}

/// `‖A⁺(x)‖_F`
pub fn lmi_violation(c: &LmiConstraint, x: &[f64]) -> Result<f64> {
    c.violation(x)
}

/// Component `j` is `Tr(A_j A⁺(x)) / g⁺(x)`.
pub fn lmi_subgradient(c: &LmiConstraint, x: &[f64]) -> Result<Vec<f64>> {
    c.subgradient(x)
}

impl ConstraintOracle for LmiConstraint {
    fn dim(&self) -> usize {
        self.sparse.len()
    }

    fn violation(&self, x: &[f64]) -> Result<f64> {
        let eigenvalues = self.assemble(x)?.symmetric_eigenvalues();
        let sq: f64 = eigenvalues
            .iter()
            .filter(|&&l| l > EIGEN_ZERO_TOLERANCE)
            .fold(0.0, |acc, l| acc + l * l);
        Ok(sq.sqrt())
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let plus = psd_part_unchecked(self.assemble(x)?);
        let violation = plus.norm();
        if violation <= SATISFIED_TOLERANCE {
            return Ok(Evaluation::Satisfied { violation });
        }
        let subgradient = self
            .sparse
            .iter()
            .map(|t| t.iter().map(|&(r, c, v)| v * plus[(c, r)]).sum::<f64>() / violation)
            .collect();
        Ok(Evaluation::Violated {
            violation,
            subgradient,
        })
    }
}

/// `g(x) = dist(x_S, set)` on the coordinates `S`. With this oracle one
/// feasibility step is an exact projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceConstraint {
    pub set: SimpleSet,
    /// Coordinates the set acts on, in order.
    pub coords: Vec<usize>,
    pub dim: usize,
}

impl DistanceConstraint {
    pub fn on_coords(set: SimpleSet, coords: Vec<usize>, dim: usize) -> Result<Self> {
        set.validate()?;
        check_dim(set.dim(), coords.len())?;
        if let Some(&bad) = coords.iter().find(|&&c| c >= dim) {
            return Err(Error::InvalidParameter(format!(
                "coordinate {bad} out of range for dimension {dim}"
            )));
        }
        Ok(Self { set, coords, dim })
    }

    fn gather(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.coords.iter().map(|&c| x[c]).collect())
    }
}

/// Distance oracle on the whole vector.
pub fn distance_oracle(target: SimpleSet) -> Result<DistanceConstraint> {
    let dim = target.dim();
    DistanceConstraint::on_coords(target, (0..dim).collect(), dim)
}

impl ConstraintOracle for DistanceConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn violation(&self, x: &[f64]) -> Result<f64> {
        let xs = self.gather(x)?;
        let p = self.set.project(&xs)?;
        Ok(dist(&xs, &p))
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let xs = self.gather(x)?;
        let p = self.set.project(&xs)?;
        let violation = dist(&xs, &p);
        if violation <= SATISFIED_TOLERANCE {
            return Ok(Evaluation::Satisfied { violation });
        }
        let mut subgradient = vec![0.0; self.dim];
        for ((&c, xi), pi) in self.coords.iter().zip(&xs).zip(&p) {
            subgradient[c] = (xi - pi) / violation;
        }
        Ok(Evaluation::Violated {
            violation,
            subgradient,
        })
    }
}

/// `f(y) - t <= 0` with `y` the leading coordinates and `t = x[t_index]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpigraphConstraint {
    pub objective: Objective,
    pub t_index: usize,
    pub dim: usize,
}

impl ConstraintOracle for EpigraphConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn violation(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok((self.objective.value(x)? - x[self.t_index]).max(0.0))
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let violation = self.violation(x)?;
        if violation <= SATISFIED_TOLERANCE {
            return Ok(Evaluation::Satisfied { violation });
        }
        let mut subgradient = vec![0.0; self.dim];
        let s = self.objective.subgradient(x)?;
        subgradient[..s.len()].copy_from_slice(&s);
        subgradient[self.t_index] -= 1.0;
        Ok(Evaluation::Violated {
            violation,
            subgradient,
        })
    }
}

/// Component constraint held by an agent (one element `ω` of `Ω_i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    LinearBlock(LinearBlock),
    Lmi(Arc<LmiConstraint>),
    Distance(DistanceConstraint),
    Epigraph(EpigraphConstraint),
}

impl Constraint {
    fn oracle(&self) -> &dyn ConstraintOracle {
        match self {
            Self::LinearBlock(c) => c,
            Self::Lmi(c) => c.as_ref(),
            Self::Distance(c) => c,
            Self::Epigraph(c) => c,
        }
    }

    /// Short label used in audits.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::LinearBlock(_) => "linear_block",
            Self::Lmi(_) => "lmi",
            Self::Distance(_) => "distance",
            Self::Epigraph(_) => "epigraph",
        }
    }

    /// Same constraint on a longer vector whose extra coordinates it ignores.
    pub fn lift(&self, dim: usize) -> Result<Self> {
        let current = self.dim();
        if dim < current {
            return Err(Error::DimensionMismatch {
                expected: current,
                found: dim,
            });
        }
        Ok(match self {
            Self::LinearBlock(c) => Self::LinearBlock(c.lift(dim)),
            Self::Lmi(c) => Self::Lmi(Arc::new(c.lift(dim))),
            Self::Distance(c) => Self::Distance(DistanceConstraint { dim, ..c.clone() }),
            Self::Epigraph(c) => Self::Epigraph(EpigraphConstraint { dim, ..c.clone() }),
        })
    }
}

impl From<LinearBlock> for Constraint {
    fn from(c: LinearBlock) -> Self {
        Self::LinearBlock(c)
    }
}

impl From<LmiConstraint> for Constraint {
    fn from(c: LmiConstraint) -> Self {
        Self::Lmi(Arc::new(c))
    }
}

impl From<DistanceConstraint> for Constraint {
    fn from(c: DistanceConstraint) -> Self {
        Self::Distance(c)
    }
}

impl ConstraintOracle for Constraint {
    fn dim(&self) -> usize {
        self.oracle().dim()
    }

    fn violation(&self, x: &[f64]) -> Result<f64> {
        self.oracle().violation(x)
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        self.oracle().evaluate(x)
    }
}

fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Discretizes the uncertainty set `‖A - A_0‖_op <= r1, ‖b - b_0‖ <= r2` into
/// `count` sampled scenarios. Each perturbation is a random direction scaled
/// to `radius · U[0, 1]`.
pub fn robust_linear_scenarios<R: Rng + ?Sized>(
    a0: &DMatrix<f64>,
    b0: &DVector<f64>,
    r1: f64,
    r2: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<LinearBlock>> {
    if !(r1 >= 0.0 && r2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "uncertainty radii must be nonnegative".into(),
        ));
    }
    check_dim(a0.nrows(), b0.len())?;
    (0..count)
        .map(|_| {
            let g: DMatrix<f64> = DMatrix::from_fn(a0.nrows(), a0.ncols(), |_, _| {
                StandardNormal.sample(rng)
            });
            let scale = r1 * rng.random::<f64>() / operator_norm(&g).max(f64::MIN_POSITIVE);
            let h: DVector<f64> = DVector::from_fn(b0.len(), |_, _| StandardNormal.sample(rng));
            let shift = r2 * rng.random::<f64>() / h.norm().max(f64::MIN_POSITIVE);
            LinearBlock::new(a0 + g * scale, b0 + h * shift)
        })
        .collect()
}

/// Index `ω` into an agent's finite constraint set `Ω_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintSample(pub usize);

/// Uniform draw over `Ω_i`; `None` when the agent holds no constraints.
pub fn sample_omega<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Option<ConstraintSample> {
    (count > 0).then(|| ConstraintSample(rng.random_range(0..count)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(d))
    }

    #[test]
    fn simple_projections() {
        let full = SimpleSet::FullSpace { dim: 2 };
        assert_eq!(full.project(&[3.0, -7.0]).unwrap(), vec![3.0, -7.0]);

        let b = SimpleSet::Box {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        assert_eq!(b.project(&[2.0, -1.0]).unwrap(), vec![1.0, 0.0]);

        let s = SimpleSet::Simplex { dim: 2, scale: 1.0 };
        let p = s.project(&[0.8, 0.8]).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
        let p = s.project(&[2.0, -1.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);

        let ball = SimpleSet::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(ball.project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);

        let prod = SimpleSet::Product {
            blocks: vec![b.clone(), SimpleSet::FullSpace { dim: 1 }],
        };
        assert_eq!(prod.project(&[2.0, 0.5, -9.0]).unwrap(), vec![1.0, 0.5, -9.0]);
        assert!(matches!(
            prod.project(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn set_validation() {
        assert!(SimpleSet::Box { lower: vec![1.0], upper: vec![0.0] }.validate().is_err());
        assert!(SimpleSet::Ball { center: vec![0.0], radius: 0.0 }.validate().is_err());
        assert!(SimpleSet::Simplex { dim: 3, scale: -1.0 }.validate().is_err());
        assert!(SimpleSet::Box { lower: vec![f64::NEG_INFINITY], upper: vec![0.0] }
            .validate()
            .is_ok());
    }

    #[test]
    fn psd_part_examples() {
        assert_eq!(psd_part(&diag(&[1.0, -1.0])).unwrap(), diag(&[1.0, 0.0]));

        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert!((psd_part(&pd).unwrap() - &pd).amax() <= 1e-10);

        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let plus = psd_part(&swap).unwrap();
        assert!((plus - DMatrix::from_element(2, 2, 0.5)).amax() <= 1e-12);

        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(psd_part(&bad), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn lmi_examples() {
        let neg = LmiConstraint::new(vec![-DMatrix::identity(2, 2), DMatrix::zeros(2, 2)]).unwrap();
        assert_eq!(lmi_violation(&neg, &[5.0]).unwrap(), 0.0);
        assert!(matches!(lmi_subgradient(&neg, &[5.0]), Err(Error::Satisfied)));

        let id = LmiConstraint::new(vec![DMatrix::zeros(2, 2), DMatrix::identity(2, 2)]).unwrap();
        assert_abs_diff_eq!(lmi_violation(&id, &[3.0]).unwrap(), 3.0 * 2f64.sqrt(), epsilon = 1e-12);
        let d = lmi_subgradient(&id, &[3.0]).unwrap();
        assert_abs_diff_eq!(d[0], 2f64.sqrt(), epsilon = 1e-12);
        for t in [0.1, 2.0, 17.0] {
            let d = lmi_subgradient(&id, &[3.0 * t]).unwrap();
            assert_abs_diff_eq!(d[0], 2f64.sqrt(), epsilon = 1e-12);
        }

        let mixed = LmiConstraint::new(vec![diag(&[-1.0, 1.0]), DMatrix::zeros(2, 2)]).unwrap();
        assert_abs_diff_eq!(lmi_violation(&mixed, &[0.0]).unwrap(), 1.0, epsilon = 1e-12);

        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(LmiConstraint::new(vec![asym]).is_err());
        assert!(id.violation(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_block_examples() {
        let block = LinearBlock::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]).unwrap();
        assert_eq!(linear_block_violation(&block, &[-1.0, -2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(linear_block_violation(&block, &[3.0, 4.0]).unwrap(), 5.0);
        assert_abs_diff_eq!(linear_block_violation(&block, &[-3.0, 4.0]).unwrap(), 4.0);
        let d = linear_block_subgradient(&block, &[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(d[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.8, epsilon = 1e-15);
        assert_eq!(linear_block_subgradient(&block, &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn distance_examples() {
        let ball = distance_oracle(SimpleSet::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        })
        .unwrap();
        assert_eq!(ball.violation(&[0.5, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(ball.violation(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ball.subgradient(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);

        let row = DistanceConstraint::on_coords(
            SimpleSet::Simplex { dim: 2, scale: 1.0 },
            vec![1, 3],
            4,
        )
        .unwrap();
        let d = row.subgradient(&[9.0, 1.0, 9.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d[1], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn epigraph_constraint() {
        let c = EpigraphConstraint {
            objective: Objective::Quadratic {
                center: vec![1.0],
                weight: 2.0,
            },
            t_index: 1,
            dim: 2,
        };
        // f(3) = 4
        assert_abs_diff_eq!(c.violation(&[3.0, 1.0]).unwrap(), 3.0);
        assert_eq!(c.subgradient(&[3.0, 1.0]).unwrap(), vec![4.0, -1.0]);
        assert_eq!(c.violation(&[3.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn robust_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a0 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 1.0]);
        let b0 = DVector::from_column_slice(&[1.0, 2.0]);
        let same = robust_linear_scenarios(&a0, &b0, 0.0, 0.0, 3, &mut rng).unwrap();
        assert!(same.iter().all(|s| s.a() == &a0 && s.b() == &b0));

        let blocks = robust_linear_scenarios(&a0, &b0, 0.3, 0.2, 5, &mut rng).unwrap();
        assert_eq!(blocks.len(), 5);
        for s in &blocks {
            assert!(operator_norm(&(s.a() - &a0)) <= 0.3 + 1e-9);
            assert!((s.b() - &b0).norm() <= 0.2 + 1e-9);
        }
        assert!(robust_linear_scenarios(&a0, &b0, -1.0, 0.0, 1, &mut rng).is_err());
    }

    #[test]
    fn omega_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_omega(0, &mut rng), None);
        assert!((0..100).all(|_| sample_omega(1, &mut rng) == Some(ConstraintSample(0))));

        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sample_omega(4, &mut rng).unwrap().0] += 1;
        }
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 0.25 * draws as f64).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn constraint_serde_roundtrip() {
        let c: Constraint = LmiConstraint::new(vec![diag(&[1.0, -1.0]), -DMatrix::identity(2, 2)])
            .unwrap()
            .into();
        let text = serde_json::to_string(&c).unwrap();
        let back: Constraint = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
        assert_abs_diff_eq!(back.violation(&[0.0]).unwrap(), 1.0, epsilon = 1e-12);
    }
}
