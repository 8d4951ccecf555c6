//! Linear forward operators from the solution grid to measurement space.
//!
//! Measurement space carries its own weight `range_weight`: the range inner
//! product is `range_weight * Σ a[i] b[i]`. Identity and blur operators map
//! onto the domain grid, so their range weight is the domain cell volume and
//! range norms approximate the same L² integrals as domain norms.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{parse_scalar, Field, Grid};
use crate::scalar::Scalar;

/// Smallest singular value below which the injectivity diagnostic warns.
pub const INJECTIVITY_WARN_THRESHOLD: f64 = 1e-10;

/// Largest domain for which a dense matrix is assembled by the diagnostic.
pub const DENSE_DIAGNOSTIC_MAX_CELLS: usize = 1024;

const POWER_ITERATION_SEED: u64 = 0x5eed_0f_7e57;

/// Measured data, one value per measurement-space entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<T> {
    values: Vec<T>,
}

impl<T: Scalar> Measurement<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub(crate) fn from_vec(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(Self::from_vec(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(T::one(), other, -T::one())
    }

    /// Writes a `measurement,<len>` header row followed by one value per row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record(["measurement".to_string(), self.len().to_string()])?;
        for v in &self.values {
            w.write_record([v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Parse("empty measurement file".into()))??;
        if header.get(0) != Some("measurement") {
            return Err(Error::Parse("expected `measurement` header row".into()));
        }
        let len: usize = header
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::Parse(format!("measurement length: {e}")))?;
        let values = records
            .map(|rec| parse_scalar::<T>(rec?.get(0).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: values.len(),
            });
        }
        Measurement::new(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind<T> {
    Identity,
    /// Separable convolution applied along every axis, truncated and
    /// renormalized at the boundary.
    Blur { kernel: Vec<T> },
    /// Dense row-major matrix with `rows` rows and one column per cell.
    Matrix { rows: usize, entries: Vec<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator<T> {
    kind: OperatorKind<T>,
    domain: Grid<T>,
    range_weight: T,
}

/// Result of the dense-matrix injectivity check.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InjectivityDiagnostic {
    /// Smallest singular value with respect to the weighted inner products.
    pub smallest_singular_value: f64,
    pub warn: bool,
}

impl<T: Scalar> ForwardOperator<T> {
    pub fn identity(domain: &Grid<T>) -> Self {
        Self {
            kind: OperatorKind::Identity,
            range_weight: domain.cell_volume(),
            domain: domain.clone(),
        }
    }

    pub fn blur(domain: &Grid<T>, kernel: Vec<T>) -> Result<Self> {
        if kernel.is_empty() || kernel.len() % 2 == 0 {
            return Err(Error::InvalidOperator(format!(
                "blur kernel length must be odd, got {}",
                kernel.len()
            )));
        }
        if kernel.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidOperator(
                "blur kernel weights must be finite and nonnegative".into(),
            ));
        }
        let sum: T = kernel.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidOperator(format!(
                "blur kernel must sum to 1, sums to {sum}"
            )));
        }
        Ok(Self {
            kind: OperatorKind::Blur { kernel },
            range_weight: domain.cell_volume(),
            domain: domain.clone(),
        })
    }

    pub fn matrix(domain: &Grid<T>, rows: usize, entries: Vec<T>, range_weight: T) -> Result<Self> {
        if rows == 0 {
            return Err(Error::InvalidOperator("matrix needs at least one row".into()));
        }
        if entries.len() != rows * domain.len() {
            return Err(Error::InvalidOperator(format!(
                "matrix with {rows} rows over {} cells needs {} entries, got {}",
                domain.len(),
                rows * domain.len(),
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("matrix entries must be finite".into()));
        }
        if !(range_weight.is_finite() && range_weight > T::zero()) {
            return Err(Error::InvalidOperator("range weight must be positive".into()));
        }
        Ok(Self {
            kind: OperatorKind::Matrix { rows, entries },
            domain: domain.clone(),
            range_weight,
        })
    }

    pub fn kind(&self) -> &OperatorKind<T> {
        &self.kind
    }

    pub fn domain_grid(&self) -> &Grid<T> {
        &self.domain
    }

    pub fn range_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Matrix { rows, .. } => *rows,
            _ => self.domain.len(),
        }
    }

    pub fn range_weight(&self) -> T {
        self.range_weight
    }

    fn check_measurement(&self, y: &Measurement<T>) -> Result<()> {
        if y.len() == self.range_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.range_dim(),
                found: y.len(),
            })
        }
    }

    pub fn range_inner(&self, a: &Measurement<T>, b: &Measurement<T>) -> Result<T> {
        self.check_measurement(a)?;
        self.check_measurement(b)?;
        let raw: T = a.values.iter().zip(&b.values).map(|(&x, &y)| x * y).sum();
        Ok(self.range_weight * raw)
    }

    pub fn range_norm(&self, a: &Measurement<T>) -> Result<T> {
        self.check_measurement(a)?;
        let raw: T = a.values.iter().map(|&x| x * x).sum();
        Ok((self.range_weight * raw).sqrt())
    }

    pub fn apply(&self, u: &Field<T>) -> Result<Measurement<T>> {
        self.domain.ensure_same(u.grid())?;
        let values = match &self.kind {
            OperatorKind::Identity => u.values().to_vec(),
            OperatorKind::Blur { kernel } => {
                let mut v = u.values().to_vec();
                for axis in 0..self.domain.ndim() {
                    v = blur_axis(&self.domain, &v, kernel, axis, false);
                }
                v
            }
            OperatorKind::Matrix { entries, .. } => {
                let n = self.domain.len();
                entries
                    .chunks_exact(n)
                    .map(|row| row.iter().zip(u.values()).map(|(&m, &x)| m * x).sum())
                    .collect()
            }
        };
        Ok(Measurement::from_vec(values))
    }

    /// Adjoint with respect to the weighted domain and range inner products.
    pub fn adjoint(&self, y: &Measurement<T>) -> Result<Field<T>> {
        self.check_measurement(y)?;
        let values = match &self.kind {
            OperatorKind::Identity => {
                let ratio = self.range_weight / self.domain.cell_volume();
                y.values.iter().map(|&x| ratio * x).collect()
            }
            OperatorKind::Blur { kernel } => {
                let mut v = y.values.clone();
                for axis in (0..self.domain.ndim()).rev() {
                    v = blur_axis(&self.domain, &v, kernel, axis, true);
                }
                v
            }
            OperatorKind::Matrix { entries, .. } => {
                let n = self.domain.len();
                let ratio = self.range_weight / self.domain.cell_volume();
                let mut out = vec![T::zero(); n];
                for (row, &yi) in entries.chunks_exact(n).zip(&y.values) {
                    for (o, &m) in out.iter_mut().zip(row) {
                        *o = *o + m * yi;
                    }
                }
                out.into_iter().map(|x| ratio * x).collect()
            }
        };
        Ok(Field::from_parts(self.domain.clone(), values))
    }

    /// `T* T u`.
    pub fn normal(&self, u: &Field<T>) -> Result<Field<T>> {
        self.adjoint(&self.apply(u)?)
    }

    /// Operator norm by power iteration on `T* T` with a fixed-seed start vector.
    pub fn operator_norm(&self, tol: T) -> Result<T> {
        self.operator_norm_with(tol, 100_000)
    }

    pub fn operator_norm_with(&self, tol: T, max_iters: usize) -> Result<T> {
        if !(tol > T::zero()) {
            return Err(Error::InvalidParameter("operator_norm tolerance must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
        let start = (0..self.domain.len())
            .map(|_| T::lit(rng.random_range(-1.0..1.0)))
            .collect();
        let mut x = Field::from_parts(self.domain.clone(), start);
        x = x.scale(T::one() / x.norm_l2());
        let mut estimate = T::zero();
        for k in 1..=max_iters {
            let tx = self.apply(&x)?;
            let next = self.range_norm(&tx)?;
            if next == T::zero() {
                return Ok(T::zero());
            }
            let y = self.adjoint(&tx)?;
            let y_norm = y.norm_l2();
            x = y.scale(T::one() / y_norm);
            if k > 1 && (next - estimate).abs() <= tol * next {
                return Ok(next);
            }
            estimate = next;
        }
        Err(Error::NotConverged {
            estimate: estimate.to_f64_lossy(),
            iterations: max_iters,
        })
    }

    /// Dense matrix of the plain (unweighted) map, `range_dim x len`, in `f64`.
    pub fn dense_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.domain.len();
        let mut m = DMatrix::zeros(self.range_dim(), n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = self.apply(&Field::from_parts(self.domain.clone(), e))?;
            for (i, v) in col.values.iter().enumerate() {
                m[(i, j)] = v.to_f64_lossy();
            }
        }
        Ok(m)
    }

    /// Smallest weighted singular value from a dense SVD; `None` on grids larger
    /// than [`DENSE_DIAGNOSTIC_MAX_CELLS`].
    pub fn injectivity_diagnostic(&self) -> Result<Option<InjectivityDiagnostic>> {
        let n = self.domain.len();
        if n > DENSE_DIAGNOSTIC_MAX_CELLS {
            return Ok(None);
        }
        let smallest = if self.range_dim() < n {
            0.0
        } else {
            let scale =
                (self.range_weight.to_f64_lossy() / self.domain.cell_volume().to_f64_lossy()).sqrt();
            let sv = self.dense_matrix()?.singular_values();
            scale * sv.iter().copied().fold(f64::INFINITY, f64::min)
        };
        Ok(Some(InjectivityDiagnostic {
            smallest_singular_value: smallest,
            warn: smallest < INJECTIVITY_WARN_THRESHOLD,
        }))
    }
}

/// One-axis truncated convolution with per-output renormalization, or its transpose.
fn blur_axis<T: Scalar>(grid: &Grid<T>, v: &[T], kernel: &[T], axis: usize, transpose: bool) -> Vec<T> {
    let n = grid.dims()[axis];
    let inner = grid.stride(axis);
    let outer: usize = grid.dims()[..axis].iter().product();
    let half = kernel.len() / 2;
    // Normalization of output position i along the axis.
    let inv_norm: Vec<T> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let s: T = (lo..=hi).map(|j| kernel[j + half - i]).sum();
            T::one() / s
        })
        .collect();
    let mut out = vec![T::zero(); v.len()];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            for j in lo..=hi {
                // Forward: out[i] += w(i, j) v[j]; transpose: out[j] += w(i, j) v[i].
                let w = kernel[j + half - i] * inv_norm[i];
                let (dst, src) = if transpose { (j, i) } else { (i, j) };
                let src = &v[base + src * inner..base + (src + 1) * inner];
                let dst = &mut out[base + dst * inner..base + (dst + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + w * s;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field(grid: &Grid<f64>, rng: &mut ChaCha8Rng) -> Field<f64> {
        let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(grid.clone(), v).unwrap()
    }

    fn random_measurement(n: usize, rng: &mut ChaCha8Rng) -> Measurement<f64> {
        Measurement::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn fixtures() -> Vec<ForwardOperator<f64>> {
        let g1 = Grid::unit(vec![32]).unwrap();
        let g2 = Grid::unit(vec![12, 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let entries = (0..15 * 120).map(|_| rng.random_range(-1.0..1.0)).collect();
        vec![
            ForwardOperator::identity(&g1),
            ForwardOperator::identity(&g2),
            ForwardOperator::blur(&g1, vec![0.25, 0.5, 0.25]).unwrap(),
            ForwardOperator::blur(&g2, vec![0.1, 0.2, 0.4, 0.2, 0.1]).unwrap(),
            ForwardOperator::matrix(&g2, 15, entries, 0.3).unwrap(),
        ]
    }

    #[test]
    fn identity_returns_values() {
        let g = Grid::<f64>::unit(vec![4, 3]).unwrap();
        let u = Field::new(g.clone(), (0..12).map(|i| i as f64).collect()).unwrap();
        let op = ForwardOperator::identity(&g);
        let y = op.apply(&u).unwrap();
        assert_eq!(y.values(), u.values());
        assert_eq!(op.adjoint(&y).unwrap(), u);
    }

    #[test]
    fn blur_of_impulse_is_centred_kernel_with_edge_renormalization() {
        let g = Grid::<f64>::unit(vec![7]).unwrap();
        let op = ForwardOperator::blur(&g, vec![0.25, 0.5, 0.25]).unwrap();
        let impulse = |k: usize| {
            let mut v = vec![0.0; 7];
            v[k] = 1.0;
            Field::new(g.clone(), v).unwrap()
        };
        // Direct convolution oracle.
        let oracle = |k: usize| -> Vec<f64> {
            let w = [0.25, 0.5, 0.25];
            (0..7i64)
                .map(|i| {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for t in -1..=1i64 {
                        let j = i + t;
                        if (0..7).contains(&j) {
                            norm += w[(t + 1) as usize];
                            if j as usize == k {
                                acc += w[(t + 1) as usize];
                            }
                        }
                    }
                    acc / norm
                })
                .collect()
        };
        let mid = op.apply(&impulse(3)).unwrap();
        assert_eq!(mid.values(), &[0.0, 0.0, 0.25, 0.5, 0.25, 0.0, 0.0]);
        for k in 0..7 {
            let got = op.apply(&impulse(k)).unwrap();
            for (a, b) in got.values().iter().zip(oracle(k)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let edge = op.apply(&impulse(0)).unwrap();
        assert!((edge.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(edge.values()[1], 0.25);
    }

    #[test]
    fn explicit_projection() {
        let g = Grid::new(vec![2], vec![1.0]).unwrap();
        let op = ForwardOperator::matrix(&g, 2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let y = op.apply(&Field::new(g, vec![2.5, -4.0]).unwrap()).unwrap();
        assert_eq!(y.values(), &[2.5, 0.0]);
    }

    #[test]
    fn matrix_adjoint_is_weighted_transpose() {
        let g = Grid::new(vec![3], vec![0.5]).unwrap();
        let m = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let op = ForwardOperator::matrix(&g, 2, m.clone(), 2.0).unwrap();
        let y = Measurement::new(vec![1.0, -1.0]).unwrap();
        let got = op.adjoint(&y).unwrap();
        // Dense transpose oracle with weight ratio 2.0 / 0.5.
        let expect: Vec<f64> = (0..3).map(|j| 4.0 * (m[j] - m[3 + j])).collect();
        assert_eq!(got.values(), expect.as_slice());
    }

    #[test]
    fn adjoint_identity_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for op in fixtures() {
            for _ in 0..100 {
                let u = random_field(op.domain_grid(), &mut rng);
                let y = random_measurement(op.range_dim(), &mut rng);
                let lhs = op.range_inner(&op.apply(&u).unwrap(), &y).unwrap();
                let rhs = u.inner(&op.adjoint(&y).unwrap()).unwrap();
                let scale = u.norm_l2() * op.range_norm(&y).unwrap();
                assert!((lhs - rhs).abs() <= 1e-12 * scale, "{:?}: {lhs} vs {rhs}", op.kind());
            }
        }
    }

    #[test]
    fn apply_and_adjoint_are_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for op in fixtures() {
            let u = random_field(op.domain_grid(), &mut rng);
            let w = random_field(op.domain_grid(), &mut rng);
            let lhs = op.apply(&u.combine(1.5, &w, -2.0).unwrap()).unwrap();
            let rhs = op
                .apply(&u)
                .unwrap()
                .combine(1.5, &op.apply(&w).unwrap(), -2.0)
                .unwrap();
            for (a, b) in lhs.values().iter().zip(rhs.values()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            let y = random_measurement(op.range_dim(), &mut rng);
            let z = random_measurement(op.range_dim(), &mut rng);
            let lhs = op.adjoint(&y.combine(0.5, &z, 3.0).unwrap()).unwrap();
            let rhs = op
                .adjoint(&y)
                .unwrap()
                .combine(0.5, &op.adjoint(&z).unwrap(), 3.0)
                .unwrap();
            for (a, b) in lhs.values().iter().zip(rhs.values()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let g = Grid::<f64>::unit(vec![4]).unwrap();
        let op = ForwardOperator::identity(&g);
        assert!(matches!(
            op.adjoint(&Measurement::new(vec![0.0; 3]).unwrap()),
            Err(Error::DimensionMismatch { expected: 4, found: 3 })
        ));
        let other = Field::zeros(&Grid::unit(vec![5]).unwrap());
        assert!(matches!(op.apply(&other), Err(Error::GridMismatch(_))));
        assert!(ForwardOperator::blur(&g, vec![0.5, 0.5]).is_err());
        assert!(ForwardOperator::blur(&g, vec![0.2, 0.2, 0.2]).is_err());
        assert!(ForwardOperator::blur(&g, vec![-0.5, 2.0, -0.5]).is_err());
        assert!(ForwardOperator::matrix(&g, 2, vec![0.0; 7], 1.0).is_err());
    }

    #[test]
    fn operator_norm_simple_cases() {
        let g = Grid::<f64>::unit(vec![16, 16]).unwrap();
        let tol = 1e-10;
        let id = ForwardOperator::identity(&g).operator_norm(tol).unwrap();
        assert!((id - 1.0).abs() <= 1e-9);
        let g2 = Grid::new(vec![2], vec![1.0]).unwrap();
        let diag = ForwardOperator::matrix(&g2, 2, vec![3.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        assert!((diag.operator_norm(tol).unwrap() - 3.0).abs() <= 3.0 * 1e-9);
        let zero = ForwardOperator::matrix(&g2, 1, vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(zero.operator_norm(tol).unwrap(), 0.0);
    }

    #[test]
    fn operator_norm_reports_non_convergence() {
        let g = Grid::<f64>::unit(vec![64]).unwrap();
        let op = ForwardOperator::blur(&g, vec![0.25, 0.5, 0.25]).unwrap();
        match op.operator_norm_with(1e-15, 3) {
            Err(Error::NotConverged { estimate, iterations: 3 }) => assert!(estimate > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn operator_norm_bounds_random_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for op in fixtures() {
            let norm = op.operator_norm(1e-12).unwrap();
            for _ in 0..50 {
                let u = random_field(op.domain_grid(), &mut rng);
                let ratio = op.range_norm(&op.apply(&u).unwrap()).unwrap() / u.norm_l2();
                assert!(ratio <= norm * (1.0 + 1e-9), "{ratio} > {norm}");
            }
        }
    }

    #[test]
    fn injectivity_diagnostic_flags_rank_deficiency() {
        let g = Grid::new(vec![2], vec![1.0]).unwrap();
        let proj = ForwardOperator::matrix(&g, 2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(proj.injectivity_diagnostic().unwrap().unwrap().warn);
        let g = Grid::<f64>::unit(vec![32]).unwrap();
        let blur = ForwardOperator::blur(&g, vec![0.25, 0.5, 0.25]).unwrap();
        let d = blur.injectivity_diagnostic().unwrap().unwrap();
        assert!(!d.warn && d.smallest_singular_value > 0.0);
        let big = ForwardOperator::identity(&Grid::<f64>::unit(vec![64, 64]).unwrap());
        assert!(big.injectivity_diagnostic().unwrap().is_none());
    }

    #[test]
    fn measurement_csv_round_trip() {
        let y = Measurement::new(vec![0.1, -2.5e-7, 3.0, 1.0 / 7.0]).unwrap();
        let mut buf = Vec::new();
        y.write_csv(&mut buf).unwrap();
        assert_eq!(Measurement::<f64>::read_csv(buf.as_slice()).unwrap(), y);
    }
}
