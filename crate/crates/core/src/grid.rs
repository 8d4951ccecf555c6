//! Regular-grid discretization.
//!
//! Fields live on 1D or 2D cell-centred grids stored row-major (the last axis
//! varies fastest). The discrete gradient uses forward differences with a
//! zero component in the last cell along each axis (zero-flux boundary), and
//! [`divergence`] is its exact negative adjoint. Inner products carry the cell
//! volume so that discrete norms approximate L² integrals over the domain.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Regular 1D/2D grid with per-axis spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: Vec<usize>,
    spacing: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(dims: Vec<usize>, spacing: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "expected 1 or 2 axes, got {}",
                dims.len()
            )));
        }
        if spacing.len() != dims.len() {
            return Err(Error::InvalidGrid(format!(
                "{} axes but {} spacings",
                dims.len(),
                spacing.len()
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidGrid(format!("every axis needs at least 2 cells, got {d}")));
        }
        if spacing.iter().any(|h| !(h.is_finite() && *h > T::zero())) {
            return Err(Error::InvalidGrid("spacing must be finite and positive".into()));
        }
        Ok(Self { dims, spacing })
    }

    /// Grid over the unit interval/square: spacing `1/n` along every axis.
    pub fn unit(dims: Vec<usize>) -> Result<Self> {
        let spacing = dims
            .iter()
            .map(|&n| T::one() / T::from_usize(n.max(1)).unwrap_or_else(T::one))
            .collect();
        Self::new(dims, spacing)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> T {
        self.spacing.iter().fold(T::one(), |acc, &h| acc * h)
    }

    /// Total measure of the domain, `cell_volume * len`.
    pub fn measure(&self) -> T {
        self.cell_volume() * T::from_usize(self.len()).unwrap_or_else(T::nan)
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    /// Multi-index of the flat cell index `i`.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for axis in (0..self.dims.len()).rev() {
            out[axis] = i % self.dims[axis];
            i /= self.dims[axis];
        }
        out
    }

    /// Node coordinate `index * spacing` of a cell along each axis.
    pub fn coordinates(&self, i: usize) -> Vec<T> {
        self.multi_index(i)
            .into_iter()
            .zip(&self.spacing)
            .map(|(k, &h)| T::from_usize(k).unwrap_or_else(T::nan) * h)
            .collect()
    }

    /// Side length of the domain along `axis`.
    pub fn extent(&self, axis: usize) -> T {
        T::from_usize(self.dims[axis]).unwrap_or_else(T::nan) * self.spacing[axis]
    }

    pub(crate) fn ensure_same(&self, other: &Self) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// Iterates `(outer, extent, inner)` blocks so that cell `(o * extent + j) * inner + r`
    /// walks axis `axis` with `j`.
    fn axis_layout(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.dims[..axis].iter().product();
        (outer, self.dims[axis], self.stride(axis))
    }
}

/// Scalar function sampled once per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Scalar> Field<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Grid<T>, c: T) -> Self {
        Self {
            values: vec![c; grid.len()],
            grid: grid.clone(),
        }
    }

    /// Builds a field from a closure over node coordinates.
    pub fn from_fn(grid: &Grid<T>, mut f: impl FnMut(&[T]) -> T) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.coordinates(i))).collect();
        Self::new(grid.clone(), values)
    }

    /// Internal constructor for values produced by arithmetic on finite inputs.
    pub(crate) fn from_parts(grid: Grid<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| a * v)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self::from_parts(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        ))
    }

    /// `self + t * dir`.
    pub fn add_scaled(&self, t: T, dir: &Self) -> Result<Self> {
        self.combine(T::one(), dir, t)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(T::one(), other, -T::one())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(T::one(), other, T::one())
    }

    pub fn inner(&self, other: &Self) -> Result<T> {
        inner(self, other)
    }

    pub fn norm_l2(&self) -> T {
        norm_l2(self)
    }

    /// Cell-volume-weighted mean value.
    pub fn mean(&self) -> T {
        let n = T::from_usize(self.len()).unwrap_or_else(T::nan);
        self.values.iter().copied().sum::<T>() / n
    }

    /// Serializes as flat row-major CSV: a `dims` row, a `spacing` row, then one value per row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        let mut dims = vec!["dims".to_string()];
        dims.extend(self.grid.dims.iter().map(|d| d.to_string()));
        w.write_record(&dims)?;
        let mut spacing = vec!["spacing".to_string()];
        spacing.extend(self.grid.spacing.iter().map(|h| h.to_string()));
        w.write_record(&spacing)?;
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
        let mut header = |name: &str| -> Result<Vec<String>> {
            let rec = records
                .next()
                .ok_or_else(|| Error::Parse(format!("missing `{name}` header row")))??;
            if rec.get(0) != Some(name) {
                return Err(Error::Parse(format!("expected `{name}` header row")));
            }
            Ok(rec.iter().skip(1).map(str::to_string).collect())
        };
        let dims = header("dims")?
            .iter()
            .map(|s| s.parse::<usize>().map_err(|e| Error::Parse(format!("dims: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let spacing = header("spacing")?
            .iter()
            .map(|s| parse_scalar::<T>(s))
            .collect::<Result<Vec<_>>>()?;
        let grid = Grid::new(dims, spacing)?;
        let values = records
            .map(|rec| {
                let rec = rec?;
                parse_scalar::<T>(rec.get(0).unwrap_or(""))
            })
            .collect::<Result<Vec<_>>>()?;
        Field::new(grid, values)
    }
}

pub(crate) fn parse_scalar<T: Scalar>(s: &str) -> Result<T> {
    let x: f64 = s
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("`{s}`: {e}")))?;
    T::from_f64(x).ok_or_else(|| Error::Parse(format!("`{s}` not representable")))
}

/// One component array per axis, each the length of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    grid: Grid<T>,
    components: Vec<Vec<T>>,
}

impl<T: Scalar> VectorField<T> {
    pub fn new(grid: Grid<T>, components: Vec<Vec<T>>) -> Result<Self> {
        if components.len() != grid.ndim() {
            return Err(Error::InvalidParameter(format!(
                "{} components on a {}-axis grid",
                components.len(),
                grid.ndim()
            )));
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: grid.len(),
                    found: c.len(),
                });
            }
            if let Some(index) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: &Grid<T>) -> Self {
        Self {
            components: vec![vec![T::zero(); grid.len()]; grid.ndim()],
            grid: grid.clone(),
        }
    }

    pub(crate) fn from_parts(grid: Grid<T>, components: Vec<Vec<T>>) -> Self {
        Self { grid, components }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<T>] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &[T] {
        &self.components[axis]
    }

    /// Squared Euclidean length of the vector in cell `i`.
    pub fn magnitude_sq(&self, i: usize) -> T {
        self.components.iter().map(|c| c[i] * c[i]).sum()
    }

    pub fn inner(&self, other: &Self) -> Result<T> {
        self.grid.ensure_same(&other.grid)?;
        let raw: T = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>())
            .sum();
        Ok(self.grid.cell_volume() * raw)
    }

    pub fn norm_l2(&self) -> T {
        let raw: T = self.components.iter().flatten().map(|&x| x * x).sum();
        (self.grid.cell_volume() * raw).sqrt()
    }
}

/// Forward-difference gradient; the last cell along each axis gets a zero component.
pub fn gradient<T: Scalar>(f: &Field<T>) -> VectorField<T> {
    let grid = f.grid();
    let u = f.values();
    let components = (0..grid.ndim())
        .map(|axis| {
            let (outer, extent, inner) = grid.axis_layout(axis);
            let inv_h = T::one() / grid.spacing[axis];
            let mut c = vec![T::zero(); u.len()];
            for o in 0..outer {
                for j in 0..extent - 1 {
                    let base = (o * extent + j) * inner;
                    for r in 0..inner {
                        let i = base + r;
                        c[i] = (u[i + inner] - u[i]) * inv_h;
                    }
                }
            }
            c
        })
        .collect();
    VectorField::from_parts(grid.clone(), components)
}

/// Discrete divergence, the exact negative adjoint of [`gradient`].
///
/// Entries of `v` in the last cell along an axis are ignored, matching the
/// zero rows of the gradient there.
pub fn divergence<T: Scalar>(v: &VectorField<T>) -> Field<T> {
    let grid = v.grid();
    let mut out = vec![T::zero(); grid.len()];
    for (axis, c) in v.components().iter().enumerate() {
        let (outer, extent, inner) = grid.axis_layout(axis);
        let inv_h = T::one() / grid.spacing[axis];
        for o in 0..outer {
            for j in 0..extent {
                let base = (o * extent + j) * inner;
                for r in 0..inner {
                    let i = base + r;
                    let mut acc = T::zero();
                    if j + 1 < extent {
                        acc = acc + c[i];
                    }
                    if j > 0 {
                        acc = acc - c[i - inner];
                    }
                    out[i] = out[i] + acc * inv_h;
                }
            }
        }
    }
    Field::from_parts(grid.clone(), out)
}

/// Cell-volume-weighted inner product.
pub fn inner<T: Scalar>(a: &Field<T>, b: &Field<T>) -> Result<T> {
    a.grid.ensure_same(&b.grid)?;
    let raw: T = a.values.iter().zip(&b.values).map(|(&x, &y)| x * y).sum();
    Ok(a.grid.cell_volume() * raw)
}

pub fn norm_l2<T: Scalar>(a: &Field<T>) -> T {
    let raw: T = a.values.iter().map(|&x| x * x).sum();
    (a.grid.cell_volume() * raw).sqrt()
}
