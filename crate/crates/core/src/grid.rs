//! Uniform periodic cell-centred grids and the finite-difference operators built on them.
//!
//! A [`Grid`] has `n0` cells along every axis and a common spacing `h`. Cell values are
//! stored row-major by `(i, j)` with `i` the x-index, so the flat index is `i * n0 + j`
//! in 2D and `i` in 1D. A [`FaceField`] along `axis` stores at flat index `k` the value on
//! the face between cell `k` and its successor along that axis (the `i + 1/2` face),
//! with periodic wrap-around.
//!
//! All operators are pure and linear in the cell field. The divergence is the exact
//! negative adjoint of the gradient under [`inner_product`] and [`face_inner_product`],
//! and every flux-form operator sums to zero over the grid.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n0: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    h: f64,
}

impl Grid {
    /// Builds a grid with `n0` cells per axis on the box `lower..upper`.
    ///
    /// All axes must have the same length so that they share one spacing.
    pub fn new(dim: usize, n0: usize, lower: &[f64], upper: &[f64]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidInput(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if n0 < 2 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 2 cells per axis, got {n0}"
            )));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::InvalidInput(format!(
                "expected {dim} lower and upper bounds, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for axis in 0..dim {
            lo[axis] = lower[axis];
            hi[axis] = upper[axis];
            if !lo[axis].is_finite() || !hi[axis].is_finite() || hi[axis] <= lo[axis] {
                return Err(Error::InvalidInput(format!(
                    "axis {axis} bounds ({}, {}) do not form a finite interval",
                    lo[axis], hi[axis]
                )));
            }
        }
        let length = hi[0] - lo[0];
        if dim == 2 && ((hi[1] - lo[1]) - length).abs() > 1e-12 * length {
            return Err(Error::InvalidInput(
                "all axes must share one spacing; domain lengths differ".into(),
            ));
        }
        Ok(Self {
            dim,
            n0,
            lower: lo,
            upper: hi,
            h: length / n0 as f64,
        })
    }

    /// Same bounds `lower..upper` on every axis.
    pub fn cube(dim: usize, n0: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(dim, n0, &vec![lower; dim], &vec![upper; dim])
    }

    /// The unit box `(0, 1)^dim`.
    pub fn unit(dim: usize, n0: usize) -> Result<Self> {
        Self::cube(dim, n0, 0.0, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    /// Number of cells, `n0^dim`.
    pub fn len(&self) -> usize {
        self.n0.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h^dim`, the weight of one cell in the discrete L² inner product.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    fn stride(&self, axis: usize) -> usize {
        if self.dim == 2 && axis == 0 {
            self.n0
        } else {
            1
        }
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis < self.dim {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "axis {axis} out of range for a {}-D grid",
                self.dim
            )))
        }
    }

    /// Flat index of the cell with per-axis indices `idx`.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        idx.iter().fold(0, |acc, &i| acc * self.n0 + i)
    }

    /// Per-axis indices of flat cell `k` (unused trailing entry is 0 in 1D).
    pub fn multi_index(&self, k: usize) -> [usize; 2] {
        if self.dim == 1 {
            [k, 0]
        } else {
            [k / self.n0, k % self.n0]
        }
    }

    /// Coordinates of the centre of flat cell `k`.
    pub fn cell_center(&self, k: usize) -> [f64; 2] {
        let idx = self.multi_index(k);
        let mut x = [0.0; 2];
        for axis in 0..self.dim {
            x[axis] = self.lower[axis] + (idx[axis] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Periodic neighbour of flat cell `k` one step forward along `axis`.
    #[inline]
    fn next(&self, k: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let i = (k / s) % self.n0;
        if i + 1 == self.n0 {
            k + s - self.n0 * s
        } else {
            k + s
        }
    }

    /// Periodic neighbour of flat cell `k` one step backward along `axis`.
    #[inline]
    fn prev(&self, k: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        let i = (k / s) % self.n0;
        if i == 0 {
            k + self.n0 * s - s
        } else {
            k - s
        }
    }
}

/// A cell-centred grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at cell {k}",
                values[k]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    /// Samples `f` at every cell centre.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|k| f(grid.cell_center(k))).collect();
        Self::new(grid, values)
    }

    /// Builds a field without the finiteness scan; callers guarantee the length.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ h^dim f`, the discrete integral.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Applies `f` cellwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Errors unless every value is strictly positive.
    pub fn ensure_positive(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|&v| v <= 0.0) {
            None => Ok(()),
            Some(k) => Err(Error::PositivityViolation(format!(
                "{what} has value {:e} at cell {k}",
                self.values[k]
            ))),
        }
    }

    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// A grid function on the staggered faces normal to one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    axis: usize,
    values: Vec<f64>,
}

impl FaceField {
    pub fn new(grid: Grid, axis: usize, values: Vec<f64>) -> Result<Self> {
        grid.check_axis(axis)?;
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "face field has {} values, grid has {} faces per axis",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, axis, values })
    }

    pub fn constant(grid: Grid, axis: usize, value: f64) -> Result<Self> {
        Self::new(grid, axis, vec![value; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cellwise product of two face fields on the same axis.
    pub fn mul(&self, other: &FaceField) -> Result<FaceField> {
        same_grid(&self.grid, &other.grid)?;
        if self.axis != other.axis {
            return Err(Error::InvalidInput(format!(
                "face fields live on different axes ({} and {})",
                self.axis, other.axis
            )));
        }
        Ok(FaceField {
            grid: self.grid,
            axis: self.axis,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "grid functions live on different grids".into(),
        ))
    }
}

/// Discrete L² inner product `h^dim Σ f g`.
pub fn inner_product(f: &Field, g: &Field) -> Result<f64> {
    same_grid(&f.grid, &g.grid)?;
    let s: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
    Ok(f.grid.cell_volume() * s)
}

/// Inner product of face fields summed over axes, `h^dim Σ_axis Σ p q`.
pub fn face_inner_product(p: &[FaceField], q: &[FaceField]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(
            "face field lists have different lengths".into(),
        ));
    }
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        same_grid(&a.grid, &b.grid)?;
        if a.axis != b.axis {
            return Err(Error::InvalidInput("face axes do not match".into()));
        }
        total += a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x * y)
            .sum::<f64>();
    }
    let vol = p.first().map_or(0.0, |f| f.grid.cell_volume());
    Ok(vol * total)
}

/// Arithmetic mean of the two cells adjacent to each face along `axis`.
pub fn average_to_faces(f: &Field, axis: usize) -> Result<FaceField> {
    let g = f.grid;
    g.check_axis(axis)?;
    let values = (0..g.len())
        .map(|k| 0.5 * (f.values[k] + f.values[g.next(k, axis)]))
        .collect();
    Ok(FaceField {
        grid: g,
        axis,
        values,
    })
}

/// Forward difference `(f_{i+1} - f_i) / h` on the faces along `axis`.
pub fn gradient_h(f: &Field, axis: usize) -> Result<FaceField> {
    let g = f.grid;
    g.check_axis(axis)?;
    let inv_h = 1.0 / g.h;
    let values = (0..g.len())
        .map(|k| (f.values[g.next(k, axis)] - f.values[k]) * inv_h)
        .collect();
    Ok(FaceField {
        grid: g,
        axis,
        values,
    })
}

/// Gradient along every axis.
pub fn gradient_all(f: &Field) -> Vec<FaceField> {
    (0..f.grid.dim)
        .map(|axis| gradient_h(f, axis).expect("axis in range"))
        .collect()
}

/// `Σ_axis (q_{i+1/2} - q_{i-1/2}) / h`, one face field per axis.
pub fn divergence_h(flux: &[FaceField]) -> Result<Field> {
    let g = match flux.first() {
        Some(q) => q.grid,
        None => {
            return Err(Error::InvalidInput(
                "divergence needs one face field per axis".into(),
            ))
        }
    };
    if flux.len() != g.dim {
        return Err(Error::InvalidInput(format!(
            "divergence needs {} face fields, got {}",
            g.dim,
            flux.len()
        )));
    }
    for (axis, q) in flux.iter().enumerate() {
        same_grid(&g, &q.grid)?;
        if q.axis != axis {
            return Err(Error::InvalidInput(format!(
                "face field {axis} lives on axis {}",
                q.axis
            )));
        }
    }
    let inv_h = 1.0 / g.h;
    let values = (0..g.len())
        .map(|k| {
            flux.iter()
                .enumerate()
                .map(|(axis, q)| (q.values[k] - q.values[g.prev(k, axis)]) * inv_h)
                .sum()
        })
        .collect();
    Ok(Field::from_vec_unchecked(g, values))
}

/// Centred-difference Laplacian (3-point in 1D, 5-point in 2D), periodic.
pub fn laplacian_h(f: &Field) -> Field {
    let g = f.grid;
    let inv_h2 = 1.0 / (g.h * g.h);
    let values = (0..g.len())
        .map(|k| {
            (0..g.dim)
                .map(|axis| {
                    f.values[g.next(k, axis)] - 2.0 * f.values[k] + f.values[g.prev(k, axis)]
                })
                .sum::<f64>()
                * inv_h2
        })
        .collect();
    Field::from_vec_unchecked(g, values)
}

/// `∇_h · (m ∇_h f)` with the weight `m` given on the faces of every axis.
pub fn weighted_divgrad(m: &[FaceField], f: &Field) -> Result<Field> {
    let g = f.grid;
    if m.len() != g.dim {
        return Err(Error::InvalidInput(format!(
            "expected {} face weights, got {}",
            g.dim,
            m.len()
        )));
    }
    for (axis, w) in m.iter().enumerate() {
        same_grid(&g, &w.grid)?;
        if w.axis != axis {
            return Err(Error::InvalidInput(format!(
                "face weight {axis} lives on axis {}",
                w.axis
            )));
        }
    }
    let mut out = vec![0.0; g.len()];
    let weights: Vec<&[f64]> = m.iter().map(|w| w.values.as_slice()).collect();
    apply_weighted_divgrad(&g, &weights, &f.values, &mut out);
    Ok(Field::from_vec_unchecked(g, out))
}

/// Slice kernel behind [`weighted_divgrad`], reused by the diffusion solvers.
pub(crate) fn apply_weighted_divgrad(g: &Grid, m: &[&[f64]], f: &[f64], out: &mut [f64]) {
    let inv_h2 = 1.0 / (g.h * g.h);
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (axis, w) in m.iter().enumerate() {
            let kp = g.next(k, axis);
            let km = g.prev(k, axis);
            acc += w[k] * (f[kp] - f[k]) - w[km] * (f[k] - f[km]);
        }
        *o = acc * inv_h2;
    }
}

/// Diagonal of the operator in [`apply_weighted_divgrad`] (always ≤ 0 for m ≥ 0).
pub(crate) fn weighted_divgrad_diagonal(g: &Grid, m: &[&[f64]]) -> Vec<f64> {
    let inv_h2 = 1.0 / (g.h * g.h);
    (0..g.len())
        .map(|k| {
            -m.iter()
                .enumerate()
                .map(|(axis, w)| w[k] + w[g.prev(k, axis)])
                .sum::<f64>()
                * inv_h2
        })
        .collect()
}

/// Writes the snapshot CSV: a `# grid ...` header, then `i[,j],x[,y],value` per cell.
pub fn write_field_csv(f: &Field) -> String {
    let g = &f.grid;
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.16e}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = format!(
        "# grid dim={} n0={} lower={} upper={}\n",
        g.dim,
        g.n0,
        join(g.lower()),
        join(g.upper())
    );
    for (k, v) in f.values.iter().enumerate() {
        let idx = g.multi_index(k);
        let x = g.cell_center(k);
        if g.dim == 1 {
            writeln!(out, "{},{:.16e},{:.16e}", idx[0], x[0], v).unwrap();
        } else {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e}",
                idx[0], idx[1], x[0], x[1], v
            )
            .unwrap();
        }
    }
    out
}

/// Parses the output of [`write_field_csv`].
pub fn read_field_csv(text: &str) -> Result<Field> {
    let bad = |msg: String| Error::InvalidInput(format!("field CSV: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
    let header = header
        .strip_prefix("# grid ")
        .ok_or_else(|| bad(format!("bad header `{header}`")))?;
    let (mut dim, mut n0, mut lower, mut upper) = (None, None, None, None);
    let parse_list = |s: &str| -> Result<Vec<f64>> {
        s.split(',')
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
            .collect()
    };
    for item in header.split_whitespace() {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header item `{item}`")))?;
        match key {
            "dim" => dim = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "n0" => n0 = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "lower" => lower = Some(parse_list(value)?),
            "upper" => upper = Some(parse_list(value)?),
            other => return Err(bad(format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| bad(format!("header lacks `{k}`"));
    let grid = Grid::new(
        dim.ok_or_else(|| missing("dim"))?,
        n0.ok_or_else(|| missing("n0"))?,
        &lower.ok_or_else(|| missing("lower"))?,
        &upper.ok_or_else(|| missing("upper"))?,
    )?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 * grid.dim + 1 {
            return Err(bad(format!("row `{line}` has {} columns", cols.len())));
        }
        let idx: Vec<usize> = cols[..grid.dim]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|e| bad(format!("`{t}`: {e}"))))
            .collect::<Result<_>>()?;
        if idx.iter().any(|&i| i >= grid.n0) {
            return Err(bad(format!("index out of range in row `{line}`")));
        }
        let v = cols[cols.len() - 1];
        values[grid.flat_index(&idx)] = v.parse().map_err(|e| bad(format!("`{v}`: {e}")))?;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(bad(format!("expected {} rows, got {seen}", grid.len())));
    }
    Field::new(grid, values)
}
