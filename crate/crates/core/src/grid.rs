//! Uniform tensor grids on the space-time cylinder and nodal quadrature.
//!
//! Fields store interior spatial nodes only; homogeneous Dirichlet values on
//! the boundary are implicit zeros. Interior nodes are numbered with the
//! first axis running fastest.
//!
//! Quadrature over `Q = Ω × (0,T)` is nodal: every interior node carries the
//! cell volume `h_1 ⋯ h_n`, and every time level `k = 1..N_t` carries `Δt`.
//! Level `k = 0` (the initial time) has zero weight. The weights are uniform,
//! so the discrete `L²(Q)` pairing is a scalar multiple of the Euclidean one
//! and the transpose of any assembled operator is also its adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the closure of Ω. Only the first `dim` entries are meaningful.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    nodes: [usize; 2],
    lengths: [f64; 2],
    spacing: [f64; 2],
}

impl SpatialGrid {
    /// Grid of `(0, length)` with `nodes` nodes including both boundary nodes.
    pub fn interval(nodes: usize, length: f64) -> Result<Self> {
        Self::new(&[nodes], &[length])
    }

    pub fn rectangle(nodes: [usize; 2], lengths: [f64; 2]) -> Result<Self> {
        Self::new(&nodes, &lengths)
    }

    pub fn new(nodes: &[usize], lengths: &[f64]) -> Result<Self> {
        let dim = nodes.len();
        if dim == 0 || dim > 2 || lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected 1 or 2 axes with matching lengths, got {} node counts and {} lengths",
                nodes.len(),
                lengths.len()
            )));
        }
        let mut g = SpatialGrid {
            dim,
            nodes: [1, 1],
            lengths: [1.0, 1.0],
            spacing: [1.0, 1.0],
        };
        for a in 0..dim {
            if nodes[a] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} nodes, need at least 3",
                    nodes[a]
                )));
            }
            if !(lengths[a] > 0.0 && lengths[a].is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has non-positive length {}",
                    lengths[a]
                )));
            }
            g.nodes[a] = nodes[a];
            g.lengths[a] = lengths[a];
            g.spacing[a] = lengths[a] / (nodes[a] - 1) as f64;
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Node counts per axis including boundary nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    /// Interior node counts per axis.
    pub fn interior_dims(&self) -> [usize; 2] {
        let mut d = [1, 1];
        for a in 0..self.dim {
            d[a] = self.nodes[a] - 2;
        }
        d
    }

    pub fn interior_len(&self) -> usize {
        let d = self.interior_dims();
        d[0] * d[1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Flat index of the interior node with per-axis interior indices `ij`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.interior_dims()[0] * j
    }

    /// Per-axis interior indices of a flat index.
    pub fn unflatten(&self, idx: usize) -> (usize, usize) {
        let mx = self.interior_dims()[0];
        (idx % mx, idx / mx)
    }

    pub fn coords(&self, idx: usize) -> Point {
        let (i, j) = self.unflatten(idx);
        let mut p = [0.0; 2];
        p[0] = (i + 1) as f64 * self.spacing[0];
        if self.dim == 2 {
            p[1] = (j + 1) as f64 * self.spacing[1];
        }
        p
    }

    /// Grid with every spacing halved.
    pub fn refined(&self) -> SpatialGrid {
        let nodes: Vec<usize> = self.nodes().iter().map(|&n| 2 * (n - 1) + 1).collect();
        SpatialGrid::new(&nodes, self.lengths()).expect("refining a valid grid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        Ok(TimeGrid {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of level `k`; the last level is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn refined(&self) -> TimeGrid {
        TimeGrid::new(self.horizon, 2 * self.steps).expect("refining a valid grid")
    }
}

/// The pair of grids discretizing `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub space: SpatialGrid,
    pub time: TimeGrid,
}

impl Grids {
    pub fn new(space: SpatialGrid, time: TimeGrid) -> Self {
        Grids { space, time }
    }

    /// Unit interval, unit horizon.
    pub fn unit_interval(nodes: usize, steps: usize) -> Result<Self> {
        Ok(Grids::new(SpatialGrid::interval(nodes, 1.0)?, TimeGrid::new(1.0, steps)?))
    }

    /// Unit square, unit horizon.
    pub fn unit_square(nodes: usize, steps: usize) -> Result<Self> {
        Ok(Grids::new(
            SpatialGrid::rectangle([nodes, nodes], [1.0, 1.0])?,
            TimeGrid::new(1.0, steps)?,
        ))
    }

    pub fn levels(&self) -> usize {
        self.time.steps() + 1
    }

    /// Quadrature weight of a node at time level `k`.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.space.cell_volume() * self.time.dt()
        }
    }

    /// Total measure of the quadrature support.
    pub fn measure(&self) -> f64 {
        self.space.interior_len() as f64 * self.space.cell_volume() * self.time.horizon()
    }

    pub fn refined(&self) -> Grids {
        Grids::new(self.space.refined(), self.time.refined())
    }

    pub fn check(&self, f: &GridFunction) -> Result<()> {
        if f.n_space != self.space.interior_len() || f.n_levels != self.levels() {
            return Err(Error::DimensionMismatch(format!(
                "field is {}x{} but grids are {}x{}",
                f.n_space,
                f.n_levels,
                self.space.interior_len(),
                self.levels()
            )));
        }
        Ok(())
    }

    pub fn check_spatial(&self, f: &SpatialField) -> Result<()> {
        if f.values.len() != self.space.interior_len() {
            return Err(Error::DimensionMismatch(format!(
                "spatial field has {} values but grid has {} interior nodes",
                f.values.len(),
                self.space.interior_len()
            )));
        }
        Ok(())
    }

    /// Discrete `L^p(Q)` norm; `exponent = f64::INFINITY` gives the maximum
    /// modulus over the quadrature support (levels `1..=N_t`).
    pub fn lp_norm(&self, f: &GridFunction, exponent: f64) -> Result<f64> {
        self.check(f)?;
        if exponent.is_nan() || exponent < 1.0 {
            return Err(Error::InvalidOption(format!("norm exponent must be >= 1, got {exponent}")));
        }
        if exponent.is_infinite() {
            return Ok(f.values[f.n_space..].iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        let w = self.weight(1);
        let s: f64 = if exponent == 2.0 {
            f.values[f.n_space..].iter().map(|v| v * v).sum()
        } else if exponent == 1.0 {
            f.values[f.n_space..].iter().map(|v| v.abs()).sum()
        } else {
            f.values[f.n_space..].iter().map(|v| v.abs().powf(exponent)).sum()
        };
        Ok((w * s).powf(1.0 / exponent))
    }

    /// Discrete `L²(Q)` pairing.
    pub fn inner_product(&self, f: &GridFunction, g: &GridFunction) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        let n = f.n_space;
        let s: f64 = f.values[n..].iter().zip(&g.values[n..]).map(|(a, b)| a * b).sum();
        Ok(self.weight(1) * s)
    }

    /// Discrete `L²(Ω)` pairing.
    pub fn spatial_inner_product(&self, f: &SpatialField, g: &SpatialField) -> Result<f64> {
        self.check_spatial(f)?;
        self.check_spatial(g)?;
        let s: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
        Ok(self.space.cell_volume() * s)
    }
}

/// A field over the interior nodes of the space-time grid, time levels
/// `0..=N_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    n_space: usize,
    n_levels: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grids: &Grids) -> Self {
        let n_space = grids.space.interior_len();
        let n_levels = grids.levels();
        GridFunction {
            n_space,
            n_levels,
            values: vec![0.0; n_space * n_levels],
        }
    }

    pub fn constant(grids: &Grids, c: f64) -> Self {
        let mut f = Self::zeros(grids);
        f.values.fill(c);
        f
    }

    /// Samples `f(x, t)` at every interior node and time level.
    pub fn from_fn(grids: &Grids, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let mut out = Self::zeros(grids);
        let dim = grids.space.dim();
        for k in 0..out.n_levels {
            let t = grids.time.time(k);
            for i in 0..out.n_space {
                let p = grids.space.coords(i);
                out.values[k * out.n_space + i] = f(&p[..dim], t);
            }
        }
        out
    }

    pub(crate) fn from_raw(n_space: usize, n_levels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_space * n_levels);
        GridFunction {
            n_space,
            n_levels,
            values,
        }
    }

    pub fn from_values(grids: &Grids, values: Vec<f64>) -> Result<Self> {
        let n_space = grids.space.interior_len();
        let n_levels = grids.levels();
        if values.len() != n_space * n_levels {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                n_space * n_levels,
                values.len()
            )));
        }
        Ok(GridFunction {
            n_space,
            n_levels,
            values,
        })
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_space..(k + 1) * self.n_space]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_space..(k + 1) * self.n_space]
    }

    pub fn get(&self, node: usize, k: usize) -> f64 {
        self.values[k * self.n_space + node]
    }

    pub fn set(&mut self, node: usize, k: usize, v: f64) {
        self.values[k * self.n_space + node] = v;
    }

    pub fn same_shape(&self, other: &GridFunction) -> bool {
        self.n_space == other.n_space && self.n_levels == other.n_levels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            n_space: self.n_space,
            n_levels: self.n_levels,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        assert!(self.same_shape(other), "zip_map on fields of different shape");
        GridFunction {
            n_space: self.n_space,
            n_levels: self.n_levels,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &GridFunction) {
        assert!(self.same_shape(x), "axpy on fields of different shape");
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.zip_map(other, |a, b| a + b)
    }

    /// Maximum modulus over every stored level, including `t = 0`.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn terminal(&self) -> SpatialField {
        SpatialField {
            values: self.level(self.n_levels - 1).to_vec(),
        }
    }
}

/// Values at the interior spatial nodes at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    pub values: Vec<f64>,
}

impl SpatialField {
    pub fn zeros(grid: &SpatialGrid) -> Self {
        SpatialField {
            values: vec![0.0; grid.interior_len()],
        }
    }

    pub fn from_fn(grid: &SpatialGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        SpatialField {
            values: (0..grid.interior_len())
                .map(|i| {
                    let p = grid.coords(i);
                    f(&p[..dim])
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
