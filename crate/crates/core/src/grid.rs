//! Spatial and size grids, discrete fields, and the weighted seminorms.
//!
//! Space is a periodic box [0,L)^dim sampled at n cells per axis. Size is a
//! geometric grid on [xi_min, xi_max] whose quadrature weights integrate any
//! function that is piecewise linear in log(xi) exactly; in particular the
//! weights are strictly positive and sum to exactly xi_max - xi_min.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{FragkinError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    pub dim: usize,
    pub extent: f64,
    pub n: usize,
}

impl SpaceGrid {
    pub fn new(dim: usize, extent: f64, n: usize) -> Result<Arc<Self>> {
        if dim != 1 && dim != 2 {
            return Err(FragkinError::Config(format!("space dim must be 1 or 2, got {dim}")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(FragkinError::Config(format!("space extent must be positive, got {extent}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(FragkinError::Config(format!(
                "cells per axis must be a power of two >= 8, got {n}"
            )));
        }
        Ok(Arc::new(SpaceGrid { dim, extent, n }))
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Angular wavenumber of FFT bin j along one axis:
    /// frequencies 0, 1, ..., n/2, -n/2+1, ..., -1 times 2*pi/L.
    pub fn wavenumber(&self, j: usize) -> f64 {
        debug_assert!(j < self.n);
        let m = if j <= self.n / 2 { j as i64 } else { j as i64 - self.n as i64 };
        2.0 * PI * m as f64 / self.extent
    }

    /// Cell index decomposed into per-axis indices (x fastest).
    pub fn axis_indices(&self, cell: usize) -> [usize; 2] {
        match self.dim {
            1 => [cell, 0],
            _ => [cell % self.n, cell / self.n],
        }
    }

    /// Coordinates of the cell's sample point (j*h per axis).
    pub fn position(&self, cell: usize) -> [f64; 2] {
        let idx = self.axis_indices(cell);
        let h = self.spacing();
        [idx[0] as f64 * h, idx[1] as f64 * h]
    }

    /// Squared torus distance between two cell sample points.
    pub fn torus_distance_sq(&self, a: usize, b: usize) -> f64 {
        let pa = self.position(a);
        let pb = self.position(b);
        let mut acc = 0.0;
        for axis in 0..self.dim {
            let mut d = (pa[axis] - pb[axis]).abs();
            if d > 0.5 * self.extent {
                d = self.extent - d;
            }
            acc += d * d;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    ratio: f64,
}

/// Per-segment split of the exact integral of a log-linear interpolant:
/// on [a,b] the integral of f with f(a)=fa, f(b)=fb linear in ln(xi) is
/// fa*(s-a) + fb*(b-s) with s = (b-a)/ln(b/a).
fn log_linear_split(a: f64, b: f64) -> (f64, f64) {
    let s = (b - a) / (b / a).ln();
    (s - a, b - s)
}

impl SizeGrid {
    /// Geometric grid with m nodes spanning [xi_min, xi_max].
    pub fn new(xi_min: f64, xi_max: f64, m: usize) -> Result<Arc<Self>> {
        if !(xi_min.is_finite() && xi_min > 0.0 && xi_max.is_finite() && xi_max > xi_min) {
            return Err(FragkinError::Config(format!(
                "size interval invalid: [{xi_min}, {xi_max}]"
            )));
        }
        if m < 2 {
            return Err(FragkinError::Config(format!("size grid needs at least 2 nodes, got {m}")));
        }
        let la = xi_min.ln();
        let lb = xi_max.ln();
        let step = (lb - la) / (m - 1) as f64;
        let mut nodes = Vec::with_capacity(m);
        for i in 0..m {
            nodes.push((la + i as f64 * step).exp());
        }
        nodes[0] = xi_min;
        nodes[m - 1] = xi_max;
        Ok(Arc::new(Self::from_nodes(nodes)))
    }

    /// Grid built from an explicit common ratio (nodes xi_min * r^i by
    /// repeated multiplication, so exact doublings stay exact for r = 2).
    pub fn from_ratio(xi_min: f64, ratio: f64, m: usize) -> Result<Arc<Self>> {
        if !(xi_min > 0.0 && ratio > 1.0 && ratio.is_finite()) {
            return Err(FragkinError::Config(format!(
                "size grid ratio must exceed 1, got xi_min={xi_min} ratio={ratio}"
            )));
        }
        if m < 2 {
            return Err(FragkinError::Config(format!("size grid needs at least 2 nodes, got {m}")));
        }
        let mut nodes = Vec::with_capacity(m);
        let mut x = xi_min;
        for _ in 0..m {
            nodes.push(x);
            x *= ratio;
        }
        Ok(Arc::new(Self::from_nodes(nodes)))
    }

    fn from_nodes(nodes: Vec<f64>) -> Self {
        let m = nodes.len();
        let mut weights = vec![0.0; m];
        for i in 0..m - 1 {
            let (wa, wb) = log_linear_split(nodes[i], nodes[i + 1]);
            weights[i] += wa;
            weights[i + 1] += wb;
        }
        let ratio = nodes[1] / nodes[0];
        SizeGrid { nodes, weights, ratio }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn xi_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn xi_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// sum_i w_i f_i. Errors on non-finite samples.
    pub fn quadrature_integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(FragkinError::GridMismatch(format!(
                "integrand has {} samples, grid has {} nodes",
                f.len(),
                self.len()
            )));
        }
        let mut acc = 0.0;
        for (v, w) in f.iter().zip(&self.weights) {
            if !v.is_finite() {
                return Err(FragkinError::Numerical("non-finite integrand sample".into()));
            }
            acc += v * w;
        }
        Ok(acc)
    }

    /// Quadrature weights for integrating over [xi_min, node_j] only:
    /// identical to the full-grid weights below node j, while node j keeps
    /// just its left-panel share (its right panel lies outside the range).
    /// For j = 0 the range is a point and every weight is zero.
    pub fn restricted_weights(&self, j: usize) -> Vec<f64> {
        let mut w = vec![0.0; j + 1];
        for i in 0..j {
            let (wa, wb) = log_linear_split(self.nodes[i], self.nodes[i + 1]);
            w[i] += wa;
            w[i + 1] += wb;
        }
        w
    }

    /// Largest index a with node[a] <= s, if s is inside [xi_min, xi_max].
    pub fn bracket(&self, s: f64) -> Option<usize> {
        if s < self.xi_min() || s > self.xi_max() {
            return None;
        }
        match self.nodes.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(i) => Some(i),
            Err(i) => Some(i - 1),
        }
    }
}

/// Size weight (1 + xi^ell for ell > 0; the unweighted norm for ell = 0).
pub fn size_weight(ell: f64, xi: f64) -> f64 {
    if ell == 0.0 {
        1.0
    } else {
        1.0 + xi.powf(ell)
    }
}

/// Number density field u(x, xi) stored space-major (cell index outer,
/// size node inner).
#[derive(Debug, Clone)]
pub struct Field {
    space: Arc<SpaceGrid>,
    sizes: Arc<SizeGrid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(space: &Arc<SpaceGrid>, sizes: &Arc<SizeGrid>) -> Self {
        Field {
            space: Arc::clone(space),
            sizes: Arc::clone(sizes),
            values: vec![0.0; space.cells() * sizes.len()],
        }
    }

    pub fn from_fn(
        space: &Arc<SpaceGrid>,
        sizes: &Arc<SizeGrid>,
        mut f: impl FnMut(&[f64], f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(space, sizes);
        let m = sizes.len();
        for cell in 0..space.cells() {
            let pos = space.position(cell);
            let row = &mut out.values[cell * m..(cell + 1) * m];
            for (i, v) in row.iter_mut().enumerate() {
                *v = f(&pos[..space.dim], sizes.node(i));
            }
        }
        out
    }

    pub fn from_values(
        space: &Arc<SpaceGrid>,
        sizes: &Arc<SizeGrid>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let want = space.cells() * sizes.len();
        if values.len() != want {
            return Err(FragkinError::GridMismatch(format!(
                "field needs {want} values for these grids, got {}",
                values.len()
            )));
        }
        Ok(Field { space: Arc::clone(space), sizes: Arc::clone(sizes), values })
    }

    pub fn space(&self) -> &Arc<SpaceGrid> {
        &self.space
    }

    pub fn sizes(&self) -> &Arc<SizeGrid> {
        &self.sizes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        let m = self.sizes.len();
        &self.values[cell * m..(cell + 1) * m]
    }

    pub fn cell_mut(&mut self, cell: usize) -> &mut [f64] {
        let m = self.sizes.len();
        &mut self.values[cell * m..(cell + 1) * m]
    }

    pub fn at(&self, cell: usize, node: usize) -> f64 {
        self.values[cell * self.sizes.len() + node]
    }

    pub fn set(&mut self, cell: usize, node: usize, v: f64) {
        let m = self.sizes.len();
        self.values[cell * m + node] = v;
    }

    pub fn same_grids(&self, other: &Field) -> bool {
        (Arc::ptr_eq(&self.space, &other.space) || self.space == other.space)
            && (Arc::ptr_eq(&self.sizes, &other.sizes) || self.sizes == other.sizes)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Field) {
        debug_assert!(self.same_grids(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Signed total size-mass: sum_x h^d sum_i w_i xi_i u(x, xi_i).
    pub fn total_mass(&self) -> f64 {
        let m = self.sizes.len();
        let nodes = self.sizes.nodes();
        let w = self.sizes.weights();
        let mut acc = 0.0;
        for cell in 0..self.space.cells() {
            let row = &self.values[cell * m..(cell + 1) * m];
            let mut inner = 0.0;
            for i in 0..m {
                inner += w[i] * nodes[i] * row[i];
            }
            acc += inner;
        }
        acc * self.space.cell_volume()
    }

    /// Signed total number: sum_x h^d sum_i w_i u(x, xi_i).
    pub fn total_number(&self) -> f64 {
        let m = self.sizes.len();
        let w = self.sizes.weights();
        let mut acc = 0.0;
        for cell in 0..self.space.cells() {
            let row = &self.values[cell * m..(cell + 1) * m];
            let mut inner = 0.0;
            for i in 0..m {
                inner += w[i] * row[i];
            }
            acc += inner;
        }
        acc * self.space.cell_volume()
    }
}

/// Discrete weighted seminorm
/// ( sum_x h^d ( sum_i w_i (1+xi_i^ell) beta_floor(xi_i)^s |u(x,xi_i)| )^p )^(1/p).
///
/// `beta_floor` must supply per-node envelope values when s != 0.
pub fn weighted_seminorm(
    u: &Field,
    p: f64,
    ell: f64,
    s: f64,
    beta_floor: Option<&[f64]>,
) -> Result<f64> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(FragkinError::Config(format!("seminorm exponent p must be finite and >= 1, got {p}")));
    }
    let sizes = u.sizes();
    let m = sizes.len();
    if s != 0.0 && beta_floor.is_none() {
        return Err(FragkinError::Config("seminorm with s != 0 needs rate envelope values".into()));
    }
    if let Some(b) = beta_floor {
        if b.len() != m {
            return Err(FragkinError::GridMismatch(format!(
                "rate envelope has {} values, grid has {m} nodes",
                b.len()
            )));
        }
    }
    let mut node_w = Vec::with_capacity(m);
    for i in 0..m {
        let mut wi = sizes.weight(i) * size_weight(ell, sizes.node(i));
        if s != 0.0 {
            wi *= beta_floor.unwrap()[i].powf(s);
        }
        node_w.push(wi);
    }
    let mut acc = 0.0;
    for cell in 0..u.space().cells() {
        let row = u.cell(cell);
        let mut inner = 0.0;
        for i in 0..m {
            inner += node_w[i] * row[i].abs();
        }
        if p == 1.0 {
            acc += inner;
        } else if p == 2.0 {
            acc += inner * inner;
        } else {
            acc += inner.powf(p);
        }
    }
    let vol = u.space().cell_volume();
    let total = acc * vol;
    Ok(if p == 1.0 { total } else { total.powf(1.0 / p) })
}
