//! Per-size spectral heat propagation on the periodic box, and the probes
//! that verify its provable behaviour: the Gaussian kernel envelope, the
//! L^p -> L^q decay exponents, and the size-monotonicity of the
//! loss-diffusion semigroup under power rates.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::Serialize;

use crate::error::{FragkinError, Result};
use crate::grid::{Field, SizeGrid, SpaceGrid};
use crate::kernels::RateModel;

/// FFT plans for one spatial grid; slices are length n^dim with the first
/// axis fastest.
pub(crate) struct Spectral {
    n: usize,
    dim: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub(crate) fn new(space: &SpaceGrid) -> Self {
        let mut planner = FftPlanner::new();
        Spectral {
            n: space.n,
            dim: space.dim,
            fwd: planner.plan_fft_forward(space.n),
            inv: planner.plan_fft_inverse(space.n),
        }
    }

    /// Multiply the spectrum of `slice` by factor[jx] (* factor[jy] in 2-d)
    /// and transform back; the factors are real so the result is real up to
    /// round-off.
    pub(crate) fn apply_axis_factors(&self, slice: &[f64], factor: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = slice.iter().map(|&v| Complex::new(v, 0.0)).collect();
        match self.dim {
            1 => {
                self.fwd.process(&mut buf);
                for (z, f) in buf.iter_mut().zip(factor) {
                    *z *= *f;
                }
                self.inv.process(&mut buf);
            }
            _ => {
                for row in buf.chunks_mut(n) {
                    self.fwd.process(row);
                }
                let mut col = vec![Complex::new(0.0, 0.0); n];
                for jx in 0..n {
                    for jy in 0..n {
                        col[jy] = buf[jy * n + jx];
                    }
                    self.fwd.process(&mut col);
                    for jy in 0..n {
                        col[jy] *= factor[jx] * factor[jy];
                    }
                    self.inv.process(&mut col);
                    for jy in 0..n {
                        buf[jy * n + jx] = col[jy];
                    }
                }
                for row in buf.chunks_mut(n) {
                    self.inv.process(row);
                }
            }
        }
        let norm = 1.0 / (n as f64).powi(self.dim as i32);
        buf.iter().map(|z| z.re * norm).collect()
    }

    /// Heat flow for a single scalar slice: multiplier exp(-alpha_t * k^2).
    pub(crate) fn heat(&self, space: &SpaceGrid, slice: &[f64], alpha_t: f64) -> Vec<f64> {
        let factor: Vec<f64> =
            (0..self.n).map(|j| (-alpha_t * space.wavenumber(j).powi(2)).exp()).collect();
        self.apply_axis_factors(slice, &factor)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ClampStats {
    /// Count of entries in [-tol, 0) reset to zero (transform round-off).
    pub clamped: usize,
    /// Most negative entry seen before clamping.
    pub min_before: f64,
}

/// Exact per-size heat propagation by Fourier multipliers. In splitting
/// mode the k=0 multiplier is exactly 1 so each size slice conserves its
/// spatial integral; in loss mode the envelope decay exp(-beta_floor*dt)
/// is folded in (the loss-diffusion semigroup the probes analyze).
pub struct DiffusionPropagator {
    space: Arc<SpaceGrid>,
    sizes: Arc<SizeGrid>,
    dt: f64,
    axis_factors: Vec<Vec<f64>>,
    loss_factors: Vec<f64>,
    /// Slices whose multipliers are all exactly 1 skip the transform, so a
    /// zero-diffusivity size is propagated bit-identically.
    identity: Vec<bool>,
    spectral: Spectral,
}

impl DiffusionPropagator {
    pub fn new(
        space: &Arc<SpaceGrid>,
        sizes: &Arc<SizeGrid>,
        rates: &RateModel,
        dt: f64,
        loss_mode: bool,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(FragkinError::Config(format!("propagator step must be >= 0, got {dt}")));
        }
        let mut axis_factors = Vec::with_capacity(sizes.len());
        let mut loss_factors = Vec::with_capacity(sizes.len());
        for &xi in sizes.nodes() {
            let a = (rates.alpha)(xi);
            if !(a.is_finite() && a >= 0.0) {
                return Err(FragkinError::Config(format!(
                    "diffusivity must be finite and >= 0, got {a} at xi={xi}"
                )));
            }
            let factors: Vec<f64> =
                (0..space.n).map(|j| (-a * space.wavenumber(j).powi(2) * dt).exp()).collect();
            debug_assert_eq!(factors[0], 1.0);
            axis_factors.push(factors);
            loss_factors.push(if loss_mode { (-(rates.beta_floor)(xi) * dt).exp() } else { 1.0 });
        }
        let identity = axis_factors
            .iter()
            .zip(&loss_factors)
            .map(|(f, &lf)| lf == 1.0 && f.iter().all(|&v| v == 1.0))
            .collect();
        Ok(DiffusionPropagator {
            space: Arc::clone(space),
            sizes: Arc::clone(sizes),
            dt,
            axis_factors,
            loss_factors,
            identity,
            spectral: Spectral::new(space),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn check_grids(&self, u: &Field) -> Result<()> {
        if !(Arc::ptr_eq(u.space(), &self.space) || **u.space() == *self.space)
            || !(Arc::ptr_eq(u.sizes(), &self.sizes) || **u.sizes() == *self.sizes)
        {
            return Err(FragkinError::GridMismatch(
                "propagator was built for different grids".into(),
            ));
        }
        Ok(())
    }

    /// Pure spectral application, no sign post-processing (correct for
    /// signed inputs such as reaction rates inside the mild-solution
    /// iteration).
    pub fn apply_raw(&self, u: &Field) -> Result<Field> {
        self.check_grids(u)?;
        let m = self.sizes.len();
        let cells = self.space.cells();
        let values = u.values();
        if self.identity.iter().all(|&id| id) {
            return Ok(u.clone());
        }
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut slice = Vec::with_capacity(cells);
                for c in 0..cells {
                    slice.push(values[c * m + i]);
                }
                if self.identity[i] {
                    return slice;
                }
                let mut out = self.spectral.apply_axis_factors(&slice, &self.axis_factors[i]);
                let lf = self.loss_factors[i];
                if lf != 1.0 {
                    for v in &mut out {
                        *v *= lf;
                    }
                }
                out
            })
            .collect();
        let mut result = Field::zeros(&self.space, &self.sizes);
        let out = result.values_mut();
        for (i, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                out[c * m + i] = v;
            }
        }
        Ok(result)
    }

    /// Application for physical (nonnegative) inputs: entries driven just
    /// below zero by transform round-off, within 1e-12 of the field scale,
    /// are clamped back to zero and counted.
    pub fn apply(&self, u: &Field) -> Result<(Field, ClampStats)> {
        let mut out = self.apply_raw(u)?;
        let tol = 1e-12 * u.max_abs();
        let mut stats = ClampStats { clamped: 0, min_before: 0.0 };
        for v in out.values_mut() {
            if *v < 0.0 {
                stats.min_before = stats.min_before.min(*v);
                if *v >= -tol {
                    *v = 0.0;
                    stats.clamped += 1;
                }
            }
        }
        Ok((out, stats))
    }
}

/// Spatial L^p norm of a slice over the cells; p may be infinite.
pub fn lp_norm(space: &SpaceGrid, slice: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return slice.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    }
    let vol = space.cell_volume();
    if p == 1.0 {
        slice.iter().map(|v| v.abs()).sum::<f64>() * vol
    } else if p == 2.0 {
        (slice.iter().map(|v| v * v).sum::<f64>() * vol).sqrt()
    } else {
        (slice.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p)
    }
}

fn impulse(space: &SpaceGrid) -> Vec<f64> {
    let mut slice = vec![0.0; space.cells()];
    slice[0] = 1.0 / space.cell_volume();
    slice
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenBoundReport {
    pub alpha: f64,
    pub t: f64,
    pub min_value: f64,
    pub mass: f64,
    pub peak: f64,
    pub peak_expected: f64,
    /// Smallest C with kernel <= C (alpha t)^(-d/2) exp(-|x|^2/(16 alpha t)).
    pub envelope_constant: f64,
}

/// Builds the discrete heat kernel from a unit impulse and verifies it is
/// nonnegative, unit-mass, and Gaussian-dominated with a t-stable constant.
pub fn green_bound_check(alpha: f64, t: f64, space: &Arc<SpaceGrid>) -> Result<GreenBoundReport> {
    if !(alpha > 0.0 && t > 0.0) {
        return Err(FragkinError::Config(format!("need alpha, t > 0, got {alpha}, {t}")));
    }
    let width = (4.0 * alpha * t).sqrt();
    if width > space.extent / 8.0 {
        return Err(FragkinError::Numerical(format!(
            "torus too small for the bound check: sqrt(4 alpha t) = {width:.3e} exceeds L/8 = {:.3e}",
            space.extent / 8.0
        )));
    }
    let spectral = Spectral::new(space);
    let g = spectral.heat(space, &impulse(space), alpha * t);
    let d = space.dim as f64;
    let mass = g.iter().sum::<f64>() * space.cell_volume();
    let peak = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_value = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut envelope_constant = 0.0_f64;
    let floor = peak * 1e-13;
    for (cell, &v) in g.iter().enumerate() {
        if v > floor {
            let r2 = space.torus_distance_sq(cell, 0);
            let c = v * (alpha * t).powf(d / 2.0) * (r2 / (16.0 * alpha * t)).exp();
            envelope_constant = envelope_constant.max(c);
        }
    }
    Ok(GreenBoundReport {
        alpha,
        t,
        min_value,
        mass,
        peak,
        peak_expected: (4.0 * PI * alpha * t).powf(-d / 2.0),
        envelope_constant,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeReport {
    pub slope: f64,
    pub target: f64,
    /// Largest absolute log-space deviation of a point from the fit line.
    pub max_residual: f64,
    /// (t, ratio) pairs entering the fit.
    pub points: Vec<(f64, f64)>,
}

fn fit_loglog(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 4 {
        return Err(FragkinError::Numerical(format!(
            "degenerate fit: need at least 4 points, got {}",
            points.len()
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, r)| (t.ln(), r.ln())).collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom <= 0.0 {
        return Err(FragkinError::Numerical("degenerate fit: collinear abscissae".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let max_residual = logs
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0_f64, f64::max);
    Ok((slope, max_residual))
}

fn validate_probe_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 4 {
        return Err(FragkinError::Numerical(format!(
            "degenerate fit: need at least 4 probe times, got {}",
            t_grid.len()
        )));
    }
    if t_grid.windows(2).any(|w| !(w[0] > 0.0 && w[1] > w[0])) {
        return Err(FragkinError::Config("probe times must be positive and ascending".into()));
    }
    if t_grid[t_grid.len() - 1] / t_grid[0] < 10.0 * (1.0 - 1e-12) {
        return Err(FragkinError::Config("probe times must span at least a decade".into()));
    }
    Ok(())
}

/// Decay exponent of the heat semigroup from L^p into L^q, measured on the
/// orbit of an impulse: r(t) = |S(2t) u0|_q / |S(t) u0|_p. The profile
/// S(t) u0 is a near-extremal input for the operator norm at scale t, so
/// the fitted slope reproduces -(d/2)(1/p - 1/q).
pub fn hypercontractivity_probe(
    space: &Arc<SpaceGrid>,
    alpha: f64,
    p: f64,
    q: f64,
    t_grid: &[f64],
) -> Result<SlopeReport> {
    if !(p >= 1.0 && q >= p) {
        return Err(FragkinError::Config(format!("need 1 <= p <= q, got p={p}, q={q}")));
    }
    validate_probe_grid(t_grid)?;
    let t_max = t_grid[t_grid.len() - 1];
    let width = (4.0 * alpha * 2.0 * t_max).sqrt();
    if width > space.extent / 8.0 {
        return Err(FragkinError::Numerical(format!(
            "torus too small for the probe: sqrt(8 alpha t_max) = {width:.3e} exceeds L/8"
        )));
    }
    let spectral = Spectral::new(space);
    let u0 = impulse(space);
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let num = lp_norm(space, &spectral.heat(space, &u0, alpha * 2.0 * t), q);
        let den = lp_norm(space, &spectral.heat(space, &u0, alpha * t), p);
        points.push((t, num / den));
    }
    let (slope, max_residual) = fit_loglog(&points)?;
    let d = space.dim as f64;
    let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q };
    Ok(SlopeReport { slope, target: -(d / 2.0) * (1.0 / p - inv_q), max_residual, points })
}

/// Vector variant for the loss-diffusion semigroup under power rates: the
/// worst size slice of the orbit ratio tracks the balance exponent, so the
/// slope reproduces -(d/(2 delta))(1/p - 1/q) with delta at its largest
/// admissible value.
pub fn vector_contractivity_probe(
    space: &Arc<SpaceGrid>,
    sizes: &Arc<SizeGrid>,
    rates: &RateModel,
    p: f64,
    q: f64,
    delta: f64,
    t_grid: &[f64],
) -> Result<SlopeReport> {
    if !(p >= 1.0 && q >= p) {
        return Err(FragkinError::Config(format!("need 1 <= p <= q, got p={p}, q={q}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(FragkinError::Config(format!("need delta in (0,1), got {delta}")));
    }
    validate_probe_grid(t_grid)?;
    let spectral = Spectral::new(space);
    let u0 = impulse(space);
    let alphas = rates.alpha_values(sizes);
    let betas = rates.beta_floor_values(sizes);
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut worst = 0.0_f64;
        for i in 0..sizes.len() {
            let num = (-2.0 * betas[i] * t).exp()
                * lp_norm(space, &spectral.heat(space, &u0, alphas[i] * 2.0 * t), q);
            let den = (-betas[i] * t).exp()
                * lp_norm(space, &spectral.heat(space, &u0, alphas[i] * t), p);
            worst = worst.max(num / den);
        }
        points.push((t, worst));
    }
    let (slope, max_residual) = fit_loglog(&points)?;
    let d = space.dim as f64;
    let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q };
    Ok(SlopeReport { slope, target: -(d / (2.0 * delta)) * (1.0 / p - inv_q), max_residual, points })
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub xi_lo: f64,
    pub xi_hi: f64,
    /// max over cells of (large-size side - small-size side); a pass needs
    /// this below 1e-10.
    pub max_excess: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub t: f64,
    pub pairs: Vec<PairCheck>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.pairs.iter().all(|p| p.pass)
    }
}

pub const MONOTONICITY_TOL: f64 = 1e-10;

/// Pointwise ordering of the scaled loss-diffusion semigroup across sizes:
/// for xi0 <= xi1 and any profile >= 0,
/// alpha(xi1)^(d/2) e^(-beta(xi1) t) heat[alpha(xi1) t] phi
///   <= alpha(xi0)^(d/2) e^(-beta(xi0) t) heat[alpha(xi0) t] phi
/// must hold at every cell, given non-increasing alpha and non-decreasing
/// beta_floor (power-rate monotonicity).
pub fn size_monotonicity_check(
    profile: &[f64],
    rates: &RateModel,
    t: f64,
    pairs: &[(f64, f64)],
    space: &Arc<SpaceGrid>,
) -> Result<MonotonicityReport> {
    if rates.power.is_none() {
        return Err(FragkinError::Config(
            "size-monotonicity check requires power-law rates".into(),
        ));
    }
    if profile.len() != space.cells() {
        return Err(FragkinError::GridMismatch(format!(
            "profile has {} samples, grid has {} cells",
            profile.len(),
            space.cells()
        )));
    }
    if profile.iter().any(|v| *v < 0.0) {
        return Err(FragkinError::Config("profile must be nonnegative".into()));
    }
    if !(t > 0.0) {
        return Err(FragkinError::Config(format!("need t > 0, got {t}")));
    }
    let spectral = Spectral::new(space);
    let d = space.dim as f64;
    let side = |xi: f64| -> Vec<f64> {
        let a = (rates.alpha)(xi);
        let scale = a.powf(d / 2.0) * (-(rates.beta_floor)(xi) * t).exp();
        let mut v = spectral.heat(space, profile, a * t);
        for x in &mut v {
            *x *= scale;
        }
        v
    };
    let mut checks = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let (xi_lo, xi_hi) = if a <= b { (a, b) } else { (b, a) };
        let lo = side(xi_lo);
        let hi = side(xi_hi);
        let max_excess = hi
            .iter()
            .zip(&lo)
            .map(|(h, l)| h - l)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(PairCheck { xi_lo, xi_hi, max_excess, pass: max_excess <= MONOTONICITY_TOL });
    }
    Ok(MonotonicityReport { t, pairs: checks })
}
