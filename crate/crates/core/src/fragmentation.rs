//! Discrete fragmentation operator: per-parent daughter quadrature with an
//! exact grid mass ledger. Each parent column is rescaled so the resolved
//! daughter mass matches a high-order quadrature of the kernel, and the
//! remainder (daughters below the grid floor plus any kernel mass defect)
//! is booked to a per-parent underflow coefficient. The discrete identity
//!   sum_i xi_i w_i G[i][j] + mu_j = xi_j
//! therefore holds to the bit, which is what makes the combined
//! resolved-mass + ledger balance exact over arbitrarily many steps.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{FragkinError, Result};
use crate::grid::{Field, SizeGrid};
use crate::kernels::{FragKernel, RateModel};
use crate::logquad;
use crate::moments::{frag_conservativity_residual, CONSERVATIVITY_TOL, MOMENT_PANELS};

/// Sanity band for the per-column rescaling factor; anything outside means
/// the grid badly under-resolves the daughter distribution.
const RESCALE_BAND: (f64, f64) = (0.2, 5.0);
/// Columns whose resolved daughter mass is below this fraction of the
/// parent mass are treated as fully underflowing.
const RESOLVED_FLOOR: f64 = 1e-12;

#[derive(Debug)]
pub struct FragmentationOp {
    sizes: Arc<SizeGrid>,
    /// Gain coefficients, parent-major: column j holds G[0..=j][j].
    columns: Vec<f64>,
    offsets: Vec<usize>,
    /// mu_j: mass leaving the grid per unit parent fragmentation flux.
    underflow: Vec<f64>,
    /// Per-column rescaling factors (diagnostic).
    rescale: Vec<f64>,
    /// Largest relative kernel mass defect seen across parents.
    max_defect: f64,
}

impl FragmentationOp {
    pub fn new(kernel: &FragKernel, sizes: &Arc<SizeGrid>) -> Result<Self> {
        let m = sizes.len();
        let nodes = sizes.nodes();
        let mut columns = Vec::with_capacity(m * (m + 1) / 2);
        let mut offsets = Vec::with_capacity(m);
        let mut underflow = Vec::with_capacity(m);
        let mut rescale = Vec::with_capacity(m);
        let mut max_defect = 0.0_f64;
        for j in 0..m {
            let eta = nodes[j];
            let defect = frag_conservativity_residual(kernel, eta, MOMENT_PANELS)?;
            if defect > CONSERVATIVITY_TOL {
                return Err(FragkinError::Kernel(format!(
                    "fragmentation kernel loses mass: relative defect {defect:.3e} at parent \
                     xi={eta:.6e} exceeds {CONSERVATIVITY_TOL:.0e}"
                )));
            }
            max_defect = max_defect.max(defect);
            let col = kernel.column_fn(eta);
            let resolved = if j == 0 {
                0.0
            } else {
                logquad::integrate_log(sizes.xi_min(), eta, MOMENT_PANELS, |xi| xi * col(xi))
            };
            offsets.push(columns.len());
            let start = columns.len();
            columns.resize(start + j + 1, 0.0);
            if resolved <= RESOLVED_FLOOR * eta {
                underflow.push(eta);
                rescale.push(0.0);
                continue;
            }
            let omega = sizes.restricted_weights(j);
            let gamma: Vec<f64> = nodes[..=j].iter().map(|&xi| col(xi)).collect();
            let raw: f64 = (0..=j).map(|i| nodes[i] * omega[i] * gamma[i]).sum();
            if raw <= 0.0 {
                return Err(FragkinError::Kernel(format!(
                    "fragmentation kernel cannot be resolved on this size grid: parent \
                     xi={eta:.6e} has daughter mass {resolved:.3e} between nodes but the kernel \
                     vanishes at every node"
                )));
            }
            let c = resolved / raw;
            if !(RESCALE_BAND.0..=RESCALE_BAND.1).contains(&c) {
                return Err(FragkinError::Numerical(format!(
                    "daughter quadrature rescaling {c:.3} out of range at parent xi={eta:.6e}; \
                     refine the size grid"
                )));
            }
            for i in 0..=j {
                columns[start + i] = c * gamma[i] * omega[i] / sizes.weight(i);
            }
            // Book the remainder off the actually stored coefficients so the
            // column identity is exact in floating point.
            let stored: f64 =
                (0..=j).map(|i| nodes[i] * sizes.weight(i) * columns[start + i]).sum();
            underflow.push(eta - stored);
            rescale.push(c);
        }
        Ok(FragmentationOp {
            sizes: Arc::clone(sizes),
            columns,
            offsets,
            underflow,
            rescale,
            max_defect,
        })
    }

    /// Complete-shattering model: every fragmentation event drops the whole
    /// parent below the grid floor, so there is no gain term and the full
    /// parent mass is booked to the underflow ledger.
    pub fn loss_only(sizes: &Arc<SizeGrid>) -> Self {
        let m = sizes.len();
        let mut columns = Vec::with_capacity(m * (m + 1) / 2);
        let mut offsets = Vec::with_capacity(m);
        for j in 0..m {
            offsets.push(columns.len());
            columns.resize(columns.len() + j + 1, 0.0);
        }
        FragmentationOp {
            sizes: Arc::clone(sizes),
            columns,
            offsets,
            underflow: sizes.nodes().to_vec(),
            rescale: vec![0.0; m],
            max_defect: 0.0,
        }
    }

    pub fn sizes(&self) -> &Arc<SizeGrid> {
        &self.sizes
    }

    /// G[i][j] for daughters i <= parents j.
    pub fn gain_coefficient(&self, i: usize, j: usize) -> f64 {
        if i > j {
            0.0
        } else {
            self.columns[self.offsets[j] + i]
        }
    }

    pub fn underflow_coefficients(&self) -> &[f64] {
        &self.underflow
    }

    pub fn rescale_factors(&self) -> &[f64] {
        &self.rescale
    }

    pub fn max_defect(&self) -> f64 {
        self.max_defect
    }

    /// Single-cell evaluation: `out` receives gain - loss and the return
    /// value is the underflow mass rate. `scaled_flux` is scratch for the
    /// per-parent fluxes beta_j u_j w_j.
    fn apply_cell(
        &self,
        u: &[f64],
        beta_here: &[f64],
        scaled_flux: &mut [f64],
        out: &mut [f64],
    ) -> f64 {
        let m = u.len();
        let mut under = 0.0;
        for j in 0..m {
            let s = beta_here[j] * u[j] * self.sizes.weight(j);
            scaled_flux[j] = s;
            under += s * self.underflow[j];
        }
        for i in 0..m {
            out[i] = -beta_here[i] * u[i];
        }
        for j in 0..m {
            let s = scaled_flux[j];
            if s == 0.0 {
                continue;
            }
            let col = &self.columns[self.offsets[j]..self.offsets[j] + j + 1];
            for (o, g) in out[..=j].iter_mut().zip(col) {
                *o += g * s;
            }
        }
        under
    }

    /// Full-field evaluation. Returns the rate field and the underflow mass
    /// rate per cell (to be integrated into the mass ledger).
    pub fn apply(&self, u: &Field, rates: &RateModel) -> Result<(Field, Vec<f64>)> {
        if !(Arc::ptr_eq(u.sizes(), &self.sizes) || **u.sizes() == *self.sizes) {
            return Err(FragkinError::GridMismatch(
                "fragmentation operator was built for a different size grid".into(),
            ));
        }
        let space = u.space();
        let m = self.sizes.len();
        let beta = rates.beta_floor_values(&self.sizes);
        let nodes = self.sizes.nodes();
        let mut rate = Field::zeros(space, &self.sizes);
        let under: Vec<f64> = rate
            .values_mut()
            .par_chunks_mut(m)
            .zip(u.values().par_chunks(m))
            .enumerate()
            .map(|(cell, (out, uc))| {
                let mut beta_here = beta.clone();
                if rates.modulation.is_some() {
                    let pos = space.position(cell);
                    let pos = &pos[..space.dim];
                    for (b, &xi) in beta_here.iter_mut().zip(nodes) {
                        *b *= rates.modulation_at(pos, xi);
                    }
                }
                let mut flux = vec![0.0; m];
                self.apply_cell(uc, &beta_here, &mut flux, out)
            })
            .collect();
        Ok((rate, under))
    }
}
