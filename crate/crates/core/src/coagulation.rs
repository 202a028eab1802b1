//! Discrete coagulation operator. Merging is organized by unordered node
//! pairs: an event at pair (i, j) consumes one particle from each side and
//! deposits one particle of size xi_i + xi_j, split between the two
//! bracketing grid nodes so that both number and mass of the deposit are
//! exact (fixed-pivot rule). Pairs whose sum exceeds the grid top are not
//! deposited at all; their mass and count go to a per-cell overflow ledger
//! so the global balance stays exact.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FragkinError, Result};
use crate::grid::{Field, SizeGrid};
use crate::kernels::{CoagKernel, RateModel};

#[derive(Debug, Clone, Copy)]
struct Pair {
    i: u32,
    j: u32,
    /// Lower deposit node (unused when overflowing).
    a: u32,
    /// Upper deposit node; equals `a` when the sum hits a node exactly.
    b: u32,
    /// Loss coefficients kappa w_i w_j (diag: halved) / w_target.
    c_loss_i: f64,
    c_loss_j: f64,
    /// Gain coefficients lambda kappa w_i w_j / w_a and the complement.
    c_gain_a: f64,
    c_gain_b: f64,
    /// Event-rate coefficient kappa w_i w_j (diag: halved); ledger entries
    /// accrue mass (xi_i + xi_j) and count 1 per event.
    c_event: f64,
    overflow: bool,
    sum: f64,
}

/// Per-cell rates of mass and particle count leaving the resolved range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Overflow {
    pub mass: f64,
    pub number: f64,
}

#[derive(Debug)]
pub struct CoagulationOp {
    sizes: Arc<SizeGrid>,
    pairs: Vec<Pair>,
    kappa_max: f64,
}

impl CoagulationOp {
    pub fn new(kernel: &CoagKernel, rates: &RateModel, sizes: &Arc<SizeGrid>) -> Result<Self> {
        let m = sizes.len();
        let nodes = sizes.nodes();
        let mut pairs = Vec::with_capacity(m * (m + 1) / 2);
        let mut kappa_max = 0.0f64;
        for i in 0..m {
            for j in i..m {
                let kappa = kernel.eval(rates, nodes[i], nodes[j]);
                if !(kappa.is_finite() && kappa >= 0.0) {
                    return Err(FragkinError::Kernel(format!(
                        "coagulation kernel must be finite and nonnegative, got {kappa} at \
                         xi={:.6e}, eta={:.6e}",
                        nodes[i], nodes[j]
                    )));
                }
                kappa_max = kappa_max.max(kappa);
                if kappa == 0.0 {
                    continue;
                }
                let diag = if i == j { 0.5 } else { 1.0 };
                let kw = kappa * sizes.weight(i) * sizes.weight(j) * diag;
                let sum = nodes[i] + nodes[j];
                let mut pair = Pair {
                    i: i as u32,
                    j: j as u32,
                    a: 0,
                    b: 0,
                    c_loss_i: kw / sizes.weight(i),
                    c_loss_j: kw / sizes.weight(j),
                    c_gain_a: 0.0,
                    c_gain_b: 0.0,
                    c_event: kw,
                    overflow: true,
                    sum,
                };
                if sum <= sizes.xi_max() {
                    // Split the deposit over the bracketing nodes so number
                    // (lam + (1-lam)) and mass (lam xi_a + (1-lam) xi_b)
                    // both match the event exactly.
                    let a = sizes.bracket(sum).expect("sum inside grid range");
                    let (a, lam) = if a + 1 == m { (a - 1, 0.0) } else {
                        (a, (nodes[a + 1] - sum) / (nodes[a + 1] - nodes[a]))
                    };
                    pair.a = a as u32;
                    pair.b = (a + 1) as u32;
                    pair.c_gain_a = lam * kw / sizes.weight(a);
                    pair.c_gain_b = (1.0 - lam) * kw / sizes.weight(a + 1);
                    pair.overflow = false;
                }
                pairs.push(pair);
            }
        }
        Ok(CoagulationOp { sizes: Arc::clone(sizes), pairs, kappa_max })
    }

    pub fn sizes(&self) -> &Arc<SizeGrid> {
        &self.sizes
    }

    /// Largest kernel value over the grid; kappa_max * number density bounds
    /// every per-particle loss rate, which sets the explicit step limit.
    pub fn kappa_max(&self) -> f64 {
        self.kappa_max
    }

    /// Per-particle loss rate d_i(x) = sum_j kappa_ij u_j(x) w_j. Used by the
    /// positivity-preserving damped update.
    pub fn specific_loss(&self, u: &Field) -> Result<Field> {
        if !(Arc::ptr_eq(u.sizes(), &self.sizes) || **u.sizes() == *self.sizes) {
            return Err(FragkinError::GridMismatch(
                "coagulation operator was built for a different size grid".into(),
            ));
        }
        let m = self.sizes.len();
        let mut d = Field::zeros(u.space(), &self.sizes);
        d.values_mut()
            .par_chunks_mut(m)
            .zip(u.values().par_chunks(m))
            .for_each(|(out, uc)| {
                for p in &self.pairs {
                    let (i, j) = (p.i as usize, p.j as usize);
                    // c_loss_i = kappa w_j (with the 1/2 diagonal factor);
                    // the diagonal pair contributes twice, restoring kappa w_i.
                    out[i] += p.c_loss_i * uc[j];
                    out[j] += p.c_loss_j * uc[i];
                }
            });
        Ok(d)
    }

    fn apply_cell(&self, u: &[f64], v: &[f64], out: &mut [f64]) -> Overflow {
        let mut ledger = Overflow::default();
        for p in &self.pairs {
            let (i, j) = (p.i as usize, p.j as usize);
            let sym = 0.5 * (u[i] * v[j] + u[j] * v[i]);
            if sym == 0.0 {
                continue;
            }
            out[i] -= sym * p.c_loss_i;
            out[j] -= sym * p.c_loss_j;
            if p.overflow {
                let e = sym * p.c_event;
                ledger.mass += e * p.sum;
                ledger.number += e;
            } else {
                out[p.a as usize] += sym * p.c_gain_a;
                out[p.b as usize] += sym * p.c_gain_b;
            }
        }
        ledger
    }

    /// Symmetric bilinear form 0.5 (u_i v_j + u_j v_i) per pair; swapping
    /// the arguments gives the bitwise identical result.
    pub fn apply_bilinear(&self, u: &Field, v: &Field) -> Result<(Field, Vec<Overflow>)> {
        if !(Arc::ptr_eq(u.sizes(), &self.sizes) || **u.sizes() == *self.sizes) {
            return Err(FragkinError::GridMismatch(
                "coagulation operator was built for a different size grid".into(),
            ));
        }
        if !u.same_grids(v) {
            return Err(FragkinError::GridMismatch(
                "coagulation arguments live on different grids".into(),
            ));
        }
        let m = self.sizes.len();
        let mut rate = Field::zeros(u.space(), &self.sizes);
        let ledgers: Vec<Overflow> = rate
            .values_mut()
            .par_chunks_mut(m)
            .zip(u.values().par_chunks(m).zip(v.values().par_chunks(m)))
            .map(|(out, (uc, vc))| self.apply_cell(uc, vc, out))
            .collect();
        Ok((rate, ledgers))
    }

    /// Quadratic form: rate of the full nonlinear term at state u.
    pub fn apply(&self, u: &Field) -> Result<(Field, Vec<Overflow>)> {
        self.apply_bilinear(u, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceGrid;

    fn grids(m: usize) -> (Arc<SpaceGrid>, Arc<SizeGrid>) {
        (
            SpaceGrid::new(1, 2.0 * std::f64::consts::PI, 8).unwrap(),
            SizeGrid::new(1.0, 1024.0, m).unwrap(),
        )
    }

    fn mass_of(sizes: &SizeGrid, slice: &[f64]) -> f64 {
        (0..sizes.len()).map(|i| sizes.node(i) * sizes.weight(i) * slice[i]).sum()
    }

    fn number_of(sizes: &SizeGrid, slice: &[f64]) -> f64 {
        (0..sizes.len()).map(|i| sizes.weight(i) * slice[i]).sum()
    }

    #[test]
    fn mass_rate_plus_overflow_vanishes() {
        let (space, sizes) = grids(24);
        let rates = RateModel::power(0.2, 0.5, 1, 1.0, 1.0);
        let op =
            CoagulationOp::new(&CoagKernel::BetaDominated { c: 0.3, rho: 0.5 }, &rates, &sizes)
                .unwrap();
        let u = Field::from_fn(&space, &sizes, |x, xi| (2.0 + x[0].sin()) / (1.0 + xi * xi));
        let (rate, ledgers) = op.apply(&u).unwrap();
        for c in 0..space.cells() {
            let dm = mass_of(&sizes, rate.cell(c));
            let scale = mass_of(&sizes, &u.cell(c).iter().map(|v| v.abs()).collect::<Vec<_>>());
            assert!(
                (dm + ledgers[c].mass).abs() <= 1e-11 * scale.max(1.0),
                "cell {c}: {dm} vs {}",
                ledgers[c].mass
            );
        }
    }

    #[test]
    fn constant_kernel_number_rate_is_half_kappa_n_squared() {
        let (space, sizes) = grids(24);
        let rates = RateModel::constant(1.0, 1.0);
        let kappa = 0.7;
        let op = CoagulationOp::new(&CoagKernel::Constant { kappa0: kappa }, &rates, &sizes)
            .unwrap();
        // Support on the bottom half: every pair sum stays on the grid.
        let u = Field::from_fn(&space, &sizes, |_, xi| if xi <= 16.0 { 1.0 / xi } else { 0.0 });
        let (rate, ledgers) = op.apply(&u).unwrap();
        let n = number_of(&sizes, u.cell(0));
        let dn = number_of(&sizes, rate.cell(0));
        assert_eq!(ledgers[0], Overflow::default());
        let want = -0.5 * kappa * n * n;
        assert!((dn - want).abs() <= 1e-12 * n * n, "{dn} vs {want}");
    }

    #[test]
    fn single_species_deposits_on_the_bracketing_nodes() {
        let space = SpaceGrid::new(1, 2.0 * std::f64::consts::PI, 8).unwrap();
        // ratio 2: doubling lands exactly on the next node.
        let sizes2 = SizeGrid::from_ratio(1.0, 2.0, 11).unwrap();
        let rates = RateModel::constant(1.0, 1.0);
        let op = CoagulationOp::new(&CoagKernel::Constant { kappa0: 1.0 }, &rates, &sizes2)
            .unwrap();
        let mut u = Field::zeros(&space, &sizes2);
        for c in 0..space.cells() {
            u.set(c, 3, 2.0);
        }
        let (rate, ledgers) = op.apply(&u).unwrap();
        // xi_3 + xi_3 = xi_4 exactly: all gain to node 4, loss at node 3.
        let w3 = sizes2.weight(3);
        let e = 0.5 * 4.0 * w3 * w3;
        assert!((rate.at(0, 3) + 2.0 * e / w3).abs() <= 1e-14 * e);
        assert!((rate.at(0, 4) - e / sizes2.weight(4)).abs() <= 1e-14 * e);
        for i in [0, 1, 2, 5, 6] {
            assert_eq!(rate.at(0, i), 0.0);
        }
        assert_eq!(ledgers[0], Overflow::default());
    }

    #[test]
    fn off_node_sums_split_mass_and_number_exactly() {
        let (space, sizes) = grids(16);
        let rates = RateModel::constant(1.0, 1.0);
        let op = CoagulationOp::new(&CoagKernel::Constant { kappa0: 1.0 }, &rates, &sizes)
            .unwrap();
        let mut u = Field::zeros(&space, &sizes);
        // Two species whose sum falls between nodes.
        for c in 0..space.cells() {
            u.set(c, 2, 1.0);
            u.set(c, 5, 3.0);
        }
        let (rate, _) = op.apply(&u).unwrap();
        let slice = rate.cell(0);
        let dm = mass_of(&sizes, slice);
        let dn = number_of(&sizes, slice);
        // Events: (2,2), (5,5), (2,5); each conserves mass and removes one
        // particle net.
        let w = |i: usize| sizes.weight(i);
        let events = 0.5 * w(2) * w(2) + 0.5 * 9.0 * w(5) * w(5) + 3.0 * w(2) * w(5);
        assert!(dm.abs() <= 1e-11, "mass rate {dm}");
        assert!((dn + events).abs() <= 1e-13 * events, "{dn} vs {events}");
    }

    #[test]
    fn top_heavy_states_overflow_into_the_ledger() {
        let (space, sizes) = grids(8);
        let rates = RateModel::constant(1.0, 1.0);
        let op = CoagulationOp::new(&CoagKernel::Constant { kappa0: 2.0 }, &rates, &sizes)
            .unwrap();
        let top = sizes.len() - 1;
        let mut u = Field::zeros(&space, &sizes);
        for c in 0..space.cells() {
            u.set(c, top, 5.0);
        }
        let (rate, ledgers) = op.apply(&u).unwrap();
        let w = sizes.weight(top);
        let e = 0.5 * 2.0 * 25.0 * w * w;
        assert!((rate.at(0, top) + 2.0 * e / w).abs() <= 1e-13 * e);
        assert!((ledgers[0].mass - e * 2.0 * sizes.xi_max()).abs() <= 1e-13 * ledgers[0].mass);
        assert!((ledgers[0].number - e).abs() <= 1e-13 * e);
        // Nothing deposited anywhere.
        for i in 0..top {
            assert_eq!(rate.at(0, i), 0.0);
        }
    }

    #[test]
    fn bilinear_form_is_symmetric_and_expands_the_square() {
        let (space, sizes) = grids(20);
        let rates = RateModel::power(0.2, 0.5, 1, 1.0, 1.0);
        let op =
            CoagulationOp::new(&CoagKernel::BetaDominated { c: 0.2, rho: 0.5 }, &rates, &sizes)
                .unwrap();
        let u = Field::from_fn(&space, &sizes, |x, xi| (1.5 + x[0].cos()) * (-xi / 30.0).exp());
        let v = Field::from_fn(&space, &sizes, |x, xi| (1.2 + x[0].sin()) / (1.0 + xi));
        let (uv, _) = op.apply_bilinear(&u, &v).unwrap();
        let (vu, _) = op.apply_bilinear(&v, &u).unwrap();
        assert_eq!(uv.values(), vu.values());
        // C(u+v) = C(u) + 2 B(u,v) + C(v).
        let mut sum = u.clone();
        sum.axpy(1.0, &v);
        let (cs, _) = op.apply(&sum).unwrap();
        let (cu, _) = op.apply(&u).unwrap();
        let (cv, _) = op.apply(&v).unwrap();
        let scale = cs.max_abs();
        for c in 0..space.cells() {
            for i in 0..sizes.len() {
                let want = cu.at(c, i) + 2.0 * uv.at(c, i) + cv.at(c, i);
                assert!((cs.at(c, i) - want).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn negative_kernel_is_rejected() {
        let (_, sizes) = grids(8);
        let rates = RateModel::constant(1.0, 1.0);
        let err = CoagulationOp::new(&CoagKernel::Constant { kappa0: -0.1 }, &rates, &sizes)
            .unwrap_err()
            .to_string();
        assert!(err.contains("nonnegative"), "{err}");
    }

    #[test]
    fn specific_loss_matches_the_direct_double_sum() {
        let (space, sizes) = grids(14);
        let rates = RateModel::power(0.2, 0.5, 1, 1.0, 1.0);
        let kernel = CoagKernel::BetaDominated { c: 0.4, rho: 0.5 };
        let op = CoagulationOp::new(&kernel, &rates, &sizes).unwrap();
        let u = Field::from_fn(&space, &sizes, |x, xi| {
            (1.0 + 0.3 * x[0].sin()) / (1.0 + xi)
        });
        let d = op.specific_loss(&u).unwrap();
        assert!(op.kappa_max() > 0.0);
        for cell in [0, 3] {
            let uc = u.cell(cell);
            for i in 0..sizes.len() {
                let direct: f64 = (0..sizes.len())
                    .map(|j| {
                        kernel.eval(&rates, sizes.node(i), sizes.node(j))
                            * uc[j]
                            * sizes.weight(j)
                    })
                    .sum();
                let got = d.cell(cell)[i];
                assert!(
                    (got - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                    "i={i}: {got} vs {direct}"
                );
                assert!(direct <= op.kappa_max() * number_of(&sizes, uc) * (1.0 + 1e-12));
            }
        }
    }
}
