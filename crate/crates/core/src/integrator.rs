//! Operator-split time integrator. A step is the palindromic composition
//! D(dt/2) R(dt) D(dt/2): spectral transport half-steps around a reaction
//! stage that carries fragmentation loss+gain and coagulation together
//! with their conservation ledgers. The reaction stage is advanced by an
//! explicit two-stage scheme whose substep count is chosen from the bound
//!   h * max_cell(beta_max + kappa_max * number_max) <= safety,
//! so for physical states the stage never needs to reject; a reject-and-
//! halve guard remains as a backstop for degenerate inputs. The damped
//! (patankar) policy replaces substepping with a single unconditionally
//! positive update u + dt R(u / (1 + dt d)), first order in the loss
//! channel, for stiff loss rates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coagulation::CoagulationOp;
use crate::diagnostics::{DiagnosticsSeries, Ledgers, NormSpec};
use crate::diffusion::DiffusionPropagator;
use crate::error::{FragkinError, Result};
use crate::fragmentation::FragmentationOp;
use crate::grid::{weighted_seminorm, Field, SizeGrid, SpaceGrid};
use crate::kernels::RateModel;

/// How the reaction stage keeps the state nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositivityPolicy {
    /// Explicit substeps sized by the stability bound, with reject-and-halve
    /// on any entry below -1e-12 of the field scale.
    Guard,
    /// Single damped update, unconditionally positive, first order in the
    /// loss channel.
    Patankar,
}

/// The reaction-side model set: rates plus optional fragmentation and
/// coagulation operators built on the same size grid.
pub struct Models {
    pub rates: RateModel,
    pub frag: Option<FragmentationOp>,
    pub coag: Option<CoagulationOp>,
}

impl Models {
    /// Net reaction rate and the instantaneous ledger rates (domain totals).
    pub fn reaction(&self, u: &Field) -> Result<(Field, Ledgers)> {
        let vol = u.space().cell_volume();
        let mut rate = Field::zeros(u.space(), u.sizes());
        let mut led = Ledgers::default();
        if let Some(frag) = &self.frag {
            let (fr, under) = frag.apply(u, &self.rates)?;
            rate.axpy(1.0, &fr);
            led.underflow_mass += vol * under.iter().sum::<f64>();
        }
        if let Some(coag) = &self.coag {
            let (cr, over) = coag.apply(u)?;
            rate.axpy(1.0, &cr);
            for o in &over {
                led.overflow_mass += vol * o.mass;
                led.overflow_number += vol * o.number;
            }
        }
        Ok((rate, led))
    }
}

pub struct Stepper {
    space: Arc<SpaceGrid>,
    sizes: Arc<SizeGrid>,
    models: Models,
    diff_half: DiffusionPropagator,
    dt: f64,
    safety: f64,
    policy: PositivityPolicy,
    /// sup over nodes and cells of the fragmentation rate.
    beta_rate_max: f64,
    /// beta(x, xi) laid out like a field, for the damped update.
    frag_loss: Option<Vec<f64>>,
}

/// Entries this far below zero (relative to the field scale) are treated as
/// round-off and clamped; anything lower trips the guard.
const NEGATIVE_TOL: f64 = 1e-12;
/// Reject-and-halve attempts before the stage gives up.
const MAX_HALVINGS: u32 = 20;

impl Stepper {
    pub fn new(
        space: &Arc<SpaceGrid>,
        sizes: &Arc<SizeGrid>,
        models: Models,
        dt: f64,
        safety: f64,
        policy: PositivityPolicy,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(FragkinError::Config(format!("step size must be > 0, got {dt}")));
        }
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(FragkinError::Config(format!("safety must lie in (0, 1], got {safety}")));
        }
        let diff_half = DiffusionPropagator::new(space, sizes, &models.rates, 0.5 * dt, false)?;
        let (beta_rate_max, frag_loss) = if models.frag.is_some() {
            let beta = models.rates.beta_floor_values(sizes);
            let peak = beta.iter().fold(0.0_f64, |a, &b| a.max(b));
            let m = sizes.len();
            let mut loss = vec![0.0; space.cells() * m];
            for cell in 0..space.cells() {
                let pos = space.position(cell);
                let pos = &pos[..space.dim];
                for i in 0..m {
                    let modf = if models.rates.modulation.is_some() {
                        models.rates.modulation_at(pos, sizes.node(i))
                    } else {
                        1.0
                    };
                    loss[cell * m + i] = beta[i] * modf;
                }
            }
            (peak * models.rates.c_beta, Some(loss))
        } else {
            (0.0, None)
        };
        Ok(Stepper {
            space: Arc::clone(space),
            sizes: Arc::clone(sizes),
            models,
            diff_half,
            dt,
            safety,
            policy,
            beta_rate_max,
            frag_loss,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    /// Upper bound on any entry's specific loss rate at state u.
    fn rate_bound(&self, u: &Field) -> f64 {
        let mut r = self.beta_rate_max;
        if let Some(coag) = &self.models.coag {
            let weights = self.sizes.weights();
            let mut nmax = 0.0_f64;
            for cell in 0..self.space.cells() {
                let n: f64 =
                    u.cell(cell).iter().zip(weights).map(|(v, w)| v.max(0.0) * w).sum();
                nmax = nmax.max(n);
            }
            r += coag.kappa_max() * nmax;
        }
        r
    }

    pub fn step(&self, u: &Field, ledgers: &mut Ledgers) -> Result<Field> {
        let (u1, _) = self.diff_half.apply(u)?;
        let u2 = match self.policy {
            PositivityPolicy::Guard => self.react_guard(&u1, ledgers)?,
            PositivityPolicy::Patankar => self.react_patankar(&u1, ledgers)?,
        };
        let (u3, _) = self.diff_half.apply(&u2)?;
        Ok(u3)
    }

    fn react_guard(&self, u0: &Field, ledgers: &mut Ledgers) -> Result<Field> {
        if self.models.frag.is_none() && self.models.coag.is_none() {
            return Ok(u0.clone());
        }
        let dt = self.dt;
        let mut u = u0.clone();
        let mut advanced = 0.0;
        let mut halvings = 0u32;
        while advanced < dt {
            let remaining = dt - advanced;
            let rate_max = self.rate_bound(&u);
            let mut h = if rate_max > 0.0 {
                (self.safety / rate_max).min(remaining)
            } else {
                remaining
            };
            let tol = NEGATIVE_TOL * u.max_abs();
            let (k1, l1) = self.models.reaction(&u)?;
            loop {
                if !(h.is_finite() && h > 0.0) {
                    return Err(FragkinError::Numerical(format!(
                        "reaction substep collapsed to {h} at stage time {advanced:.3e}"
                    )));
                }
                let mut trial = u.clone();
                trial.axpy(h, &k1);
                if trial.min_value() < -tol {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(FragkinError::Numerical(
                            "positivity-limited stagnation: reaction step rejected more than 20 \
                             times"
                                .into(),
                        ));
                    }
                    h *= 0.5;
                    continue;
                }
                let (k2, l2) = self.models.reaction(&trial)?;
                let mut next = u.clone();
                next.axpy(0.5 * h, &k1);
                next.axpy(0.5 * h, &k2);
                if next.min_value() < -tol {
                    halvings += 1;
                    if halvings > MAX_HALVINGS {
                        return Err(FragkinError::Numerical(
                            "positivity-limited stagnation: reaction step rejected more than 20 \
                             times"
                                .into(),
                        ));
                    }
                    h *= 0.5;
                    continue;
                }
                for v in next.values_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                // The ledger integral uses the same stage weights as the
                // state update, so deposits + ledgers balance exactly.
                ledgers.accumulate(&l1, 0.5 * h);
                ledgers.accumulate(&l2, 0.5 * h);
                u = next;
                advanced += h;
                break;
            }
        }
        Ok(u)
    }

    fn react_patankar(&self, u0: &Field, ledgers: &mut Ledgers) -> Result<Field> {
        if self.models.frag.is_none() && self.models.coag.is_none() {
            return Ok(u0.clone());
        }
        let dt = self.dt;
        // Specific loss bound per entry at the incoming state. Evaluating
        // the operators at the damped state u/(1+dt*d) keeps the update
        // positive: the true loss rate there is at most d, and the ledger
        // identities hold exactly at the damped state.
        let mut d = match &self.models.coag {
            Some(c) => c.specific_loss(u0)?,
            None => Field::zeros(&self.space, &self.sizes),
        };
        if let Some(fl) = &self.frag_loss {
            for (dv, &b) in d.values_mut().iter_mut().zip(fl) {
                *dv += b;
            }
        }
        let mut damped = u0.clone();
        for (v, dv) in damped.values_mut().iter_mut().zip(d.values()) {
            *v /= 1.0 + dt * dv;
        }
        let (rate, l) = self.models.reaction(&damped)?;
        let mut next = u0.clone();
        next.axpy(dt, &rate);
        ledgers.accumulate(&l, dt);
        for v in next.values_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(next)
    }

    /// Advance from u0 to t_end, sampling diagnostics every `output_every`
    /// steps (plus the initial and final states). The observer fires at
    /// every sample; returning an error from it aborts the run.
    pub fn run(
        &self,
        u0: Field,
        opts: &RunOptions,
        observer: impl FnMut(&RunState, &DiagnosticsSeries) -> Result<()>,
    ) -> Result<RunOutcome> {
        let state = RunState { t: 0.0, step: 0, u: u0, ledgers: Ledgers::default() };
        self.run_from(state, opts, observer)
    }

    /// Continue a run from a saved state (typically a checkpoint). The
    /// incoming state is sampled immediately, then stepping proceeds on the
    /// global cadence, so a resumed series is the tail of the uninterrupted
    /// one.
    pub fn run_from(
        &self,
        state: RunState,
        opts: &RunOptions,
        mut observer: impl FnMut(&RunState, &DiagnosticsSeries) -> Result<()>,
    ) -> Result<RunOutcome> {
        if !opts.certified {
            return Err(FragkinError::Config(
                "model set is not certified for a global run; certify it or set the override"
                    .into(),
            ));
        }
        if !(opts.t_end.is_finite() && opts.t_end > 0.0) {
            return Err(FragkinError::Config(format!(
                "final time must be > 0, got {}",
                opts.t_end
            )));
        }
        if opts.output_every == 0 {
            return Err(FragkinError::Config("output interval must be >= 1".into()));
        }
        let nsteps = (opts.t_end / self.dt).round();
        if nsteps < 1.0 || (nsteps * self.dt - opts.t_end).abs() > 1e-9 * opts.t_end {
            return Err(FragkinError::Config(format!(
                "final time {} is not an integer number of steps of {}",
                opts.t_end, self.dt
            )));
        }
        let nsteps = nsteps as u64;
        if (state.t - state.step as f64 * self.dt).abs() > 1e-9 * self.dt.max(state.t) {
            return Err(FragkinError::Config(format!(
                "saved state at t = {} does not sit on the step grid of {}",
                state.t, self.dt
            )));
        }
        if state.step >= nsteps {
            return Err(FragkinError::Config(format!(
                "saved state is already at step {} of {nsteps}",
                state.step
            )));
        }
        if !state.u.is_finite() {
            return Err(FragkinError::Numerical(
                "initial data contains non-finite entries".into(),
            ));
        }
        if state.u.min_value() < 0.0 {
            return Err(FragkinError::Config("initial data must be nonnegative".into()));
        }
        let beta = self.models.rates.beta_floor_values(&self.sizes);
        let mut series = DiagnosticsSeries::new(opts.specs.clone());
        let mut state = state;
        series.sample(state.t, &state.u, &state.ledgers, Some(&beta))?;
        observer(&state, &series)?;
        // Reference levels for the blow-up abort.
        let initial: Vec<(String, f64)> = series
            .norms
            .iter()
            .map(|(k, v)| (k.clone(), v[0]))
            .chain([("mass".into(), series.mass[0]), ("number".into(), series.number[0])])
            .collect();
        for k in state.step + 1..=nsteps {
            state.u = self.step(&state.u, &mut state.ledgers)?;
            state.step = k;
            state.t = k as f64 * self.dt;
            if !state.u.is_finite() {
                return Err(FragkinError::Numerical(format!(
                    "non-finite value at step {k} (t = {:.6e})",
                    state.t
                )));
            }
            if k % opts.output_every as u64 == 0 || k == nsteps {
                series.sample(state.t, &state.u, &state.ledgers, Some(&beta))?;
                observer(&state, &series)?;
                let idx = series.len() - 1;
                for (key, base) in &initial {
                    if *base <= 0.0 {
                        continue;
                    }
                    let now = match key.as_str() {
                        "mass" => series.mass[idx],
                        "number" => series.number[idx],
                        other => series.norms[other][idx],
                    };
                    if now > opts.blow_up_factor * base {
                        return Ok(RunOutcome {
                            series,
                            state,
                            aborted_at: Some(k as f64 * self.dt),
                        });
                    }
                }
            }
        }
        Ok(RunOutcome { series, state, aborted_at: None })
    }
}

pub struct RunOptions {
    pub t_end: f64,
    pub output_every: usize,
    pub blow_up_factor: f64,
    pub specs: Vec<NormSpec>,
    /// Attests that the model set passed certification (or that the caller
    /// explicitly overrides it).
    pub certified: bool,
}

impl RunOptions {
    pub fn new(t_end: f64, output_every: usize) -> Self {
        RunOptions {
            t_end,
            output_every,
            blow_up_factor: 1e12,
            specs: default_norm_specs(2.0, 1.0, 0.0),
            certified: false,
        }
    }
}

/// The norm set tracked by default: the mass-type and number-type gauges
/// plus the interpolation triple (p = 1, 2, p) at the working weight.
pub fn default_norm_specs(p: f64, ell: f64, s: f64) -> Vec<NormSpec> {
    vec![
        NormSpec::new(1.0, 1.0, 0.0),
        NormSpec::new(1.0, ell, s),
        NormSpec::new(2.0, ell, s),
        NormSpec::new(p, ell, s),
        NormSpec::new(p, ell, 0.0),
    ]
}

#[derive(Debug)]
pub struct RunState {
    pub t: f64,
    pub step: u64,
    pub u: Field,
    pub ledgers: Ledgers,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub series: DiagnosticsSeries,
    pub state: RunState,
    /// Set when a tracked norm exceeded blow_up_factor times its initial
    /// value; the run stops at that sample instead of erroring.
    pub aborted_at: Option<f64>,
}

/// Linear transport-fragmentation propagator used as the baseline of the
/// mild-solution iteration: palindromic substeps D(h/2) B(h) D(h/2) with
/// the two-stage explicit scheme for the (signed) fragmentation part.
struct LinearPropagator<'a> {
    half: DiffusionPropagator,
    frag: Option<&'a FragmentationOp>,
    rates: &'a RateModel,
    h: f64,
    nsub: usize,
}

impl<'a> LinearPropagator<'a> {
    fn build(
        space: &Arc<SpaceGrid>,
        sizes: &Arc<SizeGrid>,
        models: &'a Models,
        dtau: f64,
        nsub: usize,
    ) -> Result<Self> {
        let h = dtau / nsub as f64;
        Ok(LinearPropagator {
            half: DiffusionPropagator::new(space, sizes, &models.rates, 0.5 * h, false)?,
            frag: models.frag.as_ref(),
            rates: &models.rates,
            h,
            nsub,
        })
    }

    fn apply(&self, u: &Field) -> Result<Field> {
        let mut v = u.clone();
        for _ in 0..self.nsub {
            v = self.half.apply_raw(&v)?;
            if let Some(frag) = self.frag {
                let (k1, _) = frag.apply(&v, self.rates)?;
                let mut mid = v.clone();
                mid.axpy(self.h, &k1);
                let (k2, _) = frag.apply(&mid, self.rates)?;
                v.axpy(0.5 * self.h, &k1);
                v.axpy(0.5 * self.h, &k2);
            }
            v = self.half.apply_raw(&v)?;
        }
        Ok(v)
    }
}

pub struct PicardOptions {
    pub t_horizon: f64,
    /// Time quadrature nodes for the memory integral (>= 8).
    pub n_quad: usize,
    pub kmax: usize,
    pub tol: f64,
    /// Norm in which iterate distances are measured.
    pub norm: NormSpec,
}

pub struct PicardReport {
    /// d_k = sup over quadrature times of the distance between consecutive
    /// iterates, one entry per iteration.
    pub distances: Vec<f64>,
    /// d_{k+1} / d_k.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Substeps per quadrature interval in the calibrated linear propagator.
    pub substeps_per_node: usize,
    pub final_state: Field,
}

fn norm_distance(a: &Field, b: &Field, spec: &NormSpec, beta: Option<&[f64]>) -> Result<f64> {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    weighted_seminorm(&d, spec.p, spec.ell, spec.s, beta)
}

/// Mild-solution fixed-point iteration on [0, T]: iterates are propagated
/// linearly and corrected by the memory integral of the coagulation term,
/// evaluated with the trapezoid rule on a uniform node set. Returns the
/// contraction history; three consecutive non-contracting sweeps abort.
pub fn picard_solve(
    space: &Arc<SpaceGrid>,
    sizes: &Arc<SizeGrid>,
    models: &Models,
    u0: &Field,
    opts: &PicardOptions,
) -> Result<PicardReport> {
    if !(opts.t_horizon.is_finite() && opts.t_horizon > 0.0) {
        return Err(FragkinError::Config(format!(
            "iteration horizon must be > 0, got {}",
            opts.t_horizon
        )));
    }
    if opts.n_quad < 8 {
        return Err(FragkinError::Config(format!(
            "memory integral needs at least 8 quadrature nodes, got {}",
            opts.n_quad
        )));
    }
    if !(opts.tol > 0.0) || opts.kmax == 0 {
        return Err(FragkinError::Config("iteration tolerance and budget must be positive".into()));
    }
    let beta_vals;
    let beta = if opts.norm.s != 0.0 {
        beta_vals = models.rates.beta_floor_values(sizes);
        Some(beta_vals.as_slice())
    } else {
        None
    };
    let dtau = opts.t_horizon / opts.n_quad as f64;
    // Calibrate the substep count: double until the propagated state stops
    // moving at a tenth of the iteration tolerance.
    let mut nsub = 1usize;
    let mut prop = LinearPropagator::build(space, sizes, models, dtau, nsub)?;
    let mut coarse = prop.apply(u0)?;
    loop {
        let finer = LinearPropagator::build(space, sizes, models, dtau, nsub * 2)?;
        let fine = finer.apply(u0)?;
        let moved = norm_distance(&fine, &coarse, &opts.norm, beta)?;
        prop = finer;
        coarse = fine;
        nsub *= 2;
        if moved < 0.1 * opts.tol {
            break;
        }
        if nsub > 1024 {
            return Err(FragkinError::Numerical(format!(
                "linear propagator does not settle at {nsub} substeps per node; shorten the \
                 horizon or loosen the tolerance"
            )));
        }
    }
    let mut v: Vec<Field> = Vec::with_capacity(opts.n_quad + 1);
    v.push(u0.clone());
    for q in 1..=opts.n_quad {
        let next = prop.apply(&v[q - 1])?;
        v.push(next);
    }
    let v0 = v.clone();
    let Some(coag) = &models.coag else {
        let final_state = v.pop().expect("nodes nonempty");
        return Ok(PicardReport {
            distances: Vec::new(),
            ratios: Vec::new(),
            converged: true,
            iterations: 0,
            substeps_per_node: nsub,
            final_state,
        });
    };
    let mut distances: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..opts.kmax {
        let rates: Vec<Field> = v
            .iter()
            .map(|vq| coag.apply(vq).map(|(r, _)| r))
            .collect::<Result<_>>()?;
        // I_q = S(dtau) [I_{q-1} + (dtau/2) C_{q-1}] + (dtau/2) C_q is the
        // trapezoid rule for the memory integral with the semigroup kernel.
        let mut vnext: Vec<Field> = Vec::with_capacity(opts.n_quad + 1);
        vnext.push(v0[0].clone());
        let mut integral = Field::zeros(space, sizes);
        for q in 1..=opts.n_quad {
            let mut tmp = integral;
            tmp.axpy(0.5 * dtau, &rates[q - 1]);
            integral = prop.apply(&tmp)?;
            integral.axpy(0.5 * dtau, &rates[q]);
            let mut w = v0[q].clone();
            w.axpy(1.0, &integral);
            vnext.push(w);
        }
        let mut dk = 0.0_f64;
        for q in 0..=opts.n_quad {
            dk = dk.max(norm_distance(&vnext[q], &v[q], &opts.norm, beta)?);
        }
        if let Some(&prev) = distances.last() {
            ratios.push(if prev > 0.0 { dk / prev } else { 0.0 });
        }
        distances.push(dk);
        v = vnext;
        if dk < opts.tol {
            converged = true;
            break;
        }
        if ratios.len() >= 3 && ratios.iter().rev().take(3).all(|&r| r >= 1.0) {
            return Err(FragkinError::Numerical(format!(
                "no contraction at this horizon: distances stopped shrinking after {} sweeps",
                distances.len()
            )));
        }
    }
    let final_state = v.pop().expect("nodes nonempty");
    Ok(PicardReport {
        iterations: distances.len(),
        distances,
        ratios,
        converged,
        substeps_per_node: nsub,
        final_state,
    })
}
