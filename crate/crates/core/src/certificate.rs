//! Certification of every structural hypothesis the solver relies on:
//! rate positivity and envelopes, kernel shape and conservativity, moment
//! thresholds, coagulation domination, and the power-rate balance
//! inequalities behind the global-boundedness regime. Each hypothesis is a
//! named clause with the intermediate numbers echoed into the report.

use std::fmt;

use serde::Serialize;

use crate::error::{FragkinError, Result};
use crate::grid::{SizeGrid, SpaceGrid};
use crate::kernels::{CoagKernel, FragKernel, RateModel};
use crate::logquad;
use crate::moments::{EllBar, MomentReport, CONSERVATIVITY_TOL};

/// Largest acceptable proxy for the top-fragment mass share (the inf over
/// tested ell >= 1 of the sigma table); the hypothesis wants 0 in the limit.
pub const SIGMA_INF_TOL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClauseStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct Clause {
    pub id: &'static str,
    pub status: ClauseStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub clauses: Vec<Clause>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.status != ClauseStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.clauses
            .iter()
            .filter(|c| c.status == ClauseStatus::Fail)
            .map(|c| c.id)
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.id == id)
    }
}

impl fmt::Display for CertificateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            let tag = match c.status {
                ClauseStatus::Pass => "PASS",
                ClauseStatus::Fail => "FAIL",
                ClauseStatus::Skipped => "SKIP",
            };
            writeln!(f, "[{tag}] {:<24} {}", c.id, c.detail)?;
        }
        let (mut p, mut fl, mut s) = (0, 0, 0);
        for c in &self.clauses {
            match c.status {
                ClauseStatus::Pass => p += 1,
                ClauseStatus::Fail => fl += 1,
                ClauseStatus::Skipped => s += 1,
            }
        }
        writeln!(
            f,
            "certificate: {} ({p} pass, {fl} fail, {s} skipped)",
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Analysis-side parameters the hypotheses are checked against.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnalysisParams {
    pub dim: usize,
    pub p: f64,
    pub ell: f64,
    pub delta: f64,
    /// Coagulation domination exponent in (0,1).
    pub rho: f64,
    /// Claimed domination constant; the certifier verifies, never discovers.
    pub c_kappa: f64,
}

/// User-supplied constants for the separable-family admissibility
/// inequalities (one-sided doubling with c1, reverse mean inequality with
/// c2 and exponent p_h0); the certifier verifies them on the eta samples.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeparableConstants {
    pub c1: f64,
    pub c2: f64,
    pub p_h0: f64,
}

/// min over size nodes of alpha(xi)^delta * beta_floor(xi)^(1-delta).
pub fn kappa_delta(rates: &RateModel, delta: f64, sizes: &SizeGrid) -> f64 {
    kappa_delta_argmin(rates, delta, sizes).0
}

fn kappa_delta_argmin(rates: &RateModel, delta: f64, sizes: &SizeGrid) -> (f64, f64) {
    let mut best = f64::INFINITY;
    let mut arg = sizes.node(0);
    for &xi in sizes.nodes() {
        let v = (rates.alpha)(xi).powf(delta) * (rates.beta_floor)(xi).powf(1.0 - delta);
        if v < best {
            best = v;
            arg = xi;
        }
    }
    (best, arg)
}

/// Largest delta keeping the power-rate balance exponent non-negative:
/// delta* = d*theta_beta / (2*theta_alpha + d*theta_beta).
pub fn max_delta(theta_alpha: f64, theta_beta: f64, dim: usize) -> f64 {
    let d = dim as f64;
    d * theta_beta / (2.0 * theta_alpha + d * theta_beta)
}

/// Condition number lambda_max/lambda_min of a 1x1 or symmetric positive
/// definite 2x2 diffusion matrix (certifier utility; the solver core is
/// scalar).
pub fn condition_number(matrix: &[Vec<f64>]) -> Result<f64> {
    match matrix.len() {
        1 => {
            if matrix[0].len() != 1 {
                return Err(FragkinError::Certificate("matrix rows must match order".into()));
            }
            let a = matrix[0][0];
            if a <= 0.0 {
                return Err(FragkinError::Certificate(format!(
                    "diffusion matrix not positive definite: [{a}]"
                )));
            }
            Ok(1.0)
        }
        2 => {
            if matrix.iter().any(|r| r.len() != 2) {
                return Err(FragkinError::Certificate("matrix rows must match order".into()));
            }
            let (a, b, c, d) = (matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]);
            if (b - c).abs() > 1e-12 * a.abs().max(d.abs()).max(b.abs()).max(1.0) {
                return Err(FragkinError::Certificate(format!(
                    "diffusion matrix not symmetric: off-diagonal {b} vs {c}"
                )));
            }
            let tr = a + d;
            let disc = ((a - d) * (a - d) + 4.0 * b * c).max(0.0).sqrt();
            let lmin = 0.5 * (tr - disc);
            let lmax = 0.5 * (tr + disc);
            if lmin <= 0.0 {
                return Err(FragkinError::Certificate(format!(
                    "diffusion matrix not positive definite: eigenvalues {lmin}, {lmax}"
                )));
            }
            Ok(lmax / lmin)
        }
        n => Err(FragkinError::Certificate(format!(
            "condition number supports orders 1 and 2, got {n}"
        ))),
    }
}

fn clause(id: &'static str, pass: bool, detail: String) -> Clause {
    Clause {
        id,
        status: if pass { ClauseStatus::Pass } else { ClauseStatus::Fail },
        detail,
    }
}

fn skipped(id: &'static str, why: &str) -> Clause {
    Clause { id, status: ClauseStatus::Skipped, detail: why.to_string() }
}

pub struct CertifyInputs<'a> {
    pub rates: &'a RateModel,
    pub frag: Option<&'a FragKernel>,
    pub coag: Option<&'a CoagKernel>,
    pub sizes: &'a SizeGrid,
    pub space: Option<&'a SpaceGrid>,
    pub params: AnalysisParams,
    pub separable: Option<SeparableConstants>,
}

pub fn check_hypotheses(
    inputs: &CertifyInputs<'_>,
    report: Option<&MomentReport>,
) -> Result<CertificateReport> {
    let pr = inputs.params;
    if !(0.0..1.0).contains(&pr.delta) {
        return Err(FragkinError::Certificate(format!(
            "delta must lie in [0,1), got {}",
            pr.delta
        )));
    }
    if pr.p < 1.0 {
        return Err(FragkinError::Certificate(format!("p must be >= 1, got {}", pr.p)));
    }
    if !(1..=2).contains(&inputs.dim()) {
        return Err(FragkinError::Certificate(format!(
            "space dimension must be 1 or 2, got {}",
            inputs.dim()
        )));
    }
    if inputs.coag.is_some() {
        if !(0.0 < pr.rho && pr.rho < 1.0) {
            return Err(FragkinError::Certificate(format!(
                "rho must lie in (0,1), got {}",
                pr.rho
            )));
        }
        if pr.c_kappa <= 0.0 {
            return Err(FragkinError::Certificate(format!(
                "c_kappa must be positive, got {}",
                pr.c_kappa
            )));
        }
    }
    if inputs.frag.is_some() && report.is_none() {
        return Err(FragkinError::Certificate(
            "moment report required to certify a fragmentation kernel".into(),
        ));
    }

    let mut clauses = Vec::new();
    clauses.push(diffusion_rate_positive(inputs));
    clauses.push(frag_envelope(inputs)?);
    clauses.push(frag_kernel_shape(inputs));
    clauses.push(frag_conservative(inputs, report));
    clauses.push(frag_moment_tail(inputs, report));
    clauses.push(frag_moment_exponents(inputs, report));
    clauses.push(mixed_rate_floor(inputs));
    clauses.push(coag_symmetric(inputs));
    clauses.push(coag_dominated(inputs));
    clauses.push(integrability_exponent(inputs));
    clauses.push(rate_power_envelope(inputs));
    clauses.push(rate_monotonicity(inputs));
    clauses.push(balance_theta_alpha(inputs, report));
    clauses.push(balance_theta_beta(inputs, report));
    clauses.push(separable_admissible(inputs));
    Ok(CertificateReport { clauses })
}

impl CertifyInputs<'_> {
    fn dim(&self) -> usize {
        self.params.dim
    }
}

fn diffusion_rate_positive(inputs: &CertifyInputs<'_>) -> Clause {
    let mut min_a = f64::INFINITY;
    let mut arg = inputs.sizes.node(0);
    for &xi in inputs.sizes.nodes() {
        let a = (inputs.rates.alpha)(xi);
        if a < min_a {
            min_a = a;
            arg = xi;
        }
    }
    clause(
        "diffusion-rate-positive",
        min_a > 0.0 && min_a.is_finite(),
        format!("min alpha = {min_a:.6e} at xi = {arg:.3e}; scalar rate, condition number 1"),
    )
}

fn frag_envelope(inputs: &CertifyInputs<'_>) -> Result<Clause> {
    if inputs.frag.is_none() {
        return Ok(skipped("frag-envelope", "fragmentation disabled"));
    }
    let r = inputs.rates;
    let mut min_b = f64::INFINITY;
    for &xi in inputs.sizes.nodes() {
        min_b = min_b.min((r.beta_floor)(xi));
    }
    let mut detail = format!("min envelope = {min_b:.6e}, C_beta = {}", r.c_beta);
    let mut pass = min_b > 0.0 && min_b.is_finite() && r.c_beta >= 1.0;
    if r.modulation.is_some() {
        let space = inputs.space.ok_or_else(|| {
            FragkinError::Certificate("spatial grid required to certify a modulated rate".into())
        })?;
        let stride = (space.cells() / 4096).max(1);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in (0..space.cells()).step_by(stride) {
            let x = space.position(c);
            for &xi in inputs.sizes.nodes().iter().step_by(8) {
                let m = r.modulation_at(&x, xi);
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
        pass &= lo >= 1.0 - 1e-9 && hi <= r.c_beta * (1.0 + 1e-9);
        detail.push_str(&format!(", sampled modulation in [{lo:.6}, {hi:.6}]"));
    }
    Ok(clause("frag-envelope", pass, detail))
}

fn frag_kernel_shape(inputs: &CertifyInputs<'_>) -> Clause {
    let Some(k) = inputs.frag else {
        return skipped("frag-kernel-shape", "fragmentation disabled");
    };
    let nodes = inputs.sizes.nodes();
    let mut min_sample = f64::INFINITY;
    let mut above_diag = 0.0_f64;
    for (j, &eta) in nodes.iter().enumerate() {
        let col = k.eval_column(nodes, eta);
        for (i, &g) in col.iter().enumerate() {
            min_sample = min_sample.min(g);
            if i > j {
                above_diag = above_diag.max(g.abs());
            }
        }
    }
    clause(
        "frag-kernel-shape",
        min_sample >= 0.0 && above_diag == 0.0,
        format!("min sample = {min_sample:.3e}, max above-diagonal = {above_diag:.3e}"),
    )
}

fn frag_conservative(inputs: &CertifyInputs<'_>, report: Option<&MomentReport>) -> Clause {
    if inputs.frag.is_none() {
        return skipped("frag-conservative", "fragmentation disabled");
    }
    let rep = report.expect("checked in check_hypotheses");
    clause(
        "frag-conservative",
        rep.max_conservativity_residual <= CONSERVATIVITY_TOL,
        format!(
            "max mass residual over eta samples = {:.3e} (tolerance {CONSERVATIVITY_TOL:.0e})",
            rep.max_conservativity_residual
        ),
    )
}

fn frag_moment_tail(inputs: &CertifyInputs<'_>, report: Option<&MomentReport>) -> Clause {
    if inputs.frag.is_none() {
        return skipped("frag-moment-tail", "fragmentation disabled");
    }
    let rep = report.expect("checked in check_hypotheses");
    clause(
        "frag-moment-tail",
        rep.sigma_inf_estimate < SIGMA_INF_TOL,
        format!(
            "inf of sigma over tested ell >= 1: {:.6} (threshold {SIGMA_INF_TOL})",
            rep.sigma_inf_estimate
        ),
    )
}

fn frag_moment_exponents(inputs: &CertifyInputs<'_>, report: Option<&MomentReport>) -> Clause {
    if inputs.frag.is_none() {
        return skipped("frag-moment-exponents", "fragmentation disabled");
    }
    let rep = report.expect("checked in check_hypotheses");
    let ok = |e: &EllBar| matches!(e, EllBar::Stabilized(v) if *v < 1.0);
    clause(
        "frag-moment-exponents",
        ok(&rep.ell0_bar) && ok(&rep.ell1_bar),
        format!(
            "count threshold = {}, size threshold = {} (both must stabilize below 1)",
            rep.ell0_bar, rep.ell1_bar
        ),
    )
}

fn mixed_rate_floor(inputs: &CertifyInputs<'_>) -> Clause {
    if inputs.frag.is_none() {
        return skipped("mixed-rate-floor", "fragmentation disabled");
    }
    let (kd, arg) = kappa_delta_argmin(inputs.rates, inputs.params.delta, inputs.sizes);
    let mut detail = format!(
        "min alpha^delta * envelope^(1-delta) = {kd:.6e} at xi = {arg:.3e} (delta = {})",
        inputs.params.delta
    );
    if let Some(p) = inputs.rates.power {
        let dstar = max_delta(p.theta_alpha, p.theta_beta, inputs.dim());
        detail.push_str(&format!(", largest admissible delta = {dstar:.4}"));
        if inputs.params.delta > dstar {
            detail.push_str(" (exceeded: the floor decays to 0 as the size range grows)");
        }
    }
    clause("mixed-rate-floor", kd > 0.0 && kd.is_finite(), detail)
}

fn coag_symmetric(inputs: &CertifyInputs<'_>) -> Clause {
    let Some(k) = inputs.coag else {
        return skipped("coag-symmetric", "coagulation disabled");
    };
    match k {
        CoagKernel::Constant { .. } | CoagKernel::BetaDominated { .. } => clause(
            "coag-symmetric",
            true,
            "symmetric by construction".to_string(),
        ),
        CoagKernel::Tabulated(t) => {
            let asym = t.max_asymmetry();
            let tol = 1e-12 * t.max_value().max(1.0);
            clause(
                "coag-symmetric",
                asym <= tol,
                format!("max |k(a,b) - k(b,a)| = {asym:.3e} (tolerance {tol:.1e})"),
            )
        }
    }
}

fn coag_dominated(inputs: &CertifyInputs<'_>) -> Clause {
    let Some(k) = inputs.coag else {
        return skipped("coag-dominated", "coagulation disabled");
    };
    let rho = inputs.params.rho;
    let beta = inputs.rates.beta_floor_values(inputs.sizes);
    let nodes = inputs.sizes.nodes();
    let mut worst = 0.0_f64;
    let mut at = (nodes[0], nodes[0]);
    for i in 0..nodes.len() {
        for j in i..nodes.len() {
            let denom = beta[i].powf(rho) + beta[j].powf(rho);
            let ratio = k.eval(inputs.rates, nodes[i], nodes[j]) / denom;
            if ratio > worst {
                worst = ratio;
                at = (nodes[i], nodes[j]);
            }
        }
    }
    clause(
        "coag-dominated",
        worst <= inputs.params.c_kappa * (1.0 + 1e-12),
        format!(
            "max kernel/(envelope^rho sum) = {worst:.6} at ({:.3e}, {:.3e}), claimed constant {}",
            at.0, at.1, inputs.params.c_kappa
        ),
    )
}

fn integrability_exponent(inputs: &CertifyInputs<'_>) -> Clause {
    if inputs.coag.is_none() {
        return skipped("integrability-exponent", "coagulation disabled");
    }
    let pr = inputs.params;
    let bound = pr.dim as f64 / (2.0 * (1.0 - pr.rho) * pr.delta.max(f64::MIN_POSITIVE));
    clause(
        "integrability-exponent",
        pr.p >= 2.0 && pr.p > bound,
        format!("p = {} must satisfy p >= 2 and p > d/(2(1-rho)delta) = {bound:.6}", pr.p),
    )
}

fn rate_power_envelope(inputs: &CertifyInputs<'_>) -> Clause {
    let Some(p) = inputs.rates.power else {
        return skipped("rate-power-envelope", "rates not declared power-law");
    };
    let d = inputs.dim() as f64;
    let (mut alo, mut ahi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut blo, mut bhi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &xi in inputs.sizes.nodes() {
        let ra = (inputs.rates.alpha)(xi) * (1.0 + xi).powf(2.0 * p.theta_alpha / d);
        let rb = (inputs.rates.beta_floor)(xi) * (1.0 + xi).powf(-p.theta_beta);
        alo = alo.min(ra);
        ahi = ahi.max(ra);
        blo = blo.min(rb);
        bhi = bhi.max(rb);
    }
    let pass = p.theta_alpha > 0.0
        && p.theta_beta > 0.0
        && alo > 0.0
        && ahi.is_finite()
        && blo > 0.0
        && bhi.is_finite();
    clause(
        "rate-power-envelope",
        pass,
        format!(
            "theta_alpha = {}, theta_beta = {}; diffusivity ratio in [{alo:.4e}, {ahi:.4e}], \
             envelope ratio in [{blo:.4e}, {bhi:.4e}]",
            p.theta_alpha, p.theta_beta
        ),
    )
}

fn rate_monotonicity(inputs: &CertifyInputs<'_>) -> Clause {
    if inputs.rates.power.is_none() {
        return skipped("rate-monotonicity", "rates not declared power-law");
    }
    let a = inputs.rates.alpha_values(inputs.sizes);
    let b = inputs.rates.beta_floor_values(inputs.sizes);
    let a_ok = a.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let b_ok = b.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    clause(
        "rate-monotonicity",
        a_ok && b_ok,
        format!(
            "diffusivity non-increasing: {a_ok}; fragmentation envelope non-decreasing: {b_ok}"
        ),
    )
}

fn balance_theta_alpha(inputs: &CertifyInputs<'_>, report: Option<&MomentReport>) -> Clause {
    let Some(p) = inputs.rates.power else {
        return skipped("balance-theta-alpha", "rates not declared power-law");
    };
    if inputs.frag.is_none() || inputs.coag.is_none() {
        return skipped("balance-theta-alpha", "needs both fragmentation and coagulation");
    }
    let rep = report.expect("checked in check_hypotheses");
    let Some(l1) = rep.ell1_bar.value() else {
        return clause(
            "balance-theta-alpha",
            false,
            "size-moment threshold did not stabilize; cannot certify".to_string(),
        );
    };
    let rho = inputs.params.rho;
    let bound = p.theta_beta.min(l1 + (1.0 - rho) * p.theta_beta);
    clause(
        "balance-theta-alpha",
        p.theta_alpha > 0.0 && p.theta_alpha < bound,
        format!(
            "theta_alpha = {} must lie in (0, {bound:.6}) = (0, min(theta_beta = {}, \
             size threshold + (1-rho)*theta_beta = {:.6}))",
            p.theta_alpha,
            p.theta_beta,
            l1 + (1.0 - rho) * p.theta_beta
        ),
    )
}

fn balance_theta_beta(inputs: &CertifyInputs<'_>, report: Option<&MomentReport>) -> Clause {
    let Some(p) = inputs.rates.power else {
        return skipped("balance-theta-beta", "rates not declared power-law");
    };
    if inputs.frag.is_none() || inputs.coag.is_none() {
        return skipped("balance-theta-beta", "needs both fragmentation and coagulation");
    }
    let rep = report.expect("checked in check_hypotheses");
    let (Some(l0), Some(l1)) = (rep.ell0_bar.value(), rep.ell1_bar.value()) else {
        return clause(
            "balance-theta-beta",
            false,
            "moment thresholds did not stabilize; cannot certify".to_string(),
        );
    };
    let pr = inputs.params;
    let d = pr.dim as f64;
    let delta = pr.delta;
    // p' is the Hoelder conjugate; the first bound tends to (1 - l1) as p -> 1.
    let bound_int = if pr.p == 1.0 {
        1.0 - l1
    } else {
        let pc = pr.p / (pr.p - 1.0);
        2.0 * delta * (1.0 - l1) * pc / (d + 2.0 * delta * pc)
    };
    let bound_count = 1.0 - l0;
    let bound = bound_int.min(bound_count);
    clause(
        "balance-theta-beta",
        p.theta_beta < bound,
        format!(
            "theta_beta = {} must stay below min(2*delta*(1-size threshold)*p'/(d+2*delta*p') \
             = {bound_int:.6}, 1 - count threshold = {bound_count:.6})",
            p.theta_beta
        ),
    )
}

fn separable_admissible(inputs: &CertifyInputs<'_>) -> Clause {
    let Some(FragKernel::Separable { h0 }) = inputs.frag else {
        return skipped("separable-admissible", "kernel family is not separable");
    };
    let Some(sc) = inputs.separable else {
        return clause(
            "separable-admissible",
            false,
            "separable kernel requires the admissibility constants c1, c2, p_h0".to_string(),
        );
    };
    if !(sc.c1 > 0.0 && sc.c2 > 0.0 && sc.p_h0 > 1.0) {
        return clause(
            "separable-admissible",
            false,
            format!("need c1, c2 > 0 and p_h0 > 1, got c1={}, c2={}, p_h0={}", sc.c1, sc.c2, sc.p_h0),
        );
    }
    let panels = 512;
    let mut worst_doubling = f64::NEG_INFINITY;
    let mut worst_mean = f64::NEG_INFINITY;
    for &eta in &crate::moments::DEFAULT_ETA_SAMPLES {
        // One-sided doubling: integral_0^(2 eta) h0 <= c1 * integral_eta^(2 eta) h0.
        let full = logquad::integrate_from_zero(2.0 * eta, panels, |x| h0(x));
        let upper = logquad::integrate_log(eta, 2.0 * eta, panels, |x| h0(x));
        worst_doubling = worst_doubling.max(full / (sc.c1 * upper));
        // Reverse mean inequality on the mass profile xi*h0.
        let lhs = (logquad::integrate_from_zero(eta, panels, |x| (x * h0(x)).powf(sc.p_h0)) / eta)
            .powf(1.0 / sc.p_h0);
        let rhs = sc.c2 / eta * logquad::integrate_from_zero(eta, panels, |x| x * h0(x));
        worst_mean = worst_mean.max(lhs / rhs);
    }
    clause(
        "separable-admissible",
        worst_doubling <= 1.0 + 1e-9 && worst_mean <= 1.0 + 1e-9,
        format!(
            "worst doubling ratio = {worst_doubling:.6}, worst mean ratio = {worst_mean:.6} \
             (both must be <= 1 with c1={}, c2={}, p_h0={})",
            sc.c1, sc.c2, sc.p_h0
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::TabulatedKernel;
    use crate::moments;
    use std::sync::Arc;

    fn worked_rates(theta_alpha: f64, theta_beta: f64) -> RateModel {
        RateModel::power(theta_alpha, theta_beta, 1, 1.0, 1.0)
    }

    fn worked_params() -> AnalysisParams {
        AnalysisParams { dim: 1, p: 4.0, ell: 1.0, delta: 0.5, rho: 0.5, c_kappa: 0.06 }
    }

    fn certify(
        rates: &RateModel,
        frag: &FragKernel,
        params: AnalysisParams,
    ) -> CertificateReport {
        let sizes = SizeGrid::new(0.01, 100.0, 64).unwrap();
        let coag = CoagKernel::BetaDominated { c: 0.05, rho: params.rho };
        let report =
            moments::moment_report(frag, &moments::DEFAULT_ELL_GRID, &moments::DEFAULT_ETA_SAMPLES)
                .unwrap();
        let inputs = CertifyInputs {
            rates,
            frag: Some(frag),
            coag: Some(&coag),
            sizes: &sizes,
            space: None,
            params,
            separable: None,
        };
        check_hypotheses(&inputs, Some(&report)).unwrap()
    }

    #[test]
    fn worked_parameter_set_passes_with_echoed_bounds() {
        let rates = worked_rates(0.2, 0.5);
        let k = FragKernel::power(0.0).unwrap();
        let rep = certify(&rates, &k, worked_params());
        assert!(rep.passed(), "{rep}");
        let a = rep.find("balance-theta-alpha").unwrap();
        assert!(a.detail.contains("0.25"), "{}", a.detail);
        let b = rep.find("balance-theta-beta").unwrap();
        assert!(b.detail.contains("0.5714"), "{}", b.detail);
        let i = rep.find("integrability-exponent").unwrap();
        assert!(i.detail.contains("= 2"), "{}", i.detail);
    }

    #[test]
    fn theta_alpha_perturbation_fails_exactly_one_clause() {
        let rates = worked_rates(0.3, 0.5);
        let k = FragKernel::power(0.0).unwrap();
        let rep = certify(&rates, &k, worked_params());
        assert_eq!(rep.failures(), vec!["balance-theta-alpha"], "{rep}");
    }

    #[test]
    fn theta_beta_perturbation_fails_exactly_one_clause() {
        let rates = worked_rates(0.2, 0.6);
        let k = FragKernel::power(0.0).unwrap();
        let rep = certify(&rates, &k, worked_params());
        assert_eq!(rep.failures(), vec!["balance-theta-beta"], "{rep}");
    }

    #[test]
    fn small_p_fails_the_integrability_clause() {
        let rates = worked_rates(0.2, 0.5);
        let k = FragKernel::power(0.0).unwrap();
        let mut params = worked_params();
        params.p = 1.5;
        let rep = certify(&rates, &k, params);
        assert_eq!(rep.failures(), vec!["integrability-exponent"], "{rep}");
    }

    #[test]
    fn decreasing_envelope_fails_monotonicity() {
        let mut rates = worked_rates(0.2, 0.5);
        rates.beta_floor = Arc::new(|xi: f64| (1.0 + xi).powf(-0.5));
        let k = FragKernel::power(0.0).unwrap();
        let rep = certify(&rates, &k, worked_params());
        assert!(rep.failures().contains(&"rate-monotonicity"), "{rep}");
    }

    #[test]
    fn inflated_kernel_fails_conservativity_only() {
        let rates = worked_rates(0.2, 0.5);
        let sizes = SizeGrid::new(1e-3, 2e3, 129).unwrap();
        let mut t = TabulatedKernel::sample(
            &sizes,
            |xi, eta| if xi <= eta { 2.0 / eta } else { 0.0 },
            true,
        )
        .unwrap();
        t.scale(1.1);
        let k = FragKernel::Tabulated(Arc::new(t));
        let rep = certify(&rates, &k, worked_params());
        assert_eq!(rep.failures(), vec!["frag-conservative"], "{rep}");
    }

    #[test]
    fn disabled_operators_are_skipped_not_failed() {
        let rates = RateModel::constant(1.0, 1.0);
        let sizes = SizeGrid::new(0.01, 100.0, 32).unwrap();
        let inputs = CertifyInputs {
            rates: &rates,
            frag: None,
            coag: None,
            sizes: &sizes,
            space: None,
            params: AnalysisParams { dim: 1, p: 2.0, ell: 1.0, delta: 0.5, rho: 0.5, c_kappa: 1.0 },
            separable: None,
        };
        let rep = check_hypotheses(&inputs, None).unwrap();
        assert!(rep.passed(), "{rep}");
        for id in ["frag-conservative", "coag-symmetric", "integrability-exponent"] {
            assert_eq!(rep.find(id).unwrap().status, ClauseStatus::Skipped, "{id}");
        }
        assert_eq!(rep.find("diffusion-rate-positive").unwrap().status, ClauseStatus::Pass);
    }

    #[test]
    fn separable_constants_are_verified_not_trusted() {
        let rates = worked_rates(0.2, 0.5);
        let sizes = SizeGrid::new(0.01, 100.0, 48).unwrap();
        let k = FragKernel::Separable { h0: Arc::new(|_| 1.0) };
        let report =
            moments::moment_report(&k, &moments::DEFAULT_ELL_GRID, &moments::DEFAULT_ETA_SAMPLES)
                .unwrap();
        let coag = CoagKernel::BetaDominated { c: 0.05, rho: 0.5 };
        let mut inputs = CertifyInputs {
            rates: &rates,
            frag: Some(&k),
            coag: Some(&coag),
            sizes: &sizes,
            space: None,
            params: worked_params(),
            separable: Some(SeparableConstants { c1: 2.5, c2: 1.2, p_h0: 2.0 }),
        };
        let rep = check_hypotheses(&inputs, Some(&report)).unwrap();
        assert_eq!(rep.find("separable-admissible").unwrap().status, ClauseStatus::Pass, "{rep}");
        // For h0 = 1 the doubling inequality needs c1 >= 2; c1 = 1.5 must fail.
        inputs.separable = Some(SeparableConstants { c1: 1.5, c2: 1.2, p_h0: 2.0 });
        let rep = check_hypotheses(&inputs, Some(&report)).unwrap();
        assert_eq!(rep.find("separable-admissible").unwrap().status, ClauseStatus::Fail, "{rep}");
        // Missing constants cannot silently pass.
        inputs.separable = None;
        let rep = check_hypotheses(&inputs, Some(&report)).unwrap();
        assert_eq!(rep.find("separable-admissible").unwrap().status, ClauseStatus::Fail);
    }

    #[test]
    fn kappa_delta_scans_the_grid() {
        let sizes = SizeGrid::new(0.01, 100.0, 64).unwrap();
        let flat = RateModel::constant(1.0, 1.0);
        assert_eq!(kappa_delta(&flat, 0.3, &sizes), 1.0);
        let rates = worked_rates(0.2, 0.5);
        let got = kappa_delta(&rates, 0.5, &sizes);
        let direct = sizes
            .nodes()
            .iter()
            .map(|&xi| (rates.alpha)(xi).powf(0.5) * (rates.beta_floor)(xi).powf(0.5))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(got, direct);
        assert!(got > 0.0);
    }

    #[test]
    fn kappa_delta_decays_past_the_balance_point_as_the_grid_grows() {
        let rates = worked_rates(0.2, 0.5);
        let dstar = max_delta(0.2, 0.5, 1);
        let delta = dstar + 0.3;
        let small = kappa_delta(&rates, delta, &SizeGrid::new(0.01, 1e2, 64).unwrap());
        let large = kappa_delta(&rates, delta, &SizeGrid::new(0.01, 1e6, 64).unwrap());
        assert!(large < small * 0.1, "{large} vs {small}");
    }

    #[test]
    fn max_delta_closed_forms() {
        assert!((max_delta(0.3, 0.3, 2) - 0.5).abs() <= 1e-15);
        assert!((max_delta(0.2, 0.5, 1) - 0.5 / 0.9).abs() <= 1e-12);
        assert!(max_delta(1e-9, 0.5, 1) > 0.999999);
    }

    #[test]
    fn condition_number_of_small_matrices() {
        assert_eq!(condition_number(&[vec![2.0]]).unwrap(), 1.0);
        let k = condition_number(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((k - 3.0).abs() <= 1e-12);
        assert!(condition_number(&[vec![2.0, 1.0], vec![0.5, 2.0]]).is_err());
        assert!(condition_number(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(condition_number(&vec![vec![1.0; 3]; 3]).is_err());
    }

    #[test]
    fn lowering_theta_alpha_never_flips_pass_to_fail() {
        let k = FragKernel::power(0.0).unwrap();
        let mut prev_pass = false;
        for ta in [0.3, 0.24, 0.2, 0.1, 0.05] {
            let rep = certify(&worked_rates(ta, 0.5), &k, worked_params());
            let pass = rep.find("balance-theta-alpha").unwrap().status == ClauseStatus::Pass;
            assert!(!prev_pass || pass, "pass flipped to fail as theta_alpha decreased");
            prev_pass = pass;
        }
    }
}
