//! Trajectory diagnostics: sampled weighted norms, the accounted-mass
//! identity, positivity tracking, exponential growth fits, and the two
//! analytic inequalities every sampled state must satisfy (norm
//! interpolation and the coagulation bilinear bound).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::coagulation::CoagulationOp;
use crate::error::{FragkinError, Result};
use crate::grid::{weighted_seminorm, Field};
use crate::kernels::RateModel;

/// One tracked norm X^p_{ell,s}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormSpec {
    pub p: f64,
    pub ell: f64,
    pub s: f64,
}

impl NormSpec {
    pub fn new(p: f64, ell: f64, s: f64) -> Self {
        NormSpec { p, ell, s }
    }

    /// Canonical series key, stable across runs for byte-identical output.
    pub fn key(&self) -> String {
        format!("x_p{}_l{}_s{}", self.p, self.ell, self.s)
    }

    /// Inverse of `key`, for reconstructing specs from stored series.
    pub fn from_key(key: &str) -> Option<NormSpec> {
        let rest = key.strip_prefix("x_p")?;
        let (p, rest) = rest.split_once("_l")?;
        let (ell, s) = rest.split_once("_s")?;
        Some(NormSpec::new(p.parse().ok()?, ell.parse().ok()?, s.parse().ok()?))
    }
}

/// Cumulative conservation ledgers at a sample time. All entries are
/// domain totals (cell volume folded in).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Ledgers {
    /// Mass that left through the small-size end via fragmentation.
    pub underflow_mass: f64,
    /// Mass that left through the large-size end via coagulation.
    pub overflow_mass: f64,
    /// Particle count absorbed by overflowing coagulation events.
    pub overflow_number: f64,
}

impl Ledgers {
    pub fn total_mass(&self) -> f64 {
        self.underflow_mass + self.overflow_mass
    }

    /// Add dt * rate, treating the other value as an instantaneous rate.
    pub fn accumulate(&mut self, rate: &Ledgers, dt: f64) {
        self.underflow_mass += dt * rate.underflow_mass;
        self.overflow_mass += dt * rate.overflow_mass;
        self.overflow_number += dt * rate.overflow_number;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsSeries {
    pub specs: Vec<NormSpec>,
    pub times: Vec<f64>,
    /// Size-mass norm X^1_xi of the field.
    pub mass: Vec<f64>,
    /// Unweighted X^1 norm (particle count).
    pub number: Vec<f64>,
    pub norms: BTreeMap<String, Vec<f64>>,
    pub positivity_min: Vec<f64>,
    pub underflow_mass: Vec<f64>,
    pub overflow_mass: Vec<f64>,
    pub overflow_number: Vec<f64>,
}

impl DiagnosticsSeries {
    pub fn new(specs: Vec<NormSpec>) -> Self {
        let mut norms = BTreeMap::new();
        let mut unique = Vec::new();
        for s in specs {
            // Duplicate keys would push twice per sample; keep the first.
            if norms.insert(s.key(), Vec::new()).is_none() {
                unique.push(s);
            }
        }
        DiagnosticsSeries {
            specs: unique,
            times: Vec::new(),
            mass: Vec::new(),
            number: Vec::new(),
            norms,
            positivity_min: Vec::new(),
            underflow_mass: Vec::new(),
            overflow_mass: Vec::new(),
            overflow_number: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Append one sample. `beta_floor` supplies envelope values for any
    /// spec with s != 0.
    pub fn sample(
        &mut self,
        t: f64,
        u: &Field,
        ledgers: &Ledgers,
        beta_floor: Option<&[f64]>,
    ) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(FragkinError::Numerical(format!(
                    "sample times must increase: {t} after {last}"
                )));
            }
        }
        // Evaluate everything before mutating so a failed norm cannot leave
        // ragged series behind.
        let mut values = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            values.push(weighted_seminorm(u, spec.p, spec.ell, spec.s, beta_floor)?);
        }
        for (spec, v) in self.specs.iter().zip(values) {
            self.norms.get_mut(&spec.key()).expect("spec key present").push(v);
        }
        self.times.push(t);
        self.mass.push(u.total_mass());
        self.number.push(u.total_number());
        self.positivity_min.push(u.min_value());
        self.underflow_mass.push(ledgers.underflow_mass);
        self.overflow_mass.push(ledgers.overflow_mass);
        self.overflow_number.push(ledgers.overflow_number);
        Ok(())
    }

    /// Field mass plus ledger mass at sample index.
    pub fn accounted_mass(&self, idx: usize) -> f64 {
        self.mass[idx] + self.underflow_mass[idx] + self.overflow_mass[idx]
    }

    /// Largest relative drift of the accounted mass from its initial value.
    pub fn max_accounted_drift(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let m0 = self.accounted_mass(0);
        let scale = m0.abs().max(f64::MIN_POSITIVE);
        (0..self.len())
            .map(|i| (self.accounted_mass(i) - m0).abs() / scale)
            .fold(0.0, f64::max)
    }

    pub fn series(&self, spec: &NormSpec) -> Option<&[f64]> {
        self.norms.get(&spec.key()).map(|v| v.as_slice())
    }
}

/// Least-squares exponential rate of `values` over the final two-thirds of
/// the samples (early transients excluded). Returns 0 for series that are
/// too short or not strictly positive on the window.
pub fn fitted_rate(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len().min(values.len());
    if n < 3 {
        return 0.0;
    }
    let start = n / 3;
    let window: Vec<(f64, f64)> = (start..n)
        .filter(|&i| values[i] > 0.0)
        .map(|i| (times[i], values[i].ln()))
        .collect();
    if window.len() < 2 {
        return 0.0;
    }
    let k = window.len() as f64;
    let sx: f64 = window.iter().map(|p| p.0).sum();
    let sy: f64 = window.iter().map(|p| p.1).sum();
    let sxx: f64 = window.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = window.iter().map(|p| p.0 * p.1).sum();
    let denom = k * sxx - sx * sx;
    if denom <= 0.0 {
        return 0.0;
    }
    (k * sxy - sx * sy) / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    BoundedTrend,
    Growing,
    BlowUpAbort,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::BoundedTrend => write!(f, "bounded-trend"),
            Verdict::Growing => write!(f, "growing"),
            Verdict::BlowUpAbort => write!(f, "blow-up-abort"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NormVerdict {
    pub key: String,
    pub initial: f64,
    pub max_over_initial: f64,
    /// Fitted exponential rate over the final two-thirds of the series.
    pub rate: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalReport {
    pub verdicts: Vec<NormVerdict>,
    /// Whether the hypothesis certificate passed, when one was evaluated.
    pub certificate_passed: Option<bool>,
    /// Abort time if the run tripped the blow-up threshold.
    pub aborted_at: Option<f64>,
}

impl GlobalReport {
    pub fn verdict_for(&self, spec: &NormSpec) -> Option<&NormVerdict> {
        let key = spec.key();
        self.verdicts.iter().find(|v| v.key == key)
    }
}

impl std::fmt::Display for GlobalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.certificate_passed {
            Some(true) => writeln!(f, "hypothesis certificate: PASS")?,
            Some(false) => writeln!(f, "hypothesis certificate: FAIL")?,
            None => writeln!(f, "hypothesis certificate: not evaluated")?,
        }
        if let Some(t) = self.aborted_at {
            writeln!(f, "run aborted at t={t:.6}")?;
        }
        for v in &self.verdicts {
            writeln!(
                f,
                "{:24} max/initial {:>12.6e} rate {:>+10.4e} {}",
                v.key, v.max_over_initial, v.rate, v.verdict
            )?;
        }
        Ok(())
    }
}

/// A norm counts as growing only when both its fitted rate and its overall
/// excursion are material; tiny rates on a flat series stay bounded-trend.
pub const GROWTH_RATE_TOL: f64 = 0.05;
pub const GROWTH_RATIO_TOL: f64 = 1.2;

pub fn boundedness_report(
    series: &DiagnosticsSeries,
    aborted_at: Option<f64>,
    certificate_passed: Option<bool>,
) -> GlobalReport {
    let mut verdicts = Vec::new();
    let mut push = |key: String, values: &[f64]| {
        if values.is_empty() {
            return;
        }
        let initial = values[0];
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ratio = if initial.abs() > 0.0 { max / initial } else { 1.0 };
        let rate = fitted_rate(&series.times, values);
        let verdict = if aborted_at.is_some() {
            Verdict::BlowUpAbort
        } else if rate > GROWTH_RATE_TOL && ratio > GROWTH_RATIO_TOL {
            Verdict::Growing
        } else {
            Verdict::BoundedTrend
        };
        verdicts.push(NormVerdict { key, initial, max_over_initial: ratio, rate, verdict });
    };
    push("mass".into(), &series.mass);
    push("number".into(), &series.number);
    for spec in &series.specs {
        if let Some(values) = series.series(spec) {
            push(spec.key(), values);
        }
    }
    GlobalReport { verdicts, certificate_passed, aborted_at }
}

/// Interpolation consistency of the stored samples:
/// |u|_{X^2_r} <= |u|_{X^1_r}^(1-p'/2) |u|_{X^p_r}^(p'/2) with p' the
/// conjugate exponent. Returns the worst relative excess of the left side
/// over the right (negative when the inequality holds strictly).
pub fn interpolation_residual(
    series: &DiagnosticsSeries,
    ell: f64,
    s: f64,
    p: f64,
) -> Result<f64> {
    if p <= 2.0 {
        return Err(FragkinError::Config(format!("interpolation check needs p > 2, got {p}")));
    }
    let get = |pp: f64| {
        series.series(&NormSpec::new(pp, ell, s)).ok_or_else(|| {
            FragkinError::Config(format!(
                "interpolation check needs the tracked norm p={pp}, ell={ell}, s={s}"
            ))
        })
    };
    let x1 = get(1.0)?;
    let x2 = get(2.0)?;
    let xp = get(p)?;
    let pprime = p / (p - 1.0);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..series.len() {
        let bound = x1[i].powf(1.0 - pprime / 2.0) * xp[i].powf(pprime / 2.0);
        if bound > 0.0 {
            worst = worst.max((x2[i] - bound) / bound);
        }
    }
    if worst == f64::NEG_INFINITY {
        return Err(FragkinError::Numerical("interpolation check saw only zero samples".into()));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoagBoundReport {
    pub lhs: f64,
    pub rhs: f64,
}

impl CoagBoundReport {
    pub fn holds(&self, rel_slack: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + rel_slack)
    }
}

/// Bilinear coagulation bound at one state: the X^p_ell norm of C(u,u)
/// against c_kappa (1+2^ell) [ |u|_{2p,ell,rho} |u|_{2p,0,0}
/// + |u|_{2p,ell,0} |u|_{2p,0,rho} ]. Needs ell >= 1 (mass splitting across
/// a merge is only monotone for superlinear weights).
pub fn coag_bound_check(
    u: &Field,
    op: &CoagulationOp,
    rates: &RateModel,
    c_kappa: f64,
    p: f64,
    ell: f64,
    rho: f64,
) -> Result<CoagBoundReport> {
    if ell < 1.0 {
        return Err(FragkinError::Config(format!(
            "coagulation bound check needs ell >= 1, got {ell}"
        )));
    }
    if !(c_kappa > 0.0) {
        return Err(FragkinError::Config(format!("need c_kappa > 0, got {c_kappa}")));
    }
    let (rate, _) = op.apply(u)?;
    let lhs = weighted_seminorm(&rate, p, ell, 0.0, None)?;
    let beta = rates.beta_floor_values(u.sizes());
    let a1 = weighted_seminorm(u, 2.0 * p, ell, rho, Some(&beta))?;
    let a2 = weighted_seminorm(u, 2.0 * p, 0.0, 0.0, None)?;
    let b1 = weighted_seminorm(u, 2.0 * p, ell, 0.0, None)?;
    let b2 = weighted_seminorm(u, 2.0 * p, 0.0, rho, Some(&beta))?;
    let rhs = c_kappa * (1.0 + (2.0_f64).powf(ell)) * (a1 * a2 + b1 * b2);
    Ok(CoagBoundReport { lhs, rhs })
}
