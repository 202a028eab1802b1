//! Run configuration: a TOML document with `[section]` headers and
//! `key = value` lines. Unknown keys are hard errors, every section has
//! documented defaults, and a parsed configuration serializes back to a
//! semantically identical document. `build` turns a validated document
//! into grids and model operators.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificate::{AnalysisParams, CertifyInputs};
use crate::coagulation::CoagulationOp;
use crate::diagnostics::NormSpec;
use crate::error::{FragkinError, Result};
use crate::fragmentation::FragmentationOp;
use crate::grid::{SizeGrid, SpaceGrid};
use crate::integrator::{default_norm_specs, Models, PositivityPolicy};
use crate::kernels::{CoagKernel, FragKernel, RateModel, TabulatedKernel};

fn default_extent() -> f64 {
    2.0 * std::f64::consts::PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceSection {
    pub dim: usize,
    pub extent: f64,
    pub cells: usize,
}

impl Default for SpaceSection {
    fn default() -> Self {
        SpaceSection { dim: 1, extent: default_extent(), cells: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SizesSection {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for SizesSection {
    fn default() -> Self {
        SizesSection { min: 1e-2, max: 1e2, count: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    Power,
    Constant,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub mode: RateMode,
    /// Power mode: diffusivity decay exponent (alpha ~ (1+xi)^(-2 theta_alpha / d)).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_alpha: Option<f64>,
    /// Power mode: rate growth exponent (beta ~ (1+xi)^theta_beta).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_beta: Option<f64>,
    pub alpha_scale: f64,
    pub beta_scale: f64,
    /// Constant mode values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Tabulated mode: samples interpolated log-linearly in size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_table: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_table: Option<Vec<f64>>,
    /// Cosine spatial modulation amplitude (0 disables).
    pub modulation_amplitude: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            mode: RateMode::Power,
            theta_alpha: Some(0.2),
            theta_beta: Some(0.5),
            alpha_scale: 1.0,
            beta_scale: 1.0,
            alpha: None,
            beta: None,
            xi: None,
            alpha_table: None,
            beta_table: None,
            modulation_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FragKernelKind {
    Power,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FragSection {
    pub kernel: FragKernelKind,
    /// Power-law daughter exponent in (-1, 0].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl Default for FragSection {
    fn default() -> Self {
        FragSection { kernel: FragKernelKind::Power, nu: Some(0.0), path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoagKernelKind {
    Constant,
    BetaDominated,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoagSection {
    pub kernel: CoagKernelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    /// Beta-dominated prefactor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Kernel exponent; defaults to the analysis exponent rho.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Claimed domination constant for certification.
    pub c_kappa: f64,
}

impl Default for CoagSection {
    fn default() -> Self {
        CoagSection {
            kernel: CoagKernelKind::BetaDominated,
            kappa0: None,
            c: Some(0.05),
            rho: None,
            path: None,
            c_kappa: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Strang,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
    pub t_end: f64,
    pub safety: f64,
    pub mode: SolverMode,
    pub picard_kmax: usize,
    pub picard_tol: f64,
    pub picard_nodes: usize,
    pub positivity: PositivityPolicy,
    pub output_every: usize,
    pub blow_up_factor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            dt: 1e-3,
            t_end: 1.0,
            safety: 0.5,
            mode: SolverMode::Strang,
            picard_kmax: 12,
            picard_tol: 1e-8,
            picard_nodes: 8,
            positivity: PositivityPolicy::Guard,
            output_every: 10,
            blow_up_factor: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub p: f64,
    pub ell: f64,
    pub delta: f64,
    pub rho: f64,
    /// Extra tracked norms as (p, ell, s) triples.
    pub extra_norms: Vec<(f64, f64, f64)>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { p: 4.0, ell: 1.0, delta: 0.5, rho: 0.5, extra_norms: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceShape {
    Uniform,
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeShape {
    Exponential,
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub space_shape: SpaceShape,
    /// Bump width; ignored for uniform data.
    pub width: f64,
    /// Bump center; defaults to the domain center.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub size_shape: SizeShape,
    pub xi_mean: f64,
    /// Lognormal spread; ignored for exponential profiles.
    pub sigma: f64,
    pub amplitude: f64,
    /// Multiplicative noise amplitude in [0, 1); 0 disables.
    pub noise: f64,
    /// Resume from this checkpoint instead of building a profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            space_shape: SpaceShape::Bump,
            width: 0.5,
            center: None,
            size_shape: SizeShape::Exponential,
            xi_mean: 1.0,
            sigma: 0.5,
            amplitude: 1.0,
            noise: 0.0,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfiguration {
    pub space: SpaceSection,
    pub sizes: SizesSection,
    pub rates: RatesSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fragmentation: Option<FragSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coagulation: Option<CoagSection>,
    pub solver: SolverSection,
    pub analysis: AnalysisSection,
    pub initial: InitialSection,
}

/// Everything a run needs, built from a validated configuration.
pub struct Setup {
    pub space: Arc<SpaceGrid>,
    pub sizes: Arc<SizeGrid>,
    pub models: Models,
    pub specs: Vec<NormSpec>,
}

impl RunConfiguration {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfiguration = toml::from_str(text)
            .map_err(|e| FragkinError::Config(format!("configuration parse failed: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| FragkinError::Config(format!("configuration serialize failed: {e}")))
    }

    /// Hex digest of the canonical serialized form; stamped into emitted
    /// series headers so outputs are traceable to their configuration.
    pub fn sha256_hex(&self) -> Result<String> {
        let text = self.to_text()?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        let digest = h.finalize();
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.analysis;
        if !(a.rho > 0.0 && a.rho < 1.0) {
            return Err(FragkinError::Config(format!(
                "analysis.rho must lie in (0, 1), got {}",
                a.rho
            )));
        }
        if !(a.delta > 0.0 && a.delta < 1.0) {
            return Err(FragkinError::Config(format!(
                "analysis.delta must lie in (0, 1), got {}",
                a.delta
            )));
        }
        if !(a.p >= 1.0 && a.p.is_finite()) {
            return Err(FragkinError::Config(format!("analysis.p must be >= 1, got {}", a.p)));
        }
        if !(a.ell >= 0.0) {
            return Err(FragkinError::Config(format!("analysis.ell must be >= 0, got {}", a.ell)));
        }
        let r = &self.rates;
        match r.mode {
            RateMode::Power => {
                if r.theta_alpha.is_none() || r.theta_beta.is_none() {
                    return Err(FragkinError::Config(
                        "power rates need theta_alpha and theta_beta".into(),
                    ));
                }
            }
            RateMode::Constant => {
                if r.alpha.is_none() || r.beta.is_none() {
                    return Err(FragkinError::Config(
                        "constant rates need alpha and beta".into(),
                    ));
                }
            }
            RateMode::Tabulated => {
                let (Some(xi), Some(at), Some(bt)) = (&r.xi, &r.alpha_table, &r.beta_table)
                else {
                    return Err(FragkinError::Config(
                        "tabulated rates need xi, alpha_table and beta_table".into(),
                    ));
                };
                if xi.len() < 2 || xi.len() != at.len() || xi.len() != bt.len() {
                    return Err(FragkinError::Config(
                        "rate tables must share a common length >= 2".into(),
                    ));
                }
                if !xi.windows(2).all(|w| w[0] > 0.0 && w[0] < w[1]) {
                    return Err(FragkinError::Config(
                        "rate table sizes must be positive and ascending".into(),
                    ));
                }
                if at.iter().chain(bt).any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(FragkinError::Config(
                        "rate table values must be finite and >= 0".into(),
                    ));
                }
            }
        }
        if !(0.0..1.0).contains(&r.modulation_amplitude) {
            return Err(FragkinError::Config(format!(
                "rates.modulation_amplitude must lie in [0, 1), got {}",
                r.modulation_amplitude
            )));
        }
        if let Some(f) = &self.fragmentation {
            match f.kernel {
                FragKernelKind::Power => {
                    let nu = f.nu.ok_or_else(|| {
                        FragkinError::Config("power fragmentation kernel needs nu".into())
                    })?;
                    if !(-1.0 < nu && nu <= 0.0) {
                        return Err(FragkinError::Config(format!(
                            "fragmentation.nu must lie in (-1, 0], got {nu}"
                        )));
                    }
                }
                FragKernelKind::Table => {
                    if f.path.is_none() {
                        return Err(FragkinError::Config(
                            "table fragmentation kernel needs a path".into(),
                        ));
                    }
                }
            }
        }
        if let Some(c) = &self.coagulation {
            match c.kernel {
                CoagKernelKind::Constant => {
                    if c.kappa0.is_none() {
                        return Err(FragkinError::Config(
                            "constant coagulation kernel needs kappa0".into(),
                        ));
                    }
                }
                CoagKernelKind::BetaDominated => {
                    if c.c.is_none() {
                        return Err(FragkinError::Config(
                            "beta-dominated coagulation kernel needs c".into(),
                        ));
                    }
                }
                CoagKernelKind::Table => {
                    if c.path.is_none() {
                        return Err(FragkinError::Config(
                            "table coagulation kernel needs a path".into(),
                        ));
                    }
                }
            }
            let rho = c.rho.unwrap_or(a.rho);
            if !(rho > 0.0 && rho < 1.0) {
                return Err(FragkinError::Config(format!(
                    "coagulation.rho must lie in (0, 1), got {rho}"
                )));
            }
            if !(c.c_kappa > 0.0) {
                return Err(FragkinError::Config(format!(
                    "coagulation.c_kappa must be > 0, got {}",
                    c.c_kappa
                )));
            }
        }
        let s = &self.solver;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(FragkinError::Config(format!("solver.dt must be > 0, got {}", s.dt)));
        }
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(FragkinError::Config(format!(
                "solver.t_end must be > 0, got {}",
                s.t_end
            )));
        }
        if !(s.safety > 0.0 && s.safety <= 1.0) {
            return Err(FragkinError::Config(format!(
                "solver.safety must lie in (0, 1], got {}",
                s.safety
            )));
        }
        if s.output_every == 0 {
            return Err(FragkinError::Config("solver.output_every must be >= 1".into()));
        }
        if s.picard_nodes < 8 {
            return Err(FragkinError::Config(format!(
                "solver.picard_nodes must be >= 8, got {}",
                s.picard_nodes
            )));
        }
        let init = &self.initial;
        if !(init.width > 0.0) || !(init.xi_mean > 0.0) || !(init.sigma > 0.0) {
            return Err(FragkinError::Config(
                "initial widths and means must be positive".into(),
            ));
        }
        if !(init.amplitude >= 0.0) || !(0.0..1.0).contains(&init.noise) {
            return Err(FragkinError::Config(
                "initial.amplitude must be >= 0 and initial.noise in [0, 1)".into(),
            ));
        }
        if let Some(c) = &init.center {
            if c.len() != self.space.dim {
                return Err(FragkinError::Config(format!(
                    "initial.center needs {} coordinates, got {}",
                    self.space.dim,
                    c.len()
                )));
            }
        }
        Ok(())
    }

    pub fn rate_model(&self) -> Result<RateModel> {
        let r = &self.rates;
        let mut model = match r.mode {
            RateMode::Power => RateModel::power(
                r.theta_alpha.expect("validated"),
                r.theta_beta.expect("validated"),
                self.space.dim,
                r.alpha_scale,
                r.beta_scale,
            ),
            RateMode::Constant => {
                RateModel::constant(r.alpha.expect("validated"), r.beta.expect("validated"))
            }
            RateMode::Tabulated => {
                let xi = Arc::new(r.xi.clone().expect("validated"));
                let at = Arc::new(r.alpha_table.clone().expect("validated"));
                let bt = Arc::new(r.beta_table.clone().expect("validated"));
                let (xa, aa) = (Arc::clone(&xi), Arc::clone(&at));
                let (xb, bb) = (Arc::clone(&xi), Arc::clone(&bt));
                let mut m = RateModel::constant(0.0, 0.0);
                m.alpha = Arc::new(move |x| interp_log(&xa, &aa, x));
                m.beta_floor = Arc::new(move |x| interp_log(&xb, &bb, x));
                m.power = None;
                m
            }
        };
        if r.modulation_amplitude > 0.0 {
            model = model.with_cosine_modulation(r.modulation_amplitude, self.space.extent);
        }
        Ok(model)
    }

    pub fn frag_kernel(&self) -> Result<Option<FragKernel>> {
        let Some(f) = &self.fragmentation else { return Ok(None) };
        let k = match f.kernel {
            FragKernelKind::Power => FragKernel::power(f.nu.expect("validated"))?,
            FragKernelKind::Table => {
                let path = f.path.as_ref().expect("validated");
                let text = std::fs::read_to_string(path)?;
                FragKernel::Tabulated(Arc::new(TabulatedKernel::parse(&text, true)?))
            }
        };
        Ok(Some(k))
    }

    pub fn coag_kernel(&self) -> Result<Option<CoagKernel>> {
        let Some(c) = &self.coagulation else { return Ok(None) };
        let k = match c.kernel {
            CoagKernelKind::Constant => {
                CoagKernel::Constant { kappa0: c.kappa0.expect("validated") }
            }
            CoagKernelKind::BetaDominated => CoagKernel::BetaDominated {
                c: c.c.expect("validated"),
                rho: c.rho.unwrap_or(self.analysis.rho),
            },
            CoagKernelKind::Table => {
                let path = c.path.as_ref().expect("validated");
                let text = std::fs::read_to_string(path)?;
                CoagKernel::Tabulated(Arc::new(TabulatedKernel::parse(&text, false)?))
            }
        };
        Ok(Some(k))
    }

    pub fn analysis_params(&self) -> AnalysisParams {
        AnalysisParams {
            dim: self.space.dim,
            p: self.analysis.p,
            ell: self.analysis.ell,
            delta: self.analysis.delta,
            rho: self.analysis.rho,
            c_kappa: self.coagulation.as_ref().map(|c| c.c_kappa).unwrap_or(1.0),
        }
    }

    pub fn norm_specs(&self) -> Vec<NormSpec> {
        let mut specs =
            default_norm_specs(self.analysis.p, self.analysis.ell, self.analysis.rho);
        for &(p, ell, s) in &self.analysis.extra_norms {
            specs.push(NormSpec::new(p, ell, s));
        }
        specs
    }

    pub fn build(&self) -> Result<Setup> {
        self.validate()?;
        let space = SpaceGrid::new(self.space.dim, self.space.extent, self.space.cells)?;
        let sizes = SizeGrid::new(self.sizes.min, self.sizes.max, self.sizes.count)?;
        let rates = self.rate_model()?;
        let frag = match self.frag_kernel()? {
            Some(k) => Some(FragmentationOp::new(&k, &sizes)?),
            None => None,
        };
        let coag = match self.coag_kernel()? {
            Some(k) => Some(CoagulationOp::new(&k, &rates, &sizes)?),
            None => None,
        };
        Ok(Setup {
            space,
            sizes,
            models: Models { rates, frag, coag },
            specs: self.norm_specs(),
        })
    }

    /// Certification view of this configuration. The kernels must outlive
    /// the returned inputs, so the caller holds them.
    pub fn certify_inputs<'a>(
        &self,
        rates: &'a RateModel,
        frag: Option<&'a FragKernel>,
        coag: Option<&'a CoagKernel>,
        sizes: &'a SizeGrid,
        space: Option<&'a SpaceGrid>,
    ) -> CertifyInputs<'a> {
        CertifyInputs {
            rates,
            frag,
            coag,
            sizes,
            space,
            params: self.analysis_params(),
            separable: None,
        }
    }
}

/// Piecewise log-linear interpolation with constant extension beyond the
/// table ends.
fn interp_log(xi: &[f64], values: &[f64], x: f64) -> f64 {
    let n = xi.len();
    if x <= xi[0] {
        return values[0];
    }
    if x >= xi[n - 1] {
        return values[n - 1];
    }
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xi[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = (x / xi[lo]).ln() / (xi[hi] / xi[lo]).ln();
    values[lo] + t * (values[hi] - values[lo])
}

pub const PRESET_NAMES: [&str; 5] = [
    "pure-diffusion",
    "pure-fragmentation-binary",
    "constant-kernel-coagulation",
    "full-power-rate-global",
    "full-power-rate-violating",
];

pub fn preset(name: &str) -> Result<RunConfiguration> {
    let text = preset_text(name)?;
    RunConfiguration::parse(text)
}

pub fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "pure-diffusion" => Ok(include_str!("presets/pure-diffusion.toml")),
        "pure-fragmentation-binary" => {
            Ok(include_str!("presets/pure-fragmentation-binary.toml"))
        }
        "constant-kernel-coagulation" => {
            Ok(include_str!("presets/constant-kernel-coagulation.toml"))
        }
        "full-power-rate-global" => Ok(include_str!("presets/full-power-rate-global.toml")),
        "full-power-rate-violating" => {
            Ok(include_str!("presets/full-power-rate-violating.toml"))
        }
        other => Err(FragkinError::Config(format!(
            "unknown preset {other:?}; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}
