//! Rate models (diffusivity alpha, fragmentation-rate envelope beta_floor,
//! optional spatial modulation) and the fragmentation / coagulation kernels.

use std::fmt;
use std::sync::Arc;

use crate::error::{FragkinError, Result};
use crate::grid::SizeGrid;
use crate::logquad;

pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ModulationFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Size-dependent coefficients of the equation. `alpha` is the scalar
/// diffusivity, `beta_floor` the fragmentation-rate envelope; the full rate
/// is beta(x, xi) = beta_floor(xi) * modulation(x, xi) with modulation
/// confined to [1, c_beta].
#[derive(Clone)]
pub struct RateModel {
    pub alpha: RateFn,
    pub beta_floor: RateFn,
    pub modulation: Option<ModulationFn>,
    pub c_beta: f64,
    pub power: Option<PowerRates>,
}

/// Declared power-law structure: alpha ~ (1+xi)^(-2 theta_alpha / d),
/// beta_floor ~ (1+xi)^(theta_beta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRates {
    pub theta_alpha: f64,
    pub theta_beta: f64,
}

impl fmt::Debug for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateModel")
            .field("c_beta", &self.c_beta)
            .field("power", &self.power)
            .field("modulated", &self.modulation.is_some())
            .finish()
    }
}

impl RateModel {
    pub fn constant(alpha0: f64, beta0: f64) -> Self {
        RateModel {
            alpha: Arc::new(move |_| alpha0),
            beta_floor: Arc::new(move |_| beta0),
            modulation: None,
            c_beta: 1.0,
            power: None,
        }
    }

    /// Exact power-law rates with unit envelope constants:
    /// alpha(xi) = alpha_scale (1+xi)^(-2 theta_alpha / d),
    /// beta_floor(xi) = beta_scale (1+xi)^(theta_beta).
    pub fn power(
        theta_alpha: f64,
        theta_beta: f64,
        dim: usize,
        alpha_scale: f64,
        beta_scale: f64,
    ) -> Self {
        let ea = -2.0 * theta_alpha / dim as f64;
        RateModel {
            alpha: Arc::new(move |xi| alpha_scale * (1.0 + xi).powf(ea)),
            beta_floor: Arc::new(move |xi| beta_scale * (1.0 + xi).powf(theta_beta)),
            modulation: None,
            c_beta: 1.0,
            power: Some(PowerRates { theta_alpha, theta_beta }),
        }
    }

    /// Cosine modulation along the first axis: factor in [1, 1+amplitude].
    pub fn with_cosine_modulation(mut self, amplitude: f64, extent: f64) -> Self {
        let k = 2.0 * std::f64::consts::PI / extent;
        self.modulation = Some(Arc::new(move |x: &[f64], _xi| {
            1.0 + amplitude * 0.5 * (1.0 + (k * x[0]).cos())
        }));
        self.c_beta = 1.0 + amplitude;
        self
    }

    pub fn alpha_values(&self, sizes: &SizeGrid) -> Vec<f64> {
        sizes.nodes().iter().map(|&x| (self.alpha)(x)).collect()
    }

    pub fn beta_floor_values(&self, sizes: &SizeGrid) -> Vec<f64> {
        sizes.nodes().iter().map(|&x| (self.beta_floor)(x)).collect()
    }

    pub fn modulation_at(&self, x: &[f64], xi: f64) -> f64 {
        match &self.modulation {
            Some(f) => f(x, xi),
            None => 1.0,
        }
    }
}

/// Daughter-size distribution gamma(xi, eta) of a parent of size eta;
/// zero for xi > eta. A mass-conserving kernel satisfies
/// integral_0^eta xi gamma(xi, eta) dxi = eta.
#[derive(Clone)]
pub enum FragKernel {
    /// gamma = (nu+2)/eta (xi/eta)^nu, -1 < nu <= 0; conservative by
    /// construction, uniform binary at nu = 0.
    Power { nu: f64 },
    /// gamma = h(xi/eta)/eta with integral_0^1 s h(s) ds = 1 expected.
    Homogeneous { h: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
    /// gamma = eta h0(xi) / h1(eta), h1(eta) = integral_0^eta xi h0 dxi
    /// (computed by this module's quadrature).
    Separable { h0: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
    /// Samples on a log grid, interpolated bilinearly in log coordinates
    /// and clamped to the table edges.
    Tabulated(Arc<TabulatedKernel>),
}

impl fmt::Debug for FragKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FragKernel::Power { nu } => write!(f, "FragKernel::Power(nu={nu})"),
            FragKernel::Homogeneous { .. } => write!(f, "FragKernel::Homogeneous"),
            FragKernel::Separable { .. } => write!(f, "FragKernel::Separable"),
            FragKernel::Tabulated(t) => write!(f, "FragKernel::Tabulated({}x{})", t.m(), t.m()),
        }
    }
}

pub const SEPARABLE_H1_PANELS: usize = 512;

impl FragKernel {
    pub fn power(nu: f64) -> Result<Self> {
        if !(-1.0 < nu && nu <= 0.0) {
            return Err(FragkinError::Kernel(format!(
                "power kernel exponent must satisfy -1 < nu <= 0, got {nu}"
            )));
        }
        Ok(FragKernel::Power { nu })
    }

    pub fn eval(&self, xi: f64, eta: f64) -> f64 {
        if xi > eta || xi <= 0.0 || eta <= 0.0 {
            return 0.0;
        }
        match self {
            FragKernel::Power { nu } => (nu + 2.0) / eta * (xi / eta).powf(*nu),
            FragKernel::Homogeneous { h } => h(xi / eta) / eta,
            FragKernel::Separable { h0 } => {
                let h1 = separable_h1(h0, eta);
                if h1 <= 0.0 {
                    0.0
                } else {
                    eta * h0(xi) / h1
                }
            }
            FragKernel::Tabulated(t) => t.eval(xi, eta),
        }
    }

    /// Single-parent evaluator xi -> gamma(xi, eta); computes the separable
    /// normalization once per parent instead of once per call.
    pub fn column_fn(&self, eta: f64) -> Box<dyn Fn(f64) -> f64 + '_> {
        match self {
            FragKernel::Separable { h0 } => {
                let h1 = separable_h1(h0, eta);
                let h0 = h0.clone();
                Box::new(move |xi| {
                    if xi > eta || xi <= 0.0 || h1 <= 0.0 {
                        0.0
                    } else {
                        eta * h0(xi) / h1
                    }
                })
            }
            _ => Box::new(move |xi| self.eval(xi, eta)),
        }
    }

    /// Evaluate one parent column at a node set.
    pub fn eval_column(&self, xis: &[f64], eta: f64) -> Vec<f64> {
        let f = self.column_fn(eta);
        xis.iter().map(|&xi| f(xi)).collect()
    }
}

fn separable_h1(h0: &Arc<dyn Fn(f64) -> f64 + Send + Sync>, eta: f64) -> f64 {
    logquad::integrate_from_zero(eta, SEPARABLE_H1_PANELS, |x| x * h0(x))
}

/// Symmetric coagulation kernel.
#[derive(Clone)]
pub enum CoagKernel {
    Constant { kappa0: f64 },
    /// kappa = c (beta_floor(xi)^rho + beta_floor(eta)^rho); dominated by
    /// the fragmentation envelope with constant c by construction.
    BetaDominated { c: f64, rho: f64 },
    Tabulated(Arc<TabulatedKernel>),
}

impl fmt::Debug for CoagKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoagKernel::Constant { kappa0 } => write!(f, "CoagKernel::Constant({kappa0})"),
            CoagKernel::BetaDominated { c, rho } => {
                write!(f, "CoagKernel::BetaDominated(c={c}, rho={rho})")
            }
            CoagKernel::Tabulated(t) => write!(f, "CoagKernel::Tabulated({}x{})", t.m(), t.m()),
        }
    }
}

impl CoagKernel {
    pub fn eval(&self, rates: &RateModel, xi: f64, eta: f64) -> f64 {
        match self {
            CoagKernel::Constant { kappa0 } => *kappa0,
            CoagKernel::BetaDominated { c, rho } => {
                c * ((rates.beta_floor)(xi).powf(*rho) + (rates.beta_floor)(eta).powf(*rho))
            }
            CoagKernel::Tabulated(t) => t.eval_symmetric(xi, eta),
        }
    }
}

/// Kernel samples on a strictly increasing positive node set.
#[derive(Debug, Clone)]
pub struct TabulatedKernel {
    nodes: Vec<f64>,
    log_nodes: Vec<f64>,
    /// values[i * m + j] = kernel(node_i, node_j)
    values: Vec<f64>,
    /// Daughter-size tables are triangular: entries above the diagonal in
    /// the first argument are forced to zero on evaluation.
    triangular: bool,
}

impl TabulatedKernel {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, triangular: bool) -> Result<Self> {
        let m = nodes.len();
        if m < 2 {
            return Err(FragkinError::Kernel("tabulated kernel needs at least 2 nodes".into()));
        }
        if values.len() != m * m {
            return Err(FragkinError::Kernel(format!(
                "tabulated kernel needs {m}x{m} values, got {}",
                values.len()
            )));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) || nodes[0] <= 0.0 {
            return Err(FragkinError::Kernel(
                "tabulated kernel nodes must be positive and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FragkinError::Kernel(
                "tabulated kernel values must be finite and nonnegative".into(),
            ));
        }
        let log_nodes = nodes.iter().map(|x| x.ln()).collect();
        Ok(TabulatedKernel { nodes, log_nodes, values, triangular })
    }

    /// Sample an analytic kernel on a grid (used heavily by tests).
    pub fn sample(sizes: &SizeGrid, f: impl Fn(f64, f64) -> f64, triangular: bool) -> Result<Self> {
        let nodes = sizes.nodes().to_vec();
        let m = nodes.len();
        let mut values = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                values[i * m + j] = f(nodes[i], nodes[j]);
            }
        }
        TabulatedKernel::new(nodes, values, triangular)
    }

    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    fn locate(&self, lx: f64) -> (usize, f64) {
        // Clamped bracket in log coordinates: index i and fraction in [0,1].
        let ln = &self.log_nodes;
        let m = ln.len();
        if lx <= ln[0] {
            return (0, 0.0);
        }
        if lx >= ln[m - 1] {
            return (m - 2, 1.0);
        }
        let mut i = match ln.binary_search_by(|v| v.partial_cmp(&lx).unwrap()) {
            Ok(k) => k,
            Err(k) => k - 1,
        };
        if i >= m - 1 {
            i = m - 2;
        }
        let f = (lx - ln[i]) / (ln[i + 1] - ln[i]);
        (i, f)
    }

    pub fn eval(&self, xi: f64, eta: f64) -> f64 {
        if xi <= 0.0 || eta <= 0.0 || (self.triangular && xi > eta) {
            return 0.0;
        }
        let m = self.m();
        let (i, mut fi) = self.locate(xi.ln());
        // In a triangular table the row above the parent holds zeros; mixing
        // them in would fake a mass deficit near the diagonal, so the last
        // partial panel extends the nearest resolved row instead.
        if self.triangular && self.nodes[i + 1] > eta {
            fi = 0.0;
        }
        let (j, fj) = self.locate(eta.ln());
        let v00 = self.values[i * m + j];
        let v01 = self.values[i * m + j + 1];
        let v10 = self.values[(i + 1) * m + j];
        let v11 = self.values[(i + 1) * m + j + 1];
        (1.0 - fi) * ((1.0 - fj) * v00 + fj * v01) + fi * ((1.0 - fj) * v10 + fj * v11)
    }

    pub fn eval_symmetric(&self, xi: f64, eta: f64) -> f64 {
        0.5 * (self.eval(xi, eta) + self.eval(eta, xi))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = self.m();
        let mut worst = 0.0_f64;
        for i in 0..m {
            for j in i + 1..m {
                worst = worst.max((self.values[i * m + j] - self.values[j * m + i]).abs());
            }
        }
        worst
    }

    /// Parse the `# fragkin-kernel v1` text format: after the magic header
    /// and optional comment lines, one line of m node positions, then m
    /// lines of m values (row i = first argument at node i).
    pub fn parse(text: &str, triangular: bool) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| FragkinError::Kernel("empty kernel file".into()))?;
        if first.trim() != "# fragkin-kernel v1" {
            return Err(FragkinError::Kernel(
                "line 1: missing magic header '# fragkin-kernel v1'".into(),
            ));
        }
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut row = Vec::new();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    FragkinError::Kernel(format!("line {}: bad number '{tok}'", idx + 1))
                })?;
                row.push(v);
            }
            rows.push((idx + 1, row));
        }
        let (nodes_line, nodes) = rows
            .first()
            .cloned()
            .ok_or_else(|| FragkinError::Kernel("kernel file has no node line".into()))?;
        let m = nodes.len();
        if rows.len() != m + 1 {
            return Err(FragkinError::Kernel(format!(
                "expected {m} value rows after the node line, found {}",
                rows.len() - 1
            )));
        }
        let mut values = Vec::with_capacity(m * m);
        for (line_no, row) in &rows[1..] {
            if row.len() != m {
                return Err(FragkinError::Kernel(format!(
                    "line {line_no}: expected {m} values, found {}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        TabulatedKernel::new(nodes, values, triangular).map_err(|e| match e {
            FragkinError::Kernel(msg) => {
                FragkinError::Kernel(format!("line {nodes_line}: {msg}"))
            }
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let m = self.m();
        let mut out = String::from("# fragkin-kernel v1\n");
        let nodes: Vec<String> = self.nodes.iter().map(|v| format!("{v}")).collect();
        out.push_str(&nodes.join(" "));
        out.push('\n');
        for i in 0..m {
            let row: Vec<String> =
                (0..m).map(|j| format!("{}", self.values[i * m + j])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}
