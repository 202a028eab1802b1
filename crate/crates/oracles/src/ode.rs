//! Reference integrator for the spatially homogeneous size system
//!
//! ```text
//! du_i/dt = -beta(xi_i) u_i + sum_j beta(xi_j) u_j w_j gamma(xi_i, xi_j)
//!           - u_i sum_j kappa(xi_i, xi_j) u_j w_j
//!           + (1/2) sum_{j,k} kappa(xi_j, xi_k) u_j u_k w_j w_k
//!             deposited at the node nearest in mass to xi_j + xi_k.
//! ```
//!
//! Classic four-stage explicit Runge-Kutta with a fixed, very small step.
//! The coagulation gain is a direct double sum over all pairs; merged mass is
//! assigned to the single nearest node (clamped at the top of the grid), which
//! conserves particle number per event exactly and mass only to first order
//! in the grid spacing.  Fragmentation columns are normalised so the discrete
//! double sum telescopes: sum_i xi_i w_i gamma~(i,j) = xi_j exactly.

/// Size-only system description on an explicit node/weight set.
pub struct OdeSystem<'a> {
    pub nodes: &'a [f64],
    pub weights: &'a [f64],
    /// Fragmentation rate at a size, or `None` for no fragmentation.
    pub beta: Option<&'a dyn Fn(f64) -> f64>,
    /// Daughter density gamma(daughter, parent); evaluated for daughter <= parent.
    pub gamma: Option<&'a dyn Fn(f64, f64) -> f64>,
    /// Coagulation kernel kappa(xi, eta), or `None` for no coagulation.
    pub kappa: Option<&'a dyn Fn(f64, f64) -> f64>,
}

/// Discrete particle number sum_i u_i w_i.
pub fn number(weights: &[f64], u: &[f64]) -> f64 {
    u.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Discrete first size moment sum_i xi_i u_i w_i.
pub fn mass(nodes: &[f64], weights: &[f64], u: &[f64]) -> f64 {
    u.iter()
        .zip(nodes.iter().zip(weights))
        .map(|(v, (x, w))| v * x * w)
        .sum()
}

struct Tables {
    m: usize,
    /// beta(xi_j) per node, zeros when fragmentation is absent.
    beta: Vec<f64>,
    /// Column-normalised gamma(i, j) * w_i, row-major over daughters i, or empty.
    frag_gain: Vec<f64>,
    /// kappa(xi_i, xi_j), row-major, or empty.
    kappa: Vec<f64>,
    /// Nearest node to xi_j + xi_k for j <= k, packed triangularly.
    merge_target: Vec<usize>,
}

fn tri_index(m: usize, j: usize, k: usize) -> usize {
    // j <= k; row j starts after the triangle above it.
    j * m - j * (j + 1) / 2 + k
}

fn build_tables(sys: &OdeSystem) -> Tables {
    let m = sys.nodes.len();
    assert_eq!(m, sys.weights.len(), "nodes and weights differ in length");
    let beta: Vec<f64> = match sys.beta {
        Some(b) => sys.nodes.iter().map(|&x| b(x)).collect(),
        None => vec![0.0; m],
    };
    let frag_gain = match sys.gamma {
        Some(g) => {
            let mut table = vec![0.0; m * m];
            for j in 0..m {
                let parent = sys.nodes[j];
                let mut column_mass = 0.0;
                for i in 0..=j {
                    // The daughter integral stops at the parent size, so the
                    // diagonal node carries half a panel.
                    let w = if i == j { 0.5 * sys.weights[i] } else { sys.weights[i] };
                    let raw = g(sys.nodes[i], parent) * w;
                    table[i * m + j] = raw;
                    column_mass += sys.nodes[i] * raw;
                }
                // Normalise so the column carries exactly the parent mass;
                // guards the telescoping identity against quadrature error.
                if column_mass > 0.0 {
                    let scale = parent / column_mass;
                    for i in 0..=j {
                        table[i * m + j] *= scale;
                    }
                }
            }
            table
        }
        None => Vec::new(),
    };
    let (kappa, merge_target) = match sys.kappa {
        Some(k) => {
            let mut table = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    table[i * m + j] = k(sys.nodes[i], sys.nodes[j]);
                }
            }
            let mut targets = vec![0usize; m * (m + 1) / 2];
            for j in 0..m {
                for k2 in j..m {
                    let s = sys.nodes[j] + sys.nodes[k2];
                    let mut best = m - 1;
                    let mut best_err = f64::INFINITY;
                    for (a, &x) in sys.nodes.iter().enumerate() {
                        let err = (x - s).abs();
                        if err < best_err {
                            best_err = err;
                            best = a;
                        }
                    }
                    targets[tri_index(m, j, k2)] = best;
                }
            }
            (table, targets)
        }
        None => (Vec::new(), Vec::new()),
    };
    Tables {
        m,
        beta,
        frag_gain,
        kappa,
        merge_target,
    }
}

fn rhs(t: &Tables, weights: &[f64], u: &[f64], out: &mut [f64]) {
    let m = t.m;
    out.fill(0.0);
    if !t.frag_gain.is_empty() {
        for j in 0..m {
            let source = t.beta[j] * u[j] * weights[j];
            if source == 0.0 {
                continue;
            }
            for i in 0..=j {
                out[i] += source * t.frag_gain[i * m + j] / weights[i];
            }
        }
    }
    for i in 0..m {
        out[i] -= t.beta[i] * u[i];
    }
    if !t.kappa.is_empty() {
        for i in 0..m {
            let mut loss = 0.0;
            for j in 0..m {
                loss += t.kappa[i * m + j] * u[j] * weights[j];
            }
            out[i] -= u[i] * loss;
        }
        for j in 0..m {
            let uj = u[j] * weights[j];
            if uj == 0.0 {
                continue;
            }
            for k in j..m {
                let pair = if k == j { 0.5 * uj * uj } else { uj * u[k] * weights[k] };
                let rate = t.kappa[j * m + k] * pair;
                if rate == 0.0 {
                    continue;
                }
                let a = t.merge_target[tri_index(t.m, j, k)];
                out[a] += rate / weights[a];
            }
        }
    }
}

/// Integrate the size-only system to time `t_end` and return the final state.
///
/// `steps` is the number of equal Runge-Kutta steps; callers wanting a
/// reference-quality answer should use at least 1e4.
pub fn ode_oracle(sys: &OdeSystem, u0: &[f64], t_end: f64, steps: usize) -> Vec<f64> {
    ode_oracle_trajectory(sys, u0, t_end, steps, steps)
        .pop()
        .expect("trajectory is never empty")
        .1
}

/// Integrate and return `(time, state)` samples, including the initial state.
///
/// Samples are taken every `steps / samples` steps (and at the end).
pub fn ode_oracle_trajectory(
    sys: &OdeSystem,
    u0: &[f64],
    t_end: f64,
    steps: usize,
    samples: usize,
) -> Vec<(f64, Vec<f64>)> {
    assert!(steps > 0 && t_end >= 0.0);
    let tables = build_tables(sys);
    assert_eq!(u0.len(), tables.m, "state length does not match the grid");
    let h = t_end / steps as f64;
    let every = (steps / samples.max(1)).max(1);
    let m = tables.m;
    let mut u = u0.to_vec();
    let mut out = vec![(0.0, u.clone())];
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut stage = vec![0.0; m];
    for step in 1..=steps {
        rhs(&tables, sys.weights, &u, &mut k1);
        for i in 0..m {
            stage[i] = u[i] + 0.5 * h * k1[i];
        }
        rhs(&tables, sys.weights, &stage, &mut k2);
        for i in 0..m {
            stage[i] = u[i] + 0.5 * h * k2[i];
        }
        rhs(&tables, sys.weights, &stage, &mut k3);
        for i in 0..m {
            stage[i] = u[i] + h * k3[i];
        }
        rhs(&tables, sys.weights, &stage, &mut k4);
        for i in 0..m {
            u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % every == 0 || step == steps {
            out.push((step as f64 * h, u.clone()));
        }
    }
    out
}
