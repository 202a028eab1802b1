//! Composite Gauss-Legendre quadrature on a log grid. Used for kernel
//! moment integrals over (0, eta], where the integrand is smooth in
//! log(xi) but may be power-law singular at xi -> 0.

/// 4-point Gauss-Legendre abscissae and weights on [-1, 1].
const GL_X: [f64; 4] = [
    -0.8611363115940526,
    -0.3399810435848563,
    0.3399810435848563,
    0.8611363115940526,
];
const GL_W: [f64; 4] = [
    0.34785484513745385,
    0.6521451548625461,
    0.6521451548625461,
    0.34785484513745385,
];

/// Integrate f over [lo, hi], 0 < lo < hi, with `panels` Gauss-Legendre
/// panels equispaced in log(xi).
pub fn integrate_log(lo: f64, hi: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    debug_assert!(lo > 0.0 && hi > lo && panels > 0);
    let ta = lo.ln();
    let dt = (hi.ln() - ta) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let c = ta + (p as f64 + 0.5) * dt;
        let mut panel = 0.0;
        for q in 0..4 {
            let t = c + 0.5 * dt * GL_X[q];
            let xi = t.exp();
            panel += GL_W[q] * f(xi) * xi;
        }
        acc += panel * 0.5 * dt;
    }
    acc
}

/// Relative lower cutoff for integrals over (0, eta]: the omitted tail of
/// xi^a gamma with a + nu + 1 > 0 is (cutoff)^(a+nu+1) relative, far below
/// every tolerance used by the moment suite for the supported families.
pub const LOWER_CUTOFF: f64 = 1e-14;

/// Integrate f over (0, eta] by cutting off at eta * LOWER_CUTOFF.
pub fn integrate_from_zero(eta: f64, panels: usize, f: impl FnMut(f64) -> f64) -> f64 {
    integrate_log(eta * LOWER_CUTOFF, eta, panels, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_powers_accurately() {
        // integral of xi^0.5 over (0, 3] = 2/3 * 3^1.5
        let got = integrate_from_zero(3.0, 256, |x| x.sqrt());
        let want = 2.0 / 3.0 * 3.0_f64.powf(1.5);
        assert!((got - want).abs() / want <= 1e-9, "got {got}, want {want}");
    }

    #[test]
    fn integrates_log_singularity() {
        // integral of x^(-0.5) over (0, 1] = 2
        let got = integrate_from_zero(1.0, 512, |x| 1.0 / x.sqrt());
        assert!((got - 2.0).abs() <= 1e-6, "got {got}");
    }

    #[test]
    fn respects_explicit_bounds() {
        let got = integrate_log(1.0, std::f64::consts::E, 64, |x| 1.0 / x);
        assert!((got - 1.0).abs() <= 1e-12, "got {got}");
    }
}
