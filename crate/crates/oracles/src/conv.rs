//! Reference heat propagator on the torus: direct real-space convolution
//! against an image sum of the free-space Gaussian, five images per axis.
//! Valid while the Gaussian width sqrt(4 alpha t) stays below extent / 8,
//! where the truncated images are smaller than 1e-300.

/// Periodic heat kernel at displacement `dx` (componentwise in [-L, L]).
pub fn periodic_heat_kernel(dx: &[f64], alpha: f64, t: f64, extent: f64) -> f64 {
    let var = 4.0 * alpha * t;
    let norm = (std::f64::consts::PI * var).powf(-0.5 * dx.len() as f64);
    let mut total = 0.0;
    match dx.len() {
        1 => {
            for k in -2i32..=2 {
                let r = dx[0] + k as f64 * extent;
                total += (-r * r / var).exp();
            }
        }
        2 => {
            for kx in -2i32..=2 {
                let rx = dx[0] + kx as f64 * extent;
                for ky in -2i32..=2 {
                    let ry = dx[1] + ky as f64 * extent;
                    total += (-(rx * rx + ry * ry) / var).exp();
                }
            }
        }
        _ => panic!("only one or two axes are supported"),
    }
    norm * total
}

/// Evolve `profile` (row-major over an n^dim grid with spacing extent/n) for
/// time `t` under heat flow with diffusivity `alpha` by direct quadrature
/// against the periodic kernel.  O(n^2 dim) work; a test oracle, not a solver.
pub fn convolution_oracle(
    profile: &[f64],
    alpha: f64,
    t: f64,
    dim: usize,
    extent: f64,
    n: usize,
) -> Vec<f64> {
    let cells = n.pow(dim as u32);
    assert_eq!(profile.len(), cells, "profile length does not match the grid");
    assert!(alpha >= 0.0 && t >= 0.0 && extent > 0.0);
    if alpha * t == 0.0 {
        return profile.to_vec();
    }
    let width = (4.0 * alpha * t).sqrt();
    assert!(
        width <= extent / 8.0,
        "kernel width {width} too wide for a five-image sum on extent {extent}"
    );
    let h = extent / n as f64;
    let vol = h.powi(dim as i32);
    let coord = |cell: usize, axis: usize| -> f64 {
        let idx = match (dim, axis) {
            (1, _) => cell,
            (2, 0) => cell % n,
            (2, _) => cell / n,
            _ => unreachable!(),
        };
        idx as f64 * h
    };
    let mut out = vec![0.0; cells];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (y, &p) in profile.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut dx = [0.0; 2];
            for axis in 0..dim {
                dx[axis] = coord(c, axis) - coord(y, axis);
            }
            acc += p * periodic_heat_kernel(&dx[..dim], alpha, t, extent);
        }
        *slot = acc * vol;
    }
    out
}
