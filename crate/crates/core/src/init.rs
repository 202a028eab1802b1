//! Initial data presets: a spatial shape times a size profile, optionally
//! roughened by seeded multiplicative noise. Construction is sequential in
//! cell-major order, so a given seed yields the same field at any thread
//! count.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{InitialSection, SizeShape, SpaceShape};
use crate::error::{FragkinError, Result};
use crate::grid::{Field, SizeGrid, SpaceGrid};

pub fn build_initial(
    space: &Arc<SpaceGrid>,
    sizes: &Arc<SizeGrid>,
    init: &InitialSection,
    seed: u64,
) -> Result<Field> {
    if init.checkpoint.is_some() {
        return Err(FragkinError::Config(
            "initial state comes from a checkpoint; load that file instead of building a \
             profile"
                .into(),
        ));
    }
    let center: Vec<f64> = match &init.center {
        Some(c) => c.clone(),
        None => vec![0.5 * space.extent; space.dim],
    };
    let spatial: Vec<f64> = (0..space.cells())
        .map(|cell| match init.space_shape {
            SpaceShape::Uniform => 1.0,
            SpaceShape::Bump => {
                let pos = space.position(cell);
                let mut d2 = 0.0;
                for axis in 0..space.dim {
                    let mut d = (pos[axis] - center[axis]).abs();
                    d = d.min(space.extent - d);
                    d2 += d * d;
                }
                (-d2 / (2.0 * init.width * init.width)).exp()
            }
        })
        .collect();
    let profile: Vec<f64> = sizes
        .nodes()
        .iter()
        .map(|&xi| match init.size_shape {
            SizeShape::Exponential => (-xi / init.xi_mean).exp(),
            SizeShape::Lognormal => {
                let z = (xi / init.xi_mean).ln() / init.sigma;
                (-0.5 * z * z).exp()
            }
        })
        .collect();
    let m = sizes.len();
    let mut u = Field::zeros(space, sizes);
    let values = u.values_mut();
    for cell in 0..space.cells() {
        for i in 0..m {
            values[cell * m + i] = init.amplitude * spatial[cell] * profile[i];
        }
    }
    if init.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in u.values_mut() {
            let r: f64 = rng.gen();
            *v *= 1.0 + init.noise * (2.0 * r - 1.0);
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grids() -> (Arc<SpaceGrid>, Arc<SizeGrid>) {
        (
            SpaceGrid::new(1, 2.0 * std::f64::consts::PI, 16).unwrap(),
            SizeGrid::new(1e-2, 1e2, 24).unwrap(),
        )
    }

    #[test]
    fn bump_peaks_at_the_domain_center_and_stays_positive() {
        let (space, sizes) = grids();
        let init = InitialSection::default();
        let u = build_initial(&space, &sizes, &init, 0).unwrap();
        assert!(u.min_value() >= 0.0);
        let center_cell = space.cells() / 2;
        let peak: f64 = u.cell(center_cell).iter().sum();
        for cell in 0..space.cells() {
            let s: f64 = u.cell(cell).iter().sum();
            assert!(s <= peak * (1.0 + 1e-12), "cell {cell}");
        }
    }

    #[test]
    fn uniform_profiles_are_cell_independent() {
        let (space, sizes) = grids();
        let mut init = InitialSection::default();
        init.space_shape = SpaceShape::Uniform;
        init.size_shape = SizeShape::Lognormal;
        let u = build_initial(&space, &sizes, &init, 0).unwrap();
        let first = u.cell(0).to_vec();
        for cell in 1..space.cells() {
            assert_eq!(u.cell(cell), &first[..]);
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let (space, sizes) = grids();
        let mut init = InitialSection::default();
        init.noise = 0.2;
        let a = build_initial(&space, &sizes, &init, 42).unwrap();
        let b = build_initial(&space, &sizes, &init, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let c = build_initial(&space, &sizes, &init, 43).unwrap();
        assert_ne!(a.values(), c.values());
        assert!(c.min_value() >= 0.0);
    }

    #[test]
    fn checkpoint_initials_are_not_buildable() {
        let (space, sizes) = grids();
        let mut init = InitialSection::default();
        init.checkpoint = Some("state.ckpt".into());
        let err = build_initial(&space, &sizes, &init, 0).unwrap_err().to_string();
        assert!(err.contains("checkpoint"), "{err}");
    }
}
