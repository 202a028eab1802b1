//! Independent reference implementations used only by tests.
//!
//! Everything in this crate is written against plain slices and closures so
//! that it cannot accidentally call into the production operators: this crate
//! has no dependency on the solver library at all.  The schemes are chosen to
//! be *different* from production on purpose (a classic four-stage explicit
//! integrator instead of Strang splitting, nearest-mass rebinning instead of
//! pivot splitting, direct real-space image sums instead of spectral
//! multipliers), so agreement between the two is evidence rather than
//! tautology.

mod conv;
mod ode;

pub use conv::{convolution_oracle, periodic_heat_kernel};
pub use ode::{mass, number, ode_oracle, ode_oracle_trajectory, OdeSystem};
