//! Flat-band dynamics of a Lieb lattice threaded by a time-dependent magnetic flux.

pub mod error;
pub mod evolution;
pub mod hamiltonian;
pub mod io;
pub mod lattice;
pub mod localized;
pub mod spectral;
pub mod toy;

pub use error::{Error, Result};
pub use hamiltonian::{assemble, FluxSchedule, GaugeConfig, HamiltonianMatrix};
pub use lattice::{build_lattice, Boundary, LatticeSpec, SiteTable, Sublattice};
pub use localized::{build_localized_state, project_flat, Projection, StateVector};
pub use spectral::{eigendecompose, Spectrum};
