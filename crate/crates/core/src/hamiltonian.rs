//! Peierls-substituted tight-binding Hamiltonian in the symmetric gauge.
//!
//! Units: hopping = 1, hbar = 1. The normalized flux `phi` is the only field
//! parameter; the gauge-invariant phase around every plaquette is `-phi`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{Bond, Boundary, Direction, LatticeSpec, SiteTable, Sublattice};

/// Center of the symmetric-gauge vector potential, in half-cell units,
/// measured from the geometric center of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaugeConfig {
    pub x0: f64,
    pub y0: f64,
}

impl GaugeConfig {
    pub const CENTERED: GaugeConfig = GaugeConfig { x0: 0.0, y0: 0.0 };

    pub fn new(x0: f64, y0: f64) -> Self {
        GaugeConfig { x0, y0 }
    }

    /// Distance of the gauge center from the lattice center.
    pub fn offset(&self) -> f64 {
        self.x0.hypot(self.y0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x0.is_finite() && self.y0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gauge center must be finite (got {}, {})",
                self.x0, self.y0
            )));
        }
        Ok(())
    }
}

/// Linear flux ramp `phi(t) = phi_init + omega * (t - t0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSchedule {
    pub phi_init: f64,
    pub omega: f64,
    pub t0: f64,
}

impl FluxSchedule {
    pub fn new(phi_init: f64, omega: f64) -> Self {
        FluxSchedule {
            phi_init,
            omega,
            t0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi_init.is_finite() && self.omega.is_finite() && self.t0.is_finite()) {
            return Err(Error::InvalidParameter("flux schedule must be finite".into()));
        }
        if self.omega < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "flux ramp rate must be non-negative (got {})",
                self.omega
            )));
        }
        Ok(())
    }

    pub fn flux_at(&self, t: f64) -> f64 {
        self.phi_init + self.omega * (t - self.t0)
    }

    /// Inverse of `flux_at`; requires a positive ramp rate.
    pub fn time_at(&self, phi: f64) -> f64 {
        self.t0 + (phi - self.phi_init) / self.omega
    }
}

fn check_bond(bond: &Bond) -> Result<()> {
    if bond.from.sublattice != Sublattice::A {
        return Err(Error::MalformedBond(format!(
            "bond must start on an A site, got {:?}",
            bond.from
        )));
    }
    if bond.to.sublattice != bond.direction.target() {
        return Err(Error::MalformedBond(format!(
            "{:?} bond cannot end on sublattice {}",
            bond.direction, bond.to.sublattice
        )));
    }
    Ok(())
}

/// Coefficient `c` such that the hopping phase of `bond` is `c * phi`.
///
/// Coordinates are taken relative to the lattice center and then shifted by
/// the gauge offset. For integer (or dyadic) offsets the coefficients are
/// exact binary fractions, so loop sums are exact.
pub fn peierls_coefficient(bond: &Bond, gauge: GaugeConfig, center: (f64, f64)) -> Result<f64> {
    check_bond(bond)?;
    let xr = bond.from.x as f64 - center.0 - gauge.x0;
    let yr = bond.from.y as f64 - center.1 - gauge.y0;
    Ok(match bond.direction {
        Direction::Up => -xr / 8.0,
        Direction::Down => xr / 8.0,
        Direction::Right => yr / 8.0,
        Direction::Left => -yr / 8.0,
    })
}

/// Phase (radians) of the hop from the A end of `bond` to its B/C end.
pub fn peierls_phase(bond: &Bond, phi: f64, gauge: GaugeConfig, center: (f64, f64)) -> Result<f64> {
    Ok(peierls_coefficient(bond, gauge, center)? * phi)
}

/// Dense Hermitian Hamiltonian at a fixed flux.
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub lattice: LatticeSpec,
    pub phi: f64,
    pub gauge: GaugeConfig,
    pub matrix: DMatrix<Complex64>,
}

impl HamiltonianMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest `|H_ij - conj(H_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn nonzero_count(&self) -> usize {
        self.matrix.iter().filter(|z| z.norm() != 0.0).count()
    }

    /// `H psi` for a plain amplitude slice.
    pub fn apply(&self, psi: &nalgebra::DVector<Complex64>) -> nalgebra::DVector<Complex64> {
        &self.matrix * psi
    }
}

/// Bond list with precomputed Peierls coefficients; evaluates `H(phi)` for a
/// fixed lattice and gauge without re-deriving the geometry.
#[derive(Debug, Clone)]
pub struct FluxFamily {
    lattice: LatticeSpec,
    gauge: GaugeConfig,
    dim: usize,
    // (to, from, coefficient)
    entries: Vec<(usize, usize, f64)>,
}

impl FluxFamily {
    pub fn new(table: &SiteTable, gauge: GaugeConfig) -> Result<Self> {
        gauge.validate()?;
        let center = table.center();
        let entries = table
            .bonds()
            .iter()
            .map(|b| Ok((b.to_index, b.from_index, peierls_coefficient(b, gauge, center)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FluxFamily {
            lattice: table.spec(),
            gauge,
            dim: table.len(),
            entries,
        })
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.lattice
    }

    pub fn gauge(&self) -> GaugeConfig {
        self.gauge
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw matrix at `phi`, skipping validation (hot loops).
    pub fn matrix_at(&self, phi: f64) -> DMatrix<Complex64> {
        let mut m = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for &(to, from, c) in &self.entries {
            let hop = -Complex64::from_polar(1.0, c * phi);
            // Accumulate: a 1-cell periodic lattice has two bonds to the same site.
            m[(to, from)] += hop;
            m[(from, to)] += hop.conj();
        }
        m
    }

    pub fn at(&self, phi: f64) -> Result<HamiltonianMatrix> {
        if !phi.is_finite() {
            return Err(Error::InvalidParameter(format!("flux must be finite (got {phi})")));
        }
        if self.lattice.boundary == Boundary::Periodic && phi != 0.0 {
            return Err(Error::PeriodicWithFlux { phi });
        }
        Ok(HamiltonianMatrix {
            lattice: self.lattice,
            phi,
            gauge: self.gauge,
            matrix: self.matrix_at(phi),
        })
    }
}

/// Assembles `H = -sum e^{i theta} |B/C><A| + h.c.` over all bonds.
pub fn assemble(table: &SiteTable, phi: f64, gauge: GaugeConfig) -> Result<HamiltonianMatrix> {
    FluxFamily::new(table, gauge)?.at(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, LatticeSpec};
    use std::f64::consts::PI;

    fn bond_at(table: &SiteTable, x: i64, y: i64, dir: Direction) -> Bond {
        table
            .bonds()
            .into_iter()
            .find(|b| b.from.x == x && b.from.y == y && b.direction == dir)
            .unwrap()
    }

    #[test]
    fn phase_vanishes_at_gauge_center() {
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        for dir in Direction::ALL {
            let b = bond_at(&t, 2, 2, dir);
            assert_eq!(peierls_phase(&b, 1.234, GaugeConfig::CENTERED, t.center()).unwrap(), 0.0);
        }
    }

    #[test]
    fn phase_direct_substitution() {
        // A two half-cells right of the center, hopping up at phi = 2 pi.
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        let b = bond_at(&t, 4, 2, Direction::Up);
        let theta = peierls_phase(&b, 2.0 * PI, GaugeConfig::CENTERED, t.center()).unwrap();
        assert!((theta + PI / 2.0).abs() < 1e-15);
        let down = bond_at(&t, 4, 2, Direction::Down);
        let theta_down = peierls_phase(&down, 2.0 * PI, GaugeConfig::CENTERED, t.center()).unwrap();
        assert_eq!(theta_down, -theta);
    }

    #[test]
    fn malformed_bond_rejected() {
        let t = build_lattice(LatticeSpec::open(1, 1)).unwrap();
        let mut b = bond_at(&t, 0, 0, Direction::Up);
        b.direction = Direction::Right;
        assert!(matches!(
            peierls_phase(&b, 1.0, GaugeConfig::CENTERED, t.center()),
            Err(Error::MalformedBond(_))
        ));
        let mut b = bond_at(&t, 0, 0, Direction::Up);
        std::mem::swap(&mut b.from, &mut b.to);
        assert!(peierls_phase(&b, 1.0, GaugeConfig::CENTERED, t.center()).is_err());
    }

    #[test]
    fn zero_flux_entries_are_minus_one() {
        let t = build_lattice(LatticeSpec::open(3, 2)).unwrap();
        let h = assemble(&t, 0.0, GaugeConfig::new(-4.0, 1.5)).unwrap();
        for z in h.matrix.iter() {
            assert!(*z == Complex64::new(0.0, 0.0) || *z == Complex64::new(-1.0, 0.0));
        }
        assert_eq!(h.nonzero_count(), 2 * t.bonds().len());
    }

    #[test]
    fn exactly_hermitian() {
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        let h = assemble(&t, PI, GaugeConfig::new(-4.0, -4.0)).unwrap();
        assert_eq!(h.hermiticity_error(), 0.0);
        for i in 0..h.dim() {
            assert_eq!(h.matrix[(i, i)], Complex64::new(0.0, 0.0));
        }
        for z in h.matrix.iter().filter(|z| z.norm() != 0.0) {
            assert!((z.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn periodic_requires_zero_flux() {
        let t = build_lattice(LatticeSpec::periodic(4, 4)).unwrap();
        assert!(assemble(&t, 0.0, GaugeConfig::CENTERED).is_ok());
        assert_eq!(
            assemble(&t, 0.1, GaugeConfig::CENTERED).unwrap_err(),
            Error::PeriodicWithFlux { phi: 0.1 }
        );
    }

    #[test]
    fn family_matches_direct_substitution() {
        let t = build_lattice(LatticeSpec::open(3, 2)).unwrap();
        let g = GaugeConfig::new(1.0, -2.5);
        let h = assemble(&t, 2.7, g).unwrap();
        for b in t.bonds() {
            let theta = peierls_phase(&b, 2.7, g, t.center()).unwrap();
            let z = h.matrix[(b.to_index, b.from_index)];
            assert!((z + Complex64::from_polar(1.0, theta)).norm() < 1e-15);
        }
    }

    #[test]
    fn flux_schedule() {
        let s = FluxSchedule::new(PI, 0.3);
        assert_eq!(s.flux_at(0.0), PI);
        let s = FluxSchedule::new(0.0, 2.0 * PI * 1e-5);
        assert!((s.flux_at(1e5) - 2.0 * PI).abs() < 1e-12);
        assert!((s.time_at(s.flux_at(123.0)) - 123.0).abs() < 1e-9);
        assert!(FluxSchedule::new(0.0, -1.0).validate().is_err());
    }
}
