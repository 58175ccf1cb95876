//! Compact localized states and projections onto the flat band.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianMatrix;
use crate::io::fmt_f64;
use crate::lattice::{Plaquette, SiteTable, Sublattice};
use crate::spectral::{fix_phase, Spectrum};

/// Normalized amplitudes over the site basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: DVector<Complex64>,
}

impl StateVector {
    /// Normalizes `amplitudes`; rejects the zero vector.
    pub fn new(amplitudes: DVector<Complex64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("state vector must have a finite nonzero norm".into()));
        }
        Ok(StateVector {
            amplitudes: amplitudes / Complex64::from(norm),
        })
    }

    /// Wraps amplitudes without renormalizing (used by propagators that
    /// already preserve the norm).
    pub fn from_raw(amplitudes: DVector<Complex64>) -> Self {
        StateVector { amplitudes }
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<Complex64> {
        self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `<other|self>`.
    pub fn overlap(&self, other: &DVector<Complex64>) -> Complex64 {
        other.dotc(&self.amplitudes)
    }

    /// `<psi|H|psi>`; real for Hermitian `H`.
    pub fn energy(&self, h: &HamiltonianMatrix) -> f64 {
        self.amplitudes.dotc(&(&h.matrix * &self.amplitudes)).re
    }

    /// CSV with header `index,sublattice,x,y,re,im`.
    pub fn to_csv(&self, table: &SiteTable) -> String {
        let mut out = String::from("index,sublattice,x,y,re,im\n");
        for (k, z) in self.amplitudes.iter().enumerate() {
            let s = table.site(k);
            out.push_str(&format!(
                "{k},{},{},{},{},{}\n",
                s.sublattice,
                s.x,
                s.y,
                fmt_f64(z.re),
                fmt_f64(z.im)
            ));
        }
        out
    }
}

/// Weight and normalized image of a state inside the flat band.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `sum_i |<0_i|psi>|^2`.
    pub value: f64,
    /// `sum_i <0_i|psi> |0_i>`, normalized; `None` when the weight vanishes.
    pub tilde_zero: Option<StateVector>,
}

/// Projects `psi` onto the zero-energy subspace of `spec`.
pub fn project_flat(psi: &StateVector, spec: &Spectrum) -> Result<Projection> {
    if psi.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: psi.dim(),
        });
    }
    let basis = spec.flat_basis();
    let coeffs = basis.adjoint() * psi.amplitudes();
    let value = coeffs.norm_squared();
    let image = &basis * coeffs;
    let tilde_zero = if value > 1e-300 { StateVector::new(image).ok() } else { None };
    Ok(Projection { value, tilde_zero })
}

/// Squared overlaps with every eigenvector, in eigenvalue order.
pub fn eigen_weights(psi: &StateVector, spec: &Spectrum) -> Vec<f64> {
    let coeffs = spec.eigenvectors.adjoint() * psi.amplitudes();
    coeffs.iter().map(|c| c.norm_sqr()).collect()
}

/// Zero-energy state supported on the B/C sites of the given plaquettes.
///
/// Solves the A-site constraint equations restricted to the candidate support
/// and returns the right-singular vector of the smallest singular value.
pub fn build_compact_state(table: &SiteTable, h: &HamiltonianMatrix, plaquettes: &[Plaquette]) -> Result<StateVector> {
    if h.dim() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            got: h.dim(),
        });
    }
    if plaquettes.is_empty() {
        return Err(Error::InvalidPlaquettes("no plaquettes given".into()));
    }
    let mut support: Vec<usize> = plaquettes.iter().flat_map(|p| p.edge_centers()).collect();
    support.sort_unstable();
    support.dedup();
    // Every A site touching the support contributes one constraint row.
    let mut rows: Vec<usize> = table
        .range(Sublattice::A)
        .filter(|&a| support.iter().any(|&s| h.matrix[(a, s)].norm() != 0.0))
        .collect();
    rows.sort_unstable();

    let n = support.len().max(rows.len());
    // Zero-padded to square so the SVD returns a full right basis.
    let mut m = DMatrix::<Complex64>::zeros(n, support.len());
    for (r, &a) in rows.iter().enumerate() {
        for (c, &s) in support.iter().enumerate() {
            m[(r, c)] = h.matrix[(a, s)];
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::SolverNonConvergence { dim: n })?;
    let (k_min, smallest) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, s)| (k, *s))
        .ok_or(Error::NoNullVector { smallest: f64::NAN })?;
    let scale = h.matrix.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1.0);
    if smallest > 1e-10 * scale {
        return Err(Error::NoNullVector { smallest });
    }

    let mut amplitudes = DVector::<Complex64>::zeros(table.len());
    for (c, &s) in support.iter().enumerate() {
        amplitudes[s] = v_t[(k_min, c)].conj();
    }
    let mut state = StateVector::new(amplitudes)?;
    fix_phase(state.amplitudes.as_mut_slice());
    Ok(state)
}

/// Localized state on two edge-adjacent plaquettes (ids as in `SiteTable::plaquettes`).
pub fn build_localized_state(table: &SiteTable, h: &HamiltonianMatrix, pair: [usize; 2]) -> Result<StateVector> {
    let all = table.plaquettes();
    let get = |id: usize| {
        all.get(id)
            .copied()
            .ok_or_else(|| Error::InvalidPlaquettes(format!("plaquette {id} does not exist")))
    };
    let (p, q) = (get(pair[0])?, get(pair[1])?);
    let dist = (p.ix as i64 - q.ix as i64).abs() + (p.iy as i64 - q.iy as i64).abs();
    if dist != 1 {
        return Err(Error::InvalidPlaquettes(format!(
            "plaquettes {} and {} are not edge-adjacent",
            pair[0], pair[1]
        )));
    }
    build_compact_state(table, h, &[p, q])
}

/// Single-plaquette state; only exists when the plaquette flux is a multiple of 2 pi.
pub fn build_plaquette_state(table: &SiteTable, h: &HamiltonianMatrix, id: usize) -> Result<StateVector> {
    let p = table
        .plaquettes()
        .get(id)
        .copied()
        .ok_or_else(|| Error::InvalidPlaquettes(format!("plaquette {id} does not exist")))?;
    build_compact_state(table, h, &[p])
}

/// The two most central horizontally adjacent plaquettes (lowest row and
/// column on ties).
pub fn default_plaquette_pair(table: &SiteTable) -> Result<[usize; 2]> {
    let spec = table.spec();
    if spec.nx < 2 {
        return Err(Error::InvalidPlaquettes(
            "need at least two plaquettes along x for a horizontal pair".into(),
        ));
    }
    let (cx, cy) = (spec.nx as f64 / 2.0, spec.ny as f64 / 2.0);
    let mut best: Option<(f64, [usize; 2])> = None;
    for iy in 0..spec.ny {
        for ix in 0..spec.nx - 1 {
            // pair midpoint in plaquette units
            let (mx, my) = (ix as f64 + 1.0, iy as f64 + 0.5);
            let d = (mx - cx).powi(2) + (my - cy).powi(2);
            if best.is_none_or(|(bd, _)| d < bd - 1e-12) {
                let id = iy * spec.nx + ix;
                best = Some((d, [id, id + 1]));
            }
        }
    }
    Ok(best.expect("nx >= 2 gives at least one pair").1)
}
