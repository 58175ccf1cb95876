//! Dense Hermitian eigendecomposition and flat-band bookkeeping.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{assemble, GaugeConfig, HamiltonianMatrix};
use crate::io::fmt_f64;
use crate::lattice::{build_lattice, Boundary, LatticeSpec, SiteTable, Sublattice};

/// Relative zero tolerance: `|E| < ZERO_TOL_REL * ||H||` counts as zero energy.
pub const ZERO_TOL_REL: f64 = 1e-8;

/// Eigenvalues, eigenvectors and the flat-band / epsilon-state labels.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub lattice: LatticeSpec,
    pub phi: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<Complex64>,
    /// Indices of the zero-energy subspace, ordered by increasing `|E|`.
    pub zero_indices: Vec<usize>,
    /// `(eps_plus, eps_minus)` when the pair is resolved away from a crossing.
    pub eps: Option<(usize, usize)>,
    pub zero_tol: f64,
}

/// True when `phi` is an exact multiple of 2 pi up to rounding.
pub fn at_crossing(phi: f64) -> bool {
    let r = phi.rem_euclid(TAU);
    r.min(TAU - r) <= 1e-12 * phi.abs().max(1.0)
}

/// Zero-energy subspace dimension for an open lattice: `N - 1` flat states,
/// plus the two epsilon states exactly at multiples of 2 pi.
pub fn known_zero_count(lattice: LatticeSpec, phi: f64) -> Option<usize> {
    match lattice.boundary {
        Boundary::Open => {
            let flat = lattice.cells() - 1;
            Some(if at_crossing(phi) { flat + 2 } else { flat })
        }
        Boundary::Periodic => None,
    }
}

/// Makes the largest-magnitude component real and positive. Near-ties go to
/// the lowest index so the choice is reproducible.
pub fn fix_phase(v: &mut [Complex64]) {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|z| z.norm() >= max * (1.0 - 1e-9))
        .unwrap_or(0);
    let phase = v[pivot].conj() / v[pivot].norm();
    for z in v.iter_mut() {
        *z *= phase;
    }
    v[pivot] = Complex64::new(v[pivot].re, 0.0);
}

/// Eigendecomposition with the default tolerance `1e-8 * ||H||`.
pub fn eigendecompose(h: &HamiltonianMatrix) -> Result<Spectrum> {
    eigendecompose_with_tol(h, None)
}

/// Eigendecomposition with an explicit absolute zero tolerance.
pub fn eigendecompose_with_tol(h: &HamiltonianMatrix, zero_tol: Option<f64>) -> Result<Spectrum> {
    let n = h.dim();
    let eig = nalgebra::SymmetricEigen::try_new(h.matrix.clone(), f64::EPSILON, 0)
        .ok_or(Error::SolverNonConvergence { dim: n })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = DMatrix::<Complex64>::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v: Vec<Complex64> = eig.eigenvectors.column(k).iter().copied().collect();
        fix_phase(&mut v);
        eigenvectors.set_column(col, &DVector::from_vec(v));
    }

    let norm = eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let zero_tol = zero_tol.unwrap_or(ZERO_TOL_REL * norm.max(f64::MIN_POSITIVE));

    let mut by_magnitude: Vec<usize> = (0..n).collect();
    by_magnitude.sort_by(|&a, &b| eigenvalues[a].abs().total_cmp(&eigenvalues[b].abs()));
    let mut zero_indices: Vec<usize> = by_magnitude
        .iter()
        .copied()
        .take_while(|&k| eigenvalues[k].abs() < zero_tol)
        .collect();
    if let Some(cap) = known_zero_count(h.lattice, h.phi) {
        zero_indices.truncate(cap);
        // Near a crossing the flat states are still the smallest |E|.
        if zero_indices.len() < cap {
            zero_indices = by_magnitude[..cap].to_vec();
        }
    }

    let mut spectrum = Spectrum {
        lattice: h.lattice,
        phi: h.phi,
        eigenvalues,
        eigenvectors,
        zero_indices,
        eps: None,
        zero_tol,
    };
    spectrum.eps = identify_eps_states(&spectrum).ok();
    Ok(spectrum)
}

/// Returns `(eps_plus, eps_minus)`: the smallest positive and the
/// largest negative eigenvalue outside the zero subspace.
pub fn identify_eps_states(spec: &Spectrum) -> Result<(usize, usize)> {
    if spec.lattice.boundary == Boundary::Open && at_crossing(spec.phi) {
        return Err(Error::DegenerateAtCrossing {
            phi: spec.phi,
            magnitude: 0.0,
        });
    }
    let in_zero = |k: usize| spec.zero_indices.contains(&k);
    let plus = (0..spec.dim())
        .filter(|&k| !in_zero(k) && spec.eigenvalues[k] > 0.0)
        .min_by(|&a, &b| spec.eigenvalues[a].total_cmp(&spec.eigenvalues[b]));
    let minus = (0..spec.dim())
        .filter(|&k| !in_zero(k) && spec.eigenvalues[k] < 0.0)
        .max_by(|&a, &b| spec.eigenvalues[a].total_cmp(&spec.eigenvalues[b]));
    let (Some(plus), Some(minus)) = (plus, minus) else {
        return Err(Error::Numeric("no dispersive pair outside the zero subspace".into()));
    };
    let (ep, em) = (spec.eigenvalues[plus], spec.eigenvalues[minus]);
    let magnitude = ep.abs().min(em.abs());
    if magnitude < spec.zero_tol {
        return Err(Error::DegenerateAtCrossing {
            phi: spec.phi,
            magnitude,
        });
    }
    if (ep + em).abs() > 1e-10 * spec.norm().max(1.0) {
        return Err(Error::Numeric(format!(
            "epsilon pair is not symmetric: {ep} vs {em}"
        )));
    }
    Ok((plus, minus))
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Spectral norm `max |E|`.
    pub fn norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn vector(&self, k: usize) -> DVector<Complex64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// Columns spanning the zero-energy subspace.
    pub fn flat_basis(&self) -> DMatrix<Complex64> {
        self.eigenvectors.select_columns(&self.zero_indices)
    }

    pub fn eps_plus(&self) -> Option<usize> {
        self.eps.map(|(p, _)| p)
    }

    pub fn eps_minus(&self) -> Option<usize> {
        self.eps.map(|(_, m)| m)
    }

    /// Largest `||H v - lambda v||` over all pairs.
    pub fn max_residual(&self, h: &HamiltonianMatrix) -> f64 {
        let hv = &h.matrix * &self.eigenvectors;
        (0..self.dim())
            .map(|k| (hv.column(k) - self.eigenvectors.column(k) * Complex64::from(self.eigenvalues[k])).norm())
            .fold(0.0, f64::max)
    }

    /// Largest entry of `|V^dagger V - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.eigenvectors.adjoint() * &self.eigenvectors;
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - Complex64::from(target)).norm());
            }
        }
        worst
    }

    /// Largest `|lambda_k + lambda_{n-1-k}|`: distance from particle-hole symmetry.
    pub fn symmetry_error(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|k| (self.eigenvalues[k] + self.eigenvalues[n - 1 - k]).abs())
            .fold(0.0, f64::max)
    }

    /// Total probability of eigenvector `k` on A sites.
    pub fn a_weight(&self, table: &SiteTable, k: usize) -> f64 {
        table
            .range(Sublattice::A)
            .map(|i| self.eigenvectors[(i, k)].norm_sqr())
            .sum()
    }
}

/// Singular values of the A-to-(B,C) hopping block, descending.
fn hopping_block_singular_values(table: &SiteTable, h: &HamiltonianMatrix) -> Vec<f64> {
    let a = table.range(Sublattice::A);
    let bc = a.end..table.len();
    let block = h.matrix.view((a.start, bc.start), (a.len(), bc.len())).into_owned();
    let mut sv: Vec<f64> = block.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Zero modes split by sublattice support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroModeCount {
    /// Localized states living on B and C sites only: the flat band proper.
    pub flat: usize,
    /// Zero modes supported on A sites (the Dirac-point state at `2 pi n`).
    pub a_supported: usize,
}

impl ZeroModeCount {
    pub fn total(&self) -> usize {
        self.flat + self.a_supported
    }
}

/// Counts zero modes through the rank of the bipartite hopping block, with
/// singular values below `tol` treated as zero.
pub fn zero_mode_count(table: &SiteTable, h: &HamiltonianMatrix, tol: f64) -> ZeroModeCount {
    let sv = hopping_block_singular_values(table, h);
    let rank = sv.iter().filter(|&&s| s >= tol).count();
    let n_a = table.count(Sublattice::A);
    let n_bc = table.len() - n_a;
    ZeroModeCount {
        flat: n_bc - rank,
        a_supported: n_a - rank,
    }
}

/// Flat-band degeneracy at the default `1e-8 * ||H||` classification.
pub fn flat_band_degeneracy(table: &SiteTable, h: &HamiltonianMatrix) -> usize {
    let sv = hopping_block_singular_values(table, h);
    let norm = sv.first().copied().unwrap_or(0.0);
    zero_mode_count(table, h, ZERO_TOL_REL * norm).flat
}

/// Spectra over a flux grid; one row per flux value, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterfly {
    pub lattice: LatticeSpec,
    pub gauge: GaugeConfig,
    pub rows: Vec<(f64, Vec<f64>)>,
}

pub fn butterfly_sweep(spec: LatticeSpec, gauge: GaugeConfig, phi_grid: &[f64]) -> Result<Butterfly> {
    if spec.boundary != Boundary::Open {
        return Err(Error::InvalidLattice("butterfly sweeps need an open lattice".into()));
    }
    let table = build_lattice(spec)?;
    let rows = phi_grid
        .par_iter()
        .map(|&phi| {
            let h = assemble(&table, phi, gauge)?;
            let s = eigendecompose(&h)?;
            Ok((phi, s.eigenvalues))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Butterfly {
        lattice: spec,
        gauge,
        rows,
    })
}

impl Butterfly {
    pub fn header(&self) -> String {
        let dim = self.rows.first().map_or(0, |r| r.1.len());
        let mut h = String::from("phi");
        for k in 1..=dim {
            h.push_str(&format!(",e_{k}"));
        }
        h
    }

    /// CSV body: header plus one row per flux value.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for (phi, e) in &self.rows {
            out.push_str(&fmt_f64(*phi));
            for x in e {
                out.push(',');
                out.push_str(&fmt_f64(*x));
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of the zero-flux periodic band comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandCheck {
    pub max_deviation: f64,
    pub zero_dimension: usize,
    pub compared: usize,
}

/// Dispersive band energy `E+(k) = 2 sqrt(cos^2(kx/2) + cos^2(ky/2))`.
pub fn dispersive_band(kx: f64, ky: f64) -> f64 {
    2.0 * ((kx / 2.0).cos().powi(2) + (ky / 2.0).cos().powi(2)).sqrt()
}

/// Compares the nonzero spectrum of a periodic zero-flux lattice with
/// `{+-E(k)}` on the grid `k = 2 pi n / L`.
pub fn check_dispersive_bands(spec: LatticeSpec) -> Result<BandCheck> {
    if spec.boundary != Boundary::Periodic {
        return Err(Error::InvalidLattice("band check needs a periodic lattice".into()));
    }
    let table = build_lattice(spec)?;
    let h = assemble(&table, 0.0, GaugeConfig::CENTERED)?;
    let s = eigendecompose(&h)?;
    let tol = s.zero_tol;

    let mut expected = Vec::with_capacity(2 * spec.cells());
    for nx in 1..=spec.nx {
        for ny in 1..=spec.ny {
            let e = dispersive_band(
                2.0 * PI * nx as f64 / spec.nx as f64,
                2.0 * PI * ny as f64 / spec.ny as f64,
            );
            expected.push(e);
            expected.push(-e);
        }
    }
    let mut expected: Vec<f64> = expected.into_iter().filter(|e| e.abs() >= tol).collect();
    let mut found: Vec<f64> = s.eigenvalues.iter().copied().filter(|e| e.abs() >= tol).collect();
    expected.sort_by(f64::total_cmp);
    found.sort_by(f64::total_cmp);
    if expected.len() != found.len() {
        return Err(Error::Numeric(format!(
            "expected {} dispersive levels, found {}",
            expected.len(),
            found.len()
        )));
    }
    let max_deviation = expected
        .iter()
        .zip(&found)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(BandCheck {
        max_deviation,
        zero_dimension: s.eigenvalues.len() - found.len(),
        compared: found.len(),
    })
}

/// Rotates `basis` by the unitary `R` minimizing `||basis R - reference||`.
pub fn procrustes_align(reference: &DMatrix<Complex64>, basis: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let m = basis.adjoint() * reference;
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return basis.clone();
    };
    basis * (u * v_t)
}

/// Groups ascending eigenvalues into near-degenerate clusters. The zero
/// subspace always forms a single cluster.
pub fn clusters(spec: &Spectrum, tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let is_zero = |k: usize| spec.zero_indices.contains(&k);
    for k in 0..spec.dim() {
        let joins = match out.last() {
            Some(prev) => {
                let last = *prev.last().unwrap();
                (is_zero(k) && is_zero(last))
                    || (!is_zero(k) && !is_zero(last) && spec.eigenvalues[k] - spec.eigenvalues[last] < tol)
            }
            None => false,
        };
        if joins {
            out.last_mut().unwrap().push(k);
        } else {
            out.push(vec![k]);
        }
    }
    out
}

/// Threshold on `1 - |<prev_k|next_k>|` beyond which bases count as misaligned.
pub const ALIGNMENT_LIMIT: f64 = 0.1;

/// Re-expresses `next`'s eigenvectors so each degenerate cluster (and each
/// single vector's phase) follows `prev` continuously.
///
/// Fails with `MisalignedBasis` when the sorted levels do not correspond,
/// e.g. when two dispersive levels crossed between the two flux values.
pub fn align_spectrum(prev: &Spectrum, next: &mut Spectrum) -> Result<f64> {
    if prev.dim() != next.dim() {
        return Err(Error::DimensionMismatch {
            expected: prev.dim(),
            got: next.dim(),
        });
    }
    let tol = 1e-7 * next.norm().max(1.0);
    for cluster in clusters(next, tol) {
        let reference = prev.eigenvectors.select_columns(&cluster);
        let current = next.eigenvectors.select_columns(&cluster);
        let aligned = procrustes_align(&reference, &current);
        for (slot, &k) in cluster.iter().enumerate() {
            next.eigenvectors.set_column(k, &aligned.column(slot));
        }
    }
    let overlap = prev.eigenvectors.adjoint() * &next.eigenvectors;
    let deviation = (0..next.dim())
        .map(|k| 1.0 - overlap[(k, k)].norm())
        .fold(0.0, f64::max);
    if deviation > ALIGNMENT_LIMIT {
        return Err(Error::MisalignedBasis { deviation });
    }
    Ok(deviation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    fn spectrum(nx: usize, ny: usize, phi: f64, g: GaugeConfig) -> (SiteTable, HamiltonianMatrix, Spectrum) {
        let t = build_lattice(LatticeSpec::open(nx, ny)).unwrap();
        let h = assemble(&t, phi, g).unwrap();
        let s = eigendecompose(&h).unwrap();
        (t, h, s)
    }

    /// Oracle: the 8-site ring with hopping -1 has energies -2 cos(2 pi k / 8).
    #[test]
    fn single_plaquette_is_an_eight_ring() {
        let (t, h, s) = spectrum(1, 1, 0.0, GaugeConfig::CENTERED);
        let mut ring: Vec<f64> = (0..8).map(|k| -2.0 * (2.0 * PI * k as f64 / 8.0).cos()).collect();
        ring.sort_by(f64::total_cmp);
        for (a, b) in ring.iter().zip(&s.eigenvalues) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(flat_band_degeneracy(&t, &h), 1);
        assert_eq!(s.zero_indices.len(), 2);
    }

    #[test]
    fn flat_band_degeneracy_small_lattices() {
        let (t, h, s) = spectrum(2, 2, 0.0, GaugeConfig::CENTERED);
        assert_eq!(flat_band_degeneracy(&t, &h), 4);
        assert_eq!(s.zero_indices.len(), 5);
        let (t, h, s) = spectrum(2, 2, PI, GaugeConfig::CENTERED);
        assert_eq!(flat_band_degeneracy(&t, &h), 3);
        assert_eq!(s.zero_indices.len(), 3);
        let z = zero_mode_count(&t, &h, 1e-8 * s.norm());
        assert_eq!(z, ZeroModeCount { flat: 3, a_supported: 0 });
    }

    #[test]
    fn spectrum_invariants() {
        for (nx, ny, phi) in [(2, 2, 0.7), (3, 2, PI), (4, 4, 0.1), (1, 1, 2.0)] {
            let (_, h, s) = spectrum(nx, ny, phi, GaugeConfig::new(-4.0, 1.0));
            let scale = s.norm();
            assert!(s.max_residual(&h) <= 1e-10 * scale);
            assert!(s.orthonormality_error() < 1e-10);
            assert!(s.symmetry_error() < 1e-10);
            assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn phase_convention() {
        let (_, _, s) = spectrum(2, 2, 1.1, GaugeConfig::new(1.0, 2.0));
        for k in 0..s.dim() {
            let col: Vec<Complex64> = s.eigenvectors.column(k).iter().copied().collect();
            let max = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let pivot = col.iter().find(|z| z.norm() >= max * (1.0 - 1e-9)).unwrap();
            assert_eq!(pivot.im, 0.0);
            assert!(pivot.re > 0.0);
        }
    }

    #[test]
    fn eps_pair_near_zero_flux() {
        // Oracle: sort |E| from the full spectrum and skip the 15 flat states.
        let (t, _, s) = spectrum(4, 4, 0.1, GaugeConfig::CENTERED);
        assert_eq!(s.zero_indices.len(), 15);
        let (p, m) = identify_eps_states(&s).unwrap();
        let mut mags: Vec<f64> = s.eigenvalues.iter().map(|e| e.abs()).collect();
        mags.sort_by(f64::total_cmp);
        assert!((s.eigenvalues[p] - mags[15]).abs() < 1e-12);
        assert!((s.eigenvalues[m] + mags[16]).abs() < 1e-12);
        assert!((s.eigenvalues[p] + s.eigenvalues[m]).abs() < 1e-10);
        for k in [p, m] {
            let a = s.a_weight(&t, k);
            assert!((a - 0.5).abs() < 0.05 * 0.5, "A weight {a}");
        }
    }

    #[test]
    fn eps_states_wind_by_quarter_turns() {
        for n in [3, 5] {
            let (t, _, s) = spectrum(n, n, 0.05, GaugeConfig::CENTERED);
            let (p, m) = s.eps.unwrap();
            let center = t.plaquettes()[(n / 2) * n + n / 2];
            let mut signs = Vec::new();
            for k in [p, m] {
                let ring: Vec<Complex64> = center.sites.iter().map(|&i| s.eigenvectors[(i, k)]).collect();
                let steps: Vec<f64> = (0..8).map(|j| (ring[(j + 1) % 8] / ring[j]).arg()).collect();
                let sign = steps[0].signum();
                for d in &steps {
                    assert!((d.abs() - PI / 2.0).abs() < 1e-3, "step {d}");
                    assert_eq!(d.signum(), sign);
                }
                signs.push(sign);
            }
            assert_eq!(signs[0], -signs[1]);
        }
    }

    #[test]
    fn crossing_merges_eps_into_zero_subspace() {
        let (_, _, s) = spectrum(2, 2, 2.0 * PI, GaugeConfig::CENTERED);
        assert_eq!(s.zero_indices.len(), 5);
        assert!(matches!(identify_eps_states(&s), Err(Error::DegenerateAtCrossing { .. })));
    }

    #[test]
    fn tiny_eps_below_tolerance_is_reported() {
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        let h = assemble(&t, 2.0 * PI + 1e-6, GaugeConfig::CENTERED).unwrap();
        let s = eigendecompose_with_tol(&h, Some(1e-3)).unwrap();
        assert_eq!(s.zero_indices.len(), 3);
        assert!(matches!(identify_eps_states(&s), Err(Error::DegenerateAtCrossing { .. })));
    }

    #[test]
    fn flat_basis_has_no_a_weight_off_crossing() {
        for phi in [0.3, PI, 5.0] {
            let (t, _, s) = spectrum(3, 3, phi, GaugeConfig::new(-4.0, -4.0));
            for &k in &s.zero_indices {
                for i in t.range(Sublattice::A) {
                    assert!(s.eigenvectors[(i, k)].norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn periodic_bands() {
        assert!(dispersive_band(PI, PI).abs() < 1e-15);
        assert!((dispersive_band(0.0, 0.0) - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let check = check_dispersive_bands(LatticeSpec::periodic(4, 4)).unwrap();
        assert!(check.max_deviation < 1e-10);
        assert_eq!(check.zero_dimension, 18);
        assert_eq!(check.compared, 30);
    }

    #[test]
    fn butterfly_rows_and_csv() {
        let grid = [0.0, 1.0, 2.0];
        let b = butterfly_sweep(LatticeSpec::open(1, 1), GaugeConfig::CENTERED, &grid).unwrap();
        assert_eq!(b.rows.len(), 3);
        let csv = b.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "phi,e_1,e_2,e_3,e_4,e_5,e_6,e_7,e_8");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let (_, _, s) = spectrum(2, 2, 1.0, GaugeConfig::CENTERED);
        let q = s.flat_basis();
        let k = q.ncols();
        // A fixed unitary mixing of the flat basis.
        let mut mix = DMatrix::<Complex64>::identity(k, k);
        let (c, sn) = (0.6f64, 0.8f64);
        mix[(0, 0)] = Complex64::new(c, 0.0);
        mix[(0, 1)] = Complex64::new(0.0, sn);
        mix[(1, 0)] = Complex64::new(0.0, sn);
        mix[(1, 1)] = Complex64::new(c, 0.0);
        let rotated = &q * mix;
        let back = procrustes_align(&q, &rotated);
        assert!((back - q).norm() < 1e-12);
    }
}
