//! Quasi-adiabatic time evolution under a linear flux ramp.
//!
//! Each step freezes `H` at the midpoint flux and applies its exact
//! exponential. Rows of the trace are measured in the instantaneous
//! eigenbasis at the recorded flux.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{FluxFamily, FluxSchedule, GaugeConfig, HamiltonianMatrix};
use crate::io::{comment_block, fmt_f64};
use crate::lattice::{Boundary, LatticeSpec, SiteTable};
use crate::localized::{project_flat, StateVector};
use crate::spectral::{align_spectrum, at_crossing, clusters, eigendecompose, procrustes_align, Spectrum, ALIGNMENT_LIMIT};

pub const DEFAULT_DPHI_STEP: f64 = 1e-3;
/// Largest change of the final projection tolerated when halving the step.
pub const HALVING_LIMIT: f64 = 1e-6;

/// `exp(-i M dt) v` for Hermitian `M`.
fn exp_apply(m: DMatrix<Complex64>, v: &DVector<Complex64>, dt: f64) -> DVector<Complex64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    // One Newton-Schulz step pulls the eigenvectors back to unitarity;
    // without it the rounding bias accumulates into a visible norm drift
    // over 10^5+ steps.
    let gram = eig.eigenvectors.adjoint() * &eig.eigenvectors;
    let correction = DMatrix::<Complex64>::identity(n, n) * Complex64::from(1.5) - gram * Complex64::from(0.5);
    let vecs = &eig.eigenvectors * correction;
    let mut c = vecs.adjoint() * v;
    for (ck, e) in c.iter_mut().zip(eig.eigenvalues.iter()) {
        *ck *= Complex64::from_polar(1.0, -e * dt);
    }
    vecs * c
}

/// One step `psi -> exp(-i H dt) psi` at frozen `H`.
pub fn propagate_step(psi: &StateVector, h: &HamiltonianMatrix, dt: f64) -> StateVector {
    if dt == 0.0 {
        return psi.clone();
    }
    StateVector::from_raw(exp_apply(h.matrix.clone(), psi.amplitudes(), dt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub schedule: FluxSchedule,
    pub gauge: GaugeConfig,
    pub dphi_step: f64,
    pub record_every: usize,
    /// Repeat the run at half the step and fail if the final projection moves.
    pub check_convergence: bool,
    /// How many times the step may be halved when the check fails.
    pub max_refinements: u32,
    /// Flux values at which the full state is kept (snapped to the step grid).
    pub snapshot_phis: Vec<f64>,
}

impl EvolutionConfig {
    pub fn new(schedule: FluxSchedule, gauge: GaugeConfig) -> Self {
        EvolutionConfig {
            schedule,
            gauge,
            dphi_step: DEFAULT_DPHI_STEP,
            record_every: 10,
            check_convergence: true,
            max_refinements: 6,
            snapshot_phis: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.gauge.validate()?;
        if self.schedule.omega <= 0.0 {
            return Err(Error::InvalidParameter("evolution needs a positive flux ramp rate".into()));
        }
        if !(self.dphi_step > 0.0 && self.dphi_step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dphi_step must be positive (got {})",
                self.dphi_step
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub phi: f64,
    /// Weight in the zero-energy subspace.
    pub p: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub energy: f64,
    pub norm: f64,
    /// The epsilon pair was indistinguishable from zero; its weight is in `p`.
    pub merged: bool,
}

#[derive(Debug, Clone)]
pub struct EvolutionTrace {
    pub lattice: LatticeSpec,
    pub config: EvolutionConfig,
    pub phi_final: f64,
    /// Step actually used (the requested one, shrunk to divide the range).
    pub dphi_effective: f64,
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<(f64, StateVector)>,
    pub final_state: StateVector,
    /// `|P_final(dphi) - P_final(dphi / 2)|` when the check ran.
    pub halving_change: Option<f64>,
    /// Number of times the requested step was halved before the check passed.
    pub refinements: u32,
}

impl EvolutionTrace {
    pub fn max_norm_drift(&self) -> f64 {
        self.rows.iter().map(|r| (r.norm - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn merged_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&k| self.rows[k].merged).collect()
    }

    /// CSV `t,phi,P,w_plus,w_minus,energy,norm` behind a configuration echo.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let merged: Vec<String> = self.merged_rows().iter().map(|k| k.to_string()).collect();
        let mut out = comment_block(&[
            "evolution trace".into(),
            format!("lattice = {}x{} {:?}", self.lattice.nx, self.lattice.ny, self.lattice.boundary),
            format!("gauge = ({}, {})", fmt_f64(c.gauge.x0), fmt_f64(c.gauge.y0)),
            format!(
                "schedule: phi_init = {}, omega = {}, t0 = {}",
                fmt_f64(c.schedule.phi_init),
                fmt_f64(c.schedule.omega),
                fmt_f64(c.schedule.t0)
            ),
            format!("phi_final = {}", fmt_f64(self.phi_final)),
            format!(
                "dphi_step = {} (effective {})",
                fmt_f64(c.dphi_step),
                fmt_f64(self.dphi_effective)
            ),
            format!("record_every = {} (refinements {})", c.record_every, self.refinements),
            match self.halving_change {
                Some(d) => format!("halving_change = {}", fmt_f64(d)),
                None => "halving_change = not checked".into(),
            },
            format!("merged_rows = [{}]", merged.join(" ")),
        ]);
        out.push_str("t,phi,P,w_plus,w_minus,energy,norm\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_f64(r.t),
                fmt_f64(r.phi),
                fmt_f64(r.p),
                fmt_f64(r.w_plus),
                fmt_f64(r.w_minus),
                fmt_f64(r.energy),
                fmt_f64(r.norm)
            ));
        }
        out
    }
}

/// Weights of `psi` in the flat band and the epsilon pair at `phi`.
fn measure(family: &FluxFamily, schedule: &FluxSchedule, phi: f64, psi: &StateVector) -> Result<TraceRow> {
    let h = family.at(phi)?;
    let s = eigendecompose(&h)?;
    let coeffs = s.eigenvectors.adjoint() * psi.amplitudes();
    let w = |k: usize| coeffs[k].norm_sqr();
    let mut p: f64 = s.zero_indices.iter().map(|&k| w(k)).sum();
    let (w_plus, w_minus, merged) = match s.eps {
        Some((plus, minus)) => (w(plus), w(minus), false),
        None => {
            if !at_crossing(phi) && family.lattice().boundary == Boundary::Open {
                // The pair sits inside the tolerance band: fold the two
                // next-smallest |E| states into the projection.
                let mut rest: Vec<usize> = (0..s.dim()).filter(|k| !s.zero_indices.contains(k)).collect();
                rest.sort_by(|&a, &b| s.eigenvalues[a].abs().total_cmp(&s.eigenvalues[b].abs()));
                p += rest.iter().take(2).map(|&k| w(k)).sum::<f64>();
            }
            (0.0, 0.0, true)
        }
    };
    Ok(TraceRow {
        t: schedule.time_at(phi),
        phi,
        p,
        w_plus,
        w_minus,
        energy: psi.energy(&h),
        norm: psi.norm(),
        merged,
    })
}

struct RawRun {
    rows: Vec<TraceRow>,
    snapshots: Vec<(f64, StateVector)>,
    final_state: StateVector,
    dphi: f64,
}

fn integrate(
    family: &FluxFamily,
    initial: &StateVector,
    config: &EvolutionConfig,
    phi_final: f64,
    dphi: f64,
    record_every: Option<usize>,
) -> Result<RawRun> {
    let phi0 = config.schedule.phi_init;
    let span = phi_final - phi0;
    let steps = ((span / dphi).round() as usize).max(1);
    let h = span / steps as f64;
    let dt = h / config.schedule.omega;

    let mut snap_steps: Vec<(usize, f64)> = config
        .snapshot_phis
        .iter()
        .filter(|&&p| p >= phi0 - h && p <= phi_final + h)
        .map(|&p| {
            let k = (((p - phi0) / h).round().max(0.0) as usize).min(steps);
            (k, p)
        })
        .collect();
    snap_steps.sort_by_key(|&(k, _)| k);

    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_snap = 0;
    let mut psi = initial.amplitudes().clone();
    for k in 0..=steps {
        let phi = phi0 + k as f64 * h;
        if record_every.is_some_and(|every| k % every == 0 || k == steps) {
            rows.push(measure(family, &config.schedule, phi, &StateVector::from_raw(psi.clone()))?);
        }
        while next_snap < snap_steps.len() && snap_steps[next_snap].0 == k {
            snapshots.push((phi, StateVector::from_raw(psi.clone())));
            next_snap += 1;
        }
        if k < steps {
            let mid = phi0 + (k as f64 + 0.5) * h;
            psi = exp_apply(family.matrix_at(mid), &psi, dt);
        }
    }
    Ok(RawRun {
        rows,
        snapshots,
        final_state: StateVector::from_raw(psi),
        dphi: h,
    })
}

fn final_projection(family: &FluxFamily, phi: f64, psi: &StateVector) -> Result<f64> {
    let s = eigendecompose(&family.at(phi)?)?;
    Ok(project_flat(psi, &s)?.value)
}

/// Evolves a flat-band state from `schedule.phi_init` to `phi_final`.
///
/// With `check_convergence`, the run is repeated at half the step; while the
/// final projection moves by more than `HALVING_LIMIT` the step is halved
/// again, up to `max_refinements` times, after which `NotConverged` is returned.
pub fn run_evolution(
    table: &SiteTable,
    initial: &StateVector,
    config: &EvolutionConfig,
    phi_final: f64,
) -> Result<EvolutionTrace> {
    config.validate()?;
    if !phi_final.is_finite() || phi_final <= config.schedule.phi_init {
        return Err(Error::InvalidParameter(format!(
            "phi_final must exceed phi_init (got {phi_final})"
        )));
    }
    if initial.dim() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            got: initial.dim(),
        });
    }
    let family = FluxFamily::new(table, config.gauge)?;
    let start = eigendecompose(&family.at(config.schedule.phi_init)?)?;
    let projection = project_flat(initial, &start)?.value;
    if (projection - 1.0).abs() > 1e-8 {
        return Err(Error::NotFlatBand { projection });
    }

    let mut dphi = config.dphi_step;
    let mut every = config.record_every;
    if !config.check_convergence {
        let run = integrate(&family, initial, config, phi_final, dphi, Some(every))?;
        return Ok(finish(table, config, phi_final, run, None, 0));
    }

    // Both members of each pair record, so a refined base is ready to return.
    let (first, second) = rayon::join(
        || integrate(&family, initial, config, phi_final, dphi, Some(every)),
        || integrate(&family, initial, config, phi_final, dphi / 2.0, Some(every * 2)),
    );
    let (mut base, mut half) = (first?, second?);
    let mut refinements = 0;
    loop {
        let p1 = final_projection(&family, phi_final, &base.final_state)?;
        let p2 = final_projection(&family, phi_final, &half.final_state)?;
        let change = (p1 - p2).abs();
        if change <= HALVING_LIMIT {
            return Ok(finish(table, config, phi_final, base, Some(change), refinements));
        }
        if refinements == config.max_refinements {
            return Err(Error::NotConverged {
                quantity: "final flat-band projection",
                change,
                limit: HALVING_LIMIT,
            });
        }
        refinements += 1;
        dphi /= 2.0;
        every *= 2;
        base = half;
        half = integrate(&family, initial, config, phi_final, dphi / 2.0, Some(every * 2))?;
    }
}

fn finish(
    table: &SiteTable,
    config: &EvolutionConfig,
    phi_final: f64,
    run: RawRun,
    halving_change: Option<f64>,
    refinements: u32,
) -> EvolutionTrace {
    EvolutionTrace {
        lattice: table.spec(),
        config: config.clone(),
        phi_final,
        dphi_effective: run.dphi,
        rows: run.rows,
        snapshots: run.snapshots,
        final_state: run.final_state,
        halving_change,
        refinements,
    }
}

/// Non-adiabatic coupling `D_ij = <d eps_i / dt | eps_j>` in the eigenbasis at `phi`.
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    pub phi: f64,
    pub entries: DMatrix<Complex64>,
    /// `max |D_ij + conj(D_ji)|`.
    pub anti_hermiticity: f64,
    pub alignment_deviation: f64,
}

/// One-sided finite difference between two phase-aligned spectra.
pub fn compute_d(at_phi: &Spectrum, at_phi_plus: &Spectrum, dphi_dt: f64, delta_phi: f64) -> Result<CouplingMatrix> {
    if at_phi.dim() != at_phi_plus.dim() {
        return Err(Error::DimensionMismatch {
            expected: at_phi.dim(),
            got: at_phi_plus.dim(),
        });
    }
    if !(delta_phi != 0.0 && delta_phi.is_finite()) {
        return Err(Error::InvalidParameter("delta_phi must be finite and nonzero".into()));
    }
    let n = at_phi.dim();
    // overlap[(i, j)] = <eps_i(phi + delta) | eps_j(phi)>
    let overlap = at_phi_plus.eigenvectors.adjoint() * &at_phi.eigenvectors;
    let alignment_deviation = (0..n).map(|k| 1.0 - overlap[(k, k)].norm()).fold(0.0, f64::max);
    if alignment_deviation > ALIGNMENT_LIMIT {
        return Err(Error::MisalignedBasis {
            deviation: alignment_deviation,
        });
    }
    let scale = Complex64::from(dphi_dt / delta_phi);
    let entries = (overlap - DMatrix::<Complex64>::identity(n, n)) * scale;
    let mut anti_hermiticity: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            anti_hermiticity = anti_hermiticity.max((entries[(i, j)] + entries[(j, i)].conj()).norm());
        }
    }
    Ok(CouplingMatrix {
        phi: at_phi.phi,
        entries,
        anti_hermiticity,
        alignment_deviation,
    })
}

/// Spectra at `phi` and `phi + delta` with the second aligned to the first.
pub fn aligned_pair(family: &FluxFamily, phi: f64, delta: f64) -> Result<(Spectrum, Spectrum)> {
    let s0 = eigendecompose(&family.at(phi)?)?;
    let mut s1 = eigendecompose(&family.at(phi + delta)?)?;
    align_spectrum(&s0, &mut s1)?;
    Ok((s0, s1))
}

/// `|D_{+,0}|` at `phi`: the norm of the coupling from the epsilon-plus state
/// into the whole flat band, `omega * ||P_flat(phi) eps_+(phi + delta)|| / delta`.
///
/// Independent of the basis chosen inside the degenerate flat band.
pub fn flat_coupling_rate(family: &FluxFamily, phi: f64, omega: f64, delta: f64) -> Result<f64> {
    let s0 = eigendecompose(&family.at(phi)?)?;
    let s1 = eigendecompose(&family.at(phi + delta)?)?;
    let plus = s1.eps_plus().ok_or(Error::DegenerateAtCrossing {
        phi: phi + delta,
        magnitude: 0.0,
    })?;
    let eps = s1.vector(plus);
    let coeffs = s0.flat_basis().adjoint() * eps;
    Ok(omega * coeffs.norm() / delta.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    /// Crossing index `n` in `phi = 2 pi n`.
    pub crossing: u32,
    /// Offset above the crossing where the rate is evaluated.
    pub eta: f64,
    pub delta: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            crossing: 1,
            eta: 1e-3,
            delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub gauge: GaugeConfig,
    pub r: f64,
    pub rate: f64,
}

/// Least-squares line; `r_squared` is the coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LineFit {
    pub fn fit(xs: &[f64], ys: &[f64]) -> LineFit {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = my - slope * mx;
        LineFit {
            slope,
            intercept,
            r_squared: r_squared(xs, ys, slope, intercept),
        }
    }

    /// Line constrained through the origin.
    pub fn fit_origin(xs: &[f64], ys: &[f64]) -> LineFit {
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        LineFit {
            slope,
            intercept: 0.0,
            r_squared: r_squared(xs, ys, slope, 0.0),
        }
    }
}

fn r_squared(xs: &[f64], ys: &[f64], slope: f64, intercept: f64) -> f64 {
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

#[derive(Debug, Clone)]
pub struct RateScaling {
    pub lattice: LatticeSpec,
    pub omega: f64,
    pub phi: f64,
    pub options: RateOptions,
    pub points: Vec<RatePoint>,
    pub fit: LineFit,
    pub origin_fit: LineFit,
}

impl RateScaling {
    /// CSV `r,rate` behind the fit summary.
    pub fn to_csv(&self) -> String {
        let mut lines = vec![
            "rate scaling".to_string(),
            format!("lattice = {}x{} {:?}", self.lattice.nx, self.lattice.ny, self.lattice.boundary),
            format!("omega = {}", fmt_f64(self.omega)),
            format!(
                "phi = {} (crossing {} + eta {}), delta = {}",
                fmt_f64(self.phi),
                self.options.crossing,
                fmt_f64(self.options.eta),
                fmt_f64(self.options.delta)
            ),
        ];
        for p in &self.points {
            lines.push(format!("center = ({}, {})", fmt_f64(p.gauge.x0), fmt_f64(p.gauge.y0)));
        }
        lines.push(format!(
            "fit: slope = {}, intercept = {}, r_squared = {}",
            fmt_f64(self.fit.slope),
            fmt_f64(self.fit.intercept),
            fmt_f64(self.fit.r_squared)
        ));
        lines.push(format!(
            "origin fit: slope = {}, r_squared = {}",
            fmt_f64(self.origin_fit.slope),
            fmt_f64(self.origin_fit.r_squared)
        ));
        let mut out = comment_block(&lines);
        out.push_str("r,rate\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", fmt_f64(p.r), fmt_f64(p.rate)));
        }
        out
    }
}

/// Coupling rate out of the flat band just past `2 pi n` for each gauge center.
pub fn rate_scaling_experiment(
    spec: LatticeSpec,
    centers: &[GaugeConfig],
    omega: f64,
    options: RateOptions,
) -> Result<RateScaling> {
    if centers.is_empty() {
        return Err(Error::InvalidParameter("no gauge centers given".into()));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidParameter(format!("omega must be positive (got {omega})")));
    }
    if options.crossing == 0 {
        return Err(Error::InvalidParameter("crossing index must be at least 1".into()));
    }
    if spec.boundary != Boundary::Open {
        return Err(Error::PeriodicWithFlux { phi: TAU });
    }
    let table = crate::lattice::build_lattice(spec)?;
    let phi = TAU * options.crossing as f64 + options.eta;
    let points = centers
        .par_iter()
        .map(|&gauge| {
            let family = FluxFamily::new(&table, gauge)?;
            Ok(RatePoint {
                gauge,
                r: gauge.offset(),
                rate: flat_coupling_rate(&family, phi, omega, options.delta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.r).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rate).collect();
    Ok(RateScaling {
        lattice: spec,
        omega,
        phi,
        options,
        fit: LineFit::fit(&xs, &ys),
        origin_fit: LineFit::fit_origin(&xs, &ys),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStat {
    pub crossing: f64,
    pub delta_p: f64,
    pub mean_before: f64,
    /// Plateau mean after the crossing.
    pub mean_after: f64,
    /// Half peak-to-trough, the larger of the two windows.
    pub amplitude: f64,
}

fn window(rows: &[TraceRow], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let ps: Vec<f64> = rows.iter().filter(|r| r.phi >= lo && r.phi <= hi).map(|r| r.p).collect();
    if ps.is_empty() {
        return None;
    }
    let mean = ps.iter().sum::<f64>() / ps.len() as f64;
    let max = ps.iter().copied().fold(f64::MIN, f64::max);
    let min = ps.iter().copied().fold(f64::MAX, f64::min);
    Some((mean, (max - min) / 2.0))
}

/// Step heights at every multiple of `2 pi` covered with both windows.
pub fn staircase_stats(trace: &EvolutionTrace) -> Vec<StepStat> {
    let Some(first) = trace.rows.first() else {
        return Vec::new();
    };
    let last = trace.rows.last().unwrap();
    let n_lo = ((first.phi + PI / 2.0) / TAU).ceil() as i64;
    let n_hi = ((last.phi - PI / 2.0) / TAU).floor() as i64;
    (n_lo..=n_hi)
        .filter_map(|n| {
            let c = TAU * n as f64;
            let (before, a1) = window(&trace.rows, c - PI / 2.0, c - PI / 4.0)?;
            let (after, a2) = window(&trace.rows, c + PI / 4.0, c + PI / 2.0)?;
            Some(StepStat {
                crossing: c,
                delta_p: after - before,
                mean_before: before,
                mean_after: after,
                amplitude: a1.max(a2),
            })
        })
        .collect()
}

/// Weight of a state in one cluster of (near-)degenerate levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterWeight {
    /// Mean energy of the cluster.
    pub energy: f64,
    /// Number of levels in the cluster.
    pub size: usize,
    pub weight: f64,
}

/// Weight of `psi` in each eigenvalue cluster at `phi`, ascending in energy.
/// The flat band counts as one cluster.
pub fn cluster_weights(family: &FluxFamily, phi: f64, psi: &StateVector) -> Result<Vec<ClusterWeight>> {
    let s = eigendecompose(&family.at(phi)?)?;
    let coeffs = s.eigenvectors.adjoint() * psi.amplitudes();
    Ok(clusters(&s, 1e-7 * s.norm().max(1.0))
        .into_iter()
        .map(|c| ClusterWeight {
            energy: c.iter().map(|&k| s.eigenvalues[k]).sum::<f64>() / c.len() as f64,
            size: c.len(),
            weight: c.iter().map(|&k| coeffs[k].norm_sqr()).sum(),
        })
        .collect())
}

/// Largest change of any cluster weight between two measurements.
///
/// Levels that are degenerate at one end but split at the other are compared
/// as one block, so both lists are first coarsened to the blocks of
/// consecutive levels on which their cluster boundaries agree.
pub fn weight_drift(a: &[ClusterWeight], b: &[ClusterWeight]) -> Result<f64> {
    let levels = |w: &[ClusterWeight]| w.iter().map(|c| c.size).sum::<usize>();
    if levels(a) != levels(b) {
        return Err(Error::DimensionMismatch {
            expected: levels(a),
            got: levels(b),
        });
    }
    let (mut i, mut j) = (0, 0);
    let (mut end_a, mut end_b) = (0, 0);
    let (mut wa, mut wb) = (0.0, 0.0);
    let mut worst: f64 = 0.0;
    while i < a.len() || j < b.len() {
        if end_a <= end_b && i < a.len() {
            end_a += a[i].size;
            wa += a[i].weight;
            i += 1;
        } else {
            end_b += b[j].size;
            wb += b[j].weight;
            j += 1;
        }
        if end_a == end_b {
            worst = worst.max((wa - wb).abs());
            wa = 0.0;
            wb = 0.0;
        }
    }
    Ok(worst)
}

/// Eigenbasis followed continuously along a flux sweep. Slots keep their
/// identity through level crossings, so they are not sorted by energy.
struct TrackedBasis {
    values: Vec<f64>,
    vectors: DMatrix<Complex64>,
}

impl TrackedBasis {
    fn from_spectrum(s: Spectrum) -> Self {
        TrackedBasis {
            values: s.eigenvalues,
            vectors: s.eigenvectors,
        }
    }

    /// Rotates each degenerate cluster onto the states it splits into just
    /// above the current flux, so tracking starts from the continuous branch.
    fn resolved(start: Spectrum, probe: &Spectrum) -> TrackedBasis {
        let groups = clusters(&start, 1e-7 * start.norm().max(1.0));
        let mut basis = TrackedBasis::from_spectrum(start);
        for group in groups {
            if group.len() < 2 {
                continue;
            }
            let current = basis.vectors.select_columns(&group);
            let weights = current.adjoint() * &probe.eigenvectors;
            let mut ranked: Vec<(usize, f64)> = (0..probe.dim())
                .map(|j| (j, weights.column(j).norm_squared()))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut picks: Vec<usize> = ranked.iter().take(group.len()).map(|r| r.0).collect();
            picks.sort_unstable();
            let aligned = procrustes_align(&probe.eigenvectors.select_columns(&picks), &current);
            for (k, &slot) in group.iter().enumerate() {
                basis.vectors.set_column(slot, &aligned.column(k));
            }
        }
        basis
    }

    /// Matches each eigenvalue cluster of `next` to the slots of `self` it
    /// overlaps most, then rotates the cluster onto those slots.
    fn follow(&self, next: &Spectrum) -> Result<TrackedBasis> {
        let n = self.values.len();
        let overlap = self.vectors.adjoint() * &next.eigenvectors;
        let mut taken = vec![false; n];
        let mut values = vec![0.0; n];
        let mut vectors = DMatrix::<Complex64>::zeros(n, n);
        let mut groups = clusters(next, 1e-7 * next.norm().max(1.0));
        // Large clusters first so the flat band claims its slots before
        // single levels compete for them.
        groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
        for group in groups {
            let mut candidates: Vec<(usize, f64)> = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, group.iter().map(|&j| overlap[(i, j)].norm_sqr()).sum()))
                .collect();
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut slots: Vec<usize> = candidates.iter().take(group.len()).map(|c| c.0).collect();
            slots.sort_unstable();
            let reference = self.vectors.select_columns(&slots);
            let current = next.eigenvectors.select_columns(&group);
            let aligned = procrustes_align(&reference, &current);
            for (k, &slot) in slots.iter().enumerate() {
                taken[slot] = true;
                vectors.set_column(slot, &aligned.column(k));
                values[slot] = next.eigenvalues[group[k]];
            }
        }
        let deviation = (0..n)
            .map(|k| 1.0 - self.vectors.column(k).dotc(&vectors.column(k)).norm())
            .fold(0.0, f64::max);
        if deviation > ALIGNMENT_LIMIT {
            return Err(Error::MisalignedBasis { deviation });
        }
        Ok(TrackedBasis { values, vectors })
    }
}

/// Deepest subdivision of one step when a narrow avoided crossing rotates
/// the eigenbasis too far for overlap tracking.
const MAX_SUBDIVISION: u32 = 12;

struct BasisRun<'a> {
    family: &'a FluxFamily,
    omega: f64,
    basis: TrackedBasis,
    psi: DVector<Complex64>,
    coeffs: DVector<Complex64>,
}

impl BasisRun<'_> {
    fn advance(&mut self, phi: f64, h: f64, depth: u32) -> Result<()> {
        let next = match self.basis.follow(&eigendecompose(&self.family.at(phi + h)?)?) {
            Ok(next) => next,
            Err(Error::MisalignedBasis { .. }) if depth < MAX_SUBDIVISION => {
                self.advance(phi, h / 2.0, depth + 1)?;
                return self.advance(phi + h / 2.0, h / 2.0, depth + 1);
            }
            Err(e) => return Err(e),
        };
        let prev = &self.basis;
        let dt = h / self.omega;
        self.psi = exp_apply(self.family.matrix_at(phi + h / 2.0), &self.psi, dt);

        // D at the midpoint from the two tracked bases.
        let dv = (&next.vectors - &prev.vectors) / Complex64::from(h);
        let mid = (&next.vectors + &prev.vectors) * Complex64::from(0.5);
        let d = dv.adjoint() * mid * Complex64::from(self.omega);
        let d_anti = (&d - d.adjoint()) * Complex64::from(0.5);
        // dPsi/dt = -i K Psi with Hermitian K = H_d + i D.
        let mut kmat = d_anti * Complex64::i();
        for i in 0..self.family.dim() {
            kmat[(i, i)] += Complex64::from(0.5 * (prev.values[i] + next.values[i]));
        }
        let kmat = (&kmat + kmat.adjoint()) * Complex64::from(0.5);
        self.coeffs = exp_apply(kmat, &self.coeffs, dt);
        self.basis = next;
        Ok(())
    }
}

/// Integrates the eigenbasis coefficients with `dPsi/dt = (-i H_d + D) Psi`
/// alongside the direct propagation over `[phi_a, phi_b]`, and returns the
/// largest deviation between `Psi` and the direct overlaps `<eps_i|psi>`.
///
/// Steps across which the tracked basis turns by more than `ALIGNMENT_LIMIT`
/// are split in half, repeatedly, before `MisalignedBasis` is reported.
pub fn basis_evolution_check(
    family: &FluxFamily,
    schedule: &FluxSchedule,
    initial: &StateVector,
    phi_a: f64,
    phi_b: f64,
    dphi: f64,
) -> Result<f64> {
    if !(phi_b > phi_a && dphi > 0.0 && schedule.omega > 0.0) {
        return Err(Error::InvalidParameter("need phi_b > phi_a, dphi > 0 and a positive ramp".into()));
    }
    let steps = ((phi_b - phi_a) / dphi).round().max(1.0) as usize;
    let h = (phi_b - phi_a) / steps as f64;
    let basis = TrackedBasis::resolved(
        eigendecompose(&family.at(phi_a)?)?,
        &eigendecompose(&family.at(phi_a + h * 1e-3)?)?,
    );
    let coeffs = basis.vectors.adjoint() * initial.amplitudes();
    let mut run = BasisRun {
        family,
        omega: schedule.omega,
        basis,
        psi: initial.amplitudes().clone(),
        coeffs,
    };
    for k in 0..steps {
        run.advance(phi_a + k as f64 * h, h, 0)?;
    }
    let direct = run.basis.vectors.adjoint() * &run.psi;
    Ok((direct - run.coeffs).camax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::assemble;
    use crate::lattice::build_lattice;
    use crate::localized::build_localized_state;

    fn two_by_two(gauge: GaugeConfig) -> (SiteTable, StateVector) {
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        let h = assemble(&t, PI, gauge).unwrap();
        let psi = build_localized_state(&t, &h, [0, 1]).unwrap();
        (t, psi)
    }

    #[test]
    fn zero_step_is_identity() {
        let (t, psi) = two_by_two(GaugeConfig::CENTERED);
        let h = assemble(&t, 1.0, GaugeConfig::CENTERED).unwrap();
        assert_eq!(propagate_step(&psi, &h, 0.0), psi);
    }

    #[test]
    fn eigenstate_picks_up_a_phase() {
        let (t, _) = two_by_two(GaugeConfig::CENTERED);
        let h = assemble(&t, 0.7, GaugeConfig::CENTERED).unwrap();
        let s = eigendecompose(&h).unwrap();
        let k = s.dim() - 1;
        let psi = StateVector::new(s.vector(k)).unwrap();
        let out = propagate_step(&psi, &h, 0.37);
        let expected = psi.amplitudes() * Complex64::from_polar(1.0, -s.eigenvalues[k] * 0.37);
        assert!((out.amplitudes() - expected).camax() < 1e-12);
    }

    #[test]
    fn half_steps_compose() {
        let (t, psi) = two_by_two(GaugeConfig::CENTERED);
        let h = assemble(&t, 2.3, GaugeConfig::new(-4.0, -4.0)).unwrap();
        let full = propagate_step(&psi, &h, 1.3);
        let half = propagate_step(&propagate_step(&psi, &h, 0.65), &h, 0.65);
        assert!((full.amplitudes() - half.amplitudes()).camax() < 1e-12);
        assert!((full.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_flat_initial_state() {
        let (t, _) = two_by_two(GaugeConfig::CENTERED);
        let raw = DVector::from_element(t.len(), Complex64::new(1.0, 0.0));
        let cfg = EvolutionConfig::new(FluxSchedule::new(PI, 0.01), GaugeConfig::CENTERED);
        let err = run_evolution(&t, &StateVector::new(raw).unwrap(), &cfg, 4.0).unwrap_err();
        assert!(matches!(err, Error::NotFlatBand { .. }));
    }

    #[test]
    fn short_run_invariants() {
        let g = GaugeConfig::new(-4.0, -4.0);
        let (t, psi) = two_by_two(g);
        let mut cfg = EvolutionConfig::new(FluxSchedule::new(PI, TAU * 1e-3), g);
        cfg.snapshot_phis = vec![4.0];
        let trace = run_evolution(&t, &psi, &cfg, 5.0).unwrap();
        assert!((trace.rows[0].p - 1.0).abs() < 1e-10);
        assert!(trace.max_norm_drift() < 1e-10);
        for r in &trace.rows {
            assert!(r.p + r.w_plus + r.w_minus <= 1.0 + 1e-8);
            assert!(r.p <= 1.0 + 1e-10);
        }
        assert!(trace.halving_change.unwrap() < HALVING_LIMIT);
        assert_eq!(trace.snapshots.len(), 1);
        assert!((trace.snapshots[0].0 - 4.0).abs() < 1e-3);
        let last = trace.rows.last().unwrap();
        assert!((last.phi - 5.0).abs() < 1e-12);
        assert!((last.t - (5.0 - PI) / (TAU * 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn coarse_steps_are_refined_or_rejected() {
        let g = GaugeConfig::new(-4.0, -4.0);
        let (t, psi) = two_by_two(g);
        let mut cfg = EvolutionConfig::new(FluxSchedule::new(PI, TAU * 1e-3), g);
        cfg.dphi_step = 0.2;
        cfg.record_every = 1;
        cfg.max_refinements = 0;
        let err = run_evolution(&t, &psi, &cfg, 6.0).unwrap_err();
        assert!(err.is_convergence(), "{err}");

        cfg.max_refinements = 10;
        let trace = run_evolution(&t, &psi, &cfg, 6.0).unwrap();
        assert!(trace.refinements > 0);
        assert!(trace.halving_change.unwrap() <= HALVING_LIMIT);
        assert!((trace.dphi_effective - 0.2 / f64::from(1 << trace.refinements)).abs() < 0.02);
        // Record spacing in flux is kept while the step shrinks.
        let gap = trace.rows[1].phi - trace.rows[0].phi;
        assert!((gap - 0.2).abs() < 0.02, "{gap}");
    }

    #[test]
    fn crossing_rows_are_merged() {
        let g = GaugeConfig::CENTERED;
        let (t, psi) = two_by_two(g);
        let mut cfg = EvolutionConfig::new(FluxSchedule::new(PI, TAU * 1e-3), g);
        cfg.check_convergence = false;
        cfg.dphi_step = PI / 1000.0;
        cfg.record_every = 100;
        let trace = run_evolution(&t, &psi, &cfg, 3.0 * PI).unwrap();
        let merged = trace.merged_rows();
        assert_eq!(merged.len(), 1);
        let row = trace.rows[merged[0]];
        assert!(at_crossing(row.phi));
        assert_eq!((row.w_plus, row.w_minus), (0.0, 0.0));
        assert!(trace.to_csv().contains("# merged_rows = [10]\n"));
    }

    #[test]
    fn deterministic_csv() {
        let g = GaugeConfig::new(-4.0, -4.0);
        let (t, psi) = two_by_two(g);
        let mut cfg = EvolutionConfig::new(FluxSchedule::new(PI, TAU * 1e-3), g);
        cfg.check_convergence = false;
        let a = run_evolution(&t, &psi, &cfg, 4.0).unwrap().to_csv();
        let b = run_evolution(&t, &psi, &cfg, 4.0).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.lines().any(|l| l == "t,phi,P,w_plus,w_minus,energy,norm"));
    }

    #[test]
    fn coupling_matrix_properties() {
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        let family = FluxFamily::new(&t, GaugeConfig::new(-4.0, -4.0)).unwrap();
        let (s0, s1) = aligned_pair(&family, 2.0, 1e-5).unwrap();
        let d = compute_d(&s0, &s1, 0.0, 1e-5).unwrap();
        assert_eq!(d.entries.camax(), 0.0);

        let mut residuals = Vec::new();
        for delta in [1e-4, 5e-5] {
            let (s0, s1) = aligned_pair(&family, 2.0, delta).unwrap();
            let d = compute_d(&s0, &s1, 1.0, delta).unwrap();
            let diag = (0..d.entries.nrows()).map(|k| d.entries[(k, k)].re.abs()).fold(0.0, f64::max);
            assert!(diag < 10.0 * delta);
            residuals.push(d.anti_hermiticity);
        }
        // first order in delta
        let ratio = residuals[0] / residuals[1];
        assert!((ratio - 2.0).abs() < 0.1, "{residuals:?}");
    }

    #[test]
    fn misaligned_bases_are_detected() {
        let t = build_lattice(LatticeSpec::open(2, 2)).unwrap();
        let family = FluxFamily::new(&t, GaugeConfig::CENTERED).unwrap();
        let s0 = eigendecompose(&family.at(1.0).unwrap()).unwrap();
        let mut s1 = s0.clone();
        let n = s1.dim();
        s1.eigenvectors.swap_columns(n - 1, n - 2);
        assert!(matches!(compute_d(&s0, &s1, 1.0, 1e-5), Err(Error::MisalignedBasis { .. })));
    }

    #[test]
    fn line_fits() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = LineFit::fit(&xs, &ys);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let o = LineFit::fit_origin(&xs, &[0.0, 2.0, 4.0, 6.0]);
        assert!((o.slope - 2.0).abs() < 1e-12 && (o.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_vanishes_for_centered_gauge() {
        let spec = LatticeSpec::open(2, 2);
        let centers = [GaugeConfig::CENTERED, GaugeConfig::new(1.0, 1.0), GaugeConfig::new(2.0, 2.0)];
        let r = rate_scaling_experiment(spec, &centers, 1.0, RateOptions::default()).unwrap();
        assert!(r.points[0].rate < 1e-4 * r.points[2].rate);
        assert!((r.points[2].rate / r.points[1].rate - 2.0).abs() < 0.02);
        let csv = r.to_csv();
        assert!(csv.lines().any(|l| l == "r,rate"));
    }

    #[test]
    fn weight_drift_merges_split_levels() {
        let w = |energy: f64, size: usize, weight: f64| ClusterWeight { energy, size, weight };
        let a = [w(-1.0, 1, 0.1), w(0.0, 2, 0.6), w(1.0, 1, 0.3)];
        let b = [w(-1.0, 1, 0.1), w(-0.1, 1, 0.25), w(0.1, 1, 0.35), w(1.0, 1, 0.3)];
        assert!(weight_drift(&a, &b).unwrap() < 1e-15);
        let c = [w(-1.0, 2, 0.2), w(0.5, 1, 0.6), w(1.0, 1, 0.2)];
        assert!((weight_drift(&a, &c).unwrap() - 0.1).abs() < 1e-12);
        assert!(weight_drift(&a, &c[..1]).is_err());
    }

    #[test]
    fn staircase_windows() {
        let rows: Vec<TraceRow> = (0..=1000)
            .map(|k| {
                let phi = PI + k as f64 * (2.0 * PI / 1000.0);
                TraceRow {
                    t: 0.0,
                    phi,
                    p: if phi < TAU { 0.99 } else { 0.97 } + 1e-3 * (50.0 * phi).sin(),
                    w_plus: 0.0,
                    w_minus: 0.0,
                    energy: 0.0,
                    norm: 1.0,
                    merged: false,
                }
            })
            .collect();
        let (t, psi) = two_by_two(GaugeConfig::CENTERED);
        let trace = EvolutionTrace {
            lattice: t.spec(),
            config: EvolutionConfig::new(FluxSchedule::new(PI, 1.0), GaugeConfig::CENTERED),
            phi_final: 3.0 * PI,
            dphi_effective: 1e-3,
            rows,
            snapshots: Vec::new(),
            final_state: psi,
            halving_change: None,
            refinements: 0,
        };
        let stats = staircase_stats(&trace);
        assert_eq!(stats.len(), 1);
        assert!((stats[0].crossing - TAU).abs() < 1e-12);
        assert!((stats[0].delta_p + 0.02).abs() < 5e-4);
        assert!((stats[0].amplitude - 1e-3).abs() < 1e-5);
    }
}
