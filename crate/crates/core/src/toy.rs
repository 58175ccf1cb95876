//! Three-level model of a zero mode mixing with a symmetric pair `+-eps(t)`.
//!
//! `H3 = U(theta) H~3 U(theta)^T` with `H~3` coupling levels 2 and 3 by
//! `eps(t) = eps0 sin(omega1 t)` and `U` the rotation about z by
//! `theta(t) = omega2 t`. With `psi = (x, y, -i z)` for real `r = (x, y, z)`
//! the Schrodinger equation becomes the precession `r' = Omega x r`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::{comment_block, fmt_f64};

/// Largest change of the final `P0` tolerated when halving the step.
pub const HALVING_LIMIT: f64 = 1e-6;

/// Rotation angle of the eigenbasis about z.
#[derive(Clone, Default)]
pub enum RotationAngle {
    /// `theta = omega2 t`.
    #[default]
    Linear,
    /// Any other schedule `theta(t)`; `omega2` is then only used by the WKB
    /// closed form.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for RotationAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotationAngle::Linear => f.write_str("Linear"),
            RotationAngle::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyParams {
    pub eps0: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub angle: RotationAngle,
}

impl ToyParams {
    pub fn new(eps0: f64, omega1: f64, omega2: f64) -> Self {
        ToyParams {
            eps0,
            omega1,
            omega2,
            angle: RotationAngle::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0.is_finite() && self.omega1.is_finite() && self.omega2.is_finite()) {
            return Err(Error::InvalidParameter("toy parameters must be finite".into()));
        }
        if self.eps0 <= 0.0 {
            return Err(Error::InvalidParameter(format!("eps0 must be positive (got {})", self.eps0)));
        }
        Ok(())
    }

    pub fn eps(&self, t: f64) -> f64 {
        self.eps0 * (self.omega1 * t).sin()
    }

    pub fn theta(&self, t: f64) -> f64 {
        match &self.angle {
            RotationAngle::Linear => self.omega2 * t,
            RotationAngle::Custom(f) => f(t),
        }
    }

    /// Lab-frame precession vector `eps(t) (cos theta, sin theta, 0)`.
    pub fn omega_vector(&self, t: f64) -> Vector3<f64> {
        let (s, c) = self.theta(t).sin_cos();
        Vector3::new(c, s, 0.0) * self.eps(t)
    }

    /// Norm of the rotating-frame precession vector, `sqrt(eps^2 + omega2^2)`.
    pub fn omega_rot(&self, t: f64) -> f64 {
        self.eps(t).hypot(self.omega2)
    }

    /// Time of the first crossing `omega1 t = n pi` strictly after `t`.
    pub fn next_crossing(&self, t: f64) -> f64 {
        let n = (self.omega1 * t / PI).floor() + 1.0;
        n * PI / self.omega1
    }
}

/// `H3(t)`; real symmetric, stored complex.
pub fn toy_hamiltonian(t: f64, p: &ToyParams) -> Matrix3<Complex64> {
    let e = p.eps(t);
    let (s, c) = p.theta(t).sin_cos();
    Matrix3::new(0.0, 0.0, -s * e, 0.0, 0.0, c * e, -s * e, c * e, 0.0).map(Complex64::from)
}

/// `(cos theta, sin theta, 0)`.
pub fn zero_eigenvector(t: f64, p: &ToyParams) -> Vector3<Complex64> {
    let (s, c) = p.theta(t).sin_cos();
    Vector3::new(c, s, 0.0).map(Complex64::from)
}

/// Normalized eigenvector with energy `sign * eps(t)`: `(-sin, cos, sign) / sqrt 2`.
pub fn pm_eigenvector(t: f64, p: &ToyParams, sign: f64) -> Vector3<Complex64> {
    let (s, c) = p.theta(t).sin_cos();
    (Vector3::new(-s, c, sign.signum()) / 2f64.sqrt()).map(Complex64::from)
}

/// `psi = (x, y, -i z)`.
pub fn r_to_state(r: &Vector3<f64>) -> Vector3<Complex64> {
    Vector3::new(Complex64::from(r.x), Complex64::from(r.y), Complex64::new(0.0, -r.z))
}

/// Inverse of `r_to_state`; the discarded parts are zero for data that
/// started real in x, y and imaginary in z.
pub fn state_to_r(psi: &Vector3<Complex64>) -> Vector3<f64> {
    Vector3::new(psi.x.re, psi.y.re, -psi.z.im)
}

/// `Omega(t) x r`.
pub fn precession_rhs(r: &Vector3<f64>, t: f64, p: &ToyParams) -> Vector3<f64> {
    p.omega_vector(t).cross(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyState {
    pub t: f64,
    pub psi: Vector3<Complex64>,
}

impl ToyState {
    /// The zero eigenvector at `t`.
    pub fn zero_mode(t: f64, p: &ToyParams) -> Self {
        ToyState {
            t,
            psi: zero_eigenvector(t, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyRow {
    pub t: f64,
    pub psi: Vector3<Complex64>,
    pub p0: f64,
    pub energy: f64,
    pub norm: f64,
}

impl ToyRow {
    /// Real overlap `<0(t)|psi>`; its square is `p0`.
    pub fn overlap(&self, p: &ToyParams) -> f64 {
        zero_eigenvector(self.t, p).dotc(&self.psi).re
    }
}

#[derive(Debug, Clone)]
pub struct ToyTrace {
    pub params: ToyParams,
    pub dt: f64,
    pub rows: Vec<ToyRow>,
    pub halving_change: Option<f64>,
}

impl ToyTrace {
    pub fn max_norm_drift(&self) -> f64 {
        self.rows.iter().map(|r| (r.norm - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_energy(&self) -> f64 {
        self.rows.iter().map(|r| r.energy.abs()).fold(0.0, f64::max)
    }

    /// Rows with `t` in `[a, b]`.
    pub fn window(&self, a: f64, b: f64) -> &[ToyRow] {
        let lo = self.rows.partition_point(|r| r.t < a);
        let hi = self.rows.partition_point(|r| r.t <= b);
        &self.rows[lo..hi]
    }

    /// CSV `t,re_x,im_x,re_y,im_y,re_z,im_z,P0,energy,norm`.
    pub fn to_csv(&self) -> String {
        let p = &self.params;
        let mut out = comment_block(&[
            "three-level trace".into(),
            format!(
                "eps0 = {}, omega1 = {}, omega2 = {}, angle = {:?}",
                fmt_f64(p.eps0),
                fmt_f64(p.omega1),
                fmt_f64(p.omega2),
                p.angle
            ),
            format!("dt = {}", fmt_f64(self.dt)),
            match self.halving_change {
                Some(d) => format!("halving_change = {}", fmt_f64(d)),
                None => "halving_change = not checked".into(),
            },
        ]);
        out.push_str("t,re_x,im_x,re_y,im_y,re_z,im_z,P0,energy,norm\n");
        for r in &self.rows {
            let mut fields = vec![fmt_f64(r.t)];
            for z in r.psi.iter() {
                fields.push(fmt_f64(z.re));
                fields.push(fmt_f64(z.im));
            }
            fields.extend([fmt_f64(r.p0), fmt_f64(r.energy), fmt_f64(r.norm)]);
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Step size satisfying `eps0 dt <= 1e-2` with margin.
pub fn default_dt(eps0: f64) -> f64 {
    2.5e-3 / eps0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyRunOptions {
    pub dt: f64,
    pub record_every: usize,
    pub check_convergence: bool,
}

impl ToyRunOptions {
    pub fn new(dt: f64) -> Self {
        ToyRunOptions {
            dt,
            record_every: 10,
            check_convergence: true,
        }
    }
}

fn measure(t: f64, psi: Vector3<Complex64>, p: &ToyParams) -> ToyRow {
    let h = toy_hamiltonian(t, p);
    let overlap = zero_eigenvector(t, p).dotc(&psi);
    ToyRow {
        t,
        psi,
        p0: overlap.norm_sqr(),
        energy: psi.dotc(&(h * psi)).re,
        norm: psi.norm(),
    }
}

fn rk4(
    p: &ToyParams,
    psi0: Vector3<Complex64>,
    t0: f64,
    t_final: f64,
    dt: f64,
    record_every: Option<usize>,
) -> (Vec<ToyRow>, Vector3<Complex64>, f64) {
    let steps = (((t_final - t0) / dt).round() as usize).max(1);
    let h = (t_final - t0) / steps as f64;
    let minus_i = Complex64::new(0.0, -1.0);
    let f = |t: f64, y: &Vector3<Complex64>| (toy_hamiltonian(t, p) * y) * minus_i;
    let mut rows = Vec::new();
    let mut psi = psi0;
    for k in 0..=steps {
        let t = t0 + k as f64 * h;
        if record_every.is_some_and(|every| k % every == 0 || k == steps) {
            rows.push(measure(t, psi, p));
        }
        if k == steps {
            break;
        }
        let hc = Complex64::from(h);
        let half = Complex64::from(h / 2.0);
        let k1 = f(t, &psi);
        let k2 = f(t + h / 2.0, &(psi + k1 * half));
        let k3 = f(t + h / 2.0, &(psi + k2 * half));
        let k4 = f(t + h, &(psi + k3 * hc));
        psi += (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4) * (hc / 6.0);
    }
    (rows, psi, h)
}

/// Classical RK4 on `i psi' = H3 psi` from `initial.t` to `t_final`.
pub fn integrate_toy(p: &ToyParams, initial: &ToyState, t_final: f64, options: ToyRunOptions) -> Result<ToyTrace> {
    p.validate()?;
    if !(options.dt > 0.0 && options.dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive (got {})", options.dt)));
    }
    if options.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be at least 1".into()));
    }
    if !(t_final > initial.t && t_final.is_finite()) {
        return Err(Error::InvalidParameter("t_final must exceed the initial time".into()));
    }
    let norm = initial.psi.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("initial state must be normalized (norm {norm})")));
    }

    let run = || rk4(p, initial.psi, initial.t, t_final, options.dt, Some(options.record_every));
    let (rows, h, halving_change) = if options.check_convergence {
        let ((rows, psi, h), (_, psi_half, _)) =
            rayon::join(run, || rk4(p, initial.psi, initial.t, t_final, options.dt / 2.0, None));
        let z = zero_eigenvector(t_final, p);
        let change = (z.dotc(&psi).norm_sqr() - z.dotc(&psi_half).norm_sqr()).abs();
        if change > HALVING_LIMIT {
            return Err(Error::NotConverged {
                quantity: "final zero-mode projection",
                change,
                limit: HALVING_LIMIT,
            });
        }
        (rows, h, Some(change))
    } else {
        let (rows, _, h) = run();
        (rows, h, None)
    };
    Ok(ToyTrace {
        params: p.clone(),
        dt: h,
        rows,
        halving_change,
    })
}

/// `exp(h [a]x) r` by Rodrigues' formula.
fn rotate(a: &Vector3<f64>, r: &Vector3<f64>) -> Vector3<f64> {
    let angle = a.norm();
    if angle == 0.0 {
        return *r;
    }
    let k = a / angle;
    let (s, c) = angle.sin_cos();
    r * c + k.cross(r) * s + k * (k.dot(r) * (1.0 - c))
}

/// Integrates `r' = Omega x r` with a fourth-order commutator-free Magnus
/// scheme (two exact rotations per step), sampling like `integrate_toy`.
pub fn integrate_precession(
    p: &ToyParams,
    r0: Vector3<f64>,
    t0: f64,
    t_final: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<(f64, Vector3<f64>)>> {
    p.validate()?;
    if !(dt > 0.0 && t_final > t0 && record_every > 0) {
        return Err(Error::InvalidParameter("need dt > 0, t_final > t0 and record_every >= 1".into()));
    }
    let steps = (((t_final - t0) / dt).round() as usize).max(1);
    let h = (t_final - t0) / steps as f64;
    let sq3 = 3f64.sqrt();
    let (c1, c2) = (0.5 - sq3 / 6.0, 0.5 + sq3 / 6.0);
    let (a1, a2) = ((3.0 - 2.0 * sq3) / 12.0, (3.0 + 2.0 * sq3) / 12.0);
    let mut out = Vec::new();
    let mut r = r0;
    for k in 0..=steps {
        let t = t0 + k as f64 * h;
        if k % record_every == 0 || k == steps {
            out.push((t, r));
        }
        if k == steps {
            break;
        }
        let w1 = p.omega_vector(t + c1 * h);
        let w2 = p.omega_vector(t + c2 * h);
        r = rotate(&((w1 * a2 + w2 * a1) * h), &r);
        r = rotate(&((w1 * a1 + w2 * a2) * h), &r);
    }
    Ok(out)
}

/// Largest pointwise distance between the Schrodinger trace (mapped to `r`)
/// and a precession trajectory sampled at the same times.
pub fn trajectory_deviation(trace: &ToyTrace, precession: &[(f64, Vector3<f64>)]) -> Result<f64> {
    if trace.rows.len() != precession.len() {
        return Err(Error::DimensionMismatch {
            expected: trace.rows.len(),
            got: precession.len(),
        });
    }
    let mut worst: f64 = 0.0;
    for (row, (t, r)) in trace.rows.iter().zip(precession) {
        if (row.t - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::Numeric(format!("sample times differ: {} vs {t}", row.t)));
        }
        worst = worst.max((state_to_r(&row.psi) - r).norm());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WkbParams {
    pub c: f64,
    pub theta0: f64,
}

impl WkbParams {
    pub fn new(c: f64, theta0: f64) -> Result<Self> {
        if !(c > -1.0 && c < 1.0) {
            return Err(Error::InvalidParameter(format!("c must lie in (-1, 1) (got {c})")));
        }
        if !theta0.is_finite() {
            return Err(Error::InvalidParameter("theta0 must be finite".into()));
        }
        Ok(WkbParams { c, theta0 })
    }
}

/// Slow profile `eps/Omega`, envelope `omega2/Omega` and fast phase
/// `-(eps0/omega1) cos(omega1 t)`.
fn wkb_basis(p: &ToyParams, t: f64) -> (f64, f64, f64) {
    let omega = p.omega_rot(t);
    let phase = -(p.eps0 / p.omega1) * (p.omega1 * t).cos();
    (p.eps(t) / omega, p.omega2 / omega, phase)
}

/// Closed-form approximation of `<0(t)|psi(t)>` between crossings.
pub fn wkb_projection(w: &WkbParams, p: &ToyParams, t: f64) -> f64 {
    let (slow, envelope, phase) = wkb_basis(p, t);
    w.c * slow + (1.0 - w.c * w.c).sqrt() * envelope * (phase + w.theta0).cos()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WkbFit {
    pub params: WkbParams,
    pub rms_residual: f64,
    /// Mean fitted oscillation amplitude `sqrt(1 - c^2) omega2 / Omega`.
    pub amplitude: f64,
    pub iterations: usize,
}

fn check_window(p: &ToyParams, a: f64, b: f64) -> Result<()> {
    if a.is_nan() || b.is_nan() || b <= a {
        return Err(Error::InvalidParameter("empty fit window".into()));
    }
    if p.omega1 != 0.0 && p.next_crossing(a) <= b {
        return Err(Error::InvalidParameter(format!(
            "window [{a}, {b}] contains a crossing at t = {}",
            p.next_crossing(a)
        )));
    }
    Ok(())
}

/// Least-squares fit of `(c, theta0)` to `<0|psi>` over `[a, b]`.
///
/// Seeds from the linear problem in `(c, sqrt(1-c^2) cos theta0,
/// sqrt(1-c^2) sin theta0)` and refines with Gauss-Newton.
pub fn fit_wkb_samples(p: &ToyParams, samples: &[(f64, f64)]) -> Result<WkbFit> {
    if samples.len() < 4 {
        return Err(Error::FitDivergence("need at least four samples".into()));
    }
    let basis: Vec<(f64, f64, f64)> = samples.iter().map(|&(t, _)| wkb_basis(p, t)).collect();

    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (&(_, u), &(slow, env, phase)) in samples.iter().zip(&basis) {
        let row = Vector3::new(slow, env * phase.cos(), -env * phase.sin());
        ata += row * row.transpose();
        atb += row * u;
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::FitDivergence("singular normal equations".into()))?;
    let mut c = sol.x.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    let mut theta = sol.z.atan2(sol.y);

    let residuals = |c: f64, theta: f64| -> Vec<f64> {
        let s = (1.0 - c * c).sqrt();
        samples
            .iter()
            .zip(&basis)
            .map(|(&(_, u), &(slow, env, phase))| u - (c * slow + s * env * (phase + theta).cos()))
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();

    let mut current = cost(&residuals(c, theta));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 100 {
        iterations += 1;
        let s = (1.0 - c * c).sqrt();
        let mut jtj = nalgebra::Matrix2::<f64>::zeros();
        let mut jtr = nalgebra::Vector2::<f64>::zeros();
        for (&(_, u), &(slow, env, phase)) in samples.iter().zip(&basis) {
            let cosv = (phase + theta).cos();
            let model = c * slow + s * env * cosv;
            let j = nalgebra::Vector2::new(slow - c / s * env * cosv, -s * env * (phase + theta).sin());
            jtj += j * j.transpose();
            jtr += j * (u - model);
        }
        let Some(step) = jtj.lu().solve(&jtr) else {
            return Err(Error::FitDivergence("singular Gauss-Newton system".into()));
        };
        // Backtrack until the cost does not increase and c stays inside (-1, 1).
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let (nc, nt) = (c + lambda * step.x, theta + lambda * step.y);
            if nc.abs() < 1.0 {
                let next = cost(&residuals(nc, nt));
                if next <= current {
                    accepted = Some((nc, nt, next));
                    break;
                }
            }
            lambda /= 2.0;
        }
        let Some((nc, nt, next)) = accepted else {
            converged = true;
            break;
        };
        let moved = (nc - c).abs().max((nt - theta).abs());
        c = nc;
        theta = nt;
        current = next;
        if moved < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged || !current.is_finite() {
        return Err(Error::FitDivergence(format!("no convergence after {iterations} iterations")));
    }
    let params = WkbParams::new(c, theta.rem_euclid(2.0 * PI)).map_err(|e| Error::FitDivergence(e.to_string()))?;
    let n = samples.len() as f64;
    let s = (1.0 - c * c).sqrt();
    Ok(WkbFit {
        params,
        rms_residual: (current / n).sqrt(),
        amplitude: s * basis.iter().map(|b| b.1).sum::<f64>() / n,
        iterations,
    })
}

/// `fit_wkb_samples` on the overlap `<0|psi>` of `trace` within `[a, b]`.
pub fn fit_wkb(trace: &ToyTrace, a: f64, b: f64) -> Result<WkbFit> {
    let p = &trace.params;
    check_window(p, a, b)?;
    let samples: Vec<(f64, f64)> = trace.window(a, b).iter().map(|r| (r.t, r.overlap(p))).collect();
    fit_wkb_samples(p, &samples)
}

/// Running median over `2 half + 1` samples, truncated at the ends.
pub fn moving_median(xs: &[f64], half: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            let mut w: Vec<f64> = xs[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let m = w.len() / 2;
            if w.len() % 2 == 1 {
                w[m]
            } else {
                0.5 * (w[m - 1] + w[m])
            }
        })
        .collect()
}

/// Fast oscillation measured around one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastOscillation {
    pub t_center: f64,
    /// Half peak-to-trough of the detrended overlap `<0|psi>`.
    pub overlap_amplitude: f64,
    /// `c` from the window mean, `mean(u) / mean(eps / Omega)`.
    pub c: f64,
    /// `overlap_amplitude^2 / (1 - c^2)`, the measured `(omega2/Omega)^2`.
    pub amplitude: f64,
    pub predicted_amplitude: f64,
    /// Angular frequency from the zero-crossing spacing of detrended `P0`.
    pub frequency: f64,
    pub predicted_frequency: f64,
}

/// The WKB constant `c` of a plateau from window means,
/// `mean(<0|psi>) / mean(eps / Omega)`.
pub fn plateau_constant(trace: &ToyTrace, a: f64, b: f64) -> Result<f64> {
    let p = &trace.params;
    check_window(p, a, b)?;
    let rows = trace.window(a, b);
    if rows.is_empty() {
        return Err(Error::InvalidParameter("no samples in the window".into()));
    }
    let n = rows.len() as f64;
    let mean_u = rows.iter().map(|r| r.overlap(p)).sum::<f64>() / n;
    let mean_slow = rows.iter().map(|r| p.eps(r.t) / p.omega_rot(r.t)).sum::<f64>() / n;
    let c = mean_u / mean_slow;
    if c.is_nan() || c.abs() >= 1.0 {
        return Err(Error::Numeric(format!("window mean gives |c| = {} >= 1", c.abs())));
    }
    Ok(c)
}

/// Measures the fast oscillation in `[t_center - half_width, t_center + half_width]`.
///
/// Both signals are detrended by a moving median over one predicted period.
pub fn measure_fast_oscillation(trace: &ToyTrace, t_center: f64, half_width: f64) -> Result<FastOscillation> {
    let p = &trace.params;
    let (a, b) = (t_center - half_width, t_center + half_width);
    check_window(p, a, b)?;
    let rows = trace.window(a, b);
    if rows.len() < 16 {
        return Err(Error::InvalidParameter("too few samples in the window".into()));
    }
    let spacing = (rows[rows.len() - 1].t - rows[0].t) / (rows.len() - 1) as f64;
    let predicted_frequency = p.omega_rot(t_center);
    let period = 2.0 * PI / predicted_frequency;
    let half = ((period / spacing / 2.0).round() as usize).max(1);
    if 2 * half + 1 > rows.len() {
        return Err(Error::InvalidParameter("window shorter than one oscillation period".into()));
    }

    let u: Vec<f64> = rows.iter().map(|r| r.overlap(p)).collect();
    let u_trend = moving_median(&u, half);
    // Ignore the edges where the median window is truncated.
    let inner = half..rows.len() - half;
    let du: Vec<f64> = inner.clone().map(|i| u[i] - u_trend[i]).collect();
    let max = du.iter().copied().fold(f64::MIN, f64::max);
    let min = du.iter().copied().fold(f64::MAX, f64::min);
    let overlap_amplitude = (max - min) / 2.0;

    let c = plateau_constant(trace, a, b)?;

    let p0: Vec<f64> = rows.iter().map(|r| r.p0).collect();
    let p0_trend = moving_median(&p0, half);
    let dp: Vec<(f64, f64)> = inner.map(|i| (rows[i].t, p0[i] - p0_trend[i])).collect();
    // A median is itself a sample, so exact zeros are common: only sign
    // changes between nonzero samples count.
    let mut crossings = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    for &(t2, y2) in dp.iter().filter(|d| d.1 != 0.0) {
        if let Some((t1, y1)) = last {
            if (y1 < 0.0) != (y2 < 0.0) {
                crossings.push(t1 + (t2 - t1) * y1 / (y1 - y2));
            }
        }
        last = Some((t2, y2));
    }
    if crossings.len() < 3 {
        return Err(Error::Numeric("fewer than three zero crossings in the window".into()));
    }
    let span = crossings[crossings.len() - 1] - crossings[0];
    let frequency = PI * (crossings.len() - 1) as f64 / span;

    let g = p.omega2 / predicted_frequency;
    Ok(FastOscillation {
        t_center,
        overlap_amplitude,
        c,
        amplitude: overlap_amplitude * overlap_amplitude / (1.0 - c * c),
        predicted_amplitude: g * g,
        frequency,
        predicted_frequency,
    })
}

/// Mean angular velocity of the transverse components in the frame that
/// co-rotates with the zero mode; its sign gives the precession chirality.
pub fn precession_chirality(trace: &ToyTrace, a: f64, b: f64) -> Result<f64> {
    let p = &trace.params;
    let rows = trace.window(a, b);
    if rows.len() < 2 {
        return Err(Error::InvalidParameter("too few samples in the window".into()));
    }
    let angle = |row: &ToyRow| {
        let r = state_to_r(&row.psi);
        let (s, c) = p.theta(row.t).sin_cos();
        // transverse axis in the xy plane, then z
        let y_rot = -s * r.x + c * r.y;
        r.z.atan2(y_rot)
    };
    let mut total = 0.0;
    let mut prev = angle(&rows[0]);
    for row in &rows[1..] {
        let next = angle(row);
        let mut d = next - prev;
        d -= (2.0 * PI) * (d / (2.0 * PI)).round();
        total += d;
        prev = next;
    }
    Ok(total / (rows[rows.len() - 1].t - rows[0].t))
}
