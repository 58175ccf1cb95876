//! Experiment dispatch and artifact writing.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use liebflux::evolution::{
    cluster_weights, rate_scaling_experiment, run_evolution, staircase_stats, weight_drift, EvolutionConfig,
    RateOptions,
};
use liebflux::hamiltonian::FluxFamily;
use liebflux::io::{comment_block, fmt_f64};
use liebflux::localized::default_plaquette_pair;
use liebflux::spectral::{butterfly_sweep, flat_band_degeneracy, zero_mode_count, Butterfly, ZERO_TOL_REL};
use liebflux::toy::{
    fit_wkb, integrate_toy, measure_fast_oscillation, plateau_constant, precession_chirality, ToyParams,
    ToyRunOptions, ToyState,
};
use liebflux::{assemble, build_lattice, build_localized_state, eigendecompose, project_flat, Boundary};

use crate::config::{ConfigError, Experiment, RunConfig};
use crate::plot::{self, PlotError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] liebflux::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl RunError {
    /// Process exit status: 2 for bad input, 3 convergence, 4 numeric or I/O.
    pub fn exit_code(&self) -> i32 {
        use liebflux::Error as E;
        match self {
            RunError::Config(_) | RunError::Read { .. } | RunError::Plot(_) => 2,
            RunError::Core(e) if e.is_convergence() => 3,
            RunError::Core(
                E::InvalidLattice(_)
                | E::InvalidParameter(_)
                | E::InvalidPlaquettes(_)
                | E::PeriodicWithFlux { .. }
                | E::NotFlatBand { .. },
            ) => 2,
            _ => 4,
        }
    }

    /// Machine-readable error class.
    pub fn code(&self) -> &'static str {
        match self {
            RunError::Config(ConfigError::Syntax(_)) => "config_syntax",
            RunError::Config(ConfigError::UnknownKey(_)) => "config_unknown_key",
            RunError::Config(ConfigError::MissingKey(_)) => "config_missing_key",
            RunError::Config(ConfigError::TypeMismatch { .. }) => "config_type_mismatch",
            RunError::Config(ConfigError::InvalidValue { .. }) => "config_invalid_value",
            RunError::Core(e) => e.code(),
            RunError::Io { .. } => "io_write",
            RunError::Read { .. } => "io_read",
            RunError::Plot(_) => "malformed_csv",
            RunError::Pool(_) => "worker_pool",
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` from the configuration.
    pub out_dir: Option<PathBuf>,
    pub fast: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// Emitted files relative to `out_dir`, manifest last.
    pub files: Vec<String>,
    pub summary: Vec<String>,
}

struct Artifacts {
    dir: PathBuf,
    plot: bool,
    files: Vec<String>,
    summary: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| RunError::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_plotted(&mut self, name: &str, csv: &str) -> Result<()> {
        self.write(name, csv)?;
        if self.plot {
            let svg = plot::plot_csv(csv)?;
            self.write(&name.replace(".csv", ".svg"), &svg)?;
        }
        Ok(())
    }
}

/// Runs the configured experiment, writing CSVs, optional SVGs and
/// `manifest.toml` into the output directory.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunReport> {
    let mut config = config.clone();
    if options.fast {
        config.apply_fast();
    }
    if let Some(dir) = &options.out_dir {
        config.output_dir = dir.clone();
    }
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut out = Artifacts {
        dir: dir.clone(),
        plot: config.plot,
        files: Vec::new(),
        summary: Vec::new(),
    };
    match options.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| RunError::Pool(e.to_string()))?;
            pool.install(|| dispatch(&config, &mut out))?;
        }
        None => dispatch(&config, &mut out)?,
    }
    let manifest = manifest(&config, &out.files);
    out.write("manifest.toml", &manifest)?;
    Ok(RunReport {
        out_dir: dir,
        files: out.files,
        summary: out.summary,
    })
}

fn manifest(config: &RunConfig, files: &[String]) -> String {
    let mut s = String::new();
    s.push_str("[tool]\n");
    s.push_str(&format!("name = \"{}\"\n", env!("CARGO_PKG_NAME")));
    s.push_str(&format!("version = \"{}\"\n", env!("CARGO_PKG_VERSION")));
    s.push_str("\n[outputs]\nfiles = [");
    let quoted: Vec<String> = files
        .iter()
        .map(|f| format!("\"{f}\""))
        .chain(std::iter::once("\"manifest.toml\"".to_string()))
        .collect();
    s.push_str(&quoted.join(", "));
    s.push_str("]\n\n# resolved configuration\n");
    s.push_str(&config.to_toml());
    s
}

fn dispatch(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    match config.experiment {
        Experiment::Spectrum => spectrum(config, out),
        Experiment::Evolve => evolve(config, out),
        Experiment::Toy => toy(config, out),
        Experiment::Rates => rates(config, out),
        Experiment::Localized => localized(config, out),
    }
}

fn spectrum(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = config.spectrum.as_ref().expect("validated spectrum settings");
    let grid: Vec<f64> = if s.points == 1 {
        vec![s.phi_min]
    } else {
        (0..s.points)
            .map(|k| s.phi_min + (s.phi_max - s.phi_min) * k as f64 / (s.points - 1) as f64)
            .collect()
    };
    let table = build_lattice(config.lattice)?;
    let butterfly = if config.lattice.boundary == Boundary::Periodic {
        let h = assemble(&table, 0.0, config.gauge)?;
        Butterfly {
            lattice: config.lattice,
            gauge: config.gauge,
            rows: vec![(0.0, eigendecompose(&h)?.eigenvalues)],
        }
    } else {
        butterfly_sweep(config.lattice, config.gauge, &grid)?
    };
    out.write_plotted("butterfly.csv", &butterfly.to_csv())?;

    let mut csv = String::from("phi,zero_modes,flat_degeneracy\n");
    for (phi, _) in &butterfly.rows {
        let h = assemble(&table, *phi, config.gauge)?;
        let tol = ZERO_TOL_REL * eigendecompose(&h)?.norm();
        let zeros = zero_mode_count(&table, &h, tol).total();
        let flat = flat_band_degeneracy(&table, &h);
        csv.push_str(&format!("{},{zeros},{flat}\n", fmt_f64(*phi)));
    }
    out.write("degeneracy.csv", &csv)?;
    out.summary.push(format!("{} flux points, {} levels", butterfly.rows.len(), table.len()));
    Ok(())
}

/// Plateau windows `[2 pi n + pi/4, 2 pi (n + 1) - pi/4]` clipped to the run.
pub fn plateau_windows(phi_init: f64, phi_final: f64) -> Vec<(f64, f64)> {
    let mut windows = Vec::new();
    let mut n = (phi_init / TAU).floor() as i64 - 1;
    loop {
        let a = (TAU * n as f64 + PI / 4.0).max(phi_init);
        let b = (TAU * (n + 1) as f64 - PI / 4.0).min(phi_final);
        if a >= phi_final {
            break;
        }
        if b > a {
            windows.push((a, b));
        }
        n += 1;
    }
    windows
}

fn evolve(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let e = config.evolve.as_ref().expect("validated evolve settings");
    let table = build_lattice(config.lattice)?;
    let h0 = assemble(&table, config.schedule.phi_init, config.gauge)?;
    let pair = match e.plaquettes {
        Some(p) => p,
        None => default_plaquette_pair(&table)?,
    };
    let initial = build_localized_state(&table, &h0, pair)?;
    let windows = plateau_windows(config.schedule.phi_init, e.phi_final);
    let mut ec = EvolutionConfig::new(config.schedule, config.gauge);
    ec.dphi_step = e.dphi_step;
    ec.record_every = e.record_every;
    ec.check_convergence = e.check_convergence;
    ec.max_refinements = e.max_refinements;
    ec.snapshot_phis = windows.iter().flat_map(|&(a, b)| [a, b]).collect();
    let trace = run_evolution(&table, &initial, &ec, e.phi_final)?;
    out.write_plotted("evolution.csv", &trace.to_csv())?;

    let mut csv = String::from("crossing,delta_p,mean_before,mean_after,amplitude\n");
    for s in staircase_stats(&trace) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(s.crossing),
            fmt_f64(s.delta_p),
            fmt_f64(s.mean_before),
            fmt_f64(s.mean_after),
            fmt_f64(s.amplitude)
        ));
    }
    out.write("staircase.csv", &csv)?;

    let family = FluxFamily::new(&table, config.gauge)?;
    let mut csv = String::from("phi_start,phi_end,weight_drift\n");
    for (a, b) in windows {
        let snap = |target: f64| {
            trace
                .snapshots
                .iter()
                .min_by(|x, y| (x.0 - target).abs().total_cmp(&(y.0 - target).abs()))
                .expect("snapshots requested for every plateau")
        };
        let (pa, sa) = snap(a);
        let (pb, sb) = snap(b);
        let wa = cluster_weights(&family, *pa, sa)?;
        let wb = cluster_weights(&family, *pb, sb)?;
        csv.push_str(&format!("{},{},{}\n", fmt_f64(*pa), fmt_f64(*pb), fmt_f64(weight_drift(&wa, &wb)?)));
    }
    out.write("plateau_weights.csv", &csv)?;
    out.summary.push(format!(
        "{} rows, final P = {:.6}, norm drift {:.2e}, step {:.3e} after {} refinement(s)",
        trace.rows.len(),
        trace.rows.last().map_or(f64::NAN, |r| r.p),
        trace.max_norm_drift(),
        trace.dphi_effective,
        trace.refinements
    ));
    Ok(())
}

fn toy(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let s = config.toy.as_ref().expect("validated toy settings");
    let p = ToyParams::new(s.eps0, s.omega1, s.omega2);
    let initial = ToyState::zero_mode(s.t_start, &p);
    let options = ToyRunOptions {
        dt: s.dt,
        record_every: s.record_every,
        check_convergence: s.check_convergence,
    };
    let trace = integrate_toy(&p, &initial, s.t_final, options)?;
    out.write_plotted("toy.csv", &trace.to_csv())?;

    let half = 0.1 / s.omega1;
    let mut lines = vec![
        "mid-plateau fast oscillation, windows of half-width 0.1/omega1".to_string(),
        format!("max norm drift = {}", fmt_f64(trace.max_norm_drift())),
        format!("max |energy| = {}", fmt_f64(trace.max_abs_energy())),
    ];
    let mut body = String::from(
        "t_center,c,theta0,fit_rms,fit_amplitude,amplitude,predicted_amplitude,frequency,predicted_frequency,chirality\n",
    );
    let mut n = 0;
    loop {
        let center = (n as f64 * PI + PI / 2.0) / s.omega1;
        if center + half > s.t_final {
            break;
        }
        n += 1;
        if center - half < s.t_start {
            continue;
        }
        let (a, b) = (center - half, center + half);
        let osc = measure_fast_oscillation(&trace, center, half)?;
        let fit = fit_wkb(&trace, a, b)?;
        let c = plateau_constant(&trace, a, b)?;
        let chirality = precession_chirality(&trace, a, b)?;
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(center),
            fmt_f64(c),
            fmt_f64(fit.params.theta0),
            fmt_f64(fit.rms_residual),
            fmt_f64(fit.amplitude),
            fmt_f64(osc.amplitude),
            fmt_f64(osc.predicted_amplitude),
            fmt_f64(osc.frequency),
            fmt_f64(osc.predicted_frequency),
            fmt_f64(chirality)
        ));
    }
    lines.push(format!("plateaus = {}", body.lines().count() - 1));
    let mut csv = comment_block(&lines);
    csv.push_str(&body);
    out.write("toy_plateaus.csv", &csv)?;
    out.summary.push(format!(
        "{} rows, norm drift {:.2e}, max |energy| {:.2e}",
        trace.rows.len(),
        trace.max_norm_drift(),
        trace.max_abs_energy()
    ));
    Ok(())
}

fn rates(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let r = config.rates.as_ref().expect("validated rate settings");
    let options = RateOptions {
        crossing: r.crossing,
        eta: r.eta,
        delta: r.delta,
    };
    let scaling = rate_scaling_experiment(config.lattice, &r.centers, r.omega, options)?;
    out.write("rates.csv", &scaling.to_csv())?;
    out.summary.push(format!(
        "slope {:.6e} (through origin {:.6e}, R^2 {:.6})",
        scaling.fit.slope, scaling.origin_fit.slope, scaling.origin_fit.r_squared
    ));
    Ok(())
}

fn localized(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let l = config.localized.as_ref().expect("validated localized settings");
    let table = build_lattice(config.lattice)?;
    let h = assemble(&table, l.phi, config.gauge)?;
    let pair = match l.plaquettes {
        Some(p) => p,
        None => default_plaquette_pair(&table)?,
    };
    let state = build_localized_state(&table, &h, pair)?;
    let residual = (h.apply(state.amplitudes())).norm();
    let projection = project_flat(&state, &eigendecompose(&h)?)?.value;
    let mut csv = comment_block(&[
        "two-plaquette localized state".into(),
        format!("phi = {}, plaquettes = [{} {}]", fmt_f64(l.phi), pair[0], pair[1]),
        format!("|H psi| = {}", fmt_f64(residual)),
        format!("flat-band projection = {}", fmt_f64(projection)),
    ]);
    csv.push_str(&state.to_csv(&table));
    out.write("localized_state.csv", &csv)?;
    out.summary.push(format!("|H psi| = {residual:.2e}, flat projection {projection:.12}"));
    Ok(())
}

/// Renders one CSV file to SVG next to it (or at `out`).
pub fn plot_file(input: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let text = fs::read_to_string(input).map_err(|source| RunError::Read {
        path: input.to_path_buf(),
        source,
    })?;
    let svg = plot::plot_csv(&text)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| input.with_extension("svg"));
    fs::write(&path, svg).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_windows_are_clipped_to_the_run() {
        let w = plateau_windows(PI, 7.0 * PI);
        assert_eq!(w.len(), 4);
        assert_eq!(w[0], (PI, TAU - PI / 4.0));
        assert!((w[1].0 - (TAU + PI / 4.0)).abs() < 1e-12);
        assert!((w[2].1 - (3.0 * TAU - PI / 4.0)).abs() < 1e-12);
        assert_eq!(w[3].1, 7.0 * PI);
        assert_eq!(plateau_windows(TAU - 0.1, TAU + 0.1).len(), 0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Config(ConfigError::MissingKey("x".into())).exit_code(), 2);
        let nc = liebflux::Error::NotConverged {
            quantity: "P",
            change: 1.0,
            limit: 1e-6,
        };
        assert_eq!(RunError::Core(nc).exit_code(), 3);
        assert_eq!(RunError::Core(liebflux::Error::Numeric("x".into())).exit_code(), 4);
        assert_eq!(RunError::Core(liebflux::Error::InvalidParameter("x".into())).exit_code(), 2);
    }
}
