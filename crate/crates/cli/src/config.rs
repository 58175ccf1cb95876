//! TOML run configuration.
//!
//! Every key is checked against the known schema so a typo fails loudly.
//! Numeric fields accept plain numbers or short products such as
//! `"2*pi/1000"`.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use liebflux::evolution::DEFAULT_DPHI_STEP;
use liebflux::lattice::{Boundary, LatticeSpec};
use liebflux::{FluxSchedule, GaugeConfig};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("key `{key}` must be {expected}, found {found}")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        found: String,
    },
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Spectrum,
    Evolve,
    Toy,
    Rates,
    Localized,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Spectrum,
        Experiment::Evolve,
        Experiment::Toy,
        Experiment::Rates,
        Experiment::Localized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Spectrum => "spectrum",
            Experiment::Evolve => "evolve",
            Experiment::Toy => "toy",
            Experiment::Rates => "rates",
            Experiment::Localized => "localized",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Experiment::ALL.into_iter().find(|e| e.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveSettings {
    pub phi_final: f64,
    pub dphi_step: f64,
    pub record_every: usize,
    pub check_convergence: bool,
    pub max_refinements: u32,
    /// Two edge-adjacent plaquette ids; `None` picks the central pair.
    pub plaquettes: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSettings {
    pub phi_min: f64,
    pub phi_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySettings {
    pub eps0: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub t_start: f64,
    pub t_final: f64,
    pub dt: f64,
    pub record_every: usize,
    pub check_convergence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSettings {
    pub centers: Vec<GaugeConfig>,
    pub omega: f64,
    pub crossing: u32,
    pub eta: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedSettings {
    pub phi: f64,
    pub plaquettes: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub lattice: LatticeSpec,
    pub gauge: GaugeConfig,
    pub schedule: FluxSchedule,
    pub output_dir: PathBuf,
    pub plot: bool,
    pub evolve: Option<EvolveSettings>,
    pub spectrum: Option<SpectrumSettings>,
    pub toy: Option<ToySettings>,
    pub rates: Option<RateSettings>,
    pub localized: Option<LocalizedSettings>,
}

/// Flux ramp rate used by `--fast`.
pub const FAST_OMEGA: f64 = 2.0 * PI * 1e-3;

const SECTIONS: [(&str, &[&str]); 8] = [
    ("lattice", &["nx", "ny", "boundary"]),
    ("gauge", &["x0", "y0"]),
    ("schedule", &["phi_init", "omega", "t0"]),
    (
        "evolve",
        &["phi_final", "dphi_step", "record_every", "check_convergence", "max_refinements", "plaquettes"],
    ),
    ("spectrum", &["phi_min", "phi_max", "points"]),
    (
        "toy",
        &["eps0", "omega1", "omega2", "t_start", "t_final", "dt", "record_every", "check_convergence"],
    ),
    ("rates", &["centers", "omega", "crossing", "eta", "delta"]),
    ("localized", &["phi", "plaquettes"]),
];
const TOP_LEVEL: [&str; 3] = ["experiment", "output_dir", "plot"];

fn type_name(v: &Value) -> String {
    v.type_str().to_string()
}

/// Evaluates `a*b/c` products of numbers and `pi`/`tau`, with an optional
/// leading minus sign.
pub fn eval_number(expr: &str) -> std::result::Result<f64, String> {
    let s = expr.trim();
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s),
    };
    let mut value = 1.0;
    let mut op = '*';
    let mut token = String::new();
    let apply = |value: &mut f64, op: char, token: &str| -> std::result::Result<(), String> {
        let t = token.trim();
        let x = match t.to_ascii_lowercase().as_str() {
            "pi" | "π" => PI,
            "tau" => 2.0 * PI,
            _ => t.parse::<f64>().map_err(|_| format!("`{t}` is not a number"))?,
        };
        match op {
            '*' => *value *= x,
            _ => *value /= x,
        }
        Ok(())
    };
    for ch in body.chars() {
        if ch == '*' || ch == '/' {
            // exponent signs are part of the token, operators are not
            apply(&mut value, op, &token)?;
            token.clear();
            op = ch;
        } else {
            token.push(ch);
        }
    }
    apply(&mut value, op, &token)?;
    let v = sign * value;
    if !v.is_finite() {
        return Err(format!("`{expr}` is not finite"));
    }
    Ok(v)
}

struct Section<'a> {
    name: &'a str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn key(&self, k: &str) -> String {
        if self.name.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.name)
        }
    }

    fn get(&self, k: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(k))
    }

    fn float(&self, k: &str) -> Result<Option<f64>> {
        let Some(v) = self.get(k) else { return Ok(None) };
        let key = self.key(k);
        let x = match v {
            Value::Float(x) => *x,
            Value::Integer(i) => *i as f64,
            Value::String(s) => eval_number(s).map_err(|reason| ConfigError::InvalidValue { key: key.clone(), reason })?,
            other => {
                return Err(ConfigError::TypeMismatch {
                    key,
                    expected: "a number",
                    found: type_name(other),
                })
            }
        };
        if !x.is_finite() {
            return Err(ConfigError::InvalidValue {
                key,
                reason: "must be finite".into(),
            });
        }
        Ok(Some(x))
    }

    fn float_or(&self, k: &str, default: f64) -> Result<f64> {
        Ok(self.float(k)?.unwrap_or(default))
    }

    fn float_req(&self, k: &str) -> Result<f64> {
        self.float(k)?.ok_or_else(|| ConfigError::MissingKey(self.key(k)))
    }

    fn int(&self, k: &str) -> Result<Option<i64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) => Ok(Some(*i)),
            Some(other) => Err(ConfigError::TypeMismatch {
                key: self.key(k),
                expected: "an integer",
                found: type_name(other),
            }),
        }
    }

    fn count(&self, k: &str, min: i64) -> Result<Option<usize>> {
        match self.int(k)? {
            None => Ok(None),
            Some(i) if i >= min => Ok(Some(i as usize)),
            Some(i) => Err(ConfigError::InvalidValue {
                key: self.key(k),
                reason: format!("must be at least {min} (got {i})"),
            }),
        }
    }

    fn boolean(&self, k: &str, default: bool) -> Result<bool> {
        match self.get(k) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(other) => Err(ConfigError::TypeMismatch {
                key: self.key(k),
                expected: "a boolean",
                found: type_name(other),
            }),
        }
    }

    fn string(&self, k: &str) -> Result<Option<&'a str>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(ConfigError::TypeMismatch {
                key: self.key(k),
                expected: "a string",
                found: type_name(other),
            }),
        }
    }

    fn pair(&self, k: &str) -> Result<Option<[usize; 2]>> {
        let Some(v) = self.get(k) else { return Ok(None) };
        let mismatch = || ConfigError::TypeMismatch {
            key: self.key(k),
            expected: "an array of two plaquette ids",
            found: type_name(v),
        };
        let arr = v.as_array().ok_or_else(mismatch)?;
        let ids: Vec<usize> = arr
            .iter()
            .map(|x| x.as_integer().filter(|i| *i >= 0).map(|i| i as usize))
            .collect::<Option<_>>()
            .ok_or_else(mismatch)?;
        match ids.as_slice() {
            [a, b] => Ok(Some([*a, *b])),
            _ => Err(mismatch()),
        }
    }
}

fn check_keys(doc: &Table) -> Result<()> {
    for (key, value) in doc {
        if TOP_LEVEL.contains(&key.as_str()) {
            continue;
        }
        let Some((_, allowed)) = SECTIONS.iter().find(|(name, _)| name == key) else {
            return Err(ConfigError::UnknownKey(key.clone()));
        };
        let table = value.as_table().ok_or_else(|| ConfigError::TypeMismatch {
            key: key.clone(),
            expected: "a table",
            found: type_name(value),
        })?;
        for k in table.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(format!("{key}.{k}")));
            }
        }
    }
    Ok(())
}

/// Parses and validates a configuration. `experiment` may come from the
/// document or from `forced` (the CLI subcommand); if both are given they
/// must agree.
pub fn parse_config(text: &str, forced: Option<Experiment>) -> Result<RunConfig> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    check_keys(&doc)?;
    let section = |name: &'static str| Section {
        name,
        table: doc.get(name).and_then(Value::as_table),
    };
    let top = Section { name: "", table: Some(&doc) };

    let declared = match top.string("experiment")? {
        Some(s) => Some(Experiment::parse(s).ok_or_else(|| ConfigError::InvalidValue {
            key: "experiment".into(),
            reason: format!("`{s}` is not one of spectrum, evolve, toy, rates, localized"),
        })?),
        None => None,
    };
    let experiment = match (declared, forced) {
        (Some(a), Some(b)) if a != b => {
            return Err(ConfigError::InvalidValue {
                key: "experiment".into(),
                reason: format!("configuration is for `{a}` but `{b}` was requested"),
            })
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(ConfigError::MissingKey("experiment".into())),
    };
    let output_dir = PathBuf::from(top.string("output_dir")?.unwrap_or("output"));
    let plot = top.boolean("plot", false)?;

    let lat = section("lattice");
    let needs_lattice = experiment != Experiment::Toy;
    let lattice = if lat.table.is_some() || needs_lattice {
        let nx = lat.count("nx", 1)?.ok_or_else(|| ConfigError::MissingKey("lattice.nx".into()))?;
        let ny = lat.count("ny", 1)?.ok_or_else(|| ConfigError::MissingKey("lattice.ny".into()))?;
        let boundary = match lat.string("boundary")?.unwrap_or("open") {
            s if s.eq_ignore_ascii_case("open") => Boundary::Open,
            s if s.eq_ignore_ascii_case("periodic") => Boundary::Periodic,
            s => {
                return Err(ConfigError::InvalidValue {
                    key: "lattice.boundary".into(),
                    reason: format!("`{s}` is not `open` or `periodic`"),
                })
            }
        };
        LatticeSpec { nx, ny, boundary }
    } else {
        LatticeSpec::open(1, 1)
    };
    if lattice.boundary == Boundary::Periodic && experiment != Experiment::Spectrum {
        return Err(ConfigError::InvalidValue {
            key: "lattice.boundary".into(),
            reason: "periodic lattices are only supported at zero flux (spectrum experiment)".into(),
        });
    }

    let g = section("gauge");
    let gauge = GaugeConfig::new(g.float_or("x0", 0.0)?, g.float_or("y0", 0.0)?);

    let s = section("schedule");
    let schedule = FluxSchedule {
        phi_init: s.float_or("phi_init", PI)?,
        omega: s.float_or("omega", 0.0)?,
        t0: s.float_or("t0", 0.0)?,
    };
    if schedule.omega < 0.0 {
        return Err(ConfigError::InvalidValue {
            key: "schedule.omega".into(),
            reason: "must be non-negative".into(),
        });
    }

    let mut cfg = RunConfig {
        experiment,
        lattice,
        gauge,
        schedule,
        output_dir,
        plot,
        evolve: None,
        spectrum: None,
        toy: None,
        rates: None,
        localized: None,
    };

    match experiment {
        Experiment::Evolve => {
            if s.float("omega")?.is_none() {
                return Err(ConfigError::MissingKey("schedule.omega".into()));
            }
            if schedule.omega == 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "schedule.omega".into(),
                    reason: "evolution needs a positive ramp rate".into(),
                });
            }
            let e = section("evolve");
            let phi_final = e.float_req("phi_final")?;
            if phi_final <= schedule.phi_init {
                return Err(ConfigError::InvalidValue {
                    key: "evolve.phi_final".into(),
                    reason: "must exceed schedule.phi_init".into(),
                });
            }
            let dphi_step = e.float_or("dphi_step", DEFAULT_DPHI_STEP)?;
            if dphi_step <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "evolve.dphi_step".into(),
                    reason: "must be positive".into(),
                });
            }
            cfg.evolve = Some(EvolveSettings {
                phi_final,
                dphi_step,
                record_every: e.count("record_every", 1)?.unwrap_or(10),
                check_convergence: e.boolean("check_convergence", true)?,
                max_refinements: e.count("max_refinements", 0)?.unwrap_or(6) as u32,
                plaquettes: e.pair("plaquettes")?,
            });
        }
        Experiment::Spectrum => {
            let sp = section("spectrum");
            let phi_min = sp.float_or("phi_min", 0.0)?;
            let phi_max = sp.float_or("phi_max", 4.0 * PI)?;
            let points = sp.count("points", 1)?.unwrap_or(401);
            if phi_max < phi_min || (points > 1 && phi_max == phi_min) {
                return Err(ConfigError::InvalidValue {
                    key: "spectrum.phi_max".into(),
                    reason: "must exceed spectrum.phi_min".into(),
                });
            }
            if lattice.boundary == Boundary::Periodic && (phi_min != 0.0 || phi_max != 0.0) {
                return Err(ConfigError::InvalidValue {
                    key: "spectrum.phi_max".into(),
                    reason: "periodic lattices need phi_min = phi_max = 0".into(),
                });
            }
            cfg.spectrum = Some(SpectrumSettings { phi_min, phi_max, points });
        }
        Experiment::Toy => {
            let t = section("toy");
            let eps0 = t.float_or("eps0", 1.0)?;
            if eps0 <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "toy.eps0".into(),
                    reason: "must be positive".into(),
                });
            }
            let omega1 = t.float_req("omega1")?;
            let omega2 = t.float_req("omega2")?;
            if omega1 <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "toy.omega1".into(),
                    reason: "must be positive".into(),
                });
            }
            let t_start = t.float_or("t_start", (PI / 10.0) / omega1)?;
            let t_final = t.float_or("t_final", 3.5 * PI / omega1)?;
            if t_final <= t_start {
                return Err(ConfigError::InvalidValue {
                    key: "toy.t_final".into(),
                    reason: "must exceed toy.t_start".into(),
                });
            }
            let dt = t.float_or("dt", liebflux::toy::default_dt(eps0))?;
            if dt <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "toy.dt".into(),
                    reason: "must be positive".into(),
                });
            }
            cfg.toy = Some(ToySettings {
                eps0,
                omega1,
                omega2,
                t_start,
                t_final,
                dt,
                record_every: t.count("record_every", 1)?.unwrap_or(10),
                check_convergence: t.boolean("check_convergence", true)?,
            });
        }
        Experiment::Rates => {
            let r = section("rates");
            let v = r.get("centers").ok_or_else(|| ConfigError::MissingKey("rates.centers".into()))?;
            let mismatch = || ConfigError::TypeMismatch {
                key: "rates.centers".into(),
                expected: "an array of [x0, y0] pairs",
                found: type_name(v),
            };
            let centers = v
                .as_array()
                .ok_or_else(mismatch)?
                .iter()
                .map(|c| {
                    let xy = c.as_array().filter(|a| a.len() == 2)?;
                    let num = |x: &Value| x.as_float().or_else(|| x.as_integer().map(|i| i as f64));
                    Some(GaugeConfig::new(num(&xy[0])?, num(&xy[1])?))
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(mismatch)?;
            if centers.is_empty() {
                return Err(ConfigError::InvalidValue {
                    key: "rates.centers".into(),
                    reason: "needs at least one center".into(),
                });
            }
            let omega = r.float_or("omega", if schedule.omega > 0.0 { schedule.omega } else { 2.0 * PI * 1e-5 })?;
            let crossing = r.count("crossing", 1)?.unwrap_or(1) as u32;
            let eta = r.float_or("eta", 1e-3)?;
            let delta = r.float_or("delta", 1e-5)?;
            if omega <= 0.0 || eta <= 0.0 || delta <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    key: "rates".into(),
                    reason: "omega, eta and delta must be positive".into(),
                });
            }
            cfg.rates = Some(RateSettings {
                centers,
                omega,
                crossing,
                eta,
                delta,
            });
        }
        Experiment::Localized => {
            let l = section("localized");
            cfg.localized = Some(LocalizedSettings {
                phi: l.float_or("phi", PI)?,
                plaquettes: l.pair("plaquettes")?,
            });
        }
    }
    Ok(cfg)
}

impl RunConfig {
    /// Switches an evolution to the CI-scale ramp rate.
    pub fn apply_fast(&mut self) {
        if self.experiment == Experiment::Evolve {
            self.schedule.omega = FAST_OMEGA;
        }
    }

    /// Fully resolved configuration as TOML (all defaults filled in).
    pub fn to_toml(&self) -> String {
        let mut doc = Table::new();
        doc.insert("experiment".into(), self.experiment.name().into());
        doc.insert("output_dir".into(), self.output_dir.display().to_string().into());
        doc.insert("plot".into(), self.plot.into());
        let mut t = Table::new();
        t.insert("nx".into(), (self.lattice.nx as i64).into());
        t.insert("ny".into(), (self.lattice.ny as i64).into());
        let b = match self.lattice.boundary {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        };
        t.insert("boundary".into(), b.into());
        doc.insert("lattice".into(), t.into());
        let mut t = Table::new();
        t.insert("x0".into(), self.gauge.x0.into());
        t.insert("y0".into(), self.gauge.y0.into());
        doc.insert("gauge".into(), t.into());
        let mut t = Table::new();
        t.insert("phi_init".into(), self.schedule.phi_init.into());
        t.insert("omega".into(), self.schedule.omega.into());
        t.insert("t0".into(), self.schedule.t0.into());
        doc.insert("schedule".into(), t.into());
        let pair = |p: [usize; 2]| Value::Array(vec![(p[0] as i64).into(), (p[1] as i64).into()]);
        if let Some(e) = &self.evolve {
            let mut t = Table::new();
            t.insert("phi_final".into(), e.phi_final.into());
            t.insert("dphi_step".into(), e.dphi_step.into());
            t.insert("record_every".into(), (e.record_every as i64).into());
            t.insert("check_convergence".into(), e.check_convergence.into());
            t.insert("max_refinements".into(), i64::from(e.max_refinements).into());
            if let Some(p) = e.plaquettes {
                t.insert("plaquettes".into(), pair(p));
            }
            doc.insert("evolve".into(), t.into());
        }
        if let Some(s) = &self.spectrum {
            let mut t = Table::new();
            t.insert("phi_min".into(), s.phi_min.into());
            t.insert("phi_max".into(), s.phi_max.into());
            t.insert("points".into(), (s.points as i64).into());
            doc.insert("spectrum".into(), t.into());
        }
        if let Some(s) = &self.toy {
            let mut t = Table::new();
            t.insert("eps0".into(), s.eps0.into());
            t.insert("omega1".into(), s.omega1.into());
            t.insert("omega2".into(), s.omega2.into());
            t.insert("t_start".into(), s.t_start.into());
            t.insert("t_final".into(), s.t_final.into());
            t.insert("dt".into(), s.dt.into());
            t.insert("record_every".into(), (s.record_every as i64).into());
            t.insert("check_convergence".into(), s.check_convergence.into());
            doc.insert("toy".into(), t.into());
        }
        if let Some(r) = &self.rates {
            let mut t = Table::new();
            let centers: Vec<Value> = r
                .centers
                .iter()
                .map(|c| Value::Array(vec![c.x0.into(), c.y0.into()]))
                .collect();
            t.insert("centers".into(), Value::Array(centers));
            t.insert("omega".into(), r.omega.into());
            t.insert("crossing".into(), i64::from(r.crossing).into());
            t.insert("eta".into(), r.eta.into());
            t.insert("delta".into(), r.delta.into());
            doc.insert("rates".into(), t.into());
        }
        if let Some(l) = &self.localized {
            let mut t = Table::new();
            t.insert("phi".into(), l.phi.into());
            if let Some(p) = l.plaquettes {
                t.insert("plaquettes".into(), pair(p));
            }
            doc.insert("localized".into(), t.into());
        }
        toml::to_string(&doc).expect("tables of plain values always serialize")
    }
}
