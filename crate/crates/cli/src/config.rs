//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use east_lab_core::exact::MAX_REGION_SITES;
use east_lab_core::lattice::read_configuration;
use east_lab_core::theory::GeometrySet;
use east_lab_core::{Configuration, MeasureSpec, ModelParams, Region, Site, Window};
use thiserror::Error;

pub const KINDS: [&str; 7] = [
    "simulate",
    "persistence",
    "relaxation",
    "gap",
    "constants",
    "verify-lemma",
    "fk-probe",
];

const KEYS: [&str; 30] = [
    "kind",
    "d",
    "p",
    "window_lower",
    "window_upper",
    "exterior",
    "measure",
    "density",
    "zero_site",
    "measure_file",
    "site",
    "times",
    "horizon",
    "t",
    "n",
    "n_outer",
    "n_inner",
    "bootstrap",
    "gamma",
    "observable",
    "support",
    "fit_floor",
    "length",
    "delta",
    "c",
    "lambda_pp",
    "alpha",
    "seed",
    "out",
    "threads",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("unknown experiment kind `{got}`; valid kinds: {}", KINDS.join(", "))]
    UnknownKind { got: String },
    #[error("invalid field `{field}`: {msg}")]
    Field { field: &'static str, msg: String },
}

fn field(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Simulate,
    Persistence,
    Relaxation,
    Gap,
    Constants,
    VerifyLemma,
    FkProbe,
}

impl Kind {
    fn parse(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "simulate" => Kind::Simulate,
            "persistence" => Kind::Persistence,
            "relaxation" => Kind::Relaxation,
            "gap" => Kind::Gap,
            "constants" => Kind::Constants,
            "verify-lemma" => Kind::VerifyLemma,
            "fk-probe" => Kind::FkProbe,
            _ => return Err(ConfigError::UnknownKind { got: s.to_string() }),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Persistence => "persistence",
            Kind::Relaxation => "relaxation",
            Kind::Gap => "gap",
            Kind::Constants => "constants",
            Kind::VerifyLemma => "verify-lemma",
            Kind::FkProbe => "fk-probe",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableSpec {
    Spin,
    AllOnes(Region),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub params: ModelParams,
    pub window: Window,
    pub spec: MeasureSpec,
    pub site: Site,
    pub times: Vec<f64>,
    pub horizon: f64,
    pub t: f64,
    pub n: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    pub bootstrap: usize,
    pub gamma: f64,
    pub observable: ObservableSpec,
    pub fit_floor: Option<f64>,
    pub length: usize,
    pub delta: f64,
    pub c: f64,
    pub lambda_pp: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    /// Normalized `key = value` pairs after defaults, echoed in manifests.
    pub echo: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// The experiment's description lines carried by every output file.
    pub fn manifest_lines(&self) -> Vec<String> {
        let mut line = format!(
            "kind={} seed={} d={} p={} window={}:{} spec={}",
            self.kind,
            self.seed,
            self.params.d,
            self.params.p,
            self.window.lower(),
            self.window.upper(),
            spec_label(&self.spec)
        );
        match self.kind {
            Kind::Persistence | Kind::FkProbe | Kind::VerifyLemma => {
                line.push_str(&format!(" n={}", self.n))
            }
            Kind::Relaxation => line.push_str(&format!(
                " n_outer={} n_inner={} gamma={}",
                self.n_outer, self.n_inner, self.gamma
            )),
            _ => {}
        }
        vec![line]
    }
}

fn spec_label(spec: &MeasureSpec) -> String {
    match spec {
        MeasureSpec::ProductBernoulli(q) => format!("bernoulli({q})"),
        MeasureSpec::Delta(c) => {
            let zeros = c.spins().iter().filter(|&&s| s == 0).count();
            format!("delta(zeros={zeros},exterior={})", c.exterior())
        }
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        let v = v.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate(k.to_string()));
        }
    }
    Ok(map)
}

struct Fields {
    raw: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

impl Fields {
    fn get(&self, key: &'static str) -> Option<&str> {
        self.raw.get(key).map(String::as_str)
    }

    fn record(&mut self, key: &str, value: impl fmt::Display) {
        self.echo.insert(key.to_string(), value.to_string());
    }

    fn num<T: std::str::FromStr + fmt::Display + Copy>(
        &mut self,
        key: &'static str,
        default: Option<T>,
    ) -> Result<T, ConfigError> {
        let v = match self.get(key) {
            Some(s) => s
                .parse::<T>()
                .map_err(|_| field(key, format!("cannot parse `{s}`")))?,
            None => default.ok_or(ConfigError::Missing(key))?,
        };
        self.record(key, v);
        Ok(v)
    }

    fn opt_num<T: std::str::FromStr + fmt::Display + Copy>(
        &mut self,
        key: &'static str,
    ) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            Some(_) => self.num(key, None).map(Some),
            None => Ok(None),
        }
    }

    fn coords(&mut self, key: &'static str, d: usize, default: Vec<i64>) -> Result<Site, ConfigError> {
        let v = match self.get(key) {
            Some(s) => parse_ints(s).map_err(|m| field(key, m))?,
            None => default,
        };
        if v.len() != d {
            return Err(field(key, format!("expected {d} coordinates, got {}", v.len())));
        }
        let site = Site::new(v);
        self.record(key, join_coords(&site));
        Ok(site)
    }
}

fn join_coords(s: &Site) -> String {
    s.coords()
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_ints(s: &str) -> Result<Vec<i64>, String> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("bad integer `{t}`")))
        .collect()
}

/// `a b c` (space or comma separated) or `start:stop:step`, inclusive.
fn parse_times(s: &str) -> Result<Vec<f64>, String> {
    let mut times = Vec::new();
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|t| t.trim().parse().map_err(|_| format!("bad number `{t}`")))
            .collect::<Result<_, _>>()?;
        let [start, stop, step] = parts[..] else {
            return Err("range must be start:stop:step".into());
        };
        if !(step > 0.0) || !(stop >= start) {
            return Err("range needs step > 0 and stop >= start".into());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        if count > 1_000_000 {
            return Err("range too long".into());
        }
        times.extend((0..=count).map(|k| start + k as f64 * step));
    } else {
        for t in s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            times.push(t.parse().map_err(|_| format!("bad number `{t}`"))?);
        }
    }
    if times.is_empty() {
        return Err("time grid is empty".into());
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err("times must be finite and >= 0".into());
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err("times must be strictly increasing".into());
    }
    Ok(times)
}

fn positive(key: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(field(key, "must be finite and > 0"))
    }
}

fn nonzero(key: &'static str, v: usize) -> Result<usize, ConfigError> {
    if v == 0 {
        Err(field(key, "must be >= 1"))
    } else {
        Ok(v)
    }
}

/// Parses and validates a configuration. Relative `measure_file` paths
/// resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut f = Fields {
        raw: parse_pairs(text)?,
        echo: BTreeMap::new(),
    };
    let kind = Kind::parse(f.get("kind").ok_or(ConfigError::Missing("kind"))?)?;
    f.record("kind", kind);

    let d: usize = f.num("d", Some(1))?;
    if d == 0 {
        return Err(field("d", "dimension must be >= 1"));
    }
    let p: f64 = f.num("p", None)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(field("p", format!("must lie in (0, 1), got {p}")));
    }
    let params = ModelParams::new(d, p).map_err(|e| field("p", e.to_string()))?;

    let seed: u64 = f.num("seed", Some(0))?;
    let out = PathBuf::from(f.get("out").unwrap_or("out"));
    f.record("out", out.display());
    let threads: Option<usize> = f.opt_num("threads")?;
    if let Some(t) = threads {
        nonzero("threads", t)?;
    }

    let lower = f.coords("window_lower", d, vec![-8; d])?;
    let upper = f.coords("window_upper", d, vec![1; d])?;
    let window = Window::new(lower, upper).map_err(|e| field("window_lower", e.to_string()))?;
    let exterior: u8 = f.num("exterior", Some(1))?;
    if exterior > 1 {
        return Err(field("exterior", "must be 0 or 1"));
    }

    let measure = f.get("measure").unwrap_or("bernoulli").to_string();
    f.record("measure", &measure);
    let spec = match measure.as_str() {
        "bernoulli" => {
            let q: f64 = f.num("density", Some(p))?;
            MeasureSpec::product_bernoulli(q).map_err(|e| field("density", e.to_string()))?
        }
        "ones" => MeasureSpec::Delta(Configuration::filled(window.clone(), 1, exterior)),
        "zeros" => MeasureSpec::Delta(Configuration::filled(window.clone(), 0, exterior)),
        "single-zero" => {
            let z = f.coords("zero_site", d, vec![0; d])?;
            let c = Configuration::single_zero(window.clone(), &z, exterior)
                .map_err(|_| field("zero_site", "must lie inside the window"))?;
            MeasureSpec::Delta(c)
        }
        "file" => {
            let rel = f.get("measure_file").ok_or(ConfigError::Missing("measure_file"))?.to_string();
            f.record("measure_file", &rel);
            let path = base_dir.join(&rel);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| field("measure_file", format!("{}: {e}", path.display())))?;
            let (fp, c) = read_configuration(&text).map_err(|e| field("measure_file", e.to_string()))?;
            if fp.d != d {
                return Err(field("measure_file", "dimension differs from `d`"));
            }
            let c = c
                .restrict(&window)
                .map_err(|_| field("measure_file", "file window must contain the experiment window"))?;
            MeasureSpec::Delta(c)
        }
        other => {
            return Err(field(
                "measure",
                format!("unknown measure `{other}`; valid: bernoulli, ones, zeros, single-zero, file"),
            ))
        }
    };

    let default_site = match kind {
        Kind::Persistence | Kind::Relaxation => vec![1; d],
        _ => vec![0; d],
    };
    let site = f.coords("site", d, default_site)?;

    let mut cfg = ExperimentConfig {
        kind,
        params,
        window,
        spec,
        site,
        times: Vec::new(),
        horizon: 0.0,
        t: 0.0,
        n: 0,
        n_outer: 0,
        n_inner: 0,
        bootstrap: 0,
        gamma: 1.0,
        observable: ObservableSpec::Spin,
        fit_floor: None,
        length: 0,
        delta: east_lab_core::theory::DEFAULT_DELTA,
        c: east_lab_core::theory::DEFAULT_C,
        lambda_pp: None,
        alpha: 0.0,
        seed,
        out,
        threads,
        echo: BTreeMap::new(),
    };

    let in_window = |cfg: &ExperimentConfig, key: &'static str| -> Result<(), ConfigError> {
        if cfg.window.contains(&cfg.site) {
            Ok(())
        } else {
            Err(field(key, format!("site {} lies outside the window", cfg.site)))
        }
    };

    match kind {
        Kind::Simulate => {
            cfg.horizon = positive("horizon", f.num("horizon", Some(10.0))?)?;
            if cfg.horizon > east_lab_core::sim::MAX_HORIZON {
                return Err(field("horizon", "exceeds the 1e9 cap"));
            }
        }
        Kind::Persistence => {
            cfg.times = times_field(&mut f)?;
            cfg.n = nonzero("n", f.num("n", Some(1000))?)?;
            cfg.fit_floor = f.opt_num("fit_floor")?;
            in_window(&cfg, "site")?;
        }
        Kind::Relaxation => {
            cfg.times = times_field(&mut f)?;
            cfg.n_outer = nonzero("n_outer", f.num("n_outer", Some(200))?)?;
            cfg.n_inner = nonzero("n_inner", f.num("n_inner", Some(100))?)?;
            cfg.bootstrap = f.num("bootstrap", Some(1000))?;
            cfg.gamma = positive("gamma", f.num("gamma", Some(1.0))?)?;
            cfg.fit_floor = f.opt_num("fit_floor")?;
            let obs = f.get("observable").unwrap_or("spin").to_string();
            f.record("observable", &obs);
            cfg.observable = match obs.as_str() {
                "spin" => {
                    in_window(&cfg, "site")?;
                    ObservableSpec::Spin
                }
                "all-ones" => {
                    let raw = f.get("support").ok_or(ConfigError::Missing("support"))?.to_string();
                    let mut sites = Vec::new();
                    for part in raw.split(';').filter(|s| !s.trim().is_empty()) {
                        let v = parse_ints(part).map_err(|m| field("support", m))?;
                        if v.len() != d {
                            return Err(field("support", format!("expected {d} coordinates per site")));
                        }
                        let x = Site::new(v);
                        if !cfg.window.contains(&x) {
                            return Err(field("support", format!("site {x} lies outside the window")));
                        }
                        sites.push(x);
                    }
                    if sites.is_empty() || sites.len() > MAX_REGION_SITES {
                        return Err(field("support", format!("needs 1..={MAX_REGION_SITES} sites")));
                    }
                    let region = Region::explicit(sites);
                    f.record(
                        "support",
                        region.sites().iter().map(join_coords).collect::<Vec<_>>().join("; "),
                    );
                    ObservableSpec::AllOnes(region)
                }
                other => {
                    return Err(field("observable", format!("unknown observable `{other}`; valid: spin, all-ones")))
                }
            };
        }
        Kind::Gap => {
            cfg.length = f.num("length", Some(12))?;
            if !(1..=MAX_REGION_SITES).contains(&cfg.length) {
                return Err(field("length", format!("must lie in 1..={MAX_REGION_SITES}")));
            }
        }
        Kind::Constants => {
            cfg.delta = f.num("delta", Some(cfg.delta))?;
            if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
                return Err(field("delta", "must lie in (0, 1)"));
            }
            cfg.c = positive("c", f.num("c", Some(cfg.c))?)?;
            cfg.lambda_pp = f.opt_num("lambda_pp")?;
            if let Some(l) = cfg.lambda_pp {
                positive("lambda_pp", l)?;
            }
        }
        Kind::VerifyLemma => {
            cfg.t = positive("t", f.num("t", Some(10.0))?)?;
            cfg.alpha = positive("alpha", f.num("alpha", Some(0.2))?)?;
            cfg.n = nonzero("n", f.num("n", Some(1000))?)?;
            let geom = GeometrySet::new(cfg.t, cfg.alpha, d).map_err(|e| field("alpha", e.to_string()))?;
            if !cfg.window.contains_window(&geom.d_window()) {
                return Err(field(
                    "window_lower",
                    format!("window must contain D = {{-{}..0}}^d", geom.n_beta),
                ));
            }
            if !geom.alpha_box().contains(&cfg.site) {
                return Err(field("site", format!("must lie in {{-{}..0}}^d", geom.n_alpha)));
            }
        }
        Kind::FkProbe => {
            cfg.t = positive("t", f.num("t", Some(10.0))?)?;
            cfg.delta = f.num("delta", Some(cfg.delta))?;
            if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
                return Err(field("delta", "must lie in (0, 1)"));
            }
            cfg.n = nonzero("n", f.num("n", Some(1000))?)?;
            if !cfg.site.in_negative_orthant() {
                return Err(field("site", "must lie in the negative orthant"));
            }
            in_window(&cfg, "site")?;
            if !cfg.window.contains(&Site::origin(d)) {
                return Err(field("window_upper", "window must contain the origin"));
            }
        }
    }
    cfg.echo = f.echo;
    Ok(cfg)
}

fn times_field(f: &mut Fields) -> Result<Vec<f64>, ConfigError> {
    let raw = f.get("times").ok_or(ConfigError::Missing("times"))?.to_string();
    let times = parse_times(&raw).map_err(|m| field("times", m))?;
    if *times.last().unwrap() > east_lab_core::sim::MAX_HORIZON {
        return Err(field("times", "exceeds the 1e9 cap"));
    }
    f.record(
        "times",
        times.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "),
    );
    Ok(times)
}
