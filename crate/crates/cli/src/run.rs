//! Experiment dispatch, output files and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use east_lab_core::estimators::{
    default_floor, estimate_persistence, estimate_relaxation, fit_exponential, DecaySeries,
    Ensemble, Observable, RelaxationOptions,
};
use east_lab_core::exact::{east1d_generator, spectral_gap};
use east_lab_core::streams::{aux_rng, replica_seed};
use east_lab_core::theory::{
    compute_constants, compute_constants_default, fk_cascade_probe, lemma_report_csv,
    verify_oriented_path_lemma, LemmaRecord, TheoryError,
};
use east_lab_core::lattice::write_configuration;
use east_lab_core::{sample_initial, simulate};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ExperimentConfig, Kind, ObservableSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.txt";

const SIM_INIT_TAG: u64 = 0x5117;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Counterexample(String),
    #[error("i/o error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Runtime(_) | RunError::Io { .. } => 2,
            RunError::Counterexample(_) => 3,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            RunError::Counterexample(_) => "counterexample",
            _ => "runtime-error",
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub status: String,
    pub message: Option<String>,
    pub version: String,
    pub kind: Option<String>,
    pub config: Vec<(String, String)>,
    /// Output file names with their SHA-256 digests.
    pub files: Vec<(String, String)>,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "status = {}", self.status);
        if let Some(m) = &self.message {
            let _ = writeln!(out, "message = {}", m.replace('\n', " "));
        }
        let _ = writeln!(out, "version = {}", self.version);
        if let Some(k) = &self.kind {
            let _ = writeln!(out, "kind = {k}");
        }
        let _ = writeln!(out, "duration_seconds = {:.6}", self.duration_seconds);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        for (name, sum) in &self.files {
            let _ = writeln!(out, "sha256.{name} = {sum}");
        }
        out
    }

    /// Manifest of a run rejected before it started.
    pub fn validation_failure(message: String) -> Self {
        Self {
            status: "validation-error".into(),
            message: Some(message),
            version: VERSION.into(),
            kind: None,
            config: Vec::new(),
            files: Vec::new(),
            duration_seconds: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        write_file(dir, MANIFEST_FILE, &self.to_text())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), RunError> {
    let io = |path: &Path, e: std::io::Error| RunError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| io(&path, e))
}

type Outputs = Vec<(String, String)>;

fn with_manifest(lines: &[String], body: &str) -> String {
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(out, "# {l}");
    }
    out.push_str(body);
    out
}

fn fit_csv(series: &DecaySeries, floor: Option<f64>, lines: &[String]) -> String {
    let floor = floor.unwrap_or_else(|| default_floor(series));
    let mut lines = lines.to_vec();
    lines.push(format!("fit_floor={floor}"));
    match fit_exponential(series, floor) {
        Ok(fit) => fit.to_csv(&lines),
        Err(e) => {
            lines.push(format!("fit unavailable: {e}"));
            with_manifest(&lines, "rate,prefactor,r_squared,first_index,end_index,points\n")
        }
    }
}

fn execute(cfg: &ExperimentConfig, outputs: &mut Outputs) -> Result<(), RunError> {
    let lines = cfg.manifest_lines();
    let ens = Ensemble {
        params: cfg.params,
        spec: &cfg.spec,
        window: &cfg.window,
        seed: cfg.seed,
    };
    match cfg.kind {
        Kind::Simulate => {
            let init = sample_initial(&cfg.spec, &cfg.window, &mut aux_rng(cfg.seed, SIM_INIT_TAG))
                .map_err(runtime)?;
            let log = simulate(&cfg.params, &init, cfg.horizon, cfg.seed).map_err(runtime)?;
            outputs.push(("initial.txt".into(), write_configuration(&cfg.params, &init)));
            outputs.push(("events.csv".into(), log.to_csv()));
            let mut occ = String::from("site,occupation_time\n");
            for x in cfg.window.sites() {
                let v = log.occupation_time(&x, cfg.horizon).map_err(runtime)?;
                let _ = writeln!(occ, "\"{x}\",{v:.17e}");
            }
            outputs.push(("occupation.csv".into(), with_manifest(&lines, &occ)));
        }
        Kind::Persistence => {
            let series = estimate_persistence(&ens, &cfg.site, &cfg.times, cfg.n).map_err(runtime)?;
            outputs.push(("persistence.csv".into(), series.to_csv(&lines)));
            outputs.push(("fit.csv".into(), fit_csv(&series, cfg.fit_floor, &lines)));
        }
        Kind::Relaxation => {
            let f = match &cfg.observable {
                ObservableSpec::Spin => Observable::spin(cfg.site.clone()),
                ObservableSpec::AllOnes(r) => Observable::all_ones(r.clone()).map_err(runtime)?,
            };
            let opts = RelaxationOptions {
                gamma: cfg.gamma,
                bootstrap: cfg.bootstrap,
            };
            let series = estimate_relaxation(&ens, &f, &cfg.times, cfg.n_outer, cfg.n_inner, &opts)
                .map_err(runtime)?;
            outputs.push(("relaxation.csv".into(), series.to_csv(&lines)));
            outputs.push(("fit.csv".into(), fit_csv(&series, cfg.fit_floor, &lines)));
        }
        Kind::Gap => {
            let rows: Vec<(f64, usize)> = (1..=cfg.length)
                .into_par_iter()
                .map(|n| {
                    let gen = east1d_generator(cfg.params.p, n)?;
                    let s = spectral_gap(&gen)?;
                    Ok((s.gap, s.eigenvalue_count_at_zero))
                })
                .collect::<Result<_, east_lab_core::exact::ExactError>>()
                .map_err(runtime)?;
            let mut body = String::from("n,gap,increment,zero_multiplicity\n");
            for (i, &(g, mult)) in rows.iter().enumerate() {
                let inc = if i == 0 { 0.0 } else { (rows[i - 1].0 - g).abs() };
                let _ = writeln!(body, "{},{g:?},{inc:?},{mult}", i + 1);
            }
            let lines = vec![format!("kind=gap p={} boundary=site 0 frozen at 0", cfg.params.p)];
            outputs.push(("gap.csv".into(), with_manifest(&lines, &body)));
        }
        Kind::Constants => {
            let report = match cfg.lambda_pp {
                Some(l) => compute_constants(cfg.params.p, cfg.params.d, cfg.delta, cfg.c, l),
                None => compute_constants_default(cfg.params.p, cfg.params.d).and_then(|mut r| {
                    let inc = r.lambda_increment;
                    r = compute_constants(cfg.params.p, cfg.params.d, cfg.delta, cfg.c, r.lambda_pp)?;
                    r.lambda_increment = inc;
                    Ok(r)
                }),
            }
            .map_err(runtime)?;
            outputs.push(("constants.txt".into(), report.to_key_value()));
        }
        Kind::VerifyLemma => {
            let results: Vec<Result<LemmaRecord, TheoryError>> = (0..cfg.n as u64)
                .into_par_iter()
                .map(|i| {
                    let rs = replica_seed(cfg.seed, i);
                    let mut init = ens.initial(i).map_err(|e| TheoryError::Estimate(e.into()))?;
                    init.set(&cfg.site, 0).map_err(|e| TheoryError::Estimate(e.into()))?;
                    let log = simulate(&cfg.params, &init, cfg.t, rs)?;
                    let r = verify_oriented_path_lemma(&log, cfg.t, cfg.alpha, &cfg.site)?;
                    Ok(LemmaRecord::from_result(rs, cfg.t, cfg.alpha, &r))
                })
                .collect();
            let mut records = Vec::with_capacity(results.len());
            let mut failure = None;
            for r in results {
                match r {
                    Ok(rec) => records.push(rec),
                    Err(e) if failure.is_none() => failure = Some(e),
                    Err(_) => {}
                }
            }
            outputs.push(("lemma.csv".into(), with_manifest(&lines, &lemma_report_csv(&records))));
            match failure {
                Some(e @ TheoryError::LemmaCounterexample { .. }) => {
                    return Err(RunError::Counterexample(e.to_string()))
                }
                Some(e) => return Err(runtime(e)),
                None => {}
            }
        }
        Kind::FkProbe => {
            let probe = fk_cascade_probe(&ens, &cfg.site, cfg.delta, cfg.t, cfg.n).map_err(runtime)?;
            let mut lines = lines;
            lines.push(format!(
                "delta={} t={} delta_authoritative=false",
                cfg.delta, cfg.t
            ));
            outputs.push(("fk_probe.csv".into(), with_manifest(&lines, &probe.to_csv())));
        }
    }
    Ok(())
}

/// Runs the experiment, writes its outputs and a manifest into `cfg.out`,
/// and returns the manifest. The manifest is written on handled errors too.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest, (RunManifest, RunError)> {
    let start = Instant::now();
    let mut outputs = Vec::new();
    let result = match build_pool(cfg.threads) {
        Ok(pool) => pool.install(|| execute(cfg, &mut outputs)),
        Err(e) => Err(e),
    };
    let mut files = Vec::new();
    let mut write_err = None;
    for (name, content) in &outputs {
        if let Err(e) = write_file(&cfg.out, name, content) {
            write_err.get_or_insert(e);
            continue;
        }
        files.push((name.clone(), sha256_hex(content.as_bytes())));
    }
    let result = result.and(write_err.map_or(Ok(()), Err));
    let mut manifest = RunManifest {
        status: "ok".into(),
        message: None,
        version: VERSION.into(),
        kind: Some(cfg.kind.to_string()),
        config: cfg.echo.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        files,
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    if let Err(e) = &result {
        manifest.status = e.status().into();
        manifest.message = Some(e.to_string());
    }
    let written = manifest.write(&cfg.out);
    match (result, written) {
        (Ok(()), Ok(())) => Ok(manifest),
        (Err(e), _) | (Ok(()), Err(e)) => Err((manifest, e)),
    }
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, RunError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(runtime)
}
