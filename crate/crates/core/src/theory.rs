//! Checks of the combinatorial machinery behind the persistence bound on
//! simulated histories, and evaluation of the constructive constants.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{occupation_run, wilson_interval, Ensemble, EstimateError, Z95};
use crate::exact::{east1d_gap_with_increment, ExactError};
use crate::lattice::{Region, Site, Window};
use crate::sim::{EventLog, SimError};
use crate::streams::replica_seed;

/// Placeholder for the FK contraction factor; not an authoritative value.
pub const DEFAULT_DELTA: f64 = 0.5;
/// Placeholder for the FK rate constant; not an authoritative value.
pub const DEFAULT_C: f64 = 0.1;
/// Chain length used for the default `lambda''`.
pub const DEFAULT_GAP_LENGTH: usize = 12;

const FLOOR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("t must be finite and > 0, got {0}")]
    InvalidTime(f64),
    #[error("alpha must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("dimension must be >= 1")]
    InvalidDimension,
    #[error("p must lie in (0, 1), got {0}")]
    InvalidP(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("c must be finite and > 0, got {0}")]
    InvalidC(f64),
    #[error("lambda'' must be finite and > 0, got {0}")]
    InvalidLambda(f64),
    #[error("site {0} is not in {{-floor(alpha t)..0}}^d")]
    SiteOutsideAlphaBox(Site),
    #[error("site {0} must lie in the negative orthant")]
    SiteOutsideOrthant(Site),
    #[error("site {0} has initial spin 1, expected 0")]
    InitialSpinNotZero(Site),
    #[error("box D = {{-{0}..0}}^d is not contained in the log window")]
    GeometryOutsideWindow(i64),
    #[error("t = {t} exceeds the log horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("lemma counterexample: hypothesis holds at {x} (seed {seed}, t {t}, alpha {alpha}) but no oriented path in E reaches D \\ D'")]
    LemmaCounterexample {
        x: Site,
        seed: u64,
        t: f64,
        alpha: f64,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

fn floor_tol(v: f64) -> i64 {
    (v + FLOOR_TOL * v.abs().max(1.0)).floor() as i64
}

/// Boxes `D`, `D'` and the diagonal layers `H_k` attached to `(t, alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySet {
    pub t: f64,
    pub alpha: f64,
    pub d: usize,
    pub beta: f64,
    /// `floor(alpha t)`.
    pub n_alpha: i64,
    /// `floor(beta t)`, also the side parameter of `D`.
    pub n_beta: i64,
    pub d_box: Region,
    pub d_prime: Region,
}

impl GeometrySet {
    pub fn new(t: f64, alpha: f64, d: usize) -> Result<Self, TheoryError> {
        if !(t.is_finite() && t > 0.0) {
            return Err(TheoryError::InvalidTime(t));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(TheoryError::InvalidAlpha(alpha));
        }
        if d == 0 {
            return Err(TheoryError::InvalidDimension);
        }
        let beta = 2.0 * d as f64 * alpha;
        let n_alpha = floor_tol(alpha * t);
        let n_beta = floor_tol(beta * t);
        let d_box = Region::explicit(cube_sites(d, -n_beta, 0));
        let d_prime = Region::explicit(cube_sites(d, -n_beta + 1, 0));
        Ok(Self {
            t,
            alpha,
            d,
            beta,
            n_alpha,
            n_beta,
            d_box,
            d_prime,
        })
    }

    pub fn d_window(&self) -> Window {
        Window::cube(self.d, -self.n_beta, 0).expect("D is a valid box")
    }

    /// `{-floor(alpha t)..0}^d`.
    pub fn alpha_box(&self) -> Window {
        Window::cube(self.d, -self.n_alpha, 0).expect("alpha box is a valid box")
    }

    /// Largest layer index `d floor(beta t)`.
    pub fn k_max(&self) -> usize {
        self.d * self.n_beta as usize
    }

    pub fn layer_of(&self, x: &Site) -> Option<usize> {
        self.d_box
            .contains(x)
            .then(|| (-x.coords().iter().sum::<i64>()) as usize)
    }

    /// `H_k = {x in D : x_1 + ... + x_d = -k}`.
    pub fn hyperplane(&self, k: usize) -> Vec<Site> {
        self.d_box
            .sites()
            .iter()
            .filter(|x| self.layer_of(x) == Some(k))
            .cloned()
            .collect()
    }

    /// True on `D \ D'`.
    pub fn is_target(&self, x: &Site) -> bool {
        self.d_box.contains(x) && !self.d_prime.contains(x)
    }
}

fn cube_sites(d: usize, lo: i64, hi: i64) -> Vec<Site> {
    if lo > hi {
        return Vec::new();
    }
    Window::cube(d, lo, hi).expect("valid cube").sites().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathResult {
    pub found: bool,
    pub path: Vec<Site>,
    pub hypothesis_held: bool,
}

/// Re-checks an oriented path: it starts at `x`, every step is `-e_i`,
/// every site lies in `updated` and the last one lies in `D \ D'`.
pub fn validate_path(
    path: &[Site],
    x: &Site,
    updated: &BTreeSet<Site>,
    geom: &GeometrySet,
) -> Result<(), String> {
    let first = path.first().ok_or("empty path")?;
    if first != x {
        return Err(format!("path starts at {first}, expected {x}"));
    }
    for w in path.windows(2) {
        let ok = (0..geom.d).any(|i| w[0].step_down(i) == w[1]);
        if !ok {
            return Err(format!("step {} -> {} is not of the form -e_i", w[0], w[1]));
        }
    }
    if let Some(y) = path.iter().find(|y| !updated.contains(*y)) {
        return Err(format!("{y} was not updated by t/2"));
    }
    let last = path.last().unwrap();
    if !geom.is_target(last) {
        return Err(format!("path ends at {last}, outside D \\ D'"));
    }
    Ok(())
}

fn check_log_geometry(log: &EventLog, geom: &GeometrySet, t: f64) -> Result<(), TheoryError> {
    if t > log.horizon() {
        return Err(TheoryError::BeyondHorizon {
            t,
            horizon: log.horizon(),
        });
    }
    if log.window().dim() != geom.d || !log.window().contains_window(&geom.d_window()) {
        return Err(TheoryError::GeometryOutsideWindow(geom.n_beta));
    }
    Ok(())
}

/// `E`: sites of `D` with a legal ring by `t/2`.
pub fn updated_in_d(log: &EventLog, geom: &GeometrySet) -> Result<BTreeSet<Site>, TheoryError> {
    Ok(log.updated_set(&geom.d_box, geom.t / 2.0)?)
}

/// If no site of `D` stays at zero on `[0, t/2]`, searches breadth-first
/// for an oriented path in `E` from `x` to `D \ D'`. Failing to find one
/// while the hypothesis holds is a counterexample and an error.
pub fn verify_oriented_path_lemma(
    log: &EventLog,
    t: f64,
    alpha: f64,
    x: &Site,
) -> Result<PathResult, TheoryError> {
    let geom = GeometrySet::new(t, alpha, log.params().d)?;
    check_log_geometry(log, &geom, t)?;
    if x.dim() != geom.d || !geom.alpha_box().contains(x) {
        return Err(TheoryError::SiteOutsideAlphaBox(x.clone()));
    }
    if log.initial().spin_at(x) != 0 {
        return Err(TheoryError::InitialSpinNotZero(x.clone()));
    }
    let half = t / 2.0;
    for y in geom.d_box.sites() {
        if log.stays_at_zero(y, half)? {
            return Ok(PathResult {
                found: false,
                path: Vec::new(),
                hypothesis_held: false,
            });
        }
    }
    let e = updated_in_d(log, &geom)?;
    let counterexample = || TheoryError::LemmaCounterexample {
        x: x.clone(),
        seed: log.seed(),
        t,
        alpha,
    };
    if !e.contains(x) {
        return Err(counterexample());
    }
    let mut parent: std::collections::BTreeMap<Site, Option<Site>> = Default::default();
    parent.insert(x.clone(), None);
    let mut queue = VecDeque::from([x.clone()]);
    while let Some(y) = queue.pop_front() {
        if geom.is_target(&y) {
            let mut path = vec![y.clone()];
            let mut cur = y;
            while let Some(Some(prev)) = parent.get(&cur) {
                path.push(prev.clone());
                cur = prev.clone();
            }
            path.reverse();
            return Ok(PathResult {
                found: true,
                path,
                hypothesis_held: true,
            });
        }
        for i in 0..geom.d {
            let z = y.step_down(i);
            if e.contains(&z) && !parent.contains_key(&z) {
                parent.insert(z.clone(), Some(y.clone()));
                queue.push_back(z);
            }
        }
    }
    Err(counterexample())
}

/// Per-layer indicators over `k = 0..=d floor(beta t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperplaneProfile {
    /// `U_k`: `H_k` meets `E`.
    pub hit: Vec<bool>,
    /// `G_k`: some site of `H_k` spends at least `(1 - p) t / 4` at zero.
    pub long_zero: Vec<bool>,
}

impl HyperplaneProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,u_k,g_k\n");
        for k in 0..self.hit.len() {
            let _ = writeln!(out, "{k},{},{}", u8::from(self.hit[k]), u8::from(self.long_zero[k]));
        }
        out
    }
}

pub fn hyperplane_hit_profile(
    log: &EventLog,
    geom: &GeometrySet,
) -> Result<HyperplaneProfile, TheoryError> {
    check_log_geometry(log, geom, geom.t)?;
    let e = updated_in_d(log, geom)?;
    let threshold = (1.0 - log.params().p) * geom.t / 4.0;
    let k_max = geom.k_max();
    let mut hit = vec![false; k_max + 1];
    let mut long_zero = vec![false; k_max + 1];
    for x in geom.d_box.sites() {
        let k = geom.layer_of(x).unwrap();
        hit[k] |= e.contains(x);
        if !long_zero[k] {
            long_zero[k] = log.occupation_time(x, geom.t)? >= threshold;
        }
    }
    Ok(HyperplaneProfile { hit, long_zero })
}

/// One row of a lemma verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRecord {
    pub seed: u64,
    pub t: f64,
    pub alpha: f64,
    pub hypothesis_held: bool,
    pub found: bool,
    pub path_length: usize,
}

impl LemmaRecord {
    pub fn from_result(seed: u64, t: f64, alpha: f64, r: &PathResult) -> Self {
        Self {
            seed,
            t,
            alpha,
            hypothesis_held: r.hypothesis_held,
            found: r.found,
            path_length: r.path.len(),
        }
    }
}

pub fn lemma_report_csv(records: &[LemmaRecord]) -> String {
    let mut out = String::from("seed,t,alpha,hypothesis_held,found,path_length\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed,
            r.t,
            r.alpha,
            u8::from(r.hypothesis_held),
            u8::from(r.found),
            r.path_length
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsReport {
    pub p: f64,
    pub d: usize,
    pub delta: f64,
    pub c: f64,
    pub lambda_pp: f64,
    /// `-ln(p / (1 - (1 - p) / 2))`.
    pub c3_prime: f64,
    pub alpha: f64,
    pub chi: f64,
    /// `2p / (1 + p)`, below 1 for every `p` in `(0, 1)`.
    pub two_p_ratio: f64,
    /// False while `delta` and `c` are the built-in placeholders.
    pub delta_c_authoritative: bool,
    /// Increment `|gap(N) - gap(N-1)|` when `lambda''` came from the
    /// finite East chain.
    pub lambda_increment: Option<f64>,
}

pub fn compute_constants(
    p: f64,
    d: usize,
    delta: f64,
    c: f64,
    lambda_pp: f64,
) -> Result<ConstantsReport, TheoryError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(TheoryError::InvalidP(p));
    }
    if d == 0 {
        return Err(TheoryError::InvalidDimension);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TheoryError::InvalidDelta(delta));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(TheoryError::InvalidC(c));
    }
    if !(lambda_pp.is_finite() && lambda_pp > 0.0) {
        return Err(TheoryError::InvalidLambda(lambda_pp));
    }
    let df = d as f64;
    let log_min = p.min(1.0 - p).ln();
    let c3_prime = -(p / (1.0 - (1.0 - p) / 2.0)).ln();
    let alpha = c * (1.0 - p) * delta.powi(d as i32 - 1) / (-16.0 * df * log_min);
    let chi = 0.5 * (lambda_pp * (1.0 - p) * delta.powi(d as i32) / (-8.0 * log_min)).powf(1.0 / df);
    Ok(ConstantsReport {
        p,
        d,
        delta,
        c,
        lambda_pp,
        c3_prime,
        alpha,
        chi,
        two_p_ratio: 2.0 * p / (1.0 + p),
        delta_c_authoritative: false,
        lambda_increment: None,
    })
}

/// Constants with the placeholder `delta`, `c` and `lambda''` taken as the
/// gap of the East chain of length [`DEFAULT_GAP_LENGTH`].
pub fn compute_constants_default(p: f64, d: usize) -> Result<ConstantsReport, TheoryError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(TheoryError::InvalidP(p));
    }
    let (gap, inc) = east1d_gap_with_increment(p, DEFAULT_GAP_LENGTH)?;
    let mut r = compute_constants(p, d, DEFAULT_DELTA, DEFAULT_C, gap)?;
    r.lambda_increment = Some(inc);
    Ok(r)
}

impl ConstantsReport {
    /// Flat `key = value` text.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("p", format!("{}", self.p));
        kv("d", format!("{}", self.d));
        kv("delta", format!("{}", self.delta));
        kv("c", format!("{}", self.c));
        kv("delta_c_authoritative", format!("{}", self.delta_c_authoritative));
        if !self.delta_c_authoritative {
            kv(
                "delta_c_note",
                "placeholder inputs, not values of the imported FK lemma".into(),
            );
        }
        kv("lambda_pp", format!("{:.17e}", self.lambda_pp));
        if let Some(inc) = self.lambda_increment {
            kv("lambda_pp_increment", format!("{inc:.17e}"));
        }
        kv("c3_prime", format!("{:.17e}", self.c3_prime));
        kv("alpha", format!("{:.17e}", self.alpha));
        kv("chi", format!("{:.17e}", self.chi));
        kv("two_p_over_one_plus_p", format!("{:.17e}", self.two_p_ratio));
        out
    }
}

/// `y^(0) = y`, then coordinates zeroed one at a time up to the origin.
pub fn cascade_sites(y: &Site) -> Vec<Site> {
    let mut out = vec![y.clone()];
    let mut cur = y.clone();
    for i in 0..y.dim() {
        cur.0[i] = 0;
        out.push(cur.clone());
    }
    out
}

/// Empirical `P(T_t(y^(i)) <= delta T_t(y^(i-1)))` for `i = 1..=d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FkProbe {
    pub sites: Vec<Site>,
    pub probabilities: Vec<f64>,
    pub halfwidths: Vec<f64>,
    pub delta: f64,
    pub t: f64,
    pub n: usize,
}

impl FkProbe {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,site,prev_site,probability,halfwidth\n");
        for i in 0..self.probabilities.len() {
            let _ = writeln!(
                out,
                "{},\"{}\",\"{}\",{:.17e},{:.17e}",
                i + 1,
                self.sites[i + 1],
                self.sites[i],
                self.probabilities[i],
                self.halfwidths[i]
            );
        }
        out
    }
}

pub fn fk_cascade_probe(
    ens: &Ensemble,
    y: &Site,
    delta: f64,
    t: f64,
    n: usize,
) -> Result<FkProbe, TheoryError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TheoryError::InvalidDelta(delta));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(TheoryError::InvalidTime(t));
    }
    if n == 0 {
        return Err(EstimateError::NoSamples.into());
    }
    if y.dim() != ens.params.d || !y.in_negative_orthant() {
        return Err(TheoryError::SiteOutsideOrthant(y.clone()));
    }
    let sites = cascade_sites(y);
    let mut distinct: Vec<usize> = Vec::new();
    let mut slot = Vec::with_capacity(sites.len());
    for x in &sites {
        let w = ens
            .window
            .index_of(x)
            .ok_or_else(|| EstimateError::SiteOutsideWindow(x.clone()))?;
        let pos = match distinct.iter().position(|&v| v == w) {
            Some(pos) => pos,
            None => {
                distinct.push(w);
                distinct.len() - 1
            }
        };
        slot.push(pos);
    }
    let runs: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>, TheoryError> {
            let init = ens.initial(i).map_err(EstimateError::from)?;
            Ok(occupation_run(&ens.params, &init, &distinct, t, replica_seed(ens.seed, i))?)
        })
        .collect::<Result<_, _>>()?;
    let steps = sites.len() - 1;
    let mut probabilities = Vec::with_capacity(steps);
    let mut halfwidths = Vec::with_capacity(steps);
    for i in 1..=steps {
        let k = runs
            .iter()
            .filter(|r| r[slot[i]] <= delta * r[slot[i - 1]])
            .count();
        let (lo, hi) = wilson_interval(k, n, Z95);
        probabilities.push(k as f64 / n as f64);
        halfwidths.push(0.5 * (hi - lo));
    }
    Ok(FkProbe {
        sites,
        probabilities,
        halfwidths,
        delta,
        t,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Configuration, MeasureSpec, ModelParams};
    use crate::sim::simulate;

    fn s(c: &[i64]) -> Site {
        Site::new(c.to_vec())
    }

    #[test]
    fn geometry_layers_partition_d() {
        for d in 1..=3 {
            for &(t, alpha) in &[(10.0, 0.2), (3.0, 0.1), (7.5, 0.33)] {
                let g = GeometrySet::new(t, alpha, d).unwrap();
                let total: usize = (0..=g.k_max()).map(|k| g.hyperplane(k).len()).sum();
                assert_eq!(total, g.d_box.len());
                assert!(g.d_prime.sites().iter().all(|x| g.d_box.contains(x)));
                assert_eq!(g.hyperplane(0), vec![Site::origin(d)]);
            }
        }
        let g = GeometrySet::new(10.0, 0.2, 2).unwrap();
        assert_eq!((g.n_alpha, g.n_beta), (2, 8));
        assert_eq!(g.d_box.len(), 81);
        assert_eq!(g.d_prime.len(), 64);
        assert!(g.is_target(&s(&[-8, 0])) && !g.is_target(&s(&[-7, -7])));
        assert!(GeometrySet::new(0.0, 0.2, 2).is_err());
        assert!(GeometrySet::new(1.0, -0.2, 2).is_err());
    }

    #[test]
    fn blocked_window_violates_precondition() {
        let params = ModelParams::new(2, 0.5).unwrap();
        let w = Window::cube(2, -8, 0).unwrap();
        let log = simulate(&params, &Configuration::filled(w, 1, 1), 10.0, 1).unwrap();
        assert_eq!(
            verify_oriented_path_lemma(&log, 10.0, 0.2, &Site::origin(2)),
            Err(TheoryError::InitialSpinNotZero(Site::origin(2)))
        );
        let g = GeometrySet::new(10.0, 0.2, 2).unwrap();
        let prof = hyperplane_hit_profile(&log, &g).unwrap();
        assert!(prof.hit.iter().all(|h| !h));
        assert!(prof.long_zero.iter().all(|h| !h));
    }

    #[test]
    fn frozen_zero_voids_hypothesis() {
        // A single zero with ones around it can never be updated.
        let params = ModelParams::new(2, 0.5).unwrap();
        let w = Window::cube(2, -8, 0).unwrap();
        let init = Configuration::single_zero(w, &s(&[-1, -1]), 1).unwrap();
        let log = simulate(&params, &init, 10.0, 3).unwrap();
        let r = verify_oriented_path_lemma(&log, 10.0, 0.2, &s(&[-1, -1])).unwrap();
        assert!(!r.hypothesis_held && !r.found && r.path.is_empty());
        assert!(matches!(
            verify_oriented_path_lemma(&log, 10.0, 0.2, &s(&[-5, 0])),
            Err(TheoryError::SiteOutsideAlphaBox(_))
        ));
        assert!(matches!(
            verify_oriented_path_lemma(&log, 20.0, 0.2, &s(&[-1, -1])),
            Err(TheoryError::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn path_validation_rejects_bad_paths() {
        let g = GeometrySet::new(2.0, 0.5, 1).unwrap();
        // D = {-2..0}, D' = {-1..0}.
        let e: BTreeSet<Site> = [s(&[0]), s(&[-1]), s(&[-2])].into();
        let good = [s(&[0]), s(&[-1]), s(&[-2])];
        assert!(validate_path(&good, &s(&[0]), &e, &g).is_ok());
        assert!(validate_path(&good[..2], &s(&[0]), &e, &g).is_err());
        assert!(validate_path(&[s(&[0]), s(&[-2])], &s(&[0]), &e, &g).is_err());
        let small: BTreeSet<Site> = [s(&[0]), s(&[-2])].into();
        assert!(validate_path(&good, &s(&[0]), &small, &g).is_err());
        assert!(validate_path(&[], &s(&[0]), &e, &g).is_err());
    }

    #[test]
    fn origin_update_hits_layer_zero() {
        let params = ModelParams::new(2, 0.5).unwrap();
        let w = Window::cube(2, -2, 0).unwrap();
        let g = GeometrySet::new(2.0, 0.25, 2).unwrap();
        // All zeros with zero exterior: every site is unconstrained.
        let init = Configuration::filled(w.clone(), 0, 0);
        for seed in 0..50 {
            let log = simulate(&params, &init, 2.0, seed).unwrap();
            let prof = hyperplane_hit_profile(&log, &g).unwrap();
            let origin_updated = log.first_update_time(&Site::origin(2)).is_some_and(|t| t <= 1.0);
            assert_eq!(prof.hit[0], origin_updated);
        }
    }

    #[test]
    fn constants_match_closed_forms() {
        let r = compute_constants(0.5, 2, 0.5, 0.1, 0.3).unwrap();
        assert!((r.c3_prime - 1.5f64.ln()).abs() < 1e-12);
        assert!(r.two_p_ratio < 1.0);
        assert!(!r.delta_c_authoritative);
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let c3 = compute_constants(p, 1, 0.5, 0.1, 1.0).unwrap().c3_prime;
            assert!(c3 > 0.0 && c3 < prev);
            prev = c3;
        }
        assert!(compute_constants(1.0 - 1e-9, 1, 0.5, 0.1, 1.0).unwrap().c3_prime < 1e-8);
        assert!(compute_constants(0.0, 2, 0.5, 0.1, 1.0).is_err());
        assert!(compute_constants(0.5, 0, 0.5, 0.1, 1.0).is_err());
        assert!(compute_constants(0.5, 2, 1.0, 0.1, 1.0).is_err());
        assert!(compute_constants(0.5, 2, 0.5, 0.0, 1.0).is_err());
        assert!(compute_constants(0.5, 2, 0.5, 0.1, -1.0).is_err());
        let kv = r.to_key_value();
        assert!(kv.contains("delta_c_authoritative = false"));
    }

    #[test]
    fn cascade_of_origin_is_degenerate() {
        assert_eq!(cascade_sites(&s(&[-2, -3])), vec![s(&[-2, -3]), s(&[0, -3]), s(&[0, 0])]);
        let params = ModelParams::new(2, 0.5).unwrap();
        let w = Window::cube(2, -2, 0).unwrap();
        let spec = MeasureSpec::Delta(Configuration::filled(w.clone(), 0, 0));
        let ens = Ensemble {
            params,
            spec: &spec,
            window: &w,
            seed: 4,
        };
        let probe = fk_cascade_probe(&ens, &Site::origin(2), 0.5, 5.0, 200).unwrap();
        // Origin starts at zero, so T_t(origin) > 0 on every run.
        assert!(probe.probabilities.iter().all(|&v| v == 0.0));
        assert!(fk_cascade_probe(&ens, &s(&[1, 0]), 0.5, 5.0, 10).is_err());
        assert!(fk_cascade_probe(&ens, &Site::origin(2), 1.0, 5.0, 10).is_err());
    }
}
