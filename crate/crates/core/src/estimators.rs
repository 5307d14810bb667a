//! Monte Carlo estimators of persistence and relaxation curves, occupation
//! time statistics and log-linear exponential fits.
//!
//! Replicas run in parallel but are collected in replica order and reduced
//! sequentially, so every reported number depends only on the seed.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::exact::{mu_expectation, ExactError, State, MAX_REGION_SITES};
use crate::lattice::{
    sample_initial, spin_at_site, Configuration, LatticeError, MeasureSpec, ModelParams, Region,
    Site, Window,
};
use crate::sim::{run_graphical, SimError, SimOptions};
use crate::streams::{aux_rng, derive_seed, replica_seed};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const DEFAULT_N_OUTER: usize = 200;
pub const DEFAULT_N_INNER: usize = 100;

const INIT_TAG: u64 = 0x1a17;
const BOOT_TAG: u64 = 0xb007;
const INNER_TAG: u64 = 0x1a2e;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("time grid must be nonempty, finite, nonnegative and increasing")]
    InvalidTimes,
    #[error("sample count must be positive")]
    NoSamples,
    #[error("site {0} lies outside the window")]
    SiteOutsideWindow(Site),
    #[error("observable is constant; its normalized deviation is undefined")]
    ConstantObservable,
    #[error("observable table has {got} entries, support needs {expected}")]
    TableSize { expected: usize, got: usize },
    #[error("fit needs at least 3 points above the floor, found {0}")]
    TooFewPoints(usize),
    #[error("exponent gamma must be > 0, got {0}")]
    InvalidGamma(f64),
    #[error("model dimension {model} does not match window dimension {window}")]
    DimensionMismatch { model: usize, window: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

/// Shared setting of a Monte Carlo experiment: dynamics parameters, initial
/// law, simulation window and master seed.
#[derive(Debug, Clone, Copy)]
pub struct Ensemble<'a> {
    pub params: ModelParams,
    pub spec: &'a MeasureSpec,
    pub window: &'a Window,
    pub seed: u64,
}

impl Ensemble<'_> {
    fn check(&self) -> Result<(), EstimateError> {
        if self.params.d != self.window.dim() {
            return Err(EstimateError::DimensionMismatch {
                model: self.params.d,
                window: self.window.dim(),
            });
        }
        Ok(())
    }

    /// Initial configuration of replica `i`.
    pub fn initial(&self, i: u64) -> Result<Configuration, LatticeError> {
        let rs = replica_seed(self.seed, i);
        sample_initial(self.spec, self.window, &mut aux_rng(rs, INIT_TAG))
    }

    fn index(&self, x: &Site) -> Result<usize, EstimateError> {
        self.window
            .index_of(x)
            .ok_or_else(|| EstimateError::SiteOutsideWindow(x.clone()))
    }
}

fn check_times(times: &[f64]) -> Result<f64, EstimateError> {
    let ok = !times.is_empty()
        && times.iter().all(|t| t.is_finite() && *t >= 0.0)
        && times.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(*times.last().unwrap())
    } else {
        Err(EstimateError::InvalidTimes)
    }
}

/// Curve of estimates with 95% confidence halfwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub halfwidths: Vec<f64>,
    pub n_outer: usize,
    pub n_inner: usize,
}

impl DecaySeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `t,value,halfwidth` rows after the given manifest comment lines.
    pub fn to_csv(&self, manifest: &[String]) -> String {
        let mut out = String::new();
        for m in manifest {
            let _ = writeln!(out, "# {m}");
        }
        out.push_str("t,value,halfwidth\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{:.17e},{:.17e}",
                self.times[i], self.values[i], self.halfwidths[i]
            );
        }
        out
    }
}

/// Wilson score interval for `k` successes in `n` trials; returns
/// `(lower, upper)`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    let n_f = n as f64;
    let phat = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (phat + z2 / (2.0 * n_f)) / denom;
    let half = z * (phat * (1.0 - phat) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

fn proportion(k: usize, n: usize) -> (f64, f64) {
    let (lo, hi) = wilson_interval(k, n, Z95);
    (k as f64 / n as f64, 0.5 * (hi - lo))
}

/// `F(t) = P(tau_x > t)` over `n` replicas with freshly drawn initial
/// configurations.
pub fn estimate_persistence(
    ens: &Ensemble,
    x: &Site,
    times: &[f64],
    n: usize,
) -> Result<DecaySeries, EstimateError> {
    ens.check()?;
    let horizon = check_times(times)?;
    if n == 0 {
        return Err(EstimateError::NoSamples);
    }
    let xi = ens.index(x)?;
    let taus: Vec<Option<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| -> Result<Option<f64>, EstimateError> {
            let init = ens.initial(i)?;
            let mut tau = None;
            run_graphical(
                &ens.params,
                &init,
                horizon,
                replica_seed(ens.seed, i),
                &SimOptions::default(),
                |rec, _| {
                    if rec.site == xi && rec.legal {
                        tau = Some(rec.time);
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                },
            )?;
            Ok(tau)
        })
        .collect::<Result<_, _>>()?;

    let mut values = Vec::with_capacity(times.len());
    let mut halfwidths = Vec::with_capacity(times.len());
    for &t in times {
        let k = taus.iter().filter(|tau| tau.is_none_or(|v| v > t)).count();
        let (v, h) = proportion(k, n);
        values.push(v);
        halfwidths.push(h);
    }
    Ok(DecaySeries {
        times: times.to_vec(),
        values,
        halfwidths,
        n_outer: n,
        n_inner: 1,
    })
}

/// Real function of the spins on a finite support, tabulated by support
/// state (bit `i` = spin of the `i`-th support site in lexicographic order).
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    support: Region,
    table: Vec<f64>,
}

impl Observable {
    pub fn new(support: Region, table: Vec<f64>) -> Result<Self, EstimateError> {
        if support.len() > MAX_REGION_SITES {
            return Err(ExactError::RegionTooLarge(support.len()).into());
        }
        let expected = 1usize << support.len();
        if table.len() != expected {
            return Err(EstimateError::TableSize {
                expected,
                got: table.len(),
            });
        }
        Ok(Self { support, table })
    }

    pub fn from_fn(support: Region, f: impl Fn(State) -> f64) -> Result<Self, EstimateError> {
        let n = support.len().min(MAX_REGION_SITES + 1);
        let table = (0..1u64 << n).map(|s| f(s as State)).collect();
        Self::new(support, table)
    }

    /// `f(eta) = eta(x)`.
    pub fn spin(x: Site) -> Self {
        Self {
            support: Region::explicit([x]),
            table: vec![0.0, 1.0],
        }
    }

    /// `f(eta) = prod_{x in support} eta(x)`.
    pub fn all_ones(support: Region) -> Result<Self, EstimateError> {
        let full = (1u64 << support.len()) - 1;
        Self::from_fn(support, |s| f64::from(u8::from(s as u64 == full)))
    }

    pub fn support(&self) -> &Region {
        &self.support
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn eval_state(&self, s: State) -> f64 {
        self.table[s as usize]
    }

    pub fn eval(&self, config: &Configuration) -> f64 {
        let s = self
            .support
            .sites()
            .iter()
            .enumerate()
            .fold(0 as State, |acc, (i, x)| {
                acc | (State::from(spin_at_site(config, x)) << i)
            });
        self.eval_state(s)
    }

    pub fn mu(&self, p: f64) -> Result<f64, EstimateError> {
        Ok(mu_expectation(|s| self.eval_state(s), &self.support, p)?)
    }

    /// `||f - mu(f)||_inf`.
    pub fn sup_deviation(&self, p: f64) -> Result<f64, EstimateError> {
        let m = self.mu(p)?;
        Ok(self.table.iter().fold(0.0f64, |a, v| a.max((v - m).abs())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationOptions {
    /// Exponent applied to the normalized deviation; 1 gives the plain
    /// integral.
    pub gamma: f64,
    pub bootstrap: usize,
}

impl Default for RelaxationOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            bootstrap: DEFAULT_BOOTSTRAP,
        }
    }
}

/// Values of `f(eta_t)` at each time on the grid for one trajectory.
fn observe_trajectory(
    params: &ModelParams,
    init: &Configuration,
    f: &Observable,
    support_idx: &[usize],
    site_pos: &[Option<usize>],
    times: &[f64],
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    let mut state: State = support_idx
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &w)| acc | (State::from(init.spins()[w]) << i));
    let mut out = Vec::with_capacity(times.len());
    let horizon = *times.last().unwrap();
    run_graphical(params, init, horizon, seed, &SimOptions::default(), |rec, _| {
        while out.len() < times.len() && times[out.len()] < rec.time {
            out.push(f.eval_state(state));
        }
        if rec.legal {
            if let Some(i) = site_pos[rec.site] {
                state = (state & !(1 << i)) | (State::from(rec.spin_after) << i);
            }
        }
        ControlFlow::Continue(())
    })?;
    while out.len() < times.len() {
        out.push(f.eval_state(state));
    }
    Ok(out)
}

/// `int |E_eta f(eta_t) - mu(f)| dnu(eta) / ||f - mu(f)||_inf`, estimated
/// with `n_outer` draws of `eta` and `n_inner` trajectories per draw.
/// Halfwidths are bootstrap percentile intervals over the outer draws.
pub fn estimate_relaxation(
    ens: &Ensemble,
    f: &Observable,
    times: &[f64],
    n_outer: usize,
    n_inner: usize,
    opts: &RelaxationOptions,
) -> Result<DecaySeries, EstimateError> {
    ens.check()?;
    check_times(times)?;
    if n_outer == 0 || n_inner == 0 {
        return Err(EstimateError::NoSamples);
    }
    if !(opts.gamma > 0.0) {
        return Err(EstimateError::InvalidGamma(opts.gamma));
    }
    let mu_f = f.mu(ens.params.p)?;
    let norm = f.sup_deviation(ens.params.p)?;
    if norm == 0.0 {
        return Err(EstimateError::ConstantObservable);
    }
    let support_idx: Vec<usize> = f
        .support()
        .sites()
        .iter()
        .map(|x| ens.index(x))
        .collect::<Result<_, _>>()?;
    let mut site_pos = vec![None; ens.window.len()];
    for (i, &w) in support_idx.iter().enumerate() {
        site_pos[w] = Some(i);
    }

    // outer[j][k]: normalized deviation of draw j at time k.
    let outer: Vec<Vec<f64>> = (0..n_outer as u64)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>, EstimateError> {
            let init = ens.initial(j)?;
            let oseed = derive_seed(replica_seed(ens.seed, j), INNER_TAG);
            let mut sums = vec![0.0; times.len()];
            for k in 0..n_inner as u64 {
                let vals = observe_trajectory(
                    &ens.params,
                    &init,
                    f,
                    &support_idx,
                    &site_pos,
                    times,
                    replica_seed(oseed, k),
                )?;
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
            }
            Ok(sums
                .iter()
                .map(|s| ((s / n_inner as f64 - mu_f).abs() / norm).powf(opts.gamma))
                .collect())
        })
        .collect::<Result<_, _>>()?;

    let nt = times.len();
    let mean_at = |idx: &mut dyn Iterator<Item = usize>, k: usize| -> f64 {
        let mut s = 0.0;
        let mut c = 0usize;
        for j in idx {
            s += outer[j][k];
            c += 1;
        }
        s / c as f64
    };
    let values: Vec<f64> = (0..nt).map(|k| mean_at(&mut (0..n_outer), k)).collect();

    let mut halfwidths = vec![0.0; nt];
    if n_outer > 1 && opts.bootstrap > 0 {
        let mut rng = aux_rng(ens.seed, BOOT_TAG);
        let mut boots: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.bootstrap); nt];
        let mut pick = vec![0usize; n_outer];
        for _ in 0..opts.bootstrap {
            for p in pick.iter_mut() {
                *p = rng.random_range(0..n_outer);
            }
            for (k, b) in boots.iter_mut().enumerate() {
                b.push(mean_at(&mut pick.iter().copied(), k));
            }
        }
        for (k, b) in boots.iter_mut().enumerate() {
            b.sort_by(f64::total_cmp);
            halfwidths[k] = 0.5 * (quantile_sorted(b, 0.975) - quantile_sorted(b, 0.025));
        }
    }
    Ok(DecaySeries {
        times: times.to_vec(),
        values,
        halfwidths,
        n_outer,
        n_inner,
    })
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Least-squares fit of `ln value = ln C - c t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// Index range of the series spanned by the fitted points.
    pub fit_window: std::ops::Range<usize>,
    /// Indices actually used (values above the floor).
    pub used: Vec<usize>,
}

impl FitResult {
    pub fn to_csv(&self, manifest: &[String]) -> String {
        let mut out = String::new();
        for m in manifest {
            let _ = writeln!(out, "# {m}");
        }
        out.push_str("rate,prefactor,r_squared,first_index,end_index,points\n");
        let _ = writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{},{},{}",
            self.rate,
            self.prefactor,
            self.r_squared,
            self.fit_window.start,
            self.fit_window.end,
            self.used.len()
        );
        out
    }
}

/// Three times the median halfwidth.
pub fn default_floor(series: &DecaySeries) -> f64 {
    let mut h = series.halfwidths.clone();
    h.sort_by(f64::total_cmp);
    3.0 * quantile_sorted(&h, 0.5)
}

pub fn fit_exponential(series: &DecaySeries, floor: f64) -> Result<FitResult, EstimateError> {
    let used: Vec<usize> = (0..series.len())
        .filter(|&i| series.values[i] > floor && series.values[i] > 0.0)
        .collect();
    if used.len() < 3 {
        return Err(EstimateError::TooFewPoints(used.len()));
    }
    let xs: Vec<f64> = used.iter().map(|&i| series.times[i]).collect();
    let ys: Vec<f64> = used.iter().map(|&i| series.values[i].ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EstimateError::TooFewPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 0.0 };
    Ok(FitResult {
        rate: -slope,
        prefactor: intercept.exp(),
        r_squared,
        fit_window: used[0]..used[used.len() - 1] + 1,
        used,
    })
}

/// Per-site summaries of the time spent at zero, `T_t(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationStats {
    pub sites: Vec<Site>,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub median: Vec<f64>,
    pub q95: Vec<f64>,
    /// `(1 - p) t / 4`.
    pub threshold: f64,
    /// Fraction of runs with some region site at zero for at least
    /// `threshold`.
    pub threshold_frequency: f64,
    pub threshold_halfwidth: f64,
    pub n: usize,
}

/// Occupation times of every region site over one run to time `t`.
pub(crate) fn occupation_run(
    params: &ModelParams,
    init: &Configuration,
    region_idx: &[usize],
    t: f64,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    let mut pos = vec![None; init.window().len()];
    for (i, &w) in region_idx.iter().enumerate() {
        pos[w] = Some(i);
    }
    let mut spin: Vec<u8> = region_idx.iter().map(|&w| init.spins()[w]).collect();
    let mut last = vec![0.0; region_idx.len()];
    let mut total = vec![0.0; region_idx.len()];
    run_graphical(params, init, t, seed, &SimOptions::default(), |rec, _| {
        if rec.legal {
            if let Some(i) = pos[rec.site] {
                if rec.spin_after != spin[i] {
                    if spin[i] == 0 {
                        total[i] += rec.time - last[i];
                    }
                    spin[i] = rec.spin_after;
                    last[i] = rec.time;
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    for i in 0..region_idx.len() {
        if spin[i] == 0 {
            total[i] += t - last[i];
        }
    }
    Ok(total)
}

pub fn occupation_statistics(
    ens: &Ensemble,
    region: &Region,
    t: f64,
    n: usize,
) -> Result<OccupationStats, EstimateError> {
    ens.check()?;
    check_times(&[t])?;
    if n == 0 {
        return Err(EstimateError::NoSamples);
    }
    let idx: Vec<usize> = region
        .sites()
        .iter()
        .map(|x| ens.index(x))
        .collect::<Result<_, _>>()?;
    let runs: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>, EstimateError> {
            let init = ens.initial(i)?;
            Ok(occupation_run(&ens.params, &init, &idx, t, replica_seed(ens.seed, i))?)
        })
        .collect::<Result<_, _>>()?;
    let threshold = (1.0 - ens.params.p) * t / 4.0;
    let hits = runs
        .iter()
        .filter(|r| r.iter().any(|&v| v >= threshold))
        .count();
    let (freq, half) = proportion(hits, n);
    let m = region.len();
    let mut stats = OccupationStats {
        sites: region.sites().to_vec(),
        mean: Vec::with_capacity(m),
        q05: Vec::with_capacity(m),
        median: Vec::with_capacity(m),
        q95: Vec::with_capacity(m),
        threshold,
        threshold_frequency: freq,
        threshold_halfwidth: half,
        n,
    };
    for s in 0..m {
        let mut col: Vec<f64> = runs.iter().map(|r| r[s]).collect();
        stats.mean.push(col.iter().sum::<f64>() / n as f64);
        col.sort_by(f64::total_cmp);
        stats.q05.push(quantile_sorted(&col, 0.05));
        stats.median.push(quantile_sorted(&col, 0.5));
        stats.q95.push(quantile_sorted(&col, 0.95));
    }
    Ok(stats)
}

/// Fraction of `n` initial draws with a zero in `{-m..0}^d` (exterior spins
/// included), with its Wilson halfwidth.
pub fn orthant_zero_frequency(ens: &Ensemble, m: u64, n: usize) -> Result<(f64, f64), EstimateError> {
    ens.check()?;
    if n == 0 {
        return Err(EstimateError::NoSamples);
    }
    let cube = Window::cube(ens.params.d, -(m as i64), 0)?;
    let hits: Vec<bool> = (0..n as u64)
        .into_par_iter()
        .map(|i| -> Result<bool, EstimateError> {
            let c = ens.initial(i)?;
            Ok(cube.sites().any(|x| spin_at_site(&c, &x) == 0))
        })
        .collect::<Result<_, _>>()?;
    Ok(proportion(hits.iter().filter(|&&h| h).count(), n))
}
