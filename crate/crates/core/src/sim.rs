//! The graphical construction: rate-1 Poisson clocks and Bernoulli(p) bits
//! on every window site, replayed in time order.
//!
//! At each ring of site `x` the bit replaces the spin of `x` iff some
//! `x - e_i` holds a zero at that instant (exterior neighbours read the
//! frozen exterior spin). Scheduling uses a min-heap keyed by each site's
//! next ring time. Simultaneous rings, which have probability zero, fire in
//! lexicographic site order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::lattice::{
    spin_at_site, Configuration, LatticeError, ModelParams, Region, Site, Spin, Window,
};
use crate::streams::site_rng;

/// Largest accepted horizon.
pub const MAX_HORIZON: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("horizon must be finite and in [0, {MAX_HORIZON}], got {0}")]
    InvalidHorizon(f64),
    #[error("query time {time} outside [0, {horizon}]")]
    TimeOutOfRange { time: f64, horizon: f64 },
    #[error("site {0} is outside the simulation window")]
    SiteOutsideWindow(Site),
    #[error("configuration has dimension {got}, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("illegal-ring information was not retained (legal-only log)")]
    CompactLog,
    #[error("event log format: {0}")]
    Format(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// One clock ring. `site` is the window index of the ringing site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingRecord {
    pub site: usize,
    pub time: f64,
    pub bit: Spin,
    pub legal: bool,
    pub spin_after: Spin,
}

/// Knobs of a simulation run.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Keep only legal rings in the log.
    pub legal_only: bool,
    /// Per-site salts replacing the default clock stream of those sites.
    pub stream_salts: BTreeMap<Site, u64>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    site: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed: BinaryHeap is a max-heap and we want the earliest ring.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.site.cmp(&self.site))
    }
}

fn check_horizon(horizon: f64) -> Result<(), SimError> {
    if horizon.is_finite() && (0.0..=MAX_HORIZON).contains(&horizon) {
        Ok(())
    } else {
        Err(SimError::InvalidHorizon(horizon))
    }
}

/// Runs the dynamics from `initial` up to `horizon`, handing every ring to
/// `on_ring` together with the post-ring spins. Returning
/// `ControlFlow::Break` stops the run early.
pub fn run_graphical<F>(
    params: &ModelParams,
    initial: &Configuration,
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
    mut on_ring: F,
) -> Result<(), SimError>
where
    F: FnMut(&RingRecord, &[Spin]) -> ControlFlow<()>,
{
    check_horizon(horizon)?;
    let window = initial.window();
    let d = window.dim();
    if d != params.d {
        return Err(SimError::DimensionMismatch {
            expected: params.d,
            got: d,
        });
    }
    let n = window.len();
    let pred = window.predecessor_table();
    let ext = initial.exterior_predecessor_spins();
    let mut spins = initial.spins().to_vec();

    let mut streams: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let x = window.site_at(i);
            let salt = opts.stream_salts.get(&x).copied().unwrap_or(0);
            site_rng(seed, &x, salt)
        })
        .collect();

    let mut queue = BinaryHeap::with_capacity(n);
    for (site, rng) in streams.iter_mut().enumerate() {
        let time: f64 = rng.sample(Exp1);
        if time <= horizon {
            queue.push(Pending { time, site });
        }
    }

    while let Some(Pending { time, site }) = queue.pop() {
        let rng = &mut streams[site];
        let bit = Spin::from(rng.random::<f64>() < params.p);
        let slots = site * d..(site + 1) * d;
        let legal = pred[slots.clone()]
            .iter()
            .zip(&ext[slots])
            .any(|(nb, &e)| nb.map_or(e, |j| spins[j]) == 0);
        if legal {
            spins[site] = bit;
        }
        let rec = RingRecord {
            site,
            time,
            bit,
            legal,
            spin_after: spins[site],
        };
        let next = time + rng.sample::<f64, _>(Exp1);
        if next <= horizon {
            queue.push(Pending { time: next, site });
        }
        if on_ring(&rec, &spins).is_break() {
            break;
        }
    }
    Ok(())
}

/// The realized graphical construction up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    params: ModelParams,
    initial: Configuration,
    horizon: f64,
    seed: u64,
    legal_only: bool,
    records: Vec<RingRecord>,
    by_site: Vec<Vec<u32>>,
}

/// Simulates and records every ring.
pub fn simulate(
    params: &ModelParams,
    initial: &Configuration,
    horizon: f64,
    seed: u64,
) -> Result<EventLog, SimError> {
    simulate_with(params, initial, horizon, seed, &SimOptions::default())
}

pub fn simulate_with(
    params: &ModelParams,
    initial: &Configuration,
    horizon: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<EventLog, SimError> {
    let mut records = Vec::new();
    run_graphical(params, initial, horizon, seed, opts, |rec, _| {
        if rec.legal || !opts.legal_only {
            records.push(*rec);
        }
        ControlFlow::Continue(())
    })?;
    Ok(EventLog::from_parts(
        *params,
        initial.clone(),
        horizon,
        seed,
        opts.legal_only,
        records,
    ))
}

impl EventLog {
    fn from_parts(
        params: ModelParams,
        initial: Configuration,
        horizon: f64,
        seed: u64,
        legal_only: bool,
        records: Vec<RingRecord>,
    ) -> Self {
        let mut by_site = vec![Vec::new(); initial.window().len()];
        for (i, r) in records.iter().enumerate() {
            by_site[r.site].push(i as u32);
        }
        Self {
            params,
            initial,
            horizon,
            seed,
            legal_only,
            records,
            by_site,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn window(&self) -> &Window {
        self.initial.window()
    }

    pub fn initial(&self) -> &Configuration {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_legal_only(&self) -> bool {
        self.legal_only
    }

    pub fn records(&self) -> &[RingRecord] {
        &self.records
    }

    pub fn site_of(&self, rec: &RingRecord) -> Site {
        self.window().site_at(rec.site)
    }

    /// Records of one window site, in time order.
    pub fn site_records(&self, idx: usize) -> impl Iterator<Item = &RingRecord> + '_ {
        self.by_site[idx].iter().map(move |&i| &self.records[i as usize])
    }

    pub fn legal_count(&self) -> usize {
        self.records.iter().filter(|r| r.legal).count()
    }

    fn index(&self, x: &Site) -> Result<usize, SimError> {
        self.window()
            .index_of(x)
            .ok_or_else(|| SimError::SiteOutsideWindow(x.clone()))
    }

    fn check_time(&self, s: f64) -> Result<(), SimError> {
        if (0.0..=self.horizon).contains(&s) {
            Ok(())
        } else {
            Err(SimError::TimeOutOfRange {
                time: s,
                horizon: self.horizon,
            })
        }
    }

    /// Spin of `x` at time `s`.
    pub fn spin_at_time(&self, x: &Site, s: f64) -> Result<Spin, SimError> {
        let idx = self.index(x)?;
        self.check_time(s)?;
        let mut spin = self.initial.spins()[idx];
        for r in self.site_records(idx) {
            if r.time > s {
                break;
            }
            if r.legal {
                spin = r.spin_after;
            }
        }
        Ok(spin)
    }

    /// Piecewise-constant trajectory of `x`: the initial spin at time 0
    /// followed by every legal ring that changed the spin.
    pub fn trajectory(&self, x: &Site) -> Result<Vec<(f64, Spin)>, SimError> {
        let idx = self.index(x)?;
        let mut spin = self.initial.spins()[idx];
        let mut out = vec![(0.0, spin)];
        for r in self.site_records(idx).filter(|r| r.legal) {
            if r.spin_after != spin {
                spin = r.spin_after;
                out.push((r.time, spin));
            }
        }
        Ok(out)
    }

    /// Lebesgue time `x` spends at zero during `[0, t]`.
    pub fn occupation_time(&self, x: &Site, t: f64) -> Result<f64, SimError> {
        let idx = self.index(x)?;
        self.check_time(t)?;
        Ok(self.occupation_by_index(idx, t))
    }

    pub(crate) fn occupation_by_index(&self, idx: usize, t: f64) -> f64 {
        let mut spin = self.initial.spins()[idx];
        let mut last = 0.0;
        let mut total = 0.0;
        for r in self.site_records(idx) {
            if r.time > t {
                break;
            }
            if r.legal && r.spin_after != spin {
                if spin == 0 {
                    total += r.time - last;
                }
                spin = r.spin_after;
                last = r.time;
            }
        }
        if spin == 0 {
            total += t - last;
        }
        total
    }

    /// First legal ring at `x`, `None` if there is none before the horizon
    /// or if `x` lies outside the window (exterior spins never update).
    pub fn first_update_time(&self, x: &Site) -> Option<f64> {
        let idx = self.window().index_of(x)?;
        self.first_update_by_index(idx)
    }

    pub(crate) fn first_update_by_index(&self, idx: usize) -> Option<f64> {
        self.site_records(idx).find(|r| r.legal).map(|r| r.time)
    }

    /// First ring at `x`, legal or not.
    pub fn first_ring_time(&self, x: &Site) -> Result<Option<f64>, SimError> {
        if self.legal_only {
            return Err(SimError::CompactLog);
        }
        let idx = self.index(x)?;
        Ok(self.site_records(idx).next().map(|r| r.time))
    }

    /// Sites of `region` with at least one legal ring at time `<= deadline`.
    pub fn updated_set(&self, region: &Region, deadline: f64) -> Result<BTreeSet<Site>, SimError> {
        if deadline > self.horizon {
            return Err(SimError::TimeOutOfRange {
                time: deadline,
                horizon: self.horizon,
            });
        }
        Ok(region
            .sites()
            .iter()
            .filter(|x| {
                self.window()
                    .index_of(x)
                    .and_then(|i| self.first_update_by_index(i))
                    .is_some_and(|t| t <= deadline)
            })
            .cloned()
            .collect())
    }

    /// True if `x` holds spin 0 during the whole of `[0, until]`.
    pub fn stays_at_zero(&self, x: &Site, until: f64) -> Result<bool, SimError> {
        let idx = match self.window().index_of(x) {
            Some(i) => i,
            None => return Ok(spin_at_site(&self.initial, x) == 0),
        };
        self.check_time(until)?;
        if self.initial.spins()[idx] != 0 {
            return Ok(false);
        }
        Ok(!self
            .site_records(idx)
            .take_while(|r| r.time <= until)
            .any(|r| r.legal && r.spin_after == 1))
    }

    /// Replays the log from the initial configuration and checks every
    /// record: legality must match the constraint evaluated on the replayed
    /// configuration and `spin_after` must follow from it.
    pub fn verify_replay(&self) -> Result<(), String> {
        let w = self.window();
        let d = w.dim();
        let pred = w.predecessor_table();
        let ext = self.initial.exterior_predecessor_spins();
        let mut spins = self.initial.spins().to_vec();
        let mut prev = 0.0;
        for (k, r) in self.records.iter().enumerate() {
            if !(r.time > 0.0 && r.time <= self.horizon) || r.time < prev {
                return Err(format!("record {k}: time {} out of order or range", r.time));
            }
            prev = r.time;
            if self.legal_only {
                // Illegal rings are absent; legality cannot be re-derived
                // from the partial record, only consistency of changes.
                spins[r.site] = r.spin_after;
                continue;
            }
            let slots = r.site * d..(r.site + 1) * d;
            let legal = pred[slots.clone()]
                .iter()
                .zip(&ext[slots])
                .any(|(nb, &e)| nb.map_or(e, |j| spins[j]) == 0);
            if legal != r.legal {
                return Err(format!("record {k}: legality mismatch"));
            }
            let expect = if legal { r.bit } else { spins[r.site] };
            if expect != r.spin_after {
                return Err(format!("record {k}: spin_after mismatch"));
            }
            spins[r.site] = expect;
        }
        Ok(())
    }

    /// CSV export: manifest comment lines, then
    /// `site_coords,time,bit,legal,spin_after` with 17 significant digits
    /// for times.
    pub fn to_csv(&self) -> String {
        let w = self.window();
        let join = |s: &Site| {
            s.coords()
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# d={} p={} seed={} horizon={} window={}:{} exterior={} mode={}",
            self.params.d,
            self.params.p,
            self.seed,
            self.horizon,
            join(w.lower()),
            join(w.upper()),
            self.initial.exterior(),
            if self.legal_only { "legal" } else { "full" }
        );
        let init: String = self
            .initial
            .spins()
            .iter()
            .map(|&s| if s == 0 { '0' } else { '1' })
            .collect();
        let _ = writeln!(out, "# initial={init}");
        if !self.initial.boundary().is_empty() {
            let b: Vec<String> = self
                .initial
                .boundary()
                .iter()
                .map(|(x, s)| format!("{}:{s}", join(x)))
                .collect();
            let _ = writeln!(out, "# boundary={}", b.join(";"));
        }
        out.push_str("site_coords,time,bit,legal,spin_after\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.16e},{},{},{}",
                join(&w.site_at(r.site)),
                r.time,
                r.bit,
                u8::from(r.legal),
                r.spin_after
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let ferr = |m: &str| SimError::Format(m.to_string());
        let mut lines = text.lines();
        let manifest = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| ferr("missing manifest line"))?;
        let mut fields = BTreeMap::new();
        for tok in manifest.split(' ').filter(|t| t.contains('=')) {
            let (k, v) = tok.split_once('=').unwrap();
            fields.insert(k, v);
        }
        // Window coordinates contain spaces; recover them from the raw line.
        let win = manifest
            .split_once("window=")
            .and_then(|(_, rest)| rest.split_once(" exterior="))
            .map(|(w, _)| w)
            .ok_or_else(|| ferr("missing window"))?;
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| ferr(k));
        let d: usize = get("d")?.parse().map_err(|_| ferr("bad d"))?;
        let p: f64 = get("p")?.parse().map_err(|_| ferr("bad p"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| ferr("bad seed"))?;
        let horizon: f64 = get("horizon")?.parse().map_err(|_| ferr("bad horizon"))?;
        let exterior: u8 = get("exterior")?.parse().map_err(|_| ferr("bad exterior"))?;
        let legal_only = get("mode")? == "legal";
        let parse_site = |s: &str| -> Result<Site, SimError> {
            s.split_whitespace()
                .map(|c| c.parse::<i64>().map_err(|_| ferr("bad coordinate")))
                .collect::<Result<Vec<_>, _>>()
                .map(Site)
        };
        let (lo, hi) = win.split_once(':').ok_or_else(|| ferr("bad window"))?;
        let window = Window::new(parse_site(lo)?, parse_site(hi)?)?;
        if window.dim() != d {
            return Err(ferr("window dimension"));
        }
        let init_line = lines
            .next()
            .and_then(|l| l.strip_prefix("# initial="))
            .ok_or_else(|| ferr("missing initial line"))?;
        let spins: Vec<Spin> = init_line
            .bytes()
            .map(|b| match b {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(ferr("bad initial spin")),
            })
            .collect::<Result<_, _>>()?;
        let bit_of = |s: &str| -> Result<u8, SimError> {
            match s {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(ferr("bad 0/1 field")),
            }
        };
        let mut initial = Configuration::new(window.clone(), spins, exterior)?;
        let mut header = lines.next();
        if let Some(b) = header.and_then(|l| l.strip_prefix("# boundary=")) {
            for entry in b.split(';') {
                let (x, s) = entry.rsplit_once(':').ok_or_else(|| ferr("bad boundary entry"))?;
                initial = initial.with_boundary(&parse_site(x)?, bit_of(s)?)?;
            }
            header = lines.next();
        }
        if header != Some("site_coords,time,bit,legal,spin_after") {
            return Err(ferr("missing column header"));
        }
        let bit = bit_of;
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(ferr("record must have 5 columns"));
            }
            let site = window
                .index_of(&parse_site(cols[0])?)
                .ok_or_else(|| ferr("record site outside window"))?;
            records.push(RingRecord {
                site,
                time: cols[1].parse().map_err(|_| ferr("bad time"))?,
                bit: bit(cols[2])?,
                legal: bit(cols[3])? == 1,
                spin_after: bit(cols[4])?,
            });
        }
        Ok(Self::from_parts(
            ModelParams::new(d, p)?,
            initial,
            horizon,
            seed,
            legal_only,
            records,
        ))
    }
}
