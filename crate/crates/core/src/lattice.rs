//! Sites, windows, regions and configurations of the East model on a
//! finite truncation of `Z^d`.
//!
//! A [`Configuration`] stores spins on a product-box [`Window`]; every site
//! outside the window reads a single frozen exterior spin. Windows order
//! their sites lexicographically, with the last coordinate varying fastest,
//! so window indices and the lexicographic order of coordinates agree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use rand::Rng;
use thiserror::Error;

/// A spin value, always `0` or `1`.
pub type Spin = u8;

/// Largest number of sites a window may hold.
pub const MAX_WINDOW_SITES: u64 = 1 << 31;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("p must lie in (0, 1), got {0}")]
    InvalidP(f64),
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("site has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed window: {0}")]
    MalformedWindow(String),
    #[error("spin values must be 0 or 1, got {0}")]
    InvalidSpin(u8),
    #[error("Bernoulli density must lie in [0, 1), got {0}")]
    InvalidDensity(f64),
    #[error("stored configuration window does not contain the requested window")]
    IncompatibleWindow,
    #[error("measure does not satisfy Condition (C): the all-ones event on the negative orthant has no exponential bound")]
    ConditionCFailure,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Dimension and update probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    pub p: f64,
}

impl ModelParams {
    pub fn new(d: usize, p: f64) -> Result<Self, LatticeError> {
        if d < 1 {
            return Err(LatticeError::InvalidDimension);
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(LatticeError::InvalidP(p));
        }
        Ok(Self { d, p })
    }
}

/// A point of `Z^d`. Ordering is lexicographic in the coordinates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    pub fn origin(d: usize) -> Self {
        Site(vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    /// `self - e_i` (zero-based `i`).
    pub fn step_down(&self, i: usize) -> Site {
        let mut c = self.0.clone();
        c[i] -= 1;
        Site(c)
    }

    /// True when every coordinate is `<= 0`, i.e. the site lies in `(-N)^d`.
    pub fn in_negative_orthant(&self) -> bool {
        self.0.iter().all(|&c| c <= 0)
    }

    /// True when `self` lies in the dependence cone `x + (-N)^d`.
    pub fn in_cone_of(&self, x: &Site) -> bool {
        self.0.iter().zip(&x.0).all(|(a, b)| a <= b)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Finite product box `{lower_1..upper_1} x ... x {lower_d..upper_d}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Window {
    lower: Site,
    upper: Site,
}

impl Window {
    pub fn new(lower: Site, upper: Site) -> Result<Self, LatticeError> {
        if lower.dim() == 0 {
            return Err(LatticeError::InvalidDimension);
        }
        if lower.dim() != upper.dim() {
            return Err(LatticeError::MalformedWindow(format!(
                "lower has {} coordinates, upper has {}",
                lower.dim(),
                upper.dim()
            )));
        }
        let mut total: u64 = 1;
        for (i, (l, u)) in lower.0.iter().zip(&upper.0).enumerate() {
            if l > u {
                return Err(LatticeError::MalformedWindow(format!(
                    "lower[{i}] = {l} exceeds upper[{i}] = {u}"
                )));
            }
            let side = (*u as i128 - *l as i128 + 1) as u128;
            total = total
                .checked_mul(u64::try_from(side).unwrap_or(u64::MAX))
                .filter(|&t| t <= MAX_WINDOW_SITES)
                .ok_or_else(|| {
                    LatticeError::MalformedWindow(format!(
                        "window exceeds {MAX_WINDOW_SITES} sites"
                    ))
                })?;
        }
        Ok(Self { lower, upper })
    }

    /// The cube `{lo..hi}^d`.
    pub fn cube(d: usize, lo: i64, hi: i64) -> Result<Self, LatticeError> {
        Self::new(Site(vec![lo; d]), Site(vec![hi; d]))
    }

    pub fn lower(&self) -> &Site {
        &self.lower
    }

    pub fn upper(&self) -> &Site {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn extent(&self, i: usize) -> usize {
        (self.upper.0[i] - self.lower.0[i] + 1) as usize
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|i| self.extent(i)).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: &Site) -> bool {
        x.dim() == self.dim()
            && x.0
                .iter()
                .zip(self.lower.0.iter().zip(&self.upper.0))
                .all(|(c, (l, u))| l <= c && c <= u)
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        self.contains(&other.lower) && self.contains(&other.upper)
    }

    /// Row-major index of `x`, or `None` outside the window.
    pub fn index_of(&self, x: &Site) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut idx = 0usize;
        for i in 0..self.dim() {
            idx = idx * self.extent(i) + (x.0[i] - self.lower.0[i]) as usize;
        }
        Some(idx)
    }

    pub fn site_at(&self, mut idx: usize) -> Site {
        let d = self.dim();
        let mut c = vec![0i64; d];
        for i in (0..d).rev() {
            let e = self.extent(i);
            c[i] = self.lower.0[i] + (idx % e) as i64;
            idx /= e;
        }
        Site(c)
    }

    /// Sites in index (= lexicographic) order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(move |i| self.site_at(i))
    }

    /// Index of `x - e_i` for each window site, `None` where that neighbour
    /// falls outside the window. Flattened as `[site * d + i]`.
    pub fn predecessor_table(&self) -> Vec<Option<usize>> {
        let d = self.dim();
        let mut stride = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            stride[i] = stride[i + 1] * self.extent(i + 1);
        }
        let mut out = Vec::with_capacity(self.len() * d);
        for idx in 0..self.len() {
            let mut rem = idx;
            let mut offs = vec![0usize; d];
            for i in (0..d).rev() {
                offs[i] = rem % self.extent(i);
                rem /= self.extent(i);
            }
            for i in 0..d {
                out.push(if offs[i] == 0 {
                    None
                } else {
                    Some(idx - stride[i])
                });
            }
        }
        out
    }
}

/// How a [`Region`] was described.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionDescriptor {
    /// `({0..floor(r)}^d) \ {origin}`.
    LambdaBox(f64),
    /// `prod {0..a_i}`, optionally without the origin.
    GeneralBox { extents: Vec<u64>, exclude_origin: bool },
    Explicit,
}

impl fmt::Display for RegionDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionDescriptor::LambdaBox(r) => write!(f, "lambda-box r={r}"),
            RegionDescriptor::GeneralBox {
                extents,
                exclude_origin,
            } => {
                let ext: Vec<String> = extents.iter().map(|a| a.to_string()).collect();
                write!(
                    f,
                    "general-box a={} exclude_origin={}",
                    ext.join(","),
                    exclude_origin
                )
            }
            RegionDescriptor::Explicit => write!(f, "explicit"),
        }
    }
}

/// A finite set of sites, kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    descriptor: RegionDescriptor,
    sites: Vec<Site>,
}

impl Region {
    pub fn explicit(sites: impl IntoIterator<Item = Site>) -> Self {
        let set: BTreeSet<Site> = sites.into_iter().collect();
        Self {
            descriptor: RegionDescriptor::Explicit,
            sites: set.into_iter().collect(),
        }
    }

    pub fn general_box(extents: &[u64], exclude_origin: bool) -> Self {
        let d = extents.len();
        let mut sites = Vec::new();
        let mut cur = vec![0i64; d];
        if d > 0 {
            'outer: loop {
                if !(exclude_origin && cur.iter().all(|&c| c == 0)) {
                    sites.push(Site(cur.clone()));
                }
                let mut i = d;
                loop {
                    if i == 0 {
                        break 'outer;
                    }
                    i -= 1;
                    if (cur[i] as u64) < extents[i] {
                        cur[i] += 1;
                        for c in cur.iter_mut().skip(i + 1) {
                            *c = 0;
                        }
                        break;
                    }
                }
            }
        }
        Self {
            descriptor: RegionDescriptor::GeneralBox {
                extents: extents.to_vec(),
                exclude_origin,
            },
            sites,
        }
    }

    pub fn descriptor(&self) -> &RegionDescriptor {
        &self.descriptor
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, x: &Site) -> bool {
        self.sites.binary_search(x).is_ok()
    }

    /// Position of `x` in the sorted site list.
    pub fn position(&self, x: &Site) -> Option<usize> {
        self.sites.binary_search(x).ok()
    }
}

/// `Lambda(r) = ({0..floor(r)}^d) \ {origin}`; empty for `r < 1`.
pub fn build_lambda_region(r: f64, d: usize) -> Region {
    let m = if r.is_finite() && r >= 0.0 { r.floor() as u64 } else { 0 };
    let mut region = Region::general_box(&vec![m; d], true);
    region.descriptor = RegionDescriptor::LambdaBox(r);
    region
}

/// Spins on a window plus the frozen exterior: a default value and
/// optional per-site overrides outside the window.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    window: Window,
    spins: Vec<Spin>,
    exterior: Spin,
    boundary: BTreeMap<Site, Spin>,
}

impl Configuration {
    pub fn new(window: Window, spins: Vec<Spin>, exterior: Spin) -> Result<Self, LatticeError> {
        if spins.len() != window.len() {
            return Err(LatticeError::MalformedWindow(format!(
                "{} spins for a window of {} sites",
                spins.len(),
                window.len()
            )));
        }
        if let Some(&bad) = spins.iter().chain(std::iter::once(&exterior)).find(|&&s| s > 1) {
            return Err(LatticeError::InvalidSpin(bad));
        }
        Ok(Self {
            window,
            spins,
            exterior,
            boundary: BTreeMap::new(),
        })
    }

    pub fn filled(window: Window, spin: Spin, exterior: Spin) -> Self {
        let n = window.len();
        Self::new(window, vec![spin; n], exterior).expect("spin values checked by caller")
    }

    /// All ones, with a single zero at `zero` (which must lie in the window).
    pub fn single_zero(window: Window, zero: &Site, exterior: Spin) -> Result<Self, LatticeError> {
        let idx = window
            .index_of(zero)
            .ok_or(LatticeError::IncompatibleWindow)?;
        let mut c = Self::filled(window, 1, exterior);
        c.spins[idx] = 0;
        Ok(c)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn exterior(&self) -> Spin {
        self.exterior
    }

    /// Freezes the exterior site `x` at `spin`, overriding the default
    /// exterior value there.
    pub fn with_boundary(mut self, x: &Site, spin: Spin) -> Result<Self, LatticeError> {
        if spin > 1 {
            return Err(LatticeError::InvalidSpin(spin));
        }
        if x.dim() != self.window.dim() {
            return Err(LatticeError::DimensionMismatch {
                expected: self.window.dim(),
                got: x.dim(),
            });
        }
        if self.window.contains(x) {
            return Err(LatticeError::IncompatibleWindow);
        }
        self.boundary.insert(x.clone(), spin);
        Ok(self)
    }

    /// Per-site exterior overrides.
    pub fn boundary(&self) -> &BTreeMap<Site, Spin> {
        &self.boundary
    }

    /// Frozen spin read through each predecessor slot, laid out like
    /// [`Window::predecessor_table`]; entries for in-window predecessors are
    /// unused.
    pub fn exterior_predecessor_spins(&self) -> Vec<Spin> {
        let d = self.window.dim();
        let mut out = vec![self.exterior; self.window.len() * d];
        if self.boundary.is_empty() {
            return out;
        }
        for (idx, x) in self.window.sites().enumerate() {
            for i in 0..d {
                if let Some(&s) = self.boundary.get(&x.step_down(i)) {
                    out[idx * d + i] = s;
                }
            }
        }
        out
    }

    pub fn set(&mut self, x: &Site, spin: Spin) -> Result<(), LatticeError> {
        if spin > 1 {
            return Err(LatticeError::InvalidSpin(spin));
        }
        let idx = self
            .window
            .index_of(x)
            .ok_or(LatticeError::IncompatibleWindow)?;
        self.spins[idx] = spin;
        Ok(())
    }

    /// Restriction to a sub-window, keeping the exterior rule.
    pub fn restrict(&self, window: &Window) -> Result<Configuration, LatticeError> {
        if !self.window.contains_window(window) {
            return Err(LatticeError::IncompatibleWindow);
        }
        let spins = window.sites().map(|x| self.spin_at(&x)).collect();
        let mut c = Configuration::new(window.clone(), spins, self.exterior)?;
        c.boundary = self.boundary.clone();
        Ok(c)
    }

    pub fn spin_at(&self, x: &Site) -> Spin {
        spin_at_site(self, x)
    }
}

/// Spin at `x`: the window value, or the frozen exterior spin.
pub fn spin_at_site(config: &Configuration, x: &Site) -> Spin {
    match config.window.index_of(x) {
        Some(i) => config.spins[i],
        None => config.boundary.get(x).copied().unwrap_or(config.exterior),
    }
}

/// The East constraint: some `x - e_i` carries spin 0.
pub fn east_constraint(config: &Configuration, x: &Site) -> bool {
    (0..x.dim()).any(|i| spin_at_site(config, &x.step_down(i)) == 0)
}

/// Law of the initial configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSpec {
    Delta(Configuration),
    /// i.i.d. spins equal to 1 with the given probability.
    ProductBernoulli(f64),
}

impl MeasureSpec {
    pub fn product_bernoulli(density: f64) -> Result<Self, LatticeError> {
        if !(0.0..1.0).contains(&density) {
            return Err(LatticeError::InvalidDensity(density));
        }
        Ok(MeasureSpec::ProductBernoulli(density))
    }
}

impl fmt::Display for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureSpec::ProductBernoulli(q) => write!(f, "bernoulli({q})"),
            MeasureSpec::Delta(c) => {
                let zeros = c.spins.iter().filter(|&&s| s == 0).count();
                write!(
                    f,
                    "delta(window={}..{}, zeros={}, exterior={})",
                    c.window.lower, c.window.upper, zeros, c.exterior
                )
            }
        }
    }
}

/// Draws an initial configuration on `window`.
pub fn sample_initial<R: Rng + ?Sized>(
    spec: &MeasureSpec,
    window: &Window,
    rng: &mut R,
) -> Result<Configuration, LatticeError> {
    match spec {
        MeasureSpec::Delta(c) => c.restrict(window),
        MeasureSpec::ProductBernoulli(q) => {
            if !(0.0..1.0).contains(q) {
                return Err(LatticeError::InvalidDensity(*q));
            }
            let spins = (0..window.len())
                .map(|_| Spin::from(rng.random::<f64>() < *q))
                .collect();
            Configuration::new(window.clone(), spins, 1)
        }
    }
}

/// Constants `(a, A)` of an exponential bound
/// `nu(all ones on {-floor(l)..0}^d) <= A exp(-a l)` for every `l >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionC {
    pub a: f64,
    pub big_a: f64,
}

impl ConditionC {
    pub fn bound(&self, ell: f64) -> f64 {
        self.big_a * (-self.a * ell).exp()
    }
}

/// Returns one valid certificate of Condition (C) for `spec`.
pub fn condition_c_params(spec: &MeasureSpec, d: usize) -> Result<ConditionC, LatticeError> {
    match spec {
        MeasureSpec::ProductBernoulli(q) => {
            if !(0.0..1.0).contains(q) {
                return Err(LatticeError::ConditionCFailure);
            }
            // (floor(l)+1)^d >= l, so q^((floor(l)+1)^d) <= q^l.
            let a = if *q == 0.0 { 1.0 } else { -q.ln() };
            Ok(ConditionC { a, big_a: 1.0 })
        }
        MeasureSpec::Delta(c) => {
            let m = nearest_orthant_zero(c, d).ok_or(LatticeError::ConditionCFailure)?;
            Ok(ConditionC {
                a: 1.0,
                big_a: (m as f64).exp(),
            })
        }
    }
}

/// Smallest `m` such that the cube `{-m..0}^d` holds a zero of `config`,
/// counting frozen exterior spins.
pub(crate) fn nearest_orthant_zero(config: &Configuration, d: usize) -> Option<u64> {
    let w = &config.window;
    if w.dim() != d {
        return None;
    }
    if !config.boundary.is_empty() {
        return nearest_orthant_zero_scan(config, d);
    }
    let mut best: Option<u64> = None;
    for (idx, &s) in config.spins.iter().enumerate() {
        if s != 0 {
            continue;
        }
        let x = w.site_at(idx);
        if x.in_negative_orthant() {
            let m = x.0.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
            best = Some(best.map_or(m, |b| b.min(m)));
        }
    }
    if config.exterior == 0 {
        // First cube {-m..0}^d that pokes out of the window.
        let m_ext = if w.upper.0.iter().any(|&u| u < 0) {
            0
        } else {
            w.lower
                .0
                .iter()
                .map(|&l| if l > 0 { 0 } else { l.unsigned_abs() + 1 })
                .min()
                .unwrap_or(0)
        };
        best = Some(best.map_or(m_ext, |b| b.min(m_ext)));
    }
    best
}

/// Shell-by-shell scan used when exterior overrides are present.
fn nearest_orthant_zero_scan(config: &Configuration, d: usize) -> Option<u64> {
    let reach = |s: &Site| s.0.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
    let limit = [&config.window.lower, &config.window.upper]
        .into_iter()
        .chain(config.boundary.keys())
        .map(reach)
        .max()
        .unwrap_or(0)
        + 1;
    for m in 0..=limit {
        let cube = Window::cube(d, -(m as i64), 0).ok()?;
        let hit = cube
            .sites()
            .filter(|x| reach(x) == m)
            .any(|x| spin_at_site(config, &x) == 0);
        if hit {
            return Some(m);
        }
    }
    None
}

/// Writes `params` and `config` in the line-oriented text format:
/// a header `d p lower.. upper.. exterior` followed by `x_1 .. x_d spin`
/// per window site, then `boundary x_1 .. x_d spin` per exterior override.
pub fn write_configuration(params: &ModelParams, config: &Configuration) -> String {
    let w = &config.window;
    let mut out = String::new();
    let join = |s: &Site| {
        s.0.iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(
        out,
        "{} {} {} {} {}",
        params.d,
        params.p,
        join(&w.lower),
        join(&w.upper),
        config.exterior
    );
    for (idx, s) in config.spins.iter().enumerate() {
        let _ = writeln!(out, "{} {}", join(&w.site_at(idx)), s);
    }
    for (x, s) in &config.boundary {
        let _ = writeln!(out, "boundary {} {}", join(x), s);
    }
    out
}

pub fn read_configuration(text: &str) -> Result<(ModelParams, Configuration), LatticeError> {
    let perr = |line: usize, msg: &str| LatticeError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let d: usize = toks
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| perr(1, "bad dimension"))?;
    if toks.len() != 2 * d + 3 {
        return Err(perr(1, "header must hold d, p, 2d window bounds and exterior"));
    }
    let p: f64 = toks[1].parse().map_err(|_| perr(1, "bad p"))?;
    let params = ModelParams::new(d, p)?;
    let ints = |s: &[&str], line: usize| -> Result<Vec<i64>, LatticeError> {
        s.iter()
            .map(|t| t.parse().map_err(|_| perr(line, "bad integer")))
            .collect()
    };
    let lower = Site(ints(&toks[2..2 + d], 1)?);
    let upper = Site(ints(&toks[2 + d..2 + 2 * d], 1)?);
    let exterior: u8 = toks[2 + 2 * d].parse().map_err(|_| perr(1, "bad exterior"))?;
    let window = Window::new(lower, upper)?;
    let mut spins = vec![None; window.len()];
    let mut boundary = Vec::new();
    for (ln, line) in lines {
        let mut toks: Vec<&str> = line.split_whitespace().collect();
        if toks.first() == Some(&"boundary") {
            toks.remove(0);
            if toks.len() != d + 1 {
                return Err(perr(ln + 1, "boundary line must hold d coordinates and a spin"));
            }
            let x = Site(ints(&toks[..d], ln + 1)?);
            let s: u8 = toks[d].parse().map_err(|_| perr(ln + 1, "bad spin"))?;
            boundary.push((ln + 1, x, s));
            continue;
        }
        if toks.len() != d + 1 {
            return Err(perr(ln + 1, "site line must hold d coordinates and a spin"));
        }
        let x = Site(ints(&toks[..d], ln + 1)?);
        let s: u8 = toks[d].parse().map_err(|_| perr(ln + 1, "bad spin"))?;
        let idx = window
            .index_of(&x)
            .ok_or_else(|| perr(ln + 1, "site outside window"))?;
        if spins[idx].replace(s).is_some() {
            return Err(perr(ln + 1, "duplicate site"));
        }
    }
    let spins: Option<Vec<u8>> = spins.into_iter().collect();
    let spins = spins.ok_or_else(|| perr(0, "missing window sites"))?;
    let mut config = Configuration::new(window, spins, exterior)?;
    for (ln, x, s) in boundary {
        config = config
            .with_boundary(&x, s)
            .map_err(|_| perr(ln, "boundary site must lie outside the window"))?;
    }
    Ok((params, config))
}
