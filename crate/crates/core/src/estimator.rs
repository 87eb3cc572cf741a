//! Self-intersection local time estimates from embedded walks: the
//! mollified logarithm, the terms of its Tanaka–Rosen–Yor decomposition,
//! disc-average estimates of `α(t, y)` and `γ(t, y)`, and occupation
//! identities.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridScalarSpec;
use crate::occupancy::{silt, silt_disc_sum, SiltField};
use crate::oracles::{expected_alpha, expected_gamma};
use crate::rng::CoinMatrix;
use crate::summation::{mean_se, CompensatedSum};
use crate::walk::{
    build_nested_family, embed_planar, mesh, planar_from_families, time_step, LatticePath, NestedWalkFamily, PlanarWalk,
};

/// `C¹` radial approximation of `log|x|`: quadratic on the disc of radius
/// `δ`, exact outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiDelta {
    delta: f64,
}

pub fn phi_delta(delta: f64) -> Result<PhiDelta> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::NonpositiveDelta(delta));
    }
    Ok(PhiDelta { delta })
}

impl PhiDelta {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Value at `|x| = r`.
    pub fn radial(&self, r: f64) -> f64 {
        let d = self.delta;
        if r <= d {
            (r * r - d * d) / (2.0 * d * d) + d.ln()
        } else {
            r.ln()
        }
    }
}

impl GridScalarSpec for PhiDelta {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.radial(x[0].hypot(x[1]))
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let d2 = self.delta * self.delta;
        let s = if r2 <= d2 { 1.0 / d2 } else { 1.0 / r2 };
        [x[0] * s, x[1] * s]
    }

    fn second_partials(&self, x: [f64; 2]) -> [f64; 2] {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let d2 = self.delta * self.delta;
        if r2 < d2 {
            [1.0 / d2, 1.0 / d2]
        } else if r2 == d2 {
            [0.0, 0.0]
        } else {
            let r4 = r2 * r2;
            let a = (x[1] * x[1] - x[0] * x[0]) / r4;
            [a, -a]
        }
    }

    fn third_partials(&self, x: [f64; 2]) -> [f64; 2] {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 <= self.delta * self.delta {
            return [0.0, 0.0];
        }
        let r6 = r2 * r2 * r2;
        let (a, b) = (x[0], x[1]);
        [(2.0 * a.powi(3) - 6.0 * a * b * b) / r6, (2.0 * b.powi(3) - 6.0 * b * a * a) / r6]
    }

    /// `2/δ²` strictly inside, `0` on and outside the circle.
    fn laplacian(&self, x: [f64; 2]) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let d2 = self.delta * self.delta;
        if r2 < d2 {
            2.0 / d2
        } else {
            0.0
        }
    }
}

/// Number of level-`m` steps in `[0, t]`, tolerant of `t` on the grid.
pub fn steps_in(level: u32, t: f64) -> usize {
    let k = t / time_step(level);
    (k + 1e-9 * k.max(1.0)).floor() as usize
}

/// Source of the embedded walks `B_m` of one Brownian path.
pub trait WalkProxy {
    /// The finest available walk, standing in for `W`.
    fn fine(&self) -> &PlanarWalk;
    /// `B_m` restricted to `[0, t]`.
    fn at_level(&self, m: u32, t: f64) -> Result<PlanarWalk>;
}

/// A single fine walk; coarser levels come from its Skorohod embedding,
/// which may end slightly before the fine walk's horizon.
impl WalkProxy for PlanarWalk {
    fn fine(&self) -> &PlanarWalk {
        self
    }

    fn at_level(&self, m: u32, t: f64) -> Result<PlanarWalk> {
        let n = steps_in(m, t);
        if m > self.level() {
            return Err(Error::LevelMismatch { left: m, right: self.level() });
        }
        let short = |found: usize| Error::ProxyTooShort { required: n, available: found };
        if m == self.level() {
            return self.truncated(n).map_err(|_| short(self.steps()));
        }
        embed_planar(self, m, n).map_err(|e| match e {
            Error::PathTooShort { found, .. } => short(found),
            other => other,
        })
    }
}

/// All twisted levels of two nested families. Level `m` equals the
/// embedding of level `M` and covers at least the planned horizon.
#[derive(Debug, Clone)]
pub struct NestedProxy {
    levels: Vec<PlanarWalk>,
}

impl NestedProxy {
    pub fn new(x: &NestedWalkFamily, y: &NestedWalkFamily) -> Result<Self> {
        if x.max_level() != y.max_level() {
            return Err(Error::LevelMismatch { left: x.max_level(), right: y.max_level() });
        }
        let levels = (0..=x.max_level()).map(|m| planar_from_families(x, y, m)).collect::<Result<_>>()?;
        Ok(Self { levels })
    }

    /// Families on lanes 0 and 1 of `coins` up to level `max_level`.
    pub fn from_coins(coins: &CoinMatrix, max_level: u32, horizon: f64) -> Result<Self> {
        let x = build_nested_family(&coins.with_lane(0), max_level, horizon)?;
        let y = build_nested_family(&coins.with_lane(1), max_level, horizon)?;
        Self::new(&x, &y)
    }

    pub fn level(&self, m: u32) -> Option<&PlanarWalk> {
        self.levels.get(m as usize)
    }
}

impl WalkProxy for NestedProxy {
    fn fine(&self) -> &PlanarWalk {
        self.levels.last().unwrap()
    }

    fn at_level(&self, m: u32, t: f64) -> Result<PlanarWalk> {
        let n = steps_in(m, t);
        let w = self.level(m).ok_or(Error::LevelMismatch { left: m, right: self.levels.len() as u32 - 1 })?;
        w.truncated(n).map_err(|_| Error::ProxyTooShort { required: n, available: w.steps() })
    }
}

/// `Σ_{k < N} g(W(t) − W(t_k)) · 4^-M`, `N = ⌊t·4^M⌋`, on the proxy mesh.
pub fn endpoint_integral<P: WalkProxy + ?Sized>(proxy: &P, t: f64, g: impl Fn([f64; 2]) -> f64) -> Result<f64> {
    let proxy = proxy.fine();
    let n = steps_in(proxy.level(), t);
    if n > proxy.steps() {
        return Err(Error::ProxyTooShort { required: n, available: proxy.steps() });
    }
    let h = proxy.mesh();
    let end = proxy.point(n);
    let mut acc = CompensatedSum::new();
    for k in 0..n {
        let p = proxy.point(k);
        acc.add(g([(end[0] - p[0]) as f64 * h, (end[1] - p[1]) as f64 * h]));
    }
    Ok(acc.value() * time_step(proxy.level()))
}

/// `∫_0^1 ln|a + s(b − a)| ds` in closed form.
fn segment_log_integral(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let dd = d[0] * d[0] + d[1] * d[1];
    if dd == 0.0 {
        return a[0].hypot(a[1]).ln();
    }
    // |a + s d|² = |d|² ((s + c)² + e²)
    let c = (a[0] * d[0] + a[1] * d[1]) / dd;
    let e = (a[0] * d[1] - a[1] * d[0]).abs() / dd;
    let anti = |u: f64| {
        let q = u * u + e * e;
        let lg = if q == 0.0 { 0.0 } else { u * q.ln() };
        let at = if e == 0.0 { 0.0 } else { 2.0 * e * (u / e).atan() };
        lg - 2.0 * u + at
    };
    0.5 * dd.ln() + 0.5 * (anti(1.0 + c) - anti(c))
}

/// `∫_0^t log|W(t) − W(u) − y| du` for the piecewise-linear proxy, exact on
/// each step; finite even when the lattice path hits `y`.
pub fn log_integral<P: WalkProxy + ?Sized>(proxy: &P, t: f64, y: [f64; 2]) -> Result<f64> {
    let w = proxy.fine();
    let n = steps_in(w.level(), t);
    if n > w.steps() {
        return Err(Error::ProxyTooShort { required: n, available: w.steps() });
    }
    let h = w.mesh();
    let end = w.point(n);
    let rel = |k: usize| {
        let p = w.point(k);
        [(end[0] - p[0]) as f64 * h - y[0], (end[1] - p[1]) as f64 * h - y[1]]
    };
    let mut acc = CompensatedSum::new();
    for k in 0..n {
        acc.add(segment_log_integral(rel(k), rel(k + 1)));
    }
    Ok(acc.value() * time_step(w.level()))
}

/// `Σ_{r≤n} Σ_{j<r} {∇₁φ(S_{r−1} − S_j − y) hX¹ + ∇₂φ((S_r¹, S_{r−1}²) − S_j − y) hX²} h²`
/// for the walk's own mesh `h` and a physical shift `y`.
pub fn stochastic_double_sum<P: GridScalarSpec>(phi: &P, walk: &PlanarWalk, n: usize, y: [f64; 2]) -> Result<f64> {
    if n > walk.steps() {
        return Err(Error::HorizonExceeded { requested: n, available: walk.steps() });
    }
    let h = walk.mesh();
    let pos = &walk.positions()[..=n];
    let o = pos[0];
    let range = pos.iter().map(|p| (p[0] - o[0]).abs().max((p[1] - o[1]).abs())).max().unwrap_or(0);
    // Gradient table over lattice differences `d`, evaluated at `h·d − y`.
    let radius = 2 * range + 1;
    let side = 2 * radius + 1;
    let mut table = vec![[0.0; 2]; (side * side) as usize];
    for b in -radius..=radius {
        for a in -radius..=radius {
            table[((a + radius) + (b + radius) * side) as usize] =
                phi.gradient([a as f64 * h - y[0], b as f64 * h - y[1]]);
        }
    }
    let at = |d: [i64; 2]| table[((d[0] + radius) + (d[1] + radius) * side) as usize];
    let mut total = CompensatedSum::new();
    for r in 1..=n {
        let a = pos[r - 1];
        let x = [pos[r][0] - a[0], pos[r][1] - a[1]];
        let mut inner = CompensatedSum::new();
        for sj in &pos[..r] {
            let d = [a[0] - sj[0], a[1] - sj[1]];
            inner.add(x[0] as f64 * at(d)[0] + x[1] as f64 * at([d[0] + x[0], d[1]])[1]);
        }
        total.add(inner.value());
    }
    Ok(total.value() * h * h * h)
}

/// `#{0 ≤ i ≤ j < n : |h(S_j − S_i) − y| < δ}` by a direct pair loop.
pub fn pair_count_open_disc(walk: &PlanarWalk, n: usize, y: [f64; 2], delta: f64) -> Result<u64> {
    if n > walk.steps() {
        return Err(Error::HorizonExceeded { requested: n, available: walk.steps() });
    }
    let h = walk.mesh();
    let (c1, c2, r2) = (y[0] / h, y[1] / h, (delta / h) * (delta / h));
    let pos = walk.positions();
    let mut count = 0u64;
    for j in 0..n {
        for i in 0..=j {
            let d1 = (pos[j][0] - pos[i][0]) as f64 - c1;
            let d2 = (pos[j][1] - pos[i][1]) as f64 - c2;
            count += (d1 * d1 + d2 * d2 < r2) as u64;
        }
    }
    Ok(count)
}

/// Pair count from a SILT field over the open disc.
fn silt_open_disc_count(field: &SiltField, y: [f64; 2], delta: f64) -> u128 {
    let h = field.mesh();
    let (c1, c2, r2) = (y[0] / h, y[1] / h, (delta / h) * (delta / h));
    field
        .iter()
        .filter(|(x, _)| {
            let d1 = x[0] as f64 - c1;
            let d2 = x[1] as f64 - c2;
            d1 * d1 + d2 * d2 < r2
        })
        .map(|(_, c)| c.iter().map(|&v| v as u128).sum::<u128>())
        .sum()
}

/// Terms of the mollified Tanaka–Rosen–Yor decomposition at `(t, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifiedTryTerms {
    pub t: f64,
    pub y: [f64; 2],
    pub delta: f64,
    pub m: u32,
    /// `∫_0^t φ^δ(W(t) − W(u) − y) du` on the proxy mesh.
    pub lhs: f64,
    /// `t·φ^δ(|y|)`.
    pub drift: f64,
    pub stochastic: f64,
    /// `δ^-2 · 4^{-2m} · #{pairs with |S_j − S_i − y| < δ}`.
    pub measure_pairs: f64,
    /// `δ^-2 · Σ_{B̄_δ(y)} α_m(t, x) 4^-m`.
    pub measure_silt: f64,
    /// `lhs − (drift + stochastic + measure_pairs)`.
    pub residual: f64,
}

pub fn mollified_try_terms<P: WalkProxy + ?Sized>(
    proxy: &P,
    t: f64,
    y: [f64; 2],
    delta: f64,
    m: u32,
) -> Result<MollifiedTryTerms> {
    let phi = phi_delta(delta)?;
    let walk = proxy.at_level(m, t)?;
    let n = walk.steps();
    let lhs = endpoint_integral(proxy, t, |x| phi.value([x[0] - y[0], x[1] - y[1]]))?;
    let drift = t * phi.radial(y[0].hypot(y[1]));
    let stochastic = stochastic_double_sum(&phi, &walk, n, y)?;
    let field = silt(&walk, n)?;
    let h2 = time_step(m);
    let measure_pairs = silt_open_disc_count(&field, y, delta) as f64 * h2 * h2 / (delta * delta);
    let measure_silt = silt_disc_sum(&field, y, delta) / (delta * delta);
    Ok(MollifiedTryTerms {
        t,
        y,
        delta,
        m,
        lhs,
        drift,
        stochastic,
        measure_pairs,
        measure_silt,
        residual: lhs - (drift + stochastic + measure_pairs),
    })
}

/// One `(δ, m)` pair of a ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub delta: f64,
    pub m: u32,
}

/// Smallest admissible radius at level `m`: four lattice spacings.
pub fn min_delta(m: u32) -> f64 {
    4.0 * mesh(m)
}

pub fn check_ladder(ladder: &[Rung]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::ConfigInvalid("empty ladder".into()));
    }
    for r in ladder {
        if !(r.delta > 0.0) {
            return Err(Error::NonpositiveDelta(r.delta));
        }
        if r.delta < min_delta(r.m) {
            return Err(Error::LadderTooAggressive { delta: r.delta, level: r.m });
        }
    }
    Ok(())
}

/// `δ_k = 2^{-k/2}`, `m_k = k + 4` for `k` in `ks`.
pub fn diagonal_ladder(ks: std::ops::RangeInclusive<u32>) -> Vec<Rung> {
    ks.map(|k| Rung { delta: 2f64.powf(-(k as f64) / 2.0), m: k + 4 }).collect()
}

/// SILT fields of the embedded walks of one proxy, built on demand.
pub struct SiltLadder<'a> {
    proxy: &'a dyn WalkProxy,
    t: f64,
    fields: BTreeMap<u32, SiltField>,
}

impl<'a> SiltLadder<'a> {
    pub fn new(proxy: &'a dyn WalkProxy, t: f64) -> Self {
        Self { proxy, t, fields: BTreeMap::new() }
    }

    pub fn field(&mut self, m: u32) -> Result<&SiltField> {
        if !self.fields.contains_key(&m) {
            let walk = self.proxy.at_level(m, self.t)?;
            let f = silt(&walk, walk.steps())?;
            self.fields.insert(m, f);
        }
        Ok(&self.fields[&m])
    }

    /// `(πδ²)^{-1} Σ_{B̄_δ(y)} α_m(t, x) 4^-m`.
    pub fn disc_average(&mut self, y: [f64; 2], rung: Rung) -> Result<f64> {
        let f = self.field(rung.m)?;
        Ok(silt_disc_sum(f, y, rung.delta) / (PI * rung.delta * rung.delta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungEstimate {
    pub delta: f64,
    pub m: u32,
    pub value: f64,
    /// Standard error over replicas; absent for a single replica.
    pub se: Option<f64>,
}

/// Ladder of disc-average estimates of `α(t, y)`; the final rung is the
/// estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub t: f64,
    pub y: [f64; 2],
    pub ladder: Vec<RungEstimate>,
    pub replicas: usize,
    pub mean: f64,
    pub se: Option<f64>,
    /// `mean − (t/π) log(1/|y|)`.
    pub gamma: f64,
    /// Successive rung differences, last minus previous.
    pub trend: Vec<f64>,
    /// `E α(t, y)`.
    pub closed_form_reference: Option<f64>,
    /// `E γ(t, y)`.
    pub gamma_reference: Option<f64>,
}

fn renormalizer(t: f64, y: [f64; 2]) -> f64 {
    t / PI * (1.0 / y[0].hypot(y[1])).ln()
}

fn build_report(t: f64, y: [f64; 2], ladder: Vec<RungEstimate>, replicas: usize) -> EstimateReport {
    let last = ladder.last().expect("nonempty ladder");
    let (mean, se) = (last.value, last.se);
    let trend = ladder.windows(2).map(|w| w[1].value - w[0].value).collect();
    EstimateReport {
        t,
        y,
        replicas,
        mean,
        se,
        gamma: mean - renormalizer(t, y),
        trend,
        closed_form_reference: expected_alpha(t, y).ok(),
        gamma_reference: expected_gamma(t, y).ok(),
        ladder,
    }
}

/// Single-replica estimate of `α(t, y)`, `y ≠ 0`.
pub fn alpha_estimate(proxy: &dyn WalkProxy, t: f64, y: [f64; 2], ladder: &[Rung]) -> Result<EstimateReport> {
    alpha_estimate_with(&mut SiltLadder::new(proxy, t), y, ladder)
}

pub fn alpha_estimate_with(cache: &mut SiltLadder<'_>, y: [f64; 2], ladder: &[Rung]) -> Result<EstimateReport> {
    check_ladder(ladder)?;
    if y == [0.0, 0.0] {
        return Err(Error::DomainError(0.0));
    }
    let mut rungs = Vec::with_capacity(ladder.len());
    for &r in ladder {
        rungs.push(RungEstimate { delta: r.delta, m: r.m, value: cache.disc_average(y, r)?, se: None });
    }
    Ok(build_report(cache.t, y, rungs, 1))
}

/// Replica mean and standard error of single-replica reports sharing
/// `t`, `y` and the ladder.
pub fn aggregate(reports: &[EstimateReport]) -> Result<EstimateReport> {
    let first = reports.first().ok_or_else(|| Error::ConfigInvalid("no replicas".into()))?;
    let shape = |r: &EstimateReport| r.ladder.iter().map(|g| (g.delta, g.m)).collect::<Vec<_>>();
    if reports.iter().any(|r| r.t != first.t || r.y != first.y || shape(r) != shape(first)) {
        return Err(Error::ConfigInvalid("replica reports disagree on t, y or ladder".into()));
    }
    let n = reports.len();
    let ladder = first
        .ladder
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let vals: Vec<f64> = reports.iter().map(|r| r.ladder[k].value).collect();
            let (mean, se) = mean_se(&vals);
            RungEstimate { delta: g.delta, m: g.m, value: mean, se: (n > 1).then_some(se) }
        })
        .collect();
    Ok(build_report(first.t, first.y, ladder, n))
}

/// `γ̂(t, y) = α̂ − (t/π) log(1/|y|)`.
pub fn gamma_estimate(report: &EstimateReport) -> f64 {
    report.mean - renormalizer(report.t, report.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub radius: f64,
    pub gamma: f64,
    pub se: Option<f64>,
    pub reference: f64,
}

/// `γ̂(t, y_k)` along `y_k → 0`; the limit estimate is the value at the
/// smallest `|y_k|`, with no extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTrend {
    pub t: f64,
    pub points: Vec<GammaPoint>,
    pub limit: f64,
    pub limit_se: Option<f64>,
    /// `E γ(t, 0)`.
    pub reference: f64,
}

pub fn gamma_trend(reports: &[EstimateReport]) -> Result<GammaTrend> {
    let first = reports.first().ok_or_else(|| Error::ConfigInvalid("empty gamma trend".into()))?;
    let t = first.t;
    let mut points: Vec<GammaPoint> = reports
        .iter()
        .map(|r| {
            Ok(GammaPoint {
                radius: r.y[0].hypot(r.y[1]),
                gamma: gamma_estimate(r),
                se: r.se,
                reference: expected_gamma(t, r.y)?,
            })
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| b.radius.total_cmp(&a.radius));
    let last = points.last().unwrap();
    Ok(GammaTrend { t, limit: last.gamma, limit_se: last.se, reference: expected_gamma(t, [0.0, 0.0])?, points })
}

/// Both sides of the discrete occupation identity for an integer-valued
/// `f` on lattice differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupationCheck {
    /// `Σ_{0≤i≤j<n} f(S_j − S_i)`.
    pub lhs: i128,
    /// `Σ_x α_1(n, x) f(x)`.
    pub rhs: i128,
}

impl OccupationCheck {
    /// Both sides times `h⁴`, the physical normalization.
    pub fn physical(&self, level: u32) -> (f64, f64) {
        let h4 = time_step(level) * time_step(level);
        (self.lhs as f64 * h4, self.rhs as f64 * h4)
    }
}

/// Exact discrete occupation identity for several functions at once.
pub fn occupation_check(walk: &PlanarWalk, n: usize, fs: &[&dyn Fn([i64; 2]) -> i64]) -> Result<Vec<OccupationCheck>> {
    let field = silt(walk, n)?;
    let pos = walk.positions();
    let mut lhs = vec![0i128; fs.len()];
    for j in 0..n {
        for i in 0..=j {
            let d = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]];
            for (acc, f) in lhs.iter_mut().zip(fs) {
                *acc += f(d) as i128;
            }
        }
    }
    let mut rhs = vec![0i128; fs.len()];
    for (x, counts) in field.iter() {
        let c: u64 = counts.iter().sum();
        for (acc, f) in rhs.iter_mut().zip(fs) {
            *acc += c as i128 * f(x) as i128;
        }
    }
    Ok(lhs.into_iter().zip(rhs).map(|(lhs, rhs)| OccupationCheck { lhs, rhs }).collect())
}

/// Real-valued occupation sides for a bounded `f` on physical points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupationIntegral {
    /// `h⁴ Σ_{0≤i≤j<n} f(h(S_j − S_i))`.
    pub pair_sum: f64,
    /// `Σ_x α_m(t, x) f(x) h²`.
    pub lattice_sum: f64,
    /// `∫ α_m(t, x) f(x) dx` of the piecewise-linear extension.
    pub interpolated: f64,
}

pub fn occupation_integral(walk: &PlanarWalk, n: usize, f: impl Fn([f64; 2]) -> f64) -> Result<OccupationIntegral> {
    let field = silt(walk, n)?;
    let h = walk.mesh();
    let h4 = h * h * h * h;
    let pos = walk.positions();
    let mut pairs = CompensatedSum::new();
    for j in 0..n {
        for i in 0..=j {
            pairs.add(f([(pos[j][0] - pos[i][0]) as f64 * h, (pos[j][1] - pos[i][1]) as f64 * h]));
        }
    }
    let mut lattice = CompensatedSum::new();
    let mut lo = [i64::MAX; 2];
    let mut hi = [i64::MIN; 2];
    for (x, counts) in field.iter() {
        lattice.add(counts.iter().sum::<u64>() as f64 * f([x[0] as f64 * h, x[1] as f64 * h]));
        for k in 0..2 {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
    }
    // Edge-midpoint rule per triangle: exact for the linear interpolant
    // times any quadratic.
    let alpha = |x: [i64; 2]| field.physical(x);
    let mut interp = CompensatedSum::new();
    if field.total_mass() > 0 {
        for a1 in lo[0] - 1..=hi[0] {
            for a2 in lo[1] - 1..=hi[1] {
                for upper in [false, true] {
                    let third = if upper { [a1 + 1, a2 + 1] } else { [a1, a2] };
                    let v = [third, [a1 + 1, a2], [a1, a2 + 1]];
                    let vals = v.map(alpha);
                    if vals == [0.0; 3] {
                        continue;
                    }
                    let mut s = 0.0;
                    for (p, q) in [(0, 1), (1, 2), (2, 0)] {
                        let mid = [0.5 * (v[p][0] + v[q][0]) as f64 * h, 0.5 * (v[p][1] + v[q][1]) as f64 * h];
                        s += 0.5 * (vals[p] + vals[q]) * f(mid);
                    }
                    interp.add(s * h * h / 6.0);
                }
            }
        }
    }
    Ok(OccupationIntegral {
        pair_sum: pairs.value() * h4,
        lattice_sum: lattice.value() * h4,
        interpolated: interp.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::nabla_phi_disc_average;
    use crate::rng::CoinMatrix;
    use crate::walk::coin_walk;

    #[test]
    fn phi_delta_branches() {
        let d = 0.3;
        let p = phi_delta(d).unwrap();
        assert!((p.value([0.0, 0.0]) - (-0.5 + d.ln())).abs() < 1e-15);
        for x in [[d, 0.0], [0.0, -d], [-d, 0.0]] {
            let inside = (d * d - d * d) / (2.0 * d * d) + d.ln();
            assert!((p.value(x) - inside).abs() < 1e-12 && (p.value(x) - d.ln()).abs() < 1e-12);
            let g = p.gradient(x);
            let out = [x[0] / (d * d), x[1] / (d * d)];
            assert!((g[0] - out[0]).abs() < 1e-12 && (g[1] - out[1]).abs() < 1e-12);
            assert_eq!(p.laplacian(x), 0.0);
        }
        assert_eq!(p.laplacian([0.1, 0.1]), 2.0 / (d * d));
        assert_eq!(p.laplacian([1.0, 0.1]), 0.0);
        assert!(phi_delta(0.0).is_err() && phi_delta(-1.0).is_err());
    }

    #[test]
    fn phi_delta_gradient_bound_and_disc_average() {
        let p = phi_delta(0.4).unwrap();
        for i in -20..=20 {
            for j in -20..=20 {
                let x = [i as f64 * 0.05, j as f64 * 0.05];
                let g = p.gradient(x);
                assert!(g[0].hypot(g[1]) <= 1.0 / 0.4 + 1e-12);
                let avg = nabla_phi_disc_average(x, 0.4).unwrap();
                assert!((avg[0] - g[0]).abs() < 1e-9 && (avg[1] - g[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn phi_delta_outer_derivatives() {
        let p = phi_delta(0.2).unwrap();
        let x = [0.7, -0.4];
        let e = 1e-5;
        for j in 0..2 {
            let mut a = x;
            let mut b = x;
            a[j] += e;
            b[j] -= e;
            let d2 = (p.gradient(a)[j] - p.gradient(b)[j]) / (2.0 * e);
            let d3 = (p.second_partials(a)[j] - p.second_partials(b)[j]) / (2.0 * e);
            assert!((d2 - p.second_partials(x)[j]).abs() < 1e-8);
            assert!((d3 - p.third_partials(x)[j]).abs() < 1e-6);
        }
        assert!(p.laplacian(x).abs() < 1e-15);
    }

    fn proxy(seed: u64, m: u32, horizon: f64) -> NestedProxy {
        NestedProxy::from_coins(&CoinMatrix::new(seed), m, horizon).unwrap()
    }

    #[test]
    fn measure_forms_agree() {
        let w = proxy(2, 6, 1.0);
        let t = 1.0;
        let y = [0.25, -0.125];
        let delta = 0.2;
        let terms = mollified_try_terms(&w, t, y, delta, 5).unwrap();
        let b5 = w.at_level(5, t).unwrap();
        let direct = pair_count_open_disc(&b5, b5.steps(), y, delta).unwrap();
        let h2 = time_step(5);
        assert_eq!(terms.measure_pairs, direct as f64 * h2 * h2 / (delta * delta));
        assert!(terms.measure_silt >= terms.measure_pairs);
        // Everything inside: measure is the full triangle count.
        let big = mollified_try_terms(&w, t, [0.0, 0.0], 50.0, 5).unwrap();
        let n = b5.steps() as f64;
        assert!((big.measure_pairs * 2500.0 - n * (n + 1.0) / 2.0 * h2 * h2).abs() < 1e-12);
    }

    #[test]
    fn stochastic_double_sum_matches_discrete_try() {
        use crate::formulas::{discrete_try, TryMode};
        let w = coin_walk(&CoinMatrix::new(9), 5, 400);
        let phi = phi_delta(0.3).unwrap();
        let y = [3i64, -2];
        let yp = [3.0 * w.mesh(), -2.0 * w.mesh()];
        let a = stochastic_double_sum(&phi, &w, 400, yp).unwrap();
        let b = discrete_try(&phi, &w, y, 400, TryMode::Direct).unwrap().term_stochastic;
        assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
    }

    #[test]
    fn segment_log_against_quadrature() {
        for (a, b) in
            [([0.3, -0.2], [0.35, -0.1]), ([0.1, 0.0], [-0.1, 0.0]), ([0.0, 0.0], [0.2, 0.1]), ([1.0, 1.0], [1.0, 1.0])]
        {
            let q = crate::quadrature::integrate(
                |s: f64| (a[0] + s * (b[0] - a[0])).hypot(a[1] + s * (b[1] - a[1])).ln(),
                0.0,
                1.0,
                1e-13,
                1e-12,
            );
            assert!((segment_log_integral(a, b) - q.value).abs() < 1e-9, "{a:?} {b:?}");
        }
    }

    #[test]
    fn ladder_rules() {
        assert!(matches!(check_ladder(&[Rung { delta: 0.01, m: 6 }]), Err(Error::LadderTooAggressive { .. })));
        assert!(check_ladder(&[]).is_err());
        let l = diagonal_ladder(1..=4);
        assert_eq!(l[0].m, 5);
        assert!(check_ladder(&l).is_ok());
        for r in &l {
            assert!(PI * r.delta * r.delta * 4f64.powi(r.m as i32) >= 50.0);
        }
    }

    #[test]
    fn estimates_and_aggregation() {
        let reports: Vec<EstimateReport> = (0..4)
            .map(|s| {
                alpha_estimate(
                    &proxy(s, 6, 1.0),
                    1.0,
                    [0.5, 0.0],
                    &[Rung { delta: 0.25, m: 5 }, Rung { delta: 0.25, m: 6 }],
                )
                .unwrap()
            })
            .collect();
        let agg = aggregate(&reports).unwrap();
        assert_eq!(agg.replicas, 4);
        let mean: f64 = reports.iter().map(|r| r.mean).sum::<f64>() / 4.0;
        assert!((agg.mean - mean).abs() < 1e-12);
        assert!(agg.se.unwrap() > 0.0);
        assert!((gamma_estimate(&agg) - agg.gamma).abs() < 1e-15);
        // |y| = 1: no renormalization.
        let r = alpha_estimate(&proxy(1, 5, 1.0), 1.0, [0.6, 0.8], &[Rung { delta: 0.2, m: 5 }]).unwrap();
        assert!((r.gamma - r.mean).abs() < 1e-15);
        let json = serde_json::to_string(&agg).unwrap();
        let back: EstimateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, agg);
        // Far away from every pair difference.
        let z = alpha_estimate(&proxy(1, 5, 1.0), 1.0, [40.0, 0.0], &[Rung { delta: 0.2, m: 5 }]).unwrap();
        assert_eq!(z.mean, 0.0);
    }

    #[test]
    fn proxy_too_short() {
        let w = proxy(3, 5, 0.5);
        assert!(matches!(w.at_level(5, 1.0), Err(Error::ProxyTooShort { .. })));
        assert!(matches!(mollified_try_terms(&w, 1.0, [0.3, 0.0], 0.2, 4), Err(Error::ProxyTooShort { .. })));
        // A bare fine walk embeds short of its own horizon.
        let fine = w.fine().clone();
        let n = fine.steps() as f64 * time_step(5);
        assert!(fine.at_level(5, n).is_ok());
        assert!(matches!(fine.at_level(3, n), Err(Error::ProxyTooShort { .. })) || fine.at_level(3, n).is_ok());
    }

    #[test]
    fn occupation_identities() {
        let w = coin_walk(&CoinMatrix::new(12), 5, 700);
        let one = |_: [i64; 2]| 1i64;
        let disc = |x: [i64; 2]| ((x[0] - 2).pow(2) + x[1].pow(2) < 25) as i64;
        let wild = |x: [i64; 2]| (x[0] * 31 + x[1] * 17).rem_euclid(13) - 6;
        let fs: [&dyn Fn([i64; 2]) -> i64; 3] = [&one, &disc, &wild];
        let out = occupation_check(&w, 700, &fs).unwrap();
        for c in &out {
            assert_eq!(c.lhs, c.rhs);
        }
        assert_eq!(out[0].lhs, 700 * 701 / 2);
        let h = w.mesh();
        let pc = pair_count_open_disc(&w, 700, [2.0 * h, 0.0], 5.0 * h).unwrap();
        assert_eq!(out[1].lhs, pc as i128);
        let (a, b) = out[0].physical(5);
        assert_eq!(a, b);
    }

    #[test]
    fn occupation_integral_forms() {
        let w = coin_walk(&CoinMatrix::new(13), 5, 500);
        let f = |x: [f64; 2]| (-(x[0] * x[0] + x[1] * x[1])).exp();
        let o = occupation_integral(&w, 500, f).unwrap();
        assert!((o.pair_sum - o.lattice_sum).abs() < 1e-12);
        // Mass: each nonzero lattice value carries weight h² in the interpolant too.
        let mass = occupation_integral(&w, 500, |_| 1.0).unwrap();
        assert!((mass.interpolated - mass.lattice_sum).abs() < 1e-12 * mass.lattice_sum);
        assert!((o.interpolated - o.lattice_sum).abs() < 0.05 * o.lattice_sum);
    }
}
