//! Experiment orchestration: validated configuration, seeded replica runs on
//! a fixed-size thread pool, gated suites and report emission.
//!
//! Replica `r` always draws from `derive_replica_seed(base_seed, r)` and
//! replica results are collected in index order, so a report never depends
//! on the degree of parallelism.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    aggregate, alpha_estimate_with, check_ladder, diagonal_ladder, log_integral, min_delta, phi_delta, steps_in,
    stochastic_double_sum, EstimateReport, GammaTrend, NestedProxy, Rung, SiltLadder, WalkProxy,
};
use crate::fields::{Cubic, ExpSin, Gaussian, SinCos, TrigSum};
use crate::formulas::{
    discrete_ito, discrete_ito_tanaka_meyer, discrete_try, stochastic_sum, ItoVariant, SampledFamily, TryMode,
};
use crate::grid::{conservative_modify, epsilon_estimate, GridScalarSpec, GridVectorField};
use crate::occupancy::{erdos_taylor_ratio, silt, silt_naive, SiltField};
use crate::oracles::{
    exp_integral_neg, exp_integral_quadrature, expected_alpha, expected_gamma, expected_x, psi, PsiMode,
};
use crate::rng::{derive_replica_seed, CoinMatrix};
use crate::summation::{mean_se, median};
use crate::walk::{build_nested_family, coin_walk, shrink, steps_for_horizon, sup_distance, LatticePath, PlanarWalk};

/// Environment variable overriding the output directory of the config.
pub const OUTPUT_ENV: &str = "SILT_LAB_OUT";

/// Fixed CSV header.
pub const CSV_HEADER: [&str; 11] = ["suite", "metric", "m", "n", "t", "y1", "y2", "delta", "value", "se", "reference"];

/// Identity instances never exceed this many steps.
const IDENTITY_STEPS: usize = 4096;
/// Horizon of the exact occupation identity, whose left side is quadratic.
const OCCUPATION_PAIR_STEPS: usize = 10_000;
/// Horizon of the incremental against naive SILT comparison.
const NAIVE_STEPS: usize = 500;
/// Auxiliary RNG streams, disjoint from the coin lanes.
const AUX_STREAM: u64 = (u32::MAX as u64) << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyIdentities,
    Convergence,
    EstimateAlpha,
    EstimateGamma,
    Expectations,
    Occupation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRange {
    pub min: u32,
    pub max: u32,
}

impl LevelRange {
    pub fn iter(&self) -> std::ops::RangeInclusive<u32> {
        self.min..=self.max
    }
}

/// How the `(δ, m)` rungs of each point are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum LadderSpec {
    /// The same rungs for every point.
    Explicit { rungs: Vec<Rung> },
    /// `δ = fraction · |y|` at each listed level that resolves it.
    RadiusFraction { fraction: f64, levels: Vec<u32> },
    /// `δ_k = 2^{-k/2}`, `m_k = k + 4` for `k = first..=last`.
    Diagonal { first: u32, last: u32 },
}

impl LadderSpec {
    /// Rungs for the point `y`.
    pub fn resolve(&self, y: [f64; 2]) -> Result<Vec<Rung>> {
        let rungs = match self {
            LadderSpec::Explicit { rungs } => rungs.clone(),
            LadderSpec::RadiusFraction { fraction, levels } => {
                let delta = fraction * y[0].hypot(y[1]);
                levels.iter().filter(|&&m| delta >= min_delta(m)).map(|&m| Rung { delta, m }).collect()
            }
            LadderSpec::Diagonal { first, last } => diagonal_ladder(*first..=*last),
        };
        if rungs.is_empty() {
            return Err(Error::ConfigInvalid(format!("ladder resolves to no rung at y = {y:?}")));
        }
        check_ladder(&rungs)?;
        Ok(rungs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}
fn default_parallelism() -> usize {
    1
}
fn default_memory_cap() -> u64 {
    2048
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_z_gate() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub base_seed: u64,
    pub replicas: usize,
    pub levels: LevelRange,
    /// Horizon `K` covered by every generated walk.
    pub horizon: f64,
    /// Evaluation time; defaults to the horizon.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub ladder: Option<LadderSpec>,
    pub output: OutputSpec,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_memory_cap")]
    pub memory_cap_mb: u64,
    /// Relative residual tolerance of the identity suites.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Monte Carlo gates accept `|mean − reference| ≤ z_gate · SE`.
    #[serde(default = "default_z_gate")]
    pub z_gate: f64,
    /// Reference level `M` of the strong-rate study; defaults to `levels.max + 2`.
    #[serde(default)]
    pub reference_level: Option<u32>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn time(&self) -> f64 {
        self.t.unwrap_or(self.horizon)
    }

    pub fn reference(&self) -> u32 {
        self.reference_level.unwrap_or(self.levels.max + 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        let t = self.time();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(t > 0.0 && t <= self.horizon) {
            return bad(format!("t must lie in (0, horizon], got {t}"));
        }
        if self.levels.min > self.levels.max || self.levels.max > 16 {
            return bad(format!("levels {}..{} must satisfy min <= max <= 16", self.levels.min, self.levels.max));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(self.tolerance > 0.0) || !(self.z_gate > 0.0) {
            return bad("tolerance and z_gate must be positive".into());
        }
        if self.replicas == 0 && self.kind != ExperimentKind::Expectations {
            return bad("at least one replica is required".into());
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return bad("points must be finite".into());
        }
        match self.kind {
            ExperimentKind::EstimateAlpha | ExperimentKind::EstimateGamma => {
                let Some(ladder) = &self.ladder else { return bad("estimation needs a ladder".into()) };
                if self.points.is_empty() {
                    return bad("estimation needs at least one point".into());
                }
                for &y in &self.points {
                    if y == [0.0, 0.0] {
                        return bad("estimation points must be nonzero".into());
                    }
                    ladder.resolve(y)?;
                }
            }
            ExperimentKind::Convergence => {
                if self.levels.max == self.levels.min {
                    return bad("convergence needs at least two levels".into());
                }
                let Some(&y) = self.points.first() else { return bad("convergence needs a point".into()) };
                let scaled = [y[0] * (1u64 << self.levels.min) as f64, y[1] * (1u64 << self.levels.min) as f64];
                if scaled.iter().any(|v| v.fract() != 0.0) {
                    return bad(format!("point {y:?} is not on the level-{} lattice", self.levels.min));
                }
                let r = self.reference();
                if r < self.levels.min + 2 || r > 16 {
                    return bad(format!("reference level {r} must lie in {}..=16", self.levels.min + 2));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Peak SILT footprint of the run against the memory cap.
    pub fn check_memory(&self) -> Result<()> {
        let concurrent = self.parallelism.min(self.replicas.max(1)) as u64;
        let (level, steps): (u32, Vec<usize>) = match self.kind {
            ExperimentKind::EstimateAlpha | ExperimentKind::EstimateGamma => {
                let mut levels = Vec::new();
                for &y in &self.points {
                    for r in self.ladder.as_ref().expect("validated").resolve(y)? {
                        levels.push(r.m);
                    }
                }
                levels.sort_unstable();
                levels.dedup();
                let top = *levels.last().unwrap_or(&0);
                (top, levels.iter().map(|&m| steps_in(m, self.time())).collect())
            }
            ExperimentKind::Occupation => (self.levels.max, vec![steps_for_horizon(self.levels.max, self.horizon)]),
            _ => return Ok(()),
        };
        let bytes: u64 = steps.iter().map(|&n| SiltField::estimated_bytes(n)).sum::<u64>() * concurrent;
        let needed_mb = bytes.div_ceil(1 << 20);
        if needed_mb > self.memory_cap_mb {
            return Err(Error::ResourceExhausted {
                level,
                horizon: self.horizon,
                needed_mb,
                cap_mb: self.memory_cap_mb,
            });
        }
        Ok(())
    }
}

/// Directory precedence: command-line flag, then [`OUTPUT_ENV`], then config.
pub fn output_dir(flag: Option<PathBuf>, env: Option<OsString>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from)).unwrap_or_else(|| config.output.dir.clone())
}

/// One row of a suite; `passed` is `None` for informational rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub metric: String,
    pub m: Option<u32>,
    pub n: Option<usize>,
    pub t: Option<f64>,
    pub y: Option<[f64; 2]>,
    pub delta: Option<f64>,
    pub value: f64,
    pub se: Option<f64>,
    pub reference: Option<f64>,
    pub passed: Option<bool>,
}

impl Metric {
    pub fn new(metric: &str, value: f64) -> Self {
        Self {
            metric: metric.into(),
            m: None,
            n: None,
            t: None,
            y: None,
            delta: None,
            value,
            se: None,
            reference: None,
            passed: None,
        }
    }
    fn level(mut self, m: u32) -> Self {
        self.m = Some(m);
        self
    }
    fn steps(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }
    fn time(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }
    fn point(mut self, y: [f64; 2]) -> Self {
        self.y = Some(y);
        self
    }
    fn delta(mut self, d: f64) -> Self {
        self.delta = Some(d);
        self
    }
    fn se(mut self, se: Option<f64>) -> Self {
        self.se = se;
        self
    }
    fn reference(mut self, r: f64) -> Self {
        self.reference = Some(r);
        self
    }
    fn gate(mut self, ok: bool) -> Self {
        self.passed = Some(ok);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    pub metrics: Vec<Metric>,
}

impl SuiteResult {
    fn new(suite: &str, metrics: Vec<Metric>) -> Self {
        let passed = metrics.iter().all(|m| m.passed != Some(false));
        Self { suite: suite.into(), passed, metrics }
    }
}

/// Timing data; ignored by report equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub elapsed_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
    pub estimates: Vec<EstimateReport>,
    pub gamma_trend: Option<GammaTrend>,
    pub meta: RunMeta,
}

impl PartialEq for RunReport {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.passed == other.passed
            && self.suites == other.suites
            && self.estimates == other.estimates
            && self.gamma_trend == other.gamma_trend
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    pool: rayon::ThreadPool,
}

impl Context<'_> {
    /// `f(replica, seed)` for every replica, in replica order.
    fn replicas<T: Send>(&self, f: impl Fn(usize, u64) -> Result<T> + Sync) -> Result<Vec<T>> {
        let base = self.cfg.base_seed;
        self.pool.install(|| {
            (0..self.cfg.replicas).into_par_iter().map(|r| f(r, derive_replica_seed(base, r as u64))).collect()
        })
    }
}

/// Uniform `[0, 1)` values on auxiliary stream `purpose` of `seed`.
fn uniform_stream(seed: u64, purpose: u64) -> impl FnMut() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(AUX_STREAM | purpose);
    move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn se_of(values: &[f64]) -> (f64, Option<f64>) {
    let (mean, se) = mean_se(values);
    (mean, (values.len() > 1).then_some(se))
}

fn within_se(mean: f64, se: Option<f64>, reference: f64, z: f64) -> bool {
    se.is_some_and(|s| (mean - reference).abs() <= z * s)
}

/// Runs the configured experiment. Gate failures are reported, not raised.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    config.check_memory()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let ctx = Context { cfg: config, pool };
    let mut estimates = Vec::new();
    let mut gamma_trend = None;
    let suites = match config.kind {
        ExperimentKind::VerifyIdentities => verify_identities(&ctx)?,
        ExperimentKind::Convergence => convergence(&ctx)?,
        ExperimentKind::EstimateAlpha | ExperimentKind::EstimateGamma => {
            let (s, e, g) = estimation(&ctx)?;
            estimates = e;
            gamma_trend = g;
            s
        }
        ExperimentKind::Expectations => expectations(&ctx)?,
        ExperimentKind::Occupation => occupation(&ctx)?,
    };
    Ok(RunReport {
        config: config.clone(),
        passed: suites.iter().all(|s| s.passed),
        suites,
        estimates,
        gamma_trend,
        meta: RunMeta { elapsed_seconds: start.elapsed().as_secs_f64(), threads: config.parallelism },
    })
}

fn window_for(walk: &PlanarWalk) -> i64 {
    walk.positions().iter().map(|p| p[0].abs().max(p[1].abs())).max().unwrap_or(0) + 2
}

/// `sup |f − ∇g|` over the window of `f`.
pub fn gradient_gap<G: GridScalarSpec>(f: &GridVectorField, g: &G) -> f64 {
    let r = f.radius();
    let mut worst = 0.0f64;
    for j in -r..=r {
        for i in -r..=r {
            let v = f.at([i, j]);
            let d = g.gradient(f.point([i, j]));
            worst = worst.max((v[0] - d[0]).hypot(v[1] - d[1]));
        }
    }
    worst
}

/// Worst relative residual; exact zero counts as zero even at zero scale.
fn relative(residual: f64, scale: f64) -> f64 {
    if residual == 0.0 {
        0.0
    } else {
        residual.abs() / scale
    }
}

struct IdentityInstance {
    level: u32,
    steps: usize,
    refinement_ok: bool,
    curl: f64,
    ito: f64,
    stratonovich: f64,
    tanaka_meyer: f64,
    correction_equal: bool,
    try_exact: f64,
}

fn verify_identities(ctx: &Context) -> Result<Vec<SuiteResult>> {
    let cfg = ctx.cfg;
    let span = cfg.levels.max - cfg.levels.min + 1;
    let instances = ctx.replicas(|r, seed| {
        let coins = CoinMatrix::new(seed);
        let family = build_nested_family(&coins, cfg.levels.max, cfg.horizon)?;
        let level = cfg.levels.min + (r as u32 % span);
        let steps = steps_for_horizon(level, cfg.horizon).min(IDENTITY_STEPS);
        let walk = coin_walk(&coins, level, steps);
        let mut u = uniform_stream(seed, 0);
        let g = TrigSum::random(4, &mut u);
        let origin = [u() - 0.5, u() - 0.5];
        let f = conservative_modify(&g, origin, walk.mesh(), window_for(&walk));
        let ito = discrete_ito(&f, &walk, steps, ItoVariant::Ito)?;
        let strat = discrete_ito(&f, &walk, steps, ItoVariant::Stratonovich)?;
        let itm = discrete_ito_tanaka_meyer(&f, &walk, steps)?;
        let y = [(7.0 * u()) as i64 - 3, (7.0 * u()) as i64 - 3];
        let tr = discrete_try(&g, &walk, y, steps, TryMode::Exact)?;
        Ok(IdentityInstance {
            level,
            steps,
            refinement_ok: family.refinement_violation().is_none(),
            curl: f.max_abs_curl(),
            ito: relative(ito.residual, ito.scale),
            stratonovich: relative(strat.residual, strat.scale),
            tanaka_meyer: relative(itm.residual, itm.scale),
            correction_equal: itm.correction.to_bits() == ito.correction.to_bits(),
            try_exact: relative(tr.residual, tr.scale),
        })
    })?;

    let tol = cfg.tolerance;
    let per_level = |name: &str, pick: &dyn Fn(&IdentityInstance) -> f64, bound: f64| {
        let mut worst: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
        for i in &instances {
            let e = worst.entry(i.level).or_insert((i.steps, 0.0));
            e.1 = e.1.max(pick(i));
        }
        worst
            .into_iter()
            .map(|(m, (n, v))| Metric::new(name, v).level(m).steps(n).reference(bound).gate(v <= bound))
            .collect::<Vec<_>>()
    };

    let refinement_failures = instances.iter().filter(|i| !i.refinement_ok).count() as f64;
    let mismatches = instances.iter().filter(|i| !i.correction_equal).count() as f64;
    let mut itm = per_level("max-relative-residual", &|i| i.tanaka_meyer, tol);
    itm.push(Metric::new("correction-mismatches", mismatches).reference(0.0).gate(mismatches == 0.0));

    let mut conservative = per_level("max-curl", &|i| i.curl, 1e-12);
    let cubic = conservative_modify(&Cubic, [0.0, 0.0], 0.05, 30);
    let gap = gradient_gap(&cubic, &Cubic);
    conservative.push(Metric::new("cubic-gradient-gap", gap).level(0).reference(1e-12).gate(gap <= 1e-12));
    // Unit-radius window: R = 1, a = 0.
    for m in 4..=8u32 {
        let h = 0.5f64.powi(m as i32);
        let f = conservative_modify(&SinCos, [0.0, 0.0], h, 1 << m);
        let gap = gradient_gap(&f, &SinCos);
        let bound = h * epsilon_estimate(&SinCos, [0.0, 0.0], h, 1.0) / 6.0;
        conservative.push(Metric::new("sincos-gradient-gap", gap).level(m).reference(bound).gate(gap <= bound));
    }

    Ok(vec![
        SuiteResult::new(
            "refinement",
            vec![Metric::new("violations", refinement_failures)
                .level(cfg.levels.max)
                .reference(0.0)
                .gate(refinement_failures == 0.0)],
        ),
        SuiteResult::new("conservative-modification", conservative),
        SuiteResult::new("ito", per_level("max-relative-residual", &|i| i.ito, tol)),
        SuiteResult::new("stratonovich", per_level("max-relative-residual", &|i| i.stratonovich, tol)),
        SuiteResult::new("ito-tanaka-meyer", itm),
        SuiteResult::new("try-exact", per_level("max-relative-residual", &|i| i.try_exact, tol)),
    ])
}

/// Required shrink factor per halving of `h` of the direct-mode TRY residual.
pub const TRY_RATE_FACTOR: f64 = 1.5;
/// Accepted band of the median log2 decrement of `sup |B_M − B_m|`.
pub const STRONG_RATE_BAND: (f64, f64) = (0.3, 0.7);

fn convergence(ctx: &Context) -> Result<Vec<SuiteResult>> {
    let cfg = ctx.cfg;
    let t = cfg.time();
    let y = cfg.points[0];
    let levels: Vec<u32> = cfg.levels.iter().collect();
    let reference = cfg.reference();
    let rate_levels: Vec<u32> = (cfg.levels.min..reference).collect();

    let rows = ctx.replicas(|_, seed| {
        let coins = CoinMatrix::new(seed);
        let proxy = NestedProxy::from_coins(&coins, cfg.levels.max, cfg.horizon)?;
        let mut residuals = Vec::with_capacity(levels.len());
        for &m in &levels {
            let walk = proxy.at_level(m, t)?;
            let scale = (1u64 << m) as f64;
            let yl = [(y[0] * scale) as i64, (y[1] * scale) as i64];
            let d = discrete_try(&Gaussian, &walk, yl, steps_in(m, t), TryMode::Direct)?;
            residuals.push(d.residual.abs());
        }
        let family = build_nested_family(&coins, reference, cfg.horizon)?;
        let top = shrink(&family, reference)?;
        let dists = rate_levels
            .iter()
            .map(|&m| sup_distance(&shrink(&family, m)?, &top, cfg.horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok((residuals, dists))
    })?;

    let mut try_rows = Vec::new();
    let mut means = Vec::new();
    for (k, &m) in levels.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r.0[k]).collect();
        let (mean, se) = se_of(&vals);
        means.push(mean);
        try_rows.push(Metric::new("mean-abs-residual", mean).level(m).steps(steps_in(m, t)).time(t).point(y).se(se));
    }
    for (k, w) in means.windows(2).enumerate() {
        let factor = w[0] / w[1];
        try_rows.push(
            Metric::new("reduction-factor", factor)
                .level(levels[k + 1])
                .time(t)
                .point(y)
                .reference(TRY_RATE_FACTOR)
                .gate(factor >= TRY_RATE_FACTOR),
        );
    }

    let mut rate_rows = Vec::new();
    let mut decrements = Vec::new();
    for (k, &m) in rate_levels.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
        let (mean, se) = se_of(&vals);
        rate_rows.push(Metric::new("mean-sup-distance", mean).level(m).time(cfg.horizon).se(se));
    }
    for row in &rows {
        for w in row.1.windows(2) {
            decrements.push((w[0] / w[1]).log2());
        }
    }
    let med = median(&decrements);
    let (lo, hi) = STRONG_RATE_BAND;
    rate_rows.push(
        Metric::new("median-log2-decrement", med)
            .level(reference)
            .time(cfg.horizon)
            .reference(0.5)
            .gate((lo..=hi).contains(&med)),
    );

    Ok(vec![SuiteResult::new("try-direct-rate", try_rows), SuiteResult::new("strong-rate", rate_rows)])
}

type Estimation = (Vec<SuiteResult>, Vec<EstimateReport>, Option<GammaTrend>);

fn estimation(ctx: &Context) -> Result<Estimation> {
    let cfg = ctx.cfg;
    let t = cfg.time();
    let ladder = cfg.ladder.as_ref().expect("validated");
    let ladders = cfg.points.iter().map(|&y| ladder.resolve(y)).collect::<Result<Vec<_>>>()?;
    let top = ladders.iter().flatten().map(|r| r.m).max().expect("nonempty ladders");

    let per_replica = ctx.replicas(|_, seed| {
        let proxy = NestedProxy::from_coins(&CoinMatrix::new(seed), top, cfg.horizon)?;
        let mut cache = SiltLadder::new(&proxy, t);
        cfg.points.iter().zip(&ladders).map(|(&y, l)| alpha_estimate_with(&mut cache, y, l)).collect::<Result<Vec<_>>>()
    })?;
    let reports = (0..cfg.points.len())
        .map(|k| aggregate(&per_replica.iter().map(|r| r[k].clone()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;

    let gamma = cfg.kind == ExperimentKind::EstimateGamma;
    let z = cfg.z_gate;
    let mut rows = Vec::new();
    for rep in &reports {
        let shift = rep.mean - rep.gamma;
        let last = rep.ladder.len() - 1;
        for (k, rung) in rep.ladder.iter().enumerate() {
            let (name, value, reference) = if gamma {
                ("gamma", rung.value - shift, rep.gamma_reference)
            } else {
                ("alpha", rung.value, rep.closed_form_reference)
            };
            let mut row = Metric::new(name, value)
                .level(rung.m)
                .steps(steps_in(rung.m, t))
                .time(t)
                .point(rep.y)
                .delta(rung.delta)
                .se(rung.se);
            if let Some(r) = reference {
                row = row.reference(r);
                if k == last {
                    row = row.gate(within_se(value, rung.se, r, z));
                }
            }
            rows.push(row);
        }
    }
    let trend = if gamma { Some(crate::estimator::gamma_trend(&reports)?) } else { None };
    if let Some(tr) = &trend {
        rows.push(
            Metric::new("gamma-limit", tr.limit)
                .time(t)
                .point([0.0, 0.0])
                .se(tr.limit_se)
                .reference(tr.reference)
                .gate(within_se(tr.limit, tr.limit_se, tr.reference, z)),
        );
    }
    let name = if gamma { "estimate-gamma" } else { "estimate-alpha" };
    Ok((vec![SuiteResult::new(name, rows)], reports, trend))
}

/// Tolerances of the closed-form self-checks.
pub const PSI_TOLERANCE: f64 = 1e-8;
pub const EI_TOLERANCE: f64 = 1e-10;
pub const X_GAMMA_TOLERANCE: f64 = 1e-12;
pub const CONTINUITY_RADIUS: f64 = 1e-4;
pub const CONTINUITY_TOLERANCE: f64 = 1e-8;

fn oracle_checks(t: f64, points: &[[f64; 2]]) -> Result<Vec<Metric>> {
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for k in 1..=50 {
        let u = 0.1 * k as f64;
        worst = worst.max((psi(u, PsiMode::Quadrature)? - psi(u, PsiMode::ClosedForm)?).abs());
    }
    rows.push(Metric::new("psi-quadrature-gap", worst).reference(PSI_TOLERANCE).gate(worst <= PSI_TOLERANCE));

    let mut worst = 0.0f64;
    for k in 0..40 {
        let x = -0.01 - 0.5 * k as f64;
        worst = worst.max((exp_integral_neg(x)? - exp_integral_quadrature(x)?).abs());
    }
    rows.push(Metric::new("ei-quadrature-gap", worst).reference(EI_TOLERANCE).gate(worst <= EI_TOLERANCE));

    let mut probe = vec![[0.5, 0.0], [0.1, -0.2], [1.5, 0.7], [0.0, 0.0]];
    probe.extend_from_slice(points);
    let mut worst = 0.0f64;
    for &y in &probe {
        worst = worst.max((expected_x(t, y)? - std::f64::consts::PI * expected_gamma(t, y)?).abs());
    }
    rows.push(
        Metric::new("x-minus-pi-gamma", worst).time(t).reference(X_GAMMA_TOLERANCE).gate(worst <= X_GAMMA_TOLERANCE),
    );

    let gap = (expected_gamma(t, [CONTINUITY_RADIUS, 0.0])? - expected_gamma(t, [0.0, 0.0])?).abs();
    rows.push(
        Metric::new("gamma-continuity-gap", gap)
            .time(t)
            .point([CONTINUITY_RADIUS, 0.0])
            .reference(CONTINUITY_TOLERANCE)
            .gate(gap <= CONTINUITY_TOLERANCE),
    );
    for &y in points {
        rows.push(Metric::new("expected-gamma", expected_gamma(t, y)?).time(t).point(y));
        rows.push(Metric::new("expected-x", expected_x(t, y)?).time(t).point(y));
        if y != [0.0, 0.0] {
            rows.push(Metric::new("expected-alpha", expected_alpha(t, y)?).time(t).point(y));
        }
    }
    Ok(rows)
}

fn expectations(ctx: &Context) -> Result<Vec<SuiteResult>> {
    let cfg = ctx.cfg;
    let t = cfg.time();
    let mut suites = vec![SuiteResult::new("oracles", oracle_checks(t, &cfg.points)?)];
    if cfg.replicas == 0 || cfg.points.is_empty() {
        return Ok(suites);
    }
    let (lo, hi) = (cfg.levels.min, cfg.levels.max);
    let y0 = cfg.points[0];
    let delta = 0.5 * y0[0].hypot(y0[1]);
    let phi = if delta > 0.0 { Some(phi_delta(delta)?) } else { None };
    let rows = ctx.replicas(|_, seed| {
        let proxy = NestedProxy::from_coins(&CoinMatrix::new(seed), hi, cfg.horizon)?;
        let xs = cfg.points.iter().map(|&y| log_integral(&proxy, t, y)).collect::<Result<Vec<_>>>()?;
        let fine = proxy.at_level(hi, t)?;
        let field = SampledFamily::new([0.0, 0.0], fine.mesh(), false, |_, x| ExpSin.gradient(x));
        let single = stochastic_sum(&field, &fine, t)?;
        let double = match &phi {
            Some(p) => {
                let coarse = proxy.at_level(lo, t)?;
                Some(stochastic_double_sum(p, &coarse, coarse.steps(), y0)?)
            }
            None => None,
        };
        Ok((xs, single, double))
    })?;

    let z = cfg.z_gate;
    let mut mc = Vec::new();
    for (k, &y) in cfg.points.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r.0[k]).collect();
        let (mean, se) = se_of(&vals);
        let reference = expected_x(t, y)?;
        mc.push(
            Metric::new("log-integral", mean)
                .level(hi)
                .steps(steps_in(hi, t))
                .time(t)
                .point(y)
                .se(se)
                .reference(reference)
                .gate(within_se(mean, se, reference, z)),
        );
    }
    let vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (mean, se) = se_of(&vals);
    let mut zero = vec![Metric::new("stochastic-sum", mean)
        .level(hi)
        .steps(steps_in(hi, t))
        .time(t)
        .se(se)
        .reference(0.0)
        .gate(within_se(mean, se, 0.0, z))];
    if phi.is_some() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.2).collect();
        let (mean, se) = se_of(&vals);
        zero.push(
            Metric::new("stochastic-double-sum", mean)
                .level(lo)
                .steps(steps_in(lo, t))
                .time(t)
                .point(y0)
                .delta(delta)
                .se(se)
                .reference(0.0)
                .gate(within_se(mean, se, 0.0, z)),
        );
    }
    suites.push(SuiteResult::new("log-integral", mc));
    suites.push(SuiteResult::new("zero-mean", zero));
    Ok(suites)
}

/// Erdős–Taylor gate on `sup_x α_1(n, x) / (n ln² n)`.
pub const ERDOS_TAYLOR_BOUND: f64 = 1.5 / std::f64::consts::PI;

/// Integer test function: a random quadratic plus a random point mass.
fn random_integer_function(seed: u64) -> impl Fn([i64; 2]) -> i64 {
    let mut u = uniform_stream(seed, 1);
    let mut coef = || (11.0 * u()) as i64 - 5;
    let c: [i64; 7] = std::array::from_fn(|_| coef());
    let site = [2 * c[5], 2 * c[6]];
    move |x: [i64; 2]| {
        c[0] + c[1] * x[0]
            + c[2] * x[1]
            + c[3] * x[0] * x[1]
            + c[4] * (x[0] * x[0] - x[1] * x[1])
            + 17 * (x == site) as i64
    }
}

fn same_entries(a: &SiltField, b: &SiltField) -> bool {
    let sorted = |f: &SiltField| {
        let mut v: Vec<_> = f.iter().filter(|(_, c)| c.iter().any(|&k| k > 0)).collect();
        v.sort_unstable();
        v
    };
    sorted(a) == sorted(b)
}

struct OccupationInstance {
    mass_ok: bool,
    partials_ok: bool,
    identity_ok: bool,
    naive_ok: bool,
    ratio: f64,
}

fn occupation(ctx: &Context) -> Result<Vec<SuiteResult>> {
    let cfg = ctx.cfg;
    let m = cfg.levels.max;
    let n = steps_for_horizon(m, cfg.horizon);
    let n_pairs = n.min(OCCUPATION_PAIR_STEPS);
    let n_naive = n.min(NAIVE_STEPS);
    let rows = ctx.replicas(|_, seed| {
        let walk = coin_walk(&CoinMatrix::new(seed), m, n);
        let field = silt(&walk, n)?;
        let mass_ok = field.total_mass() == (n as u128 * (n as u128 + 1)) / 2;
        let partials_ok = field.iter().all(|(x, c)| c.iter().sum::<u64>() == field.total(x));
        let f = random_integer_function(seed);
        let check = crate::estimator::occupation_check(&walk, n_pairs, &[&f])?;
        let identity_ok = check.iter().all(|c| c.lhs == c.rhs);
        let naive_ok = same_entries(&silt(&walk, n_naive)?, &silt_naive(&walk, n_naive)?);
        let ratio = if n >= 2 { erdos_taylor_ratio(&walk, n)?.ratio } else { 0.0 };
        Ok(OccupationInstance { mass_ok, partials_ok, identity_ok, naive_ok, ratio })
    })?;
    let count = |p: &dyn Fn(&OccupationInstance) -> bool| rows.iter().filter(|r| !p(r)).count() as f64;
    let failures =
        |name: &str, steps: usize, k: f64| Metric::new(name, k).level(m).steps(steps).reference(0.0).gate(k == 0.0);
    let sup_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(vec![
        SuiteResult::new(
            "silt",
            vec![
                failures("mass-failures", n, count(&|r| r.mass_ok)),
                failures("partial-sum-failures", n, count(&|r| r.partials_ok)),
                failures("incremental-naive-mismatches", n_naive, count(&|r| r.naive_ok)),
            ],
        ),
        SuiteResult::new("occupation", vec![failures("identity-failures", n_pairs, count(&|r| r.identity_ok))]),
        SuiteResult::new(
            "erdos-taylor",
            vec![Metric::new("sup-ratio", sup_ratio)
                .level(m)
                .steps(n)
                .reference(ERDOS_TAYLOR_BOUND)
                .gate(sup_ratio <= ERDOS_TAYLOR_BOUND)],
        ),
    ])
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-format CSV of every suite row; header only when there are none.
pub fn write_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in &report.suites {
        for r in &s.metrics {
            w.write_record([
                s.suite.clone(),
                r.metric.clone(),
                opt(r.m),
                opt(r.n),
                opt(r.t),
                opt(r.y.map(|y| y[0])),
                opt(r.y.map(|y| y[1])),
                opt(r.delta),
                r.value.to_string(),
                opt(r.se),
                opt(r.reference),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(report: &RunReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json(text: &str) -> Result<RunReport> {
    Ok(serde_json::from_str(text)?)
}

/// Writes `report.json` / `report.csv` as configured plus `config.json`,
/// the verbatim configuration echo. Returns the paths written.
pub fn emit(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let config = dir.join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&report.config)? + "\n")?;
    written.push(config);
    for format in &report.config.output.formats {
        let path = match format {
            Format::Json => {
                let p = dir.join("report.json");
                write_json(report, std::io::BufWriter::new(std::fs::File::create(&p)?))?;
                p
            }
            Format::Csv => {
                let p = dir.join("report.csv");
                write_csv(report, std::fs::File::create(&p)?)?;
                p
            }
        };
        written.push(path);
    }
    Ok(written)
}
