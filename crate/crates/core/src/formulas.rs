//! Discrete Itô, Stratonovich, Itô–Tanaka–Meyer and Tanaka–Rosen–Yor
//! identities, each returned as a full term breakdown with its residual.
//!
//! Walks and fields share one lattice: walk position `x` is the grid point
//! `a + h·x` of the field. Each planar step moves along `e1` first and then
//! along `e2`, so the intermediate vertex of step `r` is
//! `(S_r¹, S_{r−1}²)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{conservative_modify, DiscretePath, GridScalarSpec, GridVectorField};
use crate::occupancy::{local_time, silt, DIRECTIONS};
use crate::summation::{CompensatedSum, ExactSum};
use crate::walk::{LatticePath, PlanarWalk};

/// Time-indexed vector field on a grid; slice `r` lives at time `r·h²`.
pub trait FieldFamily {
    fn mesh(&self) -> f64;
    fn value(&self, slice: usize, x: [i64; 2]) -> Result<[f64; 2]>;
    /// `false` lets callers skip the time-increment term.
    fn time_dependent(&self) -> bool;
    /// `NotConservative` if slice `r` carries discrete curl.
    fn check_conservative(&self, slice: usize) -> Result<()>;
}

impl FieldFamily for GridVectorField {
    fn mesh(&self) -> f64 {
        GridVectorField::mesh(self)
    }
    fn value(&self, _: usize, x: [i64; 2]) -> Result<[f64; 2]> {
        self.get(x)
    }
    fn time_dependent(&self) -> bool {
        false
    }
    fn check_conservative(&self, _: usize) -> Result<()> {
        if self.is_conservative() {
            Ok(())
        } else {
            Err(Error::NotConservative { max_curl: self.max_abs_curl() })
        }
    }
}

/// `f(t_r, x) = Σ_k w[r][k] · F_k(x)` over fields sharing one window.
///
/// Conservative components make every slice conservative, so the check
/// is exhaustive at the cost of one flag per component.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFieldFamily {
    fields: Vec<GridVectorField>,
    weights: Vec<Vec<f64>>,
}

impl LinearFieldFamily {
    /// `weights[r]` holds the coefficients of slice `r`.
    pub fn new(fields: Vec<GridVectorField>, weights: Vec<Vec<f64>>) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::ConfigInvalid("no component fields".into()))?;
        if fields
            .iter()
            .any(|f| f.mesh() != first.mesh() || f.origin() != first.origin() || f.radius() != first.radius())
        {
            return Err(Error::ConfigInvalid("component fields on different windows".into()));
        }
        if weights.iter().any(|w| w.len() != fields.len()) {
            return Err(Error::ConfigInvalid("weight row length differs from component count".into()));
        }
        Ok(Self { fields, weights })
    }

    pub fn slices(&self) -> usize {
        self.weights.len()
    }
}

impl FieldFamily for LinearFieldFamily {
    fn mesh(&self) -> f64 {
        self.fields[0].mesh()
    }
    fn value(&self, slice: usize, x: [i64; 2]) -> Result<[f64; 2]> {
        let w = self
            .weights
            .get(slice)
            .ok_or(Error::HorizonExceeded { requested: slice, available: self.weights.len().saturating_sub(1) })?;
        let mut out = [0.0; 2];
        for (f, &c) in self.fields.iter().zip(w) {
            let v = f.get(x)?;
            out[0] += c * v[0];
            out[1] += c * v[1];
        }
        Ok(out)
    }
    fn time_dependent(&self) -> bool {
        true
    }
    fn check_conservative(&self, _: usize) -> Result<()> {
        match self.fields.iter().find(|f| !f.is_conservative()) {
            Some(f) => Err(Error::NotConservative { max_curl: f.max_abs_curl() }),
            None => Ok(()),
        }
    }
}

/// Field given by a closure `(t, x_physical) → value` on `a + hℤ²`.
///
/// Conservativity is checked on a sampled block of rectangles around `a`.
pub struct SampledFamily<F> {
    origin: [f64; 2],
    h: f64,
    time_dependent: bool,
    f: F,
}

impl<F: Fn(f64, [f64; 2]) -> [f64; 2]> SampledFamily<F> {
    pub fn new(origin: [f64; 2], h: f64, time_dependent: bool, f: F) -> Self {
        Self { origin, h, time_dependent, f }
    }

    fn eval(&self, slice: usize, x: [i64; 2]) -> [f64; 2] {
        let p = [self.origin[0] + self.h * x[0] as f64, self.origin[1] + self.h * x[1] as f64];
        (self.f)(slice as f64 * self.h * self.h, p)
    }
}

impl<F: Fn(f64, [f64; 2]) -> [f64; 2]> FieldFamily for SampledFamily<F> {
    fn mesh(&self) -> f64 {
        self.h
    }
    fn value(&self, slice: usize, x: [i64; 2]) -> Result<[f64; 2]> {
        Ok(self.eval(slice, x))
    }
    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
    fn check_conservative(&self, slice: usize) -> Result<()> {
        const HALF: i64 = 8;
        let mut max_abs = 0.0f64;
        let mut max_curl = 0.0f64;
        for j in -HALF..HALF {
            for i in -HALF..HALF {
                let sw = self.eval(slice, [i, j]);
                let se = self.eval(slice, [i + 1, j]);
                let ne = self.eval(slice, [i + 1, j + 1]);
                let nw = self.eval(slice, [i, j + 1]);
                let curl = ((sw[0] + se[0] + se[1] + ne[1]) - (ne[0] + nw[0] + nw[1] + sw[1])) / (2.0 * self.h);
                max_curl = max_curl.max(curl.abs());
                max_abs = max_abs.max(sw[0].abs()).max(sw[1].abs());
            }
        }
        if max_curl <= 1e-12 * max_abs {
            Ok(())
        } else {
            Err(Error::NotConservative { max_curl })
        }
    }
}

/// Which form of the per-step path integral is split off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItoVariant {
    /// Left-point stochastic sum plus the one-half difference-quotient term.
    Ito,
    /// Midpoint stochastic sum; the correction is identically zero.
    Stratonovich,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItoDecomposition {
    pub variant: ItoVariant,
    pub level: u32,
    pub n: usize,
    /// Trapezoidal sum of `f(t_n)` from `S_0` to `S_n`.
    pub lhs: f64,
    pub time_term: f64,
    pub stochastic_sum: f64,
    pub correction: f64,
    pub residual: f64,
    /// `max|f| · n · h` over the evaluated points.
    pub scale: f64,
}

/// Machine-readable decomposition: `{variant, m, n, terms, residual, scale}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub variant: String,
    pub m: u32,
    pub n: usize,
    pub terms: BTreeMap<String, f64>,
    pub residual: f64,
    pub scale: f64,
}

impl ItoDecomposition {
    pub fn within(&self, rel_tol: f64) -> bool {
        self.residual.abs() <= rel_tol * self.scale
    }

    pub fn report(&self) -> DecompositionReport {
        let variant = match self.variant {
            ItoVariant::Ito => "ito",
            ItoVariant::Stratonovich => "stratonovich",
        };
        let terms = [
            ("lhs", self.lhs),
            ("time_term", self.time_term),
            ("stochastic_sum", self.stochastic_sum),
            ("correction", self.correction),
        ];
        DecompositionReport {
            variant: variant.into(),
            m: self.level,
            n: self.n,
            terms: terms.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            residual: self.residual,
            scale: self.scale,
        }
    }
}

/// Tracks `max|f^j|` over every value read.
struct Probe<'a, F: ?Sized> {
    f: &'a F,
    max_abs: f64,
}

impl<'a, F: FieldFamily + ?Sized> Probe<'a, F> {
    fn new(f: &'a F) -> Self {
        Self { f, max_abs: 0.0 }
    }

    #[inline]
    fn get(&mut self, slice: usize, x: [i64; 2]) -> Result<[f64; 2]> {
        let v = self.f.value(slice, x)?;
        self.max_abs = self.max_abs.max(v[0].abs()).max(v[1].abs());
        Ok(v)
    }

    /// Unscaled trapezoidal sum `Σ μ (f(x) + f(x + μe))` of one slice, or of
    /// the difference of two slices.
    fn path_sum(&mut self, path: &DiscretePath, slice: usize, minus: Option<usize>) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for e in path.edges() {
            let mut s = self.get(slice, e.from)?[e.axis] + self.get(slice, e.to())?[e.axis];
            if let Some(prev) = minus {
                s -= self.get(prev, e.from)?[e.axis] + self.get(prev, e.to())?[e.axis];
            }
            acc.add(e.sign as f64 * s);
        }
        Ok(acc.value())
    }

    /// Values `f1(a), f1(b), f2(b), f2(c)` of one step `a → b = a + X1 e1 → c`.
    #[inline]
    fn step_values(&mut self, slice: usize, a: [i64; 2], x: [i64; 2]) -> Result<[f64; 4]> {
        let b = [a[0] + x[0], a[1]];
        let c = [a[0] + x[0], a[1] + x[1]];
        let fa = self.get(slice, a)?;
        let fb = self.get(slice, b)?;
        let fc = self.get(slice, c)?;
        Ok([fa[0], fb[0], fb[1], fc[1]])
    }
}

/// `X1 (f1(b) − f1(a)) + X2 (f2(c) − f2(b))`; the step's correction is
/// `(h/2)` times this.
#[inline]
fn quotient_weight(v: [f64; 4], x: [i64; 2]) -> f64 {
    x[0] as f64 * (v[1] - v[0]) + x[1] as f64 * (v[3] - v[2])
}

fn check_inputs<F: FieldFamily + ?Sized>(f: &F, walk: &PlanarWalk, n: usize) -> Result<()> {
    if n > walk.steps() {
        return Err(Error::HorizonExceeded { requested: n, available: walk.steps() });
    }
    if f.mesh() != walk.mesh() {
        return Err(Error::ConfigInvalid(format!("field mesh {} differs from walk mesh {}", f.mesh(), walk.mesh())));
    }
    Ok(())
}

/// Discrete Itô (or Stratonovich) decomposition of `T_{S_0}^{S_n} f(t_n)`.
///
/// Conservativity is checked on the first and last slices.
pub fn discrete_ito<F: FieldFamily + ?Sized>(
    f: &F,
    walk: &PlanarWalk,
    n: usize,
    variant: ItoVariant,
) -> Result<ItoDecomposition> {
    check_inputs(f, walk, n)?;
    f.check_conservative(0)?;
    f.check_conservative(n)?;
    let h = walk.mesh();
    let pos = walk.positions();
    let mut probe = Probe::new(f);

    let lhs = 0.5 * h * probe.path_sum(&DiscretePath::l_path(pos[0], pos[n]), n, None)?;

    let mut time_acc = CompensatedSum::new();
    if f.time_dependent() {
        for r in 1..=n {
            time_acc.add(probe.path_sum(&DiscretePath::l_path(pos[0], pos[r]), r, Some(r - 1))?);
        }
    }
    let time_term = 0.5 * h * time_acc.value();

    let mut stoch = CompensatedSum::new();
    let mut quot = ExactSum::new();
    for r in 1..=n {
        let x = walk.increment(r);
        let v = probe.step_values(r - 1, pos[r - 1], x)?;
        match variant {
            ItoVariant::Ito => {
                stoch.add(x[0] as f64 * v[0] + x[1] as f64 * v[2]);
                quot.add(quotient_weight(v, x));
            }
            ItoVariant::Stratonovich => {
                stoch.add(0.5 * (x[0] as f64 * (v[0] + v[1]) + x[1] as f64 * (v[2] + v[3])));
            }
        }
    }
    let stochastic_sum = h * stoch.value();
    let correction = 0.5 * h * quot.value();
    Ok(ItoDecomposition {
        variant,
        level: walk.level(),
        n,
        lhs,
        time_term,
        stochastic_sum,
        correction,
        residual: lhs - (time_term + stochastic_sum + correction),
        scale: probe.max_abs * n as f64 * h,
    })
}

/// Discrete Itô–Tanaka–Meyer decomposition: the correction regrouped by
/// lattice point and exit direction, weighted by partial local times.
///
/// The correction is summed exactly, so it is bit-identical to the
/// [`discrete_ito`] correction on the same inputs.
pub fn discrete_ito_tanaka_meyer(f: &GridVectorField, walk: &PlanarWalk, n: usize) -> Result<ItoDecomposition> {
    check_inputs(f, walk, n)?;
    FieldFamily::check_conservative(f, 0)?;
    let h = walk.mesh();
    let pos = walk.positions();
    let mut probe = Probe::new(f);
    let lhs = 0.5 * h * probe.path_sum(&DiscretePath::l_path(pos[0], pos[n]), 0, None)?;

    let mut stoch = CompensatedSum::new();
    for r in 1..=n {
        let x = walk.increment(r);
        let v = probe.step_values(0, pos[r - 1], x)?;
        stoch.add(x[0] as f64 * v[0] + x[1] as f64 * v[2]);
    }
    let stochastic_sum = h * stoch.value();

    let table = local_time(walk, n)?;
    let mut quot = ExactSum::new();
    for (x, counts) in table.iter() {
        for (mu, &c) in DIRECTIONS.iter().zip(&counts) {
            if c > 0 {
                let v = probe.step_values(0, x, *mu)?;
                quot.add_product(c as f64, quotient_weight(v, *mu));
            }
        }
    }
    let correction = 0.5 * h * quot.value();
    Ok(ItoDecomposition {
        variant: ItoVariant::Ito,
        level: walk.level(),
        n,
        lhs,
        time_term: 0.0,
        stochastic_sum,
        correction,
        residual: lhs - (stochastic_sum + correction),
        scale: probe.max_abs * n as f64 * h,
    })
}

/// Running stochastic sums `(f · B)_{t_r}` for `r = 0..=n`, with `f¹` read
/// at `B(t_{r−1})` and `f²` at `(B¹(t_r), B²(t_{r−1}))`.
pub fn stochastic_sum_path<F: FieldFamily + ?Sized>(f: &F, walk: &PlanarWalk, n: usize) -> Result<Vec<f64>> {
    check_inputs(f, walk, n)?;
    let h = walk.mesh();
    let pos = walk.positions();
    let mut probe = Probe::new(f);
    let mut acc = CompensatedSum::new();
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for r in 1..=n {
        let x = walk.increment(r);
        let v = probe.step_values(r - 1, pos[r - 1], x)?;
        acc.add(x[0] as f64 * v[0] + x[1] as f64 * v[2]);
        out.push(h * acc.value());
    }
    Ok(out)
}

/// Stochastic sum up to `n = ⌊t·4^m⌋`.
pub fn stochastic_sum<F: FieldFamily + ?Sized>(f: &F, walk: &PlanarWalk, t: f64) -> Result<f64> {
    let n = steps_within(walk, t)?;
    Ok(*stochastic_sum_path(f, walk, n)?.last().unwrap())
}

/// `⌊t / h²⌋`, tolerant of `t` sitting on the grid up to rounding.
fn steps_within(walk: &PlanarWalk, t: f64) -> Result<usize> {
    if !(t >= 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    let k = t / (walk.mesh() * walk.mesh());
    let n = (k + 1e-9 * k.max(1.0)).floor() as usize;
    if n > walk.steps() {
        return Err(Error::HorizonExceeded { requested: n, available: walk.steps() });
    }
    Ok(n)
}

/// How the gradient entering the discrete Tanaka–Rosen–Yor terms is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TryMode {
    /// A conservative surrogate of `∇φ`; the identity holds to rounding.
    Exact,
    /// `∇φ` and `Δφ` plugged in; the residual is discretization error.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TryDecomposition {
    pub mode: TryMode,
    pub level: u32,
    pub n: usize,
    /// Shift in lattice units.
    pub y: [i64; 2],
    /// `Σ_{j≤n} T_{γ_n}(∇φ(· − S_j − y)) h²`.
    pub lhs: f64,
    /// `Σ_{r≤n} T_{γ_r}(∇φ(· − S_r − y)) h²`.
    pub term_path: f64,
    pub term_stochastic: f64,
    /// The pair sum entering the residual: difference quotients of the
    /// surrogate in exact mode, `Δφ` in direct mode.
    pub term_laplace: f64,
    /// Pair sum of difference quotients `u^μ` of the gradient in use.
    pub laplace_quotient_pairs: f64,
    /// The same quotients regrouped by `x` and weighted by partial SILT.
    pub laplace_quotient_silt: f64,
    /// `Σ_x α_h(t_n, x) Δφ(x − y) h²`.
    pub laplace_silt: f64,
    /// `lhs − (path + stochastic + laplace / 2)`.
    pub residual: f64,
    /// `max|∇| · t_n · n · h`.
    pub scale: f64,
}

impl TryDecomposition {
    pub fn report(&self) -> DecompositionReport {
        let variant = match self.mode {
            TryMode::Exact => "try-exact",
            TryMode::Direct => "try-direct",
        };
        let terms = [
            ("lhs", self.lhs),
            ("term_path", self.term_path),
            ("term_stochastic", self.term_stochastic),
            ("term_laplace", self.term_laplace),
            ("laplace_quotient_pairs", self.laplace_quotient_pairs),
            ("laplace_quotient_silt", self.laplace_quotient_silt),
            ("laplace_silt", self.laplace_silt),
        ];
        DecompositionReport {
            variant: variant.into(),
            m: self.level,
            n: self.n,
            terms: terms.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            residual: self.residual,
            scale: self.scale,
        }
    }
}

/// Gradient and Laplacian tables on a square window around the origin.
struct Tables {
    grad: GridVectorField,
    lap: Vec<f64>,
    radius: i64,
}

impl Tables {
    #[inline]
    fn lap(&self, x: [i64; 2]) -> f64 {
        let side = 2 * self.radius + 1;
        self.lap[((x[0] + self.radius) + (x[1] + self.radius) * side) as usize]
    }

    #[inline]
    fn g(&self, x: [i64; 2]) -> [f64; 2] {
        self.grad.at(x)
    }

    /// `h · u^μ(x)`.
    #[inline]
    fn quotient(&self, x: [i64; 2], mu: [i64; 2]) -> f64 {
        let b = [x[0] + mu[0], x[1]];
        let c = [x[0] + mu[0], x[1] + mu[1]];
        quotient_weight([self.g(x)[0], self.g(b)[0], self.g(b)[1], self.g(c)[1]], mu)
    }

    /// Unscaled trapezoidal sum of `∇(· − shift)` along `path`.
    fn path_sum(&self, path: &DiscretePath, shift: [i64; 2]) -> f64 {
        let mut acc = CompensatedSum::new();
        for e in path.edges() {
            let a = [e.from[0] - shift[0], e.from[1] - shift[1]];
            let to = e.to();
            let b = [to[0] - shift[0], to[1] - shift[1]];
            acc.add(e.sign as f64 * (self.g(a)[e.axis] + self.g(b)[e.axis]));
        }
        acc.value()
    }
}

/// Discrete Tanaka–Rosen–Yor decomposition for the walk started at its
/// first position, shift `y` (lattice units) and horizon `n`.
///
/// All gradient evaluations are tabulated on a window of half-width
/// `2R + |y|_∞ + 2`, `R` the walk's sup-norm range; in exact mode the table
/// is the conservative modification of `∇φ` on that window.
pub fn discrete_try<P: GridScalarSpec + Sync>(
    phi: &P,
    walk: &PlanarWalk,
    y: [i64; 2],
    n: usize,
    mode: TryMode,
) -> Result<TryDecomposition> {
    if n > walk.steps() {
        return Err(Error::HorizonExceeded { requested: n, available: walk.steps() });
    }
    let h = walk.mesh();
    let o = walk.positions()[0];
    let pos: Vec<[i64; 2]> = walk.positions()[..=n].iter().map(|p| [p[0] - o[0], p[1] - o[1]]).collect();
    let range = pos.iter().map(|p| p[0].abs().max(p[1].abs())).max().unwrap_or(0);
    let radius = 2 * range + y[0].abs().max(y[1].abs()) + 2;
    let grad = match mode {
        TryMode::Exact => {
            let g = conservative_modify(phi, [0.0, 0.0], h, radius);
            FieldFamily::check_conservative(&g, 0)?;
            g
        }
        TryMode::Direct => GridVectorField::from_fn([0.0, 0.0], h, radius, |x| phi.gradient(x)),
    };
    let side = 2 * radius + 1;
    let lap: Vec<f64> = (0..side * side)
        .into_par_iter()
        .map(|k| phi.laplacian([h * (k % side - radius) as f64, h * (k / side - radius) as f64]))
        .collect();
    let tab = Tables { grad, lap, radius };
    let shifted = |p: [i64; 2]| [p[0] + y[0], p[1] + y[1]];

    let gamma_n = DiscretePath::l_path([0, 0], pos[n]);
    let lhs_parts: Vec<f64> = (0..=n).into_par_iter().map(|j| tab.path_sum(&gamma_n, shifted(pos[j]))).collect();
    let path_parts: Vec<f64> =
        (1..=n).into_par_iter().map(|r| tab.path_sum(&DiscretePath::l_path([0, 0], pos[r]), shifted(pos[r]))).collect();

    // Per step r: (stochastic, quotient, laplacian) sums over j < r.
    let pair_parts: Vec<[f64; 3]> = (1..=n)
        .into_par_iter()
        .map(|r| {
            let a = pos[r - 1];
            let x = [pos[r][0] - a[0], pos[r][1] - a[1]];
            let (mut s, mut q, mut l) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
            for sj in &pos[..r] {
                let d = [a[0] - sj[0] - y[0], a[1] - sj[1] - y[1]];
                let mid = [d[0] + x[0], d[1]];
                s.add(x[0] as f64 * tab.g(d)[0] + x[1] as f64 * tab.g(mid)[1]);
                q.add(tab.quotient(d, x));
                l.add(tab.lap(d));
            }
            [s.value(), q.value(), l.value()]
        })
        .collect();

    let total = |it: &mut dyn Iterator<Item = f64>| {
        let mut acc = CompensatedSum::new();
        it.for_each(|v| acc.add(v));
        acc.value()
    };
    let h2 = h * h;
    let lhs = 0.5 * h * h2 * total(&mut lhs_parts.iter().copied());
    let term_path = 0.5 * h * h2 * total(&mut path_parts.iter().copied());
    let term_stochastic = h * h2 * total(&mut pair_parts.iter().map(|p| p[0]));
    let laplace_quotient_pairs = h * h2 * total(&mut pair_parts.iter().map(|p| p[1]));
    let laplace_direct = h2 * h2 * total(&mut pair_parts.iter().map(|p| p[2]));

    let field = silt(&PlanarWalk::new(walk.level(), pos.clone()), n)?;
    let (mut qs, mut ls) = (CompensatedSum::new(), CompensatedSum::new());
    for (x, counts) in field.iter() {
        let d = [x[0] - y[0], x[1] - y[1]];
        for (mu, &c) in DIRECTIONS.iter().zip(&counts) {
            if c > 0 {
                qs.add(c as f64 * tab.quotient(d, *mu));
            }
        }
        ls.add(counts.iter().sum::<u64>() as f64 * tab.lap(d));
    }
    let laplace_quotient_silt = h * h2 * qs.value();
    let laplace_silt = h2 * h2 * ls.value();

    let term_laplace = match mode {
        TryMode::Exact => laplace_quotient_pairs,
        TryMode::Direct => laplace_direct,
    };
    Ok(TryDecomposition {
        mode,
        level: walk.level(),
        n,
        y,
        lhs,
        term_path,
        term_stochastic,
        term_laplace,
        laplace_quotient_pairs,
        laplace_quotient_silt,
        laplace_silt,
        residual: lhs - (term_path + term_stochastic + 0.5 * term_laplace),
        scale: tab.grad.max_abs() * (n + 1) as f64 * h2 * n as f64 * h,
    })
}
