//! Twist-and-shrink nested walks, Skorohod embedding and planar pairing.
//!
//! Positions are integers in level-specific lattice units: at level `m` one
//! lattice unit is `2^-m` in space and one step is `4^-m` in time.

use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::CoinMatrix;

/// Spatial mesh `2^-m`.
#[inline]
pub fn mesh(level: u32) -> f64 {
    (-(level as f64)).exp2()
}

/// Time step `4^-m`.
#[inline]
pub fn time_step(level: u32) -> f64 {
    (-2.0 * level as f64).exp2()
}

/// Number of level-`m` steps needed to cover `[0, horizon]`.
pub fn steps_for_horizon(level: u32, horizon: f64) -> usize {
    (horizon * (4f64).powi(level as i32)).ceil() as usize
}

/// Read access shared by one-dimensional and planar walks.
pub trait LatticePath {
    fn level(&self) -> u32;
    /// Number of stored positions (steps + 1).
    fn num_points(&self) -> usize;
    /// Position `k` in lattice units; one-dimensional walks report `[x, 0]`.
    fn point(&self, k: usize) -> [i64; 2];

    fn steps(&self) -> usize {
        self.num_points().saturating_sub(1)
    }

    /// Time covered in physical units.
    fn duration(&self) -> f64 {
        self.steps() as f64 * time_step(self.level())
    }

    /// Physical position at time `t`, linearly interpolated between steps.
    fn value_at(&self, t: f64) -> Option<[f64; 2]> {
        if t < 0.0 || t > self.duration() {
            return None;
        }
        let s = t / time_step(self.level());
        let i = (s.floor() as usize).min(self.steps());
        let frac = s - i as f64;
        let h = mesh(self.level());
        let p = self.point(i);
        if frac == 0.0 || i == self.steps() {
            return Some([p[0] as f64 * h, p[1] as f64 * h]);
        }
        let q = self.point(i + 1);
        Some([(p[0] as f64 + frac * (q[0] - p[0]) as f64) * h, (p[1] as f64 + frac * (q[1] - p[1]) as f64) * h])
    }
}

/// One-dimensional simple walk at a fixed level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeWalk {
    level: u32,
    positions: Vec<i64>,
}

impl LatticeWalk {
    /// Wraps raw positions; every increment must be ±1.
    pub fn new(level: u32, positions: Vec<i64>) -> Self {
        debug_assert!(positions.windows(2).all(|w| (w[1] - w[0]).abs() == 1));
        Self { level, positions }
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    /// First `steps` steps.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps + 1 > self.positions.len() {
            return Err(Error::HorizonExceeded { requested: steps, available: self.steps() });
        }
        Ok(Self { level: self.level, positions: self.positions[..=steps].to_vec() })
    }
}

impl LatticePath for LatticeWalk {
    fn level(&self) -> u32 {
        self.level
    }
    fn num_points(&self) -> usize {
        self.positions.len()
    }
    fn point(&self, k: usize) -> [i64; 2] {
        [self.positions[k], 0]
    }
}

/// Planar walk with diagonal steps `(±1, ±1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanarWalk {
    level: u32,
    positions: Vec<[i64; 2]>,
}

impl PlanarWalk {
    pub fn new(level: u32, positions: Vec<[i64; 2]>) -> Self {
        debug_assert!(positions.windows(2).all(|w| (w[1][0] - w[0][0]).abs() == 1 && (w[1][1] - w[0][1]).abs() == 1));
        Self { level, positions }
    }

    pub fn positions(&self) -> &[[i64; 2]] {
        &self.positions
    }

    pub fn mesh(&self) -> f64 {
        mesh(self.level)
    }

    /// Step `r ≥ 1` as `S_r − S_{r−1}`.
    pub fn increment(&self, r: usize) -> [i64; 2] {
        let a = self.positions[r - 1];
        let b = self.positions[r];
        [b[0] - a[0], b[1] - a[1]]
    }

    pub fn coordinate(&self, j: usize) -> LatticeWalk {
        LatticeWalk { level: self.level, positions: self.positions.iter().map(|p| p[j]).collect() }
    }

    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps + 1 > self.positions.len() {
            return Err(Error::HorizonExceeded { requested: steps, available: self.steps() });
        }
        Ok(Self { level: self.level, positions: self.positions[..=steps].to_vec() })
    }

    /// Lattice bounding box `[min, max]` of the first `count` positions.
    pub fn bounding_box(&self, count: usize) -> ([i64; 2], [i64; 2]) {
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for p in &self.positions[..count.max(1).min(self.positions.len())] {
            for j in 0..2 {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        (lo, hi)
    }
}

impl LatticePath for PlanarWalk {
    fn level(&self) -> u32 {
        self.level
    }
    fn num_points(&self) -> usize {
        self.positions.len()
    }
    fn point(&self, k: usize) -> [i64; 2] {
        self.positions[k]
    }
}

/// Twisted walks `S̃_0..S̃_M` with their stopping times.
#[derive(Debug, Clone)]
pub struct NestedWalkFamily {
    horizon: f64,
    levels: Vec<Vec<i64>>,
    stops: Vec<Vec<usize>>,
}

impl NestedWalkFamily {
    pub fn max_level(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `S̃_m(0..)` in level-`m` lattice units.
    pub fn walk(&self, m: u32) -> &[i64] {
        &self.levels[m as usize]
    }

    /// `T_m(0), T_m(1), ...`; empty at level 0.
    pub fn stopping_times(&self, m: u32) -> &[usize] {
        &self.stops[m as usize]
    }

    /// First `(m, k)` where `S̃_{m+1}(T_{m+1}(k)) ≠ 2 S̃_m(k)`, if any.
    pub fn refinement_violation(&self) -> Option<(u32, usize)> {
        for m in 0..self.max_level() {
            let coarse = self.walk(m);
            let fine = self.walk(m + 1);
            for (k, &t) in self.stopping_times(m + 1).iter().enumerate() {
                if fine[t] != 2 * coarse[k] {
                    return Some((m, k));
                }
            }
        }
        None
    }
}

/// Builds `S̃_0..S̃_M` covering `[0, horizon]` from rows `0..=M` of `coins`.
pub fn build_nested_family(coins: &CoinMatrix, max_level: u32, horizon: f64) -> Result<NestedWalkFamily> {
    build_nested_family_with_budget(coins, max_level, horizon, u64::MAX)
}

/// As [`build_nested_family`], drawing at most `budget` raw coins per level.
pub fn build_nested_family_with_budget(
    coins: &CoinMatrix,
    max_level: u32,
    horizon: f64,
    budget: u64,
) -> Result<NestedWalkFamily> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::NonpositiveTime(horizon));
    }
    let top = max_level as usize;
    let mut raw: Vec<Vec<i8>> = vec![Vec::new(); top + 1];
    let mut stops: Vec<Vec<usize>> = vec![Vec::new(); top + 1];

    // Top-down: level m must supply enough bridges for level m+1.
    let mut required = steps_for_horizon(max_level, horizon);
    for m in (1..=top).rev() {
        let (steps, times) = draw_until_covered(coins, m as u32, required, budget)?;
        let bridges = times.len() - 1;
        raw[m] = steps;
        stops[m] = times;
        required = steps_for_horizon(m as u32 - 1, horizon).max(bridges);
    }
    if (required as u64) > budget {
        return Err(Error::InsufficientCoins { level: 0, budget, required: required as u64 });
    }
    raw[0] = coins.row(0).take(required).collect();

    // Bottom-up twisting.
    let mut levels: Vec<Vec<i64>> = Vec::with_capacity(top + 1);
    levels.push(cumulative(&raw[0]));
    for m in 1..=top {
        let coarse = &levels[m - 1];
        let times = &stops[m];
        let steps = &raw[m];
        let mut pos = Vec::with_capacity(times[times.len() - 1] + 1);
        pos.push(0i64);
        let mut cur = 0i64;
        for k in 0..times.len() - 1 {
            let (a, b) = (times[k], times[k + 1]);
            let disp: i64 = steps[a..b].iter().map(|&s| s as i64).sum();
            let want = 2 * (coarse[k + 1] - coarse[k]);
            let sign = if disp == want { 1 } else { -1 };
            for &s in &steps[a..b] {
                cur += sign * s as i64;
                pos.push(cur);
            }
        }
        levels.push(pos);
    }
    Ok(NestedWalkFamily { horizon, levels, stops })
}

/// Raw steps of row `m` up to the first stopping time at or beyond `required`.
fn draw_until_covered(coins: &CoinMatrix, m: u32, required: usize, budget: u64) -> Result<(Vec<i8>, Vec<usize>)> {
    let mut steps: Vec<i8> = Vec::with_capacity(required + required / 8 + 16);
    let mut times = Vec::with_capacity(required / 4 + 8);
    times.push(0usize);
    let mut row = coins.row(m);
    let (mut cur, mut anchor) = (0i64, 0i64);
    while *times.last().unwrap() < required || times.len() < 2 && required > 0 {
        if steps.len() as u64 >= budget {
            return Err(Error::InsufficientCoins { level: m, budget, required: required as u64 });
        }
        let s = row.next().unwrap();
        steps.push(s);
        cur += s as i64;
        if (cur - anchor).abs() == 2 {
            times.push(steps.len());
            anchor = cur;
        }
    }
    Ok((steps, times))
}

fn cumulative(steps: &[i8]) -> Vec<i64> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut cur = 0i64;
    out.push(0);
    for &s in steps {
        cur += s as i64;
        out.push(cur);
    }
    out
}

/// `B̃_m` as a one-dimensional lattice walk (integers kept, units reinterpreted).
pub fn shrink(family: &NestedWalkFamily, m: u32) -> Result<LatticeWalk> {
    if m > family.max_level() {
        return Err(Error::LevelMismatch { left: m, right: family.max_level() });
    }
    Ok(LatticeWalk { level: m, positions: family.walk(m).to_vec() })
}

/// First-exit embedding of a coarse walk into a fine one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingMap {
    pub coarse_level: u32,
    pub fine_level: u32,
    /// Fine step indices `s(0) = 0 < s(1) < ...`.
    pub stops: Vec<usize>,
    /// Fine positions at the stopping indices (fine lattice units).
    pub values: Vec<i64>,
}

impl EmbeddingMap {
    /// Embedded walk in coarse lattice units.
    pub fn to_walk(&self) -> LatticeWalk {
        let r = 1i64 << (self.fine_level - self.coarse_level);
        LatticeWalk {
            level: self.coarse_level,
            positions: self.values.iter().map(|v| (v - self.values[0]) / r).collect(),
        }
    }
}

/// Embeds level `m` into `fine` via first exits of radius `2^(M−m)` lattice
/// units, returning exactly `steps` coarse steps.
pub fn skorohod_embed(fine: &LatticeWalk, m: u32, steps: usize) -> Result<EmbeddingMap> {
    let e = scan_exits(fine, m, steps)?;
    if e.stops.len() <= steps {
        return Err(Error::PathTooShort { found: e.stops.len() - 1, needed: steps });
    }
    Ok(e)
}

/// Every complete exit contained in `fine`.
pub fn skorohod_embed_all(fine: &LatticeWalk, m: u32) -> Result<EmbeddingMap> {
    scan_exits(fine, m, usize::MAX)
}

fn scan_exits(fine: &LatticeWalk, m: u32, limit: usize) -> Result<EmbeddingMap> {
    let big_m = fine.level;
    if m > big_m {
        return Err(Error::LevelMismatch { left: m, right: big_m });
    }
    let radius = 1i64 << (big_m - m);
    let pos = &fine.positions;
    let cap = limit.min(pos.len() >> (2 * (big_m - m)).min(60)) + 1;
    let mut stops = Vec::with_capacity(cap);
    let mut values = Vec::with_capacity(cap);
    stops.push(0);
    values.push(pos[0]);
    let mut anchor = pos[0];
    for (s, &v) in pos.iter().enumerate().skip(1) {
        if stops.len() > limit {
            break;
        }
        if (v - anchor).abs() == radius {
            stops.push(s);
            values.push(v);
            anchor = v;
        }
    }
    Ok(EmbeddingMap { coarse_level: m, fine_level: big_m, stops, values })
}

/// Planar embedded walk `B_m`: each coordinate embedded independently.
pub fn embed_planar(fine: &PlanarWalk, m: u32, steps: usize) -> Result<PlanarWalk> {
    let x = skorohod_embed(&fine.coordinate(0), m, steps)?.to_walk();
    let y = skorohod_embed(&fine.coordinate(1), m, steps)?.to_walk();
    pair_planar(&x, &y)
}

/// Pairs two independent one-dimensional walks into a planar walk.
pub fn pair_planar(x: &LatticeWalk, y: &LatticeWalk) -> Result<PlanarWalk> {
    if x.level != y.level {
        return Err(Error::LevelMismatch { left: x.level, right: y.level });
    }
    if x.positions.len() != y.positions.len() {
        return Err(Error::LengthMismatch { left: x.steps(), right: y.steps() });
    }
    let positions = x.positions.iter().zip(&y.positions).map(|(&a, &b)| [a, b]).collect();
    Ok(PlanarWalk { level: x.level, positions })
}

/// Planar simple walk at `level` whose coordinates read rows `level` of
/// lanes 0 and 1 of `coins` directly (no nesting).
pub fn coin_walk(coins: &CoinMatrix, level: u32, steps: usize) -> PlanarWalk {
    let mut xs = coins.with_lane(0).row(level);
    let mut ys = coins.with_lane(1).row(level);
    let mut positions = Vec::with_capacity(steps + 1);
    let mut p = [0i64, 0];
    positions.push(p);
    for _ in 0..steps {
        p[0] += xs.next().unwrap() as i64;
        p[1] += ys.next().unwrap() as i64;
        positions.push(p);
    }
    PlanarWalk { level, positions }
}

/// Planar `B̃_m` from two families, truncated to the common horizon.
pub fn planar_from_families(fx: &NestedWalkFamily, fy: &NestedWalkFamily, m: u32) -> Result<PlanarWalk> {
    let x = shrink(fx, m)?;
    let y = shrink(fy, m)?;
    let n = x.steps().min(y.steps());
    pair_planar(&x.truncated(n)?, &y.truncated(n)?)
}

/// Position `k` on the level-`fine` time mesh, in physical units.
fn on_fine_mesh<P: LatticePath>(p: &P, fine: u32, k: usize) -> [f64; 2] {
    let shift = 2 * (fine - p.level());
    let q = k >> shift;
    let r = k & ((1usize << shift) - 1);
    let h = mesh(p.level());
    let a = p.point(q);
    if r == 0 {
        return [a[0] as f64 * h, a[1] as f64 * h];
    }
    let b = p.point(q + 1);
    let w = r as f64 / (1u64 << shift) as f64;
    [(a[0] as f64 + w * (b[0] - a[0]) as f64) * h, (a[1] as f64 + w * (b[1] - a[1]) as f64) * h]
}

/// `sup_{0≤t≤K} |a(t) − b(t)|` over the finer walk's time mesh.
///
/// Coarse step times are a subset of the fine ones, so both interpolants are
/// linear between mesh points and the supremum is attained on the mesh.
pub fn sup_distance<A: LatticePath, B: LatticePath>(a: &A, b: &B, horizon: f64) -> Result<f64> {
    for (lvl, steps) in [(a.level(), a.steps()), (b.level(), b.steps())] {
        let need = steps_for_horizon(lvl, horizon);
        if steps < need {
            return Err(Error::HorizonExceeded { requested: need, available: steps });
        }
    }
    let fine = a.level().max(b.level());
    let last = (horizon * (4f64).powi(fine as i32)).floor() as usize;
    let mut sup = 0.0f64;
    for k in 0..=last {
        let p = on_fine_mesh(a, fine, k);
        let q = on_fine_mesh(b, fine, k);
        sup = sup.max((p[0] - q[0]).hypot(p[1] - q[1]));
    }
    let tail = last as f64 * time_step(fine);
    if tail < horizon {
        let p = a.value_at(horizon).unwrap();
        let q = b.value_at(horizon).unwrap();
        sup = sup.max((p[0] - q[0]).hypot(p[1] - q[1]));
    }
    Ok(sup)
}

/// Text dump with header `level,k,x_lattice,y_lattice`.
pub fn write_walk_dump<W: Write, P: LatticePath>(out: &mut W, walk: &P) -> Result<()> {
    writeln!(out, "level,k,x_lattice,y_lattice")?;
    for k in 0..walk.num_points() {
        let p = walk.point(k);
        writeln!(out, "{},{},{},{}", walk.level(), k, p[0], p[1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(seed: u64, m: u32, k: f64) -> NestedWalkFamily {
        build_nested_family(&CoinMatrix::new(seed), m, k).unwrap()
    }

    #[test]
    fn level_zero_is_raw_row() {
        let coins = CoinMatrix::new(3);
        let f = build_nested_family(&coins, 4, 2.0).unwrap();
        let w = f.walk(0);
        for k in 1..w.len() {
            assert_eq!(w[k] - w[k - 1], coins.sign_at(0, k as u64) as i64);
        }
    }

    #[test]
    fn refinement_is_exact() {
        for seed in 0..5 {
            let f = family(seed, 7, 1.0);
            assert_eq!(f.refinement_violation(), None);
        }
    }

    #[test]
    fn every_level_is_simple_and_covers_horizon() {
        let f = family(9, 6, 1.5);
        for m in 0..=6 {
            let w = f.walk(m);
            assert!(w.len() > steps_for_horizon(m, 1.5));
            assert!(w.windows(2).all(|p| (p[1] - p[0]).abs() == 1));
        }
    }

    #[test]
    fn first_stopping_time_is_first_hit_of_two() {
        let f = family(21, 5, 1.0);
        for m in 1..=5 {
            let w = f.walk(m);
            let first = w.iter().position(|v| v.abs() == 2).unwrap();
            assert_eq!(f.stopping_times(m)[1], first);
        }
    }

    #[test]
    fn bridges_stay_within_two() {
        let f = family(4, 5, 1.0);
        for m in 1..=5 {
            let w = f.walk(m);
            let t = f.stopping_times(m);
            for k in 0..t.len() - 1 {
                for n in t[k]..t[k + 1] {
                    assert!((w[n] - w[t[k]]).abs() < 2);
                }
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = build_nested_family_with_budget(&CoinMatrix::new(1), 3, 1.0, 10).unwrap_err();
        assert!(matches!(err, Error::InsufficientCoins { .. }));
    }

    #[test]
    fn shrink_values() {
        let f = family(2, 3, 1.0);
        let w = shrink(&f, 3).unwrap();
        let v = w.value_at(5.0 / 64.0).unwrap();
        assert_eq!(v[0], f.walk(3)[5] as f64 / 8.0);
        let mid = w.value_at(5.5 / 64.0).unwrap()[0];
        assert_eq!(mid, 0.5 * (f.walk(3)[5] + f.walk(3)[6]) as f64 / 8.0);
        let w0 = shrink(&f, 0).unwrap();
        assert_eq!(w0.positions(), f.walk(0));
    }

    #[test]
    fn embedding_identity_at_top() {
        let f = family(5, 4, 1.0);
        let fine = shrink(&f, 4).unwrap();
        let e = skorohod_embed(&fine, 4, fine.steps()).unwrap();
        assert_eq!(e.stops, (0..=fine.steps()).collect::<Vec<_>>());
        assert_eq!(e.to_walk(), fine);
    }

    #[test]
    fn embedding_matches_brute_force_scan() {
        let coins = CoinMatrix::new(77);
        let pos = cumulative(&coins.row(0).take(64).collect::<Vec<_>>());
        let fine = LatticeWalk::new(1, pos.clone());
        let mut expect = vec![0usize];
        let mut start = 0usize;
        while let Some(s) = (start + 1..pos.len()).find(|&s| (pos[s] - pos[start]).abs() == 2) {
            expect.push(s);
            start = s;
        }
        let n = expect.len() - 1;
        let e = skorohod_embed(&fine, 0, n).unwrap();
        assert_eq!(e.stops, expect);
        assert!(e.values.windows(2).all(|w| (w[1] - w[0]).abs() == 2));
        assert_eq!(skorohod_embed(&fine, 0, n + 1).unwrap_err(), Error::PathTooShort { found: n, needed: n + 1 });
    }

    #[test]
    fn embedding_reproduces_twisted_levels() {
        let f = family(13, 7, 1.0);
        let fine = shrink(&f, 7).unwrap();
        for m in 0..7 {
            let coarse = f.walk(m);
            let e = skorohod_embed_all(&fine, m).unwrap().to_walk();
            let n = e.num_points().min(coarse.len());
            assert!(n > steps_for_horizon(m, 1.0) / 2);
            assert_eq!(&e.positions()[..n], &coarse[..n]);
        }
    }

    #[test]
    fn pairing() {
        let f = family(1, 3, 1.0);
        let x = shrink(&f, 3).unwrap();
        let p = pair_planar(&x, &x).unwrap();
        assert!(p.positions().iter().all(|q| q[0] == q[1]));
        let y = x.truncated(10).unwrap();
        assert!(matches!(pair_planar(&x, &y), Err(Error::LengthMismatch { .. })));
        let z = shrink(&f, 2).unwrap();
        assert!(matches!(pair_planar(&x, &z), Err(Error::LevelMismatch { .. })));
    }

    #[test]
    fn sup_distance_basics() {
        let fx = family(8, 6, 1.0);
        let fy = build_nested_family(&CoinMatrix::new(8).with_lane(1), 6, 1.0).unwrap();
        let a = planar_from_families(&fx, &fy, 6).unwrap();
        assert_eq!(sup_distance(&a, &a, 1.0).unwrap(), 0.0);
        let b = planar_from_families(&fx, &fy, 3).unwrap();
        let d = sup_distance(&a, &b, 1.0).unwrap();
        assert!(d > 0.0 && d < 3.0);
        let shifted = PlanarWalk::new(6, a.positions()[1..].to_vec());
        assert!(sup_distance(&a, &shifted, 0.9).unwrap() <= 2f64.sqrt() / 64.0 + 1e-15);
        assert!(matches!(sup_distance(&a, &b, 50.0), Err(Error::HorizonExceeded { .. })));
    }

    #[test]
    fn dump_format() {
        let w = PlanarWalk::new(2, vec![[0, 0], [1, -1]]);
        let mut buf = Vec::new();
        write_walk_dump(&mut buf, &w).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "level,k,x_lattice,y_lattice\n2,0,0,0\n2,1,1,-1\n");
    }
}
