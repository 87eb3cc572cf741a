//! Local times and self-intersection local times (SILT) of lattice walks.
//!
//! Counts are exact integers. A planar walk with diagonal steps only visits
//! points with `x1 ≡ x2 (mod 2)`, and so do all differences `S_j − S_i`; SILT
//! fields are therefore stored densely in the rotated coordinates
//! `u = (x1 + x2) / 2`, `v = (x1 − x2) / 2`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::walk::{mesh, time_step, LatticePath, PlanarWalk};

/// Index of an exit direction: `pp, pm, mp, mm` for `μ = (±1, ±1)`.
///
/// A one-dimensional step `(±1, 0)` maps to `pp` / `mp`.
#[inline]
pub fn mu_index(step: [i64; 2]) -> usize {
    (((step[0] < 0) as usize) << 1) | (step[1] < 0) as usize
}

/// The four planar directions in [`mu_index`] order.
pub const DIRECTIONS: [[i64; 2]; 4] = [[1, 1], [1, -1], [-1, 1], [-1, -1]];

/// Visit counts `ℓ(k, x)` over times `0..k`, with partials by exit step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalTimeTable {
    level: u32,
    horizon: usize,
    entries: BTreeMap<[i64; 2], [u64; 4]>,
}

impl LocalTimeTable {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn count(&self, x: [i64; 2]) -> u64 {
        self.entries.get(&x).map_or(0, |e| e.iter().sum())
    }

    pub fn partial(&self, x: [i64; 2], mu: [i64; 2]) -> u64 {
        self.entries.get(&x).map_or(0, |e| e[mu_index(mu)])
    }

    /// `2^-m · count`.
    pub fn physical(&self, x: [i64; 2]) -> f64 {
        mesh(self.level) * self.count(x) as f64
    }

    pub fn total(&self) -> u64 {
        self.entries.values().flat_map(|e| e.iter()).sum()
    }

    pub fn max_count(&self) -> u64 {
        self.entries.values().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Visited points in lexicographic order with their per-direction counts.
    pub fn iter(&self) -> impl Iterator<Item = ([i64; 2], [u64; 4])> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Local time of `walk` up to (excluding) time `k`.
pub fn local_time<P: LatticePath>(walk: &P, k: usize) -> Result<LocalTimeTable> {
    if k > walk.steps() {
        return Err(Error::HorizonExceeded { requested: k, available: walk.steps() });
    }
    let mut entries: BTreeMap<[i64; 2], [u64; 4]> = BTreeMap::new();
    for j in 0..k {
        let a = walk.point(j);
        let b = walk.point(j + 1);
        entries.entry(a).or_default()[mu_index([b[0] - a[0], b[1] - a[1]])] += 1;
    }
    Ok(LocalTimeTable { level: walk.level(), horizon: k, entries })
}

/// Pair counts `α_1(n, x) = #{0 ≤ i ≤ j < n : S_j − S_i = x}` split by the
/// exit step `S_{j+1} − S_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiltField {
    level: u32,
    n: usize,
    u0: i64,
    v0: i64,
    width: usize,
    height: usize,
    partial: [Vec<u64>; 4],
}

impl SiltField {
    fn empty(level: u32, n: usize, u_half: i64, v_half: i64) -> Self {
        let width = (2 * u_half + 1) as usize;
        let height = (2 * v_half + 1) as usize;
        let cells = width * height;
        Self { level, n, u0: -u_half, v0: -v_half, width, height, partial: std::array::from_fn(|_| vec![0u64; cells]) }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Horizon index `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mesh(&self) -> f64 {
        mesh(self.level)
    }

    /// `t = n · 4^-m`.
    pub fn time(&self) -> f64 {
        self.n as f64 * time_step(self.level)
    }

    #[inline]
    fn cell(&self, x: [i64; 2]) -> Option<usize> {
        let s = x[0] + x[1];
        if s & 1 != 0 {
            return None;
        }
        let u = s / 2 - self.u0;
        let v = (x[0] - x[1]) / 2 - self.v0;
        if u < 0 || v < 0 || u >= self.width as i64 || v >= self.height as i64 {
            return None;
        }
        Some(u as usize + v as usize * self.width)
    }

    fn point_of(&self, cell: usize) -> [i64; 2] {
        let u = (cell % self.width) as i64 + self.u0;
        let v = (cell / self.width) as i64 + self.v0;
        [u + v, u - v]
    }

    /// `α_1(n, x)`.
    pub fn total(&self, x: [i64; 2]) -> u64 {
        self.cell(x).map_or(0, |c| self.partial.iter().map(|p| p[c]).sum())
    }

    /// `α_1^μ(n, x)`.
    pub fn partial(&self, x: [i64; 2], mu: [i64; 2]) -> u64 {
        self.cell(x).map_or(0, |c| self.partial[mu_index(mu)][c])
    }

    /// `α_m(t, x) = 4^-m · count` at a lattice point.
    pub fn physical(&self, x: [i64; 2]) -> f64 {
        time_step(self.level) * self.total(x) as f64
    }

    /// `Σ_x α_1(n, x)`.
    pub fn total_mass(&self) -> u128 {
        self.partial.iter().flat_map(|p| p.iter()).map(|&c| c as u128).sum()
    }

    pub fn max_total(&self) -> u64 {
        (0..self.width * self.height).map(|c| self.partial.iter().map(|p| p[c]).sum::<u64>()).max().unwrap_or(0)
    }

    /// Nonzero entries `(x, [pp, pm, mp, mm])` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = ([i64; 2], [u64; 4])> + '_ {
        (0..self.width * self.height).filter_map(move |c| {
            let e = [self.partial[0][c], self.partial[1][c], self.partial[2][c], self.partial[3][c]];
            (e != [0; 4]).then(|| (self.point_of(c), e))
        })
    }

    /// CSV with columns `m,n,x1_lattice,x2_lattice,count,count_mu_pp,count_mu_pm,count_mu_mp,count_mu_mm`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "m",
            "n",
            "x1_lattice",
            "x2_lattice",
            "count",
            "count_mu_pp",
            "count_mu_pm",
            "count_mu_mp",
            "count_mu_mm",
        ])?;
        for (x, e) in self.iter() {
            let total: u64 = e.iter().sum();
            w.serialize((self.level, self.n, x[0], x[1], total, e[0], e[1], e[2], e[3]))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rough footprint in bytes of a field over `n` steps (four-sigma range).
    pub fn estimated_bytes(n: usize) -> u64 {
        let half = 4.0 * (n as f64 / 2.0).sqrt() + 2.0;
        let side = 4.0 * half + 1.0;
        (side * side * 32.0) as u64
    }

    fn bump(&mut self, mu: usize, d: [i64; 2], by: u64) {
        let c = self.cell(d).expect("difference inside window");
        self.partial[mu][c] += by;
    }
}

fn check_silt_inputs(walk: &PlanarWalk, n: usize) -> Result<()> {
    if n > walk.steps() {
        return Err(Error::HorizonExceeded { requested: n, available: walk.steps() });
    }
    Ok(())
}

fn rotated(p: [i64; 2]) -> (i64, i64) {
    ((p[0] + p[1]).div_euclid(2), (p[0] - p[1]).div_euclid(2))
}

/// Incremental SILT: each new position `S_j` adds the current occupation
/// counts of all distinct earlier points, costing `O(n · distinct points)`.
pub fn silt(walk: &PlanarWalk, n: usize) -> Result<SiltField> {
    check_silt_inputs(walk, n)?;
    let pos = walk.positions();
    let origin = pos[0];
    let rel = |p: [i64; 2]| [p[0] - origin[0], p[1] - origin[1]];
    let (mut umin, mut umax, mut vmin, mut vmax) = (0i64, 0i64, 0i64, 0i64);
    for p in &pos[..n.max(1)] {
        let (u, v) = rotated(rel(*p));
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let (wu, wv) = (umax - umin, vmax - vmin);
    let mut field = SiltField::empty(walk.level(), n, wu, wv);
    let stride = field.width as i64;

    // Occupancy slots over the walk's own bounding box.
    let occ_w = (wu + 1) as usize;
    let mut slot_of = vec![u32::MAX; occ_w * (wv + 1) as usize];
    let mut keys: Vec<usize> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();

    for j in 0..n {
        let (u, v) = rotated(rel(pos[j]));
        let (ou, ov) = (u - umin, v - vmin);
        let key = (ou + ov * stride) as usize;
        let occ = ou as usize + ov as usize * occ_w;
        match slot_of[occ] {
            u32::MAX => {
                slot_of[occ] = keys.len() as u32;
                keys.push(key);
                counts.push(1);
            }
            s => counts[s as usize] += 1,
        }
        let step = [pos[j + 1][0] - pos[j][0], pos[j + 1][1] - pos[j][1]];
        let base = (ou + wu + (ov + wv) * stride) as usize;
        let target = &mut field.partial[mu_index(step)];
        for (&k, &c) in keys.iter().zip(counts.iter()) {
            target[base - k] += c;
        }
    }
    Ok(field)
}

/// Direct `O(n²)` pair loop; reference for [`silt`].
pub fn silt_naive(walk: &PlanarWalk, n: usize) -> Result<SiltField> {
    check_silt_inputs(walk, n)?;
    let pos = walk.positions();
    let (lo, hi) = walk.bounding_box(n);
    let (wu, wv) = rotated_half_extent(lo, hi);
    let mut field = SiltField::empty(walk.level(), n, wu, wv);
    for j in 0..n {
        let mu = mu_index([pos[j + 1][0] - pos[j][0], pos[j + 1][1] - pos[j][1]]);
        for i in 0..=j {
            field.bump(mu, [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]], 1);
        }
    }
    Ok(field)
}

fn rotated_half_extent(lo: [i64; 2], hi: [i64; 2]) -> (i64, i64) {
    // Any difference of visited points has |u|, |v| below half the box span sum.
    let span = (hi[0] - lo[0]) + (hi[1] - lo[1]);
    let half = span / 2 + 1;
    (half, half)
}

/// `α_h(t, x)` with `t` snapped to the time grid `h²·⌊t/h²⌋` and `x`
/// interpolated on the triangulation.
///
/// Fails with `HorizonExceeded` when the snapped time is not the field's own.
pub fn silt_physical(field: &SiltField, t: f64, x: [f64; 2]) -> Result<f64> {
    let snapped = (t / time_step(field.level)).floor();
    if t < 0.0 || snapped as usize != field.n {
        return Err(Error::HorizonExceeded { requested: snapped.max(0.0) as usize, available: field.n });
    }
    Ok(InterpolatedField::new(field).value(x))
}

/// Piecewise-linear extension of a [`SiltField`] over the triangulation of
/// each lattice square into a lower triangle `{a, a+he1, a+he2}` and an upper
/// triangle `{a+he1, a+he2, a+h(e1+e2)}`.
#[derive(Debug, Clone, Copy)]
pub struct InterpolatedField<'a> {
    field: &'a SiltField,
}

impl<'a> InterpolatedField<'a> {
    pub fn new(field: &'a SiltField) -> Self {
        Self { field }
    }

    pub fn field(&self) -> &SiltField {
        self.field
    }

    fn lattice(&self, a: [i64; 2]) -> f64 {
        self.field.physical(a)
    }

    /// Interpolated value at a physical point; boundary points use the lower triangle.
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let h = self.field.mesh();
        let (s1, s2) = (x[0] / h, x[1] / h);
        let a = [s1.floor() as i64, s2.floor() as i64];
        let p = s1 - a[0] as f64;
        let q = s2 - a[1] as f64;
        let b = self.lattice([a[0] + 1, a[1]]);
        let c = self.lattice([a[0], a[1] + 1]);
        if p + q <= 1.0 {
            let av = self.lattice(a);
            av + p * (b - av) + q * (c - av)
        } else {
            let d = self.lattice([a[0] + 1, a[1] + 1]);
            d + (1.0 - p) * (c - d) + (1.0 - q) * (b - d)
        }
    }

    /// `∫` over the lower (`upper = false`) or upper triangle of square `a`.
    pub fn triangle_integral(&self, a: [i64; 2], upper: bool) -> f64 {
        let h = self.field.mesh();
        let (v0, v1, v2) = self.triangle_values(a, upper);
        h * h / 6.0 * (v0 + v1 + v2)
    }

    fn triangle_values(&self, a: [i64; 2], upper: bool) -> (f64, f64, f64) {
        let b = self.lattice([a[0] + 1, a[1]]);
        let c = self.lattice([a[0], a[1] + 1]);
        let third = if upper { self.lattice([a[0] + 1, a[1] + 1]) } else { self.lattice(a) };
        (third, b, c)
    }

    /// `∫_{B_δ(y)} α_m(t, x) dx`: closed form on triangles inside the disc,
    /// adaptive quadrature on triangles cut by the circle.
    pub fn disc_integral(&self, y: [f64; 2], delta: f64) -> f64 {
        let h = self.field.mesh();
        let lo = [((y[0] - delta) / h).floor() as i64 - 1, ((y[1] - delta) / h).floor() as i64 - 1];
        let hi = [((y[0] + delta) / h).ceil() as i64, ((y[1] + delta) / h).ceil() as i64];
        let r2 = delta * delta;
        let inside = |p: [i64; 2]| {
            let d0 = p[0] as f64 * h - y[0];
            let d1 = p[1] as f64 * h - y[1];
            d0 * d0 + d1 * d1 <= r2
        };
        let mut acc = crate::summation::CompensatedSum::new();
        for a1 in lo[0]..=hi[0] {
            for a2 in lo[1]..=hi[1] {
                let a = [a1, a2];
                for upper in [false, true] {
                    let (v0, v1, v2) = self.triangle_values(a, upper);
                    if v0 == 0.0 && v1 == 0.0 && v2 == 0.0 {
                        continue;
                    }
                    let verts = triangle_vertices(a, upper);
                    let n_in = verts.iter().filter(|&&p| inside(p)).count();
                    if n_in == 3 {
                        acc.add(h * h / 6.0 * (v0 + v1 + v2));
                        continue;
                    }
                    let pts = verts.map(|p| [p[0] as f64 * h, p[1] as f64 * h]);
                    if n_in == 0 && triangle_distance(pts, y) >= delta {
                        continue;
                    }
                    acc.add(clipped_triangle_integral(a, upper, h, (v0, v1, v2), y, delta));
                }
            }
        }
        acc.value()
    }
}

fn triangle_vertices(a: [i64; 2], upper: bool) -> [[i64; 2]; 3] {
    let third = if upper { [a[0] + 1, a[1] + 1] } else { a };
    [third, [a[0] + 1, a[1]], [a[0], a[1] + 1]]
}

fn segment_distance(p: [f64; 2], q: [f64; 2], y: [f64; 2]) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1]];
    let w = [y[0] - p[0], y[1] - p[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = ((w[0] * d[0] + w[1] * d[1]) / len2).clamp(0.0, 1.0);
    (w[0] - s * d[0]).hypot(w[1] - s * d[1])
}

fn triangle_distance(v: [[f64; 2]; 3], y: [f64; 2]) -> f64 {
    let sign = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (y[1] - a[1]) - (b[1] - a[1]) * (y[0] - a[0]);
    let s = [sign(v[0], v[1]), sign(v[1], v[2]), sign(v[2], v[0])];
    if s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0) {
        return 0.0;
    }
    segment_distance(v[0], v[1], y).min(segment_distance(v[1], v[2], y)).min(segment_distance(v[2], v[0], y))
}

/// Integral of the linear interpolant over triangle ∩ disc.
///
/// Local coordinates `p, q ∈ [0, 1]` along `e1, e2`; the inner integral in `q`
/// is exact and the outer one adaptive, split at every kink.
fn clipped_triangle_integral(
    a: [i64; 2],
    upper: bool,
    h: f64,
    (v0, v1, v2): (f64, f64, f64),
    y: [f64; 2],
    delta: f64,
) -> f64 {
    // Interpolant as c0 + cp·p + cq·q.
    let (c0, cp, cq) = if upper {
        // v0 at (1,1), v1 at (1,0), v2 at (0,1)
        (v1 + v2 - v0, v0 - v2, v0 - v1)
    } else {
        (v0, v1 - v0, v2 - v0)
    };
    let cy = [(y[0] - a[0] as f64 * h) / h, (y[1] - a[1] as f64 * h) / h];
    let r = delta / h;
    let q_bounds = move |p: f64| -> (f64, f64) {
        if upper {
            (1.0 - p, 1.0)
        } else {
            (0.0, 1.0 - p)
        }
    };
    let inner = move |p: f64| -> f64 {
        let dx = p - cy[0];
        let w2 = r * r - dx * dx;
        if w2 <= 0.0 {
            return 0.0;
        }
        let w = w2.sqrt();
        let (tl, tu) = q_bounds(p);
        let ql = tl.max(cy[1] - w);
        let qu = tu.min(cy[1] + w);
        if qu <= ql {
            return 0.0;
        }
        (c0 + cp * p) * (qu - ql) + 0.5 * cq * (qu * qu - ql * ql)
    };

    let mut breaks = vec![0.0, 1.0, cy[0] - r, cy[0] + r];
    // Circle against the lines q = 0, q = 1 and q = 1 − p.
    for (k0, k1) in [(0.0, 0.0), (1.0, 0.0), (1.0, -1.0)] {
        // (p − cy0)² + (k0 + k1 p − cy1)² = r²
        let qa = 1.0 + k1 * k1;
        let qb = -2.0 * cy[0] + 2.0 * k1 * (k0 - cy[1]);
        let qc = cy[0] * cy[0] + (k0 - cy[1]) * (k0 - cy[1]) - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            breaks.push((-qb - sq) / (2.0 * qa));
            breaks.push((-qb + sq) / (2.0 * qa));
        }
    }
    breaks.retain(|b| (0.0..=1.0).contains(b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let scale = v0.abs().max(v1.abs()).max(v2.abs()).max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            total += quadrature::integrate(inner, w[0], w[1], 1e-13 * scale, 1e-11).value;
        }
    }
    total * h * h
}

/// Lattice points `x ∈ hℤ² ∩ B̄_δ(y)` visited row by row.
///
/// Membership is `|x − y|² ≤ δ²` evaluated in lattice units, which is exact
/// whenever `y/h` and `δ/h` are dyadic with at most 26 significant bits.
pub fn for_each_in_disc(level: u32, y: [f64; 2], delta: f64, mut visit: impl FnMut([i64; 2])) {
    let h = mesh(level);
    let (c1, c2, r) = (y[0] / h, y[1] / h, delta / h);
    let r2 = r * r;
    let lo = (c2 - r).ceil() as i64;
    let hi = (c2 + r).floor() as i64;
    for x2 in lo..=hi {
        let d2 = x2 as f64 - c2;
        let rest = r2 - d2 * d2;
        if rest < 0.0 {
            continue;
        }
        let w = rest.sqrt();
        let mut a = (c1 - w).ceil() as i64 - 1;
        let mut b = (c1 + w).floor() as i64 + 1;
        let within = |x1: i64| {
            let d1 = x1 as f64 - c1;
            d1 * d1 + d2 * d2 <= r2
        };
        while !within(a) && a <= b {
            a += 1;
        }
        while b >= a && !within(b) {
            b -= 1;
        }
        for x1 in a..=b {
            visit([x1, x2]);
        }
    }
}

/// `Σ_{x ∈ hℤ² ∩ B̄_δ(y)} α_m(t, x) · h²` (closed disc).
pub fn silt_disc_sum(field: &SiltField, y: [f64; 2], delta: f64) -> f64 {
    let mut count: u128 = 0;
    for_each_in_disc(field.level, y, delta, |x| count += field.total(x) as u128);
    let h2 = time_step(field.level);
    count as f64 * h2 * h2
}

/// `∫_{B_δ(y)}` of the interpolated field.
pub fn silt_disc_integral(field: &InterpolatedField<'_>, y: [f64; 2], delta: f64) -> f64 {
    field.disc_integral(y, delta)
}

/// Maxima monitored against the Erdős–Taylor bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErdosTaylor {
    /// `sup_x α_1(n, x)`.
    pub sup_alpha: u64,
    /// `ℓ*(n)`, the most visits to a single site.
    pub max_visits: u64,
    /// `sup_x α_1(n, x) / (n ln² n)`.
    pub ratio: f64,
}

/// Requires `n ≥ 2` and a walk with at least `n` steps.
pub fn erdos_taylor_ratio(walk: &PlanarWalk, n: usize) -> Result<ErdosTaylor> {
    if n < 2 {
        return Err(Error::HorizonExceeded { requested: n, available: 2 });
    }
    let field = silt(walk, n)?;
    let lt = local_time(walk, n)?;
    let sup_alpha = field.max_total();
    let ln = (n as f64).ln();
    Ok(ErdosTaylor { sup_alpha, max_visits: lt.max_count(), ratio: sup_alpha as f64 / (n as f64 * ln * ln) })
}
