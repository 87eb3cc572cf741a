//! Discrete path integrals, discrete curl and conservative grid fields.
//!
//! Grid points are `a + h·x` for integer `x`; fields live on the square
//! window `|x1|, |x2| ≤ R`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::summation::CompensatedSum;

/// Smooth scalar function with caller-supplied derivatives.
pub trait GridScalarSpec {
    fn value(&self, x: [f64; 2]) -> f64;
    /// `(D1 g, D2 g)`.
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
    /// `(D11 g, D22 g)`.
    fn second_partials(&self, x: [f64; 2]) -> [f64; 2];
    /// `(D111 g, D222 g)`.
    fn third_partials(&self, x: [f64; 2]) -> [f64; 2];

    fn laplacian(&self, x: [f64; 2]) -> f64 {
        let s = self.second_partials(x);
        s[0] + s[1]
    }
}

impl<T: GridScalarSpec + ?Sized> GridScalarSpec for &T {
    fn value(&self, x: [f64; 2]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        (**self).gradient(x)
    }
    fn second_partials(&self, x: [f64; 2]) -> [f64; 2] {
        (**self).second_partials(x)
    }
    fn third_partials(&self, x: [f64; 2]) -> [f64; 2] {
        (**self).third_partials(x)
    }
}

/// Oriented unit edge `[x, x + sign·e_axis]` in lattice units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: [i64; 2],
    pub axis: usize,
    pub sign: i64,
}

impl Edge {
    pub fn to(&self) -> [i64; 2] {
        let mut t = self.from;
        t[self.axis] += self.sign;
        t
    }
}

/// Formal sum of oriented edges; consecutive edges need not connect.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiscretePath {
    edges: Vec<Edge>,
}

impl DiscretePath {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, from: [i64; 2], axis: usize, sign: i64) {
        debug_assert!(axis < 2 && sign.abs() == 1);
        self.edges.push(Edge { from, axis, sign });
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Unit moves along a vertex sequence; each consecutive pair must be
    /// lattice neighbours.
    pub fn through(vertices: &[[i64; 2]]) -> Self {
        let mut p = Self::new();
        for w in vertices.windows(2) {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
            let axis = if d[0] != 0 { 0 } else { 1 };
            debug_assert!(d[1 - axis] == 0 && d[axis].abs() == 1);
            p.push(w[0], axis, d[axis]);
        }
        p
    }

    /// Along `e1` from `from` to `(to1, from2)`, then along `e2` to `to`.
    pub fn l_path(from: [i64; 2], to: [i64; 2]) -> Self {
        let mut p = Self::new();
        p.extend_axis(from, 0, to[0]);
        p.extend_axis([to[0], from[1]], 1, to[1]);
        p
    }

    fn extend_axis(&mut self, from: [i64; 2], axis: usize, target: i64) {
        let sign = (target - from[axis]).signum();
        let mut cur = from;
        while cur[axis] != target {
            self.push(cur, axis, sign);
            cur[axis] += sign;
        }
    }

    /// Counter-clockwise boundary of the unit square with SW corner `x`.
    pub fn square_boundary(x: [i64; 2]) -> Self {
        Self::through(&[x, [x[0] + 1, x[1]], [x[0] + 1, x[1] + 1], [x[0], x[1] + 1], x])
    }

    pub fn append(&mut self, other: &DiscretePath) {
        self.edges.extend_from_slice(&other.edges);
    }
}

/// Vector field sampled on `a + hℤ²` over `|x1|, |x2| ≤ R`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorField {
    origin: [f64; 2],
    h: f64,
    radius: i64,
    values: Vec<[f64; 2]>,
    max_abs: f64,
    max_curl: f64,
}

impl GridVectorField {
    /// Wraps `values` in row-major order (`x1` fastest, from `−R`).
    pub fn from_values(origin: [f64; 2], h: f64, radius: i64, values: Vec<[f64; 2]>) -> Self {
        let side = (2 * radius + 1) as usize;
        assert_eq!(values.len(), side * side, "window size");
        let max_abs = values.iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max);
        let mut f = Self { origin, h, radius, values, max_abs, max_curl: 0.0 };
        f.max_curl = f.scan_max_curl();
        f
    }

    /// Samples `f` at the physical grid points.
    pub fn from_fn(origin: [f64; 2], h: f64, radius: i64, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut values = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
        for j in -radius..=radius {
            for i in -radius..=radius {
                values.push(f([origin[0] + h * i as f64, origin[1] + h * j as f64]));
            }
        }
        Self::from_values(origin, h, radius, values)
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn mesh(&self) -> f64 {
        self.h
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn contains(&self, x: [i64; 2]) -> bool {
        x[0].abs() <= self.radius && x[1].abs() <= self.radius
    }

    #[inline]
    fn index(&self, x: [i64; 2]) -> usize {
        let side = 2 * self.radius + 1;
        ((x[0] + self.radius) + (x[1] + self.radius) * side) as usize
    }

    /// Value at a lattice point known to lie in the window.
    #[inline]
    pub(crate) fn at(&self, x: [i64; 2]) -> [f64; 2] {
        debug_assert!(self.contains(x));
        self.values[self.index(x)]
    }

    pub fn get(&self, x: [i64; 2]) -> Result<[f64; 2]> {
        if !self.contains(x) {
            return Err(Error::OutOfWindow { x1: x[0], x2: x[1], radius: self.radius });
        }
        Ok(self.values[self.index(x)])
    }

    /// Physical location of lattice point `x`.
    pub fn point(&self, x: [i64; 2]) -> [f64; 2] {
        [self.origin[0] + self.h * x[0] as f64, self.origin[1] + self.h * x[1] as f64]
    }

    /// `max |f^j|` over the window.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    /// `max |curl_h f|` over every elementary rectangle of the window.
    pub fn max_abs_curl(&self) -> f64 {
        self.max_curl
    }

    /// Zero discrete curl within `1e-12 · max|f|`.
    pub fn is_conservative(&self) -> bool {
        self.max_curl <= 1e-12 * self.max_abs
    }

    fn curl_unchecked(&self, x: [i64; 2]) -> f64 {
        let sw = self.values[self.index(x)];
        let se = self.values[self.index([x[0] + 1, x[1]])];
        let ne = self.values[self.index([x[0] + 1, x[1] + 1])];
        let nw = self.values[self.index([x[0], x[1] + 1])];
        curl_formula(sw, se, ne, nw, self.h)
    }

    fn scan_max_curl(&self) -> f64 {
        let mut m = 0.0f64;
        for j in -self.radius..self.radius {
            for i in -self.radius..self.radius {
                m = m.max(self.curl_unchecked([i, j]).abs());
            }
        }
        m
    }

    /// CSV `x1_lattice,x2_lattice,f1,f2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1_lattice", "x2_lattice", "f1", "f2"])?;
        for j in -self.radius..=self.radius {
            for i in -self.radius..=self.radius {
                let v = self.values[self.index([i, j])];
                w.serialize((i, j, v[0], v[1]))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `x1,x2,curl` keyed by the rectangle's SW corner.
    pub fn write_curl_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "x2", "curl"])?;
        for j in -self.radius..self.radius {
            for i in -self.radius..self.radius {
                w.serialize((i, j, self.curl_unchecked([i, j])))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// The eight-term discrete curl of one elementary rectangle.
#[inline]
fn curl_formula(sw: [f64; 2], se: [f64; 2], ne: [f64; 2], nw: [f64; 2], h: f64) -> f64 {
    ((sw[0] + se[0] + se[1] + ne[1]) - (ne[0] + nw[0] + nw[1] + sw[1])) / (2.0 * h)
}

/// `(h/2) Σ μ_r (f^{j_r}(x_r) + f^{j_r}(x_r + μ_r e_{j_r}))`.
pub fn trapezoidal_sum(f: &GridVectorField, path: &DiscretePath) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for e in path.edges() {
        let a = f.get(e.from)?[e.axis];
        let b = f.get(e.to())?[e.axis];
        acc.add(e.sign as f64 * (a + b));
    }
    Ok(0.5 * f.mesh() * acc.value())
}

/// Discrete curl of the rectangle with SW corner `x`.
pub fn discrete_curl(f: &GridVectorField, x: [i64; 2]) -> Result<f64> {
    let sw = f.get(x)?;
    let se = f.get([x[0] + 1, x[1]])?;
    let ne = f.get([x[0] + 1, x[1] + 1])?;
    let nw = f.get([x[0], x[1] + 1])?;
    Ok(curl_formula(sw, se, ne, nw, f.mesh()))
}

/// Discretely conservative surrogate of `∇g` on `a + hℤ²`, `|x|_∞ ≤ R`.
///
/// The axes carry `∇g` exactly. Each quadrant is filled layer by layer
/// (`r = min(|x1|, |x2|)`), sweeping outward along the first axis and then
/// along the second; every rectangle gets its vertex farthest from the
/// origin from `∇g`, corrected so that its discrete curl vanishes.
pub fn conservative_modify<G: GridScalarSpec>(g: &G, a: [f64; 2], h: f64, radius: i64) -> GridVectorField {
    let side = (2 * radius + 1) as usize;
    let idx = |x: [i64; 2]| ((x[0] + radius) + (x[1] + radius) * side as i64) as usize;
    let at = |x: [i64; 2]| [a[0] + h * x[0] as f64, a[1] + h * x[1] as f64];
    let mut values = vec![[0.0; 2]; side * side];
    for k in -radius..=radius {
        values[idx([k, 0])] = g.gradient(at([k, 0]));
        values[idx([0, k])] = g.gradient(at([0, k]));
    }
    for (s1, s2) in [(1i64, 1i64), (-1, 1), (-1, -1), (1, -1)] {
        // Curl coefficients of the new vertex: f1 enters with +1 on the south
        // side, f2 with +1 on the east side.
        let sigma = [-s2 as f64, s1 as f64];
        let fill = |i: i64, j: i64, values: &mut Vec<[f64; 2]>| {
            let new = [s1 * (i + 1), s2 * (j + 1)];
            let sw = [(s1 * i).min(s1 * (i + 1)), (s2 * j).min(s2 * (j + 1))];
            let corners = [sw, [sw[0] + 1, sw[1]], [sw[0] + 1, sw[1] + 1], [sw[0], sw[1] + 1]];
            let grad = g.gradient(at(new));
            let v: Vec<[f64; 2]> = corners.iter().map(|&c| if c == new { grad } else { values[idx(c)] }).collect();
            let curl_g = curl_formula(v[0], v[1], v[2], v[3], h);
            values[idx(new)] = [grad[0] - h * curl_g * sigma[0], grad[1] - h * curl_g * sigma[1]];
        };
        for r in 0..radius {
            for k in r..radius {
                fill(k, r, &mut values);
            }
            for k in r + 1..radius {
                fill(r, k, &mut values);
            }
        }
    }
    GridVectorField::from_values(a, h, radius, values)
}

/// `T_a^b`: trapezoidal sum along the L-path from the origin to `b`.
pub fn discrete_potential(f: &GridVectorField, b: [i64; 2]) -> Result<f64> {
    if !f.is_conservative() {
        return Err(Error::NotConservative { max_curl: f.max_abs_curl() });
    }
    trapezoidal_sum(f, &DiscretePath::l_path([0, 0], b))
}

/// Trapezoid error on one interval, with its `h³/12 · max|φ''|` envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidError {
    pub lower: f64,
    pub upper: f64,
    /// `∫_x^{x+h} φ − h(φ(x) + φ(x+h))/2`.
    pub actual: f64,
    pub contained: bool,
}

/// Envelope `[−h³/12 · M, h³/12 · M]`, `M = max |φ''|` sampled at 1025
/// points of `[x, x+h]`, together with the actual error (adaptive quadrature).
pub fn trapezoid_error_bound(phi: impl Fn(f64) -> f64, phi2: impl Fn(f64) -> f64, x: f64, h: f64) -> TrapezoidError {
    let m = (0..=1024).map(|i| phi2(x + h * i as f64 / 1024.0).abs()).fold(0.0, f64::max);
    let half = h * h * h / 12.0 * m;
    let integral = quadrature::integrate(&phi, x, x + h, 1e-15 * h, 1e-14).value;
    let actual = integral - 0.5 * h * (phi(x) + phi(x + h));
    let slack = 1e-13 * h * (phi(x).abs() + phi(x + h).abs()) + 1e-300;
    TrapezoidError { lower: -half, upper: half, actual, contained: actual.abs() <= half + slack }
}

/// Sampled modulus of continuity `ε(h)` of the third partials.
///
/// `D111 g` and `D222 g` are sampled on a grid of spacing `h/4` over the disc
/// `|x − a| ≤ R + h`; the result is the largest difference of one partial
/// between two samples at distance at most `h√2`.
pub fn epsilon_estimate<G: GridScalarSpec>(g: &G, a: [f64; 2], h: f64, radius: f64) -> f64 {
    let s = h / 4.0;
    let reach = radius + h;
    let k = (reach / s).ceil() as i64;
    let n = (2 * k + 1) as usize;
    const LAG: usize = 5; // floor(4√2)
    let half_width = |dy: usize| ((32 - (dy * dy) as i64) as f64).sqrt().floor() as usize;

    let row = |yi: i64| -> [Vec<f64>; 2] {
        let mut out = [vec![f64::NAN; n], vec![f64::NAN; n]];
        let dy = yi as f64 * s;
        for (c, xi) in (-k..=k).enumerate() {
            let dx = xi as f64 * s;
            if dx * dx + dy * dy <= reach * reach {
                let t = g.third_partials([a[0] + dx, a[1] + dy]);
                out[0][c] = t[0];
                out[1][c] = t[1];
            }
        }
        out
    };

    let mut ring: std::collections::VecDeque<[Vec<f64>; 2]> = std::collections::VecDeque::new();
    let mut eps = 0.0f64;
    let (mut wmax, mut wmin) = (vec![0.0; n], vec![0.0; n]);
    for yi in -k..=k {
        ring.push_back(row(yi));
        if ring.len() > LAG + 1 {
            ring.pop_front();
        }
        let newest = ring.len() - 1;
        for dy in 0..ring.len() {
            let w = half_width(dy);
            for (fresh, base) in ring[newest].iter().zip(&ring[newest - dy]) {
                sliding_extrema(fresh, w, &mut wmax, &mut wmin);
                for c in 0..n {
                    let v = base[c];
                    if v.is_nan() {
                        continue;
                    }
                    if !wmax[c].is_nan() {
                        eps = eps.max(wmax[c] - v).max(v - wmin[c]);
                    }
                }
            }
        }
    }
    eps
}

/// Max and min of `row[c−w ..= c+w]` for every `c`, ignoring NaN.
fn sliding_extrema(row: &[f64], w: usize, out_max: &mut [f64], out_min: &mut [f64]) {
    let n = row.len();
    let len = 2 * w + 1;
    let padded: Vec<f64> =
        std::iter::repeat_n(f64::NAN, w).chain(row.iter().copied()).chain(std::iter::repeat_n(f64::NAN, w)).collect();
    let m = padded.len();
    let (mut pmax, mut pmin) = (vec![f64::NAN; m], vec![f64::NAN; m]);
    let (mut smax, mut smin) = (vec![f64::NAN; m], vec![f64::NAN; m]);
    for i in 0..m {
        if i % len == 0 {
            pmax[i] = padded[i];
            pmin[i] = padded[i];
        } else {
            pmax[i] = pmax[i - 1].max(padded[i]);
            pmin[i] = pmin[i - 1].min(padded[i]);
        }
    }
    for i in (0..m).rev() {
        if i == m - 1 || (i + 1) % len == 0 {
            smax[i] = padded[i];
            smin[i] = padded[i];
        } else {
            smax[i] = smax[i + 1].max(padded[i]);
            smin[i] = smin[i + 1].min(padded[i]);
        }
    }
    for c in 0..n {
        // window in padded coordinates: [c, c + len − 1]
        let e = c + len - 1;
        out_max[c] = smax[c].max(pmax[e]);
        out_min[c] = smin[c].min(pmin[e]);
    }
}
