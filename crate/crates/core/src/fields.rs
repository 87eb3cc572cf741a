//! Smooth scalar test functions with hand-coded derivatives.

use serde::{Deserialize, Serialize};

use crate::grid::GridScalarSpec;

/// `sin x1 · cos x2`. Its trapezoidal gradient is exactly curl free on
/// every grid, so the conservative modification leaves it unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SinCos;

impl GridScalarSpec for SinCos {
    fn value(&self, x: [f64; 2]) -> f64 {
        x[0].sin() * x[1].cos()
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].cos() * x[1].cos(), -x[0].sin() * x[1].sin()]
    }
    fn second_partials(&self, x: [f64; 2]) -> [f64; 2] {
        let v = self.value(x);
        [-v, -v]
    }
    fn third_partials(&self, x: [f64; 2]) -> [f64; 2] {
        [-x[0].cos() * x[1].cos(), x[0].sin() * x[1].sin()]
    }
}

/// `x1³ − 2 x1² x2 + x2³/2 + x1 x2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cubic;

impl GridScalarSpec for Cubic {
    fn value(&self, x: [f64; 2]) -> f64 {
        x[0].powi(3) - 2.0 * x[0] * x[0] * x[1] + 0.5 * x[1].powi(3) + x[0] * x[1]
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        [3.0 * x[0] * x[0] - 4.0 * x[0] * x[1] + x[1], -2.0 * x[0] * x[0] + 1.5 * x[1] * x[1] + x[0]]
    }
    fn second_partials(&self, x: [f64; 2]) -> [f64; 2] {
        [6.0 * x[0] - 4.0 * x[1], 3.0 * x[1]]
    }
    fn third_partials(&self, _: [f64; 2]) -> [f64; 2] {
        [6.0, 3.0]
    }
}

/// `e^{x1/2} sin x2 + 0.3 cos(x1 x2)`: a field whose gradient has genuine
/// discrete curl.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExpSin;

impl GridScalarSpec for ExpSin {
    fn value(&self, x: [f64; 2]) -> f64 {
        (0.5 * x[0]).exp() * x[1].sin() + 0.3 * (x[0] * x[1]).cos()
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let e = (0.5 * x[0]).exp();
        let s = (x[0] * x[1]).sin();
        [0.5 * e * x[1].sin() - 0.3 * x[1] * s, e * x[1].cos() - 0.3 * x[0] * s]
    }
    fn second_partials(&self, x: [f64; 2]) -> [f64; 2] {
        let e = (0.5 * x[0]).exp();
        let c = (x[0] * x[1]).cos();
        [0.25 * e * x[1].sin() - 0.3 * x[1] * x[1] * c, -e * x[1].sin() - 0.3 * x[0] * x[0] * c]
    }
    fn third_partials(&self, x: [f64; 2]) -> [f64; 2] {
        let e = (0.5 * x[0]).exp();
        let s = (x[0] * x[1]).sin();
        [0.125 * e * x[1].sin() + 0.3 * x[1].powi(3) * s, -e * x[1].cos() + 0.3 * x[0].powi(3) * s]
    }
}

/// `exp(−|x|²)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gaussian;

impl GridScalarSpec for Gaussian {
    fn value(&self, x: [f64; 2]) -> f64 {
        (-(x[0] * x[0] + x[1] * x[1])).exp()
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.value(x);
        [-2.0 * x[0] * g, -2.0 * x[1] * g]
    }
    fn second_partials(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.value(x);
        [(4.0 * x[0] * x[0] - 2.0) * g, (4.0 * x[1] * x[1] - 2.0) * g]
    }
    fn third_partials(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.value(x);
        [(12.0 * x[0] - 8.0 * x[0].powi(3)) * g, (12.0 * x[1] - 8.0 * x[1].powi(3)) * g]
    }
}

/// `c + b·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub constant: f64,
    pub slope: [f64; 2],
}

impl GridScalarSpec for Affine {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.constant + self.slope[0] * x[0] + self.slope[1] * x[1]
    }
    fn gradient(&self, _: [f64; 2]) -> [f64; 2] {
        self.slope
    }
    fn second_partials(&self, _: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn third_partials(&self, _: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Random trigonometric potential `Σ a_k sin(b_k·x + c_k)`, used to draw
/// random smooth fields from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigSum {
    pub modes: Vec<TrigMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub amplitude: f64,
    pub wave: [f64; 2],
    pub phase: f64,
}

impl TrigSum {
    /// Modes drawn from the uniform stream `next` (values in `[0, 1)`).
    pub fn random(modes: usize, mut next: impl FnMut() -> f64) -> Self {
        let modes = (0..modes)
            .map(|_| TrigMode {
                amplitude: 2.0 * next() - 1.0,
                wave: [4.0 * next() - 2.0, 4.0 * next() - 2.0],
                phase: std::f64::consts::TAU * next(),
            })
            .collect();
        Self { modes }
    }

    fn fold(&self, x: [f64; 2], mut term: impl FnMut(&TrigMode, f64, f64) -> [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for m in &self.modes {
            let arg = m.wave[0] * x[0] + m.wave[1] * x[1] + m.phase;
            let t = term(m, arg.sin(), arg.cos());
            out[0] += t[0];
            out[1] += t[1];
        }
        out
    }
}

impl GridScalarSpec for TrigSum {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.fold(x, |m, s, _| [m.amplitude * s, 0.0])[0]
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        self.fold(x, |m, _, c| [m.amplitude * m.wave[0] * c, m.amplitude * m.wave[1] * c])
    }
    fn second_partials(&self, x: [f64; 2]) -> [f64; 2] {
        self.fold(x, |m, s, _| [-m.amplitude * m.wave[0].powi(2) * s, -m.amplitude * m.wave[1].powi(2) * s])
    }
    fn third_partials(&self, x: [f64; 2]) -> [f64; 2] {
        self.fold(x, |m, _, c| [-m.amplitude * m.wave[0].powi(3) * c, -m.amplitude * m.wave[1].powi(3) * c])
    }
}
