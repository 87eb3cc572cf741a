//! Closed-form expectations and the special functions behind them.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialFunctionConfig {
    /// `|x|` at or below which `Ei` uses its power series.
    pub series_switch: f64,
    pub tolerance: f64,
    pub euler: f64,
}

impl Default for SpecialFunctionConfig {
    fn default() -> Self {
        Self { series_switch: 6.0, tolerance: 1e-12, euler: EULER_GAMMA }
    }
}

/// Exponential integral `Ei(x)` for `x < 0`.
pub fn exp_integral_neg(x: f64) -> Result<f64> {
    exp_integral_neg_with(x, &SpecialFunctionConfig::default())
}

pub fn exp_integral_neg_with(x: f64, cfg: &SpecialFunctionConfig) -> Result<f64> {
    if !(x < 0.0) {
        return Err(Error::DomainError(x));
    }
    let z = -x;
    if z <= cfg.series_switch {
        // C + ln|x| + Σ x^k / (k·k!)
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            term *= x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        Ok(cfg.euler + z.ln() + sum)
    } else {
        // Modified Lentz on the continued fraction of E1(z).
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        Ok(-h * (-z).exp())
    }
}

/// Independent quadrature oracle `Ei(x) = −∫_0^1 e^{x/v} / v dv`, `x < 0`.
pub fn exp_integral_quadrature(x: f64) -> Result<f64> {
    if !(x < 0.0) {
        return Err(Error::DomainError(x));
    }
    let f = |v: f64| if v == 0.0 { 0.0 } else { (x / v).exp() / v };
    Ok(-quadrature::integrate(f, 0.0, 1.0, 1e-15, 1e-14).value)
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::NonpositiveTime(t));
    }
    Ok(())
}

/// `E γ(t, y)` of the renormalized self-intersection local time.
pub fn expected_gamma(t: f64, y: [f64; 2]) -> Result<f64> {
    check_time(t)?;
    let r2 = y[0] * y[0] + y[1] * y[1];
    if r2 == 0.0 {
        return Ok(t / (2.0 * PI) * ((2.0 * t).ln() - EULER_GAMMA - 1.0));
    }
    let a = r2 / (2.0 * t);
    let ei = exp_integral_neg(-a)?;
    Ok(t / PI * r2.sqrt().ln() - (r2 + 2.0 * t) / (4.0 * PI) * ei - t / (2.0 * PI) * (-a).exp())
}

/// `E α(t, y) = E γ(t, y) + (t/π) log(1/|y|)` for `y ≠ 0`.
pub fn expected_alpha(t: f64, y: [f64; 2]) -> Result<f64> {
    check_time(t)?;
    let r2 = y[0] * y[0] + y[1] * y[1];
    if r2 == 0.0 {
        return Err(Error::DomainError(0.0));
    }
    let a = r2 / (2.0 * t);
    let ei = exp_integral_neg(-a)?;
    Ok(-(r2 + 2.0 * t) / (4.0 * PI) * ei - t / (2.0 * PI) * (-a).exp())
}

/// `E ∫_0^t log|W(t) − W(u) − y| du`.
pub fn expected_x(t: f64, y: [f64; 2]) -> Result<f64> {
    check_time(t)?;
    let r2 = y[0] * y[0] + y[1] * y[1];
    if r2 == 0.0 {
        return Ok(t / 2.0 * ((2.0 * t).ln() - EULER_GAMMA - 1.0));
    }
    let a = r2 / (2.0 * t);
    let ei = exp_integral_neg(-a)?;
    Ok(t * r2.sqrt().ln() - (r2 + 2.0 * t) / 4.0 * ei - t / 2.0 * (-a).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiMode {
    ClosedForm,
    Quadrature,
}

/// `Ψ(u) = (1/2π) ∫_0^{2π} log(u² + 1 + 2u cos θ) cos θ dθ`, which is `u`
/// for `u ≤ 1` and `1/u` for `u ≥ 1`.
pub fn psi(u: f64, mode: PsiMode) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::NegativeArgument(u));
    }
    Ok(match mode {
        PsiMode::ClosedForm => {
            if u <= 1.0 {
                u
            } else {
                1.0 / u
            }
        }
        PsiMode::Quadrature => {
            if u == 0.0 {
                return Ok(0.0);
            }
            // u² + 1 + 2u cos θ written without cancellation near θ = π.
            let f = |th: f64| {
                let c = (0.5 * th).cos();
                ((u - 1.0) * (u - 1.0) + 4.0 * u * c * c).ln() * th.cos()
            };
            // Symmetric about π, where the integrand is singular at u = 1.
            let half = quadrature::integrate(f, 0.0, PI, 1e-13, 1e-12).value;
            half / PI
        }
    })
}

/// Disc average `(πδ²)^{-1} ∫_{B_δ(0)} (x − z)/|x − z|² dz`, magnitude
/// `Ψ(|x|/δ)/δ` along `x`.
pub fn nabla_phi_disc_average(x: [f64; 2], delta: f64) -> Result<[f64; 2]> {
    if !(delta > 0.0) {
        return Err(Error::NonpositiveDelta(delta));
    }
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let mag = psi(r / delta, PsiMode::ClosedForm)? / delta;
    Ok([mag * x[0] / r, mag * x[1] / r])
}
