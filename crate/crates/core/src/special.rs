//! Decay rates, the scaled incomplete gamma function, the renormalization
//! integral `J_α` and the logarithmic mean.

use crate::error::{invalid, Error, Result};
use crate::quadrature::{self, gauss_laguerre, integrate, integrate_to_infinity, Tolerance};
use statrs::function::gamma::{gamma, ln_gamma};
use std::sync::OnceLock;

/// Smallest admissible horizon for a model with spectral gap `lambda1`.
pub fn horizon_floor(lambda1: f64) -> f64 {
    2.0 * 1f64.max(1.0 / lambda1)
}

/// The decay rate `R_α` as a value type.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RateFunction {
    pub alpha: f64,
}

impl RateFunction {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::AlphaOutOfRange { alpha, range: "(0, inf)" });
        }
        Ok(Self { alpha })
    }

    /// `R_α(t)` without the horizon check.
    pub fn eval(&self, t: f64) -> f64 {
        if is_half(self.alpha) {
            t.ln() / t
        } else if self.alpha < 0.5 {
            t.powf(-2.0 * self.alpha)
        } else {
            1.0 / t
        }
    }
}

/// Exponents within 1e-12 of one half use the logarithmic branch.
pub fn is_half(alpha: f64) -> bool {
    (alpha - 0.5).abs() < 1e-12
}

/// `R_α(t)` on a model whose horizon floor is 2 (spectral gap at least 1).
pub fn decay_rate(alpha: f64, t: f64) -> Result<f64> {
    decay_rate_with_floor(alpha, t, 2.0)
}

pub fn decay_rate_with_floor(alpha: f64, t: f64, t_min: f64) -> Result<f64> {
    let rate = RateFunction::new(alpha)?;
    if !(t >= t_min) {
        return Err(Error::HorizonTooShort { t, t_min });
    }
    Ok(rate.eval(t))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::AlphaOutOfRange { alpha, range: "(0, inf)" });
    }
    Ok(())
}

/// Scaled upper incomplete gamma `Ĝ_α(u) = e^u Γ(α, u) = ∫_0^∞ e^{-w}(u+w)^{α-1} dw`.
///
/// Power series below `u = α + 1`, modified Lentz continued fraction above.
pub fn incomplete_gamma_scaled(alpha: f64, u: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(u >= 0.0) {
        return Err(invalid(format!("u = {u} must be nonnegative")));
    }
    Ok(g_hat(alpha, u))
}

/// Unscaled `Γ(α, u) = e^{-u} Ĝ_α(u)`.
pub fn incomplete_gamma_upper(alpha: f64, u: f64) -> Result<f64> {
    Ok((-u).exp() * incomplete_gamma_scaled(alpha, u)?)
}

pub(crate) fn g_hat(alpha: f64, u: f64) -> f64 {
    if u == 0.0 {
        return gamma(alpha);
    }
    if alpha == 1.0 {
        return 1.0;
    }
    if u < alpha + 1.0 {
        // e^u Γ(α) - u^α Σ u^n / (α)_{n+1}
        let mut term = 1.0 / alpha;
        let mut sum = term;
        let mut a = alpha;
        for _ in 0..1000 {
            a += 1.0;
            term *= u / a;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        u.exp() * gamma(alpha) - u.powf(alpha) * sum
    } else {
        const TINY: f64 = 1e-300;
        let mut b = u + 1.0 - alpha;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - alpha);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        u.powf(alpha) * h
    }
}

fn laguerre64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_laguerre(64))
}

/// `Ĝ_α(u)` by 64-node Gauss–Laguerre quadrature of `∫ e^{-w}(u+w)^{α-1} dw`.
///
/// Accurate to 1e-10 once `u` is a few tens; near `u = 0` with `α < 1`
/// the integrand is singular and the rule loses accuracy.
pub fn incomplete_gamma_scaled_laguerre(alpha: f64, u: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(u >= 0.0) {
        return Err(invalid(format!("u = {u} must be nonnegative")));
    }
    let (x, w) = laguerre64();
    Ok(x.iter().zip(w).map(|(xi, wi)| wi * (u + xi).powf(alpha - 1.0)).sum())
}

/// `J_α(∞) = Γ(2α) Γ(α) Γ(1-2α) / Γ(1-α)` for `α < 1/2`.
pub fn lemma31_limit(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) || is_half(alpha) {
        return Err(Error::AlphaOutOfRange { alpha, range: "(0, 1/2)" });
    }
    Ok((ln_gamma(2.0 * alpha) + ln_gamma(alpha) + ln_gamma(1.0 - 2.0 * alpha)
        - ln_gamma(1.0 - alpha))
    .exp())
}

/// `J_α(y) = ∫_0^y u^{α-1}[Ĝ_α(u) - e^{u-y} Ĝ_α(y)] du`.
pub fn lemma31_integral(alpha: f64, y: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(y >= 2.0) {
        return Err(invalid(format!("y = {y} must be at least 2")));
    }
    damped_lemma31(alpha, y, 0.0)
}

/// `∫_0^y e^{-ρz} z^{α-1}[Ĝ_α(z) - e^{z-y} Ĝ_α(y)] dz` for `y ∈ (0, ∞]`, `ρ ≥ 0`.
///
/// `ρ = 0` recovers `J_α(y)`; `y = ∞` drops the boundary term.
pub fn damped_lemma31(alpha: f64, y: f64, rho: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(y > 0.0) || !(rho >= 0.0) {
        return Err(invalid(format!("need y > 0 and rho >= 0, got y = {y}, rho = {rho}")));
    }
    let infinite = y.is_infinite();
    if infinite && rho == 0.0 {
        return lemma31_limit(alpha);
    }
    let gy = if infinite { 0.0 } else { g_hat(alpha, y) };
    let bracket = |z: f64| {
        let tail = if infinite { 0.0 } else { (z - y).exp() * gy };
        g_hat(alpha, z) - tail
    };
    let tol = Tolerance { abs: 1e-15, rel: 1e-13, max_intervals: 400 };

    let head_end = if infinite { 1.0 } else { y.min(1.0) };
    let head = if alpha < 1.0 {
        let inv = 1.0 / alpha;
        integrate(
            |w: f64| {
                let z = w.powf(inv);
                (-rho * z).exp() * bracket(z) * inv
            },
            0.0,
            head_end.powf(alpha),
            tol,
        )
        .value
    } else {
        integrate(
            |z: f64| (-rho * z).exp() * z.powf(alpha - 1.0) * bracket(z),
            0.0,
            head_end,
            tol,
        )
        .value
    };
    if head_end >= y {
        return Ok(head);
    }

    let body = |z: f64| (-rho * z).exp() * z.powf(alpha - 1.0) * bracket(z);
    let upper = if infinite {
        // beyond 60/ρ the damped integrand is below e^{-60} of its head
        (60.0 / rho).max(2.0)
    } else {
        y
    };
    let mut points = quadrature::geometric_points(1.0, upper, 3);
    if !infinite && y > 2.0 {
        // resolve the unit-width boundary layer at z = y
        let mut k = 1.0;
        while k < 0.5 * y {
            points.push(y - k);
            k *= 2.0;
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
    }
    let mut total = head + quadrature::integrate_panels(body, &points, tol).value;
    if infinite {
        total += integrate_to_infinity(body, upper, tol).value;
    }
    Ok(total)
}

/// `∬_{0≤u≤v≤y} e^{-(v-u)} u^{α-1} v^{α-1} du dv` by nested adaptive quadrature.
///
/// Independent of [`lemma31_integral`]; for `α < 1` the substitution
/// `p = u^α`, `q = v^α` removes both endpoint singularities.
pub fn lemma31_bruteforce(alpha: f64, y: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(y > 0.0 && y <= 50.0) {
        return Err(invalid(format!("y = {y} must lie in (0, 50]")));
    }
    let tol = Tolerance { abs: 1e-13, rel: 1e-11, max_intervals: 500 };
    let value = if alpha < 1.0 {
        let inv = 1.0 / alpha;
        let outer = |q: f64| {
            let vq = q.powf(inv);
            integrate(|p: f64| (p.powf(inv) - vq).exp(), 0.0, q, tol).value
        };
        integrate(outer, 0.0, y.powf(alpha), tol).value / (alpha * alpha)
    } else {
        let outer = |v: f64| {
            let inner =
                integrate(|u: f64| (u - v).exp() * u.powf(alpha - 1.0), 0.0, v, tol).value;
            inner * v.powf(alpha - 1.0)
        };
        let mut pts = quadrature::geometric_points(1.0, y.max(2.0), 4);
        pts.insert(0, 0.0);
        pts.retain(|p| *p <= y);
        if *pts.last().unwrap() < y {
            pts.push(y);
        }
        quadrature::integrate_panels(outer, &pts, tol).value
    };
    Ok(value)
}

/// Logarithmic mean `M(a, b) = (a - b)/(ln a - ln b)`, zero if either argument is zero.
pub fn log_mean(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(invalid(format!("log_mean needs nonnegative inputs, got ({a}, {b})")));
    }
    Ok(log_mean_unchecked(a, b))
}

pub(crate) fn log_mean_unchecked(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    if a == b {
        return a;
    }
    if (a - b).abs() < 1e-8 * a.max(b) {
        let d = (b - a) / a;
        return a * (1.0 + d / 2.0 - d * d / 12.0);
    }
    (a - b) / (a.ln() - b.ln())
}
