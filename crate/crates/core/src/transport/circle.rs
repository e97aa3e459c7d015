//! Exact quadratic transport on the circle `ℝ/ℤ` through lifted quantile functions.
//!
//! A probability measure on the circle is represented by its quantile
//! function on `[0, 1)`, lifted to `ℝ` by `Q(u + 1) = Q(u) + 1`. Atoms are
//! flat pieces, densities that are constant on cells give sloped pieces.
//! For two such functions, `W₂² = min_θ ∫₀¹ (A(u + θ) − B(u))² du`, a convex
//! function of the cut parameter `θ`.

use super::DiscreteMeasure1D;
use crate::error::{Error, Result};

/// Below this many pieces (both sides together) the cut is located by a scan.
pub const SCAN_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    u0: f64,
    u1: f64,
    x0: f64,
    x1: f64,
}

impl Piece {
    #[inline]
    fn at(&self, u: f64) -> f64 {
        if self.x0 == self.x1 {
            self.x0
        } else {
            self.x0 + (self.x1 - self.x0) * (u - self.u0) / (self.u1 - self.u0)
        }
    }
}

/// Lifted quantile function made of linear pieces covering `[0, 1)`.
#[derive(Debug, Clone)]
pub struct CircleQuantile {
    pieces: Vec<Piece>,
}

impl CircleQuantile {
    pub fn from_discrete(m: &DiscreteMeasure1D) -> Self {
        let mut pieces = Vec::with_capacity(m.len());
        let mut c = 0.0;
        let last = m.len() - 1;
        for (i, (&x, &w)) in m.atoms().iter().zip(m.weights()).enumerate() {
            let next = if i == last { 1.0 } else { c + w };
            pieces.push(Piece { u0: c, u1: next, x0: x, x1: x });
            c = next;
        }
        Self { pieces }
    }

    /// Density constant on each of `n` equal cells `[j/n, (j+1)/n)` with the given masses.
    pub fn from_cell_masses(masses: &[f64]) -> Result<Self> {
        let n = masses.len();
        if n == 0 {
            return Err(Error::EmptySupport);
        }
        if let Some(&m) = masses.iter().find(|m| !(**m >= 0.0)) {
            return Err(Error::InvalidDensity(format!("negative cell mass {m}")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(total));
        }
        let h = 1.0 / n as f64;
        let mut pieces = Vec::with_capacity(n);
        let mut c = 0.0;
        for (j, &m) in masses.iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            let next = c + m / total;
            pieces.push(Piece { u0: c, u1: next, x0: j as f64 * h, x1: (j + 1) as f64 * h });
            c = next;
        }
        pieces.last_mut().expect("positive total").u1 = 1.0;
        Ok(Self { pieces })
    }

    pub fn uniform() -> Self {
        Self { pieces: vec![Piece { u0: 0.0, u1: 1.0, x0: 0.0, x1: 1.0 }] }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// `∫₀¹ Q(u) du`.
    pub fn mean(&self) -> f64 {
        self.pieces.iter().map(|p| 0.5 * (p.x0 + p.x1) * (p.u1 - p.u0)).sum()
    }

    fn locate(&self, u: f64) -> usize {
        self.pieces.partition_point(|p| p.u1 <= u).min(self.pieces.len() - 1)
    }

    /// `∫₀¹ (A(u + θ) − B(u))² du`.
    pub fn cut_cost(&self, other: &CircleQuantile, theta: f64) -> f64 {
        let k0 = theta.floor();
        let phi = theta - k0;
        let a = &self.pieces;
        let na = a.len();
        let start = self.locate(phi);
        // shifted pieces of A in u-coordinates, in order over [0, 1)
        let shifted = |q: usize| -> (f64, Piece) {
            let idx = (start + q) % na;
            let wraps = start + q >= na;
            let off = if wraps { 1.0 - phi } else { -phi };
            let lift = if wraps { k0 + 1.0 } else { k0 };
            let p = a[idx];
            let hi = if q == na { 1.0 } else { (p.u1 + off).min(1.0) };
            let moved = Piece { u0: p.u0 + off, u1: p.u1 + off, x0: p.x0 + lift, x1: p.x1 + lift };
            (hi, moved)
        };
        let b = &other.pieces;
        let (mut qa, mut qb) = (0usize, 0usize);
        let (mut hi_a, mut pa) = shifted(0);
        let mut s = 0.0;
        let mut pos = 0.0;
        loop {
            let pb = b[qb];
            let hi_b = if qb + 1 == b.len() { 1.0 } else { pb.u1 };
            let end = hi_a.min(hi_b);
            if end > pos {
                let e0 = pa.at(pos) - pb.at(pos);
                let e1 = pa.at(end) - pb.at(end);
                s += (end - pos) * (e0 * e0 + e0 * e1 + e1 * e1) / 3.0;
                pos = end;
            }
            if pos >= 1.0 {
                break;
            }
            if hi_a <= pos {
                qa += 1;
                if qa > na {
                    break;
                }
                (hi_a, pa) = shifted(qa);
            }
            if hi_b <= pos {
                qb += 1;
                if qb >= b.len() {
                    break;
                }
            }
        }
        s
    }

    fn bracket(&self, other: &CircleQuantile) -> (f64, f64) {
        let c = other.mean() - self.mean();
        (c - 1.5, c + 1.5)
    }

    /// Cut parameters where breakpoints of both functions align.
    fn candidates(&self, other: &CircleQuantile) -> Vec<f64> {
        let (lo, hi) = self.bracket(other);
        let mut ca: Vec<f64> = self.pieces.iter().map(|p| p.u0).collect();
        ca.push(1.0);
        let mut cb: Vec<f64> = other.pieces.iter().map(|p| p.u0).collect();
        cb.push(1.0);
        let mut out = Vec::with_capacity(ca.len() * cb.len() * 3);
        for &x in &ca {
            for &y in &cb {
                let base = x - y;
                let k_lo = (lo - base).ceil() as i64;
                let k_hi = (hi - base).floor() as i64;
                for k in k_lo..=k_hi {
                    out.push(base + k as f64);
                }
            }
        }
        out.push(lo);
        out.push(hi);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut best = f1.min(f2);
    for _ in 0..200 {
        if hi - lo < 1e-14 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
        best = best.min(f1).min(f2);
    }
    best.min(f(0.5 * (lo + hi)))
}

/// Cut located by golden-section search on the convex cut cost.
pub fn w2_circle_golden(a: &CircleQuantile, b: &CircleQuantile) -> f64 {
    let (lo, hi) = a.bracket(b);
    golden(|t| a.cut_cost(b, t), lo, hi).max(0.0)
}

/// Cut located by scanning all aligned-breakpoint cuts, refined between
/// the neighbours of the best one.
pub fn w2_circle_scan(a: &CircleQuantile, b: &CircleQuantile) -> f64 {
    let cands = a.candidates(b);
    let costs: Vec<f64> = cands.iter().map(|&t| a.cut_cost(b, t)).collect();
    let (i, &best) = costs
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty candidate set");
    let lo = cands[i.saturating_sub(1)];
    let hi = cands[(i + 1).min(cands.len() - 1)];
    best.min(golden(|t| a.cut_cost(b, t), lo, hi)).max(0.0)
}

/// `W₂²` between two circle measures given by quantile functions.
pub fn w2_circle_quantiles(a: &CircleQuantile, b: &CircleQuantile) -> f64 {
    if a.len() + b.len() <= SCAN_LIMIT {
        w2_circle_scan(a, b)
    } else {
        w2_circle_golden(a, b)
    }
}

/// Exact `W₂²` between discrete measures under the circle geodesic distance.
pub fn w2_circle_exact(a: &DiscreteMeasure1D, b: &DiscreteMeasure1D) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(w2_circle_quantiles(&CircleQuantile::from_discrete(a), &CircleQuantile::from_discrete(b)))
}

/// `W₂²` against Lebesgue measure: `Var_u(Q(u) − u)`, with no cut search.
pub fn w2_to_uniform(a: &CircleQuantile) -> f64 {
    // on each piece Q(u) − u is linear; integrate its moments exactly
    let moment = |shift: f64| -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for p in &a.pieces {
            let e0 = p.x0 - p.u0 - shift;
            let e1 = p.at(p.u1) - p.u1 - shift;
            let w = p.u1 - p.u0;
            m1 += w * 0.5 * (e0 + e1);
            m2 += w * (e0 * e0 + e0 * e1 + e1 * e1) / 3.0;
        }
        (m1, m2)
    };
    let (m, _) = moment(0.0);
    let (m1, m2) = moment(m);
    (m2 - m1 * m1).max(0.0)
}

/// Exact `W₂²(a, Lebesgue)` for a discrete measure.
pub fn w2_discrete_to_uniform(a: &DiscreteMeasure1D) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(w2_to_uniform(&CircleQuantile::from_discrete(a)))
}
