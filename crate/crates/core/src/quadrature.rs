//! Adaptive Gauss–Kronrod quadrature and Gauss–Laguerre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Tolerances and subdivision budget for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-14, rel: 1e-12, max_intervals: 2000 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel, ..Self::default() }
    }
}

/// Integral value with the Kronrod error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut gauss = fc * WG[3];
    let mut kron = fc * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Estimate { value: kron * h, error: ((kron - gauss) * h).abs() }
}

struct Piece {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.est.error == other.est.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.est.error.total_cmp(&other.est.error)
    }
}

/// Globally adaptive 15-point Gauss–Kronrod integration over a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Estimate {
    if a == b {
        return Estimate { value: 0.0, error: 0.0 };
    }
    let first = kronrod(&f, a, b);
    let mut heap = BinaryHeap::new();
    let mut value = first.value;
    let mut error = first.error;
    heap.push(Piece { a, b, est: first });
    while error > tol.abs.max(tol.rel * value.abs()) && heap.len() < tol.max_intervals {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        let left = kronrod(&f, worst.a, mid);
        let right = kronrod(&f, mid, worst.b);
        value += left.value + right.value - worst.est.value;
        error += left.error + right.error - worst.est.error;
        heap.push(Piece { a: worst.a, b: mid, est: left });
        heap.push(Piece { a: mid, b: worst.b, est: right });
    }
    // re-sum to shed the drift of the running updates
    let (mut v, mut e) = (0.0, 0.0);
    for p in heap.iter() {
        v += p.est.value;
        e += p.est.error;
    }
    Estimate { value: v, error: e }
}

/// Integrates over consecutive panels `[points[k], points[k+1]]`.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: Tolerance) -> Estimate {
    let mut total = Estimate { value: 0.0, error: 0.0 };
    for w in points.windows(2) {
        let e = integrate(&f, w[0], w[1], tol);
        total.value += e.value;
        total.error += e.error;
    }
    total
}

/// Integral over `[a, ∞)` through the map `x = a + s/(1-s)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Estimate {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - s;
        let v = f(a + s / q) / (q * q);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, tol)
}

/// Log-spaced breakpoints from `lo` to `hi` (both positive), at most `per_decade` per decade.
pub fn geometric_points(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo);
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    let ratio = (hi / lo).powf(1.0 / n as f64);
    let mut pts = Vec::with_capacity(n + 1);
    let mut x = lo;
    for _ in 0..n {
        pts.push(x);
        x *= ratio;
    }
    pts.push(hi);
    pts
}

/// Nodes and weights of an n-point Gauss–Laguerre rule for weight `e^{-x}`.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n {
        if i == 0 {
            z = 3.0 / (1.0 + 2.4 * nf);
        } else if i == 1 {
            z += 15.0 / (1.0 + 2.5 * nf);
        } else {
            let ai = (i - 1) as f64;
            z += (1.0 + 2.55 * ai) / (1.9 * ai) * (z - x[i - 2]);
        }
        let mut pp = 1.0;
        let mut p2 = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = (nf * p1 - nf * p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs() {
                break;
            }
        }
        x[i] = z;
        w[i] = -1.0 / (pp * nf * p2);
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let e = integrate(|x| x.powi(21) + 3.0 * x.powi(4), -1.0, 2.0, Tolerance::default());
        let exact = (2f64.powi(22) - 1.0) / 22.0 + 3.0 * (32.0 + 1.0) / 5.0;
        assert!((e.value - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn endpoint_singularity() {
        let e = integrate(|x| x.powf(-0.5), 0.0, 1.0, Tolerance::new(1e-13, 1e-12));
        assert!((e.value - 2.0).abs() < 1e-9, "{}", e.value);
    }

    #[test]
    fn semi_infinite_gaussian() {
        let e = integrate_to_infinity(|x| (-x * x).exp(), 0.0, Tolerance::default());
        assert!((e.value - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn laguerre_moments() {
        let (x, w) = gauss_laguerre(64);
        let mut fact = 1.0;
        for k in 0..20 {
            if k > 0 {
                fact *= k as f64;
            }
            let m: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k)).sum();
            assert!((m / fact - 1.0).abs() < 1e-11, "moment {k}: {m}");
        }
    }
}
