//! Gauss-Legendre rules on segments and collapsed (Duffy) rules on triangles.

use crate::Vec2;

/// Gauss-Legendre nodes and weights on `[0, 1]` with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        if d != 0.0 {
            dp = d;
        }
        let wt = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = 0.5 * (1.0 - t);
        x[n - 1 - i] = 0.5 * (1.0 + t);
        w[i] = 0.5 * wt;
        w[n - 1 - i] = 0.5 * wt;
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// Quadrature rule on the reference triangle `(0,0), (1,0), (0,1)`.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Collapsed Gauss rule exact for polynomials of total degree `order`.
    pub fn new(order: usize) -> Self {
        let m = (order + 2).div_ceil(2).max(1);
        let (x, w) = gauss_legendre(m);
        let mut points = Vec::with_capacity(m * m);
        let mut weights = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let u = x[i];
                points.push([u, x[j] * (1.0 - u)]);
                weights.push(w[i] * w[j] * (1.0 - u));
            }
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points and weights mapped onto the triangle `(a, b, c)`.
    pub fn mapped(&self, a: &Vec2, b: &Vec2, c: &Vec2) -> impl Iterator<Item = (Vec2, f64)> + '_ {
        let (e1, e2) = (b - a, c - a);
        let jac = (e1.x * e2.y - e1.y * e2.x).abs();
        let a = *a;
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(p, &w)| (a + e1 * p[0] + e2 * p[1], w * jac))
    }
}

/// Gauss-Legendre rule on `[0, 1]` exact for polynomials of degree `order`.
#[derive(Debug, Clone)]
pub struct SegmentRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SegmentRule {
    pub fn new(order: usize) -> Self {
        let (points, weights) = gauss_legendre((order + 1).div_ceil(2).max(1));
        Self { points, weights }
    }

    /// Points and weights mapped onto the segment from `a` to `b`.
    pub fn mapped(&self, a: &Vec2, b: &Vec2) -> impl Iterator<Item = (Vec2, f64)> + '_ {
        let (a, t) = (*a, b - a);
        let len = t.norm();
        self.points.iter().zip(&self.weights).map(move |(&s, &w)| (a + t * s, w * len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    // int_T x^a y^b over the reference triangle = a! b! / (a+b+2)!
    fn monomial_moment(a: u32, b: u32) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn gauss_legendre_small_rules() {
        let (x, w) = gauss_legendre(1);
        assert_eq!(x, vec![0.5]);
        assert_eq!(w, vec![1.0]);
        let (x, w) = gauss_legendre(2);
        assert!((x[0] - (0.5 - 0.5 / 3f64.sqrt())).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15);
        for n in 1..20 {
            let (_, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn triangle_moments_are_exact() {
        for order in 0..=10 {
            let rule = TriangleRule::new(order);
            for a in 0..=order as u32 {
                for b in 0..=(order as u32 - a) {
                    let q: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = monomial_moment(a, b);
                    assert!((q - exact).abs() <= 1e-14 * exact.max(1e-3), "order {order} x^{a} y^{b}");
                }
            }
        }
        assert!((TriangleRule::new(1).points.iter().zip(&TriangleRule::new(1).weights).map(|(p, w)| w * p[0]).sum::<f64>() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(TriangleRule::new(8).len(), 25);
    }

    #[test]
    fn segment_moments_are_exact() {
        for order in 0..=12 {
            let rule = SegmentRule::new(order);
            for k in 0..=order as i32 {
                let q: f64 = rule.points.iter().zip(&rule.weights).map(|(s, w)| w * s.powi(k)).sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn mapped_rule_integrates_polynomials(
            ax in -2.0..2.0f64, ay in -2.0..2.0f64,
            bx in -2.0..2.0f64, by in -2.0..2.0f64,
            cx in -2.0..2.0f64, cy in -2.0..2.0f64,
            coef in prop::collection::vec(-1.0..1.0f64, 6),
        ) {
            let (a, b, c) = (Vec2::new(ax, ay), Vec2::new(bx, by), Vec2::new(cx, cy));
            let area = 0.5 * ((b - a).x * (c - a).y - (c - a).x * (b - a).y).abs();
            prop_assume!(area > 1e-3);
            // Quadratic polynomial integrated exactly by the edge-midpoint rule.
            let f = |p: Vec2| coef[0] + coef[1] * p.x + coef[2] * p.y + coef[3] * p.x * p.x + coef[4] * p.x * p.y + coef[5] * p.y * p.y;
            let mids = [(a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5];
            let exact = area / 3.0 * mids.iter().map(|&m| f(m)).sum::<f64>();
            let q: f64 = TriangleRule::new(2).mapped(&a, &b, &c).map(|(p, w)| w * f(p)).sum();
            prop_assert!((q - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
        }
    }
}
