//! Per-span Gauss-Legendre quadrature.

use crate::error::{Error, Result};
use crate::splines::KnotVector;

/// Gauss rule on one knot span, in physical coordinates.
#[derive(Debug, Clone)]
pub struct SpanRule {
    pub span_index: usize,
    pub left: f64,
    pub right: f64,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// A per-span quadrature rule over a whole knot vector.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub spans: Vec<SpanRule>,
}

impl QuadratureRule {
    pub fn total_points(&self) -> usize {
        self.spans.iter().map(|s| s.points.len()).sum()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut sum = 0.0;
        for span in &self.spans {
            for (&x, &w) in span.points.iter().zip(&span.weights) {
                sum += w * f(x);
            }
        }
        sum
    }
}

/// Reference Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are Newton-refined roots of the Legendre polynomial, mirrored so the
/// rule is exactly symmetric.
pub fn gauss_legendre(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 {
        return Err(Error::InvalidParameter(
            "quadrature order must be >= 1".into(),
        ));
    }
    let mut nodes = vec![0.0_f64; q];
    let mut weights = vec![0.0_f64; q];
    let m = q.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(q, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x.abs();
        nodes[q - 1 - i] = x.abs();
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss rule with `q` points on an arbitrary interval.
pub fn gauss_on_interval(a: f64, b: f64, q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nodes, weights) = gauss_legendre(q)?;
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    Ok((
        nodes.iter().map(|&x| mid + half * x).collect(),
        weights.iter().map(|&w| w * half).collect(),
    ))
}

/// Per-span Gauss rule with `q` points on each nonempty span of `kv`.
pub fn gauss_rule(kv: &KnotVector, q: usize) -> Result<QuadratureRule> {
    let mut spans = Vec::new();
    for (idx, left, right) in kv.spans() {
        let (points, weights) = gauss_on_interval(left, right, q)?;
        spans.push(SpanRule {
            span_index: idx,
            left,
            right,
            points,
            weights,
        });
    }
    Ok(QuadratureRule { spans })
}
