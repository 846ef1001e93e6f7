//! Error norms, oscillation indicators and convergence-rate estimation.

use crate::error::{Error, Result};
use crate::problems::{Discretization, SolutionField};
use crate::quadrature::gauss_on_interval;
use crate::splines::SplineSpace;

/// Relative L2 error of a time-only discrete solution against a reference
/// function, restricted to `region`. Spans partially inside the region are
/// integrated over the intersection with a sub-span Gauss rule; quadrature
/// uses one more point than assembly to stay clear of superconvergence
/// artifacts.
pub fn relative_l2_error_time(
    disc: &Discretization,
    coeffs: &[f64],
    reference: &dyn Fn(f64) -> f64,
    region: (f64, f64),
) -> Result<f64> {
    let space = &disc.time;
    let q = space.degree() + 2;
    let field = SolutionField::new(disc, coeffs);
    let (mut err2, mut ref2) = (0.0_f64, 0.0_f64);
    for (x, w) in region_quadrature(space, region, q)? {
        let u = field.value(&[], x)?;
        let ue = reference(x);
        err2 += w * (u - ue) * (u - ue);
        ref2 += w * ue * ue;
    }
    if ref2 <= 0.0 {
        return Err(Error::InvalidParameter(
            "reference solution has zero L2 norm on the region".into(),
        ));
    }
    Ok((err2 / ref2).sqrt())
}

/// Quadrature points and weights over the intersections of the knot spans
/// with `region`.
fn region_quadrature(space: &SplineSpace, region: (f64, f64), q: usize) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = region;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "empty error region [{lo}, {hi}]"
        )));
    }
    let mut out = Vec::new();
    for (_, a, b) in space.knot_vector().spans() {
        let left = a.max(lo);
        let right = b.min(hi);
        if left < right {
            let (pts, wts) = gauss_on_interval(left, right, q)?;
            out.extend(pts.into_iter().zip(wts));
        }
    }
    Ok(out)
}

/// Oscillation indicator: positive overshoot above the reference maximum plus
/// negative undershoot below the reference minimum, sampled densely
/// (degree + 2 equispaced points per span plus the Gauss nodes).
pub fn overshoot_indicator(
    disc: &Discretization,
    coeffs: &[f64],
    reference: &dyn Fn(f64) -> f64,
    region: (f64, f64),
) -> Result<f64> {
    let field = SolutionField::new(disc, coeffs);
    let p = disc.degree();
    let breaks = disc.time.knot_vector().breakpoints();
    let cells = crate::stabilization::sample_points_1d(&breaks, p + 2, p + 1)?;
    let mut max_h = f64::NEG_INFINITY;
    let mut min_h = f64::INFINITY;
    let mut max_e = f64::NEG_INFINITY;
    let mut min_e = f64::INFINITY;
    let mut seen = false;
    for pts in &cells {
        for &t in pts {
            if t < region.0 || t > region.1 {
                continue;
            }
            seen = true;
            let u = field.value(&[], t)?;
            let ue = reference(t);
            max_h = max_h.max(u);
            min_h = min_h.min(u);
            max_e = max_e.max(ue);
            min_e = min_e.min(ue);
        }
    }
    if !seen {
        return Err(Error::InvalidParameter(
            "overshoot region contains no sample points".into(),
        ));
    }
    Ok((max_h - max_e).max(0.0) + (min_e - min_h).max(0.0))
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceLevel {
    pub h: f64,
    pub error: f64,
    /// Order against the previous level; NaN (with `degenerate`) when the
    /// errors do not support a rate.
    pub order: f64,
    pub degenerate: bool,
}

/// Per-degree convergence record.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceRecord {
    pub degree: usize,
    pub levels: Vec<ConvergenceLevel>,
}

/// Pairwise orders `log(e_i/e_{i+1}) / log(h_i/h_{i+1})` for strictly
/// decreasing h.
pub fn estimate_orders(pairs: &[(f64, f64)]) -> Result<Vec<ConvergenceLevel>> {
    if pairs.len() < 2 {
        return Err(Error::InvalidParameter(
            "order estimation needs at least two levels".into(),
        ));
    }
    if pairs.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::InvalidParameter(
            "mesh sizes must be strictly decreasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (i, &(h, e)) in pairs.iter().enumerate() {
        let (order, degenerate) = if i == 0 {
            (f64::NAN, true)
        } else {
            let (hp, ep) = pairs[i - 1];
            if e <= 0.0 || ep <= 0.0 {
                (f64::NAN, true)
            } else if e == ep {
                (0.0, false)
            } else {
                ((ep / e).ln() / (hp / h).ln(), false)
            }
        };
        out.push(ConvergenceLevel {
            h,
            error: e,
            order,
            degenerate,
        });
    }
    Ok(out)
}

/// Least-squares slope of log(error) against log(h) over the last `window`
/// levels.
pub fn least_squares_order(pairs: &[(f64, f64)], window: usize) -> f64 {
    let tail: Vec<_> = pairs
        .iter()
        .rev()
        .take(window)
        .filter(|&&(_, e)| e > 0.0)
        .collect();
    if tail.len() < 2 {
        return f64::NAN;
    }
    let n = tail.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &&(h, e) in &tail {
        let x = h.ln();
        let y = e.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
