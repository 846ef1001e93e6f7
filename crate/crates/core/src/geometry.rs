//! Parametric-to-physical geometry maps with analytic Jacobians and Hessians.

use crate::error::{Error, Result};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Geometry map from the parametric unit cube to the physical domain.
/// Spatial dimension is 1 or 2; the space-time map appends `t -> t` (time is
/// kept in physical units throughout).
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryMap {
    /// Affine map of (0,1) onto (a,b).
    Interval { a: f64, b: f64 },
    /// Exact rational map of (0,1)^2 onto the first-quadrant quarter annulus,
    /// degree 2 in the angular direction.
    QuarterAnnulus { r_in: f64, r_out: f64 },
}

impl GeometryMap {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidParameter(format!(
                "interval [{a}, {b}] is empty"
            )));
        }
        Ok(Self::Interval { a, b })
    }

    pub fn quarter_annulus(r_in: f64, r_out: f64) -> Result<Self> {
        if !(0.0 < r_in && r_in < r_out) {
            return Err(Error::InvalidParameter(format!(
                "quarter annulus radii must satisfy 0 < r_in < r_out, got ({r_in}, {r_out})"
            )));
        }
        Ok(Self::QuarterAnnulus { r_in, r_out })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::QuarterAnnulus { .. } => 2,
        }
    }

    /// Physical coordinates of a parametric point.
    pub fn eval(&self, eta: &[f64]) -> [f64; 2] {
        match *self {
            Self::Interval { a, b } => [a + (b - a) * eta[0], 0.0],
            Self::QuarterAnnulus { r_in, r_out } => {
                let rho = r_in + (r_out - r_in) * eta[0];
                let (c, _, _) = circle_arc(eta[1]);
                [rho * c[0], rho * c[1]]
            }
        }
    }

    /// Jacobian `J[i][a] = dF_i / d eta_a` (only the leading `dim x dim` block
    /// is meaningful).
    pub fn jacobian(&self, eta: &[f64]) -> [[f64; 2]; 2] {
        match *self {
            Self::Interval { a, b } => [[b - a, 0.0], [0.0, 0.0]],
            Self::QuarterAnnulus { r_in, r_out } => {
                let dr = r_out - r_in;
                let rho = r_in + dr * eta[0];
                let (c, dc, _) = circle_arc(eta[1]);
                [[dr * c[0], rho * dc[0]], [dr * c[1], rho * dc[1]]]
            }
        }
    }

    /// Hessian `H[i][a][b] = d2 F_i / (d eta_a d eta_b)`.
    pub fn hessian(&self, eta: &[f64]) -> [[[f64; 2]; 2]; 2] {
        match *self {
            Self::Interval { .. } => [[[0.0; 2]; 2]; 2],
            Self::QuarterAnnulus { r_in, r_out } => {
                let dr = r_out - r_in;
                let rho = r_in + dr * eta[0];
                let (_, dc, ddc) = circle_arc(eta[1]);
                let mut h = [[[0.0; 2]; 2]; 2];
                for i in 0..2 {
                    h[i][0][1] = dr * dc[i];
                    h[i][1][0] = dr * dc[i];
                    h[i][1][1] = rho * ddc[i];
                }
                h
            }
        }
    }

    pub fn det_jacobian(&self, eta: &[f64]) -> f64 {
        let j = self.jacobian(eta);
        match self.dim() {
            1 => j[0][0],
            _ => j[0][0] * j[1][1] - j[0][1] * j[1][0],
        }
    }

    /// Parametric preimage of a physical point.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Self::Interval { a, b } => {
                let eta = (x[0] - a) / (b - a);
                if !(-1e-12..=1.0 + 1e-12).contains(&eta) {
                    return Err(Error::OutsideDomain {
                        value: x[0],
                        min: a,
                        max: b,
                    });
                }
                Ok(vec![eta.clamp(0.0, 1.0)])
            }
            Self::QuarterAnnulus { r_in, r_out } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let eta0 = (r - r_in) / (r_out - r_in);
                if !(-1e-10..=1.0 + 1e-10).contains(&eta0) || x[0] < -1e-12 || x[1] < -1e-12 {
                    return Err(Error::OutsideDomain {
                        value: r,
                        min: r_in,
                        max: r_out,
                    });
                }
                let phi = x[1].atan2(x[0]).clamp(0.0, std::f64::consts::FRAC_PI_2);
                // The arc angle is strictly monotone in eta: bisection suffices.
                let mut lo = 0.0_f64;
                let mut hi = 1.0_f64;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    let (c, _, _) = circle_arc(mid);
                    if c[1].atan2(c[0]) < phi {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(vec![eta0.clamp(0.0, 1.0), 0.5 * (lo + hi)])
            }
        }
    }
}

/// Rational quadratic parametrization of the unit quarter circle from (1,0)
/// to (0,1): value, first and second derivatives with respect to eta.
fn circle_arc(eta: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let w = [1.0, INV_SQRT2, 1.0];
    let px = [1.0, 1.0, 0.0];
    let py = [0.0, 1.0, 1.0];
    // Quadratic Bernstein basis and its derivatives.
    let b = [
        (1.0 - eta) * (1.0 - eta),
        2.0 * eta * (1.0 - eta),
        eta * eta,
    ];
    let db = [2.0 * eta - 2.0, 2.0 - 4.0 * eta, 2.0 * eta];
    let ddb = [2.0, -4.0, 2.0];

    let mut num = [0.0_f64; 2];
    let mut dnum = [0.0_f64; 2];
    let mut ddnum = [0.0_f64; 2];
    let (mut den, mut dden, mut dddden) = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..3 {
        num[0] += b[k] * w[k] * px[k];
        num[1] += b[k] * w[k] * py[k];
        dnum[0] += db[k] * w[k] * px[k];
        dnum[1] += db[k] * w[k] * py[k];
        ddnum[0] += ddb[k] * w[k] * px[k];
        ddnum[1] += ddb[k] * w[k] * py[k];
        den += b[k] * w[k];
        dden += db[k] * w[k];
        dddden += ddb[k] * w[k];
    }
    let mut c = [0.0_f64; 2];
    let mut dc = [0.0_f64; 2];
    let mut ddc = [0.0_f64; 2];
    for i in 0..2 {
        c[i] = num[i] / den;
        dc[i] = (dnum[i] * den - num[i] * dden) / (den * den);
        ddc[i] =
            ddnum[i] / den - 2.0 * dnum[i] * dden / (den * den) - num[i] * dddden / (den * den)
                + 2.0 * num[i] * dden * dden / (den * den * den);
    }
    (c, dc, ddc)
}

/// Push-forward of parametric derivatives through the map at `eta`:
/// physical gradient and, when the parametric Hessian is supplied, the
/// physical Laplacian.
pub fn push_forward(
    map: &GeometryMap,
    eta: &[f64],
    grad_hat: &[f64],
    hess_hat: Option<&[[f64; 2]; 2]>,
) -> Result<([f64; 2], Option<f64>)> {
    let d = map.dim();
    let j = map.jacobian(eta);
    let det = map.det_jacobian(eta);
    if det.abs() < 1e-14 {
        return Err(Error::SingularJacobian {
            point: eta.to_vec(),
            det,
        });
    }
    // J^{-1} for the leading d x d block.
    let jinv = match d {
        1 => [[1.0 / j[0][0], 0.0], [0.0, 0.0]],
        _ => [
            [j[1][1] / det, -j[0][1] / det],
            [-j[1][0] / det, j[0][0] / det],
        ],
    };
    // grad = J^{-T} grad_hat.
    let mut grad = [0.0_f64; 2];
    for i in 0..d {
        for a in 0..d {
            grad[i] += jinv[a][i] * grad_hat[a];
        }
    }
    let lap = hess_hat.map(|hh| {
        let h = map.hessian(eta);
        // M = parametric Hessian minus (physical gradient . map Hessian).
        let mut m = [[0.0_f64; 2]; 2];
        for a in 0..d {
            for b in 0..d {
                m[a][b] = hh[a][b];
                for c in 0..d {
                    m[a][b] -= grad[c] * h[c][a][b];
                }
            }
        }
        // Laplacian = tr(J^{-T} M J^{-1}).
        let mut lap = 0.0;
        for i in 0..d {
            for a in 0..d {
                for b in 0..d {
                    lap += jinv[a][i] * m[a][b] * jinv[b][i];
                }
            }
        }
        lap
    });
    Ok((grad, lap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn interval_map_basics() {
        let m = GeometryMap::interval(0.0, 1.0).unwrap();
        assert_relative_eq!(m.eval(&[0.25])[0], 0.25);
        assert_relative_eq!(m.det_jacobian(&[0.25]), 1.0);

        let m = GeometryMap::interval(0.0, 2.0).unwrap();
        assert_relative_eq!(m.eval(&[0.5])[0], 1.0);
        assert_relative_eq!(m.det_jacobian(&[0.5]), 2.0);
        assert_eq!(m.hessian(&[0.3])[0][0][0], 0.0);

        assert!(GeometryMap::interval(1.0, 1.0).is_err());
    }

    #[test]
    fn annulus_corners() {
        let m = GeometryMap::quarter_annulus(1.0, 2.0).unwrap();
        let p = m.eval(&[0.0, 0.0]);
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(p[1], 0.0, epsilon = 1e-14);
        let p = m.eval(&[1.0, 1.0]);
        assert_relative_eq!(p[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(p[1], 2.0, epsilon = 1e-14);
        assert!(GeometryMap::quarter_annulus(2.0, 1.0).is_err());
    }

    #[test]
    fn annulus_points_lie_on_circles() {
        let m = GeometryMap::quarter_annulus(1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let eta = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let p = m.eval(&eta);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert_relative_eq!(r, 1.0 + eta[0], epsilon = 1e-12);
            assert!(m.det_jacobian(&eta) > 0.0);
        }
    }

    #[test]
    fn annulus_area_by_quadrature() {
        let m = GeometryMap::quarter_annulus(1.0, 2.0).unwrap();
        let (nodes, weights) = crate::quadrature::gauss_on_interval(0.0, 1.0, 16).unwrap();
        let mut area = 0.0;
        for (&x, &wx) in nodes.iter().zip(&weights) {
            for (&y, &wy) in nodes.iter().zip(&weights) {
                area += wx * wy * m.det_jacobian(&[x, y]);
            }
        }
        let exact = std::f64::consts::PI * (4.0 - 1.0) / 4.0;
        assert!((area - exact).abs() < 1e-10, "area={area} exact={exact}");
    }

    #[test]
    fn jacobian_and_hessian_match_finite_differences() {
        let m = GeometryMap::quarter_annulus(1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = 1e-6;
        for _ in 0..50 {
            let eta = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            let j = m.jacobian(&eta);
            let h = m.hessian(&eta);
            for a in 0..2 {
                let mut ep = eta;
                ep[a] += eps;
                let mut em = eta;
                em[a] -= eps;
                let fp = m.eval(&ep);
                let fm = m.eval(&em);
                let jp = m.jacobian(&ep);
                let jm = m.jacobian(&em);
                for i in 0..2 {
                    let fd = (fp[i] - fm[i]) / (2.0 * eps);
                    assert!((fd - j[i][a]).abs() <= 1e-6 * (1.0 + j[i][a].abs()));
                    for b in 0..2 {
                        let fd2 = (jp[i][b] - jm[i][b]) / (2.0 * eps);
                        assert!(
                            (fd2 - h[i][b][a]).abs() <= 1e-5 * (1.0 + h[i][b][a].abs()),
                            "hessian mismatch i={i} a={a} b={b}: fd={fd2} exact={}",
                            h[i][b][a]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn push_forward_identity_and_affine() {
        let id = GeometryMap::interval(0.0, 1.0).unwrap();
        let (g, _) = push_forward(&id, &[0.3], &[2.5], None).unwrap();
        assert_relative_eq!(g[0], 2.5);

        let m = GeometryMap::interval(0.0, 2.0).unwrap();
        let (g, lap) = push_forward(&m, &[0.3], &[1.0], Some(&[[4.0, 0.0], [0.0, 0.0]])).unwrap();
        assert_relative_eq!(g[0], 0.5);
        assert_relative_eq!(lap.unwrap(), 1.0);
    }

    #[test]
    fn laplacian_of_squared_radius_is_four() {
        // f(x, y) = x^2 + y^2 pulled back to parametric coordinates is
        // rho(eta_0)^2 (the arc has unit radius), so its parametric
        // derivatives are available in closed form; the physical Laplacian
        // must come out as exactly 4.
        let (r_in, r_out) = (1.0, 2.0);
        let m = GeometryMap::quarter_annulus(r_in, r_out).unwrap();
        let dr = r_out - r_in;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let eta = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let rho = r_in + dr * eta[0];
            let grad_hat = [2.0 * rho * dr, 0.0];
            let hess_hat = [[2.0 * dr * dr, 0.0], [0.0, 0.0]];
            let (_, lap) = push_forward(&m, &eta, &grad_hat, Some(&hess_hat)).unwrap();
            assert!(
                (lap.unwrap() - 4.0).abs() < 1e-8,
                "laplacian {} at {:?}",
                lap.unwrap(),
                eta
            );
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let m = GeometryMap::quarter_annulus(1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let eta = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let x = m.eval(&eta);
            let back = m.inverse(&x).unwrap();
            assert_relative_eq!(back[0], eta[0], epsilon = 1e-9);
            assert_relative_eq!(back[1], eta[1], epsilon = 1e-9);
        }
        let m = GeometryMap::interval(1.0, 3.0).unwrap();
        assert_relative_eq!(m.inverse(&[2.0]).unwrap()[0], 0.5);
        assert!(m.inverse(&[0.5]).is_err());
    }
}
