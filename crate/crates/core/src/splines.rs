//! Univariate B-spline knot vectors, basis evaluation with derivatives,
//! Greville abscissae and tensor-product index bookkeeping.

use crate::error::{Error, Result};

/// An open knot vector of degree `p` in physical coordinates.
///
/// The first and last knots are repeated `p + 1` times, so the basis is
/// interpolatory at both ends of the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

/// Basis values and derivatives at a point: `values[k][a]` is the k-th
/// derivative of basis function `first + a`, for the `p + 1` functions whose
/// support contains the point.
#[derive(Debug, Clone)]
pub struct BasisValues {
    /// Global (unconstrained) index of the first active basis function.
    pub first: usize,
    /// `values[deriv][local]`, `local = 0..=p`.
    pub values: Vec<Vec<f64>>,
}

impl KnotVector {
    /// Builds a knot vector from raw knots, validating the open form.
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidParameter(format!(
                "spline degree must be >= 1, got {degree}"
            )));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::InvalidParameter(format!(
                "need at least {} knots for degree {degree}, got {}",
                2 * (degree + 1),
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter(
                "knots must be nondecreasing".into(),
            ));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidParameter("knots must be finite".into()));
        }
        let n = knots.len() - degree - 1;
        let a = knots[0];
        let b = knots[knots.len() - 1];
        if a >= b {
            return Err(Error::InvalidParameter(
                "knot vector spans an empty interval".into(),
            ));
        }
        if knots[degree] != a || knots[n] != b {
            return Err(Error::InvalidParameter(
                "knot vector is not open (end knots must repeat degree + 1 times)".into(),
            ));
        }
        Ok(Self { degree, knots })
    }

    /// Open knot vector with `num_elements` uniform spans on `[a, b]`.
    pub fn open_uniform(degree: usize, num_elements: usize, a: f64, b: f64) -> Result<Self> {
        if num_elements < 1 {
            return Err(Error::InvalidParameter(format!(
                "need at least one element, got {num_elements}"
            )));
        }
        if !(a < b) {
            return Err(Error::InvalidParameter(format!(
                "interval [{a}, {b}] is empty"
            )));
        }
        let mut knots = Vec::with_capacity(num_elements + 2 * degree + 1);
        knots.extend(std::iter::repeat_n(a, degree));
        for i in 0..=num_elements {
            // Breakpoints computed as convex combinations so both endpoints are exact.
            let s = i as f64 / num_elements as f64;
            knots.push(a * (1.0 - s) + b * s);
        }
        knots.extend(std::iter::repeat_n(b, degree));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `n`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Distinct knot values, i.e. the mesh.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for &k in &self.knots {
            if out.last().is_none_or(|&last| k > last) {
                out.push(k);
            }
        }
        out
    }

    /// Nonempty spans as `(left_knot_index, left, right)`.
    pub fn spans(&self) -> Vec<(usize, f64, f64)> {
        let n = self.num_basis();
        (self.degree..n)
            .filter(|&i| self.knots[i + 1] > self.knots[i])
            .map(|i| (i, self.knots[i], self.knots[i + 1]))
            .collect()
    }

    /// Mesh size `h`: the largest span length.
    pub fn mesh_size(&self) -> f64 {
        self.spans()
            .iter()
            .map(|&(_, a, b)| b - a)
            .fold(0.0, f64::max)
    }

    /// Quasi-uniformity ratio: smallest nonempty span over `h`.
    pub fn quasi_uniformity(&self) -> f64 {
        let h = self.mesh_size();
        self.spans()
            .iter()
            .map(|&(_, a, b)| (b - a) / h)
            .fold(f64::INFINITY, f64::min)
    }

    /// Index `mu` of the knot span containing `t`: `knots[mu] <= t < knots[mu+1]`,
    /// with `t == end` assigned to the last nonempty span.
    pub fn find_span(&self, t: f64) -> Result<usize> {
        let (a, b) = (self.start(), self.end());
        if !(t >= a && t <= b) {
            return Err(Error::OutsideDomain {
                value: t,
                min: a,
                max: b,
            });
        }
        let n = self.num_basis();
        if t >= self.knots[n] {
            // Last nonempty span.
            let mut mu = n - 1;
            while self.knots[mu + 1] <= self.knots[mu] {
                mu -= 1;
            }
            return Ok(mu);
        }
        let mut lo = self.degree;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// Cox-de Boor evaluation of all nonzero basis functions at `t`, with
    /// derivatives up to `max_deriv`. Orders above `p` evaluate to zero and
    /// 0/0 knot ratios resolve to 0.
    pub fn eval_basis(&self, t: f64, max_deriv: usize) -> Result<BasisValues> {
        let p = self.degree;
        let span = self.find_span(t)?;
        let knots = &self.knots;

        // ndu[j][r] lower triangle: knot differences; upper: basis values by degree.
        let mut ndu = vec![vec![0.0_f64; p + 1]; p + 1];
        let mut left = vec![0.0_f64; p + 1];
        let mut right = vec![0.0_f64; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r] != 0.0 {
                    ndu[r][j - 1] / ndu[j][r]
                } else {
                    0.0
                };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0_f64; p + 1]; max_deriv + 1];
        ders[0].copy_from_slice(&(0..=p).map(|r| ndu[r][p]).collect::<Vec<_>>());

        let nd = max_deriv.min(p);
        let mut a = [vec![0.0_f64; p + 1], vec![0.0_f64; p + 1]];
        for r in 0..=p {
            let mut s1 = 0usize;
            let mut s2 = 1usize;
            a[0].iter_mut().for_each(|v| *v = 0.0);
            a[1].iter_mut().for_each(|v| *v = 0.0);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let denom = ndu[pk + 1][rk as usize];
                    a[s2][0] = if denom != 0.0 { a[s1][0] / denom } else { 0.0 };
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let denom = ndu[pk + 1][(rk + j as isize) as usize];
                    a[s2][j] = if denom != 0.0 {
                        (a[s1][j] - a[s1][j - 1]) / denom
                    } else {
                        0.0
                    };
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    let denom = ndu[pk + 1][r];
                    a[s2][k] = if denom != 0.0 {
                        -a[s1][k - 1] / denom
                    } else {
                        0.0
                    };
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }

        let mut factor = p as f64;
        for k in 1..=nd {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }

        Ok(BasisValues {
            first: span - p,
            values: ders,
        })
    }

    /// Greville abscissae: the mean of `p` consecutive interior knots.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }
}

/// A spline space: a knot vector plus an optional constraint mask dropping the
/// first and/or last basis function (homogeneous initial/boundary data).
#[derive(Debug, Clone)]
pub struct SplineSpace {
    kv: KnotVector,
    drop_first: bool,
    drop_last: bool,
}

impl SplineSpace {
    pub fn new(kv: KnotVector, drop_first: bool, drop_last: bool) -> Result<Self> {
        let dropped = usize::from(drop_first) + usize::from(drop_last);
        if kv.num_basis() <= dropped {
            return Err(Error::InvalidParameter(
                "constraint mask leaves no basis functions".into(),
            ));
        }
        Ok(Self {
            kv,
            drop_first,
            drop_last,
        })
    }

    pub fn unconstrained(kv: KnotVector) -> Self {
        Self {
            kv,
            drop_first: false,
            drop_last: false,
        }
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.kv
    }

    pub fn degree(&self) -> usize {
        self.kv.degree()
    }

    pub fn drop_first(&self) -> bool {
        self.drop_first
    }

    pub fn drop_last(&self) -> bool {
        self.drop_last
    }

    /// Number of active basis functions.
    pub fn dim(&self) -> usize {
        self.kv.num_basis() - usize::from(self.drop_first) - usize::from(self.drop_last)
    }

    /// Maps an unconstrained basis index to the active index, if active.
    pub fn active_index(&self, global: usize) -> Option<usize> {
        let start = usize::from(self.drop_first);
        let end = self.kv.num_basis() - usize::from(self.drop_last);
        (start..end).contains(&global).then(|| global - start)
    }

    /// Unconstrained index of active function `i`.
    pub fn global_index(&self, active: usize) -> usize {
        active + usize::from(self.drop_first)
    }

    /// Greville abscissae of the active basis functions.
    pub fn greville(&self) -> Vec<f64> {
        let all = self.kv.greville();
        let start = usize::from(self.drop_first);
        let end = self.kv.num_basis() - usize::from(self.drop_last);
        all[start..end].to_vec()
    }

    pub fn mesh_size(&self) -> f64 {
        self.kv.mesh_size()
    }

    /// Evaluates the active solution expansion `sum_i coeffs[i] b_i^{(deriv)}(t)`.
    pub fn eval_expansion(&self, coeffs: &[f64], t: f64, deriv: usize) -> Result<f64> {
        debug_assert_eq!(coeffs.len(), self.dim());
        let basis = self.kv.eval_basis(t, deriv)?;
        let mut sum = 0.0;
        for (local, &v) in basis.values[deriv].iter().enumerate() {
            if let Some(active) = self.active_index(basis.first + local) {
                sum += coeffs[active] * v;
            }
        }
        Ok(sum)
    }
}

/// Colexicographic layout for tensor-product indices: the first index varies
/// fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorLayout {
    dims: Vec<usize>,
}

impl TensorLayout {
    pub fn new(dims: Vec<usize>) -> Self {
        Self { dims }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linearize(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "index has {} components, layout has {}",
                idx.len(),
                self.dims.len()
            )));
        }
        let mut lin = 0;
        let mut stride = 1;
        for (dim, (&i, &extent)) in idx.iter().zip(&self.dims).enumerate() {
            if i >= extent {
                return Err(Error::IndexOutOfBounds {
                    index: i,
                    dim,
                    extent,
                });
            }
            lin += i * stride;
            stride *= extent;
        }
        Ok(lin)
    }

    pub fn delinearize(&self, mut lin: usize) -> Result<Vec<usize>> {
        if lin >= self.len() {
            return Err(Error::IndexOutOfBounds {
                index: lin,
                dim: 0,
                extent: self.len(),
            });
        }
        let mut idx = Vec::with_capacity(self.dims.len());
        for &extent in &self.dims {
            idx.push(lin % extent);
            lin /= extent;
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn open_uniform_p1_two_elements() {
        let kv = KnotVector::open_uniform(1, 2, 0.0, 1.0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.5, 1.0, 1.0]);
        assert_eq!(kv.num_basis(), 3);
        assert_relative_eq!(kv.mesh_size(), 0.5);
        assert_relative_eq!(kv.quasi_uniformity(), 1.0);
    }

    #[test]
    fn open_uniform_bernstein() {
        let kv = KnotVector::open_uniform(2, 1, 0.0, 1.0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(kv.num_basis(), 3);
    }

    #[test]
    fn open_uniform_counts() {
        let kv = KnotVector::open_uniform(3, 64, 0.0, 1.0).unwrap();
        assert_eq!(kv.num_basis(), 67);
        assert_relative_eq!(kv.mesh_size(), 2f64.powi(-6));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(KnotVector::open_uniform(0, 4, 0.0, 1.0).is_err());
        assert!(KnotVector::open_uniform(2, 0, 0.0, 1.0).is_err());
        assert!(KnotVector::open_uniform(2, 4, 1.0, 1.0).is_err());
        assert!(KnotVector::new(1, vec![0.0, 0.5, 1.0, 1.0]).is_err());
    }

    #[test]
    fn bernstein_values_at_half() {
        let kv = KnotVector::open_uniform(2, 1, 0.0, 1.0).unwrap();
        let b = kv.eval_basis(0.5, 0).unwrap();
        assert_eq!(b.first, 0);
        assert_relative_eq!(b.values[0][0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(b.values[0][1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(b.values[0][2], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn eval_outside_domain_errors() {
        let kv = KnotVector::open_uniform(2, 4, 0.0, 1.0).unwrap();
        assert!(kv.eval_basis(-0.1, 0).is_err());
        assert!(kv.eval_basis(1.1, 0).is_err());
        assert!(kv.eval_basis(1.0, 0).is_ok());
    }

    #[test]
    fn partition_of_unity_and_derivative_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in 1..=5usize {
            let kv = KnotVector::open_uniform(p, 9, 0.0, 2.5).unwrap();
            for _ in 0..2000 {
                let t = rng.random_range(0.0..2.5);
                let b = kv.eval_basis(t, 1).unwrap();
                let sum: f64 = b.values[0].iter().sum();
                let dsum: f64 = b.values[1].iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12, "p={p} t={t} sum={sum}");
                assert!(dsum.abs() <= 1e-9 * (p as f64 / kv.mesh_size()));
                assert!(b.values[0].iter().all(|&v| v >= -1e-14));
            }
        }
    }

    #[test]
    fn local_support() {
        let kv = KnotVector::open_uniform(3, 8, 0.0, 1.0).unwrap();
        // Basis 5 has support [knots[5], knots[9]].
        let knots = kv.knots();
        let (lo, hi) = (knots[5], knots[5 + 3 + 1]);
        for &t in &[lo - 0.05, hi + 0.05, 0.01, 0.99] {
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            let b = kv.eval_basis(t, 0).unwrap();
            let active = b.first..b.first + 4;
            if !(lo..hi).contains(&t) && !active.contains(&5) {
                // Function 5 is simply not reported active: treated as zero.
                continue;
            }
            if (t < lo || t > hi) && active.contains(&5) {
                assert!(b.values[0][5 - b.first].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 2..=4usize {
            let kv = KnotVector::open_uniform(p, 7, 0.0, 1.0).unwrap();
            let breaks = kv.breakpoints();
            for _ in 0..200 {
                let t: f64 = rng.random_range(0.05..0.95);
                // Stay away from breakpoints where higher derivatives jump.
                if breaks.iter().any(|&z| (t - z).abs() < 1e-3) {
                    continue;
                }
                let eps = 1e-6;
                for k in 1..=2usize {
                    let b = kv.eval_basis(t, k).unwrap();
                    let bp = kv.eval_basis(t + eps, k - 1).unwrap();
                    let bm = kv.eval_basis(t - eps, k - 1).unwrap();
                    assert_eq!(bp.first, bm.first);
                    if bp.first != b.first {
                        continue;
                    }
                    for a in 0..=p {
                        let fd = (bp.values[k - 1][a] - bm.values[k - 1][a]) / (2.0 * eps);
                        let exact = b.values[k][a];
                        let scale = exact.abs().max(1.0 / kv.mesh_size().powi(k as i32));
                        assert!(
                            (fd - exact).abs() <= 1e-5 * scale,
                            "p={p} k={k} t={t} fd={fd} exact={exact}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn derivatives_above_degree_are_zero() {
        let kv = KnotVector::open_uniform(2, 3, 0.0, 1.0).unwrap();
        let b = kv.eval_basis(0.4, 4).unwrap();
        assert!(b.values[3].iter().all(|&v| v == 0.0));
        assert!(b.values[4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn greville_examples() {
        let kv = KnotVector::new(1, vec![0.0, 0.0, 0.5, 1.0, 1.0]).unwrap();
        assert_eq!(kv.greville(), vec![0.0, 0.5, 1.0]);

        let kv = KnotVector::open_uniform(2, 1, 0.0, 1.0).unwrap();
        assert_eq!(kv.greville(), vec![0.0, 0.5, 1.0]);

        let kv = KnotVector::open_uniform(3, 10, 0.0, 1.0).unwrap();
        let g = kv.greville();
        for (got, want) in g.iter().zip([0.0, 1.0 / 30.0, 0.1, 0.2]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn greville_monotone_with_exact_endpoints() {
        for p in 1..=5usize {
            let kv = KnotVector::open_uniform(p, 13, -1.0, 3.0).unwrap();
            let g = kv.greville();
            assert_eq!(g[0], -1.0);
            assert_eq!(*g.last().unwrap(), 3.0);
            assert!(g.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn constrained_space_dimensions() {
        let kv = KnotVector::open_uniform(3, 10, 0.0, 1.0).unwrap();
        let time = SplineSpace::new(kv.clone(), true, false).unwrap();
        assert_eq!(time.dim(), kv.num_basis() - 1);
        let space = SplineSpace::new(kv.clone(), true, true).unwrap();
        assert_eq!(space.dim(), kv.num_basis() - 2);
        assert_eq!(space.active_index(0), None);
        assert_eq!(space.active_index(1), Some(0));
        assert_eq!(space.active_index(kv.num_basis() - 1), None);
    }

    #[test]
    fn linearize_examples() {
        let layout = TensorLayout::new(vec![3, 2]);
        // Spec examples are 1-based; code is 0-based.
        assert_eq!(layout.linearize(&[0, 0]).unwrap(), 0);
        assert_eq!(layout.linearize(&[2, 1]).unwrap(), 5);
        assert_eq!(layout.linearize(&[1, 1]).unwrap(), 4);
        assert!(layout.linearize(&[3, 0]).is_err());
    }

    proptest! {
        #[test]
        fn linearize_roundtrip(d1 in 1usize..6, d2 in 1usize..6, d3 in 1usize..6, seed in 0u64..1000) {
            let layout = TensorLayout::new(vec![d1, d2, d3]);
            let lin = (seed as usize) % layout.len();
            let idx = layout.delinearize(lin).unwrap();
            prop_assert_eq!(layout.linearize(&idx).unwrap(), lin);
        }

        #[test]
        fn partition_of_unity_prop(p in 1usize..5, nel in 1usize..9, x in 0.0f64..1.0) {
            let kv = KnotVector::open_uniform(p, nel, 0.0, 1.0).unwrap();
            let b = kv.eval_basis(x, 0).unwrap();
            let sum: f64 = b.values[0].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expansion_reproduces_linear_function() {
        // Coefficients at Greville abscissae reproduce u(t) = t exactly.
        for p in 1..=4usize {
            let kv = KnotVector::open_uniform(p, 6, 0.0, 2.0).unwrap();
            let space = SplineSpace::unconstrained(kv);
            let coeffs = space.greville();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                let t = rng.random_range(0.0..2.0);
                let u = space.eval_expansion(&coeffs, t, 0).unwrap();
                let du = space.eval_expansion(&coeffs, t, 1).unwrap();
                assert_relative_eq!(u, t, epsilon = 1e-12);
                assert_relative_eq!(du, 1.0, epsilon = 1e-10);
            }
        }
    }
}
