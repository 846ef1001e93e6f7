//! Gauss quadrature tables and assembly of univariate, spatial and
//! space-time matrices and load vectors.

use crate::error::{Error, Result};
use crate::geometry::{push_forward, GeometryMap};
use crate::quadrature::gauss_legendre;
use crate::sparse::{BandedMatrix, SparseMatrix};
use crate::splines::{SplineSpace, TensorLayout};

/// Pointwise weight used by stabilized loads: (parametric point, time).
pub type PointWeightFn<'a> = &'a dyn Fn(&[f64], f64) -> f64;

/// Tabulated basis values on each nonempty span at a fixed family of points.
#[derive(Debug, Clone)]
pub struct UnivariateTable {
    pub spans: Vec<SpanTable>,
    pub max_deriv: usize,
    pub num_local: usize,
}

#[derive(Debug, Clone)]
pub struct SpanTable {
    /// First unconstrained basis index active on the span.
    pub first: usize,
    pub left: f64,
    pub right: f64,
    pub points: Vec<f64>,
    /// Quadrature weights; empty for pure sampling tables.
    pub weights: Vec<f64>,
    /// `[point][deriv][local]` flattened.
    values: Vec<f64>,
    num_deriv: usize,
    num_local: usize,
}

impl SpanTable {
    #[inline]
    pub fn value(&self, point: usize, deriv: usize, local: usize) -> f64 {
        self.values[(point * self.num_deriv + deriv) * self.num_local + local]
    }
}

impl UnivariateTable {
    fn build(
        space: &SplineSpace,
        points_per_span: &dyn Fn(f64, f64) -> (Vec<f64>, Vec<f64>),
        max_deriv: usize,
    ) -> Result<Self> {
        let kv = space.knot_vector();
        let p = kv.degree();
        let num_local = p + 1;
        let mut spans = Vec::new();
        for (span_idx, left, right) in kv.spans() {
            let (points, weights) = points_per_span(left, right);
            let first = span_idx - p;
            let mut values = Vec::with_capacity(points.len() * (max_deriv + 1) * num_local);
            for &t in &points {
                let basis = kv.eval_basis(t, max_deriv)?;
                // A sample point on the span's right boundary evaluates in the
                // next span's frame; realign to this span, zero-filling
                // functions whose support ends there.
                let offset = basis.first as isize - first as isize;
                for d in 0..=max_deriv {
                    for a in 0..num_local {
                        let b = a as isize - offset;
                        values.push(if (0..num_local as isize).contains(&b) {
                            basis.values[d][b as usize]
                        } else {
                            0.0
                        });
                    }
                }
            }
            spans.push(SpanTable {
                first,
                left,
                right,
                points,
                weights,
                values,
                num_deriv: max_deriv + 1,
                num_local,
            });
        }
        Ok(Self {
            spans,
            max_deriv,
            num_local,
        })
    }

    /// Gauss quadrature table with `q` points per span.
    pub fn quadrature(space: &SplineSpace, q: usize, max_deriv: usize) -> Result<Self> {
        Self::quadrature_composite(space, q, 1, max_deriv)
    }

    /// Composite Gauss table: each span split into `subdivisions` equal
    /// pieces carrying `q` points each. Used for loads whose integrand has
    /// features far below the mesh size.
    pub fn quadrature_composite(
        space: &SplineSpace,
        q: usize,
        subdivisions: usize,
        max_deriv: usize,
    ) -> Result<Self> {
        let (ref_nodes, ref_weights) = gauss_legendre(q)?;
        let nsub = subdivisions.max(1);
        Self::build(
            space,
            &move |a, b| {
                let mut points = Vec::with_capacity(q * nsub);
                let mut weights = Vec::with_capacity(q * nsub);
                for s in 0..nsub {
                    let sa = a + (b - a) * s as f64 / nsub as f64;
                    let sb = a + (b - a) * (s + 1) as f64 / nsub as f64;
                    let mid = 0.5 * (sa + sb);
                    let half = 0.5 * (sb - sa);
                    points.extend(ref_nodes.iter().map(|&x| mid + half * x));
                    weights.extend(ref_weights.iter().map(|&w| w * half));
                }
                (points, weights)
            },
            max_deriv,
        )
    }

    /// Sampling table: `m` equispaced points per span (endpoints included)
    /// together with the `q`-point Gauss nodes.
    pub fn sampling(space: &SplineSpace, m: usize, q: usize, max_deriv: usize) -> Result<Self> {
        let (ref_nodes, _) = gauss_legendre(q)?;
        Self::build(
            space,
            &move |a, b| {
                let mut pts: Vec<f64> = (0..m)
                    .map(|i| a + (b - a) * i as f64 / (m.max(2) - 1) as f64)
                    .collect();
                let mid = 0.5 * (a + b);
                let half = 0.5 * (b - a);
                pts.extend(ref_nodes.iter().map(|&x| mid + half * x));
                (pts, Vec::new())
            },
            max_deriv,
        )
    }
}

/// Entry `(i, j) = integral of b_j^(deriv_col) b_i^(deriv_row)` over the
/// active (constrained) basis, with `q` Gauss points per span.
/// Derivative orders above the degree yield the zero matrix.
pub fn assemble_univariate_q(
    space: &SplineSpace,
    deriv_row: usize,
    deriv_col: usize,
    q: usize,
) -> Result<SparseMatrix> {
    let dim = space.dim();
    let p = space.degree();
    if deriv_row > p || deriv_col > p {
        return Ok(SparseMatrix::zeros(dim, dim));
    }
    let table = UnivariateTable::quadrature(space, q, deriv_row.max(deriv_col))?;
    let mut triplets = Vec::new();
    for span in &table.spans {
        for (pt, &w) in span.weights.iter().enumerate() {
            for a in 0..table.num_local {
                let Some(i) = space.active_index(span.first + a) else {
                    continue;
                };
                let vi = span.value(pt, deriv_row, a);
                if vi == 0.0 {
                    continue;
                }
                for b in 0..table.num_local {
                    let Some(j) = space.active_index(span.first + b) else {
                        continue;
                    };
                    let vj = span.value(pt, deriv_col, b);
                    triplets.push((i, j, w * vi * vj));
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(dim, dim, triplets))
}

/// As [`assemble_univariate_q`] with the standard `q = p + 1` rule (exact for
/// all spline products on affine spans).
pub fn assemble_univariate(
    space: &SplineSpace,
    deriv_row: usize,
    deriv_col: usize,
) -> Result<SparseMatrix> {
    assemble_univariate_q(space, deriv_row, deriv_col, space.degree() + 1)
}

/// Univariate time matrices for one constrained time space.
#[derive(Debug, Clone)]
pub struct TimeBlocks {
    pub space: SplineSpace,
    /// Advection matrix: `(i, j) = integral b'_j b_i`.
    pub wt: SparseMatrix,
    /// Mass matrix.
    pub mt: SparseMatrix,
    /// `dt[k - 1]` holds `(i, j) = integral b^(k)_j b^(k)_i`, `k = 1..=p`.
    /// The `h^(2k-1)` / `h^(2k)` scalings are applied by the stabilization.
    pub dt: Vec<SparseMatrix>,
    pub ht: f64,
}

impl TimeBlocks {
    pub fn new(space: &SplineSpace) -> Result<Self> {
        let p = space.degree();
        let wt = assemble_univariate(space, 0, 1)?;
        let mt = assemble_univariate(space, 0, 0)?;
        let dt = (1..=p)
            .map(|k| assemble_univariate(space, k, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space: space.clone(),
            wt,
            mt,
            dt,
            ht: space.mesh_size(),
        })
    }
}

/// Per-point spatial evaluation data for mapped assembly.
#[derive(Debug, Clone)]
pub struct SpatialPoint {
    pub eta: [f64; 2],
    pub x: [f64; 2],
    /// Quadrature weight times |det J|; bare |det J| for sampling caches.
    pub weight_det: f64,
    pub value: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    pub lap: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SpatialCell {
    /// Per local tensor function: constrained linear space index, or None if
    /// the function is dropped by the boundary mask.
    pub active: Vec<Option<usize>>,
    pub points: Vec<SpatialPoint>,
    /// Per-direction parametric span bounds.
    pub bounds: Vec<(f64, f64)>,
}

/// Tensorized spatial quadrature/sampling cache over the mapped domain.
#[derive(Debug, Clone)]
pub struct SpatialCache {
    pub layout: TensorLayout,
    pub cell_dims: Vec<usize>,
    pub cells: Vec<SpatialCell>,
    pub num_local: usize,
}

impl SpatialCache {
    /// Builds the cache from per-direction tables (quadrature or sampling).
    pub fn from_tables(
        spaces: &[SplineSpace],
        map: &GeometryMap,
        tables: &[UnivariateTable],
    ) -> Result<Self> {
        let d = spaces.len();
        assert!((1..=2).contains(&d));
        assert_eq!(map.dim(), d);
        assert!(tables.iter().all(|t| t.max_deriv >= 2));
        let layout = TensorLayout::new(spaces.iter().map(|s| s.dim()).collect());
        let cell_dims: Vec<usize> = tables.iter().map(|t| t.spans.len()).collect();
        let cell_layout = TensorLayout::new(cell_dims.clone());
        let num_local: usize = spaces.iter().map(|s| s.degree() + 1).product();

        let mut cells = Vec::with_capacity(cell_layout.len());
        for c in 0..cell_layout.len() {
            let cidx = cell_layout.delinearize(c)?;
            let span_tables: Vec<&SpanTable> = (0..d).map(|l| &tables[l].spans[cidx[l]]).collect();

            // Local tensor function -> constrained linear index.
            let local_dims: Vec<usize> = spaces.iter().map(|s| s.degree() + 1).collect();
            let local_layout = TensorLayout::new(local_dims);
            let mut active = Vec::with_capacity(num_local);
            for l in 0..num_local {
                let lidx = local_layout.delinearize(l)?;
                let mut constrained = Vec::with_capacity(d);
                let mut ok = true;
                for dir in 0..d {
                    match spaces[dir].active_index(span_tables[dir].first + lidx[dir]) {
                        Some(a) => constrained.push(a),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                active.push(if ok {
                    Some(layout.linearize(&constrained)?)
                } else {
                    None
                });
            }

            let point_dims: Vec<usize> = span_tables.iter().map(|s| s.points.len()).collect();
            let point_layout = TensorLayout::new(point_dims);
            let mut points = Vec::with_capacity(point_layout.len());
            for q in 0..point_layout.len() {
                let qidx = point_layout.delinearize(q)?;
                let mut eta = [0.0_f64; 2];
                let mut w = 1.0_f64;
                for dir in 0..d {
                    eta[dir] = span_tables[dir].points[qidx[dir]];
                    if !span_tables[dir].weights.is_empty() {
                        w *= span_tables[dir].weights[qidx[dir]];
                    }
                }
                let det = map.det_jacobian(&eta[..d]);
                if det <= 0.0 {
                    return Err(Error::SingularJacobian {
                        point: eta[..d].to_vec(),
                        det,
                    });
                }
                let xp = map.eval(&eta[..d]);

                let mut value = Vec::with_capacity(num_local);
                let mut grad = Vec::with_capacity(num_local);
                let mut lap = Vec::with_capacity(num_local);
                for l in 0..num_local {
                    let lidx = local_layout.delinearize(l)?;
                    // Parametric value, gradient and Hessian by tensor products.
                    let mut v = 1.0_f64;
                    let mut g_hat = [0.0_f64; 2];
                    let mut h_hat = [[0.0_f64; 2]; 2];
                    let vals: Vec<[f64; 3]> = (0..d)
                        .map(|dir| {
                            let st = span_tables[dir];
                            [
                                st.value(qidx[dir], 0, lidx[dir]),
                                st.value(qidx[dir], 1, lidx[dir]),
                                st.value(qidx[dir], 2, lidx[dir]),
                            ]
                        })
                        .collect();
                    for dir in 0..d {
                        v *= vals[dir][0];
                    }
                    for a in 0..d {
                        let mut ga = 1.0;
                        for dir in 0..d {
                            ga *= if dir == a { vals[dir][1] } else { vals[dir][0] };
                        }
                        g_hat[a] = ga;
                        for b in a..d {
                            let mut hb = 1.0;
                            for dir in 0..d {
                                let order = usize::from(dir == a) + usize::from(dir == b);
                                hb *= vals[dir][order];
                            }
                            h_hat[a][b] = hb;
                            h_hat[b][a] = hb;
                        }
                    }
                    let (g, l2) = push_forward(map, &eta[..d], &g_hat[..d], Some(&h_hat))?;
                    value.push(v);
                    grad.push(g);
                    lap.push(l2.unwrap());
                }
                points.push(SpatialPoint {
                    eta,
                    x: xp,
                    weight_det: w * det,
                    value,
                    grad,
                    lap,
                });
            }
            cells.push(SpatialCell {
                active,
                points,
                bounds: span_tables.iter().map(|s| (s.left, s.right)).collect(),
            });
        }
        Ok(Self {
            layout,
            cell_dims,
            cells,
            num_local,
        })
    }

    pub fn quadrature(spaces: &[SplineSpace], map: &GeometryMap, q: usize) -> Result<Self> {
        let tables = spaces
            .iter()
            .map(|s| UnivariateTable::quadrature(s, q, s.degree().max(2)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tables(spaces, map, &tables)
    }

    pub fn dim(&self) -> usize {
        self.cell_dims.len()
    }
}

pub enum SpatialKind {
    Mass,
    Stiffness,
}

/// Spatial mass or stiffness matrix in physical coordinates over the
/// constrained tensor-product space.
pub fn assemble_spatial(cache: &SpatialCache, kind: SpatialKind) -> SparseMatrix {
    let n = cache.layout.len();
    let d = cache.dim();
    let mut triplets = Vec::new();
    for cell in &cache.cells {
        for pt in &cell.points {
            let w = pt.weight_det;
            for (a, ia) in cell.active.iter().enumerate() {
                let Some(i) = ia else { continue };
                for (b, jb) in cell.active.iter().enumerate() {
                    let Some(j) = jb else { continue };
                    let contrib = match kind {
                        SpatialKind::Mass => pt.value[a] * pt.value[b],
                        SpatialKind::Stiffness => {
                            (0..d).map(|m| pt.grad[a][m] * pt.grad[b][m]).sum::<f64>()
                        }
                    };
                    triplets.push((*i, *j, w * contrib));
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Spatial matrices for the heat system.
#[derive(Debug, Clone)]
pub struct SpatialBlocks {
    pub layout: TensorLayout,
    pub ms: SparseMatrix,
    pub ks: SparseMatrix,
}

impl SpatialBlocks {
    pub fn new(cache: &SpatialCache) -> Self {
        Self {
            layout: cache.layout.clone(),
            ms: assemble_spatial(cache, SpatialKind::Mass),
            ks: assemble_spatial(cache, SpatialKind::Stiffness),
        }
    }
}

/// Applies `sum_a (T_a kron S_a)` to `v` without forming the Kronecker
/// products. Layout is colexicographic with the space index fastest.
pub fn kron_apply(terms: &[(&SparseMatrix, &SparseMatrix)], v: &[f64]) -> Result<Vec<f64>> {
    let Some((t0, s0)) = terms.first() else {
        return Ok(vec![0.0; v.len()]);
    };
    let ns = s0.ncols();
    let nt = t0.ncols();
    if v.len() != ns * nt {
        return Err(Error::ShapeMismatch(format!(
            "vector length {} does not match ns*nt = {}*{}",
            v.len(),
            ns,
            nt
        )));
    }
    let mut out = vec![0.0_f64; ns * nt];
    let mut w = vec![0.0_f64; ns * nt];
    for (t, s) in terms {
        if s.ncols() != ns || t.ncols() != nt {
            return Err(Error::ShapeMismatch(
                "inconsistent Kronecker factor dimensions".into(),
            ));
        }
        // W[:, c] = S * V[:, c]
        for c in 0..nt {
            let col = s.matvec(&v[c * ns..(c + 1) * ns]);
            w[c * ns..(c + 1) * ns].copy_from_slice(&col);
        }
        // out[:, j] += sum_c T[j, c] W[:, c]
        for j in 0..t.nrows() {
            let (cols, vals) = t.row(j);
            for (&c, &tv) in cols.iter().zip(vals) {
                for r in 0..ns {
                    out[j * ns + r] += tv * w[c * ns + r];
                }
            }
        }
    }
    Ok(out)
}

/// Forms `sum_a (T_a kron S_a)` as an explicit banded matrix.
pub fn kron_to_banded(terms: &[(&SparseMatrix, &SparseMatrix)], band: usize) -> BandedMatrix {
    let (t0, s0) = terms[0];
    let n = t0.nrows() * s0.nrows();
    let mut out = BandedMatrix::zeros(n, band, band);
    let ns = s0.nrows();
    for (t, s) in terms {
        for (it, jt, tv) in t.iter() {
            for (is, js, sv) in s.iter() {
                out.add(it * ns + is, jt * ns + js, tv * sv);
            }
        }
    }
    out
}

/// Bandwidth of the space-time system in the colex layout.
pub fn spacetime_bandwidth(time: &SparseMatrix, space_band: usize, ns: usize) -> usize {
    time.bandwidth() * ns + space_band
}

/// Space-time load vector `F_i = integral f B_i` over the constrained tensor
/// basis (colex, space fastest). `time_test_deriv` selects the time-derivative
/// order applied to the test function; `row_coef` left-multiplies rows by a
/// per-time-index coefficient; `weight` is an extra pointwise factor
/// evaluated at (parametric space point, physical time).
#[allow(clippy::too_many_arguments)]
pub fn spacetime_load(
    spatial: &SpatialCache,
    time_space: &SplineSpace,
    time_table: &UnivariateTable,
    f: &dyn Fn(&[f64], f64) -> f64,
    time_test_deriv: usize,
    row_coef: Option<&[f64]>,
    weight: Option<PointWeightFn<'_>>,
) -> Result<Vec<f64>> {
    let ns = spatial.layout.len();
    let nt = time_space.dim();
    let d = spatial.dim();
    let mut out = vec![0.0_f64; ns * nt];
    for tspan in &time_table.spans {
        for (tp, &wt) in tspan.weights.iter().enumerate() {
            let t = tspan.points[tp];
            for cell in &spatial.cells {
                for pt in &cell.points {
                    let fv = f(&pt.x[..d], t);
                    if !fv.is_finite() {
                        return Err(Error::NonFiniteForcing {
                            point: pt.x[..d].to_vec(),
                            time: t,
                        });
                    }
                    let mut scale = wt * pt.weight_det * fv;
                    if let Some(wfun) = weight {
                        scale *= wfun(&pt.eta[..d], t);
                    }
                    if scale == 0.0 {
                        continue;
                    }
                    for a in 0..time_table.num_local {
                        let Some(it) = time_space.active_index(tspan.first + a) else {
                            continue;
                        };
                        let bt = tspan.value(tp, time_test_deriv, a);
                        if bt == 0.0 {
                            continue;
                        }
                        let coef = row_coef.map_or(1.0, |c| c[it]);
                        if coef == 0.0 {
                            continue;
                        }
                        for (b, ib) in cell.active.iter().enumerate() {
                            let Some(is) = ib else { continue };
                            out[it * ns + is] += scale * coef * bt * pt.value[b];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Time-only load `F_i = integral f b_i^(test_deriv)`, with optional row
/// coefficients and pointwise weight (used by the stabilized right-hand
/// sides).
pub fn time_load(
    time_space: &SplineSpace,
    time_table: &UnivariateTable,
    f: &dyn Fn(f64) -> f64,
    test_deriv: usize,
    row_coef: Option<&[f64]>,
    weight: Option<&dyn Fn(f64) -> f64>,
) -> Result<Vec<f64>> {
    let nt = time_space.dim();
    let mut out = vec![0.0_f64; nt];
    for span in &time_table.spans {
        for (pt, &w) in span.weights.iter().enumerate() {
            let t = span.points[pt];
            let fv = f(t);
            if !fv.is_finite() {
                return Err(Error::NonFiniteForcing {
                    point: Vec::new(),
                    time: t,
                });
            }
            let mut scale = w * fv;
            if let Some(wfun) = weight {
                scale *= wfun(t);
            }
            if scale == 0.0 {
                continue;
            }
            for a in 0..time_table.num_local {
                let Some(i) = time_space.active_index(span.first + a) else {
                    continue;
                };
                let coef = row_coef.map_or(1.0, |c| c[i]);
                out[i] += scale * coef * span.value(pt, test_deriv, a);
            }
        }
    }
    Ok(out)
}

/// Explicit space-time Galerkin heat matrix assembled by quadrature over the
/// full space-time grid. Oracle for the Kronecker-factored path.
pub fn assemble_heat_galerkin_explicit(
    spatial: &SpatialCache,
    time_space: &SplineSpace,
    time_table: &UnivariateTable,
) -> SparseMatrix {
    let ns = spatial.layout.len();
    let nt = time_space.dim();
    let d = spatial.dim();
    let n = ns * nt;
    let mut triplets = Vec::new();
    for tspan in &time_table.spans {
        for (tp, &wt) in tspan.weights.iter().enumerate() {
            for cell in &spatial.cells {
                for pt in &cell.points {
                    let w = wt * pt.weight_det;
                    for at in 0..time_table.num_local {
                        let Some(it) = time_space.active_index(tspan.first + at) else {
                            continue;
                        };
                        let bt_i = tspan.value(tp, 0, at);
                        for bt in 0..time_table.num_local {
                            let Some(jt) = time_space.active_index(tspan.first + bt) else {
                                continue;
                            };
                            let bt_j = tspan.value(tp, 0, bt);
                            let dbt_j = tspan.value(tp, 1, bt);
                            for (a, ia) in cell.active.iter().enumerate() {
                                let Some(is) = ia else { continue };
                                for (b, jb) in cell.active.iter().enumerate() {
                                    let Some(js) = jb else { continue };
                                    let adv = dbt_j * bt_i * pt.value[a] * pt.value[b];
                                    let diff = bt_j
                                        * bt_i
                                        * (0..d)
                                            .map(|m| pt.grad[a][m] * pt.grad[b][m])
                                            .sum::<f64>();
                                    triplets.push((it * ns + is, jt * ns + js, w * (adv + diff)));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}
