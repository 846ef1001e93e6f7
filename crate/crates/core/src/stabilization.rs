//! Upwind parameter tables, the shock-indicator field theta, and the
//! stabilization operators (SUPG, shock capturing, NCSU and SU).

use nalgebra::{DMatrix, DVector};

use crate::assembly::{SpatialCache, TimeBlocks, UnivariateTable};
use crate::error::{Error, Result};
use crate::problems::{Discretization, ProblemKind, ProblemSpec, SolutionField};
use crate::sparse::{BandedMatrix, SparseMatrix};
use crate::splines::{SplineSpace, TensorLayout};

/// Condition-number ceiling for the per-row upwind parameter systems.
pub const STAB_COND_LIMIT: f64 = 1e14;

/// Per-row upwind parameters: `tau[i][k-1]` multiplies `h^(2k-1) D^(k)` and
/// `sigma[i][k-1]` multiplies `h^(2k) D^(k)`; row `i` is the test-function
/// index in the constrained time basis. Entries beyond a row's active length
/// `r_i = min(p, N_t - 1 - i)` are zero, as is the whole last row.
#[derive(Debug, Clone)]
pub struct StabilizationTable {
    pub tau: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    /// Condition estimate of each row's parameter system (1 for empty rows).
    pub cond: Vec<f64>,
    pub ht: f64,
    pub degree: usize,
    /// Number of leading rows that carry an annihilation system.
    pub active_rows: usize,
}

impl StabilizationTable {
    pub fn num_rows(&self) -> usize {
        self.tau.len()
    }

    pub fn active_len(&self, row: usize) -> usize {
        self.degree.min(self.active_rows.saturating_sub(row))
    }

    /// Restriction to the first `rows` test functions. Dropping trailing
    /// basis functions from the space removes trailing rows and columns of
    /// the time matrices, so the remaining annihilation identities still
    /// hold row by row.
    pub fn restricted_to(&self, rows: usize) -> Self {
        let mut out = self.clone();
        out.tau.truncate(rows);
        out.sigma.truncate(rows);
        out.cond.truncate(rows);
        out.active_rows = self.active_rows.min(rows);
        out
    }

    /// Row coefficients of the always-active first-order upwind term of SU.
    ///
    /// The parameter system leaves the last row free (it has no strict upper
    /// triangle to annihilate); the previous row's first-order coefficient is
    /// carried over so the upwind weight stays uniform up to the final basis
    /// function. This keeps the system lower triangular and makes SU at
    /// theta = 0, p = 1 coincide with SUPG at tau = h/2 on the whole matrix.
    pub fn su_first_order_coefficients(&self) -> Vec<f64> {
        let n = self.num_rows();
        let mut c: Vec<f64> = self.tau.iter().map(|row| row[0]).collect();
        for i in self.active_rows..n {
            c[i] = if i > 0 { c[i - 1] } else { 0.5 };
        }
        c
    }
}

/// Solves the per-row annihilation systems for both the tau (advection
/// matrix) and sigma (mass matrix) coefficients.
pub fn compute_tables(blocks: &TimeBlocks) -> Result<StabilizationTable> {
    let nt = blocks.wt.nrows();
    let p = blocks.space.degree();
    let ht = blocks.ht;
    let mut tau = vec![vec![0.0; p]; nt];
    let mut sigma = vec![vec![0.0; p]; nt];
    let mut cond = vec![1.0; nt];
    for i in 0..nt {
        let r = p.min(nt - 1 - i);
        if r == 0 {
            continue;
        }
        // Equation l: entry (i, i + l + 1) of the stabilized matrix vanishes.
        let mut a = DMatrix::zeros(r, r);
        let mut rhs_tau = DVector::zeros(r);
        let mut rhs_sigma = DVector::zeros(r);
        for l in 0..r {
            for k in 0..r {
                a[(l, k)] = ht.powi(2 * (k as i32 + 1) - 1) * blocks.dt[k].get(i, i + l + 1);
            }
            rhs_tau[l] = -blocks.wt.get(i, i + l + 1);
            rhs_sigma[l] = -blocks.mt.get(i, i + l + 1);
        }
        let svd = a.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let c = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        cond[i] = c;
        if !c.is_finite() || c > STAB_COND_LIMIT {
            return Err(Error::SingularStabilization { row: i, cond: c });
        }
        let lu = a.lu();
        let t = lu
            .solve(&rhs_tau)
            .ok_or(Error::SingularStabilization { row: i, cond: c })?;
        // The sigma system matrix is ht * a: one uniform column scaling.
        let s = lu
            .solve(&rhs_sigma)
            .ok_or(Error::SingularStabilization { row: i, cond: c })?;
        for k in 0..r {
            tau[i][k] = t[k];
            sigma[i][k] = s[k] / ht;
        }
    }
    Ok(StabilizationTable {
        tau,
        sigma,
        cond,
        ht,
        degree: p,
        active_rows: nt - 1,
    })
}

/// Stabilization table for a constrained time space. For spaces that also
/// drop the final basis function (two-sided constraints), the parameters are
/// computed on the initial-condition-only space and restricted to the active
/// rows: this keeps the uniform-mesh positivity of the parameters and still
/// annihilates the strict upper triangle of the restricted matrices.
pub fn tables_for_space(space: &SplineSpace) -> Result<StabilizationTable> {
    if space.drop_last() {
        let open = SplineSpace::new(space.knot_vector().clone(), space.drop_first(), false)?;
        let blocks = TimeBlocks::new(&open)?;
        Ok(compute_tables(&blocks)?.restricted_to(space.dim()))
    } else {
        compute_tables(&TimeBlocks::new(space)?)
    }
}

/// NCSU operator `S[i][j] = sum_k tau[i][k] h^(2k-1) D^(k)[i][j]`. Added to
/// the advection matrix it annihilates the strict upper triangle.
pub fn ncsu_matrix(table: &StabilizationTable, blocks: &TimeBlocks) -> SparseMatrix {
    let nt = table.num_rows();
    let mut out = SparseMatrix::zeros(nt, nt);
    for k in 0..table.degree {
        let scale = table.ht.powi(2 * (k as i32 + 1) - 1);
        let coef: Vec<f64> = table.tau.iter().map(|row| row[k] * scale).collect();
        out = out.add_scaled(&blocks.dt[k].scale_rows(&coef), 1.0);
    }
    out
}

/// Sigma counterpart `sum_k sigma[i][k] h^(2k) D^(k)`; added to the time mass
/// matrix it annihilates the strict upper triangle.
pub fn sigma_matrix(table: &StabilizationTable, blocks: &TimeBlocks) -> SparseMatrix {
    let nt = table.num_rows();
    let mut out = SparseMatrix::zeros(nt, nt);
    for k in 0..table.degree {
        let scale = table.ht.powi(2 * (k as i32 + 1));
        let coef: Vec<f64> = table.sigma.iter().map(|row| row[k] * scale).collect();
        out = out.add_scaled(&blocks.dt[k].scale_rows(&coef), 1.0);
    }
    out
}

/// Shock-indicator field: nodal values on the breakpoint grid (spatial
/// parametric directions first, time last) with multilinear interpolation.
#[derive(Debug, Clone)]
pub struct ThetaField {
    grids: Vec<Vec<f64>>,
    layout: TensorLayout,
    values: Vec<f64>,
}

impl ThetaField {
    pub fn new(grids: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        let layout = TensorLayout::new(grids.iter().map(|g| g.len()).collect());
        assert_eq!(layout.len(), values.len());
        debug_assert!(values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        Self {
            grids,
            layout,
            values,
        }
    }

    pub fn constant_on(grids: Vec<Vec<f64>>, value: f64) -> Self {
        let n = grids.iter().map(|g| g.len()).product();
        Self::new(grids, vec![value; n])
    }

    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_coords(&self, lin: usize) -> Vec<f64> {
        let idx = self.layout.delinearize(lin).unwrap();
        idx.iter().zip(&self.grids).map(|(&i, g)| g[i]).collect()
    }

    pub fn all_one(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    /// Multilinear interpolation; coordinates clamp to the grid.
    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.grids.len());
        let d = self.grids.len();
        let mut cell = [0usize; 3];
        let mut frac = [0.0_f64; 3];
        for (dim, (x, grid)) in point.iter().zip(&self.grids).enumerate() {
            let m = grid.len();
            if m == 1 {
                continue;
            }
            let lo = match grid.partition_point(|&g| g <= *x) {
                0 => 0,
                k => (k - 1).min(m - 2),
            };
            let width = grid[lo + 1] - grid[lo];
            cell[dim] = lo;
            frac[dim] = if width > 0.0 {
                ((x - grid[lo]) / width).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        let mut sum = 0.0;
        let mut idx = [0usize; 3];
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            for dim in 0..d {
                let hi = (corner >> dim) & 1 == 1;
                let m = self.grids[dim].len();
                weight *= if hi { frac[dim] } else { 1.0 - frac[dim] };
                idx[dim] = (cell[dim] + usize::from(hi)).min(m - 1);
            }
            if weight != 0.0 {
                sum += weight * self.values[self.layout.linearize(&idx[..d]).unwrap()];
            }
        }
        sum
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Mean of nodal values whose coordinates satisfy the predicate.
    pub fn mean_where(&self, pred: impl Fn(&[f64]) -> bool) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for lin in 0..self.values.len() {
            if pred(&self.node_coords(lin)) {
                sum += self.values[lin];
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Damped update `self + damping * (target - self)`, clamped to [0, 1].
    pub fn relaxed_towards(&self, target: &Self, damping: f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&target.values)
            .map(|(a, b)| (a + damping * (b - a)).clamp(0.0, 1.0))
            .collect();
        Self::new(self.grids.clone(), values)
    }
}

/// Per-cell residual maxima over the space-time breakpoint mesh plus the
/// global sup norms that enter the residual denominator.
#[derive(Debug, Clone)]
pub struct ResidualSample {
    /// Cells per dimension (spatial directions first, time last).
    pub cell_dims: Vec<usize>,
    /// Colex over cells: max |strong residual| at the sample points.
    pub cell_max: Vec<f64>,
    pub sup_u: f64,
    pub sup_dt: f64,
}

/// theta nodes from windowed residual maxima:
/// `theta = min(window_max / (T^-1 sup|u| + sup|du/dt|), 1)` with a window of
/// one breakpoint cell on each side, clamped at the boundary. A vanishing
/// denominator (identically zero iterate) falls back to theta = 1.
pub fn theta_from_residuals(
    grids: Vec<Vec<f64>>,
    sample: &ResidualSample,
    final_time: f64,
) -> ThetaField {
    let den = sample.sup_u / final_time + sample.sup_dt;
    if !(den > 0.0) || !den.is_finite() {
        return ThetaField::constant_on(grids, 1.0);
    }
    let node_layout = TensorLayout::new(grids.iter().map(|g| g.len()).collect());
    let cell_layout = TensorLayout::new(sample.cell_dims.clone());
    let d = grids.len();
    let mut values = Vec::with_capacity(node_layout.len());
    for lin in 0..node_layout.len() {
        let node = node_layout.delinearize(lin).unwrap();
        let ranges: Vec<(usize, usize)> = (0..d)
            .map(|dim| {
                let cells = sample.cell_dims[dim];
                (node[dim].saturating_sub(1), node[dim].min(cells - 1))
            })
            .collect();
        let mut max_res: f64 = 0.0;
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'cells: loop {
            max_res = max_res.max(sample.cell_max[cell_layout.linearize(&idx).unwrap()]);
            for dim in 0..d {
                if idx[dim] < ranges[dim].1 {
                    idx[dim] += 1;
                    continue 'cells;
                }
                idx[dim] = ranges[dim].0;
            }
            break;
        }
        values.push((max_res / den).min(1.0));
    }
    ThetaField::new(grids, values)
}

/// Breakpoint grids of a discretization: spatial parametric directions first,
/// then physical time.
pub fn breakpoint_grids(disc: &Discretization) -> Vec<Vec<f64>> {
    let mut grids: Vec<Vec<f64>> = disc
        .spaces
        .iter()
        .map(|s| s.knot_vector().breakpoints())
        .collect();
    grids.push(disc.time.knot_vector().breakpoints());
    grids
}

/// Samples the strong residual of `coeffs` on every space-time breakpoint
/// cell: equispaced points (degree + 2 per direction, endpoints included)
/// plus the Gauss nodes.
pub fn sample_residual(
    problem: &ProblemSpec,
    disc: &Discretization,
    coeffs: &[f64],
) -> Result<ResidualSample> {
    let p = disc.degree();
    let field = SolutionField::new(disc, coeffs);
    if disc.is_time_only() {
        let time_pts = sample_points_1d(&disc.time.knot_vector().breakpoints(), p + 2, p + 1)?;
        let cells = time_pts.len();
        let mut cell_max = vec![0.0_f64; cells];
        let mut sup_u = 0.0_f64;
        let mut sup_dt = 0.0_f64;
        let order = time_deriv_order(problem);
        for (c, pts) in time_pts.iter().enumerate() {
            for &t in pts {
                let (td, _) = field.eval(&[], t, order, false)?;
                sup_u = sup_u.max(td[0].abs());
                sup_dt = sup_dt.max(td[1].abs());
                let r = match problem.kind {
                    ProblemKind::Advection => td[1] - (problem.forcing)(&[], t),
                    ProblemKind::AdvectionDiffusion { epsilon } => {
                        -epsilon * td[2] + td[1] - (problem.forcing)(&[], t)
                    }
                    ProblemKind::Heat => unreachable!(),
                };
                cell_max[c] = cell_max[c].max(r.abs());
            }
        }
        return Ok(ResidualSample {
            cell_dims: vec![cells],
            cell_max,
            sup_u,
            sup_dt,
        });
    }

    // Heat: tensor sampling over spatial cells x time cells.
    let geometry = disc.geometry.as_ref().unwrap();
    let d = geometry.dim();
    let space_tables: Vec<UnivariateTable> = disc
        .spaces
        .iter()
        .map(|s| UnivariateTable::sampling(s, p + 2, p + 1, 2))
        .collect::<Result<Vec<_>>>()?;
    let spatial = SpatialCache::from_tables(&disc.spaces, geometry, &space_tables)?;
    let time_table = UnivariateTable::sampling(&disc.time, p + 2, p + 1, 1)?;

    let ns = spatial.layout.len();
    let space_cells = spatial.cells.len();
    let time_cells = time_table.spans.len();
    let mut cell_max = vec![0.0_f64; space_cells * time_cells];
    let mut sup_u = 0.0_f64;
    let mut sup_dt = 0.0_f64;
    for (tc, tspan) in time_table.spans.iter().enumerate() {
        for (tp, &t) in tspan.points.iter().enumerate() {
            for (sc, cell) in spatial.cells.iter().enumerate() {
                for pt in &cell.points {
                    let mut u = 0.0;
                    let mut du = 0.0;
                    let mut lap = 0.0;
                    for (a, ia) in cell.active.iter().enumerate() {
                        let Some(is) = ia else { continue };
                        for tl in 0..time_table.num_local {
                            let Some(it) = disc.time.active_index(tspan.first + tl) else {
                                continue;
                            };
                            let c = coeffs[it * ns + is];
                            if c == 0.0 {
                                continue;
                            }
                            let bt = tspan.value(tp, 0, tl);
                            let dbt = tspan.value(tp, 1, tl);
                            u += c * pt.value[a] * bt;
                            du += c * pt.value[a] * dbt;
                            lap += c * pt.lap[a] * bt;
                        }
                    }
                    let f = (problem.forcing)(&pt.x[..d], t);
                    let r = (du - lap - f).abs();
                    sup_u = sup_u.max(u.abs());
                    sup_dt = sup_dt.max(du.abs());
                    let slot = tc * space_cells + sc;
                    cell_max[slot] = cell_max[slot].max(r);
                }
            }
        }
    }
    let mut cell_dims = spatial.cell_dims.clone();
    cell_dims.push(time_cells);
    Ok(ResidualSample {
        cell_dims,
        cell_max,
        sup_u,
        sup_dt,
    })
}

fn time_deriv_order(problem: &ProblemSpec) -> usize {
    match problem.kind {
        ProblemKind::AdvectionDiffusion { .. } => 2,
        _ => 1,
    }
}

/// Equispaced (`m` per cell, endpoints included) plus Gauss points on each
/// cell of a breakpoint mesh.
pub fn sample_points_1d(breaks: &[f64], m: usize, q: usize) -> Result<Vec<Vec<f64>>> {
    let (gauss, _) = crate::quadrature::gauss_legendre(q)?;
    let mut out = Vec::with_capacity(breaks.len().saturating_sub(1));
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut pts: Vec<f64> = (0..m)
            .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
            .collect();
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        pts.extend(gauss.iter().map(|&x| mid + half * x));
        out.push(pts);
    }
    Ok(out)
}

/// theta for a solution iterate: residual sampling plus windowed clamping.
pub fn compute_theta(
    problem: &ProblemSpec,
    disc: &Discretization,
    coeffs: &[f64],
) -> Result<ThetaField> {
    let sample = sample_residual(problem, disc, coeffs)?;
    Ok(theta_from_residuals(
        breakpoint_grids(disc),
        &sample,
        problem.final_time,
    ))
}

/// Time-direction weighted product matrix
/// `(i, j) = row_coef[i] * integral w(t) b_j^(deriv_col) b_i^(deriv_row)`.
pub fn time_weighted_product(
    space: &SplineSpace,
    table: &UnivariateTable,
    weight: &dyn Fn(f64) -> f64,
    deriv_row: usize,
    deriv_col: usize,
    row_coef: Option<&[f64]>,
) -> SparseMatrix {
    let dim = space.dim();
    let mut triplets = Vec::new();
    for span in &table.spans {
        for (pt, &w) in span.weights.iter().enumerate() {
            let scale = w * weight(span.points[pt]);
            if scale == 0.0 {
                continue;
            }
            for a in 0..table.num_local {
                let Some(i) = space.active_index(span.first + a) else {
                    continue;
                };
                let coef = row_coef.map_or(1.0, |c| c[i]);
                let vi = span.value(pt, deriv_row, a);
                if coef == 0.0 || vi == 0.0 {
                    continue;
                }
                for b in 0..table.num_local {
                    let Some(j) = space.active_index(span.first + b) else {
                        continue;
                    };
                    triplets.push((i, j, scale * coef * vi * span.value(pt, deriv_col, b)));
                }
            }
        }
    }
    SparseMatrix::from_triplets(dim, dim, triplets)
}

/// SU contributions for the time-only problems (advection and
/// advection-diffusion): the matrix terms
///   diag(c_i h) D^(1)                                  (always active)
///   sum_{k>=2} tau_{i,k} h^(2k-1) theta-weighted D^(k)
///   -eps c_i h (1-theta)-weighted (d1, d2) product     (advection-diffusion)
/// and the right-hand side `c_i h integral (1-theta) f b_i'`.
pub fn su_time_operators(
    problem: &ProblemSpec,
    blocks: &TimeBlocks,
    table: &StabilizationTable,
    quad_table: &UnivariateTable,
    load_table: &UnivariateTable,
    theta: &ThetaField,
) -> Result<(SparseMatrix, Vec<f64>)> {
    let space = &blocks.space;
    let ht = table.ht;
    let c1: Vec<f64> = table
        .su_first_order_coefficients()
        .iter()
        .map(|c| c * ht)
        .collect();
    let mut matrix = blocks.dt[0].scale_rows(&c1);

    let theta_t = |t: f64| theta.eval(&[t]);
    for k in 1..table.degree {
        let scale = ht.powi(2 * (k as i32 + 1) - 1);
        let coef: Vec<f64> = table.tau.iter().map(|row| row[k] * scale).collect();
        let term = time_weighted_product(space, quad_table, &theta_t, k + 1, k + 1, Some(&coef));
        matrix = matrix.add_scaled(&term, 1.0);
    }
    if let ProblemKind::AdvectionDiffusion { epsilon } = problem.kind {
        let one_minus = |t: f64| 1.0 - theta.eval(&[t]);
        let term = time_weighted_product(space, quad_table, &one_minus, 1, 2, Some(&c1));
        matrix = matrix.add_scaled(&term, -epsilon);
    }
    let forcing = problem.forcing.clone();
    let f_time = move |t: f64| forcing(&[], t);
    let rhs = crate::assembly::time_load(
        space,
        load_table,
        &f_time,
        1,
        Some(&c1),
        Some(&|t| 1.0 - theta.eval(&[t])),
    )?;
    Ok((matrix, rhs))
}

/// SUPG contributions for the time-only problems: the consistent residual
/// stabilization `tau_supg * integral (L u - f) v'`.
pub fn supg_time_operators(
    problem: &ProblemSpec,
    blocks: &TimeBlocks,
    load_table: &UnivariateTable,
    tau_supg: f64,
) -> Result<(SparseMatrix, Vec<f64>)> {
    let space = &blocks.space;
    let mut matrix = blocks.dt[0].scale(tau_supg);
    if let ProblemKind::AdvectionDiffusion { epsilon } = problem.kind {
        let e = crate::assembly::assemble_univariate(space, 1, 2)?;
        matrix = matrix.add_scaled(&e, -tau_supg * epsilon);
    }
    let forcing = problem.forcing.clone();
    let f_time = move |t: f64| forcing(&[], t);
    let rhs = crate::assembly::time_load(space, load_table, &f_time, 1, None, None)?
        .iter()
        .map(|v| v * tau_supg)
        .collect();
    Ok((matrix, rhs))
}

/// Nonlinear shock-capturing diffusion for 1D advection:
/// `integral kappa u' v'` with `kappa = tau_sc |u_prev' - f| / u_ref`
/// evaluated pointwise from the previous iterate. Without an iterate the
/// contribution is zero.
pub fn shock_capturing_operator(
    problem: &ProblemSpec,
    disc: &Discretization,
    quad_table: &UnivariateTable,
    tau_sc: f64,
    u_prev: Option<&[f64]>,
    u_ref_floor: f64,
) -> Result<SparseMatrix> {
    let space = &disc.time;
    let dim = space.dim();
    let Some(prev) = u_prev else {
        return Ok(SparseMatrix::zeros(dim, dim));
    };
    if !(u_ref_floor > 0.0) {
        return Err(Error::InvalidParameter(
            "shock-capturing reference magnitude must be positive".into(),
        ));
    }
    let field = SolutionField::new(disc, prev);
    let mut u_ref = u_ref_floor;
    for span in &quad_table.spans {
        for &t in &span.points {
            u_ref = u_ref.max(field.value(&[], t)?.abs());
        }
    }
    let forcing = problem.forcing.clone();
    let kappa = move |t: f64| -> f64 {
        let (td, _) = field.eval(&[], t, 1, false).unwrap();
        tau_sc * (td[1] - forcing(&[], t)).abs() / u_ref
    };
    Ok(time_weighted_product(space, quad_table, &kappa, 1, 1, None))
}

/// The theta-weighted space-time SU terms for the heat equation, accumulated
/// into the banded system matrix:
///   c_i h       theta Lap(B_j) dtB_i
///   tau_{i,k}   h^(2k-1) theta dt^k B_j dt^k B_i            (k >= 2)
///   sigma_{i,k} h^(2k) theta grad(dt^k B_j) . grad(dt^k B_i)
pub fn su_heat_quadrature_terms(
    spatial: &SpatialCache,
    time_space: &SplineSpace,
    time_table: &UnivariateTable,
    table: &StabilizationTable,
    theta: &ThetaField,
    out: &mut BandedMatrix,
) {
    let ns = spatial.layout.len();
    let d = spatial.dim();
    let p = table.degree;
    let ht = table.ht;
    let c1: Vec<f64> = table
        .su_first_order_coefficients()
        .iter()
        .map(|c| c * ht)
        .collect();
    let tau_pow: Vec<Vec<f64>> = (1..p)
        .map(|k| {
            let scale = ht.powi(2 * (k as i32 + 1) - 1);
            table.tau.iter().map(|row| row[k] * scale).collect()
        })
        .collect();
    let sigma_pow: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            let scale = ht.powi(2 * (k as i32 + 1));
            table.sigma.iter().map(|row| row[k] * scale).collect()
        })
        .collect();

    let nl_t = time_table.num_local;
    let nl_s = spatial.num_local;
    let nl = nl_t * nl_s;
    let mut rows: Vec<(usize, usize)> = Vec::with_capacity(nl);
    let mut test_dt = vec![0.0_f64; nl];
    let mut trial_lap = vec![0.0_f64; nl];
    let mut tk = vec![vec![0.0_f64; nl]; p];
    let mut gk = vec![vec![0.0_f64; nl * 2]; p];
    let mut ut = vec![0.0_f64; p];
    let mut us = vec![0.0_f64; 2 * p];
    let mut local = vec![0.0_f64; nl * nl];

    for tspan in &time_table.spans {
        for cell in &spatial.cells {
            // Global row indices depend only on the (time span, cell) pair.
            rows.clear();
            for tl in 0..nl_t {
                let it = time_space.active_index(tspan.first + tl);
                for is in &cell.active {
                    match (it, is) {
                        (Some(it), Some(is)) => rows.push((it * ns + is, it)),
                        _ => rows.push((usize::MAX, 0)),
                    }
                }
            }
            local.iter_mut().for_each(|v| *v = 0.0);
            let mut touched = false;
            for (tp, &wt) in tspan.weights.iter().enumerate() {
                let t = tspan.points[tp];
                for pt in &cell.points {
                    let mut eta_t = [0.0_f64; 3];
                    eta_t[..d].copy_from_slice(&pt.eta[..d]);
                    eta_t[d] = t;
                    let th = theta.eval(&eta_t[..=d]);
                    if th == 0.0 {
                        continue;
                    }
                    touched = true;
                    let w = wt * pt.weight_det * th;

                    for tl in 0..nl_t {
                        let bt0 = tspan.value(tp, 0, tl);
                        let bt1 = tspan.value(tp, 1, tl);
                        for sl in 0..nl_s {
                            let a = tl * nl_s + sl;
                            test_dt[a] = pt.value[sl] * bt1;
                            trial_lap[a] = pt.lap[sl] * bt0;
                        }
                        for k in 0..p {
                            let btk = tspan.value(tp, k + 1, tl);
                            for sl in 0..nl_s {
                                let a = tl * nl_s + sl;
                                tk[k][a] = pt.value[sl] * btk;
                                gk[k][2 * a] = pt.grad[sl][0] * btk;
                                gk[k][2 * a + 1] = pt.grad[sl][1] * btk;
                            }
                        }
                    }

                    for (ai, &(gi, it)) in rows.iter().enumerate() {
                        if gi == usize::MAX {
                            continue;
                        }
                        let u1 = w * c1[it] * test_dt[ai];
                        for k in 1..p {
                            ut[k] = w * tau_pow[k - 1][it] * tk[k][ai];
                        }
                        for k in 0..p {
                            let s = w * sigma_pow[k][it];
                            us[2 * k] = s * gk[k][2 * ai];
                            us[2 * k + 1] = s * gk[k][2 * ai + 1];
                        }
                        let row = &mut local[ai * nl..(ai + 1) * nl];
                        for (aj, slot) in row.iter_mut().enumerate() {
                            let mut v = u1 * trial_lap[aj];
                            for k in 1..p {
                                v += ut[k] * tk[k][aj];
                            }
                            for k in 0..p {
                                v += us[2 * k] * gk[k][2 * aj];
                                if d == 2 {
                                    v += us[2 * k + 1] * gk[k][2 * aj + 1];
                                }
                            }
                            *slot += v;
                        }
                    }
                }
            }
            if !touched {
                continue;
            }
            for (ai, &(gi, _)) in rows.iter().enumerate() {
                if gi == usize::MAX {
                    continue;
                }
                for (aj, &(gj, _)) in rows.iter().enumerate() {
                    if gj == usize::MAX {
                        continue;
                    }
                    let v = local[ai * nl + aj];
                    if v != 0.0 {
                        out.add(gi, gj, v);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{advection_diffusion_benchmark, smooth_advection_benchmark};
    use crate::splines::KnotVector;
    use approx::assert_relative_eq;

    fn time_space(p: usize, elements: usize, drop_last: bool) -> SplineSpace {
        let kv = KnotVector::open_uniform(p, elements, 0.0, 1.0).unwrap();
        SplineSpace::new(kv, true, drop_last).unwrap()
    }

    #[test]
    fn tau_p1_uniform_is_half() {
        let blocks = TimeBlocks::new(&time_space(1, 8, false)).unwrap();
        let table = compute_tables(&blocks).unwrap();
        let nt = table.num_rows();
        for i in 0..nt - 1 {
            assert_relative_eq!(table.tau[i][0], 0.5, epsilon = 1e-12);
        }
        assert_eq!(table.tau[nt - 1][0], 0.0);
    }

    #[test]
    fn sigma_p1_uniform_is_one_sixth() {
        let blocks = TimeBlocks::new(&time_space(1, 8, false)).unwrap();
        let table = compute_tables(&blocks).unwrap();
        let nt = table.num_rows();
        for i in 0..nt - 1 {
            assert_relative_eq!(table.sigma[i][0], 1.0 / 6.0, epsilon = 1e-12);
        }
        assert_eq!(table.sigma[nt - 1][0], 0.0);
    }

    #[test]
    fn stabilized_matrices_are_lower_triangular() {
        for p in 1..=4usize {
            let blocks = TimeBlocks::new(&time_space(p, 17, false)).unwrap();
            let table = compute_tables(&blocks).unwrap();
            let wt_stab = blocks.wt.add_scaled(&ncsu_matrix(&table, &blocks), 1.0);
            let mt_stab = blocks.mt.add_scaled(&sigma_matrix(&table, &blocks), 1.0);
            assert!(
                wt_stab.strict_upper_max_abs() <= 1e-10 * blocks.wt.inf_norm(),
                "p={p} upper={}",
                wt_stab.strict_upper_max_abs()
            );
            assert!(
                mt_stab.strict_upper_max_abs() <= 1e-10 * blocks.mt.inf_norm(),
                "p={p} upper={}",
                mt_stab.strict_upper_max_abs()
            );
        }
    }

    #[test]
    fn sigma_triangular_p3_nt20() {
        // 20 dofs: 18 elements at p = 3 with the first function dropped.
        let blocks = TimeBlocks::new(&time_space(3, 18, false)).unwrap();
        assert_eq!(blocks.wt.nrows(), 20);
        let table = compute_tables(&blocks).unwrap();
        let mt_stab = blocks.mt.add_scaled(&sigma_matrix(&table, &blocks), 1.0);
        assert!(mt_stab.strict_upper_max_abs() <= 1e-10 * blocks.mt.inf_norm());
    }

    #[test]
    fn tau_positive_and_ordered_up_to_p4() {
        for p in 1..=4usize {
            let blocks = TimeBlocks::new(&time_space(p, 10, false)).unwrap();
            let table = compute_tables(&blocks).unwrap();
            for i in 0..table.num_rows() {
                let r = table.active_len(i);
                for k in 0..r {
                    assert!(
                        table.tau[i][k] > 0.0,
                        "p={p} tau[{i}][{k}]={}",
                        table.tau[i][k]
                    );
                    if k > 0 {
                        assert!(
                            table.tau[i][k].abs() <= table.tau[i][k - 1].abs() + 1e-14,
                            "p={p} row {i}: |tau_{}| > |tau_{}|",
                            k + 1,
                            k
                        );
                    }
                }
                for k in r..p {
                    assert_eq!(table.tau[i][k], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_table_gives_zero_ncsu() {
        let blocks = TimeBlocks::new(&time_space(2, 6, false)).unwrap();
        let mut table = compute_tables(&blocks).unwrap();
        for row in table.tau.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        let s = ncsu_matrix(&table, &blocks);
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn su_first_order_coefficients_extend_last_row() {
        let blocks = TimeBlocks::new(&time_space(1, 8, false)).unwrap();
        let table = compute_tables(&blocks).unwrap();
        let c = table.su_first_order_coefficients();
        assert!(c.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn theta_field_interpolation() {
        let grids = vec![vec![0.0, 0.5, 1.0]];
        let theta = ThetaField::new(grids, vec![0.0, 1.0, 0.5]);
        assert_relative_eq!(theta.eval(&[0.0]), 0.0);
        assert_relative_eq!(theta.eval(&[0.5]), 1.0);
        assert_relative_eq!(theta.eval(&[0.25]), 0.5);
        assert_relative_eq!(theta.eval(&[0.75]), 0.75);
        // Clamped outside.
        assert_relative_eq!(theta.eval(&[-1.0]), 0.0);
        assert_relative_eq!(theta.eval(&[2.0]), 0.5);
        assert_relative_eq!(theta.mean(), 0.5);
    }

    #[test]
    fn theta_field_bilinear() {
        let grids = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        let theta = ThetaField::new(grids, vec![0.0, 1.0, 0.0, 1.0]);
        // Values vary along the first dimension only.
        assert_relative_eq!(theta.eval(&[0.25, 0.7]), 0.25);
        assert_relative_eq!(theta.eval(&[1.0, 0.0]), 1.0);
    }

    #[test]
    fn theta_from_residuals_clamps_and_windows() {
        let grids = vec![vec![0.0, 0.25, 0.5, 0.75, 1.0]];
        let sample = ResidualSample {
            cell_dims: vec![4],
            cell_max: vec![0.0, 4.0, 0.4, 0.0],
            sup_u: 0.0,
            sup_dt: 1.0,
        };
        let theta = theta_from_residuals(grids, &sample, 1.0);
        // Node 0 sees cell 0 only; node 1 sees cells 0-1; node 4 sees cell 3.
        assert_relative_eq!(theta.values()[0], 0.0);
        assert_relative_eq!(theta.values()[1], 1.0);
        assert_relative_eq!(theta.values()[2], 1.0);
        assert_relative_eq!(theta.values()[3], 0.4);
        assert_relative_eq!(theta.values()[4], 0.0);
    }

    #[test]
    fn theta_zero_denominator_falls_back_to_one() {
        let grids = vec![vec![0.0, 0.5, 1.0]];
        let sample = ResidualSample {
            cell_dims: vec![2],
            cell_max: vec![0.0, 0.0],
            sup_u: 0.0,
            sup_dt: 0.0,
        };
        let theta = theta_from_residuals(grids, &sample, 1.0);
        assert!(theta.all_one());
    }

    #[test]
    fn supg_zero_tau_is_plain_galerkin() {
        let problem = smooth_advection_benchmark();
        let space = time_space(2, 8, false);
        let blocks = TimeBlocks::new(&space).unwrap();
        let table = UnivariateTable::quadrature(&space, 3, 2).unwrap();
        let (m, rhs) = supg_time_operators(&problem, &blocks, &table, 0.0).unwrap();
        assert_eq!(m.max_abs(), 0.0);
        assert!(rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn advdiff_supg_includes_second_derivative_term() {
        let problem = advection_diffusion_benchmark();
        let space = time_space(2, 8, true);
        let blocks = TimeBlocks::new(&space).unwrap();
        let table = UnivariateTable::quadrature(&space, 3, 2).unwrap();
        let (m, _) = supg_time_operators(&problem, &blocks, &table, 0.1).unwrap();
        let d1 = blocks.dt[0].scale(0.1);
        // The epsilon term is tiny but must be present.
        let diff = m.add_scaled(&d1, -1.0);
        assert!(diff.max_abs() > 0.0);
        assert!(diff.max_abs() < 1e-4);
    }

    #[test]
    fn shock_capturing_zero_without_iterate_and_constant_case() {
        let problem = smooth_advection_benchmark();
        let disc = crate::problems::Discretization::uniform(&problem, 1, 8).unwrap();
        let table = UnivariateTable::quadrature(&disc.time, 2, 1).unwrap();
        let z = shock_capturing_operator(&problem, &disc, &table, 0.25, None, 1e-12).unwrap();
        assert_eq!(z.max_abs(), 0.0);

        // u_prev = 0, f = c: kappa = tau_sc |c| / u_ref, a constant, so the
        // contribution is that constant times D^(1).
        let problem = ProblemSpec {
            forcing: std::sync::Arc::new(|_, _| 3.0),
            ..smooth_advection_benchmark()
        };
        let zero = vec![0.0; disc.num_dof()];
        let tau_sc = 0.25;
        let u_ref = 1e-12;
        let sc =
            shock_capturing_operator(&problem, &disc, &table, tau_sc, Some(&zero), u_ref).unwrap();
        let blocks = TimeBlocks::new(&disc.time).unwrap();
        let expected = blocks.dt[0].scale(tau_sc * 3.0 / u_ref);
        let diff = sc.add_scaled(&expected, -1.0);
        assert!(diff.max_abs() <= 1e-10 * expected.max_abs());

        assert!(
            shock_capturing_operator(&problem, &disc, &table, tau_sc, Some(&zero), 0.0).is_err()
        );
    }
}
