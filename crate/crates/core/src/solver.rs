//! Linear solves (direct and block forward substitution in time) and the
//! outer fixed-point loop for the nonlinear stabilizations.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::assembly::{
    kron_to_banded, spacetime_bandwidth, spacetime_load, time_load, SpatialBlocks, SpatialCache,
    TimeBlocks, UnivariateTable,
};
use crate::error::{Error, Result};
use crate::problems::{Discretization, ProblemKind, ProblemSpec};
use crate::sparse::{BandedMatrix, SparseMatrix};
use crate::stabilization::{
    self, breakpoint_grids, ncsu_matrix, sigma_matrix, StabilizationTable, ThetaField,
};

/// Relative-residual bound enforced after every direct solve.
pub const DIRECT_SOLVE_RESIDUAL: f64 = 1e-10;
/// Strict-upper-triangle bound used to verify triangular factors.
pub const TRIANGULARITY_TOL: f64 = 1e-10;

/// Numerical method selector.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Galerkin,
    /// SUPG; `tau` defaults to h_t / 2.
    Supg {
        tau: Option<f64>,
    },
    /// SUPG plus nonlinear shock capturing; `tau_sc` defaults to h_t^2 / 4.
    SupgSc {
        tau: Option<f64>,
        tau_sc: Option<f64>,
    },
    Ncsu,
    Su,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Galerkin => "galerkin",
            Method::Supg { .. } => "supg",
            Method::SupgSc { .. } => "supg_sc",
            Method::Ncsu => "ncsu",
            Method::Su => "su",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "galerkin" => Ok(Method::Galerkin),
            "supg" => Ok(Method::Supg { tau: None }),
            "supg_sc" => Ok(Method::SupgSc {
                tau: None,
                tau_sc: None,
            }),
            "ncsu" => Ok(Method::Ncsu),
            "su" => Ok(Method::Su),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected galerkin, supg, supg_sc, ncsu or su)"
            ))),
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(self, Method::SupgSc { .. } | Method::Su)
    }
}

/// Fixed-point options; tolerance applies to the max-norm change of theta
/// (or, for shock capturing, the relative solution change).
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub fp_tolerance: f64,
    pub fp_max_iter: usize,
    /// Relaxation factor for the theta update (1 = undamped).
    pub damping: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            fp_tolerance: 1e-3,
            fp_max_iter: 20,
            damping: 1.0,
        }
    }
}

/// Outcome of the nonlinear iteration.
#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub iterations: usize,
    pub theta_changes: Vec<f64>,
    pub solution_changes: Vec<f64>,
    pub converged: bool,
}

impl FixedPointReport {
    fn single() -> Self {
        Self {
            iterations: 1,
            theta_changes: Vec::new(),
            solution_changes: Vec::new(),
            converged: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub coefficients: Vec<f64>,
    pub theta: Option<ThetaField>,
    pub report: FixedPointReport,
}

/// Explicit system representation for the direct path.
#[derive(Debug, Clone)]
pub enum SystemMatrix {
    Sparse(SparseMatrix),
    Banded(BandedMatrix),
}

impl SystemMatrix {
    pub fn nrows(&self) -> usize {
        match self {
            SystemMatrix::Sparse(m) => m.nrows(),
            SystemMatrix::Banded(m) => m.n(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SystemMatrix::Sparse(m) => m.matvec(x),
            SystemMatrix::Banded(m) => m.matvec(x),
        }
    }
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Direct solve with a post-hoc relative residual check.
pub fn solve_direct(matrix: &SystemMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let x = match matrix {
        SystemMatrix::Sparse(m) => {
            let dense = m.to_dense();
            let lu = dense.lu();
            let sol = lu
                .solve(&DVector::from_column_slice(rhs))
                .ok_or_else(|| Error::Solver("singular sparse system".into()))?;
            sol.as_slice().to_vec()
        }
        SystemMatrix::Banded(m) => {
            let lu = m.clone().lu()?;
            let x = lu.solve(rhs);
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Solver(format!(
                    "non-finite solution (pivot ratio {:e})",
                    lu.pivot_ratio
                )));
            }
            x
        }
    };
    let residual = matrix
        .matvec(&x)
        .iter()
        .zip(rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = vec_norm(rhs).max(f64::MIN_POSITIVE);
    if residual / scale > DIRECT_SOLVE_RESIDUAL {
        return Err(Error::Solver(format!(
            "direct solve residual {:.3e} exceeds {:.1e} (ill-conditioned system)",
            residual / scale,
            DIRECT_SOLVE_RESIDUAL
        )));
    }
    Ok(x)
}

/// Block forward substitution over time indices: both time factors must be
/// lower triangular (verified). Each step solves one spatial system
/// `(wt[i,i] Ms + mt[i,i] Ks) u_i = r_i`; factorizations are cached per
/// distinct diagonal pair.
pub fn solve_block_triangular(
    wt: &SparseMatrix,
    mt: &SparseMatrix,
    ms: &SparseMatrix,
    ks: &SparseMatrix,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    for m in [wt, mt] {
        let upper = m.strict_upper_max_abs();
        if upper > TRIANGULARITY_TOL * m.inf_norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NotLowerTriangular(upper));
        }
    }
    let nt = wt.nrows();
    let ns = ms.nrows();
    if rhs.len() != nt * ns {
        return Err(Error::ShapeMismatch(format!(
            "rhs length {} != ns*nt = {}*{}",
            rhs.len(),
            ns,
            nt
        )));
    }
    let ms_d = ms.to_dense();
    let ks_d = ks.to_dense();
    let mut factor_cache: HashMap<(u64, u64), nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> =
        HashMap::new();
    let mut u = vec![0.0_f64; nt * ns];
    let mut ms_u: Vec<DVector<f64>> = Vec::with_capacity(nt);
    let mut ks_u: Vec<DVector<f64>> = Vec::with_capacity(nt);
    for i in 0..nt {
        let mut r = DVector::from_column_slice(&rhs[i * ns..(i + 1) * ns]);
        let (cols_w, vals_w) = wt.row(i);
        for (&j, &w) in cols_w.iter().zip(vals_w) {
            if j < i && w != 0.0 {
                r.axpy(-w, &ms_u[j], 1.0);
            }
        }
        let (cols_m, vals_m) = mt.row(i);
        for (&j, &m) in cols_m.iter().zip(vals_m) {
            if j < i && m != 0.0 {
                r.axpy(-m, &ks_u[j], 1.0);
            }
        }
        let a = wt.get(i, i);
        let b = mt.get(i, i);
        let key = (a.to_bits(), b.to_bits());
        let lu = match factor_cache.entry(key) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let block = &ms_d * a + &ks_d * b;
                e.insert(block.lu())
            }
        };
        let ui = lu.solve(&r).ok_or(Error::SingularSpatialBlock(i))?;
        u[i * ns..(i + 1) * ns].copy_from_slice(ui.as_slice());
        ms_u.push(&ms_d * &ui);
        ks_u.push(&ks_d * &ui);
    }
    Ok(u)
}

/// Assembled ingredients for the time-only problems.
pub struct TimeOnlySystem {
    pub blocks: TimeBlocks,
    pub quad_table: UnivariateTable,
    /// Load quadrature: composite when the forcing has sub-mesh features.
    pub load_table: UnivariateTable,
    pub table: Option<StabilizationTable>,
}

impl TimeOnlySystem {
    pub fn new(problem: &ProblemSpec, disc: &Discretization, need_table: bool) -> Result<Self> {
        let blocks = TimeBlocks::new(&disc.time)?;
        let p = disc.degree();
        let quad_table = UnivariateTable::quadrature(&disc.time, p + 1, p)?;
        let subdivisions = load_subdivisions(problem, disc.ht());
        let load_table = if subdivisions > 1 {
            UnivariateTable::quadrature_composite(&disc.time, p + 1, subdivisions, p)?
        } else {
            quad_table.clone()
        };
        let table = if need_table {
            Some(stabilization::tables_for_space(&disc.time)?)
        } else {
            None
        };
        Ok(Self {
            blocks,
            quad_table,
            load_table,
            table,
        })
    }

    /// Galerkin part: W (+ eps D1 for advection-diffusion) and the load.
    pub fn galerkin(&self, problem: &ProblemSpec) -> Result<(SparseMatrix, Vec<f64>)> {
        let mut matrix = self.blocks.wt.clone();
        if let ProblemKind::AdvectionDiffusion { epsilon } = problem.kind {
            matrix = matrix.add_scaled(&self.blocks.dt[0], epsilon);
        }
        let forcing = problem.forcing.clone();
        let f_time = move |t: f64| forcing(&[], t);
        let rhs = time_load(&self.blocks.space, &self.load_table, &f_time, 0, None, None)?;
        Ok((matrix, rhs))
    }
}

/// Assembled ingredients for the heat problems.
pub struct HeatSystem {
    pub time_blocks: TimeBlocks,
    pub spatial_cache: SpatialCache,
    pub spatial: SpatialBlocks,
    pub time_table: UnivariateTable,
    pub table: Option<StabilizationTable>,
    pub band: usize,
}

impl HeatSystem {
    pub fn new(problem: &ProblemSpec, disc: &Discretization, need_table: bool) -> Result<Self> {
        debug_assert_eq!(problem.kind, ProblemKind::Heat);
        let p = disc.degree();
        let time_blocks = TimeBlocks::new(&disc.time)?;
        let geometry = disc
            .geometry
            .as_ref()
            .ok_or_else(|| Error::Config("heat problems require a geometry map".into()))?;
        let spatial_cache = SpatialCache::quadrature(&disc.spaces, geometry, p + 1)?;
        let spatial = SpatialBlocks::new(&spatial_cache);
        let time_table = UnivariateTable::quadrature(&disc.time, p + 1, p)?;
        let table = if need_table {
            Some(stabilization::compute_tables(&time_blocks)?)
        } else {
            None
        };
        let band = spacetime_bandwidth(&time_blocks.mt, spatial.ms.bandwidth(), spatial.ms.nrows());
        Ok(Self {
            time_blocks,
            spatial_cache,
            spatial,
            time_table,
            table,
            band,
        })
    }

    pub fn galerkin_rhs(&self, problem: &ProblemSpec, disc: &Discretization) -> Result<Vec<f64>> {
        spacetime_load(
            &self.spatial_cache,
            &disc.time,
            &self.time_table,
            problem.forcing.as_ref(),
            0,
            None,
            None,
        )
    }

    /// Time factors of the theta = 1 (fully upwinded) system: both lower
    /// triangular by construction of the parameter tables.
    pub fn upwinded_time_factors(&self) -> (SparseMatrix, SparseMatrix) {
        let table = self.table.as_ref().expect("stabilization table required");
        let ht = table.ht;
        let c1: Vec<f64> = table
            .su_first_order_coefficients()
            .iter()
            .map(|c| c * ht)
            .collect();
        // W + c1 h D1 + sum_{k>=2} tau_k h^(2k-1) D^k.
        let mut wt = self
            .time_blocks
            .wt
            .add_scaled(&self.time_blocks.dt[0].scale_rows(&c1), 1.0);
        for k in 1..table.degree {
            let scale = ht.powi(2 * (k as i32 + 1) - 1);
            let coef: Vec<f64> = table.tau.iter().map(|row| row[k] * scale).collect();
            wt = wt.add_scaled(&self.time_blocks.dt[k].scale_rows(&coef), 1.0);
        }
        let mt = self
            .time_blocks
            .mt
            .add_scaled(&sigma_matrix(table, &self.time_blocks), 1.0);
        (wt, mt)
    }

    /// Assembles the full system matrix and right-hand side for a method and
    /// a given theta field.
    pub fn build(
        &self,
        problem: &ProblemSpec,
        disc: &Discretization,
        method: &Method,
        theta: Option<&ThetaField>,
    ) -> Result<(BandedMatrix, Vec<f64>)> {
        let wt = &self.time_blocks.wt;
        let mt = &self.time_blocks.mt;
        let d1 = &self.time_blocks.dt[0];
        let ms = &self.spatial.ms;
        let ks = &self.spatial.ks;
        let mut rhs = self.galerkin_rhs(problem, disc)?;
        match method {
            Method::Galerkin => Ok((kron_to_banded(&[(wt, ms), (mt, ks)], self.band), rhs)),
            Method::Supg { tau } => {
                let tau = tau.unwrap_or(self.time_blocks.ht / 2.0);
                let d1_tau = d1.scale(tau);
                let wt_t = wt.transpose().scale(tau);
                let matrix =
                    kron_to_banded(&[(wt, ms), (mt, ks), (&d1_tau, ms), (&wt_t, ks)], self.band);
                let supg_rhs = spacetime_load(
                    &self.spatial_cache,
                    &disc.time,
                    &self.time_table,
                    problem.forcing.as_ref(),
                    1,
                    None,
                    None,
                )?;
                for (r, s) in rhs.iter_mut().zip(&supg_rhs) {
                    *r += tau * s;
                }
                Ok((matrix, rhs))
            }
            Method::Ncsu | Method::Su => {
                let table = self.table.as_ref().ok_or_else(|| {
                    Error::Config("upwind methods need the stabilization table".into())
                })?;
                let theta = theta
                    .ok_or_else(|| Error::Config("upwind methods need a theta field".into()))?;
                let ht = table.ht;
                let c1: Vec<f64> = table
                    .su_first_order_coefficients()
                    .iter()
                    .map(|c| c * ht)
                    .collect();
                // Always-active first-order terms:
                //   diag(c1) D1 kron Ms   (upwind time diffusion)
                //   diag(c1) W^T kron Ks  (weight-1 part of the Laplacian term)
                let d1_c = d1.scale_rows(&c1);
                let wt_t_c = wt.transpose().scale_rows(&c1);
                let mut matrix =
                    kron_to_banded(&[(wt, ms), (mt, ks), (&d1_c, ms), (&wt_t_c, ks)], self.band);
                stabilization::su_heat_quadrature_terms(
                    &self.spatial_cache,
                    &disc.time,
                    &self.time_table,
                    table,
                    theta,
                    &mut matrix,
                );
                let d = self.spatial_cache.dim();
                let su_rhs = spacetime_load(
                    &self.spatial_cache,
                    &disc.time,
                    &self.time_table,
                    problem.forcing.as_ref(),
                    1,
                    Some(&c1),
                    Some(&|eta: &[f64], t: f64| {
                        let mut pt = [0.0_f64; 3];
                        pt[..d].copy_from_slice(eta);
                        pt[d] = t;
                        1.0 - theta.eval(&pt[..=d])
                    }),
                )?;
                for (r, s) in rhs.iter_mut().zip(&su_rhs) {
                    *r += s;
                }
                Ok((matrix, rhs))
            }
            Method::SupgSc { .. } => Err(Error::Config(
                "shock capturing applies to the 1D advection problem only".into(),
            )),
        }
    }
}

/// Builds the time-only system matrix and right-hand side for a method,
/// theta field and (for shock capturing) previous iterate.
pub fn build_time_system(
    problem: &ProblemSpec,
    disc: &Discretization,
    sys: &TimeOnlySystem,
    method: &Method,
    theta: Option<&ThetaField>,
    u_prev: Option<&[f64]>,
) -> Result<(SparseMatrix, Vec<f64>)> {
    let (mut matrix, mut rhs) = sys.galerkin(problem)?;
    match method {
        Method::Galerkin => {}
        Method::Supg { tau } => {
            let tau = tau.unwrap_or(sys.blocks.ht / 2.0);
            let (m, r) =
                stabilization::supg_time_operators(problem, &sys.blocks, &sys.load_table, tau)?;
            matrix = matrix.add_scaled(&m, 1.0);
            for (a, b) in rhs.iter_mut().zip(&r) {
                *a += b;
            }
        }
        Method::SupgSc { tau, tau_sc } => {
            if problem.kind != ProblemKind::Advection {
                return Err(Error::Config(
                    "shock capturing applies to the 1D advection problem only".into(),
                ));
            }
            let tau = tau.unwrap_or(sys.blocks.ht / 2.0);
            let tau_sc = tau_sc.unwrap_or(sys.blocks.ht * sys.blocks.ht / 4.0);
            let (m, r) =
                stabilization::supg_time_operators(problem, &sys.blocks, &sys.load_table, tau)?;
            matrix = matrix.add_scaled(&m, 1.0);
            for (a, b) in rhs.iter_mut().zip(&r) {
                *a += b;
            }
            let sc = stabilization::shock_capturing_operator(
                problem,
                disc,
                &sys.quad_table,
                tau_sc,
                u_prev,
                1e-12,
            )?;
            matrix = matrix.add_scaled(&sc, 1.0);
        }
        Method::Ncsu => {
            let table = sys.table.as_ref().ok_or_else(|| {
                Error::Config("upwind methods need the stabilization table".into())
            })?;
            if problem.kind != ProblemKind::Advection {
                return Err(Error::Config(
                    "the non-consistent upwind applies to the 1D advection problem only".into(),
                ));
            }
            matrix = matrix.add_scaled(&ncsu_matrix(table, &sys.blocks), 1.0);
        }
        Method::Su => {
            let table = sys.table.as_ref().ok_or_else(|| {
                Error::Config("upwind methods need the stabilization table".into())
            })?;
            let theta =
                theta.ok_or_else(|| Error::Config("upwind methods need a theta field".into()))?;
            let (m, r) = stabilization::su_time_operators(
                problem,
                &sys.blocks,
                table,
                &sys.quad_table,
                &sys.load_table,
                theta,
            )?;
            matrix = matrix.add_scaled(&m, 1.0);
            for (a, b) in rhs.iter_mut().zip(&r) {
                *a += b;
            }
        }
    }
    Ok((matrix, rhs))
}

/// Number of uniform subdivisions per span for load quadrature so the
/// sub-intervals resolve the forcing's smallest temporal feature.
fn load_subdivisions(problem: &ProblemSpec, ht: f64) -> usize {
    match problem.forcing_feature_scale {
        Some(scale) if scale > 0.0 => ((ht / scale).ceil() as usize).clamp(1, 256),
        _ => 1,
    }
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new
        .iter()
        .zip(old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / vec_norm(new).max(f64::MIN_POSITIVE)
}

/// Solves a problem with the requested method. Nonlinear methods (SU, shock
/// capturing) run fixed-point iterations: SU starts from theta = 1 (causal
/// triangular start) and stops when the max-norm theta change drops below
/// the tolerance; reaching the iteration cap returns the best iterate with
/// `converged = false`.
pub fn solve_problem(
    problem: &ProblemSpec,
    disc: &Discretization,
    method: &Method,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    if opts.fp_max_iter < 1 || !(opts.fp_tolerance > 0.0) {
        return Err(Error::InvalidParameter(
            "fixed-point iteration needs max_iter >= 1 and tolerance > 0".into(),
        ));
    }
    match problem.kind {
        ProblemKind::Heat => solve_heat(problem, disc, method, opts),
        _ => solve_time_only(problem, disc, method, opts),
    }
}

fn solve_time_only(
    problem: &ProblemSpec,
    disc: &Discretization,
    method: &Method,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    let need_table = matches!(method, Method::Ncsu | Method::Su);
    let sys = TimeOnlySystem::new(problem, disc, need_table)?;
    let grids = breakpoint_grids(disc);
    match method {
        Method::Galerkin | Method::Supg { .. } => {
            let (matrix, rhs) = build_time_system(problem, disc, &sys, method, None, None)?;
            let coefficients = solve_direct(&SystemMatrix::Sparse(matrix), &rhs)?;
            Ok(SolveOutcome {
                coefficients,
                theta: None,
                report: FixedPointReport::single(),
            })
        }
        Method::Ncsu => {
            let (matrix, rhs) = build_time_system(problem, disc, &sys, method, None, None)?;
            // The upwinded system is lower triangular: scalar forward
            // substitution (the trivial spatial block is 1x1).
            let nt = matrix.nrows();
            let mt_zero = SparseMatrix::zeros(nt, nt);
            let one = SparseMatrix::identity(1);
            let zero = SparseMatrix::zeros(1, 1);
            let coefficients = solve_block_triangular(&matrix, &mt_zero, &one, &zero, &rhs)?;
            Ok(SolveOutcome {
                coefficients,
                theta: Some(ThetaField::constant_on(grids, 1.0)),
                report: FixedPointReport::single(),
            })
        }
        Method::SupgSc { .. } => {
            // Fixed point on the shock-capturing coefficient, started from
            // the plain SUPG solution.
            let (matrix, rhs) = build_time_system(problem, disc, &sys, method, None, None)?;
            let mut u = solve_direct(&SystemMatrix::Sparse(matrix), &rhs)?;
            let mut report = FixedPointReport {
                iterations: 1,
                theta_changes: Vec::new(),
                solution_changes: Vec::new(),
                converged: false,
            };
            for _ in 1..=opts.fp_max_iter {
                let (matrix, rhs) = build_time_system(problem, disc, &sys, method, None, Some(&u))?;
                let next = solve_direct(&SystemMatrix::Sparse(matrix), &rhs)?;
                let change = relative_change(&next, &u);
                report.solution_changes.push(change);
                report.iterations += 1;
                u = next;
                if change <= opts.fp_tolerance {
                    report.converged = true;
                    break;
                }
            }
            Ok(SolveOutcome {
                coefficients: u,
                theta: None,
                report,
            })
        }
        Method::Su => {
            let mut theta = ThetaField::constant_on(grids, 1.0);
            let mut u: Option<Vec<f64>> = None;
            let mut best: Option<(f64, Vec<f64>, ThetaField)> = None;
            let mut report = FixedPointReport {
                iterations: 0,
                theta_changes: Vec::new(),
                solution_changes: Vec::new(),
                converged: false,
            };
            for _ in 0..opts.fp_max_iter {
                let (matrix, rhs) =
                    build_time_system(problem, disc, &sys, method, Some(&theta), None)?;
                let next = solve_direct(&SystemMatrix::Sparse(matrix), &rhs)?;
                report.iterations += 1;
                if let Some(prev) = &u {
                    report.solution_changes.push(relative_change(&next, prev));
                }
                let target = stabilization::compute_theta(problem, disc, &next)?;
                let new_theta = theta.relaxed_towards(&target, opts.damping);
                let change = new_theta.max_abs_diff(&theta);
                report.theta_changes.push(change);
                theta = new_theta;
                if best.as_ref().is_none_or(|(c, _, _)| change < *c) {
                    best = Some((change, next.clone(), theta.clone()));
                }
                u = Some(next);
                if change <= opts.fp_tolerance {
                    report.converged = true;
                    break;
                }
            }
            // On a capped run return the iterate with the smallest theta
            // change seen (the closest approach to the fixed point).
            let (coefficients, theta) = if report.converged {
                (u.unwrap(), theta)
            } else {
                let (_, bu, bt) = best.unwrap();
                (bu, bt)
            };
            Ok(SolveOutcome {
                coefficients,
                theta: Some(theta),
                report,
            })
        }
    }
}

fn solve_heat(
    problem: &ProblemSpec,
    disc: &Discretization,
    method: &Method,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    let need_table = matches!(method, Method::Ncsu | Method::Su);
    let sys = HeatSystem::new(problem, disc, need_table)?;
    let grids = breakpoint_grids(disc);
    match method {
        Method::Galerkin | Method::Supg { .. } => {
            let (matrix, rhs) = sys.build(problem, disc, method, None)?;
            let coefficients = solve_direct(&SystemMatrix::Banded(matrix), &rhs)?;
            Ok(SolveOutcome {
                coefficients,
                theta: None,
                report: FixedPointReport::single(),
            })
        }
        Method::Ncsu => {
            // theta held at 1: block lower triangular fast path.
            let theta = ThetaField::constant_on(grids, 1.0);
            let (_, rhs) = sys.build(problem, disc, &Method::Su, Some(&theta))?;
            let (wt, mt) = sys.upwinded_time_factors();
            let coefficients =
                solve_block_triangular(&wt, &mt, &sys.spatial.ms, &sys.spatial.ks, &rhs)?;
            Ok(SolveOutcome {
                coefficients,
                theta: Some(theta),
                report: FixedPointReport::single(),
            })
        }
        Method::Su => {
            let mut theta = ThetaField::constant_on(grids.clone(), 1.0);
            let mut u: Option<Vec<f64>> = None;
            let mut best: Option<(f64, Vec<f64>, ThetaField)> = None;
            let mut report = FixedPointReport {
                iterations: 0,
                theta_changes: Vec::new(),
                solution_changes: Vec::new(),
                converged: false,
            };
            for it in 0..opts.fp_max_iter {
                let next = if it == 0 {
                    // theta = 1 start: the causal triangular fast path.
                    let (_, rhs) = sys.build(problem, disc, method, Some(&theta))?;
                    let (wt, mt) = sys.upwinded_time_factors();
                    solve_block_triangular(&wt, &mt, &sys.spatial.ms, &sys.spatial.ks, &rhs)?
                } else {
                    let (matrix, rhs) = sys.build(problem, disc, method, Some(&theta))?;
                    solve_direct(&SystemMatrix::Banded(matrix), &rhs)?
                };
                report.iterations += 1;
                if let Some(prev) = &u {
                    report.solution_changes.push(relative_change(&next, prev));
                }
                let target = stabilization::compute_theta(problem, disc, &next)?;
                let new_theta = theta.relaxed_towards(&target, opts.damping);
                let change = new_theta.max_abs_diff(&theta);
                report.theta_changes.push(change);
                theta = new_theta;
                if best.as_ref().is_none_or(|(c, _, _)| change < *c) {
                    best = Some((change, next.clone(), theta.clone()));
                }
                u = Some(next);
                if change <= opts.fp_tolerance {
                    report.converged = true;
                    break;
                }
            }
            let (coefficients, theta) = if report.converged {
                (u.unwrap(), theta)
            } else {
                let (_, bu, bt) = best.unwrap();
                (bu, bt)
            };
            Ok(SolveOutcome {
                coefficients,
                theta: Some(theta),
                report,
            })
        }
        Method::SupgSc { .. } => Err(Error::Config(
            "shock capturing applies to the 1D advection problem only".into(),
        )),
    }
}
