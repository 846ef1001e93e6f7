//! Model problems: strong forms, benchmark forcings, exact solutions and
//! discretizations, plus evaluation of discrete solutions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{push_forward, GeometryMap};
use crate::splines::{KnotVector, SplineSpace, TensorLayout};

pub type ForcingFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    /// u' = f on (0, T), u(0) = 0.
    Advection,
    /// -eps u'' + u' = f on (0, T), u(0) = u(T) = 0.
    AdvectionDiffusion { epsilon: f64 },
    /// du/dt - Laplace(u) = f on Omega x (0, T), homogeneous data.
    Heat,
}

/// A concrete problem instance: strong form, domain, forcing, and (when
/// manufactured) the exact solution.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: ProblemKind,
    pub geometry: Option<GeometryMap>,
    pub final_time: f64,
    pub forcing: ForcingFn,
    pub exact: Option<ScalarFn>,
    pub exact_dt: Option<ScalarFn>,
    /// Smallest temporal feature width of the forcing, when it is sharp
    /// relative to any reasonable mesh; drives composite load quadrature.
    pub forcing_feature_scale: Option<f64>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("geometry", &self.geometry)
            .field("final_time", &self.final_time)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn spatial_dim(&self) -> usize {
        self.geometry.as_ref().map_or(0, |g| g.dim())
    }

    pub fn epsilon(&self) -> f64 {
        match self.kind {
            ProblemKind::AdvectionDiffusion { epsilon } => epsilon,
            _ => 0.0,
        }
    }
}

/// Advection with smooth manufactured solution sin(50 t).
pub fn smooth_advection_benchmark() -> ProblemSpec {
    ProblemSpec {
        name: "smooth_advection".into(),
        kind: ProblemKind::Advection,
        geometry: None,
        final_time: 1.0,
        forcing: Arc::new(|_, t| 50.0 * (50.0 * t).cos()),
        exact: Some(Arc::new(|t| (50.0 * t).sin())),
        exact_dt: Some(Arc::new(|t| 50.0 * (50.0 * t).cos())),
        forcing_feature_scale: None,
    }
}

/// Advection whose solution superposes sin(50 t) with three tanh fronts of
/// width 1e-3 at t = 0.3, 0.5, 0.7.
pub fn layered_advection_benchmark() -> ProblemSpec {
    const DELTA: f64 = 1e-3;
    const STEPS: [(f64, f64); 3] = [(0.3, 10.0), (0.5, -5.0), (0.7, -5.0)];
    fn u(t: f64) -> f64 {
        let mut v = (50.0 * t).sin();
        for (t0, amp) in STEPS {
            v += amp * (1.0 + ((t - t0) / DELTA).tanh()) / 2.0;
        }
        v
    }
    fn du(t: f64) -> f64 {
        let mut v = 50.0 * (50.0 * t).cos();
        for (t0, amp) in STEPS {
            let c = ((t - t0) / DELTA).cosh();
            // sech^2 underflows cleanly to zero far from the layer.
            let sech2 = if c.is_finite() { 1.0 / (c * c) } else { 0.0 };
            v += amp * sech2 / (2.0 * DELTA);
        }
        v
    }
    ProblemSpec {
        name: "layered_advection".into(),
        kind: ProblemKind::Advection,
        geometry: None,
        final_time: 1.0,
        forcing: Arc::new(|_, t| du(t)),
        exact: Some(Arc::new(u)),
        exact_dt: Some(Arc::new(du)),
        forcing_feature_scale: Some(DELTA),
    }
}

/// Advection-diffusion with eps = 1e-6 and unit forcing; the solution is
/// close to t away from the outflow layer at t = 1.
pub fn advection_diffusion_benchmark() -> ProblemSpec {
    ProblemSpec {
        name: "advdiff".into(),
        kind: ProblemKind::AdvectionDiffusion { epsilon: 1e-6 },
        geometry: None,
        final_time: 1.0,
        forcing: Arc::new(|_, _| 1.0),
        exact: None,
        exact_dt: None,
        forcing_feature_scale: None,
    }
}

/// Heat equation on (0,1) with a concentrated source oscillating in space,
/// active only for t in [0.3, 0.6].
pub fn heat_interval_benchmark() -> ProblemSpec {
    const DELTA: f64 = 1e-3;
    ProblemSpec {
        name: "heat_interval".into(),
        kind: ProblemKind::Heat,
        geometry: Some(GeometryMap::Interval { a: 0.0, b: 1.0 }),
        final_time: 1.0,
        forcing: Arc::new(|x, t| {
            if !(0.3..=0.6).contains(&t) {
                return 0.0;
            }
            let center = ((10.0 * std::f64::consts::PI * t).sin() + 2.0) / 4.0;
            let z = (x[0] - center) / DELTA;
            (-z * z).exp() / (DELTA * DELTA)
        }),
        exact: None,
        exact_dt: None,
        forcing_feature_scale: None,
    }
}

/// Heat equation on the quarter annulus with a Gaussian source travelling
/// along the mid-radius circle, active for t in [0.3, 0.6].
pub fn heat_annulus_benchmark() -> ProblemSpec {
    heat_annulus_benchmark_with_radii(1.0, 2.0)
}

pub fn heat_annulus_benchmark_with_radii(r_in: f64, r_out: f64) -> ProblemSpec {
    const DELTA: f64 = 0.1;
    ProblemSpec {
        name: "heat_annulus".into(),
        kind: ProblemKind::Heat,
        geometry: Some(GeometryMap::QuarterAnnulus { r_in, r_out }),
        final_time: 1.0,
        forcing: Arc::new(|x, t| {
            if !(0.3..=0.6).contains(&t) {
                return 0.0;
            }
            let angle = std::f64::consts::FRAC_PI_2 * t;
            let cx = 1.5 * angle.cos();
            let cy = 1.5 * angle.sin();
            let zx = (x[0] - cx) / DELTA;
            let zy = (x[1] - cy) / DELTA;
            1e3 / (2.0 * std::f64::consts::PI * DELTA * DELTA) * (-0.5 * (zx * zx + zy * zy)).exp()
        }),
        exact: None,
        exact_dt: None,
        forcing_feature_scale: None,
    }
}

pub fn benchmark_by_name(name: &str) -> Result<ProblemSpec> {
    match name {
        "smooth_advection" => Ok(smooth_advection_benchmark()),
        "layered_advection" => Ok(layered_advection_benchmark()),
        "advdiff" => Ok(advection_diffusion_benchmark()),
        "heat_interval" => Ok(heat_interval_benchmark()),
        "heat_annulus" => Ok(heat_annulus_benchmark()),
        other => Err(Error::Config(format!(
            "unknown problem '{other}' (expected smooth_advection, layered_advection, advdiff, heat_interval, heat_annulus or custom)"
        ))),
    }
}

/// Tensor-product discretization: one time space on [0, T] and, for heat
/// problems, parametric spatial spaces with homogeneous Dirichlet masks.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub time: SplineSpace,
    pub spaces: Vec<SplineSpace>,
    pub geometry: Option<GeometryMap>,
}

impl Discretization {
    /// Uniform mesh with the same number of elements per direction
    /// (h_s = h_t when T = 1 and the parametric domain is the unit cube).
    pub fn uniform(problem: &ProblemSpec, degree: usize, elements: usize) -> Result<Self> {
        let time_kv = KnotVector::open_uniform(degree, elements, 0.0, problem.final_time)?;
        let drop_last = matches!(problem.kind, ProblemKind::AdvectionDiffusion { .. });
        let time = SplineSpace::new(time_kv, true, drop_last)?;
        let mut spaces = Vec::new();
        if let Some(geometry) = &problem.geometry {
            for _ in 0..geometry.dim() {
                let kv = KnotVector::open_uniform(degree, elements, 0.0, 1.0)?;
                spaces.push(SplineSpace::new(kv, true, true)?);
            }
        }
        Ok(Self {
            time,
            spaces,
            geometry: problem.geometry.clone(),
        })
    }

    pub fn degree(&self) -> usize {
        self.time.degree()
    }

    pub fn ht(&self) -> f64 {
        self.time.mesh_size()
    }

    pub fn num_time_dof(&self) -> usize {
        self.time.dim()
    }

    pub fn num_space_dof(&self) -> usize {
        self.spaces.iter().map(|s| s.dim()).product()
    }

    pub fn num_dof(&self) -> usize {
        self.num_time_dof() * self.num_space_dof().max(1)
    }

    pub fn space_layout(&self) -> TensorLayout {
        TensorLayout::new(self.spaces.iter().map(|s| s.dim()).collect())
    }

    pub fn is_time_only(&self) -> bool {
        self.spaces.is_empty()
    }
}

/// A discrete solution: coefficient vector over the constrained tensor basis
/// in colex order (space fastest), evaluated through the geometry map.
pub struct SolutionField<'a> {
    pub disc: &'a Discretization,
    pub coeffs: &'a [f64],
}

impl<'a> SolutionField<'a> {
    pub fn new(disc: &'a Discretization, coeffs: &'a [f64]) -> Self {
        debug_assert_eq!(coeffs.len(), disc.num_dof());
        Self { disc, coeffs }
    }

    /// Time derivatives up to `max_time_deriv` (k = 0 is the value) and, when
    /// requested, the physical Laplacian, at parametric point `eta` and time
    /// `t`.
    pub fn eval(
        &self,
        eta: &[f64],
        t: f64,
        max_time_deriv: usize,
        want_laplacian: bool,
    ) -> Result<(Vec<f64>, f64)> {
        let disc = self.disc;
        let tb = disc.time.knot_vector().eval_basis(t, max_time_deriv)?;
        if disc.is_time_only() {
            let mut out = vec![0.0; max_time_deriv + 1];
            for (local, _) in tb.values[0].iter().enumerate() {
                if let Some(it) = disc.time.active_index(tb.first + local) {
                    for (k, slot) in out.iter_mut().enumerate() {
                        *slot += self.coeffs[it] * tb.values[k][local];
                    }
                }
            }
            return Ok((out, 0.0));
        }

        let geometry = disc.geometry.as_ref().unwrap();
        let d = geometry.dim();
        let layout = disc.space_layout();
        let ns = layout.len();
        let bases: Vec<_> = (0..d)
            .map(|l| disc.spaces[l].knot_vector().eval_basis(eta[l], 2))
            .collect::<Result<Vec<_>>>()?;
        let p1: Vec<usize> = (0..d).map(|l| disc.spaces[l].degree() + 1).collect();
        let local_layout = TensorLayout::new(p1);

        let mut time_derivs = vec![0.0; max_time_deriv + 1];
        let mut laplacian = 0.0;
        for l in 0..local_layout.len() {
            let lidx = local_layout.delinearize(l)?;
            let mut constrained = Vec::with_capacity(d);
            let mut active = true;
            for dir in 0..d {
                match disc.spaces[dir].active_index(bases[dir].first + lidx[dir]) {
                    Some(a) => constrained.push(a),
                    None => {
                        active = false;
                        break;
                    }
                }
            }
            if !active {
                continue;
            }
            let is = layout.linearize(&constrained)?;
            let mut v = 1.0;
            for dir in 0..d {
                v *= bases[dir].values[0][lidx[dir]];
            }
            let lap = if want_laplacian {
                let mut g_hat = [0.0_f64; 2];
                let mut h_hat = [[0.0_f64; 2]; 2];
                for a in 0..d {
                    let mut ga = 1.0;
                    for dir in 0..d {
                        ga *= bases[dir].values[usize::from(dir == a)][lidx[dir]];
                    }
                    g_hat[a] = ga;
                    for b in a..d {
                        let mut hb = 1.0;
                        for dir in 0..d {
                            let order = usize::from(dir == a) + usize::from(dir == b);
                            hb *= bases[dir].values[order][lidx[dir]];
                        }
                        h_hat[a][b] = hb;
                        h_hat[b][a] = hb;
                    }
                }
                let (_, lap) = push_forward(geometry, &eta[..d], &g_hat[..d], Some(&h_hat))?;
                lap.unwrap()
            } else {
                0.0
            };

            for (tl, _) in tb.values[0].iter().enumerate() {
                if let Some(it) = disc.time.active_index(tb.first + tl) {
                    let c = self.coeffs[it * ns + is];
                    if c == 0.0 {
                        continue;
                    }
                    for (k, slot) in time_derivs.iter_mut().enumerate() {
                        *slot += c * v * tb.values[k][tl];
                    }
                    laplacian += c * lap * tb.values[0][tl];
                }
            }
        }
        Ok((time_derivs, laplacian))
    }

    pub fn value(&self, eta: &[f64], t: f64) -> Result<f64> {
        Ok(self.eval(eta, t, 0, false)?.0[0])
    }

    /// Value at a physical point, via the inverse geometry map.
    pub fn value_at_physical(&self, x: &[f64], t: f64) -> Result<f64> {
        match &self.disc.geometry {
            None => self.value(&[], t),
            Some(g) => {
                let eta = g.inverse(x)?;
                self.value(&eta, t)
            }
        }
    }

    /// Pointwise strong residual |L u_h - f| of the problem's strong form.
    pub fn strong_residual(&self, problem: &ProblemSpec, eta: &[f64], t: f64) -> Result<f64> {
        match problem.kind {
            ProblemKind::Advection => {
                let (td, _) = self.eval(eta, t, 1, false)?;
                Ok((td[1] - (problem.forcing)(&[], t)).abs())
            }
            ProblemKind::AdvectionDiffusion { epsilon } => {
                let (td, _) = self.eval(eta, t, 2, false)?;
                Ok((-epsilon * td[2] + td[1] - (problem.forcing)(&[], t)).abs())
            }
            ProblemKind::Heat => {
                let (td, lap) = self.eval(eta, t, 1, true)?;
                let geometry = self.disc.geometry.as_ref().unwrap();
                let x = geometry.eval(eta);
                Ok((td[1] - lap - (problem.forcing)(&x[..geometry.dim()], t)).abs())
            }
        }
    }
}
