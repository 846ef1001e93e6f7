//! Experiment runner: configuration, benchmark execution and CSV/manifest
//! emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr;
use crate::metrics::{self, ConvergenceLevel};
use crate::problems::{benchmark_by_name, Discretization, ProblemKind, ProblemSpec, SolutionField};
use crate::solver::{solve_problem, Method, SolveOptions, SolveOutcome};
use crate::splines::{KnotVector, SplineSpace};
use crate::stabilization::{tables_for_space as compute_tables_for, ThetaField};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SPLINE_UPWIND_OUTDIR";

/// Resolved experiment configuration; every field lands in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: String,
    pub method: String,
    pub degree: usize,
    pub elements: usize,
    /// Levels (element counts) for convergence studies.
    pub level_elements: Vec<usize>,
    /// Degrees for convergence studies.
    pub degrees: Vec<usize>,
    pub tau_supg: Option<f64>,
    pub tau_sc: Option<f64>,
    pub fp_tolerance: f64,
    pub fp_max_iter: usize,
    pub fp_damping: f64,
    pub out_dir: Option<String>,
    /// Solution samples per knot span per direction.
    pub samples_per_span: usize,
    /// Error region [lo, hi] in time; defaults to the whole interval.
    pub error_region: Option<(f64, f64)>,
    /// Section line "x1,y1:x2,y2" for 2D heat problems.
    pub section: Option<String>,
    /// Custom problem pieces (used when problem = "custom").
    pub custom_kind: Option<String>,
    pub custom_forcing: Option<String>,
    pub custom_exact: Option<String>,
    pub custom_epsilon: Option<f64>,
    pub custom_final_time: Option<f64>,
    /// Drop the final time basis function when dumping stabilization tables.
    pub drop_last: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: "smooth_advection".into(),
            method: "su".into(),
            degree: 3,
            elements: 64,
            level_elements: Vec::new(),
            degrees: Vec::new(),
            tau_supg: None,
            tau_sc: None,
            fp_tolerance: 1e-3,
            fp_max_iter: 20,
            fp_damping: 1.0,
            out_dir: None,
            samples_per_span: 4,
            error_region: None,
            section: None,
            custom_kind: None,
            custom_forcing: None,
            custom_exact: None,
            custom_epsilon: None,
            custom_final_time: None,
            drop_last: false,
        }
    }
}

/// Manifest written next to every artifact set: the full resolved
/// configuration plus version and timing metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub command: String,
    pub timings_s: std::collections::BTreeMap<String, f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Accepts either a bare config or a manifest wrapping one.
    pub fn from_json_str(text: &str) -> Result<Self> {
        if let Ok(manifest) = serde_json::from_str::<RunManifest>(text) {
            return Ok(manifest.config);
        }
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            fp_tolerance: self.fp_tolerance,
            fp_max_iter: self.fp_max_iter,
            damping: self.fp_damping,
        }
    }

    pub fn method(&self) -> Result<Method> {
        let method = Method::parse(&self.method)?;
        Ok(match method {
            Method::Supg { .. } => Method::Supg { tau: self.tau_supg },
            Method::SupgSc { .. } => Method::SupgSc {
                tau: self.tau_supg,
                tau_sc: self.tau_sc,
            },
            other => other,
        })
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        if self.problem == "custom" {
            return self.custom_problem();
        }
        benchmark_by_name(&self.problem)
    }

    fn custom_problem(&self) -> Result<ProblemSpec> {
        let kind_name = self
            .custom_kind
            .as_deref()
            .ok_or_else(|| Error::Config("custom problems need custom_kind".into()))?;
        let kind = match kind_name {
            "advection" => ProblemKind::Advection,
            "advdiff" => ProblemKind::AdvectionDiffusion {
                epsilon: self.custom_epsilon.unwrap_or(1e-6),
            },
            "heat_interval" => ProblemKind::Heat,
            other => {
                return Err(Error::Config(format!(
                    "custom_kind '{other}' not supported (advection, advdiff, heat_interval)"
                )))
            }
        };
        let forcing_src = self
            .custom_forcing
            .as_deref()
            .ok_or_else(|| Error::Config("custom problems need custom_forcing".into()))?;
        let forcing_expr = expr::parse(forcing_src)?;
        let forcing: crate::problems::ForcingFn = Arc::new(move |x: &[f64], t: f64| {
            let vars = [
                x.first().copied().unwrap_or(0.0),
                x.get(1).copied().unwrap_or(0.0),
                t,
            ];
            forcing_expr.eval(&vars)
        });
        let exact = match &self.custom_exact {
            Some(src) => {
                let e = expr::parse(src)?;
                Some(Arc::new(move |t: f64| e.eval(&[0.0, 0.0, t])) as crate::problems::ScalarFn)
            }
            None => None,
        };
        Ok(ProblemSpec {
            name: "custom".into(),
            kind,
            geometry: (kind_name == "heat_interval")
                .then_some(crate::geometry::GeometryMap::Interval { a: 0.0, b: 1.0 }),
            final_time: self.custom_final_time.unwrap_or(1.0),
            forcing,
            exact,
            exact_dt: None,
            forcing_feature_scale: None,
        })
    }

    pub fn resolve_out_dir(&self) -> PathBuf {
        match &self.out_dir {
            Some(dir) => PathBuf::from(dir),
            None => std::env::var(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|_| PathBuf::from("out")),
        }
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip formatting keeps the files byte-deterministic.
    format!("{v}")
}

fn write_manifest(
    dir: &Path,
    config: &ExperimentConfig,
    command: &str,
    timings: &[(&str, f64)],
    outcome: Option<&SolveOutcome>,
) -> Result<()> {
    let manifest = RunManifest {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        timings_s: timings.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        iterations: outcome.map(|o| o.report.iterations),
        converged: outcome.map(|o| o.report.converged),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    write_file(dir, "manifest.json", &json)?;
    Ok(())
}

/// Sample times: `samples_per_span` equispaced points per span plus the final
/// time.
fn sample_times(space: &SplineSpace, per_span: usize) -> Vec<f64> {
    let breaks = space.knot_vector().breakpoints();
    let mut out = Vec::new();
    for w in breaks.windows(2) {
        for i in 0..per_span {
            out.push(w[0] + (w[1] - w[0]) * i as f64 / per_span as f64);
        }
    }
    out.push(*breaks.last().unwrap());
    out
}

/// Runs one experiment and writes `solution.csv`, optional `theta.csv`,
/// optional `error.csv`, optional `section.csv` and `manifest.json`.
pub fn run(config: &ExperimentConfig) -> Result<PathBuf> {
    let problem = config.problem()?;
    let method = config.method()?;
    let disc = Discretization::uniform(&problem, config.degree, config.elements)?;
    let out_dir = config.resolve_out_dir();

    let t_solve = Instant::now();
    let outcome = solve_problem(&problem, &disc, &method, &config.solve_options())?;
    let solve_s = t_solve.elapsed().as_secs_f64();

    let t_emit = Instant::now();
    emit_solution_csv(&out_dir, config, &problem, &disc, &outcome)?;
    if let Some(theta) = &outcome.theta {
        emit_theta_csv(&out_dir, &problem, theta)?;
    }
    if problem.exact.is_some() && problem.kind != ProblemKind::Heat {
        emit_error_csv(&out_dir, config, &problem, &disc, &outcome, solve_s)?;
    }
    if let Some(section) = &config.section {
        emit_section_csv(&out_dir, config, &problem, &disc, &outcome, section)?;
    } else if problem.spatial_dim() == 2 {
        let g = problem.geometry.as_ref().unwrap();
        if let crate::geometry::GeometryMap::QuarterAnnulus { r_in, r_out } = g {
            // Default section: the 45-degree radial segment.
            let s = format!(
                "{},{}:{},{}",
                r_in / 2.0_f64.sqrt(),
                r_in / 2.0_f64.sqrt(),
                r_out / 2.0_f64.sqrt(),
                r_out / 2.0_f64.sqrt()
            );
            emit_section_csv(&out_dir, config, &problem, &disc, &outcome, &s)?;
        }
    }
    let emit_s = t_emit.elapsed().as_secs_f64();
    write_manifest(
        &out_dir,
        config,
        "run",
        &[("solve", solve_s), ("emit", emit_s)],
        Some(&outcome),
    )?;
    Ok(out_dir)
}

fn emit_solution_csv(
    dir: &Path,
    config: &ExperimentConfig,
    problem: &ProblemSpec,
    disc: &Discretization,
    outcome: &SolveOutcome,
) -> Result<()> {
    let field = SolutionField::new(disc, &outcome.coefficients);
    let d = problem.spatial_dim();
    let mut csv = String::new();
    let has_exact = problem.exact.is_some() && d == 0;
    let has_theta = outcome.theta.is_some();
    let mut header: Vec<&str> = Vec::new();
    if d >= 1 {
        header.push("x");
    }
    if d >= 2 {
        header.push("y");
    }
    header.push("t");
    header.push("u_h");
    if has_exact {
        header.push("u_ex");
    }
    header.push("residual");
    if has_theta {
        header.push("theta");
    }
    csv.push_str(&header.join(","));
    csv.push('\n');

    let times = sample_times(&disc.time, config.samples_per_span);
    let spatial_samples: Vec<Vec<f64>> = match d {
        0 => vec![vec![]],
        1 => sample_grid_1d(&disc.spaces[0], config.samples_per_span),
        _ => {
            let gx = sample_grid_1d(&disc.spaces[0], config.samples_per_span);
            let gy = sample_grid_1d(&disc.spaces[1], config.samples_per_span);
            let mut out = Vec::with_capacity(gx.len() * gy.len());
            for y in &gy {
                for x in &gx {
                    out.push(vec![x[0], y[0]]);
                }
            }
            out
        }
    };
    for t in &times {
        for eta in &spatial_samples {
            let u = field.value(eta, *t)?;
            let residual = field.strong_residual(problem, eta, *t)?;
            if !u.is_finite() || !residual.is_finite() {
                return Err(Error::Solver(format!(
                    "non-finite solution sample at eta={eta:?}, t={t}"
                )));
            }
            let mut row: Vec<String> = Vec::new();
            if d >= 1 {
                let x = problem.geometry.as_ref().unwrap().eval(eta);
                row.push(fmt_f64(x[0]));
                if d == 2 {
                    row.push(fmt_f64(x[1]));
                }
            }
            row.push(fmt_f64(*t));
            row.push(fmt_f64(u));
            if has_exact {
                row.push(fmt_f64(problem.exact.as_ref().unwrap()(*t)));
            }
            row.push(fmt_f64(residual));
            if let Some(theta) = &outcome.theta {
                let mut pt = Vec::with_capacity(d + 1);
                pt.extend_from_slice(eta);
                pt.push(*t);
                row.push(fmt_f64(theta.eval(&pt)));
            }
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
    }
    write_file(dir, "solution.csv", &csv)?;
    Ok(())
}

fn sample_grid_1d(space: &SplineSpace, per_span: usize) -> Vec<Vec<f64>> {
    let breaks = space.knot_vector().breakpoints();
    let mut out = Vec::new();
    for w in breaks.windows(2) {
        for i in 0..per_span {
            out.push(vec![w[0] + (w[1] - w[0]) * i as f64 / per_span as f64]);
        }
    }
    out.push(vec![*breaks.last().unwrap()]);
    out
}

fn emit_theta_csv(dir: &Path, problem: &ProblemSpec, theta: &ThetaField) -> Result<()> {
    let d = problem.spatial_dim();
    let mut csv = String::new();
    let mut header: Vec<&str> = Vec::new();
    if d >= 1 {
        header.push("eta1");
    }
    if d >= 2 {
        header.push("eta2");
    }
    header.push("t");
    header.push("theta");
    csv.push_str(&header.join(","));
    csv.push('\n');
    for lin in 0..theta.values().len() {
        let coords = theta.node_coords(lin);
        let mut row: Vec<String> = coords.iter().map(|&c| fmt_f64(c)).collect();
        row.push(fmt_f64(theta.values()[lin]));
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(dir, "theta.csv", &csv)?;
    Ok(())
}

fn emit_error_csv(
    dir: &Path,
    config: &ExperimentConfig,
    problem: &ProblemSpec,
    disc: &Discretization,
    outcome: &SolveOutcome,
    wall_time_s: f64,
) -> Result<()> {
    let exact = problem.exact.clone().unwrap();
    let region = config.error_region.unwrap_or((0.0, problem.final_time));
    let error =
        metrics::relative_l2_error_time(disc, &outcome.coefficients, exact.as_ref(), region)?;
    let mut csv = String::from("degree,h,n_dof,error,order,wall_time_s\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{}\n",
        config.degree,
        fmt_f64(disc.ht()),
        disc.num_dof(),
        fmt_f64(error),
        "",
        fmt_f64(wall_time_s),
    ));
    write_file(dir, "error.csv", &csv)?;
    Ok(())
}

fn parse_section(spec: &str) -> Result<([f64; 2], [f64; 2])> {
    let err = || Error::Config(format!("section must be 'x1,y1:x2,y2', got '{spec}'"));
    let (a, b) = spec.split_once(':').ok_or_else(err)?;
    let parse_point = |s: &str| -> Result<[f64; 2]> {
        let (x, y) = s.split_once(',').ok_or_else(err)?;
        Ok([
            x.trim().parse::<f64>().map_err(|_| err())?,
            y.trim().parse::<f64>().map_err(|_| err())?,
        ])
    };
    Ok((parse_point(a)?, parse_point(b)?))
}

fn emit_section_csv(
    dir: &Path,
    config: &ExperimentConfig,
    problem: &ProblemSpec,
    disc: &Discretization,
    outcome: &SolveOutcome,
    section: &str,
) -> Result<()> {
    if problem.spatial_dim() != 2 {
        return Err(Error::Config(
            "section sampling applies to 2D heat problems only".into(),
        ));
    }
    let (a, b) = parse_section(section)?;
    let geometry = problem.geometry.as_ref().unwrap();
    let field = SolutionField::new(disc, &outcome.coefficients);
    let n_s = config.samples_per_span * config.elements;
    let times = sample_times(&disc.time, config.samples_per_span);
    let mut csv = String::from("s,x,y,t,u_h\n");
    for i in 0..=n_s {
        let s = i as f64 / n_s as f64;
        let x = [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s];
        let eta = geometry.inverse(&x)?;
        for t in &times {
            let u = field.value(&eta, *t)?;
            if !u.is_finite() {
                return Err(Error::Solver(format!(
                    "non-finite section sample at s={s}, t={t}"
                )));
            }
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(s),
                fmt_f64(x[0]),
                fmt_f64(x[1]),
                fmt_f64(*t),
                fmt_f64(u)
            ));
        }
    }
    write_file(dir, "section.csv", &csv)?;
    Ok(())
}

/// Convergence study over `degrees` x `level_elements`; writes
/// `convergence.csv` with per-level errors and orders.
pub fn convergence_study(config: &ExperimentConfig) -> Result<PathBuf> {
    let problem = config.problem()?;
    let method = config.method()?;
    if config.level_elements.len() < 2 {
        return Err(Error::Config(
            "convergence studies need at least two levels".into(),
        ));
    }
    let degrees = if config.degrees.is_empty() {
        vec![config.degree]
    } else {
        config.degrees.clone()
    };
    let exact = problem.exact.clone().ok_or_else(|| {
        Error::Config(format!(
            "problem '{}' has no exact solution for error computation",
            problem.name
        ))
    })?;
    let region = config.error_region.unwrap_or((0.0, problem.final_time));
    let out_dir = config.resolve_out_dir();
    let t0 = Instant::now();
    let mut csv = String::from("degree,h,n_dof,error,order,wall_time_s\n");
    for &degree in &degrees {
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        let mut rows: Vec<(usize, f64, usize, f64, f64)> = Vec::new();
        for &elements in &config.level_elements {
            let disc = Discretization::uniform(&problem, degree, elements)?;
            let t_level = Instant::now();
            let outcome = solve_problem(&problem, &disc, &method, &config.solve_options())?;
            let wall = t_level.elapsed().as_secs_f64();
            let error = metrics::relative_l2_error_time(
                &disc,
                &outcome.coefficients,
                exact.as_ref(),
                region,
            )?;
            pairs.push((disc.ht(), error));
            rows.push((degree, disc.ht(), disc.num_dof(), error, wall));
        }
        let levels: Vec<ConvergenceLevel> = metrics::estimate_orders(&pairs)?;
        for ((degree, h, n_dof, error, wall), level) in rows.into_iter().zip(levels) {
            let order = if level.degenerate {
                String::new()
            } else {
                fmt_f64(level.order)
            };
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                degree,
                fmt_f64(h),
                n_dof,
                fmt_f64(error),
                order,
                fmt_f64(wall)
            ));
        }
    }
    write_file(&out_dir, "convergence.csv", &csv)?;
    write_manifest(
        &out_dir,
        config,
        "convergence",
        &[("total", t0.elapsed().as_secs_f64())],
        None,
    )?;
    Ok(out_dir)
}

/// Dumps the tau/sigma tables with Greville abscissae and per-row condition
/// estimates to `stabilization.csv`.
pub fn dump_stabilization(config: &ExperimentConfig) -> Result<PathBuf> {
    let kv = KnotVector::open_uniform(
        config.degree,
        config.elements,
        0.0,
        config.custom_final_time.unwrap_or(1.0),
    )?;
    let space = SplineSpace::new(kv, true, config.drop_last)?;
    let table = compute_tables_for(&space)?;
    let greville = space.greville();
    let out_dir = config.resolve_out_dir();
    let mut csv = String::from("i,k,greville,tau,sigma,cond\n");
    for i in 0..table.num_rows() {
        for k in 0..table.degree {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                k + 1,
                fmt_f64(greville[i]),
                fmt_f64(table.tau[i][k]),
                fmt_f64(table.sigma[i][k]),
                fmt_f64(table.cond[i]),
            ));
        }
    }
    write_file(&out_dir, "stabilization.csv", &csv)?;
    write_manifest(&out_dir, config, "dump-stab", &[], None)?;
    Ok(out_dir)
}
