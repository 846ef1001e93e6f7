use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spline_upwind::cli::{self, ExperimentConfig};
use spline_upwind::Error;

/// Space-time spline solver with upwind stabilization: experiment runner.
#[derive(Parser)]
#[command(name = "spline-upwind", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and emit solution/theta/error CSV files.
    Run(RunArgs),
    /// Run a refinement study and emit a convergence CSV.
    Convergence(ConvergenceArgs),
    /// Dump the tau/sigma upwind parameter tables.
    DumpStab(DumpStabArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file (a previous manifest.json also works); command-line
    /// flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem: smooth_advection | layered_advection | advdiff |
    /// heat_interval | heat_annulus | custom.
    #[arg(long)]
    problem: Option<String>,
    /// Method: galerkin | supg | supg_sc | ncsu | su.
    #[arg(long)]
    method: Option<String>,
    /// Spline degree in every direction.
    #[arg(long)]
    degree: Option<usize>,
    /// Elements per direction.
    #[arg(long)]
    elements: Option<usize>,
    /// SUPG parameter override (default h_t / 2).
    #[arg(long)]
    tau_supg: Option<f64>,
    /// Shock-capturing parameter override (default h_t^2 / 4).
    #[arg(long)]
    tau_sc: Option<f64>,
    /// Fixed-point tolerance on the max-norm theta change.
    #[arg(long)]
    fp_tol: Option<f64>,
    /// Fixed-point iteration cap.
    #[arg(long)]
    fp_max_iter: Option<usize>,
    /// Fixed-point damping factor in (0, 1]; 1 = undamped.
    #[arg(long)]
    fp_damping: Option<f64>,
    /// Output directory (default: $SPLINE_UPWIND_OUTDIR or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solution samples per knot span.
    #[arg(long)]
    samples_per_span: Option<usize>,
    /// Error region "lo,hi" in time.
    #[arg(long)]
    error_region: Option<String>,
    /// Forcing expression for --problem custom (variables x, y, t).
    #[arg(long)]
    forcing: Option<String>,
    /// Exact-solution expression for --problem custom.
    #[arg(long)]
    exact: Option<String>,
    /// Strong form for --problem custom: advection | advdiff | heat_interval.
    #[arg(long)]
    kind: Option<String>,
    /// Diffusion coefficient for --problem custom --kind advdiff.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Section line "x1,y1:x2,y2" for 2D problems.
    #[arg(long)]
    section: Option<String>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated element counts, e.g. "8,16,32,64,128".
    #[arg(long)]
    levels: Option<String>,
    /// Comma-separated degrees, e.g. "1,2,3,4".
    #[arg(long)]
    degrees: Option<String>,
}

#[derive(Args)]
struct DumpStabArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also drop the final basis function (two-sided constraint).
    #[arg(long)]
    drop_last: bool,
}

fn apply_common(config: &mut ExperimentConfig, args: &CommonArgs) -> Result<(), Error> {
    if let Some(v) = &args.problem {
        config.problem = v.clone();
    }
    if let Some(v) = &args.method {
        config.method = v.clone();
    }
    if let Some(v) = args.degree {
        config.degree = v;
    }
    if let Some(v) = args.elements {
        config.elements = v;
    }
    if args.tau_supg.is_some() {
        config.tau_supg = args.tau_supg;
    }
    if args.tau_sc.is_some() {
        config.tau_sc = args.tau_sc;
    }
    if let Some(v) = args.fp_tol {
        config.fp_tolerance = v;
    }
    if let Some(v) = args.fp_max_iter {
        config.fp_max_iter = v;
    }
    if let Some(v) = args.fp_damping {
        config.fp_damping = v;
    }
    if let Some(v) = &args.out {
        config.out_dir = Some(v.display().to_string());
    }
    if let Some(v) = args.samples_per_span {
        config.samples_per_span = v;
    }
    if let Some(v) = &args.error_region {
        let (lo, hi) = v
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("error region must be 'lo,hi', got '{v}'")))?;
        config.error_region = Some((
            lo.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad error region '{v}'")))?,
            hi.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad error region '{v}'")))?,
        ));
    }
    if args.forcing.is_some() {
        config.custom_forcing = args.forcing.clone();
    }
    if args.exact.is_some() {
        config.custom_exact = args.exact.clone();
    }
    if args.kind.is_some() {
        config.custom_kind = args.kind.clone();
    }
    if args.epsilon.is_some() {
        config.custom_epsilon = args.epsilon;
    }
    Ok(())
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    apply_common(&mut config, common)?;
    Ok(config)
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>, Error> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad {what} list '{text}'")))
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<PathBuf, Error> {
    match cli.command {
        Command::Run(args) => {
            let mut config = load_config(&args.common)?;
            if args.section.is_some() {
                config.section = args.section.clone();
            }
            cli::run(&config)
        }
        Command::Convergence(args) => {
            let mut config = load_config(&args.common)?;
            if let Some(levels) = &args.levels {
                config.level_elements = parse_usize_list(levels, "level")?;
            }
            if let Some(degrees) = &args.degrees {
                config.degrees = parse_usize_list(degrees, "degree")?;
            }
            cli::convergence_study(&config)
        }
        Command::DumpStab(args) => {
            let mut config = load_config(&args.common)?;
            config.drop_last |= args.drop_last;
            cli::dump_stabilization(&config)
        }
    }
}

fn main() -> ExitCode {
    // clap itself exits with status 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(out_dir) => {
            println!("artifacts written to {}", out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ (Error::Config(_) | Error::InvalidParameter(_) | Error::Expression(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
