mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "ssmaxwell", version, about = "Self-similar profiles for Maxwell molecules with linear deformation")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Kernel: isotropic, bump(center,width) or csv:PATH.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// JSON file holding the deformation matrix (row-major nested arrays).
    #[arg(long, global = true)]
    matrix: Option<PathBuf>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    #[arg(long)]
    naxis: Option<usize>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// λ(p) on a list of exponents.
    Lambda {
        /// Comma-separated exponents; an empty string gives an empty table.
        #[arg(long)]
        p: Option<String>,
    },
    /// The coefficient q and the traceless relaxation rate.
    Qcoef,
    /// Dominant eigenpair (β, N) of the second-moment generator.
    Eigen,
    /// Second-moment trajectory B(t) and the scale λ.
    Secmom {
        #[arg(long)]
        tfinal: Option<f64>,
    },
    /// Self-similar profile by fixed-point iteration.
    Profile(GridArgs),
    /// Relaxation of a non-Gaussian datum towards the scaled profile.
    Stability {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        tfinal: Option<f64>,
    },
    /// Moment polynomials Q_ℓ.
    Hierarchy {
        #[arg(long)]
        mmax: Option<u32>,
    },
    /// Probability density with the moments of Q_2..Q_M.
    Density {
        #[arg(long)]
        mmax: Option<u32>,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Particle simulation of the velocity equation dv/dt = -Av plus collisions.
    Dsmc {
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        tfinal: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Physical-space summary: β, N, λ, U and the rescaling map.
    Report,
}

fn apply_grid(cfg: &mut Config, g: &GridArgs) {
    cfg.n_axis = g.naxis.or(cfg.n_axis);
    cfg.r_max = g.rmax.or(cfg.r_max);
    cfg.p = g.p.or(cfg.p);
    cfg.tol = g.tol.or(cfg.tol);
    cfg.t_max = g.tmax.or(cfg.t_max);
    cfg.dt = g.dt.or(cfg.dt);
}

fn parse_list(s: &str) -> ssmaxwell_core::Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| ssmaxwell_core::Error::InvalidArgument(format!("bad exponent '{t}'"))))
        .collect()
}

fn run(cli: Cli) -> ssmaxwell_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.workers = cli.workers.or(cfg.workers);
    cfg.kernel = cli.kernel.clone().or(cfg.kernel);
    cfg.dim = cli.dim.or(cfg.dim);
    if let Some(m) = &cli.matrix {
        cfg.matrix = Some(config::read_matrix_file(m)?);
    }
    if let Some(w) = cfg.workers {
        // fails only if a pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match &cli.cmd {
        Cmd::Lambda { p } => {
            if let Some(list) = p {
                cfg.p_values = Some(parse_list(list)?);
            }
            commands::lambda(&cfg, out)
        }
        Cmd::Qcoef => commands::qcoef(&cfg, out),
        Cmd::Eigen => commands::eigen(&cfg, out),
        Cmd::Secmom { tfinal } => {
            cfg.t_final = tfinal.or(cfg.t_final);
            commands::secmom(&cfg, out)
        }
        Cmd::Profile(g) => {
            apply_grid(&mut cfg, g);
            commands::profile(&cfg, out)
        }
        Cmd::Stability { grid, tfinal } => {
            apply_grid(&mut cfg, grid);
            cfg.t_final = tfinal.or(cfg.t_final);
            commands::stability(&cfg, out)
        }
        Cmd::Hierarchy { mmax } => {
            cfg.m_max = mmax.or(cfg.m_max);
            commands::hierarchy(&cfg, out)
        }
        Cmd::Density { mmax, radius } => {
            cfg.m_max = mmax.or(cfg.m_max);
            cfg.radius = radius.or(cfg.radius);
            commands::density(&cfg, out)
        }
        Cmd::Dsmc { particles, tfinal, dt } => {
            cfg.particles = particles.or(cfg.particles);
            cfg.t_final = tfinal.or(cfg.t_final);
            cfg.dt = dt.or(cfg.dt);
            commands::dsmc(&cfg, out)
        }
        Cmd::Report => commands::report(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
