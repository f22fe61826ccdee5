use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use windspde::config::RunConfig;
use windspde::{Error, Result};
use windspde_cli::{cmd_fit, cmd_ingest, cmd_mesh, cmd_mesh_select, cmd_project, cmd_simulate, mesh_select_table, Context};

#[derive(Debug, Parser)]
#[command(name = "windspde", version, about = "Spatial Weibull wind-speed modelling")]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for the configured mesh spec.
#[derive(Debug, Default, clap::Args)]
struct MeshArgs {
    #[arg(long)]
    me1: Option<f64>,
    #[arg(long)]
    me2: Option<f64>,
    #[arg(long)]
    of1: Option<f64>,
    #[arg(long)]
    of2: Option<f64>,
    #[arg(long)]
    cutoff: Option<f64>,
}

impl MeshArgs {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        let s = &mut config.mesh.spec;
        for (slot, v) in [(&mut s.me1, self.me1), (&mut s.me2, self.me2), (&mut s.of1, self.of1), (&mut s.of2, self.of2), (&mut s.cutoff, self.cutoff)] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        config.validate()
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge raw station files into the prime dataset.
    Ingest {
        /// Raw station files (replaces data.raw).
        #[arg(long = "raw", num_args = 1..)]
        raw: Vec<PathBuf>,
    },
    /// Build a mesh around the prime dataset's locations.
    Mesh {
        #[arg(long)]
        prime: Option<PathBuf>,
        #[command(flatten)]
        spec: MeshArgs,
    },
    /// Fit the model on a series of candidate meshes and compare the estimates.
    MeshSelect {
        #[arg(long)]
        prime: Option<PathBuf>,
    },
    /// Fit the full model.
    Fit {
        #[arg(long)]
        prime: Option<PathBuf>,
        /// Existing mesh JSON (replaces mesh.file).
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[command(flatten)]
        spec: MeshArgs,
    },
    /// Project the fitted spatial field onto a regular lattice.
    Project {
        #[arg(long)]
        posterior: Option<PathBuf>,
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Simulate a dataset from the model at known parameters.
    Simulate {
        #[command(flatten)]
        spec: MeshArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    match &cli.command {
        Command::Mesh { spec, .. } | Command::Fit { spec, .. } | Command::Simulate { spec } => spec.apply(&mut config)?,
        _ => {}
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    let ctx = Context { seed: config.seed, config, config_path: cli.config.clone(), threads: cli.threads, out_dir: cli.out_dir.clone() };
    match cli.command {
        Command::Ingest { raw } => {
            let r = cmd_ingest(&ctx, &raw)?;
            eprintln!("wrote {} records to {}", r.len(), ctx.out("prime.csv").display());
        }
        Command::Mesh { prime, .. } => {
            let m = cmd_mesh(&ctx, prime.as_deref())?;
            eprintln!("mesh with {} vertices written to {}", m.n_vertices(), ctx.out("mesh.json").display());
        }
        Command::MeshSelect { prime } => {
            let rows = cmd_mesh_select(&ctx, prime.as_deref())?;
            print!("{}", mesh_select_table(&rows));
        }
        Command::Fit { prime, mesh, .. } => {
            let r = cmd_fit(&ctx, prime.as_deref(), mesh.as_deref())?;
            eprintln!("fit finished with {} design points; results in {}", r.design.len(), ctx.out_dir.display());
        }
        Command::Project { posterior, mesh } => {
            let g = cmd_project(&ctx, posterior.as_deref(), mesh.as_deref())?;
            eprintln!("projected onto {} nodes; written to {}", g.nodes.len(), ctx.out("field_grid.csv").display());
        }
        Command::Simulate { .. } => {
            let (r, _) = cmd_simulate(&ctx)?;
            eprintln!("simulated {} records into {}", r.len(), ctx.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
