use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foilfem_cli::config::env_overrides;
use foilfem_cli::{cmd_compare, cmd_mesh, cmd_run, cmd_sweep, load_config, CliError, SweepAxis};

/// AC-loss simulation of HTS coil cross-sections with homogenized
/// foil-conductor models.
///
/// Configuration keys can be overridden through `FOILFEM_SET__<KEY>`
/// variables, with `__` separating nested keys
/// (`FOILFEM_SET__TRANSIENT__FREQUENCY=10`).
#[derive(Parser)]
#[command(name = "foilfem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Artifact directory (overrides `output.dir`).
    #[arg(long, global = true, env = "FOILFEM_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1, env = "FOILFEM_THREADS")]
    threads: usize,
    /// Sequential, reproducible assembly (the only mode currently
    /// implemented; accepted for scripting compatibility).
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or read) the mesh and write it as MSH 4.1.
    Mesh {
        #[arg(long, env = "FOILFEM_CONFIG")]
        config: PathBuf,
    },
    /// Run one transient simulation.
    Run {
        #[arg(long, env = "FOILFEM_CONFIG")]
        config: PathBuf,
    },
    /// Run variants of a configuration along one axis.
    Sweep {
        #[arg(long, env = "FOILFEM_CONFIG")]
        config: PathBuf,
        /// n_p, basis_family, frequency, amplitude or formulation.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Reference configuration for relative errors.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Compare a homogenized model against a reference run.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Parse and validate a configuration, printing it with defaults filled.
    Validate {
        #[arg(long, env = "FOILFEM_CONFIG")]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let overrides = env_overrides();
    let load = |p: &PathBuf| load_config(p, &overrides);
    let out_dir = |cfg: &foilfem_cli::RunConfig| cli.out.clone().or_else(|| cfg.output.dir.clone());
    match &cli.command {
        Command::Validate { config } => {
            let cfg = load(config)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }
        Command::Mesh { config } => {
            let cfg = load(config)?;
            let out = out_dir(&cfg).unwrap_or_else(|| PathBuf::from("."));
            let (nodes, tris) = cmd_mesh(&cfg, &out)?;
            println!("{nodes} nodes, {tris} triangles -> {}", out.display());
        }
        Command::Run { config } => {
            let cfg = load(config)?;
            let out = out_dir(&cfg);
            let o = cmd_run(&cfg, out.as_deref())?;
            println!(
                "{}: cycle losses {:?} J/m, {} DoFs, {:.1} s",
                cfg.label(),
                o.summary.cycle_losses,
                o.summary.dofs,
                o.summary.wall_time_s
            );
        }
        Command::Sweep {
            config,
            axis,
            values,
            reference,
        } => {
            let cfg = load(config)?;
            let reference = reference.as_ref().map(load).transpose()?;
            let out = out_dir(&cfg);
            let report = cmd_sweep(&cfg, *axis, values, reference.as_ref(), out.as_deref(), cli.threads)?;
            print!("{}", report.to_csv());
        }
        Command::Compare { config, reference } => {
            let h = load(config)?;
            let r = load(reference)?;
            let out = out_dir(&h);
            let report = cmd_compare(&h, &r, out.as_deref())?;
            print!("{}", report.table());
            println!("dof ratio {:.3}", report.dof_ratio);
        }
    }
    Ok(())
}
