use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use micromixer::io::{load_report, parse_config, prepare_output_dir, run_pipeline, RunConfig, Stage};
use micromixer::report::{compare, write_comparison_csv, CROSSING_LEVEL};
use micromixer::{Error, Result};

#[derive(Parser)]
#[command(name = "micromixer", version, about = "Chaotic micromixer flow, mixing and reaction simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize the mixer: grid.vtk
    Geometry(RunArgs),
    /// Solve the steady flow: velocity.vtk, flow_history.csv
    Flow(RunArgs),
    /// Trace particles: particles_period_<k>.csv/.vtk
    Trace(RunArgs),
    /// Critical points and vortices on slices: topology.csv
    Topology(RunArgs),
    /// Reaction-transport: species.vtk, fret.csv
    Transport(RunArgs),
    /// Per-period mixing report: report.csv. With --compare, compares
    /// finished runs instead: comparison.csv
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Run directories holding a finished report.
        #[arg(long, num_args = 2.., value_name = "DIR")]
        compare: Vec<PathBuf>,
    },
    /// Every stage.
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON5).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; overrides `threads` in the config.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Replace artifacts in a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Linear Stokes flow (no inertia).
    #[arg(long)]
    stokes: bool,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::config("--config", "a run config is required"))?;
        let text = fs::read_to_string(path)?;
        let mut config = parse_config(&text)?;
        if self.threads.is_some() {
            config.threads = self.threads;
        }
        if self.stokes {
            config.stokes = true;
        }
        config.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| Error::config("output_dir", "set `output_dir` or pass --out"))?;
        Ok((config, out))
    }
}

fn run(args: &RunArgs, stage: Stage) -> Result<()> {
    let (config, out) = args.load().map_err(|e| e.in_stage("config"))?;
    let manifest = run_pipeline(&config, stage, &out, args.force)?;
    for a in &manifest.artifacts {
        println!("{}  {:>12}  {}", a.sha256, a.bytes, out.join(&a.path).display());
    }
    Ok(())
}

fn run_compare(dirs: &[PathBuf], out: &Path, force: bool) -> Result<()> {
    let reports = dirs.iter().map(|d| load_report(d)).collect::<Result<Vec<_>>>()?;
    let cmp = compare(&reports)?;
    prepare_output_dir(out, force)?;
    let file = fs::File::create(out.join("comparison.csv"))?;
    write_comparison_csv(&cmp, std::io::BufWriter::new(file))?;
    for (variant, k) in &cmp.crossings {
        match k {
            Some(k) => println!("{variant}: FRET factor reaches {CROSSING_LEVEL} at period {k}"),
            None => println!("{variant}: FRET factor never reaches {CROSSING_LEVEL}"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Geometry(a) => run(a, Stage::Geometry),
        Command::Flow(a) => run(a, Stage::Flow),
        Command::Trace(a) => run(a, Stage::Trace),
        Command::Topology(a) => run(a, Stage::Topology),
        Command::Transport(a) => run(a, Stage::Transport),
        Command::Report { run: a, compare } if !compare.is_empty() => a
            .out
            .as_deref()
            .ok_or_else(|| Error::config("--out", "required with --compare"))
            .and_then(|out| run_compare(compare, out, a.force))
            .map_err(|e| e.in_stage("report")),
        Command::Report { run: a, .. } => run(a, Stage::Report),
        Command::All(a) => run(a, Stage::All),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
