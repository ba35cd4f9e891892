//! Command-line front end: argument parsing, configuration merging and
//! dispatch to the command implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod selftest;

use clap::{Args, Parser, Subcommand};
use config::Settings;
use error::CliError;
use std::ffi::OsString;
use std::path::PathBuf;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "BMEC_KS_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "bmec-ks",
    version,
    about = "Chemotaxis pattern simulation, chemoattractant reconstruction and reduced-model analysis",
    after_long_help = after_help()
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn after_help() -> String {
    format!(
        "{}\nExit codes: 0 success, 1 runtime fault, 2 usage or config error.\n\
         Output goes to --out, else ${OUT_ENV}/<command>, else ./bmec-ks-out/<command>.",
        config::keys_help()
    )
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// Flat key = value config file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// GMRES tolerance
    #[arg(long)]
    pub eps: Option<f64>,
    /// Time step
    #[arg(long)]
    pub dt: Option<f64>,
    /// Grid size, N or NXxNY
    #[arg(long)]
    pub grid: Option<String>,
}

/// Model coefficients; unset ones keep their standard values.
#[derive(Debug, Clone, Args, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub e: Option<f64>,
    #[arg(long = "d-u")]
    pub d_u: Option<f64>,
    #[arg(long = "d-v")]
    pub d_v: Option<f64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct SimFlags {
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    #[arg(long = "h")]
    pub h: Option<f64>,
    /// Amplitude of the initial noise
    #[arg(long)]
    pub noise: Option<f64>,
    /// Comma-separated snapshot times
    #[arg(long = "snapshot-times")]
    pub snapshot_times: Option<String>,
    /// Probe positions, e.g. 50:50,51:50
    #[arg(long)]
    pub probes: Option<String>,
    #[arg(long = "record-stride")]
    pub record_stride: Option<usize>,
    #[arg(long = "positivity-clip")]
    pub positivity_clip: Option<bool>,
    /// Allowed total clipped mass, or 'none'
    #[arg(long = "clip-budget")]
    pub clip_budget: Option<String>,
    #[arg(long = "strict-budget")]
    pub strict_budget: Option<bool>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one forward simulation and write snapshots, probes and the outcome
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Run one simulation per gamma and write the outcome table
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated gamma values
        #[arg(long)]
        gammas: Option<String>,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Reconstruct the chemoattractant from consecutive density frames
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Frame images (PNG or PGM), or one directory holding them
        #[arg(value_name = "FRAME")]
        frames: Vec<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
        /// Density floor
        #[arg(long = "u-min")]
        u_min: Option<f64>,
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
        /// Hours between frames (metadata only)
        #[arg(long)]
        interval: Option<f64>,
        /// Time unit dividing the frame difference
        #[arg(long = "frame-step")]
        frame_step: Option<f64>,
    },
    /// Reduced two-node model
    Reduced {
        #[command(subcommand)]
        command: ReducedCommand,
    },
    /// Run the built-in oracle checks
    Selftest,
}

#[derive(Debug, Subcommand)]
pub enum ReducedCommand {
    /// Stationary points and their stability at one b
    Stationary {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Stationary counts over a range of b
    Scan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long = "b-from")]
        b_from: Option<f64>,
        #[arg(long = "b-to")]
        b_to: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// The three departures from the middle state
    Orbits {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
}

/// Config file first, then flags on top.
fn settings(common: &Common, model: &ModelFlags) -> Result<Settings, CliError> {
    let mut s = match &common.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    s.set_opt("out", &common.out.as_ref().map(|p| p.display().to_string()));
    s.set_opt("seed", &common.seed);
    s.set_opt("eps", &common.eps);
    s.set_opt("dt", &common.dt);
    s.set_opt("grid", &common.grid);
    s.set_opt("gamma", &model.gamma);
    s.set_opt("a", &model.a);
    s.set_opt("b", &model.b);
    s.set_opt("c", &model.c);
    s.set_opt("e", &model.e);
    s.set_opt("d_u", &model.d_u);
    s.set_opt("d_v", &model.d_v);
    Ok(s)
}

fn apply_sim_flags(s: &mut Settings, sim: &SimFlags) {
    s.set_opt("t_end", &sim.t_end);
    s.set_opt("h", &sim.h);
    s.set_opt("noise", &sim.noise);
    s.set_opt("snapshot_times", &sim.snapshot_times);
    s.set_opt("probes", &sim.probes);
    s.set_opt("record_stride", &sim.record_stride);
    s.set_opt("positivity_clip", &sim.positivity_clip);
    s.set_opt("clip_budget", &sim.clip_budget);
    s.set_opt("strict_budget", &sim.strict_budget);
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, model, sim } => {
            let mut s = settings(&common, &model)?;
            apply_sim_flags(&mut s, &sim);
            commands::simulate(&s)
        }
        Command::Sweep {
            common,
            gammas,
            model,
            sim,
        } => {
            let mut s = settings(&common, &model)?;
            apply_sim_flags(&mut s, &sim);
            s.set_opt("gammas", &gammas);
            commands::sweep(&s)
        }
        Command::Reconstruct {
            common,
            frames,
            model,
            u_min,
            max_iter,
            interval,
            frame_step,
        } => {
            let mut s = settings(&common, &model)?;
            s.set_opt("u_min", &u_min);
            s.set_opt("max_iter", &max_iter);
            s.set_opt("interval", &interval);
            s.set_opt("frame_step", &frame_step);
            commands::reconstruct(&s, &frames)
        }
        Command::Reduced { command } => match command {
            ReducedCommand::Stationary { common, model } => commands::reduced_stationary(&settings(&common, &model)?),
            ReducedCommand::Scan {
                common,
                model,
                b_from,
                b_to,
                steps,
            } => {
                let mut s = settings(&common, &model)?;
                s.set_opt("b_from", &b_from);
                s.set_opt("b_to", &b_to);
                s.set_opt("steps", &steps);
                commands::reduced_scan(&s)
            }
            ReducedCommand::Orbits { common, model, t_end } => {
                let mut s = settings(&common, &model)?;
                s.set_opt("t_end", &t_end);
                commands::reduced_orbits(&s)
            }
        },
        Command::Selftest => {
            let results = selftest::run_selftest(&selftest::SelfTestHooks::default());
            print!("{}", selftest::report(&results));
            if results.iter().all(|r| r.passed) {
                Ok(())
            } else {
                Err(CliError::Runtime("selftest failed".into()))
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
