/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{CounterexampleArgs, Ctx, ExpandArgs, MomentsArgs, SolveArgs};
use output::{RunManifest, Sink};

/// Mean-value verification and dynamic-programming solver for the
/// normalized parabolic p-Laplacian on the Heisenberg group.
#[derive(Debug, Parser)]
#[command(name = "hmvp", version)]
struct Cli {
    /// Worker threads (default: all cores). `HMVP_THREADS` takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving CSV/JSON artifacts and the run manifest.
    #[arg(long, global = true, default_value = "hmvp-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// M(n) and the blend weights (alpha, beta).
    Constants(commands::ConstantsArgs),
    /// Moment identities of the weighted ball quadrature.
    Moments(MomentsArgs),
    /// Expansion residuals of the blend operator and their fitted order.
    Expand(ExpandArgs),
    /// The quartic heat polynomial whose time-averaged mean differs from its value.
    Counterexample(CounterexampleArgs),
    /// Runs the slab solver from a config file.
    Solve(SolveArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Constants(_) => "constants",
            Command::Moments(_) => "moments",
            Command::Expand(_) => "expand",
            Command::Counterexample(_) => "counterexample",
            Command::Solve(_) => "solve",
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<hmvp::Error>() {
        Some(hmvp::Error::Convergence { .. }) => 3,
        _ => 2,
    }
}

fn run(cli: &Cli, ctx: &mut Ctx) -> anyhow::Result<bool> {
    if let Some(n) = commands::thread_count(cli.threads)? {
        if n == 0 {
            return Err(hmvp::Error::InvalidArgument("thread count must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        ctx.params.insert("threads".into(), n.to_string());
    }
    match &cli.command {
        Command::Constants(a) => commands::constants(a, ctx),
        Command::Moments(a) => commands::moments(a, ctx),
        Command::Expand(a) => commands::expand(a, ctx),
        Command::Counterexample(a) => commands::counterexample(a, ctx),
        Command::Solve(a) => commands::solve(a, ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let sink = match Sink::new(&cli.out_dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let mut ctx = Ctx {
        sink,
        params: BTreeMap::new(),
    };
    let (code, error) = match run(&cli, &mut ctx) {
        Ok(true) => (0, None),
        Ok(false) => (1, None),
        Err(e) => {
            eprintln!("error: {e:#}");
            (exit_code(&e), Some(format!("{e:#}")))
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        parameters: ctx.params,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: ctx.sink.outputs.clone(),
        wall_time: start.elapsed().as_secs_f64(),
        exit_code: code as i32,
        error,
        argv: std::env::args().collect(),
    };
    if let Err(e) = ctx.sink.manifest(&manifest) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
