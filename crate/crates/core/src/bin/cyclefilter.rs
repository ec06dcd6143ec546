use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cyclefilter::commands::{build_run_config, cmd_bench, cmd_synth, cmd_track};
use cyclefilter::Error;

#[derive(Parser)]
#[command(name = "cyclefilter", version, about = "Particle-filter refinement of point tracks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track every grid anchor with the filtered pipeline.
    Track(Flags),
    /// Render a synthetic scene with ground truth.
    Synth(Flags),
    /// Compare raw and filtered pipelines on accuracy and throughput.
    Bench(Flags),
}

#[derive(Args)]
struct Flags {
    /// Directory of PGM/PPM frames or a CFV1 container; a synthetic scene is used when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// key=value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base tracker: ncc or lk.
    #[arg(long)]
    tracker: Option<String>,
    /// Particle count, or a comma-separated sweep for bench.
    #[arg(long)]
    particles: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    sigma0: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Filter seed; also seeds the synthetic scene.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    grid_spacing: Option<String>,
    #[arg(long)]
    box_side: Option<String>,
    /// Pipelines for bench, e.g. raw,filtered-lk.
    #[arg(long)]
    pipelines: Option<String>,
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    height: Option<String>,
    /// static, linear-drift or cardiac-periodic.
    #[arg(long)]
    motion: Option<String>,
    #[arg(long)]
    amplitude: Option<String>,
    /// none or ramp.
    #[arg(long)]
    enrichment: Option<String>,
    #[arg(long)]
    noise: Option<String>,
}

impl Flags {
    fn settings(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("output", self.output.as_ref().map(|p| p.display().to_string())),
            ("input", self.input.as_ref().map(|p| p.display().to_string())),
            ("tracker.kind", self.tracker.clone()),
            ("filter.particles", self.particles.clone()),
            ("filter.window", self.window.clone()),
            ("filter.alpha", self.alpha.clone()),
            ("filter.sigma0", self.sigma0.clone()),
            ("filter.sigma", self.sigma.clone()),
            ("filter.seed", self.seed.clone()),
            ("scene.seed", self.seed.clone()),
            ("run.workers", self.workers.clone()),
            ("grid.spacing", self.grid_spacing.clone()),
            ("grid.box_side", self.box_side.clone()),
            ("bench.pipelines", self.pipelines.clone()),
            ("scene.frames", self.frames.clone()),
            ("scene.width", self.width.clone()),
            ("scene.height", self.height.clone()),
            ("motion.kind", self.motion.clone()),
            ("motion.amplitude", self.amplitude.clone()),
            ("enrichment.kind", self.enrichment.clone()),
            ("scene.noise_sigma", self.noise.clone()),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect()
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let (flags, cmd): (&Flags, fn(&_) -> _) = match &cli.command {
        Command::Track(f) => (f, cmd_track),
        Command::Synth(f) => (f, cmd_synth),
        Command::Bench(f) => (f, cmd_bench),
    };
    let cfg = build_run_config(flags.config.as_deref(), &flags.settings())?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            // malformed command lines are configuration errors
            return ExitCode::from(Error::Config(String::new()).exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
