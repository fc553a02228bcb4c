use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparseworld::harness::{self, MetricsReport, RunConfig};
use sparseworld::Error;

#[derive(Parser, Debug)]
#[command(name = "sparseworld", version, about = "Instance-level driving world model: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write the scenario dataset and its manifest.
    Gen,
    /// Train the world model and planners; writes the checkpoint.
    Train,
    /// Forecasting metrics of copy-and-paste, projection and the world model.
    Rollout,
    /// Motion, planning and trajectory-selection metrics.
    Plan,
    /// Everything `rollout` and `plan` report.
    Eval,
    /// Per-frame generation latency and memory at several query budgets.
    Bench {
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Worker threads for per-scenario evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Safety distance in meters.
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Override any config key, e.g. `--set train.motion.epochs=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Suppress training progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(flatten)]
    flags: FlagArgs,
}

macro_rules! flag_args {
    ($($field:ident, $on:literal, $off_field:ident, $off:literal;)*) => {
        #[derive(Args, Debug)]
        struct FlagArgs {
            $(
                #[arg(long = $on, global = true, overrides_with = stringify!($off_field))]
                $field: bool,
                #[arg(long = $off, global = true, overrides_with = stringify!($field))]
                $off_field: bool,
            )*
        }

        impl FlagArgs {
            fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
                $(
                    if self.$field {
                        cfg.flags.set(stringify!($field), true)?;
                    }
                    if self.$off_field {
                        cfg.flags.set(stringify!($field), false)?;
                    }
                )*
                Ok(())
            }
        }
    };
}

flag_args! {
    use_pe, "use-pe", no_pe, "no-pe";
    use_pp, "use-pp", no_pp, "no-pp";
    use_fif, "use-fif", no_fif, "no-fif";
    use_scl, "use-scl", no_scl, "no-scl";
    use_ats, "use-ats", no_ats, "no-ats";
    refine_agents, "refine-agents", no_refine_agents, "no-refine-agents";
    refine_maps, "refine-maps", no_refine_maps, "no-refine-maps";
}

fn config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &common.set {
        cfg.set(assignment)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &common.dataset {
        cfg.paths.dataset = p.clone();
    }
    if let Some(p) = &common.checkpoint {
        cfg.paths.checkpoint = p.clone();
    }
    if let Some(p) = &common.report {
        cfg.paths.report = p.clone();
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if let Some(t) = common.theta {
        cfg.safety.theta = t;
    }
    common.flags.apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<MetricsReport, Error> {
    let cfg = config(&cli.common)?;
    let quiet = cli.common.quiet;
    let report = match cli.command {
        Command::Gen => harness::cmd_gen(&cfg)?,
        Command::Train => harness::cmd_train(&cfg, |line| {
            if !quiet {
                eprintln!("{line}");
            }
        })?,
        Command::Rollout => harness::cmd_rollout(&cfg)?,
        Command::Plan => harness::cmd_plan(&cfg)?,
        Command::Eval => harness::cmd_eval(&cfg)?,
        Command::Bench { repeats } => harness::cmd_bench(&cfg, repeats)?,
    };
    harness::write_report(&cfg.paths.report, &report)?;
    Ok(report)
}

fn summarize(r: &MetricsReport) {
    if let Some(d) = &r.dataset {
        println!("dataset: {} scenarios", d.scenarios);
    }
    if let Some(f) = &r.forecast {
        println!(
            "forecast L2 avg: copy {:.3} m, projection {:.3} m, world model {:.3} m",
            f.copy_paste.l2_avg, f.projection.l2_avg, f.dreamer.l2_avg
        );
    }
    if let Some(m) = &r.motion {
        println!(
            "motion MR/EPA: base {:.3}/{:.3}, refined {:.3}/{:.3}",
            m.base.miss_rate, m.base.epa, m.refined.miss_rate, m.refined.epa
        );
    }
    if let Some(p) = &r.planning {
        println!(
            "planning collision/L2: baseline {:.3}/{:.3} m, pipeline {:.3}/{:.3} m",
            p.baseline.collision_avg, p.baseline.l2_avg, p.pipeline.collision_avg, p.pipeline.l2_avg
        );
    }
    if let Some(b) = &r.bench {
        for s in &b.scales {
            println!("bench {}: {:.2} ms/frame", s.name, s.median_ms);
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(report) => {
            summarize(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
