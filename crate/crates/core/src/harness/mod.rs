//! Dataset generation, training, evaluation and benchmarking behind the CLI.

pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod models;
pub mod report;
pub mod scoring;

use std::path::Path;
use std::time::Instant;

pub use config::{Flags, RunConfig};
pub use models::{Checkpoint, Models};
pub use report::MetricsReport;

use crate::alignment::project_instances;
use crate::dreamer::{decoder_step, DreamerConfig, DreamerParams};
use crate::error::{Error, Result};
use crate::scene::SceneLayout;
use crate::sim::{generate, ScenarioConfig};
use dataset::{generate_dataset, load_split, read_manifest, Manifest, Split};
use report::{BenchReport, BenchScale, DatasetSummary, Meta};

fn report(cfg: &RunConfig, command: &str, started: Instant) -> MetricsReport {
    MetricsReport {
        command: command.into(),
        dataset: None,
        training: None,
        forecast: None,
        motion: None,
        planning: None,
        ats: None,
        bench: None,
        meta: Meta {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_s: started.elapsed().as_secs_f64(),
        },
    }
}

fn finish(mut r: MetricsReport, started: Instant) -> Result<MetricsReport> {
    r.meta.wall_clock_s = started.elapsed().as_secs_f64();
    r.validate()?;
    Ok(r)
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn summary(m: &Manifest) -> DatasetSummary {
    DatasetSummary {
        scenarios: m.scenarios.len(),
        train: m.count(Split::Train),
        adversarial_train: m.count(Split::AdversarialTrain),
        eval: m.count(Split::Eval),
        adversarial_eval: m.count(Split::AdversarialEval),
    }
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<MetricsReport> {
    let started = Instant::now();
    cfg.validate()?;
    let manifest = generate_dataset(cfg)?;
    let mut r = report(cfg, "gen", started);
    r.dataset = Some(summary(&manifest));
    finish(r, started)
}

pub fn cmd_train(cfg: &RunConfig, log: impl FnMut(&str)) -> Result<MetricsReport> {
    let started = Instant::now();
    cfg.validate()?;
    let dir = &cfg.paths.dataset;
    let manifest = read_manifest(dir)?;
    let layout = SceneLayout::default();
    let train = load_split(dir, &manifest, Split::Train, &layout)?;
    let adversarial = load_split(dir, &manifest, Split::AdversarialTrain, &layout)?;
    if train.is_empty() {
        return Err(Error::invalid("dataset", "no training scenarios"));
    }
    let (models, training) = models::train_models(cfg, &train, &adversarial, log)?;
    Checkpoint::new(&models, cfg.hash()).save(&cfg.paths.checkpoint)?;
    let mut r = report(cfg, "train", started);
    r.dataset = Some(summary(&manifest));
    r.training = Some(training);
    finish(r, started)
}

/// Load the checkpoint and check it matches the run's world-model flags.
pub fn load_models(cfg: &RunConfig) -> Result<Models> {
    let models = Checkpoint::load(&cfg.paths.checkpoint)?.models()?;
    let d = &models.dreamer.config;
    let want = models::dreamer_config(cfg);
    let flags = [
        ("use_pe", d.use_pe, want.use_pe),
        ("use_pp", d.use_pp, want.use_pp),
        ("refine_agents", d.refine_agents, want.refine_agents),
        ("refine_maps", d.refine_maps, want.refine_maps),
    ];
    for (name, have, want) in flags {
        if have != want {
            return Err(Error::invalid(
                "flags",
                format!("{name} = {want} but the checkpoint was trained with {have}"),
            ));
        }
    }
    Ok(models)
}

struct EvalData {
    manifest: Manifest,
    models: Models,
}

fn eval_data(cfg: &RunConfig) -> Result<EvalData> {
    cfg.validate()?;
    let manifest = read_manifest(&cfg.paths.dataset)?;
    let models = load_models(cfg)?;
    Ok(EvalData { manifest, models })
}

fn split(cfg: &RunConfig, d: &EvalData, split: Split) -> Result<(Vec<crate::sim::Episode>, Vec<u64>)> {
    let eps = load_split(&cfg.paths.dataset, &d.manifest, split, &d.models.layout())?;
    if eps.is_empty() {
        return Err(Error::invalid("dataset", format!("split {split:?} is empty")));
    }
    let seeds = d.manifest.scenarios.iter().filter(|e| e.split == split).map(|e| e.seed).collect();
    Ok((eps, seeds))
}

fn add_forecast(cfg: &RunConfig, d: &EvalData, r: &mut MetricsReport) -> Result<()> {
    let (eps, _) = split(cfg, d, Split::Eval)?;
    r.forecast = Some(evaluate::evaluate_forecast(cfg, &eps, &d.models.dreamer)?);
    Ok(())
}

fn add_planning(cfg: &RunConfig, d: &EvalData, r: &mut MetricsReport) -> Result<()> {
    let (eps, _) = split(cfg, d, Split::Eval)?;
    r.motion = evaluate::evaluate_motion(cfg, &eps, &d.models)?;
    let (adv, seeds) = split(cfg, d, Split::AdversarialEval)?;
    let (planning, ats) = evaluate::evaluate_planning(cfg, "adversarial_eval", &adv, &seeds, &d.models)?;
    r.planning = Some(planning);
    r.ats = Some(ats);
    Ok(())
}

pub fn cmd_rollout(cfg: &RunConfig) -> Result<MetricsReport> {
    let started = Instant::now();
    let d = eval_data(cfg)?;
    let mut r = report(cfg, "rollout", started);
    add_forecast(cfg, &d, &mut r)?;
    finish(r, started)
}

pub fn cmd_plan(cfg: &RunConfig) -> Result<MetricsReport> {
    let started = Instant::now();
    let d = eval_data(cfg)?;
    let mut r = report(cfg, "plan", started);
    add_planning(cfg, &d, &mut r)?;
    finish(r, started)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let started = Instant::now();
    let d = eval_data(cfg)?;
    let mut r = report(cfg, "eval", started);
    add_forecast(cfg, &d, &mut r)?;
    add_planning(cfg, &d, &mut r)?;
    finish(r, started)
}

/// Query budgets measured by `bench` besides the trained desk model.
pub const BENCH_SCALES: [(&str, usize, usize); 4] = [
    ("sweep-128", 128, 8),
    ("sweep-512", 512, 8),
    ("sweep-1000", 1000, 8),
    ("full-900-100", 900, 100),
];

fn peak_rss_kib() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0)
}

fn time_scale(name: &str, params: &DreamerParams, cfg: &RunConfig, repeats: usize, trained: bool) -> Result<BenchScale> {
    let layout = params.config.layout;
    let m = params.config.window;
    let episode = generate(&ScenarioConfig {
        seed: cfg.seed,
        ..Default::default()
    })?
    .episode(&layout)?;
    let t = m;
    let window: Vec<_> = (0..=m).map(|k| &episode.frames[k]).collect();
    let steps: Vec<_> = (0..m).map(|k| episode.ego_step(k)).collect();
    let projected = project_instances(&episode.frames[t], &episode.ego_step(t));
    let condition = &episode.conditions[t];
    let mut latency_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(decoder_step(params, &window, &steps, &projected, condition)?);
        latency_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = latency_ms.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BenchScale {
        name: name.into(),
        agent_slots: layout.agent_slots,
        map_slots: layout.map_slots,
        trained,
        median_ms: sorted[sorted.len() / 2],
        latency_ms,
        peak_rss_kib: peak_rss_kib(),
    })
}

pub fn cmd_bench(cfg: &RunConfig, repeats: usize) -> Result<MetricsReport> {
    let started = Instant::now();
    cfg.validate()?;
    if repeats == 0 {
        return Err(Error::invalid("bench", "repeats must be positive"));
    }
    let models = load_models(cfg)?;
    let mut scales = vec![time_scale("desk", &models.dreamer, cfg, repeats, true)?];
    for (name, agents, maps) in BENCH_SCALES {
        let config = DreamerConfig {
            layout: SceneLayout {
                agent_slots: agents,
                map_slots: maps,
                ..models.layout()
            },
            ..models.dreamer.config.clone()
        };
        let params = DreamerParams::new(config, cfg.seed)?;
        scales.push(time_scale(name, &params, cfg, repeats, false)?);
    }
    let mut r = report(cfg, "bench", started);
    r.bench = Some(BenchReport { repeats, scales });
    finish(r, started)
}
