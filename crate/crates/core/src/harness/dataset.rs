//! Scenario files on disk: one JSONL file per scenario (a header line, then
//! one world state per frame) and a manifest listing them by split.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::scene::SceneLayout;
use crate::sim::{
    generate, AgentScript, EgoProfile, EgoState, Episode, MapElement, MotionMix, Road, Scenario, ScenarioConfig,
    WorldState,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    AdversarialTrain,
    Eval,
    AdversarialEval,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::AdversarialTrain, Split::Eval, Split::AdversarialEval];

    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::AdversarialTrain => "train-adv",
            Split::Eval => "eval",
            Split::AdversarialEval => "eval-adv",
        }
    }

    pub fn is_adversarial(self) -> bool {
        matches!(self, Split::AdversarialTrain | Split::AdversarialEval)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub scenarios: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.scenarios.iter().filter(|e| e.split == split).count()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ScenarioConfig,
    road: Road,
    map: Vec<MapElement>,
    scripts: Vec<AgentScript>,
    ego_track: Vec<EgoState>,
}

/// Scenario configs of one split, in manifest order.
pub fn split_configs(cfg: &RunConfig, split: Split) -> Vec<ScenarioConfig> {
    let d = &cfg.data;
    let (offset, n) = match split {
        Split::Train => (d.train_seed_offset, d.train_scenarios),
        Split::AdversarialTrain => (d.adversarial_train_seed_offset, d.adversarial_train_scenarios),
        Split::Eval => (d.eval_seed_offset, d.eval_scenarios),
        Split::AdversarialEval => (d.adversarial_eval_seed_offset, d.adversarial_eval_scenarios),
    };
    (0..n as u64)
        .map(|i| {
            let seed = cfg.seed.wrapping_add(offset).wrapping_add(i);
            ScenarioConfig {
                seed,
                n_agents: d.n_agents,
                n_map_elements: d.n_map_elements,
                duration: d.duration,
                motion_mix: MotionMix::uniform(),
                ego_profile: EgoProfile::ALL[(seed % 4) as usize],
                adversarial: split.is_adversarial(),
                ..Default::default()
            }
        })
        .collect()
}

pub fn write_scenario(path: &Path, scenario: &Scenario) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        config: scenario.config.clone(),
        road: scenario.road,
        map: scenario.map.clone(),
        scripts: scenario.scripts.clone(),
        ego_track: scenario.ego_track.clone(),
    };
    write_line(&mut out, &header).map_err(io)?;
    for frame in &scenario.frames {
        write_line(&mut out, frame).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn write_line(out: &mut impl Write, value: &impl Serialize) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse = |lineno: usize, e: serde_json::Error| Error::Parse {
        what: format!("{} line {}", path.display(), lineno + 1),
        reason: e.to_string(),
    };
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        what: path.display().to_string(),
        reason: "empty file".into(),
    })?;
    let header: Header = serde_json::from_str(&first.map_err(|e| Error::io(path, e))?).map_err(|e| parse(0, e))?;
    let mut frames = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(serde_json::from_str::<WorldState>(&line).map_err(|e| parse(i, e))?);
    }
    if frames.len() != header.config.duration {
        return Err(Error::Parse {
            what: path.display().to_string(),
            reason: format!("{} frames, header says {}", frames.len(), header.config.duration),
        });
    }
    Ok(Scenario {
        config: header.config,
        road: header.road,
        map: header.map,
        scripts: header.scripts,
        frames,
        ego_track: header.ego_track,
    })
}

/// Generate every split and write it under `cfg.paths.dataset`.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Manifest> {
    let dir = &cfg.paths.dataset;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut scenarios = Vec::new();
    for split in Split::ALL {
        for (i, sc) in split_configs(cfg, split).iter().enumerate() {
            let scenario = generate(sc)?;
            let file = format!("{}-{i:04}.jsonl", split.prefix());
            write_scenario(&dir.join(&file), &scenario)?;
            scenarios.push(ManifestEntry {
                file,
                split,
                seed: sc.seed,
            });
        }
    }
    let manifest = Manifest {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        scenarios,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Episodes of one split, in manifest order.
pub fn load_split(dir: &Path, manifest: &Manifest, split: Split, layout: &SceneLayout) -> Result<Vec<Episode>> {
    manifest
        .scenarios
        .iter()
        .filter(|e| e.split == split)
        .map(|e| read_scenario(&dir.join(&e.file))?.episode(layout))
        .collect()
}

pub fn scenario_path(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    dir.join(&entry.file)
}
