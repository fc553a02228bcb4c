use serde::{Deserialize, Serialize};

use crate::dreamer::train::TrainReport;
use crate::error::{Error, Result};
use crate::motion::MotionMetrics;
use crate::pipeline::PlanFlags;
use crate::selection::{CandidateReport, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning: Option<PlanningReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ats: Option<AtsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchReport>,
    pub meta: Meta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Seconds; excluded from determinism comparisons.
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub scenarios: usize,
    pub train: usize,
    pub adversarial_train: usize,
    pub eval: usize,
    pub adversarial_eval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub dreamer: TrainReport,
    pub motion_history: TrainReport,
    pub motion_mixed: TrainReport,
    pub motion_scl: TrainReport,
    pub history_samples: usize,
    pub forecast_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub threshold_m: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecasterMetrics {
    /// Mean agent-centre error per horizon, meters.
    pub l2: Vec<f64>,
    pub l2_avg: f64,
    /// Centre-distance AP pooled over horizons.
    pub ap: Vec<ApEntry>,
    pub map_ap: f64,
    /// Mean polyline Chamfer distance per horizon, meters.
    pub chamfer: Vec<f64>,
    pub chamfer_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub horizons_s: Vec<f64>,
    pub windows: usize,
    pub copy_paste: ForecasterMetrics,
    pub projection: ForecasterMetrics,
    pub dreamer: ForecasterMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionReport {
    pub windows: usize,
    pub base: MotionMetrics,
    pub refined: MotionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanVariant {
    pub flags: PlanFlags,
    pub scenes: usize,
    pub l2: Vec<f64>,
    pub l2_avg: f64,
    pub collision: Vec<f64>,
    pub collision_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningReport {
    pub split: String,
    pub horizons_s: Vec<f64>,
    pub baseline: PlanVariant,
    /// The configured flags.
    pub pipeline: PlanVariant,
    /// none, FIF, FIF+SCL, FIF+SCL+ATS.
    pub ladder: Vec<PlanVariant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtsScene {
    pub seed: u64,
    pub chosen: Provenance,
    pub fallback: bool,
    pub candidates: Vec<CandidateReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceCount {
    pub provenance: Provenance,
    pub chosen: usize,
    pub mean_scl: f64,
    pub eligible: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtsReport {
    pub flags: PlanFlags,
    pub scenes: usize,
    pub fallbacks: usize,
    pub candidates: Vec<ProvenanceCount>,
    pub details: Vec<AtsScene>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchScale {
    pub name: String,
    pub agent_slots: usize,
    pub map_slots: usize,
    pub trained: bool,
    /// Per-frame generation latency samples, milliseconds.
    pub latency_ms: Vec<f64>,
    pub median_ms: f64,
    /// Peak resident set size of the process after this scale, KiB.
    pub peak_rss_kib: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub scales: Vec<BenchScale>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

impl MetricsReport {
    /// Copy with every wall-clock measurement zeroed.
    pub fn without_timing(&self) -> MetricsReport {
        let mut r = self.clone();
        r.meta.wall_clock_s = 0.0;
        if let Some(b) = &mut r.bench {
            for s in &mut b.scales {
                s.latency_ms.iter_mut().for_each(|x| *x = 0.0);
                s.median_ms = 0.0;
                s.peak_rss_kib = 0;
            }
        }
        r
    }

    /// Check that every number is finite and every average matches its
    /// per-horizon entries.
    pub fn validate(&self) -> Result<()> {
        let value = serde_json::to_value(self).expect("report serializes");
        if let Some(path) = first_non_finite(&value, "") {
            return Err(Error::invalid("metrics report", format!("non-finite value at {path}")));
        }
        let check = |what: &str, avg: f64, items: &[f64]| -> Result<()> {
            if (avg - mean(items)).abs() > 1e-9 {
                return Err(Error::invalid(
                    "metrics report",
                    format!("{what} average {avg} differs from per-horizon mean {}", mean(items)),
                ));
            }
            Ok(())
        };
        if let Some(f) = &self.forecast {
            for (name, m) in [("copy_paste", &f.copy_paste), ("projection", &f.projection), ("dreamer", &f.dreamer)] {
                check(&format!("forecast.{name}.l2"), m.l2_avg, &m.l2)?;
                check(&format!("forecast.{name}.chamfer"), m.chamfer_avg, &m.chamfer)?;
                let aps: Vec<f64> = m.ap.iter().map(|a| a.ap).collect();
                check(&format!("forecast.{name}.ap"), m.map_ap, &aps)?;
            }
        }
        if let Some(p) = &self.planning {
            for v in p.ladder.iter().chain([&p.baseline, &p.pipeline]) {
                check("planning.l2", v.l2_avg, &v.l2)?;
                check("planning.collision", v.collision_avg, &v.collision)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn average(v: Vec<f64>) -> (Vec<f64>, f64) {
    let m = mean(&v);
    (v, m)
}

fn first_non_finite(v: &serde_json::Value, path: &str) -> Option<String> {
    match v {
        // serde_json writes non-finite floats as null
        serde_json::Value::Null => Some(path.to_string()),
        serde_json::Value::Array(items) => items
            .iter()
            .enumerate()
            .find_map(|(i, x)| first_non_finite(x, &format!("{path}[{i}]"))),
        serde_json::Value::Object(map) => map.iter().find_map(|(k, x)| first_non_finite(x, &format!("{path}.{k}"))),
        _ => None,
    }
}
