use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerGains, LoopConfig, PidGains};
use crate::error::{Error, Result};
use crate::fdt::{FdtConfig, TrainConfig, Variant};
use crate::lra::AdapterConfig;
use crate::sim::{PlantModel, TrajectoryKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Unknown { kind: "preset", name: s.to_string() }),
        }
    }
}

/// Training-data protocol: one PID-tracked excitation run per payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub payloads: Vec<f64>,
    /// Seconds of data per payload condition.
    pub duration: f64,
    /// Peak translational rate of the excitation references, m/s.
    pub speed: f64,
    pub dt: f64,
    pub substeps: usize,
    /// Per-tick input dither std per channel.
    pub dither: Vec<f64>,
    /// Train and validation fractions of each run; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

/// Held-out open-loop prediction stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub payload: f64,
    pub duration: f64,
    /// Full per-sample logs are written for this many leading seeds.
    pub log_seeds: usize,
}

/// Closed-loop grid: scenarios x {in-distribution, OOD payload} x speeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenarios: Vec<TrajectoryKind>,
    pub in_dist_payload: f64,
    pub ood_payload: f64,
    pub speeds: Vec<f64>,
    pub log_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Payload of the evaluation stream (outside the training range).
    pub payload: f64,
    pub duration: f64,
    /// Retrained architecture variants; the adapter ablation needs no retrain.
    pub variants: Vec<Variant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// TOML file holding a `PlantModel`; replaces `plant` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant_file: Option<PathBuf>,
    pub plant: PlantModel,
    pub data: DataConfig,
    pub fdt: FdtConfig,
    pub train: TrainConfig,
    pub adapter: AdapterConfig,
    pub gains: ControllerGains,
    pub pid: PidGains,
    pub closed_loop: LoopConfig,
    pub prediction: PredictionConfig,
    pub scenario: ScenarioConfig,
    pub ablation: AblationConfig,
    /// Seed for data generation and training.
    pub seed: u64,
    /// Evaluation seeds: one run per seed in every metric cell.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// 3 x 60 s of data, desk-width network, 20 evaluation seeds.
    pub fn desk() -> Self {
        let plant = PlantModel::default();
        let n = plant.n();
        let mut fdt = FdtConfig::desk(n);
        fdt.d_k = 16;
        Self {
            preset: Preset::Desk,
            plant_file: None,
            data: DataConfig {
                payloads: vec![0.0, 0.2, 0.4],
                duration: 60.0,
                speed: 0.8,
                dt: 1e-3,
                substeps: 10,
                dither: default_dither(n),
                train_fraction: 0.8,
                val_fraction: 0.1,
            },
            fdt,
            train: TrainConfig { batch_size: 64, epochs: 40, patience: 10, window_stride: 4, ..Default::default() },
            adapter: AdapterConfig::default(),
            gains: ControllerGains::table(n).expect("default plant has an arm"),
            pid: PidGains::default_for(n),
            closed_loop: LoopConfig::default(),
            prediction: PredictionConfig { payload: 0.3, duration: 30.0, log_seeds: 1 },
            scenario: ScenarioConfig {
                scenarios: vec![TrajectoryKind::SShape, TrajectoryKind::Figure8],
                in_dist_payload: 0.2,
                ood_payload: 0.5,
                speeds: vec![0.5, 1.0],
                log_seeds: 1,
            },
            ablation: AblationConfig {
                payload: 0.5,
                duration: 30.0,
                variants: vec![Variant::NoGlobalToken, Variant::NoShortContext, Variant::NoMemory],
            },
            seed: 0,
            seeds: (0..20).collect(),
            out_dir: PathBuf::from("runs/desk"),
            plant,
        }
    }

    /// 3 x 5 min of data with the full-size network and training settings.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.preset = Preset::Paper;
        c.data.duration = 300.0;
        c.fdt = FdtConfig::paper(c.plant.n());
        c.train = TrainConfig::default();
        c.out_dir = PathBuf::from("runs/paper");
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Preset values overridden by whatever tables the TOML text sets.
    pub fn from_toml_over(base: Preset, text: &str) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let base = match overrides.get("preset").and_then(|v| v.as_str()) {
            Some(p) => p.parse()?,
            None => base,
        };
        let mut merged =
            toml::Table::try_from(Self::preset(base)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overrides);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads an optional config file over a preset and resolves `plant_file`
    /// relative to the config's directory.
    pub fn load(base: Preset, path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let mut c = Self::from_toml_over(base, &text)?;
                if let (Some(pf), Some(dir)) = (c.plant_file.as_mut(), p.parent()) {
                    if pf.is_relative() {
                        *pf = dir.join(&*pf);
                    }
                }
                c
            }
            None => Self::preset(base),
        };
        if let Some(pf) = &cfg.plant_file {
            let text = std::fs::read_to_string(pf)
                .map_err(|e| Error::Config(format!("plant file {}: {e}", pf.display())))?;
            cfg.plant = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.n();
        self.plant.validate()?;
        self.fdt.validate()?;
        self.adapter.validate()?;
        self.gains.validate()?;
        self.closed_loop.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.fdt.n != n || self.gains.n() != n || self.pid.kp.len() != n {
            return Err(Error::Config(format!("dimension mismatch: plant n = {n}")));
        }
        if let Some(pf) = &self.plant_file {
            if !pf.exists() {
                return Err(Error::Config(format!("plant file {} does not exist", pf.display())));
            }
        }
        let d = &self.data;
        if d.payloads.is_empty() || d.payloads.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Config("payload conditions must be non-empty and non-negative".into()));
        }
        if !(d.train_fraction > 0.0 && d.val_fraction >= 0.0 && d.train_fraction + d.val_fraction <= 1.0) {
            return Err(Error::Config("split fractions must satisfy 0 < train, train + val <= 1".into()));
        }
        if !d.dither.is_empty() && d.dither.len() != n {
            return Err(Error::Config(format!("dither has {} entries, plant n = {n}", d.dither.len())));
        }
        for (name, v) in [
            ("data.duration", d.duration),
            ("data.speed", d.speed),
            ("prediction.duration", self.prediction.duration),
            ("ablation.duration", self.ablation.duration),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.scenario.speeds.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("scenario speeds must be positive".into()));
        }
        Ok(())
    }
}

/// Base and arm dither levels; forces in N on translation, torques in N m.
fn default_dither(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| match i {
            0 | 1 => 1.5,
            2 => 0.05,
            _ => 0.04,
        })
        .collect()
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
