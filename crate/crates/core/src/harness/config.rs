//! Run configuration.
//!
//! One TOML file per run, sections per subsystem. Any key can be overridden
//! from the environment as `MTJLAB_<SECTION>__<KEY>` (top-level keys as
//! `MTJLAB_<KEY>`); values are parsed as TOML, falling back to a plain string.
//! A run manifest is also accepted in place of a config file, which is how a
//! run is replayed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::{MtjParams, SwitchingProtocol};
use crate::error::{Error, Result};
use crate::llgs::{DeviceParams, PhysicalConstants, Vec3};
use crate::polar::CheckNodeRule;
use crate::training::{LearningRate, LossSpec, OptimizerConfig, OptimizerKind};

pub const ENV_PREFIX: &str = "MTJLAB_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stream in the run derives from it.
    pub seed: u64,
    /// Worker threads for Monte Carlo loops. Results do not depend on it.
    pub workers: usize,
    pub device: DeviceSection,
    pub sweep: SweepSection,
    pub arith: ArithSection,
    pub code: CodeSection,
    pub train: TrainSection,
    pub ber: BerSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            workers: 1,
            device: DeviceSection::default(),
            sweep: SweepSection::default(),
            arith: ArithSection::default(),
            code: CodeSection::default(),
            train: TrainSection::default(),
            ber: BerSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

/// Free layer, MTJ and switching protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub alpha: f64,
    pub ms: f64,
    pub volume: f64,
    pub temperature: f64,
    pub dt: f64,
    pub hk: f64,
    pub hd: f64,
    pub applied: Vec3,
    pub r_p: f64,
    pub r_ap: f64,
    pub theta_sh: f64,
    pub relax_time: f64,
    pub equilibration_steps: usize,
    pub initial_tilt: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        let m = MtjParams::default();
        Self {
            alpha: m.device.alpha,
            ms: m.device.ms,
            volume: m.device.volume,
            temperature: m.device.temperature,
            dt: m.device.dt,
            hk: m.device.hk,
            hd: m.device.hd,
            applied: m.device.applied,
            r_p: m.r_p,
            r_ap: m.r_ap,
            theta_sh: m.theta_sh,
            relax_time: m.protocol.relax_time,
            equilibration_steps: m.protocol.equilibration_steps,
            initial_tilt: m.protocol.initial_tilt,
        }
    }
}

impl DeviceSection {
    pub fn params(&self) -> Result<MtjParams> {
        let constants = PhysicalConstants::default();
        let p = MtjParams {
            device: DeviceParams {
                alpha: self.alpha,
                gamma: constants.gyromagnetic_ratio(),
                ms: self.ms,
                volume: self.volume,
                temperature: self.temperature,
                dt: self.dt,
                hk: self.hk,
                hd: self.hd,
                applied: self.applied,
                constants,
            },
            r_p: self.r_p,
            r_ap: self.r_ap,
            theta_sh: self.theta_sh,
            protocol: SwitchingProtocol {
                relax_time: self.relax_time,
                equilibration_steps: self.equilibration_steps,
                initial_tilt: self.initial_tilt,
            },
        };
        p.validate()?;
        Ok(p)
    }
}

/// Switching-probability sweep. An explicit `currents_a` list wins over the
/// `current_start_a..=current_stop_a` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub currents_a: Vec<f64>,
    pub current_start_a: f64,
    pub current_stop_a: f64,
    pub points: usize,
    pub pulse_width_s: f64,
    pub trials_per_point: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            currents_a: Vec::new(),
            current_start_a: 4.0e-4,
            current_stop_a: 1.26e-3,
            points: 15,
            pulse_width_s: 1e-9,
            trials_per_point: 2000,
        }
    }
}

impl SweepSection {
    pub fn currents(&self) -> Vec<f64> {
        if !self.currents_a.is_empty() {
            return self.currents_a.clone();
        }
        if self.points < 2 {
            return vec![self.current_start_a; self.points];
        }
        let step = (self.current_stop_a - self.current_start_a) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.current_start_a + step * i as f64).collect()
    }
}

/// Stochastic-arithmetic concentration benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArithSection {
    pub probabilities: Vec<f64>,
    pub length: usize,
    pub seeds: u64,
}

impl Default for ArithSection {
    fn default() -> Self {
        Self { probabilities: vec![0.1, 0.5, 0.9], length: crate::bitstream::DEFAULT_LENGTH, seeds: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeSection {
    pub n: usize,
    pub k: usize,
    pub design_snr_db: f64,
}

impl Default for CodeSection {
    fn default() -> Self {
        Self { n: 8, k: 4, design_snr_db: 0.0 }
    }
}

/// Neural decoder training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: Vec<usize>,
    pub loss: LossSpec,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// λ in `γ_t = γ₀/(1 + λ·t)`; zero keeps the rate constant.
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub frames: usize,
    pub snrs_db: Vec<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            loss: LossSpec::BinaryCrossEntropy,
            optimizer: OptimizerKind::Minibatch,
            learning_rate: 0.5,
            decay: 0.0,
            batch_size: 32,
            epochs: 100,
            frames: 10_000,
            snrs_db: vec![2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }
}

impl TrainSection {
    pub fn optimizer_config(&self, shuffle_seed: u64) -> OptimizerConfig {
        let learning_rate = if self.decay == 0.0 {
            LearningRate::Constant { rate: self.learning_rate }
        } else {
            LearningRate::InverseDecay { initial: self.learning_rate, decay: self.decay }
        };
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            shuffle_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderChoice {
    Classical,
    Neural,
    /// Both decoders on identical frames, plus a paired comparison table.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerSection {
    pub decoder: DecoderChoice,
    pub snr_db: Vec<f64>,
    pub min_frames: u64,
    pub check_node: CheckNodeRule,
    /// Neural model file; defaults to `model.json` in the output directory.
    pub model: Option<String>,
    /// Run the neural decoder with stochastic firing and rate averaging.
    pub stochastic: bool,
    pub window: usize,
    /// Record decode wall time. Timings are not reproducible, so this is off
    /// by default and the column is left empty.
    pub measure_latency: bool,
}

impl Default for BerSection {
    fn default() -> Self {
        Self {
            decoder: DecoderChoice::Classical,
            snr_db: vec![2.0, 3.0, 4.0],
            min_frames: 2000,
            check_node: CheckNodeRule::Exact,
            model: None,
            stochastic: false,
            window: 256,
            measure_latency: false,
        }
    }
}

/// Backprop against central differences on random networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub networks: usize,
    pub max_dims: Vec<usize>,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { networks: 100, max_dims: vec![4, 8, 4], step: 1e-5, tolerance: 1e-5 }
    }
}

fn env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Parses TOML text; errors carry line and key context.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    /// Applies `MTJLAB_*` overrides from `vars`.
    pub fn with_env_overrides(self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = toml::Table::try_from(&self)
            .map_err(|e| Error::Config(format!("cannot re-serialize config: {e}")))?;
        let mut touched = false;
        for (name, raw) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            let value = env_value(&raw);
            match key.split_once("__") {
                Some((section, field)) => {
                    let entry = table
                        .entry(section.to_string())
                        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                    match entry {
                        toml::Value::Table(t) => {
                            t.insert(field.to_string(), value);
                        }
                        _ => return Err(Error::Config(format!("{name}: `{section}` is not a section"))),
                    }
                }
                None => {
                    table.insert(key, value);
                }
            }
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        toml::Value::Table(table).try_into().map_err(|e| Error::Config(format!("environment override: {e}")))
    }

    /// Reads a TOML config, or the `config` of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let origin = path.display().to_string();
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: super::RunManifest = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{origin}: not a run manifest: {e}")))?;
            return Ok(manifest.config);
        }
        Self::from_toml_str(&text, &origin)
    }
}
