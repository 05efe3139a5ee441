//! Run configuration: a flat `key = value` file, `--set` overrides and
//! stage flags merged into typed settings.
//!
//! Recognised keys:
//!
//! ```text
//! seed
//! sim.bore_diameter sim.rod_diameter sim.stroke sim.bulk_modulus
//! sim.supply_pressure sim.relief_pressure sim.moving_mass
//! sim.viscous_friction sim.coulomb_friction sim.valve_flow_gain
//! sim.dead_volume sim.dt sim.sample_rate sim.duration sim.noise_std
//! sim.cycles sim.repeats
//! leak.k_low leak.k_high
//! signal.seq_len signal.min_cycle_samples
//! model.lstm1 model.lstm2 model.dense1 model.dense2 model.dropout
//! model.precision
//! train.epochs train.lr train.batch_size train.shuffle_each_epoch
//! detect.max_cycle_samples detect.budget_ms
//! ```

use std::path::Path;

use anyhow::{bail, Result};
use hydroleak::config::FlatConfig;
use hydroleak::detect::DetectorConfig;
use hydroleak::signal::SignalConfig;
use hydroleak::train::TrainConfig;
use hydroleak::{ActuatorParams, Error, LeakCalibration, NetworkSpec, SimConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("expected f32 or f64, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub actuator: ActuatorParams,
    pub leak: LeakCalibration,
    pub sim: SimConfig,
    pub repeats: usize,
    pub signal: SignalConfig,
    pub model: NetworkSpec,
    pub precision: Precision,
    pub train: TrainConfig,
    pub detect: DetectorConfig,
    pub budget_ms: f64,
}

impl Settings {
    /// Merges the config file (if any) with `overrides`, which win. Every
    /// key must be recognised.
    pub fn resolve(config: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match config {
            Some(path) => FlatConfig::load(path)?,
            None => FlatConfig::default(),
        };
        for (k, v) in overrides {
            cfg.set(k.clone(), v);
        }

        let seed = cfg.take("seed")?.unwrap_or(0);
        let mut actuator = ActuatorParams::default();
        actuator.override_from(&mut cfg)?;
        let mut leak = LeakCalibration::default();
        leak.override_from(&mut cfg)?;
        let mut sim = SimConfig::default();
        sim.override_from(&mut cfg)?;
        let repeats = cfg.take("sim.repeats")?.unwrap_or(1);
        let mut signal = SignalConfig::default();
        signal.override_from(&mut cfg)?;

        let mut model = NetworkSpec::standard();
        cfg.take_into("model.lstm1", &mut model.lstm1)?;
        cfg.take_into("model.lstm2", &mut model.lstm2)?;
        cfg.take_into("model.dense1", &mut model.dense1)?;
        cfg.take_into("model.dense2", &mut model.dense2)?;
        cfg.take_into("model.dropout", &mut model.dropout)?;
        let precision = cfg.take("model.precision")?.unwrap_or(Precision::F32);

        let mut train = TrainConfig::default();
        train.override_from(&mut cfg)?;
        train.seed = seed;

        let mut detect = DetectorConfig::for_seq_len(signal.seq_len);
        detect.min_cycle_samples = signal.min_cycle_samples;
        cfg.take_into("detect.max_cycle_samples", &mut detect.max_cycle_samples)?;
        let budget_ms = cfg.take("detect.budget_ms")?.unwrap_or(5.0);
        cfg.finish()?;

        let settings = Self {
            seed,
            actuator,
            leak,
            sim,
            repeats,
            signal,
            model,
            precision,
            train,
            detect,
            budget_ms,
        };
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<()> {
        self.actuator.validate()?;
        self.leak.validate()?;
        self.sim.validate()?;
        self.signal.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.detect.validate()?;
        if self.repeats == 0 {
            return Err(Error::Config("sim.repeats must be at least 1".into()).into());
        }
        if !(self.budget_ms > 0.0) {
            bail!(Error::Config("detect.budget_ms must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the fully resolved settings, first 16 hex digits.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("settings serialize");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn banner(&self, command: &str) -> String {
        format!(
            "{command}: seed={} config_digest={}",
            self.seed,
            self.digest()
        )
    }
}

/// Parses `key=value`.
pub fn parse_override(raw: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{raw}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
