//! Run configuration: defaults, key-value files, `DISPATCHD_` environment
//! overrides and explicit overrides, merged in that order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispatch::CostRates;
use crate::trace::RegimeKind;
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "DISPATCHD_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub regime: RegimeKind,
    pub train_day: usize,
    pub test_day: usize,
    pub episodes: usize,
    pub workers: usize,
    pub gamma: f64,
    pub beta: f64,
    pub lr: f64,
    pub lstm_units: usize,
    pub slots_per_day: usize,
    pub slot_hours: f64,
    /// Upper bound on sampled steps per slot.
    pub step_cap: usize,
    /// Adam steps taken on each episode's rollout.
    pub update_epochs: usize,
    pub grad_clip: f64,
    pub c_ren_mwh: f64,
    pub c_non_mwh: f64,
    pub c_sto_mwh: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            regime: RegimeKind::Stochastic,
            train_day: 0,
            test_day: 1,
            episodes: 800,
            workers: 1,
            gamma: 0.9,
            beta: 0.05,
            lr: 0.001,
            lstm_units: 48,
            slots_per_day: 96,
            slot_hours: 0.25,
            step_cap: 32,
            update_epochs: 4,
            grad_clip: 5.0,
            c_ren_mwh: 50.0,
            c_non_mwh: 102.0,
            c_sto_mwh: 55.0,
        }
    }
}

impl RunConfig {
    pub fn rates(&self) -> Result<CostRates<f64>> {
        CostRates::per_mwh(self.c_ren_mwh, self.c_non_mwh, self.c_sto_mwh)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.lstm_units == 0 || self.slots_per_day == 0 || self.step_cap == 0 || self.workers == 0 {
            return bad("lstm_units, slots_per_day, step_cap and workers must be >= 1");
        }
        if !(self.slot_hours > 0.0 && self.grad_clip > 0.0) {
            return bad("slot_hours and grad_clip must be positive");
        }
        self.rates()?;
        Ok(())
    }

    /// Merges defaults, an optional file, environment variables and
    /// explicit `key=value` overrides, later sources winning.
    pub fn resolve<I>(file: Option<&Path>, env: I, overrides: &[(String, String)]) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = toml::Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            table.extend(parsed);
        }
        for (k, v) in env {
            if let Some(key) = k.strip_prefix(ENV_PREFIX) {
                table.insert(key.to_ascii_lowercase(), parse_value(&v));
            }
        }
        for (k, v) in overrides {
            table.insert(k.clone(), parse_value(v));
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The effective configuration in the same key-value syntax it is read from.
    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Interprets a raw string as a TOML scalar, falling back to a string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
