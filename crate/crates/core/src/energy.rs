//! Closed-form energy physics of a base station with co-located MEC servers:
//! utilization, server power, downlink rate, radio energy, slot demand and
//! the generation cost of a renewable commitment.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispatch::CostRates;
use crate::scalar::{pos, Scalar};
use crate::{Error, Result};

/// MEC servers attached to one base station.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec<T> {
    pub k_servers: usize,
    pub cores: usize,
    pub freq_hz: T,
    pub switch_cap_farad: T,
    /// Heterogeneity factor per (server, core), row-major `k_servers × cores`.
    pub core_scale: Vec<T>,
    pub static_w: T,
    pub idle_w: T,
    pub service_capacity_bps: T,
}

impl<T: Scalar> ServerSpec<T> {
    pub fn homogeneous(k_servers: usize, cores: usize, freq_hz: T, static_w: T, idle_w: T, service_capacity_bps: T) -> Self {
        ServerSpec {
            k_servers,
            cores,
            freq_hz,
            switch_cap_farad: T::lit(5e-27),
            core_scale: vec![T::one(); k_servers * cores],
            static_w,
            idle_w,
            service_capacity_bps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_servers == 0 || self.cores == 0 {
            return Err(Error::domain("server spec needs at least one server and one core"));
        }
        if self.core_scale.len() != self.k_servers * self.cores {
            return Err(Error::Dimension { what: "core_scale", expected: self.k_servers * self.cores, got: self.core_scale.len() });
        }
        let positive = |x: T| x.is_finite() && x > T::zero();
        if !positive(self.freq_hz) || !positive(self.switch_cap_farad) || !positive(self.service_capacity_bps) {
            return Err(Error::domain("frequency, switching capacitance and service capacity must be positive"));
        }
        if self.core_scale.iter().any(|&w| !positive(w)) {
            return Err(Error::domain("core scale factors must be positive"));
        }
        if self.static_w < T::zero() || self.idle_w < T::zero() {
            return Err(Error::domain("static and idle power must be non-negative"));
        }
        Ok(())
    }
}

/// Downlink radio parameters of one base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig<T> {
    pub bandwidth_hz: T,
    pub tx_power_w: T,
    pub channel_gain: T,
    pub noise_var: T,
    /// Energy coefficient for pushing data over the air.
    pub coeff: T,
    /// Static radio energy per task, J.
    pub static_j: T,
}

/// Queue state of one base station in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSnapshot<T> {
    /// Reciprocal of the mean task size.
    pub arrival_rate: T,
    /// Reciprocal of the aggregate service capacity.
    pub service_rate: T,
    /// `assignments[j][k]`: task `j` runs on server `k`.
    pub assignments: Vec<Vec<bool>>,
    pub mean_size_bits: T,
}

impl<T: Scalar> LoadSnapshot<T> {
    /// Builds the snapshot for a slot's tasks, placing them round-robin.
    pub fn from_sizes(sizes_bits: &[T], spec: &ServerSpec<T>) -> Self {
        let k = spec.k_servers;
        let n = sizes_bits.len();
        let mean = if n == 0 { T::zero() } else { sizes_bits.iter().copied().sum::<T>() / T::lit(n as f64) };
        let assignments = (0..n).map(|j| (0..k).map(|s| s == j % k).collect()).collect();
        LoadSnapshot {
            arrival_rate: if n == 0 { T::zero() } else { T::one() / mean },
            service_rate: T::one() / (T::lit(k as f64) * spec.service_capacity_bps),
            assignments,
            mean_size_bits: mean,
        }
    }
}

/// `ρ = Σ_j Σ_k Υ_jk · λ / (μ K)`.
pub fn server_utilization<T: Scalar>(load: &LoadSnapshot<T>, spec: &ServerSpec<T>) -> Result<T> {
    if !(load.service_rate > T::zero()) {
        return Err(Error::domain("service rate must be positive"));
    }
    if spec.k_servers == 0 {
        return Err(Error::domain("at least one server is required"));
    }
    let assigned = load.assignments.iter().flatten().filter(|&&a| a).count();
    if assigned == 0 {
        return Ok(T::zero());
    }
    let k = T::lit(spec.k_servers as f64);
    Ok(T::lit(assigned as f64) * load.arrival_rate / (load.service_rate * k))
}

/// Server power in W at utilization `rho`.
pub fn mec_energy_w<T: Scalar>(rho: T, spec: &ServerSpec<T>) -> T {
    if rho > T::zero() {
        let f3 = spec.freq_hz * spec.freq_hz * spec.freq_hz;
        let dynamic: T = spec.core_scale.iter().map(|&w| spec.switch_cap_farad * rho * f3 * w).sum();
        dynamic + spec.static_w
    } else {
        spec.idle_w
    }
}

/// Shannon downlink rate in bit/s given caller-supplied interference power.
pub fn downlink_rate_bps<T: Scalar>(radio: &RadioConfig<T>, channel_gain: T, interference_w: T) -> Result<T> {
    let floor = radio.noise_var + interference_w;
    if !(floor > T::zero()) {
        return Err(Error::domain("noise plus interference must be positive"));
    }
    let snr = radio.tx_power_w * channel_gain / floor;
    Ok(radio.bandwidth_hz * (T::one() + snr).log2())
}

/// Radio energy in J for tasks given as `(size_bits, rate_bps)`.
pub fn net_energy_j<T: Scalar>(radio: &RadioConfig<T>, tasks: &[(T, T)]) -> Result<T> {
    let mut total = T::zero();
    for &(size, rate) in tasks {
        if !(rate > T::zero()) {
            if size > T::zero() {
                return Err(Error::domain("task with data but zero downlink rate is unreachable"));
            }
            total += radio.static_j;
            continue;
        }
        total += radio.coeff * radio.tx_power_w * size / rate + radio.static_j;
    }
    Ok(total)
}

/// Slot demand in kWh from server power (W over `slot_hours`) and radio energy (J).
pub fn total_demand_kwh<T: Scalar>(mec_w: T, net_j: T, slot_hours: T) -> T {
    mec_w * slot_hours / T::lit(1000.0) + net_j / T::lit(3.6e6)
}

pub fn nonrenewable_cost<T: Scalar>(demand: T, ren: T, c_non: T) -> T {
    c_non * pos(demand - ren)
}

pub fn storage_cost<T: Scalar>(demand: T, ren: T, c_sto: T) -> T {
    c_sto * pos(ren - demand)
}

/// Cost of committing `ren` against demand `demand`.
pub fn generation_cost<T: Scalar>(ren: T, demand: T, rates: &CostRates<T>, ren_max: T) -> Result<T> {
    if !(ren >= T::zero() && ren <= ren_max) {
        return Err(Error::range("renewable commitment", ren, 0, ren_max));
    }
    Ok(rates.c_ren * ren + nonrenewable_cost(demand, ren, rates.c_non) + storage_cost(demand, ren, rates.c_sto))
}

/// Converts dBm to W.
pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Linear gain from the `140.7 + 36.7·log10(d_km)` path-loss law.
pub fn path_gain(distance_m: f64) -> f64 {
    let loss_db = 140.7 + 36.7 * (distance_m / 1000.0).log10();
    10f64.powf(-loss_db / 10.0)
}

/// One base station's physical configuration as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsConfig {
    pub ren_max_kwh: f64,
    pub k_servers: usize,
    pub cores: usize,
    pub freq_hz: f64,
    pub switch_cap_farad: f64,
    /// One factor per core of every server; empty means all ones.
    pub core_scale: Vec<f64>,
    pub mec_static_w: f64,
    pub mec_idle_w: f64,
    pub service_capacity_bps: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub net_coeff: f64,
    pub net_static_j: f64,
    pub distance_m: f64,
    pub interference_w: f64,
}

impl Default for BsConfig {
    fn default() -> Self {
        BsConfig {
            ren_max_kwh: 1.0,
            k_servers: 2,
            cores: 4,
            freq_hz: 2.5e9,
            switch_cap_farad: 5e-27,
            core_scale: Vec::new(),
            mec_static_w: 15.0,
            mec_idle_w: 7.5,
            service_capacity_bps: 5.0e5,
            bandwidth_hz: 180e3,
            tx_power_dbm: 27.0,
            noise_dbm: -114.0,
            net_coeff: 2.8,
            net_static_j: 1.0,
            distance_m: 100.0,
            interference_w: 0.0,
        }
    }
}

impl BsConfig {
    pub fn server_spec(&self) -> Result<ServerSpec<f64>> {
        let n = self.k_servers * self.cores;
        let core_scale = if self.core_scale.is_empty() { vec![1.0; n] } else { self.core_scale.clone() };
        let spec = ServerSpec {
            k_servers: self.k_servers,
            cores: self.cores,
            freq_hz: self.freq_hz,
            switch_cap_farad: self.switch_cap_farad,
            core_scale,
            static_w: self.mec_static_w,
            idle_w: self.mec_idle_w,
            service_capacity_bps: self.service_capacity_bps,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn radio(&self) -> RadioConfig<f64> {
        RadioConfig {
            bandwidth_hz: self.bandwidth_hz,
            tx_power_w: dbm_to_w(self.tx_power_dbm),
            channel_gain: path_gain(self.distance_m),
            noise_var: dbm_to_w(self.noise_dbm),
            coeff: self.net_coeff,
            static_j: self.net_static_j,
        }
    }

    /// Demand in kWh of one slot carrying tasks of the given sizes (bytes).
    pub fn slot_demand_kwh(&self, sizes_bytes: &[u64], slot_hours: f64) -> Result<f64> {
        let spec = self.server_spec()?;
        let radio = self.radio();
        if sizes_bytes.is_empty() {
            return Ok(total_demand_kwh(spec.idle_w, radio.static_j, slot_hours));
        }
        let bits: Vec<f64> = sizes_bytes.iter().map(|&b| 8.0 * b as f64).collect();
        let load = LoadSnapshot::from_sizes(&bits, &spec);
        let rho = server_utilization(&load, &spec)?;
        let rate = downlink_rate_bps(&radio, radio.channel_gain, self.interference_w)?;
        let tasks: Vec<(f64, f64)> = bits.iter().map(|&s| (s, rate)).collect();
        let net = net_energy_j(&radio, &tasks)?;
        Ok(total_demand_kwh(mec_energy_w(rho, &spec), net, slot_hours))
    }
}

/// Per-base-station configuration set; `defaults` fills any missing station.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsConfigSet {
    pub defaults: BsConfig,
    pub bs: BTreeMap<String, BsConfig>,
}

impl BsConfigSet {
    pub fn uniform(n_bs: usize, cfg: BsConfig) -> Self {
        BsConfigSet { defaults: cfg.clone(), bs: (0..n_bs).map(|i| (i.to_string(), cfg.clone())).collect() }
    }

    pub fn get(&self, bs_id: usize) -> &BsConfig {
        self.bs.get(&bs_id.to_string()).unwrap_or(&self.defaults)
    }

    /// Parses a config document; each `[bs.N]` section inherits `[defaults]`.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let raw: toml::Table = s.parse().map_err(|e| cfg_err(&e))?;
        if let Some(k) = raw.keys().find(|k| *k != "defaults" && *k != "bs") {
            return Err(Error::Config(format!("unknown section `{k}`")));
        }
        let table_of = |v: Option<&toml::Value>, what: &str| -> Result<toml::Table> {
            match v {
                None => Ok(toml::Table::new()),
                Some(toml::Value::Table(t)) => Ok(t.clone()),
                Some(_) => Err(Error::Config(format!("`{what}` must be a table"))),
            }
        };
        let base = table_of(raw.get("defaults"), "defaults")?;
        let defaults: BsConfig = toml::Value::Table(base.clone()).try_into().map_err(|e| cfg_err(&e))?;
        let mut bs = BTreeMap::new();
        for (id, v) in table_of(raw.get("bs"), "bs")? {
            id.parse::<usize>().map_err(|_| Error::Config(format!("base station id `{id}` is not an integer")))?;
            let mut merged = base.clone();
            merged.extend(table_of(Some(&v), "bs entry")?);
            let cfg: BsConfig = toml::Value::Table(merged).try_into().map_err(|e| cfg_err(&e))?;
            bs.insert(id, cfg);
        }
        Ok(BsConfigSet { defaults, bs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_core(static_w: f64) -> ServerSpec<f64> {
        ServerSpec::homogeneous(1, 1, 2.5e9, static_w, 3.0, 1e6)
    }

    #[test]
    fn utilization_examples() {
        let spec = ServerSpec::homogeneous(2, 1, 2.5e9, 0.0, 0.0, 1.0);
        let one = LoadSnapshot { arrival_rate: 100.0, service_rate: 50.0, assignments: vec![vec![true, false]], mean_size_bits: 0.01 };
        assert_relative_eq!(server_utilization(&one, &spec).unwrap(), 1.0, max_relative = 1e-12);
        let none = LoadSnapshot { assignments: vec![vec![false, false]], ..one.clone() };
        assert_eq!(server_utilization(&none, &spec).unwrap(), 0.0);
        let spec1 = ServerSpec::homogeneous(1, 1, 2.5e9, 0.0, 0.0, 1.0);
        let two = LoadSnapshot { arrival_rate: 10.0, service_rate: 100.0, assignments: vec![vec![true], vec![true]], mean_size_bits: 0.1 };
        assert_relative_eq!(server_utilization(&two, &spec1).unwrap(), 0.2, max_relative = 1e-12);
        let dead = LoadSnapshot { service_rate: 0.0, ..two };
        assert!(server_utilization(&dead, &spec1).is_err());
    }

    #[test]
    fn mec_power_examples() {
        let spec = one_core(10.0);
        assert_relative_eq!(mec_energy_w(0.5, &spec), 49.0625, max_relative = 1e-12);
        assert_eq!(mec_energy_w(0.0, &spec), 3.0);
        let mut doubled = spec.clone();
        doubled.core_scale = vec![2.0];
        assert_relative_eq!(mec_energy_w(0.5, &doubled) - 10.0, 2.0 * 39.0625, max_relative = 1e-12);
    }

    #[test]
    fn downlink_examples() {
        let radio = RadioConfig { bandwidth_hz: 180000.0, tx_power_w: 1.0, channel_gain: 1.0, noise_var: 1.0, coeff: 2.8, static_j: 0.0 };
        assert_relative_eq!(downlink_rate_bps(&radio, 1.0, 0.0).unwrap(), 180000.0, max_relative = 1e-12);
        assert_eq!(downlink_rate_bps(&radio, 0.0, 0.0).unwrap(), 0.0);
        let wide = RadioConfig { bandwidth_hz: 360000.0, ..radio };
        assert_relative_eq!(downlink_rate_bps(&wide, 1.0, 0.0).unwrap(), 360000.0, max_relative = 1e-12);
        let silent = RadioConfig { noise_var: 0.0, ..radio };
        assert!(downlink_rate_bps(&silent, 1.0, 0.0).is_err());
    }

    #[test]
    fn net_energy_examples() {
        let radio = RadioConfig { bandwidth_hz: 1.0, tx_power_w: 0.5, channel_gain: 1.0, noise_var: 1.0, coeff: 2.8, static_j: 1.0 };
        assert_relative_eq!(net_energy_j(&radio, &[(1e6, 1e6)]).unwrap(), 2.4, max_relative = 1e-12);
        assert_eq!(net_energy_j(&radio, &[]).unwrap(), 0.0);
        assert_relative_eq!(net_energy_j(&radio, &[(1e6, 1e6), (1e6, 1e6)]).unwrap(), 4.8, max_relative = 1e-12);
        assert!(net_energy_j(&radio, &[(1e6, 0.0)]).is_err());
    }

    #[test]
    fn demand_unit_conversion() {
        assert_eq!(total_demand_kwh(0.0, 0.0, 0.25), 0.0);
        assert_relative_eq!(total_demand_kwh(1000.0, 0.0, 0.25), 0.25, max_relative = 1e-12);
        assert_relative_eq!(total_demand_kwh(0.0, 3.6e6, 0.25), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn cost_examples() {
        let r = CostRates::<f64>::per_mwh(50.0, 102.0, 55.0).unwrap();
        assert_relative_eq!(nonrenewable_cost(10.0, 4.0, 0.102), 0.612, max_relative = 1e-12);
        assert_eq!(nonrenewable_cost(3.0, 4.0, 0.102), 0.0);
        assert_relative_eq!(storage_cost(10.0, 12.0, 0.055), 0.11, max_relative = 1e-12);
        assert_eq!(storage_cost(10.0, 10.0, 0.055), 0.0);
        assert_relative_eq!(generation_cost(12.0, 10.0, &r, 20.0).unwrap(), 0.71, max_relative = 1e-12);
        assert_relative_eq!(generation_cost(0.0, 10.0, &r, 20.0).unwrap(), 1.02, max_relative = 1e-12);
        assert_relative_eq!(generation_cost(6.5, 6.5, &r, 20.0).unwrap(), 6.5 * r.c_ren, max_relative = 1e-12);
        assert!(generation_cost(25.0, 10.0, &r, 20.0).is_err());
        assert!(generation_cost(-1.0, 10.0, &r, 20.0).is_err());
    }

    #[test]
    fn empty_slot_demand_is_idle_floor() {
        let cfg = BsConfig::default();
        let d = cfg.slot_demand_kwh(&[], 0.25).unwrap();
        let expected = cfg.mec_idle_w * 0.25 / 1000.0 + cfg.net_static_j / 3.6e6;
        assert_relative_eq!(d, expected, max_relative = 1e-12);
    }

    #[test]
    fn config_roundtrip_and_defaults() {
        let text = "[defaults]\nren_max_kwh = 2.0\n\n[bs.1]\nmec_static_w = 25.0\n";
        let set = BsConfigSet::from_toml_str(text).unwrap();
        assert_eq!(set.get(0).ren_max_kwh, 2.0);
        assert_eq!(set.get(1).mec_static_w, 25.0);
        assert_eq!(set.get(1).ren_max_kwh, 2.0);
        assert_eq!(set.get(7).ren_max_kwh, 2.0);
        let back = BsConfigSet::from_toml_str(&set.to_toml_string()).unwrap();
        assert_eq!(back, set);
        assert!(BsConfigSet::from_toml_str("[defaults]\nbogus = 1\n").is_err());
    }

    #[test]
    fn radio_defaults_follow_dbm() {
        let r = BsConfig::default().radio();
        assert_relative_eq!(r.tx_power_w, 0.501187, max_relative = 1e-5);
        assert_relative_eq!(dbm_to_w(30.0), 1.0, max_relative = 1e-12);
    }
}
