//! Task and solar traces, their synthetic generator, the per-slot state
//! table, and train/test regime splits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dispatch::CostRates;
use crate::energy::{nonrenewable_cost, storage_cost, BsConfig, BsConfigSet};
use crate::{Error, Result};

pub const TASK_HEADER: [&str; 3] = ["bs_id", "slot", "size_bytes"];
pub const SOLAR_HEADER: [&str; 3] = ["bs_id", "slot", "generation_kwh"];
pub const STATE_HEADER: [&str; 6] = ["bs_id", "slot", "demand_kwh", "renewable_kwh", "storage_cost_usd", "nonrenewable_cost_usd"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskEvent {
    pub bs_id: usize,
    pub slot: usize,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarSample {
    pub bs_id: usize,
    pub slot: usize,
    pub generation_kwh: f64,
}

/// State of one base station in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotRecord {
    pub bs_id: usize,
    pub slot: usize,
    pub demand_kwh: f64,
    pub renewable_kwh: f64,
    pub storage_cost_usd: f64,
    pub nonrenewable_cost_usd: f64,
}

impl SlotRecord {
    pub fn new(bs_id: usize, slot: usize, demand_kwh: f64, renewable_kwh: f64, rates: &CostRates<f64>) -> Self {
        SlotRecord {
            bs_id,
            slot,
            demand_kwh,
            renewable_kwh,
            storage_cost_usd: storage_cost(demand_kwh, renewable_kwh, rates.c_sto),
            nonrenewable_cost_usd: nonrenewable_cost(demand_kwh, renewable_kwh, rates.c_non),
        }
    }
}

/// Grid dimensions of a trace: base stations `0..n_bs`, slots `0..slots`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceShape {
    pub n_bs: usize,
    pub slots: usize,
}

/// Complete `n_bs × slots` grid of slot records for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    pub shape: TraceShape,
    records: Vec<SlotRecord>,
}

impl StateTable {
    /// Builds a table from records covering every cell exactly once.
    pub fn from_records(shape: TraceShape, records: Vec<SlotRecord>) -> Result<Self> {
        let mut grid: Vec<Option<SlotRecord>> = vec![None; shape.n_bs * shape.slots];
        for r in records {
            if r.bs_id >= shape.n_bs {
                return Err(Error::range("bs_id", r.bs_id, 0, shape.n_bs.saturating_sub(1)));
            }
            if r.slot >= shape.slots {
                return Err(Error::range("slot", r.slot, 0, shape.slots.saturating_sub(1)));
            }
            let cell = &mut grid[r.bs_id * shape.slots + r.slot];
            if cell.is_some() {
                return Err(Error::domain(format!("duplicate record for bs {} slot {}", r.bs_id, r.slot)));
            }
            *cell = Some(r);
        }
        let records = grid
            .into_iter()
            .enumerate()
            .map(|(k, r)| r.ok_or_else(|| Error::Missing(format!("record for bs {} slot {}", k / shape.slots, k % shape.slots))))
            .collect::<Result<Vec<_>>>()?;
        Ok(StateTable { shape, records })
    }

    pub fn get(&self, bs: usize, slot: usize) -> &SlotRecord {
        &self.records[bs * self.shape.slots + slot]
    }

    pub fn records(&self) -> &[SlotRecord] {
        &self.records
    }

    /// Records of one base station in slot order.
    pub fn bs_rows(&self, bs: usize) -> &[SlotRecord] {
        &self.records[bs * self.shape.slots..(bs + 1) * self.shape.slots]
    }

    pub fn total_demand(&self, bs: usize) -> f64 {
        self.bs_rows(bs).iter().map(|r| r.demand_kwh).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(STATE_HEADER).map_err(|e| csv_io(path, e))?;
        for r in &self.records {
            w.write_record([
                r.bs_id.to_string(),
                r.slot.to_string(),
                fmt_sig(r.demand_kwh),
                fmt_sig(r.renewable_kwh),
                fmt_sig(r.storage_cost_usd),
                fmt_sig(r.nonrenewable_cost_usd),
            ])
            .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a state CSV; the grid shape is inferred from the largest ids.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = read_rows(path, &STATE_HEADER)?;
        let mut records = Vec::with_capacity(rows.len());
        for (line, f) in rows {
            let rec = SlotRecord {
                bs_id: parse_field(path, line, &f[0], "bs_id")?,
                slot: parse_field(path, line, &f[1], "slot")?,
                demand_kwh: parse_nonneg(path, line, &f[2], "demand_kwh")?,
                renewable_kwh: parse_nonneg(path, line, &f[3], "renewable_kwh")?,
                storage_cost_usd: parse_nonneg(path, line, &f[4], "storage_cost_usd")?,
                nonrenewable_cost_usd: parse_nonneg(path, line, &f[5], "nonrenewable_cost_usd")?,
            };
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::Parse { path: path.into(), line: 1, msg: "state file has no rows".into() });
        }
        let n_bs = records.iter().map(|r| r.bs_id).max().unwrap_or(0) + 1;
        let slots = records.iter().map(|r| r.slot).max().unwrap_or(0) + 1;
        Self::from_records(TraceShape { n_bs, slots }, records)
    }
}

/// Decimal rendering that round-trips exactly and shows at least nine
/// significant digits.
pub fn fmt_sig(x: f64) -> String {
    let mut s = format!("{x}");
    let digits = s.trim_start_matches('-').chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    let sig = digits.trim_start_matches('0').len();
    if x == 0.0 {
        return "0.000000000".to_string();
    }
    if sig < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', 9 - sig));
    }
    s
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.into(), line: e.position().map(|p| p.line()).unwrap_or(0), msg: e.to_string() }
}

/// Reads a headed CSV and returns `(line, fields)` per data row.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(file);
    let got: Vec<String> = rdr.headers().map_err(|e| csv_io(path, e))?.iter().map(str::to_owned).collect();
    if got != header {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected header `{}`, got `{}`", header.join(","), got.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse { path: path.into(), line, msg: format!("expected {} fields, got {}", header.len(), rec.len()) });
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_field<V: FromStr>(path: &Path, line: u64, s: &str, name: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    s.parse::<V>().map_err(|e| Error::Parse { path: path.into(), line, msg: format!("{name} `{s}`: {e}") })
}

fn parse_nonneg(path: &Path, line: u64, s: &str, name: &str) -> Result<f64> {
    let v: f64 = parse_field(path, line, s, name)?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Parse { path: path.into(), line, msg: format!("{name} `{s}` must be finite and >= 0") });
    }
    Ok(v)
}

/// Reads a task CSV, rejecting ids outside `shape`.
pub fn load_task_trace(path: &Path, shape: TraceShape) -> Result<Vec<TaskEvent>> {
    let mut events = Vec::new();
    for (line, f) in read_rows(path, &TASK_HEADER)? {
        let ev = TaskEvent {
            bs_id: parse_field(path, line, &f[0], "bs_id")?,
            slot: parse_field(path, line, &f[1], "slot")?,
            size_bytes: parse_field(path, line, &f[2], "size_bytes")?,
        };
        if ev.size_bytes == 0 {
            return Err(Error::Parse { path: path.into(), line, msg: "size_bytes must be >= 1".into() });
        }
        check_ids(ev.bs_id, ev.slot, shape)?;
        events.push(ev);
    }
    events.sort_by_key(|e| (e.slot, e.bs_id, e.size_bytes));
    Ok(events)
}

pub fn load_solar_trace(path: &Path, shape: TraceShape) -> Result<Vec<SolarSample>> {
    let mut out = Vec::new();
    for (line, f) in read_rows(path, &SOLAR_HEADER)? {
        let s = SolarSample {
            bs_id: parse_field(path, line, &f[0], "bs_id")?,
            slot: parse_field(path, line, &f[1], "slot")?,
            generation_kwh: parse_nonneg(path, line, &f[2], "generation_kwh")?,
        };
        check_ids(s.bs_id, s.slot, shape)?;
        out.push(s);
    }
    out.sort_by_key(|s| (s.slot, s.bs_id));
    Ok(out)
}

fn check_ids(bs_id: usize, slot: usize, shape: TraceShape) -> Result<()> {
    if bs_id >= shape.n_bs {
        return Err(Error::range("bs_id", bs_id, 0, shape.n_bs.saturating_sub(1)));
    }
    if slot >= shape.slots {
        return Err(Error::range("slot", slot, 0, shape.slots.saturating_sub(1)));
    }
    Ok(())
}

pub fn write_task_trace(path: &Path, tasks: &[TaskEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(TASK_HEADER).map_err(|e| csv_io(path, e))?;
    for t in tasks {
        w.write_record([t.bs_id.to_string(), t.slot.to_string(), t.size_bytes.to_string()]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_solar_trace(path: &Path, solar: &[SolarSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(SOLAR_HEADER).map_err(|e| csv_io(path, e))?;
    for s in solar {
        w.write_record([s.bs_id.to_string(), s.slot.to_string(), fmt_sig(s.generation_kwh)]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Knobs of the synthetic trace generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub slots_per_day: usize,
    /// Mean tasks per slot at an average base station.
    pub tasks_per_slot: f64,
    /// Relative swing of the task rate over the day.
    pub diurnal_amplitude: f64,
    /// Slot of peak task arrivals.
    pub busy_slot: f64,
    /// Per-station rate scale drawn uniformly from `1 ± rate_spread`.
    pub rate_spread: f64,
    pub min_size_bytes: u64,
    pub max_size_bytes: u64,
    pub sunrise_slot: usize,
    pub sunset_slot: usize,
    /// Clear-sky peak as a fraction of each station's capacity.
    pub solar_peak_fraction: f64,
    /// Per-station capacity scale drawn uniformly from `1 ± capacity_spread`.
    pub capacity_spread: f64,
    /// Log-sd of the per-slot multiplicative solar noise.
    pub solar_noise: f64,
    /// Log-sd of the per-day cloudiness factor.
    pub day_noise: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            slots_per_day: 96,
            tasks_per_slot: 40.0,
            diurnal_amplitude: 0.35,
            busy_slot: 60.0,
            rate_spread: 0.25,
            min_size_bytes: 31,
            max_size_bytes: 1_546_060,
            sunrise_slot: 24,
            sunset_slot: 76,
            solar_peak_fraction: 0.95,
            capacity_spread: 0.2,
            solar_noise: 0.12,
            day_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayTrace {
    pub tasks: Vec<TaskEvent>,
    pub solar: Vec<SolarSample>,
}

/// Output of [`synth_trace`]: per-day traces plus the station configs they
/// were drawn against.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub shape: TraceShape,
    pub days: Vec<DayTrace>,
    pub configs: BsConfigSet,
}

/// Seeded synthetic traces for `n_bs` stations with ids `0..n_bs`.
pub fn synth_trace(n_bs: usize, n_days: usize, seed: u64, profile: &SynthProfile, base: &BsConfig) -> Result<SynthTrace> {
    if n_bs == 0 || n_days == 0 {
        return Err(Error::domain("synth needs at least one base station and one day"));
    }
    let p = profile;
    if p.sunrise_slot >= p.sunset_slot || p.sunset_slot > p.slots_per_day || p.min_size_bytes == 0 || p.min_size_bytes > p.max_size_bytes {
        return Err(Error::Config("inconsistent synthetic profile".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut configs = BsConfigSet { defaults: base.clone(), bs: BTreeMap::new() };
    let mut rate_scale = Vec::with_capacity(n_bs);
    for bs in 0..n_bs {
        let cap = base.ren_max_kwh * (1.0 + rng.gen_range(-p.capacity_spread..=p.capacity_spread));
        rate_scale.push(1.0 + rng.gen_range(-p.rate_spread..=p.rate_spread));
        let static_w = rng.gen_range(7.5..=25.0);
        configs.bs.insert(bs.to_string(), BsConfig { ren_max_kwh: cap, mec_static_w: static_w, ..base.clone() });
    }
    let slot_noise = LogNormal::new(0.0, p.solar_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let day_noise = LogNormal::new(0.0, p.day_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let t = p.slots_per_day as f64;
    let daylight = (p.sunset_slot - p.sunrise_slot) as f64;
    let mut days = Vec::with_capacity(n_days);
    for _ in 0..n_days {
        let mut tasks = Vec::new();
        let mut solar = Vec::with_capacity(n_bs * p.slots_per_day);
        let cloud: Vec<f64> = (0..n_bs).map(|_| day_noise.sample(&mut rng)).collect();
        for slot in 0..p.slots_per_day {
            let phase = 2.0 * std::f64::consts::PI * (slot as f64 - p.busy_slot) / t;
            for bs in 0..n_bs {
                let rate = p.tasks_per_slot * rate_scale[bs] * (1.0 + p.diurnal_amplitude * phase.cos());
                let count =
                    if rate > 0.0 { Poisson::new(rate).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize } else { 0 };
                for _ in 0..count {
                    tasks.push(TaskEvent { bs_id: bs, slot, size_bytes: rng.gen_range(p.min_size_bytes..=p.max_size_bytes) });
                }
                let cap = configs.get(bs).ren_max_kwh;
                let gen = if slot >= p.sunrise_slot && slot < p.sunset_slot {
                    let x = (slot - p.sunrise_slot) as f64 + 0.5;
                    let clear = p.solar_peak_fraction * cap * (std::f64::consts::PI * x / daylight).sin();
                    (clear * cloud[bs] * slot_noise.sample(&mut rng)).clamp(0.0, cap)
                } else {
                    0.0
                };
                solar.push(SolarSample { bs_id: bs, slot, generation_kwh: gen });
            }
        }
        days.push(DayTrace { tasks, solar });
    }
    Ok(SynthTrace { shape: TraceShape { n_bs, slots: p.slots_per_day }, days, configs })
}

/// Runs the per-slot demand and cost model over a day's traces.
pub fn build_state_space(
    tasks: &[TaskEvent],
    solar: &[SolarSample],
    configs: &BsConfigSet,
    rates: &CostRates<f64>,
    shape: TraceShape,
    slot_hours: f64,
) -> Result<StateTable> {
    let cells = shape.n_bs * shape.slots;
    let mut sizes: Vec<Vec<u64>> = vec![Vec::new(); cells];
    let mut gen = vec![0.0; cells];
    let mut seen_solar = vec![false; cells];
    for t in tasks {
        check_ids(t.bs_id, t.slot, shape)?;
        sizes[t.bs_id * shape.slots + t.slot].push(t.size_bytes);
    }
    for s in solar {
        check_ids(s.bs_id, s.slot, shape)?;
        let k = s.bs_id * shape.slots + s.slot;
        gen[k] += s.generation_kwh;
        seen_solar[k] = true;
    }
    let missing = seen_solar.iter().filter(|&&b| !b).count();
    if missing > 0 {
        log::debug!("{missing} (bs, slot) cells without solar samples treated as zero generation");
    }
    let mut records = Vec::with_capacity(cells);
    for bs in 0..shape.n_bs {
        let cfg = configs.get(bs);
        for slot in 0..shape.slots {
            let k = bs * shape.slots + slot;
            let demand = cfg.slot_demand_kwh(&sizes[k], slot_hours)?;
            records.push(SlotRecord::new(bs, slot, demand, gen[k], rates));
        }
    }
    StateTable::from_records(shape, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    /// Test day equals the training day.
    Deterministic,
    /// Training-day demand with test-day generation.
    Asymmetric,
    /// A fresh test day.
    Stochastic,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 3] = [RegimeKind::Deterministic, RegimeKind::Asymmetric, RegimeKind::Stochastic];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Deterministic => "deterministic",
            RegimeKind::Asymmetric => "asymmetric",
            RegimeKind::Stochastic => "stochastic",
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(RegimeKind::Deterministic),
            "asymmetric" => Ok(RegimeKind::Asymmetric),
            "stochastic" => Ok(RegimeKind::Stochastic),
            _ => Err(Error::Config(format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub train_day: usize,
    pub test_day: usize,
}

impl RegimeSpec {
    /// Whether the test day reuses the training day's (demand, generation).
    pub fn reused_channels(&self) -> (bool, bool) {
        match self.kind {
            RegimeKind::Deterministic => (true, true),
            RegimeKind::Asymmetric => (true, false),
            RegimeKind::Stochastic => (false, false),
        }
    }
}

/// Splits day tables into (train, test) per the regime.
pub fn split_regime(days: &[StateTable], spec: &RegimeSpec, rates: &CostRates<f64>) -> Result<(StateTable, StateTable)> {
    let get = |d: usize| days.get(d).ok_or_else(|| Error::range("day index", d, 0, days.len().saturating_sub(1)));
    let train = get(spec.train_day)?.clone();
    let test = match spec.kind {
        RegimeKind::Deterministic => train.clone(),
        RegimeKind::Stochastic => get(spec.test_day)?.clone(),
        RegimeKind::Asymmetric => {
            let other = get(spec.test_day)?;
            if other.shape != train.shape {
                return Err(Error::domain("train and test days differ in shape"));
            }
            let records = train
                .records()
                .iter()
                .map(|r| SlotRecord::new(r.bs_id, r.slot, r.demand_kwh, other.get(r.bs_id, r.slot).renewable_kwh, rates))
                .collect();
            StateTable::from_records(train.shape, records)?
        }
    };
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn shape(n: usize) -> TraceShape {
        TraceShape { n_bs: n, slots: 96 }
    }

    fn write_tmp(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn task_trace_parses_sizes() {
        let f = write_tmp("bs_id,slot,size_bytes\n0,0,31\n0,0,1546060\n");
        let ev = load_task_trace(f.path(), shape(1)).unwrap();
        assert_eq!(ev.iter().map(|e| e.size_bytes).collect::<Vec<_>>(), vec![31, 1546060]);
    }

    #[test]
    fn task_trace_header_only_is_empty() {
        let f = write_tmp("bs_id,slot,size_bytes\n");
        assert!(load_task_trace(f.path(), shape(1)).unwrap().is_empty());
    }

    #[test]
    fn task_trace_negative_size_reports_line() {
        let f = write_tmp("bs_id,slot,size_bytes\n0,0,31\n0,0,-5\n");
        match load_task_trace(f.path(), shape(1)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn task_trace_rejects_unknown_station() {
        let f = write_tmp("bs_id,slot,size_bytes\n4,0,31\n");
        assert!(matches!(load_task_trace(f.path(), shape(2)), Err(Error::Range { .. })));
    }

    #[test]
    fn task_trace_sorted_by_slot_then_station() {
        let f = write_tmp("bs_id,slot,size_bytes\n1,2,10\n0,5,10\n0,2,10\n");
        let ev = load_task_trace(f.path(), shape(2)).unwrap();
        let keys: Vec<_> = ev.iter().map(|e| (e.slot, e.bs_id)).collect();
        assert_eq!(keys, vec![(2, 0), (2, 1), (5, 0)]);
    }

    #[test]
    fn fmt_sig_pads_and_roundtrips() {
        assert_eq!(fmt_sig(0.5), "0.500000000");
        assert_eq!(fmt_sig(12.0), "12.0000000");
        let x = 0.1234567890123;
        assert_eq!(fmt_sig(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt_sig(0.0), "0.000000000");
    }

    #[test]
    fn synth_populates_grid_and_is_deterministic() {
        let a = synth_trace(9, 1, 42, &SynthProfile::default(), &BsConfig::default()).unwrap();
        let solar_cells: std::collections::BTreeSet<_> = a.days[0].solar.iter().map(|s| (s.bs_id, s.slot)).collect();
        assert_eq!(solar_cells.len(), 9 * 96);
        let b = synth_trace(9, 1, 42, &SynthProfile::default(), &BsConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = synth_trace(9, 1, 43, &SynthProfile::default(), &BsConfig::default()).unwrap();
        assert_ne!(a.days[0].tasks, c.days[0].tasks);
    }

    #[test]
    fn synth_night_is_dark_and_sizes_in_range() {
        let p = SynthProfile::default();
        let tr = synth_trace(3, 2, 5, &p, &BsConfig::default()).unwrap();
        for day in &tr.days {
            for s in &day.solar {
                if s.slot < p.sunrise_slot || s.slot >= p.sunset_slot {
                    assert_eq!(s.generation_kwh, 0.0);
                }
                assert!(s.generation_kwh <= tr.configs.get(s.bs_id).ren_max_kwh);
            }
            assert!(day.tasks.iter().all(|t| (31..=1_546_060).contains(&t.size_bytes)));
        }
    }

    #[test]
    fn state_space_storage_example() {
        let rates = CostRates::<f64>::default_rates();
        let r = SlotRecord::new(0, 0, 10.0, 12.0, &rates);
        assert_relative_eq!(r.storage_cost_usd, 0.11, max_relative = 1e-12);
        assert_eq!(r.nonrenewable_cost_usd, 0.0);
        let eq = SlotRecord::new(0, 0, 3.0, 3.0, &rates);
        assert_eq!((eq.storage_cost_usd, eq.nonrenewable_cost_usd), (0.0, 0.0));
    }

    #[test]
    fn state_space_empty_slot_is_idle_floor() {
        let cfgs = BsConfigSet::uniform(2, BsConfig::default());
        let sh = TraceShape { n_bs: 2, slots: 4 };
        let table = build_state_space(&[], &[], &cfgs, &CostRates::default(), sh, 0.25).unwrap();
        assert_eq!(table.records().len(), 8);
        let cfg = BsConfig::default();
        let floor = cfg.mec_idle_w * 0.25 / 1000.0 + cfg.net_static_j / 3.6e6;
        for r in table.records() {
            assert_relative_eq!(r.demand_kwh, floor, max_relative = 1e-12);
            assert_eq!(r.renewable_kwh, 0.0);
        }
    }

    #[test]
    fn state_csv_roundtrip() {
        let tr = synth_trace(2, 1, 1, &SynthProfile::default(), &BsConfig::default()).unwrap();
        let t = build_state_space(&tr.days[0].tasks, &tr.days[0].solar, &tr.configs, &CostRates::default(), tr.shape, 0.25).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        t.write_csv(f.path()).unwrap();
        assert_eq!(StateTable::read_csv(f.path()).unwrap(), t);
    }

    #[test]
    fn state_csv_corrupt_row_has_line() {
        let f = write_tmp("bs_id,slot,demand_kwh,renewable_kwh,storage_cost_usd,nonrenewable_cost_usd\n0,0,1,1,0,0\n0,1,abc,1,0,0\n");
        match StateTable::read_csv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn regimes_split_channels() {
        let rates = CostRates::default();
        let tr = synth_trace(2, 2, 9, &SynthProfile::default(), &BsConfig::default()).unwrap();
        let days: Vec<_> =
            tr.days.iter().map(|d| build_state_space(&d.tasks, &d.solar, &tr.configs, &rates, tr.shape, 0.25).unwrap()).collect();
        let spec = |kind| RegimeSpec { kind, train_day: 0, test_day: 1 };
        let (a, b) = split_regime(&days, &spec(RegimeKind::Deterministic), &rates).unwrap();
        assert_eq!(a, b);
        let (a, b) = split_regime(&days, &spec(RegimeKind::Asymmetric), &rates).unwrap();
        for (x, y) in a.records().iter().zip(b.records()) {
            assert_eq!(x.demand_kwh, y.demand_kwh);
            assert_eq!(y.renewable_kwh, days[1].get(y.bs_id, y.slot).renewable_kwh);
            assert_eq!(*y, SlotRecord::new(y.bs_id, y.slot, y.demand_kwh, y.renewable_kwh, &rates));
        }
        let (_, b) = split_regime(&days, &spec(RegimeKind::Stochastic), &rates).unwrap();
        assert_eq!(b, days[1]);
        assert!(split_regime(&days, &RegimeSpec { kind: RegimeKind::Stochastic, train_day: 0, test_day: 5 }, &rates).is_err());
    }
}
