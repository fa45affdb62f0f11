//! Evaluation metrics, the energy and cost ledger, and the Monte Carlo probe
//! of multi-agent gradient alignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::PolicyRun;
use crate::dispatch::{Action, CostRates, Dispatch};
use crate::mamrl::LogRow;
use crate::{Error, Result};

fn same_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { what, expected: b, got: a });
    }
    if a == 0 {
        return Err(Error::domain(format!("{what}: empty series")));
    }
    Ok(())
}

/// Fraction of positions where the two action sequences agree.
pub fn decision_accuracy(predicted: &[Action], truth: &[Action]) -> Result<f64> {
    same_len("action sequence", predicted.len(), truth.len())?;
    Ok(predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}

pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    same_len("kWh series", predicted.len(), actual.len())?;
    Ok(predicted.iter().zip(actual).map(|(p, y)| (p - y).abs()).sum::<f64>() / actual.len() as f64)
}

fn variance(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count() as f64;
    let mean = x.clone().sum::<f64>() / n;
    x.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// `1 − Var(y − ŷ) / Var(y)`; `None` when the target is constant.
pub fn explained_variance(predicted: &[f64], actual: &[f64]) -> Result<Option<f64>> {
    same_len("kWh series", predicted.len(), actual.len())?;
    let var_y = variance(actual.iter().copied());
    if var_y == 0.0 {
        return Ok(None);
    }
    let var_r = variance(actual.iter().zip(predicted).map(|(y, p)| y - p));
    Ok(Some(1.0 - var_r / var_y))
}

/// Online over hindsight cost; infinite when only the online policy pays.
pub fn competitive_ratio(online: f64, hindsight: f64) -> f64 {
    if hindsight > 0.0 {
        online / hindsight
    } else if online > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// One method's energy and cost totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub method: String,
    pub non_kwh: f64,
    pub sto_kwh: f64,
    pub ren_kwh: f64,
    pub non_cost: f64,
    pub sto_cost: f64,
    pub ren_cost: f64,
    pub total_cost: f64,
    /// Percent above the reference (hindsight) cost.
    pub pct_vs_truth: f64,
}

pub const LEDGER_HEADER: [&str; 9] =
    ["method", "non_kwh", "sto_kwh", "ren_kwh", "non_cost", "sto_cost", "ren_cost", "total_cost", "pct_vs_truth"];

impl LedgerRow {
    pub fn new(method: &str, totals: &Dispatch, rates: &CostRates<f64>, reference_cost: f64) -> Self {
        let non_cost = totals.non_kwh * rates.c_non;
        let sto_cost = totals.sto_kwh * rates.c_sto;
        let ren_cost = totals.ren_kwh * rates.c_ren;
        let total_cost = non_cost + sto_cost + ren_cost;
        let pct_vs_truth = if reference_cost > 0.0 { 100.0 * (total_cost - reference_cost) / reference_cost } else { 0.0 };
        LedgerRow {
            method: method.to_string(),
            non_kwh: totals.non_kwh,
            sto_kwh: totals.sto_kwh,
            ren_kwh: totals.ren_kwh,
            non_cost,
            sto_cost,
            ren_cost,
            total_cost,
            pct_vs_truth,
        }
    }

    /// CSV fields rounded to cents and hundredths of a kWh.
    pub fn csv_fields(&self) -> Vec<String> {
        let r = |x: f64| format!("{x:.2}");
        vec![
            self.method.clone(),
            r(self.non_kwh),
            r(self.sto_kwh),
            r(self.ren_kwh),
            r(self.non_cost),
            r(self.sto_cost),
            r(self.ren_cost),
            r(self.total_cost),
            r(self.pct_vs_truth),
        ]
    }
}

/// Totals of the dispatch columns of a set of log rows.
pub fn log_totals(rows: &[LogRow]) -> Dispatch {
    let mut t = Dispatch::default();
    for r in rows {
        t.add(&Dispatch { ren_kwh: r.ren_kwh, non_kwh: r.non_kwh, sto_kwh: r.sto_kwh });
    }
    t
}

/// Ledger rows for every run, priced against `reference_cost`.
pub fn energy_ledger(runs: &[PolicyRun], rates: &CostRates<f64>, reference_cost: f64) -> Vec<LedgerRow> {
    runs.iter().map(|r| LedgerRow::new(&r.method, &r.total(), rates, reference_cost)).collect()
}

pub fn write_ledger_csv(rows: &[LedgerRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::domain(e.to_string()))?;
    w.write_record(LEDGER_HEADER).map_err(|e| Error::domain(e.to_string()))?;
    for r in rows {
        w.write_record(r.csv_fields()).map_err(|e| Error::domain(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-slot grid purchases of a run.
pub fn nonrenewable_series(run: &PolicyRun) -> Vec<f64> {
    run.dispatch.iter().map(|d| d.non_kwh).collect()
}

/// Headline metrics of one method on one regime.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: String,
    pub accuracy: Option<f64>,
    pub mae_kwh: f64,
    pub explained_variance: Option<f64>,
    /// `None` when infinite.
    pub competitive_ratio: Option<f64>,
    pub total_cost: f64,
}

/// Scores `run` against the supply-demand labels of the same table: accuracy
/// of its decisions, and MAE and explained variance of its per-slot grid
/// purchases against the labels' purchases.
pub fn method_metrics(run: &PolicyRun, labels: &PolicyRun, hindsight_cost: f64, rates: &CostRates<f64>) -> Result<MethodMetrics> {
    let accuracy = match (&run.actions, &labels.actions) {
        (Some(a), Some(t)) => Some(decision_accuracy(a, t)?),
        _ => None,
    };
    let pred = nonrenewable_series(run);
    let target = nonrenewable_series(labels);
    let total_cost = run.cost(rates);
    let ratio = competitive_ratio(total_cost, hindsight_cost);
    Ok(MethodMetrics {
        method: run.method.clone(),
        accuracy,
        mae_kwh: mae(&pred, &target)?,
        explained_variance: explained_variance(&pred, &target)?,
        competitive_ratio: ratio.is_finite().then_some(ratio),
        total_cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeResult {
    pub n_agents: usize,
    pub samples: usize,
    pub empirical: f64,
    pub theoretical: f64,
    pub std_error: f64,
}

impl ProbeResult {
    /// Distance from theory in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.theoretical) / self.std_error
    }
}

const PROBE_CHUNK: usize = 8192;

/// Monte Carlo estimate of how often a single agent's score-function
/// gradient points the same way as the joint objective when every agent
/// draws a fair binary action and the joint reward is 1 only if all agents
/// pick action 1. The per-sample estimator is `r·(2a − 1)`; a sample aligns
/// when it is positive, which happens with probability `0.5^n`.
pub fn convergence_probe(n_agents: usize, samples: usize, seed: u64) -> Result<ProbeResult> {
    if n_agents == 0 || samples == 0 {
        return Err(Error::domain("probe needs at least one agent and one sample"));
    }
    let chunks = samples.div_ceil(PROBE_CHUNK);
    let counts: Vec<usize> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = PROBE_CHUNK.min(samples - c * PROBE_CHUNK);
            (0..len)
                .filter(|_| {
                    let acts: Vec<bool> = (0..n_agents).map(|_| rng.gen::<bool>()).collect();
                    let r = if acts.iter().all(|&a| a) { 1.0 } else { 0.0 };
                    let estimator = r * if acts[0] { 1.0 } else { -1.0 };
                    estimator > 0.0
                })
                .count()
        })
        .collect();
    let hits: usize = counts.iter().sum();
    let theoretical = 0.5f64.powi(n_agents as i32);
    Ok(ProbeResult {
        n_agents,
        samples,
        empirical: hits as f64 / samples as f64,
        theoretical,
        std_error: (theoretical * (1.0 - theoretical) / samples as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    #[test]
    fn accuracy_examples() {
        let a = [Action::Store, Action::NonRenewable, Action::Store];
        let c = [Action::NonRenewable, Action::Store, Action::NonRenewable];
        assert_eq!(decision_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(decision_accuracy(&a, &c).unwrap(), 0.0);
        assert!(decision_accuracy(&a, &c[..2]).is_err());
    }

    #[test]
    fn mae_examples() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&[3.0, 4.0, 6.0], &y).unwrap(), 2.0);
        assert!(mae(&y, &y[..1]).is_err());
    }

    #[test]
    fn explained_variance_examples() {
        let y = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(explained_variance(&y, &y).unwrap(), Some(1.0));
        let mean = [3.5; 4];
        assert!(explained_variance(&mean, &y).unwrap().unwrap().abs() < 1e-15);
        let shifted: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        assert_eq!(explained_variance(&shifted, &y).unwrap(), Some(1.0));
        assert_eq!(explained_variance(&y, &[2.0; 4]).unwrap(), None);
    }

    #[test]
    fn competitive_ratio_examples() {
        assert_eq!(competitive_ratio(3.0, 3.0), 1.0);
        assert!((competitive_ratio(4.03, 3.99) - 1.010025).abs() < 1e-6);
        assert_eq!(competitive_ratio(1.0, 0.0), f64::INFINITY);
        assert_eq!(competitive_ratio(0.0, 0.0), 1.0);
    }

    #[test]
    fn ledger_prices_categories() {
        let rates = CostRates::per_mwh(50.0, 102.0, 55.0).unwrap();
        let row = LedgerRow::new("m", &Dispatch { ren_kwh: 0.0, non_kwh: 30.88, sto_kwh: 8.87 }, &rates, 0.0);
        assert!((row.non_cost - 3.14976).abs() < 1e-12);
        assert!((row.sto_cost - 0.48785).abs() < 1e-12);
        assert_eq!(row.csv_fields()[5], "0.49");
        let zero = LedgerRow::new("z", &Dispatch::default(), &rates, 1.0);
        assert_eq!((zero.total_cost, zero.non_kwh), (0.0, 0.0));
        assert_eq!(zero.pct_vs_truth, -100.0);
    }

    #[test]
    fn probe_matches_theory() {
        let mut prev = 1.0;
        for n in 1..=4 {
            let p = convergence_probe(n, 100_000, 7).unwrap();
            assert!(p.z_score().abs() < 3.0, "{p:?}");
            assert!(p.empirical < prev);
            prev = p.empirical;
        }
        assert_eq!(convergence_probe(2, 20_000, 1).unwrap(), convergence_probe(2, 20_000, 1).unwrap());
        assert_eq!(convergence_probe(1, 10, 0).unwrap().theoretical, 0.5);
    }

    proptest! {
        #[test]
        fn ledger_total_closes(non in 0.0f64..100.0, sto in 0.0f64..100.0, ren in 0.0f64..100.0) {
            let rates = CostRates::default();
            let row = LedgerRow::new("p", &Dispatch { ren_kwh: ren, non_kwh: non, sto_kwh: sto }, &rates, 1.0);
            prop_assert!(row.total_cost == row.non_cost + row.sto_cost + row.ren_cost);
        }

        #[test]
        fn accuracy_in_unit_interval(bits in proptest::collection::vec(proptest::bool::ANY, 1..50), flip in proptest::collection::vec(proptest::bool::ANY, 1..50)) {
            let n = bits.len().min(flip.len());
            let a: Vec<Action> = bits[..n].iter().map(|&b| if b { Action::Store } else { Action::NonRenewable }).collect();
            let t: Vec<Action> = flip[..n].iter().map(|&b| if b { Action::Store } else { Action::NonRenewable }).collect();
            let acc = decision_accuracy(&a, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
        }
    }
}
