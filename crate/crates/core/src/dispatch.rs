//! Two-stage renewable commitment: piecewise cost, scenario expectation,
//! the critical-ratio quantile, recourse, and the per-slot accounting used
//! by every policy.
//!
//! The first stage commits a renewable amount before demand is known; the
//! second stage buys the shortfall or stores the surplus. Because the
//! expected cost is convex and piecewise linear in the commitment, every
//! solver here is exact: the optimum sits on a demand breakpoint.

use serde::{Deserialize, Serialize};

use crate::scalar::{pos, Scalar};
use crate::{Error, Result};

/// Unit prices in $/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRates<T> {
    pub c_ren: T,
    pub c_non: T,
    pub c_sto: T,
}

impl<T: Scalar> CostRates<T> {
    pub fn new(c_ren: T, c_non: T, c_sto: T) -> Result<Self> {
        let r = CostRates { c_ren, c_non, c_sto };
        r.validate()?;
        Ok(r)
    }

    /// Builds rates from $/MWh figures.
    pub fn per_mwh(c_ren: f64, c_non: f64, c_sto: f64) -> Result<Self> {
        Self::new(T::lit(c_ren / 1000.0), T::lit(c_non / 1000.0), T::lit(c_sto / 1000.0))
    }

    /// $50/MWh renewable, $102/MWh grid, storage at 10% over renewable.
    pub fn default_rates() -> Self {
        CostRates { c_ren: T::lit(0.050), c_non: T::lit(0.102), c_sto: T::lit(0.055) }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: T| x.is_finite() && x >= T::zero();
        if !(ok(self.c_ren) && ok(self.c_non) && ok(self.c_sto)) {
            return Err(Error::domain("cost rates must be finite and non-negative"));
        }
        if self.c_non <= self.c_ren {
            return Err(Error::domain(format!("grid rate {} must exceed renewable rate {}", self.c_non, self.c_ren)));
        }
        Ok(())
    }

    /// `(c_non - c_ren) / (c_non + c_sto)`.
    pub fn critical_ratio(&self) -> T {
        (self.c_non - self.c_ren) / (self.c_non + self.c_sto)
    }
}

impl<T: Scalar> Default for CostRates<T> {
    fn default() -> Self {
        Self::default_rates()
    }
}

/// Max of the deficit and surplus branches of the generation cost.
pub fn piecewise_cost<T: Scalar>(ren: T, demand: T, rates: &CostRates<T>) -> T {
    let deficit = (rates.c_ren - rates.c_non) * ren + rates.c_non * demand;
    let surplus = (rates.c_ren + rates.c_sto) * ren - rates.c_sto * demand;
    deficit.max(surplus)
}

/// Discrete demand law with a right-continuous step CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandDistribution<T> {
    /// `(demand_kwh, probability)` sorted by demand, duplicates merged.
    scenarios: Vec<(T, T)>,
}

impl<T: Scalar> DemandDistribution<T> {
    pub fn new(mut scenarios: Vec<(T, T)>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::domain("demand distribution needs at least one scenario"));
        }
        let mut total = T::zero();
        for &(d, p) in &scenarios {
            if !(d.is_finite() && d >= T::zero()) {
                return Err(Error::domain(format!("scenario demand {d} must be finite and >= 0")));
            }
            if !(p.is_finite() && p >= T::zero()) {
                return Err(Error::domain(format!("scenario probability {p} must be in [0, 1]")));
            }
            total += p;
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(scenarios.len() as f64));
        if (total - T::one()).abs() > tol {
            return Err(Error::domain(format!("scenario probabilities sum to {total}, not 1")));
        }
        scenarios.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
        let mut merged: Vec<(T, T)> = Vec::with_capacity(scenarios.len());
        for (d, p) in scenarios {
            match merged.last_mut() {
                Some(last) if last.0 == d => last.1 += p,
                _ => merged.push((d, p)),
            }
        }
        Ok(DemandDistribution { scenarios: merged })
    }

    /// Equal weight on each observed demand.
    pub fn empirical(demands: &[T]) -> Result<Self> {
        let n = T::lit(demands.len() as f64);
        Self::new(demands.iter().map(|&d| (d, T::one() / n)).collect())
    }

    pub fn point(demand: T) -> Result<Self> {
        Self::new(vec![(demand, T::one())])
    }

    pub fn scenarios(&self) -> &[(T, T)] {
        &self.scenarios
    }

    /// `H(x) = P(D <= x)`.
    pub fn cdf(&self, x: T) -> T {
        let mut acc = T::zero();
        for &(d, p) in &self.scenarios {
            if d > x {
                break;
            }
            acc += p;
        }
        acc.min(T::one())
    }

    pub fn mean(&self) -> T {
        self.scenarios.iter().map(|&(d, p)| d * p).sum()
    }
}

/// `Σ p_i · piecewise_cost(ren, d_i)`.
pub fn expected_cost<T: Scalar>(ren: T, dist: &DemandDistribution<T>, rates: &CostRates<T>) -> T {
    dist.scenarios.iter().map(|&(d, p)| p * piecewise_cost(ren, d, rates)).sum()
}

/// Known-demand optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownDemandSolution<T> {
    pub ren_kwh: T,
    /// Epigraph value, i.e. the optimal cost.
    pub chi: T,
}

pub fn solve_known_demand<T: Scalar>(demand: T, rates: &CostRates<T>, ren_max: T) -> KnownDemandSolution<T> {
    let ren = demand.min(ren_max).max(T::zero());
    KnownDemandSolution { ren_kwh: ren, chi: piecewise_cost(ren, demand, rates) }
}

/// Smallest support point whose CDF reaches the critical ratio, clipped to
/// the capacity.
pub fn newsvendor_quantile<T: Scalar>(dist: &DemandDistribution<T>, rates: &CostRates<T>, ren_max: T) -> T {
    let ratio = rates.critical_ratio();
    let slack = T::lit(1e-12);
    let mut acc = T::zero();
    let mut pick = dist.scenarios.last().expect("non-empty").0;
    for &(d, p) in &dist.scenarios {
        acc += p;
        if acc + slack >= ratio {
            pick = d;
            break;
        }
    }
    pick.min(ren_max).max(T::zero())
}

/// Recourse outcome of one commitment against one realized demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recourse<T> {
    pub non_kwh: T,
    pub sto_kwh: T,
    /// `c_non·non − c_sto·sto`, the sign convention of the recourse program.
    pub objective: T,
    /// `c_non·non + c_sto·sto`, the additive accounting convention.
    pub additive_cost: T,
}

pub fn second_stage_recourse<T: Scalar>(ren: T, demand: T, rates: &CostRates<T>) -> Recourse<T> {
    let non = pos(demand - ren).min(demand);
    let sto = pos(ren - demand);
    Recourse {
        non_kwh: non,
        sto_kwh: sto,
        objective: rates.c_non * non - rates.c_sto * sto,
        additive_cost: rates.c_non * non + rates.c_sto * sto,
    }
}

/// Per-scenario part of a two-stage solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioRecourse<T> {
    pub demand_kwh: T,
    pub probability: T,
    pub non_kwh: T,
    pub sto_kwh: T,
    /// Epigraph variable, equal to the piecewise cost at this scenario.
    pub chi: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageSolution<T> {
    pub ren_kwh: T,
    pub scenarios: Vec<ScenarioRecourse<T>>,
    pub expected_cost: T,
}

impl<T: Scalar> TwoStageSolution<T> {
    pub fn at(ren: T, dist: &DemandDistribution<T>, rates: &CostRates<T>) -> Self {
        let scenarios: Vec<_> = dist
            .scenarios
            .iter()
            .map(|&(d, p)| {
                let r = second_stage_recourse(ren, d, rates);
                ScenarioRecourse {
                    demand_kwh: d,
                    probability: p,
                    non_kwh: r.non_kwh,
                    sto_kwh: r.sto_kwh,
                    chi: piecewise_cost(ren, d, rates),
                }
            })
            .collect();
        let expected_cost = scenarios.iter().map(|s| s.probability * s.chi).sum();
        TwoStageSolution { ren_kwh: ren, scenarios, expected_cost }
    }
}

/// Solutions for every (bs, slot) plus the summed objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPlan<T> {
    /// Indexed `[bs][slot]`.
    pub solutions: Vec<Vec<TwoStageSolution<T>>>,
    pub objective: T,
}

/// Deterministic-equivalent program over all base stations and slots.
///
/// `dists[bs][slot]` holds the demand law; `ren_max[bs]` the capacity. The
/// program separates per (bs, slot), so each block is solved by its quantile.
pub fn solve_scenario_lp<T: Scalar>(dists: &[Vec<DemandDistribution<T>>], rates: &CostRates<T>, ren_max: &[T]) -> Result<ScenarioPlan<T>> {
    if ren_max.len() != dists.len() {
        return Err(Error::Dimension { what: "capacity per base station", expected: dists.len(), got: ren_max.len() });
    }
    if let Some(bad) = ren_max.iter().find(|c| !(c.is_finite() && **c >= T::zero())) {
        return Err(Error::domain(format!("infeasible renewable capacity {bad}")));
    }
    let mut objective = T::zero();
    let mut solutions = Vec::with_capacity(dists.len());
    for (per_slot, &cap) in dists.iter().zip(ren_max) {
        let mut row = Vec::with_capacity(per_slot.len());
        for dist in per_slot {
            let ren = newsvendor_quantile(dist, rates, cap);
            let sol = TwoStageSolution::at(ren, dist, rates);
            objective += sol.expected_cost;
            row.push(sol);
        }
        solutions.push(row);
    }
    Ok(ScenarioPlan { solutions, objective })
}

/// Binary dispatch decision taken before a slot's energy is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// Bank the surplus; the slot is expected to over-produce.
    Store,
    /// Buy the shortfall from the grid.
    NonRenewable,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Store, Action::NonRenewable];

    /// Index into a two-way policy vector.
    pub fn index(self) -> usize {
        match self {
            Action::Store => 0,
            Action::NonRenewable => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Store
        } else {
            Action::NonRenewable
        }
    }

    /// The label the supply-demand rule assigns: store iff generation > demand.
    pub fn ground_truth<T: Scalar>(generation: T, demand: T) -> Self {
        if generation > demand {
            Action::Store
        } else {
            Action::NonRenewable
        }
    }

    /// `+1` for store, `-1` for grid.
    pub fn signed(self) -> f64 {
        match self {
            Action::Store => 1.0,
            Action::NonRenewable => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Store => "store",
            Action::NonRenewable => "nonrenewable",
        }
    }
}

/// Energy books of one base station in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Dispatch {
    /// Renewable energy committed (served to load or banked).
    pub ren_kwh: f64,
    pub non_kwh: f64,
    pub sto_kwh: f64,
}

impl Dispatch {
    pub fn cost(&self, rates: &CostRates<f64>) -> f64 {
        rates.c_ren * self.ren_kwh + rates.c_non * self.non_kwh + rates.c_sto * self.sto_kwh
    }

    /// Energy delivered to load.
    pub fn served_kwh(&self) -> f64 {
        self.ren_kwh - self.sto_kwh + self.non_kwh
    }

    /// Commit the whole generation, then settle by recourse.
    pub fn committed(generation: f64, demand: f64) -> Self {
        let r = second_stage_recourse(generation, demand, &CostRates::<f64>::default());
        Dispatch { ren_kwh: generation, non_kwh: r.non_kwh, sto_kwh: r.sto_kwh }
    }

    /// Outcome of a binary decision made before the slot realizes.
    ///
    /// A decision consistent with the realized balance (store needs
    /// generation ≥ demand, grid needs generation ≤ demand) settles by plain
    /// recourse on the committed generation. An inconsistent one falls back:
    /// the committed generation is banked whole and the full demand is bought
    /// from the grid, so the misrouted `min(generation, demand)` is paid at
    /// both the grid and the storage rate.
    pub fn for_action(action: Action, generation: f64, demand: f64) -> Self {
        let feasible = match action {
            Action::Store => generation >= demand,
            Action::NonRenewable => generation <= demand,
        };
        if feasible {
            Self::committed(generation, demand)
        } else {
            Dispatch { ren_kwh: generation, non_kwh: demand, sto_kwh: generation }
        }
    }

    /// Known-demand optimum: commit exactly what the load can absorb.
    pub fn hindsight(generation: f64, demand: f64) -> Self {
        let ren = demand.min(generation).max(0.0);
        Dispatch { ren_kwh: ren, non_kwh: pos(demand - ren), sto_kwh: 0.0 }
    }

    /// Commit the whole generation but serve only `packed_kwh` of the load
    /// from it; the rest of the generation is banked.
    pub fn packed(packed_kwh: f64, generation: f64, demand: f64) -> Self {
        let u = packed_kwh.min(generation).min(demand).max(0.0);
        Dispatch { ren_kwh: generation, non_kwh: demand - u, sto_kwh: generation - u }
    }

    pub fn grid_only(demand: f64) -> Self {
        Dispatch { ren_kwh: 0.0, non_kwh: demand, sto_kwh: 0.0 }
    }

    pub fn add(&mut self, other: &Dispatch) {
        self.ren_kwh += other.ren_kwh;
        self.non_kwh += other.non_kwh;
        self.sto_kwh += other.sto_kwh;
    }
}
