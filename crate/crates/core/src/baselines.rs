//! Comparison policies sharing the environment and recourse accounting of
//! the learned agents: UCB1 bandits, bin-packing heuristics, a centralized
//! A2C, a multi-agent A3C with a centralized critic, and grid-only supply.
//!
//! Bin packing has no canonical mapping onto dispatch, so we use our own:
//! items are the slot's per-task energies (the slot demand split in
//! proportion to task sizes) and the bins are `n` equal partitions of the
//! slot's generation, `n` being the item count. Packed energy is served
//! from renewables; the unpacked residual is bought from the grid and
//! unused generation is banked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dispatch::{Action, Dispatch};
use crate::mamrl::{act, action_reward, advantage, joint_advantage, surrogate_logit_grad, AgentReport};
use crate::nn::{clip_global_norm, softmax, ActorCritic, ActorCriticStep, AdamState, LstmState, Parameters};
use crate::trace::{SlotRecord, StateTable, TaskEvent};
use crate::{Error, Result};

/// Fields per station fed to the baseline networks.
pub const STATE_FIELDS: usize = 4;

/// Decisions and energy books of one method over a table, both indexed
/// `bs * slots + slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub method: String,
    pub slots: usize,
    pub actions: Option<Vec<Action>>,
    pub dispatch: Vec<Dispatch>,
}

impl PolicyRun {
    fn from_actions(method: &str, table: &StateTable, actions: Vec<Action>) -> Self {
        let dispatch = table.records().iter().zip(&actions).map(|(r, &a)| Dispatch::for_action(a, r.renewable_kwh, r.demand_kwh)).collect();
        PolicyRun { method: method.to_string(), slots: table.shape.slots, actions: Some(actions), dispatch }
    }

    pub fn total(&self) -> Dispatch {
        let mut t = Dispatch::default();
        for d in &self.dispatch {
            t.add(d);
        }
        t
    }

    pub fn cost(&self, rates: &crate::dispatch::CostRates<f64>) -> f64 {
        self.dispatch.iter().map(|d| d.cost(rates)).sum()
    }
}

/// Known-demand optimum for every slot.
pub fn hindsight(table: &StateTable) -> PolicyRun {
    let dispatch = table.records().iter().map(|r| Dispatch::hindsight(r.renewable_kwh, r.demand_kwh)).collect();
    PolicyRun { method: "hindsight".into(), slots: table.shape.slots, actions: None, dispatch }
}

/// The supply-demand labels executed as decisions.
pub fn oracle_labels(table: &StateTable) -> PolicyRun {
    let actions = table.records().iter().map(|r| Action::ground_truth(r.renewable_kwh, r.demand_kwh)).collect();
    PolicyRun::from_actions("oracle_labels", table, actions)
}

/// All demand bought from the grid.
pub fn no_renewable(table: &StateTable) -> PolicyRun {
    let dispatch = table.records().iter().map(|r| Dispatch::grid_only(r.demand_kwh)).collect();
    PolicyRun { method: "no_renewable".into(), slots: table.shape.slots, actions: None, dispatch }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    pub counts: [u64; 2],
    pub means: [f64; 2],
    pub total: u64,
    pub c: f64,
}

impl Default for BanditState {
    fn default() -> Self {
        BanditState::new(std::f64::consts::SQRT_2)
    }
}

impl BanditState {
    pub fn new(c: f64) -> Self {
        BanditState { counts: [0; 2], means: [0.0; 2], total: 0, c }
    }

    pub fn ucb(&self, arm: usize) -> f64 {
        if self.counts[arm] == 0 {
            return f64::INFINITY;
        }
        self.means[arm] + self.c * ((self.total as f64).ln() / self.counts[arm] as f64).sqrt()
    }

    /// Untried arms first, in index order; otherwise the larger bound, with
    /// ties going to the grid.
    pub fn select(&self) -> Action {
        if let Some(arm) = (0..2).find(|&a| self.counts[a] == 0) {
            return Action::from_index(arm);
        }
        if self.ucb(0) > self.ucb(1) {
            Action::Store
        } else {
            Action::NonRenewable
        }
    }

    pub fn update(&mut self, action: Action, reward: f64) {
        let a = action.index();
        self.counts[a] += 1;
        self.total += 1;
        self.means[a] += (reward - self.means[a]) / self.counts[a] as f64;
    }
}

/// One UCB1 bandit per station, run online through the slots.
pub fn ucb_greedy(table: &StateTable, c: f64) -> PolicyRun {
    let slots = table.shape.slots;
    let mut actions = Vec::with_capacity(table.records().len());
    for bs in 0..table.shape.n_bs {
        let mut bandit = BanditState::new(c);
        for t in 0..slots {
            let rec = table.get(bs, t);
            let a = bandit.select();
            bandit.update(a, action_reward(a, rec));
            actions.push(a);
        }
    }
    PolicyRun::from_actions("ucb_greedy", table, actions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub capacity_kwh: f64,
    pub fill_kwh: f64,
}

impl Bin {
    pub fn new(capacity_kwh: f64) -> Self {
        Bin { capacity_kwh, fill_kwh: 0.0 }
    }

    pub fn fits(&self, item: f64) -> bool {
        self.fill_kwh + item <= self.capacity_kwh
    }

    fn put(&mut self, item: f64) {
        self.fill_kwh += item;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Packing {
    NextFit,
    FirstFit,
    FirstFitDecreasing,
}

impl Packing {
    pub const ALL: [Packing; 3] = [Packing::NextFit, Packing::FirstFit, Packing::FirstFitDecreasing];

    pub fn name(self) -> &'static str {
        match self {
            Packing::NextFit => "next_fit",
            Packing::FirstFit => "first_fit",
            Packing::FirstFitDecreasing => "first_fit_decreasing",
        }
    }
}

/// Packs `items` into `bins`, returning the packed energy.
pub fn pack_into(items: &[f64], bins: &mut [Bin], heuristic: Packing) -> f64 {
    let mut packed = 0.0;
    match heuristic {
        Packing::NextFit => {
            let mut open = 0;
            for &item in items {
                if bins.iter().all(|b| item > b.capacity_kwh) {
                    continue;
                }
                while open < bins.len() && !bins[open].fits(item) {
                    open += 1;
                }
                if open == bins.len() {
                    break;
                }
                bins[open].put(item);
                packed += item;
            }
        }
        Packing::FirstFit | Packing::FirstFitDecreasing => {
            let mut order = items.to_vec();
            if heuristic == Packing::FirstFitDecreasing {
                order.sort_by(|a, b| b.total_cmp(a));
            }
            for item in order {
                if let Some(bin) = bins.iter_mut().find(|b| b.fits(item)) {
                    bin.put(item);
                    packed += item;
                }
            }
        }
    }
    packed
}

/// Dispatch of one slot under a packing heuristic. `items` split the slot's
/// `demand`; the books settle against `demand` itself.
pub fn pack_slot(items: &[f64], generation: f64, demand: f64, heuristic: Packing) -> Dispatch {
    if items.is_empty() {
        return Dispatch::packed(0.0, generation, demand);
    }
    let mut bins = vec![Bin::new(generation / items.len() as f64); items.len()];
    let packed = pack_into(items, &mut bins, heuristic);
    Dispatch::packed(packed, generation, demand)
}

pub fn next_fit(items: &[f64], generation: f64, demand: f64) -> Dispatch {
    pack_slot(items, generation, demand, Packing::NextFit)
}

pub fn first_fit(items: &[f64], generation: f64, demand: f64) -> Dispatch {
    pack_slot(items, generation, demand, Packing::FirstFit)
}

pub fn first_fit_decreasing(items: &[f64], generation: f64, demand: f64) -> Dispatch {
    pack_slot(items, generation, demand, Packing::FirstFitDecreasing)
}

/// Per-cell task energies: each slot's demand split in proportion to its
/// task sizes. A cell with demand but no tasks becomes one item.
pub fn slot_items(table: &StateTable, tasks: &[TaskEvent]) -> Vec<Vec<f64>> {
    let slots = table.shape.slots;
    let mut sizes: Vec<Vec<f64>> = vec![Vec::new(); table.records().len()];
    for t in tasks {
        if t.bs_id < table.shape.n_bs && t.slot < slots {
            sizes[t.bs_id * slots + t.slot].push(t.size_bytes as f64);
        }
    }
    table
        .records()
        .iter()
        .zip(sizes)
        .map(|(r, s)| {
            let total: f64 = s.iter().sum();
            if total > 0.0 {
                s.iter().map(|x| r.demand_kwh * x / total).collect()
            } else if r.demand_kwh > 0.0 {
                vec![r.demand_kwh]
            } else {
                Vec::new()
            }
        })
        .collect()
}

pub fn packing_run(table: &StateTable, items: &[Vec<f64>], heuristic: Packing) -> PolicyRun {
    let dispatch = table.records().iter().zip(items).map(|(r, it)| pack_slot(it, r.renewable_kwh, r.demand_kwh, heuristic)).collect();
    PolicyRun { method: heuristic.name().into(), slots: table.shape.slots, actions: None, dispatch }
}

/// Per-actor rollout: store probabilities, sampled actions and rewards.
type ActorRollout = (Vec<f64>, Vec<Action>, Vec<f64>);

/// Previous-slot fields of one station: kWh as is, costs in cents.
fn station_fields(rec: Option<&SlotRecord>) -> [f64; STATE_FIELDS] {
    match rec {
        Some(r) => [r.demand_kwh, r.renewable_kwh, 100.0 * r.storage_cost_usd, 100.0 * r.nonrenewable_cost_usd],
        None => [0.0; STATE_FIELDS],
    }
}

fn prev_record(table: &StateTable, bs: usize, t: usize) -> Option<&SlotRecord> {
    (t > 0).then(|| table.get(bs, t - 1))
}

fn unroll(net: &ActorCritic<f64>, inputs: &[Vec<f64>]) -> Result<Vec<ActorCriticStep<f64>>> {
    let mut state = LstmState::zeros(net.units());
    inputs
        .iter()
        .map(|x| {
            let s = net.forward(x, &state)?;
            state = s.state.clone();
            Ok(s)
        })
        .collect()
}

/// Full BPTT through a single chain given per-step head gradients.
fn backprop(net: &ActorCritic<f64>, steps: &[ActorCriticStep<f64>], heads: &[(Vec<f64>, f64)]) -> ActorCritic<f64> {
    let mut grads = net.zeros_like();
    let mut d_next = LstmState::zeros(net.units());
    for (s, (dl, dv)) in steps.iter().zip(heads).rev() {
        let (_, d_prev) = net.backward(s, dl, *dv, Some(&d_next), &mut grads);
        d_next = d_prev;
    }
    grads
}

fn sample(p_store: f64, rng: &mut ChaCha8Rng) -> Action {
    if rng.gen::<f64>() < p_store {
        Action::Store
    } else {
        Action::NonRenewable
    }
}

fn check_stations(table: &StateTable, n: usize) -> Result<()> {
    if table.shape.n_bs != n {
        return Err(Error::Dimension { what: "state table stations", expected: n, got: table.shape.n_bs });
    }
    Ok(())
}

fn adam_update(net: &mut ActorCritic<f64>, adam: &mut AdamState<f64>, grads: &mut ActorCritic<f64>, clip: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("baseline gradient".into()));
    }
    clip_global_norm(grads, clip);
    *net = adam.step(net, grads);
    Ok(())
}

/// One LSTM actor-critic over the concatenated previous-slot state of every
/// station, with a two-way softmax per station and one shared value.
#[derive(Debug, Clone)]
pub struct A2c {
    pub net: ActorCritic<f64>,
    pub adam: AdamState<f64>,
    pub n_bs: usize,
    pub gamma: f64,
    pub beta: f64,
    pub update_epochs: usize,
    pub grad_clip: f64,
    rng: ChaCha8Rng,
}

fn pair_probs(logits: &[f64], bs: usize) -> Vec<f64> {
    softmax(&logits[2 * bs..2 * bs + 2])
}

impl A2c {
    pub fn new(n_bs: usize, cfg: &RunConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1001);
        let net = ActorCritic::new(n_bs * STATE_FIELDS, cfg.lstm_units, 2 * n_bs, &mut rng);
        let adam = AdamState::new(&net, cfg.lr);
        A2c { net, adam, n_bs, gamma: cfg.gamma, beta: cfg.beta, update_epochs: cfg.update_epochs.max(1), grad_clip: cfg.grad_clip, rng }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn inputs(&self, table: &StateTable) -> Vec<Vec<f64>> {
        (0..table.shape.slots).map(|t| (0..self.n_bs).flat_map(|i| station_fields(prev_record(table, i, t))).collect()).collect()
    }

    /// Trains on `table`; returns the mean per-station episode reward of
    /// every episode.
    pub fn train(&mut self, table: &StateTable, episodes: usize) -> Result<Vec<f64>> {
        check_stations(table, self.n_bs)?;
        let inputs = self.inputs(table);
        let (n, slots) = (self.n_bs, table.shape.slots);
        let mut history = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let steps = unroll(&self.net, &inputs)?;
            let mut actions = Vec::with_capacity(slots);
            let mut rewards = Vec::with_capacity(slots);
            for (t, s) in steps.iter().enumerate() {
                let acts: Vec<Action> = (0..n).map(|i| sample(pair_probs(&s.logits, i)[0], &mut self.rng)).collect();
                rewards.push(acts.iter().enumerate().map(|(i, &a)| action_reward(a, table.get(i, t))).sum::<f64>() / n as f64);
                actions.push(acts);
            }
            history.push(rewards.iter().sum::<f64>());
            for _ in 0..self.update_epochs {
                let steps = unroll(&self.net, &inputs)?;
                let heads: Vec<(Vec<f64>, f64)> = (0..slots)
                    .map(|t| {
                        let v_next = if t + 1 < slots { steps[t + 1].value } else { 0.0 };
                        let adv = advantage(rewards[t], v_next, steps[t].value, self.gamma);
                        let scale = 1.0 / (slots * n) as f64;
                        let mut dl = Vec::with_capacity(2 * n);
                        for (i, &a) in actions[t].iter().enumerate() {
                            let p = pair_probs(&steps[t].logits, i);
                            dl.extend(surrogate_logit_grad(&p, a, adv, self.beta).into_iter().map(|g| g * scale));
                        }
                        (dl, -adv / slots as f64)
                    })
                    .collect();
                let mut grads = backprop(&self.net, &steps, &heads);
                adam_update(&mut self.net, &mut self.adam, &mut grads, self.grad_clip)?;
            }
        }
        Ok(history)
    }

    pub fn evaluate(&self, table: &StateTable) -> Result<PolicyRun> {
        check_stations(table, self.n_bs)?;
        let steps = unroll(&self.net, &self.inputs(table))?;
        let slots = table.shape.slots;
        let actions =
            (0..self.n_bs).flat_map(|i| (0..slots).map(move |t| (i, t))).map(|(i, t)| act(&pair_probs(&steps[t].logits, i))).collect();
        Ok(PolicyRun::from_actions("a2c_centralized", table, actions))
    }
}

/// Per-station LSTM actors with one centralized LSTM critic that sees every
/// station's state and current store probability and outputs one value per
/// station. The critic's output layer is the network's policy layer, read
/// as `n` linear values.
#[derive(Debug, Clone)]
pub struct A3c {
    pub actors: Vec<ActorCritic<f64>>,
    pub actor_adam: Vec<AdamState<f64>>,
    pub critic: ActorCritic<f64>,
    pub critic_adam: AdamState<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub update_epochs: usize,
    pub grad_clip: f64,
    pub workers: usize,
    rngs: Vec<ChaCha8Rng>,
}

impl A3c {
    pub fn new(n_bs: usize, cfg: &RunConfig) -> Self {
        let mut rngs: Vec<ChaCha8Rng> = (0..n_bs)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(2001 + i as u64);
                r
            })
            .collect();
        let actors: Vec<ActorCritic<f64>> = rngs.iter_mut().map(|r| ActorCritic::new(STATE_FIELDS, cfg.lstm_units, 2, r)).collect();
        let mut crng = ChaCha8Rng::seed_from_u64(cfg.seed);
        crng.set_stream(3001);
        let mut critic = ActorCritic::new(n_bs * (STATE_FIELDS + 1), cfg.lstm_units, n_bs, &mut crng);
        critic.policy = crate::nn::DenseParams::zeros(cfg.lstm_units, n_bs);
        A3c {
            actor_adam: actors.iter().map(|a| AdamState::new(a, cfg.lr)).collect(),
            critic_adam: AdamState::new(&critic, cfg.lr),
            actors,
            critic,
            gamma: cfg.gamma,
            beta: cfg.beta,
            update_epochs: cfg.update_epochs.max(1),
            grad_clip: cfg.grad_clip,
            workers: cfg.workers.max(1),
            rngs,
        }
    }

    pub fn n_bs(&self) -> usize {
        self.actors.len()
    }

    fn actor_inputs(table: &StateTable, bs: usize) -> Vec<Vec<f64>> {
        (0..table.shape.slots).map(|t| station_fields(prev_record(table, bs, t)).to_vec()).collect()
    }

    fn critic_inputs(table: &StateTable, p_store: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..table.shape.slots)
            .map(|t| {
                (0..p_store.len())
                    .flat_map(|i| {
                        let mut f = station_fields(prev_record(table, i, t)).to_vec();
                        f.push(p_store[i][t]);
                        f
                    })
                    .collect()
            })
            .collect()
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new().num_threads(self.workers).build().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train(&mut self, table: &StateTable, episodes: usize) -> Result<Vec<f64>> {
        let n = self.n_bs();
        check_stations(table, n)?;
        let slots = table.shape.slots;
        let pool = self.pool()?;
        let actor_inputs: Vec<Vec<Vec<f64>>> = (0..n).map(|i| Self::actor_inputs(table, i)).collect();
        let mut history = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            // Decentralized rollouts, one independent stream per actor.
            let rolled: Vec<Result<ActorRollout>> = pool.install(|| {
                self.actors
                    .par_iter()
                    .zip(self.rngs.par_iter_mut())
                    .enumerate()
                    .map(|(i, (actor, rng))| {
                        let steps = unroll(actor, &actor_inputs[i])?;
                        let p: Vec<f64> = steps.iter().map(|s| s.probs[0]).collect();
                        let acts: Vec<Action> = p.iter().map(|&q| sample(q, rng)).collect();
                        let rews = acts.iter().enumerate().map(|(t, &a)| action_reward(a, table.get(i, t))).collect();
                        Ok((p, acts, rews))
                    })
                    .collect()
            });
            let rolled = rolled.into_iter().collect::<Result<Vec<_>>>()?;
            let p_store: Vec<Vec<f64>> = rolled.iter().map(|r| r.0.clone()).collect();
            let critic_inputs = Self::critic_inputs(table, &p_store);
            history.push(rolled.iter().map(|r| r.2.iter().sum::<f64>()).sum::<f64>() / n as f64);
            for _ in 0..self.update_epochs {
                let csteps = unroll(&self.critic, &critic_inputs)?;
                let mut adv = vec![vec![0.0; slots]; n];
                let mut critic_heads = Vec::with_capacity(slots);
                for t in 0..slots {
                    let reports: Vec<Option<AgentReport>> = (0..n)
                        .map(|i| {
                            Some(AgentReport {
                                reward: rolled[i].2[t],
                                v_cur: csteps[t].logits[i],
                                v_next: if t + 1 < slots { csteps[t + 1].logits[i] } else { 0.0 },
                            })
                        })
                        .collect();
                    let l = joint_advantage(&reports, self.gamma)?;
                    critic_heads.push((l.iter().map(|a| -a / (slots * n) as f64).collect::<Vec<_>>(), 0.0));
                    for i in 0..n {
                        adv[i][t] = l[i];
                    }
                }
                let mut cg = backprop(&self.critic, &csteps, &critic_heads);
                adam_update(&mut self.critic, &mut self.critic_adam, &mut cg, self.grad_clip)?;
                let (beta, clip) = (self.beta, self.grad_clip);
                let updates: Vec<Result<()>> = pool.install(|| {
                    self.actors
                        .par_iter_mut()
                        .zip(self.actor_adam.par_iter_mut())
                        .enumerate()
                        .map(|(i, (actor, adam))| {
                            let steps = unroll(actor, &actor_inputs[i])?;
                            let heads: Vec<(Vec<f64>, f64)> = (0..slots)
                                .map(|t| {
                                    let g = surrogate_logit_grad(&steps[t].probs, rolled[i].1[t], adv[i][t], beta);
                                    (g.into_iter().map(|x| x / slots as f64).collect(), 0.0)
                                })
                                .collect();
                            let mut grads = backprop(actor, &steps, &heads);
                            adam_update(actor, adam, &mut grads, clip)
                        })
                        .collect()
                });
                updates.into_iter().collect::<Result<Vec<_>>>()?;
            }
        }
        Ok(history)
    }

    pub fn evaluate(&self, table: &StateTable) -> Result<PolicyRun> {
        check_stations(table, self.n_bs())?;
        let mut actions = Vec::with_capacity(table.records().len());
        for (i, actor) in self.actors.iter().enumerate() {
            let steps = unroll(actor, &Self::actor_inputs(table, i))?;
            actions.extend(steps.iter().map(|s| act(&s.probs)));
        }
        Ok(PolicyRun::from_actions("a3c_multiagent", table, actions))
    }
}

/// Trains and evaluates the centralized A2C.
pub fn a2c_centralized(train: &StateTable, test: &StateTable, cfg: &RunConfig) -> Result<(A2c, PolicyRun)> {
    let mut m = A2c::new(train.shape.n_bs, cfg);
    m.train(train, cfg.episodes)?;
    let run = m.evaluate(test)?;
    Ok((m, run))
}

pub fn a3c_multiagent(train: &StateTable, test: &StateTable, cfg: &RunConfig) -> Result<(A3c, PolicyRun)> {
    let mut m = A3c::new(train.shape.n_bs, cfg);
    m.train(train, cfg.episodes)?;
    let run = m.evaluate(test)?;
    Ok((m, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::CostRates;
    use crate::trace::TraceShape;
    use proptest::{prop_assert, proptest};

    fn table(n: usize, slots: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> StateTable {
        let rates = CostRates::default();
        let recs = (0..n)
            .flat_map(|i| (0..slots).map(move |t| (i, t)))
            .map(|(i, t)| {
                let (d, g) = f(i, t);
                SlotRecord::new(i, t, d, g, &rates)
            })
            .collect();
        StateTable::from_records(TraceShape { n_bs: n, slots }, recs).unwrap()
    }

    #[test]
    fn ucb_explores_both_arms_first() {
        let tab = table(1, 10, |_, _| (1.0, 0.5));
        let run = ucb_greedy(&tab, std::f64::consts::SQRT_2);
        let a = run.actions.unwrap();
        assert_eq!(&a[..2], &[Action::Store, Action::NonRenewable]);
    }

    #[test]
    fn ucb_converges_to_dominant_arm() {
        let tab = table(1, 500, |_, _| (1.0, 2.0));
        let a = ucb_greedy(&tab, std::f64::consts::SQRT_2).actions.unwrap();
        let late = a[400..].iter().filter(|&&x| x == Action::Store).count();
        assert!(late >= 95, "{late}");
    }

    #[test]
    fn ucb_regret_per_step_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let means = [0.7, 0.4];
        let mut prev = f64::INFINITY;
        for horizon in [100usize, 1000, 10000] {
            let mut b = BanditState::default();
            let mut regret = 0.0;
            for _ in 0..horizon {
                let a = b.select();
                let r = if rng.gen::<f64>() < means[a.index()] { 1.0 } else { 0.0 };
                b.update(a, r);
                regret += means[0] - means[a.index()];
            }
            let per = regret / horizon as f64;
            assert!(per < prev, "{horizon}: {per} vs {prev}");
            prev = per;
            assert_eq!(b.total, b.counts.iter().sum::<u64>());
        }
    }

    #[test]
    fn packing_examples() {
        let items = [6.0, 5.0, 4.0];
        let mut nf = [Bin::new(10.0), Bin::new(10.0)];
        assert_eq!(pack_into(&items, &mut nf, Packing::NextFit), 15.0);
        assert_eq!((nf[0].fill_kwh, nf[1].fill_kwh), (6.0, 9.0));
        let mut ffd = [Bin::new(10.0), Bin::new(10.0)];
        pack_into(&items, &mut ffd, Packing::FirstFitDecreasing);
        assert_eq!((ffd[0].fill_kwh, ffd[1].fill_kwh), (10.0, 5.0));
        let d = first_fit(&[0.1, 0.2], 10.0, 0.3);
        assert_eq!(d.non_kwh, 0.0);
        assert_eq!(next_fit(&[], 0.0, 0.0), Dispatch::default());
    }

    #[test]
    fn grid_only_prices_demand() {
        let tab = table(1, 2, |_, t| if t == 0 { (47.69, 0.0) } else { (0.0, 3.0) });
        let run = no_renewable(&tab);
        let rates = CostRates::per_mwh(50.0, 102.0, 55.0).unwrap();
        assert!((run.cost(&rates) - 4.86438).abs() < 1e-9);
        assert_eq!(run.dispatch[1].cost(&rates), 0.0);
    }

    proptest! {
        #[test]
        fn packing_accounting_and_dominance(items in proptest::collection::vec(0.0f64..2.0, 0..20), gen in 0.0f64..20.0) {
            let demand: f64 = items.iter().sum();
            let rates = CostRates::default();
            let nf = next_fit(&items, gen, demand);
            let ffd = first_fit_decreasing(&items, gen, demand);
            for d in [nf, first_fit(&items, gen, demand), ffd] {
                prop_assert!((d.served_kwh() - demand).abs() < 1e-9);
                prop_assert!(d.non_kwh >= -1e-12 && d.sto_kwh >= -1e-12);
                prop_assert!(Dispatch::hindsight(gen, demand).cost(&rates) <= d.cost(&rates));
            }
            prop_assert!(ffd.non_kwh <= nf.non_kwh + 1e-9);
        }
    }

    #[test]
    fn slot_items_split_demand() {
        let tab = table(1, 2, |_, t| (if t == 0 { 3.0 } else { 1.0 }, 0.0));
        let tasks = [TaskEvent { bs_id: 0, slot: 0, size_bytes: 1 }, TaskEvent { bs_id: 0, slot: 0, size_bytes: 2 }];
        let items = slot_items(&tab, &tasks);
        assert_eq!(items[0], vec![1.0, 2.0]);
        assert_eq!(items[1], vec![1.0]);
    }

    #[test]
    fn a2c_input_is_concatenated_state() {
        let cfg = RunConfig { lstm_units: 8, ..RunConfig::default() };
        assert_eq!(A2c::new(3, &cfg).input_dim(), 12);
        let m = A3c::new(3, &cfg);
        assert_eq!(m.critic.input_dim(), 15);
        assert_eq!(m.critic.policy.output_dim(), 3);
    }

    #[test]
    fn learned_baselines_run_and_account() {
        let tab = table(2, 24, |i, t| (1.0, if (8 + i..16).contains(&t) { 1.5 } else { 0.2 }));
        let cfg = RunConfig { lstm_units: 8, episodes: 5, slots_per_day: 24, ..RunConfig::default() };
        let (_, r2) = a2c_centralized(&tab, &tab, &cfg).unwrap();
        let (_, r3) = a3c_multiagent(&tab, &tab, &cfg).unwrap();
        for run in [r2, r3] {
            assert_eq!(run.dispatch.len(), 48);
            for (d, rec) in run.dispatch.iter().zip(tab.records()) {
                assert!((d.served_kwh() - rec.demand_kwh).abs() < 1e-12);
            }
        }
        let w1 = A3c::new(2, &RunConfig { workers: 1, ..cfg.clone() });
        let w3 = A3c::new(2, &RunConfig { workers: 3, ..cfg.clone() });
        let (mut a, mut b) = (w1, w3);
        assert_eq!(a.train(&tab, 3).unwrap(), b.train(&tab, 3).unwrap());
    }
}
