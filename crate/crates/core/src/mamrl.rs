//! Local base-station agents, the LSTM meta-agent that feeds them recurrent
//! state, and the training and evaluation loops.
//!
//! Per slot every local agent runs one LSTM step from the state last sent by
//! the meta-agent, samples actions from its softmax head, and at the end of
//! the slot reports a six-field [`Observation`]. The meta-agent consumes the
//! observations in arrival order and answers each with a [`ParamPacket`]
//! (its cell and hidden state) that replaces the agent's recurrent state.
//! Local losses therefore backpropagate through the packets into the
//! meta-agent's weights.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dispatch::{Action, CostRates, Dispatch};
use crate::nn::{
    clip_global_norm, entropy, read_checkpoint, write_checkpoint, ActorCritic, ActorCriticStep, AdamState, CheckpointHeader, LstmState,
    Parameters,
};
use crate::trace::{SlotRecord, StateTable};
use crate::{Error, Result};

/// Local input: previous reward, previous action, slot phase.
pub const LOCAL_INPUT_DIM: usize = 3;
pub const OBSERVATION_FIELDS: usize = 6;
pub const ACTIONS: usize = 2;

/// Supply-demand reward: 1 iff generation strictly exceeds demand. With no
/// demand any positive generation counts as surplus.
pub fn reward(ren_kwh: f64, demand_kwh: f64) -> f64 {
    if demand_kwh > 0.0 {
        if ren_kwh / demand_kwh > 1.0 {
            1.0
        } else {
            0.0
        }
    } else if ren_kwh > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Reward an agent earns for `action`: 1 iff the action matches the
/// supply-demand branch of the slot.
pub fn action_reward(action: Action, record: &SlotRecord) -> f64 {
    let surplus = reward(record.renewable_kwh, record.demand_kwh) == 1.0;
    if (action == Action::Store) == surplus {
        1.0
    } else {
        0.0
    }
}

pub type RewardFn = fn(Action, &SlotRecord) -> f64;

/// `Σ γ^k r_k` over the remaining rewards.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// One-step TD residual `(r + γ V_next) − V_cur`.
pub fn advantage(reward: f64, v_next: f64, v_cur: f64, gamma: f64) -> f64 {
    reward + gamma * v_next - v_cur
}

/// What one agent reports for a joint step: its reward under the joint
/// action and its values before and after, both conditioned on the joint
/// policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentReport {
    pub reward: f64,
    pub v_cur: f64,
    pub v_next: f64,
}

/// Per-agent advantage under the joint policy, using the realized successor
/// state in place of the transition expectation.
pub fn joint_advantage(reports: &[Option<AgentReport>], gamma: f64) -> Result<Vec<f64>> {
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.map(|r| advantage(r.reward, r.v_next, r.v_cur, gamma)).ok_or_else(|| Error::Missing(format!("report from agent {i}")))
        })
        .collect()
}

/// `(reward, γ·V_next, V_cur)`.
pub type TdSample = (f64, f64, f64);

/// Mean half squared TD error.
pub fn value_loss(batch: &[TdSample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|&(r, gv, v)| 0.5 * (r + gv - v).powi(2)).sum::<f64>() / batch.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub probs: Vec<f64>,
    pub action: Action,
    /// Treated as a constant.
    pub advantage: f64,
}

/// `−mean(log π(a)·Λ + β·h(π))`.
pub fn policy_entropy_loss(batch: &[PolicySample], beta: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch.iter().map(|s| s.probs[s.action.index()].ln() * s.advantage + beta * entropy(&s.probs)).sum();
    -total / batch.len() as f64
}

/// Gradient of `−(log π(a)·Λ + β·h(π))` with respect to the logits.
pub fn surrogate_logit_grad(probs: &[f64], action: Action, adv: f64, beta: f64) -> Vec<f64> {
    let h = entropy(probs);
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let score = if k == action.index() { 1.0 } else { 0.0 } - p;
            let dh = if p > 0.0 { -p * (p.ln() + h) } else { 0.0 };
            -(adv * score + beta * dh)
        })
        .collect()
}

/// Greedy choice; an exact tie goes to the grid, which never under-serves.
pub fn act(probs: &[f64]) -> Action {
    if probs[Action::Store.index()] > probs[Action::NonRenewable.index()] {
        Action::Store
    } else {
        Action::NonRenewable
    }
}

/// Greedy action and the resulting energy books for a slot.
pub fn act_dispatch(probs: &[f64], record: &SlotRecord) -> (Action, Dispatch) {
    let a = act(probs);
    (a, Dispatch::for_action(a, record.renewable_kwh, record.demand_kwh))
}

/// Six-field report from a local agent to the meta-agent, emitted at the
/// end of slot `next_slot` about the transition from the previous slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub next_reward: f64,
    pub cur_reward: f64,
    pub cur_action: Action,
    pub next_action: Action,
    pub next_slot: usize,
    pub td_error: f64,
}

impl Observation {
    /// Network encoding: rewards and actions as ±1, the slot scaled to [0, 1).
    pub fn to_vector(&self, slots: usize) -> [f64; OBSERVATION_FIELDS] {
        [
            2.0 * self.next_reward - 1.0,
            2.0 * self.cur_reward - 1.0,
            self.cur_action.signed(),
            self.next_action.signed(),
            self.next_slot as f64 / slots as f64,
            self.td_error,
        ]
    }
}

/// Recurrent state sent from the meta-agent to one local agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPacket {
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
    pub source: usize,
    pub epoch: u64,
}

impl ParamPacket {
    pub fn from_state(state: &LstmState<f64>, source: usize, epoch: u64) -> Self {
        ParamPacket { cell: state.cell.clone(), hidden: state.hidden.clone(), source, epoch }
    }

    pub fn zeros(units: usize) -> Self {
        ParamPacket { cell: vec![0.0; units], hidden: vec![0.0; units], source: 0, epoch: 0 }
    }

    /// Number of values carried.
    pub fn len(&self) -> usize {
        self.cell.len() + self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self) -> LstmState<f64> {
        LstmState { cell: self.cell.clone(), hidden: self.hidden.clone() }
    }
}

/// Slot phase fed to local agents: `−cos(2π (t + ½) / T)`, peaking mid-day.
pub fn slot_phase(slot: usize, slots: usize) -> f64 {
    -(2.0 * std::f64::consts::PI * (slot as f64 + 0.5) / slots as f64).cos()
}

fn local_input(prev: Option<(f64, Action)>, slot: usize, slots: usize) -> [f64; LOCAL_INPUT_DIM] {
    match prev {
        Some((r, a)) => [2.0 * r - 1.0, a.signed(), slot_phase(slot, slots)],
        None => [0.0, 0.0, slot_phase(slot, slots)],
    }
}

#[derive(Debug, Clone)]
pub struct LocalAgent {
    pub bs_id: usize,
    pub net: ActorCritic<f64>,
    pub state: LstmState<f64>,
    pub adam: AdamState<f64>,
    rng: ChaCha8Rng,
}

impl LocalAgent {
    pub fn new(bs_id: usize, units: usize, lr: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(bs_id as u64 + 1);
        let net = ActorCritic::new(LOCAL_INPUT_DIM, units, ACTIONS, &mut rng);
        let adam = AdamState::new(&net, lr);
        LocalAgent { bs_id, net, state: LstmState::zeros(units), adam, rng }
    }

    /// Value of the agent's current recurrent state for an encoded input.
    pub fn state_value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.net.forward(input, &self.state)?.value)
    }

    pub fn policy(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(input, &self.state)?.probs)
    }
}

/// Replaces the agent's recurrent state; the heads are not touched.
pub fn apply_param_packet(agent: &mut LocalAgent, packet: &ParamPacket) -> Result<()> {
    let units = agent.net.units();
    if packet.cell.len() != units || packet.hidden.len() != units {
        return Err(Error::Dimension { what: "parameter packet", expected: 2 * units, got: packet.len() });
    }
    agent.state = packet.state();
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MetaAgent {
    pub net: ActorCritic<f64>,
    pub state: LstmState<f64>,
    pub beta: f64,
    pub adam: AdamState<f64>,
    pub epoch: u64,
}

/// Result of the meta-agent consuming one observation.
#[derive(Debug, Clone)]
pub struct MetaOutput {
    pub agent: usize,
    pub policy: Vec<f64>,
    pub value: f64,
    pub packet: ParamPacket,
}

impl MetaAgent {
    pub fn new(units: usize, beta: f64, lr: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ActorCritic::new(OBSERVATION_FIELDS, units, ACTIONS, &mut rng);
        let adam = AdamState::new(&net, lr);
        MetaAgent { net, state: LstmState::zeros(units), beta, adam, epoch: 0 }
    }

    /// Consumes one encoded observation and returns the packet for `agent`.
    pub fn step(&mut self, agent: usize, obs: &[f64]) -> Result<MetaOutput> {
        if obs.len() != OBSERVATION_FIELDS {
            return Err(Error::Dimension { what: "observation", expected: OBSERVATION_FIELDS, got: obs.len() });
        }
        let s = self.net.forward(obs, &self.state)?;
        self.state = s.state.clone();
        Ok(MetaOutput { agent, policy: s.probs, value: s.value, packet: ParamPacket::from_state(&s.state, 0, self.epoch) })
    }
}

/// Processes a batch of `(agent, observation)` in order and returns the
/// meta policy, packet and value for each, plus the batch's meta loss
/// (entropy-regularized surrogate at zero advantage).
pub fn meta_step(meta: &mut MetaAgent, observations: &[(usize, Vec<f64>)]) -> Result<(Vec<MetaOutput>, f64)> {
    let outs = observations.iter().map(|(a, o)| meta.step(*a, o)).collect::<Result<Vec<_>>>()?;
    let batch: Vec<PolicySample> =
        outs.iter().map(|o| PolicySample { probs: o.policy.clone(), action: act(&o.policy), advantage: 0.0 }).collect();
    let loss = policy_entropy_loss(&batch, meta.beta);
    Ok((outs, loss))
}

/// Ordered, reliable in-process queue between agents and the meta-agent
/// that counts every message per slot.
#[derive(Debug, Default)]
struct MetaChannel {
    up: VecDeque<(usize, Observation)>,
    counts: Vec<MessageCount>,
}

/// Messages exchanged by one agent in one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MessageCount {
    pub observations_up: usize,
    pub observation_fields: usize,
    pub packets_down: usize,
    pub packet_values: usize,
}

/// Per-(slot, agent) message counts of the last rollout.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProtocolLog {
    pub agents: usize,
    pub slots: usize,
    pub counts: Vec<MessageCount>,
}

impl ProtocolLog {
    pub fn get(&self, slot: usize, agent: usize) -> MessageCount {
        self.counts[slot * self.agents + agent]
    }
}

/// One `(episode, bs, slot)` line of the training or evaluation log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub episode: usize,
    pub bs_id: usize,
    pub slot: usize,
    pub action: Action,
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub ren_kwh: f64,
    pub non_kwh: f64,
    pub sto_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    /// Mean over agents of the per-agent episode reward.
    pub mean_reward: f64,
    pub agent_rewards: Vec<f64>,
    pub loss: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub rows: Vec<LogRow>,
    pub summaries: Vec<EpisodeSummary>,
}

pub const LOG_HEADER: [&str; 10] = ["episode", "bs_id", "slot", "action", "reward", "value", "advantage", "ren_kwh", "non_kwh", "sto_kwh"];

impl EpisodeLog {
    pub fn mean_rewards(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.mean_reward).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::domain(e.to_string()))?;
        w.write_record(LOG_HEADER).map_err(|e| Error::domain(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.episode.to_string(),
                r.bs_id.to_string(),
                r.slot.to_string(),
                r.action.name().to_string(),
                r.reward.to_string(),
                r.value.to_string(),
                r.advantage.to_string(),
                r.ren_kwh.to_string(),
                r.non_kwh.to_string(),
                r.sto_kwh.to_string(),
            ])
            .map_err(|e| Error::domain(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::domain(e.to_string()))?;
        w.write_record(["episode", "mean_reward", "loss", "value_loss", "policy_loss"]).map_err(|e| Error::domain(e.to_string()))?;
        for s in &self.summaries {
            w.write_record([
                s.episode.to_string(),
                s.mean_reward.to_string(),
                s.loss.to_string(),
                s.value_loss.to_string(),
                s.policy_loss.to_string(),
            ])
            .map_err(|e| Error::domain(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Everything sampled in one episode that the loss graph treats as data.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub agents: usize,
    pub slots: usize,
    /// `(slot, agent)`-major local inputs.
    pub inputs: Vec<[f64; LOCAL_INPUT_DIM]>,
    /// Sampled `(action, reward)` per step; the last one is committed.
    pub steps: Vec<Vec<(Action, f64)>>,
    /// Encoded observations sent at the end of each `(slot, agent)`.
    pub observations: Vec<[f64; OBSERVATION_FIELDS]>,
}

impl Rollout {
    fn committed(&self, slot: usize, agent: usize) -> (Action, f64) {
        *self.steps[slot * self.agents + agent].last().expect("non-empty steps")
    }
}

/// Hyperparameters of the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub meta_policy: f64,
    pub meta_value: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.policy + self.value + self.meta_policy + self.meta_value
    }
}

/// Forward pass of the whole episode graph from fixed rollout data.
struct GraphForward {
    local: Vec<ActorCriticStep<f64>>,
    meta: Vec<ActorCriticStep<f64>>,
}

fn graph_forward(agents: &[ActorCritic<f64>], meta: &ActorCritic<f64>, ro: &Rollout) -> Result<GraphForward> {
    let n = ro.agents;
    let units = meta.units();
    let mut packets = vec![LstmState::zeros(units); n];
    let mut meta_state = LstmState::zeros(units);
    let mut local = Vec::with_capacity(n * ro.slots);
    let mut meta_steps = Vec::with_capacity(n * ro.slots);
    for t in 0..ro.slots {
        for (i, (agent, packet)) in agents.iter().zip(&packets).enumerate() {
            local.push(agent.forward(&ro.inputs[t * n + i], packet)?);
        }
        for (i, packet) in packets.iter_mut().enumerate() {
            let s = meta.forward(&ro.observations[t * n + i], &meta_state)?;
            meta_state = s.state.clone();
            *packet = s.state.clone();
            meta_steps.push(s);
        }
    }
    Ok(GraphForward { local, meta: meta_steps })
}

/// Head gradients `(d_logits, d_value)` and loss parts for every node.
struct HeadGrads {
    local: Vec<(Vec<f64>, f64)>,
    meta: Vec<(Vec<f64>, f64)>,
    parts: LossParts,
}

fn head_grads(fw: &GraphForward, ro: &Rollout, w: LossWeights) -> HeadGrads {
    let n = ro.agents;
    let t_max = ro.slots;
    let scale = 1.0 / (n * t_max) as f64;
    let mut parts = LossParts::default();
    let mut local = Vec::with_capacity(n * t_max);
    for t in 0..t_max {
        for i in 0..n {
            let k = t * n + i;
            let step = &fw.local[k];
            let v_next = if t + 1 < t_max { fw.local[k + n].value } else { 0.0 };
            let samples = &ro.steps[k];
            let m = samples.len() as f64;
            let mut d_logits = vec![0.0; ACTIONS];
            let mut d_value = 0.0;
            let h = entropy(&step.probs);
            for &(a, r) in samples {
                let adv = advantage(r, v_next, step.value, w.gamma);
                parts.policy -= scale * (step.probs[a.index()].ln() * adv + w.beta * h) / m;
                parts.value += scale * 0.5 * adv * adv / m;
                for (d, g) in d_logits.iter_mut().zip(surrogate_logit_grad(&step.probs, a, adv, w.beta)) {
                    *d += scale * g / m;
                }
                d_value -= scale * adv / m;
            }
            local.push((d_logits, d_value));
        }
    }
    let mut meta = Vec::with_capacity(n * t_max);
    let meta_scale = if t_max > 1 { 1.0 / (n * (t_max - 1)) as f64 } else { 0.0 };
    for t in 0..t_max {
        for i in 0..n {
            let k = t * n + i;
            if t + 1 >= t_max {
                meta.push((vec![0.0; ACTIONS], 0.0));
                continue;
            }
            let step = &fw.meta[k];
            let (a, r) = ro.committed(t + 1, i);
            let v_next = if t + 2 < t_max { fw.meta[k + n].value } else { 0.0 };
            let adv = advantage(r, v_next, step.value, w.gamma);
            parts.meta_policy -= meta_scale * (step.probs[a.index()].ln() * adv + w.beta * entropy(&step.probs));
            parts.meta_value += meta_scale * 0.5 * adv * adv;
            let d_logits = surrogate_logit_grad(&step.probs, a, adv, w.beta).into_iter().map(|g| meta_scale * g).collect();
            meta.push((d_logits, -meta_scale * adv));
        }
    }
    HeadGrads { local, meta, parts }
}

/// Loss of the episode graph; advantages and TD targets are recomputed from
/// the current values and held constant.
pub fn episode_loss(agents: &[ActorCritic<f64>], meta: &ActorCritic<f64>, ro: &Rollout, w: LossWeights) -> Result<LossParts> {
    let fw = graph_forward(agents, meta, ro)?;
    Ok(head_grads(&fw, ro, w).parts)
}

/// Loss and exact gradients of the episode graph, backpropagating the local
/// losses through the packets into the meta-agent.
pub fn episode_gradients(
    agents: &[ActorCritic<f64>],
    meta: &ActorCritic<f64>,
    ro: &Rollout,
    w: LossWeights,
) -> Result<(LossParts, Vec<ActorCritic<f64>>, ActorCritic<f64>)> {
    let n = ro.agents;
    let fw = graph_forward(agents, meta, ro)?;
    let hg = head_grads(&fw, ro, w);
    let mut agent_grads: Vec<ActorCritic<f64>> = agents.iter().map(|a| a.zeros_like()).collect();
    let mut d_packets: Vec<Option<LstmState<f64>>> = vec![None; n * ro.slots];
    for t in 0..ro.slots {
        for i in 0..n {
            let k = t * n + i;
            let (dl, dv) = &hg.local[k];
            let (_, d_prev) = agents[i].backward(&fw.local[k], dl, *dv, None, &mut agent_grads[i]);
            if t > 0 {
                d_packets[k - n] = Some(d_prev);
            }
        }
    }
    let units = meta.units();
    let mut meta_grad = meta.zeros_like();
    let mut d_next = LstmState::zeros(units);
    for k in (0..n * ro.slots).rev() {
        if let Some(dp) = &d_packets[k] {
            for (a, b) in d_next.hidden.iter_mut().zip(&dp.hidden) {
                *a += b;
            }
            for (a, b) in d_next.cell.iter_mut().zip(&dp.cell) {
                *a += b;
            }
        }
        let (dl, dv) = &hg.meta[k];
        let (_, d_prev) = meta.backward(&fw.meta[k], dl, *dv, Some(&d_next), &mut meta_grad);
        d_next = d_prev;
    }
    Ok((hg.parts, agent_grads, meta_grad))
}

/// One agent's slot: its input, per-step (action, reward) pairs and the
/// slot reward.
type AgentSlot = ([f64; LOCAL_INPUT_DIM], Vec<(Action, f64)>, f64);

/// Optional controls for a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Where to write a diagnostic checkpoint if a loss turns non-finite.
    pub diagnostic_checkpoint: Option<&'a Path>,
    /// Checked between episodes; training stops early once set.
    pub stop: Option<&'a AtomicBool>,
}

/// Local agents plus meta-agent, with everything needed to train them.
#[derive(Debug, Clone)]
pub struct Mamrl {
    pub agents: Vec<LocalAgent>,
    pub meta: MetaAgent,
    pub gamma: f64,
    pub beta: f64,
    pub step_cap: usize,
    pub update_epochs: usize,
    pub grad_clip: f64,
    pub workers: usize,
    pub reward_fn: RewardFn,
    pub episodes_done: usize,
    pub last_protocol: ProtocolLog,
}

/// Greedy evaluation of a trained system on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub actions: Vec<Action>,
    pub truth: Vec<Action>,
    pub dispatch: Vec<Dispatch>,
    pub rows: Vec<LogRow>,
    pub protocol: ProtocolLog,
}

impl Mamrl {
    pub fn new(n_agents: usize, cfg: &RunConfig) -> Self {
        let agents = (0..n_agents).map(|i| LocalAgent::new(i, cfg.lstm_units, cfg.lr, cfg.seed)).collect();
        Mamrl {
            agents,
            meta: MetaAgent::new(cfg.lstm_units, cfg.beta, cfg.lr, cfg.seed),
            gamma: cfg.gamma,
            beta: cfg.beta,
            step_cap: cfg.step_cap,
            update_epochs: cfg.update_epochs,
            grad_clip: cfg.grad_clip,
            workers: cfg.workers,
            reward_fn: action_reward,
            episodes_done: 0,
            last_protocol: ProtocolLog::default(),
        }
    }

    pub fn units(&self) -> usize {
        self.meta.net.units()
    }

    fn weights(&self) -> LossWeights {
        LossWeights { gamma: self.gamma, beta: self.beta }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new().num_threads(self.workers.max(1)).build().map_err(|e| Error::Config(e.to_string()))
    }

    /// Runs one episode over `table`; with `greedy` actions are argmax and no
    /// randomness is drawn.
    fn rollout(
        &mut self,
        table: &StateTable,
        task_counts: Option<&[usize]>,
        greedy: bool,
        episode: usize,
    ) -> Result<(Rollout, Vec<LogRow>)> {
        let n = self.agents.len();
        if table.shape.n_bs != n {
            return Err(Error::Dimension { what: "state table stations", expected: n, got: table.shape.n_bs });
        }
        let slots = table.shape.slots;
        let units = self.units();
        let pool = self.pool()?;
        let reward_fn = self.reward_fn;
        let step_cap = self.step_cap;
        let gamma = self.gamma;
        self.meta.state = LstmState::zeros(units);
        for a in &mut self.agents {
            a.state = LstmState::zeros(units);
        }
        let mut ro = Rollout { agents: n, slots, inputs: Vec::new(), steps: Vec::new(), observations: Vec::new() };
        let mut rows = Vec::with_capacity(n * slots);
        let mut prev: Vec<Option<(f64, Action, f64)>> = vec![None; n];
        let mut channel = MetaChannel { counts: vec![MessageCount::default(); n * slots], ..Default::default() };
        for t in 0..slots {
            let slot_out: Vec<Result<AgentSlot>> = pool.install(|| {
                self.agents
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, agent)| {
                        let input = local_input(prev[i].map(|(r, a, _)| (r, a)), t, slots);
                        let step = agent.net.forward(&input, &agent.state)?;
                        let rec = table.get(i, t);
                        let m = if greedy { 1 } else { task_counts.map_or(step_cap, |c| c[i * slots + t].clamp(1, step_cap)) };
                        let steps = (0..m)
                            .map(|_| {
                                let a = if greedy {
                                    act(&step.probs)
                                } else if agent.rng.gen::<f64>() < step.probs[0] {
                                    Action::Store
                                } else {
                                    Action::NonRenewable
                                };
                                (a, reward_fn(a, rec))
                            })
                            .collect();
                        Ok((input, steps, step.value))
                    })
                    .collect()
            });
            for (i, out) in slot_out.into_iter().enumerate() {
                let (input, steps, value) = out?;
                let (a, r) = *steps.last().expect("at least one step");
                let (cur_r, cur_a, td) = match prev[i] {
                    Some((pr, pa, pv)) => (pr, pa, advantage(pr, value, pv, gamma)),
                    None => (0.0, Action::NonRenewable, 0.0),
                };
                if t > 0 {
                    let row: &mut LogRow = &mut rows[(t - 1) * n + i];
                    row.advantage = td;
                }
                let rec = table.get(i, t);
                let d = Dispatch::for_action(a, rec.renewable_kwh, rec.demand_kwh);
                rows.push(LogRow {
                    episode,
                    bs_id: i,
                    slot: t,
                    action: a,
                    reward: r,
                    value,
                    advantage: advantage(r, 0.0, value, gamma),
                    ren_kwh: d.ren_kwh,
                    non_kwh: d.non_kwh,
                    sto_kwh: d.sto_kwh,
                });
                let obs = Observation { next_reward: r, cur_reward: cur_r, cur_action: cur_a, next_action: a, next_slot: t, td_error: td };
                channel.up.push_back((i, obs));
                channel.counts[t * n + i].observations_up += 1;
                channel.counts[t * n + i].observation_fields = OBSERVATION_FIELDS;
                ro.inputs.push(input);
                ro.steps.push(steps);
                prev[i] = Some((r, a, value));
            }
            while let Some((i, obs)) = channel.up.pop_front() {
                let v = obs.to_vector(slots);
                let out = self.meta.step(i, &v)?;
                apply_param_packet(&mut self.agents[i], &out.packet)?;
                channel.counts[t * n + i].packets_down += 1;
                channel.counts[t * n + i].packet_values = out.packet.len();
                ro.observations.push(v);
            }
        }
        self.last_protocol = ProtocolLog { agents: n, slots, counts: channel.counts };
        Ok((ro, rows))
    }

    fn nets(&self) -> Vec<ActorCritic<f64>> {
        self.agents.iter().map(|a| a.net.clone()).collect()
    }

    /// One training episode: rollout, then `update_epochs` Adam steps on
    /// every local agent and on the meta-agent.
    pub fn train_episode(
        &mut self,
        table: &StateTable,
        task_counts: Option<&[usize]>,
        hooks: &TrainHooks,
    ) -> Result<(EpisodeSummary, Vec<LogRow>)> {
        let episode = self.episodes_done;
        let (ro, rows) = self.rollout(table, task_counts, false, episode)?;
        let mut parts = LossParts::default();
        for epoch in 0..self.update_epochs.max(1) {
            let nets = self.nets();
            let (p, mut grads, mut meta_grad) = episode_gradients(&nets, &self.meta.net, &ro, self.weights())?;
            if epoch == 0 {
                parts = p;
            }
            let finite = p.total().is_finite() && meta_grad.is_finite() && grads.iter().all(|g| g.is_finite());
            if !finite {
                if let Some(path) = hooks.diagnostic_checkpoint {
                    self.save(path)?;
                }
                return Err(Error::NonFinite(format!("loss in episode {episode}")));
            }
            let clip = self.grad_clip;
            for (agent, g) in self.agents.iter_mut().zip(grads.iter_mut()) {
                clip_global_norm(g, clip);
                agent.net = agent.adam.step(&agent.net, g);
            }
            clip_global_norm(&mut meta_grad, clip);
            self.meta.net = self.meta.adam.step(&self.meta.net, &meta_grad);
            self.meta.epoch += 1;
        }
        let n = self.agents.len();
        let mut agent_rewards = vec![0.0; n];
        for r in &rows {
            agent_rewards[r.bs_id] += r.reward;
        }
        self.episodes_done += 1;
        let summary = EpisodeSummary {
            episode,
            mean_reward: agent_rewards.iter().sum::<f64>() / n as f64,
            agent_rewards,
            loss: parts.total(),
            value_loss: parts.value + parts.meta_value,
            policy_loss: parts.policy + parts.meta_policy,
        };
        Ok((summary, rows))
    }

    /// Trains for `episodes` passes over `table`. Per-slot rows are kept for
    /// every `log_every`-th episode and the last one.
    pub fn train(
        &mut self,
        table: &StateTable,
        task_counts: Option<&[usize]>,
        episodes: usize,
        log_every: usize,
        hooks: &TrainHooks,
    ) -> Result<EpisodeLog> {
        let mut log = EpisodeLog::default();
        for e in 0..episodes {
            if hooks.stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
                log::warn!("training interrupted after {e} episodes");
                break;
            }
            let (summary, rows) = self.train_episode(table, task_counts, hooks)?;
            log::debug!("episode {} mean reward {:.2} loss {:.4}", summary.episode, summary.mean_reward, summary.loss);
            if (log_every > 0 && e % log_every == 0) || e + 1 == episodes {
                log.rows.extend(rows);
            }
            log.summaries.push(summary);
        }
        Ok(log)
    }

    /// Greedy run over `table` with frozen weights.
    pub fn evaluate(&self, table: &StateTable) -> Result<Evaluation> {
        let mut sys = self.clone();
        let (ro, rows) = sys.rollout(table, None, true, self.episodes_done)?;
        let n = ro.agents;
        let mut actions = vec![Action::NonRenewable; n * ro.slots];
        let mut truth = actions.clone();
        let mut dispatch = vec![Dispatch::default(); n * ro.slots];
        for t in 0..ro.slots {
            for i in 0..n {
                let rec = table.get(i, t);
                let (a, _) = ro.committed(t, i);
                actions[i * ro.slots + t] = a;
                truth[i * ro.slots + t] = Action::ground_truth(rec.renewable_kwh, rec.demand_kwh);
                dispatch[i * ro.slots + t] = Dispatch::for_action(a, rec.renewable_kwh, rec.demand_kwh);
            }
        }
        Ok(Evaluation { actions, truth, dispatch, rows, protocol: sys.last_protocol })
    }

    pub fn checkpoint_blocks(&self) -> Vec<(String, &crate::nn::Tensor<f64>)> {
        let mut blocks = Vec::new();
        for a in &self.agents {
            blocks.extend(a.net.blocks().into_iter().map(|(n, t)| (format!("agent{}.{n}", a.bs_id), t)));
        }
        blocks.extend(self.meta.net.blocks().into_iter().map(|(n, t)| (format!("meta.{n}"), t)));
        blocks
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader { h_units: self.units() as u32, input_dims: vec![LOCAL_INPUT_DIM as u32, OBSERVATION_FIELDS as u32] };
        write_checkpoint(path, &header, &self.checkpoint_blocks())
    }

    /// Loads weights saved by [`Mamrl::save`] into a freshly configured system.
    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        let ck = read_checkpoint(path)?;
        if ck.header.input_dims != [LOCAL_INPUT_DIM as u32, OBSERVATION_FIELDS as u32] {
            return Err(Error::domain("checkpoint input dimensions do not match"));
        }
        let n_agents = ck.blocks.iter().filter(|(n, _)| n.ends_with(".lstm.w_x") && n.starts_with("agent")).count();
        let cfg = RunConfig { lstm_units: ck.header.h_units as usize, ..cfg.clone() };
        let mut sys = Mamrl::new(n_agents, &cfg);
        for a in &mut sys.agents {
            a.net.load_blocks(&format!("agent{}.", a.bs_id), &ck.blocks)?;
        }
        sys.meta.net.load_blocks("meta.", &ck.blocks)?;
        Ok(sys)
    }
}

/// Episode's total cost under the given dispatch books.
pub fn total_cost(dispatch: &[Dispatch], rates: &CostRates<f64>) -> f64 {
    dispatch.iter().map(|d| d.cost(rates)).sum()
}
