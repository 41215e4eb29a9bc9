//! Learning pipeline: decomposed-reward DQN with pool self-play, dynamics
//! dataset collection and supervised fitting of the dynamics network.
//!
//! Everything here is deterministic given the seed.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::Episode;
use crate::game::attributes::{state_attribute_kind, state_attribute_names, state_to_values, AttributeKind, NUM_STATE_ATTRIBUTES};
use crate::game::{
    initial_state, is_terminal, legal_actions, outcome_of, reverse_players, simulate_wave, AbstractState,
    GameConfig, Player, PurchaseAction, SimError,
};
use crate::models::features::{FeatureScales, ACTION_FEATURES};
use crate::models::ModelBundle;
use crate::nn::{Adam, Mlp, WeightsError};
use crate::play::{play_game, random_action, Agent, PlayError, TransitionRecord};

pub const Q_INPUT: usize = NUM_STATE_ATTRIBUTES + ACTION_FEATURES;
pub const DYNAMICS_INPUT: usize = NUM_STATE_ATTRIBUTES + 2 * ACTION_FEATURES;
pub const DYNAMICS_OUTPUT: usize = NUM_STATE_ATTRIBUTES + 4;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at episode {episode} (update {update}): loss {loss}")]
    Diverged { episode: usize, update: usize, loss: f64 },
    #[error("the agent pool is empty")]
    EmptyPool,
    #[error("the dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Play(#[from] PlayError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("pool manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnParams {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the episode budget over which epsilon is annealed.
    pub epsilon_anneal_fraction: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync: usize,
    pub learning_rate: f32,
    /// Experiences collected before the first update.
    pub warmup: usize,
    pub hidden: Vec<usize>,
    /// Stop once the greedy win rate against the pool reaches this.
    pub win_threshold: f64,
    pub eval_games: usize,
    pub eval_every: usize,
    pub log_every: usize,
}

impl Default for DqnParams {
    fn default() -> Self {
        DqnParams {
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.5,
            buffer_capacity: 100_000,
            batch_size: 64,
            target_sync: 1000,
            learning_rate: 1e-3,
            warmup: 500,
            hidden: vec![256, 128, 64],
            win_threshold: 0.8,
            eval_games: 50,
            eval_every: 250,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub enum PoolAgent {
    Random,
    /// A frozen Q-net that plays greedily.
    Snapshot(Mlp),
}

#[derive(Debug, Clone)]
pub struct PoolMember {
    pub name: String,
    pub agent: PoolAgent,
    /// Win rate against the pool when the snapshot was frozen.
    pub win_rate: Option<f64>,
}

/// Opponents for self-play. Members are only ever appended.
#[derive(Debug, Clone)]
pub struct AgentPool {
    members: Vec<PoolMember>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ManifestEntry {
    name: String,
    weights: Option<String>,
    win_rate: Option<f64>,
}

impl AgentPool {
    /// A pool holding only the random agent.
    pub fn seeded() -> Self {
        AgentPool {
            members: vec![PoolMember {
                name: "random".into(),
                agent: PoolAgent::Random,
                win_rate: None,
            }],
        }
    }

    pub fn members(&self) -> &[PoolMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn push(&mut self, net: Mlp, win_rate: Option<f64>) {
        let name = format!("snapshot-{}", self.members.len());
        self.members.push(PoolMember {
            name,
            agent: PoolAgent::Snapshot(net),
            win_rate,
        });
    }

    /// Writes `pool.json` and one weight file per snapshot into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), TrainError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut manifest = Vec::new();
        for m in &self.members {
            let weights = match &m.agent {
                PoolAgent::Random => None,
                PoolAgent::Snapshot(net) => {
                    let file = format!("{}.weights", m.name);
                    net.save(dir.join(&file))?;
                    Some(file)
                }
            };
            manifest.push(ManifestEntry {
                name: m.name.clone(),
                weights,
                win_rate: m.win_rate,
            });
        }
        std::fs::write(dir.join("pool.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, TrainError> {
        let dir = dir.as_ref();
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&std::fs::read(dir.join("pool.json"))?)?;
        let members = manifest
            .into_iter()
            .map(|e| {
                let agent = match &e.weights {
                    None => PoolAgent::Random,
                    Some(f) => PoolAgent::Snapshot(Mlp::load(dir.join(f))?),
                };
                Ok(PoolMember {
                    name: e.name,
                    agent,
                    win_rate: e.win_rate,
                })
            })
            .collect::<Result<_, TrainError>>()?;
        Ok(AgentPool { members })
    }

    /// The latest snapshot, if any.
    pub fn latest(&self) -> Option<&Mlp> {
        self.members.iter().rev().find_map(|m| match &m.agent {
            PoolAgent::Snapshot(n) => Some(n),
            PoolAgent::Random => None,
        })
    }
}

fn q_rows(scales: &FeatureScales, view: &AbstractState, actions: &[PurchaseAction], out: &mut Vec<f32>) {
    let mut state = Vec::with_capacity(NUM_STATE_ATTRIBUTES);
    scales.encode_state_into(view, &mut state);
    for a in actions {
        out.extend_from_slice(&state);
        scales.encode_action_into(a, out);
    }
}

fn as_batch(x: &[f32], width: usize) -> ArrayView2<'_, f32> {
    ArrayView2::from_shape((x.len() / width, width), x).expect("rows × width")
}

/// Row with the largest friendly scalar value; ties go to the lowest index.
fn best_row(out: ArrayView2<f32>) -> usize {
    let mut best = 0;
    for r in 1..out.nrows() {
        if out[(r, 0)] + out[(r, 1)] > out[(best, 0)] + out[(best, 1)] {
            best = r;
        }
    }
    best
}

/// Greedy action of a Q-net for the friendly side of `view`.
pub fn greedy_action(net: &Mlp, scales: &FeatureScales, view: &AbstractState, config: &GameConfig) -> PurchaseAction {
    let actions = legal_actions(view, Player::Friendly, config);
    if actions.len() <= 1 {
        return actions.first().copied().unwrap_or(PurchaseAction::empty());
    }
    let mut x = Vec::with_capacity(actions.len() * Q_INPUT);
    q_rows(scales, view, &actions, &mut x);
    actions[best_row(net.forward(as_batch(&x, Q_INPUT)).view())]
}

fn view_of(s: &AbstractState, player: Player) -> std::borrow::Cow<'_, AbstractState> {
    match player {
        Player::Friendly => std::borrow::Cow::Borrowed(s),
        Player::Enemy => std::borrow::Cow::Owned(reverse_players(s)),
    }
}

fn member_action<R: Rng>(m: &PoolMember, s: &AbstractState, player: Player, scales: &FeatureScales, config: &GameConfig, rng: &mut R) -> PurchaseAction {
    let view = view_of(s, player);
    match &m.agent {
        PoolAgent::Random => random_action(&view, config, rng),
        PoolAgent::Snapshot(net) => greedy_action(net, scales, &view, config),
    }
}

struct Experience {
    x: Vec<f32>,
    reward: [f32; 4],
    /// `None` once the game is over.
    next: Option<AbstractState>,
}

struct Replay {
    items: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl Replay {
    fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DqnLogRow {
    pub episode: usize,
    pub updates: usize,
    pub epsilon: f64,
    pub loss_friendly_top: f64,
    pub loss_friendly_bottom: f64,
    pub loss_enemy_top: f64,
    pub loss_enemy_bottom: f64,
    /// Greedy win rate against the pool, on evaluation rows.
    pub win_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DqnOutcome {
    pub net: Mlp,
    pub episodes: usize,
    pub updates: usize,
    pub last_win_rate: Option<f64>,
    pub reached_threshold: bool,
    pub log: Vec<DqnLogRow>,
}

pub fn write_csv<T: Serialize>(rows: &[T], w: impl Write) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Greedy win rate of `net` over `games` games, cycling through the pool.
pub fn win_rate_vs_pool(net: &Mlp, pool: &AgentPool, games: usize, config: &GameConfig, seed: u64) -> Result<f64, TrainError> {
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    if games == 0 {
        return Ok(0.0);
    }
    let scales = FeatureScales::for_config(config);
    let mut wins = 0;
    for g in 0..games {
        let member = &pool.members[g % pool.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        let mut s = initial_state(config);
        while !is_terminal(&s, config) {
            let a = greedy_action(net, &scales, &s, config);
            let e = member_action(member, &s, Player::Enemy, &scales, config, &mut rng);
            s = simulate_wave(&s, &a, &e, config, &mut rng)?.0;
        }
        if outcome_of(&s, config).is_some_and(|o| o.winner == Player::Friendly) {
            wins += 1;
        }
    }
    Ok(wins as f64 / games as f64)
}

/// Trains a Q-net for up to `budget` episodes against opponents drawn
/// uniformly from `pool`. Each of the four outputs regresses on
/// `r_i + γ Q'_i(s', a*)`, with `a*` the action maximizing the target
/// network's friendly scalar value in `s'`.
pub fn train_drdqn(pool: &AgentPool, budget: usize, params: &DqnParams, config: &GameConfig, seed: u64) -> Result<DqnOutcome, TrainError> {
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![Q_INPUT];
    sizes.extend(&params.hidden);
    sizes.push(4);
    let mut online = Mlp::new(&sizes, &mut rng);
    let mut target = online.clone();
    let mut adam = Adam::new(&online, params.learning_rate);
    let scales = FeatureScales::for_config(config);
    let mut replay = Replay {
        items: Vec::new(),
        capacity: params.buffer_capacity.max(1),
        next: 0,
    };
    let anneal = ((budget as f64 * params.epsilon_anneal_fraction).round() as usize).max(1);
    let mut updates = 0;
    let mut log = Vec::new();
    let mut loss_acc = [0.0f64; 4];
    let mut loss_n = 0usize;
    let mut last_win_rate = None;
    let mut reached = false;
    let mut episodes = 0;
    while episodes < budget {
        let t = (episodes as f64 / anneal as f64).min(1.0);
        let epsilon = params.epsilon_start + (params.epsilon_end - params.epsilon_start) * t;
        let opponent = &pool.members[rng.random_range(0..pool.len())];
        let mut s = initial_state(config);
        while !is_terminal(&s, config) {
            let actions = legal_actions(&s, Player::Friendly, config);
            let a = if rng.random::<f64>() < epsilon {
                actions[rng.random_range(0..actions.len())]
            } else {
                greedy_action(&online, &scales, &s, config)
            };
            let e = member_action(opponent, &s, Player::Enemy, &scales, config, &mut rng);
            let (next, outcome) = simulate_wave(&s, &a, &e, config, &mut rng)?;
            let mut x = Vec::with_capacity(Q_INPUT);
            q_rows(&scales, &s, std::slice::from_ref(&a), &mut x);
            let done = is_terminal(&next, config);
            let reward = outcome.map_or([0.0; 4], |o| o.reward_vector).map(|r| r as f32);
            replay.push(Experience {
                x,
                reward,
                next: (!done).then(|| next.clone()),
            });
            s = next;
            if replay.items.len() >= params.warmup.max(params.batch_size) {
                let losses = dqn_update(&mut online, &target, &mut adam, &replay, params, &scales, config, &mut rng);
                updates += 1;
                let total: f64 = losses.iter().sum();
                if !total.is_finite() {
                    return Err(TrainError::Diverged {
                        episode: episodes,
                        update: updates,
                        loss: total,
                    });
                }
                for (acc, l) in loss_acc.iter_mut().zip(losses) {
                    *acc += l;
                }
                loss_n += 1;
                if updates % params.target_sync.max(1) == 0 {
                    target = online.clone();
                }
            }
        }
        episodes += 1;
        let eval_now = params.eval_every > 0 && episodes % params.eval_every == 0;
        if eval_now || (params.log_every > 0 && episodes % params.log_every == 0) || episodes == budget {
            if !online.all_finite() {
                return Err(TrainError::Diverged {
                    episode: episodes,
                    update: updates,
                    loss: f64::NAN,
                });
            }
            let win_rate = if eval_now {
                let w = win_rate_vs_pool(&online, pool, params.eval_games, config, seed ^ episodes as u64)?;
                last_win_rate = Some(w);
                Some(w)
            } else {
                None
            };
            let mean = loss_acc.map(|l| if loss_n > 0 { l / loss_n as f64 } else { 0.0 });
            log.push(DqnLogRow {
                episode: episodes,
                updates,
                epsilon,
                loss_friendly_top: mean[0],
                loss_friendly_bottom: mean[1],
                loss_enemy_top: mean[2],
                loss_enemy_bottom: mean[3],
                win_rate,
            });
            loss_acc = [0.0; 4];
            loss_n = 0;
            if win_rate.is_some_and(|w| w >= params.win_threshold) {
                reached = true;
                break;
            }
        }
    }
    Ok(DqnOutcome {
        net: online,
        episodes,
        updates,
        last_win_rate,
        reached_threshold: reached,
        log,
    })
}

/// Per-component regression target. `next` holds the target network's
/// outputs for every legal action in the next state, or `None` at the end of
/// the game, where the target is the reward itself.
pub fn td_target(reward: [f32; 4], next: Option<ArrayView2<f32>>, gamma: f32) -> [f32; 4] {
    match next {
        None => reward,
        Some(block) => {
            let best = best_row(block);
            [0, 1, 2, 3].map(|c| reward[c] + gamma * block[(best, c)])
        }
    }
}

/// One gradient step on a sampled batch; returns the per-component loss.
#[allow(clippy::too_many_arguments)]
fn dqn_update(
    online: &mut Mlp,
    target: &Mlp,
    adam: &mut Adam,
    replay: &Replay,
    params: &DqnParams,
    scales: &FeatureScales,
    config: &GameConfig,
    rng: &mut ChaCha8Rng,
) -> [f64; 4] {
    let n = params.batch_size;
    let batch: Vec<&Experience> = (0..n)
        .map(|_| &replay.items[rng.random_range(0..replay.items.len())])
        .collect();
    let mut x = Vec::with_capacity(n * Q_INPUT);
    let mut next_x = Vec::new();
    let mut spans = Vec::with_capacity(n);
    for e in &batch {
        x.extend_from_slice(&e.x);
        match &e.next {
            Some(next) => {
                let actions = legal_actions(next, Player::Friendly, config);
                let start = next_x.len() / Q_INPUT;
                q_rows(scales, next, &actions, &mut next_x);
                spans.push(Some((start, start + actions.len())));
            }
            None => spans.push(None),
        }
    }
    let next_q = if next_x.is_empty() {
        Array2::zeros((0, 4))
    } else {
        target.forward(as_batch(&next_x, Q_INPUT))
    };
    let mut targets = Array2::<f32>::zeros((n, 4));
    for (i, e) in batch.iter().enumerate() {
        let next = spans[i].map(|(a, b)| next_q.slice(ndarray::s![a..b, ..]));
        let t = td_target(e.reward, next, params.gamma as f32);
        for c in 0..4 {
            targets[(i, c)] = t[c];
        }
    }
    let cache = online.forward_cached(as_batch(&x, Q_INPUT));
    let mut losses = [0.0f64; 4];
    for i in 0..n {
        for (c, l) in losses.iter_mut().enumerate() {
            let d = (cache.output[(i, c)] - targets[(i, c)]) as f64;
            *l += d * d / n as f64;
        }
    }
    let (_, grad) = crate::nn::mse_logit_grad(&cache.output, &targets, None);
    let grads = online.backward(&cache, grad);
    adam.apply(online, &grads);
    losses
}

/// Plays `episodes` games for the dynamics dataset. Each side is the random
/// agent with probability `random_fraction`, otherwise a pool member chosen
/// uniformly. Games run in parallel; the result is in episode order.
pub fn collect_dynamics_dataset(
    pool: &AgentPool,
    episodes: usize,
    random_fraction: f64,
    config: &GameConfig,
    seed: u64,
) -> Result<Vec<Episode>, TrainError> {
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    let agents: Vec<Agent> = pool
        .members
        .iter()
        .map(|m| match &m.agent {
            PoolAgent::Random => Agent::Random,
            PoolAgent::Snapshot(net) => Agent::Greedy {
                bundle: ModelBundle::exact(config).with_action_value(net.clone()),
                epsilon: 0.05,
            },
        })
        .collect();
    let pick = |rng: &mut ChaCha8Rng| -> usize {
        if rng.random::<f64>() < random_fraction {
            usize::MAX
        } else {
            rng.random_range(0..agents.len())
        }
    };
    let one = |i: usize| -> Result<Episode, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (f, e) = (pick(&mut rng), pick(&mut rng));
        let agent = |k: usize| agents.get(k).unwrap_or(&Agent::Random);
        let name = |k: usize| pool.members.get(k).map_or("random", |m| m.name.as_str());
        let record = play_game(agent(f), agent(e), config, rng.next_u64())?;
        Ok(Episode::from_game(record, config, "none", name(f), name(e)))
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(episodes.max(1));
    let mut slots: Vec<Option<Result<Episode, TrainError>>> = (0..episodes).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let one = &one;
                scope.spawn(move || (w..episodes).step_by(workers).map(|i| (i, one(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("collection worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every episode collected")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            hidden: vec![256, 128, 64],
            learning_rate: 1e-3,
            epochs: 40,
            batch_size: 64,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttributeError {
    pub attribute: String,
    /// Mean absolute error of the decoded prediction, in attribute units.
    pub mae: f64,
    /// The same for predicting no change.
    pub baseline_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DynamicsReport {
    pub train_records: usize,
    pub validation_records: usize,
    pub per_attribute: Vec<AttributeError>,
    pub health_mae: f64,
    pub baseline_health_mae: f64,
    pub reward_mae: f64,
    /// Mean reward-head output on non-terminal validation records.
    pub nonterminal_reward_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_health_mae: f64,
}

#[derive(Debug, Clone)]
pub struct DynamicsOutcome {
    pub net: Mlp,
    pub report: DynamicsReport,
    pub log: Vec<FitLogRow>,
}

fn dynamics_input(scales: &FeatureScales, r: &TransitionRecord, out: &mut Vec<f32>) {
    scales.encode_state_into(&r.state, out);
    scales.encode_action_into(&r.actions.friendly, out);
    scales.encode_action_into(&r.actions.enemy, out);
}

/// Splits record indices into (train, validation). With fewer than two
/// records both sets are the whole dataset.
fn split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    if held == 0 {
        return (idx.clone(), idx);
    }
    let val = idx.split_off(n - held);
    (idx, val)
}

/// Fits the dynamics network: squared error on the next-state block,
/// cross-entropy on the reward head.
pub fn train_dynamics(records: &[TransitionRecord], params: &FitParams, config: &GameConfig, seed: u64) -> Result<DynamicsOutcome, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = FeatureScales::for_config(config);
    let mut sizes = vec![DYNAMICS_INPUT];
    sizes.extend(&params.hidden);
    sizes.push(DYNAMICS_OUTPUT);
    let mut net = Mlp::new(&sizes, &mut rng);
    let mut adam = Adam::new(&net, params.learning_rate);
    let (train, val) = split(records.len(), params.holdout_fraction, &mut rng);
    let mut order = train.clone();
    let mut log = Vec::new();
    let batch = params.batch_size.max(1);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            let mut x = Vec::with_capacity(chunk.len() * DYNAMICS_INPUT);
            let mut t = Vec::with_capacity(chunk.len() * DYNAMICS_OUTPUT);
            for &i in chunk {
                dynamics_input(&scales, &records[i], &mut x);
                scales.encode_state_into(&records[i].next, &mut t);
                t.extend(records[i].reward_vector.map(|v| v as f32));
            }
            let target = Array2::from_shape_vec((chunk.len(), DYNAMICS_OUTPUT), t).expect("rows × width");
            let cache = net.forward_cached(as_batch(&x, DYNAMICS_INPUT));
            let (loss, grad) = dynamics_loss(&cache.output, &target);
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    episode: epoch,
                    update: batches,
                    loss,
                });
            }
            total += loss;
            batches += 1;
            let grads = net.backward(&cache, grad);
            adam.apply(&mut net, &grads);
        }
        let report = evaluate_dynamics(&net, records, &val, train.len(), &scales);
        log.push(FitLogRow {
            epoch,
            train_loss: total / batches.max(1) as f64,
            validation_health_mae: report.health_mae,
        });
    }
    if !net.all_finite() {
        return Err(TrainError::Diverged {
            episode: params.epochs,
            update: 0,
            loss: f64::NAN,
        });
    }
    let report = evaluate_dynamics(&net, records, &val, train.len(), &scales);
    Ok(DynamicsOutcome { net, report, log })
}

fn dynamics_loss(out: &Array2<f32>, target: &Array2<f32>) -> (f64, Array2<f32>) {
    let n = out.nrows().max(1) as f32;
    let mut grad = Array2::zeros(out.dim());
    let mut loss = 0.0f64;
    for ((r, c), &y) in out.indexed_iter() {
        let t = target[(r, c)];
        if c < NUM_STATE_ATTRIBUTES {
            let e = y - t;
            loss += (e * e) as f64;
            grad[(r, c)] = 2.0 * e * y * (1.0 - y) / n;
        } else {
            let p = y.clamp(1e-7, 1.0 - 1e-7);
            loss -= (t * p.ln() + (1.0 - t) * (1.0 - p).ln()) as f64;
            grad[(r, c)] = (y - t) / n;
        }
    }
    (loss / n as f64, grad)
}

/// Validation errors of a dynamics net on `records[val]`, with decoded
/// predictions compared in attribute units.
pub fn evaluate_dynamics(net: &Mlp, records: &[TransitionRecord], val: &[usize], train_records: usize, scales: &FeatureScales) -> DynamicsReport {
    let mut x = Vec::with_capacity(val.len() * DYNAMICS_INPUT);
    for &i in val {
        dynamics_input(scales, &records[i], &mut x);
    }
    let out = if val.is_empty() {
        Array2::zeros((0, DYNAMICS_OUTPUT))
    } else {
        net.forward(as_batch(&x, DYNAMICS_INPUT))
    };
    let mut err = [0.0f64; NUM_STATE_ATTRIBUTES];
    let mut base = [0.0f64; NUM_STATE_ATTRIBUTES];
    let mut reward_err = 0.0;
    let (mut nonterminal, mut nonterminal_sum) = (0usize, 0.0f64);
    for (k, &i) in val.iter().enumerate() {
        let row = out.row(k);
        let row = row.as_slice().expect("contiguous");
        let pred = state_to_values(&scales.decode_state(&row[..NUM_STATE_ATTRIBUTES]));
        let truth = state_to_values(&records[i].next);
        let input = state_to_values(&records[i].state);
        for a in 0..NUM_STATE_ATTRIBUTES {
            err[a] += (pred[a] - truth[a]).abs() as f64;
            base[a] += (input[a] - truth[a]).abs() as f64;
        }
        for c in 0..4 {
            reward_err += (row[NUM_STATE_ATTRIBUTES + c] as f64 - records[i].reward_vector[c]).abs() / 4.0;
        }
        if records[i].reward_vector.iter().all(|&r| r == 0.0) {
            nonterminal += 1;
            nonterminal_sum += row[NUM_STATE_ATTRIBUTES..].iter().map(|&v| v as f64).sum::<f64>() / 4.0;
        }
    }
    let n = val.len().max(1) as f64;
    let names = state_attribute_names();
    let per_attribute: Vec<AttributeError> = (0..NUM_STATE_ATTRIBUTES)
        .map(|a| AttributeError {
            attribute: names[a].clone(),
            mae: err[a] / n,
            baseline_mae: base[a] / n,
        })
        .collect();
    let health: Vec<&AttributeError> = (0..NUM_STATE_ATTRIBUTES)
        .filter(|&a| state_attribute_kind(a) == AttributeKind::Health)
        .map(|a| &per_attribute[a])
        .collect();
    let hn = health.len() as f64;
    DynamicsReport {
        train_records,
        validation_records: val.len(),
        health_mae: health.iter().map(|e| e.mae).sum::<f64>() / hn,
        baseline_health_mae: health.iter().map(|e| e.baseline_mae).sum::<f64>() / hn,
        per_attribute,
        reward_mae: reward_err / n,
        nonterminal_reward_mean: if nonterminal > 0 { nonterminal_sum / nonterminal as f64 } else { 0.0 },
    }
}

/// Distils the max-over-actions value of a Q-net into a direct state-value
/// net (67 → 4).
pub fn distill_value(q: &Mlp, states: &[AbstractState], params: &FitParams, config: &GameConfig, seed: u64) -> Result<Mlp, TrainError> {
    if states.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = FeatureScales::for_config(config);
    let bundle = ModelBundle::exact(config).with_action_value(q.clone());
    let mut targets = Vec::with_capacity(states.len() * 4);
    for s in states {
        let (v, _) = bundle
            .state_value_by_max_q(s, Player::Friendly)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        targets.extend(v.0.map(|x| x as f32));
    }
    let mut sizes = vec![NUM_STATE_ATTRIBUTES];
    sizes.extend(&params.hidden);
    sizes.push(4);
    let mut net = Mlp::new(&sizes, &mut rng);
    let mut adam = Adam::new(&net, params.learning_rate);
    let mut order: Vec<usize> = (0..states.len()).collect();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch_size.max(1)) {
            let mut x = Vec::with_capacity(chunk.len() * NUM_STATE_ATTRIBUTES);
            let mut t = Vec::with_capacity(chunk.len() * 4);
            for &i in chunk {
                scales.encode_state_into(&states[i], &mut x);
                t.extend_from_slice(&targets[i * 4..i * 4 + 4]);
            }
            let target = Array2::from_shape_vec((chunk.len(), 4), t).expect("rows × 4");
            let cache = net.forward_cached(as_batch(&x, NUM_STATE_ATTRIBUTES));
            let (loss, grad) = crate::nn::mse_logit_grad(&cache.output, &target, None);
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    episode: epoch,
                    update: 0,
                    loss: loss as f64,
                });
            }
            let grads = net.backward(&cache, grad);
            adam.apply(&mut net, &grads);
        }
    }
    Ok(net)
}
