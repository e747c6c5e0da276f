//! PPO with Monte-Carlo critic targets, and supervised learning from sampled
//! parcel routes. Both work on any [`ScoreModel`]: the linear model or the
//! graph network.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, EnvConfig};
use crate::dynamics::{run_episode, Environment, EpisodeStats, Transition};
use crate::error::{Error, Result};
use crate::features::{extract_feature_graph, linear_features, FeatureGraph, FeatureOptions, LINEAR_FEATURES};
use crate::gnn::{self, GraphNetParams, GraphNetShape};
use crate::policies::{argmax, replay_choice, sample_index, softmax, Decision, GnnParams, LinearParams, Policy};

/// A differentiable map from a decision's representation to one score per action.
pub trait ScoreModel: Sync {
    type Repr: Send + Sync;

    fn represent(&self, decision: &Decision<'_>) -> Result<Self::Repr>;

    fn param_len(&self) -> usize;

    fn action_count(&self, repr: &Self::Repr) -> usize;

    fn scores(&self, params: &[f64], repr: &Self::Repr) -> Result<Vec<f64>>;

    /// Adds `sum_j upstream[j] * d score_j / d params` to `grad`.
    fn accumulate_gradient(&self, params: &[f64], repr: &Self::Repr, upstream: &[f64], grad: &mut [f64]) -> Result<()>;

    /// Scores, then accumulates the gradient for the upstream vector that
    /// `upstream` derives from them. Models override this to share one
    /// forward pass.
    fn scores_with_gradient(
        &self,
        params: &[f64],
        repr: &Self::Repr,
        upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let scores = self.scores(params, repr)?;
        let up = upstream(&scores);
        self.accumulate_gradient(params, repr, &up, grad)?;
        Ok(scores)
    }
}

/// `score(a) = w · x(s, a)` over the 13 state-action features.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearModel {
    pub options: FeatureOptions,
}

impl ScoreModel for LinearModel {
    type Repr = Vec<[f64; LINEAR_FEATURES]>;

    fn represent(&self, d: &Decision<'_>) -> Result<Self::Repr> {
        linear_features(d.state, d.parcel.id, d.actions, d.resistance, self.options)
    }

    fn param_len(&self) -> usize {
        LINEAR_FEATURES
    }

    fn action_count(&self, repr: &Self::Repr) -> usize {
        repr.len()
    }

    fn scores(&self, params: &[f64], repr: &Self::Repr) -> Result<Vec<f64>> {
        Ok(repr.iter().map(|x| x.iter().zip(params).map(|(a, b)| a * b).sum()).collect())
    }

    fn accumulate_gradient(&self, _params: &[f64], repr: &Self::Repr, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
        for (x, u) in repr.iter().zip(upstream) {
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += u * xi;
            }
        }
        Ok(())
    }
}

/// Graph network over the radius-`k` feature graph.
#[derive(Clone, Copy, Debug)]
pub struct GnnModel {
    pub shape: GraphNetShape,
    pub k: usize,
    pub options: FeatureOptions,
}

impl GnnModel {
    pub fn new(k: usize) -> Self {
        GnnModel {
            shape: GraphNetShape::default(),
            k,
            options: FeatureOptions::default(),
        }
    }
}

impl ScoreModel for GnnModel {
    type Repr = FeatureGraph;

    fn represent(&self, d: &Decision<'_>) -> Result<Self::Repr> {
        extract_feature_graph(d.state, d.parcel.id, self.k.max(1), d.actions, d.resistance, self.options)
    }

    fn param_len(&self) -> usize {
        self.shape.param_len()
    }

    fn action_count(&self, repr: &Self::Repr) -> usize {
        repr.action_count()
    }

    fn scores(&self, params: &[f64], repr: &Self::Repr) -> Result<Vec<f64>> {
        gnn::forward(params, self.shape, repr)
    }

    fn accumulate_gradient(&self, params: &[f64], repr: &Self::Repr, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
        let (_, cache) = gnn::forward_cached(params, self.shape, repr)?;
        gnn::backward(params, self.shape, repr, &cache, upstream, grad);
        Ok(())
    }

    fn scores_with_gradient(
        &self,
        params: &[f64],
        repr: &Self::Repr,
        upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let (scores, cache) = gnn::forward_cached(params, self.shape, repr)?;
        let up = upstream(&scores);
        gnn::backward(params, self.shape, repr, &cache, &up, grad);
        Ok(scores)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Minimizing first-order optimizer over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        Optimizer {
            kind,
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// One routing decision of an exploratory rollout.
#[derive(Clone, Debug)]
pub struct Sample<R> {
    pub repr: R,
    pub action: usize,
    /// Behavior policy over all actions.
    pub behavior: Vec<f64>,
    pub reward: f64,
    /// Undiscounted deliveries from this decision to the end of its episode.
    pub return_to_go: f64,
    pub episode: usize,
}

impl<R> Sample<R> {
    pub fn behavior_prob(&self) -> f64 {
        self.behavior[self.action]
    }
}

#[derive(Clone, Debug)]
pub struct RolloutBatch<R> {
    pub samples: Vec<Sample<R>>,
    pub episodes: Vec<EpisodeStats>,
}

impl<R> RolloutBatch<R> {
    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.episode_return).sum::<f64>() / self.episodes.len() as f64
    }
}

/// Samples actions from `softmax(alpha * scores)` and records every decision.
struct RecordingActor<'m, M: ScoreModel> {
    model: &'m M,
    params: &'m [f64],
    alpha: f64,
    explore: bool,
    samples: Vec<Sample<M::Repr>>,
}

impl<M: ScoreModel> Policy for RecordingActor<'_, M> {
    fn choose(&mut self, d: &Decision<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        let repr = self.model.represent(d)?;
        let scores = self.model.scores(self.params, &repr)?;
        let probs = softmax(&scores, self.alpha);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("action probabilities".into()));
        }
        let action = if self.explore {
            sample_index(&probs, rng)
        } else {
            argmax(&probs)
        };
        self.samples.push(Sample {
            repr,
            action,
            behavior: probs,
            reward: 0.0,
            return_to_go: 0.0,
            episode: 0,
        });
        Ok(action)
    }

    fn observe(&mut self, t: &Transition) {
        if t.action.is_some() {
            if let Some(last) = self.samples.last_mut() {
                last.reward += t.reward;
            }
        }
    }
}

/// Runs one episode per seed on fresh instances, in parallel, and fills in
/// the returns-to-go.
pub fn collect_rollouts<M: ScoreModel>(
    model: &M,
    params: &[f64],
    alpha: f64,
    env: &EnvConfig,
    seeds: &[u64],
    explore: bool,
) -> Result<RolloutBatch<M::Repr>> {
    let episodes: Vec<Result<(Vec<Sample<M::Repr>>, EpisodeStats)>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut environment = Environment::reset(&env.clone().with_seed(seed))?;
            let mut actor = RecordingActor {
                model,
                params,
                alpha,
                explore,
                samples: Vec::new(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xac7));
            let stats = run_episode(&mut environment, &mut actor, &mut rng)?;
            let mut samples = actor.samples;
            let mut to_go = 0.0;
            for s in samples.iter_mut().rev() {
                to_go += s.reward;
                s.return_to_go = to_go;
            }
            Ok((samples, stats))
        })
        .collect();
    let mut batch = RolloutBatch {
        samples: Vec::new(),
        episodes: Vec::new(),
    };
    for (i, ep) in episodes.into_iter().enumerate() {
        let (mut samples, stats) = ep?;
        samples.iter_mut().for_each(|s| s.episode = i);
        batch.samples.extend(samples);
        batch.episodes.push(stats);
    }
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub epsilon: f64,
    pub kl_threshold: f64,
    pub rollouts_per_epoch: usize,
    pub updates_per_epoch: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub total_rollouts: usize,
    pub k: usize,
    pub minibatch: usize,
    pub alpha: f64,
    pub optimizer: OptimizerKind,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self::linear()
    }
}

impl PpoConfig {
    pub fn linear() -> Self {
        PpoConfig {
            epsilon: 0.2,
            kl_threshold: 0.1,
            rollouts_per_epoch: 1,
            updates_per_epoch: 50,
            actor_lr: 0.01,
            critic_lr: 0.01,
            total_rollouts: 1000,
            k: 2,
            minibatch: 256,
            alpha: 0.1,
            optimizer: OptimizerKind::Adam,
        }
    }

    pub fn gnn() -> Self {
        PpoConfig {
            rollouts_per_epoch: 5,
            actor_lr: 0.0001,
            critic_lr: 0.001,
            ..Self::linear()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.kl_threshold, self.actor_lr, self.critic_lr, self.alpha];
        if positive.iter().any(|v| !(*v > 0.0)) || self.epsilon < 0.0 {
            return Err(Error::param("PPO rates, alpha and KL threshold must be positive"));
        }
        if self.rollouts_per_epoch == 0 || self.updates_per_epoch == 0 || self.minibatch == 0 || self.total_rollouts == 0 {
            return Err(Error::param("PPO counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochDiagnostics {
    /// KL estimate at the last check of the actor loop.
    pub kl: f64,
    pub early_stopped: bool,
    pub actor_steps: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Largest `|sum_a pi(a|s) A(s,a)|` over the batch.
    pub advantage_residual: f64,
}

fn minibatch(len: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= size {
        return (0..len).collect();
    }
    rand::seq::index::sample(rng, len, size).into_vec()
}

/// Sums per-sample gradients in index order so results do not depend on
/// thread scheduling. Also returns each sample's side value.
fn summed_gradient<T, F>(len: usize, idx: &[usize], f: F) -> Result<(Vec<f64>, Vec<T>)>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> Result<T> + Sync,
{
    let parts: Vec<Result<(Vec<f64>, T)>> = idx
        .par_iter()
        .map(|&i| {
            let mut g = vec![0.0; len];
            let v = f(i, &mut g)?;
            Ok((g, v))
        })
        .collect();
    let mut total = vec![0.0; len];
    let mut values = Vec::with_capacity(idx.len());
    for part in parts {
        let (g, v) = part?;
        for (t, g) in total.iter_mut().zip(g) {
            *t += g;
        }
        values.push(v);
    }
    Ok((total, values))
}

/// `A(s, a) = q(s, a) - sum_a' pi_b(a'|s) q(s, a')` for every action.
pub fn advantages(q: &[f64], behavior: &[f64]) -> Vec<f64> {
    let baseline: f64 = q.iter().zip(behavior).map(|(q, p)| q * p).sum();
    q.iter().map(|q| q - baseline).collect()
}

/// Derivative of `min(rho A, clip(rho, 1-eps, 1+eps) A)` with respect to rho;
/// zero where the clipped branch is strictly smaller.
pub fn clipped_objective(rho: f64, advantage: f64, epsilon: f64) -> (f64, f64) {
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if clipped < unclipped {
        (clipped, 0.0)
    } else {
        (unclipped, advantage)
    }
}

/// One PPO epoch: the critic first regresses onto returns-to-go, advantages
/// are then fixed from the behavior policy and the updated critic, and the
/// actor ascends the clipped surrogate until the KL estimate exceeds its
/// threshold.
#[allow(clippy::too_many_arguments)]
pub fn ppo_epoch<M: ScoreModel>(
    model: &M,
    actor: &mut [f64],
    critic: &mut [f64],
    batch: &RolloutBatch<M::Repr>,
    cfg: &PpoConfig,
    actor_opt: &mut Optimizer,
    critic_opt: &mut Optimizer,
    rng: &mut ChaCha8Rng,
) -> Result<EpochDiagnostics> {
    let samples = &batch.samples;
    if samples.is_empty() {
        return Err(Error::param("empty rollout batch"));
    }
    let len = model.param_len();
    let mut diag = EpochDiagnostics::default();

    for _ in 0..cfg.updates_per_epoch {
        let idx = minibatch(samples.len(), cfg.minibatch, rng);
        let n = idx.len() as f64;
        let current: &[f64] = critic;
        let (grad, errors) = summed_gradient(len, &idx, |i, g| {
            let s = &samples[i];
            let mut err = 0.0;
            model.scores_with_gradient(
                current,
                &s.repr,
                &mut |q| {
                    err = q[s.action] - s.return_to_go;
                    let mut up = vec![0.0; q.len()];
                    up[s.action] = 2.0 * err / n;
                    up
                },
                g,
            )?;
            Ok(err)
        })?;
        let loss = errors.iter().map(|e| e * e).sum::<f64>() / n;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("critic loss {loss}")));
        }
        critic_opt.step(critic, &grad);
        diag.critic_loss = loss;
    }

    let fixed_critic: &[f64] = critic;
    let advs: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|s| {
            let q = model.scores(fixed_critic, &s.repr)?;
            let a = advantages(&q, &s.behavior);
            let residual: f64 = a.iter().zip(&s.behavior).map(|(a, p)| a * p).sum();
            Ok((a[s.action], residual.abs()))
        })
        .collect();
    let mut adv = Vec::with_capacity(samples.len());
    for r in advs {
        let (a, residual) = r?;
        diag.advantage_residual = diag.advantage_residual.max(residual);
        adv.push(a);
    }

    for step in 0..cfg.updates_per_epoch {
        let idx = minibatch(samples.len(), cfg.minibatch, rng);
        let n = idx.len() as f64;
        let current: &[f64] = actor;
        // One pass yields the KL estimate, the surrogate and its gradient;
        // the gradient is discarded when the KL check stops the loop.
        let (grad, evals) = summed_gradient(len, &idx, |i, g| {
            let s = &samples[i];
            let mut out = (0.0, 0.0);
            model.scores_with_gradient(
                current,
                &s.repr,
                &mut |scores| {
                    let probs = softmax(scores, cfg.alpha);
                    let rho = probs[s.action] / s.behavior_prob();
                    let (objective, d_rho) = clipped_objective(rho, adv[i], cfg.epsilon);
                    out = ((s.behavior_prob() / probs[s.action]).ln(), objective);
                    // Ascent on the surrogate: minimize its negative.
                    let scale = -d_rho * rho * cfg.alpha / n;
                    probs
                        .iter()
                        .enumerate()
                        .map(|(j, p)| scale * (if j == s.action { 1.0 } else { 0.0 } - p))
                        .collect()
                },
                g,
            )?;
            Ok(out)
        })?;
        let kl = evals.iter().map(|e| e.0).sum::<f64>() / n;
        let surrogate = evals.iter().map(|e| e.1).sum::<f64>() / n;
        if !kl.is_finite() || !surrogate.is_finite() {
            return Err(Error::NonFinite(format!("actor surrogate {surrogate}, KL {kl}")));
        }
        diag.kl = kl;
        diag.actor_loss = -surrogate;
        if step > 0 && kl > cfg.kl_threshold {
            diag.early_stopped = true;
            debug!("KL {kl:.4} above {} after {step} actor steps", cfg.kl_threshold);
            break;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("actor gradient".into()));
        }
        actor_opt.step(actor, &grad);
        diag.actor_steps += 1;
    }
    Ok(diag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub rollouts_consumed: usize,
    pub mean_return: f64,
    pub kl: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
}

#[derive(Clone, Debug)]
pub struct PpoOutcome {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub curve: Vec<CurveRow>,
    pub diagnostics: Vec<EpochDiagnostics>,
}

/// Alternates rollouts with the current actor and PPO epochs until the
/// rollout budget is spent. Episode seeds come from one stream per run.
pub fn train_ppo<M: ScoreModel>(
    model: &M,
    env: &EnvConfig,
    cfg: &PpoConfig,
    init_actor: Vec<f64>,
    init_critic: Vec<f64>,
    seed: u64,
) -> Result<PpoOutcome> {
    cfg.validate()?;
    env.validate()?;
    let mut actor = init_actor;
    let mut critic = init_critic;
    if actor.len() != model.param_len() || critic.len() != model.param_len() {
        return Err(Error::param("initial parameters do not match the model"));
    }
    let mut actor_opt = Optimizer::new(cfg.optimizer, cfg.actor_lr, actor.len());
    let mut critic_opt = Optimizer::new(cfg.optimizer, cfg.critic_lr, critic.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut curve = Vec::new();
    let mut diagnostics = Vec::new();
    let mut consumed = 0;
    let mut epoch = 0;
    let env = EnvConfig {
        strategy: crate::config::RoutingStrategy::OneStep,
        ..env.clone()
    };
    while consumed < cfg.total_rollouts {
        let n = cfg.rollouts_per_epoch.min(cfg.total_rollouts - consumed);
        let seeds: Vec<u64> = (consumed..consumed + n).map(|i| derive_seed(seed, i as u64)).collect();
        let batch = collect_rollouts(model, &actor, cfg.alpha, &env, &seeds, true)?;
        consumed += n;
        let mean_return = batch.mean_return();
        let diag = if batch.samples.is_empty() {
            EpochDiagnostics::default()
        } else {
            ppo_epoch(model, &mut actor, &mut critic, &batch, cfg, &mut actor_opt, &mut critic_opt, &mut rng)?
        };
        debug!("epoch {epoch}: return {mean_return:.1}, KL {:.4}", diag.kl);
        curve.push(CurveRow {
            epoch,
            rollouts_consumed: consumed,
            mean_return,
            kl: diag.kl,
            actor_loss: diag.actor_loss,
            critic_loss: diag.critic_loss,
        });
        diagnostics.push(diag);
        epoch += 1;
    }
    Ok(PpoOutcome {
        actor,
        critic,
        curve,
        diagnostics,
    })
}

pub fn train_ppo_linear(env: &EnvConfig, cfg: &PpoConfig, seed: u64) -> Result<(LinearParams, PpoOutcome)> {
    let out = train_ppo(
        &LinearModel::default(),
        env,
        cfg,
        vec![0.0; LINEAR_FEATURES],
        vec![0.0; LINEAR_FEATURES],
        seed,
    )?;
    let params = LinearParams {
        theta: out.actor.clone(),
        phi: out.critic.clone(),
        alpha: cfg.alpha,
    };
    Ok((params, out))
}

pub fn train_ppo_gnn(env: &EnvConfig, cfg: &PpoConfig, seed: u64) -> Result<(GnnParams, PpoOutcome)> {
    let model = GnnModel::new(cfg.k);
    let init = GnnParams::init(model.shape, cfg.k, derive_seed(seed, 0x9a));
    let out = train_ppo(&model, env, cfg, init.actor.data, init.critic.data, seed)?;
    let params = GnnParams {
        actor: GraphNetParams {
            shape: model.shape,
            data: out.actor.clone(),
        },
        critic: GraphNetParams {
            shape: model.shape,
            data: out.critic.clone(),
        },
        alpha: cfg.alpha,
        k: cfg.k,
    };
    Ok((params, out))
}

pub fn write_curve<W: std::io::Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub k: usize,
    pub rollouts: usize,
    pub epochs: usize,
    pub lr: f64,
    pub minibatch: usize,
    pub alpha: f64,
    pub optimizer: OptimizerKind,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            k: 3,
            rollouts: 100,
            epochs: 5,
            lr: 0.01,
            minibatch: 256,
            alpha: 0.1,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Records the recorded-route action at every decision while replaying.
struct LabelRecorder<'m, M: ScoreModel> {
    model: &'m M,
    data: Vec<(M::Repr, usize)>,
    skipped: usize,
}

impl<M: ScoreModel> Policy for LabelRecorder<'_, M> {
    fn choose(&mut self, d: &Decision<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        match replay_choice(d) {
            Some(label) => {
                self.data.push((self.model.represent(d)?, label));
                Ok(label)
            }
            None => {
                self.skipped += 1;
                Ok(0)
            }
        }
    }
}

/// (representation, label) pairs from replaying the sampled routes of fresh
/// instances. Decisions whose route action is unavailable are skipped.
pub fn route_dataset<M: ScoreModel>(model: &M, env: &EnvConfig, seeds: &[u64]) -> Result<Vec<(M::Repr, usize)>> {
    let parts: Vec<Result<(Vec<(M::Repr, usize)>, usize)>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut environment = Environment::reset(&env.clone().with_seed(seed))?;
            let mut rec = LabelRecorder {
                model,
                data: Vec::new(),
                skipped: 0,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(&mut environment, &mut rec, &mut rng)?;
            Ok((rec.data, rec.skipped))
        })
        .collect();
    let mut data = Vec::new();
    for p in parts {
        let (d, skipped) = p?;
        if skipped > 0 {
            warn!("{skipped} decisions had no action on the recorded route");
        }
        data.extend(d);
    }
    Ok(data)
}

#[derive(Clone, Debug)]
pub struct SupervisedOutcome {
    pub params: Vec<f64>,
    /// Mean cross-entropy over the dataset before training.
    pub initial_loss: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub samples: usize,
    pub mean_actions: f64,
}

/// Mean cross-entropy of `softmax(alpha * scores)` against the labels.
pub fn cross_entropy<M: ScoreModel>(model: &M, params: &[f64], alpha: f64, data: &[(M::Repr, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let parts: Vec<Result<f64>> = data
        .par_iter()
        .map(|(repr, label)| Ok(-softmax(&model.scores(params, repr)?, alpha)[*label].ln()))
        .collect();
    Ok(parts.into_iter().sum::<Result<f64>>()? / data.len() as f64)
}

pub fn train_supervised<M: ScoreModel>(
    model: &M,
    env: &EnvConfig,
    cfg: &SupervisedConfig,
    init: Vec<f64>,
    seed: u64,
) -> Result<SupervisedOutcome> {
    env.validate()?;
    let seeds: Vec<u64> = (0..cfg.rollouts as u64).map(|i| derive_seed(seed, i)).collect();
    let data = route_dataset(model, env, &seeds)?;
    let mut params = init;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let initial_loss = cross_entropy(model, &params, cfg.alpha, &data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let n = chunk.len() as f64;
            let current: &[f64] = &params;
            let (grad, losses) = summed_gradient(params.len(), chunk, |i, g| {
                let (repr, label) = &data[i];
                let mut loss = 0.0;
                model.scores_with_gradient(
                    current,
                    repr,
                    &mut |scores| {
                        let probs = softmax(scores, cfg.alpha);
                        loss = -probs[*label].ln();
                        probs
                            .iter()
                            .enumerate()
                            .map(|(j, p)| cfg.alpha * (p - if j == *label { 1.0 } else { 0.0 }) / n)
                            .collect()
                    },
                    g,
                )?;
                Ok(loss)
            })?;
            total += losses.iter().sum::<f64>();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("supervised gradient".into()));
            }
            opt.step(&mut params, &grad);
        }
        epoch_losses.push(if data.is_empty() { 0.0 } else { total / data.len() as f64 });
    }
    let mean_actions = if data.is_empty() {
        0.0
    } else {
        data.iter().map(|(r, _)| model.action_count(r)).sum::<usize>() as f64 / data.len() as f64
    };
    Ok(SupervisedOutcome {
        params,
        initial_loss,
        epoch_losses,
        samples: data.len(),
        mean_actions,
    })
}

pub fn train_supervised_linear(env: &EnvConfig, cfg: &SupervisedConfig, seed: u64) -> Result<(LinearParams, SupervisedOutcome)> {
    let out = train_supervised(&LinearModel::default(), env, cfg, vec![0.0; LINEAR_FEATURES], seed)?;
    let params = LinearParams {
        theta: out.params.clone(),
        phi: vec![0.0; LINEAR_FEATURES],
        alpha: cfg.alpha,
    };
    Ok((params, out))
}

pub fn train_supervised_gnn(env: &EnvConfig, cfg: &SupervisedConfig, seed: u64) -> Result<(GnnParams, SupervisedOutcome)> {
    let model = GnnModel::new(cfg.k);
    let init = GnnParams::init(model.shape, cfg.k, derive_seed(seed, 0x9a));
    let out = train_supervised(&model, env, cfg, init.actor.data, seed)?;
    let params = GnnParams {
        actor: GraphNetParams {
            shape: model.shape,
            data: out.params.clone(),
        },
        critic: init.critic,
        alpha: cfg.alpha,
        k: cfg.k,
    };
    Ok((params, out))
}
