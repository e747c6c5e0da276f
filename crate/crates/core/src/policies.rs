//! Action-selection policies.

use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dynamics::Transition;
use crate::error::{Error, Result};
use crate::features::{extract_feature_graph, linear_features, FeatureOptions, ResistanceMatrix, LINEAR_FEATURES};
use crate::gnn::{self, GraphNetParams};
use crate::graph::{EdgeId, MdpState, ParcelRecord};

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const LINEAR_FORMAT: &str = "midmile-linear-v1";
pub const GNN_FORMAT: &str = "midmile-gnn-v1";

/// What a policy sees when asked to route a parcel.
#[derive(Clone, Copy)]
pub struct Decision<'a> {
    pub state: &'a MdpState,
    pub parcel: &'a ParcelRecord,
    pub actions: &'a [EdgeId],
    pub resistance: &'a ResistanceMatrix,
}

pub trait Policy {
    /// Index into `decision.actions`.
    fn choose(&mut self, decision: &Decision<'_>, rng: &mut dyn RngCore) -> Result<usize>;

    fn observe(&mut self, _transition: &Transition) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn choose(&mut self, decision: &Decision<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        (**self).choose(decision, rng)
    }

    fn observe(&mut self, transition: &Transition) {
        (**self).observe(transition)
    }
}

pub fn random_policy(actions: &[EdgeId], rng: &mut dyn RngCore) -> Result<usize> {
    if actions.is_empty() {
        return Err(Error::Policy("no actions to choose from".into()));
    }
    Ok(rng.gen_range(0..actions.len()))
}

/// The action whose receiving hub is closest to the goal hub in resistance
/// distance; ties go to the lowest edge id.
pub fn greedy_policy(state: &MdpState, parcel: &ParcelRecord, actions: &[EdgeId], r: &ResistanceMatrix) -> Result<usize> {
    let mut best: Option<(f64, EdgeId, usize)> = None;
    for (i, &a) in actions.iter().enumerate() {
        let e = state.edge(a).ok_or(Error::MissingEdge(a))?;
        let d = r.get(e.receiver.hub, parcel.goal.hub);
        if best.is_none_or(|(bd, bid, _)| d < bd || (d == bd && a < bid)) {
            best = Some((d, a, i));
        }
    }
    best.map(|(_, _, i)| i)
        .ok_or_else(|| Error::Policy("no actions to choose from".into()))
}

/// `softmax(alpha * scores)`, shifted by the maximum for stability.
pub fn softmax(scores: &[f64], alpha: f64) -> Vec<f64> {
    let max = scores.iter().map(|s| alpha * s).fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (alpha * s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

pub fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear actor `pi(a|s) ∝ exp(alpha theta·x(s,a))` and critic `q = phi·x(s,a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub alpha: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            theta: vec![0.0; LINEAR_FEATURES],
            phi: vec![0.0; LINEAR_FEATURES],
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl LinearParams {
    pub fn check(&self) -> Result<()> {
        if self.theta.len() != LINEAR_FEATURES || self.phi.len() != LINEAR_FEATURES {
            return Err(Error::param(format!("linear parameters must have length {LINEAR_FEATURES}")));
        }
        if self.theta.iter().chain(&self.phi).chain([&self.alpha]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear parameters".into()));
        }
        Ok(())
    }
}

/// Action probabilities of the linear actor.
pub fn linear_distribution(params: &LinearParams, xs: &[[f64; LINEAR_FEATURES]]) -> Vec<f64> {
    let scores: Vec<f64> = xs.iter().map(|x| dot(&params.theta, x)).collect();
    softmax(&scores, params.alpha)
}

/// Samples from the linear actor; returns (index, its probability, full distribution).
pub fn linear_policy(
    params: &LinearParams,
    xs: &[[f64; LINEAR_FEATURES]],
    rng: &mut dyn RngCore,
) -> Result<(usize, f64, Vec<f64>)> {
    if xs.is_empty() {
        return Err(Error::Policy("no actions to choose from".into()));
    }
    let probs = linear_distribution(params, xs);
    let i = sample_index(&probs, rng);
    Ok((i, probs[i], probs))
}

pub fn linear_q(params: &LinearParams, x: &[f64]) -> f64 {
    dot(&params.phi, x)
}

/// Actor and critic graph networks sharing no weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub actor: GraphNetParams,
    pub critic: GraphNetParams,
    pub alpha: f64,
    /// Feature-graph radius.
    pub k: usize,
}

impl GnnParams {
    pub fn init(shape: gnn::GraphNetShape, k: usize, seed: u64) -> Self {
        GnnParams {
            actor: GraphNetParams::init(shape, seed),
            critic: GraphNetParams::init(shape, seed.wrapping_add(1)),
            alpha: DEFAULT_ALPHA,
            k,
        }
    }
}

/// Masked softmax over the actor network's action scores.
pub fn gnn_distribution(params: &GnnParams, fg: &crate::features::FeatureGraph) -> Result<Vec<f64>> {
    let logits = gnn::forward(&params.actor.data, params.actor.shape, fg)?;
    Ok(softmax(&logits, params.alpha))
}

pub fn gnn_q(params: &GnnParams, fg: &crate::features::FeatureGraph) -> Result<Vec<f64>> {
    gnn::forward(&params.critic.data, params.critic.shape, fg)
}

pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn choose(&mut self, d: &Decision<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        random_policy(d.actions, rng)
    }
}

pub struct GreedyPolicy;

impl Policy for GreedyPolicy {
    fn choose(&mut self, d: &Decision<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        greedy_policy(d.state, d.parcel, d.actions, d.resistance)
    }
}

/// Follows each parcel's ground-truth route.
pub struct ReplayPolicy;

/// Index of the action that continues the parcel's recorded route.
pub fn replay_choice(d: &Decision<'_>) -> Option<usize> {
    d.actions
        .iter()
        .position(|&a| d.parcel.route.contains(&d.state.first_original(a)))
}

impl Policy for ReplayPolicy {
    fn choose(&mut self, d: &Decision<'_>, _rng: &mut dyn RngCore) -> Result<usize> {
        replay_choice(d).ok_or_else(|| {
            Error::Policy(format!(
                "parcel {} at {} has no action on its recorded route",
                d.parcel.id.0, d.parcel.current
            ))
        })
    }
}

/// Linear actor; samples when `explore`, otherwise takes the most likely action.
pub struct LinearPolicy {
    pub params: LinearParams,
    pub explore: bool,
    pub options: FeatureOptions,
}

impl Policy for LinearPolicy {
    fn choose(&mut self, d: &Decision<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        let xs = linear_features(d.state, d.parcel.id, d.actions, d.resistance, self.options)?;
        let probs = linear_distribution(&self.params, &xs);
        Ok(if self.explore {
            sample_index(&probs, rng)
        } else {
            argmax(&probs)
        })
    }
}

pub struct GnnPolicy {
    pub params: GnnParams,
    pub explore: bool,
    pub options: FeatureOptions,
}

impl Policy for GnnPolicy {
    fn choose(&mut self, d: &Decision<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        let k = self.params.k.max(1);
        let fg = extract_feature_graph(d.state, d.parcel.id, k, d.actions, d.resistance, self.options)?;
        let probs = gnn_distribution(&self.params, &fg)?;
        Ok(if self.explore {
            sample_index(&probs, rng)
        } else {
            argmax(&probs)
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    format: String,
    alpha: f64,
    theta: Vec<f64>,
    phi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GnnFile {
    format: String,
    alpha: f64,
    k: usize,
    actor: GraphNetParams,
    critic: GraphNetParams,
}

/// Either kind of trained parameters, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyParams {
    Linear(LinearParams),
    Gnn(GnnParams),
}

impl PolicyParams {
    pub fn to_json(&self) -> String {
        let value = match self {
            PolicyParams::Linear(p) => serde_json::to_value(LinearFile {
                format: LINEAR_FORMAT.into(),
                alpha: p.alpha,
                theta: p.theta.clone(),
                phi: p.phi.clone(),
            }),
            PolicyParams::Gnn(p) => serde_json::to_value(GnnFile {
                format: GNN_FORMAT.into(),
                alpha: p.alpha,
                k: p.k,
                actor: p.actor.clone(),
                critic: p.critic.clone(),
            }),
        }
        .expect("parameters serialize");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse("params", e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(LINEAR_FORMAT) => {
                let f: LinearFile = serde_json::from_value(value).map_err(|e| Error::parse("params", e.to_string()))?;
                let p = LinearParams {
                    theta: f.theta,
                    phi: f.phi,
                    alpha: f.alpha,
                };
                p.check()?;
                Ok(PolicyParams::Linear(p))
            }
            Some(GNN_FORMAT) => {
                let f: GnnFile = serde_json::from_value(value).map_err(|e| Error::parse("params", e.to_string()))?;
                f.actor.check()?;
                f.critic.check()?;
                Ok(PolicyParams::Gnn(GnnParams {
                    actor: f.actor,
                    critic: f.critic,
                    alpha: f.alpha,
                    k: f.k,
                }))
            }
            other => Err(Error::parse("format", format!("unknown parameter format {other:?}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Greedy (argmax) or exploring policy from these parameters.
    pub fn policy(&self, explore: bool) -> Box<dyn Policy + Send> {
        match self {
            PolicyParams::Linear(p) => Box::new(LinearPolicy {
                params: p.clone(),
                explore,
                options: FeatureOptions::default(),
            }),
            PolicyParams::Gnn(p) => Box::new(GnnPolicy {
                params: p.clone(),
                explore,
                options: FeatureOptions::default(),
            }),
        }
    }
}
