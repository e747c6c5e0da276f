//! Episodic reset/step surface for foreign-language wrappers. Observations
//! cross the boundary as JSON; the handle adds no routing logic of its own.

use serde::Serialize;

use crate::config::EnvConfig;
use crate::dynamics::{Environment, RouteSpan};
use crate::error::{Error, Result};
use crate::features::{extract_feature_graph, FeatureOptions};
use crate::graph::{serialize_state, EdgeId, ParcelId};

/// What the caller sees before each decision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observation {
    /// Parcel awaiting a decision; `None` once the episode is over.
    pub parcel: Option<ParcelId>,
    pub actions: Vec<EdgeId>,
    /// Serialized feature graph of the parcel; empty when done.
    pub feature_graph: String,
    pub done: bool,
}

impl Observation {
    pub fn action_count(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepInfo {
    pub delivered: bool,
    /// Parcels failed without a decision because they had no action left.
    pub auto_failed: usize,
    pub state_hash: u64,
}

/// One environment behind an opaque handle. Not shareable across threads;
/// independent handles may coexist.
pub struct EnvHandle {
    env: Option<Environment>,
    k: usize,
    focus: Option<(ParcelId, RouteSpan)>,
    pending: Vec<EdgeId>,
}

impl EnvHandle {
    /// Creates the environment for `seed` and returns the first observation.
    /// `k` is the feature-graph radius of observations.
    pub fn reset(cfg: &EnvConfig, seed: u64, k: usize) -> Result<(Self, Observation)> {
        let env = Environment::reset(&cfg.clone().with_seed(seed))?;
        let mut h = EnvHandle {
            env: Some(env),
            k,
            focus: None,
            pending: Vec::new(),
        };
        h.advance()?;
        let obs = h.observe()?;
        Ok((h, obs))
    }

    /// Applies the action at `index` of the last observation's action list.
    /// An out-of-range index is an error and leaves the state untouched.
    pub fn step(&mut self, index: usize) -> Result<(Observation, f64, bool, StepInfo)> {
        let (parcel, span) = self.focus.ok_or_else(|| Error::Policy("episode is over".into()))?;
        let action = *self.pending.get(index).ok_or_else(|| {
            Error::Policy(format!("action index {index} out of range for {} actions", self.pending.len()))
        })?;
        let t = self.env_mut()?.step(parcel, action)?;
        if t.removed || span == RouteSpan::OneStep {
            self.focus = None;
        }
        let auto_failed = self.advance()?;
        let obs = self.observe()?;
        let info = StepInfo {
            delivered: t.delivered,
            auto_failed,
            state_hash: self.state_hash()?,
        };
        let done = obs.done;
        Ok((obs, t.reward, done, info))
    }

    pub fn close(&mut self) {
        self.env = None;
        self.focus = None;
        self.pending.clear();
    }

    pub fn is_closed(&self) -> bool {
        self.env.is_none()
    }

    pub fn environment(&self) -> Result<&Environment> {
        self.env.as_ref().ok_or_else(closed)
    }

    /// FNV-1a over the serialized state, stable across platforms.
    pub fn state_hash(&self) -> Result<u64> {
        Ok(state_hash(&serialize_state(self.environment()?.state())))
    }

    fn env_mut(&mut self) -> Result<&mut Environment> {
        self.env.as_mut().ok_or_else(closed)
    }

    /// Moves to the next parcel that has a choice, failing those without
    /// actions on the way, as a native episode does.
    fn advance(&mut self) -> Result<usize> {
        let mut failed = 0;
        loop {
            let env = self.env.as_mut().ok_or_else(closed)?;
            let (parcel, span) = match self.focus {
                Some(f) => f,
                None => match env.select_next() {
                    Some(f) => f,
                    None => {
                        self.pending.clear();
                        return Ok(failed);
                    }
                },
            };
            let actions = env.actions(parcel)?;
            if actions.is_empty() {
                env.fail(parcel)?;
                failed += 1;
                self.focus = None;
                continue;
            }
            self.focus = Some((parcel, span));
            self.pending = actions;
            return Ok(failed);
        }
    }

    fn observe(&self) -> Result<Observation> {
        let env = self.environment()?;
        let Some((parcel, _)) = self.focus else {
            return Ok(Observation {
                parcel: None,
                actions: Vec::new(),
                feature_graph: String::new(),
                done: true,
            });
        };
        let fg = extract_feature_graph(
            env.state(),
            parcel,
            self.k,
            &self.pending,
            env.resistance(),
            FeatureOptions::default(),
        )?;
        Ok(Observation {
            parcel: Some(parcel),
            actions: self.pending.clone(),
            feature_graph: serde_json::to_string(&fg).expect("feature graph serializes"),
            done: false,
        })
    }
}

fn closed() -> Error {
    Error::Policy("environment handle is closed".into())
}

pub fn state_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
