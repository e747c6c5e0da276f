//! The routing MDP: reset, available actions, transitions and episodes.

use std::cmp::Reverse;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::RngCore;

use crate::config::{derive_seed, EnvConfig, RoutingStrategy};
use crate::error::{Error, Result};
use crate::features::{resistance_matrix, ResistanceMatrix};
use crate::graph::{EdgeId, EdgeKind, MdpState, NodeRef, ParcelId, ParcelStatus};
use crate::netgen::{expand, gen_static};
use crate::parcelgen::{populate, remove_unused_trucks, PopulateReport};
use crate::policies::{Decision, Policy};
use crate::pruning::{parcel_prune, prune_all, skip_prune, step_prune};

/// A generated instance before any transition.
#[derive(Clone, Debug)]
pub struct Instance {
    pub state: MdpState,
    pub resistance: ResistanceMatrix,
    pub report: PopulateReport,
}

/// Runs the five initialization stages: static network, time expansion, skip
/// pruning, parcel placement and whole-state pruning. In unit mode, trucks no
/// sampled route uses are dropped before the final prune.
pub fn build_instance(cfg: &EnvConfig) -> Result<Instance> {
    cfg.validate()?;
    let ng = &cfg.netgen;
    let network = gen_static(ng.hubs, ng.m, ng.p, ng.q, derive_seed(cfg.seed, 0))?;
    let mut state = expand(&network, ng, derive_seed(cfg.seed, 1))?;
    skip_prune(&mut state);
    let resistance = resistance_matrix(&network, ng.beta1)?;
    let report = populate(&mut state, &resistance, &cfg.parcelgen, derive_seed(cfg.seed, 2))?;
    if cfg.unit_mode() {
        let used = report.routes.iter().flat_map(|(_, r)| r.iter().copied()).collect();
        remove_unused_trucks(&mut state, &used);
    }
    prune_all(&mut state);
    Ok(Instance {
        state,
        resistance,
        report,
    })
}

/// The initial state for a configuration.
pub fn reset(cfg: &EnvConfig) -> Result<MdpState> {
    Ok(build_instance(cfg)?.state)
}

/// Forward truck and virtual edges leaving the parcel's node that can carry
/// it, optionally restricted to its reach set.
pub fn get_actions(state: &MdpState, parcel: ParcelId, use_parcel_pruning: bool) -> Result<Vec<EdgeId>> {
    let p = state
        .parcel(parcel)
        .filter(|p| p.in_transit())
        .ok_or(Error::ParcelNotInTransit(parcel))?;
    let mut actions: Vec<EdgeId> = state
        .transport_out(p.current)
        .filter(|e| e.admits(p.weight))
        .map(|e| e.id)
        .collect();
    if use_parcel_pruning && !actions.is_empty() {
        let reach = parcel_prune(state, p);
        actions.retain(|a| reach.edges.contains(a));
    }
    Ok(actions)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub parcel: ParcelId,
    /// None when the parcel was dropped for lack of actions.
    pub action: Option<EdgeId>,
    pub reward: f64,
    pub delivered: bool,
    pub removed: bool,
    pub vacated: NodeRef,
    /// Goal of a parcel that left the network with this transition.
    pub released_goal: Option<NodeRef>,
}

impl Transition {
    /// Nodes whose surroundings may have become unnecessary.
    pub fn released(&self) -> Vec<NodeRef> {
        std::iter::once(self.vacated).chain(self.released_goal).collect()
    }
}

/// Moves a parcel along an action without any pruning. The truck pair loses
/// the parcel's weight; the parcel is delivered on reaching its goal and fails
/// once it reaches the goal's time elsewhere or a node with no way forward.
pub fn apply_transition(state: &mut MdpState, parcel: ParcelId, action: EdgeId) -> Result<Transition> {
    let p = state
        .parcel(parcel)
        .filter(|p| p.in_transit())
        .ok_or(Error::ParcelNotInTransit(parcel))?
        .clone();
    let edge = state
        .edge(action)
        .filter(|e| e.kind.is_transport_fwd() && e.sender == p.current && e.admits(p.weight))
        .ok_or(Error::InvalidAction { parcel, action })?
        .clone();
    if edge.kind == EdgeKind::TruckFwd {
        state.set_pair_capacity(action, edge.capacity - p.weight)?;
    }
    let to = edge.receiver;
    state.relocate_parcel(parcel, to)?;
    let delivered = to == p.goal;
    let failed = !delivered && (to.time >= p.goal.time || state.transport_out(to).next().is_none());
    if delivered || failed {
        let status = if delivered {
            ParcelStatus::Delivered
        } else {
            ParcelStatus::Failed
        };
        state.finish_parcel(parcel, status);
    }
    Ok(Transition {
        parcel,
        action: Some(action),
        reward: if delivered { 1.0 } else { 0.0 },
        delivered,
        removed: delivered || failed,
        vacated: p.current,
        released_goal: (delivered || failed).then_some(p.goal),
    })
}

/// Drops a parcel that has no available action.
pub fn fail_parcel(state: &mut MdpState, parcel: ParcelId) -> Result<Transition> {
    let p = state
        .parcel(parcel)
        .filter(|p| p.in_transit())
        .ok_or(Error::ParcelNotInTransit(parcel))?
        .clone();
    state.finish_parcel(parcel, ParcelStatus::Failed);
    Ok(Transition {
        parcel,
        action: None,
        reward: 0.0,
        delivered: false,
        removed: true,
        vacated: p.current,
        released_goal: Some(p.goal),
    })
}

/// [`apply_transition`] followed by step pruning when enabled.
pub fn step(state: &mut MdpState, parcel: ParcelId, action: EdgeId, prune_on_step: bool) -> Result<Transition> {
    let t = apply_transition(state, parcel, action)?;
    if prune_on_step {
        step_prune(state, &t.released());
    }
    Ok(t)
}

/// How long the selected parcel keeps being routed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteSpan {
    OneStep,
    /// Until the parcel reaches its goal's time, which ends it.
    UntilGoalTime,
    UntilTerminal,
}

/// The next parcel to route: earliest (or latest) current time, ties by
/// lowest parcel id.
pub fn select_next(state: &MdpState, strategy: RoutingStrategy) -> Option<(ParcelId, RouteSpan)> {
    let live = state.live_parcels();
    match strategy {
        RoutingStrategy::OneStep => live
            .min_by_key(|p| (p.current.time, p.id))
            .map(|p| (p.id, RouteSpan::OneStep)),
        RoutingStrategy::AllStep => live
            .min_by_key(|p| (p.current.time, p.id))
            .map(|p| (p.id, RouteSpan::UntilGoalTime)),
        RoutingStrategy::LastParcel => live
            .min_by_key(|p| (Reverse(p.current.time), p.id))
            .map(|p| (p.id, RouteSpan::UntilTerminal)),
    }
}

/// Accumulated wall time per phase of a transition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub get_actions: Duration,
    pub policy: Duration,
    pub step: Duration,
    pub pruning: Duration,
}

impl PhaseTimes {
    pub fn transition_total(&self) -> Duration {
        self.get_actions + self.policy + self.step + self.pruning
    }
}

/// An environment instance owning its state.
#[derive(Clone, Debug)]
pub struct Environment {
    cfg: EnvConfig,
    state: MdpState,
    resistance: Arc<ResistanceMatrix>,
    initial_parcels: usize,
    times: PhaseTimes,
}

impl Environment {
    pub fn reset(cfg: &EnvConfig) -> Result<Self> {
        let inst = build_instance(cfg)?;
        Ok(Self::from_state(cfg.clone(), inst.state, Arc::new(inst.resistance)))
    }

    pub fn from_state(cfg: EnvConfig, state: MdpState, resistance: Arc<ResistanceMatrix>) -> Self {
        let initial_parcels = state.live_parcel_count();
        Environment {
            cfg,
            state,
            resistance,
            initial_parcels,
            times: PhaseTimes::default(),
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &MdpState {
        &self.state
    }

    pub fn into_state(self) -> MdpState {
        self.state
    }

    pub fn resistance(&self) -> &ResistanceMatrix {
        &self.resistance
    }

    pub fn resistance_arc(&self) -> Arc<ResistanceMatrix> {
        Arc::clone(&self.resistance)
    }

    pub fn initial_parcels(&self) -> usize {
        self.initial_parcels
    }

    pub fn times(&self) -> PhaseTimes {
        self.times
    }

    pub fn is_done(&self) -> bool {
        self.state.live_parcels().next().is_none()
    }

    pub fn select_next(&self) -> Option<(ParcelId, RouteSpan)> {
        select_next(&self.state, self.cfg.strategy)
    }

    pub fn actions(&mut self, parcel: ParcelId) -> Result<Vec<EdgeId>> {
        let start = Instant::now();
        let actions = get_actions(&self.state, parcel, self.cfg.parcel_prune_actions);
        self.times.get_actions += start.elapsed();
        actions
    }

    pub fn step(&mut self, parcel: ParcelId, action: EdgeId) -> Result<Transition> {
        let start = Instant::now();
        let t = apply_transition(&mut self.state, parcel, action)?;
        self.times.step += start.elapsed();
        self.prune_after(&t);
        Ok(t)
    }

    pub fn fail(&mut self, parcel: ParcelId) -> Result<Transition> {
        let t = fail_parcel(&mut self.state, parcel)?;
        self.prune_after(&t);
        Ok(t)
    }

    fn prune_after(&mut self, t: &Transition) {
        if self.cfg.prune_on_step {
            let start = Instant::now();
            step_prune(&mut self.state, &t.released());
            self.times.pruning += start.elapsed();
        }
    }

    pub(crate) fn add_policy_time(&mut self, d: Duration) {
        self.times.policy += d;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub parcels: usize,
    pub delivered: usize,
    pub failed: usize,
    pub episode_return: f64,
    /// Actions applied.
    pub transitions: usize,
    pub times: PhaseTimes,
    pub wall: Duration,
}

impl EpisodeStats {
    pub fn delivered_fraction(&self) -> f64 {
        if self.parcels == 0 {
            0.0
        } else {
            self.delivered as f64 / self.parcels as f64
        }
    }
}

/// Routes parcels with `policy` until none is in transit.
pub fn run_episode(env: &mut Environment, policy: &mut dyn Policy, rng: &mut dyn RngCore) -> Result<EpisodeStats> {
    let wall = Instant::now();
    let mut stats = EpisodeStats {
        parcels: env.initial_parcels(),
        ..EpisodeStats::default()
    };
    let record = |stats: &mut EpisodeStats, t: &Transition| {
        stats.episode_return += t.reward;
        if t.delivered {
            stats.delivered += 1;
        } else if t.removed {
            stats.failed += 1;
        }
    };
    while let Some((parcel, span)) = env.select_next() {
        loop {
            let actions = env.actions(parcel)?;
            let t = if actions.is_empty() {
                env.fail(parcel)?
            } else {
                let start = Instant::now();
                let choice = {
                    let state = env.state();
                    let decision = Decision {
                        state,
                        parcel: state.parcel(parcel).expect("live parcel"),
                        actions: &actions,
                        resistance: env.resistance(),
                    };
                    policy.choose(&decision, rng)?
                };
                env.add_policy_time(start.elapsed());
                let action = *actions.get(choice).ok_or_else(|| {
                    Error::Policy(format!("action index {choice} out of range for {} actions", actions.len()))
                })?;
                let t = env.step(parcel, action)?;
                stats.transitions += 1;
                t
            };
            record(&mut stats, &t);
            policy.observe(&t);
            if t.removed || span == RouteSpan::OneStep {
                break;
            }
        }
    }
    stats.times = env.times();
    stats.wall = wall.elapsed();
    Ok(stats)
}
