//! Parcel weights and jointly feasible parcel routes.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ParcelGenConfig;
use crate::error::{Error, Result};
use crate::features::ResistanceMatrix;
use crate::graph::{EdgeId, EdgeKind, HubId, MdpState, NodeRef, ParcelId, CAPACITY_EPS};
use crate::netgen::{boltzmann_sample_without_replacement, sample_weighted};

/// Truck capacities as seen by route sampling. Routes consume these, never
/// the live capacities, so the bundle of sampled routes is jointly feasible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShadowCapacities {
    remaining: BTreeMap<EdgeId, f64>,
}

impl ShadowCapacities {
    pub fn from_state(state: &MdpState) -> Self {
        ShadowCapacities {
            remaining: state
                .edges()
                .filter(|e| e.kind == EdgeKind::TruckFwd)
                .map(|e| (e.id, e.capacity))
                .collect(),
        }
    }

    pub fn get(&self, id: EdgeId) -> Option<f64> {
        self.remaining.get(&id).copied()
    }

    fn admits(&self, state: &MdpState, id: EdgeId, weight: f64) -> bool {
        match state.edge(id).map(|e| e.kind) {
            Some(EdgeKind::VirtualFwd) => true,
            Some(EdgeKind::TruckFwd) => self.get(id).is_some_and(|c| c >= weight - CAPACITY_EPS),
            _ => false,
        }
    }

    fn consume(&mut self, id: EdgeId, weight: f64) {
        if let Some(c) = self.remaining.get_mut(&id) {
            *c = (*c - weight).max(0.0);
        }
    }
}

/// Truncated Pareto weight by rejection: `m / U^(1/alpha)` redrawn until it
/// does not exceed `max_weight`.
pub fn sample_weight<R: Rng + ?Sized>(cfg: &ParcelGenConfig, rng: &mut R) -> f64 {
    if cfg.unit_weight {
        return 1.0;
    }
    loop {
        let u = 1.0 - rng.gen::<f64>();
        let w = cfg.scale / u.powf(1.0 / cfg.alpha);
        if w <= cfg.max_weight {
            return w;
        }
    }
}

/// CDF of the truncated Pareto weight distribution.
pub fn truncated_pareto_cdf(w: f64, cfg: &ParcelGenConfig) -> f64 {
    if w < cfg.scale {
        return 0.0;
    }
    if w >= cfg.max_weight {
        return 1.0;
    }
    let raw = |x: f64| 1.0 - (cfg.scale / x).powf(cfg.alpha);
    raw(w) / raw(cfg.max_weight)
}

/// Start hub from `p(h) ∝ exp(-beta2 * deg(h))` over the hubs allowed by `eligible`.
pub fn sample_start_hub<R: Rng + ?Sized>(
    degrees: &[u32],
    beta2: f64,
    eligible: impl Fn(usize) -> bool,
    rng: &mut R,
) -> Option<HubId> {
    let hubs: Vec<usize> = (0..degrees.len()).filter(|&h| eligible(h)).collect();
    if hubs.is_empty() {
        return None;
    }
    let scores: Vec<f64> = hubs.iter().map(|&h| -(degrees[h] as f64)).collect();
    let pick = boltzmann_sample_without_replacement(&hubs, &scores, beta2, 1, rng).ok()?;
    Some(HubId(pick[0] as u32))
}

/// Start node: hub favouring low degree, then a uniform time among that hub's
/// nodes in `1..=T-L`.
pub fn sample_start<R: Rng + ?Sized>(state: &MdpState, cfg: &ParcelGenConfig, rng: &mut R) -> Result<NodeRef> {
    let horizon = state.horizon();
    let l = cfg.mean_route_length;
    if horizon <= l {
        return Err(Error::param(format!("need T > L, got T = {horizon}, L = {l}")));
    }
    let latest = horizon - l;
    let mut times: Vec<Vec<u32>> = vec![Vec::new(); state.network().hub_count()];
    for n in state.nodes() {
        if n.time <= latest && state.transport_out(n).next().is_some() {
            times[n.hub.index()].push(n.time);
        }
    }
    let hub = sample_start_hub(state.network().degrees(), cfg.beta2, |h| !times[h].is_empty(), rng)
        .ok_or_else(|| Error::Generation("no hub has a feasible start time".into()))?;
    let options = &times[hub.index()];
    Ok(NodeRef {
        hub,
        time: options[rng.gen_range(0..options.len())],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledRoute {
    pub start: NodeRef,
    pub goal: NodeRef,
    /// Forward edges of the state the route was sampled on.
    pub edges: Vec<EdgeId>,
}

impl SampledRoute {
    pub fn duration(&self) -> u32 {
        self.goal.time - self.start.time
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RouteSample {
    Accepted(SampledRoute),
    /// The route ended at its start hub (or could not move at all).
    Retry(SampledRoute),
}

impl RouteSample {
    pub fn route(&self) -> &SampledRoute {
        match self {
            RouteSample::Accepted(r) | RouteSample::Retry(r) => r,
        }
    }
}

/// Walks a parcel forward along trucks with enough shadow capacity, picking
/// each truck by `p ∝ exp(beta3 * dist(start hub, receiving hub))`. After a
/// truck of duration `l` the walk stops if `Bin(l, 1/L) > 0`. Accepted routes
/// consume shadow capacity.
pub fn sample_route<R: Rng + ?Sized>(
    state: &MdpState,
    resistance: &ResistanceMatrix,
    weight: f64,
    start: NodeRef,
    cfg: &ParcelGenConfig,
    shadow: &mut ShadowCapacities,
    rng: &mut R,
) -> RouteSample {
    let stop = 1.0 / cfg.mean_route_length as f64;
    let distances = resistance.row(start.hub);
    let mut node = start;
    let mut edges = Vec::new();
    loop {
        let options: Vec<(EdgeId, NodeRef, u32)> = state
            .transport_out(node)
            .filter(|e| shadow.admits(state, e.id, weight))
            .map(|e| (e.id, e.receiver, e.duration()))
            .collect();
        if options.is_empty() {
            break;
        }
        let weights = options
            .iter()
            .map(|(_, r, _)| (cfg.beta3 * distances[r.hub.index()]).exp());
        let (id, receiver, duration) = options[sample_weighted(weights, rng)];
        edges.push(id);
        node = receiver;
        let successes = (0..duration).filter(|_| rng.gen_bool(stop)).count();
        if successes > 0 {
            break;
        }
    }
    let route = SampledRoute {
        start,
        goal: node,
        edges,
    };
    if route.edges.is_empty() || route.goal.hub == start.hub {
        return RouteSample::Retry(route);
    }
    for &e in &route.edges {
        shadow.consume(e, weight);
    }
    RouteSample::Accepted(route)
}

#[derive(Clone, Debug, Default)]
pub struct PopulateReport {
    /// Weight reductions per placed parcel, in placement order.
    pub retries: Vec<u32>,
    /// Parcels kept with a route back to their start hub.
    pub degenerate: usize,
    /// Parcels that could not move at all and were dropped.
    pub dropped: usize,
    /// Parcel ids with the forward edges (of the populated state) their routes use.
    pub routes: Vec<(ParcelId, Vec<EdgeId>)>,
    pub shadow: ShadowCapacities,
}

/// Places parcels heaviest first. A route that ends at its start hub costs the
/// parcel 10% of its weight and a fresh attempt; once `max_retries` is spent
/// the same-hub route is kept.
pub fn populate(
    state: &mut MdpState,
    resistance: &ResistanceMatrix,
    cfg: &ParcelGenConfig,
    seed: u64,
) -> Result<PopulateReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..cfg.n_parcels).map(|_| sample_weight(cfg, &mut rng)).collect();
    weights.sort_by(|a, b| b.total_cmp(a));

    let mut report = PopulateReport {
        shadow: ShadowCapacities::from_state(state),
        ..PopulateReport::default()
    };
    for initial in weights {
        let mut weight = initial;
        let mut retries = 0u32;
        loop {
            let start = sample_start(state, cfg, &mut rng)?;
            match sample_route(state, resistance, weight, start, cfg, &mut report.shadow, &mut rng) {
                RouteSample::Accepted(route) => {
                    place(state, &mut report, weight, route, retries);
                    break;
                }
                RouteSample::Retry(_) if retries < cfg.max_retries => {
                    weight *= 0.9;
                    retries += 1;
                }
                RouteSample::Retry(route) if !route.edges.is_empty() => {
                    for &e in &route.edges {
                        report.shadow.consume(e, weight);
                    }
                    report.degenerate += 1;
                    place(state, &mut report, weight, route, retries);
                    break;
                }
                RouteSample::Retry(route) => {
                    warn!("dropping parcel stuck at {}", route.start);
                    report.dropped += 1;
                    break;
                }
            }
        }
    }
    Ok(report)
}

fn place(state: &mut MdpState, report: &mut PopulateReport, weight: f64, route: SampledRoute, retries: u32) {
    let original: Vec<EdgeId> = route
        .edges
        .iter()
        .flat_map(|&e| state.expand_edge(e))
        .map(|hop| hop.edge)
        .collect();
    let id = state.add_parcel(weight, route.start, route.goal, original);
    report.retries.push(retries);
    report.routes.push((id, route.edges));
}

/// Drops every truck no sampled route uses.
pub fn remove_unused_trucks(state: &mut MdpState, used: &BTreeSet<EdgeId>) {
    let unused: Vec<EdgeId> = state
        .edges()
        .filter(|e| e.kind == EdgeKind::TruckFwd && !used.contains(&e.id))
        .map(|e| e.id)
        .collect();
    for id in unused {
        state.remove_pair(id);
    }
}
