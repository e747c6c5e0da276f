use std::collections::BTreeMap;
use std::fmt;

use super::{EdgeId, MdpState, ParcelStatus, CAPACITY_EPS};

/// One broken invariant, naming the offending node, edge, parcel or skip entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Checks every structural invariant of a state. Parcel edges are checked as
/// part of their parcel, so one broken parcel reports a single violation.
pub fn validate_state(state: &MdpState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject: String, message: String| out.push(Violation { subject, message });

    let hubs = state.network().hub_count() as u32;
    for node in state.nodes() {
        if node.hub.0 >= hubs || node.time < 1 || node.time > state.horizon() {
            push(format!("node {node}"), "outside the hub/time range".into());
        }
    }

    let mut parcel_edges: BTreeMap<EdgeId, usize> = BTreeMap::new();
    for edge in state.edges() {
        let subject = format!("edge {}", edge.id.0);
        if edge.kind.is_parcel() {
            let fwd = if edge.kind.is_forward() { edge.id } else { edge.id.twin() };
            *parcel_edges.entry(fwd).or_default() += 1;
            continue;
        }
        if !state.contains_node(edge.sender) || !state.contains_node(edge.receiver) {
            push(subject, "endpoint missing from the node set".into());
            continue;
        }
        if edge.kind.is_forward() != edge.id.is_forward_slot() {
            push(subject, "direction does not match id parity".into());
            continue;
        }
        let (early, late) = if edge.kind.is_forward() {
            (edge.sender, edge.receiver)
        } else {
            (edge.receiver, edge.sender)
        };
        if late.time <= early.time {
            push(subject, "does not move forward in time".into());
            continue;
        }
        if !edge.kind.is_truck() && edge.capacity != 0.0 {
            push(subject, "capacity set on a non-truck edge".into());
            continue;
        }
        if edge.weight != 0.0 {
            push(subject, "weight set on a non-parcel edge".into());
            continue;
        }
        if edge.kind.is_truck() && edge.capacity < -CAPACITY_EPS {
            push(subject, format!("negative capacity {}", edge.capacity));
            continue;
        }
        match state.edge(edge.id.twin()) {
            None => {
                push(subject, "has no paired edge".into());
            }
            Some(twin) => {
                let mirrored = twin.kind == edge.kind.reversed()
                    && twin.sender == edge.receiver
                    && twin.receiver == edge.sender
                    && twin.capacity == edge.capacity
                    && twin.weight == edge.weight;
                // Report a broken pair once, from the forward side.
                if !mirrored && edge.kind.is_forward() {
                    push(subject, "paired edge does not mirror it".into());
                }
            }
        }
    }

    let mut claimed = 0usize;
    for parcel in state.parcels() {
        let subject = format!("parcel {}", parcel.id.0);
        if !(parcel.weight > 0.0 && parcel.weight <= 1.0) {
            push(subject, format!("weight {} outside (0, 1]", parcel.weight));
            continue;
        }
        match parcel.status {
            ParcelStatus::InTransit => {
                if !state.contains_node(parcel.current) {
                    push(subject, format!("current node {} missing", parcel.current));
                    continue;
                }
                if !state.contains_node(parcel.goal) {
                    push(subject, format!("goal node {} missing", parcel.goal));
                    continue;
                }
                if parcel.goal.time <= parcel.current.time {
                    push(subject, "goal is not later than the current node".into());
                    continue;
                }
                let Some(fwd) = parcel.edge else {
                    push(subject, "no parcel edge".into());
                    continue;
                };
                claimed += 1;
                let ok = matches!(
                    (state.edge(fwd), state.edge(fwd.twin())),
                    (Some(f), Some(b))
                        if f.kind == super::EdgeKind::ParcelFwd
                            && f.sender == parcel.current
                            && f.receiver == parcel.goal
                            && b.kind == super::EdgeKind::ParcelBwd
                            && b.sender == parcel.goal
                            && b.receiver == parcel.current
                            && f.weight == parcel.weight
                            && b.weight == parcel.weight
                );
                if !ok {
                    push(subject, "parcel edge pair does not join current and goal".into());
                }
            }
            ParcelStatus::Delivered | ParcelStatus::Failed => {
                if parcel.edge.is_some() {
                    push(subject, "finished parcel still has a parcel edge".into());
                }
            }
        }
    }
    let orphaned = parcel_edges
        .keys()
        .filter(|fwd| !state.parcels().any(|p| p.in_transit() && p.edge == Some(**fwd)))
        .count();
    if orphaned > 0 && claimed == state.live_parcel_count() {
        push("parcel edges".into(), format!("{orphaned} parcel edge pair(s) without a parcel"));
    }

    for (merged, hops) in state.skip_map() {
        let subject = format!("skip_map {}", merged.0);
        let Some(edge) = state.edge(*merged) else {
            push(subject, "merged edge not in the state".into());
            continue;
        };
        let chained = !hops.is_empty()
            && hops.first().map(|h| h.sender) == Some(edge.sender)
            && hops.last().map(|h| h.receiver) == Some(edge.receiver)
            && hops.windows(2).all(|w| w[0].receiver == w[1].sender)
            && hops.iter().all(|h| h.receiver.time > h.sender.time);
        if !chained {
            push(subject, "hops do not form a time-monotone chain".into());
        }
    }

    out
}
