//! Configuration blocks shared by generation, the environment and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static network and time expansion (`netgen` block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetgenConfig {
    #[serde(rename = "H")]
    pub hubs: usize,
    #[serde(rename = "T")]
    pub horizon: u32,
    /// Defaults to the number of hubs.
    pub trucks_per_step: Option<usize>,
    pub max_duration: u32,
    pub beta1: f64,
    pub capacity_range: (f64, f64),
    pub unit_capacity: bool,
    /// Extended Barabási–Albert parameters.
    pub m: usize,
    pub p: f64,
    pub q: f64,
}

impl Default for NetgenConfig {
    fn default() -> Self {
        NetgenConfig {
            hubs: 10,
            horizon: 50,
            trucks_per_step: None,
            max_duration: 5,
            beta1: 0.01,
            capacity_range: (0.0, 1.0),
            unit_capacity: false,
            m: 2,
            p: 0.2,
            q: 0.0,
        }
    }
}

impl NetgenConfig {
    pub fn trucks_per_step(&self) -> usize {
        self.trucks_per_step.unwrap_or(self.hubs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::param("T must be at least 2"));
        }
        if self.max_duration < 1 {
            return Err(Error::param("max_duration must be at least 1"));
        }
        let (lo, hi) = self.capacity_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::param("capacity_range must lie within [0, 1]"));
        }
        if !self.beta1.is_finite() {
            return Err(Error::param("beta1 must be finite"));
        }
        Ok(())
    }
}

/// Parcel sampling (`parcelgen` block).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParcelGenConfig {
    #[serde(rename = "n")]
    pub n_parcels: usize,
    /// Pareto shape.
    pub alpha: f64,
    /// Pareto scale, the minimum weight.
    pub scale: f64,
    pub max_weight: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Mean route length in time steps.
    #[serde(rename = "L")]
    pub mean_route_length: u32,
    pub max_retries: u32,
    pub unit_weight: bool,
}

impl Default for ParcelGenConfig {
    fn default() -> Self {
        ParcelGenConfig {
            n_parcels: 200,
            alpha: 0.1,
            scale: 0.01,
            max_weight: 1.0,
            beta2: 0.1,
            beta3: 0.1,
            mean_route_length: 10,
            max_retries: 50,
            unit_weight: false,
        }
    }
}

impl ParcelGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.scale && self.scale < self.max_weight && self.max_weight <= 1.0) {
            return Err(Error::param("need 0 < scale < max_weight <= 1"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::param("alpha must be positive"));
        }
        if self.mean_route_length < 1 {
            return Err(Error::param("L must be at least 1"));
        }
        Ok(())
    }
}

/// Which parcel to route next.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingStrategy {
    /// Earliest parcel, one step at a time.
    #[default]
    OneStep,
    /// Earliest parcel, until it reaches its goal time.
    AllStep,
    /// Latest parcel, until it terminates.
    LastParcel,
}

impl std::str::FromStr for RoutingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_step" | "one-step" => Ok(RoutingStrategy::OneStep),
            "all_step" | "all-step" => Ok(RoutingStrategy::AllStep),
            "last_parcel" | "last-parcel" => Ok(RoutingStrategy::LastParcel),
            other => Err(Error::param(format!("unknown routing strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for RoutingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RoutingStrategy::OneStep => "one_step",
            RoutingStrategy::AllStep => "all_step",
            RoutingStrategy::LastParcel => "last_parcel",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub netgen: NetgenConfig,
    pub parcelgen: ParcelGenConfig,
    pub prune_on_step: bool,
    pub parcel_prune_actions: bool,
    pub strategy: RoutingStrategy,
    pub seed: u64,
}

impl EnvConfig {
    /// The unit-capacity variant: every truck holds exactly one unit-weight
    /// parcel and trucks unused by any sampled route are dropped.
    pub fn unit(mut self) -> Self {
        self.netgen.unit_capacity = true;
        self.parcelgen.unit_weight = true;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_parcels(mut self, n: usize) -> Self {
        self.parcelgen.n_parcels = n;
        self
    }

    pub fn unit_mode(&self) -> bool {
        self.netgen.unit_capacity && self.parcelgen.unit_weight
    }

    pub fn validate(&self) -> Result<()> {
        self.netgen.validate()?;
        self.parcelgen.validate()
    }
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_block_names() {
        let cfg: EnvConfig = serde_json::from_str(
            r#"{"netgen": {"H": 3, "T": 5, "trucks_per_step": 2}, "parcelgen": {"n": 5, "L": 2}, "strategy": "last_parcel"}"#,
        )
        .unwrap();
        assert_eq!(cfg.netgen.hubs, 3);
        assert_eq!(cfg.netgen.trucks_per_step(), 2);
        assert_eq!(cfg.parcelgen.mean_route_length, 2);
        assert_eq!(cfg.strategy, RoutingStrategy::LastParcel);
        assert_eq!(cfg.parcelgen.beta2, 0.1);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
