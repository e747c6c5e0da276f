//! Experiment grids, the pruning timing benchmark and plot-data emission.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, EnvConfig, RoutingStrategy};
use crate::dynamics::{run_episode, Environment, EpisodeStats};
use crate::error::{Error, Result};
use crate::policies::{Policy, PolicyParams, RandomPolicy, GreedyPolicy, ReplayPolicy};

/// A policy named on the command line or in an experiment file:
/// `random`, `greedy`, `replay`, `linear:<path>` or `gnn:<path>`.
#[derive(Clone, Debug)]
pub enum PolicySpec {
    Random,
    Greedy,
    Replay,
    /// Learned parameters, evaluated greedily unless `explore` is set.
    Learned {
        label: String,
        params: Arc<PolicyParams>,
        explore: bool,
    },
}

impl PolicySpec {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "random" => return Ok(PolicySpec::Random),
            "greedy" => return Ok(PolicySpec::Greedy),
            "replay" => return Ok(PolicySpec::Replay),
            _ => {}
        }
        let (kind, path) = text
            .split_once(':')
            .ok_or_else(|| Error::param(format!("unknown policy `{text}`")))?;
        let params = PolicyParams::load(Path::new(path))?;
        let matches = matches!(
            (kind, &params),
            ("linear", PolicyParams::Linear(_)) | ("gnn", PolicyParams::Gnn(_))
        );
        if !matches {
            return Err(Error::param(format!("`{path}` does not hold {kind} parameters")));
        }
        Ok(PolicySpec::Learned {
            label: text.to_string(),
            params: Arc::new(params),
            explore: false,
        })
    }

    pub fn label(&self) -> String {
        match self {
            PolicySpec::Random => "random".into(),
            PolicySpec::Greedy => "greedy".into(),
            PolicySpec::Replay => "replay".into(),
            PolicySpec::Learned { label, .. } => label.clone(),
        }
    }

    pub fn build(&self) -> Box<dyn Policy + Send> {
        match self {
            PolicySpec::Random => Box::new(RandomPolicy),
            PolicySpec::Greedy => Box::new(GreedyPolicy),
            PolicySpec::Replay => Box::new(ReplayPolicy),
            PolicySpec::Learned { params, explore, .. } => params.policy(*explore),
        }
    }
}

/// Runs one episode on the instance `env` generates for `seed`. The policy's
/// own randomness gets a stream derived from the same seed.
pub fn evaluate(env: &EnvConfig, policy: &PolicySpec, seed: u64) -> Result<EpisodeStats> {
    let mut environment = Environment::reset(&env.clone().with_seed(seed))?;
    let mut p = policy.build();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x90_11c7));
    run_episode(&mut environment, p.as_mut(), &mut rng)
}

/// Mean deliveries of `policy` over `seeds`, evaluated in parallel.
pub fn mean_delivered(env: &EnvConfig, policy: &PolicySpec, seeds: &[u64]) -> Result<f64> {
    let runs: Vec<Result<EpisodeStats>> = seeds.par_iter().map(|&s| evaluate(env, policy, s)).collect();
    let mut total = 0.0;
    for r in runs {
        total += r?.delivered as f64;
    }
    Ok(total / seeds.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningFlags {
    pub parcel_prune_actions: bool,
    pub prune_on_step: bool,
}

/// Cross product of policies, parcel counts, hub counts, pruning flags and
/// routing strategies, each evaluated on every seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base: EnvConfig,
    pub policies: Vec<String>,
    pub parcels: Vec<usize>,
    pub hubs: Vec<usize>,
    pub pruning: Vec<PruningFlags>,
    pub strategies: Vec<RoutingStrategy>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let base = EnvConfig::default();
        ExperimentSpec {
            policies: vec!["random".into(), "greedy".into()],
            parcels: vec![base.parcelgen.n_parcels],
            hubs: vec![base.netgen.hubs],
            pruning: vec![PruningFlags::default()],
            strategies: vec![RoutingStrategy::OneStep],
            seeds: (0..5).collect(),
            base,
        }
    }
}

impl ExperimentSpec {
    /// Random and greedy over a sweep of parcel counts.
    pub fn difficulty_curve(base: EnvConfig, parcels: &[usize], seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            parcels: parcels.to_vec(),
            hubs: vec![base.netgen.hubs],
            base,
            seeds,
            ..Self::default()
        }
    }

    /// The random policy with and without parcel-pruned actions, under every
    /// routing strategy.
    pub fn strategy_pruning(base: EnvConfig, seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            policies: vec!["random".into()],
            parcels: vec![base.parcelgen.n_parcels],
            hubs: vec![base.netgen.hubs],
            pruning: vec![
                PruningFlags::default(),
                PruningFlags {
                    parcel_prune_actions: true,
                    prune_on_step: false,
                },
            ],
            strategies: vec![RoutingStrategy::OneStep, RoutingStrategy::AllStep, RoutingStrategy::LastParcel],
            base,
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty()
            || self.parcels.is_empty()
            || self.hubs.is_empty()
            || self.pruning.is_empty()
            || self.strategies.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::param("experiment grid has an empty axis"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::param("experiment seeds must be distinct"));
        }
        self.base.validate()
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for policy in &self.policies {
            for &parcels in &self.parcels {
                for &hubs in &self.hubs {
                    for &pruning in &self.pruning {
                        for &strategy in &self.strategies {
                            cells.push(Cell {
                                index: cells.len(),
                                policy: policy.clone(),
                                parcels,
                                hubs,
                                pruning,
                                strategy,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    fn cell_config(&self, cell: &Cell) -> EnvConfig {
        let mut cfg = self.base.clone();
        cfg.parcelgen.n_parcels = cell.parcels;
        cfg.netgen.hubs = cell.hubs;
        cfg.parcel_prune_actions = cell.pruning.parcel_prune_actions;
        cfg.prune_on_step = cell.pruning.prune_on_step;
        cfg.strategy = cell.strategy;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub policy: String,
    pub parcels: usize,
    pub hubs: usize,
    pub pruning: PruningFlags,
    pub strategy: RoutingStrategy,
}

/// One (cell, seed) evaluation. Timing columns are in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub cell: usize,
    pub policy: String,
    pub parcels: usize,
    pub hubs: usize,
    pub parcel_prune: bool,
    pub step_prune: bool,
    pub strategy: RoutingStrategy,
    pub seed: u64,
    pub ok: bool,
    pub delivered: usize,
    pub failed: usize,
    pub delivered_fraction: f64,
    pub episode_return: f64,
    pub transitions: usize,
    pub get_actions_ms: f64,
    pub policy_ms: f64,
    pub step_ms: f64,
    pub pruning_ms: f64,
    pub wall_ms: f64,
    pub error: String,
}

impl ExperimentRow {
    /// The row with timing columns zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        ExperimentRow {
            get_actions_ms: 0.0,
            policy_ms: 0.0,
            step_ms: 0.0,
            pruning_ms: 0.0,
            wall_ms: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub policy: String,
    pub parcels: usize,
    pub hubs: usize,
    pub parcel_prune: bool,
    pub step_prune: bool,
    pub strategy: RoutingStrategy,
    pub runs: usize,
    pub errors: usize,
    pub delivered_min: f64,
    pub delivered_max: f64,
    pub delivered_mean: f64,
    pub fraction_min: f64,
    pub fraction_max: f64,
    pub fraction_mean: f64,
    pub return_mean: f64,
    pub transition_ms_mean: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub summaries: Vec<CellSummary>,
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Evaluates every (cell, seed) pair on a worker pool. A failing pair is
/// recorded with `ok = false` and the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let cells = spec.cells();
    let mut policies = Vec::with_capacity(cells.len());
    for cell in &cells {
        policies.push(PolicySpec::parse(&cell.policy)?);
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let rows: Vec<ExperimentRow> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cell = &cells[c];
            let outcome = evaluate(&spec.cell_config(cell), &policies[c], seed);
            let mut row = ExperimentRow {
                cell: cell.index,
                policy: cell.policy.clone(),
                parcels: cell.parcels,
                hubs: cell.hubs,
                parcel_prune: cell.pruning.parcel_prune_actions,
                step_prune: cell.pruning.prune_on_step,
                strategy: cell.strategy,
                seed,
                ok: true,
                delivered: 0,
                failed: 0,
                delivered_fraction: 0.0,
                episode_return: 0.0,
                transitions: 0,
                get_actions_ms: 0.0,
                policy_ms: 0.0,
                step_ms: 0.0,
                pruning_ms: 0.0,
                wall_ms: 0.0,
                error: String::new(),
            };
            match outcome {
                Ok(s) => {
                    row.delivered = s.delivered;
                    row.failed = s.failed;
                    row.delivered_fraction = s.delivered_fraction();
                    row.episode_return = s.episode_return;
                    row.transitions = s.transitions;
                    row.get_actions_ms = ms(s.times.get_actions);
                    row.policy_ms = ms(s.times.policy);
                    row.step_ms = ms(s.times.step);
                    row.pruning_ms = ms(s.times.pruning);
                    row.wall_ms = ms(s.wall);
                }
                Err(e) => {
                    warn!("cell {} seed {seed}: {e}", cell.index);
                    row.ok = false;
                    row.error = e.to_string();
                }
            }
            row
        })
        .collect();
    let summaries = cells.iter().map(|cell| summarize(cell, &rows)).collect();
    Ok(ExperimentResult { rows, summaries })
}

fn summarize(cell: &Cell, rows: &[ExperimentRow]) -> CellSummary {
    let mine: Vec<&ExperimentRow> = rows.iter().filter(|r| r.cell == cell.index).collect();
    let ok: Vec<&&ExperimentRow> = mine.iter().filter(|r| r.ok).collect();
    let stats = |f: &dyn Fn(&ExperimentRow) -> f64| -> (f64, f64, f64) {
        if ok.is_empty() {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let vals: Vec<f64> = ok.iter().map(|r| f(r)).collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, max, vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let (delivered_min, delivered_max, delivered_mean) = stats(&|r| r.delivered as f64);
    let (fraction_min, fraction_max, fraction_mean) = stats(&|r| r.delivered_fraction);
    let (_, _, return_mean) = stats(&|r| r.episode_return);
    let (_, _, transition_ms_mean) = stats(&|r| {
        let total = r.get_actions_ms + r.policy_ms + r.step_ms + r.pruning_ms;
        if r.transitions == 0 {
            0.0
        } else {
            total / r.transitions as f64
        }
    });
    CellSummary {
        cell: cell.index,
        policy: cell.policy.clone(),
        parcels: cell.parcels,
        hubs: cell.hubs,
        parcel_prune: cell.pruning.parcel_prune_actions,
        step_prune: cell.pruning.prune_on_step,
        strategy: cell.strategy,
        runs: mine.len(),
        errors: mine.len() - ok.len(),
        delivered_min,
        delivered_max,
        delivered_mean,
        fraction_min,
        fraction_max,
        fraction_mean,
        return_mean,
        transition_ms_mean,
    }
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean transition time per pruning configuration, in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub parcel_prune: bool,
    pub step_prune: bool,
    pub episodes: usize,
    pub transitions: usize,
    pub transition_us_mean: f64,
    /// Standard deviation of the per-episode mean across episodes.
    pub transition_us_std: f64,
    pub get_actions_us: f64,
    pub policy_us: f64,
    pub step_us: f64,
    pub pruning_us: f64,
    pub delivered_mean: f64,
}

/// Times full transitions (action query, policy call, step and any pruning)
/// of the uniform random policy under the four pruning configurations, on the
/// same instance seeds.
pub fn bench_pruning(base: &EnvConfig, episodes: usize, seed: u64) -> Result<Vec<BenchCell>> {
    if episodes == 0 {
        return Err(Error::param("benchmark needs at least one episode"));
    }
    let seeds: Vec<u64> = (0..episodes as u64).map(|i| derive_seed(seed, i)).collect();
    let mut cells = Vec::with_capacity(4);
    for (parcel_prune, step_prune) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = EnvConfig {
            parcel_prune_actions: parcel_prune,
            prune_on_step: step_prune,
            ..base.clone()
        };
        // Sequential so that cells do not compete for cores.
        let mut per_episode = Vec::with_capacity(episodes);
        let mut totals = [0.0; 4];
        let mut transitions = 0;
        let mut delivered = 0;
        for &s in &seeds {
            let stats = evaluate(&cfg, &PolicySpec::Random, s)?;
            let t = stats.times;
            let n = stats.transitions.max(1) as f64;
            per_episode.push(t.transition_total().as_secs_f64() * 1e6 / n);
            for (acc, d) in totals.iter_mut().zip([t.get_actions, t.policy, t.step, t.pruning]) {
                *acc += d.as_secs_f64() * 1e6;
            }
            transitions += stats.transitions;
            delivered += stats.delivered;
        }
        let mean = per_episode.iter().sum::<f64>() / episodes as f64;
        let var = per_episode.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / episodes as f64;
        let per = |total: f64| total / transitions.max(1) as f64;
        cells.push(BenchCell {
            parcel_prune,
            step_prune,
            episodes,
            transitions,
            transition_us_mean: mean,
            transition_us_std: var.sqrt(),
            get_actions_us: per(totals[0]),
            policy_us: per(totals[1]),
            step_us: per(totals[2]),
            pruning_us: per(totals[3]),
            delivered_mean: delivered as f64 / episodes as f64,
        });
    }
    Ok(cells)
}

/// Column set of [`emit_plot_data`] output.
pub const PLOT_COLUMNS: [&str; 4] = ["source", "row", "variable", "value"];

/// Melts CSV files that share one header into long format: one output row
/// per input cell, keyed by source file, row index and column name. Inputs
/// with differing headers are rejected.
pub fn emit_plot_data<W: Write>(inputs: &[PathBuf], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLOT_COLUMNS)?;
    let mut header: Option<(String, csv::StringRecord)> = None;
    for path in inputs {
        let shown = path.display().to_string();
        let mut r = csv::Reader::from_reader(File::open(path)?);
        let h = r.headers()?.clone();
        match &header {
            Some((first, expected)) if *expected != h => {
                return Err(Error::Schema {
                    path: shown,
                    message: format!("columns {:?} differ from {:?} in {first}", h.iter().collect::<Vec<_>>(), expected.iter().collect::<Vec<_>>()),
                });
            }
            Some(_) => {}
            None => header = Some((shown.clone(), h.clone())),
        }
        for (i, record) in r.records().enumerate() {
            let record = record?;
            for (name, value) in h.iter().zip(record.iter()) {
                w.write_record([shown.as_str(), &i.to_string(), name, value])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
