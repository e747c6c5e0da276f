use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use midmile::config::{derive_seed, EnvConfig, RoutingStrategy};
use midmile::dynamics::{build_instance, get_actions, EpisodeStats};
use midmile::features::{extract_feature_graph, linear_features, resistance_matrix, FeatureOptions};
use midmile::graph::{deserialize_state, serialize_state, validate_state, ParcelId};
use midmile::harness::{
    bench_pruning, emit_plot_data, evaluate, run_experiment, write_csv, ExperimentSpec, PolicySpec,
};
use midmile::policies::PolicyParams;
use midmile::pruning::{prune_all, skip_prune};
use midmile::training::{
    train_ppo_gnn, train_ppo_linear, train_supervised_gnn, train_supervised_linear, write_curve, OptimizerKind,
    PpoConfig, SupervisedConfig,
};

/// Middle-mile parcel routing: instance generation, pruning, rollouts,
/// training and experiments.
#[derive(Parser)]
#[command(name = "midmile", version)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EnvArgs {
    /// JSON environment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hubs: Option<usize>,
    #[arg(long)]
    horizon: Option<u32>,
    #[arg(long)]
    parcels: Option<usize>,
    /// Unit truck capacities and parcel weights.
    #[arg(long)]
    unit: bool,
    /// Restrict actions to the parcel's reach set.
    #[arg(long)]
    parcel_prune: bool,
    /// Prune the state after every transition.
    #[arg(long)]
    step_prune: bool,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<RoutingStrategy>,
}

fn parse_strategy(s: &str) -> Result<RoutingStrategy, String> {
    s.parse().map_err(|e: midmile::Error| e.to_string())
}

impl EnvArgs {
    fn load(&self, seed: u64) -> Result<EnvConfig> {
        let mut cfg: EnvConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => EnvConfig::default(),
        };
        if self.unit {
            cfg = cfg.unit();
        }
        if let Some(h) = self.hubs {
            cfg.netgen.hubs = h;
        }
        if let Some(t) = self.horizon {
            cfg.netgen.horizon = t;
        }
        if let Some(n) = self.parcels {
            cfg.parcelgen.n_parcels = n;
        }
        cfg.parcel_prune_actions |= self.parcel_prune;
        cfg.prune_on_step |= self.step_prune;
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PruneMode {
    Skip,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Linear,
    Gnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optim {
    Sgd,
    Adam,
}

impl From<Optim> for OptimizerKind {
    fn from(o: Optim) -> Self {
        match o {
            Optim::Sgd => OptimizerKind::Sgd,
            Optim::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate an initial state and write it as JSON.
    Generate {
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Prune a serialized state.
    Prune {
        /// State JSON; standard input when omitted.
        #[arg(long, alias = "in")]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PruneMode::All)]
        mode: PruneMode,
    },
    /// Feature graph (or linear features) of one parcel of a serialized state.
    Features {
        #[arg(long, alias = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        parcel: u32,
        #[arg(long, alias = "K", default_value_t = 2)]
        k: usize,
        #[arg(long)]
        phantom: bool,
        /// Emit the per-action linear feature rows instead.
        #[arg(long)]
        linear: bool,
        /// Conductance scale used for resistance distances.
        #[arg(long, default_value_t = 0.01)]
        beta1: f64,
    },
    /// Run episodes and write one CSV row per episode.
    Rollout {
        #[command(flatten)]
        env: EnvArgs,
        /// random, greedy, replay, linear:<path> or gnn:<path>.
        #[arg(long, default_value = "random")]
        policy: String,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Sample learned policies instead of taking the most likely action.
        #[arg(long)]
        explore: bool,
    },
    /// Train a policy with PPO; parameters go to --out.
    TrainPpo {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, alias = "param", value_enum, default_value_t = ModelKind::Linear)]
        model: ModelKind,
        #[arg(long)]
        total_rollouts: Option<usize>,
        #[arg(long)]
        rollouts_per_epoch: Option<usize>,
        #[arg(long)]
        updates: Option<usize>,
        #[arg(long)]
        kl_threshold: Option<f64>,
        #[arg(long, alias = "K")]
        k: Option<usize>,
        #[arg(long, value_enum)]
        optimizer: Option<Optim>,
        /// Learning curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Train a policy to imitate sampled routes; parameters go to --out.
    TrainSl {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, alias = "param", value_enum, default_value_t = ModelKind::Linear)]
        model: ModelKind,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, alias = "K")]
        k: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate an experiment grid; per-run rows go to --out.
    Experiment {
        /// JSON experiment grid.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Per-cell min/max/mean CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Time transitions under the four pruning configurations.
    BenchPruning {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
    },
    /// Merge CSV files with one header into long format.
    PlotData { inputs: Vec<PathBuf> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Random and greedy over 25..800 parcels.
    Difficulty,
    /// Random with and without parcel pruning under each routing strategy.
    Strategies,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_input(path: &Option<PathBuf>) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    match path {
        Some(p) => bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            io::stdin().read_to_end(&mut bytes)?;
        }
    }
    Ok(bytes)
}

#[derive(serde::Serialize)]
struct RolloutRow {
    seed: u64,
    episode: usize,
    delivered: usize,
    failed: usize,
    #[serde(rename = "return")]
    episode_return: f64,
    wall_ms: f64,
    get_actions_ms: f64,
    policy_ms: f64,
    step_ms: f64,
    pruning_ms: f64,
}

impl RolloutRow {
    fn new(seed: u64, episode: usize, s: &EpisodeStats) -> Self {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        RolloutRow {
            seed,
            episode,
            delivered: s.delivered,
            failed: s.failed,
            episode_return: s.episode_return,
            wall_ms: ms(s.wall),
            get_actions_ms: ms(s.times.get_actions),
            policy_ms: ms(s.times.policy),
            step_ms: ms(s.times.step),
            pruning_ms: ms(s.times.pruning),
        }
    }
}

fn save_params(params: &PolicyParams, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => params.save(p)?,
        None => println!("{}", params.to_json()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { env } => {
            let cfg = env.load(cli.seed)?;
            let inst = build_instance(&cfg)?;
            info!(
                "{} nodes, {} edges, {} parcels, {} retries",
                inst.state.node_count(),
                inst.state.edge_count(),
                inst.state.live_parcel_count(),
                inst.report.retries.iter().sum::<u32>()
            );
            output(&cli.out)?.write_all(&serialize_state(&inst.state))?;
        }
        Command::Prune { input, mode } => {
            let mut state = deserialize_state(&read_input(&input)?)?;
            let report = match mode {
                PruneMode::Skip => skip_prune(&mut state),
                PruneMode::All => prune_all(&mut state),
            };
            info!(
                "removed {} nodes and {} edge pairs, merged {}",
                report.removed_nodes,
                report.removed_pairs,
                report.merged.len()
            );
            let violations = validate_state(&state);
            if !violations.is_empty() {
                bail!("pruned state is invalid: {violations:?}");
            }
            output(&cli.out)?.write_all(&serialize_state(&state))?;
        }
        Command::Features {
            input,
            parcel,
            k,
            phantom,
            linear,
            beta1,
        } => {
            let state = deserialize_state(&read_input(&input)?)?;
            let resistance = resistance_matrix(state.network(), beta1)?;
            let id = ParcelId(parcel);
            let actions = get_actions(&state, id, false)?;
            let options = FeatureOptions { phantom };
            let mut w = output(&cli.out)?;
            if linear {
                let rows = linear_features(&state, id, &actions, &resistance, options)?;
                let rows: Vec<_> = actions.iter().zip(rows).map(|(a, x)| (a, x.to_vec())).collect();
                serde_json::to_writer_pretty(&mut w, &rows)?;
            } else {
                let fg = extract_feature_graph(&state, id, k, &actions, &resistance, options)?;
                serde_json::to_writer_pretty(&mut w, &fg)?;
            }
            writeln!(w)?;
        }
        Command::Rollout {
            env,
            policy,
            episodes,
            explore,
        } => {
            let cfg = env.load(cli.seed)?;
            let mut spec = PolicySpec::parse(&policy)?;
            if let PolicySpec::Learned { explore: e, .. } = &mut spec {
                *e = explore;
            }
            let seeds: Vec<u64> = (0..episodes as u64).map(|i| derive_seed(cli.seed, i)).collect();
            let results: Vec<midmile::Result<EpisodeStats>> =
                seeds.par_iter().map(|&s| evaluate(&cfg, &spec, s)).collect();
            let mut rows = Vec::with_capacity(episodes);
            for (i, (seed, r)) in seeds.iter().zip(results).enumerate() {
                rows.push(RolloutRow::new(*seed, i, &r?));
            }
            write_csv(&rows, output(&cli.out)?)?;
        }
        Command::TrainPpo {
            env,
            model,
            total_rollouts,
            rollouts_per_epoch,
            updates,
            kl_threshold,
            k,
            optimizer,
            curve,
        } => {
            let cfg = env.load(cli.seed)?;
            let mut ppo = match model {
                ModelKind::Linear => PpoConfig::linear(),
                ModelKind::Gnn => PpoConfig::gnn(),
            };
            ppo.total_rollouts = total_rollouts.unwrap_or(ppo.total_rollouts);
            ppo.rollouts_per_epoch = rollouts_per_epoch.unwrap_or(ppo.rollouts_per_epoch);
            ppo.updates_per_epoch = updates.unwrap_or(ppo.updates_per_epoch);
            ppo.kl_threshold = kl_threshold.unwrap_or(ppo.kl_threshold);
            ppo.k = k.unwrap_or(ppo.k);
            if let Some(o) = optimizer {
                ppo.optimizer = o.into();
            }
            let (params, outcome) = match model {
                ModelKind::Linear => {
                    let (p, o) = train_ppo_linear(&cfg, &ppo, cli.seed)?;
                    (PolicyParams::Linear(p), o)
                }
                ModelKind::Gnn => {
                    let (p, o) = train_ppo_gnn(&cfg, &ppo, cli.seed)?;
                    (PolicyParams::Gnn(p), o)
                }
            };
            if let Some(path) = &curve {
                write_curve(&outcome.curve, File::create(path)?)?;
            }
            if let (Some(first), Some(last)) = (outcome.curve.first(), outcome.curve.last()) {
                info!("mean return {:.1} -> {:.1}", first.mean_return, last.mean_return);
            }
            save_params(&params, &cli.out)?;
        }
        Command::TrainSl {
            env,
            model,
            rollouts,
            epochs,
            k,
            lr,
        } => {
            let cfg = env.load(cli.seed)?;
            let mut sl = SupervisedConfig::default();
            sl.rollouts = rollouts.unwrap_or(sl.rollouts);
            sl.epochs = epochs.unwrap_or(sl.epochs);
            sl.k = k.unwrap_or(sl.k);
            sl.lr = lr.unwrap_or(sl.lr);
            let (params, outcome) = match model {
                ModelKind::Linear => {
                    let (p, o) = train_supervised_linear(&cfg, &sl, cli.seed)?;
                    (PolicyParams::Linear(p), o)
                }
                ModelKind::Gnn => {
                    let (p, o) = train_supervised_gnn(&cfg, &sl, cli.seed)?;
                    (PolicyParams::Gnn(p), o)
                }
            };
            info!(
                "{} samples, loss {:.4} -> {:?}",
                outcome.samples, outcome.initial_loss, outcome.epoch_losses
            );
            save_params(&params, &cli.out)?;
        }
        Command::Experiment {
            spec,
            preset,
            summary,
            seeds,
            env,
        } => {
            let seed_list: Vec<u64> = (0..seeds).map(|i| derive_seed(cli.seed, i)).collect();
            let spec = match (spec, preset) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<ExperimentSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                (None, Some(Preset::Difficulty)) => {
                    ExperimentSpec::difficulty_curve(env.load(cli.seed)?, &[25, 50, 100, 200, 400, 800], seed_list)
                }
                (None, Some(Preset::Strategies)) => ExperimentSpec::strategy_pruning(env.load(cli.seed)?, seed_list),
                (None, None) => ExperimentSpec {
                    base: env.load(cli.seed)?,
                    seeds: seed_list,
                    ..ExperimentSpec::default()
                },
            };
            let result = run_experiment(&spec)?;
            write_csv(&result.rows, output(&cli.out)?)?;
            match &summary {
                Some(path) => write_csv(&result.summaries, File::create(path)?)?,
                None => {
                    for s in &result.summaries {
                        info!(
                            "cell {} {} parcels={} strategy={} parcel_prune={}: delivered {:.1} [{}, {}]",
                            s.cell, s.policy, s.parcels, s.strategy, s.parcel_prune, s.delivered_mean, s.delivered_min, s.delivered_max
                        );
                    }
                }
            }
        }
        Command::BenchPruning { env, episodes } => {
            let cfg = env.load(cli.seed)?;
            let table = bench_pruning(&cfg, episodes, cli.seed)?;
            write_csv(&table, output(&cli.out)?)?;
        }
        Command::PlotData { inputs } => {
            for p in &inputs {
                if !Path::new(p).exists() {
                    bail!("{} does not exist", p.display());
                }
            }
            emit_plot_data(&inputs, output(&cli.out)?)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIDMILE_LOG", "info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
