use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use midmile::config::{EnvConfig, RoutingStrategy};
use midmile::features::LINEAR_FEATURES;
use midmile::policies::softmax;
use midmile::training::{
    advantages, collect_rollouts, cross_entropy, ppo_epoch, route_dataset, train_ppo_linear, train_supervised,
    write_curve, GnnModel, LinearModel, Optimizer, OptimizerKind, PpoConfig, RolloutBatch, ScoreModel,
    SupervisedConfig,
};

fn env(parcels: usize) -> EnvConfig {
    EnvConfig {
        strategy: RoutingStrategy::OneStep,
        ..EnvConfig::default().with_parcels(parcels)
    }
}

fn some_actor() -> Vec<f64> {
    (0..LINEAR_FEATURES).map(|i| ((i * 5) % 7) as f64 - 3.0).collect()
}

fn batch(parcels: usize, seeds: &[u64]) -> RolloutBatch<Vec<[f64; LINEAR_FEATURES]>> {
    collect_rollouts(&LinearModel::default(), &some_actor(), 0.1, &env(parcels), seeds, true).unwrap()
}

#[test]
fn rollouts_record_returns_to_go() {
    let model = LinearModel::default();
    let actor = some_actor();
    let b = batch(40, &[1, 2, 3]);
    assert_eq!(b.episodes.len(), 3);
    assert_eq!(b.samples.len(), b.episodes.iter().map(|e| e.transitions).sum::<usize>());
    for (ep, stats) in b.episodes.iter().enumerate() {
        let samples: Vec<_> = b.samples.iter().filter(|s| s.episode == ep).collect();
        assert_eq!(samples[0].return_to_go, stats.episode_return);
        assert_eq!(samples.iter().map(|s| s.reward).sum::<f64>(), stats.episode_return);
        for w in samples.windows(2) {
            assert!(w[1].return_to_go <= w[0].return_to_go);
            assert_eq!(w[0].return_to_go - w[0].reward, w[1].return_to_go);
        }
        assert_eq!(samples.last().unwrap().return_to_go, samples.last().unwrap().reward);
    }
    for s in &b.samples {
        assert!(s.reward == 0.0 || s.reward == 1.0);
        let p = s.behavior_prob();
        assert!(p > 0.0 && p <= 1.0);
        // Ratios start at exactly one: the recorded distribution is the
        // current actor's.
        assert_eq!(s.behavior, softmax(&model.scores(&actor, &s.repr).unwrap(), 0.1));
    }
    let again = batch(40, &[1, 2, 3]);
    assert_eq!(again.samples.len(), b.samples.len());
    assert!(again.samples.iter().zip(&b.samples).all(|(a, b)| a.action == b.action && a.repr == b.repr));
}

#[test]
fn advantages_are_centered_on_every_state() {
    let b = batch(40, &[4, 5]);
    let critic: Vec<f64> = (0..LINEAR_FEATURES).map(|i| (i as f64).cos()).collect();
    let model = LinearModel::default();
    for s in &b.samples {
        let a = advantages(&model.scores(&critic, &s.repr).unwrap(), &s.behavior);
        let centered: f64 = a.iter().zip(&s.behavior).map(|(a, p)| a * p).sum();
        assert!(centered.abs() < 1e-9);
    }
}

fn epoch_run(
    b: &RolloutBatch<Vec<[f64; LINEAR_FEATURES]>>,
    cfg: &PpoConfig,
    critic: &mut Vec<f64>,
) -> (Vec<f64>, midmile::training::EpochDiagnostics) {
    let mut actor = some_actor();
    let mut actor_opt = Optimizer::new(cfg.optimizer, cfg.actor_lr, LINEAR_FEATURES);
    let mut critic_opt = Optimizer::new(cfg.optimizer, cfg.critic_lr, LINEAR_FEATURES);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = ppo_epoch(&LinearModel::default(), &mut actor, critic, b, cfg, &mut actor_opt, &mut critic_opt, &mut rng)
        .unwrap();
    (actor, d)
}

#[test]
fn zero_advantages_leave_the_actor_alone() {
    let mut b = batch(30, &[6]);
    for s in b.samples.iter_mut() {
        s.reward = 0.0;
        s.return_to_go = 0.0;
    }
    for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let cfg = PpoConfig { optimizer, ..PpoConfig::linear() };
        let mut critic = vec![0.0; LINEAR_FEATURES];
        let (actor, d) = epoch_run(&b, &cfg, &mut critic);
        assert_eq!(actor, some_actor());
        assert_eq!(critic, vec![0.0; LINEAR_FEATURES]);
        assert_eq!(d.advantage_residual, 0.0);
    }
}

#[test]
fn first_actor_step_is_the_plain_policy_gradient() {
    let b = batch(20, &[7]);
    assert!(b.samples.len() <= 256);
    let mut ends = Vec::new();
    for epsilon in [0.0, 0.2] {
        let cfg = PpoConfig {
            epsilon,
            updates_per_epoch: 1,
            optimizer: OptimizerKind::Sgd,
            ..PpoConfig::linear()
        };
        let mut critic = vec![0.0; LINEAR_FEATURES];
        let (actor, d) = epoch_run(&b, &cfg, &mut critic);
        assert_eq!(d.actor_steps, 1);
        // Vanilla gradient of mean A * log pi with the critic the epoch fitted.
        let model = LinearModel::default();
        let n = b.samples.len() as f64;
        let mut grad = vec![0.0; LINEAR_FEATURES];
        for s in &b.samples {
            let adv = advantages(&model.scores(&critic, &s.repr).unwrap(), &s.behavior)[s.action];
            for k in 0..LINEAR_FEATURES {
                let mean: f64 = s.repr.iter().zip(&s.behavior).map(|(x, p)| p * x[k]).sum();
                grad[k] += adv * cfg.alpha * (s.repr[s.action][k] - mean) / n;
            }
        }
        for k in 0..LINEAR_FEATURES {
            let expected = some_actor()[k] + cfg.actor_lr * grad[k];
            assert!((actor[k] - expected).abs() < 1e-9, "feature {k}: {} vs {expected}", actor[k]);
        }
        ends.push(actor);
    }
    assert_eq!(ends[0], ends[1]);
}

#[test]
fn tight_kl_threshold_stops_the_actor_early() {
    let b = batch(200, &[8]);
    let cfg = PpoConfig {
        kl_threshold: 1e-4,
        ..PpoConfig::linear()
    };
    let mut critic = vec![0.0; LINEAR_FEATURES];
    let (_, d) = epoch_run(&b, &cfg, &mut critic);
    assert!(d.early_stopped);
    assert!(d.actor_steps >= 1 && d.actor_steps < cfg.updates_per_epoch);
    assert!(d.kl > 1e-4);
}

#[test]
fn learning_curve_has_one_row_per_epoch() {
    let cfg = PpoConfig {
        total_rollouts: 7,
        rollouts_per_epoch: 2,
        updates_per_epoch: 5,
        ..PpoConfig::linear()
    };
    let (params, out) = train_ppo_linear(&env(30), &cfg, 3).unwrap();
    assert_eq!(out.curve.len(), 4);
    assert_eq!(out.curve.iter().map(|r| r.rollouts_consumed).collect::<Vec<_>>(), vec![2, 4, 6, 7]);
    assert!(out.curve.iter().enumerate().all(|(i, r)| r.epoch == i));
    assert_eq!(params.alpha, 0.1);
    params.check().unwrap();

    let mut csv = Vec::new();
    write_curve(&out.curve, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,rollouts_consumed,mean_return,kl,actor_loss,critic_loss");
    assert_eq!(lines.count(), 4);

    let (again, _) = train_ppo_linear(&env(30), &cfg, 3).unwrap();
    assert_eq!(again, params);
}

#[test]
fn supervised_loss_starts_at_the_uniform_cross_entropy() {
    let cfg = SupervisedConfig {
        rollouts: 4,
        epochs: 2,
        ..SupervisedConfig::default()
    };
    let model = LinearModel::default();
    let environment = env(100);
    let out = train_supervised(&model, &environment, &cfg, vec![0.0; LINEAR_FEATURES], 1).unwrap();
    let seeds: Vec<u64> = (0..4).map(|i| midmile::config::derive_seed(1, i)).collect();
    let data = route_dataset(&model, &environment, &seeds).unwrap();
    assert_eq!(data.len(), out.samples);
    let uniform: f64 = data.iter().map(|(r, _)| (r.len() as f64).ln()).sum::<f64>() / data.len() as f64;
    assert!((out.initial_loss - uniform).abs() < 1e-9);
    // Concavity of ln: the uniform loss never exceeds ln(mean action count).
    let guess = out.mean_actions.ln();
    assert!(out.initial_loss <= guess + 1e-12, "initial loss {} vs ln(mean actions) {guess}", out.initial_loss);
    let after = cross_entropy(&model, &out.params, cfg.alpha, &data).unwrap();
    assert!(after < out.initial_loss);
    assert_eq!(out.epoch_losses.len(), 2);
}

#[test]
fn gnn_supervised_training_runs() {
    let cfg = SupervisedConfig {
        rollouts: 1,
        epochs: 1,
        k: 1,
        ..SupervisedConfig::default()
    };
    let model = GnnModel::new(1);
    let init = midmile::policies::GnnParams::init(model.shape, 1, 0).actor.data;
    let out = train_supervised(&model, &env(10), &cfg, init.clone(), 2).unwrap();
    assert!(out.samples > 0);
    assert_ne!(out.params, init);
    assert!(out.params.iter().all(|p| p.is_finite()));
}
