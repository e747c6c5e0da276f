use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use midmile::config::EnvConfig;
use midmile::dynamics::{run_episode, Environment};
use midmile::features::LINEAR_FEATURES;
use midmile::gnn::GraphNetShape;
use midmile::graph::EdgeId;
use midmile::policies::{
    greedy_policy, linear_distribution, linear_policy, linear_q, random_policy, softmax, Decision, GnnParams,
    GreedyPolicy, LinearParams, Policy, PolicyParams, RandomPolicy,
};
use midmile::Result;

#[test]
fn random_choice_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let actions = [EdgeId(0), EdgeId(2), EdgeId(4), EdgeId(6)];
    let n = 10_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[random_policy(&actions, &mut rng).unwrap()] += 1;
    }
    let sigma = (n as f64 * 0.25 * 0.75).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * 0.25).abs() < 3.0 * sigma, "{counts:?}");
    }
    assert_eq!(random_policy(&[EdgeId(8)], &mut rng).unwrap(), 0);
    assert!(random_policy(&[], &mut rng).is_err());

    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| random_policy(&actions, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
}

/// Wraps a policy and checks every answer indexes the offered actions.
struct Closure<P> {
    inner: P,
    decisions: usize,
    greedy_repeat: bool,
}

impl<P: Policy> Policy for Closure<P> {
    fn choose(&mut self, d: &Decision<'_>, rng: &mut dyn RngCore) -> Result<usize> {
        let i = self.inner.choose(d, rng)?;
        assert!(i < d.actions.len());
        if self.greedy_repeat {
            let again = greedy_policy(d.state, d.parcel, d.actions, d.resistance)?;
            assert_eq!(again, i);
            let scaled = d.resistance.scaled(3.7);
            assert_eq!(greedy_policy(d.state, d.parcel, d.actions, &scaled)?, i);
            let chosen = d.state.edge(d.actions[i]).unwrap();
            if d.actions
                .iter()
                .any(|&a| d.state.edge(a).unwrap().receiver.hub == d.parcel.goal.hub)
            {
                assert_eq!(chosen.receiver.hub, d.parcel.goal.hub);
            }
            let best = d.resistance.get(chosen.receiver.hub, d.parcel.goal.hub);
            for &a in d.actions.iter() {
                let e = d.state.edge(a).unwrap();
                assert!(d.resistance.get(e.receiver.hub, d.parcel.goal.hub) >= best);
            }
        }
        self.decisions += 1;
        Ok(i)
    }
}

#[test]
fn policies_pick_offered_actions() {
    let gnn = GnnParams::init(GraphNetShape::default(), 2, 9);
    let learned: Vec<Box<dyn Policy + Send>> = vec![
        PolicyParams::Linear(LinearParams {
            theta: (0..LINEAR_FEATURES).map(|i| i as f64 - 6.0).collect(),
            ..LinearParams::default()
        })
        .policy(true),
        PolicyParams::Gnn(gnn).policy(false),
    ];
    for seed in 0..3 {
        let cfg = EnvConfig::default().with_parcels(30).with_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Environment::reset(&cfg).unwrap();
        let mut p = Closure { inner: RandomPolicy, decisions: 0, greedy_repeat: false };
        run_episode(&mut env, &mut p, &mut rng).unwrap();
        assert!(p.decisions > 0);
        let mut env = Environment::reset(&cfg).unwrap();
        let mut p = Closure { inner: GreedyPolicy, decisions: 0, greedy_repeat: true };
        run_episode(&mut env, &mut p, &mut rng).unwrap();
        assert!(p.decisions > 0);
    }
    for inner in learned {
        let cfg = EnvConfig::default().with_parcels(20).with_seed(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut env = Environment::reset(&cfg).unwrap();
        let mut p = Closure { inner, decisions: 0, greedy_repeat: false };
        run_episode(&mut env, &mut p, &mut rng).unwrap();
        assert!(p.decisions > 0);
    }
}

#[test]
fn linear_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<[f64; LINEAR_FEATURES]> = (0..5)
        .map(|a| std::array::from_fn(|i| ((a * 7 + i * 3) % 11) as f64 - 5.0))
        .collect();

    let zero = LinearParams::default();
    assert!(linear_distribution(&zero, &xs).iter().all(|&p| p == 0.2));

    let theta: Vec<f64> = (0..LINEAR_FEATURES).map(|i| (i as f64).sin() * 4.0).collect();
    let cold = LinearParams { theta: theta.clone(), alpha: 1e-12, ..LinearParams::default() };
    assert!(linear_distribution(&cold, &xs).iter().all(|&p| (p - 0.2).abs() < 1e-9));

    let hot = LinearParams { theta, alpha: 0.7, ..LinearParams::default() };
    let (i, p, probs) = linear_policy(&hot, &xs, &mut rng).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(p, probs[i]);
    assert!(probs.windows(2).any(|w| w[0] != w[1]));
    assert!(linear_policy(&hot, &[], &mut rng).is_err());

    for k in 0..LINEAR_FEATURES {
        let mut e = [0.0; LINEAR_FEATURES];
        e[k] = 1.0;
        assert_eq!(linear_q(&zero, &e), 0.0);
        let phi: Vec<f64> = (0..LINEAR_FEATURES).map(|i| i as f64 * 0.5 - 1.0).collect();
        let params = LinearParams { phi: phi.clone(), ..LinearParams::default() };
        assert_eq!(linear_q(&params, &e), phi[k]);
    }
}

#[test]
fn softmax_ignores_constant_shifts() {
    let scores = [1.5, -2.0, 0.25, 7.0];
    let base = softmax(&scores, 0.3);
    for shift in [-100.0, -1.0, 3.0, 250.0] {
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        for (a, b) in base.iter().zip(softmax(&shifted, 0.3)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn greedy_takes_the_closest_destination() {
    let cfg = EnvConfig::default().with_seed(3);
    let env = Environment::reset(&cfg).unwrap();
    let state = env.state();
    let mut checked = 0;
    for p in state.live_parcels() {
        let actions = midmile::dynamics::get_actions(state, p.id, false).unwrap();
        if actions.len() < 2 {
            continue;
        }
        let i = greedy_policy(state, p, &actions, env.resistance()).unwrap();
        let dist = |a: EdgeId| env.resistance().get(state.edge(a).unwrap().receiver.hub, p.goal.hub);
        let min = actions.iter().map(|&a| dist(a)).fold(f64::INFINITY, f64::min);
        assert_eq!(dist(actions[i]), min);
        let lowest_tied = actions.iter().filter(|&&a| dist(a) == min).min().unwrap();
        assert_eq!(actions[i], *lowest_tied);
        checked += 1;
    }
    assert!(checked > 10);
    assert!(greedy_policy(state, state.live_parcels().next().unwrap(), &[], env.resistance()).is_err());
}

#[test]
fn parameter_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let linear = PolicyParams::Linear(LinearParams {
        theta: (0..LINEAR_FEATURES).map(|i| 0.1 * i as f64 + 1e-17).collect(),
        phi: (0..LINEAR_FEATURES).map(|i| -(i as f64) / 3.0).collect(),
        alpha: 0.1,
    });
    let gnn = PolicyParams::Gnn(GnnParams::init(GraphNetShape::default(), 2, 77));
    for (name, params) in [("linear.json", linear), ("gnn.json", gnn)] {
        let path = dir.path().join(name);
        params.save(&path).unwrap();
        let back = PolicyParams::load(&path).unwrap();
        assert_eq!(back, params);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("midmile-linear-v1") || text.contains("midmile-gnn-v1"));
    }
    assert!(PolicyParams::from_json("{\"format\": \"midmile-linear-v1\", \"theta\": [1.0]}").is_err());
    assert!(PolicyParams::from_json("{\"format\": \"other\"}").is_err());
}
