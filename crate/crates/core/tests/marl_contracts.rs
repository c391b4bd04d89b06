//! Environment accounting, regularizer invariants, mixer monotonicity and
//! the coverage statistic against brute force.

use eaq::marl::{
    bcq_admissible, coverage_statistic, cql_penalty, generate_offline_dataset, train_offline, BehaviorQuality,
    EnvConfig, FocusFireEnv, LearnerConfig, Regularizer, ATTACK_OFFSET,
};
use eaq::rad::{rad_augment, rad_upsample, RadConfig, RadMode};
use eaq::{seed, Episode, Source};
use proptest::prelude::*;
use rand::Rng;

fn brute_force_coverage(reference: &[Episode], candidate: &[Episode]) -> f64 {
    let refs: Vec<&Vec<f64>> = reference.iter().flat_map(|e| e.obs.iter().flatten()).collect();
    let cands: Vec<&Vec<f64>> = candidate.iter().flat_map(|e| e.obs.iter().flatten()).collect();
    let total: f64 = cands
        .iter()
        .map(|c| {
            refs.iter()
                .map(|r| r.iter().zip(c.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / cands.len() as f64
}

fn small_episodes(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Episode> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(1..5);
            Episode {
                num_agents: 2,
                obs: (0..len)
                    .map(|_| (0..2).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
                    .collect(),
                actions: vec![vec![0, 0]; len],
                rewards: vec![0.0; len],
                rtg: None,
                source: None,
            }
        })
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn cql_penalty_is_non_negative_on_random_inputs() {
    let mut rng = seed::rng(101);
    for _ in 0..10_000 {
        let n = rng.random_range(1..12);
        let scale = 10f64.powi(rng.random_range(-2..4));
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let a = rng.random_range(0..n);
        assert!(cql_penalty(&q, a).unwrap() >= 0.0);
    }
}

#[test]
fn bcq_argmax_is_always_admissible() {
    let mut rng = seed::rng(102);
    for _ in 0..10_000 {
        let n = rng.random_range(1..12);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let p = softmax(&logits);
        let threshold = rng.random_range(0.0..=1.0);
        let mask = bcq_admissible(&p, threshold).unwrap();
        let best = (0..n).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert!(mask[best]);
    }
}

#[test]
fn mixer_is_monotone_in_every_utility() {
    let env = EnvConfig::default();
    let data = generate_offline_dataset(&env, BehaviorQuality::Medium, 20, 0.99, 3).unwrap();
    let (learner, _) = train_offline(&LearnerConfig::default(), &env, &data, 300, 3).unwrap();
    let mut rng = seed::rng(103);
    let state_dim = env.num_allies * env.obs_dim();
    let h = 1e-2;
    for _ in 0..100 {
        let q: Vec<f64> = (0..env.num_allies).map(|_| rng.random_range(-20.0..20.0)).collect();
        let state: Vec<f64> = (0..state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = learner.mix(&q, &state).unwrap();
        for i in 0..env.num_allies {
            let mut up = q.clone();
            up[i] += h;
            let slope = (learner.mix(&up, &state).unwrap() - base) / h;
            assert!(slope >= -1e-6, "d Q_tot / d q_{i} = {slope}");
        }
    }
}

#[test]
fn learner_loss_decreases() {
    let env = EnvConfig::default();
    let data = generate_offline_dataset(&env, BehaviorQuality::Medium, 40, 0.99, 4).unwrap();
    for reg in [Regularizer::Cql { weight: 1.0 }, Regularizer::Bcq { threshold: 0.3 }] {
        let cfg = LearnerConfig { regularizer: reg, ..Default::default() };
        let (_, log) = train_offline(&cfg, &env, &data, 1500, 4).unwrap();
        let median = |xs: &[f64]| {
            let mut v = xs.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let d = log.losses.len() / 10;
        let first = median(&log.losses[..d]);
        let last = median(&log.losses[log.losses.len() - d..]);
        assert!(last < first, "{}: first decile {first}, last decile {last}", reg.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn env_rewards_account_for_damage_kills_and_victory(seed in any::<u64>()) {
        let cfg = EnvConfig::default();
        let mut rng = seed::rng(seed);
        let mut env = FocusFireEnv::new(cfg.clone(), &mut rng).unwrap();
        let mut total_kills = 0;
        let mut total = 0.0;
        let mut steps = 0;
        while !env.is_done() {
            let actions: Vec<usize> = (0..cfg.num_allies).map(|_| rng.random_range(0..cfg.num_actions())).collect();
            let before: Vec<u32> = env.enemies().iter().map(|e| e.hp).collect();
            let out = env.step(&actions).unwrap();
            let after: Vec<u32> = env.enemies().iter().map(|e| e.hp).collect();
            let damage: u32 = before.iter().zip(&after).map(|(b, a)| b - a).sum();
            let kills = before.iter().zip(&after).filter(|(b, a)| **b > 0 && **a == 0).count() as u32;
            prop_assert_eq!(out.damage, damage);
            prop_assert_eq!(out.kills, kills);
            let survivors = env.allies().iter().filter(|u| u.alive()).count() as f64;
            let bonus = if out.victory { 20.0 * survivors / cfg.num_allies as f64 } else { 0.0 };
            let want = 0.1 * f64::from(damage) + f64::from(kills) + bonus;
            prop_assert!((out.reward - want).abs() < 1e-12);
            for (i, &a) in out.actions.iter().enumerate() {
                prop_assert!(a < cfg.num_actions());
                if a != actions[i] {
                    prop_assert_eq!(a, 0);
                }
            }
            total_kills += kills;
            total += out.reward;
            steps += 1;
        }
        prop_assert!(steps <= cfg.episode_limit);
        prop_assert!(total_kills as usize <= cfg.num_enemies);
        prop_assert!(total <= cfg.max_return() + 1e-9);
    }

    #[test]
    fn env_is_deterministic_under_a_seed(seed in any::<u64>()) {
        let cfg = EnvConfig::default();
        let a = generate_offline_dataset(&cfg, BehaviorQuality::Poor, 3, 0.99, seed).unwrap();
        let b = generate_offline_dataset(&cfg, BehaviorQuality::Poor, 3, 0.99, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn attack_ids_map_to_enemies(action in 0usize..20) {
        let cfg = EnvConfig::default();
        let want = (ATTACK_OFFSET..cfg.num_actions()).contains(&action).then(|| action - ATTACK_OFFSET);
        prop_assert_eq!(cfg.attack_target(action), want);
    }

    #[test]
    fn cql_penalty_is_shift_invariant(
        q in prop::collection::vec(-50.0f64..50.0, 1..10),
        shift in -100.0f64..100.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let a = pick.index(q.len());
        let base = cql_penalty(&q, a).unwrap();
        prop_assert!(base >= 0.0);
        let moved: Vec<f64> = q.iter().map(|v| v + shift).collect();
        prop_assert!((cql_penalty(&moved, a).unwrap() - base).abs() < 1e-9);
        prop_assert!(cql_penalty(&q, q.len()).is_err());
    }

    #[test]
    fn bcq_threshold_zero_admits_all_and_one_admits_only_maxima(
        logits in prop::collection::vec(-5.0f64..5.0, 1..10),
    ) {
        let p = softmax(&logits);
        prop_assert!(bcq_admissible(&p, 0.0).unwrap().iter().all(|&m| m));
        let max = p.iter().copied().fold(0.0, f64::max);
        let only = bcq_admissible(&p, 1.0).unwrap();
        for (m, v) in only.iter().zip(&p) {
            prop_assert_eq!(*m, *v == max);
        }
    }

    #[test]
    fn coverage_matches_brute_force(seed in any::<u64>(), dim in 1usize..5) {
        let mut rng = seed::rng(seed);
        let reference = small_episodes(&mut rng, 6, dim);
        let candidate = small_episodes(&mut rng, 4, dim);
        let fast = coverage_statistic(&reference, &candidate).unwrap();
        let slow = brute_force_coverage(&reference, &candidate);
        prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
    }

    #[test]
    fn rad_scales_within_bounds(
        seed in any::<u64>(),
        alpha in 0.1f64..1.0,
        width in 0.0f64..1.0,
        multi in any::<bool>(),
    ) {
        let mut rng = seed::rng(seed);
        let eps: Vec<Episode> = small_episodes(&mut rng, 3, 3)
            .into_iter()
            .map(|mut e| {
                e.obs.iter_mut().flatten().flatten().for_each(|v| *v = v.abs() + 0.5);
                e
            })
            .collect();
        let cfg = RadConfig {
            alpha,
            beta: alpha + width,
            mode: if multi { RadMode::Multi } else { RadMode::Single },
            seed,
        };
        let out = rad_augment(&eps, &cfg).unwrap();
        for (a, b) in out.iter().zip(&eps) {
            prop_assert_eq!(&a.actions, &b.actions);
            prop_assert_eq!(&a.rewards, &b.rewards);
            for (x, y) in a.obs.iter().flatten().flatten().zip(b.obs.iter().flatten().flatten()) {
                let z = x / y;
                prop_assert!(z >= cfg.alpha - 1e-12 && z <= cfg.beta + 1e-12);
            }
        }
        let up = rad_upsample(&eps, &cfg, 3).unwrap();
        prop_assert_eq!(up.len(), 4 * eps.len());
        prop_assert!(up[..eps.len()].iter().all(|e| e.source == Some(Source::Real)));
    }
}
