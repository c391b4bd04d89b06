//! Noise schedule statistics, guided-loss gradients and sampler behavior.

use candle_core::{Device, Tensor, Var};
use eaq::diffusion::{guided_loss_tensor, guided_objective, train, DenoiserConfig, QMap};
use eaq::episode::tensorize;
use eaq::marl::{generate_offline_dataset, BehaviorQuality, EnvConfig};
use eaq::sampler::{augment, sample_trajectories};
use eaq::{seed, ChannelLayout, NoiseSchedule, TrainConfig};
use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn three_step_alpha_bars_are_exact() {
    let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
    assert_eq!(s.alpha_bar(1), 0.9);
    assert!((s.alpha_bar(2) - 0.9 * 0.8).abs() < 1e-15);
    assert!((s.alpha_bar(3) - 0.9 * 0.8 * 0.7).abs() < 1e-15);
}

#[test]
fn forward_noise_moments_match_closed_form() {
    let s = NoiseSchedule::default();
    let tau0 = [0.8, -0.3, 0.0];
    let n = 10_000;
    let mut rng = seed::rng(17);
    for k in [1, 10, 250, 1000] {
        let ab = s.alpha_bar(k);
        let var = 1.0 - ab;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let x = s.forward_noise(&tau0, k, &eps).unwrap();
            for d in 0..3 {
                sums[d] += x[d];
                sq[d] += x[d] * x[d];
            }
        }
        for d in 0..3 {
            let mean = sums[d] / n as f64;
            let emp_var = sq[d] / n as f64 - mean * mean;
            let want_mean = ab.sqrt() * tau0[d];
            let se_mean = (var / n as f64).sqrt();
            // Var of the sample variance of a Gaussian is 2σ⁴/(n-1).
            let se_var = var * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean - want_mean).abs() < 3.0 * se_mean, "k={k} d={d} mean {mean} vs {want_mean}");
            assert!((emp_var - var).abs() < 3.0 * se_var, "k={k} d={d} var {emp_var} vs {var}");
        }
    }
}

/// Random instance whose hinge gaps are bounded away from the kink.
fn instance(rng: &mut impl Rng, l: &ChannelLayout, b: usize) -> (Array3<f64>, Array3<f64>, Vec<usize>) {
    let (f, t) = (l.num_features(), l.t_max);
    loop {
        let targets = Array3::from_shape_fn((b, f, t), |_| rng.random_range(-1.0..1.0));
        let preds = Array3::from_shape_fn((b, f, t), |_| rng.random_range(-1.0..1.0));
        let lengths: Vec<usize> = (0..b).map(|_| rng.random_range(1..=t)).collect();
        let q = |a: &Array3<f64>, i: usize| {
            eaq::diffusion::q_channel_mean(a.slice(ndarray::s![i, .., ..]), l, lengths[i]).unwrap()
        };
        let q_max = (0..b).map(|i| q(&targets, i)).fold(f64::NEG_INFINITY, f64::max);
        if (0..b).all(|i| (q_max - q(&preds, i)).abs() > 1e-3) {
            return (targets, preds, lengths);
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = seed::rng(5);
    let dev = Device::Cpu;
    let h = 1e-6;
    for (agents, obs, acts, t_max) in [(1, 1, 2, 4), (1, 2, 3, 6), (2, 1, 1, 5), (1, 3, 2, 3)] {
        let l = ChannelLayout::new(agents, obs, acts, t_max).unwrap();
        assert!(l.num_features() <= 8 && l.t_max <= 6);
        for (lambda, qmap) in [(0.1, QMap::IDENTITY), (0.5, QMap { scale: 2.5, offset: -0.4 })] {
            let b = 3;
            let (targets, preds, lengths) = instance(&mut rng, &l, b);
            let shape = preds.dim();
            let to_t = |a: &Array3<f64>| {
                Tensor::from_iter(a.iter().copied(), &dev).unwrap().reshape(shape).unwrap()
            };
            let p = Var::from_tensor(&to_t(&preds)).unwrap();
            let (loss, _) = guided_loss_tensor(&to_t(&targets), p.as_tensor(), &lengths, &l, lambda, qmap).unwrap();
            let grads = loss.backward().unwrap();
            let autograd: Vec<f64> = grads.get(p.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();

            for (idx, g) in autograd.iter().enumerate() {
                let mut plus = preds.clone();
                let mut minus = preds.clone();
                plus.as_slice_mut().unwrap()[idx] += h;
                minus.as_slice_mut().unwrap()[idx] -= h;
                let f = |x: &Array3<f64>| {
                    guided_objective(targets.view(), x.view(), &lengths, &l, lambda, qmap).unwrap().0.total
                };
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let scale = fd.abs().max(g.abs()).max(1e-3);
                assert!((fd - g).abs() / scale < 1e-4, "entry {idx}: autograd {g} vs fd {fd}");
            }
        }
    }
}

fn tiny_denoiser() -> DenoiserConfig {
    DenoiserConfig {
        base_width: 8,
        width_mults: vec![1, 2],
        kernel_size: 3,
        groups: 4,
        step_embed_dim: 16,
    }
}

fn toy_dataset(episodes: usize) -> (Vec<eaq::Episode>, eaq::TensorizedDataset) {
    let env = EnvConfig::default();
    let eps = generate_offline_dataset(&env, BehaviorQuality::Medium, episodes, 0.99, 8).unwrap();
    let ds = tensorize(&eps, &env.layout().unwrap()).unwrap();
    (eps, ds)
}

#[test]
fn training_loss_decreases() {
    let (_, ds) = toy_dataset(16);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 16,
        learning_rate: 1e-3,
        denoiser: tiny_denoiser(),
        ..Default::default()
    }
    .with_steps(20);
    let (_, log) = train(&ds, &cfg).unwrap();
    let median = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let decile = log.step_losses.len() / 10;
    let first = median(&log.step_losses[..decile]);
    let last = median(&log.step_losses[log.step_losses.len() - decile..]);
    assert!(last < first, "first decile {first}, last decile {last}");
}

#[test]
fn sampling_is_seeded_and_bounded() {
    let (eps, ds) = toy_dataset(4);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        denoiser: tiny_denoiser(),
        ..Default::default()
    }
    .with_steps(10);
    let (model, _) = train(&ds, &cfg).unwrap();
    let a = sample_trajectories(&model, 3, 42).unwrap();
    assert_eq!(a, sample_trajectories(&model, 3, 42).unwrap());
    assert_ne!(a, sample_trajectories(&model, 3, 43).unwrap());
    // At k = 1 the posterior mean reduces to the clipped prediction.
    for m in &a {
        assert_eq!(m.dim(), (ds.layout.num_features(), ds.layout.t_max));
        assert!(m.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-5));
    }

    let aug = augment(&eps, &model, 2, 1).unwrap();
    assert_eq!(aug.len(), 3 * eps.len());
    assert_eq!(&aug[..eps.len()], &eps[..]);
    for ep in &aug[eps.len()..] {
        ep.validate(ds.layout.obs_dim, ds.layout.num_actions).unwrap();
        assert!(ep.rtg.is_some());
    }
}
