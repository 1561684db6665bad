//! QPBO instances, the exhaustive oracle, policies and REINFORCE.

use std::collections::BTreeMap;

use rand::Rng;
use sumo_core::autodiff::{Tape, Tensor};
use sumo_core::estimators::{parallel_draws, sumo};
use sumo_core::models::{GradTarget, LatentVariableModel, ParamGroup};
use sumo_core::qpbo::{
    reinforce_grad, AutoregressivePolicy, IndependentPolicy, LatentPolicy, Policy, QpboInstance,
    ReinforceConfig, ReinforceState,
};
use sumo_core::rng::stream;
use sumo_core::stats::{mean_se, MeanSe};
use sumo_core::training::{train_qpbo, ClipPolicy, OptimizerConfig, QpboTrainConfig};
use sumo_core::trunc::TruncationDistribution;

/// Written independently of the library: a plain double loop over the raw
/// tables.
fn naive_reward(inst: &QpboInstance, x: &[u8]) -> f64 {
    let mut r = 0.0;
    for i in 0..inst.dim() {
        r += inst.unary()[i][x[i] as usize];
        for j in i + 1..inst.dim() {
            if let Some(t) = inst.pairwise().get(&(i, j)) {
                r += t[x[i] as usize][x[j] as usize];
            }
        }
    }
    r
}

/// Second enumerator: counts through all masks, keeps the first maximum in
/// lexicographic order (x_0 most significant).
fn brute_force(inst: &QpboInstance) -> (Vec<u8>, f64) {
    let d = inst.dim();
    let mut best = (vec![0u8; d], f64::NEG_INFINITY);
    for mask in 0u64..(1 << d) {
        let x: Vec<u8> = (0..d).map(|i| ((mask >> (d - 1 - i)) & 1) as u8).collect();
        let r = naive_reward(inst, &x);
        if r > best.1 {
            best = (x, r);
        }
    }
    best
}

fn as_f64(x: &[u8]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

#[test]
fn reward_matches_naive_recomputation() {
    let inst = QpboInstance::random(10, 3);
    let mut rng = stream(3, 1);
    for _ in 0..100 {
        let x: Vec<u8> = (0..10).map(|_| rng.random_range(0..2)).collect();
        let r = inst.reward(&as_f64(&x)).unwrap();
        assert!((r - naive_reward(&inst, &x)).abs() <= 1e-12);
    }
}

#[test]
fn exact_max_agrees_with_an_independent_enumerator() {
    let inst = QpboInstance::random(16, 42);
    let (x, r) = inst.exact_max().unwrap();
    let (bx, br) = brute_force(&inst);
    // Equal up to summation order.
    assert!((r - br).abs() <= 1e-12, "{r} vs {br}");
    assert_eq!(x, as_f64(&bx));
}

#[test]
fn exact_max_is_invariant_to_variable_order() {
    let inst = QpboInstance::random(12, 8);
    let (x, r) = inst.exact_max().unwrap();
    // Reverse the variables: i ↦ d − 1 − i, swapping each pair's roles.
    let d = 12;
    let unary: Vec<[f64; 2]> = (0..d).map(|i| inst.unary()[d - 1 - i]).collect();
    let pairwise: BTreeMap<(usize, usize), [[f64; 2]; 2]> = inst
        .pairwise()
        .iter()
        .map(|(&(i, j), t)| ((d - 1 - j, d - 1 - i), [[t[0][0], t[1][0]], [t[0][1], t[1][1]]]))
        .collect();
    let rev = QpboInstance::new(d, unary, pairwise).unwrap();
    let (xr, rr) = rev.exact_max().unwrap();
    assert!((r - rr).abs() < 1e-12);
    let back: Vec<f64> = xr.iter().rev().copied().collect();
    assert!((inst.reward(&back).unwrap() - r).abs() < 1e-12);
    assert!((inst.reward(&x).unwrap() - r).abs() < 1e-12);
}

#[test]
fn policies_sample_valid_vectors() {
    let mut rng = stream(4, 0);
    let auto = AutoregressivePolicy::new(7, 10, &mut rng).unwrap();
    let latent = LatentPolicy::new(7, 3, vec![8], &mut rng).unwrap();
    let indep = IndependentPolicy::new(7);
    for _ in 0..50 {
        for x in [indep.sample(&mut rng).unwrap(), auto.sample(&mut rng).unwrap(), latent.sample(&mut rng).unwrap()] {
            assert_eq!(x.len(), 7);
            assert!(x.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}

/// Within 1% of 0.5; the standard error per coordinate is 0.0016 at 10^5
/// draws.
#[test]
fn zeroed_autoregressive_policy_has_fair_marginals() {
    let mut pol = AutoregressivePolicy::new(6, 8, &mut stream(5, 0)).unwrap();
    pol.zero();
    let xs = parallel_draws(5, 100_000, |rng, _| pol.sample(rng)).unwrap();
    for i in 0..6 {
        let m = xs.iter().map(|x| x[i]).sum::<f64>() / xs.len() as f64;
        assert!((m - 0.5).abs() <= 0.005, "coordinate {i}: {m}");
    }
}

fn zero_group(p: &mut impl Policy, prefix: &str) {
    for i in 0..p.params().len() {
        let param = p.params_mut().get_mut(i);
        if param.name.starts_with(prefix) {
            param.value = Tensor::zeros_like(&param.value);
        }
    }
}

#[test]
fn latent_policy_with_zeroed_decoder_estimates_uniform_log_prob() {
    let d = 6;
    let mut pol = LatentPolicy::new(d, 2, vec![5], &mut stream(6, 0)).unwrap();
    zero_group(&mut pol, "dec.");
    let x = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let dist = TruncationDistribution::default();
    let v = parallel_draws(6, 20_000, |rng, _| Ok(sumo(pol.vae(), &x, 1, &dist, rng)?.value)).unwrap();
    let s = mean_se(&v);
    assert!(s.within(d as f64 * 0.5f64.ln(), 3.0), "{s:?}");
}

/// Per-coordinate mean and standard error of the decoder gradient over
/// `batches` consecutive REINFORCE steps.
fn gradient_stats<P: Policy + Sync>(
    pol: &P,
    inst: &QpboInstance,
    cfg: &ReinforceConfig,
    batches: u64,
    seed: u64,
) -> Vec<MeanSe> {
    let mut state = ReinforceState::default();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for step in 0..batches {
        let out = reinforce_grad(pol, inst, cfg, &mut state, seed, step).unwrap();
        assert!(out.finite);
        rows.push(out.decoder.iter().flat_map(|t| t.data().to_vec()).collect());
    }
    (0..rows[0].len())
        .map(|j| mean_se(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

#[test]
fn constant_reward_gives_zero_gradient() {
    let d = 4;
    let inst = QpboInstance::new(d, vec![[2.5, 2.5]; d], BTreeMap::new()).unwrap();
    let cfg = ReinforceConfig {
        batch: 4,
        ..Default::default()
    };
    let mut rng = stream(7, 0);
    let mut indep = IndependentPolicy::new(d);
    indep.params_mut().get_mut(0).value = Tensor::row(vec![0.3, -1.0, 2.0, 0.0]);
    let auto = AutoregressivePolicy::new(d, 6, &mut rng).unwrap();
    let latent = LatentPolicy::new(d, 2, vec![4], &mut rng).unwrap();
    let checks: Vec<Vec<MeanSe>> = vec![
        gradient_stats(&indep, &inst, &cfg, 10_000, 1),
        gradient_stats(&auto, &inst, &cfg, 10_000, 2),
        gradient_stats(&latent, &inst, &cfg, 10_000, 3),
    ];
    for (which, stats) in checks.iter().enumerate() {
        for (j, s) in stats.iter().enumerate() {
            assert!(s.se == 0.0 && s.mean == 0.0 || s.within(0.0, 3.0), "policy {which}, coordinate {j}: {s:?}");
        }
    }
}

#[test]
fn single_variable_gradient_matches_bernoulli_formula() {
    let inst = QpboInstance::new(1, vec![[0.0, 1.0]], BTreeMap::new()).unwrap();
    let pol = IndependentPolicy::new(1);
    let cfg = ReinforceConfig {
        batch: 8,
        ..Default::default()
    };
    let s = &gradient_stats(&pol, &inst, &cfg, 10_000, 4)[0];
    assert!(s.within(0.25, 3.0), "{s:?}");
}

/// `∂E[R]/∂ℓ = Σ_x R(x) p(x) (x − σ(ℓ))` by enumeration.
fn analytic_logit_gradient(inst: &QpboInstance, logits: &[f64]) -> Vec<f64> {
    let d = logits.len();
    let p: Vec<f64> = logits.iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect();
    let mut g = vec![0.0; d];
    for mask in 0u32..(1 << d) {
        let x: Vec<f64> = (0..d).map(|i| ((mask >> i) & 1) as f64).collect();
        let px: f64 = x.iter().zip(&p).map(|(&xi, &pi)| if xi == 1.0 { pi } else { 1.0 - pi }).product();
        let r = inst.reward(&x).unwrap();
        for i in 0..d {
            g[i] += r * px * (x[i] - p[i]);
        }
    }
    g
}

#[test]
fn latent_policy_reduces_to_the_bernoulli_case() {
    let d = 3;
    let inst = QpboInstance::random(d, 11);
    let logits = [0.4, -0.7, 1.1];
    let want = analytic_logit_gradient(&inst, &logits);

    let mut indep = IndependentPolicy::new(d);
    indep.params_mut().get_mut(0).value = Tensor::row(logits.to_vec());
    let cfg = ReinforceConfig {
        batch: 8,
        ..Default::default()
    };
    let ind = gradient_stats(&indep, &inst, &cfg, 5_000, 5);

    // A single affine decoder layer with zero weights on z: logits = bias.
    let mut latent = LatentPolicy::new(d, 2, vec![], &mut stream(12, 0)).unwrap();
    latent.params_mut().by_name_mut("dec.0.w").unwrap().value = Tensor::zeros(&[2, d]);
    latent.params_mut().by_name_mut("dec.0.b").unwrap().value = Tensor::row(logits.to_vec());
    let lat = gradient_stats(&latent, &inst, &cfg, 5_000, 6);
    let bias_offset = {
        let names: Vec<&str> = latent
            .params()
            .indices(ParamGroup::Decoder)
            .into_iter()
            .map(|i| latent.params().get(i).name.as_str())
            .collect();
        assert_eq!(names, ["dec.0.w", "dec.0.b"]);
        2 * d
    };
    for i in 0..d {
        assert!(ind[i].within(want[i], 3.0), "independent {i}: {:?} vs {}", ind[i], want[i]);
        let s = &lat[bias_offset + i];
        assert!(s.within(want[i], 3.0), "latent {i}: {s:?} vs {}", want[i]);
    }
}

/// Reusing the score draw for the entropy term correlates the two factors
/// and shifts the gradient by roughly `−λ Cov(SUMO, ∇θ SUMO)`. The shift is
/// small on each coordinate, so the check aggregates `Σ z²/n` over all
/// decoder coordinates and compares it with two independent unbiased runs.
#[test]
fn shared_entropy_draw_is_biased() {
    let d = 8;
    let inst = QpboInstance::random(d, 13);
    let mut pol = LatentPolicy::new(d, 2, vec![6], &mut stream(13, 0)).unwrap();
    // A poor proposal and a sharp decoder inflate the estimator's variance
    // and so the bias.
    for i in pol.params().indices(ParamGroup::Encoder) {
        let p = pol.params_mut().get_mut(i);
        if p.name.ends_with(".b") {
            let n = p.value.numel();
            p.value = Tensor::row((0..n).map(|k| if k < n / 2 { 1.5 } else { -1.0 }).collect());
        }
    }
    for i in pol.params().indices(ParamGroup::Decoder) {
        let p = pol.params_mut().get_mut(i);
        if p.name.ends_with(".w") {
            p.value = p.value.map(|v| 3.0 * v);
        }
    }
    let base = ReinforceConfig {
        batch: 8,
        lambda: 1.0,
        m: 1,
        ..Default::default()
    };
    let shared = ReinforceConfig {
        share_entropy_draw: true,
        ..base.clone()
    };
    let chi2 = |a: &[MeanSe], b: &[MeanSe]| {
        let s: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x.mean - y.mean).powi(2) / (x.se.powi(2) + y.se.powi(2)))
            .sum();
        s / a.len() as f64
    };
    let reference = gradient_stats(&pol, &inst, &base, 2_000, 1);
    let control = chi2(&reference, &gradient_stats(&pol, &inst, &base, 2_000, 2));
    let biased = chi2(&reference, &gradient_stats(&pol, &inst, &shared, 2_000, 2));
    assert!(control < 1.8, "unbiased runs disagree: Σz²/n = {control}");
    assert!(biased > 2.5, "shared draw not detected: Σz²/n = {biased}");
}

fn policy_cfg(lr: f64, lambda: f64, batch: usize, steps: u64) -> QpboTrainConfig {
    QpboTrainConfig {
        reinforce: ReinforceConfig {
            batch,
            lambda,
            ..Default::default()
        },
        optimizer: OptimizerConfig {
            lr,
            ..OptimizerConfig::policy()
        },
        clip: ClipPolicy::disabled(),
        steps,
        seed: 21,
    }
}

#[test]
fn one_variable_bandit_converges() {
    let inst = QpboInstance::new(1, vec![[0.0, 1.0]], BTreeMap::new()).unwrap();
    let mut pol = IndependentPolicy::new(1);
    train_qpbo(&mut pol, &inst, &policy_cfg(0.05, 0.0, 8, 500)).unwrap();
    assert!(pol.probabilities()[0] > 0.99, "{:?}", pol.probabilities());
}

#[test]
fn strong_entropy_keeps_marginals_moderate() {
    let inst = QpboInstance::random(16, 42);
    let mut pol = IndependentPolicy::new(16);
    train_qpbo(&mut pol, &inst, &policy_cfg(0.01, 10.0, 16, 2000)).unwrap();
    for p in pol.probabilities() {
        assert!((0.2..=0.8).contains(&p), "{:?}", pol.probabilities());
    }
}

#[test]
fn greedy_decode_never_beats_the_oracle() {
    for (d, seed) in [(6, 1), (10, 2), (16, 42)] {
        let inst = QpboInstance::random(d, seed);
        let (_, r_star) = inst.exact_max().unwrap();
        let mut pol = IndependentPolicy::new(d);
        let r = train_qpbo(&mut pol, &inst, &policy_cfg(0.02, 0.01, 16, 1000)).unwrap();
        let greedy = inst.reward(&pol.greedy()).unwrap();
        assert!(greedy <= r_star + 1e-12);
        let best = r.trace.rows.last().unwrap().best_reward.unwrap();
        assert!(best <= r_star + 1e-12);
    }
}

#[test]
fn instance_files_round_trip() {
    let inst = QpboInstance::random(9, 77);
    let dir = tempdir();
    let path = dir.join("instance.json");
    inst.save(&path).unwrap();
    assert_eq!(QpboInstance::load(&path).unwrap(), inst);
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("sumo-qpbo-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn latent_policy_log_prob_is_left_to_sumo() {
    let pol = LatentPolicy::new(3, 2, vec![4], &mut stream(1, 0)).unwrap();
    let tape = Tape::new();
    let p = pol.params().bind(&tape, GradTarget::None);
    let x = tape.constant(Tensor::row(vec![1.0, 0.0, 1.0]));
    assert!(pol.log_prob(&p, x).unwrap().is_none());
    assert_eq!(pol.latent().unwrap().data_dim(), 3);
}
