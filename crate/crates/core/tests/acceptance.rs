//! One pass/fail line per acceptance criterion. Lines go straight to stderr
//! so they show up even when the harness captures test output.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use aikae::assimilation::{forecast_at, AssimilationProblem, AssimilationSettings, Constraint, Observation};
use aikae::data::{
    baseline_persistence, eval_windows, gen_linear, load_csv, metrics, quadratic_trajectory, random_stable_matrix,
    windows, Batch, LinearBaseline, SampleSet, SeriesDataset, Split, SplitLengths,
};
use aikae::flows::InvertibleEncoder;
use aikae::models::{delay_embed, AikaeModel, LatentState, ModelConfig, Variant};
use aikae::nn::Init;
use aikae::numerics::{lstsq_koopman, GradcheckOptions, ParamSet, Rng, Tensor};
use aikae::training::{
    gradcheck_loss, jitter_params, loss_linearity, loss_value_and_grad, train, LossTerm, LossWeights, OrthMode,
    TrainConfig,
};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id} [{verdict}] {name}: {detail}\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

#[test]
fn c1_exact_invertibility() {
    let t0 = Instant::now();
    let mut rng = Rng::new(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = if rng.below(2) == 0 { 20 } else { 96 };
        let k = rng.below(7);
        let w = 1 + rng.below(256);
        let mut params = ParamSet::new();
        let enc = InvertibleEncoder::new(&mut params, "phi", n, k, w, Init::Uniform, &mut rng).unwrap();
        let x = rng.normal_tensor(&[n], 1.0);
        let back = enc.inverse(&params, &enc.forward(&params, &x).unwrap()).unwrap();
        worst = worst.max(back.max_abs_diff(&x));
    }
    let secs = t0.elapsed().as_secs_f64();
    report(1, "exact invertibility", worst <= 1e-9 && secs < 30.0, format!("max err {worst:.2e} in {secs:.1}s"));
}

#[test]
fn c2_gradient_correctness() {
    let t0 = Instant::now();
    let mut rng = Rng::new(2);
    let batch = Batch {
        x: rng.normal_tensor(&[4, 20], 1.0),
        futures: (0..3).map(|_| rng.normal_tensor(&[4, 20], 1.0)).collect(),
    };
    let opts = GradcheckOptions::default();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for variant in [Variant::Aikae, Variant::Ikae, Variant::IkaeZp, Variant::Kae] {
        for revin in [false, true] {
            let mut cfg = ModelConfig::new(variant, 20, 8).with_flow(2, 32).with_chi_hidden(vec![32]).with_revin(revin);
            cfg.kae_hidden = vec![32];
            let mut m = AikaeModel::new(cfg, 3).unwrap();
            let d = m.d();
            m.set_koopman(Tensor::eye(d).add(&rng.normal_tensor(&[d, d], 0.1)).unwrap()).unwrap();
            jitter_params(&mut m, 0.05, 4);
            for term in LossTerm::ALL {
                if term == LossTerm::Reconstruction && variant != Variant::Kae {
                    continue;
                }
                for orth in [OrthMode::KtK, OrthMode::NormDrift] {
                    if orth == OrthMode::NormDrift && term != LossTerm::Orthogonality {
                        continue;
                    }
                    let r = gradcheck_loss(&m, &batch, term, &LossWeights::default(), orth, &opts, None).unwrap();
                    checked += 1;
                    if r.max_rel_error > worst.0 {
                        worst = (r.max_rel_error, format!("{variant} revin={revin} {term} {orth:?} at {:?}", r.worst));
                    }
                }
            }
            if !revin {
                let obs = [0usize, 1, 3, 6]
                    .iter()
                    .map(|&t| Observation::new(t, rng.normal_tensor(&[20], 0.5)))
                    .collect();
                let p = AssimilationProblem::new(&m, obs, Constraint::None, AssimilationSettings::default()).unwrap();
                let z0 = LatentState::new(rng.normal_tensor(&[d], 0.5), 20);
                let r = p.gradcheck_cost(&z0, &opts).unwrap();
                checked += 1;
                if r.max_rel_error > worst.0 {
                    worst = (r.max_rel_error, format!("{variant} assimilation cost"));
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        2,
        "gradient correctness",
        worst.0 <= 1e-4 && secs < 120.0,
        format!("{checked} checks, worst rel err {:.2e} ({}) in {secs:.1}s", worst.0, worst.1),
    );
}

#[test]
fn c3_dmd_equivalence() {
    let (t_l, t_p) = (16, 16);
    let mut rng = Rng::new(5);
    let a = random_stable_matrix(24, 0.6, 0.98, &mut rng);
    let x0: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
    let sys = gen_linear(&a, &x0, 600, 0.05, 6).unwrap();
    let series = sys.channel(0, 0..sys.len());
    let ds = SeriesDataset::new(
        "linear",
        vec!["x0".into()],
        Tensor::matrix(series.len(), 1, series.clone()).unwrap(),
        SplitLengths::new(series.len(), 0, 0),
    )
    .unwrap();
    let baseline = LinearBaseline::fit(&windows(&ds, Split::Train, t_l, t_p, 1)).unwrap();

    // delay-embedded snapshot pairs shifted by one block
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    let mut pairs = 0;
    for s in 0..=series.len() - t_l - t_p {
        let blocks = delay_embed(&series[s..s + t_l + t_p], t_l);
        gx.extend_from_slice(blocks[0].data());
        gy.extend_from_slice(blocks[1].data());
        pairs += 1;
    }
    let gx = Tensor::matrix(pairs, t_l, gx).unwrap().transpose();
    let gy = Tensor::matrix(pairs, t_l, gy).unwrap().transpose();
    let k = lstsq_koopman(&gx, &gy).unwrap();
    let diff = baseline.w.max_abs_diff(&k);
    report(3, "DMD equivalence", diff <= 1e-8, format!("max |W - K| = {diff:.2e}"));
}

#[test]
fn c4_koopman_linearizable_oracle() {
    let t0 = Instant::now();
    let (a, b, c) = (0.9, 0.5, 1.0);
    let mut trajs = Vec::new();
    for i in 0..8 {
        for j in 0..8 {
            let x0 = [-1.0 + 2.0 * i as f64 / 7.0, -1.0 + 2.0 * j as f64 / 7.0];
            trajs.push(quadratic_trajectory(a, b, c, 30, x0));
        }
    }
    let set = SampleSet::from_trajectories(&trajs, 8).unwrap();
    let tests = [[0.8, -0.3], [-0.6, 0.5], [0.35, 0.9], [-0.95, -0.7]];
    // the system contracts, so no norm-preservation penalty
    let weights = LossWeights {
        orth: 0.0,
        ..LossWeights::default()
    };
    let cfg = TrainConfig {
        epochs: 2000,
        tau_max: 8,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let rollout_mse = |variant: Variant, p: usize| {
        let mc = ModelConfig::new(variant, 2, p).with_flow(4, 32).with_chi_hidden(vec![32, 32]);
        let mut m = AikaeModel::new(mc, 0).unwrap();
        train(&mut m, &set, None, &cfg, &weights).unwrap();
        let x0s = Tensor::from_rows(&tests.iter().map(|x| &x[..]).collect::<Vec<_>>());
        let preds = m.predict_batch(&x0s, 20).unwrap();
        let mut se = 0.0;
        for (ti, x0) in tests.iter().enumerate() {
            let truth = quadratic_trajectory(a, b, c, 21, *x0);
            for s in 1..=20 {
                for k in 0..2 {
                    se += (preds[s - 1].get(ti, k) - truth.get(s, k)).powi(2);
                }
            }
        }
        se / (tests.len() * 20 * 2) as f64
    };
    let (aikae, ikae) = std::thread::scope(|s| {
        let h = s.spawn(|| rollout_mse(Variant::Ikae, 0));
        let aikae = rollout_mse(Variant::Aikae, 1);
        (aikae, h.join().unwrap())
    });
    let secs = t0.elapsed().as_secs_f64();
    let ratio = ikae / aikae;
    report(
        4,
        "Koopman-linearizable oracle",
        aikae < 1e-3 && ratio >= 5.0 && secs < 600.0,
        format!("AIKAE mse {aikae:.2e}, IKAE mse {ikae:.2e}, IKAE/AIKAE = {ratio:.2} (need >= 5) in {secs:.0}s"),
    );
}

#[test]
fn c5_etth1_reproduction() {
    let path = std::env::var_os("ETTH1_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ETTh1.csv"));
    if !path.exists() {
        report(
            5,
            "ETTh1 reproduction",
            false,
            format!("BLOCKED: dataset not found at {} (set ETTH1_CSV)", path.display()),
        );
        return;
    }
    let t0 = Instant::now();
    let raw = load_csv(&path, Some(SplitLengths::ett_hourly())).unwrap();
    let (ds, _) = raw.normalized();
    let t_l = 96;
    let train_set = SampleSet::delayed(&ds, Split::Train, t_l, 1, 1);
    let val_set = SampleSet::delayed(&ds, Split::Val, t_l, 1, 1);
    let mut m = AikaeModel::new(ModelConfig::new(Variant::Ikae, t_l, 0).with_flow(3, 128).with_revin(true), 0).unwrap();
    let epochs = std::env::var("ETTH1_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(20);
    let cfg = TrainConfig {
        epochs,
        tau_max: 1,
        batch_size: 128,
        ..TrainConfig::default()
    };
    train(&mut m, &train_set, Some(&val_set), &cfg, &LossWeights::default()).unwrap();

    let test = eval_windows(&ds, Split::Test, t_l, t_l);
    let look = Tensor::stack_rows(&test.iter().map(|w| w.lookback.clone()).collect::<Vec<_>>()).unwrap();
    let truth = Tensor::stack_rows(&test.iter().map(|w| w.target.clone()).collect::<Vec<_>>()).unwrap();
    let pred = m.forecast_horizon_batch(&look, t_l).unwrap();
    let (mse, mae) = metrics(&pred, &truth).unwrap();
    let persist = Tensor::stack_rows(
        &test.iter().map(|w| baseline_persistence(&w.lookback, t_l).unwrap()).collect::<Vec<_>>(),
    )
    .unwrap();
    let (p_mse, _) = metrics(&persist, &truth).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        5,
        "ETTh1 reproduction",
        mse <= 0.42 && mae <= 0.43 && p_mse >= 3.0 * mse && secs <= 7200.0,
        format!("test mse {mse:.3} mae {mae:.3}, persistence mse {p_mse:.3}, {epochs} epochs in {secs:.0}s"),
    );
}

#[test]
fn c6_aikae_ikae_reduction() {
    let (n, p) = (8, 4);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut m = AikaeModel::new(
            ModelConfig::new(Variant::Aikae, n, p).with_flow(3, 32).with_chi_hidden(vec![32]),
            seed,
        )
        .unwrap();
        let mut rng = Rng::new(seed + 100);
        let mut k = random_stable_matrix(n + p, 0.8, 1.0, &mut rng).add(&rng.normal_tensor(&[n + p, n + p], 0.05)).unwrap();
        for i in 0..n + p {
            for j in n..n + p {
                k.set(i, j, 0.0);
            }
        }
        m.set_koopman(k.clone()).unwrap();

        let mut ikae = AikaeModel::new(ModelConfig::new(Variant::Ikae, n, 0).with_flow(3, 32), 99).unwrap();
        for name in m.params().names().iter().filter(|s| s.starts_with("phi.")) {
            let v = m.params().get(m.params().find(name).unwrap()).clone();
            let id = ikae.params().find(name).unwrap();
            *ikae.params_mut().get_mut(id) = v;
        }
        let mut block = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                block.set(i, j, k.get(i, j));
            }
        }
        ikae.set_koopman(block).unwrap();

        let x = rng.normal_tensor(&[6, n], 1.0);
        let a = m.predict_batch(&x, 10).unwrap();
        let b = ikae.predict_batch(&x, 10).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            worst = worst.max(ta.max_abs_diff(tb));
        }
    }
    report(6, "AIKAE/IKAE reduction", worst <= 1e-10, format!("max diff {worst:.2e} over 10 steps"));
}

#[test]
fn c7_planted_assimilation() {
    let t0 = Instant::now();
    // a briefly trained model, then frozen
    let mut rng = Rng::new(7);
    let a = random_stable_matrix(4, 0.85, 0.99, &mut rng);
    let trajs: Vec<Tensor> = (0..8)
        .map(|s| {
            let x0: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            gen_linear(&a, &x0, 40, 0.0, s).unwrap().values
        })
        .collect();
    let set = SampleSet::from_trajectories(&trajs, 4).unwrap();
    let mut m = AikaeModel::new(ModelConfig::new(Variant::Aikae, 4, 2).with_flow(2, 16).with_chi_hidden(vec![16]), 8)
        .unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        tau_max: 4,
        batch_size: 32,
        ..TrainConfig::default()
    };
    train(&mut m, &set, None, &cfg, &LossWeights::default()).unwrap();
    let m = m;

    let x0 = rng.normal_tensor(&[4], 0.5);
    let z = m.encode(&x0).unwrap();
    let z_true = LatentState::from_parts(&z.invertible(), &z.augmentation().add(&rng.normal_tensor(&[2], 0.3)).unwrap());
    let truth = forecast_at(&m, &z_true, &(0..=30).collect::<Vec<_>>()).unwrap();
    let observed: Vec<usize> = (0..20).filter(|&t| t == 0 || rng.uniform() < 0.5).collect();
    let masked: Vec<usize> = (0..20).filter(|t| !observed.contains(t)).collect();
    let obs = observed.iter().map(|&t| Observation::new(t, truth[t].clone())).collect();
    let settings = AssimilationSettings {
        lr: 1e-2,
        steps: 6000,
        grad_tol: 1e-9,
    };
    let r = AssimilationProblem::new(&m, obs, Constraint::None, settings).unwrap().solve().unwrap();
    let mse = |times: &[usize]| {
        let preds = forecast_at(&m, &r.z0_star, times).unwrap();
        let se: f64 = preds.iter().zip(times).map(|(p, &t)| p.sub(&truth[t]).unwrap().sum_squares()).sum();
        se / (times.len() * 4) as f64
    };
    let future: Vec<usize> = (20..=30).collect();
    let (masked_mse, future_mse) = (mse(&masked), mse(&future));

    let ikae = AikaeModel::new(ModelConfig::new(Variant::Ikae, 4, 0).with_flow(2, 16), 9).unwrap();
    let ikae_obs = vec![Observation::new(0, x0.clone()), Observation::new(2, rng.normal_tensor(&[4], 1.0))];
    let ri = AssimilationProblem::new(&ikae, ikae_obs, Constraint::ExactInitial, AssimilationSettings::default())
        .unwrap()
        .solve()
        .unwrap();
    let exact = ri.z0_star == ikae.encode(&x0).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        7,
        "planted assimilation recovery",
        masked_mse < 1e-5 && future_mse < 1e-5 && exact && secs < 60.0,
        format!(
            "masked mse {masked_mse:.2e}, future mse {future_mse:.2e}, IKAE exact-initial z0 = phi(x0): {exact}, {secs:.1}s"
        ),
    );
}

#[test]
fn c8_weighted_linearity() {
    let mut cfg = ModelConfig::new(Variant::Aikae, 6, 3).with_flow(2, 16).with_chi_hidden(vec![16]);
    cfg.revin = false;
    let mut m = AikaeModel::new(cfg, 10).unwrap();
    let mut rng = Rng::new(11);
    m.set_koopman(Tensor::eye(9).add(&rng.normal_tensor(&[9, 9], 0.1)).unwrap()).unwrap();
    jitter_params(&mut m, 0.05, 12);
    let batch = Batch {
        x: rng.normal_tensor(&[5, 6], 1.0),
        futures: (0..3).map(|_| rng.normal_tensor(&[5, 6], 1.0)).collect(),
    };

    // residuals computed sample by sample
    let (mut inv, mut aug) = (0.0, 0.0);
    for b in 0..5 {
        let z0 = m.encode(&Tensor::vector(batch.x.row(b).to_vec())).unwrap();
        let traj = m.rollout(&z0, 3).unwrap();
        for (tau, y) in batch.futures.iter().enumerate() {
            let target = m.encode(&Tensor::vector(y.row(b).to_vec())).unwrap();
            let z = &traj[tau + 1];
            inv += z.invertible().sub(&target.invertible()).unwrap().sum_squares();
            aug += z.augmentation().sub(&target.augmentation()).unwrap().sum_squares();
        }
    }
    let denom = 5.0 * 3.0;
    let unweighted = (inv + aug) / denom;
    let at_one = loss_linearity(&m, &batch, 1.0).unwrap();
    let at_zero = loss_linearity(&m, &batch, 0.0).unwrap();
    let value_err = (at_one - unweighted).abs().max((at_zero - inv / denom).abs());

    let grads = |alpha: f64| {
        let w = LossWeights {
            alpha,
            ..LossWeights::default()
        };
        loss_value_and_grad(&m, &batch, LossTerm::Linearity, &w, OrthMode::KtK).unwrap().1
    };
    let (g0, g_half, g1) = (grads(0.0), grads(0.5), grads(1.0));
    // the gradient is affine in α, and at α = 0 it carries none of the augmentation residual
    let mut affine_err = 0.0f64;
    for ((a, h), c) in g0.iter().zip(&g_half).zip(&g1) {
        let mid = a.add(c).unwrap().scale(0.5);
        affine_err = affine_err.max(h.max_abs_diff(&mid));
    }
    let zero_ok = {
        let opts = GradcheckOptions::default();
        let w = LossWeights {
            alpha: 0.0,
            ..LossWeights::default()
        };
        gradcheck_loss(&m, &batch, LossTerm::Linearity, &w, OrthMode::KtK, &opts, None).unwrap().passes(1e-4)
    };
    report(
        8,
        "weighted linearity consistency",
        value_err <= 1e-12 && affine_err <= 1e-12 && zero_ok,
        format!("value err {value_err:.2e}, gradient affinity err {affine_err:.2e}, alpha=0 gradcheck ok: {zero_ok}"),
    );
}

