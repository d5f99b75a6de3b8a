use aikae::data::random_stable_matrix;
use aikae::models::{load_checkpoint, save_checkpoint, AikaeModel, LatentState, ModelConfig, Variant};
use aikae::numerics::{lstsq_koopman, matmul, matpow, Rng, Tensor};

fn aikae(n: usize, p: usize, seed: u64) -> AikaeModel {
    AikaeModel::new(ModelConfig::new(Variant::Aikae, n, p).with_flow(3, 16).with_chi_hidden(vec![16]), seed).unwrap()
}

fn random_k(d: usize, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    random_stable_matrix(d, 0.8, 1.0, &mut rng).add(&rng.normal_tensor(&[d, d], 0.05)).unwrap()
}

/// Copies the φ parameters of `src` into an IKAE and uses the upper-left
/// `n × n` block of its `K`.
fn reduced_ikae(src: &AikaeModel) -> AikaeModel {
    let c = src.config();
    let mut ikae = AikaeModel::new(ModelConfig::new(Variant::Ikae, c.n, 0).with_flow(c.k, c.w), 0).unwrap();
    let names: Vec<String> = ikae.params().names().to_vec();
    for name in names.iter().filter(|n| n.starts_with("phi.")) {
        let from = src.params().get(src.params().find(name).unwrap()).clone();
        let id = ikae.params().find(name).unwrap();
        *ikae.params_mut().get_mut(id) = from;
    }
    let k = src.koopman();
    let n = c.n;
    let mut block = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            block.set(i, j, k.get(i, j));
        }
    }
    ikae.set_koopman(block).unwrap();
    ikae
}

#[test]
fn aikae_with_silent_augmentation_equals_ikae() {
    for seed in 0..5 {
        let (n, p) = (6, 3);
        let mut m = aikae(n, p, seed);
        let mut k = random_k(n + p, seed + 10);
        for i in 0..n + p {
            for j in n..n + p {
                k.set(i, j, 0.0);
            }
        }
        m.set_koopman(k).unwrap();
        let ikae = reduced_ikae(&m);
        let x = Rng::new(seed).normal_tensor(&[5, n], 1.0);
        let a = m.predict_batch(&x, 10).unwrap();
        let b = ikae.predict_batch(&x, 10).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            assert!(ta.max_abs_diff(tb) <= 1e-10, "{}", ta.max_abs_diff(tb));
        }
    }
}

#[test]
fn decode_ignores_augmentation() {
    let m = aikae(6, 4, 1);
    let mut rng = Rng::new(2);
    let zi = rng.normal_tensor(&[6], 1.0);
    let base = m.decode(&LatentState::from_parts(&zi, &rng.normal_tensor(&[4], 1.0))).unwrap();
    for _ in 0..10 {
        let other = m.decode(&LatentState::from_parts(&zi, &rng.normal_tensor(&[4], 10.0))).unwrap();
        assert_eq!(base, other);
    }
}

#[test]
fn decode_is_only_a_left_inverse() {
    let m = aikae(6, 4, 3);
    let x = Rng::new(4).normal_tensor(&[6], 1.0);
    let z = m.encode(&x).unwrap();
    assert!(m.decode(&z).unwrap().max_abs_diff(&x) < 1e-12);
    // an arbitrary latent is generally not in the image of Φ
    let z_off = LatentState::from_parts(&z.invertible(), &z.augmentation().map(|v| v + 1.0));
    let round = m.encode(&m.decode(&z_off).unwrap()).unwrap();
    assert!(round.z().max_abs_diff(z_off.z()) > 0.5);
}

#[test]
fn augmentation_reaches_forecasts_only_through_the_upper_right_block() {
    let (n, p) = (4, 2);
    let mut m = aikae(n, p, 5);
    let x = Rng::new(6).normal_tensor(&[n], 1.0);
    let z = m.encode(&x).unwrap();
    let alt = LatentState::from_parts(&z.invertible(), &z.augmentation().map(|v| v - 2.0));

    let mut k = random_k(n + p, 7);
    m.set_koopman(k.clone()).unwrap();
    let a = m.decode(&m.rollout(&z, 1).unwrap()[1]).unwrap();
    let b = m.decode(&m.rollout(&alt, 1).unwrap()[1]).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-3);

    for i in 0..n {
        for j in n..n + p {
            k.set(i, j, 0.0);
        }
    }
    m.set_koopman(k).unwrap();
    for t in 1..6 {
        let a = m.decode(&m.rollout(&z, t).unwrap()[t]).unwrap();
        let b = m.decode(&m.rollout(&alt, t).unwrap()[t]).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn matpow_semigroup() {
    for seed in 0..10 {
        let k = random_stable_matrix(4, 0.5, 1.0, &mut Rng::new(seed));
        for a in 0..=8 {
            for b in 0..=8 {
                let lhs = matpow(&k, a + b).unwrap();
                let rhs = matmul(&matpow(&k, a).unwrap(), &matpow(&k, b).unwrap()).unwrap();
                assert!(lhs.max_abs_diff(&rhs) < 1e-9);
            }
        }
    }
}

#[test]
fn least_squares_recovers_planted_operator() {
    let mut rng = Rng::new(8);
    let k_true = random_stable_matrix(3, 0.7, 0.99, &mut rng);
    let mut cols = vec![rng.normal_tensor(&[3], 1.0)];
    for _ in 0..50 {
        let last = cols.last().unwrap();
        cols.push(Tensor::vector(matmul(&k_true, &Tensor::matrix(3, 1, last.data().to_vec()).unwrap()).unwrap().into_data()));
    }
    let stacked = Tensor::stack_rows(&cols).unwrap().transpose();
    let gx = stacked.slice_cols(0, 50);
    let gy = stacked.slice_cols(1, 51);
    let k = lstsq_koopman(&gx, &gy).unwrap();
    assert!(k.max_abs_diff(&k_true) < 1e-8);
}

#[test]
fn least_squares_beats_random_candidates() {
    let mut rng = Rng::new(9);
    let gx = rng.normal_tensor(&[4, 30], 1.0);
    let gy = rng.normal_tensor(&[4, 30], 1.0);
    let k = lstsq_koopman(&gx, &gy).unwrap();
    let resid = |k: &Tensor| matmul(k, &gx).unwrap().sub(&gy).unwrap().sum_squares();
    let best = resid(&k);
    for i in 0..1000 {
        let scale = [1e-3, 1e-1, 1.0][i % 3];
        let cand = k.add(&rng.normal_tensor(&[4, 4], scale)).unwrap();
        assert!(best <= resid(&cand));
    }
}

#[test]
fn published_parameter_counts() {
    let ikae = AikaeModel::new(ModelConfig::new(Variant::Ikae, 96, 0), 0).unwrap();
    let big = AikaeModel::new(ModelConfig::new(Variant::Aikae, 96, 32), 0).unwrap();
    // roughly 110K and 175K
    assert_eq!(ikae.param_count(), 108_736);
    assert_eq!(big.param_count(), 177_760);
    assert!((ikae.param_count() as f64 / 110e3 - 1.0).abs() < 0.02);
    assert!((big.param_count() as f64 / 175e3 - 1.0).abs() < 0.02);
}

#[test]
fn checkpoint_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for (i, variant) in [Variant::Kae, Variant::Ikae, Variant::IkaeZp, Variant::Aikae].into_iter().enumerate() {
        let m = AikaeModel::new(
            ModelConfig::new(variant, 8, 2).with_flow(2, 8).with_chi_hidden(vec![8]).with_revin(i % 2 == 0),
            i as u64,
        )
        .unwrap();
        let path = dir.path().join(format!("m{i}.json"));
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params(), m.params());
        let x = Rng::new(1).normal_tensor(&[3, 8], 1.0);
        assert_eq!(back.predict_batch(&x, 3).unwrap(), m.predict_batch(&x, 3).unwrap());
    }
}
