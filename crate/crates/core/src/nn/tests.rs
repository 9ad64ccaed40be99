use super::*;
use crate::autodiff::grad_check;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Largest singular value via one-sided Jacobi rotations.
fn jacobi_sigma_max(w: &Tensor) -> f64 {
    let (m, n) = (w.rows(), w.cols());
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| w.get(i, j)).collect())
        .collect();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(a, b)| a * b).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (a, b) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * a - s * b;
                    cols[q][i] = s * a + c * b;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }
    cols.iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn random_obs(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor {
    let data = (0..rows * dim)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    Tensor::matrix(rows, dim, data).unwrap()
}

#[test]
fn jacobi_oracle_on_known_matrix() {
    let w = Tensor::matrix(2, 2, vec![3.0, 0.0, 4.0, 5.0]).unwrap();
    // singular values of [[3,0],[4,5]] are 3√5 and √5
    assert!((jacobi_sigma_max(&w) - 3.0 * 5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn power_iteration_approaches_top_singular_value_from_below() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let w = random_matrix(&mut rng, 64, 64);
    let sigma = jacobi_sigma_max(&w);
    let mut sn = SpectralNormState::new(64, 64, 1, &mut rng);
    let mut last = 0.0;
    for step in 0..2000 {
        let est = sn.update(&w);
        assert!(est <= sigma * (1.0 + 1e-12), "step {step}: {est} > {sigma}");
        assert!(est >= last * (1.0 - 1e-12));
        last = est;
    }
    assert!(last / sigma > 0.9999, "{}", last / sigma);
    let eff = w.scale(1.0 / last);
    assert!((jacobi_sigma_max(&eff) - sigma / last).abs() < 1e-10);
}

#[test]
fn srym_examples() {
    let cfg = BallConfig::default();
    let origin = srym_forward(&[0.0; 5], cfg).unwrap();
    assert!(origin.coords().iter().all(|&v| v == 0.0));
    let one = srym_forward(&[0.5], cfg).unwrap();
    assert!((one.coords()[0] - 0.5f64.tanh()).abs() < 1e-15);
    assert!(srym_forward(&[], cfg).is_err());
}

#[test]
fn rescaled_gaussian_norm_is_size_invariant() {
    use statrs::function::gamma::ln_gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &n in &[8usize, 32, 256] {
        let samples = if n == 256 { 100_000 } else { 20_000 };
        let mut total = 0.0;
        for _ in 0..samples {
            let sq: f64 = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
                .sum();
            total += (sq / n as f64).sqrt();
        }
        let mean = total / samples as f64;
        let nf = n as f64;
        let exact =
            (2f64.ln() / 2.0 + ln_gamma((nf + 1.0) / 2.0) - ln_gamma(nf / 2.0)).exp() / nf.sqrt();
        // E[χ_n]/√n ≈ 1 − 1/(4n): inside the 2% band from n = 32 on, but
        // about 0.969 for n = 8.
        if n >= 32 {
            assert!((0.98..=1.02).contains(&mean), "n={n}: {mean}");
        }
        assert!((mean - exact).abs() < 3e-3, "n={n}: {mean} vs {exact}");
    }
}

#[test]
fn clipped_examples() {
    let cfg = BallConfig::default();
    let small = [0.3, 0.4];
    assert_eq!(
        clipped_forward(&small, cfg).unwrap(),
        poincare::expmap0(&small, cfg).unwrap()
    );
    let big = [0.0, 4.0];
    let expected = poincare::expmap0(&[0.0, 1.0], cfg).unwrap();
    let got = clipped_forward(&big, cfg).unwrap();
    assert!((got.coords()[1] - expected.coords()[1]).abs() < 1e-15);
    assert!((got.coords()[1] - 1f64.tanh()).abs() < 1e-15);
}

#[test]
fn clipped_branch_ignores_radial_perturbations() {
    let cfg = BallConfig::default();
    let x = [1.2, -2.0, 0.7];
    let norm = poincare::norm_sq(&x).sqrt();
    let base = clipped_forward(&x, cfg).unwrap();
    for eps in [1e-6, 1e-3, 0.5] {
        let y: Vec<f64> = x.iter().map(|v| v * (1.0 + eps / norm)).collect();
        let moved = clipped_forward(&y, cfg).unwrap();
        for (a, b) in base.coords().iter().zip(moved.coords()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
    // Tangential perturbations do move the output.
    let t = [2.0, 1.2, 0.0];
    let y: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a + 1e-3 * b).collect();
    let moved = clipped_forward(&y, cfg).unwrap();
    assert!(base
        .coords()
        .iter()
        .zip(moved.coords())
        .any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn clipped_pre_map_norm_never_exceeds_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let x = tape.constant(random_matrix(&mut rng, 200, 6).scale(3.0));
    let clipped = batched::clip_unit_norm(x).unwrap().value();
    for r in 0..200 {
        assert!(poincare::norm_sq(clipped.row(r)) <= 1.0 + 4.0 * f64::EPSILON);
    }
}

#[test]
fn head_mode_names_round_trip() {
    for mode in HeadMode::ALL {
        assert_eq!(mode.name().parse::<HeadMode>().unwrap(), mode);
    }
    assert!(matches!(
        "poincare".parse::<HeadMode>(),
        Err(NnError::UnknownMode(_))
    ));
}

#[test]
fn output_count_is_mode_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let obs = random_obs(&mut rng, 3, 10);
    for mode in HeadMode::ALL {
        let net = Network::new(
            NetworkConfig::new(10, 8, 5, mode),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let out = net.infer(&obs).unwrap();
        assert_eq!(out.shape(), &[3, 5], "{mode}");
        assert!(out.is_finite());
    }
}

#[test]
fn srym_head_at_origin_matches_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = BallConfig::default();
    let planes: Vec<_> = (0..3)
        .map(|_| {
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(-0.3..0.3)).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            GyroplaneParams::new(BallPoint::new(p, cfg).unwrap(), w).unwrap()
        })
        .collect();
    let head = HyperbolicHead::new(planes.clone(), cfg, HeadMode::Srym).unwrap();
    let out = head_forward(&[0.0; 4], &head).unwrap();
    let origin = BallPoint::origin(4, cfg);
    for (o, g) in out.iter().zip(&planes) {
        assert_eq!(*o, poincare::gyroplane_affine(&origin, g).unwrap());
    }
    assert!(matches!(
        head_forward(&[0.0; 3], &head),
        Err(NnError::DimensionMismatch { .. })
    ));
}

#[test]
fn network_head_agrees_with_pointwise_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let obs = random_obs(&mut rng, 4, 6);
    for mode in [
        HeadMode::Naive,
        HeadMode::Clipped,
        HeadMode::Srym,
        HeadMode::SrymNoRescale,
    ] {
        let mut cfg = NetworkConfig::new(6, 5, 3, mode);
        cfg.small_init = None;
        let mut net = Network::new(cfg, &mut rng).unwrap();
        // Move the shifts off the origin.
        let shift = net.head_params()[0];
        net.params_mut()
            .get_mut(shift)
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.05 * (i as f64 % 4.0 - 1.5));
        let head = net.hyperbolic_head().unwrap().unwrap();
        let latent = net.encode(&obs).unwrap();
        let out = net.infer(&obs).unwrap();
        for b in 0..4 {
            let expected = head_forward(latent.row(b), &head).unwrap();
            for (k, e) in expected.iter().enumerate() {
                assert!(
                    (out.get(b, k) - e).abs() < 1e-10,
                    "{mode}: {} vs {e}",
                    out.get(b, k)
                );
            }
        }
    }
}

#[test]
fn head_gradients_pass_grad_check_in_every_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for mode in HeadMode::ALL {
        let mut cfg = NetworkConfig::new(4, 6, 3, mode);
        cfg.small_init = None;
        let mut net = Network::new(cfg, &mut rng).unwrap();
        if let Some(&shift) = net.head_params().first().filter(|_| mode.is_hyperbolic()) {
            net.params_mut()
                .get_mut(shift)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
        // Keep ReLU inputs away from the kink.
        let latent = Tensor::matrix(
            2,
            6,
            (0..12)
                .map(|i| {
                    if i % 3 == 0 {
                        -0.7
                    } else {
                        0.2 + 0.13 * i as f64
                    }
                })
                .collect(),
        )
        .unwrap();
        let err = grad_check(
            |tape, x| {
                let params = net.params().bind(tape, false);
                Ok(net
                    .forward_head(&params, x)
                    .map_err(|e| match e {
                        NnError::Autodiff(a) => a,
                        other => panic!("{other}"),
                    })?
                    .sum())
            },
            &latent,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{mode}: {err}");
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let obs = random_obs(&mut rng, 3, 5);
    for mode in [HeadMode::Euclidean, HeadMode::Srym, HeadMode::Clipped] {
        let mut cfg = NetworkConfig::new(5, 4, 2, mode);
        cfg.hidden = vec![6];
        cfg.small_init = None;
        let mut net = Network::new(cfg, &mut rng).unwrap();
        let loss = |n: &Network| {
            n.infer(&obs)
                .unwrap()
                .data()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        };
        let tape = Tape::new();
        let fwd = net.forward(&tape, &obs, true).unwrap();
        let l = fwd.outputs.square().sum();
        let grads = fwd.params.collect(&tape.backward(l).unwrap());
        let ids: Vec<ParamId> = net.params().ids().collect();
        for id in ids {
            for i in 0..net.params().get(id).numel() {
                let orig = net.params().get(id).data()[i];
                let h = 1e-6;
                net.params_mut().get_mut(id).data_mut()[i] = orig + h;
                let up = loss(&net);
                net.params_mut().get_mut(id).data_mut()[i] = orig - h;
                let down = loss(&net);
                net.params_mut().get_mut(id).data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[id.index()].data()[i];
                let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
                assert!(
                    err < 1e-5,
                    "{mode} {}[{i}]: {analytic} vs {numeric}",
                    net.params().param(id).name
                );
            }
        }
    }
}

#[test]
fn init_small_scales_only_targets() {
    let mut cfg = NetworkConfig::new(6, 4, 3, HeadMode::Naive);
    cfg.small_init = None;
    let base = Network::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mut small = base.clone();
    small.init_small(0.01).unwrap();
    let last = base.encoder().last().unwrap();
    let mut targets = vec![last.weight(), last.bias()];
    targets.extend(base.head_params());
    for id in base.params().ids() {
        let (before, after) = (base.params().get(id), small.params().get(id));
        if targets.contains(&id) {
            assert!((after.norm() - 0.01 * before.norm()).abs() <= 1e-15 * before.norm().max(1.0));
        } else {
            assert_eq!(before, after);
        }
    }
    assert!(small.init_small(0.0).is_err());
}

#[test]
fn small_init_defaults_follow_mode() {
    let make = |mode| {
        let seeded = Network::new(
            NetworkConfig::new(6, 4, 3, mode),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let mut cfg = NetworkConfig::new(6, 4, 3, mode);
        cfg.small_init = None;
        let plain = Network::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let id = plain.head_params()[1];
        (
            seeded.params().get(id).norm(),
            plain.params().get(id).norm(),
        )
    };
    let (naive, naive_plain) = make(HeadMode::Naive);
    assert!((naive - 0.01 * naive_plain).abs() < 1e-15);
    let (srym, srym_plain) = make(HeadMode::Srym);
    assert_eq!(srym, srym_plain);
}

#[test]
fn spectrally_normalized_encoder_is_nearly_one_lipschitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut net = Network::new(NetworkConfig::new(20, 16, 3, HeadMode::Srym), &mut rng).unwrap();
    for _ in 0..50 {
        net.refresh_spectral_norm();
    }
    let layers = net.encoder().len() as i32;
    let bound = 1.01f64.powi(layers);
    for _ in 0..200 {
        let x = random_obs(&mut rng, 1, 20);
        let y = Tensor::matrix(
            1,
            20,
            x.data()
                .iter()
                .map(|v| v + rng.random_range(-0.5..0.5))
                .collect(),
        )
        .unwrap();
        let (fx, fy) = (net.encode(&x).unwrap(), net.encode(&y).unwrap());
        let out: f64 = fx
            .data()
            .iter()
            .zip(fy.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let inp: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(out <= bound * inp, "{out} > {bound}·{inp}");
    }
}

#[test]
fn checkpoint_restores_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let obs = random_obs(&mut rng, 2, 7);
    let mut net = Network::new(NetworkConfig::new(7, 4, 3, HeadMode::Srym), &mut rng).unwrap();
    net.refresh_spectral_norm();
    let mut buf = Vec::new();
    net.save(&mut buf).unwrap();
    let mut other = Network::new(
        NetworkConfig::new(7, 4, 3, HeadMode::Srym),
        &mut ChaCha8Rng::seed_from_u64(99),
    )
    .unwrap();
    assert_ne!(other.infer(&obs).unwrap(), net.infer(&obs).unwrap());
    other.load(buf.as_slice()).unwrap();
    assert_eq!(other.infer(&obs).unwrap(), net.infer(&obs).unwrap());

    let mut wrong = Network::new(NetworkConfig::new(7, 5, 3, HeadMode::Srym), &mut rng).unwrap();
    assert!(matches!(
        wrong.load(buf.as_slice()),
        Err(NnError::Checkpoint(CheckpointError::ShapeMismatch { .. }))
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(Network::new(NetworkConfig::new(0, 4, 3, HeadMode::Srym), &mut rng).is_err());
    let mut cfg = NetworkConfig::new(3, 4, 3, HeadMode::Srym);
    cfg.power_iters = 0;
    assert!(Network::new(cfg, &mut rng).is_err());
    let net = Network::new(NetworkConfig::new(3, 4, 3, HeadMode::Srym), &mut rng).unwrap();
    assert!(matches!(
        net.infer(&Tensor::zeros(&[2, 4])),
        Err(NnError::DimensionMismatch { .. })
    ));
}
