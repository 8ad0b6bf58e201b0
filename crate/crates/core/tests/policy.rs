use proptest::prelude::*;
use spatialgrasp::policy::{
    build_schedule, ddim_step, denoiser_forward, evaluate_rmse, finite_diff_check, forward_diffuse, noised_sample,
    rmse_loss_and_grad, train_policy, ActionTrajectory, DenoiserConfig, DenoiserParams, NoisedSample, TrainConfig,
    MAX_BETA,
};
use spatialgrasp::tensor::Matrix;
use spatialgrasp::RandomStream;

fn trajectory(h: usize, d: usize, rng: &mut RandomStream) -> ActionTrajectory {
    ActionTrajectory::new(h, d, (0..h * d).map(|_| rng.normal()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_invariants(steps in 1usize..200, offset in 1e-4..0.5f64) {
        let s = build_schedule(steps, offset).unwrap();
        let ab = s.alpha_bar();
        prop_assert_eq!(ab.len(), steps + 1);
        prop_assert_eq!(ab[0], 1.0);
        prop_assert!(ab.windows(2).all(|w| w[1] < w[0]), "not strictly decreasing: {:?}", ab);
        prop_assert!(s.betas().iter().all(|&b| b > 0.0 && b <= MAX_BETA));
    }

    #[test]
    fn ddim_inverts_forward_diffusion(h in 1usize..10, d in 1usize..10, seed in any::<u64>(), t in 1usize..=16, back in 0usize..16) {
        let t_prev = back.min(t - 1);
        let schedule = build_schedule(16, 0.008).unwrap();
        let mut rng = RandomStream::new(seed);
        let x0 = trajectory(h, d, &mut rng);
        let eps = Matrix::from_fn(h, d, |_, _| rng.normal());
        let x_t = forward_diffuse(&x0, t, &schedule, &eps).unwrap();
        let stepped = ddim_step(&x_t, &eps, t, t_prev, &schedule).unwrap();
        let expected = if t_prev == 0 { x0 } else { forward_diffuse(&x0, t_prev, &schedule, &eps).unwrap() };
        prop_assert!(stepped.max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn rmse_zero_iff_prediction_exact(seed in any::<u64>(), shift in -1.0..1.0f64, idx in 0usize..12) {
        let config = DenoiserConfig { horizon: 3, dims: 2, cond_len: 2, hidden: 5, ..DenoiserConfig::default() };
        let params = DenoiserParams::init(config, &RandomStream::new(seed));
        let mut rng = RandomStream::new(seed ^ 0x5eed);
        let x_t = trajectory(3, 2, &mut rng);
        let cond = vec![rng.normal(), rng.normal()];
        let t = 1 + rng.below(16) as usize;
        let exact = denoiser_forward(&params, &x_t, t, &cond).unwrap();
        let sample = |noise: Matrix| NoisedSample { x_t: x_t.clone(), t, cond: cond.clone(), noise };
        let (zero, _) = rmse_loss_and_grad(&params, &[sample(exact.clone())]).unwrap();
        prop_assert_eq!(zero, 0.0);

        let mut off = exact.data().to_vec();
        off[idx % 6] += shift;
        let (loss, grad) = rmse_loss_and_grad(&params, &[sample(Matrix::from_vec(3, 2, off).unwrap())]).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, shift == 0.0);
        prop_assert!(grad.is_finite());
    }

    #[test]
    fn denoiser_gradients_match_finite_differences(seed in any::<u64>(), h in 1usize..=8, d in 1usize..4, hidden in 1usize..10) {
        let config = DenoiserConfig { horizon: h, dims: d, cond_len: 3, hidden, ..DenoiserConfig::default() };
        prop_assume!(config.num_params() <= 1000);
        let schedule = config.schedule().unwrap();
        let params = DenoiserParams::init(config, &RandomStream::new(seed));
        let mut rng = RandomStream::new(seed.wrapping_add(1));
        let batch: Vec<_> = (0..3)
            .map(|_| {
                let x0 = trajectory(h, d, &mut rng);
                let cond: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
                noised_sample(&x0, &cond, &schedule, &mut rng)
            })
            .collect();
        let err = finite_diff_check(
            |flat| {
                let p = DenoiserParams::unflatten(config, flat).unwrap();
                let (loss, grad) = rmse_loss_and_grad(&p, &batch).unwrap();
                (loss, grad.flatten())
            },
            &params.flatten(),
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn denoiser_output_is_finite_and_pure() {
    let config = DenoiserConfig::default();
    let params = DenoiserParams::init(config, &RandomStream::new(8));
    let mut rng = RandomStream::new(9);
    let x_t = ActionTrajectory::new(8, 8, (0..64).map(|_| 100.0 * rng.normal()).collect()).unwrap();
    let cond: Vec<f64> = (0..config.cond_len).map(|_| 10.0 * rng.normal()).collect();
    let a = denoiser_forward(&params, &x_t, 7, &cond).unwrap();
    assert!(a.data().iter().all(|v| v.is_finite()));
    assert_eq!(a, denoiser_forward(&params, &x_t, 7, &cond).unwrap());
}

#[test]
fn zero_trajectory_is_learned() {
    let data = vec![(Vec::new(), ActionTrajectory::zeros(1, 1))];
    let cfg = TrainConfig {
        epochs: 80_000,
        batch_size: 64,
        learning_rate: 0.005,
        noise_draws: 64,
        hidden: 16,
        seed: 0,
        ..TrainConfig::default()
    };
    let trained = train_policy(&data, &cfg).unwrap();
    assert_eq!(trained.trace.len(), cfg.epochs);
    let first = trained.trace[0].rmse;
    let last = trained.trace.last().unwrap().rmse;
    assert!(last < 0.05, "final epoch RMSE {last}");
    assert!(last < first / 10.0, "{first} -> {last}");
    let held_out = evaluate_rmse(&trained.params, &trained.schedule, &data, 2000, &mut RandomStream::new(99)).unwrap();
    assert!(held_out < 0.05, "held-out RMSE {held_out}");
}
