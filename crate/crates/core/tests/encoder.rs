use proptest::prelude::*;
use spatialgrasp::encoder::{
    attend_window_traced, backward, encode_sequence, encode_window, project_token, EncoderConfig, EncoderParams,
};
use spatialgrasp::policy::finite_diff_check;
use spatialgrasp::RandomStream;

fn config() -> impl Strategy<Value = EncoderConfig> {
    (0usize..6, 0usize..4, 1usize..=8).prop_map(|(visual_len, task_len, token_dim)| EncoderConfig {
        visual_len,
        task_len,
        token_dim,
    })
}

fn features(cfg: &EncoderConfig, n: usize, scale: f64, rng: &mut RandomStream) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..cfg.feature_len()).map(|_| scale * rng.normal()).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_gradients_match_finite_differences(cfg in config(), seed in any::<u64>()) {
        let params = EncoderParams::init(cfg, &RandomStream::new(seed));
        let mut rng = RandomStream::new(seed ^ 1);
        let f = features(&cfg, 2, 1.5, &mut rng);
        let target: Vec<f64> = (0..cfg.conditioning_len()).map(|_| rng.normal()).collect();
        let err = finite_diff_check(
            |flat| {
                let p = EncoderParams::unflatten(cfg, flat).unwrap();
                let trace = encode_window(&p, [&f[0], &f[1]]).unwrap();
                let r: Vec<f64> = trace.attention.output.iter().zip(&target).map(|(y, t)| y - t).collect();
                (0.5 * r.iter().map(|v| v * v).sum::<f64>(), backward(&p, &trace, &r).unwrap().flatten())
            },
            &params.flatten(),
            1e-5,
        )
        .unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn softmax_rows_and_finite_output(cfg in config(), seed in any::<u64>(), scale in 0.01..50.0f64) {
        let params = EncoderParams::init(cfg, &RandomStream::new(seed));
        let f = features(&cfg, 2, scale, &mut RandomStream::new(seed ^ 2));
        let t0 = project_token(&params, &f[0]).unwrap();
        let t1 = project_token(&params, &f[1]).unwrap();
        let trace = attend_window_traced(&params, [&t0, &t1]).unwrap();
        for row in trace.weights {
            prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|w| (0.0..=1.0).contains(w)));
        }
        prop_assert!(trace.output.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conditioning_sees_only_two_steps(cfg in config(), seed in any::<u64>(), which in 0usize..3) {
        let params = EncoderParams::init(cfg, &RandomStream::new(seed));
        let mut rng = RandomStream::new(seed ^ 3);
        let mut seq = features(&cfg, 5, 1.0, &mut rng);
        let before = encode_sequence(&params, &seq).unwrap();
        for v in &mut seq[which] {
            *v += 10.0;
        }
        let after = encode_sequence(&params, &seq).unwrap();
        for t in which + 2..5 {
            prop_assert_eq!(&before[t], &after[t]);
        }
    }
}
