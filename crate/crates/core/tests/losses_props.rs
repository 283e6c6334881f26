use ldit_core::dit::{build_sequence, DitModel, ModelConfig, ParamVars, PositionMode, ReferenceCondition};
use ldit_core::losses::{flow_matching_loss, masked_condition_loss, rasterize_mask, LayoutMask};
use ldit_core::numerics::{finite_difference_check, Tensor};
use ldit_core::rope::RegionBox;
use ldit_core::trainer::{record_objective, PreparedSample};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(0x1d17),
        ..ProptestConfig::default()
    }
}

fn mask_strategy() -> impl Strategy<Value = LayoutMask> {
    (0usize..4, 0usize..4, 1usize..=4, 1usize..=4).prop_map(|(x, y, w, h)| {
        let b = RegionBox::new(x as f64, y as f64, (x + w).min(4) as f64, (y + h).min(4) as f64, 0.5).unwrap();
        rasterize_mask(&b, (4, 4)).unwrap()
    })
}

fn cam_strategy() -> impl Strategy<Value = Tensor<f64>> {
    proptest::collection::vec(0.0f64..=1.0, 16).prop_map(|v| Tensor::new(vec![4, 4], v).unwrap())
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn masked_loss_is_monotone_outside_and_flat_inside(
        cam in cam_strategy(), mask in mask_strategy(), cell in 0usize..16, bump in 0.0f64..=1.0,
    ) {
        let base = masked_condition_loss(std::slice::from_ref(&cam), std::slice::from_ref(&mask)).unwrap();
        let mut moved = cam.clone();
        let v = &mut moved.data_mut()[cell];
        if mask.cells()[cell] {
            // Anywhere in [0, 1] stays under the mask bound.
            *v = bump;
            let after = masked_condition_loss(&[moved], &[mask]).unwrap();
            prop_assert_eq!(after, base);
        } else {
            *v = (*v + bump).min(1.0);
            let after = masked_condition_loss(&[moved], &[mask]).unwrap();
            prop_assert!(after >= base);
        }
    }

    #[test]
    fn masked_loss_vanishes_iff_maps_stay_inside(cam in cam_strategy(), mask in mask_strategy()) {
        let loss = masked_condition_loss(std::slice::from_ref(&cam), std::slice::from_ref(&mask)).unwrap();
        let outside = cam.data().iter().zip(mask.cells()).any(|(&c, &m)| !m && c > 0.0);
        prop_assert_eq!(loss == 0.0, !outside);
    }

    #[test]
    fn flow_matching_is_zero_only_at_the_target(
        seed in any::<u64>(), rows in 1usize..16, cols in 1usize..16, eps in 1e-3f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = Tensor::from_fn(&[rows, cols], |_| rng.random_range(-1.0..1.0));
        let e = Tensor::from_fn(&[rows, cols], |_| rng.random_range(-3.0..3.0));
        let v = e.zip_map(&y, |a, b| a - b).unwrap();
        prop_assert_eq!(flow_matching_loss(&v, &y, &e).unwrap(), 0.0);
        let k = rng.random_range(0..rows * cols);
        let mut off = v.clone();
        off.data_mut()[k] += eps;
        let loss = flow_matching_loss(&off, &y, &e).unwrap();
        prop_assert!((loss - eps * eps / (rows * cols) as f64).abs() <= 1e-12);
    }
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_blocks: 2,
        mlp_hidden: 16,
        patch_size: 2,
        noise_grid: (4, 4),
        cam_block_index: 1,
        ..ModelConfig::default()
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = DitModel::<f64>::new(cfg.clone(), 11).unwrap();
    for p in &mut model.params {
        for v in p.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let boxes = [
        RegionBox::new(0.0, 0.0, 2.0, 2.0, 0.5).unwrap(),
        RegionBox::new(2.0, 1.0, 4.0, 4.0, 0.5).unwrap(),
    ];
    let refs: Vec<ReferenceCondition<f64>> = boxes
        .iter()
        .enumerate()
        .map(|(k, b)| ReferenceCondition {
            image: Tensor::from_fn(&[4, 4, 3], |_| rng.random_range(-1.0..1.0)),
            target_box: *b,
            identity_token_id: k + 1,
        })
        .collect();
    let sample = PreparedSample {
        seed: 0,
        seq: build_sequence(&refs, &[0, 1, 2], &cfg, PositionMode::Regional).unwrap(),
        clean: Tensor::from_fn(&[cfg.noise_tokens(), cfg.patch_dim()], |_| rng.random_range(-1.0..1.0)),
        masks: boxes
            .iter()
            .map(|b| rasterize_mask(b, cfg.noise_grid).unwrap())
            .collect(),
    };
    let noise = Tensor::from_fn(&[cfg.noise_tokens(), cfg.patch_dim()], |_| rng.random_range(-1.0..1.0));
    {
        let mut tape = ldit_core::numerics::Tape::new();
        let pv = model.register(&mut tape, true);
        let o = record_objective(&model, &mut tape, &pv, &sample, 0.37, &noise, 0.05).unwrap();
        assert!(
            tape.value(o.mask).data()[0] > 0.0,
            "the check should cover the mask term"
        );
    }
    let report = finite_difference_check(
        |tape, vars| {
            let pv = ParamVars::from_vars(vars.to_vec());
            Ok(record_objective(&model, tape, &pv, &sample, 0.37, &noise, 0.05)?.total)
        },
        &model.params,
        1e-5,
        1e-5,
        1e-4,
    )
    .unwrap();
    let names = model.layout().names();
    let worst = report
        .per_param
        .iter()
        .zip(names)
        .fold((0.0, ""), |w, (&e, n)| if e > w.0 { (e, n.as_str()) } else { w });
    assert!(report.passed(), "max relative error {} in {}", worst.0, worst.1);
}
