use ldit_core::dit::{
    build_sequence, normalize_cam, CamPlan, DitModel, ModelConfig, PositionMode, ReferenceCondition, TokenSequence,
};
use ldit_core::numerics::{Tape, Tensor};
use ldit_core::rope::{shared_rotation_table, RegionBox};
use ldit_core::synthetic::{gen_scene, SceneConfig};
use ldit_core::trainer::prepare_sample;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::seq::SliceRandom;
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

fn small_config(n_blocks: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_blocks,
        mlp_hidden: 24,
        patch_size: 2,
        noise_grid: (4, 4),
        cam_block_index: 0,
        ..ModelConfig::default()
    }
}

/// A model whose parameters are all nonzero, so no block is the identity.
fn perturbed(cfg: ModelConfig, seed: u64) -> DitModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DitModel::new(cfg, seed).unwrap();
    for p in &mut m.params {
        for v in p.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    m
}

fn references(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize) -> Vec<ReferenceCondition<f64>> {
    let (gh, gw) = cfg.noise_grid;
    (0..n)
        .map(|k| {
            let (h, w) = (rng.random_range(1..=2), rng.random_range(1..=2));
            let x0 = rng.random_range(0.0..gw as f64 - 1.0);
            let y0 = rng.random_range(0.0..gh as f64 - 1.0);
            let x1 = rng.random_range(x0 + 0.5..=gw as f64);
            let y1 = rng.random_range(y0 + 0.5..=gh as f64);
            ReferenceCondition {
                image: Tensor::from_fn(&[h * cfg.patch_size, w * cfg.patch_size, cfg.channels], |_| {
                    rng.random_range(-1.0..1.0)
                }),
                target_box: RegionBox::new(x0, y0, x1, y1, rng.random_range(0.0..=1.0)).unwrap(),
                identity_token_id: k + 1,
            }
        })
        .collect()
}

fn noisy(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Tensor<f64> {
    Tensor::from_fn(&[cfg.noise_tokens(), cfg.patch_dim()], |_| rng.random_range(-1.0..1.0))
}

/// Final hidden states of every token, in sequence order.
fn hidden(
    model: &DitModel<f64>,
    seq: &TokenSequence<f64>,
    x: &Tensor<f64>,
    t: f64,
    perm: Option<&[usize]>,
) -> Tensor<f64> {
    let mut tape = Tape::new();
    let pv = model.register(&mut tape, false);
    let emb = model.embed(&mut tape, &pv, seq, x).unwrap();
    let cond = model.time_conditioning(&mut tape, &pv, t).unwrap();
    let n = seq.len();
    let (emb, coords, vis) = match perm {
        None => (emb, seq.coords.clone(), seq.visibility.clone()),
        Some(p) => {
            let e = tape.gather_rows(emb, p).unwrap();
            let vis = (0..n * n).map(|q| seq.visibility[p[q / n] * n + p[q % n]]).collect();
            (e, seq.coords.permuted(p), vis)
        }
    };
    let table = shared_rotation_table(&coords, model.rope()).unwrap();
    let (out, _) = model
        .forward_tokens(&mut tape, &pv, emb, cond, table, Some(&vis), &CamPlan::default())
        .unwrap();
    tape.value(out).clone()
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), n_refs in 0usize..=3, t in 0.0f64..=1.0) {
        let cfg = small_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = perturbed(cfg.clone(), seed);
        let refs = references(&mut rng, &cfg, n_refs);
        let seq = build_sequence(&refs, &[0, 3], &cfg, PositionMode::Regional).unwrap();
        let x = noisy(&mut rng, &cfg);
        let a = model.predict(&seq, t, &x, &[0, 1]).unwrap();
        let b = model.predict(&seq, t, &x, &[0, 1]).unwrap();
        prop_assert_eq!(a.0.shape(), &[cfg.noise_tokens(), cfg.patch_dim()][..]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn forward_is_permutation_equivariant(seed in any::<u64>(), n_refs in 0usize..=3, t in 0.0f64..=1.0) {
        let cfg = small_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = perturbed(cfg.clone(), seed);
        let refs = references(&mut rng, &cfg, n_refs);
        let seq = build_sequence(&refs, &[0, 2, 5], &cfg, PositionMode::Regional).unwrap();
        let x = noisy(&mut rng, &cfg);
        let mut perm: Vec<usize> = (0..seq.len()).collect();
        perm.shuffle(&mut rng);
        let plain = hidden(&model, &seq, &x, t, None);
        let shuffled = hidden(&model, &seq, &x, t, Some(&perm));
        for (q, &p) in perm.iter().enumerate() {
            for (a, b) in shuffled.row(q).iter().zip(plain.row(p)) {
                prop_assert!((a - b).abs() <= 1e-9, "token {p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn references_are_isolated(seed in any::<u64>(), n_refs in 2usize..=4, t in 0.0f64..=1.0) {
        // One block: in deeper stacks references still reach each other
        // through the noise tokens.
        let cfg = small_config(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = perturbed(cfg.clone(), seed);
        let refs = references(&mut rng, &cfg, n_refs);
        let x = noisy(&mut rng, &cfg);
        let b = rng.random_range(0..n_refs);
        let mut zeroed = refs.clone();
        zeroed[b].image = Tensor::zeros(refs[b].image.shape());
        let s1 = build_sequence(&refs, &[0], &cfg, PositionMode::Regional).unwrap();
        let s2 = build_sequence(&zeroed, &[0], &cfg, PositionMode::Regional).unwrap();
        let h1 = hidden(&model, &s1, &x, t, None);
        let h2 = hidden(&model, &s2, &x, t, None);
        for a in (0..n_refs).filter(|&a| a != b) {
            for row in s1.reference_segment(a).unwrap().range() {
                for (u, v) in h1.row(row).iter().zip(h2.row(row)) {
                    prop_assert!((u - v).abs() <= 1e-9);
                }
            }
        }
        // The noise tokens do see the zeroed reference.
        let noise = s1.noise_segment().range();
        prop_assert!(noise.into_iter().any(|r| h1.row(r) != h2.row(r)));
    }

    #[test]
    fn cams_are_normalized_and_affine_invariant(
        seed in any::<u64>(), n_refs in 1usize..=3, t in 0.0f64..=1.0,
        scale in 0.01f64..100.0, shift in -100.0f64..100.0, pow in -8i32..8,
    ) {
        let cfg = small_config(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = perturbed(cfg.clone(), seed);
        let refs = references(&mut rng, &cfg, n_refs);
        let seq = build_sequence(&refs, &[0], &cfg, PositionMode::Regional).unwrap();
        let (_, cams) = model.predict(&seq, t, &noisy(&mut rng, &cfg), &[0, 1]).unwrap();
        prop_assert_eq!(cams.len(), 2);
        for raw in cams.iter().flatten() {
            prop_assert_eq!(raw.len(), cfg.noise_tokens());
            let m = normalize_cam(raw);
            prop_assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let affine = normalize_cam(&raw.map(|v| scale * v + shift));
            prop_assert!(m.max_abs_diff(&affine).unwrap() <= 1e-9);
            // Power-of-two scaling is exact in binary floating point.
            let exact = normalize_cam(&raw.map(|v| v * 2f64.powi(pow)));
            prop_assert_eq!(&m, &exact);
        }
    }
}

/// Fraction of references whose block-0 map peaks inside the target box on
/// an untrained model with tied query/key projections. Every token carries
/// the same content and the learned reference offset is zeroed, so query and
/// key vectors coincide and only the rotary coordinates tell tokens apart.
fn locality_rate(mode: PositionMode, seeds: std::ops::Range<u64>) -> f64 {
    let cfg = ModelConfig::default();
    let scene = SceneConfig::default();
    let (mut hits, mut total) = (0, 0);
    for seed in seeds {
        let mut model = DitModel::<f64>::new(cfg.clone(), seed).unwrap();
        let l = model.layout().clone();
        model.params[l.blocks[0].wk] = model.params[l.blocks[0].wq].clone();
        model.params[l.ref_embed] = Tensor::zeros(&[1, cfg.d_model]);
        let sample = gen_scene(seed, 3, &scene, 0.0).unwrap();
        let prepared = prepare_sample(&sample, &cfg, mode).unwrap();
        let refs: Vec<ReferenceCondition<f64>> = prepared
            .seq
            .references
            .iter()
            .map(|r| ReferenceCondition {
                image: Tensor::full(
                    &[r.grid.0 * cfg.patch_size, r.grid.1 * cfg.patch_size, cfg.channels],
                    0.3,
                ),
                target_box: r.target_box,
                identity_token_id: r.identity_token_id,
            })
            .collect();
        let seq = build_sequence(&refs, &prepared.seq.condition_ids, &cfg, mode).unwrap();
        let latent = Tensor::full(&[cfg.noise_tokens(), cfg.patch_dim()], 0.3);
        let (_, cams) = model.predict(&seq, 0.5, &latent, &[0]).unwrap();
        for (raw, mask) in cams[0].iter().zip(&prepared.masks) {
            let argmax = raw
                .data()
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0;
            hits += mask.cells()[argmax] as usize;
            total += 1;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn regional_positions_localize_untrained_maps() {
    let regional = locality_rate(PositionMode::Regional, 0..100);
    let default = locality_rate(PositionMode::Default, 0..100);
    assert!(regional >= 0.9, "regional {regional}, default {default}");
    assert!(default < 0.5, "regional {regional}, default {default}");
}
