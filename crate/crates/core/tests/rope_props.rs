use ldit_core::rope::{default_coords, fit_region, regional_coords, RegionBox};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(0x1d17),
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn regional_mapping_invariants(
        h in 1usize..=16, w in 1usize..=16,
        x0 in 0.0f64..32.0, y0 in 0.0f64..32.0,
        bw in 0.05f64..32.0, bh in 0.05f64..32.0,
        a in 0.0f64..=1.0,
    ) {
        let region = RegionBox::new(x0, y0, x0 + bw, y0 + bh, a).unwrap();
        let p = fit_region((h, w), &region).unwrap();
        let coords = regional_coords::<f64>((h, w), &region).unwrap();
        prop_assert_eq!(coords.len(), h * w);

        // The fitted extent keeps the grid's aspect ratio.
        let aspect = w as f64 / h as f64;
        prop_assert!((p.width / p.height - aspect).abs() <= 1e-12 * aspect.max(1.0));

        // Equal spacing on both axes, and every coordinate inside the box.
        let t = coords.triples();
        for (k, c) in t.iter().enumerate() {
            let (j, i) = (k / w, k % w);
            prop_assert_eq!(c[0], 0.0);
            prop_assert!((c[1] - (p.w_start + p.scale * i as f64)).abs() <= 1e-9);
            prop_assert!((c[2] - (p.h_start + p.scale * j as f64)).abs() <= 1e-9);
            prop_assert!(c[1] >= region.w_start - 1e-9 && c[1] <= region.w_end + 1e-9);
            prop_assert!(c[2] >= region.h_start - 1e-9 && c[2] <= region.h_end + 1e-9);
        }
    }

    #[test]
    fn native_box_reproduces_the_lattice(h in 1usize..=16, w in 1usize..=16, a in 0.0f64..=1.0) {
        let region = RegionBox::new(0.0, 0.0, w as f64, h as f64, a).unwrap();
        let regional = regional_coords::<f64>((h, w), &region).unwrap();
        let lattice = default_coords::<f64>((h, w), 0);
        prop_assert_eq!(regional.triples(), lattice.triples());
    }

    #[test]
    fn translated_native_box_shifts_the_lattice(
        h in 1usize..=8, w in 1usize..=8, dx in 0usize..16, dy in 0usize..16,
    ) {
        let region = RegionBox::new(dx as f64, dy as f64, (dx + w) as f64, (dy + h) as f64, 0.5).unwrap();
        let regional = regional_coords::<f64>((h, w), &region).unwrap();
        let shifted = default_coords::<f64>((h, w), 0).shifted([0.0, dx as f64, dy as f64]);
        prop_assert_eq!(regional.triples(), shifted.triples());
    }
}
