use ldit_core::layout::{
    coverage_ratio, generate_layout, parse_layout, raster_coverage, script_lattice, serialize_layout, Character,
    GeneratorConfig, LayoutBox, LayoutScores, LayoutThresholds, PageLayout, PanelSpec,
};
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

fn unit_box() -> impl Strategy<Value = LayoutBox> {
    (0.0f64..0.95, 0.0f64..0.95, 0.01f64..1.0, 0.01f64..1.0).prop_map(|(x, y, w, h)| LayoutBox {
        x0: x,
        y0: y,
        x1: (x + w).min(1.0),
        y1: (y + h).min(1.0),
    })
}

fn page_of(boxes: &[LayoutBox]) -> PageLayout {
    PageLayout {
        panels: boxes
            .iter()
            .enumerate()
            .map(|(k, b)| PanelSpec {
                panel_box: *b,
                characters: Vec::new(),
                caption: format!("panel {k}"),
            })
            .collect(),
        aspect_ratio: 1.0,
    }
}

/// A valid page: panels from a generated layout plus characters scattered
/// inside them with awkward coordinates.
fn page_strategy() -> impl Strategy<Value = PageLayout> {
    (
        proptest::collection::vec(0usize..=3, 1..=6),
        any::<u64>(),
        0.3f64..3.0,
        proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.3f64..1.0, 0.3f64..1.0), 0..=12),
    )
        .prop_map(|(script, seed, aspect, chars)| {
            let mut page = generate_layout(&script, aspect, seed, &GeneratorConfig::default()).unwrap();
            let np = page.panels.len();
            for (k, (u, v, fw, fh)) in chars.into_iter().enumerate() {
                let p = &mut page.panels[k % np];
                let b = p.panel_box;
                let (w, h) = (b.width() * fw * 0.5, b.height() * fh * 0.5);
                let x0 = b.x0 + u * (b.width() - w);
                let y0 = b.y0 + v * (b.height() - h);
                p.characters.push(Character {
                    id: format!("x{k}"),
                    bbox: LayoutBox {
                        x0,
                        y0,
                        x1: x0 + w,
                        y1: y0 + h,
                    },
                });
            }
            page.aspect_ratio = aspect / 3.0;
            page
        })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn union_area_matches_rasterization(boxes in proptest::collection::vec(unit_box(), 1..=12)) {
        let page = page_of(&boxes);
        let exact = coverage_ratio(&page);
        let raster = raster_coverage(&page, 1000);
        prop_assert!((exact - raster).abs() <= 5e-3, "exact {exact}, raster {raster}");
    }

    #[test]
    fn coverage_grows_with_panels_and_ignores_duplicates(
        boxes in proptest::collection::vec(unit_box(), 1..=11), extra in unit_box(), dup in any::<prop::sample::Index>(),
    ) {
        let base = coverage_ratio(&page_of(&boxes));
        let mut more = boxes.clone();
        more.push(extra);
        let grown = coverage_ratio(&page_of(&more));
        // New edges reorder the floating-point sums.
        prop_assert!(grown >= base - 1e-12, "{grown} < {base}");
        let mut twice = boxes.clone();
        twice.push(boxes[dup.index(boxes.len())]);
        prop_assert_eq!(coverage_ratio(&page_of(&twice)), base);
    }

    #[test]
    fn serialization_is_stable(page in page_strategy()) {
        let once = serialize_layout(&page);
        let parsed = parse_layout(&once).unwrap();
        prop_assert_eq!(serialize_layout(&parsed), once);
        prop_assert_eq!(parsed.panels.len(), page.panels.len());
    }

    #[test]
    fn generated_pages_are_valid(
        script in proptest::collection::vec(0usize..=4, 1..=12), seed in any::<u64>(), aspect in 0.3f64..3.0,
    ) {
        let page = generate_layout(&script, aspect, seed, &GeneratorConfig::default()).unwrap();
        page.validate(&LayoutThresholds::default()).unwrap();
        prop_assert_eq!(page.panels.len(), script.len());
        let counts: Vec<usize> = page.panels.iter().map(|p| p.characters.len()).collect();
        prop_assert_eq!(counts, script);
    }
}

#[test]
fn lattice_profile() {
    let th = LayoutThresholds::default();
    let cases = script_lattice(200);
    let pages: Vec<PageLayout> = cases
        .iter()
        .map(|c| generate_layout(&c.script, c.aspect_ratio, c.seed, &GeneratorConfig::default()).unwrap())
        .collect();
    for (c, p) in cases.iter().zip(&pages) {
        p.validate(&th).unwrap_or_else(|e| panic!("{c:?}: {e}"));
    }
    let scripts: Vec<Vec<usize>> = cases.into_iter().map(|c| c.script).collect();
    let s = LayoutScores::compute(&pages, &scripts, &th).unwrap();
    assert_eq!(s.panel_count, 100.0);
    assert_eq!(s.panel_ordering, 100.0);
    assert_eq!(s.valid_character, 100.0);
    assert_eq!(s.character_count, 100.0);
    assert!(s.coverage_ratio >= 0.75, "{s:?}");
}
