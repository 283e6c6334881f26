use std::sync::Arc;

use ldit_core::numerics::{finite_difference_check, matmul, softmax_lastdim, RotationTable, Tape, Tensor, Var};
use ldit_core::Result;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;
const FLOOR: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values kept at least `gap` away from zero, so kinks stay out of
/// the differencing stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// `mean(out ⊙ w)` for a fixed random `w`, so every output element feeds
/// the scalar with a distinct weight.
fn weighted(t: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let w = t.constant(random(&mut rng, t.value(out).shape()));
    let p = t.mul(out, w)?;
    Ok(t.mean_all(p))
}

fn check<F>(build: F, params: &[Tensor<f64>]) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let r = finite_difference_check(build, params, H, TOL, FLOOR).unwrap();
    r.max_rel_error
}

fn dims() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..=8, 1usize..=8, 1usize..=8)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, rng_seed: RngSeed::Fixed(0x1d17), ..ProptestConfig::default() })]

    #[test]
    fn matmul_gradients((seed, m, k, n) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = [random(&mut rng, &[m, k]), random(&mut rng, &[k, n]), random(&mut rng, &[n, k])];
        let e = check(|t, v| { let o = t.matmul(v[0], v[1])?; weighted(t, o, seed) }, &ps[..2]);
        prop_assert!(e <= TOL, "matmul {e}");
        let e = check(|t, v| { let o = t.matmul_nt(v[0], v[1])?; weighted(t, o, seed) }, &[ps[0].clone(), ps[2].clone()]);
        prop_assert!(e <= TOL, "matmul_nt {e}");
    }

    #[test]
    fn elementwise_gradients((seed, m, n, _) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, n]);
        let b = random(&mut rng, &[m, n]);
        for (name, e) in [
            ("add", check(|t, v| { let o = t.add(v[0], v[1])?; weighted(t, o, seed) }, &[a.clone(), b.clone()])),
            ("sub", check(|t, v| { let o = t.sub(v[0], v[1])?; weighted(t, o, seed) }, &[a.clone(), b.clone()])),
            ("mul", check(|t, v| { let o = t.mul(v[0], v[1])?; weighted(t, o, seed) }, &[a.clone(), b.clone()])),
            ("scale", check(|t, v| { let o = t.scale(v[0], -2.5); weighted(t, o, seed) }, &[a.clone()])),
            ("silu", check(|t, v| { let o = t.silu(v[0]); weighted(t, o, seed) }, &[a.clone()])),
        ] {
            prop_assert!(e <= TOL, "{name} {e}");
        }
        let c = away_from_zero(&mut rng, &[m, n], 1e-2);
        let e = check(|t, v| { let o = t.relu(v[0]); weighted(t, o, seed) }, &[c]);
        prop_assert!(e <= TOL, "relu {e}");
    }

    #[test]
    fn broadcast_gradients((seed, m, n, _) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[m, n]);
        let r1 = random(&mut rng, &[1, n]);
        let r2 = random(&mut rng, &[1, n]);
        let e = check(|t, v| { let o = t.add_row(v[0], v[1])?; weighted(t, o, seed) }, &[x.clone(), r1.clone()]);
        prop_assert!(e <= TOL, "add_row {e}");
        let e = check(|t, v| { let o = t.mul_row(v[0], v[1])?; weighted(t, o, seed) }, &[x.clone(), r1.clone()]);
        prop_assert!(e <= TOL, "mul_row {e}");
        let e = check(|t, v| { let o = t.modulate(v[0], v[1], v[2])?; weighted(t, o, seed) }, &[x, r1, r2]);
        prop_assert!(e <= TOL, "modulate {e}");
    }

    #[test]
    fn normalization_gradients((seed, m, n, _) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n.max(2);
        let x = random(&mut rng, &[m, n]);
        // Rows with small variance make the stencil's truncation error blow up.
        let spread = Tensor::from_fn(&[m, n], |i| (i % n) as f64 * 0.4 + x.data()[i] * 0.1);
        let e = check(|t, v| { let o = t.layer_norm(v[0], 1e-6); weighted(t, o, seed) }, &[spread]);
        prop_assert!(e <= TOL, "layer_norm {e}");
        let e = check(|t, v| { let o = t.softmax(v[0], None)?; weighted(t, o, seed) }, &[x.clone()]);
        prop_assert!(e <= TOL, "softmax {e}");
        // Hide a random subset, keeping at least one visible entry per row.
        let mask: Vec<bool> = (0..m * n).map(|i| i % n == 0 || rng.random_bool(0.6)).collect();
        let e = check(|t, v| { let o = t.softmax(v[0], Some(&mask))?; weighted(t, o, seed) }, &[x]);
        prop_assert!(e <= TOL, "masked softmax {e}");
    }

    #[test]
    fn reduction_gradients((seed, m, n, _) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[m, n]);
        let e = check(|t, v| { let o = t.mean_rows(v[0]); weighted(t, o, seed) }, &[x.clone()]);
        prop_assert!(e <= TOL, "mean_rows {e}");
        let e = check(|t, v| { let o = t.mean_all(v[0]); weighted(t, o, seed) }, &[x]);
        prop_assert!(e <= TOL, "mean_all {e}");
        // Distinct, well separated values keep the extremes fixed under ±h.
        let mut vals: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.1).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let y = Tensor::new(vec![m, n], vals).unwrap();
        let e = check(|t, v| { let o = t.minmax_normalize(v[0]); weighted(t, o, seed) }, &[y]);
        prop_assert!(e <= TOL, "minmax {e}");
    }

    #[test]
    fn layout_gradients((seed, m, n, k) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[m, n]);
        let y = random(&mut rng, &[k, n]);
        let z = random(&mut rng, &[m, k]);
        let (start, len) = (m / 3, m - m / 3);
        let e = check(|t, v| { let o = t.slice_rows(v[0], start, len)?; weighted(t, o, seed) }, &[x.clone()]);
        prop_assert!(e <= TOL, "slice_rows {e}");
        let (cs, cl) = (n / 2, n - n / 2);
        let e = check(|t, v| { let o = t.slice_cols(v[0], cs, cl)?; weighted(t, o, seed) }, &[x.clone()]);
        prop_assert!(e <= TOL, "slice_cols {e}");
        let e = check(|t, v| { let o = t.concat_rows(&[v[0], v[1], v[0]])?; weighted(t, o, seed) }, &[x.clone(), y]);
        prop_assert!(e <= TOL, "concat_rows {e}");
        let e = check(|t, v| { let o = t.concat_cols(&[v[1], v[0]])?; weighted(t, o, seed) }, &[x.clone(), z]);
        prop_assert!(e <= TOL, "concat_cols {e}");
        let ids: Vec<usize> = (0..k + 2).map(|_| rng.random_range(0..m)).collect();
        let e = check(|t, v| { let o = t.gather_rows(v[0], &ids)?; weighted(t, o, seed) }, &[x]);
        prop_assert!(e <= TOL, "gather_rows {e}");
    }

    #[test]
    fn rotation_gradients((seed, m, pairs, _) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[m, 2 * pairs]);
        let angles: Vec<f64> = (0..m * pairs).map(|_| rng.random_range(-4.0..4.0)).collect();
        let table = Arc::new(RotationTable {
            tokens: m,
            pairs,
            cos: angles.iter().map(|a| a.cos()).collect(),
            sin: angles.iter().map(|a| a.sin()).collect(),
        });
        let e = check(|t, v| { let o = t.rotate_pairs(v[0], table.clone())?; weighted(t, o, seed) }, &[x]);
        prop_assert!(e <= TOL, "rotate_pairs {e}");
    }

    #[test]
    fn matmul_identity_and_associativity((seed, m, k, n) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let c = random(&mut rng, &[n, 3]);
        prop_assert_eq!(&matmul(&a, &Tensor::identity(k)).unwrap(), &a);
        prop_assert_eq!(&matmul(&Tensor::identity(m), &a).unwrap(), &a);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_rows_and_shift((seed, m, n, _) in dims(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[m, n]);
        let s = softmax_lastdim(&x);
        for r in 0..m {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
        let shifted = softmax_lastdim(&x.map(|v| v + shift));
        prop_assert!(s.max_abs_diff(&shifted).unwrap() <= 1e-12);
    }

    #[test]
    fn backward_is_deterministic((seed, m, k, n) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let run = || {
            let mut t = Tape::new();
            let (va, vb) = (t.param(a.clone()), t.param(b.clone()));
            let o = t.matmul(va, vb).unwrap();
            let o = t.softmax(o, None).unwrap();
            let l = weighted(&mut t, o, seed).unwrap();
            let g = t.backward(l).unwrap();
            (t.value(l).clone(), g.get(va), g.get(vb))
        };
        prop_assert_eq!(run(), run());
    }
}
