use indexmap::IndexMap;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{FeatureDef, FeatureSchema};

fn schema() -> FeatureSchema {
    let features = vec![
        FeatureDef::categorical("a", 7),
        FeatureDef::categorical("b", 5),
        FeatureDef::categorical("c", 3),
        FeatureDef::continuous("n"),
    ];
    FeatureSchema::new(features, vec!["t".into()], IndexMap::new())
        .unwrap()
        .with_embedding_dim(2)
}

fn state(spec: &FimSpec, width: usize, seed: u64) -> FimState<f64> {
    FimState::build(spec, width, Some(&schema()), seed).unwrap()
}

fn set(st: &mut FimState<f64>, name: &str, value: Array2<f64>) {
    let slot = st.params.require_mut(&format!("fim.{name}")).unwrap();
    assert_eq!(slot.dim(), value.dim(), "{name}");
    slot.assign(&value);
}

fn no_ids(rows: usize) -> Array2<usize> {
    Array2::zeros((rows, 0))
}

fn random_x(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn random_ids(rows: usize, seed: u64) -> Array2<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = [7, 5, 3];
    Array2::from_shape_fn((rows, 3), |(_, c)| rng.random_range(0..vocab[c]))
}

// ---------- parameter counts ----------

#[test]
fn mlp_count_matches_arithmetic() {
    assert_eq!(MlpLayout { widths: vec![4, 3, 2] }.parameter_count(), 23);
    assert_eq!(MlpLayout { widths: vec![4] }.parameter_count(), 0);
}

#[test]
fn counts_match_allocated_scalars() {
    for kind in FimKind::ALL {
        let spec = FimSpec::new(kind).with_output_dim(5);
        let mut spec = spec;
        spec.codebook_size = 64;
        spec.mask_hidden = Some(12);
        let st = state(&spec, 6, 1);
        assert_eq!(st.parameter_count(), st.params.scalar_count(), "{kind}");
    }
    let mut spec = FimSpec::new(FimKind::Gdcn).with_output_dim(4);
    spec.rank = Some(2);
    let st = state(&spec, 6, 1);
    assert_eq!(st.parameter_count(), st.params.scalar_count());
}

#[test]
fn every_kind_meets_a_shared_budget() {
    for budget in [5_000usize, 20_000, 80_000] {
        let counts: Vec<usize> = FimKind::ALL
            .into_iter()
            .map(|kind| {
                let spec = FimSpec::new(kind).with_output_dim(16).with_budget(budget);
                let fim = Fim::resolve(&spec, 8, Some(&schema()), "fim").unwrap();
                let dev = (fim.parameter_count() as f64 - budget as f64).abs() / budget as f64;
                assert!(dev <= BUDGET_TOLERANCE, "{kind} {} vs {budget}", fim.parameter_count());
                fim.parameter_count()
            })
            .collect();
        let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        assert!((hi - lo) as f64 / lo as f64 <= 0.25, "{counts:?}");
    }
}

#[test]
fn gdcn_budget_below_full_rank_uses_factorization() {
    let spec = FimSpec::new(FimKind::Gdcn).with_output_dim(4).with_budget(9_000);
    let fim = Fim::resolve(&spec, 64, None, "g").unwrap();
    match fim.layout {
        FimLayout::Gdcn(l) => assert!(l.rank.is_some()),
        _ => unreachable!(),
    }
}

#[test]
fn unreachable_budget_is_rejected() {
    // Projection alone exceeds the budget by far.
    let spec = FimSpec::new(FimKind::Gdcn).with_output_dim(512).with_budget(100);
    assert!(matches!(Fim::resolve(&spec, 64, None, "g"), Err(Error::Build(_))));
}

// ---------- MLP ----------

#[test]
fn mlp_zero_weights_give_zero_output() {
    let mut spec = FimSpec::new(FimKind::Mlp).with_output_dim(3);
    spec.hidden = Some(vec![4]);
    let mut st = state(&spec, 2, 0);
    for (_, v) in st.params.iter_mut() {
        v.fill(0.0);
    }
    let y = st.forward(&random_x(5, 2, 1), &no_ids(5)).unwrap();
    assert!(y.iter().all(|v| *v == 0.0));
}

#[test]
fn mlp_identity_layer_copies_input() {
    let mut spec = FimSpec::new(FimKind::Mlp).with_output_dim(3);
    spec.hidden = Some(vec![]);
    let mut st = state(&spec, 3, 0);
    set(&mut st, "l0.w", Array2::eye(3));
    set(&mut st, "l0.b", Array2::zeros((1, 3)));
    let x = array![[1.0, -2.0, 0.5], [-3.0, 0.0, 4.0]];
    assert_eq!(st.forward(&x, &no_ids(2)).unwrap(), x);
}

#[test]
fn mlp_matches_hand_computation() {
    let mut spec = FimSpec::new(FimKind::Mlp).with_output_dim(3);
    spec.hidden = Some(vec![]);
    let mut st = state(&spec, 2, 0);
    set(&mut st, "l0.w", array![[1.0, 0.0, -1.0], [0.5, 1.0, 2.0]]);
    set(&mut st, "l0.b", array![[0.0, -1.0, 0.5]]);
    let y = st.forward(&array![[1.0, 2.0]], &no_ids(1)).unwrap();
    assert_eq!(y, array![[2.0, 1.0, 3.5]]);
}

#[test]
fn mlp_hidden_layer_applies_relu() {
    let mut spec = FimSpec::new(FimKind::Mlp).with_output_dim(1);
    spec.hidden = Some(vec![2]);
    let mut st = state(&spec, 1, 0);
    set(&mut st, "l0.w", array![[1.0, -1.0]]);
    set(&mut st, "l0.b", array![[0.0, 0.0]]);
    set(&mut st, "l1.w", array![[1.0], [10.0]]);
    set(&mut st, "l1.b", array![[0.0]]);
    // x = 2: hidden (2, -2) → (2, 0) → 2
    assert_eq!(st.forward(&array![[2.0]], &no_ids(1)).unwrap(), array![[2.0]]);
}

#[test]
fn width_mismatch_is_an_error() {
    for kind in [FimKind::Mlp, FimKind::Gdcn, FimKind::MaskNet] {
        let mut spec = FimSpec::new(kind).with_output_dim(2);
        spec.mask_hidden = Some(4);
        let st = state(&spec, 3, 0);
        let err = st.forward(&random_x(2, 4, 0), &no_ids(2)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{kind}: {err}");
    }
}

// ---------- GDCN ----------

/// Straight-loop re-implementation of the gated cross network.
fn gdcn_oracle(st: &FimState<f64>, x: &[f64], layers: usize) -> Vec<f64> {
    let p = |n: &str| st.params.require(&format!("fim.{n}")).unwrap().clone();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let w = x.len();
    let mut c = x.to_vec();
    for l in 0..layers {
        let (wc, bc, wg, bg) = (p(&format!("x{l}.wc")), p(&format!("x{l}.bc")), p(&format!("x{l}.wg")), p(&format!("x{l}.bg")));
        let mut next = vec![0.0; w];
        for j in 0..w {
            let mut cross = bc[[0, j]];
            let mut gate = bg[[0, j]];
            for i in 0..w {
                cross += c[i] * wc[[i, j]];
                gate += c[i] * wg[[i, j]];
            }
            next[j] = x[j] * cross * sig(gate) + c[j];
        }
        c = next;
    }
    let (pw, pb) = (p("proj.w"), p("proj.b"));
    (0..pw.ncols())
        .map(|o| pb[[0, o]] + (0..w).map(|i| c[i] * pw[[i, o]]).sum::<f64>())
        .collect()
}

#[test]
fn gdcn_matches_hand_computation() {
    let mut spec = FimSpec::new(FimKind::Gdcn).with_output_dim(1);
    spec.cross_layers = 1;
    let mut st = state(&spec, 3, 0);
    set(&mut st, "x0.wc", Array2::eye(3));
    set(&mut st, "x0.bc", Array2::zeros((1, 3)));
    set(&mut st, "x0.wg", Array2::zeros((3, 3)));
    set(&mut st, "x0.bg", Array2::zeros((1, 3)));
    set(&mut st, "proj.w", Array2::ones((3, 1)));
    set(&mut st, "proj.b", Array2::zeros((1, 1)));
    // c1 = x ⊙ x ⊙ ½ + x = (1.5, -0.5, 4)
    let y = st.forward(&array![[1.0, -1.0, 2.0]], &no_ids(1)).unwrap();
    assert_eq!(y, array![[5.0]]);
}

#[test]
fn gdcn_matches_loop_oracle() {
    let st = state(&FimSpec::new(FimKind::Gdcn).with_output_dim(4), 5, 11);
    let x = random_x(3, 5, 2);
    let y = st.forward(&x, &no_ids(3)).unwrap();
    for r in 0..3 {
        let want = gdcn_oracle(&st, x.row(r).as_slice().unwrap(), 2);
        for (a, b) in y.row(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn gdcn_zero_cross_weights_reduce_to_projection() {
    let mut st = state(&FimSpec::new(FimKind::Gdcn).with_output_dim(2), 3, 4);
    for l in 0..2 {
        set(&mut st, &format!("x{l}.wc"), Array2::zeros((3, 3)));
        set(&mut st, &format!("x{l}.bc"), Array2::zeros((1, 3)));
    }
    let x = random_x(4, 3, 5);
    let y = st.forward(&x, &no_ids(4)).unwrap();
    let want = x.dot(st.params.require("fim.proj.w").unwrap()) + st.params.require("fim.proj.b").unwrap();
    assert!((y - want).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn gdcn_saturated_gate_is_identity() {
    let mut st = state(&FimSpec::new(FimKind::Gdcn).with_output_dim(2), 3, 4);
    for l in 0..2 {
        set(&mut st, &format!("x{l}.wg"), Array2::zeros((3, 3)));
        set(&mut st, &format!("x{l}.bg"), Array2::from_elem((1, 3), -1e4));
    }
    let x = random_x(4, 3, 5);
    let y = st.forward(&x, &no_ids(4)).unwrap();
    let want = x.dot(st.params.require("fim.proj.w").unwrap()) + st.params.require("fim.proj.b").unwrap();
    assert_eq!(y, want);
}

#[test]
fn gdcn_low_rank_equals_full_rank_with_product_matrix() {
    let mut spec = FimSpec::new(FimKind::Gdcn).with_output_dim(2);
    spec.rank = Some(2);
    let low = state(&spec, 4, 9);
    let mut full = state(&FimSpec::new(FimKind::Gdcn).with_output_dim(2), 4, 9);
    for (name, v) in low.params.iter() {
        if let Some(slot) = full.params.get_mut(name) {
            slot.assign(v);
        }
    }
    for l in 0..2 {
        let u = low.params.require(&format!("fim.x{l}.u")).unwrap();
        let v = low.params.require(&format!("fim.x{l}.v")).unwrap();
        set(&mut full, &format!("x{l}.wc"), u.dot(v));
    }
    let x = random_x(3, 4, 1);
    let d = low.forward(&x, &no_ids(3)).unwrap() - full.forward(&x, &no_ids(3)).unwrap();
    assert!(d.iter().all(|v| v.abs() < 1e-12));
}

// ---------- MaskNet ----------

fn tiny_masknet() -> FimState<f64> {
    let mut spec = FimSpec::new(FimKind::MaskNet).with_output_dim(1);
    spec.mask_hidden = Some(2);
    spec.mask_bottleneck = Some(1);
    state(&spec, 2, 0)
}

#[test]
fn masknet_matches_hand_computation() {
    let mut st = tiny_masknet();
    set(&mut st, "mask0.w", array![[1.0], [0.0]]);
    set(&mut st, "mask0.b", array![[0.0]]);
    set(&mut st, "mask1.w", array![[2.0, 1.0]]);
    set(&mut st, "mask1.b", array![[0.0, 0.0]]);
    set(&mut st, "hidden.w", Array2::eye(2));
    set(&mut st, "hidden.b", array![[0.0, 0.0]]);
    set(&mut st, "out.w", array![[1.0], [1.0]]);
    set(&mut st, "out.b", array![[0.5]]);
    // mask (2, 1); LN(1, 3) = (-1, 1)/√(1+ε); ⊙ mask, ReLU → (0, 1/√(1+ε))
    let y = st.forward(&array![[1.0, 3.0]], &no_ids(1)).unwrap();
    let want = 0.5 + 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y[[0, 0]] - want).abs() < 1e-12, "{y}");
}

fn masknet_plain_path(st: &FimState<f64>, x: &Array2<f64>, mask: f64) -> Array2<f64> {
    let p = |n: &str| st.params.require(&format!("fim.{n}")).unwrap().clone();
    let h = x.dot(&p("hidden.w")) + p("hidden.b");
    let mut z = h.clone();
    for mut row in z.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        row.mapv_inplace(|v| (v - mean) / (var + 1e-5).sqrt());
    }
    let z = (z * p("ln.gamma") + p("ln.beta")).mapv(|v| (v * mask).max(0.0));
    z.dot(&p("out.w")) + p("out.b")
}

#[test]
fn masknet_neutral_mask_is_plain_ln_path() {
    let mut spec = FimSpec::new(FimKind::MaskNet).with_output_dim(3);
    spec.mask_hidden = Some(6);
    let mut st = state(&spec, 4, 3);
    set(&mut st, "mask1.w", Array2::zeros((2, 6)));
    set(&mut st, "mask1.b", Array2::ones((1, 6)));
    let x = random_x(5, 4, 8);
    let d = st.forward(&x, &no_ids(5)).unwrap() - masknet_plain_path(&st, &x, 1.0);
    assert!(d.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn masknet_zero_mask_leaves_bias() {
    let mut spec = FimSpec::new(FimKind::MaskNet).with_output_dim(3);
    spec.mask_hidden = Some(6);
    let mut st = state(&spec, 4, 3);
    set(&mut st, "mask1.w", Array2::zeros((2, 6)));
    set(&mut st, "mask1.b", Array2::zeros((1, 6)));
    set(&mut st, "out.b", array![[0.1, -0.2, 0.3]]);
    let y = st.forward(&random_x(4, 4, 8), &no_ids(4)).unwrap();
    for row in y.rows() {
        assert_eq!(row.to_vec(), vec![0.1, -0.2, 0.3]);
    }
}

#[test]
fn masknet_default_widths() {
    let fim = Fim::resolve(&FimSpec::new(FimKind::MaskNet), 40, None, "m").unwrap();
    assert_eq!(
        fim.layout,
        FimLayout::MaskNet(MaskNetLayout {
            hidden: DEFAULT_MASK_HIDDEN,
            bottleneck: DEFAULT_MASK_HIDDEN / 4
        })
    );
    assert_eq!(fim.output_dim, 512);
}

// ---------- MemoNet ----------

fn memonet(seed: u64) -> FimState<f64> {
    let mut spec = FimSpec::new(FimKind::MemoNet).with_output_dim(3);
    spec.codebook_size = 32;
    spec.code_dim = 2;
    spec.pairs = Some(vec![["a".into(), "b".into()]]);
    state(&spec, 0, seed)
}

#[test]
fn memonet_zero_codebooks_give_bias() {
    let mut st = memonet(1);
    set(&mut st, "cb1", Array2::zeros((32, 2)));
    set(&mut st, "cb2", Array2::zeros((32, 2)));
    set(&mut st, "proj.b", array![[1.0, 2.0, 3.0]]);
    let y = st.forward(&Array2::zeros((2, 0)), &random_ids(2, 0)).unwrap();
    assert_eq!(y, array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
}

#[test]
fn memonet_matches_codebook_lookup() {
    let st = memonet(2);
    let ids = random_ids(4, 3);
    let y = st.forward(&Array2::zeros((4, 0)), &ids).unwrap();
    let p = |n: &str| st.params.require(&format!("fim.{n}")).unwrap().clone();
    for r in 0..4 {
        let (s1, s2) = hash_slots_for(0, ids[[r, 0]], ids[[r, 1]], 32);
        let code = &p("cb1").row(s1) + &p("cb2").row(s2);
        let want = code.dot(&p("proj.w")) + p("proj.b").row(0);
        let d = &y.row(r) - &want;
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }
}

fn hash_slots_for(pair: usize, a: usize, b: usize, size: usize) -> (usize, usize) {
    memonet::hash_slots(memonet::pair_key(pair, a, b), size)
}

#[test]
fn memonet_ignores_unselected_fields_and_is_deterministic() {
    let st = memonet(4);
    let mut ids = random_ids(6, 7);
    let x = Array2::zeros((6, 0));
    let y1 = st.forward(&x, &ids).unwrap();
    ids.column_mut(2).mapv_inplace(|v| (v + 1) % 3);
    let y2 = st.forward(&x, &ids).unwrap();
    assert_eq!(y1, y2);
    assert_eq!(y1, st.forward(&x, &ids).unwrap());
}

#[test]
fn memonet_default_fields_pair_all_categoricals() {
    let mut spec = FimSpec::new(FimKind::MemoNet).with_output_dim(2);
    spec.codebook_size = 16;
    let fim = Fim::resolve(&spec, 0, Some(&schema()), "m").unwrap();
    match fim.layout {
        FimLayout::MemoNet(l) => assert_eq!(l.pairs, vec![(0, 1), (0, 2), (1, 2)]),
        _ => unreachable!(),
    }
}

#[test]
fn memonet_rejects_unknown_or_continuous_fields() {
    let mut spec = FimSpec::new(FimKind::MemoNet);
    spec.pairs = Some(vec![["a".into(), "zzz".into()]]);
    assert!(matches!(
        Fim::resolve(&spec, 0, Some(&schema()), "m"),
        Err(Error::UnknownFeature(_))
    ));
    spec.pairs = Some(vec![["a".into(), "n".into()]]);
    assert!(Fim::resolve(&spec, 0, Some(&schema()), "m").is_err());
    spec.pairs = None;
    assert!(Fim::resolve(&spec, 0, None, "m").is_err());
}

#[test]
fn hash_slots_spread_over_codebook() {
    let mut hits = vec![0usize; 64];
    for a in 0..50 {
        for b in 0..50 {
            let (x, y) = hash_slots_for(0, a, b, 64);
            hits[x] += 1;
            hits[y] += 1;
        }
    }
    // 5000 draws over 64 slots: every slot used, none grossly overloaded.
    assert!(hits.iter().all(|&h| h > 20 && h < 250), "{hits:?}");
}

#[test]
fn kind_names_round_trip() {
    for kind in FimKind::ALL {
        assert_eq!(kind.as_str().parse::<FimKind>().unwrap(), kind);
        let json = serde_json::to_string(&kind).unwrap();
        assert_eq!(json, format!("\"{kind}\""));
    }
    assert!("dhen".parse::<FimKind>().is_err());
}

#[test]
fn spec_rejects_unknown_keys() {
    let ok: FimSpec = serde_json::from_str(r#"{"kind":"gdcn","rank":4}"#).unwrap();
    assert_eq!(ok.output_dim, 512);
    assert!(serde_json::from_str::<FimSpec>(r#"{"kind":"gdcn","rnak":4}"#).is_err());
}

// ---------- gradients ----------

/// Loss = mean(out ⊙ r) for fixed random r; returns the value and its kink signature.
fn probe(st: &FimState<f64>, x: &Array2<f64>, ids: &Array2<usize>, r: &Array2<f64>) -> (f64, u64, Grads<f64>) {
    let mut tape = Tape::new(&st.params);
    let xv = tape.input(x.clone());
    let out = st.fim.forward(&mut tape, &FimInput { x: xv, categorical_ids: ids }).unwrap();
    let rv = tape.input(r.clone());
    let prod = tape.mul(out, rv);
    let loss = tape.mean(prod);
    let value = tape.value(loss)[[0, 0]];
    (value, tape.kink_signature(), tape.backward(loss))
}

use crate::params::Grads;

fn grad_check(mut st: FimState<f64>, x: Array2<f64>, ids: Array2<usize>) {
    let out = st.fim.output_dim;
    let r = random_x(x.nrows(), out, 99);
    let (_, sig0, grads) = probe(&st, &x, &ids, &r);
    let h = 1e-6;
    let mut checked = 0;
    let mut worst = 0.0f64;
    for idx in 0..st.params.len() {
        let shape = st.params.by_index(idx).dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let orig = st.params.by_index(idx)[[i, j]];
                st.params.by_index_mut(idx)[[i, j]] = orig + h;
                let (fp, sp, _) = probe(&st, &x, &ids, &r);
                st.params.by_index_mut(idx)[[i, j]] = orig - h;
                let (fm, sm, _) = probe(&st, &x, &ids, &r);
                st.params.by_index_mut(idx)[[i, j]] = orig;
                if sp != sig0 || sm != sig0 {
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * h);
                let analytic = grads.at(idx, i, j);
                let scale = analytic.abs().max(numeric.abs());
                let err = if scale < 1e-7 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    assert!(checked > 20, "only {checked} coordinates checked");
    assert!(worst < 1e-4, "{}: worst relative error {worst}", st.fim.kind());
}

#[test]
fn gradients_match_finite_differences_for_every_kind() {
    for kind in FimKind::ALL {
        let mut spec = FimSpec::new(kind).with_output_dim(3);
        spec.hidden = Some(vec![4]);
        spec.mask_hidden = Some(4);
        spec.codebook_size = 8;
        spec.code_dim = 2;
        spec.pairs = Some(vec![["a".into(), "b".into()], ["b".into(), "c".into()]]);
        let st = state(&spec, 4, 21);
        grad_check(st, random_x(3, 4, 5), random_ids(3, 6));
    }
    let mut spec = FimSpec::new(FimKind::Gdcn).with_output_dim(2);
    spec.rank = Some(1);
    grad_check(state(&spec, 4, 3), random_x(3, 4, 5), no_ids(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_have_uniform_width_and_are_finite(rows in 1usize..9, seed in 0u64..1000, k in 0usize..4) {
        let kind = FimKind::ALL[k];
        let mut spec = FimSpec::new(kind).with_output_dim(5);
        spec.mask_hidden = Some(8);
        spec.codebook_size = 32;
        let st = state(&spec, 6, seed);
        let x = random_x(rows, 6, seed + 1);
        let ids = random_ids(rows, seed + 2);
        let y = st.forward(&x, &ids).unwrap();
        prop_assert_eq!(y.dim(), (rows, 5));
        prop_assert!(y.iter().all(|v| v.is_finite()));
        prop_assert_eq!(&y, &st.forward(&x, &ids).unwrap());
    }
}
