use indexmap::IndexMap;
use ndarray::{array, Array2};

use super::*;
use crate::data::{generate_synthetic, Dataset, ExampleBatch, FeatureDef, FeatureSchema, SyntheticSpec};
use crate::interactions::{FimKind, FimSpec};
use crate::training::{gradient_check, GradCheckConfig};
use crate::Error;

const OUT: usize = 8;

fn small_spec(kind: FimKind) -> FimSpec {
    let mut s = FimSpec::new(kind).with_output_dim(OUT);
    s.hidden = Some(vec![8]);
    s.mask_hidden = Some(8);
    s.codebook_size = 64;
    s.code_dim = 4;
    s.pairs = Some(vec![["ctr_cat_a".into(), "ctr_cat_b".into()], ["cvr_cat_a".into(), "cvr_cat_b".into()]]);
    s
}

fn small_config(kind: Architecture) -> ModelConfig {
    let mut c = ModelConfig::new(kind).with_output_dim(OUT);
    c.tower_hidden = vec![8];
    let mixed = vec![small_spec(FimKind::MaskNet), small_spec(FimKind::Gdcn), small_spec(FimKind::MemoNet)];
    let mlp = vec![small_spec(FimKind::Mlp); 2];
    match kind {
        Architecture::SharedBottom => c.shared_modules = Some(vec![small_spec(FimKind::Mlp)]),
        Architecture::Mmoe => c.shared_modules = Some(mlp),
        Architecture::Ple => {
            c.shared_modules = Some(mlp.clone());
            c.task_modules = Some(mlp);
        }
        Architecture::Sfm => {
            c.stack = Some(small_spec(FimKind::MaskNet));
            c.shared_modules = Some(mlp);
        }
        Architecture::Tfi | Architecture::Dtn => {
            c.shared_modules = Some(mixed.clone());
            c.task_modules = Some(mixed);
        }
    }
    c
}

fn data(n: usize) -> (Dataset, Dataset) {
    let (train, test, _, _) = generate_synthetic(n, n, &SyntheticSpec::divergence(), 3).unwrap();
    (train, test)
}

fn build(kind: Architecture, seed: u64) -> (ModelGraph<f64>, Dataset) {
    let (train, _) = data(40);
    let model = ModelGraph::build(&small_config(kind), train.schema(), seed).unwrap();
    (model, train)
}

fn batch(d: &Dataset) -> ExampleBatch {
    d.data().clone()
}

// ---------- structure ----------

#[test]
fn shared_bottom_has_one_trunk_and_no_gates() {
    let (m, _) = build(Architecture::SharedBottom, 0);
    assert_eq!(m.graph.gate_count(), 0);
    assert_eq!(m.graph.sets.len(), 1);
    assert_eq!(m.graph.sets[0].modules.len(), 1);
    for t in &m.graph.tasks {
        assert_eq!(t.inputs, vec![TowerPart::Module { set: 0, module: 0 }]);
    }
}

#[test]
fn dtn_has_two_gates_per_task_and_double_width_towers() {
    let (train, _) = data(10);
    let mut c = ModelConfig::new(Architecture::Dtn);
    let mut mlp = FimSpec::new(FimKind::Mlp);
    mlp.hidden = Some(vec![4]);
    c.shared_modules = Some(vec![mlp.clone()]);
    c.task_modules = Some(vec![mlp]);
    c.tower_hidden = vec![4];
    let m: ModelGraph<f32> = ModelGraph::build(&c, train.schema(), 0).unwrap();
    assert_eq!(m.graph.gate_count(), 4);
    for t in 0..2 {
        assert_eq!(m.graph.tower_input_width(t), 2 * 512);
        assert_eq!(m.graph.tasks[t].tower.input_width, 1024);
    }
    // cvr's other gate reads ctr's set scaled by pred_ctr, then the shared set.
    let other = m.graph.gates.iter().find(|g| g.task == 1 && g.role == GateRole::Other).unwrap();
    assert_eq!(
        other.candidates,
        vec![
            Candidate { set: 1, module: 0, scaled_by: Some(0) },
            Candidate { set: 0, module: 0, scaled_by: None }
        ]
    );
    let ctr_other = m.graph.gates.iter().find(|g| g.task == 0 && g.role == GateRole::Other).unwrap();
    assert_eq!(ctr_other.candidates, vec![Candidate { set: 0, module: 0, scaled_by: None }]);
}

#[test]
fn default_dtn_spreads_twelve_modules_over_three_sets() {
    let c = ModelConfig::new(Architecture::Dtn).resolved(2);
    assert_eq!(c.shared_modules.as_ref().unwrap().len(), 4);
    assert_eq!(c.task_modules.as_ref().unwrap().len(), 4);
    let kinds: Vec<FimKind> = c.task_modules.unwrap().iter().map(|s| s.kind).collect();
    assert_eq!(kinds, vec![FimKind::MaskNet, FimKind::Gdcn, FimKind::MemoNet, FimKind::MaskNet]);
}

#[test]
fn every_architecture_builds_and_predicts_probabilities() {
    for kind in Architecture::ALL {
        let (m, d) = build(kind, 1);
        assert_eq!(m.parameter_count(), m.graph.parameter_count(), "{kind}");
        let p = m.forward(&batch(&d)).unwrap();
        assert_eq!(p.dim(), (d.len(), 2));
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0), "{kind}");
    }
}

#[test]
fn total_budget_is_met() {
    // Large enough that every module kind can reach its share on a 72-wide input.
    const BUDGET: usize = 150_000;
    let (train, _) = data(10);
    for kind in Architecture::ALL {
        let mut c = small_config(kind);
        for spec in c
            .shared_modules
            .iter_mut()
            .flatten()
            .chain(c.task_modules.iter_mut().flatten())
            .chain(c.stack.iter_mut())
        {
            spec.hidden = None;
            spec.mask_hidden = None;
        }
        c.parameter_budget = Some(BUDGET);
        let m: ModelGraph<f64> = ModelGraph::build(&c, train.schema(), 0).unwrap();
        let dev = (m.parameter_count() as f64 - BUDGET as f64).abs() / BUDGET as f64;
        assert!(dev <= 0.10, "{kind}: {}", m.parameter_count());
    }
}

#[test]
fn build_errors() {
    let (train, _) = data(10);
    let schema = train.schema();
    let mut c = small_config(Architecture::Ple);
    c.task_modules = Some(vec![]);
    assert!(matches!(ModelGraph::<f64>::build(&c, schema, 0), Err(Error::Build(_))));

    let mut c = small_config(Architecture::Dtn);
    c.shared_modules.as_mut().unwrap()[0].output_dim = OUT + 1;
    assert!(matches!(ModelGraph::<f64>::build(&c, schema, 0), Err(Error::Build(_))));

    let mut c = small_config(Architecture::Dtn);
    let mut deps = IndexMap::new();
    deps.insert("ctr".to_string(), Some("cvr".to_string()));
    c.task_dependencies = Some(deps);
    assert!(ModelGraph::<f64>::build(&c, schema, 0).is_err());

    assert!("dhen".parse::<Architecture>().is_err());
    assert_eq!("ple".parse::<Architecture>().unwrap(), Architecture::Ple);

    let mut c = small_config(Architecture::SharedBottom);
    c.shared_modules = Some(vec![small_spec(FimKind::Mlp); 2]);
    assert!(ModelGraph::<f64>::build(&c, schema, 0).is_err());
}

// ---------- gates ----------

#[test]
fn gate_forward_cases() {
    let sel = array![[0.3, -0.7]];
    let c = |v: f64| array![[v, 2.0 * v]];

    let (w, s) = gate_forward(&Array2::zeros((2, 1)), None, &sel, &[c(1.5)]).unwrap();
    assert_eq!(w, array![[1.0]]);
    assert_eq!(s, c(1.5));

    let (w, _) = gate_forward(&Array2::zeros((2, 4)), Some(&Array2::zeros((1, 4))), &sel, &[c(1.0), c(2.0), c(3.0), c(4.0)]).unwrap();
    assert!(w.iter().all(|v| *v == 0.25));

    let (w, s) = gate_forward(&Array2::zeros((2, 3)), Some(&array![[1.0, 2.0, 3.0]]), &sel, &[c(1.0), c(2.0), c(3.0)]).unwrap();
    let want = [0.0900, 0.2447, 0.6652];
    for (a, b) in w.iter().zip(want) {
        assert!((a - b).abs() < 5e-5, "{a} vs {b}");
    }
    let mix = w[[0, 0]] + 2.0 * w[[0, 1]] + 3.0 * w[[0, 2]];
    assert!((s[[0, 0]] - mix).abs() < 1e-15);

    assert!(matches!(
        gate_forward(&Array2::zeros((2, 3)), None, &sel, &[c(1.0), c(2.0)]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn gate_weights_sum_to_one_per_example() {
    for kind in [Architecture::Mmoe, Architecture::Ple, Architecture::Sfm, Architecture::Tfi, Architecture::Dtn] {
        let (m, d) = build(kind, 2);
        let out = m.forward_with(&batch(&d), &ForwardOptions::default()).unwrap();
        for w in &out.gate_weights {
            for row in w.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|v| *v >= 0.0));
            }
        }
    }
}

#[test]
fn extracted_gate_weights() {
    let (mut m, d) = build(Architecture::Dtn, 3);
    for g in m.graph.gates.clone() {
        m.params.require_mut(&format!("{}.w", g.prefix)).unwrap().fill(0.0);
        m.params.require_mut(&format!("{}.b", g.prefix)).unwrap().fill(0.0);
    }
    let reports = m.extract_gate_weights(&d, 16).unwrap();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        let k = r.candidates.len() as f64;
        for w in &r.mean_weights {
            assert!((w - 1.0 / k).abs() < 1e-12);
        }
    }
    let (m, d) = build(Architecture::Tfi, 3);
    for r in m.extract_gate_weights(&d, 7).unwrap() {
        assert!((r.mean_weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let (m, d) = build(Architecture::SharedBottom, 3);
    assert!(m.extract_gate_weights(&d, 7).is_err());
}

// ---------- forward semantics ----------

/// Two features (one categorical, one continuous, width 1 each), one MLP per set,
/// linear towers: every number below is worked out by hand.
#[test]
fn micro_dtn_matches_hand_computation() {
    let features = vec![FeatureDef::categorical("c", 2), FeatureDef::continuous("n")];
    let mut deps = IndexMap::new();
    deps.insert("t".to_string(), None);
    deps.insert("v".to_string(), Some("t".to_string()));
    let schema = FeatureSchema::new(features, vec!["t".into(), "v".into()], deps)
        .unwrap()
        .with_embedding_dim(1);
    let mut c = ModelConfig::new(Architecture::Dtn).with_output_dim(1);
    let mut lin = FimSpec::new(FimKind::Mlp).with_output_dim(1);
    lin.hidden = Some(vec![]);
    c.shared_modules = Some(vec![lin.clone()]);
    c.task_modules = Some(vec![lin]);
    c.tower_hidden = vec![];
    let mut m: ModelGraph<f64> = ModelGraph::build(&c, &schema, 0).unwrap();
    let mut set = |name: &str, v: Array2<f64>| m.params.require_mut(name).unwrap().assign(&v);
    set("emb.c", array![[0.5], [-1.0]]);
    set("emb.n", array![[2.0]]);
    set("shared.m0.l0.w", array![[1.0], [2.0]]);
    set("shared.m0.l0.b", array![[0.5]]);
    set("task.t.m0.l0.w", array![[2.0], [0.0]]);
    set("task.t.m0.l0.b", array![[0.0]]);
    set("task.v.m0.l0.w", array![[0.0], [1.0]]);
    set("task.v.m0.l0.b", array![[1.0]]);
    set("gate.v.other.w", Array2::zeros((2, 2)));
    set("gate.v.other.b", array![[0.0, 3f64.ln()]]);
    set("tower.t.l0.w", array![[1.0], [1.0]]);
    set("tower.t.l0.b", array![[0.0]]);
    set("tower.v.l0.w", array![[1.0], [-1.0]]);
    set("tower.v.l0.b", array![[0.3]]);

    // c = 1, n = 0.5 → x = (−1, 1); M_S = 1.5, M_T = −2, M_V = 2.
    let b = ExampleBatch {
        categorical_ids: array![[1]],
        continuous_values: array![[0.5]],
        labels: array![[0, 0]],
    };
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let pred_t = sig(1.5 - 2.0);
    let s_o = 0.25 * (pred_t * -2.0) + 0.75 * 1.5;
    let pred_v = sig(s_o - 2.0 + 0.3);
    let p = m.forward(&b).unwrap();
    assert!((p[[0, 0]] - pred_t).abs() < 1e-15);
    assert!((p[[0, 1]] - pred_v).abs() < 1e-15, "{} vs {pred_v}", p[[0, 1]]);
}

fn weighted(weights: &Array2<f64>, cands: &[Array2<f64>]) -> Array2<f64> {
    let mut sum: Option<Array2<f64>> = None;
    for (i, c) in cands.iter().enumerate() {
        let mut term = c.clone();
        for (mut row, w) in term.rows_mut().into_iter().zip(weights.column(i)) {
            row.mapv_inplace(|v| v * w);
        }
        sum = Some(match sum {
            None => term,
            Some(s) => s + term,
        });
    }
    sum.unwrap()
}

#[test]
fn tsn_zero_and_identity_laws() {
    let (m, d) = build(Architecture::Dtn, 4);
    let b = batch(&d);
    let (g, gate) = m
        .graph
        .gates
        .iter()
        .enumerate()
        .find(|(_, g)| g.task == 1 && g.role == GateRole::Other)
        .unwrap();

    let zero = m.forward_with(&b, &ForwardOptions::default().override_pred(0, 0.0)).unwrap();
    let cands: Vec<Array2<f64>> = gate
        .candidates
        .iter()
        .map(|c| match c.scaled_by {
            Some(_) => Array2::zeros(zero.modules[c.set][c.module].raw_dim()),
            None => zero.modules[c.set][c.module].clone(),
        })
        .collect();
    let want = weighted(&zero.gate_weights[g], &cands);
    // Equality of every element (signed zeros compare equal).
    assert!(zero.gate_outputs[g].iter().zip(&want).all(|(a, b)| a == b));

    let one = m.forward_with(&b, &ForwardOptions::default().override_pred(0, 1.0)).unwrap();
    let cands: Vec<Array2<f64>> = gate.candidates.iter().map(|c| one.modules[c.set][c.module].clone()).collect();
    assert_eq!(one.gate_outputs[g], weighted(&one.gate_weights[g], &cands));

    // The override only touches the scaling, never the preceding task's own output.
    let plain = m.forward(&b).unwrap();
    assert_eq!(plain.column(0), zero.preds.column(0));
    assert_ne!(plain.column(1), zero.preds.column(1));
}

#[test]
fn preceding_prediction_does_not_depend_on_consumers() {
    let (m, d) = build(Architecture::Dtn, 5);
    let mut no_tsn = m.clone();
    for gate in &mut no_tsn.graph.gates {
        for c in &mut gate.candidates {
            c.scaled_by = None;
        }
    }
    let b = batch(&d);
    let (a, z) = (m.forward(&b).unwrap(), no_tsn.forward(&b).unwrap());
    assert_eq!(a.column(0), z.column(0));
    assert_ne!(a.column(1), z.column(1));
}

#[test]
fn disabled_tsn_keeps_preceding_candidates_unscaled() {
    let (train, _) = data(10);
    let mut c = small_config(Architecture::Dtn);
    c.tsn.enabled = false;
    let m: ModelGraph<f64> = ModelGraph::build(&c, train.schema(), 0).unwrap();
    let other = m.graph.gates.iter().find(|g| g.task == 1 && g.role == GateRole::Other).unwrap();
    assert_eq!(other.candidates.len(), 6);
    assert!(other.candidates.iter().all(|c| c.scaled_by.is_none()));
}

#[test]
fn detached_tsn_blocks_gradient_into_preceding_task() {
    let (train, _) = data(30);
    let mut c = small_config(Architecture::Dtn);
    c.tsn.detach = true;
    let m: ModelGraph<f64> = ModelGraph::build(&c, train.schema(), 0).unwrap();
    let mut attached = m.clone();
    for t in &mut attached.graph.tasks {
        t.tsn.detach = false;
    }
    let b = batch(&train);
    // Only cvr's loss: gradients reaching ctr's tower must come through pred_ctr.
    let w = [0.0, 1.0];
    let (_, g_det) = crate::training::loss_and_grads(&m, &b, &w).unwrap();
    let (_, g_att) = crate::training::loss_and_grads(&attached, &b, &w).unwrap();
    let idx = m.params.index_of("tower.ctr.l1.b").unwrap();
    assert!(g_det.get(idx).is_none_or(|g| g.iter().all(|v| *v == 0.0)));
    assert!(g_att.get(idx).unwrap().iter().any(|v| *v != 0.0));
}

#[test]
fn mmoe_with_one_expert_reduces_to_shared_bottom() {
    let (train, _) = data(30);
    let sb: ModelGraph<f64> = ModelGraph::build(&small_config(Architecture::SharedBottom), train.schema(), 9).unwrap();
    let mut c = small_config(Architecture::Mmoe);
    c.shared_modules = Some(vec![small_spec(FimKind::Mlp)]);
    let mut mmoe: ModelGraph<f64> = ModelGraph::build(&c, train.schema(), 1).unwrap();
    for (name, v) in sb.params.iter() {
        mmoe.params.require_mut(name).unwrap().assign(v);
    }
    assert_eq!(sb.forward(&batch(&train)).unwrap(), mmoe.forward(&batch(&train)).unwrap());
}

#[test]
fn sfm_and_tfi_differ_structurally() {
    let (train, _) = data(30);
    let mut sfm = small_config(Architecture::Sfm);
    sfm.shared_modules = Some(vec![small_spec(FimKind::MaskNet); 2]);
    let mut tfi = small_config(Architecture::Tfi);
    tfi.shared_modules = Some(vec![small_spec(FimKind::MaskNet); 2]);
    tfi.task_modules = Some(vec![small_spec(FimKind::MaskNet); 2]);
    let a: ModelGraph<f64> = ModelGraph::build(&sfm, train.schema(), 7).unwrap();
    let b: ModelGraph<f64> = ModelGraph::build(&tfi, train.schema(), 7).unwrap();
    assert!(a.graph.stack.is_some() && b.graph.stack.is_none());
    assert_ne!(a.forward(&batch(&train)).unwrap(), b.forward(&batch(&train)).unwrap());
}

#[test]
fn non_finite_intermediate_names_its_layer() {
    let (mut m, d) = build(Architecture::Dtn, 6);
    m.params.require_mut("task.cvr.m1.proj.b").unwrap().fill(f64::NAN);
    match m.forward(&batch(&d)) {
        Err(Error::NonFinite { layer, .. }) => assert!(layer.contains("task.cvr.m1"), "{layer}"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn predict_matches_single_batch_forward() {
    let (m, d) = build(Architecture::Ple, 8);
    let whole = m.forward(&batch(&d)).unwrap();
    let chunked = m.predict(&d, 7).unwrap();
    assert_eq!(whole, chunked);
}

// ---------- trim ----------

#[test]
fn keep_everything_is_an_identity() {
    let (m, d) = build(Architecture::Dtn, 10);
    let mut keep = IndexMap::new();
    for s in &m.graph.sets {
        keep.insert(s.owner.name().to_string(), (0..s.modules.len()).collect());
    }
    let (t, report) = m.trim(&TrimRule::Keep(keep), None).unwrap();
    assert!(report.removed.is_empty());
    assert_eq!(t.parameter_count(), m.parameter_count());
    assert_eq!(t.forward(&batch(&d)).unwrap(), m.forward(&batch(&d)).unwrap());
}

#[test]
fn trim_bookkeeping_is_exact() {
    let (m, d) = build(Architecture::Dtn, 11);
    // Shared module 1 feeds both other gates.
    let fim = m.graph.module(0, 1).parameter_count();
    let (t, report) = m.trim(&TrimRule::Remove(vec![("shared".into(), 1)]), None).unwrap();
    let gate_cols = 2 * (m.graph.input_width + 1);
    assert_eq!(report.removed[0].module_parameters, fim);
    assert_eq!(report.removed[0].gate_parameters, gate_cols);
    assert_eq!(m.parameter_count() - t.parameter_count(), fim + gate_cols);
    assert_eq!(t.graph.sets[0].modules.len(), 2);
    let out = t.forward_with(&batch(&d), &ForwardOptions::default()).unwrap();
    for w in &out.gate_weights {
        for row in w.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
    // Surviving logits are reused: the ctr own gate never saw the removed module.
    assert_eq!(
        t.params.require("gate.ctr.own.w").unwrap(),
        m.params.require("gate.ctr.own.w").unwrap()
    );
}

#[test]
fn trim_rejects_emptying_a_task_set() {
    let (m, _) = build(Architecture::Dtn, 12);
    let mut keep = IndexMap::new();
    keep.insert("ctr".to_string(), vec![]);
    assert!(matches!(m.trim(&TrimRule::Keep(keep), None), Err(Error::Trim(_))));
    assert!(m.trim(&TrimRule::Remove(vec![("nobody".into(), 0)]), None).is_err());
    assert!(m.trim(&TrimRule::Threshold(0.1), None).is_err());
}

#[test]
fn threshold_trim_drops_rarely_chosen_modules() {
    let (m, d) = build(Architecture::Dtn, 13);
    let weights = m.extract_gate_weights(&d, 64).unwrap();
    let (t, report) = m.trim(&TrimRule::Threshold(0.0), Some(&weights)).unwrap();
    assert!(report.removed.is_empty());
    assert_eq!(t.parameter_count(), m.parameter_count());
    // A threshold just above the smallest peak removes exactly that module.
    let mut peaks: IndexMap<(usize, usize), f64> = IndexMap::new();
    for g in &weights {
        for (c, w) in g.candidates.iter().zip(&g.mean_weights) {
            let e = peaks.entry((c.set, c.module)).or_insert(0.0);
            *e = e.max(*w);
        }
    }
    let min = peaks.values().cloned().fold(f64::INFINITY, f64::min);
    let (_, report) = m.trim(&TrimRule::Threshold(min + 1e-12), Some(&weights)).unwrap();
    assert_eq!(report.removed.len(), 1);
    assert!(report.parameters_after < report.parameters_before);
}

// ---------- export & checkpoint ----------

#[test]
fn export_covers_every_example_and_is_deterministic() {
    let (m, d) = build(Architecture::Dtn, 14);
    let sel = vec![
        "ctr:masknet".parse::<SetSelector>().unwrap(),
        "shared:masknet".parse::<SetSelector>().unwrap(),
    ];
    let e = m.export_representations(&d, &sel, d.len(), 3).unwrap();
    let mut ex = e.examples.clone();
    ex.sort_unstable();
    assert_eq!(ex, (0..d.len()).collect::<Vec<_>>());
    assert_eq!(e.blocks.len(), 2);
    assert_eq!(e, m.export_representations(&d, &sel, d.len(), 3).unwrap());
    assert!(e.centroid_distance(0, 1) > 0.0);
    assert!(m.export_representations(&d, &["nobody:0".parse().unwrap()], 5, 0).is_err());
    assert!(m.export_representations(&d, &["ctr:mlp".parse().unwrap()], 5, 0).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (m, d) = build(Architecture::Dtn, 15);
    let m32: ModelGraph<f32> = m.cast();
    for (path, preds) in [
        (dir.path().join("a.json"), {
            m.save(dir.path().join("a.json"), serde_json::json!({"note": 1})).unwrap();
            let back: ModelGraph<f64> = ModelGraph::load(dir.path().join("a.json")).unwrap();
            back.forward(&batch(&d)).unwrap() == m.forward(&batch(&d)).unwrap()
        }),
        (dir.path().join("b.json"), {
            m32.save(dir.path().join("b.json"), serde_json::Value::Null).unwrap();
            let back: ModelGraph<f32> = ModelGraph::load(dir.path().join("b.json")).unwrap();
            back.forward(&batch(&d)).unwrap() == m32.forward(&batch(&d)).unwrap()
        }),
    ] {
        assert!(preds, "{}", path.display());
    }
    let ck = read_checkpoint(dir.path().join("b.json")).unwrap();
    assert_eq!(ck.scalar, "f32");
    assert_eq!(ck.architecture, Architecture::Dtn);
}

#[test]
fn trimmed_checkpoint_loads() {
    let dir = tempfile::tempdir().unwrap();
    let (m, d) = build(Architecture::Dtn, 16);
    let (t, _) = m.trim(&TrimRule::Remove(vec![("cvr".into(), 2)]), None).unwrap();
    t.save(dir.path().join("t.json"), serde_json::Value::Null).unwrap();
    let back: ModelGraph<f64> = ModelGraph::load(dir.path().join("t.json")).unwrap();
    assert_eq!(back.forward(&batch(&d)).unwrap(), t.forward(&batch(&d)).unwrap());
}

// ---------- gradients ----------

#[test]
fn whole_model_gradients_match_finite_differences() {
    let (train, _) = data(12);
    for kind in Architecture::ALL {
        let m: ModelGraph<f64> = ModelGraph::build(&small_config(kind), train.schema(), 17).unwrap();
        let report = gradient_check(&m, &batch(&train), &GradCheckConfig::default()).unwrap();
        assert!(report.checked >= 100, "{kind}: {report:?}");
        assert!(report.max_rel_error < 1e-4, "{kind}: {report:?}");
    }
}
