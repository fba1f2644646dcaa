#![allow(dead_code)]

use dtn_core::data::{generate_synthetic, Dataset, GroundTruth, SyntheticSpec};
use dtn_core::interactions::{FimKind, FimSpec};
use dtn_core::mtl::{Architecture, ModelConfig};

pub const OUT: usize = 8;

pub fn spec(kind: FimKind) -> FimSpec {
    let mut s = FimSpec::new(kind).with_output_dim(OUT);
    s.hidden = Some(vec![8]);
    s.mask_hidden = Some(8);
    s.codebook_size = 64;
    s.code_dim = 4;
    s.pairs = Some(vec![
        ["ctr_cat_a".into(), "ctr_cat_b".into()],
        ["cvr_cat_a".into(), "cvr_cat_b".into()],
    ]);
    s
}

/// A few-thousand-parameter model of `kind` for the divergence preset.
pub fn small_config(kind: Architecture) -> ModelConfig {
    let mut c = ModelConfig::new(kind).with_output_dim(OUT);
    c.tower_hidden = vec![8];
    let mlp = vec![spec(FimKind::Mlp); 2];
    let mixed = vec![spec(FimKind::MaskNet), spec(FimKind::Gdcn), spec(FimKind::MemoNet)];
    match kind {
        Architecture::SharedBottom => c.shared_modules = Some(vec![spec(FimKind::Mlp)]),
        Architecture::Mmoe => c.shared_modules = Some(mlp),
        Architecture::Ple => {
            c.shared_modules = Some(mlp.clone());
            c.task_modules = Some(mlp);
        }
        Architecture::Sfm => {
            c.stack = Some(spec(FimKind::MaskNet));
            c.shared_modules = Some(mlp);
        }
        Architecture::Tfi | Architecture::Dtn => {
            c.shared_modules = Some(mixed.clone());
            c.task_modules = Some(mixed);
        }
    }
    c
}

pub fn divergence(n_train: usize, n_test: usize, seed: u64) -> (Dataset, Dataset, GroundTruth) {
    let (train, test, _, truth) = generate_synthetic(n_train, n_test, &SyntheticSpec::divergence(), seed).unwrap();
    (train, test, truth)
}
