//! UCI Census-Income (KDD) ingestion.
//!
//! Two binary tasks are carved out of the 42 raw columns: `income` (more than
//! 50K) and `marital` (never married). The remaining 40 columns are
//! predictors; 29 are categorical and 11 continuous, following the split used
//! by the usual multi-gate mixture-of-experts benchmark setup.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ExampleBatch};
use super::schema::{FeatureDef, FeatureSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Categorical,
    Continuous,
    Income,
    Marital,
}

const COLUMNS: [(&str, Role); 42] = [
    ("age", Role::Continuous),
    ("class_worker", Role::Categorical),
    ("det_ind_code", Role::Categorical),
    ("det_occ_code", Role::Categorical),
    ("education", Role::Categorical),
    ("wage_per_hour", Role::Continuous),
    ("hs_college", Role::Categorical),
    ("marital_stat", Role::Marital),
    ("major_ind_code", Role::Categorical),
    ("major_occ_code", Role::Categorical),
    ("race", Role::Categorical),
    ("hisp_origin", Role::Categorical),
    ("sex", Role::Categorical),
    ("union_member", Role::Categorical),
    ("unemp_reason", Role::Categorical),
    ("full_or_part_emp", Role::Categorical),
    ("capital_gains", Role::Continuous),
    ("capital_losses", Role::Continuous),
    ("stock_dividends", Role::Continuous),
    ("tax_filer_stat", Role::Categorical),
    ("region_prev_res", Role::Categorical),
    ("state_prev_res", Role::Categorical),
    ("det_hh_fam_stat", Role::Categorical),
    ("det_hh_summ", Role::Categorical),
    ("instance_weight", Role::Continuous),
    ("mig_chg_msa", Role::Categorical),
    ("mig_chg_reg", Role::Categorical),
    ("mig_move_reg", Role::Categorical),
    ("mig_same", Role::Categorical),
    ("mig_prev_sunbelt", Role::Categorical),
    ("num_emp", Role::Continuous),
    ("fam_under_18", Role::Categorical),
    ("country_father", Role::Categorical),
    ("country_mother", Role::Categorical),
    ("country_self", Role::Categorical),
    ("citizenship", Role::Categorical),
    ("own_or_self", Role::Continuous),
    ("vet_question", Role::Categorical),
    ("vet_benefits", Role::Continuous),
    ("weeks_worked", Role::Continuous),
    ("year", Role::Continuous),
    ("income_50k", Role::Income),
];

pub const INCOME_TASK: &str = "income";
pub const MARITAL_TASK: &str = "marital";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CensusOptions {
    /// Positive marital class is "Never married" unless flipped.
    #[serde(default)]
    pub flip_marital: bool,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

fn default_embedding_dim() -> usize {
    super::schema::DEFAULT_EMBEDDING_DIM
}

impl Default for CensusOptions {
    fn default() -> Self {
        Self {
            flip_marital: false,
            embedding_dim: default_embedding_dim(),
        }
    }
}

struct RawTable {
    rows: Vec<Vec<String>>,
    source: String,
}

fn read_table(reader: impl Read, source: &str) -> Result<RawTable> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != COLUMNS.len() {
            return Err(Error::MalformedRow {
                path: source.to_string(),
                row: i + 1,
                message: format!("expected {} fields, found {}", COLUMNS.len(), fields.len()),
            });
        }
        for (j, (name, role)) in COLUMNS.iter().enumerate() {
            if *role == Role::Continuous && fields[j].parse::<f64>().is_err() {
                return Err(Error::MalformedRow {
                    path: source.to_string(),
                    row: i + 1,
                    message: format!("column `{name}` is not numeric: {:?}", fields[j]),
                });
            }
        }
        let income = &fields[41];
        if income != "- 50000." && income != "50000+." {
            return Err(Error::MalformedRow {
                path: source.to_string(),
                row: i + 1,
                message: format!("unrecognized income label {income:?}"),
            });
        }
        rows.push(fields);
    }
    Ok(RawTable {
        rows,
        source: source.to_string(),
    })
}

pub fn load_census_income(
    train_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
    options: &CensusOptions,
) -> Result<(Dataset, Dataset, Arc<FeatureSchema>)> {
    let (train_path, test_path) = (train_path.as_ref(), test_path.as_ref());
    let train = std::fs::File::open(train_path).map_err(|e| Error::io(train_path, e))?;
    let test = std::fs::File::open(test_path).map_err(|e| Error::io(test_path, e))?;
    load_census_from_readers(
        train,
        &train_path.display().to_string(),
        test,
        &test_path.display().to_string(),
        options,
    )
}

pub fn load_census_from_readers(
    train: impl Read,
    train_name: &str,
    test: impl Read,
    test_name: &str,
    options: &CensusOptions,
) -> Result<(Dataset, Dataset, Arc<FeatureSchema>)> {
    let train = read_table(train, train_name)?;
    let test = read_table(test, test_name)?;

    let mut features = Vec::new();
    let mut vocabs: Vec<HashMap<String, usize>> = Vec::new();
    let mut stats = Vec::new();
    for (j, (name, role)) in COLUMNS.iter().enumerate() {
        match role {
            Role::Categorical => {
                let mut vocab: Vec<String> = vec!["<oov>".into()];
                let mut map = HashMap::new();
                for row in &train.rows {
                    if !map.contains_key(&row[j]) {
                        map.insert(row[j].clone(), vocab.len());
                        vocab.push(row[j].clone());
                    }
                }
                let mut def = FeatureDef::categorical(*name, vocab.len());
                def.embedding_dim = options.embedding_dim;
                def.vocabulary = Some(vocab);
                features.push(def);
                vocabs.push(map);
            }
            Role::Continuous => {
                let vals: Vec<f64> = train.rows.iter().map(|r| r[j].parse().unwrap_or(0.0)).collect();
                let n = vals.len().max(1) as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                let mut def = FeatureDef::continuous(*name);
                def.embedding_dim = options.embedding_dim;
                def.standardization = Some((mean, std));
                features.push(def);
                stats.push((j, mean, std));
            }
            Role::Income | Role::Marital => {}
        }
    }
    let schema = Arc::new(FeatureSchema::new(
        features,
        vec![INCOME_TASK.into(), MARITAL_TASK.into()],
        IndexMap::new(),
    )?);

    let encode = |table: &RawTable| -> Result<Dataset> {
        let n = table.rows.len();
        let cat_cols: Vec<usize> = COLUMNS
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| *r == Role::Categorical)
            .map(|(j, _)| j)
            .collect();
        let mut cat = Array2::zeros((n, cat_cols.len()));
        let mut cont = Array2::zeros((n, stats.len()));
        let mut labels = Array2::zeros((n, 2));
        for (r, row) in table.rows.iter().enumerate() {
            for (c, &j) in cat_cols.iter().enumerate() {
                cat[[r, c]] = vocabs[c].get(&row[j]).copied().unwrap_or(0);
            }
            for (c, &(j, mean, std)) in stats.iter().enumerate() {
                let v: f64 = row[j].parse().map_err(|_| Error::MalformedRow {
                    path: table.source.clone(),
                    row: r + 1,
                    message: format!("column {j} is not numeric"),
                })?;
                cont[[r, c]] = (v - mean) / std;
            }
            labels[[r, 0]] = u8::from(row[41] == "50000+.");
            let never_married = row[7] == "Never married";
            labels[[r, 1]] = u8::from(never_married != options.flip_marital);
        }
        Dataset::new(
            schema.clone(),
            ExampleBatch {
                categorical_ids: cat,
                continuous_values: cont,
                labels,
            },
        )
    };
    Ok((encode(&train)?, encode(&test)?, schema))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW_LOW: &str = " 73, Not in universe, 0, 0, High school graduate, 0, Not in universe, Widowed, Not in universe or children, Not in universe, White, All other, Female, Not in universe, Not in universe, Not in labor force, 0, 0, 0, Nonfiler, Not in universe, Not in universe, Other Rel 18+ ever marr not in subfamily, Other relative of householder, 1700.09, ?, ?, ?, Not in universe under 1 year old, ?, 0, Not in universe, United-States, United-States, United-States, Native- Born in the United States, 0, Not in universe, 2, 0, 95, - 50000.";
    const ROW_HIGH: &str = " 52, Self-employed-incorporated, 37, 2, Masters degree(MA MS MEng MEd MSW MBA), 0, Not in universe, Never married, Finance insurance and real estate, Executive admin and managerial, White, All other, Male, Not in universe, Not in universe, Full-time schedules, 15024, 0, 500, Joint both under 65, Not in universe, Not in universe, Householder, Householder, 2500.5, Nonmover, Nonmover, Nonmover, Yes, Not in universe, 6, Not in universe, United-States, United-States, United-States, Native- Born in the United States, 2, Not in universe, 2, 52, 94, 50000+.";
    const ROW_TEST_UNSEEN: &str = " 35, Federal government, 37, 2, Doctorate degree(PhD EdD), 0, Not in universe, Married-civilian spouse present, Finance insurance and real estate, Executive admin and managerial, Asian or Pacific Islander, All other, Male, Not in universe, Not in universe, Full-time schedules, 0, 0, 0, Joint both under 65, Not in universe, Not in universe, Householder, Householder, 1200.0, Nonmover, Nonmover, Nonmover, Yes, Not in universe, 6, Not in universe, India, India, India, Foreign born- Not a citizen of U S, 0, Not in universe, 2, 52, 95, - 50000.";

    fn load(train: &str, test: &str, opts: &CensusOptions) -> Result<(Dataset, Dataset, Arc<FeatureSchema>)> {
        load_census_from_readers(train.as_bytes(), "train", test.as_bytes(), "test", opts)
    }

    #[test]
    fn forty_predictors_and_two_tasks() {
        let train = format!("{ROW_LOW}\n{ROW_HIGH}\n");
        let (tr, te, schema) = load(&train, ROW_TEST_UNSEEN, &CensusOptions::default()).unwrap();
        assert_eq!(schema.features.len(), 40);
        assert_eq!(schema.n_categorical(), 29);
        assert_eq!(schema.n_continuous(), 11);
        assert!(schema.feature_index("marital_stat").is_none());
        assert!(schema.feature_index("income_50k").is_none());
        assert_eq!(tr.len(), 2);
        assert_eq!(te.len(), 1);
        // income label
        assert_eq!(tr.labels(0), vec![0, 1]);
        // "Never married" is the positive marital class
        assert_eq!(tr.labels(1), vec![0, 1]);
    }

    #[test]
    fn unseen_test_category_maps_to_oov() {
        let train = format!("{ROW_LOW}\n{ROW_HIGH}\n");
        let (_, te, schema) = load(&train, ROW_TEST_UNSEEN, &CensusOptions::default()).unwrap();
        let race = schema
            .categorical_features()
            .position(|f| f.name == "race")
            .unwrap();
        assert_eq!(te.data().categorical_ids[[0, race]], 0);
        let sex = schema.categorical_features().position(|f| f.name == "sex").unwrap();
        assert_eq!(te.data().categorical_ids[[0, sex]], 2);
    }

    #[test]
    fn question_mark_is_its_own_category() {
        let train = format!("{ROW_LOW}\n{ROW_HIGH}\n");
        let (tr, _, schema) = load(&train, ROW_LOW, &CensusOptions::default()).unwrap();
        let col = schema
            .categorical_features()
            .position(|f| f.name == "mig_chg_msa")
            .unwrap();
        let vocab = schema.categorical_features().nth(col).unwrap().vocabulary.clone().unwrap();
        assert_eq!(vocab[tr.data().categorical_ids[[0, col]]], "?");
        assert_ne!(tr.data().categorical_ids[[0, col]], 0);
    }

    #[test]
    fn continuous_columns_standardized_on_train() {
        let train = format!("{ROW_LOW}\n{ROW_HIGH}\n");
        let (tr, _, schema) = load(&train, ROW_LOW, &CensusOptions::default()).unwrap();
        let age = schema.features.iter().find(|f| f.name == "age").unwrap();
        assert_eq!(age.standardization, Some((62.5, 10.5)));
        assert_eq!(tr.data().continuous_values[[0, 0]], 1.0);
        assert_eq!(tr.data().continuous_values[[1, 0]], -1.0);
    }

    #[test]
    fn flipped_marital_switch() {
        let train = format!("{ROW_LOW}\n{ROW_HIGH}\n");
        let opts = CensusOptions {
            flip_marital: true,
            ..Default::default()
        };
        let (tr, _, _) = load(&train, ROW_LOW, &opts).unwrap();
        assert_eq!(tr.labels(1), vec![1, 0]);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let train = format!("{ROW_LOW}\n{ROW_HIGH}\n 1, 2, 3\n");
        match load(&train, ROW_LOW, &CensusOptions::default()) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected malformed row, got {other:?}"),
        }
        let bad_age = ROW_HIGH.replacen(" 52,", " fifty,", 1);
        match load(&format!("{ROW_LOW}\n{bad_age}\n"), ROW_LOW, &CensusOptions::default()) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected malformed row, got {other:?}"),
        }
    }
}
