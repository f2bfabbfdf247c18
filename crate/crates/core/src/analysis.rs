//! Collapse reports assembled from a trained model or a checkpoint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::FieldSchema;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, Matrix};
use crate::metrics::{
    diversity_matrix, ffm_sub_embedding_grid, ia_grid_summaries, information_abundance,
    mean_off_diagonal, sub_embedding_ia_grid, IaGrid, PairMap,
};
use crate::models::{EmbeddingBank, InteractionKind, Model};

/// What a report is computed from: embedding tables per set and, when the
/// model has them, the first-layer projection blocks per set.
#[derive(Clone, Debug)]
pub struct AnalysisInput {
    pub embeddings: EmbeddingBank,
    pub blocks: Vec<Option<PairMap<Matrix>>>,
    /// Tables are split into `N - 1` field-aware slices.
    pub field_aware: bool,
}

impl AnalysisInput {
    pub fn from_model(model: &Model) -> Result<Self> {
        let blocks = (0..model.spec().num_sets)
            .map(|m| model.projection_blocks(m))
            .collect::<Result<_>>()?;
        Ok(Self {
            embeddings: model.embeddings(),
            blocks,
            field_aware: model.spec().interaction == InteractionKind::Ffm,
        })
    }

    /// Reads `set{m}/E_{i}` tables and any `set{m}/W_{i}_{j}` blocks from
    /// loaded checkpoint slots, checking them against the schema.
    pub fn from_checkpoint(
        slots: &BTreeMap<String, Matrix>,
        schema: &FieldSchema,
        kind: Option<InteractionKind>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = schema.n_fields();
        let mut tables = Vec::new();
        while slots.contains_key(&format!("set{}/E_0", tables.len())) {
            let m = tables.len();
            let set = (0..n)
                .map(|i| {
                    let name = format!("set{m}/E_{i}");
                    let t = slots
                        .get(&name)
                        .ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))?;
                    if t.rows() != schema.fields[i].cardinality {
                        return Err(Error::Data(format!(
                            "{name} has {} rows, schema field {:?} has cardinality {}",
                            t.rows(),
                            schema.fields[i].name,
                            schema.fields[i].cardinality
                        )));
                    }
                    Ok(t.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            tables.push(set);
        }
        if tables.is_empty() {
            return Err(Error::Data(
                "checkpoint has no set0/E_0 embedding table".into(),
            ));
        }
        if slots.contains_key(&format!("set0/E_{n}")) {
            return Err(Error::Data(format!(
                "checkpoint has more embedding tables than the {n} schema fields"
            )));
        }
        let k = tables[0][0].cols();
        if tables.iter().flatten().any(|t| t.cols() != k) {
            return Err(Error::Data("embedding tables differ in width".into()));
        }
        let mut blocks = Vec::with_capacity(tables.len());
        for m in 0..tables.len() {
            if !slots.contains_key(&format!("set{m}/W_0_0")) {
                blocks.push(None);
                continue;
            }
            let mut map = PairMap::new(n);
            for i in 0..n {
                for j in 0..n {
                    let name = format!("set{m}/W_{i}_{j}");
                    let w = slots
                        .get(&name)
                        .ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))?;
                    if w.shape() != (k, k) {
                        return Err(Error::Data(format!(
                            "{name} is {:?}, expected {k}x{k}",
                            w.shape()
                        )));
                    }
                    map.insert(i, j, w.clone());
                }
            }
            blocks.push(Some(map));
        }
        Ok(Self {
            embeddings: EmbeddingBank { tables },
            blocks,
            field_aware: kind == Some(InteractionKind::Ffm),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    /// Whether grid row/column sums include the `i == j` cells.
    pub include_diagonal: bool,
    /// Number of column chunks a single-embedding table is cut into for the
    /// split-diversity comparison.
    pub se_split_sets: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            include_diagonal: true,
            se_split_sets: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetGrid {
    pub set: usize,
    pub values: Vec<Vec<f64>>,
    pub field_ia: Vec<f64>,
    pub field_order: Vec<usize>,
    pub row_sums: Vec<f64>,
    pub col_sums: Vec<f64>,
    pub row_corr: f64,
    pub col_corr: f64,
    /// `min_j values[i][j] / field_ia[i]` per field.
    pub min_sub_ia_ratio: Vec<f64>,
    /// `||W_{i->j}||_F`, when the grid comes from projection blocks.
    pub block_norms: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityKind {
    /// Between the embedding sets of a multi-embedding model.
    CrossSet,
    /// Between equal column chunks of a single table.
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDiversity {
    pub field: usize,
    pub kind: DiversityKind,
    pub matrix: Vec<Vec<f64>>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub n_fields: usize,
    pub num_sets: usize,
    /// IA of each field's tables concatenated across sets.
    pub ia_per_field: Vec<f64>,
    /// `ia_per_set[m][i]`.
    pub ia_per_set: Vec<Vec<f64>>,
    pub grids: Vec<SetGrid>,
    pub mean_row_corr: Option<f64>,
    pub mean_col_corr: Option<f64>,
    pub diversity: Vec<FieldDiversity>,
    pub mean_diversity: Option<f64>,
}

impl CollapseReport {
    pub fn mean_ia_per_field(&self) -> f64 {
        self.ia_per_field.iter().sum::<f64>() / self.ia_per_field.len() as f64
    }
}

fn set_grid(
    set: usize,
    grid: IaGrid,
    blocks: Option<&PairMap<Matrix>>,
    opts: &AnalysisOptions,
) -> Result<SetGrid> {
    let n = grid.n_fields;
    let (row_sums, col_sums, row_corr, col_corr) = if n >= 3 {
        let s = ia_grid_summaries(&grid, opts.include_diagonal)?;
        (s.row_sums, s.col_sums, s.row_corr, s.col_corr)
    } else {
        (Vec::new(), Vec::new(), f64::NAN, f64::NAN)
    };
    let min_sub_ia_ratio = (0..n)
        .map(|i| {
            grid.values[i]
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v / grid.field_ia[i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let block_norms = blocks.map(|b| {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| frobenius_norm(b.get(i, j).expect("complete block map")))
                    .collect()
            })
            .collect()
    });
    Ok(SetGrid {
        set,
        values: grid.values,
        field_ia: grid.field_ia,
        field_order: grid.field_order,
        row_sums,
        col_sums,
        row_corr,
        col_corr,
        min_sub_ia_ratio,
        block_norms,
    })
}

fn mean_finite(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn collapse_report(input: &AnalysisInput, opts: &AnalysisOptions) -> Result<CollapseReport> {
    let bank = &input.embeddings;
    let num_sets = bank.num_sets();
    let n = bank.tables[0].len();
    let ia_per_set: Vec<Vec<f64>> = bank
        .tables
        .iter()
        .map(|set| set.iter().map(information_abundance).collect())
        .collect::<Result<_>>()?;
    let ia_per_field = (0..n)
        .map(|i| information_abundance(&bank.concatenated(i)?))
        .collect::<Result<_>>()?;

    let mut grids = Vec::new();
    for m in 0..num_sets {
        let grid = match input.blocks.get(m).and_then(Option::as_ref) {
            Some(b) => Some(sub_embedding_ia_grid(&bank.tables[m], b)?),
            None if input.field_aware => Some(ffm_sub_embedding_grid(&bank.tables[m])?),
            None => None,
        };
        if let Some(g) = grid {
            grids.push(set_grid(
                m,
                g,
                input.blocks.get(m).and_then(Option::as_ref),
                opts,
            )?);
        }
    }

    let mut diversity = Vec::with_capacity(n);
    for i in 0..n {
        let (kind, parts) = if num_sets > 1 {
            (
                DiversityKind::CrossSet,
                bank.tables
                    .iter()
                    .map(|set| set[i].clone())
                    .collect::<Vec<_>>(),
            )
        } else {
            let t = &bank.tables[0][i];
            let p = opts.se_split_sets;
            if p < 2 || t.cols() % p != 0 {
                continue;
            }
            let w = t.cols() / p;
            (
                DiversityKind::Split,
                (0..p)
                    .map(|c| t.column_block(c * w, (c + 1) * w))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let matrix = diversity_matrix(&parts)?;
        diversity.push(FieldDiversity {
            field: i,
            kind,
            mean: mean_off_diagonal(&matrix),
            matrix: matrix.to_rows(),
        });
    }

    Ok(CollapseReport {
        seed: None,
        config: serde_json::Value::Null,
        n_fields: n,
        num_sets,
        ia_per_field,
        ia_per_set,
        mean_row_corr: mean_finite(grids.iter().map(|g| g.row_corr)),
        mean_col_corr: mean_finite(grids.iter().map(|g| g.col_corr)),
        grids,
        mean_diversity: mean_finite(diversity.iter().map(|d| d.mean)),
        diversity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::rng;

    fn schema(cards: &[usize]) -> FieldSchema {
        FieldSchema::from_cardinalities(cards).unwrap()
    }

    #[test]
    fn identity_blocks_give_constant_grid_rows() {
        let s = schema(&[10, 12, 14]);
        let mut r = rng::rng(1);
        let tables: Vec<Matrix> = s
            .cardinalities()
            .iter()
            .map(|&d| rng::normal_matrix(d, 3, 1.0, &mut r))
            .collect();
        let mut slots = BTreeMap::new();
        for (i, t) in tables.iter().enumerate() {
            slots.insert(format!("set0/E_{i}"), t.clone());
            for j in 0..3 {
                slots.insert(format!("set0/W_{i}_{j}"), Matrix::identity(3));
            }
        }
        let input = AnalysisInput::from_checkpoint(&slots, &s, None).unwrap();
        let rep = collapse_report(&input, &AnalysisOptions::default()).unwrap();
        let g = &rep.grids[0];
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.values[i][j] - rep.ia_per_set[0][i]).abs() < 1e-10);
            }
        }
        assert_eq!(
            rep,
            collapse_report(&input, &AnalysisOptions::default()).unwrap()
        );
    }

    #[test]
    fn checkpoint_shape_mismatch_is_data_error() {
        let s = schema(&[10, 12, 14]);
        let mut slots = BTreeMap::new();
        for i in 0..3 {
            slots.insert(format!("set0/E_{i}"), Matrix::identity(4));
        }
        assert!(matches!(
            AnalysisInput::from_checkpoint(&slots, &s, None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn model_reports_cover_sets_and_splits() {
        let s = schema(&[20, 20, 20, 20]);
        let mut spec = ModelSpec::new(InteractionKind::Dcnv2, 4, 2);
        spec.mlp = vec![8];
        spec.init_scale = 1.0;
        let me = Model::new(&s, &spec, 0).unwrap();
        let rep = collapse_report(
            &AnalysisInput::from_model(&me).unwrap(),
            &AnalysisOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.grids.len(), 2);
        assert!(rep
            .diversity
            .iter()
            .all(|d| d.kind == DiversityKind::CrossSet && d.matrix.len() == 2));

        spec.num_sets = 1;
        spec.embedding_size = 8;
        let se = Model::new(&s, &spec, 0).unwrap();
        let opts = AnalysisOptions {
            se_split_sets: 4,
            ..AnalysisOptions::default()
        };
        let rep = collapse_report(&AnalysisInput::from_model(&se).unwrap(), &opts).unwrap();
        assert!(rep
            .diversity
            .iter()
            .all(|d| d.kind == DiversityKind::Split && d.matrix.len() == 4));

        spec.interaction = InteractionKind::Ffm;
        spec.embedding_size = 6;
        let ffm = Model::new(&s, &spec, 0).unwrap();
        let rep = collapse_report(
            &AnalysisInput::from_model(&ffm).unwrap(),
            &AnalysisOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.grids.len(), 1);
        assert!(rep.grids[0].block_norms.is_none());
    }
}
