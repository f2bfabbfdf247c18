//! Multi-field categorical datasets: synthetic generators, CSV ingestion,
//! splitting, subsampling and seeded batching.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{self, derive_seed};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub cardinality: usize,
}

/// Field names and cardinalities of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub fields: Vec<Field>,
}

impl FieldSchema {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        let schema = Self { fields };
        schema.validate()?;
        Ok(schema)
    }

    /// Schema with fields named `f0`, `f1`, ...
    pub fn from_cardinalities(cards: &[usize]) -> Result<Self> {
        Self::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| Field {
                    name: format!("f{i}"),
                    cardinality: c,
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.len() < 2 {
            return Err(Error::Config(format!(
                "schema needs at least 2 fields, got {}",
                self.fields.len()
            )));
        }
        if let Some(f) = self.fields.iter().find(|f| f.cardinality == 0) {
            return Err(Error::Config(format!(
                "field {:?} has cardinality 0",
                f.name
            )));
        }
        Ok(())
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.cardinality).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub indices: Vec<usize>,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Toy { d3: usize, seed: u64 },
    TwoPattern { seed: u64 },
    Csv { path: String },
    Derived,
}

/// Token vocabulary of one CSV field. Index 0 is reserved for tokens never
/// seen while building the vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocabulary::default();
        for t in &tokens {
            v.intern(t);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub const OOV: usize = 0;

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.lookup.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        let idx = self.tokens.len();
        self.lookup.insert(token.to_string(), idx);
        idx
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.lookup.get(token).copied().unwrap_or(Self::OOV)
    }

    /// Raw token of a dense index; `None` for the OOV slot.
    pub fn token(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Number of indices including the OOV slot.
    pub fn cardinality(&self) -> usize {
        self.tokens.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FieldSchema,
    pub rows: Vec<Row>,
    pub provenance: Provenance,
    pub vocab: Option<Vec<Vocabulary>>,
}

impl Dataset {
    pub fn new(schema: FieldSchema, rows: Vec<Row>, provenance: Provenance) -> Result<Self> {
        let ds = Self {
            schema,
            rows,
            provenance,
            vocab: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let n = self.schema.n_fields();
        for (r, row) in self.rows.iter().enumerate() {
            if row.indices.len() != n {
                return Err(Error::Data(format!(
                    "row {r} has {} indices, schema has {n} fields",
                    row.indices.len()
                )));
            }
            for (f, (&idx, field)) in row.indices.iter().zip(&self.schema.fields).enumerate() {
                if idx >= field.cardinality {
                    return Err(Error::Data(format!(
                        "row {r} field {f}: index {idx} >= cardinality {}",
                        field.cardinality
                    )));
                }
            }
            if row.label > 1 {
                return Err(Error::Data(format!(
                    "row {r}: label {} not in {{0,1}}",
                    row.label
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.rows.iter().map(|r| f64::from(r.label)).collect()
    }

    fn with_rows(&self, rows: Vec<Row>) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows,
            provenance: self.provenance.clone(),
            vocab: self.vocab.clone(),
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch::from_rows(self.schema.n_fields(), self.rows.iter())
    }

    /// Writes the dataset as CSV: header of field names plus `label`. Fields
    /// with a vocabulary are written as their raw tokens, others as indices.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.schema.fields.iter().map(|f| f.name.as_str()).collect();
        out.push_str(&names.join(","));
        out.push_str(",label\n");
        for row in &self.rows {
            for (f, &idx) in row.indices.iter().enumerate() {
                let token = self
                    .vocab
                    .as_ref()
                    .and_then(|v| v[f].token(idx))
                    .map(str::to_string)
                    .unwrap_or_else(|| idx.to_string());
                out.push_str(&token);
                out.push(',');
            }
            out.push_str(if row.label == 1 { "1\n" } else { "0\n" });
        }
        out
    }
}

/// Column-major view of a set of rows: one index vector per field.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub fields: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_rows<'a>(n_fields: usize, rows: impl IntoIterator<Item = &'a Row>) -> Batch {
        let mut fields = vec![Vec::new(); n_fields];
        let mut labels = Vec::new();
        for row in rows {
            for (f, &idx) in row.indices.iter().enumerate() {
                fields[f].push(idx);
            }
            labels.push(f64::from(row.label));
        }
        Batch { fields, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Indices of sample `b`, one per field.
    pub fn sample(&self, b: usize) -> Vec<usize> {
        self.fields.iter().map(|f| f[b]).collect()
    }
}

/// Toy data: `N = 3`, `D1 = D2 = 100`. Every `(x1, x2)` pair appears exactly
/// once; `x3` is uniform over `d3` values and `y` is a fair coin, each drawn
/// from its own stream so the `(x1, x2, y)` multiset does not depend on `d3`.
pub fn gen_toy(d3: usize, seed: u64) -> Result<Dataset> {
    if d3 == 0 {
        return Err(Error::Config("d3 must be at least 1".into()));
    }
    const D: usize = 100;
    let mut x3_rng = rng::rng(derive_seed(seed, &[rng::TAG_TOY_X3]));
    let mut y_rng = rng::rng(derive_seed(seed, &[rng::TAG_TOY_Y]));
    let mut rows = Vec::with_capacity(D * D);
    for x1 in 0..D {
        for x2 in 0..D {
            let x3 = x3_rng.random_range(0..d3);
            let label = u8::from(y_rng.random::<bool>());
            rows.push(Row {
                indices: vec![x1, x2, x3],
                label,
            });
        }
    }
    let schema = FieldSchema::new(vec![
        Field {
            name: "x1".into(),
            cardinality: D,
        },
        Field {
            name: "x2".into(),
            cardinality: D,
        },
        Field {
            name: "x3".into(),
            cardinality: d3,
        },
    ])?;
    Dataset::new(schema, rows, Provenance::Toy { d3, seed })
}

/// Parameters of the two-pattern generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternParams {
    pub n_rows: usize,
    /// Width of the hidden embedding banks.
    pub hidden_dim: usize,
    pub w1: f64,
    pub w2: f64,
    /// Standard deviation of Gaussian noise added to the logit.
    pub noise: f64,
}

impl Default for PatternParams {
    fn default() -> Self {
        Self {
            n_rows: 20_000,
            hidden_dim: 4,
            w1: 2.0,
            w2: 2.0,
            noise: 0.5,
        }
    }
}

/// A two-pattern dataset together with the hidden ground truth.
#[derive(Clone, Debug)]
pub struct TwoPattern {
    pub dataset: Dataset,
    /// `banks[p][i]`: hidden `D_i x hidden_dim` table of pattern `p`.
    pub banks: [Vec<Matrix>; 2],
    /// Disjoint field-pair sets scored by each pattern.
    pub pairs: [Vec<(usize, usize)>; 2],
}

impl TwoPattern {
    /// Ground-truth noiseless logit of a sample.
    pub fn true_logit(&self, indices: &[usize], params: &PatternParams) -> f64 {
        params.w1 * self.pattern_score(0, indices) + params.w2 * self.pattern_score(1, indices)
    }

    fn pattern_score(&self, p: usize, x: &[usize]) -> f64 {
        let pairs = &self.pairs[p];
        if pairs.is_empty() {
            return 0.0;
        }
        let bank = &self.banks[p];
        let s: f64 = pairs
            .iter()
            .map(|&(i, j)| dot(bank[i].row(x[i]), bank[j].row(x[j])))
            .sum();
        s / (pairs.len() as f64).sqrt()
    }
}

/// Synthetic data whose logit is the sum of two pairwise-interaction
/// patterns over disjoint field-pair sets, each backed by its own hidden
/// embedding bank.
pub fn gen_two_pattern(
    schema: &FieldSchema,
    params: &PatternParams,
    seed: u64,
) -> Result<TwoPattern> {
    schema.validate()?;
    let n = schema.n_fields();
    if n < 4 {
        return Err(Error::Config(format!(
            "two-pattern data needs at least 4 fields, got {n}"
        )));
    }
    if params.hidden_dim == 0 || params.n_rows == 0 {
        return Err(Error::Config(
            "hidden_dim and n_rows must be positive".into(),
        ));
    }
    if !(params.noise >= 0.0) || !params.w1.is_finite() || !params.w2.is_finite() {
        return Err(Error::Config(
            "noise must be >= 0 and weights finite".into(),
        ));
    }
    let bank_scale = 1.0 / (params.hidden_dim as f64).sqrt().sqrt();
    let banks: [Vec<Matrix>; 2] = std::array::from_fn(|p| {
        schema
            .fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut r = rng::rng(derive_seed(
                    seed,
                    &[rng::TAG_PATTERN_BANK, p as u64, i as u64],
                ));
                rng::normal_matrix(f.cardinality, params.hidden_dim, bank_scale, &mut r)
            })
            .collect()
    });

    let mut all_pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    all_pairs.shuffle(&mut rng::rng(derive_seed(seed, &[rng::TAG_PATTERN_PAIRS])));
    let half = all_pairs.len() / 2;
    let mut first = all_pairs[..half].to_vec();
    let mut second = all_pairs[half..2 * half].to_vec();
    first.sort_unstable();
    second.sort_unstable();

    let mut truth = TwoPattern {
        dataset: Dataset::new(schema.clone(), Vec::new(), Provenance::TwoPattern { seed })?,
        banks,
        pairs: [first, second],
    };

    let cards = schema.cardinalities();
    let mut row_rng = rng::rng(derive_seed(seed, &[rng::TAG_PATTERN_ROWS]));
    let mut noise_rng = rng::rng(derive_seed(seed, &[rng::TAG_PATTERN_NOISE]));
    let mut label_rng = rng::rng(derive_seed(seed, &[rng::TAG_PATTERN_LABEL]));
    let mut rows = Vec::with_capacity(params.n_rows);
    for _ in 0..params.n_rows {
        let indices: Vec<usize> = cards.iter().map(|&c| row_rng.random_range(0..c)).collect();
        let z: f64 = StandardNormal.sample(&mut noise_rng);
        let logit = truth.true_logit(&indices, params) + params.noise * z;
        let p = sigmoid(logit);
        let label = u8::from(label_rng.random::<f64>() < p);
        rows.push(Row { indices, label });
    }
    truth.dataset.rows = rows;
    Ok(truth)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Reads a CSV file (header row, `label` last) and builds per-field
/// vocabularies in first-appearance order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, None, &path.display().to_string())
}

/// Reads a CSV file using existing vocabularies; unseen tokens map to the
/// OOV index 0.
pub fn load_csv_with_vocab(path: impl AsRef<Path>, vocab: &[Vocabulary]) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, Some(vocab), &path.display().to_string())
}

pub fn parse_csv(text: &str, vocab: Option<&[Vocabulary]>, source: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{source}: empty file")))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.last() != Some(&"label") {
        return Err(Error::Data(format!(
            "{source}:1: missing `label` as the last column"
        )));
    }
    let n = names.len() - 1;
    if let Some(v) = vocab {
        if v.len() != n {
            return Err(Error::Data(format!(
                "{source}: {n} fields but {} vocabularies",
                v.len()
            )));
        }
    }
    let mut vocabs: Vec<Vocabulary> =
        vocab.map_or_else(|| vec![Vocabulary::default(); n], <[_]>::to_vec);
    let building = vocab.is_none();
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n + 1 {
            return Err(Error::Data(format!(
                "{source}:{lineno}: expected {} columns, found {}",
                n + 1,
                cells.len()
            )));
        }
        let label = match cells[n] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Data(format!(
                    "{source}:{lineno}: label {other:?} is not 0 or 1"
                )))
            }
        };
        let indices = cells[..n]
            .iter()
            .zip(vocabs.iter_mut())
            .map(|(tok, v)| {
                if building {
                    v.intern(tok)
                } else {
                    v.index_of(tok)
                }
            })
            .collect();
        rows.push(Row { indices, label });
    }
    let fields = names[..n]
        .iter()
        .zip(&vocabs)
        .map(|(name, v)| Field {
            name: (*name).to_string(),
            cardinality: v.cardinality(),
        })
        .collect();
    let mut ds = Dataset::new(
        FieldSchema::new(fields)?,
        rows,
        Provenance::Csv {
            path: source.to_string(),
        },
    )?;
    ds.vocab = Some(vocabs);
    Ok(ds)
}

/// Relative sizes of the train/validation/test parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [8.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle followed by contiguous cuts at the cumulative ratios.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    if ds.len() < 10 {
        return Err(Error::Config(format!(
            "cannot split {} rows; need at least 10",
            ds.len()
        )));
    }
    if spec.ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let total: f64 = spec.ratios.iter().sum();
    let n = ds.len();
    let cut1 = ((n as f64) * spec.ratios[0] / total).round() as usize;
    let cut2 = ((n as f64) * (spec.ratios[0] + spec.ratios[1]) / total).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(spec.seed));
    let take = |range: std::ops::Range<usize>| -> Dataset {
        ds.with_rows(order[range].iter().map(|&i| ds.rows[i].clone()).collect())
    };
    Ok(Splits {
        train: take(0..cut1),
        val: take(cut1..cut2),
        test: take(cut2..n),
    })
}

/// Per-epoch shuffled minibatches; the final short batch is kept.
pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::rng(epoch_seed));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch::from_rows(ds.schema.n_fields(), chunk.iter().map(|&i| &ds.rows[i])))
        .collect())
}

/// Seeded uniform subset without replacement of `round(fraction * len)`
/// rows, kept in original order. Subsets for the same seed are nested.
pub fn subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} not in (0, 1]")));
    }
    let keep = ((ds.len() as f64) * fraction).round() as usize;
    if keep == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} of {} rows is empty",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    Ok(ds.with_rows(chosen.into_iter().map(|i| ds.rows[i].clone()).collect()))
}
