//! Collapse measurements: information abundance and its normalized forms,
//! diversity between embedding sets, sub-embedding IA grids with their
//! correlation summaries, and the spectral decomposition of FM gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, principal_angle_cosines, svd, Matrix};
use crate::rng::{self, derive_seed};

/// `sum(sigma) / max(sigma)`.
pub fn ia_from_sigma(sigma: &[f64]) -> Result<f64> {
    let max = sigma.iter().copied().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return Err(Error::Degenerate(
            "information abundance of an all-zero matrix".into(),
        ));
    }
    Ok(sigma.iter().sum::<f64>() / max)
}

/// Information abundance: the sum of singular values divided by the
/// largest. Lies in `[1, min(rows, cols)]`.
pub fn information_abundance(e: &Matrix) -> Result<f64> {
    if e.is_zero() {
        return Err(Error::Degenerate(
            "information abundance of an all-zero matrix".into(),
        ));
    }
    ia_from_sigma(&svd(e)?.sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// `IA(E) / K`.
    PerSize,
    /// `IA(E)` divided by the mean IA of `samples` standard-normal matrices of
    /// the same shape.
    PerRandom { samples: usize, seed: u64 },
}

impl NormalizeMode {
    pub fn per_random() -> Self {
        NormalizeMode::PerRandom {
            samples: 16,
            seed: 0,
        }
    }
}

pub fn normalized_ia(e: &Matrix, mode: NormalizeMode) -> Result<f64> {
    let ia = information_abundance(e)?;
    match mode {
        NormalizeMode::PerSize => Ok(ia / e.cols() as f64),
        NormalizeMode::PerRandom { samples, seed } => {
            if samples == 0 {
                return Err(Error::Config(
                    "per-random normalization needs samples >= 1".into(),
                ));
            }
            let mut total = 0.0;
            for s in 0..samples {
                let mut r = rng::rng(derive_seed(seed, &[rng::TAG_RANDOM_IA, s as u64]));
                total +=
                    information_abundance(&rng::normal_matrix(e.rows(), e.cols(), 1.0, &mut r))?;
            }
            Ok(ia / (total / samples as f64))
        }
    }
}

/// `1 - mean(cos(phi))` over the principal angles between the left singular
/// bases of two equally shaped matrices.
pub fn diversity(e1: &Matrix, e2: &Matrix) -> Result<f64> {
    if e1.shape() != e2.shape() {
        return Err(Error::shape(
            "diversity",
            format!("{:?} vs {:?}", e1.shape(), e2.shape()),
        ));
    }
    if e1.is_zero() || e2.is_zero() {
        return Err(Error::Degenerate("diversity of an all-zero matrix".into()));
    }
    let u1 = svd(e1)?.u;
    let u2 = svd(e2)?.u;
    let cos = principal_angle_cosines(&u1, &u2)?;
    let k = cos.len() as f64;
    Ok((1.0 - cos.iter().sum::<f64>() / k).clamp(0.0, 1.0))
}

/// Mean pairwise diversity between the column blocks obtained by cutting
/// `e` into `parts` equally wide pieces.
pub fn split_diversity(e: &Matrix, parts: usize) -> Result<Matrix> {
    if parts < 2 || e.cols() % parts != 0 {
        return Err(Error::Config(format!(
            "cannot split {} columns into {parts} equal parts",
            e.cols()
        )));
    }
    let w = e.cols() / parts;
    let blocks: Vec<Matrix> = (0..parts)
        .map(|p| e.column_block(p * w, (p + 1) * w))
        .collect::<Result<_>>()?;
    diversity_matrix(&blocks)
}

/// Symmetric matrix of pairwise diversities (zero diagonal).
pub fn diversity_matrix(sets: &[Matrix]) -> Result<Matrix> {
    let n = sets.len();
    let mut out = Matrix::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let d = diversity(&sets[a], &sets[b])?;
            out.set(a, b, d);
            out.set(b, a, d);
        }
    }
    Ok(out)
}

/// Mean of the strictly upper triangle.
pub fn mean_off_diagonal(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..n {
        for b in (a + 1)..n {
            total += m.get(a, b);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Square map from field pairs `(i, j)` to values.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMap<T> {
    n: usize,
    cells: Vec<Option<T>>,
}

impl<T> PairMap<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: (0..n * n).map(|_| None).collect(),
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                m.insert(i, j, f(i, j));
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, i: usize, j: usize, value: T) {
        self.cells[i * self.n + j] = Some(value);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&T> {
        self.cells.get(i * self.n + j).and_then(Option::as_ref)
    }
}

/// `values[i][j] = IA(E_i W_{i->j}^T)`, plus the field order that sorts
/// fields by ascending `IA(E_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IaGrid {
    pub n_fields: usize,
    pub values: Vec<Vec<f64>>,
    pub field_ia: Vec<f64>,
    pub field_order: Vec<usize>,
}

/// Field indices sorted by ascending value, ties broken by index.
pub fn ascending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

pub fn sub_embedding_ia_grid(
    embeddings: &[Matrix],
    projections: &PairMap<Matrix>,
) -> Result<IaGrid> {
    let n = embeddings.len();
    if projections.n() != n {
        return Err(Error::Contract(format!(
            "{n} embeddings but projection map covers {} fields",
            projections.n()
        )));
    }
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let flat: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let w = projections
                .get(i, j)
                .ok_or_else(|| Error::Contract(format!("missing projection W_{{{i}->{j}}}")))?;
            let e = &embeddings[i];
            if w.shape() != (e.cols(), e.cols()) {
                return Err(Error::shape(
                    "sub_embedding_ia_grid",
                    format!(
                        "W_{{{i}->{j}}} is {:?}, embedding width {}",
                        w.shape(),
                        e.cols()
                    ),
                ));
            }
            information_abundance(&matmul_nt(e, w)?)
        })
        .collect::<Result<_>>()?;
    let field_ia: Vec<f64> = embeddings
        .par_iter()
        .map(information_abundance)
        .collect::<Result<_>>()?;
    Ok(IaGrid {
        n_fields: n,
        values: flat.chunks(n).map(<[f64]>::to_vec).collect(),
        field_order: ascending_order(&field_ia),
        field_ia,
    })
}

/// Sub-embedding grid of a field-aware model whose tables are split into
/// `N - 1` column slices (`E_i = [E_i^{->j}]_{j != i}`). The diagonal holds
/// `IA(E_i)` of the whole table.
pub fn ffm_sub_embedding_grid(embeddings: &[Matrix]) -> Result<IaGrid> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 fields".into()));
    }
    let k = embeddings[0].cols();
    if k % (n - 1) != 0 || embeddings.iter().any(|e| e.cols() != k) {
        return Err(Error::Config(format!(
            "embedding width {k} not divisible by {} or widths differ",
            n - 1
        )));
    }
    let w = k / (n - 1);
    let field_ia: Vec<f64> = embeddings
        .iter()
        .map(information_abundance)
        .collect::<Result<_>>()?;
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            values[i][j] = if i == j {
                field_ia[i]
            } else {
                let s = if j < i { j } else { j - 1 };
                information_abundance(&embeddings[i].column_block(s * w, (s + 1) * w)?)?
            };
        }
    }
    Ok(IaGrid {
        n_fields: n,
        values,
        field_order: ascending_order(&field_ia),
        field_ia,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummaries {
    /// `row_sums[r] = sum_j values[order[r]][j]`.
    pub row_sums: Vec<f64>,
    /// `col_sums[r] = sum_i values[i][order[r]]`.
    pub col_sums: Vec<f64>,
    pub row_corr: f64,
    pub col_corr: f64,
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Row and column sums of a grid in field order, and their Pearson
/// correlation with the rank index `0..N`.
pub fn ia_grid_summaries(grid: &IaGrid, include_diagonal: bool) -> Result<GridSummaries> {
    let n = grid.n_fields;
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "grid correlations need at least 3 fields, got {n}"
        )));
    }
    let cell = |i: usize, j: usize| -> f64 {
        if i == j && !include_diagonal {
            0.0
        } else {
            grid.values[i][j]
        }
    };
    let row_sums: Vec<f64> = grid
        .field_order
        .iter()
        .map(|&i| (0..n).map(|j| cell(i, j)).sum())
        .collect();
    let col_sums: Vec<f64> = grid
        .field_order
        .iter()
        .map(|&j| (0..n).map(|i| cell(i, j)).sum())
        .collect();
    let rank: Vec<f64> = (0..n).map(|r| r as f64).collect();
    Ok(GridSummaries {
        row_corr: pearson(&rank, &row_sums),
        col_corr: pearson(&rank, &col_sums),
        row_sums,
        col_sums,
    })
}

/// Field-wise decomposition of the FM-interaction gradient with respect to
/// the target field's embedding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSpectral {
    pub target_field: usize,
    /// `theta[i]`, length `K`; zero for the target field.
    pub theta: Vec<Vec<f64>>,
    /// `n_fields x K`; zero-padded where a table has fewer than `K` rows.
    pub alpha: Matrix,
    /// `n_fields x K` singular values of each table.
    pub source_sigma: Matrix,
}

impl GradSpectral {
    /// `sum_i theta_i`.
    pub fn total(&self) -> Vec<f64> {
        let k = self.theta.first().map_or(0, Vec::len);
        let mut out = vec![0.0; k];
        for t in &self.theta {
            for (o, v) in out.iter_mut().zip(t) {
                *o += v;
            }
        }
        out
    }
}

/// Decomposes `dL/de_target = sum_{i != target} theta_i` for an FM-style
/// interaction, where `theta_i = sum_k alpha_{i,k} sigma_{i,k} v_{i,k}` and
/// `alpha_{i,k} = mean_b loss_grads[b] * u_{i,k}[x_i^(b)]`.
///
/// The gradient is taken with respect to a single vector shared by every
/// sample at the target field; when all samples use the same row of the
/// target table this is that row's gradient.
pub fn gradient_spectral_decomposition(
    batch: &Batch,
    embeddings: &[Matrix],
    loss_grads: &[f64],
    target_field: usize,
) -> Result<GradSpectral> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if loss_grads.len() != batch.len() {
        return Err(Error::Contract(format!(
            "{} loss gradients for a batch of {}",
            loss_grads.len(),
            batch.len()
        )));
    }
    let n = embeddings.len();
    if batch.n_fields() != n || target_field >= n {
        return Err(Error::Contract(format!(
            "batch has {} fields, {n} embeddings, target {target_field}",
            batch.n_fields()
        )));
    }
    let k = embeddings[0].cols();
    let b = batch.len() as f64;
    let mut theta = vec![vec![0.0; k]; n];
    let mut alpha = Matrix::zeros(n, k);
    let mut source_sigma = Matrix::zeros(n, k);
    for (i, e) in embeddings.iter().enumerate() {
        if e.cols() != k {
            return Err(Error::shape(
                "gradient_spectral_decomposition",
                "tables differ in width",
            ));
        }
        let s = svd(e)?;
        for (c, &sig) in s.sigma.iter().enumerate() {
            source_sigma.set(i, c, sig);
        }
        if i == target_field {
            continue;
        }
        for c in 0..s.sigma.len() {
            let mut acc = 0.0;
            for (g, &x) in loss_grads.iter().zip(&batch.fields[i]) {
                acc += g * s.u.get(x, c);
            }
            let a = acc / b;
            alpha.set(i, c, a);
            for (t, r) in theta[i].iter_mut().zip(0..k) {
                *t += a * s.sigma[c] * s.v.get(r, c);
            }
        }
    }
    Ok(GradSpectral {
        target_field,
        theta,
        alpha,
        source_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn padded_identity(d: usize, k: usize, c: f64) -> Matrix {
        Matrix::from_fn(d, k, |r, col| if r == col { c } else { 0.0 })
    }

    #[test]
    fn ia_of_scaled_identity_is_k() {
        let e = padded_identity(10, 4, 2.5);
        assert!((information_abundance(&e).unwrap() - 4.0).abs() < 1e-12);
        assert!((normalized_ia(&e, NormalizeMode::PerSize).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ia_of_rank_one_is_one() {
        let e = Matrix::from_fn(8, 5, |r, c| (r as f64 - 3.5) * (1.0 + c as f64));
        assert!((information_abundance(&e).unwrap() - 1.0).abs() < 1e-9);
        assert!((normalized_ia(&e, NormalizeMode::PerSize).unwrap() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn ia_of_zero_matrix_is_an_error() {
        assert!(matches!(
            information_abundance(&Matrix::zeros(3, 2)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn per_random_normalization_of_gaussian_is_near_one() {
        let mut r = rng::rng(12345);
        let e = rng::normal_matrix(100, 10, 1.0, &mut r);
        let v = normalized_ia(&e, NormalizeMode::per_random()).unwrap();
        assert!((v - 1.0).abs() <= 0.1, "{v}");
    }

    #[test]
    fn diversity_examples() {
        let e = Matrix::from_fn(6, 2, |r, c| ((r * 3 + c * 7) % 5) as f64 - 2.0);
        assert!(diversity(&e, &e).unwrap().abs() < 1e-12);
        let a = Matrix::from_fn(8, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let b = Matrix::from_fn(8, 2, |r, c| if r == c + 4 { 3.0 } else { 0.0 });
        assert!((diversity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(diversity(&a, &Matrix::zeros(8, 3)).is_err());
    }

    #[test]
    fn grid_with_identity_projections_repeats_field_ia() {
        let mut r = rng::rng(4);
        let embs: Vec<Matrix> = (0..3)
            .map(|i| rng::normal_matrix(10 + i, 3, 1.0, &mut r))
            .collect();
        let proj = PairMap::from_fn(3, |_, _| Matrix::identity(3));
        let g = sub_embedding_ia_grid(&embs, &proj).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.values[i][j] - g.field_ia[i]).abs() < 1e-10);
            }
        }
        let mut sorted = g.field_order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn grid_rank_one_projection_gives_one() {
        let mut r = rng::rng(5);
        let embs: Vec<Matrix> = (0..3)
            .map(|_| rng::normal_matrix(12, 3, 1.0, &mut r))
            .collect();
        let w = Matrix::from_fn(3, 3, |a, b| (a as f64 + 1.0) * (b as f64 - 0.5));
        let proj = PairMap::from_fn(3, |_, _| w.clone());
        let g = sub_embedding_ia_grid(&embs, &proj).unwrap();
        assert!(g.values.iter().flatten().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn grid_missing_projection_is_contract_error() {
        let embs = vec![Matrix::identity(2), Matrix::identity(2)];
        let mut proj = PairMap::new(2);
        proj.insert(0, 0, Matrix::identity(2));
        assert!(matches!(
            sub_embedding_ia_grid(&embs, &proj),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn summaries_constant_and_monotone() {
        let constant = IaGrid {
            n_fields: 3,
            values: vec![vec![2.0; 3]; 3],
            field_ia: vec![1.0, 2.0, 3.0],
            field_order: vec![0, 1, 2],
        };
        let s = ia_grid_summaries(&constant, true).unwrap();
        assert_eq!((s.row_corr, s.col_corr), (0.0, 0.0));

        let increasing = IaGrid {
            n_fields: 4,
            values: (0..4).map(|_| vec![4.0, 1.0, 3.0, 2.0]).collect(),
            field_ia: vec![4.0, 1.0, 3.0, 2.0],
            field_order: vec![1, 3, 2, 0],
        };
        let s = ia_grid_summaries(&increasing, true).unwrap();
        assert!(s.col_sums.windows(2).all(|w| w[0] < w[1]));
        assert!(s.col_corr > 0.0);

        let tiny = IaGrid {
            n_fields: 2,
            values: vec![vec![1.0; 2]; 2],
            field_ia: vec![1.0; 2],
            field_order: vec![0, 1],
        };
        assert!(matches!(
            ia_grid_summaries(&tiny, true),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn spectral_zero_loss_grads_vanish() {
        let mut r = rng::rng(6);
        let embs: Vec<Matrix> = (0..3)
            .map(|_| rng::normal_matrix(5, 3, 1.0, &mut r))
            .collect();
        let batch = Batch {
            fields: vec![vec![0, 1], vec![2, 3], vec![4, 0]],
            labels: vec![0.0, 1.0],
        };
        let g = gradient_spectral_decomposition(&batch, &embs, &[0.0, 0.0], 0).unwrap();
        assert!(g.alpha.is_zero());
        assert!(g.total().iter().all(|&v| v == 0.0));
        let empty = Batch {
            fields: vec![vec![]; 3],
            labels: vec![],
        };
        assert!(matches!(
            gradient_spectral_decomposition(&empty, &embs, &[], 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn spectral_rank_one_tables_give_parallel_components() {
        let mut r = rng::rng(7);
        let dir = [0.6, -0.8, 0.0];
        let mut embs = vec![rng::normal_matrix(4, 3, 1.0, &mut r)];
        for i in 1..3 {
            embs.push(Matrix::from_fn(6, 3, |row, c| {
                (row as f64 - 2.0 + i as f64) * dir[c]
            }));
        }
        let batch = Batch {
            fields: vec![vec![0, 0, 0], vec![1, 4, 5], vec![0, 2, 3]],
            labels: vec![1.0, 0.0, 1.0],
        };
        let g = gradient_spectral_decomposition(&batch, &embs, &[0.3, -0.7, 0.2], 0).unwrap();
        for theta in &g.theta[1..] {
            // theta x dir = 0
            let cross = [
                theta[1] * dir[2] - theta[2] * dir[1],
                theta[2] * dir[0] - theta[0] * dir[2],
                theta[0] * dir[1] - theta[1] * dir[0],
            ];
            assert!(cross.iter().all(|c| c.abs() < 1e-12), "{theta:?}");
        }
    }
}
