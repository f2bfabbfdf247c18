//! Embedding tables, the interaction modules, the multi-embedding wrapper,
//! the MLP head and the unitary projection regularizer.
//!
//! A [`Model`] pairs a [`ModelLayout`] (which slot plays which role) with
//! the [`ParamStore`] holding the values. Keeping them apart lets callers
//! borrow the layout immutably while mutating the store, which is what
//! finite-difference checks and optimizers need.

use serde::{Deserialize, Serialize};

use crate::data::{sigmoid, Batch};
pub use crate::data::{Field, FieldSchema};
use crate::engine::{bce_loss, ParamStore, SlotId, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, Matrix};
use crate::metrics::PairMap;
use crate::rng::{self, derive_seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    DnnConcat,
    Fm,
    Fwfm,
    Ffm,
    Ipnn,
    Dcnv2,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 6] = [
        InteractionKind::DnnConcat,
        InteractionKind::Fm,
        InteractionKind::Fwfm,
        InteractionKind::Ffm,
        InteractionKind::Ipnn,
        InteractionKind::Dcnv2,
    ];

    /// Interactions whose multi-embedding form collapses to a single
    /// embedding of size `M*K` unless a non-linearity follows them.
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            InteractionKind::Fm
                | InteractionKind::Ipnn
                | InteractionKind::Fwfm
                | InteractionKind::DnnConcat
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            InteractionKind::DnnConcat => "dnn_concat",
            InteractionKind::Fm => "fm",
            InteractionKind::Fwfm => "fwfm",
            InteractionKind::Ffm => "ffm",
            InteractionKind::Ipnn => "ipnn",
            InteractionKind::Dcnv2 => "dcnv2",
        }
    }
}

impl std::fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub interaction: InteractionKind,
    /// Width `K` of each embedding set.
    pub embedding_size: usize,
    /// Number of embedding sets `M`; 1 is a single-embedding model.
    pub num_sets: usize,
    /// dcnv2 only.
    pub cross_layers: usize,
    /// Hidden layer sizes of the head. The output layer is implicit.
    pub mlp: Vec<usize>,
    pub me_shared_interaction: bool,
    pub unitary_reg_weight: f64,
    /// Affine map plus activation after each set's interaction. `None`
    /// means on exactly when `num_sets > 1`.
    pub me_nonlinear_projection: Option<bool>,
    pub projection_activation: Activation,
    /// Standard deviation of the embedding initialization.
    pub init_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            interaction: InteractionKind::Dcnv2,
            embedding_size: 16,
            num_sets: 1,
            cross_layers: 4,
            mlp: vec![400, 400],
            me_shared_interaction: false,
            unitary_reg_weight: 0.0,
            me_nonlinear_projection: None,
            projection_activation: Activation::Relu,
            init_scale: 0.01,
        }
    }
}

impl ModelSpec {
    pub fn new(interaction: InteractionKind, embedding_size: usize, num_sets: usize) -> Self {
        Self {
            interaction,
            embedding_size,
            num_sets,
            ..Self::default()
        }
    }

    pub fn projection_enabled(&self) -> bool {
        self.me_nonlinear_projection.unwrap_or(self.num_sets > 1)
    }

    /// Shape checks plus the non-linearity guard for multi-embedding models
    /// with linear interactions.
    pub fn validate(&self, schema: &FieldSchema) -> Result<()> {
        self.validate_shapes(schema)?;
        if self.num_sets > 1
            && self.interaction.is_linear()
            && !(self.projection_enabled() && self.projection_activation == Activation::Relu)
        {
            return Err(Error::Config(format!(
                "{} with num_sets = {} needs the relu projection (me_nonlinear_projection); \
                 without it the model is a single embedding of size {}",
                self.interaction,
                self.num_sets,
                self.num_sets * self.embedding_size
            )));
        }
        Ok(())
    }

    fn validate_shapes(&self, schema: &FieldSchema) -> Result<()> {
        schema.validate()?;
        let n = schema.n_fields();
        if self.embedding_size == 0 {
            return Err(Error::Config("embedding_size must be >= 1".into()));
        }
        if self.num_sets == 0 {
            return Err(Error::Config("num_sets must be >= 1".into()));
        }
        if self.interaction == InteractionKind::Ffm && self.embedding_size % (n - 1) != 0 {
            return Err(Error::Config(format!(
                "ffm needs embedding_size divisible by {} (fields - 1), got {}",
                n - 1,
                self.embedding_size
            )));
        }
        if self.interaction == InteractionKind::Dcnv2 && self.cross_layers == 0 {
            return Err(Error::Config("dcnv2 needs cross_layers >= 1".into()));
        }
        if self.mlp.contains(&0) {
            return Err(Error::Config("mlp hidden sizes must be >= 1".into()));
        }
        if !(self.unitary_reg_weight >= 0.0 && self.unitary_reg_weight.is_finite()) {
            return Err(Error::Config(format!(
                "unitary_reg_weight must be finite and >= 0, got {}",
                self.unitary_reg_weight
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "init_scale must be finite and > 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    /// Width of one set's interaction output.
    pub fn interaction_width(&self, n_fields: usize) -> usize {
        let nk = n_fields * self.embedding_size;
        match self.interaction {
            InteractionKind::Fm | InteractionKind::Fwfm | InteractionKind::Ffm => 1,
            InteractionKind::Ipnn => n_pairs(n_fields) + nk,
            InteractionKind::DnnConcat | InteractionKind::Dcnv2 => nk,
        }
    }

    fn interaction_sets(&self) -> usize {
        if self.me_shared_interaction {
            1
        } else {
            self.num_sets
        }
    }
}

pub fn n_pairs(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Field pairs `(i, j)` with `i < j` in lexicographic order.
pub fn field_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect()
}

/// Index of the field-aware slice of field `i` used against field `j`.
pub fn ffm_slice(i: usize, j: usize) -> usize {
    if j < i {
        j
    } else {
        j - 1
    }
}

/// `tables[m][i]` is the `D_i x K` table of field `i` in set `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBank {
    pub tables: Vec<Vec<Matrix>>,
}

impl EmbeddingBank {
    pub fn num_sets(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, m: usize, i: usize) -> &Matrix {
        &self.tables[m][i]
    }

    /// Tables of one field across all sets, concatenated column-wise.
    pub fn concatenated(&self, i: usize) -> Result<Matrix> {
        let parts: Vec<&Matrix> = self.tables.iter().map(|set| &set[i]).collect();
        Matrix::hcat(&parts)
    }
}

pub fn init_embeddings(schema: &FieldSchema, spec: &ModelSpec, seed: u64) -> Result<EmbeddingBank> {
    spec.validate_shapes(schema)?;
    let tables = (0..spec.num_sets)
        .map(|m| {
            schema
                .fields
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let mut r =
                        rng::rng(derive_seed(seed, &[rng::TAG_EMBEDDING, m as u64, i as u64]));
                    rng::normal_matrix(f.cardinality, spec.embedding_size, spec.init_scale, &mut r)
                })
                .collect()
        })
        .collect();
    Ok(EmbeddingBank { tables })
}

#[derive(Clone, Debug)]
enum InteractionParams {
    None,
    Fwfm { r: SlotId },
    Cross { layers: Vec<(SlotId, SlotId)> },
}

/// Which slots of a store play which role in the model.
#[derive(Clone, Debug)]
pub struct ModelLayout {
    spec: ModelSpec,
    schema: FieldSchema,
    emb: Vec<Vec<SlotId>>,
    inter: Vec<InteractionParams>,
    proj: Vec<(SlotId, SlotId)>,
    mlp: Vec<(SlotId, SlotId)>,
    /// `lambdas[p][l]` is an `N x N` slot; entry `(i, j)` belongs to `W_{i->j}`.
    lambdas: Vec<Vec<SlotId>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub bce: f64,
    /// Unweighted regularizer value.
    pub reg: f64,
    /// `bce + unitary_reg_weight * reg`.
    pub total: f64,
}

fn glorot(rows: usize, cols: usize, seed: u64) -> Matrix {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    rng::normal_matrix(rows, cols, std, &mut rng::rng(seed))
}

fn set_prefix(m: usize) -> String {
    format!("set{m}")
}

impl ModelLayout {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn schema(&self) -> &FieldSchema {
        &self.schema
    }

    pub fn n_fields(&self) -> usize {
        self.schema.n_fields()
    }

    /// Embedding slot of field `i` in set `m`.
    pub fn embedding_slot(&self, m: usize, i: usize) -> SlotId {
        self.emb[m][i]
    }

    pub fn embedding_slots(&self) -> impl Iterator<Item = SlotId> + '_ {
        self.emb.iter().flatten().copied()
    }

    fn inter_for(&self, m: usize) -> &InteractionParams {
        &self.inter[if self.spec.me_shared_interaction {
            0
        } else {
            m
        }]
    }

    fn proj_for(&self, m: usize) -> Option<(SlotId, SlotId)> {
        if self.proj.is_empty() {
            None
        } else {
            Some(
                self.proj[if self.spec.me_shared_interaction {
                    0
                } else {
                    m
                }],
            )
        }
    }

    /// First cross layer of the interaction used by set `m`, if any.
    pub fn first_cross_layer(&self, m: usize) -> Option<SlotId> {
        match self.inter_for(m) {
            InteractionParams::Cross { layers } => layers.first().map(|l| l.0),
            _ => None,
        }
    }

    fn set_output(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &Batch,
        m: usize,
    ) -> Result<Var> {
        let n = self.n_fields();
        let kind = self.spec.interaction;
        let out = if kind == InteractionKind::Ffm {
            let w = self.spec.embedding_size / (n - 1);
            let mut dots = Vec::with_capacity(n_pairs(n));
            for (i, j) in field_pairs(n) {
                let si = ffm_slice(i, j) * w;
                let sj = ffm_slice(j, i) * w;
                let a = tape.lookup_cols(store, self.emb[m][i], &batch.fields[i], si..si + w)?;
                let b = tape.lookup_cols(store, self.emb[m][j], &batch.fields[j], sj..sj + w)?;
                dots.push(tape.dot(a, b)?);
            }
            tape.sum(&dots)?
        } else {
            let e: Vec<Var> = (0..n)
                .map(|i| tape.lookup(store, self.emb[m][i], &batch.fields[i]))
                .collect::<Result<_>>()?;
            let pair_dots = |tape: &mut Tape| -> Result<Vec<Var>> {
                field_pairs(n)
                    .into_iter()
                    .map(|(i, j)| tape.dot(e[i], e[j]))
                    .collect()
            };
            match (kind, self.inter_for(m)) {
                (InteractionKind::Fm, _) => {
                    let d = pair_dots(tape)?;
                    tape.sum(&d)?
                }
                (InteractionKind::Fwfm, InteractionParams::Fwfm { r }) => {
                    let d = pair_dots(tape)?;
                    let c = tape.concat(&d)?;
                    tape.affine(store, c, *r, None)?
                }
                (InteractionKind::Ipnn, _) => {
                    let mut parts = pair_dots(tape)?;
                    parts.extend_from_slice(&e);
                    tape.concat(&parts)?
                }
                (InteractionKind::DnnConcat, _) => tape.concat(&e)?,
                (InteractionKind::Dcnv2, InteractionParams::Cross { layers }) => {
                    let x0 = tape.concat(&e)?;
                    let mut x = x0;
                    for &(w, b) in layers {
                        let y = tape.affine(store, x, w, Some(b))?;
                        let z = tape.mul(x0, y)?;
                        x = tape.sum(&[z, x])?;
                    }
                    x
                }
                _ => {
                    return Err(Error::State(format!(
                        "{kind} layout is missing its parameters"
                    )))
                }
            }
        };
        match self.proj_for(m) {
            Some((w, b)) => {
                let y = tape.affine(store, out, w, Some(b))?;
                Ok(match self.spec.projection_activation {
                    Activation::Relu => tape.relu(y),
                    Activation::Identity => y,
                })
            }
            None => Ok(out),
        }
    }

    /// Records the forward pass for a batch and returns the `B x 1` logits.
    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        if batch.n_fields() != self.n_fields() {
            return Err(Error::Data(format!(
                "batch has {} fields, model expects {}",
                batch.n_fields(),
                self.n_fields()
            )));
        }
        let m_sets = self.spec.num_sets;
        let mut h = if m_sets == 1 {
            self.set_output(store, tape, batch, 0)?
        } else {
            let outs: Vec<Var> = (0..m_sets)
                .map(|m| self.set_output(store, tape, batch, m))
                .collect::<Result<_>>()?;
            let s = tape.sum(&outs)?;
            tape.scale(s, 1.0 / m_sets as f64)
        };
        let last = self.mlp.len() - 1;
        for (l, &(w, b)) in self.mlp.iter().enumerate() {
            h = tape.affine(store, h, w, Some(b))?;
            if l < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Logits for every sample of a batch.
    pub fn predict(&self, store: &ParamStore, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward(store, &mut tape, batch)?;
        Ok(tape.value(out).as_slice().to_vec())
    }

    /// Mean BCE plus the weighted unitary regularizer, without gradients.
    pub fn loss(&self, store: &ParamStore, batch: &Batch) -> Result<LossBreakdown> {
        let logits = self.predict(store, batch)?;
        let bce = logits
            .iter()
            .zip(&batch.labels)
            .map(|(&z, &y)| bce_loss(z, y).0)
            .sum::<f64>()
            / batch.len() as f64;
        let reg = self.unitary_reg(store)?;
        Ok(LossBreakdown {
            bce,
            reg,
            total: bce + self.spec.unitary_reg_weight * reg,
        })
    }

    /// Like [`loss`](Self::loss) but also accumulates gradients into `store`.
    /// Gradients are added to whatever the accumulators already hold.
    pub fn loss_and_grad(&self, store: &mut ParamStore, batch: &Batch) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut tape = Tape::new();
        let out = self.forward(store, &mut tape, batch)?;
        let inv_b = 1.0 / batch.len() as f64;
        let logits = tape.value(out).as_slice().to_vec();
        let mut bce = 0.0;
        let mut seed = Matrix::zeros(logits.len(), 1);
        for (b, (&z, &y)) in logits.iter().zip(&batch.labels).enumerate() {
            let (l, g) = bce_loss(z, y);
            bce += l;
            seed.set(b, 0, g * inv_b);
        }
        bce *= inv_b;
        tape.backward(store, out, &seed)?;
        let reg = self.unitary_reg(store)?;
        if self.spec.unitary_reg_weight > 0.0 {
            self.accumulate_unitary_reg(store, self.spec.unitary_reg_weight)?;
        }
        Ok(LossBreakdown {
            bce,
            reg,
            total: bce + self.spec.unitary_reg_weight * reg,
        })
    }

    /// Regularizer value summed over every cross layer of every interaction
    /// parameter set. Zero for models without projection blocks or when the
    /// regularizer weight is 0.
    fn unitary_reg(&self, store: &ParamStore) -> Result<f64> {
        let mut total = 0.0;
        for (p, params) in self.inter.iter().enumerate() {
            let InteractionParams::Cross { layers } = params else {
                continue;
            };
            let Some(lams) = self.lambdas.get(p) else {
                continue;
            };
            for (&(w, _), &lam) in layers.iter().zip(lams) {
                total +=
                    unitary_reg_blocks(store.value(w), store.value(lam), self.spec.embedding_size)?
                        .0;
            }
        }
        Ok(total)
    }

    fn accumulate_unitary_reg(&self, store: &mut ParamStore, weight: f64) -> Result<()> {
        for (p, params) in self.inter.iter().enumerate() {
            let InteractionParams::Cross { layers } = params else {
                continue;
            };
            let Some(lams) = self.lambdas.get(p) else {
                continue;
            };
            for (&(w, _), &lam) in layers.iter().zip(lams) {
                let (_, dw, dlam) =
                    unitary_reg_blocks(store.value(w), store.value(lam), self.spec.embedding_size)?;
                store.accumulate(w, &dw.scaled(weight))?;
                store.accumulate(lam, &dlam.scaled(weight))?;
            }
        }
        Ok(())
    }
}

/// Loss and gradients of `sum_{i,j} ||B_ij^T B_ij - lambda_ij I||_F^2` over the
/// `K x K` blocks of a full `NK x NK` cross-layer matrix, where block
/// `(row j, col i)` is `W_{i->j}` and `lambda_ij` is `lambdas[(i, j)]`.
fn unitary_reg_blocks(w: &Matrix, lambdas: &Matrix, k: usize) -> Result<(f64, Matrix, Matrix)> {
    let n = lambdas.rows();
    if w.shape() != (n * k, n * k) || lambdas.cols() != n {
        return Err(Error::shape(
            "unitary_reg",
            format!("W {:?}, lambdas {:?}, K = {k}", w.shape(), lambdas.shape()),
        ));
    }
    let mut loss = 0.0;
    let mut dw = Matrix::zeros(n * k, n * k);
    let mut dlam = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let block = w.block(j * k, i * k, k, k)?;
            let (l, db, dl) = unitary_reg_term_grad(&block, lambdas.get(i, j))?;
            loss += l;
            dw.set_block(j * k, i * k, &db)?;
            dlam.set(i, j, dl);
        }
    }
    Ok((loss, dw, dlam))
}

/// `||W^T W - lambda I||_F^2` with its gradients `4 W A` and `-2 tr(A)`,
/// `A = W^T W - lambda I`.
fn unitary_reg_term_grad(w: &Matrix, lambda: f64) -> Result<(f64, Matrix, f64)> {
    let mut a = matmul_tn(w, w)?;
    for d in 0..a.rows() {
        a.set(d, d, a.get(d, d) - lambda);
    }
    let loss = a.as_slice().iter().map(|v| v * v).sum();
    let trace: f64 = (0..a.rows()).map(|d| a.get(d, d)).sum();
    Ok((loss, matmul(w, &a)?.scaled(4.0), -2.0 * trace))
}

/// One field pair's regularizer term `||W^T W - lambda I||_F^2`.
pub fn unitary_reg_term(w: &Matrix, lambda: f64) -> Result<f64> {
    if w.rows() != w.cols() {
        return Err(Error::shape(
            "unitary_reg_term",
            format!("{:?} is not square", w.shape()),
        ));
    }
    Ok(unitary_reg_term_grad(w, lambda)?.0)
}

/// `sum_{i,j} ||W_{i->j}^T W_{i->j} - lambda_ij I||_F^2` over a field-pair map.
pub fn unitary_reg_loss(projections: &PairMap<Matrix>, lambdas: &Matrix) -> Result<f64> {
    let n = projections.n();
    if lambdas.shape() != (n, n) {
        return Err(Error::shape(
            "unitary_reg_loss",
            format!("{n} fields but lambdas {:?}", lambdas.shape()),
        ));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = projections
                .get(i, j)
                .ok_or_else(|| Error::Contract(format!("missing projection W_{{{i}->{j}}}")))?;
            total += unitary_reg_term(w, lambdas.get(i, j))?;
        }
    }
    Ok(total)
}

/// The `lambda` minimizing `||W^T W - lambda I||_F^2`, `tr(W^T W) / K`.
pub fn optimal_lambda(w: &Matrix) -> f64 {
    w.as_slice().iter().map(|v| v * v).sum::<f64>() / w.cols() as f64
}

/// A model: its layout plus the parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    layout: ModelLayout,
    store: ParamStore,
}

impl Model {
    /// Builds and initializes a model. Multi-embedding models with a linear
    /// interaction must use the relu projection.
    pub fn new(schema: &FieldSchema, spec: &ModelSpec, seed: u64) -> Result<Model> {
        spec.validate(schema)?;
        Self::build(schema, spec, seed)
    }

    /// Like [`new`](Self::new) but skips the non-linearity guard, for
    /// constructing the degenerate linear multi-embedding models that are
    /// equivalent to a wider single embedding.
    pub fn new_without_guard(schema: &FieldSchema, spec: &ModelSpec, seed: u64) -> Result<Model> {
        spec.validate_shapes(schema)?;
        Self::build(schema, spec, seed)
    }

    fn build(schema: &FieldSchema, spec: &ModelSpec, seed: u64) -> Result<Model> {
        let n = schema.n_fields();
        let k = spec.embedding_size;
        let nk = n * k;
        let mut store = ParamStore::new();
        let bank = init_embeddings(schema, spec, seed)?;
        let mut emb = Vec::with_capacity(spec.num_sets);
        for (m, set) in bank.tables.into_iter().enumerate() {
            let ids = set
                .into_iter()
                .enumerate()
                .map(|(i, t)| store.add(format!("{}/E_{i}", set_prefix(m)), t))
                .collect::<Result<Vec<_>>>()?;
            emb.push(ids);
        }

        let n_inter = spec.interaction_sets();
        let prefix = |p: usize| {
            if spec.me_shared_interaction {
                "shared".to_string()
            } else {
                set_prefix(p)
            }
        };
        let mut inter = Vec::with_capacity(n_inter);
        let mut lambdas = Vec::new();
        for p in 0..n_inter {
            let params = match spec.interaction {
                InteractionKind::Fwfm => InteractionParams::Fwfm {
                    r: store.add(
                        format!("{}/fwfm_r", prefix(p)),
                        Matrix::filled(1, n_pairs(n), 1.0),
                    )?,
                },
                InteractionKind::Dcnv2 => {
                    let mut layers = Vec::with_capacity(spec.cross_layers);
                    let mut lams = Vec::new();
                    for l in 0..spec.cross_layers {
                        let w = glorot(
                            nk,
                            nk,
                            derive_seed(seed, &[rng::TAG_INTERACTION, p as u64, l as u64]),
                        );
                        if spec.unitary_reg_weight > 0.0 {
                            let lam = Matrix::from_fn(n, n, |i, j| {
                                optimal_lambda(
                                    &w.block(j * k, i * k, k, k).expect("block in range"),
                                )
                            });
                            lams.push(store.add(format!("{}/lambda{l}", prefix(p)), lam)?);
                        }
                        let w_id = store.add(format!("{}/cross{l}_w", prefix(p)), w)?;
                        let b_id =
                            store.add(format!("{}/cross{l}_b", prefix(p)), Matrix::zeros(1, nk))?;
                        layers.push((w_id, b_id));
                    }
                    if !lams.is_empty() {
                        lambdas.push(lams);
                    }
                    InteractionParams::Cross { layers }
                }
                _ => InteractionParams::None,
            };
            inter.push(params);
        }

        let width = spec.interaction_width(n);
        let mut proj = Vec::new();
        if spec.projection_enabled() {
            for p in 0..n_inter {
                let w = glorot(
                    width,
                    width,
                    derive_seed(seed, &[rng::TAG_PROJECTION, p as u64]),
                );
                proj.push((
                    store.add(format!("{}/proj_w", prefix(p)), w)?,
                    store.add(format!("{}/proj_b", prefix(p)), Matrix::zeros(1, width))?,
                ));
            }
        }

        let hidden: &[usize] = if spec.projection_enabled() && !spec.mlp.is_empty() {
            &spec.mlp[1..]
        } else {
            &spec.mlp
        };
        let mut mlp = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = width;
        for (l, &fan_out) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let w = glorot(
                fan_out,
                fan_in,
                derive_seed(seed, &[rng::TAG_MLP, l as u64]),
            );
            mlp.push((
                store.add(format!("mlp{l}_w"), w)?,
                store.add(format!("mlp{l}_b"), Matrix::zeros(1, fan_out))?,
            ));
            fan_in = fan_out;
        }

        Ok(Model {
            layout: ModelLayout {
                spec: spec.clone(),
                schema: schema.clone(),
                emb,
                inter,
                proj,
                mlp,
                lambdas,
            },
            store,
        })
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.layout.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parts_mut(&mut self) -> (&ModelLayout, &mut ParamStore) {
        (&self.layout, &mut self.store)
    }

    /// Replaces the value of a named slot.
    pub fn set_param(&mut self, name: &str, value: Matrix) -> Result<()> {
        let id = self.store.require(name)?;
        self.store.set_value(id, value)
    }

    pub fn param(&self, name: &str) -> Result<&Matrix> {
        Ok(self.store.value(self.store.require(name)?))
    }

    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        self.layout.predict(&self.store, batch)
    }

    /// Predicted click probabilities.
    pub fn predict_proba(&self, batch: &Batch) -> Result<Vec<f64>> {
        Ok(self.predict(batch)?.into_iter().map(sigmoid).collect())
    }

    pub fn loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        self.layout.loss(&self.store, batch)
    }

    /// Zeroes the accumulators, then computes the loss and its gradients.
    pub fn loss_and_grad(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        self.store.zero_grads();
        self.layout.loss_and_grad(&mut self.store, batch)
    }

    pub fn embeddings(&self) -> EmbeddingBank {
        EmbeddingBank {
            tables: self
                .layout
                .emb
                .iter()
                .map(|set| set.iter().map(|&id| self.store.value(id).clone()).collect())
                .collect(),
        }
    }

    pub fn set_embeddings(&mut self, bank: &EmbeddingBank) -> Result<()> {
        if bank.tables.len() != self.layout.emb.len() {
            return Err(Error::shape(
                "set_embeddings",
                format!(
                    "{} sets for a {}-set model",
                    bank.tables.len(),
                    self.layout.emb.len()
                ),
            ));
        }
        for (set, ids) in bank.tables.iter().zip(&self.layout.emb) {
            for (t, &id) in set.iter().zip(ids) {
                self.store.set_value(id, t.clone())?;
            }
        }
        Ok(())
    }

    /// `W_{i->j}` blocks of the first cross layer used by set `m`.
    pub fn projection_blocks(&self, m: usize) -> Result<Option<PairMap<Matrix>>> {
        let Some(w) = self.layout.first_cross_layer(m) else {
            return Ok(None);
        };
        Ok(Some(cross_layer_blocks(
            self.store.value(w),
            self.n_fields(),
            self.spec().embedding_size,
        )?))
    }

    pub fn n_fields(&self) -> usize {
        self.layout.n_fields()
    }

    /// Unweighted regularizer value at the current parameters.
    pub fn unitary_reg(&self) -> Result<f64> {
        self.layout.unitary_reg(&self.store)
    }

    /// Every slot plus the first-layer projection blocks of each set as
    /// `set{m}/W_{i}_{j}` (meaning `W_{i->j}`).
    pub fn checkpoint_entries(&self) -> Result<Vec<(String, Matrix)>> {
        let mut entries = self.store.entries();
        for m in 0..self.spec().num_sets {
            if let Some(blocks) = self.projection_blocks(m)? {
                let n = blocks.n();
                for i in 0..n {
                    for j in 0..n {
                        let b = blocks.get(i, j).expect("complete block map").clone();
                        entries.push((format!("{}/W_{i}_{j}", set_prefix(m)), b));
                    }
                }
            }
        }
        Ok(entries)
    }
}

/// Splits an `NK x NK` cross-layer matrix into its field-pair blocks;
/// `W_{i->j}` is the block at row-block `j`, column-block `i`.
pub fn cross_layer_blocks(w: &Matrix, n: usize, k: usize) -> Result<PairMap<Matrix>> {
    if w.shape() != (n * k, n * k) {
        return Err(Error::shape(
            "cross_layer_blocks",
            format!("{:?} for {n} fields of width {k}", w.shape()),
        ));
    }
    let mut map = PairMap::new(n);
    for i in 0..n {
        for j in 0..n {
            map.insert(i, j, w.block(j * k, i * k, k, k)?);
        }
    }
    Ok(map)
}

fn check_equal_lengths(e: &[Vec<f64>]) -> Result<usize> {
    let k = e.first().map_or(0, Vec::len);
    if e.iter().any(|v| v.len() != k) {
        return Err(Error::shape("interaction", "vectors differ in length"));
    }
    Ok(k)
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_{i<j} e_i . e_j`.
pub fn interact_fm(e: &[Vec<f64>]) -> Result<f64> {
    check_equal_lengths(e)?;
    Ok(field_pairs(e.len())
        .into_iter()
        .map(|(i, j)| vdot(&e[i], &e[j]))
        .sum())
}

/// `sum_{i<j} r_ij e_i . e_j`, with `r` in [`field_pairs`] order.
pub fn interact_fwfm(e: &[Vec<f64>], r: &[f64]) -> Result<f64> {
    check_equal_lengths(e)?;
    let pairs = field_pairs(e.len());
    if r.len() != pairs.len() {
        return Err(Error::shape(
            "interact_fwfm",
            format!("{} pair weights for {} pairs", r.len(), pairs.len()),
        ));
    }
    Ok(pairs
        .into_iter()
        .zip(r)
        .map(|((i, j), w)| w * vdot(&e[i], &e[j]))
        .sum())
}

/// Field-aware interaction over full `K`-vectors that are split into `N - 1`
/// slices: `sum_{i<j} e_i[slice(i,j)] . e_j[slice(j,i)]`.
pub fn interact_ffm(e: &[Vec<f64>]) -> Result<f64> {
    let k = check_equal_lengths(e)?;
    let n = e.len();
    if n < 2 || k % (n - 1) != 0 {
        return Err(Error::Config(format!(
            "width {k} not divisible by {} (fields - 1)",
            n.saturating_sub(1)
        )));
    }
    let w = k / (n - 1);
    Ok(field_pairs(n)
        .into_iter()
        .map(|(i, j)| {
            let a = ffm_slice(i, j) * w;
            let b = ffm_slice(j, i) * w;
            vdot(&e[i][a..a + w], &e[j][b..b + w])
        })
        .sum())
}

/// Pairwise inner products in [`field_pairs`] order followed by the raw
/// vectors.
pub fn interact_ipnn(e: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_equal_lengths(e)?;
    let mut out: Vec<f64> = field_pairs(e.len())
        .into_iter()
        .map(|(i, j)| vdot(&e[i], &e[j]))
        .collect();
    out.extend(e.iter().flatten());
    Ok(out)
}

pub fn interact_dnn_concat(e: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_equal_lengths(e)?;
    Ok(e.iter().flatten().copied().collect())
}

/// Parameters of one cross layer: `W` is `NK x NK`, `b` has length `NK`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// `x_{l+1} = x_0 * (W_l x_l + b_l) + x_l` starting from the concatenation.
pub fn interact_dcnv2(e: &[Vec<f64>], layers: &[CrossLayer]) -> Result<Vec<f64>> {
    check_equal_lengths(e)?;
    let x0: Vec<f64> = e.iter().flatten().copied().collect();
    let d = x0.len();
    let mut x = x0.clone();
    for layer in layers {
        if layer.w.shape() != (d, d) || layer.b.len() != d {
            return Err(Error::shape(
                "interact_dcnv2",
                format!(
                    "layer {:?} / {} for width {d}",
                    layer.w.shape(),
                    layer.b.len()
                ),
            ));
        }
        x = (0..d)
            .map(|r| x0[r] * (vdot(layer.w.row(r), &x) + layer.b[r]) + x[r])
            .collect();
    }
    Ok(x)
}
