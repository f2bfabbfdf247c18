//! Training loops, AUC evaluation, early stopping and IA instrumentation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, sigmoid, Batch, Dataset, Splits};
use crate::engine::AdamConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::information_abundance;
use crate::models::Model;
use crate::rng::{self, derive_seed};

/// Area under the ROC curve as the Mann-Whitney statistic, with tied scores
/// receiving their average rank.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (0-based) share the average 1-based rank
        let avg = (start + end + 1) as f64 / 2.0;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| labels[i] > 0.5)
            .count();
        pos_rank_sum += avg * pos_in_group as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    SgdFull,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Steps between IA snapshots; 0 snapshots only at epoch ends.
    pub metric_every: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Whether weight decay applies to embedding tables.
    pub decay_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            optimizer: Optimizer::Adam,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            batch_size: 2048,
            max_epochs: 10,
            patience: 3,
            metric_every: 0,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            decay_embeddings: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be finite and > 0, got {}",
                self.lr
            )));
        }
        self.validate_structure()
    }

    /// Everything except the learning-rate sign, so frozen runs (`lr = 0`)
    /// can still be driven programmatically.
    fn validate_structure(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return Err(Error::Config(
                "adam needs beta1, beta2 in [0, 1) and eps > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation score and counts epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            bad: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if value <= b => {
                self.bad += 1;
                if self.bad >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, value));
                self.bad = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best.map(|b| b.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IaSnapshot {
    pub step: u64,
    pub set: usize,
    pub field: usize,
    pub ia: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config: serde_json::Value,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub steps: u64,
    pub test_auc: f64,
    pub ia_trajectory: Vec<IaSnapshot>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub const WALL_CLOCK_KEY: &'static str = "wall_clock_secs";
}

/// IA of every embedding table of the model.
pub fn ia_snapshot(model: &Model, step: u64) -> Result<Vec<IaSnapshot>> {
    let bank = model.embeddings();
    let mut out = Vec::new();
    for (m, set) in bank.tables.iter().enumerate() {
        for (i, t) in set.iter().enumerate() {
            out.push(IaSnapshot {
                step,
                set: m,
                field: i,
                ia: information_abundance(t)?,
            });
        }
    }
    Ok(out)
}

/// Logits for a whole dataset, evaluated in chunks.
pub fn predict_dataset(model: &Model, ds: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.rows.chunks(4096) {
        out.extend(model.predict(&Batch::from_rows(ds.schema.n_fields(), chunk))?);
    }
    Ok(out)
}

pub fn evaluate_auc(model: &Model, ds: &Dataset) -> Result<f64> {
    auc(&predict_dataset(model, ds)?, &ds.labels())
}

fn abort(model: &Model, step: u64, what: &str) -> Error {
    let mut norms = model.store().norms();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<String> = norms
        .iter()
        .take(5)
        .map(|(n, v, g)| format!("{n}: |value| {v:.3e}, |grad| {g:.3e}"))
        .collect();
    Error::TrainingAborted {
        step: step as usize,
        reason: format!("{what}; largest slots: {}", top.join("; ")),
    }
}

/// Minibatch training with early stopping on validation AUC. The model is
/// left at its best-validation parameters and the test AUC is computed from
/// them.
pub fn train(model: &mut Model, splits: &Splits, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate_structure()?;
    for ds in [&splits.train, &splits.val, &splits.test] {
        if ds.schema != model.layout().schema().clone() {
            return Err(Error::Data(
                "split schema differs from the model schema".into(),
            ));
        }
    }
    let started = Instant::now();
    if !cfg.decay_embeddings {
        let ids: Vec<_> = model.layout().embedding_slots().collect();
        for id in ids {
            model.store_mut().set_decay(id, false);
        }
    }
    let adam = cfg.adam();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut trajectory = ia_snapshot(model, 0)?;
    let mut best_params = model.store().snapshot();
    let mut step = 0u64;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let batches = match cfg.optimizer {
            Optimizer::Adam => data::batches(
                &splits.train,
                cfg.batch_size,
                derive_seed(cfg.seed, &[epoch as u64]),
            )?,
            Optimizer::SgdFull => vec![splits.train.as_batch()],
        };
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for batch in &batches {
            let loss = model.loss_and_grad(batch)?;
            if !loss.total.is_finite() {
                return Err(abort(
                    model,
                    step,
                    &format!("non-finite loss {}", loss.total),
                ));
            }
            let res = match cfg.optimizer {
                Optimizer::Adam => model.store_mut().adam_step(&adam),
                Optimizer::SgdFull => model.store_mut().sgd_step(cfg.lr),
            };
            if let Err(e) = res {
                return Err(abort(model, step, &e.to_string()));
            }
            if let Some(name) = model.store().non_finite_slot() {
                let what = format!("update left non-finite values in {name}");
                return Err(abort(model, step, &what));
            }
            step += 1;
            loss_sum += loss.total * batch.len() as f64;
            count += batch.len();
            if cfg.metric_every > 0 && step % cfg.metric_every as u64 == 0 {
                trajectory.extend(ia_snapshot(model, step)?);
            }
        }
        if cfg.metric_every == 0 || step % cfg.metric_every as u64 != 0 {
            trajectory.extend(ia_snapshot(model, step)?);
        }
        let val_auc = evaluate_auc(model, &splits.val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / count.max(1) as f64,
            val_auc,
        });
        match stopper.observe(epoch, val_auc) {
            StopDecision::Improved => best_params = model.store().snapshot(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.store_mut().restore(&best_params)?;
    let test_auc = evaluate_auc(model, &splits.test)?;
    Ok(RunRecord {
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        epochs,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        stopped_early,
        steps: step,
        test_auc,
        ia_trajectory: trajectory,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Settings of the three-field toy experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub d3: usize,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub embedding_size: usize,
}

impl ToyConfig {
    pub fn new(d3: usize, steps: usize, seed: u64) -> Self {
        Self {
            d3,
            steps,
            seed,
            lr: 1.0,
            embedding_size: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub config: ToyConfig,
    /// `(step, IA(E_1))`.
    pub trajectory: Vec<(u64, f64)>,
}

impl ToyRun {
    pub fn initial_ia(&self) -> f64 {
        self.trajectory[0].1
    }

    pub fn final_ia(&self) -> f64 {
        self.trajectory.last().expect("non-empty trajectory").1
    }
}

/// Step 0, then `1, 2, 5, 10, 20, 50, ...` up to `steps`, always ending at
/// `steps`.
pub fn log_schedule(steps: usize) -> Vec<u64> {
    let mut out = vec![0u64];
    let mut decade = 1u64;
    'outer: loop {
        for m in [1, 2, 5] {
            let s = m * decade;
            if s > steps as u64 {
                break 'outer;
            }
            out.push(s);
        }
        decade *= 10;
    }
    if *out.last().expect("non-empty") != steps as u64 {
        out.push(steps as u64);
    }
    out
}

pub fn run_toy(d3: usize, steps: usize, seed: u64) -> Result<ToyRun> {
    run_toy_with(&ToyConfig::new(d3, steps, seed))
}

/// FM interaction over three fields, `N(0, 1)` tables, BCE on `h`, full-batch
/// SGD on `E_1` only.
///
/// With `E_2` and `E_3` fixed, `h_b = e_1[x_1] . s_b + c_b` where
/// `s_b = e_2 + e_3` and `c_b = e_2 . e_3` never change, so the loop works on
/// those directly instead of replaying the full interaction each step.
pub fn run_toy_with(cfg: &ToyConfig) -> Result<ToyRun> {
    if cfg.steps == 0 {
        return Err(Error::Config("toy run needs steps >= 1".into()));
    }
    if cfg.embedding_size == 0 || !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(
            "toy run needs embedding_size >= 1 and finite lr >= 0".into(),
        ));
    }
    let ds = data::gen_toy(cfg.d3, cfg.seed)?;
    let batch = ds.as_batch();
    let k = cfg.embedding_size;
    let mut tables = toy_tables(&ds, cfg)?;
    let (e2, e3) = (&tables[1], &tables[2]);
    let n = batch.len();
    let mut s = vec![0.0; n * k];
    let mut c = vec![0.0; n];
    for b in 0..n {
        let (r2, r3) = (e2.row(batch.fields[1][b]), e3.row(batch.fields[2][b]));
        for d in 0..k {
            s[b * k + d] = r2[d] + r3[d];
        }
        c[b] = crate::linalg::dot(r2, r3);
    }
    let e1 = &mut tables[0];
    let x1 = &batch.fields[0];
    let inv_b = 1.0 / n as f64;
    let schedule = log_schedule(cfg.steps);
    let mut next = 0usize;
    let mut trajectory = Vec::with_capacity(schedule.len());
    let mut grad = Matrix::zeros(e1.rows(), k);
    for step in 0..=cfg.steps as u64 {
        if schedule.get(next) == Some(&step) {
            trajectory.push((step, information_abundance(e1)?));
            next += 1;
        }
        if step == cfg.steps as u64 {
            break;
        }
        grad.fill(0.0);
        for b in 0..n {
            let sb = &s[b * k..(b + 1) * k];
            let h = crate::linalg::dot(e1.row(x1[b]), sb) + c[b];
            let g = (sigmoid(h) - batch.labels[b]) * inv_b;
            for (dst, v) in grad.row_mut(x1[b]).iter_mut().zip(sb) {
                *dst += g * v;
            }
        }
        if !grad.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite toy gradient at step {step}"
            )));
        }
        e1.add_scaled(&grad, -cfg.lr)?;
    }
    Ok(ToyRun {
        config: cfg.clone(),
        trajectory,
    })
}

fn toy_tables(ds: &Dataset, cfg: &ToyConfig) -> Result<Vec<Matrix>> {
    Ok(ds
        .schema
        .fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut r = rng::rng(derive_seed(cfg.seed, &[rng::TAG_EMBEDDING, 0, i as u64]));
            rng::normal_matrix(f.cardinality, cfg.embedding_size, 1.0, &mut r)
        })
        .collect())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, Field, FieldSchema, Provenance, Row, SplitSpec};
    use crate::models::{InteractionKind, ModelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi > 0.5 && yj < 0.5 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.9], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(
            auc(&[0.3; 6], &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap(),
            0.5
        );
        assert!(matches!(
            auc(&[0.1, 0.2], &[1.0, 1.0]),
            Err(Error::Metric(_))
        ));
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..200)
                .map(|_| f64::from(r.random_range(0..30u8)))
                .collect();
            let labels: Vec<f64> = (0..200)
                .map(|_| f64::from(u8::from(r.random::<bool>())))
                .collect();
            assert!(
                (auc(&scores, &labels).unwrap() - pairwise_auc(&scores, &labels)).abs() <= 1e-12
            );
        }
    }

    #[test]
    fn early_stopper_counts_bad_epochs() {
        let mut s = EarlyStopper::new(3);
        let decisions: Vec<_> = [0.9, 0.8, 0.7, 0.6]
            .iter()
            .enumerate()
            .map(|(e, &v)| s.observe(e + 1, v))
            .collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(s.best_epoch(), Some(1));
    }

    #[test]
    fn log_schedule_shape() {
        assert_eq!(log_schedule(1), vec![0, 1]);
        assert_eq!(log_schedule(12), vec![0, 1, 2, 5, 10, 12]);
        let s = log_schedule(5000);
        assert_eq!(s[..4], [0, 1, 2, 5]);
        assert_eq!(*s.last().unwrap(), 5000);
    }

    #[test]
    fn toy_with_zero_lr_is_constant() {
        let mut cfg = ToyConfig::new(3, 20, 0);
        cfg.lr = 0.0;
        let run = run_toy_with(&cfg).unwrap();
        assert!(run.trajectory.iter().all(|&(_, ia)| ia == run.initial_ia()));
    }

    #[test]
    fn toy_updates_match_tape_gradients() {
        use crate::engine::{bce_loss, ParamStore, Tape};
        let cfg = ToyConfig {
            lr: 0.5,
            ..ToyConfig::new(3, 3, 7)
        };
        let ds = data::gen_toy(cfg.d3, cfg.seed).unwrap();
        let batch = ds.as_batch();
        let mut store = ParamStore::new();
        let ids: Vec<_> = toy_tables(&ds, &cfg)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, t)| store.add(format!("E_{i}"), t).unwrap())
            .collect();
        store.set_frozen(ids[1], true);
        store.set_frozen(ids[2], true);
        for _ in 0..cfg.steps {
            store.zero_grads();
            let mut tape = Tape::new();
            let e: Vec<_> = (0..3)
                .map(|i| tape.lookup(&store, ids[i], &batch.fields[i]).unwrap())
                .collect();
            let d: Vec<_> = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&(a, b)| tape.dot(e[a], e[b]).unwrap())
                .collect();
            let h = tape.sum(&d).unwrap();
            let inv_b = 1.0 / batch.len() as f64;
            let seed = Matrix::from_fn(batch.len(), 1, |b, _| {
                bce_loss(tape.value(h).get(b, 0), batch.labels[b]).1 * inv_b
            });
            tape.backward(&mut store, h, &seed).unwrap();
            store.sgd_step(cfg.lr).unwrap();
        }
        let run = run_toy_with(&cfg).unwrap();
        let want = information_abundance(store.value(ids[0])).unwrap();
        assert!(
            (run.final_ia() - want).abs() <= 1e-10,
            "{} vs {want}",
            run.final_ia()
        );
    }

    #[test]
    fn toy_single_step_has_trajectory() {
        let run = run_toy(100, 1, 0).unwrap();
        assert_eq!(run.trajectory.len(), 2);
    }

    fn separable_dataset(seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let schema = FieldSchema::new(vec![
            Field {
                name: "a".into(),
                cardinality: 20,
            },
            Field {
                name: "b".into(),
                cardinality: 20,
            },
        ])
        .unwrap();
        let rows = (0..2000)
            .map(|_| {
                let a = r.random_range(0..20);
                let b = r.random_range(0..20);
                Row {
                    indices: vec![a, b],
                    label: u8::from(a < 10),
                }
            })
            .collect();
        Dataset::new(schema, rows, Provenance::Derived).unwrap()
    }

    fn small_spec() -> ModelSpec {
        let mut spec = ModelSpec::new(InteractionKind::DnnConcat, 4, 1);
        spec.mlp = vec![8];
        spec.init_scale = 0.1;
        spec
    }

    #[test]
    fn separable_data_is_learned() {
        let ds = separable_dataset(0);
        let splits = split(&ds, &SplitSpec::default()).unwrap();
        let mut model = Model::new(&ds.schema, &small_spec(), 0).unwrap();
        let cfg = TrainConfig {
            lr: 0.01,
            batch_size: 64,
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let rec = train(&mut model, &splits, &cfg).unwrap();
        assert!(rec.test_auc >= 0.95, "{}", rec.test_auc);
        assert!(rec.epochs.len() <= 20);
    }

    #[test]
    fn zero_lr_keeps_parameters_and_val_auc() {
        let ds = separable_dataset(1);
        let splits = split(&ds, &SplitSpec::default()).unwrap();
        let mut model = Model::new(&ds.schema, &small_spec(), 0).unwrap();
        let before = model.store().snapshot();
        let cfg = TrainConfig {
            lr: 0.0,
            batch_size: 256,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let rec = train(&mut model, &splits, &cfg).unwrap();
        assert_eq!(model.store().snapshot(), before);
        assert!(rec
            .epochs
            .iter()
            .all(|e| e.val_auc == rec.epochs[0].val_auc));
        // val AUC never improves after epoch 1, so training stops at epoch 4
        assert_eq!(rec.epochs.len(), 4);
        assert_eq!(rec.best_epoch, 1);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable_dataset(2);
        let splits = split(&ds, &SplitSpec::default()).unwrap();
        let cfg = TrainConfig {
            batch_size: 128,
            max_epochs: 2,
            metric_every: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = Model::new(&ds.schema, &small_spec(), 4).unwrap();
            let mut rec = train(&mut model, &splits, &cfg).unwrap();
            rec.wall_clock_secs = 0.0;
            (rec, model.store().snapshot())
        };
        assert_eq!(run(), run());
    }
}
