use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::linalg::Matrix;

/// Handle to a slot in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub(crate) usize);

impl SlotId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Slot {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    m: Matrix,
    v: Matrix,
    pub step: u64,
    /// Frozen slots neither accumulate gradients nor get updated.
    pub frozen: bool,
    /// Whether weight decay applies to this slot.
    pub decay: bool,
}

/// Named parameters with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    names: BTreeMap<String, SlotId>,
}

/// Adam hyper-parameters. Weight decay is added to the gradient before the
/// moment update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<SlotId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::Contract(format!(
                "duplicate parameter slot {name:?}"
            )));
        }
        let (r, c) = value.shape();
        let id = SlotId(self.slots.len());
        self.slots.push(Slot {
            name: name.clone(),
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            step: 0,
            frozen: false,
            decay: true,
        });
        self.names.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<SlotId> {
        self.names.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<SlotId> {
        self.id(name)
            .ok_or_else(|| Error::Contract(format!("no parameter slot named {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SlotId> {
        (0..self.slots.len()).map(SlotId)
    }

    pub fn slot(&self, id: SlotId) -> &Slot {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: SlotId) -> &mut Slot {
        &mut self.slots[id.0]
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn value(&self, id: SlotId) -> &Matrix {
        &self.slots[id.0].value
    }

    pub fn grad(&self, id: SlotId) -> &Matrix {
        &self.slots[id.0].grad
    }

    pub fn name(&self, id: SlotId) -> &str {
        &self.slots[id.0].name
    }

    /// Replaces a slot's value; the shape must not change.
    pub fn set_value(&mut self, id: SlotId, value: Matrix) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set_value",
                format!(
                    "slot {:?} is {:?}, got {:?}",
                    slot.name,
                    slot.value.shape(),
                    value.shape()
                ),
            ));
        }
        slot.value = value;
        Ok(())
    }

    pub fn set_frozen(&mut self, id: SlotId, frozen: bool) {
        self.slots[id.0].frozen = frozen;
    }

    pub fn set_decay(&mut self, id: SlotId, decay: bool) {
        self.slots[id.0].decay = decay;
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, id: SlotId, grad: &Matrix) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if slot.frozen {
            return Ok(());
        }
        slot.grad.add_scaled(grad, 1.0)
    }

    pub(crate) fn grad_mut(&mut self, id: SlotId) -> &mut Matrix {
        &mut self.slots[id.0].grad
    }

    fn check_finite_grads(&self) -> Result<()> {
        for s in self.slots.iter().filter(|s| !s.frozen) {
            if !s.grad.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in slot {:?}",
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// One Adam update with bias correction on every non-frozen slot.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.check_finite_grads()?;
        for s in self.slots.iter_mut().filter(|s| !s.frozen) {
            s.step += 1;
            let t = s.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let wd = if s.decay { cfg.weight_decay } else { 0.0 };
            let theta = s.value.as_mut_slice();
            let grad = s.grad.as_slice();
            let m = s.m.as_mut_slice();
            let v = s.v.as_mut_slice();
            for i in 0..theta.len() {
                let g = grad[i] + wd * theta[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Plain gradient descent `theta -= lr * grad` on every non-frozen slot.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        self.check_finite_grads()?;
        for s in self.slots.iter_mut().filter(|s| !s.frozen) {
            s.step += 1;
            s.value.add_scaled(&s.grad, -lr)?;
        }
        Ok(())
    }

    /// Name of the first slot holding a non-finite value, if any.
    pub fn non_finite_slot(&self) -> Option<&str> {
        self.slots
            .iter()
            .find(|s| !s.value.all_finite())
            .map(|s| s.name.as_str())
    }

    /// Copies of all values, in slot order.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.slots.iter().map(|s| s.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Matrix]) -> Result<()> {
        if values.len() != self.slots.len() {
            return Err(Error::State(format!(
                "snapshot has {} slots, store has {}",
                values.len(),
                self.slots.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            self.set_value(SlotId(i), v.clone())?;
        }
        Ok(())
    }

    /// Largest Frobenius norm of each slot's value and gradient, for
    /// diagnostics.
    pub fn norms(&self) -> Vec<(String, f64, f64)> {
        self.slots
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    crate::linalg::frobenius_norm(&s.value),
                    crate::linalg::frobenius_norm(&s.grad),
                )
            })
            .collect()
    }

    pub fn max_step(&self) -> u64 {
        self.slots.iter().map(|s| s.step).max().unwrap_or(0)
    }

    pub fn entries(&self) -> Vec<(String, Matrix)> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.value.clone()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub shape: [usize; 2],
    pub step: u64,
}

/// Checkpoint manifest: slot name to file, shape and optimizer step.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub slots: BTreeMap<String, ManifestEntry>,
}

fn file_name_for(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{cleaned}.txt")
}

/// Writes each entry as a matrix text file plus `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn write_checkpoint(
    dir: impl AsRef<Path>,
    entries: &[(String, Matrix)],
    step: u64,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut manifest = Manifest::default();
    for (name, value) in entries {
        let file = file_name_for(name);
        if manifest.slots.values().any(|e| e.file == file) {
            return Err(Error::Contract(format!(
                "slot names collide on file {file:?}"
            )));
        }
        fsutil::write_atomic(dir.join(&file), value.to_text())?;
        manifest.slots.insert(
            name.clone(),
            ManifestEntry {
                file,
                shape: [value.rows(), value.cols()],
                step,
            },
        );
    }
    let path = dir.join("manifest.json");
    fsutil::write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads every slot listed in a manifest, checking shapes.
pub fn read_checkpoint(manifest_path: impl AsRef<Path>) -> Result<BTreeMap<String, Matrix>> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = serde_json::from_str(&fsutil::read_to_string(manifest_path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = BTreeMap::new();
    for (name, entry) in manifest.slots {
        let m = Matrix::from_text(&fsutil::read_to_string(dir.join(&entry.file))?)?;
        if [m.rows(), m.cols()] != entry.shape {
            return Err(Error::Data(format!(
                "slot {name:?}: manifest shape {:?}, file holds {}x{}",
                entry.shape,
                m.rows(),
                m.cols()
            )));
        }
        out.insert(name, m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> (ParamStore, SlotId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Matrix::row_vector(&[theta])).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(0.7);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        s.adam_step(&cfg).unwrap();
        assert_eq!(s.value(id).get(0, 0), 0.7);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        s.grad_mut(id).set(0, 0, 1.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        s.adam_step(&cfg).unwrap();
        assert!((s.value(id).get(0, 0) + cfg.lr).abs() < 1e-10);
        assert_eq!(s.slot(id).step, 1);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let (mut s, id) = scalar_store(1.0);
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..100 {
            s.zero_grads();
            let theta = s.value(id).get(0, 0);
            s.grad_mut(id).set(0, 0, 2.0 * theta);
            s.adam_step(&cfg).unwrap();
        }
        assert!(s.value(id).get(0, 0).abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_names_the_slot() {
        let (mut s, id) = scalar_store(0.0);
        s.grad_mut(id).set(0, 0, f64::NAN);
        let err = s.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert!(s.sgd_step(1.0).is_err());
    }

    #[test]
    fn sgd_examples() {
        let (mut s, id) = scalar_store(2.0);
        s.grad_mut(id).set(0, 0, 0.25);
        s.sgd_step(1.0).unwrap();
        assert_eq!(s.value(id).get(0, 0), 1.75);
        s.sgd_step(0.0).unwrap();
        assert_eq!(s.value(id).get(0, 0), 1.75);
    }

    #[test]
    fn sgd_monotone_on_quadratic_bowl() {
        // f = 3 theta^2, L = 6; lr below 2/L.
        let (mut s, id) = scalar_store(1.0);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let theta = s.value(id).get(0, 0);
            let f = 3.0 * theta * theta;
            assert!(f <= last);
            last = f;
            s.zero_grads();
            s.grad_mut(id).set(0, 0, 6.0 * theta);
            s.sgd_step(0.3).unwrap();
        }
    }

    #[test]
    fn frozen_slots_do_not_move() {
        let (mut s, id) = scalar_store(1.0);
        s.set_frozen(id, true);
        s.accumulate(id, &Matrix::row_vector(&[5.0])).unwrap();
        s.sgd_step(1.0).unwrap();
        assert_eq!(s.value(id).get(0, 0), 1.0);
    }

    #[test]
    fn zero_grads_clears_exactly() {
        let (mut s, id) = scalar_store(1.0);
        s.grad_mut(id).set(0, 0, 3.0);
        s.zero_grads();
        assert!(s.grad(id).is_zero());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            (
                "set0/E_0".to_string(),
                Matrix::from_fn(3, 2, |r, c| r as f64 - c as f64 * 0.1),
            ),
            ("mlp0_b".to_string(), Matrix::row_vector(&[1.0, -2.5])),
        ];
        let manifest = write_checkpoint(dir.path(), &entries, 17).unwrap();
        let back = read_checkpoint(&manifest).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back["set0/E_0"], entries[0].1);
        assert_eq!(back["mlp0_b"], entries[1].1);
    }
}
