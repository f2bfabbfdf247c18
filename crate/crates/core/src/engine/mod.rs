//! Parameter store, reverse-mode tape, loss and optimizers.

mod store;
mod tape;

pub use store::{
    read_checkpoint, write_checkpoint, AdamConfig, Manifest, ManifestEntry, ParamStore, Slot,
    SlotId,
};
pub use tape::{Tape, Var};

use crate::error::Result;

/// Numerically stable binary cross-entropy on a logit. Returns the loss and
/// its derivative with respect to the logit.
pub fn bce_loss(logit: f64, label: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    let grad = crate::data::sigmoid(logit) - label;
    (loss, grad)
}

/// One coordinate of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub slot: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compares the gradients currently accumulated in `store` against central
/// finite differences of `loss` at the listed coordinates, using the step
/// `h = 1e-5 * (1 + |theta|)`.
pub fn finite_difference_check(
    store: &mut ParamStore,
    coords: &[(SlotId, usize)],
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<GradCheckEntry>> {
    let mut out = Vec::with_capacity(coords.len());
    for &(id, offset) in coords {
        let analytic = store.grad(id).as_slice()[offset];
        let original = store.value(id).as_slice()[offset];
        let h = 1e-5 * (1.0 + original.abs());
        let mut probe = |delta: f64, store: &mut ParamStore| -> Result<f64> {
            let mut v = store.value(id).clone();
            v.as_mut_slice()[offset] = original + delta;
            store.set_value(id, v)?;
            loss(store)
        };
        let plus = probe(h, store)?;
        let minus = probe(-h, store)?;
        probe(0.0, store)?;
        out.push(GradCheckEntry {
            slot: store.name(id).to_string(),
            offset,
            analytic,
            numeric: (plus - minus) / (2.0 * h),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_at_zero() {
        let (l, g) = bce_loss(0.0, 1.0);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!((g + 0.5).abs() < 1e-15);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let (l, g) = bce_loss(50.0, 1.0);
        assert!(l.is_finite() && l < 1e-20);
        assert!(g.abs() < 1e-20);
        let (l, _) = bce_loss(-800.0, 1.0);
        assert!((l - 800.0).abs() < 1e-9);
    }

    #[test]
    fn bce_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let z: f64 = rng.random_range(-5.0..5.0);
            let y = f64::from(u8::from(rng.random::<bool>()));
            let p = 1.0 / (1.0 + (-z).exp());
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            let (l, g) = bce_loss(z, y);
            assert!((l - naive).abs() <= 1e-12);
            assert!((g - (p - y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn finite_differences_agree_on_affine_relu_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let e = store
            .add(
                "E",
                Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)),
            )
            .unwrap();
        let w = store
            .add(
                "W",
                Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)),
            )
            .unwrap();
        let b = store.add("b", Matrix::row_vector(&[0.3, -0.2])).unwrap();
        let idx = [0usize, 3, 1, 3];
        let forward = |s: &ParamStore, t: &mut Tape| -> Result<Var> {
            let x = t.lookup(s, e, &idx)?;
            let y = t.affine(s, x, w, Some(b))?;
            let r = t.relu(y);
            let p = t.mul(r, y)?;
            let s1 = t.sum(&[p, y])?;
            let o = t.mean(s1)?;
            let ones = t.input(Matrix::row_vector(&[1.0, 1.0]));
            t.dot(o, ones)
        };
        let mut tape = Tape::new();
        let out = forward(&store, &mut tape).unwrap();
        tape.backward_scalar(&mut store, out, 1.0).unwrap();
        let coords: Vec<_> = store
            .ids()
            .flat_map(|id| (0..store.value(id).len()).map(move |k| (id, k)))
            .collect();
        let checks = finite_difference_check(&mut store, &coords, |s| {
            let mut t = Tape::new();
            let o = forward(s, &mut t)?;
            Ok(t.value(o).get(0, 0))
        })
        .unwrap();
        for c in checks {
            assert!(c.relative_error(1e-6) <= 1e-6, "{c:?}");
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let e = store
            .add(
                "E",
                Matrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0)),
            )
            .unwrap();
        let w = store
            .add(
                "W",
                Matrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0)),
            )
            .unwrap();
        let idx = [4usize, 0, 2, 2];
        let run = |store: &mut ParamStore, rows: &[usize]| {
            let mut t = Tape::new();
            let x = t.lookup(store, e, rows).unwrap();
            let y = t.affine(store, x, w, None).unwrap();
            let r = t.relu(y);
            let sq = t.mul(r, y).unwrap();
            let seed = Matrix::filled(rows.len(), 1, 1.0);
            t.backward(store, sq, &seed).unwrap();
        };
        store.zero_grads();
        run(&mut store, &idx);
        let batch: Vec<Matrix> = store.ids().map(|id| store.grad(id).clone()).collect();
        store.zero_grads();
        for i in idx {
            run(&mut store, &[i]);
        }
        for (id, g) in store.ids().zip(batch) {
            assert!(store.grad(id).max_abs_diff(&g).unwrap() <= 1e-10);
        }
    }
}
