use std::ops::Range;

use super::store::{ParamStore, SlotId};
use crate::error::{Error, Result};
use crate::linalg::{dot, matmul, matmul_nt, matmul_tn, Matrix};

/// Handle to a buffer recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Node {
    Input,
    Lookup {
        slot: SlotId,
        indices: Vec<usize>,
        cols: Range<usize>,
    },
    Affine {
        x: Var,
        w: SlotId,
        b: Option<SlotId>,
    },
    Relu {
        x: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Dot {
        a: Var,
        b: Var,
    },
    Sum {
        xs: Vec<Var>,
    },
    Mean {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Scale {
        x: Var,
        c: f64,
    },
}

/// Reverse-mode tape over a closed set of batched primitives.
///
/// Every buffer is a `batch x width` matrix. Forward calls evaluate
/// immediately and record themselves; [`Tape::backward`] walks the records in
/// exact reverse order and accumulates parameter gradients into the store.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Matrix>,
    /// Whether a buffer depends on any non-frozen slot. Backward skips
    /// everything else.
    live: Vec<bool>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    fn push(&mut self, node: Node, value: Matrix) -> Var {
        self.push_live(node, value, false)
    }

    fn push_live(&mut self, node: Node, value: Matrix, live: bool) -> Var {
        let any = |xs: &[Var]| xs.iter().any(|x| self.live[x.0]);
        let live = live
            || match &node {
                Node::Input | Node::Lookup { .. } => false,
                Node::Affine { x, .. }
                | Node::Relu { x }
                | Node::Mean { x }
                | Node::Scale { x, .. } => self.live[x.0],
                Node::Mul { a, b } | Node::Dot { a, b } => any(&[*a, *b]),
                Node::Sum { xs } | Node::Concat { xs } => any(xs),
            };
        self.nodes.push(node);
        self.values.push(value);
        self.live.push(live);
        Var(self.nodes.len() - 1)
    }

    /// Constant buffer; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Node::Input, value)
    }

    /// Gathers rows `indices[b]` of a parameter table.
    pub fn lookup(&mut self, store: &ParamStore, slot: SlotId, indices: &[usize]) -> Result<Var> {
        let cols = store.value(slot).cols();
        self.lookup_cols(store, slot, indices, 0..cols)
    }

    /// Gathers rows `indices[b]` of a parameter table, restricted to the
    /// column range `cols`.
    pub fn lookup_cols(
        &mut self,
        store: &ParamStore,
        slot: SlotId,
        indices: &[usize],
        cols: Range<usize>,
    ) -> Result<Var> {
        let table = store.value(slot);
        if cols.start > cols.end || cols.end > table.cols() {
            return Err(Error::shape(
                "embedding_lookup",
                format!("columns {cols:?} of a {}-column table", table.cols()),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= table.rows()) {
            return Err(Error::Data(format!(
                "index {bad} out of range for {:?} with {} rows",
                store.name(slot),
                table.rows()
            )));
        }
        let width = cols.end - cols.start;
        let mut out = Matrix::zeros(indices.len(), width);
        for (b, &i) in indices.iter().enumerate() {
            out.row_mut(b).copy_from_slice(&table.row(i)[cols.clone()]);
        }
        Ok(self.push_live(
            Node::Lookup {
                slot,
                indices: indices.to_vec(),
                cols,
            },
            out,
            !store.slot(slot).frozen,
        ))
    }

    /// `x W^T + b` with `W: out x in` and `b: 1 x out`.
    pub fn affine(
        &mut self,
        store: &ParamStore,
        x: Var,
        w: SlotId,
        b: Option<SlotId>,
    ) -> Result<Var> {
        let xv = &self.values[x.0];
        let wv = store.value(w);
        if xv.cols() != wv.cols() {
            return Err(Error::shape(
                "matmul_affine",
                format!(
                    "input width {} vs weight {:?} of shape {}x{}",
                    xv.cols(),
                    store.name(w),
                    wv.rows(),
                    wv.cols()
                ),
            ));
        }
        let mut out = matmul_nt(xv, wv)?;
        if let Some(b) = b {
            let bv = store.value(b);
            if bv.shape() != (1, wv.rows()) {
                return Err(Error::shape(
                    "matmul_affine",
                    format!("bias {:?} must be 1x{}", store.name(b), wv.rows()),
                ));
            }
            for r in 0..out.rows() {
                for (o, bias) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                    *o += bias;
                }
            }
        }
        let params_live = !store.slot(w).frozen || b.is_some_and(|b| !store.slot(b).frozen);
        Ok(self.push_live(Node::Affine { x, w, b }, out, params_live))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.values[x.0].map(|v| v.max(0.0));
        self.push(Node::Relu { x }, out)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "elementwise_mul",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x * y)
            .collect();
        let out = Matrix::from_raw(av.rows(), av.cols(), data);
        Ok(self.push(Node::Mul { a, b }, out))
    }

    /// Row-wise inner product: `batch x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let vals: Vec<f64> = (0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect();
        let out = Matrix::column_vector(&vals);
        Ok(self.push(Node::Dot { a, b }, out))
    }

    /// Elementwise sum of equally shaped buffers.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("sum", "no operands"))?;
        let mut out = self.values[first.0].clone();
        for x in &xs[1..] {
            out.add_scaled(&self.values[x.0], 1.0)
                .map_err(|_| Error::shape("sum", "operand shapes differ"))?;
        }
        Ok(self.push(Node::Sum { xs: xs.to_vec() }, out))
    }

    /// Mean over the batch (rows): `1 x width`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = &self.values[x.0];
        if xv.rows() == 0 {
            return Err(Error::shape("mean", "empty batch"));
        }
        let n = xv.rows() as f64;
        let mut out = Matrix::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let out = out.scaled(1.0 / n);
        Ok(self.push(Node::Mean { x }, out))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let parts: Vec<&Matrix> = xs.iter().map(|x| &self.values[x.0]).collect();
        let out = Matrix::hcat(&parts).map_err(|_| Error::shape("concat", "batch sizes differ"))?;
        Ok(self.push(Node::Concat { xs: xs.to_vec() }, out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.values[x.0].scaled(c);
        self.push(Node::Scale { x, c }, out)
    }

    /// Backward pass for a `1 x 1` output seeded with `seed_grad`.
    pub fn backward_scalar(
        &mut self,
        store: &mut ParamStore,
        output: Var,
        seed_grad: f64,
    ) -> Result<()> {
        self.backward(store, output, &Matrix::filled(1, 1, seed_grad))
    }

    /// Propagates `seed` (shaped like `output`) back through the tape,
    /// accumulating into the store's gradient slots. A tape supports one
    /// backward pass.
    pub fn backward(&mut self, store: &mut ParamStore, output: Var, seed: &Matrix) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::State("backward called before forward".into()));
        }
        if self.values[output.0].shape() != seed.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed {:?} vs output {:?}",
                    seed.shape(),
                    self.values[output.0].shape()
                ),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.live[idx] {
                continue;
            }
            match &self.nodes[idx] {
                Node::Input => {}
                Node::Lookup {
                    slot,
                    indices,
                    cols,
                } => {
                    if store.slot(*slot).frozen {
                        continue;
                    }
                    let table_grad = store.grad_mut(*slot);
                    for (b, &i) in indices.iter().enumerate() {
                        for (dst, src) in
                            table_grad.row_mut(i)[cols.clone()].iter_mut().zip(g.row(b))
                        {
                            *dst += src;
                        }
                    }
                }
                Node::Affine { x, w, b } => {
                    if self.live[x.0] {
                        let dx = matmul(&g, store.value(*w))?;
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if !store.slot(*w).frozen {
                        let dw = matmul_tn(&g, &self.values[x.0])?;
                        store.accumulate(*w, &dw)?;
                    }
                    if let Some(b) = b {
                        let mut db = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        store.accumulate(*b, &db)?;
                    }
                }
                Node::Relu { x } => {
                    let xv = &self.values[x.0];
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(xv.as_slice())
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    let dx = Matrix::from_raw(g.rows(), g.cols(), data);
                    accumulate(&mut grads, *x, dx)?;
                }
                Node::Mul { a, b } => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    if self.live[a.0] {
                        accumulate(&mut grads, *a, elementwise(&g, bv))?;
                    }
                    if self.live[b.0] {
                        accumulate(&mut grads, *b, elementwise(&g, av))?;
                    }
                }
                Node::Dot { a, b } => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    if self.live[a.0] {
                        accumulate(&mut grads, *a, row_scaled(&g, bv))?;
                    }
                    if self.live[b.0] {
                        accumulate(&mut grads, *b, row_scaled(&g, av))?;
                    }
                }
                Node::Sum { xs } => {
                    let live: Vec<Var> = xs.iter().copied().filter(|x| self.live[x.0]).collect();
                    if let Some((last, rest)) = live.split_last() {
                        for x in rest {
                            accumulate(&mut grads, *x, g.clone())?;
                        }
                        accumulate(&mut grads, *last, g)?;
                    }
                }
                Node::Mean { x } => {
                    let rows = self.values[x.0].rows();
                    let inv = 1.0 / rows as f64;
                    let dx = Matrix::from_fn(rows, g.cols(), |_, c| g.get(0, c) * inv);
                    accumulate(&mut grads, *x, dx)?;
                }
                Node::Concat { xs } => {
                    let mut offset = 0;
                    for x in xs {
                        let w = self.values[x.0].cols();
                        if self.live[x.0] {
                            accumulate(&mut grads, *x, g.column_block(offset, offset + w)?)?;
                        }
                        offset += w;
                    }
                }
                Node::Scale { x, c } => {
                    accumulate(&mut grads, *x, g.scaled(*c))?;
                }
            }
        }
        Ok(())
    }
}

fn elementwise(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    Matrix::from_raw(a.rows(), a.cols(), data)
}

/// Row `r` of `m` scaled by `g[r]` (a `batch x 1` column).
fn row_scaled(g: &Matrix, m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let w = m.cols();
    if w > 0 {
        for (row, &s) in out.as_mut_slice().chunks_exact_mut(w).zip(g.as_slice()) {
            for v in row {
                *v *= s;
            }
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_scaled(&g, 1.0),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = t.input(Matrix::row_vector(&[-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn lookup_first_row() {
        let mut s = ParamStore::new();
        let e = s
            .add("E", Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let v = t.lookup(&s, e, &[0]).unwrap();
        assert_eq!(t.value(v).as_slice(), &[1.0, 2.0]);
        assert!(matches!(t.lookup(&s, e, &[2]), Err(Error::Data(_))));
    }

    #[test]
    fn dot_forward_and_bilinear_gradient() {
        let mut s = ParamStore::new();
        let e1 = s.add("e1", Matrix::row_vector(&[1.0, 2.0])).unwrap();
        let e2 = s.add("e2", Matrix::row_vector(&[3.0, 4.0])).unwrap();
        let mut t = Tape::new();
        let a = t.lookup(&s, e1, &[0]).unwrap();
        let b = t.lookup(&s, e2, &[0]).unwrap();
        let d = t.dot(a, b).unwrap();
        assert_eq!(t.value(d).get(0, 0), 11.0);
        t.backward_scalar(&mut s, d, 1.0).unwrap();
        assert_eq!(s.grad(e1).as_slice(), &[3.0, 4.0]);
        assert_eq!(s.grad(e2).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn mean_scales_each_sample_by_inverse_batch() {
        let mut s = ParamStore::new();
        let e = s.add("E", Matrix::column_vector(&[1.0, 2.0, 3.0])).unwrap();
        let mut t = Tape::new();
        let x = t.lookup(&s, e, &[0, 1, 1, 2]).unwrap();
        let m = t.mean(x).unwrap();
        assert_eq!(t.value(m).get(0, 0), 2.0);
        t.backward_scalar(&mut s, m, 1.0).unwrap();
        assert_eq!(s.grad(e).as_slice(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut s = ParamStore::new();
        let e = s.add("E", Matrix::row_vector(&[0.0, 1.0])).unwrap();
        let mut t = Tape::new();
        let x = t.lookup(&s, e, &[0]).unwrap();
        let r = t.relu(x);
        t.backward(&mut s, r, &Matrix::row_vector(&[1.0, 1.0]))
            .unwrap();
        assert_eq!(s.grad(e).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_state_errors() {
        let mut s = ParamStore::new();
        let mut empty = Tape::new();
        let mut other = Tape::new();
        let v = other.input(Matrix::zeros(1, 1));
        assert!(matches!(
            empty.backward_scalar(&mut s, v, 1.0),
            Err(Error::State(_))
        ));
        other.backward_scalar(&mut s, v, 1.0).unwrap();
        assert!(matches!(
            other.backward_scalar(&mut s, v, 1.0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn shape_errors_at_registration() {
        let mut t = Tape::new();
        let a = t.input(Matrix::zeros(2, 3));
        let b = t.input(Matrix::zeros(2, 2));
        assert!(matches!(t.mul(a, b), Err(Error::Shape { .. })));
        assert!(matches!(t.dot(a, b), Err(Error::Shape { .. })));
        assert!(matches!(t.sum(&[a, b]), Err(Error::Shape { .. })));
        let c = t.input(Matrix::zeros(3, 1));
        assert!(matches!(t.concat(&[a, c]), Err(Error::Shape { .. })));
        let mut s = ParamStore::new();
        let w = s.add("w", Matrix::zeros(4, 5)).unwrap();
        assert!(matches!(t.affine(&s, a, w, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn concat_and_scale_route_gradients() {
        let mut s = ParamStore::new();
        let e1 = s.add("a", Matrix::row_vector(&[1.0])).unwrap();
        let e2 = s.add("b", Matrix::row_vector(&[2.0, 3.0])).unwrap();
        let w = s.add("w", Matrix::row_vector(&[1.0, 10.0, 100.0])).unwrap();
        let mut t = Tape::new();
        let a = t.lookup(&s, e1, &[0]).unwrap();
        let b = t.lookup(&s, e2, &[0]).unwrap();
        let c = t.concat(&[a, b]).unwrap();
        let y = t.affine(&s, c, w, None).unwrap();
        let z = t.scale(y, 0.5);
        t.backward_scalar(&mut s, z, 1.0).unwrap();
        assert_eq!(s.grad(e1).as_slice(), &[0.5]);
        assert_eq!(s.grad(e2).as_slice(), &[5.0, 50.0]);
        assert_eq!(s.grad(w).as_slice(), &[0.5, 1.0, 1.5]);
    }
}
