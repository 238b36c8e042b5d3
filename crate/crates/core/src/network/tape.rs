//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value; `backward` walks
//! the tape in reverse, accumulating gradients. Index selections (gathers,
//! max-pool argmax, interpolation neighbours) are constants of the recorded
//! forward pass and route gradients through the selected elements only.

use super::tensor::{matmul, Mat, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Variance floor of row-standardized dense layers.
pub const ROW_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    /// `act((x W + b) * s)`, or `act((norm(x W) + b) * s)` when `inv_std`
    /// is non-empty; `pre` keeps the term inside the scale.
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
        s: Option<Var>,
        relu: bool,
        pre: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Gather {
        x: Var,
        idx: Vec<u32>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Interpolate {
        x: Var,
        k: usize,
        idx: Vec<u32>,
        weights: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<u8>,
        probs: Vec<T>,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

/// Gradients of a scalar with respect to every node that needs one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn add_into<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
    f(t.data_mut());
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that evaluates values only; `backward` on it is an error.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`, invalidating their
    /// vars.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.recording && self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad: self.recording && needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Fully connected layer over rows: `x` is `R×I`, `w` is `I×O`, `b` and
    /// `s` have `O` entries.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>, s: Option<Var>, relu: bool) -> Result<Var> {
        self.dense_impl(x, w, b, s, relu, false)
    }

    /// Like [`Tape::dense`] with each row of `x W` standardized to zero mean
    /// and unit variance over its channels before the bias.
    pub fn dense_normed(&mut self, x: Var, w: Var, b: Option<Var>, s: Option<Var>, relu: bool) -> Result<Var> {
        self.dense_impl(x, w, b, s, relu, true)
    }

    fn dense_impl(&mut self, x: Var, w: Var, b: Option<Var>, s: Option<Var>, relu: bool, norm: bool) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (rows, inp) = (xv.rows(), xv.cols());
        if wv.rows() != inp {
            return Err(Error::DimMismatch(format!(
                "dense: input has {inp} channels, weight expects {}",
                wv.rows()
            )));
        }
        let out = wv.cols();
        for (name, v) in [("bias", b), ("scale", s)] {
            if let Some(v) = v {
                if self.value(v).len() != out {
                    return Err(Error::DimMismatch(format!("dense: {name} length")));
                }
            }
        }
        let mut pre = vec![T::zero(); rows * out];
        matmul(xv.mat(), wv.mat(), &mut pre, false);
        let mut inv_std = Vec::new();
        if norm {
            inv_std.reserve(rows);
            let n = T::from_f64(out as f64);
            let eps = T::from_f64(ROW_NORM_EPS);
            for r in pre.chunks_exact_mut(out) {
                let mean = r.iter().fold(T::zero(), |a, &v| a + v) / n;
                let var = r.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                let inv = T::one() / (var + eps).sqrt();
                r.iter_mut().for_each(|v| *v = (*v - mean) * inv);
                inv_std.push(inv);
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            pre.chunks_exact_mut(out).for_each(|r| r.iter_mut().zip(bv).for_each(|(v, b)| *v += *b));
        }
        let mut y = pre.clone();
        if let Some(s) = s {
            let sv = self.value(s).data();
            y.chunks_exact_mut(out).for_each(|r| r.iter_mut().zip(sv).for_each(|(v, s)| *v = *v * *s));
        }
        if relu {
            y.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b)) || s.is_some_and(|s| self.needs(s));
        let pre = if self.recording && (s.is_some() || norm) { pre } else { Vec::new() };
        let inv_std = if self.recording { inv_std } else { Vec::new() };
        Ok(self.push(Tensor::matrix(rows, out, y), Op::Dense { x, w, b, s, relu, pre, inv_std }, needs))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::DimMismatch(format!("concat: {} vs {} rows", av.rows(), bv.rows())));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(av.rows() * (ca + cb));
        for (ra, rb) in av.data().chunks_exact(ca).zip(bv.data().chunks_exact(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let rows = av.rows();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(rows, ca + cb, out), Op::Concat { a, b }, needs))
    }

    /// Row gather: `out[r] = x[idx[r]]`.
    pub fn gather(&mut self, x: Var, idx: Vec<u32>) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let rows = xv.rows();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            let i = i as usize;
            if i >= rows {
                return Err(Error::invalid(format!("gather index {i} out of {rows} rows")));
            }
            out.extend_from_slice(&xv.data()[i * c..(i + 1) * c]);
        }
        let n = idx.len();
        let needs = self.needs(x);
        Ok(self.push(Tensor::matrix(n, c, out), Op::Gather { x, idx }, needs))
    }

    /// Channel-wise max over consecutive groups of `group` rows. Ties resolve
    /// to the lowest row.
    pub fn max_pool(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        if group == 0 || rows % group != 0 {
            return Err(Error::DimMismatch(format!("max_pool: {rows} rows not divisible by {group}")));
        }
        let m = rows / group;
        let mut out = vec![T::zero(); m * c];
        let mut argmax = vec![0u32; m * c];
        let d = xv.data();
        for g in 0..m {
            let base = g * group;
            out[g * c..(g + 1) * c].copy_from_slice(&d[base * c..(base + 1) * c]);
            for a in &mut argmax[g * c..(g + 1) * c] {
                *a = base as u32;
            }
            for r in base + 1..base + group {
                let row = &d[r * c..(r + 1) * c];
                for ch in 0..c {
                    if row[ch] > out[g * c + ch] {
                        out[g * c + ch] = row[ch];
                        argmax[g * c + ch] = r as u32;
                    }
                }
            }
        }
        let needs = self.needs(x);
        let argmax = if needs { argmax } else { Vec::new() };
        Ok(self.push(Tensor::matrix(m, c, out), Op::MaxPool { x, argmax }, needs))
    }

    /// Weighted neighbour sum: `out[i] = Σ_j weights[i·k + j] · x[idx[i·k + j]]`.
    pub fn interpolate(&mut self, x: Var, k: usize, idx: Vec<u32>, weights: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        if k == 0 || !idx.len().is_multiple_of(k) || weights.len() != idx.len() {
            return Err(Error::DimMismatch("interpolate: index/weight layout".into()));
        }
        let n = idx.len() / k;
        let mut out = vec![T::zero(); n * c];
        let d = xv.data();
        for i in 0..n {
            let dst = &mut out[i * c..(i + 1) * c];
            for j in 0..k {
                let src = idx[i * k + j] as usize;
                if src >= rows {
                    return Err(Error::invalid(format!("interpolate index {src} out of {rows} rows")));
                }
                let w = weights[i * k + j];
                dst.iter_mut().zip(&d[src * c..(src + 1) * c]).for_each(|(o, v)| *o += w * *v);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::matrix(n, c, out), Op::Interpolate { x, k, idx, weights }, needs))
    }

    /// Mean softmax cross-entropy over rows, with log-sum-exp stabilization.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, c) = (lv.rows(), lv.cols());
        if labels.len() != rows {
            return Err(Error::DimMismatch(format!("cross_entropy: {} labels for {rows} rows", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
        }
        let (loss, probs) = softmax_cross_entropy(lv.data(), labels, c);
        let needs = self.needs(logits);
        let probs = if needs { probs } else { Vec::new() };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Elementwise product of equal-length tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::DimMismatch("mul: shapes differ".into()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x * *y).collect();
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::zero();
        for v in self.value(x).data() {
            s += *v;
        }
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    /// Gradients of the scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::invalid("backward on a tape that did not record the forward pass"));
        }
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::invalid("backward from a variable not on this tape"))?;
        if root.value.len() != 1 {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![T::one()])?);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Dense { x, w, b, s, relu, pre, inv_std } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let out = wv.cols();
                    let y = node.value.data();
                    let mut dz = g.into_data();
                    if *relu {
                        dz.iter_mut().zip(y).for_each(|(d, y)| {
                            if *y <= T::zero() {
                                *d = T::zero();
                            }
                        });
                    }
                    if let Some(s) = s {
                        let sv = self.value(*s).data();
                        if self.nodes[s.0].needs_grad {
                            let mut ds = vec![T::zero(); out];
                            for (rd, rp) in dz.chunks_exact(out).zip(pre.chunks_exact(out)) {
                                for c in 0..out {
                                    ds[c] += rd[c] * rp[c];
                                }
                            }
                            add_into(&mut grads[s.0], &[out], |t| t.iter_mut().zip(&ds).for_each(|(a, b)| *a += *b));
                        }
                        dz.chunks_exact_mut(out).for_each(|r| r.iter_mut().zip(sv).for_each(|(d, s)| *d = *d * *s));
                    }
                    if let Some(b) = b {
                        if self.nodes[b.0].needs_grad {
                            let mut db = vec![T::zero(); out];
                            for r in dz.chunks_exact(out) {
                                db.iter_mut().zip(r).for_each(|(a, v)| *a += *v);
                            }
                            add_into(&mut grads[b.0], &[out], |t| t.iter_mut().zip(&db).for_each(|(a, v)| *a += *v));
                        }
                    }
                    if !inv_std.is_empty() {
                        let n = T::from_f64(out as f64);
                        let bv = b.map(|b| self.value(b).data());
                        for (r, (rd, rp)) in dz.chunks_exact_mut(out).zip(pre.chunks_exact(out)).enumerate() {
                            let hat = |c: usize| rp[c] - bv.map_or(T::zero(), |b| b[c]);
                            let mut mean_d = T::zero();
                            let mut mean_dh = T::zero();
                            for (c, &d) in rd.iter().enumerate() {
                                mean_d += d;
                                mean_dh += d * hat(c);
                            }
                            mean_d = mean_d / n;
                            mean_dh = mean_dh / n;
                            let inv = inv_std[r];
                            for (c, d) in rd.iter_mut().enumerate() {
                                *d = inv * (*d - mean_d - hat(c) * mean_dh);
                            }
                        }
                    }
                    let dzm = Mat::new(&dz, xv.rows(), out);
                    if self.nodes[w.0].needs_grad {
                        let shape = wv.shape().to_vec();
                        add_into(&mut grads[w.0], &shape, |t| matmul(xv.mat().t(), dzm, t, true));
                    }
                    if self.nodes[x.0].needs_grad {
                        let shape = xv.shape().to_vec();
                        add_into(&mut grads[x.0], &shape, |t| matmul(dzm, wv.mat().t(), t, true));
                    }
                }
                Op::Concat { a, b } => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    for (v, off, width) in [(*a, 0, ca), (*b, ca, cb)] {
                        if self.nodes[v.0].needs_grad {
                            let shape = self.value(v).shape().to_vec();
                            add_into(&mut grads[v.0], &shape, |t| {
                                for (dst, src) in t.chunks_exact_mut(width).zip(g.data().chunks_exact(ca + cb)) {
                                    dst.iter_mut().zip(&src[off..off + width]).for_each(|(d, s)| *d += *s);
                                }
                            });
                        }
                    }
                }
                Op::Gather { x, idx } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let shape = xv.shape().to_vec();
                    add_into(&mut grads[x.0], &shape, |t| {
                        for (r, &i) in idx.iter().enumerate() {
                            let i = i as usize;
                            t[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(&g.data()[r * c..(r + 1) * c])
                                .for_each(|(d, s)| *d += *s);
                        }
                    });
                }
                Op::MaxPool { x, argmax, .. } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let shape = xv.shape().to_vec();
                    add_into(&mut grads[x.0], &shape, |t| {
                        for (j, &r) in argmax.iter().enumerate() {
                            t[r as usize * c + j % c] += g.data()[j];
                        }
                    });
                }
                Op::Interpolate { x, k, idx, weights } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let shape = xv.shape().to_vec();
                    add_into(&mut grads[x.0], &shape, |t| {
                        for (p, (&src, &w)) in idx.iter().zip(weights).enumerate() {
                            let i = p / k;
                            let src = src as usize;
                            t[src * c..(src + 1) * c]
                                .iter_mut()
                                .zip(&g.data()[i * c..(i + 1) * c])
                                .for_each(|(d, s)| *d += w * *s);
                        }
                    });
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let lv = self.value(*logits);
                    let c = lv.cols();
                    let scale = g.data()[0] / T::from_f64(labels.len() as f64);
                    let shape = lv.shape().to_vec();
                    add_into(&mut grads[logits.0], &shape, |t| {
                        for (r, &l) in labels.iter().enumerate() {
                            for ch in 0..c {
                                let onehot = if ch == l as usize { T::one() } else { T::zero() };
                                t[r * c + ch] += (probs[r * c + ch] - onehot) * scale;
                            }
                        }
                    });
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        let shape = av.shape().to_vec();
                        add_into(&mut grads[a.0], &shape, |t| {
                            for ((d, gg), bb) in t.iter_mut().zip(g.data()).zip(bv.data()) {
                                *d += *gg * *bb;
                            }
                        });
                    }
                    if self.nodes[b.0].needs_grad {
                        let shape = bv.shape().to_vec();
                        add_into(&mut grads[b.0], &shape, |t| {
                            for ((d, gg), aa) in t.iter_mut().zip(g.data()).zip(av.data()) {
                                *d += *gg * *aa;
                            }
                        });
                    }
                }
                Op::Sum { x } => {
                    let xv = self.value(*x);
                    let shape = xv.shape().to_vec();
                    let gv = g.data()[0];
                    add_into(&mut grads[x.0], &shape, |t| t.iter_mut().for_each(|d| *d += gv));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Mean cross-entropy and the row-wise softmax probabilities.
pub(crate) fn softmax_cross_entropy<T: Real>(logits: &[T], labels: &[u8], c: usize) -> (T, Vec<T>) {
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    for (r, row) in logits.chunks_exact(c).enumerate() {
        let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let mut denom = T::zero();
        for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
            *p = (*v - max).exp();
            denom += *p;
        }
        for p in &mut probs[r * c..(r + 1) * c] {
            *p = *p / denom;
        }
        let lse = max + denom.ln();
        total += (lse - row[labels[r] as usize]).to_f64();
    }
    let n = labels.len().max(1) as f64;
    (T::from_f64(total / n), probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::<f64>::new();
        let p = t.param(Tensor::scalar(3.0));
        let sq = t.mul(p, p).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_recording() {
        let mut t = Tape::<f64>::inference();
        let p = t.param(Tensor::scalar(3.0));
        let loss = t.sum(p);
        assert!(t.backward(loss).is_err());
        let mut t2 = Tape::<f64>::new();
        let v = t2.param(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        assert!(t2.backward(v).is_err(), "non-scalar loss");
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let mut t = Tape::<f64>::new();
        let l = t.constant(Tensor::matrix(3, 2, vec![0.5; 6]));
        let loss = t.cross_entropy(l, &[0, 1, 1]).unwrap();
        assert!((t.value(loss).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_cost_nothing() {
        let mut t = Tape::<f64>::new();
        let l = t.constant(Tensor::matrix(2, 2, vec![20.0, 0.0, 0.0, 20.0]));
        let loss = t.cross_entropy(l, &[0, 1]).unwrap();
        assert!(t.value(loss).data()[0] < 1e-8);
        assert!(t.cross_entropy(l, &[0, 2]).is_err());
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let mut r = crate::rng::stream(3, 0);
        use rand::Rng as _;
        let logits: Vec<f64> = (0..64).map(|_| r.random_range(-4.0..4.0)).collect();
        let labels: Vec<u8> = (0..32).map(|_| r.random_range(0..2u8)).collect();
        let mut t = Tape::<f64>::new();
        let l = t.constant(Tensor::matrix(32, 2, logits.clone()));
        let loss = t.cross_entropy(l, &labels).unwrap();
        let direct: f64 = (0..32)
            .map(|i| {
                let (a, b) = (logits[2 * i], logits[2 * i + 1]);
                let z = a.exp() + b.exp();
                -(logits[2 * i + labels[i] as usize].exp() / z).ln()
            })
            .sum::<f64>()
            / 32.0;
        assert!((t.value(loss).data()[0] - direct).abs() < 1e-10);
    }

    #[test]
    fn max_pool_routes_to_first_maximum() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::matrix(4, 1, vec![1.0, 3.0, 3.0, 2.0]));
        let m = t.max_pool(x, 4).unwrap();
        let loss = t.sum(m);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_gradients_by_hand() {
        // y = relu(x w + b) * s with x = [1, 2], w = [[1], [-1]], b = 0.5, s = 2
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let w = t.param(Tensor::matrix(2, 1, vec![3.0, -1.0]));
        let b = t.param(Tensor::matrix(1, 1, vec![0.5]));
        let s = t.param(Tensor::matrix(1, 1, vec![2.0]));
        let y = t.dense(x, w, Some(b), Some(s), true).unwrap();
        assert_eq!(t.value(y).data(), &[3.0]);
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, -2.0]);
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0]);
        assert_eq!(g.get(s).unwrap().data(), &[1.5]);
    }

    #[test]
    fn zero_head_blocks_input_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::matrix(3, 2, vec![0.3, -0.2, 0.9, 0.1, -0.5, 0.4]));
        let w = t.param(Tensor::zeros(vec![2, 2]));
        let logits = t.dense(x, w, None, None, false).unwrap();
        let loss = t.cross_entropy(logits, &[0, 1, 0]).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(g.get(w).unwrap().data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn gather_and_interpolate_scatter_back() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]));
        let g1 = t.gather(x, vec![2, 2, 0]).unwrap();
        let it = t.interpolate(x, 2, vec![0, 1, 1, 2], vec![0.25, 0.75, 0.5, 0.5]).unwrap();
        assert_eq!(t.value(it).data(), &[1.75, 2.5]);
        let c = t.concat(g1, g1).unwrap();
        let s1 = t.sum(c);
        let s2 = t.sum(it);
        let both = t.concat(s1, s2).unwrap();
        let total = t.sum(both);
        let g = t.backward(total).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0 + 0.25, 0.75 + 0.5, 4.0 + 0.5]);
    }
}
