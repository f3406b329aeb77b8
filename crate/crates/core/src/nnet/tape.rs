use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Neighbour lists of a (possibly block-diagonal) graph.
pub type Neighbors = Arc<Vec<Vec<usize>>>;

/// Row ranges `(start, len)` of the instances stacked in a batch.
pub type Groups = Arc<Vec<(usize, usize)>>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    NeighborMean(usize, Neighbors),
    Relu(usize),
    Mask(usize, Vec<f64>),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Crps(usize, Vec<f64>),
    Energy {
        x: usize,
        y: Vec<f64>,
        groups: Groups,
        eps: f64,
    },
    Variogram {
        x: usize,
        y: Vec<f64>,
        groups: Groups,
        p: f64,
        eps: f64,
    },
    NegPart(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every recorded value.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Result<&Tensor> {
        if v.tape != self.tape {
            return Err(Error::invalid("variable was not recorded on this tape"));
        }
        self.grads
            .get(v.index)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::invalid("no gradient recorded for this variable"))
    }
}

fn check_shape(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::mismatch(format!("{what}: shapes {a:?} and {b:?}")));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_groups(groups: &[(usize, usize)], rows: usize, y: &[f64]) -> Result<()> {
    if y.len() != rows {
        return Err(Error::mismatch(format!("{} observations for {rows} rows", y.len())));
    }
    let mut next = 0;
    for &(start, len) in groups {
        if start != next || len == 0 {
            return Err(Error::invalid("instance groups must tile the batch"));
        }
        next = start + len;
    }
    if next != rows {
        return Err(Error::invalid("instance groups must tile the batch"));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::invalid("variable was not recorded on this tape"));
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(self.val(self.idx(v)?))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.cols() != tb.rows() {
            return Err(Error::mismatch(format!(
                "matmul: {:?} times {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta.matmul(tb);
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        check_shape("add", self.val(ia).shape(), self.val(ib).shape())?;
        let mut out = self.val(ia).clone();
        out.add_assign(self.val(ib));
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        check_shape("mul", self.val(ia).shape(), self.val(ib).shape())?;
        let (ta, tb) = (self.val(ia), self.val(ib));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    /// Adds a `1 x F` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (tx, tb) = (self.val(ix), self.val(ib));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(Error::mismatch(format!(
                "bias {:?} for input {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let mut out = tx.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(ix, ib)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let mut out = self.val(ix).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        Ok(self.push(out, Op::Scale(ix, s)))
    }

    /// Mean of neighbour rows; rows without neighbours get zeros.
    pub fn neighbor_mean(&mut self, x: Var, neighbors: Neighbors) -> Result<Var> {
        let ix = self.idx(x)?;
        let tx = self.val(ix);
        if neighbors.len() != tx.rows() {
            return Err(Error::mismatch(format!(
                "graph has {} nodes, features have {} rows",
                neighbors.len(),
                tx.rows()
            )));
        }
        let mut out = Tensor::zeros(tx.rows(), tx.cols());
        for (v, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let w = 1.0 / nb.len() as f64;
            let row = out.row_mut(v);
            for &u in nb {
                if u >= tx.rows() {
                    return Err(Error::invalid(format!("neighbour index {u} out of range")));
                }
                for (o, h) in row.iter_mut().zip(tx.row(u)) {
                    *o += w * h;
                }
            }
        }
        Ok(self.push(out, Op::NeighborMean(ix, neighbors)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let mut out = self.val(ix).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(self.push(out, Op::Relu(ix)))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        let ix = self.idx(x)?;
        let keep = 1.0 / (1.0 - rate);
        let n = self.val(ix).data().len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut out = self.val(ix).clone();
        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Ok(self.push(out, Op::Mask(ix, mask)))
    }

    /// Batch normalisation over rows. With `stats = None` the batch mean and
    /// biased variance are used and returned; otherwise the given
    /// `(mean, variance)` are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let tx = self.val(ix);
        let (n, f) = tx.shape();
        check_shape("batch_norm gamma", self.val(ig).shape(), (1, f))?;
        check_shape("batch_norm beta", self.val(ib).shape(), (1, f))?;
        let (mean, var) = match stats {
            Some((m, v)) => {
                if m.len() != f || v.len() != f {
                    return Err(Error::mismatch("batch_norm running statistics"));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                if n == 0 {
                    return Err(Error::invalid("batch_norm on an empty batch"));
                }
                let mut mean = vec![0.0; f];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(tx.row(i)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for i in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(tx.row(i)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(n, f, |i, j| (tx.get(i, j) - mean[j]) * inv_std[j]);
        let (g, b) = (self.val(ig), self.val(ib));
        let out = Tensor::from_fn(n, f, |i, j| g.data()[j] * xhat.get(i, j) + b.data()[j]);
        let var_out = self.push(
            out,
            Op::BatchNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
                batch_stats: stats.is_none(),
            },
        );
        Ok((var_out, mean, var))
    }

    /// Mean sample CRPS over rows, each row an ensemble for one observation.
    pub fn crps_loss(&mut self, x: Var, y: &[f64]) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        if y.len() != t.rows() || t.rows() == 0 || t.cols() == 0 {
            return Err(Error::mismatch(format!(
                "{} observations for a {:?} output",
                y.len(),
                t.shape()
            )));
        }
        let k = t.cols() as f64;
        let mut total = 0.0;
        for (i, &obs) in y.iter().enumerate() {
            let row = t.row(i);
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            let t1: f64 = row.iter().map(|v| (v - obs).abs()).sum::<f64>() / k;
            let pair: f64 = sorted
                .iter()
                .enumerate()
                .map(|(r, v)| (2.0 * r as f64 + 1.0 - k) * v)
                .sum();
            total += t1 - pair / (k * k);
        }
        let out = Tensor::scalar(total / y.len() as f64);
        Ok(self.push(out, Op::Crps(ix, y.to_vec())))
    }

    /// Mean smoothed energy score over instances; within an instance row
    /// `d` is a station and column `k` a member.
    pub fn energy_loss(&mut self, x: Var, y: &[f64], groups: Groups, eps: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        check_groups(&groups, t.rows(), y)?;
        let k = t.cols();
        let norm = |s: usize, len: usize, a: usize, b: Option<usize>| -> f64 {
            let mut acc = eps * eps;
            for d in s..s + len {
                let other = b.map_or(y[d], |b| t.get(d, b));
                let diff = t.get(d, a) - other;
                acc += diff * diff;
            }
            acc.sqrt()
        };
        let mut total = 0.0;
        for &(s, len) in groups.iter() {
            let mut t1 = 0.0;
            let mut t2 = 0.0;
            for a in 0..k {
                t1 += norm(s, len, a, None);
                for b in 0..k {
                    t2 += norm(s, len, a, Some(b));
                }
            }
            let kf = k as f64;
            total += t1 / kf - t2 / (2.0 * kf * kf);
        }
        let out = Tensor::scalar(total / groups.len() as f64);
        Ok(self.push(
            out,
            Op::Energy {
                x: ix,
                y: y.to_vec(),
                groups,
                eps,
            },
        ))
    }

    /// Mean smoothed variogram score of order `p` (unit weights) over
    /// instances. Forecast differences use `(x^2 + eps^2)^(p/2)`.
    pub fn variogram_loss(&mut self, x: Var, y: &[f64], groups: Groups, p: f64, eps: f64) -> Result<Var> {
        if p <= 0.0 {
            return Err(Error::invalid(format!("variogram order must be positive, got {p}")));
        }
        let ix = self.idx(x)?;
        let t = self.val(ix);
        check_groups(&groups, t.rows(), y)?;
        let k = t.cols();
        let mut total = 0.0;
        for &(s, len) in groups.iter() {
            for i in s..s + len {
                for j in i + 1..s + len {
                    let obs = (y[i] - y[j]).abs().powf(p);
                    let m: f64 = (0..k)
                        .map(|c| {
                            let diff = t.get(i, c) - t.get(j, c);
                            (diff * diff + eps * eps).powf(0.5 * p)
                        })
                        .sum::<f64>()
                        / k as f64;
                    total += 2.0 * (obs - m) * (obs - m);
                }
            }
        }
        let out = Tensor::scalar(total / groups.len() as f64);
        Ok(self.push(
            out,
            Op::Variogram {
                x: ix,
                y: y.to_vec(),
                groups,
                p,
                eps,
            },
        ))
    }

    /// `mean(max(0, -x))`
    pub fn negative_part(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        let n = t.data().len().max(1) as f64;
        let v = t.data().iter().map(|v| (-v).max(0.0)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(v), Op::NegPart(ix)))
    }

    /// Reverse sweep from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.idx(loss)?;
        if self.val(il).shape() != (1, 1) {
            return Err(Error::invalid("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
            match &mut grads[i] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_t(self.val(*b)));
                    acc(&mut grads, *b, self.val(*a).t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.val(*a), self.val(*b));
                    let ga = Tensor::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * tb.get(r, c));
                    let gb = Tensor::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * ta.get(r, c));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, g.clone());
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(x, s) => {
                    let mut gx = g.clone();
                    gx.data_mut().iter_mut().for_each(|v| *v *= s);
                    acc(&mut grads, *x, gx);
                }
                Op::NeighborMean(x, nb) => {
                    let mut gx = Tensor::zeros(g.rows(), g.cols());
                    for (v, list) in nb.iter().enumerate() {
                        if list.is_empty() {
                            continue;
                        }
                        let w = 1.0 / list.len() as f64;
                        for &u in list {
                            let src = g.row(v).to_vec();
                            for (o, s) in gx.row_mut(u).iter_mut().zip(src) {
                                *o += w * s;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let tx = self.val(*x);
                    let mut gx = g.clone();
                    gx.data_mut()
                        .iter_mut()
                        .zip(tx.data())
                        .for_each(|(gv, v)| {
                            if *v <= 0.0 {
                                *gv = 0.0;
                            }
                        });
                    acc(&mut grads, *x, gx);
                }
                Op::Mask(x, mask) => {
                    let mut gx = g.clone();
                    gx.data_mut().iter_mut().zip(mask).for_each(|(gv, m)| *gv *= m);
                    acc(&mut grads, *x, gx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, f) = g.shape();
                    let gam = self.val(*gamma);
                    let mut gg = Tensor::zeros(1, f);
                    let mut gbeta = Tensor::zeros(1, f);
                    for r in 0..n {
                        for j in 0..f {
                            gg.data_mut()[j] += g.get(r, j) * xhat.get(r, j);
                            gbeta.data_mut()[j] += g.get(r, j);
                        }
                    }
                    let gx = if *batch_stats {
                        let nf = n as f64;
                        Tensor::from_fn(n, f, |r, j| {
                            let dxhat = g.get(r, j) * gam.data()[j];
                            let sum_d = gbeta.data()[j] * gam.data()[j];
                            let sum_dx = gg.data()[j] * gam.data()[j];
                            inv_std[j] / nf * (nf * dxhat - sum_d - xhat.get(r, j) * sum_dx)
                        })
                    } else {
                        Tensor::from_fn(n, f, |r, j| g.get(r, j) * gam.data()[j] * inv_std[j])
                    };
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::Crps(x, y) => {
                    let t = self.val(*x);
                    let (n, k) = t.shape();
                    let scale = g.item() / n as f64;
                    let kf = k as f64;
                    let gx = Tensor::from_fn(n, k, |r, c| {
                        let v = t.get(r, c);
                        let pair: f64 = t.row(r).iter().map(|u| sign(v - u)).sum();
                        scale * (sign(v - y[r]) / kf - pair / (kf * kf))
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Energy { x, y, groups, eps } => {
                    let t = self.val(*x);
                    let k = t.cols();
                    let kf = k as f64;
                    let scale = g.item() / groups.len() as f64;
                    let mut gx = Tensor::zeros(t.rows(), k);
                    for &(s, len) in groups.iter() {
                        let dist = |a: usize, b: Option<usize>| -> f64 {
                            let mut acc = eps * eps;
                            for d in s..s + len {
                                let o = b.map_or(y[d], |b| t.get(d, b));
                                acc += (t.get(d, a) - o).powi(2);
                            }
                            acc.sqrt()
                        };
                        for a in 0..k {
                            let na = dist(a, None);
                            for d in s..s + len {
                                let v = gx.get(d, a) + scale * (t.get(d, a) - y[d]) / (na * kf);
                                gx.set(d, a, v);
                            }
                            for b in 0..k {
                                if a == b {
                                    continue;
                                }
                                let nab = dist(a, Some(b));
                                for d in s..s + len {
                                    let v = gx.get(d, a) - scale * (t.get(d, a) - t.get(d, b)) / (nab * kf * kf);
                                    gx.set(d, a, v);
                                }
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Variogram { x, y, groups, p, eps } => {
                    let t = self.val(*x);
                    let k = t.cols();
                    let kf = k as f64;
                    let scale = g.item() / groups.len() as f64;
                    let mut gx = Tensor::zeros(t.rows(), k);
                    for &(s, len) in groups.iter() {
                        for i in s..s + len {
                            for j in i + 1..s + len {
                                let obs = (y[i] - y[j]).abs().powf(*p);
                                let diffs: Vec<f64> = (0..k).map(|c| t.get(i, c) - t.get(j, c)).collect();
                                let m: f64 = diffs
                                    .iter()
                                    .map(|d| (d * d + eps * eps).powf(0.5 * p))
                                    .sum::<f64>()
                                    / kf;
                                let r = obs - m;
                                for (c, d) in diffs.iter().enumerate() {
                                    let dg = p * d * (d * d + eps * eps).powf(0.5 * p - 1.0);
                                    let dv = scale * 4.0 * r * (-1.0 / kf) * dg;
                                    gx.set(i, c, gx.get(i, c) + dv);
                                    gx.set(j, c, gx.get(j, c) - dv);
                                }
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::NegPart(x) => {
                    let t = self.val(*x);
                    let n = t.data().len().max(1) as f64;
                    let s = g.item() / n;
                    let data = t.data().iter().map(|v| if *v < 0.0 { -s } else { 0.0 }).collect();
                    acc(&mut grads, *x, Tensor::from_vec(t.rows(), t.cols(), data)?);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{crps_sample, energy_score, variogram_score};
    use ndarray::{Array1, Array2};

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn foreign_variable_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let xa = a.leaf(Tensor::scalar(1.0));
        let xb = b.leaf(Tensor::scalar(1.0));
        let g = a.backward(xa).unwrap();
        assert!(g.get(xb).is_err());
        assert!(a.relu(xb).is_err());
    }

    #[test]
    fn neighbor_mean_examples() {
        let mut tape = Tape::new();
        let h = tape.leaf(Tensor::from_vec(3, 1, vec![1.0, 3.0, 7.0]).unwrap());
        let nb: Neighbors = Arc::new(vec![vec![1], vec![0], vec![]]);
        let m = tape.neighbor_mean(h, nb).unwrap();
        assert_eq!(tape.value(m).unwrap().data(), &[3.0, 1.0, 0.0]);
    }

    #[test]
    fn losses_match_exact_scores() {
        let x = Tensor::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.3 * j as f64);
        let y = vec![0.4, -1.0, 2.5];
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let c = tape.crps_loss(v, &y).unwrap();
        let expect: f64 = (0..3).map(|i| crps_sample(x.row(i), y[i]).unwrap()).sum::<f64>() / 3.0;
        assert!((tape.value(c).unwrap().item() - expect).abs() < 1e-12);

        let groups: Groups = Arc::new(vec![(0, 3)]);
        let f = Array2::from_shape_fn((3, 4), |(i, j)| x.get(i, j));
        let obs = Array1::from(y.clone());
        let es = tape.energy_loss(v, &y, groups.clone(), 1e-8).unwrap();
        let es_exact = energy_score(f.view(), obs.view()).unwrap();
        assert!((tape.value(es).unwrap().item() - es_exact).abs() < 4.0 * 3.0 * 1e-8);
        let vs = tape.variogram_loss(v, &y, groups, 0.5, 1e-8).unwrap();
        let vs_exact = variogram_score(f.view(), obs.view(), None, 0.5).unwrap();
        assert!((tape.value(vs).unwrap().item() - vs_exact).abs() < 1e-6);
    }

    #[test]
    fn ties_give_finite_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 3, 1.0));
        let y = vec![1.0, 1.0];
        let groups: Groups = Arc::new(vec![(0, 2)]);
        let c = tape.crps_loss(x, &y).unwrap();
        let e = tape.energy_loss(x, &y, groups.clone(), 1e-8).unwrap();
        let v = tape.variogram_loss(x, &y, groups, 0.5, 1e-8).unwrap();
        let s = tape.add(c, e).unwrap();
        let s = tape.add(s, v).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().is_finite());
    }
}
