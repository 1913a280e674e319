//! Neural layers with hand-written backward passes.
//!
//! Each layer's gradient container is a value of the layer type itself, made
//! with `zeros_like`; `backward` adds into it and returns the input gradient.

use rand_chacha::ChaCha8Rng;

use super::matrix::{axpy, dot};
use super::params::{init_uniform, Parameterized};
use super::{DenseMatrix, ModelError};

fn check_mask(mask: &[bool], rows: usize) -> Result<(), ModelError> {
    if mask.len() != rows {
        return Err(ModelError::DimensionMismatch { context: "mask length", expected: rows, found: mask.len() });
    }
    Ok(())
}

/// Softmax over the entries where `mask` is true; masked entries get 0.
/// An all-false mask gives all zeros.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    // decided on the mask so overflowed logits surface as NaN downstream
    if !mask.contains(&true) {
        return vec![0.0; logits.len()];
    }
    let mut out: Vec<f64> = logits.iter().zip(mask).map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 }).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: DenseMatrix,
}

impl Embedding {
    pub fn new(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { table: init_uniform(rows, dim, dim, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { table: DenseMatrix::zeros(self.table.rows(), self.table.cols()) }
    }

    pub fn forward(&self, indices: &[usize]) -> Result<DenseMatrix, ModelError> {
        let mut out = DenseMatrix::zeros(indices.len(), self.table.cols());
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= self.table.rows() {
                return Err(ModelError::IndexOutOfRange { index: idx, size: self.table.rows() });
            }
            out.row_mut(i).copy_from_slice(self.table.row(idx));
        }
        Ok(out)
    }

    /// Scatter-adds output rows into the gradient table.
    pub fn backward(&self, indices: &[usize], d_out: &DenseMatrix, grad: &mut Embedding) {
        for (i, &idx) in indices.iter().enumerate() {
            axpy(grad.table.row_mut(idx), 1.0, d_out.row(i));
        }
    }
}

impl Parameterized for Embedding {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![("table".into(), &self.table)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        vec![("table".into(), &mut self.table)]
    }
}

/// Scaled dot-product self-attention split over `heads` heads, without an
/// output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadSelfAttention {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: DenseMatrix,
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    /// One L×L weight matrix per head; rows of masked queries are zero.
    pub weights: Vec<DenseMatrix>,
}

impl MultiHeadSelfAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(ModelError::Config(format!("embedding dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            wq: init_uniform(dim, dim, dim, rng),
            wk: init_uniform(dim, dim, dim, rng),
            wv: init_uniform(dim, dim, dim, rng),
            heads,
        })
    }

    pub fn identity(dim: usize, heads: usize) -> Self {
        Self { wq: DenseMatrix::identity(dim), wk: DenseMatrix::identity(dim), wv: DenseMatrix::identity(dim), heads }
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.wq.rows();
        Self { wq: DenseMatrix::zeros(d, d), wk: DenseMatrix::zeros(d, d), wv: DenseMatrix::zeros(d, d), heads: self.heads }
    }

    pub fn forward(&self, x: &DenseMatrix, mask: &[bool]) -> Result<(DenseMatrix, AttentionCache), ModelError> {
        let (len, d) = x.shape();
        check_mask(mask, len)?;
        if d != self.wq.rows() {
            return Err(ModelError::DimensionMismatch { context: "attention input width", expected: self.wq.rows(), found: d });
        }
        let q = x.matmul(&self.wq);
        let k = x.matmul(&self.wk);
        let v = x.matmul(&self.wv);
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = DenseMatrix::zeros(len, d);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dk..(h + 1) * dk;
            let mut a = DenseMatrix::zeros(len, len);
            for i in (0..len).filter(|&i| mask[i]) {
                let qi = &q.row(i)[cols.clone()];
                let logits: Vec<f64> = (0..len).map(|j| dot(qi, &k.row(j)[cols.clone()]) * scale).collect();
                let w = masked_softmax(&logits, mask);
                a.row_mut(i).copy_from_slice(&w);
                let out_head = &mut out.row_mut(i)[cols.clone()];
                for (j, &wij) in w.iter().enumerate() {
                    if wij != 0.0 {
                        axpy(out_head, wij, &v.row(j)[cols.clone()]);
                    }
                }
            }
            weights.push(a);
        }
        Ok((out, AttentionCache { x: x.clone(), q, k, v, weights }))
    }

    pub fn backward(&self, cache: &AttentionCache, d_out: &DenseMatrix, grad: &mut MultiHeadSelfAttention) -> DenseMatrix {
        let (len, d) = cache.x.shape();
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = DenseMatrix::zeros(len, d);
        let mut dkm = DenseMatrix::zeros(len, d);
        let mut dv = DenseMatrix::zeros(len, d);
        for (h, a) in cache.weights.iter().enumerate() {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..len {
                let do_i = &d_out.row(i)[cols.clone()];
                let a_i = a.row(i);
                if a_i.iter().all(|&w| w == 0.0) {
                    continue;
                }
                let da: Vec<f64> = (0..len).map(|j| dot(do_i, &cache.v.row(j)[cols.clone()])).collect();
                let centre = dot(a_i, &da);
                for j in 0..len {
                    let aij = a_i[j];
                    if aij == 0.0 {
                        continue;
                    }
                    axpy(&mut dv.row_mut(j)[cols.clone()], aij, do_i);
                    let ds = aij * (da[j] - centre) * scale;
                    let kj = cache.k.row(j)[cols.clone()].to_vec();
                    axpy(&mut dq.row_mut(i)[cols.clone()], ds, &kj);
                    let qi = cache.q.row(i)[cols.clone()].to_vec();
                    axpy(&mut dkm.row_mut(j)[cols.clone()], ds, &qi);
                }
            }
        }
        grad.wq.add_assign(&cache.x.t_matmul(&dq));
        grad.wk.add_assign(&cache.x.t_matmul(&dkm));
        grad.wv.add_assign(&cache.x.t_matmul(&dv));
        let mut dx = dq.matmul_t(&self.wq);
        dx.add_assign(&dkm.matmul_t(&self.wk));
        dx.add_assign(&dv.matmul_t(&self.wv));
        dx
    }
}

impl Parameterized for MultiHeadSelfAttention {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![("wq".into(), &self.wq), ("wk".into(), &self.wk), ("wv".into(), &self.wv)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        vec![("wq".into(), &mut self.wq), ("wk".into(), &mut self.wk), ("wv".into(), &mut self.wv)]
    }
}

/// `a_i = query · tanh(x_i W + b)`, softmax over unmasked rows, weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveAttentionPool {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
    pub query: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    x: DenseMatrix,
    hidden: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AdditiveAttentionPool {
    pub fn new(dim: usize, query_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: init_uniform(dim, query_dim, dim, rng),
            b: DenseMatrix::zeros(1, query_dim),
            query: init_uniform(1, query_dim, query_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (d, q) = self.w.shape();
        Self { w: DenseMatrix::zeros(d, q), b: DenseMatrix::zeros(1, q), query: DenseMatrix::zeros(1, q) }
    }

    pub fn forward(&self, x: &DenseMatrix, mask: &[bool]) -> Result<(Vec<f64>, PoolCache), ModelError> {
        let (len, d) = x.shape();
        check_mask(mask, len)?;
        if d != self.w.rows() {
            return Err(ModelError::DimensionMismatch { context: "pool input width", expected: self.w.rows(), found: d });
        }
        let mut hidden = Vec::with_capacity(len);
        let mut logits = vec![0.0; len];
        for i in 0..len {
            if !mask[i] {
                hidden.push(Vec::new());
                continue;
            }
            let mut h = self.w.vec_matmul(x.row(i));
            for (hv, bv) in h.iter_mut().zip(self.b.data()) {
                *hv = (*hv + bv).tanh();
            }
            logits[i] = dot(&h, self.query.data());
            hidden.push(h);
        }
        let weights = masked_softmax(&logits, mask);
        let mut out = vec![0.0; d];
        for (i, &a) in weights.iter().enumerate() {
            if a != 0.0 {
                axpy(&mut out, a, x.row(i));
            }
        }
        Ok((out, PoolCache { x: x.clone(), hidden, weights }))
    }

    pub fn backward(&self, cache: &PoolCache, d_out: &[f64], grad: &mut AdditiveAttentionPool) -> DenseMatrix {
        let (len, d) = cache.x.shape();
        let mut dx = DenseMatrix::zeros(len, d);
        let dalpha: Vec<f64> = (0..len).map(|i| dot(d_out, cache.x.row(i))).collect();
        let centre = dot(&cache.weights, &dalpha);
        for i in 0..len {
            let a = cache.weights[i];
            if a == 0.0 {
                continue;
            }
            axpy(dx.row_mut(i), a, d_out);
            let dlogit = a * (dalpha[i] - centre);
            let h = &cache.hidden[i];
            axpy(grad.query.data_mut(), dlogit, h);
            let dz: Vec<f64> = h.iter().zip(self.query.data()).map(|(hv, qv)| dlogit * qv * (1.0 - hv * hv)).collect();
            grad.w.add_outer(cache.x.row(i), &dz);
            axpy(grad.b.data_mut(), 1.0, &dz);
            let back = self.w.matvec(&dz);
            axpy(dx.row_mut(i), 1.0, &back);
        }
        dx
    }
}

impl Parameterized for AdditiveAttentionPool {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b), ("query".into(), &self.query)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b), ("query".into(), &mut self.query)]
    }
}

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { w: init_uniform(input, output, input, rng), b: DenseMatrix::zeros(1, output) }
    }

    pub fn zeros_like(&self) -> Self {
        let (i, o) = self.w.shape();
        Self { w: DenseMatrix::zeros(i, o), b: DenseMatrix::zeros(1, o) }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.w.rows() {
            return Err(ModelError::DimensionMismatch { context: "linear input width", expected: self.w.rows(), found: x.len() });
        }
        let mut y = self.w.vec_matmul(x);
        axpy(&mut y, 1.0, self.b.data());
        Ok(y)
    }

    pub fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Linear) -> Vec<f64> {
        grad.w.add_outer(x, d_out);
        axpy(grad.b.data_mut(), 1.0, d_out);
        self.w.matvec(d_out)
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

/// One round of mean-aggregation message passing:
/// `new(v) = tanh([emb(v) ‖ mean of neighbour embeddings] W)`, W is 2d×d.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborAggregator {
    pub w: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct AggregateCache {
    input: Vec<f64>,
    output: Vec<f64>,
    neighbors: usize,
}

impl NeighborAggregator {
    pub fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { w: init_uniform(2 * dim, dim, 2 * dim, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: DenseMatrix::zeros(self.w.rows(), self.w.cols()) }
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    /// Isolated nodes (no neighbours) use a zero neighbour mean.
    pub fn forward(&self, own: &[f64], neighbors: &[&[f64]]) -> Result<(Vec<f64>, AggregateCache), ModelError> {
        let d = self.dim();
        if own.len() != d {
            return Err(ModelError::DimensionMismatch { context: "aggregator input width", expected: d, found: own.len() });
        }
        let mut input = vec![0.0; 2 * d];
        input[..d].copy_from_slice(own);
        for n in neighbors {
            if n.len() != d {
                return Err(ModelError::DimensionMismatch { context: "neighbour width", expected: d, found: n.len() });
            }
            axpy(&mut input[d..], 1.0, n);
        }
        if !neighbors.is_empty() {
            let inv = 1.0 / neighbors.len() as f64;
            input[d..].iter_mut().for_each(|v| *v *= inv);
        }
        let output: Vec<f64> = self.w.vec_matmul(&input).into_iter().map(f64::tanh).collect();
        Ok((output.clone(), AggregateCache { input, output, neighbors: neighbors.len() }))
    }

    /// Returns the gradient for the node's own embedding and the gradient
    /// that each neighbour receives (the same vector for every neighbour).
    pub fn backward(&self, cache: &AggregateCache, d_out: &[f64], grad: &mut NeighborAggregator) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let dpre: Vec<f64> = d_out.iter().zip(&cache.output).map(|(g, y)| g * (1.0 - y * y)).collect();
        grad.w.add_outer(&cache.input, &dpre);
        let dinput = self.w.matvec(&dpre);
        let own = dinput[..d].to_vec();
        let mut each = dinput[d..].to_vec();
        if cache.neighbors > 0 {
            let inv = 1.0 / cache.neighbors as f64;
            each.iter_mut().for_each(|v| *v *= inv);
        } else {
            each.iter_mut().for_each(|v| *v = 0.0);
        }
        (own, each)
    }
}

impl Parameterized for NeighborAggregator {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        vec![("w".into(), &self.w)]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        vec![("w".into(), &mut self.w)]
    }
}
