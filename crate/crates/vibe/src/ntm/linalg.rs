//! Dense and sparse linear layers with explicit backward passes.
//!
//! Gradients are accumulated into mirror structs of the same shape, so a
//! zeroed clone of a layer doubles as its gradient buffer.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::corpus::BowVector;

/// Sparse input vector as (index, value) pairs, sorted by index.
#[derive(Debug, Clone, Default)]
pub struct SparseVec(pub Vec<(usize, f64)>);

impl SparseVec {
    pub fn from_bow(bow: &BowVector) -> Self {
        Self(bow.iter().map(|(i, c)| (i, f64::from(c))).collect())
    }

    /// Concatenation of two bags: `y` indices are shifted by `offset`.
    pub fn from_bow_pair(x: &BowVector, y: &BowVector, offset: usize) -> Self {
        let mut entries: Vec<(usize, f64)> =
            x.iter().map(|(i, c)| (i, f64::from(c))).collect();
        entries.extend(y.iter().map(|(i, c)| (i + offset, f64::from(c))));
        Self(entries)
    }
}

/// Fully-connected layer `y = W·x + b` with `W` stored row-major (out × in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { w: Array2::zeros((out_dim, in_dim)), b: Array1::zeros(out_dim) }
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        let scale = 1.0 / (self.in_dim() as f64).sqrt();
        for v in self.w.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in self.b.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    /// Accumulate parameter gradients and return dL/dx.
    pub fn backward(
        &self,
        x: &Array1<f64>,
        dy: &Array1<f64>,
        grad: &mut Linear,
    ) -> Array1<f64> {
        add_outer(&mut grad.w, dy, x);
        grad.b += dy;
        matvec_transposed(&self.w, dy)
    }
}

/// Input-major layer for sparse inputs: weights stored (in × out) so each
/// input feature's row is contiguous.
#[derive(Debug, Clone)]
pub struct SparseLinear {
    pub w_t: Array2<f64>,
    pub b: Array1<f64>,
}

impl SparseLinear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { w_t: Array2::zeros((in_dim, out_dim)), b: Array1::zeros(out_dim) }
    }

    pub fn out_dim(&self) -> usize {
        self.w_t.ncols()
    }

    pub fn in_dim(&self) -> usize {
        self.w_t.nrows()
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        let scale = 1.0 / (self.in_dim() as f64).sqrt();
        for v in self.w_t.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in self.b.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }

    pub fn forward(&self, x: &SparseVec) -> Array1<f64> {
        let mut y = self.b.clone();
        for &(j, v) in &x.0 {
            y.scaled_add(v, &self.w_t.row(j));
        }
        y
    }

    /// Accumulate parameter gradients; inputs are data, so no dL/dx.
    pub fn backward(&self, x: &SparseVec, dy: &Array1<f64>, grad: &mut SparseLinear) {
        grad.b += dy;
        for &(j, v) in &x.0 {
            grad.w_t.row_mut(j).scaled_add(v, dy);
        }
    }
}

/// `gw += dy ⊗ x` without allocating the outer product.
pub fn add_outer(gw: &mut Array2<f64>, dy: &Array1<f64>, x: &Array1<f64>) {
    for (i, &d) in dy.iter().enumerate() {
        if d != 0.0 {
            gw.row_mut(i).scaled_add(d, x);
        }
    }
}

/// `Wᵀ·dy` computed row-wise to stay contiguous.
pub fn matvec_transposed(w: &Array2<f64>, dy: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(w.ncols());
    for (i, &d) in dy.iter().enumerate() {
        if d != 0.0 {
            out.scaled_add(d, &w.row(i));
        }
    }
    out
}

pub fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// dL/dx_pre given dL/dx_post and the post-activation values.
pub fn relu_backward(post: &Array1<f64>, dy: &Array1<f64>) -> Array1<f64> {
    let mut dx = dy.clone();
    for (d, &p) in dx.iter_mut().zip(post.iter()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn softmax(z: &Array1<f64>) -> Array1<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = z.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// dL/dz through a softmax with output `s`: `s ⊙ (ds − ds·s)`.
pub fn softmax_backward(s: &Array1<f64>, ds: &Array1<f64>) -> Array1<f64> {
    let dot = ds.dot(s);
    let mut dz = ds - dot;
    dz *= s;
    dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dense_and_sparse_layers_agree() {
        let mut lin = Linear::zeros(2, 3);
        lin.w = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        lin.b = array![0.5, -0.5];
        let mut sp = SparseLinear::zeros(2, 3);
        sp.w_t = lin.w.t().to_owned();
        sp.b = lin.b.clone();

        let dense_x = array![0.0, 2.0, 1.0];
        let sparse_x = SparseVec(vec![(1, 2.0), (2, 1.0)]);
        assert_eq!(lin.forward(&dense_x), sp.forward(&sparse_x));
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant() {
        let z = array![1.0, 2.0, -3.0, 0.0];
        let s = softmax(&z);
        assert!((s.sum() - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|&p| p > 0.0));
        let shifted = softmax(&(&z + 100.0));
        for (a, b) in s.iter().zip(shifted.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = array![0.3, -1.2, 0.7];
        let ds = array![0.5, -0.25, 1.5];
        let analytic = softmax_backward(&softmax(&z), &ds);
        let h = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (softmax(&zp).dot(&ds) - softmax(&zm).dot(&ds)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6, "coord {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut lin = Linear::zeros(2, 3);
        lin.w = array![[0.1, -0.4, 0.3], [0.7, 0.2, -0.9]];
        lin.b = array![0.05, -0.15];
        let x = array![1.0, -2.0, 0.5];
        let dy = array![1.25, -0.75];

        let mut grad = Linear::zeros(2, 3);
        let dx = lin.backward(&x, &dy, &mut grad);

        let h = 1e-6;
        let loss = |l: &Linear, x: &Array1<f64>| l.forward(x).dot(&dy);
        for i in 0..2 {
            for j in 0..3 {
                let mut lp = lin.clone();
                lp.w[[i, j]] += h;
                let mut lm = lin.clone();
                lm.w[[i, j]] -= h;
                let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
                assert!((fd - grad.w[[i, j]]).abs() < 1e-6);
            }
        }
        for j in 0..3 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * h);
            assert!((fd - dx[j]).abs() < 1e-6);
        }
    }
}
