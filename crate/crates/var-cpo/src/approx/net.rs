//! Flat-parameter tanh MLP with exact derivative passes.
//!
//! Parameters live in one `Vec<f64>` laid out layer by layer: the weight
//! matrix (row-major, `out × in`) followed by the bias vector. Hidden layers
//! apply `tanh`; the final layer is linear. Three passes are provided:
//!
//! - forward with cached activations,
//! - reverse mode (vector–Jacobian product): given `∂L/∂output`, accumulate
//!   `∂L/∂params`,
//! - forward mode (Jacobian–vector product): given a parameter direction,
//!   return the induced output direction.
//!
//! The JVP/VJP pair is what makes closed-form Fisher–vector products exact:
//! `F v = Jᵀ (F_dist (J v))` needs one tangent pass, a distribution-space
//! multiply, and one reverse pass.

use rand::Rng;

/// Layer-size description of an MLP; does not own parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    /// `[input_dim, hidden..., output_dim]`.
    pub sizes: Vec<usize>,
}

/// Cached activations from a forward pass: `layers[0]` is the input,
/// `layers[i]` the post-activation output of layer `i`, the last entry the
/// linear network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per-layer activation vectors, input first.
    pub layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Network output (last layer, linear).
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("forward cache has layers")
    }
}

impl Net {
    /// Builds a net description; `sizes.len() >= 2`.
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Net { sizes }
    }

    /// Number of layers (weight/bias pairs).
    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Total flat parameter count.
    pub fn param_count(&self) -> usize {
        (0..self.layer_count())
            .map(|l| self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1])
            .sum()
    }

    /// Offset of layer `l`'s weight block in the flat vector.
    fn weight_offset(&self, layer: usize) -> usize {
        (0..layer)
            .map(|l| self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1])
            .sum()
    }

    /// Forward pass with cached activations.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> ForwardCache {
        debug_assert_eq!(params.len(), self.param_count());
        assert_eq!(input.len(), self.sizes[0], "input dimension mismatch");
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(input.to_vec());
        let last = self.layer_count() - 1;
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.weight_offset(l);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            let h = &layers[l];
            let mut z = vec![0.0; n_out];
            for (i, zi) in z.iter_mut().enumerate() {
                let row = &w[i * n_in..(i + 1) * n_in];
                let mut acc = b[i];
                for (wj, hj) in row.iter().zip(h.iter()) {
                    acc += wj * hj;
                }
                *zi = if l < last { acc.tanh() } else { acc };
            }
            layers.push(z);
        }
        ForwardCache { layers }
    }

    /// Reverse pass: accumulates `scale · ∂(out_grad · output)/∂params` into
    /// `acc`, which must have `param_count` length.
    pub fn backward_into(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        out_grad: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) {
        debug_assert_eq!(acc.len(), self.param_count());
        assert_eq!(out_grad.len(), *self.sizes.last().unwrap());
        let mut delta = out_grad.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.weight_offset(l);
            let h = &cache.layers[l];
            {
                let (w_acc, b_acc) =
                    acc[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for i in 0..n_out {
                    let di = scale * delta[i];
                    let row = &mut w_acc[i * n_in..(i + 1) * n_in];
                    for (r, hj) in row.iter_mut().zip(h.iter()) {
                        *r += di * hj;
                    }
                    b_acc[i] += di;
                }
            }
            if l > 0 {
                let w = &params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (i, &di) in delta.iter().enumerate() {
                    let row = &w[i * n_in..(i + 1) * n_in];
                    for (p, wj) in prev.iter_mut().zip(row.iter()) {
                        *p += wj * di;
                    }
                }
                // Input to layer l is the tanh output of layer l−1.
                for (p, hj) in prev.iter_mut().zip(h.iter()) {
                    *p *= 1.0 - hj * hj;
                }
                delta = prev;
            }
        }
    }

    /// Convenience wrapper around [`Net::backward_into`] returning a fresh
    /// gradient vector.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, out_grad: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.param_count()];
        self.backward_into(params, cache, out_grad, 1.0, &mut acc);
        acc
    }

    /// Forward-mode pass: output tangent `J_params(output) · v` for a
    /// parameter direction `v` (input held fixed).
    pub fn jvp(&self, params: &[f64], cache: &ForwardCache, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.param_count());
        let last = self.layer_count() - 1;
        let mut tangent = vec![0.0; self.sizes[0]];
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.weight_offset(l);
            let w = &params[off..off + n_in * n_out];
            let dw = &v[off..off + n_in * n_out];
            let db = &v[off + n_in * n_out..off + n_in * n_out + n_out];
            let h = &cache.layers[l];
            let h_next = &cache.layers[l + 1];
            let mut t_next = vec![0.0; n_out];
            for (i, t) in t_next.iter_mut().enumerate() {
                let w_row = &w[i * n_in..(i + 1) * n_in];
                let dw_row = &dw[i * n_in..(i + 1) * n_in];
                let mut acc = db[i];
                for j in 0..n_in {
                    acc += dw_row[j] * h[j] + w_row[j] * tangent[j];
                }
                *t = if l < last { (1.0 - h_next[i] * h_next[i]) * acc } else { acc };
            }
            tangent = t_next;
        }
        tangent
    }

    /// Initializes parameters: scaled orthogonal-like rows for hidden
    /// layers, zeros for the final layer (so fresh policy heads are uniform
    /// and fresh value heads predict zero).
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let last = self.layer_count() - 1;
        for l in 0..last {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.weight_offset(l);
            let rows = orthogonal_like_rows(rng, n_out, n_in, std::f64::consts::SQRT_2);
            for (i, row) in rows.iter().enumerate() {
                params[off + i * n_in..off + (i + 1) * n_in].copy_from_slice(row);
            }
        }
        params
    }
}

/// Samples `rows` Gaussian vectors of length `cols`, Gram-Schmidts each
/// block of `cols` consecutive rows, and scales by `gain`. For `rows ≤ cols`
/// this yields orthogonal rows; beyond that, each block is internally
/// orthogonal (full orthogonality is impossible and is not needed).
fn orthogonal_like_rows<R: Rng>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut row: Vec<f64> = (0..cols).map(|_| standard_normal(rng)).collect();
        let block_start = i - (i % cols);
        for prev in &out[block_start..] {
            let dot: f64 = row.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
            for (r, p) in row.iter_mut().zip(prev.iter()) {
                *r -= dot * p / gain / gain;
            }
        }
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > 1e-12 { gain / norm } else { 0.0 };
        for r in &mut row {
            *r *= scale;
        }
        out.push(row);
    }
    out
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}
