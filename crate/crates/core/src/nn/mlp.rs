//! Dense ELU networks with exact input gradients and the mixed second-order
//! parameter gradients needed when a loss depends on those input gradients.
//!
//! Parameters live in one flat vector; layer `k` stores its `out x in`
//! row-major weight followed by its bias.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::Rng;

#[inline]
pub fn elu(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        a.exp_m1()
    }
}

#[inline]
pub fn elu_prime(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a.exp()
    }
}

#[inline]
fn elu_second(a: f64) -> f64 {
    if a > 0.0 {
        0.0
    } else {
        a.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerRepr>,
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = Error;
    fn try_from(r: MlpRepr) -> Result<Self> {
        let mut mlp = Mlp::zeros(&r.layer_sizes)?;
        check_len("layer count", mlp.n_layers(), r.layers.len())?;
        for (k, layer) in r.layers.iter().enumerate() {
            let (n_in, n_out) = mlp.layer_shape(k);
            check_len("weight", n_in * n_out, layer.weight.len())?;
            check_len("bias", n_out, layer.bias.len())?;
            let off = mlp.offsets[k];
            mlp.params[off..off + n_in * n_out].copy_from_slice(&layer.weight);
            mlp.params[off + n_in * n_out..off + n_in * n_out + n_out].copy_from_slice(&layer.bias);
        }
        Ok(mlp)
    }
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        MlpRepr {
            layers: (0..m.n_layers())
                .map(|k| LayerRepr {
                    weight: m.weight(k).to_vec(),
                    bias: m.bias(k).to_vec(),
                })
                .collect(),
            layer_sizes: m.sizes,
        }
    }
}

/// Forward activations kept for the backward passes.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `pre[k]` is layer `k`'s affine output.
    pre: Vec<Vec<f64>>,
    /// `post[k]` is the input to layer `k`; `post[n]` is the network output.
    post: Vec<Vec<f64>>,
}

/// Intermediates of the input-gradient pass of a scalar network.
#[derive(Debug, Clone)]
pub struct GradCache {
    /// `delta[k] = dS/d(post[k])`
    delta: Vec<Vec<f64>>,
    /// `u[k] = elu'(pre[k]) * delta[k+1]` for hidden layers
    u: Vec<Vec<f64>>,
    abar: Vec<Vec<f64>>,
    ubar: Vec<Vec<f64>>,
    dbar: Vec<Vec<f64>>,
    hbar: Vec<Vec<f64>>,
}

impl Mlp {
    /// All-zero network of the given layer sizes `[input, hidden.., output]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Argument(format!("invalid layer sizes {sizes:?}")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut n = 0;
        for w in sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            offsets,
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut m = Mlp::zeros(sizes)?;
        for k in 0..m.n_layers() {
            let (n_in, n_out) = m.layer_shape(k);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for w in m.weight_mut(k) {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// `(inputs, outputs)` of layer `k`.
    pub fn layer_shape(&self, k: usize) -> (usize, usize) {
        (self.sizes[k], self.sizes[k + 1])
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weight(&self, k: usize) -> &[f64] {
        let (n_in, n_out) = self.layer_shape(k);
        &self.params[self.offsets[k]..self.offsets[k] + n_in * n_out]
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut [f64] {
        let (n_in, n_out) = self.layer_shape(k);
        let off = self.offsets[k];
        &mut self.params[off..off + n_in * n_out]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        let (n_in, n_out) = self.layer_shape(k);
        let off = self.offsets[k] + n_in * n_out;
        &self.params[off..off + n_out]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        let (n_in, n_out) = self.layer_shape(k);
        let off = self.offsets[k] + n_in * n_out;
        &mut self.params[off..off + n_out]
    }

    pub fn cache(&self) -> Cache {
        Cache {
            pre: self.sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            post: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn grad_cache(&self) -> GradCache {
        let hidden = |k: usize| vec![0.0; self.sizes[k + 1]];
        let nh = self.n_layers() - 1;
        GradCache {
            delta: self.sizes[..self.n_layers()].iter().map(|&n| vec![0.0; n]).collect(),
            u: (0..nh).map(hidden).collect(),
            abar: (0..self.n_layers()).map(hidden).collect(),
            ubar: (0..nh).map(hidden).collect(),
            dbar: self.sizes[..self.n_layers()].iter().map(|&n| vec![0.0; n]).collect(),
            hbar: self.sizes[..self.n_layers()].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.n_inputs(), input.len())?;
        let mut c = self.cache();
        self.forward_cached(input, &mut c);
        Ok(c.post.pop().unwrap())
    }

    /// Forward pass into `cache`; returns the output slice.
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut Cache) -> &'c [f64] {
        debug_assert_eq!(input.len(), self.n_inputs());
        cache.post[0].copy_from_slice(input);
        let n = self.n_layers();
        for k in 0..n {
            let (n_in, _) = self.layer_shape(k);
            let w = self.weight(k);
            let b = self.bias(k);
            let (head, tail) = cache.post.split_at_mut(k + 1);
            let h = &head[k];
            let a = &mut cache.pre[k];
            for (i, ai) in a.iter_mut().enumerate() {
                let row = &w[i * n_in..(i + 1) * n_in];
                *ai = b[i] + row.iter().zip(h).map(|(x, y)| x * y).sum::<f64>();
            }
            let out = &mut tail[0];
            if k + 1 < n {
                for (o, &ai) in out.iter_mut().zip(a.iter()) {
                    *o = elu(ai);
                }
            } else {
                out.copy_from_slice(a);
            }
        }
        &cache.post[n]
    }

    /// Reverse pass for an arbitrary output adjoint. Accumulates parameter
    /// gradients into `grad` and writes the input adjoint into `input_adj`.
    pub fn backward(&self, cache: &Cache, out_adj: &[f64], grad: &mut [f64], input_adj: &mut [f64]) {
        let n = self.n_layers();
        let mut adj = out_adj.to_vec();
        for k in (0..n).rev() {
            if k + 1 < n {
                for (v, &a) in adj.iter_mut().zip(&cache.pre[k]) {
                    *v *= elu_prime(a);
                }
            }
            let (n_in, n_out) = self.layer_shape(k);
            let off = self.offsets[k];
            let h = &cache.post[k];
            let mut below = vec![0.0; n_in];
            let w = self.weight(k);
            for i in 0..n_out {
                let ai = adj[i];
                if ai != 0.0 {
                    let g = &mut grad[off + i * n_in..off + (i + 1) * n_in];
                    let row = &w[i * n_in..(i + 1) * n_in];
                    for j in 0..n_in {
                        g[j] += ai * h[j];
                        below[j] += ai * row[j];
                    }
                }
                grad[off + n_in * n_out + i] += ai;
            }
            adj = below;
        }
        input_adj.copy_from_slice(&adj);
    }

    /// Jacobian of outputs w.r.t. inputs, `outputs x inputs`, by one reverse
    /// sweep per output.
    pub fn input_jacobian(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len("network input", self.n_inputs(), input.len())?;
        let mut c = self.cache();
        self.forward_cached(input, &mut c);
        let mut scratch = vec![0.0; self.n_params()];
        Ok((0..self.n_outputs())
            .map(|o| {
                let mut e = vec![0.0; self.n_outputs()];
                e[o] = 1.0;
                let mut row = vec![0.0; self.n_inputs()];
                self.backward(&c, &e, &mut scratch, &mut row);
                row
            })
            .collect())
    }

    /// `dS/dx` for a scalar network, given a forward `cache`. Keeps the
    /// intermediates in `gc` for [`Mlp::second_order_backward`].
    pub fn scalar_input_gradient<'g>(&self, cache: &Cache, gc: &'g mut GradCache) -> &'g [f64] {
        debug_assert_eq!(self.n_outputs(), 1);
        let n = self.n_layers();
        gc.delta[n - 1].copy_from_slice(self.weight(n - 1));
        for k in (0..n - 1).rev() {
            let (n_in, n_out) = self.layer_shape(k);
            {
                let (lo, hi) = gc.delta.split_at_mut(k + 1);
                let upper = &hi[0];
                let u = &mut gc.u[k];
                for i in 0..n_out {
                    u[i] = elu_prime(cache.pre[k][i]) * upper[i];
                }
                let d = &mut lo[k];
                d.iter_mut().for_each(|v| *v = 0.0);
                let w = self.weight(k);
                for i in 0..n_out {
                    let ui = u[i];
                    let row = &w[i * n_in..(i + 1) * n_in];
                    for j in 0..n_in {
                        d[j] += ui * row[j];
                    }
                }
            }
        }
        &gc.delta[0]
    }

    /// Reverse-mode sweep through both the forward pass and the
    /// input-gradient pass of a scalar network.
    ///
    /// With `s_adj = dL/dS` and `g_adj = dL/d(dS/dx)`, accumulates `dL/dtheta`
    /// into `grad` and writes `dL/dx` into `input_adj`. Requires
    /// [`Mlp::scalar_input_gradient`] to have filled `gc` for the same input.
    pub fn second_order_backward(
        &self,
        cache: &Cache,
        gc: &mut GradCache,
        s_adj: f64,
        g_adj: &[f64],
        grad: &mut [f64],
        input_adj: &mut [f64],
    ) {
        let n = self.n_layers();
        gc.dbar[0].copy_from_slice(g_adj);
        for a in gc.abar.iter_mut() {
            a.iter_mut().for_each(|v| *v = 0.0);
        }
        // input-gradient graph, from the input side upwards
        for k in 0..n - 1 {
            let (n_in, n_out) = self.layer_shape(k);
            let off = self.offsets[k];
            let w = self.weight(k);
            let (lo, hi) = gc.dbar.split_at_mut(k + 1);
            let dbar = &lo[k];
            let u = &gc.u[k];
            let ubar = &mut gc.ubar[k];
            // delta_k = W_k^T u_k
            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                let g = &mut grad[off + i * n_in..off + (i + 1) * n_in];
                let ui = u[i];
                let mut acc = 0.0;
                for j in 0..n_in {
                    g[j] += ui * dbar[j];
                    acc += row[j] * dbar[j];
                }
                ubar[i] = acc;
            }
            // u_k = elu'(a_k) * delta_{k+1}
            let upper = &gc.delta[k + 1];
            let dnext = &mut hi[0];
            let abar = &mut gc.abar[k];
            for i in 0..n_out {
                let a = cache.pre[k][i];
                dnext[i] = elu_prime(a) * ubar[i];
                abar[i] += elu_second(a) * upper[i] * ubar[i];
            }
        }
        // delta_{n-1} = W_{n-1}^T (single output row)
        {
            let off = self.offsets[n - 1];
            for (g, d) in grad[off..off + self.sizes[n - 1]].iter_mut().zip(&gc.dbar[n - 1]) {
                *g += d;
            }
        }
        // forward graph, from the output downwards
        gc.abar[n - 1][0] += s_adj;
        for k in (0..n).rev() {
            let (n_in, n_out) = self.layer_shape(k);
            let off = self.offsets[k];
            if k + 1 < n {
                let hbar = &gc.hbar[k + 1];
                let abar = &mut gc.abar[k];
                for i in 0..n_out {
                    abar[i] += elu_prime(cache.pre[k][i]) * hbar[i];
                }
            }
            let abar = &gc.abar[k];
            let h = &cache.post[k];
            let w = self.weight(k);
            let hb = &mut gc.hbar[k];
            hb.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n_out {
                let ai = abar[i];
                if ai != 0.0 {
                    let g = &mut grad[off + i * n_in..off + (i + 1) * n_in];
                    let row = &w[i * n_in..(i + 1) * n_in];
                    for j in 0..n_in {
                        g[j] += ai * h[j];
                        hb[j] += ai * row[j];
                    }
                }
                grad[off + n_in * n_out + i] += ai;
            }
        }
        input_adj.copy_from_slice(&gc.hbar[0]);
    }
}
