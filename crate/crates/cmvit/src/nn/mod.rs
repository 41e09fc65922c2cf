//! Neural building blocks: linear, grouped/depthwise convolutions,
//! normalizations, attention, FFN, patch embedding, positional table.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`] plus their hyperparameters;
//! forwards record onto a [`Tape`]. Weights initialize uniform(-b, b) with
//! b = sqrt(6 / fan_in); biases, betas and the positional table start at
//! zero, gammas at one.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{lit, numel_of, BufferId, ParamId, ParamStore, Real, Tape, Var};

/// Forward mode; batch norm consumes batch statistics in `Train` and frozen
/// running statistics in `Eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn uniform_init<T: Real>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    shape: &[usize],
) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..numel_of(shape))
        .map(|_| lit::<T>(rng.gen_range(-bound..bound)))
        .collect()
}

/// Fully connected layer computing x W^T + b.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        has_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            &[out_features, in_features],
            uniform_init(rng, in_features, &[out_features, in_features]),
        );
        let bias = has_bias.then(|| {
            store.register(
                format!("{name}.bias"),
                &[out_features],
                vec![T::zero(); out_features],
            )
        });
        Linear {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        if tape.value(x).shape.last() != Some(&self.in_features) {
            return Err(Error::shape(format!(
                "linear: input {:?} does not end in in_features {}",
                tape.value(x).shape,
                self.in_features
            )));
        }
        let w = tape.param(store, self.weight);
        let wt = tape.transpose_last2(w)?;
        let y = tape.matmul(x, wt)?;
        match self.bias {
            Some(b) => {
                let bv = tape.param(store, b);
                tape.add(y, bv)
            }
            None => Ok(y),
        }
    }
}

/// Grouped 2-D convolution; groups == in_channels gives depthwise behaviour.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        groups: usize,
        has_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(
            groups > 0 && in_channels % groups == 0 && out_channels % groups == 0,
            "conv {name}: channels must divide groups"
        );
        let icg = in_channels / groups;
        let (kh, kw) = kernel;
        let shape = [out_channels, icg, kh, kw];
        let fan_in = icg * kh * kw;
        let weight = store.register(
            format!("{name}.weight"),
            &shape,
            uniform_init(rng, fan_in, &shape),
        );
        let bias = has_bias.then(|| {
            store.register(
                format!("{name}.bias"),
                &[out_channels],
                vec![T::zero(); out_channels],
            )
        });
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            weight,
            bias,
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        tape.conv2d(x, w, b, self.stride, self.padding, self.groups)
    }
}

/// Depthwise 3x3-style convolution followed by a 1x1 pointwise projection.
#[derive(Clone, Debug)]
pub struct DepthwiseSeparable {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
}

impl DepthwiseSeparable {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let depthwise = Conv2d::new(
            store,
            &format!("{name}.depthwise"),
            in_channels,
            in_channels,
            kernel,
            1,
            padding,
            in_channels,
            true,
            rng,
        );
        let pointwise = Conv2d::new(
            store,
            &format!("{name}.pointwise"),
            in_channels,
            out_channels,
            (1, 1),
            1,
            0,
            1,
            true,
            rng,
        );
        DepthwiseSeparable {
            depthwise,
            pointwise,
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let mid = self.depthwise.forward(tape, store, x)?;
        self.pointwise.forward(tape, store, mid)
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub num_features: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, num_features: usize) -> Self {
        let gamma = store.register(
            format!("{name}.gamma"),
            &[num_features],
            vec![T::one(); num_features],
        );
        let beta = store.register(
            format!("{name}.beta"),
            &[num_features],
            vec![T::zero(); num_features],
        );
        LayerNorm {
            num_features,
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        tape.layer_norm(x, gamma, beta, lit(self.eps))
    }

    /// Normalizes across the channel axis of an [N,C,H,W] map at each
    /// spatial position.
    pub fn forward_channels<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let shape = tape.value(x).shape.clone();
        if shape.len() != 4 || shape[1] != self.num_features {
            return Err(Error::shape(format!(
                "channel layer_norm: expected [N,{},H,W], got {shape:?}",
                self.num_features
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let flat = tape.reshape(x, &[n, c, h * w])?;
        let swapped = tape.transpose_last2(flat)?; // [N, HW, C]
        let normed = self.forward(tape, store, swapped)?;
        let back = tape.transpose_last2(normed)?;
        tape.reshape(back, &[n, c, h, w])
    }
}

/// Batch normalization over [N,C,H,W] with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub num_features: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, num_features: usize) -> Self {
        let gamma = store.register(
            format!("{name}.gamma"),
            &[num_features],
            vec![T::one(); num_features],
        );
        let beta = store.register(
            format!("{name}.beta"),
            &[num_features],
            vec![T::zero(); num_features],
        );
        let running_mean = store.register_buffer(
            format!("{name}.running_mean"),
            &[num_features],
            vec![T::zero(); num_features],
        );
        let running_var = store.register_buffer(
            format!("{name}.running_var"),
            &[num_features],
            vec![T::one(); num_features],
        );
        BatchNorm2d {
            num_features,
            gamma,
            beta,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (out, mean, var) = tape.batch_norm_train(x, gamma, beta, lit(self.eps))?;
                let momentum = lit::<T>(self.momentum);
                let keep = T::one() - momentum;
                let rm = store.buffer_mut(self.running_mean);
                for (r, m) in rm.value.iter_mut().zip(&mean) {
                    *r = keep * *r + momentum * *m;
                }
                let rv = store.buffer_mut(self.running_var);
                for (r, v) in rv.value.iter_mut().zip(&var) {
                    *r = keep * *r + momentum * *v;
                }
                Ok(out)
            }
            Mode::Eval => {
                let mean = store.buffer(self.running_mean).value.clone();
                let var = store.buffer(self.running_var).value.clone();
                tape.batch_norm_eval(x, gamma, beta, &mean, &var, lit(self.eps))
            }
        }
    }
}

/// Multi-head self-attention with 1/sqrt(head_dim) score scaling.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        embed_dim: usize,
        num_heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(
            num_heads > 0 && embed_dim % num_heads == 0,
            "attention {name}: embed_dim {embed_dim} not divisible by heads {num_heads}"
        );
        let q_proj = Linear::new(store, &format!("{name}.q_proj"), embed_dim, embed_dim, true, rng);
        let k_proj = Linear::new(store, &format!("{name}.k_proj"), embed_dim, embed_dim, true, rng);
        let v_proj = Linear::new(store, &format!("{name}.v_proj"), embed_dim, embed_dim, true, rng);
        let out_proj =
            Linear::new(store, &format!("{name}.out_proj"), embed_dim, embed_dim, true, rng);
        MultiHeadAttention {
            embed_dim,
            num_heads,
            q_proj,
            k_proj,
            v_proj,
            out_proj,
        }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tokens: Var,
    ) -> Result<Var> {
        let shape = tape.value(tokens).shape.clone();
        if shape.len() != 3 || shape[2] != self.embed_dim {
            return Err(Error::shape(format!(
                "attention: expected [N,T,{}], got {shape:?}",
                self.embed_dim
            )));
        }
        let (n, t, d) = (shape[0], shape[1], shape[2]);
        let head_dim = d / self.num_heads;
        let scale = lit::<T>(1.0 / (head_dim as f64).sqrt());

        let flat = tape.reshape(tokens, &[n * t, d])?;
        let q = self.q_proj.forward(tape, store, flat)?;
        let k = self.k_proj.forward(tape, store, flat)?;
        let v = self.v_proj.forward(tape, store, flat)?;
        let q = tape.reshape(q, &[n, t, d])?;
        let k = tape.reshape(k, &[n, t, d])?;
        let v = tape.reshape(v, &[n, t, d])?;

        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let qh = tape.narrow(q, 2, h * head_dim, head_dim)?;
            let kh = tape.narrow(k, 2, h * head_dim, head_dim)?;
            let vh = tape.narrow(v, 2, h * head_dim, head_dim)?;
            let kt = tape.transpose_last2(kh)?;
            let scores = tape.bmm(qh, kt)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax(scaled, 2)?;
            heads.push(tape.bmm(attn, vh)?);
        }
        let merged = tape.concat(&heads, 2)?;
        let merged = tape.reshape(merged, &[n * t, d])?;
        let out = self.out_proj.forward(tape, store, merged)?;
        tape.reshape(out, &[n, t, d])
    }
}

/// Two fully connected layers with a ReLU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fc1 = Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng);
        FeedForward { fc1, fc2 }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        if self.fc1.out_features != self.fc2.in_features {
            return Err(Error::shape("ffn: fc1 output width differs from fc2 input"));
        }
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, store, h)
    }
}

/// Strided convolution that slices an image into non-overlapping patches and
/// flattens the grid into a row-major token sequence.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub patch: usize,
    pub embed_dim: usize,
    pub conv: Conv2d,
}

impl PatchEmbed {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        patch: usize,
        embed_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv = Conv2d::new(
            store,
            &format!("{name}.conv"),
            in_channels,
            embed_dim,
            (patch, patch),
            patch,
            0,
            1,
            true,
            rng,
        );
        PatchEmbed {
            patch,
            embed_dim,
            conv,
        }
    }

    /// [N,C,H,W] -> [N, (H/P)*(W/P), D]; H and W must be divisible by P.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let shape = tape.value(x).shape.clone();
        if shape.len() != 4 || shape[2] % self.patch != 0 || shape[3] % self.patch != 0 {
            return Err(Error::shape(format!(
                "patch_embed: extents of {shape:?} not divisible by patch {}",
                self.patch
            )));
        }
        let grid = self.conv.forward(tape, store, x)?;
        let gs = tape.value(grid).shape.clone(); // [N, D, H/P, W/P]
        let tokens = gs[2] * gs[3];
        let flat = tape.reshape(grid, &[gs[0], gs[1], tokens])?;
        tape.transpose_last2(flat) // [N, T, D]
    }
}

/// Learned positional table added to token embeddings, broadcast over batch.
#[derive(Clone, Debug)]
pub struct PositionalTable {
    pub tokens: usize,
    pub dim: usize,
    pub table: ParamId,
}

impl PositionalTable {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, tokens: usize, dim: usize) -> Self {
        let table = store.register(name, &[tokens, dim], vec![T::zero(); tokens * dim]);
        PositionalTable { tokens, dim, table }
    }

    pub fn add<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tokens: Var,
    ) -> Result<Var> {
        let shape = tape.value(tokens).shape.clone();
        if shape.len() != 3 || shape[1] != self.tokens || shape[2] != self.dim {
            return Err(Error::shape(format!(
                "positional table [{} x {}] does not match tokens {shape:?}",
                self.tokens, self.dim
            )));
        }
        let table = tape.param(store, self.table);
        tape.broadcast_add(tokens, table)
    }
}

#[cfg(test)]
mod tests;
