use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffTensor, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

const LN_EPS: f64 = 1e-5;

/// Uniform fan-in initialisation with bound `gain * sqrt(3 / fan_in)`, so the
/// variance is `gain^2 / fan_in` (gain `sqrt(2)` before a ReLU).
pub(crate) fn uniform_param(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    gain: f64,
) -> Result<ParamId> {
    let n: usize = shape.iter().product();
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    store.insert(name, DiffTensor::param(shape, values)?)
}

pub(crate) fn const_param(
    store: &mut ParamStore,
    name: String,
    shape: Vec<usize>,
    v: f64,
) -> Result<ParamId> {
    let n: usize = shape.iter().product();
    store.insert(name, DiffTensor::param(shape, vec![v; n])?)
}

pub(crate) const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundLinear {
    w: Var,
    b: Option<Var>,
}

impl Linear {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        gain: f64,
    ) -> Result<Self> {
        let w = uniform_param(
            store,
            rng,
            format!("{name}.w"),
            vec![in_dim, out_dim],
            in_dim,
            gain,
        )?;
        let b = if bias {
            Some(const_param(store, format!("{name}.b"), vec![out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub(crate) fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundLinear {
        BoundLinear {
            w: tape.param(store, self.w),
            b: self.b.map(|b| tape.param(store, b)),
        }
    }
}

impl BoundLinear {
    /// `x [n, in] -> [n, out]`.
    pub(crate) fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.w)?;
        match self.b {
            Some(b) => tape.add(y, b),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<Self> {
        let w = uniform_param(
            store,
            rng,
            format!("{name}.w"),
            vec![c_out, c_in, k, k],
            c_in * k * k,
            RELU_GAIN,
        )?;
        let b = const_param(store, format!("{name}.b"), vec![c_out], 0.0)?;
        Ok(Self { w, b })
    }

    pub(crate) fn bind(&self, tape: &mut Tape, store: &ParamStore) -> (Var, Var) {
        (tape.param(store, self.w), tape.param(store, self.b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub(crate) fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: const_param(store, format!("{name}.gamma"), vec![width], 1.0)?,
            beta: const_param(store, format!("{name}.beta"), vec![width], 0.0)?,
        })
    }

    pub(crate) fn bind(&self, tape: &mut Tape, store: &ParamStore) -> (Var, Var) {
        (tape.param(store, self.gamma), tape.param(store, self.beta))
    }
}

pub(crate) fn apply_layer_norm(tape: &mut Tape, x: Var, (g, b): (Var, Var)) -> Result<Var> {
    let n = tape.layer_norm_rows(x, LN_EPS);
    let s = tape.mul(n, g)?;
    tape.add(s, b)
}

/// Zero mean, unit variance over everything but the leading batch axis.
pub(crate) fn standardize(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let rest: usize = shape[1..].iter().product();
    let flat = tape.reshape(x, vec![shape[0], rest])?;
    let n = tape.layer_norm_rows(flat, 1e-10);
    tape.reshape(n, shape)
}

/// Mean over the two spatial axes of `[B, C, H, W]`, giving `[B, C]`.
pub(crate) fn spatial_mean(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let flat = tape.reshape(x, vec![s[0], s[1], s[2] * s[3]])?;
    let m = tape.mean_axis(flat, 2)?;
    tape.reshape(m, vec![s[0], s[1]])
}

/// Two 3x3 convolutions with a channel-attention gate and a skip path,
/// followed by 2x2 average pooling where the grid allows it.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    skip: Option<Conv>,
    gate_in: Linear,
    gate_out: Linear,
}

impl ResBlock {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        let conv1 = Conv::new(store, rng, &format!("{name}.conv1"), c_in, c_out, 3)?;
        let conv2 = Conv::new(store, rng, &format!("{name}.conv2"), c_out, c_out, 3)?;
        let skip = if c_in != c_out {
            Some(Conv::new(
                store,
                rng,
                &format!("{name}.skip"),
                c_in,
                c_out,
                1,
            )?)
        } else {
            None
        };
        let hidden = (c_out / 4).max(1);
        let gate_in = Linear::new(
            store,
            rng,
            &format!("{name}.gate_in"),
            c_out,
            hidden,
            true,
            RELU_GAIN,
        )?;
        let gate_out = Linear::new(
            store,
            rng,
            &format!("{name}.gate_out"),
            hidden,
            c_out,
            true,
            1.0,
        )?;
        Ok(Self {
            conv1,
            conv2,
            skip,
            gate_in,
            gate_out,
        })
    }

    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w1, b1) = self.conv1.bind(tape, store);
        let (w2, b2) = self.conv2.bind(tape, store);
        let h = tape.conv2d(x, w1, b1)?;
        let h = tape.relu(h);
        let h = tape.conv2d(h, w2, b2)?;

        let pooled = spatial_mean(tape, h)?;
        let gi = self.gate_in.bind(tape, store);
        let go = self.gate_out.bind(tape, store);
        let g = gi.apply(tape, pooled)?;
        let g = tape.relu(g);
        let g = go.apply(tape, g)?;
        let g = tape.sigmoid(g);
        let s = tape.shape(h).to_vec();
        let g = tape.reshape(g, vec![s[0], s[1], 1, 1])?;
        let h = tape.mul(h, g)?;

        let shortcut = match &self.skip {
            Some(c) => {
                let (w, b) = c.bind(tape, store);
                tape.conv2d(x, w, b)?
            }
            None => x,
        };
        let y = tape.add(h, shortcut)?;
        let y = tape.relu(y);
        let (ph, pw) = (s[2].min(2), s[3].min(2));
        if ph * pw > 1 {
            tape.avg_pool2d(y, ph, pw)
        } else {
            Ok(y)
        }
    }
}

/// A stem convolution followed by residual blocks of increasing width.
#[derive(Debug, Clone)]
pub struct ConvStack {
    stem: Conv,
    blocks: Vec<ResBlock>,
}

impl ConvStack {
    pub(crate) fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: &[usize],
    ) -> Result<Self> {
        let stem = Conv::new(store, rng, &format!("{name}.stem"), 1, channels[0], 3)?;
        let mut blocks = Vec::new();
        let mut c_in = channels[0];
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(ResBlock::new(
                store,
                rng,
                &format!("{name}.block{i}"),
                c_in,
                c,
            )?);
            c_in = c;
        }
        Ok(Self { stem, blocks })
    }

    /// `[B, 1, H, W] -> [B, C, h, w]`.
    pub(crate) fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = self.stem.bind(tape, store);
        let h = tape.conv2d(x, w, b)?;
        let mut h = tape.relu(h);
        for block in &self.blocks {
            h = block.forward(tape, store, h)?;
        }
        Ok(h)
    }
}

/// Sinusoidal position table `[n, width]`.
pub(crate) fn sinusoidal_positions(n: usize, width: usize) -> Vec<f64> {
    let mut pe = vec![0.0; n * width];
    for p in 0..n {
        for i in 0..width {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let a = p as f64 * freq;
            pe[p * width + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    pe
}

/// Scaled dot-product attention split over `heads` column groups.
/// `q [nq, w]`, `k, v [nk, w]`; `mask` (if any) is added to the `[nq, nk]`
/// scores of every head. Returns `[nq, w]` and the attention matrices.
pub(crate) fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<(Var, Vec<Var>)> {
    let w = tape.shape(q)[1];
    let dh = w / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * dh, (h + 1) * dh)?;
        let kh = tape.slice(k, 1, h * dh, (h + 1) * dh)?;
        let vh = tape.slice(v, 1, h * dh, (h + 1) * dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let mut scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            scores = tape.add(scores, m)?;
        }
        let attn = tape.softmax_rows(scores);
        outs.push(tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let out = if heads == 1 {
        outs[0]
    } else {
        tape.concat(&outs, 1)?
    };
    Ok((out, weights))
}
