//! Shared network building blocks: linear layers (with optional low-rank
//! deltas), layer norm, multi-head attention, and the GELU feedforward pair.
//!
//! Blocks register their weights in a [`Params`] store at construction and
//! hold only ids, so forward passes borrow the store immutably.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, Params};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

/// Low-rank delta attached to one linear weight: `x W + s (x A) B` with
/// `s = alpha / rank`. `a` is Gaussian-initialized, `b` starts at zero so an
/// adapted layer is initially bit-identical to its base.
#[derive(Debug, Clone)]
pub struct LoraPair {
    pub a: ParamId,
    pub b: ParamId,
    pub scaling: f64,
}

impl LoraPair {
    pub fn init<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<LoraPair> {
        let a = params.register(format!("{name}/a"), Tensor::randn(d_in, rank, INIT_STD, rng))?;
        let b = params.register(format!("{name}/b"), Tensor::zeros(vec![rank, d_out]))?;
        Ok(LoraPair {
            a,
            b,
            scaling: alpha / rank as f64,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Linear> {
        let w = params.register(format!("{name}/w"), Tensor::randn(d_in, d_out, INIT_STD, rng))?;
        let b = params.register(format!("{name}/b"), Tensor::zeros(vec![1, d_out]))?;
        Ok(Linear { w, b })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        x: NodeId,
    ) -> Result<NodeId> {
        self.forward_lora(tape, params, x, None)
    }

    pub fn forward_lora<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        x: NodeId,
        lora: Option<&LoraPair>,
    ) -> Result<NodeId> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let mut h = tape.matmul(x, w)?;
        if let Some(pair) = lora {
            let a = tape.param(params, pair.a);
            let bb = tape.param(params, pair.b);
            let xa = tape.matmul(x, a)?;
            let xab = tape.matmul(xa, bb)?;
            let delta = tape.scale(xab, T::from_f64(pair.scaling))?;
            h = tape.add(h, delta)?;
        }
        tape.add_row(h, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init<T: Scalar>(params: &mut Params<T>, name: &str, d: usize) -> Result<LayerNorm> {
        let gamma = params.register(format!("{name}/gamma"), Tensor::full(vec![1, d], T::one()))?;
        let beta = params.register(format!("{name}/beta"), Tensor::zeros(vec![1, d]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        x: NodeId,
    ) -> Result<NodeId> {
        let gamma = tape.param(params, self.gamma);
        let beta = tape.param(params, self.beta);
        tape.layer_norm(x, gamma, beta)
    }
}

/// Optional low-rank deltas for one attention block.
#[derive(Debug, Clone)]
pub struct AttentionLora {
    pub q: LoraPair,
    pub k: LoraPair,
    pub v: LoraPair,
    pub o: LoraPair,
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn init<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Attention> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} not divisible by head count {heads}"
            )));
        }
        Ok(Attention {
            q: Linear::init(params, &format!("{name}/q"), d_model, d_model, rng)?,
            k: Linear::init(params, &format!("{name}/k"), d_model, d_model, rng)?,
            v: Linear::init(params, &format!("{name}/v"), d_model, d_model, rng)?,
            o: Linear::init(params, &format!("{name}/o"), d_model, d_model, rng)?,
            heads,
        })
    }

    /// Scaled dot-product attention of `q_in` rows over `kv_in` rows.
    /// Self-attention when both are the same node; `causal` masks future
    /// positions (square shapes required).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        q_in: NodeId,
        kv_in: NodeId,
        causal: bool,
        lora: Option<&AttentionLora>,
    ) -> Result<NodeId> {
        let q = self.q.forward_lora(tape, params, q_in, lora.map(|l| &l.q))?;
        let k = self.k.forward_lora(tape, params, kv_in, lora.map(|l| &l.k))?;
        let v = self.v.forward_lora(tape, params, kv_in, lora.map(|l| &l.v))?;

        let d_model = tape.value(q).cols();
        let dh = d_model / self.heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale)?;
            let attn = tape.softmax_rows(scaled, causal)?;
            head_outputs.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&head_outputs)?;
        self.o.forward_lora(tape, params, merged, lora.map(|l| &l.o))
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn init<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        name: &str,
        d_model: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Result<FeedForward> {
        Ok(FeedForward {
            up: Linear::init(params, &format!("{name}/up"), d_model, d_hidden, rng)?,
            down: Linear::init(params, &format!("{name}/down"), d_hidden, d_model, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        x: NodeId,
        lora: Option<(&LoraPair, &LoraPair)>,
    ) -> Result<NodeId> {
        let h = self.up.forward_lora(tape, params, x, lora.map(|l| l.0))?;
        let h = tape.gelu(h)?;
        self.down.forward_lora(tape, params, h, lora.map(|l| l.1))
    }
}
