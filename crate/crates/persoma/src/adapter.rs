//! Soft prompt adapters: the trainable networks mapping a user's history
//! embeddings `[n x d_enc]` into prompt tokens in decoder space.
//!
//! Three interchangeable architectures:
//! - MLP: each item projected independently; output length `n`.
//! - Transformer: one self-attention encoder layer over the sequence with
//!   learned positional encodings; output length `n`.
//! - Perceiver: a learned latent array cross-attends to the history across
//!   four blocks; output length is the configured latent count regardless
//!   of `n`.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Attention, FeedForward, LayerNorm, Linear, INIT_STD};
use crate::params::Params;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterKind {
    Mlp,
    Transformer,
    Perceiver,
}

impl AdapterKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(AdapterKind::Mlp),
            "transformer" => Ok(AdapterKind::Transformer),
            "perceiver" => Ok(AdapterKind::Perceiver),
            other => Err(Error::Config(format!("unknown adapter kind '{other}'"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AdapterKind::Mlp => "mlp",
            AdapterKind::Transformer => "transformer",
            AdapterKind::Perceiver => "perceiver",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub d_enc: usize,
    pub d_model: usize,
    /// MLP hidden width.
    pub hidden: usize,
    pub mlp_layers: usize,
    pub transformer_layers: usize,
    pub perceiver_layers: usize,
    pub heads: usize,
    /// Feedforward width multiplier for attention blocks.
    pub ff_mult: usize,
    /// Perceiver output token budget; ignored by the other kinds.
    pub latent_count: usize,
    /// Positional-encoding table size; histories longer than this are
    /// rejected by the sequence adapters.
    pub max_positions: usize,
    pub seed: u64,
}

impl AdapterConfig {
    pub fn new(kind: AdapterKind, d_enc: usize, d_model: usize) -> Self {
        AdapterConfig {
            kind,
            d_enc,
            d_model,
            hidden: 64,
            mlp_layers: 3,
            transformer_layers: 1,
            perceiver_layers: 4,
            heads: 4,
            ff_mult: 4,
            latent_count: 20,
            max_positions: 256,
            seed: 17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_enc == 0 || self.d_model == 0 {
            return Err(Error::Config("adapter widths must be positive".into()));
        }
        if self.kind == AdapterKind::Perceiver && self.latent_count == 0 {
            return Err(Error::Config("perceiver latent count must be >= 1".into()));
        }
        if self.kind != AdapterKind::Mlp && self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by head count {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct MlpNet {
    layers: Vec<Linear>,
}

#[derive(Debug)]
struct EncoderBlock {
    ln_attn: LayerNorm,
    attn: Attention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug)]
struct TransformerNet {
    input: Linear,
    positions: crate::params::ParamId,
    blocks: Vec<EncoderBlock>,
}

#[derive(Debug)]
struct CrossBlock {
    ln_latent: LayerNorm,
    ln_context: LayerNorm,
    attn: Attention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug)]
struct PerceiverNet {
    input: Linear,
    positions: crate::params::ParamId,
    latents: crate::params::ParamId,
    blocks: Vec<CrossBlock>,
}

#[derive(Debug)]
enum Net {
    Mlp(MlpNet),
    Transformer(TransformerNet),
    Perceiver(PerceiverNet),
}

/// A built adapter: parameter ids registered under the `adapter/` prefix.
#[derive(Debug)]
pub struct Adapter {
    pub config: AdapterConfig,
    net: Net,
    latent_warned: AtomicBool,
}

impl Adapter {
    pub fn build<T: Scalar>(config: AdapterConfig, params: &mut Params<T>) -> Result<Adapter> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = match config.kind {
            AdapterKind::Mlp => {
                let mut layers = Vec::with_capacity(config.mlp_layers);
                for i in 0..config.mlp_layers {
                    let d_in = if i == 0 { config.d_enc } else { config.hidden };
                    let d_out = if i + 1 == config.mlp_layers {
                        config.d_model
                    } else {
                        config.hidden
                    };
                    layers.push(Linear::init(
                        params,
                        &format!("adapter/mlp/layer{i}"),
                        d_in,
                        d_out,
                        &mut rng,
                    )?);
                }
                Net::Mlp(MlpNet { layers })
            }
            AdapterKind::Transformer => {
                let input = Linear::init(
                    params,
                    "adapter/transformer/input",
                    config.d_enc,
                    config.d_model,
                    &mut rng,
                )?;
                let positions = params.register(
                    "adapter/transformer/positions",
                    Tensor::randn(config.max_positions, config.d_model, INIT_STD, &mut rng),
                )?;
                let mut blocks = Vec::with_capacity(config.transformer_layers);
                for l in 0..config.transformer_layers {
                    let p = format!("adapter/transformer/block{l}");
                    blocks.push(EncoderBlock {
                        ln_attn: LayerNorm::init(params, &format!("{p}/ln_attn"), config.d_model)?,
                        attn: Attention::init(
                            params,
                            &format!("{p}/attn"),
                            config.d_model,
                            config.heads,
                            &mut rng,
                        )?,
                        ln_ff: LayerNorm::init(params, &format!("{p}/ln_ff"), config.d_model)?,
                        ff: FeedForward::init(
                            params,
                            &format!("{p}/ff"),
                            config.d_model,
                            config.ff_mult * config.d_model,
                            &mut rng,
                        )?,
                    });
                }
                Net::Transformer(TransformerNet {
                    input,
                    positions,
                    blocks,
                })
            }
            AdapterKind::Perceiver => {
                let input = Linear::init(
                    params,
                    "adapter/perceiver/input",
                    config.d_enc,
                    config.d_model,
                    &mut rng,
                )?;
                let positions = params.register(
                    "adapter/perceiver/positions",
                    Tensor::randn(config.max_positions, config.d_model, INIT_STD, &mut rng),
                )?;
                let latents = params.register(
                    "adapter/perceiver/latents",
                    Tensor::randn(config.latent_count, config.d_model, INIT_STD, &mut rng),
                )?;
                let mut blocks = Vec::with_capacity(config.perceiver_layers);
                for l in 0..config.perceiver_layers {
                    let p = format!("adapter/perceiver/block{l}");
                    blocks.push(CrossBlock {
                        ln_latent: LayerNorm::init(params, &format!("{p}/ln_latent"), config.d_model)?,
                        ln_context: LayerNorm::init(
                            params,
                            &format!("{p}/ln_context"),
                            config.d_model,
                        )?,
                        attn: Attention::init(
                            params,
                            &format!("{p}/xattn"),
                            config.d_model,
                            config.heads,
                            &mut rng,
                        )?,
                        ln_ff: LayerNorm::init(params, &format!("{p}/ln_ff"), config.d_model)?,
                        ff: FeedForward::init(
                            params,
                            &format!("{p}/ff"),
                            config.d_model,
                            config.ff_mult * config.d_model,
                            &mut rng,
                        )?,
                    });
                }
                Net::Perceiver(PerceiverNet {
                    input,
                    positions,
                    latents,
                    blocks,
                })
            }
        };
        Ok(Adapter {
            config,
            net,
            latent_warned: AtomicBool::new(false),
        })
    }

    /// Output token count for an input of length `n`.
    pub fn output_tokens(&self, n: usize) -> usize {
        match self.config.kind {
            AdapterKind::Perceiver => self.config.latent_count,
            _ => n,
        }
    }

    /// Maps history embeddings `[n x d_enc]` to soft prompt tokens
    /// `[output_tokens x d_model]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        history: NodeId,
    ) -> Result<NodeId> {
        let n = tape.value(history).rows();
        let d = tape.value(history).cols();
        if n == 0 {
            return Err(Error::contract("adapter input must have at least one row"));
        }
        if d != self.config.d_enc {
            return Err(Error::ShapeMismatch {
                op: "adapter_forward",
                lhs: vec![n, d],
                rhs: vec![n, self.config.d_enc],
            });
        }
        match &self.net {
            Net::Mlp(net) => {
                let mut x = history;
                for (i, layer) in net.layers.iter().enumerate() {
                    x = layer.forward(tape, params, x)?;
                    if i + 1 < net.layers.len() {
                        x = tape.gelu(x)?;
                    }
                }
                Ok(x)
            }
            Net::Transformer(net) => {
                let x = self.project_with_positions(tape, params, history, &net.input, net.positions)?;
                let mut x = x;
                for block in &net.blocks {
                    let normed = block.ln_attn.forward(tape, params, x)?;
                    let attended = block.attn.forward(tape, params, normed, normed, false, None)?;
                    x = tape.add(x, attended)?;
                    let normed = block.ln_ff.forward(tape, params, x)?;
                    let ff = block.ff.forward(tape, params, normed, None)?;
                    x = tape.add(x, ff)?;
                }
                Ok(x)
            }
            Net::Perceiver(net) => {
                if self.config.latent_count > n
                    && !self.latent_warned.swap(true, Ordering::Relaxed)
                {
                    log::warn!(
                        "perceiver latent count {} exceeds history length {}; output will be longer than the input",
                        self.config.latent_count,
                        n
                    );
                }
                let context =
                    self.project_with_positions(tape, params, history, &net.input, net.positions)?;
                let mut latents = tape.param(params, net.latents);
                for block in &net.blocks {
                    let q = block.ln_latent.forward(tape, params, latents)?;
                    let kv = block.ln_context.forward(tape, params, context)?;
                    let attended = block.attn.forward(tape, params, q, kv, false, None)?;
                    latents = tape.add(latents, attended)?;
                    let normed = block.ln_ff.forward(tape, params, latents)?;
                    let ff = block.ff.forward(tape, params, normed, None)?;
                    latents = tape.add(latents, ff)?;
                }
                Ok(latents)
            }
        }
    }

    fn project_with_positions<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        history: NodeId,
        input: &Linear,
        positions: crate::params::ParamId,
    ) -> Result<NodeId> {
        let n = tape.value(history).rows();
        if n > self.config.max_positions {
            return Err(Error::Contract(format!(
                "history length {} exceeds the adapter's {} positions",
                n, self.config.max_positions
            )));
        }
        let projected = input.forward(tape, params, history)?;
        let pos_table = tape.param(params, positions);
        let pos = tape.slice_rows(pos_table, 0, n)?;
        tape.add(projected, pos)
    }

    /// Exact trainable-parameter count for a configuration, computed by
    /// building the adapter into a scratch store.
    pub fn param_count(config: &AdapterConfig) -> Result<usize> {
        let mut scratch = Params::<f64>::new();
        Adapter::build(config.clone(), &mut scratch)?;
        Ok(scratch.count_values(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(kind: AdapterKind) -> AdapterConfig {
        let mut cfg = AdapterConfig::new(kind, 6, 8);
        cfg.hidden = 8;
        cfg.heads = 2;
        cfg.latent_count = 4;
        cfg.seed = 5;
        cfg
    }

    fn forward_value(cfg: &AdapterConfig, input: Tensor<f64>) -> Tensor<f64> {
        let mut ps = Params::<f64>::new();
        let adapter = Adapter::build(cfg.clone(), &mut ps).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(input);
        let out = adapter.forward(&mut tape, &ps, h).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn mlp_output_rows_follow_input_rows() {
        let cfg = toy_config(AdapterKind::Mlp);
        let out = forward_value(&cfg, Tensor::zeros(vec![1, 6]));
        assert_eq!(out.shape(), &[1, 8]);
    }

    #[test]
    fn mlp_duplicate_rows_produce_identical_outputs() {
        let cfg = toy_config(AdapterKind::Mlp);
        let row: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
        let mut data = row.clone();
        data.extend([9.0, -1.0, 2.0, 0.0, 0.5, 1.0]);
        data.extend(row);
        let out = forward_value(&cfg, Tensor::matrix(3, 6, data).unwrap());
        assert_eq!(out.row(0), out.row(2));
        assert_ne!(out.row(0), out.row(1));
    }

    #[test]
    fn mlp_zero_weights_map_everything_to_zero() {
        let cfg = toy_config(AdapterKind::Mlp);
        let mut ps = Params::<f64>::new();
        let adapter = Adapter::build(cfg, &mut ps).unwrap();
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).value.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 6, vec![1.0; 12]).unwrap());
        let out = adapter.forward(&mut tape, &ps, h).unwrap();
        // gelu(0) = 0, so zero weights and biases give a zero output.
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transformer_propagates_single_row_perturbations() {
        let cfg = toy_config(AdapterKind::Transformer);
        let base = Tensor::matrix(3, 6, vec![0.3; 18]).unwrap();
        let mut bumped = base.clone();
        bumped.data_mut()[6] += 1.0; // row 1, col 0
        let a = forward_value(&cfg, base);
        let b = forward_value(&cfg, bumped);
        let changed_other_row = (0..8).any(|j| a.get(0, j) != b.get(0, j))
            || (0..8).any(|j| a.get(2, j) != b.get(2, j));
        assert!(changed_other_row, "joint encoding must mix rows");
    }

    #[test]
    fn transformer_positions_break_permutation_equivariance() {
        let cfg = toy_config(AdapterKind::Transformer);
        let mut data = vec![0.0; 12];
        for (i, v) in data.iter_mut().enumerate() {
            *v = (i as f64) * 0.25 - 1.0;
        }
        let orig = Tensor::matrix(2, 6, data.clone()).unwrap();
        let swapped = {
            let mut d = data[6..12].to_vec();
            d.extend_from_slice(&data[..6]);
            Tensor::matrix(2, 6, d).unwrap()
        };
        let a = forward_value(&cfg, orig);
        let b = forward_value(&cfg, swapped);
        // Swapping input rows must not just swap output rows.
        assert_ne!(a.row(0), b.row(1));
    }

    #[test]
    fn transformer_rejects_histories_beyond_max_positions() {
        let mut cfg = toy_config(AdapterKind::Transformer);
        cfg.max_positions = 4;
        let mut ps = Params::<f64>::new();
        let adapter = Adapter::build(cfg, &mut ps).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(vec![5, 6]));
        assert!(adapter.forward(&mut tape, &ps, h).is_err());
    }

    #[test]
    fn perceiver_output_length_is_latent_count_for_any_n() {
        let cfg = toy_config(AdapterKind::Perceiver);
        for n in [1usize, 5, 50] {
            let out = forward_value(&cfg, Tensor::zeros(vec![n, 6]));
            assert_eq!(out.shape(), &[4, 8], "n={n}");
        }
    }

    #[test]
    fn param_count_matches_hand_count_for_mlp() {
        let mut cfg = AdapterConfig::new(AdapterKind::Mlp, 4, 4);
        cfg.hidden = 4;
        // 3 layers of (4x4 weights + 4 biases) = 3 * 20 = 60.
        assert_eq!(Adapter::param_count(&cfg).unwrap(), 60);
    }

    #[test]
    fn latent_count_is_irrelevant_to_mlp_count() {
        let mut a = AdapterConfig::new(AdapterKind::Mlp, 4, 4);
        a.hidden = 4;
        let mut b = a.clone();
        b.latent_count = 99;
        assert_eq!(
            Adapter::param_count(&a).unwrap(),
            Adapter::param_count(&b).unwrap()
        );
    }

    #[test]
    fn perceiver_count_exceeds_mlp_count_at_equal_widths() {
        let mut mlp = AdapterConfig::new(AdapterKind::Mlp, 8, 8);
        mlp.hidden = 8;
        let perceiver = AdapterConfig::new(AdapterKind::Perceiver, 8, 8);
        assert!(
            Adapter::param_count(&perceiver).unwrap() > Adapter::param_count(&mlp).unwrap()
        );
    }
}
