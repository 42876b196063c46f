//! Toy frozen decoder-only language model.
//!
//! Realizes `Pr(Y | [P_u; T; X])`: user soft-prompt tokens, learned task
//! prompt, and embedded task text are concatenated into one sequence and run
//! through a causal pre-norm transformer. Training regimes are expressed
//! through parameter freezing: `Full` trains everything, `Frozen` trains only
//! prompts/adapters, `LoRA` additionally trains low-rank deltas on every
//! attention projection and feedforward matrix.
//!
//! Positional embeddings are applied to the text segment only (indices
//! relative to the text), never to prompt tokens. Prompt tokens are learned
//! vectors whose order information comes from their source (the task prompt
//! slot, or the adapter's own positional encodings), so a decoder pretrained
//! without a user prompt stays aligned when one is prepended later.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Attention, AttentionLora, FeedForward, LayerNorm, Linear, LoraPair, INIT_STD};
use crate::params::{ParamId, Params};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::vocab::{TokenId, Vocab, EOS, UNK};

/// Decoder training regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreezeMode {
    Full,
    Frozen,
    Lora { rank: usize, alpha: f64 },
}

impl FreezeMode {
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "full" => Ok(FreezeMode::Full),
            "frozen" => Ok(FreezeMode::Frozen),
            "lora" => Ok(FreezeMode::Lora {
                rank: 4,
                alpha: 4.0,
            }),
            other => {
                // lora:<rank> or lora:<rank>:<alpha>
                if let Some(rest) = other.strip_prefix("lora:") {
                    let mut parts = rest.split(':');
                    let rank: usize = parts
                        .next()
                        .unwrap_or_default()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad lora rank in '{s}'")))?;
                    let alpha: f64 = match parts.next() {
                        Some(a) => a
                            .parse()
                            .map_err(|_| Error::Config(format!("bad lora alpha in '{s}'")))?,
                        None => rank as f64,
                    };
                    if rank == 0 {
                        return Err(Error::Config("lora rank must be >= 1".into()));
                    }
                    Ok(FreezeMode::Lora { rank, alpha })
                } else {
                    Err(Error::Config(format!("unknown freeze mode '{s}'")))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            FreezeMode::Full => "full".into(),
            FreezeMode::Frozen => "frozen".into(),
            FreezeMode::Lora { rank, alpha } => format!("lora:{rank}:{alpha}"),
        }
    }
}

/// Order of the assembled prompt segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptOrder {
    /// `[P_u; T; X]`
    UserTaskText,
    /// `[T; P_u; X]`
    TaskUserText,
}

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub task_tokens: usize,
    pub ff_mult: usize,
    pub prompt_order: PromptOrder,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_model: 64,
            layers: 2,
            heads: 4,
            max_seq_len: 512,
            task_tokens: 20,
            ff_mult: 4,
            prompt_order: PromptOrder::UserTaskText,
            seed: 23,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by head count {}",
                self.d_model, self.heads
            )));
        }
        if self.task_tokens == 0 {
            return Err(Error::Config("task prompt must have at least one token".into()));
        }
        Ok(())
    }
}

/// Segment spans within an assembled sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    pub user: Range<usize>,
    pub task: Range<usize>,
    pub text: Range<usize>,
}

impl PromptLayout {
    pub fn total(&self) -> usize {
        self.text.end
    }

    pub fn user_tokens(&self) -> usize {
        self.user.len()
    }

    pub fn task_tokens(&self) -> usize {
        self.task.len()
    }

    pub fn text_tokens(&self) -> usize {
        self.text.len()
    }
}

struct DecoderLayer {
    ln_attn: LayerNorm,
    attn: Attention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

struct LayerLora {
    attn: AttentionLora,
    ff_up: LoraPair,
    ff_down: LoraPair,
}

/// One training example's inputs, already on the tape / tokenized.
pub struct ExampleInput<'a> {
    pub user_prompt: Option<NodeId>,
    pub text: &'a [TokenId],
    pub target: &'a [TokenId],
}

pub struct Decoder {
    pub config: DecoderConfig,
    vocab: Vocab,
    embed: ParamId,
    positions: ParamId,
    layers: Vec<DecoderLayer>,
    ln_final: LayerNorm,
    output: Linear,
    task_prompt: ParamId,
    lora: Option<Vec<LayerLora>>,
}

impl Decoder {
    /// Registers all base weights (`decoder/`) and the task prompt
    /// (`task_prompt/`). The vocabulary must cover the target template,
    /// every genre name, and the task instruction.
    pub fn build<T: Scalar>(
        config: DecoderConfig,
        vocab: Vocab,
        params: &mut Params<T>,
    ) -> Result<Decoder> {
        config.validate()?;
        validate_vocab(&vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let v = vocab.len();
        let d = config.d_model;

        let embed = params.register("decoder/embed", Tensor::randn(v, d, INIT_STD, &mut rng))?;
        let positions = params.register(
            "decoder/positions",
            Tensor::randn(config.max_seq_len, d, INIT_STD, &mut rng),
        )?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("decoder/layer{l}");
            layers.push(DecoderLayer {
                ln_attn: LayerNorm::init(params, &format!("{p}/ln_attn"), d)?,
                attn: Attention::init(params, &format!("{p}/attn"), d, config.heads, &mut rng)?,
                ln_ff: LayerNorm::init(params, &format!("{p}/ln_ff"), d)?,
                ff: FeedForward::init(params, &format!("{p}/ff"), d, config.ff_mult * d, &mut rng)?,
            });
        }
        let ln_final = LayerNorm::init(params, "decoder/ln_final", d)?;
        let output = Linear::init(params, "decoder/output", d, v, &mut rng)?;
        let task_prompt = params.register(
            "task_prompt/tokens",
            Tensor::randn(config.task_tokens, d, INIT_STD, &mut rng),
        )?;

        Ok(Decoder {
            config,
            vocab,
            embed,
            positions,
            layers,
            ln_final,
            output,
            task_prompt,
            lora: None,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn task_prompt_id(&self) -> ParamId {
        self.task_prompt
    }

    pub fn lora_applied(&self) -> bool {
        self.lora.is_some()
    }

    /// Attaches rank-`rank` low-rank deltas (`lora/`) to every attention
    /// projection and both feedforward matrices of every layer. The `b`
    /// factors start at zero, so outputs are bit-identical to the base model
    /// until training moves them.
    pub fn apply_lora<T: Scalar>(
        &mut self,
        params: &mut Params<T>,
        rank: usize,
        alpha: f64,
    ) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::contract("lora deltas already applied to this decoder"));
        }
        if rank == 0 {
            return Err(Error::Config("lora rank must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x10ea);
        let d = self.config.d_model;
        let ff = self.config.ff_mult * d;
        let mut lora_layers = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let p = format!("lora/layer{l}");
            lora_layers.push(LayerLora {
                attn: AttentionLora {
                    q: LoraPair::init(params, &format!("{p}/attn/q"), d, d, rank, alpha, &mut rng)?,
                    k: LoraPair::init(params, &format!("{p}/attn/k"), d, d, rank, alpha, &mut rng)?,
                    v: LoraPair::init(params, &format!("{p}/attn/v"), d, d, rank, alpha, &mut rng)?,
                    o: LoraPair::init(params, &format!("{p}/attn/o"), d, d, rank, alpha, &mut rng)?,
                },
                ff_up: LoraPair::init(params, &format!("{p}/ff/up"), d, ff, rank, alpha, &mut rng)?,
                ff_down: LoraPair::init(params, &format!("{p}/ff/down"), ff, d, rank, alpha, &mut rng)?,
            });
        }
        self.lora = Some(lora_layers);
        Ok(())
    }

    /// Sets parameter trainability to realize the regime. `Lora` requires
    /// [`Decoder::apply_lora`] to have been called.
    pub fn apply_freeze_mode<T: Scalar>(
        &self,
        params: &mut Params<T>,
        mode: FreezeMode,
    ) -> Result<()> {
        match mode {
            FreezeMode::Full => {
                params.set_trainable_by_prefix("decoder/", true);
                params.set_trainable_by_prefix("task_prompt/", true);
                params.set_trainable_by_prefix("lora/", false);
            }
            FreezeMode::Frozen => {
                params.set_trainable_by_prefix("decoder/", false);
                params.set_trainable_by_prefix("task_prompt/", true);
                params.set_trainable_by_prefix("lora/", false);
            }
            FreezeMode::Lora { .. } => {
                if self.lora.is_none() {
                    return Err(Error::contract(
                        "freeze mode lora requires apply_lora before training",
                    ));
                }
                params.set_trainable_by_prefix("decoder/", false);
                params.set_trainable_by_prefix("task_prompt/", true);
                params.set_trainable_by_prefix("lora/", true);
            }
        }
        Ok(())
    }

    /// Embeds text tokens and adds text-relative positional rows starting at
    /// `pos_offset`.
    fn embed_text<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        tokens: &[TokenId],
        pos_offset: usize,
    ) -> Result<NodeId> {
        if pos_offset + tokens.len() > self.config.max_seq_len {
            return Err(Error::OutOfContextLength {
                len: pos_offset + tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        let table = tape.param(params, self.embed);
        let emb = tape.embed_rows(table, tokens)?;
        let pos_table = tape.param(params, self.positions);
        let pos = tape.slice_rows(pos_table, pos_offset, tokens.len())?;
        tape.add(emb, pos)
    }

    /// Concatenates user prompt, task prompt, and embedded text per the
    /// configured order, rejecting sequences beyond the context length.
    pub fn assemble_prompt<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        user_prompt: Option<NodeId>,
        text: &[TokenId],
    ) -> Result<(NodeId, PromptLayout)> {
        if text.is_empty() {
            return Err(Error::contract("assemble_prompt requires task text"));
        }
        let user_len = user_prompt.map_or(0, |p| tape.value(p).rows());
        let task_len = self.config.task_tokens;
        let total = user_len + task_len + text.len();
        if total > self.config.max_seq_len {
            return Err(Error::OutOfContextLength {
                len: total,
                max: self.config.max_seq_len,
            });
        }
        if let Some(p) = user_prompt {
            let width = tape.value(p).cols();
            if width != self.config.d_model {
                return Err(Error::ShapeMismatch {
                    op: "assemble_prompt",
                    lhs: vec![user_len, width],
                    rhs: vec![user_len, self.config.d_model],
                });
            }
        }

        let task = tape.param(params, self.task_prompt);
        let x_emb = self.embed_text(tape, params, text, 0)?;

        let (parts, layout): (Vec<NodeId>, PromptLayout) = match (self.config.prompt_order, user_prompt)
        {
            (PromptOrder::UserTaskText, Some(p)) => (
                vec![p, task, x_emb],
                PromptLayout {
                    user: 0..user_len,
                    task: user_len..user_len + task_len,
                    text: user_len + task_len..total,
                },
            ),
            (PromptOrder::TaskUserText, Some(p)) => (
                vec![task, p, x_emb],
                PromptLayout {
                    task: 0..task_len,
                    user: task_len..task_len + user_len,
                    text: task_len + user_len..total,
                },
            ),
            (_, None) => (
                vec![task, x_emb],
                PromptLayout {
                    user: 0..0,
                    task: 0..task_len,
                    text: task_len..total,
                },
            ),
        };
        let seq = tape.concat_rows(&parts)?;
        Ok((seq, layout))
    }

    /// Causal transformer forward over an assembled embedding sequence.
    pub fn forward_logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        seq: NodeId,
    ) -> Result<NodeId> {
        let mut x = seq;
        for (i, layer) in self.layers.iter().enumerate() {
            let lora = self.lora.as_ref().map(|ls| &ls[i]);
            let normed = layer.ln_attn.forward(tape, params, x)?;
            let attended =
                layer
                    .attn
                    .forward(tape, params, normed, normed, true, lora.map(|l| &l.attn))?;
            x = tape.add(x, attended)?;
            let normed = layer.ln_ff.forward(tape, params, x)?;
            let ff = layer
                .ff
                .forward(tape, params, normed, lora.map(|l| (&l.ff_up, &l.ff_down)))?;
            x = tape.add(x, ff)?;
        }
        let x = self.ln_final.forward(tape, params, x)?;
        self.output.forward(tape, params, x)
    }

    /// Teacher-forced cross-entropy (sum) over target tokens plus the
    /// closing `<eos>`; returns the loss node and the number of scored
    /// positions. Prompt and text positions never enter the loss.
    pub fn example_loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        example: &ExampleInput<'_>,
    ) -> Result<(NodeId, usize)> {
        if example.target.is_empty() {
            return Err(Error::contract("training target must be non-empty"));
        }
        let (prompt, layout) =
            self.assemble_prompt(tape, params, example.user_prompt, example.text)?;
        let y_emb = self.embed_text(tape, params, example.target, example.text.len())?;
        let seq = tape.concat_rows(&[prompt, y_emb])?;
        let total = tape.value(seq).rows();
        if total > self.config.max_seq_len {
            return Err(Error::OutOfContextLength {
                len: total,
                max: self.config.max_seq_len,
            });
        }
        let logits = self.forward_logits(tape, params, seq)?;
        let scored = tape.slice_rows(logits, layout.total() - 1, example.target.len() + 1)?;
        let mut targets: Vec<usize> = example.target.to_vec();
        targets.push(EOS);
        let loss = tape.softmax_cross_entropy(scored, &targets, crate::ops::Reduction::Sum)?;
        Ok((loss, targets.len()))
    }

    /// Mean token-level loss over a batch.
    pub fn training_loss<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Params<T>,
        batch: &[ExampleInput<'_>],
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::contract("training batch must be non-empty"));
        }
        let mut sums = Vec::with_capacity(batch.len());
        let mut tokens = 0usize;
        for example in batch {
            let (loss, count) = self.example_loss(tape, params, example)?;
            sums.push(loss);
            tokens += count;
        }
        let total = tape.sum_scalars(&sums)?;
        tape.scale(total, T::one() / T::from_f64(tokens as f64))
    }

    /// Argmax decoding until `<eos>` or the token budget; ties break toward
    /// the lowest token id. Returns the detokenized string.
    pub fn greedy_decode<T: Scalar>(
        &self,
        params: &Params<T>,
        user_prompt: Option<&Tensor<T>>,
        text: &[TokenId],
        max_new_tokens: usize,
    ) -> Result<String> {
        let mut generated: Vec<TokenId> = Vec::new();
        for _ in 0..max_new_tokens {
            let mut tape = Tape::new();
            let p_node = user_prompt.map(|p| tape.constant(p.clone()));
            let (prompt, layout) = self.assemble_prompt(&mut tape, params, p_node, text)?;
            let seq = if generated.is_empty() {
                prompt
            } else {
                if layout.total() + generated.len() > self.config.max_seq_len {
                    break;
                }
                let g = self.embed_text(&mut tape, params, &generated, text.len())?;
                tape.concat_rows(&[prompt, g])?
            };
            let logits = self.forward_logits(&mut tape, params, seq)?;
            let values = tape.value(logits);
            let last = values.row(values.rows() - 1);
            let mut best = 0usize;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            generated.push(best);
        }
        Ok(self.vocab.detokenize(&generated))
    }
}

/// The closed vocabulary must cover everything the task can produce or
/// consume.
fn validate_vocab(vocab: &Vocab) -> Result<()> {
    let mut required: Vec<String> = ["Liked", "Not", "Genres", "None", ":", ",", "."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    required.extend(crate::genres::ALL_GENRES.iter().map(|g| g.name().to_string()));
    for word in required {
        if vocab.id_of(&word).is_none() {
            return Err(Error::Config(format!(
                "decoder vocabulary is missing required token '{word}'"
            )));
        }
    }
    for id in vocab.tokenize(crate::vocab::INSTRUCTION) {
        if id == UNK {
            return Err(Error::Config(
                "decoder vocabulary does not cover the task instruction".into(),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Adam;
    use crate::vocab::INSTRUCTION;

    fn small_config() -> DecoderConfig {
        DecoderConfig {
            d_model: 32,
            layers: 2,
            heads: 4,
            max_seq_len: 128,
            task_tokens: 20,
            ff_mult: 2,
            prompt_order: PromptOrder::UserTaskText,
            seed: 29,
        }
    }

    fn build(config: DecoderConfig) -> (Decoder, Params<f64>) {
        let mut ps = Params::new();
        let dec = Decoder::build(config, Vocab::standard(), &mut ps).unwrap();
        (dec, ps)
    }

    #[test]
    fn assemble_spans_match_segment_lengths() {
        let (dec, ps) = build(small_config());
        let mut tape = Tape::new();
        let p_u = tape.constant(Tensor::zeros(vec![20, 32]));
        let x: Vec<TokenId> = (4..14).collect();
        let (seq, layout) = dec.assemble_prompt(&mut tape, &ps, Some(p_u), &x).unwrap();
        assert_eq!(tape.value(seq).rows(), 50);
        assert_eq!(layout.user, 0..20);
        assert_eq!(layout.task, 20..40);
        assert_eq!(layout.text, 40..50);

        let (seq2, layout2) = dec.assemble_prompt(&mut tape, &ps, None, &x).unwrap();
        assert_eq!(tape.value(seq2).rows(), 30);
        assert_eq!(layout2.user.len(), 0);
    }

    #[test]
    fn overflow_errors_with_out_of_context_length() {
        let (dec, ps) = build(small_config());
        let mut tape = Tape::new();
        let x: Vec<TokenId> = vec![4; 200];
        let err = dec.assemble_prompt(&mut tape, &ps, None, &x).unwrap_err();
        assert!(err.to_string().contains("out of context length"), "{err}");
    }

    #[test]
    fn logits_shape_is_seq_by_vocab() {
        let (dec, ps) = build(small_config());
        let mut tape = Tape::new();
        let x = dec.vocab().tokenize(INSTRUCTION);
        let (seq, _) = dec.assemble_prompt(&mut tape, &ps, None, &x).unwrap();
        let logits = dec.forward_logits(&mut tape, &ps, seq).unwrap();
        assert_eq!(
            tape.value(logits).shape(),
            &[20 + x.len(), dec.vocab().len()]
        );
    }

    #[test]
    fn causality_logits_ignore_future_tokens() {
        let (dec, ps) = build(small_config());
        let x1 = dec.vocab().tokenize("predict genre preferences : Drama");
        let x2 = dec.vocab().tokenize("predict genre preferences : Comedy");
        let run = |x: &[TokenId]| {
            let mut tape = Tape::new();
            let (seq, _) = dec.assemble_prompt(&mut tape, &ps, None, x).unwrap();
            let logits = dec.forward_logits(&mut tape, &ps, seq).unwrap();
            tape.value(logits).clone()
        };
        let a = run(&x1);
        let b = run(&x2);
        // Positions before the differing token must agree exactly.
        let cutoff = 20 + 4;
        for r in 0..cutoff {
            assert_eq!(a.row(r), b.row(r), "row {r}");
        }
        assert_ne!(a.row(cutoff), b.row(cutoff));
    }

    #[test]
    fn lora_is_identity_at_init_and_errors_on_reapply() {
        let (mut dec, mut ps) = build(small_config());
        let x = dec.vocab().tokenize(INSTRUCTION);
        let before = {
            let mut tape = Tape::new();
            let (seq, _) = dec.assemble_prompt(&mut tape, &ps, None, &x).unwrap();
            let logits = dec.forward_logits(&mut tape, &ps, seq).unwrap();
            tape.value(logits).clone()
        };
        dec.apply_lora(&mut ps, 4, 4.0).unwrap();
        let after = {
            let mut tape = Tape::new();
            let (seq, _) = dec.assemble_prompt(&mut tape, &ps, None, &x).unwrap();
            let logits = dec.forward_logits(&mut tape, &ps, seq).unwrap();
            tape.value(logits).clone()
        };
        assert_eq!(before, after, "zero-initialized deltas must be a no-op");
        assert!(dec.apply_lora(&mut ps, 4, 4.0).is_err());
    }

    #[test]
    fn lora_adds_rank_times_dims_per_attention_matrix() {
        let mut cfg = small_config();
        cfg.d_model = 64;
        let (mut dec, mut ps) = build(cfg);
        let before = ps.count_values(false);
        dec.apply_lora(&mut ps, 4, 4.0).unwrap();
        let added = ps.count_values(false) - before;
        // Per layer: 4 attention matrices at 4*(64+64) = 512 each, plus the
        // two feedforward matrices at 4*(64+128) and 4*(128+64).
        let per_layer = 4 * 512 + 2 * 4 * (64 + 128);
        assert_eq!(added, dec.config.layers * per_layer);
        let q_a = ps.lookup("lora/layer0/attn/q/a").unwrap();
        let q_b = ps.lookup("lora/layer0/attn/q/b").unwrap();
        assert_eq!(
            ps.value(q_a).numel() + ps.value(q_b).numel(),
            512,
            "one rank-4 attention delta"
        );
    }

    #[test]
    fn freeze_modes_set_expected_trainability() {
        let (mut dec, mut ps) = build(small_config());
        assert!(dec
            .apply_freeze_mode(&mut ps, FreezeMode::Lora { rank: 4, alpha: 4.0 })
            .is_err());
        dec.apply_lora(&mut ps, 4, 4.0).unwrap();
        dec.apply_freeze_mode(&mut ps, FreezeMode::Lora { rank: 4, alpha: 4.0 })
            .unwrap();
        for (_, p) in ps.iter() {
            let expect = !p.name.starts_with("decoder/");
            assert_eq!(p.trainable, expect, "{}", p.name);
        }
        dec.apply_freeze_mode(&mut ps, FreezeMode::Full).unwrap();
        assert!(ps.iter().all(|(_, p)| {
            if p.name.starts_with("lora/") {
                !p.trainable
            } else {
                p.trainable
            }
        }));
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        let (dec, mut ps) = build(small_config());
        for id in ps.ids().collect::<Vec<_>>() {
            if !ps.name(id).contains("gamma") {
                ps.get_mut(id).value.data_mut().fill(0.0);
            }
        }
        let x = dec.vocab().tokenize(INSTRUCTION);
        let y = vec![dec.vocab().lookup("Drama")];
        let mut tape = Tape::new();
        let loss = dec
            .training_loss(
                &mut tape,
                &ps,
                &[ExampleInput {
                    user_prompt: None,
                    text: &x,
                    target: &y,
                }],
            )
            .unwrap();
        let expected = (dec.vocab().len() as f64).ln();
        assert!((tape.value(loss).item().unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn empty_target_is_a_contract_error() {
        let (dec, ps) = build(small_config());
        let x = dec.vocab().tokenize(INSTRUCTION);
        let mut tape = Tape::new();
        let err = dec
            .example_loss(
                &mut tape,
                &ps,
                &ExampleInput {
                    user_prompt: None,
                    text: &x,
                    target: &[],
                },
            )
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn eos_biased_decoder_emits_empty_string() {
        let (dec, mut ps) = build(small_config());
        let bias = ps.lookup("decoder/output/b").unwrap();
        ps.get_mut(bias).value.data_mut()[EOS] = 1000.0;
        let x = dec.vocab().tokenize(INSTRUCTION);
        let out = dec.greedy_decode(&ps, None, &x, 16).unwrap();
        assert_eq!(out, "");
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let (dec, ps) = build(small_config());
        let x = dec.vocab().tokenize(INSTRUCTION);
        let a = dec.greedy_decode(&ps, None, &x, 8).unwrap();
        let b = dec.greedy_decode(&ps, None, &x, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overfit_single_example_reaches_tiny_loss_and_exact_decode() {
        let (dec, mut ps) = build(small_config());
        dec.apply_freeze_mode(&mut ps, FreezeMode::Full).unwrap();
        let x = dec.vocab().tokenize(INSTRUCTION);
        let target_text = "Liked Genres: Drama. Not Liked Genres: War";
        let y = dec.vocab().tokenize(target_text);
        let mut adam = Adam::new(0.003);
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let mut tape = Tape::new();
            let loss = dec
                .training_loss(
                    &mut tape,
                    &ps,
                    &[ExampleInput {
                        user_prompt: None,
                        text: &x,
                        target: &y,
                    }],
                )
                .unwrap();
            last = tape.value(loss).item().unwrap();
            tape.backward(loss, &mut ps).unwrap();
            adam.step_trainable(&mut ps).unwrap();
        }
        assert!(last < 0.01, "final loss {last}");
        let decoded = dec.greedy_decode(&ps, None, &x, 24).unwrap();
        assert_eq!(decoded, target_text);
    }
}
