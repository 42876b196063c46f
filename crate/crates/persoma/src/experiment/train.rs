//! Seeded training with early stopping, the two-phase frozen-LM protocol,
//! and checkpoint-based evaluation.
//!
//! Phase A (runs whenever the freeze mode is not `Full`): the decoder and
//! task prompt train on the task without personalization, manufacturing the
//! pretrained competence the frozen regime presumes; the result can be
//! cached and shared across runs through `pretrained_decoder`. Phase B
//! trains the adapter (and task prompt, and LoRA deltas when configured)
//! against the configured freeze mode.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{Adapter, AdapterConfig};
use crate::checkpoint;
use crate::data::{
    build_examples, generate_synthetic, ingest_movielens, split_users, Dataset, Example,
    ExampleOptions, InputPath, LabelThresholds, SyntheticSpec,
};
use crate::decoder::{Decoder, DecoderConfig, ExampleInput, FreezeMode};
use crate::encoder::{EmbeddingProvider, EncoderConfig, HistoryEncoder};
use crate::error::{Error, Result};
use crate::experiment::{DatasetSource, ExperimentConfig, Method};
use crate::metrics::{
    token_accounting, weighted_prf, MetricReport, PredictionRecord, TokenCounts, TokenStats,
};
use crate::optim::Adam;
use crate::params::Params;
use crate::sampling::{counting_baseline, derive_seed};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vocab::{TokenId, Vocab, INSTRUCTION};

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_snapshot: String,
    /// (step, validation weighted F1) at every evaluation point.
    pub f1_trace: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_val_f1: f64,
    pub checkpoint: Option<PathBuf>,
    pub test_report: MetricReport,
    pub wall_clock_secs: f64,
    pub total_params: usize,
    pub trainable_params: usize,
}

struct PreparedExample {
    example: Example<f64>,
    x_tokens: Vec<TokenId>,
    y_tokens: Vec<TokenId>,
}

struct Model {
    decoder: Decoder,
    adapter: Option<Adapter>,
    params: Params<f64>,
}

pub(crate) fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Synthetic {
            users,
            movies,
            ratings_per_user,
            seed,
            noise,
        } => {
            let mut spec = SyntheticSpec::new(*users, *movies, *ratings_per_user, *seed);
            spec.rating_noise = *noise;
            generate_synthetic(&spec)
        }
        DatasetSource::Ingested {
            ratings,
            movies,
            descriptions,
        } => {
            let (dataset, report) = ingest_movielens(ratings, movies, descriptions.as_deref())?;
            log::info!(
                "ingested {} users / {} movies ({} ratings retained, {} movies pruned, {} without descriptions)",
                report.users,
                report.retained_movies,
                report.retained_ratings,
                report.pruned_movies,
                report.missing_descriptions
            );
            Ok(dataset)
        }
    }
}

fn build_encoder(config: &ExperimentConfig) -> Result<HistoryEncoder<f64>> {
    let enc_config = EncoderConfig {
        d_title: config.d_title,
        d_desc: config.d_desc,
        d_rating: config.d_rating,
        seed: config.encoder_seed,
    };
    Ok(match &config.external_embeddings {
        Some(path) => {
            HistoryEncoder::with_external(enc_config, EmbeddingProvider::load(path)?)
        }
        None => HistoryEncoder::new(enc_config),
    })
}

fn prepare_split(
    config: &ExperimentConfig,
    dataset: &Dataset,
    encoder: &HistoryEncoder<f64>,
    vocab: &Vocab,
    users: &[String],
) -> Result<Vec<PreparedExample>> {
    let path = match config.method {
        Method::Adapter(_) => InputPath::Embeddings,
        Method::TextBaseline | Method::Counting => InputPath::Text,
    };
    let strategy = config.strategy();
    let opts = ExampleOptions {
        strategy: &strategy,
        history_size: config.history_size,
        format: config.format,
        path,
        thresholds: LabelThresholds {
            min_support: config.min_support,
            like_threshold: config.like_threshold,
            dislike_threshold: config.dislike_threshold,
        },
        encoder,
    };
    let examples = build_examples(dataset, users, &opts)?;
    let instruction = vocab.tokenize(INSTRUCTION);
    Ok(examples
        .into_iter()
        .map(|example| {
            let x_tokens = match config.method {
                Method::Adapter(_) => instruction.clone(),
                Method::TextBaseline | Method::Counting => {
                    let text = example
                        .text_history
                        .as_deref()
                        .expect("text path produces a text history");
                    vocab.tokenize(&format!("{text}; {INSTRUCTION}"))
                }
            };
            let y_tokens = vocab.tokenize(&example.target);
            PreparedExample {
                example,
                x_tokens,
                y_tokens,
            }
        })
        .collect())
}

fn build_model(config: &ExperimentConfig, d_enc: usize) -> Result<Model> {
    let decoder_config = DecoderConfig {
        d_model: config.d_model,
        layers: config.decoder_layers,
        heads: config.decoder_heads,
        max_seq_len: config.max_seq_len,
        task_tokens: config.task_tokens,
        ff_mult: 4,
        prompt_order: config.prompt_order,
        seed: derive_seed(config.seed, "decoder-init"),
    };
    let mut params = Params::new();
    let mut decoder = Decoder::build(decoder_config, Vocab::standard(), &mut params)?;
    if let FreezeMode::Lora { rank, alpha } = config.freeze {
        decoder.apply_lora(&mut params, rank, alpha)?;
    }
    let adapter = match config.method {
        Method::Adapter(kind) => {
            let mut adapter_config = AdapterConfig::new(kind, d_enc, config.d_model);
            adapter_config.hidden = config.adapter_hidden;
            adapter_config.heads = config.decoder_heads;
            adapter_config.latent_count = config.latent_count;
            adapter_config.max_positions = config.history_size.max(200).max(config.latent_count);
            adapter_config.seed = derive_seed(config.seed, "adapter-init");
            Some(Adapter::build(adapter_config, &mut params)?)
        }
        _ => None,
    };
    Ok(Model {
        decoder,
        adapter,
        params,
    })
}

/// Fails fast when any example cannot fit the context window (the text
/// baseline at large history sizes).
fn check_context_budget(model: &Model, splits: [&[PreparedExample]; 3]) -> Result<()> {
    for split in splits {
        for ex in split {
            let prompt_tokens = match &model.adapter {
                Some(adapter) => adapter.output_tokens(ex.example.items.len()),
                None => 0,
            };
            let len = prompt_tokens
                + model.decoder.config.task_tokens
                + ex.x_tokens.len()
                + ex.y_tokens.len()
                + 1;
            if len > model.decoder.config.max_seq_len {
                return Err(Error::OutOfContextLength {
                    len,
                    max: model.decoder.config.max_seq_len,
                });
            }
        }
    }
    Ok(())
}

/// Computes the user soft prompt for one example on a throwaway tape.
fn user_prompt_value(model: &Model, ex: &PreparedExample) -> Result<Option<Tensor<f64>>> {
    match &model.adapter {
        Some(adapter) => {
            let mut tape = Tape::new();
            let h = tape.constant(
                ex.example
                    .embeddings
                    .clone()
                    .expect("embedding path examples carry embeddings"),
            );
            let out = adapter.forward(&mut tape, &model.params, h)?;
            Ok(Some(tape.value(out).clone()))
        }
        None => Ok(None),
    }
}

fn decode_example(model: &Model, ex: &PreparedExample, max_new: usize) -> Result<String> {
    let p_u = user_prompt_value(model, ex)?;
    model
        .decoder
        .greedy_decode(&model.params, p_u.as_ref(), &ex.x_tokens, max_new)
}

fn example_token_counts(config: &ExperimentConfig, ex: &PreparedExample) -> TokenCounts {
    let adapter = match config.method {
        Method::Adapter(kind) => Some((kind, config.latent_count)),
        _ => None,
    };
    let task_tokens = match config.method {
        Method::Counting => 0,
        _ => config.task_tokens,
    };
    token_accounting(adapter, ex.example.items.len(), task_tokens, ex.x_tokens.len())
}

fn evaluate_prepared(
    config: &ExperimentConfig,
    model: Option<&Model>,
    examples: &[PreparedExample],
) -> Result<MetricReport> {
    if examples.is_empty() {
        return Err(Error::contract("evaluation split is empty"));
    }
    let mut records = Vec::with_capacity(examples.len());
    let mut totals = (0usize, 0usize, 0usize, 0usize);
    for ex in examples {
        let raw = match config.method {
            Method::Counting => {
                let labels = counting_baseline(&ex.example.items)?;
                crate::data::format_target(&labels)?
            }
            _ => {
                let model = model.expect("neural methods carry a model");
                decode_example(model, ex, config.max_new_tokens)?
            }
        };
        let counts = example_token_counts(config, ex);
        totals.0 += counts.prompt_embedding_tokens;
        totals.1 += counts.task_tokens;
        totals.2 += counts.text_tokens;
        totals.3 += counts.total();
        records.push(PredictionRecord::new(
            ex.example.user_id.clone(),
            raw,
            ex.example.labels.clone(),
        ));
    }
    let mut report = weighted_prf(&records);
    let n = examples.len() as f64;
    report.token_stats = Some(TokenStats {
        mean_prompt_embedding_tokens: totals.0 as f64 / n,
        mean_task_tokens: totals.1 as f64 / n,
        mean_text_tokens: totals.2 as f64 / n,
        mean_total: totals.3 as f64 / n,
    });
    Ok(report)
}

/// Mean training-style loss over a fixed probe set (no decode); used for
/// the phase-A plateau rule.
fn probe_loss(model: &Model, examples: &[PreparedExample], personalized: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let mut inputs = Vec::with_capacity(examples.len());
    for ex in examples {
        let user_prompt = if personalized {
            match &model.adapter {
                Some(adapter) => {
                    let h = tape.constant(ex.example.embeddings.clone().expect("embeddings"));
                    Some(adapter.forward(&mut tape, &model.params, h)?)
                }
                None => None,
            }
        } else {
            None
        };
        inputs.push(ExampleInput {
            user_prompt,
            text: &ex.x_tokens,
            target: &ex.y_tokens,
        });
    }
    let loss = model.decoder.training_loss(&mut tape, &model.params, &inputs)?;
    tape.value(loss).item()
}

struct BatchSchedule {
    indices: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl BatchSchedule {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchSchedule {
            indices: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            &format!("epoch-{}", self.epoch),
        ));
        self.indices.shuffle(&mut rng);
        self.cursor = 0;
        self.epoch += 1;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size {
            if self.cursor >= self.indices.len() {
                self.reshuffle();
            }
            batch.push(self.indices[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

fn train_step(
    model: &mut Model,
    adam: &mut Adam<f64>,
    examples: &[PreparedExample],
    batch: &[usize],
    personalized: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut inputs = Vec::with_capacity(batch.len());
    for &idx in batch {
        let ex = &examples[idx];
        let user_prompt = if personalized {
            match &model.adapter {
                Some(adapter) => {
                    let h = tape.constant(ex.example.embeddings.clone().expect("embeddings"));
                    Some(adapter.forward(&mut tape, &model.params, h)?)
                }
                None => None,
            }
        } else {
            None
        };
        inputs.push(ExampleInput {
            user_prompt,
            text: &ex.x_tokens,
            target: &ex.y_tokens,
        });
    }
    let loss = model.decoder.training_loss(&mut tape, &model.params, &inputs)?;
    let loss_value = tape.value(loss).item()?;
    tape.backward(loss, &mut model.params)?;
    adam.step_trainable(&mut model.params)?;
    Ok(loss_value)
}

/// Phase A: decoder + task prompt on the task without personalization,
/// stopping at the step budget or on a validation-loss plateau.
fn run_phase_a(
    config: &ExperimentConfig,
    model: &mut Model,
    train_examples: &[PreparedExample],
    val_examples: &[PreparedExample],
    instruction: &[TokenId],
) -> Result<usize> {
    // Personalization-free inputs: the instruction alone, whatever the
    // method's main-phase input path is.
    let stripped: Vec<PreparedExample> = train_examples
        .iter()
        .map(|ex| PreparedExample {
            example: ex.example.clone(),
            x_tokens: instruction.to_vec(),
            y_tokens: ex.y_tokens.clone(),
        })
        .collect();
    let probe: Vec<PreparedExample> = val_examples
        .iter()
        .take(64)
        .map(|ex| PreparedExample {
            example: ex.example.clone(),
            x_tokens: instruction.to_vec(),
            y_tokens: ex.y_tokens.clone(),
        })
        .collect();

    model
        .decoder
        .apply_freeze_mode(&mut model.params, FreezeMode::Full)?;
    model.params.set_trainable_by_prefix("adapter/", false);

    let mut adam = Adam::new(config.learning_rate);
    let mut schedule = BatchSchedule::new(stripped.len(), derive_seed(config.seed, "phase-a"));
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    const PLATEAU_PATIENCE: usize = 3;
    const PLATEAU_MIN_DELTA: f64 = 3e-3;

    let mut steps = 0usize;
    while steps < config.phase_a_steps {
        let batch = schedule.next_batch(config.batch_size.min(stripped.len()));
        train_step(model, &mut adam, &stripped, &batch, false)?;
        steps += 1;
        if steps % config.eval_interval == 0 || steps == config.phase_a_steps {
            let loss = probe_loss(model, &probe, false)?;
            log::info!("phase A step {steps}: probe loss {loss:.4}");
            if loss < best_loss - PLATEAU_MIN_DELTA {
                best_loss = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= PLATEAU_PATIENCE {
                    break;
                }
            }
        }
    }
    Ok(steps)
}

/// Runs the full configured pipeline and returns the run record. Artifacts
/// (config snapshot, F1 trace, best checkpoint, test report) land in
/// `config.output_dir`.
pub fn train(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(&config.output_dir)?;

    let dataset = load_dataset(&config.dataset)?;
    let splits = split_users(
        &dataset,
        (config.split_train, config.split_val, config.split_test),
        derive_seed(config.seed, "split"),
    )?;
    let encoder = build_encoder(config)?;
    let vocab = Vocab::standard();
    let train_examples = prepare_split(config, &dataset, &encoder, &vocab, &splits.train)?;
    let val_examples = prepare_split(config, &dataset, &encoder, &vocab, &splits.val)?;
    let test_examples = prepare_split(config, &dataset, &encoder, &vocab, &splits.test)?;

    std::fs::write(config.output_dir.join("run.conf"), config.snapshot())?;

    if config.method == Method::Counting {
        let test_report = evaluate_prepared(config, None, &test_examples)?;
        write_report(config, &test_report)?;
        return Ok(RunRecord {
            config_snapshot: config.snapshot(),
            f1_trace: Vec::new(),
            best_step: 0,
            best_val_f1: evaluate_prepared(config, None, &val_examples)?.weighted_f1,
            checkpoint: None,
            test_report,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            total_params: 0,
            trainable_params: 0,
        });
    }

    let d_enc = encoder.width(config.format);
    let mut model = build_model(config, d_enc)?;
    check_context_budget(&model, [&train_examples, &val_examples, &test_examples])?;
    vocab.save(&config.output_dir.join("vocab.txt"))?;

    let instruction = vocab.tokenize(INSTRUCTION);

    // Phase A / pretrained decoder.
    if config.freeze != FreezeMode::Full {
        let pretrain_path = config
            .pretrained_decoder
            .clone()
            .unwrap_or_else(|| config.output_dir.join("pretrain.ckpt"));
        if pretrain_path.exists() {
            let skipped = checkpoint::load_subset(&pretrain_path, &mut model.params)?;
            log::info!(
                "loaded pretrained decoder from {} ({} parameters left at init)",
                pretrain_path.display(),
                skipped.len()
            );
        } else {
            let steps = run_phase_a(config, &mut model, &train_examples, &val_examples, &instruction)?;
            log::info!("phase A finished after {steps} steps");
            checkpoint::save_prefixed(
                &pretrain_path,
                &model.params,
                &["decoder/", "task_prompt/"],
            )?;
        }
    }

    // Main phase trainability.
    model
        .decoder
        .apply_freeze_mode(&mut model.params, config.freeze)?;
    model.params.set_trainable_by_prefix("adapter/", true);
    let total_params = model.params.count_values(false);
    let trainable_params = model.params.count_values(true);

    let personalized = model.adapter.is_some();
    let best_path = config.output_dir.join("best.ckpt");
    let mut adam = Adam::new(config.learning_rate);
    let mut schedule = BatchSchedule::new(
        train_examples.len(),
        derive_seed(config.seed, "phase-b"),
    );
    let val_eval: Vec<PreparedExample> = val_examples
        .iter()
        .take(config.val_subsample.max(1))
        .map(|ex| PreparedExample {
            example: ex.example.clone(),
            x_tokens: ex.x_tokens.clone(),
            y_tokens: ex.y_tokens.clone(),
        })
        .collect();

    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut best_step = 0usize;
    let mut stale = 0usize;

    let evaluate_point = |model: &Model| -> Result<f64> {
        let report = evaluate_prepared(config, Some(model), &val_eval)?;
        Ok(report.weighted_f1)
    };

    let f1 = evaluate_point(&model)?;
    trace.push((0, f1));
    let mut best_f1 = f1;
    checkpoint::save(&best_path, &model.params)?;
    log::info!("step 0: val F1 {f1:.4}");

    let mut step = 0usize;
    while step < config.max_steps {
        let batch = schedule.next_batch(config.batch_size.min(train_examples.len()));
        let loss = train_step(&mut model, &mut adam, &train_examples, &batch, personalized)?;
        step += 1;
        if step % config.eval_interval == 0 || step == config.max_steps {
            let f1 = evaluate_point(&model)?;
            trace.push((step, f1));
            log::info!("step {step}: train loss {loss:.4}, val F1 {f1:.4}");
            if f1 > best_f1 {
                best_f1 = f1;
                best_step = step;
                stale = 0;
                checkpoint::save(&best_path, &model.params)?;
            } else {
                stale += 1;
                if stale >= config.patience {
                    log::info!("early stop at step {step} (patience {})", config.patience);
                    break;
                }
            }
        }
    }

    checkpoint::load_into(&best_path, &mut model.params)?;
    let test_report = evaluate_prepared(config, Some(&model), &test_examples)?;
    write_report(config, &test_report)?;
    write_trace(config, &trace)?;

    Ok(RunRecord {
        config_snapshot: config.snapshot(),
        f1_trace: trace,
        best_step,
        best_val_f1: best_f1,
        checkpoint: Some(best_path),
        test_report,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        total_params,
        trainable_params,
    })
}

fn write_report(config: &ExperimentConfig, report: &MetricReport) -> Result<()> {
    std::fs::write(config.output_dir.join("test_report.tsv"), report.to_table())?;
    Ok(())
}

fn write_trace(config: &ExperimentConfig, trace: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("step\tval_f1\n");
    for (step, f1) in trace {
        out.push_str(&format!("{step}\t{f1:.6}\n"));
    }
    std::fs::write(config.output_dir.join("trace.tsv"), out)?;
    Ok(())
}

/// Loads a checkpoint produced by [`train`] and evaluates one split.
pub fn evaluate_config(
    config: &ExperimentConfig,
    checkpoint_path: Option<&std::path::Path>,
    split: crate::data::Split,
) -> Result<MetricReport> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let splits = split_users(
        &dataset,
        (config.split_train, config.split_val, config.split_test),
        derive_seed(config.seed, "split"),
    )?;
    let encoder = build_encoder(config)?;
    let vocab = Vocab::standard();
    let examples = prepare_split(config, &dataset, &encoder, &vocab, splits.get(split))?;

    if config.method == Method::Counting {
        return evaluate_prepared(config, None, &examples);
    }
    let d_enc = encoder.width(config.format);
    let mut model = build_model(config, d_enc)?;
    let path = checkpoint_path.ok_or_else(|| {
        Error::Config("evaluating a neural method requires a checkpoint".into())
    })?;
    checkpoint::load_into(path, &mut model.params)?;
    evaluate_prepared(config, Some(&model), &examples)
}
