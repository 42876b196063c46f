//! Config-driven experiment grid: one row per (format, strategy, freeze,
//! method, history size) cell, with per-cell failures recorded in-row.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::decoder::FreezeMode;
use crate::encoder::ItemInputFormat;
use crate::error::{Error, Result};
use crate::experiment::{train, ExperimentConfig, Method};

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub base: ExperimentConfig,
    pub methods: Vec<Method>,
    pub history_sizes: Vec<usize>,
    pub strategies: Vec<String>,
    pub freezes: Vec<FreezeMode>,
    pub formats: Vec<ItemInputFormat>,
}

impl GridSpec {
    pub fn new(base: ExperimentConfig) -> Self {
        GridSpec {
            methods: vec![base.method],
            history_sizes: vec![base.history_size],
            strategies: vec![base.strategy_name.clone()],
            freezes: vec![base.freeze],
            formats: vec![base.format],
            base,
        }
    }

    /// Reads a config file where `grid.*` keys hold comma-separated axis
    /// values and every other key configures the base experiment.
    pub fn from_file(path: &Path) -> Result<GridSpec> {
        let text = std::fs::read_to_string(path)?;
        let mut base = ExperimentConfig::default();
        let mut axes: Vec<(String, String)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                line: idx + 1,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.starts_with("grid.") {
                axes.push((key.to_string(), value.to_string()));
            } else {
                base.apply(key, value)?;
            }
        }
        let mut spec = GridSpec::new(base);
        for (key, value) in axes {
            spec.apply(&key, &value)?;
        }
        Ok(spec)
    }

    /// Applies a `grid.*` axis override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let items: Vec<&str> = value.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::Config(format!("empty value for '{key}'")));
        }
        match key {
            "grid.methods" => {
                self.methods = items
                    .iter()
                    .map(|s| Method::parse(s))
                    .collect::<Result<_>>()?;
            }
            "grid.history_sizes" => {
                self.history_sizes = items
                    .iter()
                    .map(|s| {
                        s.parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad history size '{s}'")))
                    })
                    .collect::<Result<_>>()?;
            }
            "grid.strategies" => {
                for s in &items {
                    crate::sampling::SamplingStrategy::parse(s, 0)?;
                }
                self.strategies = items.iter().map(|s| s.to_ascii_lowercase()).collect();
            }
            "grid.freezes" => {
                self.freezes = items
                    .iter()
                    .map(|s| FreezeMode::parse(s))
                    .collect::<Result<_>>()?;
            }
            "grid.formats" => {
                self.formats = items
                    .iter()
                    .map(|s| ItemInputFormat::parse(s))
                    .collect::<Result<_>>()?;
            }
            other => {
                return Err(Error::Config(format!("unknown grid key '{other}'")))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub format: String,
    pub strategy: String,
    pub freeze: String,
    pub method: String,
    pub history_size: usize,
    pub f1: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridResults {
    pub rows: Vec<GridRow>,
}

impl GridResults {
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("format\tstrategy\tfreeze\tmethod\thistory\tf1\trecall\tprecision\tnote\n");
        for r in &self.rows {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.format,
                r.strategy,
                r.freeze,
                r.method,
                r.history_size,
                fmt(r.f1),
                fmt(r.recall),
                fmt(r.precision),
                r.note
            );
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_text_table(&self) -> String {
        let header = [
            "format", "strategy", "freeze", "method", "history", "f1", "recall", "precision",
            "note",
        ];
        let cells: Vec<[String; 9]> = self
            .rows
            .iter()
            .map(|r| {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                [
                    r.format.clone(),
                    r.strategy.clone(),
                    r.freeze.clone(),
                    r.method.clone(),
                    r.history_size.to_string(),
                    fmt(r.f1),
                    fmt(r.recall),
                    fmt(r.precision),
                    r.note.clone(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, cell) in widths.iter_mut().zip(row.iter()) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut write_row = |row: &[String]| {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        };
        write_row(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        write_row(
            &widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>(),
        );
        for row in &cells {
            write_row(row);
        }
        out
    }
}

/// Runs every cell sequentially (deterministic), sharing one phase-A
/// pretrained decoder across all cells that need one. Individual cell
/// failures land in the row's note; the text baseline's context overflow is
/// reported as `out of context length`.
pub fn run_grid(spec: &GridSpec) -> Result<GridResults> {
    std::fs::create_dir_all(&spec.base.output_dir)?;
    let shared_pretrain = spec.base.output_dir.join("pretrain-shared.ckpt");
    let mut results = GridResults::default();
    let mut counting_seen: BTreeSet<(String, String, usize)> = BTreeSet::new();

    for format in &spec.formats {
        for strategy in &spec.strategies {
            for freeze in &spec.freezes {
                for method in &spec.methods {
                    for &n in &spec.history_sizes {
                        if *method == Method::Counting {
                            let key = (format.label().to_string(), strategy.clone(), n);
                            if !counting_seen.insert(key) {
                                continue;
                            }
                        }
                        let mut config = spec.base.clone();
                        config.method = *method;
                        config.history_size = n;
                        config.strategy_name = strategy.clone();
                        config.format = *format;
                        config.freeze = if *method == Method::Counting {
                            FreezeMode::Full
                        } else {
                            *freeze
                        };
                        let label = format!(
                            "{}-{}-{}-{}-n{}",
                            format.label(),
                            strategy,
                            config.freeze.label().replace(':', "_"),
                            method.label(),
                            n
                        );
                        config.output_dir = spec.base.output_dir.join("cells").join(&label);
                        if *method != Method::Counting && config.freeze != FreezeMode::Full {
                            config.pretrained_decoder = Some(shared_pretrain.clone());
                        }
                        log::info!("grid cell {label}");
                        let row = match train(&config) {
                            Ok(record) => GridRow {
                                format: format.label().to_string(),
                                strategy: strategy.clone(),
                                freeze: config.freeze.label(),
                                method: method.label().to_string(),
                                history_size: n,
                                f1: Some(record.test_report.weighted_f1),
                                recall: Some(record.test_report.weighted_recall),
                                precision: Some(record.test_report.weighted_precision),
                                note: String::new(),
                            },
                            Err(Error::OutOfContextLength { .. }) => GridRow {
                                format: format.label().to_string(),
                                strategy: strategy.clone(),
                                freeze: config.freeze.label(),
                                method: method.label().to_string(),
                                history_size: n,
                                f1: None,
                                recall: None,
                                precision: None,
                                note: "out of context length".into(),
                            },
                            Err(err) => GridRow {
                                format: format.label().to_string(),
                                strategy: strategy.clone(),
                                freeze: config.freeze.label(),
                                method: method.label().to_string(),
                                history_size: n,
                                f1: None,
                                recall: None,
                                precision: None,
                                note: format!("error: {err}"),
                            },
                        };
                        results.rows.push(row);
                    }
                }
            }
        }
    }

    std::fs::write(spec.base.output_dir.join("grid.tsv"), results.to_tsv())?;
    std::fs::write(
        spec.base.output_dir.join("grid.txt"),
        results.to_text_table(),
    )?;
    Ok(results)
}
