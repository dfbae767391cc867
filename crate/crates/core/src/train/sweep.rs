use std::path::Path;

use rayon::prelude::*;

use super::config::TrainConfig;
use super::engine::{run_cell, EpochLog, EvalResult};
use crate::data::{make_split, DrugTable, ExpressionDataset, PretrainStrategy, ResponseLabel};
use crate::error::Result;
use crate::tsv::{self, fmt_f64};
use crate::zoo::Variant;

/// Evaluate every (tumor type × variant × strategy) cell. Cells run in
/// parallel on the current rayon pool; each builds its model from
/// `config.seed`, so the table does not depend on the thread count.
/// Rows are ordered by tumor type, then variant and strategy as given.
pub fn run_zoo(
    dataset: &ExpressionDataset,
    labels: &[ResponseLabel],
    drugs: &DrugTable,
    tumor_types: &[String],
    variants: &[Variant],
    strategies: &[PretrainStrategy],
    config: &TrainConfig,
) -> Result<Vec<EvalResult>> {
    config.validate()?;
    let mut cells = Vec::new();
    for t in tumor_types {
        for &v in variants {
            for &s in strategies {
                cells.push((t, v, s));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(t, v, s)| {
            let split = make_split(dataset, labels, t, s)?;
            let cfg = TrainConfig {
                strategy: s,
                ..config.clone()
            };
            log::info!("cell {t} / {v} / {s}: {} pretraining samples", split.pretrain_len());
            run_cell(v, dataset, &split, drugs, &cfg).map(|(_, r)| r)
        })
        .collect()
}

/// One row of the all-data → adaptive comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentChange {
    pub tumor_type: String,
    pub variant: Variant,
    pub all_data: f64,
    pub adaptive: f64,
    /// `100·(adaptive − all_data)/all_data`.
    pub percent: f64,
}

pub fn percent_change(all_data: f64, adaptive: f64) -> f64 {
    100.0 * (adaptive - all_data) / all_data
}

/// Pair up the two strategies of every (tumor type, variant) in `rows`.
pub fn percent_change_table(rows: &[EvalResult]) -> Vec<PercentChange> {
    let mut out = Vec::new();
    for a in rows.iter().filter(|r| r.strategy == PretrainStrategy::AllData) {
        let Some(b) = rows.iter().find(|r| {
            r.strategy == PretrainStrategy::Adaptive && r.tumor_type == a.tumor_type && r.variant == a.variant
        }) else {
            continue;
        };
        out.push(PercentChange {
            tumor_type: a.tumor_type.clone(),
            variant: a.variant,
            all_data: a.auroc,
            adaptive: b.auroc,
            percent: percent_change(a.auroc, b.auroc),
        });
    }
    out
}

pub const RESULTS_HEADER: [&str; 5] = ["tumor_type", "variant", "strategy", "auroc", "n_labels"];

pub fn write_results(path: &Path, rows: &[EvalResult]) -> Result<()> {
    tsv::write(
        path,
        &RESULTS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.tumor_type.clone(),
                r.variant.to_string(),
                r.strategy.to_string(),
                fmt_f64(r.auroc),
                r.n_labels.to_string(),
            ]
        }),
    )
}

pub fn write_per_drug(path: &Path, rows: &[EvalResult]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        for d in &r.per_drug {
            out.push(vec![
                r.tumor_type.clone(),
                r.variant.to_string(),
                r.strategy.to_string(),
                d.drug_id.clone(),
                d.auroc.map_or_else(|| "NA".to_string(), fmt_f64),
                d.n_labels.to_string(),
            ]);
        }
    }
    tsv::write(
        path,
        &["tumor_type", "variant", "strategy", "drug_id", "auroc", "n_labels"],
        out,
    )
}

pub fn write_percent_change(path: &Path, rows: &[PercentChange]) -> Result<()> {
    tsv::write(
        path,
        &["tumor_type", "variant", "all_data", "adaptive", "percent_change"],
        rows.iter().map(|r| {
            vec![
                r.tumor_type.clone(),
                r.variant.to_string(),
                fmt_f64(r.all_data),
                fmt_f64(r.adaptive),
                fmt_f64(r.percent),
            ]
        }),
    )
}

pub fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    tsv::write(
        path,
        &["epoch", "term", "value"],
        log.iter()
            .map(|e| vec![e.epoch.to_string(), e.term.clone(), fmt_f64(e.value)]),
    )
}
