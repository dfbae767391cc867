use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::auroc::auroc;
use super::config::TrainConfig;
use crate::data::{Domain, DrugTable, ExpressionDataset, PretrainStrategy, ResponseLabel, TumorTypeSplit, DRUG_DIM};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Matrix, Tape};
use crate::zoo::{LossBreakdown, Model, Variant};

/// Stream offsets so model init, pretraining and fine-tuning draw from
/// independent generators derived from one seed.
const INIT_STREAM: u64 = 0;
const PRETRAIN_STREAM: u64 = 1;
const FINETUNE_STREAM: u64 = 2;

fn stream(seed: u64, offset: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(offset);
    rng
}

/// Freshly initialized model seeded from `config.seed`.
pub fn init_model(variant: Variant, n_genes: usize, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    Model::new(
        variant,
        n_genes,
        config.zoo_options(),
        &mut stream(config.seed, INIT_STREAM),
    )
}

/// One `(epoch, term, value)` row of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub term: String,
    pub value: f64,
}

/// Sample ids that entered pretraining batches, by domain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainAudit {
    pub source_ids: BTreeSet<String>,
    pub target_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub log: Vec<EpochLog>,
    pub epochs_run: usize,
    pub audit: PretrainAudit,
}

/// Index batches for one epoch: the larger domain is chunked (last chunk may
/// be short), the smaller one is cycled to match each chunk's size.
fn paired_batches(n_src: usize, n_tgt: usize, batch: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let large = n_src.max(n_tgt);
    let small = n_src.min(n_tgt);
    let mut out = Vec::new();
    let mut start = 0;
    while start < large {
        let end = (start + batch).min(large);
        let big: Vec<usize> = (start..end).collect();
        let len = (end - start).min(small);
        let little: Vec<usize> = (0..len).map(|k| (start + k) % small).collect();
        if n_src >= n_tgt {
            out.push((big, little));
        } else {
            out.push((little, big));
        }
        start = end;
    }
    out
}

/// Unlabeled pretraining on `split`'s cell lines (source) and patients
/// (target). Stops early when the epoch-mean reconstruction loss has not
/// improved for `config.patience` epochs.
pub fn pretrain(
    model: &mut Model,
    dataset: &ExpressionDataset,
    split: &TumorTypeSplit,
    config: &TrainConfig,
) -> Result<PretrainReport> {
    config.validate()?;
    if dataset.n_genes() != model.n_genes() {
        return Err(Error::Shape {
            context: "dataset genes vs model input",
            left: (dataset.n_samples(), dataset.n_genes()),
            right: (dataset.n_samples(), model.n_genes()),
        });
    }
    let mut report = PretrainReport {
        log: Vec::new(),
        epochs_run: 0,
        audit: PretrainAudit::default(),
    };
    if config.epochs_pretrain == 0 {
        return Ok(report);
    }
    if split.pretrain_source.is_empty() || split.pretrain_target.is_empty() {
        return Err(Error::invalid("pretraining needs cell lines and patients"));
    }
    for id in &split.pretrain_target {
        let meta = dataset
            .meta_of(id)
            .ok_or_else(|| Error::invalid(format!("unknown sample {id}")))?;
        if meta.domain != Domain::Patient {
            return Err(Error::invalid(format!("pretraining target {id} is not a patient")));
        }
        if split.strategy == PretrainStrategy::Adaptive && meta.tumor_type != split.tumor_type {
            return Err(Error::invalid(format!(
                "adaptive split for {} contains patient {id} of {}",
                split.tumor_type, meta.tumor_type
            )));
        }
    }
    let xs_all = dataset.rows(&split.pretrain_source)?;
    let xt_all = dataset.rows(&split.pretrain_target)?;
    let mut rng = stream(config.seed, PRETRAIN_STREAM);
    let mut adam = match model.optimizer() {
        Some(a) if a.moments.keys().copied().eq(model.pretrain_params()) => a.clone(),
        _ => AdamState::new(
            AdamConfig::with_lr(config.lr_pretrain),
            model.store(),
            model.pretrain_params(),
        ),
    };
    let mut src_order: Vec<usize> = (0..xs_all.nrows()).collect();
    let mut tgt_order: Vec<usize> = (0..xt_all.nrows()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.epochs_pretrain {
        src_order.shuffle(&mut rng);
        tgt_order.shuffle(&mut rng);
        let batches = paired_batches(src_order.len(), tgt_order.len(), config.batch_size);
        let lambda = config.lambda_schedule.at(config.lambda, epoch, config.epochs_pretrain);
        let mut sums = [0.0; 5];
        for (si, ti) in &batches {
            let s_rows: Vec<usize> = si.iter().map(|&k| src_order[k]).collect();
            let t_rows: Vec<usize> = ti.iter().map(|&k| tgt_order[k]).collect();
            for &r in &s_rows {
                report.audit.source_ids.insert(split.pretrain_source[r].clone());
            }
            for &r in &t_rows {
                report.audit.target_ids.insert(split.pretrain_target[r].clone());
            }
            let xs = xs_all.select(ndarray::Axis(0), &s_rows);
            let xt = xt_all.select(ndarray::Axis(0), &t_rows);
            let mut tape = Tape::new();
            let vars = model.pretrain_loss_at(model.store(), &mut tape, &xs, &xt, lambda)?;
            let b = LossBreakdown::from_tape(&tape, &vars);
            let grads = tape.backward(vars.total)?;
            adam.step(model.store_mut(), &grads)?;
            for (acc, (_, v)) in sums.iter_mut().zip(b.terms()) {
                *acc += v;
            }
        }
        let n = batches.len() as f64;
        let terms = LossBreakdown {
            total: sums[0] / n,
            recon_source: sums[1] / n,
            recon_target: sums[2] / n,
            sim: sums[3] / n,
            ortho: sums[4] / n,
        };
        for (term, value) in terms.terms() {
            report.log.push(EpochLog {
                epoch,
                term: term.to_string(),
                value,
            });
        }
        report.epochs_run = epoch;
        let recon = terms.recon_source + terms.recon_target;
        debug!(
            "pretrain {} epoch {epoch}: total {:.6} recon {recon:.6}",
            model.variant(),
            terms.total
        );
        if !recon.is_finite() {
            return Err(Error::NumericInstability {
                param: "reconstruction loss".into(),
            });
        }
        if recon < best {
            best = recon;
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                info!("pretrain {}: early stop after epoch {epoch}", model.variant());
                break;
            }
        }
    }
    model.set_optimizer(adam);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub log: Vec<EpochLog>,
    /// Per-step batch bce, in order.
    pub step_losses: Vec<f64>,
    /// Sample ids whose expression entered fine-tuning.
    pub sample_ids: BTreeSet<String>,
}

fn drug_vector<'a>(drugs: &'a DrugTable, id: &str) -> Result<&'a [f64]> {
    drugs
        .get(id)
        .map(|d| d.vector.as_slice())
        .ok_or_else(|| Error::MissingDrugFeature(id.to_string()))
}

/// Train the classifier head with bce on `(shared embedding, drug vector)`
/// pairs from cell-line labels. The shared encoder is frozen unless
/// `config.finetune_encoder` is set.
pub fn finetune(
    model: &mut Model,
    dataset: &ExpressionDataset,
    labels: &[ResponseLabel],
    drugs: &DrugTable,
    config: &TrainConfig,
) -> Result<FinetuneReport> {
    config.validate()?;
    if labels.is_empty() {
        return Err(Error::invalid("no fine-tuning labels"));
    }
    let mut sample_ids: Vec<String> = Vec::new();
    let mut row_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pairs: Vec<(usize, &[f64], f64)> = Vec::with_capacity(labels.len());
    for l in labels {
        let meta = dataset
            .meta_of(&l.sample_id)
            .ok_or_else(|| Error::invalid(format!("unknown sample {}", l.sample_id)))?;
        if meta.domain != Domain::CellLine {
            return Err(Error::invalid(format!(
                "fine-tuning label for {} is not a cell line",
                l.sample_id
            )));
        }
        let y = if l.require_binary()? { 1.0 } else { 0.0 };
        let drug = drug_vector(drugs, &l.drug_id)?;
        let next = row_of.len();
        let row = *row_of.entry(l.sample_id.as_str()).or_insert_with(|| {
            sample_ids.push(l.sample_id.clone());
            next
        });
        pairs.push((row, drug, y));
    }
    let x = dataset.rows(&sample_ids)?;
    if x.ncols() != model.n_genes() {
        return Err(Error::Shape {
            context: "dataset genes vs model input",
            left: x.dim(),
            right: (x.nrows(), model.n_genes()),
        });
    }
    let frozen = if config.finetune_encoder {
        None
    } else {
        Some(model.encode(&x, Domain::CellLine)?.shared)
    };
    let mut params = model.classifier_params();
    if config.finetune_encoder {
        params.extend(model.shared_encoder_params());
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr_finetune), model.store(), params);
    let mut rng = stream(config.seed, FINETUNE_STREAM);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut report = FinetuneReport {
        log: Vec::new(),
        step_losses: Vec::new(),
        sample_ids: sample_ids.iter().cloned().collect(),
    };

    for epoch in 1..=config.epochs_finetune {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&k| pairs[k].0).collect();
            let drug_m = Matrix::from_shape_fn((chunk.len(), DRUG_DIM), |(i, j)| pairs[chunk[i]].1[j]);
            let y = Matrix::from_shape_fn((chunk.len(), 1), |(i, _)| pairs[chunk[i]].2);
            let mut tape = Tape::new();
            let shared = match &frozen {
                Some(e) => tape.constant(e.select(ndarray::Axis(0), &rows)),
                None => {
                    let xb = tape.constant(x.select(ndarray::Axis(0), &rows));
                    model.encode_on(model.store(), &mut tape, xb, Domain::CellLine)?.shared
                }
            };
            let p = model.classify_pairs_on(model.store(), &mut tape, shared, drug_m)?;
            let loss = tape.bce(p, y.into())?;
            let value = tape.scalar(loss);
            let grads = tape.backward(loss)?;
            adam.step(model.store_mut(), &grads)?;
            report.step_losses.push(value);
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        debug!("finetune {} epoch {epoch}: bce {mean:.6}", model.variant());
        report.log.push(EpochLog {
            epoch,
            term: "bce".into(),
            value: mean,
        });
    }
    model.set_optimizer(adam);
    model.mark_fitted();
    Ok(report)
}

/// Zero-shot scores for every row of `x` against one drug.
pub fn predict(model: &Model, x: &Matrix, drug: &[f64]) -> Result<Vec<f64>> {
    if !model.is_fitted() {
        return Err(Error::Unfitted("model has not been fine-tuned"));
    }
    let shared = model.encode(x, Domain::Patient)?.shared;
    model.classify(&shared, drug)
}

/// Scores for the given patients and drug.
pub fn predict_samples(model: &Model, dataset: &ExpressionDataset, ids: &[String], drug: &[f64]) -> Result<Vec<f64>> {
    predict(model, &dataset.rows(ids)?, drug)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrugAuroc {
    pub drug_id: String,
    pub n_labels: usize,
    /// `None` when the drug's labels have a single class.
    pub auroc: Option<f64>,
}

/// Zero-shot performance of one (tumor type, variant, strategy) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub tumor_type: String,
    pub variant: Variant,
    pub strategy: PretrainStrategy,
    /// Pooled over every test label.
    pub auroc: f64,
    pub n_labels: usize,
    pub per_drug: Vec<DrugAuroc>,
}

/// Score each test label with the fitted model and compute AUROC.
pub fn evaluate(
    model: &Model,
    dataset: &ExpressionDataset,
    test: &[ResponseLabel],
    drugs: &DrugTable,
    tumor_type: &str,
    strategy: PretrainStrategy,
) -> Result<EvalResult> {
    if !model.is_fitted() {
        return Err(Error::Unfitted("model has not been fine-tuned"));
    }
    let mut by_drug: BTreeMap<&str, Vec<&ResponseLabel>> = BTreeMap::new();
    for l in test {
        by_drug.entry(l.drug_id.as_str()).or_default().push(l);
    }
    let mut all_scores = Vec::with_capacity(test.len());
    let mut all_labels = Vec::with_capacity(test.len());
    let mut per_drug = Vec::new();
    for (drug, ls) in by_drug {
        let ids: Vec<String> = ls.iter().map(|l| l.sample_id.clone()).collect();
        let y: Vec<bool> = ls.iter().map(|l| l.require_binary()).collect::<Result<_>>()?;
        let s = predict_samples(model, dataset, &ids, drug_vector(drugs, drug)?)?;
        per_drug.push(DrugAuroc {
            drug_id: drug.to_string(),
            n_labels: y.len(),
            auroc: auroc(&s, &y).ok(),
        });
        all_scores.extend(s);
        all_labels.extend(y);
    }
    Ok(EvalResult {
        tumor_type: tumor_type.to_string(),
        variant: model.variant(),
        strategy,
        auroc: auroc(&all_scores, &all_labels)?,
        n_labels: all_labels.len(),
        per_drug,
    })
}

/// Pretrain, fine-tune and evaluate one variant on one split.
pub fn run_cell(
    variant: Variant,
    dataset: &ExpressionDataset,
    split: &TumorTypeSplit,
    drugs: &DrugTable,
    config: &TrainConfig,
) -> Result<(Model, EvalResult)> {
    let mut model = init_model(variant, dataset.n_genes(), config)?;
    pretrain(&mut model, dataset, split, config)?;
    finetune(&mut model, dataset, &split.finetune, drugs, config)?;
    let result = evaluate(&model, dataset, &split.test, drugs, &split.tumor_type, split.strategy)?;
    Ok((model, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_the_larger_domain_and_keep_the_tail() {
        let b = paired_batches(10, 4, 4);
        assert_eq!(b.len(), 3);
        assert_eq!(b[2].0, vec![8, 9]);
        assert_eq!(b[2].1, vec![0, 1]);
        assert_eq!(b[1].1, vec![0, 1, 2, 3]);
        let flipped = paired_batches(3, 7, 5);
        assert_eq!(flipped[0].0, vec![0, 1, 2]);
        assert_eq!(flipped[1].1, vec![5, 6]);
        assert_eq!(flipped[1].0, vec![2, 0]);
    }
}
