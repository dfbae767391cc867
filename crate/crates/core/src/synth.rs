//! Two-domain synthetic benchmark with a known response function.
//!
//! Every sample carries a latent signal `z ~ N(0, I)`. Expression is a
//! linear lift of `z` plus noise; target (patient) samples
//! additionally get a confounder living in a random subspace orthogonal to
//! the lift, scaled by `shift_magnitude`. The true response of sample `i` to
//! drug `j` is `sigmoid(⟨z_i, w_j⟩)`.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{
    median, write_drugs, write_expression, write_labels, write_metadata, Domain, DrugFeature, DrugTable,
    ExpressionDataset, ResponseKind, ResponseLabel, SampleMeta, DRUG_DIM,
};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Matrix};
use crate::tsv::{self, fmt_f64};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_genes: usize,
    pub signal_dim: usize,
    pub shift_magnitude: f64,
    pub n_drugs: usize,
    pub label_noise: f64,
    /// Tumor types assigned round-robin within each domain.
    pub n_tumor_types: usize,
    pub noise_std: f64,
    /// Norm of each drug's latent weight vector.
    pub response_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_source: 400,
            n_target: 200,
            n_genes: 500,
            signal_dim: 8,
            shift_magnitude: 1.0,
            n_drugs: 20,
            label_noise: 0.0,
            n_tumor_types: 1,
            noise_std: 0.5,
            response_scale: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_source", self.n_source),
            ("n_target", self.n_target),
            ("n_genes", self.n_genes),
            ("signal_dim", self.signal_dim),
            ("n_drugs", self.n_drugs),
            ("n_tumor_types", self.n_tumor_types),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{k} must be positive")));
            }
        }
        if 2 * self.signal_dim > self.n_genes {
            return Err(Error::invalid("n_genes must be at least twice signal_dim"));
        }
        if !(self.shift_magnitude.is_finite() && self.shift_magnitude >= 0.0) {
            return Err(Error::invalid("shift_magnitude must be finite and >= 0"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::invalid("label_noise must lie in [0, 0.5)"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        if !(self.response_scale.is_finite() && self.response_scale > 0.0) {
            return Err(Error::invalid("response_scale must be positive"));
        }
        Ok(())
    }
}

/// Hidden quantities kept for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Latent signal, one row per sample in dataset order.
    pub latent: Matrix,
    /// Per-drug latent weights, `n_drugs × signal_dim`.
    pub drug_weights: Matrix,
    /// True response, `n_samples × n_drugs`.
    pub response: Matrix,
    pub drug_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub dataset: ExpressionDataset,
    pub labels: Vec<ResponseLabel>,
    pub drugs: DrugTable,
    pub truth: GroundTruth,
}

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Orthonormal basis (as columns) of `k` random directions orthogonal to the
/// column space of `basis`, by modified Gram-Schmidt.
fn orthogonal_complement<R: Rng>(rng: &mut R, basis: &Matrix, k: usize) -> Matrix {
    let n = basis.nrows();
    let mut cols: Vec<ndarray::Array1<f64>> = Vec::new();
    for c in basis.columns() {
        let mut v = c.to_owned();
        for q in &cols {
            let d = q.dot(&v);
            v.scaled_add(-d, q);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-10 {
            cols.push(v / norm);
        }
    }
    let fixed = cols.len();
    while cols.len() < fixed + k {
        let mut v: ndarray::Array1<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for q in &cols {
                let d = q.dot(&v);
                v.scaled_add(-d, q);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    Matrix::from_shape_fn((n, k), |(i, j)| cols[fixed + j][i])
}

/// Exactly `floor(n/2)` positives for distinct values: responders lie
/// strictly above the median.
fn threshold(values: &[f64]) -> Vec<bool> {
    let med = median(values).expect("non-empty");
    values.iter().map(|&v| v > med).collect()
}

pub fn generate(config: &SynthConfig) -> Result<Benchmark> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (ns, nt, g, k) = (config.n_source, config.n_target, config.n_genes, config.signal_dim);
    let n = ns + nt;

    // per-gene signal variance ≈ 1
    let lift = gaussian(&mut rng, g, k) / (k as f64).sqrt();
    let confound = orthogonal_complement(&mut rng, &lift, k) * (g as f64 / k as f64).sqrt();
    let offset = gaussian(&mut rng, 1, k);
    let drug_proj = gaussian(&mut rng, DRUG_DIM, k);

    let latent = gaussian(&mut rng, n, k);
    let noise = gaussian(&mut rng, n, g) * config.noise_std;
    let mut values = latent.dot(&lift.t()) + noise;
    if nt > 0 && config.shift_magnitude > 0.0 {
        let u = gaussian(&mut rng, nt, k) + &offset;
        let shift = u.dot(&confound.t()) * config.shift_magnitude;
        let mut tgt = values.slice_mut(ndarray::s![ns.., ..]);
        tgt += &shift;
    }

    let mut ids = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for i in 0..n {
        let (domain, local, prefix) = if i < ns {
            (Domain::CellLine, i, "C")
        } else {
            (Domain::Patient, i - ns, "P")
        };
        ids.push(format!("{prefix}{local:05}"));
        meta.push(SampleMeta {
            domain,
            tumor_type: format!("T{}", local % config.n_tumor_types + 1),
        });
    }
    let genes: Vec<String> = (0..g).map(|j| format!("G{j:05}")).collect();
    let dataset = ExpressionDataset::new(ids.clone(), genes, values, meta)?;

    let mut drugs = DrugTable::new();
    let mut drug_ids = Vec::with_capacity(config.n_drugs);
    let mut drug_weights = Matrix::zeros((config.n_drugs, k));
    for j in 0..config.n_drugs {
        let mut v: Vec<f64> = (0..DRUG_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let w = ndarray::ArrayView1::from(&v).dot(&drug_proj);
        let wn = w.dot(&w).sqrt();
        drug_weights.row_mut(j).assign(&(w * (config.response_scale / wn)));
        let id = format!("D{j:03}");
        drugs.insert(id.clone(), DrugFeature::new(id.clone(), format!("SYN{j}"), v)?);
        drug_ids.push(id);
    }
    let response = latent.dot(&drug_weights.t()).mapv(sigmoid);

    let mut labels = Vec::with_capacity(n * config.n_drugs);
    for (j, drug) in drug_ids.iter().enumerate() {
        for (range, kind) in [(0..ns, ResponseKind::CellLineAuc), (ns..n, ResponseKind::PatientPfs)] {
            let r: Vec<f64> = range.clone().map(|i| response[[i, j]]).collect();
            if r.len() < 2 {
                continue;
            }
            for (i, pos) in range.zip(threshold(&r)) {
                let flip = config.label_noise > 0.0 && rng.random::<f64>() < config.label_noise;
                let raw = match kind {
                    ResponseKind::CellLineAuc => 1.0 - response[[i, j]],
                    ResponseKind::PatientPfs => response[[i, j]],
                };
                let mut l = ResponseLabel::new(ids[i].clone(), drug.clone(), kind, raw);
                l.binary = Some(pos != flip);
                labels.push(l);
            }
        }
    }

    Ok(Benchmark {
        dataset,
        labels,
        drugs,
        truth: GroundTruth {
            latent,
            drug_weights,
            response,
            drug_ids,
        },
    })
}

/// File names written by [`write_benchmark`].
pub const EXPRESSION_FILE: &str = "expression.tsv";
pub const META_FILE: &str = "meta.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const DRUGS_FILE: &str = "drugs.tsv";
pub const TRUTH_FILE: &str = "ground_truth.tsv";

/// Write the benchmark in the ingestion formats plus `ground_truth.tsv`
/// (`sample_id, drug_id, true_response`).
pub fn write_benchmark(dir: &Path, bench: &Benchmark) -> Result<()> {
    write_expression(&dir.join(EXPRESSION_FILE), &bench.dataset)?;
    write_metadata(&dir.join(META_FILE), &bench.dataset)?;
    write_labels(&dir.join(LABELS_FILE), &bench.labels)?;
    write_drugs(&dir.join(DRUGS_FILE), &bench.drugs)?;
    let t = &bench.truth;
    let mut rows = Vec::with_capacity(t.response.len());
    for (i, id) in bench.dataset.sample_ids().iter().enumerate() {
        for (j, d) in t.drug_ids.iter().enumerate() {
            rows.push(vec![id.clone(), d.clone(), fmt_f64(t.response[[i, j]])]);
        }
    }
    tsv::write(&dir.join(TRUTH_FILE), &["sample_id", "drug_id", "true_response"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_source: 60,
            n_target: 40,
            n_genes: 30,
            signal_dim: 4,
            n_drugs: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_benchmark() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(
            generate(&small(3)).unwrap().dataset,
            generate(&small(4)).unwrap().dataset
        );
    }

    #[test]
    fn confounder_is_orthogonal_to_the_lift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lift = gaussian(&mut rng, 20, 3);
        let c = orthogonal_complement(&mut rng, &lift, 3);
        assert!(lift.t().dot(&c).iter().all(|v| v.abs() < 1e-10));
        let gram = c.t().dot(&c);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noiseless_labels_split_at_the_median() {
        let b = generate(&small(0)).unwrap();
        for d in &b.truth.drug_ids {
            for (kind, n) in [(ResponseKind::CellLineAuc, 60), (ResponseKind::PatientPfs, 40)] {
                let pos = b
                    .labels
                    .iter()
                    .filter(|l| &l.drug_id == d && l.kind == kind && l.binary == Some(true))
                    .count();
                assert_eq!(pos, n / 2);
            }
        }
    }

    #[test]
    fn drug_vectors_are_unit_norm() {
        let b = generate(&small(2)).unwrap();
        for d in b.drugs.values() {
            let n: f64 = d.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SynthConfig { n_drugs: 0, ..small(0) }).is_err());
        assert!(generate(&SynthConfig {
            label_noise: 0.5,
            ..small(0)
        })
        .is_err());
        assert!(generate(&SynthConfig {
            shift_magnitude: -1.0,
            ..small(0)
        })
        .is_err());
    }

    #[test]
    fn tumor_types_round_robin() {
        let b = generate(&SynthConfig {
            n_tumor_types: 3,
            ..small(0)
        })
        .unwrap();
        assert_eq!(b.dataset.patient_tumor_types(), vec!["T1", "T2", "T3"]);
    }
}
