//! Expression matrices, response labels and drug features: ingestion,
//! quality control, median binarization and per-tumor-type splits.

mod featurize;
mod io;
mod labels;
mod qc;
mod split;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

pub use featurize::{featurize_smiles, smiles_trigrams, FEATURE_HASH_SEED};
pub use io::{
    load_drugs, load_expression, load_labels, load_metadata, write_drugs, write_expression, write_labels,
    write_metadata, LoadOptions,
};
pub use labels::{binarize_labels, median, median_split};
pub use qc::{qc_filter, QcFailure, QcOutcome, QcThresholds};
pub use split::{make_split, PretrainStrategy, TumorTypeSplit};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Width of every drug feature vector.
pub const DRUG_DIM: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    CellLine,
    Patient,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::CellLine => "cell_line",
            Domain::Patient => "patient",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cell_line" | "cellline" | "cell-line" => Ok(Domain::CellLine),
            "patient" => Ok(Domain::Patient),
            other => Err(Error::UnknownDomain(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMeta {
    pub domain: Domain,
    pub tumor_type: String,
}

/// Samples × genes matrix of log-TPM values with per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionDataset {
    sample_ids: Vec<String>,
    gene_ids: Vec<String>,
    values: Matrix,
    meta: Vec<SampleMeta>,
    index: HashMap<String, usize>,
}

impl ExpressionDataset {
    pub fn new(sample_ids: Vec<String>, gene_ids: Vec<String>, values: Matrix, meta: Vec<SampleMeta>) -> Result<Self> {
        if values.dim() != (sample_ids.len(), gene_ids.len()) || meta.len() != sample_ids.len() {
            return Err(Error::Shape {
                context: "expression values vs ids",
                left: values.dim(),
                right: (sample_ids.len(), gene_ids.len()),
            });
        }
        let mut index = HashMap::with_capacity(sample_ids.len());
        for (i, id) in sample_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Ingest(format!("duplicate sample id {id}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / gene_ids.len(), pos % gene_ids.len());
            return Err(Error::Ingest(format!(
                "non-finite expression for sample {} gene {}",
                sample_ids[r], gene_ids[c]
            )));
        }
        Ok(Self {
            sample_ids,
            gene_ids,
            values,
            meta,
            index,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn position(&self, sample_id: &str) -> Option<usize> {
        self.index.get(sample_id).copied()
    }

    pub fn meta_of(&self, sample_id: &str) -> Option<&SampleMeta> {
        self.position(sample_id).map(|i| &self.meta[i])
    }

    /// Expression rows for `ids`, in the given order.
    pub fn rows(&self, ids: &[String]) -> Result<Matrix> {
        let mut out = Matrix::zeros((ids.len(), self.n_genes()));
        for (r, id) in ids.iter().enumerate() {
            let i = self
                .position(id)
                .ok_or_else(|| Error::invalid(format!("unknown sample {id}")))?;
            out.row_mut(r).assign(&self.values.row(i));
        }
        Ok(out)
    }

    /// Sample ids with the given domain (and tumor type, when provided), in
    /// dataset order.
    pub fn ids_where(&self, domain: Domain, tumor_type: Option<&str>) -> Vec<String> {
        self.sample_ids
            .iter()
            .zip(&self.meta)
            .filter(|(_, m)| m.domain == domain && tumor_type.is_none_or(|t| m.tumor_type == t))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Distinct patient tumor types, sorted.
    pub fn patient_tumor_types(&self) -> Vec<String> {
        let mut t: Vec<String> = self
            .meta
            .iter()
            .filter(|m| m.domain == Domain::Patient)
            .map(|m| m.tumor_type.clone())
            .collect();
        t.sort();
        t.dedup();
        t
    }

    /// New dataset restricted to `ids` (in the given order).
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let values = self.rows(ids)?;
        let meta = ids.iter().map(|id| self.meta[self.index[id]].clone()).collect();
        Self::new(ids.to_vec(), self.gene_ids.clone(), values, meta)
    }

    /// Keep the `k` genes with the highest variance across samples (ties by
    /// gene id), preserving lexicographic gene order.
    pub fn top_variance_genes(&self, k: usize) -> Result<Self> {
        if k >= self.n_genes() {
            return Ok(self.clone());
        }
        let var = self.values.var_axis(ndarray::Axis(0), 0.0);
        let mut order: Vec<usize> = (0..self.n_genes()).collect();
        order.sort_by(|&a, &b| {
            var[b]
                .total_cmp(&var[a])
                .then_with(|| self.gene_ids[a].cmp(&self.gene_ids[b]))
        });
        let mut keep: Vec<usize> = order.into_iter().take(k).collect();
        keep.sort_unstable();
        let genes = keep.iter().map(|&g| self.gene_ids[g].clone()).collect();
        let values = self.values.select(ndarray::Axis(1), &keep);
        Self::new(self.sample_ids.clone(), genes, values, self.meta.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResponseKind {
    /// Area under the cell-line dose-response curve; lower means sensitive.
    CellLineAuc,
    /// Patient progression-free survival; higher means responder.
    PatientPfs,
}

impl ResponseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseKind::CellLineAuc => "cellline_auc",
            ResponseKind::PatientPfs => "patient_pfs",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            ResponseKind::CellLineAuc => Domain::CellLine,
            ResponseKind::PatientPfs => Domain::Patient,
        }
    }
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResponseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cellline_auc" => Ok(ResponseKind::CellLineAuc),
            "patient_pfs" => Ok(ResponseKind::PatientPfs),
            other => Err(Error::invalid(format!("unknown response kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseLabel {
    pub sample_id: String,
    pub drug_id: String,
    pub raw_value: f64,
    pub kind: ResponseKind,
    /// Responder flag; `None` until binarized.
    pub binary: Option<bool>,
}

impl ResponseLabel {
    pub fn new(sample_id: impl Into<String>, drug_id: impl Into<String>, kind: ResponseKind, raw_value: f64) -> Self {
        Self {
            sample_id: sample_id.into(),
            drug_id: drug_id.into(),
            raw_value,
            kind,
            binary: None,
        }
    }

    pub fn require_binary(&self) -> Result<bool> {
        self.binary.ok_or_else(|| {
            Error::invalid(format!(
                "label ({}, {}) has not been binarized",
                self.sample_id, self.drug_id
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrugFeature {
    pub drug_id: String,
    pub smiles: String,
    pub vector: Vec<f64>,
}

impl DrugFeature {
    pub fn new(drug_id: impl Into<String>, smiles: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let drug_id = drug_id.into();
        if vector.len() != DRUG_DIM {
            return Err(Error::invalid(format!(
                "drug {drug_id} vector has length {}, expected {DRUG_DIM}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("drug {drug_id} vector has non-finite entries")));
        }
        Ok(Self {
            drug_id,
            smiles: smiles.into(),
            vector,
        })
    }

    /// Feature from SMILES alone, via [`featurize_smiles`].
    pub fn from_smiles(drug_id: impl Into<String>, smiles: impl Into<String>) -> Result<Self> {
        let smiles = smiles.into();
        let vector = featurize_smiles(&smiles)?;
        Self::new(drug_id, smiles, vector)
    }
}

/// Drug features keyed by id (sorted iteration order).
pub type DrugTable = BTreeMap<String, DrugFeature>;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn meta(d: Domain, t: &str) -> SampleMeta {
        SampleMeta {
            domain: d,
            tumor_type: t.into(),
        }
    }

    #[test]
    fn rejects_duplicate_samples() {
        let err = ExpressionDataset::new(
            vec!["a".into(), "a".into()],
            vec!["g".into()],
            array![[1.0], [2.0]],
            vec![meta(Domain::Patient, "T"), meta(Domain::Patient, "T")],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate sample id a"));
    }

    #[test]
    fn selects_by_domain_and_tumor() {
        let ds = ExpressionDataset::new(
            vec!["c1".into(), "p1".into(), "p2".into()],
            vec!["g".into()],
            array![[1.0], [2.0], [3.0]],
            vec![
                meta(Domain::CellLine, "X"),
                meta(Domain::Patient, "A"),
                meta(Domain::Patient, "B"),
            ],
        )
        .unwrap();
        assert_eq!(ds.ids_where(Domain::Patient, Some("B")), vec!["p2"]);
        assert_eq!(ds.ids_where(Domain::CellLine, None), vec!["c1"]);
        assert_eq!(ds.patient_tumor_types(), vec!["A", "B"]);
        assert_eq!(ds.rows(&["p2".into(), "c1".into()]).unwrap(), array![[3.0], [1.0]]);
    }

    #[test]
    fn top_variance_keeps_lexicographic_order() {
        let ds = ExpressionDataset::new(
            vec!["a".into(), "b".into()],
            vec!["g1".into(), "g2".into(), "g3".into()],
            array![[0.0, 5.0, 1.0], [4.0, 5.0, 0.0]],
            vec![meta(Domain::Patient, "T"), meta(Domain::Patient, "T")],
        )
        .unwrap();
        let top = ds.top_variance_genes(2).unwrap();
        assert_eq!(top.gene_ids(), &["g1".to_string(), "g3".to_string()]);
    }

    #[test]
    fn drug_vector_length_is_enforced() {
        assert!(DrugFeature::new("d", "C", vec![0.0; 299]).is_err());
        assert!(DrugFeature::new("d", "C", vec![0.0; DRUG_DIM]).is_ok());
    }
}
