use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::{Domain, ExpressionDataset, ResponseLabel};
use crate::error::{Error, Result};

/// Which patients join the unlabeled pretraining pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PretrainStrategy {
    /// All cell lines and all patients.
    AllData,
    /// All cell lines and only the patients of the evaluated tumor type.
    Adaptive,
}

impl PretrainStrategy {
    pub const ALL: [PretrainStrategy; 2] = [PretrainStrategy::AllData, PretrainStrategy::Adaptive];

    pub fn as_str(self) -> &'static str {
        match self {
            PretrainStrategy::AllData => "all_data",
            PretrainStrategy::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for PretrainStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PretrainStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "all_data" | "all" => Ok(PretrainStrategy::AllData),
            "adaptive" => Ok(PretrainStrategy::Adaptive),
            other => Err(Error::invalid(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Sample and label partition for one tumor type.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorTypeSplit {
    pub tumor_type: String,
    pub strategy: PretrainStrategy,
    /// Unlabeled cell lines (source domain) for pretraining.
    pub pretrain_source: Vec<String>,
    /// Unlabeled patients (target domain) for pretraining.
    pub pretrain_target: Vec<String>,
    /// Cell-line labels restricted to the overlap drugs.
    pub finetune: Vec<ResponseLabel>,
    /// Patient labels of this tumor type.
    pub test: Vec<ResponseLabel>,
    pub overlap_drugs: BTreeSet<String>,
}

impl TumorTypeSplit {
    pub fn pretrain_len(&self) -> usize {
        self.pretrain_source.len() + self.pretrain_target.len()
    }
}

/// Partition `dataset` and `labels` for zero-shot evaluation on `tumor_type`.
pub fn make_split(
    dataset: &ExpressionDataset,
    labels: &[ResponseLabel],
    tumor_type: &str,
    strategy: PretrainStrategy,
) -> Result<TumorTypeSplit> {
    let target_patients = dataset.ids_where(Domain::Patient, Some(tumor_type));
    if target_patients.is_empty() {
        return Err(Error::UnknownTumorType(tumor_type.to_string()));
    }
    let pretrain_source = dataset.ids_where(Domain::CellLine, None);
    let pretrain_target = match strategy {
        PretrainStrategy::AllData => dataset.ids_where(Domain::Patient, None),
        PretrainStrategy::Adaptive => target_patients,
    };

    let mut test = Vec::new();
    let mut cell_labels = Vec::new();
    for l in labels {
        let Some(m) = dataset.meta_of(&l.sample_id) else {
            continue;
        };
        match m.domain {
            Domain::Patient if m.tumor_type == tumor_type => test.push(l.clone()),
            Domain::Patient => {}
            Domain::CellLine => cell_labels.push(l),
        }
    }
    let test_drugs: BTreeSet<&str> = test.iter().map(|l| l.drug_id.as_str()).collect();
    let cell_drugs: BTreeSet<&str> = cell_labels.iter().map(|l| l.drug_id.as_str()).collect();
    let overlap_drugs: BTreeSet<String> = test_drugs.intersection(&cell_drugs).map(|s| s.to_string()).collect();
    if overlap_drugs.len() < 2 {
        return Err(Error::invalid(format!(
            "tumor type {tumor_type} shares {} drug(s) between cell-line and patient labels; need more than one",
            overlap_drugs.len()
        )));
    }
    let finetune = cell_labels
        .into_iter()
        .filter(|l| overlap_drugs.contains(&l.drug_id))
        .cloned()
        .collect();

    Ok(TumorTypeSplit {
        tumor_type: tumor_type.to_string(),
        strategy,
        pretrain_source,
        pretrain_target,
        finetune,
        test,
        overlap_drugs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ResponseKind, SampleMeta};
    use crate::nn::Matrix;

    /// 900 cell lines, 500 patients of which 60 are tumor "T".
    fn fixture() -> (ExpressionDataset, Vec<ResponseLabel>) {
        let mut ids = Vec::new();
        let mut meta = Vec::new();
        for i in 0..900 {
            ids.push(format!("c{i}"));
            meta.push(SampleMeta {
                domain: Domain::CellLine,
                tumor_type: "X".into(),
            });
        }
        for i in 0..500 {
            ids.push(format!("p{i}"));
            meta.push(SampleMeta {
                domain: Domain::Patient,
                tumor_type: if i < 60 { "T".into() } else { format!("O{}", i % 4) },
            });
        }
        let n = ids.len();
        let ds = ExpressionDataset::new(ids, vec!["g".into()], Matrix::zeros((n, 1)), meta).unwrap();
        let mut labels = Vec::new();
        for d in ["a", "b", "c"] {
            labels.push(ResponseLabel::new("c0", d, ResponseKind::CellLineAuc, 0.3));
        }
        for d in ["a", "b"] {
            labels.push(ResponseLabel::new("p0", d, ResponseKind::PatientPfs, 5.0));
        }
        labels.push(ResponseLabel::new("p100", "c", ResponseKind::PatientPfs, 5.0));
        (ds, labels)
    }

    #[test]
    fn adaptive_uses_only_target_patients() {
        let (ds, labels) = fixture();
        let split = make_split(&ds, &labels, "T", PretrainStrategy::Adaptive).unwrap();
        assert_eq!(split.pretrain_len(), 960);
        assert!(split
            .pretrain_target
            .iter()
            .all(|id| ds.meta_of(id).unwrap().tumor_type == "T"));
    }

    #[test]
    fn all_data_uses_every_sample() {
        let (ds, labels) = fixture();
        let split = make_split(&ds, &labels, "T", PretrainStrategy::AllData).unwrap();
        assert_eq!(split.pretrain_len(), 1400);
    }

    #[test]
    fn finetune_is_restricted_to_overlap_drugs() {
        let (ds, labels) = fixture();
        let split = make_split(&ds, &labels, "T", PretrainStrategy::Adaptive).unwrap();
        let drugs: Vec<&str> = split.finetune.iter().map(|l| l.drug_id.as_str()).collect();
        assert_eq!(drugs, vec!["a", "b"]);
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn unknown_tumor_type_is_an_error() {
        let (ds, labels) = fixture();
        assert!(matches!(
            make_split(&ds, &labels, "NOPE", PretrainStrategy::Adaptive),
            Err(Error::UnknownTumorType(_))
        ));
    }
}
