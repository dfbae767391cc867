use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{Domain, ExpressionDataset, ResponseLabel};

/// Tumor-type retention thresholds. Counts must be strictly greater than the
/// `*_above` values and at least `min_labeled_patients`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QcThresholds {
    pub patients_above: usize,
    pub cell_lines_above: usize,
    pub min_labeled_patients: usize,
    pub overlap_drugs_above: usize,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            patients_above: 50,
            cell_lines_above: 30,
            min_labeled_patients: 7,
            overlap_drugs_above: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QcFailure {
    Patients { count: usize, threshold: usize },
    CellLines { count: usize, threshold: usize },
    LabeledPatients { count: usize, threshold: usize },
    Overlap { count: usize, threshold: usize },
}

impl fmt::Display for QcFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QcFailure::Patients { threshold, .. } => write!(f, "patients ≤ {threshold}"),
            QcFailure::CellLines { threshold, .. } => write!(f, "cell lines ≤ {threshold}"),
            QcFailure::LabeledPatients { threshold, .. } => write!(f, "labeled patients < {threshold}"),
            QcFailure::Overlap { threshold, .. } => write!(f, "overlap ≤ {threshold}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QcOutcome {
    pub tumor_type: String,
    pub n_patients: usize,
    pub n_cell_lines: usize,
    pub n_labeled_patients: usize,
    pub overlap_drugs: BTreeSet<String>,
    pub failures: Vec<QcFailure>,
}

impl QcOutcome {
    pub fn kept(&self) -> bool {
        self.failures.is_empty()
    }

    /// Failure reasons joined with `; `, empty when kept.
    pub fn reason(&self) -> String {
        self.failures
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Evaluate every patient tumor type against the retention thresholds.
///
/// Overlap drugs are drugs labeled both for patients of the tumor type and
/// for any cell line. Labels whose sample is not in `dataset` are ignored.
pub fn qc_filter(dataset: &ExpressionDataset, labels: &[ResponseLabel], thresholds: &QcThresholds) -> Vec<QcOutcome> {
    let mut patients: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cell_lines: BTreeMap<&str, usize> = BTreeMap::new();
    for m in dataset.meta() {
        match m.domain {
            Domain::Patient => *patients.entry(&m.tumor_type).or_default() += 1,
            Domain::CellLine => *cell_lines.entry(&m.tumor_type).or_default() += 1,
        }
    }
    let mut cell_drugs: BTreeSet<&str> = BTreeSet::new();
    let mut patient_drugs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut labeled: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for l in labels {
        let Some(m) = dataset.meta_of(&l.sample_id) else {
            continue;
        };
        match m.domain {
            Domain::CellLine => {
                cell_drugs.insert(&l.drug_id);
            }
            Domain::Patient => {
                patient_drugs.entry(&m.tumor_type).or_default().insert(&l.drug_id);
                labeled.entry(&m.tumor_type).or_default().insert(&l.sample_id);
            }
        }
    }

    patients
        .iter()
        .map(|(&tumor, &n_patients)| {
            let n_cell_lines = cell_lines.get(tumor).copied().unwrap_or(0);
            let n_labeled = labeled.get(tumor).map_or(0, BTreeSet::len);
            let overlap: BTreeSet<String> = patient_drugs
                .get(tumor)
                .map(|d| d.intersection(&cell_drugs).map(|s| s.to_string()).collect())
                .unwrap_or_default();
            let mut failures = Vec::new();
            if n_patients <= thresholds.patients_above {
                failures.push(QcFailure::Patients {
                    count: n_patients,
                    threshold: thresholds.patients_above,
                });
            }
            if n_cell_lines <= thresholds.cell_lines_above {
                failures.push(QcFailure::CellLines {
                    count: n_cell_lines,
                    threshold: thresholds.cell_lines_above,
                });
            }
            if n_labeled < thresholds.min_labeled_patients {
                failures.push(QcFailure::LabeledPatients {
                    count: n_labeled,
                    threshold: thresholds.min_labeled_patients,
                });
            }
            if overlap.len() <= thresholds.overlap_drugs_above {
                failures.push(QcFailure::Overlap {
                    count: overlap.len(),
                    threshold: thresholds.overlap_drugs_above,
                });
            }
            QcOutcome {
                tumor_type: tumor.to_string(),
                n_patients,
                n_cell_lines,
                n_labeled_patients: n_labeled,
                overlap_drugs: overlap,
                failures,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ResponseKind, SampleMeta};
    use crate::nn::Matrix;
    use proptest::prelude::*;

    /// Tumor "T" with the given counts; cell lines labeled for `cell_drugs`,
    /// the first `labeled` patients labeled for `patient_drugs`.
    fn fixture(
        patients: usize,
        cells: usize,
        labeled: usize,
        patient_drugs: &[&str],
        cell_drugs: &[&str],
    ) -> (ExpressionDataset, Vec<ResponseLabel>) {
        let mut ids = Vec::new();
        let mut meta = Vec::new();
        for i in 0..patients {
            ids.push(format!("p{i}"));
            meta.push(SampleMeta {
                domain: Domain::Patient,
                tumor_type: "T".into(),
            });
        }
        for i in 0..cells {
            ids.push(format!("c{i}"));
            meta.push(SampleMeta {
                domain: Domain::CellLine,
                tumor_type: "T".into(),
            });
        }
        let n = ids.len();
        let ds = ExpressionDataset::new(ids, vec!["g".into()], Matrix::zeros((n, 1)), meta).unwrap();
        let mut labels = Vec::new();
        for i in 0..labeled {
            for d in patient_drugs {
                labels.push(ResponseLabel::new(format!("p{i}"), *d, ResponseKind::PatientPfs, 1.0));
            }
        }
        for i in 0..cells.min(3) {
            for d in cell_drugs {
                labels.push(ResponseLabel::new(format!("c{i}"), *d, ResponseKind::CellLineAuc, 0.5));
            }
        }
        (ds, labels)
    }

    #[test]
    fn boundary_satisfied_is_kept() {
        let (ds, labels) = fixture(51, 31, 7, &["a", "b"], &["a", "b", "c"]);
        let out = qc_filter(&ds, &labels, &QcThresholds::default());
        assert!(out[0].kept(), "{:?}", out[0].failures);
    }

    #[test]
    fn fifty_patients_is_excluded() {
        let (ds, labels) = fixture(50, 31, 7, &["a", "b"], &["a", "b"]);
        let out = qc_filter(&ds, &labels, &QcThresholds::default());
        assert_eq!(out[0].reason(), "patients ≤ 50");
    }

    #[test]
    fn single_overlap_is_excluded() {
        let (ds, labels) = fixture(51, 31, 7, &["a", "b"], &["a"]);
        let out = qc_filter(&ds, &labels, &QcThresholds::default());
        assert_eq!(out[0].reason(), "overlap ≤ 1");
    }

    #[test]
    fn six_labeled_patients_is_excluded() {
        let (ds, labels) = fixture(51, 31, 6, &["a", "b"], &["a", "b"]);
        let out = qc_filter(&ds, &labels, &QcThresholds::default());
        assert_eq!(out[0].reason(), "labeled patients < 7");
    }

    proptest! {
        #[test]
        fn adding_samples_never_removes_a_kept_type(
            p in 40usize..70, c in 25usize..40, l in 5usize..10, extra_p in 0usize..20, extra_c in 0usize..20, extra_l in 0usize..5,
        ) {
            let l = l.min(p);
            let (ds, labels) = fixture(p, c, l, &["a", "b"], &["a", "b"]);
            let before = qc_filter(&ds, &labels, &QcThresholds::default())[0].kept();
            let (ds2, labels2) = fixture(p + extra_p, c + extra_c, (l + extra_l).min(p + extra_p), &["a", "b"], &["a", "b"]);
            let after = qc_filter(&ds2, &labels2, &QcThresholds::default())[0].kept();
            prop_assert!(!before || after);
        }
    }
}
