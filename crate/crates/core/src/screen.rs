//! Indication-level drug screening: patient scores (DRP), efficient drugs per
//! patient (EDP), per-indication rankings (EDI), the merged drug-efficacy
//! table (DEI) and evidence-based qualification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::{DrugTable, ExpressionDataset, ResponseLabel};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::train::predict_samples;
use crate::tsv::{self, fmt_f64, Table};
use crate::zoo::Model;

pub const DEFAULT_FRACTION: f64 = 0.05;
pub const DEFAULT_TOP_N: usize = 10;

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(format!("duplicate {what} {id}")));
        }
    }
    Ok(())
}

/// Patient × drug response scores for one tumor type.
#[derive(Debug, Clone, PartialEq)]
pub struct DrpMatrix {
    pub tumor_type: String,
    pub patient_ids: Vec<String>,
    pub drug_ids: Vec<String>,
    pub scores: Matrix,
}

impl DrpMatrix {
    pub fn new(
        tumor_type: impl Into<String>,
        patient_ids: Vec<String>,
        drug_ids: Vec<String>,
        scores: Matrix,
    ) -> Result<Self> {
        if scores.dim() != (patient_ids.len(), drug_ids.len()) {
            return Err(Error::Shape {
                context: "DRP scores vs ids",
                left: scores.dim(),
                right: (patient_ids.len(), drug_ids.len()),
            });
        }
        check_unique(&patient_ids, "patient")?;
        check_unique(&drug_ids, "drug")?;
        if let Some(v) = scores.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::invalid(format!("DRP score {v} is outside [0, 1]")));
        }
        Ok(Self {
            tumor_type: tumor_type.into(),
            patient_ids,
            drug_ids,
            scores,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn n_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    /// Drug column indices of row `i`, best first; ties by drug id.
    fn ranked(&self, i: usize) -> Vec<usize> {
        let row = self.scores.row(i);
        let mut order: Vec<usize> = (0..self.n_drugs()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .total_cmp(&row[a])
                .then_with(|| self.drug_ids[a].cmp(&self.drug_ids[b]))
        });
        order
    }
}

/// Score every patient against every drug in `drug_ids`.
pub fn build_drp(
    model: &Model,
    dataset: &ExpressionDataset,
    patient_ids: &[String],
    drugs: &DrugTable,
    drug_ids: &[String],
    tumor_type: &str,
) -> Result<DrpMatrix> {
    let mut scores = Matrix::zeros((patient_ids.len(), drug_ids.len()));
    for (j, d) in drug_ids.iter().enumerate() {
        let feat = drugs.get(d).ok_or_else(|| Error::MissingDrugFeature(d.clone()))?;
        let col = predict_samples(model, dataset, patient_ids, &feat.vector)?;
        for (i, v) in col.into_iter().enumerate() {
            scores[[i, j]] = v;
        }
    }
    DrpMatrix::new(tumor_type, patient_ids.to_vec(), drug_ids.to_vec(), scores)
}

/// Efficient (patient, drug) pairs, grouped by patient in DRP row order and
/// ranked within each patient.
#[derive(Debug, Clone, PartialEq)]
pub struct EdpSet {
    pub tumor_type: String,
    pub n_patients: usize,
    pub k: usize,
    pub pairs: Vec<(String, String)>,
}

/// `⌈fraction·n_drugs⌉`.
pub fn edp_k(n_drugs: usize, fraction: f64) -> usize {
    (fraction * n_drugs as f64).ceil() as usize
}

/// Keep each patient's `⌈fraction·D⌉` highest-scoring drugs.
pub fn edp_filter(drp: &DrpMatrix, fraction: f64) -> Result<EdpSet> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let k = edp_k(drp.n_drugs(), fraction);
    let mut pairs = Vec::with_capacity(drp.n_patients() * k);
    for (i, p) in drp.patient_ids.iter().enumerate() {
        for j in drp.ranked(i).into_iter().take(k) {
            pairs.push((p.clone(), drp.drug_ids[j].clone()));
        }
    }
    Ok(EdpSet {
        tumor_type: drp.tumor_type.clone(),
        n_patients: drp.n_patients(),
        k,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdiEntry {
    pub drug_id: String,
    pub count: usize,
    /// `count` over the number of patients.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdiList {
    pub tumor_type: String,
    pub entries: Vec<EdiEntry>,
}

/// Drugs efficient for the most patients: count descending, drug id
/// ascending, at most `top_n`.
pub fn edi_rank(edp: &EdpSet, top_n: usize) -> Result<EdiList> {
    if edp.pairs.is_empty() || edp.n_patients == 0 {
        return Err(Error::invalid("EDP set is empty"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, d) in &edp.pairs {
        *counts.entry(d.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let entries = ranked
        .into_iter()
        .take(top_n)
        .map(|(d, c)| EdiEntry {
            drug_id: d.to_string(),
            count: c,
            fraction: c as f64 / edp.n_patients as f64,
        })
        .collect();
    Ok(EdiList {
        tumor_type: edp.tumor_type.clone(),
        entries,
    })
}

/// Drug × tumor-type efficacy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeiTable {
    /// Sorted union of every EDI drug.
    pub drug_ids: Vec<String>,
    /// Uppercase tumor names, sorted.
    pub tumor_types: Vec<String>,
    /// `efficient[drug][tumor]`.
    pub efficient: Vec<Vec<bool>>,
}

impl DeiTable {
    pub fn is_efficient(&self, drug_id: &str, tumor_type: &str) -> Option<bool> {
        let d = self.drug_ids.binary_search_by(|x| x.as_str().cmp(drug_id)).ok()?;
        let t = self.tumor_index(tumor_type)?;
        Some(self.efficient[d][t])
    }

    fn tumor_index(&self, tumor_type: &str) -> Option<usize> {
        let upper = tumor_type.trim().to_uppercase();
        self.tumor_types.binary_search(&upper).ok()
    }
}

pub fn merge_dei(lists: &[EdiList]) -> Result<DeiTable> {
    if lists.is_empty() {
        return Err(Error::invalid("DEI merge needs at least one EDI list"));
    }
    let mut by_tumor: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for l in lists {
        let key = l.tumor_type.trim().to_uppercase();
        if by_tumor.contains_key(&key) {
            return Err(Error::invalid(format!("two EDI lists for tumor type {key}")));
        }
        by_tumor.insert(key, l.entries.iter().map(|e| e.drug_id.as_str()).collect());
    }
    let drug_ids: Vec<String> = by_tumor
        .values()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let efficient = drug_ids
        .iter()
        .map(|d| by_tumor.values().map(|s| s.contains(d.as_str())).collect())
        .collect();
    Ok(DeiTable {
        drug_ids,
        tumor_types: by_tumor.into_keys().collect(),
        efficient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvidenceSource {
    DrugBank,
    ClinicalTrials,
    Repurposing,
}

impl fmt::Display for EvidenceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DrugBank => "drugbank",
            Self::ClinicalTrials => "clinicaltrials",
            Self::Repurposing => "repurposing",
        })
    }
}

impl FromStr for EvidenceSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drugbank" => Ok(Self::DrugBank),
            "clinicaltrials" => Ok(Self::ClinicalTrials),
            "repurposing" => Ok(Self::Repurposing),
            other => Err(Error::invalid(format!("unknown evidence source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EvidenceRecord {
    pub drug_id: String,
    pub tumor_type: String,
    pub source: EvidenceSource,
}

/// Known (drug, indication) links with unique `(drug, tumor, source)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceDb {
    records: BTreeSet<EvidenceRecord>,
}

impl EvidenceDb {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a record with its tumor name uppercased. Duplicates are an error.
    pub fn insert(&mut self, drug_id: &str, tumor_type: &str, source: EvidenceSource) -> Result<()> {
        let r = EvidenceRecord {
            drug_id: drug_id.trim().to_string(),
            tumor_type: tumor_type.trim().to_uppercase(),
            source,
        };
        if !self.records.insert(r) {
            return Err(Error::invalid(format!(
                "duplicate evidence record ({drug_id}, {tumor_type}, {source})"
            )));
        }
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = &EvidenceRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Qualified,
    Disqualified,
    Unsupported,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Qualified => "qualified",
            Self::Disqualified => "disqualified",
            Self::Unsupported => "unsupported",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrugVerdict {
    pub drug_id: String,
    pub verdict: Verdict,
    /// Evidence records for this drug at DEI tumor types.
    pub matched_records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qualification {
    /// One verdict per DEI drug, in DEI order.
    pub verdicts: Vec<DrugVerdict>,
    /// Records that land on an efficient DEI cell.
    pub edi_records: usize,
    /// Records that land on an efficient cell of a qualified drug.
    pub qualified_records: usize,
    /// Records skipped because their tumor type is not a DEI column.
    pub skipped_unknown_tumor: usize,
}

impl Qualification {
    pub fn qualified(&self) -> impl Iterator<Item = &DrugVerdict> {
        self.verdicts.iter().filter(|v| v.verdict == Verdict::Qualified)
    }
}

/// Judge each DEI drug: disqualified when any evidence-recorded tumor is
/// inefficient, qualified when at least one evidence-recorded tumor is
/// efficient and none is inefficient, unsupported without evidence.
pub fn qualify(dei: &DeiTable, evidence: &EvidenceDb) -> Qualification {
    let nd = dei.drug_ids.len();
    let mut hits_eff = vec![0usize; nd];
    let mut hits_ineff = vec![0usize; nd];
    let mut skipped = 0;
    for r in evidence.records() {
        let Some(t) = dei.tumor_index(&r.tumor_type) else {
            log::warn!(
                "evidence for {} names unknown tumor type {}; skipped",
                r.drug_id,
                r.tumor_type
            );
            skipped += 1;
            continue;
        };
        let Ok(d) = dei.drug_ids.binary_search(&r.drug_id) else {
            continue;
        };
        if dei.efficient[d][t] {
            hits_eff[d] += 1;
        } else {
            hits_ineff[d] += 1;
        }
    }
    let mut verdicts = Vec::with_capacity(nd);
    let mut qualified_records = 0;
    for d in 0..nd {
        let verdict = if hits_ineff[d] > 0 {
            Verdict::Disqualified
        } else if hits_eff[d] > 0 {
            qualified_records += hits_eff[d];
            Verdict::Qualified
        } else {
            Verdict::Unsupported
        };
        verdicts.push(DrugVerdict {
            drug_id: dei.drug_ids[d].clone(),
            verdict,
            matched_records: hits_eff[d] + hits_ineff[d],
        });
    }
    Qualification {
        verdicts,
        edi_records: hits_eff.iter().sum(),
        qualified_records,
        skipped_unknown_tumor: skipped,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDrug {
    pub rank: usize,
    pub drug_id: String,
    pub score: f64,
    /// Observed binary response, when labels were supplied.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRanking {
    pub patient_id: String,
    pub drugs: Vec<RankedDrug>,
}

/// Every patient's drugs sorted by score (ties by drug id), ranks from 1.
pub fn per_patient_report(drp: &DrpMatrix, labels: Option<&[ResponseLabel]>) -> Vec<PatientRanking> {
    let observed: BTreeMap<(&str, &str), bool> = labels
        .unwrap_or_default()
        .iter()
        .filter_map(|l| l.binary.map(|b| ((l.sample_id.as_str(), l.drug_id.as_str()), b)))
        .collect();
    drp.patient_ids
        .iter()
        .enumerate()
        .map(|(i, p)| PatientRanking {
            patient_id: p.clone(),
            drugs: drp
                .ranked(i)
                .into_iter()
                .enumerate()
                .map(|(r, j)| RankedDrug {
                    rank: r + 1,
                    drug_id: drp.drug_ids[j].clone(),
                    score: drp.scores[[i, j]],
                    label: observed.get(&(p.as_str(), drp.drug_ids[j].as_str())).copied(),
                })
                .collect(),
        })
        .collect()
}

/// Everything the screen produces for a set of tumor types.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenResult {
    pub edp: Vec<EdpSet>,
    pub edi: Vec<EdiList>,
    pub dei: DeiTable,
    pub qualification: Qualification,
}

/// EDP → EDI for every DRP matrix, then DEI and qualification.
pub fn run_screen(drps: &[DrpMatrix], fraction: f64, top_n: usize, evidence: &EvidenceDb) -> Result<ScreenResult> {
    let edp = drps
        .iter()
        .map(|d| edp_filter(d, fraction))
        .collect::<Result<Vec<_>>>()?;
    let edi = edp.iter().map(|e| edi_rank(e, top_n)).collect::<Result<Vec<_>>>()?;
    let dei = merge_dei(&edi)?;
    let qualification = qualify(&dei, evidence);
    Ok(ScreenResult {
        edp,
        edi,
        dei,
        qualification,
    })
}

pub fn write_drp(path: &Path, drp: &DrpMatrix) -> Result<()> {
    let mut header = vec!["patient_id"];
    header.extend(drp.drug_ids.iter().map(String::as_str));
    tsv::write(
        path,
        &header,
        drp.patient_ids.iter().enumerate().map(|(i, p)| {
            let mut row = vec![p.clone()];
            row.extend(drp.scores.row(i).iter().map(|&v| fmt_f64(v)));
            row
        }),
    )
}

pub fn read_drp(path: &Path, tumor_type: &str) -> Result<DrpMatrix> {
    let t = Table::read(path)?;
    if t.header.first().map(String::as_str) != Some("patient_id") {
        return Err(t.parse_error(1, 1, "first column must be `patient_id`"));
    }
    let drug_ids = t.header[1..].to_vec();
    let mut patient_ids = Vec::with_capacity(t.rows.len());
    let mut scores = Matrix::zeros((t.rows.len(), drug_ids.len()));
    for (i, (line, row)) in t.rows.iter().enumerate() {
        if row.len() != t.header.len() {
            return Err(t.parse_error(*line, row.len().min(t.header.len()) + 1, "wrong field count"));
        }
        patient_ids.push(row[0].clone());
        for j in 0..drug_ids.len() {
            scores[[i, j]] = t.float(*line, row, j + 1)?;
        }
    }
    DrpMatrix::new(tumor_type, patient_ids, drug_ids, scores)
}

pub fn write_edp(path: &Path, edp: &EdpSet) -> Result<()> {
    tsv::write(
        path,
        &["patient_id", "drug_id"],
        edp.pairs.iter().map(|(p, d)| vec![p.clone(), d.clone()]),
    )
}

pub fn write_edi(path: &Path, edi: &EdiList) -> Result<()> {
    tsv::write(
        path,
        &["drug_id", "count", "fraction"],
        edi.entries
            .iter()
            .map(|e| vec![e.drug_id.clone(), e.count.to_string(), fmt_f64(e.fraction)]),
    )
}

pub fn write_dei(path: &Path, dei: &DeiTable) -> Result<()> {
    let mut header = vec!["drug_id"];
    header.extend(dei.tumor_types.iter().map(String::as_str));
    tsv::write(
        path,
        &header,
        dei.drug_ids.iter().zip(&dei.efficient).map(|(d, row)| {
            let mut r = vec![d.clone()];
            r.extend(row.iter().map(|&e| u8::from(e).to_string()));
            r
        }),
    )
}

pub fn read_evidence(path: &Path) -> Result<EvidenceDb> {
    let t = Table::read(path)?;
    let (c_d, c_t, c_s) = (t.column("drug_id")?, t.column("tumor_type")?, t.column("source")?);
    let mut db = EvidenceDb::new();
    for (line, row) in &t.rows {
        let source: EvidenceSource = t
            .field(*line, row, c_s)?
            .parse()
            .map_err(|e: Error| t.parse_error(*line, c_s + 1, e.to_string()))?;
        db.insert(t.field(*line, row, c_d)?, t.field(*line, row, c_t)?, source)
            .map_err(|e| t.parse_error(*line, 1, e.to_string()))?;
    }
    Ok(db)
}

pub fn write_evidence(path: &Path, db: &EvidenceDb) -> Result<()> {
    tsv::write(
        path,
        &["drug_id", "tumor_type", "source"],
        db.records()
            .map(|r| vec![r.drug_id.clone(), r.tumor_type.clone(), r.source.to_string()]),
    )
}

pub fn write_verdicts(path: &Path, q: &Qualification) -> Result<()> {
    tsv::write(
        path,
        &["drug_id", "verdict", "matched_records"],
        q.verdicts
            .iter()
            .map(|v| vec![v.drug_id.clone(), v.verdict.to_string(), v.matched_records.to_string()]),
    )
}

pub fn write_patient_report(path: &Path, report: &[PatientRanking]) -> Result<()> {
    let mut rows = Vec::new();
    for p in report {
        for d in &p.drugs {
            rows.push(vec![
                p.patient_id.clone(),
                d.rank.to_string(),
                d.drug_id.clone(),
                fmt_f64(d.score),
                d.label.map_or_else(|| "NA".to_string(), |b| u8::from(b).to_string()),
            ]);
        }
    }
    tsv::write(path, &["patient_id", "rank", "drug_id", "score", "label"], rows)
}
