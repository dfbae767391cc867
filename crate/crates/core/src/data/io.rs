use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::{
    featurize_smiles, Domain, DrugFeature, DrugTable, ExpressionDataset, ResponseKind, ResponseLabel, SampleMeta,
    DRUG_DIM,
};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::tsv::{self, fmt_f64, Table};

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Values are raw TPM and get `log2(TPM + 1)`.
    pub raw_tpm: bool,
    /// Keep only the top-K genes by variance after intersection.
    pub top_k_variance: Option<usize>,
}

/// Metadata table `sample_id, domain, tumor_type`.
pub fn load_metadata(path: &Path) -> Result<HashMap<String, SampleMeta>> {
    let t = Table::read(path)?;
    let (c_id, c_dom, c_tum) = (t.column("sample_id")?, t.column("domain")?, t.column("tumor_type")?);
    let mut out = HashMap::new();
    for (line, row) in &t.rows {
        let id = t.field(*line, row, c_id)?.to_string();
        let domain: Domain = t
            .field(*line, row, c_dom)?
            .parse()
            .map_err(|e: Error| t.parse_error(*line, c_dom + 1, e.to_string()))?;
        let tumor_type = t.field(*line, row, c_tum)?.to_string();
        if tumor_type.is_empty() {
            return Err(t.parse_error(*line, c_tum + 1, "empty tumor type"));
        }
        if out.insert(id.clone(), SampleMeta { domain, tumor_type }).is_some() {
            return Err(Error::Ingest(format!("duplicate sample id {id} in {}", t.path)));
        }
    }
    Ok(out)
}

/// Load one or more expression matrices plus metadata into a single dataset.
///
/// Genes are intersected across files and ordered lexicographically. Samples
/// without a metadata row are dropped.
pub fn load_expression(paths: &[PathBuf], meta_path: &Path, opts: &LoadOptions) -> Result<ExpressionDataset> {
    if paths.is_empty() {
        return Err(Error::invalid("no expression files given"));
    }
    let meta = load_metadata(meta_path)?;
    let tables = paths.iter().map(|p| Table::read(p)).collect::<Result<Vec<_>>>()?;

    let mut common: Option<BTreeSet<String>> = None;
    for t in &tables {
        if t.header.first().map(String::as_str) != Some("sample_id") {
            return Err(t.parse_error(1, 1, "first header column must be `sample_id`"));
        }
        let mut genes = BTreeSet::new();
        for g in &t.header[1..] {
            if !genes.insert(g.clone()) {
                return Err(Error::Ingest(format!("duplicate gene {g} in {}", t.path)));
            }
        }
        common = Some(match common {
            None => genes,
            Some(c) => c.intersection(&genes).cloned().collect(),
        });
    }
    let gene_ids: Vec<String> = common.unwrap_or_default().into_iter().collect();
    if gene_ids.is_empty() {
        return Err(Error::Ingest("expression files share no genes".into()));
    }

    let mut sample_ids = Vec::new();
    let mut metas = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = 0usize;
    for t in &tables {
        let cols: Vec<usize> = gene_ids
            .iter()
            .map(|g| t.header.iter().position(|h| h == g).expect("gene in intersection"))
            .collect();
        for (line, row) in &t.rows {
            let id = t.field(*line, row, 0)?.to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::Ingest(format!("duplicate sample id {id}")));
            }
            if row.len() != t.header.len() {
                return Err(t.parse_error(
                    *line,
                    row.len().min(t.header.len()) + 1,
                    format!("expected {} fields, found {}", t.header.len(), row.len()),
                ));
            }
            let Some(m) = meta.get(&id) else {
                dropped += 1;
                continue;
            };
            for &c in &cols {
                let v = t.float(*line, row, c)?;
                let v = if opts.raw_tpm {
                    if v < 0.0 {
                        return Err(t.parse_error(*line, c + 1, "negative TPM"));
                    }
                    (v + 1.0).log2()
                } else {
                    v
                };
                rows.push(v);
            }
            sample_ids.push(id);
            metas.push(m.clone());
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} expression rows without metadata");
    }
    let values =
        Matrix::from_shape_vec((sample_ids.len(), gene_ids.len()), rows).expect("one value per sample and gene");
    let ds = ExpressionDataset::new(sample_ids, gene_ids, values, metas)?;
    match opts.top_k_variance {
        Some(k) => ds.top_variance_genes(k),
        None => Ok(ds),
    }
}

pub fn write_expression(path: &Path, ds: &ExpressionDataset) -> Result<()> {
    let mut header = vec!["sample_id"];
    header.extend(ds.gene_ids().iter().map(String::as_str));
    let rows = ds.sample_ids().iter().enumerate().map(|(i, id)| {
        let mut r = vec![id.clone()];
        r.extend(ds.values().row(i).iter().map(|&v| fmt_f64(v)));
        r
    });
    tsv::write(path, &header, rows)
}

pub fn write_metadata(path: &Path, ds: &ExpressionDataset) -> Result<()> {
    let rows = ds
        .sample_ids()
        .iter()
        .zip(ds.meta())
        .map(|(id, m)| vec![id.clone(), m.domain.to_string(), m.tumor_type.clone()]);
    tsv::write(path, &["sample_id", "domain", "tumor_type"], rows)
}

/// Labels table `sample_id, drug_id, kind, raw_value[, binary]`.
pub fn load_labels(path: &Path) -> Result<Vec<ResponseLabel>> {
    let t = Table::read(path)?;
    let c_s = t.column("sample_id")?;
    let c_d = t.column("drug_id")?;
    let c_k = t.column("kind")?;
    let c_v = t.column("raw_value")?;
    let c_b = t.column("binary").ok();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let kind: ResponseKind = t
            .field(*line, row, c_k)?
            .parse()
            .map_err(|e: Error| t.parse_error(*line, c_k + 1, e.to_string()))?;
        let mut label = ResponseLabel::new(
            t.field(*line, row, c_s)?,
            t.field(*line, row, c_d)?,
            kind,
            t.float(*line, row, c_v)?,
        );
        if let Some(c) = c_b {
            label.binary = match row.get(c).map(String::as_str) {
                None | Some("") => None,
                Some("1") => Some(true),
                Some("0") => Some(false),
                Some(other) => {
                    return Err(t.parse_error(*line, c + 1, format!("binary must be 0 or 1, got `{other}`")))
                }
            };
        }
        out.push(label);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[ResponseLabel]) -> Result<()> {
    let rows = labels.iter().map(|l| {
        vec![
            l.sample_id.clone(),
            l.drug_id.clone(),
            l.kind.to_string(),
            fmt_f64(l.raw_value),
            l.binary.map_or(String::new(), |b| u8::from(b).to_string()),
        ]
    });
    tsv::write(path, &["sample_id", "drug_id", "kind", "raw_value", "binary"], rows)
}

/// Drug table `drug_id, smiles[, v1..v300]`. Rows without a vector are
/// featurized from their SMILES.
pub fn load_drugs(path: &Path) -> Result<DrugTable> {
    let t = Table::read(path)?;
    let c_d = t.column("drug_id")?;
    let c_s = t.column("smiles")?;
    let vec_cols: Vec<usize> = (1..=DRUG_DIM)
        .map(|i| t.column(&format!("v{i}")))
        .collect::<Result<_>>()
        .unwrap_or_default();
    let mut out = DrugTable::new();
    for (line, row) in &t.rows {
        let id = t.field(*line, row, c_d)?.to_string();
        let smiles = t.field(*line, row, c_s)?.to_string();
        let has_vector = !vec_cols.is_empty() && vec_cols.iter().any(|&c| row.get(c).is_some_and(|v| !v.is_empty()));
        let vector = if has_vector {
            vec_cols
                .iter()
                .map(|&c| t.float(*line, row, c))
                .collect::<Result<Vec<_>>>()?
        } else {
            featurize_smiles(&smiles).map_err(|e| t.parse_error(*line, c_s + 1, e.to_string()))?
        };
        let feat = DrugFeature::new(id.clone(), smiles, vector)?;
        if out.insert(id.clone(), feat).is_some() {
            return Err(Error::Ingest(format!("duplicate drug id {id}")));
        }
    }
    Ok(out)
}

pub fn write_drugs(path: &Path, drugs: &DrugTable) -> Result<()> {
    let names: Vec<String> = (1..=DRUG_DIM).map(|i| format!("v{i}")).collect();
    let mut header = vec!["drug_id", "smiles"];
    header.extend(names.iter().map(String::as_str));
    let rows = drugs.values().map(|d| {
        let mut r = vec![d.drug_id.clone(), d.smiles.clone()];
        r.extend(d.vector.iter().map(|&v| fmt_f64(v)));
        r
    });
    tsv::write(path, &header, rows)
}
