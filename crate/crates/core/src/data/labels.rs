use std::collections::BTreeMap;

use super::{ResponseKind, ResponseLabel};
use crate::error::{Error, Result};

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Responder flags for one group of raw values.
///
/// AUC responders lie strictly below the median, PFS responders strictly
/// above; values equal to the median are non-responders.
pub fn median_split(values: &[f64], kind: ResponseKind) -> Result<Vec<bool>> {
    if values.len() < 2 {
        return Err(Error::invalid("cannot binarize singleton"));
    }
    let med = median(values).expect("non-empty");
    Ok(values
        .iter()
        .map(|&v| match kind {
            ResponseKind::CellLineAuc => v < med,
            ResponseKind::PatientPfs => v > med,
        })
        .collect())
}

/// Set `binary` on every label by a median split within each
/// (tumor type × response kind) group. `tumor_of` maps sample ids to tumor
/// types; labels for unknown samples are an error.
pub fn binarize_labels<'a, F>(labels: &[ResponseLabel], tumor_of: F) -> Result<Vec<ResponseLabel>>
where
    F: Fn(&str) -> Option<&'a str>,
{
    let mut groups: BTreeMap<(&str, ResponseKind), Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        let tumor = tumor_of(&l.sample_id)
            .ok_or_else(|| Error::invalid(format!("label for unknown sample {}", l.sample_id)))?;
        groups.entry((tumor, l.kind)).or_default().push(i);
    }
    let mut out = labels.to_vec();
    for ((tumor, kind), idx) in groups {
        let values: Vec<f64> = idx.iter().map(|&i| labels[i].raw_value).collect();
        let flags = median_split(&values, kind)
            .map_err(|_| Error::invalid(format!("cannot binarize singleton ({tumor}, {kind})")))?;
        for (&i, flag) in idx.iter().zip(flags) {
            out[i].binary = Some(flag);
        }
    }
    Ok(out)
}
