//! Domain-alignment diagnostics between cell-line and patient samples.

use std::path::Path;

use crate::data::{Domain, ExpressionDataset};
use crate::error::{Error, Result};
use crate::kernel;
use crate::nn::Matrix;
use crate::tsv::{self, fmt_f64};
use crate::zoo::{Model, EMBED_DIM};

/// Reports with a relative MMD below this value are flagged.
pub const RELATIVE_MMD_THRESHOLD: f64 = 0.3;

/// Variance floor of the fitted diagonal Gaussians.
pub const KL_VARIANCE_FLOOR: f64 = 1e-6;

/// Kernel bandwidth for [`mmd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MmdBandwidth {
    Fixed(f64),
    /// σ = median of the pooled pairwise distances.
    MedianHeuristic,
}

fn check_widths(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::Shape {
            context: "alignment sample sets",
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(())
}

/// Bandwidth actually used for `x ∪ y`.
pub fn resolve_bandwidth(x: &Matrix, y: &Matrix, bandwidth: MmdBandwidth) -> Result<f64> {
    check_widths(x, y)?;
    match bandwidth {
        MmdBandwidth::Fixed(s) if s.is_finite() && s > 0.0 => Ok(s),
        MmdBandwidth::Fixed(s) => Err(Error::invalid(format!("bandwidth must be positive, got {s}"))),
        MmdBandwidth::MedianHeuristic => {
            let sq = kernel::squared_distances(&kernel::stack_rows(x, y));
            match kernel::median_distance(&sq) {
                Some(m) if m.value > 0.0 => Ok(m.value),
                _ => {
                    log::warn!("median pairwise distance is zero; using bandwidth 1.0");
                    Ok(1.0)
                }
            }
        }
    }
}

/// Biased squared MMD with a Gaussian kernel, floored at zero.
pub fn mmd_sq(x: &Matrix, y: &Matrix, bandwidth: MmdBandwidth) -> Result<f64> {
    check_widths(x, y)?;
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::invalid("mmd needs at least one sample per set"));
    }
    let sigma = resolve_bandwidth(x, y, bandwidth)?;
    let sq = kernel::squared_distances(&kernel::stack_rows(x, y));
    let m = x.nrows();
    let denom = 2.0 * sigma * sigma;
    // block means summed separately so that X = Y cancels exactly
    let block = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        let count = (rows.len() * cols.len()) as f64;
        let mut s = 0.0;
        for i in rows {
            for j in cols.clone() {
                s += (-sq[[i, j]] / denom).exp();
            }
        }
        s / count
    };
    let n = sq.nrows();
    let v = block(0..m, 0..m) + block(m..n, m..n) - 2.0 * block(0..m, m..n);
    Ok(v.max(0.0))
}

pub fn mmd(x: &Matrix, y: &Matrix, bandwidth: MmdBandwidth) -> Result<f64> {
    mmd_sq(x, y, bandwidth).map(f64::sqrt)
}

/// Embedding-space MMD over raw-space MMD, each with its own median bandwidth.
pub fn relative_mmd(emb_x: &Matrix, emb_y: &Matrix, raw_x: &Matrix, raw_y: &Matrix) -> Result<f64> {
    if emb_x.nrows() != raw_x.nrows() || emb_y.nrows() != raw_y.nrows() {
        return Err(Error::invalid("embeddings and raw profiles cover different samples"));
    }
    let raw = mmd(raw_x, raw_y, MmdBandwidth::MedianHeuristic)?;
    if raw <= 0.0 {
        return Err(Error::invalid("degenerate reference: raw MMD is zero"));
    }
    Ok(mmd(emb_x, emb_y, MmdBandwidth::MedianHeuristic)? / raw)
}

/// Per-column mean and population variance, floored.
fn diag_gaussian(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    x.columns()
        .into_iter()
        .map(|c| {
            let mu = c.sum() / n;
            let var = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            (mu, var.max(KL_VARIANCE_FLOOR))
        })
        .unzip()
}

/// `KL(N(m0, v0) ‖ N(m1, v1))` summed over independent dimensions.
fn kl_diag(m0: &[f64], v0: &[f64], m1: &[f64], v1: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..m0.len() {
        let d = m0[i] - m1[i];
        kl += 0.5 * ((v1[i] / v0[i]).ln() + (v0[i] + d * d) / v1[i] - 1.0);
    }
    kl.max(0.0)
}

/// `(KL(X‖Y), KL(Y‖X))` between diagonal Gaussians fitted by maximum
/// likelihood.
pub fn kl_gaussian(x: &Matrix, y: &Matrix) -> Result<(f64, f64)> {
    check_widths(x, y)?;
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::invalid("KL needs at least two samples per set"));
    }
    let (mx, vx) = diag_gaussian(x);
    let (my, vy) = diag_gaussian(y);
    Ok((kl_diag(&mx, &vx, &my, &vy), kl_diag(&my, &vy, &mx, &vx)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub tumor_type: String,
    pub method: String,
    pub mmd: f64,
    pub relative_mmd: f64,
    pub kl_patient_to_cell: f64,
    pub kl_cell_to_patient: f64,
}

impl AlignmentReport {
    pub fn below_threshold(&self) -> bool {
        self.relative_mmd < RELATIVE_MMD_THRESHOLD
    }
}

/// Compare cell-line and patient embeddings against their raw profiles.
pub fn alignment_report(
    tumor_type: &str,
    method: &str,
    emb_cell: &Matrix,
    emb_patient: &Matrix,
    raw_cell: &Matrix,
    raw_patient: &Matrix,
) -> Result<AlignmentReport> {
    let mmd = mmd(emb_cell, emb_patient, MmdBandwidth::MedianHeuristic)?;
    let relative_mmd = relative_mmd(emb_cell, emb_patient, raw_cell, raw_patient)?;
    let (kl_pc, kl_cp) = kl_gaussian(emb_patient, emb_cell)?;
    let out = AlignmentReport {
        tumor_type: tumor_type.to_string(),
        method: method.to_string(),
        mmd,
        relative_mmd,
        kl_patient_to_cell: kl_pc,
        kl_cell_to_patient: kl_cp,
    };
    if ![out.mmd, out.relative_mmd, kl_pc, kl_cp].iter().all(|v| v.is_finite()) {
        return Err(Error::NumericInstability {
            param: format!("alignment report {tumor_type}/{method}"),
        });
    }
    Ok(out)
}

pub const ALIGNMENT_HEADER: [&str; 7] = [
    "tumor_type",
    "method",
    "mmd",
    "relative_mmd",
    "kl_pc",
    "kl_cp",
    "below_0.3_flag",
];

pub fn write_alignment_reports(path: &Path, reports: &[AlignmentReport]) -> Result<()> {
    tsv::write(
        path,
        &ALIGNMENT_HEADER,
        reports.iter().map(|r| {
            vec![
                r.tumor_type.clone(),
                r.method.clone(),
                fmt_f64(r.mmd),
                fmt_f64(r.relative_mmd),
                fmt_f64(r.kl_patient_to_cell),
                fmt_f64(r.kl_cell_to_patient),
                r.below_threshold().to_string(),
            ]
        }),
    )
}

/// Shared embeddings of `ids`, each encoded through its own domain's path.
pub fn shared_embeddings(model: &Model, dataset: &ExpressionDataset, ids: &[String]) -> Result<Matrix> {
    let mut out = Matrix::zeros((ids.len(), EMBED_DIM));
    for domain in [Domain::CellLine, Domain::Patient] {
        let mut pos = Vec::new();
        let mut sel = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let meta = dataset
                .meta_of(id)
                .ok_or_else(|| Error::invalid(format!("unknown sample {id}")))?;
            if meta.domain == domain {
                pos.push(i);
                sel.push(id.clone());
            }
        }
        if sel.is_empty() {
            continue;
        }
        let emb = model.encode(&dataset.rows(&sel)?, domain)?.shared;
        for (k, &i) in pos.iter().enumerate() {
            out.row_mut(i).assign(&emb.row(k));
        }
    }
    Ok(out)
}

/// Write `sample_id, domain, tumor_type, e1..e128` for every sample, sorted
/// by sample id.
pub fn export_embeddings(model: &Model, dataset: &ExpressionDataset, path: &Path) -> Result<()> {
    let mut ids = dataset.sample_ids().to_vec();
    ids.sort();
    let emb = shared_embeddings(model, dataset, &ids)?;
    let names: Vec<String> = (1..=EMBED_DIM).map(|i| format!("e{i}")).collect();
    let mut header = vec!["sample_id", "domain", "tumor_type"];
    header.extend(names.iter().map(String::as_str));
    let rows = ids.iter().enumerate().map(|(i, id)| {
        let meta = dataset.meta_of(id).expect("ids come from the dataset");
        let mut row = vec![id.clone(), meta.domain.as_str().to_string(), meta.tumor_type.clone()];
        row.extend(emb.row(i).iter().map(|&v| fmt_f64(v)));
        row
    });
    tsv::write(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Independent double loop over the three kernel means.
    fn naive_mmd_sq(x: &Matrix, y: &Matrix, sigma: f64) -> f64 {
        let k = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
            let d: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum();
            (-d / (2.0 * sigma * sigma)).exp()
        };
        let mean = |a: &Matrix, b: &Matrix| {
            let mut s = 0.0;
            for r in a.rows() {
                for t in b.rows() {
                    s += k(r, t);
                }
            }
            s / (a.nrows() * b.nrows()) as f64
        };
        mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
    }

    #[test]
    fn hand_value() {
        let x = array![[0.0]];
        let y = array![[1.0]];
        let m2 = mmd_sq(&x, &y, MmdBandwidth::Fixed(1.0)).unwrap();
        assert!((m2 - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-15);
        assert!((m2 - 0.786_939_4).abs() < 1e-6);
        assert!((mmd(&x, &y, MmdBandwidth::Fixed(1.0)).unwrap() - 0.887_095).abs() < 1e-5);
    }

    #[test]
    fn identical_sets_have_zero_mmd() {
        let x = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        assert_eq!(mmd(&x, &x, MmdBandwidth::MedianHeuristic).unwrap(), 0.0);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let x = Matrix::zeros((2, 3));
        let y = Matrix::zeros((2, 4));
        assert!(matches!(
            mmd(&x, &y, MmdBandwidth::Fixed(1.0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_median_falls_back_to_unit_bandwidth() {
        let x = Matrix::zeros((3, 2));
        let mut y = Matrix::zeros((3, 2));
        y[[0, 0]] = 1.0;
        assert_eq!(resolve_bandwidth(&x, &y, MmdBandwidth::MedianHeuristic).unwrap(), 1.0);
        assert_eq!(
            mmd_sq(&x, &y, MmdBandwidth::MedianHeuristic).unwrap(),
            mmd_sq(&x, &y, MmdBandwidth::Fixed(1.0)).unwrap()
        );
    }

    #[test]
    fn relative_mmd_edges() {
        let raw_x = array![[0.0, 0.0], [1.0, 0.0]];
        let raw_y = array![[3.0, 1.0], [4.0, 2.0]];
        assert!((relative_mmd(&raw_x, &raw_y, &raw_x, &raw_y).unwrap() - 1.0).abs() < 1e-15);
        let emb = array![[1.0], [2.0]];
        assert_eq!(relative_mmd(&emb, &emb, &raw_x, &raw_y).unwrap(), 0.0);
        let err = relative_mmd(&emb, &emb, &raw_x, &raw_x).unwrap_err();
        assert!(err.to_string().contains("degenerate reference"));
    }

    #[test]
    fn kl_closed_form() {
        // population moments: mean 0 and 1, variance 1 each
        let x = array![[-1.0], [1.0]];
        let y = array![[0.0], [2.0]];
        let (a, b) = kl_gaussian(&x, &y).unwrap();
        assert!((a - 0.5).abs() < 1e-12);
        assert!((b - 0.5).abs() < 1e-12);
        let (s, t) = kl_gaussian(&x, &x).unwrap();
        assert!(s.abs() < 1e-12 && t.abs() < 1e-12);
        assert!(kl_gaussian(&array![[1.0]], &y).is_err());
    }

    #[test]
    fn kl_is_asymmetric_under_unequal_variance() {
        let x = array![[-1.0], [1.0]];
        let y = array![[-3.0], [3.0]];
        let (a, b) = kl_gaussian(&x, &y).unwrap();
        // 0.5·(ln 9 + 1/9 − 1) and 0.5·(ln(1/9) + 9 − 1)
        assert!((a - 0.5 * (9f64.ln() + 1.0 / 9.0 - 1.0)).abs() < 1e-12);
        assert!((b - 0.5 * (-(9f64.ln()) + 8.0)).abs() < 1e-12);
        assert!(a != b);
    }

    #[test]
    fn report_flags_threshold() {
        let mut r = AlignmentReport {
            tumor_type: "T1".into(),
            method: "DSN-adv".into(),
            mmd: 0.1,
            relative_mmd: 0.29,
            kl_patient_to_cell: 0.0,
            kl_cell_to_patient: 0.0,
        };
        assert!(r.below_threshold());
        r.relative_mmd = 0.3;
        assert!(!r.below_threshold());
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_map(move |v| Matrix::from_shape_vec((rows, cols), v).unwrap())
    }

    fn pair() -> impl Strategy<Value = (Matrix, Matrix)> {
        (1usize..=20, 1usize..=20, 1usize..=10).prop_flat_map(|(m, n, d)| (matrix(m, d), matrix(n, d)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn matches_double_loop_oracle((x, y) in pair(), sigma in 0.2f64..4.0) {
            let got = mmd_sq(&x, &y, MmdBandwidth::Fixed(sigma)).unwrap();
            let want = naive_mmd_sq(&x, &y, sigma).max(0.0);
            prop_assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }

        #[test]
        fn symmetric_and_translation_invariant((x, y) in pair(), shift in -5.0f64..5.0) {
            let a = mmd(&x, &y, MmdBandwidth::MedianHeuristic).unwrap();
            let b = mmd(&y, &x, MmdBandwidth::MedianHeuristic).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            let c = mmd(&(&x + shift), &(&y + shift), MmdBandwidth::MedianHeuristic).unwrap();
            prop_assert!((a - c).abs() <= 1e-9);
        }

        #[test]
        fn kl_is_non_negative((x, y) in (2usize..10, 2usize..10, 1usize..5)
            .prop_flat_map(|(m, n, d)| (matrix(m, d), matrix(n, d)))) {
            let (a, b) = kl_gaussian(&x, &y).unwrap();
            prop_assert!(a >= 0.0 && b >= 0.0);
        }
    }
}
