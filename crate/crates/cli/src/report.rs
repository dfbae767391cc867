use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crelab_core::align::{ALIGNMENT_HEADER, RELATIVE_MMD_THRESHOLD};
use crelab_core::train::{percent_change_table, EvalResult, RESULTS_HEADER};
use crelab_core::tsv::{write_atomic, Table};
use crelab_core::Result;

use crate::commands::Io;
use crate::{invalid, ReportArgs};

const RESULTS_FILE: &str = "results.tsv";
const ALIGNMENT_FILE: &str = "alignment.tsv";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn check_header(t: &Table, want: &[&str]) -> Result<()> {
    for h in want {
        t.column(h)?;
    }
    Ok(())
}

fn read_results(path: &Path) -> Result<Vec<EvalResult>> {
    let t = Table::read(path)?;
    check_header(&t, &RESULTS_HEADER)?;
    let col = |n: &str| t.column(n);
    let (ct, cv, cs, ca, cn) = (
        col("tumor_type")?,
        col("variant")?,
        col("strategy")?,
        col("auroc")?,
        col("n_labels")?,
    );
    let mut out = Vec::new();
    for (line, row) in &t.rows {
        let parse_err = |c: usize, e: crelab_core::Error| t.parse_error(*line, c, e.to_string());
        out.push(EvalResult {
            tumor_type: t.field(*line, row, ct)?.to_string(),
            variant: t.field(*line, row, cv)?.parse().map_err(|e| parse_err(cv, e))?,
            strategy: t.field(*line, row, cs)?.parse().map_err(|e| parse_err(cs, e))?,
            auroc: t.float(*line, row, ca)?,
            n_labels: t
                .field(*line, row, cn)?
                .parse()
                .map_err(|_| t.parse_error(*line, cn, "expected a count"))?,
            per_drug: Vec::new(),
        });
    }
    Ok(out)
}

struct AlignRow {
    tumor_type: String,
    method: String,
    mmd: f64,
    relative_mmd: f64,
}

fn read_alignment(path: &Path) -> Result<Vec<AlignRow>> {
    let t = Table::read(path)?;
    check_header(&t, &ALIGNMENT_HEADER)?;
    let (ct, cm, cd, cr) = (
        t.column("tumor_type")?,
        t.column("method")?,
        t.column("mmd")?,
        t.column("relative_mmd")?,
    );
    t.rows
        .iter()
        .map(|(line, row)| {
            Ok(AlignRow {
                tumor_type: t.field(*line, row, ct)?.to_string(),
                method: t.field(*line, row, cm)?.to_string(),
                mmd: t.float(*line, row, cd)?,
                relative_mmd: t.float(*line, row, cr)?,
            })
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

pub fn run(a: &ReportArgs, io: &mut Io) -> Result<()> {
    let mut results: Vec<EvalResult> = Vec::new();
    let mut alignment: Vec<AlignRow> = Vec::new();
    for dir in &a.inputs {
        let (rp, ap) = (dir.join(RESULTS_FILE), dir.join(ALIGNMENT_FILE));
        let (has_r, has_a) = (rp.is_file(), ap.is_file());
        if !has_r && !has_a {
            return Err(invalid(format!(
                "{} holds neither {RESULTS_FILE} nor {ALIGNMENT_FILE}",
                dir.display()
            )));
        }
        if has_r {
            io.inputs.push(rp.clone());
            results.extend(read_results(&rp)?);
        }
        if has_a {
            io.inputs.push(ap.clone());
            alignment.extend(read_alignment(&ap)?);
        }
    }

    let mut seen = BTreeSet::new();
    for r in &results {
        if !seen.insert((r.tumor_type.clone(), r.variant, r.strategy)) {
            return Err(invalid(format!(
                "duplicate result for {} / {} / {}",
                r.tumor_type, r.variant, r.strategy
            )));
        }
    }

    if !results.is_empty() {
        let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for r in &results {
            groups
                .entry((r.variant.to_string(), r.strategy.to_string()))
                .or_default()
                .push(r.auroc);
        }
        let rows: Vec<Vec<String>> = groups
            .into_iter()
            .map(|((v, s), mut xs)| {
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let n = xs.len();
                let med = median(&mut xs);
                vec![v, s, n.to_string(), f(mean), f(med), f(xs[0]), f(xs[n - 1])]
            })
            .collect();
        let p = a.out.join("auroc_summary.csv");
        write_csv(
            &p,
            &[
                "variant",
                "strategy",
                "n_tumor_types",
                "mean_auroc",
                "median_auroc",
                "min_auroc",
                "max_auroc",
            ],
            &rows,
        )?;
        io.outputs.push(p);

        let columns: BTreeSet<String> = results
            .iter()
            .map(|r| format!("{} ({})", r.variant, r.strategy))
            .collect();
        let mut cells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for r in &results {
            cells
                .entry(r.tumor_type.clone())
                .or_default()
                .insert(format!("{} ({})", r.variant, r.strategy), r.auroc);
        }
        let rows: Vec<Vec<String>> = cells
            .into_iter()
            .map(|(t, m)| {
                std::iter::once(t)
                    .chain(
                        columns
                            .iter()
                            .map(|c| m.get(c).map_or_else(|| "NA".to_string(), |&v| f(v))),
                    )
                    .collect()
            })
            .collect();
        let mut header = vec!["tumor_type"];
        header.extend(columns.iter().map(String::as_str));
        let p = a.out.join("auroc_matrix.csv");
        write_csv(&p, &header, &rows)?;
        io.outputs.push(p);

        let pc = percent_change_table(&results);
        if !pc.is_empty() {
            let rows: Vec<Vec<String>> = pc
                .iter()
                .map(|r| {
                    vec![
                        r.tumor_type.clone(),
                        r.variant.to_string(),
                        f(r.all_data),
                        f(r.adaptive),
                        format!("{:.2}", r.percent),
                    ]
                })
                .collect();
            let p = a.out.join("percent_change.csv");
            write_csv(
                &p,
                &["tumor_type", "variant", "all_data", "adaptive", "percent_change"],
                &rows,
            )?;
            io.outputs.push(p);
        }
    }

    if !alignment.is_empty() {
        let mut groups: BTreeMap<String, Vec<&AlignRow>> = BTreeMap::new();
        for r in &alignment {
            groups.entry(r.method.clone()).or_default().push(r);
        }
        let rows: Vec<Vec<String>> = groups
            .into_iter()
            .map(|(m, rs)| {
                let n = rs.len() as f64;
                let tumors: BTreeSet<&str> = rs.iter().map(|r| r.tumor_type.as_str()).collect();
                let below = rs.iter().filter(|r| r.relative_mmd < RELATIVE_MMD_THRESHOLD).count();
                vec![
                    m,
                    tumors.len().to_string(),
                    f(rs.iter().map(|r| r.mmd).sum::<f64>() / n),
                    f(rs.iter().map(|r| r.relative_mmd).sum::<f64>() / n),
                    below.to_string(),
                ]
            })
            .collect();
        let p = a.out.join("alignment_summary.csv");
        write_csv(
            &p,
            &[
                "method",
                "n_tumor_types",
                "mean_mmd",
                "mean_relative_mmd",
                "n_below_threshold",
            ],
            &rows,
        )?;
        io.outputs.push(p);
    }
    Ok(())
}
