use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crelab_core::align::{alignment_report, export_embeddings, shared_embeddings, write_alignment_reports};
use crelab_core::data::{
    binarize_labels, load_drugs, load_expression, load_labels, make_split, qc_filter, write_drugs, write_expression,
    write_labels, write_metadata, Domain, DrugTable, ExpressionDataset, LoadOptions, PretrainStrategy, QcThresholds,
    ResponseLabel,
};
use crelab_core::screen::{
    build_drp, per_patient_report, read_evidence, run_screen, write_dei, write_drp, write_edi, write_edp,
    write_patient_report, write_verdicts,
};
use crelab_core::synth::{generate, write_benchmark, SynthConfig, DRUGS_FILE, EXPRESSION_FILE, LABELS_FILE, META_FILE};
use crelab_core::train::{
    evaluate, finetune, init_model, percent_change_table, pretrain, run_zoo, write_epoch_log, write_per_drug,
    write_percent_change, write_results, TrainConfig,
};
use crelab_core::tsv::{self, fmt_f64};
use crelab_core::zoo::{load_checkpoint, parse_variants, save_checkpoint, Model, Variant};
use crelab_core::{Error, Result};
use rayon::prelude::*;

use crate::manifest::{digests, RunManifest};
use crate::{invalid, report, Cli, Command};

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Files read and written by one command.
#[derive(Default)]
pub struct Io {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Io {
    fn read(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn wrote(&mut self, p: PathBuf) {
        self.outputs.push(p);
    }
}

fn build_config(cli: &Cli, io: &mut Io) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::from_file(&io.read(p))?,
        None => TrainConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Prepare(_) => "prepare",
        Command::Synth(_) => "synth",
        Command::Pretrain(_) => "pretrain",
        Command::Finetune(_) => "finetune",
        Command::Eval(_) => "eval",
        Command::Align(_) => "align",
        Command::Screen(_) => "screen",
        Command::Report(_) => "report",
    }
}

fn out_dir(c: &Command) -> &Path {
    match c {
        Command::Prepare(a) => &a.out,
        Command::Synth(a) => &a.out,
        Command::Pretrain(a) => &a.out,
        Command::Finetune(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::Align(a) => &a.out,
        Command::Screen(a) => &a.out,
        Command::Report(a) => &a.out,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    if cli.jobs > 0 {
        // a second initialization only happens in-process and is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    }
    let mut io = Io::default();
    let cfg = build_config(cli, &mut io)?;
    let out = out_dir(&cli.command).to_path_buf();
    std::fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    match &cli.command {
        Command::Prepare(a) => prepare(a, &mut io)?,
        Command::Synth(a) => synth(a, &cfg, &mut io)?,
        Command::Pretrain(a) => pretrain_cmd(a, &cfg, &mut io)?,
        Command::Finetune(a) => finetune_cmd(a, &cfg, &mut io)?,
        Command::Eval(a) => eval(a, &cfg, &mut io)?,
        Command::Align(a) => align(a, &cfg, &mut io)?,
        Command::Screen(a) => screen(a, &mut io)?,
        Command::Report(a) => report::run(a, &mut io)?,
    }
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        args: std::env::args().skip(1).collect(),
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        seed: cfg.seed,
        inputs: digests(&io.inputs)?,
        outputs: digests(&io.outputs)?,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    manifest.write(&out)?;
    log::info!("{} finished in {:.1}s", manifest.command, manifest.duration_secs);
    Ok(())
}

struct Data {
    dataset: ExpressionDataset,
    labels: Vec<ResponseLabel>,
    drugs: DrugTable,
}

fn load_data(dir: &Path, io: &mut Io) -> Result<Data> {
    let expr = io.read(&dir.join(EXPRESSION_FILE));
    let meta = io.read(&dir.join(META_FILE));
    let dataset = load_expression(&[expr], &meta, &LoadOptions::default())?;
    let labels = load_labels(&io.read(&dir.join(LABELS_FILE)))?;
    let drugs = load_drugs(&io.read(&dir.join(DRUGS_FILE)))?;
    Ok(Data { dataset, labels, drugs })
}

fn tumor_types(list: &str, dataset: &ExpressionDataset) -> Result<Vec<String>> {
    let known = dataset.patient_tumor_types();
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(known);
    }
    let mut out = Vec::new();
    for t in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if !known.iter().any(|k| k == t) {
            return Err(Error::UnknownTumorType(t.to_string()));
        }
        if !out.iter().any(|o| o == t) {
            out.push(t.to_string());
        }
    }
    if out.is_empty() {
        return Err(invalid("no tumor types selected"));
    }
    Ok(out)
}

fn strategies(list: &str) -> Result<Vec<PretrainStrategy>> {
    let mut out = Vec::new();
    for s in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let s: PretrainStrategy = s.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(invalid("no strategies selected"));
    }
    Ok(out)
}

/// File-name-safe form of a tumor type.
fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn prepare(a: &crate::PrepareArgs, io: &mut Io) -> Result<()> {
    let expr: Vec<PathBuf> = a.expression.iter().map(|p| io.read(p)).collect();
    let opts = LoadOptions {
        raw_tpm: a.raw_tpm,
        top_k_variance: a.top_k_genes,
    };
    let dataset = load_expression(&expr, &io.read(&a.meta), &opts)?;
    let raw_labels = load_labels(&io.read(&a.labels))?;
    let drugs = load_drugs(&io.read(&a.drugs))?;

    let (known, unknown): (Vec<ResponseLabel>, Vec<ResponseLabel>) = raw_labels
        .into_iter()
        .partition(|l| dataset.position(&l.sample_id).is_some());
    if !unknown.is_empty() {
        log::warn!("dropped {} labels for samples without expression", unknown.len());
    }
    let labels = binarize_labels(&known, |id| dataset.meta_of(id).map(|m| m.tumor_type.as_str()))?;
    let qc = qc_filter(&dataset, &labels, &QcThresholds::default());
    let failed: BTreeSet<&str> = qc.iter().filter(|o| !o.kept()).map(|o| o.tumor_type.as_str()).collect();
    for o in qc.iter().filter(|o| !o.kept()) {
        log::warn!("tumor type {} removed: {}", o.tumor_type, o.reason());
    }
    let keep: Vec<String> = dataset
        .sample_ids()
        .iter()
        .zip(dataset.meta())
        .filter(|(_, m)| m.domain == Domain::CellLine || !failed.contains(m.tumor_type.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    let kept = dataset.subset(&keep)?;
    let kept_labels: Vec<ResponseLabel> = labels
        .into_iter()
        .filter(|l| kept.position(&l.sample_id).is_some())
        .collect();

    let out = &a.out;
    write_expression(&out.join(EXPRESSION_FILE), &kept)?;
    write_metadata(&out.join(META_FILE), &kept)?;
    write_labels(&out.join(LABELS_FILE), &kept_labels)?;
    write_drugs(&out.join(DRUGS_FILE), &drugs)?;
    let qc_path = out.join("qc.tsv");
    tsv::write(
        &qc_path,
        &[
            "tumor_type",
            "n_patients",
            "n_cell_lines",
            "n_labeled_patients",
            "n_overlap_drugs",
            "kept",
            "reason",
        ],
        qc.iter().map(|o| {
            vec![
                o.tumor_type.clone(),
                o.n_patients.to_string(),
                o.n_cell_lines.to_string(),
                o.n_labeled_patients.to_string(),
                o.overlap_drugs.len().to_string(),
                o.kept().to_string(),
                o.reason(),
            ]
        }),
    )?;
    for f in [EXPRESSION_FILE, META_FILE, LABELS_FILE, DRUGS_FILE] {
        io.wrote(out.join(f));
    }
    io.wrote(qc_path);
    Ok(())
}

fn synth(a: &crate::SynthArgs, cfg: &TrainConfig, io: &mut Io) -> Result<()> {
    let sc = SynthConfig {
        seed: cfg.seed,
        n_source: a.n_source,
        n_target: a.n_target,
        n_genes: a.n_genes,
        signal_dim: a.signal_dim,
        shift_magnitude: a.shift,
        n_drugs: a.n_drugs,
        label_noise: a.label_noise,
        n_tumor_types: a.n_tumor_types,
        ..SynthConfig::default()
    };
    let bench = generate(&sc)?;
    write_benchmark(&a.out, &bench)?;
    for f in [
        EXPRESSION_FILE,
        META_FILE,
        LABELS_FILE,
        DRUGS_FILE,
        crelab_core::synth::TRUTH_FILE,
    ] {
        io.wrote(a.out.join(f));
    }
    Ok(())
}

fn pretrain_cmd(a: &crate::PretrainArgs, cfg: &TrainConfig, io: &mut Io) -> Result<()> {
    let d = load_data(&a.data.data, io)?;
    let variant: Variant = a.variant.parse()?;
    let mut cfg = cfg.clone();
    if let Some(s) = &a.strategies {
        cfg.strategy = s.parse()?;
    }
    if !d.dataset.patient_tumor_types().contains(&a.tumor_type) {
        return Err(Error::UnknownTumorType(a.tumor_type.clone()));
    }
    let split = make_split(&d.dataset, &d.labels, &a.tumor_type, cfg.strategy)?;
    let mut model = init_model(variant, d.dataset.n_genes(), &cfg)?;
    let report = pretrain(&mut model, &d.dataset, &split, &cfg)?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt)?;
    let log_path = a.out.join("pretrain_log.tsv");
    write_epoch_log(&log_path, &report.log)?;
    let audit = a.out.join("audit.tsv");
    let rows = report
        .audit
        .source_ids
        .iter()
        .map(|id| vec![Domain::CellLine.as_str().to_string(), id.clone()])
        .chain(
            report
                .audit
                .target_ids
                .iter()
                .map(|id| vec![Domain::Patient.as_str().to_string(), id.clone()]),
        );
    tsv::write(&audit, &["domain", "sample_id"], rows)?;
    io.wrote(ckpt);
    io.wrote(log_path);
    io.wrote(audit);
    Ok(())
}

fn finetune_cmd(a: &crate::FinetuneArgs, cfg: &TrainConfig, io: &mut Io) -> Result<()> {
    let d = load_data(&a.data.data, io)?;
    let mut model = load_checkpoint(&io.read(&a.checkpoint))?;
    if !d.dataset.patient_tumor_types().contains(&a.tumor_type) {
        return Err(Error::UnknownTumorType(a.tumor_type.clone()));
    }
    let split = make_split(&d.dataset, &d.labels, &a.tumor_type, cfg.strategy)?;
    let report = finetune(&mut model, &d.dataset, &split.finetune, &d.drugs, cfg)?;
    let result = evaluate(&model, &d.dataset, &split.test, &d.drugs, &a.tumor_type, cfg.strategy)?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt)?;
    let log_path = a.out.join("finetune_log.tsv");
    write_epoch_log(&log_path, &report.log)?;
    let results = a.out.join("results.tsv");
    write_results(&results, std::slice::from_ref(&result))?;
    let per_drug = a.out.join("per_drug.tsv");
    write_per_drug(&per_drug, std::slice::from_ref(&result))?;
    for p in [ckpt, log_path, results, per_drug] {
        io.wrote(p);
    }
    Ok(())
}

fn eval(a: &crate::EvalArgs, cfg: &TrainConfig, io: &mut Io) -> Result<()> {
    let d = load_data(&a.data.data, io)?;
    let variants = parse_variants(&a.variants)?;
    let strategies = strategies(&a.strategies)?;
    let tumors = tumor_types(&a.tumor_types, &d.dataset)?;
    let rows = run_zoo(&d.dataset, &d.labels, &d.drugs, &tumors, &variants, &strategies, cfg)?;
    let results = a.out.join("results.tsv");
    write_results(&results, &rows)?;
    let per_drug = a.out.join("per_drug.tsv");
    write_per_drug(&per_drug, &rows)?;
    io.wrote(results);
    io.wrote(per_drug);
    let pc = percent_change_table(&rows);
    if !pc.is_empty() {
        let p = a.out.join("percent_change.tsv");
        write_percent_change(&p, &pc)?;
        io.wrote(p);
    }
    Ok(())
}

fn align(a: &crate::AlignArgs, cfg: &TrainConfig, io: &mut Io) -> Result<()> {
    let d = load_data(&a.data.data, io)?;
    let variants = parse_variants(&a.variants)?;
    let tumors = tumor_types(&a.tumor_types, &d.dataset)?;
    let cells: Vec<(&String, Variant)> = tumors
        .iter()
        .flat_map(|t| variants.iter().map(move |&v| (t, v)))
        .collect();
    let models: Vec<Model> = cells
        .par_iter()
        .map(|&(t, v)| {
            let split = make_split(&d.dataset, &d.labels, t, cfg.strategy)?;
            let mut m = init_model(v, d.dataset.n_genes(), cfg)?;
            pretrain(&mut m, &d.dataset, &split, cfg)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;

    let cell_ids = d.dataset.ids_where(Domain::CellLine, None);
    let raw_cell = d.dataset.rows(&cell_ids)?;
    let mut reports = Vec::new();
    let emb_dir = a.out.join("embeddings");
    for t in &tumors {
        let patient_ids = d.dataset.ids_where(Domain::Patient, Some(t));
        let raw_patient = d.dataset.rows(&patient_ids)?;
        reports.push(alignment_report(
            t,
            "orig",
            &raw_cell,
            &raw_patient,
            &raw_cell,
            &raw_patient,
        )?);
        let mut both = cell_ids.clone();
        both.extend(patient_ids.iter().cloned());
        let subset = d.dataset.subset(&both)?;
        for ((ct, v), m) in cells.iter().zip(&models) {
            if *ct != t {
                continue;
            }
            let ec = shared_embeddings(m, &d.dataset, &cell_ids)?;
            let ep = shared_embeddings(m, &d.dataset, &patient_ids)?;
            reports.push(alignment_report(t, &v.to_string(), &ec, &ep, &raw_cell, &raw_patient)?);
            let path = emb_dir.join(format!("{}_{}.tsv", slug(&v.to_string()), slug(t)));
            export_embeddings(m, &subset, &path)?;
            io.wrote(path);
        }
    }
    let path = a.out.join("alignment.tsv");
    write_alignment_reports(&path, &reports)?;
    io.wrote(path);
    Ok(())
}

fn screen(a: &crate::ScreenArgs, io: &mut Io) -> Result<()> {
    let evidence = read_evidence(&io.read(&a.evidence))?;
    let model = load_checkpoint(&io.read(&a.checkpoint))?;
    if !model.is_fitted() {
        return Err(Error::Unfitted("screening needs a fine-tuned checkpoint"));
    }
    let d = load_data(&a.data.data, io)?;
    let tumors = tumor_types(&a.tumor_types, &d.dataset)?;
    let drug_ids: Vec<String> = d.drugs.keys().cloned().collect();
    let drps = tumors
        .par_iter()
        .map(|t| {
            let patients = d.dataset.ids_where(Domain::Patient, Some(t));
            build_drp(&model, &d.dataset, &patients, &d.drugs, &drug_ids, t)
        })
        .collect::<Result<Vec<_>>>()?;
    let result = run_screen(&drps, a.fraction, a.top_n, &evidence)?;

    let patient_labels: Vec<ResponseLabel> = d
        .labels
        .iter()
        .filter(|l| l.kind.domain() == Domain::Patient)
        .cloned()
        .collect();
    for ((drp, edp), edi) in drps.iter().zip(&result.edp).zip(&result.edi) {
        let s = slug(&drp.tumor_type);
        let paths = [
            a.out.join("drp").join(format!("{s}.tsv")),
            a.out.join("edp").join(format!("{s}.tsv")),
            a.out.join("edi").join(format!("{s}.tsv")),
            a.out.join("patient_report").join(format!("{s}.tsv")),
        ];
        write_drp(&paths[0], drp)?;
        write_edp(&paths[1], edp)?;
        write_edi(&paths[2], edi)?;
        write_patient_report(&paths[3], &per_patient_report(drp, Some(&patient_labels)))?;
        io.outputs.extend(paths);
    }
    let dei = a.out.join("dei.tsv");
    write_dei(&dei, &result.dei)?;
    let verdicts = a.out.join("verdicts.tsv");
    write_verdicts(&verdicts, &result.qualification)?;
    let q = &result.qualification;
    let summary = a.out.join("screen_summary.tsv");
    tsv::write(
        &summary,
        &["metric", "value"],
        [
            ("tumor_types", drps.len().to_string()),
            ("dei_drugs", result.dei.drug_ids.len().to_string()),
            ("qualified_drugs", q.qualified().count().to_string()),
            ("edi_records", q.edi_records.to_string()),
            ("qualified_records", q.qualified_records.to_string()),
            ("skipped_unknown_tumor", q.skipped_unknown_tumor.to_string()),
            ("fraction", fmt_f64(a.fraction)),
            ("top_n", a.top_n.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v]),
    )?;
    for p in [dei, verdicts, summary] {
        io.wrote(p);
    }
    Ok(())
}
