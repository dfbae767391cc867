use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn crelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crelab"))
        .args(args)
        .env("CRELAB_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, tumors: &str) -> PathBuf {
    let data = dir.join("data");
    let out = crelab(&[
        "synth",
        "--n-source",
        "40",
        "--n-target",
        "30",
        "--n-genes",
        "24",
        "--n-drugs",
        "4",
        "--n-tumor-types",
        tumors,
        "--out",
        s(&data),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

const FAST: [&str; 6] = [
    "--set",
    "epochs_pretrain=1",
    "--set",
    "epochs_finetune=1",
    "--set",
    "batch_size=16",
];

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn eval_writes_one_row_per_variant_and_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "1");
    let out = tmp.path().join("eval");
    let mut args = vec![
        "eval",
        "--data",
        s(&data),
        "--variants",
        "AE,DSN-adv",
        "--strategies",
        "adaptive",
    ];
    args.extend(FAST);
    args.extend(["--out", s(&out)]);
    let res = crelab(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(out.join("results.tsv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("T1\tAE\tadaptive\t"));
    assert!(rows[1].starts_with("T1\tDSN-adv\tadaptive\t"));
    let m = manifest(&out);
    assert_eq!(m["command"], "eval");
    assert_eq!(m["config"]["epochs_pretrain"], "1");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn same_seed_gives_identical_output_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "1");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["pretrain", "--data", s(&data), "--tumor-type", "T1", "--seed", "7"];
        args.extend(FAST);
        args.extend(["--out", s(&out)]);
        let res = crelab(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        manifest(&out)["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|d| d["sha256"].as_str().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    let a = run("a");
    assert_eq!(a.len(), 3);
    assert_eq!(a, run("b"));
}

#[test]
fn missing_evidence_file_fails_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "1");
    let missing = tmp.path().join("no_such_evidence.tsv");
    let res = crelab(&[
        "screen",
        "--data",
        s(&data),
        "--checkpoint",
        s(&tmp.path().join("model.ckpt")),
        "--evidence",
        s(&missing),
        "--out",
        s(&tmp.path().join("screen")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.starts_with("error[io]"), "{err}");
    assert!(err.contains("no_such_evidence.tsv"), "{err}");
}

#[test]
fn screen_pipeline_runs_from_a_finetuned_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "2");
    let pt = tmp.path().join("pt");
    let ft = tmp.path().join("ft");
    let mut args = vec!["pretrain", "--data", s(&data), "--variant", "AE", "--tumor-type", "T2"];
    args.extend(FAST);
    args.extend(["--out", s(&pt)]);
    assert!(crelab(&args).status.success());
    let ckpt = pt.join("model.ckpt");
    let mut args = vec![
        "finetune",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--tumor-type",
        "T2",
    ];
    args.extend(FAST);
    args.extend(["--out", s(&ft)]);
    let res = crelab(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let ev = tmp.path().join("evidence.tsv");
    std::fs::write(&ev, "drug_id\ttumor_type\tsource\nD000\tT1\tDrugBank\n").unwrap();
    let sc = tmp.path().join("screen");
    let res = crelab(&[
        "screen",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ft.join("model.ckpt")),
        "--evidence",
        s(&ev),
        "--fraction",
        "0.25",
        "--out",
        s(&sc),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for t in ["T1", "T2"] {
        for sub in ["drp", "edp", "edi", "patient_report"] {
            assert!(sc.join(sub).join(format!("{t}.tsv")).is_file(), "{sub}/{t}");
        }
    }
    let dei = std::fs::read_to_string(sc.join("dei.tsv")).unwrap();
    assert!(dei.starts_with("drug_id\tT1\tT2\n"), "{dei}");
}

#[test]
fn pretrained_checkpoint_cannot_screen() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "1");
    let pt = tmp.path().join("pt");
    let mut args = vec!["pretrain", "--data", s(&data), "--variant", "AE", "--tumor-type", "T1"];
    args.extend(FAST);
    args.extend(["--out", s(&pt)]);
    assert!(crelab(&args).status.success());
    let ev = tmp.path().join("evidence.tsv");
    std::fs::write(&ev, "drug_id\ttumor_type\tsource\n").unwrap();
    let res = crelab(&[
        "screen",
        "--data",
        s(&data),
        "--checkpoint",
        s(&pt.join("model.ckpt")),
        "--evidence",
        s(&ev),
        "--out",
        s(&tmp.path().join("screen")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error[unfitted]"));
}

#[test]
fn unknown_tumor_type_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "1");
    let mut args = vec!["eval", "--data", s(&data), "--tumor-types", "LUAD"];
    args.extend(FAST);
    let out = tmp.path().join("e");
    args.extend(["--out", s(&out)]);
    let res = crelab(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error[unknown-tumor-type]: unknown tumor type LUAD"));
}

#[test]
fn bad_override_is_invalid_input() {
    let tmp = tempfile::tempdir().unwrap();
    let res = crelab(&["--set", "epochs_pretrain", "synth", "--out", s(tmp.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error[invalid-input]"));
    let res = crelab(&["--set", "no_such_key=1", "synth", "--out", s(tmp.path())]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let res = crelab(&["eval", "--bogus"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn help_lists_defaults() {
    let res = crelab(&["screen", "--help"]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("[default: 0.05]"), "{text}");
    assert!(text.contains("[default: 10]"), "{text}");
    let res = crelab(&["--help"]);
    let text = String::from_utf8_lossy(&res.stdout);
    for cmd in [
        "prepare", "synth", "pretrain", "finetune", "eval", "align", "screen", "report",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn report_merges_results_and_alignment() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    std::fs::write(
        a.join("results.tsv"),
        "tumor_type\tvariant\tstrategy\tauroc\tn_labels\n\
         T1\tAE\tadaptive\t0.6\t10\nT1\tAE\tall_data\t0.5\t10\nT2\tAE\tadaptive\t0.8\t10\n",
    )
    .unwrap();
    std::fs::write(
        b.join("alignment.tsv"),
        "tumor_type\tmethod\tmmd\trelative_mmd\tkl_pc\tkl_cp\tbelow_0.3_flag\n\
         T1\torig\t0.4\t1.0\t1\t1\tfalse\nT1\tDSN-adv\t0.1\t0.25\t1\t1\ttrue\n",
    )
    .unwrap();
    let out = tmp.path().join("rep");
    let res = crelab(&["report", "--inputs", s(&a), "--inputs", s(&b), "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = std::fs::read_to_string(out.join("auroc_summary.csv")).unwrap();
    assert!(
        summary.contains("AE,adaptive,2,0.7000,0.7000,0.6000,0.8000"),
        "{summary}"
    );
    let pc = std::fs::read_to_string(out.join("percent_change.csv")).unwrap();
    assert!(pc.contains("T1,AE,0.5000,0.6000,20.00"), "{pc}");
    let matrix = std::fs::read_to_string(out.join("auroc_matrix.csv")).unwrap();
    assert!(matrix.contains("T2,0.8000,NA"), "{matrix}");
    let al = std::fs::read_to_string(out.join("alignment_summary.csv")).unwrap();
    assert!(al.contains("DSN-adv,1,0.1000,0.2500,1"), "{al}");

    std::fs::copy(a.join("results.tsv"), b.join("results.tsv")).unwrap();
    let res = crelab(&["report", "--inputs", s(&a), "--inputs", s(&b), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("duplicate result"));
}

#[test]
fn prepare_drops_failing_tumor_types() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "1");
    let out = tmp.path().join("prep");
    let res = crelab(&[
        "prepare",
        "--expression",
        s(&data.join("expression.tsv")),
        "--meta",
        s(&data.join("meta.tsv")),
        "--labels",
        s(&data.join("labels.tsv")),
        "--drugs",
        s(&data.join("drugs.tsv")),
        "--top-k-genes",
        "10",
        "--out",
        s(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let qc = std::fs::read_to_string(out.join("qc.tsv")).unwrap();
    assert_eq!(qc.lines().count(), 2);
    let header = std::fs::read_to_string(out.join("expression.tsv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split('\t').count(), 11);
}
