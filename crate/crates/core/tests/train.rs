use std::collections::BTreeSet;

use crelab_core::data::{make_split, Domain, PretrainStrategy, ResponseKind, ResponseLabel};
use crelab_core::synth::{generate, Benchmark, SynthConfig};
use crelab_core::train::{
    evaluate, finetune, init_model, percent_change_table, pretrain, run_cell, run_zoo, TrainConfig,
};
use crelab_core::zoo::{Variant, EMBED_DIM};
use crelab_core::Error;

fn bench(tumors: usize, seed: u64) -> Benchmark {
    generate(&SynthConfig {
        seed,
        n_source: 48,
        n_target: 36,
        n_genes: 20,
        n_drugs: 5,
        n_tumor_types: tumors,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn fast() -> TrainConfig {
    TrainConfig {
        epochs_pretrain: 2,
        epochs_finetune: 2,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_same_model_and_scores() {
    let b = bench(1, 1);
    let split = make_split(&b.dataset, &b.labels, "T1", PretrainStrategy::Adaptive).unwrap();
    let run = |seed| {
        let cfg = TrainConfig { seed, ..fast() };
        run_cell(Variant::DSN_ADV, &b.dataset, &split, &b.drugs, &cfg).unwrap()
    };
    let (m1, r1) = run(4);
    let (m2, r2) = run(4);
    assert_eq!(m1.store(), m2.store());
    assert_eq!(r1, r2);
    let (m3, _) = run(5);
    assert_ne!(m1.store(), m3.store());
}

#[test]
fn zero_pretrain_epochs_leave_the_encoder_untouched() {
    let b = bench(1, 2);
    let split = make_split(&b.dataset, &b.labels, "T1", PretrainStrategy::Adaptive).unwrap();
    let cfg = TrainConfig {
        epochs_pretrain: 0,
        ..fast()
    };
    let mut model = init_model(Variant::DSN, b.dataset.n_genes(), &cfg).unwrap();
    let before = model.store().clone();
    let report = pretrain(&mut model, &b.dataset, &split, &cfg).unwrap();
    assert_eq!(report.epochs_run, 0);
    assert!(report.log.is_empty());
    assert!(report.audit.source_ids.is_empty());
    assert_eq!(model.store(), &before);
}

#[test]
fn pretraining_logs_every_term_per_epoch() {
    let b = bench(1, 3);
    let split = make_split(&b.dataset, &b.labels, "T1", PretrainStrategy::Adaptive).unwrap();
    let cfg = TrainConfig {
        epochs_pretrain: 3,
        patience: 0,
        ..fast()
    };
    let mut model = init_model(Variant::DSN_MMD, b.dataset.n_genes(), &cfg).unwrap();
    let report = pretrain(&mut model, &b.dataset, &split, &cfg).unwrap();
    assert_eq!(report.epochs_run, 3);
    assert_eq!(report.log.len(), 3 * 5);
    assert!(report.log.iter().all(|e| e.value.is_finite() && e.value >= 0.0));
    assert_eq!(report.audit.source_ids.len(), split.pretrain_source.len());
}

#[test]
fn adaptive_batches_stay_inside_the_tumor_type() {
    let b = bench(3, 4);
    let ds = &b.dataset;
    for t in ds.patient_tumor_types() {
        let split = make_split(ds, &b.labels, &t, PretrainStrategy::Adaptive).unwrap();
        let mut model = init_model(Variant::DSN_ADV, ds.n_genes(), &fast()).unwrap();
        let audit = pretrain(&mut model, ds, &split, &fast()).unwrap().audit;
        assert!(!audit.target_ids.is_empty());
        for id in &audit.target_ids {
            let m = ds.meta_of(id).unwrap();
            assert_eq!((m.domain, m.tumor_type.as_str()), (Domain::Patient, t.as_str()));
        }
    }
    let split = make_split(ds, &b.labels, "T2", PretrainStrategy::AllData).unwrap();
    let mut model = init_model(Variant::AE, ds.n_genes(), &fast()).unwrap();
    let audit = pretrain(&mut model, ds, &split, &fast()).unwrap().audit;
    let types: BTreeSet<&str> = audit
        .target_ids
        .iter()
        .map(|id| ds.meta_of(id).unwrap().tumor_type.as_str())
        .collect();
    assert_eq!(types.len(), 3);
}

#[test]
fn tampered_adaptive_split_is_rejected() {
    let b = bench(2, 5);
    let mut split = make_split(&b.dataset, &b.labels, "T1", PretrainStrategy::Adaptive).unwrap();
    split
        .pretrain_target
        .extend(b.dataset.ids_where(Domain::Patient, Some("T2")));
    let mut model = init_model(Variant::AE, b.dataset.n_genes(), &fast()).unwrap();
    let err = pretrain(&mut model, &b.dataset, &split, &fast()).unwrap_err();
    assert!(err.to_string().contains("adaptive split for T1"), "{err}");
}

#[test]
fn finetuning_sees_only_cell_lines() {
    let b = bench(1, 6);
    let split = make_split(&b.dataset, &b.labels, "T1", PretrainStrategy::Adaptive).unwrap();
    let mut model = init_model(Variant::DSN_ADV, b.dataset.n_genes(), &fast()).unwrap();
    pretrain(&mut model, &b.dataset, &split, &fast()).unwrap();
    let report = finetune(&mut model, &b.dataset, &split.finetune, &b.drugs, &fast()).unwrap();
    let test_patients: BTreeSet<&str> = split.test.iter().map(|l| l.sample_id.as_str()).collect();
    assert!(!test_patients.is_empty());
    for id in &report.sample_ids {
        assert_eq!(b.dataset.meta_of(id).unwrap().domain, Domain::CellLine);
        assert!(!test_patients.contains(id.as_str()));
    }
    assert_eq!(report.log.len(), 2);
    let n_batches = split.finetune.len().div_ceil(16);
    assert_eq!(report.step_losses.len(), 2 * n_batches);
    let r = evaluate(
        &model,
        &b.dataset,
        &split.test,
        &b.drugs,
        "T1",
        PretrainStrategy::Adaptive,
    )
    .unwrap();
    assert_eq!(r.n_labels, split.test.len());
    assert!((0.0..=1.0).contains(&r.auroc));
}

#[test]
fn finetune_input_errors() {
    let b = bench(1, 7);
    let split = make_split(&b.dataset, &b.labels, "T1", PretrainStrategy::Adaptive).unwrap();
    let mut model = init_model(Variant::AE, b.dataset.n_genes(), &fast()).unwrap();

    let err = finetune(&mut model, &b.dataset, &[], &b.drugs, &fast()).unwrap_err();
    assert_eq!(err.category(), "invalid-input");

    let err = finetune(&mut model, &b.dataset, &split.test[..1], &b.drugs, &fast()).unwrap_err();
    assert!(err.to_string().contains("is not a cell line"), "{err}");

    let mut ghost = split.finetune[0].clone();
    ghost.drug_id = "NO_SUCH_DRUG".into();
    let err = finetune(&mut model, &b.dataset, &[ghost], &b.drugs, &fast()).unwrap_err();
    assert!(matches!(err, Error::MissingDrugFeature(ref d) if d == "NO_SUCH_DRUG"));

    let raw = ResponseLabel::new(
        split.finetune[0].sample_id.clone(),
        "D000",
        ResponseKind::CellLineAuc,
        0.4,
    );
    assert!(finetune(&mut model, &b.dataset, &[raw], &b.drugs, &fast()).is_err());
    assert!(!model.is_fitted());

    let err = evaluate(
        &model,
        &b.dataset,
        &split.test,
        &b.drugs,
        "T1",
        PretrainStrategy::Adaptive,
    )
    .unwrap_err();
    assert_eq!(err.category(), "unfitted");
}

#[test]
fn zoo_sweep_covers_every_cell() {
    let b = bench(2, 8);
    let cfg = TrainConfig {
        epochs_pretrain: 1,
        epochs_finetune: 1,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let tumors = vec!["T1".to_string(), "T2".to_string()];
    let rows = run_zoo(
        &b.dataset,
        &b.labels,
        &b.drugs,
        &tumors,
        &Variant::ALL,
        &[PretrainStrategy::Adaptive, PretrainStrategy::AllData],
        &cfg,
    )
    .unwrap();
    assert_eq!(rows.len(), 32);
    let keys: BTreeSet<_> = rows
        .iter()
        .map(|r| (r.tumor_type.clone(), r.variant, r.strategy))
        .collect();
    assert_eq!(keys.len(), 32);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.auroc)));
    assert_eq!(percent_change_table(&rows).len(), 16);
}

#[test]
fn shared_embedding_width_is_fixed() {
    let b = bench(1, 9);
    for v in Variant::ALL {
        let model = init_model(v, b.dataset.n_genes(), &fast()).unwrap();
        let x = b
            .dataset
            .rows(&b.dataset.ids_where(Domain::Patient, None)[..3])
            .unwrap();
        assert_eq!(model.encode(&x, Domain::Patient).unwrap().shared.ncols(), EMBED_DIM);
    }
}
