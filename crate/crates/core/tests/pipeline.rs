use mishape::data::{
    export_csv, gen_labeled_synth, import_csv, load_dataset, save_dataset, split, CsvSchema, LabeledSynthSpec, SplitSpec,
    PUBLIC_LABEL, SENSITIVE_LABEL,
};
use mishape::eval::{build_report, evaluate_tasks, ClassifierConfig, EvalReport, ReportEntry};
use mishape::mi::EstimatorConfig;
use mishape::nn::{read_checkpoint, write_checkpoint};
use mishape::shaping::{
    baseline_noisy, baseline_random_encoder, encode_dataset, train_shaping, EncoderModel, LabelTerm, ShapingConfig,
};
use tempfile::TempDir;

fn small_config() -> ShapingConfig {
    ShapingConfig {
        gamma: 0.2,
        utility_terms: vec![LabelTerm::new(PUBLIC_LABEL, 1.0)],
        sensitive_terms: vec![LabelTerm::new(SENSITIVE_LABEL, 0.4)],
        output_dim: 4,
        encoder_hidden: vec![16, 8],
        epochs: 3,
        steps_per_epoch: 4,
        first_epoch_iterations: 80,
        estimator: EstimatorConfig {
            hidden_dims: vec![16, 8],
            max_iterations: 60,
            ..EstimatorConfig::default()
        },
        seed: 4,
        ..ShapingConfig::default()
    }
}

#[test]
fn generate_store_shape_encode_evaluate() {
    let dir = TempDir::new().unwrap();
    let spec = LabeledSynthSpec::with_axis_correlation(10, 500, 0.3, 0.05, 8).unwrap();
    let ds = gen_labeled_synth(&spec).unwrap();
    let path = dir.path().join("data.isvd");
    save_dataset(&ds, &path).unwrap();
    let ds = load_dataset(&path).unwrap();
    let (train, valid) = split(&ds, &SplitSpec::new(0.8, 8)).unwrap();
    assert_eq!(train.len() + valid.len(), 500);

    let cfg = small_config();
    let (encoder, history) = train_shaping::<f64>(&train, &cfg).unwrap();
    assert_eq!(history.epochs.len(), 3);
    assert_eq!(history.diverged_at_epoch, None);
    assert!(history.to_csv(&cfg).lines().count() == 4);

    let ckpt = dir.path().join("enc.ismlp");
    write_checkpoint(&ckpt, &encoder.to_checkpoint()).unwrap();
    let restored = EncoderModel::<f64>::from_checkpoint(read_checkpoint(&ckpt).unwrap());
    let (a, b) = (encode_dataset(&encoder, &valid).unwrap(), encode_dataset(&restored, &valid).unwrap());
    assert_eq!(a.vectors(), b.vectors());
    assert_eq!(a.labels(), valid.labels());
    assert_eq!(restored.training_fingerprint, history.config_fingerprint);

    let tasks = vec![PUBLIC_LABEL.to_string(), SENSITIVE_LABEL.to_string()];
    let cc = ClassifierConfig::default();
    let random = baseline_random_encoder::<f64>(10, 4, 1).unwrap();
    let mut entries = Vec::new();
    for (name, tr, va) in [
        ("original", train.clone(), valid.clone()),
        ("shaped", encode_dataset(&encoder, &train).unwrap(), a),
        ("random", encode_dataset(&random, &train).unwrap(), encode_dataset(&random, &valid).unwrap()),
        ("noisy", baseline_noisy(&train, 0.5, 2).unwrap(), baseline_noisy(&valid, 0.5, 3).unwrap()),
    ] {
        entries.push(ReportEntry {
            embedding: name.to_string(),
            dim: tr.dim(),
            tasks: evaluate_tasks::<f64>(&tr, &va, &tasks, &cc).unwrap(),
            bias_nats: None,
            config_fingerprint: history.config_fingerprint.clone(),
        });
    }
    let report = build_report(entries).unwrap();
    let back = EvalReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back.entries.len(), 4);
    assert_eq!(back.entry("shaped").unwrap().dim, 4);
    assert!(back.entry("original").unwrap().tasks[0].accuracy > 0.8);
    assert_eq!(report.to_table().lines().count(), back.to_table().lines().count());
}

#[test]
fn csv_round_trip_preserves_rows_and_labels() {
    let dir = TempDir::new().unwrap();
    let ds = gen_labeled_synth(&LabeledSynthSpec::with_axis_correlation(5, 40, 0.0, 0.0, 2).unwrap()).unwrap();
    let path = dir.path().join("d.csv");
    export_csv(&ds, &path).unwrap();
    let back = import_csv(&path, &CsvSchema::for_dataset(&ds)).unwrap();
    assert_eq!(back.len(), 40);
    assert_eq!(back.labels(), ds.labels());
    for (x, y) in back.vectors().iter().zip(ds.vectors()) {
        assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
    }
}

#[test]
fn shaping_is_reproducible_in_each_precision() {
    let ds = gen_labeled_synth(&LabeledSynthSpec::with_axis_correlation(10, 200, 0.3, 0.05, 3).unwrap()).unwrap();
    let cfg = small_config();
    let run32 = || train_shaping::<f32>(&ds, &cfg).unwrap().0.to_checkpoint().to_bytes();
    let run64 = || train_shaping::<f64>(&ds, &cfg).unwrap().0.to_checkpoint().to_bytes();
    assert_eq!(run32(), run32());
    assert_eq!(run64(), run64());
}
