use gbml_core::experiments::{CorrelationResult, CorrelationStudy, SweepResult};
use gbml_core::io::{
    correlate_table, load_checkpoint, parse_config, parse_config_str, save_checkpoint, serialize_config, sweep_table,
    write_results, Checkpoint, ExperimentConfig, ExperimentKind, CHECKPOINT_VERSION,
};
use gbml_core::model::{init_params, ModelConfig};
use gbml_core::tasks::{DistributionTag, Scenario};
use gbml_core::{Algorithm, Error};

fn checkpoint() -> Checkpoint {
    let model = ModelConfig::new(2, &[8], 5).with_seed(11);
    let mut params = init_params(&model).unwrap();
    // awkward floats that only survive a bit-exact encoding
    params.layers_mut()[1].bias.data_mut()[0] = 0.1 + 0.2;
    params.layers_mut()[1].bias.data_mut()[1] = -1e-310;
    Checkpoint {
        model,
        algorithm: Algorithm::Reptile,
        params,
        iteration: 1234,
        val_metric: 2.0f64 / 3.0,
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let c = checkpoint();
    assert_eq!(c.params.num_params(), 69);
    save_checkpoint(&path, &c).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let bits = |c: &Checkpoint| c.params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&c));
    assert_eq!(back.val_metric.to_bits(), c.val_metric.to_bits());
    assert_eq!(back, c);
}

#[test]
fn truncated_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &checkpoint()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [bytes.len() - 3, bytes.len() / 2, 10] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint { .. })), "cut {cut}");
    }
}

#[test]
fn bumped_version_is_a_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &checkpoint()).unwrap();
    let text = std::fs::read(&path).unwrap();
    let needle = format!("version {CHECKPOINT_VERSION}\n");
    let pos = text.windows(needle.len()).position(|w| w == needle.as_bytes()).unwrap();
    let mut bumped = text[..pos].to_vec();
    bumped.extend_from_slice(format!("version {}\n", CHECKPOINT_VERSION + 1).as_bytes());
    bumped.extend_from_slice(&text[pos + needle.len()..]);
    std::fs::write(&path, bumped).unwrap();
    match load_checkpoint(&path) {
        Err(Error::VersionMismatch { found, expected }) => {
            assert_eq!((found, expected), (CHECKPOINT_VERSION + 1, CHECKPOINT_VERSION));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn toy_defaults_fill_in() {
    let cfg = parse_config_str("kind = \"toy\"\n").unwrap();
    assert_eq!(cfg.toy.inner_steps, 5);
    assert_eq!(cfg.toy.scenario, Scenario::A);
    assert_eq!(cfg.toy.num_inits, 100);
}

#[test]
fn config_round_trips() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Correlate);
    cfg.seed = 17;
    cfg.algorithm = Some(Algorithm::Fomaml);
    cfg.toy.scenario = Scenario::B;
    cfg.fewshot.eval_lr = 0.1 + 0.2;
    cfg.correlate.capacities = vec![vec![8, 8], vec![64]];
    let text = serialize_config(&cfg).unwrap();
    assert_eq!(parse_config_str(&text).unwrap(), cfg);
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    assert!(matches!(
        parse_config_str("kind = \"toy\"\ncolour = 1\n"),
        Err(Error::ConfigParse { line: 2, .. })
    ));
    assert!(matches!(
        parse_config_str("kind = \"eval\"\nalgorithm = \"fomaml\"\n"),
        Err(Error::ConfigValidation { field, .. }) if field == "checkpoint"
    ));
    assert!(matches!(
        parse_config_str("kind = \"toy\"\n[toy.reptile]\ninner_lr = 0.1\n"),
        Err(Error::ConfigValidation { .. })
    ));
}

fn sweep_rows() -> Vec<SweepResult> {
    [(Algorithm::Reptile, 5), (Algorithm::Fomaml, 1), (Algorithm::Reptile, 1)]
        .into_iter()
        .map(|(algorithm, k)| SweepResult {
            algorithm,
            k_train: k,
            seed: 0,
            accuracy_mean: 1.0 / 3.0,
            accuracy_min: 0.25,
            accuracy_max: 0.5,
            per_seed: vec![0.25, 0.5],
        })
        .collect()
}

#[test]
fn sweep_csv_schema_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_results(&path, &sweep_table(&sweep_rows())).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "algorithm,k_train,seed,accuracy_mean,accuracy_min,accuracy_max");
    assert_eq!(lines[1], "fomaml,1,0,0.333333333,0.25,0.5");
    assert_eq!(lines[2], "reptile,1,0,0.333333333,0.25,0.5");
    assert_eq!(lines[3], "reptile,5,0,0.333333333,0.25,0.5");
    let again = dir.path().join("sweep2.csv");
    write_results(&again, &sweep_table(&sweep_rows())).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn correlate_csv_schema() {
    let study = CorrelationStudy {
        runs: Vec::new(),
        results: vec![CorrelationResult {
            method: "finetune".into(),
            capacity: "32".into(),
            universe: DistributionTag::Shifted,
            pairs: vec![(0.5, 0.4); 5],
            r: None,
            p: None,
            significant: false,
        }],
    };
    let csv = String::from_utf8(correlate_table(&study).to_csv().unwrap()).unwrap();
    assert_eq!(csv, "method,capacity,universe,r,p,n\nfinetune,32,shifted,,,5\n");
}

#[test]
fn empty_results_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        write_results(&dir.path().join("x.csv"), &sweep_table(&[])),
        Err(Error::EmptyRecords(_))
    ));
}
