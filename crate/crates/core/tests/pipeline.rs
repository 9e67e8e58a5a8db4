use relscm_core::config::GenerationConfig;
use relscm_core::eval::{run_comparison, EvalConfig};
use relscm_core::pipeline::{
    cmd_eval, cmd_generate, cmd_regenerate, generate_dataset, load_dataset, ADD_CSV, MAIN_CSV, MANIFEST_JSON,
    METRICS_CSV, REPORT_JSON, SCHEMA_DOT, SCHEMA_JSON,
};
use relscm_core::{ColumnData, ColumnKind, ColumnRole};

fn small(seed: u64, latent: usize) -> GenerationConfig {
    GenerationConfig {
        master_seed: seed,
        rows_main: 3_000,
        rows_add: 200,
        latent_count: latent,
        ..Default::default()
    }
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let cfg = small(5, 2);
    let one = generate_dataset(&cfg, 1).unwrap();
    let many = generate_dataset(&cfg, 8).unwrap();
    assert_eq!(one.main_table, many.main_table);
    assert_eq!(one.add_table, many.add_table);
    assert_eq!(one.fingerprint, many.fingerprint);
}

#[test]
fn tables_follow_the_schema() {
    let ds = generate_dataset(&small(6, 2), 0).unwrap();
    let main = &ds.main_table;
    let names: Vec<&str> = main.columns.iter().map(|c| c.info.name.as_str()).collect();
    let expected: Vec<String> = (0..ds.schema.g_main.len())
        .map(|i| format!("M{i}"))
        .chain(std::iter::once("C".to_string()))
        .collect();
    assert_eq!(names, expected);
    let add_names: Vec<&str> = ds.add_table.columns.iter().map(|c| c.info.name.as_str()).collect();
    assert_eq!(add_names.last(), Some(&"C"));
    assert_eq!(add_names.len(), ds.schema.g_add.len() + 1);
    for table in [main, &ds.add_table] {
        for col in &table.columns {
            match (&col.data, col.info.kind) {
                (ColumnData::Numeric(v), ColumnKind::Numeric) => assert!(v.iter().all(|x| x.is_finite())),
                (ColumnData::Categorical(v), ColumnKind::Categorical { categories }) => {
                    assert!(categories >= 2);
                    assert!(v.iter().all(|&c| (c as usize) < categories), "{}", col.info.name);
                }
                _ => panic!("{} data does not match its kind", col.info.name),
            }
        }
    }
    // Main targets are exactly the main-graph sinks; C is never a target.
    let targets: Vec<usize> = main.target_columns();
    assert_eq!(targets.len(), ds.schema.g_main.targets().len());
    assert_eq!(main.column("C").unwrap().info.role, ColumnRole::Feature);
}

#[test]
fn generate_eval_regenerate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small(8, 2);
    let manifest = cmd_generate(&cfg, &out, 0).unwrap();
    for f in [MAIN_CSV, ADD_CSV, SCHEMA_JSON, SCHEMA_DOT, MANIFEST_JSON] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(manifest.files.len(), 4);

    let loaded = load_dataset(&out).unwrap();
    let fresh = generate_dataset(&cfg, 0).unwrap();
    assert_eq!(loaded.main_table, fresh.main_table);
    assert_eq!(loaded.fingerprint, fresh.fingerprint);

    let report = cmd_eval(&out, &EvalConfig::default(), None, 0).unwrap();
    assert!(out.join(REPORT_JSON).is_file() && out.join(METRICS_CSV).is_file());
    assert_eq!(report.train_rows + report.test_rows, 3_000);
    assert_eq!(report, run_comparison(&fresh, &EvalConfig::default()).unwrap());

    let again = dir.path().join("again");
    let regen = cmd_regenerate(&out.join(MANIFEST_JSON), Some(&again), 1).unwrap();
    assert_eq!(regen.files, manifest.files);
    for f in [MAIN_CSV, ADD_CSV, SCHEMA_JSON] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn tampered_output_fails_regeneration_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    cmd_generate(&small(9, 1), &out, 0).unwrap();
    let manifest_path = out.join(MANIFEST_JSON);
    let text = std::fs::read_to_string(&manifest_path).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["files"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&manifest_path, serde_json::to_vec(&value).unwrap()).unwrap();
    let err = cmd_regenerate(&manifest_path, Some(&dir.path().join("b")), 0).unwrap_err();
    assert!(err.to_string().contains("sha256"), "{err}");
}

#[test]
fn ablated_dataset_reports_no_latent_targets() {
    let ds = generate_dataset(&small(10, 0), 0).unwrap();
    assert!(ds.schema.latent_edges.is_empty());
    let report = run_comparison(&ds, &EvalConfig::default()).unwrap();
    assert!(!report.targets.is_empty());
    assert!(report.targets.iter().all(|t| !t.latently_affected));
}

#[test]
fn empty_additional_table_leaves_metrics_unchanged() {
    let mut cfg = small(11, 2);
    cfg.rows_add = 0;
    let ds = generate_dataset(&cfg, 0).unwrap();
    let report = run_comparison(&ds, &EvalConfig::default()).unwrap();
    for t in &report.targets {
        assert_eq!(t.main_only, t.joined, "{}", t.name);
    }
}
