//! End-to-end runs: config -> schema -> dataset -> files, evaluation of a
//! dataset directory, and regeneration from a manifest.

use std::path::{Path, PathBuf};

use crate::config::GenerationConfig;
use crate::error::{Error, Result};
use crate::eval::{run_comparison, EvalConfig, EvalReport};
use crate::graph::{assign_node_configs, sample_dag};
use crate::io::{self, DatasetManifest, FileRecord, SchemaDocument};
use crate::relational::{compose, generate_relational, RelationalDataset, RelationalRun, RelationalSchema};
use crate::seed::{substream, tags, SeedRecord};

pub const MAIN_CSV: &str = "main.csv";
pub const ADD_CSV: &str = "additional.csv";
pub const SCHEMA_JSON: &str = "schema.json";
pub const SCHEMA_DOT: &str = "schema.dot";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const REPORT_JSON: &str = "eval_report.json";
pub const METRICS_CSV: &str = "metrics.csv";

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Samples both graphs, their node configurations and the coupling.
pub fn build_schema(cfg: &GenerationConfig) -> Result<RelationalSchema> {
    cfg.validate()?;
    let seed = cfg.master_seed;
    let main = sample_dag(&cfg.main_graph, seed, tags::GRAPH_MAIN)?;
    let main = assign_node_configs(main, cfg, "M", &mut substream(seed, tags::CONFIGS_MAIN, 0))?;
    let add = sample_dag(&cfg.add_graph, seed, tags::GRAPH_ADD)?;
    let add = assign_node_configs(add, cfg, "A", &mut substream(seed, tags::CONFIGS_ADD, 0))?;
    compose(
        &main,
        &add,
        cfg.latent_count,
        &cfg.coupling_category_count,
        &cfg.activations,
        &mut substream(seed, tags::COMPOSE, 0),
    )
}

pub fn relational_run(cfg: &GenerationConfig) -> RelationalRun {
    RelationalRun {
        rows_main: cfg.rows_main,
        rows_add: cfg.rows_add,
        noise: cfg.noise,
        num_presamples: cfg.num_presamples,
        quantiles: cfg.quantiles,
        kmeans: cfg.kmeans,
        master_seed: cfg.master_seed,
    }
}

pub fn generate_dataset(cfg: &GenerationConfig, threads: usize) -> Result<RelationalDataset> {
    let schema = build_schema(cfg)?;
    with_threads(threads, || generate_relational(&schema, &relational_run(cfg)))?
}

pub fn seed_log(cfg: &GenerationConfig) -> Vec<SeedRecord> {
    let s = cfg.master_seed;
    let last = |n: usize| n.saturating_sub(1) as u64;
    vec![
        SeedRecord::new(s, tags::GRAPH_MAIN, 0, last(cfg.main_graph.max_attempts)),
        SeedRecord::new(s, tags::GRAPH_ADD, 0, last(cfg.add_graph.max_attempts)),
        SeedRecord::new(s, tags::CONFIGS_MAIN, 0, 0),
        SeedRecord::new(s, tags::CONFIGS_ADD, 0, 0),
        SeedRecord::new(s, tags::COMPOSE, 0, 0),
        SeedRecord::new(s, tags::PRERUN, 0, last(cfg.num_presamples)),
        SeedRecord::new(s, tags::KMEANS, 0, 0),
        SeedRecord::new(s, tags::MAIN_ROWS, 0, last(cfg.rows_main)),
        SeedRecord::new(s, tags::ADD_ROWS, 0, last(cfg.rows_add)),
    ]
}

/// Generates a dataset and writes main.csv, additional.csv, schema.json,
/// schema.dot and manifest.json into `out_dir`.
pub fn cmd_generate(cfg: &GenerationConfig, out_dir: &Path, threads: usize) -> Result<DatasetManifest> {
    let dataset = generate_dataset(cfg, threads)?;
    std::fs::create_dir_all(out_dir)?;
    let doc = SchemaDocument::new(&dataset, cfg.master_seed);
    let files: [(&str, Vec<u8>); 4] = [
        (MAIN_CSV, io::table_to_csv(&dataset.main_table)?),
        (ADD_CSV, io::table_to_csv(&dataset.add_table)?),
        (SCHEMA_JSON, io::to_json_bytes(&doc)?),
        (SCHEMA_DOT, io::schema_to_dot(&dataset.schema).into_bytes()),
    ];
    let mut records = Vec::new();
    for (name, bytes) in &files {
        std::fs::write(out_dir.join(name), bytes)?;
        records.push(FileRecord::of(name, bytes));
    }
    let mut snapshot = cfg.clone();
    snapshot.output_dir = out_dir.to_path_buf();
    let manifest = DatasetManifest {
        tool: io::TOOL_NAME.to_string(),
        tool_version: io::TOOL_VERSION.to_string(),
        config: snapshot,
        schema_fingerprint: dataset.fingerprint.clone(),
        files: records,
        seeds: seed_log(cfg),
        warnings: dataset.stats.warnings.clone(),
    };
    std::fs::write(out_dir.join(MANIFEST_JSON), io::to_json_bytes(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset directory written by [`cmd_generate`].
pub fn load_dataset(dir: &Path) -> Result<RelationalDataset> {
    let doc = io::read_schema_document(&dir.join(SCHEMA_JSON))?;
    let main_table = io::table_from_csv(
        &std::fs::read(dir.join(MAIN_CSV))?,
        &doc.main_columns,
        doc.provenance(crate::seed::tags::MAIN_ROWS),
    )?;
    let add_table = io::table_from_csv(
        &std::fs::read(dir.join(ADD_CSV))?,
        &doc.add_columns,
        doc.provenance(crate::seed::tags::ADD_ROWS),
    )?;
    let fingerprint = crate::relational::fingerprint(&doc.schema, &doc.stats)?;
    if fingerprint != doc.fingerprint {
        return Err(Error::Mismatch(format!(
            "schema.json content hashes to {fingerprint}, header says {}",
            doc.fingerprint
        )));
    }
    Ok(RelationalDataset {
        schema: doc.schema,
        stats: doc.stats,
        main_table,
        add_table,
        fingerprint,
    })
}

/// Evaluates a dataset directory; writes eval_report.json and metrics.csv
/// into `out_dir` (defaults to the dataset directory).
pub fn cmd_eval(dataset_dir: &Path, cfg: &EvalConfig, out_dir: Option<&Path>, threads: usize) -> Result<EvalReport> {
    let dataset = load_dataset(dataset_dir)?;
    let report = with_threads(threads, || run_comparison(&dataset, cfg))??;
    let out: PathBuf = out_dir.unwrap_or(dataset_dir).to_path_buf();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(REPORT_JSON), io::to_json_bytes(&report)?)?;
    std::fs::write(out.join(METRICS_CSV), report.metrics_csv()?)?;
    Ok(report)
}

/// Re-runs the manifest's configuration into `out_dir` (defaults to the
/// recorded output directory) and checks every file hash.
pub fn cmd_regenerate(manifest_path: &Path, out_dir: Option<&Path>, threads: usize) -> Result<DatasetManifest> {
    let original: DatasetManifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    let out = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| original.config.output_dir.clone());
    let mut cfg = original.config.clone();
    cfg.output_dir = out.clone();
    let fresh = cmd_generate(&cfg, &out, threads)?;
    if fresh.schema_fingerprint != original.schema_fingerprint {
        return Err(Error::Mismatch(format!(
            "schema fingerprint {} differs from recorded {}",
            fresh.schema_fingerprint, original.schema_fingerprint
        )));
    }
    for rec in &original.files {
        match fresh.files.iter().find(|f| f.name == rec.name) {
            Some(f) if f.sha256 == rec.sha256 => {}
            Some(f) => {
                return Err(Error::Mismatch(format!(
                    "{}: sha256 {} differs from recorded {}",
                    rec.name, f.sha256, rec.sha256
                )))
            }
            None => return Err(Error::Mismatch(format!("{} was not regenerated", rec.name))),
        }
    }
    Ok(fresh)
}
