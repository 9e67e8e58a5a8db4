use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use relscm_core::eval::EvalConfig;
use relscm_core::io::{read_schema_document, schema_to_dot};
use relscm_core::pipeline::{self, build_schema};
use relscm_core::{load_config, GenerationConfig};

/// Synthetic relational tables from structural causal models.
#[derive(Parser)]
#[command(name = "relscm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a schema and write main.csv, additional.csv, schema.json,
    /// schema.dot and manifest.json.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare main-only and joined kNN prediction on a generated dataset.
    Eval {
        /// Directory written by `generate`.
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        /// Recorded in the report.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report directory (defaults to the dataset directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Re-run a manifest and check every output hash.
    Regenerate {
        manifest: PathBuf,
        /// Output directory (defaults to the one recorded in the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Write the Graphviz view of a schema, either from an existing
    /// schema.json or by sampling one from the configuration.
    ExportDot {
        /// Existing schema.json; without it the schema is sampled.
        #[arg(long, conflicts_with_all = ["config", "seed"])]
        schema: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    rows_main: Option<usize>,
    #[arg(long)]
    rows_add: Option<usize>,
}

fn resolve_config(gen: &GenArgs, run: Option<&RunArgs>) -> Result<GenerationConfig> {
    let mut cfg = match &gen.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => GenerationConfig::default(),
    };
    if let Some(seed) = gen.seed {
        cfg.master_seed = seed;
    }
    if let Some(run) = run {
        if let Some(out) = &run.out {
            cfg.output_dir = out.clone();
        }
        if let Some(n) = run.rows_main {
            cfg.rows_main = n;
        }
        if let Some(n) = run.rows_add {
            cfg.rows_add = n;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn export_dot(schema: Option<&Path>, gen: &GenArgs) -> Result<String> {
    let schema = match schema {
        Some(path) => {
            read_schema_document(path)
                .with_context(|| format!("reading {}", path.display()))?
                .schema
        }
        None => build_schema(&resolve_config(gen, None)?)?,
    };
    Ok(schema_to_dot(&schema))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { gen, run } => {
            let cfg = resolve_config(&gen, Some(&run))?;
            let out = cfg.output_dir.clone();
            let manifest = pipeline::cmd_generate(&cfg, &out, run.threads)?;
            print_warnings(&manifest.warnings);
            println!("wrote {} (schema {})", out.display(), manifest.schema_fingerprint);
        }
        Command::Eval { dataset, k, test_fraction, seed, out, threads } => {
            let cfg = EvalConfig { k, test_fraction, seed };
            let report = pipeline::cmd_eval(&dataset, &cfg, out.as_deref(), threads)?;
            for t in &report.targets {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{:<6} {:?} main_only={} joined={} latent={}{}",
                    t.name,
                    t.metric,
                    fmt(t.main_only),
                    fmt(t.joined),
                    t.latently_affected,
                    t.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default()
                );
            }
        }
        Command::Regenerate { manifest, out, threads } => {
            let fresh = pipeline::cmd_regenerate(&manifest, out.as_deref(), threads)?;
            println!(
                "regenerated {} files, hashes match (schema {})",
                fresh.files.len(),
                fresh.schema_fingerprint
            );
        }
        Command::ExportDot { schema, gen, out } => {
            let dot = export_dot(schema.as_deref(), &gen)?;
            match out {
                Some(path) => std::fs::write(&path, dot).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{dot}"),
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
