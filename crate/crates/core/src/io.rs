//! File formats: table CSVs, the schema document, Graphviz export and the
//! dataset manifest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::GenerationConfig;
use crate::error::{Error, Result};
use crate::graph::DagSpec;
use crate::presample::PrerunStats;
use crate::relational::{RelationalDataset, RelationalSchema};
use crate::sampler::{Column, ColumnData, ColumnInfo, ColumnKind, ColumnRole, Provenance, Table};
use crate::seed::SeedRecord;

pub const TOOL_NAME: &str = "relscm";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA_FORMAT_VERSION: u32 = 1;

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Header row of column names, one row per sample. Numbers use the shortest
/// representation that parses back to the same `f64`; categories are
/// 0-based integers.
pub fn table_to_csv(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table.columns.iter().map(|c| c.info.name.as_str()))?;
    let mut record: Vec<String> = Vec::with_capacity(table.columns.len());
    for r in 0..table.row_count {
        record.clear();
        for col in &table.columns {
            record.push(match &col.data {
                ColumnData::Numeric(v) => format!("{}", v[r]),
                ColumnData::Categorical(v) => v[r].to_string(),
            });
        }
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parses a CSV written by [`table_to_csv`] against known column headers.
pub fn table_from_csv(bytes: &[u8], columns: &[ColumnInfo], provenance: Provenance) -> Result<Table> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        return Err(Error::InvalidInput(format!("CSV header {header:?}, expected {expected:?}")));
    }
    let mut data: Vec<ColumnData> = columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
            ColumnKind::Categorical { .. } => ColumnData::Categorical(Vec::new()),
        })
        .collect();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != columns.len() {
            return Err(Error::InvalidInput(format!("row {rows} has {} fields", rec.len())));
        }
        for ((field, col), info) in rec.iter().zip(data.iter_mut()).zip(columns) {
            let bad = |e: &dyn std::fmt::Display| {
                Error::InvalidInput(format!("row {rows} column {}: {e}", info.name))
            };
            match col {
                ColumnData::Numeric(v) => v.push(field.parse::<f64>().map_err(|e| bad(&e))?),
                ColumnData::Categorical(v) => v.push(field.parse::<u32>().map_err(|e| bad(&e))?),
            }
        }
        rows += 1;
    }
    let table = Table {
        columns: columns
            .iter()
            .cloned()
            .zip(data)
            .map(|(info, data)| Column { info, data })
            .collect(),
        row_count: rows,
        provenance,
    };
    table.validate()?;
    Ok(table)
}

/// Conventions that another implementation needs to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub quantiles: String,
    pub variance_pooling: String,
    pub median_pooling: String,
    pub categorical_pooling: String,
    pub weight_init: String,
    pub logabs: String,
    pub node_order: String,
    pub seed_derivation: String,
    pub grown_parent_sets: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            quantiles: crate::presample::QUANTILE_CONVENTION.into(),
            variance_pooling: "population (divide by n)".into(),
            median_pooling: "even n averages the middle pair".into(),
            categorical_pooling: "nearest centroid, ties to lowest index, 0-based ids".into(),
            weight_init: "Normal(0, 1/fan_in), no bias".into(),
            logabs: "ln(|x| + 1e-6)".into(),
            node_order: "index order is topological; parents concatenated ascending".into(),
            seed_derivation: "sha256(\"relscm-subseed-v1\\0\" | seed u64le | len(tag) u64le | tag | index u64le)[0..8] as u64le -> ChaCha8 seed_from_u64".into(),
            grown_parent_sets: "weights re-initialised when coupling or latent edges add parents".into(),
        }
    }
}

/// Contents of schema.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDocument {
    pub format_version: u32,
    pub fingerprint: String,
    pub master_seed: u64,
    pub conventions: Conventions,
    pub main_columns: Vec<ColumnInfo>,
    pub add_columns: Vec<ColumnInfo>,
    pub latently_affected_targets: Vec<String>,
    pub schema: RelationalSchema,
    pub stats: PrerunStats,
}

impl SchemaDocument {
    pub fn new(ds: &RelationalDataset, master_seed: u64) -> Self {
        let names = |v: Vec<usize>| v.into_iter().map(|i| ds.schema.merged.nodes[i].name.clone()).collect();
        SchemaDocument {
            format_version: SCHEMA_FORMAT_VERSION,
            fingerprint: ds.fingerprint.clone(),
            master_seed,
            conventions: Conventions::default(),
            main_columns: ds.main_table.headers(),
            add_columns: ds.add_table.headers(),
            latently_affected_targets: names(ds.schema.latently_affected_targets()),
            schema: ds.schema.clone(),
            stats: ds.stats.clone(),
        }
    }

    pub fn provenance(&self, run_tag: &str) -> Provenance {
        Provenance {
            schema_fingerprint: self.fingerprint.clone(),
            master_seed: self.master_seed,
            run_tag: run_tag.to_string(),
        }
    }
}

pub fn read_schema_document(path: &std::path::Path) -> Result<SchemaDocument> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(name: &str, bytes: &[u8]) -> Self {
        FileRecord {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

/// Contents of manifest.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool: String,
    pub tool_version: String,
    pub config: GenerationConfig,
    pub schema_fingerprint: String,
    pub files: Vec<FileRecord>,
    pub seeds: Vec<SeedRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

const FEATURE_FILL: &str = "lightblue";
const TARGET_FILL: &str = "palegreen";
const COUPLING_FILL: &str = "gold";
const LATENT_EDGE: &str = "goldenrod";

fn node_label(dag: &DagSpec, i: usize) -> String {
    let node = &dag.nodes[i];
    match node.category_count {
        Some(k) if node.pooling.is_categorical() => format!("{}\\ncat({k})", node.name),
        _ => format!("{}\\n{}", node.name, node.pooling.kind.name()),
    }
}

fn write_nodes(out: &mut String, dag: &DagSpec, nodes: impl Iterator<Item = usize>, indent: &str) {
    for i in nodes {
        let fill = if dag.roles.get(i).is_some_and(|r| r.is_target()) {
            TARGET_FILL
        } else {
            FEATURE_FILL
        };
        out.push_str(&format!(
            "{indent}\"{}\" [label=\"{}\", fillcolor={fill}];\n",
            dag.nodes[i].name,
            node_label(dag, i)
        ));
    }
}

fn edge_label(dag: &DagSpec, child: usize) -> &'static str {
    dag.nodes[child].activation().map(|a| a.name()).unwrap_or("")
}

/// DOT for a single graph: targets green, features blue, edges labelled with
/// the child's activation.
pub fn dag_to_dot(dag: &DagSpec) -> String {
    let mut out = String::from("digraph scm {\n  node [style=filled];\n");
    write_nodes(&mut out, dag, 0..dag.len(), "  ");
    for &(p, c) in &dag.edges {
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
            dag.nodes[p].name,
            dag.nodes[c].name,
            edge_label(dag, c)
        ));
    }
    out.push_str("}\n");
    out
}

/// DOT for a relational schema. Roles are those of the main and additional
/// graphs on their own; `C` is drawn separately and latent edges dashed.
pub fn schema_to_dot(schema: &RelationalSchema) -> String {
    let m = &schema.merged;
    let c = schema.c_index();
    let off = schema.main_offset();
    let mut out = String::from("digraph relational_scm {\n  rankdir=TB;\n  node [style=filled];\n");
    out.push_str("  subgraph cluster_additional {\n    label=\"additional\";\n");
    let mut add_view = m.clone();
    add_view.roles = schema.g_add.roles.clone();
    add_view.roles.resize(m.len(), crate::graph::Role::Feature);
    write_nodes(&mut out, &add_view, 0..c, "    ");
    out.push_str("  }\n  subgraph cluster_main {\n    label=\"main\";\n");
    let mut main_view = m.clone();
    main_view.roles = vec![crate::graph::Role::Feature; off];
    main_view.roles.extend(schema.g_main.roles.iter().copied());
    write_nodes(&mut out, &main_view, off..m.len(), "    ");
    out.push_str("  }\n");
    out.push_str(&format!(
        "  \"{}\" [label=\"{}\", shape=box, fillcolor={COUPLING_FILL}];\n",
        m.nodes[c].name,
        node_label(m, c)
    ));
    let latent: Vec<(usize, usize)> = schema
        .latent_edges
        .iter()
        .map(|&(a, t)| (a, off + t))
        .collect();
    for &(p, ch) in &m.edges {
        let style = if latent.contains(&(p, ch)) {
            format!(", color={LATENT_EDGE}, style=dashed")
        } else {
            String::new()
        };
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [label=\"{}\"{style}];\n",
            m.nodes[p].name,
            m.nodes[ch].name,
            edge_label(m, ch)
        ));
    }
    out.push_str("}\n");
    out
}

/// Roles of `columns` as recorded in a header list.
pub fn target_names(columns: &[ColumnInfo]) -> Vec<&str> {
    columns
        .iter()
        .filter(|c| c.role == ColumnRole::Target)
        .map(|c| c.name.as_str())
        .collect()
}
