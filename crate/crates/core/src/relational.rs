//! Two-table composition: an additional graph feeds a coupling node `C`
//! (a high-cardinality categorical key), which feeds the main graph. Latent
//! edges run from additional-graph features straight into main-graph targets,
//! so the main table alone cannot explain those targets.

use std::collections::VecDeque;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CountDistribution, KMeansConfig, QuantileConfig};
use crate::error::{Error, Result};
use crate::graph::{classify_nodes, sample_category_count, DagSpec, NodeSpec, PoolingKind, PoolingSpec};
use crate::presample::{build_prerun_stats, PrerunStats};
use crate::sampler::{column_info, generate_rows, subset_roles, RunSpec, Table};
use crate::scm::{init_propagation_fn, Activation, NoiseConfig};
use crate::seed::tags;

pub const COUPLING_NAME: &str = "C";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// Sink of the additional graph feeding `C` (additional-graph index).
    pub add_parent: usize,
    /// Non-sink of the main graph fed by `C` (main-graph index).
    pub main_child: usize,
    pub category_count: usize,
    /// Position of `C` in the merged graph.
    pub merged_index: usize,
}

/// Merged layout: additional nodes `0..a`, then `C` at `a`, then main nodes
/// `a+1..`. Index order stays topological.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalSchema {
    pub g_main: DagSpec,
    pub g_add: DagSpec,
    pub coupling: Coupling,
    /// `(additional feature, main target)` in their own graphs' indices.
    pub latent_edges: Vec<(usize, usize)>,
    pub merged: DagSpec,
}

impl RelationalSchema {
    pub fn add_len(&self) -> usize {
        self.g_add.len()
    }

    pub fn c_index(&self) -> usize {
        self.coupling.merged_index
    }

    pub fn main_offset(&self) -> usize {
        self.g_add.len() + 1
    }

    pub fn merged_main(&self, main_idx: usize) -> usize {
        self.main_offset() + main_idx
    }

    /// Merged indices of the main table's columns: main nodes, then `C`.
    pub fn main_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (self.main_offset()..self.merged.len()).collect();
        v.push(self.c_index());
        v
    }

    /// Merged indices of the additional table's columns: additional nodes, then `C`.
    pub fn add_nodes(&self) -> Vec<usize> {
        (0..=self.c_index()).collect()
    }

    pub fn is_add_node(&self, merged_idx: usize) -> bool {
        merged_idx < self.c_index()
    }

    pub fn is_main_node(&self, merged_idx: usize) -> bool {
        merged_idx > self.c_index()
    }

    pub fn validate(&self) -> Result<()> {
        self.merged.validate_annotated()?;
        let c = self.c_index();
        if c != self.g_add.len() || self.merged.len() != self.g_add.len() + 1 + self.g_main.len() {
            return Err(Error::ContractViolation("merged layout does not match component graphs".into()));
        }
        let cnode = &self.merged.nodes[c];
        if !cnode.pooling.is_categorical() {
            return Err(Error::ContractViolation("coupling node must be categorical".into()));
        }
        if !self.g_add.roles[self.coupling.add_parent].is_target() {
            return Err(Error::ContractViolation("C's parent is not an additional-graph sink".into()));
        }
        if self.g_main.roles[self.coupling.main_child].is_target() {
            return Err(Error::ContractViolation("C's child is a main-graph sink".into()));
        }
        for &(a, m) in &self.latent_edges {
            if self.g_add.roles[a].is_target() || !self.g_main.roles[m].is_target() {
                return Err(Error::ContractViolation(format!(
                    "latent edge ({a}, {m}) must run from an additional feature to a main target"
                )));
            }
        }
        Ok(())
    }

    /// Nodes reachable from any additional-graph node without passing `C`.
    fn reachable_avoiding_c(&self) -> Vec<bool> {
        let children = self.merged.child_lists();
        let c = self.c_index();
        let mut seen = vec![false; self.merged.len()];
        let mut queue: VecDeque<usize> = (0..c).collect();
        (0..c).for_each(|i| seen[i] = true);
        while let Some(u) = queue.pop_front() {
            for &v in &children[u] {
                if v != c && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Whether a main node (merged index) is reachable from the additional
    /// graph along a path that avoids `C`.
    pub fn latently_affected(&self, merged_idx: usize) -> bool {
        self.is_main_node(merged_idx) && self.reachable_avoiding_c()[merged_idx]
    }

    /// Main targets (merged indices) that are latently affected.
    pub fn latently_affected_targets(&self) -> Vec<usize> {
        let reach = self.reachable_avoiding_c();
        self.g_main
            .targets()
            .into_iter()
            .map(|t| self.merged_main(t))
            .filter(|&m| reach[m])
            .collect()
    }

    /// True when every path from the additional graph into the main graph
    /// passes through `C`.
    pub fn c_is_only_cut(&self) -> bool {
        let reach = self.reachable_avoiding_c();
        (self.main_offset()..self.merged.len()).all(|m| !reach[m])
    }
}

/// Couples `g_main` and `g_add` (both annotated, same hidden dimension).
///
/// Random draws happen in a fixed order: coupling cardinality, C's parent,
/// C's child, C's activation and weights, re-initialisation of C's child,
/// then the latent edges and their targets' weights. Schemas composed from
/// the same stream with different `latent_count` therefore share the coupling.
pub fn compose<R: Rng + ?Sized>(
    g_main: &DagSpec,
    g_add: &DagSpec,
    latent_count: usize,
    coupling_cat: &CountDistribution,
    activations: &[Activation],
    rng: &mut R,
) -> Result<RelationalSchema> {
    g_main.validate_annotated()?;
    g_add.validate_annotated()?;
    if g_main.hidden_dim != g_add.hidden_dim {
        return Err(Error::InvalidParameter("graphs use different hidden dimensions".into()));
    }
    if activations.is_empty() {
        return Err(Error::config("activations", "must not be empty"));
    }
    let n = g_main.hidden_dim;
    let add_sinks = g_add.targets();
    let add_features = g_add.non_targets();
    let main_targets = g_main.targets();
    let main_features = g_main.non_targets();
    if add_sinks.is_empty() || main_targets.is_empty() || main_features.is_empty() {
        return Err(Error::InvalidParameter(
            "need an additional sink plus a main sink and non-sink".into(),
        ));
    }
    let pairs = add_features.len() * main_targets.len();
    if latent_count > pairs {
        return Err(Error::config(
            "latent_count",
            format!("{latent_count} latent edges requested but only {pairs} distinct pairs exist"),
        ));
    }

    let k_c = sample_category_count(coupling_cat, rng)?;
    let add_parent = *add_sinks.choose(rng).expect("non-empty");
    let main_child = *main_features.choose(rng).expect("non-empty");

    let a = g_add.len();
    let c = a;
    let off = a + 1;
    let mut nodes: Vec<NodeSpec> = Vec::with_capacity(a + 1 + g_main.len());
    nodes.extend(g_add.nodes.iter().cloned());
    let c_act = *activations.choose(rng).expect("non-empty");
    nodes.push(NodeSpec {
        index: c,
        name: COUPLING_NAME.to_string(),
        root_dist: None,
        propagation: Some(init_propagation_fn(1, n, c_act, rng)?),
        pooling: PoolingSpec {
            kind: PoolingKind::Categorical,
        },
        category_count: Some(k_c),
    });
    for node in &g_main.nodes {
        let mut node = node.clone();
        node.index += off;
        nodes.push(node);
    }

    let mut edges: Vec<(usize, usize)> = g_add.edges.clone();
    edges.push((add_parent, c));
    edges.push((c, off + main_child));
    edges.extend(g_main.edges.iter().map(|&(p, ch)| (p + off, ch + off)));

    let mut merged = DagSpec {
        hidden_dim: n,
        nodes,
        edges,
        roles: Vec::new(),
    };
    regrow(&mut merged, off + main_child, activations, rng)?;

    let picks = index::sample(rng, pairs, latent_count).into_vec();
    let mut latent_edges: Vec<(usize, usize)> = picks
        .into_iter()
        .map(|p| (add_features[p / main_targets.len()], main_targets[p % main_targets.len()]))
        .collect();
    latent_edges.sort_unstable();
    merged.edges.extend(latent_edges.iter().map(|&(u, t)| (u, off + t)));
    merged.edges.sort_unstable();
    let mut grown: Vec<usize> = latent_edges.iter().map(|&(_, t)| off + t).collect();
    grown.sort_unstable();
    grown.dedup();
    for t in grown {
        regrow(&mut merged, t, activations, rng)?;
    }

    let merged = classify_nodes(merged);
    let schema = RelationalSchema {
        g_main: g_main.clone(),
        g_add: g_add.clone(),
        coupling: Coupling {
            add_parent,
            main_child,
            category_count: k_c,
            merged_index: c,
        },
        latent_edges,
        merged,
    };
    schema.validate()?;
    Ok(schema)
}

/// Re-initialises a node whose parent set changed. A former root loses its
/// distribution and gets a fresh activation.
fn regrow<R: Rng + ?Sized>(
    dag: &mut DagSpec,
    node: usize,
    activations: &[Activation],
    rng: &mut R,
) -> Result<()> {
    let parent_count = dag.edges.iter().filter(|&&(_, c)| c == node).count();
    let spec = &mut dag.nodes[node];
    let act = match spec.activation() {
        Some(a) => a,
        None => *activations.choose(rng).expect("non-empty"),
    };
    spec.root_dist = None;
    spec.propagation = Some(init_propagation_fn(parent_count, dag.hidden_dim, act, rng)?);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RelationalDataset {
    /// Schema after pre-run adjustments (demoted or reduced categorical nodes).
    pub schema: RelationalSchema,
    pub stats: PrerunStats,
    pub main_table: Table,
    pub add_table: Table,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Copy)]
pub struct RelationalRun {
    pub rows_main: usize,
    pub rows_add: usize,
    pub noise: NoiseConfig,
    pub num_presamples: usize,
    pub quantiles: QuantileConfig,
    pub kmeans: KMeansConfig,
    pub master_seed: u64,
}

/// Content hash of the schema and pre-run statistics.
pub fn fingerprint(schema: &RelationalSchema, stats: &PrerunStats) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(schema)?);
    hasher.update(b"\n");
    hasher.update(serde_json::to_vec(stats)?);
    Ok(hex::encode(hasher.finalize()))
}

/// One shared noiseless pre-run over the merged graph, then two main runs:
/// the full merged graph projected to main nodes plus `C`, and the
/// additional prefix (additional nodes plus `C`).
pub fn generate_relational(schema: &RelationalSchema, run: &RelationalRun) -> Result<RelationalDataset> {
    schema.validate()?;
    let mut schema = schema.clone();
    let stats = build_prerun_stats(
        &mut schema.merged,
        run.num_presamples,
        &run.quantiles,
        &run.kmeans,
        run.master_seed,
    )?;
    let c = schema.c_index();
    if stats.codebooks[c].is_none() {
        return Err(Error::DegenerateNode(
            "coupling node C collapsed to a single value in the pre-run".into(),
        ));
    }
    schema.coupling.category_count = schema.merged.nodes[c].category_count.unwrap_or(0);
    let print = fingerprint(&schema, &stats)?;

    let table_for = |nodes: Vec<usize>, limit: usize, rows: usize, tag: &str| -> Result<Table> {
        let roles = subset_roles(&schema.merged, &nodes);
        let columns = nodes
            .iter()
            .zip(roles)
            .map(|(&i, r)| column_info(&schema.merged, i, r))
            .collect();
        let mut t = generate_rows(&RunSpec {
            dag: &schema.merged,
            stats: &stats,
            node_limit: limit,
            columns,
            num_rows: rows,
            noise: run.noise,
            master_seed: run.master_seed,
            run_tag: tag,
        })?;
        t.provenance.schema_fingerprint = print.clone();
        Ok(t)
    };
    let main_table = table_for(schema.main_nodes(), schema.merged.len(), run.rows_main, tags::MAIN_ROWS)?;
    let add_table = table_for(schema.add_nodes(), c + 1, run.rows_add, tags::ADD_ROWS)?;
    Ok(RelationalDataset {
        schema,
        stats,
        main_table,
        add_table,
        fingerprint: print,
    })
}
