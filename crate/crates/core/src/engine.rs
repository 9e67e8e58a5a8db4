//! Row evaluator: a [`DagSpec`] flattened into per-node parent lists,
//! samplers and layers so one row can be propagated without allocation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::DagSpec;
use crate::scm::{add_scaled_noise, NoiseSampler, PropagationFn, QuantilePair, RootSampler};

enum NodeKind<'a> {
    Root(RootSampler),
    Inner {
        parents: Vec<usize>,
        layer: &'a PropagationFn,
    },
}

pub(crate) struct RowEvaluator<'a> {
    dag: &'a DagSpec,
    n: usize,
    nodes: Vec<NodeKind<'a>>,
    max_fan_in: usize,
}

/// Noise inputs for the main run.
pub(crate) struct NoisePlan<'a> {
    pub sampler: NoiseSampler,
    pub quantiles: &'a [QuantilePair],
}

/// Per-worker scratch space.
pub(crate) struct RowScratch {
    pub values: Vec<f64>,
    input: Vec<f64>,
    eps: Vec<f64>,
}

impl<'a> RowEvaluator<'a> {
    pub fn new(dag: &'a DagSpec) -> Result<Self> {
        let n = dag.hidden_dim;
        if n == 0 {
            return Err(Error::ContractViolation("hidden dimension is zero".into()));
        }
        let parents = dag.parent_lists();
        let mut nodes = Vec::with_capacity(dag.len());
        let mut max_fan_in = 0;
        for (spec, parents) in dag.nodes.iter().zip(parents) {
            if parents.is_empty() {
                let dist = spec.root_dist.as_ref().ok_or_else(|| {
                    Error::ContractViolation(format!("root {} has no distribution", spec.name))
                })?;
                nodes.push(NodeKind::Root(RootSampler::new(dist)?));
            } else {
                let layer = spec.propagation.as_ref().ok_or_else(|| {
                    Error::ContractViolation(format!("node {} has no propagation function", spec.name))
                })?;
                if layer.outputs != n || layer.inputs != parents.len() * n {
                    return Err(Error::ContractViolation(format!(
                        "node {}: layer {}x{} does not fit {} parents at n = {n}",
                        spec.name,
                        layer.outputs,
                        layer.inputs,
                        parents.len()
                    )));
                }
                max_fan_in = max_fan_in.max(layer.inputs);
                nodes.push(NodeKind::Inner { parents, layer });
            }
        }
        Ok(RowEvaluator {
            dag,
            n,
            nodes,
            max_fan_in,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.n
    }

    pub fn scratch(&self) -> RowScratch {
        RowScratch {
            values: vec![0.0; self.nodes.len() * self.n],
            input: vec![0.0; self.max_fan_in],
            eps: vec![0.0; self.n],
        }
    }

    /// Propagates one row through nodes `0..limit`. Node `i`'s vector ends up
    /// in `scratch.values[i*n..(i+1)*n]`.
    pub fn eval_row<R: Rng + ?Sized>(
        &self,
        limit: usize,
        noise: Option<&NoisePlan<'_>>,
        scratch: &mut RowScratch,
        rng: &mut R,
    ) -> Result<()> {
        let n = self.n;
        let row_mask = noise.map(|p| p.sampler.row_mask(rng)).unwrap_or(false);
        for (i, kind) in self.nodes[..limit].iter().enumerate() {
            match kind {
                NodeKind::Root(sampler) => {
                    sampler.fill(&mut scratch.values[i * n..(i + 1) * n], rng);
                }
                NodeKind::Inner { parents, layer } => {
                    let input = &mut scratch.input[..layer.inputs];
                    for (slot, &p) in input.chunks_exact_mut(n).zip(parents) {
                        slot.copy_from_slice(&scratch.values[p * n..(p + 1) * n]);
                    }
                    let out = &mut scratch.values[i * n..(i + 1) * n];
                    layer.apply_into(input, out);
                    if let Some(plan) = noise {
                        if plan.sampler.fill(row_mask, &mut scratch.eps, rng) {
                            let q = &plan.quantiles[i];
                            for (c, x) in out.iter_mut().enumerate() {
                                add_scaled_noise(x, q.q90[c] - q.q10[c], scratch.eps[c]);
                            }
                        }
                    }
                }
            }
            let out = &scratch.values[i * n..(i + 1) * n];
            if out.iter().any(|v| !v.is_finite()) {
                let spec = &self.dag.nodes[i];
                return Err(Error::NonFinite {
                    node: spec.name.clone(),
                    detail: match spec.activation() {
                        Some(a) => format!("activation {} produced {out:?}", a.name()),
                        None => format!("root sample {out:?}"),
                    },
                });
            }
        }
        Ok(())
    }
}
