//! Numerical core of the structural causal model.
//!
//! A node value is a vector of `n` reals (the hidden dimension). Roots draw
//! their vector from a [`RootDistribution`]; every other node applies a
//! [`PropagationFn`] (one linear layer without bias, then an activation) to
//! the concatenation of its parents and adds noise scaled component-wise by
//! the width of the node's 10%..90% pre-run band.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeVector = Vec<f64>;

/// Offset inside `logabs` that keeps the activation finite at zero.
pub const LOGABS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RootDistribution {
    Normal {
        mean: f64,
        std: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Each component is independently `Normal(0, normal_std)` with
    /// probability `p`, otherwise exponential with the given scale.
    PerComponentMixture {
        p: f64,
        normal_std: f64,
        exp_scale: f64,
    },
}

impl RootDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("{what} in {self:?}")));
        match *self {
            RootDistribution::Normal { mean, std } => {
                if !mean.is_finite() || !std.is_finite() {
                    return bad("non-finite parameter");
                }
                if std <= 0.0 {
                    return bad("std must be > 0");
                }
            }
            RootDistribution::Gamma { shape, scale } => {
                if !shape.is_finite() || !scale.is_finite() {
                    return bad("non-finite parameter");
                }
                if shape <= 0.0 || scale <= 0.0 {
                    return bad("shape and scale must be > 0");
                }
            }
            RootDistribution::PerComponentMixture {
                p,
                normal_std,
                exp_scale,
            } => {
                if !p.is_finite() || !normal_std.is_finite() || !exp_scale.is_finite() {
                    return bad("non-finite parameter");
                }
                if !(0.0..=1.0).contains(&p) {
                    return bad("p must lie in [0, 1]");
                }
                if normal_std <= 0.0 || exp_scale <= 0.0 {
                    return bad("normal_std and exp_scale must be > 0");
                }
            }
        }
        Ok(())
    }

    /// Closed-form mean of one component.
    pub fn mean(&self) -> f64 {
        match *self {
            RootDistribution::Normal { mean, .. } => mean,
            RootDistribution::Gamma { shape, scale } => shape * scale,
            RootDistribution::PerComponentMixture { p, exp_scale, .. } => (1.0 - p) * exp_scale,
        }
    }

    /// Closed-form variance of one component.
    pub fn variance(&self) -> f64 {
        match *self {
            RootDistribution::Normal { std, .. } => std * std,
            RootDistribution::Gamma { shape, scale } => shape * scale * scale,
            RootDistribution::PerComponentMixture {
                p,
                normal_std,
                exp_scale,
            } => {
                // E[X^2] of the mixture minus the squared mean.
                let second = p * normal_std * normal_std + (1.0 - p) * 2.0 * exp_scale * exp_scale;
                let m = self.mean();
                second - m * m
            }
        }
    }
}

/// A validated, ready-to-draw root sampler.
#[derive(Debug, Clone, Copy)]
pub enum RootSampler {
    Normal(Normal<f64>),
    Gamma(Gamma<f64>),
    Mixture {
        pick_normal: Bernoulli,
        normal: Normal<f64>,
        exp: Exp<f64>,
    },
}

impl RootSampler {
    pub fn new(dist: &RootDistribution) -> Result<Self> {
        dist.validate()?;
        let wrap = |e: &dyn std::fmt::Display| Error::InvalidParameter(e.to_string());
        Ok(match *dist {
            RootDistribution::Normal { mean, std } => {
                RootSampler::Normal(Normal::new(mean, std).map_err(|e| wrap(&e))?)
            }
            RootDistribution::Gamma { shape, scale } => {
                RootSampler::Gamma(Gamma::new(shape, scale).map_err(|e| wrap(&e))?)
            }
            RootDistribution::PerComponentMixture {
                p,
                normal_std,
                exp_scale,
            } => RootSampler::Mixture {
                pick_normal: Bernoulli::new(p).map_err(|e| wrap(&e))?,
                normal: Normal::new(0.0, normal_std).map_err(|e| wrap(&e))?,
                exp: Exp::new(1.0 / exp_scale).map_err(|e| wrap(&e))?,
            },
        })
    }

    pub fn fill<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        match self {
            RootSampler::Normal(d) => out.iter_mut().for_each(|x| *x = d.sample(rng)),
            RootSampler::Gamma(d) => out.iter_mut().for_each(|x| *x = d.sample(rng)),
            RootSampler::Mixture {
                pick_normal,
                normal,
                exp,
            } => {
                for x in out.iter_mut() {
                    *x = if pick_normal.sample(rng) {
                        normal.sample(rng)
                    } else {
                        exp.sample(rng)
                    };
                }
            }
        }
    }
}

pub fn sample_root<R: Rng + ?Sized>(
    dist: &RootDistribution,
    n: usize,
    rng: &mut R,
) -> Result<NodeVector> {
    let sampler = RootSampler::new(dist)?;
    let mut out = vec![0.0; n];
    sampler.fill(&mut out, rng);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// `log(|x| + 1e-6)`
    Logabs,
    Sin,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Identity,
        Activation::Relu,
        Activation::Tanh,
        Activation::Logabs,
        Activation::Sin,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Logabs => (x.abs() + LOGABS_EPS).ln(),
            Activation::Sin => x.sin(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Logabs => "logabs",
            Activation::Sin => "sin",
        }
    }
}

/// One fully-connected layer `R^{inputs} -> R^{outputs}` followed by an
/// activation. Weights are stored row-major, one row per output component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationFn {
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub activation: Activation,
}

impl PropagationFn {
    pub fn new(outputs: usize, inputs: usize, weights: Vec<f64>, activation: Activation) -> Result<Self> {
        let f = PropagationFn {
            outputs,
            inputs,
            weights,
            activation,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.outputs * self.inputs {
            return Err(Error::ContractViolation(format!(
                "weight matrix has {} entries, expected {}x{}",
                self.weights.len(),
                self.outputs,
                self.inputs
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::ContractViolation("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn parent_count(&self) -> usize {
        self.inputs.checked_div(self.outputs).unwrap_or(0)
    }

    /// Evaluates the layer on an already concatenated input.
    #[inline]
    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.inputs);
        debug_assert_eq!(out.len(), self.outputs);
        for (row, o) in self.weights.chunks_exact(self.inputs).zip(out.iter_mut()) {
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            *o = self.activation.apply(z);
        }
    }
}

/// Weights i.i.d. `Normal(0, 1 / fan_in)` with `fan_in = parent_count * n`.
pub fn init_propagation_fn<R: Rng + ?Sized>(
    parent_count: usize,
    n: usize,
    activation: Activation,
    rng: &mut R,
) -> Result<PropagationFn> {
    if parent_count == 0 {
        return Err(Error::InvalidParameter("propagation needs at least one parent".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("hidden dimension must be >= 1".into()));
    }
    let fan_in = parent_count * n;
    let std = (1.0 / fan_in as f64).sqrt();
    let weights = (0..n * fan_in)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    PropagationFn::new(n, fan_in, weights, activation)
}

/// `activation(W · concat(parents))`.
pub fn propagate(parents: &[&[f64]], f: &PropagationFn) -> Result<NodeVector> {
    let n = f.outputs;
    if parents.is_empty() || parents.len() * n != f.inputs || parents.iter().any(|p| p.len() != n) {
        return Err(Error::ContractViolation(format!(
            "propagation expects {} parents of dimension {}, got {:?}",
            f.parent_count(),
            n,
            parents.iter().map(|p| p.len()).collect::<Vec<_>>()
        )));
    }
    let input: Vec<f64> = parents.iter().flat_map(|p| p.iter().copied()).collect();
    let mut out = vec![0.0; n];
    f.apply_into(&input, &mut out);
    Ok(out)
}

/// Component-wise `q10` and `q90` of a node's pre-run distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub q10: Vec<f64>,
    pub q90: Vec<f64>,
}

impl QuantilePair {
    pub fn new(q10: Vec<f64>, q90: Vec<f64>) -> Result<Self> {
        if q10.len() != q90.len() {
            return Err(Error::ContractViolation("quantile vectors differ in length".into()));
        }
        if q10.iter().zip(&q90).any(|(lo, hi)| lo.partial_cmp(hi).is_none_or(|o| o.is_gt())) {
            return Err(Error::ContractViolation("q10 must not exceed q90".into()));
        }
        Ok(QuantilePair { q10, q90 })
    }

    /// `q90 - q10`, the per-component noise scale.
    pub fn spread(&self) -> Vec<f64> {
        self.q90.iter().zip(&self.q10).map(|(hi, lo)| hi - lo).collect()
    }
}

/// `g(parents) + (q90 - q10) ⊙ eps`.
///
/// Components with `eps == 0` pass through untouched, so the noiseless case
/// reproduces [`propagate`] bit for bit (signed zeros included).
pub fn structural_assign(
    parents: &[&[f64]],
    f: &PropagationFn,
    q: &QuantilePair,
    eps: &[f64],
) -> Result<NodeVector> {
    let mut out = propagate(parents, f)?;
    if q.q10.len() != out.len() || eps.len() != out.len() {
        return Err(Error::ContractViolation(format!(
            "quantiles/noise of dimension {}/{} for node of dimension {}",
            q.q10.len(),
            eps.len(),
            out.len()
        )));
    }
    for (c, x) in out.iter_mut().enumerate() {
        add_scaled_noise(x, q.q90[c] - q.q10[c], eps[c]);
    }
    Ok(out)
}

#[inline]
pub(crate) fn add_scaled_noise(x: &mut f64, spread: f64, eps: f64) {
    if eps != 0.0 {
        *x += spread * eps;
    }
}

/// Granularity at which the "is this value noisy" decision is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMasking {
    /// One draw per row, shared by all nodes of the row.
    PerSample,
    /// One draw per (row, node).
    #[default]
    PerSampleNode,
    /// One draw per vector component.
    PerComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub affected_fraction: f64,
    pub noise_std: f64,
    pub masking: NoiseMasking,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            affected_fraction: 0.1,
            noise_std: 0.1,
            masking: NoiseMasking::PerSampleNode,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            affected_fraction: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.affected_fraction) {
            return Err(Error::config(
                "noise.affected_fraction",
                format!("{} is not a probability", self.affected_fraction),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::config("noise.noise_std", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Noise drawer for one node. The row-level mask of [`NoiseMasking::PerSample`]
/// is passed in by the caller.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSampler {
    cfg: NoiseConfig,
    gauss: Normal<f64>,
}

impl NoiseSampler {
    pub fn new(cfg: NoiseConfig) -> Result<Self> {
        cfg.validate()?;
        let gauss =
            Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(NoiseSampler { cfg, gauss })
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.cfg
    }

    /// Draws the row-level mask (only consumes randomness for `PerSample`).
    pub fn row_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        match self.cfg.masking {
            NoiseMasking::PerSample => self.hit(rng),
            _ => true,
        }
    }

    #[inline]
    fn hit<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        let p = self.cfg.affected_fraction;
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            rng.random::<f64>() < p
        }
    }

    /// Fills `eps`; returns false if the whole vector is zero.
    pub fn fill<R: Rng + ?Sized>(&self, row_mask: bool, eps: &mut [f64], rng: &mut R) -> bool {
        match self.cfg.masking {
            NoiseMasking::PerSample | NoiseMasking::PerSampleNode => {
                let on = match self.cfg.masking {
                    NoiseMasking::PerSample => row_mask,
                    _ => self.hit(rng),
                };
                if on {
                    eps.iter_mut().for_each(|e| *e = self.gauss.sample(rng));
                } else {
                    eps.iter_mut().for_each(|e| *e = 0.0);
                }
                on
            }
            NoiseMasking::PerComponent => {
                let mut any = false;
                for e in eps.iter_mut() {
                    *e = if self.hit(rng) {
                        any = true;
                        self.gauss.sample(rng)
                    } else {
                        0.0
                    };
                }
                any
            }
        }
    }
}

/// Draws one noise vector for a single (sample, node).
pub fn sample_noise<R: Rng + ?Sized>(cfg: &NoiseConfig, n: usize, rng: &mut R) -> Result<NodeVector> {
    let sampler = NoiseSampler::new(*cfg)?;
    let row_mask = sampler.row_mask(rng);
    let mut eps = vec![0.0; n];
    sampler.fill(row_mask, &mut eps, rng);
    Ok(eps)
}
