//! The adapter stack: LoRA with frozen projection-down (only the
//! projection-up side trains), a routed soft-merged mixture of expert
//! projection-up matrices, per-step dynamic rank truncation with rank-
//! normalized gradients, gradient accumulation, and an int8-quantized frozen
//! base weight.

pub mod accum;
pub mod ckpt;
pub mod quant;
pub mod router;

pub use accum::GradAccumulator;
pub use quant::QuantizedMatrix;

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use rand::Rng;

pub const NEG_MASK: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DyaMoqpeConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub r_min: usize,
    pub r_max: usize,
    pub num_experts: usize,
    pub top_k: usize,
    pub lora_dropout: f64,
}

impl DyaMoqpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.r_min && self.r_min <= self.r_max) {
            return Err(Error::Config(format!(
                "need 1 <= r_min <= r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.r_max >= self.d_in.min(self.d_out) {
            return Err(Error::Config(format!(
                "r_max = {} must stay below min(d_in, d_out) = {}",
                self.r_max,
                self.d_in.min(self.d_out)
            )));
        }
        if self.num_experts == 0 || !(1 <= self.top_k && self.top_k <= self.num_experts) {
            return Err(Error::Config(format!(
                "need 1 <= top_k <= K, got top_k = {} with K = {}",
                self.top_k, self.num_experts
            )));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return Err(Error::Config(format!(
                "lora_dropout = {} outside [0, 1)",
                self.lora_dropout
            )));
        }
        Ok(())
    }
}

/// Which trainable tensor of an adapted layer a node stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterParam {
    Expert(usize),
    Router,
}

/// Tape nodes recorded by one adapter forward, used to harvest gradients.
pub struct AdapterForward {
    pub y: NodeId,
    pub expert_nodes: Vec<NodeId>,
    pub router_node: NodeId,
    pub rank: usize,
}

/// One adapted linear layer.
///
/// The int8 base and the Gaussian projection-down matrix are frozen; only the
/// expert projection-up matrices (zero-initialized, so the layer starts out
/// exactly equal to the base layer) and the router weights train.
pub struct DyaMoqpeLayer {
    cfg: DyaMoqpeConfig,
    base: QuantizedMatrix,
    base_dense: Tensor,
    pub a: Tensor,
    pub experts: Vec<Tensor>,
    pub router_w: Tensor,
}

impl DyaMoqpeLayer {
    /// Quantizes `base_weights` and attaches fresh adapter parameters.
    pub fn new<R: Rng>(cfg: DyaMoqpeConfig, base_weights: &Tensor, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (d_in, d_out) = base_weights.dims2()?;
        if d_in != cfg.d_in || d_out != cfg.d_out {
            return Err(Error::Shape(format!(
                "base weights are [{d_in}, {d_out}], config wants [{}, {}]",
                cfg.d_in, cfg.d_out
            )));
        }
        let base = QuantizedMatrix::quantize(base_weights)?;
        let a = Tensor::randn(&[d_in, cfg.r_max], 1.0 / (d_in as f64).sqrt(), rng);
        let experts = (0..cfg.num_experts)
            .map(|_| Tensor::zeros(&[cfg.r_max, d_out]).with_grad())
            .collect();
        // Random router init: with zero routing weights all experts would
        // receive identical gradients from their shared zero init and never
        // diverge from one another.
        let router_w = Tensor::randn(&[d_in, cfg.num_experts], 0.02, rng).with_grad();
        let base_dense = base.dequantize();
        Ok(Self { cfg, base, base_dense, a, experts, router_w })
    }

    pub fn from_parts(
        cfg: DyaMoqpeConfig,
        base: QuantizedMatrix,
        a: Tensor,
        experts: Vec<Tensor>,
        router_w: Tensor,
    ) -> Result<Self> {
        cfg.validate()?;
        if base.shape() != (cfg.d_in, cfg.d_out) {
            return Err(Error::Shape("base shape disagrees with config".into()));
        }
        if a.shape() != [cfg.d_in, cfg.r_max] {
            return Err(Error::Shape("projection-down shape disagrees with config".into()));
        }
        if experts.len() != cfg.num_experts {
            return Err(Error::Shape("expert count disagrees with config".into()));
        }
        for e in &experts {
            if e.shape() != [cfg.r_max, cfg.d_out] {
                return Err(Error::Shape("expert shape disagrees with config".into()));
            }
        }
        if router_w.shape() != [cfg.d_in, cfg.num_experts] {
            return Err(Error::Shape("router shape disagrees with config".into()));
        }
        let base_dense = base.dequantize();
        let experts = experts.into_iter().map(|e| e.with_grad()).collect();
        Ok(Self { cfg, base, base_dense, a, experts, router_w: router_w.with_grad() })
    }

    pub fn config(&self) -> &DyaMoqpeConfig {
        &self.cfg
    }

    pub fn base(&self) -> &QuantizedMatrix {
        &self.base
    }

    pub fn base_dense(&self) -> &Tensor {
        &self.base_dense
    }

    /// Scaling rule `alpha = 1/b` with the sampled rank.
    pub fn alpha(rank: usize) -> f64 {
        1.0 / rank as f64
    }

    /// `K * r_max * d_out + d_in * K` trainable entries.
    pub fn trainable_param_count(&self) -> usize {
        self.cfg.num_experts * self.cfg.r_max * self.cfg.d_out
            + self.cfg.d_in * self.cfg.num_experts
    }

    /// Base path only: `x . dequantize(W0)`.
    pub fn forward_base(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w0 = g.constant(&self.base_dense)?;
        g.matmul(x, w0)
    }

    /// Full adapted forward for one example sequence `x: [L x d_in]` at the
    /// given sampled rank. `dropout_mask`, when supplied, multiplies the
    /// adapter-path input (inverted-dropout scaling baked into the mask).
    pub fn forward(
        &self,
        g: &mut Graph,
        x: NodeId,
        rank: usize,
        dropout_mask: Option<&[f64]>,
    ) -> Result<AdapterForward> {
        self.forward_with_override(g, x, rank, dropout_mask, None)
    }

    /// Verification hook: like `forward`, but one trainable tensor may be
    /// substituted by an existing tape node so finite-difference checks can
    /// probe the real forward path.
    pub fn forward_with_override(
        &self,
        g: &mut Graph,
        x: NodeId,
        rank: usize,
        dropout_mask: Option<&[f64]>,
        substitute: Option<(AdapterParam, NodeId)>,
    ) -> Result<AdapterForward> {
        self.forward_impl(g, x, rank, dropout_mask, &mut |g, which, t| match substitute {
            Some((s, node)) if s == which => Ok(node),
            _ => g.param(t),
        })
    }

    /// Forward with trainable tensors bound through a name-memoized
    /// [`Binder`] under `path` (`{path}.expert{k}`, `{path}.router`), so the
    /// model-level training loop can harvest gradients by name.
    pub fn forward_bound(
        &self,
        g: &mut Graph,
        binder: &mut crate::tensor::graph::Binder,
        path: &str,
        x: NodeId,
        rank: usize,
        dropout_mask: Option<&[f64]>,
    ) -> Result<NodeId> {
        let fwd = self.forward_impl(g, x, rank, dropout_mask, &mut |g, which, t| {
            let name = match which {
                AdapterParam::Expert(k) => format!("{path}.expert{k}"),
                AdapterParam::Router => format!("{path}.router"),
            };
            binder.bind(g, &name, t)
        })?;
        Ok(fwd.y)
    }

    fn forward_impl(
        &self,
        g: &mut Graph,
        x: NodeId,
        rank: usize,
        dropout_mask: Option<&[f64]>,
        node_for: &mut dyn FnMut(&mut Graph, AdapterParam, &Tensor) -> Result<NodeId>,
    ) -> Result<AdapterForward> {
        if !(1 <= rank && rank <= self.cfg.r_max) {
            return Err(Error::Contract(format!(
                "rank {rank} outside 1..={}",
                self.cfg.r_max
            )));
        }
        let y0 = self.forward_base(g, x)?;

        // Per-example routing over the sequence mean.
        let pooled = g.mean_rows(x);
        let router_node = node_for(g, AdapterParam::Router, &self.router_w)?;
        let logits = g.matmul(pooled, router_node)?;
        let kept = router::top_k_indices(g.value(logits), self.cfg.top_k);
        let mut mask = vec![NEG_MASK; self.cfg.num_experts];
        for &j in &kept {
            mask[j] = 0.0;
        }
        let masked = g.add_const(logits, &mask)?;
        let probs = g.softmax(masked);

        // Soft merge of expert projection-up matrices.
        let mut expert_nodes = Vec::with_capacity(self.cfg.num_experts);
        let mut merged: Option<NodeId> = None;
        for (k, e) in self.experts.iter().enumerate() {
            let e_node = node_for(g, AdapterParam::Expert(k), e)?;
            expert_nodes.push(e_node);
            let p_k = g.slice_cols(probs, k, 1)?;
            let weighted = g.mul_scalar(e_node, p_k)?;
            merged = Some(match merged {
                None => weighted,
                Some(m) => g.add(m, weighted)?,
            });
        }
        let merged = merged.expect("at least one expert");

        // Dynamic rank truncation: first `rank` columns of A, rows of B.
        let a_node = g.constant(&self.a)?;
        let a_trunc = g.slice_cols(a_node, 0, rank)?;
        let b_trunc = g.slice_rows(merged, 0, rank)?;

        let x_adapter = match dropout_mask {
            Some(mask) => g.mul_const(x, mask.to_vec())?,
            None => x,
        };
        let down = g.matmul(x_adapter, a_trunc)?;
        let up = g.matmul(down, b_trunc)?;
        let scaled = g.scale(up, Self::alpha(rank));
        let y = g.add(y0, scaled)?;
        Ok(AdapterForward { y, expert_nodes, router_node, rank })
    }

    /// Reads tape gradients for this layer's trainable parameters into their
    /// grad slots, applying rank normalization (`r_max / rank`) to the
    /// adapter-path expert gradients. Router gradients are left unscaled.
    pub fn harvest_grads(&mut self, g: &Graph, fwd: &AdapterForward) {
        let factor = self.cfg.r_max as f64 / fwd.rank as f64;
        for (e, &node) in self.experts.iter_mut().zip(&fwd.expert_nodes) {
            if let Some(grad) = g.grad(node) {
                let mut scaled = grad.to_vec();
                rank_normalize(&mut scaled, fwd.rank, self.cfg.r_max);
                debug_assert_eq!(factor, self.cfg.r_max as f64 / fwd.rank as f64);
                e.accumulate_grad(&scaled);
            }
        }
        if let Some(grad) = g.grad(fwd.router_node) {
            self.router_w.accumulate_grad(grad);
        }
    }

    /// Stable-order visitor over the trainable tensors.
    pub fn visit_trainable(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut Tensor)) {
        for (k, e) in self.experts.iter_mut().enumerate() {
            f(format!("{prefix}.expert{k}"), e);
        }
        f(format!("{prefix}.router"), &mut self.router_w);
    }

    /// Dense export `dequantize(W0) + alpha(b) * A_trunc . B_trunc` for a
    /// fixed routing probability vector (merged weights cannot depend on the
    /// input).
    pub fn merge_to_dense(&self, rank: usize, probs: &[f64]) -> Result<Tensor> {
        if probs.len() != self.cfg.num_experts {
            return Err(Error::Contract(format!(
                "{} routing probabilities for {} experts",
                probs.len(),
                self.cfg.num_experts
            )));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract("routing probabilities must sum to 1".into()));
        }
        let probs_t = Tensor::new(vec![1, self.cfg.num_experts], probs.to_vec())?;
        let merged = router::merge_experts(&probs_t, &self.experts)?.remove(0);
        let (a_t, b_t) = router::truncate(&self.a, &merged, rank)?;
        let delta = a_t.matmul(&b_t)?.scale(Self::alpha(rank));
        self.base_dense.add(&delta)
    }
}

/// Plain low-rank adapted forward `x . W0 + alpha * (x . A) . B`, computed
/// down-then-up so only the rank-dim activation is stored for backward.
pub fn lora_forward(
    g: &mut Graph,
    x: NodeId,
    w0: NodeId,
    a: NodeId,
    b: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    if alpha <= 0.0 {
        return Err(Error::Contract(format!("alpha = {alpha} must be positive")));
    }
    let base = g.matmul(x, w0)?;
    let down = g.matmul(x, a)?;
    let up = g.matmul(down, b)?;
    let scaled = g.scale(up, alpha);
    g.add(base, scaled)
}

/// Multiplies adapter-path gradients by `r_max / rank` so low sampled ranks
/// contribute updates of comparable magnitude.
pub fn rank_normalize(grad: &mut [f64], rank: usize, r_max: usize) {
    let factor = r_max as f64 / rank as f64;
    for gv in grad {
        *gv *= factor;
    }
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else
/// `1 / (1 - p)`. One uniform draw per entry, row-major.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}
