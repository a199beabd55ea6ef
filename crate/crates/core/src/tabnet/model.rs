use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TabNetConfig;
use crate::diffgraph::{BatchNormState, Graph, Mode, NodeId, Tensor};
use crate::rng::{rng_for, Stream};
use crate::{Error, Result};

/// A learnable tensor and its stable name (`shared.0.weight`, `step.1.att.bn.gamma`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct BnRef {
    gamma: usize,
    beta: usize,
    state: usize,
}

#[derive(Clone, Copy, Debug)]
struct GluLayer {
    weight: usize,
    bn: BnRef,
}

#[derive(Clone, Debug)]
struct StepLayout {
    att_fc: usize,
    att_bn: BnRef,
    transformer: Vec<GluLayer>,
}

/// Parameter and batch-norm indices; fully determined by the config and feature count.
#[derive(Clone, Debug)]
struct Layout {
    input_bn: BnRef,
    initial: Vec<GluLayer>,
    steps: Vec<StepLayout>,
    final_weight: usize,
    final_bias: usize,
}

/// Per-step quantities exposed by a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    /// Row-stochastic feature mask, `batch × D`.
    pub mask: Tensor,
    pub prior_before: Tensor,
    /// `prior_before ⊙ (gamma − mask)`.
    pub prior_after: Tensor,
    /// `relu` of the decision slice, `batch × n_d`.
    pub decision_contribution: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub traces: Vec<StepTrace>,
    pub sparsity_loss: f64,
    /// Batch-norm statistics after the pass (changed only in train mode).
    pub bn_states: Vec<BatchNormState>,
}

pub(crate) struct GraphNodes {
    pub params: Vec<NodeId>,
    pub logits: NodeId,
    pub sparsity: NodeId,
    masks: Vec<NodeId>,
    priors: Vec<NodeId>,
    decisions: Vec<NodeId>,
}

/// Learned parameters of the attentive classifier together with the config that shaped them.
#[derive(Clone, Debug)]
pub struct TabNetModel {
    config: TabNetConfig,
    n_features: usize,
    params: Vec<NamedTensor>,
    bn: Vec<BatchNormState>,
    layout: Layout,
}

impl PartialEq for TabNetModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.n_features == other.n_features
            && self.params == other.params
            && self.bn == other.bn
    }
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    momentum: f64,
    params: Vec<NamedTensor>,
    bn: Vec<BatchNormState>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(NamedTensor { name, tensor });
        self.params.len() - 1
    }

    /// Glorot-uniform `fan_in × fan_out` weight.
    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-limit..limit))
            .collect();
        self.push(name, Tensor::new(fan_in, fan_out, data).expect("sized"))
    }

    fn batchnorm(&mut self, prefix: &str, width: usize) -> BnRef {
        let gamma = self.push(format!("{prefix}.gamma"), Tensor::filled(1, width, 1.0));
        let beta = self.push(format!("{prefix}.beta"), Tensor::zeros(1, width));
        self.bn.push(BatchNormState::new(width, self.momentum));
        BnRef {
            gamma,
            beta,
            state: self.bn.len() - 1,
        }
    }

    fn transformer(&mut self, prefix: &str, shared: &[usize], n_independent: usize, hidden: usize) -> Vec<GluLayer> {
        let mut layers = Vec::new();
        for (i, &weight) in shared.iter().enumerate() {
            let bn = self.batchnorm(&format!("{prefix}.shared.{i}.bn"), 2 * hidden);
            layers.push(GluLayer { weight, bn });
        }
        for i in 0..n_independent {
            let weight = self.weight(format!("{prefix}.independent.{i}.weight"), hidden, 2 * hidden);
            let bn = self.batchnorm(&format!("{prefix}.independent.{i}.bn"), 2 * hidden);
            layers.push(GluLayer { weight, bn });
        }
        layers
    }
}

impl TabNetModel {
    /// Fresh model with seed-controlled Glorot-uniform weights.
    pub fn new(config: &TabNetConfig, n_features: usize) -> Result<Self> {
        config.validate()?;
        if n_features == 0 {
            return Err(Error::Config("model needs at least one feature".into()));
        }
        let hidden = config.n_d + config.n_a;
        let mut rng = rng_for(config.seed, Stream::Init, 0);
        let mut b = Builder {
            rng: &mut rng,
            momentum: config.bn_momentum,
            params: Vec::new(),
            bn: Vec::new(),
        };
        let input_bn = b.batchnorm("input.bn", n_features);
        let shared: Vec<usize> = (0..config.n_shared)
            .map(|i| {
                let fan_in = if i == 0 { n_features } else { hidden };
                b.weight(format!("shared.{i}.weight"), fan_in, 2 * hidden)
            })
            .collect();
        let initial = b.transformer("initial", &shared, config.n_independent, hidden);
        let mut steps = Vec::with_capacity(config.n_steps);
        for s in 0..config.n_steps {
            let att_fc = b.weight(format!("step.{s}.att.weight"), config.n_a, n_features);
            let att_bn = b.batchnorm(&format!("step.{s}.att.bn"), n_features);
            let transformer = b.transformer(&format!("step.{s}"), &shared, config.n_independent, hidden);
            steps.push(StepLayout {
                att_fc,
                att_bn,
                transformer,
            });
        }
        let final_weight = b.weight("final.weight".into(), config.n_d, config.n_classes);
        let final_bias = b.push("final.bias".into(), Tensor::zeros(1, config.n_classes));
        let (params, bn) = (b.params, b.bn);
        Ok(Self {
            config: config.clone(),
            n_features,
            params,
            bn,
            layout: Layout {
                input_bn,
                initial,
                steps,
                final_weight,
                final_bias,
            },
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes against the config.
    pub fn from_parts(
        config: &TabNetConfig,
        n_features: usize,
        params: Vec<NamedTensor>,
        bn: Vec<BatchNormState>,
    ) -> Result<Self> {
        let mut model = Self::new(config, n_features)?;
        if params.len() != model.params.len() || bn.len() != model.bn.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors and {} batch-norm states, found {} and {}",
                model.params.len(),
                model.bn.len(),
                params.len(),
                bn.len()
            )));
        }
        for (want, got) in model.params.iter().zip(&params) {
            if want.name != got.name || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' {:?} does not match expected '{}' {:?}",
                    got.name,
                    got.tensor.shape(),
                    want.name,
                    want.tensor.shape()
                )));
            }
            got.tensor.ensure_finite(&got.name)?;
        }
        for (want, got) in model.bn.iter().zip(&bn) {
            if want.width() != got.width() || got.running_var.len() != got.width() {
                return Err(Error::Checkpoint("batch-norm state width mismatch".into()));
            }
        }
        model.params = params;
        model.bn = bn;
        Ok(model)
    }

    pub fn config(&self) -> &TabNetConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BatchNormState] {
        &self.bn
    }

    pub(crate) fn set_bn_states(&mut self, bn: Vec<BatchNormState>) {
        self.bn = bn;
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records the forward pass on `g`. Parameters enter as trainable leaves when
    /// `trainable` is set, otherwise as constants.
    pub(crate) fn build(
        &self,
        g: &mut Graph,
        x: &Tensor,
        mode: Mode,
        bn: &mut [BatchNormState],
        trainable: bool,
    ) -> Result<GraphNodes> {
        if x.cols() != self.n_features {
            return Err(Error::Shape(format!(
                "model expects {} features, input has {}",
                self.n_features,
                x.cols()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Shape("forward pass over an empty batch".into()));
        }
        x.ensure_finite("input features")?;
        let cfg = &self.config;
        let p: Vec<NodeId> = self
            .params
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.tensor.clone())
                } else {
                    g.constant(t.tensor.clone())
                }
            })
            .collect();
        let layout = &self.layout;

        let xin = g.constant(x.clone());
        let xbn = apply_bn(g, &p, xin, layout.input_bn, bn, mode)?;
        let first = apply_transformer(g, &p, xbn, &layout.initial, bn, mode)?;
        let mut att = g.slice_cols(first, cfg.n_d, cfg.n_a)?;
        let mut prior = g.constant(Tensor::filled(x.rows(), self.n_features, 1.0));
        let mut decision: Option<NodeId> = None;
        let mut entropy: Option<NodeId> = None;
        let (mut masks, mut priors, mut decisions) = (Vec::new(), vec![prior], Vec::new());
        let projection = cfg.projection();

        for step in &layout.steps {
            let a = g.matmul(att, p[step.att_fc])?;
            let a = apply_bn(g, &p, a, step.att_bn, bn, mode)?;
            let a = g.mul(a, prior)?;
            let mask = g.project_rows(a, projection)?;
            let relax = g.scale_shift(mask, -1.0, cfg.gamma);
            prior = g.mul(prior, relax)?;

            let e = g.mask_entropy(mask);
            entropy = Some(match entropy {
                Some(acc) => g.add(acc, e)?,
                None => e,
            });

            let masked = g.mul(mask, xbn)?;
            let out = apply_transformer(g, &p, masked, &step.transformer, bn, mode)?;
            let d = g.slice_cols(out, 0, cfg.n_d)?;
            let d = g.relu(d);
            decision = Some(match decision {
                Some(acc) => g.add(acc, d)?,
                None => d,
            });
            att = g.slice_cols(out, cfg.n_d, cfg.n_a)?;
            masks.push(mask);
            priors.push(prior);
            decisions.push(d);
        }

        let decision = decision.expect("at least one step");
        let logits = g.matmul(decision, p[layout.final_weight])?;
        let logits = g.add_bias(logits, p[layout.final_bias])?;
        let sparsity = g.scale_shift(
            entropy.expect("at least one step"),
            1.0 / cfg.n_steps as f64,
            0.0,
        );
        Ok(GraphNodes {
            params: p,
            logits,
            sparsity,
            masks,
            priors,
            decisions,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let mut bn = self.bn.clone();
        let nodes = self.build(&mut g, x, mode, &mut bn, false)?;
        let traces = (0..nodes.masks.len())
            .map(|s| StepTrace {
                mask: g.value(nodes.masks[s]).clone(),
                prior_before: g.value(nodes.priors[s]).clone(),
                prior_after: g.value(nodes.priors[s + 1]).clone(),
                decision_contribution: g.value(nodes.decisions[s]).clone(),
            })
            .collect();
        Ok(ForwardOutput {
            logits: g.value(nodes.logits).clone(),
            traces,
            sparsity_loss: g.value(nodes.sparsity).get(0, 0),
            bn_states: bn,
        })
    }

    /// Inference-mode logits.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut bn = self.bn.clone();
        let nodes = self.build(&mut g, x, Mode::Infer, &mut bn, false)?;
        let out = g.value(nodes.logits).clone();
        out.ensure_finite("logits")?;
        Ok(out)
    }

    /// Inference-mode class probabilities, `batch × n_classes`.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.argmax_rows())
    }

    /// Total loss `CE + lambda_sparse · sparsity` and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        x: &Tensor,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<BatchNormState>)> {
        let mut g = Graph::new();
        let mut bn = self.bn.clone();
        let nodes = self.build(&mut g, x, mode, &mut bn, true)?;
        let ce = g.cross_entropy(nodes.logits, labels)?;
        let reg = g.scale_shift(nodes.sparsity, self.config.lambda_sparse, 0.0);
        let loss = g.add(ce, reg)?;
        let value = g.value(loss).get(0, 0);
        if !value.is_finite() {
            return Ok((value, Vec::new(), bn));
        }
        g.backward(loss)?;
        let grads = nodes
            .params
            .iter()
            .zip(&self.params)
            .map(|(id, t)| g.grad(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.tensor.len()]))
            .collect();
        Ok((value, grads, bn))
    }

    /// Mean inference-mode cross-entropy of `labels`.
    pub fn cross_entropy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let mut bn = self.bn.clone();
        let nodes = self.build(&mut g, x, Mode::Infer, &mut bn, false)?;
        let ce = g.cross_entropy(nodes.logits, labels)?;
        Ok(g.value(ce).get(0, 0))
    }

    /// Mask mass per feature, averaged over rows and steps and normalised to sum to 1.
    pub fn global_mask_importance(&self, x: &Tensor) -> Result<Vec<f64>> {
        let out = self.forward(x, Mode::Infer)?;
        let mut acc = vec![0.0; self.n_features];
        for trace in &out.traces {
            for row in trace.mask.iter_rows() {
                for (a, m) in acc.iter_mut().zip(row) {
                    *a += m;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            for a in &mut acc {
                *a /= total;
            }
        }
        Ok(acc)
    }
}

fn apply_bn(g: &mut Graph, p: &[NodeId], x: NodeId, r: BnRef, bn: &mut [BatchNormState], mode: Mode) -> Result<NodeId> {
    g.batchnorm(x, p[r.gamma], p[r.beta], &mut bn[r.state], mode)
}

/// FC → batch norm → GLU per layer; every layer after the first is joined residually
/// and scaled by √0.5.
fn apply_transformer(
    g: &mut Graph,
    p: &[NodeId],
    input: NodeId,
    layers: &[GluLayer],
    bn: &mut [BatchNormState],
    mode: Mode,
) -> Result<NodeId> {
    let mut h = input;
    for (i, layer) in layers.iter().enumerate() {
        let fc = g.matmul(h, p[layer.weight])?;
        let normed = apply_bn(g, p, fc, layer.bn, bn, mode)?;
        let y = g.glu(normed)?;
        h = if i == 0 {
            y
        } else {
            let sum = g.add(h, y)?;
            g.scale_shift(sum, std::f64::consts::FRAC_1_SQRT_2, 0.0)
        };
    }
    Ok(h)
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
