//! The snippet aggregation network: non-local blocks (NLB) couple recent
//! and spanning snippets, coupling blocks (CB) pair a spanning
//! self-attention with a recent-over-spanning cross attention, temporal
//! aggregation blocks (TAB) merge one recent scope across all spanning
//! scales into a classifier head, and the final prediction averages the
//! per-TAB class probabilities.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::sampler::{SampledInputs, SnippetSet};
use crate::tensor::{Element, Graph, Tensor, TensorError, Var};

/// Shape and width settings for one per-modality model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature width of the ingested modality.
    pub input_dim: usize,
    /// Attention width inside the NLBs.
    pub hidden: usize,
    /// Width of the non-classification projections.
    pub repr: usize,
    /// Number of action classes.
    pub classes: usize,
    /// Number of spanning scales (CBs per TAB).
    pub scale_count: usize,
    /// Number of recent scopes (TABs in the ensemble).
    pub recent_scopes: usize,
    /// Dropout probability inside the NLB residual branches.
    pub dropout: f64,
}

impl ModelConfig {
    /// Paper-shaped widths: 512 everywhere, dropout 0.3.
    pub fn preset(input_dim: usize, classes: usize, scale_count: usize, recent_scopes: usize) -> Self {
        Self {
            input_dim,
            hidden: 512,
            repr: 512,
            classes,
            scale_count,
            recent_scopes,
            dropout: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0
            || self.hidden == 0
            || self.repr == 0
            || self.classes < 2
            || self.scale_count == 0
            || self.recent_scopes == 0
        {
            return Err(ModelError::InvalidConfig(format!("{self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Errors raised while building or running the model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Tensor(TensorError),
    InvalidConfig(String),
    ScaleCountMismatch { expected: usize, got: usize },
    TabCountMismatch { expected: usize, got: usize },
    InputWidthMismatch { expected: usize, got: usize },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tensor(e) => write!(f, "tensor error: {e}"),
            ModelError::InvalidConfig(msg) => write!(f, "invalid model config: {msg}"),
            ModelError::ScaleCountMismatch { expected, got } => {
                write!(f, "expected {expected} spanning sets, got {got}")
            }
            ModelError::TabCountMismatch { expected, got } => {
                write!(f, "expected {expected} recent sets for {expected} TABs, got {got}")
            }
            ModelError::InputWidthMismatch { expected, got } => {
                write!(f, "expected input width {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

// ── Parameters ──────────────────────────────────────────────────────

/// Weight matrix (`in×out`) plus bias vector.
#[derive(Debug, Clone)]
pub struct LinearParams<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> LinearParams<E> {
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<E> {
            (0..n)
                .map(|_| E::from_f64(rng.random_range(-bound..bound)))
                .collect()
        };
        LinearParams {
            weight: Tensor::new(vec![input, output], draw(rng, input * output))
                .expect("linear weight shape"),
            bias: Tensor::new(vec![output], draw(rng, output)).expect("linear bias shape"),
        }
    }
}

/// One non-local attention block: query/key/value projections, an output
/// projection, and a residual connection around the attended context.
#[derive(Debug, Clone)]
pub struct NlbParams<E: Element> {
    pub query: LinearParams<E>,
    pub key: LinearParams<E>,
    pub value: LinearParams<E>,
    pub output: LinearParams<E>,
}

impl<E: Element> NlbParams<E> {
    fn init(width: usize, rng: &mut ChaCha8Rng) -> Self {
        NlbParams {
            query: LinearParams::init(width, width, rng),
            key: LinearParams::init(width, width, rng),
            value: LinearParams::init(width, width, rng),
            output: LinearParams::init(width, width, rng),
        }
    }
}

/// Coupling block: spanning self-attention feeding a recent-over-spanning
/// cross attention, each branch max-pooled and projected.
#[derive(Debug, Clone)]
pub struct CbParams<E: Element> {
    pub span_self: NlbParams<E>,
    pub cross: NlbParams<E>,
    pub proj_recent: LinearParams<E>,
    pub proj_span: LinearParams<E>,
}

impl<E: Element> CbParams<E> {
    fn init(hidden: usize, repr: usize, rng: &mut ChaCha8Rng) -> Self {
        CbParams {
            span_self: NlbParams::init(hidden, rng),
            cross: NlbParams::init(hidden, rng),
            proj_recent: LinearParams::init(hidden, repr, rng),
            proj_span: LinearParams::init(hidden, repr, rng),
        }
    }
}

/// Temporal aggregation block: one CB per spanning scale, a fusion layer
/// over the concatenated recent/spanning aggregates, and a classifier
/// head.
#[derive(Debug, Clone)]
pub struct TabParams<E: Element> {
    pub couplers: Vec<CbParams<E>>,
    pub fuse: LinearParams<E>,
    pub head: LinearParams<E>,
}

/// All learnable state of one per-modality model.
#[derive(Debug, Clone)]
pub struct ModelParams<E: Element> {
    pub config: ModelConfig,
    pub input_proj: LinearParams<E>,
    pub tabs: Vec<TabParams<E>>,
}

impl<E: Element> ModelParams<E> {
    /// Seeded uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_proj = LinearParams::init(config.input_dim, config.hidden, &mut rng);
        let tabs = (0..config.recent_scopes)
            .map(|_| TabParams {
                couplers: (0..config.scale_count)
                    .map(|_| CbParams::init(config.hidden, config.repr, &mut rng))
                    .collect(),
                fuse: LinearParams::init(2 * config.repr, config.repr, &mut rng),
                head: LinearParams::init(config.repr, config.classes, &mut rng),
            })
            .collect();
        Ok(ModelParams {
            config,
            input_proj,
            tabs,
        })
    }

    /// Parameter tensors with stable names, in binding order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = Vec::new();
        push_linear(&mut out, "input_proj", &self.input_proj);
        for (t, tab) in self.tabs.iter().enumerate() {
            for (c, cb) in tab.couplers.iter().enumerate() {
                push_nlb(&mut out, &format!("tab{t}.cb{c}.span_self"), &cb.span_self);
                push_nlb(&mut out, &format!("tab{t}.cb{c}.cross"), &cb.cross);
                push_linear(&mut out, &format!("tab{t}.cb{c}.proj_recent"), &cb.proj_recent);
                push_linear(&mut out, &format!("tab{t}.cb{c}.proj_span"), &cb.proj_span);
            }
            push_linear(&mut out, &format!("tab{t}.fuse"), &tab.fuse);
            push_linear(&mut out, &format!("tab{t}.head"), &tab.head);
        }
        out
    }

    /// Mutable parameter tensors in the same order as
    /// [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<E>> {
        let mut out: Vec<&mut Tensor<E>> = Vec::new();
        out.push(&mut self.input_proj.weight);
        out.push(&mut self.input_proj.bias);
        for tab in &mut self.tabs {
            for cb in &mut tab.couplers {
                for nlb in [&mut cb.span_self, &mut cb.cross] {
                    for l in [&mut nlb.query, &mut nlb.key, &mut nlb.value, &mut nlb.output] {
                        out.push(&mut l.weight);
                        out.push(&mut l.bias);
                    }
                }
                out.push(&mut cb.proj_recent.weight);
                out.push(&mut cb.proj_recent.bias);
                out.push(&mut cb.proj_span.weight);
                out.push(&mut cb.proj_span.bias);
            }
            out.push(&mut tab.fuse.weight);
            out.push(&mut tab.fuse.bias);
            out.push(&mut tab.head.weight);
            out.push(&mut tab.head.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Converts every parameter to another element type.
    pub fn cast<T: Element>(&self) -> ModelParams<T> {
        let cast_lin = |l: &LinearParams<E>| LinearParams {
            weight: l.weight.cast::<T>(),
            bias: l.bias.cast::<T>(),
        };
        let cast_nlb = |n: &NlbParams<E>| NlbParams {
            query: cast_lin(&n.query),
            key: cast_lin(&n.key),
            value: cast_lin(&n.value),
            output: cast_lin(&n.output),
        };
        ModelParams {
            config: self.config.clone(),
            input_proj: cast_lin(&self.input_proj),
            tabs: self
                .tabs
                .iter()
                .map(|tab| TabParams {
                    couplers: tab
                        .couplers
                        .iter()
                        .map(|cb| CbParams {
                            span_self: cast_nlb(&cb.span_self),
                            cross: cast_nlb(&cb.cross),
                            proj_recent: cast_lin(&cb.proj_recent),
                            proj_span: cast_lin(&cb.proj_span),
                        })
                        .collect(),
                    fuse: cast_lin(&tab.fuse),
                    head: cast_lin(&tab.head),
                })
                .collect(),
        }
    }

    /// Binds every parameter into `g` as leaves, in
    /// [`ModelParams::named_tensors`] order.
    pub fn bind(&self, g: &mut Graph<E>, trainable: bool) -> BoundModel {
        let mut flat = Vec::new();
        fn bind_lin<E: Element>(
            g: &mut Graph<E>,
            flat: &mut Vec<Var>,
            l: &LinearParams<E>,
            trainable: bool,
        ) -> BoundLinear {
            let weight = g.leaf(&l.weight, trainable);
            let bias = g.leaf(&l.bias, trainable);
            flat.push(weight);
            flat.push(bias);
            BoundLinear { weight, bias }
        }
        fn bind_nlb<E: Element>(
            g: &mut Graph<E>,
            flat: &mut Vec<Var>,
            n: &NlbParams<E>,
            trainable: bool,
        ) -> BoundNlb {
            BoundNlb {
                query: bind_lin(g, flat, &n.query, trainable),
                key: bind_lin(g, flat, &n.key, trainable),
                value: bind_lin(g, flat, &n.value, trainable),
                output: bind_lin(g, flat, &n.output, trainable),
            }
        }
        let input_proj = bind_lin(g, &mut flat, &self.input_proj, trainable);
        let tabs = self
            .tabs
            .iter()
            .map(|tab| BoundTab {
                couplers: tab
                    .couplers
                    .iter()
                    .map(|cb| BoundCb {
                        span_self: bind_nlb(g, &mut flat, &cb.span_self, trainable),
                        cross: bind_nlb(g, &mut flat, &cb.cross, trainable),
                        proj_recent: bind_lin(g, &mut flat, &cb.proj_recent, trainable),
                        proj_span: bind_lin(g, &mut flat, &cb.proj_span, trainable),
                    })
                    .collect(),
                fuse: bind_lin(g, &mut flat, &tab.fuse, trainable),
                head: bind_lin(g, &mut flat, &tab.head, trainable),
            })
            .collect();
        BoundModel {
            config: self.config.clone(),
            input_proj,
            tabs,
            params: flat,
        }
    }
}

fn push_linear<'a, E: Element>(
    out: &mut Vec<(String, &'a Tensor<E>)>,
    name: &str,
    l: &'a LinearParams<E>,
) {
    out.push((format!("{name}.weight"), &l.weight));
    out.push((format!("{name}.bias"), &l.bias));
}

fn push_nlb<'a, E: Element>(out: &mut Vec<(String, &'a Tensor<E>)>, name: &str, n: &'a NlbParams<E>) {
    push_linear(out, &format!("{name}.query"), &n.query);
    push_linear(out, &format!("{name}.key"), &n.key);
    push_linear(out, &format!("{name}.value"), &n.value);
    push_linear(out, &format!("{name}.output"), &n.output);
}

// ── Graph-bound handles ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundNlb {
    pub query: BoundLinear,
    pub key: BoundLinear,
    pub value: BoundLinear,
    pub output: BoundLinear,
}

#[derive(Debug, Clone)]
pub struct BoundCb {
    pub span_self: BoundNlb,
    pub cross: BoundNlb,
    pub proj_recent: BoundLinear,
    pub proj_span: BoundLinear,
}

#[derive(Debug, Clone)]
pub struct BoundTab {
    pub couplers: Vec<BoundCb>,
    pub fuse: BoundLinear,
    pub head: BoundLinear,
}

/// All parameter vars of one bound model; `params` mirrors
/// [`ModelParams::named_tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub config: ModelConfig,
    pub input_proj: BoundLinear,
    pub tabs: Vec<BoundTab>,
    pub params: Vec<Var>,
}

// ── Forward passes ──────────────────────────────────────────────────

pub fn linear<E: Element>(g: &mut Graph<E>, l: &BoundLinear, x: Var) -> Result<Var, TensorError> {
    let xw = g.matmul(x, l.weight)?;
    g.add_bias(xw, l.bias)
}

/// Attention output plus the normalized attention matrix for auditing.
#[derive(Debug)]
pub struct NlbOutput {
    pub out: Var,
    pub attention: Var,
}

/// Scaled dot-product attention of `query` rows over `context` rows with
/// a residual connection: `q + dropout(softmax(qWq (cWk)^T / sqrt(d)) cWv Wo)`.
pub fn nlb_forward<E: Element, R: Rng>(
    g: &mut Graph<E>,
    nlb: &BoundNlb,
    query: Var,
    context: Var,
    dropout_p: f64,
    train: bool,
    rng: &mut R,
) -> Result<NlbOutput, ModelError> {
    let d_q = g.value(query).cols();
    let d_c = g.value(context).cols();
    if d_q != d_c {
        return Err(ModelError::InputWidthMismatch {
            expected: d_q,
            got: d_c,
        });
    }
    let q = linear(g, &nlb.query, query)?;
    let k = linear(g, &nlb.key, context)?;
    let v = linear(g, &nlb.value, context)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, E::from_f64(1.0 / (d_q as f64).sqrt()));
    let attention = g.softmax_rows(scaled)?;
    let attended = g.matmul(attention, v)?;
    let projected = linear(g, &nlb.output, attended)?;
    let dropped = g.dropout(projected, dropout_p, train, rng)?;
    let out = g.add(query, dropped)?;
    Ok(NlbOutput { out, attention })
}

/// Coupled recent/spanning representations from one CB.
#[derive(Debug)]
pub struct CbOutput {
    pub recent_repr: Var,
    pub span_repr: Var,
    pub attentions: Vec<Var>,
}

/// Self-attention over the spanning snippets, cross-attention of the
/// recent snippets over them, then per-branch max-pool and projection.
pub fn cb_forward<E: Element, R: Rng>(
    g: &mut Graph<E>,
    cb: &BoundCb,
    recent: Var,
    spanning: Var,
    dropout_p: f64,
    train: bool,
    rng: &mut R,
) -> Result<CbOutput, ModelError> {
    let span = nlb_forward(g, &cb.span_self, spanning, spanning, dropout_p, train, rng)?;
    let cross = nlb_forward(g, &cb.cross, recent, span.out, dropout_p, train, rng)?;

    let hidden = g.value(recent).cols();
    let r_max = g.max_over_axis(cross.out, 0)?;
    let r_row = g.reshape(r_max, vec![1, hidden])?;
    let r_proj = linear(g, &cb.proj_recent, r_row)?;
    let recent_repr = g.relu(r_proj);

    let s_max = g.max_over_axis(span.out, 0)?;
    let s_row = g.reshape(s_max, vec![1, hidden])?;
    let s_proj = linear(g, &cb.proj_span, s_row)?;
    let span_repr = g.relu(s_proj);

    Ok(CbOutput {
        recent_repr,
        span_repr,
        attentions: vec![span.attention, cross.attention],
    })
}

/// Fused representation and class logits from one TAB.
#[derive(Debug)]
pub struct TabOutput {
    pub fused: Var,
    pub logits: Var,
    pub attentions: Vec<Var>,
}

/// Couples one recent scope with every spanning scale, aggregates each
/// branch across scales by max, and classifies the fused result.
pub fn tab_forward<E: Element, R: Rng>(
    g: &mut Graph<E>,
    tab: &BoundTab,
    recent: Var,
    spannings: &[Var],
    dropout_p: f64,
    train: bool,
    rng: &mut R,
) -> Result<TabOutput, ModelError> {
    if spannings.len() != tab.couplers.len() {
        return Err(ModelError::ScaleCountMismatch {
            expected: tab.couplers.len(),
            got: spannings.len(),
        });
    }
    let mut recent_reprs = Vec::with_capacity(spannings.len());
    let mut span_reprs = Vec::with_capacity(spannings.len());
    let mut attentions = Vec::new();
    for (cb, &spanning) in tab.couplers.iter().zip(spannings) {
        let out = cb_forward(g, cb, recent, spanning, dropout_p, train, rng)?;
        recent_reprs.push(out.recent_repr);
        span_reprs.push(out.span_repr);
        attentions.extend(out.attentions);
    }
    let repr = g.value(recent_reprs[0]).cols();
    let agg = |g: &mut Graph<E>, reprs: &[Var]| -> Result<Var, TensorError> {
        let stacked = g.concat(reprs, 0)?;
        let maxed = g.max_over_axis(stacked, 0)?;
        g.reshape(maxed, vec![1, repr])
    };
    let recent_agg = agg(g, &recent_reprs)?;
    let span_agg = agg(g, &span_reprs)?;
    let both = g.concat(&[recent_agg, span_agg], 1)?;
    let fused_lin = linear(g, &tab.fuse, both)?;
    let fused = g.relu(fused_lin);
    let logits = linear(g, &tab.head, fused)?;
    Ok(TabOutput {
        fused,
        logits,
        attentions,
    })
}

/// Per-TAB logits plus the ensemble average of their softmaxes.
#[derive(Debug)]
pub struct ModelOutput {
    pub per_tab_logits: Vec<Var>,
    pub ensemble_probs: Var,
    pub attentions: Vec<Var>,
}

/// Converts a snippet set into a leaf tensor.
pub fn snippet_tensor<E: Element>(set: &SnippetSet) -> Tensor<E> {
    let data: Vec<E> = set.vectors().iter().map(|&v| E::from_f32(v)).collect();
    Tensor::new(vec![set.scale(), set.dim()], data).expect("snippet tensor shape")
}

/// Runs the full ensemble on one sampled segment.
pub fn model_forward<E: Element, R: Rng>(
    g: &mut Graph<E>,
    model: &BoundModel,
    inputs: &SampledInputs,
    train: bool,
    rng: &mut R,
) -> Result<ModelOutput, ModelError> {
    if inputs.recents.len() != model.tabs.len() {
        return Err(ModelError::TabCountMismatch {
            expected: model.tabs.len(),
            got: inputs.recents.len(),
        });
    }
    if inputs.spannings.len() != model.config.scale_count {
        return Err(ModelError::ScaleCountMismatch {
            expected: model.config.scale_count,
            got: inputs.spannings.len(),
        });
    }
    for set in inputs.recents.iter().chain(&inputs.spannings) {
        if set.dim() != model.config.input_dim {
            return Err(ModelError::InputWidthMismatch {
                expected: model.config.input_dim,
                got: set.dim(),
            });
        }
    }
    let project = |g: &mut Graph<E>, set: &SnippetSet| -> Result<Var, TensorError> {
        let leaf = g.leaf(&snippet_tensor::<E>(set), false);
        linear(g, &model.input_proj, leaf)
    };
    let mut spanning_vars = Vec::with_capacity(inputs.spannings.len());
    for s in &inputs.spannings {
        spanning_vars.push(project(g, s)?);
    }
    let mut recent_vars = Vec::with_capacity(inputs.recents.len());
    for r in &inputs.recents {
        recent_vars.push(project(g, r)?);
    }

    let mut per_tab_logits = Vec::with_capacity(model.tabs.len());
    let mut attentions = Vec::new();
    let mut prob_vars = Vec::with_capacity(model.tabs.len());
    for (tab, &recent) in model.tabs.iter().zip(&recent_vars) {
        let out = tab_forward(g, tab, recent, &spanning_vars, model.config.dropout, train, rng)?;
        prob_vars.push(g.softmax_rows(out.logits)?);
        per_tab_logits.push(out.logits);
        attentions.extend(out.attentions);
    }
    let mut acc = prob_vars[0];
    for &p in &prob_vars[1..] {
        acc = g.add(acc, p)?;
    }
    let ensemble_probs = g.scale(acc, E::from_f64(1.0 / prob_vars.len() as f64));
    Ok(ModelOutput {
        per_tab_logits,
        ensemble_probs,
        attentions,
    })
}

// ── Gradient fidelity ───────────────────────────────────────────────

/// Tiny shape used by the finite-difference suite: 8-wide attention,
/// two recent scopes of 2 snippets, spanning scales {2, 3}, 5 classes.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden: 8,
        repr: 16,
        classes: 5,
        scale_count: 2,
        recent_scopes: 2,
        dropout: 0.3,
    }
}

/// Objective used for the fidelity check: cross-entropy summed over the
/// TAB heads plus a fixed random weighting of the ensemble
/// probabilities, so every path through the model carries gradient.
/// Dropout masks are frozen by reseeding `mask_seed` on every call.
fn fidelity_loss(
    model: &ModelParams<f64>,
    inputs: &SampledInputs,
    labels: &[usize],
    ensemble_weights: &Tensor<f64>,
    mask_seed: u64,
) -> Result<(Graph<f64>, Var, Vec<Var>), ModelError> {
    use rand::SeedableRng;
    let mut g: Graph<f64> = Graph::new();
    let bound = model.bind(&mut g, true);
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let out = model_forward(&mut g, &bound, inputs, true, &mut rng)?;
    let mut loss: Option<Var> = None;
    for &lv in &out.per_tab_logits {
        let ce = g.cross_entropy(lv, labels)?;
        loss = Some(match loss {
            None => ce,
            Some(acc) => g.add(acc, ce)?,
        });
    }
    let w = g.leaf(ensemble_weights, false);
    let dot = g.matmul(out.ensemble_probs, w)?;
    let dot = g.sum(dot);
    let loss = g.add(loss.expect("at least one head"), dot)?;
    Ok((g, loss, bound.params))
}

/// Central finite-difference check of every parameter gradient through
/// the full NLB/CB/TAB/ensemble graph on [`gradcheck_config`].
///
/// `samples_per_tensor` limits the coordinates perturbed per parameter
/// tensor (0 checks all of them).
pub fn gradcheck_model(
    seed: u64,
    samples_per_tensor: usize,
) -> Result<crate::tensor::gradcheck::GradCheckReport, ModelError> {
    use crate::tensor::gradcheck::{check_gradients, random_tensor};
    use rand::SeedableRng;

    let config = gradcheck_config();
    let params = ModelParams::<f64>::init(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));

    let snippet = |rows: usize, rng: &mut ChaCha8Rng| {
        let t = random_tensor(vec![rows, config.input_dim], 1.0, rng);
        let vectors: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
        let extents = (0..rows).map(|k| (k as f64, k as f64 + 1.0)).collect();
        SnippetSet::new(vectors, config.input_dim, extents, crate::sampler::SnippetKind::Recent)
            .expect("synthetic snippet set")
    };
    let inputs = SampledInputs {
        recents: vec![snippet(2, &mut rng), snippet(2, &mut rng)],
        spannings: vec![snippet(2, &mut rng), snippet(3, &mut rng)],
        clips: Vec::new(),
    };
    let labels = vec![(seed as usize) % config.classes];
    let ensemble_weights = random_tensor(vec![config.classes, 1], 1.0, &mut rng);
    let mask_seed = seed ^ 0x9e3779b97f4a7c15;

    // Analytic gradients from one backward pass; param vars come back in
    // `named_tensors` order.
    let (mut g, loss, param_vars) =
        fidelity_loss(&params, &inputs, &labels, &ensemble_weights, mask_seed)?;
    g.backward(loss)?;
    let named = params.named_tensors();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let analytic: Vec<Vec<f64>> = param_vars
        .iter()
        .map(|&v| {
            g.take_grad(v)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();
    drop(g);

    let mut tensors: Vec<Tensor<f64>> = named.iter().map(|(_, t)| (*t).clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let template = params.clone();
    let loss_fn = |current: &[Tensor<f64>]| -> Result<f64, ModelError> {
        let mut model = template.clone();
        for (slot, t) in model.tensors_mut().into_iter().zip(current) {
            *slot = t.clone();
        }
        let (g, loss, _) = fidelity_loss(&model, &inputs, &labels, &ensemble_weights, mask_seed)?;
        Ok(g.value(loss).data()[0])
    };
    let mut check_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    check_gradients(
        &name_refs,
        &mut tensors,
        &analytic,
        loss_fn,
        samples_per_tensor,
        &mut check_rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SnippetKind;
    use rand::SeedableRng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            hidden: 8,
            repr: 16,
            classes: 4,
            scale_count: 2,
            recent_scopes: 2,
            dropout: 0.3,
        }
    }

    fn snippet_set(rows: usize, dim: usize, fill: impl Fn(usize, usize) -> f32) -> SnippetSet {
        let vectors: Vec<f32> = (0..rows * dim).map(|i| fill(i / dim, i % dim)).collect();
        let extents = (0..rows).map(|k| (k as f64, k as f64 + 1.0)).collect();
        SnippetSet::new(vectors, dim, extents, SnippetKind::Spanning).unwrap()
    }

    fn rng0() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn single_context_snippet_attention_is_one() {
        let params = ModelParams::<f64>::init(tiny_config(), 3).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let q = g.leaf(&Tensor::zeros(vec![3, 8]), false);
        let ctx = g.leaf(
            &Tensor::new(vec![1, 8], (0..8).map(|i| i as f64 * 0.1).collect()).unwrap(),
            false,
        );
        let nlb = &bound.tabs[0].couplers[0].span_self;
        let out = nlb_forward(&mut g, nlb, q, ctx, 0.0, false, &mut rng0()).unwrap();
        assert_eq!(g.value(out.attention).shape(), &[3, 1]);
        for &a in g.value(out.attention).data() {
            assert_eq!(a, 1.0);
        }
    }

    #[test]
    fn zero_output_projection_gives_residual_identity() {
        let mut params = ModelParams::<f64>::init(tiny_config(), 5).unwrap();
        {
            let nlb = &mut params.tabs[0].couplers[0].span_self;
            for v in nlb.output.weight.data_mut() {
                *v = 0.0;
            }
            for v in nlb.output.bias.data_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let q_t = Tensor::new(vec![2, 8], (0..16).map(|i| (i as f64) * 0.3 - 2.0).collect()).unwrap();
        let q = g.leaf(&q_t, false);
        let ctx = g.leaf(
            &Tensor::new(vec![4, 8], (0..32).map(|i| (i as f64) * 0.05).collect()).unwrap(),
            false,
        );
        let nlb = &bound.tabs[0].couplers[0].span_self;
        let out = nlb_forward(&mut g, nlb, q, ctx, 0.0, false, &mut rng0()).unwrap();
        assert_eq!(g.value(out.out).data(), q_t.data());
    }

    #[test]
    fn nlb_output_shape_matches_query() {
        let params = ModelParams::<f64>::init(tiny_config(), 7).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let mut rng = rng0();
        let q = g.leaf(
            &crate::tensor::gradcheck::random_tensor(vec![2, 8], 1.0, &mut rng),
            false,
        );
        let ctx = g.leaf(
            &crate::tensor::gradcheck::random_tensor(vec![5, 8], 1.0, &mut rng),
            false,
        );
        let nlb = &bound.tabs[0].couplers[0].cross;
        let out = nlb_forward(&mut g, nlb, q, ctx, 0.0, false, &mut rng0()).unwrap();
        assert_eq!(g.value(out.out).shape(), &[2, 8]);
        assert_eq!(g.value(out.attention).shape(), &[2, 5]);
    }

    #[test]
    fn cb_outputs_have_repr_width() {
        let params = ModelParams::<f64>::init(tiny_config(), 11).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        for (k_r, k) in [(1usize, 3usize), (2, 5), (4, 2)] {
            let r = g.leaf(&Tensor::zeros(vec![k_r, 8]), false);
            let s = g.leaf(&Tensor::zeros(vec![k, 8]), false);
            let out = cb_forward(
                &mut g,
                &bound.tabs[0].couplers[0],
                r,
                s,
                0.0,
                false,
                &mut rng0(),
            )
            .unwrap();
            assert_eq!(g.value(out.recent_repr).shape(), &[1, 16]);
            assert_eq!(g.value(out.span_repr).shape(), &[1, 16]);
        }
    }

    #[test]
    fn duplicated_spanning_snippets_leave_cb_unchanged() {
        let params = ModelParams::<f64>::init(tiny_config(), 13).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let mut rng = rng0();
        let s_t = crate::tensor::gradcheck::random_tensor(vec![3, 8], 1.0, &mut rng);
        let doubled: Vec<f64> = s_t.data().iter().chain(s_t.data()).copied().collect();
        let s2_t = Tensor::new(vec![6, 8], doubled).unwrap();
        let r_t = crate::tensor::gradcheck::random_tensor(vec![2, 8], 1.0, &mut rng);

        let cb = &bound.tabs[0].couplers[0];
        let r = g.leaf(&r_t, false);
        let s = g.leaf(&s_t, false);
        let out1 = cb_forward(&mut g, cb, r, s, 0.0, false, &mut rng0()).unwrap();
        let s2 = g.leaf(&s2_t, false);
        let out2 = cb_forward(&mut g, cb, r, s2, 0.0, false, &mut rng0()).unwrap();
        let a = g.value(out1.recent_repr).data().to_vec();
        let b = g.value(out2.recent_repr).data().to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
        let a = g.value(out1.span_repr).data().to_vec();
        let b = g.value(out2.span_repr).data().to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn tab_rejects_wrong_scale_count() {
        let params = ModelParams::<f64>::init(tiny_config(), 17).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let r = g.leaf(&Tensor::zeros(vec![2, 8]), false);
        let s = g.leaf(&Tensor::zeros(vec![3, 8]), false);
        let err = tab_forward(&mut g, &bound.tabs[0], r, &[s], 0.0, false, &mut rng0())
            .unwrap_err();
        assert!(matches!(err, ModelError::ScaleCountMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn tab_logits_have_class_width() {
        let params = ModelParams::<f64>::init(tiny_config(), 19).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let mut rng = rng0();
        let r_t = crate::tensor::gradcheck::random_tensor(vec![2, 8], 1.0, &mut rng);
        let s1_t = crate::tensor::gradcheck::random_tensor(vec![2, 8], 1.0, &mut rng);
        let s2_t = crate::tensor::gradcheck::random_tensor(vec![3, 8], 1.0, &mut rng);
        let r = g.leaf(&r_t, false);
        let s1 = g.leaf(&s1_t, false);
        let s2 = g.leaf(&s2_t, false);
        let out = tab_forward(&mut g, &bound.tabs[0], r, &[s1, s2], 0.0, false, &mut rng0())
            .unwrap();
        assert_eq!(g.value(out.logits).shape(), &[1, 4]);
        assert_eq!(g.value(out.fused).shape(), &[1, 16]);
    }

    #[test]
    fn ensemble_matches_out_of_graph_mean_of_softmaxes() {
        let cfg = ModelConfig {
            recent_scopes: 4,
            ..tiny_config()
        };
        let params = ModelParams::<f64>::init(cfg, 23).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let inputs = SampledInputs {
            recents: (0..4)
                .map(|r| snippet_set(2, 6, move |i, j| ((r + i * j) as f32 * 0.37).sin()))
                .collect(),
            spannings: vec![
                snippet_set(2, 6, |i, j| (i + j) as f32 * 0.25),
                snippet_set(3, 6, |i, j| (i * 2 + j) as f32 * -0.11),
            ],
            clips: Vec::new(),
        };
        let out = model_forward(&mut g, &bound, &inputs, false, &mut rng0()).unwrap();
        assert_eq!(out.per_tab_logits.len(), 4);

        // Recompute the ensemble outside the graph.
        let mut expect = vec![0.0f64; 4];
        for &lv in &out.per_tab_logits {
            let logits = g.value(lv).data();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for (e, &x) in expect.iter_mut().zip(&exps) {
                *e += x / denom / 4.0;
            }
        }
        let got = g.value(out.ensemble_probs).data();
        let total: f64 = got.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_tab_ensemble_is_its_softmax() {
        let cfg = ModelConfig {
            recent_scopes: 1,
            ..tiny_config()
        };
        let params = ModelParams::<f64>::init(cfg, 29).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let inputs = SampledInputs {
            recents: vec![snippet_set(2, 6, |i, j| (i * 3 + j) as f32 * 0.2)],
            spannings: vec![
                snippet_set(2, 6, |i, j| (i + j) as f32 * 0.4),
                snippet_set(3, 6, |i, j| i as f32 - j as f32 * 0.3),
            ],
            clips: Vec::new(),
        };
        let out = model_forward(&mut g, &bound, &inputs, false, &mut rng0()).unwrap();
        let probs = g.value(out.ensemble_probs).data().to_vec();
        let logits = out.per_tab_logits[0];
        let sm = g.softmax_rows(logits).unwrap();
        assert_eq!(g.value(sm).data(), probs.as_slice());
    }

    #[test]
    fn shared_weights_and_inputs_collapse_ensemble_to_single_softmax() {
        let mut params = ModelParams::<f64>::init(tiny_config(), 43).unwrap();
        params.tabs[1] = params.tabs[0].clone();
        let shared = snippet_set(2, 6, |i, j| ((i * 5 + j) as f32 * 0.21).sin());
        let inputs = SampledInputs {
            recents: vec![shared.clone(), shared],
            spannings: vec![
                snippet_set(2, 6, |i, j| (i + j) as f32 * 0.3),
                snippet_set(3, 6, |i, j| (i * 2 + j) as f32 * -0.2),
            ],
            clips: Vec::new(),
        };
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let out = model_forward(&mut g, &bound, &inputs, false, &mut rng0()).unwrap();
        let ensemble = g.value(out.ensemble_probs).data().to_vec();
        let single = g.softmax_rows(out.per_tab_logits[0]).unwrap();
        for (a, b) in ensemble.iter().zip(g.value(single).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_recent_count_mismatch() {
        let params = ModelParams::<f64>::init(tiny_config(), 31).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let inputs = SampledInputs {
            recents: vec![snippet_set(2, 6, |_, _| 0.0)],
            spannings: vec![snippet_set(2, 6, |_, _| 0.0), snippet_set(3, 6, |_, _| 0.0)],
            clips: Vec::new(),
        };
        let err = model_forward(&mut g, &bound, &inputs, false, &mut rng0()).unwrap_err();
        assert!(matches!(err, ModelError::TabCountMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn forward_is_deterministic_under_fixed_seed() {
        let params = ModelParams::<f32>::init(tiny_config(), 37).unwrap();
        let inputs = SampledInputs {
            recents: (0..2)
                .map(|r| snippet_set(2, 6, move |i, j| (r + i + j) as f32))
                .collect(),
            spannings: vec![
                snippet_set(2, 6, |i, j| (i * j) as f32 * 0.5),
                snippet_set(3, 6, |i, j| (i + 2 * j) as f32 * 0.1),
            ],
            clips: Vec::new(),
        };
        let run = || {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let out = model_forward(&mut g, &bound, &inputs, true, &mut rng).unwrap();
            g.value(out.ensemble_probs).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shift_invariance_of_ensemble_argmax() {
        // Adding a constant to every logit of every TAB must not change
        // the predicted class.
        let params = ModelParams::<f64>::init(tiny_config(), 41).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let inputs = SampledInputs {
            recents: (0..2)
                .map(|r| snippet_set(2, 6, move |i, j| ((r * 7 + i + j) as f32).cos()))
                .collect(),
            spannings: vec![
                snippet_set(2, 6, |i, j| ((i * 3 + j) as f32).sin()),
                snippet_set(3, 6, |i, j| ((i + j * 2) as f32).cos() * 0.7),
            ],
            clips: Vec::new(),
        };
        let out = model_forward(&mut g, &bound, &inputs, false, &mut rng0()).unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let base = argmax(g.value(out.ensemble_probs).data());

        let mut shifted = vec![0.0f64; 4];
        for &lv in &out.per_tab_logits {
            let logits: Vec<f64> = g.value(lv).data().iter().map(|&v| v + 123.45).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for (e, &x) in shifted.iter_mut().zip(&exps) {
                *e += x / denom;
            }
        }
        assert_eq!(argmax(&shifted), base);
    }
}
