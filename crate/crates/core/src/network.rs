//! The three-headed projection network and its deterministic SGD trainer.
//!
//! The encoder is a small MLP whose normalized output `z` feeds three heads:
//! a sphere head (normalized again to `z_s`), a hyperbolic head (clipped and
//! pushed through the exponential map to `z_h`), and a linear classifier.
//! All gradients flow through the autodiff tape, so the analytic gradients
//! checked against finite differences in the loss module extend through the
//! whole network.
//!
//! Training is single-threaded and fully determined by the seed: parameter
//! initialization, prototype initialization, the fixed augmented views, and
//! the per-epoch shuffles all draw from one seeded stream. The recorded loss
//! history comes from a canonical evaluation pass over fixed-order batches,
//! so a zero learning rate yields a bit-identical report every epoch.

use crate::autodiff::{NodeId, Tape};
use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::geometry::Curvature;
use crate::linalg::column_stds;
use crate::losses::{
    joint_loss_graph, update_prototypes_from_rows, LossReport, PoincareBatch, PrototypeSet,
    DEFAULT_PROTOTYPE_DECAY, DEFAULT_TAU,
};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DEFAULT_HIDDEN_DIMS: [usize; 2] = [64, 64];
pub const DEFAULT_LATENT_DIM: usize = 128;
pub const DEFAULT_CURVATURE: f64 = 0.01;
pub const DEFAULT_CLIP_RADIUS: f64 = 1.0;
pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_AUGMENT_NOISE: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 42;
/// Initialization gain for the hyperbolic head. The feature clip in front of
/// the exponential map rescales gradients by `r/‖x‖` once active, so a head
/// that starts beyond the clip radius couples the very steep contrastive
/// objective to the shared trunk much more gently.
pub const HYPER_INIT_GAIN: f64 = 30.0;

/// Activation between encoder hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::contract(format!(
                "unknown activation '{other}' (expected 'tanh', 'relu', or 'identity')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn apply(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.clamp_min(x, 0.0),
            Activation::Identity => x,
        }
    }
}

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

impl LrSchedule {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::contract(format!(
                "unknown schedule '{other}' (expected 'constant' or 'cosine')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    fn rate(&self, base: f64, epoch: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = epoch as f64 / total.max(1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Architecture of the encoder and its three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub curvature: Curvature,
    pub clip_radius: f64,
    pub activation: Activation,
    /// Train additive bias terms. Angular embedding losses work on
    /// directions, where biases mostly feed a collapse direction, so the
    /// default is bias-free layers.
    pub use_biases: bool,
    /// Width of the frozen random-projection block concatenated into the
    /// latent layer (0 disables it). The trained trunk prunes input
    /// directions the losses do not need, which erases exactly the
    /// information that separates unseen distributions; reserving part of
    /// the latent for a fixed random projection keeps that metric intact
    /// while the trained half compacts the ID classes.
    pub frozen_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims: DEFAULT_HIDDEN_DIMS.to_vec(),
            latent_dim: DEFAULT_LATENT_DIM,
            num_classes,
            curvature: Curvature::new(DEFAULT_CURVATURE).expect("default curvature"),
            clip_radius: DEFAULT_CLIP_RADIUS,
            activation: Activation::Tanh,
            use_biases: false,
            frozen_dim: DEFAULT_LATENT_DIM / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.num_classes == 0 {
            return Err(Error::contract(
                "input_dim, latent_dim, and num_classes must be at least 1",
            ));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::contract("hidden layer widths must be at least 1"));
        }
        if self.frozen_dim >= self.latent_dim {
            return Err(Error::contract(format!(
                "frozen block ({}) must leave room for trained latent features ({})",
                self.frozen_dim, self.latent_dim
            )));
        }
        if !(self.clip_radius.is_finite() && self.clip_radius > 0.0) {
            return Err(Error::contract(format!(
                "clip radius must be positive, got {}",
                self.clip_radius
            )));
        }
        Ok(())
    }

    /// `(name, rows, cols)` for every parameter tensor, in storage order.
    /// The frozen random-projection buffer is listed with the rest (it is
    /// persisted like any tensor) but is never updated by the optimizer.
    fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.trunk_dim());
        for i in 0..dims.len() - 1 {
            shapes.push((format!("enc{i}.w"), dims[i], dims[i + 1]));
            if self.use_biases {
                shapes.push((format!("enc{i}.b"), 1, dims[i + 1]));
            }
        }
        if self.frozen_dim > 0 {
            shapes.push(("frozen.w".into(), self.input_dim, self.frozen_dim));
        }
        let d = self.latent_dim;
        for (head, cols) in [("sphere", d), ("hyper", d), ("cls", self.num_classes)] {
            shapes.push((format!("{head}.w"), d, cols));
            if self.use_biases {
                shapes.push((format!("{head}.b"), 1, cols));
            }
        }
        shapes
    }

    /// Output width of the trained encoder trunk.
    fn trunk_dim(&self) -> usize {
        self.latent_dim - self.frozen_dim
    }

    fn encoder_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

/// Parameters, optimizer buffers, and the step counter of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    spec: NetworkSpec,
    names: Vec<String>,
    params: Vec<Array2<f64>>,
    momentum: Vec<Array2<f64>>,
    step: u64,
    seed: u64,
}

impl NetworkState {
    /// Fresh state with Xavier-uniform weights and zero biases, fully
    /// determined by the seed.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(spec, seed, &mut rng)
    }

    pub(crate) fn init_with_rng<R: Rng>(
        spec: NetworkSpec,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut momentum = Vec::new();
        for (name, rows, cols) in spec.tensor_shapes() {
            let value = if name.ends_with(".b") {
                Array2::zeros((rows, cols))
            } else {
                let gain = if name == "hyper.w" { HYPER_INIT_GAIN } else { 1.0 };
                let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
                Array2::from_shape_fn((rows, cols), |_| {
                    bound * (2.0 * rng.random::<f64>() - 1.0)
                })
            };
            momentum.push(Array2::zeros((rows, cols)));
            params.push(value);
            names.push(name);
        }
        Ok(NetworkState {
            spec,
            names,
            params,
            momentum,
            step: 0,
            seed,
        })
    }

    /// Rebuilds a state from named tensors (checkpoint loading). Shapes must
    /// match the spec exactly; momentum buffers start at zero.
    pub fn from_tensors(
        spec: NetworkSpec,
        tensors: Vec<(String, Array2<f64>)>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.tensor_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Format {
                path: "<tensors>".into(),
                reason: format!("expected {} tensors, got {}", shapes.len(), tensors.len()),
            });
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut momentum = Vec::new();
        for ((name, rows, cols), (got_name, value)) in shapes.into_iter().zip(tensors) {
            if name != got_name || value.dim() != (rows, cols) {
                return Err(Error::Format {
                    path: "<tensors>".into(),
                    reason: format!(
                        "tensor {got_name} {:?} does not match expected {name} ({rows}, {cols})",
                        value.dim()
                    ),
                });
            }
            momentum.push(Array2::zeros((rows, cols)));
            params.push(value);
            names.push(name);
        }
        Ok(NetworkState {
            spec,
            names,
            params,
            momentum,
            step: 0,
            seed,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.params.iter())
    }

    pub fn tensor(&self, name: &str) -> Option<&Array2<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    /// Mutable tensor access, used by finite-difference tests.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.params[i])
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Normalized shared latent `z` (unit rows); all OOD scoring runs on it.
    pub latent: Array2<f64>,
    /// Sphere-head embedding `z_s` (unit rows).
    pub sphere: Array2<f64>,
    /// Hyperbolic-head embedding `z_h` on the Poincaré ball.
    pub hyperbolic: PoincareBatch,
    /// Classifier logits.
    pub logits: Array2<f64>,
}

/// One training batch over the full view set ℐ: raw inputs plus labels,
/// view pairing, and the augmented mask.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub view_ids: Vec<usize>,
    pub augmented: Vec<bool>,
}

impl TrainingBatch {
    fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let n = self.inputs.nrows();
        if n == 0 {
            return Err(Error::contract("empty training batch"));
        }
        if self.labels.len() != n || self.view_ids.len() != n || self.augmented.len() != n {
            return Err(Error::DimensionMismatch(
                "batch fields disagree on sample count".into(),
            ));
        }
        if self.inputs.ncols() != spec.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input dim {} vs network input dim {}",
                self.inputs.ncols(),
                spec.input_dim
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= spec.num_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {} classes",
                spec.num_classes
            )));
        }
        Ok(())
    }
}

/// Named parameter gradients in state storage order.
#[derive(Debug, Clone)]
pub struct GradientSet {
    tensors: Vec<(String, Array2<f64>)>,
}

impl GradientSet {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(n, g)| (n.as_str(), g))
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g)
    }
}

struct ForwardNodes {
    latent: NodeId,
    sphere: NodeId,
    hyper: NodeId,
    logits: NodeId,
}

/// Records the full forward computation on the tape. Returns parameter leaf
/// ids (state order) and the output nodes.
fn build_forward(
    tape: &mut Tape,
    state: &NetworkState,
    inputs: Array2<f64>,
) -> (Vec<NodeId>, ForwardNodes) {
    let x = tape.leaf(inputs);
    let param_ids: Vec<NodeId> = state
        .params
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect();
    let node = |name: &str| {
        state
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| param_ids[i])
    };
    let linear = |tape: &mut Tape, input: NodeId, stem: &str| {
        let lin = tape.matmul(input, node(&format!("{stem}.w")).expect("weight"));
        match node(&format!("{stem}.b")) {
            Some(b) => tape.add_row(lin, b),
            None => lin,
        }
    };

    let spec = &state.spec;
    let layers = spec.encoder_layers();
    let mut h = x;
    for layer in 0..layers {
        h = linear(tape, h, &format!("enc{layer}"));
        if layer + 1 < layers {
            h = spec.activation.apply(tape, h);
        }
    }
    let latent = match node("frozen.w") {
        Some(frozen) => {
            let trained_block = tape.row_normalize(h);
            let projected = tape.matmul(x, frozen);
            let frozen_block = tape.row_normalize(projected);
            let both = tape.concat_cols(trained_block, frozen_block);
            tape.row_normalize(both)
        }
        None => tape.row_normalize(h),
    };

    let sphere = {
        let pre = linear(tape, latent, "sphere");
        tape.row_normalize(pre)
    };
    let hyper = {
        let pre = linear(tape, latent, "hyper");
        let clipped = tape.clip_rows(pre, spec.clip_radius);
        tape.exp_map_rows(clipped, spec.curvature.value())
    };
    let logits = linear(tape, latent, "cls");
    (
        param_ids,
        ForwardNodes {
            latent,
            sphere,
            hyper,
            logits,
        },
    )
}

/// Runs the network on a batch of raw inputs.
pub fn forward(state: &NetworkState, inputs: ArrayView2<f64>) -> Result<ForwardPass> {
    if inputs.ncols() != state.spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input dim {} vs network input dim {}",
            inputs.ncols(),
            state.spec.input_dim
        )));
    }
    if inputs.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("forward inputs must be finite"));
    }
    let mut tape = Tape::new();
    let (_, nodes) = build_forward(&mut tape, state, inputs.to_owned());
    let latent = tape.value(nodes.latent).clone();
    let sphere = tape.value(nodes.sphere).clone();
    let hyper_points = tape.value(nodes.hyper).clone();
    let logits = tape.value(nodes.logits).clone();
    for (name, m) in [
        ("latent", &latent),
        ("sphere head", &sphere),
        ("hyperbolic head", &hyper_points),
        ("logits", &logits),
    ] {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("forward pass ({name})")));
        }
    }
    Ok(ForwardPass {
        latent,
        sphere,
        hyperbolic: PoincareBatch::new(hyper_points, state.spec.curvature)?,
        logits,
    })
}

struct StepOutput {
    report: LossReport,
    grads: GradientSet,
    sphere_values: Array2<f64>,
}

fn run_training_step(
    state: &NetworkState,
    batch: &TrainingBatch,
    protos: &PrototypeSet,
) -> Result<StepOutput> {
    batch.validate(&state.spec)?;
    if protos.dim() != state.spec.latent_dim || protos.num_classes() != state.spec.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "prototypes are {}×{} but the network needs {}×{}",
            protos.num_classes(),
            protos.dim(),
            state.spec.num_classes,
            state.spec.latent_dim
        )));
    }
    if !batch.augmented.iter().any(|&a| a) {
        return Err(Error::contract(
            "training batch has no augmented views for the contrastive denominator",
        ));
    }
    let mut tape = Tape::new();
    let (param_ids, nodes) = build_forward(&mut tape, state, batch.inputs.clone());
    let mu = tape.leaf(protos.prototypes().to_owned());
    let loss_nodes = joint_loss_graph(
        &mut tape,
        nodes.sphere,
        nodes.hyper,
        nodes.logits,
        mu,
        &batch.labels,
        &batch.augmented,
        state.spec.curvature.value(),
        protos.tau(),
    );
    let report = loss_nodes.report(&tape);
    if !report.is_finite() {
        return Err(Error::NonFinite("joint loss".into()));
    }
    let grads = tape.backward(loss_nodes.l_total);
    let mut tensors = Vec::with_capacity(param_ids.len());
    for (name, id) in state.names.iter().zip(param_ids) {
        let g = grads.wrt(&tape, id);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        tensors.push((name.clone(), g));
    }
    Ok(StepOutput {
        report,
        grads: GradientSet { tensors },
        sphere_values: tape.value(nodes.sphere).clone(),
    })
}

/// Joint loss of a batch without touching any state (used for evaluation
/// passes and tests).
pub fn loss_eval(
    state: &NetworkState,
    batch: &TrainingBatch,
    protos: &PrototypeSet,
) -> Result<LossReport> {
    batch.validate(&state.spec)?;
    let mut tape = Tape::new();
    let (_, nodes) = build_forward(&mut tape, state, batch.inputs.clone());
    let mu = tape.leaf(protos.prototypes().to_owned());
    let loss_nodes = joint_loss_graph(
        &mut tape,
        nodes.sphere,
        nodes.hyper,
        nodes.logits,
        mu,
        &batch.labels,
        &batch.augmented,
        state.spec.curvature.value(),
        protos.tau(),
    );
    Ok(loss_nodes.report(&tape))
}

/// Gradient of the joint loss with respect to every parameter tensor.
pub fn backward(
    state: &NetworkState,
    batch: &TrainingBatch,
    protos: &PrototypeSet,
) -> Result<(LossReport, GradientSet)> {
    run_training_step(state, batch, protos).map(|out| (out.report, out.grads))
}

/// Optimizer and schedule configuration. The temperature is carried here so
/// training can build its prototype set; it is shared by every loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub prototype_decay: f64,
    pub tau: f64,
    /// Augmentation jitter as a multiple of the per-feature standard
    /// deviation.
    pub augment_noise: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            prototype_decay: DEFAULT_PROTOTYPE_DECAY,
            tau: DEFAULT_TAU,
            augment_noise: DEFAULT_AUGMENT_NOISE,
            schedule: LrSchedule::Constant,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::contract(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::contract(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::contract("batch size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.prototype_decay) {
            return Err(Error::contract(format!(
                "prototype decay must lie in [0, 1], got {}",
                self.prototype_decay
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::contract(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if !(self.augment_noise.is_finite() && self.augment_noise >= 0.0) {
            return Err(Error::contract(format!(
                "augment noise must be non-negative, got {}",
                self.augment_noise
            )));
        }
        Ok(())
    }
}

/// One SGD-with-momentum update:
/// `buffer ← momentum·buffer + grad + weight_decay·param`,
/// `param ← param − lr·buffer`; increments the step counter.
pub fn sgd_step(state: &mut NetworkState, grads: &GradientSet, config: &TrainConfig) -> Result<()> {
    sgd_step_with_lr(state, grads, config, config.learning_rate)
}

pub(crate) fn sgd_step_with_lr(
    state: &mut NetworkState,
    grads: &GradientSet,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if grads.tensors.len() != state.params.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gradient tensors vs {} parameters",
            grads.tensors.len(),
            state.params.len()
        )));
    }
    for (i, (name, g)) in grads.tensors.iter().enumerate() {
        if name != &state.names[i] || g.dim() != state.params[i].dim() {
            return Err(Error::DimensionMismatch(format!(
                "gradient {name} does not match parameter {}",
                state.names[i]
            )));
        }
        if name.starts_with("frozen") {
            continue; // fixed random-projection buffer
        }
        let buf = &mut state.momentum[i];
        buf.zip_mut_with(&(g + &(&state.params[i] * config.weight_decay)), |b, v| {
            *b = config.momentum * *b + v;
        });
        state.params[i].zip_mut_with(buf, |p, b| *p -= lr * *b);
    }
    state.step += 1;
    Ok(())
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub prototypes: PrototypeSet,
    /// `history[0]` is the pre-training evaluation; `history[e]` the
    /// evaluation after epoch `e`.
    pub history: Vec<LossReport>,
}

/// Index chunks in fixed order: each chunk becomes one batch of originals
/// plus their fixed augmented partners.
fn chunk_indices(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn build_batch(
    dataset: &LabeledDataset,
    augmented_views: &Array2<f64>,
    chunk: &[usize],
) -> TrainingBatch {
    let m = chunk.len();
    let dim = dataset.dim();
    let mut inputs = Array2::zeros((2 * m, dim));
    let mut labels = Vec::with_capacity(2 * m);
    let mut view_ids = Vec::with_capacity(2 * m);
    let mut augmented = Vec::with_capacity(2 * m);
    for (pos, &i) in chunk.iter().enumerate() {
        inputs.row_mut(pos).assign(&dataset.features.row(i));
        labels.push(dataset.labels[i]);
        view_ids.push(pos);
        augmented.push(false);
    }
    for (pos, &i) in chunk.iter().enumerate() {
        inputs.row_mut(m + pos).assign(&augmented_views.row(i));
        labels.push(dataset.labels[i]);
        view_ids.push(pos);
        augmented.push(true);
    }
    TrainingBatch {
        inputs,
        labels,
        view_ids,
        augmented,
    }
}

/// Sample-weighted mean of per-batch reports, recomposed so the total stays
/// the exact sum of the averaged components.
fn average_reports(reports: &[(LossReport, usize)]) -> LossReport {
    let total: f64 = reports.iter().map(|(_, n)| *n as f64).sum();
    let mut com = 0.0;
    let mut dis = 0.0;
    let mut hypb = 0.0;
    let mut ce = 0.0;
    for (r, n) in reports {
        let w = *n as f64 / total;
        com += w * r.l_com;
        dis += w * r.l_dis;
        hypb += w * r.l_hypb;
        ce += w * r.l_ce;
    }
    LossReport::from_components(com, dis, hypb, ce)
}

/// Trains the network on a labeled dataset with the joint loss.
///
/// Deterministic per seed; prototypes are EMA-updated after every batch. A
/// zero learning rate freezes parameters *and* prototypes, so the recorded
/// history is constant. Divergence (a non-finite loss) aborts with the
/// history collected so far.
pub fn train(
    spec: NetworkSpec,
    config: &TrainConfig,
    dataset: &LabeledDataset,
) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    if dataset.num_classes < 2 {
        return Err(Error::contract("training needs at least two classes"));
    }
    if dataset.num_classes != spec.num_classes {
        return Err(Error::contract(format!(
            "dataset has {} classes but the network expects {}",
            dataset.num_classes, spec.num_classes
        )));
    }
    if dataset.dim() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset dim {} vs network input dim {}",
            dataset.dim(),
            spec.input_dim
        )));
    }
    if let Some(class) = dataset.class_counts().iter().position(|&c| c < 2) {
        return Err(Error::contract(format!(
            "class {class} has fewer than 2 samples"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = NetworkState::init_with_rng(spec.clone(), config.seed, &mut rng)?;
    let mut protos = PrototypeSet::random(
        spec.num_classes,
        spec.latent_dim,
        config.tau,
        &mut rng,
    )?;

    // fixed augmented partner per sample: jitter scaled by per-feature std
    let stds = column_stds(dataset.features.view());
    let mut augmented_views = dataset.features.clone();
    for mut row in augmented_views.rows_mut() {
        for (j, x) in row.iter_mut().enumerate() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x += config.augment_noise * stds[j] * g;
        }
    }

    let m = dataset.len();
    let canonical: Vec<usize> = (0..m).collect();
    let eval_chunks = chunk_indices(&canonical, config.batch_size);
    let learning = config.learning_rate != 0.0;

    let eval_pass = |state: &NetworkState, protos: &PrototypeSet| -> Result<LossReport> {
        let mut reports = Vec::with_capacity(eval_chunks.len());
        for chunk in &eval_chunks {
            let batch = build_batch(dataset, &augmented_views, chunk);
            let n = batch.inputs.nrows();
            reports.push((loss_eval(state, &batch, protos)?, n));
        }
        Ok(average_reports(&reports))
    };

    let mut history = Vec::with_capacity(config.epochs + 1);
    let initial = eval_pass(&state, &protos)?;
    if !initial.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0, history });
    }
    history.push(initial);

    let mut order: Vec<usize> = (0..m).collect();
    for epoch in 0..config.epochs {
        let lr = config
            .schedule
            .rate(config.learning_rate, epoch, config.epochs);
        // Fisher-Yates shuffle from the shared stream
        for i in (1..m).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in chunk_indices(&order, config.batch_size) {
            let batch = build_batch(dataset, &augmented_views, &chunk);
            let step = match run_training_step(&state, &batch, &protos) {
                Ok(step) => step,
                Err(e) if e.is_divergence() => {
                    return Err(Error::TrainingDiverged {
                        epoch: epoch + 1,
                        history,
                    })
                }
                Err(e) => return Err(e),
            };
            sgd_step_with_lr(&mut state, &step.grads, config, lr)?;
            if learning {
                protos = update_prototypes_from_rows(
                    &protos,
                    step.sphere_values.view(),
                    &batch.labels,
                    config.prototype_decay,
                )?;
            }
        }
        let report = eval_pass(&state, &protos)?;
        if !report.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: epoch + 1,
                history,
            });
        }
        history.push(report);
    }

    Ok(TrainOutcome {
        state,
        prototypes: protos,
        history,
    })
}

/// Embeds a full dataset through the trained network in fixed-size chunks,
/// returning the normalized latent rows `z`.
pub fn embed_latent(state: &NetworkState, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((inputs.nrows(), state.spec.latent_dim));
    let chunk = 512;
    let mut row = 0;
    while row < inputs.nrows() {
        let end = (row + chunk).min(inputs.nrows());
        let pass = forward(state, inputs.slice(ndarray::s![row..end, ..]))?;
        out.slice_mut(ndarray::s![row..end, ..]).assign(&pass.latent);
        row = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_sphere_mixture, SynthesisSpec};
    use crate::linalg::l2_norm;
    use ndarray::array;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            hidden_dims: vec![4],
            latent_dim: 5,
            num_classes: 2,
            curvature: Curvature::new(0.5).unwrap(),
            clip_radius: 1.0,
            activation: Activation::Tanh,
            use_biases: true,
            frozen_dim: 2,
        }
    }

    fn tiny_batch(rng: &mut ChaCha8Rng, n: usize) -> TrainingBatch {
        let half = n / 2;
        let inputs = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>() - 0.5);
        TrainingBatch {
            inputs,
            labels: (0..n).map(|i| i % 2).collect(),
            view_ids: (0..n).map(|i| i % half.max(1)).collect(),
            augmented: (0..n).map(|i| i >= half).collect(),
        }
    }

    #[test]
    fn forward_outputs_keep_their_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = NetworkState::init(tiny_spec(), 1).unwrap();
        for _ in 0..100 {
            let inputs = Array2::from_shape_fn((8, 3), |_| 4.0 * (rng.random::<f64>() - 0.5));
            let pass = forward(&state, inputs.view()).unwrap();
            for row in pass.latent.rows() {
                assert!((l2_norm(row) - 1.0).abs() < 1e-6);
            }
            for row in pass.sphere.rows() {
                assert!((l2_norm(row) - 1.0).abs() < 1e-6);
            }
            let c = state.spec().curvature;
            for row in pass.hyperbolic.points().rows() {
                assert!(c.contains_norm_sq(row.dot(&row)), "z_h escaped the ball");
            }
            assert_eq!(pass.logits.dim(), (8, 2));
        }
    }

    #[test]
    fn forward_ball_invariant_sweep() {
        // broad randomized sweep across freshly initialized networks
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let state = NetworkState::init(tiny_spec(), trial).unwrap();
            let inputs = Array2::from_shape_fn((100, 3), |_| 6.0 * (rng.random::<f64>() - 0.5));
            let pass = forward(&state, inputs.view()).unwrap();
            let c = state.spec().curvature;
            for row in pass.hyperbolic.points().rows() {
                assert!(c.contains_norm_sq(row.dot(&row)));
            }
        }
    }

    #[test]
    fn forward_zero_network_hits_normalization_guard() {
        let mut state = NetworkState::init(tiny_spec(), 1).unwrap();
        let names: Vec<String> = state.names.clone();
        for name in names {
            state.tensor_mut(&name).unwrap().fill(0.0);
        }
        let inputs = array![[1.0, 2.0, 3.0]];
        let pass = forward(&state, inputs.view()).unwrap();
        // all-zero weights zero both latent blocks; each guard yields e₁ and
        // the final normalization weighs the two blocks equally
        let r = 0.5f64.sqrt();
        assert!((pass.latent[[0, 0]] - r).abs() < 1e-15);
        assert!((pass.latent[[0, 3]] - r).abs() < 1e-15);
        for j in [1, 2, 4] {
            assert_eq!(pass.latent[[0, j]], 0.0);
        }
    }

    #[test]
    fn forward_rejects_non_finite_inputs() {
        let state = NetworkState::init(tiny_spec(), 1).unwrap();
        let inputs = array![[f64::NAN, 0.0, 0.0]];
        assert!(forward(&state, inputs.view()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_over_all_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let state = NetworkState::init(tiny_spec(), 11).unwrap();
        let protos = PrototypeSet::random(2, 5, 0.1, &mut rng).unwrap();
        let batch = tiny_batch(&mut rng, 4);
        let (_, grads) = backward(&state, &batch, &protos).unwrap();

        let h = 1e-5;
        let names: Vec<String> = state.names.clone();
        for name in &names {
            let shape = state.tensor(name).unwrap().dim();
            let analytic = grads.get(name).unwrap().clone();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let eval = |delta: f64| {
                        let mut s = state.clone();
                        s.tensor_mut(name).unwrap()[[r, c]] += delta;
                        loss_eval(&s, &batch, &protos).unwrap().l_total
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let a = analytic[[r, c]];
                    let denom = fd.abs().max(a.abs()).max(1e-6);
                    assert!(
                        (fd - a).abs() / denom < 1e-4,
                        "{name}[{r},{c}]: fd {fd} vs analytic {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn backward_near_optimum_has_near_zero_gradients() {
        // K = 1 with coincident views: compactness is exactly zero, the
        // single-class cross-entropy is zero, and the contrastive terms
        // cancel, so every gradient should be (numerically) zero
        let spec = NetworkSpec {
            num_classes: 1,
            ..tiny_spec()
        };
        let state = NetworkState::init(spec, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let protos = PrototypeSet::random(1, 5, 0.1, &mut rng).unwrap();
        let row = [0.3, -0.2, 0.5];
        let inputs = array![
            [row[0], row[1], row[2]],
            [row[0], row[1], row[2]]
        ];
        let batch = TrainingBatch {
            inputs,
            labels: vec![0, 0],
            view_ids: vec![0, 0],
            augmented: vec![false, true],
        };
        let (report, grads) = backward(&state, &batch, &protos).unwrap();
        assert!(report.l_total.abs() < 1e-9, "loss {report:?}");
        for (name, g) in grads.iter() {
            let max = g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(max < 1e-9, "gradient of {name} not near zero: {max}");
        }
    }

    #[test]
    fn sgd_step_semantics() {
        // zero gradients and zero buffers → pure weight-decay shrinkage
        let mut state = NetworkState::init(tiny_spec(), 5).unwrap();
        let config = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
            ..TrainConfig::default()
        };
        let zero_grads = GradientSet {
            tensors: state
                .tensors()
                .map(|(n, p)| (n.to_string(), Array2::zeros(p.dim())))
                .collect(),
        };
        let before = state.tensor("enc0.w").unwrap().clone();
        sgd_step(&mut state, &zero_grads, &config).unwrap();
        let after = state.tensor("enc0.w").unwrap();
        for (b, a) in before.iter().zip(after.iter()) {
            // param ← param − lr·wd·param
            assert!((a - b * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
        }
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn sgd_two_step_trajectory_matches_hand_computation() {
        // scalar quadratic f(θ) = θ²/2, gradient θ, starting at θ = 1 with
        // lr 0.1, momentum 0.9, no decay:
        // step 1: b = 1 → θ = 0.9; step 2: b = 0.9·1 + 0.9 = 1.8 → θ = 0.72
        let spec = NetworkSpec {
            input_dim: 1,
            hidden_dims: vec![],
            latent_dim: 1,
            num_classes: 1,
            curvature: Curvature::new(1.0).unwrap(),
            clip_radius: 1.0,
            activation: Activation::Identity,
            use_biases: true,
            frozen_dim: 0,
        };
        let mut state = NetworkState::init(spec, 1).unwrap();
        state.tensor_mut("enc0.w").unwrap()[[0, 0]] = 1.0;
        let config = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let grad_of = |s: &NetworkState| GradientSet {
            tensors: s
                .tensors()
                .map(|(n, p)| {
                    let g = if n == "enc0.w" { p.clone() } else { Array2::zeros(p.dim()) };
                    (n.to_string(), g)
                })
                .collect(),
        };
        let g1 = grad_of(&state);
        sgd_step(&mut state, &g1, &config).unwrap();
        assert!((state.tensor("enc0.w").unwrap()[[0, 0]] - 0.9).abs() < 1e-12);
        let g2 = grad_of(&state);
        sgd_step(&mut state, &g2, &config).unwrap();
        assert!((state.tensor("enc0.w").unwrap()[[0, 0]] - 0.72).abs() < 1e-12);
        assert_eq!(state.step(), 2);
    }

    #[test]
    fn momentum_zero_reduces_to_vanilla_sgd() {
        let mut state = NetworkState::init(tiny_spec(), 9).unwrap();
        let mut vanilla = state.clone();
        let config = TrainConfig {
            learning_rate: 0.2,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let grads = GradientSet {
            tensors: state
                .tensors()
                .map(|(n, p)| (n.to_string(), Array2::from_elem(p.dim(), 0.5)))
                .collect(),
        };
        sgd_step(&mut state, &grads, &config).unwrap();
        for (name, g) in grads.iter() {
            let mut expect = vanilla.tensor(name).unwrap().clone();
            if name.starts_with("frozen") {
                // the random-projection buffer never moves
                assert_eq!(state.tensor(name).unwrap(), &expect, "{name}");
                continue;
            }
            expect.zip_mut_with(g, |p, gv| *p -= 0.2 * gv);
            assert_eq!(state.tensor(name).unwrap(), &expect, "{name}");
        }
    }

    fn small_dataset(seed: u64) -> LabeledDataset {
        let mut spec = SynthesisSpec::new(seed);
        spec.num_classes = 3;
        spec.samples_per_class = 20;
        spec.input_dim = 6;
        gen_sphere_mixture(&spec).unwrap()
    }

    fn small_train_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: 3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn small_net_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 6,
            hidden_dims: vec![8],
            latent_dim: 10,
            num_classes: 3,
            curvature: Curvature::new(0.01).unwrap(),
            clip_radius: 1.0,
            activation: Activation::Tanh,
            use_biases: false,
            frozen_dim: 4,
        }
    }

    #[test]
    fn train_zero_learning_rate_freezes_everything() {
        let dataset = small_dataset(1);
        let config = TrainConfig {
            learning_rate: 0.0,
            ..small_train_config()
        };
        let outcome = train(small_net_spec(), &config, &dataset).unwrap();
        assert_eq!(outcome.history.len(), config.epochs + 1);
        for report in &outcome.history[1..] {
            assert_eq!(report, &outcome.history[0], "loss drifted at lr = 0");
        }
        // parameters equal a fresh initialization from the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fresh = NetworkState::init_with_rng(small_net_spec(), config.seed, &mut rng).unwrap();
        for ((_, a), (_, b)) in outcome.state.tensors().zip(fresh.tensors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn train_is_deterministic_per_seed() {
        let dataset = small_dataset(2);
        let config = small_train_config();
        let a = train(small_net_spec(), &config, &dataset).unwrap();
        let b = train(small_net_spec(), &config, &dataset).unwrap();
        assert_eq!(a.history, b.history, "histories must be bit-identical");
        for ((_, ta), (_, tb)) in a.state.tensors().zip(b.state.tensors()) {
            assert_eq!(ta, tb);
        }
        assert_eq!(a.prototypes.prototypes(), b.prototypes.prototypes());
    }

    #[test]
    fn train_reduces_loss_on_synthetic_data() {
        let dataset = small_dataset(3);
        let config = TrainConfig {
            epochs: 10,
            ..small_train_config()
        };
        let outcome = train(small_net_spec(), &config, &dataset).unwrap();
        let first = outcome.history.first().unwrap().l_total;
        let last = outcome.history.last().unwrap().l_total;
        assert!(
            last < first,
            "training failed to reduce the loss: {first} → {last}"
        );
    }

    #[test]
    fn train_rejects_degenerate_datasets() {
        // single class
        let mut spec = SynthesisSpec::new(4);
        spec.num_classes = 1;
        spec.samples_per_class = 8;
        spec.input_dim = 6;
        let one_class = gen_sphere_mixture(&spec).unwrap();
        let net = NetworkSpec {
            num_classes: 1,
            ..small_net_spec()
        };
        assert!(train(net, &small_train_config(), &one_class).is_err());
    }

    #[test]
    fn embed_latent_matches_forward() {
        let dataset = small_dataset(5);
        let state = NetworkState::init(small_net_spec(), 3).unwrap();
        let all = embed_latent(&state, dataset.features.view()).unwrap();
        let direct = forward(&state, dataset.features.view()).unwrap();
        assert_eq!(all, direct.latent);
    }
}
