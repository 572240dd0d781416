//! The global network `g(Pᵀ h(x; ω_h); ω_g)`.
//!
//! The extractor `h` ends at the configured insertion point; its output `z`
//! is exposed as a [`LatentBatch`] for the alignment learner. The projection
//! is applied as `c = z·P` (row-wise `Pᵀz`) and the head consumes `c`. `P`
//! takes part in the forward pass and in backprop to the extractor but never
//! receives a gradient of its own.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numerics::nn::{self, batch_cross_entropy, Tape};
use crate::numerics::{matmul, matmul_nt, Activation, Conv2d, Dense, Layer, LayerStack, Tensor};
use crate::ra::ProjectionBasis;
use crate::rng;

/// Row-stacked latent representations `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch(Tensor);

impl LatentBatch {
    pub fn new(z: Tensor) -> Result<Self> {
        if z.shape().len() != 2 {
            return Err(FedError::Shape(format!(
                "latent batch must be n × d, got {:?}",
                z.shape()
            )));
        }
        if !z.is_finite() {
            return Err(FedError::Numeric(
                "latent batch has non-finite entries".into(),
            ));
        }
        Ok(LatentBatch(z))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Which hidden layer's output is aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InsertionPoint {
    Fc1,
    #[default]
    Fc2,
    Fc3,
}

impl InsertionPoint {
    /// Number of fully connected hidden layers in the extractor.
    fn extractor_fc_layers(self) -> usize {
        match self {
            InsertionPoint::Fc1 => 1,
            InsertionPoint::Fc2 => 2,
            InsertionPoint::Fc3 => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            InsertionPoint::Fc1 => "fc1",
            InsertionPoint::Fc2 => "fc2",
            InsertionPoint::Fc3 => "fc3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Mlp,
    /// Two strided 5×5 convolutions ahead of the fully connected layers.
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Widths of the three fully connected hidden layers.
    pub hidden: [usize; 3],
    pub insertion: InsertionPoint,
    /// Projection rank; `None` keeps `P` square.
    pub rank: Option<usize>,
    /// Convolution channels for [`Architecture::Conv`].
    pub conv_channels: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Mlp,
            hidden: [256, 128, 64],
            insertion: InsertionPoint::Fc2,
            rank: None,
            conv_channels: [8, 16],
        }
    }
}

/// Input and output sizes fixed by the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub classes: usize,
    /// Image geometry, required by the convolutional stack.
    pub image: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub extractor: LayerStack,
    /// `None` means no projection layer at all (plain network).
    pub projection: Option<ProjectionBasis>,
    pub head: LayerStack,
    pub insertion: InsertionPoint,
    pub dims: ModelDims,
}

/// Cached state of one forward pass through the full model.
#[derive(Debug, Clone)]
pub struct ModelTape {
    extractor: Tape,
    head: Tape,
}

/// Builds the network with seeded He-uniform weights. With
/// `with_projection` the projection starts as the identity (`d × r`).
pub fn build_model(
    config: &ModelConfig,
    dims: ModelDims,
    with_projection: bool,
    seed: u64,
) -> Result<GlobalModel> {
    if dims.input == 0 || dims.classes < 2 {
        return Err(FedError::Validation(format!(
            "model needs input > 0 and at least 2 classes, got {dims:?}"
        )));
    }
    if config.hidden.contains(&0) {
        return Err(FedError::Validation(
            "hidden layer widths must be positive".into(),
        ));
    }
    let mut r = rng::derived(seed, &[rng::tag::MODEL_INIT]);
    let mut extractor = Vec::new();
    let mut width = dims.input;

    if config.architecture == Architecture::Conv {
        let (h, w) = dims.image.ok_or_else(|| {
            FedError::Validation("convolutional model needs image dimensions".into())
        })?;
        if h * w == 0 || dims.input % (h * w) != 0 {
            return Err(FedError::Validation(format!(
                "input width {} is not a multiple of the {h}x{w} image",
                dims.input
            )));
        }
        let channels = dims.input / (h * w);
        let c1 = Conv2d::init(
            channels,
            config.conv_channels[0],
            5,
            2,
            h,
            w,
            Activation::Relu,
            &mut r,
        )?;
        let c2 = Conv2d::init(
            config.conv_channels[0],
            config.conv_channels[1],
            5,
            2,
            c1.out_height(),
            c1.out_width(),
            Activation::Relu,
            &mut r,
        )?;
        width = c2.outputs();
        extractor.push(Layer::Conv(c1));
        extractor.push(Layer::Conv(c2));
    }

    let split = config.insertion.extractor_fc_layers();
    for &h in &config.hidden[..split] {
        extractor.push(Layer::Dense(Dense::init(
            width,
            h,
            Activation::Relu,
            &mut r,
        )));
        width = h;
    }
    let d = width;
    let rank = config.rank.unwrap_or(d);
    if rank == 0 || rank > d {
        return Err(FedError::Validation(format!(
            "projection rank {rank} must be within 1..={d}"
        )));
    }
    let mut head = Vec::new();
    let mut width = if with_projection { rank } else { d };
    for &h in &config.hidden[split..] {
        head.push(Layer::Dense(Dense::init(
            width,
            h,
            Activation::Relu,
            &mut r,
        )));
        width = h;
    }
    head.push(Layer::Dense(Dense::init(
        width,
        dims.classes,
        Activation::Identity,
        &mut r,
    )));

    Ok(GlobalModel {
        extractor: LayerStack::new(extractor)?,
        projection: with_projection.then(|| ProjectionBasis::identity(d, rank)),
        head: LayerStack::new(head)?,
        insertion: config.insertion,
        dims,
    })
}

impl GlobalModel {
    /// Latent dimension `d`.
    pub fn latent_dim(&self) -> usize {
        self.extractor.outputs().unwrap_or(self.dims.input)
    }

    pub fn rank(&self) -> usize {
        self.projection
            .as_ref()
            .map_or(self.latent_dim(), ProjectionBasis::rank)
    }

    /// Trainable parameters `ω_h ∪ ω_g` in a fixed order (extractor first).
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut p = self.extractor.params();
        p.extend(self.head.params());
        p
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.extractor.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn set_trainable(&mut self, values: Vec<Tensor>) -> Result<()> {
        let slots = self.trainable_mut();
        if slots.len() != values.len() {
            return Err(FedError::Shape(format!(
                "{} parameter tensors supplied for {} slots",
                values.len(),
                slots.len()
            )));
        }
        for (slot, v) in slots.iter().zip(&values) {
            if slot.shape() != v.shape() {
                return Err(FedError::Shape(format!(
                    "parameter shape {:?} does not match {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
        }
        for (slot, v) in slots.into_iter().zip(values) {
            *slot = v;
        }
        Ok(())
    }

    pub fn set_projection(&mut self, p: ProjectionBasis) -> Result<()> {
        match &self.projection {
            Some(cur) if cur.as_tensor().shape() == p.as_tensor().shape() => {
                self.projection = Some(p);
                Ok(())
            }
            Some(cur) => Err(FedError::Shape(format!(
                "projection {:?} does not match {:?}",
                p.as_tensor().shape(),
                cur.as_tensor().shape()
            ))),
            None => Err(FedError::Validation("model has no projection layer".into())),
        }
    }

    /// `z = h(x)`, `c = z·P`, `logits = g(c)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ModelTape, LatentBatch)> {
        let (z, ext_tape) = nn::nn_forward(&self.extractor, x)?;
        let c = match &self.projection {
            Some(p) => matmul(&z, p.as_tensor())?,
            None => z.clone(),
        };
        let (logits, head_tape) = nn::nn_forward(&self.head, &c)?;
        Ok((
            logits,
            ModelTape {
                extractor: ext_tape,
                head: head_tape,
            },
            LatentBatch::new(z)?,
        ))
    }

    /// Latents only.
    pub fn latents(&self, x: &Tensor) -> Result<LatentBatch> {
        let (z, _) = nn::nn_forward(&self.extractor, x)?;
        LatentBatch::new(z)
    }

    /// Gradients of the trainable parameters in [`GlobalModel::trainable`]
    /// order, plus `∂L/∂z`.
    pub fn backward(
        &self,
        tape: &ModelTape,
        logits_grad: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let head = nn::nn_backward(&self.head, &tape.head, logits_grad)?;
        let dz = match &self.projection {
            Some(p) => matmul_nt(&head.input_grad, p.as_tensor())?,
            None => head.input_grad,
        };
        let ext = nn::nn_backward(&self.extractor, &tape.extractor, &dz)?;
        let mut grads = ext.param_grads;
        grads.extend(head.param_grads);
        Ok((grads, dz))
    }

    /// Mean cross-entropy on a labeled batch.
    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let (logits, _, _) = self.forward(x)?;
        Ok(batch_cross_entropy(&logits, labels)?.0)
    }

    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let (logits, _, _) = self.forward(x)?;
        let mut out = logits.clone();
        for r in 0..logits.rows() {
            let p = nn::softmax(logits.row(r));
            out.row_mut(r).copy_from_slice(&p);
        }
        Ok(out)
    }
}

/// Options for [`local_train`].
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Mini-batch SGD on the cross-entropy of `g(Pᵀh(x))`, reshuffling every
/// epoch. `P` is left untouched.
pub fn local_train(
    model: &mut GlobalModel,
    features: &Tensor,
    labels: &[usize],
    opts: TrainOptions,
) -> Result<()> {
    let n = labels.len();
    if n == 0 {
        return Err(FedError::Validation(
            "cannot train on an empty shard".into(),
        ));
    }
    if features.rows() != n {
        return Err(FedError::Shape(format!(
            "{} feature rows for {n} labels",
            features.rows()
        )));
    }
    if opts.batch_size == 0 {
        return Err(FedError::Validation("batch size must be positive".into()));
    }
    let mut r = rng::derived(opts.seed, &[rng::tag::LOCAL_TRAIN]);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(opts.batch_size) {
            let x = features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, tape, _) = model.forward(&x)?;
            let (_, dl) = batch_cross_entropy(&logits, &y)?;
            let (grads, _) = model.backward(&tape, &dl)?;
            nn::sgd_step(model.trainable_mut(), &grads, opts.lr)?;
        }
    }
    Ok(())
}
