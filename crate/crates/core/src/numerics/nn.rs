//! Minimal feed-forward network substrate with hand-written backprop.
//!
//! Inputs are batches laid out as `batch × features` matrices. Convolution
//! layers read and write channel-major flattened images so they can be
//! stacked freely with dense layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
        }
    }

    fn derivative_mask(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected layer `y = act(x Wᵀ + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    /// He-uniform initialization: `U(-√(6/fan_in), √(6/fan_in))`, zero bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Dense {
            weight: Tensor::new(vec![outputs, inputs], w).expect("consistent shape"),
            bias: Tensor::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// 2-D convolution without padding, square kernel, configurable stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_height: usize,
    pub in_width: usize,
    /// `out_channels × (in_channels · kernel²)`
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        in_height: usize,
        in_width: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || kernel > in_height || kernel > in_width {
            return Err(FedError::Validation(format!(
                "conv kernel {kernel}/stride {stride} does not fit a {in_height}x{in_width} input"
            )));
        }
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..out_channels * fan_in)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            in_height,
            in_width,
            weight: Tensor::new(vec![out_channels, fan_in], w)?,
            bias: Tensor::zeros(&[out_channels]),
            activation,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.in_height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width - self.kernel) / self.stride + 1
    }

    pub fn inputs(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn outputs(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    /// Patch matrix for one sample: `(oh·ow) × (c·k²)`.
    fn im2col(&self, sample: &[f64]) -> Tensor {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let patch = self.in_channels * k * k;
        let mut cols = vec![0.0; oh * ow * patch];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
                let mut idx = 0;
                for c in 0..self.in_channels {
                    for ky in 0..k {
                        let y = oy * self.stride + ky;
                        let base = c * self.in_height * self.in_width + y * self.in_width;
                        for kx in 0..k {
                            row[idx] = sample[base + ox * self.stride + kx];
                            idx += 1;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![oh * ow, patch], cols).expect("consistent shape")
    }

    fn col2im_add(&self, dcols: &Tensor, dsample: &mut [f64]) {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        for oy in 0..oh {
            for ox in 0..ow {
                let row = dcols.row(oy * ow + ox);
                let mut idx = 0;
                for c in 0..self.in_channels {
                    for ky in 0..k {
                        let y = oy * self.stride + ky;
                        let base = c * self.in_height * self.in_width + y * self.in_width;
                        for kx in 0..k {
                            dsample[base + ox * self.stride + kx] += row[idx];
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv2d),
}

impl Layer {
    pub fn inputs(&self) -> usize {
        match self {
            Layer::Dense(d) => d.inputs(),
            Layer::Conv(c) => c.inputs(),
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            Layer::Dense(d) => d.outputs(),
            Layer::Conv(c) => c.outputs(),
        }
    }

    fn activation(&self) -> Activation {
        match self {
            Layer::Dense(d) => d.activation,
            Layer::Conv(c) => c.activation,
        }
    }

    pub fn params(&self) -> [&Tensor; 2] {
        match self {
            Layer::Dense(d) => [&d.weight, &d.bias],
            Layer::Conv(c) => [&c.weight, &c.bias],
        }
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        match self {
            Layer::Dense(d) => [&mut d.weight, &mut d.bias],
            Layer::Conv(c) => [&mut c.weight, &mut c.bias],
        }
    }

    /// Pre-activation output for a batch.
    fn linear(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => {
                let mut y = matmul_nt(x, &d.weight)?;
                let b = d.bias.data();
                for r in 0..y.rows() {
                    for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                        *v += bv;
                    }
                }
                Ok(y)
            }
            Layer::Conv(c) => {
                let n = x.rows();
                let (oh, ow) = (c.out_height(), c.out_width());
                let spatial = oh * ow;
                let mut out = Tensor::zeros(&[n, c.outputs()]);
                for s in 0..n {
                    let cols = c.im2col(x.row(s));
                    let y = matmul_nt(&cols, &c.weight)?; // spatial × out_channels
                    let dst = out.row_mut(s);
                    for p in 0..spatial {
                        for ch in 0..c.out_channels {
                            dst[ch * spatial + p] = y.get(p, ch) + c.bias.data()[ch];
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Ordered list of layers applied in sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

/// Activations cached by [`nn_forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
    batch: usize,
    layer_shapes: Vec<(usize, usize)>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(FedError::Validation(format!(
                    "layer chain broken: {} outputs feed {} inputs",
                    w[0].outputs(),
                    w[1].inputs()
                )));
            }
        }
        Ok(LayerStack { layers })
    }

    pub fn inputs(&self) -> Option<usize> {
        self.layers.first().map(Layer::inputs)
    }

    pub fn outputs(&self) -> Option<usize> {
        self.layers.last().map(Layer::outputs)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.inputs(), l.outputs()))
            .collect()
    }
}

/// Runs the stack on a `batch × inputs` matrix.
pub fn nn_forward(stack: &LayerStack, x: &Tensor) -> Result<(Tensor, Tape)> {
    if x.shape().len() != 2 {
        return Err(FedError::Shape(format!(
            "network input must be batch × features, got {:?}",
            x.shape()
        )));
    }
    if let Some(expected) = stack.inputs() {
        if x.cols() != expected {
            return Err(FedError::Shape(format!(
                "network expects {expected} input features, got {}",
                x.cols()
            )));
        }
    }
    let mut inputs = Vec::with_capacity(stack.layers.len());
    let mut pres = Vec::with_capacity(stack.layers.len());
    let mut cur = x.clone();
    for layer in &stack.layers {
        let pre = layer.linear(&cur)?;
        let act = layer.activation();
        let out = if act == Activation::Identity {
            pre.clone()
        } else {
            pre.map(|v| act.apply(v))
        };
        inputs.push(cur);
        pres.push(pre);
        cur = out;
    }
    Ok((
        cur,
        Tape {
            inputs,
            pre_activations: pres,
            batch: x.rows(),
            layer_shapes: stack.shapes(),
        },
    ))
}

/// Gradients for every parameter of a stack, in [`LayerStack::params`]
/// order, plus the gradient with respect to the stack input.
#[derive(Debug, Clone)]
pub struct Backward {
    pub param_grads: Vec<Tensor>,
    pub input_grad: Tensor,
}

pub fn nn_backward(stack: &LayerStack, tape: &Tape, output_grad: &Tensor) -> Result<Backward> {
    if tape.layer_shapes != stack.shapes() {
        return Err(FedError::Validation(
            "tape was recorded on a different network".into(),
        ));
    }
    let expected_cols = stack.outputs().unwrap_or(0);
    if output_grad.shape() != [tape.batch, expected_cols] {
        return Err(FedError::Validation(format!(
            "loss gradient shape {:?} does not match tape batch {} × {}",
            output_grad.shape(),
            tape.batch,
            expected_cols
        )));
    }

    let mut grads: Vec<Tensor> = Vec::with_capacity(2 * stack.layers.len());
    let mut upstream = output_grad.clone();
    for (i, layer) in stack.layers.iter().enumerate().rev() {
        let pre = &tape.pre_activations[i];
        let input = &tape.inputs[i];
        let act = layer.activation();
        let mut dpre = upstream;
        if act != Activation::Identity {
            for (g, &p) in dpre.data_mut().iter_mut().zip(pre.data()) {
                *g *= act.derivative_mask(p);
            }
        }
        let (dw, db, dx) = match layer {
            Layer::Dense(d) => {
                let dw = matmul_tn(&dpre, input)?;
                let mut db = vec![0.0; d.outputs()];
                for r in 0..dpre.rows() {
                    for (acc, g) in db.iter_mut().zip(dpre.row(r)) {
                        *acc += g;
                    }
                }
                let dx = matmul(&dpre, &d.weight)?;
                (dw, Tensor::vector(db), dx)
            }
            Layer::Conv(c) => conv_backward(c, input, &dpre)?,
        };
        grads.push(db);
        grads.push(dw);
        upstream = dx;
    }
    grads.reverse();
    Ok(Backward {
        param_grads: grads,
        input_grad: upstream,
    })
}

fn conv_backward(c: &Conv2d, input: &Tensor, dpre: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let n = input.rows();
    let spatial = c.out_height() * c.out_width();
    let mut dw = Tensor::zeros(c.weight.shape());
    let mut db = vec![0.0; c.out_channels];
    let mut dx = Tensor::zeros(&[n, c.inputs()]);
    for s in 0..n {
        let cols = c.im2col(input.row(s));
        let g = dpre.row(s);
        // spatial × out_channels view of this sample's gradient
        let mut gy = Tensor::zeros(&[spatial, c.out_channels]);
        for ch in 0..c.out_channels {
            for p in 0..spatial {
                let v = g[ch * spatial + p];
                gy.set(p, ch, v);
                db[ch] += v;
            }
        }
        dw.axpy(1.0, &matmul_tn(&gy, &cols)?)?;
        let dcols = matmul(&gy, &c.weight)?;
        c.col2im_add(&dcols, dx.row_mut(s));
    }
    Ok((dw, Tensor::vector(db), dx))
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of one logit vector against a class index, with the
/// gradient `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(FedError::Validation(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    let loss = (log_sum - logits[label]).max(0.0);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch; the gradient is already divided by the
/// batch size.
pub fn batch_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rows() != labels.len() {
        return Err(FedError::Shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let (l, g) = softmax_cross_entropy(logits.row(r), y)?;
        total += l;
        for (dst, v) in grad.row_mut(r).iter_mut().zip(g) {
            *dst = v / n;
        }
    }
    Ok((total / n, grad))
}

/// `θ ← θ − lr·g` for every parameter pair.
pub fn sgd_step(params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(FedError::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.into_iter().zip(grads) {
        p.axpy(-lr, g)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng(seed);
        Tensor::matrix(
            n,
            d,
            (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_network_gives_zero_logits() {
        let mut r = rng(1);
        let mut stack = LayerStack::new(vec![
            Layer::Dense(Dense::init(4, 3, Activation::Relu, &mut r)),
            Layer::Dense(Dense::init(3, 2, Activation::Identity, &mut r)),
        ])
        .unwrap();
        for p in stack.params_mut() {
            p.data_mut().fill(0.0);
        }
        let (out, _) = nn_forward(&stack, &random_input(5, 4, 2)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let stack = LayerStack::new(vec![Layer::Dense(Dense {
            weight: Tensor::eye(3),
            bias: Tensor::zeros(&[3]),
            activation: Activation::Identity,
        })])
        .unwrap();
        let x = random_input(4, 3, 9);
        let (out, _) = nn_forward(&stack, &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn two_layer_forward_matches_manual_evaluation() {
        let mut r = rng(5);
        let l1 = Dense::init(3, 4, Activation::Relu, &mut r);
        let mut l2 = Dense::init(4, 2, Activation::Identity, &mut r);
        l2.bias = Tensor::vector(vec![0.1, -0.2]);
        let stack =
            LayerStack::new(vec![Layer::Dense(l1.clone()), Layer::Dense(l2.clone())]).unwrap();
        let x = random_input(2, 3, 6);
        let (out, _) = nn_forward(&stack, &x).unwrap();
        for s in 0..2 {
            let mut hidden = [0.0; 4];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = l1.bias.data()[j];
                for i in 0..3 {
                    acc += l1.weight.get(j, i) * x.get(s, i);
                }
                *h = acc.max(0.0);
            }
            for k in 0..2 {
                let mut acc = l2.bias.data()[k];
                for (j, h) in hidden.iter().enumerate() {
                    acc += l2.weight.get(k, j) * h;
                }
                assert!((out.get(s, k) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let stack = LayerStack::new(vec![Layer::Dense(Dense::init(
            3,
            2,
            Activation::Relu,
            &mut rng(0),
        ))])
        .unwrap();
        assert!(matches!(
            nn_forward(&stack, &Tensor::zeros(&[1, 4])),
            Err(FedError::Shape(_))
        ));
    }

    #[test]
    fn quadratic_loss_gradient_is_closed_form() {
        let mut r = rng(8);
        let layer = Dense::init(3, 2, Activation::Identity, &mut r);
        let stack = LayerStack::new(vec![Layer::Dense(layer.clone())]).unwrap();
        let x = random_input(1, 3, 10);
        let y = [0.3, -0.7];
        let (out, tape) = nn_forward(&stack, &x).unwrap();
        let resid: Vec<f64> = out.row(0).iter().zip(&y).map(|(o, t)| o - t).collect();
        let dl = Tensor::matrix(1, 2, resid.iter().map(|v| 2.0 * v).collect()).unwrap();
        let back = nn_backward(&stack, &tape, &dl).unwrap();
        for j in 0..2 {
            for i in 0..3 {
                let expected = 2.0 * resid[j] * x.get(0, i);
                assert!((back.param_grads[0].get(j, i) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let mut r = rng(4);
        let stack = LayerStack::new(vec![
            Layer::Dense(Dense::init(5, 4, Activation::Relu, &mut r)),
            Layer::Dense(Dense::init(4, 3, Activation::Identity, &mut r)),
        ])
        .unwrap();
        let (_, tape) = nn_forward(&stack, &random_input(3, 5, 1)).unwrap();
        let back = nn_backward(&stack, &tape, &Tensor::zeros(&[3, 3])).unwrap();
        assert!(back
            .param_grads
            .iter()
            .all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_mismatched_tape() {
        let mut r = rng(4);
        let a = LayerStack::new(vec![Layer::Dense(Dense::init(
            5,
            4,
            Activation::Relu,
            &mut r,
        ))])
        .unwrap();
        let b = LayerStack::new(vec![Layer::Dense(Dense::init(
            5,
            3,
            Activation::Relu,
            &mut r,
        ))])
        .unwrap();
        let (_, tape) = nn_forward(&a, &random_input(2, 5, 1)).unwrap();
        assert!(matches!(
            nn_backward(&b, &tape, &Tensor::zeros(&[2, 3])),
            Err(FedError::Validation(_))
        ));
        assert!(matches!(
            nn_backward(&a, &tape, &Tensor::zeros(&[3, 4])),
            Err(FedError::Validation(_))
        ));
    }

    /// Finite-difference check of every parameter of a stack.
    fn check_gradients(stack: &LayerStack, x: &Tensor, labels: &[usize]) {
        let (out, tape) = nn_forward(stack, x).unwrap();
        let (_, dl) = batch_cross_entropy(&out, labels).unwrap();
        let back = nn_backward(stack, &tape, &dl).unwrap();
        let loss = |s: &LayerStack| {
            let (o, _) = nn_forward(s, x).unwrap();
            batch_cross_entropy(&o, labels).unwrap().0
        };
        let eps = 1e-5;
        for (pi, g) in back.param_grads.iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = stack.clone();
                plus.params_mut()[pi].data_mut()[k] += eps;
                let mut minus = stack.clone();
                minus.params_mut()[pi].data_mut()[k] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = g.data()[k];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "param {pi}[{k}]: analytic {an} vs numeric {fd}"
                );
            }
        }
        // Input gradient too.
        let (out, tape) = nn_forward(stack, x).unwrap();
        let (_, dl) = batch_cross_entropy(&out, labels).unwrap();
        let dx = nn_backward(stack, &tape, &dl).unwrap().input_grad;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += eps;
            let mut xm = x.clone();
            xm.data_mut()[k] -= eps;
            let f = |t: &Tensor| {
                batch_cross_entropy(&nn_forward(stack, t).unwrap().0, labels)
                    .unwrap()
                    .0
            };
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            let an = dx.data()[k];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut r = rng(21);
        let stack = LayerStack::new(vec![
            Layer::Dense(Dense::init(6, 5, Activation::Relu, &mut r)),
            Layer::Dense(Dense::init(5, 4, Activation::Relu, &mut r)),
            Layer::Dense(Dense::init(4, 3, Activation::Identity, &mut r)),
        ])
        .unwrap();
        check_gradients(&stack, &random_input(4, 6, 22), &[0, 2, 1, 2]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut r = rng(31);
        let c1 = Conv2d::init(1, 2, 3, 1, 6, 6, Activation::Relu, &mut r).unwrap();
        let c2 = Conv2d::init(2, 3, 2, 2, 4, 4, Activation::Relu, &mut r).unwrap();
        let d = Dense::init(c2.outputs(), 3, Activation::Identity, &mut r);
        let stack =
            LayerStack::new(vec![Layer::Conv(c1), Layer::Conv(c2), Layer::Dense(d)]).unwrap();
        check_gradients(&stack, &random_input(2, 36, 32), &[1, 0]);
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut r = rng(2);
        let c = Conv2d::init(2, 1, 2, 1, 3, 3, Activation::Identity, &mut r).unwrap();
        let stack = LayerStack::new(vec![Layer::Conv(c.clone())]).unwrap();
        let x = random_input(1, 18, 3);
        let (out, _) = nn_forward(&stack, &x).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut acc = c.bias.data()[0];
                for ch in 0..2 {
                    for ky in 0..2 {
                        for kx in 0..2 {
                            acc += c.weight.get(0, ch * 4 + ky * 2 + kx)
                                * x.get(0, ch * 9 + (oy + ky) * 3 + ox + kx);
                        }
                    }
                }
                assert!((out.get(0, oy * 2 + ox) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_values() {
        let (l, g) = softmax_cross_entropy(&[0.5, 0.5, 0.5, 0.5], 1).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);

        let (l, _) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(l < 1e-12);

        let (l, g) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        let expected = (1.0 + (-1f64).exp() + (-2f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.4076).abs() < 1e-4);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);

        assert!(matches!(
            softmax_cross_entropy(&[1.0, 2.0], 2),
            Err(FedError::Validation(_))
        ));
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![2.0, -1.0]);
        sgd_step(vec![&mut p], &[g.clone()], 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0]);
        sgd_step(vec![&mut p], &[g], 0.5).unwrap();
        assert_eq!(p.data(), &[0.0, 2.5]);

        let mut r = rng(3);
        let mut q = random_input(3, 4, 7);
        let before = q.clone();
        let gr =
            Tensor::matrix(3, 4, (0..12).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        sgd_step(vec![&mut q], &[gr.clone()], 0.3).unwrap();
        for k in 0..12 {
            assert_eq!(q.data()[k], before.data()[k] - 0.3 * gr.data()[k]);
        }
        assert!(sgd_step(vec![&mut q], &[Tensor::zeros(&[2])], 0.1).is_err());
    }
}
