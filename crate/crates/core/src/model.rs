//! Layered classifiers: architecture descriptors, parameters, forward and
//! backward passes.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::SplitMix64;
use crate::{Error, Result, Tensor};

/// Version tag written into weight files.
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense { out: usize },
    Relu,
    /// Valid-padding convolution over height-width-channel input.
    Conv2d { filters: usize, kernel: usize, stride: usize },
    /// Non-overlapping average pooling; trailing rows/columns that do not fill a
    /// window are dropped.
    AvgPool2d { size: usize },
    Flatten,
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::Conv2d { .. } => "conv2d",
            Layer::AvgPool2d { .. } => "avg_pool2d",
            Layer::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `(height, width, channels)`.
    pub input_dims: [usize; 3],
    pub layers: Vec<Layer>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    fn len(self) -> usize {
        match self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }
}

/// Resolved per-layer shapes and parameter slots.
#[derive(Debug, Clone)]
struct Plan {
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    shapes: Vec<Shape>,
    /// Index of the layer's weight tensor in `ModelParams::weights`; bias follows it.
    param_slot: Vec<Option<usize>>,
}

fn layer_name(i: usize, layer: &Layer) -> String {
    format!("{i} ({})", layer.kind())
}

impl ModelSpec {
    /// Flatten, then dense layers of the given widths with ReLU between them.
    pub fn mlp(input_dims: [usize; 3], hidden: &[usize], num_classes: usize) -> Self {
        let mut layers = vec![Layer::Flatten];
        for &width in hidden {
            layers.push(Layer::Dense { out: width });
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Dense { out: num_classes });
        Self { input_dims, layers, num_classes }
    }

    /// The default hidden-model architecture: 64 and 32 unit hidden layers.
    pub fn default_mlp(input_dims: [usize; 3], num_classes: usize) -> Self {
        Self::mlp(input_dims, &[64, 32], num_classes)
    }

    /// A small LeNet-style network: one 5×5 convolution, average pooling, two
    /// dense layers.
    pub fn lenet(input_dims: [usize; 3], num_classes: usize) -> Self {
        Self {
            input_dims,
            layers: vec![
                Layer::Conv2d { filters: 6, kernel: 5, stride: 1 },
                Layer::Relu,
                Layer::AvgPool2d { size: 2 },
                Layer::Flatten,
                Layer::Dense { out: 32 },
                Layer::Relu,
                Layer::Dense { out: num_classes },
            ],
            num_classes,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Shapes of every parameter tensor in storage order (weight, then bias, per
    /// parameterized layer).
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let plan = self.plan()?;
        let mut shapes = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match (*layer, plan.shapes[i]) {
                (Layer::Dense { out }, input) => {
                    shapes.push(vec![input.len(), out]);
                    shapes.push(vec![out]);
                }
                (Layer::Conv2d { filters, kernel, .. }, Shape::Spatial { c, .. }) => {
                    shapes.push(vec![kernel, kernel, c, filters]);
                    shapes.push(vec![filters]);
                }
                _ => {}
            }
        }
        Ok(shapes)
    }

    fn plan(&self) -> Result<Plan> {
        let [h, w, c] = self.input_dims;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Dimension {
                layer: "input".into(),
                message: format!("input dims must be >= 1, got {:?}", self.input_dims),
            });
        }
        if self.num_classes < 2 {
            return Err(Error::Input(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        let mut shape = Shape::Spatial { h, w, c };
        let mut shapes = vec![shape];
        let mut param_slot = Vec::with_capacity(self.layers.len());
        let mut next_slot = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let dim_err = |message: String| Error::Dimension { layer: layer_name(i, layer), message };
            let mut slot = None;
            shape = match (*layer, shape) {
                (Layer::Dense { out }, Shape::Flat(_)) => {
                    if out == 0 {
                        return Err(dim_err("dense layer needs out >= 1".into()));
                    }
                    slot = Some(next_slot);
                    next_slot += 2;
                    Shape::Flat(out)
                }
                (Layer::Dense { .. }, Shape::Spatial { .. }) => {
                    return Err(dim_err("dense layer needs flattened input; add a flatten layer".into()))
                }
                (Layer::Relu, s) => s,
                (Layer::Flatten, s) => Shape::Flat(s.len()),
                (Layer::Conv2d { filters, kernel, stride }, Shape::Spatial { h, w, .. }) => {
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(dim_err("filters, kernel and stride must be >= 1".into()));
                    }
                    if kernel > h || kernel > w {
                        return Err(dim_err(format!("kernel {kernel} larger than input {h}x{w}")));
                    }
                    slot = Some(next_slot);
                    next_slot += 2;
                    Shape::Spatial {
                        h: (h - kernel) / stride + 1,
                        w: (w - kernel) / stride + 1,
                        c: filters,
                    }
                }
                (Layer::AvgPool2d { size }, Shape::Spatial { h, w, c }) => {
                    if size == 0 || size > h || size > w {
                        return Err(dim_err(format!("pool size {size} does not fit input {h}x{w}")));
                    }
                    Shape::Spatial { h: h / size, w: w / size, c }
                }
                (Layer::Conv2d { .. } | Layer::AvgPool2d { .. }, Shape::Flat(_)) => {
                    return Err(dim_err("spatial layer after flatten".into()))
                }
            };
            param_slot.push(slot);
            shapes.push(shape);
        }
        match shape {
            Shape::Flat(n) if n == self.num_classes => Ok(Plan { shapes, param_slot }),
            other => Err(Error::Dimension {
                layer: self
                    .layers
                    .last()
                    .map(|l| layer_name(self.layers.len() - 1, l))
                    .unwrap_or_else(|| "output".into()),
                message: format!(
                    "model must end in {} flat logits, got {} values{}",
                    self.num_classes,
                    other.len(),
                    if matches!(other, Shape::Spatial { .. }) { " (not flattened)" } else { "" }
                ),
            }),
        }
    }
}

/// Model weights together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub weights: Vec<Tensor>,
    pub version: u32,
}

/// Loss plus gradients with respect to the input batch and, optionally, every
/// parameter tensor.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub input: Tensor,
    pub params: Option<Vec<Tensor>>,
}

impl ModelParams {
    pub fn new(spec: ModelSpec, weights: Vec<Tensor>) -> Result<Self> {
        let expected = spec.param_shapes()?;
        if expected.len() != weights.len() {
            return Err(Error::Shape(format!(
                "spec needs {} parameter tensors, got {}",
                expected.len(),
                weights.len()
            )));
        }
        for (i, (shape, t)) in expected.iter().zip(&weights).enumerate() {
            if shape.as_slice() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter tensor {i} has shape {:?}, spec needs {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::Numeric(format!("parameter tensor {i} has non-finite values")));
            }
        }
        Ok(Self { spec, weights, version: WEIGHTS_VERSION })
    }

    /// He initialization: weights ~ N(0, 2/fan_in), biases zero.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::derive(seed, 0x1417);
        let shapes = spec.param_shapes()?;
        let mut weights = Vec::with_capacity(shapes.len());
        for (i, shape) in shapes.into_iter().enumerate() {
            let len: usize = shape.iter().product();
            let data = if i % 2 == 1 {
                vec![0.0; len]
            } else {
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let scale = (2.0 / fan_in as f64).sqrt();
                (0..len).map(|_| (rng.normal() * scale) as f32).collect()
            };
            weights.push(Tensor::new(shape, data)?);
        }
        Self::new(spec.clone(), weights)
    }

    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let weights = spec
            .param_shapes()?
            .into_iter()
            .map(Tensor::zeros)
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.clone(), weights)
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_len()
    }

    /// Logits for an `n × input_len` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let plan = self.spec.plan()?;
        let n = self.check_batch(batch)?;
        let mut act = batch.data().to_vec();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            act = self.layer_forward(&plan, i, layer, &act, n);
        }
        let logits = Tensor::new(vec![n, self.spec.num_classes], act)?;
        if !logits.all_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }

    pub fn predict_probs(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.forward(batch)?))
    }

    pub fn predict_labels(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward(batch)?.iter_rows().map(argmax).collect())
    }

    /// Fraction of rows whose arg-max logit equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        self.accuracy_on(&data.images, &data.labels)
    }

    pub fn accuracy_on(&self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let predicted = self.predict_labels(images)?;
        if predicted.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} images but {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Mean softmax cross-entropy over the batch and its gradient with respect to
    /// the input pixels.
    pub fn loss_and_input_gradient(&self, x: &Tensor, y: &[usize]) -> Result<(f64, Tensor)> {
        let g = self.gradients(x, y, false)?;
        Ok((g.loss, g.input))
    }

    pub fn gradients(&self, x: &Tensor, y: &[usize], with_params: bool) -> Result<Gradients> {
        let plan = self.spec.plan()?;
        let n = self.check_batch(x)?;
        if y.len() != n {
            return Err(Error::Input(format!("{n} images but {} labels", y.len())));
        }
        let classes = self.spec.num_classes;
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }

        let mut inputs: Vec<Vec<f32>> = Vec::with_capacity(self.spec.layers.len());
        let mut act = x.data().to_vec();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let out = self.layer_forward(&plan, i, layer, &act, n);
            inputs.push(std::mem::replace(&mut act, out));
        }
        let logits = act;

        let mut loss = 0.0f64;
        let mut delta = vec![0.0f32; n * classes];
        let inv_n = 1.0 / n as f32;
        for r in 0..n {
            let row = &logits[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let sum64: f64 = row.iter().map(|&l| ((l - max) as f64).exp()).sum();
            let sum32: f32 = row.iter().map(|&l| (l - max).exp()).sum();
            loss += sum64.ln() - (row[y[r]] - max) as f64;
            for (j, &l) in row.iter().enumerate() {
                let p = (l - max).exp() / sum32;
                let target = if j == y[r] { 1.0 } else { 0.0 };
                delta[r * classes + j] = (p - target) * inv_n;
            }
        }
        loss /= n as f64;
        if !loss.is_finite() || delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Numeric("non-finite loss or logit gradient".into()));
        }

        let mut param_grads: Option<Vec<Vec<f32>>> =
            with_params.then(|| self.weights.iter().map(|t| vec![0.0; t.len()]).collect());
        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            delta = self.layer_backward(&plan, i, layer, &inputs[i], &delta, n, param_grads.as_mut());
        }

        let input = Tensor::new(x.shape().to_vec(), delta)?;
        if !input.all_finite() {
            return Err(Error::Numeric("non-finite input gradient".into()));
        }
        let params = match param_grads {
            Some(grads) => Some(
                grads
                    .into_iter()
                    .zip(&self.weights)
                    .map(|(g, w)| Tensor::new(w.shape().to_vec(), g))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(Gradients { loss, input, params })
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let width = self.spec.input_len();
        if batch.row_len() != width {
            let layer = self
                .spec
                .layers
                .first()
                .map(|l| layer_name(0, l))
                .unwrap_or_else(|| "input".into());
            return Err(Error::Dimension {
                layer,
                message: format!("batch rows have {} values, model expects {width}", batch.row_len()),
            });
        }
        Ok(batch.rows())
    }

    fn layer_forward(&self, plan: &Plan, i: usize, layer: &Layer, input: &[f32], n: usize) -> Vec<f32> {
        let in_shape = plan.shapes[i];
        let out_len = plan.shapes[i + 1].len();
        match *layer {
            Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            Layer::Flatten => input.to_vec(),
            Layer::Dense { out } => {
                let slot = plan.param_slot[i].expect("dense has params");
                let w = self.weights[slot].data();
                let b = self.weights[slot + 1].data();
                let in_len = in_shape.len();
                let mut result = Vec::with_capacity(n * out);
                for r in 0..n {
                    let x = &input[r * in_len..(r + 1) * in_len];
                    let mut acc = b.to_vec();
                    for (k, &a) in x.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let w_row = &w[k * out..(k + 1) * out];
                        for (o, &wv) in acc.iter_mut().zip(w_row) {
                            *o += a * wv;
                        }
                    }
                    result.extend_from_slice(&acc);
                }
                result
            }
            Layer::Conv2d { filters, kernel, stride } => {
                let Shape::Spatial { h, w, c } = in_shape else { unreachable!("validated") };
                let Shape::Spatial { h: oh, w: ow, .. } = plan.shapes[i + 1] else { unreachable!() };
                let slot = plan.param_slot[i].expect("conv has params");
                let wt = self.weights[slot].data();
                let b = self.weights[slot + 1].data();
                let in_len = h * w * c;
                let mut result = vec![0.0f32; n * out_len];
                for r in 0..n {
                    let x = &input[r * in_len..(r + 1) * in_len];
                    let out = &mut result[r * out_len..(r + 1) * out_len];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let acc = &mut out[(oy * ow + ox) * filters..(oy * ow + ox + 1) * filters];
                            acc.copy_from_slice(b);
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = oy * stride + ky;
                                    let ix = ox * stride + kx;
                                    for ch in 0..c {
                                        let a = x[(iy * w + ix) * c + ch];
                                        let base = ((ky * kernel + kx) * c + ch) * filters;
                                        for (f, o) in acc.iter_mut().enumerate() {
                                            *o += a * wt[base + f];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                result
            }
            Layer::AvgPool2d { size } => {
                let Shape::Spatial { w, c, .. } = in_shape else { unreachable!("validated") };
                let Shape::Spatial { h: oh, w: ow, .. } = plan.shapes[i + 1] else { unreachable!() };
                let in_len = in_shape.len();
                let scale = 1.0 / (size * size) as f32;
                let mut result = vec![0.0f32; n * out_len];
                for r in 0..n {
                    let x = &input[r * in_len..(r + 1) * in_len];
                    let out = &mut result[r * out_len..(r + 1) * out_len];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                let mut s = 0.0f32;
                                for dy in 0..size {
                                    for dx in 0..size {
                                        s += x[((oy * size + dy) * w + ox * size + dx) * c + ch];
                                    }
                                }
                                out[(oy * ow + ox) * c + ch] = s * scale;
                            }
                        }
                    }
                }
                result
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        plan: &Plan,
        i: usize,
        layer: &Layer,
        input: &[f32],
        grad_out: &[f32],
        n: usize,
        param_grads: Option<&mut Vec<Vec<f32>>>,
    ) -> Vec<f32> {
        let in_shape = plan.shapes[i];
        let in_len = in_shape.len();
        let out_len = plan.shapes[i + 1].len();
        match *layer {
            Layer::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::Flatten => grad_out.to_vec(),
            Layer::Dense { out } => {
                let slot = plan.param_slot[i].expect("dense has params");
                let w = self.weights[slot].data();
                let mut grad_in = vec![0.0f32; n * in_len];
                for r in 0..n {
                    let go = &grad_out[r * out..(r + 1) * out];
                    let gi = &mut grad_in[r * in_len..(r + 1) * in_len];
                    for (k, g) in gi.iter_mut().enumerate() {
                        let w_row = &w[k * out..(k + 1) * out];
                        *g = w_row.iter().zip(go).map(|(a, b)| a * b).sum();
                    }
                }
                if let Some(grads) = param_grads {
                    let (gw, gb) = split_pair(grads, slot);
                    for r in 0..n {
                        let x = &input[r * in_len..(r + 1) * in_len];
                        let go = &grad_out[r * out..(r + 1) * out];
                        for (k, &a) in x.iter().enumerate() {
                            if a == 0.0 {
                                continue;
                            }
                            for (dst, &g) in gw[k * out..(k + 1) * out].iter_mut().zip(go) {
                                *dst += a * g;
                            }
                        }
                        for (dst, &g) in gb.iter_mut().zip(go) {
                            *dst += g;
                        }
                    }
                }
                grad_in
            }
            Layer::Conv2d { filters, kernel, stride } => {
                let Shape::Spatial { w, c, .. } = in_shape else { unreachable!("validated") };
                let Shape::Spatial { h: oh, w: ow, .. } = plan.shapes[i + 1] else { unreachable!() };
                let slot = plan.param_slot[i].expect("conv has params");
                let wt = self.weights[slot].data();
                let mut grad_in = vec![0.0f32; n * in_len];
                let mut grads = param_grads;
                for r in 0..n {
                    let x = &input[r * in_len..(r + 1) * in_len];
                    let go = &grad_out[r * out_len..(r + 1) * out_len];
                    let gi = &mut grad_in[r * in_len..(r + 1) * in_len];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = &go[(oy * ow + ox) * filters..(oy * ow + ox + 1) * filters];
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = oy * stride + ky;
                                    let ix = ox * stride + kx;
                                    for ch in 0..c {
                                        let base = ((ky * kernel + kx) * c + ch) * filters;
                                        let idx = (iy * w + ix) * c + ch;
                                        gi[idx] += g.iter().zip(&wt[base..base + filters]).map(|(a, b)| a * b).sum::<f32>();
                                        if let Some(grads) = grads.as_deref_mut() {
                                            let a = x[idx];
                                            for (dst, &gv) in grads[slot][base..base + filters].iter_mut().zip(g) {
                                                *dst += a * gv;
                                            }
                                        }
                                    }
                                }
                            }
                            if let Some(grads) = grads.as_deref_mut() {
                                for (dst, &gv) in grads[slot + 1].iter_mut().zip(g) {
                                    *dst += gv;
                                }
                            }
                        }
                    }
                }
                grad_in
            }
            Layer::AvgPool2d { size } => {
                let Shape::Spatial { w, c, .. } = in_shape else { unreachable!("validated") };
                let Shape::Spatial { h: oh, w: ow, .. } = plan.shapes[i + 1] else { unreachable!() };
                let scale = 1.0 / (size * size) as f32;
                let mut grad_in = vec![0.0f32; n * in_len];
                for r in 0..n {
                    let go = &grad_out[r * out_len..(r + 1) * out_len];
                    let gi = &mut grad_in[r * in_len..(r + 1) * in_len];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                let g = go[(oy * ow + ox) * c + ch] * scale;
                                for dy in 0..size {
                                    for dx in 0..size {
                                        gi[((oy * size + dy) * w + ox * size + dx) * c + ch] += g;
                                    }
                                }
                            }
                        }
                    }
                }
                grad_in
            }
        }
    }
}

fn split_pair(grads: &mut [Vec<f32>], slot: usize) -> (&mut Vec<f32>, &mut Vec<f32>) {
    let (head, tail) = grads.split_at_mut(slot + 1);
    (&mut head[slot], &mut tail[0])
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let width = logits.row_len();
    for row in out.data_mut().chunks_exact_mut(width) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
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

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
