use rand::Rng;

use super::layers::{self, ConvGeom, PoolGeom, KERNEL, POOL};
use super::{Architecture, Batch, ModelSpec, ParamVector};
use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Dense {
        inp: usize,
        out: usize,
        offset: usize,
    },
    Conv {
        geom: ConvGeom,
        offset: usize,
    },
    Relu,
    MaxPool(PoolGeom),
}

impl Layer {
    /// (weight range start, weight len, bias len) for parameterized layers.
    fn param_block(&self) -> Option<(usize, usize, usize)> {
        match self {
            Layer::Dense { inp, out, offset } => Some((*offset, inp * out, *out)),
            Layer::Conv { geom, offset } => Some((*offset, geom.weight_len(), geom.out_c)),
            _ => None,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match self {
            Layer::Dense { inp, out, .. } => (*inp, *out),
            Layer::Conv { geom, .. } => (geom.in_c * KERNEL * KERNEL, geom.out_c * KERNEL * KERNEL),
            _ => (0, 0),
        }
    }
}

/// A spec compiled into a layer list with parameter offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_len: usize,
    classes: usize,
    param_count: usize,
}

/// Intermediate values a backward pass needs, one entry per layer.
enum Saved {
    Input(Vec<f64>),
    Cols(Vec<f64>),
    Activated(Vec<f64>),
    Argmax(Vec<usize>),
}

/// Row-major `(rows, classes)` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub classes: usize,
    pub values: Vec<f64>,
}

impl Logits {
    pub fn rows(&self) -> usize {
        self.values.len() / self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    /// Index of the largest score; the smallest class id wins ties.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        best
    }
}

impl Network {
    pub fn compile(spec: &ModelSpec) -> Result<Self> {
        if spec.classes == 0 {
            return Err(Error::Invalid("class count must be positive".into()));
        }
        let input_len = spec.input.len();
        if input_len == 0 {
            return Err(Error::Invalid("input shape has no elements".into()));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        fn dense(layers: &mut Vec<Layer>, offset: &mut usize, inp: usize, out: usize) {
            layers.push(Layer::Dense {
                inp,
                out,
                offset: *offset,
            });
            *offset += inp * out + out;
        }
        match &spec.architecture {
            Architecture::LogReg => dense(&mut layers, &mut offset, input_len, spec.classes),
            Architecture::Mlp { hidden } => {
                let mut width = input_len;
                for &h in hidden {
                    if h == 0 {
                        return Err(Error::Invalid("hidden layer width must be positive".into()));
                    }
                    dense(&mut layers, &mut offset, width, h);
                    layers.push(Layer::Relu);
                    width = h;
                }
                dense(&mut layers, &mut offset, width, spec.classes);
            }
            Architecture::Cnn {
                conv1,
                conv2,
                dense: hidden,
            } => {
                if *conv1 == 0 || *conv2 == 0 || *hidden == 0 {
                    return Err(Error::Invalid("CNN layer sizes must be positive".into()));
                }
                let (mut c, mut h, mut w) =
                    (spec.input.channels, spec.input.height, spec.input.width);
                for out_c in [*conv1, *conv2] {
                    if h < KERNEL + 1 || w < KERNEL + 1 {
                        return Err(Error::Invalid(format!(
                            "input {}x{} too small for conv+pool stack",
                            spec.input.height, spec.input.width
                        )));
                    }
                    let geom = ConvGeom {
                        in_c: c,
                        out_c,
                        in_h: h,
                        in_w: w,
                    };
                    let (oh, ow) = (geom.out_h(), geom.out_w());
                    let len = geom.weight_len() + out_c;
                    layers.push(Layer::Conv { geom, offset });
                    offset += len;
                    layers.push(Layer::Relu);
                    layers.push(Layer::MaxPool(PoolGeom {
                        c: out_c,
                        in_h: oh,
                        in_w: ow,
                    }));
                    c = out_c;
                    h = oh / POOL;
                    w = ow / POOL;
                }
                let flat = c * h * w;
                dense(&mut layers, &mut offset, flat, *hidden);
                layers.push(Layer::Relu);
                dense(&mut layers, &mut offset, *hidden, spec.classes);
            }
        }
        Ok(Self {
            layers,
            input_len,
            classes: spec.classes,
            param_count: offset,
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Width of the activation entering the first dense layer.
    pub fn flatten_width(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Dense { inp, .. } => Some(*inp),
                _ => None,
            })
            .unwrap_or(self.input_len)
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = rng_from(seed);
        let mut params = vec![0.0; self.param_count];
        for layer in &self.layers {
            if let Some((start, wlen, _)) = layer.param_block() {
                let (fan_in, fan_out) = layer.fans();
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut params[start..start + wlen] {
                    *v = rng.random_range(-a..a);
                }
            }
        }
        ParamVector::new(params)
    }

    fn check(&self, params: &ParamVector, batch: &Batch) -> Result<()> {
        params.check_len(self.param_count)?;
        if batch.is_empty() {
            return Err(Error::Empty("batch has no samples".into()));
        }
        if batch.inputs.len() != batch.len() * self.input_len {
            return Err(Error::Shape(format!(
                "batch carries {} values per sample, model expects {}",
                batch.inputs.len() / batch.len(),
                self.input_len
            )));
        }
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Shape(format!(
                "label {bad} outside [0, {})",
                self.classes
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        params: &[f64],
        inputs: &[f64],
        n: usize,
        tape: Option<&mut Vec<Saved>>,
    ) -> Vec<f64> {
        let mut tape = tape;
        let mut x = inputs.to_vec();
        for layer in &self.layers {
            x = match layer {
                Layer::Dense { inp, out, offset } => {
                    let w = &params[*offset..offset + inp * out];
                    let b = &params[offset + inp * out..offset + inp * out + out];
                    let y = layers::dense_forward(*inp, *out, w, b, &x, n);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Saved::Input(x));
                    }
                    y
                }
                Layer::Conv { geom, offset } => {
                    let wl = geom.weight_len();
                    let w = &params[*offset..offset + wl];
                    let b = &params[offset + wl..offset + wl + geom.out_c];
                    let (y, cols) = layers::conv_forward(geom, w, b, &x, n);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Saved::Cols(cols));
                    }
                    y
                }
                Layer::Relu => {
                    layers::relu_forward(&mut x);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Saved::Activated(x.clone()));
                    }
                    x
                }
                Layer::MaxPool(geom) => {
                    let (y, arg) = layers::pool_forward(geom, &x, n);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Saved::Argmax(arg));
                    }
                    y
                }
            };
        }
        x
    }

    pub fn forward(&self, params: &ParamVector, batch: &Batch) -> Result<Logits> {
        self.check(params, batch)?;
        Ok(Logits {
            classes: self.classes,
            values: self.run(params, &batch.inputs, batch.len(), None),
        })
    }

    /// Logits for raw rows without label checks; used by evaluation.
    pub(crate) fn predict_rows(&self, params: &[f64], inputs: &[f64]) -> Logits {
        let n = inputs.len() / self.input_len;
        Logits {
            classes: self.classes,
            values: self.run(params, inputs, n, None),
        }
    }

    /// Mean softmax cross-entropy and its gradient.
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check(params, batch)?;
        let n = batch.len();
        let mut tape = Vec::with_capacity(self.layers.len());
        let logits = self.run(params, &batch.inputs, n, Some(&mut tape));

        let k = self.classes;
        let mut loss = 0.0;
        let mut delta = vec![0.0; n * k];
        for (i, &label) in batch.labels.iter().enumerate() {
            let row = &logits[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[label];
            for c in 0..k {
                delta[i * k + c] = (row[c] - log_z).exp() / n as f64;
            }
            delta[i * k + label] -= 1.0 / n as f64;
        }
        loss /= n as f64;

        let mut grad = vec![0.0; self.param_count];
        let mut dout = delta;
        for (idx, (layer, saved)) in self.layers.iter().zip(tape).enumerate().rev() {
            let want_dx = idx > 0;
            dout = match (layer, saved) {
                (Layer::Dense { inp, out, offset }, Saved::Input(x)) => {
                    let wl = inp * out;
                    let (gw, gb) = grad[*offset..offset + wl + out].split_at_mut(wl);
                    let w = &params[*offset..offset + wl];
                    match layers::dense_backward(*inp, *out, w, &x, &dout, n, gw, gb, want_dx) {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::Conv { geom, offset }, Saved::Cols(cols)) => {
                    let wl = geom.weight_len();
                    let (gw, gb) = grad[*offset..offset + wl + geom.out_c].split_at_mut(wl);
                    let w = &params[*offset..offset + wl];
                    match layers::conv_backward(geom, w, &cols, &dout, n, gw, gb, want_dx) {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::Relu, Saved::Activated(a)) => {
                    layers::relu_backward(&a, &mut dout);
                    dout
                }
                (Layer::MaxPool(geom), Saved::Argmax(arg)) => {
                    layers::pool_backward(geom, &arg, &dout, n)
                }
                _ => unreachable!("tape entry does not match layer"),
            };
        }
        Ok((loss, ParamVector::new(grad)))
    }
}

/// Xavier-uniform weights, zero biases; deterministic in `(spec, seed)`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    Ok(spec.network()?.init(seed))
}

pub fn forward(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Logits> {
    spec.network()?.forward(params, batch)
}

pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    spec.network()?.loss_and_grad(params, batch)
}
