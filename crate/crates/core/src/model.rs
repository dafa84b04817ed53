//! Fully connected softmax classifier trained by minibatch SGD with momentum.
//!
//! Parameters live in one flat buffer: for each layer, the `inputs × outputs`
//! weight matrix (row-major, so `z = x·W + b`) followed by the bias. The
//! matrix kernels accumulate every output in a fixed order that does not
//! depend on the batch size, so a row evaluated alone and inside a batch gives
//! bit-identical logits.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::{loss_and_grad_logits, LossConfig, Scratch, Target};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn id(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::InvalidCheckpoint(format!("unknown activation id {other}"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// `U(-s, s)` with `s = √(6 / (fan_in + fan_out))`; zero biases.
    #[default]
    GlorotUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, class count.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
    #[serde(default)]
    pub init: InitScheme,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, init_seed: u64) -> Self {
        Self {
            layer_sizes,
            activation,
            init_seed,
            init: InitScheme::GlorotUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_sizes(&self.layer_sizes)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidConfig(
            "an MLP needs at least an input and an output width".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!("zero layer width in {sizes:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Weights, biases and the number of SGD steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    step: u64,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelState {
    pub fn init(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(spec.init_seed);
        let mut params = Vec::with_capacity(param_count(&spec.layer_sizes));
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            match spec.init {
                InitScheme::GlorotUniform => {
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-s..s)));
                    params.extend(std::iter::repeat_n(0.0, fan_out));
                }
            }
        }
        Ok(Self {
            layer_sizes: spec.layer_sizes.clone(),
            activation: spec.activation,
            params,
            step: 0,
        })
    }

    /// All parameters zero.
    pub fn zeros(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        validate_sizes(&layer_sizes)?;
        let params = vec![0.0; param_count(&layer_sizes)];
        Ok(Self {
            layer_sizes,
            activation,
            params,
            step: 0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated sizes")
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Flat parameter buffer (per layer: weights row-major, then bias).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "feature width vs model input",
                expected: self.input_dim(),
                actual: width,
            });
        }
        Ok(())
    }

    /// Logits for one example.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x.len())?;
        self.forward_batch(x, 1)
    }

    /// Logits for `n` row-major examples, `n × k`.
    pub fn forward_batch(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        if x.len() != n * self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "batch buffer length vs n·input width",
                expected: n * self.input_dim(),
                actual: x.len(),
            });
        }
        let mut current = x.to_vec();
        let last = self.layer_sizes.len() - 2;
        for (l, (off, inp, out)) in self.layers().enumerate() {
            let mut z = Vec::new();
            affine(&current, n, &self.params[off..off + inp * out + out], inp, out, &mut z);
            if l != last {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            current = z;
        }
        Ok(current)
    }

    /// Argmax of the logits; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn predict_dataset(&self, data: &LabeledDataset) -> Result<Vec<usize>> {
        self.check_width(data.dim())?;
        const CHUNK: usize = 256;
        let d = data.dim();
        let k = self.num_classes();
        let mut preds = Vec::with_capacity(data.len());
        for start in (0..data.len()).step_by(CHUNK) {
            let n = CHUNK.min(data.len() - start);
            let logits = self.forward_batch(&data.features()[start * d..(start + n) * d], n)?;
            preds.extend(logits.chunks(k).map(argmax));
        }
        Ok(preds)
    }

    /// Mean loss over the rows of `x` and its gradient with respect to every
    /// parameter (same layout as [`ModelState::params`]).
    pub fn loss_and_gradient(
        &self,
        x: &[f64],
        labels: &[usize],
        loss: &LossConfig,
    ) -> Result<(f64, Vec<f64>)> {
        let n = labels.len();
        if x.len() != n * self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "batch buffer length vs n·input width",
                expected: n * self.input_dim(),
                actual: x.len(),
            });
        }
        self.check_loss(loss)?;
        let mut ws = Workspace::new(self);
        let mut grad = vec![0.0; self.params.len()];
        let mut per_example = vec![0.0; n];
        self.backprop(x, labels, loss, &mut ws, &mut grad, &mut per_example);
        let total: f64 = per_example.iter().sum();
        Ok((total / n as f64, grad))
    }

    fn check_loss(&self, loss: &LossConfig) -> Result<()> {
        if loss.k() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "loss classes vs model output width",
                expected: self.num_classes(),
                actual: loss.k(),
            });
        }
        Ok(())
    }

    /// Writes the mean-loss gradient into `grad` and per-example losses into
    /// `losses`.
    fn backprop(
        &self,
        x: &[f64],
        labels: &[usize],
        loss: &LossConfig,
        ws: &mut Workspace,
        grad: &mut [f64],
        losses: &mut [f64],
    ) {
        let n = labels.len();
        let n_layers = self.layer_sizes.len() - 1;
        let layers: Vec<(usize, usize, usize)> = self.layers().collect();

        for (l, &(off, inp, out)) in layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { x } else { &ws.acts[l - 1] };
            let mut z = std::mem::take(&mut ws.pre[l]);
            affine(input, n, &self.params[off..off + inp * out + out], inp, out, &mut z);
            if l + 1 != n_layers {
                let a = &mut ws.acts[l];
                a.clear();
                a.extend(z.iter().map(|&v| self.activation.apply(v)));
            }
            ws.pre[l] = z;
        }

        let k = self.num_classes();
        let scale = 1.0 / n as f64;
        let logits = &ws.pre[n_layers - 1];
        let delta = &mut ws.delta;
        delta.clear();
        delta.resize(n * k, 0.0);
        for r in 0..n {
            let row = &logits[r * k..(r + 1) * k];
            let g = &mut delta[r * k..(r + 1) * k];
            losses[r] = loss_and_grad_logits(row, &Target::OneHot(labels[r]), loss, g, &mut ws.scratch);
            for v in g.iter_mut() {
                *v *= scale;
            }
        }

        grad.fill(0.0);
        for l in (0..n_layers).rev() {
            let (off, inp, out) = layers[l];
            let input: &[f64] = if l == 0 { x } else { &ws.acts[l - 1] };
            let (gw, gb) = grad[off..off + inp * out + out].split_at_mut(inp * out);
            for r in 0..n {
                let d = &ws.delta[r * out..(r + 1) * out];
                for (b, &dv) in gb.iter_mut().zip(d) {
                    *b += dv;
                }
                let a_row = &input[r * inp..(r + 1) * inp];
                for (p, &a) in a_row.iter().enumerate() {
                    if a != 0.0 {
                        for (w, &dv) in gw[p * out..(p + 1) * out].iter_mut().zip(d) {
                            *w += a * dv;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + inp * out];
            let z_prev = &ws.pre[l - 1];
            let a_prev = &ws.acts[l - 1];
            let next = &mut ws.delta_prev;
            next.clear();
            next.resize(n * inp, 0.0);
            for r in 0..n {
                let d = &ws.delta[r * out..(r + 1) * out];
                for p in 0..inp {
                    let idx = r * inp + p;
                    let dz = self.activation.derivative(z_prev[idx], a_prev[idx]);
                    if dz != 0.0 {
                        let back: f64 = weights[p * out..(p + 1) * out]
                            .iter()
                            .zip(d)
                            .map(|(w, dv)| w * dv)
                            .sum();
                        next[idx] = back * dz;
                    }
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.activation.id().to_le_bytes());
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &w in &self.layer_sizes {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        for &p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::InvalidCheckpoint("bad magic".into()));
        }
        let version = cursor.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::InvalidCheckpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let activation = Activation::from_id(cursor.u32()?)?;
        let n_widths = cursor.u32()? as usize;
        let layer_sizes = (0..n_widths)
            .map(|_| cursor.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        validate_sizes(&layer_sizes).map_err(|e| Error::InvalidCheckpoint(e.to_string()))?;
        let step = u64::from_le_bytes(cursor.take(8)?.try_into().expect("8 bytes"));
        let count = param_count(&layer_sizes);
        let params = (0..count)
            .map(|_| cursor.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect::<Result<Vec<_>>>()?;
        if cursor.pos != bytes.len() {
            return Err(Error::InvalidCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - cursor.pos
            )));
        }
        Ok(Self {
            layer_sizes,
            activation,
            params,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CSMLPCKP";
const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::InvalidCheckpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

struct Workspace {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    scratch: Scratch,
}

impl Workspace {
    fn new(model: &ModelState) -> Self {
        let n_layers = model.layer_sizes.len() - 1;
        Self {
            pre: vec![Vec::new(); n_layers],
            acts: vec![Vec::new(); n_layers.saturating_sub(1)],
            delta: Vec::new(),
            delta_prev: Vec::new(),
            scratch: Scratch::new(model.num_classes()),
        }
    }
}

/// `z = x·W + b` for `n` rows. `layer` holds `W` (`inp × out`, row-major)
/// followed by `b`.
fn affine(x: &[f64], n: usize, layer: &[f64], inp: usize, out: usize, z: &mut Vec<f64>) {
    let (w, b) = layer.split_at(inp * out);
    z.clear();
    z.reserve(n * out);
    for r in 0..n {
        let start = z.len();
        z.extend_from_slice(b);
        let zr = &mut z[start..];
        for (p, &xv) in x[r * inp..(r + 1) * inp].iter().enumerate() {
            if xv != 0.0 {
                for (acc, &wv) in zr.iter_mut().zip(&w[p * out..(p + 1) * out]) {
                    *acc += xv * wv;
                }
            }
        }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-epoch mean training loss (mean over examples, parameters as they were
/// when each example's batch was processed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
}

fn check_dataset(state: &ModelState, data: &LabeledDataset, loss: &LossConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }
    state.check_width(data.dim())?;
    if state.num_classes() != data.k() {
        return Err(Error::DimensionMismatch {
            what: "model output width vs dataset classes",
            expected: data.k(),
            actual: state.num_classes(),
        });
    }
    state.check_loss(loss)
}

/// Minibatch SGD with heavy-ball momentum: `v ← μ·v + g`, `θ ← θ - lr·v`.
///
/// The example order is reshuffled every epoch from a single ChaCha8 stream
/// seeded by `cfg.shuffle_seed`; the final batch of an epoch may be short.
/// A non-finite parameter after any step aborts with [`Error::Diverged`].
pub fn train(
    mut state: ModelState,
    data: &LabeledDataset,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainTrace)> {
    cfg.validate()?;
    check_dataset(&state, data, loss)?;

    let n = data.len();
    let d = data.dim();
    let mut rng = seed::rng(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut ws = Workspace::new(&state);
    let mut grad = vec![0.0; state.params.len()];
    let mut velocity = vec![0.0; state.params.len()];
    let mut batch_x = Vec::with_capacity(cfg.batch_size * d);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    let mut batch_loss = vec![0.0; cfg.batch_size];
    let mut example_loss = vec![0.0; n];
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(data.row(i));
                batch_y.push(data.labels()[i]);
            }
            let bl = &mut batch_loss[..chunk.len()];
            state.backprop(&batch_x, &batch_y, loss, &mut ws, &mut grad, bl);
            for (&i, &l) in chunk.iter().zip(bl.iter()) {
                example_loss[i] = l;
            }

            let lr = cfg.learning_rate;
            if cfg.momentum == 0.0 {
                for (p, &g) in state.params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            } else {
                for ((p, v), &g) in state.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = cfg.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            state.step += 1;
            if state.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step: state.step,
                });
            }
        }
        trace.push(example_loss.iter().sum::<f64>() / n as f64);
    }
    Ok((state, TrainTrace { epoch_loss: trace }))
}
