//! The network family played by every role in the pipeline: student,
//! frozen offline student, and last-iteration student. Two architectures
//! are supported, an MLP and a small CNN, both with hand-coded backward
//! passes, deep-copy parameter snapshots, and absolute freezing.

pub mod layers;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};
use layers::{BatchNorm, Conv2d, Dense, Flatten, Layer, MaxPool2, Relu};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Shape of one sample, without the batch dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputShape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl InputShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            InputShape::Flat(n) => vec![n],
            InputShape::Image {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    SmallCnn,
}

/// Architecture description. Two models built from equal specs always have
/// identical per-parameter shapes, whatever their seeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input: InputShape,
    /// Layer widths for the MLP, channel counts per conv block for the CNN.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub use_batchnorm: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be >= 1".to_string()));
        }
        if self.input.numel() == 0 {
            return Err(Error::config("empty input shape".to_string()));
        }
        if self.kind == ModelKind::SmallCnn {
            if !matches!(self.input, InputShape::Image { .. }) {
                return Err(Error::config(
                    "smallcnn requires an image input shape".to_string(),
                ));
            }
            if self.hidden.is_empty() {
                return Err(Error::config(
                    "smallcnn needs at least one conv block".to_string(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Deep copy of a model's trainable parameters plus its batchnorm running
/// statistics, so a restore reproduces eval-mode forwards exactly.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub values: Vec<Tensor>,
    pub buffers: Vec<Tensor>,
}

/// A parameterized network owned by one training thread. Frozen models are
/// read-only: their eval-mode forward takes `&self` and may be shared.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    mode: Mode,
    frozen: bool,
    has_train_cache: bool,
}

impl Model {
    /// Builds a model with seeded He-uniform weights, zero biases, and
    /// batchnorm at scale 1 / shift 0. The same (spec, seed) pair always
    /// yields bitwise-identical parameters.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        match spec.kind {
            ModelKind::Mlp => {
                layers.push(Layer::Flatten(Flatten::new()));
                let mut width = spec.input.numel();
                for &h in &spec.hidden {
                    layers.push(Layer::Dense(Dense::new(&mut rng, width, h)));
                    if spec.use_batchnorm {
                        layers.push(Layer::BatchNorm(BatchNorm::new(h)));
                    }
                    layers.push(Layer::Relu(Relu::new()));
                    width = h;
                }
                layers.push(Layer::Dense(Dense::new(&mut rng, width, spec.num_classes)));
            }
            ModelKind::SmallCnn => {
                let (mut c, mut h, mut w) = match spec.input {
                    InputShape::Image {
                        channels,
                        height,
                        width,
                    } => (channels, height, width),
                    InputShape::Flat(_) => unreachable!("validated above"),
                };
                for &ch in &spec.hidden {
                    let conv = Conv2d::new(&mut rng, c, ch, 3, 1);
                    let (ch_h, ch_w) = conv.output_hw(h, w)?;
                    layers.push(Layer::Conv2d(conv));
                    if spec.use_batchnorm {
                        layers.push(Layer::BatchNorm(BatchNorm::new(ch)));
                    }
                    layers.push(Layer::Relu(Relu::new()));
                    let (ph, pw) = MaxPool2::output_hw(ch_h, ch_w);
                    if ph == 0 || pw == 0 {
                        return Err(Error::config(format!(
                            "input {h}x{w} too small for {} conv blocks",
                            spec.hidden.len()
                        )));
                    }
                    layers.push(Layer::MaxPool2(MaxPool2::new()));
                    c = ch;
                    h = ph;
                    w = pw;
                }
                layers.push(Layer::Flatten(Flatten::new()));
                layers.push(Layer::Dense(Dense::new(
                    &mut rng,
                    c * h * w,
                    spec.num_classes,
                )));
            }
        }
        Ok(Model {
            spec: spec.clone(),
            layers,
            mode: Mode::Train,
            frozen: false,
            has_train_cache: false,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        if self.frozen && mode == Mode::Train {
            return Err(Error::frozen(
                "cannot set a frozen model to train mode".to_string(),
            ));
        }
        self.mode = mode;
        Ok(())
    }

    /// Marks the model read-only and switches it to eval mode for good.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.mode = Mode::Eval;
        self.has_train_cache = false;
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let dims = self.spec.input.dims();
        let ok = batch.rank() == dims.len() + 1
            && batch.shape()[0] >= 1
            && batch.shape()[1..] == dims[..];
        if !ok {
            return Err(Error::shape(format!(
                "batch {:?} does not match input shape {:?}",
                batch.shape(),
                dims
            )));
        }
        Ok(())
    }

    /// Forward pass under the current mode. Train mode retains the
    /// intermediates backward needs and lets batchnorm use (and update)
    /// batch statistics; eval mode is cache-free and uses running
    /// statistics.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        match self.mode {
            Mode::Train => {
                let mut x = batch.clone();
                for layer in &mut self.layers {
                    x = layer.forward_train(&x)?;
                }
                self.has_train_cache = true;
                Ok(x)
            }
            Mode::Eval => self.forward_eval(batch),
        }
    }

    /// Pure eval-mode forward, independent of the stored mode. Safe on
    /// shared frozen teachers.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.forward_eval(&x)?;
        }
        Ok(x)
    }

    /// Accumulates parameter gradients from `upstream = dLoss/dLogits`.
    /// Requires a prior train-mode forward; may be called repeatedly to
    /// keep accumulating.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<()> {
        if !self.has_train_cache {
            return Err(Error::state(
                "backward without a train-mode forward".to_string(),
            ));
        }
        let mut grad = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn buffers(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    /// Deep copy of parameters and running statistics.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            values: self.params().iter().map(|p| p.value.clone()).collect(),
            buffers: self.buffers().iter().map(|&t| t.clone()).collect(),
        }
    }

    /// Overwrites this model's parameters and running statistics from a
    /// snapshot taken on a spec-compatible model.
    pub fn restore_into(&mut self, s: &Snapshot) -> Result<()> {
        if self.frozen {
            return Err(Error::frozen(
                "cannot restore into a frozen model".to_string(),
            ));
        }
        {
            let params = self.params();
            if params.len() != s.values.len() {
                return Err(Error::shape(format!(
                    "snapshot holds {} parameters, model has {}",
                    s.values.len(),
                    params.len()
                )));
            }
            for (p, v) in params.iter().zip(&s.values) {
                if p.value.shape() != v.shape() {
                    return Err(Error::shape(format!(
                        "snapshot parameter {:?} vs model {:?}",
                        v.shape(),
                        p.value.shape()
                    )));
                }
            }
            if self.buffers().len() != s.buffers.len() {
                return Err(Error::shape("snapshot buffer count mismatch".to_string()));
            }
        }
        for (p, v) in self.params_mut().into_iter().zip(&s.values) {
            p.value = v.clone();
        }
        for (b, v) in self
            .layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut())
            .zip(&s.buffers)
        {
            *b = v.clone();
        }
        Ok(())
    }

    /// SHA-256 over the parameter values (little-endian f64 bytes, in
    /// parameter order), hex-encoded.
    pub fn params_sha256(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params() {
            for v in p.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Writes a self-describing checkpoint. The encoding is versioned JSON
    /// whose float formatting round-trips exactly, so save -> load -> save
    /// reproduces identical bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params: self.params().iter().map(|p| p.value.clone()).collect(),
            buffers: self.buffers().iter().map(|&t| t.clone()).collect(),
        };
        let bytes = serde_json::to_vec(&ckpt)
            .map_err(|e| Error::numeric(format!("checkpoint encode: {e}")))?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::format(0, format!("checkpoint decode: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::format(
                0,
                format!("unknown container '{}'", ckpt.format),
            ));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                0,
                format!("unsupported checkpoint version {}", ckpt.version),
            ));
        }
        let mut model = Model::build(&ckpt.spec, 0)?;
        model.restore_into(&Snapshot {
            values: ckpt.params,
            buffers: ckpt.buffers,
        })?;
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "distillab-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: ModelSpec,
    params: Vec<Tensor>,
    buffers: Vec<Tensor>,
}
