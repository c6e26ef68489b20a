//! Network layers with hand-coded forward and backward passes.
//!
//! Each layer offers a caching train-mode forward (intermediates retained
//! for backward), a pure eval-mode forward, and a backward that accumulates
//! parameter gradients and returns the gradient with respect to its input.
//! Backward may be called repeatedly after one forward; gradients add up.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn he_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Flattens `[B, ...]` to `[B, features]`.
#[derive(Debug, Clone)]
pub struct Flatten {
    cached_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten { cached_shape: None }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.cached_shape = Some(x.shape().to_vec());
        self.forward_eval(x)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() < 2 {
            return Err(Error::shape(format!(
                "flatten expects a batch dimension, got {:?}",
                x.shape()
            )));
        }
        let b = x.shape()[0];
        let rest: usize = x.shape()[1..].iter().product();
        x.reshape(vec![b, rest])
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let shape = self
            .cached_shape
            .as_ref()
            .ok_or_else(|| Error::state("flatten backward without forward".to_string()))?;
        upstream.reshape(shape.clone())
    }
}

impl Default for Flatten {
    fn default() -> Self {
        Self::new()
    }
}

/// Fully connected layer: `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Dense {
            w: Parameter::new(he_uniform(rng, vec![input, output], input)),
            b: Parameter::new(Tensor::zeros(vec![output])),
            cached_input: None,
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_eval(x)?;
        self.cached_input = Some(x.clone());
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.w.value)?;
        let out = self.b.value.len();
        for row in y.data_mut().chunks_mut(out) {
            for (v, b) in row.iter_mut().zip(self.b.value.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::state("dense backward without forward".to_string()))?;
        let dw = x.transpose2d()?.matmul(upstream)?;
        let db = upstream.sum_axis(0)?;
        self.w.grad = self.w.grad.add(&dw)?;
        self.b.grad = self.b.grad.add(&db)?;
        upstream.matmul(&self.w.value.transpose2d()?)
    }
}

/// Elementwise max(x, 0); the derivative at exactly zero is taken as zero.
#[derive(Debug, Clone)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        Ok(x.max0())
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.max0())
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::state("relu backward without forward".to_string()))?;
        if mask.len() != upstream.len() {
            return Err(Error::shape(
                "relu upstream does not match cache".to_string(),
            ));
        }
        let data = upstream
            .data()
            .iter()
            .zip(mask)
            .map(|(&u, &m)| if m { u } else { 0.0 })
            .collect();
        Tensor::new(upstream.shape().to_vec(), data)
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

/// 3x3 (configurable) convolution, stride 1, symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Parameter,
    pub b: Parameter,
    pub kernel: usize,
    pub pad: usize,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            w: Parameter::new(he_uniform(
                rng,
                vec![out_channels, in_channels, kernel, kernel],
                fan_in,
            )),
            b: Parameter::new(Tensor::zeros(vec![out_channels])),
            kernel,
            pad,
            cached_input: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < k || pw < k {
            return Err(Error::shape(format!(
                "conv kernel {k} larger than padded input {ph}x{pw}"
            )));
        }
        Ok((ph - k + 1, pw - k + 1))
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
        if x.rank() != 4 {
            return Err(Error::shape(format!(
                "conv expects [B,C,H,W], got {:?}",
                x.shape()
            )));
        }
        let (b, ic, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if ic != self.w.value.shape()[1] {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {ic}",
                self.w.value.shape()[1]
            )));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((b, ic, h, w, oh, ow))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_eval(x)?;
        self.cached_input = Some(x.clone());
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, ic, h, w, oh, ow) = self.dims(x)?;
        let oc = self.w.value.shape()[0];
        let k = self.kernel;
        let pad = self.pad as isize;
        let xin = x.data();
        let wts = self.w.value.data();
        let mut out = vec![0.0; batch * oc * oh * ow];
        for bi in 0..batch {
            for o in 0..oc {
                let out_base = (bi * oc + o) * oh * ow;
                let bias = self.b.value.data()[o];
                for v in &mut out[out_base..out_base + oh * ow] {
                    *v = bias;
                }
                for c in 0..ic {
                    let w_base = (o * ic + c) * k * k;
                    let in_base = (bi * ic + c) * h * w;
                    for kh in 0..k {
                        let oh_lo = (pad - kh as isize).max(0) as usize;
                        let oh_hi =
                            (h as isize + pad - kh as isize).min(oh as isize).max(0) as usize;
                        for kw in 0..k {
                            let wv = wts[w_base + kh * k + kw];
                            let ow_lo = (pad - kw as isize).max(0) as usize;
                            let ow_hi =
                                (w as isize + pad - kw as isize).min(ow as isize).max(0) as usize;
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            for oi in oh_lo..oh_hi {
                                let ih = (oi as isize + kh as isize - pad) as usize;
                                let iw0 = (ow_lo as isize + kw as isize - pad) as usize;
                                let in_row = in_base + ih * w + iw0;
                                let out_row = out_base + oi * ow + ow_lo;
                                let n = ow_hi - ow_lo;
                                let src = &xin[in_row..in_row + n];
                                let dst = &mut out[out_row..out_row + n];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![batch, oc, oh, ow], out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self
            .cached_input
            .clone()
            .ok_or_else(|| Error::state("conv backward without forward".to_string()))?;
        let (batch, ic, h, w, oh, ow) = self.dims(&x)?;
        let oc = self.w.value.shape()[0];
        if upstream.shape() != [batch, oc, oh, ow] {
            return Err(Error::shape(format!(
                "conv upstream {:?}, expected {:?}",
                upstream.shape(),
                [batch, oc, oh, ow]
            )));
        }
        let k = self.kernel;
        let pad = self.pad as isize;
        let xin = x.data();
        let up = upstream.data();
        let wts = self.w.value.data();
        let mut dw = vec![0.0; self.w.value.len()];
        let mut db = vec![0.0; oc];
        let mut dx = vec![0.0; x.len()];
        for bi in 0..batch {
            for o in 0..oc {
                let out_base = (bi * oc + o) * oh * ow;
                db[o] += up[out_base..out_base + oh * ow].iter().sum::<f64>();
                for c in 0..ic {
                    let w_base = (o * ic + c) * k * k;
                    let in_base = (bi * ic + c) * h * w;
                    for kh in 0..k {
                        let oh_lo = (pad - kh as isize).max(0) as usize;
                        let oh_hi =
                            (h as isize + pad - kh as isize).min(oh as isize).max(0) as usize;
                        for kw in 0..k {
                            let ow_lo = (pad - kw as isize).max(0) as usize;
                            let ow_hi =
                                (w as isize + pad - kw as isize).min(ow as isize).max(0) as usize;
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            let wv = wts[w_base + kh * k + kw];
                            let mut acc = 0.0;
                            for oi in oh_lo..oh_hi {
                                let ih = (oi as isize + kh as isize - pad) as usize;
                                let iw0 = (ow_lo as isize + kw as isize - pad) as usize;
                                let in_row = in_base + ih * w + iw0;
                                let out_row = out_base + oi * ow + ow_lo;
                                let n = ow_hi - ow_lo;
                                let xs = &xin[in_row..in_row + n];
                                let us = &up[out_row..out_row + n];
                                let ds = &mut dx[in_row..in_row + n];
                                for ((&xv, &uv), d) in xs.iter().zip(us).zip(ds.iter_mut()) {
                                    acc += uv * xv;
                                    *d += uv * wv;
                                }
                            }
                            dw[w_base + kh * k + kw] += acc;
                        }
                    }
                }
            }
        }
        let dw = Tensor::new(self.w.value.shape().to_vec(), dw)?;
        let db = Tensor::new(vec![oc], db)?;
        self.w.grad = self.w.grad.add(&dw)?;
        self.b.grad = self.b.grad.add(&db)?;
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
/// Ties route the gradient to the first maximal element in row-major order.
#[derive(Debug, Clone)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<usize>)>, // (input shape, argmax flat indices)
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { cache: None }
    }

    pub fn output_hw(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    fn run(&self, x: &Tensor, mut record: Option<&mut Vec<usize>>) -> Result<Tensor> {
        if x.rank() != 4 {
            return Err(Error::shape(format!(
                "maxpool expects [B,C,H,W], got {:?}",
                x.shape()
            )));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = Self::output_hw(h, w);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("maxpool input too small: {h}x{w}")));
        }
        let xin = x.data();
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            let in_base = plane * h * w;
            let out_base = plane * oh * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best_idx = in_base + (2 * i) * w + 2 * j;
                    let mut best = xin[best_idx];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = in_base + (2 * i + di) * w + 2 * j + dj;
                        if xin[idx] > best {
                            best = xin[idx];
                            best_idx = idx;
                        }
                    }
                    out[out_base + i * ow + j] = best;
                    if let Some(rec) = record.as_deref_mut() {
                        rec.push(best_idx);
                    }
                }
            }
        }
        Tensor::new(vec![b, c, oh, ow], out)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut indices = Vec::with_capacity(x.len() / 4);
        let y = self.run(x, Some(&mut indices))?;
        self.cache = Some((x.shape().to_vec(), indices));
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, None)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (shape, indices) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("maxpool backward without forward".to_string()))?;
        if upstream.len() != indices.len() {
            return Err(Error::shape(
                "maxpool upstream does not match cache".to_string(),
            ));
        }
        let mut dx = Tensor::zeros(shape.clone());
        let d = dx.data_mut();
        for (&idx, &u) in indices.iter().zip(upstream.data()) {
            d[idx] += u;
        }
        Ok(dx)
    }
}

impl Default for MaxPool2 {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    group: usize,
}

/// Batch normalization over features of `[B, F]` or channels of `[B, C, H, W]`.
/// Train mode normalizes with biased batch statistics and folds them into
/// the running estimates; eval mode normalizes with the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(Tensor::filled(vec![features], 1.0)),
            beta: Parameter::new(Tensor::zeros(vec![features])),
            running_mean: Tensor::zeros(vec![features]),
            running_var: Tensor::filled(vec![features], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    /// (batch, features, inner) so that element `(b, f, i)` sits at
    /// `(b * features + f) * inner + i`.
    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let f = self.gamma.value.len();
        match x.rank() {
            2 if x.shape()[1] == f => Ok((x.shape()[0], f, 1)),
            4 if x.shape()[1] == f => Ok((x.shape()[0], f, x.shape()[2] * x.shape()[3])),
            _ => Err(Error::shape(format!(
                "batchnorm over {f} features cannot take {:?}",
                x.shape()
            ))),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (b, f, inner) = self.dims(x)?;
        let group = b * inner;
        if group < 2 {
            return Err(Error::domain(
                "batchnorm needs at least 2 values per feature in train mode".to_string(),
            ));
        }
        let xin = x.data();
        let mut out = vec![0.0; x.len()];
        let mut x_hat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; f];
        for fi in 0..f {
            let mut mean = 0.0;
            for bi in 0..b {
                let base = (bi * f + fi) * inner;
                mean += xin[base..base + inner].iter().sum::<f64>();
            }
            mean /= group as f64;
            let mut var = 0.0;
            for bi in 0..b {
                let base = (bi * f + fi) * inner;
                for &v in &xin[base..base + inner] {
                    var += (v - mean) * (v - mean);
                }
            }
            var /= group as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[fi] = istd;
            let g = self.gamma.value.data()[fi];
            let beta = self.beta.value.data()[fi];
            for bi in 0..b {
                let base = (bi * f + fi) * inner;
                for i in 0..inner {
                    let xh = (xin[base + i] - mean) * istd;
                    x_hat[base + i] = xh;
                    out[base + i] = g * xh + beta;
                }
            }
            let rm = &mut self.running_mean.data_mut()[fi];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * mean;
            let rv = &mut self.running_var.data_mut()[fi];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * var;
        }
        self.cache = Some(BnCache {
            x_hat: Tensor::new(x.shape().to_vec(), x_hat)?,
            inv_std,
            group,
        });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (b, f, inner) = self.dims(x)?;
        let xin = x.data();
        let mut out = vec![0.0; x.len()];
        for fi in 0..f {
            let mean = self.running_mean.data()[fi];
            let istd = 1.0 / (self.running_var.data()[fi] + self.eps).sqrt();
            let g = self.gamma.value.data()[fi];
            let beta = self.beta.value.data()[fi];
            for bi in 0..b {
                let base = (bi * f + fi) * inner;
                for i in 0..inner {
                    out[base + i] = g * (xin[base + i] - mean) * istd + beta;
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("batchnorm backward without forward".to_string()))?;
        let (b, f, inner) = self.dims(upstream)?;
        if upstream.shape() != cache.x_hat.shape() {
            return Err(Error::shape(
                "batchnorm upstream does not match cache".to_string(),
            ));
        }
        let n = cache.group as f64;
        let up = upstream.data();
        let xh = cache.x_hat.data();
        let mut dx = vec![0.0; upstream.len()];
        for fi in 0..f {
            let mut sum_up = 0.0;
            let mut sum_up_xh = 0.0;
            for bi in 0..b {
                let base = (bi * f + fi) * inner;
                for i in 0..inner {
                    sum_up += up[base + i];
                    sum_up_xh += up[base + i] * xh[base + i];
                }
            }
            self.gamma.grad.data_mut()[fi] += sum_up_xh;
            self.beta.grad.data_mut()[fi] += sum_up;
            let g = self.gamma.value.data()[fi];
            let istd = cache.inv_std[fi];
            let mean_up = sum_up / n;
            let mean_up_xh = sum_up_xh / n;
            for bi in 0..b {
                let base = (bi * f + fi) * inner;
                for i in 0..inner {
                    dx[base + i] = g * istd * (up[base + i] - mean_up - xh[base + i] * mean_up_xh);
                }
            }
        }
        Tensor::new(upstream.shape().to_vec(), dx)
    }
}

/// Closed set of layers the two model kinds are built from.
#[derive(Debug, Clone)]
pub enum Layer {
    Flatten(Flatten),
    Dense(Dense),
    Relu(Relu),
    Conv2d(Conv2d),
    MaxPool2(MaxPool2),
    BatchNorm(BatchNorm),
}

impl Layer {
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Flatten(l) => l.forward_train(x),
            Layer::Dense(l) => l.forward_train(x),
            Layer::Relu(l) => l.forward_train(x),
            Layer::Conv2d(l) => l.forward_train(x),
            Layer::MaxPool2(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Flatten(l) => l.forward_eval(x),
            Layer::Dense(l) => l.forward_eval(x),
            Layer::Relu(l) => l.forward_eval(x),
            Layer::Conv2d(l) => l.forward_eval(x),
            Layer::MaxPool2(l) => l.forward_eval(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
        }
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Flatten(l) => l.backward(upstream),
            Layer::Dense(l) => l.backward(upstream),
            Layer::Relu(l) => l.backward(upstream),
            Layer::Conv2d(l) => l.backward(upstream),
            Layer::MaxPool2(l) => l.backward(upstream),
            Layer::BatchNorm(l) => l.backward(upstream),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        match self {
            Layer::Dense(l) => vec![&l.w, &l.b],
            Layer::Conv2d(l) => vec![&l.w, &l.b],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Layer::Dense(l) => vec![&mut l.w, &mut l.b],
            Layer::Conv2d(l) => vec![&mut l.w, &mut l.b],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batchnorm running statistics).
    pub fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm(l) => vec![&l.running_mean, &l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }
}
