//! The compact depthwise/separable CNN: temporal filters, per-filter spatial
//! filters, a separable temporal block, and one sigmoid output unit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Epoch, N_CHANNELS, N_SAMPLES};
use crate::error::{Error, Result};
use crate::io::{ensure_eof, read_exact_or, read_preamble, write_preamble};
use crate::nn::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::nn::{
    bce_with_logits, max_norm_project, sigmoid, AdamState, AvgPool, BatchNorm, ConvTemporal, DenseSigmoid, DepthwiseSpatial,
    Dropout, Elu, HasParams, Mode, Param, Real, SeparableConv, Tensor4, TemporalSpatial,
};
use crate::rng::RngStream;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EACK";

/// Approximate parameter count quoted for the published model. The declared
/// layer shapes give 2705 trainable values (2817 with running statistics);
/// no standard counting convention closes the gap.
pub const PUBLISHED_PARAM_COUNT: usize = 2930;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EegNetConfig {
    pub f1: usize,
    pub k1: usize,
    pub d: usize,
    pub c: usize,
    pub f2: usize,
    pub k2: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout_p: f64,
    pub t: usize,
    /// `None` disables the constraint.
    pub max_norm_depthwise: Option<f64>,
    pub max_norm_dense: Option<f64>,
}

impl Default for EegNetConfig {
    fn default() -> Self {
        Self {
            f1: 8,
            k1: 128,
            d: 2,
            c: N_CHANNELS,
            f2: 32,
            k2: 16,
            pool1: 4,
            pool2: 8,
            dropout_p: 0.25,
            t: N_SAMPLES,
            max_norm_depthwise: Some(1.0),
            max_norm_dense: Some(0.25),
        }
    }
}

impl EegNetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.f1, self.k1, self.d, self.c, self.f2, self.k2, self.pool1, self.pool2, self.t];
        if dims.contains(&0) {
            return Err(Error::invalid("network dimensions must all be positive"));
        }
        if self.t / self.pool1 / self.pool2 == 0 {
            return Err(Error::invalid(format!(
                "{} samples are too few for pooling by {} then {}",
                self.t, self.pool1, self.pool2
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid("dropout probability outside [0, 1)"));
        }
        if [self.max_norm_depthwise, self.max_norm_dense].iter().flatten().any(|&l| !(l > 0.0)) {
            return Err(Error::invalid("max-norm limits must be positive"));
        }
        Ok(())
    }

    /// (maps, width) after the first and second blocks, and the dense input size.
    pub fn block_shapes(&self) -> ((usize, usize), (usize, usize), usize) {
        let w1 = self.t / self.pool1;
        let w2 = w1 / self.pool2;
        ((self.f1 * self.d, w1), (self.f2, w2), self.f2 * w2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamConvention {
    TrainableOnly,
    WithBuffers,
}

#[derive(Debug, Clone)]
pub struct EegNet<R> {
    pub cfg: EegNetConfig,
    pub conv1: ConvTemporal<R>,
    pub bn1: BatchNorm<R>,
    pub depthwise: DepthwiseSpatial<R>,
    pub bn2: BatchNorm<R>,
    elu1: Elu<R>,
    pool1: AvgPool<R>,
    drop1: Dropout<R>,
    pub separable: SeparableConv<R>,
    pub bn3: BatchNorm<R>,
    elu2: Elu<R>,
    pool2: AvgPool<R>,
    drop2: Dropout<R>,
    pub dense: DenseSigmoid<R>,
    block1: TemporalSpatial<R>,
    /// Evaluate the first block with the fused kernel (default) instead of
    /// layer by layer. Both give the same numbers up to rounding.
    pub fused: bool,
}

fn he_normal<R: Real>(rng: &mut RngStream, n: usize, fan_in: usize) -> Vec<R> {
    let sd = (2.0 / fan_in as f64).sqrt();
    (0..n).map(|_| R::of(sd * rng.normal())).collect()
}

impl<R: Real> EegNet<R> {
    /// Fresh model. Convolution weights are He-normal; the dense layer is
    /// LeCun-normal with zero bias; max-norm limits hold from the start.
    pub fn new(cfg: EegNetConfig, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        let fd = cfg.f1 * cfg.d;
        let (_, _, dense_in) = cfg.block_shapes();
        let conv1 = ConvTemporal::new(cfg.f1, cfg.k1, he_normal(&mut rng.child("conv1"), cfg.f1 * cfg.k1, cfg.k1))?;
        let depthwise = DepthwiseSpatial::new(cfg.f1, cfg.d, cfg.c, he_normal(&mut rng.child("depthwise"), fd * cfg.c, cfg.c))?;
        let separable = SeparableConv::new(
            fd,
            cfg.k2,
            cfg.f2,
            he_normal(&mut rng.child("separable.depthwise"), fd * cfg.k2, cfg.k2),
            he_normal(&mut rng.child("separable.pointwise"), cfg.f2 * fd, fd),
        )?;
        let mut dense_rng = rng.child("dense");
        let sd = (1.0 / dense_in as f64).sqrt();
        let dense = DenseSigmoid::new((0..dense_in).map(|_| R::of(sd * dense_rng.normal())).collect());
        let mut conv1 = conv1;
        conv1.need_input_grad = false;
        let mut net = Self {
            conv1,
            bn1: BatchNorm::new("bn1", cfg.f1),
            depthwise,
            bn2: BatchNorm::new("bn2", fd),
            elu1: Elu::new(),
            pool1: AvgPool::new(cfg.pool1),
            drop1: Dropout::new(cfg.dropout_p)?,
            separable,
            bn3: BatchNorm::new("bn3", cfg.f2),
            elu2: Elu::new(),
            pool2: AvgPool::new(cfg.pool2),
            drop2: Dropout::new(cfg.dropout_p)?,
            dense,
            block1: TemporalSpatial::new(),
            fused: true,
            cfg,
        };
        net.project_max_norm()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.cfg.c, self.cfg.t)
    }

    /// Logits for an `N × 1 × C × T` batch. Train mode needs `dropout_rng`
    /// when dropout is enabled.
    pub fn forward_logits(&mut self, x: &Tensor4<R>, mode: Mode, dropout_rng: Option<&RngStream>) -> Result<Vec<R>> {
        x.expect_shape(1, self.cfg.c, self.cfg.t, "network input")?;
        if mode == Mode::Train && self.cfg.dropout_p > 0.0 {
            let r = dropout_rng.ok_or_else(|| Error::invalid("train-mode forward needs a dropout stream"))?;
            self.drop1.set_rng(r.child("dropout1"));
            self.drop2.set_rng(r.child("dropout2"));
        }
        let h = if self.fused {
            self.block1.forward(&self.conv1, &mut self.bn1, &self.depthwise, x, mode)?
        } else {
            let u = self.conv1.forward(x)?;
            let z = self.bn1.forward(&u, mode)?;
            self.depthwise.forward(&z)?
        };
        let h = self.bn2.forward(&h, mode)?;
        let h = self.elu1.forward(&h);
        let h = self.pool1.forward(&h)?;
        let h = self.drop1.forward(&h, mode)?;
        let h = self.separable.forward(&h)?;
        let h = self.bn3.forward(&h, mode)?;
        let h = self.elu2.forward(&h);
        let h = self.pool2.forward(&h)?;
        let h = self.drop2.forward(&h, mode)?;
        self.dense.forward_logits(&h)
    }

    pub fn forward(&mut self, x: &Tensor4<R>, mode: Mode, dropout_rng: Option<&RngStream>) -> Result<Vec<R>> {
        Ok(self.forward_logits(x, mode, dropout_rng)?.into_iter().map(sigmoid).collect())
    }

    /// Backpropagates the logit gradient of the last forward pass.
    pub fn backward(&mut self, g_logits: &[R]) -> Result<()> {
        let g = self.dense.backward(g_logits)?;
        let g = self.drop2.backward(&g)?;
        let g = self.pool2.backward(&g)?;
        let g = self.elu2.backward(&g)?;
        let g = self.bn3.backward(&g)?;
        let g = self.separable.backward(&g)?;
        let g = self.drop1.backward(&g)?;
        let g = self.pool1.backward(&g)?;
        let g = self.elu1.backward(&g)?;
        let g = self.bn2.backward(&g)?;
        if self.fused {
            self.block1.backward(&mut self.conv1, &mut self.bn1, &mut self.depthwise, &g)
        } else {
            let g = self.depthwise.backward(&g)?;
            let g = self.bn1.backward(&g)?;
            self.conv1.backward(&g)?;
            Ok(())
        }
    }

    /// Enforces the configured weight-norm limits.
    pub fn project_max_norm(&mut self) -> Result<()> {
        if let Some(l) = self.cfg.max_norm_depthwise {
            max_norm_project(&mut self.depthwise.weight.value, self.cfg.c, l)?;
        }
        if let Some(l) = self.cfg.max_norm_dense {
            let n = self.dense.in_features();
            max_norm_project(&mut self.dense.weight.value, n, l)?;
        }
        Ok(())
    }

    pub fn param_count(&mut self, convention: ParamConvention) -> usize {
        let trainable = self.n_params();
        match convention {
            ParamConvention::TrainableOnly => trainable,
            ParamConvention::WithBuffers => trainable + self.n_buffer_values(),
        }
    }

    /// Eval-mode probabilities, processed in chunks of `batch`.
    pub fn predict(&mut self, x: &Tensor4<R>, batch: usize) -> Result<Vec<R>> {
        let mut out = Vec::with_capacity(x.n);
        let len = x.item_len();
        for start in (0..x.n).step_by(batch.max(1)) {
            let end = (start + batch.max(1)).min(x.n);
            let chunk = Tensor4::from_vec(end - start, x.f, x.h, x.w, x.data[start * len..end * len].to_vec())?;
            out.extend(self.forward(&chunk, Mode::Eval, None)?);
        }
        Ok(out)
    }
}

impl<R: Real> HasParams<R> for EegNet<R> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.depthwise.visit_params(f);
        self.bn2.visit_params(f);
        self.separable.visit_params(f);
        self.bn3.visit_params(f);
        self.dense.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<R>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
        self.bn3.visit_buffers(f);
    }
}

/// Finite-difference check of the whole network in train mode (batch
/// statistics and a fixed dropout mask) under the cross-entropy loss, on a
/// random batch of four.
pub fn gradient_check(cfg: EegNetConfig, seed: u64, fused: bool, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let root = RngStream::derive(seed, "gradcheck/eegnet")?;
    let mut net = EegNet::<f64>::new(cfg.clone(), &root.child("init"))?;
    net.fused = fused;
    let mut r = root.child("input");
    let n = 4;
    let x = Tensor4::from_vec(n, 1, cfg.c, cfg.t, (0..n * cfg.c * cfg.t).map(|_| r.normal()).collect())?;
    let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let dropout = root.child("dropout");
    let g = std::cell::RefCell::new(Vec::new());
    let name = if fused { "eegnet_fused" } else { "eegnet_layerwise" };
    check_gradients(
        name,
        &mut net,
        &x,
        &mut |m, x| {
            let (l, grad) = bce_with_logits(&m.forward_logits(x, Mode::Train, Some(&dropout))?, &y)?;
            *g.borrow_mut() = grad;
            Ok(l)
        },
        &mut |m| {
            m.backward(&g.borrow())?;
            Ok(None)
        },
        opts,
        &mut root.child("coords"),
    )
}

/// A scaled-down network with every stage of the default one, cheap enough
/// for many randomized gradient checks.
pub fn small_config() -> EegNetConfig {
    EegNetConfig { f1: 2, k1: 8, d: 2, c: 4, f2: 3, k2: 4, pool1: 2, pool2: 2, t: 24, ..Default::default() }
}

/// Stacks epochs into an `N × 1 × C × T` batch.
pub fn batch_tensor(epochs: &[&Epoch]) -> Result<Tensor4<f32>> {
    let first = epochs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (c, t) = (first.channels, first.samples);
    let mut data = Vec::with_capacity(epochs.len() * c * t);
    for e in epochs {
        if e.channels != c || e.samples != t {
            return Err(Error::shape("epochs in a batch differ in shape"));
        }
        data.extend_from_slice(&e.data);
    }
    Tensor4::from_vec(epochs.len(), 1, c, t, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: EegNetConfig,
    params: Vec<(String, usize)>,
    buffers: Vec<(String, usize)>,
    adam: Option<AdamHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(v.len() * 4);
    v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes()));
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s<Rd: Read>(r: &mut Rd, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    read_exact_or(r, &mut buf, what)?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

/// Checkpoint: preamble with a JSON header (config, blob names and lengths,
/// optimizer hyperparameters), then float32 LE parameter blobs, buffer blobs,
/// and Adam first/second moments in parameter order.
pub fn write_checkpoint<W: Write>(net: &mut EegNet<f32>, adam: Option<&AdamState>, w: &mut W) -> Result<()> {
    let mut params = Vec::new();
    let mut blobs: Vec<Vec<f32>> = Vec::new();
    net.visit_params(&mut |p| {
        params.push((p.name.clone(), p.len()));
        blobs.push(p.value.clone());
    });
    let mut buffers = Vec::new();
    net.visit_buffers(&mut |name, b| {
        buffers.push((name.to_string(), b.len()));
        blobs.push(b.clone());
    });
    if let Some(a) = adam {
        if a.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the model"));
        }
    }
    let header = CheckpointHeader {
        config: net.cfg.clone(),
        params,
        buffers,
        adam: adam.map(|a| AdamHeader { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, step: a.step }),
    };
    write_preamble(w, CHECKPOINT_MAGIC, &serde_json::to_vec(&header)?)?;
    for b in &blobs {
        write_f32s(w, b)?;
    }
    if let Some(a) = adam {
        for m in a.m.iter().chain(&a.v) {
            write_f32s(w, m)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<Rd: Read>(r: &mut Rd) -> Result<(EegNet<f32>, Option<AdamState>)> {
    let header: CheckpointHeader = serde_json::from_slice(&read_preamble(r, CHECKPOINT_MAGIC)?)?;
    let mut net = EegNet::<f32>::new(header.config.clone(), &RngStream::derive(0, "checkpoint")?)?;
    let mut expected = Vec::new();
    net.visit_params(&mut |p| expected.push((p.name.clone(), p.len())));
    if expected != header.params {
        return Err(Error::Header("checkpoint parameters do not match the configured network".into()));
    }
    let mut values = Vec::new();
    for (name, n) in &header.params {
        values.push(read_f32s(r, *n, name)?);
    }
    let mut buffers = Vec::new();
    for (name, n) in &header.buffers {
        buffers.push((name.clone(), read_f32s(r, *n, name)?));
    }
    let mut it = values.into_iter();
    net.visit_params(&mut |p| p.value = it.next().expect("counted above"));
    let mut bad = false;
    let mut bit = buffers.into_iter();
    net.visit_buffers(&mut |name, b| match bit.next() {
        Some((n, v)) if n == name && v.len() == b.len() => *b = v,
        _ => bad = true,
    });
    if bad || bit.next().is_some() {
        return Err(Error::Header("checkpoint buffers do not match the configured network".into()));
    }
    let adam = match header.adam {
        None => None,
        Some(h) => {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (name, n) in &header.params {
                m.push(read_f32s(r, *n, name)?);
            }
            for (name, n) in &header.params {
                v.push(read_f32s(r, *n, name)?);
            }
            Some(AdamState { lr: h.lr, beta1: h.beta1, beta2: h.beta2, eps: h.eps, step: h.step, m, v })
        }
    };
    ensure_eof(r)?;
    Ok((net, adam))
}

pub fn save_checkpoint(net: &mut EegNet<f32>, adam: Option<&AdamState>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(net, adam, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EegNet<f32>, Option<AdamState>)> {
    read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
