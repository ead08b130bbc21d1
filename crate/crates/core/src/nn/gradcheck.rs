//! Central finite-difference checks of the analytic gradients, in `f64`.
//!
//! Every check builds a layer with random weights, feeds a random input,
//! and compares the backward pass against `(L(θ+h) − L(θ−h)) / 2h` on a
//! random subset of coordinates of each parameter tensor and of the input.
//! The error per tensor is the norm-relative error
//! `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖, floor)`; the
//! floor keeps gradients that vanish identically (a batch-norm shift feeding
//! another train-mode batch norm) from turning rounding noise into a large
//! ratio.

use std::cell::RefCell;

use crate::error::Result;
use crate::rng::RngStream;

use super::{
    bce_with_logits, AvgPool, BatchNorm, ConvTemporal, DenseSigmoid, DepthwiseSpatial, Dropout, Elu, HasParams,
    Mode, Param, SeparableConv, TemporalSpatial, Tensor4,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    /// Smallest gradient norm used as the denominator.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, coords_per_tensor: 16, floor: 1e-6 }
    }
}

/// Norm-relative error per checked tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub tensors: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

fn rel_err(a: &[f64], n: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(n)).max(floor)
}

fn with_param<M: HasParams<f64>>(model: &mut M, index: usize, f: &mut dyn FnMut(&mut Param<f64>)) {
    let mut i = 0;
    model.visit_params(&mut |p| {
        if i == index {
            f(p);
        }
        i += 1;
    });
}

/// Checks `model`'s parameter gradients and the input gradient.
///
/// `loss` runs a forward pass and returns the scalar loss; `backward`
/// backpropagates the loss of the most recent forward pass, accumulating
/// parameter gradients, and returns the input gradient when the model
/// produces one.
pub fn check_gradients<M: HasParams<f64>>(
    name: &str,
    model: &mut M,
    input: &Tensor4<f64>,
    loss: &mut dyn FnMut(&mut M, &Tensor4<f64>) -> Result<f64>,
    backward: &mut dyn FnMut(&mut M) -> Result<Option<Tensor4<f64>>>,
    opts: GradCheckOptions,
    rng: &mut RngStream,
) -> Result<GradCheckReport> {
    model.zero_grad();
    loss(model, input)?;
    let gx = backward(model)?;
    let mut analytic = Vec::new();
    model.visit_params(&mut |p| analytic.push((p.name.clone(), p.grad.clone())));

    let h = opts.step;
    let mut tensors = Vec::new();
    for (index, (pname, grad)) in analytic.iter().enumerate() {
        let coords = rng.choice(grad.len(), opts.coords_per_tensor.min(grad.len()))?;
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for &j in &coords {
            let mut orig = 0.0;
            with_param(model, index, &mut |p| {
                orig = p.value[j];
                p.value[j] = orig + h;
            });
            let up = loss(model, input)?;
            with_param(model, index, &mut |p| p.value[j] = orig - h);
            let down = loss(model, input)?;
            with_param(model, index, &mut |p| p.value[j] = orig);
            a.push(grad[j]);
            n.push((up - down) / (2.0 * h));
        }
        tensors.push((pname.clone(), rel_err(&a, &n, opts.floor)));
    }
    if let Some(gx) = gx {
        let coords = rng.choice(input.data.len(), opts.coords_per_tensor.min(input.data.len()))?;
        let mut x = input.clone();
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for &j in &coords {
            let orig = x.data[j];
            x.data[j] = orig + h;
            let up = loss(model, &x)?;
            x.data[j] = orig - h;
            let down = loss(model, &x)?;
            x.data[j] = orig;
            a.push(gx.data[j]);
            n.push((up - down) / (2.0 * h));
        }
        tensors.push(("input".to_string(), rel_err(&a, &n, opts.floor)));
    }
    Ok(GradCheckReport { name: name.to_string(), tensors })
}

fn normals(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn tensor(rng: &mut RngStream, n: usize, f: usize, h: usize, w: usize) -> Tensor4<f64> {
    Tensor4 { n, f, h, w, data: normals(rng, n * f * h * w) }
}

/// Linear probe `L = Σ c·y` with fixed random `c`; its gradient is `c`.
fn probe(y: &Tensor4<f64>, c: &[f64]) -> f64 {
    y.data.iter().zip(c).map(|(a, b)| a * b).sum()
}

/// A parameterless layer.
struct Stateless<L>(L);

impl<L> HasParams<f64> for Stateless<L> {
    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param<f64>)) {}
}

/// Temporal convolution, batch norm and depthwise filter evaluated by the
/// fused first-block kernel.
struct FusedBlock {
    kernel: TemporalSpatial<f64>,
    conv: ConvTemporal<f64>,
    bn: BatchNorm<f64>,
    dw: DepthwiseSpatial<f64>,
}

impl HasParams<f64> for FusedBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
        self.dw.visit_params(f);
    }
}

/// One randomized check of every layer and the loss; shapes, kernel
/// lengths and weights are drawn from `seed`.
pub fn layer_suite(seed: u64, opts: GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let root = RngStream::derive(seed, "gradcheck/layers")?;
    let mut out = Vec::new();

    // Temporal convolution, odd and even kernels.
    {
        let mut r = root.child("conv_temporal");
        let (filters, k, w) = (r.int_inclusive(1, 3), r.int_inclusive(1, 6), r.int_inclusive(6, 10));
        let mut layer = ConvTemporal::new(filters, k, normals(&mut r, filters * k))?;
        let x = tensor(&mut r, 2, 1, 3, w);
        let c = normals(&mut r, 2 * filters * 3 * w);
        out.push(check_gradients(
            "conv_temporal",
            &mut layer,
            &x,
            &mut |m, x| Ok(probe(&m.forward(x)?, &c)),
            &mut |m| m.backward(&Tensor4 { data: c.clone(), ..Tensor4::zeros(2, filters, 3, w) }),
            opts,
            &mut r,
        )?);
    }

    // Depthwise spatial filter.
    {
        let mut r = root.child("depthwise");
        let (f, d, ch, w) = (r.int_inclusive(1, 3), r.int_inclusive(1, 2), r.int_inclusive(2, 5), r.int_inclusive(3, 8));
        let mut layer = DepthwiseSpatial::new(f, d, ch, normals(&mut r, f * d * ch))?;
        let x = tensor(&mut r, 2, f, ch, w);
        let c = normals(&mut r, 2 * f * d * w);
        out.push(check_gradients(
            "depthwise_spatial",
            &mut layer,
            &x,
            &mut |m, x| Ok(probe(&m.forward(x)?, &c)),
            &mut |m| Ok(Some(m.backward(&Tensor4 { data: c.clone(), ..Tensor4::zeros(2, f * d, 1, w) })?)),
            opts,
            &mut r,
        )?);
    }

    // Separable convolution.
    {
        let mut r = root.child("separable");
        let (fi, fo, k, w) = (r.int_inclusive(1, 4), r.int_inclusive(1, 4), r.int_inclusive(1, 5), r.int_inclusive(4, 10));
        let mut layer = SeparableConv::new(fi, k, fo, normals(&mut r, fi * k), normals(&mut r, fo * fi))?;
        let x = tensor(&mut r, 2, fi, 1, w);
        let c = normals(&mut r, 2 * fo * w);
        out.push(check_gradients(
            "separable_conv",
            &mut layer,
            &x,
            &mut |m, x| Ok(probe(&m.forward(x)?, &c)),
            &mut |m| Ok(Some(m.backward(&Tensor4 { data: c.clone(), ..Tensor4::zeros(2, fo, 1, w) })?)),
            opts,
            &mut r,
        )?);
    }

    // Batch norm in both modes.
    for mode in [Mode::Train, Mode::Eval] {
        let mut r = root.child(format!("batchnorm/{mode:?}"));
        let (f, h, w) = (r.int_inclusive(1, 3), r.int_inclusive(1, 2), r.int_inclusive(2, 6));
        let mut layer = BatchNorm::new("bn", f);
        layer.gamma.value = (0..f).map(|_| r.uniform_in(0.5, 2.0)).collect();
        layer.beta.value = normals(&mut r, f);
        layer.running_mean = normals(&mut r, f);
        layer.running_var = (0..f).map(|_| r.uniform_in(0.5, 2.0)).collect();
        let x = tensor(&mut r, 3, f, h, w);
        let c = normals(&mut r, 3 * f * h * w);
        let name = if mode == Mode::Train { "batchnorm_train" } else { "batchnorm_eval" };
        out.push(check_gradients(
            name,
            &mut layer,
            &x,
            &mut |m, x| Ok(probe(&m.forward(x, mode)?, &c)),
            &mut |m| Ok(Some(m.backward(&Tensor4 { data: c.clone(), ..Tensor4::zeros(3, f, h, w) })?)),
            opts,
            &mut r,
        )?);
    }

    // ELU, pooling and train-mode dropout.
    {
        let mut r = root.child("elu");
        let x = tensor(&mut r, 2, 2, 1, 6);
        let c = normals(&mut r, x.data.len());
        let mut layer = Stateless(Elu::new());
        out.push(check_gradients(
            "elu",
            &mut layer,
            &x,
            &mut |m, x| Ok(probe(&m.0.forward(x), &c)),
            &mut |m| Ok(Some(m.0.backward(&Tensor4 { data: c.clone(), ..Tensor4::zeros(2, 2, 1, 6) })?)),
            opts,
            &mut r,
        )?);
    }
    {
        let mut r = root.child("avg_pool");
        let (p, w) = (r.int_inclusive(1, 4), r.int_inclusive(4, 13));
        let x = tensor(&mut r, 2, 2, 1, w);
        let c = normals(&mut r, 2 * 2 * (w / p));
        let mut layer = Stateless(AvgPool::new(p));
        out.push(check_gradients(
            "avg_pool",
            &mut layer,
            &x,
            &mut |m, x| Ok(probe(&m.0.forward(x)?, &c)),
            &mut |m| Ok(Some(m.0.backward(&Tensor4 { data: c.clone(), ..Tensor4::zeros(2, 2, 1, w / p) })?)),
            opts,
            &mut r,
        )?);
    }
    {
        let mut r = root.child("dropout");
        let x = tensor(&mut r, 2, 2, 1, 8);
        let c = normals(&mut r, x.data.len());
        let mask_rng = r.child("mask");
        let mut layer = Stateless(Dropout::new(0.25)?);
        out.push(check_gradients(
            "dropout_train",
            &mut layer,
            &x,
            &mut |m, x| {
                m.0.set_rng(mask_rng.clone());
                Ok(probe(&m.0.forward(x, Mode::Train)?, &c))
            },
            &mut |m| Ok(Some(m.0.backward(&Tensor4 { data: c.clone(), ..Tensor4::zeros(2, 2, 1, 8) })?)),
            opts,
            &mut r,
        )?);
    }

    // Dense layer through the sigmoid and the cross-entropy.
    {
        let mut r = root.child("dense");
        let (n, f, w) = (r.int_inclusive(2, 4), r.int_inclusive(1, 3), r.int_inclusive(2, 6));
        let mut layer = DenseSigmoid::new(normals(&mut r, f * w));
        layer.bias.value[0] = r.normal();
        let x = tensor(&mut r, n, f, 1, w);
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let g = RefCell::new(Vec::new());
        out.push(check_gradients(
            "dense_sigmoid_bce",
            &mut layer,
            &x,
            &mut |m, x| {
                let (l, grad) = bce_with_logits(&m.forward_logits(x)?, &y)?;
                *g.borrow_mut() = grad;
                Ok(l)
            },
            &mut |m| Ok(Some(m.backward(&g.borrow())?)),
            opts,
            &mut r,
        )?);
    }

    // Fused first block (temporal convolution → batch norm → depthwise).
    {
        let mut r = root.child("fused_block");
        let (f1, k, d, ch, w) =
            (r.int_inclusive(1, 3), r.int_inclusive(1, 6), r.int_inclusive(1, 2), r.int_inclusive(2, 4), r.int_inclusive(5, 10));
        let mut block = FusedBlock {
            kernel: TemporalSpatial::new(),
            conv: ConvTemporal::new(f1, k, normals(&mut r, f1 * k))?,
            bn: BatchNorm::new("bn", f1),
            dw: DepthwiseSpatial::new(f1, d, ch, normals(&mut r, f1 * d * ch))?,
        };
        block.bn.gamma.value = (0..f1).map(|_| r.uniform_in(0.5, 2.0)).collect();
        block.bn.beta.value = normals(&mut r, f1);
        let x = tensor(&mut r, 3, 1, ch, w);
        let c = normals(&mut r, 3 * f1 * d * w);
        out.push(check_gradients(
            "fused_block_train",
            &mut block,
            &x,
            &mut |m, x| {
                let y = m.kernel.forward(&m.conv, &mut m.bn, &m.dw, x, Mode::Train)?;
                Ok(probe(&y, &c))
            },
            &mut |m| {
                let g = Tensor4 { data: c.clone(), ..Tensor4::zeros(3, f1 * d, 1, w) };
                m.kernel.backward(&mut m.conv, &mut m.bn, &mut m.dw, &g)?;
                Ok(None)
            },
            opts,
            &mut r,
        )?);
    }
    Ok(out)
}

/// Whether a report's tensors pass through train-mode batch normalization,
/// which earns the looser tolerance.
pub fn through_train_batchnorm(report: &GradCheckReport) -> bool {
    matches!(report.name.as_str(), "batchnorm_train" | "fused_block_train") || report.name.starts_with("eegnet")
}
