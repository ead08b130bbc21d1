use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngStream;

use super::{axpy, dot, same_padding, sum_in_order, HasParams, Mode, Param, Real, Tensor4};

fn missing_cache(layer: &str) -> Error {
    Error::invalid(format!("{layer}: backward called without a forward pass"))
}

/// Valid output range `t` for tap `j` with left padding `pl` over length `n`:
/// input index `t + j - pl` must lie in `[0, n)`.
#[inline]
pub(crate) fn tap_range(j: usize, pl: usize, n: usize) -> (usize, usize) {
    let lo = pl.saturating_sub(j);
    let hi = (n + pl).saturating_sub(j).min(n);
    (lo, hi.max(lo))
}

/// Same-padded temporal convolution `N×1×H×W → N×F×H×W` with `F` kernels of
/// `1×K` (cross-correlation, zero padding, no bias).
#[derive(Debug, Clone)]
pub struct ConvTemporal<R> {
    pub weight: Param<R>,
    pub filters: usize,
    pub k: usize,
    /// The first layer of a network never needs its input gradient.
    pub need_input_grad: bool,
    cache: Option<Tensor4<R>>,
}

impl<R: Real> ConvTemporal<R> {
    pub fn new(filters: usize, k: usize, weight: Vec<R>) -> Result<Self> {
        if filters == 0 || k == 0 || weight.len() != filters * k {
            return Err(Error::shape(format!("temporal conv weight must be {filters}×{k}")));
        }
        Ok(Self {
            weight: Param::new("conv_temporal.weight", weight),
            filters,
            k,
            need_input_grad: true,
            cache: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        if x.f != 1 {
            return Err(Error::shape(format!("temporal conv expects one input map, got {}", x.f)));
        }
        let (h, w, f) = (x.h, x.w, self.filters);
        let (pl, _) = same_padding(self.k);
        let mut out = Tensor4::zeros(x.n, f, h, w);
        let wt = &self.weight.value;
        let k = self.k;
        par::chunks_mut(&mut out.data, f * h * w, |n, o| {
            let xi = x.item(n);
            for fi in 0..f {
                for c in 0..h {
                    let row = &mut o[(fi * h + c) * w..(fi * h + c + 1) * w];
                    let src = &xi[c * w..(c + 1) * w];
                    for j in 0..k {
                        let (lo, hi) = tap_range(j, pl, w);
                        axpy(wt[fi * k + j], &src[lo + j - pl..hi + j - pl], &mut row[lo..hi]);
                    }
                }
            }
        });
        self.cache = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, g: &Tensor4<R>) -> Result<Option<Tensor4<R>>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("conv_temporal"))?;
        g.expect_shape(self.filters, x.h, x.w, "conv_temporal gradient")?;
        let (h, w, f, k) = (x.h, x.w, self.filters, self.k);
        let (pl, _) = same_padding(k);
        let parts = par::map_range(x.n, |n| {
            let (xi, gi) = (x.item(n), g.item(n));
            let mut gw = vec![R::zero(); f * k];
            for fi in 0..f {
                for c in 0..h {
                    let gr = &gi[(fi * h + c) * w..(fi * h + c + 1) * w];
                    let src = &xi[c * w..(c + 1) * w];
                    for j in 0..k {
                        let (lo, hi) = tap_range(j, pl, w);
                        gw[fi * k + j] += dot(&gr[lo..hi], &src[lo + j - pl..hi + j - pl]);
                    }
                }
            }
            gw
        });
        axpy(R::one(), &sum_in_order(parts, f * k), &mut self.weight.grad);
        if !self.need_input_grad {
            return Ok(None);
        }
        let wt = &self.weight.value;
        let mut gx = Tensor4::zeros(x.n, 1, h, w);
        par::chunks_mut(&mut gx.data, h * w, |n, o| {
            let gi = g.item(n);
            for fi in 0..f {
                for c in 0..h {
                    let gr = &gi[(fi * h + c) * w..(fi * h + c + 1) * w];
                    let dst = &mut o[c * w..(c + 1) * w];
                    for j in 0..k {
                        let (lo, hi) = tap_range(j, pl, w);
                        axpy(wt[fi * k + j], &gr[lo..hi], &mut dst[lo + j - pl..hi + j - pl]);
                    }
                }
            }
        });
        Ok(Some(gx))
    }
}

impl<R: Real> HasParams<R> for ConvTemporal<R> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.weight);
    }
}

/// Per-map batch normalization over (N, H, W) with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm<R> {
    pub gamma: Param<R>,
    pub beta: Param<R>,
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache<R>>,
}

#[derive(Debug, Clone)]
struct BnCache<R> {
    xhat: Tensor4<R>,
    inv_std: Vec<f64>,
    train: bool,
}

impl<R: Real> BatchNorm<R> {
    pub const EPS: f64 = 1e-3;
    pub const MOMENTUM: f64 = 0.01;

    pub fn new(name: &str, maps: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![R::one(); maps]),
            beta: Param::new(format!("{name}.beta"), vec![R::zero(); maps]),
            running_mean: vec![R::zero(); maps],
            running_var: vec![R::one(); maps],
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
            cache: None,
        }
    }

    pub fn maps(&self) -> usize {
        self.gamma.len()
    }

    /// Folds batch statistics into the running estimates (unbiased variance).
    pub(crate) fn update_running(&mut self, mean: &[f64], var_biased: &[f64], count: usize) {
        let m = self.momentum;
        let unbias = count as f64 / (count as f64 - 1.0);
        for f in 0..self.maps() {
            self.running_mean[f] = R::of((1.0 - m) * self.running_mean[f].f64() + m * mean[f]);
            self.running_var[f] = R::of((1.0 - m) * self.running_var[f].f64() + m * var_biased[f] * unbias);
        }
    }

    pub fn forward(&mut self, x: &Tensor4<R>, mode: Mode) -> Result<Tensor4<R>> {
        let maps = self.maps();
        if x.f != maps {
            return Err(Error::shape(format!("batchnorm over {maps} maps got {}", x.f)));
        }
        let plane = x.h * x.w;
        let count = x.n * plane;
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                if x.n < 2 {
                    return Err(Error::invalid("train-mode batch normalization needs a batch of at least 2"));
                }
                let stats = par::map_range(maps, |f| {
                    let slices = || (0..x.n).map(|n| &x.data[(n * maps + f) * plane..(n * maps + f + 1) * plane]);
                    let mean = slices().flatten().map(|v| v.f64()).sum::<f64>() / count as f64;
                    let var = slices().flatten().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / count as f64;
                    (mean, var)
                });
                stats.into_iter().unzip()
            }
            Mode::Eval => (
                self.running_mean.iter().map(|v| v.f64()).collect(),
                self.running_var.iter().map(|v| v.f64()).collect(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor4::zeros(x.n, maps, x.h, x.w);
        let mut out = Tensor4::zeros(x.n, maps, x.h, x.w);
        for (i, (xv, (xh, o))) in x.data.iter().zip(xhat.data.iter_mut().zip(out.data.iter_mut())).enumerate() {
            let f = (i / plane) % maps;
            let z = (xv.f64() - mean[f]) * inv_std[f];
            *xh = R::of(z);
            *o = self.gamma.value[f] * R::of(z) + self.beta.value[f];
        }
        if mode == Mode::Train {
            self.update_running(&mean, &var, count);
        }
        self.cache = Some(BnCache { xhat, inv_std, train: mode == Mode::Train });
        Ok(out)
    }

    pub fn backward(&mut self, g: &Tensor4<R>) -> Result<Tensor4<R>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batchnorm"))?;
        let xhat = &cache.xhat;
        g.expect_shape(xhat.f, xhat.h, xhat.w, "batchnorm gradient")?;
        let maps = self.maps();
        let plane = xhat.h * xhat.w;
        let count = (xhat.n * plane) as f64;
        let sums = par::map_range(maps, |f| {
            let (mut sg, mut sgx) = (0.0f64, 0.0f64);
            for n in 0..xhat.n {
                let r = (n * maps + f) * plane..(n * maps + f + 1) * plane;
                for (gv, xv) in g.data[r.clone()].iter().zip(&xhat.data[r]) {
                    sg += gv.f64();
                    sgx += gv.f64() * xv.f64();
                }
            }
            (sg, sgx)
        });
        let mut gx = Tensor4::zeros(xhat.n, maps, xhat.h, xhat.w);
        for (i, ((gv, xv), o)) in g.data.iter().zip(&xhat.data).zip(gx.data.iter_mut()).enumerate() {
            let f = (i / plane) % maps;
            let scale = self.gamma.value[f].f64() * cache.inv_std[f];
            let v = if cache.train {
                scale * (gv.f64() - sums[f].0 / count - xv.f64() * sums[f].1 / count)
            } else {
                scale * gv.f64()
            };
            *o = R::of(v);
        }
        for (f, (sg, sgx)) in sums.into_iter().enumerate() {
            self.gamma.grad[f] += R::of(sgx);
            self.beta.grad[f] += R::of(sg);
        }
        Ok(gx)
    }
}

impl<R: Real> HasParams<R> for BatchNorm<R> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<R>)) {
        let base = self.gamma.name.trim_end_matches(".gamma").to_string();
        f(&format!("{base}.running_mean"), &mut self.running_mean);
        f(&format!("{base}.running_var"), &mut self.running_var);
    }
}

/// Depthwise spatial filter `N×F×C×T → N×(F·D)×1×T`: `D` projections of the
/// channel axis per input map; output map `f·D + d`.
#[derive(Debug, Clone)]
pub struct DepthwiseSpatial<R> {
    pub weight: Param<R>,
    pub maps_in: usize,
    pub depth: usize,
    pub channels: usize,
    cache: Option<Tensor4<R>>,
}

impl<R: Real> DepthwiseSpatial<R> {
    pub fn new(maps_in: usize, depth: usize, channels: usize, weight: Vec<R>) -> Result<Self> {
        if weight.len() != maps_in * depth * channels {
            return Err(Error::shape(format!("depthwise weight must be {}×{channels}", maps_in * depth)));
        }
        Ok(Self {
            weight: Param::new("depthwise.weight", weight),
            maps_in,
            depth,
            channels,
            cache: None,
        })
    }

    pub fn maps_out(&self) -> usize {
        self.maps_in * self.depth
    }

    pub fn forward(&mut self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        if x.h != self.channels {
            return Err(Error::shape(format!("depthwise kernel height {} but input height {}", self.channels, x.h)));
        }
        x.expect_shape(self.maps_in, self.channels, x.w, "depthwise input")?;
        let (c_n, t, d_n, fo) = (self.channels, x.w, self.depth, self.maps_out());
        let mut out = Tensor4::zeros(x.n, fo, 1, t);
        let wt = &self.weight.value;
        par::chunks_mut(&mut out.data, fo * t, |n, o| {
            let xi = x.item(n);
            for m in 0..fo {
                let f = m / d_n;
                let dst = &mut o[m * t..(m + 1) * t];
                for c in 0..c_n {
                    axpy(wt[m * c_n + c], &xi[(f * c_n + c) * t..(f * c_n + c + 1) * t], dst);
                }
            }
        });
        self.cache = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, g: &Tensor4<R>) -> Result<Tensor4<R>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("depthwise"))?;
        let (c_n, t, d_n, fo) = (self.channels, x.w, self.depth, self.maps_out());
        g.expect_shape(fo, 1, t, "depthwise gradient")?;
        let parts = par::map_range(x.n, |n| {
            let (xi, gi) = (x.item(n), g.item(n));
            let mut gw = vec![R::zero(); fo * c_n];
            for m in 0..fo {
                let f = m / d_n;
                for c in 0..c_n {
                    gw[m * c_n + c] = dot(&gi[m * t..(m + 1) * t], &xi[(f * c_n + c) * t..(f * c_n + c + 1) * t]);
                }
            }
            gw
        });
        axpy(R::one(), &sum_in_order(parts, fo * c_n), &mut self.weight.grad);
        let wt = &self.weight.value;
        let mut gx = Tensor4::zeros(x.n, self.maps_in, c_n, t);
        par::chunks_mut(&mut gx.data, self.maps_in * c_n * t, |n, o| {
            let gi = g.item(n);
            for m in 0..fo {
                let f = m / d_n;
                for c in 0..c_n {
                    axpy(wt[m * c_n + c], &gi[m * t..(m + 1) * t], &mut o[(f * c_n + c) * t..(f * c_n + c + 1) * t]);
                }
            }
        });
        Ok(gx)
    }
}

impl<R: Real> HasParams<R> for DepthwiseSpatial<R> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.weight);
    }
}

/// Exponential linear unit with α = 1.
#[derive(Debug, Clone, Default)]
pub struct Elu<R> {
    cache: Option<Tensor4<R>>,
}

impl<R: Real> Elu<R> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn apply(v: R) -> R {
        if v >= R::zero() {
            v
        } else {
            v.exp_m1()
        }
    }

    pub fn forward(&mut self, x: &Tensor4<R>) -> Tensor4<R> {
        let out = Tensor4 { data: x.data.iter().map(|&v| Self::apply(v)).collect(), ..*x };
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, g: &Tensor4<R>) -> Result<Tensor4<R>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("elu"))?;
        if g.data.len() != x.data.len() {
            return Err(Error::shape("elu gradient shape"));
        }
        let data = g
            .data
            .iter()
            .zip(&x.data)
            .map(|(&gv, &xv)| if xv >= R::zero() { gv } else { gv * xv.exp() })
            .collect();
        Ok(Tensor4 { data, ..*g })
    }
}

impl<R> Tensor4<R> {
    fn dims(&self) -> Tensor4<R> {
        Tensor4 { n: self.n, f: self.f, h: self.h, w: self.w, data: Vec::new() }
    }
}

/// Non-overlapping `1×p` average pooling; a trailing remainder is dropped.
#[derive(Debug, Clone)]
pub struct AvgPool<R> {
    pub p: usize,
    input: Option<Tensor4<R>>,
}

impl<R: Real> AvgPool<R> {
    pub fn new(p: usize) -> Self {
        Self { p, input: None }
    }

    pub fn forward(&mut self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        let wo = x.w / self.p;
        if wo == 0 {
            return Err(Error::shape(format!("pool width {} exceeds input width {}", self.p, x.w)));
        }
        let inv = R::one() / R::of(self.p as f64);
        let rows = x.n * x.f * x.h;
        let mut out = Tensor4::zeros(x.n, x.f, x.h, wo);
        for r in 0..rows {
            let src = &x.data[r * x.w..(r + 1) * x.w];
            for (o, win) in out.data[r * wo..(r + 1) * wo].iter_mut().zip(src.chunks_exact(self.p)) {
                *o = win.iter().copied().sum::<R>() * inv;
            }
        }
        self.input = Some(x.dims());
        Ok(out)
    }

    pub fn backward(&mut self, g: &Tensor4<R>) -> Result<Tensor4<R>> {
        let d = self.input.as_ref().ok_or_else(|| missing_cache("avg_pool"))?;
        let wo = d.w / self.p;
        g.expect_shape(d.f, d.h, wo, "avg_pool gradient")?;
        let inv = R::one() / R::of(self.p as f64);
        let mut gx = Tensor4::zeros(d.n, d.f, d.h, d.w);
        for r in 0..d.n * d.f * d.h {
            for (i, &gv) in g.data[r * wo..(r + 1) * wo].iter().enumerate() {
                gx.data[r * d.w + i * self.p..r * d.w + (i + 1) * self.p]
                    .iter_mut()
                    .for_each(|v| *v = gv * inv);
            }
        }
        Ok(gx)
    }
}

/// Inverted dropout; identity in eval mode.
#[derive(Debug, Clone)]
pub struct Dropout<R> {
    pub p: f64,
    rng: Option<RngStream>,
    mask: Option<Vec<R>>,
}

impl<R: Real> Dropout<R> {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(Self { p, rng: None, mask: None })
    }

    /// Stream the next train-mode masks are drawn from.
    pub fn set_rng(&mut self, rng: RngStream) {
        self.rng = Some(rng);
    }

    pub fn forward(&mut self, x: &Tensor4<R>, mode: Mode) -> Result<Tensor4<R>> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let rng = self.rng.as_mut().ok_or_else(|| Error::invalid("train-mode dropout needs a random stream"))?;
        let keep = R::of(1.0 / (1.0 - self.p));
        let mask: Vec<R> = (0..x.data.len())
            .map(|_| if rng.uniform() >= self.p { keep } else { R::zero() })
            .collect();
        let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.mask = Some(mask);
        Ok(Tensor4 { data, ..*x })
    }

    pub fn backward(&mut self, g: &Tensor4<R>) -> Result<Tensor4<R>> {
        match &self.mask {
            None => Ok(g.clone()),
            Some(m) if m.len() == g.data.len() => {
                Ok(Tensor4 { data: g.data.iter().zip(m).map(|(&v, &k)| v * k).collect(), ..*g })
            }
            Some(_) => Err(Error::shape("dropout gradient shape")),
        }
    }
}

/// Depthwise `1×K` temporal pass (same padding) per map, then `1×1`
/// pointwise mixing to `F_out` maps: `N×F×1×T → N×F_out×1×T`.
#[derive(Debug, Clone)]
pub struct SeparableConv<R> {
    pub depthwise: Param<R>,
    pub pointwise: Param<R>,
    pub maps_in: usize,
    pub maps_out: usize,
    pub k: usize,
    cache: Option<(Tensor4<R>, Tensor4<R>)>,
}

impl<R: Real> SeparableConv<R> {
    pub fn new(maps_in: usize, k: usize, maps_out: usize, depthwise: Vec<R>, pointwise: Vec<R>) -> Result<Self> {
        if depthwise.len() != maps_in * k || pointwise.len() != maps_out * maps_in {
            return Err(Error::shape("separable conv weight shapes"));
        }
        Ok(Self {
            depthwise: Param::new("separable.depthwise", depthwise),
            pointwise: Param::new("separable.pointwise", pointwise),
            maps_in,
            maps_out,
            k,
            cache: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        x.expect_shape(self.maps_in, 1, x.w, "separable input")?;
        let (fi, fo, k, t) = (self.maps_in, self.maps_out, self.k, x.w);
        let (pl, _) = same_padding(k);
        let dw = &self.depthwise.value;
        let pw = &self.pointwise.value;
        let mut mid = Tensor4::zeros(x.n, fi, 1, t);
        par::chunks_mut(&mut mid.data, fi * t, |n, o| {
            let xi = x.item(n);
            for f in 0..fi {
                let (src, dst) = (&xi[f * t..(f + 1) * t], &mut o[f * t..(f + 1) * t]);
                for j in 0..k {
                    let (lo, hi) = tap_range(j, pl, t);
                    axpy(dw[f * k + j], &src[lo + j - pl..hi + j - pl], &mut dst[lo..hi]);
                }
            }
        });
        let mut out = Tensor4::zeros(x.n, fo, 1, t);
        par::chunks_mut(&mut out.data, fo * t, |n, o| {
            let mi = mid.item(n);
            for m in 0..fo {
                for f in 0..fi {
                    axpy(pw[m * fi + f], &mi[f * t..(f + 1) * t], &mut o[m * t..(m + 1) * t]);
                }
            }
        });
        self.cache = Some((x.clone(), mid));
        Ok(out)
    }

    pub fn backward(&mut self, g: &Tensor4<R>) -> Result<Tensor4<R>> {
        let (x, mid) = self.cache.as_ref().ok_or_else(|| missing_cache("separable"))?;
        let (fi, fo, k, t) = (self.maps_in, self.maps_out, self.k, x.w);
        g.expect_shape(fo, 1, t, "separable gradient")?;
        let (pl, _) = same_padding(k);
        let dw = &self.depthwise.value;
        let pw = &self.pointwise.value;
        let parts = par::map_range(x.n, |n| {
            let (xi, mi, gi) = (x.item(n), mid.item(n), g.item(n));
            let mut grads = vec![R::zero(); fo * fi + fi * k];
            let mut gmid = vec![R::zero(); fi * t];
            for m in 0..fo {
                let gr = &gi[m * t..(m + 1) * t];
                for f in 0..fi {
                    grads[m * fi + f] = dot(gr, &mi[f * t..(f + 1) * t]);
                    axpy(pw[m * fi + f], gr, &mut gmid[f * t..(f + 1) * t]);
                }
            }
            let mut gx = vec![R::zero(); fi * t];
            for f in 0..fi {
                let (gm, src) = (&gmid[f * t..(f + 1) * t], &xi[f * t..(f + 1) * t]);
                for j in 0..k {
                    let (lo, hi) = tap_range(j, pl, t);
                    grads[fo * fi + f * k + j] = dot(&gm[lo..hi], &src[lo + j - pl..hi + j - pl]);
                    axpy(dw[f * k + j], &gm[lo..hi], &mut gx[f * t + lo + j - pl..f * t + hi + j - pl]);
                }
            }
            (grads, gx)
        });
        let mut gx = Tensor4::zeros(x.n, fi, 1, t);
        let mut total = vec![R::zero(); fo * fi + fi * k];
        for (n, (grads, gxi)) in parts.into_iter().enumerate() {
            total.iter_mut().zip(&grads).for_each(|(a, &b)| *a += b);
            gx.data[n * fi * t..(n + 1) * fi * t].copy_from_slice(&gxi);
        }
        axpy(R::one(), &total[..fo * fi], &mut self.pointwise.grad);
        axpy(R::one(), &total[fo * fi..], &mut self.depthwise.grad);
        Ok(gx)
    }
}

impl<R: Real> HasParams<R> for SeparableConv<R> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.depthwise);
        f(&mut self.pointwise);
    }
}

/// Fully connected layer to one logit; the sigmoid is applied by the caller
/// (or fused into the loss).
#[derive(Debug, Clone)]
pub struct DenseSigmoid<R> {
    pub weight: Param<R>,
    pub bias: Param<R>,
    cache: Option<Tensor4<R>>,
}

impl<R: Real> DenseSigmoid<R> {
    pub fn new(weight: Vec<R>) -> Self {
        Self {
            weight: Param::new("dense.weight", weight),
            bias: Param::new("dense.bias", vec![R::zero()]),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.len()
    }

    pub fn forward_logits(&mut self, x: &Tensor4<R>) -> Result<Vec<R>> {
        if x.item_len() != self.in_features() {
            return Err(Error::shape(format!(
                "dense layer expects {} inputs, got {}",
                self.in_features(),
                x.item_len()
            )));
        }
        let b = self.bias.value[0];
        let logits = (0..x.n).map(|n| dot(&self.weight.value, x.item(n)) + b).collect();
        self.cache = Some(x.clone());
        Ok(logits)
    }

    pub fn forward(&mut self, x: &Tensor4<R>) -> Result<Vec<R>> {
        Ok(self.forward_logits(x)?.into_iter().map(super::sigmoid).collect())
    }

    /// Takes the gradient with respect to the logits.
    pub fn backward(&mut self, g_logits: &[R]) -> Result<Tensor4<R>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("dense"))?;
        if g_logits.len() != x.n {
            return Err(Error::shape("dense gradient length"));
        }
        let mut gx = Tensor4::zeros(x.n, x.f, x.h, x.w);
        for (n, &gl) in g_logits.iter().enumerate() {
            axpy(gl, x.item(n), &mut self.weight.grad);
            self.bias.grad[0] += gl;
            let l = x.item_len();
            axpy(gl, &self.weight.value, &mut gx.data[n * l..(n + 1) * l]);
        }
        Ok(gx)
    }
}

impl<R: Real> HasParams<R> for DenseSigmoid<R> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
