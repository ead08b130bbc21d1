//! Temporal convolution → batch norm → depthwise spatial filter, evaluated
//! without materializing the `F × C × T` convolution output.
//!
//! Both convolutions are linear and batch norm is a per-map affine map, so
//! the spatial projection can be applied to the input first and the temporal
//! kernel to the `F·D` projected rows afterwards. The batch-norm statistics
//! of the (never formed) convolution output follow from the kernel and two
//! input summaries: the window sums `S1[j] = Σ x̃[t+j]` and the lag Gram matrix
//! `G[j][j'] = Σ x̃[t+j]·x̃[t+j']` (sums over batch, channels and time):
//! `mean_f = w_f·S1 / M` and `E[u_f²] = w_fᵀ G w_f / M`.
//!
//! Results equal the layer-by-layer composition up to rounding; the unit tests
//! check that in `f64`.

use crate::error::{Error, Result};
use crate::par;

use super::layers::{BatchNorm, ConvTemporal, DepthwiseSpatial};
use super::{axpy, dot, same_padding, Mode, Real, Tensor4};

#[derive(Debug, Clone)]
struct Cache<R> {
    x: Tensor4<R>,
    /// Projected, padded rows, N × FD × (T + K − 1).
    y: Vec<R>,
    /// Temporal filter output on projected rows, N × FD × T.
    q: Vec<R>,
    s1: Vec<f64>,
    gram: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    train: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TemporalSpatial<R> {
    cache: Option<Cache<R>>,
}

struct Dims {
    n: usize,
    c: usize,
    t: usize,
    k: usize,
    pl: usize,
    len: usize,
    f1: usize,
    depth: usize,
    fd: usize,
}

fn dims<R: Real>(x: &Tensor4<R>, conv: &ConvTemporal<R>, dw: &DepthwiseSpatial<R>) -> Result<Dims> {
    if x.f != 1 || x.h != dw.channels || dw.maps_in != conv.filters {
        return Err(Error::shape(format!(
            "fused block: input {}×{}×{}×{}, {} filters, depthwise over {} maps of {} channels",
            x.n, x.f, x.h, x.w, conv.filters, dw.maps_in, dw.channels
        )));
    }
    let (pl, _) = same_padding(conv.k);
    Ok(Dims {
        n: x.n,
        c: x.h,
        t: x.w,
        k: conv.k,
        pl,
        len: x.w + conv.k - 1,
        f1: conv.filters,
        depth: dw.depth,
        fd: dw.maps_out(),
    })
}

/// One sample zero-padded to `C × (T + K − 1)`.
fn padded<R: Real>(item: &[R], d: &Dims) -> Vec<R> {
    let mut xp = vec![R::zero(); d.c * d.len];
    for c in 0..d.c {
        xp[c * d.len + d.pl..c * d.len + d.pl + d.t].copy_from_slice(&item[c * d.t..(c + 1) * d.t]);
    }
    xp
}

/// Window sums and lag Gram matrix of one padded sample.
fn summaries<R: Real>(xp: &[R], d: &Dims) -> (Vec<f64>, Vec<f64>) {
    let (k, t, len) = (d.k, d.t, d.len);
    let mut col = vec![0.0f64; len];
    for c in 0..d.c {
        col.iter_mut().zip(&xp[c * len..(c + 1) * len]).for_each(|(a, v)| *a += v.f64());
    }
    let window = |r: &[f64], out: &mut dyn FnMut(usize, f64)| {
        let mut s: f64 = r[..t].iter().sum();
        out(0, s);
        for j in 1..r.len() + 1 - t {
            s += r[j + t - 1] - r[j - 1];
            out(j, s);
        }
    };
    let mut s1 = vec![0.0; k];
    window(&col, &mut |j, s| s1[j] = s);

    let mut gram = vec![0.0f64; k * k];
    let mut prod = vec![R::zero(); len];
    let mut prod64 = vec![0.0f64; len];
    for delta in 0..k {
        let m = len - delta;
        prod[..m].iter_mut().for_each(|p| *p = R::zero());
        for c in 0..d.c {
            let row = &xp[c * len..(c + 1) * len];
            prod[..m]
                .iter_mut()
                .zip(row[..m].iter().zip(&row[delta..]))
                .for_each(|(p, (&a, &b))| *p += a * b);
        }
        prod64[..m].iter_mut().zip(&prod[..m]).for_each(|(o, v)| *o = v.f64());
        window(&prod64[..m], &mut |j, s| {
            gram[j * k + j + delta] = s;
            gram[(j + delta) * k + j] = s;
        });
    }
    (s1, gram)
}

impl<R: Real> TemporalSpatial<R> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    /// Output `N × (F·D) × 1 × T`, equal to `dw(bn(conv(x)))`; updates the
    /// batch-norm running statistics in train mode.
    pub fn forward(
        &mut self,
        conv: &ConvTemporal<R>,
        bn: &mut BatchNorm<R>,
        dw: &DepthwiseSpatial<R>,
        x: &Tensor4<R>,
        mode: Mode,
    ) -> Result<Tensor4<R>> {
        let d = dims(x, conv, dw)?;
        if bn.maps() != d.f1 {
            return Err(Error::shape("fused block: batch norm width differs from filter count"));
        }
        if mode == Mode::Train && d.n < 2 {
            return Err(Error::invalid("train-mode batch normalization needs a batch of at least 2"));
        }
        let (w, ws) = (&conv.weight.value, &dw.weight.value);
        let train = mode == Mode::Train;
        let per_sample = par::map_range(d.n, |n| {
            let xp = padded(x.item(n), &d);
            let mut y = vec![R::zero(); d.fd * d.len];
            for m in 0..d.fd {
                let dst = &mut y[m * d.len..(m + 1) * d.len];
                for c in 0..d.c {
                    axpy(ws[m * d.c + c], &xp[c * d.len..(c + 1) * d.len], dst);
                }
            }
            let mut q = vec![R::zero(); d.fd * d.t];
            for m in 0..d.fd {
                let f = m / d.depth;
                let dst = &mut q[m * d.t..(m + 1) * d.t];
                for j in 0..d.k {
                    axpy(w[f * d.k + j], &y[m * d.len + j..m * d.len + j + d.t], dst);
                }
            }
            let stats = train.then(|| summaries(&xp, &d));
            (y, q, stats)
        });

        let count = (d.n * d.c * d.t) as f64;
        let mut y_all = Vec::with_capacity(d.n * d.fd * d.len);
        let mut q_all = Vec::with_capacity(d.n * d.fd * d.t);
        let mut s1 = vec![0.0; d.k];
        let mut gram = vec![0.0; d.k * d.k];
        for (y, q, stats) in per_sample {
            y_all.extend(y);
            q_all.extend(q);
            if let Some((s, g)) = stats {
                s1.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                gram.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            (0..d.f1)
                .map(|f| {
                    let wf: Vec<f64> = w[f * d.k..(f + 1) * d.k].iter().map(|v| v.f64()).collect();
                    let mean = wf.iter().zip(&s1).map(|(a, b)| a * b).sum::<f64>() / count;
                    let e2 = (0..d.k)
                        .map(|j| wf[j] * wf.iter().zip(&gram[j * d.k..(j + 1) * d.k]).map(|(a, b)| a * b).sum::<f64>())
                        .sum::<f64>()
                        / count;
                    (mean, (e2 - mean * mean).max(0.0))
                })
                .unzip()
        } else {
            (
                bn.running_mean.iter().map(|v| v.f64()).collect(),
                bn.running_var.iter().map(|v| v.f64()).collect(),
            )
        };
        let a: Vec<f64> = (0..d.f1).map(|f| bn.gamma.value[f].f64() / (var[f] + bn.eps).sqrt()).collect();
        let b: Vec<f64> = (0..d.f1).map(|f| bn.beta.value[f].f64() - a[f] * mean[f]).collect();
        let ws_sum: Vec<f64> = (0..d.fd).map(|m| ws[m * d.c..(m + 1) * d.c].iter().map(|v| v.f64()).sum()).collect();

        let mut out = Tensor4::zeros(d.n, d.fd, 1, d.t);
        for (i, (o, &qv)) in out.data.iter_mut().zip(&q_all).enumerate() {
            let m = (i / d.t) % d.fd;
            let f = m / d.depth;
            *o = R::of(a[f] * qv.f64() + b[f] * ws_sum[m]);
        }
        if train {
            bn.update_running(&mean, &var, d.n * d.c * d.t);
        }
        self.cache = Some(Cache { x: x.clone(), y: y_all, q: q_all, s1, gram, mean, var, a, b, train });
        Ok(out)
    }

    /// Accumulates gradients into the three layers' parameters. No input
    /// gradient is produced: this block always sits at the network input.
    pub fn backward(
        &mut self,
        conv: &mut ConvTemporal<R>,
        bn: &mut BatchNorm<R>,
        dw: &mut DepthwiseSpatial<R>,
        g: &Tensor4<R>,
    ) -> Result<()> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::invalid("fused block: backward before forward"))?;
        let d = dims(&cache.x, conv, dw)?;
        g.expect_shape(d.fd, 1, d.t, "fused block gradient")?;
        let (w, ws) = (&conv.weight.value, &dw.weight.value);
        let ws_sum: Vec<f64> = (0..d.fd).map(|m| ws[m * d.c..(m + 1) * d.c].iter().map(|v| v.f64()).sum()).collect();

        // Per sample: [dL/da (F1) | dL/db (F1) | dL/dw via q (F1·K) | Σ_s x̃·h (FD·C) | Σ_t g (FD)]
        let (o_b, o_w, o_ws, o_gs) = (d.f1, 2 * d.f1, 2 * d.f1 + d.f1 * d.k, 2 * d.f1 + d.f1 * d.k + d.fd * d.c);
        let width = o_gs + d.fd;
        let parts = par::map_range(d.n, |n| {
            let gi = g.item(n);
            let y = &cache.y[n * d.fd * d.len..(n + 1) * d.fd * d.len];
            let q = &cache.q[n * d.fd * d.t..(n + 1) * d.fd * d.t];
            let xp = padded(cache.x.item(n), &d);
            let mut acc = vec![0.0f64; width];
            let mut h = vec![R::zero(); d.len];
            for m in 0..d.fd {
                let f = m / d.depth;
                let gm = &gi[m * d.t..(m + 1) * d.t];
                let ym = &y[m * d.len..(m + 1) * d.len];
                let gsum: f64 = gm.iter().map(|v| v.f64()).sum();
                acc[f] += dot(gm, &q[m * d.t..(m + 1) * d.t]).f64();
                acc[o_b + f] += gsum * ws_sum[m];
                acc[o_gs + m] = gsum;
                h.iter_mut().for_each(|v| *v = R::zero());
                for j in 0..d.k {
                    acc[o_w + f * d.k + j] += dot(gm, &ym[j..j + d.t]).f64();
                    axpy(w[f * d.k + j], gm, &mut h[j..j + d.t]);
                }
                for c in 0..d.c {
                    acc[o_ws + m * d.c + c] = dot(&xp[c * d.len..(c + 1) * d.len], &h).f64();
                }
            }
            acc
        });
        let mut tot = vec![0.0f64; width];
        for p in parts {
            tot.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }

        let count = (d.n * d.c * d.t) as f64;
        for f in 0..d.f1 {
            let (ga, gb) = (tot[f], tot[o_b + f]);
            let (mean, var, a) = (cache.mean[f], cache.var[f], cache.a[f]);
            let sigma = (var + bn.eps).sqrt();
            bn.gamma.grad[f] += R::of((ga - gb * mean) / sigma);
            bn.beta.grad[f] += R::of(gb);
            let wf: Vec<f64> = w[f * d.k..(f + 1) * d.k].iter().map(|v| v.f64()).collect();
            let (d_mean, d_e2) = if cache.train {
                let d_var = (ga - gb * mean) * (-a / (2.0 * (var + bn.eps)));
                (-a * gb - 2.0 * mean * d_var, d_var)
            } else {
                (0.0, 0.0)
            };
            for j in 0..d.k {
                let mut gj = a * tot[o_w + f * d.k + j];
                if cache.train {
                    let gw: f64 = wf.iter().zip(&cache.gram[j * d.k..(j + 1) * d.k]).map(|(x, y)| x * y).sum();
                    gj += d_mean * cache.s1[j] / count + d_e2 * 2.0 * gw / count;
                }
                conv.weight.grad[f * d.k + j] += R::of(gj);
            }
        }
        for m in 0..d.fd {
            let f = m / d.depth;
            for c in 0..d.c {
                let v = cache.a[f] * tot[o_ws + m * d.c + c] + cache.b[f] * tot[o_gs + m];
                dw.weight.grad[m * d.c + c] += R::of(v);
            }
        }
        Ok(())
    }
}
