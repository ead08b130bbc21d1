//! Minimal reverse-mode engine: exactly the layers, loss and optimizer the
//! compact CNN needs. Each layer caches what its backward pass needs during
//! `forward`; `backward` accumulates parameter gradients and returns the
//! gradient with respect to its input.
//!
//! Layers are generic over [`Real`] so gradients can be checked in `f64`
//! while training runs in `f32`. Work is split across the batch; per-sample
//! parameter gradients are summed in sample order, so results do not depend
//! on the thread count.

mod adam;
mod fused;
pub mod gradcheck;
mod layers;
mod loss;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

pub use adam::{adam_step, max_norm_project, AdamState};
pub use fused::TemporalSpatial;
pub use layers::{
    AvgPool, BatchNorm, ConvTemporal, DenseSigmoid, DepthwiseSpatial, Dropout, Elu, SeparableConv,
};
pub use loss::{bce_loss, bce_with_logits, sigmoid, P_CLAMP};

pub trait Real:
    Float + FromPrimitive + Send + Sync + Debug + Default + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense N × F × H × W tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<R> {
    pub n: usize,
    pub f: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<R>,
}

impl<R: Real> Tensor4<R> {
    pub fn zeros(n: usize, f: usize, h: usize, w: usize) -> Self {
        Self { n, f, h, w, data: vec![R::zero(); n * f * h * w] }
    }

    pub fn from_vec(n: usize, f: usize, h: usize, w: usize, data: Vec<R>) -> Result<Self> {
        if n == 0 || f == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("tensor dimensions must be positive: {n}×{f}×{h}×{w}")));
        }
        if data.len() != n * f * h * w {
            return Err(Error::shape(format!("{} values for a {n}×{f}×{h}×{w} tensor", data.len())));
        }
        Ok(Self { n, f, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.f, self.h, self.w]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.f * self.h * self.w
    }

    pub fn item(&self, i: usize) -> &[R] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub(crate) fn expect_shape(&self, f: usize, h: usize, w: usize, what: &str) -> Result<()> {
        if self.f != f || self.h != h || self.w != w {
            return Err(Error::shape(format!(
                "{what}: expected N×{f}×{h}×{w}, got {}×{}×{}×{}",
                self.n, self.f, self.h, self.w
            )));
        }
        Ok(())
    }
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<R> {
    pub name: String,
    pub value: Vec<R>,
    pub grad: Vec<R>,
}

impl<R: Real> Param<R> {
    pub fn new(name: impl Into<String>, value: Vec<R>) -> Self {
        let grad = vec![R::zero(); value.len()];
        Self { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = R::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns trainable parameters and persistent buffers.
pub trait HasParams<R: Real> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<R>));

    /// Non-trainable state (batch-norm running statistics).
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut Vec<R>)) {}

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn n_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    fn n_buffer_values(&mut self) -> usize {
        let mut n = 0;
        self.visit_buffers(&mut |_, b| n += b.len());
        n
    }

    /// Parameter values then buffers, flattened in visit order.
    fn export_state(&mut self) -> Vec<R> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.value));
        self.visit_buffers(&mut |_, b| out.extend_from_slice(b));
        out
    }

    /// Inverse of [`HasParams::export_state`].
    fn import_state(&mut self, state: &[R]) -> crate::error::Result<()> {
        let total = self.n_params() + self.n_buffer_values();
        if state.len() != total {
            return Err(crate::error::Error::shape(format!("state has {} values, model {total}", state.len())));
        }
        let mut at = 0;
        self.visit_params(&mut |p| {
            let n = p.value.len();
            p.value.copy_from_slice(&state[at..at + n]);
            at += n;
        });
        self.visit_buffers(&mut |_, b| {
            let n = b.len();
            b.copy_from_slice(&state[at..at + n]);
            at += n;
        });
        Ok(())
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
#[inline]
pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [R::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = R::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha · x`.
#[inline]
pub(crate) fn axpy<R: Real>(alpha: R, x: &[R], y: &mut [R]) {
    y.iter_mut().zip(x).for_each(|(y, &x)| *y += alpha * x);
}

/// Sums per-sample gradient vectors in sample order.
pub(crate) fn sum_in_order<R: Real>(parts: Vec<Vec<R>>, len: usize) -> Vec<R> {
    let mut total = vec![R::zero(); len];
    for p in parts {
        total.iter_mut().zip(&p).for_each(|(t, &v)| *t += v);
    }
    total
}

/// Same-padding split for a kernel of `k` taps: the extra tap of an even
/// kernel pads on the right.
pub fn same_padding(k: usize) -> (usize, usize) {
    let left = (k - 1) / 2;
    (left, k - 1 - left)
}
