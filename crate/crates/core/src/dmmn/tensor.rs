use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{DialError, Result};
use crate::raster::RgbImage;

/// Scalar type for network numerics: `f32` for training, `f64` for checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Channel-major `c × h × w` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![F::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(DialError::Shape(format!(
                "{} values for a {c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Tensor { c, h, w, data })
    }

    /// RGB image scaled to `[0, 1]`.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dims();
        let mut t = Tensor::zeros(3, h, w);
        let scale = F::of(1.0 / 255.0);
        let n = w * h;
        for (i, px) in img.as_raw().chunks_exact(3).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                t.data[c * n + i] = F::of(v as f64) * scale;
            }
        }
        t
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, c: usize) -> &[F] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [F] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> F {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks along the channel axis; all parts must share `h × w`.
    pub fn concat(parts: &[&Tensor<F>]) -> Self {
        let (h, w) = (parts[0].h, parts[0].w);
        let c = parts.iter().map(|p| p.c).sum();
        let mut data = Vec::with_capacity(c * h * w);
        for p in parts {
            debug_assert_eq!((p.h, p.w), (h, w));
            data.extend_from_slice(&p.data);
        }
        Tensor { c, h, w, data }
    }

    /// Inverse of `concat`: splits into consecutive channel groups.
    pub fn split(&self, channels: &[usize]) -> Vec<Tensor<F>> {
        let n = self.plane_len();
        let mut out = Vec::with_capacity(channels.len());
        let mut start = 0;
        for &c in channels {
            out.push(Tensor {
                c,
                h: self.h,
                w: self.w,
                data: self.data[start * n..(start + c) * n].to_vec(),
            });
            start += c;
        }
        debug_assert_eq!(start, self.c);
        out
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| G::of(v.f64())).collect(),
        }
    }
}
