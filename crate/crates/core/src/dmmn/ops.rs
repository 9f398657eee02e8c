//! Layer kernels with hand-written backward passes. Convolutions are
//! stride 1 with "same" zero padding; 3×3 kernels run as fused row passes.

use super::tensor::{Real, Tensor};

/// Location of one convolution's weights (`[cout, cin, k, k]`) and biases
/// inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out[x] += w0·inp[x-1] + w1·inp[x] + w2·inp[x+1]`, zero outside.
#[inline]
fn row_conv3<F: Real>(out: &mut [F], inp: &[F], w0: F, w1: F, w2: F) {
    let n = out.len();
    if n == 1 {
        out[0] += w1 * inp[0];
        return;
    }
    out[0] += w1 * inp[0] + w2 * inp[1];
    let mid = out[1..n - 1]
        .iter_mut()
        .zip(inp[..n - 2].iter().zip(&inp[1..n - 1]).zip(&inp[2..n]));
    for (o, ((&a, &b), &c)) in mid {
        *o += w0 * a + w1 * b + w2 * c;
    }
    out[n - 1] += w0 * inp[n - 2] + w1 * inp[n - 1];
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = F::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    acc.iter().fold(s, |t, &v| t + v)
}

/// Output rows `y` whose source row `y + dy` lies inside `[0, h)`.
fn rows(dy: isize, h: usize) -> std::ops::Range<usize> {
    match dy {
        -1 => 1..h,
        0 => 0..h,
        _ => 0..h.saturating_sub(1),
    }
}

pub fn conv_forward<F: Real>(input: &Tensor<F>, spec: &ConvSpec, params: &[F]) -> Tensor<F> {
    debug_assert_eq!(input.c, spec.cin);
    let (h, w) = (input.h, input.w);
    let mut out = Tensor::zeros(spec.cout, h, w);
    let kk = spec.k * spec.k;
    for co in 0..spec.cout {
        let plane = out.plane_mut(co);
        plane.fill(params[spec.b_off + co]);
        for ci in 0..spec.cin {
            let inp = input.plane(ci);
            let wb = spec.w_off + (co * spec.cin + ci) * kk;
            if spec.k == 1 {
                axpy(plane, params[wb], inp);
                continue;
            }
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let k = &params[wb + ky * 3..wb + ky * 3 + 3];
                for y in rows(dy, h) {
                    let sy = (y as isize + dy) as usize;
                    row_conv3(
                        &mut plane[y * w..(y + 1) * w],
                        &inp[sy * w..(sy + 1) * w],
                        k[0],
                        k[1],
                        k[2],
                    );
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `grads`; returns the input
/// gradient when `need_input` is set.
pub fn conv_backward<F: Real>(
    input: &Tensor<F>,
    spec: &ConvSpec,
    params: &[F],
    grad_out: &Tensor<F>,
    grads: &mut [F],
    need_input: bool,
) -> Option<Tensor<F>> {
    let (h, w) = (input.h, input.w);
    let mut gin = need_input.then(|| Tensor::zeros(spec.cin, h, w));
    let kk = spec.k * spec.k;
    for co in 0..spec.cout {
        let g = grad_out.plane(co);
        grads[spec.b_off + co] += g.iter().copied().sum::<F>();
        for ci in 0..spec.cin {
            let inp = input.plane(ci);
            let wb = spec.w_off + (co * spec.cin + ci) * kk;
            if spec.k == 1 {
                grads[wb] += dot(g, inp);
                if let Some(gin) = gin.as_mut() {
                    axpy(gin.plane_mut(ci), params[wb], g);
                }
                continue;
            }
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (mut s0, mut s1, mut s2) = (F::zero(), F::zero(), F::zero());
                for y in rows(dy, h) {
                    let sy = (y as isize + dy) as usize;
                    let grow = &g[y * w..(y + 1) * w];
                    let irow = &inp[sy * w..(sy + 1) * w];
                    s0 += dot(&grow[1..], &irow[..w - 1]);
                    s1 += dot(grow, irow);
                    s2 += dot(&grow[..w - 1], &irow[1..]);
                }
                let o = wb + ky * 3;
                grads[o] += s0;
                grads[o + 1] += s1;
                grads[o + 2] += s2;
                if let Some(gin) = gin.as_mut() {
                    let (w0, w1, w2) = (params[o], params[o + 1], params[o + 2]);
                    let gp = gin.plane_mut(ci);
                    for y in rows(dy, h) {
                        let sy = (y as isize + dy) as usize;
                        // Transposed convolution: the kernel row is mirrored.
                        row_conv3(
                            &mut gp[sy * w..(sy + 1) * w],
                            &g[y * w..(y + 1) * w],
                            w2,
                            w1,
                            w0,
                        );
                    }
                }
            }
        }
    }
    gin
}

pub fn relu_inplace<F: Real>(t: &mut Tensor<F>) {
    for v in &mut t.data {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Zeroes `grad` where the ReLU output was not positive.
pub fn relu_backward<F: Real>(grad: &mut Tensor<F>, out: &Tensor<F>) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= F::zero() {
            *g = F::zero();
        }
    }
}

/// 2×2 max pooling; returns the pooled map and, per output cell, the flat
/// input index of the winner (first maximum in row-major order).
pub fn maxpool2<F: Real>(input: &Tensor<F>) -> (Tensor<F>, Vec<u32>) {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (ch * h + 2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * y + dy) * w + 2 * x + dx;
                    if input.data[i] > input.data[best] {
                        best = i;
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out.data[o] = input.data[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<F: Real>(
    grad: &Tensor<F>,
    arg: &[u32],
    shape: (usize, usize, usize),
) -> Tensor<F> {
    let mut gin = Tensor::zeros(shape.0, shape.1, shape.2);
    for (&g, &i) in grad.data.iter().zip(arg) {
        gin.data[i as usize] += g;
    }
    gin
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample<F: Real>(input: &Tensor<F>, f: usize) -> Tensor<F> {
    let (c, h, w) = input.shape();
    let mut out = Tensor::zeros(c, h * f, w * f);
    let ow = w * f;
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h * f {
            let srow = &src[(y / f) * w..(y / f + 1) * w];
            let drow = &mut dst[y * ow..(y + 1) * ow];
            for (x, d) in drow.iter_mut().enumerate() {
                *d = srow[x / f];
            }
        }
    }
    out
}

pub fn upsample_backward<F: Real>(grad: &Tensor<F>, f: usize) -> Tensor<F> {
    let (c, gh, gw) = grad.shape();
    let (h, w) = (gh / f, gw / f);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = grad.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..gh {
            let drow = &mut dst[(y / f) * w..(y / f + 1) * w];
            for (x, &g) in src[y * gw..(y + 1) * gw].iter().enumerate() {
                drow[x / f] += g;
            }
        }
    }
    out
}

/// Central `size × size` window; the offset is `(h - size) / 2`.
pub fn crop_center<F: Real>(input: &Tensor<F>, size: usize) -> Tensor<F> {
    let (c, h, w) = input.shape();
    let (oy, ox) = ((h - size) / 2, (w - size) / 2);
    let mut out = Tensor::zeros(c, size, size);
    for ch in 0..c {
        let src = input.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..size {
            let s = (oy + y) * w + ox;
            dst[y * size..(y + 1) * size].copy_from_slice(&src[s..s + size]);
        }
    }
    out
}

pub fn crop_center_backward<F: Real>(grad: &Tensor<F>, h: usize, w: usize) -> Tensor<F> {
    let (c, size, _) = grad.shape();
    let (oy, ox) = ((h - size) / 2, (w - size) / 2);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = grad.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..size {
            let d = (oy + y) * w + ox;
            dst[d..d + size].copy_from_slice(&src[y * size..(y + 1) * size]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    fn naive_conv(input: &Tensor<f64>, spec: &ConvSpec, params: &[f64]) -> Tensor<f64> {
        let (h, w) = (input.h as isize, input.w as isize);
        let p = (spec.k / 2) as isize;
        let mut out = Tensor::zeros(spec.cout, input.h, input.w);
        for co in 0..spec.cout {
            for y in 0..h {
                for x in 0..w {
                    let mut s = params[spec.b_off + co];
                    for ci in 0..spec.cin {
                        for ky in 0..spec.k as isize {
                            for kx in 0..spec.k as isize {
                                let (sy, sx) = (y + ky - p, x + kx - p);
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                let wi = spec.w_off
                                    + ((co * spec.cin + ci) * spec.k + ky as usize) * spec.k
                                    + kx as usize;
                                s += params[wi] * input.at(ci, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.data[(co * input.h + y as usize) * input.w + x as usize] = s;
                }
            }
        }
        out
    }

    fn spec(cin: usize, cout: usize, k: usize) -> (ConvSpec, Vec<f64>) {
        let s = ConvSpec {
            cin,
            cout,
            k,
            w_off: 0,
            b_off: cout * cin * k * k,
        };
        let p = random(1, 1, s.b_off + cout, 99).data;
        (s, p)
    }

    #[test]
    fn conv_matches_naive() {
        for (k, hw) in [(3, 5), (3, 1), (3, 2), (1, 4)] {
            let (s, p) = spec(3, 4, k);
            let x = random(3, hw, hw + 1, 1);
            let fast = conv_forward(&x, &s, &p);
            let slow = naive_conv(&x, &s, &p);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <conv(x) - b, g> = <x, gin> and = <w, gw> for a linear map.
        for k in [1, 3] {
            let (s, p) = spec(2, 3, k);
            let x = random(2, 6, 5, 2);
            let g = random(3, 6, 5, 3);
            let mut grads = vec![0.0; p.len()];
            let gin = conv_backward(&x, &s, &p, &g, &mut grads, true).unwrap();
            let y = conv_forward(&x, &s, &p);
            let mut lhs = 0.0;
            for co in 0..3 {
                for (i, &v) in y.plane(co).iter().enumerate() {
                    lhs += (v - p[s.b_off + co]) * g.plane(co)[i];
                }
            }
            let via_input: f64 = x.data.iter().zip(&gin.data).map(|(a, b)| a * b).sum();
            let via_weights: f64 = p[..s.b_off]
                .iter()
                .zip(&grads[..s.b_off])
                .map(|(a, b)| a * b)
                .sum();
            assert!((lhs - via_input).abs() < 1e-10);
            assert!((lhs - via_weights).abs() < 1e-10);
            let gsum: f64 = g.plane(1).iter().sum();
            assert!((grads[s.b_off + 1] - gsum).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_upsample_crop_adjoints() {
        let x = random(2, 8, 8, 4);
        let (p, arg) = maxpool2(&x);
        assert_eq!(
            p.at(1, 0, 0),
            [x.at(1, 0, 0), x.at(1, 0, 1), x.at(1, 1, 0), x.at(1, 1, 1)]
                .into_iter()
                .fold(f64::MIN, f64::max)
        );
        let g = random(2, 4, 4, 5);
        let gin = maxpool2_backward(&g, &arg, x.shape());
        assert!((gin.data.iter().sum::<f64>() - g.data.iter().sum::<f64>()).abs() < 1e-12);

        let u = upsample(&p, 2);
        assert_eq!(u.at(0, 3, 5), p.at(0, 1, 2));
        let gu = random(2, 8, 8, 6);
        let back = upsample_backward(&gu, 2);
        let lhs: f64 = u.data.iter().zip(&gu.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = p.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let c = crop_center(&x, 2);
        assert_eq!(c.at(0, 0, 0), x.at(0, 3, 3));
        let gc = crop_center_backward(&c, 8, 8);
        assert_eq!(gc.at(0, 4, 4), x.at(0, 4, 4));
        assert_eq!(gc.at(0, 0, 0), 0.0);
    }
}
