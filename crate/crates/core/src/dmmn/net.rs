//! Three-stream multi-magnification U-Net.
//!
//! Each stream is a U-Net with `D` pooling levels; level `l` has
//! `B·2^l` channels and the bottleneck `B·2^D`. A level is a double 3×3
//! convolution with ReLU; downsampling is 2×2 max pooling, upsampling is
//! nearest ×2 followed by concatenation with the skip connection. At every
//! decoder level of the 20× stream, the 10× and 5× decoder maps of the same
//! level are center-cropped to the 20× field of view (central 1/2 and 1/4),
//! upsampled back to the 20× map size and concatenated as extra channels.
//! A 1×1 convolution on the last 20× decoder map gives the class logits.
//!
//! Parameter order (also the checkpoint tensor order): streams 20×, 10×,
//! 5×; within a stream the encoder levels, bottleneck, then decoder levels
//! from deepest to shallowest, each as conv1 weight, conv1 bias, conv2
//! weight, conv2 bias; finally the head weight and bias. Weights are
//! `[cout, cin, k, k]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_sum;
use super::ops::*;
use super::tensor::{Real, Tensor};
use crate::class::NUM_CLASSES;
use crate::error::{DialError, Result};
use crate::patch::{LossWeights, PatchRecord};
use crate::raster::LabelRaster;
use crate::seed::SeedBuilder;

pub const INIT_SCHEME: &str = "glorot_uniform";
const STREAMS: [&str; 3] = ["s20", "s10", "s5"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmmnConfig {
    pub patch_size: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub n_classes: usize,
    pub rng_seed: u64,
}

impl Default for DmmnConfig {
    fn default() -> Self {
        DmmnConfig::new(256, 16, 4, 0)
    }
}

impl DmmnConfig {
    pub fn new(patch_size: usize, base_channels: usize, depth: usize, rng_seed: u64) -> Self {
        DmmnConfig {
            patch_size,
            base_channels,
            depth,
            n_classes: NUM_CLASSES,
            rng_seed,
        }
    }

    pub fn test_scale(rng_seed: u64) -> Self {
        DmmnConfig::new(64, 4, 2, rng_seed)
    }

    pub fn tiny(rng_seed: u64) -> Self {
        DmmnConfig::new(16, 2, 2, rng_seed)
    }

    /// The 5× crop at the deepest decoder level takes the central quarter of
    /// a `P / 2^(D-1)` map and must stay centered on whole pixels, so `P`
    /// needs `2^(D+2)` as a divisor.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DialError::InvalidConfig(m));
        if self.base_channels < 2 {
            return bad(format!("base_channels {} < 2", self.base_channels));
        }
        if self.depth < 2 {
            return bad(format!("depth {} < 2", self.depth));
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes {} < 2", self.n_classes));
        }
        let unit = 1usize << (self.depth + 2);
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(unit) {
            return bad(format!(
                "patch_size {} must be a positive multiple of {unit} at depth {}",
                self.patch_size, self.depth
            ));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(Arch::build(self).len)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug)]
struct StreamArch {
    enc: Vec<(ConvSpec, ConvSpec)>,
    bottleneck: (ConvSpec, ConvSpec),
    /// Indexed by level, 0 = shallowest.
    dec: Vec<(ConvSpec, ConvSpec)>,
}

#[derive(Clone, Debug)]
struct Arch {
    streams: Vec<StreamArch>,
    head: ConvSpec,
    tensors: Vec<TensorInfo>,
    len: usize,
}

impl Arch {
    fn build(cfg: &DmmnConfig) -> Arch {
        let mut len = 0;
        let mut tensors = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
            let w_off = len;
            len += cout * cin * k * k;
            let b_off = len;
            len += cout;
            tensors.push(TensorInfo {
                name: format!("{name}.weight"),
                shape: vec![cout, cin, k, k],
            });
            tensors.push(TensorInfo {
                name: format!("{name}.bias"),
                shape: vec![cout],
            });
            ConvSpec {
                cin,
                cout,
                k,
                w_off,
                b_off,
            }
        };
        let d = cfg.depth;
        let ch = |l: usize| cfg.channels(l);
        let mut streams = Vec::new();
        for (s, tag) in STREAMS.iter().enumerate() {
            let fused = if s == 0 { 2 } else { 0 };
            let mut pair = |name: String, cin: usize, cout: usize| {
                (
                    conv(format!("{name}.conv1"), cin, cout, 3),
                    conv(format!("{name}.conv2"), cout, cout, 3),
                )
            };
            let enc = (0..d)
                .map(|l| {
                    pair(
                        format!("{tag}.enc{l}"),
                        if l == 0 { 3 } else { ch(l - 1) },
                        ch(l),
                    )
                })
                .collect();
            let bottleneck = pair(format!("{tag}.bottleneck"), ch(d - 1), ch(d));
            let mut dec: Vec<_> = (0..d)
                .rev()
                .map(|l| {
                    pair(
                        format!("{tag}.dec{l}"),
                        ch(l + 1) + ch(l) * (1 + fused),
                        ch(l),
                    )
                })
                .collect();
            dec.reverse();
            streams.push(StreamArch {
                enc,
                bottleneck,
                dec,
            });
        }
        let head = conv("head".into(), ch(0), cfg.n_classes, 1);
        Arch {
            streams,
            head,
            tensors,
            len,
        }
    }

    fn convs(&self) -> Vec<ConvSpec> {
        let mut out = Vec::new();
        for s in &self.streams {
            let pairs = s
                .enc
                .iter()
                .chain([&s.bottleneck])
                .chain(s.dec.iter().rev());
            for (a, b) in pairs {
                out.push(*a);
                out.push(*b);
            }
        }
        out.push(self.head);
        out
    }
}

/// The three magnifications of one patch as `3 × P × P` tensors in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchInput<F> {
    pub x20: Tensor<F>,
    pub x10: Tensor<F>,
    pub x5: Tensor<F>,
}

impl<F: Real> PatchInput<F> {
    pub fn from_record(p: &PatchRecord) -> Self {
        PatchInput {
            x20: Tensor::from_rgb(&p.img20),
            x10: Tensor::from_rgb(&p.img10),
            x5: Tensor::from_rgb(&p.img5),
        }
    }
}

struct DoubleConv<F> {
    input: Tensor<F>,
    mid: Tensor<F>,
    out: Tensor<F>,
}

struct StreamTrace<F> {
    enc: Vec<DoubleConv<F>>,
    pool: Vec<Vec<u32>>,
    bottleneck: DoubleConv<F>,
    dec: Vec<DoubleConv<F>>,
}

#[derive(Clone, Debug)]
pub struct Network<F> {
    config: DmmnConfig,
    arch: Arch,
    params: Vec<F>,
}

pub type DmmnModel = Network<f32>;

impl<F: Real> PartialEq for Network<F> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl<F: Real> Network<F> {
    /// Glorot-uniform weights, zero biases, drawn from `config.rng_seed`.
    pub fn new(config: DmmnConfig) -> Result<Self> {
        let mut net = Network::zeroed(config)?;
        let mut rng = SeedBuilder::new("dmmn-init").u64(config.rng_seed).rng();
        for spec in net.arch.convs() {
            let fan_in = spec.cin * spec.k * spec.k;
            let fan_out = spec.cout * spec.k * spec.k;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[spec.w_off..spec.w_off + spec.weight_len()] {
                *w = F::of(rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn zeroed(config: DmmnConfig) -> Result<Self> {
        config.validate()?;
        let arch = Arch::build(&config);
        let params = vec![F::zero(); arch.len];
        Ok(Network {
            config,
            arch,
            params,
        })
    }

    pub fn from_params(config: DmmnConfig, params: Vec<F>) -> Result<Self> {
        let mut net = Network::zeroed(config)?;
        if params.len() != net.params.len() {
            return Err(DialError::Shape(format!(
                "{} parameters given, config needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &DmmnConfig {
        &self.config
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.arch.tensors
    }

    /// Offset and length of the named tensor in the flat parameter vector.
    pub fn tensor_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut off = 0;
        for t in &self.arch.tensors {
            let n: usize = t.shape.iter().product();
            if t.name == name {
                return Some(off..off + n);
            }
            off += n;
        }
        None
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            config: self.config,
            arch: self.arch.clone(),
            params: self.params.iter().map(|v| G::of(v.f64())).collect(),
        }
    }

    fn check_input(&self, input: &PatchInput<F>) -> Result<()> {
        let p = self.config.patch_size;
        for (name, t) in [("20x", &input.x20), ("10x", &input.x10), ("5x", &input.x5)] {
            if t.shape() != (3, p, p) {
                return Err(DialError::Shape(format!(
                    "{name} input is {:?}, expected (3, {p}, {p})",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn double_conv(&self, pair: &(ConvSpec, ConvSpec), input: Tensor<F>) -> DoubleConv<F> {
        let mut mid = conv_forward(&input, &pair.0, &self.params);
        relu_inplace(&mut mid);
        let mut out = conv_forward(&mid, &pair.1, &self.params);
        relu_inplace(&mut out);
        DoubleConv { input, mid, out }
    }

    fn double_conv_backward(
        &self,
        pair: &(ConvSpec, ConvSpec),
        dc: &DoubleConv<F>,
        mut g: Tensor<F>,
        grads: &mut [F],
        need_input: bool,
    ) -> Option<Tensor<F>> {
        relu_backward(&mut g, &dc.out);
        let mut gm = conv_backward(&dc.mid, &pair.1, &self.params, &g, grads, true)?;
        relu_backward(&mut gm, &dc.mid);
        conv_backward(&dc.input, &pair.0, &self.params, &gm, grads, need_input)
    }

    fn stream_forward(&self, s: usize, x: Tensor<F>, fusion: &[Vec<Tensor<F>>]) -> StreamTrace<F> {
        let sa = &self.arch.streams[s];
        let d = self.config.depth;
        let mut enc = Vec::with_capacity(d);
        let mut pool = Vec::with_capacity(d);
        let mut x = x;
        for pair in &sa.enc {
            let dc = self.double_conv(pair, x);
            let (p, arg) = maxpool2(&dc.out);
            enc.push(dc);
            pool.push(arg);
            x = p;
        }
        let bottleneck = self.double_conv(&sa.bottleneck, x);
        let mut dec: Vec<Option<DoubleConv<F>>> = (0..d).map(|_| None).collect();
        for l in (0..d).rev() {
            let up = match dec.get(l + 1) {
                Some(Some(above)) => upsample(&above.out, 2),
                _ => upsample(&bottleneck.out, 2),
            };
            let mut parts = vec![&up, &enc[l].out];
            if let Some(extra) = fusion.get(l) {
                parts.extend(extra.iter());
            }
            let cat = Tensor::concat(&parts);
            dec[l] = Some(self.double_conv(&sa.dec[l], cat));
        }
        StreamTrace {
            enc,
            pool,
            bottleneck,
            dec: dec
                .into_iter()
                .map(|x| x.expect("every level filled"))
                .collect(),
        }
    }

    fn trace(&self, input: &PatchInput<F>) -> (Vec<StreamTrace<F>>, Tensor<F>) {
        let t10 = self.stream_forward(1, input.x10.clone(), &[]);
        let t5 = self.stream_forward(2, input.x5.clone(), &[]);
        let p = self.config.patch_size;
        let fusion: Vec<Vec<Tensor<F>>> = (0..self.config.depth)
            .map(|l| {
                let s = p >> l;
                vec![
                    upsample(&crop_center(&t10.dec[l].out, s / 2), 2),
                    upsample(&crop_center(&t5.dec[l].out, s / 4), 4),
                ]
            })
            .collect();
        let t20 = self.stream_forward(0, input.x20.clone(), &fusion);
        let logits = conv_forward(&t20.dec[0].out, &self.arch.head, &self.params);
        (vec![t20, t10, t5], logits)
    }

    /// Class logits, `n_classes × P × P`.
    pub fn forward(&self, input: &PatchInput<F>) -> Result<Tensor<F>> {
        self.check_input(input)?;
        Ok(self.trace(input).1)
    }

    /// ReLU on/off states and max-pool winners of one forward pass. Within
    /// a region of parameter space where this stays fixed the network is
    /// affine in any single parameter.
    pub fn activation_pattern(&self, input: &PatchInput<F>) -> Result<Vec<u32>> {
        self.check_input(input)?;
        let (traces, _) = self.trace(input);
        let mut out = Vec::new();
        for t in &traces {
            let convs = t.enc.iter().chain([&t.bottleneck]).chain(&t.dec);
            for dc in convs {
                for v in dc.mid.data.iter().chain(&dc.out.data) {
                    out.push((*v > F::zero()) as u32);
                }
            }
            for arg in &t.pool {
                out.extend_from_slice(arg);
            }
        }
        Ok(out)
    }

    /// Per-pixel argmax of the logits (lowest class index on ties).
    pub fn predict(&self, input: &PatchInput<F>) -> Result<LabelRaster> {
        Ok(argmax(&self.forward(input)?))
    }

    fn stream_backward(
        &self,
        s: usize,
        trace: &StreamTrace<F>,
        mut extra: Vec<Option<Tensor<F>>>,
        grads: &mut [F],
        n_fused: usize,
    ) -> Vec<Vec<Tensor<F>>> {
        let sa = &self.arch.streams[s];
        let d = self.config.depth;
        let mut skip = Vec::with_capacity(d);
        let mut fusion = Vec::with_capacity(d);
        let mut from_above: Option<Tensor<F>> = None;
        for l in 0..d {
            let g = match (extra[l].take(), from_above.take()) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => {
                    let (c, h, w) = trace.dec[l].out.shape();
                    Tensor::zeros(c, h, w)
                }
            };
            let gin = self
                .double_conv_backward(&sa.dec[l], &trace.dec[l], g, grads, true)
                .expect("input gradient requested");
            let c = self.config.channels(l);
            let mut widths = vec![self.config.channels(l + 1), c];
            widths.extend(std::iter::repeat_n(c, n_fused));
            let mut parts = gin.split(&widths).into_iter();
            let g_up = parts.next().expect("up part");
            skip.push(parts.next().expect("skip part"));
            fusion.push(parts.collect());
            from_above = Some(upsample_backward(&g_up, 2));
        }
        let mut g = self
            .double_conv_backward(
                &sa.bottleneck,
                &trace.bottleneck,
                from_above.expect("depth >= 1"),
                grads,
                true,
            )
            .expect("input gradient requested");
        for l in (0..d).rev() {
            let mut ge = maxpool2_backward(&g, &trace.pool[l], trace.enc[l].out.shape());
            ge.add_assign(&skip[l]);
            match self.double_conv_backward(&sa.enc[l], &trace.enc[l], ge, grads, l > 0) {
                Some(gi) => g = gi,
                None => break,
            }
        }
        fusion
    }

    /// Loss of one sample scaled by `scale` (the caller's `1 / N_labeled`),
    /// with its gradient added into `grads`. Returns the unscaled weighted
    /// loss sum and the labeled pixel count.
    pub fn accumulate_gradient(
        &self,
        input: &PatchInput<F>,
        target: &LabelRaster,
        weights: &LossWeights,
        scale: f64,
        grads: &mut [F],
    ) -> Result<(f64, u64)> {
        self.check_input(input)?;
        if grads.len() != self.params.len() {
            return Err(DialError::Shape("gradient buffer size".into()));
        }
        let (traces, logits) = self.trace(input);
        let mut dlogits = Tensor::zeros(logits.c, logits.h, logits.w);
        let (sum, n) = loss_sum(&logits, target, weights, Some((&mut dlogits, scale)))?;
        let [t20, t10, t5]: [StreamTrace<F>; 3] = traces.try_into().ok().expect("three streams");
        let g0 = conv_backward(
            &t20.dec[0].out,
            &self.arch.head,
            &self.params,
            &dlogits,
            grads,
            true,
        );
        let d = self.config.depth;
        let mut extra: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
        extra[0] = g0;
        let fusion = self.stream_backward(0, &t20, extra, grads, 2);
        let p = self.config.patch_size;
        let mut e10 = Vec::with_capacity(d);
        let mut e5 = Vec::with_capacity(d);
        for (l, f) in fusion.iter().enumerate() {
            let s = p >> l;
            e10.push(Some(crop_center_backward(
                &upsample_backward(&f[0], 2),
                s,
                s,
            )));
            e5.push(Some(crop_center_backward(
                &upsample_backward(&f[1], 4),
                s,
                s,
            )));
        }
        self.stream_backward(1, &t10, e10, grads, 0);
        self.stream_backward(2, &t5, e5, grads, 0);
        Ok((sum, n))
    }

    /// Mean loss of one sample and its full gradient.
    pub fn loss_and_gradient(
        &self,
        input: &PatchInput<F>,
        target: &LabelRaster,
        weights: &LossWeights,
    ) -> Result<(f64, Vec<F>)> {
        let n = target.labeled_count();
        if n == 0 {
            return Err(DialError::NoLabeledPixels);
        }
        let mut grads = vec![F::zero(); self.params.len()];
        let (sum, _) =
            self.accumulate_gradient(input, target, weights, 1.0 / n as f64, &mut grads)?;
        Ok((sum / n as f64, grads))
    }
}

pub fn argmax<F: Real>(logits: &Tensor<F>) -> LabelRaster {
    let n = logits.plane_len();
    let mut best = vec![0u8; n];
    let mut top: Vec<F> = logits.plane(0).to_vec();
    for c in 1..logits.c {
        for ((b, t), &v) in best.iter_mut().zip(top.iter_mut()).zip(logits.plane(c)) {
            if v > *t {
                *t = v;
                *b = c as u8;
            }
        }
    }
    LabelRaster::from_raw(logits.w, logits.h, best).expect("class indices are valid labels")
}
