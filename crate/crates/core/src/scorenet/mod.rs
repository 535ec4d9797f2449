//! Time-conditioned 1-D encoder-decoder score network.
//!
//! Input and output are `2 x N` maps (lateral offset and yaw channels over the
//! station axis). Each resolution level is a block of two circular
//! convolutions with group normalization and SiLU; the time embedding enters
//! every block additively after the first normalization. Encoder levels are
//! joined by average pooling, decoder levels by nearest upsampling and skip
//! concatenation. The head output is divided by the marginal standard
//! deviation of the forward process.

mod checkpoint;
pub mod layers;
mod oracle;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::schedule::NoiseSchedule;
use crate::{Error, Result};
use layers::*;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use layers::Scalar;
pub use oracle::{AnalyticScoreOracle, OracleKind, ScoreModel, StandardNormalScore};
pub use train::{dsm_draws, dsm_loss, dsm_loss_value, model_digest, train, train_with, write_history, Adam, DsmDraw, TrainConfig, TrainReport};

/// Floor on the output scaling `sqrt(1 - beta_bar^2)`.
pub const MIN_SIGMA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    /// Channel width per resolution level, finest first.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub groups: usize,
    pub fourier_dim: usize,
    pub fourier_scale: f64,
    pub embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 128],
            kernel: 5,
            groups: 8,
            fourier_dim: 32,
            fourier_scale: 30.0,
            embed_dim: 64,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("architecture: {m}")));
        if self.channels.is_empty() {
            return bad("at least one level");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        if self.groups == 0 || self.channels.iter().any(|&c| c == 0 || c % self.groups != 0) {
            return bad("groups must divide every channel width");
        }
        if self.fourier_dim == 0 || self.fourier_dim % 2 != 0 || self.embed_dim == 0 {
            return bad("fourier_dim must be even and positive");
        }
        Ok(())
    }

    /// Station counts must be divisible by this.
    pub fn length_multiple(&self) -> usize {
        1 << (self.channels.len() - 1)
    }
}

/// Name, shape and flat offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Uniform(usize),
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
struct BlockLayout {
    cin: usize,
    cout: usize,
    conv1_w: usize,
    conv1_b: usize,
    gn1_g: usize,
    gn1_b: usize,
    temb_w: usize,
    temb_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    gn2_g: usize,
    gn2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tensors: Vec<TensorSpec>,
    inits: Vec<Init>,
    embed_w: usize,
    embed_b: usize,
    enc: Vec<BlockLayout>,
    dec: Vec<BlockLayout>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut l = Layout {
            tensors: Vec::new(),
            inits: Vec::new(),
            embed_w: 0,
            embed_b: 0,
            enc: Vec::new(),
            dec: Vec::new(),
            head_w: 0,
            head_b: 0,
            total: 0,
        };
        let e = arch.embed_dim;
        let k = arch.kernel;
        l.embed_w = l.push("embed.w", vec![e, arch.fourier_dim], Init::Uniform(arch.fourier_dim));
        l.embed_b = l.push("embed.b", vec![e], Init::Uniform(arch.fourier_dim));
        let ch = &arch.channels;
        for i in 0..ch.len() {
            let cin = if i == 0 { 2 } else { ch[i - 1] };
            let b = l.block(&format!("enc{i}"), cin, ch[i], k, e);
            l.enc.push(b);
        }
        for i in (0..ch.len() - 1).rev() {
            let b = l.block(&format!("dec{i}"), ch[i + 1] + ch[i], ch[i], k, e);
            l.dec.push(b);
        }
        l.head_w = l.push("head.w", vec![2, ch[0]], Init::Uniform(ch[0]));
        l.head_b = l.push("head.b", vec![2], Init::Uniform(ch[0]));
        l
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, init: Init) -> usize {
        let offset = self.total;
        let spec = TensorSpec {
            name: name.to_string(),
            shape,
            offset,
        };
        self.total += spec.len();
        self.tensors.push(spec);
        self.inits.push(init);
        offset
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, k: usize, e: usize) -> BlockLayout {
        BlockLayout {
            cin,
            cout,
            conv1_w: self.push(&format!("{name}.conv1.w"), vec![cout, cin, k], Init::Uniform(cin * k)),
            conv1_b: self.push(&format!("{name}.conv1.b"), vec![cout], Init::Uniform(cin * k)),
            gn1_g: self.push(&format!("{name}.gn1.g"), vec![cout], Init::Ones),
            gn1_b: self.push(&format!("{name}.gn1.b"), vec![cout], Init::Zeros),
            temb_w: self.push(&format!("{name}.temb.w"), vec![cout, e], Init::Uniform(e)),
            temb_b: self.push(&format!("{name}.temb.b"), vec![cout], Init::Uniform(e)),
            conv2_w: self.push(&format!("{name}.conv2.w"), vec![cout, cout, k], Init::Uniform(cout * k)),
            conv2_b: self.push(&format!("{name}.conv2.b"), vec![cout], Init::Uniform(cout * k)),
            gn2_g: self.push(&format!("{name}.gn2.g"), vec![cout], Init::Ones),
            gn2_b: self.push(&format!("{name}.gn2.b"), vec![cout], Init::Zeros),
        }
    }
}

/// Intermediate values of one block, kept for the backward pass.
#[derive(Debug, Clone, Default)]
struct BlockCache<T> {
    l: usize,
    col1: Vec<T>,
    gn1: GnCache<T>,
    a1: Vec<T>,
    col2: Vec<T>,
    gn2: GnCache<T>,
    a2: Vec<T>,
}

/// Forward-pass record for [`ScoreNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    fourier: Vec<T>,
    e_pre: Vec<T>,
    e: Vec<T>,
    enc: Vec<BlockCache<T>>,
    dec: Vec<BlockCache<T>>,
    u0: Vec<T>,
    inv_sigma: T,
    n: usize,
}

/// Score network `s(x, t)` with parameters of scalar type `T`.
#[derive(Debug, Clone)]
pub struct ScoreNet<T: Scalar> {
    arch: Architecture,
    schedule: NoiseSchedule,
    fourier: Vec<f64>,
    params: Vec<T>,
    layout: Layout,
}

impl<T: Scalar> ScoreNet<T> {
    /// Randomly initialized network; `seed` fixes weights and Fourier frequencies.
    pub fn new(arch: Architecture, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fourier: Vec<f64> = (0..arch.fourier_dim / 2)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * arch.fourier_scale
            })
            .collect();
        let mut params = vec![T::zero(); layout.total];
        for (spec, init) in layout.tensors.iter().zip(&layout.inits) {
            let dst = &mut params[spec.range()];
            match *init {
                Init::Ones => dst.fill(T::one()),
                Init::Zeros => {}
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let u = Uniform::new(-bound, bound).expect("bound is positive");
                    for p in dst.iter_mut() {
                        *p = cast(u.sample(&mut rng));
                    }
                }
            }
        }
        Ok(Self {
            arch,
            schedule,
            fourier,
            params,
            layout,
        })
    }

    pub(crate) fn from_parts(arch: Architecture, schedule: NoiseSchedule, fourier: Vec<f64>, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::LengthMismatch {
                expected: layout.total,
                got: params.len(),
            });
        }
        if fourier.len() != arch.fourier_dim / 2 {
            return Err(Error::LengthMismatch {
                expected: arch.fourier_dim / 2,
                got: fourier.len(),
            });
        }
        Ok(Self {
            arch,
            schedule,
            fourier,
            params,
            layout,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn fourier_frequencies(&self) -> &[f64] {
        &self.fourier
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Mutable view of one named tensor.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let spec = self.layout.tensors.iter().find(|s| s.name == name)?;
        let r = spec.range();
        Some(&mut self.params[r])
    }

    /// Same network with parameters converted to `U`.
    pub fn cast<U: Scalar>(&self) -> ScoreNet<U> {
        ScoreNet {
            arch: self.arch.clone(),
            schedule: self.schedule,
            fourier: self.fourier.clone(),
            params: self
                .params
                .iter()
                .map(|p| cast(p.to_f64().expect("finite parameter")))
                .collect(),
            layout: self.layout.clone(),
        }
    }

    fn check_input(&self, x: &[T], t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(t));
        }
        let m = self.arch.length_multiple();
        if x.len() % 2 != 0 || x.is_empty() || (x.len() / 2) % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "input length {} is not 2 x N with N a multiple of {m}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(x.len() / 2)
    }

    pub fn forward(&self, x: &[T], t: f64) -> Result<Vec<T>> {
        Ok(self.forward_cached(x, t)?.0)
    }

    fn p(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    fn block_forward(&self, b: &BlockLayout, x: &[T], l: usize, e: &[T]) -> (Vec<T>, BlockCache<T>) {
        let k = self.arch.kernel;
        let g = self.arch.groups;
        let (cin, cout) = (b.cin, b.cout);
        let mut c = BlockCache {
            l,
            ..Default::default()
        };
        im2col(x, cin, l, k, &mut c.col1);
        let mut z = vec![T::zero(); cout * l];
        conv_forward(&c.col1, cin, l, self.p(b.conv1_w, cout * cin * k), self.p(b.conv1_b, cout), cout, k, &mut z);
        let mut a1 = vec![T::zero(); cout * l];
        group_norm_forward(&z, cout, l, g, self.p(b.gn1_g, cout), self.p(b.gn1_b, cout), &mut a1, &mut c.gn1);
        let mut d = vec![T::zero(); cout];
        dense_forward(self.p(b.temb_w, cout * e.len()), self.p(b.temb_b, cout), e, &mut d);
        for ch in 0..cout {
            for v in &mut a1[ch * l..(ch + 1) * l] {
                *v = *v + d[ch];
            }
        }
        let h1: Vec<T> = a1.iter().map(|&a| silu(a)).collect();
        c.a1 = a1;
        im2col(&h1, cout, l, k, &mut c.col2);
        conv_forward(&c.col2, cout, l, self.p(b.conv2_w, cout * cout * k), self.p(b.conv2_b, cout), cout, k, &mut z);
        let mut a2 = vec![T::zero(); cout * l];
        group_norm_forward(&z, cout, l, g, self.p(b.gn2_g, cout), self.p(b.gn2_b, cout), &mut a2, &mut c.gn2);
        let h = a2.iter().map(|&a| silu(a)).collect();
        c.a2 = a2;
        (h, c)
    }

    /// Returns the input gradient; parameter gradients accumulate in `grad`,
    /// the embedding gradient in `de`.
    fn block_backward(&self, b: &BlockLayout, c: &BlockCache<T>, dh: &[T], e: &[T], grad: &mut [T], de: &mut [T]) -> Vec<T> {
        let k = self.arch.kernel;
        let g = self.arch.groups;
        let (cin, cout, l) = (b.cin, b.cout, c.l);
        let ed = e.len();
        let da2: Vec<T> = dh.iter().zip(&c.a2).map(|(&d, &a)| d * silu_grad(a)).collect();
        let mut dz = vec![T::zero(); cout * l];
        {
            let (dg, db) = two_slices(grad, b.gn2_g, b.gn2_b, cout);
            group_norm_backward(cout, l, g, self.p(b.gn2_g, cout), &c.gn2, &da2, dg, db, &mut dz);
        }
        let mut dh1 = vec![T::zero(); cout * l];
        let mut scratch = Vec::new();
        {
            let (dw, db) = two_slices_sized(grad, b.conv2_w, cout * cout * k, b.conv2_b, cout);
            conv_backward(&c.col2, cout, l, self.p(b.conv2_w, cout * cout * k), cout, k, &dz, dw, db, &mut dh1, &mut scratch);
        }
        let da1: Vec<T> = dh1.iter().zip(&c.a1).map(|(&d, &a)| d * silu_grad(a)).collect();
        let dd: Vec<T> = (0..cout)
            .map(|ch| da1[ch * l..(ch + 1) * l].iter().fold(T::zero(), |s, &v| s + v))
            .collect();
        {
            let (dw, db) = two_slices_sized(grad, b.temb_w, cout * ed, b.temb_b, cout);
            dense_backward(self.p(b.temb_w, cout * ed), e, &dd, dw, db, de);
        }
        {
            let (dg, db) = two_slices(grad, b.gn1_g, b.gn1_b, cout);
            group_norm_backward(cout, l, g, self.p(b.gn1_g, cout), &c.gn1, &da1, dg, db, &mut dz);
        }
        let mut dx = vec![T::zero(); cin * l];
        {
            let (dw, db) = two_slices_sized(grad, b.conv1_w, cout * cin * k, b.conv1_b, cout);
            conv_backward(&c.col1, cin, l, self.p(b.conv1_w, cout * cin * k), cout, k, &dz, dw, db, &mut dx, &mut scratch);
        }
        dx
    }

    /// Forward pass keeping every intermediate needed by [`Self::backward`].
    pub fn forward_cached(&self, x: &[T], t: f64) -> Result<(Vec<T>, ForwardCache<T>)> {
        let n = self.check_input(x, t)?;
        let ch = &self.arch.channels;
        let levels = ch.len();
        let fd = self.arch.fourier_dim;
        let ed = self.arch.embed_dim;

        let tau = std::f64::consts::TAU;
        let half = fd / 2;
        let mut fourier = vec![T::zero(); fd];
        for (i, w) in self.fourier.iter().enumerate() {
            let a = tau * w * t;
            fourier[i] = cast(a.sin());
            fourier[half + i] = cast(a.cos());
        }
        let mut e_pre = vec![T::zero(); ed];
        dense_forward(self.p(self.layout.embed_w, ed * fd), self.p(self.layout.embed_b, ed), &fourier, &mut e_pre);
        let e: Vec<T> = e_pre.iter().map(|&a| silu(a)).collect();

        let mut skips: Vec<Vec<T>> = Vec::with_capacity(levels);
        let mut enc = Vec::with_capacity(levels);
        let mut l = n;
        for i in 0..levels {
            let input = if i == 0 {
                x.to_vec()
            } else {
                let p = avg_pool2(&skips[i - 1], ch[i - 1], l);
                l /= 2;
                p
            };
            let (h, c) = self.block_forward(&self.layout.enc[i], &input, l, &e);
            skips.push(h);
            enc.push(c);
        }
        let mut u = skips[levels - 1].clone();
        let mut dec = Vec::with_capacity(levels - 1);
        for (j, i) in (0..levels - 1).rev().enumerate() {
            let l2 = 2 * l;
            let mut cat = vec![T::zero(); (ch[i + 1] + ch[i]) * l2];
            upsample2_into(&u, ch[i + 1], l, &mut cat);
            cat[ch[i + 1] * l2..].copy_from_slice(&skips[i]);
            let (h, c) = self.block_forward(&self.layout.dec[j], &cat, l2, &e);
            u = h;
            dec.push(c);
            l = l2;
        }

        let sigma = self.schedule.marginal_variance_unchecked(t).sqrt().max(MIN_SIGMA);
        let inv_sigma: T = cast(1.0 / sigma);
        let c0 = ch[0];
        let hw = self.p(self.layout.head_w, 2 * c0);
        let hb = self.p(self.layout.head_b, 2);
        let mut out = vec![T::zero(); 2 * n];
        for o in 0..2 {
            let row = &mut out[o * n..(o + 1) * n];
            row.fill(hb[o]);
            for c in 0..c0 {
                let w = hw[o * c0 + c];
                for (r, &v) in row.iter_mut().zip(&u[c * n..(c + 1) * n]) {
                    *r = *r + w * v;
                }
            }
            for r in row.iter_mut() {
                *r = *r * inv_sigma;
            }
        }
        Ok((
            out,
            ForwardCache {
                fourier,
                e_pre,
                e,
                enc,
                dec,
                u0: u,
                inv_sigma,
                n,
            },
        ))
    }

    /// Accumulates `d(<dout, s(x, t)>)/d(params)` into `grad`.
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &[T], grad: &mut [T]) {
        let ch = &self.arch.channels;
        let levels = ch.len();
        let n = cache.n;
        let c0 = ch[0];
        let ed = self.arch.embed_dim;
        let fd = self.arch.fourier_dim;

        let d: Vec<T> = dout.iter().map(|&v| v * cache.inv_sigma).collect();
        let mut du = vec![T::zero(); c0 * n];
        {
            let hw = self.p(self.layout.head_w, 2 * c0).to_vec();
            for o in 0..2 {
                let dr = &d[o * n..(o + 1) * n];
                grad[self.layout.head_b + o] = grad[self.layout.head_b + o] + dr.iter().fold(T::zero(), |a, &v| a + v);
                for c in 0..c0 {
                    let uc = &cache.u0[c * n..(c + 1) * n];
                    let mut acc = T::zero();
                    for (&a, &b) in dr.iter().zip(uc) {
                        acc = acc + a * b;
                    }
                    let idx = self.layout.head_w + o * c0 + c;
                    grad[idx] = grad[idx] + acc;
                    let w = hw[o * c0 + c];
                    for (g, &v) in du[c * n..(c + 1) * n].iter_mut().zip(dr) {
                        *g = *g + w * v;
                    }
                }
            }
        }

        let mut de = vec![T::zero(); ed];
        let mut dskip: Vec<Vec<T>> = (0..levels)
            .map(|i| vec![T::zero(); ch[i] * (n >> i)])
            .collect();
        // Decoder blocks were pushed coarse to fine; walk them fine to coarse.
        for i in 0..levels - 1 {
            let b = &self.layout.dec[levels - 2 - i];
            let c = &cache.dec[levels - 2 - i];
            let dcat = self.block_backward(b, c, &du, &cache.e, grad, &mut de);
            let l2 = n >> i;
            let split = ch[i + 1] * l2;
            for (s, &v) in dskip[i].iter_mut().zip(&dcat[split..]) {
                *s = *s + v;
            }
            let mut dnext = vec![T::zero(); ch[i + 1] * (l2 / 2)];
            upsample2_backward(&dcat[..split], ch[i + 1], l2 / 2, &mut dnext);
            du = dnext;
        }
        for (s, &v) in dskip[levels - 1].iter_mut().zip(&du) {
            *s = *s + v;
        }
        for i in (0..levels).rev() {
            let dh = std::mem::take(&mut dskip[i]);
            let dx = self.block_backward(&self.layout.enc[i], &cache.enc[i], &dh, &cache.e, grad, &mut de);
            if i > 0 {
                avg_pool2_backward(&dx, ch[i - 1], n >> (i - 1), &mut dskip[i - 1]);
            }
        }

        let de_pre: Vec<T> = de.iter().zip(&cache.e_pre).map(|(&d, &a)| d * silu_grad(a)).collect();
        let mut dfourier = vec![T::zero(); fd];
        let (dw, db) = two_slices_sized(grad, self.layout.embed_w, ed * fd, self.layout.embed_b, ed);
        dense_backward(self.p(self.layout.embed_w, ed * fd), &cache.fourier, &de_pre, dw, db, &mut dfourier);
    }
}

/// Disjoint mutable views `grad[a..a+len]` and `grad[b..b+len]`, `a < b`.
fn two_slices<T>(grad: &mut [T], a: usize, b: usize, len: usize) -> (&mut [T], &mut [T]) {
    two_slices_sized(grad, a, len, b, len)
}

fn two_slices_sized<T>(grad: &mut [T], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + alen <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + alen], &mut hi[..blen])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn mini_arch() -> Architecture {
        Architecture {
            channels: vec![2, 4, 4],
            kernel: 3,
            groups: 2,
            fourier_dim: 4,
            fourier_scale: 30.0,
            embed_dim: 4,
        }
    }

    #[test]
    fn mini_network_has_about_500_parameters() {
        let net = ScoreNet::<f64>::new(mini_arch(), NoiseSchedule::default(), 0).unwrap();
        let count = net.param_count();
        assert!((300..=700).contains(&count), "{count}");
        let total: usize = net.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(total, count);
    }

    #[test]
    fn output_shape_matches_input() {
        let net = ScoreNet::<f32>::new(Architecture::default(), NoiseSchedule::default(), 1).unwrap();
        for n in [64, 128, 256] {
            let x = vec![0.3f32; 2 * n];
            assert_eq!(net.forward(&x, 0.4).unwrap().len(), 2 * n);
        }
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut net = ScoreNet::<f64>::new(mini_arch(), NoiseSchedule::default(), 2).unwrap();
        net.tensor_mut("head.w").unwrap().fill(0.0);
        net.tensor_mut("head.b").unwrap().fill(0.0);
        let out = net.forward(&[0.5; 16], 0.3).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = ScoreNet::<f32>::new(Architecture::default(), NoiseSchedule::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f32> = (0..256).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = net.forward(&x, 0.25).unwrap();
        let b = net.forward(&x, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = ScoreNet::<f64>::new(mini_arch(), NoiseSchedule::default(), 2).unwrap();
        let mut x = vec![0.0; 16];
        x[3] = f64::NAN;
        assert!(matches!(net.forward(&x, 0.5), Err(Error::NonFinite(_))));
        assert!(matches!(net.forward(&[0.0; 16], 1.5), Err(Error::Domain(_))));
        assert!(net.forward(&[0.0; 14], 0.5).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_of_a_linear_probe() {
        let mut net = ScoreNet::<f64>::new(mini_arch(), NoiseSchedule::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 0.37;
        let (_, cache) = net.forward_cached(&x, t).unwrap();
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&cache, &probe, &mut grad);
        let f = |net: &ScoreNet<f64>| -> f64 {
            net.forward(&x, t).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..net.param_count() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let fp = f(&net);
            net.params_mut()[i] = orig - h;
            let fm = f(&net);
            net.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(1e-3);
            assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
        }
    }
}
