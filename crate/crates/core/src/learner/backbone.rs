//! Convolutional embedding network: blocks of conv + bias → 2×2 max-pool → ReLU.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_grads, ConvGeometry, Tensor4};

/// Shape of one block's convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub filters: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

impl BlockSpec {
    /// `k×k` kernel, "same" padding, stride 1.
    pub fn same(filters: usize, kernel: usize) -> Self {
        Self {
            filters,
            kernel,
            padding: kernel / 2,
            stride: 1,
        }
    }
}

/// Parses a width list such as `"64-64-64-64"` into same-padded blocks.
pub fn parse_widths(s: &str, kernel: usize) -> Result<Vec<BlockSpec>> {
    let widths: Vec<usize> = s
        .split('-')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| Error::Config(format!("bad block width '{w}' in '{s}'")))
        })
        .collect::<Result<_>>()?;
    if widths.is_empty() {
        return Err(Error::Config("backbone needs at least one block".into()));
    }
    Ok(widths.into_iter().map(|w| BlockSpec::same(w, kernel)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernel: Tensor4,
    pub bias: Vec<f64>,
    pub geometry: ConvGeometry,
}

/// Backbone weights together with the input shape they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    input: (usize, usize, usize),
    blocks: Vec<ConvBlock>,
}

/// Gradient with the same layout as [`BackboneParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub kernels: Vec<Tensor4>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(p: &BackboneParams) -> Self {
        Self {
            kernels: p.blocks.iter().map(|b| Tensor4::zeros(b.kernel.dims())).collect(),
            biases: p.blocks.iter().map(|b| vec![0.0; b.bias.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.kernels.iter().all(Tensor4::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

fn pooled_len(n: usize) -> usize {
    n / 2
}

impl BackboneParams {
    /// He-normal kernels, zero biases.
    pub fn init<R: Rng + ?Sized>(
        input: (usize, usize, usize),
        specs: &[BlockSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(specs.len());
        let mut c = input.0;
        for s in specs {
            let fan_in = (c * s.kernel * s.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let kernel = Tensor4::from_fn([s.filters, c, s.kernel, s.kernel], |_| normal.sample(rng));
            blocks.push(ConvBlock {
                kernel,
                bias: vec![0.0; s.filters],
                geometry: ConvGeometry::new(s.padding, s.stride)?,
            });
            c = s.filters;
        }
        Self::from_blocks(input, blocks)
    }

    /// Validates that every block chains and keeps a non-empty spatial extent.
    pub fn from_blocks(input: (usize, usize, usize), blocks: Vec<ConvBlock>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("backbone needs at least one block"));
        }
        let p = Self { input, blocks };
        p.block_inputs()?;
        for b in &p.blocks {
            if !b.kernel.is_finite() || b.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("backbone parameters must be finite".into()));
            }
            if b.bias.len() != b.kernel.dims()[0] {
                return Err(Error::geometry("bias length must equal filter count"));
            }
        }
        Ok(p)
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ConvBlock] {
        &mut self.blocks
    }

    /// `(C, H, W)` entering each block.
    pub fn block_inputs(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut dims = self.trace_dims()?;
        dims.pop();
        Ok(dims)
    }

    /// Shapes entering each block followed by the output shape.
    fn trace_dims(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut dims = Vec::with_capacity(self.blocks.len() + 1);
        let (mut c, mut h, mut w) = self.input;
        for (l, b) in self.blocks.iter().enumerate() {
            let [n, kc, kh, kw] = b.kernel.dims();
            if kc != c {
                return Err(Error::geometry(format!(
                    "block {l} expects {kc} input channels, receives {c}"
                )));
            }
            dims.push((c, h, w));
            let (ho, wo) = b.geometry.out_dims(h, w, kh, kw)?;
            let (hp, wp) = (pooled_len(ho), pooled_len(wo));
            if hp == 0 || wp == 0 {
                return Err(Error::geometry(format!(
                    "block {l} pools a {ho}×{wo} map down to nothing"
                )));
            }
            (c, h, w) = (n, hp, wp);
        }
        dims.push((c, h, w));
        Ok(dims)
    }

    pub fn embedding_dim(&self) -> usize {
        let (c, h, w) = *self.trace_dims().expect("validated at construction").last().unwrap();
        c * h * w
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.kernel.len() + b.bias.len()).sum()
    }

    /// Flattened parameters: per block, kernel then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for b in &self.blocks {
            v.extend_from_slice(b.kernel.data());
            v.extend_from_slice(&b.bias);
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::geometry(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                v.len()
            )));
        }
        let mut off = 0;
        for b in &mut self.blocks {
            let n = b.kernel.len();
            b.kernel.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
            let nb = b.bias.len();
            b.bias.copy_from_slice(&v[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

impl ParamGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            v.extend_from_slice(k.data());
            v.extend_from_slice(b);
        }
        v
    }
}

/// Stacks images into a `B×C×H×W` batch.
pub fn batch_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor4> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut b = 0;
    for im in images {
        match dims {
            None => dims = Some(im.dims()),
            Some(d) if d != im.dims() => {
                return Err(Error::geometry(format!(
                    "batch mixes image shapes {d:?} and {:?}",
                    im.dims()
                )))
            }
            _ => {}
        }
        data.extend_from_slice(im.data());
        b += 1;
    }
    let (c, h, w) = dims.ok_or_else(|| Error::invalid("empty image batch"))?;
    Tensor4::new([b, c, h, w], data)
}

struct BlockCache {
    input: Tensor4,
    /// Flat index into the conv output chosen by each pooled cell.
    argmax: Vec<usize>,
    conv_dims: [usize; 4],
    /// Pooled values before ReLU.
    pooled: Tensor4,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
}

fn add_bias(y: &mut Tensor4, bias: &[f64]) {
    let [_, n, h, w] = y.dims();
    let plane = h * w;
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let bv = bias[i % n];
        for v in chunk {
            *v += bv;
        }
    }
}

/// 2×2 stride-2 max-pool; odd trailing rows/columns are dropped. Ties pick
/// the first cell in row-major order.
fn max_pool(y: &Tensor4) -> (Tensor4, Vec<usize>) {
    let [b, n, h, w] = y.dims();
    let (hp, wp) = (pooled_len(h), pooled_len(w));
    let mut out = Tensor4::zeros([b, n, hp, wp]);
    let mut arg = vec![0usize; b * n * hp * wp];
    let yd = y.data();
    let od = out.data_mut();
    for bn in 0..b * n {
        for i in 0..hp {
            for j in 0..wp {
                let mut best = bn * h * w + (2 * i) * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = bn * h * w + (2 * i + di) * w + 2 * j + dj;
                    if yd[idx] > yd[best] {
                        best = idx;
                    }
                }
                let o = (bn * hp + i) * wp + j;
                od[o] = yd[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

fn relu(t: &Tensor4) -> Tensor4 {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

fn to_matrix(t: &Tensor4) -> DMatrix<f64> {
    let [b, c, h, w] = t.dims();
    DMatrix::from_row_slice(b, c * h * w, t.data())
}

impl BackboneParams {
    fn check_batch(&self, x: &Tensor4) -> Result<()> {
        let [_, c, h, w] = x.dims();
        if (c, h, w) != self.input {
            return Err(Error::geometry(format!(
                "backbone expects {:?} inputs, got {:?}",
                self.input,
                (c, h, w)
            )));
        }
        Ok(())
    }

    /// Embeddings of a batch, one row per image.
    pub fn forward_embed(&self, x: &Tensor4) -> Result<DMatrix<f64>> {
        self.check_batch(x)?;
        let mut a = x.clone();
        for b in &self.blocks {
            let mut y = conv2d(&a, &b.kernel, b.geometry)?;
            add_bias(&mut y, &b.bias);
            a = relu(&max_pool(&y).0);
        }
        Ok(to_matrix(&a))
    }

    pub fn forward_with_cache(&self, x: &Tensor4) -> Result<(DMatrix<f64>, ForwardCache)> {
        self.check_batch(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut a = x.clone();
        for b in &self.blocks {
            let mut y = conv2d(&a, &b.kernel, b.geometry)?;
            add_bias(&mut y, &b.bias);
            let (pooled, argmax) = max_pool(&y);
            let next = relu(&pooled);
            caches.push(BlockCache {
                input: a,
                argmax,
                conv_dims: y.dims(),
                pooled,
            });
            a = next;
        }
        Ok((to_matrix(&a), ForwardCache { blocks: caches }))
    }

    /// Parameter gradients given `∂L/∂embeddings`.
    pub fn backward(&self, cache: &ForwardCache, d_embed: &DMatrix<f64>) -> Result<ParamGrads> {
        let last = &cache.blocks.last().expect("non-empty").pooled;
        let [b, c, h, w] = last.dims();
        if d_embed.nrows() != b || d_embed.ncols() != c * h * w {
            return Err(Error::geometry("embedding gradient shape does not match forward pass"));
        }
        let mut flat = Vec::with_capacity(b * c * h * w);
        for r in 0..b {
            flat.extend(d_embed.row(r).iter());
        }
        let mut grad = Tensor4::new([b, c, h, w], flat)?;
        let mut kernels = vec![Tensor4::zeros([0, 0, 0, 0]); self.blocks.len()];
        let mut biases = vec![Vec::new(); self.blocks.len()];
        for (l, (blk, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            // ReLU
            for (g, p) in grad.data_mut().iter_mut().zip(bc.pooled.data()) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
            // max-pool
            let mut dy = Tensor4::zeros(bc.conv_dims);
            {
                let dyd = dy.data_mut();
                for (g, &idx) in grad.data().iter().zip(&bc.argmax) {
                    dyd[idx] += g;
                }
            }
            // bias
            let [_, n, ho, wo] = bc.conv_dims;
            let mut db = vec![0.0; n];
            for (i, chunk) in dy.data().chunks(ho * wo).enumerate() {
                db[i % n] += chunk.iter().sum::<f64>();
            }
            let (dx, dk) = conv2d_grads(&bc.input, &blk.kernel, blk.geometry, &dy)?;
            kernels[l] = dk;
            biases[l] = db;
            grad = dx;
        }
        Ok(ParamGrads { kernels, biases })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> BackboneParams {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        BackboneParams::init((1, 8, 8), &parse_widths("3-4", 3).unwrap(), &mut rng).unwrap()
    }

    #[test]
    fn widths_parse() {
        let b = parse_widths("64-64-64-64", 3).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0], BlockSpec { filters: 64, kernel: 3, padding: 1, stride: 1 });
        assert!(parse_widths("64-x", 3).is_err());
        assert!(parse_widths("64-0", 3).is_err());
    }

    #[test]
    fn embedding_dims() {
        let p = small();
        assert_eq!(p.embedding_dim(), 4 * 2 * 2);
        let x = Tensor4::zeros([5, 1, 8, 8]);
        assert_eq!(p.forward_embed(&x).unwrap().shape(), (5, 16));
        assert!(p.forward_embed(&Tensor4::zeros([1, 1, 6, 8])).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(BackboneParams::init((1, 4, 4), &parse_widths("2-2-2", 3).unwrap(), &mut rng).is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_embedding() {
        let p = small();
        let z = p.forward_embed(&Tensor4::zeros([2, 1, 8, 8])).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_permutation_permutes_rows() {
        let p = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor4::from_fn([3, 1, 8, 8], |_| rng.random::<f64>());
        let perm = [2, 0, 1];
        let mut px = Tensor4::zeros([3, 1, 8, 8]);
        for (dst, &src) in perm.iter().enumerate() {
            px.data_mut()[dst * 64..(dst + 1) * 64].copy_from_slice(&x.data()[src * 64..(src + 1) * 64]);
        }
        let z = p.forward_embed(&x).unwrap();
        let pz = p.forward_embed(&px).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(pz.row(dst), z.row(src));
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut p = small();
        let v = p.to_flat();
        assert_eq!(v.len(), p.num_params());
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        p.set_flat(&doubled).unwrap();
        assert_eq!(p.to_flat(), doubled);
        assert!(p.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn pool_picks_max() {
        let y = Tensor4::new([1, 1, 2, 3], vec![1.0, 5.0, 9.0, 3.0, 2.0, 9.0]).unwrap();
        let (p, arg) = max_pool(&y);
        assert_eq!(p.data(), &[5.0]);
        assert_eq!(arg, vec![1]);
    }
}
