//! Swin-style token backbone.
//!
//! The image is cut into non-overlapping `patch x patch` cells, each cell is
//! linearly embedded, and the resulting grid goes through stages of windowed
//! self-attention blocks (alternating plain and cyclically shifted windows)
//! with 2x2 patch merging between stages. The last stage's grid is the token
//! set consumed by both heads.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{join, Init, LayerNorm, Linear, Parameterized};
use crate::tensor::{window, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Blocks per stage; the stage count is `depths.len()`.
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    pub window: usize,
    pub mlp_ratio: usize,
    pub rel_pos_bias: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 4,
            embed_dim: 48,
            depths: vec![2, 2, 2],
            heads: vec![2, 4, 8],
            window: 4,
            mlp_ratio: 4,
            rel_pos_bias: true,
        }
    }
}

impl BackboneConfig {
    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    /// Side of the patch grid entering stage `stage`.
    pub fn stage_side(&self, stage: usize) -> usize {
        self.image_size / self.patch_size >> stage
    }

    pub fn stage_dim(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    /// Window side used in a stage; grids smaller than the window use one
    /// window covering the whole grid.
    pub fn stage_window(&self, stage: usize) -> usize {
        self.window.min(self.stage_side(stage))
    }

    /// Side `g` of the output token grid.
    pub fn grid_side(&self) -> usize {
        self.stage_side(self.num_stages() - 1)
    }

    /// Number of output tokens `m = g^2`.
    pub fn num_tokens(&self) -> usize {
        self.grid_side().pow(2)
    }

    /// Output token dimension `L`.
    pub fn token_dim(&self) -> usize {
        self.stage_dim(self.num_stages() - 1)
    }

    /// Input pixels spanned by one output token along each axis.
    pub fn receptive_patch_pixels(&self) -> usize {
        self.image_size / self.grid_side()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.depths.is_empty() || self.depths.len() != self.heads.len() {
            return err(format!(
                "depths {:?} and heads {:?} must be non-empty and of equal length",
                self.depths, self.heads
            ));
        }
        if self.patch_size == 0 || self.window == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 {
            return err("patch_size, window, embed_dim and mlp_ratio must be positive".into());
        }
        let granularity = self.patch_size << (self.num_stages() - 1);
        if self.image_size % granularity != 0 {
            return err(format!(
                "image_size {} is not divisible by patch_size x 2^(stages-1) = {granularity}",
                self.image_size
            ));
        }
        for s in 0..self.num_stages() {
            let side = self.stage_side(s);
            let win = self.stage_window(s);
            if side == 0 || side % win != 0 {
                return err(format!("stage {s}: grid side {side} is not tiled by window {win}"));
            }
            if self.stage_dim(s) % self.heads[s] != 0 {
                return err(format!(
                    "stage {s}: dim {} not divisible by {} heads",
                    self.stage_dim(s),
                    self.heads[s]
                ));
            }
        }
        Ok(())
    }
}

/// Per-image token set produced by the backbone.
#[derive(Debug, Clone)]
pub struct TokenGrid<F: Real = f32> {
    /// `[m, L]`
    pub tokens: Tensor<F>,
    pub grid_side: usize,
    pub receptive_patch_pixels: usize,
}

impl<F: Real> TokenGrid<F> {
    pub fn num_tokens(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

struct Attention<F: Real> {
    qkv: Linear<F>,
    proj: Linear<F>,
    rel_table: Option<Tensor<F>>,
    heads: usize,
}

/// One windowed self-attention block on a `side x side` grid.
pub struct SwinBlock<F: Real> {
    norm1: LayerNorm<F>,
    attn: Attention<F>,
    norm2: LayerNorm<F>,
    fc1: Linear<F>,
    fc2: Linear<F>,
    side: usize,
    window: usize,
    shift: usize,
    dim: usize,
    mask: Option<Tensor<F>>,
    rel_index: Vec<usize>,
}

impl<F: Real> SwinBlock<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init<'_>,
        dim: usize,
        heads: usize,
        side: usize,
        window: usize,
        shifted: bool,
        mlp_ratio: usize,
        rel_pos_bias: bool,
    ) -> Self {
        // A grid that fits in one window has nothing to shift across.
        let shift = if shifted && side > window { window / 2 } else { 0 };
        let span = 2 * window - 1;
        let norm1 = LayerNorm::new(init, dim);
        let attn = Attention {
            qkv: Linear::new(init, dim, 3 * dim, true),
            proj: Linear::new(init, dim, dim, true),
            rel_table: rel_pos_bias.then(|| init.weight(&[span * span, heads])),
            heads,
        };
        let norm2 = LayerNorm::new(init, dim);
        let fc1 = Linear::new(init, dim, mlp_ratio * dim, true);
        let fc2 = Linear::new(init, mlp_ratio * dim, dim, true);
        let t = window * window;
        let windows = (side / window).pow(2);
        let mask = (shift > 0).then(|| {
            let m = window::shift_mask(side, window, shift).into_iter().map(F::of).collect();
            Tensor::from_vec(m, &[windows, 1, t, t]).unwrap()
        });
        Self {
            norm1,
            attn,
            norm2,
            fc1,
            fc2,
            side,
            window,
            shift,
            dim,
            mask,
            rel_index: window::relative_position_index(window),
        }
    }

    pub fn is_shifted(&self) -> bool {
        self.shift > 0
    }

    /// Multi-head attention over the (shifted) windows of `x`, returned in
    /// the input's token order before the residual connection.
    pub fn attention(&self, x: &Tensor<F>, batch: usize) -> Result<Tensor<F>> {
        self.attention_with(x, batch, true)
    }

    fn attention_with(&self, x: &Tensor<F>, batch: usize, use_mask: bool) -> Result<Tensor<F>> {
        let (w, heads, c) = (self.window, self.attn.heads, self.dim);
        let t = w * w;
        let head_dim = c / heads;
        let windows = (self.side / w).pow(2);
        let bw = batch * windows;
        let order = window::partition_indices(batch, self.side, w, self.shift);
        let xw = x.gather_rows(&order)?;
        let qkv = self
            .attn
            .qkv
            .forward(&xw)?
            .reshape(&[bw, t, 3, heads, head_dim])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| -> Result<Tensor<F>> { Ok(qkv.gather_rows(&[i])?.reshape(&[bw, heads, t, head_dim])?) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let mut scores = q
            .matmul(&k.transpose(2, 3)?)?
            .scale(F::of(1.0 / (head_dim as f64).sqrt()));
        if let Some(table) = &self.attn.rel_table {
            let bias = table
                .gather_rows(&self.rel_index)?
                .transpose(0, 1)?
                .reshape(&[heads, t, t])?;
            scores = scores.add(&bias)?;
        }
        if let (Some(mask), true) = (&self.mask, use_mask) {
            scores = scores
                .reshape(&[batch, windows, heads, t, t])?
                .add(mask)?
                .reshape(&[bw, heads, t, t])?;
        }
        let out = scores
            .softmax_rows()?
            .matmul(&v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[bw * t, c])?;
        let out = self.attn.proj.forward(&out)?;
        Ok(out.gather_rows(&window::invert(&order))?)
    }

    /// `x`: `[batch * side^2, dim]` rows in row-major spatial order.
    pub fn forward(&self, x: &Tensor<F>, batch: usize) -> Result<Tensor<F>> {
        let attn = self.attention(&self.norm1.forward(x)?, batch)?;
        let x = x.add(&attn)?;
        let h = self.fc1.forward(&self.norm2.forward(&x)?)?.gelu();
        Ok(x.add(&self.fc2.forward(&h)?)?)
    }
}

impl<F: Real> Parameterized<F> for SwinBlock<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.attn.qkv.collect_params(&join(prefix, "attn.qkv"), out);
        self.attn.proj.collect_params(&join(prefix, "attn.proj"), out);
        if let Some(t) = &self.attn.rel_table {
            out.push((join(prefix, "attn.rel_table"), t.clone()));
        }
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.fc1.collect_params(&join(prefix, "mlp.fc1"), out);
        self.fc2.collect_params(&join(prefix, "mlp.fc2"), out);
    }
}

/// 2x2 neighbourhood concatenation, normalisation and projection to twice the width.
struct PatchMerging<F: Real> {
    norm: LayerNorm<F>,
    reduce: Linear<F>,
    side: usize,
}

impl<F: Real> PatchMerging<F> {
    fn forward(&self, x: &Tensor<F>, batch: usize) -> Result<Tensor<F>> {
        let c = x.shape()[1];
        let half = self.side / 2;
        let merged = x
            .gather_rows(&window::merge_indices(batch, self.side))?
            .reshape(&[batch * half * half, 4 * c])?;
        Ok(self.reduce.forward(&self.norm.forward(&merged)?)?)
    }
}

struct Stage<F: Real> {
    merge: Option<PatchMerging<F>>,
    blocks: Vec<SwinBlock<F>>,
}

pub struct Backbone<F: Real = f32> {
    config: BackboneConfig,
    patch_proj: Linear<F>,
    patch_norm: LayerNorm<F>,
    stages: Vec<Stage<F>>,
    norm: LayerNorm<F>,
}

impl<F: Real> Backbone<F> {
    pub fn new(config: &BackboneConfig, init: &mut Init<'_>) -> Result<Self> {
        config.validate()?;
        let p = config.patch_size;
        let patch_proj = Linear::new(init, p * p * 3, config.embed_dim, true);
        let patch_norm = LayerNorm::new(init, config.embed_dim);
        let mut stages = Vec::new();
        for s in 0..config.num_stages() {
            let dim = config.stage_dim(s);
            let side = config.stage_side(s);
            let merge = (s > 0).then(|| PatchMerging {
                norm: LayerNorm::new(init, 2 * dim),
                reduce: Linear::new(init, 2 * dim, dim, false),
                side: 2 * side,
            });
            let blocks = (0..config.depths[s])
                .map(|b| {
                    SwinBlock::new(
                        init,
                        dim,
                        config.heads[s],
                        side,
                        config.stage_window(s),
                        b % 2 == 1,
                        config.mlp_ratio,
                        config.rel_pos_bias,
                    )
                })
                .collect();
            stages.push(Stage { merge, blocks });
        }
        let norm = LayerNorm::new(init, config.token_dim());
        Ok(Self {
            config: config.clone(),
            patch_proj,
            patch_norm,
            stages,
            norm,
        })
    }

    /// Seeded trainable backbone.
    pub fn seeded(config: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::new(config, &mut Init::new(rng, true))
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn check_images(&self, images: &Tensor<F>) -> Result<usize> {
        let s = images.shape();
        let n = self.config.image_size;
        if s.len() != 4 || s[1] != n || s[2] != n || s[3] != 3 {
            return Err(Error::Input(format!("expected [batch, {n}, {n}, 3] images, got {s:?}")));
        }
        Ok(s[0])
    }

    /// Linear embedding of each `patch x patch x 3` cell followed by layer
    /// normalisation: `[batch, H, W, 3]` to `[batch * (H/p)^2, embed_dim]`.
    pub fn patch_embed(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        let batch = self.check_images(images)?;
        let (n, p) = (self.config.image_size, self.config.patch_size);
        let cells = batch * (n / p) * (n / p);
        let patches = images
            .reshape(&[batch * n * n, 3])?
            .gather_rows(&window::patch_pixel_indices(batch, n, p))?
            .reshape(&[cells, p * p * 3])?;
        Ok(self.patch_norm.forward(&self.patch_proj.forward(&patches)?)?)
    }

    /// Tokens of a batch of `[batch, H, W, 3]` images as `[batch * m, L]`,
    /// image-major.
    pub fn forward_batch(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        let batch = self.check_images(images)?;
        let mut x = self.patch_embed(images)?;
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                x = merge.forward(&x, batch)?;
            }
            for block in &stage.blocks {
                x = block.forward(&x, batch)?;
            }
        }
        Ok(self.norm.forward(&x)?)
    }

    /// Token grid of one `[H, W, 3]` image.
    pub fn forward(&self, image: &Tensor<F>) -> Result<TokenGrid<F>> {
        let s = image.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::Input(format!("expected [H, W, 3] image, got {s:?}")));
        }
        let tokens = self.forward_batch(&image.reshape(&[1, s[0], s[1], s[2]])?)?;
        Ok(TokenGrid {
            tokens,
            grid_side: self.config.grid_side(),
            receptive_patch_pixels: self.config.receptive_patch_pixels(),
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &SwinBlock<F>> {
        self.stages.iter().flat_map(|s| s.blocks.iter())
    }
}

impl<F: Real> Parameterized<F> for Backbone<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.patch_proj.collect_params(&join(prefix, "patch_embed.proj"), out);
        self.patch_norm.collect_params(&join(prefix, "patch_embed.norm"), out);
        for (s, stage) in self.stages.iter().enumerate() {
            let sp = join(prefix, &format!("stages.{s}"));
            if let Some(m) = &stage.merge {
                m.norm.collect_params(&join(&sp, "merge.norm"), out);
                m.reduce.collect_params(&join(&sp, "merge.reduce"), out);
            }
            for (b, block) in stage.blocks.iter().enumerate() {
                block.collect_params(&join(&sp, &format!("blocks.{b}")), out);
            }
        }
        self.norm.collect_params(&join(prefix, "norm"), out);
    }
}

#[cfg(test)]
impl<F: Real> SwinBlock<F> {
    pub(crate) fn attention_unmasked(&self, x: &Tensor<F>, batch: usize) -> Result<Tensor<F>> {
        self.attention_with(x, batch, false)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::nn::copy_params;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    fn param(p: &impl Parameterized<f64>, name: &str) -> Vec<f64> {
        p.named_params()
            .into_iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
            .1
            .to_vec()
    }

    fn tiny(image_size: usize, patch_size: usize) -> BackboneConfig {
        BackboneConfig {
            image_size,
            patch_size,
            embed_dim: 6,
            depths: vec![1],
            heads: vec![2],
            window: 2,
            mlp_ratio: 2,
            rel_pos_bias: true,
        }
    }

    fn layer_norm(row: &[f64]) -> Vec<f64> {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        row.iter().map(|v| (v - mean) / (var + LayerNorm::<f64>::EPS).sqrt()).collect()
    }

    #[test]
    fn default_shapes() {
        let cfg = BackboneConfig::default();
        assert_eq!((cfg.grid_side(), cfg.num_tokens(), cfg.token_dim()), (4, 16, 192));
        assert_eq!(cfg.receptive_patch_pixels(), 16);
        let b = Backbone::<f32>::seeded(&cfg, &mut rng(0)).unwrap();
        let img = Tensor::full(&[64, 64, 3], 0.5);
        let g = b.forward(&img).unwrap();
        assert_eq!(g.tokens.shape(), &[16, 192]);
        assert!(g.tokens.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn indivisible_config_is_rejected() {
        let cfg = BackboneConfig {
            image_size: 60,
            ..BackboneConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = BackboneConfig {
            heads: vec![2, 4, 7],
            ..BackboneConfig::default()
        };
        assert!(Backbone::<f32>::seeded(&cfg, &mut rng(0)).is_err());
    }

    #[test]
    fn zero_image_embeds_to_identical_rows() {
        let b = Backbone::<f64>::seeded(&tiny(8, 4), &mut rng(1)).unwrap();
        b.patch_proj.bias.as_ref().unwrap().update(|v| v.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 0.1));
        let e = b.patch_embed(&Tensor::zeros(&[1, 8, 8, 3])).unwrap().to_vec();
        let want = layer_norm(&(0..6).map(|i| i as f64 * 0.1).collect::<Vec<_>>());
        for row in e.chunks(6) {
            for (a, w) in row.iter().zip(&want) {
                assert!((a - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn patch_embed_row_zero_matches_dot_product() {
        let b = Backbone::<f64>::seeded(&tiny(8, 4), &mut rng(2)).unwrap();
        let img = random(&mut rng(3), &[1, 8, 8, 3]);
        let e = b.patch_embed(&img).unwrap();
        assert_eq!(e.shape(), &[4, 6]);
        let x = img.to_vec();
        let w = param(&b, "patch_embed.proj.weight");
        let patch: Vec<f64> = (0..4).flat_map(|i| (0..4).flat_map(move |j| (0..3).map(move |c| (i, j, c)))).map(|(i, j, c)| x[(i * 8 + j) * 3 + c]).collect();
        let proj: Vec<f64> = (0..6).map(|o| patch.iter().enumerate().map(|(k, v)| v * w[k * 6 + o]).sum()).collect();
        let want = layer_norm(&proj);
        for (a, w) in e.to_vec()[..6].iter().zip(&want) {
            assert!((a - w).abs() < 1e-10);
        }
    }

    #[test]
    fn swapping_patches_swaps_rows() {
        let b = Backbone::<f64>::seeded(&tiny(8, 4), &mut rng(4)).unwrap();
        let img = random(&mut rng(5), &[1, 8, 8, 3]);
        let mut swapped = img.to_vec();
        // Swap patch (0,0) with patch (1,1).
        for i in 0..4 {
            for j in 0..4 {
                for c in 0..3 {
                    swapped.swap((i * 8 + j) * 3 + c, ((i + 4) * 8 + j + 4) * 3 + c);
                }
            }
        }
        let a = b.patch_embed(&img).unwrap().to_vec();
        let s = b.patch_embed(&Tensor::from_vec(swapped, &[1, 8, 8, 3]).unwrap()).unwrap().to_vec();
        assert_eq!(&a[..6], &s[18..]);
        assert_eq!(&a[18..], &s[..6]);
        assert_eq!(&a[6..18], &s[6..18]);
    }

    #[test]
    fn single_window_equals_dense_attention() {
        let (dim, heads, side) = (8, 2, 4);
        let block = SwinBlock::<f64>::new(&mut Init::new(&mut rng(6), true), dim, heads, side, side, false, 2, false);
        let x = random(&mut rng(7), &[side * side, dim]);
        let got = block.attention(&x, 1).unwrap().to_vec();

        let (n, hd) = (side * side, dim / heads);
        let xs = x.to_vec();
        let wq = param(&block, "attn.qkv.weight");
        let bq = param(&block, "attn.qkv.bias");
        let wp = param(&block, "attn.proj.weight");
        let bp = param(&block, "attn.proj.bias");
        let qkv: Vec<f64> = (0..n)
            .flat_map(|r| (0..3 * dim).map(move |o| (r, o)))
            .map(|(r, o)| bq[o] + (0..dim).map(|k| xs[r * dim + k] * wq[k * 3 * dim + o]).sum::<f64>())
            .collect();
        let at = |r: usize, s: usize, h: usize, d: usize| qkv[r * 3 * dim + s * dim + h * hd + d];
        let mut concat = vec![0.0; n * dim];
        for h in 0..heads {
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..hd).map(|d| at(i, 0, h, d) * at(j, 1, h, d)).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for d in 0..hd {
                    concat[i * dim + h * hd + d] = (0..n).map(|j| (scores[j] - mx).exp() / z * at(j, 2, h, d)).sum();
                }
            }
        }
        for i in 0..n {
            for o in 0..dim {
                let want = bp[o] + (0..dim).map(|k| concat[i * dim + k] * wp[k * dim + o]).sum::<f64>();
                assert!((got[i * dim + o] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn windows_are_isolated() {
        let (dim, side) = (8, 8);
        let block = SwinBlock::<f64>::new(&mut Init::new(&mut rng(8), true), dim, 2, side, 4, false, 2, true);
        let x = random(&mut rng(9), &[side * side, dim]);
        let mut zeroed = x.to_vec();
        // Token (0, 0) lives in window 0.
        zeroed[..dim].fill(0.0);
        let a = block.attention(&x, 1).unwrap().to_vec();
        let b = block.attention(&Tensor::from_vec(zeroed, &[side * side, dim]).unwrap(), 1).unwrap().to_vec();
        for r in 0..side {
            for c in 0..side {
                let same_window = r < 4 && c < 4;
                let row = (r * side + c) * dim;
                if !same_window {
                    assert_eq!(a[row..row + dim], b[row..row + dim]);
                }
            }
        }
        assert_ne!(a[dim..2 * dim], b[dim..2 * dim]);
    }

    #[test]
    fn shift_is_a_pure_permutation() {
        let (dim, side, w) = (8, 8, 4);
        let shifted = SwinBlock::<f64>::new(&mut Init::new(&mut rng(10), true), dim, 2, side, w, true, 2, true);
        let plain = SwinBlock::<f64>::new(&mut Init::new(&mut rng(11), true), dim, 2, side, w, false, 2, true);
        copy_params(&shifted, &plain);
        assert!(shifted.is_shifted() && !plain.is_shifted());
        let x = random(&mut rng(12), &[side * side, dim]);
        let roll = window::roll_indices(1, side, w / 2);
        let want = plain
            .attention(&x.gather_rows(&roll).unwrap(), 1)
            .unwrap()
            .gather_rows(&window::invert(&roll))
            .unwrap()
            .to_vec();
        let got = shifted.attention_unmasked(&x, 1).unwrap().to_vec();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // Rolling twice by half the side is the identity.
        let twice: Vec<usize> = window::roll_indices(1, side, side / 2);
        let twice: Vec<usize> = twice.iter().map(|&i| twice[i]).collect();
        assert_eq!(twice, (0..side * side).collect::<Vec<_>>());
    }

    #[test]
    fn last_stage_never_shifts_a_single_window() {
        let b = Backbone::<f32>::seeded(&BackboneConfig::default(), &mut rng(0)).unwrap();
        let shifted: Vec<bool> = b.blocks().map(|bl| bl.is_shifted()).collect();
        assert_eq!(shifted, vec![false, true, false, true, false, false]);
    }

    #[test]
    fn identical_images_identical_tokens() {
        let b = Backbone::<f32>::seeded(&BackboneConfig::default(), &mut rng(1)).unwrap();
        let mut r = rng(2);
        let one: Vec<f32> = (0..64 * 64 * 3).map(|_| r.random()).collect();
        let batch = Tensor::from_vec([one.clone(), one].concat(), &[2, 64, 64, 3]).unwrap();
        let t = b.forward_batch(&batch).unwrap().to_vec();
        assert_eq!(t[..16 * 192], t[16 * 192..]);
    }

    #[test]
    fn zero_and_one_images_differ() {
        let b = Backbone::<f32>::seeded(&BackboneConfig::default(), &mut rng(3)).unwrap();
        let z = b.forward(&Tensor::zeros(&[64, 64, 3])).unwrap().tokens.to_vec();
        let o = b.forward(&Tensor::full(&[64, 64, 3], 1.0)).unwrap().tokens.to_vec();
        assert!(z.iter().zip(&o).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max) > 1e-3);
    }

    #[test]
    fn every_parameter_receives_a_finite_gradient() {
        let b = Backbone::<f32>::seeded(&BackboneConfig::default(), &mut rng(4)).unwrap();
        let mut r = rng(5);
        let img: Vec<f32> = (0..64 * 64 * 3).map(|_| r.random()).collect();
        let g = b.forward(&Tensor::from_vec(img, &[64, 64, 3]).unwrap()).unwrap();
        let w: Vec<f32> = (0..16 * 192).map(|_| r.random_range(-1.0..1.0)).collect();
        g.tokens.mul(&Tensor::from_vec(w, &[16, 192]).unwrap()).unwrap().sum().backward().unwrap();
        for (name, p) in b.named_params() {
            let grad = p.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(grad.iter().all(|v| v.is_finite()), "{name}");
            assert!(grad.iter().any(|&v| v != 0.0), "{name}");
        }
    }
}
