//! Patch labeling teacher: student/teacher networks (backbone plus a linear
//! patch head), the EMA teacher update, per-token predictions, the masked
//! patch loss and the strong augmentation applied to the student's view.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneConfig, TokenGrid};
use crate::error::{Error, Result};
use crate::nn::{copy_params, join, Init, Linear, Parameterized};
use crate::pseudolabel::PatchPseudoLabels;
use crate::tensor::{Real, Target, Tensor};

/// Backbone followed by the per-token patch head.
pub struct Network<F: Real = f32> {
    pub backbone: Backbone<F>,
    pub patch_head: Linear<F>,
    backbone_calls: Cell<u64>,
    patch_head_calls: Cell<u64>,
}

impl<F: Real> Network<F> {
    pub fn new(config: &BackboneConfig, classes: usize, init: &mut Init<'_>) -> Result<Self> {
        let backbone = Backbone::new(config, init)?;
        let patch_head = Linear::new(init, config.token_dim(), classes, true);
        Ok(Self {
            backbone,
            patch_head,
            backbone_calls: Cell::new(0),
            patch_head_calls: Cell::new(0),
        })
    }

    pub fn classes(&self) -> usize {
        self.patch_head.out_features()
    }

    /// Tokens for `[batch, H, W, 3]` images.
    pub fn tokens(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        self.backbone_calls.set(self.backbone_calls.get() + 1);
        self.backbone.forward_batch(images)
    }

    /// Patch-head logits for token rows `[rows, L]`.
    pub fn patch_logits(&self, tokens: &Tensor<F>) -> Result<Tensor<F>> {
        self.patch_head_calls.set(self.patch_head_calls.get() + 1);
        Ok(self.patch_head.forward(tokens)?)
    }

    /// Number of backbone and patch-head forward passes run on this network.
    pub fn call_counts(&self) -> (u64, u64) {
        (self.backbone_calls.get(), self.patch_head_calls.get())
    }
}

impl<F: Real> Parameterized<F> for Network<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.backbone.collect_params(&join(prefix, "backbone"), out);
        self.patch_head.collect_params(&join(prefix, "patch_head"), out);
    }
}

/// Per-token class probabilities from a patch head.
#[derive(Debug, Clone)]
pub struct PatchPredictions<F: Real = f32> {
    /// `[m, C]`
    pub logits: Tensor<F>,
    /// `[m, C]`, rows on the simplex.
    pub probs: Tensor<F>,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Student,
    Teacher,
}

/// Applies a patch head to a token grid.
pub fn patch_head_forward<F: Real>(head: &Linear<F>, tokens: &TokenGrid<F>, source: Source) -> Result<PatchPredictions<F>> {
    let logits = head.forward(&tokens.tokens)?;
    let probs = logits.softmax_rows()?;
    Ok(PatchPredictions { logits, probs, source })
}

/// Student and EMA teacher. The teacher's tensors are constants, so nothing
/// computed from them ever enters the gradient tape.
pub struct ModelPair<F: Real = f32> {
    pub student: Network<F>,
    pub teacher: Network<F>,
    lambda: f64,
}

impl<F: Real> ModelPair<F> {
    /// Seeded student; the teacher starts as an exact copy.
    pub fn new(config: &BackboneConfig, classes: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        check_lambda(lambda)?;
        let student = Network::new(config, classes, &mut Init::new(rng, true))?;
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let teacher = Network::new(config, classes, &mut Init::new(&mut scratch, false))?;
        copy_params(&student, &teacher);
        Ok(Self { student, teacher, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        check_lambda(lambda)?;
        self.lambda = lambda;
        Ok(())
    }

    /// `teacher <- lambda * teacher + (1 - lambda) * student`, elementwise.
    pub fn ema_update(&self) {
        ema_update(&self.student, &self.teacher, self.lambda);
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!("EMA decay {lambda} outside [0, 1]")))
    }
}

/// EMA of aligned parameter lists. Endpoints are exact: `lambda = 1` keeps
/// the teacher, `lambda = 0` copies the student bit for bit.
pub fn ema_update<F: Real>(student: &impl Parameterized<F>, teacher: &impl Parameterized<F>, lambda: f64) {
    let (s, t) = (student.params(), teacher.params());
    assert_eq!(s.len(), t.len(), "student and teacher differ in parameter count");
    if lambda == 1.0 {
        return;
    }
    let keep = F::of(lambda);
    let take = F::of(1.0 - lambda);
    for (sp, tp) in s.iter().zip(&t) {
        assert_eq!(sp.shape(), tp.shape());
        let src = sp.data();
        tp.update(|dst| {
            if lambda == 0.0 {
                dst.copy_from_slice(&src);
            } else {
                dst.iter_mut().zip(src.iter()).for_each(|(d, &s)| *d = keep * *d + take * s);
            }
        });
    }
}

/// Mean cross-entropy between student patch logits and pseudo labels over
/// the kept patches. `None` when the filter kept nothing, in which case the
/// caller trains on the image loss alone.
pub fn patch_loss<F: Real>(student_logits: &Tensor<F>, pseudo: &PatchPseudoLabels) -> Result<Option<Tensor<F>>> {
    if pseudo.kept() == 0 {
        return Ok(None);
    }
    let loss = student_logits.cross_entropy(&Target::Classes(pseudo.labels.clone()), Some(&pseudo.keep_mask))?;
    Ok(Some(loss))
}

/// Recipe of the student's strong augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Brightness offset and contrast factor are drawn from `±jitter`.
    pub jitter: f64,
    pub max_erase_fraction: f64,
    pub erase_fill: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            jitter: 0.3,
            max_erase_fraction: 0.25,
            erase_fill: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.top && r < self.top + self.height && c >= self.left && c < self.left + self.width
    }
}

/// Parameters drawn for one augmentation, in draw order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip_h: bool,
    pub flip_v: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub erase: Rect,
}

impl AugmentDraw {
    /// Replays the random draws for an image of side `size`.
    pub fn sample(config: &AugmentConfig, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip_h = rng.random_bool(config.flip_prob);
        let flip_v = rng.random_bool(config.flip_prob);
        let j = config.jitter;
        let brightness = rng.random_range(-j..=j) as f32;
        let contrast = (1.0 + rng.random_range(-j..=j)) as f32;
        let area = rng.random_range(0.02..=config.max_erase_fraction) * (size * size) as f64;
        let aspect: f64 = rng.random_range(0.5..=2.0);
        let height = ((area * aspect).sqrt().floor() as usize).clamp(1, size);
        let width = ((area / height as f64).floor() as usize).clamp(1, size);
        let top = rng.random_range(0..=size - height);
        let left = rng.random_range(0..=size - width);
        Self {
            flip_h,
            flip_v,
            brightness,
            contrast,
            erase: Rect { top, left, height, width },
        }
    }

    /// Maps a student token index on a `grid x grid` token grid to the token
    /// of the original image covering the same content.
    pub fn source_token(&self, index: usize, grid: usize) -> usize {
        let (mut r, mut c) = (index / grid, index % grid);
        if self.flip_v {
            r = grid - 1 - r;
        }
        if self.flip_h {
            c = grid - 1 - c;
        }
        r * grid + c
    }
}

/// Seeded flips, brightness/contrast jitter and one erased rectangle on a
/// row-major `[size, size, 3]` image with values in `[0, 1]`.
pub fn strong_augment(image: &[f32], size: usize, seed: u64, config: &AugmentConfig) -> (Vec<f32>, AugmentDraw) {
    assert_eq!(image.len(), size * size * 3, "image is not {size}x{size}x3");
    let draw = AugmentDraw::sample(config, size, seed);
    let mean = image.iter().map(|&v| v as f64).sum::<f64>() / image.len() as f64;
    let mean = mean as f32;
    let mut out = vec![0f32; image.len()];
    for r in 0..size {
        for c in 0..size {
            let sr = if draw.flip_v { size - 1 - r } else { r };
            let sc = if draw.flip_h { size - 1 - c } else { c };
            for ch in 0..3 {
                let v = image[(sr * size + sc) * 3 + ch];
                let v = if draw.erase.contains(r, c) {
                    config.erase_fill
                } else {
                    (v - mean) * draw.contrast + mean + draw.brightness
                };
                out[(r * size + c) * 3 + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    (out, draw)
}
