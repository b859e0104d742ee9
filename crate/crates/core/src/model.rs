//! The full model: student and EMA teacher networks plus the image head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Blob, Checkpoint};
use crate::config::RunConfig;
use crate::datagen::derive_seed;
use crate::error::{Error, Result};
use crate::nn::{join, Parameterized};
use crate::refiner::{infer_tokens, ImageHead, Inference};
use crate::teacher::ModelPair;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 1;

pub struct PicT {
    pub config: RunConfig,
    pub pair: ModelPair,
    pub image_head: ImageHead,
}

/// Parameters updated by the optimizer: the student and the image head.
pub struct Trainable<'a>(&'a PicT);

impl Parameterized<f32> for Trainable<'_> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<f32>)>) {
        self.0.pair.student.collect_params(&join(prefix, "student"), out);
        self.0.image_head.collect_params(&join(prefix, "image_head"), out);
    }
}

impl Parameterized<f32> for PicT {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<f32>)>) {
        Trainable(self).collect_params(prefix, out);
        self.pair.teacher.collect_params(&join(prefix, "teacher"), out);
    }
}

impl PicT {
    /// Freshly initialised model seeded from `config.seed`.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let classes = config.num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[INIT_STREAM]));
        let pair = ModelPair::new(&config.backbone, classes, config.lambda, &mut rng)?;
        let image_head = ImageHead::seeded(config.backbone.token_dim(), classes, &mut rng);
        Ok(Self {
            config: config.clone(),
            pair,
            image_head,
        })
    }

    pub fn trainable(&self) -> Trainable<'_> {
        Trainable(self)
    }

    pub fn blobs(&self) -> Vec<Blob> {
        self.named_params()
            .into_iter()
            .map(|(name, t)| Blob {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect()
    }

    /// Overwrites every parameter from same-named blobs of matching shape.
    pub fn load_blobs(&self, blobs: &[Blob]) -> Result<()> {
        for (name, t) in self.named_params() {
            let b = blobs
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if b.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    b.shape,
                    t.shape()
                )));
            }
            t.update(|d| d.copy_from_slice(&b.data));
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = Self::new(&ckpt.config()?)?;
        model.load_blobs(&ckpt.blobs)?;
        Ok(model)
    }

    fn batch_tensor(&self, images: &[&[f32]]) -> Result<Tensor<f32>> {
        let n = self.config.backbone.image_size;
        let mut flat = Vec::with_capacity(images.len() * n * n * 3);
        for img in images {
            if img.len() != n * n * 3 {
                return Err(Error::Input(format!("image has {} values, expected {n}x{n}x3", img.len())));
            }
            flat.extend_from_slice(img);
        }
        Ok(Tensor::from_vec(flat, &[images.len(), n, n, 3])?)
    }

    /// Image-branch inference with the student backbone; neither the teacher
    /// nor the patch head is evaluated.
    pub fn infer(&self, images: &[&[f32]]) -> Result<Vec<Inference>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.config.batch_size) {
            let tokens = self.pair.student.tokens(&self.batch_tensor(chunk)?)?;
            out.extend(infer_tokens(
                &tokens.detach(),
                chunk.len(),
                &self.image_head,
                self.config.k,
                RunConfig::NORMAL_CLASS,
            )?);
        }
        Ok(out)
    }

    /// Teacher patch probabilities `[m * C]` per image.
    pub fn teacher_patch_probs(&self, images: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        let per_image = self.config.backbone.num_tokens() * self.config.num_classes();
        for chunk in images.chunks(self.config.batch_size) {
            let teacher = &self.pair.teacher;
            let probs = teacher.patch_logits(&teacher.tokens(&self.batch_tensor(chunk)?)?)?.softmax_rows()?;
            out.extend(probs.data().chunks(per_image).map(|c| c.to_vec()));
        }
        Ok(out)
    }
}
