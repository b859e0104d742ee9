//! Training loop.
//!
//! Per batch: the teacher labels the original images through the pseudo
//! label generator, the student sees strongly augmented copies (pseudo
//! labels follow any flips), the patch and image losses are summed, and the
//! optimizer step is followed by the EMA teacher update.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Blob, Checkpoint, RngState};
use crate::config::RunConfig;
use crate::datagen::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::model::PicT;
use crate::nn::Parameterized;
use crate::optim::{lr_at, AdamW};
use crate::pseudolabel::{PatchPseudoLabels, PseudoLabeler};
use crate::refiner::{image_branch, image_loss, total_loss};
use crate::teacher::{patch_loss, strong_augment};
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;
const KMEANS_STREAM: u64 = 4;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.tsv";
pub const CONFIG_FILE: &str = "config.txt";

/// Losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub image_loss: f64,
    pub patch_loss: Option<f64>,
    /// Kept tokens over all tokens of the batch.
    pub kept_fraction: f64,
    pub lr: f64,
}

/// Means over the steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub image_loss: f64,
    pub patch_loss: f64,
    pub kept_fraction: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tloss\timage_loss\tpatch_loss\tkept_fraction\tlr\tseconds";

    pub fn row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.3e}\t{:.1}",
            self.epoch, self.loss, self.image_loss, self.patch_loss, self.kept_fraction, self.lr, self.seconds
        )
    }
}

pub struct Trainer {
    pub model: PicT,
    pub optim: AdamW,
    rng: ChaCha8Rng,
    labeler: PseudoLabeler,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let model = PicT::new(config)?;
        let optim = AdamW::new(config.optim.clone(), &model.trainable().params());
        Ok(Self {
            labeler: PseudoLabeler::new(config.delta_rel, RunConfig::NORMAL_CLASS, config.thresholds)?,
            model,
            optim,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SHUFFLE_STREAM])),
            epoch: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.model.config
    }

    /// Snapshot of parameters, optimizer moments and the shuffling RNG.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut blobs = self.model.blobs();
        for (moments, tag) in [(&self.optim.m, "m"), (&self.optim.v, "v")] {
            for ((name, p), data) in self.model.trainable().named_params().into_iter().zip(moments) {
                blobs.push(Blob {
                    name: format!("adam.{tag}.{name}"),
                    shape: p.shape().to_vec(),
                    data: data.clone(),
                });
            }
        }
        Checkpoint {
            config_text: self.config().to_text(),
            config_hash: self.config().hash(),
            epoch: self.epoch as u64,
            optim_step: self.optim.step,
            rng: RngState::capture(&self.rng),
            blobs,
        }
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(&ckpt.config()?)?;
        t.model.load_blobs(&ckpt.blobs)?;
        let names: Vec<String> = t.model.trainable().named_params().into_iter().map(|(n, _)| n).collect();
        for (tag, moments) in [("m", &mut t.optim.m), ("v", &mut t.optim.v)] {
            for (name, slot) in names.iter().zip(moments.iter_mut()) {
                let b = ckpt
                    .blob(&format!("adam.{tag}.{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for {name}")))?;
                if b.data.len() != slot.len() {
                    return Err(Error::Checkpoint(format!("optimizer state size mismatch for {name}")));
                }
                slot.copy_from_slice(&b.data);
            }
        }
        t.optim.step = ckpt.optim_step;
        t.rng = ckpt.rng.restore();
        t.epoch = ckpt.epoch as usize;
        Ok(t)
    }

    fn total_steps(&self, n: usize) -> (usize, usize) {
        let per_epoch = n.div_ceil(self.config().batch_size);
        (self.config().optim.warmup_epochs * per_epoch, self.config().epochs * per_epoch)
    }

    /// Teacher pseudo labels for original images `[b, H, W, 3]`.
    fn pseudo_labels(&self, images: &Tensor<f32>, labels: &[usize]) -> Result<Vec<PatchPseudoLabels>> {
        let teacher = &self.model.pair.teacher;
        let probs = teacher.patch_logits(&teacher.tokens(images)?)?.softmax_rows()?;
        let classes = self.config().num_classes();
        let per_image = self.config().backbone.num_tokens() * classes;
        let p = probs.data();
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| self.labeler.generate(&p[i * per_image..(i + 1) * per_image], classes, y))
            .collect()
    }

    /// One optimizer step on the samples `indices` of `data`.
    pub fn step(&mut self, data: &Dataset, indices: &[usize], batch_index: usize) -> Result<StepStats> {
        let cfg = self.config().clone();
        let n = cfg.backbone.image_size;
        let g = cfg.backbone.grid_side();
        let b = indices.len();
        let labels: Vec<usize> = indices
            .iter()
            .map(|&i| cfg.label_of(data.manifest.entries[i].class_index))
            .collect();
        let aug_seeds: Vec<u64> = indices
            .iter()
            .map(|&i| derive_seed(cfg.seed, &[AUGMENT_STREAM, self.epoch as u64, i as u64]))
            .collect();
        let original: Vec<f32> = indices.iter().flat_map(|&i| data.images[i].iter().copied()).collect();
        let original = Tensor::from_vec(original, &[b, n, n, 3])?;

        let mut student_input = Vec::with_capacity(b * n * n * 3);
        let mut sources = Vec::with_capacity(b);
        for (&i, &seed) in indices.iter().zip(&aug_seeds) {
            if cfg.strong_augment {
                let (img, draw) = strong_augment(&data.images[i], n, seed, &cfg.augment);
                student_input.extend(img);
                sources.push((0..g * g).map(|j| draw.source_token(j, g)).collect::<Vec<_>>());
            } else {
                student_input.extend_from_slice(&data.images[i]);
                sources.push((0..g * g).collect());
            }
        }
        let student_input = Tensor::from_vec(student_input, &[b, n, n, 3])?;

        let student = &self.model.pair.student;
        let tokens = student.tokens(&student_input)?;
        let (patch, kept_fraction) = if cfg.patch_branch {
            let pseudo = self.pseudo_labels(&original, &labels)?;
            let mut all_labels = Vec::with_capacity(b * g * g);
            let mut all_keep = Vec::with_capacity(b * g * g);
            for (p, src) in pseudo.iter().zip(&sources) {
                let p = p.permuted(src);
                all_labels.extend(p.labels);
                all_keep.extend(p.keep_mask);
            }
            let kept = all_keep.iter().filter(|&&k| k).count();
            let merged = PatchPseudoLabels {
                labels: all_labels,
                keep_mask: all_keep,
                delta_rel: cfg.delta_rel,
                normal_class: RunConfig::NORMAL_CLASS,
            };
            let logits = student.patch_logits(&tokens)?;
            (patch_loss(&logits, &merged)?, kept as f64 / (b * g * g) as f64)
        } else {
            (None, 0.0)
        };

        let kmeans_seeds: Vec<u64> = indices
            .iter()
            .map(|&i| derive_seed(cfg.seed, &[KMEANS_STREAM, self.epoch as u64, i as u64]))
            .collect();
        let branch = image_branch(
            &tokens,
            b,
            cfg.k,
            &self.model.image_head,
            RunConfig::NORMAL_CLASS,
            &kmeans_seeds,
            None,
        )?;
        let li = image_loss(&branch.selected_logits, &labels)?;
        let total = total_loss(&li, patch.as_ref(), cfg.patch_loss_weight)?;
        let loss = total.item() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: batch_index,
                seed: cfg.seed,
                batch_seeds: aug_seeds,
            });
        }

        let params = self.model.trainable().params();
        params.iter().for_each(|p| p.zero_grad());
        total.backward()?;
        let (warmup, steps) = self.total_steps(data.len());
        let lr = lr_at(cfg.optim.lr, self.optim.step as usize, warmup, steps);
        self.optim.step(&params, lr);
        self.model.pair.ema_update();
        Ok(StepStats {
            loss,
            image_loss: li.item() as f64,
            patch_loss: patch.map(|p| p.item() as f64),
            kept_fraction,
            lr,
        })
    }

    /// One pass over `data` in a seeded shuffled order.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochLog> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0f64; 4];
        let (mut steps, mut patch_steps) = (0usize, 0usize);
        let mut lr = 0.0;
        for (bi, chunk) in order.chunks(self.config().batch_size).enumerate() {
            let s = self.step(data, chunk, bi)?;
            sums[0] += s.loss;
            sums[1] += s.image_loss;
            if let Some(p) = s.patch_loss {
                sums[2] += p;
                patch_steps += 1;
            }
            sums[3] += s.kept_fraction;
            steps += 1;
            lr = s.lr;
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            loss: sums[0] / steps as f64,
            image_loss: sums[1] / steps as f64,
            patch_loss: if patch_steps > 0 { sums[2] / patch_steps as f64 } else { 0.0 },
            kept_fraction: sums[3] / steps as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Trains for the configured number of epochs (continuing from the trainer's
/// epoch counter). With an output directory, the config, a checkpoint after
/// every epoch and a tab-separated log are written there.
pub fn fit(trainer: &mut Trainer, data: &Dataset, out: Option<&Path>) -> Result<Vec<EpochLog>> {
    let mut log_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join(CONFIG_FILE);
            fs::write(&cfg_path, trainer.config().to_text()).map_err(|e| Error::io(&cfg_path, e))?;
            let path = dir.join(LOG_FILE);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{}", EpochLog::HEADER).map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut logs = Vec::new();
    while trainer.epoch < trainer.config().epochs {
        let log = trainer.train_epoch(data)?;
        log::info!("{}", log.row());
        if let Some(dir) = out {
            trainer.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        }
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", log.row()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        logs.push(log);
    }
    Ok(logs)
}

/// Loads the training split under `data_root` and trains a fresh model.
pub fn train(config: &RunConfig, data_root: &Path, out: Option<&Path>) -> Result<(Trainer, Vec<EpochLog>)> {
    let data = Dataset::load(data_root, crate::datagen::Split::Train, config.backbone.image_size)?;
    check_classes(config, &data)?;
    let mut trainer = Trainer::new(config)?;
    let logs = fit(&mut trainer, &data, out)?;
    Ok((trainer, logs))
}

/// The dataset's class list must match the configured categories.
pub fn check_classes(config: &RunConfig, data: &Dataset) -> Result<()> {
    let want: Vec<&str> = config.data.categories.iter().map(|c| c.name()).collect();
    if data.manifest.class_names != want {
        return Err(Error::Data(format!(
            "dataset classes {:?} differ from configured categories {want:?}",
            data.manifest.class_names
        )));
    }
    Ok(())
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join(CHECKPOINT_FILE)
}
