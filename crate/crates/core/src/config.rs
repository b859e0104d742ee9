//! Run configuration as `key = value` text.
//!
//! Every key is optional and falls back to its default; unknown keys, repeated
//! keys and malformed values are rejected. `k` and `delta_rel` default by
//! task. The hash is taken over the canonical rendering, which lists every
//! key with its resolved value.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::datagen::{Category, DatasetConfig};
use crate::error::{Error, Result};
use crate::pseudolabel::{FilterThresholds, DETECTION_DELTA_REL, RECOGNITION_DELTA_REL};
use crate::refiner::{DETECTION_K, RECOGNITION_K};
use crate::teacher::AugmentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Binary: normal vs. distressed.
    Detection,
    /// One class per category.
    Recognition,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Detection => "det",
            Task::Recognition => "rec",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" => Ok(Task::Detection),
            "rec" => Ok(Task::Recognition),
            _ => Err(Error::Config(format!("task must be det or rec, got {s:?}"))),
        }
    }
}

/// AdamW with warmup and cosine decay. These are desk-scale substitutes;
/// the method leaves the optimizer and its schedule open.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup length before the cosine decay.
    pub warmup_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub backbone: BackboneConfig,
    pub lambda: f64,
    pub delta_rel: f64,
    pub k: usize,
    pub thresholds: FilterThresholds,
    pub patch_loss_weight: f64,
    /// Teacher, pseudo labels and patch loss. Off gives the image branch alone.
    pub patch_branch: bool,
    /// Strong augmentation of the student view.
    pub strong_augment: bool,
    pub augment: AugmentConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub data: DatasetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(Task::Detection)
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

impl RunConfig {
    pub fn for_task(task: Task) -> Self {
        let (k, delta_rel) = match task {
            Task::Detection => (DETECTION_K, DETECTION_DELTA_REL),
            Task::Recognition => (RECOGNITION_K, RECOGNITION_DELTA_REL),
        };
        Self {
            task,
            backbone: BackboneConfig::default(),
            lambda: 0.999,
            delta_rel,
            k,
            thresholds: FilterThresholds::default(),
            patch_loss_weight: 1.0,
            patch_branch: true,
            strong_augment: true,
            augment: AugmentConfig::default(),
            optim: OptimConfig::default(),
            epochs: 60,
            batch_size: 32,
            seed: 0,
            data: DatasetConfig::default(),
        }
    }

    /// Number of classes the heads predict.
    pub fn num_classes(&self) -> usize {
        match self.task {
            Task::Detection => 2,
            Task::Recognition => self.data.categories.len(),
        }
    }

    pub const NORMAL_CLASS: usize = 0;

    /// Maps a dataset class index to the label used by this task.
    pub fn label_of(&self, class_index: usize) -> usize {
        match self.task {
            Task::Detection => (class_index != Self::NORMAL_CLASS) as usize,
            Task::Recognition => class_index,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        self.backbone.validate()?;
        self.data.validate()?;
        if self.data.image_size != self.backbone.image_size {
            return err("data and backbone image sizes differ".into());
        }
        if self.task == Task::Recognition && self.num_classes() <= 2 {
            return err(format!(
                "recognition needs more than two categories, got {:?}",
                self.data.categories
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return err(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.delta_rel > 0.0 && self.delta_rel <= 1.0) {
            return err(format!("delta_rel {} outside (0, 1]", self.delta_rel));
        }
        if self.k == 0 || self.k > self.backbone.num_tokens() {
            return err(format!("k {} outside [1, {}]", self.k, self.backbone.num_tokens()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return err("epochs and batch_size must be positive".into());
        }
        if !(self.optim.lr > 0.0) || self.optim.weight_decay < 0.0 || !(self.patch_loss_weight >= 0.0) {
            return err("lr must be positive and weight decay, patch_loss_weight non-negative".into());
        }
        let a = &self.augment;
        if !(0.0..=1.0).contains(&a.flip_prob) || !(0.0..1.0).contains(&a.jitter) || !(0.02..=1.0).contains(&a.max_erase_fraction) {
            return err("augmentation parameters out of range".into());
        }
        Ok(())
    }

    /// Canonical text with every key.
    pub fn to_text(&self) -> String {
        let b = &self.backbone;
        let d = &self.data;
        let a = &self.augment;
        let o = &self.optim;
        let cats: Vec<&str> = d.categories.iter().map(|c| c.name()).collect();
        let lines = [
            ("task", self.task.name().to_string()),
            ("image_size", b.image_size.to_string()),
            ("patch_size", b.patch_size.to_string()),
            ("embed_dim", b.embed_dim.to_string()),
            ("depths", list(&b.depths)),
            ("heads", list(&b.heads)),
            ("window", b.window.to_string()),
            ("mlp_ratio", b.mlp_ratio.to_string()),
            ("rel_pos_bias", b.rel_pos_bias.to_string()),
            ("lambda", self.lambda.to_string()),
            ("delta_rel", self.delta_rel.to_string()),
            ("k", self.k.to_string()),
            ("filter_distressed_normal", self.thresholds.distressed_image_normal.to_string()),
            ("filter_normal_normal", self.thresholds.normal_image_normal.to_string()),
            ("patch_loss_weight", self.patch_loss_weight.to_string()),
            ("patch_branch", self.patch_branch.to_string()),
            ("strong_augment", self.strong_augment.to_string()),
            ("flip_prob", a.flip_prob.to_string()),
            ("jitter", a.jitter.to_string()),
            ("max_erase_fraction", a.max_erase_fraction.to_string()),
            ("erase_fill", a.erase_fill.to_string()),
            ("lr", o.lr.to_string()),
            ("weight_decay", o.weight_decay.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("adam_eps", o.eps.to_string()),
            ("warmup_epochs", o.warmup_epochs.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("categories", cats.join(",")),
            ("train_counts", list(&d.train_counts)),
            ("test_counts", list(&d.test_counts)),
            ("area_ratio_min", d.area_ratio_min.to_string()),
            ("area_ratio_max", d.area_ratio_max.to_string()),
            ("data_seed", d.seed.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim().to_string();
            if pairs.iter().any(|(p, _)| *p == k) {
                return Err(Error::Config(format!("line {}: repeated key {k}", n + 1)));
            }
            pairs.push((k, v.trim().to_string()));
        }
        let task = match pairs.iter().find(|(k, _)| k == "task") {
            Some((_, v)) => v.parse()?,
            None => Task::Detection,
        };
        let mut c = Self::for_task(task);
        for (key, v) in &pairs {
            let key = key.as_str();
            match key {
                "task" => {}
                "image_size" => {
                    c.backbone.image_size = parse_value(key, v)?;
                    c.data.image_size = c.backbone.image_size;
                }
                "patch_size" => c.backbone.patch_size = parse_value(key, v)?,
                "embed_dim" => c.backbone.embed_dim = parse_value(key, v)?,
                "depths" => c.backbone.depths = parse_list(key, v)?,
                "heads" => c.backbone.heads = parse_list(key, v)?,
                "window" => c.backbone.window = parse_value(key, v)?,
                "mlp_ratio" => c.backbone.mlp_ratio = parse_value(key, v)?,
                "rel_pos_bias" => c.backbone.rel_pos_bias = parse_value(key, v)?,
                "lambda" => c.lambda = parse_value(key, v)?,
                "delta_rel" => c.delta_rel = parse_value(key, v)?,
                "k" => c.k = parse_value(key, v)?,
                "filter_distressed_normal" => c.thresholds.distressed_image_normal = parse_value(key, v)?,
                "filter_normal_normal" => c.thresholds.normal_image_normal = parse_value(key, v)?,
                "patch_loss_weight" => c.patch_loss_weight = parse_value(key, v)?,
                "patch_branch" => c.patch_branch = parse_value(key, v)?,
                "strong_augment" => c.strong_augment = parse_value(key, v)?,
                "flip_prob" => c.augment.flip_prob = parse_value(key, v)?,
                "jitter" => c.augment.jitter = parse_value(key, v)?,
                "max_erase_fraction" => c.augment.max_erase_fraction = parse_value(key, v)?,
                "erase_fill" => c.augment.erase_fill = parse_value(key, v)?,
                "lr" => c.optim.lr = parse_value(key, v)?,
                "weight_decay" => c.optim.weight_decay = parse_value(key, v)?,
                "beta1" => c.optim.beta1 = parse_value(key, v)?,
                "beta2" => c.optim.beta2 = parse_value(key, v)?,
                "adam_eps" => c.optim.eps = parse_value(key, v)?,
                "warmup_epochs" => c.optim.warmup_epochs = parse_value(key, v)?,
                "epochs" => c.epochs = parse_value(key, v)?,
                "batch_size" => c.batch_size = parse_value(key, v)?,
                "seed" => c.seed = parse_value(key, v)?,
                "categories" => {
                    c.data.categories = v
                        .split(',')
                        .map(|s| s.trim().parse::<Category>())
                        .collect::<Result<_>>()?
                }
                "train_counts" => c.data.train_counts = parse_list(key, v)?,
                "test_counts" => c.data.test_counts = parse_list(key, v)?,
                "area_ratio_min" => c.data.area_ratio_min = parse_value(key, v)?,
                "area_ratio_max" => c.data.area_ratio_max = parse_value(key, v)?,
                "data_seed" => c.data.seed = parse_value(key, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The broad-head baseline: one token group and no patch branch.
    pub fn baseline(&self) -> Self {
        Self {
            k: 1,
            patch_branch: false,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        for task in [Task::Detection, Task::Recognition] {
            let c = RunConfig::for_task(task);
            assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn task_sets_k_and_delta() {
        let det = RunConfig::parse("task = det").unwrap();
        assert_eq!((det.k, det.delta_rel, det.num_classes()), (2, 0.25, 2));
        let rec = RunConfig::parse("task = rec\n").unwrap();
        assert_eq!((rec.k, rec.delta_rel, rec.num_classes()), (3, 0.35, 4));
        let rec = RunConfig::parse("k = 4\ntask = rec").unwrap();
        assert_eq!(rec.k, 4);
    }

    #[test]
    fn recognition_needs_more_than_two_classes() {
        let text = "task = rec\ncategories = normal,crack\ntrain_counts = 1,1\ntest_counts = 1,1";
        assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_and_repeated_keys_are_errors() {
        assert!(matches!(RunConfig::parse("lamda = 0.9"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("k = 2\nk = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("epochs"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("lambda = 1.5"), Err(Error::Config(_))));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = RunConfig::parse("# toy run\n\nepochs = 3  # short\n").unwrap();
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn hash_tracks_every_value() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.optim.lr = 1e-3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn detection_labels_are_binary() {
        let c = RunConfig::default();
        assert_eq!((0..4).map(|i| c.label_of(i)).collect::<Vec<_>>(), vec![0, 1, 1, 1]);
    }
}
