//! Scoring a trained model on a dataset split.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Task};
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, ScoredPredictions};
use crate::model::PicT;

/// Runs inference over every image of `data`.
pub fn score(model: &PicT, data: &Dataset) -> Result<ScoredPredictions> {
    let images: Vec<&[f32]> = data.images.iter().map(|v| v.as_slice()).collect();
    let out = model.infer(&images)?;
    Ok(ScoredPredictions {
        scores: out.iter().map(|o| o.distress_score).collect(),
        labels: data
            .manifest
            .entries
            .iter()
            .map(|e| model.config.label_of(e.class_index))
            .collect(),
        predicted: out.iter().map(|o| o.class).collect(),
        normal_class: RunConfig::NORMAL_CLASS,
    })
}

/// Metric rows for `data`: detection metrics always, recognition metrics
/// over the task's labels.
pub fn evaluate(model: &PicT, data: &Dataset) -> Result<Vec<(String, f64)>> {
    let scored = score(model, data)?;
    metrics::evaluate(&scored, model.config.task == Task::Recognition)
}

/// Loads a checkpoint, checks the requested task against it and returns the
/// metrics CSV for one split of the dataset under `data_root`.
pub fn evaluate_checkpoint(ckpt_path: &Path, data_root: &Path, task: Task, split: Split) -> Result<String> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let config = ckpt.config()?;
    if config.task != task {
        return Err(Error::Config(format!(
            "checkpoint was trained for {}, evaluation asked for {}",
            config.task.name(),
            task.name()
        )));
    }
    let model = PicT::from_checkpoint(&ckpt)?;
    let data = Dataset::load(data_root, split, config.backbone.image_size)?;
    crate::train::check_classes(&config, &data)?;
    let rows = evaluate(&model, &data)?;
    Ok(metrics::to_csv(&rows, &ckpt.config_hash))
}

pub fn metric(rows: &[(String, f64)], name: &str) -> Option<f64> {
    rows.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
}
