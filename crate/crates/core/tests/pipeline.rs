use std::path::Path;

use pict::checkpoint::Checkpoint;
use pict::config::RunConfig;
use pict::datagen::{make_dataset, Dataset, DatasetConfig, Split};
use pict::eval::{evaluate, metric};
use pict::model::PicT;
use pict::sweep::{sweep, SweepParam};
use pict::train::Trainer;
use pict::Error;

fn small_config(epochs: usize) -> RunConfig {
    RunConfig {
        epochs,
        batch_size: 8,
        data: DatasetConfig {
            train_counts: vec![8, 3, 3, 2],
            test_counts: vec![4, 2, 2, 2],
            seed: 11,
            ..DatasetConfig::default()
        },
        ..RunConfig::default()
    }
}

fn data(root: &Path, config: &RunConfig) -> (Dataset, Dataset) {
    make_dataset(&config.data, root).unwrap();
    (
        Dataset::load(root, Split::Train, 64).unwrap(),
        Dataset::load(root, Split::Test, 64).unwrap(),
    )
}

#[test]
fn inference_touches_neither_teacher_nor_patch_head() {
    let model = PicT::new(&small_config(1)).unwrap();
    let images: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32 / 10.0; 64 * 64 * 3]).collect();
    let refs: Vec<&[f32]> = images.iter().map(|v| v.as_slice()).collect();
    let out = model.infer(&refs).unwrap();
    assert_eq!(out.len(), 10);
    assert_eq!(model.pair.teacher.call_counts(), (0, 0));
    // Two chunks of at most eight images.
    assert_eq!(model.pair.student.call_counts(), (2, 0));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(2);
    let (train, _) = data(dir.path(), &config);

    let mut straight = Trainer::new(&config).unwrap();
    straight.train_epoch(&train).unwrap();
    straight.train_epoch(&train).unwrap();

    let mut first = Trainer::new(&config).unwrap();
    first.train_epoch(&train).unwrap();
    let path = dir.path().join("mid.bin");
    first.checkpoint().save(&path).unwrap();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.epoch, 1);
    resumed.train_epoch(&train).unwrap();

    assert_eq!(straight.checkpoint().to_bytes(), resumed.checkpoint().to_bytes());
}

#[test]
fn checkpoint_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(1);
    let path = dir.path().join("c.bin");
    Trainer::new(&config).unwrap().checkpoint().save(&path).unwrap();
    assert!(Checkpoint::load_for(&path, &config).is_ok());
    let other = RunConfig { k: 3, ..config };
    assert!(matches!(Checkpoint::load_for(&path, &other), Err(Error::Checkpoint(_))));
}

#[test]
fn sweep_row_equals_a_standalone_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(1);
    let (train, test) = data(dir.path(), &config);
    let csv = sweep(&config, SweepParam::K, &[1.0], dir.path(), None).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();

    let k1 = SweepParam::K.apply(&config, 1.0).unwrap();
    let mut trainer = Trainer::new(&k1).unwrap();
    pict::train::fit(&mut trainer, &train, None).unwrap();
    let rows = evaluate(&trainer.model, &test).unwrap();
    assert_eq!(row[2].parse::<f64>().unwrap(), metric(&rows, "auc").unwrap());
    assert_eq!(row[7], k1.hash());
}
