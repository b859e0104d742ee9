//! Trains two epochs straight and one plus one with a checkpoint in between,
//! then compares the resulting checkpoints byte for byte.
//!
//! ```text
//! cargo run --release --example checkpoint_resume
//! ```

use pict::checkpoint::Checkpoint;
use pict::config::RunConfig;
use pict::datagen::{make_dataset, Dataset, DatasetConfig, Split};
use pict::train::Trainer;

fn main() -> pict::Result<()> {
    let dir = std::env::temp_dir().join("pict-resume-example");
    let config = RunConfig {
        epochs: 2,
        batch_size: 8,
        data: DatasetConfig {
            train_counts: vec![16, 6, 5, 5],
            test_counts: vec![4, 2, 2, 2],
            ..DatasetConfig::default()
        },
        ..RunConfig::default()
    };
    make_dataset(&config.data, &dir)?;
    let train = Dataset::load(&dir, Split::Train, config.backbone.image_size)?;

    let mut straight = Trainer::new(&config)?;
    for _ in 0..2 {
        println!("straight  {}", straight.train_epoch(&train)?.row());
    }

    let mut first = Trainer::new(&config)?;
    println!("first     {}", first.train_epoch(&train)?.row());
    let path = dir.join("epoch1.bin");
    first.checkpoint().save(&path)?;
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::load(&path)?)?;
    println!("resumed   {}", resumed.train_epoch(&train)?.row());

    let (a, b) = (straight.checkpoint().to_bytes(), resumed.checkpoint().to_bytes());
    println!("{} bytes each, identical: {}", a.len(), a == b);
    Ok(())
}
