//! Trains the detector on a synthetic dataset and prints held-out metrics
//! after every epoch.
//!
//! ```text
//! cargo run --release --example train_detector -- [config-file] [data-dir]
//! ```

use std::path::PathBuf;

use pict::config::RunConfig;
use pict::datagen::{make_dataset, Dataset, DatasetManifest, Split};
use pict::eval::{evaluate, metric};
use pict::train::Trainer;

fn main() -> pict::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::parse(include_str!("../../../configs/toy_det.cfg"))?,
    };
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("pict-data-{}", &config.hash()[..12])));
    if DatasetManifest::load(&root, Split::Test).is_err() {
        println!("generating data under {}", root.display());
        make_dataset(&config.data, &root)?;
    }
    let size = config.backbone.image_size;
    let (train, test) = (Dataset::load(&root, Split::Train, size)?, Dataset::load(&root, Split::Test, size)?);

    let mut trainer = Trainer::new(&config)?;
    while trainer.epoch < config.epochs {
        let log = trainer.train_epoch(&train)?;
        let rows = evaluate(&trainer.model, &test)?;
        println!(
            "{}\ttest auc {:.4}\tp@r90 {:.4}\ttop1 {:.4}",
            log.row(),
            metric(&rows, "auc").unwrap(),
            metric(&rows, "p_at_r90").unwrap(),
            metric(&rows, "top1").unwrap()
        );
    }
    Ok(())
}
