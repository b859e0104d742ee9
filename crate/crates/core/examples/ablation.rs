//! Full model against the broad-head baseline (one token group, no patch
//! branch) over a few shared seeds on the toy detection set.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs] [seeds]
//! ```

use pict::config::RunConfig;
use pict::datagen::{make_dataset, Dataset, DatasetManifest, Split};
use pict::eval::{evaluate, metric};
use pict::train::{fit, Trainer};

fn main() -> pict::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let epochs = args.next().flatten().unwrap_or(4);
    let seeds = args.next().flatten().unwrap_or(3) as u64;
    let base = RunConfig {
        epochs,
        ..RunConfig::parse(include_str!("../../../configs/toy_det.cfg"))?
    };
    let root = std::env::temp_dir().join(format!("pict-data-{}", &base.hash()[..12]));
    if DatasetManifest::load(&root, Split::Test).is_err() {
        make_dataset(&base.data, &root)?;
    }
    let size = base.backbone.image_size;
    let (train, test) = (Dataset::load(&root, Split::Train, size)?, Dataset::load(&root, Split::Test, size)?);

    println!("seed  arm       auc     p@r90   p@r95");
    for seed in 0..seeds {
        let full = RunConfig { seed, ..base.clone() };
        for (arm, config) in [("full", full.clone()), ("baseline", full.baseline())] {
            let mut trainer = Trainer::new(&config)?;
            fit(&mut trainer, &train, None)?;
            let rows = evaluate(&trainer.model, &test)?;
            let m = |n: &str| metric(&rows, n).unwrap();
            println!("{seed:<5} {arm:<9} {:.4}  {:.4}  {:.4}", m("auc"), m("p_at_r90"), m("p_at_r95"));
        }
    }
    Ok(())
}
