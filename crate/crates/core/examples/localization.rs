//! Renders teacher overlays for a trained checkpoint and scores how well the
//! red tokens line up with the ground-truth distress masks.
//!
//! ```text
//! cargo run --release --example localization -- <checkpoint> <data-dir> [out-dir]
//! ```

use std::path::PathBuf;

use pict::checkpoint::Checkpoint;
use pict::datagen::{Dataset, Split};
use pict::imageio;
use pict::model::PicT;
use pict::viz::{localization_report, overlays, render_heatmap, render_overlay};

fn main() -> pict::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: localization <checkpoint> <data-dir> [out-dir]");
        std::process::exit(2);
    }
    let model = PicT::from_checkpoint(&Checkpoint::load(args[0].as_ref())?)?;
    let size = model.config.backbone.image_size;
    let test = Dataset::load(args[1].as_ref(), Split::Test, size)?;

    let report = localization_report(&model, &test)?;
    println!(
        "distressed images {}  red pixels {}  inside grown truth {:.3}  masked share on normals {:.3}",
        report.distressed_images,
        report.red_pixels,
        report.precision(),
        report.normal_masked_fraction
    );

    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("overlays"));
    std::fs::create_dir_all(&out).map_err(|e| pict::Error::io(&out, e))?;
    // A few images of each class.
    let mut per_class = vec![0; test.manifest.class_names.len()];
    for (entry, image) in test.manifest.entries.iter().zip(&test.images) {
        if per_class[entry.class_index] == 3 {
            continue;
        }
        per_class[entry.class_index] += 1;
        let overlay = overlays(&model, &[image])?.remove(0);
        let stem = format!("{}_{}", test.manifest.class_names[entry.class_index], per_class[entry.class_index]);
        imageio::save_rgb8(&out.join(format!("{stem}_overlay.png")), &render_overlay(image, size, &overlay), size, size)?;
        imageio::save_rgb8(&out.join(format!("{stem}_heatmap.png")), &render_heatmap(size, &overlay), size, size)?;
    }
    println!("overlays written to {}", out.display());
    Ok(())
}
