//! Renders a few synthetic pavement images of every category with their
//! ground-truth masks, then writes a small on-disk dataset.
//!
//! ```text
//! cargo run --release --example generate_data -- [out-dir]
//! ```

use std::path::PathBuf;

use pict::datagen::{generate_image, make_dataset, Category, DatasetConfig, DistressSpec};
use pict::imageio;

fn main() -> pict::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("synthetic"));
    let samples = out.join("samples");
    std::fs::create_dir_all(&samples).map_err(|e| pict::Error::io(&samples, e))?;
    let size = 64;
    for category in Category::ALL {
        for (i, area) in [0.01, 0.05, 0.15].into_iter().enumerate() {
            let img = generate_image(
                &DistressSpec {
                    category,
                    area_ratio: area,
                    texture_seed: 100 + i as u64,
                },
                size,
            )?;
            let got = img.distressed_pixels() as f64 / (size * size) as f64;
            println!("{:<13} asked {area:.2}  got {got:.3}", category.name());
            let stem = format!("{}_{i}", category.name());
            imageio::save_rgb(&samples.join(format!("{stem}.png")), &img.pixels, size, size)?;
            let mask: Vec<f32> = img.mask.iter().flat_map(|&m| [m as u8 as f32; 3]).collect();
            imageio::save_rgb(&samples.join(format!("{stem}_mask.png")), &mask, size, size)?;
        }
    }

    let config = DatasetConfig {
        train_counts: vec![20, 7, 7, 6],
        test_counts: vec![10, 4, 3, 3],
        ..DatasetConfig::default()
    };
    let (train, test) = make_dataset(&config, &out.join("dataset"))?;
    println!(
        "{} train / {} test images under {}",
        train.entries.len(),
        test.entries.len(),
        out.join("dataset").display()
    );
    Ok(())
}
