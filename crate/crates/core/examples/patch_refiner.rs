//! Clusters the tokens of one image, classifies every group and picks the
//! group least likely to be normal.
//!
//! ```text
//! cargo run --release --example patch_refiner -- [k]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pict::backbone::{Backbone, BackboneConfig};
use pict::datagen::{generate_image, Category, DistressSpec};
use pict::refiner::{cluster_tokens, group_pool_and_head, select_group, ImageHead};
use pict::tensor::Tensor;

fn main() -> pict::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let cfg = BackboneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let backbone = Backbone::<f32>::seeded(&cfg, &mut rng)?;
    let head = ImageHead::<f32>::seeded(cfg.token_dim(), 2, &mut rng);

    let img = generate_image(
        &DistressSpec {
            category: Category::Pothole,
            area_ratio: 0.08,
            texture_seed: 9,
        },
        cfg.image_size,
    )?;
    let n = cfg.image_size;
    let tokens = backbone.forward(&Tensor::from_vec(img.pixels, &[n, n, 3])?)?;
    let assign = cluster_tokens(&tokens, k, 0)?;
    println!("SSE per Lloyd iteration: {:?}", assign.sse_history);
    let grid = cfg.grid_side();
    for r in 0..grid {
        let row: Vec<String> = (0..grid).map(|c| assign.assignment[r * grid + c].to_string()).collect();
        println!("  {}", row.join(" "));
    }

    let preds = group_pool_and_head(&tokens, &assign, &head)?;
    let probs = preds.probs.to_vec();
    for (g, row) in probs.chunks(2).enumerate() {
        println!("group {g}: {} tokens, p(normal) {:.3}", assign.groups()[g].len(), row[0]);
    }
    let (chosen, row) = select_group(&probs, 2, 0);
    println!("selected group {chosen}, distress score {:.3} (untrained weights)", 1.0 - row[0]);
    Ok(())
}
