//! Finite-difference check of the full training loss of a small network,
//! one line per parameter tensor.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pict::backbone::BackboneConfig;
use pict::nn::{Init, Parameterized};
use pict::refiner::{image_branch, image_loss, total_loss, ImageHead};
use pict::tensor::gradcheck::{check, GradCheckOptions};
use pict::tensor::{Target, Tensor};
use pict::teacher::Network;

fn main() -> pict::Result<()> {
    let cfg = BackboneConfig {
        image_size: 8,
        patch_size: 2,
        embed_dim: 8,
        depths: vec![2, 1],
        heads: vec![2, 4],
        window: 2,
        mlp_ratio: 2,
        rel_pos_bias: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Network::<f64>::new(&cfg, 2, &mut Init::new(&mut rng, true))?;
    let head = ImageHead::<f64>::seeded(cfg.token_dim(), 2, &mut rng);
    for p in net.params().iter().chain(&head.params()) {
        p.update(|d| d.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0)));
    }
    let n = cfg.image_size;
    let images = Tensor::from_vec((0..2 * n * n * 3).map(|_| rng.random()).collect(), &[2, n, n, 3])?;
    let patch_targets = Target::Classes((0..2 * cfg.num_tokens()).map(|i| i % 2).collect());

    // Cluster once, then hold assignments and selections fixed so the loss
    // is a smooth function of the parameters.
    let seeds = [1, 2];
    let first = image_branch(&net.tokens(&images)?, 2, 2, &head, 0, &seeds, None)?;
    let fixed = (first.assignments, first.selected);
    let loss = || -> pict::Result<Tensor<f64>> {
        let tokens = net.tokens(&images)?;
        let lp = net.patch_logits(&tokens)?.cross_entropy(&patch_targets, None)?;
        let branch = image_branch(&tokens, 2, 2, &head, 0, &seeds, Some((&fixed.0, &fixed.1)))?;
        total_loss(&image_loss(&branch.selected_logits, &[0, 1])?, Some(&lp), 1.0)
    };

    let named: Vec<(String, Tensor<f64>)> = net
        .named_params()
        .into_iter()
        .chain(head.named_params().into_iter().map(|(n, t)| (format!("image_head.{n}"), t)))
        .collect();
    let opts = GradCheckOptions {
        max_per_input: Some(8),
        ..GradCheckOptions::default()
    };
    let mut worst = 0.0f64;
    for (name, t) in &named {
        let g = check(std::slice::from_ref(t), &opts, |_| loss())?;
        worst = worst.max(g.max_rel_err);
        println!("{name:<45} {:>3} elements  max rel err {:.2e}", g.checked, g.max_rel_err);
    }
    println!("worst {worst:.2e} over {} tensors", named.len());
    Ok(())
}
