//! Pseudo labels and keep-masks for one distressed and one normal image,
//! drawn as token grids.
//!
//! ```text
//! cargo run --release --example pseudo_labels
//! ```

use pict::pseudolabel::{distress_count, FilterThresholds, PseudoLabeler};

fn show(title: &str, grid: usize, cell: impl Fn(usize) -> String) {
    println!("{title}");
    for r in 0..grid {
        let row: Vec<String> = (0..grid).map(|c| cell(r * grid + c)).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> pict::Result<()> {
    let grid = 4;
    let classes = 3;
    // Teacher probabilities: class 2 concentrated in the top-left corner.
    let probs: Vec<f64> = (0..grid * grid)
        .flat_map(|t| {
            let (r, c) = (t / grid, t % grid);
            let p2 = (0.9 - 0.25 * (r + c) as f64).max(0.02);
            let p0 = (1.0 - p2) * 0.97;
            [p0, 1.0 - p0 - p2, p2]
        })
        .collect();
    show("p(class 2):", grid, |t| format!("{:.2}", probs[t * classes + 2]));

    let labeler = PseudoLabeler::new(0.25, 0, FilterThresholds::default())?;
    println!("delta_rel 0.25 over {} tokens labels {} as distress", grid * grid, distress_count(0.25, grid * grid));
    let distressed = labeler.generate(&probs, classes, 2)?;
    show("distressed image, labels (x = dropped by the filter):", grid, |t| {
        if distressed.keep_mask[t] {
            distressed.labels[t].to_string()
        } else {
            "x".into()
        }
    });
    let normal = labeler.generate(&probs, classes, 0)?;
    show("normal image, labels (x = dropped by the filter):", grid, |t| {
        if normal.keep_mask[t] {
            normal.labels[t].to_string()
        } else {
            "x".into()
        }
    });
    Ok(())
}
