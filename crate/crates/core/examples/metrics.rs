//! Detection and recognition metrics on a hand-made set of predictions.
//!
//! ```text
//! cargo run --release --example metrics
//! ```

use pict::metrics::{self, classification_report, precision_at_recall, roc_auc, ScoredPredictions};

fn main() -> pict::Result<()> {
    let scored = ScoredPredictions {
        scores: vec![0.95, 0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.2, 0.1],
        labels: vec![2, 1, 0, 3, 1, 0, 2, 0, 0, 0],
        predicted: vec![2, 1, 1, 3, 1, 0, 0, 0, 0, 0],
        normal_class: 0,
    };
    let positives = scored.positives();
    println!("AUC          {:.4}", roc_auc(&scored.scores, &positives)?);
    for target in [0.8, 0.9, 1.0] {
        println!("P@R={target:.1}      {:.4}", precision_at_recall(&scored.scores, &positives, target)?);
    }
    let (top1, f1) = classification_report(&scored.labels, &scored.predicted)?;
    println!("top-1        {top1:.4}\nmacro-F1     {f1:.4}\n");
    print!("{}", metrics::to_csv(&metrics::evaluate(&scored, true)?, "example"));
    Ok(())
}
