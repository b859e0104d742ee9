//! Prior-based patch pseudo labels.
//!
//! Teacher patch probabilities and the image label become one pseudo label
//! per token (relative distress threshold) plus a keep-mask of confident
//! tokens (patch filter). Everything here works on plain row-major
//! probability slices `[m, C]`.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Fraction of tokens labelled with the image's distress class.
pub const DETECTION_DELTA_REL: f64 = 0.25;
pub const RECOGNITION_DELTA_REL: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPseudoLabels {
    pub labels: Vec<usize>,
    pub keep_mask: Vec<bool>,
    pub delta_rel: f64,
    pub normal_class: usize,
}

impl PatchPseudoLabels {
    pub fn kept(&self) -> usize {
        self.keep_mask.iter().filter(|&&k| k).count()
    }

    /// Reorders tokens: entry `j` of the result is entry `source[j]` of `self`.
    pub fn permuted(&self, source: &[usize]) -> Self {
        Self {
            labels: source.iter().map(|&s| self.labels[s]).collect(),
            keep_mask: source.iter().map(|&s| self.keep_mask[s]).collect(),
            ..self.clone()
        }
    }
}

/// Thresholds of the patch filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    /// Normal-labelled tokens of distressed images are kept above this.
    pub distressed_image_normal: f64,
    /// Tokens of normal images are kept above this.
    pub normal_image_normal: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            distressed_image_normal: 0.5,
            normal_image_normal: 0.95,
        }
    }
}

/// Number of tokens that receive the distress label: `ceil(delta_rel * m)`.
pub fn distress_count(delta_rel: f64, tokens: usize) -> usize {
    // Guard against products such as 0.35 * 20 = 7.000000000000001.
    let q = (delta_rel * tokens as f64 - 1e-9).ceil() as usize;
    q.clamp(1, tokens)
}

fn check_delta(delta_rel: f64) -> Result<()> {
    if delta_rel > 0.0 && delta_rel <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("delta_rel {delta_rel} outside (0, 1]")))
    }
}

fn check_probs<F: Real>(probs: &[F], classes: usize, class: usize) -> Result<usize> {
    if classes < 2 || probs.is_empty() || probs.len() % classes != 0 {
        return Err(Error::Input(format!(
            "{} probabilities do not form rows of {classes} classes",
            probs.len()
        )));
    }
    if class >= classes {
        return Err(Error::Input(format!("class {class} out of range for {classes} classes")));
    }
    Ok(probs.len() / classes)
}

/// Relative distress threshold. Normal images get `normal_class` everywhere;
/// a distressed image labels its `ceil(delta_rel * m)` tokens with the
/// highest probability of `image_label` (ties to the lower index) as
/// `image_label` and the rest as normal.
pub fn relative_distress_threshold<F: Real>(
    probs: &[F],
    classes: usize,
    image_label: usize,
    normal_class: usize,
    delta_rel: f64,
) -> Result<Vec<usize>> {
    check_delta(delta_rel)?;
    let m = check_probs(probs, classes, image_label)?;
    check_probs(probs, classes, normal_class)?;
    let mut labels = vec![normal_class; m];
    if image_label == normal_class {
        return Ok(labels);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (probs[a * classes + image_label], probs[b * classes + image_label]);
        pb.partial_cmp(&pa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &j in &order[..distress_count(delta_rel, m)] {
        labels[j] = image_label;
    }
    Ok(labels)
}

/// Patch filter: on distressed images keep distress-labelled tokens and
/// normal-labelled tokens whose normal probability exceeds
/// `distressed_image_normal`; on normal images keep tokens whose normal
/// probability exceeds `normal_image_normal`.
pub fn patch_filter<F: Real>(
    probs: &[F],
    classes: usize,
    labels: &[usize],
    normal_class: usize,
    is_distressed: bool,
    thresholds: &FilterThresholds,
) -> Vec<bool> {
    labels
        .iter()
        .enumerate()
        .map(|(j, &label)| {
            let p_normal = probs[j * classes + normal_class].f64();
            if !is_distressed {
                p_normal > thresholds.normal_image_normal
            } else {
                label != normal_class || p_normal > thresholds.distressed_image_normal
            }
        })
        .collect()
}

/// Pseudo-label generator configured for one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabeler {
    pub delta_rel: f64,
    pub normal_class: usize,
    pub thresholds: FilterThresholds,
}

impl PseudoLabeler {
    pub fn new(delta_rel: f64, normal_class: usize, thresholds: FilterThresholds) -> Result<Self> {
        check_delta(delta_rel)?;
        Ok(Self {
            delta_rel,
            normal_class,
            thresholds,
        })
    }

    /// Labels and keep-mask for one image from its teacher probabilities.
    pub fn generate<F: Real>(&self, probs: &[F], classes: usize, image_label: usize) -> Result<PatchPseudoLabels> {
        let labels = relative_distress_threshold(probs, classes, image_label, self.normal_class, self.delta_rel)?;
        let keep_mask = patch_filter(
            probs,
            classes,
            &labels,
            self.normal_class,
            image_label != self.normal_class,
            &self.thresholds,
        );
        Ok(PatchPseudoLabels {
            labels,
            keep_mask,
            delta_rel: self.delta_rel,
            normal_class: self.normal_class,
        })
    }
}

/// Reduces a set of image-level class tags to the single label the
/// generator understands. More than one distress class is rejected.
pub fn single_image_label(tags: &[usize], normal_class: usize) -> Result<usize> {
    let mut distress: Vec<usize> = tags.iter().copied().filter(|&t| t != normal_class).collect();
    distress.sort_unstable();
    distress.dedup();
    match distress.as_slice() {
        [] => Ok(normal_class),
        [one] => Ok(*one),
        many => Err(Error::Input(format!(
            "image carries several distress classes {many:?}; exactly one is supported"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(distress: &[f64]) -> Vec<f64> {
        distress.iter().flat_map(|&p| [1.0 - p, p]).collect()
    }

    #[test]
    fn normal_image_is_all_normal() {
        let probs = two_class(&[0.9, 0.99, 0.1]);
        let l = relative_distress_threshold(&probs, 2, 0, 0, 0.25).unwrap();
        assert_eq!(l, vec![0, 0, 0]);
    }

    #[test]
    fn top_quarter_of_eight() {
        let probs = two_class(&[0.9, 0.1, 0.8, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let l = relative_distress_threshold(&probs, 2, 1, 0, 0.25).unwrap();
        assert_eq!(l, vec![1, 0, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let probs = two_class(&[0.5; 6]);
        let l = relative_distress_threshold(&probs, 2, 1, 0, 0.3).unwrap();
        assert_eq!(l, vec![1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn count_is_exact_ceiling() {
        assert_eq!(distress_count(0.35, 20), 7);
        assert_eq!(distress_count(0.25, 16), 4);
        assert_eq!(distress_count(0.25, 49), 13);
        assert_eq!(distress_count(0.1, 16), 2);
        assert_eq!(distress_count(1.0, 5), 5);
        assert_eq!(distress_count(0.001, 5), 1);
    }

    #[test]
    fn delta_out_of_range_is_config_error() {
        let probs = two_class(&[0.5; 4]);
        for d in [0.0, -0.1, 1.01] {
            assert!(matches!(
                relative_distress_threshold(&probs, 2, 1, 0, d),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn filter_on_normal_image() {
        let probs: Vec<f64> = [0.99, 0.94, 0.96].iter().flat_map(|&p| [p, 1.0 - p]).collect();
        let mask = patch_filter(&probs, 2, &[0, 0, 0], 0, false, &FilterThresholds::default());
        assert_eq!(mask, vec![true, false, true]);
    }

    #[test]
    fn filter_on_distressed_image() {
        let probs = two_class(&[0.7, 0.9]);
        let mask = patch_filter(&probs, 2, &[1, 1], 0, true, &FilterThresholds::default());
        assert_eq!(mask, vec![true, true]);

        let probs: Vec<f64> = [0.6, 0.4, 0.1].iter().flat_map(|&p| [p, 1.0 - p]).collect();
        let mask = patch_filter(&probs, 2, &[0, 0, 1], 0, true, &FilterThresholds::default());
        assert_eq!(mask, vec![true, false, true]);
    }

    #[test]
    fn multi_distress_images_are_rejected() {
        assert_eq!(single_image_label(&[0, 0], 0).unwrap(), 0);
        assert_eq!(single_image_label(&[2, 0, 2], 0).unwrap(), 2);
        assert!(matches!(single_image_label(&[1, 2], 0), Err(Error::Input(_))));
    }

    #[test]
    fn permuted_follows_source_map() {
        let p = PatchPseudoLabels {
            labels: vec![1, 0, 0, 2],
            keep_mask: vec![true, false, true, true],
            delta_rel: 0.25,
            normal_class: 0,
        };
        let q = p.permuted(&[3, 2, 1, 0]);
        assert_eq!(q.labels, vec![2, 0, 0, 1]);
        assert_eq!(q.keep_mask, vec![true, true, false, true]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn grid() -> impl Strategy<Value = (Vec<f64>, f64)> {
            (
                prop::sample::select(vec![16usize, 49]),
                prop::sample::select(vec![0.1, 0.25, 0.35, 0.5]),
            )
                .prop_flat_map(|(m, d)| (prop::collection::vec(0.0f64..1.0, m), Just(d)))
        }

        proptest! {
            #[test]
            fn distress_count_law((scores, delta) in grid()) {
                let probs = two_class(&scores);
                let l = relative_distress_threshold(&probs, 2, 1, 0, delta).unwrap();
                let q = l.iter().filter(|&&v| v == 1).count();
                prop_assert_eq!(q, (delta * scores.len() as f64 - 1e-9).ceil() as usize);
                let mask = patch_filter(&probs, 2, &l, 0, true, &FilterThresholds::default());
                for j in 0..scores.len() {
                    if l[j] == 1 { prop_assert!(mask[j]); }
                }
            }

            #[test]
            fn raising_a_score_keeps_its_label((scores, delta) in grid(), pick in 0usize..16, bump in 0.0f64..0.5) {
                let probs = two_class(&scores);
                let before = relative_distress_threshold(&probs, 2, 1, 0, delta).unwrap();
                let j = pick % scores.len();
                let mut raised = scores.clone();
                raised[j] = (raised[j] + bump).min(1.0);
                let after = relative_distress_threshold(&two_class(&raised), 2, 1, 0, delta).unwrap();
                if before[j] == 1 {
                    prop_assert_eq!(after[j], 1);
                }
                // Determinism.
                prop_assert_eq!(relative_distress_threshold(&probs, 2, 1, 0, delta).unwrap(), before);
            }
        }
    }
}
