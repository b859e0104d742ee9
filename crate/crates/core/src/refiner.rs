//! Patch refiner: the slim image head.
//!
//! Tokens are clustered with k-means (on detached values), each cluster is
//! average-pooled and classified by a linear image head, and only the group
//! least confident in the normal class represents the image. At inference
//! the same path runs on the student backbone alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, TokenGrid};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Parameterized};
use crate::tensor::{Real, Target, Tensor};

/// Group counts used for detection and recognition.
pub const DETECTION_K: usize = 2;
pub const RECOGNITION_K: usize = 3;

/// Seed of the clustering step at inference time.
pub const INFERENCE_SEED: u64 = 0x5EED_0F_1F;

const MAX_ITERS: usize = 50;
/// Seeded k-means++ restarts; the lowest final SSE wins.
pub const KMEANS_RESTARTS: usize = 10;

/// Result of clustering one image's tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub assignment: Vec<usize>,
    /// `[k, L]` row-major.
    pub centroids: Vec<f64>,
    pub k: usize,
    /// Within-cluster sum of squares after seeding and after every iteration.
    pub sse_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap()
    }

    /// Member token indices of each group.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.k];
        for (i, &a) in self.assignment.iter().enumerate() {
            g[a].push(i);
        }
        g
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    centroids
        .chunks(dim)
        .enumerate()
        .map(|(c, cen)| (c, sq_dist(point, cen)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Within-cluster sum of squares of `points` (rows of `dim`) under `assignment`
/// with centroids at the group means.
pub fn within_cluster_sse(points: &[f64], dim: usize, assignment: &[usize], k: usize) -> f64 {
    let centroids = group_means(points, dim, assignment, k);
    points
        .chunks(dim)
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a * dim..(a + 1) * dim]))
        .sum()
}

fn group_means(points: &[f64], dim: usize, assignment: &[usize], k: usize) -> Vec<f64> {
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.chunks(dim).zip(assignment) {
        counts[a] += 1;
        sums[a * dim..(a + 1) * dim].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums[c * dim..(c + 1) * dim].iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    sums
}

/// Moves the token farthest from its centroid (among groups with more than
/// one member) into each empty group until no group is empty.
fn repair_empty(points: &[f64], dim: usize, assignment: &mut [usize], centroids: &mut [f64], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.chunks(dim).enumerate() {
            let a = assignment[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a * dim..(a + 1) * dim]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= number of points");
        assignment[i] = empty;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
}

/// Lloyd's k-means with k-means++ seeding on `points` (rows of `dim`).
/// Each of [`KMEANS_RESTARTS`] runs stops at an assignment fixpoint or after
/// 50 iterations; all runs draw from one stream seeded by `seed`, and the
/// first run with the lowest SSE is returned.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<ClusterAssignment> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Input(format!("{} values are not rows of {dim}", points.len())));
    }
    let m = points.len() / dim;
    if k == 0 || m < k {
        return Err(Error::Input(format!("cannot form {k} clusters from {m} tokens")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = lloyd(points, dim, k, &mut rng);
    if k == 1 {
        return Ok(best);
    }
    for _ in 1..KMEANS_RESTARTS {
        let run = lloyd(points, dim, k, &mut rng);
        if run.sse() < best.sse() {
            best = run;
        }
    }
    Ok(best)
}

fn lloyd(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> ClusterAssignment {
    let m = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..m)));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for i in 0..m {
            d2[i] = d2[i].min(sq_dist(row(i), &centroids[start..]));
        }
    }

    let mut assignment: Vec<usize> = (0..m).map(|i| nearest(row(i), &centroids, dim).0).collect();
    repair_empty(points, dim, &mut assignment, &mut centroids, k);
    let mut sse_history = vec![points
        .chunks(dim)
        .zip(&assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a * dim..(a + 1) * dim]))
        .sum()];
    for _ in 0..MAX_ITERS {
        centroids = group_means(points, dim, &assignment, k);
        let mut next: Vec<usize> = (0..m).map(|i| nearest(row(i), &centroids, dim).0).collect();
        repair_empty(points, dim, &mut next, &mut centroids, k);
        let sse = points
            .chunks(dim)
            .zip(&next)
            .map(|(p, &a)| sq_dist(p, &centroids[a * dim..(a + 1) * dim]))
            .sum();
        sse_history.push(sse);
        let done = next == assignment;
        assignment = next;
        if done {
            break;
        }
    }
    let centroids = group_means(points, dim, &assignment, k);
    ClusterAssignment {
        assignment,
        centroids,
        k,
        sse_history,
    }
}

/// Clusters the detached tokens of one image.
pub fn cluster_tokens<F: Real>(tokens: &TokenGrid<F>, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let values: Vec<f64> = tokens.tokens.data().iter().map(|v| v.f64()).collect();
    kmeans(&values, tokens.dim(), k, seed)
}

/// Per-group class logits and probabilities of one image.
#[derive(Debug, Clone)]
pub struct GroupPredictions<F: Real = f32> {
    /// `[k, C]`
    pub logits: Tensor<F>,
    /// `[k, C]`
    pub probs: Tensor<F>,
}

/// Linear image head `L -> C`.
pub struct ImageHead<F: Real = f32> {
    pub linear: Linear<F>,
}

impl<F: Real> ImageHead<F> {
    pub fn new(token_dim: usize, classes: usize, init: &mut Init<'_>) -> Self {
        Self {
            linear: Linear::new(init, token_dim, classes, true),
        }
    }

    pub fn seeded(token_dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(token_dim, classes, &mut Init::new(rng, true))
    }

    pub fn classes(&self) -> usize {
        self.linear.out_features()
    }

    pub fn forward(&self, pooled: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.linear.forward(pooled)?)
    }
}

impl<F: Real> Parameterized<F> for ImageHead<F> {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<F>)>) {
        self.linear.collect_params(prefix, out);
    }
}

/// Average-pools each group of one image and classifies it.
pub fn group_pool_and_head<F: Real>(
    tokens: &TokenGrid<F>,
    assign: &ClusterAssignment,
    head: &ImageHead<F>,
) -> Result<GroupPredictions<F>> {
    let pooled = tokens.tokens.segment_mean(&assign.assignment, assign.k)?;
    let logits = head.forward(&pooled)?;
    let probs = logits.softmax_rows()?;
    Ok(GroupPredictions { logits, probs })
}

/// Index of the group with the lowest normal-class probability (ties to the
/// lower index) and that group's probability row.
pub fn select_group<F: Real>(probs: &[F], classes: usize, normal_class: usize) -> (usize, Vec<F>) {
    let mut best = 0;
    for (t, row) in probs.chunks(classes).enumerate() {
        if row[normal_class] < probs[best * classes + normal_class] {
            best = t;
        }
    }
    (best, probs[best * classes..(best + 1) * classes].to_vec())
}

/// Cross-entropy of selected-group logits `[n, C]` against image labels.
pub fn image_loss<F: Real>(selected_logits: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    Ok(selected_logits.cross_entropy(&Target::Classes(labels.to_vec()), None)?)
}

/// `L_i + weight * L_p`; the image loss alone when no patch loss exists.
pub fn total_loss<F: Real>(image: &Tensor<F>, patch: Option<&Tensor<F>>, patch_weight: f64) -> Result<Tensor<F>> {
    match patch {
        None => Ok(image.clone()),
        Some(p) if patch_weight == 1.0 => Ok(image.add(p)?),
        Some(p) => Ok(image.add(&p.scale(F::of(patch_weight)))?),
    }
}

/// Image-branch outputs for a batch.
pub struct ImageBranch<F: Real> {
    /// `[batch, C]` logits of the selected groups.
    pub selected_logits: Tensor<F>,
    /// Selected group per image.
    pub selected: Vec<usize>,
    pub assignments: Vec<ClusterAssignment>,
}

/// Runs clustering, pooling, the image head and selection over a batch of
/// token rows `[batch * m, L]`. Precomputed assignments and selections are
/// reused when given, which keeps the branch a smooth function of the
/// parameters for gradient checks.
pub fn image_branch<F: Real>(
    tokens: &Tensor<F>,
    batch: usize,
    k: usize,
    head: &ImageHead<F>,
    normal_class: usize,
    seeds: &[u64],
    fixed: Option<(&[ClusterAssignment], &[usize])>,
) -> Result<ImageBranch<F>> {
    let shape = tokens.shape().to_vec();
    if shape.len() != 2 || batch == 0 || shape[0] % batch != 0 {
        return Err(Error::Input(format!("token rows {shape:?} do not split into {batch} images")));
    }
    let (m, dim) = (shape[0] / batch, shape[1]);
    let assignments: Vec<ClusterAssignment> = match fixed {
        Some((a, _)) => a.to_vec(),
        None => {
            let values = tokens.data();
            (0..batch)
                .map(|b| {
                    let pts: Vec<f64> = values[b * m * dim..(b + 1) * m * dim].iter().map(|v| v.f64()).collect();
                    kmeans(&pts, dim, k, seeds[b])
                })
                .collect::<Result<_>>()?
        }
    };
    let segments: Vec<usize> = assignments
        .iter()
        .enumerate()
        .flat_map(|(b, a)| a.assignment.iter().map(move |&g| b * k + g))
        .collect();
    let pooled = tokens.segment_mean(&segments, batch * k)?;
    let logits = head.forward(&pooled)?;
    let classes = head.classes();
    let selected: Vec<usize> = match fixed {
        Some((_, s)) => s.to_vec(),
        None => {
            let probs = logits.softmax_rows()?;
            let p = probs.data();
            (0..batch)
                .map(|b| select_group(&p[b * k * classes..(b + 1) * k * classes], classes, normal_class).0)
                .collect()
        }
    };
    let rows: Vec<usize> = selected.iter().enumerate().map(|(b, &s)| b * k + s).collect();
    Ok(ImageBranch {
        selected_logits: logits.gather_rows(&rows)?,
        selected,
        assignments,
    })
}

/// Output of the inference path for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub class: usize,
    pub probs: Vec<f64>,
    /// `1 - p(normal)` of the selected group.
    pub distress_score: f64,
}

/// Backbone, clustering with the fixed inference seed, pooling, image head
/// and selection. Teacher and patch head are not involved.
pub fn infer<F: Real>(
    backbone: &Backbone<F>,
    head: &ImageHead<F>,
    image: &Tensor<F>,
    k: usize,
    normal_class: usize,
) -> Result<Inference> {
    let s = image.shape();
    let batched = image.reshape(&[1, s[0], s[1], s[2]])?;
    Ok(infer_batch(backbone, head, &batched, k, normal_class)?.remove(0))
}

/// Inference over `[batch, H, W, 3]` images.
pub fn infer_batch<F: Real>(
    backbone: &Backbone<F>,
    head: &ImageHead<F>,
    images: &Tensor<F>,
    k: usize,
    normal_class: usize,
) -> Result<Vec<Inference>> {
    let batch = images.shape()[0];
    let tokens = backbone.forward_batch(&images.detach())?;
    infer_tokens(&tokens, batch, head, k, normal_class)
}

/// The image-branch half of inference on precomputed token rows `[batch * m, L]`.
pub fn infer_tokens<F: Real>(
    tokens: &Tensor<F>,
    batch: usize,
    head: &ImageHead<F>,
    k: usize,
    normal_class: usize,
) -> Result<Vec<Inference>> {
    let seeds = vec![INFERENCE_SEED; batch];
    let branch = image_branch(tokens, batch, k, head, normal_class, &seeds, None)?;
    let probs = branch.selected_logits.softmax_rows()?;
    let classes = head.classes();
    let p = probs.data();
    Ok(p.chunks(classes)
        .map(|row| {
            let probs: Vec<f64> = row.iter().map(|v| v.f64()).collect();
            let class = argmax(&probs);
            Inference {
                class,
                distress_score: 1.0 - probs[normal_class],
                probs,
            }
        })
        .collect())
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>, dim: usize) -> TokenGrid<f64> {
        let m = values.len() / dim;
        TokenGrid {
            tokens: Tensor::from_vec(values, &[m, dim]).unwrap(),
            grid_side: 0,
            receptive_patch_pixels: 0,
        }
    }

    fn head(weight: Vec<f64>, bias: Vec<f64>, l: usize, c: usize) -> ImageHead<f64> {
        ImageHead {
            linear: Linear {
                weight: Tensor::param(weight, &[l, c]).unwrap(),
                bias: Some(Tensor::param(bias, &[c]).unwrap()),
            },
        }
    }

    #[test]
    fn two_obvious_clusters() {
        for seed in 0..10 {
            let a = kmeans(&[0.0, 0.0, 10.0, 10.0], 1, 2, seed).unwrap();
            let g = a.groups();
            let mut g: Vec<Vec<usize>> = g.into_iter().collect();
            g.sort();
            assert_eq!(g, vec![vec![0, 1], vec![2, 3]]);
            assert_eq!(a.sse(), 0.0);
        }
    }

    #[test]
    fn k_equals_m_gives_singletons() {
        let pts = [0.0, 1.0, 5.0, 2.5, -3.0];
        let a = kmeans(&pts, 1, 5, 7).unwrap();
        let mut seen = a.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(a.sse(), 0.0);
    }

    #[test]
    fn identical_tokens_keep_groups_non_empty() {
        let pts = vec![1.5; 6 * 2];
        for k in 2..=4 {
            let a = kmeans(&pts, 2, k, 3).unwrap();
            assert!(a.groups().iter().all(|g| !g.is_empty()));
        }
    }

    #[test]
    fn too_few_tokens_is_input_error() {
        assert!(matches!(kmeans(&[1.0, 2.0], 1, 3, 0), Err(Error::Input(_))));
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        assert_eq!(kmeans(&pts, 4, 3, 9).unwrap(), kmeans(&pts, 4, 3, 9).unwrap());
    }

    #[test]
    fn converged_assignment_is_nearest_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in 0..20 {
            let pts: Vec<f64> = (0..16 * 3).map(|_| rng.random()).collect();
            let a = kmeans(&pts, 3, 2, t).unwrap();
            for (i, p) in pts.chunks(3).enumerate() {
                let (n, d) = nearest(p, &a.centroids, 3);
                let own = sq_dist(p, &a.centroids[a.assignment[i] * 3..][..3]);
                assert!(n == a.assignment[i] || (own - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_group_is_global_average_pooling() {
        let tokens = vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5];
        let g = grid(tokens.clone(), 2);
        let h = head(vec![0.5, -0.3, 0.2, 0.1], vec![0.05, -0.05], 2, 2);
        let assign = ClusterAssignment {
            assignment: vec![0, 0, 0],
            centroids: vec![],
            k: 1,
            sse_history: vec![0.0],
        };
        let p = group_pool_and_head(&g, &assign, &h).unwrap();
        let mean: [f64; 2] = [(1.0 + 3.0 - 1.0) / 3.0, (2.0 + 4.0 + 0.5) / 3.0];
        let z = [mean[0] * 0.5 + mean[1] * 0.2 + 0.05, mean[0] * -0.3 + mean[1] * 0.1 - 0.05];
        let e = [z[0].exp(), z[1].exp()];
        let probs = p.probs.to_vec();
        assert!((probs[0] - e[0] / (e[0] + e[1])).abs() < 1e-12);
        assert!((probs[1] - e[1] / (e[0] + e[1])).abs() < 1e-12);
    }

    #[test]
    fn two_groups_match_mean_linear_softmax_oracle() {
        let tokens = vec![1.0, 0.0, 0.8, 0.2, 0.0, 1.0, 0.1, 0.9];
        let g = grid(tokens.clone(), 2);
        let h = head(vec![2.0, 0.0, 0.0, 2.0], vec![0.0, 0.0], 2, 2);
        let assign = ClusterAssignment {
            assignment: vec![0, 0, 1, 1],
            centroids: vec![],
            k: 2,
            sse_history: vec![0.0],
        };
        let p = group_pool_and_head(&g, &assign, &h).unwrap().probs.to_vec();
        for (grp, members) in [[0usize, 1], [2, 3]].iter().enumerate() {
            let m0 = (tokens[members[0] * 2] + tokens[members[1] * 2]) / 2.0;
            let m1 = (tokens[members[0] * 2 + 1] + tokens[members[1] * 2 + 1]) / 2.0;
            let (z0, z1) = (2.0 * m0, 2.0 * m1);
            let p1 = z1.exp() / (z0.exp() + z1.exp());
            assert!((p[grp * 2 + 1] - p1).abs() < 1e-12);
        }
        // Permuting tokens inside group 0 changes nothing.
        let swapped = grid(vec![0.8, 0.2, 1.0, 0.0, 0.0, 1.0, 0.1, 0.9], 2);
        let q = group_pool_and_head(&swapped, &assign, &h).unwrap().probs.to_vec();
        assert_eq!(p, q);
    }

    #[test]
    fn selection_rules() {
        let (i, row) = select_group(&[0.9, 0.1, 0.2, 0.8], 2, 0);
        assert_eq!(i, 1);
        assert_eq!(row, vec![0.2, 0.8]);
        let (i, _) = select_group(&[0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 2, 0);
        assert_eq!(i, 0);
    }

    #[test]
    fn image_loss_cases() {
        let z = Tensor::<f64>::from_vec(vec![30.0, -30.0], &[1, 2]).unwrap();
        assert!(image_loss(&z, &[0]).unwrap().item() < 1e-4);
        let u = Tensor::<f64>::from_vec(vec![0.0; 8], &[1, 8]).unwrap();
        assert!((image_loss(&u, &[5]).unwrap().item() - 8f64.ln()).abs() < 1e-12);
        let z = Tensor::<f64>::from_vec(vec![0.2, 1.1, -0.4], &[1, 3]).unwrap();
        let lse = (0.2f64.exp() + 1.1f64.exp() + (-0.4f64).exp()).ln();
        assert!((image_loss(&z, &[2]).unwrap().item() - (lse + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_cases() {
        let li = Tensor::<f64>::scalar(0.3);
        let lp = Tensor::<f64>::scalar(0.5);
        assert!((total_loss(&li, Some(&lp), 1.0).unwrap().item() - 0.8).abs() < 1e-12);
        assert_eq!(total_loss(&li, None, 1.0).unwrap().item(), 0.3);
        assert!((total_loss(&li, Some(&lp), 0.5).unwrap().item() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn gradients_skip_assignment() {
        // Pooled gradients reach every member token with weight 1/|group|,
        // and the head gets gradients only through the selected group.
        let tokens = Tensor::<f64>::param(vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9], &[4, 2]).unwrap();
        let h = head(vec![1.0, -1.0, -1.0, 1.0], vec![0.0, 0.0], 2, 2);
        let br = image_branch(&tokens, 1, 2, &h, 0, &[4], None).unwrap();
        let loss = image_loss(&br.selected_logits, &[1]).unwrap();
        loss.backward().unwrap();
        let g = tokens.grad().unwrap();
        let sel = br.selected[0];
        for (i, &a) in br.assignments[0].assignment.iter().enumerate() {
            let row = &g[i * 2..i * 2 + 2];
            if a == sel {
                assert!(row.iter().any(|v| v.abs() > 0.0));
            } else {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }
}
