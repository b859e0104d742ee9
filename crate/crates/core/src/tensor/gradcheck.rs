//! Central finite-difference checks of recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Largest disagreement found by [`check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input, element)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor so that near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Check at most this many randomly chosen elements per input.
    pub max_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-3,
            max_per_input: None,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward pass of the scalar `f(inputs)` against central
/// differences. `inputs` must be leaves that require gradients; their
/// gradients are reset first and their values are restored afterwards.
pub fn check<E>(
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>, E>,
) -> Result<GradCheck, E>
where
    E: From<super::TensorError>,
{
    for t in inputs {
        assert!(t.is_leaf() && t.requires_grad(), "gradcheck inputs must be parameters");
        t.zero_grad();
    }
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (i, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let elems: Vec<usize> = match opts.max_per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for e in elems {
            let orig = t.data()[e];
            t.update(|d| d[e] = orig + opts.step);
            let up = f(inputs)?.item();
            t.update(|d| d[e] = orig - opts.step);
            let down = f(inputs)?.item();
            t.update(|d| d[e] = orig);
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(analytic[i][e], numeric, opts.floor);
            if err > out.max_rel_err || err.is_nan() {
                out.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                out.worst = (i, e);
            }
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorError;

    #[test]
    fn exact_on_a_quadratic() {
        let w = Tensor::param(vec![1.0, -2.0, 0.5], &[3]).unwrap();
        let r = check(&[w], &GradCheckOptions::default(), |x| {
            Ok::<_, TensorError>(x[0].mul(&x[0])?.sum())
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-9);
        assert_eq!(r.checked, 3);
    }
}
