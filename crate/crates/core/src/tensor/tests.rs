use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, GradCheckOptions};
use super::*;

fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::from_vec(data.to_vec(), shape).unwrap()
}

fn p(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::param(data.to_vec(), shape).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn data_length_must_match_shape() {
    assert!(Tensor::<f32>::from_vec(vec![1.0; 5], &[2, 3]).is_err());
}

#[test]
fn matmul_identity_and_dot() {
    let i = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
    let b = t(&[3.0, 4.0, 5.0, 6.0], &[2, 2]);
    assert_eq!(i.matmul(&b).unwrap().to_vec(), vec![3.0, 4.0, 5.0, 6.0]);
    let r = t(&[1.0, 2.0], &[1, 2]).matmul(&t(&[3.0, 4.0], &[2, 1])).unwrap();
    assert_eq!((r.shape().to_vec(), r.item()), (vec![1, 1], 11.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let e = t(&[0.0; 6], &[2, 3]).matmul(&t(&[0.0; 6], &[2, 3])).unwrap_err();
    match e {
        TensorError::ShapeMismatch { lhs, rhs, .. } => assert_eq!((lhs, rhs), (vec![2, 3], vec![2, 3])),
        other => panic!("{other:?}"),
    }
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = p(&(0..20).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), &[4, 5]);
    let b = p(&(0..15).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), &[5, 3]);
    let w = t(&(0..12).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), &[4, 3]);
    let r = check(&[a, b], &GradCheckOptions::default(), |x| {
        Ok::<_, TensorError>(x[0].matmul(&x[1])?.mul(&w)?.sum())
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-3, "{r:?}");
}

#[test]
fn softmax_examples() {
    close(&t(&[0.0, 0.0], &[1, 2]).softmax_rows().unwrap().to_vec(), &[0.5, 0.5], 1e-12);
    close(
        &t(&[1000.0; 3], &[1, 3]).softmax_rows().unwrap().to_vec(),
        &[1.0 / 3.0; 3],
        1e-12,
    );
    // Independent evaluation: e^k / (e + e^2 + e^3).
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let want: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
    close(&t(&[1.0, 2.0, 3.0], &[1, 3]).softmax_rows().unwrap().to_vec(), &want, 1e-12);
    let f32_out = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0], &[1, 3])
        .unwrap()
        .softmax_rows()
        .unwrap()
        .to_vec();
    for (a, b) in f32_out.iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
}

#[test]
fn softmax_rejects_non_finite() {
    let e = t(&[1.0, f64::NAN], &[1, 2]).softmax_rows().unwrap_err();
    assert!(matches!(e, TensorError::NonFinite { .. }));
}

#[test]
fn cross_entropy_examples() {
    let l = t(&[10.0, -10.0], &[1, 2]).cross_entropy(&Target::Classes(vec![0]), None).unwrap();
    assert!(l.item() < 1e-4);
    let l = t(&[0.0, 0.0], &[1, 2]).cross_entropy(&Target::Classes(vec![1]), None).unwrap();
    assert!((l.item() - std::f64::consts::LN_2).abs() < 1e-12);

    let logits: [f64; 6] = [0.3, -1.2, 2.0, 0.5, -0.7, 0.1];
    let row_loss = |r: usize, c: usize| {
        let z = &logits[r * 2..r * 2 + 2];
        let lse = (z[0].exp() + z[1].exp()).ln();
        lse - z[c]
    };
    let l = t(&logits, &[3, 2])
        .cross_entropy(&Target::Classes(vec![1, 0, 0]), Some(&[true, false, true]))
        .unwrap();
    assert!((l.item() - (row_loss(0, 1) + row_loss(2, 0)) / 2.0).abs() < 1e-12);
}

#[test]
fn cross_entropy_all_masked_is_empty_batch() {
    let e = t(&[0.0; 4], &[2, 2])
        .cross_entropy(&Target::Classes(vec![0, 1]), Some(&[false, false]))
        .unwrap_err();
    assert!(matches!(e, TensorError::EmptyBatch { .. }));
}

#[test]
fn backward_examples() {
    let w = p(&[1.0; 3], &[3]);
    w.sum().backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![1.0; 3]);

    let w = p(&[1.0, 2.0, 3.0], &[3]);
    w.mul(&w).unwrap().sum().backward().unwrap();
    assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn backward_of_non_scalar_is_shape_error() {
    let w = p(&[1.0, 2.0], &[2]);
    assert!(matches!(w.scale(2.0).backward(), Err(TensorError::Shape { .. })));
}

#[test]
fn unused_parameters_stay_untouched() {
    let used = p(&[1.0, 2.0], &[2]);
    let unused = p(&[3.0], &[1]);
    let _other = unused.scale(5.0);
    used.sum().backward().unwrap();
    assert!(unused.grad().is_none());
}

#[test]
fn tape_visits_each_node_once_in_reverse_creation_order() {
    let w = p(&[1.0, 2.0], &[2]);
    let a = w.scale(2.0);
    let b = a.mul(&w).unwrap();
    let loss = b.add(&a).unwrap().sum();
    let tape = GradTape::record(&loss);
    let order = tape.visit_order();
    assert_eq!(order.len(), 5);
    assert!(order.windows(2).all(|p| p[0] > p[1]));
    assert_eq!(order.last(), Some(&w.id()));
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f32> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = Tensor::from_vec(x, &[8, 8]).unwrap();
        x.matmul(&x).unwrap().gelu().softmax_rows().unwrap().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn layer_norm_rows_are_standardised() {
    let x = t(&[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 8.0], &[2, 4]);
    let y = x.layer_norm(&t(&[1.0; 4], &[4]), &t(&[0.0; 4], &[4]), 1e-5).unwrap().to_vec();
    for row in y.chunks(4) {
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn gather_and_segment_mean() {
    let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
    assert_eq!(x.gather_rows(&[2, 0]).unwrap().to_vec(), vec![5.0, 6.0, 1.0, 2.0]);
    let m = x.segment_mean(&[1, 0, 1], 2).unwrap();
    assert_eq!(m.to_vec(), vec![3.0, 4.0, 3.0, 4.0]);
    assert!(x.segment_mean(&[0, 0, 0], 2).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in prop::collection::vec(-1e4f64..1e4, 1..12)) {
            let n = row.len();
            let s: f64 = t(&row, &[1, n]).softmax_rows().unwrap().to_vec().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            let row32: Vec<f32> = row.iter().map(|&v| v as f32).collect();
            let s32: f32 = Tensor::from_vec(row32, &[1, n]).unwrap().softmax_rows().unwrap().to_vec().iter().sum();
            prop_assert!((s32 - 1.0).abs() < 1e-6);
        }
    }
}
