use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Positive entries bounded away from zero, for sqrt/recip/div inputs.
fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(0.5..2.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Builds `sum(weights ⊙ build(inputs))` and checks its gradient with respect
/// to every input against central differences.
fn check<F>(inputs: Vec<Tensor>, tol: f64, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let theta: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let mut wrng = ChaCha8Rng::seed_from_u64(99);
    let mut weights: Option<Tensor> = None;

    let mut eval = |theta: &[f64], want_grad: bool| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let mut offset = 0;
        let vars: Vec<Var> = shapes
            .iter()
            .map(|s| {
                let len: usize = s.iter().product();
                let t = Tensor::new(s.clone(), theta[offset..offset + len].to_vec()).unwrap();
                offset += len;
                tape.param(t)
            })
            .collect();
        let out = build(&mut tape, &vars);
        let (r, c) = (tape.value(out).rows(), tape.value(out).cols());
        let w = weights.get_or_insert_with(|| random(&mut wrng, r, c)).clone();
        let w = tape.constant(w);
        let prod = tape.mul(out, w).unwrap();
        let root = tape.sum(prod);
        let value = tape.value(root).data()[0];
        if !want_grad {
            return (value, Vec::new());
        }
        tape.backward(root).unwrap();
        let grad = vars.iter().flat_map(|&v| tape.grad_or_zeros(v)).collect();
        (value, grad)
    };
    let (_, analytic) = eval(&theta, true);
    let opts = GradCheckOptions {
        tol,
        ..GradCheckOptions::default()
    };
    let report = grad_check(|t: &[f64]| Ok::<_, DiffError>(eval(t, false).0), &theta, &analytic, &opts).unwrap();
    assert!(
        report.passed() && report.branch_points().is_empty(),
        "max rel dev {} mismatches {:?}",
        report.max_rel_dev,
        report.mismatches()
    );
}

#[test]
fn matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(vec![random(&mut rng, 3, 4), random(&mut rng, 4, 5)], 1e-6, |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, 3, 4);
    let b = positive(&mut rng, 3, 4);
    check(vec![a.clone(), b.clone()], 1e-6, |t, v| t.add(v[0], v[1]).unwrap());
    check(vec![a.clone(), b.clone()], 1e-6, |t, v| t.sub(v[0], v[1]).unwrap());
    check(vec![a.clone(), b.clone()], 1e-6, |t, v| t.mul(v[0], v[1]).unwrap());
    check(vec![a.clone(), b.clone()], 1e-6, |t, v| t.div(v[0], v[1]).unwrap());
    check(vec![b.clone()], 1e-6, |t, v| t.sqrt(v[0]));
    check(vec![b.clone()], 1e-6, |t, v| t.recip(v[0]));
    check(vec![a.clone()], 1e-6, |t, v| t.square(v[0]));
    check(vec![a.clone()], 1e-6, |t, v| t.scale(v[0], -2.5));
    check(vec![a.clone()], 1e-6, |t, v| t.offset(v[0], 0.7));
}

#[test]
fn broadcasting_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 4, 3);
    check(vec![a.clone(), random(&mut rng, 1, 3)], 1e-6, |t, v| t.add_row(v[0], v[1]).unwrap());
    check(vec![a.clone(), random(&mut rng, 1, 3)], 1e-6, |t, v| t.mul_row(v[0], v[1]).unwrap());
    check(vec![a.clone(), random(&mut rng, 4, 1)], 1e-6, |t, v| t.mul_col(v[0], v[1]).unwrap());
    check(vec![a.clone()], 1e-6, |t, v| t.row_sum(v[0]));
    check(vec![a.clone()], 1e-6, |t, v| t.sum(v[0]));
    check(vec![a], 1e-6, |t, v| t.mean(v[0]));
}

#[test]
fn activations_match_away_from_kinks() {
    // Keep inputs away from zero so no probe straddles the kink.
    let data = vec![0.8, -0.6, 1.3, -1.1, 0.2, -0.3];
    let a = Tensor::new(vec![2, 3], data).unwrap();
    check(vec![a.clone()], 1e-6, |t, v| t.relu(v[0]));
    check(vec![a], 1e-6, |t, v| t.leaky_relu(v[0], LEAKY_RELU_SLOPE));
}

#[test]
fn layer_norm_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(vec![random(&mut rng, 3, 6)], 1e-5, |t, v| t.layer_norm(v[0], LAYER_NORM_EPS));
}

#[test]
fn structural_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, 4, 3);
    let b = random(&mut rng, 4, 2);
    check(vec![a.clone(), b], 1e-6, |t, v| t.concat_cols(&[v[0], v[1], v[0]]).unwrap());
    check(vec![a.clone()], 1e-6, |t, v| t.slice_cols(v[0], 1, 3).unwrap());
    let idx: Arc<[usize]> = vec![2, 0, 2, 3, 1, 2].into();
    check(vec![a.clone()], 1e-6, move |t, v| t.gather_rows(v[0], idx.clone()).unwrap());
    let seg: Arc<[usize]> = vec![1, 0, 1, 2].into();
    let seg2 = seg.clone();
    check(vec![a.clone()], 1e-6, move |t, v| t.scatter_add_rows(v[0], seg.clone(), 3).unwrap());
    check(vec![a], 1e-6, move |t, v| t.segment_softmax(v[0], seg2.clone(), 3).unwrap());
}

#[test]
fn select_routes_adjoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mask: Arc<[bool]> = vec![true, false, false, true, true, false].into();
    check(vec![random(&mut rng, 2, 3), random(&mut rng, 2, 3)], 1e-6, move |t, v| {
        t.select(mask.clone(), v[0], v[1]).unwrap()
    });
}

#[test]
fn segment_softmax_singleton_and_symmetric_groups() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3, 1], vec![4.2, 0.3, 0.3]).unwrap());
    let y = tape.segment_softmax(x, vec![0, 1, 1].into(), 2).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 0.5, 0.5]);
}

#[test]
fn segment_ops_reject_bad_indices() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(3, 2));
    assert!(matches!(
        tape.segment_softmax(x, vec![0, 1].into(), 2),
        Err(DiffError::InvalidSegments { .. })
    ));
    assert!(matches!(
        tape.scatter_add_rows(x, vec![0, 5, 1].into(), 2),
        Err(DiffError::InvalidSegments { .. })
    ));
    assert!(matches!(
        tape.gather_rows(x, vec![3].into()),
        Err(DiffError::InvalidIndex { .. })
    ));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(matches!(tape.matmul(a, b), Err(DiffError::ShapeMismatch { op: "matmul", .. })));
    let c = tape.constant(Tensor::zeros(3, 2));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn sum_gives_all_ones() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
}

#[test]
fn disconnected_leaf_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::filled(1, 3, 2.0));
    let unused = tape.param(Tensor::filled(2, 2, 1.0));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(unused).is_none());
    assert_eq!(tape.grad_or_zeros(unused), vec![0.0; 4]);
}

#[test]
fn backward_rejects_non_scalar_and_repeats() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::filled(2, 2, 1.0));
    assert!(matches!(tape.backward(x), Err(DiffError::NonScalarRoot(_))));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.backward(s), Err(DiffError::AlreadyBackpropagated));
    tape.zero_grad();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
}

#[test]
fn independent_subgraphs_backpropagate_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (a0, b0) = (random(&mut rng, 2, 3), random(&mut rng, 3, 2));
    let branch = |tape: &mut Tape, x: Var| {
        let y = tape.layer_norm(x, LAYER_NORM_EPS);
        let y = tape.square(y);
        tape.sum(y)
    };
    let mut joint = Tape::new();
    let (a, b) = (joint.param(a0.clone()), joint.param(b0.clone()));
    let (fa, fb) = (branch(&mut joint, a), branch(&mut joint, b));
    let total = joint.add(fa, fb).unwrap();
    joint.backward(total).unwrap();

    for (t0, v) in [(a0, a), (b0, b)] {
        let mut single = Tape::new();
        let x = single.param(t0);
        let f = branch(&mut single, x);
        single.backward(f).unwrap();
        assert_eq!(single.grad(x).unwrap(), joint.grad(v).unwrap());
    }
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let a = tape.param(random(&mut rng, 5, 4));
        let w = tape.param(random(&mut rng, 4, 3));
        let h = tape.matmul(a, w).unwrap();
        let h = tape.layer_norm(h, LAYER_NORM_EPS);
        let s = tape.segment_softmax(h, vec![0, 0, 1, 1, 1].into(), 2).unwrap();
        let r = tape.sum(s);
        let y = tape.mul(h, h).unwrap();
        let y = tape.sum(y);
        let root = tape.add(r, y).unwrap();
        tape.backward(root).unwrap();
        (tape.value(root).data()[0], tape.grad_or_zeros(a), tape.grad_or_zeros(w))
    };
    let (v1, ga1, gw1) = run();
    let (v2, ga2, gw2) = run();
    assert_eq!(v1.to_bits(), v2.to_bits());
    assert_eq!(ga1, ga2);
    assert_eq!(gw1, gw2);
}
