use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn matmul_identity_and_annihilator() {
    let tape = Tape::new();
    let i = tape.leaf(Tensor::identity(2));
    let x = tape.leaf(t(&[&[2.0], &[3.0]]));
    assert_eq!(i.matmul(&x).unwrap().value(), t(&[&[2.0], &[3.0]]));
    let z = tape.leaf(Tensor::zeros(2, 2));
    assert_eq!(z.matmul(&x).unwrap().value(), Tensor::zeros(2, 1));
    assert!(matches!(x.matmul(&x), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(3, 4, &mut rng);
    let b = random(4, 2, &mut rng);
    let report = finite_diff_check(|_, v| Ok(v[0].matmul(&v[1])?.sum()), &[a, b], 1e-5, 1e-6).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn row_normalize_examples() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[&[3.0, 4.0], &[0.0, 0.0]]));
    let y = x.row_l2_normalize(1e-12).value();
    assert!((y.get(0, 0) - 0.6).abs() < 1e-15);
    assert!((y.get(0, 1) - 0.8).abs() < 1e-15);
    assert_eq!(y.row(1), &[0.0, 0.0]);
}

#[test]
fn row_normalize_gradient_at_orthonormal_rows() {
    let x = t(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
    let report = finite_diff_check(|_, v| Ok(v[0].row_l2_normalize(NORM_EPS).sum()), &[x], 1e-5, 1e-6).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn log_softmax_examples() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[&[0.0, 0.0]]));
    let y = x.log_softmax_rows().value();
    for &v in y.data() {
        assert!((v + 2f64.ln()).abs() < 1e-15);
    }
    for c in [-5.0, 0.0, 17.25] {
        let y = tape.leaf(t(&[&[c, c, c]])).log_softmax_rows().value();
        for &v in y.data() {
            assert!((v + 3f64.ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_fill_examples() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    assert_eq!(x.masked_fill(&[false; 4], -1e30).unwrap().value(), x.value());

    let full = x.masked_fill(&[true; 4], MASK_FILL).unwrap();
    assert_eq!(full.value(), Tensor::full(2, 2, MASK_FILL));
    tape.backward(full.sum()).unwrap();
    assert_eq!(x.grad(), Tensor::zeros(2, 2));

    let tape = Tape::new();
    let x = tape.leaf(t(&[&[0.3, -0.2], &[0.1, 0.9]]));
    let p = x
        .masked_fill(&[false, true, false, false], MASK_FILL)
        .unwrap()
        .log_softmax_rows()
        .value()
        .map(f64::exp);
    assert!(p.get(0, 1) < 1e-12);
    assert!((p.get(0, 0) - 1.0).abs() < 1e-15);

    assert!(x.masked_fill(&[true; 3], 0.0).is_err());
}

#[test]
fn backward_square_and_accumulation() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = x.mul(&x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(x.grad().item(), 6.0);
    tape.backward(y).unwrap();
    assert_eq!(x.grad().item(), 12.0);
    tape.zero_grads();
    assert_eq!(x.grad().item(), 0.0);
}

#[test]
fn backward_doubles_exactly_on_a_composite_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let a = tape.leaf(random(3, 4, &mut rng));
    let w = tape.leaf(random(4, 3, &mut rng));
    let root = a
        .matmul(&w)
        .unwrap()
        .tanh()
        .row_l2_normalize(NORM_EPS)
        .log_softmax_rows()
        .sum();
    tape.backward(root).unwrap();
    let once = a.grad();
    tape.backward(root).unwrap();
    assert_eq!(a.grad(), once.map(|v| v * 2.0));
}

#[test]
fn backward_rejects_non_scalar_root() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(2, 1));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0));
    let d = x.detach();
    let y = d.mul(&x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(x.grad().item(), 2.0);
    assert_eq!(d.grad().item(), 0.0);
}

#[test]
fn finite_diff_on_sum_of_squares_and_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random(4, 3, &mut rng);
    let report = finite_diff_check(|_, v| Ok(v[0].mul(&v[0])?.sum()), std::slice::from_ref(&p), 1e-5, 1e-8).unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");

    let report = finite_diff_check(|tape, _| Ok(tape.constant(Tensor::scalar(4.0))), &[p], 1e-5, 1e-8).unwrap();
    assert!(report.passed);
    assert_eq!(report.max_abs_error, 0.0);
}

#[test]
fn finite_diff_rejects_bad_step() {
    let r = finite_diff_check(|_, v| Ok(v[0].sum()), &[Tensor::scalar(1.0)], 0.0, 1e-4);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn backward_is_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let a = tape.leaf(random(5, 4, &mut rng));
        let b = tape.leaf(random(4, 5, &mut rng));
        let root = a.matmul(&b).unwrap().log_softmax_rows().sum();
        tape.backward(root).unwrap();
        (a.grad(), b.grad())
    };
    assert_eq!(build(), build());
}

/// Every differentiable op, composed into a scalar, checked over 20 seeds.
#[test]
fn every_op_passes_gradient_check_over_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(4, 3, &mut rng);
        let w = random(3, 5, &mut rng);
        let bias = random(1, 5, &mut rng);
        let col = random(4, 1, &mut rng);
        let mask: Vec<bool> = (0..20).map(|i| i % 7 == 3).collect();
        // Masked entries carry −1e30 and must not be weighted.
        let mut weights = random(4, 5, &mut rng);
        for (w, &m) in weights.data_mut().iter_mut().zip(&mask) {
            if m {
                *w = 0.0;
            }
        }
        let rows = [0usize, 2, 2, 3, 1, 0];

        let report = finite_diff_check(
            |_, v| {
                let h = v[0].matmul(&v[1])?.add_row(&v[2])?.tanh();
                let n = h.row_l2_normalize(NORM_EPS).scale(3.0);
                let masked = n.masked_fill(&mask, MASK_FILL)?;
                let ls = masked.log_softmax_rows();
                let lse = n.logsumexp_rows();
                let sp = n.add_col(&lse)?.add_col(&v[3])?.neg().softplus();
                let g = n.gather_rows(&rows)?.group_mean_rows(2)?;
                let prod = n.mul(&n.transpose().transpose())?;
                ls.weighted_sum(&weights)?
                    .add(&sp.sum())?
                    .add(&g.sum())?
                    .sub(&prod.sum())
            },
            &[x, w, bias, col],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {report:?}");
    }
}

proptest! {
    #[test]
    fn log_softmax_rows_normalize_and_shift(
        vals in prop::collection::vec(-50.0f64..50.0, 12),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor::from_vec(3, 4, vals).unwrap();
        let y = x.log_softmax_rows();
        for r in 0..3 {
            let s: f64 = y.row(r).iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let shifted = x.map(|v| v + shift).log_softmax_rows();
        for (a, b) in y.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
