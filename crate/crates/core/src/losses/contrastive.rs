use std::sync::Arc;

use crate::diffcore::{evaluate_with_gradients, Tape, Tensor2D, Var};
use crate::{Error, Result};

/// Records the topology contrastive loss.
///
/// Per centre `u`: `-log σ(z_u·z_v) - Q · mean_q log σ(-z_u·z_vn_q)`, averaged
/// over centres. `zvn` holds the `Q` negatives of each centre contiguously.
pub fn contrastive_on_tape(tape: &mut Tape, zu: Var, zv: Var, zvn: Var, q: usize) -> Result<Var> {
    let b = tape.value(zu).rows();
    if tape.value(zv).shape() != tape.value(zu).shape() {
        return Err(Error::shape(
            "contrastive_loss",
            format!("positives {:?} vs centres {:?}", tape.value(zv).shape(), tape.value(zu).shape()),
        ));
    }
    if q == 0 || tape.value(zvn).rows() != q * b || tape.value(zvn).cols() != tape.value(zu).cols() {
        return Err(Error::shape(
            "contrastive_loss",
            format!("{:?} negatives for {b} centres with Q={q}", tape.value(zvn).shape()),
        ));
    }
    let pos = tape.row_dot(zu, zv)?;
    let pos = tape.sigmoid(pos);
    let pos = tape.log(pos);
    let pos = tape.mean(pos)?;

    let rep: Arc<[usize]> = (0..b).flat_map(|i| std::iter::repeat_n(i, q)).collect();
    let zu_rep = tape.gather_rows(zu, rep)?;
    let neg = tape.row_dot(zu_rep, zvn)?;
    let neg = tape.neg(neg);
    let neg = tape.sigmoid(neg);
    let neg = tape.log(neg);
    let neg = tape.mean(neg)?;
    let neg = tape.scale(neg, q as f64);

    let total = tape.add(pos, neg)?;
    Ok(tape.neg(total))
}

/// Loss value and gradients with respect to `(zu, zv, zvn)`.
pub fn contrastive_loss(zu: &Tensor2D, zv: &Tensor2D, zvn: &Tensor2D, q: usize) -> Result<(f64, [Tensor2D; 3])> {
    let (v, g) = evaluate_with_gradients(&[zu.clone(), zv.clone(), zvn.clone()], |t, x| {
        contrastive_on_tape(t, x[0], x[1], x[2], q)
    })?;
    let [a, b, c]: [Tensor2D; 3] = g.try_into().expect("three inputs");
    Ok((v, [a, b, c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_difference_check;
    use proptest::prelude::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor2D {
        Tensor2D::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_embeddings() {
        for q in [1, 3, 5] {
            let (v, _) = contrastive_loss(
                &Tensor2D::zeros(4, 3),
                &Tensor2D::zeros(4, 3),
                &Tensor2D::zeros(4 * q, 3),
                q,
            )
            .unwrap();
            assert!((v - (1 + q) as f64 * std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_pair_with_opposite_negative() {
        let (v, _) = contrastive_loss(&t(1, 2, &[1.0, 0.0]), &t(1, 2, &[1.0, 0.0]), &t(1, 2, &[-1.0, 0.0]), 1).unwrap();
        let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.6266).abs() < 1e-4);
    }

    #[test]
    fn loss_decreases_toward_zero_with_separation() {
        let mut prev = f64::INFINITY;
        for k in 1..30 {
            let s = k as f64 * 0.5;
            let (v, _) =
                contrastive_loss(&t(1, 2, &[s, 0.0]), &t(1, 2, &[s, 0.0]), &t(1, 2, &[-s, 0.0]), 1).unwrap();
            assert!(v >= 0.0 && (v < prev || v == 0.0));
            prev = v;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn negative_count_mismatch_is_shape_error() {
        let r = contrastive_loss(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(2, 3), &Tensor2D::zeros(5, 3), 3);
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn nonnegative_and_matches_finite_differences(
            vals in proptest::collection::vec(-2.0f64..2.0, 2 * 3 + 2 * 3 + 6 * 3),
        ) {
            let zu = t(2, 3, &vals[..6]);
            let zv = t(2, 3, &vals[6..12]);
            let zvn = t(6, 3, &vals[12..]);
            let (v, _) = contrastive_loss(&zu, &zv, &zvn, 3).unwrap();
            prop_assert!(v >= 0.0);
            let err = finite_difference_check(&[zu, zv, zvn], |t, x| contrastive_on_tape(t, x[0], x[1], x[2], 3), 1e-6).unwrap();
            prop_assert!(err < 1e-4, "{}", err);
        }
    }
}
