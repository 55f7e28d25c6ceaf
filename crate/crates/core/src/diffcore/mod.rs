//! Minimal dense reverse-mode differentiation and the ADAM optimiser.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{sigmoid, Gradients, Tape, Var, LOG_CLAMP};
pub(crate) use tape::dot;
pub use tensor::Tensor2D;

use crate::{Error, Result};

/// Evaluate a scalar expression built on a fresh tape and return its value
/// together with the gradient for each input, in input order.
pub fn evaluate_with_gradients<F>(inputs: &[Tensor2D], expr: F) -> Result<(f64, Vec<Tensor2D>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = expr(&mut tape, &vars)?;
    let value = tape.scalar(root)?;
    let grads = tape.gradients(root)?;
    Ok((value, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Value of the expression without gradients.
pub fn evaluate<F>(inputs: &[Tensor2D], expr: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = expr(&mut tape, &vars)?;
    tape.scalar(root)
}

/// Denominator floor of [`finite_difference_check`]. Central differences
/// carry roundoff near `1e-16 / h`, so coordinates whose gradient is below
/// this floor are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

/// Worst per-coordinate relative error between the analytic gradient and a
/// central difference with step `h`. The denominator of each relative error
/// is `max(|analytic|, |numeric|, FD_FLOOR)`.
pub fn finite_difference_check<F>(inputs: &[Tensor2D], expr: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let (_, analytic) = evaluate_with_gradients(inputs, &expr)?;
    let mut probe: Vec<Tensor2D> = inputs.to_vec();
    let mut worst = 0.0f64;
    for t in 0..inputs.len() {
        for k in 0..inputs[t].len() {
            let orig = probe[t].as_slice()[k];
            probe[t].as_mut_slice()[k] = orig + h;
            let up = evaluate(&probe, &expr)?;
            probe[t].as_mut_slice()[k] = orig - h;
            let down = evaluate(&probe, &expr)?;
            probe[t].as_mut_slice()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t].as_slice()[k];
            let denom = a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn quadratic_value_and_gradient() {
        let (v, g) = evaluate_with_gradients(&[Tensor2D::scalar(3.0)], |t, x| {
            t.mul(x[0], x[0])
        })
        .unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g[0].as_slice(), &[6.0]);
    }

    #[test]
    fn mean_of_ones() {
        let (v, g) =
            evaluate_with_gradients(&[Tensor2D::filled(2, 2, 1.0)], |t, x| t.mean(x[0])).unwrap();
        assert_eq!(v, 1.0);
        assert!(g[0].as_slice().iter().all(|&d| d == 0.25));
    }

    #[test]
    fn log_sigmoid_at_zero() {
        let (v, g) = evaluate_with_gradients(&[Tensor2D::scalar(0.0)], |t, x| {
            let s = t.sigmoid(x[0]);
            Ok(t.log(s))
        })
        .unwrap();
        assert!((v + LN2).abs() < 1e-15);
        assert!((g[0].as_slice()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_is_clamped() {
        let (v, g) = evaluate_with_gradients(&[Tensor2D::scalar(-1.0)], |t, x| Ok(t.log(x[0])))
            .unwrap();
        assert_eq!(v, LOG_CLAMP.ln());
        assert_eq!(g[0].as_slice(), &[0.0]);
    }

    #[test]
    fn fd_check_on_quadratic_and_log_sigmoid() {
        let e = finite_difference_check(&[Tensor2D::scalar(3.0)], |t, x| t.mul(x[0], x[0]), 1e-5)
            .unwrap();
        assert!(e < 1e-8, "{e}");
        let e = finite_difference_check(
            &[Tensor2D::scalar(0.0)],
            |t, x| {
                let s = t.sigmoid(x[0]);
                Ok(t.log(s))
            },
            1e-5,
        )
        .unwrap();
        assert!(e < 1e-7, "{e}");
    }

    #[test]
    fn shape_mismatch_is_structural_error() {
        let r = evaluate_with_gradients(&[Tensor2D::zeros(2, 3), Tensor2D::zeros(2, 3)], |t, x| {
            let p = t.matmul(x[0], x[1])?;
            t.mean(p)
        });
        assert!(matches!(r, Err(Error::Shape { .. })));
        let r = evaluate_with_gradients(&[Tensor2D::zeros(2, 3)], |t, x| Ok(t.relu(x[0])));
        assert!(matches!(r, Err(Error::Shape { .. })), "non-scalar root");
    }

    #[test]
    fn gradients_can_be_taken_for_two_roots() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2D::scalar(2.0));
        let sq = tape.mul(x, x).unwrap();
        let tr = tape.scale(x, 3.0);
        assert_eq!(tape.gradients(sq).unwrap().wrt(x).as_slice(), &[4.0]);
        assert_eq!(tape.gradients(tr).unwrap().wrt(x).as_slice(), &[3.0]);
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor2D> {
        prop::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |v| Tensor2D::from_vec(rows, cols, v).unwrap())
    }

    /// Keeps every coordinate away from the kinks of relu/abs/max.
    fn away_from_kinks(t: &Tensor2D) -> bool {
        t.as_slice().iter().all(|v| v.abs() > 1e-3 && (v - 0.3).abs() > 1e-3)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn every_op_matches_finite_differences(a in matrix(3, 4), b in matrix(4, 2), c in matrix(3, 4)) {
            prop_assume!(away_from_kinks(&a) && away_from_kinks(&c));
            let idx: Arc<[usize]> = Arc::from(vec![2usize, 0, 2]);
            let groups = Arc::new(vec![vec![0, 1], vec![2], vec![0, 1, 2]]);
            let expr = |t: &mut Tape, x: &[Var]| -> Result<Var> {
                let p = t.matmul(x[0], x[1])?;             // 3x2
                let sg = t.sigmoid(p);
                let lg = t.log(sg);
                let s1 = t.sum(lg);
                let sum = t.add(x[0], x[2])?;
                let diff = t.sub(sum, x[2])?;
                let prod = t.mul(diff, x[2])?;
                let r = t.relu(prod);
                let ab = t.abs(x[2]);
                let mx = t.max_const(x[0], 0.3);
                let rd = t.row_dot(ab, mx)?;              // 3x1
                let rm = t.row_mean(r)?;                  // 3x1
                let both = t.add(rd, rm)?;
                let g = t.gather_rows(both, idx.clone())?;
                let m1 = t.mean(g)?;
                let seg = t.segment_mean(x[0], groups.clone())?;
                let sq = t.squared_norm(seg);
                let sq = t.scale(sq, 0.1);
                let bias = t.add_const(s1, 0.5);
                let tot = t.add(m1, sq)?;
                let tot = t.add_scalar(tot, bias)?;
                Ok(tot)
            };
            let e = finite_difference_check(&[a, b, c], expr, 1e-6).unwrap();
            prop_assert!(e < 1e-4, "relative error {e}");
        }

        #[test]
        fn evaluation_is_bit_deterministic(a in matrix(4, 3), b in matrix(3, 3)) {
            let expr = |t: &mut Tape, x: &[Var]| -> Result<Var> {
                let p = t.matmul(x[0], x[1])?;
                let s = t.sigmoid(p);
                t.mean(s)
            };
            let r1 = evaluate_with_gradients(&[a.clone(), b.clone()], expr).unwrap();
            let r2 = evaluate_with_gradients(&[a, b], expr).unwrap();
            prop_assert_eq!(r1.0.to_bits(), r2.0.to_bits());
            prop_assert_eq!(r1.1, r2.1);
        }
    }
}
