//! Debiased entropic optimal transport between uniformly weighted point
//! clouds with squared Euclidean cost.
//!
//! `S(a, b) = OT(a, b) - OT(a, a)/2 - OT(b, b)/2`. Dual potentials are solved
//! in the log domain with symmetric averaged updates and ε-annealing from the
//! squared diameter of the joint bounding box down to the target blur.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor2D, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Sup-norm threshold on the change of the dual potentials.
    pub tolerance: f64,
    /// Ratio between consecutive blur values while annealing.
    pub scaling: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iterations: 200,
            tolerance: 1e-6,
            scaling: 0.5,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "sinkhorn needs epsilon > 0, max_iterations >= 1, tolerance > 0 (got {}, {}, {})",
                self.epsilon, self.max_iterations, self.tolerance
            )));
        }
        if !(self.scaling > 0.0 && self.scaling < 1.0) {
            return Err(Error::Config(format!("sinkhorn scaling must lie in (0, 1), got {}", self.scaling)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornOutput {
    pub value: f64,
    /// Gradient with respect to the target cloud.
    pub grad: Tensor2D,
    /// Whether all three transport problems met the tolerance.
    pub converged: bool,
    /// Largest iteration count among the three problems.
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major `n×m` cost plus its transpose.
struct Cost {
    n: usize,
    m: usize,
    c: Vec<f64>,
    ct: Vec<f64>,
}

impl Cost {
    fn new(x: &Tensor2D, y: &Tensor2D) -> Self {
        let (n, m) = (x.rows(), y.rows());
        let mut c = vec![0.0; n * m];
        let mut ct = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let d = sq_dist(x.row(i), y.row(j));
                c[i * m + j] = d;
                ct[j * n + i] = d;
            }
        }
        Self { n, m, c, ct }
    }
}

/// `out_i = -ε log Σ_j w exp((h_j - C_ij)/ε)` with uniform weight `w`.
fn softmin(rows: &[f64], width: usize, h: &[f64], eps: f64, out: &mut [f64]) {
    let log_w = -(width as f64).ln();
    let mut buf = vec![0.0; width];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &rows[i * width..(i + 1) * width];
        let mut mx = f64::NEG_INFINITY;
        for ((b, &hj), &c) in buf.iter_mut().zip(h).zip(row) {
            *b = (hj - c) / eps;
            mx = mx.max(*b);
        }
        let s: f64 = buf.iter().map(|b| (b - mx).exp()).sum();
        *o = -eps * (log_w + mx + s.ln());
    }
}

struct Duals {
    f: Vec<f64>,
    g: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn blur_schedule(diameter_sq: f64, cfg: &SinkhornConfig) -> Vec<f64> {
    let mut eps = vec![];
    let mut e = diameter_sq;
    while e > cfg.epsilon {
        eps.push(e);
        e *= cfg.scaling;
    }
    eps.push(cfg.epsilon);
    eps
}

fn solve(cost: &Cost, schedule: &[f64], cfg: &SinkhornConfig) -> Duals {
    let (n, m) = (cost.n, cost.m);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut ft = vec![0.0; n];
    let mut gt = vec![0.0; m];
    softmin(&cost.c, m, &g.clone(), schedule[0], &mut f);
    softmin(&cost.ct, n, &vec![0.0; n], schedule[0], &mut g);

    let final_eps = *schedule.last().unwrap();
    let mut iterations = 0;
    let mut converged = false;
    let mut step = 0;
    while iterations < cfg.max_iterations {
        let eps = schedule[step.min(schedule.len() - 1)];
        softmin(&cost.c, m, &g, eps, &mut ft);
        softmin(&cost.ct, n, &f, eps, &mut gt);
        let mut delta = 0.0f64;
        for (a, &b) in f.iter_mut().zip(&ft) {
            let next = 0.5 * (*a + b);
            delta = delta.max((next - *a).abs());
            *a = next;
        }
        for (a, &b) in g.iter_mut().zip(&gt) {
            let next = 0.5 * (*a + b);
            delta = delta.max((next - *a).abs());
            *a = next;
        }
        iterations += 1;
        step += 1;
        if eps == final_eps && step >= schedule.len() && delta < cfg.tolerance {
            converged = true;
            break;
        }
    }
    softmin(&cost.c, m, &g, final_eps, &mut ft);
    softmin(&cost.ct, n, &f, final_eps, &mut gt);
    Duals {
        f: ft,
        g: gt,
        converged,
        iterations,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Accumulates `scale · Σ_i P_ij (y_j - x_i)` into `grad` for the plan
/// `P_ij = a_i b_j exp((f_i + g_j - C_ij)/ε)`.
fn plan_gradient(cost: &Cost, d: &Duals, x: &Tensor2D, y: &Tensor2D, eps: f64, scale: f64, grad: &mut Tensor2D) {
    let (n, m) = (cost.n, cost.m);
    let w = 1.0 / (n as f64 * m as f64);
    for j in 0..m {
        let yj = y.row(j).to_vec();
        let out = grad.row_mut(j);
        for i in 0..n {
            let p = w * ((d.f[i] + d.g[j] - cost.ct[j * n + i]) / eps).exp();
            if p == 0.0 {
                continue;
            }
            let k = scale * p;
            for ((o, &yv), &xv) in out.iter_mut().zip(&yj).zip(x.row(i)) {
                *o += k * (yv - xv);
            }
        }
    }
}

fn joint_diameter_sq(a: &Tensor2D, b: &Tensor2D) -> f64 {
    let d = a.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for t in [a, b] {
        for i in 0..t.rows() {
            for (k, &v) in t.row(i).iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
    }
    lo.iter().zip(&hi).map(|(l, h)| (h - l) * (h - l)).sum()
}

/// Debiased Sinkhorn divergence and its gradient with respect to `zt`,
/// treating the converged dual potentials as constants.
///
/// Running out of iterations is not an error: the current estimate is
/// returned with `converged == false`.
pub fn sinkhorn_divergence(zs: &Tensor2D, zt: &Tensor2D, cfg: &SinkhornConfig) -> Result<SinkhornOutput> {
    cfg.validate()?;
    if zs.is_empty() || zt.is_empty() || zs.cols() != zt.cols() {
        return Err(Error::shape(
            "sinkhorn_divergence",
            format!("clouds {:?} and {:?}", zs.shape(), zt.shape()),
        ));
    }
    if !zs.is_finite() || !zt.is_finite() {
        return Err(Error::shape("sinkhorn_divergence", "non-finite coordinates"));
    }
    let schedule = blur_schedule(joint_diameter_sq(zs, zt), cfg);
    let eps = cfg.epsilon;

    let c_st = Cost::new(zs, zt);
    let c_ss = Cost::new(zs, zs);
    let c_tt = Cost::new(zt, zt);
    let st = solve(&c_st, &schedule, cfg);
    let ss = solve(&c_ss, &schedule, cfg);
    let tt = solve(&c_tt, &schedule, cfg);

    let ot = |d: &Duals| mean(&d.f) + mean(&d.g);
    let value = ot(&st) - 0.5 * ot(&ss) - 0.5 * ot(&tt);

    let mut grad = Tensor2D::zeros(zt.rows(), zt.cols());
    plan_gradient(&c_st, &st, zs, zt, eps, 2.0, &mut grad);
    // The self term depends on zt through both arguments of a symmetric plan.
    plan_gradient(&c_tt, &tt, zt, zt, eps, -2.0, &mut grad);

    Ok(SinkhornOutput {
        value,
        grad,
        converged: st.converged && ss.converged && tt.converged,
        iterations: st.iterations.max(ss.iterations).max(tt.iterations),
    })
}

/// Records the divergence between the constant cloud `zs` and the tape node
/// `zt`.
pub fn sinkhorn_on_tape(tape: &mut Tape, zs: &Tensor2D, zt: Var, cfg: &SinkhornConfig) -> Result<(Var, SinkhornOutput)> {
    let out = sinkhorn_divergence(zs, tape.value(zt), cfg)?;
    let v = tape.custom_scalar(out.value, vec![(zt, out.grad.clone())])?;
    Ok((v, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_difference_check;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(rng: &mut impl Rng, n: usize, d: usize, r: f64) -> Tensor2D {
        Tensor2D::from_fn(n, d, |_, _| rng.random_range(-r..=r))
    }

    fn tight() -> SinkhornConfig {
        SinkhornConfig {
            max_iterations: 20_000,
            tolerance: 1e-13,
            ..SinkhornConfig::default()
        }
    }

    /// Exact transport between equal-size uniform clouds: the best
    /// assignment over all permutations.
    fn brute_force_ot(x: &Tensor2D, y: &Tensor2D) -> f64 {
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = vec![];
            for p in perms(k - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        let n = x.rows();
        perms(n)
            .into_iter()
            .map(|p| (0..n).map(|i| sq_dist(x.row(i), y.row(p[i]))).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn single_atoms() {
        let a = Tensor2D::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let b = Tensor2D::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let out = sinkhorn_divergence(&a, &b, &SinkhornConfig::default()).unwrap();
        assert!((out.value - 25.0).abs() < 1e-6, "{}", out.value);
        assert!(out.converged);
        assert!((out.grad.get(0, 0) - 6.0).abs() < 1e-6 && (out.grad.get(0, 1) - 8.0).abs() < 1e-6);
    }

    #[test]
    fn identical_large_clouds() {
        let mut r = rng::stream(1, "cloud");
        let a = cloud(&mut r, 256, 64, 10.0);
        let out = sinkhorn_divergence(&a, &a, &SinkhornConfig::default()).unwrap();
        assert!(out.value.abs() <= 1e-6, "{}", out.value);
    }

    #[test]
    fn small_blur_approaches_exact_transport() {
        let mut r = rng::stream(2, "bf");
        let cfg = SinkhornConfig {
            epsilon: 0.01,
            ..SinkhornConfig::default()
        };
        for n in [2, 3, 4] {
            for _ in 0..10 {
                let x = cloud(&mut r, n, 2, 2.0);
                let y = cloud(&mut r, n, 2, 2.0);
                let exact = brute_force_ot(&x, &y);
                let s = sinkhorn_divergence(&x, &y, &cfg).unwrap().value;
                assert!((s - exact).abs() <= 0.05 * exact, "n={n} sinkhorn {s} exact {exact}");
            }
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let mut r = rng::stream(3, "grad");
        let zs = cloud(&mut r, 7, 3, 1.0);
        let zt = cloud(&mut r, 5, 3, 1.0);
        let cfg = SinkhornConfig {
            epsilon: 0.5,
            ..tight()
        };
        let err = finite_difference_check(&[zt], |t, x| Ok(sinkhorn_on_tape(t, &zs, x[0], &cfg)?.0), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn exhausted_budget_reports_non_convergence() {
        let mut r = rng::stream(4, "nc");
        let cfg = SinkhornConfig {
            max_iterations: 2,
            ..SinkhornConfig::default()
        };
        let out = sinkhorn_divergence(&cloud(&mut r, 20, 4, 3.0), &cloud(&mut r, 20, 4, 3.0), &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.value.is_finite());
    }

    #[test]
    fn mismatched_dims_rejected() {
        let r = sinkhorn_divergence(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(2, 4), &SinkhornConfig::default());
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn symmetric_nonnegative_and_permutation_invariant(seed in 0u64..10_000, n in 1usize..12, m in 1usize..12) {
            let mut r = rng::stream(seed, "prop");
            let a = cloud(&mut r, n, 3, 2.0);
            let b = cloud(&mut r, m, 3, 2.0);
            let cfg = SinkhornConfig::default();
            let ab = sinkhorn_divergence(&a, &b, &cfg).unwrap().value;
            let ba = sinkhorn_divergence(&b, &a, &cfg).unwrap().value;
            prop_assert!((ab - ba).abs() <= 1e-9, "{} vs {}", ab, ba);
            prop_assert!(ab >= -cfg.tolerance);
            let rev: Vec<usize> = (0..n).rev().collect();
            let pa = a.gather_rows(&rev).unwrap();
            let p = sinkhorn_divergence(&pa, &b, &cfg).unwrap().value;
            prop_assert!((p - ab).abs() <= 1e-9);
            let same = sinkhorn_divergence(&a, &a, &cfg).unwrap().value;
            prop_assert!(same.abs() <= 1e-6);
        }
    }
}
