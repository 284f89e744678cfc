//! Entropy-regularised optimal transport between adjacent-frame point sets,
//! solved with log-domain Sinkhorn iterations, and the barycentric state
//! transfer built on top of the resulting coupling.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kinematics::Vec3;

pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default regulariser as a fraction of the median cost.
pub const DEFAULT_REG_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<Vec3>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec3>, masses: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("points", "a measure needs at least one point"));
        }
        if points.len() != masses.len() {
            return Err(Error::LengthMismatch {
                context: "discrete measure masses",
                expected: points.len(),
                actual: masses.len(),
            });
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::param("masses", "masses must be finite and non-negative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("masses", format!("masses sum to {total}, not 1")));
        }
        Ok(Self { points, masses })
    }

    pub fn uniform(points: Vec<Vec3>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::param("points", "a measure needs at least one point"));
        }
        // Compensate rounding so the masses sum to 1 within 1e-12 for any n.
        let mut masses = vec![1.0 / n as f64; n];
        let drift = 1.0 - masses.iter().sum::<f64>();
        masses[0] += drift;
        Self::new(points, masses)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub row_marginal_error: f64,
    pub col_marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TransportPlan {
    /// `<coupling, cost>`.
    pub fn total_cost(&self, cost: &Array2<f64>) -> f64 {
        (&self.coupling * cost).sum()
    }

    /// Exact identity plan on `n` points with uniform mass.
    pub fn identity(n: usize) -> Self {
        let mut coupling = Array2::zeros((n, n));
        for i in 0..n {
            coupling[[i, i]] = 1.0 / n as f64;
        }
        Self {
            coupling,
            row_marginal_error: 0.0,
            col_marginal_error: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub reg: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl SinkhornParams {
    pub fn new(reg: f64, max_iter: usize, tol: f64) -> Self {
        Self { reg, max_iter, tol }
    }
}

/// Squared Euclidean distances, `C[i][j] = |x_i - y_j|^2`.
pub fn cost_matrix(xs: &[Vec3], ys: &[Vec3]) -> Array2<f64> {
    Array2::from_shape_fn((xs.len(), ys.len()), |(i, j)| (xs[i] - ys[j]).norm_squared())
}

/// Median cost entry, used to scale the default regulariser.
pub fn median_cost(cost: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = cost.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Regulariser used when none is configured: a fixed fraction of the median
/// cost, with a floor for degenerate (all-coincident) inputs.
pub fn default_reg(cost: &Array2<f64>) -> f64 {
    let m = median_cost(cost) * DEFAULT_REG_FRACTION;
    if m > 0.0 {
        m
    } else {
        1e-3
    }
}

fn log_sum_exp(iter: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = iter.collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn. Failure to reach `tol` within `max_iter` is reported
/// in the plan, not as an error.
pub fn sinkhorn(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    params: SinkhornParams,
) -> Result<TransportPlan> {
    let cost = cost_matrix(source.points(), target.points());
    sinkhorn_with_cost(source.masses(), target.masses(), cost.view(), params, Execution::Sequential)
}

pub fn sinkhorn_with_cost(
    a: &[f64],
    b: &[f64],
    cost: ArrayView2<f64>,
    params: SinkhornParams,
    exec: Execution,
) -> Result<TransportPlan> {
    let SinkhornParams { reg, max_iter, tol } = params;
    if !(reg > 0.0) {
        return Err(Error::param("reg", format!("must be positive, got {reg}")));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {tol}")));
    }
    let (n, m) = cost.dim();
    if a.len() != n {
        return Err(Error::LengthMismatch { context: "sinkhorn source masses", expected: n, actual: a.len() });
    }
    if b.len() != m {
        return Err(Error::LengthMismatch { context: "sinkhorn target masses", expected: m, actual: b.len() });
    }
    if let Some(((row, col), _)) = cost.indexed_iter().find(|(_, c)| !c.is_finite()) {
        return Err(Error::NonFiniteCost { row, col });
    }

    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let update_f = |g: &[f64]| -> Vec<f64> {
        exec.map(n, |i| {
            if log_a[i] == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let lse = log_sum_exp((0..m).map(|j| (g[j] - cost[[i, j]]) / reg));
            reg * (log_a[i] - lse)
        })
    };
    let update_g = |f: &[f64]| -> Vec<f64> {
        exec.map(m, |j| {
            if log_b[j] == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let lse = log_sum_exp((0..n).map(|i| (f[i] - cost[[i, j]]) / reg));
            reg * (log_b[j] - lse)
        })
    };
    let plan_entry = |f: &[f64], g: &[f64], i: usize, j: usize| -> f64 {
        let e = (f[i] + g[j] - cost[[i, j]]) / reg;
        if e == f64::NEG_INFINITY || e.is_nan() {
            0.0
        } else {
            e.exp()
        }
    };
    // After a g-update the column marginals are exact up to rounding, so the
    // row marginal is the one that certifies convergence.
    let row_error = |f: &[f64], g: &[f64]| -> f64 {
        (0..n)
            .map(|i| ((0..m).map(|j| plan_entry(f, g, i, j)).sum::<f64>() - a[i]).abs())
            .fold(0.0, f64::max)
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        f = update_f(&g);
        g = update_g(&f);
        iterations += 1;
        if row_error(&f, &g) <= tol {
            converged = true;
            break;
        }
    }

    let coupling = Array2::from_shape_fn((n, m), |(i, j)| plan_entry(&f, &g, i, j));
    let row_marginal_error = (0..n)
        .map(|i| (coupling.row(i).sum() - a[i]).abs())
        .fold(0.0, f64::max);
    let col_marginal_error = (0..m)
        .map(|j| (coupling.column(j).sum() - b[j]).abs())
        .fold(0.0, f64::max);
    Ok(TransportPlan {
        coupling,
        row_marginal_error,
        col_marginal_error,
        iterations,
        converged: converged && col_marginal_error <= tol,
    })
}

/// `z_hat[i] = sum_j (gamma_ij / sum_k gamma_ik) z_prev[j]`.
pub fn barycentric_map(plan: &TransportPlan, states_prev: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (n, m) = plan.coupling.dim();
    if states_prev.len() != m {
        return Err(Error::LengthMismatch {
            context: "barycentric map states",
            expected: m,
            actual: states_prev.len(),
        });
    }
    let dim = states_prev.first().map_or(0, Vec::len);
    if let Some(bad) = states_prev.iter().find(|s| s.len() != dim) {
        return Err(Error::LengthMismatch {
            context: "barycentric map state dimension",
            expected: dim,
            actual: bad.len(),
        });
    }
    (0..n)
        .map(|i| {
            let row = plan.coupling.row(i);
            let total: f64 = row.sum();
            if !(total > 0.0) {
                return Err(Error::DegenerateRow { row: i });
            }
            let mut out = vec![0.0; dim];
            for (j, &g) in row.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wgt = g / total;
                for (o, s) in out.iter_mut().zip(&states_prev[j]) {
                    *o += wgt * s;
                }
            }
            Ok(out)
        })
        .collect()
}

/// Row-normalised coupling (each row sums to 1).
pub fn row_stochastic(plan: &TransportPlan) -> Result<Array2<f64>> {
    let mut out = plan.coupling.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let total: f64 = row.sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateRow { row: i });
        }
        row /= total;
    }
    Ok(out)
}

/// Deterministic seeded subsample of `n` indices down to at most `keep`
/// (sorted). `keep == 0` or `keep >= n` keeps everything.
pub fn subsample_indices(n: usize, keep: usize, seed: u64) -> Vec<usize> {
    if keep == 0 || keep >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    idx
}

/// Uniform-mass OT between two point sets, with the target optionally
/// subsampled. The returned plan's columns index `kept` target points.
#[derive(Debug, Clone)]
pub struct FrameAlignment {
    pub plan: TransportPlan,
    /// Indices into the previous frame that the plan's columns refer to.
    pub kept: Vec<usize>,
}

impl FrameAlignment {
    pub fn compute(
        current: &[Vec3],
        previous: &[Vec3],
        reg: Option<f64>,
        max_iter: usize,
        tol: f64,
        subsample: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        let kept = subsample_indices(previous.len(), subsample, seed);
        let prev: Vec<Vec3> = kept.iter().map(|&j| previous[j]).collect();
        let src = DiscreteMeasure::uniform(current.to_vec())?;
        let dst = DiscreteMeasure::uniform(prev)?;
        let cost = cost_matrix(src.points(), dst.points());
        let reg = reg.unwrap_or_else(|| default_reg(&cost));
        let plan = sinkhorn_with_cost(
            src.masses(),
            dst.masses(),
            cost.view(),
            SinkhornParams::new(reg, max_iter, tol),
            exec,
        )?;
        Ok(Self { plan, kept })
    }

    /// Aligned previous states for every current point.
    pub fn transfer(&self, states_prev: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let kept: Vec<Vec<f64>> = self.kept.iter().map(|&j| states_prev[j].clone()).collect();
        barycentric_map(&self.plan, &kept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn v3(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Exact OT cost for equal uniform masses: minimum over permutation
    /// matrices (the vertices of the assignment polytope), plus whether the
    /// optimum is unique.
    fn brute_force_ot(cost: &Array2<f64>) -> (f64, bool) {
        let n = cost.nrows();
        let mut costs: Vec<f64> = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>() / n as f64)
            .collect();
        costs.sort_by(|a, b| a.total_cmp(b));
        let unique = costs.len() < 2 || costs[1] - costs[0] > 1e-6;
        (costs[0], unique)
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost_matrix(&[v3(1., 2., 3.)], &[v3(1., 2., 3.)])[[0, 0]], 0.0);
        assert_eq!(cost_matrix(&[Vec3::zeros()], &[v3(3., 4., 0.)])[[0, 0]], 25.0);
    }

    #[test]
    fn cost_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec3> = (0..4).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
        let ys: Vec<Vec3> = (0..4).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
        let c = cost_matrix(&xs, &ys);
        for i in 0..4 {
            for j in 0..4 {
                let mut d = 0.0;
                for k in 0..3 {
                    d += (xs[i][k] - ys[j][k]).powi(2);
                }
                assert!((c[[i, j]] - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_point_plan() {
        let a = DiscreteMeasure::uniform(vec![Vec3::zeros()]).unwrap();
        let b = DiscreteMeasure::uniform(vec![v3(1., 1., 1.)]).unwrap();
        let plan = sinkhorn(&a, &b, SinkhornParams::new(0.1, 100, 1e-9)).unwrap();
        assert!((plan.coupling[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(plan.converged);
    }

    #[test]
    fn separated_pairs_match_exact_assignment() {
        let a = DiscreteMeasure::uniform(vec![v3(0., 0., 0.), v3(10., 0., 0.)]).unwrap();
        let b = DiscreteMeasure::uniform(vec![v3(0.1, 0., 0.), v3(10.1, 0., 0.)]).unwrap();
        let plan = sinkhorn(&a, &b, SinkhornParams::new(1e-3, 1000, 1e-9)).unwrap();
        let expected = [[0.5, 0.0], [0.0, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((plan.coupling[[i, j]] - expected[i][j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn uniform_three_point_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for reg in [1e-2, 0.1, 1.0, 10.0] {
            let pts = |rng: &mut ChaCha8Rng| -> Vec<Vec3> {
                (0..3).map(|_| v3(rng.random(), rng.random(), rng.random())).collect()
            };
            let a = DiscreteMeasure::uniform(pts(&mut rng)).unwrap();
            let b = DiscreteMeasure::uniform(pts(&mut rng)).unwrap();
            let plan = sinkhorn(&a, &b, SinkhornParams::new(reg, 5000, 1e-9)).unwrap();
            assert!(plan.converged);
            for i in 0..3 {
                assert!((plan.coupling.row(i).sum() - 1.0 / 3.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn entropic_limit_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 10 {
            let n = rng.random_range(2..=5);
            let xs: Vec<Vec3> = (0..n).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
            let ys: Vec<Vec3> = (0..n).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
            let cost = cost_matrix(&xs, &ys);
            let (exact, unique) = brute_force_ot(&cost);
            if !unique {
                continue;
            }
            let a = DiscreteMeasure::uniform(xs).unwrap();
            let b = DiscreteMeasure::uniform(ys).unwrap();
            let plan = sinkhorn(&a, &b, SinkhornParams::new(1e-4, 200_000, 1e-9)).unwrap();
            let got = plan.total_cost(&cost);
            assert!((got - exact).abs() <= 0.01 * exact, "{got} vs {exact}");
            checked += 1;
        }
    }

    #[test]
    fn non_finite_cost_is_rejected() {
        let cost = Array2::from_shape_vec((1, 2), vec![0.0, f64::INFINITY]).unwrap();
        let r = sinkhorn_with_cost(&[1.0], &[0.5, 0.5], cost.view(), SinkhornParams::new(0.1, 10, 1e-6), Execution::Sequential);
        assert!(matches!(r, Err(Error::NonFiniteCost { row: 0, col: 1 })));
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let a = DiscreteMeasure::uniform((0..4).map(|i| v3(i as f64, 0., 0.)).collect()).unwrap();
        let b = DiscreteMeasure::uniform((0..4).map(|i| v3(i as f64 + 0.5, 0., 0.)).collect()).unwrap();
        let plan = sinkhorn(&a, &b, SinkhornParams::new(1e-4, 1, 1e-12)).unwrap();
        assert!(!plan.converged);
        assert_eq!(plan.iterations, 1);
    }

    #[test]
    fn barycentric_examples() {
        let plan = TransportPlan::identity(3);
        let states = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(barycentric_map(&plan, &states).unwrap(), states);

        let mut half = TransportPlan::identity(1);
        half.coupling = Array2::from_shape_vec((1, 2), vec![0.5, 0.5]).unwrap();
        assert_eq!(barycentric_map(&half, &[vec![0.0], vec![2.0]]).unwrap(), vec![vec![1.0]]);

        let mut degenerate = TransportPlan::identity(2);
        degenerate.coupling[[1, 1]] = 0.0;
        assert!(matches!(
            barycentric_map(&degenerate, &[vec![0.0], vec![1.0]]),
            Err(Error::DegenerateRow { row: 1 })
        ));
    }

    #[test]
    fn barycentric_stays_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut plan = TransportPlan::identity(3);
            plan.coupling = Array2::from_shape_fn((3, 3), |_| rng.random::<f64>());
            let states: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
            let out = barycentric_map(&plan, &states).unwrap();
            for d in 0..2 {
                let lo = states.iter().map(|s| s[d]).fold(f64::INFINITY, f64::min);
                let hi = states.iter().map(|s| s[d]).fold(f64::NEG_INFINITY, f64::max);
                for o in &out {
                    assert!(o[d] >= lo - 1e-12 && o[d] <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(vec![Vec3::zeros()], vec![0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![Vec3::zeros(), Vec3::zeros()], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(vec![Vec3::zeros(), Vec3::zeros()], vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::uniform(vec![]).is_err());
        let m = DiscreteMeasure::uniform(vec![Vec3::zeros(); 7]).unwrap();
        assert!((m.masses().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn subsample_is_deterministic() {
        let a = subsample_indices(50, 10, 7);
        assert_eq!(a, subsample_indices(50, 10, 7));
        assert_eq!(a.len(), 10);
        assert_eq!(subsample_indices(5, 0, 1), vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn permutation_equivariance(seed in 0u64..1000, n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<Vec3> = (0..n).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
            let ys: Vec<Vec3> = (0..n).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let ys_p: Vec<Vec3> = perm.iter().map(|&j| ys[j]).collect();
            let params = SinkhornParams::new(0.05, 2000, 1e-10);
            let p0 = sinkhorn(&DiscreteMeasure::uniform(xs.clone()).unwrap(), &DiscreteMeasure::uniform(ys).unwrap(), params).unwrap();
            let p1 = sinkhorn(&DiscreteMeasure::uniform(xs).unwrap(), &DiscreteMeasure::uniform(ys_p).unwrap(), params).unwrap();
            for i in 0..n {
                for (jp, &j) in perm.iter().enumerate() {
                    prop_assert!((p1.coupling[[i, jp]] - p0.coupling[[i, j]]).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn converged_plans_meet_tolerance(seed in 0u64..1000, reg in 0.01..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..8);
            let m = rng.random_range(1..8);
            let xs: Vec<Vec3> = (0..n).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
            let ys: Vec<Vec3> = (0..m).map(|_| v3(rng.random(), rng.random(), rng.random())).collect();
            let plan = sinkhorn(&DiscreteMeasure::uniform(xs).unwrap(), &DiscreteMeasure::uniform(ys).unwrap(), SinkhornParams::new(reg, 1000, 1e-6)).unwrap();
            if plan.converged {
                prop_assert!(plan.row_marginal_error <= 1e-6 && plan.col_marginal_error <= 1e-6);
            }
            prop_assert!(plan.coupling.iter().all(|g| *g >= 0.0));
        }
    }
}
