//! Steady-state anisotropic diffusion-reaction on a regular grid:
//!
//! ```text
//! lambda_t * r - lambda_s * div(D grad r) = G
//! ```
//!
//! with zero-Dirichlet boundary. The outermost ring of nodes is the boundary
//! and is held at zero; residuals and energy gradients live on interior nodes.
//! The divergence uses harmonic-mean face conductances, so a strip with `D = 0`
//! fully decouples the regions on either side of it.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::exec::Execution;

pub const DEFAULT_GRID: usize = 64;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_DAMPING: f64 = 0.8;
/// Consecutive residual increases after which the solver gives up.
pub const DIVERGENCE_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Array2<f64>,
    pub spacing: f64,
}

impl GridField {
    pub fn new(values: Array2<f64>, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::param("spacing", format!("must be positive, got {spacing}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("values", "grid values must be finite"));
        }
        Ok(Self { values, spacing })
    }

    pub fn zeros(height: usize, width: usize, spacing: f64) -> Result<Self> {
        Self::new(Array2::zeros((height, width)), spacing)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionProblem {
    /// Diagonal diffusion tensor samples, each in `[0, 1]`.
    pub diffusion: Array2<f64>,
    pub source: Array2<f64>,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub spacing: f64,
}

impl DiffusionProblem {
    pub fn new(diffusion: Array2<f64>, source: Array2<f64>, lambda_t: f64, lambda_s: f64, spacing: f64) -> Result<Self> {
        if diffusion.dim() != source.dim() {
            return Err(Error::ShapeMismatch { context: "diffusion problem source", expected: diffusion.dim(), actual: source.dim() });
        }
        let (h, w) = diffusion.dim();
        if h < 3 || w < 3 {
            return Err(Error::param("grid", format!("need at least 3x3 nodes, got {h}x{w}")));
        }
        if let Some(d) = diffusion.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::param("diffusion", format!("samples must lie in [0, 1], got {d}")));
        }
        if source.iter().any(|g| !g.is_finite()) {
            return Err(Error::param("source", "source must be finite"));
        }
        if !(lambda_t > 0.0 && lambda_t.is_finite()) {
            return Err(Error::param("lambda_t", format!("must be positive, got {lambda_t}")));
        }
        if !(lambda_s > 0.0 && lambda_s.is_finite()) {
            return Err(Error::param("lambda_s", format!("must be positive, got {lambda_s}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::param("spacing", format!("must be positive, got {spacing}")));
        }
        Ok(Self { diffusion, source, lambda_t, lambda_s, spacing })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.diffusion.dim()
    }

    fn check(&self, r: &GridField) -> Result<()> {
        if r.dim() != self.dim() {
            return Err(Error::ShapeMismatch { context: "diffusion field", expected: self.dim(), actual: r.dim() });
        }
        if r.spacing != self.spacing {
            return Err(Error::param("spacing", format!("field spacing {} differs from problem spacing {}", r.spacing, self.spacing)));
        }
        Ok(())
    }

    /// Conductances of the four faces of node `(i, j)`: up, down, left, right.
    fn faces(&self, i: usize, j: usize) -> [(usize, usize, f64); 4] {
        let d = &self.diffusion;
        let c = d[[i, j]];
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)].map(|(a, b)| (a, b, harmonic_mean(c, d[[a, b]])))
    }

    fn is_interior(&self, i: usize, j: usize) -> bool {
        let (h, w) = self.dim();
        i > 0 && j > 0 && i + 1 < h && j + 1 < w
    }
}

/// `2ab / (a + b)`, zero when both sides are zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

fn residual_row(r: &Array2<f64>, prob: &DiffusionProblem, i: usize) -> Vec<f64> {
    let (h, w) = prob.dim();
    let mut out = vec![0.0; w];
    if i == 0 || i + 1 == h {
        return out;
    }
    let inv_h2 = 1.0 / (prob.spacing * prob.spacing);
    for (j, o) in out.iter_mut().enumerate().take(w - 1).skip(1) {
        let centre = r[[i, j]];
        let div: f64 = prob.faces(i, j).iter().map(|&(a, b, df)| df * (r[[a, b]] - centre)).sum::<f64>() * inv_h2;
        *o = prob.lambda_t * centre - prob.lambda_s * div - prob.source[[i, j]];
    }
    out
}

fn stack_rows(rows: Vec<Vec<f64>>, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_vec((h, w), rows.concat()).expect("rows have equal length")
}

/// `lambda_t r - lambda_s div(D grad r) - G` on interior nodes, zero on the
/// boundary ring.
pub fn pde_residual(r: &GridField, prob: &DiffusionProblem) -> Result<GridField> {
    pde_residual_with(r, prob, Execution::Sequential)
}

pub fn pde_residual_with(r: &GridField, prob: &DiffusionProblem, exec: Execution) -> Result<GridField> {
    prob.check(r)?;
    let (h, w) = prob.dim();
    let rows = exec.map(h, |i| residual_row(&r.values, prob, i));
    Ok(GridField { values: stack_rows(rows, h, w), spacing: prob.spacing })
}

/// Quadratic energy whose gradient with respect to the interior nodes equals
/// `h^2 * pde_residual`:
///
/// ```text
/// h^2 * sum_nodes (lambda_t/2 r^2 - G r) + h^2 * sum_faces (lambda_s/2) D_f (dr/h)^2
/// ```
///
/// Node sums run over interior nodes; face sums over faces with at least one
/// interior endpoint.
pub fn discrete_energy(r: &GridField, prob: &DiffusionProblem) -> Result<f64> {
    prob.check(r)?;
    let (h, w) = prob.dim();
    let h2 = prob.spacing * prob.spacing;
    let v = &r.values;
    let mut nodes = 0.0;
    let mut faces = 0.0;
    for i in 0..h {
        for j in 0..w {
            if prob.is_interior(i, j) {
                nodes += 0.5 * prob.lambda_t * v[[i, j]] * v[[i, j]] - prob.source[[i, j]] * v[[i, j]];
            }
            // Each face once: to the right and downwards.
            for (a, b) in [(i, j + 1), (i + 1, j)] {
                if a >= h || b >= w || !(prob.is_interior(i, j) || prob.is_interior(a, b)) {
                    continue;
                }
                let df = harmonic_mean(prob.diffusion[[i, j]], prob.diffusion[[a, b]]);
                let dr = (v[[a, b]] - v[[i, j]]) / prob.spacing;
                faces += 0.5 * prob.lambda_s * df * dr * dr;
            }
        }
    }
    Ok(h2 * (nodes + faces))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub tol: f64,
    pub max_iter: usize,
    /// Jacobi relaxation factor in `(0, 1]`.
    pub damping: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: 100_000, damping: DEFAULT_DAMPING }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub field: GridField,
    /// Max-norm of the residual of `field`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn solve_steady_state(prob: &DiffusionProblem, tol: f64, max_iter: usize) -> Result<SteadyState> {
    solve_steady_state_with(prob, &SolverParams { tol, max_iter, ..Default::default() }, Execution::Sequential)
}

/// Damped Jacobi from `r = 0`. Running out of iterations is reported through
/// `converged`; a residual that grows for [`DIVERGENCE_WINDOW`] consecutive
/// sweeps is an error.
pub fn solve_steady_state_with(prob: &DiffusionProblem, params: &SolverParams, exec: Execution) -> Result<SteadyState> {
    if !(params.tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {}", params.tol)));
    }
    if !(params.damping > 0.0 && params.damping <= 1.0) {
        return Err(Error::param("damping", format!("must lie in (0, 1], got {}", params.damping)));
    }
    let (h, w) = prob.dim();
    let inv_h2 = 1.0 / (prob.spacing * prob.spacing);
    let omega = params.damping;
    let mut r = Array2::zeros((h, w));
    let max_norm = |r: &Array2<f64>| -> f64 {
        exec.map(h, |i| residual_row(r, prob, i)).iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    };
    let mut residual = max_norm(&r);
    let mut growth = 0;
    let mut iterations = 0;
    while residual > params.tol && iterations < params.max_iter {
        let rows = exec.map(h, |i| {
            let mut row = vec![0.0; w];
            if i == 0 || i + 1 == h {
                return row;
            }
            for (j, out) in row.iter_mut().enumerate().take(w - 1).skip(1) {
                let (mut diag, mut off) = (prob.lambda_t, prob.source[[i, j]]);
                for (a, b, df) in prob.faces(i, j) {
                    diag += prob.lambda_s * df * inv_h2;
                    off += prob.lambda_s * df * inv_h2 * r[[a, b]];
                }
                *out = (1.0 - omega) * r[[i, j]] + omega * off / diag;
            }
            row
        });
        r = stack_rows(rows, h, w);
        iterations += 1;
        let next = max_norm(&r);
        if !next.is_finite() {
            return Err(Error::Diverged { iterations, residual: next });
        }
        growth = if next > residual { growth + 1 } else { 0 };
        residual = next;
        if growth >= DIVERGENCE_WINDOW {
            return Err(Error::Diverged { iterations, residual });
        }
    }
    Ok(SteadyState {
        field: GridField { values: r, spacing: prob.spacing },
        residual,
        iterations,
        converged: residual <= params.tol,
    })
}

/// Problem with `D = 1` left of a one-column strip of `D = 0`, `D = 1` to the
/// right, and a unit source only on the left half.
pub fn barrier_problem(n: usize, lambda_t: f64, lambda_s: f64) -> Result<DiffusionProblem> {
    let strip = n / 2;
    let d = Array2::from_shape_fn((n, n), |(_, j)| if j == strip { 0.0 } else { 1.0 });
    let g = Array2::from_shape_fn((n, n), |(_, j)| if j < strip { 1.0 } else { 0.0 });
    DiffusionProblem::new(d, g, lambda_t, lambda_s, 1.0)
}

/// Max |r| right of the strip divided by max |r| left of it.
pub fn barrier_ratio(r: &GridField) -> f64 {
    let (_, w) = r.dim();
    let strip = w / 2;
    let side = |cols: std::ops::Range<usize>| {
        cols.flat_map(|j| r.values.column(j).to_vec()).fold(0.0, |m: f64, v| m.max(v.abs()))
    };
    let left = side(0..strip);
    let right = side(strip + 1..w);
    if left == 0.0 {
        if right == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        right / left
    }
}

/// Central-difference gradient of [`discrete_energy`] over interior nodes.
pub fn energy_gradient_fd(r: &GridField, prob: &DiffusionProblem, step: f64) -> Result<Array2<f64>> {
    let (h, w) = prob.dim();
    let mut out = Array2::zeros((h, w));
    let mut probe = r.clone();
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let orig = probe.values[[i, j]];
            probe.values[[i, j]] = orig + step;
            let plus = discrete_energy(&probe, prob)?;
            probe.values[[i, j]] = orig - step;
            let minus = discrete_energy(&probe, prob)?;
            probe.values[[i, j]] = orig;
            out[[i, j]] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(out)
}

/// Outcome of [`verification_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct PdeCheck {
    /// `max |fd - h^2 residual| / max |h^2 residual|` on a random problem.
    pub euler_lagrange_error: f64,
    pub barrier_ratio: f64,
    /// Max residual of the barrier solve.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(lambda_t, max |r|)` for increasing `lambda_t`.
    pub damping: Vec<(f64, f64)>,
}

impl PdeCheck {
    pub fn monotone_damping(&self) -> bool {
        self.damping.windows(2).all(|p| p[1].1 <= p[0].1)
    }
}

/// Random `size x size` problem from `seed`, with values inside the valid
/// ranges and a zero boundary on the field.
pub fn random_problem(size: usize, seed: u64) -> Result<(DiffusionProblem, GridField)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = Array2::from_shape_fn((size, size), |_| rng.random_range(0.0..=1.0));
    let g = Array2::from_shape_fn((size, size), |_| rng.random_range(-1.0..1.0));
    let r = Array2::from_shape_fn((size, size), |(i, j)| {
        if i == 0 || j == 0 || i + 1 == size || j + 1 == size { 0.0 } else { rng.random_range(-1.0..1.0) }
    });
    let lt = rng.random_range(0.1..2.0);
    let ls = rng.random_range(0.1..2.0);
    Ok((DiffusionProblem::new(d, g, lt, ls, 1.0)?, GridField::new(r, 1.0)?))
}

/// Euler-Lagrange identity on a random problem, the barrier solve, and the
/// damping sweep.
pub fn verification_suite(size: usize, tol: f64, seed: u64, exec: Execution) -> Result<PdeCheck> {
    let (prob, r) = random_problem(size, seed)?;
    let fd = energy_gradient_fd(&r, &prob, 1e-5)?;
    let h2 = prob.spacing * prob.spacing;
    let res = pde_residual_with(&r, &prob, exec)?.values * h2;
    let scale = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = fd.iter().zip(&res).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let params = SolverParams { tol, ..Default::default() };
    let barrier = barrier_problem(size, 0.05, 1.0)?;
    let sol = solve_steady_state_with(&barrier, &params, exec)?;
    let damping = [0.05, 0.2, 1.0, 5.0]
        .into_iter()
        .map(|lt| {
            let p = barrier_problem(size, lt, 1.0)?;
            Ok((lt, solve_steady_state_with(&p, &params, exec)?.field.max_abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PdeCheck {
        euler_lagrange_error: diff / scale.max(f64::MIN_POSITIVE),
        barrier_ratio: barrier_ratio(&sol.field),
        residual: sol.residual,
        iterations: sol.iterations,
        converged: sol.converged,
        damping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, spacing: f64) -> (DiffusionProblem, GridField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
        let g = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 { 0.0 } else { rng.random_range(-1.0..1.0) }
        });
        let lt = rng.random_range(0.1..2.0);
        let ls = rng.random_range(0.1..2.0);
        (DiffusionProblem::new(d, g, lt, ls, spacing).unwrap(), GridField::new(r, spacing).unwrap())
    }

    /// Interior-node operator and right-hand side, assembled face by face.
    fn assemble(prob: &DiffusionProblem) -> (DMatrix<f64>, DVector<f64>, Vec<(usize, usize)>) {
        let (h, w) = prob.dim();
        let nodes: Vec<(usize, usize)> = (1..h - 1).flat_map(|i| (1..w - 1).map(move |j| (i, j))).collect();
        let index = |i: usize, j: usize| nodes.iter().position(|&p| p == (i, j));
        let mut a = DMatrix::zeros(nodes.len(), nodes.len());
        let b = DVector::from_iterator(nodes.len(), nodes.iter().map(|&(i, j)| prob.source[[i, j]]));
        let s = prob.lambda_s / (prob.spacing * prob.spacing);
        for (row, &(i, j)) in nodes.iter().enumerate() {
            a[(row, row)] += prob.lambda_t;
            for (p, q) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                let df = {
                    let (x, y) = (prob.diffusion[[i, j]], prob.diffusion[[p, q]]);
                    if x + y == 0.0 { 0.0 } else { 2.0 * x * y / (x + y) }
                };
                a[(row, row)] += s * df;
                if let Some(col) = index(p, q) {
                    a[(row, col)] -= s * df;
                }
            }
        }
        (a, b, nodes)
    }

    #[test]
    fn trivial_residuals() {
        let n = 6;
        let prob = DiffusionProblem::new(Array2::from_elem((n, n), 0.7), Array2::zeros((n, n)), 1.3, 0.9, 1.0).unwrap();
        let zero = GridField::zeros(n, n, 1.0).unwrap();
        assert_eq!(pde_residual(&zero, &prob).unwrap().max_abs(), 0.0);
        let c = GridField::new(Array2::from_elem((n, n), 2.0), 1.0).unwrap();
        let res = pde_residual(&c, &prob).unwrap();
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                assert!((res.values[[i, j]] - 1.3 * 2.0).abs() < 1e-12);
            }
        }
        assert_eq!(discrete_energy(&zero, &prob).unwrap(), 0.0);
    }

    #[test]
    fn residual_matches_assembled_matrix() {
        for seed in 0..5 {
            let (prob, r) = random_problem(seed, 7, 0.5);
            let (a, b, nodes) = assemble(&prob);
            let x = DVector::from_iterator(nodes.len(), nodes.iter().map(|&(i, j)| r.values[[i, j]]));
            let want = &a * x - b;
            let got = pde_residual(&r, &prob).unwrap();
            for (k, &(i, j)) in nodes.iter().enumerate() {
                assert!((got.values[[i, j]] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solver_matches_dense_solve() {
        let n = 16;
        let prob = DiffusionProblem::new(Array2::from_elem((n, n), 1.0), Array2::from_elem((n, n), 0.5), 0.4, 1.0, 1.0).unwrap();
        let sol = solve_steady_state(&prob, 1e-10, 100_000).unwrap();
        assert!(sol.converged && sol.residual <= 1e-10);
        let (a, b, nodes) = assemble(&prob);
        let x = a.lu().solve(&b).unwrap();
        for (k, &(i, j)) in nodes.iter().enumerate() {
            assert!((sol.field.values[[i, j]] - x[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn interior_approaches_reaction_limit() {
        let n = 64;
        let (lt, g) = (1.0, 0.3);
        let prob = DiffusionProblem::new(Array2::from_elem((n, n), 1.0), Array2::from_elem((n, n), g), lt, 1.0, 1.0).unwrap();
        let sol = solve_steady_state(&prob, DEFAULT_TOL, 100_000).unwrap();
        assert!(sol.converged);
        assert!((sol.field.values[[32, 32]] - g / lt).abs() < 1e-8);
        assert!(pde_residual(&sol.field, &prob).unwrap().max_abs() <= DEFAULT_TOL);
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let n = 8;
        let prob = DiffusionProblem::new(Array2::from_elem((n, n), 0.5), Array2::zeros((n, n)), 1.0, 1.0, 1.0).unwrap();
        let sol = solve_steady_state(&prob, 1e-12, 10).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.field.max_abs(), 0.0);
    }

    #[test]
    fn energy_gradient_is_scaled_residual() {
        let (prob, r) = random_problem(11, 10, 0.7);
        let res = pde_residual(&r, &prob).unwrap();
        let h2 = prob.spacing * prob.spacing;
        let step = 1e-6;
        for i in 1..9 {
            for j in 1..9 {
                let mut plus = r.clone();
                plus.values[[i, j]] += step;
                let mut minus = r.clone();
                minus.values[[i, j]] -= step;
                let fd = (discrete_energy(&plus, &prob).unwrap() - discrete_energy(&minus, &prob).unwrap()) / (2.0 * step);
                let want = h2 * res.values[[i, j]];
                assert!((fd - want).abs() <= 1e-6 * want.abs().max(1.0), "{fd} vs {want}");
            }
        }
    }

    #[test]
    fn verification_suite_passes_at_small_size() {
        let check = verification_suite(16, 1e-9, 1, Execution::Sequential).unwrap();
        assert!(check.euler_lagrange_error <= 1e-6, "{check:?}");
        assert!(check.barrier_ratio <= 1e-6 && check.converged && check.residual <= 1e-9);
        assert!(check.monotone_damping());
    }

    #[test]
    fn barrier_blocks_diffusion() {
        let prob = barrier_problem(32, 0.05, 1.0).unwrap();
        let sol = solve_steady_state(&prob, DEFAULT_TOL, 200_000).unwrap();
        assert!(sol.converged);
        assert!(barrier_ratio(&sol.field) <= 1e-6);
    }

    #[test]
    fn stronger_reaction_damps_more() {
        let mut last = f64::INFINITY;
        for lt in [0.1, 0.5, 1.0, 4.0] {
            let prob = barrier_problem(16, lt, 1.0).unwrap();
            let m = solve_steady_state(&prob, 1e-10, 100_000).unwrap().field.max_abs();
            assert!(m <= last);
            last = m;
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let (prob, _) = random_problem(4, 20, 1.0);
        let params = SolverParams { tol: 1e-9, ..Default::default() };
        let a = solve_steady_state_with(&prob, &params, Execution::Sequential).unwrap();
        let b = solve_steady_state_with(&prob, &params, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (prob, _) = random_problem(2, 6, 1.0);
        let bad = SolverParams { damping: 1.5, ..Default::default() };
        assert!(solve_steady_state_with(&prob, &bad, Execution::Sequential).is_err());
        assert!(DiffusionProblem::new(Array2::from_elem((4, 4), 1.2), Array2::zeros((4, 4)), 1.0, 1.0, 1.0).is_err());
        assert!(DiffusionProblem::new(Array2::zeros((4, 4)), Array2::zeros((4, 4)), 0.0, 1.0, 1.0).is_err());
        assert!(DiffusionProblem::new(Array2::zeros((4, 4)), Array2::zeros((4, 5)), 1.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn energy_nonnegative_without_source(seed in 0u64..1000) {
            let (mut prob, r) = random_problem(seed, 6, 1.0);
            prob.source.fill(0.0);
            let e = discrete_energy(&r, &prob).unwrap();
            prop_assert!(e > 0.0);
        }

        #[test]
        fn steady_state_satisfies_contract(seed in 0u64..1000) {
            let (prob, _) = random_problem(seed, 8, 1.0);
            let sol = solve_steady_state(&prob, 1e-9, 100_000).unwrap();
            prop_assert!(sol.converged);
            prop_assert!(pde_residual(&sol.field, &prob).unwrap().max_abs() <= 1e-9);
        }
    }
}
