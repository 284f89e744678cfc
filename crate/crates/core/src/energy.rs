//! Gated spatio-temporal consistency prior: kNN affinity graph, the
//! curvature-weighted quadratic loss, its analytic gradient, and the MAP
//! energy assembly.

use crate::error::{Error, Result};
use crate::kinematics::Vec3;

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub position: Vec3,
    pub appearance: Vec<f64>,
}

impl GaussianState {
    pub fn new(position: Vec3, appearance: Vec<f64>) -> Result<Self> {
        if position.iter().chain(&appearance).any(|v| !v.is_finite()) {
            return Err(Error::param("state", "components must be finite"));
        }
        Ok(Self { position, appearance })
    }

    /// Stacked `[x, s]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(3 + self.appearance.len());
        z.extend(self.position.iter());
        z.extend(&self.appearance);
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub beta: Vec<Vec<f64>>,
}

impl NeighborGraph {
    /// Graph with no edges on `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self { neighbors: vec![Vec::new(); n], beta: vec![Vec::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Indices of the `k` nearest other points to each point, ties by lower index.
fn nearest(positions: &[Vec3], k: usize) -> Vec<Vec<(usize, f64)>> {
    positions
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut d: Vec<(usize, f64)> = positions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, xj)| (j, (xi - xj).norm_squared()))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            d
        })
        .collect()
}

/// Median distance over all kNN edges; 1.0 when every edge has zero length.
pub fn median_neighbor_distance(positions: &[Vec3], k: usize) -> Result<f64> {
    let n = positions.len();
    if k == 0 || n <= k {
        return Err(Error::TooFewPoints { n, k });
    }
    let mut d: Vec<f64> = nearest(positions, k)
        .into_iter()
        .flatten()
        .map(|(_, d2)| d2.sqrt())
        .collect();
    d.sort_by(|a, b| a.total_cmp(b));
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    Ok(if med > 0.0 { med } else { 1.0 })
}

pub fn knn_graph(positions: &[Vec3], k: usize, sigma_s: f64) -> Result<NeighborGraph> {
    let n = positions.len();
    if k == 0 || n <= k {
        return Err(Error::TooFewPoints { n, k });
    }
    if !(sigma_s > 0.0) {
        return Err(Error::param("sigma_s", format!("must be positive, got {sigma_s}")));
    }
    let two_s2 = 2.0 * sigma_s * sigma_s;
    let (neighbors, beta) = nearest(positions, k)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(j, d2)| (j, (-d2 / two_s2).exp()))
                .unzip::<_, _, Vec<usize>, Vec<f64>>()
        })
        .unzip();
    Ok(NeighborGraph { neighbors, beta })
}

/// Which halves of the consistency loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsistencyTerms {
    pub temporal: bool,
    pub spatial: bool,
}

impl Default for ConsistencyTerms {
    fn default() -> Self {
        Self { temporal: true, spatial: true }
    }
}

fn check_lengths(z: &[Vec<f64>], z_hat: Option<&[Vec<f64>]>, graph: &NeighborGraph, w: &[f64]) -> Result<()> {
    let n = z.len();
    let mismatch = |context, actual| Err(Error::LengthMismatch { context, expected: n, actual });
    if let Some(z_hat) = z_hat {
        if z_hat.len() != n {
            return mismatch("consistency aligned states", z_hat.len());
        }
        for (a, b) in z.iter().zip(z_hat) {
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    context: "consistency state dimension",
                    expected: a.len(),
                    actual: b.len(),
                });
            }
        }
    }
    if graph.len() != n {
        return mismatch("consistency graph", graph.len());
    }
    if w.len() != n {
        return mismatch("consistency weights", w.len());
    }
    for (nb, b) in graph.neighbors.iter().zip(&graph.beta) {
        if nb.len() != b.len() {
            return Err(Error::LengthMismatch { context: "graph beta", expected: nb.len(), actual: b.len() });
        }
        if let Some(&j) = nb.iter().find(|&&j| j >= n) {
            return Err(Error::param("graph", format!("neighbour index {j} out of range for {n} nodes")));
        }
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `sum_i w_i (|z_i - z_hat_i|^2 + sum_j beta_ij |z_i - z_j|^2)`.
pub fn gated_consistency_loss(z: &[Vec<f64>], z_hat: &[Vec<f64>], graph: &NeighborGraph, w: &[f64]) -> Result<f64> {
    consistency_loss_terms(z, Some(z_hat), graph, w, ConsistencyTerms::default())
}

/// Loss with individually switchable halves. `z_hat = None` drops the
/// temporal half regardless of `terms`.
pub fn consistency_loss_terms(
    z: &[Vec<f64>],
    z_hat: Option<&[Vec<f64>]>,
    graph: &NeighborGraph,
    w: &[f64],
    terms: ConsistencyTerms,
) -> Result<f64> {
    check_lengths(z, z_hat, graph, w)?;
    let mut total = 0.0;
    for i in 0..z.len() {
        let mut own = 0.0;
        if let (true, Some(z_hat)) = (terms.temporal, z_hat) {
            own += sq_dist(&z[i], &z_hat[i]);
        }
        if terms.spatial {
            for (&j, &b) in graph.neighbors[i].iter().zip(&graph.beta[i]) {
                own += b * sq_dist(&z[i], &z[j]);
            }
        }
        total += w[i] * own;
    }
    Ok(total)
}

pub fn consistency_gradient(
    z: &[Vec<f64>],
    z_hat: &[Vec<f64>],
    graph: &NeighborGraph,
    w: &[f64],
) -> Result<Vec<Vec<f64>>> {
    consistency_gradient_terms(z, Some(z_hat), graph, w, ConsistencyTerms::default())
}

/// Gradient with respect to `z`, holding `z_hat` and `w` fixed. Each edge
/// i -> j contributes to both endpoints. Accumulation runs in node order.
pub fn consistency_gradient_terms(
    z: &[Vec<f64>],
    z_hat: Option<&[Vec<f64>]>,
    graph: &NeighborGraph,
    w: &[f64],
    terms: ConsistencyTerms,
) -> Result<Vec<Vec<f64>>> {
    check_lengths(z, z_hat, graph, w)?;
    let mut grad: Vec<Vec<f64>> = z.iter().map(|zi| vec![0.0; zi.len()]).collect();
    for i in 0..z.len() {
        if w[i] == 0.0 {
            continue;
        }
        if let (true, Some(z_hat)) = (terms.temporal, z_hat) {
            for (g, (a, b)) in grad[i].iter_mut().zip(z[i].iter().zip(&z_hat[i])) {
                *g += 2.0 * w[i] * (a - b);
            }
        }
        if terms.spatial {
            for (&j, &b) in graph.neighbors[i].iter().zip(&graph.beta[i]) {
                let c = 2.0 * w[i] * b;
                for d in 0..z[i].len() {
                    let diff = z[i][d] - z[j][d];
                    grad[i][d] += c * diff;
                    grad[j][d] -= c * diff;
                }
            }
        }
    }
    Ok(grad)
}

/// `data_loss + lambda_con * consistency`.
pub fn map_energy(data_loss: f64, lambda_con: f64, consistency: f64) -> Result<f64> {
    if !(lambda_con >= 0.0) {
        return Err(Error::param("lambda_con", format!("must be non-negative, got {lambda_con}")));
    }
    Ok(data_loss + lambda_con * consistency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, NeighborGraph, Vec<f64>) {
        let pos: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let graph = knn_graph(&pos, k, 0.5).unwrap();
        let z = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let zh = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w = (0..n).map(|_| rng.random()).collect();
        (z, zh, graph, w)
    }

    #[test]
    fn knn_examples() {
        let pts = [Vec3::new(0., 0., 0.), Vec3::new(1., 0., 0.), Vec3::new(2., 0., 0.)];
        let g = knn_graph(&pts, 1, 1.0).unwrap();
        assert_eq!(g.neighbors[1], vec![0]);

        let same = [Vec3::zeros(); 3];
        let g = knn_graph(&same, 2, 1.0).unwrap();
        assert!(g.beta.iter().flatten().all(|b| *b == 1.0));

        assert!(matches!(knn_graph(&pts, 3, 1.0), Err(Error::TooFewPoints { n: 3, k: 3 })));
    }

    #[test]
    fn knn_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts: Vec<Vec3> = (0..10).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let g = knn_graph(&pts, 3, 1.0).unwrap();
        for i in 0..10 {
            let mut all: Vec<(f64, usize)> = (0..10)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = ((pts[i].x - pts[j].x).powi(2) + (pts[i].y - pts[j].y).powi(2) + (pts[i].z - pts[j].z).powi(2)).sqrt();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = all[..3].iter().map(|p| p.1).collect();
            assert_eq!(g.neighbors[i], want);
            assert!(!g.neighbors[i].contains(&i));
        }
    }

    #[test]
    fn loss_examples() {
        let z = vec![vec![1.0, 2.0]; 3];
        let g = NeighborGraph { neighbors: vec![vec![1], vec![2], vec![0]], beta: vec![vec![0.3]; 3] };
        assert_eq!(gated_consistency_loss(&z, &z, &g, &[1.0; 3]).unwrap(), 0.0);

        let single = NeighborGraph::empty(1);
        let loss = gated_consistency_loss(&[vec![1.0, 0.0]], &[vec![0.0, 0.0]], &single, &[1.0]).unwrap();
        assert_eq!(loss, 1.0);

        let pair = NeighborGraph { neighbors: vec![vec![1], vec![0]], beta: vec![vec![0.5], vec![0.5]] };
        let z = vec![vec![0.0], vec![2.0]];
        assert_eq!(gated_consistency_loss(&z, &z, &pair, &[1.0, 1.0]).unwrap(), 4.0);

        assert!(matches!(
            gated_consistency_loss(&z, &z, &pair, &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let pair = NeighborGraph { neighbors: vec![vec![1], vec![0]], beta: vec![vec![0.5], vec![0.5]] };
        let z = vec![vec![1.0], vec![1.0]];
        let g = consistency_gradient(&z, &z, &pair, &[1.0, 1.0]).unwrap();
        assert_eq!(g, vec![vec![0.0], vec![0.0]]);

        let single = NeighborGraph::empty(1);
        let g = consistency_gradient(&[vec![0.3, -0.2]], &[vec![0.0, 0.0]], &single, &[0.7]).unwrap();
        assert!((g[0][0] - 2.0 * 0.7 * 0.3).abs() < 1e-15);
        assert!((g[0][1] + 2.0 * 0.7 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let (z, zh, g, w) = random_instance(&mut rng, 5, 4, 2);
            let grad = consistency_gradient(&z, &zh, &g, &w).unwrap();
            let h = 1e-6;
            for i in 0..5 {
                for d in 0..4 {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[i][d] += h;
                    zm[i][d] -= h;
                    let fd = (gated_consistency_loss(&zp, &zh, &g, &w).unwrap()
                        - gated_consistency_loss(&zm, &zh, &g, &w).unwrap())
                        / (2.0 * h);
                    let scale = grad[i][d].abs().max(fd.abs()).max(1e-8);
                    assert!((grad[i][d] - fd).abs() / scale <= 1e-5, "{} vs {fd}", grad[i][d]);
                }
            }
        }
    }

    #[test]
    fn zero_weight_removes_own_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut z, zh, g, mut w) = random_instance(&mut rng, 6, 2, 2);
        let i = 2;
        w[i] = 0.0;
        let expected = |z: &[Vec<f64>]| -> f64 {
            let mut total = 0.0;
            for a in 0..z.len() {
                if a == i {
                    continue;
                }
                let mut own = sq_dist(&z[a], &zh[a]);
                for (&j, &b) in g.neighbors[a].iter().zip(&g.beta[a]) {
                    own += b * sq_dist(&z[a], &z[j]);
                }
                total += w[a] * own;
            }
            total
        };
        let base = gated_consistency_loss(&z, &zh, &g, &w).unwrap();
        assert!((base - expected(&z)).abs() < 1e-12);
        z[i][0] += 0.37;
        let moved = gated_consistency_loss(&z, &zh, &g, &w).unwrap();
        assert!((moved - expected(&z)).abs() < 1e-12);
        let referenced = (0..6).any(|a| a != i && w[a] > 0.0 && g.neighbors[a].contains(&i));
        if !referenced {
            assert!((moved - base).abs() < 1e-12);
        }
    }

    #[test]
    fn term_toggles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (z, zh, g, w) = random_instance(&mut rng, 6, 2, 2);
        let both = consistency_loss_terms(&z, Some(&zh), &g, &w, ConsistencyTerms::default()).unwrap();
        let t = consistency_loss_terms(&z, Some(&zh), &g, &w, ConsistencyTerms { temporal: true, spatial: false }).unwrap();
        let s = consistency_loss_terms(&z, Some(&zh), &g, &w, ConsistencyTerms { temporal: false, spatial: true }).unwrap();
        assert!((both - t - s).abs() < 1e-12);
        assert_eq!(consistency_loss_terms(&z, None, &g, &w, ConsistencyTerms::default()).unwrap(), s);
    }

    #[test]
    fn map_energy_examples() {
        assert_eq!(map_energy(2.0, 0.0, 9.0).unwrap(), 2.0);
        assert_eq!(map_energy(0.0, 1.0, 4.0).unwrap(), 4.0);
        assert_eq!(map_energy(2.0, 0.5, 4.0).unwrap(), 4.0);
        assert!(map_energy(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn state_stacking() {
        let s = GaussianState::new(Vec3::new(1., 2., 3.), vec![0.5]).unwrap();
        assert_eq!(s.to_vec(), vec![1., 2., 3., 0.5]);
        assert!(GaussianState::new(Vec3::new(f64::NAN, 0., 0.), vec![]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn loss_is_nonnegative(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (z, zh, g, w) = random_instance(&mut rng, 7, 3, 3);
            prop_assert!(gated_consistency_loss(&z, &zh, &g, &w).unwrap() >= 0.0);
        }

        #[test]
        fn spatial_term_translation_invariant(seed in 0u64..10_000, shift in -5.0..5.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (z, _, g, w) = random_instance(&mut rng, 7, 3, 3);
            let spatial = ConsistencyTerms { temporal: false, spatial: true };
            let a = consistency_loss_terms(&z, None, &g, &w, spatial).unwrap();
            let zs: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| x + shift).collect()).collect();
            let b = consistency_loss_terms(&zs, None, &g, &w, spatial).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn beta_in_unit_interval(seed in 0u64..10_000, sigma in 0.05..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..9).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
            let g = knn_graph(&pts, 4, sigma).unwrap();
            for (i, (nb, b)) in g.neighbors.iter().zip(&g.beta).enumerate() {
                prop_assert!(!nb.contains(&i));
                prop_assert!(b.iter().all(|x| *x > 0.0 && *x <= 1.0));
            }
        }
    }
}
