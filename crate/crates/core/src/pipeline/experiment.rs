//! End-to-end runs: generate, align, gate, embed, render, attack, decode.

use std::path::Path;

use ndarray::Array2;

use crate::attacks::{apply_attack, bit_accuracy, default_suite, parse_suite, AttackKind, AttackSpec};
use crate::energy::{knn_graph, median_neighbor_distance, ConsistencyTerms, NeighborGraph};
use crate::error::{Error, Result, StageExt};
use crate::exec::Execution;
use crate::kinematics::{normalize_weights, profile, Trajectory, Vec3};
use crate::splat::{render_with, view_ring, Image, SceneSequence, Viewpoint};
use crate::transport::{row_stochastic, FrameAlignment};
use crate::watermark::{decode_image, embed, ConsistencyPrior, EmbedConfig, FrozenDecoder, TemporalLink, TraceRow, WatermarkMessage};

use super::config::{ExperimentConfig, SuiteSource};
use super::scene::generate_scene;

/// Frame-to-previous-frame links for every frame (`None` at `t = 0`): the
/// scene's own correspondence when it has one, transport alignment otherwise.
pub fn temporal_links(scene: &SceneSequence, cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<Option<TemporalLink>>> {
    let mut links = vec![None];
    for t in 1..scene.len() {
        let link = match &scene.correspondence {
            Some(corr) => TemporalLink::Correspondence(corr[t].clone()),
            None => TemporalLink::Transport(FrameAlignment::compute(
                &scene.positions(t),
                &scene.positions(t - 1),
                cfg.ot_reg,
                cfg.ot_max_iter,
                cfg.ot_tol,
                cfg.ot_subsample,
                cfg.ot_seed.wrapping_add(t as u64),
                exec,
            )?),
        };
        links.push(Some(link));
    }
    Ok(links)
}

/// Row-stochastic map from frame `t` (rows) to frame `t - 1` (columns).
fn backward_matrix(link: &TemporalLink, n_cur: usize, n_prev: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((n_cur, n_prev));
    match link {
        TemporalLink::Correspondence(idx) => {
            for (i, &j) in idx.iter().enumerate() {
                m[[i, j]] = 1.0;
            }
        }
        TemporalLink::Transport(a) => {
            let rows = row_stochastic(&a.plan)?;
            for (c, &j) in a.kept.iter().enumerate() {
                m.column_mut(j).assign(&rows.column(c));
            }
        }
    }
    Ok(m)
}

/// Mass-weighted positions `D X / rowsum(D)`; rows without mass keep `fallback`.
fn carry(d: &Array2<f64>, positions: &[Vec3], fallback: &[Vec3]) -> Vec<Vec3> {
    d.rows()
        .into_iter()
        .zip(fallback)
        .map(|(row, &fb)| {
            let mass = row.sum();
            if mass > 1e-12 {
                row.iter().zip(positions).fold(Vec3::zeros(), |acc, (&w, p)| acc + p * w) / mass
            } else {
                fb
            }
        })
        .collect()
}

/// For each primitive of each frame, a full-length path through the
/// sequence, chained through the links. Backward steps follow the
/// row-stochastic maps; forward steps follow their column-normalised
/// transposes. A primitive nobody maps onto keeps its last position.
pub fn primitive_paths(scene: &SceneSequence, links: &[Option<TemporalLink>]) -> Result<Vec<Vec<Vec<Vec3>>>> {
    let frames = scene.len();
    let positions: Vec<Vec<Vec3>> = (0..frames).map(|t| scene.positions(t)).collect();
    let mut back = vec![Array2::zeros((0, 0))];
    for t in 1..frames {
        let link = links[t].as_ref().ok_or_else(|| Error::param("links", format!("frame {t} has no link")))?;
        back.push(backward_matrix(link, positions[t].len(), positions[t - 1].len())?);
    }
    // forward[t]: frame t (rows) to frame t + 1 (columns).
    let forward: Vec<Array2<f64>> = (0..frames.saturating_sub(1))
        .map(|t| {
            let mut f = back[t + 1].t().to_owned();
            for mut row in f.rows_mut() {
                let s = row.sum();
                if s > 0.0 {
                    row /= s;
                }
            }
            f
        })
        .collect();

    let mut paths = Vec::with_capacity(frames);
    for t in 0..frames {
        let n = positions[t].len();
        let mut per_frame: Vec<Vec<Vec3>> = vec![Vec::with_capacity(frames); n];
        let mut cols: Vec<Vec<Vec3>> = vec![Vec::new(); frames];
        cols[t] = positions[t].clone();
        let mut d = Array2::eye(n);
        for s in (0..t).rev() {
            d = d.dot(&back[s + 1]);
            cols[s] = carry(&d, &positions[s], &cols[s + 1]);
        }
        let mut d = Array2::eye(n);
        for s in t + 1..frames {
            d = d.dot(&forward[s - 1]);
            cols[s] = carry(&d, &positions[s], &cols[s - 1]);
        }
        for col in &cols {
            for (i, p) in col.iter().enumerate() {
                per_frame[i].push(*p);
            }
        }
        paths.push(per_frame);
    }
    Ok(paths)
}

/// Routing weights per frame and primitive. With `curvature` off every weight
/// is 1; otherwise raw weights `exp(-kappa / tau)` are normalised over the
/// whole (frame, primitive) batch.
pub fn gate_weights(scene: &SceneSequence, links: &[Option<TemporalLink>], cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    if !cfg.curvature {
        return Ok(scene.frames.iter().map(|f| vec![1.0; f.len()]).collect());
    }
    let paths = primitive_paths(scene, links)?;
    let mut raw = Vec::new();
    for (t, frame) in paths.into_iter().enumerate() {
        for path in frame {
            let p = profile(&Trajectory::new(path, scene.dt)?, cfg.eps, cfg.tau)?;
            raw.push(p.weight[t]);
        }
    }
    let norm = normalize_weights(&raw)?;
    let mut out = Vec::with_capacity(scene.len());
    let mut offset = 0;
    for f in &scene.frames {
        out.push(norm[offset..offset + f.len()].to_vec());
        offset += f.len();
    }
    Ok(out)
}

pub fn neighbor_graphs(scene: &SceneSequence, cfg: &ExperimentConfig) -> Result<Vec<NeighborGraph>> {
    (0..scene.len())
        .map(|t| {
            let pos = scene.positions(t);
            if !cfg.spatial {
                return Ok(NeighborGraph::empty(pos.len()));
            }
            let k = cfg.k_neighbors.min(pos.len() - 1);
            let sigma = match cfg.sigma_s {
                Some(s) => s,
                None => median_neighbor_distance(&pos, k)?,
            };
            knn_graph(&pos, k, sigma)
        })
        .collect()
}

/// Everything `embed` needs besides the scene itself.
#[derive(Debug, Clone)]
pub struct EmbedInputs {
    pub message: WatermarkMessage,
    pub decoder: FrozenDecoder,
    pub views: Vec<Viewpoint>,
    pub supervised: Vec<usize>,
    pub heldout: Vec<usize>,
    pub gates: Vec<Vec<f64>>,
    pub prior: ConsistencyPrior,
    pub config: EmbedConfig,
}

pub fn embed_inputs(scene: &SceneSequence, cfg: &ExperimentConfig, exec: Execution) -> Result<EmbedInputs> {
    cfg.validate().stage("config")?;
    let message = cfg.resolve_message().stage("config")?;
    let decoder = FrozenDecoder::for_image(cfg.decoder_seed, cfg.bits, cfg.image_size, cfg.image_size).stage("decoder")?;
    let views = view_ring(cfg.view_interval, cfg.image_size, cfg.image_size, cfg.extent).stage("views")?;
    let (supervised, heldout): (Vec<usize>, Vec<usize>) = if cfg.holdout_views {
        (0..views.len()).partition(|v| v % 2 == 0)
    } else {
        ((0..views.len()).collect(), Vec::new())
    };
    let links = temporal_links(scene, cfg, exec).stage("alignment")?;
    let gates = gate_weights(scene, &links, cfg).stage("kinematics")?;
    let graphs = neighbor_graphs(scene, cfg).stage("graph")?;
    let prior = ConsistencyPrior {
        graphs,
        links: if cfg.temporal { links } else { vec![None; scene.len()] },
        terms: ConsistencyTerms { temporal: cfg.temporal, spatial: cfg.spatial },
    };
    let config = EmbedConfig {
        lambdas: cfg.lambdas,
        step: cfg.step,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        double_gate: cfg.double_gate,
        exec,
        ..Default::default()
    };
    Ok(EmbedInputs { message, decoder, views, supervised, heldout, gates, prior, config })
}

pub fn resolve_suite(cfg: &ExperimentConfig) -> Result<Vec<AttackSpec>> {
    match &cfg.attack_suite {
        SuiteSource::Default => Ok(default_suite(cfg.attack_seed)),
        SuiteSource::File(path) => parse_suite(&std::fs::read_to_string(path)?, path),
    }
}

/// `10 log10(1 / MSE)` with peak 1; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let ((ka, ha, wa), (kb, hb, wb)) = (a.dim(), b.dim());
    if ka != kb {
        return Err(Error::LengthMismatch { context: "psnr channels", expected: ka, actual: kb });
    }
    if (ha, wa) != (hb, wb) {
        return Err(Error::ShapeMismatch { context: "psnr", expected: (ha, wa), actual: (hb, wb) });
    }
    Ok(psnr_from_mse(mse(a, b)))
}

fn mse(a: &Image, b: &Image) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean over views and adjacent frame pairs of the per-pixel squared change.
/// `renders[view][t]`.
pub fn temporal_energy(renders: &[Vec<Image>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for seq in renders {
        for pair in seq.windows(2) {
            total += mse(&pair[1], &pair[0]);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Flicker added by watermarking: temporal energy of the watermarked renders
/// minus that of the pristine renders.
pub fn flicker(watermarked: &[Vec<Image>], pristine: &[Vec<Image>]) -> f64 {
    temporal_energy(watermarked) - temporal_energy(pristine)
}

/// `renders[view][t]` of every frame.
pub fn render_all(scene: &SceneSequence, views: &[Viewpoint], exec: Execution) -> Vec<Vec<Image>> {
    let pairs: Vec<(usize, usize)> = (0..views.len()).flat_map(|v| (0..scene.len()).map(move |t| (v, t))).collect();
    let flat = exec.map(pairs.len(), |i| {
        let (v, t) = pairs[i];
        render_with(&scene.frames[t], &views[v], Execution::Sequential)
    });
    let mut it = flat.into_iter();
    views.iter().map(|_| it.by_ref().take(scene.len()).collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRow {
    /// `all`, `supervised` or `heldout`.
    pub split: &'static str,
    pub spec: AttackSpec,
    pub mean_bit_acc: f64,
    pub min_bit_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub message: WatermarkMessage,
    pub clean_bit_acc: f64,
    pub clean_min_bit_acc: f64,
    /// Clean accuracy over held-out views, when views are held out.
    pub heldout_bit_acc: Option<f64>,
    pub heldout_min_bit_acc: Option<f64>,
    /// Per view, clean accuracy averaged over frames.
    pub view_bit_acc: Vec<f64>,
    pub psnr: f64,
    pub flicker: f64,
    pub epochs: usize,
    pub converged: bool,
    pub attacks: Vec<AttackRow>,
    pub trace: Vec<TraceRow>,
    pub watermarked: SceneSequence,
}

impl ExperimentReport {
    /// Mean over attack rows of the split covering supervised views.
    pub fn mean_attacked_bit_acc(&self) -> f64 {
        let rows: Vec<f64> = self.attacks.iter().filter(|r| r.split != "heldout").map(|r| r.mean_bit_acc).collect();
        rows.iter().sum::<f64>() / rows.len().max(1) as f64
    }
}

fn mean_min(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut sum, mut min, mut n) = (0.0, f64::INFINITY, 0usize);
    for v in values {
        sum += v;
        min = min.min(v);
        n += 1;
    }
    if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (sum / n as f64, min)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, Execution::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport> {
    let generated = generate_scene(&cfg.scene).stage("scene")?;
    run_on_scene(&generated.scene, cfg, exec)
}

/// Runs everything after scene generation on a given scene.
pub fn run_on_scene(scene: &SceneSequence, cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport> {
    let inputs = embed_inputs(scene, cfg, exec)?;
    let suite = resolve_suite(cfg).stage("attack suite")?;
    let train_views: Vec<Viewpoint> = inputs.supervised.iter().map(|&v| inputs.views[v]).collect();
    let outcome = embed(scene, &inputs.message, &inputs.decoder, &train_views, &inputs.gates, &inputs.prior, &inputs.config)
        .stage("embed")?;

    let pristine = render_all(scene, &inputs.views, exec);
    let marked = render_all(&outcome.scene, &inputs.views, exec);
    let frames = scene.len();
    let images: Vec<(usize, usize)> = (0..inputs.views.len()).flat_map(|v| (0..frames).map(move |t| (v, t))).collect();

    let bits = inputs.message.bits();
    let clean = exec
        .try_map(images.len(), |i| {
            let (v, t) = images[i];
            bit_accuracy(&decode_image(&marked[v][t], &inputs.decoder)?, bits)
        })
        .stage("decode")?;
    let total_mse: f64 = images.iter().map(|&(v, t)| mse(&marked[v][t], &pristine[v][t])).sum::<f64>() / images.len() as f64;

    let is_heldout = |v: usize| inputs.heldout.contains(&v);
    let splits: Vec<(&'static str, Vec<usize>)> = if inputs.heldout.is_empty() {
        vec![("all", (0..images.len()).collect())]
    } else {
        vec![
            ("supervised", (0..images.len()).filter(|&i| !is_heldout(images[i].0)).collect()),
            ("heldout", (0..images.len()).filter(|&i| is_heldout(images[i].0)).collect()),
        ]
    };

    let jobs: Vec<(usize, usize)> = (0..suite.len()).flat_map(|a| (0..images.len()).map(move |i| (a, i))).collect();
    let attacked = exec
        .try_map(jobs.len(), |j| {
            let (a, i) = jobs[j];
            let (v, t) = images[i];
            let spec = suite[a].for_image(i as u64);
            let img = if spec.kind == AttackKind::None { marked[v][t].clone() } else { apply_attack(&marked[v][t], &spec)? };
            bit_accuracy(&decode_image(&img, &inputs.decoder)?, bits)
        })
        .stage("attack")?;
    let mut attacks = Vec::new();
    for (split, members) in &splits {
        for (a, spec) in suite.iter().enumerate() {
            let (mean, min) = mean_min(members.iter().map(|&i| attacked[a * images.len() + i]));
            attacks.push(AttackRow { split, spec: *spec, mean_bit_acc: mean, min_bit_acc: min });
        }
    }

    let supervised_idx: Vec<usize> = (0..images.len()).filter(|&i| !is_heldout(images[i].0)).collect();
    let (clean_mean, clean_min) = mean_min(supervised_idx.iter().map(|&i| clean[i]));
    let (held_mean, held_min) = if inputs.heldout.is_empty() {
        (None, None)
    } else {
        let (m, n) = mean_min((0..images.len()).filter(|&i| is_heldout(images[i].0)).map(|i| clean[i]));
        (Some(m), Some(n))
    };
    let view_bit_acc = (0..inputs.views.len()).map(|v| clean[v * frames..(v + 1) * frames].iter().sum::<f64>() / frames as f64).collect();

    Ok(ExperimentReport {
        config: cfg.clone(),
        message: inputs.message,
        clean_bit_acc: clean_mean,
        clean_min_bit_acc: clean_min,
        heldout_bit_acc: held_mean,
        heldout_min_bit_acc: held_min,
        view_bit_acc,
        psnr: psnr_from_mse(total_mse),
        flicker: flicker(&marked, &pristine),
        epochs: outcome.epochs,
        converged: outcome.converged,
        attacks,
        trace: outcome.trace,
        watermarked: outcome.scene,
    })
}

/// The full configuration and its three single-term ablations.
pub fn ablation_variants(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let base = ExperimentConfig { temporal: true, spatial: true, curvature: true, ..cfg.clone() };
    vec![
        base.clone(),
        ExperimentConfig { temporal: false, ..base.clone() },
        ExperimentConfig { spatial: false, ..base.clone() },
        ExperimentConfig { curvature: false, ..base },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub clean_bit_acc: f64,
    pub mean_attacked_bit_acc: f64,
    pub psnr: f64,
    pub flicker: f64,
    pub epochs: usize,
}

/// Runs every ablation variant for each scene seed.
pub fn run_ablation(cfg: &ExperimentConfig, seeds: &[u64], exec: Execution) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for variant in ablation_variants(cfg) {
            let mut v = variant;
            v.scene.seed = seed;
            let r = run_experiment_with(&v, exec)?;
            rows.push(AblationRow {
                variant: v.variant(),
                seed,
                clean_bit_acc: r.clean_bit_acc,
                mean_attacked_bit_acc: r.mean_attacked_bit_acc(),
                psnr: r.psnr,
                flicker: r.flicker,
                epochs: r.epochs,
            });
        }
    }
    Ok(rows)
}

/// Loads a config file, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::scene::{SceneKind, SceneSpec};
    use ndarray::Array3;

    #[test]
    fn psnr_examples() {
        let a = Array3::from_elem((1, 4, 4), 0.3);
        let b = Array3::from_elem((1, 4, 4), 0.4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Array3::zeros((1, 4, 5))).is_err());
        assert!(psnr(&a, &Array3::zeros((2, 4, 4))).is_err());
    }

    #[test]
    fn known_correspondence_paths_are_the_trajectories() {
        let cfg = ExperimentConfig { scene: SceneSpec { kind: SceneKind::SharpTurn, n: 8, frames: 6, seed: 2, ..Default::default() }, ..Default::default() };
        let g = generate_scene(&cfg.scene).unwrap();
        let links = temporal_links(&g.scene, &cfg, Execution::Sequential).unwrap();
        let paths = primitive_paths(&g.scene, &links).unwrap();
        for (t, frame) in paths.iter().enumerate() {
            for (i, path) in frame.iter().enumerate() {
                let truth = g.trajectories[g.parents[t][i]].positions();
                for (p, q) in path.iter().zip(truth) {
                    assert!((p - q).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transport_paths_track_resampled_points() {
        let spec = SceneSpec { kind: SceneKind::Resample, n: 24, frames: 5, seed: 4, resample_change: 0.0, ..Default::default() };
        let cfg = ExperimentConfig { scene: spec, ot_reg: Some(1e-4), ot_max_iter: 20_000, ..Default::default() };
        let g = generate_scene(&spec).unwrap();
        let links = temporal_links(&g.scene, &cfg, Execution::Sequential).unwrap();
        let paths = primitive_paths(&g.scene, &links).unwrap();
        let mut err = 0.0;
        let mut count = 0;
        for (t, frame) in paths.iter().enumerate() {
            for (i, path) in frame.iter().enumerate() {
                let truth = g.trajectories[g.parents[t][i]].positions();
                for (p, q) in path.iter().zip(truth) {
                    err += (p - q).norm();
                    count += 1;
                }
            }
        }
        assert!(err / (count as f64) < 0.02, "mean path error {}", err / count as f64);
    }

    #[test]
    fn gates_shield_turns() {
        let cfg = ExperimentConfig { scene: SceneSpec { kind: SceneKind::SharpTurn, n: 16, frames: 8, seed: 5, ..Default::default() }, ..Default::default() };
        let g = generate_scene(&cfg.scene).unwrap();
        let links = temporal_links(&g.scene, &cfg, Execution::Sequential).unwrap();
        let gates = gate_weights(&g.scene, &links, &cfg).unwrap();
        for (i, turn) in g.turns.iter().enumerate() {
            if let Some(k) = turn {
                let straight = gates[k + 1][i + 1];
                assert!(gates[k + 1][i] < straight, "turning point {i} at {k}");
            }
        }
        let flat = gate_weights(&g.scene, &links, &ExperimentConfig { curvature: false, ..cfg }).unwrap();
        assert!(flat.iter().flatten().all(|&w| w == 1.0));
    }

    #[test]
    fn ablation_variants_are_named() {
        let names: Vec<&str> = ablation_variants(&ExperimentConfig::default()).iter().map(|c| c.variant()).collect();
        assert_eq!(names, ["full", "no_temporal", "no_spatial", "no_curvature"]);
    }

    #[test]
    fn flicker_of_identical_renders_is_zero() {
        let seq = vec![vec![Array3::zeros((1, 2, 2)), Array3::from_elem((1, 2, 2), 0.5)]];
        assert_eq!(flicker(&seq, &seq), 0.0);
        assert!((temporal_energy(&seq) - 0.25).abs() < 1e-15);
    }
}
