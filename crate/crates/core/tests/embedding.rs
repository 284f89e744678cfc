use kinemark::kinematics::profile;
use kinemark::pipeline::experiment::embed_inputs;
use kinemark::pipeline::{generate_scene, ExperimentConfig, SceneKind, SceneSpec};
use kinemark::splat::{view_ring, GaussianPrimitive, SceneSequence, Viewpoint};
use kinemark::watermark::{embed, ConsistencyPrior, EmbedConfig, FrozenDecoder, LossWeights, WatermarkMessage};
use kinemark::Execution;
use nalgebra::Vector3;

fn grid_frame(n_side: usize, appearance: impl Fn(usize) -> f64) -> Vec<GaussianPrimitive> {
    let mut out = Vec::new();
    for r in 0..n_side {
        for c in 0..n_side {
            let x = -0.6 + 1.2 * c as f64 / (n_side - 1) as f64;
            let y = -0.6 + 1.2 * r as f64 / (n_side - 1) as f64;
            let z = 0.3 * ((r * n_side + c) as f64 * 0.7).sin();
            out.push(GaussianPrimitive::new(Vector3::new(x, y, z), 0.12, 0.85, vec![appearance(r * n_side + c)]).unwrap());
        }
    }
    out
}

fn ones(scene: &SceneSequence) -> Vec<Vec<f64>> {
    scene.frames.iter().map(|f| vec![1.0; f.len()]).collect()
}

fn small_config(kind: SceneKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scene = SceneSpec { kind, n: 16, frames: 4, seed: 0, ..Default::default() };
    cfg.view_interval = 90.0;
    cfg.max_epochs = 40;
    cfg
}

#[test]
fn zero_watermark_weight_leaves_uniform_scene_unchanged() {
    let frame = grid_frame(4, |_| 0.5);
    let scene = SceneSequence::new(vec![frame.clone(), frame.clone(), frame], 0.1, Some(vec![vec![], (0..16).collect(), (0..16).collect()])).unwrap();
    let decoder = FrozenDecoder::for_image(2, 8, 64, 64).unwrap();
    let message = WatermarkMessage::random(1, 8).unwrap();
    let views = view_ring(90.0, 64, 64, 1.0).unwrap();
    let config = EmbedConfig {
        lambdas: LossWeights { wm: 0.0, ..Default::default() },
        max_epochs: 30,
        ..Default::default()
    };
    let out = embed(&scene, &message, &decoder, &views, &ones(&scene), &ConsistencyPrior::none(&scene), &config).unwrap();
    assert_eq!(out.scene, scene);
    let first = out.trace[0].loss_total;
    assert!(out.trace.iter().all(|r| r.loss_total == first), "trace is not flat");
}

#[test]
fn zero_watermark_weight_gives_chance_accuracy() {
    for seed in 0..4 {
        let mut cfg = small_config(SceneKind::Orbit);
        cfg.bits = 48;
        cfg.lambdas.wm = 0.0;
        cfg.message_seed = 10 + seed;
        cfg.decoder_seed = 20 + seed;
        cfg.scene.seed = seed;
        let r = kinemark::pipeline::run_experiment(&cfg).unwrap();
        assert!((0.25..=0.75).contains(&r.clean_bit_acc), "seed {seed}: {}", r.clean_bit_acc);
    }
}

#[test]
fn decoder_is_unchanged_by_embedding() {
    let cfg = small_config(SceneKind::Orbit);
    let g = generate_scene(&cfg.scene).unwrap();
    let inputs = embed_inputs(&g.scene, &cfg, Execution::default()).unwrap();
    let before = inputs.decoder.clone();
    let views: Vec<Viewpoint> = inputs.supervised.iter().map(|&v| inputs.views[v]).collect();
    embed(&g.scene, &inputs.message, &inputs.decoder, &views, &inputs.gates, &inputs.prior, &inputs.config).unwrap();
    assert_eq!(inputs.decoder.weights(), before.weights());
    assert_eq!(inputs.decoder.bias(), before.bias());
}

#[test]
fn geometry_and_opacity_are_frozen() {
    let cfg = small_config(SceneKind::SharpTurn);
    let g = generate_scene(&cfg.scene).unwrap();
    let inputs = embed_inputs(&g.scene, &cfg, Execution::default()).unwrap();
    let views: Vec<Viewpoint> = inputs.supervised.iter().map(|&v| inputs.views[v]).collect();
    let out = embed(&g.scene, &inputs.message, &inputs.decoder, &views, &inputs.gates, &inputs.prior, &inputs.config).unwrap();
    for (a, b) in out.scene.frames.iter().flatten().zip(g.scene.frames.iter().flatten()) {
        assert_eq!((a.mu, a.scale, a.opacity), (b.mu, b.scale, b.opacity));
        assert!(a.appearance.iter().all(|s| (0.0..=1.0).contains(s)));
    }
}

#[test]
fn low_confidence_primitives_change_less() {
    let mut cfg = small_config(SceneKind::SharpTurn);
    cfg.scene.n = 32;
    cfg.max_epochs = 100;
    let g = generate_scene(&cfg.scene).unwrap();
    let inputs = embed_inputs(&g.scene, &cfg, Execution::default()).unwrap();
    // Raw confidence weights; the batch-normalised gates rarely pass 0.9.
    let profiles: Vec<_> = g.trajectories.iter().map(|tr| profile(tr, cfg.eps, cfg.tau).unwrap()).collect();
    let gates: Vec<Vec<f64>> = (0..g.scene.len()).map(|t| profiles.iter().map(|p| p.weight[t]).collect()).collect();
    let views: Vec<Viewpoint> = inputs.supervised.iter().map(|&v| inputs.views[v]).collect();
    let out = embed(&g.scene, &inputs.message, &inputs.decoder, &views, &gates, &inputs.prior, &inputs.config).unwrap();
    let (mut low, mut high) = (Vec::new(), Vec::new());
    for t in 0..g.scene.len() {
        for (i, &w) in gates[t].iter().enumerate() {
            let d: f64 = out.scene.frames[t][i]
                .appearance
                .iter()
                .zip(&g.scene.frames[t][i].appearance)
                .map(|(a, b)| (a - b).abs())
                .sum();
            if w < 0.1 {
                low.push(d);
            } else if w > 0.9 {
                high.push(d);
            }
        }
    }
    assert!(!low.is_empty() && !high.is_empty(), "gates: {} low, {} high", low.len(), high.len());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&low) < mean(&high), "low {} vs high {}", mean(&low), mean(&high));
}

#[test]
fn repeated_embeddings_are_identical() {
    let cfg = small_config(SceneKind::Resample);
    let g = generate_scene(&cfg.scene).unwrap();
    let run = || {
        let inputs = embed_inputs(&g.scene, &cfg, Execution::default()).unwrap();
        let views: Vec<Viewpoint> = inputs.supervised.iter().map(|&v| inputs.views[v]).collect();
        embed(&g.scene, &inputs.message, &inputs.decoder, &views, &inputs.gates, &inputs.prior, &inputs.config).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.scene, b.scene);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let frame = grid_frame(3, |i| 0.3 + 0.04 * i as f64);
    let scene = SceneSequence::new(vec![frame], 0.1, None).unwrap();
    let decoder = FrozenDecoder::for_image(2, 8, 64, 64).unwrap();
    let prior = ConsistencyPrior::none(&scene);
    let cfg = EmbedConfig::default();
    let views = view_ring(90.0, 64, 64, 1.0).unwrap();
    let short = WatermarkMessage::random(1, 4).unwrap();
    let msg = WatermarkMessage::random(1, 8).unwrap();
    assert!(embed(&scene, &short, &decoder, &views, &ones(&scene), &prior, &cfg).is_err());
    assert!(embed(&scene, &msg, &decoder, &[], &ones(&scene), &prior, &cfg).is_err());
    assert!(embed(&scene, &msg, &decoder, &views, &[vec![1.0; 2]], &prior, &cfg).is_err());
    let small = view_ring(90.0, 32, 32, 1.0).unwrap();
    assert!(embed(&scene, &msg, &decoder, &small, &ones(&scene), &prior, &cfg).is_err());
    let bad = EmbedConfig { step: 0.0, ..cfg };
    assert!(embed(&scene, &msg, &decoder, &views, &ones(&scene), &prior, &bad).is_err());
}

// 16 free values against 8 sign constraints per view.
#[test]
fn static_sixteen_primitives_reach_full_accuracy() {
    let frame = grid_frame(4, |i| 0.25 + 0.5 * ((i * 7) % 16) as f64 / 15.0);
    let scene = SceneSequence::new(vec![frame], 0.1, None).unwrap();
    let decoder = FrozenDecoder::for_image(2, 8, 64, 64).unwrap();
    let message = WatermarkMessage::random(1, 8).unwrap();
    let views = view_ring(90.0, 64, 64, 1.0).unwrap();
    let config = EmbedConfig { max_epochs: 500, ..Default::default() };
    let out = embed(&scene, &message, &decoder, &views, &ones(&scene), &ConsistencyPrior::none(&scene), &config).unwrap();
    let last = out.trace.last().unwrap();
    assert_eq!(last.min_bit_acc, 1.0, "mean {} min {} after {} epochs", last.bit_acc, last.min_bit_acc, out.epochs);
}
