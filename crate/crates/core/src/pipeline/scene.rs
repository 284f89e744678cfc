//! Synthetic dynamic scenes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kinematics::{Trajectory, Vec3};
use crate::splat::{GaussianPrimitive, SceneSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Points on horizontal circles: smooth, low curvature.
    Orbit,
    /// Straight segments, half of which turn sharply at one frame.
    SharpTurn,
    /// Orbit paths re-indexed every frame with a varying population.
    Resample,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Orbit => "orbit",
            SceneKind::SharpTurn => "sharp_turn",
            SceneKind::Resample => "resample",
        }
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(SceneKind::Orbit),
            "sharp_turn" => Ok(SceneKind::SharpTurn),
            "resample" => Ok(SceneKind::Resample),
            other => Err(Error::UnknownSceneKind(other.to_string())),
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n: usize,
    pub frames: usize,
    pub seed: u64,
    pub channels: usize,
    /// Relative population change per frame for `resample`.
    pub resample_change: f64,
    /// Shuffle primitive order every frame for `resample`.
    pub shuffle: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { kind: SceneKind::Orbit, n: 64, frames: 8, seed: 0, channels: 1, resample_change: 0.2, shuffle: true }
    }
}

pub const SCENE_DT: f64 = 0.1;
/// Angle swept per frame on `orbit` paths (radians).
pub const ORBIT_STEP: f64 = 0.15;
pub const FOOTPRINT: f64 = 0.08;
pub const OPACITY: f64 = 0.85;

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: SceneSequence,
    /// Ground-truth paths, one per underlying point.
    pub trajectories: Vec<Trajectory>,
    /// `parents[t][i]`: the trajectory primitive `i` of frame `t` samples.
    pub parents: Vec<Vec<usize>>,
    /// Orbit radius per trajectory (`orbit` and `resample` only).
    pub radii: Vec<f64>,
    /// Frame index at which each trajectory turns (`sharp_turn` only).
    pub turns: Vec<Option<usize>>,
}

struct Paths {
    positions: Vec<Vec<Vec3>>,
    radii: Vec<f64>,
    turns: Vec<Option<usize>>,
}

fn orbit_paths(rng: &mut ChaCha8Rng, n: usize, frames: usize) -> Paths {
    let mut positions = Vec::with_capacity(n);
    let mut radii = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random_range(0.3..0.6);
        let centre = Vec3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.65..0.65), rng.random_range(-0.15..0.15));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let step = dir * ORBIT_STEP * rng.random_range(0.8..1.2);
        positions.push(
            (0..frames)
                .map(|t| {
                    let a = phase + step * t as f64;
                    centre + Vec3::new(r * a.cos(), 0.0, r * a.sin())
                })
                .collect(),
        );
        radii.push(r);
    }
    Paths { positions, radii, turns: vec![None; n] }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn sharp_turn_paths(rng: &mut ChaCha8Rng, n: usize, frames: usize) -> Paths {
    let mut positions = Vec::with_capacity(n);
    let mut turns = Vec::with_capacity(n);
    for i in 0..n {
        let speed = rng.random_range(0.04..0.08);
        let dir = random_unit(rng);
        // Every other point turns at an interior frame by 100-160 degrees.
        let turn = (i % 2 == 0 && frames >= 4).then(|| rng.random_range(2..frames - 1));
        let new_dir = {
            let axis = dir.cross(&random_unit(rng)).normalize();
            let angle = rng.random_range(100f64..160.0).to_radians();
            nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle) * dir
        };
        // Centre the path so it stays in view.
        let mut pts = Vec::with_capacity(frames);
        let mut p = Vec3::zeros();
        for t in 0..frames {
            pts.push(p);
            let d = match turn {
                Some(k) if t >= k => new_dir,
                _ => dir,
            };
            p += d * speed;
        }
        let mean = pts.iter().fold(Vec3::zeros(), |a, b| a + b) / frames as f64;
        let anchor = Vec3::new(rng.random_range(-0.35..0.35), rng.random_range(-0.5..0.5), rng.random_range(-0.35..0.35));
        positions.push(pts.into_iter().map(|q| q - mean + anchor).collect());
        turns.push(turn);
    }
    Paths { positions, radii: Vec::new(), turns }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    if spec.n < 2 {
        return Err(Error::param("n", format!("need at least 2 primitives, got {}", spec.n)));
    }
    if spec.frames < 3 {
        return Err(Error::param("frames", format!("need at least 3 frames, got {}", spec.frames)));
    }
    if spec.channels == 0 {
        return Err(Error::param("channels", "need at least one channel"));
    }
    if !(0.0..1.0).contains(&spec.resample_change) {
        return Err(Error::param("resample_change", format!("must lie in [0, 1), got {}", spec.resample_change)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = match spec.kind {
        SceneKind::Resample => (spec.n as f64 * (1.0 + spec.resample_change)).ceil() as usize,
        _ => spec.n,
    };
    let paths = match spec.kind {
        SceneKind::Orbit | SceneKind::Resample => orbit_paths(&mut rng, pool, spec.frames),
        SceneKind::SharpTurn => sharp_turn_paths(&mut rng, pool, spec.frames),
    };
    let appearance: Vec<Vec<f64>> = (0..pool).map(|_| (0..spec.channels).map(|_| rng.random_range(0.25..0.75)).collect()).collect();

    let parents: Vec<Vec<usize>> = match spec.kind {
        SceneKind::Resample => (0..spec.frames)
            .map(|_| {
                let lo = (spec.n as f64 * (1.0 - spec.resample_change)).floor() as usize;
                let hi = (spec.n as f64 * (1.0 + spec.resample_change)).ceil() as usize;
                let count = rng.random_range(lo.max(2)..=hi.min(pool));
                let mut ids: Vec<usize> = (0..pool).collect();
                ids.shuffle(&mut rng);
                ids.truncate(count);
                if !spec.shuffle {
                    ids.sort_unstable();
                }
                ids
            })
            .collect(),
        _ => vec![(0..pool).collect(); spec.frames],
    };

    let frames = parents
        .iter()
        .enumerate()
        .map(|(t, ids)| {
            ids.iter()
                .map(|&p| GaussianPrimitive::new(paths.positions[p][t], FOOTPRINT, OPACITY, appearance[p].clone()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let correspondence = match spec.kind {
        SceneKind::Resample => None,
        _ => Some((0..spec.frames).map(|t| if t == 0 { Vec::new() } else { (0..pool).collect() }).collect()),
    };
    let scene = SceneSequence::new(frames, SCENE_DT, correspondence)?;
    let trajectories = paths
        .positions
        .into_iter()
        .map(|p| Trajectory::new(p, SCENE_DT))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedScene { scene, trajectories, parents, radii: paths.radii, turns: paths.turns })
}
