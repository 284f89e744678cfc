//! Gradient-descent embedding of a message into primitive appearance.
//!
//! Geometry and opacity are frozen, so every render is linear in appearance
//! and its Jacobian is built once per (frame, view). Each epoch evaluates
//! every supervised image, routes the watermark gradients through the gate
//! weights, and takes one clamped descent step.

use crate::attacks::bit_accuracy;
use crate::energy::{consistency_gradient_terms, consistency_loss_terms, ConsistencyTerms, NeighborGraph};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kinematics::logistic;
use crate::splat::{render_appearance_jacobian_with, AppearanceJacobian, Image, SceneSequence, Viewpoint};
use crate::transport::FrameAlignment;

use ndarray::Axis;

use super::decoder::{image_logits, image_logits_adjoint, FrozenDecoder, DECODER_LEVELS};
use super::dwt::{dwt_forward, dwt_inverse, WaveletPyramid};
use super::loss::{
    message_loss, message_loss_logit_grad, reconstruction_grad, reconstruction_loss, total_loss,
    wavelet_subband_grad, wavelet_subband_loss, LossComponents, LossWeights,
};
use super::routing::routed_gradient;
use super::WatermarkMessage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    pub lambdas: LossWeights,
    pub step: f64,
    pub max_epochs: usize,
    /// Consecutive perfect epochs required before stopping.
    pub patience: usize,
    pub wavelet_levels: usize,
    /// Also gate the consistency gradient by `w`.
    pub double_gate: bool,
    pub exec: Execution,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            lambdas: LossWeights::default(),
            step: 0.05,
            max_epochs: 2000,
            patience: 3,
            wavelet_levels: 2,
            double_gate: false,
            exec: Execution::default(),
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambdas.validate()?;
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::param("step", format!("must be positive, got {}", self.step)));
        }
        if self.patience == 0 {
            return Err(Error::param("patience", "must be at least 1"));
        }
        Ok(())
    }
}

/// How primitives of frame `t` map onto frame `t - 1`.
#[derive(Debug, Clone)]
pub enum TemporalLink {
    /// Known index correspondence.
    Correspondence(Vec<usize>),
    /// Transport-based barycentric alignment.
    Transport(FrameAlignment),
}

impl TemporalLink {
    fn aligned(&self, prev: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            TemporalLink::Correspondence(idx) => Ok(idx.iter().map(|&j| prev[j].clone()).collect()),
            TemporalLink::Transport(a) => a.transfer(prev),
        }
    }
}

/// Graphs and temporal links for the consistency term, one per frame.
/// `links[0]` is always `None`.
#[derive(Debug, Clone)]
pub struct ConsistencyPrior {
    pub graphs: Vec<NeighborGraph>,
    pub links: Vec<Option<TemporalLink>>,
    pub terms: ConsistencyTerms,
}

impl ConsistencyPrior {
    /// A prior with no edges and no links; contributes nothing.
    pub fn none(scene: &SceneSequence) -> Self {
        Self {
            graphs: scene.frames.iter().map(|f| NeighborGraph::empty(f.len())).collect(),
            links: vec![None; scene.len()],
            terms: ConsistencyTerms { temporal: false, spatial: false },
        }
    }

    fn check(&self, scene: &SceneSequence) -> Result<()> {
        for (context, len) in [("prior graphs", self.graphs.len()), ("prior links", self.links.len())] {
            if len != scene.len() {
                return Err(Error::LengthMismatch { context, expected: scene.len(), actual: len });
            }
        }
        for (g, f) in self.graphs.iter().zip(&scene.frames) {
            if g.len() != f.len() {
                return Err(Error::LengthMismatch { context: "prior graph nodes", expected: f.len(), actual: g.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub components: LossComponents,
    /// Mean clean bit accuracy over supervised images.
    pub bit_acc: f64,
    /// Worst clean bit accuracy over supervised images.
    pub min_bit_acc: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub scene: SceneSequence,
    pub trace: Vec<TraceRow>,
    /// Descent steps taken.
    pub epochs: usize,
    pub converged: bool,
}

struct ImageTerms {
    wm: f64,
    wav: f64,
    rec: f64,
    acc: f64,
    wm_grad: Vec<Vec<f64>>,
    rec_grad: Vec<Vec<f64>>,
}

struct Problem<'a> {
    message: &'a WatermarkMessage,
    decoder: &'a FrozenDecoder,
    config: &'a EmbedConfig,
    /// `(frame, jacobian, pristine render)` per supervised image.
    images: Vec<(usize, AppearanceJacobian, Image)>,
    /// Per-channel pyramids of each pristine render.
    pristine_pyramids: Vec<Vec<WaveletPyramid>>,
    channels: usize,
}

impl Problem<'_> {
    fn image_terms(&self, idx: usize, appearance: &[Vec<Vec<f64>>]) -> Result<ImageTerms> {
        let (t, jac, pristine) = &self.images[idx];
        let img = jac.apply(&appearance[*t])?;
        if self.config.wavelet_levels == DECODER_LEVELS {
            self.shared_pyramid_terms(&img, jac, pristine, &self.pristine_pyramids[idx])
        } else {
            self.generic_terms(&img, jac, pristine)
        }
    }

    /// Straightforward composition of the loss functions.
    fn generic_terms(&self, img: &Image, jac: &AppearanceJacobian, pristine: &Image) -> Result<ImageTerms> {
        let lam = &self.config.lambdas;
        let levels = self.config.wavelet_levels;
        let soft: Vec<f64> = image_logits(img, self.decoder)?.into_iter().map(logistic).collect();
        let bits = self.message.bits();
        let mut g_wm = image_logits_adjoint(&message_loss_logit_grad(&soft, bits)?, self.decoder, self.channels)? * lam.wm;
        g_wm = g_wm + wavelet_subband_grad(img, pristine, levels)? * lam.wav;
        let g_rec = reconstruction_grad(img, pristine)? * lam.rec;
        Ok(ImageTerms {
            wm: message_loss(&soft, bits)?,
            wav: wavelet_subband_loss(img, pristine, levels)?,
            rec: reconstruction_loss(img, pristine)?,
            acc: bit_accuracy(&soft, bits)?,
            wm_grad: jac.transpose_apply(g_wm.view())?,
            rec_grad: jac.transpose_apply(g_rec.view())?,
        })
    }

    /// Same quantities as [`Self::generic_terms`] when the wavelet loss and
    /// the decoder share one pyramid depth: each channel is transformed once
    /// and the watermark gradient is synthesised with a single inverse.
    fn shared_pyramid_terms(
        &self,
        img: &Image,
        jac: &AppearanceJacobian,
        pristine: &Image,
        pristine_pyr: &[WaveletPyramid],
    ) -> Result<ImageTerms> {
        let lam = &self.config.lambdas;
        let k = self.channels as f64;
        let pyr: Vec<WaveletPyramid> = img.outer_iter().map(|p| dwt_forward(p, DECODER_LEVELS)).collect::<Result<_>>()?;
        let ll = pyr.iter().skip(1).fold(pyr[0].ll.clone(), |acc, p| acc + &p.ll) / k;
        let soft: Vec<f64> = self.decoder.logits(ll.view())?.into_iter().map(logistic).collect();
        let bits = self.message.bits();

        let count: usize = pyr.iter().map(WaveletPyramid::detail_count).sum();
        let scale = lam.wav / count as f64;
        let mut abs_sum = 0.0;
        let ll_grad = self.decoder.logits_adjoint(&message_loss_logit_grad(&soft, bits)?) * (lam.wm / k);
        let mut g_wm = Image::zeros(img.dim());
        for (ch, (a, b)) in pyr.iter().zip(pristine_pyr).enumerate() {
            abs_sum += a.detail_coefficients().zip(b.detail_coefficients()).map(|(x, y)| (x - y).abs()).sum::<f64>();
            let details = a.zip_details(b, |x, y| {
                let d = x - y;
                if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                }
            });
            let plane = dwt_inverse(&WaveletPyramid { ll: ll_grad.clone(), details })?;
            g_wm.index_axis_mut(Axis(0), ch).assign(&plane);
        }
        let g_rec = reconstruction_grad(img, pristine)? * lam.rec;
        Ok(ImageTerms {
            wm: message_loss(&soft, bits)?,
            wav: abs_sum / count as f64,
            rec: reconstruction_loss(img, pristine)?,
            acc: bit_accuracy(&soft, bits)?,
            wm_grad: jac.transpose_apply(g_wm.view())?,
            rec_grad: jac.transpose_apply(g_rec.view())?,
        })
    }
}

fn stacked_states(scene: &SceneSequence, appearance: &[Vec<Vec<f64>>], t: usize) -> Vec<Vec<f64>> {
    scene.frames[t]
        .iter()
        .zip(&appearance[t])
        .map(|(p, s)| p.mu.iter().copied().chain(s.iter().copied()).collect())
        .collect()
}

/// Consistency loss and its appearance gradient, summed over frames.
fn consistency(
    scene: &SceneSequence,
    appearance: &[Vec<Vec<f64>>],
    prior: &ConsistencyPrior,
    gates: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    let states: Vec<Vec<Vec<f64>>> = (0..scene.len()).map(|t| stacked_states(scene, appearance, t)).collect();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(scene.len());
    for t in 0..scene.len() {
        let z_hat = match (&prior.links[t], t) {
            (Some(link), t) if t > 0 && prior.terms.temporal => Some(link.aligned(&states[t - 1])?),
            _ => None,
        };
        let z_hat = z_hat.as_deref();
        total += consistency_loss_terms(&states[t], z_hat, &prior.graphs[t], &gates[t], prior.terms)?;
        let g = consistency_gradient_terms(&states[t], z_hat, &prior.graphs[t], &gates[t], prior.terms)?;
        grads.push(g.into_iter().map(|mut v| v.split_off(3)).collect());
    }
    Ok((total, grads))
}

fn finite(term: &'static str, v: f64, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term, epoch })
    }
}

/// Embeds `message` into the appearance of every primitive of `scene`.
///
/// `gates[t][i]` is the routing weight of primitive `i` in frame `t`. The
/// same message is supervised on every (frame, view) pair.
pub fn embed(
    scene: &SceneSequence,
    message: &WatermarkMessage,
    decoder: &FrozenDecoder,
    views: &[Viewpoint],
    gates: &[Vec<f64>],
    prior: &ConsistencyPrior,
    config: &EmbedConfig,
) -> Result<EmbedOutcome> {
    config.validate()?;
    scene.validate()?;
    prior.check(scene)?;
    if message.len() != decoder.bits() {
        return Err(Error::LengthMismatch { context: "message bits", expected: decoder.bits(), actual: message.len() });
    }
    if gates.len() != scene.len() {
        return Err(Error::LengthMismatch { context: "gate frames", expected: scene.len(), actual: gates.len() });
    }
    for (g, f) in gates.iter().zip(&scene.frames) {
        if g.len() != f.len() {
            return Err(Error::LengthMismatch { context: "gate weights", expected: f.len(), actual: g.len() });
        }
    }
    if views.is_empty() {
        return Err(Error::param("views", "at least one supervised view is required"));
    }
    for v in views {
        if (v.height, v.width) != decoder.image_dims() {
            return Err(Error::ShapeMismatch { context: "view vs decoder", expected: decoder.image_dims(), actual: (v.height, v.width) });
        }
    }

    let exec = config.exec;
    let pairs: Vec<(usize, usize)> = (0..scene.len()).flat_map(|t| (0..views.len()).map(move |v| (t, v))).collect();
    let images = exec.map(pairs.len(), |i| {
        let (t, v) = pairs[i];
        // Per-image work runs in the outer map; keep the inner build serial.
        let jac = render_appearance_jacobian_with(&scene.frames[t], &views[v], Execution::Sequential);
        let pristine = jac.apply(&scene.appearance(t)).expect("jacobian built from this frame");
        (t, jac, pristine)
    });
    let pristine_pyramids = images
        .iter()
        .map(|(_, _, p)| p.outer_iter().map(|plane| dwt_forward(plane, config.wavelet_levels)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let problem = Problem { message, decoder, config, images, pristine_pyramids, channels: scene.channels() };
    let n_images = problem.images.len() as f64;

    let mut appearance: Vec<Vec<Vec<f64>>> = (0..scene.len()).map(|t| scene.appearance(t)).collect();
    let mut trace = Vec::new();
    let mut streak = 0usize;
    let mut epochs = 0usize;
    let mut converged = false;

    for epoch in 0..=config.max_epochs {
        let per_image = exec.try_map(problem.images.len(), |i| problem.image_terms(i, &appearance))?;
        let (con, con_grad) = consistency(scene, &appearance, prior, gates)?;

        let mut comps = LossComponents { con, ..Default::default() };
        let mut acc_sum = 0.0;
        let mut acc_min = f64::INFINITY;
        let mut wm_grad: Vec<Vec<Vec<f64>>> = appearance.iter().map(|f| vec![vec![0.0; problem.channels]; f.len()]).collect();
        let mut rec_grad = wm_grad.clone();
        for (terms, (t, _, _)) in per_image.iter().zip(&problem.images) {
            comps.wm += terms.wm / n_images;
            comps.wav += terms.wav / n_images;
            comps.rec += terms.rec / n_images;
            acc_sum += terms.acc;
            acc_min = acc_min.min(terms.acc);
            for (acc, g) in wm_grad[*t].iter_mut().zip(&terms.wm_grad) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b / n_images;
                }
            }
            for (acc, g) in rec_grad[*t].iter_mut().zip(&terms.rec_grad) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b / n_images;
                }
            }
        }
        finite("loss_wm", comps.wm, epoch)?;
        finite("loss_wav", comps.wav, epoch)?;
        finite("loss_con", comps.con, epoch)?;
        finite("loss_rec", comps.rec, epoch)?;
        let loss_total = finite("loss_total", total_loss(&comps, &config.lambdas)?, epoch)?;
        trace.push(TraceRow { epoch, loss_total, components: comps, bit_acc: acc_sum / n_images, min_bit_acc: acc_min });

        streak = if acc_min >= 1.0 { streak + 1 } else { 0 };
        if streak >= config.patience {
            converged = true;
            break;
        }
        if epoch == config.max_epochs {
            break;
        }

        let lam_con = config.lambdas.con;
        for t in 0..scene.len() {
            let mut gated = wm_grad[t].clone();
            let mut ungated = rec_grad[t].clone();
            let target = if config.double_gate { &mut gated } else { &mut ungated };
            for (acc, g) in target.iter_mut().zip(&con_grad[t]) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += lam_con * b;
                }
            }
            let grad = routed_gradient(&ungated, &gated, &gates[t])?;
            for (s, g) in appearance[t].iter_mut().zip(&grad) {
                for (sv, gv) in s.iter_mut().zip(g) {
                    *sv = (*sv - config.step * gv).clamp(0.0, 1.0);
                }
            }
        }
        epochs += 1;
    }

    let mut out = scene.clone();
    for (frame, app) in out.frames.iter_mut().zip(appearance) {
        for (p, s) in frame.iter_mut().zip(app) {
            p.appearance = s;
        }
    }
    Ok(EmbedOutcome { scene: out, trace, epochs, converged })
}
