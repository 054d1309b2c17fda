//! Joint training of the velocity and score networks on shared minibatches.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ot::{canonicalize, minibatch_ot_pairs};
use super::{Batch, Schedule, DEFAULT_T_CLIP};
use crate::error::{Error, Result};
use crate::numcore::{Activation, AdamState, Mlp, MlpInit, Tape};
use crate::sampling::SampleSet;
use crate::transport::{TransportField, TransportModel};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// t is drawn uniformly on `[clip, 1 − clip]`.
    pub clip: f64,
    pub ot: bool,
    /// Pairing is solved exactly within blocks of this many rows.
    pub ot_batch: usize,
    pub canonicalize: bool,
    /// Permute particles during canonicalization (point clouds only).
    pub particles: bool,
    /// Iterations that update only the velocity network.
    pub warmup: usize,
    /// Include the target score matching terms (needs endpoint gradients).
    pub tsm: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub schedule: Schedule,
    /// Diffusion level stored in the returned model.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            batch_size: 256,
            lr: 1e-3,
            clip: DEFAULT_T_CLIP,
            ot: true,
            ot_batch: 256,
            canonicalize: false,
            particles: false,
            warmup: 0,
            tsm: true,
            hidden: vec![64, 64],
            activation: Activation::Gelu,
            schedule: Schedule::default(),
            sigma: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::Config(format!("t clip {} outside (0, 0.5)", self.clip)));
        }
        if self.batch_size == 0 || self.ot_batch == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub loss_v: f64,
    pub loss_dsm: f64,
    pub loss_tsm0: f64,
    pub loss_tsm1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: TransportModel,
    pub losses: Vec<LossRecord>,
}

/// Fresh networks (zero output layers) trained on the two sample sets.
pub fn train_transport(cfg: &TrainConfig, set_a: &SampleSet, set_b: &SampleSet) -> Result<TrainOutput> {
    cfg.validate()?;
    let d = set_a.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let velocity = Mlp::new(d, &cfg.hidden, d, cfg.activation, MlpInit::default(), &mut rng)?;
    let score = Mlp::new(d, &cfg.hidden, d, cfg.activation, MlpInit::default(), &mut rng)?;
    let model = TransportModel::new(velocity, score, cfg.schedule, cfg.sigma)?;
    train_from(model, cfg, set_a, set_b, &mut rng)
}

fn gather(src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    src.select(Axis(0), idx)
}

/// Continue training `model` (its networks are the residual on top of
/// `model.base`, if any).
pub fn train_from(
    mut model: TransportModel,
    cfg: &TrainConfig,
    set_a: &SampleSet,
    set_b: &SampleSet,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::Empty("training needs samples from both states".into()));
    }
    if set_a.dim != set_b.dim || set_a.dim != model.dim() {
        return Err(Error::Shape(format!(
            "sample dims {} / {} vs model {}",
            set_a.dim,
            set_b.dim,
            model.dim()
        )));
    }
    if cfg.tsm && (set_a.grads.is_none() || set_b.grads.is_none()) {
        return Err(Error::Config(
            "target score matching needs energy gradients attached to both sample sets".into(),
        ));
    }
    let (set_a, set_b) = if cfg.canonicalize {
        let reference = set_a.row(0).to_vec();
        (
            canonicalize(set_a, &reference, cfg.particles)?,
            canonicalize(set_b, &reference, cfg.particles)?,
        )
    } else {
        (set_a.clone(), set_b.clone())
    };
    let schedule = model.schedule;
    let d = set_a.dim;
    let n = cfg.batch_size;
    let mut adam_v = AdamState::new(model.velocity.n_params(), cfg.lr);
    let mut adam_s = AdamState::new(model.score.n_params(), cfg.lr);
    let mut losses = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let ia: Vec<usize> = (0..n).map(|_| rng.random_range(0..set_a.len())).collect();
        let mut ib: Vec<usize> = (0..n).map(|_| rng.random_range(0..set_b.len())).collect();
        let xa = gather(&set_a.samples, &ia);
        if cfg.ot {
            let xb0 = gather(&set_b.samples, &ib);
            for lo in (0..n).step_by(cfg.ot_batch) {
                let hi = (lo + cfg.ot_batch).min(n);
                let perm = minibatch_ot_pairs(
                    xa.slice(ndarray::s![lo..hi, ..]),
                    xb0.slice(ndarray::s![lo..hi, ..]),
                )?;
                let block: Vec<usize> = perm.iter().map(|&j| ib[lo + j]).collect();
                ib[lo..hi].copy_from_slice(&block);
            }
        }
        let xb = gather(&set_b.samples, &ib);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(cfg.clip..=1.0 - cfg.clip)).collect();
        let eps = Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal));
        let batch = Batch {
            t,
            xa,
            xb,
            eps,
            ga: set_a.grads.as_ref().map(|g| gather(g, &ia)),
            gb: set_b.grads.as_ref().map(|g| gather(g, &ib)),
        };
        let (it, dit) = batch.interpolants(&schedule)?;
        let feats = model.velocity.features(it.view(), &batch.t)?;

        // Regression targets for the networks (minus the analytic base).
        let mut v_target = dit;
        let (mut dsm_target, dsm_w) = batch.dsm_target(&schedule)?;
        let tsm = if cfg.tsm { Some(batch.tsm_target(&schedule)?) } else { None };
        let mut tsm_target = tsm.as_ref().map(|(t, _)| t.clone());
        if let Some(base) = &model.base {
            let (bv, bs) = per_row_fields(base, it.view(), &batch.t)?;
            v_target -= &bv;
            dsm_target -= &bs;
            if let Some(tt) = tsm_target.as_mut() {
                *tt -= &bs;
            }
        }

        let (loss_v, grad_v) = velocity_loss_grad(&model.velocity, &feats, &v_target)?;
        let update_score = iter >= cfg.warmup;
        let masks = tsm.as_ref().map(|(_, m)| m.as_slice());
        let (parts, grad_s) = score_loss_grad(
            &model.score,
            &feats,
            &dsm_target,
            &dsm_w,
            tsm_target.as_ref().zip(masks),
            update_score,
        )?;
        let rec = LossRecord {
            iter,
            loss_v,
            loss_dsm: parts[0],
            loss_tsm0: parts[1],
            loss_tsm1: parts[2],
        };
        if ![rec.loss_v, rec.loss_dsm, rec.loss_tsm0, rec.loss_tsm1]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Numerical(format!("non-finite training loss at iteration {iter}")));
        }
        adam_v
            .step(model.velocity.params_mut(), &grad_v)
            .map_err(|e| Error::Numerical(format!("iteration {iter}: {e}")))?;
        if let Some(g) = grad_s {
            adam_s
                .step(model.score.params_mut(), &g)
                .map_err(|e| Error::Numerical(format!("iteration {iter}: {e}")))?;
        }
        losses.push(rec);
    }
    Ok(TrainOutput { model, losses })
}

fn per_row_fields(
    field: &dyn TransportField,
    xs: ArrayView2<'_, f64>,
    ts: &[f64],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut v = Array2::zeros(xs.dim());
    let mut s = Array2::zeros(xs.dim());
    for (i, &t) in ts.iter().enumerate() {
        let row = xs.slice(ndarray::s![i..i + 1, ..]);
        v.row_mut(i).assign(&field.velocity(row, t)?.row(0));
        s.row_mut(i).assign(&field.score(row, t)?.row(0));
    }
    Ok((v, s))
}

/// `mean ‖net(I_t) − target‖²` and its parameter gradient.
pub fn velocity_loss_grad(net: &Mlp, feats: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let f = tape.constant_view(feats.view());
    let out = net.on_tape(&mut tape, f, 0)?;
    let diff = tape.sub_const(out, target.view())?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    let loss = tape.scale(total, 1.0 / feats.nrows() as f64);
    let value = tape.scalar(loss)?;
    Ok((value, tape.backward(loss, net.n_params())?))
}

/// `[dsm, tsm0, tsm1]` and, when `with_grad`, the gradient of their sum.
pub fn score_loss_grad(
    net: &Mlp,
    feats: &Array2<f64>,
    dsm_target: &Array2<f64>,
    dsm_weights: &[f64],
    tsm: Option<(&Array2<f64>, &[bool])>,
    with_grad: bool,
) -> Result<([f64; 3], Option<Vec<f64>>)> {
    let n = feats.nrows() as f64;
    let mut tape = Tape::new();
    let f = tape.constant_view(feats.view());
    let out = net.on_tape(&mut tape, f, 0)?;
    let diff = tape.sub_const(out, dsm_target.view())?;
    let sq = tape.square(diff);
    let weighted = tape.row_scale(sq, dsm_weights.iter().map(|w| w / n).collect())?;
    let dsm = tape.sum(weighted);
    let mut total = dsm;
    let mut parts = [tape.scalar(dsm)?, 0.0, 0.0];
    if let Some((target, lower)) = tsm {
        let diff = tape.sub_const(out, target.view())?;
        let sq = tape.square(diff);
        let n0 = lower.iter().filter(|&&l| l).count();
        let n1 = lower.len() - n0;
        for (k, (count, want)) in [(n0, true), (n1, false)].into_iter().enumerate() {
            if count == 0 {
                continue;
            }
            let w: Vec<f64> = lower
                .iter()
                .map(|&l| if l == want { 1.0 / count as f64 } else { 0.0 })
                .collect();
            let half = tape.row_scale(sq, w)?;
            let half = tape.sum(half);
            parts[k + 1] = tape.scalar(half)?;
            total = tape.add(total, half)?;
        }
    }
    let grad = if with_grad {
        Some(tape.backward(total, net.n_params())?)
    } else {
        None
    };
    Ok((parts, grad))
}

pub fn format_loss_csv(losses: &[LossRecord]) -> String {
    let mut out = String::from("iter,loss_v,loss_dsm,loss_tsm0,loss_tsm1\n");
    for r in losses {
        let _ = writeln!(
            out,
            "{},{:.10e},{:.10e},{:.10e},{:.10e}",
            r.iter, r.loss_v, r.loss_dsm, r.loss_tsm0, r.loss_tsm1
        );
    }
    out
}

pub fn write_loss_csv(path: &Path, losses: &[LossRecord]) -> Result<()> {
    crate::io::write_atomic(path, format_loss_csv(losses).as_bytes())
}
