//! Metropolis-adjusted Langevin sampling and sample files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::systems::Energy;

#[derive(Clone, Debug, PartialEq)]
pub struct MalaConfig {
    pub steps: usize,
    pub burn_in: f64,
    pub step_size: f64,
    pub target_accept: f64,
    pub adapt_gain: f64,
    pub adapt_window: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for MalaConfig {
    fn default() -> Self {
        MalaConfig {
            steps: 100_000,
            burn_in: 0.2,
            step_size: 0.01,
            target_accept: 0.6,
            adapt_gain: 0.1,
            adapt_window: 100,
            thin: 1,
            seed: 0,
        }
    }
}

impl MalaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!(
                "burn-in fraction {} outside [0, 1)",
                self.burn_in
            )));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("step size {} must be > 0", self.step_size)));
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::Config("thin and adapt_window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.burn_in * self.steps as f64).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    /// `n × d`.
    pub samples: Array2<f64>,
    /// `n × d` energy gradients at the samples, when attached.
    pub grads: Option<Array2<f64>>,
    /// Free-form `key=value` provenance written into the file header.
    pub meta: BTreeMap<String, String>,
}

impl SampleSet {
    pub fn new(samples: Array2<f64>, grads: Option<Array2<f64>>) -> Result<Self> {
        let dim = samples.ncols();
        if let Some(g) = &grads {
            if g.dim() != samples.dim() {
                return Err(Error::Shape(format!(
                    "gradient block {:?} vs samples {:?}",
                    g.dim(),
                    samples.dim()
                )));
            }
        }
        let finite = samples.iter().all(|v| v.is_finite())
            && grads.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numerical("non-finite sample entry".into()));
        }
        Ok(SampleSet {
            dim,
            samples,
            grads,
            meta: BTreeMap::new(),
        })
    }

    pub fn empty(dim: usize) -> Self {
        SampleSet {
            dim,
            samples: Array2::zeros((0, dim)),
            grads: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.samples.row(i)
    }

    /// Compute and attach `∇U` at every sample.
    pub fn attach_gradients<E: Energy + ?Sized>(&mut self, sys: &E) -> Result<()> {
        if sys.dim() != self.dim {
            return Err(Error::shape(sys.dim(), self.dim, "system vs samples"));
        }
        let mut g = Array2::zeros(self.samples.dim());
        for (x, mut row) in self.samples.axis_iter(Axis(0)).zip(g.axis_iter_mut(Axis(0))) {
            let x = x.to_vec();
            let mut out = vec![0.0; self.dim];
            sys.value_grad(&x, &mut out);
            if !crate::numcore::all_finite(&out) {
                return Err(Error::Numerical("non-finite energy gradient at a sample".into()));
            }
            row.assign(&ArrayView1::from(&out));
        }
        self.grads = Some(g);
        Ok(())
    }

    /// Stack several sets of equal dimension (metadata from the first).
    pub fn concat(sets: &[SampleSet]) -> Result<SampleSet> {
        let first = sets.first().ok_or_else(|| Error::Empty("no sample sets".into()))?;
        let views: Vec<_> = sets.iter().map(|s| s.samples.view()).collect();
        let samples = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("concatenating samples: {e}")))?;
        let grads = if sets.iter().all(|s| s.grads.is_some()) {
            let gv: Vec<_> = sets.iter().map(|s| s.grads.as_ref().unwrap().view()).collect();
            Some(
                ndarray::concatenate(Axis(0), &gv)
                    .map_err(|e| Error::Shape(format!("concatenating gradients: {e}")))?,
            )
        } else {
            None
        };
        let mut out = SampleSet::new(samples, grads)?;
        out.meta = first.meta.clone();
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct MalaStats {
    /// Acceptance rate over the kept (post burn-in) window.
    pub acceptance: f64,
    /// Step size after adaptation.
    pub step_size: f64,
}

/// Log acceptance ratio of a MALA move `x → y` with step `h`.
pub fn mala_log_accept(
    h: f64,
    x: &[f64],
    ux: f64,
    gx: &[f64],
    y: &[f64],
    uy: f64,
    gy: &[f64],
) -> f64 {
    if !uy.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for i in 0..x.len() {
        let a = y[i] - x[i] + h * gx[i];
        let b = x[i] - y[i] + h * gy[i];
        fwd += a * a;
        bwd += b * b;
    }
    -(uy - ux) - bwd / (4.0 * h) + fwd / (4.0 * h)
}

/// One MALA chain. Step size adapts toward the target acceptance rate once
/// per window during burn-in and is frozen afterwards.
pub fn mala_chain<E: Energy + ?Sized, R: Rng>(
    sys: &E,
    cfg: &MalaConfig,
    x0: &[f64],
    rng: &mut R,
) -> Result<(SampleSet, MalaStats)> {
    cfg.validate()?;
    let d = sys.dim();
    if x0.len() != d {
        return Err(Error::shape(d, x0.len(), "initial state"));
    }
    let mut x = x0.to_vec();
    let mut gx = vec![0.0; d];
    let mut ux = sys.value_grad(&x, &mut gx);
    if !ux.is_finite() || !crate::numcore::all_finite(&gx) {
        return Err(Error::Numerical(
            "non-finite energy at the initial state".into(),
        ));
    }
    let burn = cfg.burn_in_steps();
    let kept = (cfg.steps - burn).div_ceil(cfg.thin);
    let mut samples = Array2::zeros((kept, d));
    let mut grads = Array2::zeros((kept, d));
    let mut h = cfg.step_size;
    let mut y = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let (mut window_acc, mut window_n) = (0usize, 0usize);
    let mut post_acc = 0usize;
    let mut row = 0;
    for step in 0..cfg.steps {
        let noise = (2.0 * h).sqrt();
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            y[i] = x[i] - h * gx[i] + noise * z;
        }
        let uy = sys.value_grad(&y, &mut gy);
        let log_a = if crate::numcore::all_finite(&gy) {
            mala_log_accept(h, &x, ux, &gx, &y, uy, &gy)
        } else {
            f64::NEG_INFINITY
        };
        let u: f64 = rng.random();
        let accept = log_a >= 0.0 || u.ln() < log_a;
        if accept {
            std::mem::swap(&mut x, &mut y);
            std::mem::swap(&mut gx, &mut gy);
            ux = uy;
        }
        if step < burn {
            window_acc += accept as usize;
            window_n += 1;
            if window_n == cfg.adapt_window {
                let rate = window_acc as f64 / window_n as f64;
                h *= (cfg.adapt_gain * (rate - cfg.target_accept)).exp();
                window_acc = 0;
                window_n = 0;
            }
        } else {
            post_acc += accept as usize;
            if (step - burn) % cfg.thin == 0 {
                samples.row_mut(row).assign(&ArrayView1::from(&x));
                grads.row_mut(row).assign(&ArrayView1::from(&gx));
                row += 1;
            }
        }
    }
    let post = cfg.steps - burn;
    let mut set = SampleSet::new(samples, Some(grads))?;
    set.meta.insert("seed".into(), cfg.seed.to_string());
    set.meta.insert("chain".into(), cfg.steps.to_string());
    let stats = MalaStats {
        acceptance: if post > 0 {
            post_acc as f64 / post as f64
        } else {
            f64::NAN
        },
        step_size: h,
    };
    Ok((set, stats))
}

/// Independent chains, chain `c` on stream `c` of `cfg.seed`, concatenated
/// in chain order.
pub fn mala_chains<E: Energy + ?Sized>(
    sys: &E,
    cfg: &MalaConfig,
    starts: &[Vec<f64>],
) -> Result<(SampleSet, Vec<MalaStats>)> {
    let runs: Result<Vec<_>> = starts
        .par_iter()
        .enumerate()
        .map(|(c, x0)| {
            let mut rng = crate::seeds::stream(cfg.seed, c as u64);
            mala_chain(sys, cfg, x0, &mut rng)
        })
        .collect();
    let runs = runs?;
    let sets: Vec<SampleSet> = runs.iter().map(|r| r.0.clone()).collect();
    let mut set = SampleSet::concat(&sets)?;
    set.meta.insert("chains".into(), starts.len().to_string());
    Ok((set, runs.into_iter().map(|r| r.1).collect()))
}

pub fn format_samples(set: &SampleSet) -> String {
    let mut out = format!(
        "feat-samples v1 dim={} n={} grads={}",
        set.dim,
        set.len(),
        set.grads.is_some() as u8
    );
    for (k, v) in &set.meta {
        let _ = write!(out, " {k}={v}");
    }
    out.push('\n');
    for i in 0..set.len() {
        let mut first = true;
        let mut put = |v: f64, out: &mut String| {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:.16e}");
        };
        for v in set.samples.row(i) {
            put(*v, &mut out);
        }
        if let Some(g) = &set.grads {
            for v in g.row(i) {
                put(*v, &mut out);
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_samples(text: &str, path: &Path) -> Result<SampleSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("feat-samples") || tokens.next() != Some("v1") {
        return Err(err(1, "expected `feat-samples v1` header".into()));
    }
    let (mut dim, mut n, mut grads) = (None, None, None);
    let mut meta = BTreeMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed header token `{tok}`")))?;
        let num = || {
            v.parse::<usize>()
                .map_err(|_| err(1, format!("bad value for {k}: `{v}`")))
        };
        match k {
            "dim" => dim = Some(num()?),
            "n" => n = Some(num()?),
            "grads" => {
                grads = Some(match v {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(1, format!("grads must be 0 or 1, got `{v}`"))),
                })
            }
            _ => {
                meta.insert(k.to_string(), v.to_string());
            }
        }
    }
    let dim = dim.ok_or_else(|| err(1, "header lacks dim".into()))?;
    let n = n.ok_or_else(|| err(1, "header lacks n".into()))?;
    let grads = grads.ok_or_else(|| err(1, "header lacks grads".into()))?;
    let width = if grads { 2 * dim } else { dim };
    let mut xs = Array2::zeros((n, dim));
    let mut gs = grads.then(|| Array2::zeros((n, dim)));
    let mut row = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        if row == n {
            return Err(err(line_no, format!("more than n={n} data lines")));
        }
        let mut count = 0;
        for (j, field) in line.split_whitespace().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| err(line_no, format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(err(line_no, "non-finite value".into()));
            }
            if j < dim {
                xs[[row, j]] = v;
            } else if let Some(g) = gs.as_mut().filter(|_| j < width) {
                g[[row, j - dim]] = v;
            }
            count += 1;
        }
        if count != width {
            return Err(err(line_no, format!("expected {width} fields, found {count}")));
        }
        row += 1;
    }
    if row != n {
        return Err(err(
            text.lines().count() + 1,
            format!("expected n={n} data lines, found {row}"),
        ));
    }
    let mut set = SampleSet::new(xs, gs).map_err(|e| err(1, e.to_string()))?;
    set.dim = dim;
    set.meta = meta;
    Ok(set)
}

pub fn write_samples(path: &Path, set: &SampleSet) -> Result<()> {
    crate::io::write_atomic(path, format_samples(set).as_bytes())
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let text = std::fs::read_to_string(path)?;
    parse_samples(&text, path)
}
