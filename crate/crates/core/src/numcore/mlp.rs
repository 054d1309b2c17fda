//! Dense time-conditioned networks.
//!
//! Input features are `[x, sin(π t), cos(π t), sin(2π t), cos(2π t), …]`
//! (four frequencies, width 8). The activation is applied between layers,
//! never after the last one. Parameters are stored flat, layer by layer:
//! the weight matrix (`in × out`, row-major) followed by the bias.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub const TIME_EMBED_WIDTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Tanh-approximated Gaussian-error linear unit.
    Gelu,
    Softplus,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_K: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let th = (GELU_C * (z + GELU_K * z * z * z)).tanh();
                0.5 * z * (1.0 + th)
            }
            Activation::Softplus => super::softplus(z),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let th = (GELU_C * (z + GELU_K * z * z * z)).tanh();
                0.5 * (1.0 + th)
                    + 0.5 * z * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * z * z)
            }
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gelu" => Some(Activation::Gelu),
            "softplus" => Some(Activation::Softplus),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpInit {
    /// Zero the last layer so the untrained network outputs exactly zero.
    pub zero_output: bool,
}

impl Default for MlpInit {
    fn default() -> Self {
        MlpInit { zero_output: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
}

/// Time features appended to every input row.
pub fn time_embedding(t: f64) -> [f64; TIME_EMBED_WIDTH] {
    let mut out = [0.0; TIME_EMBED_WIDTH];
    for k in 0..TIME_EMBED_WIDTH / 2 {
        let w = PI * (1u32 << k) as f64 * t;
        out[2 * k] = w.sin();
        out[2 * k + 1] = w.cos();
    }
    out
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Network with all parameters zero. `widths[0]` must be `d + 8`.
    pub fn zeros(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "network needs at least two non-zero layer widths, got {widths:?}"
            )));
        }
        if widths[0] <= TIME_EMBED_WIDTH {
            return Err(Error::Config(format!(
                "input width {} leaves no room for data beside the time embedding",
                widths[0]
            )));
        }
        let n = param_count(&widths);
        Ok(Mlp {
            widths,
            params: vec![0.0; n],
            activation,
        })
    }

    /// `dim → hidden × depth → out_dim`, LeCun-normal weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        init: MlpInit,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![dim + TIME_EMBED_WIDTH];
        widths.extend_from_slice(hidden);
        widths.push(out_dim);
        let mut net = Mlp::zeros(widths, activation)?;
        let layers = net.n_layers();
        for l in 0..layers {
            if init.zero_output && l + 1 == layers {
                continue;
            }
            let (w_off, _, fan_in, fan_out) = net.layer_layout(l);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[w_off..w_off + fan_in * fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *p = scale * z;
            }
        }
        Ok(net)
    }

    pub fn from_parts(widths: Vec<usize>, params: Vec<f64>, activation: Activation) -> Result<Self> {
        let mut net = Mlp::zeros(widths, activation)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(net.params.len(), params.len(), "network parameters"));
        }
        if !super::all_finite(&params) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Data dimension `d` (input width minus the time embedding).
    pub fn input_dim(&self) -> usize {
        self.widths[0] - TIME_EMBED_WIDTH
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    /// `(weight offset, bias offset, fan in, fan out)` of layer `l`.
    fn layer_layout(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.widths[k] * self.widths[k + 1] + self.widths[k + 1];
        }
        let (i, o) = (self.widths[l], self.widths[l + 1]);
        (off, off + i * o, i, o)
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, _, i, o) = self.layer_layout(l);
        ArrayView2::from_shape((i, o), &self.params[w..w + i * o]).expect("layout")
    }

    fn bias(&self, l: usize) -> ArrayView2<'_, f64> {
        let (_, b, _, o) = self.layer_layout(l);
        ArrayView2::from_shape((1, o), &self.params[b..b + o]).expect("layout")
    }

    /// Feature matrix `[x | embed(t)]`, one row per sample.
    pub fn features(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        let d = self.input_dim();
        if xs.ncols() != d {
            return Err(Error::shape(d, xs.ncols(), "network input"));
        }
        if ts.len() != xs.nrows() && ts.len() != 1 {
            return Err(Error::shape(xs.nrows(), ts.len(), "network times"));
        }
        let mut feats = Array2::zeros((xs.nrows(), self.widths[0]));
        let shared = (ts.len() == 1).then(|| time_embedding(ts[0]));
        for (i, (mut row, x)) in feats
            .axis_iter_mut(Axis(0))
            .zip(xs.axis_iter(Axis(0)))
            .enumerate()
        {
            for j in 0..d {
                row[j] = x[j];
            }
            let emb = shared.unwrap_or_else(|| time_embedding(ts[i]));
            for (k, e) in emb.iter().enumerate() {
                row[d + k] = *e;
            }
        }
        Ok(feats)
    }

    /// Outputs for a batch. `ts` holds one time per row, or a single time
    /// shared by all rows.
    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        let mut h = self.features(xs, ts)?;
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let mut z = h.dot(&self.weight(l));
            z += &self.bias(l);
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.eval(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward_batch(xs, &[t])?.into_raw_vec_and_offset().0)
    }

    /// Outputs together with the directional derivative along `dirs`
    /// (one input-space direction per row; time is held fixed).
    pub fn jvp_batch(
        &self,
        xs: ArrayView2<'_, f64>,
        ts: &[f64],
        dirs: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if dirs.dim() != xs.dim() {
            return Err(Error::Shape(format!(
                "tangent directions {:?} vs inputs {:?}",
                dirs.dim(),
                xs.dim()
            )));
        }
        let mut h = self.features(xs, ts)?;
        let mut dh = Array2::zeros(h.dim());
        dh.slice_mut(ndarray::s![.., ..self.input_dim()]).assign(&dirs);
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let w = self.weight(l);
            let mut z = h.dot(&w);
            z += &self.bias(l);
            let mut dz = dh.dot(&w);
            if l < last {
                let act = self.activation;
                dz.zip_mut_with(&z, |dv, &zv| *dv *= act.derivative(zv));
                z.mapv_inplace(|v| act.eval(v));
            }
            h = z;
            dh = dz;
        }
        Ok((h, dh))
    }

    /// Record the forward pass on a tape. `features` is a node produced by
    /// [`Mlp::features`]; parameter gradients land at `param_offset +` their
    /// flat index.
    pub fn on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        features: Var,
        param_offset: usize,
    ) -> Result<Var> {
        let mut h = features;
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let (w_off, b_off, _, _) = self.layer_layout(l);
            let w = tape.param(self.weight(l), param_offset + w_off);
            let b = tape.param(self.bias(l), param_offset + b_off);
            h = tape.affine(h, w, b)?;
            if l < last {
                h = tape.activate(h, self.activation);
            }
        }
        Ok(h)
    }
}
