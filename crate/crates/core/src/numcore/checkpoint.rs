//! Text checkpoints for networks.
//!
//! ```text
//! feat-model v1 kind=velocity dim=2 layers=10,64,2
//! 1.2345678901234567e-1
//! ...
//! ```
//!
//! A trailing `act=softplus` token is written when the activation is not the
//! default GELU.

use std::fmt::Write as _;
use std::path::Path;

use super::mlp::{param_count, Activation, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Velocity,
    Score,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Velocity => "velocity",
            ModelKind::Score => "score",
        }
    }
}

pub fn format_model(kind: ModelKind, net: &Mlp) -> String {
    let layers: Vec<String> = net.widths().iter().map(|w| w.to_string()).collect();
    let mut out = format!(
        "feat-model v1 kind={} dim={} layers={}",
        kind.name(),
        net.input_dim(),
        layers.join(",")
    );
    if net.activation() != Activation::Gelu {
        let _ = write!(out, " act={}", net.activation().name());
    }
    out.push('\n');
    for p in net.params() {
        let _ = writeln!(out, "{p:.16e}");
    }
    out
}

pub fn parse_model(text: &str, path: &Path) -> Result<(ModelKind, Mlp)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("feat-model") || tokens.next() != Some("v1") {
        return Err(err(1, "expected `feat-model v1` header".into()));
    }
    let (mut kind, mut dim, mut widths, mut act) = (None, None, None, Activation::Gelu);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed header token `{tok}`")))?;
        match key {
            "kind" => {
                kind = Some(match value {
                    "velocity" => ModelKind::Velocity,
                    "score" => ModelKind::Score,
                    _ => return Err(err(1, format!("unknown model kind `{value}`"))),
                })
            }
            "dim" => {
                dim = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| err(1, format!("bad dim `{value}`")))?,
                )
            }
            "layers" => {
                let ws: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(str::parse).collect();
                widths = Some(ws.map_err(|_| err(1, format!("bad layers `{value}`")))?);
            }
            "act" => {
                act = Activation::from_name(value)
                    .ok_or_else(|| err(1, format!("unknown activation `{value}`")))?
            }
            _ => return Err(err(1, format!("unknown header key `{key}`"))),
        }
    }
    let kind = kind.ok_or_else(|| err(1, "header lacks kind".into()))?;
    let dim = dim.ok_or_else(|| err(1, "header lacks dim".into()))?;
    let widths = widths.ok_or_else(|| err(1, "header lacks layers".into()))?;
    let expected = param_count(&widths);
    let mut params = Vec::with_capacity(expected);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let v: f64 = s
            .parse()
            .map_err(|_| err(line_no, format!("not a number: `{s}`")))?;
        if !v.is_finite() {
            return Err(err(line_no, "non-finite parameter".into()));
        }
        params.push(v);
    }
    if params.len() != expected {
        return Err(err(
            text.lines().count(),
            format!("expected {expected} parameters, found {}", params.len()),
        ));
    }
    let net = Mlp::from_parts(widths, params, act).map_err(|e| err(1, e.to_string()))?;
    if net.input_dim() != dim {
        return Err(err(
            1,
            format!("dim={dim} disagrees with input width {}", net.widths()[0]),
        ));
    }
    Ok((kind, net))
}

pub fn write_model(path: &Path, kind: ModelKind, net: &Mlp) -> Result<()> {
    crate::io::write_atomic(path, format_model(kind, net).as_bytes())
}

pub fn read_model(path: &Path) -> Result<(ModelKind, Mlp)> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text, path)
}
