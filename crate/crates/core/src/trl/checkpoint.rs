//! Checkpoint text format: one header line, the decomposition, then the bias.
//!
//! ```text
//! trl-checkpoint scheme=bernoulli theta=0.5 tie_modes=true scale=inverted decomposition=cp shape=3x2x1
//! cp 3
//! none
//! ...
//! ```

use std::collections::HashMap;

use crate::decomp::Decomposition;
use crate::error::Result;
use crate::sketch::{SketchScheme, SketchSpec};
use crate::tensor::DenseTensor;
use crate::textio::{fmt_f64, write_tensor, LineReader};

use super::{ScaleMode, TrlModel};

const MAGIC: &str = "trl-checkpoint";

pub fn save_checkpoint(model: &TrlModel) -> String {
    let shape: Vec<String> = model.weight.shape().iter().map(|d| d.to_string()).collect();
    let mut out = format!(
        "{MAGIC} scheme={} theta={} tie_modes={} scale={} decomposition={} shape={}\n",
        model.sketch.scheme.name(),
        fmt_f64(model.sketch.theta()),
        model.sketch.tie_modes,
        model.scale_mode.name(),
        model.weight.kind(),
        shape.join("x"),
    );
    model.weight.write_text(&mut out);
    let bias = DenseTensor::new(vec![model.bias.len()], model.bias.clone()).expect("non-empty bias");
    write_tensor(&mut out, &bias);
    out
}

pub fn load_checkpoint(s: &str) -> Result<TrlModel> {
    let mut r = LineReader::new(s);
    let header = r.next_line()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return r.error("missing checkpoint header");
    }
    let mut fields = HashMap::new();
    for p in parts {
        let Some((k, v)) = p.split_once('=') else {
            return r.error(format!("bad header field {p:?}"));
        };
        fields.insert(k, v);
    }
    let field = |name: &str| -> Result<&str> {
        match fields.get(name) {
            Some(v) => Ok(*v),
            None => r.error(format!("header lacks {name}")),
        }
    };
    let Ok(theta) = field("theta")?.parse::<f64>() else {
        return r.error("bad theta");
    };
    let scheme = match field("scheme")? {
        "none" => SketchScheme::None,
        "bernoulli" => SketchScheme::Bernoulli { theta },
        "replacement" => SketchScheme::Replacement { keep_rate: theta },
        other => return r.error(format!("unknown scheme {other:?}")),
    };
    let tie_modes = match field("tie_modes")? {
        "true" => true,
        "false" => false,
        other => return r.error(format!("bad tie_modes {other:?}")),
    };
    let scale_mode = match field("scale")? {
        "inverted" => ScaleMode::Inverted,
        "none" => ScaleMode::None,
        other => return r.error(format!("unknown scale mode {other:?}")),
    };
    let kind = field("decomposition")?.to_string();
    let shape = field("shape")?.to_string();

    let weight = Decomposition::read_text(&mut r)?;
    if weight.kind() != kind {
        return r.error(format!("header says {kind}, body holds {}", weight.kind()));
    }
    let body_shape: Vec<String> = weight.shape().iter().map(|d| d.to_string()).collect();
    if body_shape.join("x") != shape {
        return r.error(format!("header shape {shape} does not match the factors"));
    }
    let bias = r.tensor()?;
    if bias.order() != 1 {
        return r.error("bias must be a vector");
    }
    r.finish()?;
    let line = r.line_no();
    TrlModel::new(
        weight,
        bias.into_data(),
        SketchSpec { scheme, tie_modes },
        scale_mode,
    )
    .map_err(|e| crate::error::TrlError::Parse {
        line,
        msg: e.to_string(),
    })
}
