//! Parameter checkpoint files.
//!
//! Neural checkpoints carry an architecture descriptor plus the flat decimal
//! parameter list (17 significant digits); loading rejects mismatched
//! descriptors. The analytic wave density is also file-representable so the
//! CLI can propagate with the reference model.

use std::path::Path;

use super::gauge::ConstantDensity;
use super::neural::{NeuralDensity, ARCH_DESCRIPTOR, PARAM_COUNT};
use super::wave::WaveDensity;
use super::DensityModel;
use crate::error::{Error, Result};
use crate::textkv::{self, Document, Writer};

/// A density reconstructed from a checkpoint file.
#[derive(Debug)]
pub enum LoadedDensity {
    Neural(NeuralDensity),
    Wave { dt: f64, dx: f64 },
    Constant { value: f64 },
}

impl LoadedDensity {
    pub fn into_model(self) -> Box<dyn DensityModel + Send + Sync> {
        match self {
            LoadedDensity::Neural(n) => Box::new(n),
            LoadedDensity::Wave { dt, dx } => Box::new(WaveDensity::new(dt, dx, 1)),
            LoadedDensity::Constant { value } => Box::new(ConstantDensity::new(value, 1)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            LoadedDensity::Neural(_) => format!("neural {ARCH_DESCRIPTOR}"),
            LoadedDensity::Wave { dt, dx } => format!("wave dt={dt} dx={dx}"),
            LoadedDensity::Constant { value } => format!("constant {value}"),
        }
    }
}

pub fn write_checkpoint_string(density: &LoadedDensity) -> String {
    let mut w = Writer::new();
    match density {
        LoadedDensity::Neural(n) => {
            w.kv("model", "neural")
                .kv("arch", ARCH_DESCRIPTOR)
                .kv_f64("dt", n.dt())
                .kv_f64("dx", n.dx())
                .kv("params", PARAM_COUNT)
                .blank();
            for p in n.params() {
                w.line(&textkv::fmt_f64(*p));
            }
        }
        LoadedDensity::Wave { dt, dx } => {
            w.kv("model", "wave")
                .kv("potential", "quadratic")
                .kv_f64("dt", *dt)
                .kv_f64("dx", *dx);
        }
        LoadedDensity::Constant { value } => {
            w.kv("model", "constant").kv_f64("value", *value);
        }
    }
    w.finish()
}

pub fn load_checkpoint_str(path: &str, text: &str) -> Result<LoadedDensity> {
    let doc = Document::parse(path, text)?;
    match doc.get("model")? {
        "neural" => {
            doc.reject_unknown(&["model", "arch", "dt", "dx", "params"])?;
            let arch = doc.get("arch")?;
            if arch != ARCH_DESCRIPTOR {
                return Err(Error::ArchitectureMismatch {
                    expected: ARCH_DESCRIPTOR.to_string(),
                    found: arch.to_string(),
                });
            }
            let count = doc.get_usize("params")?;
            if count != PARAM_COUNT {
                return Err(Error::ArchitectureMismatch {
                    expected: format!("{PARAM_COUNT} parameters"),
                    found: format!("{count} parameters"),
                });
            }
            if doc.data.len() != count {
                return Err(Error::parse(
                    path,
                    format!("expected {count} parameter lines, found {}", doc.data.len()),
                ));
            }
            let params = doc
                .data
                .iter()
                .map(|line| textkv::parse_f64(path, line))
                .collect::<Result<Vec<f64>>>()?;
            Ok(LoadedDensity::Neural(NeuralDensity::from_params(
                params,
                doc.get_f64("dt")?,
                doc.get_f64("dx")?,
            )?))
        }
        "wave" => {
            doc.reject_unknown(&["model", "potential", "dt", "dx"])?;
            let potential = doc.get("potential")?;
            if potential != "quadratic" {
                return Err(Error::parse(
                    path,
                    format!("unsupported wave potential `{potential}`"),
                ));
            }
            Ok(LoadedDensity::Wave {
                dt: doc.get_f64("dt")?,
                dx: doc.get_f64("dx")?,
            })
        }
        "constant" => {
            doc.reject_unknown(&["model", "value"])?;
            Ok(LoadedDensity::Constant {
                value: doc.get_f64("value")?,
            })
        }
        other => Err(Error::parse(path, format!("unknown model kind `{other}`"))),
    }
}

pub fn load_checkpoint_file(path: &Path) -> Result<LoadedDensity> {
    let text = textkv::read_to_string(path)?;
    load_checkpoint_str(&path.display().to_string(), &text)
}

pub fn write_checkpoint_file(density: &LoadedDensity, path: &Path) -> Result<()> {
    textkv::write_string(path, &write_checkpoint_string(density))
}
