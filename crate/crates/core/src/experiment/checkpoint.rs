//! Model checkpoints: an architecture JSON plus a flat parameter file.
//!
//! `<name>.json` lists the model kind and, for each part, its layer spec and
//! the `[offset, offset + len)` slice it owns in `<name>.params`. The params
//! file holds every parameter as a little-endian `f64`, parts in listed
//! order, each part's tensors in layer order (`W0, b0, W1, b1, ...`) and each
//! tensor row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::snet::{SNet, PART_NAMES};
use crate::estimators::CateModel;
use crate::scalar::Scalar;
use crate::tensor::{Mlp, MlpSpec};

pub const FORMAT: &str = "nurobust-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartLayout {
    pub name: String,
    pub spec: MlpSpec,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub parts: Vec<PartLayout>,
    pub total: usize,
}

fn named_parts<T: Scalar>(model: &CateModel<T>) -> Vec<(&'static str, &Mlp<T>)> {
    match model {
        CateModel::TNet { f0, f1 } => vec![("f0", f0), ("f1", f1)],
        CateModel::Direct { tau } => vec![("tau", tau)],
        CateModel::SNet { net } => PART_NAMES.iter().copied().zip(net.parts()).collect(),
    }
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.json")), dir.join(format!("{name}.params")))
}

pub fn save_model<T: Scalar>(model: &CateModel<T>, dir: impl AsRef<Path>, name: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut parts = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (pname, net) in named_parts(model) {
        let flat = net.flat_params();
        for v in &flat {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        parts.push(PartLayout {
            name: pname.to_string(),
            spec: net.spec().clone(),
            offset,
            len: flat.len(),
        });
        offset += flat.len();
    }
    let layout = Layout {
        format: FORMAT.into(),
        version: 1,
        kind: model.kind().into(),
        parts,
        total: offset,
    };
    let (json, params) = paths(dir, name);
    fs::write(json, serde_json::to_string_pretty(&layout)?)?;
    fs::write(params, bytes)?;
    Ok(())
}

pub fn load_model<T: Scalar>(dir: impl AsRef<Path>, name: &str) -> Result<CateModel<T>> {
    let (json, params) = paths(dir.as_ref(), name);
    let layout: Layout = serde_json::from_str(&fs::read_to_string(json)?)?;
    if layout.format != FORMAT {
        return Err(Error::data(format!("not a checkpoint: format {:?}", layout.format)));
    }
    let bytes = fs::read(params)?;
    if bytes.len() != 8 * layout.total {
        return Err(Error::data(format!(
            "params file has {} bytes, layout expects {}",
            bytes.len(),
            8 * layout.total
        )));
    }
    let values: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    let mut nets = Vec::with_capacity(layout.parts.len());
    for p in &layout.parts {
        let end = p.offset.checked_add(p.len).filter(|&e| e <= values.len());
        let Some(end) = end else {
            return Err(Error::data(format!("part {} lies outside the params file", p.name)));
        };
        let mut net = Mlp::zeros(p.spec.clone())?;
        net.set_flat_params(&values[p.offset..end])?;
        nets.push((p.name.as_str(), net));
    }
    let mut take = |name: &str| -> Result<Mlp<T>> {
        let i = nets
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| Error::data(format!("checkpoint lacks part {name}")))?;
        Ok(nets.swap_remove(i).1)
    };
    Ok(match layout.kind.as_str() {
        "tnet" => CateModel::TNet {
            f0: take("f0")?,
            f1: take("f1")?,
        },
        "direct" => CateModel::Direct { tau: take("tau")? },
        "snet" => CateModel::SNet {
            net: SNet {
                phi1: take("phi1")?,
                phi0: take("phi0")?,
                phio: take("phio")?,
                phic: take("phic")?,
                phimu: take("phimu")?,
                h1: take("h1")?,
                h0: take("h0")?,
                hmu: take("hmu")?,
            },
        },
        other => return Err(Error::data(format!("unknown model kind {other:?}"))),
    })
}
