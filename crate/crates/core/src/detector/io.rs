use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::layout::Normalizer;
use super::model::{Architecture, DetectorModel};
use super::train::EpochLog;
use crate::error::{Error, Result};

const FORMAT: &str = "gridsense-detector";
const VERSION: u32 = 1;

/// JSON envelope; the parameter vector is a base64 blob of little-endian f64.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    arch: Architecture,
    n_params: usize,
    normalizer: Normalizer,
    params: String,
}

pub fn save_model<W: Write>(model: &DetectorModel, w: W) -> Result<()> {
    let bytes: Vec<u8> = model.params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        arch: model.arch,
        n_params: model.n_params(),
        normalizer: model.normalizer.clone(),
        params: STANDARD.encode(bytes),
    };
    serde_json::to_writer_pretty(w, &file)?;
    Ok(())
}

pub fn load_model<R: Read>(r: R) -> Result<DetectorModel> {
    let file: ModelFile = serde_json::from_reader(r)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Config(format!("unsupported model file {} v{}", file.format, file.version)));
    }
    let bytes = STANDARD.decode(&file.params).map_err(|e| Error::Config(format!("bad parameter blob: {e}")))?;
    if bytes.len() != 8 * file.n_params {
        return Err(Error::Config("parameter blob length does not match n_params".into()));
    }
    let params = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    DetectorModel::from_parts(file.arch, params, file.normalizer)
}

pub const CURVE_HEADER: [&str; 14] = [
    "epoch", "train_total", "train_bce", "train_recon", "train_l_data", "train_l_p", "train_l_q",
    "val_total", "val_bce", "val_recon", "val_l_data", "val_l_p", "val_l_q", "val_acc",
];

pub fn write_curve<W: Write>(history: &[EpochLog], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record(CURVE_HEADER).map_err(io)?;
    for log in history {
        let mut row = vec![log.epoch.to_string()];
        for p in [&log.train, &log.val] {
            row.extend([p.total, p.bce, p.recon, p.l_data, p.l_p, p.l_q].map(|v| v.to_string()));
        }
        row.push(log.val_acc.to_string());
        out.write_record(&row).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
