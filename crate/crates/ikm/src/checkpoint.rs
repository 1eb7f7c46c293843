//! Checkpoint files: a text header carrying the architecture config and the
//! dataset RGB means, followed by one serialized record per named parameter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::arch::{Uhdn, UhdnConfig};
use crate::data::DatasetStats;
use crate::error::{IkmError, Result};
use crate::tensor::{read_record, write_record, Tensor};

const MAGIC: &[u8; 8] = b"IKMCKPT1";

pub fn save_checkpoint(model: &Uhdn<f32>, stats: &DatasetStats, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    let header = format!(
        "{}\nmean_rgb={},{},{}\n",
        model.cfg.to_canonical_text(),
        stats.mean_rgb[0],
        stats.mean_rgb[1],
        stats.mean_rgb[2]
    );
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    let named = model.named_params();
    out.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, t) in named {
        write_record(&mut out, &name, t)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Uhdn<f32>, DatasetStats)> {
    let mut inp = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IkmError::Data(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    inp.read_exact(&mut b4)?;
    let hlen = u32::from_le_bytes(b4) as usize;
    let mut header = vec![0u8; hlen];
    inp.read_exact(&mut header)?;
    let header = String::from_utf8(header)
        .map_err(|_| IkmError::Data("checkpoint header is not UTF-8".into()))?;
    let mut lines = header.lines();
    let cfg_line = lines
        .next()
        .ok_or_else(|| IkmError::Data("empty checkpoint header".into()))?;
    let cfg = UhdnConfig::from_canonical_text(cfg_line)?;
    let stats_line = lines
        .next()
        .ok_or_else(|| IkmError::Data("checkpoint header lacks mean_rgb".into()))?;
    let stats_vals = stats_line
        .strip_prefix("mean_rgb=")
        .ok_or_else(|| IkmError::Data("checkpoint header lacks mean_rgb".into()))?;
    let vals: Vec<f32> = stats_vals
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f32>()
                .map_err(|_| IkmError::Data(format!("bad mean_rgb entry '{}'", v)))
        })
        .collect::<Result<Vec<f32>>>()?;
    if vals.len() != 3 {
        return Err(IkmError::Data("mean_rgb must hold 3 numbers".into()));
    }
    let stats = DatasetStats {
        mean_rgb: [vals[0], vals[1], vals[2]],
    };
    inp.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut model = Uhdn::<f32>::zeros(&cfg)?;
    {
        let mut named = model.named_params_mut();
        if count != named.len() {
            return Err(IkmError::Data(format!(
                "checkpoint holds {} tensors, model expects {}",
                count,
                named.len()
            )));
        }
        let mut by_name: std::collections::HashMap<String, &mut Tensor<f32>> =
            named.drain(..).collect();
        for _ in 0..count {
            let (name, t) = read_record::<f32>(&mut inp)?;
            let slot = by_name
                .get_mut(&name)
                .ok_or_else(|| IkmError::Data(format!("unknown tensor '{}'", name)))?;
            if slot.shape() != t.shape() {
                return Err(IkmError::Data(format!(
                    "tensor '{}' has shape {:?}, model expects {:?}",
                    name,
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
    }
    Ok((model, stats))
}
