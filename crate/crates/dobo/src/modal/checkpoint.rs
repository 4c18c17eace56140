//! Solution checkpoints.
//!
//! A checkpoint is a self-describing JSON record of the four networks
//! (widths, activation, embedding, parameters row-major) plus the mode count
//! and domain metadata. JSON numbers are written with shortest-round-trip
//! formatting, so save -> load -> evaluate is bit-identical.

use super::{ModalSolution, StitchedSolution};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const FORMAT: &str = "dobo-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    segments: Vec<ModalSolution>,
}

/// Saves a single-domain solution.
pub fn save(ms: &ModalSolution, path: &Path) -> Result<()> {
    save_stitched_ref(std::slice::from_ref(ms), path)
}

/// Saves a time-partitioned solution (a single segment is the common case).
pub fn save_stitched(ms: &StitchedSolution, path: &Path) -> Result<()> {
    save_stitched_ref(&ms.segments, path)
}

fn save_stitched_ref(segments: &[ModalSolution], path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        segments: segments.to_vec(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Data(format!("checkpoint encode: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Loads a checkpoint; returns the segments (one for single-domain runs).
pub fn load(path: &Path) -> Result<StitchedSolution> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
    if file.format != FORMAT {
        return Err(Error::Parse(format!(
            "unknown checkpoint format {:?}",
            file.format
        )));
    }
    if file.segments.is_empty() {
        return Err(Error::Data("checkpoint has no segments".into()));
    }
    Ok(StitchedSolution {
        segments: file.segments,
    })
}
