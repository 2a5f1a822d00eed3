//! On-disk demonstration archives.
//!
//! A directory holding `manifest.json` and one `episode_NNNNN.bin` blob per
//! episode. A blob is the episode's frames as row-major uint8 `[T, C, H, W]`,
//! then `T * action_dim` little-endian f32 actions, then `T` little-endian
//! f32 rewards.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vmc_core::{DemoDataset, EpisodeRecord, Frame, FrameShape, ValueDomain};

use crate::EnvError;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    task_id: String,
    episode_count: usize,
    frame_shape: [usize; 3],
    action_dim: usize,
    value_domain: ValueDomain,
    episodes: Vec<EpisodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeEntry {
    file: String,
    length: usize,
    success: bool,
    bytes: u64,
}

fn blob_size(length: usize, shape: FrameShape, action_dim: usize) -> u64 {
    (length * (shape.len() + 4 * action_dim + 4)) as u64
}

fn io(path: &Path, e: std::io::Error) -> EnvError {
    EnvError::Io(format!("{}: {e}", path.display()))
}

pub fn save_demos(dataset: &DemoDataset, dir: &Path) -> Result<(), EnvError> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let shape = dataset.frame_shape;
    let mut entries = Vec::with_capacity(dataset.episodes.len());
    for (i, ep) in dataset.episodes.iter().enumerate() {
        let mut blob = Vec::with_capacity(blob_size(ep.len(), shape, dataset.action_dim) as usize);
        for f in &ep.observations {
            blob.extend_from_slice(f.pixels());
        }
        for a in ep.actions.iter().flatten() {
            blob.extend_from_slice(&a.to_le_bytes());
        }
        for r in &ep.rewards {
            blob.extend_from_slice(&r.to_le_bytes());
        }
        let file = format!("episode_{i:05}.bin");
        let path = dir.join(&file);
        fs::write(&path, &blob).map_err(|e| io(&path, e))?;
        entries.push(EpisodeEntry { file, length: ep.len(), success: ep.success, bytes: blob.len() as u64 });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        task_id: dataset.task_id.clone(),
        episode_count: entries.len(),
        frame_shape: [shape.channels, shape.height, shape.width],
        action_dim: dataset.action_dim,
        value_domain: ValueDomain::Uint8,
        episodes: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| EnvError::Format(e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| io(&path, e))
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

/// Loads an archive, checking every size invariant against the manifest
/// before decoding any blob.
pub fn load_demos(dir: &Path) -> Result<DemoDataset, EnvError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| EnvError::Format(format!("manifest: {e}")))?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| EnvError::Format("manifest lacks format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(EnvError::VersionMismatch { found: found as u32, expected: FORMAT_VERSION });
    }
    let m: Manifest = serde_json::from_value(raw).map_err(|e| EnvError::Format(format!("manifest: {e}")))?;
    if m.value_domain != ValueDomain::Uint8 {
        return Err(EnvError::Format(format!("unsupported value domain {:?}", m.value_domain)));
    }
    if m.episode_count != m.episodes.len() {
        return Err(EnvError::SizeInconsistency(format!(
            "episode_count {} but {} episode entries",
            m.episode_count,
            m.episodes.len()
        )));
    }
    let shape = FrameShape::new(m.frame_shape[0], m.frame_shape[1], m.frame_shape[2]);
    if shape.is_empty() || m.action_dim == 0 {
        return Err(EnvError::SizeInconsistency("empty frame shape or action dim".into()));
    }
    let mut blobs = Vec::with_capacity(m.episodes.len());
    for (i, e) in m.episodes.iter().enumerate() {
        let expected = blob_size(e.length, shape, m.action_dim);
        if e.length == 0 || e.bytes != expected {
            return Err(EnvError::SizeInconsistency(format!(
                "episode {i}: manifest lists {} bytes, shape arithmetic gives {expected}",
                e.bytes
            )));
        }
        let p = dir.join(&e.file);
        let got = fs::metadata(&p).map_err(|err| io(&p, err))?.len();
        if got < expected {
            return Err(EnvError::Truncated { episode: i, expected, got });
        }
        if got > expected {
            return Err(EnvError::SizeInconsistency(format!("episode {i}: {got} bytes on disk, expected {expected}")));
        }
        blobs.push(p);
    }
    let mut episodes = Vec::with_capacity(blobs.len());
    for (e, p) in m.episodes.iter().zip(&blobs) {
        let bytes = fs::read(p).map_err(|err| io(p, err))?;
        let (frames, rest) = bytes.split_at(e.length * shape.len());
        let (actions, rewards) = rest.split_at(e.length * m.action_dim * 4);
        let observations = frames
            .chunks_exact(shape.len())
            .map(|c| Frame::new(shape, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let actions = f32s(actions).chunks_exact(m.action_dim).map(<[f32]>::to_vec).collect();
        episodes.push(EpisodeRecord { observations, actions, rewards: f32s(rewards), success: e.success });
    }
    Ok(DemoDataset::new(m.task_id, m.action_dim, shape, episodes)?)
}
