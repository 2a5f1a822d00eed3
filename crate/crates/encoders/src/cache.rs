use std::collections::HashMap;
use std::path::Path;

use vmc_core::{DemoDataset, ObservationBatch};
use vmc_nn::io::Archive;
use vmc_nn::Tensor;

use crate::backend::{Backend, BackendMode, StackMode};
use crate::EncoderError;

const CHUNK: usize = 64;

/// Per-frame features of a whole dataset, computed once by a frozen backend.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    dim: usize,
    rows: Vec<f32>,
    fingerprint: String,
    episode_lengths: Vec<usize>,
    index: HashMap<(usize, usize), usize>,
}

impl FeatureCache {
    fn from_parts(dim: usize, rows: Vec<f32>, fingerprint: String, episode_lengths: Vec<usize>) -> Self {
        let mut index = HashMap::new();
        let mut r = 0;
        for (e, &len) in episode_lengths.iter().enumerate() {
            for t in 0..len {
                index.insert((e, t), r);
                r += 1;
            }
        }
        Self { dim, rows, fingerprint, episode_lengths, index }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn get(&self, episode: usize, step: usize) -> Option<&[f32]> {
        self.index.get(&(episode, step)).map(|&r| &self.rows[r * self.dim..(r + 1) * self.dim])
    }

    /// Concatenated features of frames `[t - depth + 1, t]` of `episode`,
    /// repeating the first frame before the episode start.
    pub fn stacked(&self, episode: usize, t: usize, depth: usize, out: &mut Vec<f32>) -> Result<(), EncoderError> {
        for k in 0..depth {
            let step = t.saturating_sub(depth - 1 - k);
            let row = self
                .get(episode, step)
                .ok_or_else(|| EncoderError::Shape(format!("no cached frame ({episode}, {step})")))?;
            out.extend_from_slice(row);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let meta = serde_json::json!({
            "fingerprint": self.fingerprint,
            "dim": self.dim,
            "episode_lengths": self.episode_lengths,
        });
        let mut a = Archive::new(meta);
        a.push("rows", Tensor::new(vec![self.len(), self.dim], self.rows.clone()));
        a.save(path)?;
        Ok(())
    }

    /// Loads a saved cache; fails unless it was built by a backend with the
    /// given fingerprint.
    pub fn load(path: &Path, fingerprint: &str) -> Result<Self, EncoderError> {
        let a = Archive::<f32>::load(path)?;
        let bad = |what: &str| EncoderError::Format(format!("{}: {what}", path.display()));
        let fp = a.meta["fingerprint"].as_str().ok_or_else(|| bad("missing fingerprint"))?;
        if fp != fingerprint {
            return Err(bad("cache was built by a different backend"));
        }
        let dim = a.meta["dim"].as_u64().ok_or_else(|| bad("missing dim"))? as usize;
        let lengths: Vec<usize> =
            serde_json::from_value(a.meta["episode_lengths"].clone()).map_err(|_| bad("missing episode lengths"))?;
        let rows = a.get("rows").ok_or_else(|| bad("missing rows"))?;
        if rows.shape != [lengths.iter().sum::<usize>(), dim] {
            return Err(bad("row count disagrees with episode lengths"));
        }
        Ok(Self::from_parts(dim, rows.data.clone(), fp.to_string(), lengths))
    }
}

/// Encodes every frame of `dataset` with a frozen backend in evaluation mode.
pub fn cache_features(backend: &Backend<f32>, dataset: &DemoDataset) -> Result<FeatureCache, EncoderError> {
    if backend.mode() != BackendMode::Frozen {
        return Err(EncoderError::InvalidMode(format!(
            "only frozen backends can be cached, this one is {}",
            backend.mode().name()
        )));
    }
    if backend.stack_mode() != StackMode::PerFrame {
        return Err(EncoderError::InvalidMode("caching needs a per-frame backend".into()));
    }
    let dim = backend.output_dim();
    let frames: Vec<_> = dataset.episodes.iter().flat_map(|e| e.observations.iter()).collect();
    let mut rows = Vec::with_capacity(frames.len() * dim);
    for chunk in frames.chunks(CHUNK) {
        let stacks: Vec<Vec<_>> = chunk.iter().map(|f| vec![*f]).collect();
        let batch = ObservationBatch::from_frames(&stacks)?;
        rows.extend(backend.forward(&batch, false)?.data);
    }
    let lengths = dataset.episodes.iter().map(|e| e.len()).collect();
    Ok(FeatureCache::from_parts(dim, rows, backend.fingerprint(), lengths))
}
