use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use vmc_core::{Frame, FrameShape};
use vmc_nn::io::Archive;
use vmc_nn::Tensor;

use crate::replay::{ReplayBuffer, StoredEpisode};
use crate::RlError;

/// Trainer state on disk: parameters, optimizer moments, counters and
/// (off-policy) the replay contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub(crate) archive: Archive<f32>,
}

impl Checkpoint {
    pub(crate) fn new(kind: &str) -> Self {
        Self { archive: Archive::new(serde_json::json!({ "kind": kind })) }
    }

    pub fn kind(&self) -> Option<&str> {
        self.archive.meta["kind"].as_str()
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        Ok(self.archive.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        Ok(Self { archive: Archive::load(path)? })
    }

    pub(crate) fn set<T: Serialize>(&mut self, key: &str, value: &T) -> Result<(), RlError> {
        let v = serde_json::to_value(value).map_err(|e| RlError::Checkpoint(format!("{key}: {e}")))?;
        self.archive.meta[key] = v;
        Ok(())
    }

    pub(crate) fn get<T: DeserializeOwned>(&self, key: &str) -> Result<T, RlError> {
        serde_json::from_value(self.archive.meta[key].clone()).map_err(|e| RlError::Checkpoint(format!("{key}: {e}")))
    }

    pub(crate) fn expect_kind(&self, kind: &str) -> Result<(), RlError> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(RlError::Checkpoint(format!("expected a {kind} checkpoint, found {other:?}"))),
        }
    }

    pub(crate) fn push_replay(&mut self, replay: &ReplayBuffer) -> Result<(), RlError> {
        let mut heads = Vec::with_capacity(replay.episodes.len());
        for (i, e) in replay.episodes.iter().enumerate() {
            let frame_len = e.frames[0].pixels().len();
            let pixels: Vec<f32> = e.frames.iter().flat_map(|f| f.pixels().iter().map(|&p| p as f32)).collect();
            self.archive.push(format!("replay/{i}/frames"), Tensor::new(vec![e.frames.len(), frame_len], pixels));
            let a_dim = e.actions.first().map_or(0, Vec::len);
            self.archive
                .push(format!("replay/{i}/actions"), Tensor::new(vec![e.actions.len(), a_dim], e.actions.concat()));
            self.archive.push(format!("replay/{i}/rewards"), Tensor::new(vec![e.rewards.len()], e.rewards.clone()));
            heads.push((e.id, e.terminal, e.closed));
        }
        self.set("replay", &heads)
    }

    pub(crate) fn restore_replay(&self, replay: &mut ReplayBuffer, shape: FrameShape) -> Result<(), RlError> {
        let heads: Vec<(u64, bool, bool)> = self.get("replay")?;
        let mut episodes = Vec::with_capacity(heads.len());
        let missing = |k: &str| RlError::Checkpoint(format!("missing tensor {k}"));
        for (i, (id, terminal, closed)) in heads.into_iter().enumerate() {
            let key = format!("replay/{i}/frames");
            let f = self.archive.get(&key).ok_or_else(|| missing(&key))?;
            let frames = f
                .data
                .chunks(shape.len())
                .map(|c| Frame::new(shape, c.iter().map(|&v| v as u8).collect()))
                .collect::<Result<Vec<_>, _>>()?;
            let key = format!("replay/{i}/actions");
            let a = self.archive.get(&key).ok_or_else(|| missing(&key))?;
            let a_dim = a.shape[1];
            let actions = if a_dim == 0 { vec![vec![]; a.shape[0]] } else { a.data.chunks(a_dim).map(<[f32]>::to_vec).collect() };
            let key = format!("replay/{i}/rewards");
            let rewards = self.archive.get(&key).ok_or_else(|| missing(&key))?.data.clone();
            episodes.push(StoredEpisode { id, frames, actions, rewards, terminal, closed });
        }
        replay.restore_episodes(episodes);
        Ok(())
    }
}
