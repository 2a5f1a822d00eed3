use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vmc_core::{ObservationBatch, ValueDomain};
use vmc_nn::io::{push_store, restore_store, Archive};
use vmc_nn::{Elem, Graph, ParamStore, Tensor, Var};

use crate::arch::{ConvLayerSpec, ConvNetSpec, EncoderVariant, Readout};
use crate::convnet::ConvNet;
use crate::flare::{flare_graph, fused_dim};
use crate::resize::resize_bilinear;
use crate::EncoderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSource {
    Scratch,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Trainable,
    Frozen,
    Finetune,
}

impl BackendMode {
    pub fn name(self) -> &'static str {
        match self {
            BackendMode::Trainable => "trainable",
            BackendMode::Frozen => "frozen",
            BackendMode::Finetune => "finetune",
        }
    }
}

/// How a frame stack reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    /// Each frame is encoded separately; features are concatenated (and
    /// optionally Flare-fused).
    PerFrame,
    /// The stack is fed as one image with `T * C` channels.
    Channels,
}

/// Name under which the bundled random backbone is registered.
pub const MOCK_PRETRAINED: &str = "mock-pretrained";
const MOCK_SEED: u64 = 0x6d6f_636b_5eed;

/// A visual encoder plus its parameters and training mode.
#[derive(Debug)]
pub struct Backend<T: Elem> {
    name: String,
    source: BackendSource,
    mode: BackendMode,
    stack_mode: StackMode,
    net: ConvNet,
    store: ParamStore<T>,
}

impl<T: Elem> Backend<T> {
    /// A trainable scratch encoder. `input` is the per-frame shape for
    /// [`StackMode::PerFrame`] and the full stacked shape for
    /// [`StackMode::Channels`].
    pub fn scratch(
        spec: &ConvNetSpec,
        input: (usize, usize, usize),
        stack_mode: StackMode,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ConvNet::new(&mut store, "encoder", spec, input, &mut rng)?;
        Ok(Self { name: "scratch".into(), source: BackendSource::Scratch, mode: BackendMode::Trainable, stack_mode, net, store })
    }

    /// The frozen fixed-seed random backbone: three stride-2 convolutions
    /// (32/64/128 channels) pooled to a 4x4 grid, 2048 features per frame at
    /// any native resolution divisible by 32.
    pub fn mock_pretrained(native: usize, mode: BackendMode) -> Result<Self, EncoderError> {
        let spec = ConvNetSpec {
            layers: [32, 64, 128].iter().map(|&c| ConvLayerSpec::new(c, 3, 2, 1, false)).collect(),
            readout: Readout::GridPool { grid: 4 },
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(MOCK_SEED);
        let net = ConvNet::new(&mut store, "backbone", &spec, (3, native, native), &mut rng)?;
        let mut b = Self {
            name: MOCK_PRETRAINED.into(),
            source: BackendSource::External,
            mode: BackendMode::Frozen,
            stack_mode: StackMode::PerFrame,
            net,
            store,
        };
        b.set_mode(mode)?;
        Ok(b)
    }

    /// Loads a backbone from a weight container written by
    /// [`save_weights`](Self::save_weights).
    pub fn from_weight_file(name: &str, path: &Path, mode: BackendMode) -> Result<Self, EncoderError> {
        let archive = Archive::<T>::load(path)?;
        let meta = &archive.meta;
        let spec: ConvNetSpec = serde_json::from_value(meta["spec"].clone())
            .map_err(|e| EncoderError::Format(format!("{}: bad spec: {e}", path.display())))?;
        let input: (usize, usize, usize) = serde_json::from_value(meta["input"].clone())
            .map_err(|e| EncoderError::Format(format!("{}: bad input shape: {e}", path.display())))?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ConvNet::new(&mut store, "backbone", &spec, input, &mut rng)?;
        restore_store(&archive, "", &mut store)?;
        let mut b = Self {
            name: name.into(),
            source: BackendSource::External,
            mode: BackendMode::Frozen,
            stack_mode: StackMode::PerFrame,
            net,
            store,
        };
        b.set_mode(mode)?;
        Ok(b)
    }

    pub fn save_weights(&self, path: &Path) -> Result<(), EncoderError> {
        let meta = serde_json::json!({
            "name": self.name,
            "spec": self.net.spec(),
            "input": self.net.input_shape(),
        });
        let mut archive = Archive::new(meta);
        push_store(&mut archive, "", &self.store);
        archive.save(path)?;
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> BackendSource {
        self.source
    }

    pub fn mode(&self) -> BackendMode {
        self.mode
    }

    pub fn stack_mode(&self) -> StackMode {
        self.stack_mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    /// Features per network input (per frame for per-frame stacking).
    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Width of [`encode`](Self::encode) output for a stack of `depth`.
    pub fn stacked_dim(&self, depth: usize) -> usize {
        match self.stack_mode {
            StackMode::PerFrame => depth * self.output_dim(),
            StackMode::Channels => self.output_dim(),
        }
    }

    /// Width of [`encode_fused`](Self::encode_fused) output.
    pub fn fused_dim(&self, depth: usize) -> usize {
        match self.stack_mode {
            StackMode::PerFrame => fused_dim(self.output_dim(), depth),
            StackMode::Channels => self.output_dim(),
        }
    }

    pub fn set_mode(&mut self, mode: BackendMode) -> Result<(), EncoderError> {
        let allowed = match self.source {
            BackendSource::Scratch => mode == BackendMode::Trainable,
            BackendSource::External => mode != BackendMode::Trainable,
        };
        if !allowed {
            return Err(EncoderError::UnsupportedTransition { origin: self.source, from: self.mode, to: mode });
        }
        self.mode = mode;
        self.store.set_frozen(mode == BackendMode::Frozen);
        Ok(())
    }

    /// Copy with a distinct parameter store.
    pub fn duplicate(&self) -> Self {
        Self {
            name: self.name.clone(),
            source: self.source,
            mode: self.mode,
            stack_mode: self.stack_mode,
            net: self.net.clone(),
            store: self.store.duplicate(),
        }
    }

    /// Hash of (name, weight bytes, mode).
    pub fn fingerprint(&self) -> String {
        let mut archive = Archive::<T>::new(serde_json::Value::Null);
        push_store(&mut archive, "", &self.store);
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update([0]);
        h.update(archive.encode());
        h.update([0]);
        h.update(self.mode.name().as_bytes());
        hex::encode(h.finalize())
    }

    /// Converts a batch to the network input: unit-float minus 0.5, frames
    /// resized to the native resolution when this is an external backbone.
    pub fn prepare(&self, batch: &ObservationBatch) -> Result<Tensor<T>, EncoderError> {
        let (c, h, w) = self.net.input_shape();
        let [n, bc, bh, bw] = batch.shape();
        let t = batch.stack_depth();
        let (frame_c, frames) = match self.stack_mode {
            StackMode::PerFrame => (batch.base_channels(), n * t),
            StackMode::Channels => (bc, n),
        };
        if frame_c != c {
            return Err(EncoderError::Shape(format!("encoder expects {c} channels per input, batch has {frame_c}")));
        }
        let unit = batch.to_domain(ValueDomain::UnitFloat);
        let data: Vec<T> = if (bh, bw) == (h, w) {
            unit.data().iter().map(|&v| T::of(v as f64 - 0.5)).collect()
        } else if self.source == BackendSource::External {
            let plane = bh * bw;
            let mut out = Vec::with_capacity(frames * c * h * w);
            for p in unit.data().chunks(plane) {
                out.extend(resize_bilinear(p, bh, bw, h, w).into_iter().map(|v| T::of(v as f64 - 0.5)));
            }
            out
        } else {
            return Err(EncoderError::Shape(format!("scratch encoder expects {h}x{w} frames, got {bh}x{bw}")));
        };
        Ok(Tensor::new(vec![frames, c, h, w], data))
    }

    /// `[N, stacked_dim]` features (per-frame latents concatenated, oldest
    /// first, in per-frame mode).
    pub fn encode(&self, g: &mut Graph<T>, batch: &ObservationBatch) -> Result<Var, EncoderError> {
        let x = self.prepare(batch)?;
        self.encode_prepared(g, x, batch.len(), batch.stack_depth())
    }

    pub fn encode_prepared(&self, g: &mut Graph<T>, x: Tensor<T>, n: usize, depth: usize) -> Result<Var, EncoderError> {
        let xi = g.input(x);
        let z = self.net.forward(g, &self.store, xi)?;
        match self.stack_mode {
            StackMode::PerFrame => Ok(g.reshape(z, vec![n, depth * self.output_dim()])?),
            StackMode::Channels => Ok(z),
        }
    }

    /// Like [`encode`](Self::encode), with Flare fusion in per-frame mode.
    pub fn encode_fused(&self, g: &mut Graph<T>, batch: &ObservationBatch) -> Result<Var, EncoderError> {
        let z = self.encode(g, batch)?;
        match self.stack_mode {
            StackMode::PerFrame => flare_graph(g, z, batch.stack_depth()),
            StackMode::Channels => Ok(z),
        }
    }

    /// Evaluation-mode forward pass (running batch-norm statistics).
    pub fn forward(&self, batch: &ObservationBatch, fuse: bool) -> Result<Tensor<T>, EncoderError> {
        let mut g = Graph::new(false);
        let z = if fuse { self.encode_fused(&mut g, batch)? } else { self.encode(&mut g, batch)? };
        Ok(g.value(z).clone())
    }

    /// Commits queued batch-norm statistics (frozen stores never change).
    pub fn commit_buffers(&mut self, g: &mut Graph<T>) {
        if !self.store.is_frozen() {
            g.commit_buffers(&mut self.store);
        }
    }
}

/// Instantiates the full-size scratch encoder of `variant` for `input`
/// (per-frame shape for `bc`, stacked shape otherwise).
pub fn build_scratch_encoder<T: Elem>(
    variant: EncoderVariant,
    input: (usize, usize, usize),
    seed: u64,
) -> Result<Backend<T>, EncoderError> {
    let stack = match variant {
        EncoderVariant::Bc => StackMode::PerFrame,
        EncoderVariant::Onpolicy | EncoderVariant::Offpolicy => StackMode::Channels,
    };
    Backend::scratch(&ConvNetSpec::scratch(variant), input, stack, seed)
}

/// Resolves a backbone by name: the bundled mock needs no weights, every
/// other name needs a weight file.
pub fn load_backbone<T: Elem>(
    name: &str,
    weights: Option<&Path>,
    mode: BackendMode,
    native: usize,
) -> Result<Backend<T>, EncoderError> {
    match (name, weights) {
        (_, Some(path)) => Backend::from_weight_file(name, path, mode),
        (MOCK_PRETRAINED, None) => Backend::mock_pretrained(native, mode),
        (other, None) => Err(EncoderError::Format(format!("backbone `{other}` needs a weight file"))),
    }
}
