use serde::{Deserialize, Serialize};

use crate::episode::Frame;
use crate::error::CoreError;

/// Numeric range of the pixel values carried by a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    /// Integral values in `[0, 255]`.
    Uint8,
    /// Real values in `[0, 1]`.
    UnitFloat,
}

impl ValueDomain {
    pub fn max_value(self) -> f32 {
        match self {
            ValueDomain::Uint8 => 255.0,
            ValueDomain::UnitFloat => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueDomain::Uint8 => "uint8",
            ValueDomain::UnitFloat => "unit-float",
        }
    }

    /// Projects an arbitrary value back into the domain (clamp, plus
    /// rounding for the integral domain).
    #[inline]
    pub fn project(self, v: f32) -> f32 {
        match self {
            ValueDomain::Uint8 => v.clamp(0.0, 255.0).round(),
            ValueDomain::UnitFloat => v.clamp(0.0, 1.0),
        }
    }

    fn contains(self, v: f32) -> bool {
        match self {
            ValueDomain::Uint8 => (0.0..=255.0).contains(&v) && v.fract() == 0.0,
            ValueDomain::UnitFloat => (0.0..=1.0).contains(&v),
        }
    }
}

/// Batched images in `[N, C, H, W]` layout, where `C = stack_depth * base_channels`
/// and the frames of one stacked sample occupy consecutive channel blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    data: Vec<f32>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    domain: ValueDomain,
    stack_depth: usize,
}

impl ObservationBatch {
    pub fn new(
        data: Vec<f32>,
        [n, c, h, w]: [usize; 4],
        domain: ValueDomain,
        stack_depth: usize,
    ) -> Result<Self, CoreError> {
        if stack_depth == 0 || c % stack_depth != 0 {
            return Err(CoreError::Shape(format!(
                "channel count {c} is not divisible by stack depth {stack_depth}"
            )));
        }
        if data.len() != n * c * h * w {
            return Err(CoreError::Shape(format!(
                "data length {} does not match [{n}, {c}, {h}, {w}]",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| !domain.contains(v)) {
            return Err(CoreError::OutOfDomain { value: bad, domain: domain.name() });
        }
        Ok(Self { data, n, c, h, w, domain, stack_depth })
    }

    /// Builds a batch without re-validating the value range. Callers must
    /// have produced every value through [`ValueDomain::project`] or an
    /// equivalent range-preserving operation.
    pub fn from_projected(
        data: Vec<f32>,
        [n, c, h, w]: [usize; 4],
        domain: ValueDomain,
        stack_depth: usize,
    ) -> Self {
        debug_assert_eq!(data.len(), n * c * h * w);
        debug_assert!(stack_depth > 0 && c % stack_depth == 0);
        Self { data, n, c, h, w, domain, stack_depth }
    }

    pub fn zeros([n, c, h, w]: [usize; 4], domain: ValueDomain, stack_depth: usize) -> Result<Self, CoreError> {
        Self::new(vec![0.0; n * c * h * w], [n, c, h, w], domain, stack_depth)
    }

    /// Stacks uint8 frames. `stacks[i]` lists the frames of sample `i`,
    /// oldest first; every sample must have the same depth and frame shape.
    pub fn from_frames(stacks: &[Vec<&Frame>]) -> Result<Self, CoreError> {
        let first = stacks
            .first()
            .and_then(|s| s.first())
            .ok_or(CoreError::InsufficientData { needed: 1, got: 0 })?;
        let shape = first.shape();
        let depth = stacks[0].len();
        let mut data = Vec::with_capacity(stacks.len() * depth * shape.len());
        for stack in stacks {
            if stack.len() != depth {
                return Err(CoreError::Shape(format!(
                    "stack depth {} differs from {depth}",
                    stack.len()
                )));
            }
            for frame in stack {
                if frame.shape() != shape {
                    return Err(CoreError::Shape(format!(
                        "frame shape {:?} differs from {:?}",
                        frame.shape(),
                        shape
                    )));
                }
                data.extend(frame.pixels().iter().map(|&p| p as f32));
            }
        }
        Ok(Self::from_projected(
            data,
            [stacks.len(), depth * shape.channels, shape.height, shape.width],
            ValueDomain::Uint8,
            depth,
        ))
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn stack_depth(&self) -> usize {
        self.stack_depth
    }

    pub fn base_channels(&self) -> usize {
        self.c / self.stack_depth
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn frame_len(&self) -> usize {
        self.base_channels() * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// Frame `t` (0 = oldest) of sample `i`.
    pub fn frame(&self, i: usize, t: usize) -> &[f32] {
        let s = self.sample(i);
        let l = self.frame_len();
        &s[t * l..(t + 1) * l]
    }

    /// Converts to the unit-float domain (a copy when already there).
    pub fn to_unit_float(&self) -> ObservationBatch {
        match self.domain {
            ValueDomain::UnitFloat => self.clone(),
            ValueDomain::Uint8 => {
                self.with_data(self.data.iter().map(|v| v / 255.0).collect(), ValueDomain::UnitFloat)
            }
        }
    }

    /// Converts to `target`, rounding when moving into the integral domain.
    pub fn to_domain(&self, target: ValueDomain) -> ObservationBatch {
        if target == self.domain {
            return self.clone();
        }
        match target {
            ValueDomain::UnitFloat => self.to_unit_float(),
            ValueDomain::Uint8 => self.with_data(
                self.data.iter().map(|v| ValueDomain::Uint8.project(v * 255.0)).collect(),
                ValueDomain::Uint8,
            ),
        }
    }

    /// Same shape and stacking, new values. `data` must already lie in `domain`.
    pub fn with_data(&self, data: Vec<f32>, domain: ValueDomain) -> ObservationBatch {
        Self::from_projected(data, self.shape(), domain, self.stack_depth)
    }

    /// Splits a stacked batch into `T` single-frame batches.
    pub fn split_frames(&self) -> Vec<ObservationBatch> {
        let base = self.base_channels();
        (0..self.stack_depth)
            .map(|t| {
                let mut data = Vec::with_capacity(self.n * self.frame_len());
                for i in 0..self.n {
                    data.extend_from_slice(self.frame(i, t));
                }
                Self::from_projected(data, [self.n, base, self.h, self.w], self.domain, 1)
            })
            .collect()
    }

    /// Inverse of [`split_frames`](Self::split_frames).
    pub fn stack_frames(frames: &[ObservationBatch]) -> Result<ObservationBatch, CoreError> {
        let first = frames.first().ok_or(CoreError::InsufficientData { needed: 1, got: 0 })?;
        let [n, c, h, w] = first.shape();
        for f in frames {
            if f.shape() != [n, c, h, w] || f.domain != first.domain || f.stack_depth != 1 {
                return Err(CoreError::Shape("frames to stack disagree in shape or domain".into()));
            }
        }
        let t = frames.len();
        let fl = c * h * w;
        let mut data = Vec::with_capacity(n * t * fl);
        for i in 0..n {
            for f in frames {
                data.extend_from_slice(&f.data[i * fl..(i + 1) * fl]);
            }
        }
        Ok(Self::from_projected(data, [n, t * c, h, w], first.domain, t))
    }

    /// Selects samples by index (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> ObservationBatch {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self::from_projected(data, [indices.len(), self.c, self.h, self.w], self.domain, self.stack_depth)
    }

    /// Concatenates batches along the sample axis.
    pub fn concat(parts: &[ObservationBatch]) -> Result<ObservationBatch, CoreError> {
        let first = parts.first().ok_or(CoreError::InsufficientData { needed: 1, got: 0 })?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.c != first.c || p.h != first.h || p.w != first.w || p.domain != first.domain || p.stack_depth != first.stack_depth {
                return Err(CoreError::Shape("batches to concatenate disagree".into()));
            }
            data.extend_from_slice(&p.data);
            n += p.n;
        }
        Ok(Self::from_projected(data, [n, first.c, first.h, first.w], first.domain, first.stack_depth))
    }
}
