//! Image augmentations for policy learning.
//!
//! Every kernel is split into a pure, draw-driven function (`shift`,
//! `jitter`, `overlay`) and a sampling layer ([`Augmenter`]) that derives the
//! per-sample draws from an [`RngPolicy`] counter. All frames of a stacked
//! sample share one draw.

mod distractor;
mod jitter;
mod shift;
mod spec;

use rand::Rng;
use vmc_core::{CoreError, ObservationBatch, RngPolicy};

pub use distractor::DistractorSource;
pub use jitter::{jitter, JitterDraw};
pub use shift::{random_shift, shift, ShiftDraw};
pub use spec::{AugmentKind, AugmentationSpec, JitterParams};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("pad {pad} too large for {height}x{width} frames (needs 2*pad <= min side)")]
    InvalidPad { pad: usize, height: usize, width: usize },
    #[error("invalid augmentation parameter: {0}")]
    InvalidParameter(String),
    #[error("overlay requested without a distractor source")]
    MissingDistractor,
    #[error("augmentation configuration: {0}")]
    Config(String),
    #[error("draws do not match the batch: {0}")]
    DrawMismatch(String),
    #[error("distractor image: {0}")]
    Image(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// The random choices made for one sample, mirroring the spec tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    None,
    Shift(ShiftDraw),
    Jitter(JitterDraw),
    /// Index into the distractor pool.
    Overlay(usize),
    Composite(Vec<Draw>),
}

/// Interpolates every frame with the distractor chosen for its sample:
/// `(1 - alpha) * obs + alpha * distractor`.
pub fn overlay(
    batch: &ObservationBatch,
    source: &DistractorSource,
    alpha: f32,
    picks: &[usize],
) -> Result<ObservationBatch, AugmentError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AugmentError::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    if source.is_empty() {
        return Err(AugmentError::MissingDistractor);
    }
    let [n, _, h, w] = batch.shape();
    if picks.len() != n {
        return Err(AugmentError::DrawMismatch(format!("{} picks for {n} samples", picks.len())));
    }
    if source.frame_shape() != (batch.base_channels(), h, w) {
        return Err(CoreError::Shape(format!(
            "distractors are {:?}, frames are {:?}",
            source.frame_shape(),
            (batch.base_channels(), h, w)
        ))
        .into());
    }
    let domain = batch.domain();
    let scale = domain.max_value();
    let mut out = Vec::with_capacity(batch.data().len());
    for (i, &pick) in picks.iter().enumerate() {
        let d = source.get(pick).ok_or_else(|| {
            AugmentError::DrawMismatch(format!("distractor {pick} out of {}", source.len()))
        })?;
        for t in 0..batch.stack_depth() {
            out.extend(
                batch
                    .frame(i, t)
                    .iter()
                    .zip(d)
                    .map(|(&x, &dv)| domain.project((1.0 - alpha) * x + alpha * (dv * scale))),
            );
        }
    }
    Ok(batch.with_data(out, domain))
}

/// Samples draws from an [`AugmentationSpec`] and applies them.
#[derive(Debug, Clone)]
pub struct Augmenter {
    spec: AugmentationSpec,
    source: Option<DistractorSource>,
}

impl Augmenter {
    pub fn new(spec: AugmentationSpec, source: Option<DistractorSource>) -> Result<Self, AugmentError> {
        spec.validate()?;
        if spec.uses_overlay() && source.as_ref().is_none_or(DistractorSource::is_empty) {
            return Err(AugmentError::MissingDistractor);
        }
        Ok(Self { spec, source })
    }

    pub fn identity() -> Self {
        Self { spec: AugmentationSpec::none(), source: None }
    }

    pub fn spec(&self) -> &AugmentationSpec {
        &self.spec
    }

    pub fn is_identity(&self) -> bool {
        self.spec.is_identity()
    }

    /// Draw for the sample with the given counter. Composite children use
    /// their own derived streams so adding a child does not perturb the
    /// draws of the others.
    pub fn sample_draw(&self, rng: &RngPolicy, counter: u64) -> Draw {
        self.draw_node(&self.spec, "augment", rng, counter)
    }

    fn draw_node(&self, spec: &AugmentationSpec, path: &str, policy: &RngPolicy, counter: u64) -> Draw {
        match spec.kind {
            AugmentKind::None => Draw::None,
            AugmentKind::Shift => {
                let mut r = policy.rng(path, counter);
                let p = spec.pad as i32;
                Draw::Shift(ShiftDraw { dx: r.random_range(-p..=p), dy: r.random_range(-p..=p) })
            }
            AugmentKind::Jitter => Draw::Jitter(JitterDraw::sample(&spec.jitter, &mut policy.rng(path, counter))),
            AugmentKind::Overlay => {
                let len = self.source.as_ref().map_or(1, DistractorSource::len).max(1);
                Draw::Overlay(policy.rng(path, counter).random_range(0..len))
            }
            AugmentKind::Composite => Draw::Composite(
                spec.children
                    .iter()
                    .enumerate()
                    .map(|(k, c)| self.draw_node(c, &format!("{path}/{k}"), policy, counter))
                    .collect(),
            ),
        }
    }

    /// Augments `batch`, drawing sample `i` from `counters[i]`.
    pub fn apply(
        &self,
        batch: &ObservationBatch,
        rng: &RngPolicy,
        counters: &[u64],
    ) -> Result<ObservationBatch, AugmentError> {
        if counters.len() != batch.len() {
            return Err(AugmentError::DrawMismatch(format!(
                "{} counters for {} samples",
                counters.len(),
                batch.len()
            )));
        }
        if self.is_identity() {
            return Ok(batch.clone());
        }
        let draws: Vec<Draw> = counters.iter().map(|&c| self.sample_draw(rng, c)).collect();
        self.apply_draws(batch, &draws)
    }

    /// Applies explicit per-sample draws (one per sample).
    pub fn apply_draws(&self, batch: &ObservationBatch, draws: &[Draw]) -> Result<ObservationBatch, AugmentError> {
        if draws.len() != batch.len() {
            return Err(AugmentError::DrawMismatch(format!("{} draws for {} samples", draws.len(), batch.len())));
        }
        let refs: Vec<&Draw> = draws.iter().collect();
        self.apply_node(&self.spec, batch, &refs)
    }

    fn apply_node(
        &self,
        spec: &AugmentationSpec,
        batch: &ObservationBatch,
        draws: &[&Draw],
    ) -> Result<ObservationBatch, AugmentError> {
        let mismatch = || AugmentError::DrawMismatch(format!("draw kind does not match {:?} node", spec.kind));
        match spec.kind {
            AugmentKind::None => Ok(batch.clone()),
            AugmentKind::Shift => {
                let d = draws
                    .iter()
                    .map(|d| match d {
                        Draw::Shift(s) => Ok(*s),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                shift(batch, spec.pad, &d)
            }
            AugmentKind::Jitter => {
                let d = draws
                    .iter()
                    .map(|d| match d {
                        Draw::Jitter(j) => Ok(*j),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                jitter(batch, &d)
            }
            AugmentKind::Overlay => {
                let d = draws
                    .iter()
                    .map(|d| match d {
                        Draw::Overlay(k) => Ok(*k),
                        _ => Err(mismatch()),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let source = self.source.as_ref().ok_or(AugmentError::MissingDistractor)?;
                overlay(batch, source, spec.alpha, &d)
            }
            AugmentKind::Composite => {
                let mut cur = batch.clone();
                for (k, child) in spec.children.iter().enumerate() {
                    let sub = draws
                        .iter()
                        .map(|d| match d {
                            Draw::Composite(parts) if parts.len() == spec.children.len() => Ok(&parts[k]),
                            _ => Err(mismatch()),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    cur = self.apply_node(child, &cur, &sub)?;
                }
                Ok(cur)
            }
        }
    }
}

/// Applies `spec` with draws shared across each sample's frame stack.
pub fn apply_stack_consistent(
    spec: &AugmentationSpec,
    source: Option<&DistractorSource>,
    batch: &ObservationBatch,
    rng: &RngPolicy,
    counters: &[u64],
) -> Result<ObservationBatch, AugmentError> {
    Augmenter::new(spec.clone(), source.cloned())?.apply(batch, rng, counters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vmc_core::ValueDomain;

    fn batch(value: f32, n: usize, t: usize) -> ObservationBatch {
        ObservationBatch::new(vec![value; n * 3 * t * 8 * 8], [n, 3 * t, 8, 8], ValueDomain::Uint8, t).unwrap()
    }

    #[test]
    fn overlay_endpoints_and_midpoint() {
        let src = DistractorSource::from_images(vec![vec![200.0 / 255.0; 3 * 64]], (3, 8, 8)).unwrap();
        let b = batch(100.0, 2, 2);
        assert_eq!(overlay(&b, &src, 0.0, &[0, 0]).unwrap(), b);
        assert!(overlay(&b, &src, 0.5, &[0, 0]).unwrap().data().iter().all(|&v| v == 150.0));
        assert!(overlay(&b, &src, 1.0, &[0, 0]).unwrap().data().iter().all(|&v| v == 200.0));
    }

    #[test]
    fn overlay_requires_source() {
        let spec = AugmentationSpec::overlay(0.5);
        assert!(matches!(Augmenter::new(spec.clone(), None), Err(AugmentError::MissingDistractor)));
        let empty = DistractorSource::from_images(vec![], (3, 8, 8)).unwrap();
        assert!(matches!(Augmenter::new(spec, Some(empty)), Err(AugmentError::MissingDistractor)));
    }

    #[test]
    fn none_is_identity() {
        let b = batch(7.0, 3, 3);
        let a = Augmenter::identity();
        assert_eq!(a.apply(&b, &RngPolicy::new(1), &[0, 1, 2]).unwrap(), b);
    }

    #[test]
    fn composite_children_have_independent_streams() {
        let shift = AugmentationSpec::shift(3);
        let a1 = Augmenter::new(AugmentationSpec::composite(vec![shift.clone()]), None).unwrap();
        let a2 = Augmenter::new(
            AugmentationSpec::composite(vec![shift, AugmentationSpec::jitter(JitterParams::default())]),
            None,
        )
        .unwrap();
        let rng = RngPolicy::new(5);
        for c in 0..20 {
            let (Draw::Composite(d1), Draw::Composite(d2)) = (a1.sample_draw(&rng, c), a2.sample_draw(&rng, c)) else {
                panic!("expected composite draws");
            };
            assert_eq!(d1[0], d2[0]);
        }
    }
}
