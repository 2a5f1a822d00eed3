use vmc_core::{ObservationBatch, ValueDomain};
use vmc_encoders::{build_scratch_encoder, Backend, BackendMode, ConvNetSpec, EncoderVariant, Readout, StackMode};

fn zeros(c: usize, side: usize, depth: usize) -> ObservationBatch {
    ObservationBatch::zeros([1, c, side, side], ValueDomain::Uint8, depth).unwrap()
}

#[test]
fn bc_encoder_emits_2048_per_frame() {
    let enc = build_scratch_encoder::<f32>(EncoderVariant::Bc, (3, 256, 256), 0).unwrap();
    assert_eq!(enc.output_dim(), 2048);
    let z = enc.forward(&zeros(3, 256, 1), false).unwrap();
    assert_eq!(z.shape, vec![1, 2048]);
    assert!(z.data.iter().all(|v| v.is_finite()));
}

#[test]
fn onpolicy_map_is_128_before_projection() {
    let spec = ConvNetSpec::scratch(EncoderVariant::Onpolicy);
    assert_eq!(spec.flat_dim((3, 224, 224)).unwrap(), 128);
    let unprojected = ConvNetSpec { readout: Readout::Flatten, ..spec };
    let enc = Backend::<f32>::scratch(&unprojected, (3, 224, 224), StackMode::Channels, 0).unwrap();
    assert_eq!(enc.forward(&zeros(3, 224, 1), false).unwrap().shape, vec![1, 128]);
    let projected = build_scratch_encoder::<f32>(EncoderVariant::Onpolicy, (3, 224, 224), 0).unwrap();
    assert_eq!(projected.forward(&zeros(3, 224, 1), false).unwrap().shape[1], projected.output_dim());
}

#[test]
fn offpolicy_encoder_emits_39200() {
    let enc = build_scratch_encoder::<f32>(EncoderVariant::Offpolicy, (9, 84, 84), 0).unwrap();
    assert_eq!(enc.output_dim(), 39200);
    assert_eq!(enc.forward(&zeros(9, 84, 3), false).unwrap().shape, vec![1, 39200]);
}

#[test]
fn incompatible_inputs_are_shape_errors() {
    assert!(build_scratch_encoder::<f32>(EncoderVariant::Onpolicy, (3, 64, 64), 0).is_err());
    let enc = build_scratch_encoder::<f32>(EncoderVariant::Offpolicy, (9, 84, 84), 0).unwrap();
    assert!(enc.forward(&zeros(9, 80, 3), false).is_err());
    assert!(enc.forward(&zeros(6, 84, 2), false).is_err());
}

#[test]
fn fused_bc_stack_width() {
    let enc = build_scratch_encoder::<f32>(EncoderVariant::Bc, (3, 32, 32), 0).unwrap();
    assert_eq!(enc.output_dim(), 32);
    let z = enc.forward(&zeros(9, 32, 3), true).unwrap();
    assert_eq!(z.shape, vec![1, 5 * 32]);
    assert_eq!(enc.fused_dim(3), 160);
    // identical frames: every difference block is zero
    assert!(z.data[96..].iter().all(|&v| v == 0.0));
}

#[test]
fn mock_backbone_is_2048_at_any_native_resolution() {
    for native in [32, 64, 224] {
        let b = Backend::<f32>::mock_pretrained(native, BackendMode::Frozen).unwrap();
        assert_eq!(b.output_dim(), 2048);
    }
    let b = Backend::<f32>::mock_pretrained(64, BackendMode::Frozen).unwrap();
    // 32x32 frames are upsampled to the native 64x64
    let z = b.forward(&zeros(3, 32, 1), false).unwrap();
    assert_eq!(z.shape, vec![1, 2048]);
}
