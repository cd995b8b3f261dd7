mod common;

use common::{small_frames, small_pcm, worst_gate_error, worst_weight_error};
use sap_core::decoder::{CodeLayout, DecoderModel};
use sap_core::mask::DecoderArchitecture;

#[test]
fn weight_gradients_match_central_differences() {
    let arch = DecoderArchitecture::new(2, 2, 8, 6).unwrap();
    let model = DecoderModel::new(arch, 21).unwrap();
    let layout = CodeLayout::new(&small_pcm());
    let (e, at) = worst_weight_error(&model, &layout, &small_frames());
    assert!(e < 1e-4, "worst relative error {e} at {at}");
}

#[test]
fn gate_gradients_match_central_differences() {
    let arch = DecoderArchitecture::new(2, 2, 8, 6).unwrap();
    let model = DecoderModel::new(arch, 4).unwrap();
    let layout = CodeLayout::new(&small_pcm());
    let (e, at) = worst_gate_error(&model, &layout, &small_frames());
    assert!(e < 1e-4, "worst relative error {e} at {at}");
}

#[test]
fn gradients_hold_under_a_partial_mask() {
    use sap_core::pruning::apply_mask;
    let arch = DecoderArchitecture::new(2, 2, 8, 6).unwrap();
    let mut mask = sap_core::mask::StructuredMask::for_arch(&arch);
    mask.head_bits[0][1] = false;
    mask.ffn_bits[1][2] = false;
    let model = apply_mask(&DecoderModel::new(arch, 8).unwrap(), &mask).unwrap();
    let layout = CodeLayout::new(&small_pcm());
    let (e, at) = worst_weight_error(&model, &layout, &small_frames());
    assert!(e < 1e-4, "worst relative error {e} at {at}");
}
