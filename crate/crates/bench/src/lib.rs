//! Shared fixtures for the benchmarks.

use lnrm_core::synth::{self, UgcParams};
use lnrm_core::Frame;

pub fn ugc_frame(size: usize, planes: usize) -> Frame {
    synth::ugc(7, size, size, planes, UgcParams::default()).expect("valid synthetic frame")
}

pub fn macroblock(seed: u64) -> Vec<u8> {
    synth::ugc(seed, 16, 16, 1, UgcParams::default())
        .expect("valid synthetic frame")
        .plane(0)
        .to_vec()
}
