//! Indexed scene corpora: scene `i` of seed `s` is reproducible on its own.

use crate::error::Result;
use crate::synth::lcg::LcgState;
use crate::synth::noise::{render_pair, NoiseSpec};
use crate::synth::scene::{make_scene, FringeScene, TargetMode};
use crate::tensor::Tensor;

/// One generated scene with its corrupted observation and clean target.
#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub index: u64,
    pub scene: FringeScene,
    pub corrupted: Tensor<f64>,
    pub clean: Tensor<f64>,
}

/// Scene `index` of the corpus seeded with `seed`, drawn from its own derived stream.
pub fn generate_pair(seed: u64, index: u64, size: usize, noise: &NoiseSpec, target: TargetMode) -> Result<GeneratedPair> {
    let mut rng = LcgState::derived(seed, index);
    let scene = make_scene(&mut rng, size)?;
    let (corrupted, clean) = render_pair(&scene, noise, target, &mut rng)?;
    Ok(GeneratedPair { index, scene, corrupted, clean })
}

/// Scenes `start..start + count`.
pub fn generate_corpus(
    seed: u64,
    start: u64,
    count: usize,
    size: usize,
    noise: &NoiseSpec,
    target: TargetMode,
) -> Result<Vec<GeneratedPair>> {
    (start..start + count as u64).map(|i| generate_pair(seed, i, size, noise, target)).collect()
}
