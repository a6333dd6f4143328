//! Browser demo: synthesise corrupted/clean fringe pairs, inspect the sliding-window
//! patch grid, and estimate random-patch coverage.
//!
//! Every export is a thin wrapper over a plain Rust function so the logic is
//! testable off the browser.

use fringe_core::dataset::coverage_estimate;
use fringe_core::metrics::{image_metrics, ImageMetrics};
use fringe_core::recon::patch_grid;
use fringe_core::synth::{generate_pair, LcgState, NoiseSpec, TargetMode};
use fringe_core::Tensor;
use wasm_bindgen::prelude::*;

/// Largest scene the page may request; keeps the tab responsive.
pub const MAX_SIZE: usize = 512;

/// A generated pair rendered for display.
#[wasm_bindgen]
pub struct SceneView {
    size: usize,
    corrupted: Vec<u8>,
    clean: Vec<u8>,
    metrics: ImageMetrics,
}

#[wasm_bindgen]
impl SceneView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// RGBA bytes of the corrupted observation, `[0, 2]` mapped to black..white.
    pub fn corrupted_rgba(&self) -> Vec<u8> {
        self.corrupted.clone()
    }

    /// RGBA bytes of the normalised target.
    pub fn clean_rgba(&self) -> Vec<u8> {
        self.clean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mae(&self) -> f64 {
        self.metrics.mae
    }

    #[wasm_bindgen(getter)]
    pub fn mse(&self) -> f64 {
        self.metrics.mse
    }

    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.metrics.psnr
    }
}

/// Greyscale RGBA with `[0, 2]` mapped to `[0, 255]`, clamped.
pub fn to_rgba(img: &Tensor<f64>) -> Vec<u8> {
    img.data()
        .iter()
        .flat_map(|&v| {
            let g = ((v / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

pub fn scene_view(seed: u64, size: usize, noise: &str, target: &str) -> fringe_core::Result<SceneView> {
    if size > MAX_SIZE {
        return Err(fringe_core::Error::Parameter(format!("size {size} exceeds the demo limit {MAX_SIZE}")));
    }
    let noise = NoiseSpec::parse(noise)?;
    let target = TargetMode::parse(target)?;
    let g = generate_pair(seed, 0, size, &noise, target)?;
    Ok(SceneView {
        size,
        corrupted: to_rgba(&g.corrupted),
        clean: to_rgba(&g.clean),
        metrics: image_metrics(&g.corrupted, &g.clean)?,
    })
}

/// Anchors along one side plus the total patch count for a square image.
/// Strides larger than the patch are rejected, as the reconstructor would leave gaps.
pub fn grid_summary(size: usize, patch: usize, stride: usize) -> fringe_core::Result<(Vec<u32>, usize)> {
    if stride > patch {
        return Err(fringe_core::Error::Parameter(format!(
            "stride {stride} leaves gaps between {patch}-pixel patches"
        )));
    }
    let g = patch_grid(size, patch, stride)?;
    let k = g.kappa();
    Ok((g.anchors.iter().map(|&a| a as u32).collect(), k * k))
}

fn js_err(e: fringe_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Generates scene `seed` with the given noise spec (e.g. `gaussian:0.15+pupil:0.8`)
/// and target (`cosine` or `sine`).
#[wasm_bindgen]
pub fn generate_scene(seed: u32, size: usize, noise: &str, target: &str) -> Result<SceneView, JsError> {
    scene_view(seed as u64, size, noise, target).map_err(js_err)
}

/// Sliding-window anchors along one dimension.
#[wasm_bindgen]
pub fn grid_anchors(size: usize, patch: usize, stride: usize) -> Result<Vec<u32>, JsError> {
    grid_summary(size, patch, stride).map(|(a, _)| a).map_err(js_err)
}

/// Total number of patch inferences for a square image.
#[wasm_bindgen]
pub fn grid_total(size: usize, patch: usize, stride: usize) -> Result<usize, JsError> {
    grid_summary(size, patch, stride).map(|(_, n)| n).map_err(js_err)
}

/// Mean fraction of an image covered by `patches` uniformly placed patches.
#[wasm_bindgen]
pub fn coverage(patches: usize, size: usize, patch: usize, trials: usize, seed: u32) -> Result<f64, JsError> {
    coverage_estimate(patches, size, patch, trials, &mut LcgState::seeded(seed as u64)).map_err(js_err)
}
