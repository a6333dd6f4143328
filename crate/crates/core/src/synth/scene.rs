use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::synth::lcg::LcgState;
use crate::tensor::Tensor;

/// One Gaussian radial basis: `height * exp(-|p - center|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfKernel {
    pub center: (f64, f64),
    pub height: f64,
}

/// Gaussian kernel `G(p; mu, sigma)` with unit peak.
pub fn gaussian_bump(p: (f64, f64), mu: (f64, f64), sigma: f64) -> f64 {
    let d2 = (p.0 - mu.0).powi(2) + (p.1 - mu.1).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Sum of Gaussian radial bases sharing one width.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfSurface {
    pub kernels: Vec<RbfKernel>,
    pub sigma: f64,
}

impl RbfSurface {
    pub fn eval(&self, p: (f64, f64)) -> f64 {
        self.kernels
            .iter()
            .map(|k| k.height * gaussian_bump(p, k.center, self.sigma))
            .sum()
    }

    /// Samples the surface on the `n x n` pixel lattice as a `(1, n, n)` tensor.
    pub fn render(&self, n: usize) -> Tensor<f64> {
        let s2 = 2.0 * self.sigma * self.sigma;
        let mut out = Tensor::zeros(&[1, n, n]);
        // G factorises over rows and columns.
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        for k in &self.kernels {
            for i in 0..n {
                rows[i] = (-(i as f64 - k.center.0).powi(2) / s2).exp();
                cols[i] = k.height * (-(i as f64 - k.center.1).powi(2) / s2).exp();
            }
            for (r, row) in out.data_mut().chunks_mut(n).enumerate() {
                for (v, &c) in row.iter_mut().zip(&cols) {
                    *v += rows[r] * c;
                }
            }
        }
        out
    }
}

/// Draws `n_kernels` centres on the `n x n` lattice and heights in `[amp_lo, amp_hi]`.
pub fn rbf_surface(
    rng: &mut LcgState,
    n_kernels: usize,
    sigma: f64,
    amp_lo: f64,
    amp_hi: f64,
    n: usize,
) -> Result<(RbfSurface, Tensor<f64>)> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("rbf width must be positive, got {sigma}")));
    }
    if amp_lo > amp_hi {
        return Err(Error::param(format!("empty amplitude range [{amp_lo}, {amp_hi}]")));
    }
    if n == 0 {
        return Err(Error::param("surface size must be positive"));
    }
    let kernels = (0..n_kernels)
        .map(|_| {
            let center = draw_center(rng, n);
            let height = rng.uniform(amp_lo, amp_hi);
            RbfKernel { center, height }
        })
        .collect();
    let surface = RbfSurface { kernels, sigma };
    let field = surface.render(n);
    Ok((surface, field))
}

fn draw_center(rng: &mut LcgState, n: usize) -> (f64, f64) {
    let r = rng.below(n) as f64;
    let c = rng.below(n) as f64;
    (r, c)
}

/// Which normalised pattern a network is trained to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// `1 + cos(phi)`
    #[default]
    Cosine,
    /// `1 + sin(phi)`, the quadrature pattern.
    Sine,
}

impl TargetMode {
    pub fn name(self) -> &'static str {
        match self {
            TargetMode::Cosine => "cosine",
            TargetMode::Sine => "sine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cos" => Ok(TargetMode::Cosine),
            "sine" | "sin" => Ok(TargetMode::Sine),
            other => Err(Error::param(format!("unknown target mode '{other}'"))),
        }
    }
}

/// Number of phase bases in a scene.
pub const PHASE_KERNELS: usize = 10;

/// Latent fields of one synthetic fringe pattern.
#[derive(Debug, Clone)]
pub struct FringeScene {
    pub size: usize,
    /// Background illumination `a(p)`.
    pub background: Tensor<f64>,
    /// Contrast `b(p)`.
    pub contrast: Tensor<f64>,
    /// Phase `phi(p)` in radians.
    pub phase: Tensor<f64>,
    pub phase_surface: RbfSurface,
    pub background_center: (f64, f64),
    pub contrast_center: (f64, f64),
}

/// Widths `(sigma_phi, sigma_a, sigma_b)` for an `n x n` scene.
pub fn scene_sigmas(n: usize) -> (f64, f64, f64) {
    let n = n as f64;
    (n / 6.0, n / 2.0, n)
}

/// Draws a random scene: ten-basis phase, single-bump background and contrast.
pub fn make_scene(rng: &mut LcgState, n: usize) -> Result<FringeScene> {
    if n < 32 {
        return Err(Error::param(format!("scene size must be at least 32, got {n}")));
    }
    let (sigma_phi, sigma_a, sigma_b) = scene_sigmas(n);
    let amp = 180.0 / PI;
    let (phase_surface, phase) = rbf_surface(rng, PHASE_KERNELS, sigma_phi, -amp, amp, n)?;
    let background_center = draw_center(rng, n);
    let contrast_center = draw_center(rng, n);
    let background = RbfSurface {
        kernels: vec![RbfKernel { center: background_center, height: 1.0 }],
        sigma: sigma_a,
    }
    .render(n);
    let contrast = RbfSurface {
        kernels: vec![RbfKernel { center: contrast_center, height: 1.0 }],
        sigma: sigma_b,
    }
    .render(n);
    Ok(FringeScene {
        size: n,
        background,
        contrast,
        phase,
        phase_surface,
        background_center,
        contrast_center,
    })
}

/// The normalised pattern `1 + cos(phi)` or `1 + sin(phi)`.
pub fn render_normalised(scene: &FringeScene, target: TargetMode) -> Tensor<f64> {
    match target {
        TargetMode::Cosine => scene.phase.map(|p| 1.0 + p.cos()),
        TargetMode::Sine => scene.phase.map(|p| 1.0 + p.sin()),
    }
}
