//! Corruption models applied when rendering the network input.

use std::fmt;

use crate::error::{Error, Result};
use crate::synth::lcg::LcgState;
use crate::synth::scene::{render_normalised, FringeScene, TargetMode};
use crate::tensor::Tensor;

/// Phase-noise range of the speckle model, in radians.
pub const SPECKLE_PHASE_RANGE: (f64, f64) = (1.0, 100.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    None,
    /// Additive `N(0, sigma^2)`.
    Gaussian { sigma: f64 },
    /// Saturates `fraction` of the pixels, half to 0 and half to 1.
    SaltPepper { fraction: f64 },
    /// Speckle phase noise only.
    Speckle,
    /// Speckle phase noise plus additive `N(0, sigma^2)` inside the speckle model.
    GaussianSpeckle { sigma: f64 },
}

/// A corruption scenario: one noise kind, optionally followed by a circular pupil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Pupil diameter as a fraction of the image size.
    pub pupil: Option<f64>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { kind: NoiseKind::None, pupil: None }
    }

    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Gaussian { sigma }, pupil: None }
    }

    pub fn with_pupil(mut self, diameter_fraction: f64) -> Self {
        self.pupil = Some(diameter_fraction);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::Gaussian { sigma } | NoiseKind::GaussianSpeckle { sigma } => {
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::param(format!("noise sigma must be >= 0, got {sigma}")));
                }
            }
            NoiseKind::SaltPepper { fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::param(format!("salt-pepper fraction {fraction} outside [0,1]")));
                }
            }
            NoiseKind::None | NoiseKind::Speckle => {}
        }
        if let Some(d) = self.pupil {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::param(format!("pupil diameter fraction {d} outside (0,1]")));
            }
        }
        Ok(())
    }

    /// Parses `kind[:param][+pupil:fraction]`, e.g. `gaussian_speckle:0.15+pupil:0.8`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = text.split('+');
        let head = parts.next().unwrap_or("").trim();
        let (name, arg) = match head.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (head, None),
        };
        let num = |a: Option<&str>, default: Option<f64>| -> Result<f64> {
            match (a, default) {
                (Some(a), _) => a
                    .parse::<f64>()
                    .map_err(|_| Error::param(format!("bad noise parameter '{a}'"))),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(Error::param(format!("noise kind '{name}' needs a parameter"))),
            }
        };
        let kind = match name {
            "none" => NoiseKind::None,
            "gaussian" => NoiseKind::Gaussian { sigma: num(arg, None)? },
            "salt_pepper" => NoiseKind::SaltPepper { fraction: num(arg, Some(0.25))? },
            "speckle" => NoiseKind::Speckle,
            "gaussian_speckle" => NoiseKind::GaussianSpeckle { sigma: num(arg, None)? },
            other => return Err(Error::param(format!("unknown noise kind '{other}'"))),
        };
        let mut spec = NoiseSpec { kind, pupil: None };
        for extra in parts {
            let (name, arg) = match extra.trim().split_once(':') {
                Some((n, a)) => (n, Some(a)),
                None => (extra.trim(), None),
            };
            if name != "pupil" {
                return Err(Error::param(format!("unknown noise modifier '{name}'")));
            }
            spec.pupil = Some(num(arg, Some(0.8))?);
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::None => write!(f, "none")?,
            NoiseKind::Gaussian { sigma } => write!(f, "gaussian:{sigma}")?,
            NoiseKind::SaltPepper { fraction } => write!(f, "salt_pepper:{fraction}")?,
            NoiseKind::Speckle => write!(f, "speckle")?,
            NoiseKind::GaussianSpeckle { sigma } => write!(f, "gaussian_speckle:{sigma}")?,
        }
        if let Some(d) = self.pupil {
            write!(f, "+pupil:{d}")?;
        }
        Ok(())
    }
}

/// Renders the corrupted observation of `scene`.
///
/// Additive kinds use `a + b cos(phi) + eta`; speckle kinds use
/// `a + b |cos(phi + eta1) + cos(eta1)| + eta2` with the same `eta1` draw in both
/// cosines. Salt-pepper saturates after the noiseless render. The pupil is applied last.
pub fn render_corrupted(scene: &FringeScene, noise: &NoiseSpec, rng: &mut LcgState) -> Result<Tensor<f64>> {
    noise.validate()?;
    let a = scene.background.data();
    let b = scene.contrast.data();
    let phi = scene.phase.data();
    let n = phi.len();
    let mut out = Vec::with_capacity(n);
    match noise.kind {
        NoiseKind::None | NoiseKind::SaltPepper { .. } => {
            out.extend((0..n).map(|i| a[i] + b[i] * phi[i].cos()));
        }
        NoiseKind::Gaussian { sigma } => {
            out.extend((0..n).map(|i| a[i] + b[i] * phi[i].cos() + sigma * rng.gaussian()));
        }
        NoiseKind::Speckle | NoiseKind::GaussianSpeckle { .. } => {
            let sigma = match noise.kind {
                NoiseKind::GaussianSpeckle { sigma } => sigma,
                _ => 0.0,
            };
            let (lo, hi) = SPECKLE_PHASE_RANGE;
            for i in 0..n {
                let eta1 = rng.uniform(lo, hi);
                let eta2 = if sigma > 0.0 { sigma * rng.gaussian() } else { 0.0 };
                out.push(a[i] + b[i] * ((phi[i] + eta1).cos() + eta1.cos()).abs() + eta2);
            }
        }
    }
    if let NoiseKind::SaltPepper { fraction } = noise.kind {
        salt_pepper(&mut out, fraction, rng);
    }
    let mut img = Tensor::new(scene.phase.dims().to_vec(), out)?;
    if let Some(d) = noise.pupil {
        pupil_mask(&mut img, d)?;
    }
    Ok(img)
}

/// Saturates exactly `floor(fraction * len)` distinct pixels: the first half of the
/// chosen set to 0, the rest to 1.
fn salt_pepper(img: &mut [f64], fraction: f64, rng: &mut LcgState) {
    let n = img.len();
    let k = (fraction * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    for (rank, &p) in idx[..k].iter().enumerate() {
        img[p] = if rank < k / 2 { 0.0 } else { 1.0 };
    }
}

fn pupil_mask(img: &mut Tensor<f64>, diameter_fraction: f64) -> Result<()> {
    if !(diameter_fraction > 0.0 && diameter_fraction <= 1.0) {
        return Err(Error::param(format!(
            "pupil diameter fraction {diameter_fraction} outside (0,1]"
        )));
    }
    let (ch, rows, cols) = img.shape3()?;
    let radius = diameter_fraction * rows.min(cols) as f64 / 2.0;
    let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let data = img.data_mut();
    for c in 0..ch {
        for r in 0..rows {
            for w in 0..cols {
                if (r as f64 - cr).hypot(w as f64 - cc) > radius {
                    data[(c * rows + r) * cols + w] = 0.0;
                }
            }
        }
    }
    Ok(())
}

/// Zeroes everything outside the centred circle of diameter `diameter_fraction * size`
/// in both the corrupted input and the target.
pub fn apply_pupil(
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    diameter_fraction: f64,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    x.check_same_dims(y)?;
    let (mut x, mut y) = (x.clone(), y.clone());
    pupil_mask(&mut x, diameter_fraction)?;
    pupil_mask(&mut y, diameter_fraction)?;
    Ok((x, y))
}

/// Corrupted input and matching clean target, with the pupil applied to both.
pub fn render_pair(
    scene: &FringeScene,
    noise: &NoiseSpec,
    target: TargetMode,
    rng: &mut LcgState,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let x = render_corrupted(scene, noise, rng)?;
    let mut y = render_normalised(scene, target);
    if let Some(d) = noise.pupil {
        pupil_mask(&mut y, d)?;
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scene::make_scene;

    fn scene(seed: u64, n: usize) -> FringeScene {
        make_scene(&mut LcgState::seeded(seed), n).unwrap()
    }

    #[test]
    fn noiseless_unit_illumination_is_normalised() {
        let mut s = scene(1, 32);
        s.background.fill(1.0);
        s.contrast.fill(1.0);
        let x = render_corrupted(&s, &NoiseSpec::none(), &mut LcgState::seeded(0)).unwrap();
        assert_eq!(x, render_normalised(&s, TargetMode::Cosine));
    }

    #[test]
    fn gaussian_mean_abs_deviation() {
        let s = scene(2, 256);
        let clean = render_corrupted(&s, &NoiseSpec::none(), &mut LcgState::seeded(0)).unwrap();
        let noisy = render_corrupted(&s, &NoiseSpec::gaussian(0.15), &mut LcgState::seeded(4)).unwrap();
        let mad = noisy.zip_map(&clean, |a, b| (a - b).abs()).unwrap().mean();
        let expected = 0.15 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mad / expected - 1.0).abs() < 0.05, "mad {mad} expected {expected}");
    }

    #[test]
    fn salt_pepper_counts() {
        let s = scene(3, 64);
        let spec = NoiseSpec { kind: NoiseKind::SaltPepper { fraction: 0.25 }, pupil: None };
        let clean = render_corrupted(&s, &NoiseSpec::none(), &mut LcgState::seeded(0)).unwrap();
        let x = render_corrupted(&s, &spec, &mut LcgState::seeded(8)).unwrap();
        let changed: Vec<f64> = x
            .data()
            .iter()
            .zip(clean.data())
            .filter(|(a, b)| a != b)
            .map(|(a, _)| *a)
            .collect();
        assert_eq!(changed.len(), 64 * 64 / 4);
        let zeros = changed.iter().filter(|&&v| v == 0.0).count() as i64;
        let ones = changed.iter().filter(|&&v| v == 1.0).count() as i64;
        assert_eq!(zeros + ones, changed.len() as i64);
        assert!((zeros - ones).abs() <= 1);
    }

    #[test]
    fn speckle_uses_shared_phase_draw() {
        let mut s = scene(4, 32);
        s.background.fill(0.0);
        s.contrast.fill(1.0);
        let spec = NoiseSpec { kind: NoiseKind::Speckle, pupil: None };
        let x = render_corrupted(&s, &spec, &mut LcgState::seeded(5)).unwrap();
        let mut rng = LcgState::seeded(5);
        for (i, &v) in x.data().iter().enumerate() {
            let eta = rng.uniform(1.0, 100.0);
            let phi = s.phase.data()[i];
            assert_eq!(v, ((phi + eta).cos() + eta.cos()).abs());
            assert!((0.0..=2.0).contains(&v));
        }
    }

    #[test]
    fn pupil_geometry() {
        let x = Tensor::full(&[1, 101, 101], 1.0);
        let (px, py) = apply_pupil(&x, &x, 1.0).unwrap();
        assert_eq!(px.at3(0, 0, 0), 0.0);
        assert_eq!(px.at3(0, 100, 100), 0.0);
        assert_eq!(px.at3(0, 50, 50), 1.0);
        assert_eq!(px, py);
        let (twice, _) = apply_pupil(&px, &py, 1.0).unwrap();
        assert_eq!(twice, px);

        let big = Tensor::full(&[1, 512, 512], 1.0);
        let (p, _) = apply_pupil(&big, &big, 0.8).unwrap();
        let frac = p.mean();
        assert!((frac - std::f64::consts::PI * 0.16).abs() < 0.005, "{frac}");
        assert!(apply_pupil(&big, &big, 0.0).is_err());
    }

    #[test]
    fn pair_applies_pupil_to_target() {
        let s = scene(6, 64);
        let (x, y) = render_pair(&s, &NoiseSpec::gaussian(0.1).with_pupil(0.8), TargetMode::Cosine, &mut LcgState::seeded(1)).unwrap();
        assert_eq!(x.at3(0, 0, 0), 0.0);
        assert_eq!(y.at3(0, 0, 0), 0.0);
        assert!(y.at3(0, 32, 32) > 0.0 || s.phase.at3(0, 32, 32).cos() == -1.0);
    }

    #[test]
    fn parse_round_trip() {
        for text in ["none", "gaussian:0.15", "salt_pepper:0.25", "speckle", "gaussian_speckle:0.2+pupil:0.8"] {
            let spec = NoiseSpec::parse(text).unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert!(NoiseSpec::parse("pink").is_err());
        assert!(NoiseSpec::parse("gaussian:-1").is_err());
        assert!(NoiseSpec::parse("gaussian").is_err());
        assert!(NoiseSpec::parse("none+pupil:1.5").is_err());
    }
}
