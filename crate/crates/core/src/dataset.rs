//! Paired training patches cut from generated scenes.
//!
//! File layout (`FPDS`): magic, u32 version, length-prefixed manifest text,
//! u32 pair count, u32 train count, then per pair u32 image id, u32 row,
//! u32 col, FPT1 input patch, FPT1 target patch.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{decode_fpt1, encode_fpt1, put_text, put_u32, ByteReader, KeyValues};
use crate::synth::LcgState;
use crate::tensor::{Real, Tensor};

pub const FPDS_MAGIC: &[u8; 4] = b"FPDS";
pub const FPDS_VERSION: u32 = 1;

/// Corrupted/clean patches cut at the same anchor of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
    pub image: u32,
    pub row: u32,
    pub col: u32,
}

/// Ordered patch pairs; the first `train_count` are for training, the rest for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub pairs: Vec<PatchPair>,
    pub train_count: usize,
    pub manifest: KeyValues,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn train(&self) -> &[PatchPair] {
        &self.pairs[..self.train_count]
    }

    pub fn validation(&self) -> &[PatchPair] {
        &self.pairs[self.train_count..]
    }

    pub fn patch_dims(&self) -> Option<&[usize]> {
        self.pairs.first().map(|p| p.x.dims())
    }
}

/// Draws `n` patch pairs of side `h`: scene uniformly, then the anchor uniformly
/// over every position where the patch fits. `scenes` holds `(corrupted, clean)`.
pub fn sample_patches<T: Real>(
    scenes: &[(Tensor<T>, Tensor<T>)],
    n: usize,
    h: usize,
    rng: &mut LcgState,
) -> Result<PatchDataset> {
    if scenes.is_empty() || n == 0 || h == 0 {
        return Err(Error::param("need at least one scene, one patch and a positive patch size"));
    }
    for (i, (x, y)) in scenes.iter().enumerate() {
        x.check_same_dims(y)?;
        let (_, rows, cols) = x.shape3()?;
        if rows < h || cols < h {
            return Err(Error::param(format!("scene {i} ({rows}x{cols}) is smaller than the {h}x{h} patch")));
        }
    }
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let image = rng.below(scenes.len());
        let (x, y) = &scenes[image];
        let (_, rows, cols) = x.shape3()?;
        let row = rng.below(rows - h + 1);
        let col = rng.below(cols - h + 1);
        pairs.push(PatchPair {
            x: x.crop(row, col, h, h)?.cast(),
            y: y.crop(row, col, h, h)?.cast(),
            image: image as u32,
            row: row as u32,
            col: col as u32,
        });
    }
    let mut manifest = KeyValues::new();
    manifest.set("patches", n);
    manifest.set("patch", h);
    manifest.set("scenes", scenes.len());
    manifest.set("sampling", "uniform scene, uniform anchor");
    Ok(PatchDataset { pairs, train_count: n, manifest })
}

/// Marks the last `val_n` pairs (in sampling order) as validation.
pub fn split_train_val(mut ds: PatchDataset, val_n: usize) -> Result<PatchDataset> {
    if val_n >= ds.len() {
        return Err(Error::param(format!(
            "validation size {val_n} must be smaller than the dataset ({})",
            ds.len()
        )));
    }
    ds.train_count = ds.len() - val_n;
    ds.manifest.set("validation", val_n);
    ds.manifest.set("validation_rule", "tail of sampling order");
    Ok(ds)
}

/// Monte-Carlo estimate of the mean fraction of an `n x n` image covered by
/// `patches_per_image` uniformly placed `h x h` patches.
pub fn coverage_estimate(patches_per_image: usize, n: usize, h: usize, trials: usize, rng: &mut LcgState) -> Result<f64> {
    if trials == 0 {
        return Err(Error::param("coverage needs at least one trial"));
    }
    if h == 0 || h > n {
        return Err(Error::param(format!("patch {h} does not fit a {n}x{n} image")));
    }
    let span = n - h + 1;
    let mut total = 0.0;
    let mut diff = vec![0i32; (n + 1) * (n + 1)];
    for _ in 0..trials {
        diff.iter_mut().for_each(|d| *d = 0);
        for _ in 0..patches_per_image {
            let r = rng.below(span);
            let c = rng.below(span);
            diff[r * (n + 1) + c] += 1;
            diff[r * (n + 1) + c + h] -= 1;
            diff[(r + h) * (n + 1) + c] -= 1;
            diff[(r + h) * (n + 1) + c + h] += 1;
        }
        // 2D prefix sum turns corner marks into per-pixel patch counts.
        let mut covered = 0usize;
        let mut above = vec![0i32; n];
        for r in 0..n {
            let mut run = 0i32;
            for (c, acc) in above.iter_mut().enumerate() {
                run += diff[r * (n + 1) + c];
                *acc += run;
                if *acc > 0 {
                    covered += 1;
                }
            }
        }
        total += covered as f64 / (n * n) as f64;
    }
    Ok(total / trials as f64)
}

pub fn encode_dataset(ds: &PatchDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FPDS_MAGIC);
    put_u32(&mut out, FPDS_VERSION);
    put_text(&mut out, &ds.manifest.to_string());
    put_u32(&mut out, ds.pairs.len() as u32);
    put_u32(&mut out, ds.train_count as u32);
    for p in &ds.pairs {
        put_u32(&mut out, p.image);
        put_u32(&mut out, p.row);
        put_u32(&mut out, p.col);
        encode_fpt1(&p.x, &mut out);
        encode_fpt1(&p.y, &mut out);
    }
    out
}

pub fn decode_dataset(buf: &[u8]) -> Result<PatchDataset> {
    let mut r = ByteReader::new(buf);
    r.magic(FPDS_MAGIC)?;
    let at = r.position();
    let version = r.u32()?;
    if version != FPDS_VERSION {
        return Err(Error::format(at, format!("unsupported dataset version {version}")));
    }
    let at = r.position();
    let manifest = KeyValues::parse(&r.text()?).map_err(|e| Error::format(at, e))?;
    let count = r.u32()? as usize;
    let at = r.position();
    let train_count = r.u32()? as usize;
    if train_count > count {
        return Err(Error::format(at, format!("train count {train_count} exceeds {count} pairs")));
    }
    let mut pairs = Vec::with_capacity(count.min(r.remaining() / 16));
    for _ in 0..count {
        let image = r.u32()?;
        let row = r.u32()?;
        let col = r.u32()?;
        let at = r.position();
        let x: Tensor<f32> = decode_fpt1(&mut r)?;
        let y: Tensor<f32> = decode_fpt1(&mut r)?;
        if x.dims() != y.dims() {
            return Err(Error::format(at, "input and target patch shapes differ"));
        }
        pairs.push(PatchPair { x, y, image, row, col });
    }
    r.finish()?;
    Ok(PatchDataset { pairs, train_count, manifest })
}

pub fn save_dataset(ds: &PatchDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PatchDataset> {
    decode_dataset(&std::fs::read(path)?)
}
