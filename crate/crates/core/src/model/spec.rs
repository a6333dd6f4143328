use std::fmt;

use crate::error::{Error, Result};
use crate::io::KeyValues;
use crate::synth::TargetMode;

/// Network family. All three share the block structure and differ in the
/// channel schedule (V-net vs U-net) or the skip merge (Res V-net).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    VNet,
    UNet,
    ResVNet,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::VNet => "vnet",
            Variant::UNet => "unet",
            Variant::ResVNet => "resvnet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vnet" => Ok(Variant::VNet),
            "unet" => Ok(Variant::UNet),
            "resvnet" => Ok(Variant::ResVNet),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }

    pub fn merge(self) -> Merge {
        match self {
            Variant::ResVNet => Merge::Subtract,
            _ => Merge::Concat,
        }
    }

    /// Channel count of level `k` (1-based) for `levels` levels and bottom width `f`.
    pub fn channels(self, k: usize, levels: usize, f: usize) -> usize {
        match self {
            Variant::VNet | Variant::ResVNet => f << (levels - k),
            Variant::UNet => f << (k - 1),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How an Up-Block combines the upsampled path with its skip link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Merge {
    /// `[t_hat ; skip]` along channels.
    Concat,
    /// `skip - t_hat`.
    Subtract,
}

/// One convolution: kernel `(filters, in_channels, size, size)` plus a bias vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub filters: usize,
    pub in_channels: usize,
    pub size: usize,
    /// Index of the kernel in the parameter store; the bias follows at `weight + 1`.
    pub weight: usize,
}

impl ConvSpec {
    pub fn bias(&self) -> usize {
        self.weight + 1
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        [self.filters, self.in_channels, self.size, self.size]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.size * self.size
    }

    pub fn scalar_count(&self) -> usize {
        self.filters * self.fan_in() + self.filters
    }
}

/// Encoder level `k`: conv3x3, ReLU, conv3x3, ReLU, dropout, 2x2 max-pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownSpec {
    pub level: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    /// Dims of the dropout mask (the second conv's output).
    pub mask_dims: [usize; 3],
    pub out_dims: [usize; 3],
}

/// Decoder level `k`: upsample, conv2x2, ReLU, merge with skip, two conv3x3 + ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpSpec {
    pub level: usize,
    pub upconv: ConvSpec,
    pub merge: Merge,
    /// Subtract-merge at level 1 yields one channel, duplicated to feed two-channel convs.
    pub duplicate_merged: bool,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub out_dims: [usize; 3],
}

/// Two final 3x3 convolutions: two filters, then one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TailSpec {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
}

/// Channel count of the decoder output fed to the tail.
pub const TAIL_CHANNELS: usize = 2;

/// Complete architecture of one network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub levels: usize,
    pub base_filters: usize,
    pub input_rows: usize,
    pub input_cols: usize,
    pub target: TargetMode,
    /// `n_1 .. n_K`.
    pub schedule: Vec<usize>,
    pub down: Vec<DownSpec>,
    /// Ordered as executed: level K first, level 1 last.
    pub up: Vec<UpSpec>,
    pub tail: TailSpec,
}

struct ParamCounter {
    next: usize,
}

impl ParamCounter {
    fn conv(&mut self, name: String, filters: usize, in_channels: usize, size: usize) -> ConvSpec {
        let weight = self.next;
        self.next += 2;
        ConvSpec { name, filters, in_channels, size, weight }
    }
}

/// Builds the block table for `variant` with `levels` levels and bottom width `base_filters`.
pub fn build_model(
    variant: Variant,
    levels: usize,
    base_filters: usize,
    patch: (usize, usize),
) -> Result<ModelSpec> {
    if levels == 0 || base_filters == 0 {
        return Err(Error::Config(format!(
            "need at least one level and one filter, got K={levels}, F={base_filters}"
        )));
    }
    if levels > 16 {
        return Err(Error::Config(format!("K={levels} is unreasonably deep")));
    }
    let step = 1usize << levels;
    let (rows, cols) = patch;
    if rows == 0 || cols == 0 || rows % step != 0 || cols % step != 0 {
        return Err(Error::Config(format!(
            "patch {rows}x{cols} is not a multiple of 2^K = {step}"
        )));
    }
    let schedule: Vec<usize> = (1..=levels)
        .map(|k| variant.channels(k, levels, base_filters))
        .collect();
    let width = |k: usize| if k == 0 { 1 } else { schedule[k - 1] };
    let mut counter = ParamCounter { next: 0 };

    let mut down = Vec::with_capacity(levels);
    for k in 1..=levels {
        let (r, c) = (rows >> (k - 1), cols >> (k - 1));
        let n = width(k);
        down.push(DownSpec {
            level: k,
            conv1: counter.conv(format!("down{k}.conv1"), n, width(k - 1), 3),
            conv2: counter.conv(format!("down{k}.conv2"), n, n, 3),
            mask_dims: [n, r, c],
            out_dims: [n, r / 2, c / 2],
        });
    }

    let merge = variant.merge();
    let mut up = Vec::with_capacity(levels);
    for k in (1..=levels).rev() {
        let (r, c) = (rows >> (k - 1), cols >> (k - 1));
        let skip = width(k - 1);
        let merged = match merge {
            Merge::Concat => 2 * skip,
            Merge::Subtract => skip,
        };
        let (conv_in, conv_out, duplicate) = if k == 1 {
            let conv_in = if merge == Merge::Subtract { TAIL_CHANNELS } else { merged };
            (conv_in, TAIL_CHANNELS, merge == Merge::Subtract)
        } else {
            (merged, skip, false)
        };
        up.push(UpSpec {
            level: k,
            upconv: counter.conv(format!("up{k}.upconv"), skip, width(k), 2),
            merge,
            duplicate_merged: duplicate,
            conv1: counter.conv(format!("up{k}.conv1"), conv_out, conv_in, 3),
            conv2: counter.conv(format!("up{k}.conv2"), conv_out, conv_out, 3),
            out_dims: [conv_out, r, c],
        });
    }

    let tail = TailSpec {
        conv1: counter.conv("tail.conv1".into(), TAIL_CHANNELS, TAIL_CHANNELS, 3),
        conv2: counter.conv("tail.conv2".into(), 1, TAIL_CHANNELS, 3),
    };

    Ok(ModelSpec {
        variant,
        levels,
        base_filters,
        input_rows: rows,
        input_cols: cols,
        target: TargetMode::Cosine,
        schedule,
        down,
        up,
        tail,
    })
}

/// Shape and initialisation metadata of one stored parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ModelSpec {
    pub fn with_target(mut self, target: TargetMode) -> Self {
        self.target = target;
        self
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [1, self.input_rows, self.input_cols]
    }

    /// Every convolution in store order.
    pub fn convs(&self) -> Vec<&ConvSpec> {
        let mut out = Vec::new();
        for d in &self.down {
            out.extend([&d.conv1, &d.conv2]);
        }
        for u in &self.up {
            out.extend([&u.upconv, &u.conv1, &u.conv2]);
        }
        out.extend([&self.tail.conv1, &self.tail.conv2]);
        out
    }

    /// Kernel then bias for every convolution, in store order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let mut out = Vec::new();
        for c in self.convs() {
            out.push(ParamShape {
                name: format!("{}.weight", c.name),
                dims: c.kernel_dims().to_vec(),
                fan_in: c.fan_in(),
                is_bias: false,
            });
            out.push(ParamShape {
                name: format!("{}.bias", c.name),
                dims: vec![c.filters],
                fan_in: c.fan_in(),
                is_bias: true,
            });
        }
        out
    }

    /// Total number of learnable scalars (weights and biases).
    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|c| c.scalar_count()).sum()
    }

    /// Architecture descriptor as `key=value` lines.
    pub fn descriptor(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("variant", self.variant);
        kv.set("K", self.levels);
        kv.set("F", self.base_filters);
        kv.set("patch", format!("{}x{}", self.input_rows, self.input_cols));
        kv.set("target_mode", self.target.name());
        kv
    }

    pub fn from_descriptor(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&["variant", "K", "F", "patch", "target_mode"])?;
        let variant = Variant::parse(kv.require("variant")?)?;
        let levels = kv.parsed("K")?.ok_or_else(|| Error::Config("missing key 'K'".into()))?;
        let f = kv.parsed("F")?.ok_or_else(|| Error::Config("missing key 'F'".into()))?;
        let patch = parse_patch(kv.require("patch")?)?;
        let target = match kv.get("target_mode") {
            Some(t) => TargetMode::parse(t)?,
            None => TargetMode::Cosine,
        };
        Ok(build_model(variant, levels, f, patch)?.with_target(target))
    }
}

/// Parses `32` or `32x32`.
pub fn parse_patch(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("bad patch size '{s}'"));
    match s.split_once('x') {
        Some((r, c)) => Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_schedule() {
        let m = build_model(Variant::VNet, 5, 16, (32, 32)).unwrap();
        assert_eq!(m.schedule, vec![256, 128, 64, 32, 16]);
        assert_eq!(m.down[0].conv1.filters, 256);
        assert_eq!(m.down[0].out_dims, [256, 16, 16]);
        let u = build_model(Variant::UNet, 5, 16, (32, 32)).unwrap();
        assert_eq!(u.schedule, vec![16, 32, 64, 128, 256]);
        let r = build_model(Variant::ResVNet, 5, 16, (32, 32)).unwrap();
        assert_eq!(r.schedule, m.schedule);
    }

    #[test]
    fn rejects_indivisible_patch() {
        assert!(matches!(build_model(Variant::VNet, 5, 16, (33, 33)), Err(Error::Config(_))));
        assert!(build_model(Variant::VNet, 0, 16, (32, 32)).is_err());
        assert!(build_model(Variant::VNet, 2, 0, (32, 32)).is_err());
    }

    #[test]
    fn degenerate_single_level() {
        let m = build_model(Variant::VNet, 1, 1, (2, 2)).unwrap();
        assert_eq!(m.schedule, vec![1]);
        assert!(m.down[0].conv1.filters == 1 && m.up[0].upconv.filters == 1);
        // 10 + 10 + 5 + 38 + 38 + 38 + 19, counted by hand from the block table
        assert_eq!(m.param_count(), 158);
    }

    #[test]
    fn up_block_shapes() {
        let m = build_model(Variant::VNet, 5, 16, (32, 32)).unwrap();
        let top = &m.up[0];
        assert_eq!(top.level, 5);
        assert_eq!(top.upconv.in_channels, 16);
        assert_eq!(top.upconv.filters, 32);
        assert_eq!(top.conv1.in_channels, 64);
        assert_eq!(top.out_dims, [32, 2, 2]);
        let last = m.up.last().unwrap();
        assert_eq!(last.conv1.in_channels, 2);
        assert_eq!(last.out_dims, [2, 32, 32]);
        let r = build_model(Variant::ResVNet, 5, 16, (32, 32)).unwrap();
        assert_eq!(r.up[0].conv1.in_channels, 32);
        assert!(r.up.last().unwrap().duplicate_merged);
    }

    #[test]
    fn param_count_scaling() {
        let shape_total = |m: &ModelSpec| -> usize {
            m.param_shapes().iter().map(|p| p.dims.iter().product::<usize>()).sum()
        };
        for v in [Variant::VNet, Variant::UNet, Variant::ResVNet] {
            let m = build_model(v, 3, 4, (16, 16)).unwrap();
            assert_eq!(m.param_count(), shape_total(&m));
        }
        let weights = |f| -> usize {
            build_model(Variant::VNet, 4, f, (16, 16))
                .unwrap()
                .convs()
                .iter()
                .map(|c| c.filters * c.fan_in())
                .sum()
        };
        let ratio = weights(16) as f64 / weights(8) as f64;
        assert!((3.5..4.0).contains(&ratio), "{ratio}");
        let v = build_model(Variant::VNet, 3, 4, (16, 16)).unwrap().param_count();
        let u = build_model(Variant::UNet, 3, 4, (16, 16)).unwrap().param_count();
        assert_ne!(v, u);
    }

    #[test]
    fn descriptor_round_trip() {
        let m = build_model(Variant::ResVNet, 3, 4, (16, 32)).unwrap().with_target(TargetMode::Sine);
        let kv = KeyValues::parse(&m.descriptor().to_string()).unwrap();
        assert_eq!(ModelSpec::from_descriptor(&kv).unwrap(), m);
    }
}
