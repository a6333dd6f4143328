//! Trained-model checkpoints (`VNCK`).
//!
//! Layout: magic, u32 version, u64 step t, f64 lr0/decay/beta1/beta2/eps,
//! length-prefixed model descriptor, u32 parameter count, then per parameter
//! u16 name length, name bytes, FPT1 value, a flag byte and — when the flag
//! is 1 — FPT1 tensors for the two ADAM moments.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{decode_fpt1, encode_fpt1, put_f64, put_text, put_u16, put_u32, put_u64, ByteReader, KeyValues};
use crate::model::ModelSpec;
use crate::nn::{ParamStore, TrainStepState};
use crate::tensor::Tensor;

pub const VNCK_MAGIC: &[u8; 4] = b"VNCK";
pub const VNCK_VERSION: u32 = 1;

/// Architecture, weights and optimiser state sufficient for inference or exact resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub store: ParamStore<f32>,
    pub state: TrainStepState,
}

impl Checkpoint {
    pub fn new(model: ModelSpec, store: ParamStore<f32>, state: TrainStepState) -> Result<Self> {
        store.check_matches(&model)?;
        Ok(Checkpoint { model, store, state })
    }
}

/// Serialises a checkpoint; `with_moments` keeps the ADAM moments for resuming.
pub fn encode_checkpoint(ck: &Checkpoint, with_moments: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(VNCK_MAGIC);
    put_u32(&mut out, VNCK_VERSION);
    let s = &ck.state;
    put_u64(&mut out, s.t);
    for v in [s.lr0, s.decay, s.beta1, s.beta2, s.eps] {
        put_f64(&mut out, v);
    }
    put_text(&mut out, &ck.model.descriptor().to_string());
    put_u32(&mut out, ck.store.len() as u32);
    for p in ck.store.iter() {
        put_u16(&mut out, p.name.len() as u16);
        out.extend_from_slice(p.name.as_bytes());
        encode_fpt1(&p.value, &mut out);
        out.push(with_moments as u8);
        if with_moments {
            encode_fpt1(&p.adam_m, &mut out);
            encode_fpt1(&p.adam_v, &mut out);
        }
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(buf);
    r.magic(VNCK_MAGIC)?;
    let at = r.position();
    let version = r.u32()?;
    if version != VNCK_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let t = r.u64()?;
    let mut hp = [0.0; 5];
    for v in hp.iter_mut() {
        *v = r.f64()?;
    }
    let state = TrainStepState { t, lr0: hp[0], decay: hp[1], beta1: hp[2], beta2: hp[3], eps: hp[4] };
    let at = r.position();
    let descriptor = KeyValues::parse(&r.text()?).map_err(|e| Error::format(at, e))?;
    let model = ModelSpec::from_descriptor(&descriptor).map_err(|e| Error::format(at, e))?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = r.position();
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
            .to_string();
        let value: Tensor<f32> = decode_fpt1(&mut r)?;
        let idx = store.insert(name, value).map_err(|e| Error::format(at, e))?;
        let at = r.position();
        match r.u8()? {
            0 => {}
            1 => {
                let m: Tensor<f32> = decode_fpt1(&mut r)?;
                let v: Tensor<f32> = decode_fpt1(&mut r)?;
                let p = store.param_mut(idx);
                if m.dims() != p.value.dims() || v.dims() != p.value.dims() {
                    return Err(Error::format(at, format!("moment shape mismatch for '{}'", p.name)));
                }
                p.adam_m = m;
                p.adam_v = v;
            }
            flag => return Err(Error::format(at, format!("bad moment flag {flag}"))),
        }
    }
    r.finish()?;
    let end = buf.len();
    store.check_matches(&model).map_err(|e| Error::format(end, e))?;
    Ok(Checkpoint { model, store, state })
}

/// Sidecar descriptor path: `model.vnck` → `model.model`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("model")
}

/// Writes the checkpoint and its `.model` descriptor sidecar.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>, with_moments: bool) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck, with_moments))?;
    std::fs::write(sidecar_path(path), ck.model.descriptor().to_string())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, model_predict, Variant};
    use crate::nn::init_params;
    use crate::synth::LcgState;

    fn sample() -> Checkpoint {
        let model = build_model(Variant::ResVNet, 2, 2, (8, 8)).unwrap();
        let mut store = init_params(&model, &mut LcgState::seeded(9));
        store.param_mut(0).adam_m.fill(0.25);
        Checkpoint::new(model, store, TrainStepState { t: 17, ..Default::default() }).unwrap()
    }

    #[test]
    fn round_trip_keeps_forward_bitwise() {
        let ck = sample();
        let back = decode_checkpoint(&encode_checkpoint(&ck, true)).unwrap();
        assert_eq!(back, ck);
        let x = Tensor::from_fn(&[1, 8, 8], |i| (i as f32 * 0.37).sin() + 1.0);
        let a = model_predict(&ck.model, &ck.store, &x).unwrap();
        let b = model_predict(&back.model, &back.store, &x).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(back.state.t, 17);
    }

    #[test]
    fn without_moments_zeroes_them() {
        let ck = sample();
        let back = decode_checkpoint(&encode_checkpoint(&ck, false)).unwrap();
        assert!(back.store.param(0).adam_m.data().iter().all(|&v| v == 0.0));
        assert_eq!(back.store.param(0).value, ck.store.param(0).value);
    }

    #[test]
    fn tampering_is_a_format_error() {
        let buf = encode_checkpoint(&sample(), true);
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 4, .. })));
        assert!(matches!(decode_checkpoint(&buf[..buf.len() - 3]), Err(Error::Format { .. })));
    }

    #[test]
    fn sidecar_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.vnck");
        save_checkpoint(&sample(), &path, true).unwrap();
        let text = std::fs::read_to_string(dir.path().join("best.model")).unwrap();
        assert!(text.contains("variant=resvnet"));
        assert_eq!(load_checkpoint(&path).unwrap(), sample());
    }
}
