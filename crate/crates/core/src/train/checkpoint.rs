//! Checkpoint file.
//!
//! Little-endian throughout. The 64-byte header:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `RWTA` |
//! | 4  | 4 | version (1) |
//! | 8  | 4 | precision in bits |
//! | 12 | 4 | config digest: CRC-32 of bytes 16..36 |
//! | 16 | 4 | channels |
//! | 20 | 4 | encoder kernel |
//! | 24 | 4 | decoder kernel |
//! | 28 | 4 | input channels |
//! | 32 | 4 | classifier classes (0 when there is no head) |
//! | 36 | 4 | tensor count P (network, then head) |
//! | 40 | 8 | training step |
//! | 48 | 8 | Adam step count |
//! | 56 | 8 | reserved, zero |
//!
//! Then 3·P tensor blocks: the P parameters, the P first moments and the P
//! second moments. A block is four `u32` dimensions followed by the values.
//! After the blocks: Adam lr, beta1, beta2, eps as `f64`; the random stream
//! seed `u64`, stream id `u64` and word position `u128`; finally a CRC-32 of
//! every preceding byte.

use std::path::Path;

use crate::bytes::{put_f64, put_reals, put_u32, put_u64, to_u32, Reader};
use crate::engine::{Precision, Real, RngState, SeededRng, Shape4, Tensor4};
use crate::error::{Error, Result};
use crate::model::{ClassifierHead, ModelConfig, TwoStreamNet, PARAM_NAMES};

use super::adam::{AdamConfig, AdamState};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RWTA";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 64;

/// Everything needed to resume training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub net: TwoStreamNet<T>,
    pub head: Option<ClassifierHead<T>>,
    /// Moments for the network parameters, then the head's.
    pub adam: AdamState<T>,
    pub rng: RngState,
    /// Updates completed.
    pub step: u64,
}

impl<T: Real> Checkpoint<T> {
    /// Step-zero checkpoint for `net`.
    pub fn fresh(net: TwoStreamNet<T>, head: Option<ClassifierHead<T>>, adam: AdamConfig, seed: u64) -> Self {
        let mut shapes: Vec<Shape4> = net.params().iter().map(|p| p.shape()).collect();
        if let Some(h) = &head {
            shapes.extend([h.weight.shape(), h.bias.shape()]);
        }
        Checkpoint {
            net,
            head,
            adam: AdamState::new(adam, shapes),
            rng: SeededRng::new(seed).state(),
            step: 0,
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = PARAM_NAMES.to_vec();
        if self.head.is_some() {
            names.extend(["head.weight", "head.bias"]);
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor4<T>> {
        let mut ps: Vec<&Tensor4<T>> = self.net.params().into();
        if let Some(h) = &self.head {
            ps.extend([&h.weight, &h.bias]);
        }
        ps
    }

    /// Applies one Adam update to every parameter.
    pub fn apply(&mut self, grads: &[Tensor4<T>]) -> Result<()> {
        let names = self.param_names();
        let mut ps: Vec<&mut Tensor4<T>> = self.net.params_mut().into();
        if let Some(h) = &mut self.head {
            ps.extend([&mut h.weight, &mut h.bias]);
        }
        self.adam.step(&mut ps, grads, &names)?;
        self.step += 1;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.params();
        if self.adam.len() != params.len() {
            return Err(Error::contract(format!(
                "Adam holds {} moment tensors for {} parameters",
                self.adam.len(),
                params.len()
            )));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, T::PRECISION.bits());
        let mut cfg = config_block(&self.net.config)?;
        put_u32(&mut cfg, to_u32(self.head.as_ref().map_or(0, |h| h.classes()), "class count")?);
        put_u32(&mut out, crc32fast::hash(&cfg));
        out.extend_from_slice(&cfg);
        put_u32(&mut out, params.len() as u32);
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.adam.t);
        put_u64(&mut out, 0);
        debug_assert_eq!(out.len(), HEADER_BYTES);
        for t in params.into_iter().chain(&self.adam.m).chain(&self.adam.v) {
            for d in t.dims() {
                put_u32(&mut out, to_u32(d, "tensor dimension")?);
            }
            put_reals(&mut out, t.data());
        }
        let a = self.adam.config;
        for v in [a.lr, a.beta1, a.beta2, a.eps] {
            put_f64(&mut out, v);
        }
        put_u64(&mut out, self.rng.seed);
        put_u64(&mut out, self.rng.stream);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES + 4 {
            return Err(Error::format(
                bytes.len() as u64,
                format!("checkpoint truncated: {} bytes", bytes.len()),
            ));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not a checkpoint (bad magic)"));
        }
        let mut r = Reader::new(bytes);
        r.take(4, "magic")?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                4,
                format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..body_end]) != stored {
            return Err(Error::format(body_end as u64, "checkpoint checksum mismatch"));
        }
        let bits = r.u32("precision")?;
        if Precision::from_bits(bits) != Some(T::PRECISION) {
            return Err(Error::format(
                8,
                format!("checkpoint holds {bits}-bit values, expected {}", T::PRECISION.bits()),
            ));
        }
        let digest = r.u32("config digest")?;
        if crc32fast::hash(&bytes[16..36]) != digest {
            return Err(Error::format(12, "model config digest mismatch"));
        }
        let config = ModelConfig {
            channels: r.u32("channels")? as usize,
            enc_kernel: r.u32("encoder kernel")? as usize,
            dec_kernel: r.u32("decoder kernel")? as usize,
            input_channels: r.u32("input channels")? as usize,
        };
        let classes = r.u32("head classes")? as usize;
        let count = r.u32("tensor count")? as usize;
        let expected = PARAM_NAMES.len() + if classes > 0 { 2 } else { 0 };
        if count != expected {
            return Err(Error::format(36, format!("expected {expected} tensors, header says {count}")));
        }
        let step = r.u64("step")?;
        let adam_t = r.u64("Adam step")?;
        r.u64("reserved")?;

        let mut body = Reader::at(&bytes[..body_end], r.pos());
        let mut tensors = Vec::with_capacity(3 * count);
        for _ in 0..3 * count {
            let at = body.pos();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = body.u32("tensor dimension")? as usize;
            }
            let shape = Shape4(dims);
            let data = body.reals::<T>(shape.numel(), "tensor values")?;
            tensors.push(
                Tensor4::from_vec(shape, data).map_err(|e| Error::format(at as u64, e.to_string()))?,
            );
        }
        let adam_config = AdamConfig {
            lr: body.f64("lr")?,
            beta1: body.f64("beta1")?,
            beta2: body.f64("beta2")?,
            eps: body.f64("eps")?,
        };
        let rng = RngState {
            seed: body.u64("rng seed")?,
            stream: body.u64("rng stream")?,
            word_pos: body.u128("rng position")?,
        };
        if body.pos() != body_end {
            return Err(Error::format(body.pos() as u64, "unexpected bytes before the checksum"));
        }

        let v = tensors.split_off(2 * count);
        let m = tensors.split_off(count);
        let mut params = tensors;
        let head = if classes > 0 {
            let bias = params.pop().expect("counted");
            let weight = params.pop().expect("counted");
            Some(ClassifierHead { weight, bias })
        } else {
            None
        };
        let net = TwoStreamNet::from_params(config, params)
            .map_err(|e| Error::format(HEADER_BYTES as u64, e.to_string()))?;
        for (i, (mm, vv)) in m.iter().zip(&v).enumerate() {
            let p = if i < PARAM_NAMES.len() {
                net.params()[i].shape()
            } else {
                let h = head.as_ref().expect("counted");
                [h.weight.shape(), h.bias.shape()][i - PARAM_NAMES.len()]
            };
            if mm.shape() != p || vv.shape() != p {
                return Err(Error::format(HEADER_BYTES as u64, "moment shapes do not match parameters"));
            }
        }
        Ok(Checkpoint {
            net,
            head,
            adam: AdamState {
                config: adam_config,
                m,
                v,
                t: adam_t,
            },
            rng,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn config_block(c: &ModelConfig) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16);
    for (v, what) in [
        (c.channels, "channels"),
        (c.enc_kernel, "encoder kernel"),
        (c.dec_kernel, "decoder kernel"),
        (c.input_channels, "input channels"),
    ] {
        put_u32(&mut out, to_u32(v, what)?);
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(head: bool) -> Checkpoint<f64> {
        let cfg = ModelConfig {
            channels: 3,
            enc_kernel: 3,
            dec_kernel: 5,
            input_channels: 1,
        };
        let mut rng = SeededRng::new(9);
        let net = TwoStreamNet::glorot(cfg, &mut rng).unwrap();
        let head = head.then(|| ClassifierHead::glorot(3, 4, &mut rng).unwrap());
        let mut ck = Checkpoint::fresh(net, head, AdamConfig::default(), 11);
        let grads: Vec<_> = ck
            .params()
            .iter()
            .map(|p| p.map(|v| v * 0.5 + 0.01))
            .collect();
        ck.apply(&grads).unwrap();
        ck
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for head in [false, true] {
            let ck = sample(head);
            let bytes = ck.to_bytes().unwrap();
            assert_eq!(&bytes[..4], b"RWTA");
            let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = sample(false).to_bytes().unwrap();
        let k = bytes.len() / 2;
        bytes[k] ^= 0x40;
        let err = Checkpoint::<f64>::from_bytes(&bytes).unwrap_err();
        assert!(matches!(&err, Error::Format { .. }) && err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn version_and_truncation_are_format_errors() {
        let bytes = sample(true).to_bytes().unwrap();
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(Checkpoint::<f64>::from_bytes(&v), Err(Error::Format { offset: 4, .. })));
        for cut in [10, 64, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::<f64>::from_bytes(&bytes[..cut]),
                Err(Error::Format { .. })
            ));
        }
    }

    #[test]
    fn precision_mismatch_is_rejected() {
        let bytes = sample(false).to_bytes().unwrap();
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Format { offset: 8, .. })));
    }
}
