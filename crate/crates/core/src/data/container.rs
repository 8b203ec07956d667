//! Binary container for video datasets.
//!
//! All integers and floats are little-endian. Layout:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 8 | magic `RWTAVID\0` |
//! | 8  | 4 | version (1) |
//! | 12 | 4 | precision in bits (32 or 64) |
//! | 16 | 8 | video count N |
//! | 24 | 4 | frames per video T |
//! | 28 | 4 | channels C |
//! | 32 | 4 | height H |
//! | 36 | 4 | width W |
//! | 40 | 4 | class count |
//! | 44 | 4 | reserved, zero |
//! | 48 | 8 | label section offset |
//! | 56 | 8 | metadata section offset |
//!
//! The pixel section starts at byte 64 and holds N·T·C·H·W values in
//! (N, T, C, H, W) order. The label section holds N `u32`. The metadata
//! section holds 32 bytes per video: source id `u64`, transform code `u32`
//! (0 identity, 1 rotate, 2 scan), zero `u32`, then two `f64` parameters
//! (rotation step and 0, or window and stride).

use std::path::Path;

use crate::bytes::{put_f64, put_reals, put_u32, put_u64, to_u32, Reader};
use crate::engine::{Precision, Real, Shape4};
use crate::error::{Error, Result};

use super::video::{Transform, VideoDataset, VideoMeta};

pub const VIDEO_MAGIC: [u8; 8] = *b"RWTAVID\0";
pub const VIDEO_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 64;
const META_BYTES: usize = 32;

pub fn encode_videos<T: Real>(ds: &VideoDataset<T>) -> Result<Vec<u8>> {
    let s = ds.frame_shape();
    let width = T::PRECISION.bytes();
    let label_offset = HEADER_BYTES + ds.raw().len() * width;
    let meta_offset = label_offset + 4 * ds.len();
    let mut out = Vec::with_capacity(meta_offset + META_BYTES * ds.len());
    out.extend_from_slice(&VIDEO_MAGIC);
    put_u32(&mut out, VIDEO_VERSION);
    put_u32(&mut out, T::PRECISION.bits());
    put_u64(&mut out, ds.len() as u64);
    for (v, what) in [
        (ds.frames(), "frame count"),
        (s.c(), "channel count"),
        (s.h(), "height"),
        (s.w(), "width"),
        (ds.class_count(), "class count"),
    ] {
        put_u32(&mut out, to_u32(v, what)?);
    }
    put_u32(&mut out, 0);
    put_u64(&mut out, label_offset as u64);
    put_u64(&mut out, meta_offset as u64);
    debug_assert_eq!(out.len(), HEADER_BYTES);
    put_reals(&mut out, ds.raw());
    for &l in ds.labels() {
        put_u32(&mut out, to_u32(l, "label")?);
    }
    for m in ds.meta() {
        put_u64(&mut out, m.source);
        put_u32(&mut out, m.transform.code());
        put_u32(&mut out, 0);
        let (a, b) = m.transform.params();
        put_f64(&mut out, a);
        put_f64(&mut out, b);
    }
    Ok(out)
}

/// Decodes a container; values stored at another precision are converted.
pub fn decode_videos<T: Real>(bytes: &[u8]) -> Result<VideoDataset<T>> {
    let mut r = Reader::new(bytes);
    if r.take(8, "magic")? != VIDEO_MAGIC {
        return Err(Error::format(0, "not a video dataset container (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VIDEO_VERSION {
        return Err(Error::format(
            8,
            format!("unsupported container version {version}, expected {VIDEO_VERSION}"),
        ));
    }
    let bits = r.u32("precision")?;
    let precision = Precision::from_bits(bits)
        .ok_or_else(|| Error::format(12, format!("unsupported precision {bits}")))?;
    let n = r.u64("video count")? as usize;
    let frames = r.u32("frame count")? as usize;
    let c = r.u32("channel count")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let classes = r.u32("class count")? as usize;
    r.u32("reserved")?;
    let label_offset = r.u64("label offset")? as usize;
    let meta_offset = r.u64("metadata offset")? as usize;

    let count = n
        .checked_mul(frames)
        .and_then(|v| v.checked_mul(c * h * w))
        .ok_or_else(|| Error::format(16, "dimensions overflow"))?;
    let expect_labels = HEADER_BYTES + count * precision.bytes();
    if label_offset != expect_labels {
        return Err(Error::format(
            48,
            format!("label offset {label_offset} does not follow the pixel section (expected {expect_labels})"),
        ));
    }
    if meta_offset != label_offset + 4 * n {
        return Err(Error::format(56, format!("metadata offset {meta_offset} is inconsistent")));
    }
    let data: Vec<T> = match precision {
        Precision::F32 => r.reals::<f32>(count, "pixels")?.into_iter().map(|v| T::lit(v as f64)).collect(),
        Precision::F64 => r.reals::<f64>(count, "pixels")?.into_iter().map(T::lit).collect(),
    };
    let labels = (0..n)
        .map(|_| r.u32("label").map(|l| l as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut meta = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos();
        let source = r.u64("source id")?;
        let code = r.u32("transform code")?;
        r.u32("padding")?;
        let a = r.f64("transform parameter")?;
        let b = r.f64("transform parameter")?;
        let transform = Transform::from_code(code, a, b)
            .ok_or_else(|| Error::format(at as u64 + 8, format!("unknown transform code {code}")))?;
        meta.push(VideoMeta { source, transform });
    }
    if r.pos() != bytes.len() {
        return Err(Error::format(
            r.pos() as u64,
            format!("{} trailing bytes after the metadata section", bytes.len() - r.pos()),
        ));
    }
    VideoDataset::from_parts(frames, Shape4::new(1, c, h, w), data, labels, meta, classes)
}

pub fn save_videos<T: Real>(ds: &VideoDataset<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_videos(ds)?)?;
    Ok(())
}

pub fn load_videos<T: Real>(path: &Path) -> Result<VideoDataset<T>> {
    decode_videos(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor4;

    fn sample() -> VideoDataset<f64> {
        let mut ds = VideoDataset::empty(3, 2, 2, 3, 4);
        for v in 0..2 {
            let frames: Vec<_> = (0..3)
                .map(|t| {
                    Tensor4::from_fn(Shape4::new(1, 2, 2, 3), |[_, c, i, j]| {
                        (v * 100 + t * 10 + c * 6 + i * 3 + j) as f64 / 7.0
                    })
                })
                .collect();
            let transform = if v == 0 {
                Transform::Rotate { step_degrees: 18.0 }
            } else {
                Transform::Scan { window: 16, stride: 8 }
            };
            ds.push(&frames, v + 2, VideoMeta { source: 40 + v as u64, transform })
                .unwrap();
        }
        ds
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = sample();
        let bytes = encode_videos(&ds).unwrap();
        assert_eq!(&bytes[..8], b"RWTAVID\0");
        assert_eq!(bytes.len(), 64 + 2 * 3 * 12 * 8 + 2 * 4 + 2 * 32);
        let back: VideoDataset<f64> = decode_videos(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_videos(&back).unwrap(), bytes);
    }

    #[test]
    fn header_fields_sit_at_documented_offsets() {
        let bytes = encode_videos(&sample().cast::<f32>()).unwrap();
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        assert_eq!(u32_at(8), 1);
        assert_eq!(u32_at(12), 32);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!([u32_at(24), u32_at(28), u32_at(32), u32_at(36), u32_at(40)], [3, 2, 2, 3, 4]);
        let label_offset = u64::from_le_bytes(bytes[48..56].try_into().unwrap()) as usize;
        assert_eq!(label_offset, 64 + 72 * 4);
        assert_eq!(u32_at(label_offset), 2);
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let bytes = encode_videos(&sample()).unwrap();
        assert!(matches!(
            decode_videos::<f64>(&bytes[..100]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_videos::<f64>(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut ver = bytes;
        ver[8] = 9;
        assert!(matches!(
            decode_videos::<f64>(&ver),
            Err(Error::Format { offset: 8, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        let ds = sample().cast::<f32>();
        save_videos(&ds, &path).unwrap();
        assert_eq!(load_videos::<f32>(&path).unwrap(), ds);
    }
}
