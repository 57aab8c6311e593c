//! Flat binary serialization of a [`FeatureSet`].
//!
//! Layout (little-endian):
//!   magic  b"ANFT"
//!   u32    format version (1)
//!   u32    frame count T
//!   u32    band count B
//!   u32    cross-correlation length C
//!   f32 * (T*B)  left spectrogram, row-major
//!   f32 * (T*B)  right spectrogram, row-major
//!   f32 * C      cross-correlation coefficients

use std::io::{Read, Write};

use thiserror::Error;

use super::{CcVector, FeatureSet, Spectrogram, CC_LEN};

const MAGIC: &[u8; 4] = b"ANFT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a feature record (bad magic)")]
    BadMagic,
    #[error("unsupported feature record version {0}")]
    BadVersion(u32),
    #[error("malformed feature record: {0}")]
    Malformed(String),
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, count: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_feature_record<W: Write>(w: &mut W, fs: &FeatureSet) -> Result<(), RecordError> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, fs.left.frames() as u32)?;
    write_u32(w, fs.left.bands() as u32)?;
    write_u32(w, fs.cc.as_slice().len() as u32)?;
    write_f32s(w, fs.left.values())?;
    write_f32s(w, fs.right.values())?;
    write_f32s(w, fs.cc.as_slice())?;
    Ok(())
}

pub fn read_feature_record<R: Read>(r: &mut R) -> Result<FeatureSet, RecordError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RecordError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(RecordError::BadVersion(version));
    }
    let frames = read_u32(r)? as usize;
    let bands = read_u32(r)? as usize;
    let cc_len = read_u32(r)? as usize;
    if cc_len != CC_LEN {
        return Err(RecordError::Malformed(format!(
            "cross-correlation length {cc_len}, expected {CC_LEN}"
        )));
    }
    let left = read_f32s(r, frames * bands)?;
    let right = read_f32s(r, frames * bands)?;
    let cc = read_f32s(r, cc_len)?;
    let mut cc_arr = [0.0; CC_LEN];
    cc_arr.copy_from_slice(&cc);
    Ok(FeatureSet {
        left: Spectrogram::from_parts(frames, bands, left),
        right: Spectrogram::from_parts(frames, bands, right),
        cc: CcVector::new(cc_arr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{extract_features, GammatoneBank, Waveform, CLIP_SAMPLES};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trips_through_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Waveform::new((0..CLIP_SAMPLES).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .unwrap();
        let r = Waveform::new((0..CLIP_SAMPLES).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .unwrap();
        let bank = GammatoneBank::default_64();
        let fs = extract_features(&bank, &l, &r).unwrap();

        let mut buf = Vec::new();
        write_feature_record(&mut buf, &fs).unwrap();
        let back = read_feature_record(&mut buf.as_slice()).unwrap();
        assert_eq!(back.left.frames(), 39);
        assert_eq!(back.left.bands(), 64);
        for (a, b) in fs.left.values().iter().zip(back.left.values()) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-6 + 1e-9);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let bytes = b"RIFFxxxxWAVE";
        assert!(matches!(
            read_feature_record(&mut &bytes[..]),
            Err(RecordError::BadMagic)
        ));
    }
}
