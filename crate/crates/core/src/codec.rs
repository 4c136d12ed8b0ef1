//! Sign+shift codeword encoding and the packed on-disk form of a
//! quantised layer.
//!
//! A codeword of width `b` bits carries the sign in its top bit and the
//! shift count in the remaining `b − 1` bits. The all-ones magnitude
//! pattern is reserved for the zero weight — with either sign bit, so the
//! code space splits into exactly 2 zero codes and `2^b − 2` nonzero
//! levels. Encoding always emits the canonical zero (sign bit 0); decoding
//! accepts both.
//!
//! Packed file format (little-endian): magic `POTQ`, version byte `1`,
//! bitwidth byte, flags byte (bit 0 set when the layer reconstructs with a
//! nonzero offset), dimension count byte, each dimension as a 32-bit
//! unsigned integer, scale and offset as 32-bit IEEE-754 values, then the
//! codeword payload. Codewords of width ≤ 4 are packed two per byte, low
//! nibble first, the final byte padded with the canonical zero; wider
//! codewords take one byte each.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::quant::{s_max, Levels, QuantLevel, QuantizedLayer, Sign};

const MAGIC: &[u8; 4] = b"POTQ";
const VERSION: u8 = 1;
const FLAG_OFFSET_MODE: u8 = 0b0000_0001;

/// One fixed-width sign+shift code. The width is context — carried by the
/// surrounding layer or passed alongside — so the type itself is a bare
/// byte with the invariant `raw < 2^bitwidth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Codeword {
    raw: u8,
}

impl Codeword {
    pub fn new(raw: u8, bitwidth: u32) -> Result<Codeword> {
        check_bitwidth(bitwidth)?;
        if (raw as u32) >= (1 << bitwidth) {
            return Err(Error::Domain(format!(
                "raw code {raw:#06b} does not fit in {bitwidth} bits"
            )));
        }
        Ok(Codeword { raw })
    }

    pub fn raw(self) -> u8 {
        self.raw
    }
}

fn check_bitwidth(bitwidth: u32) -> Result<()> {
    if !(3..=8).contains(&bitwidth) {
        return Err(Error::Domain(format!("bitwidth {bitwidth} outside supported range 3..=8")));
    }
    Ok(())
}

/// The reserved zero-weight magnitude pattern (all ones) with canonical
/// sign bit 0.
fn canonical_zero_raw(bitwidth: u32) -> u8 {
    (s_max(bitwidth) + 1) as u8
}

pub fn encode_level(l: QuantLevel, bitwidth: u32) -> Result<Codeword> {
    check_bitwidth(bitwidth)?;
    let raw = match l {
        QuantLevel::Zero => canonical_zero_raw(bitwidth),
        QuantLevel::Pot { sign, shift } => {
            if shift > s_max(bitwidth) {
                return Err(Error::Domain(format!(
                    "shift {shift} exceeds the representable maximum {} at bitwidth {bitwidth}",
                    s_max(bitwidth)
                )));
            }
            let sign_bit = match sign {
                Sign::Plus => 0u8,
                Sign::Minus => 1 << (bitwidth - 1),
            };
            sign_bit | shift as u8
        }
    };
    Ok(Codeword { raw })
}

/// Total on the code space: every raw value of the given width decodes,
/// with both zero patterns mapping to the zero weight.
pub fn decode_codeword(c: Codeword, bitwidth: u32) -> QuantLevel {
    let mag_mask = (1u8 << (bitwidth - 1)) - 1;
    let mag = (c.raw & mag_mask) as u32;
    if mag == s_max(bitwidth) + 1 {
        QuantLevel::Zero
    } else {
        let sign =
            if c.raw & (1 << (bitwidth - 1)) != 0 { Sign::Minus } else { Sign::Plus };
        QuantLevel::Pot { sign, shift: mag }
    }
}

/// A quantised layer in its storage form: header metadata plus packed
/// codeword bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    pub bitwidth: u32,
    pub offset_mode: bool,
    pub shape: Vec<usize>,
    pub scale: f32,
    pub offset: f32,
    pub payload: Vec<u8>,
}

/// Whether codes of this width pack two per byte or take a byte each.
fn nibble_packed(bitwidth: u32) -> bool {
    bitwidth <= 4
}

fn payload_len(element_count: usize, bitwidth: u32) -> usize {
    if nibble_packed(bitwidth) {
        element_count.div_ceil(2)
    } else {
        element_count
    }
}

impl PackedLayer {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Decode the payload back to per-element levels (padding nibble
    /// dropped via the element count).
    pub fn decode_levels(&self) -> Result<Vec<QuantLevel>> {
        let n = self.element_count();
        let mut levels = Vec::with_capacity(n);
        if nibble_packed(self.bitwidth) {
            for i in 0..n {
                let byte = self.payload[i / 2];
                let raw = if i % 2 == 0 { byte & 0x0F } else { byte >> 4 };
                levels.push(decode_codeword(Codeword::new(raw, self.bitwidth)?, self.bitwidth));
            }
        } else {
            for i in 0..n {
                levels.push(decode_codeword(
                    Codeword::new(self.payload[i], self.bitwidth)?,
                    self.bitwidth,
                ));
            }
        }
        Ok(levels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 4 * self.shape.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.bitwidth as u8);
        out.push(if self.offset_mode { FLAG_OFFSET_MODE } else { 0 });
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PackedLayer> {
        if bytes.len() < 8 {
            return Err(Error::Format("packed layer shorter than its header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, expected POTQ".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unknown packed-layer version {}", bytes[4])));
        }
        let bitwidth = bytes[5] as u32;
        check_bitwidth(bitwidth)?;
        let flags = bytes[6];
        if flags & !FLAG_OFFSET_MODE != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#010b}")));
        }
        let offset_mode = flags & FLAG_OFFSET_MODE != 0;
        let ndim = bytes[7] as usize;
        if ndim == 0 {
            return Err(Error::Format("packed layer declares zero dimensions".into()));
        }
        let dims_end = 8 + 4 * ndim;
        if bytes.len() < dims_end + 8 {
            return Err(Error::Format("packed-layer header truncated".into()));
        }
        let mut shape = Vec::with_capacity(ndim);
        for i in 0..ndim {
            let off = 8 + 4 * i;
            let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
            if d == 0 {
                return Err(Error::Format("zero-sized dimension in packed layer".into()));
            }
            shape.push(d);
        }
        let scale = f32::from_le_bytes(bytes[dims_end..dims_end + 4].try_into().unwrap());
        let offset = f32::from_le_bytes(bytes[dims_end + 4..dims_end + 8].try_into().unwrap());
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::Format(format!("scale {scale} must be positive")));
        }
        if offset < 0.0 || !offset.is_finite() {
            return Err(Error::Format(format!("offset {offset} must be nonnegative")));
        }
        if offset_mode != (offset != 0.0) {
            return Err(Error::Format(
                "offset-mode flag disagrees with the stored offset".into(),
            ));
        }
        let payload = bytes[dims_end + 8..].to_vec();
        let expected = payload_len(shape.iter().product(), bitwidth);
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload holds {} bytes but {} codewords need {}",
                payload.len(),
                shape.iter().product::<usize>(),
                expected
            )));
        }
        let layer = PackedLayer { bitwidth, offset_mode, shape, scale, offset, payload };
        // surfaces out-of-range codes in byte-per-code payloads
        layer.decode_levels()?;
        Ok(layer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PackedLayer> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        PackedLayer::from_bytes(&bytes)
    }
}

/// Pack a power-of-two quantised layer into its storage form. The uniform
/// family has no packed representation.
pub fn pack_layer(q: &QuantizedLayer) -> Result<PackedLayer> {
    q.validate()?;
    let levels = match &q.levels {
        Levels::Pot(levels) => levels,
        Levels::Uniform(_) => {
            return Err(Error::Domain("uniform-family layers have no packed form".into()))
        }
    };
    let mut payload = Vec::with_capacity(payload_len(levels.len(), q.bitwidth));
    if nibble_packed(q.bitwidth) {
        for pair in levels.chunks(2) {
            let lo = encode_level(pair[0], q.bitwidth)?.raw();
            let hi = match pair.get(1) {
                Some(&l) => encode_level(l, q.bitwidth)?.raw(),
                None => canonical_zero_raw(q.bitwidth),
            };
            payload.push(lo | (hi << 4));
        }
    } else {
        for &l in levels {
            payload.push(encode_level(l, q.bitwidth)?.raw());
        }
    }
    Ok(PackedLayer {
        bitwidth: q.bitwidth,
        offset_mode: q.offset != 0.0,
        shape: q.shape.clone(),
        scale: q.scale,
        offset: q.offset,
        payload,
    })
}

pub fn unpack_layer(p: &PackedLayer) -> Result<QuantizedLayer> {
    let q = QuantizedLayer {
        shape: p.shape.clone(),
        levels: Levels::Pot(p.decode_levels()?),
        scale: p.scale,
        offset: p.offset,
        bitwidth: p.bitwidth,
    };
    q.validate()?;
    Ok(q)
}
