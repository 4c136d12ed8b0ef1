//! Power-of-two weight quantisation.
//!
//! The pipeline is: normalise a weight tensor by its largest magnitude
//! (`scale`), round each normalised magnitude to the nearest power of two
//! in the log domain, and store the result as a sign plus a right-shift
//! count. Reconstruction is `sign · (2^(−shift) · scale + offset)`; the
//! offset stays 0 unless the layer went through dead-zone pruning.
//!
//! A symmetric uniform quantiser over the same bit budget is provided as a
//! baseline for accuracy/energy comparisons.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest representable shift for a given codeword width: one bit goes to
/// the sign and one magnitude pattern is reserved for the zero weight, so
/// `2^(bitwidth−1) − 2`. Bitwidth 4 gives 6, hence 14 nonzero levels.
pub fn s_max(bitwidth: u32) -> u32 {
    (1u32 << (bitwidth - 1)) - 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    /// Round the base-2 logarithm to the nearest integer, halves away from
    /// zero.
    Nearest,
    /// Round the base-2 logarithm up: picks the smallest power of two not
    /// below the value.
    Ceil,
}

/// What to do with magnitudes too small for the deepest representable
/// shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Underflow {
    FlushToZero,
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Pot,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantConfig {
    pub bitwidth: u32,
    /// Upper bound on the quantised exponent. 0 for weights normalised to
    /// [−1, 1]; nonzero values shift the representable range and are
    /// folded into the stored scale.
    pub fsr: i32,
    pub rounding: Rounding,
    pub underflow: Underflow,
    pub family: Family,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            bitwidth: 4,
            fsr: 0,
            rounding: Rounding::Nearest,
            underflow: Underflow::FlushToZero,
            family: Family::Pot,
        }
    }
}

impl QuantConfig {
    /// Codeword widths outside 3..=8 are rejected: below 3 bits there is no
    /// room for a nonzero shift, above 8 the packed format's byte-per-code
    /// fallback would no longer hold a codeword.
    pub fn validate(&self) -> Result<()> {
        if !(3..=8).contains(&self.bitwidth) {
            return Err(Error::Domain(format!(
                "bitwidth {} outside supported range 3..=8",
                self.bitwidth
            )));
        }
        Ok(())
    }

    pub fn s_max(&self) -> u32 {
        s_max(self.bitwidth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x < 0.0 { Sign::Minus } else { Sign::Plus }
    }

    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// One quantised weight: either the zero weight or a signed power of two
/// `±2^(−shift)` in normalised units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantLevel {
    Zero,
    Pot { sign: Sign, shift: u32 },
}

impl QuantLevel {
    pub fn is_zero(self) -> bool {
        matches!(self, QuantLevel::Zero)
    }
}

/// Per-element levels of a quantised layer, one variant per quantiser
/// family.
#[derive(Debug, Clone, PartialEq)]
pub enum Levels {
    Pot(Vec<QuantLevel>),
    Uniform(Vec<i32>),
}

impl Levels {
    pub fn len(&self) -> usize {
        match self {
            Levels::Pot(v) => v.len(),
            Levels::Uniform(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_count(&self) -> usize {
        match self {
            Levels::Pot(v) => v.iter().filter(|l| l.is_zero()).count(),
            Levels::Uniform(v) => v.iter().filter(|&&l| l == 0).count(),
        }
    }
}

/// A quantised weight tensor: levels plus the per-layer reconstruction
/// parameters. `offset` is nonzero only for layers produced by dead-zone
/// pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub shape: Vec<usize>,
    pub levels: Levels,
    pub scale: f32,
    pub offset: f32,
    pub bitwidth: u32,
}

impl QuantizedLayer {
    pub fn validate(&self) -> Result<()> {
        if !(3..=8).contains(&self.bitwidth) {
            return Err(Error::Domain(format!(
                "bitwidth {} outside supported range 3..=8",
                self.bitwidth
            )));
        }
        if self.scale <= 0.0 || !self.scale.is_finite() {
            return Err(Error::Domain(format!("scale {} must be positive", self.scale)));
        }
        if self.offset < 0.0 || !self.offset.is_finite() {
            return Err(Error::Domain(format!("offset {} must be nonnegative", self.offset)));
        }
        let expected: usize = self.shape.iter().product();
        if expected != self.levels.len() {
            return Err(Error::Shape(format!(
                "shape product {} does not match level count {}",
                expected,
                self.levels.len()
            )));
        }
        if let Levels::Pot(levels) = &self.levels {
            let cap = s_max(self.bitwidth);
            if let Some(l) = levels.iter().find(
                |l| matches!(l, QuantLevel::Pot { shift, .. } if *shift > cap),
            ) {
                return Err(Error::Domain(format!("level {l:?} exceeds shift cap {cap}")));
            }
        }
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.levels.len()
    }
}

/// Base-2 logarithm with an exact fast path for powers of two, so that
/// quantising an already-quantised value never drifts by a rounding error
/// in the underlying `log2`. Zero maps to −∞, which the shift logic treats
/// as an underflow.
fn exact_log2(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    let bits = x.to_bits();
    if bits & 0x000F_FFFF_FFFF_FFFF == 0 && x.is_normal() {
        ((bits >> 52) as i64 - 1023) as f64
    } else {
        x.log2()
    }
}

/// Shift count for a nonnegative normalised magnitude, or `None` when the
/// underflow policy flushes it to zero. Magnitude 0 underflows by
/// definition (log −∞), which is how pruning's minimum survivor reaches
/// the deepest shift under the clamp policy.
pub(crate) fn shift_for_magnitude(mag: f64, cfg: &QuantConfig) -> Option<u32> {
    let log2 = exact_log2(mag);
    let e = match cfg.rounding {
        // f64::round is round-half-away-from-zero, the tie rule used
        // throughout.
        Rounding::Nearest => log2.round(),
        Rounding::Ceil => log2.ceil(),
    };
    let e = e.min(cfg.fsr as f64);
    let s = cfg.fsr as f64 - e;
    if s > cfg.s_max() as f64 {
        match cfg.underflow {
            Underflow::FlushToZero => None,
            Underflow::Clamp => Some(cfg.s_max()),
        }
    } else {
        Some(s as u32)
    }
}

/// Scale a tensor by its largest magnitude so all values lie in [−1, 1],
/// with the attaining element mapping to ±1 exactly.
pub fn normalize(w: &Tensor) -> Result<(Tensor, f32)> {
    let sf = w.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if sf == 0.0 {
        return Err(Error::Domain("all-zero tensor has no meaningful scale".into()));
    }
    let data = w.data().iter().map(|v| v / sf).collect();
    Ok((Tensor::new(w.shape().to_vec(), data)?, sf))
}

/// Quantise one normalised value to a power-of-two level.
pub fn log_quantize(x: f64, cfg: &QuantConfig) -> Result<QuantLevel> {
    cfg.validate()?;
    if x.abs() > 1.0 || x.is_nan() {
        return Err(Error::Domain(format!("{x} outside the normalised interval [-1, 1]")));
    }
    if x == 0.0 {
        return Ok(QuantLevel::Zero);
    }
    Ok(match shift_for_magnitude(x.abs(), cfg) {
        Some(shift) => QuantLevel::Pot { sign: Sign::of(x), shift },
        None => QuantLevel::Zero,
    })
}

/// Quantise a whole tensor: normalise, then quantise each element under
/// the configured family. The stored scale folds in `2^fsr` so that
/// reconstruction never needs the config again.
pub fn quantize_layer(w: &Tensor, cfg: &QuantConfig) -> Result<QuantizedLayer> {
    cfg.validate()?;
    if cfg.family == Family::Uniform {
        return uniform_quantize_layer(w, cfg.bitwidth);
    }
    let (w_n, sf) = normalize(w)?;
    let levels = w_n
        .data()
        .iter()
        .map(|&x| log_quantize(x as f64, cfg))
        .collect::<Result<Vec<_>>>()?;
    let scale = (sf as f64 * 2f64.powi(cfg.fsr)) as f32;
    Ok(QuantizedLayer {
        shape: w.shape().to_vec(),
        levels: Levels::Pot(levels),
        scale,
        offset: 0.0,
        bitwidth: cfg.bitwidth,
    })
}

/// Symmetric uniform baseline: levels are integers in [−M, M] with
/// M = 2^(bitwidth−1) − 1, reconstruction `level · scale / M`.
pub fn uniform_quantize_layer(w: &Tensor, bitwidth: u32) -> Result<QuantizedLayer> {
    if !(3..=8).contains(&bitwidth) {
        return Err(Error::Domain(format!("bitwidth {bitwidth} outside supported range 3..=8")));
    }
    let (w_n, sf) = normalize(w)?;
    let m = (1i32 << (bitwidth - 1)) - 1;
    let levels = w_n
        .data()
        .iter()
        .map(|&x| {
            let l = (x as f64 * m as f64).round() as i32;
            l.clamp(-m, m)
        })
        .collect();
    Ok(QuantizedLayer {
        shape: w.shape().to_vec(),
        levels: Levels::Uniform(levels),
        scale: sf,
        offset: 0.0,
        bitwidth,
    })
}

/// Reconstruct real weights from a quantised layer.
pub fn dequantize(q: &QuantizedLayer) -> Result<Tensor> {
    q.validate()?;
    let scale = q.scale as f64;
    let offset = q.offset as f64;
    let data: Vec<f32> = match &q.levels {
        Levels::Pot(levels) => levels
            .iter()
            .map(|l| match *l {
                QuantLevel::Zero => 0.0,
                QuantLevel::Pot { sign, shift } => {
                    (sign.factor() * (2f64.powi(-(shift as i32)) * scale + offset)) as f32
                }
            })
            .collect(),
        Levels::Uniform(levels) => {
            if q.offset != 0.0 {
                return Err(Error::Domain(
                    "uniform-family layer cannot carry a nonzero offset".into(),
                ));
            }
            let m = ((1i32 << (q.bitwidth - 1)) - 1) as f64;
            levels.iter().map(|&l| (l as f64 * scale / m) as f32).collect()
        }
    };
    Tensor::new(q.shape.clone(), data)
}

/// Error summary of a quantised layer against the original tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantReport {
    /// Largest relative reconstruction error over elements where both the
    /// original and the reconstruction are nonzero.
    pub max_rel_err_nonzero: f64,
    pub mse: f64,
    /// Fraction of elements quantised to the zero level.
    pub zero_fraction: f64,
}

pub fn quant_error_report(w: &Tensor, q: &QuantizedLayer) -> Result<QuantReport> {
    if w.shape() != q.shape.as_slice() {
        return Err(Error::Shape(format!(
            "tensor shape {:?} does not match layer shape {:?}",
            w.shape(),
            q.shape
        )));
    }
    let recon = dequantize(q)?;
    let mut max_rel = 0.0f64;
    let mut sq_sum = 0.0f64;
    for (&orig, &rec) in w.data().iter().zip(recon.data()) {
        let (orig, rec) = (orig as f64, rec as f64);
        let diff = rec - orig;
        sq_sum += diff * diff;
        if orig != 0.0 && rec != 0.0 {
            max_rel = max_rel.max(diff.abs() / orig.abs());
        }
    }
    Ok(QuantReport {
        max_rel_err_nonzero: max_rel,
        mse: sq_sum / w.len() as f64,
        zero_fraction: q.levels.zero_count() as f64 / q.element_count() as f64,
    })
}
