//! Dead-zone pruning for power-of-two quantised layers.
//!
//! Plain log-domain quantisation concentrates its levels near zero —
//! exactly where pruning wants to create a gap. The remedy: after zeroing
//! every weight whose normalised magnitude falls below the pruning factor,
//! the *surviving* magnitudes are renormalised to [0, 1] with
//! `sf′ = w_max − w_min` and `offset = w_min`, and quantisation happens in
//! that shifted frame. Reconstruction is `±(2^(−shift)·scale + offset)`,
//! so every kept weight stays outside the dead zone and the full set of
//! shift levels remains usable no matter how aggressive the pruning.

use crate::error::{Error, Result};
use crate::quant::{
    normalize, shift_for_magnitude, Family, Levels, QuantConfig, QuantLevel, QuantizedLayer, Sign,
    Underflow,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    /// Pruning factor: normalised magnitudes strictly below this are
    /// zeroed. A weight exactly at the threshold survives.
    pub pf: f64,
    pub quant: QuantConfig,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pf) {
            return Err(Error::Domain(format!("pruning factor {} outside [0, 1)", self.pf)));
        }
        self.quant.validate()
    }
}

/// Zero every element with |w| < pf. Expects normalised input
/// (max |w| = 1); the threshold is relative to that unit maximum.
pub fn dead_zone_prune(w_n: &Tensor, pf: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&pf) {
        return Err(Error::Domain(format!("pruning factor {pf} outside [0, 1)")));
    }
    let max_mag = w_n.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if (max_mag - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "input is not normalised: max magnitude {max_mag} instead of 1"
        )));
    }
    let data = w_n
        .data()
        .iter()
        .map(|&v| if (v.abs() as f64) < pf { 0.0 } else { v })
        .collect();
    Tensor::new(w_n.shape().to_vec(), data)
}

/// Survivor magnitudes mapped to [0, 1], plus the parameters to undo the
/// mapping. The `pruned` mask is what distinguishes a true zero from the
/// minimum survivor, whose mapped magnitude is also 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivorNormalization {
    /// Signed mapped values; the minimum survivor appears as ±0 here, so
    /// consult `pruned` rather than the value to identify dropped weights.
    pub values: Tensor,
    pub sf_prime: f32,
    pub offset: f32,
    pub pruned: Vec<bool>,
}

/// Mapped survivor magnitudes at full precision, shared by
/// [`renormalize_survivors`] and [`prune_and_quantize`].
struct MappedSurvivors {
    mapped: Vec<f64>, // magnitude in [0, 1]; 0 where pruned
    signs: Vec<Sign>,
    pruned: Vec<bool>,
    sf_prime: f64,
    offset: f64,
}

fn map_survivors(w_p: &Tensor) -> Result<MappedSurvivors> {
    let mut w_min = f64::INFINITY;
    let mut w_max = f64::NEG_INFINITY;
    let mut distinct: Vec<u32> = w_p
        .data()
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| v.abs().to_bits())
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least two distinct nonzero magnitudes to renormalise, found {}",
            distinct.len()
        )));
    }
    for &v in w_p.data() {
        if v != 0.0 {
            w_min = w_min.min(v.abs() as f64);
            w_max = w_max.max(v.abs() as f64);
        }
    }
    let sf_prime = w_max - w_min;
    let mut mapped = Vec::with_capacity(w_p.len());
    let mut signs = Vec::with_capacity(w_p.len());
    let mut pruned = Vec::with_capacity(w_p.len());
    for &v in w_p.data() {
        if v == 0.0 {
            mapped.push(0.0);
            signs.push(Sign::Plus);
            pruned.push(true);
        } else {
            mapped.push((v.abs() as f64 - w_min) / sf_prime);
            signs.push(Sign::of(v as f64));
            pruned.push(false);
        }
    }
    Ok(MappedSurvivors { mapped, signs, pruned, sf_prime, offset: w_min })
}

/// Map the nonzero magnitudes of a pruned tensor onto [0, 1].
pub fn renormalize_survivors(w_p: &Tensor) -> Result<SurvivorNormalization> {
    let m = map_survivors(w_p)?;
    let data = m
        .mapped
        .iter()
        .zip(&m.signs)
        .map(|(&mag, &sign)| (sign.factor() * mag) as f32)
        .collect();
    Ok(SurvivorNormalization {
        values: Tensor::new(w_p.shape().to_vec(), data)?,
        sf_prime: m.sf_prime as f32,
        offset: m.offset as f32,
        pruned: m.pruned,
    })
}

/// The full dead-zone pipeline: normalise, prune, renormalise survivors,
/// quantise the mapped magnitudes. The resulting layer reconstructs as
/// `±(2^(−shift)·scale + offset)` with `scale = SF·sf′` and
/// `offset = SF·w_min`.
pub fn prune_and_quantize(w: &Tensor, cfg: &PruneConfig) -> Result<QuantizedLayer> {
    cfg.validate()?;
    if cfg.quant.family == Family::Uniform {
        return Err(Error::Domain(
            "dead-zone pruning is defined for the pot family only".into(),
        ));
    }
    let (w_n, sf_global) = normalize(w)?;
    let w_p = dead_zone_prune(&w_n, cfg.pf)?;
    let m = map_survivors(&w_p)?;
    // The minimum survivor maps to magnitude 0, log −∞. Flushing it would
    // re-prune a deliberately kept weight, so underflow must clamp to the
    // deepest shift, landing the weight right at the dead-zone edge.
    let qcfg = QuantConfig { underflow: Underflow::Clamp, ..cfg.quant };
    let levels = m
        .mapped
        .iter()
        .zip(&m.signs)
        .zip(&m.pruned)
        .map(|((&mag, &sign), &is_pruned)| {
            if is_pruned {
                QuantLevel::Zero
            } else {
                match shift_for_magnitude(mag, &qcfg) {
                    Some(shift) => QuantLevel::Pot { sign, shift },
                    // unreachable under clamp; kept total for safety
                    None => QuantLevel::Zero,
                }
            }
        })
        .collect();
    Ok(QuantizedLayer {
        shape: w.shape().to_vec(),
        levels: Levels::Pot(levels),
        scale: (sf_global as f64 * m.sf_prime) as f32,
        offset: (sf_global as f64 * m.offset) as f32,
        bitwidth: cfg.quant.bitwidth,
    })
}

/// Fraction of zero levels in a quantised layer.
pub fn sparsity(q: &QuantizedLayer) -> f64 {
    q.levels.zero_count() as f64 / q.element_count() as f64
}
