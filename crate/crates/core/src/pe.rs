//! Functional and cycle models of the two convolution processing
//! elements: the multiply-accumulate baseline (MAC) and the
//! shift-accumulate datapath (BAC) that replaces the multiplier with a
//! barrel shifter plus an add/subtract selected by the weight's sign bit.
//!
//! The BAC accumulator works at a fixed-point scale of `2^(−S_max)`: a
//! codeword with shift `s` contributes `a · 2^(S_max − s)`, computed as a
//! left shift so no low bits are ever lost. This makes every accumulated
//! sum an exact dyadic rational — the model's substitute for hardware
//! bit-exactness, and the property the cross-check against the MAC path
//! rests on. A truncating variant reproducing a plain arithmetic right
//! shift of the activation is provided for studying the error a
//! narrow-accumulator implementation would incur.
//!
//! Both elements detect zero weights and skip the arithmetic. The skip
//! saves energy (op counters), never time: a skipped slot still occupies
//! its pipeline stage, so cycle counts depend only on the filter size.

use crate::codec::{decode_codeword, Codeword};
use crate::error::{Error, Result};
use crate::quant::{s_max, QuantLevel, Sign};

/// One 8-bit activation. Signed by default ([−128, 127]); an unsigned
/// flavour ([0, 255]) is available since either convention fits in the
/// datapath.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Activation(i16);

impl Activation {
    pub fn new(value: i32) -> Result<Activation> {
        if !(-128..=127).contains(&value) {
            return Err(Error::Domain(format!("activation {value} outside [-128, 127]")));
        }
        Ok(Activation(value as i16))
    }

    pub fn new_unsigned(value: i32) -> Result<Activation> {
        if !(0..=255).contains(&value) {
            return Err(Error::Domain(format!("activation {value} outside [0, 255]")));
        }
        Ok(Activation(value as i16))
    }

    pub fn new_in(value: i32, mode: ActivationMode) -> Result<Activation> {
        match mode {
            ActivationMode::Signed => Activation::new(value),
            ActivationMode::Unsigned => Activation::new_unsigned(value),
        }
    }

    pub fn value(self) -> i16 {
        self.0
    }
}

/// Signedness convention for the 8-bit activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationMode {
    Signed,
    Unsigned,
}

/// Accumulator guard: the model uses 64-bit accumulators but asserts the
/// datapath would fit in 32 bits, which holds for every supported layer
/// size (127 · 2^6 · 4096 taps < 2^31).
pub const ACC_GUARD: i64 = 1 << 31;

/// Running state of one processing element: main accumulator, auxiliary
/// offset-mode accumulator (sum of signed activations), and op counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccState {
    pub acc: i64,
    pub aux: i64,
    pub ops_performed: u64,
    pub ops_skipped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeStats {
    pub ops_performed: u64,
    pub ops_skipped: u64,
    pub cycles: u64,
}

impl AccState {
    pub fn stats(&self, cycles: u64) -> PeStats {
        PeStats { ops_performed: self.ops_performed, ops_skipped: self.ops_skipped, cycles }
    }

    fn guard(&self) -> Result<()> {
        if self.acc.abs() >= ACC_GUARD {
            return Err(Error::Overflow(self.acc));
        }
        if self.aux.abs() >= ACC_GUARD {
            return Err(Error::Overflow(self.aux));
        }
        Ok(())
    }
}

/// One multiply-accumulate step. `weight_bits` bounds the integer weight
/// format: |w| must fit in a signed `weight_bits`-bit level.
pub fn mac_step(state: &mut AccState, a: Activation, w: i64, weight_bits: u32) -> Result<()> {
    let bound = (1i64 << (weight_bits - 1)) - 1;
    if w.abs() > bound {
        return Err(Error::Domain(format!(
            "weight {w} outside the {weight_bits}-bit level range [-{bound}, {bound}]"
        )));
    }
    if w == 0 {
        state.ops_skipped += 1;
        return Ok(());
    }
    state.acc += a.value() as i64 * w;
    state.ops_performed += 1;
    state.guard()
}

/// One shift-accumulate step: decode the codeword, shift the activation
/// left by `S_max − s`, and add or subtract per the sign bit. Zero codes
/// skip.
pub fn bac_step(state: &mut AccState, a: Activation, c: Codeword, bitwidth: u32) -> Result<()> {
    match decode_codeword(c, bitwidth) {
        QuantLevel::Zero => {
            state.ops_skipped += 1;
            Ok(())
        }
        QuantLevel::Pot { sign, shift } => {
            let partial = (a.value() as i64) << (s_max(bitwidth) - shift);
            match sign {
                Sign::Plus => state.acc += partial,
                Sign::Minus => state.acc -= partial,
            }
            state.ops_performed += 1;
            state.guard()
        }
    }
}

/// Truncating shift-accumulate step: the activation is arithmetically
/// right-shifted by `s` (low bits discarded, as a narrow hardware datapath
/// would), and the accumulator works in plain activation units rather than
/// at the `2^(−S_max)` fixed-point scale.
pub fn bac_step_truncating(
    state: &mut AccState,
    a: Activation,
    c: Codeword,
    bitwidth: u32,
) -> Result<()> {
    match decode_codeword(c, bitwidth) {
        QuantLevel::Zero => {
            state.ops_skipped += 1;
            Ok(())
        }
        QuantLevel::Pot { sign, shift } => {
            let partial = (a.value() as i64) >> shift;
            match sign {
                Sign::Plus => state.acc += partial,
                Sign::Minus => state.acc -= partial,
            }
            state.ops_performed += 1;
            state.guard()
        }
    }
}

/// Offset-mode companion to [`bac_step`]: accumulate the signed activation
/// so a pruned layer's constant offset can be applied once at the end.
/// Costs no cycle of its own — it rides along with the owning step.
pub fn bac_offset_step(state: &mut AccState, a: Activation, sign: Sign) -> Result<()> {
    match sign {
        Sign::Plus => state.aux += a.value() as i64,
        Sign::Minus => state.aux -= a.value() as i64,
    }
    state.guard()
}

/// Resolve an accumulator into real units: undo the fixed-point scale,
/// apply the layer scale, and add the offset once per accumulated
/// activation (`aux` carries their signed sum).
pub fn finalize(state: &AccState, bitwidth: u32, scale: f32, offset: f32) -> f64 {
    let fixed_point = state.acc as f64 * 2f64.powi(-(s_max(bitwidth) as i32));
    fixed_point * scale as f64 + state.aux as f64 * offset as f64
}

/// Weight input for a single filter run, selecting the datapath.
#[derive(Debug, Clone, Copy)]
pub enum FilterWeights<'a> {
    Mac { levels: &'a [i64], weight_bits: u32 },
    Bac { codes: &'a [Codeword], bitwidth: u32 },
}

impl FilterWeights<'_> {
    fn len(&self) -> usize {
        match self {
            FilterWeights::Mac { levels, .. } => levels.len(),
            FilterWeights::Bac { codes, .. } => codes.len(),
        }
    }
}

/// Convolve one N×N window against one N×N filter. The element is
/// pipelined with a 2-cycle step latency, so the result is ready after
/// `N·N + 1` cycles regardless of the data — zero-skip reduces switching
/// activity, not latency. Each call models a freshly reset accumulator.
pub fn run_filter(
    window: &[Activation],
    weights: FilterWeights,
    n: usize,
) -> Result<(AccState, PeStats)> {
    if window.len() != n * n || weights.len() != n * n {
        return Err(Error::Shape(format!(
            "window has {} taps, weights {}, expected {}",
            window.len(),
            weights.len(),
            n * n
        )));
    }
    let mut state = AccState::default();
    match weights {
        FilterWeights::Mac { levels, weight_bits } => {
            for (&a, &w) in window.iter().zip(levels) {
                mac_step(&mut state, a, w, weight_bits)?;
            }
        }
        FilterWeights::Bac { codes, bitwidth } => {
            for (&a, &c) in window.iter().zip(codes) {
                bac_step(&mut state, a, c, bitwidth)?;
            }
        }
    }
    let cycles = (n * n + 1) as u64;
    Ok((state, state.stats(cycles)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_level;
    use crate::rng::XorShift64Star;

    fn act(v: i32) -> Activation {
        Activation::new(v).unwrap()
    }

    fn code(l: QuantLevel) -> Codeword {
        encode_level(l, 4).unwrap()
    }

    fn pot(sign: Sign, shift: u32) -> QuantLevel {
        QuantLevel::Pot { sign, shift }
    }

    #[test]
    fn activation_range_is_enforced() {
        assert!(Activation::new(127).is_ok());
        assert!(Activation::new(-128).is_ok());
        assert!(Activation::new(128).is_err());
        assert!(Activation::new_unsigned(255).is_ok());
        assert!(Activation::new_unsigned(-1).is_err());
    }

    #[test]
    fn mac_skips_zero_weights() {
        let mut state = AccState::default();
        mac_step(&mut state, act(100), 0, 4).unwrap();
        assert_eq!(state.acc, 0);
        assert_eq!(state.ops_skipped, 1);
        assert_eq!(state.ops_performed, 0);
    }

    #[test]
    fn mac_multiplies_and_accumulates() {
        let mut state = AccState::default();
        mac_step(&mut state, act(100), -7, 4).unwrap();
        assert_eq!(state.acc, -700);
        assert_eq!(state.ops_performed, 1);
    }

    #[test]
    fn mac_rejects_weight_outside_format() {
        let mut state = AccState::default();
        assert!(mac_step(&mut state, act(1), 8, 4).is_err());
        assert!(mac_step(&mut state, act(1), 64, 8).is_ok());
    }

    #[test]
    fn mac_dot_product_matches_direct_evaluation() {
        let activations: Vec<i64> = vec![3, -7, 0, 120, -128, 55, 1, -1, 99];
        let weights: Vec<i64> = vec![1, -3, 7, 0, 2, -7, 5, 4, -1];
        let mut state = AccState::default();
        for (&a, &w) in activations.iter().zip(&weights) {
            mac_step(&mut state, act(a as i32), w, 4).unwrap();
        }
        let oracle: i64 = activations.iter().zip(&weights).map(|(a, w)| a * w).sum();
        assert_eq!(state.acc, oracle);
    }

    #[test]
    fn bac_shift_matches_fixed_point_identity() {
        let mut state = AccState::default();
        bac_step(&mut state, act(100), code(pot(Sign::Minus, 1)), 4).unwrap();
        assert_eq!(state.acc, -3200);
        // at the implicit 2^(−6) scale this is 100 · (−0.5)
        assert_eq!(state.acc as f64 * 2f64.powi(-6), -50.0);
    }

    #[test]
    fn bac_skips_both_zero_codes() {
        for raw in [0b0111u8, 0b1111] {
            let mut state = AccState::default();
            let c = Codeword::new(raw, 4).unwrap();
            bac_step(&mut state, act(77), c, 4).unwrap();
            assert_eq!(state.acc, 0);
            assert_eq!(state.ops_skipped, 1);
        }
    }

    #[test]
    fn identity_weight_contributes_full_scale() {
        let mut state = AccState::default();
        bac_step(&mut state, act(1), code(pot(Sign::Plus, 0)), 4).unwrap();
        assert_eq!(state.acc, 64);
    }

    #[test]
    fn offset_steps_sum_signed_activations() {
        let mut state = AccState::default();
        bac_offset_step(&mut state, act(5), Sign::Minus).unwrap();
        assert_eq!(state.aux, -5);

        let mut state = AccState::default();
        bac_offset_step(&mut state, act(3), Sign::Plus).unwrap();
        bac_offset_step(&mut state, act(2), Sign::Minus).unwrap();
        bac_offset_step(&mut state, act(7), Sign::Plus).unwrap();
        assert_eq!(state.aux, 8);
    }

    #[test]
    fn offset_steps_match_oracle_on_random_streams() {
        let mut rng = XorShift64Star::new(21);
        for _ in 0..100 {
            let mut state = AccState::default();
            let mut oracle = 0i64;
            for _ in 0..64 {
                let a = (rng.next_u64() % 256) as i32 - 128;
                let neg = rng.next_u64() & 1 == 0;
                let sign = if neg { Sign::Minus } else { Sign::Plus };
                bac_offset_step(&mut state, act(a), sign).unwrap();
                oracle += if neg { -(a as i64) } else { a as i64 };
            }
            assert_eq!(state.aux, oracle);
        }
    }

    #[test]
    fn finalize_undoes_the_fixed_point_scale() {
        let state = AccState { acc: 3200, ..AccState::default() };
        assert_eq!(finalize(&state, 4, 1.0, 0.0), 50.0);
    }

    #[test]
    fn finalize_applies_offset_per_activation() {
        // single tap a = 2 against level (+, 6) with scale 0.6, offset 0.3:
        // the reconstructed weight is 0.309375, so the output is 0.61875
        let mut state = AccState::default();
        bac_step(&mut state, act(2), code(pot(Sign::Plus, 6)), 4).unwrap();
        bac_offset_step(&mut state, act(2), Sign::Plus).unwrap();
        let out = finalize(&state, 4, 0.6, 0.3);
        assert!((out - 0.61875).abs() < 1e-7, "{out}");
    }

    #[test]
    fn cycle_count_follows_the_pipeline_formula() {
        for (n, expected) in [(1usize, 2u64), (3, 10), (5, 26)] {
            let window = vec![act(1); n * n];
            let codes = vec![code(pot(Sign::Plus, 0)); n * n];
            let (_, stats) =
                run_filter(&window, FilterWeights::Bac { codes: &codes, bitwidth: 4 }, n).unwrap();
            assert_eq!(stats.cycles, expected, "N = {n}");
        }
    }

    #[test]
    fn all_zero_filter_skips_every_tap_but_pays_full_latency() {
        let window: Vec<Activation> = (0..9).map(|i| act(i * 10)).collect();
        let codes = vec![code(QuantLevel::Zero); 9];
        let (state, stats) =
            run_filter(&window, FilterWeights::Bac { codes: &codes, bitwidth: 4 }, 3).unwrap();
        assert_eq!(state.acc, 0);
        assert_eq!(stats.ops_skipped, 9);
        assert_eq!(stats.ops_performed, 0);
        assert_eq!(stats.cycles, 10);
    }

    #[test]
    fn window_shape_is_checked() {
        let window = vec![act(1); 8];
        let codes = vec![code(pot(Sign::Plus, 0)); 9];
        assert!(matches!(
            run_filter(&window, FilterWeights::Bac { codes: &codes, bitwidth: 4 }, 3),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn guard_trips_near_the_32_bit_boundary() {
        let mut state = AccState { acc: ACC_GUARD - 1, ..AccState::default() };
        let r = bac_step(&mut state, act(127), code(pot(Sign::Plus, 0)), 4);
        assert!(matches!(r, Err(Error::Overflow(_))));
    }

    fn random_stream(rng: &mut XorShift64Star, len: usize) -> (Vec<Activation>, Vec<Codeword>) {
        let activations =
            (0..len).map(|_| act((rng.next_u64() % 256) as i32 - 128)).collect();
        let codes = (0..len)
            .map(|_| Codeword::new((rng.next_u64() % 16) as u8, 4).unwrap())
            .collect();
        (activations, codes)
    }

    #[test]
    fn bac_is_exact_against_the_rational_dot_product() {
        let mut rng = XorShift64Star::new(4);
        for _ in 0..200 {
            let len = 9 + (rng.next_u64() % 64) as usize;
            let (activations, codes) = random_stream(&mut rng, len);
            let mut state = AccState::default();
            let mut oracle = 0.0f64; // dyadic terms: exact in a 64-bit float
            for (&a, &c) in activations.iter().zip(&codes) {
                bac_step(&mut state, a, c, 4).unwrap();
                if let QuantLevel::Pot { sign, shift } = decode_codeword(c, 4) {
                    oracle += sign.factor() * a.value() as f64 * 2f64.powi(-(shift as i32));
                }
            }
            assert_eq!(state.acc as f64 * 2f64.powi(-6), oracle);
        }
    }

    #[test]
    fn bac_equals_mac_on_shift_equivalent_weights() {
        let mut rng = XorShift64Star::new(8);
        for _ in 0..200 {
            let len = 9 + (rng.next_u64() % 64) as usize;
            let (activations, codes) = random_stream(&mut rng, len);
            let mut bac = AccState::default();
            let mut mac = AccState::default();
            for (&a, &c) in activations.iter().zip(&codes) {
                bac_step(&mut bac, a, c, 4).unwrap();
                let w = match decode_codeword(c, 4) {
                    QuantLevel::Zero => 0,
                    QuantLevel::Pot { sign, shift } => {
                        sign.factor() as i64 * (1i64 << (6 - shift))
                    }
                };
                mac_step(&mut mac, a, w, 8).unwrap();
            }
            assert_eq!(bac, mac);
        }
    }

    #[test]
    fn truncating_mode_discards_low_bits() {
        let mut state = AccState::default();
        bac_step_truncating(&mut state, act(101), code(pot(Sign::Plus, 1)), 4).unwrap();
        assert_eq!(state.acc, 50);
        // arithmetic shift rounds toward negative infinity
        let mut state = AccState::default();
        bac_step_truncating(&mut state, act(-101), code(pot(Sign::Plus, 1)), 4).unwrap();
        assert_eq!(state.acc, -51);
    }

    #[test]
    fn truncation_error_is_bounded_per_tap() {
        let mut rng = XorShift64Star::new(15);
        let (activations, codes) = random_stream(&mut rng, 256);
        let mut exact = AccState::default();
        let mut trunc = AccState::default();
        for (&a, &c) in activations.iter().zip(&codes) {
            bac_step(&mut exact, a, c, 4).unwrap();
            bac_step_truncating(&mut trunc, a, c, 4).unwrap();
        }
        let exact_value = exact.acc as f64 * 2f64.powi(-6);
        // each tap truncates strictly less than one unit
        assert!((exact_value - trunc.acc as f64).abs() < 256.0);
    }
}
