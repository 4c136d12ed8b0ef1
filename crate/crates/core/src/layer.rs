//! Streaming convolution-layer simulator built on the processing-element
//! models: one PE per output filter, stride-1 sliding windows, raw integer
//! accumulator outputs, and aggregate op/cycle/energy reporting.
//!
//! Cycle accounting follows the per-result pipeline formula: a filter's
//! first output is ready after `taps + 1` cycles and each further output
//! follows `taps` cycles later (`taps = c_in·k²`), so a filter's output
//! plane costs `outputs·taps + 1` cycles in total. Filters run on parallel
//! PEs, so that is also the layer's cycle count.
//!
//! Energy is a dimensionless proxy — a weighted op count with configurable
//! per-op costs — never a wattage claim. The default shift/multiply cost
//! ratio is 0.706, and skipped (zero-weight) slots default to free.

use rayon::prelude::*;

use crate::codec::{encode_level, PackedLayer};
use crate::error::{Error, Result};
use crate::pe::{bac_offset_step, bac_step, mac_step, AccState, Activation, ActivationMode};
use crate::quant::{s_max, Levels, QuantLevel, QuantizedLayer};
use crate::rng::XorShift64Star;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding: output plane shrinks to (h−k+1)×(w−k+1).
    Valid,
    /// Zero-pad by (k−1)/2 so the output plane matches the input.
    SameZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Mac,
    Bac,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mac => "mac",
            Mode::Bac => "bac",
        }
    }
}

/// Integer feature map of 8-bit activations, laid out channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    c_in: usize,
    h: usize,
    w: usize,
    data: Vec<Activation>,
}

impl FeatureMap {
    pub fn new(c_in: usize, h: usize, w: usize, data: Vec<Activation>) -> Result<FeatureMap> {
        if c_in == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("feature map {c_in}×{h}×{w} has an empty dimension")));
        }
        if data.len() != c_in * h * w {
            return Err(Error::Shape(format!(
                "feature map {c_in}×{h}×{w} needs {} activations, got {}",
                c_in * h * w,
                data.len()
            )));
        }
        Ok(FeatureMap { c_in, h, w, data })
    }

    /// Range-check a real tensor of integral values into activations.
    pub fn from_tensor(t: &Tensor, mode: ActivationMode) -> Result<FeatureMap> {
        let shape = t.shape();
        if shape.len() != 3 {
            return Err(Error::Shape(format!(
                "feature map tensor must be 3-dimensional (channels × height × width), got {shape:?}"
            )));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if v.fract() != 0.0 {
                    return Err(Error::Domain(format!("activation value {v} is not an integer")));
                }
                Activation::new_in(v as i32, mode)
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureMap::new(shape[0], shape[1], shape[2], data)
    }

    /// Deterministic random map: activations drawn uniformly over the
    /// mode's full 8-bit range.
    pub fn random(
        c_in: usize,
        h: usize,
        w: usize,
        seed: u64,
        mode: ActivationMode,
    ) -> Result<FeatureMap> {
        let mut rng = XorShift64Star::new(seed);
        let data = (0..c_in * h * w)
            .map(|_| {
                let raw = (rng.next_u64() % 256) as i32;
                match mode {
                    ActivationMode::Signed => Activation::new(raw - 128),
                    ActivationMode::Unsigned => Activation::new_unsigned(raw),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureMap::new(c_in, h, w, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.c_in, self.h, self.w)
    }

    pub fn data(&self) -> &[Activation] {
        &self.data
    }

    fn get(&self, c: usize, y: usize, x: usize) -> Activation {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// How raw accumulator values map back to real units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputScaling {
    /// value = acc · scale / m (uniform-family integer levels)
    Uniform { scale: f32, m: i32 },
    /// value = acc · 2^(−s_max) · scale + aux · offset (shift codes)
    FixedPoint { scale: f32, offset: f32, s_max: u32 },
}

/// Integer weight levels for the MAC datapath.
#[derive(Debug, Clone, PartialEq)]
pub struct IntWeights {
    pub shape: Vec<usize>,
    pub levels: Vec<i64>,
    pub weight_bits: u32,
    pub scaling: OutputScaling,
}

impl IntWeights {
    /// MAC weights straight from a uniform-family quantised layer.
    pub fn from_uniform_layer(q: &QuantizedLayer) -> Result<IntWeights> {
        q.validate()?;
        let Levels::Uniform(levels) = &q.levels else {
            return Err(Error::Domain("expected a uniform-family layer".into()));
        };
        if q.offset != 0.0 {
            return Err(Error::Domain("uniform-family layer cannot carry an offset".into()));
        }
        let m = (1i32 << (q.bitwidth - 1)) - 1;
        Ok(IntWeights {
            shape: q.shape.clone(),
            levels: levels.iter().map(|&l| l as i64).collect(),
            weight_bits: q.bitwidth,
            scaling: OutputScaling::Uniform { scale: q.scale, m },
        })
    }

    /// MAC weights equivalent to a packed shift layer: ±2^(S_max − s) per
    /// nonzero code, 0 per zero code. Running the MAC datapath on these
    /// reproduces the BAC accumulator bit-for-bit — the layer-scale
    /// version of the claim that a shifter can replace the multiplier.
    pub fn shift_equivalents(p: &PackedLayer) -> Result<IntWeights> {
        if p.offset_mode {
            return Err(Error::Domain(
                "offset reconstruction has no integer MAC equivalent".into(),
            ));
        }
        let cap = s_max(p.bitwidth);
        // the equivalent levels span ±2^cap, i.e. a (cap+2)-bit format
        if cap + 2 > 32 {
            return Err(Error::Domain(format!(
                "bitwidth {} shift equivalents exceed a 32-bit weight format",
                p.bitwidth
            )));
        }
        let levels = p
            .decode_levels()?
            .iter()
            .map(|l| match *l {
                QuantLevel::Zero => 0i64,
                QuantLevel::Pot { sign, shift } => {
                    sign.factor() as i64 * (1i64 << (cap - shift))
                }
            })
            .collect();
        Ok(IntWeights {
            shape: p.shape.clone(),
            levels,
            weight_bits: cap + 2,
            scaling: OutputScaling::FixedPoint { scale: p.scale, offset: 0.0, s_max: cap },
        })
    }
}

/// Weight input for a layer run, selecting the datapath.
#[derive(Debug, Clone, Copy)]
pub enum LayerWeights<'a> {
    Mac(&'a IntWeights),
    Bac(&'a PackedLayer),
}

/// Per-op energy costs. The defaults price a shift at 0.706 of a multiply
/// — the layer-power ratio behind the shift datapath's advantage — and a
/// skipped slot at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub cost_mult: f64,
    pub cost_shift: f64,
    pub cost_skip: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { cost_mult: 1.0, cost_shift: 0.706, cost_skip: 0.0 }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("cost-mult", self.cost_mult),
            ("cost-shift", self.cost_shift),
            ("cost-skip", self.cost_skip),
        ] {
            if c < 0.0 || !c.is_finite() {
                return Err(Error::Domain(format!("{name} {c} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Validated geometry of one convolution run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub padding: Padding,
}

impl LayerConfig {
    pub fn infer(
        input: &FeatureMap,
        weight_shape: &[usize],
        padding: Padding,
    ) -> Result<LayerConfig> {
        let (c_in, h, w) = input.dims();
        let [c_out, w_cin, kh, kw] = weight_shape else {
            return Err(Error::Shape(format!(
                "weights must be 4-dimensional (filters × channels × k × k), got {weight_shape:?}"
            )));
        };
        if kh != kw {
            return Err(Error::Shape(format!("kernel {kh}×{kw} is not square")));
        }
        let k = *kh;
        if k % 2 == 0 {
            return Err(Error::Shape(format!("kernel size {k} must be odd")));
        }
        if *w_cin != c_in {
            return Err(Error::Shape(format!(
                "weights expect {w_cin} input channels, feature map has {c_in}"
            )));
        }
        if padding == Padding::Valid && (k > h || k > w) {
            return Err(Error::Shape(format!(
                "{k}×{k} kernel does not fit the {h}×{w} input without padding"
            )));
        }
        Ok(LayerConfig { c_in, c_out: *c_out, k, h, w, padding })
    }

    pub fn out_dims(&self) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (self.h - self.k + 1, self.w - self.k + 1),
            Padding::SameZero => (self.h, self.w),
        }
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::SameZero => (self.k - 1) / 2,
        }
    }

    pub fn taps_per_output(&self) -> u64 {
        (self.c_in * self.k * self.k) as u64
    }

    /// Pipeline cycles for the whole layer: each filter streams its output
    /// plane through one PE at one result per `taps` cycles after a
    /// `taps + 1` fill, and filters run in parallel.
    pub fn total_cycles(&self) -> u64 {
        let (h_out, w_out) = self.out_dims();
        (h_out * w_out) as u64 * self.taps_per_output() + 1
    }
}

/// Raw integer outputs of a layer run plus the metadata to turn them into
/// real units. No activation function or re-quantisation is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorMap {
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub acc: Vec<i64>,
    /// Signed activation sums for offset-mode reconstruction; empty when
    /// the weights carry no offset.
    pub aux: Vec<i64>,
    pub scaling: OutputScaling,
}

impl AccumulatorMap {
    pub fn to_real(&self) -> Result<Tensor> {
        let data = match self.scaling {
            OutputScaling::Uniform { scale, m } => self
                .acc
                .iter()
                .map(|&a| (a as f64 * scale as f64 / m as f64) as f32)
                .collect(),
            OutputScaling::FixedPoint { scale, offset, s_max } => {
                let fixed = 2f64.powi(-(s_max as i32));
                self.acc
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let aux = self.aux.get(i).copied().unwrap_or(0);
                        (a as f64 * fixed * scale as f64 + aux as f64 * offset as f64) as f32
                    })
                    .collect()
            }
        };
        Tensor::new(vec![self.c_out, self.h_out, self.w_out], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerReport {
    pub mode: Mode,
    pub mults_performed: u64,
    pub shifts_performed: u64,
    pub ops_skipped: u64,
    pub total_cycles: u64,
    pub zero_weight_fraction: f64,
    pub energy_proxy: f64,
    /// True when the weights reconstruct with a nonzero offset, i.e. each
    /// output additionally paid one constant multiply at finalisation.
    pub offset_mode: bool,
}

impl LayerReport {
    pub const CSV_HEADER: &'static str =
        "mode,mults,shifts,skipped,cycles,zero_fraction,energy_proxy";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mode.as_str(),
            self.mults_performed,
            self.shifts_performed,
            self.ops_skipped,
            self.total_cycles,
            self.zero_weight_fraction,
            self.energy_proxy
        )
    }

    pub fn table(&self) -> String {
        format!(
            "mode            {}\n\
             mults           {}\n\
             shifts          {}\n\
             skipped         {}\n\
             cycles          {}\n\
             zero fraction   {}\n\
             energy proxy    {}{}\n",
            self.mode.as_str(),
            self.mults_performed,
            self.shifts_performed,
            self.ops_skipped,
            self.total_cycles,
            self.zero_weight_fraction,
            self.energy_proxy,
            if self.offset_mode { "\noffset mode     yes (one constant multiply per output)" } else { "" }
        )
    }
}

/// Weighted op count under the given cost model.
pub fn energy_proxy(report: &LayerReport, model: &EnergyModel) -> f64 {
    report.mults_performed as f64 * model.cost_mult
        + report.shifts_performed as f64 * model.cost_shift
        + report.ops_skipped as f64 * model.cost_skip
}

struct ChannelRun {
    acc: Vec<i64>,
    aux: Vec<i64>,
    performed: u64,
    skipped: u64,
}

/// Run one convolution layer. Output channels are processed on parallel
/// workers; results and counters are bit-identical to a sequential run
/// because each channel's work is independent and merged in channel order.
pub fn run_conv_layer(
    input: &FeatureMap,
    weights: LayerWeights,
    padding: Padding,
    energy: &EnergyModel,
) -> Result<(AccumulatorMap, LayerReport)> {
    energy.validate()?;
    let (mode, weight_shape) = match weights {
        LayerWeights::Mac(iw) => (Mode::Mac, iw.shape.as_slice()),
        LayerWeights::Bac(p) => (Mode::Bac, p.shape.as_slice()),
    };
    let cfg = LayerConfig::infer(input, weight_shape, padding)?;
    let (h_out, w_out) = cfg.out_dims();
    let taps = cfg.taps_per_output() as usize;

    // per-filter weight streams, prepared once
    enum Prepared {
        Mac { levels: Vec<i64>, weight_bits: u32 },
        Bac { codes: Vec<crate::codec::Codeword>, levels: Vec<QuantLevel>, bitwidth: u32, offset_mode: bool },
    }
    let (prepared, scaling, zero_count) = match weights {
        LayerWeights::Mac(iw) => {
            let zeros = iw.levels.iter().filter(|&&l| l == 0).count();
            (
                Prepared::Mac { levels: iw.levels.clone(), weight_bits: iw.weight_bits },
                iw.scaling,
                zeros,
            )
        }
        LayerWeights::Bac(p) => {
            let levels = p.decode_levels()?;
            let codes = levels
                .iter()
                .map(|&l| encode_level(l, p.bitwidth))
                .collect::<Result<Vec<_>>>()?;
            let zeros = levels.iter().filter(|l| l.is_zero()).count();
            (
                Prepared::Bac {
                    codes,
                    levels,
                    bitwidth: p.bitwidth,
                    offset_mode: p.offset_mode,
                },
                OutputScaling::FixedPoint {
                    scale: p.scale,
                    offset: p.offset,
                    s_max: s_max(p.bitwidth),
                },
                zeros,
            )
        }
    };
    let offset_mode = matches!(prepared, Prepared::Bac { offset_mode: true, .. });
    let zero_pad = Activation::new(0).expect("0 is a valid activation");
    let pad = cfg.pad();

    let run_channel = |f: usize| -> Result<ChannelRun> {
        let mut run = ChannelRun {
            acc: Vec::with_capacity(h_out * w_out),
            aux: if offset_mode { Vec::with_capacity(h_out * w_out) } else { Vec::new() },
            performed: 0,
            skipped: 0,
        };
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut state = AccState::default();
                let mut tap = f * taps;
                for ci in 0..cfg.c_in {
                    for ky in 0..cfg.k {
                        for kx in 0..cfg.k {
                            let iy = (oy + ky) as isize - pad as isize;
                            let ix = (ox + kx) as isize - pad as isize;
                            let a = if iy < 0
                                || ix < 0
                                || iy >= cfg.h as isize
                                || ix >= cfg.w as isize
                            {
                                zero_pad
                            } else {
                                input.get(ci, iy as usize, ix as usize)
                            };
                            match &prepared {
                                Prepared::Mac { levels, weight_bits } => {
                                    mac_step(&mut state, a, levels[tap], *weight_bits)?;
                                }
                                Prepared::Bac { codes, levels, bitwidth, offset_mode } => {
                                    bac_step(&mut state, a, codes[tap], *bitwidth)?;
                                    if *offset_mode {
                                        if let QuantLevel::Pot { sign, .. } = levels[tap] {
                                            bac_offset_step(&mut state, a, sign)?;
                                        }
                                    }
                                }
                            }
                            tap += 1;
                        }
                    }
                }
                run.acc.push(state.acc);
                if offset_mode {
                    run.aux.push(state.aux);
                }
                run.performed += state.ops_performed;
                run.skipped += state.ops_skipped;
            }
        }
        Ok(run)
    };

    let channels: Vec<Result<ChannelRun>> = (0..cfg.c_out).into_par_iter().map(run_channel).collect();

    let mut acc = Vec::with_capacity(cfg.c_out * h_out * w_out);
    let mut aux = Vec::new();
    let mut performed = 0u64;
    let mut skipped = 0u64;
    for ch in channels {
        let ch = ch?;
        acc.extend_from_slice(&ch.acc);
        aux.extend_from_slice(&ch.aux);
        performed += ch.performed;
        skipped += ch.skipped;
    }

    let total_levels = weight_shape.iter().product::<usize>();
    let mut report = LayerReport {
        mode,
        mults_performed: if mode == Mode::Mac { performed } else { 0 },
        shifts_performed: if mode == Mode::Bac { performed } else { 0 },
        ops_skipped: skipped,
        total_cycles: cfg.total_cycles(),
        zero_weight_fraction: zero_count as f64 / total_levels as f64,
        energy_proxy: 0.0,
        offset_mode,
    };
    report.energy_proxy = energy_proxy(&report, energy);

    let map = AccumulatorMap { c_out: cfg.c_out, h_out, w_out, acc, aux, scaling };
    Ok((map, report))
}

/// Side-by-side run of the shift datapath against the uniform-quantised
/// multiply baseline, from weight sets derived from the same real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub bac: LayerReport,
    pub mac: LayerReport,
    /// BAC proxy / MAC proxy; absent when the MAC run performed no
    /// priced work (all-skip layers).
    pub proxy_ratio: Option<f64>,
    /// Mean squared difference of the two real-valued outputs. The two
    /// quantisers produce different weights, so this measures accuracy
    /// divergence, not an error in either datapath.
    pub output_msd: f64,
    /// True when both runs consisted solely of skipped ops.
    pub skip_only: bool,
}

pub fn compare_modes(
    input: &FeatureMap,
    pot_weights: &PackedLayer,
    uniform_weights: &QuantizedLayer,
    padding: Padding,
    energy: &EnergyModel,
) -> Result<ComparisonReport> {
    if pot_weights.shape != uniform_weights.shape {
        return Err(Error::Shape(format!(
            "weight shapes differ: {:?} vs {:?}",
            pot_weights.shape, uniform_weights.shape
        )));
    }
    let (bac_map, bac_report) =
        run_conv_layer(input, LayerWeights::Bac(pot_weights), padding, energy)?;
    let mac_weights = IntWeights::from_uniform_layer(uniform_weights)?;
    let (mac_map, mac_report) =
        run_conv_layer(input, LayerWeights::Mac(&mac_weights), padding, energy)?;
    let bac_real = bac_map.to_real()?;
    let mac_real = mac_map.to_real()?;
    let output_msd = bac_real
        .data()
        .iter()
        .zip(mac_real.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / bac_real.len() as f64;
    let skip_only = bac_report.energy_proxy == 0.0 && mac_report.energy_proxy == 0.0;
    let proxy_ratio = (mac_report.energy_proxy > 0.0)
        .then(|| bac_report.energy_proxy / mac_report.energy_proxy);
    Ok(ComparisonReport { bac: bac_report, mac: mac_report, proxy_ratio, output_msd, skip_only })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::pack_layer;
    use crate::quant::{quantize_layer, uniform_quantize_layer, QuantConfig, Sign};
    use crate::tensor::Dist;

    fn ones_input(c: usize, h: usize, w: usize) -> FeatureMap {
        let data = vec![Activation::new(1).unwrap(); c * h * w];
        FeatureMap::new(c, h, w, data).unwrap()
    }

    fn packed_from_levels(levels: Vec<QuantLevel>, shape: Vec<usize>, scale: f32) -> PackedLayer {
        let q = QuantizedLayer { shape, levels: Levels::Pot(levels), scale, offset: 0.0, bitwidth: 4 };
        pack_layer(&q).unwrap()
    }

    #[test]
    fn identity_filter_on_ones_sums_the_window() {
        let input = ones_input(1, 4, 4);
        let levels = vec![QuantLevel::Pot { sign: Sign::Plus, shift: 0 }; 9];
        let packed = packed_from_levels(levels, vec![1, 1, 3, 3], 1.0);
        let (map, report) =
            run_conv_layer(&input, LayerWeights::Bac(&packed), Padding::Valid, &EnergyModel::default())
                .unwrap();
        assert_eq!((map.c_out, map.h_out, map.w_out), (1, 2, 2));
        // each output accumulates 9 · 2^6 at the 2^(−6) fixed-point scale
        assert!(map.acc.iter().all(|&a| a == 9 * 64));
        let real = map.to_real().unwrap();
        assert!(real.data().iter().all(|&v| v == 9.0));
        assert_eq!(report.shifts_performed, 4 * 9);
        assert_eq!(report.ops_skipped, 0);
    }

    #[test]
    fn cycle_accounting_matches_the_pipeline_formula() {
        let input = ones_input(1, 4, 4);
        let levels = vec![QuantLevel::Pot { sign: Sign::Plus, shift: 0 }; 9];
        let packed = packed_from_levels(levels, vec![1, 1, 3, 3], 1.0);
        let (_, report) =
            run_conv_layer(&input, LayerWeights::Bac(&packed), Padding::Valid, &EnergyModel::default())
                .unwrap();
        // 4 outputs × 9 taps + 1 fill cycle
        assert_eq!(report.total_cycles, 37);
    }

    #[test]
    fn seventy_percent_zero_weights_skip_seventy_percent_of_taps() {
        // 10 filters × 9 taps = 90 weights, 63 of them zero
        let mut levels = Vec::new();
        for f in 0..10 {
            for t in 0..9 {
                // filters 0..6 fully zero (63 = 7·9 zeros), rest nonzero
                if f < 7 {
                    levels.push(QuantLevel::Zero);
                } else {
                    levels.push(QuantLevel::Pot {
                        sign: if (f + t) % 2 == 0 { Sign::Plus } else { Sign::Minus },
                        shift: (t % 7) as u32,
                    });
                }
            }
        }
        let packed = packed_from_levels(levels, vec![10, 1, 3, 3], 2.0);
        let input = FeatureMap::random(1, 6, 6, 3, ActivationMode::Signed).unwrap();
        let (_, report) =
            run_conv_layer(&input, LayerWeights::Bac(&packed), Padding::Valid, &EnergyModel::default())
                .unwrap();
        let total = report.shifts_performed + report.ops_skipped;
        assert_eq!(report.ops_skipped as f64 / total as f64, 0.7);
        assert_eq!(report.zero_weight_fraction, 0.7);
    }

    #[test]
    fn counters_conserve_the_tap_count() {
        let w = Tensor::random(vec![8, 2, 3, 3], 5, Dist::Normal).unwrap();
        let q = quantize_layer(&w, &QuantConfig::default()).unwrap();
        let packed = pack_layer(&q).unwrap();
        let input = FeatureMap::random(2, 7, 5, 11, ActivationMode::Signed).unwrap();
        for padding in [Padding::Valid, Padding::SameZero] {
            let (map, report) =
                run_conv_layer(&input, LayerWeights::Bac(&packed), padding, &EnergyModel::default())
                    .unwrap();
            let taps = (map.c_out * map.h_out * map.w_out) as u64 * 2 * 9;
            assert_eq!(report.shifts_performed + report.ops_skipped, taps);
        }
    }

    /// Plain nested-loop convolution over decoded integer weights — the
    /// reference the parallel path must match exactly.
    fn sequential_reference(input: &FeatureMap, packed: &PackedLayer, padding: Padding) -> Vec<i64> {
        let cfg = LayerConfig::infer(input, &packed.shape, padding).unwrap();
        let (h_out, w_out) = cfg.out_dims();
        let pad = match padding {
            Padding::Valid => 0isize,
            Padding::SameZero => ((cfg.k - 1) / 2) as isize,
        };
        let levels = packed.decode_levels().unwrap();
        let cap = s_max(packed.bitwidth);
        let mut out = Vec::new();
        for f in 0..cfg.c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0i64;
                    for ci in 0..cfg.c_in {
                        for ky in 0..cfg.k {
                            for kx in 0..cfg.k {
                                let iy = (oy + ky) as isize - pad;
                                let ix = (ox + kx) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= cfg.h as isize || ix >= cfg.w as isize
                                {
                                    continue;
                                }
                                let a = input.get(ci, iy as usize, ix as usize).value() as i64;
                                let idx = ((f * cfg.c_in + ci) * cfg.k + ky) * cfg.k + kx;
                                match levels[idx] {
                                    QuantLevel::Zero => {}
                                    QuantLevel::Pot { sign, shift } => {
                                        let w = sign.factor() as i64 * (1i64 << (cap - shift));
                                        acc += a * w;
                                    }
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn parallel_run_matches_sequential_reference() {
        let w = Tensor::random(vec![16, 3, 3, 3], 23, Dist::Normal).unwrap();
        let q = quantize_layer(&w, &QuantConfig::default()).unwrap();
        let packed = pack_layer(&q).unwrap();
        let input = FeatureMap::random(3, 9, 9, 29, ActivationMode::Signed).unwrap();
        for padding in [Padding::Valid, Padding::SameZero] {
            let (map, _) =
                run_conv_layer(&input, LayerWeights::Bac(&packed), padding, &EnergyModel::default())
                    .unwrap();
            assert_eq!(map.acc, sequential_reference(&input, &packed, padding));
        }
    }

    #[test]
    fn bac_equals_mac_on_shift_equivalent_weights() {
        let w = Tensor::random(vec![32, 1, 3, 3], 41, Dist::Normal).unwrap();
        let q = quantize_layer(&w, &QuantConfig::default()).unwrap();
        let packed = pack_layer(&q).unwrap();
        let input = FeatureMap::random(1, 8, 8, 43, ActivationMode::Signed).unwrap();
        let (bac_map, bac_report) =
            run_conv_layer(&input, LayerWeights::Bac(&packed), Padding::Valid, &EnergyModel::default())
                .unwrap();
        let iw = IntWeights::shift_equivalents(&packed).unwrap();
        let (mac_map, mac_report) =
            run_conv_layer(&input, LayerWeights::Mac(&iw), Padding::Valid, &EnergyModel::default())
                .unwrap();
        assert_eq!(bac_map.acc, mac_map.acc);
        assert_eq!(bac_map.to_real().unwrap(), mac_map.to_real().unwrap());
        assert_eq!(bac_report.shifts_performed, mac_report.mults_performed);
        assert_eq!(bac_report.ops_skipped, mac_report.ops_skipped);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let w = Tensor::random(vec![24, 2, 3, 3], 31, Dist::Normal).unwrap();
        let q = quantize_layer(&w, &QuantConfig::default()).unwrap();
        let packed = pack_layer(&q).unwrap();
        let input = FeatureMap::random(2, 10, 10, 37, ActivationMode::Signed).unwrap();
        let (map_a, report_a) =
            run_conv_layer(&input, LayerWeights::Bac(&packed), Padding::SameZero, &EnergyModel::default())
                .unwrap();
        let (map_b, report_b) =
            run_conv_layer(&input, LayerWeights::Bac(&packed), Padding::SameZero, &EnergyModel::default())
                .unwrap();
        assert_eq!(map_a, map_b);
        assert_eq!(report_a, report_b);
    }

    #[test]
    fn energy_proxy_examples() {
        let base = LayerReport {
            mode: Mode::Mac,
            mults_performed: 100,
            shifts_performed: 0,
            ops_skipped: 0,
            total_cycles: 0,
            zero_weight_fraction: 0.0,
            energy_proxy: 0.0,
            offset_mode: false,
        };
        let model = EnergyModel::default();
        assert_eq!(energy_proxy(&base, &model), 100.0);

        let shifts = LayerReport {
            mode: Mode::Bac,
            mults_performed: 0,
            shifts_performed: 100,
            ..base
        };
        assert!((energy_proxy(&shifts, &model) - 70.6).abs() < 1e-12);

        let mixed = LayerReport {
            mults_performed: 50,
            shifts_performed: 50,
            ops_skipped: 40,
            ..base
        };
        assert!((energy_proxy(&mixed, &model) - 85.3).abs() < 1e-12);
    }

    #[test]
    fn pruning_lowers_the_shift_proxy() {
        let w = Tensor::random(vec![8, 1, 3, 3], 51, Dist::Normal).unwrap();
        let plain = pack_layer(&quantize_layer(&w, &QuantConfig::default()).unwrap()).unwrap();
        let pruned_q = crate::prune::prune_and_quantize(
            &w,
            &crate::prune::PruneConfig { pf: 0.2, quant: QuantConfig::default() },
        )
        .unwrap();
        let pruned = pack_layer(&pruned_q).unwrap();
        let input = FeatureMap::random(1, 6, 6, 53, ActivationMode::Signed).unwrap();
        let model = EnergyModel::default();
        let (_, plain_report) =
            run_conv_layer(&input, LayerWeights::Bac(&plain), Padding::Valid, &model).unwrap();
        let (_, pruned_report) =
            run_conv_layer(&input, LayerWeights::Bac(&pruned), Padding::Valid, &model).unwrap();
        assert!(pruned_report.energy_proxy < plain_report.energy_proxy);
    }

    #[test]
    fn offset_weights_reconstruct_through_the_aux_accumulator() {
        let w = Tensor::new(vec![1, 1, 3, 3], vec![0.05, 0.3, 0.9, 0.5, -0.7, 0.25, 0.6, -0.45, 0.35])
            .unwrap();
        let q = crate::prune::prune_and_quantize(
            &w,
            &crate::prune::PruneConfig { pf: 0.1, quant: QuantConfig::default() },
        )
        .unwrap();
        assert!(q.offset > 0.0);
        let packed = pack_layer(&q).unwrap();
        let input = FeatureMap::random(1, 5, 5, 61, ActivationMode::Signed).unwrap();
        let (map, report) =
            run_conv_layer(&input, LayerWeights::Bac(&packed), Padding::Valid, &EnergyModel::default())
                .unwrap();
        assert!(report.offset_mode);
        let real = map.to_real().unwrap();
        // reference: plain real-valued convolution over the dequantised weights
        let recon = crate::quant::dequantize(&q).unwrap();
        let mut expected = Vec::new();
        for oy in 0..3 {
            for ox in 0..3 {
                let mut sum = 0.0f64;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let a = input.get(0, oy + ky, ox + kx).value() as f64;
                        sum += a * recon.data()[ky * 3 + kx] as f64;
                    }
                }
                expected.push(sum);
            }
        }
        for (&got, want) in real.data().iter().zip(expected) {
            assert!((got as f64 - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn compare_modes_reports_the_cost_ratio() {
        let w = Tensor::random(vec![8, 1, 3, 3], 71, Dist::Normal).unwrap();
        let pot = pack_layer(&quantize_layer(&w, &QuantConfig::default()).unwrap()).unwrap();
        let uniform = uniform_quantize_layer(&w, 4).unwrap();
        let input = FeatureMap::random(1, 6, 6, 73, ActivationMode::Signed).unwrap();
        let cmp =
            compare_modes(&input, &pot, &uniform, Padding::Valid, &EnergyModel::default()).unwrap();
        assert!(!cmp.skip_only);
        let expected = cmp.bac.energy_proxy / cmp.mac.energy_proxy;
        assert_eq!(cmp.proxy_ratio, Some(expected));
        assert!(cmp.output_msd.is_finite() && cmp.output_msd >= 0.0);
    }

    #[test]
    fn all_zero_weights_compare_as_skip_only() {
        let levels = vec![QuantLevel::Zero; 9];
        let pot = packed_from_levels(levels, vec![1, 1, 3, 3], 1.0);
        let uniform = QuantizedLayer {
            shape: vec![1, 1, 3, 3],
            levels: Levels::Uniform(vec![0; 9]),
            scale: 1.0,
            offset: 0.0,
            bitwidth: 4,
        };
        let input = ones_input(1, 4, 4);
        let cmp =
            compare_modes(&input, &pot, &uniform, Padding::Valid, &EnergyModel::default()).unwrap();
        assert!(cmp.skip_only);
        assert_eq!(cmp.proxy_ratio, None);
        assert_eq!(cmp.output_msd, 0.0);
    }

    #[test]
    fn feature_map_rejects_non_integral_tensors() {
        let t = Tensor::new(vec![1, 1, 2], vec![1.5, 2.0]).unwrap();
        assert!(matches!(
            FeatureMap::from_tensor(&t, ActivationMode::Signed),
            Err(Error::Domain(_))
        ));
        let t = Tensor::new(vec![1, 1, 2], vec![200.0, 2.0]).unwrap();
        assert!(FeatureMap::from_tensor(&t, ActivationMode::Signed).is_err());
        assert!(FeatureMap::from_tensor(&t, ActivationMode::Unsigned).is_ok());
    }

    #[test]
    fn kernel_larger_than_input_needs_padding() {
        let w = Tensor::random(vec![1, 1, 5, 5], 81, Dist::Normal).unwrap();
        let q = quantize_layer(&w, &QuantConfig::default()).unwrap();
        let packed = pack_layer(&q).unwrap();
        let input = ones_input(1, 3, 3);
        assert!(run_conv_layer(
            &input,
            LayerWeights::Bac(&packed),
            Padding::Valid,
            &EnergyModel::default()
        )
        .is_err());
        assert!(run_conv_layer(
            &input,
            LayerWeights::Bac(&packed),
            Padding::SameZero,
            &EnergyModel::default()
        )
        .is_ok());
    }
}
