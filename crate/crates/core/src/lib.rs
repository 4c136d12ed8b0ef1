//! Power-of-two weight quantisation for small convolutional networks,
//! with a bit-exact software model of the shift-and-accumulate datapath
//! that makes such weights cheap in hardware.
//!
//! The crate is organised as a pipeline:
//!
//! * [`tensor`] — dense float tensors with a small binary/text file format
//!   and seeded random generation.
//! * [`quant`] — logarithmic (power-of-two) and uniform weight
//!   quantisation: sign + shift levels, scale folding, dequantisation and
//!   error reports.
//! * [`prune`] — dead-zone pruning with survivor renormalisation, feeding
//!   the same level representation.
//! * [`codec`] — the packed on-disk/on-wire codeword format for quantised
//!   layers.
//! * [`pe`] — a single processing element: shift-accumulate (BAC) and
//!   multiply-accumulate (MAC) steps over one filter window, bit-exact
//!   against each other.
//! * [`layer`] — whole convolution layers driven through either datapath,
//!   with cycle counts and an energy proxy.
//! * [`qat`] — a small quantisation-aware training demo using the
//!   straight-through estimator.
//! * [`rng`] — the deterministic generator used everywhere randomness is
//!   needed.

pub mod codec;
pub mod error;
pub mod layer;
pub mod pe;
pub mod prune;
pub mod qat;
pub mod quant;
pub mod rng;
pub mod tensor;

pub use codec::{decode_codeword, encode_level, pack_layer, unpack_layer, Codeword, PackedLayer};
pub use error::{Error, Result};
pub use layer::{
    compare_modes, energy_proxy, run_conv_layer, AccumulatorMap, ComparisonReport, EnergyModel,
    FeatureMap, IntWeights, LayerConfig, LayerReport, LayerWeights, Mode, OutputScaling, Padding,
};
pub use pe::{
    bac_offset_step, bac_step, bac_step_truncating, finalize, mac_step, run_filter, AccState,
    Activation, ActivationMode, FilterWeights, PeStats, ACC_GUARD,
};
pub use prune::{
    dead_zone_prune, prune_and_quantize, renormalize_survivors, sparsity, PruneConfig,
    SurvivorNormalization,
};
pub use qat::{
    evaluate, forward, gen_dataset, gd_train_step, loss_and_gradient, ste_train_step,
    train_and_evaluate, ToyNet, TrainConfig, TrainOutcome,
};
pub use quant::{
    dequantize, log_quantize, normalize, quant_error_report, quantize_layer, s_max,
    uniform_quantize_layer, Family, Levels, QuantConfig, QuantLevel, QuantReport, QuantizedLayer,
    Rounding, Sign, Underflow,
};
pub use rng::XorShift64Star;
pub use tensor::{Dist, FileFormat, Tensor};
