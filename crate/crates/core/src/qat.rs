//! Quantisation-aware training demo: a small dense network trained on an
//! interleaved-spirals classification task with the straight-through
//! estimator (STE).
//!
//! Each training step quantises the master weights afresh, runs the
//! forward pass on the quantised values, and backpropagates as if the
//! quantiser were the identity — the resulting gradients update the
//! full-precision masters. With no quantiser configured the step
//! degenerates to plain gradient descent, and the trajectory must match a
//! plain implementation bit for bit.
//!
//! The loop is deliberately desk-scale: fixed 2→32→32→2 topology, plain
//! gradient descent (no momentum), single-threaded, fully deterministic
//! for a given seed. Master weights are 64-bit so central finite
//! differences can certify the analytic gradients tightly.

use crate::error::{Error, Result};
use crate::prune::{prune_and_quantize, sparsity, PruneConfig};
use crate::quant::{dequantize, quantize_layer, QuantConfig};
use crate::rng::XorShift64Star;
use crate::tensor::Tensor;

pub const D_IN: usize = 2;
pub const HIDDEN: usize = 32;
pub const D_OUT: usize = 2;

/// Master parameters of the fixed 2→32→32→2 network. Weight matrices are
/// row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl ToyNet {
    /// Seeded initialisation: weights uniform in ±1/√fan_in, biases zero.
    pub fn init(seed: u64) -> ToyNet {
        let mut rng = XorShift64Star::new(seed);
        let mut fill = |count: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..count).map(|_| rng.next_uniform(-bound, bound)).collect()
        };
        let w1 = fill(HIDDEN * D_IN, D_IN);
        let w2 = fill(HIDDEN * HIDDEN, HIDDEN);
        let w3 = fill(D_OUT * HIDDEN, HIDDEN);
        ToyNet { w1, b1: vec![0.0; HIDDEN], w2, b2: vec![0.0; HIDDEN], w3, b3: vec![0.0; D_OUT] }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    fn segments(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn segments_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    /// Flat parameter access in the order w1, b1, w2, b2, w3, b3 —
    /// the same order gradients are laid out in.
    pub fn get_param(&self, mut index: usize) -> f64 {
        for seg in self.segments() {
            if index < seg.len() {
                return seg[index];
            }
            index -= seg.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for seg in self.segments_mut() {
            if index < seg.len() {
                seg[index] = value;
                return;
            }
            index -= seg.len();
        }
        panic!("parameter index out of range");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Pruning factor fed to the dead-zone pipeline when quantising;
    /// 0 selects plain quantisation.
    pub pf: f64,
    /// Weight quantiser for the forward pass; `None` trains in full
    /// precision.
    pub quant: Option<QuantConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 300,
            batch_size: 16,
            seed: 1,
            pf: 0.0,
            quant: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain("epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pf) {
            return Err(Error::Domain(format!("pruning factor {} outside [0, 1)", self.pf)));
        }
        if let Some(q) = &self.quant {
            q.validate()?;
        }
        Ok(())
    }
}

/// Two noiseless interleaved spirals, one per class: point `i` of class
/// `c` sits at radius `i/n` and angle `3π·i/n + c·π`. The layout is
/// deterministic; the seed only shuffles the presentation order.
pub fn gen_dataset(seed: u64, n_per_class: usize) -> Result<Vec<([f64; 2], usize)>> {
    if n_per_class < 8 {
        return Err(Error::Domain(format!(
            "need at least 8 points per class, got {n_per_class}"
        )));
    }
    let mut data = Vec::with_capacity(2 * n_per_class);
    for class in 0..2usize {
        for i in 0..n_per_class {
            let t = i as f64 / n_per_class as f64;
            let angle = 3.0 * std::f64::consts::PI * t + class as f64 * std::f64::consts::PI;
            data.push(([t * angle.cos(), t * angle.sin()], class));
        }
    }
    let mut rng = XorShift64Star::new(seed);
    rng.shuffle(&mut data);
    Ok(data)
}

/// The weights a forward pass actually uses: masters passed through the
/// configured quantiser, or untouched copies when no quantiser is set.
/// Biases are never quantised.
struct EffectiveWeights {
    w1: Vec<f64>,
    w2: Vec<f64>,
    w3: Vec<f64>,
    /// Zero-level fraction per weight matrix when a quantiser ran.
    sparsity: Vec<f64>,
}

fn quantise_matrix(
    w: &[f64],
    rows: usize,
    cols: usize,
    cfg: &QuantConfig,
    pf: f64,
) -> Result<(Vec<f64>, f64)> {
    let t = Tensor::new(vec![rows, cols], w.iter().map(|&v| v as f32).collect())?;
    let q = if pf > 0.0 {
        prune_and_quantize(&t, &PruneConfig { pf, quant: *cfg })?
    } else {
        quantize_layer(&t, cfg)?
    };
    let recon = dequantize(&q)?;
    Ok((recon.data().iter().map(|&v| v as f64).collect(), sparsity(&q)))
}

fn effective_weights(net: &ToyNet, quant: Option<&QuantConfig>, pf: f64) -> Result<EffectiveWeights> {
    match quant {
        None => Ok(EffectiveWeights {
            w1: net.w1.clone(),
            w2: net.w2.clone(),
            w3: net.w3.clone(),
            sparsity: Vec::new(),
        }),
        Some(cfg) => {
            let (w1, s1) = quantise_matrix(&net.w1, HIDDEN, D_IN, cfg, pf)?;
            let (w2, s2) = quantise_matrix(&net.w2, HIDDEN, HIDDEN, cfg, pf)?;
            let (w3, s3) = quantise_matrix(&net.w3, D_OUT, HIDDEN, cfg, pf)?;
            Ok(EffectiveWeights { w1, w2, w3, sparsity: vec![s1, s2, s3] })
        }
    }
}

/// Logits for one input point under explicit forward weights.
#[allow(clippy::needless_range_loop)] // parallel indexing into several arrays
fn forward_with(eff: &EffectiveWeights, net: &ToyNet, x: [f64; 2]) -> [f64; D_OUT] {
    let mut h1 = [0.0f64; HIDDEN];
    for j in 0..HIDDEN {
        let z = eff.w1[j * D_IN] * x[0] + eff.w1[j * D_IN + 1] * x[1] + net.b1[j];
        h1[j] = z.max(0.0);
    }
    let mut h2 = [0.0f64; HIDDEN];
    for j in 0..HIDDEN {
        let mut z = net.b2[j];
        for k in 0..HIDDEN {
            z += eff.w2[j * HIDDEN + k] * h1[k];
        }
        h2[j] = z.max(0.0);
    }
    let mut logits = [0.0f64; D_OUT];
    for c in 0..D_OUT {
        let mut z = net.b3[c];
        for k in 0..HIDDEN {
            z += eff.w3[c * HIDDEN + k] * h2[k];
        }
        logits[c] = z;
    }
    logits
}

/// Logits for one point under the configured quantiser.
pub fn forward(
    net: &ToyNet,
    x: [f64; 2],
    quant: Option<&QuantConfig>,
    pf: f64,
) -> Result<[f64; D_OUT]> {
    let eff = effective_weights(net, quant, pf)?;
    Ok(forward_with(&eff, net, x))
}

/// Mean softmax cross-entropy over the batch and its gradient, laid out
/// flat in the parameter order w1, b1, w2, b2, w3, b3. Gradients are taken
/// with respect to the forward weights; under STE the caller applies them
/// to the masters.
#[allow(clippy::needless_range_loop)] // parallel indexing into several arrays
fn loss_and_grad(
    eff: &EffectiveWeights,
    net: &ToyNet,
    batch: &[([f64; 2], usize)],
) -> (f64, Vec<f64>) {
    let n1 = HIDDEN * D_IN;
    let n2 = HIDDEN * HIDDEN;
    let n3 = D_OUT * HIDDEN;
    let off_b1 = n1;
    let off_w2 = n1 + HIDDEN;
    let off_b2 = off_w2 + n2;
    let off_w3 = off_b2 + HIDDEN;
    let off_b3 = off_w3 + n3;
    let mut grad = vec![0.0f64; off_b3 + D_OUT];
    let mut loss = 0.0f64;

    for &(x, label) in batch {
        // forward, keeping the hidden activations for the backward pass
        let mut h1 = [0.0f64; HIDDEN];
        for j in 0..HIDDEN {
            let z = eff.w1[j * D_IN] * x[0] + eff.w1[j * D_IN + 1] * x[1] + net.b1[j];
            h1[j] = z.max(0.0);
        }
        let mut h2 = [0.0f64; HIDDEN];
        for j in 0..HIDDEN {
            let mut z = net.b2[j];
            for k in 0..HIDDEN {
                z += eff.w2[j * HIDDEN + k] * h1[k];
            }
            h2[j] = z.max(0.0);
        }
        let mut logits = [0.0f64; D_OUT];
        for c in 0..D_OUT {
            let mut z = net.b3[c];
            for k in 0..HIDDEN {
                z += eff.w3[c * HIDDEN + k] * h2[k];
            }
            logits[c] = z;
        }

        // numerically stable cross-entropy via log-sum-exp
        let m = logits[0].max(logits[1]);
        let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
        loss += lse - logits[label];

        // backward
        let mut dlogits = [0.0f64; D_OUT];
        for c in 0..D_OUT {
            let p = (logits[c] - lse).exp();
            dlogits[c] = p - if c == label { 1.0 } else { 0.0 };
        }
        let mut dh2 = [0.0f64; HIDDEN];
        for c in 0..D_OUT {
            for k in 0..HIDDEN {
                grad[off_w3 + c * HIDDEN + k] += dlogits[c] * h2[k];
                dh2[k] += dlogits[c] * eff.w3[c * HIDDEN + k];
            }
            grad[off_b3 + c] += dlogits[c];
        }
        let mut dh1 = [0.0f64; HIDDEN];
        for j in 0..HIDDEN {
            if h2[j] <= 0.0 {
                continue; // ReLU passes gradient only where the output is positive
            }
            for k in 0..HIDDEN {
                grad[off_w2 + j * HIDDEN + k] += dh2[j] * h1[k];
                dh1[k] += dh2[j] * eff.w2[j * HIDDEN + k];
            }
            grad[off_b2 + j] += dh2[j];
        }
        for j in 0..HIDDEN {
            if h1[j] <= 0.0 {
                continue;
            }
            grad[j * D_IN] += dh1[j] * x[0];
            grad[j * D_IN + 1] += dh1[j] * x[1];
            grad[off_b1 + j] += dh1[j];
        }
    }

    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    for g in &mut grad {
        *g *= inv;
    }
    (loss, grad)
}

fn apply_update(net: &mut ToyNet, grad: &[f64], lr: f64) {
    let mut i = 0;
    for seg in net.segments_mut() {
        for v in seg.iter_mut() {
            *v -= lr * grad[i];
            i += 1;
        }
    }
}

/// Batch loss and its analytic gradient under the configured quantiser,
/// without updating the network. The gradient is laid out flat in the
/// order w1, b1, w2, b2, w3, b3 — the indexing of
/// [`ToyNet::get_param`].
pub fn loss_and_gradient(
    net: &ToyNet,
    batch: &[([f64; 2], usize)],
    quant: Option<&QuantConfig>,
    pf: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let eff = effective_weights(net, quant, pf)?;
    Ok(loss_and_grad(&eff, net, batch))
}

/// One STE step: quantised forward, full-precision backward applied to the
/// master weights. `step` only labels a divergence error.
pub fn ste_train_step(
    net: &mut ToyNet,
    batch: &[([f64; 2], usize)],
    cfg: &TrainConfig,
    step: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let eff = effective_weights(net, cfg.quant.as_ref(), cfg.pf)?;
    let (loss, grad) = loss_and_grad(&eff, net, batch);
    if !loss.is_finite() {
        return Err(Error::Diverged { step });
    }
    apply_update(net, &grad, cfg.learning_rate);
    Ok(loss)
}

/// One plain gradient-descent step, computed directly on the master
/// weights with no quantisation plumbing in the path. The STE step with
/// no quantiser must reproduce this exactly.
pub fn gd_train_step(
    net: &mut ToyNet,
    batch: &[([f64; 2], usize)],
    lr: f64,
    step: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let eff = EffectiveWeights {
        w1: net.w1.clone(),
        w2: net.w2.clone(),
        w3: net.w3.clone(),
        sparsity: Vec::new(),
    };
    let (loss, grad) = loss_and_grad(&eff, net, batch);
    if !loss.is_finite() {
        return Err(Error::Diverged { step });
    }
    apply_update(net, &grad, lr);
    Ok(loss)
}

/// Classification accuracy of the (optionally quantised) network over the
/// dataset.
pub fn evaluate(
    net: &ToyNet,
    data: &[([f64; 2], usize)],
    quant: Option<&QuantConfig>,
    pf: f64,
) -> Result<f64> {
    let eff = effective_weights(net, quant, pf)?;
    let correct = data
        .iter()
        .filter(|&&(x, label)| {
            let logits = forward_with(&eff, net, x);
            let predicted = if logits[1] > logits[0] { 1 } else { 0 };
            predicted == label
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub float_acc: f64,
    pub quant_acc: f64,
    /// Final zero-level fraction of each weight matrix under the
    /// configured quantiser (empty when training ran unquantised).
    pub sparsity_per_layer: Vec<f64>,
}

fn train(net: &mut ToyNet, data: &[([f64; 2], usize)], cfg: &TrainConfig) -> Result<()> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = XorShift64Star::new(cfg.seed);
    let mut step = 0usize;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            ste_train_step(net, &batch, cfg, step)?;
            step += 1;
        }
    }
    Ok(())
}

/// Train a full-precision baseline and (when configured) an STE-quantised
/// twin from the same initialisation, and report both accuracies on the
/// training spirals.
pub fn train_and_evaluate(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = gen_dataset(cfg.seed, 256)?;

    let float_cfg = TrainConfig { quant: None, pf: 0.0, ..cfg.clone() };
    let mut float_net = ToyNet::init(cfg.seed);
    train(&mut float_net, &data, &float_cfg)?;
    let float_acc = evaluate(&float_net, &data, None, 0.0)?;

    match &cfg.quant {
        None => Ok(TrainOutcome { float_acc, quant_acc: float_acc, sparsity_per_layer: Vec::new() }),
        Some(qcfg) => {
            let mut qnet = ToyNet::init(cfg.seed);
            train(&mut qnet, &data, cfg)?;
            let quant_acc = evaluate(&qnet, &data, Some(qcfg), cfg.pf)?;
            let sparsity_per_layer =
                effective_weights(&qnet, Some(qcfg), cfg.pf)?.sparsity;
            Ok(TrainOutcome { float_acc, quant_acc, sparsity_per_layer })
        }
    }
}
