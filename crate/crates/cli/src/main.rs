//! `potq` — command-line front end for the power-of-two quantisation
//! toolkit.
//!
//! Every run is deterministic for fixed inputs, flags, and seeds, and
//! echoes its effective flag values in a `#` header comment line so output
//! artifacts describe the run that produced them. Exit codes: 0 success,
//! 1 usage error, 2 data/format error, 3 numeric guard (accumulator
//! overflow or training divergence).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use potq_core::codec::{pack_layer, unpack_layer, PackedLayer};
use potq_core::error::Error;
use potq_core::layer::{
    run_conv_layer, ComparisonReport, EnergyModel, FeatureMap, IntWeights, LayerReport,
    LayerWeights, Padding,
};
use potq_core::pe::ActivationMode;
use potq_core::prune::{prune_and_quantize, PruneConfig};
use potq_core::qat::{train_and_evaluate, TrainConfig, D_IN, D_OUT, HIDDEN};
use potq_core::quant::{
    dequantize, quant_error_report, quantize_layer, uniform_quantize_layer, QuantConfig, Rounding,
    Underflow,
};
use potq_core::tensor::Tensor;

#[derive(Parser)]
#[command(
    name = "potq",
    version,
    about = "Power-of-two weight quantisation and shift-datapath simulation",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundingArg {
    Nearest,
    Ceil,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnderflowArg {
    Flush,
    Clamp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mac,
    Bac,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Binary,
    Csv,
}

/// Quantiser flags shared by every subcommand that quantises.
#[derive(clap::Args)]
struct QuantFlags {
    /// Codeword width in bits
    #[arg(long, default_value_t = 4)]
    bits: u32,
    /// Full-scale range: upper bound on the quantised exponent
    #[arg(long, default_value_t = 0)]
    fsr: i32,
    /// Exponent rounding mode
    #[arg(long, value_enum, default_value_t = RoundingArg::Nearest)]
    rounding: RoundingArg,
    /// Policy for magnitudes below the deepest representable level
    #[arg(long, value_enum, default_value_t = UnderflowArg::Flush)]
    underflow: UnderflowArg,
}

impl QuantFlags {
    fn config(&self) -> QuantConfig {
        QuantConfig {
            bitwidth: self.bits,
            fsr: self.fsr,
            rounding: match self.rounding {
                RoundingArg::Nearest => Rounding::Nearest,
                RoundingArg::Ceil => Rounding::Ceil,
            },
            underflow: match self.underflow {
                UnderflowArg::Flush => Underflow::FlushToZero,
                UnderflowArg::Clamp => Underflow::Clamp,
            },
            ..QuantConfig::default()
        }
    }

    fn echo(&self, header: &mut String) {
        let _ = write!(
            header,
            " bits={} fsr={} rounding={} underflow={}",
            self.bits,
            self.fsr,
            match self.rounding {
                RoundingArg::Nearest => "nearest",
                RoundingArg::Ceil => "ceil",
            },
            match self.underflow {
                UnderflowArg::Flush => "flush",
                UnderflowArg::Clamp => "clamp",
            }
        );
    }
}

/// Energy-cost flags shared by the simulation subcommands.
#[derive(clap::Args)]
struct CostFlags {
    /// Energy cost of one multiply
    #[arg(long = "cost-mult", default_value_t = 1.0)]
    cost_mult: f64,
    /// Energy cost of one shift
    #[arg(long = "cost-shift", default_value_t = 0.706)]
    cost_shift: f64,
}

impl CostFlags {
    fn model(&self) -> EnergyModel {
        EnergyModel { cost_mult: self.cost_mult, cost_shift: self.cost_shift, ..EnergyModel::default() }
    }

    fn echo(&self, header: &mut String) {
        let _ = write!(header, " cost-mult={} cost-shift={}", self.cost_mult, self.cost_shift);
    }
}

#[derive(Subcommand)]
enum Command {
    /// Quantise a real tensor to sign/shift levels and write the packed layer
    Quantize {
        #[command(flatten)]
        quant: QuantFlags,
        /// Input tensor file (text or binary, auto-detected)
        #[arg(long = "in")]
        input: PathBuf,
        /// Output packed-layer file
        #[arg(long)]
        out: PathBuf,
    },
    /// Dead-zone prune a tensor, then quantise the survivors
    Prune {
        #[command(flatten)]
        quant: QuantFlags,
        /// Pruning factor: fraction of the maximum magnitude below which
        /// weights are zeroed
        #[arg(long)]
        pf: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pack an already-representable tensor without changing its values
    Encode {
        #[command(flatten)]
        quant: QuantFlags,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the real tensor from a packed layer
    Decode {
        /// Input packed-layer file
        #[arg(long = "in")]
        input: PathBuf,
        /// Output tensor format
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
        /// Output path; omit to print a text tensor to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one convolution layer through a datapath and report op counts
    Simulate {
        /// Datapath to exercise
        #[arg(long, value_enum, default_value_t = ModeArg::Bac)]
        mode: ModeArg,
        /// Packed-layer weights file
        #[arg(long)]
        weights: PathBuf,
        /// Input feature-map tensor (3-D, integral 8-bit values)
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        cost: CostFlags,
        /// Report format
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantise a real tensor both ways and race the two datapaths
    Compare {
        #[command(flatten)]
        quant: QuantFlags,
        /// Real weight tensor file
        #[arg(long)]
        weights: PathBuf,
        /// Input feature-map tensor (3-D, integral 8-bit values)
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        cost: CostFlags,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the spiral demo network with quantisation-aware steps
    #[command(name = "train-demo")]
    TrainDemo {
        #[command(flatten)]
        quant: QuantFlags,
        /// Training seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Pruning factor; omit to sweep 0, 0.05, 0.1, 0.2
        #[arg(long)]
        pf: Option<f64>,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe a tensor or packed layer; quantises tensors to report error
    Stats {
        #[command(flatten)]
        quant: QuantFlags,
        /// Input file: real tensor or packed layer, auto-detected
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failures after successful argument parsing, keyed to the exit codes.
enum CliError {
    /// Flag combinations clap cannot see (e.g. binary output without --out).
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here too; they are not errors
            if e.use_stderr() {
                let _ = e.print();
                return ExitCode::from(1);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric_guard() { 3 } else { 2 })
        }
    }
}

/// Read a tensor file, accepting either format: binary is recognised by
/// its magic, anything else is parsed as text.
fn load_tensor(path: &Path) -> Result<Tensor, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"POTT") {
        return Tensor::from_binary_bytes(&bytes);
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::Format(format!("{} is neither a binary nor a text tensor", path.display())))?;
    Tensor::from_text(text)
}

fn load_feature_map(path: &Path) -> Result<FeatureMap, Error> {
    FeatureMap::from_tensor(&load_tensor(path)?, ActivationMode::Signed)
}

/// Echo the effective-flags header on stdout, and write the result body to
/// --out or stdout. Textual files carry the header as their first line;
/// binary payloads cannot, so there the header on stdout is the only echo.
fn emit_text(header: &str, body: &str, out: Option<&Path>) -> Result<(), CliError> {
    println!("{header}");
    match out {
        None => print!("{body}"),
        Some(path) => {
            let contents = format!("{header}\n{body}");
            std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

fn emit_binary(header: &str, bytes: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    let Some(path) = out else {
        return Err(CliError::Usage("binary output requires --out".into()));
    };
    println!("{header}");
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Quantize { quant, input, out } => {
            let mut header = String::from("# potq quantize");
            quant.echo(&mut header);
            let w = load_tensor(&input)?;
            let packed = pack_layer(&quantize_layer(&w, &quant.config())?)?;
            emit_binary(&header, &packed.to_bytes(), Some(&out))
        }
        Command::Prune { quant, pf, input, out } => {
            let mut header = String::from("# potq prune");
            quant.echo(&mut header);
            let _ = write!(header, " pf={pf}");
            let w = load_tensor(&input)?;
            let cfg = PruneConfig { pf, quant: quant.config() };
            let packed = pack_layer(&prune_and_quantize(&w, &cfg)?)?;
            emit_binary(&header, &packed.to_bytes(), Some(&out))
        }
        Command::Encode { quant, input, out } => {
            let mut header = String::from("# potq encode");
            quant.echo(&mut header);
            let w = load_tensor(&input)?;
            let q = quantize_layer(&w, &quant.config())?;
            let recon = dequantize(&q)?;
            if recon.data().iter().zip(w.data()).any(|(&r, &v)| r != v) {
                return Err(Error::Domain(
                    "tensor is not exactly representable at these settings; use quantize to round it"
                        .into(),
                )
                .into());
            }
            emit_binary(&header, &pack_layer(&q)?.to_bytes(), Some(&out))
        }
        Command::Decode { input, format, out } => {
            let header = format!("# potq decode format={}", format_name(format));
            let packed = PackedLayer::load(&input)?;
            let recon = dequantize(&unpack_layer(&packed)?)?;
            match format {
                FormatArg::Text => emit_text(&header, &recon.to_text(), out.as_deref()),
                FormatArg::Binary => emit_binary(&header, &recon.to_binary_bytes(), out.as_deref()),
                FormatArg::Csv => Err(CliError::Usage("decode emits tensors: --format text|binary".into())),
            }
        }
        Command::Simulate { mode, weights, input, cost, format, out } => {
            let mut header = String::from("# potq simulate");
            let _ = write!(header, " mode={}", match mode { ModeArg::Mac => "mac", ModeArg::Bac => "bac" });
            cost.echo(&mut header);
            let packed = PackedLayer::load(&weights)?;
            let fmap = load_feature_map(&input)?;
            let model = cost.model();
            let ints;
            let layer_weights = match mode {
                ModeArg::Bac => LayerWeights::Bac(&packed),
                ModeArg::Mac => {
                    ints = IntWeights::shift_equivalents(&packed)?;
                    LayerWeights::Mac(&ints)
                }
            };
            let (_, report) = run_conv_layer(&fmap, layer_weights, Padding::Valid, &model)?;
            let body = report_body(&[report], format, None)?;
            emit_text(&header, &body, out.as_deref())
        }
        Command::Compare { quant, weights, input, cost, format, out } => {
            let mut header = String::from("# potq compare");
            quant.echo(&mut header);
            cost.echo(&mut header);
            let w = load_tensor(&weights)?;
            let fmap = load_feature_map(&input)?;
            let pot = pack_layer(&quantize_layer(&w, &quant.config())?)?;
            let uniform = uniform_quantize_layer(&w, quant.bits)?;
            let cmp = potq_core::layer::compare_modes(&fmap, &pot, &uniform, Padding::Valid, &cost.model())?;
            let body = report_body(&[cmp.bac, cmp.mac], format, Some(&cmp))?;
            emit_text(&header, &body, out.as_deref())
        }
        Command::TrainDemo { quant, seed, pf, format, out } => {
            let mut header = String::from("# potq train-demo");
            quant.echo(&mut header);
            let _ = write!(header, " seed={seed}");
            match pf {
                Some(pf) => { let _ = write!(header, " pf={pf}"); }
                None => { let _ = write!(header, " pf=sweep"); }
            }
            let points: Vec<f64> = match pf {
                Some(pf) => vec![pf],
                None => vec![0.0, 0.05, 0.1, 0.2],
            };
            let mut rows = Vec::new();
            for pf in points {
                let cfg = TrainConfig {
                    seed,
                    pf,
                    quant: Some(quant.config()),
                    ..TrainConfig::default()
                };
                let outcome = train_and_evaluate(&cfg).map_err(CliError::Core)?;
                // overall zero fraction, weighting each matrix by its size
                let sizes = [HIDDEN * D_IN, HIDDEN * HIDDEN, D_OUT * HIDDEN];
                let total: usize = sizes.iter().sum();
                let zeros: f64 = outcome
                    .sparsity_per_layer
                    .iter()
                    .zip(sizes)
                    .map(|(s, n)| s * n as f64)
                    .sum();
                rows.push((pf, outcome.float_acc, outcome.quant_acc, zeros / total as f64));
            }
            let body = match format {
                FormatArg::Csv => {
                    let mut s = String::from("pf,float_acc,quant_acc,sparsity\n");
                    for (pf, f, q, z) in &rows {
                        let _ = writeln!(s, "{pf},{f},{q},{z}");
                    }
                    s
                }
                FormatArg::Text => {
                    let mut s = format!(
                        "{:>6}  {:>10}  {:>10}  {:>10}\n",
                        "pf", "float", "quantised", "sparsity"
                    );
                    for (pf, f, q, z) in &rows {
                        let _ = writeln!(s, "{pf:>6}  {f:>10.4}  {q:>10.4}  {z:>10.4}");
                    }
                    s
                }
                FormatArg::Binary => {
                    return Err(CliError::Usage("train-demo reports: --format csv|text".into()))
                }
            };
            emit_text(&header, &body, out.as_deref())
        }
        Command::Stats { quant, input, format, out } => {
            let bytes = std::fs::read(&input).map_err(|e| Error::io(&input, e))?;
            if bytes.starts_with(b"POTQ") {
                let header = String::from("# potq stats");
                let packed = PackedLayer::from_bytes(&bytes)?;
                let levels = packed.decode_levels()?;
                let zeros = levels.iter().filter(|l| l.is_zero()).count();
                let zero_fraction = zeros as f64 / levels.len() as f64;
                let body = match format {
                    FormatArg::Csv => format!(
                        "bitwidth,elements,scale,offset,offset_mode,zero_fraction\n{},{},{},{},{},{}\n",
                        packed.bitwidth,
                        levels.len(),
                        packed.scale,
                        packed.offset,
                        packed.offset_mode,
                        zero_fraction
                    ),
                    FormatArg::Text => format!(
                        "bitwidth        {}\nelements        {}\nscale           {}\noffset          {}\noffset mode     {}\nzero fraction   {}\n",
                        packed.bitwidth,
                        levels.len(),
                        packed.scale,
                        packed.offset,
                        packed.offset_mode,
                        zero_fraction
                    ),
                    FormatArg::Binary => {
                        return Err(CliError::Usage("stats reports: --format csv|text".into()))
                    }
                };
                return emit_text(&header, &body, out.as_deref());
            }
            let mut header = String::from("# potq stats");
            quant.echo(&mut header);
            let w = load_tensor(&input)?;
            let q = quantize_layer(&w, &quant.config())?;
            let report = quant_error_report(&w, &q)?;
            let body = match format {
                FormatArg::Csv => format!(
                    "elements,scale,max_rel_err_nonzero,mse,zero_fraction\n{},{},{},{},{}\n",
                    w.len(),
                    q.scale,
                    report.max_rel_err_nonzero,
                    report.mse,
                    report.zero_fraction
                ),
                FormatArg::Text => format!(
                    "elements              {}\nscale                 {}\nmax rel err (nonzero) {}\nmse                   {}\nzero fraction         {}\n",
                    w.len(),
                    q.scale,
                    report.max_rel_err_nonzero,
                    report.mse,
                    report.zero_fraction
                ),
                FormatArg::Binary => {
                    return Err(CliError::Usage("stats reports: --format csv|text".into()))
                }
            };
            emit_text(&header, &body, out.as_deref())
        }
    }
}

fn format_name(f: FormatArg) -> &'static str {
    match f {
        FormatArg::Text => "text",
        FormatArg::Binary => "binary",
        FormatArg::Csv => "csv",
    }
}

/// Render layer reports in the frozen CSV column order or as tables.
fn report_body(
    reports: &[LayerReport],
    format: FormatArg,
    comparison: Option<&ComparisonReport>,
) -> Result<String, CliError> {
    match format {
        FormatArg::Csv => {
            let mut s = String::from(LayerReport::CSV_HEADER);
            s.push('\n');
            for r in reports {
                s.push_str(&r.csv_row());
                s.push('\n');
            }
            if let Some(c) = comparison {
                let ratio = match c.proxy_ratio {
                    Some(r) => r.to_string(),
                    None => "none".into(),
                };
                let _ = writeln!(
                    s,
                    "# proxy_ratio={ratio} output_msd={} skip_only={}",
                    c.output_msd, c.skip_only
                );
            }
            Ok(s)
        }
        FormatArg::Text => {
            let mut s = String::new();
            for r in reports {
                s.push_str(&r.table());
                s.push('\n');
            }
            if let Some(c) = comparison {
                let ratio = match c.proxy_ratio {
                    Some(r) => r.to_string(),
                    None => "none".into(),
                };
                let _ = writeln!(s, "proxy ratio     {ratio}");
                let _ = writeln!(s, "output msd      {}", c.output_msd);
            }
            Ok(s)
        }
        FormatArg::Binary => Err(CliError::Usage("reports: --format csv|text".into())),
    }
}
