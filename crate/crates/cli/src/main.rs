//! `fat`: addition benchmarks, mapping comparison, sparsity sweeps and
//! functional runs on the simulated accelerator.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use fat_core::cost_model::Calibration;
use fat_core::engine::{reference_network, run_network, LayerReport};
use fat_core::ledger::CostLedger;
use fat_core::mapping::{fixed_layout, layout_with_intervals, ConvShape, HwConfig, Scheme};
use fat_core::memory_array::{Cma, ColumnMask, OperandSlot};
use fat_core::model::TwnModel;
use fat_core::report::{self, AddKind, Header};
use fat_core::sparse_control::{trace_to_json_lines, AccPolicy, AccumulatorPool, Sacu};
use fat_core::tensor::{Tensor, TensorData};

#[derive(Parser, Debug)]
#[command(name = "fat", version, about = "STT-MRAM in-memory TWN accelerator simulator")]
struct Cli {
    /// Calibration JSON; built-in defaults when absent.
    #[arg(long, global = true, env = "FAT_CALIBRATION")]
    calibration: Option<PathBuf>,
    /// Hardware configuration JSON; built-in defaults when absent.
    #[arg(long, global = true)]
    hw: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Scalar,
    Vector,
    Both,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Scalar and vector addition latency for every addition scheme.
    AddBench {
        #[arg(long, default_value_t = 8)]
        bitwidth: u32,
        #[arg(long, value_enum, default_value_t = Kind::Both)]
        kind: Kind,
        /// Vector length.
        #[arg(long, default_value_t = 256)]
        length: usize,
        /// Columns available to the vector.
        #[arg(long, default_value_t = 256)]
        cols: usize,
    },
    /// Compare the five mapping schemes on one conv layer.
    MapCompare {
        /// Layer shape JSON (`n, c, h, w, kn, kh, kw, s, p`).
        #[arg(long)]
        layer: PathBuf,
        /// Override the number of arrays.
        #[arg(long)]
        cmas: Option<usize>,
    },
    /// Speedup and energy efficiency over ParaPIM across weight sparsity.
    SweepSparsity {
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 0.9)]
        to: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Dot-product length of the simulated layer.
        #[arg(long, default_value_t = 50)]
        j: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a model on the simulated arrays and verify it against the reference.
    Run {
        #[arg(long)]
        model: PathBuf,
        /// Input tensor blob, u8, dims `[n, c, h, w]` or `[c, h, w]`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "img2col-cs")]
        scheme: String,
        /// Output activations tensor blob.
        #[arg(long)]
        output: PathBuf,
    },
    /// Dump the SACU pass trace of one dot product as JSON lines.
    Trace {
        /// Comma-separated ternary weights.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Vec<i64>,
        /// Comma-separated activations; random when absent.
        #[arg(long, value_delimiter = ',')]
        activations: Option<Vec<i64>>,
        #[arg(long, default_value = "img2col-cs")]
        scheme: String,
        /// Consecutive dot products to run with the same weights.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Bad flag values detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// The simulated result disagrees with the reference.
#[derive(Debug)]
struct Mismatch(String);

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Mismatch {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use fat_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if cause.is::<Mismatch>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Invariant(_) | E::Overflow { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Env {
    cal: Calibration,
    hw: HwConfig,
    header: Header,
}

fn load_env(cli: &Cli) -> Result<Env> {
    let cal = match &cli.calibration {
        Some(p) => Calibration::load(p).with_context(|| format!("loading calibration {}", p.display()))?,
        None => Calibration::default(),
    };
    let hw: HwConfig = match &cli.hw {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(fat_core::Error::from).with_context(|| format!("parsing {}", p.display()))?
        }
        None => HwConfig::default(),
    };
    hw.validate()?;
    let header = vec![
        ("tool".to_string(), format!("fat {}", env!("CARGO_PKG_VERSION"))),
        ("calibration_sha256".to_string(), sha256_hex(cal.to_json()?.as_bytes())),
        ("hw_sha256".to_string(), sha256_hex(serde_json::to_string(&hw)?.as_bytes())),
    ];
    Ok(Env { cal, hw, header })
}

fn emit<T: Serialize>(cli: &Cli, header: &Header, rows: &[T]) -> Result<()> {
    let text = match cli.format {
        Format::Csv => report::to_csv(header, rows)?,
        Format::Json => report::to_json(header, rows)?,
    };
    write_out(cli.out.as_deref(), &text)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    Scheme::parse(s).map_err(|e| usage(e.to_string()))
}

fn cmd_add_bench(cli: &Cli, env: &Env, bitwidth: u32, kind: Kind, length: usize, cols: usize) -> Result<()> {
    if !(1..=64).contains(&bitwidth) || length == 0 || cols == 0 {
        return Err(usage("--bitwidth must be 1..=64, --length and --cols >= 1"));
    }
    let kinds: &[AddKind] = match kind {
        Kind::Scalar => &[AddKind::Scalar],
        Kind::Vector => &[AddKind::Vector],
        Kind::Both => &[AddKind::Scalar, AddKind::Vector],
    };
    let rows = report::add_bench(&env.cal, bitwidth, kinds, length, cols)?;
    emit(cli, &env.header, &rows)
}

fn cmd_map_compare(cli: &Cli, env: &Env, layer: &Path, cmas: Option<usize>) -> Result<()> {
    let text = std::fs::read(layer).with_context(|| format!("reading {}", layer.display()))?;
    let shape: ConvShape = serde_json::from_slice(&text)
        .map_err(fat_core::Error::from)
        .with_context(|| format!("parsing {}", layer.display()))?;
    let mut hw = env.hw;
    if let Some(n) = cmas {
        hw.num_cmas = n;
        hw.validate()?;
    }
    let mut header = env.header.clone();
    header.push(("layer_sha256".into(), sha256_hex(&text)));
    header.push(("cmas".into(), hw.num_cmas.to_string()));
    let rows = report::map_compare(&shape, &hw, &env.cal)?;
    emit(cli, &header, &rows)
}

fn cmd_sweep(cli: &Cli, env: &Env, from: f64, to: f64, step: f64, j: usize, seed: u64) -> Result<()> {
    let grid = report::sparsity_grid(from, to, step).map_err(|e| usage(e.to_string()))?;
    if j == 0 {
        return Err(usage("--j must be >= 1"));
    }
    let mut header = env.header.clone();
    header.push(("seed".into(), seed.to_string()));
    let rows = report::sweep_sparsity(&env.cal, &grid, j, seed)?;
    emit(cli, &header, &rows)
}

#[derive(Serialize)]
struct RunReport<'a> {
    header: serde_json::Map<String, serde_json::Value>,
    scheme: &'static str,
    verification: &'static str,
    output_dims: Vec<u32>,
    ledger: CostLedger,
    energy_j: f64,
    serial_time_ns: f64,
    layers: &'a [LayerReport],
}

fn cmd_run(cli: &Cli, env: &Env, model_path: &Path, input: &Path, scheme: &str, output: &Path) -> Result<()> {
    let scheme = parse_scheme(scheme)?;
    if scheme == Scheme::DirectOs {
        return Err(usage("direct-os is a cost-only scheme; pick an img2col mapping"));
    }
    let model = TwnModel::load(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let x = Tensor::read(input).with_context(|| format!("reading input {}", input.display()))?;
    let n = match x.dims.len() {
        4 => x.dims[0] as usize,
        3 => 1,
        r => return Err(fat_core::Error::Shape(format!("input rank {r}, expected 3 or 4")).into()),
    };
    let TensorData::U8(data) = &x.data else {
        return Err(fat_core::Error::Format("input tensor must be u8".into()).into());
    };
    let sim = run_network(&model, data, n, &env.hw, scheme)?;
    let (ref_out, ref_act) = reference_network(&model, data, n)?;
    let pass = sim.outputs == ref_out && sim.activations == ref_act;

    let last = model.stages(n)?.pop().expect("stages are non-empty");
    let dims = vec![n as u32, last.shape.kn as u32, last.shape.oh() as u32, last.shape.ow() as u32];
    Tensor::new(dims.clone(), TensorData::U8(sim.activations.clone()))?
        .write(output)
        .with_context(|| format!("writing {}", output.display()))?;

    let mut header = env.header.clone();
    header.push(("model_sha256".into(), sha256_hex(&std::fs::read(model_path)?)));
    header.push(("input_sha256".into(), sha256_hex(&std::fs::read(input)?)));
    let report = RunReport {
        header: header.into_iter().map(|(k, v)| (k, serde_json::Value::String(v))).collect(),
        scheme: scheme.name(),
        verification: if pass { "PASS" } else { "FAIL" },
        output_dims: dims,
        ledger: sim.ledger,
        energy_j: fat_core::cost_model::ledger_energy(&sim.ledger, &env.cal),
        serial_time_ns: fat_core::cost_model::ledger_serial_time(&sim.ledger, &env.cal),
        layers: &sim.layers,
    };
    write_out(cli.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    eprintln!("verification: {}", report.verification);
    if !pass {
        return Err(Mismatch("simulated outputs differ from the reference".into()).into());
    }
    Ok(())
}

fn cmd_trace(cli: &Cli, env: &Env, weights: &[i64], acts: Option<&[i64]>, scheme: &str, repeat: usize, seed: u64) -> Result<()> {
    let scheme = parse_scheme(scheme)?;
    if weights.is_empty() || weights.len() > env.hw.weight_regs {
        return Err(usage(format!("--weights needs 1..={} values", env.hw.weight_regs)));
    }
    if repeat == 0 {
        return Err(usage("--repeat must be >= 1"));
    }
    let g = env.hw.geometry;
    let max = (1i64 << g.operand_bits) - 1;
    let acts: Vec<i64> = match acts {
        Some(a) if a.len() != weights.len() => return Err(usage("--activations and --weights differ in length")),
        Some(a) => a.to_vec(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..weights.len()).map(|_| rng.gen_range(0..=max)).collect()
        }
    };
    let (layout, policy) = match scheme {
        Scheme::Img2ColCs => (layout_with_intervals(weights.len(), &env.hw)?, AccPolicy::Rotating),
        _ => (fixed_layout(weights.len(), &env.hw)?, AccPolicy::Fixed),
    };
    let mut cma = Cma::new(g)?;
    let mut sacu = Sacu::new(AccumulatorPool::new(layout.positions.clone(), policy)?);
    for (k, &a) in acts.iter().enumerate() {
        cma.write_operand(OperandSlot::unsigned(0, layout.operands[k].base_row, g.operand_bits), a)?;
    }
    sacu.load_weights(&mut cma, weights)?;
    let mask = ColumnMask::first(g.cols, 1);
    let mut text = String::new();
    for _ in 0..repeat {
        let out = sacu.dot_product(&mut cma, &layout.operands[..weights.len()], &mask)?;
        text.push_str(&trace_to_json_lines(&out.trace)?);
        let value = cma.read_operand(OperandSlot::signed(0, out.result.base_row, g.acc_bits))?;
        let want: i64 = weights.iter().zip(&acts).map(|(w, a)| w * a).sum();
        if value != want {
            return Err(Mismatch(format!("dot product {value}, expected {want}")).into());
        }
        text.push_str(&serde_json::to_string(&serde_json::json!({ "result": value, "stats": out.stats }))?);
        text.push('\n');
    }
    write_out(cli.out.as_deref(), &text)
}

fn run(cli: &Cli) -> Result<()> {
    let env = load_env(cli)?;
    match &cli.cmd {
        Cmd::AddBench { bitwidth, kind, length, cols } => cmd_add_bench(cli, &env, *bitwidth, *kind, *length, *cols),
        Cmd::MapCompare { layer, cmas } => cmd_map_compare(cli, &env, layer, *cmas),
        Cmd::SweepSparsity { from, to, step, j, seed } => cmd_sweep(cli, &env, *from, *to, *step, *j, *seed),
        Cmd::Run { model, input, scheme, output } => cmd_run(cli, &env, model, input, scheme, output),
        Cmd::Trace { weights, activations, scheme, repeat, seed } => {
            cmd_trace(cli, &env, weights, activations.as_deref(), scheme, *repeat, *seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
