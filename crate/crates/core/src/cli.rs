//! The `qac` command-line front end.
//!
//! Exit codes: 0 success, 1 validation or runtime error, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::circuit::Circuit;
use crate::classical::{hamming_stats_from_weights, influences_structural, MostlyClassicalSampler, SamplerKind};
use crate::error::{QacError, Result};
use crate::nekomata::{
    build_depthd_nekomata, classify, column_impurity_exact, grid_impurity_exact, impurity_bound,
};
use crate::statevec::{best_nekomata_fidelity, max_unitary_deviation, run, StateVector};
use crate::transforms;
use crate::verify::{run_suite, Suite};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "qac", version, about = "Build, rewrite, simulate and sample low-depth QAC circuits")]
pub struct Cli {
    /// Where to write the run manifest (default: next to the first output file).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a circuit.
    #[command(subcommand)]
    Build(Build),
    /// Rewrite a circuit.
    #[command(subcommand)]
    Transform(Transform),
    /// Exact state-vector simulation.
    Simulate(SimulateArgs),
    /// Sample target measurements of a mostly-classical circuit.
    Sample(SampleArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// Print size, depth, topology and classification.
    Info(InfoArgs),
}

#[derive(Subcommand, Debug)]
pub enum Build {
    /// Approximate nekomata constructor of depth d.
    Nekomata {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long)]
        epsilon: f64,
        /// Override the number of ancilla columns.
        #[arg(long = "M")]
        big_m: Option<u64>,
        /// Override delta (default: solved from M).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Parameter report (default: <out>.params.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Restricted fanout tree on n wires with gates of arity at most m.
    FanoutTree {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean parity circuit from a nekomata constructor.
    ParityFromNekomata {
        #[arg(long)]
        nekomata: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cat-state preparation from a restricted fanout circuit.
    Cat {
        #[arg(long)]
        circuit: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum Transform {
    /// One-qubit layer followed by multi-qubit R-tensor gates, same topology.
    NormalForm(TransformIo),
    /// Replace OR gates by X-conjugated Toffoli gates.
    ExpandOr(TransformIo),
    /// Conjugate the first n wires by Hadamards.
    HadamardConjugate {
        #[command(flatten)]
        io: TransformIo,
        #[arg(long)]
        n: usize,
    },
}

#[derive(Args, Debug)]
pub struct TransformIo {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    /// Report the max amplitude difference against this circuit over all basis inputs.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Input state JSON (default |0...0>).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output state JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Simulation report JSON (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum SamplerArg {
    Direct,
    /// factorized sampler with the tau tree
    #[value(name = "appendix-b")]
    Factorized,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SamplerArg::Direct)]
    pub sampler: SamplerArg,
    /// CSV log: trial, target bitstring, hamming weight.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON (default: <out>.summary.json).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    #[arg(long)]
    pub circuit: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written for every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
    pub exit_code: i32,
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| QacError::Io(e.error))?;
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_circuit(p: &Path) -> Result<Circuit> {
    let c = Circuit::from_json(&fs::read_to_string(p)?)?;
    c.ensure_valid()?;
    Ok(c)
}

fn to_json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Files touched by a run, for the manifest.
#[derive(Default)]
struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

impl Io {
    fn read_circuit(&mut self, p: &Path) -> Result<Circuit> {
        self.inputs.push(p.to_path_buf());
        read_circuit(p)
    }

    fn write(&mut self, p: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(p, bytes)?;
        self.outputs.push(p.to_path_buf());
        Ok(())
    }

    fn write_circuit(&mut self, p: &Path, c: &Circuit) -> Result<()> {
        let mut s = c.to_json();
        s.push('\n');
        self.write(p, s.as_bytes())
    }
}

fn run_build(b: Build, io: &mut Io) -> Result<i32> {
    match b {
        Build::Nekomata {
            n,
            depth,
            epsilon,
            big_m,
            delta,
            out,
            report,
        } => {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return Err(QacError::InvalidParameter("epsilon must lie in (0, 1)".into()));
            }
            let (c, rep) = build_depthd_nekomata(n, depth, epsilon, big_m, delta)?;
            let core = rep.core;
            let params = json!({
                "n": n,
                "depth": depth,
                "epsilon": epsilon,
                "core_targets": rep.core_targets,
                "M": core.m,
                "delta": core.delta,
                "residual": core.residual(),
                "impurity_bound": impurity_bound(core.n, core.m, core.delta),
                "column_impurity_exact": column_impurity_exact(core.n, core.delta),
                "grid_impurity_exact": grid_impurity_exact(core.n, core.m, core.delta),
                "blocks": rep.blocks,
                "num_qubits": c.num_qubits,
                "size": c.size(),
                "circuit_depth": c.depth(),
            });
            io.write_circuit(&out, &c)?;
            let rp = report.unwrap_or_else(|| with_suffix(&out, ".params.json"));
            io.write(&rp, &to_json_bytes(&params)?)?;
        }
        Build::FanoutTree { n, m, out } => {
            let c = transforms::fanout_tree(n, m)?;
            io.write_circuit(&out, &c)?;
        }
        Build::ParityFromNekomata { nekomata, n, out } => {
            let nek = io.read_circuit(&nekomata)?;
            let c = transforms::parity_from_nekomata(&nek, n)?;
            io.write_circuit(&out, &c)?;
        }
        Build::Cat { circuit, n, out } => {
            let c = io.read_circuit(&circuit)?;
            let c = transforms::cat_from_restricted_fanout(&c, n)?;
            io.write_circuit(&out, &c)?;
        }
    }
    Ok(0)
}

fn run_transform(t: Transform, io: &mut Io) -> Result<i32> {
    let (tio, f): (TransformIo, Box<dyn Fn(&Circuit) -> Result<Circuit>>) = match t {
        Transform::NormalForm(x) => (x, Box::new(transforms::to_rtensor_normal_form)),
        Transform::ExpandOr(x) => (x, Box::new(|c: &Circuit| Ok(transforms::expand_or(c)))),
        Transform::HadamardConjugate { io, n } => (io, Box::new(move |c: &Circuit| transforms::conjugate_by_hadamards(c, n))),
    };
    let c = io.read_circuit(&tio.circuit)?;
    let out = f(&c)?;
    io.write_circuit(&tio.out, &out)?;
    Ok(0)
}

fn run_simulate(a: SimulateArgs, io: &mut Io) -> Result<i32> {
    let c = io.read_circuit(&a.circuit)?;
    let input = match &a.input {
        Some(p) => {
            io.inputs.push(p.clone());
            StateVector::from_json(&fs::read_to_string(p)?)?
        }
        None => StateVector::zero(c.num_qubits)?,
    };
    let out = run(&c, &input)?;
    let targets = c.target_indices();
    let mut report = json!({
        "num_qubits": c.num_qubits,
        "targets": targets,
        "norm": out.norm(),
    });
    if targets.len() <= 20 {
        let d = out.measurement_distribution(&targets)?;
        let table: serde_json::Map<String, Value> = d
            .probs
            .iter()
            .filter(|(_, &p)| p > 1e-15)
            .map(|(&k, &p)| (d.bitstring(k), json!(p)))
            .collect();
        report["target_distribution"] = Value::Object(table);
        report["nekomata"] = serde_json::to_value(best_nekomata_fidelity(&out, &targets)?)?;
    }
    if let Some(other) = &a.compare {
        let o = io.read_circuit(other)?;
        report["max_basis_input_difference"] = json!(max_unitary_deviation(&c, &o)?);
    }
    if let Some(p) = &a.out {
        let mut s = out.to_json();
        s.push('\n');
        io.write(p, s.as_bytes())?;
    }
    let bytes = to_json_bytes(&report)?;
    match &a.report {
        Some(p) => io.write(p, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(0)
}

fn run_sample(a: SampleArgs, io: &mut Io) -> Result<i32> {
    io.seed = Some(a.seed);
    let c = io.read_circuit(&a.circuit)?;
    let kind = match a.sampler {
        SamplerArg::Direct => SamplerKind::Direct,
        SamplerArg::Factorized => SamplerKind::Factorized,
    };
    let sampler = MostlyClassicalSampler::new(&c, kind)?;
    let draws = sampler.sample_trials(a.trials, a.seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "bitstring", "hamming_weight"])?;
    let mut weights = Vec::with_capacity(draws.len());
    for (i, y) in draws.iter().enumerate() {
        let s: String = y.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        let wt = y.iter().filter(|&&b| b == 1).count();
        weights.push(wt);
        w.write_record([i.to_string(), s, wt.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| QacError::Io(e.into_error()))?;
    io.write(&a.out, &bytes)?;
    let w = classify(&c).witness.expect("sampler accepted the circuit");
    let inf = influences_structural(&w.c)?;
    let r_structural = w
        .l
        .gates
        .iter()
        .flat_map(|g| g.support_indices())
        .map(|q| inf.sets[q].iter().filter(|o| sampler.targets.contains(o)).count())
        .max()
        .unwrap_or(0);
    let stats = hamming_stats_from_weights(&weights, sampler.targets.len(), c.depth(), r_structural);
    let summary = json!({
        "sampler": format!("{:?}", kind),
        "seed": a.seed,
        "stats": stats,
    });
    let sp = a.summary.unwrap_or_else(|| with_suffix(&a.out, ".summary.json"));
    io.write(&sp, &to_json_bytes(&summary)?)?;
    Ok(0)
}

fn run_verify(a: VerifyArgs, io: &mut Io) -> Result<i32> {
    io.seed = Some(a.seed);
    let suite: Suite = a.suite.parse()?;
    let report = run_suite(suite, a.seed)?;
    for c in &report.checks {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    if let Some(p) = &a.report {
        io.write(p, &to_json_bytes(&report)?)?;
    }
    Ok(if report.passed { 0 } else { 1 })
}

fn run_info(a: InfoArgs, io: &mut Io) -> Result<i32> {
    let c = io.read_circuit(&a.circuit)?;
    let cls = classify(&c);
    println!("num_qubits={} size={} depth={}", c.num_qubits, c.size(), c.depth());
    println!(
        "purely_classical={} mostly_classical={} nice={}",
        cls.purely_classical, cls.mostly_classical, cls.nice
    );
    if let Some(t) = &c.targets {
        let t: Vec<String> = t.iter().map(|q| q.0.to_string()).collect();
        println!("targets={}", t.join(","));
    }
    println!("topology:");
    for e in c.topology() {
        let s: Vec<String> = e.support.iter().map(usize::to_string).collect();
        println!("  layer {}: {{{}}}", e.layer_index, s.join(","));
    }
    Ok(0)
}

fn dispatch(cmd: Command, io: &mut Io) -> Result<i32> {
    match cmd {
        Command::Build(b) => run_build(b, io),
        Command::Transform(t) => run_transform(t, io),
        Command::Simulate(a) => run_simulate(a, io),
        Command::Sample(a) => run_sample(a, io),
        Command::Verify(a) => run_verify(a, io),
        Command::Info(a) => run_info(a, io),
    }
}

/// Caps the rayon pool from QAC_THREADS if set. Only the first call has an effect.
pub fn init_threads() {
    if let Some(n) = std::env::var("QAC_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parse and run; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let start = Instant::now();
    let manifest_path = cli.manifest.clone();
    let mut io = Io::default();
    let code = match dispatch(cli.command, &mut io) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    let manifest = RunManifest {
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: io.seed,
        version: VERSION.to_string(),
        inputs: io.inputs.iter().filter_map(|p| digest(p).ok()).collect(),
        outputs: io.outputs.iter().filter_map(|p| digest(p).ok()).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        exit_code: code,
    };
    let target = manifest_path.or_else(|| io.outputs.first().map(|p| with_suffix(p, ".manifest.json")));
    let written = match (&target, to_json_bytes(&manifest)) {
        (Some(p), Ok(b)) => write_atomic(p, &b).is_ok(),
        _ => false,
    };
    if !written {
        if let Ok(s) = serde_json::to_string(&manifest) {
            eprintln!("manifest: {s}");
        }
    }
    code
}
