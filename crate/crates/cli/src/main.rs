//! Command-line front end: decompose, check, simulate, oracle, compare,
//! and gen, wired over the sepsim library.
//!
//! Exit codes: 0 success/accepted, 1 rejected or negative verdict,
//! 2 usage or input error, 3 internal invariant breach.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use sepsim::circuit::DEFAULT_CAP;
use sepsim::classifier::{classify_circuit, generate_product_control_circuit, Rejection};
use sepsim::gate::{decompose_4x4, ControlSlot, GateKind};
use sepsim::mat::Mat4;
use sepsim::oracle;
use sepsim::sampler::{self, MeasBasis};
use sepsim::{Circuit, Error};

#[derive(Parser)]
#[command(
    name = "sepsim",
    version,
    about = "Entanglement-free one-clean-qubit circuits: classify and simulate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a 4x4 unitary is basis-controlled; print the gate or "none".
    Decompose { file: PathBuf },
    /// Classify a circuit: role report on acceptance, rejection report otherwise.
    Check { file: PathBuf },
    /// Estimate the normalized trace of an accepted circuit.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value = "X")]
        basis: String,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit the per-sample audit CSV instead of the JSON estimate.
        #[arg(long)]
        csv: bool,
    },
    /// Dense ground truth: exact trace, product-eigenbasis verdict, defects.
    Oracle { file: PathBuf },
    /// Run simulate and oracle, report |estimate − exact| against eps.
    Compare {
        file: PathBuf,
        #[arg(long, default_value = "X")]
        basis: String,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate an admissible circuit and print it as JSON.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::PhaseIncoherent { .. }
        | Error::ControlNotInBasis
        | Error::NotClassified
        | Error::NotDiagonal => 3,
        _ => 2,
    }
}

fn cap_from_env() -> Result<usize, Error> {
    match std::env::var("SEPSIM_CAP") {
        Err(_) => Ok(DEFAULT_CAP),
        Ok(v) => {
            let cap: usize = v
                .parse()
                .map_err(|_| Error::Parameter(format!("SEPSIM_CAP={v} is not a number")))?;
            if cap > 12 {
                return Err(Error::Parameter(format!(
                    "SEPSIM_CAP={cap} exceeds the hard limit 12"
                )));
            }
            Ok(cap)
        }
    }
}

fn read_circuit(path: &PathBuf) -> Result<Circuit, Error> {
    let bytes = std::fs::read(path)?;
    Circuit::parse(&bytes)
}

fn rejection_json(r: &Rejection) -> serde_json::Value {
    json!({
        "rejected": true,
        "gate_index": r.gate_index,
        "rule": format!("{:?}", r.rule),
        "detail": r.detail,
    })
}

fn pairs(m: &sepsim::Mat2) -> Vec<[f64; 2]> {
    m.0.iter().flatten().map(|c| [c.re, c.im]).collect()
}

fn dispatch(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Decompose { file } => {
            let bytes = std::fs::read(&file)?;
            let doc: serde_json::Value =
                serde_json::from_slice(&bytes).map_err(|e| Error::Schema(e.to_string()))?;
            let entries = doc
                .get("m")
                .and_then(|m| m.as_array())
                .ok_or_else(|| Error::Schema("expected {\"m\": [[re,im] x 16]}".into()))?;
            if entries.len() != 16 {
                return Err(Error::Schema(format!(
                    "expected 16 complex entries, got {}",
                    entries.len()
                )));
            }
            let mut m = Mat4::identity();
            for (k, e) in entries.iter().enumerate() {
                let pair = e
                    .as_array()
                    .filter(|p| p.len() == 2)
                    .ok_or_else(|| Error::Schema("matrix entries must be [re, im]".into()))?;
                let re = pair[0]
                    .as_f64()
                    .ok_or_else(|| Error::Schema("non-numeric entry".into()))?;
                let im = pair[1]
                    .as_f64()
                    .ok_or_else(|| Error::Schema("non-numeric entry".into()))?;
                m.0[k / 4][k % 4] = num_complex::Complex64::new(re, im);
            }
            match decompose_4x4(&m)? {
                Some(g) => {
                    let kind = match g.kind() {
                        GateKind::Ordinary => "ordinary",
                        GateKind::Phase => "phase",
                        GateKind::Product => "product",
                    };
                    let slot = match g.control_slot {
                        ControlSlot::First => "first",
                        ControlSlot::Second => "second",
                    };
                    let out = json!({
                        "control_slot": slot,
                        "basis": [
                            g.control_basis.v0.0.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
                            g.control_basis.v1.0.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
                        ],
                        "b": pairs(&g.branch0),
                        "c": pairs(&g.branch1),
                        "kind": kind,
                    });
                    println!("{out}");
                    Ok(0)
                }
                None => {
                    println!("\"none\"");
                    Ok(1)
                }
            }
        }
        Command::Check { file } => {
            let c = read_circuit(&file)?;
            match classify_circuit(&c) {
                Ok(cls) => {
                    println!("{}", cls.report_json());
                    Ok(0)
                }
                Err(rej) => {
                    println!("{}", rejection_json(&rej));
                    Ok(1)
                }
            }
        }
        Command::Simulate {
            file,
            basis,
            eps,
            delta,
            seed,
            csv,
        } => {
            let c = read_circuit(&file)?;
            let basis: MeasBasis = basis.parse()?;
            match classify_circuit(&c) {
                Err(rej) => {
                    println!("{}", rejection_json(&rej));
                    Ok(1)
                }
                Ok(cls) => {
                    if csv {
                        let (_, rows) =
                            sampler::estimate_with_audit(&cls, basis, eps, delta, seed)?;
                        print!("{}", sampler::audit_csv(&rows));
                    } else {
                        let est =
                            sampler::estimate_normalized_trace(&cls, basis, eps, delta, seed)?;
                        println!("{}", serde_json::to_string(&est).expect("serializable"));
                    }
                    Ok(0)
                }
            }
        }
        Command::Oracle { file } => {
            let cap = cap_from_env()?;
            let c = read_circuit(&file)?;
            let report = oracle::oracle_report(&c, cap)?;
            print!("{}", oracle::report_csv(&report));
            Ok(if report.verdict == oracle::Verdict::No {
                1
            } else {
                0
            })
        }
        Command::Compare {
            file,
            basis,
            eps,
            delta,
            seed,
        } => {
            let cap = cap_from_env()?;
            let c = read_circuit(&file)?;
            let basis: MeasBasis = basis.parse()?;
            match classify_circuit(&c) {
                Err(rej) => {
                    println!("{}", rejection_json(&rej));
                    Ok(1)
                }
                Ok(cls) => {
                    let est = sampler::estimate_normalized_trace(&cls, basis, eps, delta, seed)?;
                    let exact = oracle::exact_normalized_trace(&c, cap)?;
                    let component = match basis {
                        MeasBasis::X => exact.re,
                        MeasBasis::Y => exact.im,
                    };
                    let diff = (est.value - component).abs();
                    let pass = diff <= eps;
                    let out = json!({
                        "basis": est.basis,
                        "estimate": est.value,
                        "exact": component,
                        "abs_diff": diff,
                        "epsilon": eps,
                        "samples": est.samples,
                        "seed": seed,
                        "pass": pass,
                    });
                    println!("{out}");
                    Ok(if pass { 0 } else { 1 })
                }
            }
        }
        Command::Gen { n, depth, seed } => {
            if n < 2 {
                return Err(Error::Parameter("gen requires --n at least 2".into()));
            }
            if depth < 1 {
                return Err(Error::Parameter("gen requires --depth at least 1".into()));
            }
            let c = generate_product_control_circuit(n, depth, seed);
            let bytes = c.serialize();
            println!("{}", String::from_utf8(bytes).expect("json is utf-8"));
            Ok(0)
        }
    }
}
