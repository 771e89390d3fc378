use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tfv_cli::{
    cmd_build, cmd_capacity, cmd_cost, cmd_dump, cmd_inject, cmd_locate, cmd_request, cmd_serve,
    cmd_simulate, cmd_validate, BuildArgs, CostArgs, DepthArg, InjectArgs, InjectTarget,
    LocateSource, RefSource, ReportFormat, RequestArgs, ServeArgs, SimulateArgs, ValidateArgs,
    EXIT_ERROR,
};
use tfv_core::{Digest, EdgePath, HashAlgorithm};

/// Tree-formed verification data toolkit: build Merkle measurement logs in
/// an emulated register bank, validate them diagnostically, and explore the
/// validation cost model.
#[derive(Parser)]
#[command(name = "tfv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a tree-formed log from a component manifest.
    Build {
        /// Manifest file, one `<id> <sha1:|sha256:|file:><value>` per line.
        #[arg(long)]
        manifest: PathBuf,
        /// Output log file (.tfv).
        #[arg(long)]
        out: PathBuf,
        /// Tree depth, or `auto` for the smallest depth that fits.
        #[arg(long, default_value = "auto")]
        depth: DepthArg,
        /// Tree arity.
        #[arg(long, default_value_t = 2)]
        arity: u32,
        /// Hash algorithm: sha1 or sha256.
        #[arg(long, default_value = "sha1")]
        hash: HashAlgorithm,
        /// Chain entries beyond the tree capacity linearly instead of
        /// failing.
        #[arg(long)]
        linear_fallback: bool,
    },
    /// Validate a log against a reference manifest or reference log.
    Validate {
        /// Log file to validate.
        #[arg(long)]
        sml: PathBuf,
        /// Reference manifest with the expected measurements.
        #[arg(long, conflicts_with = "ref_sml")]
        ref_manifest: Option<PathBuf>,
        /// Reference log whose leaves are the expected measurements.
        #[arg(long)]
        ref_sml: Option<PathBuf>,
        /// Claimed root register value (hex); defaults to the value the log
        /// implies.
        #[arg(long)]
        root: Option<String>,
        /// Keep comparing inside untrustworthy subtrees (no trust claims).
        #[arg(long)]
        forensic: bool,
        /// Report format: text or json.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
    /// Overwrite one record of a log without fixing its ancestors.
    Inject {
        #[arg(long)]
        sml: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target leaf by sequence number.
        #[arg(long, conflicts_with = "node")]
        leaf: Option<u64>,
        /// Target node by edge path (e.g. `LRL`, or `root`).
        #[arg(long)]
        node: Option<String>,
        /// Replacement digest (hex); random when omitted.
        #[arg(long)]
        value: Option<String>,
        /// Seed for the random replacement.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Total leaf capacity of a bank of registers.
    Capacity { registers: u32 },
    /// Validation cost table (CSV) or break-even fraction.
    Cost {
        #[arg(long)]
        depth: u32,
        /// Comparison-to-hash cost ratio λ = c/h.
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        f_start: f64,
        #[arg(long, default_value_t = 1.0)]
        f_stop: f64,
        #[arg(long, default_value_t = 0.05)]
        f_step: f64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print only the break-even bad-leaf fraction.
        #[arg(long)]
        breakeven: bool,
    },
    /// Resolve a full-tree sequence number to its root-to-node edge path.
    Locate {
        /// Log file providing the tree shape.
        #[arg(long, conflicts_with = "depth")]
        sml: Option<PathBuf>,
        /// Tree depth (binary) when no log is given.
        #[arg(long)]
        depth: Option<u32>,
        /// 1-based sequence number.
        index: u64,
    },
    /// Monte Carlo estimate of the expected number of bad inner nodes.
    Simulate {
        #[arg(long)]
        depth: u32,
        /// Fraction of bad leaves.
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Annotated dump of a log file.
    Dump { sml: PathBuf },
    /// Serve one attestation session for a log.
    Serve {
        /// Address to listen on, e.g. 127.0.0.1:0.
        #[arg(long)]
        listen: String,
        #[arg(long)]
        sml: PathBuf,
        /// File holding the pre-shared secret bytes.
        #[arg(long)]
        secret_file: PathBuf,
    },
    /// Challenge a prover and validate the returned log.
    Request {
        /// Prover address, e.g. 127.0.0.1:4455.
        #[arg(long)]
        connect: String,
        #[arg(long)]
        ref_manifest: PathBuf,
        /// File holding the pre-shared secret bytes.
        #[arg(long)]
        secret_file: PathBuf,
        /// Expected tree depth; derived from the manifest when omitted.
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long, default_value_t = 2)]
        arity: u32,
        #[arg(long, default_value = "sha1")]
        hash: HashAlgorithm,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Build {
            manifest,
            out,
            depth,
            arity,
            hash,
            linear_fallback,
        } => cmd_build(&BuildArgs {
            manifest,
            out,
            depth,
            arity,
            hash,
            linear_fallback,
        }),
        Command::Validate {
            sml,
            ref_manifest,
            ref_sml,
            root,
            forensic,
            format,
        } => {
            let reference = match (ref_manifest, ref_sml) {
                (Some(path), None) => RefSource::Manifest(path),
                (None, Some(path)) => RefSource::Sml(path),
                _ => anyhow::bail!("exactly one of --ref-manifest and --ref-sml is required"),
            };
            let root = root.map(|hex| Digest::from_hex(&hex)).transpose()?;
            cmd_validate(&ValidateArgs {
                sml,
                reference,
                root,
                forensic,
                format,
            })
        }
        Command::Inject {
            sml,
            out,
            leaf,
            node,
            value,
            seed,
        } => {
            let target = match (leaf, node) {
                (Some(index), None) => InjectTarget::Leaf(index),
                (None, Some(path)) => InjectTarget::Node(EdgePath::parse(&path)?),
                _ => anyhow::bail!("exactly one of --leaf and --node is required"),
            };
            let value = value.map(|hex| Digest::from_hex(&hex)).transpose()?;
            cmd_inject(&InjectArgs {
                sml,
                out,
                target,
                value,
                seed,
            })
        }
        Command::Capacity { registers } => cmd_capacity(registers),
        Command::Cost {
            depth,
            lambda,
            f_start,
            f_stop,
            f_step,
            out,
            breakeven,
        } => cmd_cost(&CostArgs {
            depth,
            lambda,
            f_start,
            f_stop,
            f_step,
            out,
            breakeven,
        }),
        Command::Locate { sml, depth, index } => {
            let source = match (sml, depth) {
                (Some(path), None) => LocateSource::Sml(path),
                (None, Some(d)) => LocateSource::Depth(d),
                _ => anyhow::bail!("exactly one of --sml and --depth is required"),
            };
            cmd_locate(&source, index)
        }
        Command::Simulate {
            depth,
            fraction,
            trials,
            seed,
        } => cmd_simulate(&SimulateArgs {
            depth,
            fraction,
            trials,
            seed,
        }),
        Command::Dump { sml } => cmd_dump(&sml),
        Command::Serve {
            listen,
            sml,
            secret_file,
        } => cmd_serve(&ServeArgs {
            listen,
            sml,
            secret_file,
        }),
        Command::Request {
            connect,
            ref_manifest,
            secret_file,
            depth,
            arity,
            hash,
            format,
        } => cmd_request(&RequestArgs {
            connect,
            ref_manifest,
            secret_file,
            depth,
            arity,
            hash,
            format,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_ERROR,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
