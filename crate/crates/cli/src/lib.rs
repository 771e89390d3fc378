//! Command implementations behind the `tfv` binary.
//!
//! Exit codes are a stable contract: 0 success/clean validation, 1 usage or
//! I/O or parse errors, 2 tree capacity exceeded without `--linear-fallback`,
//! 3 failed components found, 4 tampering detected.

pub mod manifest;

use anyhow::{bail, Context, Result};
use manifest::Manifest;
use rand::TryRngCore as _;
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::Duration;
use tfv_core::cost::{
    breakeven_fraction, choices_for_fraction, cost_table, cost_table_csv, expected_bad_inner,
    expected_bad_inner_at_draws, fraction_grid, monte_carlo_bad_inner, CostParams,
};
use tfv_core::validate::{diagnostic_validate, ReferenceTree, ValidationMode, ValidationReport};
use tfv_core::{
    build_sml, extend, Digest, EdgePath, HashAlgorithm, Outcome, RecordKind, RegisterBank,
    SmlRecord, SmlTree,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_CAPACITY: u8 = 2;
pub const EXIT_FAILURES: u8 = 3;
pub const EXIT_TAMPERED: u8 = 4;

const NET_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthArg {
    /// Smallest depth whose capacity holds the manifest.
    Auto,
    Fixed(u32),
}

impl std::str::FromStr for DepthArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(DepthArg::Auto);
        }
        let depth: u32 = s.parse().map_err(|_| format!("invalid depth `{s}`"))?;
        if !(1..=62).contains(&depth) {
            return Err(format!("depth must be in 1..=62, got {depth}"));
        }
        Ok(DepthArg::Fixed(depth))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// Smallest depth (at least 1) whose capacity holds `count` leaves.
pub fn auto_depth(count: usize, arity: u32) -> Result<u32> {
    let base = arity as u64;
    let mut depth = 1u32;
    let mut cap = base;
    while cap < count as u64 {
        depth += 1;
        if depth > 62 {
            bail!("no tree of arity {arity} and depth <= 62 holds {count} entries");
        }
        cap = match cap.checked_mul(base) {
            Some(c) => c,
            None => break,
        };
    }
    Ok(depth)
}

fn load_sml(path: &Path) -> Result<SmlTree> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    SmlTree::deserialize(&bytes).with_context(|| format!("cannot parse {}", path.display()))
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// The verification register value a log implies: the root record, linearly
/// extended with any fallback measurements.
pub fn implied_register(sml: &SmlTree) -> Result<Digest> {
    let root = sml
        .root_record()
        .context("log is not finalized; it has no root record")?
        .digest;
    let mut value = root;
    for record in sml.fallback_records() {
        value = extend(&value, &record.digest, sml.hash_alg())?;
    }
    Ok(value)
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

pub struct BuildArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub depth: DepthArg,
    pub arity: u32,
    pub hash: HashAlgorithm,
    pub linear_fallback: bool,
}

pub fn cmd_build(args: &BuildArgs) -> Result<u8> {
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.is_empty() {
        bail!("manifest contains no entries");
    }
    let digests = manifest.resolve(args.hash, &manifest_base(&args.manifest))?;
    let depth = match args.depth {
        DepthArg::Auto => auto_depth(digests.len(), args.arity)?,
        DepthArg::Fixed(d) => d,
    };
    let capacity = (args.arity as u64)
        .checked_pow(depth)
        .context("tree capacity overflows")? as usize;
    if digests.len() > capacity && !args.linear_fallback {
        eprintln!(
            "error: {} entries exceed the {} leaves of a depth-{} arity-{} tree \
             (pass --linear-fallback to chain the rest linearly)",
            digests.len(),
            capacity,
            depth,
            args.arity
        );
        return Ok(EXIT_CAPACITY);
    }
    let tree_count = digests.len().min(capacity);
    let outcome = build_sml(&digests[..tree_count], depth, args.arity, args.hash)?;
    let mut sml = outcome.sml;
    let mut register = outcome.root;
    for extra in &digests[tree_count..] {
        register = extend(&register, extra, args.hash)?;
        sml.append(SmlRecord::linear_fallback(*extra))?;
    }
    std::fs::write(&args.out, sml.serialize())
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!("{}", register.to_hex());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub enum RefSource {
    Manifest(PathBuf),
    Sml(PathBuf),
}

pub struct ValidateArgs {
    pub sml: PathBuf,
    pub reference: RefSource,
    pub root: Option<Digest>,
    pub forensic: bool,
    pub format: ReportFormat,
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<u8> {
    let sml = load_sml(&args.sml)?;
    let (ref_leaves, names) = match &args.reference {
        RefSource::Manifest(path) => {
            let manifest = Manifest::load(path)?;
            let leaves = manifest.resolve(sml.hash_alg(), &manifest_base(path))?;
            (leaves, Some(manifest))
        }
        RefSource::Sml(path) => {
            let reference_sml = load_sml(path)?;
            let mut leaves = reference_sml.leaf_digests();
            leaves.extend(reference_sml.fallback_records().iter().map(|r| r.digest));
            (leaves, None)
        }
    };
    let mode = if args.forensic {
        ValidationMode::Forensic
    } else {
        ValidationMode::Standard
    };
    let report = validate_against_leaves(&sml, &ref_leaves, args.root, mode)?;
    print_report(&report, names.as_ref(), args.format);
    Ok(outcome_exit_code(report.outcome))
}

/// Validates a log (tree part plus any linear-fallback tail) against the
/// expected measurement list.
///
/// Without an explicit claimed register value, the value implied by the log
/// itself is used, which checks internal consistency and the reference
/// match. With one (e.g. from a quote), a mismatch against the log is a
/// manipulation exception at the root.
pub fn validate_against_leaves(
    sml: &SmlTree,
    ref_leaves: &[Digest],
    claimed: Option<Digest>,
    mode: ValidationMode,
) -> Result<ValidationReport> {
    let fallback = sml.fallback_records();
    let expected_total = sml.leaf_count() + fallback.len() as u64;
    if ref_leaves.len() as u64 != expected_total {
        bail!(
            "reference lists {} components but the log measures {expected_total}",
            ref_leaves.len()
        );
    }
    let (tree_ref, extra_ref) = ref_leaves.split_at(sml.leaf_count() as usize);
    let reference = ReferenceTree::build(tree_ref, sml.depth(), sml.arity(), sml.hash_alg())?;
    let implied = implied_register(sml)?;
    let claimed = claimed.unwrap_or(implied);

    if fallback.is_empty() {
        return Ok(diagnostic_validate(sml, &claimed, &reference, mode)?);
    }

    // With a fallback tail the register no longer holds the tree root: check
    // the chain first, then validate the tree with its own root record and
    // compare the tail measurements individually.
    if claimed != implied {
        let mut report = ValidationReport::new();
        report.manipulation_exceptions.insert(EdgePath::root());
        report.settle_outcome();
        return Ok(report);
    }
    let tree_root = sml
        .root_record()
        .context("log is not finalized; it has no root record")?
        .digest;
    let mut report = diagnostic_validate(sml, &tree_root, &reference, mode)?;
    for (i, (record, expected)) in fallback.iter().zip(extra_ref).enumerate() {
        report.comparison_count += 1;
        if record.digest != *expected {
            report.failed_leaves.insert(sml.leaf_count() + i as u64);
        }
    }
    report.settle_outcome();
    Ok(report)
}

pub fn outcome_exit_code(outcome: Outcome) -> u8 {
    match outcome {
        Outcome::Clean => EXIT_OK,
        Outcome::FailuresFound => EXIT_FAILURES,
        Outcome::Tampered | Outcome::TamperedAndFailures => EXIT_TAMPERED,
    }
}

pub fn print_report(report: &ValidationReport, manifest: Option<&Manifest>, format: ReportFormat) {
    let component = |index: u64| -> String {
        manifest
            .and_then(|m| m.component_id(index))
            .map(str::to_string)
            .unwrap_or_else(|| format!("leaf {index}"))
    };
    match format {
        ReportFormat::Json => {
            let mut json = report.to_json();
            let failed: Vec<serde_json::Value> = report
                .failed_leaves
                .iter()
                .map(|&i| serde_json::json!({ "index": i, "id": component(i) }))
                .collect();
            json["failed_components"] = serde_json::Value::Array(failed);
            println!("{json}");
        }
        ReportFormat::Text => {
            println!("outcome: {}", report.outcome);
            if report.failed_leaves.is_empty() {
                println!("failed components: none");
            } else {
                let list: Vec<String> = report
                    .failed_leaves
                    .iter()
                    .map(|&i| format!("{} ({})", i, component(i)))
                    .collect();
                println!("failed components: {}", list.join(", "));
            }
            if report.manipulation_exceptions.is_empty() {
                println!("manipulation exceptions: none");
            } else {
                let list: Vec<String> = report
                    .manipulation_exceptions
                    .iter()
                    .map(|p| p.to_string())
                    .collect();
                println!("manipulation exceptions: {}", list.join(", "));
            }
            if !report.forensic_mismatches.is_empty() {
                let list: Vec<String> = report
                    .forensic_mismatches
                    .iter()
                    .map(|&i| format!("{} ({})", i, component(i)))
                    .collect();
                println!("forensic mismatches (no trust claim): {}", list.join(", "));
            }
            println!("hash operations: {}", report.hash_op_count);
            println!("comparisons: {}", report.comparison_count);
        }
    }
}

// ---------------------------------------------------------------------------
// inject
// ---------------------------------------------------------------------------

pub enum InjectTarget {
    Leaf(u64),
    Node(EdgePath),
}

pub struct InjectArgs {
    pub sml: PathBuf,
    pub out: PathBuf,
    pub target: InjectTarget,
    pub value: Option<Digest>,
    pub seed: Option<u64>,
}

pub fn cmd_inject(args: &InjectArgs) -> Result<u8> {
    let mut sml = load_sml(&args.sml)?;
    let index = match &args.target {
        InjectTarget::Leaf(n) => {
            let leaf_count = sml.leaf_count();
            let fallback_count = sml.fallback_records().len() as u64;
            if *n < leaf_count {
                sml.records()
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.kind == RecordKind::Leaf)
                    .nth(*n as usize)
                    .map(|(i, _)| i)
                    .expect("leaf index below leaf count")
            } else if *n < leaf_count + fallback_count {
                let offset = (*n - leaf_count) as usize;
                sml.records().len() - sml.fallback_records().len() + offset
            } else {
                bail!(
                    "leaf index {n} out of range: the log measures {} components",
                    leaf_count + fallback_count
                );
            }
        }
        InjectTarget::Node(path) => {
            if path.len() > sml.depth() as usize {
                bail!("path {path} is deeper than the tree");
            }
            sml.record_index_at(path)?
                .with_context(|| format!("no record was written at {path}"))?
        }
    };
    let old = sml.records()[index].digest;
    let new_value = match args.value {
        Some(v) => v,
        None => {
            use rand::{RngCore, SeedableRng};
            let mut rng: rand::rngs::StdRng = match args.seed {
                Some(seed) => rand::rngs::StdRng::seed_from_u64(seed),
                None => rand::rngs::StdRng::from_os_rng(),
            };
            loop {
                let mut bytes = vec![0u8; sml.hash_alg().output_len()];
                rng.fill_bytes(&mut bytes);
                let candidate = Digest::from_bytes(&bytes)?;
                if candidate != old {
                    break candidate;
                }
            }
        }
    };
    sml.substitute_digest(index, new_value)?;
    std::fs::write(&args.out, sml.serialize())
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "record {}: {} -> {}",
        index + 1,
        old.to_hex(),
        new_value.to_hex()
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// capacity / cost / locate / simulate / dump
// ---------------------------------------------------------------------------

pub fn cmd_capacity(registers: u32) -> Result<u8> {
    if !(1..=62).contains(&registers) {
        bail!("register count must be in 1..=62, got {registers}");
    }
    println!("{}", tfv_core::capacity(registers));
    Ok(EXIT_OK)
}

pub struct CostArgs {
    pub depth: u32,
    pub lambda: f64,
    pub f_start: f64,
    pub f_stop: f64,
    pub f_step: f64,
    pub out: Option<PathBuf>,
    pub breakeven: bool,
}

pub fn cmd_cost(args: &CostArgs) -> Result<u8> {
    if args.breakeven {
        let f = breakeven_fraction(args.depth, args.lambda)?;
        println!("{f:.4}");
        return Ok(EXIT_OK);
    }
    let params = CostParams::from_lambda(args.lambda)?;
    let grid = fraction_grid(args.f_start, args.f_stop, args.f_step)?;
    let rows = cost_table(&[args.depth], &grid, &params)?;
    let csv = cost_table_csv(&rows);
    match &args.out {
        Some(path) => std::fs::write(path, csv)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

pub enum LocateSource {
    Sml(PathBuf),
    Depth(u32),
}

pub fn cmd_locate(source: &LocateSource, index: u64) -> Result<u8> {
    let path = match source {
        LocateSource::Sml(file) => load_sml(file)?.locate(index)?,
        LocateSource::Depth(depth) => tfv_core::locate(*depth, index)?,
    };
    println!("{path}");
    Ok(EXIT_OK)
}

pub struct SimulateArgs {
    pub depth: u32,
    pub fraction: f64,
    pub trials: u64,
    pub seed: u64,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let draws = choices_for_fraction(args.depth, args.fraction)?.round() as u64;
    let estimate = monte_carlo_bad_inner(args.depth, draws, args.trials, args.seed)?;
    println!("depth: {}", args.depth);
    println!("fraction: {}", args.fraction);
    println!("draws: {draws}");
    println!("trials: {}", args.trials);
    println!("seed: {}", args.seed);
    println!("monte_carlo_mean: {:.6}", estimate.mean);
    println!("monte_carlo_stderr: {:.6}", estimate.stderr);
    println!(
        "closed_form_at_draws: {:.6}",
        expected_bad_inner_at_draws(args.depth, draws as f64)?
    );
    println!(
        "closed_form_at_fraction: {:.6}",
        expected_bad_inner(args.depth, args.fraction)?
    );
    Ok(EXIT_OK)
}

pub fn cmd_dump(path: &Path) -> Result<u8> {
    let sml = load_sml(path)?;
    print!("{}", sml.hex_dump());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// attestation
// ---------------------------------------------------------------------------

pub struct ServeArgs {
    pub listen: String,
    pub sml: PathBuf,
    pub secret_file: PathBuf,
}

pub fn cmd_serve(args: &ServeArgs) -> Result<u8> {
    let secret = std::fs::read(&args.secret_file)
        .with_context(|| format!("cannot read {}", args.secret_file.display()))?;
    let sml = load_sml(&args.sml)?;
    let register_value = implied_register(&sml)?;
    let mut bank = RegisterBank::new(1, sml.hash_alg());
    bank.pcr_extend(0, &register_value)?;
    bank.lock(0)?;
    let listener =
        TcpListener::bind(&args.listen).with_context(|| format!("cannot bind {}", args.listen))?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush().ok();
    let (stream, peer) = listener.accept()?;
    stream.set_read_timeout(Some(NET_TIMEOUT))?;
    stream.set_write_timeout(Some(NET_TIMEOUT))?;
    tfv_attest::serve(stream, &bank, &sml, &secret)?;
    println!("served {peer}");
    Ok(EXIT_OK)
}

pub struct RequestArgs {
    pub connect: String,
    pub ref_manifest: PathBuf,
    pub secret_file: PathBuf,
    pub depth: Option<u32>,
    pub arity: u32,
    pub hash: HashAlgorithm,
    pub format: ReportFormat,
}

pub fn cmd_request(args: &RequestArgs) -> Result<u8> {
    let secret = std::fs::read(&args.secret_file)
        .with_context(|| format!("cannot read {}", args.secret_file.display()))?;
    let manifest = Manifest::load(&args.ref_manifest)?;
    if manifest.is_empty() {
        bail!("reference manifest contains no entries");
    }
    let leaves = manifest.resolve(args.hash, &manifest_base(&args.ref_manifest))?;
    let depth = match args.depth {
        Some(d) => d,
        None => auto_depth(leaves.len(), args.arity)?,
    };
    let reference = ReferenceTree::build(&leaves, depth, args.arity, args.hash)?;
    let stream = TcpStream::connect(&args.connect)
        .with_context(|| format!("cannot connect to {}", args.connect))?;
    stream.set_read_timeout(Some(NET_TIMEOUT))?;
    stream.set_write_timeout(Some(NET_TIMEOUT))?;
    let mut nonce = [0u8; 16];
    rand::rngs::OsRng
        .try_fill_bytes(&mut nonce)
        .context("cannot draw a nonce")?;
    let report = tfv_attest::request(stream, nonce, &secret, &reference)?;
    print_report(&report, Some(&manifest), args.format);
    Ok(outcome_exit_code(report.outcome))
}
