//! Diagnostic validation of a tree-formed log against a reference tree.
//!
//! The validator holds a full reference tree of expected digests. Starting
//! from the claimed root register value, a depth-first search descends only
//! into nodes that differ from the reference; subtrees with matching roots
//! are pruned. At each bad node both children are compared to the reference
//! and the parent is recomputed with one extend to confirm the stored values
//! are authentic — a mismatch raises a *manipulation exception* and prunes
//! the subtree as untrustworthy. Bad leaves reached with authentic ancestry
//! are the *failed components*.
//!
//! Counters follow the cost model used throughout: one hash operation per
//! recomputed bad inner node (the root included) and two child comparisons
//! per visited bad node; the up-front root checks are not counted.

use crate::digest::{extend, Digest, DigestError, HashAlgorithm};
use crate::sml::{full_node_count, path_to_index, EdgePath, SmlError, SmlTree};
use serde_json::json;
use std::collections::BTreeSet;
use thiserror::Error;

/// Errors preventing validation from running at all.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidateError {
    #[error("shape mismatch between log and reference: {0}")]
    ShapeMismatch(String),
    #[error("too many leaves: {count} exceeds capacity {capacity}")]
    TooManyLeaves { count: u64, capacity: u64 },
    #[error(transparent)]
    Sml(#[from] SmlError),
    #[error(transparent)]
    Digest(#[from] DigestError),
}

/// Good/bad verdict for one node position, by comparison to the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeVerdict {
    Good,
    Bad,
}

/// The legal configurations of a parent verdict and its two child verdicts,
/// with `None` standing for an empty (nil) child position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeCase {
    /// (g; g, g) — the whole subtree is validated; traversal ends here.
    AllGood,
    /// (b; b, g) — descend left.
    BadLeft,
    /// (b; g, b) — descend right.
    BadRight,
    /// (b; b, b) — descend both.
    BadBoth,
    /// (g; …b…) — a good parent over a bad child. Diagnostic traversal never
    /// reaches this; it only turns up in forensic evaluation.
    Anomaly,
    /// (b; g, g) — an obvious integrity failure, detected without
    /// recomputing an extend.
    BadParentGoodChildren,
    /// (x; y, nil) — incomplete tree; the parent value must equal its only
    /// child.
    IncompleteRight,
}

/// Classifies a parent/children verdict configuration.
pub fn classify(
    parent: NodeVerdict,
    left: Option<NodeVerdict>,
    right: Option<NodeVerdict>,
) -> NodeCase {
    use NodeVerdict::{Bad, Good};
    match (parent, left, right) {
        (_, _, None) => NodeCase::IncompleteRight,
        (Good, Some(Good), Some(Good)) => NodeCase::AllGood,
        (Bad, Some(Bad), Some(Good)) => NodeCase::BadLeft,
        (Bad, Some(Good), Some(Bad)) => NodeCase::BadRight,
        (Bad, Some(Bad), Some(Bad)) => NodeCase::BadBoth,
        (Bad, Some(Good), Some(Good)) => NodeCase::BadParentGoodChildren,
        (Good, _, _) => NodeCase::Anomaly,
        (Bad, None, _) => NodeCase::IncompleteRight,
    }
}

/// Overall result of a validation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    FailuresFound,
    Tampered,
    TamperedAndFailures,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Clean => "clean",
            Outcome::FailuresFound => "failures_found",
            Outcome::Tampered => "tampered",
            Outcome::TamperedAndFailures => "tampered_and_failures",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether to stop at manipulation exceptions or keep comparing inside
/// excepted subtrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    /// Report an exception and prune; no verdicts below it.
    #[default]
    Standard,
    /// Additionally compare leaves under excepted subtrees. Those mismatches
    /// carry no trust claim and are reported separately.
    Forensic,
}

/// Result of diagnostic validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub outcome: Outcome,
    /// Leaves whose measurements differ from the reference, reached through
    /// authentic inner nodes only.
    pub failed_leaves: BTreeSet<u64>,
    /// Roots of subtrees pruned as untrustworthy.
    pub manipulation_exceptions: BTreeSet<EdgePath>,
    /// Forensic-only: leaf mismatches inside excepted subtrees.
    pub forensic_mismatches: BTreeSet<u64>,
    pub hash_op_count: u64,
    pub comparison_count: u64,
}

impl Default for ValidationReport {
    fn default() -> Self {
        Self::new()
    }
}

impl ValidationReport {
    /// An empty (clean) report.
    pub fn new() -> Self {
        ValidationReport {
            outcome: Outcome::Clean,
            failed_leaves: BTreeSet::new(),
            manipulation_exceptions: BTreeSet::new(),
            forensic_mismatches: BTreeSet::new(),
            hash_op_count: 0,
            comparison_count: 0,
        }
    }

    /// Recomputes `outcome` from the failure and exception sets. Call after
    /// editing the sets directly (e.g. when merging reports).
    pub fn settle_outcome(&mut self) {
        self.outcome = match (
            self.failed_leaves.is_empty(),
            self.manipulation_exceptions.is_empty(),
        ) {
            (true, true) => Outcome::Clean,
            (false, true) => Outcome::FailuresFound,
            (true, false) => Outcome::Tampered,
            (false, false) => Outcome::TamperedAndFailures,
        };
    }

    /// Structured JSON form: outcome, failed leaves, exceptions as edge-path
    /// strings, counters.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "outcome": self.outcome.as_str(),
            "failed_leaves": self.failed_leaves.iter().copied().collect::<Vec<u64>>(),
            "manipulation_exceptions": self
                .manipulation_exceptions
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<String>>(),
            "forensic_mismatches": self.forensic_mismatches.iter().copied().collect::<Vec<u64>>(),
            "hash_op_count": self.hash_op_count,
            "comparison_count": self.comparison_count,
        })
    }
}

/// Full tree of expected digests, same shape and indexing as an expanded
/// log.
#[derive(Debug, Clone)]
pub struct ReferenceTree {
    alg: HashAlgorithm,
    depth: u32,
    arity: u32,
    leaf_count: u64,
    nodes: Vec<Digest>,
}

impl ReferenceTree {
    /// Builds the reference by brute force: leaves are placed left to right,
    /// every inner node is the extend of its children, and empty positions
    /// stay nil (so a node over a single subtree equals that subtree's
    /// root). This construction is deliberately independent of the
    /// register-based formation algorithm.
    pub fn build(
        leaves: &[Digest],
        depth: u32,
        arity: u32,
        alg: HashAlgorithm,
    ) -> Result<Self, ValidateError> {
        if depth == 0 {
            return Err(ValidateError::ShapeMismatch("depth 0".into()));
        }
        if arity < 2 {
            return Err(ValidateError::ShapeMismatch(format!(
                "arity {arity} below 2"
            )));
        }
        let capacity = (arity as u64)
            .checked_pow(depth)
            .ok_or_else(|| ValidateError::ShapeMismatch("capacity overflows".into()))?;
        if leaves.is_empty() {
            return Err(ValidateError::ShapeMismatch(
                "a reference tree needs at least one leaf".into(),
            ));
        }
        if leaves.len() as u64 > capacity {
            return Err(ValidateError::TooManyLeaves {
                count: leaves.len() as u64,
                capacity,
            });
        }
        for leaf in leaves {
            leaf.check_measurement(alg)?;
        }
        let mut nodes = vec![Digest::nil(); full_node_count(depth, arity) as usize];
        Self::fill(
            &mut nodes,
            &EdgePath::root(),
            depth,
            arity,
            alg,
            leaves,
        )?;
        Ok(ReferenceTree {
            alg,
            depth,
            arity,
            leaf_count: leaves.len() as u64,
            nodes,
        })
    }

    fn fill(
        nodes: &mut [Digest],
        path: &EdgePath,
        depth: u32,
        arity: u32,
        alg: HashAlgorithm,
        leaves: &[Digest],
    ) -> Result<Digest, ValidateError> {
        let value = if path.len() == depth as usize {
            let index = path.leaf_index(arity);
            leaves.get(index as usize).copied().unwrap_or(Digest::nil())
        } else {
            let mut acc = Digest::nil();
            for branch in 0..arity {
                let child = Self::fill(nodes, &path.child(branch as u8), depth, arity, alg, leaves)?;
                acc = extend(&acc, &child, alg)?;
            }
            acc
        };
        nodes[path_to_index(depth, arity, path) as usize - 1] = value;
        Ok(value)
    }

    pub fn hash_alg(&self) -> HashAlgorithm {
        self.alg
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    pub fn leaf_count(&self) -> u64 {
        self.leaf_count
    }

    pub fn root(&self) -> Digest {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn node_at(&self, path: &EdgePath) -> Digest {
        self.nodes[path_to_index(self.depth, self.arity, path) as usize - 1]
    }
}

/// Builds a binary reference tree.
pub fn build_reference(
    leaves: &[Digest],
    depth: u32,
    alg: HashAlgorithm,
) -> Result<ReferenceTree, ValidateError> {
    ReferenceTree::build(leaves, depth, 2, alg)
}

/// Diagnostic validation (see the module docs).
///
/// `claimed_root` is the root register value from the quote. It is first
/// checked against the log's root record — a mismatch is itself a
/// manipulation exception at the root — and then against the reference
/// root; equality there validates the whole tree at once.
pub fn diagnostic_validate(
    sml: &SmlTree,
    claimed_root: &Digest,
    reference: &ReferenceTree,
    mode: ValidationMode,
) -> Result<ValidationReport, ValidateError> {
    if sml.hash_alg() != reference.hash_alg() {
        return Err(ValidateError::ShapeMismatch(format!(
            "log uses {}, reference {}",
            sml.hash_alg(),
            reference.hash_alg()
        )));
    }
    if sml.depth() != reference.depth() || sml.arity() != reference.arity() {
        return Err(ValidateError::ShapeMismatch(format!(
            "log is depth {} arity {}, reference depth {} arity {}",
            sml.depth(),
            sml.arity(),
            reference.depth(),
            reference.arity()
        )));
    }
    if sml.leaf_count() != reference.leaf_count() {
        return Err(ValidateError::ShapeMismatch(format!(
            "log has {} leaves, reference {}",
            sml.leaf_count(),
            reference.leaf_count()
        )));
    }

    let expanded = sml.expand_to_full()?;
    let mut report = ValidationReport::new();

    if *claimed_root != expanded.root() {
        // The register contradicts the log it is supposed to protect.
        report.manipulation_exceptions.insert(EdgePath::root());
        if mode == ValidationMode::Forensic {
            forensic_sweep(&expanded, reference, &EdgePath::root(), &mut report);
        }
        report.settle_outcome();
        return Ok(report);
    }
    if *claimed_root == reference.root() {
        report.settle_outcome();
        return Ok(report);
    }

    let alg = sml.hash_alg();
    let depth = sml.depth();
    let arity = sml.arity();
    let mut stack = vec![EdgePath::root()];

    // Every stacked node differs from the reference and sits above leaf
    // level; both sides are non-nil (nil positions always agree because the
    // shapes match).
    while let Some(path) = stack.pop() {
        let children: Vec<EdgePath> = (0..arity).map(|b| path.child(b as u8)).collect();
        let sml_children: Vec<Digest> = children.iter().map(|c| expanded.node_at(c)).collect();
        let present = sml_children
            .iter()
            .position(|d| d.is_nil())
            .unwrap_or(arity as usize);

        if present == 0 {
            // All children empty yet the parent differs: impossible in a
            // structurally valid log; treat as manipulation.
            report.manipulation_exceptions.insert(path);
            continue;
        }

        if present == 1 {
            // Single occupied child: the parent is a forwarded copy and must
            // equal it.
            report.comparison_count += 1;
            let child = &children[0];
            if expanded.node_at(&path) != sml_children[0] {
                except(&expanded, reference, path, mode, &mut report);
            } else if child.len() == depth as usize {
                report.failed_leaves.insert(child.leaf_index(arity));
            } else {
                stack.push(child.clone());
            }
            continue;
        }

        // Compare the occupied children against the reference.
        report.comparison_count += present as u64;
        let verdicts: Vec<bool> = children[..present]
            .iter()
            .zip(&sml_children)
            .map(|(c, v)| *v == reference.node_at(c))
            .collect();

        if verdicts.iter().all(|&good| good) {
            // Bad parent over good children: integrity failure, no
            // recalculation needed.
            except(&expanded, reference, path, mode, &mut report);
            continue;
        }

        // Recompute the parent from its children to confirm the stored
        // configuration is authentic.
        report.hash_op_count += present as u64 - 1;
        let mut recomputed = sml_children[0];
        for value in &sml_children[1..present] {
            recomputed = extend(&recomputed, value, alg)?;
        }
        if recomputed != expanded.node_at(&path) {
            except(&expanded, reference, path, mode, &mut report);
            continue;
        }

        for (child, good) in children[..present].iter().zip(&verdicts) {
            if *good {
                continue;
            }
            if child.len() == depth as usize {
                report.failed_leaves.insert(child.leaf_index(arity));
            } else {
                stack.push(child.clone());
            }
        }
    }

    report.settle_outcome();
    Ok(report)
}

fn except(
    expanded: &crate::sml::ExpandedTree,
    reference: &ReferenceTree,
    path: EdgePath,
    mode: ValidationMode,
    report: &mut ValidationReport,
) {
    if mode == ValidationMode::Forensic {
        forensic_sweep(expanded, reference, &path, report);
    }
    report.manipulation_exceptions.insert(path);
}

/// Compares every leaf under `path` without any trust claim.
fn forensic_sweep(
    expanded: &crate::sml::ExpandedTree,
    reference: &ReferenceTree,
    path: &EdgePath,
    report: &mut ValidationReport,
) {
    let depth = expanded.depth() as usize;
    let arity = expanded.arity();
    if path.len() == depth {
        let stored = expanded.node_at(path);
        let expected = reference.node_at(path);
        if stored != expected && !(stored.is_nil() && expected.is_nil()) {
            report.forensic_mismatches.insert(path.leaf_index(arity));
        }
        return;
    }
    for branch in 0..arity {
        forensic_sweep(expanded, reference, &path.child(branch as u8), report);
    }
}

/// Result of recomputing a linear measurement chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearValidation {
    /// Whether the recomputed final value matches the claimed one. On a
    /// mismatch nothing can be said about which measurement is wrong.
    pub matches: bool,
    pub hash_op_count: u64,
    pub comparison_count: u64,
}

/// Recomputes the linear extend chain from `initial` through all
/// measurements and compares the result to `claimed_final`.
pub fn linear_validate(
    measurements: &[Digest],
    claimed_final: &Digest,
    initial: &Digest,
    alg: HashAlgorithm,
) -> Result<LinearValidation, ValidateError> {
    let mut value = *initial;
    let mut hash_ops = 0u64;
    for m in measurements {
        if !value.is_nil() && !m.is_nil() {
            hash_ops += 1;
        }
        value = extend(&value, m, alg)?;
    }
    Ok(LinearValidation {
        matches: value == *claimed_final,
        hash_op_count: hash_ops,
        comparison_count: 1,
    })
}
