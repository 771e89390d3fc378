//! Tree-formed stored measurement log.
//!
//! Records arrive in the natural serialization order of the formation
//! algorithm: each leaf, then every node it completes, bottom-up; cleanup of
//! an incomplete tree appends one record per level with the global root
//! last. That order admits binary-search addressing: sequence number `K` in
//! the full-tree index space of `2^(d+1) - 1` entries resolves to a
//! root-to-node edge path by repeatedly halving the remaining block
//! ([`locate`]).
//!
//! # File format (`.tfv`)
//!
//! ```text
//! magic "TFVS" | version 0x01 | alg byte | arity byte | depth byte
//! leaf count (u32 BE) | record count (u32 BE)
//! per record: flag byte, then the digest bytes unless the nil bit is set
//!   flags: bit0 nil, bit1 leaf, bit2 root, bit3 linear-fallback
//! ```
//!
//! All integers are big-endian; the encoding is canonical, so equal trees
//! serialize to identical bytes.

use crate::digest::{Digest, DigestError, HashAlgorithm};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TFVS";
const FORMAT_VERSION: u8 = 0x01;

const FLAG_NIL: u8 = 0x01;
const FLAG_LEAF: u8 = 0x02;
const FLAG_ROOT: u8 = 0x04;
const FLAG_FALLBACK: u8 = 0x08;

/// Errors from log container operations and the file format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmlError {
    #[error("log is sealed; only linear-fallback records may follow the root")]
    Sealed,
    #[error("linear-fallback records are only valid after the tree is sealed")]
    FallbackBeforeSeal,
    #[error("{0} records must carry a digest")]
    NilDigest(&'static str),
    #[error("bad magic; not a tree-formed log")]
    BadMagic,
    #[error("unsupported format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("unknown hash algorithm byte {0:#04x}")]
    UnknownAlgorithm(u8),
    #[error("invalid record flags {0:#04x}")]
    BadFlags(u8),
    #[error("truncated input")]
    Truncated,
    #[error("trailing bytes after the last record")]
    TrailingBytes,
    #[error("malformed log: {0}")]
    Malformed(String),
    #[error("sequence number {index} out of range 1..={max}")]
    IndexOutOfRange { index: u64, max: u64 },
    #[error("invalid edge path: {0}")]
    BadPath(String),
    #[error(transparent)]
    Digest(#[from] DigestError),
}

/// What a log record holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    /// A component measurement.
    Leaf,
    /// An interior node purged from a verification register.
    Inner,
    /// The global root; last record of a finalized tree.
    Root,
    /// A measurement chained linearly after the tree was exhausted.
    LinearFallback,
}

/// One entry of the stored measurement log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmlRecord {
    pub digest: Digest,
    pub kind: RecordKind,
}

impl SmlRecord {
    pub fn leaf(digest: Digest) -> Self {
        SmlRecord {
            digest,
            kind: RecordKind::Leaf,
        }
    }

    pub fn inner(digest: Digest) -> Self {
        SmlRecord {
            digest,
            kind: RecordKind::Inner,
        }
    }

    pub fn root(digest: Digest) -> Self {
        SmlRecord {
            digest,
            kind: RecordKind::Root,
        }
    }

    pub fn linear_fallback(digest: Digest) -> Self {
        SmlRecord {
            digest,
            kind: RecordKind::LinearFallback,
        }
    }

    /// True for the empty interior positions an incomplete tree may purge.
    pub fn is_nil(&self) -> bool {
        self.digest.is_nil()
    }

    fn flag_byte(&self) -> u8 {
        let kind = match self.kind {
            RecordKind::Leaf => FLAG_LEAF,
            RecordKind::Inner => 0,
            RecordKind::Root => FLAG_ROOT,
            RecordKind::LinearFallback => FLAG_FALLBACK,
        };
        kind | if self.is_nil() { FLAG_NIL } else { 0 }
    }
}

/// Root-to-node path of branch choices; branch 0 is the left edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EdgePath(Vec<u8>);

impl EdgePath {
    /// The empty path, i.e. the root itself.
    pub fn root() -> Self {
        EdgePath(Vec::new())
    }

    pub fn from_edges(edges: Vec<u8>) -> Self {
        EdgePath(edges)
    }

    pub fn edges(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, branch: u8) -> Self {
        let mut edges = self.0.clone();
        edges.push(branch);
        EdgePath(edges)
    }

    /// True if `self` lies on the path from the root to `other`
    /// (inclusive).
    pub fn is_ancestor_of(&self, other: &EdgePath) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Leaf sequence number of a depth-long path.
    pub fn leaf_index(&self, arity: u32) -> u64 {
        self.0
            .iter()
            .fold(0u64, |acc, &e| acc * arity as u64 + e as u64)
    }

    /// Path to leaf `index` in a tree of the given shape.
    pub fn of_leaf(index: u64, depth: u32, arity: u32) -> Self {
        let base = arity as u64;
        let mut edges = vec![0u8; depth as usize];
        let mut rest = index;
        for slot in edges.iter_mut().rev() {
            *slot = (rest % base) as u8;
            rest /= base;
        }
        EdgePath(edges)
    }

    /// Parses `"root"`, an `L`/`R` string, or dot-separated branch numbers.
    pub fn parse(s: &str) -> Result<Self, SmlError> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("root") {
            return Ok(EdgePath::root());
        }
        if s.chars().all(|c| matches!(c, 'L' | 'R' | 'l' | 'r')) {
            return Ok(EdgePath(
                s.chars()
                    .map(|c| if matches!(c, 'L' | 'l') { 0 } else { 1 })
                    .collect(),
            ));
        }
        let edges = s
            .split('.')
            .map(|part| {
                part.parse::<u8>()
                    .map_err(|_| SmlError::BadPath(s.to_string()))
            })
            .collect::<Result<Vec<u8>, _>>()?;
        Ok(EdgePath(edges))
    }
}

impl std::fmt::Display for EdgePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "root");
        }
        if self.0.iter().all(|&e| e < 2) {
            for &e in &self.0 {
                write!(f, "{}", if e == 0 { 'L' } else { 'R' })?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
            write!(f, "{}", parts.join("."))
        }
    }
}

/// Number of positions in the full tree of the given shape, root included.
///
/// Panics when the count overflows `u64`; shapes are validated against
/// [`checked_full_node_count`] wherever they enter from outside.
pub fn full_node_count(depth: u32, arity: u32) -> u64 {
    checked_full_node_count(depth, arity).expect("tree size fits in u64")
}

/// Overflow-checked variant of [`full_node_count`].
pub fn checked_full_node_count(depth: u32, arity: u32) -> Option<u64> {
    let base = arity as u64;
    let mut total = 1u64;
    let mut level = 1u64;
    for _ in 0..depth {
        level = level.checked_mul(base)?;
        total = total.checked_add(level)?;
    }
    Some(total)
}

/// Serialization index (1-based) of the node a path leads to.
///
/// The full-tree order lists each child block in branch order followed by
/// the parent, so every subtree occupies one contiguous block whose last
/// entry is the subtree root.
pub fn path_to_index(depth: u32, arity: u32, path: &EdgePath) -> u64 {
    assert!(
        path.len() <= depth as usize,
        "path longer than the tree depth"
    );
    let mut base = 0u64;
    let mut size = full_node_count(depth, arity);
    for &edge in path.edges() {
        let child_size = (size - 1) / arity as u64;
        base += edge as u64 * child_size;
        size = child_size;
    }
    base + size
}

/// Binary search for sequence number `index` in the full-tree order of a
/// binary tree of depth `depth`: descend from the root (the last entry),
/// picking the half that contains `index`, until it is the rightmost entry
/// of its block.
pub fn locate(depth: u32, index: u64) -> Result<EdgePath, SmlError> {
    locate_in(depth, 2, index)
}

/// [`locate`] generalized to uniform arity.
pub fn locate_in(depth: u32, arity: u32, index: u64) -> Result<EdgePath, SmlError> {
    let total = checked_full_node_count(depth, arity)
        .ok_or_else(|| SmlError::Malformed("tree size overflows".into()))?;
    if index < 1 || index > total {
        return Err(SmlError::IndexOutOfRange { index, max: total });
    }
    let mut base = 0u64;
    let mut size = total;
    let mut path = EdgePath::root();
    while index != base + size {
        let child_size = (size - 1) / arity as u64;
        let branch = (index - base - 1) / child_size;
        path = path.child(branch as u8);
        base += branch * child_size;
        size = child_size;
    }
    Ok(path)
}

/// The full tree a log expands to: every position of the index space, with
/// nil at positions the builder never wrote.
#[derive(Debug, Clone)]
pub struct ExpandedTree {
    alg: HashAlgorithm,
    depth: u32,
    arity: u32,
    leaf_count: u64,
    nodes: Vec<Digest>,
}

impl ExpandedTree {
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

    /// Digest at a tree position; nil for positions never written.
    pub fn node_at(&self, path: &EdgePath) -> Digest {
        self.node_by_index(path_to_index(self.depth, self.arity, path))
    }

    /// Digest at 1-based sequence number `index` of the full-tree order.
    pub fn node_by_index(&self, index: u64) -> Digest {
        self.nodes[index as usize - 1]
    }

    pub fn root(&self) -> Digest {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn node_count(&self) -> u64 {
        self.nodes.len() as u64
    }
}

/// One entry of the structural write plan: which position the formation and
/// cleanup algorithms write at each step, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedWrite {
    /// 1-based full-tree sequence number.
    pub index: u64,
    pub kind: RecordKind,
    /// Whether the write forwards an empty position.
    pub expect_nil: bool,
}

/// Replays the formation and cleanup algorithms structurally (positions and
/// kinds only, no hashing) for a tree of `leaf_count` leaves.
pub fn write_plan(depth: u32, arity: u32, leaf_count: u64) -> Result<Vec<PlannedWrite>, SmlError> {
    if depth == 0 || arity < 2 {
        return Err(SmlError::Malformed(format!(
            "invalid tree shape: depth {depth}, arity {arity}"
        )));
    }
    let base = arity as u64;
    let cap = base
        .checked_pow(depth)
        .ok_or_else(|| SmlError::Malformed("tree capacity overflows".into()))?;
    if leaf_count == 0 || leaf_count > cap {
        return Err(SmlError::Malformed(format!(
            "leaf count {leaf_count} outside 1..={cap}"
        )));
    }

    fn planned(
        depth: u32,
        arity: u32,
        prefix: &[u8],
        kind: RecordKind,
        expect_nil: bool,
    ) -> PlannedWrite {
        PlannedWrite {
            index: path_to_index(depth, arity, &EdgePath::from_edges(prefix.to_vec())),
            kind,
            expect_nil,
        }
    }

    let mut plan = Vec::new();
    for i in 0..leaf_count {
        let digits = EdgePath::of_leaf(i, depth, arity);
        let edges = digits.edges();
        plan.push(planned(depth, arity, edges, RecordKind::Leaf, false));
        if edges[depth as usize - 1] as u64 == base - 1 {
            plan.push(planned(
                depth,
                arity,
                &edges[..depth as usize - 1],
                RecordKind::Inner,
                false,
            ));
            let mut k = depth - 1;
            while k >= 1 && edges[k as usize - 1] as u64 == base - 1 {
                plan.push(planned(
                    depth,
                    arity,
                    &edges[..k as usize - 1],
                    RecordKind::Inner,
                    false,
                ));
                k -= 1;
            }
            if k == 0 {
                plan.last_mut().expect("just pushed").kind = RecordKind::Root;
            }
        }
    }

    if leaf_count < cap {
        let digits = EdgePath::of_leaf(leaf_count, depth, arity);
        for k in (1..depth).rev() {
            let modulus = base.pow(depth - k + 1);
            let kind = if k == 1 {
                RecordKind::Root
            } else {
                RecordKind::Inner
            };
            plan.push(planned(
                depth,
                arity,
                &digits.edges()[..k as usize - 1],
                kind,
                leaf_count.is_multiple_of(modulus),
            ));
        }
        if depth == 1 {
            plan.push(planned(depth, arity, &[], RecordKind::Root, false));
        }
    }

    Ok(plan)
}

/// Append-only tree-formed measurement log.
///
/// Immutable once sealed (apart from linear-fallback appends and the
/// explicit tamper-injection helper); share sealed instances freely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmlTree {
    alg: HashAlgorithm,
    arity: u32,
    depth: u32,
    leaf_count: u64,
    records: Vec<SmlRecord>,
    sealed: bool,
}

impl SmlTree {
    pub fn new(alg: HashAlgorithm, arity: u32, depth: u32) -> Self {
        assert!((1..=255).contains(&depth), "depth must be in 1..=255");
        assert!((2..=255).contains(&arity), "arity must be in 2..=255");
        SmlTree {
            alg,
            arity,
            depth,
            leaf_count: 0,
            records: Vec::new(),
            sealed: false,
        }
    }

    pub fn hash_alg(&self) -> HashAlgorithm {
        self.alg
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Number of leaf records.
    pub fn leaf_count(&self) -> u64 {
        self.leaf_count
    }

    /// True once the root record has been appended.
    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn records(&self) -> &[SmlRecord] {
        &self.records
    }

    /// Appends a record, preserving the natural order. Once the root record
    /// seals the log only linear-fallback records may follow.
    pub fn append(&mut self, record: SmlRecord) -> Result<(), SmlError> {
        match record.kind {
            RecordKind::LinearFallback => {
                if !self.sealed {
                    return Err(SmlError::FallbackBeforeSeal);
                }
                if record.is_nil() {
                    return Err(SmlError::NilDigest("linear-fallback"));
                }
            }
            _ if self.sealed => return Err(SmlError::Sealed),
            RecordKind::Leaf => {
                if record.is_nil() {
                    return Err(SmlError::NilDigest("leaf"));
                }
                self.leaf_count += 1;
            }
            RecordKind::Inner => {}
            RecordKind::Root => {
                if record.is_nil() {
                    return Err(SmlError::NilDigest("root"));
                }
                self.sealed = true;
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// The records of the tree proper, excluding any linear-fallback tail.
    pub fn tree_records(&self) -> &[SmlRecord] {
        let end = self
            .records
            .iter()
            .position(|r| r.kind == RecordKind::LinearFallback)
            .unwrap_or(self.records.len());
        &self.records[..end]
    }

    /// Measurements chained after the tree was exhausted.
    pub fn fallback_records(&self) -> &[SmlRecord] {
        let start = self
            .records
            .iter()
            .position(|r| r.kind == RecordKind::LinearFallback)
            .unwrap_or(self.records.len());
        &self.records[start..]
    }

    /// The root record of a sealed log.
    pub fn root_record(&self) -> Option<&SmlRecord> {
        self.tree_records()
            .last()
            .filter(|r| r.kind == RecordKind::Root)
    }

    /// Leaf measurements in left-to-right order.
    pub fn leaf_digests(&self) -> Vec<Digest> {
        self.records
            .iter()
            .filter(|r| r.kind == RecordKind::Leaf)
            .map(|r| r.digest)
            .collect()
    }

    /// Resolves sequence number `index` of the full-tree order to its edge
    /// path.
    pub fn locate(&self, index: u64) -> Result<EdgePath, SmlError> {
        locate_in(self.depth, self.arity, index)
    }

    /// Index of the record that wrote the node at `path`, if the builder
    /// wrote that position.
    pub fn record_index_at(&self, path: &EdgePath) -> Result<Option<usize>, SmlError> {
        let target = path_to_index(self.depth, self.arity, path);
        let plan = write_plan(self.depth, self.arity, self.leaf_count)?;
        Ok(plan.iter().position(|w| w.index == target))
    }

    /// Replaces a record's digest in place without touching its ancestors.
    ///
    /// This deliberately produces an inconsistent log; it exists so tamper
    /// scenarios can be constructed. Empty (nil) records cannot be
    /// substituted.
    pub fn substitute_digest(&mut self, index: usize, digest: Digest) -> Result<(), SmlError> {
        let alg = self.alg;
        let record = self
            .records
            .get_mut(index)
            .ok_or(SmlError::IndexOutOfRange {
                index: index as u64 + 1,
                max: 0,
            })?;
        if record.is_nil() {
            return Err(SmlError::Malformed(
                "cannot substitute an empty record".into(),
            ));
        }
        digest.check_measurement(alg)?;
        record.digest = digest;
        Ok(())
    }

    /// Expands a finalized log to the full index space, placing each record
    /// at the position the formation algorithm wrote it and nil everywhere
    /// else.
    ///
    /// One position is implied rather than stored: when the last leaf does
    /// not complete its bottom-level node, that node's value never leaves
    /// the register bank on its own. It is recovered here by the completion
    /// rule — the extend of the trailing leaves it covers, a plain copy in
    /// the binary case.
    ///
    /// Fails when the record stream is structurally inconsistent with a
    /// replay over `leaf_count` leaves (wrong count, kinds out of order, or
    /// nil markers where values belong).
    pub fn expand_to_full(&self) -> Result<ExpandedTree, SmlError> {
        if !self.sealed {
            return Err(SmlError::Malformed("log is not finalized".into()));
        }
        // In-memory expansion only; refuse shapes whose index space would
        // not fit in memory anyway.
        const MAX_EXPANDED_NODES: u64 = 1 << 26;
        if full_node_count(self.depth, self.arity) > MAX_EXPANDED_NODES {
            return Err(SmlError::Malformed(format!(
                "tree of depth {} arity {} is too large to expand",
                self.depth, self.arity
            )));
        }
        let tree_records = self.tree_records();
        let plan = write_plan(self.depth, self.arity, self.leaf_count)?;
        if plan.len() != tree_records.len() {
            return Err(SmlError::Malformed(format!(
                "expected {} records for {} leaves, found {}",
                plan.len(),
                self.leaf_count,
                tree_records.len()
            )));
        }
        let mut nodes = vec![Digest::nil(); full_node_count(self.depth, self.arity) as usize];
        for (write, record) in plan.iter().zip(tree_records) {
            if record.kind != write.kind {
                return Err(SmlError::Malformed(format!(
                    "record kind {:?} where {:?} belongs",
                    record.kind, write.kind
                )));
            }
            if record.is_nil() != write.expect_nil {
                return Err(SmlError::Malformed(
                    "nil marker inconsistent with the tree structure".into(),
                ));
            }
            nodes[write.index as usize - 1] = record.digest;
        }

        // Recover the implied bottom-level node on the active path.
        let base = self.arity as u64;
        let trailing = self.leaf_count % base;
        if trailing != 0 {
            let active = EdgePath::of_leaf(self.leaf_count, self.depth, self.arity);
            let parent =
                EdgePath::from_edges(active.edges()[..self.depth as usize - 1].to_vec());
            let index = path_to_index(self.depth, self.arity, &parent) as usize - 1;
            if nodes[index].is_nil() {
                let mut value = Digest::nil();
                for i in (self.leaf_count - trailing)..self.leaf_count {
                    let leaf = EdgePath::of_leaf(i, self.depth, self.arity);
                    let leaf_value = nodes[path_to_index(self.depth, self.arity, &leaf) as usize - 1];
                    value = crate::digest::extend(&value, &leaf_value, self.alg)?;
                }
                nodes[index] = value;
            }
        }

        Ok(ExpandedTree {
            alg: self.alg,
            depth: self.depth,
            arity: self.arity,
            leaf_count: self.leaf_count,
            nodes,
        })
    }

    /// Canonical byte encoding. See the module docs for the layout.
    pub fn serialize(&self) -> Vec<u8> {
        assert!(
            self.leaf_count <= u32::MAX as u64,
            "leaf count exceeds the format limit"
        );
        assert!(
            self.records.len() <= u32::MAX as usize,
            "record count exceeds the format limit"
        );
        let digest_len = self.alg.output_len();
        let mut out = Vec::with_capacity(17 + self.records.len() * (1 + digest_len));
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.alg.id_byte());
        out.push(self.arity as u8);
        out.push(self.depth as u8);
        out.extend_from_slice(&(self.leaf_count as u32).to_be_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_be_bytes());
        for record in &self.records {
            out.push(record.flag_byte());
            if let Some(bytes) = record.digest.as_bytes() {
                out.extend_from_slice(bytes);
            }
        }
        out
    }

    /// Parses and validates the canonical encoding.
    pub fn deserialize(bytes: &[u8]) -> Result<Self, SmlError> {
        fn take<'a>(bytes: &'a [u8], cursor: &mut usize, n: usize) -> Result<&'a [u8], SmlError> {
            let end = cursor.checked_add(n).ok_or(SmlError::Truncated)?;
            if end > bytes.len() {
                return Err(SmlError::Truncated);
            }
            let slice = &bytes[*cursor..end];
            *cursor = end;
            Ok(slice)
        }

        let mut cursor = 0usize;
        if take(bytes, &mut cursor, 4)? != MAGIC {
            return Err(SmlError::BadMagic);
        }
        let version = take(bytes, &mut cursor, 1)?[0];
        if version != FORMAT_VERSION {
            return Err(SmlError::UnsupportedVersion(version));
        }
        let alg_byte = take(bytes, &mut cursor, 1)?[0];
        let alg =
            HashAlgorithm::from_id_byte(alg_byte).ok_or(SmlError::UnknownAlgorithm(alg_byte))?;
        let arity = take(bytes, &mut cursor, 1)?[0] as u32;
        let depth = take(bytes, &mut cursor, 1)?[0] as u32;
        if arity < 2 {
            return Err(SmlError::Malformed(format!("arity {arity} below 2")));
        }
        if depth == 0 {
            return Err(SmlError::Malformed("depth 0".into()));
        }
        let leaf_count =
            u32::from_be_bytes(take(bytes, &mut cursor, 4)?.try_into().expect("4 bytes")) as u64;
        let record_count =
            u32::from_be_bytes(take(bytes, &mut cursor, 4)?.try_into().expect("4 bytes")) as u64;

        let capacity = (arity as u64)
            .checked_pow(depth)
            .ok_or_else(|| SmlError::Malformed("tree capacity overflows".into()))?;
        if checked_full_node_count(depth, arity).is_none() {
            return Err(SmlError::Malformed("tree size overflows".into()));
        }
        if leaf_count > capacity {
            return Err(SmlError::Malformed(format!(
                "leaf count {leaf_count} exceeds capacity {capacity}"
            )));
        }

        let digest_len = alg.output_len();
        let mut tree = SmlTree::new(alg, arity, depth);
        for _ in 0..record_count {
            let flags = take(bytes, &mut cursor, 1)?[0];
            if flags & !(FLAG_NIL | FLAG_LEAF | FLAG_ROOT | FLAG_FALLBACK) != 0 {
                return Err(SmlError::BadFlags(flags));
            }
            let kind = match flags & (FLAG_LEAF | FLAG_ROOT | FLAG_FALLBACK) {
                0 => RecordKind::Inner,
                FLAG_LEAF => RecordKind::Leaf,
                FLAG_ROOT => RecordKind::Root,
                FLAG_FALLBACK => RecordKind::LinearFallback,
                _ => return Err(SmlError::BadFlags(flags)),
            };
            let digest = if flags & FLAG_NIL != 0 {
                if kind != RecordKind::Inner {
                    return Err(SmlError::BadFlags(flags));
                }
                Digest::nil()
            } else {
                Digest::from_bytes(take(bytes, &mut cursor, digest_len)?)?
            };
            tree.append(SmlRecord { digest, kind })?;
        }
        if cursor != bytes.len() {
            return Err(SmlError::TrailingBytes);
        }
        if tree.leaf_count != leaf_count {
            return Err(SmlError::Malformed(format!(
                "header says {leaf_count} leaves, records contain {}",
                tree.leaf_count
            )));
        }
        Ok(tree)
    }

    /// Annotated hex dump for debugging.
    pub fn hex_dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "tfv v{FORMAT_VERSION} alg={} arity={} depth={} leaves={} records={}",
            self.alg,
            self.arity,
            self.depth,
            self.leaf_count,
            self.records.len()
        );
        for (i, record) in self.records.iter().enumerate() {
            let kind = match record.kind {
                RecordKind::Leaf => "leaf",
                RecordKind::Inner => "inner",
                RecordKind::Root => "root",
                RecordKind::LinearFallback => "fallback",
            };
            let _ = writeln!(out, "{:>5} {:<8} {}", i + 1, kind, record.digest.to_hex());
        }
        out
    }
}
