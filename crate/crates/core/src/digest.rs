//! Hash primitives and the extend algebra.
//!
//! Verification data is built from a single binary operation, *extend*:
//! `a ◇ b = H(a ∥ b)`. The distinguished value `nil` (an empty register or
//! tree position) acts as a two-sided unit, so `x ◇ nil = nil ◇ x = x` and
//! `nil ◇ nil = nil`. `nil` is carried as an explicit flag and is never
//! representable as digest bytes; in particular it is distinct from an
//! all-zero digest.

use sha1::Sha1;
use sha2::Sha256;
use thiserror::Error;

/// Largest supported digest size in bytes.
pub const MAX_DIGEST_LEN: usize = 32;

/// Errors from digest construction and the extend operation.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DigestError {
    /// A non-nil digest does not have the output length of the algorithm in use.
    #[error("digest is {actual} bytes, expected {expected} for {alg}")]
    LengthMismatch {
        alg: HashAlgorithm,
        expected: usize,
        actual: usize,
    },
    /// Raw bytes of a length no supported algorithm produces.
    #[error("unsupported digest length {0}")]
    InvalidLength(usize),
    /// A nil digest where a real measurement value is required.
    #[error("nil digest where a measurement value is required")]
    UnexpectedNil,
    /// Hex string that does not decode to a digest.
    #[error("invalid hex digest: {0}")]
    InvalidHex(String),
}

/// Supported hash algorithms for measurements and tree nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashAlgorithm {
    Sha1,
    Sha256,
}

impl HashAlgorithm {
    /// Digest size in bytes (20 for SHA-1, 32 for SHA-256).
    pub fn output_len(self) -> usize {
        match self {
            HashAlgorithm::Sha1 => 20,
            HashAlgorithm::Sha256 => 32,
        }
    }

    /// Identifier byte used in the serialized log format.
    pub fn id_byte(self) -> u8 {
        match self {
            HashAlgorithm::Sha1 => 0x01,
            HashAlgorithm::Sha256 => 0x02,
        }
    }

    /// Inverse of [`HashAlgorithm::id_byte`].
    pub fn from_id_byte(byte: u8) -> Option<Self> {
        match byte {
            0x01 => Some(HashAlgorithm::Sha1),
            0x02 => Some(HashAlgorithm::Sha256),
            _ => None,
        }
    }

    fn digest_parts(self, parts: &[&[u8]]) -> Digest {
        use sha1::Digest as _;
        let mut buf = [0u8; MAX_DIGEST_LEN];
        let len = match self {
            HashAlgorithm::Sha1 => {
                let mut h = Sha1::new();
                for p in parts {
                    h.update(p);
                }
                buf[..20].copy_from_slice(&h.finalize());
                20
            }
            HashAlgorithm::Sha256 => {
                let mut h = Sha256::new();
                for p in parts {
                    h.update(p);
                }
                buf[..32].copy_from_slice(&h.finalize());
                32
            }
        };
        Digest { len: len as u8, buf }
    }
}

impl std::fmt::Display for HashAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HashAlgorithm::Sha1 => write!(f, "sha1"),
            HashAlgorithm::Sha256 => write!(f, "sha256"),
        }
    }
}

impl std::str::FromStr for HashAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sha1" | "sha-1" => Ok(HashAlgorithm::Sha1),
            "sha256" | "sha-256" => Ok(HashAlgorithm::Sha256),
            other => Err(format!("unknown hash algorithm `{other}`")),
        }
    }
}

/// A hash value, or the distinguished empty value `nil`.
///
/// `len == 0` encodes nil; the flag is structural, not an in-band byte
/// pattern, so nil compares unequal to every real digest including all
/// zeros.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest {
    len: u8,
    buf: [u8; MAX_DIGEST_LEN],
}

impl Digest {
    /// The empty value.
    pub fn nil() -> Self {
        Digest {
            len: 0,
            buf: [0; MAX_DIGEST_LEN],
        }
    }

    /// Wraps raw digest bytes. The length must be one an algorithm produces.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DigestError> {
        if bytes.len() != 20 && bytes.len() != 32 {
            return Err(DigestError::InvalidLength(bytes.len()));
        }
        let mut buf = [0u8; MAX_DIGEST_LEN];
        buf[..bytes.len()].copy_from_slice(bytes);
        Ok(Digest {
            len: bytes.len() as u8,
            buf,
        })
    }

    /// Parses a hex digest string.
    pub fn from_hex(s: &str) -> Result<Self, DigestError> {
        let bytes = hex::decode(s).map_err(|e| DigestError::InvalidHex(e.to_string()))?;
        Digest::from_bytes(&bytes)
    }

    pub fn is_nil(&self) -> bool {
        self.len == 0
    }

    /// The digest bytes, or `None` for nil.
    pub fn as_bytes(&self) -> Option<&[u8]> {
        if self.is_nil() {
            None
        } else {
            Some(&self.buf[..self.len as usize])
        }
    }

    /// Length in bytes; 0 for nil.
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.is_nil()
    }

    /// Lowercase hex, or `"nil"`.
    pub fn to_hex(&self) -> String {
        match self.as_bytes() {
            Some(b) => hex::encode(b),
            None => "nil".to_string(),
        }
    }

    /// Checks that this digest is non-nil and sized for `alg`.
    pub fn check_measurement(&self, alg: HashAlgorithm) -> Result<(), DigestError> {
        match self.as_bytes() {
            None => Err(DigestError::UnexpectedNil),
            Some(b) if b.len() != alg.output_len() => Err(DigestError::LengthMismatch {
                alg,
                expected: alg.output_len(),
                actual: b.len(),
            }),
            Some(_) => Ok(()),
        }
    }

    fn check_operand(&self, alg: HashAlgorithm) -> Result<(), DigestError> {
        match self.as_bytes() {
            None => Ok(()),
            Some(b) if b.len() != alg.output_len() => Err(DigestError::LengthMismatch {
                alg,
                expected: alg.output_len(),
                actual: b.len(),
            }),
            Some(_) => Ok(()),
        }
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

/// Hashes raw component data into a measurement value. Never returns nil.
pub fn hash_leaf(data: &[u8], alg: HashAlgorithm) -> Digest {
    alg.digest_parts(&[data])
}

/// The extend operation `a ◇ b` with nil as a two-sided unit.
///
/// Returns `b` if `a` is nil, `a` if `b` is nil, and `H(a ∥ b)` otherwise.
/// Errors if a non-nil operand does not match the algorithm's digest size.
pub fn extend(a: &Digest, b: &Digest, alg: HashAlgorithm) -> Result<Digest, DigestError> {
    a.check_operand(alg)?;
    b.check_operand(alg)?;
    match (a.as_bytes(), b.as_bytes()) {
        (None, None) => Ok(Digest::nil()),
        (None, Some(_)) => Ok(*b),
        (Some(_), None) => Ok(*a),
        (Some(x), Some(y)) => Ok(alg.digest_parts(&[x, y])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHA1_EMPTY: &str = "da39a3ee5e6b4b0d3255bfef95601890afd80709";
    const SHA1_ABC: &str = "a9993e364706816aba3e25717850c26c9cd0d89d";
    const SHA256_EMPTY: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    const SHA256_ABC: &str = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
    // sha1 of 40 zero bytes, computed with an independent implementation.
    const SHA1_40_ZEROS: &str = "b80de5d138758541c5f05265ad144ab9fa86d1db";

    #[test]
    fn sha1_reference_vectors() {
        assert_eq!(hash_leaf(b"", HashAlgorithm::Sha1).to_hex(), SHA1_EMPTY);
        assert_eq!(hash_leaf(b"abc", HashAlgorithm::Sha1).to_hex(), SHA1_ABC);
    }

    #[test]
    fn sha256_reference_vectors() {
        assert_eq!(hash_leaf(b"", HashAlgorithm::Sha256).to_hex(), SHA256_EMPTY);
        assert_eq!(hash_leaf(b"abc", HashAlgorithm::Sha256).to_hex(), SHA256_ABC);
    }

    #[test]
    fn hash_leaf_never_nil() {
        assert!(!hash_leaf(b"", HashAlgorithm::Sha1).is_nil());
        assert!(!hash_leaf(b"anything", HashAlgorithm::Sha256).is_nil());
    }

    #[test]
    fn nil_is_a_two_sided_unit() {
        let alg = HashAlgorithm::Sha1;
        let x = hash_leaf(b"x", alg);
        assert_eq!(extend(&Digest::nil(), &x, alg).unwrap(), x);
        assert_eq!(extend(&x, &Digest::nil(), alg).unwrap(), x);
        assert_eq!(
            extend(&Digest::nil(), &Digest::nil(), alg).unwrap(),
            Digest::nil()
        );
    }

    #[test]
    fn extend_concatenates_and_hashes() {
        let z = Digest::from_bytes(&[0u8; 20]).unwrap();
        let out = extend(&z, &z, HashAlgorithm::Sha1).unwrap();
        assert_eq!(out.to_hex(), SHA1_40_ZEROS);
    }

    #[test]
    fn nil_differs_from_all_zeros() {
        let zeros = Digest::from_bytes(&[0u8; 20]).unwrap();
        assert_ne!(zeros, Digest::nil());
        assert!(!zeros.is_nil());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let short = Digest::from_bytes(&[7u8; 20]).unwrap();
        let err = extend(&short, &short, HashAlgorithm::Sha256).unwrap_err();
        assert!(matches!(err, DigestError::LengthMismatch { .. }));
        assert!(matches!(
            Digest::from_bytes(&[1u8; 5]),
            Err(DigestError::InvalidLength(5))
        ));
    }

    #[test]
    fn hex_round_trip() {
        let d = hash_leaf(b"round trip", HashAlgorithm::Sha256);
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        assert!(Digest::from_hex("zz").is_err());
    }
}
