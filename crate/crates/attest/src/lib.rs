//! Minimal prover/verifier attestation exchange over tree-formed logs.
//!
//! The prover answers a 16-byte nonce challenge with a [`Quote`] — the tree
//! root register values, a digest of the serialized log, and a keyed MAC
//! binding them to the nonce under a pre-shared secret — followed by the log
//! bytes themselves. The verifier checks the tag, the nonce, and the log
//! digest before running diagnostic validation with the quoted root, so any
//! modification of quote or log after signing is rejected without touching
//! the tree.
//!
//! Wire framing: every message is a 4-byte big-endian length prefix plus
//! payload. A request is `0x01 ∥ nonce`; the response is `0x02 ∥ quote ∥
//! log bytes`, with the quote encoding self-delimiting.

use hmac::{Hmac, Mac};
use sha1::Sha1;
use sha2::Sha256;
use std::io::{Read, Write};
use tfv_core::validate::{
    diagnostic_validate, ReferenceTree, ValidateError, ValidationMode, ValidationReport,
};
use tfv_core::{hash_leaf, Digest, HashAlgorithm, RegisterBank, RegisterRole, SmlError, SmlTree};
use thiserror::Error;

const MSG_REQUEST: u8 = 0x01;
const MSG_RESPONSE: u8 = 0x02;
const NONCE_LEN: usize = 16;
const MAX_FRAME: usize = 64 << 20;

/// Why a verifier refused a quote.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum Rejection {
    #[error("authentication tag mismatch")]
    Tag,
    #[error("nonce mismatch")]
    Nonce,
    #[error("log digest mismatch")]
    SmlDigest,
    #[error("quote carries no root register value")]
    NoRoot,
    #[error("malformed quote encoding")]
    MalformedQuote,
    #[error("log rejected: {0}")]
    Sml(#[from] SmlError),
    #[error("validation rejected: {0}")]
    Validate(#[from] ValidateError),
}

/// Errors of the exchange itself.
#[derive(Debug, Error)]
pub enum AttestError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("framing: {0}")]
    Framing(&'static str),
    #[error("quote requires a finalized log")]
    Unfinalized,
    #[error("no tree root register to quote")]
    NoRootRegister,
    #[error("rejected: {0}")]
    Rejected(#[from] Rejection),
}

/// Authenticated statement of the platform's tree root registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub alg: HashAlgorithm,
    pub nonce: [u8; NONCE_LEN],
    /// `(register index, root digest)` for every designated tree root.
    pub roots: Vec<(u32, Digest)>,
    /// Digest of the serialized log bytes.
    pub sml_digest: Digest,
    /// Keyed MAC over everything above.
    pub tag: Vec<u8>,
}

fn mac_tag(alg: HashAlgorithm, secret: &[u8], message: &[u8]) -> Vec<u8> {
    match alg {
        HashAlgorithm::Sha1 => {
            let mut mac =
                Hmac::<Sha1>::new_from_slice(secret).expect("hmac accepts any key length");
            mac.update(message);
            mac.finalize().into_bytes().to_vec()
        }
        HashAlgorithm::Sha256 => {
            let mut mac =
                Hmac::<Sha256>::new_from_slice(secret).expect("hmac accepts any key length");
            mac.update(message);
            mac.finalize().into_bytes().to_vec()
        }
    }
}

fn mac_verify(alg: HashAlgorithm, secret: &[u8], message: &[u8], tag: &[u8]) -> bool {
    match alg {
        HashAlgorithm::Sha1 => {
            let mut mac =
                Hmac::<Sha1>::new_from_slice(secret).expect("hmac accepts any key length");
            mac.update(message);
            mac.verify_slice(tag).is_ok()
        }
        HashAlgorithm::Sha256 => {
            let mut mac =
                Hmac::<Sha256>::new_from_slice(secret).expect("hmac accepts any key length");
            mac.update(message);
            mac.verify_slice(tag).is_ok()
        }
    }
}

impl Quote {
    /// The MAC input: every field in encoding order, tag excluded.
    fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(self.alg.id_byte());
        out.extend_from_slice(&self.nonce);
        out.push(self.roots.len() as u8);
        for (index, digest) in &self.roots {
            out.extend_from_slice(&index.to_be_bytes());
            out.extend_from_slice(digest.as_bytes().expect("root digests are never nil"));
        }
        out.extend_from_slice(self.sml_digest.as_bytes().expect("log digest is never nil"));
        out
    }

    /// Self-delimiting encoding: the signed fields followed by the tag.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend_from_slice(&self.tag);
        out
    }

    /// Decodes a quote from the head of `bytes`, returning the remainder.
    pub fn decode(bytes: &[u8]) -> Result<(Quote, &[u8]), Rejection> {
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], Rejection> {
            let end = cursor.checked_add(n).ok_or(Rejection::MalformedQuote)?;
            if end > bytes.len() {
                return Err(Rejection::MalformedQuote);
            }
            let slice = &bytes[*cursor..end];
            *cursor = end;
            Ok(slice)
        };
        let mut cursor = 0usize;
        let alg = HashAlgorithm::from_id_byte(take(&mut cursor, 1)?[0])
            .ok_or(Rejection::MalformedQuote)?;
        let digest_len = alg.output_len();
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(take(&mut cursor, NONCE_LEN)?);
        let count = take(&mut cursor, 1)?[0] as usize;
        let mut roots = Vec::with_capacity(count);
        for _ in 0..count {
            let index = u32::from_be_bytes(
                take(&mut cursor, 4)?
                    .try_into()
                    .expect("4 bytes requested"),
            );
            let digest = Digest::from_bytes(take(&mut cursor, digest_len)?)
                .map_err(|_| Rejection::MalformedQuote)?;
            roots.push((index, digest));
        }
        let sml_digest = Digest::from_bytes(take(&mut cursor, digest_len)?)
            .map_err(|_| Rejection::MalformedQuote)?;
        let tag = take(&mut cursor, digest_len)?.to_vec();
        Ok((
            Quote {
                alg,
                nonce,
                roots,
                sml_digest,
                tag,
            },
            &bytes[cursor..],
        ))
    }
}

/// Builds a quote over the bank's tree root registers and a finalized log.
pub fn make_quote(
    bank: &RegisterBank,
    sml: &SmlTree,
    nonce: [u8; NONCE_LEN],
    secret: &[u8],
) -> Result<Quote, AttestError> {
    if sml.root_record().is_none() {
        return Err(AttestError::Unfinalized);
    }
    let alg = bank.hash_alg();
    let mut roots = Vec::new();
    for index in 0..bank.len() {
        let register = bank.register(index).expect("index in range");
        if matches!(
            register.role(),
            RegisterRole::Locked | RegisterRole::TreeRoot
        ) && !register.value().is_nil()
        {
            roots.push((index as u32, register.value()));
        }
    }
    if roots.is_empty() {
        return Err(AttestError::NoRootRegister);
    }
    let sml_digest = hash_leaf(&sml.serialize(), alg);
    let mut quote = Quote {
        alg,
        nonce,
        roots,
        sml_digest,
        tag: Vec::new(),
    };
    quote.tag = mac_tag(alg, secret, &quote.signed_bytes());
    Ok(quote)
}

/// Verifies a quote against the expected nonce and the received log bytes,
/// then runs diagnostic validation with the quoted root.
///
/// Checks run cheapest-first: tag, nonce, log digest. Any failure rejects
/// the exchange before the tree is examined.
pub fn verify_quote(
    quote: &Quote,
    expected_nonce: &[u8; NONCE_LEN],
    secret: &[u8],
    sml_bytes: &[u8],
    reference: &ReferenceTree,
) -> Result<ValidationReport, Rejection> {
    if !mac_verify(quote.alg, secret, &quote.signed_bytes(), &quote.tag) {
        return Err(Rejection::Tag);
    }
    if &quote.nonce != expected_nonce {
        return Err(Rejection::Nonce);
    }
    if hash_leaf(sml_bytes, quote.alg) != quote.sml_digest {
        return Err(Rejection::SmlDigest);
    }
    let sml = SmlTree::deserialize(sml_bytes)?;
    let (_, claimed_root) = quote.roots.first().ok_or(Rejection::NoRoot)?;
    Ok(diagnostic_validate(
        &sml,
        claimed_root,
        reference,
        ValidationMode::Standard,
    )?)
}

fn write_frame<C: Write>(channel: &mut C, payload: &[u8]) -> Result<(), AttestError> {
    if payload.len() > MAX_FRAME {
        return Err(AttestError::Framing("oversized frame"));
    }
    channel.write_all(&(payload.len() as u32).to_be_bytes())?;
    channel.write_all(payload)?;
    channel.flush()?;
    Ok(())
}

fn read_frame<C: Read>(channel: &mut C) -> Result<Vec<u8>, AttestError> {
    let mut len_bytes = [0u8; 4];
    channel.read_exact(&mut len_bytes)?;
    let len = u32::from_be_bytes(len_bytes) as usize;
    if len > MAX_FRAME {
        return Err(AttestError::Framing("oversized frame"));
    }
    let mut payload = vec![0u8; len];
    channel.read_exact(&mut payload)?;
    Ok(payload)
}

/// Serves one challenge-response session: reads a nonce request, answers
/// with the quote and the log bytes.
pub fn serve<C: Read + Write>(
    mut channel: C,
    bank: &RegisterBank,
    sml: &SmlTree,
    secret: &[u8],
) -> Result<(), AttestError> {
    let request = read_frame(&mut channel)?;
    if request.len() != 1 + NONCE_LEN || request[0] != MSG_REQUEST {
        return Err(AttestError::Framing("bad request message"));
    }
    let mut nonce = [0u8; NONCE_LEN];
    nonce.copy_from_slice(&request[1..]);
    let quote = make_quote(bank, sml, nonce, secret)?;
    let mut response = vec![MSG_RESPONSE];
    response.extend_from_slice(&quote.encode());
    response.extend_from_slice(&sml.serialize());
    write_frame(&mut channel, &response)
}

/// Runs one challenge-response round as the verifier and validates the
/// returned log against `reference`.
pub fn request<C: Read + Write>(
    mut channel: C,
    nonce: [u8; NONCE_LEN],
    secret: &[u8],
    reference: &ReferenceTree,
) -> Result<ValidationReport, AttestError> {
    let mut message = vec![MSG_REQUEST];
    message.extend_from_slice(&nonce);
    write_frame(&mut channel, &message)?;
    let response = read_frame(&mut channel)?;
    if response.is_empty() || response[0] != MSG_RESPONSE {
        return Err(AttestError::Framing("bad response message"));
    }
    let (quote, sml_bytes) = Quote::decode(&response[1..]).map_err(AttestError::Rejected)?;
    Ok(verify_quote(&quote, &nonce, secret, sml_bytes, reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tfv_core::validate::build_reference;

    const ALG: HashAlgorithm = HashAlgorithm::Sha1;
    const SECRET: &[u8] = b"pre-shared test secret";

    fn leaves(n: u64) -> Vec<Digest> {
        (0..n).map(|i| hash_leaf(&[i as u8], ALG)).collect()
    }

    fn quoted_setup(n: u64, depth: u32) -> (RegisterBank, SmlTree) {
        let mut bank = RegisterBank::new(depth as usize, ALG);
        bank.tree_begin(0, depth, 2).unwrap();
        let mut sml = SmlTree::new(ALG, 2, depth);
        for leaf in leaves(n) {
            for record in bank.tree_extend(0, &leaf).unwrap() {
                sml.append(record).unwrap();
            }
        }
        if !sml.is_sealed() {
            for record in bank.tree_finalize(0).unwrap() {
                sml.append(record).unwrap();
            }
        }
        (bank, sml)
    }

    #[test]
    fn quote_round_trip_verifies() {
        let (bank, sml) = quoted_setup(4, 2);
        let reference = build_reference(&leaves(4), 2, ALG).unwrap();
        let nonce = [7u8; NONCE_LEN];
        let quote = make_quote(&bank, &sml, nonce, SECRET).unwrap();
        let report =
            verify_quote(&quote, &nonce, SECRET, &sml.serialize(), &reference).unwrap();
        assert_eq!(report.outcome, tfv_core::Outcome::Clean);
    }

    #[test]
    fn replayed_quote_fails_the_nonce_check() {
        let (bank, sml) = quoted_setup(4, 2);
        let reference = build_reference(&leaves(4), 2, ALG).unwrap();
        let quote = make_quote(&bank, &sml, [7u8; NONCE_LEN], SECRET).unwrap();
        let err = verify_quote(&quote, &[8u8; NONCE_LEN], SECRET, &sml.serialize(), &reference)
            .unwrap_err();
        assert_eq!(err, Rejection::Nonce);
    }

    #[test]
    fn wrong_secret_fails_the_tag_check() {
        let (bank, sml) = quoted_setup(4, 2);
        let reference = build_reference(&leaves(4), 2, ALG).unwrap();
        let nonce = [7u8; NONCE_LEN];
        let quote = make_quote(&bank, &sml, nonce, SECRET).unwrap();
        let err = verify_quote(&quote, &nonce, b"other secret", &sml.serialize(), &reference)
            .unwrap_err();
        assert_eq!(err, Rejection::Tag);
    }

    #[test]
    fn modified_log_bytes_are_rejected_before_traversal() {
        let (bank, sml) = quoted_setup(4, 2);
        let reference = build_reference(&leaves(4), 2, ALG).unwrap();
        let nonce = [7u8; NONCE_LEN];
        let quote = make_quote(&bank, &sml, nonce, SECRET).unwrap();
        let mut bytes = sml.serialize();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        let err = verify_quote(&quote, &nonce, SECRET, &bytes, &reference).unwrap_err();
        assert_eq!(err, Rejection::SmlDigest);
    }

    #[test]
    fn quoted_root_inconsistent_with_log_is_a_root_exception() {
        let (bank, sml) = quoted_setup(4, 2);
        let reference = build_reference(&leaves(4), 2, ALG).unwrap();
        let nonce = [9u8; NONCE_LEN];
        let mut quote = make_quote(&bank, &sml, nonce, SECRET).unwrap();
        quote.roots[0].1 = hash_leaf(b"forged root", ALG);
        quote.tag = mac_tag(ALG, SECRET, &quote.signed_bytes());
        let report =
            verify_quote(&quote, &nonce, SECRET, &sml.serialize(), &reference).unwrap();
        assert_eq!(report.outcome, tfv_core::Outcome::Tampered);
        assert!(report
            .manipulation_exceptions
            .contains(&tfv_core::EdgePath::root()));
    }

    #[test]
    fn unfinalized_log_cannot_be_quoted() {
        let mut bank = RegisterBank::new(2, ALG);
        bank.tree_begin(0, 2, 2).unwrap();
        let mut sml = SmlTree::new(ALG, 2, 2);
        for record in bank.tree_extend(0, &hash_leaf(b"x", ALG)).unwrap() {
            sml.append(record).unwrap();
        }
        assert!(matches!(
            make_quote(&bank, &sml, [0u8; NONCE_LEN], SECRET),
            Err(AttestError::Unfinalized)
        ));
    }

    #[test]
    fn quote_encoding_round_trips() {
        let (bank, sml) = quoted_setup(3, 2);
        let quote = make_quote(&bank, &sml, [3u8; NONCE_LEN], SECRET).unwrap();
        let mut encoded = quote.encode();
        encoded.extend_from_slice(b"rest");
        let (decoded, rest) = Quote::decode(&encoded).unwrap();
        assert_eq!(decoded, quote);
        assert_eq!(rest, b"rest");
        assert_eq!(Quote::decode(&encoded[..5]), Err(Rejection::MalformedQuote));
    }
}
