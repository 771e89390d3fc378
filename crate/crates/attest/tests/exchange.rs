//! Loopback attestation sessions and robustness of the exchange encoding.

use std::net::{TcpListener, TcpStream};
use std::thread;
use tfv_attest::{make_quote, request, serve, verify_quote, AttestError, Quote, Rejection};
use tfv_core::validate::{build_reference, ReferenceTree};
use tfv_core::{hash_leaf, Digest, HashAlgorithm, Outcome, RegisterBank, SmlTree};

const ALG: HashAlgorithm = HashAlgorithm::Sha1;
const SECRET: &[u8] = b"loopback exchange secret";

fn leaves(n: u64) -> Vec<Digest> {
    (0..n).map(|i| hash_leaf(&[i as u8], ALG)).collect()
}

fn platform(measurements: &[Digest], depth: u32) -> (RegisterBank, SmlTree) {
    let mut bank = RegisterBank::new(depth as usize, ALG);
    bank.tree_begin(0, depth, 2).unwrap();
    let mut sml = SmlTree::new(ALG, 2, depth);
    for m in measurements {
        for record in bank.tree_extend(0, m).unwrap() {
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

fn loopback_round(
    measurements: Vec<Digest>,
    depth: u32,
    reference: ReferenceTree,
) -> Result<tfv_core::ValidationReport, AttestError> {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (bank, sml) = platform(&measurements, depth);
        let (stream, _) = listener.accept().unwrap();
        serve(stream, &bank, &sml, SECRET)
    });
    let stream = TcpStream::connect(addr).unwrap();
    let nonce = [0x5au8; 16];
    let report = request(stream, nonce, SECRET, &reference);
    server.join().unwrap().unwrap();
    report
}

#[test]
fn honest_loopback_round_is_clean() {
    let ls = leaves(6);
    let reference = build_reference(&ls, 3, ALG).unwrap();
    let report = loopback_round(ls, 3, reference).unwrap();
    assert_eq!(report.outcome, Outcome::Clean);
    assert_eq!(report.hash_op_count, 0);
}

#[test]
fn stale_reference_names_the_changed_component() {
    let ls = leaves(6);
    let mut stale = ls.clone();
    stale[2] = hash_leaf(b"old version of component 2", ALG);
    let reference = build_reference(&stale, 3, ALG).unwrap();
    let report = loopback_round(ls, 3, reference).unwrap();
    assert_eq!(report.outcome, Outcome::FailuresFound);
    assert_eq!(
        report.failed_leaves.iter().copied().collect::<Vec<u64>>(),
        vec![2]
    );
    assert!(report.manipulation_exceptions.is_empty());
}

#[test]
fn truncated_response_is_a_framing_or_io_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        use std::io::{Read, Write};
        let (mut stream, _) = listener.accept().unwrap();
        let mut request_buf = [0u8; 21];
        stream.read_exact(&mut request_buf).unwrap();
        // Claim a 100-byte frame but send only 3 bytes.
        stream.write_all(&100u32.to_be_bytes()).unwrap();
        stream.write_all(&[0x02, 0x01, 0x00]).unwrap();
    });
    let stream = TcpStream::connect(addr).unwrap();
    let reference = build_reference(&leaves(2), 1, ALG).unwrap();
    let err = request(stream, [0u8; 16], SECRET, &reference).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, AttestError::Io(_) | AttestError::Framing(_)));
}

#[test]
fn wrong_message_type_is_a_framing_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        use std::io::{Read, Write};
        let (mut stream, _) = listener.accept().unwrap();
        let mut request_buf = [0u8; 21];
        stream.read_exact(&mut request_buf).unwrap();
        stream.write_all(&1u32.to_be_bytes()).unwrap();
        stream.write_all(&[0x7f]).unwrap();
    });
    let stream = TcpStream::connect(addr).unwrap();
    let reference = build_reference(&leaves(2), 1, ALG).unwrap();
    let err = request(stream, [0u8; 16], SECRET, &reference).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, AttestError::Framing(_)));
}

/// Any single bit flip in the response payload (quote or log bytes) is
/// rejected — never reported clean.
#[test]
fn single_bit_flips_never_verify_clean() {
    let ls = leaves(4);
    let (bank, sml) = platform(&ls, 2);
    let reference = build_reference(&ls, 2, ALG).unwrap();
    let nonce = [0x33u8; 16];
    let quote = make_quote(&bank, &sml, nonce, SECRET).unwrap();
    let mut payload = quote.encode();
    let quote_len = payload.len();
    payload.extend_from_slice(&sml.serialize());

    // Sanity: the unmodified payload verifies clean.
    let (q, rest) = Quote::decode(&payload).unwrap();
    assert_eq!(
        verify_quote(&q, &nonce, SECRET, rest, &reference)
            .unwrap()
            .outcome,
        Outcome::Clean
    );

    for bit in 0..payload.len() * 8 {
        let mut mutated = payload.clone();
        mutated[bit / 8] ^= 1 << (bit % 8);
        let verdict = match Quote::decode(&mutated) {
            Ok((q, rest)) => verify_quote(&q, &nonce, SECRET, rest, &reference),
            Err(e) => Err(e),
        };
        match verdict {
            Err(_) => {}
            Ok(report) => panic!(
                "bit {bit} (in {}) verified with outcome {:?}",
                if bit / 8 < quote_len { "quote" } else { "log" },
                report.outcome
            ),
        }
    }
}

#[test]
fn verify_rejects_shape_mismatch_as_rejection() {
    let ls = leaves(4);
    let (bank, sml) = platform(&ls, 2);
    let reference = build_reference(&ls, 3, ALG).unwrap();
    let nonce = [1u8; 16];
    let quote = make_quote(&bank, &sml, nonce, SECRET).unwrap();
    let err = verify_quote(&quote, &nonce, SECRET, &sml.serialize(), &reference).unwrap_err();
    assert!(matches!(err, Rejection::Validate(_)));
}
