// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{parse_rsp, run_vector, NO_RESEED_RSP, RESEED_RSP};

fn check_file(text: &str, with_reseed: bool) {
    let vectors = parse_rsp(text);
    assert_eq!(vectors.len(), 240);
    for v in &vectors {
        assert_eq!(v.entropy_reseed.is_some(), with_reseed);
        assert_eq!(v.additional.len(), 2);
        let got = run_vector(v).unwrap_or_else(|e| panic!("COUNT {}: {e}", v.count));
        assert_eq!(
            hex::encode(&got),
            hex::encode(&v.returned),
            "COUNT {} mismatch",
            v.count
        );
    }
}

#[test]
fn reseed_vectors() {
    check_file(RESEED_RSP, true);
}

#[test]
fn no_reseed_vectors() {
    check_file(NO_RESEED_RSP, false);
}

#[test]
fn vectors_cover_optional_inputs() {
    let all: Vec<_> = parse_rsp(RESEED_RSP)
        .into_iter()
        .chain(parse_rsp(NO_RESEED_RSP))
        .collect();
    assert!(all.iter().any(|v| !v.personalization.is_empty()));
    assert!(all.iter().any(|v| !v.additional[0].is_empty()));
    assert!(all.iter().any(|v| !v.additional_reseed.is_empty()));
}

#[test]
fn corrupted_entropy_changes_output() {
    let mut v = parse_rsp(RESEED_RSP).remove(0);
    v.entropy[0] ^= 1;
    assert_ne!(run_vector(&v).unwrap(), v.returned);
}
