// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! CTR_DRBG (SP 800-90A) with AES-128, no derivation function and no
//! prediction resistance.
//!
//! Without a derivation function the seed material is exactly `seedlen`
//! (32) bytes of entropy, XORed with the personalization string or
//! additional input zero-padded to the same length.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use thiserror::Error;

pub const KEY_LEN: usize = 16;
pub const BLOCK_LEN: usize = 16;
pub const SEED_LEN: usize = KEY_LEN + BLOCK_LEN;

pub const MAX_RESEED_INTERVAL: u64 = 1 << 48;
/// 2^19 bits per request.
pub const MAX_REQUEST_BYTES: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DrbgError {
    #[error("entropy input must be {SEED_LEN} bytes, got {0}")]
    BadEntropyLength(usize),
    #[error("{what} is {len} bytes, limit is {SEED_LEN}")]
    InputTooLong { what: &'static str, len: usize },
    #[error("reseed required")]
    ReseedRequired,
    #[error("request of {0} bytes exceeds {MAX_REQUEST_BYTES}")]
    RequestTooLarge(usize),
    #[error("reseed interval {0} outside 1..=2^48")]
    BadReseedInterval(u64),
}

/// Internal working state.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct DrbgState {
    pub key: [u8; KEY_LEN],
    pub v: [u8; BLOCK_LEN],
    pub reseed_counter: u64,
}

impl std::fmt::Debug for DrbgState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DrbgState")
            .field("reseed_counter", &self.reseed_counter)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct CtrDrbg {
    state: DrbgState,
    reseed_interval: u64,
    cipher: Aes128,
}

impl std::fmt::Debug for CtrDrbg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CtrDrbg")
            .field("reseed_counter", &self.state.reseed_counter)
            .field("reseed_interval", &self.reseed_interval)
            .finish_non_exhaustive()
    }
}

fn increment_be(block: &mut [u8; BLOCK_LEN]) {
    let n = u128::from_be_bytes(*block).wrapping_add(1);
    *block = n.to_be_bytes();
}

fn padded(input: &[u8], what: &'static str) -> Result<[u8; SEED_LEN], DrbgError> {
    if input.len() > SEED_LEN {
        return Err(DrbgError::InputTooLong {
            what,
            len: input.len(),
        });
    }
    let mut out = [0u8; SEED_LEN];
    out[..input.len()].copy_from_slice(input);
    Ok(out)
}

fn xor_into(dst: &mut [u8; SEED_LEN], src: &[u8; SEED_LEN]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

impl CtrDrbg {
    pub fn instantiate(entropy_input: &[u8], personalization: &[u8]) -> Result<Self, DrbgError> {
        Self::instantiate_with_interval(entropy_input, personalization, MAX_RESEED_INTERVAL)
    }

    pub fn instantiate_with_interval(
        entropy_input: &[u8],
        personalization: &[u8],
        reseed_interval: u64,
    ) -> Result<Self, DrbgError> {
        if reseed_interval == 0 || reseed_interval > MAX_RESEED_INTERVAL {
            return Err(DrbgError::BadReseedInterval(reseed_interval));
        }
        if entropy_input.len() != SEED_LEN {
            return Err(DrbgError::BadEntropyLength(entropy_input.len()));
        }
        let mut seed_material = padded(personalization, "personalization string")?;
        xor_into(&mut seed_material, &padded(entropy_input, "entropy input")?);

        let mut drbg = CtrDrbg {
            state: DrbgState {
                key: [0; KEY_LEN],
                v: [0; BLOCK_LEN],
                reseed_counter: 1,
            },
            reseed_interval,
            cipher: Aes128::new(&GenericArray::from([0u8; KEY_LEN])),
        };
        drbg.update(&seed_material);
        Ok(drbg)
    }

    /// Rebuilds a generator from previously captured state.
    pub fn from_state(state: DrbgState, reseed_interval: u64) -> Result<Self, DrbgError> {
        if reseed_interval == 0 || reseed_interval > MAX_RESEED_INTERVAL {
            return Err(DrbgError::BadReseedInterval(reseed_interval));
        }
        Ok(CtrDrbg {
            cipher: Aes128::new(&GenericArray::from(state.key)),
            state,
            reseed_interval,
        })
    }

    pub fn state(&self) -> DrbgState {
        self.state
    }

    pub fn reseed_interval(&self) -> u64 {
        self.reseed_interval
    }

    pub fn reseed(&mut self, entropy_input: &[u8], additional: &[u8]) -> Result<(), DrbgError> {
        if entropy_input.len() != SEED_LEN {
            return Err(DrbgError::BadEntropyLength(entropy_input.len()));
        }
        let mut seed_material = padded(additional, "additional input")?;
        xor_into(&mut seed_material, &padded(entropy_input, "entropy input")?);
        self.update(&seed_material);
        self.state.reseed_counter = 1;
        Ok(())
    }

    /// Fills `out` (at most [`MAX_REQUEST_BYTES`]). Fails with
    /// [`DrbgError::ReseedRequired`] once the reseed interval is exhausted.
    pub fn generate(&mut self, out: &mut [u8], additional: &[u8]) -> Result<(), DrbgError> {
        if out.len() > MAX_REQUEST_BYTES {
            return Err(DrbgError::RequestTooLarge(out.len()));
        }
        if self.state.reseed_counter > self.reseed_interval {
            return Err(DrbgError::ReseedRequired);
        }
        let additional = if additional.is_empty() {
            [0u8; SEED_LEN]
        } else {
            let a = padded(additional, "additional input")?;
            self.update(&a);
            a
        };
        for chunk in out.chunks_mut(BLOCK_LEN) {
            increment_be(&mut self.state.v);
            let mut block = GenericArray::from(self.state.v);
            self.cipher.encrypt_block(&mut block);
            chunk.copy_from_slice(&block[..chunk.len()]);
        }
        self.update(&additional);
        self.state.reseed_counter += 1;
        Ok(())
    }

    fn update(&mut self, provided: &[u8; SEED_LEN]) {
        let mut temp = [0u8; SEED_LEN];
        for chunk in temp.chunks_mut(BLOCK_LEN) {
            increment_be(&mut self.state.v);
            let mut block = GenericArray::from(self.state.v);
            self.cipher.encrypt_block(&mut block);
            chunk.copy_from_slice(&block);
        }
        xor_into(&mut temp, provided);
        self.state.key.copy_from_slice(&temp[..KEY_LEN]);
        self.state.v.copy_from_slice(&temp[KEY_LEN..]);
        self.cipher = Aes128::new(&GenericArray::from(self.state.key));
        temp.fill(0);
    }
}

impl Drop for CtrDrbg {
    fn drop(&mut self) {
        self.state.key.fill(0);
        self.state.v.fill(0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unhex(s: &str) -> Vec<u8> {
        hex::decode(s).unwrap()
    }

    // First vector of the no-reseed AES-128 no-df CAVP set.
    #[test]
    fn known_answer_no_reseed() {
        let entropy = unhex("ce50f33da5d4c1d3d4004eb35244b7f2cd7f2e5076fbf6780a7ff634b249a5fc");
        let expected = unhex(
            "6545c0529d372443b392ceb3ae3a99a30f963eaf313280f1d1a1e87f9db373d3\
             61e75d18018266499cccd64d9bbb8de0185f213383080faddec46bae1f784e5a",
        );
        let mut drbg = CtrDrbg::instantiate(&entropy, &[]).unwrap();
        let mut out = [0u8; 64];
        drbg.generate(&mut out, &[]).unwrap();
        drbg.generate(&mut out, &[]).unwrap();
        assert_eq!(out.to_vec(), expected);
        assert_eq!(drbg.state().reseed_counter, 3);
    }

    #[test]
    fn known_answer_with_reseed() {
        let entropy = unhex("ed1e7f21ef66ea5d8e2a85b9337245445b71d6393a4eecb0e63c193d0f72f9a9");
        let reseed = unhex("303fb519f0a4e17d6df0b6426aa0ecb2a36079bd48be47ad2a8dbfe48da3efad");
        let expected = unhex(
            "f80111d08e874672f32f42997133a5210f7a9375e22cea70587f9cfafebe0f6a\
             6aa2eb68e7dd9164536d53fa020fcab20f54caddfab7d6d91e5ffec1dfd8deaa",
        );
        let mut drbg = CtrDrbg::instantiate(&entropy, &[]).unwrap();
        drbg.reseed(&reseed, &[]).unwrap();
        assert_eq!(drbg.state().reseed_counter, 1);
        let mut out = [0u8; 64];
        drbg.generate(&mut out, &[]).unwrap();
        drbg.generate(&mut out, &[]).unwrap();
        assert_eq!(out.to_vec(), expected);
    }

    #[test]
    fn entropy_length_is_checked() {
        assert_eq!(
            CtrDrbg::instantiate(&[0u8; 8], &[]).unwrap_err(),
            DrbgError::BadEntropyLength(8)
        );
        assert!(matches!(
            CtrDrbg::instantiate(&[0u8; 32], &[0u8; 33]),
            Err(DrbgError::InputTooLong { .. })
        ));
    }

    #[test]
    fn reseed_interval_enforced() {
        let mut drbg = CtrDrbg::instantiate_with_interval(&[7u8; 32], &[], 2).unwrap();
        let mut out = [0u8; 16];
        drbg.generate(&mut out, &[]).unwrap();
        drbg.generate(&mut out, &[]).unwrap();
        assert_eq!(drbg.generate(&mut out, &[]), Err(DrbgError::ReseedRequired));
        drbg.reseed(&[8u8; 32], &[]).unwrap();
        drbg.generate(&mut out, &[]).unwrap();
    }

    #[test]
    fn empty_request_advances_state() {
        let mut drbg = CtrDrbg::instantiate(&[1u8; 32], &[]).unwrap();
        let before = drbg.state();
        drbg.generate(&mut [], &[]).unwrap();
        let after = drbg.state();
        assert_eq!(after.reseed_counter, before.reseed_counter + 1);
        assert_ne!(after.key, before.key);
    }

    #[test]
    fn oversize_request_rejected() {
        let mut drbg = CtrDrbg::instantiate(&[1u8; 32], &[]).unwrap();
        let mut big = vec![0u8; MAX_REQUEST_BYTES + 1];
        assert_eq!(
            drbg.generate(&mut big, &[]),
            Err(DrbgError::RequestTooLarge(MAX_REQUEST_BYTES + 1))
        );
    }

    #[test]
    fn state_round_trip_continues_stream() {
        let mut a = CtrDrbg::instantiate(&[3u8; 32], b"p").unwrap();
        let mut b = CtrDrbg::from_state(a.state(), a.reseed_interval()).unwrap();
        let (mut x, mut y) = ([0u8; 48], [0u8; 48]);
        a.generate(&mut x, &[]).unwrap();
        b.generate(&mut y, &[]).unwrap();
        assert_eq!(x, y);
    }
}
