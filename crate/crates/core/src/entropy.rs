// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Pluggable entropy sources for seeding and reseeding.

use std::collections::VecDeque;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntropyError {
    #[error("entropy source failed: {0}")]
    Failed(String),
}

/// Anything that can hand out seed material.
///
/// `fill` returns how many bytes of `dest` it filled; a short fill is not an
/// error at this layer, callers decide whether it is enough.
pub trait EntropySource {
    fn fill(&mut self, dest: &mut [u8]) -> Result<usize, EntropyError>;
}

impl<E: EntropySource + ?Sized> EntropySource for &mut E {
    fn fill(&mut self, dest: &mut [u8]) -> Result<usize, EntropyError> {
        (**self).fill(dest)
    }
}

impl<E: EntropySource + ?Sized> EntropySource for Box<E> {
    fn fill(&mut self, dest: &mut [u8]) -> Result<usize, EntropyError> {
        (**self).fill(dest)
    }
}

/// Operating-system entropy (`getrandom`).
#[cfg(feature = "os-entropy")]
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemEntropy;

#[cfg(feature = "os-entropy")]
impl EntropySource for SystemEntropy {
    fn fill(&mut self, dest: &mut [u8]) -> Result<usize, EntropyError> {
        getrandom::fill(dest).map_err(|e| EntropyError::Failed(e.to_string()))?;
        Ok(dest.len())
    }
}

/// Deterministic ChaCha20 stream; the simulator gives each guest one.
#[derive(Debug, Clone)]
pub struct SeededEntropy(ChaCha20Rng);

impl SeededEntropy {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        SeededEntropy(ChaCha20Rng::from_seed(seed))
    }

    pub fn from_u64(seed: u64) -> Self {
        SeededEntropy(ChaCha20Rng::seed_from_u64(seed))
    }
}

impl EntropySource for SeededEntropy {
    fn fill(&mut self, dest: &mut [u8]) -> Result<usize, EntropyError> {
        self.0.fill_bytes(dest);
        Ok(dest.len())
    }
}

/// Replays a fixed list of chunks, one per call. Used for known-answer
/// tests and for modelling a starved source.
#[derive(Debug, Clone, Default)]
pub struct FixedEntropy {
    chunks: VecDeque<Vec<u8>>,
}

impl FixedEntropy {
    pub fn new<I, B>(chunks: I) -> Self
    where
        I: IntoIterator<Item = B>,
        B: Into<Vec<u8>>,
    {
        FixedEntropy {
            chunks: chunks.into_iter().map(Into::into).collect(),
        }
    }
}

impl EntropySource for FixedEntropy {
    fn fill(&mut self, dest: &mut [u8]) -> Result<usize, EntropyError> {
        let Some(chunk) = self.chunks.pop_front() else {
            return Ok(0);
        };
        let n = chunk.len().min(dest.len());
        dest[..n].copy_from_slice(&chunk[..n]);
        Ok(n)
    }
}

/// Wraps a source and counts calls into it.
#[derive(Debug, Clone)]
pub struct CountingEntropy<E> {
    inner: E,
    calls: u64,
}

impl<E> CountingEntropy<E> {
    pub fn new(inner: E) -> Self {
        CountingEntropy { inner, calls: 0 }
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

impl<E: EntropySource> EntropySource for CountingEntropy<E> {
    fn fill(&mut self, dest: &mut [u8]) -> Result<usize, EntropyError> {
        self.calls += 1;
        self.inner.fill(dest)
    }
}
