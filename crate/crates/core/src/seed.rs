//! Keyed seed derivation.
//!
//! Every random decision in the pipeline draws from its own generator,
//! seeded from the global seed plus a key (image id, repetition index and a
//! purpose tag). Results therefore do not depend on processing order or on
//! the number of workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Purpose tags keep streams for different decisions independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Variant,
    Shuffle,
    Mask,
    Downsample,
    Visual,
}

impl Stream {
    fn tag(self) -> &'static [u8] {
        match self {
            Stream::Variant => b"variant",
            Stream::Shuffle => b"shuffle",
            Stream::Mask => b"mask",
            Stream::Downsample => b"downsample",
            Stream::Visual => b"visual",
        }
    }
}

/// 32-byte digest of `(seed, stream, parts...)`. Parts are length-prefixed so
/// that `("ab", "c")` and `("a", "bc")` never collide.
pub fn digest(seed: u64, stream: Stream, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    let tag = stream.tag();
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag);
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub fn rng_for(seed: u64, stream: Stream, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, stream, parts))
}

/// Generator for one `(image, repetition)` unit.
pub fn unit_rng(seed: u64, stream: Stream, image_id: &str, repetition: u32) -> ChaCha8Rng {
    rng_for(
        seed,
        stream,
        &[image_id.as_bytes(), &repetition.to_le_bytes()],
    )
}
