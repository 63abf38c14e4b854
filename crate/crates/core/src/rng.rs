//! Deterministic random substreams.
//!
//! Every unit of Monte Carlo work (a replication, a realization batch, a
//! dataset) gets its own ChaCha8 generator whose 256-bit key is derived from
//! the master seed and an integer path such as `[domain, grid_index, rep]`.
//! Results therefore depend only on that path, never on which thread ran the
//! work or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep substreams of different subsystems apart.
pub mod domain {
    pub const SIMULATE: u64 = 0x5349_4d55;
    pub const RISK: u64 = 0x5249_534b;
    pub const SELECTION: u64 = 0x5345_4c45;
    pub const COVARIANCE: u64 = 0x434f_5641;
    pub const BOUNDS: u64 = 0x424f_554e;
    pub const DESIGN: u64 = 0x4445_5349;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 32-byte key for `(master, path)`.
pub fn derive_key(master: u64, path: &[u64]) -> [u8; 32] {
    let mut state = master;
    let mut acc = splitmix64(&mut state);
    for (i, &p) in path.iter().enumerate() {
        state ^= p
            .wrapping_mul(0xd6e8_feb8_6659_fd93)
            .rotate_left(i as u32 % 64);
        acc ^= splitmix64(&mut state);
    }
    state ^= path.len() as u64;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        acc = acc.wrapping_add(splitmix64(&mut state));
        chunk.copy_from_slice(&acc.to_le_bytes());
    }
    key
}

pub fn substream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(master, path))
}
