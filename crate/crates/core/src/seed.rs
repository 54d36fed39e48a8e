//! Deterministic seed fan-out.
//!
//! Every random stream in a run is keyed by `(master seed, component, id,
//! index)`, so results never depend on which thread ran which worker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(component, id, index)` under `master`.
pub fn derive(master: u64, component: &str, id: u64, index: u64) -> u64 {
    let mut h = splitmix64(master ^ fnv1a(component.as_bytes()));
    h = splitmix64(h ^ id.wrapping_mul(0xd1b5_4a32_d192_ed03));
    splitmix64(h ^ index.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7))
}

/// Generator for the stream keyed by `(component, id, index)`.
pub fn stream(master: u64, component: &str, id: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive(master, component, id, index))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
