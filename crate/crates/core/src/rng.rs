//! Deterministic random streams keyed by integer coordinates.
//!
//! Every consumer derives its own generator from `(seed, domain, ...)`, so
//! adding a view or an image never shifts another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream domains. Distinct tags keep unrelated consumers apart.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Batch = 2,
    Crop = 3,
    Color = 4,
    Caption = 5,
    Mask = 6,
    Synth = 7,
    Eval = 8,
}

pub fn derive(seed: u64, domain: Domain, coords: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(domain as u64));
    for &c in coords {
        h = splitmix(h ^ splitmix(c.wrapping_add(0x51_7CC1_B727_220A)));
    }
    h
}

pub fn stream(seed: u64, domain: Domain, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, domain, coords))
}

/// Standard normal draw via Box-Muller.
pub fn normal(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
