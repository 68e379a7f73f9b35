//! Numerical laboratory for randomly phase-shifted alternating shear flows
//! on the 2-torus: exact transport, split-step spectral advection-diffusion,
//! mixing-rate and dissipation-time estimators, two-point chain drift
//! diagnostics and closed-form dissipation-time bounds.

pub mod advdiff;
pub mod bounds;
pub mod error;
pub mod flow;
pub mod mixmeter;
pub mod profile;
pub mod spectral;
pub mod transport;
pub mod twopoint;

pub use error::{Error, Result};

/// A point of the torus `[0, 2π)²`.
pub type Point = [f64; 2];

/// Seed for sample `index` of stream `stream`, derived from `master` by
/// SplitMix64 finalisation so nearby inputs give unrelated seeds.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master;
    for v in [stream, index] {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(v.wrapping_mul(0xd1b5_4a32_d192_ed03));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
