//! Small shared helpers.

/// SplitMix64 step; used to derive independent sub-seeds from a master seed
/// without coupling the consuming RNG streams.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Canonical float formatting: shortest representation that round-trips,
/// so emitted tables re-parse byte-identically.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
