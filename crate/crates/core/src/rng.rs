//! Counter-based random streams.
//!
//! Every random quantity in the crate is a pure function of a seed and a
//! tuple of counters, so results do not depend on evaluation order or on
//! the number of worker threads.

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a tuple of counters into one well-mixed 64-bit key.
#[inline]
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x243f_6a88_85a3_08d3, |h, &k| splitmix64(h ^ splitmix64(k)))
}

/// Stable 64-bit FNV-1a hash of a name.
pub fn name_key(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform in `[0, 1)` from a counter tuple.
#[inline]
pub fn uniform(keys: &[u64]) -> f64 {
    (mix(keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
