//! Counter-based randomness.
//!
//! Every variate is a pure function of a chain of 64-bit words, so particles,
//! replicas and workers can draw in any order without shared state, and a
//! fixed `(seed, key sequence)` reproduces bit-identical values across runs.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const BRIDGE_TAG: u64 = 0x6272_6964_6765_0001;
const FORWARD_TAG: u64 = 0x666f_7277_6172_0001;
const UNIFORM_TAG: u64 = 0x756e_6966_6f72_0001;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `word` into `state`.
#[inline]
pub fn mix(state: u64, word: u64) -> u64 {
    splitmix(state ^ splitmix(word))
}

/// Seed for replica `index` derived from a base seed. Extending the replica
/// count extends the sample; it never reshuffles earlier replicas.
#[inline]
pub fn replica_seed(base: u64, index: u64) -> u64 {
    mix(base, index)
}

/// Uniform in (0, 1].
#[inline]
fn uniform_open(key: u64) -> f64 {
    (((key >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform in [0, 1).
#[inline]
pub fn uniform(key: u64) -> f64 {
    ((key >> 11) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal variate keyed by `key` (Box-Muller, cosine branch).
#[inline]
pub fn standard_normal(key: u64) -> f64 {
    let u1 = uniform_open(key);
    let u2 = uniform_open(splitmix(key ^ 0xd1b5_4a32_d192_ed03));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Normal draw for a forward step of a path driver at knot time `t_bits`.
#[inline]
pub fn forward_normal(seed: u64, particle: u64, t_bits: u64) -> f64 {
    standard_normal(mix(mix(mix(seed, particle), t_bits), FORWARD_TAG))
}

/// Normal draw for a bridge insertion at time `t_bits`.
#[inline]
pub fn bridge_normal(seed: u64, particle: u64, t_bits: u64) -> f64 {
    standard_normal(mix(mix(mix(seed, particle), t_bits), BRIDGE_TAG))
}

/// Uniform draw for a crossing decision of the adjacent pair left-anchored at
/// original particle `left` during substep `step`.
#[inline]
pub fn crossing_uniform(seed: u64, left: u64, step: u64) -> f64 {
    uniform(mix(mix(mix(seed, left), step), UNIFORM_TAG))
}
