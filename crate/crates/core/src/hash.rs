//! Counter-based randomness.
//!
//! Every random quantity in the simulator is a pure function of a seed and a
//! set of coordinates. Values are produced by folding the coordinates into the
//! seed with [`splitmix64`], so they can be computed lazily, in any order, and
//! from any thread with bit-identical results.
//!
//! The fold is `h = splitmix64(h ^ splitmix64(v))` for each coordinate `v` in
//! turn, starting from `h = seed`.

/// Reference SplitMix64 finalizer (Steele, Lea & Flood).
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn mix(state: u64, value: u64) -> u64 {
    splitmix64(state ^ splitmix64(value))
}

/// Folds `coords` into `seed`.
#[inline]
pub fn hash_coords(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(seed, |h, &v| mix(h, v))
}

/// Uniform in the open interval (0, 1) from the top 53 bits.
#[inline]
pub fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate via Box-Muller (cosine branch).
///
/// Both uniforms are derived from `h`, so the result is a pure function of
/// it. |z| never exceeds `MAX_ABS_NORMAL`.
#[inline]
pub fn std_normal(h: u64) -> f64 {
    let u1 = unit_open(h);
    let u2 = unit_open(splitmix64(h ^ 0xD1B5_4A32_D192_ED03));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Upper bound on `|std_normal(h)|` for any `h`: sqrt(-2 ln(2^-54)).
pub const MAX_ABS_NORMAL: f64 = 8.652_161_319_605_298;
