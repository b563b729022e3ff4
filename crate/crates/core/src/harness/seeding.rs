//! Deterministic seed derivation. Every sampled trace and every experiment
//! cell gets its seed from the user's base seed through this fixed chain,
//! so reruns are reproducible regardless of thread scheduling.

/// splitmix64 finalizer step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` under base seed `base`:
/// splitmix64(base ^ splitmix64(stream + 1)).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(1)))
}
