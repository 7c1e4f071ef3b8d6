//! Deterministic seed derivation and cheap structural digests.

/// One round of the splitmix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Folds `tags` into `master` one word at a time. The result depends on the
/// tag values and their order, not on how many other derivations exist, so
/// adding sweep cells never perturbs the seeds of existing ones.
pub fn mix(master: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}
