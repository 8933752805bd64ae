//! Deterministic seed derivation: every random stream in a run is derived
//! from one base seed and a purpose tag, so independent components never
//! share or collide streams by accident.

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes.
fn tag_hash(tag: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives a child seed for the stream named `tag`.
pub fn derive(base: u64, tag: &str) -> u64 {
    mix(base ^ tag_hash(tag))
}

/// Derives the `index`-th seed in the stream named `tag`.
pub fn derive_indexed(base: u64, tag: &str, index: u64) -> u64 {
    mix(derive(base, tag) ^ mix(index))
}
