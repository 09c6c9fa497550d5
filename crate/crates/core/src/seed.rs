//! Named seed derivation: every random component draws from
//! `derive_seed(root, name)`, so adding a component never shifts the
//! streams of the others.

use crate::encoder::tokenizer::fnv1a;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, name: &str) -> u64 {
    splitmix64(root ^ fnv1a(name.as_bytes()))
}
