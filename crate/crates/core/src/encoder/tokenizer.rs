//! Hash tokenizer: lowercase, split on anything that is not alphanumeric,
//! hash each word with 64-bit FNV-1a into `1..vocab_size`.

/// Id of the reserved token emitted for text without any word.
pub const EMPTY_ID: u32 = 0;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased words of `text`, in order.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn word_id(word: &str, vocab_size: usize) -> u32 {
    debug_assert!(vocab_size >= 2);
    (1 + fnv1a(word.as_bytes()) % (vocab_size as u64 - 1)) as u32
}

/// Token ids of `text`; never empty.
pub fn tokenize(text: &str, vocab_size: usize) -> Vec<u32> {
    let ids: Vec<u32> = words(text).iter().map(|w| word_id(w, vocab_size)).collect();
    if ids.is_empty() {
        vec![EMPTY_ID]
    } else {
        ids
    }
}
