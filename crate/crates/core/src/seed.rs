//! Deterministic seed derivation. Every random stream in the crate is keyed
//! by `(master, stream, index)` so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod stream {
    pub const CHANNEL: u64 = 1;
    pub const COMBINER: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SNR_DRAW: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const FINETUNE: u64 = 7;
    pub const SPLIT_TRAIN: u64 = 10;
    pub const SPLIT_VAL: u64 = 11;
    pub const SPLIT_TEST: u64 = 12;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Serde adapter for seeds in TOML, whose integers are signed: values above
/// `i64::MAX` are written as decimal strings, and either form is read back.
pub mod toml_u64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(i) => u64::try_from(i).map_err(|_| de::Error::custom(format!("seed {i} is negative"))),
            Repr::Text(t) => t.parse().map_err(|_| de::Error::custom(format!("seed {t:?} is not an unsigned integer"))),
        }
    }
}
