//! Reversible byte-level string transforms standing in for real ciphers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::profile::CipherTag;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cipher", rename_all = "kebab-case")]
pub enum Cipher {
    /// XOR with a key-seeded keystream, hex encoded.
    AesLike {
        #[serde(with = "hex::serde")]
        key: [u8; 16],
    },
    /// Rotate ASCII letters and digits.
    CaesarLike { shift: u8 },
}

impl Cipher {
    pub fn generate(tag: CipherTag, rng: &mut impl RngCore) -> Self {
        match tag {
            CipherTag::AesLike => {
                let mut key = [0u8; 16];
                rng.fill_bytes(&mut key);
                Cipher::AesLike { key }
            }
            CipherTag::CaesarLike => Cipher::CaesarLike {
                shift: 1 + (rng.next_u32() % 25) as u8,
            },
        }
    }

    pub fn tag(&self) -> CipherTag {
        match self {
            Cipher::AesLike { .. } => CipherTag::AesLike,
            Cipher::CaesarLike { .. } => CipherTag::CaesarLike,
        }
    }

    fn keystream(key: &[u8; 16], len: usize) -> Vec<u8> {
        let mut seed = [0u8; 32];
        seed[..16].copy_from_slice(key);
        seed[16..].copy_from_slice(key);
        let mut out = vec![0u8; len];
        ChaCha8Rng::from_seed(seed).fill_bytes(&mut out);
        out
    }

    pub fn encrypt_bytes(&self, data: &[u8]) -> Vec<u8> {
        match self {
            Cipher::AesLike { key } => {
                let ks = Self::keystream(key, data.len());
                let x: Vec<u8> = data.iter().zip(ks).map(|(a, b)| a ^ b).collect();
                hex::encode(x).into_bytes()
            }
            Cipher::CaesarLike { shift } => data.iter().map(|&b| rotate(b, *shift as i32)).collect(),
        }
    }

    pub fn decrypt_bytes(&self, data: &[u8]) -> Option<Vec<u8>> {
        match self {
            Cipher::AesLike { key } => {
                let raw = hex::decode(data).ok()?;
                let ks = Self::keystream(key, raw.len());
                Some(raw.iter().zip(ks).map(|(a, b)| a ^ b).collect())
            }
            Cipher::CaesarLike { shift } => Some(data.iter().map(|&b| rotate(b, -(*shift as i32))).collect()),
        }
    }

    pub fn encrypt(&self, plain: &str) -> String {
        String::from_utf8(self.encrypt_bytes(plain.as_bytes())).expect("ascii-preserving transforms")
    }

    pub fn decrypt(&self, cipher: &str) -> Option<String> {
        String::from_utf8(self.decrypt_bytes(cipher.as_bytes())?).ok()
    }
}

fn rotate(b: u8, shift: i32) -> u8 {
    let rot = |base: u8, n: i32| (base as i32 + ((b - base) as i32 + shift).rem_euclid(n)) as u8;
    match b {
        b'a'..=b'z' => rot(b'a', 26),
        b'A'..=b'Z' => rot(b'A', 26),
        b'0'..=b'9' => rot(b'0', 10),
        _ => b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tag in [CipherTag::AesLike, CipherTag::CaesarLike] {
            let c = Cipher::generate(tag, &mut rng);
            for s in ["http://x.io", "", "Zz9 é"] {
                let e = c.encrypt(s);
                if s.chars().any(|ch| ch.is_ascii_alphanumeric()) {
                    assert_ne!(e, s);
                }
                assert_eq!(c.decrypt(&e).as_deref(), Some(s));
            }
        }
        assert_eq!(Cipher::CaesarLike { shift: 3 }.encrypt("xyz-789"), "abc-012");
    }
}
