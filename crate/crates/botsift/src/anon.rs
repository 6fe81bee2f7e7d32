//! Prefix-preserving IP address anonymization (Crypto-PAn).
//!
//! For every bit position i, a 128-bit block is formed from the first i
//! address bits followed by the corresponding bits of the encrypted pad,
//! encrypted under AES-128, and the block's most significant bit is
//! XORed into address bit i. Two addresses therefore share exactly as
//! long a common bit-prefix after anonymization as before — the defining
//! property of the construction — and the bit loop is bit-exact with
//! existing Crypto-PAn tooling. IPv6 runs the identical loop over 128
//! positions.
//!
//! The anonymizer is immutable after construction and safe to share
//! across threads. Keys are never logged.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use thiserror::Error;

use crate::ingest::{LogRecord, Provenance};

#[derive(Debug, Error)]
pub enum AnonError {
    #[error("key must be exactly 32 raw bytes or 64 hex characters, got {0} bytes")]
    BadKeyLength(usize),
    #[error("key hex string is invalid at position {0}")]
    BadHex(usize),
    #[error("record is already anonymized")]
    AlreadyAnonymized,
    #[error("reading key: {0}")]
    Io(#[from] std::io::Error),
}

/// A 32-byte anonymization key: 16 bytes keying the block cipher and 16
/// bytes seeding the pad. Both halves are independent secrets.
#[derive(Clone)]
pub struct AnonKey {
    cipher_key: [u8; 16],
    pad_seed: [u8; 16],
}

impl AnonKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        let mut cipher_key = [0u8; 16];
        let mut pad_seed = [0u8; 16];
        cipher_key.copy_from_slice(&bytes[..16]);
        pad_seed.copy_from_slice(&bytes[16..]);
        Self { cipher_key, pad_seed }
    }

    /// Parse 64 hex characters (the canonical serialized form of the
    /// 32-byte concatenation).
    pub fn from_hex(hex: &str) -> Result<Self, AnonError> {
        let hex = hex.trim();
        if hex.len() != 64 {
            return Err(AnonError::BadKeyLength(hex.len() / 2));
        }
        let mut bytes = [0u8; 32];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).map_err(|_| AnonError::BadHex(i * 2))?;
            bytes[i] = u8::from_str_radix(s, 16).map_err(|_| AnonError::BadHex(i * 2))?;
        }
        Ok(Self::from_bytes(bytes))
    }

    /// Load a key file: exactly 32 binary bytes, or 64 hex characters
    /// (surrounding whitespace tolerated). Anything else is refused.
    pub fn from_file(path: &Path) -> Result<Self, AnonError> {
        let data = std::fs::read(path)?;
        if data.len() == 32 {
            let mut bytes = [0u8; 32];
            bytes.copy_from_slice(&data);
            return Ok(Self::from_bytes(bytes));
        }
        if let Ok(text) = std::str::from_utf8(&data) {
            if text.trim().len() == 64 {
                return Self::from_hex(text);
            }
        }
        Err(AnonError::BadKeyLength(data.len()))
    }
}

// Keys stay out of debug output.
impl std::fmt::Debug for AnonKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AnonKey(..)")
    }
}

/// A keyed, prefix-preserving anonymizer.
pub struct Anonymizer {
    cipher: Aes128,
    pad: u128,
}

impl Anonymizer {
    pub fn new(key: &AnonKey) -> Self {
        let cipher = Aes128::new(&key.cipher_key.into());
        let mut block = key.pad_seed.into();
        cipher.encrypt_block(&mut block);
        let pad = u128::from_be_bytes(block.into());
        Self { cipher, pad }
    }

    pub fn anonymize_v4(&self, ip: Ipv4Addr) -> Ipv4Addr {
        let bits = self.anonymize_bits(u128::from(u32::from(ip)) << 96, 32);
        Ipv4Addr::from(bits as u32)
    }

    pub fn anonymize_v6(&self, ip: Ipv6Addr) -> Ipv6Addr {
        Ipv6Addr::from(self.anonymize_bits(u128::from(ip), 128))
    }

    pub fn anonymize(&self, ip: IpAddr) -> IpAddr {
        match ip {
            IpAddr::V4(v4) => IpAddr::V4(self.anonymize_v4(v4)),
            IpAddr::V6(v6) => IpAddr::V6(self.anonymize_v6(v6)),
        }
    }

    /// Replace the client IP and mark the record anonymized. Applying it
    /// twice is an error, not a silent re-scramble.
    pub fn anonymize_record(&self, record: LogRecord) -> Result<LogRecord, AnonError> {
        if record.provenance != Provenance::Raw {
            return Err(AnonError::AlreadyAnonymized);
        }
        Ok(LogRecord {
            client_ip: self.anonymize(record.client_ip),
            provenance: Provenance::Anonymized,
            ..record
        })
    }

    /// Core bit loop. `addr_hi` holds the address left-aligned in a
    /// 128-bit register; returns the anonymized address right-aligned in
    /// the low `width` bits.
    fn anonymize_bits(&self, addr_hi: u128, width: u32) -> u128 {
        let mut flips: u128 = 0;
        for i in 0..width {
            // First i bits from the address, the rest from the pad.
            let mask_hi = if i == 0 { 0 } else { u128::MAX << (128 - i) };
            let input = (addr_hi & mask_hi) | (self.pad & !mask_hi);
            let mut block = input.to_be_bytes().into();
            self.cipher.encrypt_block(&mut block);
            let msb = u128::from(block[0] >> 7);
            flips = (flips << 1) | msb;
        }
        let addr = if width == 128 { addr_hi } else { addr_hi >> (128 - width) };
        addr ^ flips
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(byte: u8) -> AnonKey {
        AnonKey::from_bytes([byte; 32])
    }

    fn common_prefix_len_u32(a: u32, b: u32) -> u32 {
        (a ^ b).leading_zeros()
    }

    fn common_prefix_len_u128(a: u128, b: u128) -> u32 {
        (a ^ b).leading_zeros()
    }

    #[test]
    fn deterministic_under_fixed_key() {
        let anon = Anonymizer::new(&key_of(0x5a));
        let ip: Ipv4Addr = "203.0.113.99".parse().unwrap();
        assert_eq!(anon.anonymize_v4(ip), anon.anonymize_v4(ip));
        let ip6: Ipv6Addr = "2001:db8::42".parse().unwrap();
        assert_eq!(anon.anonymize_v6(ip6), anon.anonymize_v6(ip6));
    }

    // Frozen output of the all-zero key on 0.0.0.0, computed once with an
    // independent straight-line implementation of the bit loop (see
    // tests/cryptopan_oracle.rs). Guards against construction drift.
    #[test]
    fn zero_key_regression_vector() {
        let anon = Anonymizer::new(&AnonKey::from_bytes([0u8; 32]));
        let out = anon.anonymize_v4(Ipv4Addr::new(0, 0, 0, 0));
        assert_eq!(out, Ipv4Addr::new(28, 59, 109, 252));
    }

    #[test]
    fn prefix_preservation_sampled_v4() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let anon = Anonymizer::new(&key_of(0xc3));
        for _ in 0..1000 {
            let a: u32 = rng.gen();
            let b: u32 = rng.gen();
            let ea = u32::from(anon.anonymize_v4(a.into()));
            let eb = u32::from(anon.anonymize_v4(b.into()));
            assert_eq!(
                common_prefix_len_u32(a, b),
                common_prefix_len_u32(ea, eb),
                "prefix mismatch for {a:#x} vs {b:#x}"
            );
        }
    }

    #[test]
    fn prefix_preservation_sampled_v6() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let anon = Anonymizer::new(&key_of(0x7e));
        for _ in 0..500 {
            let a: u128 = rng.gen();
            let b: u128 = rng.gen();
            let ea = u128::from(anon.anonymize_v6(a.into()));
            let eb = u128::from(anon.anonymize_v6(b.into()));
            assert_eq!(
                common_prefix_len_u128(a, b),
                common_prefix_len_u128(ea, eb)
            );
        }
    }

    #[test]
    fn different_keys_give_different_v6_outputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let loopback: Ipv6Addr = "::1".parse().unwrap();
        let mut distinct = 0;
        for _ in 0..100 {
            let mut k1 = [0u8; 32];
            let mut k2 = [0u8; 32];
            rng.fill(&mut k1);
            rng.fill(&mut k2);
            let a = Anonymizer::new(&AnonKey::from_bytes(k1)).anonymize_v6(loopback);
            let b = Anonymizer::new(&AnonKey::from_bytes(k2)).anonymize_v6(loopback);
            if a != b {
                distinct += 1;
            }
        }
        assert_eq!(distinct, 100);
    }

    #[test]
    fn key_bit_flip_changes_some_output() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let base = [0x42u8; 32];
        let mut flipped = base;
        flipped[7] ^= 0x01;
        let a = Anonymizer::new(&AnonKey::from_bytes(base));
        let b = Anonymizer::new(&AnonKey::from_bytes(flipped));
        let changed = (0..1000).any(|_| {
            let ip: u32 = rng.gen();
            a.anonymize_v4(ip.into()) != b.anonymize_v4(ip.into())
        });
        assert!(changed);
    }

    #[test]
    fn record_routing_and_double_anonymization() {
        use chrono::{TimeZone, Utc};
        let anon = Anonymizer::new(&key_of(0x01));
        let record = LogRecord {
            timestamp: Utc.with_ymd_and_hms(2024, 9, 1, 0, 0, 0).unwrap(),
            client_ip: "192.0.2.1".parse().unwrap(),
            provenance: Provenance::Raw,
            method: "GET".into(),
            path: "/".into(),
            query: String::new(),
            status: 200,
            user_agent: "curl/8.5.0".into(),
            referer: None,
        };
        let out = anon.anonymize_record(record.clone()).unwrap();
        assert_eq!(out.provenance, Provenance::Anonymized);
        assert!(out.client_ip.is_ipv4());
        assert_ne!(out.client_ip, record.client_ip);
        assert_eq!(out.user_agent, record.user_agent);
        assert_eq!(out.timestamp, record.timestamp);
        assert!(matches!(
            anon.anonymize_record(out.clone()),
            Err(AnonError::AlreadyAnonymized)
        ));

        let mut v6_record = record;
        v6_record.client_ip = "2001:db8::1".parse().unwrap();
        let out6 = anon.anonymize_record(v6_record).unwrap();
        assert!(out6.client_ip.is_ipv6());
    }

    #[test]
    fn key_parsing_lengths() {
        assert!(AnonKey::from_hex(&"ab".repeat(32)).is_ok());
        assert!(matches!(
            AnonKey::from_hex("abcd"),
            Err(AnonError::BadKeyLength(_))
        ));
        assert!(matches!(
            AnonKey::from_hex(&"zz".repeat(32)),
            Err(AnonError::BadHex(0))
        ));
    }
}
