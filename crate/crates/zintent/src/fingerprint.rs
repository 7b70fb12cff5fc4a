use sha2::{Digest, Sha256};

use crate::numerics::Matrix;

/// Incremental SHA-256 over named, length-prefixed fields. Used for the
/// embedding-database pipeline fingerprint and checkpoint integrity.
pub struct FingerprintBuilder {
    hasher: Sha256,
}

impl FingerprintBuilder {
    pub fn new(domain: &str) -> FingerprintBuilder {
        let mut b = FingerprintBuilder { hasher: Sha256::new() };
        b.push_bytes(domain.as_bytes());
        b
    }

    fn push_bytes(&mut self, bytes: &[u8]) {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }

    pub fn text(&mut self, name: &str, value: &str) -> &mut Self {
        self.push_bytes(name.as_bytes());
        self.push_bytes(value.as_bytes());
        self
    }

    pub fn count(&mut self, name: &str, value: u64) -> &mut Self {
        self.push_bytes(name.as_bytes());
        self.push_bytes(&value.to_le_bytes());
        self
    }

    pub fn scalar(&mut self, name: &str, value: f64) -> &mut Self {
        self.push_bytes(name.as_bytes());
        self.push_bytes(&value.to_le_bytes());
        self
    }

    pub fn flag(&mut self, name: &str, value: bool) -> &mut Self {
        self.count(name, value as u64)
    }

    pub fn matrix(&mut self, name: &str, m: &Matrix) -> &mut Self {
        self.push_bytes(name.as_bytes());
        self.push_bytes(&(m.rows() as u64).to_le_bytes());
        self.push_bytes(&(m.cols() as u64).to_le_bytes());
        let mut bytes = Vec::with_capacity(m.data().len() * 8);
        for v in m.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.push_bytes(&bytes);
        self
    }

    /// Lowercase hex digest.
    pub fn finish(self) -> String {
        let digest = self.hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    #[test]
    fn digest_is_stable_and_input_sensitive() {
        let m = Matrix::randn(2, 3, 1.0, &mut StreamRng::new(1));
        let mk = |m: &Matrix, tag: &str| {
            let mut b = FingerprintBuilder::new("test");
            b.text("tag", tag).matrix("m", m);
            b.finish()
        };
        assert_eq!(mk(&m, "a"), mk(&m, "a"));
        assert_ne!(mk(&m, "a"), mk(&m, "b"));

        let mut m2 = m.clone();
        m2.set(0, 0, m.get(0, 0) + 1e-9);
        assert_ne!(mk(&m, "a"), mk(&m2, "a"));
    }

    #[test]
    fn digest_is_64_hex_chars() {
        let fp = FingerprintBuilder::new("test").finish();
        assert_eq!(fp.len(), 64);
        assert!(fp.chars().all(|c| c.is_ascii_hexdigit()));
    }
}
