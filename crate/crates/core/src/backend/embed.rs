//! Deterministic test embedder: signed feature hashing of character trigrams.

use super::{require_text, BackendError, Embedder, Embedding};

#[derive(Clone, Debug)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, BackendError> {
        if dim == 0 {
            return Err(BackendError::Config("embedding dimension must be positive".into()));
        }
        Ok(HashingEmbedder { dim, seed })
    }

    fn hash(&self, gram: &[char]) -> u64 {
        // FNV-1a over the seed followed by the trigram's UTF-8 bytes.
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut buf = [0u8; 4];
        let bytes = self
            .seed
            .to_le_bytes()
            .into_iter()
            .chain(gram.iter().flat_map(|c| c.encode_utf8(&mut buf).as_bytes().to_vec()));
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        h
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        require_text(text)?;
        let mut padded = vec![' '];
        let mut last_space = true;
        for c in text.chars().flat_map(char::to_lowercase) {
            let space = c.is_whitespace();
            if !(space && last_space) {
                padded.push(if space { ' ' } else { c });
            }
            last_space = space;
        }
        if !last_space {
            padded.push(' ');
        }
        let mut v = vec![0.0f64; self.dim];
        for gram in padded.windows(3) {
            let h = self.hash(gram);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding::new(v)
    }
}
