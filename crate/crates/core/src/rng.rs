//! Counter-style random streams keyed by a root seed and a label path.
//!
//! Every stream is an independent ChaCha8 generator whose key is the SHA-256
//! digest of the root seed and the encoded labels, so drawing from one stream
//! never moves another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Name(String),
    Index(u64),
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::Name(s.to_string())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::Name(s)
    }
}

impl From<u64> for Label {
    fn from(i: u64) -> Self {
        Label::Index(i)
    }
}

impl From<usize> for Label {
    fn from(i: usize) -> Self {
        Label::Index(i as u64)
    }
}

impl From<u32> for Label {
    fn from(i: u32) -> Self {
        Label::Index(i as u64)
    }
}

/// Build a label list from heterogeneous values.
#[macro_export]
macro_rules! labels {
    ($($x:expr),+ $(,)?) => {
        vec![$($crate::rng::Label::from($x)),+]
    };
}

#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    labels: Vec<Label>,
    rng: ChaCha8Rng,
}

fn stream_key(root_seed: u64, labels: &[Label]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"tepkit-stream");
    h.update(root_seed.to_le_bytes());
    for l in labels {
        match l {
            Label::Name(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Label::Index(i) => {
                h.update([1u8]);
                h.update(i.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

/// Derive the stream for `(root_seed, labels)`.
pub fn derive_stream(root_seed: u64, labels: &[Label]) -> Result<RngStream> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    Ok(RngStream {
        root_seed,
        labels: labels.to_vec(),
        rng: ChaCha8Rng::from_seed(stream_key(root_seed, labels)),
    })
}

impl RngStream {
    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.gen()
    }
}

/// Shorthand used throughout: stream for `root` with the given labels.
/// Label lists built in this crate are never empty.
pub(crate) fn stream(root_seed: u64, labels: Vec<Label>) -> RngStream {
    derive_stream(root_seed, &labels).expect("non-empty labels")
}
