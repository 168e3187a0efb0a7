//! `DLF1` model files (little-endian).
//!
//! ```text
//! magic "DLF1" | version u32
//! n_trees u32 | max_features tag u8 + arg u32 | min_samples_split u32
//! max_depth u32 (0 = unlimited) | bootstrap u8 | seed u64
//! width u32 | vocab fingerprint [32]
//! importances f64 * width
//! tree count u32, then per tree: node count u32, nodes
//!   split: 0u8 feature u32 threshold f64 left u32 right u32
//!   leaf:  1u8 goodware u32 malware u32
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ForestModel, MaxFeatures, Node, TrainConfig, Tree};

const MAGIC: &[u8; 4] = b"DLF1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("not a DLF1 model file")]
    BadMagic,
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("corrupt model: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct W<'a, T: Write>(&'a mut T);

impl<T: Write> W<'_, T> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.u64(v.to_bits())
    }
}

struct R<'a, T: Read>(&'a mut T);

impl<T: Read> R<'_, T> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

fn max_features_code(m: MaxFeatures) -> (u8, u32) {
    match m {
        MaxFeatures::Sqrt => (0, 0),
        MaxFeatures::Log2 => (1, 0),
        MaxFeatures::All => (2, 0),
        MaxFeatures::Fixed(k) => (3, k),
    }
}

impl ForestModel {
    pub fn write_to(&self, out: &mut impl Write) -> io::Result<()> {
        let mut w = W(out);
        w.0.write_all(MAGIC)?;
        w.u32(VERSION)?;
        let c = &self.config;
        w.u32(c.n_trees)?;
        let (tag, arg) = max_features_code(c.max_features);
        w.u8(tag)?;
        w.u32(arg)?;
        w.u32(c.min_samples_split as u32)?;
        w.u32(c.max_depth.map_or(0, |d| d as u32))?;
        w.u8(c.bootstrap as u8)?;
        w.u64(c.seed)?;
        w.u32(self.width)?;
        w.0.write_all(&self.vocab_fingerprint)?;
        for &v in &self.importances {
            w.f64(v)?;
        }
        w.u32(self.trees.len() as u32)?;
        for t in &self.trees {
            w.u32(t.nodes.len() as u32)?;
            for n in &t.nodes {
                match *n {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.u8(0)?;
                        w.u32(feature)?;
                        w.f64(threshold)?;
                        w.u32(left)?;
                        w.u32(right)?;
                    }
                    Node::Leaf { counts } => {
                        w.u8(1)?;
                        w.u32(counts[0])?;
                        w.u32(counts[1])?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("in-memory write");
        v
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self, ModelFormatError> {
        let mut r = R(input);
        if &r.bytes::<4>()? != MAGIC {
            return Err(ModelFormatError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelFormatError::Version(version));
        }
        let n_trees = r.u32()?;
        let tag = r.u8()?;
        let arg = r.u32()?;
        let max_features = match tag {
            0 => MaxFeatures::Sqrt,
            1 => MaxFeatures::Log2,
            2 => MaxFeatures::All,
            3 => MaxFeatures::Fixed(arg),
            _ => return Err(ModelFormatError::Corrupt("max_features tag")),
        };
        let min_samples_split = r.u32()? as usize;
        let max_depth = match r.u32()? {
            0 => None,
            d => Some(d as usize),
        };
        let bootstrap = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(ModelFormatError::Corrupt("bootstrap flag")),
        };
        let seed = r.u64()?;
        let width = r.u32()?;
        let vocab_fingerprint = r.bytes::<32>()?;
        let mut importances = Vec::new();
        for _ in 0..width {
            importances.push(r.f64()?);
        }
        let count = r.u32()?;
        let mut trees = Vec::new();
        for _ in 0..count {
            let n_nodes = r.u32()?;
            let mut nodes = Vec::new();
            for _ in 0..n_nodes {
                nodes.push(match r.u8()? {
                    0 => {
                        let feature = r.u32()?;
                        let threshold = r.f64()?;
                        let left = r.u32()?;
                        let right = r.u32()?;
                        if feature >= width || left >= n_nodes || right >= n_nodes {
                            return Err(ModelFormatError::Corrupt("node reference out of range"));
                        }
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        }
                    }
                    1 => Node::Leaf {
                        counts: [r.u32()?, r.u32()?],
                    },
                    _ => return Err(ModelFormatError::Corrupt("node tag")),
                });
            }
            if nodes.is_empty() {
                return Err(ModelFormatError::Corrupt("empty tree"));
            }
            // children always follow their parent, which rules out cycles
            for (i, n) in nodes.iter().enumerate() {
                if let Node::Split { left, right, .. } = n {
                    if *left as usize <= i || *right as usize <= i {
                        return Err(ModelFormatError::Corrupt("child precedes parent"));
                    }
                }
            }
            trees.push(Tree { nodes });
        }
        Ok(Self {
            config: TrainConfig {
                n_trees,
                max_features,
                min_samples_split,
                max_depth,
                bootstrap,
                seed,
            },
            width,
            vocab_fingerprint,
            importances,
            trees,
        })
    }
}
