//! Trainable parameters: projection head, detector and gate MLPs and the
//! four property-prediction heads, stored as one flat `f64` vector.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedder::EmbedderConfig;
use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpShape};
use crate::quantity::UnitTable;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NCBM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    ProjectionW,
    ProjectionB,
    Detector,
    Gate,
    UnitHead,
    MantissaHead,
    ExponentHead,
    CondHead,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::ProjectionW,
        Block::ProjectionB,
        Block::Detector,
        Block::Gate,
        Block::UnitHead,
        Block::MantissaHead,
        Block::ExponentHead,
        Block::CondHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::ProjectionW => "projection.W",
            Block::ProjectionB => "projection.b",
            Block::Detector => "detector",
            Block::Gate => "gate",
            Block::UnitHead => "head.unit",
            Block::MantissaHead => "head.mantissa",
            Block::ExponentHead => "head.exponent",
            Block::CondHead => "head.cond",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub embedder: EmbedderConfig,
    /// Hidden width shared by the detector, gate and property heads.
    pub hidden: usize,
    /// Unit vocabulary plus one NONE class.
    pub unit_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderConfig::default(),
            hidden: 32,
            unit_classes: UnitTable::builtin().len() + 1,
        }
    }
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        self.embedder.dim
    }

    pub fn mlp_shape(&self, block: Block) -> Option<MlpShape> {
        let (d, h) = (self.embedder.dim, self.hidden);
        match block {
            Block::ProjectionW | Block::ProjectionB => None,
            Block::Detector | Block::Gate | Block::MantissaHead | Block::ExponentHead => {
                Some(MlpShape::new(d, h, 1))
            }
            Block::UnitHead => Some(MlpShape::new(d, h, self.unit_classes)),
            Block::CondHead => Some(MlpShape::new(d, h, 3)),
        }
    }

    fn block_len(&self, block: Block) -> usize {
        match block {
            Block::ProjectionW => self.embedder.dim * self.embedder.feature_dim,
            Block::ProjectionB => self.embedder.dim,
            _ => self.mlp_shape(block).unwrap().len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        if self.hidden == 0 || self.unit_classes < 2 {
            return Err(Error::InvalidConfig("hidden size and unit classes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    ranges: Vec<Range<usize>>,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut ranges = Vec::with_capacity(Block::ALL.len());
        let mut at = 0;
        for b in Block::ALL {
            let n = cfg.block_len(b);
            ranges.push(at..at + n);
            at += n;
        }
        Self { ranges, total: at }
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        self.ranges[block as usize].clone()
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let layout = Layout::new(&config);
        let data = vec![0.0; layout.len()];
        Self {
            config,
            layout,
            data,
        }
    }

    /// Seeded Gaussian initialization; the projection uses `N(0, 1/f)`.
    pub fn init(config: ModelConfig) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.embedder.seed);
        let std = 1.0 / (config.embedder.feature_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        for v in p.block_mut(Block::ProjectionW) {
            *v = normal.sample(&mut rng);
        }
        for b in [
            Block::Detector,
            Block::Gate,
            Block::UnitHead,
            Block::MantissaHead,
            Block::ExponentHead,
            Block::CondHead,
        ] {
            let shape = config.mlp_shape(b).unwrap();
            let r = p.layout.range(b);
            shape.init(&mut p.data[r], &mut rng);
        }
        p
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.data[self.layout.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.layout.range(b);
        &mut self.data[r]
    }

    pub fn mlp(&self, b: Block) -> Mlp<'_> {
        let shape = self
            .config
            .mlp_shape(b)
            .unwrap_or_else(|| panic!("{} is not an MLP block", b.name()));
        Mlp::new(shape, self.block(b))
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let e = &self.config.embedder;
        let mut out = Vec::with_capacity(48 + 8 * self.data.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(e.dim as u32).to_le_bytes());
        out.extend_from_slice(&(e.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&e.seed.to_le_bytes());
        out.extend_from_slice(&(self.config.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.unit_classes as u32).to_le_bytes());
        out.extend_from_slice(&(e.ngram_min as u32).to_le_bytes());
        out.extend_from_slice(&(e.ngram_max as u32).to_le_bytes());
        out.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                what: "checkpoint",
                expected: CHECKPOINT_MAGIC,
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint",
                found: version,
            });
        }
        let dim = r.u32()? as usize;
        let feature_dim = r.u32()? as usize;
        let seed = r.u64()?;
        let hidden = r.u32()? as usize;
        let unit_classes = r.u32()? as usize;
        let ngram_min = r.u32()? as usize;
        let ngram_max = r.u32()? as usize;
        let n = r.u64()? as usize;
        let config = ModelConfig {
            embedder: EmbedderConfig {
                dim,
                feature_dim,
                seed,
                ngram_min,
                ngram_max,
            },
            hidden,
            unit_classes,
        };
        config.validate()?;
        let mut p = Self::zeros(config);
        if n != p.data.len() {
            return Err(Error::Corrupt {
                what: "checkpoint",
                detail: format!("expected {} parameters, header says {n}", p.data.len()),
            });
        }
        for v in p.data.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
        if r.at != bytes.len() {
            return Err(Error::Corrupt {
                what: "checkpoint",
                detail: format!("{} trailing bytes", bytes.len() - r.at),
            });
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::TruncatedCheckpoint { offset: self.bytes.len() });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            embedder: EmbedderConfig {
                dim: 8,
                feature_dim: 96,
                seed: 11,
                ..EmbedderConfig::default()
            },
            hidden: 4,
            unit_classes: 5,
        }
    }

    #[test]
    fn layout_is_contiguous_in_declared_order() {
        let cfg = small();
        let l = Layout::new(&cfg);
        let mut at = 0;
        for b in Block::ALL {
            let r = l.range(b);
            assert_eq!(r.start, at);
            at = r.end;
        }
        assert_eq!(at, l.len());
        assert_eq!(l.range(Block::ProjectionW).len(), 8 * 96);
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let p = ModelParams::init(small());
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"NCBM");
        assert_eq!(ModelParams::from_bytes(&bytes).unwrap(), p);
        assert!(matches!(
            ModelParams::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedCheckpoint { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelParams::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(ModelParams::from_bytes(&bad), Err(Error::UnsupportedVersion { .. })));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(ModelParams::init(small()), ModelParams::init(small()));
        let mut other = small();
        other.embedder.seed = 12;
        assert_ne!(ModelParams::init(small()).data, ModelParams::init(other).data);
    }
}
