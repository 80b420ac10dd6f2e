//! Slide bags: tile coordinates, per-tile features and optional probe
//! probabilities for one whole-slide image.

use crate::error::{Error, Result};

/// Number of tissue classes produced by the tile probe.
pub const PROBE_CLASSES: usize = 9;
/// Probe class names, in on-disk order.
pub const PROBE_CLASS_NAMES: [&str; PROBE_CLASSES] =
    ["ADI", "BACK", "DEB", "LYM", "MUC", "MUS", "NORM", "STR", "TUM"];
pub const LYM: usize = 3;
pub const STR: usize = 7;
pub const TUM: usize = 8;
pub const NORM: usize = 6;

/// Slide dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlideGeometry {
    pub width_px: u64,
    pub height_px: u64,
}

impl SlideGeometry {
    pub fn new(width_px: u64, height_px: u64) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::InvalidInput(format!(
                "slide geometry must be positive, got {width_px}x{height_px}"
            )));
        }
        Ok(Self {
            width_px,
            height_px,
        })
    }

    pub fn contains(&self, tile: TileCoord) -> bool {
        tile.x_px <= self.width_px && tile.y_px <= self.height_px
    }

    pub fn check(&self, tile: TileCoord) -> Result<()> {
        if self.contains(tile) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "tile ({}, {}) outside slide bounds {}x{}",
                tile.x_px, tile.y_px, self.width_px, self.height_px
            )))
        }
    }

    /// Tile top-left corner in the unit square, each axis scaled independently.
    pub fn normalize(&self, tile: TileCoord) -> (f64, f64) {
        (
            tile.x_px as f64 / self.width_px as f64,
            tile.y_px as f64 / self.height_px as f64,
        )
    }
}

/// Top-left pixel coordinate of a tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileCoord {
    pub x_px: u64,
    pub y_px: u64,
}

impl TileCoord {
    pub fn new(x_px: u64, y_px: u64) -> Self {
        Self { x_px, y_px }
    }
}

/// Per-tile tissue-class probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeProbs(pub [f64; PROBE_CLASSES]);

impl ProbeProbs {
    pub fn new(probs: [f64; PROBE_CLASSES]) -> Result<Self> {
        let p = Self(probs);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput(format!(
                "probe probabilities must lie in [0, 1]: {:?}",
                self.0
            )));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "probe probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn lym(&self) -> f64 {
        self.0[LYM]
    }

    pub fn tum(&self) -> f64 {
        self.0[TUM]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// One slide's bag of tiles. Features are row-major `n_tiles x feature_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideBag {
    pub slide_id: String,
    pub geometry: SlideGeometry,
    pub coords: Vec<TileCoord>,
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub probes: Option<Vec<ProbeProbs>>,
}

impl SlideBag {
    pub fn new(
        slide_id: impl Into<String>,
        geometry: SlideGeometry,
        coords: Vec<TileCoord>,
        feature_dim: usize,
        features: Vec<f64>,
        probes: Option<Vec<ProbeProbs>>,
    ) -> Result<Self> {
        let bag = Self {
            slide_id: slide_id.into(),
            geometry,
            coords,
            feature_dim,
            features,
            probes,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if self.features.len() != n * self.feature_dim {
            return Err(Error::InvalidInput(format!(
                "slide {}: {} feature values for {} tiles of dimension {}",
                self.slide_id,
                self.features.len(),
                n,
                self.feature_dim
            )));
        }
        if let Some(p) = &self.probes {
            if p.len() != n {
                return Err(Error::InvalidInput(format!(
                    "slide {}: {} probe vectors for {} tiles",
                    self.slide_id,
                    p.len(),
                    n
                )));
            }
        }
        for &c in &self.coords {
            self.geometry.check(c)?;
        }
        Ok(())
    }

    pub fn n_tiles(&self) -> usize {
        self.coords.len()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// A new bag holding only the listed tiles, in the given order.
    pub fn select(&self, indices: &[usize]) -> SlideBag {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
        }
        SlideBag {
            slide_id: self.slide_id.clone(),
            geometry: self.geometry,
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            feature_dim: self.feature_dim,
            features,
            probes: self
                .probes
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }
}

/// Slide-level labels. The MSS label is always the complement of MSI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labels {
    pub msi: bool,
    pub hypermut: bool,
}

impl Labels {
    pub fn mss(&self) -> bool {
        !self.msi
    }

    /// Targets in head order: MSI, MSS, hypermutation.
    pub fn targets(&self) -> [f64; 3] {
        [
            self.msi as u8 as f64,
            self.mss() as u8 as f64,
            self.hypermut as u8 as f64,
        ]
    }
}

/// A labelled slide as used for training and evaluation.
#[derive(Debug, Clone)]
pub struct LabeledSlide {
    pub bag: SlideBag,
    pub labels: Labels,
    pub site: String,
}

pub type Cohort = Vec<LabeledSlide>;
