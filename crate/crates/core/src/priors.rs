//! Peripheral-distance and local-immune-neighbourhood tile priors.
//!
//! Both priors are scalars per tile computed from tile coordinates (and, for
//! the neighbourhood score, probe probabilities). They are appended to the
//! tile feature vectors before any learned projection.

use crate::bag::{ProbeProbs, SlideBag, SlideGeometry, TileCoord};
use crate::error::{Error, Result};

/// Which priors to compute and their constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// Neighbourhood radius in normalized slide units.
    pub radius_norm: f64,
    pub epsilon: f64,
    pub use_pd: bool,
    pub use_lin: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            radius_norm: 0.10,
            epsilon: 1e-6,
            use_pd: false,
            use_lin: false,
        }
    }
}

impl PriorConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn pd() -> Self {
        Self {
            use_pd: true,
            ..Self::default()
        }
    }

    pub fn lin() -> Self {
        Self {
            use_lin: true,
            ..Self::default()
        }
    }

    pub fn both() -> Self {
        Self {
            use_pd: true,
            use_lin: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_norm > 0.0 && self.radius_norm < 1.0) {
            return Err(Error::Config(format!(
                "radius_norm must be in (0, 1), got {}",
                self.radius_norm
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Number of feature columns the enabled priors add.
    pub fn extra_dims(&self) -> usize {
        self.use_pd as usize + self.use_lin as usize
    }
}

/// Per-tile prior values; each entry is present iff the prior is enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorVector {
    pub pd: Option<f64>,
    pub lin: Option<f64>,
}

/// `1 - 2 * min(x/W, (W-x)/W, y/H, (H-y)/H)` for the tile's top-left corner.
pub fn peripheral_distance(tile: TileCoord, geom: SlideGeometry) -> Result<f64> {
    geom.check(tile)?;
    let w = geom.width_px as f64;
    let h = geom.height_px as f64;
    let x = tile.x_px as f64;
    let y = tile.y_px as f64;
    let nearest = (x / w).min((w - x) / w).min(y / h).min((h - y) / h);
    Ok(1.0 - 2.0 * nearest)
}

/// `ln((lym + eps) / (tum + eps))` for neighbourhood mean probabilities.
pub fn lin_from_means(mean_lym: f64, mean_tum: f64, epsilon: f64) -> f64 {
    ((mean_lym + epsilon) / (mean_tum + epsilon)).ln()
}

/// Uniform-grid index over normalized tile positions answering fixed-radius
/// neighbourhood queries. Immutable after construction.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<(f64, f64)>,
    radius: f64,
    cell: f64,
    cols: usize,
    rows: usize,
    /// Tile indices per cell, row-major over `rows x cols`.
    cells: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn build(tiles: &[TileCoord], geom: SlideGeometry, cfg: &PriorConfig) -> Result<Self> {
        if tiles.is_empty() {
            return Err(Error::InvalidInput(
                "cannot index an empty tile list".into(),
            ));
        }
        cfg.validate()?;
        let mut points = Vec::with_capacity(tiles.len());
        for &t in tiles {
            geom.check(t)?;
            points.push(geom.normalize(t));
        }
        Ok(Self::from_normalized(points, cfg.radius_norm))
    }

    /// Builds the index directly from points in the unit square.
    pub fn from_normalized(points: Vec<(f64, f64)>, radius: f64) -> Self {
        // Cells are a hair wider than the radius so that float rounding in the
        // cell assignment can never push a true neighbour two cells away.
        let cell = radius * (1.0 + 1e-9);
        let cols = (1.0 / cell).floor() as usize + 1;
        let rows = cols;
        let mut cells = vec![Vec::new(); cols * rows];
        for (i, &(x, y)) in points.iter().enumerate() {
            let (cx, cy) = Self::cell_of(x, y, cell, cols, rows);
            cells[cy * cols + cx].push(i);
        }
        Self {
            points,
            radius,
            cell,
            cols,
            rows,
            cells,
        }
    }

    fn cell_of(x: f64, y: f64, cell: f64, cols: usize, rows: usize) -> (usize, usize) {
        let cx = ((x / cell).floor().max(0.0) as usize).min(cols - 1);
        let cy = ((y / cell).floor().max(0.0) as usize).min(rows - 1);
        (cx, cy)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        self.points[i]
    }

    /// Indices (ascending) of all tiles within the radius of tile `i`,
    /// including `i` itself.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let (x, y) = self.points[i];
        let (cx, cy) = Self::cell_of(x, y, self.cell, self.cols, self.rows);
        let r2 = self.radius * self.radius;
        let mut out = Vec::new();
        for gy in cy.saturating_sub(1)..=(cy + 1).min(self.rows - 1) {
            for gx in cx.saturating_sub(1)..=(cx + 1).min(self.cols - 1) {
                for &j in &self.cells[gy * self.cols + gx] {
                    if within(self.points[i], self.points[j], r2) {
                        out.push(j);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Shared distance predicate for the grid and brute-force scans.
#[inline]
pub fn within(a: (f64, f64), b: (f64, f64), radius_sq: f64) -> bool {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy <= radius_sq
}

pub fn build_neighbor_index(
    tiles: &[TileCoord],
    geom: SlideGeometry,
    cfg: &PriorConfig,
) -> Result<NeighborIndex> {
    NeighborIndex::build(tiles, geom, cfg)
}

/// Local immune neighbourhood score of tile `i`: log ratio of mean LYM to
/// mean TUM probe probability over its neighbourhood.
pub fn lin_score(
    i: usize,
    index: &NeighborIndex,
    probes: Option<&[ProbeProbs]>,
    cfg: &PriorConfig,
) -> Result<f64> {
    let probes = probes.ok_or_else(|| {
        Error::Config("local immune neighbourhood prior requires probe probabilities".into())
    })?;
    if probes.len() != index.len() {
        return Err(Error::InvalidInput(format!(
            "{} probe vectors for {} tiles",
            probes.len(),
            index.len()
        )));
    }
    if i >= index.len() {
        return Err(Error::InvalidInput(format!(
            "tile index {i} out of range for {} tiles",
            index.len()
        )));
    }
    let hood = index.neighbors(i);
    let (mut lym, mut tum) = (0.0, 0.0);
    for &j in &hood {
        lym += probes[j].lym();
        tum += probes[j].tum();
    }
    let k = hood.len() as f64;
    Ok(lin_from_means(lym / k, tum / k, cfg.epsilon))
}

/// Prior values for every tile of a bag.
pub fn compute_priors(bag: &SlideBag, cfg: &PriorConfig) -> Result<Vec<PriorVector>> {
    cfg.validate()?;
    let n = bag.n_tiles();
    let pd = if cfg.use_pd {
        Some(
            bag.coords
                .iter()
                .map(|&c| peripheral_distance(c, bag.geometry))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let lin = if cfg.use_lin {
        let probes = bag.probes.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "slide {}: local immune neighbourhood prior requires probe probabilities",
                bag.slide_id
            ))
        })?;
        for p in probes {
            p.validate()?;
        }
        let index = NeighborIndex::build(&bag.coords, bag.geometry, cfg)?;
        Some(
            (0..n)
                .map(|i| lin_score(i, &index, Some(probes), cfg))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok((0..n)
        .map(|i| PriorVector {
            pd: pd.as_ref().map(|v| v[i]),
            lin: lin.as_ref().map(|v| v[i]),
        })
        .collect())
}

/// Appends the enabled priors (PD first, then LIN) to each tile's features.
/// The original feature columns are copied unchanged.
pub fn augment_features(bag: &SlideBag, cfg: &PriorConfig) -> Result<SlideBag> {
    bag.validate()?;
    if cfg.extra_dims() == 0 {
        return Ok(bag.clone());
    }
    let priors = compute_priors(bag, cfg)?;
    let d = bag.feature_dim;
    let out_dim = d + cfg.extra_dims();
    let mut features = Vec::with_capacity(bag.n_tiles() * out_dim);
    for (i, p) in priors.iter().enumerate() {
        features.extend_from_slice(bag.feature_row(i));
        features.extend(p.pd);
        features.extend(p.lin);
    }
    Ok(SlideBag {
        feature_dim: out_dim,
        features,
        ..bag.clone()
    })
}
