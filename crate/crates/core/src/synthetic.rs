//! Synthetic cohorts with a planted peripheral-lymphocyte signal and a
//! controllable site-texture confounder.
//!
//! Every slide is a regular tile grid with random holes. Each tile gets a
//! planted tissue type; MSI-H slides concentrate their lymphocyte tiles in
//! the peripheral band while keeping the expected lymphocyte count equal to
//! MSS slides, so the label is only recoverable from *where* lymphocytes
//! sit. Interior tiles additionally carry a per-slide offset along a fixed
//! "texture" direction whose magnitude is tied to the label at a confounded
//! site and independent of it elsewhere.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bag::{
    Labels, LabeledSlide, ProbeProbs, SlideBag, SlideGeometry, TileCoord, LYM, NORM,
    PROBE_CLASSES, STR, TUM,
};
use crate::error::{Error, Result};
use crate::priors::peripheral_distance;
use crate::train::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_slides: usize,
    pub msi_fraction: f64,
    pub tiles_min: usize,
    pub tiles_max: usize,
    pub feature_dim: usize,
    pub pitch_px: u64,
    /// Band of normalized boundary distance below which a tile is peripheral.
    pub ring_width_norm: f64,
    /// Band-vs-interior lymphocyte density ratio on MSI-H slides.
    pub lym_enrichment: f64,
    /// Expected lymphocyte tile fraction on MSS slides.
    pub lym_base_rate: f64,
    /// Relative excess of the expected lymphocyte fraction on MSI-H slides;
    /// 0 keeps the totals equal so only placement differs.
    pub msi_lym_excess: f64,
    /// Share of the MSI-H band excess taken from the interior: 1 keeps the
    /// slide total at the MSS rate, 0 leaves the interior at the base rate.
    pub interior_depletion: f64,
    pub site_offset_scale: f64,
    /// 1: offset magnitude follows the MSI label; 0: independent of it.
    pub offset_label_coupling: f64,
    /// Per-slide spread of the offset magnitude, in units of the scale.
    pub offset_noise: f64,
    pub noise_scale: f64,
    /// Overall unit of the tile embedding (prototype, noise and offset alike).
    pub feature_scale: f64,
    /// Probability of flipping the MSI label to obtain the hypermutation label.
    pub hyper_flip: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_slides: 120,
            msi_fraction: 0.2,
            tiles_min: 100,
            tiles_max: 400,
            feature_dim: 32,
            pitch_px: 256,
            ring_width_norm: 0.15,
            lym_enrichment: 4.0,
            lym_base_rate: 0.25,
            msi_lym_excess: 0.0,
            interior_depletion: 1.0,
            site_offset_scale: 1.0,
            offset_label_coupling: 1.0,
            offset_noise: 0.5,
            noise_scale: 0.5,
            feature_scale: 0.1,
            hyper_flip: 0.15,
            seed: 0,
        }
    }
}

impl CohortSpec {
    /// External-site counterpart: 50 slides, one or two MSI-H, offset
    /// decoupled from the label.
    pub fn external(&self) -> Self {
        Self {
            n_slides: 50,
            msi_fraction: 0.03,
            offset_label_coupling: 0.0,
            ..self.clone()
        }
    }

    /// No planted signal: uniform lymphocytes and no site offset.
    pub fn null(&self) -> Self {
        Self {
            lym_enrichment: 1.0,
            site_offset_scale: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_slides == 0 {
            return bad("n_slides must be positive".into());
        }
        if !(self.msi_fraction > 0.0 && self.msi_fraction < 1.0) {
            return bad(format!("msi_fraction must be in (0, 1), got {}", self.msi_fraction));
        }
        if self.feature_dim < 8 {
            return bad(format!("feature_dim must be at least 8, got {}", self.feature_dim));
        }
        if !(self.ring_width_norm > 0.0 && self.ring_width_norm < 0.5) {
            return bad(format!(
                "ring_width_norm must be in (0, 0.5), got {}",
                self.ring_width_norm
            ));
        }
        if self.tiles_min == 0 || self.tiles_min > self.tiles_max {
            return bad(format!(
                "need 0 < tiles_min <= tiles_max, got {}..{}",
                self.tiles_min, self.tiles_max
            ));
        }
        if self.pitch_px == 0 {
            return bad("pitch_px must be positive".into());
        }
        if !(self.lym_enrichment >= 1.0) {
            return bad("lym_enrichment must be at least 1".into());
        }
        if !(self.lym_base_rate > 0.0 && self.lym_base_rate < 1.0) {
            return bad("lym_base_rate must be in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.offset_label_coupling)
            || !(0.0..=1.0).contains(&self.hyper_flip)
        {
            return bad("offset_label_coupling and hyper_flip must be in [0, 1]".into());
        }
        if self.site_offset_scale < 0.0 || self.noise_scale < 0.0 || self.offset_noise < 0.0 {
            return bad("scales must be non-negative".into());
        }
        if !(self.feature_scale > 0.0) || !(self.msi_lym_excess >= 0.0) {
            return bad("feature_scale must be positive and msi_lym_excess non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.interior_depletion) {
            return bad(format!("interior_depletion must be in [0, 1], got {}", self.interior_depletion));
        }
        Ok(())
    }

    pub fn n_msi(&self) -> usize {
        ((self.n_slides as f64 * self.msi_fraction).round() as usize).clamp(1, self.n_slides - 1)
    }

    /// First index of the texture dimensions (the last quarter).
    pub fn texture_start(&self) -> usize {
        self.feature_dim - self.feature_dim / 4
    }

    pub fn in_band(&self, pd: f64) -> bool {
        pd > 1.0 - 2.0 * self.ring_width_norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TileType {
    Lym,
    Tum,
    Str,
    Other,
}

impl TileType {
    pub fn probe_class(self) -> usize {
        match self {
            TileType::Lym => LYM,
            TileType::Tum => TUM,
            TileType::Str => STR,
            TileType::Other => NORM,
        }
    }

    fn index(self) -> usize {
        match self {
            TileType::Lym => 0,
            TileType::Tum => 1,
            TileType::Str => 2,
            TileType::Other => 3,
        }
    }
}

/// A generated slide with its planted ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSlide {
    pub slide: LabeledSlide,
    pub tile_types: Vec<TileType>,
    /// Per-slide offset magnitude (before `site_offset_scale`).
    pub offset_level: f64,
}

impl SyntheticSlide {
    /// Peripheral-distance band membership per tile.
    pub fn band_mask(&self, spec: &CohortSpec) -> Vec<bool> {
        self.slide
            .bag
            .coords
            .iter()
            .map(|&c| spec.in_band(peripheral_distance(c, self.slide.bag.geometry).unwrap_or(0.0)))
            .collect()
    }

    /// Fraction of band tiles that are lymphocytes.
    pub fn band_lym_fraction(&self, spec: &CohortSpec) -> f64 {
        let band = self.band_mask(spec);
        let total = band.iter().filter(|&&b| b).count();
        let lym = band
            .iter()
            .zip(&self.tile_types)
            .filter(|(&b, &t)| b && t == TileType::Lym)
            .count();
        if total == 0 {
            0.0
        } else {
            lym as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub site: String,
    pub spec: CohortSpec,
    pub slides: Vec<SyntheticSlide>,
}

impl SyntheticCohort {
    pub fn labeled(&self) -> Vec<LabeledSlide> {
        self.slides.iter().map(|s| s.slide.clone()).collect()
    }
}

fn site_hash(site: &str) -> u64 {
    site.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Type prototypes on the non-texture dimensions plus the unit texture
/// direction. Depends only on `(seed, feature_dim)` so every site shares them.
fn world(spec: &CohortSpec) -> ([Vec<f64>; 4], Vec<f64>) {
    let d = spec.feature_dim;
    let ts = spec.texture_start();
    let mut rng = stream_rng(spec.seed, Stream::Cohort, u64::MAX, d as u64);
    let protos = [0, 1, 2, 3].map(|_| {
        (0..d)
            .map(|j| if j < ts { normal(&mut rng) } else { 0.0 })
            .collect::<Vec<f64>>()
    });
    let mut dir: Vec<f64> = (0..d).map(|j| if j >= ts { normal(&mut rng) } else { 0.0 }).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    (protos, dir)
}

/// Probability that a tile is a lymphocyte tile, given its band membership,
/// the slide label, and the fraction of the slide's tiles inside the band.
pub fn lym_probability(spec: &CohortSpec, msi: bool, in_band: bool, band_fraction: f64) -> f64 {
    if !msi {
        return spec.lym_base_rate;
    }
    let e = spec.lym_enrichment;
    let norm = band_fraction * e + (1.0 - band_fraction);
    let d = spec.interior_depletion;
    let interior = spec.lym_base_rate * (1.0 + spec.msi_lym_excess) * (1.0 - d + d / norm);
    (if in_band { interior * e } else { interior }).min(1.0)
}

/// Generates one site's cohort. A pure function of `(spec, site)`.
pub fn generate_cohort(spec: &CohortSpec, site: &str) -> Result<SyntheticCohort> {
    spec.validate()?;
    let (protos, dir) = world(spec);
    let site_id = site_hash(site);

    let mut label_rng = stream_rng(spec.seed, Stream::Cohort, site_id, u64::MAX - 1);
    let msi_set = index::sample(&mut label_rng, spec.n_slides, spec.n_msi()).into_vec();
    let mut msi_flags = vec![false; spec.n_slides];
    for i in msi_set {
        msi_flags[i] = true;
    }

    let ts = spec.texture_start();
    let mut slides = Vec::with_capacity(spec.n_slides);
    for (s, &msi) in msi_flags.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, Stream::Cohort, site_id, s as u64);
        let n = rng.random_range(spec.tiles_min..=spec.tiles_max);
        let aspect: f64 = rng.random_range(0.75..1.33);
        let cells = (n as f64 / 0.85).ceil();
        let cols = ((cells * aspect).sqrt().ceil() as usize).max(1);
        let rows = (cells as usize).div_ceil(cols).max(1);
        let cols = cols.max(n.div_ceil(rows));
        let geometry = SlideGeometry::new(cols as u64 * spec.pitch_px, rows as u64 * spec.pitch_px)?;
        let mut cells_idx = index::sample(&mut rng, rows * cols, n).into_vec();
        cells_idx.sort_unstable();
        let coords: Vec<TileCoord> = cells_idx
            .iter()
            .map(|&c| TileCoord::new((c % cols) as u64 * spec.pitch_px, (c / cols) as u64 * spec.pitch_px))
            .collect();
        let band: Vec<bool> = coords
            .iter()
            .map(|&c| peripheral_distance(c, geometry).map(|pd| spec.in_band(pd)))
            .collect::<Result<_>>()?;
        let band_fraction = band.iter().filter(|&&b| b).count() as f64 / n as f64;

        let hypermut = msi ^ (rng.random::<f64>() < spec.hyper_flip);
        let c = spec.offset_label_coupling;
        let y = msi as u8 as f64;
        let offset_level =
            c * y + (1.0 - c) * rng.random::<f64>() + spec.offset_noise * normal(&mut rng);
        let offset = spec.site_offset_scale * offset_level;

        let mut types = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n * spec.feature_dim);
        let mut probes = Vec::with_capacity(n);
        for &inb in &band {
            let t = if rng.random::<f64>() < lym_probability(spec, msi, inb, band_fraction) {
                TileType::Lym
            } else {
                match rng.random::<f64>() {
                    u if u < 0.5 => TileType::Tum,
                    u if u < 0.8 => TileType::Str,
                    _ => TileType::Other,
                }
            };
            let proto = &protos[t.index()];
            for j in 0..spec.feature_dim {
                let mut v = proto[j] + spec.noise_scale * normal(&mut rng);
                if !inb && j >= ts {
                    v += offset * dir[j];
                }
                features.push(spec.feature_scale * v);
            }
            let soft: f64 = rng.random_range(0.05..0.5);
            let mut p = [soft / PROBE_CLASSES as f64; PROBE_CLASSES];
            p[t.probe_class()] += 1.0 - soft;
            probes.push(ProbeProbs(p));
            types.push(t);
        }
        let bag = SlideBag::new(
            format!("{site}-{s:04}"),
            geometry,
            coords,
            spec.feature_dim,
            features,
            Some(probes),
        )?;
        slides.push(SyntheticSlide {
            slide: LabeledSlide {
                bag,
                labels: Labels { msi, hypermut },
                site: site.to_string(),
            },
            tile_types: types,
            offset_level,
        });
    }
    Ok(SyntheticCohort {
        site: site.to_string(),
        spec: spec.clone(),
        slides,
    })
}

/// Observed versus expected count for one cell of the planted-signal check.
#[derive(Debug, Clone, PartialEq)]
pub struct CountCheck {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub z: f64,
}

/// Planted-signal statistics of a generated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDiagnostics {
    pub msi_band_lym_rate: f64,
    pub msi_interior_lym_rate: f64,
    pub mss_band_lym_rate: f64,
    pub mss_interior_lym_rate: f64,
    /// MSI-H band over interior lymphocyte rate, Mantel-Haenszel pooled
    /// across slides (the crude pooled ratio is biased by band size).
    pub enrichment_ratio: f64,
    /// MSI-H band rate minus MSS band rate, in pooled standard errors.
    pub class_difference_z: f64,
    pub mean_offset_msi: f64,
    pub mean_offset_mss: f64,
    pub checks: Vec<CountCheck>,
}

impl CohortDiagnostics {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "lym rate  band: MSI-H {:.4}  MSS {:.4}\n\
             lym rate  interior: MSI-H {:.4}  MSS {:.4}\n\
             enrichment ratio {:.3}\n\
             class difference z {:.2}\n\
             mean offset level  MSI-H {:.3}  MSS {:.3}\n",
            self.msi_band_lym_rate,
            self.mss_band_lym_rate,
            self.msi_interior_lym_rate,
            self.mss_interior_lym_rate,
            self.enrichment_ratio,
            self.class_difference_z,
            self.mean_offset_msi,
            self.mean_offset_mss,
        );
        for c in &self.checks {
            s.push_str(&format!(
                "check {}: observed {:.4} expected {:.4} z {:.2}\n",
                c.name, c.observed, c.expected, c.z
            ));
        }
        s
    }
}

/// Recomputes the planted statistics from ground truth and fails with a
/// generation error if any lies more than 5 sigma from its expectation.
pub fn verify_cohort(cohort: &SyntheticCohort, spec: &CohortSpec) -> Result<CohortDiagnostics> {
    // [msi][band] -> (lym count, tiles, expected lym, variance)
    let mut cell = [[(0.0f64, 0.0f64, 0.0f64, 0.0f64); 2]; 2];
    let mut offsets = [Vec::new(), Vec::new()];
    // Mantel-Haenszel band/interior rate ratio over MSI-H slides.
    let (mut mh_num, mut mh_den) = (0.0, 0.0);
    for s in &cohort.slides {
        let msi = s.slide.labels.msi;
        let band = s.band_mask(spec);
        let frac = band.iter().filter(|&&b| b).count() as f64 / band.len() as f64;
        let probes = s.slide.bag.probes.as_ref().ok_or_else(|| {
            Error::Generation(format!("slide {} lacks probes", s.slide.bag.slide_id))
        })?;
        for ((&b, &t), p) in band.iter().zip(&s.tile_types).zip(probes) {
            if p.argmax() != t.probe_class() {
                return Err(Error::Generation(format!(
                    "slide {}: probe argmax disagrees with planted type",
                    s.slide.bag.slide_id
                )));
            }
            let q = lym_probability(spec, msi, b, frac);
            let c = &mut cell[msi as usize][b as usize];
            c.0 += (t == TileType::Lym) as u8 as f64;
            c.1 += 1.0;
            c.2 += q;
            c.3 += q * (1.0 - q);
        }
        offsets[msi as usize].push(s.offset_level);
        if msi {
            let (mut band_lym, mut band_n, mut int_lym, mut int_n) = (0.0, 0.0, 0.0, 0.0);
            for (&b, &t) in band.iter().zip(&s.tile_types) {
                let lym = (t == TileType::Lym) as u8 as f64;
                if b {
                    band_lym += lym;
                    band_n += 1.0;
                } else {
                    int_lym += lym;
                    int_n += 1.0;
                }
            }
            let total = band_n + int_n;
            mh_num += band_lym * int_n / total;
            mh_den += int_lym * band_n / total;
        }
    }

    let mut checks = Vec::new();
    for (msi, name) in [(1usize, "msi"), (0, "mss")] {
        for (band, region) in [(1usize, "band"), (0, "interior")] {
            let (obs, _, exp, var) = cell[msi][band];
            if var > 0.0 {
                checks.push(CountCheck {
                    name: format!("{name}_{region}_lym"),
                    observed: obs,
                    expected: exp,
                    z: (obs - exp) / var.sqrt(),
                });
            }
        }
    }
    let c = spec.offset_label_coupling;
    let level_var = spec.offset_noise.powi(2) + (1.0 - c).powi(2) / 12.0;
    for (msi, name) in [(1usize, "msi"), (0, "mss")] {
        let v = &offsets[msi];
        if v.is_empty() || level_var == 0.0 {
            continue;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let expected = c * msi as f64 + (1.0 - c) * 0.5;
        checks.push(CountCheck {
            name: format!("{name}_offset_level"),
            observed: mean,
            expected,
            z: (mean - expected) / (level_var / v.len() as f64).sqrt(),
        });
    }

    let rate = |m: usize, b: usize| {
        let (o, n, _, _) = cell[m][b];
        if n > 0.0 {
            o / n
        } else {
            f64::NAN
        }
    };
    let (msi_band, mss_band) = (rate(1, 1), rate(0, 1));
    let pooled_se = (msi_band * (1.0 - msi_band) / cell[1][1].1
        + mss_band * (1.0 - mss_band) / cell[0][1].1)
        .sqrt();
    let mean = |v: &Vec<f64>| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let diag = CohortDiagnostics {
        msi_band_lym_rate: msi_band,
        msi_interior_lym_rate: rate(1, 0),
        mss_band_lym_rate: mss_band,
        mss_interior_lym_rate: rate(0, 0),
        enrichment_ratio: mh_num / mh_den,
        class_difference_z: (msi_band - mss_band) / pooled_se,
        mean_offset_msi: mean(&offsets[1]),
        mean_offset_mss: mean(&offsets[0]),
        checks,
    };
    if let Some(bad) = diag.checks.iter().find(|c| c.z.abs() > 5.0) {
        return Err(Error::Generation(format!(
            "{}: observed {:.4} vs expected {:.4} (z = {:.2})",
            bad.name, bad.observed, bad.expected, bad.z
        )));
    }
    Ok(diag)
}
