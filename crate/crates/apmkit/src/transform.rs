//! Band transformations: band difference ratios, NDVI and tasseled-cap
//! style linear combinations.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{MultiBandImage, RasterHeader};

/// Canonical names for the eight WorldView-2 spectral bands, in wavelength
/// order (coastal blue through near-infrared 2).
pub const WV2_BAND_NAMES: [&str; 8] = [
    "coastal_blue",
    "blue",
    "green",
    "yellow",
    "red",
    "red_edge",
    "nir1",
    "nir2",
];

/// Name of the topographic slope band.
pub const SLOPE_BAND: &str = "slope";

/// Names of the four derived tasseled-cap bands.
pub const KTT_BAND_NAMES: [&str; 4] = ["brightness", "greenness", "wetness", "ktt4"];

/// An ordered selection of bands; the order is the canonical order used for
/// ratio pair enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandSet {
    pub name: String,
    pub source_band_names: Vec<String>,
}

impl BandSet {
    pub fn new(name: impl Into<String>, source_band_names: Vec<String>) -> Self {
        BandSet {
            name: name.into(),
            source_band_names,
        }
    }
}

/// 4x8 matrix of tasseled-cap coefficients: rows brightness, greenness,
/// wetness and the fourth component; columns follow [`WV2_BAND_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct KttCoefficients {
    pub rows: [[f64; 8]; 4],
}

impl KttCoefficients {
    pub fn new(rows: [[f64; 8]; 4]) -> Result<Self> {
        for row in &rows {
            for v in row {
                if !v.is_finite() {
                    return Err(Error::InvalidParam(
                        "tasseled-cap coefficients must be finite".into(),
                    ));
                }
            }
        }
        Ok(KttCoefficients { rows })
    }

    /// Parse a headerless CSV of 4 rows x 8 columns.
    pub fn from_csv_str(text: &str, origin: &Path) -> Result<Self> {
        let mut rows = [[0.0f64; 8]; 4];
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != 4 {
            return Err(Error::Csv {
                path: origin.to_path_buf(),
                message: format!("expected 4 coefficient rows, got {}", lines.len()),
            });
        }
        for (i, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
            if fields.len() != 8 {
                return Err(Error::Csv {
                    path: origin.to_path_buf(),
                    message: format!("row {}: expected 8 columns, got {}", i + 1, fields.len()),
                });
            }
            for (j, f) in fields.iter().enumerate() {
                rows[i][j] = f.parse().map_err(|_| Error::Csv {
                    path: origin.to_path_buf(),
                    message: format!("row {}: bad value {f:?}", i + 1),
                })?;
            }
        }
        KttCoefficients::new(rows)
    }

    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, path)
    }

    /// The coefficients shipped with the crate (`data/ktt_default.csv`);
    /// meant to be replaced with locally calibrated values when available.
    pub fn default_coefficients() -> Self {
        Self::from_csv_str(
            include_str!("../data/ktt_default.csv"),
            Path::new("data/ktt_default.csv"),
        )
        .expect("bundled coefficients parse")
    }
}

/// Enumerate the canonical ratio pair order: (j, i) with j < i, lexicographic
/// over the band-set order.
pub fn ratio_pairs(band_count: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(band_count * (band_count - 1) / 2);
    for j in 0..band_count {
        for i in (j + 1)..band_count {
            pairs.push((j, i));
        }
    }
    pairs
}

/// Band difference ratios (B_i - B_j) / (B_i + B_j) for every pair of the
/// selected bands. Pixels with a zero denominator in any pair are masked,
/// as are pixels invalid in the source.
pub fn band_difference_ratios(img: &MultiBandImage, set: &BandSet) -> Result<MultiBandImage> {
    if set.source_band_names.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "band set {:?} selects {} bands, need at least 2",
            set.name,
            set.source_band_names.len()
        )));
    }
    let src: Vec<usize> = set
        .source_band_names
        .iter()
        .map(|n| img.band_index(n))
        .collect::<Result<_>>()?;
    let pairs = ratio_pairs(src.len());
    let npx = img.width() * img.height();

    let mut mask: Vec<bool> = img.mask().to_vec();
    let mut bands: Vec<Vec<f32>> = Vec::with_capacity(pairs.len());
    let mut names = Vec::with_capacity(pairs.len());
    for &(j, i) in &pairs {
        let bi = img.band(src[i]);
        let bj = img.band(src[j]);
        let mut out = vec![0.0f32; npx];
        for p in 0..npx {
            if !mask[p] {
                continue;
            }
            let a = bi[p] as f64;
            let b = bj[p] as f64;
            let denom = a + b;
            if denom == 0.0 {
                mask[p] = false;
            } else {
                out[p] = ((a - b) / denom) as f32;
            }
        }
        bands.push(out);
        names.push(format!(
            "bdr_{}_{}",
            set.source_band_names[i], set.source_band_names[j]
        ));
    }

    let mut header = RasterHeader::new(img.width(), img.height(), names, img.header.nodata_value);
    header.pixel_size_m = img.header.pixel_size_m;
    MultiBandImage::new(header, bands, mask)
}

/// (NIR - Red) / (NIR + Red) as a standalone single-band image, with the
/// same zero-denominator masking rule as the ratio transform.
pub fn ndvi(img: &MultiBandImage, nir_band: &str, red_band: &str) -> Result<MultiBandImage> {
    let set = BandSet::new("ndvi", vec![red_band.to_string(), nir_band.to_string()]);
    let mut out = band_difference_ratios(img, &set)?;
    out.header.band_names = vec!["ndvi".to_string()];
    Ok(out)
}

/// Apply the 4x8 coefficient matrix to the named spectral bands; each output
/// pixel is the matrix-vector product with the 8-band pixel vector.
pub fn tasseled_cap(
    img: &MultiBandImage,
    coeffs: &KttCoefficients,
    spectral_bands: &[String],
) -> Result<MultiBandImage> {
    if spectral_bands.len() != 8 {
        return Err(Error::InvalidParam(format!(
            "tasseled cap needs exactly 8 spectral bands, got {}",
            spectral_bands.len()
        )));
    }
    let src: Vec<usize> = spectral_bands
        .iter()
        .map(|n| img.band_index(n))
        .collect::<Result<_>>()?;
    let npx = img.width() * img.height();
    let mask = img.mask().to_vec();
    let mut bands = vec![vec![0.0f32; npx]; 4];
    for p in 0..npx {
        if !mask[p] {
            continue;
        }
        for (k, row) in coeffs.rows.iter().enumerate() {
            let mut acc = 0.0f64;
            for (c, &b) in src.iter().enumerate() {
                acc += row[c] * img.band(b)[p] as f64;
            }
            bands[k][p] = acc as f32;
        }
    }
    for band in &mut bands {
        for (v, &ok) in band.iter_mut().zip(&mask) {
            if ok && !v.is_finite() {
                return Err(Error::InvalidRaster(
                    "tasseled cap produced a non-finite value".into(),
                ));
            }
        }
    }
    let names = KTT_BAND_NAMES.iter().map(|s| s.to_string()).collect();
    let mut header = RasterHeader::new(img.width(), img.height(), names, img.header.nodata_value);
    header.pixel_size_m = img.header.pixel_size_m;
    MultiBandImage::new(header, bands, mask)
}

/// The named band configurations, plus pass-through and user-defined sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BandConfig {
    /// No transformation; bands used as-is.
    Identity,
    /// Ratios over every band of the input image, in image order.
    BdrAll,
    /// Ratios over slope, NIR-1, red edge, brightness, greenness, wetness.
    Bdr15,
    /// Ratios over slope and the 8 spectral bands.
    Bdr36,
    /// Ratios over slope, 8 spectral bands, brightness, greenness, wetness.
    Bdr66,
    /// Ratios over slope, 8 spectral bands and all 4 tasseled-cap bands.
    Bdr78,
    /// Ratios over an explicit list of band names.
    Custom(Vec<String>),
}

impl BandConfig {
    /// Parse a configuration name: `identity`, `bdr-all`, `BDR15`, `BDR36`,
    /// `BDR66`, `BDR78`, or `bdr(name1,name2,...)`.
    pub fn parse(s: &str) -> Result<BandConfig> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "identity" => return Ok(BandConfig::Identity),
            "bdr-all" | "bdrall" => return Ok(BandConfig::BdrAll),
            "bdr15" => return Ok(BandConfig::Bdr15),
            "bdr36" => return Ok(BandConfig::Bdr36),
            "bdr66" => return Ok(BandConfig::Bdr66),
            "bdr78" => return Ok(BandConfig::Bdr78),
            _ => {}
        }
        if let Some(inner) = lower.strip_prefix("bdr(").and_then(|r| r.strip_suffix(')')) {
            let names: Vec<String> = inner
                .split(',')
                .map(|n| n.trim().to_string())
                .filter(|n| !n.is_empty())
                .collect();
            if names.len() < 2 {
                return Err(Error::InvalidParam(format!(
                    "custom band set {s:?} must list at least two bands"
                )));
            }
            return Ok(BandConfig::Custom(names));
        }
        Err(Error::InvalidParam(format!(
            "unknown band configuration {s:?}"
        )))
    }

    pub fn name(&self) -> String {
        match self {
            BandConfig::Identity => "identity".into(),
            BandConfig::BdrAll => "bdr-all".into(),
            BandConfig::Bdr15 => "BDR15".into(),
            BandConfig::Bdr36 => "BDR36".into(),
            BandConfig::Bdr66 => "BDR66".into(),
            BandConfig::Bdr78 => "BDR78".into(),
            BandConfig::Custom(names) => format!("bdr({})", names.join(",")),
        }
    }

    /// Number of ratio bands the configuration produces on a `b`-band image
    /// (`b` only matters for `BdrAll`).
    pub fn output_band_count(&self, input_bands: usize) -> usize {
        let choose2 = |n: usize| n * (n - 1) / 2;
        match self {
            BandConfig::Identity => input_bands,
            BandConfig::BdrAll => choose2(input_bands),
            BandConfig::Bdr15 => choose2(6),
            BandConfig::Bdr36 => choose2(9),
            BandConfig::Bdr66 => choose2(12),
            BandConfig::Bdr78 => choose2(13),
            BandConfig::Custom(names) => choose2(names.len()),
        }
    }
}

fn wv2_names() -> Vec<String> {
    WV2_BAND_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Apply a named band configuration, deriving tasseled-cap bands on the fly
/// where the configuration calls for them.
pub fn build_band_configuration(
    img: &MultiBandImage,
    config: &BandConfig,
    ktt: &KttCoefficients,
) -> Result<MultiBandImage> {
    let slope = SLOPE_BAND.to_string();
    match config {
        BandConfig::Identity => Ok(img.clone()),
        BandConfig::BdrAll => {
            let set = BandSet::new("bdr-all", img.header.band_names.clone());
            band_difference_ratios(img, &set)
        }
        BandConfig::Custom(names) => {
            let set = BandSet::new(config.name(), names.clone());
            band_difference_ratios(img, &set)
        }
        BandConfig::Bdr36 => {
            let mut names = vec![slope];
            names.extend(wv2_names());
            let set = BandSet::new("BDR36", names);
            band_difference_ratios(img, &set)
        }
        BandConfig::Bdr15 => {
            let ktt_img = tasseled_cap(img, ktt, &wv2_names())?;
            let with_ktt = img.append_bands(&ktt_img)?;
            let names = vec![
                slope,
                "nir1".into(),
                "red_edge".into(),
                "brightness".into(),
                "greenness".into(),
                "wetness".into(),
            ];
            let set = BandSet::new("BDR15", names);
            band_difference_ratios(&with_ktt, &set)
        }
        BandConfig::Bdr66 => {
            let ktt_img = tasseled_cap(img, ktt, &wv2_names())?;
            let with_ktt = img.append_bands(&ktt_img)?;
            let mut names = vec![slope];
            names.extend(wv2_names());
            names.extend(["brightness".into(), "greenness".into(), "wetness".into()]);
            let set = BandSet::new("BDR66", names);
            band_difference_ratios(&with_ktt, &set)
        }
        BandConfig::Bdr78 => {
            let ktt_img = tasseled_cap(img, ktt, &wv2_names())?;
            let with_ktt = img.append_bands(&ktt_img)?;
            let mut names = vec![slope];
            names.extend(wv2_names());
            names.extend(KTT_BAND_NAMES.iter().map(|s| s.to_string()));
            let set = BandSet::new("BDR78", names);
            band_difference_ratios(&with_ktt, &set)
        }
    }
}
