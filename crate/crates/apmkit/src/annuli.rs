//! Annuli focal statistics: per site and band, the median and median
//! absolute deviation over 30 concentric annuli.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::MultiBandImage;
use crate::sites::SiteTable;
use crate::util::median_in_place;

pub const ANNULI_COUNT: usize = 30;
pub const STATS_PER_BAND: usize = 2 * ANNULI_COUNT;

/// Inner/outer radius pairs for the 30 annuli, in pixels. The annulus holds
/// the integer offsets with inner <= norm < outer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiiTable {
    pub entries: Vec<(f64, f64)>,
}

impl RadiiTable {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.len() != ANNULI_COUNT {
            return Err(Error::InvalidParam(format!(
                "radii table must have {ANNULI_COUNT} entries, got {}",
                entries.len()
            )));
        }
        for (i, &(rin, rout)) in entries.iter().enumerate() {
            if !(rin >= 0.0 && rout.is_finite() && rin < rout) {
                return Err(Error::InvalidParam(format!(
                    "radii entry {}: inner {} must be < outer {}",
                    i + 1,
                    rin,
                    rout
                )));
            }
        }
        Ok(RadiiTable { entries })
    }

    /// The default table: three groups of ten annuli with spacings 3, 5
    /// and 7 pixels, reaching out to radius 69.
    pub fn default_table() -> Self {
        let mut entries = Vec::with_capacity(ANNULI_COUNT);
        for i in 0..10 {
            entries.push(((3 * i) as f64, (3 * i + 2) as f64));
        }
        for i in 0..10 {
            entries.push(((5 * i) as f64, (5 * i + 4) as f64));
        }
        for i in 0..10 {
            entries.push(((7 * i) as f64, (7 * i + 6) as f64));
        }
        RadiiTable::new(entries).expect("default table is valid")
    }

    pub fn max_outer_radius(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    /// Parse a `index,r_in,r_out` CSV with 30 rows.
    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let mut entries = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("row {}: expected index,r_in,r_out", line + 2),
                });
            }
            let rin: f64 = rec[1].trim().parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                message: format!("row {}: bad r_in {:?}", line + 2, &rec[1]),
            })?;
            let rout: f64 = rec[2].trim().parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                message: format!("row {}: bad r_out {:?}", line + 2, &rec[2]),
            })?;
            entries.push((rin, rout));
        }
        RadiiTable::new(entries)
    }

    pub fn to_csv_file(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,r_in,r_out\n");
        for (i, (rin, rout)) in self.entries.iter().enumerate() {
            writeln!(out, "{},{},{}", i + 1, rin, rout).unwrap();
        }
        crate::util::write_atomic(path, out.as_bytes())
    }
}

/// Precomputed integer pixel offsets per annulus.
#[derive(Debug, Clone)]
pub struct AnnulusOffsets {
    pub per_annulus: Vec<Vec<(i32, i32)>>,
}

/// Enumerate, for each radii entry, exactly the integer offsets (dx, dy)
/// with r_in <= sqrt(dx^2+dy^2) < r_out. Enumeration is row-major in
/// (dy, dx) and the membership test uses exact squared-integer arithmetic.
pub fn annulus_offsets(table: &RadiiTable) -> AnnulusOffsets {
    let per_annulus = table
        .entries
        .iter()
        .map(|&(rin, rout)| {
            let bound = rout.ceil() as i32;
            let rin2 = rin * rin;
            let rout2 = rout * rout;
            let mut offsets = Vec::new();
            for dy in -bound..=bound {
                for dx in -bound..=bound {
                    let d2 = (dx * dx + dy * dy) as f64;
                    if d2 >= rin2 && d2 < rout2 {
                        offsets.push((dx, dy));
                    }
                }
            }
            offsets
        })
        .collect();
    AnnulusOffsets { per_annulus }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Median,
    Mad,
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stat::Median => write!(f, "median"),
            Stat::Mad => write!(f, "mad"),
        }
    }
}

/// Column label: which band, which annulus (1-based) and which statistic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLabel {
    pub band: String,
    pub annulus: usize,
    pub stat: Stat,
}

impl std::fmt::Display for FeatureLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:a{:02}:{}", self.band, self.annulus, self.stat)
    }
}

impl FeatureLabel {
    pub fn parse(s: &str) -> Result<FeatureLabel> {
        let parts: Vec<&str> = s.rsplitn(3, ':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParam(format!("bad feature column {s:?}")));
        }
        let stat = match parts[0] {
            "median" => Stat::Median,
            "mad" => Stat::Mad,
            other => return Err(Error::InvalidParam(format!("bad statistic {other:?}"))),
        };
        let annulus: usize = parts[1]
            .strip_prefix('a')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::InvalidParam(format!("bad annulus field in {s:?}")))?;
        Ok(FeatureLabel {
            band: parts[2].to_string(),
            annulus,
            stat,
        })
    }
}

/// n x (60 * band_count) matrix of annuli statistics, with row ids matching
/// the site table and labeled columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub columns: Vec<FeatureLabel>,
    /// Row-major, ids.len() x columns.len().
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols()..(i + 1) * self.n_cols()]
    }

    pub fn to_csv_file(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id");
        for c in &self.columns {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            write!(out, "{id}").unwrap();
            for v in self.row(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        crate::util::write_atomic(path, out.as_bytes())
    }

    pub fn from_csv_file(path: &Path) -> Result<FeatureMatrix> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let columns: Vec<FeatureLabel> = {
            let headers = reader.headers().map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if headers.get(0) != Some("id") {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    message: "first column must be id".into(),
                });
            }
            headers.iter().skip(1).map(FeatureLabel::parse).collect::<Result<_>>()?
        };
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if rec.len() != columns.len() + 1 {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("row {}: wrong field count", line + 2),
                });
            }
            ids.push(rec[0].to_string());
            for f in rec.iter().skip(1) {
                let v: f64 = f.parse().map_err(|_| Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("row {}: bad value {f:?}", line + 2),
                })?;
                data.push(v);
            }
        }
        Ok(FeatureMatrix { ids, columns, data })
    }
}

fn band_labels(band: &str) -> Vec<FeatureLabel> {
    let mut labels = Vec::with_capacity(STATS_PER_BAND);
    for i in 1..=ANNULI_COUNT {
        labels.push(FeatureLabel { band: band.into(), annulus: i, stat: Stat::Median });
    }
    for i in 1..=ANNULI_COUNT {
        labels.push(FeatureLabel { band: band.into(), annulus: i, stat: Stat::Mad });
    }
    labels
}

/// Statistics for one site: for each band, the 30 annulus medians followed
/// by the 30 MADs. Annulus pixels outside the image or masked out are
/// excluded; an annulus with no valid pixel is an error naming the annulus.
pub fn site_features(
    img: &MultiBandImage,
    x: usize,
    y: usize,
    offsets: &AnnulusOffsets,
) -> std::result::Result<Vec<f64>, usize> {
    if x >= img.width() || y >= img.height() {
        return Err(0);
    }
    let w = img.width() as i32;
    let h = img.height() as i32;
    let mask = img.mask();
    let n_annuli = offsets.per_annulus.len();
    let mut features = vec![0.0f64; img.band_count() * 2 * n_annuli];

    // indices of valid in-bounds pixels, shared across bands
    let mut pixel_idx: Vec<Vec<usize>> = Vec::with_capacity(n_annuli);
    for (a, offs) in offsets.per_annulus.iter().enumerate() {
        let mut idx = Vec::with_capacity(offs.len());
        for &(dx, dy) in offs {
            let px = x as i32 + dx;
            let py = y as i32 + dy;
            if px < 0 || px >= w || py < 0 || py >= h {
                continue;
            }
            let p = py as usize * img.width() + px as usize;
            if mask[p] {
                idx.push(p);
            }
        }
        if idx.is_empty() {
            return Err(a + 1);
        }
        pixel_idx.push(idx);
    }

    let mut sample: Vec<f64> = Vec::new();
    for b in 0..img.band_count() {
        let band = img.band(b);
        let base = b * 2 * n_annuli;
        for (a, idx) in pixel_idx.iter().enumerate() {
            sample.clear();
            sample.extend(idx.iter().map(|&p| band[p] as f64));
            let med = median_in_place(&mut sample);
            features[base + a] = med;
            for v in sample.iter_mut() {
                *v = (*v - med).abs();
            }
            features[base + n_annuli + a] = median_in_place(&mut sample);
        }
    }
    Ok(features)
}

/// Feature matrix over all sites, row per site in input order; parallel over
/// sites with deterministic output.
pub fn extract_features(
    img: &MultiBandImage,
    sites: &SiteTable,
    table: &RadiiTable,
) -> Result<FeatureMatrix> {
    sites.validate_against(img)?;
    let offsets = annulus_offsets(table);
    let mut columns = Vec::with_capacity(img.band_count() * STATS_PER_BAND);
    for name in &img.header.band_names {
        columns.extend(band_labels(name));
    }

    let rows: Vec<std::result::Result<Vec<f64>, usize>> = sites
        .rows
        .par_iter()
        .map(|s| site_features(img, s.x, s.y, &offsets))
        .collect();

    let mut data = Vec::with_capacity(sites.len() * columns.len());
    for (s, row) in sites.rows.iter().zip(rows) {
        match row {
            Ok(values) => data.extend(values),
            Err(annulus) => {
                return Err(Error::EmptyAnnulus {
                    site_id: s.id.clone(),
                    band: "all".into(),
                    annulus,
                })
            }
        }
    }
    Ok(FeatureMatrix {
        ids: sites.ids(),
        columns,
        data,
    })
}
