//! Labeled site coordinates and background (non-site) sampling.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::MultiBandImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    pub id: String,
    pub x: usize,
    pub y: usize,
    pub label: u8,
}

/// Labeled pixel coordinates; labels are 0 (non-site) or 1 (site).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiteTable {
    pub rows: Vec<Site>,
}

impl SiteTable {
    pub fn new(rows: Vec<Site>) -> Result<Self> {
        let table = SiteTable { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.rows.iter().enumerate() {
            if a.label > 1 {
                return Err(Error::InvalidSites(format!(
                    "site {:?} has label {}, expected 0 or 1",
                    a.id, a.label
                )));
            }
            for b in self.rows.iter().skip(i + 1) {
                if a.id == b.id {
                    return Err(Error::InvalidSites(format!("duplicate id {:?}", a.id)));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.rows.iter().filter(|s| s.label == label).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|s| s.id.clone()).collect()
    }

    /// Check that every site lies within the image bounds.
    pub fn validate_against(&self, img: &MultiBandImage) -> Result<()> {
        for s in &self.rows {
            if s.x >= img.width() || s.y >= img.height() {
                return Err(Error::OutOfBounds(format!(
                    "site {:?} at ({}, {}) outside image {}x{}",
                    s.id,
                    s.x,
                    s.y,
                    img.width(),
                    img.height()
                )));
            }
        }
        Ok(())
    }

    /// Concatenate two tables (ids must stay unique).
    pub fn extend(&self, other: &SiteTable) -> Result<SiteTable> {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        SiteTable::new(rows)
    }
}

/// Parse a `id,x,y,label` CSV.
pub fn load_sites(path: &Path) -> Result<SiteTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    {
        let headers = reader.headers().map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let expected = ["id", "x", "y", "label"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: format!("expected header id,x,y,label, got {}", got.join(",")),
            });
        }
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                message: format!("row {}: missing field {}", line + 2, i),
            })
        };
        let parse_coord = |name: &str, v: &str| -> Result<usize> {
            v.parse::<i64>()
                .ok()
                .filter(|&n| n >= 0)
                .map(|n| n as usize)
                .ok_or_else(|| Error::Csv {
                    path: path.to_path_buf(),
                    message: format!("row {}: bad {name} value {v:?}", line + 2),
                })
        };
        let id = field(0)?.to_string();
        let x = parse_coord("x", field(1)?)?;
        let y = parse_coord("y", field(2)?)?;
        let label: u8 = field(3)?.parse().map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            message: format!("row {}: bad label {:?}", line + 2, field(3).unwrap_or("")),
        })?;
        if label > 1 {
            return Err(Error::InvalidSites(format!(
                "site {id:?} has label {label}, expected 0 or 1"
            )));
        }
        rows.push(Site { id, x, y, label });
    }
    SiteTable::new(rows)
}

pub fn save_sites(table: &SiteTable, path: &Path) -> Result<()> {
    let mut out = String::from("id,x,y,label\n");
    for s in &table.rows {
        writeln!(out, "{},{},{},{}", s.id, s.x, s.y, s.label).unwrap();
    }
    crate::util::write_atomic(path, out.as_bytes())
}

/// Draw `n0` label-0 locations uniformly at random (seeded) from the valid
/// pixels at Euclidean distance >= `min_dist_m` (in map meters, converted
/// through the header's pixel size) from every label-1 site. Exact label-1
/// coordinates are never eligible.
pub fn sample_background(
    img: &MultiBandImage,
    sites: &SiteTable,
    n0: usize,
    min_dist_m: f64,
    seed: u64,
) -> Result<SiteTable> {
    if min_dist_m < 0.0 || !min_dist_m.is_finite() {
        return Err(Error::InvalidParam("min_dist_m must be nonnegative".into()));
    }
    let min_dist_px = min_dist_m / img.header.pixel_size_m;
    let min_d2 = min_dist_px * min_dist_px;
    let positives: Vec<(usize, usize)> = sites
        .rows
        .iter()
        .filter(|s| s.label == 1)
        .map(|s| (s.x, s.y))
        .collect();

    let mut eligible: Vec<(usize, usize)> = Vec::new();
    for y in 0..img.height() {
        'px: for x in 0..img.width() {
            if !img.is_valid(x, y) {
                continue;
            }
            for &(sx, sy) in &positives {
                if sx == x && sy == y {
                    continue 'px;
                }
                let dx = sx as f64 - x as f64;
                let dy = sy as f64 - y as f64;
                if dx * dx + dy * dy < min_d2 {
                    continue 'px;
                }
            }
            eligible.push((x, y));
        }
    }
    if eligible.len() < n0 {
        return Err(Error::Infeasible(format!(
            "requested {n0} background points but only {} pixels satisfy the constraints",
            eligible.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let mut rows: Vec<Site> = eligible[..n0]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Site {
            id: format!("bg_{:04}", i + 1),
            x,
            y,
            label: 0,
        })
        .collect();
    // stable output order regardless of shuffle internals
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    SiteTable::new(rows)
}
