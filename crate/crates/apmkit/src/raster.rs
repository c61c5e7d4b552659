//! Multi-band raster container and its on-disk format.
//!
//! A raster is stored as a pair of files: `<name>.json` holding the header
//! and `<name>.bin` holding the payload as width*height*band_count
//! little-endian 32-bit floats, band-sequential, row-major within a band.
//! Pixels equal to the header's nodata sentinel are invalid; validity is
//! shared across bands through a single mask.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE_F32LE: &str = "f32le";
pub const LAYOUT_BAND_SEQ: &str = "band_sequential_row_major";

fn default_pixel_size() -> f64 {
    2.0
}

fn default_dtype() -> String {
    DTYPE_F32LE.to_string()
}

fn default_layout() -> String {
    LAYOUT_BAND_SEQ.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub band_count: usize,
    pub band_names: Vec<String>,
    pub nodata_value: f32,
    #[serde(default = "default_pixel_size")]
    pub pixel_size_m: f64,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default = "default_layout")]
    pub layout: String,
}

impl RasterHeader {
    pub fn new(width: usize, height: usize, band_names: Vec<String>, nodata_value: f32) -> Self {
        RasterHeader {
            width,
            height,
            band_count: band_names.len(),
            band_names,
            nodata_value,
            pixel_size_m: default_pixel_size(),
            dtype: default_dtype(),
            layout: default_layout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidRaster("width and height must be >= 1".into()));
        }
        if self.band_count == 0 {
            return Err(Error::InvalidRaster("band_count must be >= 1".into()));
        }
        if self.band_names.len() != self.band_count {
            return Err(Error::InvalidRaster(format!(
                "band_names has {} entries, band_count is {}",
                self.band_names.len(),
                self.band_count
            )));
        }
        for (i, a) in self.band_names.iter().enumerate() {
            for b in self.band_names.iter().skip(i + 1) {
                if a == b {
                    return Err(Error::InvalidRaster(format!("duplicate band name {a:?}")));
                }
            }
        }
        if !self.nodata_value.is_finite() {
            return Err(Error::InvalidRaster("nodata_value must be finite".into()));
        }
        if self.dtype != DTYPE_F32LE {
            return Err(Error::InvalidRaster(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.layout != LAYOUT_BAND_SEQ {
            return Err(Error::InvalidRaster(format!("unsupported layout {:?}", self.layout)));
        }
        if self.pixel_size_m <= 0.0 || !self.pixel_size_m.is_finite() {
            return Err(Error::InvalidRaster("pixel_size_m must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels_per_band(&self) -> usize {
        self.width * self.height
    }
}

/// A band_count-tuple of co-registered grids with a shared nodata mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandImage {
    pub header: RasterHeader,
    /// Per band, height*width values in row-major order.
    bands: Vec<Vec<f32>>,
    /// true = valid; shared across all bands.
    mask: Vec<bool>,
}

impl MultiBandImage {
    /// Build an image, canonicalizing masked pixels to the nodata sentinel in
    /// every band and checking the invariants (no non-finite valid pixels).
    pub fn new(header: RasterHeader, mut bands: Vec<Vec<f32>>, mask: Vec<bool>) -> Result<Self> {
        header.validate()?;
        let npx = header.pixels_per_band();
        if bands.len() != header.band_count {
            return Err(Error::InvalidRaster(format!(
                "expected {} bands, got {}",
                header.band_count,
                bands.len()
            )));
        }
        if mask.len() != npx {
            return Err(Error::InvalidRaster(format!(
                "mask has {} entries, expected {}",
                mask.len(),
                npx
            )));
        }
        for band in &bands {
            if band.len() != npx {
                return Err(Error::InvalidRaster(format!(
                    "band has {} pixels, expected {}",
                    band.len(),
                    npx
                )));
            }
        }
        for band in &mut bands {
            for (v, &ok) in band.iter_mut().zip(&mask) {
                if ok {
                    if !v.is_finite() {
                        return Err(Error::InvalidRaster(
                            "non-finite value among valid pixels".into(),
                        ));
                    }
                } else {
                    *v = header.nodata_value;
                }
            }
        }
        Ok(MultiBandImage { header, bands, mask })
    }

    /// Image where every pixel is valid.
    pub fn from_bands(header: RasterHeader, bands: Vec<Vec<f32>>) -> Result<Self> {
        let npx = header.pixels_per_band();
        MultiBandImage::new(header, bands, vec![true; npx])
    }

    pub fn width(&self) -> usize {
        self.header.width
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    pub fn band_count(&self) -> usize {
        self.header.band_count
    }

    pub fn band(&self, b: usize) -> &[f32] {
        &self.bands[b]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn band_index(&self, name: &str) -> Result<usize> {
        self.header
            .band_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingBand(name.to_string()))
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.header.width + x
    }

    #[inline]
    pub fn get(&self, b: usize, x: usize, y: usize) -> f32 {
        self.bands[b][y * self.header.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.header.width + x]
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// New image with the bands whose names are listed, in that order.
    pub fn select_bands(&self, names: &[String]) -> Result<MultiBandImage> {
        let mut bands = Vec::with_capacity(names.len());
        for n in names {
            let b = self.band_index(n)?;
            bands.push(self.bands[b].clone());
        }
        let mut header = self.header.clone();
        header.band_count = names.len();
        header.band_names = names.to_vec();
        MultiBandImage::new(header, bands, self.mask.clone())
    }

    /// Append the bands of `other` (same dimensions); the masks are ANDed.
    pub fn append_bands(&self, other: &MultiBandImage) -> Result<MultiBandImage> {
        if other.width() != self.width() || other.height() != self.height() {
            return Err(Error::InvalidRaster(
                "cannot append bands with different dimensions".into(),
            ));
        }
        let mut header = self.header.clone();
        header.band_names.extend(other.header.band_names.iter().cloned());
        header.band_count = header.band_names.len();
        let mut bands = self.bands.clone();
        bands.extend(other.bands.iter().cloned());
        let mask = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(&a, &b)| a && b)
            .collect();
        MultiBandImage::new(header, bands, mask)
    }
}

fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

/// Load a raster given the path of its JSON header; the payload is expected
/// next to it with a `.bin` extension.
pub fn load_raster(path: &Path) -> Result<MultiBandImage> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: RasterHeader = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    header.validate()?;

    let bin = payload_path(path);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = header.pixels_per_band() * header.band_count;
    if bytes.len() != expected * 4 {
        return Err(Error::PayloadSizeMismatch {
            expected,
            actual: bytes.len() / 4,
        });
    }

    let npx = header.pixels_per_band();
    let mut bands = Vec::with_capacity(header.band_count);
    for b in 0..header.band_count {
        let start = b * npx * 4;
        let band: Vec<f32> = bytes[start..start + npx * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        bands.push(band);
    }

    // A pixel is invalid if any band carries the nodata sentinel there.
    let mut mask = vec![true; npx];
    for band in &bands {
        for (m, &v) in mask.iter_mut().zip(band) {
            if v == header.nodata_value {
                *m = false;
            }
        }
    }
    MultiBandImage::new(header, bands, mask)
}

/// Save a raster as `<path>.json` + `<path>.bin` (path should carry the
/// `.json` extension; the payload name is derived from it).
pub fn save_raster(img: &MultiBandImage, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&img.header).expect("header serializes");
    crate::util::write_atomic(path, text.as_bytes())?;

    let npx = img.header.pixels_per_band();
    let mut bytes = Vec::with_capacity(npx * img.header.band_count * 4);
    for band in &img.bands {
        for v in band {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::util::write_atomic(&payload_path(path), &bytes)
}

/// Crop to the window of width `w` and height `h` whose top-left corner is
/// (x0, y0); pixel (x, y) of the result equals source pixel (x0+x, y0+y).
pub fn crop(img: &MultiBandImage, x0: usize, y0: usize, w: usize, h: usize) -> Result<MultiBandImage> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidParam("crop window must be non-empty".into()));
    }
    if x0 + w > img.width() || y0 + h > img.height() {
        return Err(Error::OutOfBounds(format!(
            "crop window ({x0},{y0}) {w}x{h} exceeds image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut header = img.header.clone();
    header.width = w;
    header.height = h;

    let mut bands = Vec::with_capacity(img.band_count());
    for b in 0..img.band_count() {
        let src = img.band(b);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = (y0 + y) * img.width() + x0;
            out.extend_from_slice(&src[row..row + w]);
        }
        bands.push(out);
    }
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = (y0 + y) * img.width() + x0;
        mask.extend_from_slice(&img.mask[row..row + w]);
    }
    MultiBandImage::new(header, bands, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_image() -> MultiBandImage {
        let header = RasterHeader::new(3, 2, vec!["a".into(), "b".into()], -9999.0);
        let bands = vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
        ];
        MultiBandImage::from_bands(header, bands).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.json");
        let img = small_image();
        save_raster(&img, &path).unwrap();
        let back = load_raster(&path).unwrap();
        assert_eq!(img, back);

        // payload is bit-exact under a second save
        let bin1 = std::fs::read(dir.path().join("img.bin")).unwrap();
        save_raster(&back, &path).unwrap();
        let bin2 = std::fs::read(dir.path().join("img.bin")).unwrap();
        assert_eq!(bin1, bin2);
    }

    #[test]
    fn nodata_pixels_become_masked() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.json");
        let header = RasterHeader::new(2, 2, vec!["a".into()], -1.0);
        let img =
            MultiBandImage::from_bands(header.clone(), vec![vec![0.5, -1.0, 2.0, 3.0]]).unwrap();
        // from_bands marks everything valid; the sentinel only takes effect
        // through the file format
        save_raster(&img, &path).unwrap();
        let back = load_raster(&path).unwrap();
        assert_eq!(back.mask().iter().filter(|&&m| m).count(), 3);
        assert!(!back.is_valid(1, 0));
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.json");
        let img = small_image();
        save_raster(&img, &path).unwrap();
        let bin = dir.path().join("img.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        match load_raster(&path) {
            Err(Error::PayloadSizeMismatch { .. }) => {}
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_errors() {
        assert!(matches!(
            load_raster(Path::new("/nonexistent/x.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn non_finite_valid_pixel_rejected() {
        let header = RasterHeader::new(2, 1, vec!["a".into()], -1.0);
        let res = MultiBandImage::from_bands(header, vec![vec![1.0, f32::NAN]]);
        assert!(matches!(res, Err(Error::InvalidRaster(_))));
    }

    #[test]
    fn crop_identity_and_indexing() {
        let img = small_image();
        let same = crop(&img, 0, 0, img.width(), img.height()).unwrap();
        assert_eq!(img, same);

        let header = RasterHeader::new(10, 10, vec!["a".into()], -1.0);
        let band: Vec<f32> = (0..100).map(|i| i as f32).collect();
        let big = MultiBandImage::from_bands(header, vec![band]).unwrap();
        let c = crop(&big, 2, 2, 3, 3).unwrap();
        assert_eq!(c.get(0, 0, 0), big.get(0, 2, 2));
        assert_eq!(c.get(0, 2, 1), big.get(0, 4, 3));
    }

    #[test]
    fn crop_out_of_bounds_errors() {
        let img = small_image();
        assert!(matches!(
            crop(&img, 1, 0, img.width(), 1),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn nested_crops_compose() {
        let header = RasterHeader::new(12, 9, vec!["a".into()], -1.0);
        let band: Vec<f32> = (0..108).map(|i| (i * 7 % 13) as f32).collect();
        let img = MultiBandImage::from_bands(header, vec![band]).unwrap();
        let ab = crop(&crop(&img, 2, 1, 8, 7).unwrap(), 3, 2, 4, 4).unwrap();
        let direct = crop(&img, 5, 3, 4, 4).unwrap();
        assert_eq!(ab, direct);
    }

    #[test]
    fn duplicate_band_names_rejected() {
        let header = RasterHeader::new(1, 1, vec!["a".into(), "a".into()], -1.0);
        assert!(matches!(header.validate(), Err(Error::InvalidRaster(_))));
    }
}
