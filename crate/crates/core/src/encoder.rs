//! Fingerprint images: scans re-arranged onto a square pixel grid.
//!
//! Access points are ordered by first appearance in the training data and
//! laid out row-major on a `side x side` grid, `side = ceil(sqrt(n_ap))`.
//! A heard AP becomes `rss + 200` (so -99..-30 dBm maps to 101..170), an
//! unheard AP and every padding pixel become 0.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetKind, RssSample};
use crate::error::{Error, Result};

pub const RSS_OFFSET: i32 = 200;

/// Frozen AP-to-pixel layout.
#[derive(Debug, Clone, Serialize)]
pub struct ApDirectory {
    order: Vec<String>,
    side: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct DirectoryRepr {
    order: Vec<String>,
    side: usize,
}

impl<'de> Deserialize<'de> for ApDirectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = DirectoryRepr::deserialize(d)?;
        let dir = ApDirectory::from_order(repr.order).map_err(serde::de::Error::custom)?;
        if dir.side != repr.side {
            return Err(serde::de::Error::custom(format!(
                "side {} does not match {} APs",
                repr.side,
                dir.n_ap()
            )));
        }
        Ok(dir)
    }
}

impl PartialEq for ApDirectory {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
    }
}

/// Smallest `side` with `side * side >= n`.
pub fn side_for(n: usize) -> usize {
    let mut side = (n as f64).sqrt() as usize;
    while side * side < n {
        side += 1;
    }
    while side > 0 && (side - 1) * (side - 1) >= n {
        side -= 1;
    }
    side
}

impl ApDirectory {
    pub fn from_order(order: Vec<String>) -> Result<Self> {
        if order.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut index = HashMap::with_capacity(order.len());
        for (i, ap) in order.iter().enumerate() {
            if index.insert(ap.clone(), i).is_some() {
                return Err(Error::InvalidDataset(format!("AP {ap} listed twice")));
            }
        }
        let side = side_for(order.len());
        Ok(ApDirectory { order, side, index })
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_ap(&self) -> usize {
        self.order.len()
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn index_of(&self, ap: &str) -> Option<usize> {
        self.index.get(ap).copied()
    }

    /// `(row, col)` of the AP at `order[k]`.
    pub fn cell(&self, k: usize) -> (usize, usize) {
        (k / self.side, k % self.side)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn build_directory(train: &Dataset) -> Result<ApDirectory> {
    if train.kind() != DatasetKind::Train {
        return Err(Error::InvalidDataset(format!(
            "AP directory must be built from training data, got {}",
            train.kind()
        )));
    }
    let mut order = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for s in train.samples() {
        for r in &s.readings {
            if seen.insert(r.ap.as_str()) {
                order.push(r.ap.clone());
            }
        }
    }
    ApDirectory::from_order(order)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintImage {
    side: usize,
    pixels: Vec<u8>,
    pub label: Option<u32>,
}

impl FingerprintImage {
    pub fn new(side: usize, pixels: Vec<u8>, label: Option<u32>) -> Result<Self> {
        if pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "{} pixels for a {side}x{side} image",
                pixels.len()
            )));
        }
        Ok(FingerprintImage {
            side,
            pixels,
            label,
        })
    }

    pub fn zeros(side: usize) -> Self {
        FingerprintImage {
            side,
            pixels: vec![0; side * side],
            label: None,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Row-major pixel intensities.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.side + col]
    }
}

pub fn encode_sample(s: &RssSample, dir: &ApDirectory) -> FingerprintImage {
    let mut pixels = vec![0u8; dir.pixels()];
    for r in &s.readings {
        if let Some(k) = dir.index_of(&r.ap) {
            pixels[k] = (r.rss + RSS_OFFSET).clamp(0, 255) as u8;
        }
    }
    FingerprintImage {
        side: dir.side(),
        pixels,
        label: s.position_id,
    }
}

pub fn encode_samples(samples: &[RssSample], dir: &ApDirectory) -> Vec<FingerprintImage> {
    samples.par_iter().map(|s| encode_sample(s, dir)).collect()
}

pub fn encode_dataset(ds: &Dataset, dir: &ApDirectory) -> Vec<FingerprintImage> {
    encode_samples(ds.samples(), dir)
}

/// Plain (P2) greymap, maxval 255, one image row per line.
pub fn image_to_pgm(img: &FingerprintImage) -> String {
    let mut out = format!("P2\n{} {}\n255\n", img.side, img.side);
    for row in img.pixels.chunks(img.side.max(1)) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn export_image(img: &FingerprintImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image_to_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Reads a square P2 or P5 greymap with maxval 255.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<FingerprintImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<FingerprintImage> {
    let bad = |m: &str| Error::Shape(format!("pgm: {m}"));
    // Header tokens: magic, width, height, maxval; comments start with '#'.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    let num = |t: &str| t.parse::<usize>().map_err(|_| bad("invalid number"));
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if w != h {
        return Err(bad("image is not square"));
    }
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    let pixels: Vec<u8> = match tokens[0] {
        "P5" => {
            let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
            if data.len() < w * h {
                return Err(bad("truncated raster"));
            }
            data[..w * h].to_vec()
        }
        "P2" => {
            let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("raster"))?;
            text.split_ascii_whitespace()
                .map(|t| t.parse::<u8>().map_err(|_| bad("invalid pixel")))
                .collect::<Result<_>>()?
        }
        _ => return Err(bad("unsupported magic")),
    };
    FingerprintImage::new(w, pixels, None)
}
