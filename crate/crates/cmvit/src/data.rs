//! Image ingestion, dataset manifests, balancing, splitting, batching, and
//! the synthetic desk-scale corpus.
//!
//! Binary PPM (P6, maxval 255) is the only training ingestion format; PGM
//! (P5) is accepted by the feature-extraction CLI paths and produced for
//! inspection output. Images must already match the configured size; there
//! is no silent resampling.

use std::fmt::Write as _;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lbp::GrayImage;
use crate::tensor::{lit, Real, Tensor};

/// 8-bit RGB image, row-major, channels interleaved as stored in PPM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "RgbImage: {} bytes for {width}x{height}x3",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }
}

// ── netpbm codecs ───────────────────────────────────────────────────

// reads the three ASCII header fields after the magic, skipping whitespace
// and '#' comments; returns (width, height, maxval, payload offset)
fn parse_pnm_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    let mut pos = 2usize; // past magic
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("pnm: missing header field".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| Error::Parse(format!("pnm: bad header field {text}")))?;
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse("pnm: missing separator before payload".into()));
    }
    Ok((fields[0], fields[1], fields[2], pos + 1))
}

/// Decodes a binary PPM (P6, maxval 255).
pub fn load_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Parse(format!(
            "ppm: bad magic {:?}, expected P6",
            bytes.get(..2).map(String::from_utf8_lossy)
        )));
    }
    let (w, h, maxval, offset) = parse_pnm_header(bytes)?;
    if maxval != 255 {
        return Err(Error::Parse(format!("ppm: maxval {maxval}, only 255 supported")));
    }
    let need = w * h * 3;
    if bytes.len() < offset + need {
        return Err(Error::Parse(format!(
            "ppm: truncated payload, need {need} bytes, have {}",
            bytes.len().saturating_sub(offset)
        )));
    }
    RgbImage::new(w, h, bytes[offset..offset + need].to_vec())
}

pub fn save_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Decodes a binary PGM (P5, maxval 255); accepted only by the lbp/spectrum
/// CLI paths, never for training data.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Parse("pgm: bad magic, expected P5".into()));
    }
    let (w, h, maxval, offset) = parse_pnm_header(bytes)?;
    if maxval != 255 {
        return Err(Error::Parse(format!("pgm: maxval {maxval}, only 255 supported")));
    }
    let need = w * h;
    if bytes.len() < offset + need {
        return Err(Error::Parse("pgm: truncated payload".into()));
    }
    GrayImage::new(w, h, bytes[offset..offset + need].to_vec())
}

pub fn save_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.values);
    out
}

/// Channel-first [3, H, W] tensor with every value divided by 255.
pub fn normalize<T: Real>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width, img.height);
    let inv = T::one() / lit::<T>(255.0);
    let mut data = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = img.pixel(x, y);
            data[y * w + x] = lit::<T>(r as f64) * inv;
            data[h * w + y * w + x] = lit::<T>(g as f64) * inv;
            data[2 * h * w + y * w + x] = lit::<T>(b as f64) * inv;
        }
    }
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

// ── manifests ───────────────────────────────────────────────────────

/// One labeled sample reference; `path` is relative to the manifest root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
}

/// Ordered labeled sample list rooted at a directory, with provenance notes
/// for balancing and splitting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub provenance: Vec<String>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            root: root.into(),
            entries,
            provenance: Vec::new(),
        }
    }

    /// Reads a `path,label` CSV; paths are taken relative to the CSV's
    /// directory.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut lines = text.lines();
        match lines.next() {
            Some("path,label") => {}
            other => {
                return Err(Error::Parse(format!(
                    "manifest: expected header 'path,label', got {other:?}"
                )))
            }
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (p, l) = line.rsplit_once(',').ok_or_else(|| {
                Error::Parse(format!("manifest line {}: missing comma", lineno + 2))
            })?;
            let label = l
                .parse()
                .map_err(|_| Error::Parse(format!("manifest line {}: bad label {l}", lineno + 2)))?;
            entries.push(ManifestEntry {
                path: p.to_string(),
                label,
            });
        }
        Ok(DatasetManifest::new(root, entries))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,label\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{}", e.path, e.label);
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Auto-discovers `<root>/real/*.ppm` (label 0) and `<root>/fake/*.ppm`
    /// (label 1), each sorted by file name.
    pub fn discover(root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (dir, label) in [("real", 0usize), ("fake", 1usize)] {
            let sub = root.join(dir);
            if !sub.is_dir() {
                continue;
            }
            let mut names: Vec<String> = std::fs::read_dir(&sub)?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".ppm"))
                .collect();
            names.sort();
            for n in names {
                entries.push(ManifestEntry {
                    path: format!("{dir}/{n}"),
                    label,
                });
            }
        }
        if entries.is_empty() {
            return Err(Error::contract(format!(
                "no real/*.ppm or fake/*.ppm samples under {}",
                root.display()
            )));
        }
        Ok(DatasetManifest::new(root, entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-label counts, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let classes = self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0);
        let mut counts = vec![0usize; classes];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts();
        counts.windows(2).all(|w| w[0] == w[1])
    }
}

fn fisher_yates(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Reduces every class to the minority-class count by seeded uniform
/// sampling without replacement; manifest order is preserved.
pub fn balance_undersample(manifest: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    if manifest.is_empty() {
        return Err(Error::contract("balance_undersample: empty manifest"));
    }
    let counts = manifest.class_counts();
    if counts.len() < 2 || counts.contains(&0) {
        return Err(Error::contract(format!(
            "balance_undersample: every class needs at least one sample (counts {counts:?})"
        )));
    }
    let target = *counts.iter().min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = Vec::with_capacity(target * counts.len());
    for label in 0..counts.len() {
        let mut class_indices: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        fisher_yates(&mut class_indices, &mut rng);
        class_indices.truncate(target);
        selected.extend(class_indices);
    }
    selected.sort_unstable();
    let entries = selected
        .iter()
        .map(|&i| manifest.entries[i].clone())
        .collect();
    let mut out = DatasetManifest::new(manifest.root.clone(), entries);
    out.provenance = manifest.provenance.clone();
    out.provenance
        .push(format!("balance_undersample seed={seed} target={target}"));
    Ok(out)
}

/// Seeded stratified split into (train, val); both sides keep manifest
/// order and stay balanced when the input is balanced.
pub fn split(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::contract(format!(
            "split: val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    if manifest.is_empty() {
        return Err(Error::contract("split: empty manifest"));
    }
    let counts = manifest.class_counts();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_idx = Vec::new();
    let mut train_idx = Vec::new();
    for label in 0..counts.len() {
        let mut class_indices: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        let n_val = (class_indices.len() as f64 * val_fraction).round() as usize;
        fisher_yates(&mut class_indices, &mut rng);
        val_idx.extend(class_indices.drain(..n_val));
        train_idx.extend(class_indices);
    }
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |idx: &[usize], tag: &str| {
        let entries = idx.iter().map(|&i| manifest.entries[i].clone()).collect();
        let mut m = DatasetManifest::new(manifest.root.clone(), entries);
        m.provenance = manifest.provenance.clone();
        m.provenance
            .push(format!("split {tag} val_fraction={val_fraction} seed={seed}"));
        m
    };
    Ok((pick(&train_idx, "train"), pick(&val_idx, "val")))
}

// ── batching ────────────────────────────────────────────────────────

/// Per-epoch sample order: a Fisher-Yates shuffle seeded with seed XOR epoch.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed ^ epoch);
    fisher_yates(&mut order, &mut rng);
    order
}

/// Iterator of ([B, 3, S, S] tensor, label vector) batches; the final short
/// batch is emitted. Images that do not match `image_size` are rejected.
pub struct BatchIter<'a, T> {
    manifest: &'a DatasetManifest,
    order: Vec<usize>,
    batch_size: usize,
    image_size: usize,
    pos: usize,
    _marker: PhantomData<T>,
}

pub fn batch_iter<T: Real>(
    manifest: &DatasetManifest,
    batch_size: usize,
    image_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Result<BatchIter<'_, T>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_iter: batch_size must be positive"));
    }
    Ok(BatchIter {
        manifest,
        order: epoch_order(manifest.len(), shuffle_seed, epoch),
        batch_size,
        image_size,
        pos: 0,
        _marker: PhantomData,
    })
}

/// Loads one sample as a normalized [3, S, S] tensor, enforcing the size.
pub fn load_sample<T: Real>(
    manifest: &DatasetManifest,
    index: usize,
    image_size: usize,
) -> Result<Tensor<T>> {
    let entry = &manifest.entries[index];
    let bytes = std::fs::read(manifest.root.join(&entry.path))?;
    let img = load_ppm(&bytes)?;
    if img.width != image_size || img.height != image_size {
        return Err(Error::contract(format!(
            "sample {}: size {}x{} does not match configured image_size {image_size}",
            entry.path, img.width, img.height
        )));
    }
    Ok(normalize(&img))
}

impl<T: Real> Iterator for BatchIter<'_, T> {
    type Item = Result<(Tensor<T>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = &self.order[self.pos..end];
        self.pos = end;
        let s = self.image_size;
        let mut data = Vec::with_capacity(indices.len() * 3 * s * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            match load_sample::<T>(self.manifest, i, s) {
                Ok(t) => {
                    data.extend_from_slice(&t.data);
                    labels.push(self.manifest.entries[i].label);
                }
                Err(e) => return Some(Err(e)),
            }
        }
        let batch = Tensor::from_vec(&[indices.len(), 3, s, s], data).unwrap();
        Some(Ok((batch, labels)))
    }
}

// ── synthetic corpus ────────────────────────────────────────────────

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

// class 0: smooth low-frequency gradients plus mild noise
fn synth_real(size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let s = size as f64;
    let base = rng.gen_range(60.0..140.0);
    let gx = rng.gen_range(-50.0..50.0);
    let gy = rng.gen_range(-50.0..50.0);
    let amp = rng.gen_range(10.0..40.0);
    let fx = rng.gen_range(0..=2) as f64;
    let fy = rng.gen_range(0..=2) as f64;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let dc: [f64; 3] = [
        rng.gen_range(-12.0..12.0),
        rng.gen_range(-12.0..12.0),
        rng.gen_range(-12.0..12.0),
    ];
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let wave = amp
                * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / s + phase).sin();
            let v = base + gx * x as f64 / s + gy * y as f64 / s + wave;
            for ch in 0..3 {
                let noise = rng.gen_range(-4.0..4.0);
                pixels.push(clamp_u8(v + dc[ch] + noise));
            }
        }
    }
    RgbImage {
        width: size,
        height: size,
        pixels,
    }
}

// class 1: high-frequency checkerboard / stripe textures plus noise
fn synth_fake(size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let half_period = *[1usize, 2].get(rng.gen_range(0..2)).unwrap();
    let pattern = rng.gen_range(0..3);
    let amp = rng.gen_range(60.0..90.0);
    let dc: [f64; 3] = [
        rng.gen_range(-12.0..12.0),
        rng.gen_range(-12.0..12.0),
        rng.gen_range(-12.0..12.0),
    ];
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let cell = match pattern {
                0 => (x / half_period + y / half_period) % 2, // checkerboard
                1 => (x / half_period) % 2,                   // vertical stripes
                _ => (y / half_period) % 2,                   // horizontal stripes
            };
            let v = 128.0 + if cell == 0 { amp } else { -amp };
            for ch in 0..3 {
                let noise = rng.gen_range(-6.0..6.0);
                pixels.push(clamp_u8(v + dc[ch] + noise));
            }
        }
    }
    RgbImage {
        width: size,
        height: size,
        pixels,
    }
}

/// Writes a labeled synthetic corpus under `out_dir` (`real/` and `fake/`
/// subdirectories plus `manifest.csv`) and returns its manifest. The two
/// classes are separable by frequency-domain magnitude features.
pub fn gen_synthetic(
    n_per_class: usize,
    size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if !size.is_power_of_two() {
        return Err(Error::contract(format!(
            "gen_synthetic: size {size} must be a power of two"
        )));
    }
    std::fs::create_dir_all(out_dir.join("real"))?;
    std::fs::create_dir_all(out_dir.join("fake"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        let img = synth_real(size, &mut rng);
        let rel = format!("real/real_{i:04}.ppm");
        std::fs::write(out_dir.join(&rel), save_ppm(&img))?;
        entries.push(ManifestEntry {
            path: rel,
            label: 0,
        });
    }
    for i in 0..n_per_class {
        let img = synth_fake(size, &mut rng);
        let rel = format!("fake/fake_{i:04}.ppm");
        std::fs::write(out_dir.join(&rel), save_ppm(&img))?;
        entries.push(ManifestEntry {
            path: rel,
            label: 1,
        });
    }
    let manifest = DatasetManifest::new(out_dir, entries);
    manifest.save_csv(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lbp::to_gray;
    use crate::spectral::{fft_2d, magnitude_spectrum};

    fn tiny_manifest(counts: &[usize]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                entries.push(ManifestEntry {
                    path: format!("c{label}/img_{i:04}.ppm"),
                    label,
                });
            }
        }
        DatasetManifest::new("/nonexistent", entries)
    }

    #[test]
    fn ppm_round_trip() {
        let bytes = b"P6 2 2 255\n\x01\x02\x03\x04\x05\x06\x07\x08\x09\x0a\x0b\x0c";
        let img = load_ppm(bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixel(1, 1), (10, 11, 12));
        let saved = save_ppm(&img);
        assert_eq!(load_ppm(&saved).unwrap(), img);
    }

    #[test]
    fn ppm_rejects_pgm_magic() {
        let bytes = b"P5 2 2 255\n\x01\x02\x03\x04";
        assert!(matches!(load_ppm(bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn ppm_rejects_truncated_payload() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0u8; 11]);
        assert!(matches!(load_ppm(&bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn ppm_rejects_wrong_maxval() {
        let bytes = b"P6 1 1 65535\n\x00\x00\x00\x00\x00\x00";
        assert!(matches!(load_ppm(bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn ppm_header_comments() {
        let bytes = b"P6\n# a comment\n1 1\n255\n\x10\x20\x30";
        let img = load_ppm(bytes).unwrap();
        assert_eq!(img.pixel(0, 0), (0x10, 0x20, 0x30));
    }

    #[test]
    fn normalize_examples() {
        let img = RgbImage::new(1, 3, vec![255, 255, 255, 0, 0, 0, 128, 128, 128]).unwrap();
        let t = normalize::<f64>(&img);
        assert_eq!(t.shape, vec![3, 3, 1]);
        assert_eq!(t.data[0], 1.0);
        assert_eq!(t.data[1], 0.0);
        assert!((t.data[2] - 128.0 / 255.0).abs() < 1e-12);
        assert!((t.data[2] - 0.501961).abs() < 1e-6);
        assert!(t.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn balance_reduces_to_minority_count() {
        let m = tiny_manifest(&[100, 60]);
        let b = balance_undersample(&m, 3).unwrap();
        assert_eq!(b.class_counts(), vec![60, 60]);
        // deterministic: same seed selects the same ids
        let b2 = balance_undersample(&m, 3).unwrap();
        assert_eq!(b.entries, b2.entries);
        let b3 = balance_undersample(&m, 4).unwrap();
        assert_ne!(b.entries, b3.entries);
    }

    #[test]
    fn balance_is_idempotent_on_balanced_input() {
        let m = tiny_manifest(&[60, 60]);
        let b = balance_undersample(&m, 9).unwrap();
        assert_eq!(b.entries, m.entries);
    }

    #[test]
    fn balance_rejects_empty_class() {
        let m = tiny_manifest(&[5, 0]);
        assert!(balance_undersample(&m, 1).is_err());
        assert!(balance_undersample(&tiny_manifest(&[]), 1).is_err());
    }

    #[test]
    fn split_is_a_stratified_partition() {
        let m = tiny_manifest(&[50, 50]);
        let (train, val) = split(&m, 0.2, 11).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        assert_eq!(train.class_counts(), vec![40, 40]);
        assert_eq!(val.class_counts(), vec![10, 10]);
        // disjoint and exhaustive
        let mut all: Vec<&str> = train
            .entries
            .iter()
            .chain(&val.entries)
            .map(|e| e.path.as_str())
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
        // deterministic
        let (t2, v2) = split(&m, 0.2, 11).unwrap();
        assert_eq!(train.entries, t2.entries);
        assert_eq!(val.entries, v2.entries);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let m = tiny_manifest(&[4, 4]);
        assert!(split(&m, 0.0, 1).is_err());
        assert!(split(&m, 1.0, 1).is_err());
    }

    #[test]
    fn epoch_orders_differ_but_reproduce() {
        let o1 = epoch_order(10, 5, 0);
        let o2 = epoch_order(10, 5, 1);
        assert_ne!(o1, o2);
        assert_eq!(o1, epoch_order(10, 5, 0));
        let mut sorted = o1.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batches_cover_every_sample_once_with_short_tail() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_synthetic(5, 8, 21, dir.path()).unwrap();
        let batches: Vec<_> = batch_iter::<f32>(&m, 4, 8, 1, 0)
            .unwrap()
            .collect::<Result<Vec<_>>>()
            .unwrap();
        let sizes: Vec<usize> = batches.iter().map(|(_, l)| l.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let total_labels: usize = batches.iter().map(|(_, l)| l.iter().sum::<usize>()).sum();
        assert_eq!(total_labels, 5); // five fakes in ten samples
    }

    #[test]
    fn batch_rejects_size_mismatch_with_source_id() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_synthetic(2, 8, 22, dir.path()).unwrap();
        let err = batch_iter::<f32>(&m, 2, 16, 1, 0)
            .unwrap()
            .next()
            .unwrap()
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(".ppm"), "error should name the sample: {msg}");
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_counted() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = gen_synthetic(8, 32, 1, d1.path()).unwrap();
        let m2 = gen_synthetic(8, 32, 1, d2.path()).unwrap();
        assert_eq!(m1.class_counts(), vec![8, 8]);
        assert_eq!(m1.entries, m2.entries);
        for e in &m1.entries {
            let b1 = std::fs::read(d1.path().join(&e.path)).unwrap();
            let b2 = std::fs::read(d2.path().join(&e.path)).unwrap();
            assert_eq!(b1, b2, "file {} differs between same-seed runs", e.path);
        }
        assert!(gen_synthetic(1, 30, 1, d1.path()).is_err(), "non-pow2 size");
    }

    // mean spectral energy outside the lowest-frequency quadrant, per class
    fn offquadrant_energy(root: &Path, m: &DatasetManifest, label: usize) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for e in m.entries.iter().filter(|e| e.label == label) {
            let img = load_ppm(&std::fs::read(root.join(&e.path)).unwrap()).unwrap();
            let gray = to_gray(&img);
            let (h, w) = (gray.height, gray.width);
            let plane = Tensor::from_vec(
                &[h, w],
                gray.values.iter().map(|&v| v as f64).collect(),
            )
            .unwrap();
            let mag = magnitude_spectrum(&fft_2d(&plane).unwrap());
            for k in 0..h {
                for l in 0..w {
                    if !(k < h / 2 && l < w / 2) {
                        total += mag.data[k * w + l] * mag.data[k * w + l];
                    }
                }
            }
            count += 1;
        }
        total / count as f64
    }

    #[test]
    fn fake_class_has_more_high_frequency_energy() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_synthetic(12, 32, 7, dir.path()).unwrap();
        let real = offquadrant_energy(dir.path(), &m, 0);
        let fake = offquadrant_energy(dir.path(), &m, 1);
        assert!(
            fake > real,
            "expected fake off-quadrant energy {fake} > real {real}"
        );
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_synthetic(3, 8, 2, dir.path()).unwrap();
        let loaded = DatasetManifest::load_csv(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.entries, m.entries);
        let discovered = DatasetManifest::discover(dir.path()).unwrap();
        assert_eq!(discovered.entries, m.entries);
    }
}
