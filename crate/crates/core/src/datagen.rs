//! Synthetic pavement images with a known distress mask.
//!
//! A seeded gray texture with an uneven illumination gradient gets at most
//! one distress drawn on it: a dark random-walk crack, a darker repaired
//! rectangle with a contrasting border, or a dark elliptical pothole. The
//! drawn area is controlled through a requested area ratio.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imageio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Normal,
    Crack,
    PatchRepair,
    Pothole,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Normal, Category::Crack, Category::PatchRepair, Category::Pothole];

    pub fn name(self) -> &'static str {
        match self {
            Category::Normal => "normal",
            Category::Crack => "crack",
            Category::PatchRepair => "patch_repair",
            Category::Pothole => "pothole",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

/// What to draw on one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistressSpec {
    pub category: Category,
    /// Requested fraction of distressed pixels; 0 for normal images.
    pub area_ratio: f64,
    pub texture_seed: u64,
}

/// A generated image and its distress mask, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    /// `size * size * 3` values in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub mask: Vec<bool>,
    pub size: usize,
}

impl GeneratedImage {
    pub fn distressed_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

const AREA_TOLERANCE: f64 = 0.3;
const MAX_ATTEMPTS: usize = 10;

fn background(size: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let base: f64 = rng.random_range(0.45..0.65);
    let (gx, gy): (f64, f64) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let tint: [f64; 3] = [
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.01..0.03),
            )
        })
        .collect();
    let grain = Normal::new(0.0, 0.035).unwrap();
    let mut px = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 / size as f64, c as f64 / size as f64);
            let mut v = base + gx * (x - 0.5) + gy * (y - 0.5);
            for &(fx, fy, ph, amp) in &waves {
                v += amp * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin();
            }
            v += grain.sample(rng);
            for t in tint {
                px.push((v + t) as f32);
            }
        }
    }
    px
}

fn paint_disk(mask: &mut [bool], size: usize, cy: f64, cx: f64, radius: f64) {
    let r0 = (cy - radius).floor().max(0.0) as usize;
    let r1 = ((cy + radius).ceil() as usize).min(size - 1);
    let c0 = (cx - radius).floor().max(0.0) as usize;
    let c1 = ((cx + radius).ceil() as usize).min(size - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= radius * radius + 0.25 {
                mask[r * size + c] = true;
            }
        }
    }
}

fn crack_mask(size: usize, target: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; size * size];
    let radius = if target > 300 {
        1.5
    } else if target > 120 {
        1.0
    } else {
        0.5
    };
    let s = size as f64;
    let (mut y, mut x) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s));
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let turn = Normal::new(0.0, 0.25).unwrap();
    let mut painted = 0;
    for _ in 0..target * 40 {
        paint_disk(&mut mask, size, y, x, radius);
        painted = mask.iter().filter(|&&m| m).count();
        if painted >= target {
            break;
        }
        heading += turn.sample(rng);
        let (ny, nx) = (y + heading.sin(), x + heading.cos());
        if ny < 1.0 || ny > s - 1.0 || nx < 1.0 || nx > s - 1.0 {
            heading += std::f64::consts::PI + turn.sample(rng);
            continue;
        }
        y = ny;
        x = nx;
    }
    let _ = painted;
    mask
}

fn rect_dims(size: usize, target: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let aspect: f64 = rng.random_range(0.5..2.0);
    let w = ((target as f64 * aspect).sqrt().round() as usize).clamp(1, size);
    let h = ((target as f64 / w as f64).round() as usize).clamp(1, size);
    (h, w)
}

fn patch_mask(size: usize, target: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (h, w) = rect_dims(size, target, rng);
    let top = rng.random_range(0..=size - h);
    let left = rng.random_range(0..=size - w);
    let mut mask = vec![false; size * size];
    for r in top..top + h {
        mask[r * size + left..r * size + left + w].fill(true);
    }
    mask
}

fn pothole_mask(size: usize, target: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let ratio: f64 = rng.random_range(0.6..1.6);
    let b = (target as f64 / (std::f64::consts::PI * ratio)).sqrt();
    let a = ratio * b;
    let s = size as f64;
    let cy = rng.random_range(b.min(s / 2.0)..=(s - b).max(s / 2.0));
    let cx = rng.random_range(a.min(s / 2.0)..=(s - a).max(s / 2.0));
    let mut mask = vec![false; size * size];
    for r in 0..size {
        for c in 0..size {
            let (dy, dx) = ((r as f64 + 0.5 - cy) / b, (c as f64 + 0.5 - cx) / a);
            mask[r * size + c] = dy * dy + dx * dx <= 1.0;
        }
    }
    mask
}

fn shade(pixels: &mut [f32], mask: &[bool], size: usize, category: Category, rng: &mut ChaCha8Rng) {
    let grain = Normal::new(0.0, 0.02).unwrap();
    let border = |r: usize, c: usize| {
        let inside = |r: isize, c: isize| {
            r >= 0 && c >= 0 && (r as usize) < size && (c as usize) < size && mask[r as usize * size + c as usize]
        };
        let (r, c) = (r as isize, c as isize);
        !(inside(r - 1, c) && inside(r + 1, c) && inside(r, c - 1) && inside(r, c + 1))
    };
    let level: f32 = match category {
        Category::Normal => return,
        Category::Crack => rng.random_range(0.08..0.18),
        Category::PatchRepair => rng.random_range(0.22..0.32),
        Category::Pothole => rng.random_range(0.03..0.1),
    };
    for r in 0..size {
        for c in 0..size {
            if !mask[r * size + c] {
                continue;
            }
            let v = match category {
                Category::PatchRepair if border(r, c) => 0.85,
                Category::Pothole if border(r, c) => level + 0.15,
                _ => level,
            } + grain.sample(rng) as f32;
            pixels[(r * size + c) * 3..][..3].fill(v);
        }
    }
}

/// Draws one image. Distressed images are regenerated (up to 10 attempts)
/// until the realised distressed area is within 30% of the request.
pub fn generate_image(spec: &DistressSpec, size: usize) -> Result<GeneratedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let mut pixels = background(size, &mut rng);
    if spec.category == Category::Normal {
        pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        return Ok(GeneratedImage {
            pixels,
            mask: vec![false; size * size],
            size,
        });
    }
    if !(spec.area_ratio > 0.0 && spec.area_ratio < 1.0) {
        return Err(Error::Data(format!(
            "distressed image needs an area ratio in (0, 1), got {}",
            spec.area_ratio
        )));
    }
    let total = (size * size) as f64;
    let target = ((spec.area_ratio * total).round() as usize).max(1);
    for _ in 0..MAX_ATTEMPTS {
        let mask = match spec.category {
            Category::Crack => crack_mask(size, target, &mut rng),
            Category::PatchRepair => patch_mask(size, target, &mut rng),
            Category::Pothole => pothole_mask(size, target, &mut rng),
            Category::Normal => unreachable!(),
        };
        let realised = mask.iter().filter(|&&m| m).count() as f64 / total;
        if (realised - spec.area_ratio).abs() <= AREA_TOLERANCE * spec.area_ratio {
            shade(&mut pixels, &mask, size, spec.category, &mut rng);
            pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            return Ok(GeneratedImage { pixels, mask, size });
        }
    }
    Err(Error::Data(format!(
        "could not realise {} with area ratio {} on a {size}x{size} image",
        spec.category, spec.area_ratio
    )))
}

/// SplitMix64 mixing of a base seed with a path of integers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub class_index: usize,
    pub area_ratio: f64,
    pub seed: u64,
}

/// Listing of one split. Class 0 is the normal class.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn file_name(split: Split) -> String {
        format!("{}_manifest.tsv", split.name())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# split\t{}\n# classes\t{}\n", self.split.name(), self.class_names.join("\t"));
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.path.display(),
                e.class_index,
                e.area_ratio,
                e.seed
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |n: usize, m: &str| Error::Data(format!("manifest line {}: {m}", n + 1));
        let mut split = None;
        let mut class_names = Vec::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "# split" => {
                    split = Some(match fields.get(1) {
                        Some(&"train") => Split::Train,
                        Some(&"test") => Split::Test,
                        other => return Err(bad(n, &format!("unknown split {other:?}"))),
                    })
                }
                "# classes" => class_names = fields[1..].iter().map(|s| s.to_string()).collect(),
                f if f.starts_with('#') => {}
                _ => {
                    if fields.len() != 4 {
                        return Err(bad(n, "expected path, class, area ratio and seed"));
                    }
                    let class_index: usize = fields[1].parse().map_err(|_| bad(n, "bad class index"))?;
                    if class_index >= class_names.len() {
                        return Err(bad(n, "class index out of range"));
                    }
                    entries.push(ManifestEntry {
                        path: PathBuf::from(fields[0]),
                        class_index,
                        area_ratio: fields[2].parse().map_err(|_| bad(n, "bad area ratio"))?,
                        seed: fields[3].parse().map_err(|_| bad(n, "bad seed"))?,
                    });
                }
            }
        }
        let split = split.ok_or_else(|| Error::Data("manifest has no split header".into()))?;
        if class_names.is_empty() {
            return Err(Error::Data("manifest has no class header".into()));
        }
        Ok(Self {
            split,
            class_names,
            entries,
        })
    }

    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let path = root.join(Self::file_name(split));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(Self::file_name(self.split));
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(&path, e))
    }

    /// Category of each class, by name.
    pub fn categories(&self) -> Result<Vec<Category>> {
        self.class_names.iter().map(|n| n.parse()).collect()
    }

    /// Regenerates the ground-truth distress mask of an entry.
    pub fn regenerate(&self, entry: &ManifestEntry, size: usize) -> Result<GeneratedImage> {
        let category = self.categories()?[entry.class_index];
        generate_image(
            &DistressSpec {
                category,
                area_ratio: entry.area_ratio,
                texture_seed: entry.seed,
            },
            size,
        )
    }
}

/// Per-class image counts and generation ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub image_size: usize,
    /// Normal must come first.
    pub categories: Vec<Category>,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub area_ratio_min: f64,
    pub area_ratio_max: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            categories: Category::ALL.to_vec(),
            train_counts: vec![500, 167, 167, 166],
            test_counts: vec![250, 84, 83, 83],
            area_ratio_min: 0.01,
            area_ratio_max: 0.15,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.categories.first() != Some(&Category::Normal) {
            return err("the first category must be normal".into());
        }
        let mut seen = self.categories.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.categories.len() || self.categories.len() < 2 {
            return err(format!("categories {:?} must be distinct and at least two", self.categories));
        }
        for counts in [&self.train_counts, &self.test_counts] {
            if counts.len() != self.categories.len() || counts.iter().any(|&c| c == 0) {
                return err(format!(
                    "need one count >= 1 per category {:?}, got {counts:?}",
                    self.categories
                ));
            }
        }
        if !(self.area_ratio_min > 0.0 && self.area_ratio_min <= self.area_ratio_max && self.area_ratio_max < 1.0) {
            return err(format!(
                "area ratio range [{}, {}] is invalid",
                self.area_ratio_min, self.area_ratio_max
            ));
        }
        Ok(())
    }

    /// Manifest entries for a split, without touching the filesystem.
    pub fn plan(&self, split: Split) -> DatasetManifest {
        let counts = match split {
            Split::Train => &self.train_counts,
            Split::Test => &self.test_counts,
        };
        let mut entries = Vec::new();
        for (class_index, (&category, &n)) in self.categories.iter().zip(counts).enumerate() {
            for i in 0..n {
                let seed = derive_seed(self.seed, &[split as u64 + 1, class_index as u64, i as u64]);
                let area_ratio = if category == Category::Normal {
                    0.0
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xA5EA]));
                    rng.random_range(self.area_ratio_min..=self.area_ratio_max)
                };
                entries.push(ManifestEntry {
                    path: PathBuf::from(split.name()).join(category.name()).join(format!("{i:05}.png")),
                    class_index,
                    area_ratio,
                    seed,
                });
            }
        }
        DatasetManifest {
            split,
            class_names: self.categories.iter().map(|c| c.name().to_string()).collect(),
            entries,
        }
    }
}

/// Writes both splits under `root` and returns their manifests.
pub fn make_dataset(config: &DatasetConfig, root: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
    config.validate()?;
    let mut out = Vec::new();
    for split in [Split::Train, Split::Test] {
        let manifest = config.plan(split);
        for e in &manifest.entries {
            let img = manifest.regenerate(e, config.image_size)?;
            let path = root.join(&e.path);
            let dir = path.parent().expect("entry paths have a parent");
            fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
            imageio::save_rgb(&path, &img.pixels, config.image_size, config.image_size)?;
        }
        manifest.save(root)?;
        out.push(manifest);
    }
    let test = out.pop().unwrap();
    Ok((out.pop().unwrap(), test))
}

/// A split read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// One `size * size * 3` image per manifest entry.
    pub images: Vec<Vec<f32>>,
    pub size: usize,
}

impl Dataset {
    /// Loads every image of a split; all must be `size x size`.
    pub fn load(root: &Path, split: Split, size: usize) -> Result<Self> {
        let manifest = DatasetManifest::load(root, split)?;
        if manifest.entries.is_empty() {
            return Err(Error::Data(format!("{} split under {} is empty", split.name(), root.display())));
        }
        let images = manifest
            .entries
            .iter()
            .map(|e| {
                let path = root.join(&e.path);
                let (px, w, h) = imageio::load_rgb(&path)?;
                if (w, h) != (size, size) {
                    return Err(Error::Data(format!("{}: {w}x{h}, expected {size}x{size}", path.display())));
                }
                Ok(px)
            })
            .collect::<Result<_>>()?;
        Ok(Self { manifest, images, size })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_indices(&self) -> Vec<usize> {
        self.manifest.entries.iter().map(|e| e.class_index).collect()
    }
}
