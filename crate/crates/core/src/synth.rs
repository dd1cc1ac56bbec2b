//! Procedural manga-like rasters and the two editing tasks built on them.
//!
//! Base images are white pages with a few outlined shapes filled with
//! screentone (halftone dots, hatching or flat gray). Text-removal inputs add
//! speech balloons with glyph strokes; screentone inputs are the line art of
//! the base image.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, stream, Stream};
use crate::tensor::Tensor;
use crate::velocity::PromptId;

pub const DEFAULT_SIZE: usize = 32;
pub const MAX_SIZE: usize = 64;
/// Sobel magnitude at or above which a pixel counts as a line. A full-contrast
/// straight edge scores 4; isolated tone dots score at most 3.
pub const EDGE_THRESHOLD: f64 = 3.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    HalftoneDot,
    Hatch,
    Solid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreentonePattern {
    pub kind: PatternKind,
    /// Lattice period in pixels, at least 2.
    pub period: usize,
    pub phase: usize,
    /// Dot radius for halftones, gray level for solids.
    pub level: f64,
}

impl ScreentonePattern {
    pub fn random(rng: &mut impl Rng) -> Self {
        let kind = match rng.gen_range(0..3) {
            0 => PatternKind::HalftoneDot,
            1 => PatternKind::Hatch,
            _ => PatternKind::Solid,
        };
        let period = rng.gen_range(2..=5);
        let level = match kind {
            PatternKind::HalftoneDot => rng.gen_range(0.5..0.5 * period as f64 + 0.2),
            PatternKind::Hatch => 0.0,
            PatternKind::Solid => [0.0, 0.35, 0.65][rng.gen_range(0..3)],
        };
        Self {
            kind,
            period,
            phase: rng.gen_range(0..period),
            level,
        }
    }

    /// Tone at pixel `(x, y)`: 0 is ink, 1 is paper.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        let p = self.period.max(2);
        match self.kind {
            PatternKind::HalftoneDot => {
                let cx = ((x + self.phase) % p) as f64 - (p as f64 - 1.0) / 2.0;
                let cy = ((y + self.phase) % p) as f64 - (p as f64 - 1.0) / 2.0;
                if (cx * cx + cy * cy).sqrt() < self.level {
                    0.0
                } else {
                    1.0
                }
            }
            PatternKind::Hatch => {
                if (x + y + self.phase).is_multiple_of(p) {
                    0.0
                } else {
                    1.0
                }
            }
            PatternKind::Solid => self.level,
        }
    }
}

/// Square grayscale raster stored row-major as a `[side, side]` tensor.
fn blank(side: usize, value: f64) -> Tensor {
    Tensor::full(&[side, side], value)
}

fn check_side(side: usize) -> Result<()> {
    if !(8..=MAX_SIZE).contains(&side) {
        return Err(Error::Config(format!("image size {side} outside 8..={MAX_SIZE}")));
    }
    Ok(())
}

fn side_of(img: &Tensor) -> Result<usize> {
    match img.shape() {
        [h, w] if h == w => Ok(*h),
        other => Err(Error::dim("image", format!("expected a square raster, got {other:?}"))),
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect,
    Ellipse,
}

fn inside(shape: Shape, x: usize, y: usize, x0: usize, y0: usize, w: usize, h: usize) -> bool {
    if x < x0 || y < y0 || x >= x0 + w || y >= y0 + h {
        return false;
    }
    match shape {
        Shape::Rect => true,
        Shape::Ellipse => {
            let rx = w as f64 / 2.0;
            let ry = h as f64 / 2.0;
            let dx = (x as f64 + 0.5 - x0 as f64 - rx) / rx;
            let dy = (y as f64 + 0.5 - y0 as f64 - ry) / ry;
            dx * dx + dy * dy <= 1.0
        }
    }
}

/// A page of 2 to 4 outlined shapes filled with screentone. Deterministic in
/// `seed`.
pub fn gen_base_image(seed: u64, side: usize) -> Result<Tensor> {
    check_side(side)?;
    let mut rng = stream(seed, Stream::Data);
    let mut img = blank(side, 1.0);
    let n_shapes = rng.gen_range(2..=4);
    for _ in 0..n_shapes {
        let shape = if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
        let w = rng.gen_range(side / 4..=side * 3 / 4);
        let h = rng.gen_range(side / 4..=side * 3 / 4);
        let x0 = rng.gen_range(0..=side - w);
        let y0 = rng.gen_range(0..=side - h);
        let pattern = ScreentonePattern::random(&mut rng);
        let data = img.data_mut();
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                if !inside(shape, x, y, x0, y0, w, h) {
                    continue;
                }
                let boundary = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dx, dy)| {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    nx < 0 || ny < 0 || !inside(shape, nx as usize, ny as usize, x0, y0, w, h)
                });
                data[y * side + x] = if boundary { 0.0 } else { pattern.value(x, y) };
            }
        }
    }
    Ok(img)
}

struct Balloons {
    empty: Tensor,
    text: Tensor,
    /// 1 inside the balloon outlines.
    region: Tensor,
}

/// Draws 1 to 3 speech balloons (white, outlined) into `img`: the page with
/// empty balloons, the same page with glyph strokes inside them, and the
/// balloon interiors.
fn draw_balloons(img: &Tensor, seed: u64) -> Result<Balloons> {
    let side = side_of(img)?;
    if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("image must lie in [0, 1]".into()));
    }
    let mut rng = stream(seed, Stream::Glyphs);
    let mut empty = img.clone();
    let mut text = img.clone();
    let mut region = blank(side, 0.0);
    let n_balloons = rng.gen_range(1..=3);
    for _ in 0..n_balloons {
        let w = rng.gen_range(side * 7 / 32..=side * 11 / 32).max(7);
        let h = rng.gen_range(side * 5 / 32..=side * 8 / 32).max(5);
        let x0 = rng.gen_range(0..=side - w);
        let y0 = rng.gen_range(0..=side - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let edge = x == x0 || y == y0 || x == x0 + w - 1 || y == y0 + h - 1;
                let v = if edge { 0.0 } else { 1.0 };
                empty.data_mut()[y * side + x] = v;
                text.data_mut()[y * side + x] = v;
                region.data_mut()[y * side + x] = v;
            }
        }
        // glyphs: short vertical and horizontal strokes on a 3-pixel cell grid
        let mut first = true;
        let mut gx = x0 + 2;
        while gx + 1 < x0 + w - 1 {
            let mut gy = y0 + 2;
            while gy + 1 < y0 + h - 1 {
                if first || rng.gen_bool(0.8) {
                    let vertical = rng.gen_bool(0.5);
                    let len = rng.gen_range(1..=2);
                    for k in 0..=len {
                        let (px, py) = if vertical { (gx, gy + k) } else { (gx + k, gy) };
                        if px < x0 + w - 1 && py < y0 + h - 1 {
                            text.data_mut()[py * side + px] = 0.0;
                        }
                    }
                }
                first = false;
                gy += 3;
            }
            gx += 3;
        }
    }
    Ok(Balloons { empty, text, region })
}

/// The page with the balloons of [`render_text_glyphs`] for the same seed,
/// left empty.
pub fn render_balloons(img: &Tensor, seed: u64) -> Result<Tensor> {
    Ok(draw_balloons(img, seed)?.empty)
}

/// Draws 1 to 3 speech balloons (white, outlined) holding glyph strokes.
/// Returns the modified image and the mask of pixels that changed.
pub fn render_text_glyphs(img: &Tensor, seed: u64) -> Result<(Tensor, Tensor)> {
    let out = draw_balloons(img, seed)?.text;
    let mask = out.zip_map(img, |a, b| if (a - b).abs() > 1e-6 { 1.0 } else { 0.0 })?;
    Ok((out, mask))
}

/// Binary edge map: 1 where the Sobel gradient magnitude reaches
/// [`EDGE_THRESHOLD`], 0 elsewhere. Borders are handled by clamping.
pub fn extract_line_art(img: &Tensor) -> Result<Tensor> {
    let side = side_of(img)?;
    let px = |x: i64, y: i64| -> f64 {
        let cx = x.clamp(0, side as i64 - 1) as usize;
        let cy = y.clamp(0, side as i64 - 1) as usize;
        img.data()[cy * side + cx]
    };
    let mut out = blank(side, 0.0);
    for y in 0..side as i64 {
        for x in 0..side as i64 {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            if (gx * gx + gy * gy).sqrt() >= EDGE_THRESHOLD {
                out.data_mut()[y as usize * side + x as usize] = 1.0;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    TextRemoval,
    Screentone,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::TextRemoval => "text-removal",
            Task::Screentone => "screentone",
        }
    }

    pub fn prompt(self) -> PromptId {
        match self {
            Task::TextRemoval => PromptId::EditTextRemoval,
            Task::Screentone => PromptId::EditScreentone,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text-removal" => Ok(Task::TextRemoval),
            "screentone" => Ok(Task::Screentone),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditSample {
    pub index: usize,
    pub seed: u64,
    pub split: Split,
    pub prompt: PromptId,
    pub x_in: Tensor,
    pub x_gt: Tensor,
    /// 1 where `x_in` and `x_gt` differ.
    pub mask: Tensor,
    /// Region scored by the region metrics: the balloon interiors for text
    /// removal, the changed pixels for screentone synthesis.
    pub region: Tensor,
}

/// Every tenth sample (index 9, 19, ...) goes to the eval split.
pub fn split_of(index: usize) -> Split {
    if index % 10 == 9 {
        Split::Eval
    } else {
        Split::Train
    }
}

/// `n` samples of `task`. Text removal pairs (page with filled balloons, same
/// page with empty balloons); screentone pairs (line art drawn black on white,
/// base page). Sample `j` uses the seed
/// `derive(seed, Data, j)`.
pub fn build_dataset(n: usize, task: Task, seed: u64, side: usize) -> Result<Vec<EditSample>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    check_side(side)?;
    (0..n)
        .map(|index| {
            let sample_seed = derive(seed, Stream::Data, index as u64);
            let base = gen_base_image(sample_seed, side)?;
            let (x_in, x_gt, region) = match task {
                Task::TextRemoval => {
                    let b = draw_balloons(&base, sample_seed)?;
                    (b.text, b.empty, Some(b.region))
                }
                Task::Screentone => (extract_line_art(&base)?.map(|e| 1.0 - e), base, None),
            };
            let mask = x_in.zip_map(&x_gt, |a, b| if (a - b).abs() > 1e-6 { 1.0 } else { 0.0 })?;
            let region = region.unwrap_or_else(|| mask.clone());
            Ok(EditSample {
                index,
                seed: sample_seed,
                split: split_of(index),
                prompt: task.prompt(),
                x_in,
                x_gt,
                mask,
                region,
            })
        })
        .collect()
}

/// Encodes a `[h, w]` raster as binary PGM (P5, maxval 255). Values are
/// clamped to [0, 1] and rounded.
pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [h, w] => (*h, *w),
        other => return Err(Error::dim("encode_pgm", format!("expected rank 2, got {other:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Decodes a binary PGM with maxval 255 into a `[h, w]` raster in [0, 1].
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |why: &str| Error::Image(format!("bad PGM: {why}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
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
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not P5"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(bad("unsupported geometry or maxval"));
    }
    let pixels = &bytes[pos + 1..];
    if pixels.len() != w * h {
        return Err(bad("pixel count mismatch"));
    }
    Tensor::new(vec![h, w], pixels.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(img)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub split: Split,
    pub prompt: PromptId,
    pub x_in: String,
    pub x_gt: String,
    pub mask: String,
    pub region: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub seed: u64,
    pub size: usize,
    pub samples: Vec<ManifestEntry>,
}

/// Writes every sample as four PGM files under `dir` plus `manifest.json`
/// listing paths relative to `dir`.
pub fn export_dataset(samples: &[EditSample], task: Task, seed: u64, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let size = samples.first().map_or(0, |s| s.x_in.shape()[0]);
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let name = |kind: &str| format!("{}_{:05}_{kind}.pgm", task.as_str(), s.index);
        let (x_in, x_gt, mask, region) = (name("in"), name("gt"), name("mask"), name("region"));
        write_pgm(&dir.join(&x_in), &s.x_in)?;
        write_pgm(&dir.join(&x_gt), &s.x_gt)?;
        write_pgm(&dir.join(&mask), &s.mask)?;
        write_pgm(&dir.join(&region), &s.region)?;
        entries.push(ManifestEntry {
            index: s.index,
            seed: s.seed,
            split: s.split,
            prompt: s.prompt,
            x_in,
            x_gt,
            mask,
            region,
        });
    }
    let manifest = Manifest {
        task,
        seed,
        size,
        samples: entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_image_is_deterministic_and_bounded() {
        let a = gen_base_image(0, 32).unwrap();
        assert_eq!(a, gen_base_image(0, 32).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, gen_base_image(1, 32).unwrap());
    }

    #[test]
    fn base_image_mean_is_not_degenerate() {
        let mean: f64 = (0..1000).map(|s| gen_base_image(s, 32).unwrap().mean()).sum::<f64>() / 1000.0;
        assert!(mean > 0.2 && mean < 0.8, "mean {mean}");
    }

    #[test]
    fn glyph_masks() {
        for seed in 0..1000 {
            let base = gen_base_image(seed, 32).unwrap();
            let (x_in, mask) = render_text_glyphs(&base, seed).unwrap();
            let frac = mask.mean();
            assert!(frac > 0.0 && frac < 0.4, "seed {seed}: {frac}");
            for ((a, b), m) in x_in.data().iter().zip(base.data()).zip(mask.data()) {
                if *m == 0.0 {
                    assert_eq!(a, b);
                } else {
                    assert!((a - b).abs() > 1e-6);
                }
            }
        }
    }

    #[test]
    fn text_removal_masks_cover_only_glyphs() {
        for s in build_dataset(200, Task::TextRemoval, 3, 32).unwrap() {
            let frac = s.mask.mean();
            assert!(frac > 0.0 && frac < 0.4);
            for ((a, b), m) in s.x_in.data().iter().zip(s.x_gt.data()).zip(s.mask.data()) {
                if *m == 1.0 {
                    assert_eq!((*a, *b), (0.0, 1.0));
                }
            }
            for (m, r) in s.mask.data().iter().zip(s.region.data()) {
                assert!(*m <= *r);
            }
        }
    }

    #[test]
    fn glyphs_are_deterministic() {
        let base = gen_base_image(5, 32).unwrap();
        assert_eq!(
            render_text_glyphs(&base, 9).unwrap(),
            render_text_glyphs(&base, 9).unwrap()
        );
    }

    #[test]
    fn constant_image_has_no_edges() {
        for v in [0.0, 0.4, 1.0] {
            assert_eq!(extract_line_art(&blank(16, v)).unwrap().sum(), 0.0);
        }
    }

    #[test]
    fn vertical_step_edge() {
        let side = 16;
        let mut img = blank(side, 0.0);
        for y in 0..side {
            for x in 8..side {
                img.data_mut()[y * side + x] = 1.0;
            }
        }
        let edges = extract_line_art(&img).unwrap();
        for y in 0..side {
            for x in 0..side {
                let on = edges.data()[y * side + x] == 1.0;
                assert_eq!(on, x == 7 || x == 8, "({x}, {y})");
            }
        }
    }

    #[test]
    fn edges_of_edges() {
        // re-extraction outlines the first edge map rather than reproducing it
        let base = gen_base_image(3, 32).unwrap();
        let once = extract_line_art(&base).unwrap();
        let twice = extract_line_art(&once).unwrap();
        assert!(twice.sum() > 0.0);
    }

    #[test]
    fn dataset_invariants() {
        for task in [Task::TextRemoval, Task::Screentone] {
            let ds = build_dataset(10, task, 7, 32).unwrap();
            assert_eq!(ds.len(), 10);
            assert_eq!(ds.iter().filter(|s| s.split == Split::Eval).count(), 1);
            for s in &ds {
                assert_eq!(s.prompt, task.prompt());
                for img in [&s.x_in, &s.x_gt, &s.mask] {
                    assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
                }
                let diff = s.x_in.sub(&s.x_gt).unwrap();
                for (d, m) in diff.data().iter().zip(s.mask.data()) {
                    assert_eq!(*m == 1.0, d.abs() > 1e-6);
                }
            }
            assert_eq!(ds, build_dataset(10, task, 7, 32).unwrap());
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_images() {
        let ds = build_dataset(40, Task::TextRemoval, 1, 32).unwrap();
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                assert!(ds[i].x_gt.max_abs_diff(&ds[j].x_gt).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn pgm_round_trip() {
        let img = gen_base_image(11, 32).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
        let back = decode_pgm(&bytes).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-12);
        assert_eq!(encode_pgm(&back).unwrap(), bytes);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn size_limits() {
        assert!(gen_base_image(0, 64).is_ok());
        assert!(gen_base_image(0, 65).is_err());
        assert!(build_dataset(0, Task::TextRemoval, 0, 32).is_err());
    }
}
