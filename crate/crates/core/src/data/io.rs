//! On-disk dataset format.
//!
//! A dataset directory holds an index file of whitespace-separated lines, each
//! listing `N` frame paths followed by one mask path, relative to the index
//! file's directory. Frames are 8-bit RGB PNG; masks are 8-bit single-channel
//! PNG with nonzero meaning lane. Blank lines and lines starting with `#` are
//! ignored.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{generate_clip, sample_with_stride, ChallengeMix, ImageSequence, SceneSpec};
use crate::error::{Error, Result};
use crate::mask::LaneMask;
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub frames: Vec<PathBuf>,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut paths: Vec<PathBuf> = line.split_whitespace().map(PathBuf::from).collect();
            if paths.len() < 2 {
                return Err(Error::Dataset(format!(
                    "index line {}: need at least one frame and a mask",
                    no + 1
                )));
            }
            let mask = paths.pop().expect("checked length");
            entries.push(IndexEntry { frames: paths, mask });
        }
        Ok(Self {
            root: root.into(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            for f in &e.frames {
                s.push_str(&f.to_string_lossy());
                s.push(' ');
            }
            s.push_str(&e.mask.to_string_lossy());
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb_png(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = frame
        .chw()
        .filter(|&(c, _, _)| c == 3)
        .ok_or_else(|| Error::shape("png", format!("expected 3×H×W frame, got {:?}", frame.shape())))?;
    let plane = h * w;
    let d = frame.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let k = y as usize * w + x as usize;
        Rgb([quantize(d[k]), quantize(d[plane + k]), quantize(d[2 * plane + k])])
    });
    debug_assert_eq!(c, 3);
    img.save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

pub fn write_mask_png(path: &Path, mask: &LaneMask) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

/// `3×H×W` frame scaled to `[0, 1]`.
pub fn read_rgb_png(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        let k = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + k] = p.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn read_mask_png(path: &Path) -> Result<LaneMask> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    LaneMask::new(h, w, img.pixels().map(|p| p.0[0] != 0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub sequences: Vec<ImageSequence>,
    /// One diagnostic per skipped entry.
    pub failures: Vec<String>,
}

impl LoadReport {
    pub fn failure_count(&self) -> usize {
        self.failures.len()
    }
}

pub fn load_sequence(index: &DatasetIndex, entry: usize, cfg: &LoadConfig) -> Result<ImageSequence> {
    let e = index
        .entries
        .get(entry)
        .ok_or_else(|| Error::Dataset(format!("entry {entry} out of range")))?;
    if e.frames.len() != cfg.frames {
        return Err(Error::Dataset(format!(
            "entry {entry}: {} frames listed, expected {}",
            e.frames.len(),
            cfg.frames
        )));
    }
    let mut frames = Vec::with_capacity(e.frames.len());
    for (i, p) in e.frames.iter().enumerate() {
        let f = read_rgb_png(&index.resolve(p))?;
        if f.shape()[1] != cfg.height || f.shape()[2] != cfg.width {
            return Err(Error::Dataset(format!(
                "entry {entry}: frame {i} ({}) is {}×{}, expected {}×{}",
                p.display(),
                f.shape()[1],
                f.shape()[2],
                cfg.height,
                cfg.width
            )));
        }
        frames.push(f);
    }
    let mask = read_mask_png(&index.resolve(&e.mask))?;
    ImageSequence::new(frames, mask, format!("entry {entry} ({})", e.mask.display()))
}

/// Loads every entry in index order; bad entries are skipped and reported.
pub fn load_dataset(index: &DatasetIndex, cfg: &LoadConfig) -> LoadReport {
    let mut report = LoadReport::default();
    for i in 0..index.entries.len() {
        match load_sequence(index, i, cfg) {
            Ok(s) => report.sequences.push(s),
            Err(e) => {
                log::warn!("skipping dataset entry {i}: {e}");
                report.failures.push(format!("entry {i}: {e}"));
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// One index entry per clip and stride.
    pub strides: Vec<usize>,
    pub seed: u64,
    pub challenges: ChallengeMix,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequences: 10,
            frames: 5,
            height: 128,
            width: 256,
            strides: vec![1],
            seed: 0,
            challenges: ChallengeMix::default(),
        }
    }
}

impl SynthConfig {
    /// Frames per rendered clip: enough for the largest stride.
    pub fn clip_len(&self) -> usize {
        let s = self.strides.iter().copied().max().unwrap_or(1);
        (self.frames - 1) * s + 1
    }

    /// Scene seed for clip `i`, independent of every other clip.
    pub fn scene_seed(&self, i: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        rng.next_u64()
    }

    pub fn scene(&self, i: usize) -> Result<SceneSpec> {
        SceneSpec::random(self.scene_seed(i), self.height, self.width, self.clip_len(), &self.challenges)
    }
}

/// Renders `cfg.sequences` clips under `dir` and writes the index file.
pub fn write_synth_dataset(dir: &Path, cfg: &SynthConfig) -> Result<DatasetIndex> {
    if cfg.sequences == 0 || cfg.frames == 0 || cfg.strides.is_empty() || cfg.strides.contains(&0) {
        return Err(Error::InvalidArgument(
            "synth needs at least one sequence, one frame and strides ≥ 1".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let len = cfg.clip_len();
    let digits = (len.max(2) - 1).to_string().len().max(2);
    let mut entries = Vec::new();
    for i in 0..cfg.sequences {
        let clip = generate_clip(&cfg.scene(i)?, len)?;
        let name = format!("clip_{i:04}");
        let clip_dir = dir.join(&name);
        fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
        let frame_path = |f: usize| PathBuf::from(&name).join(format!("frame_{f:0digits$}.png"));
        for (f, frame) in clip.frames.iter().enumerate() {
            write_rgb_png(&dir.join(frame_path(f)), frame)?;
        }
        let mask = PathBuf::from(&name).join("mask.png");
        write_mask_png(&dir.join(&mask), &clip.mask)?;
        for &s in &cfg.strides {
            match sample_with_stride(len, cfg.frames, s) {
                Ok(idx) => entries.push(IndexEntry {
                    frames: idx.into_iter().map(|k| frame_path(k - 1)).collect(),
                    mask: mask.clone(),
                }),
                Err(e) => log::warn!("{name}: {e}"),
            }
        }
    }
    let index = DatasetIndex {
        root: dir.to_path_buf(),
        entries,
    };
    index.write(&dir.join(INDEX_FILE))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            sequences: 3,
            frames: 3,
            height: 32,
            width: 32,
            strides: vec![1, 2],
            seed,
            challenges: ChallengeMix::default(),
        }
    }

    #[test]
    fn index_round_trip() {
        let text = "# comment\na.png b.png m.png\n\nc.png d.png n.png\n";
        let idx = DatasetIndex::parse(text, "/data").unwrap();
        assert_eq!(idx.entries.len(), 2);
        assert_eq!(idx.entries[1].mask, PathBuf::from("n.png"));
        let again = DatasetIndex::parse(&idx.to_text(), "/data").unwrap();
        assert_eq!(again, idx);
        assert!(DatasetIndex::parse("lonely.png\n", "/").is_err());
    }

    #[test]
    fn synth_write_load_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(7);
        let index = write_synth_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(index.entries.len(), 6);
        let reread = DatasetIndex::read(&dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(reread.entries, index.entries);
        let load = LoadConfig {
            frames: 3,
            height: 32,
            width: 32,
        };
        let report = load_dataset(&reread, &load);
        assert_eq!(report.failure_count(), 0);
        assert_eq!(report.sequences.len(), 6);

        // entry 1 is clip 0 at stride 2: frames 1, 3, 5 of a 5-frame clip
        let clip = generate_clip(&cfg.scene(0).unwrap(), cfg.clip_len()).unwrap();
        let loaded = &report.sequences[1];
        assert_eq!(loaded.mask, clip.mask);
        for (got, k) in loaded.frames.iter().zip([0usize, 2, 4]) {
            let max_err = got
                .data()
                .iter()
                .zip(clip.frames[k].data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err <= 0.5 / 255.0 + 1e-6, "frame {k}: {max_err}");
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_synth_dataset(a.path(), &small_cfg(9)).unwrap();
        write_synth_dataset(b.path(), &small_cfg(9)).unwrap();
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(&entry).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn bad_entries_are_skipped_with_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let mut index = write_synth_dataset(dir.path(), &small_cfg(3)).unwrap();
        index.entries[0].frames.pop();
        index.entries[2].frames[1] = PathBuf::from("missing.png");
        let report = load_dataset(
            &index,
            &LoadConfig {
                frames: 3,
                height: 32,
                width: 32,
            },
        );
        assert_eq!(report.sequences.len(), 4);
        assert_eq!(report.failure_count(), 2);
        assert!(report.failures[0].contains("2 frames listed"));
        assert!(report.failures[1].contains("missing.png"));

        let wrong_size = load_dataset(
            &index,
            &LoadConfig {
                frames: 3,
                height: 64,
                width: 32,
            },
        );
        assert!(wrong_size.sequences.is_empty());
    }
}
