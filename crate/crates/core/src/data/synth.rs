//! Procedural road scenes: quadratic lanes over a graded road surface with
//! per-frame motion and optional corruption challenges.
//!
//! All randomness comes from ChaCha8 seeded with a `u64`, so a seed yields the
//! same pixels on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageSequence;
use crate::error::{Error, Result};
use crate::mask::LaneMask;
use crate::tensor::Tensor;

/// Dashed marking: visible where `(y + phase + speed·t) mod (on + off) < on`,
/// `t` being the frame offset from the labeled frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dash {
    pub on: f64,
    pub off: f64,
    pub phase: f64,
    pub speed: f64,
}

impl Dash {
    pub fn is_on(&self, y: usize, offset: f64) -> bool {
        (y as f64 + self.phase + self.speed * offset).rem_euclid(self.on + self.off) < self.on
    }
}

/// Lane centre on the labeled frame: `x(v) = c₀ + c₁v + c₂v²` with
/// `v = (y + ½)/H` for pixel row `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneSpec {
    pub coeffs: [f64; 3],
    /// Rendered width is `2·half_width` pixels.
    pub half_width: f64,
    pub dash: Option<Dash>,
    pub color: [f64; 3],
}

/// Frame at offset `t ≤ 0` from the labeled frame maps a centre `x` to
/// `W/2 + (x − W/2)(1 + scale_rate·t) + drift·t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub drift: f64,
    pub scale_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// Solid block painted over the labeled frame only.
#[derive(Debug, Clone, PartialEq)]
pub struct Occluder {
    pub rect: Rect,
    pub color: [f64; 3],
}

/// Rows `top..top+height` darkened by `factor` on every frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowBand {
    pub top: usize,
    pub height: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Challenges {
    pub occluders: Vec<Occluder>,
    pub shadow: Option<ShadowBand>,
    pub brightness: Option<f64>,
    /// 3×3 box blur on every frame.
    pub blur: bool,
}

/// Road colour blends from `far` at the top row to `near` at the bottom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadStyle {
    pub far: [f64; 3],
    pub near: [f64; 3],
    /// Uniform per-pixel noise amplitude.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Frames rendered; the last one is labeled.
    pub frames: usize,
    pub lanes: Vec<LaneSpec>,
    pub motion: Motion,
    pub road: RoadStyle,
    pub challenges: Challenges,
    pub seed: u64,
}

/// Probability of each challenge appearing in a random scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChallengeMix {
    pub occlusion: f64,
    pub shadow: f64,
    pub brightness: f64,
    pub blur: f64,
}

impl ChallengeMix {
    pub fn none() -> Self {
        Self {
            occlusion: 0.0,
            shadow: 0.0,
            brightness: 0.0,
            blur: 0.0,
        }
    }

    pub fn occlusion_only() -> Self {
        Self {
            occlusion: 1.0,
            ..Self::none()
        }
    }
}

impl Default for ChallengeMix {
    fn default() -> Self {
        Self {
            occlusion: 0.2,
            shadow: 0.2,
            brightness: 0.2,
            blur: 0.2,
        }
    }
}

/// Occluder width as a fraction of the image width.
const OCCLUDER_WIDTH: std::ops::Range<f64> = 0.5..0.7;

fn coverage(center: f64, half_width: f64, x: usize) -> f64 {
    let x = x as f64;
    ((x + 1.0).min(center + half_width) - x.max(center - half_width)).clamp(0.0, 1.0)
}

impl SceneSpec {
    /// Offset of `frame` from the labeled frame, `≤ 0`.
    pub fn offset(&self, frame: usize) -> f64 {
        frame as f64 - (self.frames as f64 - 1.0)
    }

    pub fn lane_center(&self, lane: usize, y: usize, frame: usize) -> f64 {
        let [c0, c1, c2] = self.lanes[lane].coeffs;
        let v = (y as f64 + 0.5) / self.height as f64;
        let x = c0 + c1 * v + c2 * v * v;
        let t = self.offset(frame);
        let mid = self.width as f64 / 2.0;
        mid + (x - mid) * (1.0 + self.motion.scale_rate * t) + self.motion.drift * t
    }

    /// Same scene rendered over a different number of frames, labeled frame
    /// unchanged.
    pub fn with_frames(&self, frames: usize) -> Self {
        Self {
            frames,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        if h == 0 || w == 0 || self.frames == 0 {
            return Err(Error::Geometry(format!("empty scene {h}×{w}×{}", self.frames)));
        }
        if !(2..=4).contains(&self.lanes.len()) {
            return Err(Error::Geometry(format!("{} lanes, expected 2 to 4", self.lanes.len())));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if !(1.0..=2.0).contains(&lane.half_width) {
                return Err(Error::Geometry(format!(
                    "lane {i} half-width {} outside [1, 2]",
                    lane.half_width
                )));
            }
            if let Some(d) = lane.dash {
                if !(d.on > 0.0 && d.off > 0.0) {
                    return Err(Error::Geometry(format!("lane {i} has a degenerate dash pattern")));
                }
            }
        }
        for f in 0..self.frames {
            for y in 0..h {
                let mut spans: Vec<(f64, f64)> = (0..self.lanes.len())
                    .map(|l| (self.lane_center(l, y, f), self.lanes[l].half_width))
                    .collect();
                for (l, &(c, hw)) in spans.iter().enumerate() {
                    if !(c.is_finite() && c - hw >= 0.0 && c + hw <= w as f64) {
                        return Err(Error::Geometry(format!(
                            "lane {l} leaves the image at frame {f}, row {y} (centre {c:.2})"
                        )));
                    }
                }
                spans.sort_by(|a, b| a.0.total_cmp(&b.0));
                for pair in spans.windows(2) {
                    if pair[1].0 - pair[0].0 < pair[0].1 + pair[1].1 + 1.0 {
                        return Err(Error::Geometry(format!("lanes touch at frame {f}, row {y}")));
                    }
                }
            }
        }
        for (i, o) in self.challenges.occluders.iter().enumerate() {
            let r = o.rect;
            if r.height == 0 || r.width == 0 || r.top + r.height > h || r.left + r.width > w {
                return Err(Error::Geometry(format!("occluder {i} {r:?} outside {h}×{w}")));
            }
        }
        if let Some(s) = self.challenges.shadow {
            if s.height == 0 || s.top + s.height > h || !(0.0..=1.0).contains(&s.factor) {
                return Err(Error::Geometry(format!("invalid shadow band {s:?}")));
            }
        }
        if let Some(b) = self.challenges.brightness {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Geometry(format!("brightness factor {b} must be positive")));
            }
        }
        Ok(())
    }

    /// Pixels covered by any occluder.
    pub fn occlusion_region(&self) -> LaneMask {
        let mut m = LaneMask::empty(self.height, self.width);
        for o in &self.challenges.occluders {
            for y in o.rect.top..o.rect.top + o.rect.height {
                for x in o.rect.left..o.rect.left + o.rect.width {
                    m.set(y, x, true);
                }
            }
        }
        m
    }

    /// Per-pixel lane coverage in `[0, 1]` on `frame`, dashes applied.
    pub fn coverage(&self, frame: usize) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let t = self.offset(frame);
        let mut cov = vec![0.0f64; h * w];
        for (l, lane) in self.lanes.iter().enumerate() {
            for y in 0..h {
                if lane.dash.is_some_and(|d| !d.is_on(y, t)) {
                    continue;
                }
                let c = self.lane_center(l, y, frame);
                let lo = (c - lane.half_width).floor().max(0.0) as usize;
                let hi = ((c + lane.half_width).ceil() as usize).min(w);
                for x in lo..hi {
                    let k = y * w + x;
                    cov[k] = cov[k].max(coverage(c, lane.half_width, x));
                }
            }
        }
        cov
    }

    /// Random scene; rejected geometry is redrawn from the same stream.
    pub fn random(seed: u64, height: usize, width: usize, frames: usize, mix: &ChallengeMix) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_err = None;
        for _ in 0..64 {
            let spec = Self::draw(&mut rng, seed, height, width, frames, mix);
            match spec.validate() {
                Ok(()) => return Ok(spec),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::Geometry("no valid scene".into())))
    }

    fn draw(rng: &mut ChaCha8Rng, seed: u64, h: usize, w: usize, frames: usize, mix: &ChallengeMix) -> Self {
        let wf = w as f64;
        let hf = h as f64;
        let n = rng.random_range(2..=4usize);
        let gap = rng.random_range(0.6..0.8) / (n as f64 - 1.0);
        let shift = rng.random_range(-0.05..0.05);
        let vanish = wf * (0.5 + rng.random_range(-0.1..0.1));
        let kappa = rng.random_range(-0.12..0.12) * wf;

        let lanes = (0..n)
            .map(|i| {
                let jitter = rng.random_range(-0.05..0.05);
                let bottom = wf * (0.5 + shift + jitter + (i as f64 - (n as f64 - 1.0) / 2.0) * gap);
                let d = bottom - vanish;
                // x(v) = vanish + d(0.35 + 0.65v) + κ(1 − v)²
                let coeffs = [vanish + 0.35 * d + kappa, 0.65 * d - 2.0 * kappa, kappa];
                let dash = if rng.random_bool(0.5) {
                    let on = rng.random_range(0.12..0.2) * hf;
                    let off = rng.random_range(0.08..0.15) * hf;
                    Some(Dash {
                        on,
                        off,
                        phase: rng.random_range(0.0..on + off),
                        speed: rng.random_range(0.03..0.08) * hf,
                    })
                } else {
                    None
                };
                let color = if rng.random_bool(0.3) {
                    [0.95, 0.8, 0.2]
                } else {
                    let g = rng.random_range(0.85..1.0);
                    [g, g, g]
                };
                LaneSpec {
                    coeffs,
                    half_width: rng.random_range(1.0..2.0),
                    dash,
                    color,
                }
            })
            .collect();

        let motion = Motion {
            drift: rng.random_range(-0.5..0.5) * wf / 64.0,
            scale_rate: rng.random_range(-0.01..0.01),
        };
        let base = rng.random_range(0.22..0.42);
        let road = RoadStyle {
            far: [base + 0.1, base + 0.1, base + 0.12],
            near: [base, base, base + 0.02],
            noise: 0.03,
        };

        let mut spec = SceneSpec {
            height: h,
            width: w,
            frames,
            lanes,
            motion,
            road,
            challenges: Challenges::default(),
            seed,
        };

        if rng.random_bool(mix.occlusion) {
            // full-height band near a lane but not centred on it
            let lane = rng.random_range(0..n);
            let cols = ((rng.random_range(OCCLUDER_WIDTH) * wf).round() as usize).clamp(1, w);
            let anchor = spec.lane_center(lane, h - 1, frames - 1) + rng.random_range(-0.15..0.15) * wf;
            let left = (anchor - cols as f64 / 2.0).round().clamp(0.0, (w - cols) as f64) as usize;
            let g = rng.random_range(0.05..0.2);
            spec.challenges.occluders.push(Occluder {
                rect: Rect {
                    top: 0,
                    left,
                    height: h,
                    width: cols,
                },
                color: [g, g * 0.9, g * 1.1],
            });
        }
        if rng.random_bool(mix.shadow) {
            let rows = ((rng.random_range(0.15..0.35) * hf).round() as usize).clamp(1, h);
            spec.challenges.shadow = Some(ShadowBand {
                top: rng.random_range(0..=h - rows),
                height: rows,
                factor: rng.random_range(0.4..0.7),
            });
        }
        if rng.random_bool(mix.brightness) {
            spec.challenges.brightness = Some(rng.random_range(0.6..1.4));
        }
        if rng.random_bool(mix.blur) {
            spec.challenges.blur = true;
        }
        spec
    }
}

fn box_blur(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..3 {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in [-1isize, 0, 1] {
                    for dx in [-1isize, 0, 1] {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        s += plane[yy * w + xx];
                    }
                }
                out[c * h * w + y * w + x] = s / 9.0;
            }
        }
    }
    out
}

fn render_frame(spec: &SceneSpec, frame: usize) -> Tensor<f32> {
    let (h, w) = (spec.height, spec.width);
    let plane = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(frame as u64);
    let mut img = vec![0.0f64; 3 * plane];
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let n = spec.road.noise * (2.0 * rng.random::<f64>() - 1.0);
            for c in 0..3 {
                img[c * plane + y * w + x] = spec.road.far[c] * (1.0 - v) + spec.road.near[c] * v + n;
            }
        }
    }
    let t = spec.offset(frame);
    for (l, lane) in spec.lanes.iter().enumerate() {
        for y in 0..h {
            if lane.dash.is_some_and(|d| !d.is_on(y, t)) {
                continue;
            }
            let cx = spec.lane_center(l, y, frame);
            let lo = (cx - lane.half_width).floor().max(0.0) as usize;
            let hi = ((cx + lane.half_width).ceil() as usize).min(w);
            for x in lo..hi {
                let a = coverage(cx, lane.half_width, x);
                for c in 0..3 {
                    let p = &mut img[c * plane + y * w + x];
                    *p = *p * (1.0 - a) + lane.color[c] * a;
                }
            }
        }
    }
    let ch = &spec.challenges;
    if let Some(s) = ch.shadow {
        for c in 0..3 {
            for y in s.top..s.top + s.height {
                for x in 0..w {
                    img[c * plane + y * w + x] *= s.factor;
                }
            }
        }
    }
    if let Some(b) = ch.brightness {
        img.iter_mut().for_each(|p| *p *= b);
    }
    if frame + 1 == spec.frames {
        for o in &ch.occluders {
            for c in 0..3 {
                for y in o.rect.top..o.rect.top + o.rect.height {
                    for x in o.rect.left..o.rect.left + o.rect.width {
                        img[c * plane + y * w + x] = o.color[c];
                    }
                }
            }
        }
    }
    if ch.blur {
        img = box_blur(&img, h, w);
    }
    let data = img.into_iter().map(|p| p.clamp(0.0, 1.0) as f32).collect();
    Tensor::new(&[3, h, w], data).expect("frame buffer sized from the scene")
}

/// Renders every frame of `spec`; the mask is the uncorrupted lane geometry of
/// the last frame (`coverage ≥ ½`), occluded markings included.
pub fn generate_sequence(spec: &SceneSpec) -> Result<ImageSequence> {
    spec.validate()?;
    let frames = (0..spec.frames).map(|f| render_frame(spec, f)).collect();
    let bits = spec.coverage(spec.frames - 1).into_iter().map(|c| c >= 0.5).collect();
    let mask = LaneMask::new(spec.height, spec.width, bits)?;
    ImageSequence::new(frames, mask, format!("scene-{}", spec.seed))
}

/// A clip of `length` frames ending at the labeled frame.
pub fn generate_clip(spec: &SceneSpec, length: usize) -> Result<ImageSequence> {
    generate_sequence(&spec.with_frames(length))
}
