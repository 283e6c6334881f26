use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{jitter_strength, Jitter, Shape, BACKGROUND, PALETTE};
use crate::error::{Error, Result};
use crate::image::{Rgb, RgbImage};
use crate::layout::LayoutBox;
use crate::rope::RegionBox;

pub const MAX_SUBJECTS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Allowed subject box sides in pixels.
    pub box_sides: Vec<usize>,
    /// Box corners snap to multiples of this many pixels.
    pub position_step: usize,
    /// Largest IoU allowed between two placement boxes.
    pub max_iou: f64,
    /// `t_target` at which jitter reaches its full range.
    pub jitter_full_at: f64,
    pub max_tries: usize,
    /// Relative brightness swing of the stripe texture.
    pub texture_amplitude: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 32,
            height: 32,
            box_sides: vec![8, 12],
            position_step: 4,
            max_iou: 0.0,
            jitter_full_at: 9.0,
            max_tries: 1000,
            texture_amplitude: 0.06,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::invalid(format!(
                "canvas {}x{} is smaller than 32x32",
                self.width, self.height
            )));
        }
        if self.box_sides.is_empty()
            || self
                .box_sides
                .iter()
                .any(|&s| s == 0 || s > self.width.min(self.height))
        {
            return Err(Error::invalid(format!(
                "box sides {:?} do not fit the canvas",
                self.box_sides
            )));
        }
        if self.position_step == 0 || self.max_tries == 0 {
            return Err(Error::invalid("position_step and max_tries must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_iou) || !(0.0..0.5).contains(&self.texture_amplitude) {
            return Err(Error::invalid("max_iou or texture_amplitude out of range"));
        }
        jitter_strength(0.0, self.jitter_full_at)?;
        Ok(())
    }
}

/// Pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelBox {
    pub fn normalized(&self, width: usize, height: usize) -> LayoutBox {
        LayoutBox {
            x0: self.x as f64 / width as f64,
            y0: self.y as f64 / height as f64,
            x1: (self.x + self.w) as f64 / width as f64,
            y1: (self.y + self.h) as f64 / height as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// Index into [`PALETTE`]; also names the subject's identity token.
    pub palette_index: usize,
    pub shape: Shape,
    pub color: Rgb,
    pub texture_phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub t_target: f64,
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    pub subjects: Vec<Subject>,
    pub boxes: Vec<PixelBox>,
    pub jitter: Vec<Jitter>,
}

impl SceneSpec {
    /// Placement boxes in normalized canvas coordinates.
    pub fn placements(&self) -> Vec<LayoutBox> {
        self.boxes
            .iter()
            .map(|b| b.normalized(self.width, self.height))
            .collect()
    }

    /// Placement boxes in patch units, as regional rotary targets.
    pub fn region_boxes(&self, patch: usize, align: f64) -> Result<Vec<RegionBox>> {
        let p = patch as f64;
        self.boxes
            .iter()
            .map(|b| {
                RegionBox::new(
                    b.x as f64 / p,
                    b.y as f64 / p,
                    (b.x + b.w) as f64 / p,
                    (b.y + b.h) as f64 / p,
                    align,
                )
            })
            .collect()
    }

    /// Detector palette: subject index and its color.
    pub fn palette(&self) -> Vec<(usize, Rgb)> {
        self.subjects.iter().enumerate().map(|(k, s)| (k, s.color)).collect()
    }

    pub fn mean_jitter_magnitude(&self) -> f64 {
        self.jitter.iter().map(Jitter::magnitude).sum::<f64>() / self.jitter.len().max(1) as f64
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub spec: SceneSpec,
    /// Un-jittered glyph of each subject, sized like its placement box.
    pub references: Vec<RgbImage>,
    pub target: RgbImage,
    /// A scene token followed by one identity token per subject.
    pub condition_ids: Vec<usize>,
}

impl PairedSample {
    pub fn layout(&self) -> Vec<LayoutBox> {
        self.spec.placements()
    }

    /// Identity token of subject `k`.
    pub fn identity_token(&self, k: usize) -> usize {
        self.spec.subjects[k].palette_index + 1
    }
}

fn inside(shape: Shape, u: f64, v: f64, w: usize) -> bool {
    match shape {
        Shape::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
        Shape::Disk => u * u + v * v <= 1.0,
        Shape::Ring => {
            let r2 = u * u + v * v;
            (0.55 * 0.55..=1.0).contains(&r2)
        }
        // Apex at the top; widened by half a pixel so the apex row is drawn.
        Shape::Triangle => v.abs() <= 1.0 && u.abs() <= 0.5 * (v + 1.0) + 1.0 / w as f64,
    }
}

/// Rotates a color about the gray axis.
fn hue_rotate(c: Rgb, degrees: f64) -> [f64; 3] {
    let [r, g, b] = c.map(f64::from);
    if degrees == 0.0 {
        return [r, g, b];
    }
    let (s, co) = degrees.to_radians().sin_cos();
    let k = (1.0 - co) / 3.0;
    let q = (1.0f64 / 3.0).sqrt() * s;
    let (a, bb, cc) = (co + k, k - q, k + q);
    [
        a * r + bb * g + cc * b,
        cc * r + a * g + bb * b,
        bb * r + cc * g + a * b,
    ]
}

/// Draws `subject` into `pb` on `img`, clipped to the box.
fn render_subject(img: &mut RgbImage, subject: &Subject, pb: PixelBox, jitter: &Jitter, texture: f64) {
    let (hw, hh) = (pb.w as f64 / 2.0, pb.h as f64 / 2.0);
    let (sin, cos) = jitter.rotation_deg.to_radians().sin_cos();
    let base = hue_rotate(subject.color, jitter.hue_deg);
    for py in 0..pb.h {
        for px in 0..pb.w {
            let nx = (px as f64 + 0.5 - hw) / hw;
            let ny = (py as f64 + 0.5 - hh) / hh;
            let (mut u, mut v) = (nx, ny);
            if !jitter.is_none() {
                u = (cos * nx + sin * ny) / jitter.scale;
                v = (-sin * nx + cos * ny) / jitter.scale;
            }
            if !inside(subject.shape, u, v, pb.w) {
                continue;
            }
            let f = 1.0 + texture * (subject.texture_phase + 4.0 * u + 3.0 * v).sin();
            let c = base.map(|ch| (ch * f).round().clamp(0.0, 255.0) as u8);
            img.put(pb.x + px, pb.y + py, c);
        }
    }
}

fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let w = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
    let h = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
    let inter = (w * h) as f64;
    inter / ((a.w * a.h + b.w * b.h) as f64 - inter)
}

/// Generates one paired sample. Everything is drawn from a generator
/// seeded with `seed`, in this order: palette shuffle, then per subject its
/// shape, texture phase and unit jitter, then the boxes by rejection.
/// `t_target` only scales the unit jitter, so raising it never changes
/// anything else about the scene.
pub fn gen_scene(seed: u64, n_subjects: usize, cfg: &SceneConfig, t_target: f64) -> Result<PairedSample> {
    cfg.validate()?;
    if !(1..=MAX_SUBJECTS).contains(&n_subjects) {
        return Err(Error::invalid(format!(
            "n_subjects {n_subjects} outside 1..={MAX_SUBJECTS}"
        )));
    }
    let strength = jitter_strength(t_target, cfg.jitter_full_at)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut order: Vec<usize> = (0..PALETTE.len()).collect();
    order.shuffle(&mut rng);
    let mut subjects = Vec::with_capacity(n_subjects);
    let mut jitter = Vec::with_capacity(n_subjects);
    for &pi in &order[..n_subjects] {
        let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
        let texture_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let u = [
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        ];
        subjects.push(Subject {
            palette_index: pi,
            shape,
            color: PALETTE[pi],
            texture_phase,
        });
        jitter.push(Jitter::from_unit(u, strength));
    }

    let step = cfg.position_step;
    let mut boxes: Vec<PixelBox> = Vec::with_capacity(n_subjects);
    let mut tries = 0;
    while boxes.len() < n_subjects {
        if tries == cfg.max_tries {
            return Err(Error::Generation(format!(
                "could not place {n_subjects} boxes on a {}x{} canvas within {} tries",
                cfg.width, cfg.height, cfg.max_tries
            )));
        }
        tries += 1;
        let w = cfg.box_sides[rng.random_range(0..cfg.box_sides.len())];
        let h = cfg.box_sides[rng.random_range(0..cfg.box_sides.len())];
        let x = step * rng.random_range(0..=(cfg.width - w) / step);
        let y = step * rng.random_range(0..=(cfg.height - h) / step);
        let cand = PixelBox { x, y, w, h };
        if boxes.iter().all(|b| iou(b, &cand) <= cfg.max_iou) {
            boxes.push(cand);
        }
    }

    let mut target = RgbImage::new(cfg.width, cfg.height, BACKGROUND);
    let mut references = Vec::with_capacity(n_subjects);
    for ((s, b), j) in subjects.iter().zip(&boxes).zip(&jitter) {
        render_subject(&mut target, s, *b, j, cfg.texture_amplitude);
        let mut r = RgbImage::new(b.w, b.h, BACKGROUND);
        let local = PixelBox { x: 0, y: 0, ..*b };
        render_subject(&mut r, s, local, &Jitter::NONE, cfg.texture_amplitude);
        references.push(r);
    }
    let mut condition_ids = vec![0];
    condition_ids.extend(subjects.iter().map(|s| s.palette_index + 1));

    Ok(PairedSample {
        spec: SceneSpec {
            seed,
            t_target,
            width: cfg.width,
            height: cfg.height,
            background: BACKGROUND,
            subjects,
            boxes,
            jitter,
        },
        references,
        target,
        condition_ids,
    })
}
