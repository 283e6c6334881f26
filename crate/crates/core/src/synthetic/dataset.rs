//! Deterministic scene collections and their on-disk form:
//!
//! ```text
//! {root}/{split}/manifest.jsonl          one ManifestRecord per line
//! {root}/{split}/{seed}/target.ppm
//! {root}/{split}/{seed}/ref_{k}.ppm
//! {root}/{split}/{seed}/layout.json      placement boxes as a one-panel page
//! ```

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::{gen_scene, PairedSample, PixelBox, SceneConfig, SceneSpec, Subject};
use super::Jitter;
use crate::error::{Error, Result};
use crate::image::{Rgb, RgbImage};
use crate::layout::{serialize_layout, Character, LayoutBox, PageLayout, PanelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00_0001,
            Split::Eval => 0x6576_616c_0000_0002,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of scene `index` in `split` under `master`:
/// `splitmix64(splitmix64(master ^ tag(split)) + index)`.
pub fn scene_seed(master: u64, split: Split, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ split.tag()).wrapping_add(index))
}

/// Which scenes a dataset holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub data_seed: u64,
    pub split: Split,
    pub count: usize,
    /// Index of the first scene, so pools drawn from one split can be kept
    /// apart.
    pub offset: u64,
    /// Inclusive subject-count range; scene `i` has
    /// `min + i mod (max - min + 1)` subjects.
    pub subjects: (usize, usize),
    pub t_target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<PairedSample>,
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub seed: u64,
    pub t_target: f64,
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    pub subjects: Vec<Subject>,
    pub boxes: Vec<PixelBox>,
    pub jitter: Vec<Jitter>,
    pub condition_ids: Vec<usize>,
    pub target: String,
    pub references: Vec<String>,
    pub layout: String,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec, scene: &SceneConfig) -> Result<Self> {
        let (lo, hi) = spec.subjects;
        if lo == 0 || hi < lo {
            return Err(Error::invalid(format!("bad subject range {lo}..={hi}")));
        }
        let samples = (0..spec.count)
            .map(|i| {
                let n = lo + i % (hi - lo + 1);
                gen_scene(
                    scene_seed(spec.data_seed, spec.split, spec.offset + i as u64),
                    n,
                    scene,
                    spec.t_target,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            split: spec.split,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.spec.seed).collect()
    }

    /// Writes images, layouts and the manifest under `root/{split}`.
    pub fn write(&self, root: &Path) -> Result<()> {
        let base = root.join(self.split.name());
        std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
        let mut manifest = String::new();
        for s in &self.samples {
            let rel = format!("{}", s.spec.seed);
            let dir = base.join(&rel);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            s.target.write_ppm(&dir.join("target.ppm"))?;
            let mut references = Vec::with_capacity(s.references.len());
            for (k, r) in s.references.iter().enumerate() {
                let name = format!("ref_{k}.ppm");
                r.write_ppm(&dir.join(&name))?;
                references.push(format!("{rel}/{name}"));
            }
            let layout_path = dir.join("layout.json");
            std::fs::write(&layout_path, serialize_layout(&scene_page(&s.spec)))
                .map_err(|e| Error::io(&layout_path, e))?;
            let rec = ManifestRecord {
                seed: s.spec.seed,
                t_target: s.spec.t_target,
                width: s.spec.width,
                height: s.spec.height,
                background: s.spec.background,
                subjects: s.spec.subjects.clone(),
                boxes: s.spec.boxes.clone(),
                jitter: s.spec.jitter.clone(),
                condition_ids: s.condition_ids.clone(),
                target: format!("{rel}/target.ppm"),
                references,
                layout: format!("{rel}/layout.json"),
            };
            manifest.push_str(&serde_json::to_string(&rec).expect("manifest record serializes"));
            manifest.push('\n');
        }
        let path = base.join("manifest.jsonl");
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(manifest.as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Reads back what [`Dataset::write`] produced.
    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let base = root.join(split.name());
        let path = base.join("manifest.jsonl");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut samples = Vec::new();
        for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), line_no + 1), e.to_string()))?;
            let target = RgbImage::read_ppm(&base.join(&rec.target))?;
            let references = rec
                .references
                .iter()
                .map(|r| RgbImage::read_ppm(&base.join(r)))
                .collect::<Result<Vec<_>>>()?;
            if references.len() != rec.subjects.len() || rec.boxes.len() != rec.subjects.len() {
                return Err(Error::parse(
                    format!("{}:{}", path.display(), line_no + 1),
                    "subjects, boxes and references disagree in number",
                ));
            }
            samples.push(PairedSample {
                spec: SceneSpec {
                    seed: rec.seed,
                    t_target: rec.t_target,
                    width: rec.width,
                    height: rec.height,
                    background: rec.background,
                    subjects: rec.subjects,
                    boxes: rec.boxes,
                    jitter: rec.jitter,
                },
                references,
                target,
                condition_ids: rec.condition_ids,
            });
        }
        Ok(Dataset { split, samples })
    }
}

/// A scene as a page with one full-canvas panel whose characters are the
/// subjects.
fn scene_page(spec: &SceneSpec) -> PageLayout {
    PageLayout {
        panels: vec![PanelSpec {
            panel_box: LayoutBox {
                x0: 0.0,
                y0: 0.0,
                x1: 1.0,
                y1: 1.0,
            },
            characters: spec
                .placements()
                .into_iter()
                .enumerate()
                .map(|(k, b)| Character {
                    id: format!("s{k}"),
                    bbox: b,
                })
                .collect(),
            caption: format!("scene {}", spec.seed),
        }],
        aspect_ratio: spec.width as f64 / spec.height as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint() {
        let train: std::collections::HashSet<u64> = (0..5000).map(|i| scene_seed(0, Split::Train, i)).collect();
        assert_eq!(train.len(), 5000);
        assert!((0..5000).all(|i| !train.contains(&scene_seed(0, Split::Eval, i))));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            data_seed: 3,
            split: Split::Eval,
            count: 4,
            offset: 0,
            subjects: (1, 3),
            t_target: 3.0,
        };
        let d = Dataset::generate(&spec, &SceneConfig::default()).unwrap();
        assert_eq!(
            d.samples.iter().map(|s| s.references.len()).collect::<Vec<_>>(),
            [1, 2, 3, 1]
        );
        d.write(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path(), Split::Eval).unwrap(), d);
        let layout = std::fs::read(dir.path().join(format!("eval/{}/layout.json", d.samples[2].spec.seed))).unwrap();
        let page = crate::layout::parse_layout(&layout).unwrap();
        assert_eq!(page.panels[0].characters.len(), 3);
    }
}
