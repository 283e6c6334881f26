//! Comic page layouts: panels in reading order, each holding character
//! boxes, all in normalized page coordinates.

mod generate;
mod json;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_layout, script_lattice, GeneratorConfig, ScriptCase, MAX_CHARACTERS, MAX_PANELS};
pub use json::{parse_layout, parse_layout_with, serialize_layout};
pub use metrics::{
    character_count_score, coverage_ratio, layout_precision, panel_count_score, panel_ordering_score, raster_coverage,
    valid_character_score, LayoutScores, DEFAULT_IOU_THRESHOLD,
};

/// Axis-aligned box in normalized coordinates, `0 ≤ x0 < x1 ≤ 1` and
/// `0 ≤ y0 < y1 ≤ 1`, with `y` growing downwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl LayoutBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = LayoutBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && 0.0 <= self.x0
            && self.x0 < self.x1
            && self.x1 <= 1.0
            && 0.0 <= self.y0
            && self.y0 < self.y1
            && self.y1 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "box [{}, {}, {}, {}] violates 0 <= x0 < x1 <= 1, 0 <= y0 < y1 <= 1",
                self.x0, self.y0, self.x1, self.y1
            )))
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn intersection_area(&self, other: &LayoutBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &LayoutBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Fraction of this box's area that lies inside `container`.
    pub fn containment_in(&self, container: &LayoutBox) -> f64 {
        self.intersection_area(container) / self.area()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Character {
    pub id: String,
    pub bbox: LayoutBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelSpec {
    pub panel_box: LayoutBox,
    /// Character boxes in page coordinates.
    pub characters: Vec<Character>,
    pub caption: String,
}

/// A page: panels in declared reading order.
#[derive(Clone, Debug, PartialEq)]
pub struct PageLayout {
    pub panels: Vec<PanelSpec>,
    /// Page width over page height.
    pub aspect_ratio: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadingDirection {
    #[default]
    RightToLeft,
    LeftToRight,
}

/// Thresholds shared by validation and the validity metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutThresholds {
    /// Minimum fraction of a character box inside its panel.
    pub containment: f64,
    pub min_area_ratio: f64,
    pub max_area_ratio: f64,
    /// Two consecutive panels share a row when their vertical overlap is at
    /// least this fraction of the smaller height.
    pub row_overlap: f64,
    pub reading: ReadingDirection,
}

impl Default for LayoutThresholds {
    fn default() -> Self {
        LayoutThresholds {
            containment: 0.9,
            min_area_ratio: 0.03,
            max_area_ratio: 0.95,
            row_overlap: 0.5,
            reading: ReadingDirection::RightToLeft,
        }
    }
}

impl LayoutThresholds {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.containment)
            && unit(self.min_area_ratio)
            && unit(self.max_area_ratio)
            && unit(self.row_overlap)
            && self.min_area_ratio <= self.max_area_ratio)
        {
            return Err(Error::invalid(format!("inconsistent layout thresholds {self:?}")));
        }
        Ok(())
    }
}

impl PageLayout {
    /// Checks every structural invariant, reporting the first violation with
    /// its location in the interchange format.
    pub fn validate(&self, th: &LayoutThresholds) -> Result<()> {
        if !(self.aspect_ratio.is_finite() && self.aspect_ratio > 0.0) {
            return Err(Error::parse(
                "aspect_ratio",
                format!("{} is not positive", self.aspect_ratio),
            ));
        }
        if self.panels.is_empty() {
            return Err(Error::parse("panels", "a page needs at least one panel"));
        }
        for (k, p) in self.panels.iter().enumerate() {
            p.panel_box
                .validate()
                .map_err(|e| Error::parse(format!("panels[{k}].box"), strip(e)))?;
            for (j, c) in p.characters.iter().enumerate() {
                let path = format!("panels[{k}].characters[{j}]");
                c.bbox
                    .validate()
                    .map_err(|e| Error::parse(format!("{path}.box"), strip(e)))?;
                let inside = c.bbox.containment_in(&p.panel_box);
                if inside < th.containment {
                    return Err(Error::parse(
                        format!("{path}.box"),
                        format!(
                            "only {inside:.3} of the box lies inside its panel (need {})",
                            th.containment
                        ),
                    ));
                }
                if p.characters[..j].iter().any(|o| o.id == c.id) {
                    return Err(Error::parse(
                        format!("{path}.id"),
                        format!("duplicate character id {:?}", c.id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn character_count(&self) -> usize {
        self.panels.iter().map(|p| p.characters.len()).sum()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Validation(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_geometry() {
        let a = LayoutBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let b = LayoutBox::new(0.25, 0.0, 0.75, 0.5).unwrap();
        assert_eq!(a.area(), 0.25);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.containment_in(&a), 1.0);
        assert!(LayoutBox::new(0.5, 0.0, 0.5, 1.0).is_err());
        assert!(LayoutBox::new(0.0, 0.0, 1.1, 1.0).is_err());
        assert!(LayoutBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn validation_paths() {
        let full = LayoutBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let c = |id: &str, b: LayoutBox| Character { id: id.into(), bbox: b };
        let mut page = PageLayout {
            panels: vec![PanelSpec {
                panel_box: LayoutBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
                characters: vec![c("a", LayoutBox::new(0.1, 0.1, 0.2, 0.2).unwrap())],
                caption: String::new(),
            }],
            aspect_ratio: 0.7,
        };
        let th = LayoutThresholds::default();
        page.validate(&th).unwrap();

        page.panels[0]
            .characters
            .push(c("a", LayoutBox::new(0.2, 0.2, 0.3, 0.3).unwrap()));
        let e = page.validate(&th).unwrap_err().to_string();
        assert!(e.contains("panels[0].characters[1].id"), "{e}");

        page.panels[0].characters[1] = c("b", full);
        let e = page.validate(&th).unwrap_err().to_string();
        assert!(e.contains("panels[0].characters[1].box"), "{e}");

        page.panels.clear();
        assert!(page.validate(&th).is_err());
    }
}
