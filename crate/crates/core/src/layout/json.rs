//! Strict reader and canonical writer for the layout interchange format:
//!
//! ```json
//! {"aspect_ratio": 0.7,
//!  "panels": [{"box": [x0, y0, x1, y1], "caption": "...",
//!              "characters": [{"id": "a", "box": [x0, y0, x1, y1]}]}]}
//! ```
//!
//! Numbers are written as plain decimals rounded to 9 significant digits, so
//! writing a parsed file reproduces it byte for byte.

use serde_json::{Map, Value};

use super::{Character, LayoutBox, LayoutThresholds, PageLayout, PanelSpec};
use crate::error::{Error, Result};

pub fn parse_layout(bytes: &[u8]) -> Result<PageLayout> {
    parse_layout_with(bytes, &LayoutThresholds::default())
}

pub fn parse_layout_with(bytes: &[u8], th: &LayoutThresholds) -> Result<PageLayout> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse("$", format!("invalid UTF-8: {e}")))?;
    let root: Value = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
    let obj = object(&root, "$", &["aspect_ratio", "panels"])?;
    let aspect_ratio = number(field(obj, "aspect_ratio", "$")?, "aspect_ratio")?;
    let panels = array(field(obj, "panels", "$")?, "panels")?
        .iter()
        .enumerate()
        .map(|(k, p)| parse_panel(p, k))
        .collect::<Result<Vec<_>>>()?;
    let page = PageLayout { panels, aspect_ratio };
    page.validate(th)?;
    Ok(page)
}

fn parse_panel(v: &Value, k: usize) -> Result<PanelSpec> {
    let path = format!("panels[{k}]");
    let obj = object(v, &path, &["box", "caption", "characters"])?;
    let panel_box = parse_box(field(obj, "box", &path)?, &format!("{path}.box"))?;
    let caption = match field(obj, "caption", &path)? {
        Value::String(s) => s.clone(),
        _ => return Err(Error::parse(format!("{path}.caption"), "expected a string")),
    };
    let characters = array(field(obj, "characters", &path)?, &format!("{path}.characters"))?
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let cpath = format!("{path}.characters[{j}]");
            let cobj = object(c, &cpath, &["id", "box"])?;
            let id = match field(cobj, "id", &cpath)? {
                Value::String(s) => s.clone(),
                _ => return Err(Error::parse(format!("{cpath}.id"), "expected a string")),
            };
            let bbox = parse_box(field(cobj, "box", &cpath)?, &format!("{cpath}.box"))?;
            Ok(Character { id, bbox })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PanelSpec {
        panel_box,
        characters,
        caption,
    })
}

fn object<'a>(v: &'a Value, path: &str, allowed: &[&str]) -> Result<&'a Map<String, Value>> {
    let obj = v.as_object().ok_or_else(|| Error::parse(path, "expected an object"))?;
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::parse(join(path, k), "unknown key"));
    }
    Ok(obj)
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::parse(join(path, key), "missing"))
}

fn join(path: &str, key: &str) -> String {
    if path == "$" {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::parse(path, "expected an array"))
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::parse(path, "expected a finite number"))
}

fn parse_box(v: &Value, path: &str) -> Result<LayoutBox> {
    let a = array(v, path)?;
    if a.len() != 4 {
        return Err(Error::parse(path, format!("expected 4 numbers, found {}", a.len())));
    }
    let n = |i: usize| number(&a[i], &format!("{path}[{i}]"));
    let b = LayoutBox {
        x0: n(0)?,
        y0: n(1)?,
        x1: n(2)?,
        y1: n(3)?,
    };
    b.validate().map_err(|e| match e {
        Error::Validation(m) => Error::parse(path, m),
        other => other,
    })?;
    Ok(b)
}

/// Rounds to 9 significant digits and prints the shortest plain decimal.
fn decimal(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn write_box(out: &mut String, b: &LayoutBox) {
    out.push('[');
    for (i, v) in b.to_array().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&decimal(*v));
    }
    out.push(']');
}

fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings serialize"));
}

/// Canonical form: fixed key order, two-space indentation, one panel per
/// block and one character per line.
pub fn serialize_layout(page: &PageLayout) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("{\n  \"aspect_ratio\": ");
    out.push_str(&decimal(page.aspect_ratio));
    out.push_str(",\n  \"panels\": [");
    for (k, p) in page.panels.iter().enumerate() {
        out.push_str(if k == 0 { "\n" } else { ",\n" });
        out.push_str("    {\n      \"box\": ");
        write_box(&mut out, &p.panel_box);
        out.push_str(",\n      \"caption\": ");
        write_string(&mut out, &p.caption);
        out.push_str(",\n      \"characters\": [");
        for (j, c) in p.characters.iter().enumerate() {
            out.push_str(if j == 0 { "\n" } else { ",\n" });
            out.push_str("        {\"id\": ");
            write_string(&mut out, &c.id);
            out.push_str(", \"box\": ");
            write_box(&mut out, &c.bbox);
            out.push('}');
        }
        if !p.characters.is_empty() {
            out.push_str("\n      ");
        }
        out.push_str("]\n    }");
    }
    out.push_str("\n  ]\n}\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"aspect_ratio": 1, "panels": [{"box": [0, 0, 1, 1], "caption": "", "characters": []}]}"#;

    #[test]
    fn minimal_page() {
        let p = parse_layout(MINIMAL.as_bytes()).unwrap();
        assert_eq!(p.panels.len(), 1);
        assert_eq!(p.panels[0].panel_box.to_array(), [0.0, 0.0, 1.0, 1.0]);
        assert!(p.panels[0].characters.is_empty());
        let again = parse_layout(&serialize_layout(&p)).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn decimal_formatting() {
        assert_eq!(decimal(0.5), "0.5");
        assert_eq!(decimal(1.0), "1");
        assert_eq!(decimal(1.0 / 3.0), "0.333333333");
        assert_eq!(decimal(1e-7), "0.0000001");
        assert_eq!(decimal(-0.0), "0");
        assert_eq!(decimal(0.123456789123), "0.123456789");
    }

    #[test]
    fn errors_carry_paths() {
        let cases = [
            (
                r#"{"aspect_ratio": 1, "panels": [{"box": [0.5, 0, 0.5, 1], "caption": "", "characters": []}]}"#,
                "panels[0].box",
            ),
            (
                r#"{"aspect_ratio": 1, "panels": [{"box": [0, 0, 1], "caption": "", "characters": []}]}"#,
                "panels[0].box",
            ),
            (
                r#"{"aspect_ratio": 1, "panels": [{"box": [0, 0, 1, 1], "caption": 3, "characters": []}]}"#,
                "panels[0].caption",
            ),
            (
                r#"{"aspect_ratio": 1, "panels": [{"box": [0, 0, 1, 1], "caption": "", "characters": [], "extra": 1}]}"#,
                "panels[0].extra",
            ),
            (r#"{"aspect_ratio": 1, "panels": []}"#, "panels"),
            (
                r#"{"aspect_ratio": -2, "panels": [{"box": [0, 0, 1, 1], "caption": "", "characters": []}]}"#,
                "aspect_ratio",
            ),
            (
                r#"{"panels": [{"box": [0, 0, 1, 1], "caption": "", "characters": []}]}"#,
                "aspect_ratio",
            ),
            (
                r#"{"aspect_ratio": 1, "panels": [{"box": [0, 0, 1, 1], "caption": "", "characters": [{"id": "a", "box": [0, 0, 0.5, 0.5]}, {"id": "a", "box": [0.5, 0.5, 1, 1]}]}]}"#,
                "panels[0].characters[1].id",
            ),
            ("[1, 2]", "$"),
            ("{", "$"),
        ];
        for (text, path) in cases {
            match parse_layout(text.as_bytes()) {
                Err(Error::Parse { path: p, .. }) => assert_eq!(p, path, "{text}"),
                other => panic!("{text}: expected parse error, got {other:?}"),
            }
        }
    }
}
