//! Line-oriented scene description files.
//!
//! ```text
//! # two Dirichlet points on a line
//! dimension = 1
//! box = -2 3              # optional: lo hi per axis
//!
//! [object]
//! shape = plane
//! normal = 1
//! offset = 0
//! interaction = dirichlet
//!
//! [object]
//! shape = plane
//! normal = 1
//! offset = 1
//! interaction = potential 4 0.05 gaussian
//! ```
//!
//! Shapes and their keys:
//!
//! * `plane`: `normal` (d reals, rescaled to unit length together with the
//!   offset), `offset`
//! * `segment` (2D only): `a`, `b`
//! * `sphere`: `center`, `radius`
//! * `box`: `lo`, `hi`
//!
//! `interaction` is one of `dirichlet`, `potential <strength>` (a zero-width
//! sheet, planes only), `potential <strength> <width>` (uniform slab) or
//! `potential <strength> <width> gaussian`. Strength is the integrated
//! coupling across the surface, in inverse length. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{Aabb, GeometryError, Interaction, Object, Profile, Scene, Shape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `dimension` line")]
    MissingDimension,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, message: message.into() }
}

struct Block {
    line: usize,
    keys: BTreeMap<String, (usize, String)>,
}

impl Block {
    fn take(&mut self, key: &str) -> Result<(usize, String), ParseError> {
        self.keys.remove(key).ok_or_else(|| syntax(self.line, format!("object is missing `{key}`")))
    }

    fn reals(&mut self, key: &str, count: usize) -> Result<Vec<f64>, ParseError> {
        let (line, value) = self.take(key)?;
        let v = parse_reals(line, &value)?;
        if v.len() != count {
            return Err(syntax(line, format!("`{key}` needs {count} values, got {}", v.len())));
        }
        Ok(v)
    }
}

fn parse_reals(line: usize, text: &str) -> Result<Vec<f64>, ParseError> {
    text.split_whitespace()
        .map(|t| {
            let v: f64 = t.parse().map_err(|_| syntax(line, format!("`{t}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(syntax(line, format!("`{t}` is not finite")))
            }
        })
        .collect()
}

/// Parses a scene description.
pub fn parse_scene(text: &str) -> Result<Scene, ParseError> {
    let mut dimension: Option<usize> = None;
    let mut bounding: Option<(usize, String)> = None;
    let mut blocks: Vec<Block> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if content != "[object]" {
                return Err(syntax(line, format!("unknown section `{content}`")));
            }
            blocks.push(Block { line, keys: BTreeMap::new() });
            continue;
        }
        let (key, value) =
            content.split_once('=').ok_or_else(|| syntax(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        let value = value.trim().to_string();
        match blocks.last_mut() {
            None => match key {
                "dimension" => {
                    if dimension.is_some() {
                        return Err(syntax(line, "duplicate `dimension`"));
                    }
                    let d: usize = value
                        .parse()
                        .map_err(|_| syntax(line, format!("dimension `{value}` is not a positive integer")))?;
                    if d == 0 {
                        return Err(syntax(line, "dimension must be at least 1"));
                    }
                    dimension = Some(d);
                }
                "box" => {
                    if bounding.is_some() {
                        return Err(syntax(line, "duplicate `box`"));
                    }
                    bounding = Some((line, value));
                }
                other => return Err(syntax(line, format!("unknown key `{other}`"))),
            },
            Some(block) => {
                const KNOWN: [&str; 10] =
                    ["shape", "interaction", "normal", "offset", "a", "b", "center", "radius", "lo", "hi"];
                if !KNOWN.contains(&key) {
                    return Err(syntax(line, format!("unknown key `{key}`")));
                }
                if block.keys.insert(key.to_string(), (line, value)).is_some() {
                    return Err(syntax(line, format!("duplicate `{key}`")));
                }
            }
        }
    }
    let d = dimension.ok_or(ParseError::MissingDimension)?;
    let bounding = match bounding {
        None => None,
        Some((line, value)) => {
            let v = parse_reals(line, &value)?;
            if v.len() != 2 * d {
                return Err(syntax(line, format!("`box` needs {} values (lo hi per axis), got {}", 2 * d, v.len())));
            }
            let lo = v.iter().step_by(2).copied().collect();
            let hi = v.iter().skip(1).step_by(2).copied().collect();
            Some(Aabb::new(lo, hi).map_err(|e| syntax(line, e.to_string()))?)
        }
    };
    let mut objects = Vec::with_capacity(blocks.len());
    for mut block in blocks {
        let (shape_line, shape_name) = block.take("shape")?;
        let shape = match shape_name.as_str() {
            "plane" => {
                let normal = block.reals("normal", d)?;
                let offset = block.reals("offset", 1)?[0];
                let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len == 0.0 {
                    return Err(syntax(shape_line, "plane normal is zero"));
                }
                if (len - 1.0).abs() > 1e-12 {
                    Shape::Hyperplane { normal: normal.iter().map(|v| v / len).collect(), offset: offset / len }
                } else {
                    Shape::Hyperplane { normal, offset }
                }
            }
            "segment" => {
                if d != 2 {
                    return Err(syntax(shape_line, format!("segments need dimension 2, scene has {d}")));
                }
                let a = block.reals("a", 2)?;
                let b = block.reals("b", 2)?;
                Shape::Segment { a: [a[0], a[1]], b: [b[0], b[1]] }
            }
            "sphere" => {
                let center = block.reals("center", d)?;
                let radius = block.reals("radius", 1)?[0];
                Shape::Sphere { center, radius }
            }
            "box" => {
                let lo = block.reals("lo", d)?;
                let hi = block.reals("hi", d)?;
                Shape::Box(Aabb::new(lo, hi).map_err(|e| syntax(shape_line, e.to_string()))?)
            }
            other => return Err(syntax(shape_line, format!("unknown shape `{other}`"))),
        };
        let (line, text) = block.take("interaction")?;
        let interaction = parse_interaction(line, &text)?;
        if let Some((key, (line, _))) = block.keys.into_iter().next() {
            return Err(syntax(line, format!("key `{key}` does not apply to a {shape_name}")));
        }
        objects.push(Object { shape, interaction });
    }
    Ok(Scene::new(d, objects, bounding)?)
}

fn parse_interaction(line: usize, text: &str) -> Result<Interaction, ParseError> {
    let words: Vec<&str> = text.split_whitespace().collect();
    match words.as_slice() {
        ["dirichlet"] => Ok(Interaction::Dirichlet),
        ["potential", rest @ ..] => {
            let (numbers, gaussian) = match rest {
                [head @ .., "gaussian"] => (head, true),
                [head @ .., "slab"] => (head, false),
                all => (all, false),
            };
            let v = parse_reals(line, &numbers.join(" "))?;
            let profile = match (v.len(), gaussian) {
                (1, false) => Profile::Sheet,
                (2, false) => Profile::Slab { width: v[1] },
                (2, true) => Profile::Gaussian { width: v[1] },
                _ => return Err(syntax(line, "expected `potential <strength> [width] [gaussian]`")),
            };
            Ok(Interaction::Potential { strength: v[0], profile })
        }
        _ => Err(syntax(line, format!("unknown interaction `{text}`"))),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

/// Renders a scene so that [`parse_scene`] reproduces it exactly.
pub fn render_scene(scene: &Scene) -> String {
    let mut out = String::new();
    writeln!(out, "dimension = {}", scene.dimension()).unwrap();
    if let Some(b) = scene.bounding() {
        let pairs: Vec<f64> = b.lo.iter().zip(&b.hi).flat_map(|(l, h)| [*l, *h]).collect();
        writeln!(out, "box = {}", join(&pairs)).unwrap();
    }
    for o in scene.objects() {
        out.push_str("\n[object]\n");
        match &o.shape {
            Shape::Hyperplane { normal, offset } => {
                writeln!(out, "shape = plane\nnormal = {}\noffset = {offset:?}", join(normal)).unwrap()
            }
            Shape::Segment { a, b } => writeln!(out, "shape = segment\na = {}\nb = {}", join(a), join(b)).unwrap(),
            Shape::Sphere { center, radius } => {
                writeln!(out, "shape = sphere\ncenter = {}\nradius = {radius:?}", join(center)).unwrap()
            }
            Shape::Box(b) => writeln!(out, "shape = box\nlo = {}\nhi = {}", join(&b.lo), join(&b.hi)).unwrap(),
        }
        let interaction = match o.interaction {
            Interaction::Dirichlet => "dirichlet".to_string(),
            Interaction::Potential { strength, profile: Profile::Sheet } => format!("potential {strength:?}"),
            Interaction::Potential { strength, profile: Profile::Slab { width } } => {
                format!("potential {strength:?} {width:?}")
            }
            Interaction::Potential { strength, profile: Profile::Gaussian { width } } => {
                format!("potential {strength:?} {width:?} gaussian")
            }
        };
        writeln!(out, "interaction = {interaction}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::verify_empty_common_intersection;
    use proptest::prelude::*;

    #[test]
    fn two_points() {
        let s = parse_scene(
            "dimension = 1\n[object]\nshape = plane\nnormal = 1\noffset = 0\ninteraction = dirichlet\n\
             [object]\nshape = plane\nnormal = 1\noffset = 1\ninteraction = dirichlet\n",
        )
        .unwrap();
        assert_eq!(s.dimension(), 1);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn segment_triangle_passes_intersection_check() {
        let text = "dimension = 2
[object]
shape = segment
a = 0 0
b = 1 0
interaction = dirichlet
[object]
shape = segment
a = 1 0
b = 0.5 0.8
interaction = dirichlet
[object]
shape = segment  # closing side
a = 0.5 0.8
b = 0 0
interaction = dirichlet
";
        let s = parse_scene(text).unwrap();
        assert_eq!(verify_empty_common_intersection(&s), Ok(true));
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_scene("dimension = 2\n\n[object]\nshape = blob\ninteraction = dirichlet\n").unwrap_err();
        assert_eq!(err, ParseError::Syntax { line: 4, message: "unknown shape `blob`".into() });
        let err = parse_scene("dimension = 1\ncolour = red\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 2, .. }));
        let err = parse_scene(
            "dimension = 1\n[object]\nshape = sphere\ncenter = 0\nradius = 1\nnormal = 1\ninteraction = dirichlet\n",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 6, .. }), "{err}");
        let err =
            parse_scene("dimension = 1\n[object]\nshape = sphere\ncenter = 0 0\nradius = 1\ninteraction = dirichlet\n")
                .unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 4, .. }));
        let err = parse_scene("dimension = 3\n[object]\nshape = segment\na = 0 0\nb = 1 0\ninteraction = dirichlet\n")
            .unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 3, .. }));
        assert_eq!(parse_scene("[object]\n"), Err(ParseError::MissingDimension));
    }

    #[test]
    fn plane_normal_is_rescaled() {
        let s =
            parse_scene("dimension = 2\n[object]\nshape = plane\nnormal = 0 2\noffset = 3\ninteraction = dirichlet\n")
                .unwrap();
        assert_eq!(s.objects()[0].shape, Shape::Hyperplane { normal: vec![0.0, 1.0], offset: 1.5 });
    }

    fn arb_scene() -> impl Strategy<Value = Scene> {
        let interaction = prop_oneof![
            Just(Interaction::Dirichlet),
            (0.0f64..10.0, 0.01f64..1.0)
                .prop_map(|(s, w)| Interaction::Potential { strength: s, profile: Profile::Slab { width: w } }),
            (0.0f64..10.0, 0.01f64..1.0)
                .prop_map(|(s, w)| Interaction::Potential { strength: s, profile: Profile::Gaussian { width: w } }),
        ];
        let shape = prop_oneof![
            (-1.0f64..1.0, -3.0f64..3.0).prop_map(|(t, o)| {
                let a = t * std::f64::consts::PI;
                Shape::Hyperplane { normal: vec![a.cos(), a.sin()], offset: o }
            }),
            (-3.0f64..3.0, -3.0f64..3.0, 0.1f64..2.0, 0.1f64..2.0)
                .prop_map(|(x, y, dx, dy)| Shape::Segment { a: [x, y], b: [x + dx, y - dy] }),
            (-3.0f64..3.0, -3.0f64..3.0, 0.01f64..2.0)
                .prop_map(|(x, y, r)| Shape::Sphere { center: vec![x, y], radius: r }),
            (-3.0f64..3.0, -3.0f64..3.0, 0.01f64..2.0, 0.01f64..2.0)
                .prop_map(|(x, y, w, h)| Shape::Box(Aabb { lo: vec![x, y], hi: vec![x + w, y + h] })),
        ];
        (proptest::collection::vec((shape, interaction), 1..6), any::<bool>()).prop_map(|(objs, boxed)| {
            let objects: Vec<Object> =
                objs.into_iter().map(|(shape, interaction)| Object { shape, interaction }).collect();
            let bounding = if boxed { Some(Aabb::new(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap()) } else { None };
            Scene::new(2, objects, bounding).unwrap()
        })
    }

    proptest! {
        #[test]
        fn render_round_trips(scene in arb_scene()) {
            let text = render_scene(&scene);
            prop_assert_eq!(parse_scene(&text).unwrap(), scene);
        }
    }

    #[test]
    fn sheet_round_trips() {
        let s = Scene::new(1, vec![Object::potential(Shape::point(0.25), 3.5, Profile::Sheet)], None).unwrap();
        assert_eq!(parse_scene(&render_scene(&s)).unwrap(), s);
    }
}
