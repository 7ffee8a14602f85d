//! Length of the shortest closed path that touches every object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, set_distance, Object, Scene, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LminEstimate {
    pub value: f64,
    /// `false` when the value came from the numerical tour search, which
    /// only guarantees an upper bound.
    pub exact: bool,
    pub method: String,
}

/// Shortest closed tour touching every object, analytic where the geometry
/// allows it and otherwise searched numerically from `restarts` random starts.
pub fn estimate_lmin(scene: &Scene) -> LminEstimate {
    estimate_lmin_with(scene, 20, 0x1a2b_3c4d)
}

pub fn estimate_lmin_with(scene: &Scene, restarts: usize, seed: u64) -> LminEstimate {
    if let Some(e) = analytic(scene) {
        return e;
    }
    LminEstimate { value: tour_search(scene, restarts, seed), exact: false, method: "tour search".into() }
}

/// Support of an object: its shape inflated by the potential reach.
fn project(o: &Object, x: &[f64]) -> Vec<f64> {
    let c = o.shape.closest_point(x);
    let r = o.reach();
    let g = geometry::dist(x, &c);
    if g <= r {
        x.to_vec()
    } else {
        c.iter().zip(x).map(|(c, x)| c + (x - c) * r / g).collect()
    }
}

fn analytic(scene: &Scene) -> Option<LminEstimate> {
    let objects = scene.objects();
    let d = scene.dimension();
    if objects.len() == 1 {
        return Some(LminEstimate { value: 0.0, exact: true, method: "single object".into() });
    }
    if objects.len() == 2 {
        let gap = set_distance(&objects[0].shape, &objects[1].shape, d) - objects[0].reach() - objects[1].reach();
        return Some(LminEstimate { value: 2.0 * gap.max(0.0), exact: true, method: "pair distance".into() });
    }
    if d == 1 {
        // Objects are intervals; the tour must span from the largest left
        // end to the smallest right end.
        let mut left = f64::NEG_INFINITY;
        let mut right = f64::INFINITY;
        for o in objects {
            let (lo, hi) = match &o.shape {
                Shape::Hyperplane { normal, offset } => {
                    let x = offset * normal[0];
                    (x, x)
                }
                other => {
                    let b = other.bounds(0.0).unwrap();
                    (b.lo[0], b.hi[0])
                }
            };
            left = left.max(lo - o.reach());
            right = right.min(hi + o.reach());
        }
        return Some(LminEstimate {
            value: 2.0 * (left - right).max(0.0),
            exact: true,
            method: "interval span".into(),
        });
    }
    // Families of parallel hyperplanes along mutually orthogonal directions.
    let mut families: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for o in objects {
        let Shape::Hyperplane { normal, offset } = &o.shape else { return None };
        let r = o.reach();
        match families.iter_mut().find(|(n, _, _)| (geometry::dot(n, normal).abs() - 1.0).abs() < 1e-12) {
            Some((n, lo, hi)) => {
                let o2 = offset * geometry::dot(n, normal).signum();
                *lo = lo.min(o2 + r);
                *hi = hi.max(o2 - r);
            }
            None => families.push((normal.clone(), offset + r, offset - r)),
        }
    }
    for i in 0..families.len() {
        for j in i + 1..families.len() {
            if geometry::dot(&families[i].0, &families[j].0).abs() > 1e-12 {
                return None;
            }
        }
    }
    let sum: f64 = families.iter().map(|(_, lo, hi)| (hi - lo).max(0.0).powi(2)).sum();
    Some(LminEstimate { value: 2.0 * sum.sqrt(), exact: true, method: "orthogonal families".into() })
}

fn tour_length(points: &[Vec<f64>], order: &[usize], eps: f64) -> f64 {
    let n = order.len();
    (0..n)
        .map(|k| {
            let a = &points[order[k]];
            let b = &points[order[(k + 1) % n]];
            (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() + eps * eps).sqrt()
        })
        .sum()
}

/// Minimizes the smoothed tour length over one point per object for a fixed
/// visiting order, by projected gradient descent with step adaptation.
fn optimize_order(objects: &[Object], order: &[usize], start: Vec<Vec<f64>>, scale: f64) -> f64 {
    let n = order.len();
    let d = start[0].len();
    let mut pts: Vec<Vec<f64>> = start.into_iter().enumerate().map(|(i, p)| project(&objects[i], &p)).collect();
    let mut position = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        position[i] = k;
    }
    for eps in [1e-2, 1e-4, 1e-6, 1e-8, 0.0].map(|e| e * scale) {
        let mut step = 0.1 * scale;
        let mut current = tour_length(&pts, order, eps);
        for _ in 0..4000 {
            let mut grad = vec![vec![0.0; d]; n];
            for i in 0..n {
                let k = position[i];
                for nb in [order[(k + n - 1) % n], order[(k + 1) % n]] {
                    let diff: Vec<f64> = pts[i].iter().zip(&pts[nb]).map(|(a, b)| a - b).collect();
                    let len = (geometry::dot(&diff, &diff) + eps * eps).sqrt();
                    if len > 0.0 {
                        for c in 0..d {
                            grad[i][c] += diff[c] / len;
                        }
                    }
                }
            }
            let trial: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let moved: Vec<f64> = pts[i].iter().zip(&grad[i]).map(|(p, g)| p - step * g).collect();
                    project(&objects[i], &moved)
                })
                .collect();
            let value = tour_length(&trial, order, eps);
            if value < current {
                let gain = current - value;
                pts = trial;
                current = value;
                step *= 1.5;
                if gain < 1e-15 * scale {
                    break;
                }
            } else {
                step *= 0.3;
                if step < 1e-16 * scale {
                    break;
                }
            }
        }
    }
    tour_length(&pts, order, 0.0)
}

fn orders(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    fn permute(rest: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            // Skip mirror images of tours already listed.
            if prefix.len() < 3 || prefix[1] < prefix[prefix.len() - 1] {
                out.push(prefix.clone());
            }
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            permute(rest, prefix, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    if n <= 7 {
        let mut out = Vec::new();
        permute(&mut (1..n).collect(), &mut vec![0], &mut out);
        out
    } else {
        (0..200)
            .map(|_| {
                let mut o: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(&mut o[1..], rng);
                o
            })
            .collect()
    }
}

fn tour_search(scene: &Scene, restarts: usize, seed: u64) -> f64 {
    let objects = scene.objects();
    let d = scene.dimension();
    // Reference region: closest points of the objects to the centroid of the
    // bounded ones (or the origin).
    let bounded: Vec<Vec<f64>> = objects
        .iter()
        .filter_map(|o| o.shape.bounds(0.0))
        .map(|b| b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect())
        .collect();
    let centre: Vec<f64> = if bounded.is_empty() {
        vec![0.0; d]
    } else {
        (0..d).map(|c| bounded.iter().map(|p| p[c]).sum::<f64>() / bounded.len() as f64).collect()
    };
    let anchors: Vec<Vec<f64>> = objects.iter().map(|o| project(o, &centre)).collect();
    let scale = anchors.iter().map(|a| geometry::dist(a, &centre)).fold(0.0, f64::max).max(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orders = orders(objects.len(), &mut rng);
    let mut best = f64::INFINITY;
    for r in 0..restarts.max(1) {
        let start: Vec<Vec<f64>> =
            anchors
                .iter()
                .map(|a| {
                    if r == 0 {
                        a.clone()
                    } else {
                        a.iter().map(|v| v + scale * (rng.random::<f64>() - 0.5)).collect()
                    }
                })
                .collect();
        for order in &orders {
            best = best.min(optimize_order(objects, order, start.clone(), scale));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Profile;

    fn plane(p: &[f64], n: &[f64]) -> Object {
        Object::dirichlet(Shape::plane_through(p, n))
    }

    #[test]
    fn parallel_planes() {
        let s = Scene::new(
            3,
            vec![plane(&[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]), plane(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0])],
            None,
        )
        .unwrap();
        let e = estimate_lmin(&s);
        assert!(e.exact);
        assert!((e.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_points() {
        let s = Scene::new(1, vec![Object::dirichlet(Shape::point(0.0)), Object::dirichlet(Shape::point(0.7))], None)
            .unwrap();
        assert!((estimate_lmin(&s).value - 1.4).abs() < 1e-12);
        let three = Scene::new(
            1,
            vec![
                Object::dirichlet(Shape::point(0.0)),
                Object::dirichlet(Shape::point(0.5)),
                Object::potential(Shape::point(2.0), 1.0, Profile::Slab { width: 0.2 }),
            ],
            None,
        )
        .unwrap();
        assert!((estimate_lmin(&three).value - 2.0 * 1.9).abs() < 1e-12);
    }

    #[test]
    fn tic_tac_toe() {
        let s = Scene::new(
            2,
            vec![
                plane(&[0.0, 0.0], &[1.0, 0.0]),
                plane(&[1.0, 0.0], &[1.0, 0.0]),
                plane(&[0.0, 0.0], &[0.0, 1.0]),
                plane(&[0.0, 2.0], &[0.0, 1.0]),
            ],
            None,
        )
        .unwrap();
        let e = estimate_lmin(&s);
        assert!(e.exact);
        assert!((e.value - 2.0 * 5f64.sqrt()).abs() < 1e-12);
    }

    fn triangle(side: f64) -> Scene {
        let h = side * 3f64.sqrt() / 2.0;
        Scene::new(
            2,
            vec![
                plane(&[0.0, 0.0], &[0.0, 1.0]),
                plane(&[0.0, 0.0], &[h, -side / 2.0]),
                plane(&[side, 0.0], &[h, side / 2.0]),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn equilateral_triangle_orthic_tour() {
        let e = estimate_lmin(&triangle(1.0));
        assert!(!e.exact);
        assert!((e.value - 1.5).abs() < 1e-6, "{}", e.value);
        let values: Vec<f64> = (0..20).map(|seed| estimate_lmin_with(&triangle(2.0), 1, seed).value).collect();
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-6, "{values:?}");
    }

    #[test]
    fn spheres_on_a_line() {
        let s = Scene::new(
            2,
            vec![
                Object::dirichlet(Shape::Sphere { center: vec![0.0, 0.0], radius: 0.5 }),
                Object::dirichlet(Shape::Sphere { center: vec![2.0, 0.0], radius: 0.5 }),
                Object::dirichlet(Shape::Sphere { center: vec![4.0, 0.0], radius: 0.5 }),
            ],
            None,
        )
        .unwrap();
        // Out and back between the outer spheres, passing the middle one.
        assert!((estimate_lmin(&s).value - 6.0).abs() < 1e-6);
    }
}
