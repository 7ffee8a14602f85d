//! Scenes shared by the benchmarks.

use wlcasimir::{Aabb, Object, Profile, Scene, Shape};

/// Two Dirichlet points a unit apart.
pub fn two_points() -> Scene {
    Scene::new(1, vec![Object::dirichlet(Shape::point(0.0)), Object::dirichlet(Shape::point(1.0))], None).unwrap()
}

/// Four Dirichlet lines around the unit square.
pub fn tic_tac_toe() -> Scene {
    let line = |p: [f64; 2], n: [f64; 2]| Object::dirichlet(Shape::plane_through(&p, &n));
    let objects = vec![
        line([0.0, 0.0], [1.0, 0.0]),
        line([1.0, 0.0], [1.0, 0.0]),
        line([0.0, 0.0], [0.0, 1.0]),
        line([0.0, 1.0], [0.0, 1.0]),
    ];
    Scene::new(2, objects, None).unwrap()
}

/// A Dirichlet disk next to a smooth potential disk; no closed-form kill volume.
pub fn disks() -> Scene {
    let objects = vec![
        Object::dirichlet(Shape::Sphere { center: vec![0.0, 0.0], radius: 0.3 }),
        Object::potential(
            Shape::Sphere { center: vec![1.0, 0.0], radius: 0.3 },
            10.0,
            Profile::Gaussian { width: 0.05 },
        ),
    ];
    Scene::new(2, objects, None).unwrap()
}

/// The 2D grid of lines x, y ∈ {1, 2} inside the box [0, 3]².
pub fn boxed_grid() -> Scene {
    let line = |p: [f64; 2], n: [f64; 2]| Object::dirichlet(Shape::plane_through(&p, &n));
    let objects = vec![
        line([1.0, 0.0], [1.0, 0.0]),
        line([2.0, 0.0], [1.0, 0.0]),
        line([0.0, 1.0], [0.0, 1.0]),
        line([0.0, 2.0], [0.0, 1.0]),
    ];
    Scene::new(2, objects, Some(Aabb::new(vec![0.0, 0.0], vec![3.0, 3.0]).unwrap())).unwrap()
}
