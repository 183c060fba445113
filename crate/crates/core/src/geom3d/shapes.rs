//! Synthetic surfaces used as a stand-in for CAD model collections.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom3d::{Point3, PointCloud};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// Unit sphere.
    Sphere,
    /// Surface of the cube `[-1, 1]³`.
    Cube,
    /// Closed cylinder of radius 0.5 and height 1.6 along z.
    Cylinder,
    /// Torus with tube radius 0.3 around a circle of radius 0.8 in the xy plane.
    Torus,
    /// Airplane-like solid (fuselage, wing, tailplane), invariant under a
    /// half turn about the x axis.
    Plane,
    /// Four anisotropic Gaussian blobs at seed-dependent centers.
    GaussianBlobs,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
        ShapeKind::Plane,
        ShapeKind::GaussianBlobs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
            ShapeKind::Plane => "plane",
            ShapeKind::GaussianBlobs => "gaussian_blobs",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownShape(s.to_string()))
    }
}

type P = Point3<f64>;

fn sphere(rng: &mut ChaCha8Rng) -> P {
    loop {
        let v = P::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn cube(rng: &mut ChaCha8Rng) -> P {
    let face = rng.random_range(0..6usize);
    let a = rng.random_range(-1.0..1.0);
    let b = rng.random_range(-1.0..1.0);
    let s = if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => P::new(s, a, b),
        1 => P::new(a, s, b),
        _ => P::new(a, b, s),
    }
}

fn cylinder(rng: &mut ChaCha8Rng) -> P {
    let (r, h) = (0.5, 1.6);
    let side = std::f64::consts::TAU * r * h;
    let cap = std::f64::consts::PI * r * r;
    let u = rng.random_range(0.0..side + 2.0 * cap);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    if u < side {
        P::new(
            r * theta.cos(),
            r * theta.sin(),
            rng.random_range(-h / 2.0..h / 2.0),
        )
    } else {
        let rho = r * rng.random::<f64>().sqrt();
        let z = if u < side + cap { h / 2.0 } else { -h / 2.0 };
        P::new(rho * theta.cos(), rho * theta.sin(), z)
    }
}

fn torus(rng: &mut ChaCha8Rng) -> P {
    let (big, small) = (0.8, 0.3);
    loop {
        let u = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.0..std::f64::consts::TAU);
        // area element ∝ (R + r cos v)
        if rng.random_range(0.0..big + small) <= big + small * v.cos() {
            let w = big + small * v.cos();
            return P::new(w * u.cos(), w * u.sin(), small * v.sin());
        }
    }
}

/// Uniform point on the surface of an axis-aligned box.
fn box_surface(rng: &mut ChaCha8Rng, center: P, half: P) -> P {
    let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
    let total: f64 = areas.iter().sum();
    let mut u = rng.random_range(0.0..total);
    let mut axis = 2;
    for (a, &area) in areas.iter().enumerate() {
        if u < area {
            axis = a;
            break;
        }
        u -= area;
    }
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = P::new(
        rng.random_range(-half.x..half.x),
        rng.random_range(-half.y..half.y),
        rng.random_range(-half.z..half.z),
    );
    p[axis] = sign * half[axis];
    center + p
}

fn plane(rng: &mut ChaCha8Rng) -> P {
    // fuselage: lateral surface of a cylinder along x
    let (fr, fl) = (0.15, 2.0);
    let fuselage = std::f64::consts::TAU * fr * fl;
    let wing_half = P::new(0.3, 1.0, 0.02);
    let tail_half = P::new(0.15, 0.4, 0.02);
    let box_area = |h: P| 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
    let wing = box_area(wing_half);
    let tail = box_area(tail_half);
    let u = rng.random_range(0.0..fuselage + wing + tail);
    if u < fuselage {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        P::new(
            rng.random_range(-fl / 2.0..fl / 2.0),
            fr * theta.cos(),
            fr * theta.sin(),
        )
    } else if u < fuselage + wing {
        box_surface(rng, P::new(0.1, 0.0, 0.0), wing_half)
    } else {
        box_surface(rng, P::new(-0.8, 0.0, 0.0), tail_half)
    }
}

fn blob_sampler(rng: &mut ChaCha8Rng) -> impl FnMut(&mut ChaCha8Rng, usize) -> P {
    let blobs: Vec<(P, P)> = (0..4)
        .map(|_| {
            let center = P::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            );
            let scale = P::new(
                rng.random_range(0.1..0.3),
                rng.random_range(0.1..0.3),
                rng.random_range(0.1..0.3),
            );
            (center, scale)
        })
        .collect();
    move |rng, i| {
        let (c, s) = blobs[i % blobs.len()];
        let z = P::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        c + s.component_mul(&z)
    }
}

/// Samples `n >= 8` points on the named surface, deterministically per seed.
pub fn generate_shape<T: Real>(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud<T>> {
    if n < 8 {
        return Err(Error::invalid(
            "n",
            format!("need at least 8 points, got {n}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<P> = match kind {
        ShapeKind::Sphere => (0..n).map(|_| sphere(&mut rng)).collect(),
        ShapeKind::Cube => (0..n).map(|_| cube(&mut rng)).collect(),
        ShapeKind::Cylinder => (0..n).map(|_| cylinder(&mut rng)).collect(),
        ShapeKind::Torus => (0..n).map(|_| torus(&mut rng)).collect(),
        ShapeKind::Plane => (0..n).map(|_| plane(&mut rng)).collect(),
        ShapeKind::GaussianBlobs => {
            let mut sample = blob_sampler(&mut rng);
            (0..n).map(|i| sample(&mut rng, i)).collect()
        }
    };
    PointCloud::new(points.into_iter().map(|p| p.map(T::lit)).collect())
}
