use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// A point in R^3; viewpoints are unit vectors. `(1, 0, 0)` is the centre of
/// the equirectangular frame (latitude 0, longitude 0), `z` points up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn dist_sq(self, other: Vec3) -> f64 {
        let d = self - other;
        d.dot(d)
    }

    pub fn from_lat_lon_deg(lat: f64, lon: f64) -> Vec3 {
        let (lat, lon) = (lat.to_radians(), lon.to_radians());
        Vec3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin())
    }

    /// (latitude, longitude) in degrees; longitude in (-180, 180].
    pub fn lat_lon_deg(self) -> (f64, f64) {
        let lat = self.z.clamp(-1.0, 1.0).asin().to_degrees();
        let lon = self.y.atan2(self.x).to_degrees();
        (lat, lon)
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

const UNIT_TOL: f64 = 1e-6;

/// Arc length in radians between two unit vectors.
pub fn great_circle_distance(a: Vec3, b: Vec3) -> Result<f64> {
    for p in [a, b] {
        if !p.is_unit(UNIT_TOL) {
            return Err(Error::invalid(
                "viewpoint",
                format!("non-unit vector (norm {})", p.norm()),
            ));
        }
    }
    Ok(a.cross(b).norm().atan2(a.dot(b)))
}

/// Mean per-step great-circle distance between two equally long trajectories.
pub fn avg_great_circle_distance(pred: &[Vec3], truth: &[Vec3]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "trajectory lengths {} and {} (must be equal and non-zero)",
            pred.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        total += great_circle_distance(p, t)?;
    }
    Ok(total / pred.len() as f64)
}
