use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

pub const fn vec3(x: f32, y: f32, z: f32) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = vec3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f32 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }

    pub fn abs(self) -> Vec3 {
        vec3(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn max_component(self) -> f32 {
        self.x.max(self.y).max(self.z)
    }

    pub fn to_array(self) -> [f32; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f32; 3]) -> Vec3 {
        vec3(a[0], a[1], a[2])
    }

    pub fn get(self, axis: usize) -> f32 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        vec3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        vec3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f32> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f32) -> Vec3 {
        vec3(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f32> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f32) -> Vec3 {
        vec3(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        vec3(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix; used for rigid rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [f32; 9]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    /// Rodrigues rotation about `axis` by `angle_deg` degrees. The axis is
    /// normalized; a zero axis gives the identity.
    pub fn rotation(axis: [f32; 3], angle_deg: f32) -> Mat3 {
        let len = (axis[0] as f64).hypot(axis[1] as f64).hypot(axis[2] as f64);
        if len < 1e-12 || angle_deg == 0.0 {
            return Mat3::IDENTITY;
        }
        let (ux, uy, uz) = (
            axis[0] as f64 / len,
            axis[1] as f64 / len,
            axis[2] as f64 / len,
        );
        let a = (angle_deg as f64).to_radians();
        let (s, c) = a.sin_cos();
        let ic = 1.0 - c;
        let m = [
            c + ux * ux * ic,
            ux * uy * ic - uz * s,
            ux * uz * ic + uy * s,
            uy * ux * ic + uz * s,
            c + uy * uy * ic,
            uy * uz * ic - ux * s,
            uz * ux * ic - uy * s,
            uz * uy * ic + ux * s,
            c + uz * uz * ic,
        ];
        Mat3(m.map(|v| v as f32))
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        vec3(
            m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z,
        )
    }

    /// For rotations this is the inverse.
    pub fn transpose_mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        vec3(
            m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z,
        )
    }

    /// Row-wise absolute value times a vector; bounds rotated symmetric boxes.
    pub fn abs_mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        vec3(
            m[0].abs() * v.x + m[1].abs() * v.y + m[2].abs() * v.z,
            m[3].abs() * v.x + m[4].abs() * v.y + m[5].abs() * v.z,
            m[6].abs() * v.x + m[7].abs() * v.y + m[8].abs() * v.z,
        )
    }
}
