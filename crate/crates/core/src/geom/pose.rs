//! Rigid SE(3) poses and point transforms between frames.

use serde::{Deserialize, Serialize};

use super::normalize_angle;

/// Rigid pose: translation in meters, intrinsic Z-Y-X Euler angles in
/// radians (yaw about z, then pitch about y, then roll about x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self { tx: 0.0, ty: 0.0, tz: 0.0, yaw: 0.0, pitch: 0.0, roll: 0.0 }
    }

    /// Planar pose helper (z = 0, no pitch/roll).
    pub fn planar(tx: f64, ty: f64, yaw: f64) -> Self {
        Self { tx, ty, tz: 0.0, yaw: normalize_angle(yaw), pitch: 0.0, roll: 0.0 }
    }

    pub fn normalized(mut self) -> Self {
        self.yaw = normalize_angle(self.yaw);
        self.pitch = normalize_angle(self.pitch);
        self.roll = normalize_angle(self.roll);
        self
    }

    /// Rotation matrix R = Rz(yaw) * Ry(pitch) * Rx(roll), row-major.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    }

    /// Map a point from this pose's local frame into the world frame.
    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.tx,
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.ty,
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.tz,
        ]
    }

    /// Map a world-frame point into this pose's local frame.
    pub fn from_world(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let d = [p[0] - self.tx, p[1] - self.ty, p[2] - self.tz];
        // R is orthonormal, so the inverse is the transpose.
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }
}

/// Re-express points given in `from`'s frame in `to`'s frame.
pub fn transform_points(points: &[[f64; 3]], from: &RigidPose, to: &RigidPose) -> Vec<[f64; 3]> {
    points.iter().map(|p| to.from_world(from.to_world(*p))).collect()
}

/// Rotate a direction vector from `from`'s frame into `to`'s frame
/// (translation-free part of the frame change).
pub(crate) fn rotate_between(from: &RigidPose, to: &RigidPose, v: [f64; 3]) -> [f64; 3] {
    let w = from.to_world(v);
    let o = from.to_world([0.0; 3]);
    let d = [w[0] - o[0], w[1] - o[1], w[2] - o[2]];
    let wt = to.from_world([d[0] + to.tx, d[1] + to.ty, d[2] + to.tz]);
    wt
}
