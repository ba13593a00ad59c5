//! Stereo pinhole camera model.
//!
//! The projection chain goes image → camera → world:
//!
//! ```text
//! x_cam = fx · b / d
//! y_cam = −(x_cam / fx) · (u − u0)
//! z_cam =  (x_cam / fy) · (v0 − v)
//!
//! X =  x_cam · cos θp + z_cam · sin θp + tx
//! Y =  y_cam + ty
//! Z = −x_cam · sin θp + z_cam · cos θp + tz
//! ```
//!
//! The optical axis is `x_cam`; depth comes from baseline and disparity.
//! Only pitch survives as a rotation. The inverse maps (`world_to_camera`,
//! `camera_to_image`) are provided for round-trip checks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl Intrinsics {
    pub const fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Self {
        Self { fx, fy, u0, v0 }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.fx, self.fy, self.u0, self.v0]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(Error::NonFinite("intrinsics"));
        }
        if self.fx == 0.0 || self.fy == 0.0 {
            return Err(Error::ZeroFocalLength);
        }
        Ok(())
    }
}

/// Baseline, pitch (radians) and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub b: f64,
    pub theta_p: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl Extrinsics {
    pub const fn new(b: f64, theta_p: f64, tx: f64, ty: f64, tz: f64) -> Self {
        Self {
            b,
            theta_p,
            tx,
            ty,
            tz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.b, self.theta_p, self.tx, self.ty, self.tz]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(Error::NonFinite("extrinsics"));
        }
        if !(self.theta_p > -std::f64::consts::PI && self.theta_p <= std::f64::consts::PI) {
            return Err(Error::InvalidConfig(format!(
                "pitch {} rad outside (-pi, pi]",
                self.theta_p
            )));
        }
        Ok(())
    }
}

/// The ten estimable camera parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    /// Scalar disparity in pixels, used when an observation carries no
    /// per-point disparity of its own.
    pub d: f64,
}

impl CameraParams {
    pub const fn new(intrinsics: Intrinsics, extrinsics: Extrinsics, d: f64) -> Self {
        Self {
            intrinsics,
            extrinsics,
            d,
        }
    }

    /// Values in the order `fx, fy, u0, v0, b, d, theta_p, tx, ty, tz`.
    pub fn to_array(&self) -> [f64; 10] {
        let i = &self.intrinsics;
        let e = &self.extrinsics;
        [
            i.fx, i.fy, i.u0, i.v0, e.b, self.d, e.theta_p, e.tx, e.ty, e.tz,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        Self {
            intrinsics: Intrinsics::new(a[0], a[1], a[2], a[3]),
            extrinsics: Extrinsics::new(a[4], a[6], a[7], a[8], a[9]),
            d: a[5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.extrinsics.validate()?;
        if !self.d.is_finite() {
            return Err(Error::NonFinite("disparity"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelObservation {
    pub u: f64,
    pub v: f64,
    /// Per-point disparity; overrides the scalar `CameraParams::d` when set.
    pub disparity: Option<f64>,
}

impl PixelObservation {
    pub const fn new(u: f64, v: f64) -> Self {
        Self {
            u,
            v,
            disparity: None,
        }
    }

    pub const fn with_disparity(u: f64, v: f64, disparity: f64) -> Self {
        Self {
            u,
            v,
            disparity: Some(disparity),
        }
    }

    pub fn effective_disparity(&self, params: &CameraParams) -> f64 {
        self.disparity.unwrap_or(params.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub x_cam: f64,
    pub y_cam: f64,
    pub z_cam: f64,
}

impl CameraPoint {
    pub const fn new(x_cam: f64, y_cam: f64, z_cam: f64) -> Self {
        Self {
            x_cam,
            y_cam,
            z_cam,
        }
    }

    fn check_finite(self) -> Result<Self> {
        if self.x_cam.is_finite() && self.y_cam.is_finite() && self.z_cam.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite("camera point"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    fn check_finite(self) -> Result<Self> {
        if self.x.is_finite() && self.y.is_finite() && self.z.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite("world point"))
        }
    }
}

/// Lifts a pixel with its disparity into the camera frame.
pub fn image_to_camera(obs: &PixelObservation, p: &CameraParams) -> Result<CameraPoint> {
    let d = obs.effective_disparity(p);
    if d == 0.0 {
        return Err(Error::ZeroDisparity);
    }
    let Intrinsics { fx, fy, u0, v0 } = p.intrinsics;
    if fx == 0.0 || fy == 0.0 {
        return Err(Error::ZeroFocalLength);
    }
    let x_cam = fx * p.extrinsics.b / d;
    let y_cam = -(x_cam / fx) * (obs.u - u0);
    let z_cam = (x_cam / fy) * (v0 - obs.v);
    CameraPoint::new(x_cam, y_cam, z_cam).check_finite()
}

pub fn camera_to_world(c: &CameraPoint, e: &Extrinsics) -> Result<WorldPoint> {
    let (s, co) = e.theta_p.sin_cos();
    WorldPoint::new(
        c.x_cam * co + c.z_cam * s + e.tx,
        c.y_cam + e.ty,
        -c.x_cam * s + c.z_cam * co + e.tz,
    )
    .check_finite()
}

pub fn project_to_world(obs: &PixelObservation, p: &CameraParams) -> Result<WorldPoint> {
    let c = image_to_camera(obs, p)?;
    camera_to_world(&c, &p.extrinsics)
}

pub fn world_to_camera(w: &WorldPoint, e: &Extrinsics) -> Result<CameraPoint> {
    let (s, co) = e.theta_p.sin_cos();
    let dx = w.x - e.tx;
    let dz = w.z - e.tz;
    CameraPoint::new(dx * co - dz * s, w.y - e.ty, dx * s + dz * co).check_finite()
}

/// Inverse of [`image_to_camera`]. The returned observation always carries
/// the recovered disparity.
pub fn camera_to_image(c: &CameraPoint, intr: &Intrinsics, b: f64) -> Result<PixelObservation> {
    if c.x_cam == 0.0 {
        return Err(Error::DegeneratePoint);
    }
    let d = intr.fx * b / c.x_cam;
    let u = intr.u0 - intr.fx * c.y_cam / c.x_cam;
    let v = intr.v0 - intr.fy * c.z_cam / c.x_cam;
    if !(u.is_finite() && v.is_finite() && d.is_finite()) {
        return Err(Error::NonFinite("pixel observation"));
    }
    Ok(PixelObservation::with_disparity(u, v, d))
}

/// Depth-free monocular back-projection onto the plane `x_cam = 1`.
///
/// Note the sign convention differs from the stereo chain: here
/// `y_cam = (u − u0)/fx`, whereas [`image_to_camera`] gives
/// `y_cam = −(x_cam/fx)(u − u0)`.
pub fn normalized_image_to_camera(
    obs: &PixelObservation,
    intr: &Intrinsics,
) -> Result<CameraPoint> {
    if intr.fx == 0.0 || intr.fy == 0.0 {
        return Err(Error::ZeroFocalLength);
    }
    CameraPoint::new(
        1.0,
        (obs.u - intr.u0) / intr.fx,
        (obs.v - intr.v0) / intr.fy,
    )
    .check_finite()
}
