//! Synthetic camera configurations and correspondence sets.
//!
//! Parameter bounds for the presets come from published dataset
//! statistics (CVGL, Tsinghua-Daimler, Cityscapes). Draws are uniform in
//! each bound. Every configuration gets its own ChaCha stream derived from
//! `(seed, config_id)`, so parallel and serial generation agree.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera_model::{project_to_world, CameraParams, PixelObservation, WorldPoint};
use crate::cpl::{Component, CorrespondenceSet, ParamVector13};
use crate::error::{Error, Result};

pub const DEFAULT_DISPARITY_GUARD: f64 = 0.1;

fn default_guard() -> f64 {
    DEFAULT_DISPARITY_GUARD
}

/// Closed `[min, max]` bounds per camera parameter. Pitch bounds are in
/// degrees. `yaw_deg` and `roll_deg` are drawn but never leave the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub fx: [f64; 2],
    pub fy: [f64; 2],
    pub u0: [f64; 2],
    pub v0: [f64; 2],
    pub b: [f64; 2],
    pub d: [f64; 2],
    pub theta_p_deg: [f64; 2],
    pub tx: [f64; 2],
    pub ty: [f64; 2],
    pub tz: [f64; 2],
    #[serde(default)]
    pub tie_fy_to_fx: bool,
    #[serde(default)]
    pub yaw_deg: [f64; 2],
    #[serde(default)]
    pub roll_deg: [f64; 2],
    #[serde(default = "default_guard")]
    pub disparity_guard: f64,
}

impl ParamRanges {
    pub const PRESETS: [&'static str; 3] = ["cvgl", "cityscapes", "tsinghua"];

    pub fn cvgl() -> Self {
        Self {
            fx: [15.005, 120.092],
            fy: [15.005, 120.092],
            u0: [56.0, 56.0],
            v0: [56.0, 56.0],
            b: [-168.0, 0.0],
            d: [-16.0, 14.531],
            theta_p_deg: [-45.0, 15.0],
            tx: [-168.0, 0.0],
            ty: [-5.0, 5.0],
            tz: [-1.6, 0.4],
            tie_fy_to_fx: true,
            yaw_deg: [0.0, 0.0],
            roll_deg: [0.0, 0.0],
            disparity_guard: DEFAULT_DISPARITY_GUARD,
        }
    }

    pub fn tsinghua() -> Self {
        Self {
            fx: [2282.864, 2282.864],
            fy: [2281.794, 2281.794],
            u0: [1042.041, 1042.041],
            v0: [529.888, 529.888],
            b: [0.208, 0.208],
            d: [-6.753, 83.093],
            theta_p_deg: [0.022, 0.022],
            tx: [2.0, 2.0],
            ty: [0.125, 0.125],
            tz: [1.23, 1.23],
            tie_fy_to_fx: false,
            yaw_deg: [0.0, 0.0],
            roll_deg: [0.0, 0.0],
            disparity_guard: DEFAULT_DISPARITY_GUARD,
        }
    }

    pub fn cityscapes() -> Self {
        Self {
            fx: [2262.52, 2268.36],
            fy: [2225.540, 2265.301],
            u0: [1045.53, 1096.98],
            v0: [513.137, 519.277],
            b: [0.209, 0.222],
            d: [-4.675, 57.339],
            theta_p_deg: [0.038, 0.05],
            tx: [1.7, 1.7],
            ty: [-0.1, 0.1],
            tz: [1.18, 1.3],
            tie_fy_to_fx: false,
            yaw_deg: [0.0, 0.0],
            roll_deg: [0.0, 0.0],
            disparity_guard: DEFAULT_DISPARITY_GUARD,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "cvgl" => Ok(Self::cvgl()),
            "cityscapes" => Ok(Self::cityscapes()),
            "tsinghua" => Ok(Self::tsinghua()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (valid presets: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let r: Self = toml::from_str(text).map_err(|e| Error::parse(0, e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    /// Bound for a camera component, in file units (pitch in degrees).
    pub fn bound(&self, c: Component) -> [f64; 2] {
        match c {
            Component::Fx => self.fx,
            Component::Fy => self.fy,
            Component::U0 => self.u0,
            Component::V0 => self.v0,
            Component::B => self.b,
            Component::D => self.d,
            Component::ThetaP => self.theta_p_deg,
            Component::Tx => self.tx,
            Component::Ty => self.ty,
            Component::Tz => self.tz,
            Component::X | Component::Y | Component::Z => [f64::NEG_INFINITY, f64::INFINITY],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = Component::CAMERA.map(|c| (c.name(), self.bound(c)));
        let extra = [("yaw_deg", self.yaw_deg), ("roll_deg", self.roll_deg)];
        for (name, [min, max]) in named.into_iter().chain(extra) {
            if !(min.is_finite() && max.is_finite()) {
                return Err(Error::NonFinite("parameter range"));
            }
            if min > max {
                return Err(Error::InvalidRange { name, min, max });
            }
        }
        if !(self.disparity_guard >= 0.0) {
            return Err(Error::InvalidConfig(
                "disparity guard must be non-negative".into(),
            ));
        }
        if self.guard_excludes_range() {
            return Err(Error::EmptyRangeAfterGuard {
                min: self.d[0],
                max: self.d[1],
                guard: self.disparity_guard,
            });
        }
        Ok(())
    }

    fn guard_excludes_range(&self) -> bool {
        let g = self.disparity_guard;
        self.d[0] > -g && self.d[1] < g
    }

    /// Whether `p` lies inside every bound (pitch compared in degrees).
    pub fn contains(&self, p: &CameraParams) -> bool {
        let a = p.to_array();
        Component::CAMERA.iter().all(|&c| {
            let mut v = a[c.index()];
            if c == Component::ThetaP {
                v = degrees_exact(v);
            }
            let [lo, hi] = self.bound(c);
            v >= lo && v <= hi
        })
    }

    /// Per-component mid-range, pitch in radians.
    pub fn mid(&self) -> [f64; 10] {
        Component::CAMERA.map(|c| {
            let [lo, hi] = self.bound(c);
            let m = 0.5 * (lo + hi);
            if c == Component::ThetaP {
                m.to_radians()
            } else {
                m
            }
        })
    }
}

fn uniform(rng: &mut impl Rng, [min, max]: [f64; 2]) -> f64 {
    if min == max {
        min
    } else {
        rng.random_range(min..=max)
    }
}

fn guarded_disparity(rng: &mut impl Rng, ranges: &ParamRanges) -> Result<f64> {
    if ranges.guard_excludes_range() {
        return Err(Error::EmptyRangeAfterGuard {
            min: ranges.d[0],
            max: ranges.d[1],
            guard: ranges.disparity_guard,
        });
    }
    loop {
        let d = uniform(rng, ranges.d);
        if d.abs() >= ranges.disparity_guard {
            return Ok(d);
        }
        if ranges.d[0] == ranges.d[1] {
            // fixed value inside the guard band
            return Err(Error::EmptyRangeAfterGuard {
                min: ranges.d[0],
                max: ranges.d[1],
                guard: ranges.disparity_guard,
            });
        }
    }
}

/// A sampled rig: the estimable parameters plus the rotation angles that
/// the 13-vector does not carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSample {
    pub params: CameraParams,
    pub yaw_deg: f64,
    pub roll_deg: f64,
}

pub fn sample_rig(ranges: &ParamRanges, rng: &mut impl Rng) -> Result<RigSample> {
    let fx = uniform(rng, ranges.fx);
    let fy = if ranges.tie_fy_to_fx {
        fx
    } else {
        uniform(rng, ranges.fy)
    };
    let u0 = uniform(rng, ranges.u0);
    let v0 = uniform(rng, ranges.v0);
    let b = uniform(rng, ranges.b);
    let d = guarded_disparity(rng, ranges)?;
    let theta = uniform(rng, ranges.theta_p_deg).to_radians();
    let tx = uniform(rng, ranges.tx);
    let ty = uniform(rng, ranges.ty);
    let tz = uniform(rng, ranges.tz);
    let yaw_deg = uniform(rng, ranges.yaw_deg);
    let roll_deg = uniform(rng, ranges.roll_deg);
    Ok(RigSample {
        params: CameraParams::from_array([fx, fy, u0, v0, b, d, theta, tx, ty, tz]),
        yaw_deg,
        roll_deg,
    })
}

pub fn sample_config(ranges: &ParamRanges, seed: u64) -> Result<CameraParams> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_rig(ranges, &mut rng)?.params)
}

/// Degrees for a pitch stored in radians, chosen so that converting back
/// with `to_radians` reproduces the input bit for bit whenever such a value
/// exists near `rad.to_degrees()`.
pub fn degrees_exact(rad: f64) -> f64 {
    let guess = rad.to_degrees();
    let mut lo = guess;
    let mut hi = guess;
    for _ in 0..8 {
        if lo.to_radians() == rad {
            return lo;
        }
        if hi.to_radians() == rad {
            return hi;
        }
        lo = lo.next_down();
        hi = hi.next_up();
    }
    guess
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub config_id: usize,
    /// Ground truth; the X, Y, Z heads hold the centroid of `world`.
    pub params: ParamVector13,
    pub observations: CorrespondenceSet,
    /// Ground-truth world points computed from the noise-free pixels.
    pub world: Vec<WorldPoint>,
    pub noise_sigma: f64,
}

pub fn centroid(points: &[WorldPoint]) -> WorldPoint {
    let n = points.len() as f64;
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    for p in points {
        x += p.x;
        y += p.y;
        z += p.z;
    }
    WorldPoint::new(x / n, y / n, z / n)
}

impl SyntheticRecord {
    pub fn camera(&self) -> CameraParams {
        self.params.camera()
    }

    /// Largest absolute difference between stored world points and a fresh
    /// projection of the stored observations.
    pub fn reprojection_error(&self) -> Result<f64> {
        let p = self.camera();
        let mut worst: f64 = 0.0;
        for (o, w) in self.observations.observations().iter().zip(&self.world) {
            let r = project_to_world(o, &p)?;
            worst = worst
                .max((r.x - w.x).abs())
                .max((r.y - w.y).abs())
                .max((r.z - w.z).abs());
        }
        Ok(worst)
    }
}

fn config_rng(seed: u64, config_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(config_id as u64);
    rng
}

fn generate_one(
    ranges: &ParamRanges,
    config_id: usize,
    pts: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticRecord> {
    let mut rng = config_rng(seed, config_id);
    let params = sample_rig(ranges, &mut rng)?.params;
    let (u0, v0) = (params.intrinsics.u0, params.intrinsics.v0);
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut observations = Vec::with_capacity(pts);
    let mut world = Vec::with_capacity(pts);
    for _ in 0..pts {
        let u = uniform(&mut rng, [0.0, 2.0 * u0]);
        let v = uniform(&mut rng, [0.0, 2.0 * v0]);
        let disparity = guarded_disparity(&mut rng, ranges)?;
        let clean = PixelObservation::with_disparity(u, v, disparity);
        world.push(project_to_world(&clean, &params)?);
        observations.push(clean);
    }
    // Noise comes after every clean draw so that the noise level does not
    // change the rig or the clean pixels.
    if let Some(n) = &noise {
        for o in &mut observations {
            o.u += n.sample(&mut rng);
            o.v += n.sample(&mut rng);
        }
    }
    Ok(SyntheticRecord {
        config_id,
        params: ParamVector13::from_parts(&params, centroid(&world)),
        observations: CorrespondenceSet::new(observations)?,
        world,
        noise_sigma,
    })
}

/// Samples `n_configs` rigs with `pts_per_config` correspondences each.
///
/// Pixels are uniform over `[0, 2·u0] × [0, 2·v0]`, per-point disparities
/// uniform over the (guarded) disparity range. World points are computed
/// from the clean pixels before Gaussian pixel noise is added.
pub fn generate_records(
    ranges: &ParamRanges,
    n_configs: usize,
    pts_per_config: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<SyntheticRecord>> {
    ranges.validate()?;
    if n_configs == 0 || pts_per_config == 0 {
        return Err(Error::InvalidConfig(
            "configs and points must be at least 1".into(),
        ));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "noise sigma {noise_sigma} must be >= 0"
        )));
    }
    (0..n_configs)
        .into_par_iter()
        .map(|id| generate_one(ranges, id, pts_per_config, noise_sigma, seed))
        .collect()
}

const CAMERA_COLUMNS: [&str; 10] = [
    "fx",
    "fy",
    "u0",
    "v0",
    "b",
    "d",
    "theta_p_deg",
    "tx",
    "ty",
    "tz",
];

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn dataset_header(pts: usize) -> String {
    let mut cols: Vec<String> = vec!["config_id".into()];
    cols.extend(CAMERA_COLUMNS.iter().map(|s| s.to_string()));
    for i in 0..pts {
        cols.extend([format!("u_{i}"), format!("v_{i}"), format!("disparity_{i}")]);
    }
    for i in 0..pts {
        cols.extend([format!("X_{i}"), format!("Y_{i}"), format!("Z_{i}")]);
    }
    cols.push("noise_sigma".into());
    cols.join(",")
}

/// Writes the comma-separated dataset. All records must share a point count.
pub fn write_dataset(mut w: impl Write, records: &[SyntheticRecord]) -> Result<()> {
    let pts = records.first().map_or(0, |r| r.observations.len());
    writeln!(w, "{}", dataset_header(pts))?;
    for r in records {
        if r.observations.len() != pts || r.world.len() != pts {
            return Err(Error::ShapeMismatch {
                expected: pts,
                got: r.observations.len(),
            });
        }
        let mut fields = vec![r.config_id.to_string()];
        let cam = r.camera().to_array();
        for c in Component::CAMERA {
            let v = cam[c.index()];
            fields.push(fmt_f64(if c == Component::ThetaP {
                degrees_exact(v)
            } else {
                v
            }));
        }
        for o in r.observations.observations() {
            let disparity = o.effective_disparity(&r.camera());
            fields.extend([fmt_f64(o.u), fmt_f64(o.v), fmt_f64(disparity)]);
        }
        for p in &r.world {
            fields.extend([fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)]);
        }
        fields.push(fmt_f64(r.noise_sigma));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn dataset_to_string(records: &[SyntheticRecord]) -> String {
    let mut buf = Vec::new();
    write_dataset(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

fn points_from_header(line: &str) -> Result<usize> {
    let cols: Vec<&str> = line.trim_end().split(',').collect();
    let fixed = 1 + CAMERA_COLUMNS.len() + 1;
    if cols.len() < fixed || !(cols.len() - fixed).is_multiple_of(6) {
        return Err(Error::parse(1, "malformed dataset header"));
    }
    let pts = (cols.len() - fixed) / 6;
    if line.trim_end() != dataset_header(pts) {
        return Err(Error::parse(1, "unexpected dataset header columns"));
    }
    Ok(pts)
}

pub fn read_dataset(r: impl BufRead) -> Result<Vec<SyntheticRecord>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing header"))??;
    let pts = points_from_header(&header)?;
    let expected = 1 + CAMERA_COLUMNS.len() + 6 * pts + 1;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(Error::parse(
                line_no,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let config_id: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| Error::parse(line_no, format!("config_id: {e}")))?;
        let nums = fields[1..]
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        let mut cam = [0.0; 10];
        cam.copy_from_slice(&nums[..10]);
        cam[Component::ThetaP.index()] = cam[Component::ThetaP.index()].to_radians();
        let params = CameraParams::from_array(cam);
        let obs_vals = &nums[10..10 + 3 * pts];
        let world_vals = &nums[10 + 3 * pts..10 + 6 * pts];
        let observations: Vec<PixelObservation> = obs_vals
            .chunks_exact(3)
            .map(|t| PixelObservation::with_disparity(t[0], t[1], t[2]))
            .collect();
        let world: Vec<WorldPoint> = world_vals
            .chunks_exact(3)
            .map(|t| WorldPoint::new(t[0], t[1], t[2]))
            .collect();
        records.push(SyntheticRecord {
            config_id,
            params: ParamVector13::from_parts(&params, centroid(&world)),
            observations: CorrespondenceSet::new(observations)
                .map_err(|e| Error::parse(line_no, e.to_string()))?,
            world,
            noise_sigma: nums[10 + 6 * pts],
        });
    }
    Ok(records)
}
