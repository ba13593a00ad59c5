//! Camera projection loss.
//!
//! Instead of comparing parameters directly, the loss compares the world
//! points that ground-truth and predicted parameters reconstruct from the
//! same pixels. [`decomposed_loss`] splits it into thirteen terms, each
//! built from a hybrid vector that takes a single component from the
//! prediction and the remaining twelve from ground truth.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use crate::camera_model::{
    image_to_camera, project_to_world, CameraParams, Extrinsics, Intrinsics, PixelObservation,
    WorldPoint,
};
use crate::error::{Error, Result};

pub const N_COMPONENTS: usize = 13;
pub const N_CAMERA: usize = 10;

/// Disparities with magnitude below this are rejected by the gradient path.
pub const DISPARITY_GUARD: f64 = 1e-9;

/// Index of each entry of the 13-vector `(fx, fy, u0, v0, b, d, θp, tx, ty, tz, X, Y, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Fx,
    Fy,
    U0,
    V0,
    B,
    D,
    ThetaP,
    Tx,
    Ty,
    Tz,
    X,
    Y,
    Z,
}

impl Component {
    pub const ALL: [Component; N_COMPONENTS] = [
        Component::Fx,
        Component::Fy,
        Component::U0,
        Component::V0,
        Component::B,
        Component::D,
        Component::ThetaP,
        Component::Tx,
        Component::Ty,
        Component::Tz,
        Component::X,
        Component::Y,
        Component::Z,
    ];

    pub const CAMERA: [Component; N_CAMERA] = [
        Component::Fx,
        Component::Fy,
        Component::U0,
        Component::V0,
        Component::B,
        Component::D,
        Component::ThetaP,
        Component::Tx,
        Component::Ty,
        Component::Tz,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn is_camera(self) -> bool {
        (self as usize) < N_CAMERA
    }

    pub const fn name(self) -> &'static str {
        match self {
            Component::Fx => "fx",
            Component::Fy => "fy",
            Component::U0 => "u0",
            Component::V0 => "v0",
            Component::B => "b",
            Component::D => "d",
            Component::ThetaP => "theta_p",
            Component::Tx => "tx",
            Component::Ty => "ty",
            Component::Tz => "tz",
            Component::X => "X",
            Component::Y => "Y",
            Component::Z => "Z",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s || (c.is_camera() && c.name().eq_ignore_ascii_case(s)))
            .or(match s {
                "pitch" | "theta" => Some(Component::ThetaP),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter name `{s}`")))
    }
}

/// The 13-vector ω: ten camera parameters followed by a world point head.
///
/// Pitch is stored in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamVector13(pub [f64; N_COMPONENTS]);

impl ParamVector13 {
    pub fn from_parts(camera: &CameraParams, head: WorldPoint) -> Self {
        let mut v = [0.0; N_COMPONENTS];
        v[..N_CAMERA].copy_from_slice(&camera.to_array());
        v[10] = head.x;
        v[11] = head.y;
        v[12] = head.z;
        Self(v)
    }

    pub fn camera(&self) -> CameraParams {
        let mut a = [0.0; N_CAMERA];
        a.copy_from_slice(&self.0[..N_CAMERA]);
        CameraParams::from_array(a)
    }

    pub fn head(&self) -> WorldPoint {
        WorldPoint::new(self.0[10], self.0[11], self.0[12])
    }

    pub fn with_component(mut self, c: Component, value: f64) -> Self {
        self[c] = value;
        self
    }

    /// Ground truth everywhere except component `k`, which comes from `pred`.
    pub fn hybrid(gt: &Self, pred: &Self, k: Component) -> Self {
        gt.with_component(k, pred[k])
    }
}

impl Index<Component> for ParamVector13 {
    type Output = f64;
    fn index(&self, c: Component) -> &f64 {
        &self.0[c.index()]
    }
}

impl IndexMut<Component> for ParamVector13 {
    fn index_mut(&mut self, c: Component) -> &mut f64 {
        &mut self.0[c.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    observations: Vec<PixelObservation>,
}

impl CorrespondenceSet {
    pub fn new(observations: Vec<PixelObservation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Empty("correspondence set"));
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[PixelObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Same pixels, with every per-point disparity dropped so that the
    /// scalar `d` of the parameter vector drives depth.
    pub fn without_disparity_overrides(&self) -> Self {
        Self {
            observations: self
                .observations
                .iter()
                .map(|o| PixelObservation::new(o.u, o.v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    BaselineMae,
    CplUniform,
    CplAdaptive,
}

impl LossMode {
    pub const fn name(self) -> &'static str {
        match self {
            LossMode::BaselineMae => "baseline_mae",
            LossMode::CplUniform => "cpl_uniform",
            LossMode::CplAdaptive => "cpl_adaptive",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "baseline_mae" | "baseline-mae" => Ok(LossMode::BaselineMae),
            "cpl-u" | "cpl_uniform" | "cpl-uniform" => Ok(LossMode::CplUniform),
            "cpl-a" | "cpl_adaptive" | "cpl-adaptive" => Ok(LossMode::CplAdaptive),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss mode `{other}` (expected baseline, cpl-u or cpl-a)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_param: [f64; N_COMPONENTS],
    /// Adaptive weights α; only present in `CplAdaptive` mode.
    pub weights: Option<[f64; N_COMPONENTS]>,
    pub mode: LossMode,
}

impl LossReport {
    pub fn uniform(per_param: [f64; N_COMPONENTS], mode: LossMode) -> Self {
        Self {
            total: per_param.iter().sum::<f64>() / N_COMPONENTS as f64,
            per_param,
            weights: None,
            mode,
        }
    }

    pub fn weighted(per_param: [f64; N_COMPONENTS], alpha: [f64; N_COMPONENTS]) -> Self {
        Self {
            total: per_param.iter().zip(&alpha).map(|(l, a)| l * a).sum(),
            per_param,
            weights: Some(alpha),
            mode: LossMode::CplAdaptive,
        }
    }

    /// Flat `key=value` lines: `mode`, `total`, `L_<name>` and `alpha_<name>`.
    pub fn to_record(&self) -> String {
        let mut out = format!("mode={}\ntotal={:.16e}\n", self.mode, self.total);
        for c in Component::ALL {
            out.push_str(&format!("L_{}={:.16e}\n", c, self.per_param[c.index()]));
        }
        if let Some(alpha) = &self.weights {
            for c in Component::ALL {
                out.push_str(&format!("alpha_{}={:.16e}\n", c, alpha[c.index()]));
            }
        }
        out
    }
}

fn mae3(a: &WorldPoint, b: &WorldPoint) -> f64 {
    ((a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs()) / 3.0
}

fn project_all(p: &CameraParams, obs: &CorrespondenceSet) -> Result<Vec<WorldPoint>> {
    obs.observations()
        .iter()
        .map(|o| project_to_world(o, p))
        .collect()
}

fn projection_term(
    gt_world: &[WorldPoint],
    pred: &CameraParams,
    obs: &CorrespondenceSet,
) -> Result<f64> {
    let mut sum = 0.0;
    for (o, w_gt) in obs.observations().iter().zip(gt_world) {
        sum += mae3(&project_to_world(o, pred)?, w_gt);
    }
    Ok(sum / obs.len() as f64)
}

/// Mean over correspondences of the per-point world MAE, plus the MAE of the
/// (X, Y, Z) heads. Both terms carry unit weight.
pub fn cpl_loss(gt: &ParamVector13, pred: &ParamVector13, obs: &CorrespondenceSet) -> Result<f64> {
    let gt_world = project_all(&gt.camera(), obs)?;
    Ok(projection_term(&gt_world, &pred.camera(), obs)? + mae3(&gt.head(), &pred.head()))
}

fn decomposed_terms(
    gt: &ParamVector13,
    pred: &ParamVector13,
    obs: &CorrespondenceSet,
) -> Result<[f64; N_COMPONENTS]> {
    let gt_world = project_all(&gt.camera(), obs)?;
    let mut terms = [0.0; N_COMPONENTS];
    for c in Component::ALL {
        let hybrid = ParamVector13::hybrid(gt, pred, c);
        terms[c.index()] =
            projection_term(&gt_world, &hybrid.camera(), obs)? + mae3(&gt.head(), &hybrid.head());
    }
    Ok(terms)
}

/// Thirteen hybrid losses, combined with uniform weights.
pub fn decomposed_loss(
    gt: &ParamVector13,
    pred: &ParamVector13,
    obs: &CorrespondenceSet,
) -> Result<LossReport> {
    Ok(LossReport::uniform(
        decomposed_terms(gt, pred, obs)?,
        LossMode::CplUniform,
    ))
}

/// Thirteen hybrid losses, combined with the given adaptive weights.
pub fn decomposed_loss_weighted(
    gt: &ParamVector13,
    pred: &ParamVector13,
    obs: &CorrespondenceSet,
    alpha: &[f64; N_COMPONENTS],
) -> Result<LossReport> {
    Ok(LossReport::weighted(
        decomposed_terms(gt, pred, obs)?,
        *alpha,
    ))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Decomposed terms together with `∂L_k/∂pred_k` for every component.
///
/// Term `k` depends on the prediction only through component `k`, so this
/// diagonal is the whole gradient of each term.
pub fn decomposed_gradient(
    gt: &ParamVector13,
    pred: &ParamVector13,
    obs: &CorrespondenceSet,
) -> Result<([f64; N_COMPONENTS], [f64; N_COMPONENTS])> {
    let gt_world = project_all(&gt.camera(), obs)?;
    let n = obs.len() as f64;
    let mut terms = [0.0; N_COMPONENTS];
    let mut grads = [0.0; N_COMPONENTS];
    for c in Component::CAMERA {
        let hybrid = ParamVector13::hybrid(gt, pred, c).camera();
        let (mut sum, mut g) = (0.0, 0.0);
        for (o, w_gt) in obs.observations().iter().zip(&gt_world) {
            let (w, jac) = project_with_jacobian(o, &hybrid)?;
            sum += mae3(&w, w_gt);
            let r = [w.x - w_gt.x, w.y - w_gt.y, w.z - w_gt.z];
            for (row, res) in r.iter().enumerate() {
                g += sign(*res) * jac.0[row][c.index()];
            }
        }
        terms[c.index()] = sum / n;
        grads[c.index()] = g / (3.0 * n);
    }
    for c in [Component::X, Component::Y, Component::Z] {
        let diff = pred[c] - gt[c];
        terms[c.index()] = diff.abs() / 3.0;
        grads[c.index()] = sign(diff) / 3.0;
    }
    Ok((terms, grads))
}

/// Plain MAE on the 13 outputs, no camera model involved.
pub fn baseline_loss(gt: &ParamVector13, pred: &ParamVector13) -> LossReport {
    let mut terms = [0.0; N_COMPONENTS];
    for (t, (g, p)) in terms.iter_mut().zip(gt.0.iter().zip(&pred.0)) {
        *t = (p - g).abs();
    }
    LossReport::uniform(terms, LossMode::BaselineMae)
}

/// Inverse-EMA loss balancing.
///
/// Each term keeps an exponential moving average of its loss; weights are
/// proportional to the inverse EMA and renormalised to sum to 13, so terms
/// with larger magnitude get smaller weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveWeights {
    decay: f64,
    ema: [f64; N_COMPONENTS],
    alpha: [f64; N_COMPONENTS],
    active: [bool; N_COMPONENTS],
    updates: u64,
}

impl AdaptiveWeights {
    pub const EPSILON: f64 = 1e-8;
    pub const DEFAULT_DECAY: f64 = 0.99;

    pub fn new(decay: f64) -> Result<Self> {
        Self::with_active(decay, [true; N_COMPONENTS])
    }

    /// Balances only the `active` terms. Inactive terms (components that
    /// cannot be wrong, e.g. a parameter held constant across the data)
    /// keep α = 1; the active ones share the remaining `n_active` so that
    /// Σα is still 13. Without the mask an identically-zero term takes
    /// weight `1/ε` and starves every other term.
    pub fn with_active(decay: f64, active: [bool; N_COMPONENTS]) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay {decay} must lie in (0, 1)"
            )));
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::InvalidConfig("no active loss terms".into()));
        }
        Ok(Self {
            decay,
            ema: [0.0; N_COMPONENTS],
            alpha: [1.0; N_COMPONENTS],
            active,
            updates: 0,
        })
    }

    pub fn active(&self) -> &[bool; N_COMPONENTS] {
        &self.active
    }

    pub fn alpha(&self) -> &[f64; N_COMPONENTS] {
        &self.alpha
    }

    pub fn ema(&self) -> &[f64; N_COMPONENTS] {
        &self.ema
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Folds one set of per-term losses into the EMA and recomputes α.
    ///
    /// The first call seeds the EMA with `losses` itself. Starting from
    /// zero instead would make α drift by a factor of up to
    /// `1 / (1 − decay)` while the average warms up whenever some term is
    /// exactly zero, because such terms pin the normaliser at `1/ε`.
    pub fn update(&mut self, losses: &[f64; N_COMPONENTS]) -> [f64; N_COMPONENTS] {
        if self.updates == 0 {
            self.ema = *losses;
        } else {
            for (e, l) in self.ema.iter_mut().zip(losses) {
                *e = self.decay * *e + (1.0 - self.decay) * l;
            }
        }
        self.updates += 1;
        self.alpha = Self::masked_weights(&self.ema, &self.active);
        self.alpha
    }

    /// `α_i = 13 · (1/(EMA_i + ε)) / Σ_j 1/(EMA_j + ε)`.
    pub fn weights_from_ema(ema: &[f64; N_COMPONENTS]) -> [f64; N_COMPONENTS] {
        Self::masked_weights(ema, &[true; N_COMPONENTS])
    }

    fn masked_weights(
        ema: &[f64; N_COMPONENTS],
        active: &[bool; N_COMPONENTS],
    ) -> [f64; N_COMPONENTS] {
        let n_active = active.iter().filter(|&&a| a).count() as f64;
        let sum: f64 = ema
            .iter()
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|(e, _)| 1.0 / (e + Self::EPSILON))
            .sum();
        let mut alpha = [1.0; N_COMPONENTS];
        for k in 0..N_COMPONENTS {
            if active[k] {
                alpha[k] = (1.0 / (ema[k] + Self::EPSILON)) / sum * n_active;
            }
        }
        alpha
    }
}

/// ∂(X, Y, Z)/∂(fx, fy, u0, v0, b, d, θp, tx, ty, tz), rows indexed by
/// world coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldJacobian(pub [[f64; N_CAMERA]; 3]);

impl WorldJacobian {
    pub fn get(&self, row: usize, c: Component) -> f64 {
        self.0[row][c.index()]
    }
}

/// Projects one observation and returns the world point together with its
/// analytic Jacobian. When the observation carries its own disparity the
/// column for `d` is zero.
pub fn project_with_jacobian(
    obs: &PixelObservation,
    p: &CameraParams,
) -> Result<(WorldPoint, WorldJacobian)> {
    let d = obs.effective_disparity(p);
    if d.abs() < DISPARITY_GUARD {
        return Err(Error::ZeroDisparity);
    }
    let cam = image_to_camera(obs, p)?;
    let Intrinsics { fx, fy, u0, v0 } = p.intrinsics;
    let Extrinsics { b, theta_p, .. } = p.extrinsics;
    let (s, c) = theta_p.sin_cos();
    let du = obs.u - u0;
    let dv = v0 - obs.v;
    let scalar_d = obs.disparity.is_none();

    // camera-frame partials, columns in Component::CAMERA order
    let mut jx = [0.0; N_CAMERA];
    let mut jy = [0.0; N_CAMERA];
    let mut jz = [0.0; N_CAMERA];

    jx[Component::Fx.index()] = b / d;
    jx[Component::B.index()] = fx / d;

    // y_cam = −(b/d)(u − u0): the fx dependence cancels
    jy[Component::U0.index()] = b / d;
    jy[Component::B.index()] = -du / d;

    let k = fx * b / (d * fy);
    jz[Component::Fx.index()] = b * dv / (d * fy);
    jz[Component::Fy.index()] = -k * dv / fy;
    jz[Component::V0.index()] = k;
    jz[Component::B.index()] = fx * dv / (d * fy);

    if scalar_d {
        jx[Component::D.index()] = -fx * b / (d * d);
        jy[Component::D.index()] = b * du / (d * d);
        jz[Component::D.index()] = -k * dv / d;
    }

    let mut rows = [[0.0; N_CAMERA]; 3];
    for i in 0..N_CAMERA {
        rows[0][i] = c * jx[i] + s * jz[i];
        rows[1][i] = jy[i];
        rows[2][i] = -s * jx[i] + c * jz[i];
    }
    let th = Component::ThetaP.index();
    rows[0][th] = -cam.x_cam * s + cam.z_cam * c;
    rows[2][th] = -cam.x_cam * c - cam.z_cam * s;
    rows[0][Component::Tx.index()] = 1.0;
    rows[1][Component::Ty.index()] = 1.0;
    rows[2][Component::Tz.index()] = 1.0;

    let world = crate::camera_model::camera_to_world(&cam, &p.extrinsics)?;
    Ok((world, WorldJacobian(rows)))
}

pub fn grad_world_point(obs: &PixelObservation, p: &CameraParams) -> Result<WorldJacobian> {
    project_with_jacobian(obs, p).map(|(_, j)| j)
}

/// Central-difference Jacobian, step `1e-6 · max(1, |param|)`.
pub fn finite_difference_jacobian(
    obs: &PixelObservation,
    p: &CameraParams,
) -> Result<WorldJacobian> {
    let base = p.to_array();
    let mut rows = [[0.0; N_CAMERA]; 3];
    for k in 0..N_CAMERA {
        let h = 1e-6 * base[k].abs().max(1.0);
        let mut plus = base;
        let mut minus = base;
        plus[k] += h;
        minus[k] -= h;
        let wp = project_to_world(obs, &CameraParams::from_array(plus))?.to_array();
        let wm = project_to_world(obs, &CameraParams::from_array(minus))?.to_array();
        let step = plus[k] - minus[k];
        for r in 0..3 {
            rows[r][k] = (wp[r] - wm[r]) / step;
        }
    }
    Ok(WorldJacobian(rows))
}

/// Relative error with a unit floor on the denominator, so entries that are
/// analytically zero are compared absolutely.
pub fn jacobian_relative_error(a: &WorldJacobian, b: &WorldJacobian) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..3 {
        for k in 0..N_CAMERA {
            let (x, y) = (a.0[r][k], b.0[r][k]);
            let denom = x.abs().max(y.abs()).max(1.0);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt_vector() -> ParamVector13 {
        ParamVector13([
            60.0, 62.0, 56.0, 56.0, -80.0, -7.5, -0.2, -80.0, 0.4, -0.5, 10.0, -3.0, 2.0,
        ])
    }

    fn obs() -> CorrespondenceSet {
        CorrespondenceSet::new(vec![
            PixelObservation::new(10.0, 20.0),
            PixelObservation::new(90.0, 5.0),
            PixelObservation::new(33.0, 101.0),
        ])
        .unwrap()
    }

    #[test]
    fn component_names_round_trip() {
        for c in Component::ALL {
            assert_eq!(c.name().parse::<Component>().unwrap(), c);
        }
        assert_eq!("FX".parse::<Component>().unwrap(), Component::Fx);
        assert!("w".parse::<Component>().is_err());
        assert_eq!(Component::ALL.iter().filter(|c| c.is_camera()).count(), 10);
    }

    #[test]
    fn identical_params_give_zero_loss() {
        let gt = gt_vector();
        assert_eq!(cpl_loss(&gt, &gt, &obs()).unwrap(), 0.0);
        let r = decomposed_loss(&gt, &gt, &obs()).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.per_param.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn translation_shift_moves_only_x() {
        let gt = gt_vector().with_component(Component::ThetaP, 0.0);
        let delta = 0.75;
        let pred = gt.with_component(Component::Tx, gt[Component::Tx] + delta);
        let one = CorrespondenceSet::new(vec![PixelObservation::new(40.0, 70.0)]).unwrap();
        let loss = cpl_loss(&gt, &pred, &one).unwrap();
        assert!((loss - delta / 3.0).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn single_component_perturbation_isolated() {
        let gt = gt_vector();
        let pred = gt.with_component(Component::Fy, 70.0);
        let r = decomposed_loss(&gt, &pred, &obs()).unwrap();
        for c in Component::ALL {
            if c == Component::Fy {
                assert!(r.per_param[c.index()] > 0.0);
            } else {
                assert_eq!(r.per_param[c.index()], 0.0, "{c}");
            }
        }
        assert!((r.total - r.per_param[Component::Fy.index()] / 13.0).abs() < 1e-15);
    }

    #[test]
    fn head_terms_are_hybrids_too() {
        let gt = gt_vector();
        let pred = gt.with_component(Component::Z, 5.0);
        let r = decomposed_loss(&gt, &pred, &obs()).unwrap();
        assert!((r.per_param[Component::Z.index()] - 1.0).abs() < 1e-15);
        assert_eq!(r.per_param.iter().filter(|&&l| l != 0.0).count(), 1);
    }

    #[test]
    fn weighted_report_total() {
        let gt = gt_vector();
        let mut pred = gt;
        for (i, v) in pred.0.iter_mut().enumerate() {
            *v += 0.1 * (i as f64 + 1.0);
        }
        let alpha = [
            0.5, 1.5, 1.0, 1.0, 2.0, 0.5, 1.0, 1.0, 1.0, 0.5, 1.5, 1.0, 0.5,
        ];
        let r = decomposed_loss_weighted(&gt, &pred, &obs(), &alpha).unwrap();
        let expect: f64 = r.per_param.iter().zip(&alpha).map(|(l, a)| l * a).sum();
        assert!((r.total - expect).abs() < 1e-12);
        assert_eq!(r.mode, LossMode::CplAdaptive);
        assert!(r.to_record().contains("alpha_theta_p="));
    }

    #[test]
    fn baseline_is_plain_mae() {
        let gt = gt_vector();
        let pred = gt
            .with_component(Component::B, -79.0)
            .with_component(Component::X, 12.0);
        let r = baseline_loss(&gt, &pred);
        assert!((r.total - 3.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn decomposed_gradient_agrees_with_report_and_differences() {
        let gt = gt_vector();
        let mut pred = gt;
        for (i, v) in pred.0.iter_mut().enumerate() {
            *v += 0.05 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let report = decomposed_loss(&gt, &pred, &obs()).unwrap();
        let (terms, grads) = decomposed_gradient(&gt, &pred, &obs()).unwrap();
        assert_eq!(terms, report.per_param);
        for c in Component::ALL {
            let h = 1e-6 * pred[c].abs().max(1.0);
            let up = pred.with_component(c, pred[c] + h);
            let dn = pred.with_component(c, pred[c] - h);
            let lu = decomposed_loss(&gt, &up, &obs()).unwrap().per_param[c.index()];
            let ld = decomposed_loss(&gt, &dn, &obs()).unwrap().per_param[c.index()];
            let fd = (lu - ld) / (2.0 * h);
            let g = grads[c.index()];
            assert!(
                (g - fd).abs() <= 1e-5 * g.abs().max(1.0),
                "{c}: {g} vs {fd}"
            );
        }
    }

    #[test]
    fn empty_correspondence_set_rejected() {
        assert!(matches!(
            CorrespondenceSet::new(vec![]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn equal_losses_give_unit_weights() {
        let mut w = AdaptiveWeights::new(0.9).unwrap();
        let alpha = w.update(&[2.5; N_COMPONENTS]);
        for a in alpha {
            assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_order_inverse_to_ema() {
        let mut ema = [1.0; N_COMPONENTS];
        ema[4] = 10.0;
        ema[7] = 3.0;
        ema[0] = 0.5;
        let alpha = AdaptiveWeights::weights_from_ema(&ema);
        let min = alpha.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(alpha[4], min);
        for i in 0..N_COMPONENTS {
            for j in 0..N_COMPONENTS {
                if ema[i] > ema[j] {
                    assert!(alpha[i] < alpha[j]);
                }
            }
        }
        // direct formula
        let inv: Vec<f64> = ema.iter().map(|e| 1.0 / (e + 1e-8)).collect();
        let s: f64 = inv.iter().sum();
        for i in 0..N_COMPONENTS {
            assert!((alpha[i] - 13.0 * inv[i] / s).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_converge_under_constant_losses() {
        let losses: [f64; N_COMPONENTS] = std::array::from_fn(|i| 0.1 + i as f64 * 3.0);
        let mut w = AdaptiveWeights::new(0.9).unwrap();
        let mut prev = w.update(&losses);
        for _ in 0..2000 {
            prev = w.update(&losses);
        }
        let next = w.update(&losses);
        for (a, b) in prev.iter().zip(&next) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((next.iter().sum::<f64>() - 13.0).abs() < 1e-12);
    }

    #[test]
    fn ema_seeded_then_averaged() {
        let mut w = AdaptiveWeights::new(0.9).unwrap();
        w.update(&[4.0; N_COMPONENTS]);
        assert_eq!(w.ema(), &[4.0; N_COMPONENTS]);
        w.update(&[2.0; N_COMPONENTS]);
        for e in w.ema() {
            assert!((e - (0.9 * 4.0 + 0.1 * 2.0)).abs() < 1e-15);
        }
        assert_eq!(w.updates(), 2);
    }

    #[test]
    fn masked_terms_keep_unit_weight() {
        let mut active = [true; N_COMPONENTS];
        active[2] = false;
        active[3] = false;
        let mut w = AdaptiveWeights::with_active(0.99, active).unwrap();
        let mut losses: [f64; N_COMPONENTS] = std::array::from_fn(|i| 1.0 + i as f64);
        losses[2] = 0.0;
        losses[3] = 0.0;
        let alpha = w.update(&losses);
        assert_eq!((alpha[2], alpha[3]), (1.0, 1.0));
        assert!((alpha.iter().sum::<f64>() - 13.0).abs() < 1e-12);
        // active weights follow the formula over the active set alone
        let inv: Vec<f64> = (0..N_COMPONENTS)
            .filter(|&k| active[k])
            .map(|k| 1.0 / (losses[k] + 1e-8))
            .collect();
        let s: f64 = inv.iter().sum();
        assert!((alpha[0] - 11.0 * (1.0 / (1.0 + 1e-8)) / s).abs() < 1e-12);
        assert!(AdaptiveWeights::with_active(0.9, [false; N_COMPONENTS]).is_err());
    }

    #[test]
    fn invalid_decay_rejected() {
        assert!(AdaptiveWeights::new(1.0).is_err());
        assert!(AdaptiveWeights::new(0.0).is_err());
    }

    #[test]
    fn jacobian_structural_entries() {
        let p = gt_vector().camera();
        for o in obs().observations() {
            let j = grad_world_point(o, &p).unwrap();
            assert_eq!(j.get(1, Component::Ty), 1.0);
            assert_eq!(j.get(0, Component::Tz), 0.0);
            assert_eq!(j.get(2, Component::Tx), 0.0);
            assert_eq!(j.get(1, Component::Fx), 0.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = gt_vector().camera();
        for o in obs().observations() {
            let a = grad_world_point(o, &p).unwrap();
            let n = finite_difference_jacobian(o, &p).unwrap();
            assert!(jacobian_relative_error(&a, &n) < 1e-5);
        }
        let o = PixelObservation::with_disparity(12.0, 80.0, 3.0);
        let a = grad_world_point(&o, &p).unwrap();
        assert_eq!(a.get(0, Component::D), 0.0);
        let n = finite_difference_jacobian(&o, &p).unwrap();
        assert!(jacobian_relative_error(&a, &n) < 1e-5);
    }

    #[test]
    fn jacobian_rejects_tiny_disparity() {
        let mut p = gt_vector().camera();
        p.d = 1e-10;
        assert!(matches!(
            grad_world_point(&PixelObservation::new(1.0, 1.0), &p),
            Err(Error::ZeroDisparity)
        ));
    }
}
