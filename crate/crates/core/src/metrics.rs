//! Evaluation metrics: normalised MAE per parameter and horizontal field of
//! view threshold accuracy.

use crate::cpl::Component;
use crate::error::{Error, Result};

/// Column order of the NMAE table.
pub const TABLE_ORDER: [Component; 10] = [
    Component::Fx,
    Component::Fy,
    Component::U0,
    Component::V0,
    Component::B,
    Component::D,
    Component::Tx,
    Component::Ty,
    Component::Tz,
    Component::ThetaP,
];

/// Integer degree thresholds used for hFOV accuracy.
pub const HFOV_THRESHOLDS: [f64; 6] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];

fn check_lengths(targets: &[f64], preds: &[f64]) -> Result<()> {
    if targets.len() != preds.len() {
        return Err(Error::LengthMismatch(targets.len(), preds.len()));
    }
    if targets.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    Ok(())
}

fn mean_abs_target(targets: &[f64]) -> Result<f64> {
    let denom = targets.iter().map(|y| y.abs()).sum::<f64>() / targets.len() as f64;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(denom)
}

/// `MAE(y, ŷ) / mean(|y|)`.
pub fn nmae(targets: &[f64], preds: &[f64]) -> Result<f64> {
    check_lengths(targets, preds)?;
    let denom = mean_abs_target(targets)?;
    let mae = targets
        .iter()
        .zip(preds)
        .map(|(y, p)| (p - y).abs())
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mae / denom)
}

/// Signed variant: `mean(ŷ − y) / mean(|y|)`. Can be negative.
pub fn nmae_signed(targets: &[f64], preds: &[f64]) -> Result<f64> {
    check_lengths(targets, preds)?;
    let denom = mean_abs_target(targets)?;
    let bias = targets.iter().zip(preds).map(|(y, p)| p - y).sum::<f64>() / targets.len() as f64;
    Ok(bias / denom)
}

/// Horizontal field of view in degrees, `2·atan(w / 2f)`.
pub fn hfov(f: f64, w: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::NonPositiveInput("focal length"));
    }
    if !(w > 0.0) {
        return Err(Error::NonPositiveInput("image width"));
    }
    Ok((2.0 * (w / (2.0 * f)).atan()).to_degrees())
}

/// Fraction of samples whose hFOV error is at most each threshold (degrees).
pub fn hfov_accuracy(gt_f: &[f64], pred_f: &[f64], w: f64, thresholds: &[f64]) -> Result<Vec<f64>> {
    check_lengths(gt_f, pred_f)?;
    let errors = gt_f
        .iter()
        .zip(pred_f)
        .map(|(&g, &p)| Ok((hfov(p, w)? - hfov(g, w)?).abs()))
        .collect::<Result<Vec<f64>>>()?;
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    /// NMAE in [`TABLE_ORDER`].
    pub nmae: [f64; 10],
    /// Accuracy at [`HFOV_THRESHOLDS`].
    pub hfov_accuracy: [f64; 6],
    pub sample_count: usize,
}

impl EvalTable {
    pub fn nmae_of(&self, c: Component) -> Option<f64> {
        TABLE_ORDER
            .iter()
            .position(|&t| t == c)
            .map(|i| self.nmae[i])
    }

    pub fn hfov_is_monotone(&self) -> bool {
        self.hfov_accuracy.windows(2).all(|w| w[0] <= w[1])
    }

    /// Comma-separated table: an NMAE row under the parameter header, then
    /// an accuracy row under the threshold header.
    pub fn to_table(&self) -> String {
        let mut out = String::from("metric");
        for c in TABLE_ORDER {
            out.push(',');
            out.push_str(c.name());
        }
        out.push_str("\nnmae");
        for v in self.nmae {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push_str("\nthreshold_deg");
        for t in HFOV_THRESHOLDS {
            out.push_str(&format!(",{t}"));
        }
        out.push_str("\nhfov_accuracy");
        for v in self.hfov_accuracy {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
        out
    }

    pub fn to_record(&self) -> String {
        let mut out = format!("sample_count={}\n", self.sample_count);
        for (c, v) in TABLE_ORDER.iter().zip(self.nmae) {
            out.push_str(&format!("nmae_{}={:.16e}\n", c.name(), v));
        }
        for (t, v) in HFOV_THRESHOLDS.iter().zip(self.hfov_accuracy) {
            out.push_str(&format!("hfov_acc_{t}={v:.16e}\n"));
        }
        out
    }
}
