use super::{fit_parameters, record_features, MtlNet, SolverConfig};
use crate::camera_model::project_to_world;
use crate::cpl::{Component, ParamVector13, N_COMPONENTS};
use crate::datagen::{centroid, SyntheticRecord};
use crate::error::{Error, Result};
use crate::metrics::{hfov_accuracy, nmae, nmae_signed, EvalTable, HFOV_THRESHOLDS, TABLE_ORDER};

/// Anything that maps a record's observations to a 13-vector.
pub trait Predictor {
    fn predict(&self, record: &SyntheticRecord) -> Result<ParamVector13>;
}

/// Predicts the training-set mean of every component, whatever the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPredictor {
    pub mean: ParamVector13,
}

impl MeanPredictor {
    pub fn fit(records: &[SyntheticRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("records"));
        }
        let n = records.len() as f64;
        let mut mean = [0.0; N_COMPONENTS];
        for r in records {
            for (m, v) in mean.iter_mut().zip(&r.params.0) {
                *m += v / n;
            }
        }
        Ok(Self {
            mean: ParamVector13(mean),
        })
    }
}

impl Predictor for MeanPredictor {
    fn predict(&self, _: &SyntheticRecord) -> Result<ParamVector13> {
        Ok(self.mean)
    }
}

/// Returns the ground truth; useful as an upper bound and a sanity check.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruthPredictor;

impl Predictor for TruthPredictor {
    fn predict(&self, r: &SyntheticRecord) -> Result<ParamVector13> {
        Ok(r.params)
    }
}

/// Runs [`fit_parameters`] per record from a fixed starting point; the
/// heads are the centroid of the re-projected observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverPredictor {
    pub init: ParamVector13,
    pub config: SolverConfig,
}

impl Predictor for SolverPredictor {
    fn predict(&self, r: &SyntheticRecord) -> Result<ParamVector13> {
        let fit = fit_parameters(&r.observations, &r.world, &self.init.camera(), &self.config)?;
        let world = r
            .observations
            .observations()
            .iter()
            .map(|o| project_to_world(o, &fit.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVector13::from_parts(&fit.params, centroid(&world)))
    }
}

impl Predictor for MtlNet {
    fn predict(&self, r: &SyntheticRecord) -> Result<ParamVector13> {
        self.forward(&record_features(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Image width in pixels for the hFOV metric.
    pub width: f64,
    /// Report the signed bias instead of the absolute error.
    pub signed: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            width: 112.0,
            signed: false,
        }
    }
}

/// NMAE per camera parameter and hFOV accuracy (from `fx`) over `records`.
pub fn evaluate(
    predictor: &dyn Predictor,
    records: &[SyntheticRecord],
    opts: &EvalOptions,
) -> Result<EvalTable> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let preds = records
        .iter()
        .map(|r| predictor.predict(r))
        .collect::<Result<Vec<_>>>()?;
    let column = |src: &mut dyn Iterator<Item = &ParamVector13>, c: Component| {
        src.map(|p| p[c]).collect::<Vec<f64>>()
    };
    let mut table = [0.0; 10];
    for (slot, c) in table.iter_mut().zip(TABLE_ORDER) {
        let y = column(&mut records.iter().map(|r| &r.params), c);
        let p = column(&mut preds.iter(), c);
        *slot = if opts.signed {
            nmae_signed(&y, &p)?
        } else {
            nmae(&y, &p)?
        };
    }
    let gt_f = column(&mut records.iter().map(|r| &r.params), Component::Fx);
    let pred_f = column(&mut preds.iter(), Component::Fx);
    let acc = hfov_accuracy(&gt_f, &pred_f, opts.width, &HFOV_THRESHOLDS)?;
    let mut hfov = [0.0; 6];
    hfov.copy_from_slice(&acc);
    Ok(EvalTable {
        nmae: table,
        hfov_accuracy: hfov,
        sample_count: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_records, ParamRanges};

    #[test]
    fn truth_is_perfect() {
        let recs = generate_records(&ParamRanges::cvgl(), 6, 8, 0.0, 1).unwrap();
        let t = evaluate(&TruthPredictor, &recs, &EvalOptions::default()).unwrap();
        assert_eq!(t.nmae, [0.0; 10]);
        assert_eq!(t.hfov_accuracy, [1.0; 6]);
        assert_eq!(t.sample_count, 6);
    }

    #[test]
    fn mean_predictor_has_zero_signed_bias() {
        let recs = generate_records(&ParamRanges::cvgl(), 20, 4, 0.0, 2).unwrap();
        let m = MeanPredictor::fit(&recs).unwrap();
        let opts = EvalOptions {
            signed: true,
            ..EvalOptions::default()
        };
        let t = evaluate(&m, &recs, &opts).unwrap();
        for (c, v) in TABLE_ORDER.iter().zip(t.nmae) {
            assert!(v.abs() < 1e-12, "{c}: {v}");
        }
    }

    #[test]
    fn mean_of_mean_oracle() {
        let recs = generate_records(&ParamRanges::cvgl(), 5, 4, 0.0, 3).unwrap();
        let m = MeanPredictor::fit(&recs).unwrap();
        let fx: Vec<f64> = recs.iter().map(|r| r.params.0[0]).collect();
        assert!((m.mean.0[0] - fx.iter().sum::<f64>() / 5.0).abs() < 1e-12);
        assert!(MeanPredictor::fit(&[]).is_err());
    }
}
