//! Hard-parameter-sharing regressor: one or two fully connected `tanh`
//! trunks feeding thirteen scalar affine heads, one per 13-vector
//! component.
//!
//! Inputs are the flattened `(u, v, disparity)` observations. The single
//! trunk topology consumes them directly; the two-trunk topology builds a
//! left view `(u, v)` and a right view `(u − disparity, v)`, runs one trunk
//! on each and concatenates their last hidden layers.
//!
//! Each head emits `offset + scale · (w·h + b)`. The fixed offset/scale
//! pair puts every component on a comparable footing; with zero head
//! weights the output starts at the offset (the mid-range).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SolverConfig;
use crate::cpl::{
    baseline_loss, decomposed_gradient, AdaptiveWeights, CorrespondenceSet, LossMode, LossReport,
    ParamVector13, N_COMPONENTS,
};
use crate::datagen::{ParamRanges, SyntheticRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// One trunk on the concatenated input ("SN").
    Single,
    /// One trunk per view, features fused by concatenation ("MN").
    Multi,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Single => "sn",
            Topology::Multi => "mn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sn" | "single" => Ok(Topology::Single),
            "mn" | "multi" => Ok(Topology::Multi),
            other => Err(Error::InvalidConfig(format!(
                "unknown topology `{other}` (sn or mn)"
            ))),
        }
    }
}

/// Fully connected layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fixed per-head output affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadScaling {
    pub offset: [f64; N_COMPONENTS],
    pub scale: [f64; N_COMPONENTS],
    /// Components with no spread in the data the scaling was built from.
    /// Their loss terms are left out of adaptive balancing.
    pub constant: [bool; N_COMPONENTS],
}

impl HeadScaling {
    pub fn identity() -> Self {
        Self {
            offset: [0.0; N_COMPONENTS],
            scale: [1.0; N_COMPONENTS],
            constant: [false; N_COMPONENTS],
        }
    }

    pub fn varying(&self) -> [bool; N_COMPONENTS] {
        self.constant.map(|c| !c)
    }

    /// Mid-range offset and half-range scale of the targets. Components
    /// whose targets never vary get scale 1.
    pub fn from_targets(targets: &[ParamVector13]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Empty("head scaling targets"));
        }
        let mut s = Self::identity();
        for k in 0..N_COMPONENTS {
            let lo = targets.iter().map(|t| t.0[k]).fold(f64::INFINITY, f64::min);
            let hi = targets
                .iter()
                .map(|t| t.0[k])
                .fold(f64::NEG_INFINITY, f64::max);
            s.offset[k] = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            if half > 0.0 {
                s.scale[k] = half;
            } else {
                s.constant[k] = true;
            }
        }
        Ok(s)
    }

    /// Camera components from the preset ranges; the world heads from
    /// `targets`.
    pub fn from_ranges(ranges: &ParamRanges, targets: &[ParamVector13]) -> Result<Self> {
        let mut s = Self::from_targets(targets)?;
        let mid = ranges.mid();
        for c in crate::cpl::Component::CAMERA {
            let [lo, hi] = ranges.bound(c);
            let mut half = 0.5 * (hi - lo);
            if c == crate::cpl::Component::ThetaP {
                half = half.to_radians();
            }
            s.offset[c.index()] = mid[c.index()];
            s.scale[c.index()] = if half > 0.0 { half } else { 1.0 };
            s.constant[c.index()] = half <= 0.0;
        }
        Ok(s)
    }
}

/// Per-trunk input standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub layers: Vec<Dense>,
    pub norm: InputNorm,
}

impl Trunk {
    fn output_width(&self) -> usize {
        self.layers
            .last()
            .map_or(self.norm.mean.len(), |l| l.outputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlNet {
    pub topology: Topology,
    pub feature_width: usize,
    pub trunks: Vec<Trunk>,
    /// Thirteen heads stored as the rows of one `13 × hidden` layer.
    pub heads: Dense,
    pub scaling: HeadScaling,
}

/// Builds the default feature vector: `(u, v, disparity)` per observation.
pub fn features_from_observations(obs: &CorrespondenceSet, scalar_d: f64) -> Vec<f64> {
    obs.observations()
        .iter()
        .flat_map(|o| [o.u, o.v, o.disparity.unwrap_or(scalar_d)])
        .collect()
}

/// Activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per trunk: normalised input followed by every layer's activation.
    trunk_acts: Vec<Vec<Vec<f64>>>,
    hidden: Vec<f64>,
    pub output: ParamVector13,
}

impl MtlNet {
    /// Fresh network. Trunk weights are Glorot-uniform, biases zero; head
    /// weights and biases are zero.
    pub fn new(
        topology: Topology,
        feature_width: usize,
        hidden: &[usize],
        scaling: HeadScaling,
        seed: u64,
    ) -> Result<Self> {
        if feature_width == 0 || !feature_width.is_multiple_of(3) {
            return Err(Error::InvalidConfig(format!(
                "feature width {feature_width} is not a positive multiple of 3"
            )));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden layer widths must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_views = match topology {
            Topology::Single => 1,
            Topology::Multi => 2,
        };
        let input_width = match topology {
            Topology::Single => feature_width,
            Topology::Multi => 2 * feature_width / 3,
        };
        let trunks: Vec<Trunk> = (0..n_views)
            .map(|_| {
                let mut width = input_width;
                let layers = hidden
                    .iter()
                    .map(|&h| {
                        let l = Dense::glorot(width, h, &mut rng);
                        width = h;
                        l
                    })
                    .collect();
                Trunk {
                    layers,
                    norm: InputNorm::identity(input_width),
                }
            })
            .collect();
        let hidden_total = trunks.iter().map(Trunk::output_width).sum();
        Ok(Self {
            topology,
            feature_width,
            trunks,
            heads: Dense::zeros(hidden_total, N_COMPONENTS),
            scaling,
        })
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.trunks[0].layers.iter().map(|l| l.outputs).collect()
    }

    fn views(&self, features: &[f64]) -> Vec<Vec<f64>> {
        match self.topology {
            Topology::Single => vec![features.to_vec()],
            Topology::Multi => {
                let left = features
                    .chunks_exact(3)
                    .flat_map(|t| [t[0], t[1]])
                    .collect();
                let right = features
                    .chunks_exact(3)
                    .flat_map(|t| [t[0] - t[2], t[1]])
                    .collect();
                vec![left, right]
            }
        }
    }

    /// Standardises each trunk input with statistics of `samples`.
    pub fn fit_input_normalization(&mut self, samples: &[Vec<f64>]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Empty("normalisation samples"));
        }
        let views: Vec<Vec<Vec<f64>>> = samples
            .iter()
            .map(|f| {
                self.check_width(f)?;
                Ok(self.views(f))
            })
            .collect::<Result<_>>()?;
        let n = samples.len() as f64;
        for (t, trunk) in self.trunks.iter_mut().enumerate() {
            let width = trunk.norm.mean.len();
            for j in 0..width {
                let mean = views.iter().map(|v| v[t][j]).sum::<f64>() / n;
                let var = views.iter().map(|v| (v[t][j] - mean).powi(2)).sum::<f64>() / n;
                trunk.norm.mean[j] = mean;
                trunk.norm.scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(())
    }

    fn check_width(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_width {
            return Err(Error::ShapeMismatch {
                expected: self.feature_width,
                got: features.len(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, features: &[f64]) -> Result<ForwardCache> {
        self.check_width(features)?;
        let mut trunk_acts = Vec::with_capacity(self.trunks.len());
        let mut hidden = Vec::new();
        for (trunk, view) in self.trunks.iter().zip(self.views(features)) {
            let mut acts = vec![trunk.norm.apply(&view)];
            for layer in &trunk.layers {
                let z = layer.affine(acts.last().expect("input present"));
                acts.push(z.into_iter().map(f64::tanh).collect());
            }
            hidden.extend_from_slice(acts.last().expect("input present"));
            trunk_acts.push(acts);
        }
        let raw = self.heads.affine(&hidden);
        let mut out = [0.0; N_COMPONENTS];
        for k in 0..N_COMPONENTS {
            out[k] = self.scaling.offset[k] + self.scaling.scale[k] * raw[k];
        }
        Ok(ForwardCache {
            trunk_acts,
            hidden,
            output: ParamVector13(out),
        })
    }

    pub fn forward(&self, features: &[f64]) -> Result<ParamVector13> {
        self.forward_cached(features).map(|c| c.output)
    }

    pub fn param_count(&self) -> usize {
        self.trunks
            .iter()
            .flat_map(|t| &t.layers)
            .map(Dense::param_count)
            .sum::<usize>()
            + self.heads.param_count()
    }

    /// All trainable values: each trunk layer's weights then bias, then
    /// the head weights and biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self
            .trunks
            .iter()
            .flat_map(|t| &t.layers)
            .chain(std::iter::once(&self.heads))
        {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: values.len(),
            });
        }
        let mut pos = 0;
        let heads = std::iter::once(&mut self.heads);
        for l in self
            .trunks
            .iter_mut()
            .flat_map(|t| t.layers.iter_mut())
            .chain(heads)
        {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    /// Gradient of a scalar loss with respect to [`Self::flatten`], given
    /// its gradient with respect to the 13 outputs.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64; N_COMPONENTS]) -> Vec<f64> {
        let d_raw: Vec<f64> = (0..N_COMPONENTS)
            .map(|k| d_out[k] * self.scaling.scale[k])
            .collect();
        let hidden_total = self.heads.inputs;
        let mut d_hidden = vec![0.0; hidden_total];
        let mut head_w = vec![0.0; self.heads.weights.len()];
        for k in 0..N_COMPONENTS {
            let row = k * hidden_total;
            for j in 0..hidden_total {
                head_w[row + j] = d_raw[k] * cache.hidden[j];
                d_hidden[j] += d_raw[k] * self.heads.weights[row + j];
            }
        }

        let mut trunk_grads: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(self.trunks.len());
        let mut offset = 0;
        for (trunk, acts) in self.trunks.iter().zip(&cache.trunk_acts) {
            let width = trunk.output_width();
            let mut delta: Vec<f64> = d_hidden[offset..offset + width].to_vec();
            offset += width;
            let mut grads = vec![(Vec::new(), Vec::new()); trunk.layers.len()];
            for (li, layer) in trunk.layers.iter().enumerate().rev() {
                let a_out = &acts[li + 1];
                let a_in = &acts[li];
                let dz: Vec<f64> = delta
                    .iter()
                    .zip(a_out)
                    .map(|(d, a)| d * (1.0 - a * a))
                    .collect();
                let mut gw = vec![0.0; layer.weights.len()];
                let mut d_in = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let row = o * layer.inputs;
                    for i in 0..layer.inputs {
                        gw[row + i] = dz[o] * a_in[i];
                        d_in[i] += dz[o] * layer.weights[row + i];
                    }
                }
                grads[li] = (gw, dz);
                delta = d_in;
            }
            trunk_grads.push(grads);
        }

        let mut out = Vec::with_capacity(self.param_count());
        for (gw, gb) in trunk_grads.into_iter().flatten() {
            out.extend(gw);
            out.extend(gb);
        }
        out.extend(head_w);
        out.extend(d_raw);
        out
    }
}

/// Features of a stored record. Records always carry per-point disparity,
/// so no parameter of the record leaks into its features.
pub fn record_features(r: &SyntheticRecord) -> Vec<f64> {
    features_from_observations(&r.observations, 0.0)
}

pub fn mtl_forward(net: &MtlNet, features: &[f64]) -> Result<ParamVector13> {
    net.forward(features)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    pub target: ParamVector13,
    /// Pixels projected with the scalar disparity of the 13-vector.
    pub observations: CorrespondenceSet,
}

impl TrainingSample {
    pub fn from_record(r: &SyntheticRecord) -> Self {
        Self {
            features: record_features(r),
            target: r.params,
            observations: r.observations.without_disparity_overrides(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub mode: LossMode,
    pub adaptive_decay: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            mode: LossMode::BaselineMae,
            adaptive_decay: AdaptiveWeights::DEFAULT_DECAY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MtlNet,
    /// Loss of the untrained network.
    pub initial: LossReport,
    /// Full-data loss after each epoch; in adaptive mode `weights` holds α
    /// at the end of the epoch.
    pub history: Vec<LossReport>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Per-sample loss terms and `∂(total)/∂output` for the given mode.
fn sample_terms(
    mode: LossMode,
    pred: &ParamVector13,
    sample: &TrainingSample,
) -> Result<([f64; N_COMPONENTS], [f64; N_COMPONENTS])> {
    match mode {
        LossMode::BaselineMae => {
            let terms = baseline_loss(&sample.target, pred).per_param;
            let mut g = [0.0; N_COMPONENTS];
            for k in 0..N_COMPONENTS {
                let diff = pred.0[k] - sample.target.0[k];
                g[k] = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            Ok((terms, g))
        }
        LossMode::CplUniform | LossMode::CplAdaptive => {
            decomposed_gradient(&sample.target, pred, &sample.observations)
        }
    }
}

/// Batch loss and its gradient with respect to the flattened weights.
///
/// Returns the mean per-term losses over the batch, the scalar objective
/// (`mean of terms` or `Σ α·terms`) and the gradient of that objective.
pub fn batch_objective(
    net: &MtlNet,
    batch: &[&TrainingSample],
    mode: LossMode,
    alpha: &[f64; N_COMPONENTS],
) -> Result<([f64; N_COMPONENTS], f64, Vec<f64>)> {
    batch_pass(net, batch, mode, |_| *alpha)
}

/// Forward over the batch, pick the term weights from the batch losses,
/// then backpropagate. `choose` is only consulted in adaptive mode.
fn batch_pass(
    net: &MtlNet,
    batch: &[&TrainingSample],
    mode: LossMode,
    choose: impl FnOnce(&[f64; N_COMPONENTS]) -> [f64; N_COMPONENTS],
) -> Result<([f64; N_COMPONENTS], f64, Vec<f64>)> {
    let n = batch.len() as f64;
    let mut terms = [0.0; N_COMPONENTS];
    let mut passes = Vec::with_capacity(batch.len());
    for sample in batch {
        let cache = net.forward_cached(&sample.features)?;
        let (t, g) = sample_terms(mode, &cache.output, sample)?;
        for k in 0..N_COMPONENTS {
            terms[k] += t[k] / n;
        }
        passes.push((cache, g));
    }
    let weights = match mode {
        LossMode::CplAdaptive => choose(&terms),
        _ => [1.0 / N_COMPONENTS as f64; N_COMPONENTS],
    };
    let mut grad = vec![0.0; net.param_count()];
    for (cache, g) in &passes {
        let d_out: [f64; N_COMPONENTS] = std::array::from_fn(|k| weights[k] * g[k] / n);
        for (acc, g) in grad.iter_mut().zip(net.backward(cache, &d_out)) {
            *acc += g;
        }
    }
    let total = (0..N_COMPONENTS).map(|k| weights[k] * terms[k]).sum();
    Ok((terms, total, grad))
}

/// Mean per-term loss of `net` over `data` (forward passes only).
pub fn dataset_terms(
    net: &MtlNet,
    data: &[TrainingSample],
    mode: LossMode,
) -> Result<[f64; N_COMPONENTS]> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let n = data.len() as f64;
    let mut terms = [0.0; N_COMPONENTS];
    for sample in data {
        let pred = net.forward(&sample.features)?;
        let (t, _) = sample_terms(mode, &pred, sample)?;
        for k in 0..N_COMPONENTS {
            terms[k] += t[k] / n;
        }
    }
    Ok(terms)
}

fn report_for(mode: LossMode, terms: [f64; N_COMPONENTS], weights: &AdaptiveWeights) -> LossReport {
    match mode {
        LossMode::CplAdaptive => LossReport::weighted(terms, *weights.alpha()),
        mode => LossReport::uniform(terms, mode),
    }
}

/// Minibatch Adam training with early stopping on the training loss.
///
/// After every epoch the loss is re-evaluated over all of `data` with the
/// updated weights. The monitored quantity is the unweighted mean of the
/// thirteen terms, so that epochs stay comparable while adaptive weights
/// move. A plateau of `early_stopping_patience` epochs returns to the best
/// weights and multiplies the learning rate by `lr_decay`, as in
/// [`fit_parameters`](super::fit_parameters); training stops once the rate
/// would drop below `min_learning_rate`. The best weights seen are
/// restored at the end.
pub fn mtl_train(
    net: MtlNet,
    data: &[TrainingSample],
    cfg: &SolverConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    for s in data {
        net.check_width(&s.features)?;
    }
    let mut net = net;
    let mut weights = AdaptiveWeights::with_active(opts.adaptive_decay, net.scaling.varying())?;
    let mut params = net.flatten();
    let mut adam = cfg.adam(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let initial = report_for(opts.mode, dataset_terms(&net, data, opts.mode)?, &weights);
    let mut history = Vec::new();
    let mut best = initial.per_param.iter().sum::<f64>() / N_COMPONENTS as f64;
    let mut best_params = params.clone();
    let mut stall = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &data[i]).collect();
            // α is refreshed from this batch before the gradient is taken, so
            // the very first step is already balanced.
            let (_, _, grad) = batch_pass(&net, &batch, opts.mode, |t| weights.update(t))?;
            adam.step(&mut params, &grad);
            net.load_flat(&params)?;
        }
        let terms = dataset_terms(&net, data, opts.mode)?;
        let monitor = terms.iter().sum::<f64>() / N_COMPONENTS as f64;
        if !monitor.is_finite() {
            return Err(Error::DivergenceDetected(epoch));
        }
        history.push(report_for(opts.mode, terms, &weights));
        if monitor < best {
            best = monitor;
            best_params.copy_from_slice(&params);
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.early_stopping_patience {
                let next_lr = adam.learning_rate * cfg.lr_decay;
                if cfg.lr_decay < 1.0 && next_lr >= cfg.min_learning_rate {
                    adam.learning_rate = next_lr;
                    adam.reset();
                    params.copy_from_slice(&best_params);
                    net.load_flat(&params)?;
                    stall = 0;
                } else {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    net.load_flat(&best_params)?;
    Ok(TrainOutcome {
        net,
        initial,
        epochs_run: history.len(),
        history,
        stopped_early,
    })
}
