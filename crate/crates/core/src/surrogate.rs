//! The assistive regressor: a small fully connected network trained on
//! verified rows, its error history, the three-phase automation state and
//! gradient-ascent refinement of candidate configurations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{in_unit_box, Constraint, Dataset};

/// Minimum number of verified rows before a model is trained.
pub const MIN_TRAINING_ROWS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through `z` and `a = apply(z)`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub train_fraction: f64,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            activation: Activation::Tanh,
            train_fraction: 0.8,
            max_epochs: 200,
            learning_rate: 3e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("layer widths must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParameter("train_fraction must be in (0, 1)".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("batch_size and learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A scalar function with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// `W^T delta`.
    fn back(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (o, &d) in delta.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (acc, w) in out.iter_mut().zip(row) {
                *acc += w * d;
            }
        }
        out
    }
}

/// Fully connected network with a single linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

struct Tape {
    /// Pre-activations of each hidden layer.
    zs: Vec<Vec<f64>>,
    /// Layer inputs: `acts[0]` is x, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    output: f64,
}

impl Mlp {
    /// Xavier-uniform initialization.
    pub fn random(input_dim: usize, hidden: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                for x in &mut layer.weights {
                    *x = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Self { layers, activation }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self {
            layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn forward_tape(&self, x: &[f64]) -> Tape {
        let mut acts = vec![x.to_vec()];
        let mut zs = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&acts[l]);
            if l == last {
                return Tape {
                    zs,
                    acts,
                    output: z[0],
                };
            }
            acts.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            zs.push(z);
        }
        unreachable!("network has at least one layer")
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_tape(x).output
    }

    /// Backpropagates `seed = dLoss/doutput` and returns the delta entering
    /// each layer together with the gradient with respect to the input.
    fn backward(&self, tape: &Tape, seed: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.layers.len();
        let mut deltas = vec![Vec::new(); n];
        deltas[n - 1] = vec![seed];
        for l in (0..n - 1).rev() {
            let upstream = self.layers[l + 1].back(&deltas[l + 1]);
            deltas[l] = upstream
                .iter()
                .zip(tape.zs[l].iter().zip(&tape.acts[l + 1]))
                .map(|(g, (&z, &a))| g * self.activation.derivative(z, a))
                .collect();
        }
        let input_grad = self.layers[0].back(&deltas[0]);
        (deltas, input_grad)
    }

    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let tape = self.forward_tape(x);
        self.backward(&tape, 1.0).1
    }

    fn accumulate_param_grads(&self, x: &[f64], target: f64, grads: &mut [Layer]) -> f64 {
        let tape = self.forward_tape(x);
        let err = tape.output - target;
        let (deltas, _) = self.backward(&tape, err);
        for (l, g) in grads.iter_mut().enumerate() {
            let input = &tape.acts[l];
            for (o, &d) in deltas[l].iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * g.inputs..(o + 1) * g.inputs];
                for (w, v) in row.iter_mut().zip(input) {
                    *w += d * v;
                }
            }
        }
        0.5 * err * err
    }
}

impl Differentiable for Mlp {
    fn value(&self, x: &[f64]) -> f64 {
        self.forward(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.input_gradient(x)
    }
}

/// Trained network plus target de-standardization. Predicts raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub target: String,
    pub net: Mlp,
    pub target_mean: f64,
    pub target_std: f64,
    /// Held-out average percentage error at training time.
    pub ape: f64,
    pub dataset_version: u64,
}

impl Surrogate {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.net.forward(x) * self.target_std + self.target_mean
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Differentiable for Surrogate {
    fn value(&self, x: &[f64]) -> f64 {
        self.predict(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.net.input_gradient(x);
        g.iter_mut().for_each(|v| *v *= self.target_std);
        g
    }
}

/// Stable pseudo-random fraction in `[0, 1)` for a row id (splitmix64).
pub fn split_fraction(row_id: u64) -> f64 {
    let mut z = row_id.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Mean absolute percentage error, with the denominator guarded by `floor`.
pub fn average_percentage_error(pairs: impl IntoIterator<Item = (f64, f64)>, floor: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pred, truth) in pairs {
        sum += (pred - truth).abs() / truth.abs().max(floor);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        100.0 * sum / n as f64
    }
}

/// Trains a surrogate for one target on the dataset's verified rows.
///
/// Rows are split into training and held-out sets by a hash of their row id,
/// so the split is stable across retrains. Returns the model and its held-out
/// average percentage error.
pub fn train(ds: &Dataset, target: usize, cfg: &SurrogateConfig) -> Result<(Surrogate, f64)> {
    cfg.validate()?;
    let spec = ds
        .targets()
        .nth(target)
        .ok_or_else(|| Error::UnknownVariable(format!("target #{target}")))?
        .clone();
    let rows = ds.target_column(target);
    if rows.len() < MIN_TRAINING_ROWS {
        return Err(Error::TooFewRows {
            needed: MIN_TRAINING_ROWS,
            available: rows.len(),
        });
    }
    let (mut train_rows, mut held_out): (Vec<_>, Vec<_>) = rows
        .iter()
        .partition(|(id, _)| split_fraction(*id as u64) < cfg.train_fraction);
    if held_out.is_empty() || train_rows.is_empty() {
        train_rows = rows.clone();
        held_out = rows.clone();
    }

    let n = train_rows.len() as f64;
    let mean = train_rows.iter().map(|r| r.1).sum::<f64>() / n;
    let var = train_rows.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };

    let xs: Vec<&[f64]> = train_rows.iter().map(|(id, _)| ds.rows()[*id].values.as_slice()).collect();
    let ys: Vec<f64> = train_rows.iter().map(|r| (r.1 - mean) / std).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp::random(ds.input_dim(), &cfg.hidden_layers, cfg.activation, &mut rng);
    fit(&mut net, &xs, &ys, cfg, &mut rng);

    let surrogate = Surrogate {
        target: spec.name.clone(),
        net,
        target_mean: mean,
        target_std: std,
        ape: 0.0,
        dataset_version: ds.version(),
    };
    let floor = 1e-8 * spec.range();
    let ape = average_percentage_error(
        held_out
            .iter()
            .map(|(id, y)| (surrogate.predict(&ds.rows()[*id].values), *y)),
        floor,
    );
    Ok((Surrogate { ape, ..surrogate }, ape))
}

/// Minibatch Adam on squared error.
fn fit(net: &mut Mlp, xs: &[&[f64]], ys: &[f64], cfg: &SurrogateConfig, rng: &mut ChaCha8Rng) {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let shapes: Vec<(usize, usize)> = net.layers.iter().map(|l| (l.inputs, l.outputs)).collect();
    let zeros = || -> Vec<Layer> { shapes.iter().map(|&(i, o)| Layer::zeros(i, o)).collect() };
    let mut m1 = zeros();
    let mut m2 = zeros();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut t = 0i32;
    for _ in 0..cfg.max_epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zeros();
            for &i in batch {
                net.accumulate_param_grads(xs[i], ys[i], &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            t += 1;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            for ((layer, g), (a, b)) in net
                .layers
                .iter_mut()
                .zip(&grads)
                .zip(m1.iter_mut().zip(m2.iter_mut()))
            {
                let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
                let gs = g.weights.iter().chain(&g.biases);
                let firsts = a.weights.iter_mut().chain(a.biases.iter_mut());
                let seconds = b.weights.iter_mut().chain(b.biases.iter_mut());
                for (((p, &gr), m), v) in params.zip(gs).zip(firsts).zip(seconds) {
                    let gr = gr * scale;
                    *m = BETA1 * *m + (1.0 - BETA1) * gr;
                    *v = BETA2 * *v + (1.0 - BETA2) * gr * gr;
                    *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Initial,
    Developed,
    Expert,
}

/// Phase as a pure function of the latest error and the two thresholds (percent).
pub fn phase_for(ape: f64, t1: f64, t2: f64) -> Phase {
    if ape <= t2 {
        Phase::Expert
    } else if ape <= t1 {
        Phase::Developed
    } else {
        Phase::Initial
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub dataset_version: u64,
    pub ape: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub from: Phase,
    pub to: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    pub t1: f64,
    pub t2: f64,
    pub error_history: Vec<ErrorRecord>,
}

impl PhaseState {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t2 < t1) {
            return Err(Error::InvalidParameter(format!(
                "t2 ({t2}) must be below t1 ({t1})"
            )));
        }
        Ok(Self {
            phase: Phase::Initial,
            t1,
            t2,
            error_history: Vec::new(),
        })
    }

    pub fn latest_ape(&self) -> Option<f64> {
        self.error_history.last().map(|r| r.ape)
    }
}

impl Default for PhaseState {
    fn default() -> Self {
        Self::new(20.0, 10.0).expect("default thresholds are ordered")
    }
}

/// Records a new error measurement and recomputes the phase.
pub fn advance_phase(ps: &PhaseState, dataset_version: u64, ape: f64) -> (PhaseState, Option<PhaseTransition>) {
    let mut next = ps.clone();
    next.error_history.push(ErrorRecord { dataset_version, ape });
    next.phase = phase_for(ape, ps.t1, ps.t2);
    let transition = (next.phase != ps.phase).then_some(PhaseTransition {
        from: ps.phase,
        to: next.phase,
    });
    (next, transition)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub point: Vec<f64>,
    pub start_value: f64,
    pub value: f64,
    /// Predicted value after every accepted step, starting with the start value.
    pub trace: Vec<f64>,
}

const MIN_IMPROVEMENT: f64 = 1e-6;
const MAX_HALVINGS: usize = 20;

/// Projected gradient ascent inside the unit box and `constraints`.
///
/// A step that lowers the prediction is retried with a halved step size; a
/// step that would leave the feasible region ends the ascent. The returned
/// value is never below the starting value.
pub fn refine<M: Differentiable + ?Sized>(
    model: &M,
    p: &[f64],
    steps: usize,
    eta: f64,
    constraints: &[Constraint],
) -> Refinement {
    let mut x = p.to_vec();
    let start_value = model.value(&x);
    let mut value = start_value;
    let mut trace = vec![value];
    'outer: for _ in 0..steps {
        let g = model.gradient(&x);
        let mut step = eta;
        for _ in 0..MAX_HALVINGS {
            let candidate: Vec<f64> = x
                .iter()
                .zip(&g)
                .map(|(xi, gi)| (xi + step * gi).clamp(0.0, 1.0))
                .collect();
            debug_assert!(in_unit_box(&candidate));
            if !constraints.iter().all(|c| c.is_satisfied(&candidate)) {
                break 'outer;
            }
            let v = model.value(&candidate);
            if v >= value {
                let gain = v - value;
                x = candidate;
                value = v;
                trace.push(v);
                if gain < MIN_IMPROVEMENT {
                    break 'outer;
                }
                continue 'outer;
            }
            step *= 0.5;
        }
        break;
    }
    Refinement {
        point: x,
        start_value,
        value,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_thresholds() {
        assert_eq!(phase_for(25.0, 20.0, 10.0), Phase::Initial);
        assert_eq!(phase_for(15.0, 20.0, 10.0), Phase::Developed);
        assert_eq!(phase_for(8.0, 20.0, 10.0), Phase::Expert);
        assert_eq!(phase_for(20.0, 20.0, 10.0), Phase::Developed);
        assert_eq!(phase_for(10.0, 20.0, 10.0), Phase::Expert);
    }

    #[test]
    fn thresholds_must_be_ordered() {
        assert!(PhaseState::new(10.0, 20.0).is_err());
        assert!(PhaseState::new(10.0, 10.0).is_err());
    }

    #[test]
    fn transitions_are_reported() {
        let ps = PhaseState::default();
        let (ps, t) = advance_phase(&ps, 1, 25.0);
        assert!(t.is_none());
        let (ps, t) = advance_phase(&ps, 2, 15.0);
        assert_eq!(
            t,
            Some(PhaseTransition {
                from: Phase::Initial,
                to: Phase::Developed
            })
        );
        assert_eq!(ps.error_history.len(), 2);
    }

    #[test]
    fn zero_network_has_zero_gradient() {
        let net = Mlp::zeros(4, &[8, 8], Activation::Tanh);
        assert!(net.input_gradient(&[0.1, 0.2, 0.3, 0.4]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identity_network_gradient_is_product_of_weights() {
        let mut net = Mlp::zeros(2, &[1], Activation::Identity);
        net.layers[0].weights = vec![2.0, -3.0];
        net.layers[1].weights = vec![0.5];
        let g = net.input_gradient(&[0.3, 0.9]);
        assert_eq!(g, vec![1.0, -1.5]);
    }

    #[test]
    fn ape_floor_guards_zero_targets() {
        let ape = average_percentage_error([(0.1, 0.0)], 1.0);
        assert!((ape - 10.0).abs() < 1e-12);
    }

    #[test]
    fn split_is_stable_and_roughly_balanced() {
        let train = (0..10_000u64).filter(|&i| split_fraction(i) < 0.8).count();
        assert!((7_700..8_300).contains(&train));
        assert_eq!(split_fraction(42), split_fraction(42));
    }

    struct Linear(Vec<f64>);

    impl Differentiable for Linear {
        fn value(&self, x: &[f64]) -> f64 {
            self.0.iter().zip(x).map(|(a, b)| a * b).sum()
        }
        fn gradient(&self, _x: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn refine_linear_reaches_corner() {
        let r = refine(&Linear(vec![1.0, 2.0, 0.5]), &[0.2, 0.4, 0.6], 200, 0.05, &[]);
        assert!(r.point.iter().all(|&x| x == 1.0));
        assert!(r.value >= r.start_value);
    }

    #[test]
    fn refine_stops_at_constraint() {
        let c = Constraint::IntervalBrush {
            variable: 0,
            lo: 0.0,
            hi: 0.5,
        };
        let r = refine(&Linear(vec![1.0]), &[0.3], 100, 0.05, &[c.clone()]);
        assert!(c.is_satisfied(&r.point));
        assert!(r.value >= r.start_value);
    }
}
