//! Restricted Boltzmann machine with ideal and hardware-backed parameters.
//!
//! In ideal mode weights and biases are free reals and units fire with the
//! exact logistic of their pre-activation. In hardware mode every weight and
//! bias lives in a domain-wall cell: the real value seen by the network is the
//! decoded cell state, updates arrive as whole-step write pulses, and units
//! fire with the p-bit transfer curve driven by the column current.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::crossbar::{current_range, state_to_weight, weight_to_state, CrossbarConfig, SignedWeightMap};
use crate::dwm::{apply_pulse, quantize_weight_update, DEFAULT_STATES};
use crate::error::{check_dim, Error, Result};
use crate::pbit::{output_probability, DeviceCurve};

/// Largest `n_visible + n_hidden` accepted by [`RbmModel::exact_distribution`].
pub const MAX_EXACT_UNITS: usize = 20;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// p-bit neuron fed by a crossbar column.
///
/// A pre-activation `x` is injected as the current `-x * amps_per_unit`,
/// clipped to what the column can deliver, and the unit state is the p-bit
/// output, so `P(s = 1) = 1 - p0(I)`. The column holds one cell per input of
/// the neuron unless `rows` fixes a smaller array.
#[derive(Debug, Clone, PartialEq)]
pub struct PBitActivation {
    pub curve: DeviceCurve,
    pub amps_per_unit: f64,
    /// Largest current one cell adds to the column (A).
    pub cell_pos_max: f64,
    /// Most negative current one cell adds (A, <= 0).
    pub cell_neg_max: f64,
    /// `None`: column height equals the neuron's fan-in.
    pub rows: Option<usize>,
}

impl PBitActivation {
    /// Scale chosen so the curve's slope at zero current equals the logistic
    /// slope of 1/4 per unit pre-activation.
    pub fn new(curve: DeviceCurve, cfg: &CrossbarConfig, rows: Option<usize>) -> Self {
        let cell = current_range(1, cfg.r_p, cfg, &curve);
        let amps_per_unit = 1.0 / (4.0 * curve.zero_current_slope());
        PBitActivation { curve, amps_per_unit, cell_pos_max: cell.max_positive, cell_neg_max: cell.max_negative, rows }
    }

    fn column(&self, fan_in: usize) -> f64 {
        self.rows.unwrap_or(fan_in).max(1) as f64
    }

    pub fn injected_current(&self, x: f64, fan_in: usize) -> f64 {
        let n = self.column(fan_in);
        (-x * self.amps_per_unit).clamp(n * self.cell_neg_max, n * self.cell_pos_max)
    }

    pub fn probability_of_one(&self, x: f64, fan_in: usize) -> f64 {
        1.0 - output_probability(self.injected_current(x, fan_in), &self.curve)
    }

    /// `[min, max]` of `P(s = 1)` for a neuron with `fan_in` inputs.
    pub fn envelope(&self, fan_in: usize) -> (f64, f64) {
        let n = self.column(fan_in);
        (
            1.0 - output_probability(n * self.cell_pos_max, &self.curve),
            1.0 - output_probability(n * self.cell_neg_max, &self.curve),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Logistic,
    PBit(PBitActivation),
}

impl Activation {
    pub fn probability_of_one(&self, x: f64, fan_in: usize) -> f64 {
        match self {
            Activation::Logistic => sigmoid(x),
            Activation::PBit(p) => p.probability_of_one(x, fan_in),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareConfig {
    pub map: SignedWeightMap,
    /// Cap on the pulse length of a single update.
    pub max_pulse_steps: u32,
    pub activation: Activation,
}

impl HardwareConfig {
    /// Calibrated p-bits on a calibrated crossbar, with `n_states` states
    /// spanning `[-w_max, w_max]`. `rows` fixes the column height; `None`
    /// sizes every column to its neuron's fan-in.
    pub fn calibrated(rows: Option<usize>, n_states: u16, w_max: f64) -> Result<Self> {
        Self::on_crossbar(&CrossbarConfig::calibrated(), rows, n_states, w_max)
    }

    /// Calibrated p-bits reading cells of the given crossbar.
    pub fn on_crossbar(cfg: &CrossbarConfig, rows: Option<usize>, n_states: u16, w_max: f64) -> Result<Self> {
        cfg.validate()?;
        let map = SignedWeightMap::new(w_max, n_states, cfg.g_p(), cfg.g_ap())?;
        let activation = Activation::PBit(PBitActivation::new(DeviceCurve::calibrated(), cfg, rows));
        Ok(HardwareConfig { map, max_pulse_steps: 8, activation })
    }

    /// Quantized cells read through an exact logistic instead of a p-bit.
    pub fn logistic(n_states: u16, w_max: f64) -> Result<Self> {
        let cfg = CrossbarConfig::calibrated();
        let map = SignedWeightMap::new(w_max, n_states, cfg.g_p(), cfg.g_ap())?;
        Ok(HardwareConfig { map, max_pulse_steps: 8, activation: Activation::Logistic })
    }
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig::calibrated(None, DEFAULT_STATES, 1.0).expect("default hardware config")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareState {
    pub config: HardwareConfig,
    pub weight_states: Array2<u16>,
    pub visible_bias_states: Array1<u16>,
    pub hidden_bias_states: Array1<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ideal,
    Hardware,
}

/// Contrastive-divergence settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdConfig {
    pub learning_rate: f64,
    /// Gibbs steps in the negative phase.
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Hardware mode only: pulse after every sample instead of after the batch.
    pub per_sample_pulses: bool,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig { learning_rate: 0.1, k: 1, batch_size: 100, epochs: 30, seed: 1, per_sample_pulses: false }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.k == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("learning_rate must be >= 0, k and batch_size >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdStats {
    /// Mean fraction of visible bits flipped by the reconstruction.
    pub reconstruction_error: f64,
    /// Hardware mode: number of cells that received a pulse.
    pub pulses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmModel {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
    hardware: Option<HardwareState>,
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

impl RbmModel {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmModel {
            weights: Array2::zeros((n_visible, n_hidden)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
            hardware: None,
        }
    }

    /// Ideal model with zero biases and weights uniform in `[-0.1, 0.1]`.
    pub fn ideal<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(n_visible, n_hidden);
        m.weights.mapv_inplace(|_| rng.random_range(-0.1..=0.1));
        m
    }

    pub fn from_parts(weights: Array2<f64>, visible_bias: Array1<f64>, hidden_bias: Array1<f64>) -> Result<Self> {
        check_dim(weights.nrows(), visible_bias.len())?;
        check_dim(weights.ncols(), hidden_bias.len())?;
        Ok(RbmModel { weights, visible_bias, hidden_bias, hardware: None })
    }

    /// Hardware model with every cell at the midpoint (zero weight).
    pub fn hardware(n_visible: usize, n_hidden: usize, config: HardwareConfig) -> Self {
        Self::zeros(n_visible, n_hidden).quantized(config)
    }

    /// Program this model's parameters into cells, rounding each to the
    /// nearest state.
    pub fn quantized(&self, config: HardwareConfig) -> Self {
        let map = config.map;
        let weight_states = self.weights.mapv(|w| weight_to_state(w, &map));
        let visible_bias_states = self.visible_bias.mapv(|w| weight_to_state(w, &map));
        let hidden_bias_states = self.hidden_bias.mapv(|w| weight_to_state(w, &map));
        let mut m = RbmModel {
            weights: weight_states.mapv(|s| state_to_weight(s, &map)),
            visible_bias: visible_bias_states.mapv(|s| state_to_weight(s, &map)),
            hidden_bias: hidden_bias_states.mapv(|s| state_to_weight(s, &map)),
            hardware: None,
        };
        m.hardware = Some(HardwareState { config, weight_states, visible_bias_states, hidden_bias_states });
        m
    }

    /// Rebuild a hardware model from stored cell states.
    pub fn from_states(
        config: HardwareConfig,
        weight_states: Array2<u16>,
        visible_bias_states: Array1<u16>,
        hidden_bias_states: Array1<u16>,
    ) -> Result<Self> {
        check_dim(weight_states.nrows(), visible_bias_states.len())?;
        check_dim(weight_states.ncols(), hidden_bias_states.len())?;
        let map = config.map;
        let top = map.n_states - 1;
        let all = weight_states.iter().chain(&visible_bias_states).chain(&hidden_bias_states);
        if let Some(s) = all.into_iter().find(|&&s| s > top) {
            return Err(Error::InvalidParameter(format!("cell state {s} exceeds {top}")));
        }
        Ok(RbmModel {
            weights: weight_states.mapv(|s| state_to_weight(s, &map)),
            visible_bias: visible_bias_states.mapv(|s| state_to_weight(s, &map)),
            hidden_bias: hidden_bias_states.mapv(|s| state_to_weight(s, &map)),
            hardware: Some(HardwareState { config, weight_states, visible_bias_states, hidden_bias_states }),
        })
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    /// `n_visible x n_hidden`; decoded cell values in hardware mode.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn visible_bias(&self) -> &Array1<f64> {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    pub fn hardware_state(&self) -> Option<&HardwareState> {
        self.hardware.as_ref()
    }

    pub fn mode(&self) -> Mode {
        if self.hardware.is_some() {
            Mode::Hardware
        } else {
            Mode::Ideal
        }
    }

    /// `P(s = 1)` of a hidden unit with pre-activation `x`.
    pub fn activate_hidden(&self, x: f64) -> f64 {
        match &self.hardware {
            None => sigmoid(x),
            Some(hw) => hw.config.activation.probability_of_one(x, self.n_visible()),
        }
    }

    /// `P(s = 1)` of a visible unit with pre-activation `x`.
    pub fn activate_visible(&self, x: f64) -> f64 {
        match &self.hardware {
            None => sigmoid(x),
            Some(hw) => hw.config.activation.probability_of_one(x, self.n_hidden()),
        }
    }

    /// Replace the activation of a hardware model; no effect in ideal mode.
    pub fn set_activation(&mut self, activation: Activation) {
        if let Some(hw) = &mut self.hardware {
            hw.config.activation = activation;
        }
    }

    pub fn energy(&self, visible: &[u8], hidden: &[u8]) -> Result<f64> {
        check_dim(self.n_visible(), visible.len())?;
        check_dim(self.n_hidden(), hidden.len())?;
        let mut e = 0.0;
        for (i, &v) in visible.iter().enumerate() {
            if v != 0 {
                e -= self.visible_bias[i];
                for (j, &h) in hidden.iter().enumerate() {
                    if h != 0 {
                        e -= self.weights[[i, j]];
                    }
                }
            }
        }
        for (j, &h) in hidden.iter().enumerate() {
            if h != 0 {
                e -= self.hidden_bias[j];
            }
        }
        Ok(e)
    }

    /// Pre-activations of the hidden layer for a (possibly real-valued)
    /// visible vector.
    pub fn hidden_preactivation(&self, visible: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_visible(), visible.len())?;
        let mut x = self.hidden_bias.to_vec();
        for (row, &v) in self.weights.outer_iter().zip(visible) {
            if v != 0.0 {
                for (xj, w) in x.iter_mut().zip(row.iter()) {
                    *xj += w * v;
                }
            }
        }
        Ok(x)
    }

    pub fn visible_preactivation(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_hidden(), hidden.len())?;
        Ok(self
            .weights
            .outer_iter()
            .zip(self.visible_bias.iter())
            .map(|(row, b)| b + row.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>())
            .collect())
    }

    pub fn hidden_probabilities(&self, visible: &[f64]) -> Result<Vec<f64>> {
        Ok(self.hidden_preactivation(visible)?.into_iter().map(|x| self.activate_hidden(x)).collect())
    }

    pub fn visible_probabilities(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        Ok(self.visible_preactivation(hidden)?.into_iter().map(|x| self.activate_visible(x)).collect())
    }

    /// Row-wise hidden probabilities for a batch (`batch x n_visible`).
    pub fn hidden_probabilities_batch(&self, visible: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.n_visible(), visible.ncols())?;
        let mut x = visible.dot(&self.weights);
        x += &self.hidden_bias;
        x.mapv_inplace(|v| self.activate_hidden(v));
        Ok(x)
    }

    pub fn visible_probabilities_batch(&self, hidden: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.n_hidden(), hidden.ncols())?;
        let mut x = hidden.dot(&self.weights.t());
        x += &self.visible_bias;
        x.mapv_inplace(|v| self.activate_visible(v));
        Ok(x)
    }

    /// One alternating Gibbs sweep: hidden given visible, then visible given
    /// the new hidden. Returns `(new_visible, new_hidden)`.
    pub fn gibbs_step<R: Rng + ?Sized>(&self, visible: &[u8], rng: &mut R) -> Result<(Vec<u8>, Vec<u8>)> {
        let v: Vec<f64> = visible.iter().map(|&b| b as f64).collect();
        let hidden: Vec<u8> = self.hidden_probabilities(&v)?.into_iter().map(|p| bernoulli(p, rng) as u8).collect();
        let h: Vec<f64> = hidden.iter().map(|&b| b as f64).collect();
        let new_visible: Vec<u8> =
            self.visible_probabilities(&h)?.into_iter().map(|p| bernoulli(p, rng) as u8).collect();
        Ok((new_visible, hidden))
    }

    /// Boltzmann distribution over all joint states by enumeration. State
    /// index bit `i` is visible unit `i`; bit `n_visible + j` is hidden unit `j`.
    pub fn exact_distribution(&self) -> Result<Vec<f64>> {
        let units = self.n_visible() + self.n_hidden();
        if units > MAX_EXACT_UNITS {
            return Err(Error::TooLarge { units, max: MAX_EXACT_UNITS });
        }
        let nv = self.n_visible();
        let mut v = vec![0u8; nv];
        let mut h = vec![0u8; self.n_hidden()];
        let mut log_weights = Vec::with_capacity(1 << units);
        for s in 0..(1usize << units) {
            for (i, b) in v.iter_mut().enumerate() {
                *b = ((s >> i) & 1) as u8;
            }
            for (j, b) in h.iter_mut().enumerate() {
                *b = ((s >> (nv + j)) & 1) as u8;
            }
            log_weights.push(-self.energy(&v, &h)?);
        }
        let peak = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = log_weights.iter().map(|l| (l - peak).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Ok(probs)
    }

    /// Functional form of [`RbmModel::cd_step`].
    pub fn cd_update<R: Rng + ?Sized>(
        &self,
        batch: ArrayView2<f64>,
        cfg: &CdConfig,
        rng: &mut R,
    ) -> Result<(RbmModel, CdStats)> {
        let mut next = self.clone();
        let stats = next.cd_step(batch, cfg, rng)?;
        Ok((next, stats))
    }

    /// One contrastive-divergence update on a batch (`batch x n_visible`,
    /// entries in `[0, 1]`).
    ///
    /// Positive phase samples `h` from the clamped `v`; the negative phase
    /// runs `k` Gibbs sweeps to `(v', h')`; the update is
    /// `eta * (v h^T - v' h'^T)` averaged over the batch, with bias updates
    /// `eta * (v - v')` and `eta * (h - h')`.
    pub fn cd_step<R: Rng + ?Sized>(&mut self, batch: ArrayView2<f64>, cfg: &CdConfig, rng: &mut R) -> Result<CdStats> {
        cfg.validate()?;
        if batch.nrows() == 0 {
            return Err(Error::Empty("batch"));
        }
        check_dim(self.n_visible(), batch.ncols())?;
        let n = batch.nrows() as f64;

        let v0 = batch;
        let h0 = self.hidden_probabilities_batch(v0)?.mapv(|p| bernoulli(p, rng));
        let mut hk = h0.clone();
        let mut vk = Array2::zeros(v0.raw_dim());
        for _ in 0..cfg.k {
            vk = self.visible_probabilities_batch(hk.view())?.mapv(|p| bernoulli(p, rng));
            hk = self.hidden_probabilities_batch(vk.view())?.mapv(|p| bernoulli(p, rng));
        }

        let flipped: f64 =
            v0.iter().zip(vk.iter()).map(|(a, b)| if (a >= &0.5) != (b >= &0.5) { 1.0 } else { 0.0 }).sum();
        let reconstruction_error = flipped / (v0.len() as f64);

        let eta = cfg.learning_rate;
        let mut pulses = 0;
        if self.hardware.is_some() && cfg.per_sample_pulses {
            for r in 0..batch.nrows() {
                let (v, h, vr, hr) = (v0.row(r), h0.row(r), vk.row(r), hk.row(r));
                let dw = outer(v, h) - outer(vr, hr);
                let dbv = (&v - &vr) * eta;
                let dbh = (&h - &hr) * eta;
                pulses += self.apply_delta(dw * eta, dbv, dbh)?;
            }
        } else {
            let dw = (v0.t().dot(&h0) - vk.t().dot(&hk)) * (eta / n);
            let dbv = (v0.sum_axis(Axis(0)) - vk.sum_axis(Axis(0))) * (eta / n);
            let dbh = (h0.sum_axis(Axis(0)) - hk.sum_axis(Axis(0))) * (eta / n);
            pulses += self.apply_delta(dw, dbv, dbh)?;
        }
        Ok(CdStats { reconstruction_error, pulses })
    }

    /// Add parameter changes. Ideal mode adds them exactly; hardware mode
    /// quantizes each change into a write pulse. Returns the number of cells
    /// pulsed.
    pub fn apply_delta(&mut self, dw: Array2<f64>, dbv: Array1<f64>, dbh: Array1<f64>) -> Result<usize> {
        check_dim(self.weights.len(), dw.len())?;
        check_dim(self.visible_bias.len(), dbv.len())?;
        check_dim(self.hidden_bias.len(), dbh.len())?;
        match &mut self.hardware {
            None => {
                self.weights += &dw;
                self.visible_bias += &dbv;
                self.hidden_bias += &dbh;
                Ok(0)
            }
            Some(hw) => {
                let map = hw.config.map;
                let max = hw.config.max_pulse_steps;
                let mut count = 0;
                let mut program = |states: &mut [u16], values: &mut [f64], deltas: &[f64]| -> Result<()> {
                    for ((s, w), d) in states.iter_mut().zip(values.iter_mut()).zip(deltas) {
                        if let Some(p) = quantize_weight_update(*d, map.w_step(), max)? {
                            let cell = apply_pulse(map.cell(*s), p);
                            if cell.state_index != *s {
                                *s = cell.state_index;
                                *w = state_to_weight(*s, &map);
                                count += 1;
                            }
                        }
                    }
                    Ok(())
                };
                program(
                    hw.weight_states.as_slice_mut().expect("standard layout"),
                    self.weights.as_slice_mut().expect("standard layout"),
                    dw.as_standard_layout().as_slice().expect("standard layout"),
                )?;
                program(
                    hw.visible_bias_states.as_slice_mut().expect("contiguous"),
                    self.visible_bias.as_slice_mut().expect("contiguous"),
                    dbv.as_slice().expect("contiguous"),
                )?;
                program(
                    hw.hidden_bias_states.as_slice_mut().expect("contiguous"),
                    self.hidden_bias.as_slice_mut().expect("contiguous"),
                    dbh.as_slice().expect("contiguous"),
                )?;
                Ok(count)
            }
        }
    }

    /// Train for `cfg.epochs` epochs over `data`, visiting samples in an
    /// order reshuffled every epoch. Returns the mean reconstruction error of
    /// each epoch.
    pub fn train<R: Rng + ?Sized>(&mut self, data: ArrayView2<f64>, cfg: &CdConfig, rng: &mut R) -> Result<Vec<f64>> {
        cfg.validate()?;
        check_dim(self.n_visible(), data.ncols())?;
        if data.nrows() == 0 {
            return Err(Error::Empty("training set"));
        }
        let mut order: Vec<usize> = (0..data.nrows()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            shuffle(&mut order, rng);
            let mut err = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch = data.select(Axis(0), chunk);
                err += self.cd_step(batch.view(), cfg, rng)?.reconstruction_error;
                batches += 1;
            }
            history.push(err / batches as f64);
        }
        Ok(history)
    }

    /// Root-mean-square difference between `data` and its mean-field
    /// reconstruction `v -> p(h|v) -> p(v|h)`.
    pub fn reconstruction_rmse(&self, data: ArrayView2<f64>) -> Result<f64> {
        if data.nrows() == 0 {
            return Err(Error::Empty("data"));
        }
        let h = self.hidden_probabilities_batch(data)?;
        let v = self.visible_probabilities_batch(h.view())?;
        let sq: f64 = data.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((sq / data.len() as f64).sqrt())
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let col = a.insert_axis(Axis(1));
    let row = b.insert_axis(Axis(0));
    col.dot(&row)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
