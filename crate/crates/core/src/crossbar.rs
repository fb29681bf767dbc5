//! Electrical model of the weighted array.
//!
//! Each column feeds one p-bit. During a read every cell is driven by its
//! row input: `VIN = VDD` pushes current through the pull-up read transistor
//! into the p-bit (positive), `VIN = GND` pulls current out through the
//! pull-down transistor (negative). The p-bit terminal sits at `VDD/2`, so the
//! drive voltage across each cell is `v_drive = VDD/2`.
//!
//! The read transistors are not symmetric. The pull-down is modelled as a
//! constant series resistance and the pull-up as an affine function of the
//! cell resistance, `R_up = a + b * R_w`; both are fitted to the reference
//! array measurements in [`TABLE3`] and [`TABLE4`].

use std::sync::OnceLock;

use crate::dwm::DwmCell;
use crate::error::{check_dim, Error, Result};
use crate::pbit::{output_probability, DeviceCurve};

/// Extreme injected currents measured on one array configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayObservation {
    /// Array side (cells per column).
    pub n: usize,
    /// Parallel resistance of every cell (ohm).
    pub r_p: f64,
    /// Largest positive column current (A), all inputs at VDD.
    pub i_pos: f64,
    /// Magnitude of the largest negative column current (A), all inputs at GND.
    pub i_neg: f64,
    pub p0_max: f64,
    pub p0_min: f64,
}

const fn obs(n: usize, r_p_mohm: f64, i_pos_ua: f64, i_neg_ua: f64, p0_max: f64, p0_min: f64) -> ArrayObservation {
    ArrayObservation { n, r_p: r_p_mohm * 1e6, i_pos: i_pos_ua * 1e-6, i_neg: i_neg_ua * 1e-6, p0_max, p0_min }
}

/// Array-size sweep at R_P = 1 MOhm.
pub const TABLE3: [ArrayObservation; 4] = [
    obs(8, 1.0, 2.71, 3.57, 0.77, 0.175),
    obs(16, 1.0, 5.14, 7.14, 0.88, 0.08),
    obs(32, 1.0, 10.79, 14.23, 0.95, 0.038),
    obs(64, 1.0, 21.46, 28.28, 0.97, 0.026),
];

/// R_P sweep on a 32 x 32 array.
pub const TABLE4: [ArrayObservation; 4] = [
    obs(32, 0.25, 36.56, 54.95, 0.98, 0.01),
    obs(32, 0.5, 20.02, 28.12, 0.965, 0.026),
    obs(32, 0.75, 13.97, 18.9, 0.96, 0.032),
    obs(32, 1.0, 10.79, 14.23, 0.95, 0.038),
];

/// Read power of an 8 x 8 array at R_P = 1 MOhm (W).
pub const POWER_ANCHOR_W: f64 = 22.6e-6;

/// The twelve (current A, p0) anchors used to fit the device curve.
pub fn probability_anchors() -> Vec<(f64, f64)> {
    [
        (2.71, 0.77),
        (5.14, 0.88),
        (10.79, 0.95),
        (21.46, 0.97),
        (36.56, 0.98),
        (-3.57, 0.175),
        (-7.14, 0.08),
        (-14.23, 0.038),
        (-28.28, 0.026),
        (-54.95, 0.01),
        (13.97, 0.96),
        (20.02, 0.965),
    ]
    .into_iter()
    .map(|(i, p)| (i * 1e-6, p))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    pub vdd: f64,
    pub v_drive: f64,
    /// Parallel-state cell resistance (ohm).
    pub r_p: f64,
    /// R_AP / R_P.
    pub r_ap_ratio: f64,
    /// Pull-down read transistor (ohm).
    pub r_tx_dn: f64,
    /// Pull-up read transistor offset (ohm).
    pub r_tx_up_a: f64,
    /// Pull-up read transistor slope against the cell resistance.
    pub r_tx_up_b: f64,
    /// Per-p-bit read-path power (W).
    pub p_neuron: f64,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        CrossbarConfig {
            rows: 32,
            cols: 32,
            vdd: 0.9,
            v_drive: 0.45,
            r_p: 1e6,
            r_ap_ratio: 2.0,
            r_tx_dn: 0.0,
            r_tx_up_a: 0.0,
            r_tx_up_b: 0.0,
            p_neuron: 0.0,
        }
    }
}

impl CrossbarConfig {
    /// Read path and per-neuron power fitted to the reference measurements.
    pub fn calibrated() -> Self {
        static CFG: OnceLock<CrossbarConfig> = OnceLock::new();
        *CFG.get_or_init(|| {
            let base = CrossbarConfig::default();
            let fit = calibrate_read_path(&TABLE3, &TABLE4, base.v_drive).expect("reference tables fit");
            let mut cfg = fit.apply(base);
            cfg.p_neuron = calibrate_neuron_power(POWER_ANCHOR_W, 8, 1e6, &cfg);
            cfg
        })
    }

    pub fn with_size(mut self, n: usize) -> Self {
        self.rows = n;
        self.cols = n;
        self
    }

    pub fn with_r_p(mut self, r_p: f64) -> Self {
        self.r_p = r_p;
        self
    }

    pub fn g_p(&self) -> f64 {
        1.0 / self.r_p
    }

    pub fn g_ap(&self) -> f64 {
        1.0 / (self.r_p * self.r_ap_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("array must be at least 1x1, got {}x{}", self.rows, self.cols));
        }
        if !(self.vdd > 0.0) || !(self.v_drive >= 0.0) || !(self.r_p > 0.0) {
            return bad("vdd and r_p must be positive, v_drive non-negative".into());
        }
        if !(self.r_ap_ratio > 1.0) {
            return bad(format!("r_ap_ratio must exceed 1, got {}", self.r_ap_ratio));
        }
        if !(self.r_tx_dn >= 0.0 && self.r_tx_up_a >= 0.0) {
            return bad("read transistor resistances must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.r_tx_up_b) {
            return bad(format!("r_tx_up_b must lie in [0,1), got {}", self.r_tx_up_b));
        }
        if !(self.p_neuron >= 0.0) {
            return bad("p_neuron must be non-negative".into());
        }
        Ok(())
    }

    /// A cell of this array in the given state.
    pub fn cell(&self, state_index: u16, n_states: u16) -> Result<DwmCell> {
        DwmCell::new(state_index, n_states, self.g_p(), self.g_ap())
    }

    pub fn parallel_cell(&self, n_states: u16) -> DwmCell {
        DwmCell { state_index: n_states - 1, n_states, g_p: self.g_p(), g_ap: self.g_ap() }
    }
}

/// Signed current (A) injected by a cell of resistance `r_w`.
pub fn cell_current_at(r_w: f64, input_bit: u8, cfg: &CrossbarConfig) -> f64 {
    if input_bit != 0 {
        cfg.v_drive / (r_w + cfg.r_tx_up_a + cfg.r_tx_up_b * r_w)
    } else {
        -cfg.v_drive / (r_w + cfg.r_tx_dn)
    }
}

pub fn cell_current(cell: &DwmCell, input_bit: u8, cfg: &CrossbarConfig) -> f64 {
    cell_current_at(cell.resistance(), input_bit, cfg)
}

/// Total current a column of cells injects into its p-bit.
pub fn column_current(cells: &[DwmCell], inputs: &[u8], cfg: &CrossbarConfig) -> Result<f64> {
    check_dim(cells.len(), inputs.len())?;
    Ok(cells.iter().zip(inputs).map(|(c, &s)| cell_current(c, s, cfg)).sum())
}

/// Column current minus that of a reference column with every cell at the
/// midpoint conductance, driven by the same inputs. Zero when all cells sit
/// at the midpoint.
pub fn net_column_current(cells: &[DwmCell], inputs: &[u8], cfg: &CrossbarConfig) -> Result<f64> {
    check_dim(cells.len(), inputs.len())?;
    Ok(cells
        .iter()
        .zip(inputs)
        .map(|(c, &s)| {
            let r_mid = 2.0 / (c.g_p + c.g_ap);
            cell_current(c, s, cfg) - cell_current_at(r_mid, s, cfg)
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentRange {
    /// A, >= 0.
    pub max_positive: f64,
    /// A, <= 0.
    pub max_negative: f64,
    pub p0_max: f64,
    pub p0_min: f64,
}

/// Extreme column currents of an `n x n` array with every cell at `r_p`, and
/// the p-bit probabilities they produce.
pub fn current_range(n: usize, r_p: f64, cfg: &CrossbarConfig, curve: &DeviceCurve) -> CurrentRange {
    let max_positive = n as f64 * cell_current_at(r_p, 1, cfg);
    let max_negative = n as f64 * cell_current_at(r_p, 0, cfg);
    CurrentRange {
        max_positive,
        max_negative,
        p0_max: output_probability(max_positive, curve),
        p0_min: output_probability(max_negative, curve),
    }
}

/// Per-observation fit residuals, relative to the measured current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadPathResidual {
    pub n: usize,
    pub r_p: f64,
    pub positive: f64,
    pub negative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadPathFit {
    pub r_tx_dn: f64,
    pub r_tx_up_a: f64,
    pub r_tx_up_b: f64,
    pub residuals: Vec<ReadPathResidual>,
}

impl ReadPathFit {
    pub fn apply(&self, mut cfg: CrossbarConfig) -> CrossbarConfig {
        cfg.r_tx_dn = self.r_tx_dn;
        cfg.r_tx_up_a = self.r_tx_up_a;
        cfg.r_tx_up_b = self.r_tx_up_b;
        cfg
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.positive.abs().max(r.negative.abs())).fold(0.0, f64::max)
    }
}

/// Fit the read-transistor model to measured extremes.
///
/// Each observation gives a per-cell current `I/n`, hence an effective series
/// resistance `v_drive / (I/n)`; subtracting `R_P` leaves the transistor
/// overhead. The pull-down overhead is fitted as a constant and the pull-up
/// overhead as `a + b * R_P`, both by ordinary least squares.
pub fn calibrate_read_path(
    table3_rows: &[ArrayObservation],
    table4_rows: &[ArrayObservation],
    v_drive: f64,
) -> Result<ReadPathFit> {
    let rows: Vec<ArrayObservation> = table3_rows.iter().chain(table4_rows).copied().collect();
    if !(v_drive > 0.0) {
        return Err(Error::InvalidParameter(format!("v_drive must be positive, got {v_drive}")));
    }
    if rows.iter().any(|o| o.n == 0 || !(o.r_p > 0.0) || !(o.i_pos > 0.0) || !(o.i_neg > 0.0)) {
        return Err(Error::InvalidParameter("observations need n >= 1 and positive R_P and currents".into()));
    }
    let m = rows.len() as f64;
    let mean_r = rows.iter().map(|o| o.r_p).sum::<f64>() / m.max(1.0);
    let var_r: f64 = rows.iter().map(|o| (o.r_p - mean_r).powi(2)).sum();
    if rows.len() < 2 || var_r <= 1e-12 * mean_r * mean_r {
        return Err(Error::DegenerateData(
            "pull-up slope needs observations at two or more distinct R_P values".into(),
        ));
    }
    if rows.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: rows.len() });
    }

    let overhead = |i_total: f64, o: &ArrayObservation| v_drive / (i_total / o.n as f64) - o.r_p;

    let r_tx_dn = rows.iter().map(|o| overhead(o.i_neg, o)).sum::<f64>() / m;

    let ups: Vec<f64> = rows.iter().map(|o| overhead(o.i_pos, o)).collect();
    let mean_up = ups.iter().sum::<f64>() / m;
    let cov: f64 = rows.iter().zip(&ups).map(|(o, u)| (o.r_p - mean_r) * (u - mean_up)).sum();
    let r_tx_up_b = cov / var_r;
    let r_tx_up_a = mean_up - r_tx_up_b * mean_r;

    let fitted = CrossbarConfig { v_drive, r_tx_dn, r_tx_up_a, r_tx_up_b, ..CrossbarConfig::default() };
    let residuals = rows
        .iter()
        .map(|o| {
            let pos = o.n as f64 * cell_current_at(o.r_p, 1, &fitted);
            let neg = -(o.n as f64) * cell_current_at(o.r_p, 0, &fitted);
            ReadPathResidual {
                n: o.n,
                r_p: o.r_p,
                positive: (pos - o.i_pos) / o.i_pos,
                negative: (neg - o.i_neg) / o.i_neg,
            }
        })
        .collect();
    Ok(ReadPathFit { r_tx_dn, r_tx_up_a, r_tx_up_b, residuals })
}

/// Worst-case read power of an `n x n` array: every cell at `r_p` with its
/// input at VDD, plus the fixed read-path power of `n` p-bits.
pub fn read_power(n: usize, r_p: f64, cfg: &CrossbarConfig) -> f64 {
    let cells = (n * n) as f64;
    cells * cfg.v_drive * cell_current_at(r_p, 1, cfg).abs() + n as f64 * cfg.p_neuron
}

/// Per-neuron power that makes [`read_power`] hit `target` at `(n, r_p)`.
pub fn calibrate_neuron_power(target: f64, n: usize, r_p: f64, cfg: &CrossbarConfig) -> f64 {
    let resistive = read_power(n, r_p, &CrossbarConfig { p_neuron: 0.0, ..*cfg });
    ((target - resistive) / n as f64).max(0.0)
}

/// Affine map between signed weights in `[-w_max, w_max]` and cell states,
/// with weight zero at the midpoint conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedWeightMap {
    pub w_max: f64,
    pub n_states: u16,
    pub g_p: f64,
    pub g_ap: f64,
}

impl SignedWeightMap {
    pub fn new(w_max: f64, n_states: u16, g_p: f64, g_ap: f64) -> Result<Self> {
        if !(w_max > 0.0) {
            return Err(Error::InvalidParameter(format!("w_max must be positive, got {w_max}")));
        }
        if n_states < 2 {
            return Err(Error::InvalidParameter(format!("n_states must be >= 2, got {n_states}")));
        }
        if !(g_ap > 0.0 && g_ap < g_p) {
            return Err(Error::InvalidParameter("need 0 < g_ap < g_p".into()));
        }
        Ok(SignedWeightMap { w_max, n_states, g_p, g_ap })
    }

    pub fn g_mid(&self) -> f64 {
        0.5 * (self.g_p + self.g_ap)
    }

    /// Weight change of one state step.
    pub fn w_step(&self) -> f64 {
        2.0 * self.w_max / (self.n_states - 1) as f64
    }

    fn mid_state(&self) -> f64 {
        (self.n_states - 1) as f64 / 2.0
    }

    pub fn cell(&self, state_index: u16) -> DwmCell {
        DwmCell { state_index, n_states: self.n_states, g_p: self.g_p, g_ap: self.g_ap }
    }
}

/// Nearest state for weight `w`, clamped to the representable range.
pub fn weight_to_state(w: f64, map: &SignedWeightMap) -> u16 {
    let mid = map.mid_state();
    let s = (mid + w / map.w_max * mid).round();
    s.clamp(0.0, (map.n_states - 1) as f64) as u16
}

pub fn state_to_weight(state: u16, map: &SignedWeightMap) -> f64 {
    let mid = map.mid_state();
    (state as f64 - mid) / mid * map.w_max
}

/// Pre-activation of a column with bipolar inputs `2s - 1`:
/// `bias + sum_i w_i (2 s_i - 1)`.
pub fn bipolar_preactivation(weights: &[f64], bias: f64, inputs: &[u8]) -> Result<f64> {
    check_dim(weights.len(), inputs.len())?;
    Ok(bias + weights.iter().zip(inputs).map(|(w, &s)| w * (2.0 * s as f64 - 1.0)).sum::<f64>())
}

/// Bipolar-encoded parameters equivalent to a `{0,1}`-input column
/// `(weights, bias)`: halved weights and `bias + sum(weights) / 2`.
pub fn to_bipolar(weights: &[f64], bias: f64) -> (Vec<f64>, f64) {
    let half: Vec<f64> = weights.iter().map(|w| 0.5 * w).collect();
    let b = bias + half.iter().sum::<f64>();
    (half, b)
}

/// One row of the `array-sweep` CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub r_p: f64,
    pub range: CurrentRange,
    pub power: f64,
}

pub fn array_sweep(ns: &[usize], r_ps: &[f64], cfg: &CrossbarConfig, curve: &DeviceCurve) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(ns.len() * r_ps.len());
    for &n in ns {
        for &r_p in r_ps {
            rows.push(SweepRow { n, r_p, range: current_range(n, r_p, cfg, curve), power: read_power(n, r_p, cfg) });
        }
    }
    rows
}

pub const SWEEP_HEADER: &str = "n,rp_mohm,imax_pos_uA,imax_neg_uA,p0_max,p0_min,power_uW";

/// `array-sweep` CSV; negative currents are written as magnitudes.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.n,
            r.r_p * 1e-6,
            r.range.max_positive * 1e6,
            -r.range.max_negative * 1e6,
            r.range.p0_max,
            r.range.p0_min,
            r.power * 1e6
        ));
    }
    out
}
