//! Binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MAGB"  u16 version  u8 mode (0 ideal, 1 hardware)
//! u32 widths  u32 topology[widths]
//! one record per RBM, bottom layer first, readout last:
//!   u32 n_visible  u32 n_hidden
//!   ideal:    f64 weights (row-major)  f64 visible_bias  f64 hidden_bias
//!   hardware: hardware config, then u16 cell states in the same order
//! ```

use ndarray::{Array1, Array2};

use crate::crossbar::SignedWeightMap;
use crate::dbn::DbnModel;
use crate::error::{Error, Result};
use crate::pbit::{DeviceCurve, PBitParams};
use crate::rbm::{Activation, HardwareConfig, Mode, PBitActivation, RbmModel};

pub const MAGIC: &[u8; 4] = b"MAGB";
pub const VERSION: u16 = 1;

/// Refuse headers that would need more than this many parameters.
const MAX_PARAMS: usize = 1 << 28;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Parse {
            offset: self.pos,
            msg: format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        (0..n).map(|_| self.u16()).collect()
    }
    fn fail<T>(&self, offset: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset, msg: msg.into() })
    }
}

fn params_fields(p: &PBitParams) -> [f64; 10] {
    [
        p.delta,
        p.alpha,
        p.theta_sh,
        p.lambda_sf,
        p.gshe_length,
        p.gshe_width,
        p.gshe_thickness,
        p.temperature,
        p.eta_fit,
        p.chi_fit,
    ]
}

fn write_hardware(w: &mut Writer, hw: &HardwareConfig) {
    w.f64(hw.map.w_max);
    w.u16(hw.map.n_states);
    w.f64(hw.map.g_p);
    w.f64(hw.map.g_ap);
    w.u32(hw.max_pulse_steps);
    match &hw.activation {
        Activation::Logistic => w.u8(0),
        Activation::PBit(p) => {
            w.u8(1);
            w.f64(p.amps_per_unit);
            w.f64(p.cell_pos_max);
            w.f64(p.cell_neg_max);
            w.u32(p.rows.map_or(0, |r| r as u32));
            for v in params_fields(&p.curve.params) {
                w.f64(v);
            }
            w.f64(p.curve.gain_beta);
            w.u32(p.curve.sample_points.len() as u32);
            for &(i, q) in &p.curve.sample_points {
                w.f64(i);
                w.f64(q);
            }
        }
    }
}

fn read_hardware(r: &mut Reader) -> Result<HardwareConfig> {
    let at = r.pos;
    let w_max = r.f64()?;
    let n_states = r.u16()?;
    let g_p = r.f64()?;
    let g_ap = r.f64()?;
    let map = SignedWeightMap::new(w_max, n_states, g_p, g_ap).or_else(|e| r.fail(at, e.to_string()))?;
    let max_pulse_steps = r.u32()?;
    let tag_at = r.pos;
    let activation = match r.u8()? {
        0 => Activation::Logistic,
        1 => {
            let amps_per_unit = r.f64()?;
            let cell_pos_max = r.f64()?;
            let cell_neg_max = r.f64()?;
            let rows = match r.u32()? {
                0 => None,
                n => Some(n as usize),
            };
            let f = r.f64s(10)?;
            let params = PBitParams {
                delta: f[0],
                alpha: f[1],
                theta_sh: f[2],
                lambda_sf: f[3],
                gshe_length: f[4],
                gshe_width: f[5],
                gshe_thickness: f[6],
                temperature: f[7],
                eta_fit: f[8],
                chi_fit: f[9],
            };
            let curve_at = r.pos;
            let gain_beta = r.f64()?;
            let mut curve = DeviceCurve::new(params).or_else(|e| r.fail(curve_at, e.to_string()))?;
            curve.gain_beta = gain_beta;
            let n = r.u32()? as usize;
            if n > MAX_PARAMS {
                return r.fail(r.pos - 4, "sample point count too large");
            }
            curve.sample_points = (0..n).map(|_| Ok((r.f64()?, r.f64()?))).collect::<Result<_>>()?;
            Activation::PBit(PBitActivation { curve, amps_per_unit, cell_pos_max, cell_neg_max, rows })
        }
        t => return r.fail(tag_at, format!("unknown activation tag {t}")),
    };
    Ok(HardwareConfig { map, max_pulse_steps, activation })
}

fn write_rbm(w: &mut Writer, m: &RbmModel) {
    w.u32(m.n_visible() as u32);
    w.u32(m.n_hidden() as u32);
    match m.hardware_state() {
        None => {
            m.weights().iter().for_each(|&v| w.f64(v));
            m.visible_bias().iter().for_each(|&v| w.f64(v));
            m.hidden_bias().iter().for_each(|&v| w.f64(v));
        }
        Some(hw) => {
            write_hardware(w, &hw.config);
            hw.weight_states.iter().for_each(|&s| w.u16(s));
            hw.visible_bias_states.iter().for_each(|&s| w.u16(s));
            hw.hidden_bias_states.iter().for_each(|&s| w.u16(s));
        }
    }
}

fn read_rbm(r: &mut Reader, mode: Mode, nv: usize, nh: usize) -> Result<RbmModel> {
    let at = r.pos;
    let (v, h) = (r.u32()? as usize, r.u32()? as usize);
    if (v, h) != (nv, nh) {
        return r.fail(at, format!("layer is {v}x{h}, topology says {nv}x{nh}"));
    }
    let shape_err = |_| Error::Parse { offset: at, msg: "bad layer shape".into() };
    match mode {
        Mode::Ideal => {
            let w = Array2::from_shape_vec((nv, nh), r.f64s(nv * nh)?).map_err(shape_err)?;
            let bv = Array1::from(r.f64s(nv)?);
            let bh = Array1::from(r.f64s(nh)?);
            RbmModel::from_parts(w, bv, bh)
        }
        Mode::Hardware => {
            let cfg = read_hardware(r)?;
            let states_at = r.pos;
            let w = Array2::from_shape_vec((nv, nh), r.u16s(nv * nh)?).map_err(shape_err)?;
            let bv = Array1::from(r.u16s(nv)?);
            let bh = Array1::from(r.u16s(nh)?);
            RbmModel::from_states(cfg, w, bv, bh).or_else(|e| r.fail(states_at, e.to_string()))
        }
    }
}

pub fn to_bytes(model: &DbnModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u8(match model.mode() {
        Mode::Ideal => 0,
        Mode::Hardware => 1,
    });
    w.u32(model.topology().len() as u32);
    model.topology().iter().for_each(|&t| w.u32(t as u32));
    for layer in model.layers() {
        write_rbm(&mut w, layer);
    }
    write_rbm(&mut w, model.readout());
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<DbnModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return r.fail(0, "bad magic, not a MAGB checkpoint");
    }
    let version = r.u16()?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let mode = match r.u8()? {
        0 => Mode::Ideal,
        1 => Mode::Hardware,
        m => return r.fail(6, format!("unknown mode byte {m}")),
    };
    let n = r.u32()? as usize;
    if !(2..=1024).contains(&n) {
        return r.fail(7, format!("implausible topology length {n}"));
    }
    let topology: Vec<usize> = (0..n).map(|_| r.u32().map(|t| t as usize)).collect::<Result<_>>()?;
    let total = topology.windows(2).try_fold(0usize, |acc, p| acc.checked_add(p[0].checked_mul(p[1])?));
    if topology.contains(&0) || total.is_none_or(|t| t > MAX_PARAMS) {
        return r.fail(11, format!("implausible topology {topology:?}"));
    }
    let mut layers = Vec::with_capacity(n - 2);
    for l in 0..n - 2 {
        layers.push(read_rbm(&mut r, mode, topology[l], topology[l + 1])?);
    }
    let readout = read_rbm(&mut r, mode, topology[n - 2], topology[n - 1])?;
    if r.pos != bytes.len() {
        return r.fail(r.pos, "trailing bytes");
    }
    DbnModel::from_parts(layers, readout)
}

pub fn save(model: &DbnModel, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &std::path::Path) -> Result<DbnModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
