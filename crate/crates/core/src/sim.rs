//! Fixed-step model of a double-acting cylinder driven by a 4/2 bang-bang
//! valve, with a laminar cross-port leak between the two chambers.
//!
//! Chamber 1 is the cap side (pressure `p1`, area `A1`), chamber 2 the rod
//! side (`p2`, `A2`). The valve connects supply to one chamber and tank to
//! the other. Leak flow runs from cap to rod side:
//!
//! ```text
//! q_leak = k_leak * (p1 - p2)
//! dp1/dt = beta / V1 * (Q1_in - A1 * v - q_leak)
//! dp2/dt = beta / V2 * (Q2_in + A2 * v + q_leak)
//! m dv/dt = p1 A1 - p2 A2 - c v - Fc sign(v)
//! ```
//!
//! During extension the meter-out restriction keeps `p2` above `p1`, so the
//! leak feeds rod-side oil back behind the piston. That regenerative flow
//! lowers the cap pressure and speeds the stroke up.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::error::{Error, Result};

/// Fraction of the stroke at either end inside which the valve reverses.
pub const STROKE_BAND: f64 = 0.02;

/// Leakage condition, also the label encoding used everywhere downstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeakClass {
    NoLeak = 0,
    LowLeak = 1,
    HighLeak = 2,
}

impl LeakClass {
    pub const ALL: [LeakClass; 3] = [LeakClass::NoLeak, LeakClass::LowLeak, LeakClass::HighLeak];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(LeakClass::NoLeak),
            1 => Ok(LeakClass::LowLeak),
            2 => Ok(LeakClass::HighLeak),
            other => Err(Error::Label(format!("class index {other} outside 0..=2"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LeakClass::NoLeak => "none",
            LeakClass::LowLeak => "low",
            LeakClass::HighLeak => "high",
        }
    }
}

impl fmt::Display for LeakClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LeakClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "no" | "0" => Ok(LeakClass::NoLeak),
            "low" | "1" => Ok(LeakClass::LowLeak),
            "high" | "2" => Ok(LeakClass::HighLeak),
            other => Err(Error::Label(format!("unknown leak class `{other}`"))),
        }
    }
}

/// Laminar leak coefficients for the two faulty classes, in (m³/s)/Pa.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakCalibration {
    pub k_low: f64,
    pub k_high: f64,
}

// Above about 3.9e-10 the default rig stops reaching the retraction end
// band cleanly and the extension means jump around.
impl Default for LeakCalibration {
    fn default() -> Self {
        Self {
            k_low: 2.0e-10,
            k_high: 3.6e-10,
        }
    }
}

impl LeakCalibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_low > 0.0 && self.k_low < self.k_high && self.k_high.is_finite()) {
            return Err(Error::Config(format!(
                "leak calibration needs 0 < k_low < k_high, got k_low = {}, k_high = {}",
                self.k_low, self.k_high
            )));
        }
        Ok(())
    }

    pub fn override_from(&mut self, cfg: &mut FlatConfig) -> Result<()> {
        cfg.take_into("leak.k_low", &mut self.k_low)?;
        cfg.take_into("leak.k_high", &mut self.k_high)?;
        Ok(())
    }
}

/// Leak coefficient for `class` under `calibration`.
pub fn leak_coefficient(class: LeakClass, calibration: &LeakCalibration) -> Result<f64> {
    calibration.validate()?;
    Ok(match class {
        LeakClass::NoLeak => 0.0,
        LeakClass::LowLeak => calibration.k_low,
        LeakClass::HighLeak => calibration.k_high,
    })
}

/// Physical constants of the cylinder/valve circuit. SI units throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    pub bore_diameter: f64,
    pub rod_diameter: f64,
    pub stroke: f64,
    pub bulk_modulus: f64,
    pub supply_pressure: f64,
    pub relief_pressure: f64,
    pub moving_mass: f64,
    pub viscous_friction: f64,
    pub coulomb_friction: f64,
    /// Orifice gain, Q = gain * sqrt(dp), in (m³/s)/Pa^0.5.
    pub valve_flow_gain: f64,
    pub dead_volume: f64,
    /// Laminar leak coefficient in (m³/s)/Pa.
    pub leak_coefficient: f64,
}

impl Default for ActuatorParams {
    /// 63 mm bore, 28 mm rod, 160 mm stroke cylinder.
    fn default() -> Self {
        Self {
            bore_diameter: 0.063,
            rod_diameter: 0.028,
            stroke: 0.16,
            bulk_modulus: 1.0e9,
            supply_pressure: 5.0e6,
            relief_pressure: 5.0e6,
            moving_mass: 5.0,
            viscous_friction: 400.0,
            coulomb_friction: 50.0,
            valve_flow_gain: 3.4e-7,
            dead_volume: 2.0e-5,
            leak_coefficient: 0.0,
        }
    }
}

impl ActuatorParams {
    /// Piston area on the cap side, A1.
    pub fn cap_area(&self) -> f64 {
        std::f64::consts::PI * (self.bore_diameter / 2.0).powi(2)
    }

    /// Annulus area on the rod side, A2.
    pub fn rod_side_area(&self) -> f64 {
        self.cap_area() - std::f64::consts::PI * (self.rod_diameter / 2.0).powi(2)
    }

    pub fn with_leak(mut self, class: LeakClass, calibration: &LeakCalibration) -> Result<Self> {
        self.leak_coefficient = leak_coefficient(class, calibration)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rod_diameter", self.rod_diameter),
            ("stroke", self.stroke),
            ("bulk_modulus", self.bulk_modulus),
            ("relief_pressure", self.relief_pressure),
            ("moving_mass", self.moving_mass),
            ("valve_flow_gain", self.valve_flow_gain),
            ("dead_volume", self.dead_volume),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        let non_negative = [
            ("viscous_friction", self.viscous_friction),
            ("coulomb_friction", self.coulomb_friction),
            ("leak_coefficient", self.leak_coefficient),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {value}")));
            }
        }
        if !(self.bore_diameter > self.rod_diameter) {
            return Err(Error::Config(format!(
                "bore_diameter ({}) must exceed rod_diameter ({})",
                self.bore_diameter, self.rod_diameter
            )));
        }
        if !(self.relief_pressure <= self.supply_pressure && self.supply_pressure.is_finite()) {
            return Err(Error::Config(format!(
                "relief_pressure ({}) must not exceed supply_pressure ({})",
                self.relief_pressure, self.supply_pressure
            )));
        }
        Ok(())
    }

    /// Largest flow the valve can pass, at full relief pressure drop.
    pub fn max_valve_flow(&self) -> f64 {
        self.valve_flow_gain * self.relief_pressure.sqrt()
    }

    /// Applies `sim.*` keys from a flat config.
    pub fn override_from(&mut self, cfg: &mut FlatConfig) -> Result<()> {
        cfg.take_into("sim.bore_diameter", &mut self.bore_diameter)?;
        cfg.take_into("sim.rod_diameter", &mut self.rod_diameter)?;
        cfg.take_into("sim.stroke", &mut self.stroke)?;
        cfg.take_into("sim.bulk_modulus", &mut self.bulk_modulus)?;
        cfg.take_into("sim.supply_pressure", &mut self.supply_pressure)?;
        cfg.take_into("sim.relief_pressure", &mut self.relief_pressure)?;
        cfg.take_into("sim.moving_mass", &mut self.moving_mass)?;
        cfg.take_into("sim.viscous_friction", &mut self.viscous_friction)?;
        cfg.take_into("sim.coulomb_friction", &mut self.coulomb_friction)?;
        cfg.take_into("sim.valve_flow_gain", &mut self.valve_flow_gain)?;
        cfg.take_into("sim.dead_volume", &mut self.dead_volume)?;
        Ok(())
    }
}

/// Two-position valve command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Valve {
    /// Supply to cap side, rod side to tank (u = +1).
    Extend,
    /// Supply to rod side, cap side to tank (u = -1).
    Retract,
}

impl Valve {
    pub fn sign(self) -> i8 {
        match self {
            Valve::Extend => 1,
            Valve::Retract => -1,
        }
    }

    pub fn from_sign(u: f64) -> Result<Self> {
        if u > 0.0 {
            Ok(Valve::Extend)
        } else if u < 0.0 {
            Ok(Valve::Retract)
        } else {
            Err(Error::Parse(format!(
                "valve command must be -1 or +1, got {u}"
            )))
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Valve::Extend => Valve::Retract,
            Valve::Retract => Valve::Extend,
        }
    }
}

/// Instantaneous state of the circuit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimState {
    pub x: f64,
    pub v: f64,
    pub p1: f64,
    pub p2: f64,
    pub u: Valve,
    pub q_leak: f64,
}

impl SimState {
    /// Retracted, at rest, both chambers at tank pressure, valve extending.
    pub fn at_rest() -> Self {
        Self {
            x: 0.0,
            v: 0.0,
            p1: 0.0,
            p2: 0.0,
            u: Valve::Extend,
            q_leak: 0.0,
        }
    }
}

fn orifice(gain: f64, dp: f64) -> f64 {
    gain * dp.signum() * dp.abs().sqrt()
}

/// Advances the circuit by one semi-implicit Euler step: pressures first,
/// then velocity from the new pressures, then position from the new velocity.
pub fn step(state: &SimState, params: &ActuatorParams, u: Valve, dt: f64) -> Result<SimState> {
    let a1 = params.cap_area();
    let a2 = params.rod_side_area();
    let ps = params.supply_pressure;
    let gain = params.valve_flow_gain;

    let (q1_in, q2_in) = match u {
        Valve::Extend => (orifice(gain, ps - state.p1), -orifice(gain, state.p2)),
        Valve::Retract => (-orifice(gain, state.p1), orifice(gain, ps - state.p2)),
    };
    let q_leak = params.leak_coefficient * (state.p1 - state.p2);
    let v1 = params.dead_volume + a1 * state.x;
    let v2 = params.dead_volume + a2 * (params.stroke - state.x);
    let beta = params.bulk_modulus;

    let p1 = (state.p1 + dt * beta / v1 * (q1_in - a1 * state.v - q_leak))
        .clamp(0.0, params.relief_pressure);
    let p2 = (state.p2 + dt * beta / v2 * (q2_in + a2 * state.v + q_leak))
        .clamp(0.0, params.relief_pressure);

    let force = p1 * a1 - p2 * a2;
    let fc = params.coulomb_friction;
    let v = if state.v == 0.0 {
        if force.abs() <= fc {
            0.0
        } else {
            dt * (force - fc * force.signum()) / params.moving_mass
        }
    } else {
        let accel = (force - params.viscous_friction * state.v - fc * state.v.signum())
            / params.moving_mass;
        let next = state.v + dt * accel;
        // Friction can stop the piston within a step but not reverse it.
        if next.signum() != state.v.signum() {
            0.0
        } else {
            next
        }
    };
    let mut x = state.x + dt * v;
    let mut v = v;
    if x <= 0.0 {
        x = 0.0;
        v = v.max(0.0);
    } else if x >= params.stroke {
        x = params.stroke;
        v = v.min(0.0);
    }

    let next = SimState {
        x,
        v,
        p1,
        p2,
        u,
        q_leak: params.leak_coefficient * (p1 - p2),
    };
    for (field, value) in [
        ("p1", p1),
        ("p2", p2),
        ("v", v),
        ("x", x),
        ("q_leak", next.q_leak),
    ] {
        if !value.is_finite() {
            return Err(Error::SimulationDiverged {
                field,
                time: f64::NAN,
            });
        }
    }
    Ok(next)
}

/// Integration, sampling and noise settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub sample_rate: f64,
    /// Simulated-time budget; exceeding it is a timeout.
    pub duration: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Number of extend/retract round trips.
    pub n_cycles: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0e-4,
            sample_rate: 1000.0,
            duration: 3600.0,
            noise_std: 2.0e4,
            seed: 0,
            // 200 strokes per class.
            n_cycles: 100,
        }
    }
}

impl SimConfig {
    /// Integration steps between two output samples.
    pub fn steps_per_sample(&self) -> Result<usize> {
        let ratio = 1.0 / (self.sample_rate * self.dt);
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-6 * ratio {
            return Err(Error::Config(format!(
                "1 / (sample_rate * dt) must be a positive integer, got {ratio}"
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0 / self.dt * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "sample_rate must be in (0, 1/dt], got {}",
                self.sample_rate
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if self.n_cycles == 0 {
            return Err(Error::Config("n_cycles must be at least 1".into()));
        }
        self.steps_per_sample()?;
        Ok(())
    }

    /// Applies `sim.*` keys from a flat config.
    pub fn override_from(&mut self, cfg: &mut FlatConfig) -> Result<()> {
        cfg.take_into("sim.dt", &mut self.dt)?;
        cfg.take_into("sim.sample_rate", &mut self.sample_rate)?;
        cfg.take_into("sim.duration", &mut self.duration)?;
        cfg.take_into("sim.noise_std", &mut self.noise_std)?;
        cfg.take_into("sim.cycles", &mut self.n_cycles)?;
        Ok(())
    }
}

/// Uniformly sampled channels of one simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub sample_times: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<i8>,
    pub label: LeakClass,
}

pub const TRACE_HEADER: &str = "t,p1,p2,x,u,label";

impl Trace {
    pub fn len(&self) -> usize {
        self.sample_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_times.is_empty()
    }

    /// Number of sign changes in the valve channel.
    pub fn valve_transitions(&self) -> usize {
        self.u.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sample_times.len();
        if [self.p1.len(), self.p2.len(), self.x.len(), self.u.len()]
            .iter()
            .any(|&len| len != n)
        {
            return Err(Error::Parse("trace channels differ in length".into()));
        }
        if self.sample_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse(
                "trace times are not strictly increasing".into(),
            ));
        }
        if self.u.iter().any(|&u| u != 1 && u != -1) {
            return Err(Error::Parse(
                "valve channel must contain only -1 and +1".into(),
            ));
        }
        Ok(())
    }

    /// Writes the trace as CSV with header `t,p1,p2,x,u,label`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        let label = self.label.index();
        for i in 0..self.len() {
            writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
                self.sample_times[i], self.p1[i], self.p2[i], self.x[i], self.u[i], label
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace file".into()))??;
        if header.trim() != TRACE_HEADER {
            return Err(Error::Parse(format!(
                "trace header must be `{TRACE_HEADER}`, got `{}`",
                header.trim()
            )));
        }
        let mut trace = Trace {
            sample_times: Vec::new(),
            p1: Vec::new(),
            p2: Vec::new(),
            x: Vec::new(),
            u: Vec::new(),
            label: LeakClass::NoLeak,
        };
        let mut label = None;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse(format!("line {row}: expected 6 fields")));
            }
            let num = |k: usize| -> Result<f64> {
                fields[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {row}, field {}: {e}", k + 1)))
            };
            trace.sample_times.push(num(0)?);
            trace.p1.push(num(1)?);
            trace.p2.push(num(2)?);
            trace.x.push(num(3)?);
            trace.u.push(Valve::from_sign(num(4)?)?.sign());
            let row_label: LeakClass = fields[5].parse()?;
            match label {
                None => label = Some(row_label),
                Some(l) if l != row_label => {
                    return Err(Error::Parse(format!(
                        "line {row}: label changes within trace"
                    )))
                }
                Some(_) => {}
            }
        }
        trace.label = label.ok_or_else(|| Error::Parse("trace has no samples".into()))?;
        trace.validate()?;
        Ok(trace)
    }
}

/// Simulates `config.n_cycles` extend/retract round trips and samples the
/// channels at `config.sample_rate`. The valve reverses whenever the piston
/// enters the end band of the stroke it is heading for. After the final
/// reversal one more sample is recorded, so a trace of `n` cycles contains
/// exactly `2n` valve transitions.
pub fn run_cycles(params: &ActuatorParams, config: &SimConfig, class: LeakClass) -> Result<Trace> {
    params.validate()?;
    config.validate()?;
    let steps_per_sample = config.steps_per_sample()?;
    let required = 2 * config.n_cycles;
    let max_steps = (config.duration / config.dt).ceil() as u64;
    let upper = params.stroke * (1.0 - STROKE_BAND);
    let lower = params.stroke * STROKE_BAND;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = if config.noise_std > 0.0 {
        Some(Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let relief = params.relief_pressure;
    let noisy = |p: f64, rng: &mut ChaCha8Rng| match &noise {
        Some(n) => (p + n.sample(rng)).clamp(0.0, relief),
        None => p,
    };

    let capacity = (config.n_cycles as f64 * 4.0 * config.sample_rate) as usize;
    let mut trace = Trace {
        sample_times: Vec::with_capacity(capacity),
        p1: Vec::with_capacity(capacity),
        p2: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity),
        u: Vec::with_capacity(capacity),
        label: class,
    };

    let mut state = SimState::at_rest();
    let mut transitions = 0usize;
    let mut sample_index: u64 = 0;
    let mut step_index: u64 = 0;
    loop {
        if step_index.is_multiple_of(steps_per_sample as u64) {
            trace
                .sample_times
                .push(sample_index as f64 / config.sample_rate);
            trace.p1.push(noisy(state.p1, &mut rng));
            trace.p2.push(noisy(state.p2, &mut rng));
            trace.x.push(state.x);
            trace.u.push(state.u.sign());
            sample_index += 1;
            if transitions == required {
                break;
            }
        }
        if step_index >= max_steps {
            return Err(Error::SimulationTimeout {
                duration: config.duration,
                completed: transitions,
                required,
            });
        }
        state = step(&state, params, state.u, config.dt).map_err(|e| match e {
            Error::SimulationDiverged { field, .. } => Error::SimulationDiverged {
                field,
                time: (step_index + 1) as f64 * config.dt,
            },
            other => other,
        })?;
        step_index += 1;
        if transitions < required {
            let reverse = match state.u {
                Valve::Extend => state.x >= upper,
                Valve::Retract => state.x <= lower,
            };
            if reverse {
                state.u = state.u.reversed();
                transitions += 1;
            }
        }
    }
    Ok(trace)
}

/// Sets the leak coefficient for `class` and runs [`run_cycles`].
pub fn simulate_class(
    params: &ActuatorParams,
    calibration: &LeakCalibration,
    config: &SimConfig,
    class: LeakClass,
) -> Result<Trace> {
    let params = params.clone().with_leak(class, calibration)?;
    run_cycles(&params, config, class)
}

/// Mean cap-side pressure and mean piston speed while the valve extends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtensionSummary {
    pub mean_p1: f64,
    pub mean_speed: f64,
}

pub fn extension_summary(trace: &Trace) -> Result<ExtensionSummary> {
    let n = trace.len();
    let mut p_sum = 0.0;
    let mut p_count = 0usize;
    let mut v_sum = 0.0;
    let mut v_count = 0usize;
    for i in 0..n {
        if trace.u[i] > 0 {
            p_sum += trace.p1[i];
            p_count += 1;
            if i + 1 < n && trace.u[i + 1] > 0 {
                let dt = trace.sample_times[i + 1] - trace.sample_times[i];
                v_sum += (trace.x[i + 1] - trace.x[i]) / dt;
                v_count += 1;
            }
        }
    }
    if p_count == 0 || v_count == 0 {
        return Err(Error::Degenerate("trace has no extension phase".into()));
    }
    Ok(ExtensionSummary {
        mean_p1: p_sum / p_count as f64,
        mean_speed: v_sum / v_count as f64,
    })
}
