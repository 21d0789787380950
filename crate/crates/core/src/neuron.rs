//! The adaptive spiking neuron (ASN).
//!
//! An ASN is a spike-response-model neuron with four exponentially decaying
//! state variables:
//!
//! * the incoming synaptic current, filtered by a first-order membrane filter
//!   into the activation `S(t)`;
//! * the refractory response `Ŝ(t)`, a sum of threshold-scaled kernels that
//!   tracks the rectified activation;
//! * the adaptive threshold `ϑ(t)`, which grows multiplicatively at every
//!   spike and relaxes back to the resting threshold `ϑ₀`;
//! * the outgoing postsynaptic current, which receives a jump of height `h`
//!   per emitted spike.
//!
//! A spike is emitted when `S(t) − Ŝ(t) > ϑ(t)/2`. Every kernel is realised
//! with exponential-Euler updates, which are exact at step boundaries.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_sig;

/// Parameters of a single ASN. Time constants are in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Resting threshold ϑ₀.
    pub theta0: f64,
    /// Multiplicative adaptation m_f.
    pub m_f: f64,
    /// Threshold-decay time constant τ_γ.
    pub tau_gamma: f64,
    /// Refractory-decay time constant τ_η.
    pub tau_eta: f64,
    /// Postsynaptic-current decay time constant τ_β.
    pub tau_beta: f64,
    /// Membrane-filter time constant τ_φ.
    pub tau_phi: f64,
    /// Spike height h.
    pub h: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            theta0: 0.1,
            m_f: 0.1,
            tau_gamma: 15.0,
            tau_eta: 50.0,
            tau_beta: 50.0,
            tau_phi: 5.0,
            h: 1.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("theta0", self.theta0),
            ("m_f", self.m_f),
            ("tau_gamma", self.tau_gamma),
            ("tau_eta", self.tau_eta),
            ("tau_beta", self.tau_beta),
            ("tau_phi", self.tau_phi),
            ("h", self.h),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Sets ϑ₀ and m_f to the same value, the coupling used by all precision sweeps.
    pub fn with_precision(mut self, theta0: f64) -> Self {
        self.theta0 = theta0;
        self.m_f = theta0;
        self
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_tau_phi(mut self, tau_phi: f64) -> Self {
        self.tau_phi = tau_phi;
        self
    }
}

/// `exp(-dt/tau)`: the per-step multiplier of an exponential kernel.
///
/// `dt = 0` is accepted and yields the identity factor.
pub fn decay_factor(tau: f64, dt: f64) -> Result<f64> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Parameter(format!(
            "time constant must be > 0, got {tau}"
        )));
    }
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::Parameter(format!(
            "time step must be >= 0, got {dt}"
        )));
    }
    Ok((-dt / tau).exp())
}

/// Per-step decay factors and spike constants, precomputed for a fixed `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernels {
    pub dt: f64,
    pub psc: f64,
    pub refractory: f64,
    pub threshold: f64,
    pub membrane: f64,
    pub theta0: f64,
    pub m_f: f64,
    pub h: f64,
}

impl Kernels {
    pub fn new(params: &NeuronParams, dt: f64) -> Result<Self> {
        params.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Parameter(format!("time step must be > 0, got {dt}")));
        }
        Ok(Self {
            dt,
            psc: decay_factor(params.tau_beta, dt)?,
            refractory: decay_factor(params.tau_eta, dt)?,
            threshold: decay_factor(params.tau_gamma, dt)?,
            membrane: decay_factor(params.tau_phi, dt)?,
            theta0: params.theta0,
            m_f: params.m_f,
            h: params.h,
        })
    }
}

/// Dynamical state of one ASN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    /// Outgoing postsynaptic current I(t).
    pub psc: f64,
    /// External drive, held constant unless changed by the caller.
    pub injected: f64,
    /// Incoming synaptic current, before the membrane filter.
    pub input_current: f64,
    /// Activation S(t).
    pub activation: f64,
    /// Refractory response Ŝ(t).
    pub refractory: f64,
    /// Adaptive threshold ϑ(t).
    pub threshold: f64,
    /// Whether the last step emitted a spike.
    pub spiked: bool,
}

impl NeuronState {
    /// All state zero, threshold at ϑ₀.
    pub fn at_rest(theta0: f64) -> Self {
        Self {
            psc: 0.0,
            injected: 0.0,
            input_current: 0.0,
            activation: 0.0,
            refractory: 0.0,
            threshold: theta0,
            spiked: false,
        }
    }

    /// Advances the neuron by one step and reports whether it spiked.
    ///
    /// `input_increment` is the weighted sum of presynaptic spike heights
    /// arriving in this step.
    pub fn step(&mut self, k: &Kernels, input_increment: f64) -> Result<bool> {
        self.relax(k);
        self.input_current += input_increment;
        let drive = self.input_current + self.injected;
        self.activation = filter(self.activation, drive, k.membrane);
        let spiked = self.fire(k);
        self.check("neuron step")?;
        Ok(spiked)
    }

    /// Kernel decays of one step. The input current decays with the
    /// presynaptic PSC time constant; activation is handled by the filter.
    pub(crate) fn relax(&mut self, k: &Kernels) {
        self.psc *= k.psc;
        self.input_current *= k.psc;
        self.refractory *= k.refractory;
        self.threshold = k.theta0 + (self.threshold - k.theta0) * k.threshold;
    }

    /// Spike check against the current activation; applies the spike effects
    /// with the pre-jump threshold.
    pub(crate) fn fire(&mut self, k: &Kernels) -> bool {
        let spiked = self.activation - self.refractory > 0.5 * self.threshold;
        if spiked {
            let theta = self.threshold;
            self.refractory += theta;
            self.threshold += k.m_f * theta;
            self.psc += k.h;
        }
        self.spiked = spiked;
        spiked
    }

    pub(crate) fn check(&self, context: &'static str) -> Result<()> {
        let vars = [
            ("psc", self.psc),
            ("injected", self.injected),
            ("input_current", self.input_current),
            ("activation", self.activation),
            ("refractory", self.refractory),
            ("threshold", self.threshold),
        ];
        for (variable, value) in vars {
            if !value.is_finite() {
                return Err(Error::Numeric {
                    context,
                    variable,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// One exponential-Euler step of a unit-gain first-order low-pass filter.
#[inline]
pub(crate) fn filter(state: f64, drive: f64, decay: f64) -> f64 {
    state + (1.0 - decay) * (drive - state)
}

/// Pure form of [`NeuronState::step`].
pub fn step(
    state: NeuronState,
    params: &NeuronParams,
    input_increment: f64,
    dt: f64,
) -> Result<(NeuronState, bool)> {
    let k = Kernels::new(params, dt)?;
    let mut next = state;
    let spiked = next.step(&k, input_increment)?;
    Ok((next, spiked))
}

/// Full time series of a neuron driven by a constant injected activation.
///
/// Sample `i` is the state at the end of step `i`, at time `(i + 1)·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantTrace {
    pub dt: f64,
    pub spike_times: Vec<f64>,
    pub activation: Vec<f64>,
    pub refractory: Vec<f64>,
    pub threshold: Vec<f64>,
    pub psc: Vec<f64>,
    pub spikes: Vec<bool>,
}

impl ConstantTrace {
    pub fn len(&self) -> usize {
        self.psc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psc.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.dt
    }

    pub fn spike_count(&self) -> usize {
        self.spike_times.len()
    }

    /// Index of the first sample at or after `t` ms.
    pub fn index_at(&self, t: f64) -> usize {
        let i = (t / self.dt).round() as usize;
        i.saturating_sub(1).min(self.len())
    }

    /// Mean of the PSC over samples with time > `from` ms.
    pub fn mean_psc_after(&self, from: f64) -> f64 {
        mean(&self.psc[self.index_at(from)..])
    }

    /// Inter-spike intervals in ms.
    pub fn intervals(&self) -> Vec<f64> {
        self.spike_times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Mean of the last `n` inter-spike intervals, if at least `n` exist.
    pub fn converged_interval(&self, n: usize) -> Option<f64> {
        let isi = self.intervals();
        (n > 0 && isi.len() >= n).then(|| mean(&isi[isi.len() - n..]))
    }

    /// The postsynaptic contribution `y(t)`: the PSC passed through a
    /// unit-gain membrane filter with time constant `tau_phi`.
    pub fn contribution(&self, tau_phi: f64) -> Result<Vec<f64>> {
        let d = decay_factor(tau_phi, self.dt)?;
        let mut y = 0.0;
        Ok(self
            .psc
            .iter()
            .map(|&i| {
                y = filter(y, i, d);
                y
            })
            .collect())
    }

    /// CSV with columns `time_ms,activation,refractory,threshold,psc,spike`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_ms,activation,refractory,threshold,psc,spike")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_sig(self.time(i)),
                fmt_sig(self.activation[i]),
                fmt_sig(self.refractory[i]),
                fmt_sig(self.threshold[i]),
                fmt_sig(self.psc[i]),
                u8::from(self.spikes[i]),
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Simulates one neuron from rest under constant injected activation `s`.
pub fn simulate_constant(
    params: &NeuronParams,
    s: f64,
    duration: f64,
    dt: f64,
) -> Result<ConstantTrace> {
    let k = Kernels::new(params, dt)?;
    if !s.is_finite() {
        return Err(Error::Parameter(format!(
            "activation must be finite, got {s}"
        )));
    }
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::Parameter(format!(
            "duration must be >= 0, got {duration}"
        )));
    }
    let steps = (duration / dt).round() as usize;
    let mut trace = ConstantTrace {
        dt,
        spike_times: Vec::new(),
        activation: Vec::with_capacity(steps),
        refractory: Vec::with_capacity(steps),
        threshold: Vec::with_capacity(steps),
        psc: Vec::with_capacity(steps),
        spikes: Vec::with_capacity(steps),
    };
    let mut state = NeuronState::at_rest(params.theta0);
    state.injected = s;
    for i in 0..steps {
        let spiked = state.step(&k, 0.0)?;
        if spiked {
            trace.spike_times.push((i + 1) as f64 * dt);
        }
        trace.activation.push(state.activation);
        trace.refractory.push(state.refractory);
        trace.threshold.push(state.threshold);
        trace.psc.push(state.psc);
        trace.spikes.push(spiked);
    }
    Ok(trace)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}
