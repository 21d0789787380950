//! Uncertainty-gated precision switching.
//!
//! Every input is first simulated at a low-precision ϑ₀. The readout of each
//! class is accumulated over a fixed window after a waiting time `t_sa`; if
//! the accumulated lead of the winner over the runner-up does not exceed
//! `θ_A`, all neurons switch to a high-precision ϑ₀ (m_f alike, h
//! re-normalized) and the presentation continues from the current state.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::{fmt_sig, write_csv};
use crate::sim::{classify, continue_presentation, present_steps, OutputTrace, SimConfig};
use crate::spiking::SpikingNetwork;
use crate::transfer::normalized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArousalConfig {
    pub theta0_lp: f64,
    pub theta0_hp: f64,
    /// Start of accumulation after stimulus onset (ms).
    pub t_sa: f64,
    /// Accumulation window (ms).
    pub window: f64,
    /// Slope of `θ_A` (per ms).
    pub p1: f64,
    pub p2: f64,
    /// Extra presentation time for engaged inputs (ms).
    pub extension: f64,
}

impl ArousalConfig {
    /// Published settings per dataset: `iris`, `sonar`, `mnist`, `cifar10`,
    /// `cifar100`, `ilsvrc`.
    pub fn preset(name: &str) -> Result<Self> {
        let (t_sa, lp, hp, p1, p2) = match name {
            "iris" => (150.0, 0.80, 0.17, 2.1864, -342.2727),
            "sonar" => (150.0, 1.30, 0.35, 3.7591, -525.0),
            "mnist" => (200.0, 0.60, 0.12, 2.1121, -405.7576),
            "cifar10" => (250.0, 0.15, 0.05, 7.7262, -1.87e3),
            "cifar100" => (350.0, 0.10, 0.03, 7.0, -2.42e3),
            "ilsvrc" => (350.0, 0.15, 0.05, 2.5536, -895.1786),
            _ => return Err(Error::Parameter(format!("no arousal preset for `{name}`"))),
        };
        Ok(Self {
            theta0_lp: lp,
            theta0_hp: hp,
            t_sa,
            window: 50.0,
            p1,
            p2,
            extension: 200.0,
        })
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        if !(self.theta0_hp > 0.0 && self.theta0_hp < self.theta0_lp) {
            return Err(Error::Parameter(format!(
                "need 0 < theta0_hp ({}) < theta0_lp ({})",
                self.theta0_hp, self.theta0_lp
            )));
        }
        if !(self.t_sa >= 0.0 && self.window > 0.0) {
            return Err(Error::Parameter("t_sa must be >= 0 and window > 0".into()));
        }
        if self.decision_time() > duration {
            return Err(Error::Parameter(format!(
                "t_sa + window = {} exceeds the duration {duration}",
                self.decision_time()
            )));
        }
        if !(self.extension >= 0.0) {
            return Err(Error::Parameter("extension must be >= 0".into()));
        }
        Ok(())
    }

    /// Time after onset at which the decision is taken.
    pub fn decision_time(&self) -> f64 {
        self.t_sa + self.window
    }

    /// `θ_A = p1·x + p2` for a time `x` in ms after stimulus onset.
    pub fn theta_a(&self, x: f64) -> f64 {
        self.p1 * x + self.p2
    }

    /// `θ_A` at the decision time.
    pub fn threshold(&self) -> f64 {
        self.theta_a(self.decision_time())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub engaged: bool,
    /// Accumulated winner minus accumulated runner-up (activation·ms).
    pub margin: f64,
    pub theta_a: f64,
}

/// Accumulated lead of the best class over the second best within the window.
pub fn window_margin(trace: &OutputTrace, cfg: &ArousalConfig) -> Result<f64> {
    let start = (cfg.t_sa / trace.dt).round() as usize;
    let end = (cfg.decision_time() / trace.dt).round() as usize;
    if trace.len() < end {
        return Err(Error::Precondition(format!(
            "trace covers {} ms, decision needs {} ms",
            trace.len() as f64 * trace.dt,
            cfg.decision_time()
        )));
    }
    let classes = trace.scores.first().map_or(0, |s| s.len());
    if classes < 2 {
        return Err(Error::Precondition(
            "arousal needs at least two classes".into(),
        ));
    }
    let mut acc = vec![0.0; classes];
    for s in &trace.scores[start..end] {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v * trace.dt;
        }
    }
    acc.sort_by(|a, b| b.total_cmp(a));
    Ok(acc[0] - acc[1])
}

/// Engaged iff the accumulated margin does not exceed `θ_A`.
pub fn decide(trace: &OutputTrace, cfg: &ArousalConfig) -> Result<Decision> {
    let margin = window_margin(trace, cfg)?;
    let theta_a = cfg.threshold();
    Ok(Decision {
        engaged: margin <= theta_a,
        margin,
        theta_a,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArousalOutcome {
    pub decision: Decision,
    pub prediction: Option<usize>,
    pub spikes_lp: u64,
    pub spikes_hp: u64,
    /// Presentation length actually simulated (ms).
    pub duration: f64,
}

/// Full output trace of an arousal run alongside its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ArousalRun {
    pub outcome: ArousalOutcome,
    pub trace: OutputTrace,
}

/// Simulates one input with arousal. `net` is reset and reparametrized.
pub fn run_with_arousal(
    net: &mut SpikingNetwork,
    input: &[f64],
    cfg: &ArousalConfig,
    sim: &SimConfig,
) -> Result<ArousalRun> {
    sim.validate()?;
    net.set_dt(sim.dt)?;
    net.set_readout_tau_phi(sim.readout_tau_phi)?;
    let base = net.hidden_params();
    let lp = normalized(&base.with_precision(cfg.theta0_lp))?;
    let hp = normalized(&base.with_precision(cfg.theta0_hp))?;
    let duration = sim.effective_duration(&lp);
    cfg.validate(duration)?;
    net.set_params(lp)?;
    net.reset();

    let decision_steps = sim.steps_for(cfg.decision_time());
    let total_steps = sim.steps_for(duration);
    let mut trace = present_steps(net, input, decision_steps)?;
    let decision = decide(&trace, cfg)?;
    let spikes_at_decision = net.total_spikes();
    let simulated = if decision.engaged {
        net.set_params(hp)?;
        let extra = total_steps + sim.steps_for(cfg.extension) - decision_steps;
        continue_presentation(net, &mut trace, extra)?;
        (decision_steps + extra) as f64 * sim.dt
    } else {
        continue_presentation(net, &mut trace, total_steps - decision_steps)?;
        duration
    };
    // Restore the template parameters so the caller's network is reusable.
    net.set_params(base)?;
    let total = trace.total_spikes();
    let (spikes_lp, spikes_hp) = if decision.engaged {
        (spikes_at_decision, total - spikes_at_decision)
    } else {
        (total, 0)
    };
    Ok(ArousalRun {
        outcome: ArousalOutcome {
            decision,
            prediction: trace.final_prediction(),
            spikes_lp,
            spikes_hp,
            duration: simulated,
        },
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArousalReport {
    pub config: ArousalConfig,
    pub labels: Vec<usize>,
    pub outcomes: Vec<ArousalOutcome>,
    /// Fraction of inputs that engaged arousal.
    pub selectivity: f64,
    pub accuracy: f64,
    /// Spikes per neuron per second of the base presentation window.
    pub firing_rate: f64,
    pub mean_duration: f64,
    pub neurons: usize,
    pub base_duration: f64,
}

/// Runs every input of `data` with arousal.
pub fn evaluate_arousal(
    net: &SpikingNetwork,
    data: &Dataset,
    cfg: &ArousalConfig,
    sim: &SimConfig,
) -> Result<ArousalReport> {
    if data.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let outcomes: Vec<ArousalOutcome> = (0..data.len())
        .into_par_iter()
        .map_init(
            || net.clone(),
            |net, i| run_with_arousal(net, &data.features[i], cfg, sim).map(|r| r.outcome),
        )
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let lp = normalized(&net.hidden_params().with_precision(cfg.theta0_lp))?;
    let base_duration = sim.effective_duration(&lp);
    let neurons = net.num_neurons();
    let spikes: u64 = outcomes.iter().map(|o| o.spikes_lp + o.spikes_hp).sum();
    let correct = outcomes
        .iter()
        .zip(&data.labels)
        .filter(|(o, &y)| o.prediction == Some(y))
        .count();
    Ok(ArousalReport {
        config: *cfg,
        labels: data.labels.clone(),
        selectivity: outcomes.iter().filter(|o| o.decision.engaged).count() as f64 / n,
        accuracy: correct as f64 / n,
        firing_rate: spikes as f64 / (neurons as f64 * n * base_duration / 1000.0),
        mean_duration: outcomes.iter().map(|o| o.duration).sum::<f64>() / n,
        neurons,
        base_duration,
        outcomes,
    })
}

impl ArousalReport {
    /// Per-input CSV and a one-row summary CSV.
    pub fn write_csv(&self, per_input: &Path, summary: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .outcomes
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(i, (o, y))| {
                vec![
                    i.to_string(),
                    y.to_string(),
                    (o.decision.engaged as u8).to_string(),
                    fmt_sig(o.decision.margin),
                    fmt_sig(o.decision.theta_a),
                    o.spikes_lp.to_string(),
                    o.spikes_hp.to_string(),
                    o.prediction.map_or("-1".into(), |p| p.to_string()),
                    fmt_sig(o.duration),
                ]
            })
            .collect();
        write_csv(
            per_input,
            &[
                "index",
                "label",
                "engaged",
                "margin",
                "theta_a",
                "spikes_lp",
                "spikes_hp",
                "prediction",
                "duration_ms",
            ],
            &rows,
        )?;
        write_csv(
            summary,
            &[
                "selectivity",
                "accuracy",
                "firing_rate_hz",
                "mean_duration_ms",
                "samples",
                "neurons",
            ],
            &[vec![
                fmt_sig(self.selectivity),
                fmt_sig(self.accuracy),
                fmt_sig(self.firing_rate),
                fmt_sig(self.mean_duration),
                self.outcomes.len().to_string(),
                self.neurons.to_string(),
            ]],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Smallest `θ_A` at the decision time that engages every input
    /// misclassified at low precision; `None` if there are none.
    pub threshold: Option<f64>,
    /// Intercept giving that threshold with the configured slope.
    pub p2: Option<f64>,
    pub misclassified: Vec<usize>,
    pub margins: Vec<f64>,
}

/// Estimates `θ_A` from low-precision runs on `data` (normally the training set).
pub fn calibrate(
    net: &SpikingNetwork,
    data: &Dataset,
    cfg: &ArousalConfig,
    sim: &SimConfig,
) -> Result<Calibration> {
    if data.is_empty() {
        return Err(Error::Precondition("dataset is empty".into()));
    }
    let lp = normalized(&net.hidden_params().with_precision(cfg.theta0_lp))?;
    let duration = sim.effective_duration(&lp);
    cfg.validate(duration)?;
    let steps = sim.steps_for(duration);
    let runs: Vec<(f64, Option<usize>)> = (0..data.len())
        .into_par_iter()
        .map_init(
            || net.clone(),
            |n, i| {
                n.set_dt(sim.dt)?;
                n.set_readout_tau_phi(sim.readout_tau_phi)?;
                n.set_params(lp)?;
                n.reset();
                let trace = present_steps(n, &data.features[i], steps)?;
                Ok((window_margin(&trace, cfg)?, trace.final_prediction()))
            },
        )
        .collect::<Result<_>>()?;
    let misclassified: Vec<usize> = runs
        .iter()
        .zip(&data.labels)
        .enumerate()
        .filter(|(_, ((_, p), &y))| *p != Some(y))
        .map(|(i, _)| i)
        .collect();
    let threshold = misclassified
        .iter()
        .map(|&i| runs[i].0)
        .max_by(|a, b| a.total_cmp(b));
    Ok(Calibration {
        threshold,
        p2: threshold.map(|t| intercept_for(cfg, t)),
        misclassified,
        margins: runs.iter().map(|r| r.0).collect(),
    })
}

/// Smallest representable intercept whose threshold is at least `target`.
fn intercept_for(cfg: &ArousalConfig, target: f64) -> f64 {
    let x = cfg.decision_time();
    let mut p2 = target - cfg.p1 * x;
    while cfg.p1 * x + p2 < target {
        p2 = p2.next_up();
    }
    p2
}

/// Classification of the readout at every step (for dip-and-recover plots).
pub fn prediction_trace(trace: &OutputTrace) -> Vec<Option<usize>> {
    trace.scores.iter().map(|s| classify(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(scores: Vec<Vec<f64>>) -> OutputTrace {
        let n = scores.len();
        OutputTrace {
            dt: 1.0,
            scores,
            layer_spikes: vec![0],
            step_spikes: vec![0; n],
        }
    }

    #[test]
    fn iris_threshold_at_two_hundred_ms() {
        let cfg = ArousalConfig::preset("iris").unwrap();
        assert!((cfg.theta_a(200.0) - 95.0073).abs() < 1e-9);
        assert!((cfg.threshold() - 95.0073).abs() < 1e-9);
    }

    #[test]
    fn wide_margin_is_not_engaged() {
        let cfg = ArousalConfig::preset("iris").unwrap();
        let t = trace(vec![vec![10.0, 0.0, 0.0]; 200]);
        let d = decide(&t, &cfg).unwrap();
        assert_eq!(d.margin, 500.0);
        assert!(!d.engaged);
        let close = trace(vec![vec![1.0, 0.9, 0.0]; 200]);
        assert!(decide(&close, &cfg).unwrap().engaged);
    }

    #[test]
    fn short_trace_is_rejected() {
        let cfg = ArousalConfig::preset("iris").unwrap();
        let t = trace(vec![vec![1.0, 0.0]; 199]);
        assert!(matches!(decide(&t, &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ArousalConfig::preset("sonar").unwrap();
        assert!(cfg.validate(500.0).is_ok());
        assert!(cfg.validate(150.0).is_err());
        cfg.theta0_hp = 2.0;
        assert!(cfg.validate(500.0).is_err());
        assert!(ArousalConfig::preset("xor").is_err());
    }
}
