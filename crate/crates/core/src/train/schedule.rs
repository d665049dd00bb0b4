use std::fmt;

use crate::error::{Error, Result};

/// `lr = factor · d_model^(−1/2) · min(step^(−1/2), step · warmup^(−3/2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoamConfig {
    pub factor: f64,
    pub warmup_steps: u64,
    pub d_model: usize,
}

impl NoamConfig {
    /// Pretraining schedule of the full-size model.
    pub const PAPER_PRETRAIN: NoamConfig = NoamConfig { factor: 5.0, warmup_steps: 15_000, d_model: 512 };

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0) || self.warmup_steps == 0 || self.d_model == 0 {
            return Err(Error::Config(format!(
                "noam factor, warmup_steps and d_model must be positive (got {}, {}, {})",
                self.factor, self.warmup_steps, self.d_model
            )));
        }
        Ok(())
    }

    /// Value at `step = warmup_steps`, the global maximum.
    pub fn peak(&self) -> f64 {
        self.factor / (self.d_model as f64).sqrt() / (self.warmup_steps as f64).sqrt()
    }
}

pub fn noam_lr(cfg: &NoamConfig, step: u64) -> Result<f64> {
    cfg.validate()?;
    if step == 0 {
        return Err(Error::Precondition("noam schedule is defined for step >= 1".into()));
    }
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok(cfg.factor * (cfg.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

/// Linear warmup from 0, constant hold, then decay.
///
/// With `final_ratio = Some(λ)` the decay is exponential and reaches
/// `λ · peak` at `total_steps`; with `None` it is linear down to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriStageConfig {
    pub warmup_steps: u64,
    pub hold_steps: u64,
    pub total_steps: u64,
    pub peak_lr: f64,
    pub final_ratio: Option<f64>,
}

impl TriStageConfig {
    /// Finetuning schedule of the full-size masked models: 4k warmup, 16k
    /// hold, exponential decay to 5% at 40k.
    pub fn paper_finetune(peak_lr: f64) -> Self {
        Self { warmup_steps: 4_000, hold_steps: 16_000, total_steps: 40_000, peak_lr, final_ratio: Some(0.05) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps + self.hold_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps + hold_steps ({}) exceeds total_steps ({})",
                self.warmup_steps + self.hold_steps,
                self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config(format!("peak_lr must be positive, got {}", self.peak_lr)));
        }
        if let Some(l) = self.final_ratio {
            if !(l > 0.0 && l <= 1.0) {
                return Err(Error::Config(format!("final_ratio must lie in (0, 1], got {l}")));
            }
        }
        Ok(())
    }
}

pub fn tristage_lr(cfg: &TriStageConfig, step: u64) -> Result<f64> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::Precondition(format!("step {step} is beyond total_steps {}", cfg.total_steps)));
    }
    let peak = cfg.peak_lr;
    if step < cfg.warmup_steps {
        return Ok(peak * step as f64 / cfg.warmup_steps as f64);
    }
    let decay_start = cfg.warmup_steps + cfg.hold_steps;
    if step <= decay_start {
        return Ok(peak);
    }
    let frac = (step - decay_start) as f64 / (cfg.total_steps - decay_start) as f64;
    Ok(match cfg.final_ratio {
        Some(l) => peak * l.powf(frac),
        None => peak * (1.0 - frac),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheduler {
    Noam(NoamConfig),
    TriStage(TriStageConfig),
}

impl Scheduler {
    pub fn lr(&self, step: u64) -> Result<f64> {
        match self {
            Scheduler::Noam(c) => noam_lr(c, step),
            Scheduler::TriStage(c) => tristage_lr(c, step),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scheduler::Noam(c) => c.validate(),
            Scheduler::TriStage(c) => c.validate(),
        }
    }

    /// Largest learning rate the schedule reaches.
    pub fn peak(&self) -> f64 {
        match self {
            Scheduler::Noam(c) => c.peak(),
            Scheduler::TriStage(c) => c.peak_lr,
        }
    }
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheduler::Noam(c) => write!(f, "noam(factor={}, warmup={}, d_model={})", c.factor, c.warmup_steps, c.d_model),
            Scheduler::TriStage(c) => write!(
                f,
                "tristage(peak={}, warmup={}, hold={}, total={}, final_ratio={})",
                c.peak_lr,
                c.warmup_steps,
                c.hold_steps,
                c.total_steps,
                c.final_ratio.map_or("linear".to_string(), |l| l.to_string())
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_examples() {
        let c = NoamConfig::PAPER_PRETRAIN;
        assert!((noam_lr(&c, 15_000).unwrap() - 1.8042e-3).abs() < 1e-7);
        assert!((noam_lr(&c, 1).unwrap() - 1.2029e-7).abs() < 1e-11);
        assert!(noam_lr(&c, 0).is_err());
        assert!((noam_lr(&c, 15_000).unwrap() / c.peak() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tristage_examples() {
        let c = TriStageConfig::paper_finetune(3e-5);
        assert!((tristage_lr(&c, 2000).unwrap() - 1.5e-5).abs() < 1e-18);
        assert_eq!(tristage_lr(&c, 10_000).unwrap(), 3e-5);
        assert!((tristage_lr(&c, 40_000).unwrap() - 1.5e-6).abs() < 1e-15);
        assert!(tristage_lr(&c, 40_001).is_err());
        let lin = TriStageConfig { final_ratio: None, ..c };
        assert_eq!(tristage_lr(&lin, 40_000).unwrap(), 0.0);
    }
}
