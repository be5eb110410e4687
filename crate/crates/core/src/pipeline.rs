//! End-to-end stimulus generation from a single configuration record.

use serde::{Deserialize, Serialize};

use crate::capricep::TspDesign;
use crate::error::{Error, Result};
use crate::modgen::{design_window_with, make_modulation, ModulationParams};
use crate::orthoseq::{build_orthogonal_set_with, MixSignal, OrthogonalSet, SetDescriptor, SetParams};
use crate::stimsynth::{synthesize, CarrierSpec, PhaseMode, TestStimulus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimulusConfig {
    pub rate: f64,
    pub total_duration: f64,
    pub t_r: usize,
    pub nominal_duration: f64,
    pub seeds: [u64; 3],
    pub tsp: TspDesign,
    pub modulation: ModulationParams,
    pub carrier: CarrierSpec,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        let set = SetParams::default();
        Self {
            rate: set.rate,
            total_duration: set.total_duration,
            t_r: set.t_r,
            nominal_duration: set.nominal_duration,
            seeds: set.seeds,
            tsp: set.design,
            modulation: ModulationParams::default(),
            carrier: CarrierSpec::harmonic_complex(130.0, (1..=20).collect(), PhaseMode::Sine),
        }
    }
}

impl StimulusConfig {
    pub fn set_params(&self) -> SetParams {
        SetParams {
            seeds: self.seeds,
            t_r: self.t_r,
            total_duration: self.total_duration,
            rate: self.rate,
            nominal_duration: self.nominal_duration,
            design: self.tsp,
        }
    }

    /// Configuration that rebuilds the set described by `desc`.
    pub fn with_set(mut self, desc: &SetDescriptor) -> Self {
        self.seeds = desc.seeds;
        self.t_r = desc.t_r;
        self.total_duration = desc.total_duration;
        self.rate = desc.rate;
        self.nominal_duration = desc.nominal_duration;
        self.tsp = desc.design;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStimulus {
    pub stimulus: TestStimulus,
    pub set: OrthogonalSet,
    pub mix: MixSignal,
}

pub fn generate_stimulus(config: &StimulusConfig) -> Result<GeneratedStimulus> {
    let (set, mix) = build_orthogonal_set_with(&config.set_params())?;
    let window_length = config.modulation.window_length_for(config.t_r);
    let window = design_window_with(config.modulation.coefficients, window_length)?;
    let modulation = make_modulation(&mix, &window, config.modulation.target_sd)?;
    let mut stimulus = synthesize(&modulation, &config.carrier, config.rate)?;
    stimulus.set_metadata = Some(set.descriptor(config.tsp));
    Ok(GeneratedStimulus { stimulus, set, mix })
}

/// Rebuilds the orthogonal set a stimulus was generated from.
pub fn rebuild_set(stimulus: &TestStimulus) -> Result<OrthogonalSet> {
    let desc = stimulus
        .set_metadata
        .as_ref()
        .ok_or_else(|| Error::param("stimulus carries no orthogonal-set metadata"))?;
    let params = SetParams {
        seeds: desc.seeds,
        t_r: desc.t_r,
        total_duration: desc.total_duration,
        rate: desc.rate,
        nominal_duration: desc.nominal_duration,
        design: desc.design,
    };
    Ok(build_orthogonal_set_with(&params)?.0)
}
