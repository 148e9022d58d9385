//! Paired case/control single-cell expression from controlled GRN pairs.

mod dynamics;
mod grn;
mod profiles;

use serde::{Deserialize, Serialize};

use crate::data::{Condition, ExpressionMatrix, TfList};
use crate::error::Result;
use crate::rng::RngSeed;

pub use dynamics::{
    apply_dropout, dropout_probabilities, noiseless_steady_state, simulate_expression, SimParams, DEFAULT_DROPOUT_SHAPE,
};
pub use grn::{random_grn, subsample_grn_pair, DgrnTruth, Edge, Grn, RandomGrnSpec};
pub use profiles::{generate_mr_profiles, ConfoundingMode, MrProfileSet, HIGH_CONFOUNDING_CELL_TYPES};

/// Everything needed to regenerate one benchmark dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSpec {
    pub reference: RandomGrnSpec,
    pub shared_fraction: f64,
    pub confounding: ConfoundingMode,
    pub sim: SimParams,
    pub dropout: f64,
    pub dropout_shape: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            reference: RandomGrnSpec::default(),
            shared_fraction: 0.8,
            confounding: ConfoundingMode::low(),
            sim: SimParams::default(),
            dropout: 0.0,
            dropout_shape: DEFAULT_DROPOUT_SHAPE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub reference: Grn,
    pub grn_case: Grn,
    pub grn_control: Grn,
    pub truth: DgrnTruth,
    pub profiles_case: MrProfileSet,
    pub profiles_control: MrProfileSet,
    pub case: ExpressionMatrix,
    pub control: ExpressionMatrix,
    /// Every gene with an outgoing edge in the reference network.
    pub tfs: TfList,
}

impl SimulatedDataset {
    /// The same network pair and clean expression with a different dropout level.
    pub fn with_dropout(&self, level: f64, shape: f64, seed: RngSeed) -> Result<SimulatedDataset> {
        let mut out = self.clone();
        out.case = apply_dropout(&self.case, level, shape, seed.derive("dropout/case"))?;
        out.control = apply_dropout(&self.control, level, shape, seed.derive("dropout/control"))?;
        Ok(out)
    }
}

pub fn simulate_dataset(spec: &SimulationSpec, seed: RngSeed) -> Result<SimulatedDataset> {
    let reference = random_grn(&spec.reference, seed.derive("reference"))?;
    let (grn_case, grn_control, truth) =
        subsample_grn_pair(&reference, spec.shared_fraction, seed.derive("subsample"))?;
    let (profiles_case, profiles_control) =
        generate_mr_profiles(&spec.confounding, &reference, seed.derive("profiles"))?;
    let case = simulate_expression(
        &grn_case,
        &profiles_case,
        &spec.sim,
        Condition::Case,
        seed.derive("cells/case"),
    )?;
    let control = simulate_expression(
        &grn_control,
        &profiles_control,
        &spec.sim,
        Condition::Control,
        seed.derive("cells/control"),
    )?;
    let tfs = TfList::new(reference.regulators())?;
    let clean = SimulatedDataset {
        reference,
        grn_case,
        grn_control,
        truth,
        profiles_case,
        profiles_control,
        case,
        control,
        tfs,
    };
    if spec.dropout > 0.0 {
        clean.with_dropout(spec.dropout, spec.dropout_shape, seed)
    } else {
        Ok(clean)
    }
}
