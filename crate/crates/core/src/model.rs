//! Model kinds and a common interface over the SSM and LSTM networks.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{ConditioningTuple, SeqDims};
use crate::diffusion::VelocityModel;
use crate::error::{Error, Result};
use crate::lstm::{LstmArch, LstmBackbone, LstmConfig};
use crate::numerics::{ParamSet, RealArray, RngStream, Tape, Var};
use crate::ssm::{param_group, BackboneConfig, ParamGroup, SsmBackbone};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hydrodiffusion,
    DiffusionLstmEncdec,
    DiffusionLstmDec,
    DeterministicSsm,
    DeterministicLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Hydrodiffusion,
        ModelKind::DiffusionLstmEncdec,
        ModelKind::DiffusionLstmDec,
        ModelKind::DeterministicSsm,
        ModelKind::DeterministicLstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hydrodiffusion => "hydrodiffusion",
            ModelKind::DiffusionLstmEncdec => "diffusion_lstm_encdec",
            ModelKind::DiffusionLstmDec => "diffusion_lstm_dec",
            ModelKind::DeterministicSsm => "deterministic_ssm",
            ModelKind::DeterministicLstm => "deterministic_lstm",
        }
    }

    pub fn is_diffusion(self) -> bool {
        matches!(
            self,
            ModelKind::Hydrodiffusion | ModelKind::DiffusionLstmEncdec | ModelKind::DiffusionLstmDec
        )
    }

    pub fn uses_ssm(self) -> bool {
        matches!(self, ModelKind::Hydrodiffusion | ModelKind::DeterministicSsm)
    }

    /// SSM kinds keep the final epoch, LSTM kinds the lowest validation loss.
    pub fn keeps_best_validation(self) -> bool {
        !self.uses_ssm()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown model kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub dims: SeqDims,
    #[serde(default)]
    pub ssm: BackboneConfig,
    #[serde(default)]
    pub lstm: LstmConfig,
}

impl ModelConfig {
    /// Published sizes for each kind.
    pub fn for_kind(kind: ModelKind) -> Self {
        let mut cfg = Self {
            kind,
            dims: SeqDims::default(),
            ssm: BackboneConfig::default(),
            lstm: LstmConfig::default(),
        };
        match kind {
            ModelKind::DeterministicSsm => {
                cfg.ssm.d_model = 128;
                cfg.ssm.d_state = 128;
                cfg.ssm.dropout = 0.12;
            }
            ModelKind::DeterministicLstm => cfg.lstm.dropout = 0.4,
            _ => {}
        }
        cfg
    }
}

/// One of the denoiser networks.
#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Ssm(SsmBackbone),
    Lstm(LstmBackbone),
}

impl Network {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg.kind {
            ModelKind::Hydrodiffusion | ModelKind::DeterministicSsm => {
                Network::Ssm(SsmBackbone::new(cfg.ssm.clone(), cfg.dims)?)
            }
            ModelKind::DiffusionLstmEncdec => {
                Network::Lstm(LstmBackbone::new(LstmArch::EncoderDecoder, cfg.lstm.clone(), cfg.dims)?)
            }
            ModelKind::DiffusionLstmDec | ModelKind::DeterministicLstm => {
                Network::Lstm(LstmBackbone::new(LstmArch::DecoderOnly, cfg.lstm.clone(), cfg.dims)?)
            }
        })
    }

    pub fn dims(&self) -> &SeqDims {
        match self {
            Network::Ssm(n) => &n.dims,
            Network::Lstm(n) => &n.dims,
        }
    }

    pub fn init_params(&self, rng: &mut RngStream) -> ParamSet {
        match self {
            Network::Ssm(n) => n.init_params(rng),
            Network::Lstm(n) => n.init_params(rng),
        }
    }

    pub fn param_group(&self, name: &str) -> ParamGroup {
        match self {
            Network::Ssm(_) => param_group(name),
            Network::Lstm(_) => ParamGroup::Global,
        }
    }

    pub fn batch_input(&self, tuples: &[&ConditioningTuple], xs: &[&[f64]]) -> Result<RealArray> {
        crate::ssm::batch_input(self.dims(), tuples, xs)
    }

    /// Recorded forward pass returning `[B x horizon]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &IndexMap<String, Var>,
        inputs: RealArray,
        taus: &[f64],
        dropout: Option<&mut RngStream>,
    ) -> Result<Var> {
        match self {
            Network::Ssm(n) => Ok(n.forward(tape, vars, inputs, taus, dropout)?.output),
            Network::Lstm(n) => n.forward(tape, vars, inputs, taus, dropout),
        }
    }

    /// Eval-mode outputs for a batch.
    pub fn predict(&self, params: &ParamSet, tuples: &[&ConditioningTuple], xs: &[&[f64]], taus: &[f64]) -> Result<RealArray> {
        match self {
            Network::Ssm(n) => n.predict(params, tuples, xs, taus),
            Network::Lstm(n) => n.predict(params, tuples, xs, taus),
        }
    }

    /// Binds the network to one conditioning tuple for repeated evaluation.
    pub fn condition<'a>(&'a self, params: &'a ParamSet, c: &ConditioningTuple) -> Result<Box<dyn VelocityModel + 'a>> {
        Ok(match self {
            Network::Ssm(n) => Box::new(n.condition(params, c)?),
            Network::Lstm(n) => Box::new(n.condition(params, c)?),
        })
    }
}

/// Deterministic kinds read the network output at a zero trajectory and
/// diffusion time 0 as the streamflow estimate.
pub fn deterministic_inputs(horizon: usize) -> (Vec<f64>, f64) {
    (vec![0.0; horizon], 0.0)
}

/// A network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub network: Network,
    pub params: ParamSet,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let network = Network::build(&config)?;
        let params = network.init_params(&mut RngStream::derive(seed, &[crate::numerics::rng::label::INIT]));
        Ok(Self { config, network, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let network = Network::build(&config)?;
        let expected = network.init_params(&mut RngStream::new(0, 0));
        for (name, value) in expected.iter() {
            match params.get(name) {
                Some(v) if v.shape() == value.shape() => {}
                Some(v) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        v.shape(),
                        value.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("parameter {name} is missing"))),
            }
        }
        if params.len() != expected.len() {
            return Err(Error::Checkpoint("checkpoint holds unexpected parameters".into()));
        }
        Ok(Self { config, network, params })
    }

    /// Deterministic streamflow estimates (normalized) for Day-0..Day-7.
    pub fn predict_deterministic(&self, c: &ConditioningTuple) -> Result<Vec<f64>> {
        let (x, tau) = deterministic_inputs(self.network.dims().horizon());
        self.network.condition(&self.params, c)?.velocity(&x, tau)
    }
}
