use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{FieldConfig, FieldParams};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::trainer::OptimizerState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NRDF";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    field: FieldConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    step: u64,
}

/// Field parameters plus optional optimizer moments.
///
/// Tensor order in the file: parameters in declared order, then first
/// moments, then second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: FieldParams,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(params: FieldParams, optimizer: Option<OptimizerState>) -> Self {
        Self { params, optimizer }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            field: self.params.config().clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader { step: o.step }),
        };
        let header =
            toml::to_string(&header).map_err(|e| Error::format(format!("cannot encode checkpoint header: {e}")))?;
        let mut tensors = self.params.tensors().to_vec();
        if let Some(opt) = &self.optimizer {
            if opt.first.len() != tensors.len() || opt.second.len() != tensors.len() {
                return Err(Error::invalid("optimizer state does not mirror the parameters"));
            }
            tensors.extend(opt.first.iter().cloned());
            tensors.extend(opt.second.iter().cloned());
        }
        Ok(Container::new(CHECKPOINT_MAGIC, header, tensors).to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes, CHECKPOINT_MAGIC)?;
        let header: Header =
            toml::from_str(&c.header).map_err(|e| Error::format(format!("bad checkpoint config block: {e}")))?;
        header.field.validate()?;
        let n = header.field.param_shapes().len();
        let expected = if header.optimizer.is_some() { 3 * n } else { n };
        if c.tensors.len() != expected {
            return Err(Error::format(format!(
                "checkpoint holds {} tensors, config implies {expected}",
                c.tensors.len()
            )));
        }
        let mut tensors = c.tensors;
        let rest = tensors.split_off(n);
        let params = FieldParams::from_tensors(header.field, tensors)?;
        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let mut first = rest;
                let second = first.split_off(n);
                let state = OptimizerState {
                    step: h.step,
                    first,
                    second,
                };
                state.check_mirrors(params.tensors())?;
                Some(state)
            }
        };
        Ok(Self { params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
