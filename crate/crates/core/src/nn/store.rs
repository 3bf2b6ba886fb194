use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    Uniform { bound: f64 },
    HeNormal { fan_in: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Param,
    Buffer,
}

/// Named parameters and buffers for one network.
///
/// Layers pull their tensors from the store when built. A frozen store hands
/// out detached tensors, so the resulting network passes gradients through
/// to its input without accumulating any for its own weights.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, (Var, Kind)>,
    dtype: DType,
    device: Device,
    frozen: bool,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            frozen: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// A view sharing the same variables whose tensors are detached.
    pub fn frozen(&self) -> Self {
        let mut view = self.clone();
        view.frozen = true;
        view
    }

    fn fetch(&mut self, name: &str, shape: &[usize], kind: Kind, init: Init) -> Result<Var> {
        if let Some((var, _)) = self.vars.get(name) {
            if var.dims() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, layer expects {shape:?}",
                    var.dims()
                )));
            }
            return Ok(var.clone());
        }
        if self.frozen {
            return Err(Error::Shape(format!("frozen store has no parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(v) => vec![v; n],
            Init::Uniform { bound } => {
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::HeNormal { fan_in } => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        self.vars.insert(name.to_string(), (var.clone(), kind));
        Ok(var)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let var = self.fetch(name, shape, Kind::Param, init)?;
        Ok(if self.frozen {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        })
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.fetch(name, shape, Kind::Buffer, Init::Const(value))
    }

    /// Trainable variables in name order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(_, (_, kind))| *kind == Kind::Param)
            .map(|(name, (var, _))| (name.clone(), var.clone()))
            .collect()
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.vars.get(name).map(|(v, _)| v.as_tensor().detach())
    }

    /// Overwrites a stored value in place; every holder of the tensor sees it.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let (var, _) = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Shape(format!("no stored tensor named {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "cannot set {name} of shape {:?} from {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn num_parameters(&self) -> usize {
        self.vars
            .values()
            .filter(|(_, k)| *k == Kind::Param)
            .map(|(v, _)| v.elem_count())
            .sum()
    }

    /// Bit patterns of every stored value, for exact before/after comparisons.
    pub fn fingerprint(&self) -> Result<BTreeMap<String, Vec<u64>>> {
        self.vars
            .iter()
            .map(|(name, (var, _))| {
                let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                Ok((name.clone(), values.into_iter().map(f64::to_bits).collect()))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(name, (var, _))| (name.clone(), var.as_tensor().detach()))
            .collect();
        candle_core::safetensors::save(&tensors, path.as_ref())?;
        Ok(())
    }

    /// Overwrites stored values with those in a safetensors file. Names
    /// missing from the store are created; parameters are told apart from
    /// buffers by the running-statistics suffix.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        for (name, tensor) in tensors {
            let tensor = tensor.to_dtype(self.dtype)?;
            match self.vars.get(&name) {
                Some((var, _)) => {
                    if var.dims() != tensor.dims() {
                        return Err(Error::Shape(format!(
                            "checkpoint tensor {name} has shape {:?}, expected {:?}",
                            tensor.dims(),
                            var.dims()
                        )));
                    }
                    var.set(&tensor)?;
                }
                None => {
                    let kind = if name.ends_with(".running_mean") || name.ends_with(".running_var") {
                        Kind::Buffer
                    } else {
                        Kind::Param
                    };
                    self.vars.insert(name, (Var::from_tensor(&tensor)?, kind));
                }
            }
        }
        Ok(())
    }
}
