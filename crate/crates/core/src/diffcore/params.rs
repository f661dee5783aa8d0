use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named array of a [`ParameterSet`]. Values are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ParamEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Shape as a matrix: rank-1 entries are treated as a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            more => (more[..more.len() - 1].iter().product(), more[more.len() - 1]),
        }
    }
}

/// Ordered collection of named, fixed-shape real arrays.
///
/// Names are unique and shapes never change after insertion; every
/// arithmetic helper requires the other set to have the same layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::InvalidSpec(format!("duplicate parameter name `{name}`")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension {
                what: "parameter values",
                expected,
                got: values.len(),
            });
        }
        self.entries.push(ParamEntry { name, shape, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    values: vec![0.0; e.values.len()],
                })
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn ensure_same_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Dimension {
                what: "parameter set layout",
                expected: self.num_values(),
                got: other.num_values(),
            })
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.entries.iter().flat_map(|e| e.values.iter())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// Overwrites all values from a flat vector in entry order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_values() {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected: self.num_values(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.values.len();
            e.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.ensure_same_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for e in &mut self.entries {
            for x in &mut e.values {
                *x *= alpha;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.ensure_same_layout(other)?;
        Ok(self
            .values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Copy with every name prefixed, e.g. `hi/` for checkpoint namespacing.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: format!("{prefix}{}", e.name),
                    shape: e.shape.clone(),
                    values: e.values.clone(),
                })
                .collect(),
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter_map(|e| {
                    e.name.strip_prefix(prefix).map(|rest| ParamEntry {
                        name: rest.to_string(),
                        shape: e.shape.clone(),
                        values: e.values.clone(),
                    })
                })
                .collect(),
        }
    }

    pub fn extend(&mut self, other: Self) -> Result<()> {
        for e in other.entries {
            self.insert(e.name, e.shape, e.values)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Softplus => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Softplus),
            other => Err(Error::InvalidSpec(format!("unknown activation code {other}"))),
        }
    }

    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => softplus(z),
        }
    }

    /// First derivative.
    #[inline]
    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(z),
        }
    }

    /// First and second derivatives at `z`, given `f = eval(z)`.
    #[inline]
    pub fn derivs_from(self, z: f64, f: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let d1 = 1.0 - f * f;
                (d1, -2.0 * f * d1)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
        }
    }

    /// Second derivative.
    #[inline]
    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("tanh"),
            Activation::Softplus => f.write_str("softplus"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            // piecewise-linear: the input-gradient penalty has no useful parameter gradient
            "relu" | "leaky_relu" | "hardtanh" | "abs" => Err(Error::NonSmoothActivation(s.to_string())),
            other => Err(Error::InvalidSpec(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.max(0.0) + (-z.abs()).exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dense network layout: `input -> hidden... -> output`, smooth hidden
/// activations and a linear output head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "all dimensions must be >= 1 (input {}, hidden {:?}, output {})",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        Ok(())
    }

    /// `[input, hidden..., output]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn weight_name(layer: usize) -> String {
        format!("dense{layer}.weight")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("dense{layer}.bias")
    }

    /// Recovers a spec from the weight shapes stored in `params`.
    pub fn infer(params: &ParameterSet, activation: Activation) -> Result<Self> {
        let mut dims = Vec::new();
        let mut layer = 0;
        while let Some(w) = params.get(&Self::weight_name(layer)) {
            let (fan_in, fan_out) = w.matrix_dims();
            if layer == 0 {
                dims.push(fan_in);
            } else if dims.last() != Some(&fan_in) {
                return Err(Error::InvalidSpec(format!("layer {layer} fan-in {fan_in} does not chain")));
            }
            dims.push(fan_out);
            layer += 1;
        }
        if dims.len() < 2 {
            return Err(Error::InvalidSpec("no dense layers found".into()));
        }
        Self::new(dims[0], dims[1..dims.len() - 1].to_vec(), dims[dims.len() - 1], activation)
    }
}

/// LeCun-uniform weights (`U(-sqrt(3/fan_in), sqrt(3/fan_in))`), zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = spec.layer_dims();
    let mut params = ParameterSet::new();
    for (layer, pair) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (3.0 / fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        params.insert(MlpSpec::weight_name(layer), vec![fan_in, fan_out], weights)?;
        params.insert(MlpSpec::bias_name(layer), vec![fan_out], vec![0.0; fan_out])?;
    }
    Ok(params)
}
