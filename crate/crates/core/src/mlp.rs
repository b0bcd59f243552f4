//! Feed-forward networks over a flat parameter vector.
//!
//! Parameter layout is layer-major: layer 0 weights (an `in x out` matrix,
//! row-major), layer 0 biases, layer 1 weights, and so on. A batch of inputs
//! is an `r x in` matrix and maps to an `r x out` matrix.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{softmax_in_place, Graph, NodeId};
use crate::tensor::{matmul_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OutputHead {
    /// Raw outputs.
    Linear,
    /// Row-wise `softmax(logits / temperature)`.
    Softmax { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub activation: Activation,
    pub head: OutputHead,
}

impl MlpArch {
    pub fn new(input: usize, hidden: &[usize], output: usize, head: OutputHead) -> Self {
        Self { input, hidden: hidden.to_vec(), output, activation: Activation::Relu, head }
    }

    /// `(fan_in, fan_out)` of every layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("degenerate architecture {self:?}")));
        }
        if let OutputHead::Softmax { temperature } = self.head {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::InvalidArgument(format!("softmax temperature {temperature}")));
            }
        }
        Ok(())
    }

    fn check_params(&self, len: usize) -> Result<()> {
        let expected = self.param_count();
        if len != expected {
            return Err(shape_err(format!(
                "architecture {:?} -> {:?} -> {} needs {expected} parameters, got {len}",
                self.input, self.hidden, self.output
            )));
        }
        Ok(())
    }
}

/// Records the forward pass of `arch` on the graph. `params` is a flat node
/// of `arch.param_count()` entries; `input` is an `r x arch.input` matrix.
pub fn forward_mlp_graph(g: &mut Graph, params: NodeId, arch: &MlpArch, input: NodeId) -> Result<NodeId> {
    arch.check_params(g.value(params).len())?;
    let (_, cols) = g.value(input).as_matrix_dims()?;
    if cols != arch.input {
        return Err(shape_err(format!("input width {cols}, architecture expects {}", arch.input)));
    }
    let dims = arch.layer_dims();
    let mut offset = 0;
    let mut x = input;
    for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = g.slice(params, offset, &[fan_in, fan_out])?;
        offset += fan_in * fan_out;
        let b = g.slice(params, offset, &[fan_out])?;
        offset += fan_out;
        let z = g.matmul(x, w)?;
        x = g.add_bias(z, b)?;
        if layer + 1 < dims.len() {
            x = match arch.activation {
                Activation::Relu => g.relu(x)?,
                Activation::Tanh => g.tanh(x)?,
            };
        }
    }
    match arch.head {
        OutputHead::Linear => Ok(x),
        OutputHead::Softmax { temperature } => g.softmax_rows(x, temperature),
    }
}

/// Evaluates the network directly, without recording a graph.
pub fn forward_mlp(params: &[f64], arch: &MlpArch, input: &Tensor) -> Result<Tensor> {
    arch.check_params(params.len())?;
    let (rows, cols) = input.as_matrix_dims()?;
    if cols != arch.input {
        return Err(shape_err(format!("input width {cols}, architecture expects {}", arch.input)));
    }
    let out = forward_rows(params, arch, input.data(), rows);
    let shape = if input.shape().len() <= 1 { vec![arch.output] } else { vec![rows, arch.output] };
    let t = Tensor::from_parts_unchecked(shape, out);
    if !t.all_finite() {
        return Err(Error::NonFinite("mlp output".into()));
    }
    Ok(t)
}

/// Unchecked core of [`forward_mlp`]; `params` must already match `arch`.
pub(crate) fn forward_rows(params: &[f64], arch: &MlpArch, input: &[f64], rows: usize) -> Vec<f64> {
    let dims = arch.layer_dims();
    let mut offset = 0;
    let mut x = input.to_vec();
    for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = &params[offset..offset + fan_in * fan_out];
        offset += fan_in * fan_out;
        let b = &params[offset..offset + fan_out];
        offset += fan_out;
        let mut z = vec![0.0; rows * fan_out];
        matmul_into(&x, w, &mut z, rows, fan_in, fan_out);
        let last = layer + 1 == dims.len();
        for row in z.chunks_mut(fan_out) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
                if !last {
                    *v = match arch.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                    };
                }
            }
        }
        x = z;
    }
    if let OutputHead::Softmax { temperature } = arch.head {
        for row in x.chunks_mut(arch.output) {
            softmax_in_place(row, temperature);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_by_layers() {
        let arch = MlpArch::new(4, &[30], 2, OutputHead::Softmax { temperature: 3.0 });
        assert_eq!(arch.param_count(), 4 * 30 + 30 + 30 * 2 + 2);
        assert_eq!(MlpArch::new(4, &[], 2, OutputHead::Linear).param_count(), 10);
    }

    #[test]
    fn zero_params_softmax_is_uniform() {
        let arch = MlpArch::new(3, &[5], 4, OutputHead::Softmax { temperature: 3.0 });
        let input = Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 5.0, 0.1, -0.2]).unwrap();
        let out = forward_mlp(&vec![0.0; arch.param_count()], &arch, &input).unwrap();
        assert!(out.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let arch = MlpArch::new(3, &[], 3, OutputHead::Linear);
        let mut params = Tensor::identity(3).into_data();
        params.extend([0.0; 3]);
        let x = Tensor::row(vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(forward_mlp(&params, &arch, &x).unwrap().data(), x.data());
    }

    #[test]
    fn wrong_param_count_and_width_error() {
        let arch = MlpArch::new(2, &[], 1, OutputHead::Linear);
        let x = Tensor::row(vec![1.0, 2.0]).unwrap();
        assert!(matches!(forward_mlp(&[0.0; 2], &arch, &x), Err(Error::Shape(_))));
        let wide = Tensor::row(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(forward_mlp(&[0.0; 3], &arch, &wide), Err(Error::Shape(_))));
    }
}
