use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{gemm, Layout, Tensor};
use crate::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn record(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Relu => g.relu(v),
            Activation::Tanh => g.tanh(v),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Tensor::zeros(&[inputs, outputs]), bias: Tensor::zeros(&[outputs]) }
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        Self {
            weight: Tensor::new(vec![inputs, outputs], draw(inputs * outputs)).unwrap(),
            bias: Tensor::vector(draw(outputs)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Fully connected network: activation after every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Tape handles of an [`Mlp`]'s parameters, in [`Mlp::params`] order.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub vars: Vec<Var>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers, activation }
    }

    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape {
                    context: format!("layer {}", i + 1),
                    expected: vec![pair[0].outputs()],
                    got: vec![pair[1].inputs()],
                });
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape {
                    context: format!("layer {i} bias"),
                    expected: vec![l.outputs()],
                    got: l.bias.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Plain forward pass, no tape. `input` is `[batch, in]` or `[in]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let batch = input.rows();
        let mut cur: Vec<f64> = input.data().to_vec();
        let mut width = input.cols();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if width != layer.inputs() {
                return Err(Error::Shape {
                    context: format!("layer {i} input"),
                    expected: vec![batch, layer.inputs()],
                    got: vec![batch, width],
                });
            }
            let n = layer.outputs();
            let mut out = Vec::with_capacity(batch * n);
            for _ in 0..batch {
                out.extend_from_slice(layer.bias.data());
            }
            gemm(batch, width, n, &cur, Layout::RowMajor, layer.weight.data(), Layout::RowMajor, &mut out, 1.0);
            if i != last && self.activation != Activation::Identity {
                let act = self.activation;
                out.iter_mut().for_each(|x| *x = act.apply(*x));
            }
            cur = out;
            width = n;
        }
        Tensor::matrix(batch, width, cur)
    }

    /// Records the parameters on `g`. Trainable parameters receive gradients;
    /// frozen ones are recorded as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MlpVars {
        let vars = self
            .params()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        MlpVars { vars }
    }

    /// Forward pass on the tape using previously bound parameters.
    pub fn forward_graph(&self, g: &mut Graph, vars: &MlpVars, input: Var) -> Result<Var> {
        let mut cur = input;
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            let width = g.value(cur).cols();
            if width != self.layers[i].inputs() {
                return Err(Error::Shape {
                    context: format!("layer {i} input"),
                    expected: vec![self.layers[i].inputs()],
                    got: vec![width],
                });
            }
            cur = g.linear(cur, vars.vars[2 * i], vars.vars[2 * i + 1])?;
            if i != last {
                cur = self.activation.record(g, cur);
            }
        }
        Ok(cur)
    }

    /// Copies every parameter from `other` (same architecture).
    pub fn copy_from(&mut self, other: &Mlp) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::from_layers(vec![Linear::zeros(3, 5), Linear::zeros(5, 2)], Activation::Relu).unwrap();
        let out = mlp.forward(&Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]])).unwrap();
        assert_eq!(out.data(), &[0.0; 4]);
    }

    #[test]
    fn identity_layer() {
        let layer =
            Linear { weight: Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]), bias: Tensor::vector(vec![0.0, 0.0]) };
        let mlp = Mlp::from_layers(vec![layer], Activation::Relu).unwrap();
        let out = mlp.forward(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn two_layer_hand_evaluation() {
        // h = relu(x W1 + b1), y = h W2 + b2, evaluated by hand below.
        let l1 = Linear {
            weight: Tensor::from_rows(&[[1.0, -1.0, 0.5], [2.0, 0.0, -1.0]]),
            bias: Tensor::vector(vec![0.0, 1.0, -0.5]),
        };
        let l2 = Linear { weight: Tensor::from_rows(&[[1.0], [2.0], [-1.0]]), bias: Tensor::vector(vec![0.25]) };
        let mlp = Mlp::from_layers(vec![l1, l2], Activation::Relu).unwrap();
        // x = [1, 2]: pre = [1+4, -1+0+1, 0.5-2-0.5] = [5, 0, -2] -> relu [5, 0, 0]
        // y = 5*1 + 0 + 0 + 0.25
        // x = [-1, 1]: pre = [-1+2, 1+1, -0.5-1-0.5] = [1, 2, -2] -> [1, 2, 0]
        // y = 1 + 4 + 0.25
        let out = mlp.forward(&Tensor::from_rows(&[[1.0, 2.0], [-1.0, 1.0]])).unwrap();
        assert_eq!(out.data(), &[5.25, 5.25]);
    }

    #[test]
    fn wrong_input_width_names_layer() {
        let mut rng = rng_from_seed(0);
        let mlp = Mlp::new(&[3, 4, 1], Activation::Relu, &mut rng);
        let err = mlp.forward(&Tensor::from_rows(&[[1.0, 2.0]])).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        let bad = Mlp::from_layers(vec![Linear::zeros(3, 4), Linear::zeros(5, 1)], Activation::Relu);
        assert!(bad.unwrap_err().to_string().contains("layer 1"));
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let mut rng = rng_from_seed(4);
        let mlp = Mlp::new(&[4, 8, 8, 2], Activation::Tanh, &mut rng);
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let plain = mlp.forward(&x).unwrap();
        let mut g = Graph::new();
        let vars = mlp.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let y = mlp.forward_graph(&mut g, &vars, xv).unwrap();
        assert_eq!(g.value(y), &plain);
        // determinism
        assert_eq!(mlp.forward(&x).unwrap(), plain);
    }
}
