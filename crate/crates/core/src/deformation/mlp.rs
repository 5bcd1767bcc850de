//! Batched dense layers: a two-layer ReLU trunk feeding linear position and
//! color heads.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `outputs x inputs`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn kaiming_uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.gen_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// `x Wᵀ + b` for a batch of rows.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    fn backward(
        &self,
        x: ArrayView2<f64>,
        grad_y: ArrayView2<f64>,
        grad: &mut Dense,
    ) -> Array2<f64> {
        grad.weight += &grad_y.t().dot(&x);
        grad.bias += &grad_y.sum_axis(Axis(0));
        grad_y.dot(&self.weight)
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct MlpCache {
    input: Array2<f64>,
    hidden1: Array2<f64>,
    hidden2: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub trunk: [Dense; 2],
    pub head_mu: Dense,
    pub head_color: Dense,
}

fn relu_in_place(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

impl Mlp {
    /// Kaiming-uniform trunk, zero heads: the initial deformation is exactly zero.
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            trunk: [
                Dense::kaiming_uniform(inputs, hidden, rng),
                Dense::kaiming_uniform(hidden, hidden, rng),
            ],
            head_mu: Dense::zeros(hidden, 2),
            head_color: Dense::zeros(hidden, 3),
        }
    }

    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            trunk: [Dense::zeros(inputs, hidden), Dense::zeros(hidden, hidden)],
            head_mu: Dense::zeros(hidden, 2),
            head_color: Dense::zeros(hidden, 3),
        }
    }

    pub fn inputs(&self) -> usize {
        self.trunk[0].inputs()
    }

    pub fn hidden(&self) -> usize {
        self.trunk[0].outputs()
    }

    pub fn layers(&self) -> [&Dense; 4] {
        [&self.trunk[0], &self.trunk[1], &self.head_mu, &self.head_color]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 4] {
        let [t0, t1] = &mut self.trunk;
        [t0, t1, &mut self.head_mu, &mut self.head_color]
    }

    /// Returns `(Δμ: N x 2, Δc: N x 3)`.
    pub fn forward(&self, input: Array2<f64>) -> (Array2<f64>, Array2<f64>, MlpCache) {
        let mut hidden1 = self.trunk[0].forward(input.view());
        relu_in_place(&mut hidden1);
        let mut hidden2 = self.trunk[1].forward(hidden1.view());
        relu_in_place(&mut hidden2);
        let dmu = self.head_mu.forward(hidden2.view());
        let dcolor = self.head_color.forward(hidden2.view());
        (
            dmu,
            dcolor,
            MlpCache {
                input,
                hidden1,
                hidden2,
            },
        )
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂input`.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_mu: ArrayView2<f64>,
        grad_color: ArrayView2<f64>,
        grad: &mut Mlp,
    ) -> Array2<f64> {
        let mut g2 = self
            .head_mu
            .backward(cache.hidden2.view(), grad_mu, &mut grad.head_mu);
        g2 += &self
            .head_color
            .backward(cache.hidden2.view(), grad_color, &mut grad.head_color);
        // ReLU: the post-activation is positive exactly where the gate is open.
        ndarray::Zip::from(&mut g2)
            .and(&cache.hidden2)
            .for_each(|g, &h| if h <= 0.0 { *g = 0.0 });
        let mut g1 = self.trunk[1].backward(cache.hidden1.view(), g2.view(), &mut grad.trunk[1]);
        ndarray::Zip::from(&mut g1)
            .and(&cache.hidden1)
            .for_each(|g, &h| if h <= 0.0 { *g = 0.0 });
        self.trunk[0].backward(cache.input.view(), g1.view(), &mut grad.trunk[0])
    }
}
