//! Fully connected trunk with GELU hidden activations and a linear output,
//! operating on a flat parameter slice.
//!
//! Parameter layout, layer by layer: the weight matrix `W` (fan_in × fan_out,
//! row-major) followed by the bias (fan_out), so `y = x·W + b` on row batches.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let th = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

/// Upper bound on `|gelu'|`, attained near x ≈ 2.1.
pub const GELU_LIPSCHITZ: f64 = 1.13;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpLayout {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer (the batch itself, then each hidden activation).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

impl MlpLayout {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Layout(format!("invalid layer widths {widths:?}")));
        }
        Ok(Self { widths })
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("nonempty widths")
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn offset(&self, layer: usize) -> usize {
        self.widths[..=layer]
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn weights<'a>(
        &self,
        params: &'a [f64],
        layer: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let start = self.offset(layer);
        let w = ArrayView2::from_shape((fan_in, fan_out), &params[start..start + fan_in * fan_out])
            .expect("layout");
        let b = ArrayView1::from(&params[start + fan_in * fan_out..start + (fan_in + 1) * fan_out]);
        (w, b)
    }

    fn weights_mut<'a>(
        &self,
        params: &'a mut [f64],
        layer: usize,
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
        let start = self.offset(layer);
        let (w, b) = params[start..start + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
        (
            ArrayViewMut2::from_shape((fan_in, fan_out), w).expect("layout"),
            ArrayViewMut1::from(b),
        )
    }

    /// He-normal hidden weights, `1/fan_in` variance output weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        for layer in 0..self.n_layers() {
            let fan_in = self.widths[layer] as f64;
            let gain = if layer + 1 == self.n_layers() {
                1.0
            } else {
                2.0
            };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
            let (mut w, _) = self.weights_mut(&mut params, layer);
            w.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        params
    }

    fn check(&self, params: &[f64], x: &ArrayView2<f64>) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Layout(format!(
                "{} parameters, layout needs {}",
                params.len(),
                self.param_count()
            )));
        }
        if x.ncols() != self.input_width() {
            return Err(Error::Layout(format!(
                "input width {} vs layout {}",
                x.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    fn affine(&self, params: &[f64], layer: usize, x: &ArrayView2<f64>) -> Array2<f64> {
        let (w, b) = self.weights(params, layer);
        let mut z = Array2::zeros((x.nrows(), w.ncols()));
        z.rows_mut().into_iter().for_each(|mut r| r.assign(&b));
        general_mat_mul(1.0, x, &w, 1.0, &mut z);
        z
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(params, &x)?;
        let mut a = x.to_owned();
        for layer in 0..self.n_layers() {
            let mut z = self.affine(params, layer, &a.view());
            if layer + 1 < self.n_layers() {
                z.mapv_inplace(gelu);
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, MlpCache)> {
        self.check(params, &x)?;
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.n_layers() - 1);
        for layer in 0..self.n_layers() {
            let z = self.affine(params, layer, &inputs[layer].view());
            if layer + 1 == self.n_layers() {
                return Ok((z, MlpCache { inputs, pre }));
            }
            inputs.push(z.mapv(gelu));
            pre.push(z);
        }
        unreachable!("at least one layer")
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        dy: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(Error::Layout(
                "gradient buffer does not match layout".into(),
            ));
        }
        let batch = cache.inputs[0].nrows();
        if dy.dim() != (batch, self.output_width()) {
            return Err(Error::Layout(format!(
                "output gradient {:?} vs expected ({batch}, {})",
                dy.dim(),
                self.output_width()
            )));
        }
        let mut dz = dy.to_owned();
        for layer in (0..self.n_layers()).rev() {
            let a = &cache.inputs[layer];
            {
                let (mut gw, mut gb) = self.weights_mut(grad, layer);
                general_mat_mul(1.0, &a.t(), &dz, 1.0, &mut gw);
                gb += &dz.sum_axis(Axis(0));
            }
            if layer == 0 {
                break;
            }
            let (w, _) = self.weights(params, layer);
            let mut da = dz.dot(&w.t());
            da.zip_mut_with(&cache.pre[layer - 1], |d, &z| *d *= gelu_derivative(z));
            dz = da;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_from_widths() {
        let l = MlpLayout::new(vec![3, 5, 2]).unwrap();
        assert_eq!(l.param_count(), 3 * 5 + 5 + 5 * 2 + 2);
        assert!(MlpLayout::new(vec![3]).is_err());
        assert!(MlpLayout::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for i in -60..=60 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x={x}");
            assert!(gelu_derivative(x).abs() <= GELU_LIPSCHITZ);
        }
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let l = MlpLayout::new(vec![2, 2]).unwrap();
        let params = [1.0, 2.0, 3.0, 4.0, 0.5, -0.5];
        let x = ndarray::array![[1.0, 1.0]];
        let y = l.forward(&params, x.view()).unwrap();
        assert_eq!(y, ndarray::array![[4.5, 5.5]]);
    }

    #[test]
    fn width_mismatch_is_layout_error() {
        let l = MlpLayout::new(vec![3, 4, 2]).unwrap();
        let p = vec![0.0; l.param_count()];
        assert!(matches!(
            l.forward(&p, Array2::zeros((1, 2)).view()),
            Err(Error::Layout(_))
        ));
        assert!(matches!(
            l.forward(&p[1..], Array2::zeros((1, 3)).view()),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn cached_forward_agrees_with_plain_forward() {
        let l = MlpLayout::new(vec![4, 7, 7, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = l.init_params(&mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let (y, _) = l.forward_cached(&p, x.view()).unwrap();
        assert_eq!(y, l.forward(&p, x.view()).unwrap());
    }
}
