use rand::Rng;

use super::params::join;
use super::{ParamView, ParamViewMut, Parameterized, Tensor2};

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor2,
    pub b: Tensor2,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        Self { w: Tensor2::randn(input, output, std, rng), b: Tensor2::zeros(1, output) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let mut y = x.matmul(&self.w);
        y.add_row_broadcast(self.b.data());
        y
    }

    /// Returns `dx`; parameter gradients go to `grad` unless it is `None`.
    pub fn backward(&self, x: &Tensor2, dy: &Tensor2, grad: Option<&mut Linear>) -> Tensor2 {
        if let Some(g) = grad {
            x.t_matmul_acc(dy, &mut g.w);
            dy.sum_rows_into(g.b.data_mut());
        }
        dy.matmul_t(&self.w)
    }

    pub fn macs(&self, rows: usize) -> u64 {
        (rows * self.w.len()) as u64
    }
}

impl Parameterized for Linear {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView { name: join(prefix, "w"), tensor: &self.w, frozen: false });
        out.push(ParamView { name: join(prefix, "b"), tensor: &self.b, frozen: false });
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut { name: join(prefix, "w"), tensor: &mut self.w, frozen: false });
        out.push(ParamViewMut { name: join(prefix, "b"), tensor: &mut self.b, frozen: false });
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor2,
    pub beta: Tensor2,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self { gamma: Tensor2::filled(1, d, 1.0), beta: Tensor2::zeros(1, d) }
    }

    pub fn forward(&self, x: &Tensor2) -> (Tensor2, LayerNormCache) {
        let d = x.cols();
        let mut xhat = Tensor2::zeros(x.rows(), d);
        let mut y = Tensor2::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        let (g, b) = (self.gamma.data(), self.beta.data());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(r);
            for (o, v) in xr.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let xr = xhat.row(r).to_vec();
            for (c, o) in y.row_mut(r).iter_mut().enumerate() {
                *o = g[c] * xr[c] + b[c];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Tensor2, grad: Option<&mut LayerNorm>) -> Tensor2 {
        let d = dy.cols();
        let g = self.gamma.data();
        if let Some(gr) = grad {
            for r in 0..dy.rows() {
                let (dyr, xr) = (dy.row(r), cache.xhat.row(r));
                for c in 0..d {
                    gr.gamma.data_mut()[c] += dyr[c] * xr[c];
                    gr.beta.data_mut()[c] += dyr[c];
                }
            }
        }
        let mut dx = Tensor2::zeros(dy.rows(), d);
        let mut dxhat = vec![0.0; d];
        for r in 0..dy.rows() {
            let (dyr, xr) = (dy.row(r), cache.xhat.row(r));
            for c in 0..d {
                dxhat[c] = dyr[c] * g[c];
            }
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_x = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let is = cache.inv_std[r];
            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = is * (dxhat[c] - mean_dxhat - xr[c] * mean_dxhat_x);
            }
        }
        dx
    }
}

impl Parameterized for LayerNorm {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView { name: join(prefix, "gamma"), tensor: &self.gamma, frozen: false });
        out.push(ParamView { name: join(prefix, "beta"), tensor: &self.beta, frozen: false });
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut { name: join(prefix, "gamma"), tensor: &mut self.gamma, frozen: false });
        out.push(ParamViewMut { name: join(prefix, "beta"), tensor: &mut self.beta, frozen: false });
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

#[inline]
pub fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &u in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn layer_norm_output_is_standardised() {
        let ln = LayerNorm::new(4);
        let x = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (y, _) = ln.forward(&x);
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
