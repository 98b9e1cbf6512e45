//! Dense row-major f64 tensors with just enough linear algebra for the network.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![x],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, x: f64) {
        self.data.iter_mut().for_each(|v| *v = x);
    }
}

/// `out = x·W + b` where `W` is `x.len() × out.len()`.
pub fn affine(x: &[f64], w: &Tensor, b: &[f64], out: &mut [f64]) {
    let n_out = out.len();
    debug_assert_eq!(w.data.len(), x.len() * n_out);
    out.copy_from_slice(b);
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let wrow = &w.data[k * n_out..(k + 1) * n_out];
        for (o, &wk) in out.iter_mut().zip(wrow) {
            *o += xk * wk;
        }
    }
}

/// `dW += xᵀ·g` (outer product accumulate).
pub fn accumulate_outer(x: &[f64], g: &[f64], dw: &mut Tensor) {
    let n_out = g.len();
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let row = &mut dw.data[k * n_out..(k + 1) * n_out];
        for (d, &gk) in row.iter_mut().zip(g) {
            *d += xk * gk;
        }
    }
}

/// `dx += W·g`, the input-gradient of [`affine`].
pub fn accumulate_input_grad(w: &Tensor, g: &[f64], dx: &mut [f64]) {
    let n_out = g.len();
    for (k, d) in dx.iter_mut().enumerate() {
        let wrow = &w.data[k * n_out..(k + 1) * n_out];
        *d += wrow.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_product() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = [0.0; 3];
        affine(&[1.0, -1.0], &w, &[0.5, 0.0, 0.0], &mut out);
        assert_eq!(out, [-2.5, -3.0, -3.0]);
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn shapes() {
        let t = Tensor::zeros(&[4, 3]);
        assert_eq!((t.rows(), t.cols(), t.len()), (4, 3, 12));
        let s = Tensor::scalar(2.0);
        assert_eq!((s.rows(), s.cols(), s.len()), (1, 1, 1));
    }
}
