//! Gated recurrent encoders, one per view.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default stack depth.
pub const DEFAULT_LAYERS: usize = 2;
/// Sequences are cut to their most recent `DEFAULT_MAX_LEN` positions.
pub const DEFAULT_MAX_LEN: usize = 50;

/// One recurrent layer. Input weights are `d_h x d_in`, recurrent weights
/// `d_h x d_h`, biases `d_h x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer<T = Matrix> {
    pub w_z: T,
    pub u_z: T,
    pub b_z: T,
    pub w_r: T,
    pub u_r: T,
    pub b_r: T,
    pub w_h: T,
    pub u_h: T,
    pub b_h: T,
}

pub const GRU_TENSOR_NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

impl<T> GruLayer<T> {
    pub fn tensors(&self) -> [&T; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut T; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GruLayer<U> {
        GruLayer {
            w_z: f(&self.w_z),
            u_z: f(&self.u_z),
            b_z: f(&self.b_z),
            w_r: f(&self.w_r),
            u_r: f(&self.u_r),
            b_r: f(&self.b_r),
            w_h: f(&self.w_h),
            u_h: f(&self.u_h),
            b_h: f(&self.b_h),
        }
    }
}

impl GruLayer {
    /// Weights uniform in `[-1/sqrt(d_h), 1/sqrt(d_h)]`, zero biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_h: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_h as f64).sqrt();
        let mut w = |cols: usize| Matrix::uniform(d_h, cols, bound, rng);
        let (w_z, u_z) = (w(d_in), w(d_h));
        let (w_r, u_r) = (w(d_in), w(d_h));
        let (w_h, u_h) = (w(d_in), w(d_h));
        GruLayer {
            w_z,
            u_z,
            b_z: Matrix::zeros(d_h, 1),
            w_r,
            u_r,
            b_r: Matrix::zeros(d_h, 1),
            w_h,
            u_h,
            b_h: Matrix::zeros(d_h, 1),
        }
    }

    /// Every tensor zero.
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        let w = Matrix::zeros(d_h, d_in);
        let u = Matrix::zeros(d_h, d_h);
        let b = Matrix::zeros(d_h, 1);
        GruLayer {
            w_z: w.clone(),
            u_z: u.clone(),
            b_z: b.clone(),
            w_r: w.clone(),
            u_r: u.clone(),
            b_r: b.clone(),
            w_h: w,
            u_h: u,
            b_h: b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.rows()
    }

    fn validate(&self) -> Result<()> {
        let (d_h, d_in) = (self.hidden_dim(), self.input_dim());
        for (name, t) in GRU_TENSOR_NAMES.iter().zip(self.tensors()) {
            let want = match name.as_bytes()[0] {
                b'w' => (d_h, d_in),
                b'u' => (d_h, d_h),
                _ => (d_h, 1),
            };
            if t.shape() != want {
                return Err(Error::Shape(format!("GRU {name} is {:?}, expected {want:?}", t.shape())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T = Matrix> {
    pub layers: Vec<GruLayer<T>>,
}

impl<T> GruParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GruParams<U> {
        GruParams {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
        }
    }
}

impl GruParams {
    /// The first layer reads `d_in` features, later layers read the previous
    /// layer's hidden state.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_h: usize, layers: usize, rng: &mut R) -> Result<Self> {
        if layers == 0 || d_in == 0 || d_h == 0 {
            return Err(Error::Config("GRU needs at least one layer and positive dimensions".into()));
        }
        Ok(GruParams {
            layers: (0..layers)
                .map(|l| GruLayer::init(if l == 0 { d_in } else { d_h }, d_h, rng))
                .collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].hidden_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("GRU has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if l > 0 && layer.input_dim() != self.layers[l - 1].hidden_dim() {
                return Err(Error::Shape(format!("GRU layer {l} input does not match layer {}", l - 1)));
            }
        }
        Ok(())
    }
}

fn affine(w: &Matrix, x: &[f64], u: &Matrix, h: &[f64], b: &Matrix) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let wx: f64 = w.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
            let uh: f64 = u.row(i).iter().zip(h).map(|(a, b)| a * b).sum();
            wx + uh + b[(i, 0)]
        })
        .collect()
}

/// One recurrence step.
pub fn gru_step(h_prev: &[f64], x: &[f64], layer: &GruLayer) -> Result<Vec<f64>> {
    if h_prev.len() != layer.hidden_dim() || x.len() != layer.input_dim() {
        return Err(Error::Shape(format!(
            "gru_step: h {} / x {} against layer {}x{}",
            h_prev.len(),
            x.len(),
            layer.hidden_dim(),
            layer.input_dim()
        )));
    }
    let z: Vec<f64> = affine(&layer.w_z, x, &layer.u_z, h_prev, &layer.b_z)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = affine(&layer.w_r, x, &layer.u_r, h_prev, &layer.b_r)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let cand = affine(&layer.w_h, x, &layer.u_h, &rh, &layer.b_h);
    Ok((0..h_prev.len())
        .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * cand[i].tanh())
        .collect())
}

/// Top-layer hidden state after every position, `d_h x N`.
pub fn encode_sequence(x_seq: &Matrix, params: &GruParams) -> Result<Matrix> {
    if x_seq.cols() == 0 {
        return Err(Error::EmptySequence);
    }
    params.validate()?;
    let mut input = x_seq.clone();
    for layer in &params.layers {
        let mut h = vec![0.0; layer.hidden_dim()];
        let mut states = Vec::with_capacity(input.cols());
        for n in 0..input.cols() {
            h = gru_step(&h, &input.col(n), layer)?;
            states.push(h.clone());
        }
        let cols: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        input = Matrix::from_columns(&cols, layer.hidden_dim())?;
    }
    Ok(input)
}

/// Final top-layer hidden state, starting from `h_0 = 0`.
pub fn encode_view(x_seq: &Matrix, params: &GruParams) -> Result<Vec<f64>> {
    let states = encode_sequence(x_seq, params)?;
    Ok(states.col(states.cols() - 1))
}

/// Differentiable [`encode_sequence`]: returns the `d_h x N` top-layer states.
pub fn gru_on_tape(tape: &mut Tape, x: Var, params: &GruParams<Var>) -> Var {
    let mut input = x;
    for layer in &params.layers {
        let n = tape.shape(input).1;
        let d_h = tape.shape(layer.u_z).0;
        let xz = tape.matmul(layer.w_z, input);
        let xz = tape.add_col_broadcast(xz, layer.b_z);
        let xr = tape.matmul(layer.w_r, input);
        let xr = tape.add_col_broadcast(xr, layer.b_r);
        let xh = tape.matmul(layer.w_h, input);
        let xh = tape.add_col_broadcast(xh, layer.b_h);
        let mut h = tape.constant(Matrix::zeros(d_h, 1));
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let cz = tape.column(xz, t);
            let uz = tape.matmul(layer.u_z, h);
            let z = tape.add(cz, uz);
            let z = tape.sigmoid(z);
            let cr = tape.column(xr, t);
            let ur = tape.matmul(layer.u_r, h);
            let r = tape.add(cr, ur);
            let r = tape.sigmoid(r);
            let rh = tape.mul(r, h);
            let ch = tape.column(xh, t);
            let uh = tape.matmul(layer.u_h, rh);
            let cand = tape.add(ch, uh);
            let cand = tape.tanh(cand);
            let delta = tape.sub(cand, h);
            let step = tape.mul(z, delta);
            h = tape.add(h, step);
            states.push(h);
        }
        input = tape.hstack(&states);
    }
    input
}
