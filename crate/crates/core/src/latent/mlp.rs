//! Fully-connected tanh networks over a flat parameter slice.
//!
//! Batches are row-major `rows × width` buffers. Each layer stores its
//! weights as an `out × in` row-major block followed by `out` biases.
//! Hidden layers use tanh; the output layer is linear.

use rand::Rng;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Layout {
    sizes: Vec<usize>,
}

/// Activations recorded by a forward pass, input first.
pub struct Trace {
    acts: Vec<Vec<f64>>,
    rows: usize,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output layer")
    }
}

/// `c (m×n) = beta*c + a (m×k) · b (k×n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers holding at least the extents implied by
    // (m, k, n) and the given strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Layout {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0), "invalid layer sizes {sizes:?}");
        Layout { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// (weight offset, bias offset, inputs, outputs) of layer `l`.
    fn layer(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut offset = 0;
        for i in 0..l {
            offset += self.sizes[i] * self.sizes[i + 1] + self.sizes[i + 1];
        }
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        (offset, offset + n_in * n_out, n_in, n_out)
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Glorot-uniform weights and zero biases. With `zero_output` the last
    /// layer starts at zero.
    pub fn init<R: Rng>(&self, rng: &mut R, zero_output: bool) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        for l in 0..self.num_layers() {
            if zero_output && l + 1 == self.num_layers() {
                continue;
            }
            let (w, _, n_in, n_out) = self.layer(l);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut params[w..w + n_in * n_out] {
                *p = rng.random_range(-limit..limit);
            }
        }
        params
    }

    fn layer_forward(&self, params: &[f64], l: usize, x: &[f64], rows: usize) -> Vec<f64> {
        let (w, b, n_in, n_out) = self.layer(l);
        let mut out = Vec::with_capacity(rows * n_out);
        for _ in 0..rows {
            out.extend_from_slice(&params[b..b + n_out]);
        }
        // out += x · W^T
        gemm(rows, n_in, n_out, x, n_in as isize, 1, &params[w..], 1, n_in as isize, 1.0, &mut out);
        if l + 1 < self.num_layers() {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        out
    }

    pub fn forward(&self, params: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.input_width());
        let mut act = self.layer_forward(params, 0, x, rows);
        for l in 1..self.num_layers() {
            act = self.layer_forward(params, l, &act, rows);
        }
        act
    }

    pub fn forward_trace(&self, params: &[f64], x: Vec<f64>, rows: usize) -> Trace {
        debug_assert_eq!(x.len(), rows * self.input_width());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x);
        for l in 0..self.num_layers() {
            let next = self.layer_forward(params, l, &acts[l], rows);
            acts.push(next);
        }
        Trace { acts, rows }
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input batch.
    pub fn backward(&self, params: &[f64], trace: &Trace, d_out: Vec<f64>, grad: &mut [f64]) -> Vec<f64> {
        let rows = trace.rows;
        let mut delta = d_out;
        for l in (0..self.num_layers()).rev() {
            let (w, b, n_in, n_out) = self.layer(l);
            if l + 1 < self.num_layers() {
                // tanh'(u) = 1 - tanh(u)^2
                for (d, a) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &trace.acts[l];
            // dW += delta^T · input
            gemm(
                n_out,
                rows,
                n_in,
                &delta,
                1,
                n_out as isize,
                input,
                n_in as isize,
                1,
                1.0,
                &mut grad[w..w + n_in * n_out],
            );
            for r in 0..rows {
                for (g, d) in grad[b..b + n_out].iter_mut().zip(&delta[r * n_out..(r + 1) * n_out]) {
                    *g += d;
                }
            }
            // d_input = delta · W
            let mut d_in = vec![0.0; rows * n_in];
            gemm(rows, n_out, n_in, &delta, n_out as isize, 1, &params[w..], n_in as isize, 1, 0.0, &mut d_in);
            delta = d_in;
        }
        delta
    }
}
