use super::{FlatMap, NeuroError, Result, DENSE_DIM, HIDDEN_DIM, INPUT_DIM, LSTM_LAYERS, SEQ_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fully connected layer, `w` row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }
}

/// One LSTM layer. Gate blocks in `w`, `u` and `b` are ordered input,
/// forget, output, cell candidate; `w` is `4H x n_in`, `u` is `4H x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub n_in: usize,
    pub hidden: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayer {
    fn zeros(n_in: usize, hidden: usize) -> Self {
        Self {
            n_in,
            hidden,
            w: vec![0.0; 4 * hidden * n_in],
            u: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub dense_in: Dense,
    pub lstm: [LstmLayer; LSTM_LAYERS],
    pub dense_out: Dense,
}

pub(super) const TENSOR_NAMES: [&str; 13] = [
    "dense_in.w",
    "dense_in.b",
    "lstm1.w",
    "lstm1.u",
    "lstm1.b",
    "lstm2.w",
    "lstm2.u",
    "lstm2.b",
    "lstm3.w",
    "lstm3.u",
    "lstm3.b",
    "dense_out.w",
    "dense_out.b",
];

impl LstmParams {
    pub fn zeros() -> Self {
        Self {
            dense_in: Dense::zeros(INPUT_DIM, DENSE_DIM),
            lstm: [
                LstmLayer::zeros(DENSE_DIM, HIDDEN_DIM),
                LstmLayer::zeros(HIDDEN_DIM, HIDDEN_DIM),
                LstmLayer::zeros(HIDDEN_DIM, HIDDEN_DIM),
            ],
            dense_out: Dense::zeros(HIDDEN_DIM, 1),
        }
    }

    /// Uniform `±1/sqrt(fan)` initialization with forget-gate bias 1.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        let mut fill = |v: &mut [f64], bound: f64| {
            for x in v {
                *x = rng.random_range(-bound..bound);
            }
        };
        let k = 1.0 / (INPUT_DIM as f64).sqrt();
        fill(&mut p.dense_in.w, k);
        fill(&mut p.dense_in.b, k);
        for layer in &mut p.lstm {
            let k = 1.0 / (layer.hidden as f64).sqrt();
            fill(&mut layer.w, k);
            fill(&mut layer.u, k);
            fill(&mut layer.b, k);
            let h = layer.hidden;
            layer.b[h..2 * h].iter_mut().for_each(|b| *b += 1.0);
        }
        let k = 1.0 / (HIDDEN_DIM as f64).sqrt();
        fill(&mut p.dense_out.w, k);
        p
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 13] {
        let [l1, l2, l3] = &self.lstm;
        [
            (TENSOR_NAMES[0], &self.dense_in.w),
            (TENSOR_NAMES[1], &self.dense_in.b),
            (TENSOR_NAMES[2], &l1.w),
            (TENSOR_NAMES[3], &l1.u),
            (TENSOR_NAMES[4], &l1.b),
            (TENSOR_NAMES[5], &l2.w),
            (TENSOR_NAMES[6], &l2.u),
            (TENSOR_NAMES[7], &l2.b),
            (TENSOR_NAMES[8], &l3.w),
            (TENSOR_NAMES[9], &l3.u),
            (TENSOR_NAMES[10], &l3.b),
            (TENSOR_NAMES[11], &self.dense_out.w),
            (TENSOR_NAMES[12], &self.dense_out.b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 13] {
        let [l1, l2, l3] = &mut self.lstm;
        [
            (TENSOR_NAMES[0], &mut self.dense_in.w),
            (TENSOR_NAMES[1], &mut self.dense_in.b),
            (TENSOR_NAMES[2], &mut l1.w),
            (TENSOR_NAMES[3], &mut l1.u),
            (TENSOR_NAMES[4], &mut l1.b),
            (TENSOR_NAMES[5], &mut l2.w),
            (TENSOR_NAMES[6], &mut l2.u),
            (TENSOR_NAMES[7], &mut l2.b),
            (TENSOR_NAMES[8], &mut l3.w),
            (TENSOR_NAMES[9], &mut l3.u),
            (TENSOR_NAMES[10], &mut l3.b),
            (TENSOR_NAMES[11], &mut self.dense_out.w),
            (TENSOR_NAMES[12], &mut self.dense_out.b),
        ]
    }

    /// `(rows, cols)` of each tensor in [`LstmParams::tensors`] order; biases
    /// have one column.
    pub fn shapes(&self) -> [(usize, usize); 13] {
        let d = &self.dense_in;
        let o = &self.dense_out;
        let mut out = [(0, 0); 13];
        out[0] = (d.n_out, d.n_in);
        out[1] = (d.n_out, 1);
        for (i, l) in self.lstm.iter().enumerate() {
            out[2 + 3 * i] = (4 * l.hidden, l.n_in);
            out[3 + 3 * i] = (4 * l.hidden, l.hidden);
            out[4 + 3 * i] = (4 * l.hidden, 1);
        }
        out[11] = (o.n_out, o.n_in);
        out[12] = (o.n_out, 1);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Verifies the fixed architecture and that all values are finite.
    pub fn check(&self) -> Result<()> {
        let expected = Self::zeros().shapes();
        let shapes = self.shapes();
        for ((name, t), ((r, c), (er, ec))) in self.tensors().iter().zip(shapes.iter().zip(expected.iter())) {
            if (r, c) != (er, ec) || t.len() != er * ec {
                return Err(NeuroError::ShapeMismatch(format!(
                    "{name}: {}x{} with {} values, expected {er}x{ec}",
                    r,
                    c,
                    t.len()
                )));
            }
            if !t.iter().all(|v| v.is_finite()) {
                return Err(NeuroError::ShapeMismatch(format!("{name} has non-finite values")));
            }
        }
        Ok(())
    }

    /// Applies `f(param, other)` element-wise across all tensors.
    pub fn zip_apply(&mut self, other: &LstmParams, mut f: impl FnMut(&mut f64, f64)) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                f(d, *s);
            }
        }
    }

    pub fn add_assign(&mut self, other: &LstmParams) {
        self.zip_apply(other, |d, s| *d += s);
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += W x` for row-major `W` with `n_in` columns.
fn gemv_add(w: &[f64], n_in: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
        *o += dot(row, x);
    }
}

/// `dx += W^T dz`.
fn gemv_t_add(w: &[f64], n_in: usize, dz: &[f64], dx: &mut [f64]) {
    for (s, row) in dz.iter().zip(w.chunks_exact(n_in)) {
        if *s != 0.0 {
            for (d, r) in dx.iter_mut().zip(row) {
                *d += s * r;
            }
        }
    }
}

/// `dW += dz x^T`.
fn ger_add(dw: &mut [f64], n_in: usize, dz: &[f64], x: &[f64]) {
    for (s, row) in dz.iter().zip(dw.chunks_exact_mut(n_in)) {
        if *s != 0.0 {
            for (d, xv) in row.iter_mut().zip(x) {
                *d += s * xv;
            }
        }
    }
}

/// Per-step activations of one LSTM layer, stored flat by time step.
struct LayerTape {
    n_in: usize,
    hidden: usize,
    steps: usize,
    /// inputs, `T x n_in`
    x: Vec<f64>,
    /// post-activation gates, `T x 4H`
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl LayerTape {
    fn h_at(&self, t: usize) -> &[f64] {
        &self.h[t * self.hidden..(t + 1) * self.hidden]
    }
}

fn layer_forward(layer: &LstmLayer, x: Vec<f64>, steps: usize) -> LayerTape {
    let (n_in, hd) = (layer.n_in, layer.hidden);
    let mut tape = LayerTape {
        n_in,
        hidden: hd,
        steps,
        x,
        gates: vec![0.0; steps * 4 * hd],
        c: vec![0.0; steps * hd],
        tanh_c: vec![0.0; steps * hd],
        h: vec![0.0; steps * hd],
    };
    let zero = vec![0.0; hd];
    let mut z = vec![0.0; 4 * hd];
    for t in 0..steps {
        z.copy_from_slice(&layer.b);
        gemv_add(&layer.w, n_in, &tape.x[t * n_in..(t + 1) * n_in], &mut z);
        let (h_prev, c_prev) = if t == 0 {
            (zero.as_slice(), zero.as_slice())
        } else {
            (&tape.h[(t - 1) * hd..t * hd], &tape.c[(t - 1) * hd..t * hd])
        };
        gemv_add(&layer.u, hd, h_prev, &mut z);
        let mut c_new = vec![0.0; hd];
        let gates = &mut tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
        for k in 0..hd {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hd + k]);
            let o = sigmoid(z[2 * hd + k]);
            let g = z[3 * hd + k].tanh();
            gates[k] = i;
            gates[hd + k] = f;
            gates[2 * hd + k] = o;
            gates[3 * hd + k] = g;
            c_new[k] = f * c_prev[k] + i * g;
        }
        for k in 0..hd {
            let tc = c_new[k].tanh();
            tape.tanh_c[t * hd + k] = tc;
            tape.h[t * hd + k] = gates[2 * hd + k] * tc;
        }
        tape.c[t * hd..(t + 1) * hd].copy_from_slice(&c_new);
    }
    tape
}

/// Backpropagates `dh` (gradient on each step's output, `T x H`) through one
/// layer, accumulating parameter gradients and returning the gradient on the
/// layer inputs (`T x n_in`).
fn layer_backward(layer: &LstmLayer, tape: &LayerTape, dh: &[f64], grad: &mut LstmLayer) -> Vec<f64> {
    let (n_in, hd, steps) = (tape.n_in, tape.hidden, tape.steps);
    let mut dx = vec![0.0; steps * n_in];
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    let zero = vec![0.0; hd];
    for t in (0..steps).rev() {
        let gates = &tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
        let c_prev = if t == 0 {
            zero.as_slice()
        } else {
            &tape.c[(t - 1) * hd..t * hd]
        };
        for k in 0..hd {
            let (i, f, o, g) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            let tc = tape.tanh_c[t * hd + k];
            let dh_k = dh[t * hd + k] + dh_next[k];
            let dc = dh_k * o * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * g * i * (1.0 - i);
            dz[hd + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * hd + k] = dh_k * tc * o * (1.0 - o);
            dz[3 * hd + k] = dc * i * (1.0 - g * g);
            dc_next[k] = dc * f;
        }
        let x_t = &tape.x[t * n_in..(t + 1) * n_in];
        ger_add(&mut grad.w, n_in, &dz, x_t);
        for (gb, d) in grad.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        gemv_t_add(&layer.w, n_in, &dz, &mut dx[t * n_in..(t + 1) * n_in]);
        dh_next.fill(0.0);
        if t > 0 {
            ger_add(&mut grad.u, hd, &dz, tape.h_at(t - 1));
            gemv_t_add(&layer.u, hd, &dz, &mut dh_next);
        }
    }
    dx
}

struct Tape {
    inputs: Vec<f64>,
    layers: Vec<LayerTape>,
    output: f64,
}

fn check_sequence(seq: &[FlatMap]) -> Result<()> {
    if seq.len() != SEQ_LEN {
        return Err(NeuroError::ShapeMismatch(format!(
            "sequence has {} maps, expected {SEQ_LEN}",
            seq.len()
        )));
    }
    Ok(())
}

fn run(params: &LstmParams, seq: &[FlatMap]) -> Tape {
    let steps = seq.len();
    let d = &params.dense_in;
    let inputs: Vec<f64> = seq.iter().flat_map(|m| m.0).collect();
    let mut r = vec![0.0; steps * d.n_out];
    for t in 0..steps {
        let out = &mut r[t * d.n_out..(t + 1) * d.n_out];
        out.copy_from_slice(&d.b);
        gemv_add(&d.w, d.n_in, &inputs[t * d.n_in..(t + 1) * d.n_in], out);
    }
    let mut layers: Vec<LayerTape> = Vec::with_capacity(LSTM_LAYERS);
    let mut x = r;
    for layer in &params.lstm {
        let tape = layer_forward(layer, x, steps);
        x = tape.h.clone();
        layers.push(tape);
    }
    let last = layers[LSTM_LAYERS - 1].h_at(steps - 1);
    let output = params.dense_out.b[0] + dot(&params.dense_out.w, last);
    Tape { inputs, layers, output }
}

/// Steering angle (rad) for a window of `SEQ_LEN` maps. Hidden and cell
/// states start at zero; only the last step of the third layer is read out.
pub fn forward(params: &LstmParams, seq: &[FlatMap]) -> Result<f64> {
    check_sequence(seq)?;
    Ok(run(params, seq).output)
}

/// Readout applied to every step of the third layer. The last element equals
/// [`forward`]. Accepts any sequence length.
pub fn forward_sequence(params: &LstmParams, seq: &[FlatMap]) -> Vec<f64> {
    if seq.is_empty() {
        return Vec::new();
    }
    let tape = run(params, seq);
    let top = &tape.layers[LSTM_LAYERS - 1];
    (0..seq.len())
        .map(|t| params.dense_out.b[0] + dot(&params.dense_out.w, top.h_at(t)))
        .collect()
}

/// Adds the gradient of `0.5 * (forward - target)^2` to `grad` and returns the
/// prediction.
pub fn backward_accumulate(params: &LstmParams, seq: &[FlatMap], target: f64, grad: &mut LstmParams) -> Result<f64> {
    check_sequence(seq)?;
    let tape = run(params, seq);
    let steps = seq.len();
    let ds = tape.output - target;

    let top = &tape.layers[LSTM_LAYERS - 1];
    let h_last = top.h_at(steps - 1);
    for (g, h) in grad.dense_out.w.iter_mut().zip(h_last) {
        *g += ds * h;
    }
    grad.dense_out.b[0] += ds;

    let mut dh = vec![0.0; steps * top.hidden];
    for (d, w) in dh[(steps - 1) * top.hidden..].iter_mut().zip(&params.dense_out.w) {
        *d = ds * w;
    }
    for (l, tape_l) in tape.layers.iter().enumerate().rev() {
        dh = layer_backward(&params.lstm[l], tape_l, &dh, &mut grad.lstm[l]);
    }

    let d = &params.dense_in;
    for t in 0..steps {
        let dr = &dh[t * d.n_out..(t + 1) * d.n_out];
        ger_add(
            &mut grad.dense_in.w,
            d.n_in,
            dr,
            &tape.inputs[t * d.n_in..(t + 1) * d.n_in],
        );
        for (g, v) in grad.dense_in.b.iter_mut().zip(dr) {
            *g += v;
        }
    }
    Ok(tape.output)
}

/// Exact gradients of `0.5 * (forward(seq) - target)^2` by backpropagation
/// through time. Returns `(prediction, gradients)`.
pub fn backward(params: &LstmParams, seq: &[FlatMap], target: f64) -> Result<(f64, LstmParams)> {
    let mut grad = LstmParams::zeros();
    let out = backward_accumulate(params, seq, target, &mut grad)?;
    Ok((out, grad))
}
