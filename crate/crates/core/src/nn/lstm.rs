use rand::Rng;

/// One LSTM layer. Gate blocks are stacked in the order input, forget,
/// cell candidate, output; `wx` is `4h × n` and `wh` is `4h × h`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

/// Per-timestep activations kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct LstmTrace {
    pub steps: usize,
    /// Post-activation gates, `steps × 4h`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn lstm_param_count(input: usize, hidden: usize) -> usize {
    4 * hidden * (input + hidden + 1)
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            wx: vec![0.0; 4 * hidden * input],
            wh: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases except the forget gate
    /// which starts at 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        let bx = 1.0 / (input as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        p.wx.iter_mut().for_each(|w| *w = rng.gen_range(-bx..bx));
        p.wh.iter_mut().for_each(|w| *w = rng.gen_range(-bh..bh));
        p.b[hidden..2 * hidden].fill(1.0);
        p
    }

    pub fn param_count(&self) -> usize {
        self.wx.len() + self.wh.len() + self.b.len()
    }

    pub(crate) fn forward(&self, xs: &[f64], steps: usize) -> LstmTrace {
        let (n, h) = (self.input, self.hidden);
        let mut tr = LstmTrace {
            steps,
            gates: vec![0.0; steps * 4 * h],
            c: vec![0.0; steps * h],
            tanh_c: vec![0.0; steps * h],
            h: vec![0.0; steps * h],
        };
        let zero = vec![0.0; h];
        for t in 0..steps {
            let x = &xs[t * n..(t + 1) * n];
            let (h_prev, c_prev) =
                if t == 0 { (&zero[..], &zero[..]) } else { (&tr.h[(t - 1) * h..t * h], &tr.c[(t - 1) * h..t * h]) };
            let mut z = self.b.clone();
            for (r, zr) in z.iter_mut().enumerate() {
                *zr += dot(&self.wx[r * n..(r + 1) * n], x) + dot(&self.wh[r * h..(r + 1) * h], h_prev);
            }
            let mut c_new = vec![0.0; h];
            let gates = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                gates[k] = i;
                gates[h + k] = f;
                gates[2 * h + k] = g;
                gates[3 * h + k] = o;
                c_new[k] = f * c_prev[k] + i * g;
            }
            for k in 0..h {
                let tc = c_new[k].tanh();
                tr.c[t * h + k] = c_new[k];
                tr.tanh_c[t * h + k] = tc;
                tr.h[t * h + k] = gates[3 * h + k] * tc;
            }
        }
        tr
    }

    /// Backpropagation through time. `dh_out` is the loss gradient arriving
    /// at each step's hidden output (`steps × h`). Parameter gradients are
    /// accumulated into `grad`; input gradients are written to `dx` if given.
    pub(crate) fn backward(
        &self,
        xs: &[f64],
        tr: &LstmTrace,
        dh_out: &[f64],
        grad: &mut LstmParams,
        mut dx: Option<&mut [f64]>,
    ) {
        let (n, h) = (self.input, self.hidden);
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..tr.steps).rev() {
            let gates = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let dh = dh_out[t * h + k] + dh_next[k];
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let tc = tr.tanh_c[t * h + k];
                let c_prev = if t == 0 { 0.0 } else { tr.c[(t - 1) * h + k] };
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let x = &xs[t * n..(t + 1) * n];
            dh_next.fill(0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.b[r] += d;
                axpy(d, x, &mut grad.wx[r * n..(r + 1) * n]);
                if t > 0 {
                    let h_prev = &tr.h[(t - 1) * h..t * h];
                    axpy(d, h_prev, &mut grad.wh[r * h..(r + 1) * h]);
                    axpy(d, &self.wh[r * h..(r + 1) * h], &mut dh_next);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    axpy(d, &self.wx[r * n..(r + 1) * n], &mut dx[t * n..(t + 1) * n]);
                }
            }
        }
    }
}
