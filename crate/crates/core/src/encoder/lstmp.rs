use rand::Rng;

use crate::error::{Result, SluError};
use crate::numerics::{add_row_bias, lstm_cell_forward, matmul_acc, Graph, NodeId, ParamId, Tensor2};

/// LSTM layer whose hidden output is linearly projected; the projection feeds
/// both the next layer and the recurrence.
///
/// Gates are computed on `[x_t ; r_{t-1}]` in the order
/// `[input | forget | output | candidate]`, and `r_t = (o_t ⊙ tanh c_t) · P`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmpLayer {
    /// `input_dim x 4H`
    pub w_input: Tensor2,
    /// `proj_dim x 4H`
    pub w_recurrent: Tensor2,
    /// `1 x 4H`
    pub bias: Tensor2,
    /// `H x proj_dim`
    pub projection: Tensor2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmpState {
    pub cell: Tensor2,
    pub output: Tensor2,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, r: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized buffer")
}

impl LstmpLayer {
    pub fn zeros(input_dim: usize, hidden_dim: usize, proj_dim: usize) -> Self {
        Self {
            w_input: Tensor2::zeros(input_dim, 4 * hidden_dim),
            w_recurrent: Tensor2::zeros(proj_dim, 4 * hidden_dim),
            bias: Tensor2::zeros(1, 4 * hidden_dim),
            projection: Tensor2::zeros(hidden_dim, proj_dim),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases except the forget gate at `+1`.
    pub fn random(input_dim: usize, hidden_dim: usize, proj_dim: usize, rng: &mut impl Rng) -> Self {
        let h = hidden_dim;
        let mut bias = Tensor2::zeros(1, 4 * h);
        bias.data_mut()[h..2 * h].fill(1.0);
        Self {
            w_input: uniform(rng, input_dim, 4 * h, 1.0 / (input_dim as f64).sqrt()),
            w_recurrent: uniform(rng, proj_dim, 4 * h, 1.0 / (proj_dim as f64).sqrt()),
            bias,
            projection: uniform(rng, h, proj_dim, 1.0 / (h as f64).sqrt()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn proj_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn tensors(&self) -> [&Tensor2; 4] {
        [&self.w_input, &self.w_recurrent, &self.bias, &self.projection]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor2; 4] {
        [
            &mut self.w_input,
            &mut self.w_recurrent,
            &mut self.bias,
            &mut self.projection,
        ]
    }

    pub fn initial_state(&self) -> LstmpState {
        LstmpState {
            cell: Tensor2::zeros(1, self.hidden_dim()),
            output: Tensor2::zeros(1, self.proj_dim()),
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(SluError::Dimension {
                op: "lstmp input",
                left: (1, cols),
                right: self.w_input.shape(),
            });
        }
        Ok(())
    }

    /// One time step; returns the projected output, which is also stored in `state`.
    pub fn step(&self, x: &[f64], state: &mut LstmpState) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut gx = Tensor2::zeros(1, self.bias.cols());
        matmul_acc(&Tensor2::row_vector(x), &self.w_input, &mut gx);
        add_row_bias(&mut gx, self.bias.data());
        self.step_projected(gx.data(), state);
        Ok(state.output.data().to_vec())
    }

    /// Recurrent half of a step, given the input contribution `x W + b`.
    fn step_projected(&self, gx: &[f64], state: &mut LstmpState) {
        let h = self.hidden_dim();
        let mut rec = Tensor2::zeros(1, 4 * h);
        matmul_acc(&state.output, &self.w_recurrent, &mut rec);
        let mut gates = gx.to_vec();
        for (g, r) in gates.iter_mut().zip(rec.data()) {
            *g += r;
        }
        let mut hc = vec![0.0; 2 * h];
        lstm_cell_forward(&gates, state.cell.data(), &mut hc);
        state.cell.data_mut().copy_from_slice(&hc[h..]);
        let hidden = Tensor2::row_vector(&hc[..h]);
        let mut out = Tensor2::zeros(1, self.proj_dim());
        matmul_acc(&hidden, &self.projection, &mut out);
        state.output = out;
    }

    /// Runs a whole sequence from the zero state.
    pub fn run(&self, xs: &Tensor2) -> Result<Tensor2> {
        self.check_input(xs.cols())?;
        let mut gx = Tensor2::zeros(xs.rows(), self.bias.cols());
        matmul_acc(xs, &self.w_input, &mut gx);
        add_row_bias(&mut gx, self.bias.data());
        let mut state = self.initial_state();
        let mut out = Tensor2::zeros(xs.rows(), self.proj_dim());
        for t in 0..xs.rows() {
            self.step_projected(gx.row(t), &mut state);
            out.row_mut(t).copy_from_slice(state.output.data());
        }
        Ok(out)
    }

    /// Records the sequence on `g`. With `ids == None` the weights enter the
    /// graph as constants and receive no gradient.
    pub fn run_graph(&self, g: &mut Graph, xs: NodeId, ids: Option<[ParamId; 4]>) -> Result<NodeId> {
        let (t_len, cols) = g.value(xs).shape();
        self.check_input(cols)?;
        let [w_in, w_rec, bias, proj] = g.params_or_constants(ids, self.tensors());
        let (h, p) = (self.hidden_dim(), self.proj_dim());

        let gx = g.affine(xs, w_in, bias)?;
        let mut r_prev = g.constant(Tensor2::zeros(1, p));
        let mut c_prev = g.constant(Tensor2::zeros(1, h));
        let mut outputs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let gx_t = g.row(gx, t)?;
            let rec = g.matmul(r_prev, w_rec)?;
            let gates = g.add(gx_t, rec)?;
            let hc = g.lstm_cell(gates, c_prev)?;
            let hidden = g.slice_cols(hc, 0, h)?;
            c_prev = g.slice_cols(hc, h, h)?;
            r_prev = g.matmul(hidden, proj)?;
            outputs.push(r_prev);
        }
        if outputs.is_empty() {
            return Ok(g.constant(Tensor2::zeros(0, p)));
        }
        g.concat_rows(&outputs)
    }
}
