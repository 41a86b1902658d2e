//! The learned solver.
//!
//! At every grid point and every Runge-Kutta stage, a shared LSTM cell reads
//! the local five-point window of the current stage solution together with
//! that point's carried hidden/cell state. A dense head maps the new hidden
//! state to a perturbation `delta_c` of the maximal-order coefficients for
//! each derivative (or face value) the equation needs. The perturbed
//! coefficients pass through the fixed order-constraint projection and are
//! then used exactly like classical stencil weights:
//!
//! * finite volumes: cell `i`'s coefficients reconstruct `u^-_{i+1/2}` and,
//!   mirrored, `u^+_{i-1/2}`; face fluxes come from the numerical flux
//! * Kuramoto-Sivashinsky: separate coefficient sets for `u_x` (applied to
//!   `u^2`), `u_xx` and `u_xxxx`
//!
//! The hidden state is threaded stage to stage and step to step.
//!
//! Every forward stage can record its intermediates in a [`StageRecord`],
//! and [`LearnedScheme::stage_backward`] is the exact adjoint of
//! [`LearnedScheme::stage_forward`]. The training module chains these into
//! backpropagation through a whole rollout.

use std::io::{BufRead, Write};

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::constraints::{build_constraint_system, face_constraint_system, ConstraintKind, OrderConstraint};
use crate::equations::{Discretization, PdeKind, PdeSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, Trajectory};
use crate::schemes::{
    fvm_rhs, max_order_face_coefficients, max_order_fdm_coefficients, SemiDiscreteRhs, DEFAULT_BLOWUP_THRESHOLD,
    STENCIL_OFFSETS,
};

const WIDTH: usize = STENCIL_OFFSETS.len();
const HALF: isize = (WIDTH / 2) as isize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub head_width: usize,
    pub head_layers: usize,
    /// Multiplies the solution window before it enters the LSTM.
    pub input_scale: f64,
    pub input_mode: InputMode,
    /// Uniform init range is `gain / sqrt(fan_in)`.
    pub init_gain: f64,
    /// Extra factor on the output layer's init range.
    pub output_gain: f64,
    /// Imposed order of accuracy `n`; clamped per derivative to what five
    /// points allow.
    pub accuracy_order: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            head_width: 32,
            head_layers: 3,
            input_scale: 1.0,
            input_mode: InputMode::Raw,
            init_gain: 1.0,
            output_gain: 0.1,
            accuracy_order: 1,
        }
    }
}

/// What the LSTM sees of the five-point window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// The solution values themselves.
    #[default]
    Raw,
    /// Values minus the centre value, so adding a constant to the solution
    /// leaves the predicted coefficients unchanged.
    Centered,
}

impl InputMode {
    pub fn name(self) -> &'static str {
        match self {
            InputMode::Raw => "raw",
            InputMode::Centered => "centered",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(InputMode::Raw),
            "centered" => Ok(InputMode::Centered),
            other => Err(Error::Parse(format!("unknown input mode {other:?}"))),
        }
    }
}

/// One learned coefficient set: its constraint and its default weights.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub constraint: OrderConstraint,
    pub c_opt: Vec<f64>,
}

/// Offsets into the flat parameter vector. Parameters are stored, in order:
/// LSTM input weights (`5 x 4h`, gate blocks i, f, g, o), LSTM recurrent
/// weights (`h x 4h`), LSTM bias (`4h`), then for each head layer its weight
/// (`in x width`) and bias, and finally the output weight (`width x 5m`) and
/// bias (`5m`). All matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub hidden: usize,
    pub head_width: usize,
    pub head_layers: usize,
    pub n_sets: usize,
    wx: usize,
    wh: usize,
    b: usize,
    head: Vec<(usize, usize, usize, usize)>,
    out_w: usize,
    out_b: usize,
    len: usize,
}

impl ParamLayout {
    pub fn new(hidden: usize, head_width: usize, head_layers: usize, n_sets: usize) -> Self {
        let g = 4 * hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let wx = take(WIDTH * g);
        let wh = take(hidden * g);
        let b = take(g);
        let mut head = Vec::with_capacity(head_layers);
        let mut fan_in = hidden;
        for _ in 0..head_layers {
            let w = take(fan_in * head_width);
            let bb = take(head_width);
            head.push((w, bb, fan_in, head_width));
            fan_in = head_width;
        }
        let out_dim = WIDTH * n_sets;
        let out_w = take(fan_in * out_dim);
        let out_b = take(out_dim);
        Self {
            hidden,
            head_width,
            head_layers,
            n_sets,
            wx,
            wh,
            b,
            head,
            out_w,
            out_b,
            len: at,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn out_dim(&self) -> usize {
        WIDTH * self.n_sets
    }

    fn head_out_fan_in(&self) -> usize {
        if self.head_layers == 0 {
            self.hidden
        } else {
            self.head_width
        }
    }

    /// Range of the output layer (weights then bias) in the flat vector.
    pub fn output_range(&self) -> std::ops::Range<usize> {
        self.out_w..self.len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    /// Fan-in scaled uniform weights, zero biases except a forget-gate bias of 1.
    pub fn init<R: rand::Rng>(layout: ParamLayout, config: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(layout);
        let l = p.layout.clone();
        let h = l.hidden;
        let mut fill = |values: &mut [f64], fan_in: usize, gain: f64| {
            let r = gain / (fan_in as f64).sqrt();
            for v in values {
                *v = if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
            }
        };
        let g = config.init_gain;
        fill(&mut p.values[l.wx..l.wh], WIDTH + h, g);
        fill(&mut p.values[l.wh..l.b], WIDTH + h, g);
        for &(w, b, fan_in, width) in &l.head {
            fill(&mut p.values[w..b], fan_in, g);
            let _ = width;
        }
        fill(&mut p.values[l.out_w..l.out_b], l.head_out_fan_in(), g * config.output_gain);
        for v in &mut p.values[l.b + h..l.b + 2 * h] {
            *v = 1.0;
        }
        p
    }

    pub fn zero_output_layer(&mut self) {
        let r = self.layout.output_range();
        self.values[r].fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn mat(&self, offset: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.values[offset..offset + rows * cols]).expect("layout")
    }

    fn vec(&self, offset: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[offset..offset + len])
    }
}

/// Per-point LSTM hidden and cell vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl LstmState {
    pub fn zeros(n_points: usize, hidden: usize) -> Self {
        Self {
            h: Array2::zeros((n_points, hidden)),
            c: Array2::zeros((n_points, hidden)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(self.c.iter()).all(|v| v.is_finite())
    }

    /// Circular shift along the grid, row `i` moves to `i + shift`.
    pub fn shifted(&self, shift: isize) -> Self {
        let roll = |a: &Array2<f64>| {
            let n = a.nrows() as isize;
            let mut out = a.clone();
            for i in 0..n {
                out.row_mut((i + shift).rem_euclid(n) as usize).assign(&a.row(i as usize));
            }
            out
        };
        Self {
            h: roll(&self.h),
            c: roll(&self.c),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from one stage evaluation.
#[derive(Clone, Debug)]
pub struct StageRecord {
    pub input: Vec<f64>,
    x: Array2<f64>,
    h_in: Array2<f64>,
    c_in: Array2<f64>,
    /// Post-activation gates `[i | f | g | o]`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
    /// `acts[0]` is the new hidden state, `acts[l + 1]` the l-th head layer.
    acts: Vec<Array2<f64>>,
    pub delta: Array2<f64>,
    pub coeffs: Array2<f64>,
}

/// Output of one stage: the semi-discrete RHS, the new state and `sum ||delta_c||^2`.
pub struct StageOutput {
    pub rhs: Vec<f64>,
    pub state: LstmState,
    pub reg: f64,
    pub record: Option<StageRecord>,
}

/// Adjoint of one stage with respect to its inputs.
pub struct StageAdjoint {
    pub input: Vec<f64>,
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

/// A learned scheme bound to one equation and one grid.
#[derive(Clone, Debug)]
pub struct LearnedScheme {
    pub spec: PdeSpec,
    pub grid: Grid,
    pub config: ModelConfig,
    pub sets: Vec<CoefficientSet>,
    pub layout: ParamLayout,
}

impl LearnedScheme {
    pub fn new(spec: &PdeSpec, grid: Grid, config: &ModelConfig) -> Result<Self> {
        spec.validate()?;
        if config.hidden == 0 || (config.head_layers > 0 && config.head_width == 0) {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        let n = config.accuracy_order.max(1);
        let sets = match spec.discretization() {
            Discretization::Fvm => vec![CoefficientSet {
                constraint: face_constraint_system(n.min(WIDTH), &STENCIL_OFFSETS)?,
                c_opt: max_order_face_coefficients(&STENCIL_OFFSETS)?.weights,
            }],
            Discretization::Fdm => [1usize, 2, 4]
                .iter()
                .map(|&d| {
                    Ok(CoefficientSet {
                        constraint: build_constraint_system(d, n.min(WIDTH - d), &STENCIL_OFFSETS)?,
                        c_opt: max_order_fdm_coefficients(d, &STENCIL_OFFSETS)?.weights,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let layout = ParamLayout::new(config.hidden, config.head_width, config.head_layers, sets.len());
        Ok(Self {
            spec: *spec,
            grid,
            config: config.clone(),
            sets,
            layout,
        })
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState::zeros(self.n_points(), self.config.hidden)
    }

    pub fn init_params<R: rand::Rng>(&self, rng: &mut R) -> ModelParams {
        ModelParams::init(self.layout.clone(), &self.config, rng)
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.layout != self.layout || params.values.len() != self.layout.len() {
            return Err(Error::shape("parameters do not match the scheme's network layout"));
        }
        Ok(())
    }

    /// Fixed maximal-order coefficients for every point (`N x 5m`).
    pub fn default_coefficients(&self) -> Array2<f64> {
        let n = self.n_points();
        let mut out = Array2::zeros((n, WIDTH * self.sets.len()));
        for mut row in out.rows_mut() {
            for (j, set) in self.sets.iter().enumerate() {
                for k in 0..WIDTH {
                    row[j * WIDTH + k] = set.c_opt[k];
                }
            }
        }
        out
    }

    fn windows(&self, v: &[f64]) -> Array2<f64> {
        let n = v.len() as isize;
        let s = self.config.input_scale;
        let centered = self.config.input_mode == InputMode::Centered;
        Array2::from_shape_fn((v.len(), WIDTH), |(i, k)| {
            let x = v[(i as isize + k as isize - HALF).rem_euclid(n) as usize];
            s * if centered { x - v[i] } else { x }
        })
    }

    /// One evaluation of the learned semi-discretisation.
    pub fn stage_forward(&self, params: &ModelParams, v: &[f64], state: &LstmState, record: bool) -> StageOutput {
        let l = &self.layout;
        let n = v.len();
        let h = l.hidden;
        let x = self.windows(v);

        let mut z = x.dot(&params.mat(l.wx, WIDTH, 4 * h));
        z += &state.h.dot(&params.mat(l.wh, h, 4 * h));
        z += &params.vec(l.b, 4 * h);
        for mut row in z.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&j) { v.tanh() } else { sigmoid(*v) };
            }
        }
        let gates = z;
        let mut c_out = Array2::zeros((n, h));
        let mut tanh_c = Array2::zeros((n, h));
        let mut h_out = Array2::zeros((n, h));
        for i in 0..n {
            let g = gates.row(i);
            for j in 0..h {
                let c = g[h + j] * state.c[[i, j]] + g[j] * g[2 * h + j];
                let t = c.tanh();
                c_out[[i, j]] = c;
                tanh_c[[i, j]] = t;
                h_out[[i, j]] = g[3 * h + j] * t;
            }
        }

        let mut acts = Vec::with_capacity(l.head_layers + 1);
        acts.push(h_out.clone());
        for &(w, b, fan_in, width) in &l.head {
            let prev = acts.last().expect("non-empty");
            let mut a = prev.dot(&params.mat(w, fan_in, width));
            a += &params.vec(b, width);
            a.mapv_inplace(f64::tanh);
            acts.push(a);
        }
        let last = acts.last().expect("non-empty");
        let mut delta = last.dot(&params.mat(l.out_w, l.head_out_fan_in(), l.out_dim()));
        delta += &params.vec(l.out_b, l.out_dim());
        let reg = delta.iter().map(|d| d * d).sum::<f64>();

        let mut coeffs = Array2::zeros((n, l.out_dim()));
        let mut c_hat = [0.0; WIDTH];
        for i in 0..n {
            for (j, set) in self.sets.iter().enumerate() {
                for k in 0..WIDTH {
                    c_hat[k] = set.c_opt[k] + delta[[i, j * WIDTH + k]];
                }
                let mut row = coeffs.row_mut(i);
                let out = row.as_slice_mut().expect("standard layout");
                set.constraint.project_into(&c_hat, &mut out[j * WIDTH..(j + 1) * WIDTH]);
            }
        }

        let rhs = assemble_rhs(&self.spec, self.grid.dx(), v, &coeffs);
        let new_state = LstmState { h: h_out, c: c_out };
        let record = record.then(|| StageRecord {
            input: v.to_vec(),
            x,
            h_in: state.h.clone(),
            c_in: state.c.clone(),
            gates,
            tanh_c,
            acts,
            delta,
            coeffs,
        });
        StageOutput {
            rhs,
            state: new_state,
            reg,
            record,
        }
    }

    /// Reverse-mode adjoint of [`Self::stage_forward`].
    ///
    /// `rhs_bar`, `h_bar` and `c_bar` are the loss gradients w.r.t. the
    /// stage's RHS and new state, `reg_bar` w.r.t. its `sum ||delta_c||^2`.
    /// Parameter gradients are accumulated into `grad`.
    pub fn stage_backward(
        &self,
        params: &ModelParams,
        rec: &StageRecord,
        rhs_bar: &[f64],
        h_bar: &Array2<f64>,
        c_bar: &Array2<f64>,
        reg_bar: f64,
        grad: &mut [f64],
    ) -> StageAdjoint {
        let l = &self.layout;
        let n = rec.input.len();
        let h = l.hidden;
        let (mut v_bar, coeff_bar) = assemble_backward(&self.spec, self.grid.dx(), &rec.input, &rec.coeffs, rhs_bar);

        // projection and regulariser
        let mut delta_bar = Array2::zeros((n, l.out_dim()));
        for i in 0..n {
            for (j, set) in self.sets.iter().enumerate() {
                let cb = coeff_bar.slice(s![i, j * WIDTH..(j + 1) * WIDTH]);
                let mut out = [0.0; WIDTH];
                set.constraint
                    .backward_into(cb.as_slice().expect("contiguous"), &mut out);
                for k in 0..WIDTH {
                    delta_bar[[i, j * WIDTH + k]] = out[k] + 2.0 * reg_bar * rec.delta[[i, j * WIDTH + k]];
                }
            }
        }

        // output layer
        let last = rec.acts.last().expect("non-empty");
        let fan = l.head_out_fan_in();
        add_into(&mut grad[l.out_w..l.out_b], &last.t().dot(&delta_bar));
        add_into(&mut grad[l.out_b..l.out_b + l.out_dim()], &delta_bar.sum_axis(Axis(0)));
        let mut a_bar = delta_bar.dot(&params.mat(l.out_w, fan, l.out_dim()).t());

        // head layers, last to first
        for (layer, &(w, b, fan_in, width)) in l.head.iter().enumerate().rev() {
            let a = &rec.acts[layer + 1];
            let mut z_bar = a_bar;
            Zip::from(&mut z_bar).and(a).for_each(|zb, &a| *zb *= 1.0 - a * a);
            let prev = &rec.acts[layer];
            add_into(&mut grad[w..b], &prev.t().dot(&z_bar));
            add_into(&mut grad[b..b + width], &z_bar.sum_axis(Axis(0)));
            a_bar = z_bar.dot(&params.mat(w, fan_in, width).t());
        }

        // LSTM cell
        let mut hout_bar = a_bar;
        hout_bar += h_bar;
        let mut z_bar = Array2::zeros((n, 4 * h));
        let mut c_in_bar = Array2::zeros((n, h));
        for i in 0..n {
            let g = rec.gates.row(i);
            for j in 0..h {
                let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let t = rec.tanh_c[[i, j]];
                let hb = hout_bar[[i, j]];
                let cb = c_bar[[i, j]] + hb * og * (1.0 - t * t);
                z_bar[[i, j]] = cb * gg * ig * (1.0 - ig);
                z_bar[[i, h + j]] = cb * rec.c_in[[i, j]] * fg * (1.0 - fg);
                z_bar[[i, 2 * h + j]] = cb * ig * (1.0 - gg * gg);
                z_bar[[i, 3 * h + j]] = hb * t * og * (1.0 - og);
                c_in_bar[[i, j]] = cb * fg;
            }
        }
        add_into(&mut grad[l.wx..l.wh], &rec.x.t().dot(&z_bar));
        add_into(&mut grad[l.wh..l.b], &rec.h_in.t().dot(&z_bar));
        add_into(&mut grad[l.b..l.b + 4 * h], &z_bar.sum_axis(Axis(0)));
        let x_bar = z_bar.dot(&params.mat(l.wx, WIDTH, 4 * h).t());
        let h_in_bar = z_bar.dot(&params.mat(l.wh, h, 4 * h).t());

        let nn = n as isize;
        let s = self.config.input_scale;
        let centered = self.config.input_mode == InputMode::Centered;
        for i in 0..n {
            for k in 0..WIDTH {
                let xb = s * x_bar[[i, k]];
                v_bar[(i as isize + k as isize - HALF).rem_euclid(nn) as usize] += xb;
                if centered {
                    v_bar[i] -= xb;
                }
            }
        }
        StageAdjoint {
            input: v_bar,
            h: h_in_bar,
            c: c_in_bar,
        }
    }

    /// `L(u)` and the updated state, the learned counterpart of a baseline RHS.
    pub fn finitenet_rhs(&self, params: &ModelParams, u: &GridField, state: &LstmState) -> Result<(GridField, LstmState)> {
        self.check_params(params)?;
        if u.grid != self.grid || state.h.nrows() != self.n_points() {
            return Err(Error::shape("field or state does not match the scheme's grid"));
        }
        let out = self.stage_forward(params, &u.values, state, false);
        Ok((GridField::new(self.grid, out.rhs)?, out.state))
    }

    /// Per-point coefficients and `sum ||delta_c||^2` for one stage.
    pub fn predict_coefficients(&self, params: &ModelParams, u: &[f64], state: &LstmState) -> (Array2<f64>, Array2<f64>, f64) {
        let out = self.stage_forward(params, u, state, true);
        let rec = out.record.expect("recorded");
        (rec.coeffs, rec.delta, out.reg)
    }

    /// One SSPRK3 step; the LSTM state flows through the three stages in order.
    pub fn step(&self, params: &ModelParams, u: &[f64], state: &LstmState, dt: f64) -> (Vec<f64>, LstmState, f64) {
        let mut reg = 0.0;
        let s0 = self.stage_forward(params, u, state, false);
        reg += s0.reg;
        let u1: Vec<f64> = u.iter().zip(&s0.rhs).map(|(u, l)| u + dt * l).collect();
        let s1 = self.stage_forward(params, &u1, &s0.state, false);
        reg += s1.reg;
        let u2: Vec<f64> = u
            .iter()
            .zip(&u1)
            .zip(&s1.rhs)
            .map(|((u, u1), l)| 0.75 * u + 0.25 * u1 + 0.25 * dt * l)
            .collect();
        let s2 = self.stage_forward(params, &u2, &s1.state, false);
        reg += s2.reg;
        let next = u
            .iter()
            .zip(&u2)
            .zip(&s2.rhs)
            .map(|((u, u2), l)| u / 3.0 + 2.0 / 3.0 * u2 + 2.0 / 3.0 * dt * l)
            .collect();
        (next, s2.state, reg)
    }

    pub fn finitenet_step(
        &self,
        params: &ModelParams,
        u: &GridField,
        state: &LstmState,
        dt: f64,
    ) -> Result<(GridField, LstmState)> {
        self.check_params(params)?;
        let (next, state, _) = self.step(params, &u.values, state, dt);
        Ok((GridField::new(self.grid, next)?, state))
    }

    /// Rolls out `n_steps` steps from a zero state, recording stages when
    /// `tape` is given. Stops early at the first frame that is non-finite or
    /// exceeds `blowup_threshold`.
    pub fn rollout_with(
        &self,
        params: &ModelParams,
        ic: &[f64],
        dt: f64,
        n_steps: usize,
        blowup_threshold: f64,
        mut tape: Option<&mut Vec<[StageRecord; 3]>>,
    ) -> RolloutOutput {
        let mut traj = Trajectory {
            grid: self.grid,
            dt,
            frames: vec![ic.to_vec()],
        };
        let mut state = self.zero_state();
        let mut u = ic.to_vec();
        let mut reg_sum = 0.0;
        let mut n_evals = 0;
        let record = tape.is_some();
        for k in 1..=n_steps {
            let s0 = self.stage_forward(params, &u, &state, record);
            let u1: Vec<f64> = u.iter().zip(&s0.rhs).map(|(u, l)| u + dt * l).collect();
            let s1 = self.stage_forward(params, &u1, &s0.state, record);
            let u2: Vec<f64> = u
                .iter()
                .zip(&u1)
                .zip(&s1.rhs)
                .map(|((u, u1), l)| 0.75 * u + 0.25 * u1 + 0.25 * dt * l)
                .collect();
            let s2 = self.stage_forward(params, &u2, &s1.state, record);
            let next: Vec<f64> = u
                .iter()
                .zip(&u2)
                .zip(&s2.rhs)
                .map(|((u, u2), l)| u / 3.0 + 2.0 / 3.0 * u2 + 2.0 / 3.0 * dt * l)
                .collect();
            if next.iter().any(|v| !v.is_finite() || v.abs() > blowup_threshold) {
                return RolloutOutput {
                    trajectory: traj,
                    reg_sum,
                    n_evals,
                    blowup: Some(k),
                };
            }
            reg_sum += s0.reg + s1.reg + s2.reg;
            n_evals += 3 * self.n_points();
            if let Some(t) = tape.as_deref_mut() {
                t.push([
                    s0.record.expect("recorded"),
                    s1.record.expect("recorded"),
                    s2.record.expect("recorded"),
                ]);
            }
            state = s2.state;
            u = next;
            traj.push(u.clone());
        }
        RolloutOutput {
            trajectory: traj,
            reg_sum,
            n_evals,
            blowup: None,
        }
    }

    /// Full rollout; a blow-up is reported as an error carrying the frame.
    pub fn rollout(&self, params: &ModelParams, ic: &GridField, dt: f64, n_steps: usize) -> Result<(Trajectory, f64)> {
        self.check_params(params)?;
        if ic.grid != self.grid {
            return Err(Error::shape("initial condition does not match the scheme's grid"));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        let out = self.rollout_with(params, &ic.values, dt, n_steps, DEFAULT_BLOWUP_THRESHOLD, None);
        match out.blowup {
            Some(frame) => Err(Error::BlowUp { frame }),
            None => Ok((out.trajectory, out.reg_sum)),
        }
    }

    /// The classical scheme the learned one reduces to when `delta_c = 0`.
    pub fn fixed_scheme(&self) -> FixedStencilRhs {
        FixedStencilRhs {
            spec: self.spec,
            dx: self.grid.dx(),
            coeffs: self.default_coefficients(),
        }
    }
}

pub struct RolloutOutput {
    pub trajectory: Trajectory,
    pub reg_sum: f64,
    /// Number of per-point coefficient predictions that entered `reg_sum`.
    pub n_evals: usize,
    pub blowup: Option<usize>,
}

fn add_into<'a>(dst: &mut [f64], src: impl IntoIterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Semi-discrete RHS from per-point coefficients.
pub fn assemble_rhs(spec: &PdeSpec, dx: f64, v: &[f64], coeffs: &Array2<f64>) -> Vec<f64> {
    let n = v.len() as isize;
    let at = |i: isize| v[i.rem_euclid(n) as usize];
    match spec.kind {
        PdeKind::Advection | PdeKind::Burgers => {
            // left state at i+1/2 and mirrored right state at i-1/2, both from cell i
            let mut left = vec![0.0; v.len()];
            let mut right = vec![0.0; v.len()];
            for i in 0..n {
                let c = coeffs.row(i as usize);
                let (mut l, mut r) = (0.0, 0.0);
                for k in 0..WIDTH as isize {
                    let ck = c[k as usize];
                    l += ck * at(i + k - HALF);
                    r += ck * at(i - k + HALF);
                }
                left[i as usize] = l;
                right[i as usize] = r;
            }
            let flux: Vec<f64> = (0..v.len())
                .map(|i| spec.face_flux(left[i], right[(i + 1) % v.len()]))
                .collect();
            fvm_rhs(&flux, dx)
        }
        PdeKind::KuramotoSivashinsky => {
            let (i1, i2, i4) = (dx.recip(), dx.powi(-2), dx.powi(-4));
            (0..n)
                .map(|i| {
                    let c = coeffs.row(i as usize);
                    let (mut d1, mut d2, mut d4) = (0.0, 0.0, 0.0);
                    for k in 0..WIDTH as isize {
                        let u = at(i + k - HALF);
                        let ku = k as usize;
                        d1 += c[ku] * u * u;
                        d2 += c[WIDTH + ku] * u;
                        d4 += c[2 * WIDTH + ku] * u;
                    }
                    -spec.viscosity * d4 * i4 - d2 * i2 - 0.5 * d1 * i1
                })
                .collect()
        }
    }
}

/// Adjoint of [`assemble_rhs`]: gradients w.r.t. the solution and coefficients.
pub fn assemble_backward(
    spec: &PdeSpec,
    dx: f64,
    v: &[f64],
    coeffs: &Array2<f64>,
    rhs_bar: &[f64],
) -> (Vec<f64>, Array2<f64>) {
    let nu = v.len();
    let n = nu as isize;
    let idx = |i: isize| i.rem_euclid(n) as usize;
    let mut v_bar = vec![0.0; nu];
    let mut c_bar = Array2::zeros(coeffs.raw_dim());
    match spec.kind {
        PdeKind::Advection | PdeKind::Burgers => {
            let mut left = vec![0.0; nu];
            let mut right = vec![0.0; nu];
            for i in 0..n {
                let c = coeffs.row(i as usize);
                for k in 0..WIDTH as isize {
                    left[i as usize] += c[k as usize] * v[idx(i + k - HALF)];
                    right[i as usize] += c[k as usize] * v[idx(i - k + HALF)];
                }
            }
            // R_i = -(F_i - F_{i-1}) / dx
            let flux_bar: Vec<f64> = (0..nu).map(|i| (rhs_bar[(i + 1) % nu] - rhs_bar[i]) / dx).collect();
            let mut left_bar = vec![0.0; nu];
            let mut right_bar = vec![0.0; nu];
            for i in 0..nu {
                let j = (i + 1) % nu;
                let (gl, gr) = spec.face_flux_grad(left[i], right[j]);
                left_bar[i] += flux_bar[i] * gl;
                right_bar[j] += flux_bar[i] * gr;
            }
            for i in 0..n {
                let iu = i as usize;
                for k in 0..WIDTH as isize {
                    let ku = k as usize;
                    let (a, b) = (idx(i + k - HALF), idx(i - k + HALF));
                    c_bar[[iu, ku]] = left_bar[iu] * v[a] + right_bar[iu] * v[b];
                    v_bar[a] += left_bar[iu] * coeffs[[iu, ku]];
                    v_bar[b] += right_bar[iu] * coeffs[[iu, ku]];
                }
            }
        }
        PdeKind::KuramotoSivashinsky => {
            let (i1, i2, i4) = (dx.recip(), dx.powi(-2), dx.powi(-4));
            for i in 0..n {
                let iu = i as usize;
                let rb = rhs_bar[iu];
                let (b1, b2, b4) = (-0.5 * rb * i1, -rb * i2, -spec.viscosity * rb * i4);
                for k in 0..WIDTH as isize {
                    let ku = k as usize;
                    let a = idx(i + k - HALF);
                    let u = v[a];
                    c_bar[[iu, ku]] = b1 * u * u;
                    c_bar[[iu, WIDTH + ku]] = b2 * u;
                    c_bar[[iu, 2 * WIDTH + ku]] = b4 * u;
                    v_bar[a] += b1 * coeffs[[iu, ku]] * 2.0 * u + b2 * coeffs[[iu, WIDTH + ku]] + b4 * coeffs[[iu, 2 * WIDTH + ku]];
                }
            }
        }
    }
    (v_bar, c_bar)
}

/// Classical scheme with fixed per-point coefficients (the maximal-order
/// linear scheme when built from [`LearnedScheme::fixed_scheme`]).
#[derive(Clone, Debug)]
pub struct FixedStencilRhs {
    pub spec: PdeSpec,
    pub dx: f64,
    pub coeffs: Array2<f64>,
}

impl SemiDiscreteRhs for FixedStencilRhs {
    fn eval(&self, u: &[f64]) -> Vec<f64> {
        assemble_rhs(&self.spec, self.dx, u, &self.coeffs)
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Trained (or initial) parameters plus the metadata needed to rebuild the scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub equation: PdeKind,
    pub model: ModelConfig,
    pub constraint_orders: Vec<(ConstraintKind, usize)>,
    pub epoch: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(scheme: &LearnedScheme, params: &ModelParams, epoch: usize) -> Self {
        Self {
            equation: scheme.spec.kind,
            model: scheme.config.clone(),
            constraint_orders: scheme
                .sets
                .iter()
                .map(|s| (s.constraint.kind, s.constraint.accuracy_order))
                .collect(),
            epoch,
            params: params.values.clone(),
        }
    }

    /// Parameters laid out for `scheme`, after checking compatibility.
    pub fn params_for(&self, scheme: &LearnedScheme) -> Result<ModelParams> {
        if self.equation != scheme.spec.kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for {}, scheme solves {}",
                self.equation, scheme.spec.kind
            )));
        }
        if self.model.hidden != scheme.config.hidden
            || self.model.head_width != scheme.config.head_width
            || self.model.head_layers != scheme.config.head_layers
        {
            return Err(Error::Checkpoint("network dimensions differ from the scheme".into()));
        }
        if self.params.len() != scheme.layout.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, layout needs {}",
                self.params.len(),
                scheme.layout.len()
            )));
        }
        Ok(ModelParams {
            layout: scheme.layout.clone(),
            values: self.params.clone(),
        })
    }

    /// Text format: `key = value` header lines, a `params` marker, then one
    /// parameter per line in layout order. Values use the shortest decimal
    /// form that parses back to the same bits.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# stencilnet checkpoint")?;
        writeln!(out, "format_version = {CHECKPOINT_FORMAT_VERSION}")?;
        writeln!(out, "equation = {}", self.equation.name())?;
        writeln!(out, "hidden = {}", self.model.hidden)?;
        writeln!(out, "head_width = {}", self.model.head_width)?;
        writeln!(out, "head_layers = {}", self.model.head_layers)?;
        writeln!(out, "input_scale = {:?}", self.model.input_scale)?;
        writeln!(out, "input_mode = {}", self.model.input_mode.name())?;
        writeln!(out, "init_gain = {:?}", self.model.init_gain)?;
        writeln!(out, "output_gain = {:?}", self.model.output_gain)?;
        writeln!(out, "accuracy_order = {}", self.model.accuracy_order)?;
        let orders: Vec<String> = self
            .constraint_orders
            .iter()
            .map(|(k, n)| match k {
                ConstraintKind::Derivative(d) => format!("d{d}:{n}"),
                ConstraintKind::FaceValue => format!("face:{n}"),
            })
            .collect();
        writeln!(out, "constraint_orders = {}", orders.join(","))?;
        writeln!(out, "epoch = {}", self.epoch)?;
        writeln!(out, "n_params = {}", self.params.len())?;
        writeln!(out, "params")?;
        for v in &self.params {
            writeln!(out, "{v:?}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut header = std::collections::HashMap::new();
        let mut lines = input.lines();
        for line in lines.by_ref() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            let line = line.trim();
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if line == "params" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| header.get(k).cloned().ok_or_else(|| bad(format!("missing header key {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| bad(format!("{k}: {e}"))) };
        let version = num("format_version")?;
        if version != CHECKPOINT_FORMAT_VERSION as usize {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let model = ModelConfig {
            hidden: num("hidden")?,
            head_width: num("head_width")?,
            head_layers: num("head_layers")?,
            input_scale: float("input_scale")?,
            input_mode: InputMode::parse(&get("input_mode")?)?,
            init_gain: float("init_gain")?,
            output_gain: float("output_gain")?,
            accuracy_order: num("accuracy_order")?,
        };
        let constraint_orders = get("constraint_orders")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|item| {
                let (k, n) = item.split_once(':').ok_or_else(|| bad(format!("bad constraint {item:?}")))?;
                let n: usize = n.parse().map_err(|e| bad(format!("{item}: {e}")))?;
                let kind = if k == "face" {
                    ConstraintKind::FaceValue
                } else {
                    let d = k
                        .strip_prefix('d')
                        .and_then(|d| d.parse().ok())
                        .ok_or_else(|| bad(format!("bad constraint kind {k:?}")))?;
                    ConstraintKind::Derivative(d)
                };
                Ok((kind, n))
            })
            .collect::<Result<_>>()?;
        let n_params = num("n_params")?;
        let mut params = Vec::with_capacity(n_params);
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            params.push(line.trim().parse::<f64>().map_err(|e| bad(format!("{line:?}: {e}")))?);
        }
        if params.len() != n_params {
            return Err(bad(format!("expected {n_params} parameters, found {}", params.len())));
        }
        Ok(Self {
            equation: PdeKind::parse(&get("equation")?)?,
            model,
            constraint_orders,
            epoch: num("epoch")?,
            params,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::schemes::ssprk3_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(spec: PdeSpec, n: usize) -> (LearnedScheme, ModelParams) {
        let length = if spec.kind == PdeKind::KuramotoSivashinsky { 16.0 } else { 1.0 };
        let cfg = ModelConfig {
            hidden: 6,
            head_width: 5,
            head_layers: 2,
            output_gain: 1.0,
            ..ModelConfig::default()
        };
        let s = LearnedScheme::new(&spec, make_grid(length, n).unwrap(), &cfg).unwrap();
        let p = s.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        (s, p)
    }

    fn wave(n: usize) -> Vec<f64> {
        (0..n).map(|i| (0.7 * i as f64).sin() + 0.3 * (1.9 * i as f64).cos()).collect()
    }

    #[test]
    fn layout_count() {
        let l = ParamLayout::new(32, 32, 3, 3);
        assert_eq!(l.len(), 5 * 128 + 32 * 128 + 128 + 3 * (32 * 32 + 32) + 32 * 15 + 15);
    }

    #[test]
    fn zero_weights_give_zero_hidden_output() {
        let (s, _) = small(PdeSpec::burgers(), 8);
        let p = ModelParams::zeros(s.layout.clone());
        let out = s.stage_forward(&p, &wave(8), &s.zero_state(), false);
        assert!(out.state.h.iter().all(|&v| v == 0.0));
        assert_eq!(out.reg, 0.0);
    }

    #[test]
    fn zero_head_reproduces_fixed_scheme() {
        for spec in [PdeSpec::advection(1.0), PdeSpec::burgers(), PdeSpec::kuramoto_sivashinsky(1.0)] {
            let (s, mut p) = small(spec, 12);
            p.zero_output_layer();
            let fixed = s.fixed_scheme();
            let dt = if spec.kind == PdeKind::KuramotoSivashinsky { 1e-3 } else { 0.01 };
            let mut u = wave(12);
            let mut v = u.clone();
            let mut state = s.zero_state();
            for _ in 0..20 {
                let (next, st, reg) = s.step(&p, &u, &state, dt);
                assert_eq!(reg, 0.0);
                u = next;
                state = st;
                v = ssprk3_step(&fixed, &v, dt);
                for (a, b) in u.iter().zip(&v) {
                    assert!((a - b).abs() <= 1e-12, "{spec:?}");
                }
            }
        }
    }

    #[test]
    fn coefficients_always_satisfy_constraints() {
        for spec in [PdeSpec::burgers(), PdeSpec::kuramoto_sivashinsky(1.0)] {
            let (s, p) = small(spec, 10);
            let (c, _, _) = s.predict_coefficients(&p, &wave(10), &s.zero_state());
            for row in c.rows() {
                for (j, set) in s.sets.iter().enumerate() {
                    let cj: Vec<f64> = row.iter().skip(j * WIDTH).take(WIDTH).copied().collect();
                    assert!(set.constraint.residual(&cj) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_field_has_zero_rhs() {
        for spec in [PdeSpec::advection(1.0), PdeSpec::burgers(), PdeSpec::kuramoto_sivashinsky(1.0)] {
            let (s, p) = small(spec, 9);
            let out = s.stage_forward(&p, &[0.4; 9], &s.zero_state(), false);
            assert!(out.rhs.iter().all(|r| r.abs() < 1e-12), "{spec:?}");
        }
    }

    #[test]
    fn ks_zero_field_stays_zero() {
        let (s, p) = small(PdeSpec::kuramoto_sivashinsky(1.0), 10);
        let (u, _, _) = s.step(&p, &[0.0; 10], &s.zero_state(), 1e-3);
        assert!(u.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn shift_equivariance() {
        for spec in [PdeSpec::burgers(), PdeSpec::kuramoto_sivashinsky(1.0)] {
            let (s, p) = small(spec, 11);
            let u = wave(11);
            let ic = GridField::new(s.grid, u.clone()).unwrap();
            let (a, _) = s.rollout(&p, &ic, 1e-3, 5).unwrap();
            let (b, _) = s.rollout(&p, &ic.shifted(3), 1e-3, 5).unwrap();
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                let shifted = crate::grid::shift_values(fa, 3);
                for (x, y) in shifted.iter().zip(fb) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stage_gradient_wrt_input() {
        for (spec, mode) in [
            (PdeSpec::advection(-1.0), InputMode::Raw),
            (PdeSpec::burgers(), InputMode::Raw),
            (PdeSpec::burgers(), InputMode::Centered),
            (PdeSpec::kuramoto_sivashinsky(1.0), InputMode::Centered),
        ] {
            let (mut s, p) = small(spec, 8);
            s.config.input_mode = mode;
            let u = wave(8);
            let weights: Vec<f64> = (0..8).map(|i| 0.3 + 0.1 * i as f64).collect();
            let f = |u: &[f64]| -> f64 {
                let o = s.stage_forward(&p, u, &s.zero_state(), false);
                o.rhs.iter().zip(&weights).map(|(r, w)| r * w).sum::<f64>() + 0.5 * o.reg
            };
            let out = s.stage_forward(&p, &u, &s.zero_state(), true);
            let mut g = vec![0.0; p.values.len()];
            let zeros = Array2::zeros((8, 6));
            let adj = s.stage_backward(&p, out.record.as_ref().unwrap(), &weights, &zeros, &zeros, 0.5, &mut g);
            for i in 0..8 {
                let h = 1e-6;
                let mut up = u.clone();
                up[i] += h;
                let mut um = u.clone();
                um[i] -= h;
                let fd = (f(&up) - f(&um)) / (2.0 * h);
                let err = (fd - adj.input[i]).abs() / fd.abs().max(adj.input[i].abs()).max(1e-3);
                assert!(err < 1e-6, "{spec:?} {i}: {fd} vs {}", adj.input[i]);
            }
        }
    }

    #[test]
    fn rollout_is_deterministic_and_causal() {
        let (s, p) = small(PdeSpec::burgers(), 10);
        let ic = GridField::new(s.grid, wave(10)).unwrap();
        let (a, ra) = s.rollout(&p, &ic, 1e-3, 6).unwrap();
        let (b, rb) = s.rollout(&p, &ic, 1e-3, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (short, _) = s.rollout(&p, &ic, 1e-3, 3).unwrap();
        assert_eq!(short.frames[..], a.frames[..4]);
        let (one, _) = s.rollout(&p, &ic, 1e-3, 1).unwrap();
        let (u1, _) = s.finitenet_step(&p, &ic, &s.zero_state(), 1e-3).unwrap();
        assert_eq!(one.frames[1], u1.values);
    }

    #[test]
    fn centered_inputs_ignore_constant_offsets() {
        let (mut s, p) = small(PdeSpec::burgers(), 9);
        s.config.input_mode = InputMode::Centered;
        let u = wave(9);
        let lifted: Vec<f64> = u.iter().map(|v| v + 0.8).collect();
        let (a, _, _) = s.predict_coefficients(&p, &u, &s.zero_state());
        let (b, _, _) = s.predict_coefficients(&p, &lifted, &s.zero_state());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (mut s, p) = small(PdeSpec::kuramoto_sivashinsky(1.0), 8);
        s.config.input_mode = InputMode::Centered;
        let ck = Checkpoint::new(&s, &p, 17);
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params_for(&s).unwrap(), p);
        let (other, _) = small(PdeSpec::burgers(), 8);
        assert!(back.params_for(&other).is_err());
        let truncated = String::from_utf8(buf).unwrap().lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::read(truncated.as_bytes()).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (s, p) = small(PdeSpec::burgers(), 8);
        let wrong = GridField::zeros(make_grid(1.0, 9).unwrap());
        assert!(s.finitenet_rhs(&p, &wrong, &s.zero_state()).is_err());
        let (k, kp) = small(PdeSpec::kuramoto_sivashinsky(1.0), 8);
        let ic = GridField::zeros(k.grid);
        assert!(k.rollout(&p, &ic, 0.1, 1).is_err());
        assert!(k.rollout(&kp, &ic, 0.0, 1).is_err());
    }
}
