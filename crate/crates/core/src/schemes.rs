//! Classical method-of-lines machinery: SSPRK3, Taylor-moment stencils,
//! WENO5 reconstruction, numerical fluxes and the baseline solvers the
//! learned scheme is compared against.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{face_moment_row, fdm_moment_row};
use crate::equations::{PdeKind, PdeSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, Trajectory};

/// Offsets of the five-point stencil used by every learned coefficient set.
pub const STENCIL_OFFSETS: [isize; 5] = [-2, -1, 0, 1, 2];

/// Jiang-Shu regularisation in the WENO weights.
pub const WENO_EPS: f64 = 1e-6;
const WENO_LINEAR_WEIGHTS: [f64; 3] = [0.1, 0.6, 0.3];

/// Values above this magnitude are treated as a blown-up solution.
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;

/// Spatial semi-discretisation `du/dt = L(u)`.
pub trait SemiDiscreteRhs {
    fn eval(&self, u: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> Vec<f64>> SemiDiscreteRhs for F {
    fn eval(&self, u: &[f64]) -> Vec<f64> {
        self(u)
    }
}

/// Third-order SSP Runge-Kutta in Shu-Osher form:
///
/// ```text
/// u1    = u + dt L(u)
/// u2    = 3/4 u + 1/4 u1 + 1/4 dt L(u1)
/// u_new = 1/3 u + 2/3 u2 + 2/3 dt L(u2)
/// ```
pub fn ssprk3_step<L: SemiDiscreteRhs + ?Sized>(rhs: &L, u: &[f64], dt: f64) -> Vec<f64> {
    let l0 = rhs.eval(u);
    let u1: Vec<f64> = u.iter().zip(&l0).map(|(u, l)| u + dt * l).collect();
    let l1 = rhs.eval(&u1);
    let u2: Vec<f64> = u
        .iter()
        .zip(&u1)
        .zip(&l1)
        .map(|((u, u1), l)| 0.75 * u + 0.25 * u1 + 0.25 * dt * l)
        .collect();
    let l2 = rhs.eval(&u2);
    u.iter()
        .zip(&u2)
        .zip(&l2)
        .map(|((u, u2), l)| u / 3.0 + 2.0 / 3.0 * u2 + 2.0 / 3.0 * dt * l)
        .collect()
}

pub fn ssprk3_step_field<L: SemiDiscreteRhs + ?Sized>(rhs: &L, u: &GridField, dt: f64) -> Result<GridField> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    GridField::new(u.grid, ssprk3_step(rhs, &u.values, dt))
}

/// Uniform stencil: the same weights at every grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    pub offsets: Vec<isize>,
    pub weights: Vec<f64>,
    /// The inner product is divided by `dx^scale_power`.
    pub scale_power: i32,
}

impl Stencil {
    pub fn width(&self) -> usize {
        self.offsets.len()
    }

    pub fn broadcast(&self, n_points: usize) -> StencilCoefficients {
        StencilCoefficients {
            offsets: self.offsets.clone(),
            values: self.weights.repeat(n_points),
            scale_power: self.scale_power,
        }
    }

    /// Applies the stencil with periodic indexing.
    pub fn apply(&self, u: &[f64], dx: f64) -> Vec<f64> {
        let n = u.len() as isize;
        let inv = dx.powi(-self.scale_power);
        (0..n)
            .map(|i| {
                self.offsets
                    .iter()
                    .zip(&self.weights)
                    .map(|(&k, &c)| c * u[(i + k).rem_euclid(n) as usize])
                    .sum::<f64>()
                    * inv
            })
            .collect()
    }
}

/// Per-point coefficients: `values[i * width + k]` multiplies `u[i + offsets[k]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilCoefficients {
    pub offsets: Vec<isize>,
    pub values: Vec<f64>,
    pub scale_power: i32,
}

impl StencilCoefficients {
    pub fn width(&self) -> usize {
        self.offsets.len()
    }

    pub fn n_points(&self) -> usize {
        self.values.len() / self.width()
    }
}

fn check_offsets(offsets: &[isize]) -> Result<()> {
    if offsets.is_empty() {
        return Err(Error::invalid("stencil needs at least one offset"));
    }
    let mut sorted = offsets.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("stencil offsets must be distinct: {offsets:?}")));
    }
    Ok(())
}

fn solve_square(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Vec<f64>> {
    let w = rhs.len();
    let a = DMatrix::from_fn(w, w, |r, c| rows[r][c]);
    let x = a
        .lu()
        .solve(&DVector::from_vec(rhs))
        .ok_or_else(|| Error::invalid("moment system is singular"))?;
    Ok(x.iter().copied().collect())
}

/// Maximal-order finite-difference weights for the `derivative_order`-th
/// derivative on `offsets`, from the square Taylor-moment system
/// `sum_k c_k k^m / m! = delta_{m,d}`, `m = 0..width-1`.
pub fn max_order_fdm_coefficients(derivative_order: usize, offsets: &[isize]) -> Result<Stencil> {
    check_offsets(offsets)?;
    let width = offsets.len();
    if derivative_order >= width {
        return Err(Error::invalid(format!(
            "derivative order {derivative_order} needs more than {width} points"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..width).map(|m| fdm_moment_row(m, offsets)).collect();
    let rhs = (0..width).map(|m| if m == derivative_order { 1.0 } else { 0.0 }).collect();
    Ok(Stencil {
        offsets: offsets.to_vec(),
        weights: solve_square(rows, rhs)?,
        scale_power: derivative_order as i32,
    })
}

/// Maximal-order weights reconstructing the point value at the right face of
/// cell 0 from cell averages at `offsets`. For offsets `-2..=2` these are the
/// linear WENO5 weights `(2, -13, 47, 27, -3) / 60`.
pub fn max_order_face_coefficients(offsets: &[isize]) -> Result<Stencil> {
    check_offsets(offsets)?;
    let width = offsets.len();
    let rows: Vec<Vec<f64>> = (0..width).map(|m| face_moment_row(m, offsets)).collect();
    let rhs = (0..width).map(|m| crate::constraints::face_moment_target(m)).collect();
    Ok(Stencil {
        offsets: offsets.to_vec(),
        weights: solve_square(rows, rhs)?,
        scale_power: 0,
    })
}

/// `out_i = sum_k c_{i,k} u_{i + offset_k} / dx^scale` with periodic indexing.
pub fn apply_stencil(u: &GridField, c: &StencilCoefficients) -> Result<GridField> {
    let n = u.grid.n_cells();
    let w = c.width();
    if c.values.len() != n * w {
        return Err(Error::shape(format!(
            "{} coefficients for {n} points of width {w}",
            c.values.len()
        )));
    }
    let inv = u.grid.dx().powi(-c.scale_power);
    let values = (0..n)
        .map(|i| {
            let row = &c.values[i * w..(i + 1) * w];
            row.iter()
                .zip(&c.offsets)
                .map(|(&ck, &k)| ck * u.values[u.grid.wrap(i as isize + k)])
                .sum::<f64>()
                * inv
        })
        .collect();
    GridField::new(u.grid, values)
}

/// Which side of face `i + 1/2` a reconstructed value belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceSide {
    /// Limit from cell `i` (upwind for positive speed), `u^-_{i+1/2}`.
    Left,
    /// Limit from cell `i + 1`, `u^+_{i+1/2}`.
    Right,
}

/// Candidate values and nonlinear weights for a left-biased reconstruction
/// at the right face of the centre cell of `v`.
pub fn weno5_candidates(v: [f64; 5]) -> ([f64; 3], [f64; 3]) {
    let [a, b, c, d, e] = v;
    let q = [
        (2.0 * a - 7.0 * b + 11.0 * c) / 6.0,
        (-b + 5.0 * c + 2.0 * d) / 6.0,
        (2.0 * c + 5.0 * d - e) / 6.0,
    ];
    let beta = [
        13.0 / 12.0 * (a - 2.0 * b + c).powi(2) + 0.25 * (a - 4.0 * b + 3.0 * c).powi(2),
        13.0 / 12.0 * (b - 2.0 * c + d).powi(2) + 0.25 * (b - d).powi(2),
        13.0 / 12.0 * (c - 2.0 * d + e).powi(2) + 0.25 * (3.0 * c - 4.0 * d + e).powi(2),
    ];
    let alpha: [f64; 3] =
        std::array::from_fn(|k| WENO_LINEAR_WEIGHTS[k] / (WENO_EPS + beta[k]).powi(2));
    let total: f64 = alpha.iter().sum();
    (q, alpha.map(|a| a / total))
}

fn weno5_point(v: [f64; 5]) -> f64 {
    let (q, w) = weno5_candidates(v);
    w[0] * q[0] + w[1] * q[1] + w[2] * q[2]
}

/// Jiang-Shu WENO5 face values, one per face `i + 1/2`, `i = 0..n`.
pub fn weno5_reconstruct(ubar: &[f64], side: FaceSide) -> Vec<f64> {
    let n = ubar.len() as isize;
    let at = |i: isize| ubar[i.rem_euclid(n) as usize];
    (0..n)
        .map(|i| match side {
            FaceSide::Left => weno5_point([at(i - 2), at(i - 1), at(i), at(i + 1), at(i + 2)]),
            FaceSide::Right => weno5_point([at(i + 3), at(i + 2), at(i + 1), at(i), at(i - 1)]),
        })
        .collect()
}

/// Numerical flux used at FVM faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericalFlux {
    /// Exact Riemann solution of the scalar problem.
    Godunov,
    LocalLaxFriedrichs,
}

/// Godunov flux of `f(u) = u^2 / 2`.
pub fn burgers_godunov(ul: f64, ur: f64) -> f64 {
    if ul > ur {
        // shock, speed (ul + ur) / 2
        if ul + ur > 0.0 {
            0.5 * ul * ul
        } else {
            0.5 * ur * ur
        }
    } else if ul > 0.0 {
        0.5 * ul * ul
    } else if ur < 0.0 {
        0.5 * ur * ur
    } else {
        0.0
    }
}

/// Partial derivatives of [`burgers_godunov`] w.r.t. `(ul, ur)`, taking the
/// branch the forward evaluation takes.
pub fn burgers_godunov_grad(ul: f64, ur: f64) -> (f64, f64) {
    if ul > ur {
        if ul + ur > 0.0 {
            (ul, 0.0)
        } else {
            (0.0, ur)
        }
    } else if ul > 0.0 {
        (ul, 0.0)
    } else if ur < 0.0 {
        (0.0, ur)
    } else {
        (0.0, 0.0)
    }
}

impl PdeSpec {
    /// Numerical flux at a face from reconstructed left/right states.
    pub fn face_flux(&self, ul: f64, ur: f64) -> f64 {
        match self.kind {
            PdeKind::Advection => {
                let a = self.wavespeed;
                match self.flux {
                    NumericalFlux::Godunov => {
                        if a >= 0.0 {
                            a * ul
                        } else {
                            a * ur
                        }
                    }
                    NumericalFlux::LocalLaxFriedrichs => {
                        0.5 * a * (ul + ur) - 0.5 * a.abs() * (ur - ul)
                    }
                }
            }
            PdeKind::Burgers => match self.flux {
                NumericalFlux::Godunov => burgers_godunov(ul, ur),
                NumericalFlux::LocalLaxFriedrichs => {
                    let alpha = ul.abs().max(ur.abs());
                    0.25 * (ul * ul + ur * ur) - 0.5 * alpha * (ur - ul)
                }
            },
            PdeKind::KuramotoSivashinsky => 0.5 * ul * ul,
        }
    }

    pub fn face_flux_grad(&self, ul: f64, ur: f64) -> (f64, f64) {
        match self.kind {
            PdeKind::Advection => {
                let a = self.wavespeed;
                match self.flux {
                    NumericalFlux::Godunov => {
                        if a >= 0.0 {
                            (a, 0.0)
                        } else {
                            (0.0, a)
                        }
                    }
                    NumericalFlux::LocalLaxFriedrichs => {
                        (0.5 * a + 0.5 * a.abs(), 0.5 * a - 0.5 * a.abs())
                    }
                }
            }
            PdeKind::Burgers => match self.flux {
                NumericalFlux::Godunov => burgers_godunov_grad(ul, ur),
                NumericalFlux::LocalLaxFriedrichs => {
                    let (alpha, dal, dar) = if ul.abs() >= ur.abs() {
                        (ul.abs(), ul.signum(), 0.0)
                    } else {
                        (ur.abs(), 0.0, ur.signum())
                    };
                    let jump = ur - ul;
                    (
                        0.5 * ul + 0.5 * alpha - 0.5 * dal * jump,
                        0.5 * ur - 0.5 * alpha - 0.5 * dar * jump,
                    )
                }
            },
            PdeKind::KuramotoSivashinsky => (ul, 0.0),
        }
    }
}

/// Conservative update `du_i/dt = -(F_{i+1/2} - F_{i-1/2}) / dx`, where
/// `face_flux[i]` is the flux through the right face of cell `i`.
pub fn fvm_rhs(face_flux: &[f64], dx: f64) -> Vec<f64> {
    let n = face_flux.len();
    (0..n)
        .map(|i| -(face_flux[i] - face_flux[(i + n - 1) % n]) / dx)
        .collect()
}

pub fn fvm_rhs_field(spec: &PdeSpec, face_flux: &[f64], grid: Grid) -> Result<GridField> {
    if spec.kind == PdeKind::KuramotoSivashinsky {
        return Err(Error::invalid("Kuramoto-Sivashinsky is a finite-difference problem"));
    }
    GridField::new(grid, fvm_rhs(face_flux, grid.dx()))
}

/// Central stencils used by the Kuramoto-Sivashinsky baseline. The fourth
/// derivative takes seven points so every term is fourth-order accurate.
#[derive(Clone, Debug)]
pub struct KsStencils {
    pub first: Stencil,
    pub second: Stencil,
    pub fourth: Stencil,
}

impl KsStencils {
    pub fn fourth_order() -> Self {
        Self {
            first: max_order_fdm_coefficients(1, &STENCIL_OFFSETS).expect("distinct offsets"),
            second: max_order_fdm_coefficients(2, &STENCIL_OFFSETS).expect("distinct offsets"),
            fourth: max_order_fdm_coefficients(4, &[-3, -2, -1, 0, 1, 2, 3])
                .expect("distinct offsets"),
        }
    }
}

/// Baseline semi-discretisation: WENO5 + numerical flux for the conservation
/// laws, fourth-order central differences for Kuramoto-Sivashinsky.
#[derive(Clone, Debug)]
pub struct BaselineRhs {
    spec: PdeSpec,
    dx: f64,
    ks: Option<KsStencils>,
}

impl BaselineRhs {
    pub fn new(spec: &PdeSpec, grid: Grid) -> Self {
        let ks = (spec.kind == PdeKind::KuramotoSivashinsky).then(KsStencils::fourth_order);
        Self {
            spec: *spec,
            dx: grid.dx(),
            ks,
        }
    }
}

impl SemiDiscreteRhs for BaselineRhs {
    fn eval(&self, u: &[f64]) -> Vec<f64> {
        match &self.ks {
            None => {
                let left = weno5_reconstruct(u, FaceSide::Left);
                let right = weno5_reconstruct(u, FaceSide::Right);
                let flux: Vec<f64> = left
                    .iter()
                    .zip(&right)
                    .map(|(&l, &r)| self.spec.face_flux(l, r))
                    .collect();
                fvm_rhs(&flux, self.dx)
            }
            Some(st) => {
                let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
                let ux2 = st.first.apply(&sq, self.dx);
                let uxx = st.second.apply(u, self.dx);
                let uxxxx = st.fourth.apply(u, self.dx);
                (0..u.len())
                    .map(|i| -self.spec.viscosity * uxxxx[i] - uxx[i] - 0.5 * ux2[i])
                    .collect()
            }
        }
    }
}

/// Rolls the baseline scheme out for `n_steps` steps of size `dt`.
pub fn baseline_solve(spec: &PdeSpec, ic: &GridField, dt: f64, n_steps: usize) -> Result<Trajectory> {
    baseline_solve_with(spec, ic, dt, n_steps, DEFAULT_BLOWUP_THRESHOLD)
}

pub fn baseline_solve_with(
    spec: &PdeSpec,
    ic: &GridField,
    dt: f64,
    n_steps: usize,
    blowup_threshold: f64,
) -> Result<Trajectory> {
    let rhs = BaselineRhs::new(spec, ic.grid);
    let mut traj = Trajectory::new(ic.grid, dt, ic.values.clone())?;
    let mut u = ic.values.clone();
    for k in 1..=n_steps {
        u = ssprk3_step(&rhs, &u, dt);
        if u.iter().any(|v| !v.is_finite() || v.abs() > blowup_threshold) {
            return Err(Error::BlowUp { frame: k });
        }
        traj.push(u.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn ssprk3_zero_dynamics_is_identity() {
        let u = vec![1.0, -2.0, 3.5, 0.25, 9.0];
        let out = ssprk3_step(&|v: &[f64]| vec![0.0; v.len()], &u, 0.3);
        assert_eq!(out, u);
    }

    #[test]
    fn ssprk3_matches_cubic_taylor_polynomial() {
        for &(lambda, dt) in &[(-1.0, 0.1), (2.0, 0.05), (-3.7, 0.2)] {
            let out = ssprk3_step(&|v: &[f64]| vec![lambda * v[0]], &[1.3], dt);
            let z: f64 = lambda * dt;
            let expected = 1.3 * (1.0 + z + z * z / 2.0 + z * z * z / 6.0);
            assert!((out[0] - expected).abs() < 1e-14, "{} vs {}", out[0], expected);
        }
    }

    #[test]
    fn ssprk3_rejects_non_positive_dt() {
        let g = make_grid(1.0, 5).unwrap();
        let u = GridField::zeros(g);
        assert!(ssprk3_step_field(&|v: &[f64]| v.to_vec(), &u, 0.0).is_err());
    }

    #[test]
    fn central_three_point_first_derivative() {
        let s = max_order_fdm_coefficients(1, &[-1, 0, 1]).unwrap();
        assert!(close(&s.weights, &[-0.5, 0.0, 0.5], 1e-14));
    }

    #[test]
    fn derivative_order_must_fit_stencil() {
        assert!(max_order_fdm_coefficients(5, &STENCIL_OFFSETS).is_err());
        assert!(max_order_fdm_coefficients(1, &[0, 1, 1]).is_err());
    }

    #[test]
    fn face_coefficients_are_linear_weno_weights() {
        let s = max_order_face_coefficients(&STENCIL_OFFSETS).unwrap();
        let expected = [2.0 / 60.0, -13.0 / 60.0, 47.0 / 60.0, 27.0 / 60.0, -3.0 / 60.0];
        assert!(close(&s.weights, &expected, 1e-14), "{:?}", s.weights);
    }

    #[test]
    fn stencils_annihilate_constants_and_differentiate_linears() {
        let g = make_grid(2.0, 40).unwrap();
        let c = GridField::constant(g, 4.2);
        for d in 1..5 {
            let s = max_order_fdm_coefficients(d, &STENCIL_OFFSETS).unwrap();
            let out = apply_stencil(&c, &s.broadcast(40)).unwrap();
            assert!(out.max_abs() < 1e-9 * g.dx().powi(-(d as i32)).max(1.0), "d={d}");
        }
        // u = x away from the periodic seam
        let lin = GridField::from_fn(g, |i| g.node(i));
        let s = max_order_fdm_coefficients(1, &[-1, 0, 1]).unwrap();
        let out = apply_stencil(&lin, &s.broadcast(40)).unwrap();
        for i in 1..39 {
            assert!((out.values[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_stencil_checks_shape() {
        let g = make_grid(1.0, 10).unwrap();
        let s = max_order_fdm_coefficients(1, &STENCIL_OFFSETS).unwrap();
        assert!(apply_stencil(&GridField::zeros(g), &s.broadcast(9)).is_err());
    }

    #[test]
    fn weno_constant_and_linear_data() {
        let c = vec![1.75; 12];
        for side in [FaceSide::Left, FaceSide::Right] {
            assert!(close(&weno5_reconstruct(&c, side), &c, 1e-14));
        }
        // linear in index: faces at i + 1/2 are exact away from the seam
        let lin: Vec<f64> = (0..20).map(|i| 0.3 * i as f64 - 1.0).collect();
        for side in [FaceSide::Left, FaceSide::Right] {
            let faces = weno5_reconstruct(&lin, side);
            for i in 3..16 {
                let exact = 0.3 * (i as f64 + 0.5) - 1.0;
                assert!((faces[i] - exact).abs() < 1e-12, "{side:?} face {i}");
            }
        }
    }

    #[test]
    fn weno_weights_sum_to_one() {
        let data = [[0.0, 1.0, 0.0, 1.0, 0.0], [1e3, -2.0, 5.0, 5.0, 5.0], [0.1, 0.2, 0.3, 0.4, 0.5]];
        for v in data {
            let (_, w) = weno5_candidates(v);
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn godunov_riemann_cases() {
        // right-moving shock
        assert_eq!(burgers_godunov(1.0, 0.0), 0.5);
        // left-moving shock
        assert_eq!(burgers_godunov(0.0, -1.0), 0.5);
        // transonic rarefaction
        assert_eq!(burgers_godunov(-1.0, 1.0), 0.0);
        // supersonic rarefactions
        assert_eq!(burgers_godunov(0.5, 1.0), 0.125);
        assert_eq!(burgers_godunov(-1.0, -0.5), 0.125);
    }

    #[test]
    fn godunov_gradient_matches_differences() {
        let cases = [(1.0, 0.2), (0.3, -0.9), (-0.8, 0.6), (0.4, 0.9), (-0.9, -0.3), (0.7, -0.2)];
        let spec = PdeSpec::burgers();
        for (ul, ur) in cases {
            let h = 1e-7;
            let (gl, gr) = spec.face_flux_grad(ul, ur);
            let fl = (spec.face_flux(ul + h, ur) - spec.face_flux(ul - h, ur)) / (2.0 * h);
            let fr = (spec.face_flux(ul, ur + h) - spec.face_flux(ul, ur - h)) / (2.0 * h);
            assert!((gl - fl).abs() < 1e-7 && (gr - fr).abs() < 1e-7, "{ul} {ur}");
        }
    }

    #[test]
    fn fvm_rhs_telescopes() {
        let same = fvm_rhs(&[0.3; 9], 0.1);
        assert!(same.iter().all(|v| *v == 0.0));
        let flux = [0.1, -2.0, 3.3, 0.7, 1e-3, 5.0];
        let rhs = fvm_rhs(&flux, 0.05);
        let mean: f64 = rhs.iter().sum::<f64>() / rhs.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn ks_baseline_keeps_zero_field() {
        let g = make_grid(64.0, 50).unwrap();
        let traj = baseline_solve(&PdeSpec::kuramoto_sivashinsky(1.0), &GridField::zeros(g), 0.01, 5).unwrap();
        assert!(traj.frames.iter().all(|f| f.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn baseline_zero_steps_returns_ic() {
        let g = make_grid(1.0, 20).unwrap();
        let ic = GridField::from_fn(g, |i| (i as f64).sin());
        let traj = baseline_solve(&PdeSpec::advection(1.0), &ic, 0.01, 0).unwrap();
        assert_eq!(traj.n_frames(), 1);
        assert_eq!(traj.frames[0], ic.values);
    }

    #[test]
    fn baseline_reports_blow_up_frame() {
        let g = make_grid(64.0, 40).unwrap();
        let ic = GridField::from_fn(g, |i| (0.7 * i as f64).sin());
        // far beyond the explicit stability limit of the fourth-derivative term
        match baseline_solve(&PdeSpec::kuramoto_sivashinsky(1.0), &ic, 5.0, 50) {
            Err(Error::BlowUp { frame }) => assert!(frame >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
