//! Uniform periodic 1D grids, fields and trajectories.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest grid that still fits a five-point stencil.
pub const MIN_CELLS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_cells: usize,
    domain_length: f64,
}

impl Grid {
    pub fn new(domain_length: f64, n_cells: usize) -> Result<Self> {
        if n_cells < MIN_CELLS {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_CELLS} cells, got {n_cells}"
            )));
        }
        if !(domain_length > 0.0 && domain_length.is_finite()) {
            return Err(Error::invalid(format!(
                "domain length must be positive, got {domain_length}"
            )));
        }
        Ok(Self {
            n_cells,
            domain_length,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.n_cells as f64
    }

    /// Grid with `factor` times as many cells over the same domain.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("refinement factor must be >= 1"));
        }
        Grid::new(self.domain_length, self.n_cells * factor)
    }

    /// Left edge of cell `i`, which is also the FDM node location.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    /// Periodic index wrap for signed offsets.
    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n_cells as isize) as usize
    }
}

/// Convenience constructor matching the free-function style used elsewhere.
pub fn make_grid(domain_length: f64, n_cells: usize) -> Result<Grid> {
    Grid::new(domain_length, n_cells)
}

/// How a fine field is transferred to a coarser grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Restriction {
    /// Mean of each block of fine cells (finite-volume cell averages).
    Average,
    /// Every `factor`-th fine node (finite-difference point values).
    Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::shape(format!(
                "field has {} values for a grid of {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_cells()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_cells()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize) -> f64) -> Self {
        Self {
            grid,
            values: (0..grid.n_cells()).map(f).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Circular shift: `out[i] = values[i - shift]`.
    pub fn shifted(&self, shift: isize) -> Self {
        Self {
            grid: self.grid,
            values: shift_values(&self.values, shift),
        }
    }
}

pub(crate) fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Circular shift of a slice, `out[i] = values[i - shift]`.
pub fn shift_values(values: &[f64], shift: isize) -> Vec<f64> {
    let n = values.len() as isize;
    (0..n)
        .map(|i| values[(i - shift).rem_euclid(n) as usize])
        .collect()
}

pub fn restrict(fine: &GridField, factor: usize, mode: Restriction) -> Result<GridField> {
    if factor == 0 {
        return Err(Error::invalid("restriction factor must be >= 1"));
    }
    let n_fine = fine.grid.n_cells();
    if n_fine % factor != 0 {
        return Err(Error::shape(format!(
            "{n_fine} fine cells are not divisible by factor {factor}"
        )));
    }
    let n_coarse = n_fine / factor;
    let values: Vec<f64> = match mode {
        Restriction::Average => fine
            .values
            .chunks_exact(factor)
            .map(|block| block.iter().sum::<f64>() / factor as f64)
            .collect(),
        Restriction::Sample => fine.values.iter().step_by(factor).copied().collect(),
    };
    // Coarse grids below the stencil width are still meaningful as restriction
    // results (e.g. a single averaged cell), so the grid is built unchecked.
    let grid = Grid {
        n_cells: n_coarse,
        domain_length: fine.grid.domain_length(),
    };
    Ok(GridField { grid, values })
}

/// Total variation with periodic closure.
pub fn total_variation(u: &GridField) -> f64 {
    total_variation_of(&u.values)
}

pub fn total_variation_of(values: &[f64]) -> f64 {
    let n = values.len();
    (0..n)
        .map(|i| (values[i] - values[(i + n - 1) % n]).abs())
        .sum()
}

/// Largest absolute jump between periodic neighbours.
pub fn max_jump(values: &[f64]) -> f64 {
    let n = values.len();
    (0..n)
        .map(|i| (values[i] - values[(i + n - 1) % n]).abs())
        .fold(0.0, f64::max)
}

/// Space-time solution: frame `k` lives at time `k * dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub dt: f64,
    pub frames: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: Grid, dt: f64, initial: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if initial.len() != grid.n_cells() {
            return Err(Error::shape("initial frame length differs from grid"));
        }
        Ok(Self {
            grid,
            dt,
            frames: vec![initial],
        })
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        debug_assert_eq!(frame.len(), self.grid.n_cells());
        self.frames.push(frame);
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, k: usize) -> GridField {
        GridField {
            grid: self.grid,
            values: self.frames[k].clone(),
        }
    }

    pub fn last(&self) -> &[f64] {
        self.frames.last().expect("trajectory always has frame 0")
    }

    /// Index of the first frame that is non-finite or exceeds `threshold` in
    /// magnitude.
    pub fn first_bad_frame(&self, threshold: f64) -> Option<usize> {
        self.frames
            .iter()
            .position(|f| f.iter().any(|v| !v.is_finite() || v.abs() > threshold))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = String::from("t");
        for i in 0..self.grid.n_cells() {
            let _ = write!(line, ",x_{i}");
        }
        writeln!(out, "{line}")?;
        for (k, frame) in self.frames.iter().enumerate() {
            line.clear();
            let _ = write!(line, "{:.16e}", k as f64 * self.dt);
            for v in frame {
                let _ = write!(line, ",{v:.16e}");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parses the CSV layout produced by [`Trajectory::write_csv`]. The domain
    /// length is not stored in the file and must be supplied.
    pub fn read_csv<R: BufRead>(input: R, domain_length: f64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let n_cells = header.split(',').count().saturating_sub(1);
        let grid = Grid::new(domain_length, n_cells)?;
        let mut times = Vec::new();
        let mut frames = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',').map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            });
            let t = fields.next().unwrap_or(Ok(0.0))?;
            let frame: Vec<f64> = fields.collect::<Result<_>>()?;
            if frame.len() != n_cells {
                return Err(Error::shape(format!(
                    "row has {} values, header declares {n_cells}",
                    frame.len()
                )));
            }
            times.push(t);
            frames.push(frame);
        }
        if frames.is_empty() {
            return Err(Error::Parse("trajectory has no frames".into()));
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        Ok(Self { grid, dt, frames })
    }
}

/// Mean over every (space, time) sample of the squared difference.
pub fn trajectory_mse(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::shape("trajectories live on different grids"));
    }
    if a.n_frames() != b.n_frames() {
        return Err(Error::shape(format!(
            "frame counts differ: {} vs {}",
            a.n_frames(),
            b.n_frames()
        )));
    }
    if (a.dt - b.dt).abs() > 1e-12 * a.dt.abs().max(b.dt.abs()) {
        return Err(Error::shape(format!("dt differs: {} vs {}", a.dt, b.dt)));
    }
    Ok(frames_mse(&a.frames, &b.frames))
}

pub(crate) fn frames_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for (x, y) in fa.iter().zip(fb) {
            sum += (x - y) * (x - y);
        }
        count += fa.len();
    }
    sum / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(values: Vec<f64>) -> GridField {
        let n = values.len();
        GridField {
            grid: Grid {
                n_cells: n,
                domain_length: 1.0,
            },
            values,
        }
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(2.0 * std::f64::consts::PI, 100).unwrap();
        assert_eq!(g.dx(), 2.0 * std::f64::consts::PI / 100.0);
        let g = make_grid(1.0, 5).unwrap();
        assert!((g.dx() - 0.2).abs() < 1e-15);
        assert!((g.dx() * 5.0 - 1.0).abs() < 1e-15);
        assert!(make_grid(1.0, 4).is_err());
        assert!(make_grid(0.0, 10).is_err());
        assert!(make_grid(-1.0, 10).is_err());
    }

    #[test]
    fn wrap_is_periodic() {
        let g = make_grid(1.0, 7).unwrap();
        assert_eq!(g.wrap(-1), 6);
        assert_eq!(g.wrap(7), 0);
        assert_eq!(g.wrap(3 + 7), 3);
    }

    #[test]
    fn restrict_examples() {
        let c = field(vec![3.0; 8]);
        for mode in [Restriction::Average, Restriction::Sample] {
            let r = restrict(&c, 4, mode).unwrap();
            assert_eq!(r.values, vec![3.0, 3.0]);
        }
        let f = field(vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(restrict(&f, 4, Restriction::Average).unwrap().values, vec![1.5]);
        assert_eq!(restrict(&f, 4, Restriction::Sample).unwrap().values, vec![0.0]);
        assert!(restrict(&f, 3, Restriction::Average).is_err());
        assert!(restrict(&f, 0, Restriction::Sample).is_err());
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&field(vec![2.0; 6])), 0.0);
        let h = 0.7;
        let step = field(vec![0.0, 0.0, h, h, h, 0.0]);
        assert!((total_variation(&step) - 2.0 * h).abs() < 1e-15);
        assert_eq!(total_variation(&field(vec![0.0, 1.0, 0.0, 1.0])), 4.0);
    }

    #[test]
    fn mse_examples() {
        let g = Grid {
            n_cells: 2,
            domain_length: 1.0,
        };
        let a = Trajectory {
            grid: g,
            dt: 0.1,
            frames: vec![vec![0.0, 0.0]],
        };
        let b = Trajectory {
            frames: vec![vec![1.0, 3.0]],
            ..a.clone()
        };
        assert_eq!(trajectory_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(trajectory_mse(&a, &b).unwrap(), 5.0);
        let shifted = Trajectory {
            frames: a.frames.iter().map(|f| f.iter().map(|v| v + 1.0).collect()).collect(),
            ..a.clone()
        };
        assert_eq!(trajectory_mse(&a, &shifted).unwrap(), 1.0);
        let longer = Trajectory {
            frames: vec![vec![0.0, 0.0]; 2],
            ..a.clone()
        };
        assert!(trajectory_mse(&a, &longer).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let g = make_grid(2.0, 6).unwrap();
        let mut t = Trajectory::new(g, 0.25, vec![0.1, -0.2, 1.0 / 3.0, 4.0, 5.5, -6.0]).unwrap();
        t.push(vec![1e-300, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x_0,x_1,x_2,x_3,x_4,x_5\n"));
        let back = Trajectory::read_csv(buf.as_slice(), 2.0).unwrap();
        assert_eq!(back.frames, t.frames);
        assert!((back.dt - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn tv_rotation_and_scaling(values in prop::collection::vec(-10.0..10.0f64, 5..40),
                                   shift in -50isize..50, alpha in -5.0..5.0f64) {
            let tv = total_variation_of(&values);
            let rotated = shift_values(&values, shift);
            prop_assert!((total_variation_of(&rotated) - tv).abs() <= 1e-12 * (1.0 + tv));
            let scaled: Vec<f64> = values.iter().map(|v| alpha * v).collect();
            prop_assert!((total_variation_of(&scaled) - alpha.abs() * tv).abs() <= 1e-12 * (1.0 + tv.abs() * alpha.abs()));
        }

        #[test]
        fn averaging_preserves_mean(blocks in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 2..20)) {
            let values: Vec<f64> = blocks.concat();
            let f = field(values);
            let r = restrict(&f, 4, Restriction::Average).unwrap();
            prop_assert!((r.mean() - f.mean()).abs() < 1e-12);
        }

        #[test]
        fn mse_symmetric_and_zero_iff_equal(a in prop::collection::vec(-3.0..3.0f64, 6),
                                            b in prop::collection::vec(-3.0..3.0f64, 6)) {
            let g = make_grid(1.0, 6).unwrap();
            let ta = Trajectory::new(g, 0.1, a.clone()).unwrap();
            let tb = Trajectory::new(g, 0.1, b.clone()).unwrap();
            let ab = trajectory_mse(&ta, &tb).unwrap();
            prop_assert_eq!(ab, trajectory_mse(&tb, &ta).unwrap());
            prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}
