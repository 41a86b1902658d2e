//! Test campaigns: error ratios against the baseline, their statistics,
//! histograms and correlations with features of the initial condition.
//!
//! Both solvers are scored against the same reference trajectory. Cases
//! where either solver blows up are flagged: they are left out of the
//! `log10(e_r)` statistics but still decide the win count (a learned-solver
//! blow-up is a loss, a baseline-only blow-up a win).

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equations::IcDescriptor;
use crate::error::{Error, Result};
use crate::grid::{max_jump, total_variation_of, trajectory_mse, GridField};
use crate::model::{LearnedScheme, ModelParams};
use crate::rng::Purpose;
use crate::schemes::{baseline_solve_with, DEFAULT_BLOWUP_THRESHOLD};
use crate::training::{draw_samples, run_parallel, Problem, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseFlag {
    FinitenetBlowup,
    BaselineBlowup,
    BothBlowup,
    /// The baseline matched the reference exactly, so `e_r` is undefined.
    ZeroBaselineError,
}

impl CaseFlag {
    pub fn name(self) -> &'static str {
        match self {
            CaseFlag::FinitenetBlowup => "finitenet_blowup",
            CaseFlag::BaselineBlowup => "baseline_blowup",
            CaseFlag::BothBlowup => "both_blowup",
            CaseFlag::ZeroBaselineError => "zero_baseline_error",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub case: usize,
    pub descriptor: IcDescriptor,
    /// Learned-solver MSE (NaN if it blew up).
    pub e_f: f64,
    /// Baseline MSE (NaN if it blew up).
    pub e_b: f64,
    pub e_r: f64,
    pub log10_er: f64,
    pub flag: Option<CaseFlag>,
    pub ic_total_variation: f64,
    pub max_discontinuity: f64,
}

impl ErrorReport {
    /// Builds a report from the two errors.
    pub fn from_errors(case: usize, descriptor: IcDescriptor, e_f: Option<f64>, e_b: Option<f64>, ic: &[f64]) -> Self {
        let flag = match (e_f, e_b) {
            (None, None) => Some(CaseFlag::BothBlowup),
            (None, Some(_)) => Some(CaseFlag::FinitenetBlowup),
            (Some(_), None) => Some(CaseFlag::BaselineBlowup),
            (Some(_), Some(b)) if b == 0.0 => Some(CaseFlag::ZeroBaselineError),
            _ => None,
        };
        let (e_f, e_b) = (e_f.unwrap_or(f64::NAN), e_b.unwrap_or(f64::NAN));
        let e_r = e_f / e_b;
        Self {
            case,
            descriptor,
            e_f,
            e_b,
            e_r,
            log10_er: e_r.log10(),
            flag,
            ic_total_variation: total_variation_of(ic),
            max_discontinuity: max_jump(ic),
        }
    }

    /// Whether the learned solver beat the baseline on this case.
    pub fn is_win(&self) -> bool {
        match self.flag {
            None => self.e_r < 1.0,
            Some(CaseFlag::BaselineBlowup) => true,
            Some(CaseFlag::ZeroBaselineError) => self.e_f == 0.0,
            Some(_) => false,
        }
    }

    pub fn feature(&self, feature: Feature) -> f64 {
        match feature {
            Feature::IcTotalVariation => self.ic_total_variation,
            Feature::MaxDiscontinuity => self.max_discontinuity,
        }
    }
}

/// Scores one case. Deterministic in its inputs.
pub fn evaluate_case(scheme: &LearnedScheme, params: &ModelParams, case: usize, sample: &Sample) -> Result<ErrorReport> {
    let reference = &sample.reference;
    let n_steps = reference.n_frames() - 1;
    let ic = GridField::new(scheme.grid, sample.initial().to_vec())?;
    let e_f = match scheme.rollout(params, &ic, reference.dt, n_steps) {
        Ok((traj, _)) => Some(trajectory_mse(&traj, reference)?),
        Err(Error::BlowUp { .. }) => None,
        Err(e) => return Err(e),
    };
    let e_b = match baseline_solve_with(&scheme.spec, &ic, reference.dt, n_steps, DEFAULT_BLOWUP_THRESHOLD) {
        Ok(traj) => Some(trajectory_mse(&traj, reference)?),
        Err(Error::BlowUp { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(ErrorReport::from_errors(case, sample.descriptor.clone(), e_f, e_b, &ic.values))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSummary {
    pub n_cases: usize,
    /// Unflagged cases entering the log statistics.
    pub n_scored: usize,
    pub mean_log10_er: f64,
    pub std_log10_er: f64,
    pub wins: usize,
    pub finitenet_blowups: usize,
    pub baseline_blowups: usize,
    pub flagged: usize,
    /// Per-case MSE statistics of each solver over the scored cases.
    pub mean_e_f: f64,
    pub std_e_f: f64,
    pub mean_e_b: f64,
    pub std_e_b: f64,
}

impl CampaignSummary {
    pub fn win_fraction(&self) -> f64 {
        self.wins as f64 / self.n_cases.max(1) as f64
    }

    /// `key = value` text block.
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_cases = {}", self.n_cases);
        let _ = writeln!(s, "n_scored = {}", self.n_scored);
        let _ = writeln!(s, "mean_log10_er = {:.6}", self.mean_log10_er);
        let _ = writeln!(s, "std_log10_er = {:.6}", self.std_log10_er);
        let _ = writeln!(s, "wins = {}", self.wins);
        let _ = writeln!(s, "win_fraction = {:.4}", self.win_fraction());
        let _ = writeln!(s, "flagged = {}", self.flagged);
        let _ = writeln!(s, "finitenet_blowups = {}", self.finitenet_blowups);
        let _ = writeln!(s, "baseline_blowups = {}", self.baseline_blowups);
        let _ = writeln!(s, "mean_error_finitenet = {:.6e}", self.mean_e_f);
        let _ = writeln!(s, "std_error_finitenet = {:.6e}", self.std_e_f);
        let _ = writeln!(s, "mean_error_baseline = {:.6e}", self.mean_e_b);
        let _ = writeln!(s, "std_error_baseline = {:.6e}", self.std_e_b);
        s
    }
}

pub fn summarize(reports: &[ErrorReport]) -> CampaignSummary {
    let scored: Vec<&ErrorReport> = reports.iter().filter(|r| r.flag.is_none()).collect();
    let logs: Vec<f64> = scored.iter().map(|r| r.log10_er).collect();
    let (mean_log10_er, std_log10_er) = mean_std(&logs);
    let (mean_e_f, std_e_f) = mean_std(&scored.iter().map(|r| r.e_f).collect::<Vec<_>>());
    let (mean_e_b, std_e_b) = mean_std(&scored.iter().map(|r| r.e_b).collect::<Vec<_>>());
    let count = |f: CaseFlag| reports.iter().filter(|r| r.flag == Some(f)).count();
    let both = count(CaseFlag::BothBlowup);
    CampaignSummary {
        n_cases: reports.len(),
        n_scored: scored.len(),
        mean_log10_er,
        std_log10_er,
        wins: reports.iter().filter(|r| r.is_win()).count(),
        finitenet_blowups: count(CaseFlag::FinitenetBlowup) + both,
        baseline_blowups: count(CaseFlag::BaselineBlowup) + both,
        flagged: reports.len() - scored.len(),
        mean_e_f,
        std_e_f,
        mean_e_b,
        std_e_b,
    }
}

/// Evaluates `n_cases` fresh initial conditions drawn from the evaluation
/// substream of `seed`. Cases run on up to `jobs` threads and are collected
/// in index order.
pub fn campaign(
    scheme: &LearnedScheme,
    params: &ModelParams,
    problem: &Problem,
    horizon: usize,
    n_cases: usize,
    seed: u64,
    jobs: usize,
) -> Result<(Vec<ErrorReport>, CampaignSummary)> {
    if n_cases == 0 {
        return Err(Error::invalid("a campaign needs at least one case"));
    }
    if problem.grid != scheme.grid || problem.spec.kind != scheme.spec.kind {
        return Err(Error::invalid("problem and checkpoint describe different setups"));
    }
    let reports: Vec<ErrorReport> = run_parallel(jobs, || {
        (0..n_cases)
            .into_par_iter()
            .map(|case| {
                let sample = draw_samples(problem, horizon, seed, Purpose::EvalIc, case as u64, 1, None)?.remove(0);
                evaluate_case(scheme, params, case, &sample)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let summary = summarize(&reports);
    Ok((reports, summary))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    IcTotalVariation,
    MaxDiscontinuity,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::IcTotalVariation => "ic_total_variation",
            Feature::MaxDiscontinuity => "max_discontinuity",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub feature: Feature,
    /// `(feature, log10_er)` sorted by feature.
    pub pairs: Vec<(f64, f64)>,
    /// Pearson coefficient; `None` with fewer than 3 points or no variance.
    pub coefficient: Option<f64>,
}

pub fn correlate(reports: &[ErrorReport], feature: Feature) -> Correlation {
    let mut pairs: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| r.flag.is_none())
        .map(|r| (r.feature(feature), r.log10_er))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Correlation {
        feature,
        coefficient: pearson(&pairs),
        pairs,
    }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len();
    if n < 3 {
        return None;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let scale = 1e-24 * (mx * mx + my * my).max(1.0) * n as f64;
    if sxx <= scale || syy <= scale {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

/// Probability mass of `log10_er` over unflagged reports, in bins
/// `[k w, (k + 1) w)`. Only occupied bins are returned, in increasing order.
pub fn histogram(reports: &[ErrorReport], bin_width: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
    }
    let values: Vec<f64> = reports.iter().filter(|r| r.flag.is_none()).map(|r| r.log10_er).collect();
    if values.is_empty() {
        return Err(Error::invalid("histogram needs at least one unflagged report"));
    }
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for v in &values {
        *counts.entry((v / bin_width).floor() as i64).or_default() += 1;
    }
    let total = values.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(k, c)| HistogramBin {
            lower: k as f64 * bin_width,
            upper: (k + 1) as f64 * bin_width,
            mass: c as f64 / total,
        })
        .collect())
}

/// Columns: `case,e_f,e_b,e_r,log10_er,flag,ic_total_variation,max_discontinuity,win`.
pub fn write_reports_csv<W: Write>(reports: &[ErrorReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "case,e_f,e_b,e_r,log10_er,flag,ic_total_variation,max_discontinuity,win")?;
    for r in reports {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{}",
            r.case,
            r.e_f,
            r.e_b,
            r.e_r,
            r.log10_er,
            r.flag.map_or("", CaseFlag::name),
            r.ic_total_variation,
            r.max_discontinuity,
            r.is_win() as u8
        )?;
    }
    Ok(())
}

/// Columns: `bin_lower,bin_upper,mass`.
pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], mut out: W) -> std::io::Result<()> {
    writeln!(out, "bin_lower,bin_upper,mass")?;
    for b in bins {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", b.lower, b.upper, b.mass)?;
    }
    Ok(())
}

/// Columns: `feature,value,log10_er`, then a trailing `# pearson = ...` line.
pub fn write_correlation_csv<W: Write>(corrs: &[Correlation], mut out: W) -> std::io::Result<()> {
    writeln!(out, "feature,value,log10_er")?;
    for c in corrs {
        for (x, y) in &c.pairs {
            writeln!(out, "{},{:.16e},{:.16e}", c.feature.name(), x, y)?;
        }
    }
    for c in corrs {
        match c.coefficient {
            Some(r) => writeln!(out, "# pearson {} = {:.6}", c.feature.name(), r)?,
            None => writeln!(out, "# pearson {} = undefined", c.feature.name())?,
        }
    }
    Ok(())
}
