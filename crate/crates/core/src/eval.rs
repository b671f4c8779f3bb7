//! Error metric, factor alignment, synthetic problems and the benchmark
//! harness.

use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::aggregation::{aggregate_views, AggregatedViews, AggregationOperator, ScenarioSpec};
use crate::error::{shape_err, Error, Result};
use crate::solvers::{run_solver, SolverKind, SolverSettings};
use crate::tensor::{check_dims, reconstruct, Dims, FactorTriple, Matrix, Mode, Tensor3};

/// `||X - X^||^2 / ||X||^2`.
pub fn nde(truth: &Tensor3, estimate: &Tensor3) -> Result<f64> {
    check_dims(truth.dims(), estimate.dims(), "nde")?;
    let den = truth.frobenius_norm_sq();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num: f64 = truth
        .values()
        .iter()
        .zip(estimate.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatch {
    /// Column `permutation[r]` of the second triple pairs with column `r`
    /// of the first.
    pub permutation: Vec<usize>,
    /// Per-column scales applied to the second triple; each triple
    /// multiplies to 1.
    pub scalings: Vec<[f64; 3]>,
    /// `||F1 - F2 P S|| / ||F1||` over all three factors.
    pub residual: f64,
}

/// Aligns `f2` to `f1` up to column permutation and compensating scaling.
/// Columns are paired greedily by the product of absolute cosines over
/// the three modes.
pub fn match_factors(f1: &FactorTriple, f2: &FactorTriple) -> Result<FactorMatch> {
    if f1.dims() != f2.dims() || f1.rank() != f2.rank() {
        return shape_err(format!(
            "cannot align {} rank {} with {} rank {}",
            f1.dims(),
            f1.rank(),
            f2.dims(),
            f2.rank()
        ));
    }
    let r = f1.rank();
    let cos = |x: nalgebra::DVectorView<f64>, y: nalgebra::DVectorView<f64>| {
        let d = x.norm() * y.norm();
        if d > 0.0 {
            (x.dot(&y) / d).abs()
        } else {
            0.0
        }
    };
    let mut pairs = Vec::with_capacity(r * r);
    for p in 0..r {
        for q in 0..r {
            let score: f64 = Mode::ALL
                .iter()
                .map(|&m| cos(f1.factor(m).column(p).into(), f2.factor(m).column(q).into()))
                .product();
            pairs.push((score, p, q));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut permutation = vec![usize::MAX; r];
    let mut taken = vec![false; r];
    for (_, p, q) in pairs {
        if permutation[p] == usize::MAX && !taken[q] {
            permutation[p] = q;
            taken[q] = true;
        }
    }
    let mut scalings = Vec::with_capacity(r);
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, &q) in permutation.iter().enumerate() {
        let ls = |m: Mode| {
            let x = f1.factor(m).column(p);
            let y = f2.factor(m).column(q);
            let yy = y.norm_squared();
            if yy > 0.0 {
                x.dot(&y) / yy
            } else {
                0.0
            }
        };
        let (s1, s2) = (ls(Mode::One), ls(Mode::Two));
        let s3 = if s1 * s2 != 0.0 { 1.0 / (s1 * s2) } else { 0.0 };
        let s = [s1, s2, s3];
        for m in Mode::ALL {
            let x = f1.factor(m).column(p);
            let y = f2.factor(m).column(q) * s[m.index()];
            num += (x - y).norm_squared();
            den += x.norm_squared();
        }
        scalings.push(s);
    }
    let residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(FactorMatch {
        permutation,
        scalings,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorDistribution {
    /// Uniform on (0, 1).
    Uniform01,
    /// Uniform on (-1, 1).
    #[default]
    UniformSymmetric,
    /// Standard normal.
    Gaussian,
}

impl FactorDistribution {
    fn matrix(self, rows: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, rank, |_, _| match self {
            FactorDistribution::Uniform01 => rng.random_range(0.0..1.0),
            FactorDistribution::UniformSymmetric => rng.random_range(-1.0..1.0),
            FactorDistribution::Gaussian => StandardNormal.sample(rng),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub factors: FactorTriple,
    pub truth: Tensor3,
    pub views: AggregatedViews,
    pub op: AggregationOperator,
}

const FACTOR_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Random rank-`rank` ground truth and its views under `spec`. `noise` is
/// the standard deviation of Gaussian noise added to each observed view
/// entry, relative to that view's root-mean-square entry. Factors, masks
/// and noise come from independent streams of `spec.seed`.
pub fn make_synthetic(
    dims: Dims,
    rank: usize,
    distribution: FactorDistribution,
    noise: f64,
    spec: &ScenarioSpec,
) -> Result<SyntheticInstance> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(FACTOR_STREAM);
    let factors = FactorTriple::new(
        distribution.matrix(dims.i, rank, &mut rng),
        distribution.matrix(dims.j, rank, &mut rng),
        distribution.matrix(dims.k, rank, &mut rng),
    )?;
    let truth = reconstruct(&factors, dims)?;
    let op = spec.operator(dims)?;
    let mut views = aggregate_views(&truth, &op, spec)?;
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(NOISE_STREAM);
        views.y_t = add_noise(&views.y_t, views.mask_t.bits(), noise, &mut rng)?;
        views.y_c = add_noise(&views.y_c, views.mask_c.bits(), noise, &mut rng)?;
    }
    Ok(SyntheticInstance {
        factors,
        truth,
        views,
        op,
    })
}

fn add_noise(y: &Tensor3, observed: &[bool], level: f64, rng: &mut ChaCha8Rng) -> Result<Tensor3> {
    let n = observed.iter().filter(|&&b| b).count().max(1);
    let rms = (y.frobenius_norm_sq() / n as f64).sqrt();
    let values = y
        .values()
        .iter()
        .zip(observed)
        .map(|(&v, &b)| {
            if b {
                let z: f64 = StandardNormal.sample(rng);
                v + level * rms * z
            } else {
                0.0
            }
        })
        .collect();
    Tensor3::from_vec(y.dims(), values)
}

/// One synthetic problem of a benchmark suite.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub name: String,
    pub dims: [usize; 3],
    pub rank: usize,
    pub distribution: FactorDistribution,
    pub noise: f64,
    pub scenario: ScenarioSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSuite {
    pub instances: Vec<InstanceSpec>,
    pub solvers: Vec<SolverKind>,
    pub settings: SolverSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub instance: String,
    pub solver: SolverKind,
    pub rank: usize,
    pub nde: Option<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Solver status, or `error: ...` when the run failed.
    pub status: String,
    pub aggregation_level: usize,
}

/// Runs every solver on every instance in parallel. Failures become rows
/// with an error status. Rows are ordered by instance, then solver, as
/// listed in the suite.
pub fn run_benchmark(suite: &BenchmarkSuite) -> Vec<BenchmarkRow> {
    let jobs: Vec<(usize, usize)> = (0..suite.instances.len())
        .flat_map(|i| (0..suite.solvers.len()).map(move |s| (i, s)))
        .collect();
    let mut rows: Vec<((usize, usize), BenchmarkRow)> = jobs
        .into_par_iter()
        .map(|(i, s)| ((i, s), run_one(&suite.instances[i], suite.solvers[s], &suite.settings)))
        .collect();
    rows.sort_by_key(|(key, _)| *key);
    rows.into_iter().map(|(_, r)| r).collect()
}

fn run_one(inst: &InstanceSpec, solver: SolverKind, settings: &SolverSettings) -> BenchmarkRow {
    let mut row = BenchmarkRow {
        instance: inst.name.clone(),
        solver,
        rank: settings.rank,
        nde: None,
        iterations: 0,
        wall_ms: 0.0,
        status: String::new(),
        aggregation_level: inst.scenario.aggregation_level(),
    };
    let [i, j, k] = inst.dims;
    let result = make_synthetic(Dims::new(i, j, k), inst.rank, inst.distribution, inst.noise, &inst.scenario)
        .and_then(|syn| run_solver(solver, &syn.views, Some(&syn.op), Some(&syn.truth), settings));
    match result {
        Ok((_, report)) => {
            row.nde = report.nde;
            row.iterations = report.iterations;
            row.wall_ms = report.wall_ms;
            row.status = report.status.name().to_string();
        }
        Err(e) => {
            log::warn!("{} / {}: {}", inst.name, solver, e);
            row.status = format!("error: {e}");
        }
    }
    row
}

pub fn write_benchmark_csv(rows: &[BenchmarkRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "instance,solver,rank,nde,iterations,wall_ms,status")?;
    for r in rows {
        let nde = r.nde.map(|v| format!("{v:e}")).unwrap_or_default();
        let status = if r.status.contains(',') || r.status.contains('"') {
            format!("\"{}\"", r.status.replace('"', "\"\""))
        } else {
            r.status.clone()
        };
        writeln!(
            w,
            "{},{},{},{},{},{:.3},{}",
            r.instance, r.solver, r.rank, nde, r.iterations, r.wall_ms, status
        )?;
    }
    Ok(())
}

/// Line plot of log10 NDE against aggregation level, one line per solver,
/// as a standalone SVG document.
pub fn nde_plot_svg(rows: &[BenchmarkRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

    let pts: Vec<(SolverKind, f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let v = r.nde?;
            (v > 0.0).then(|| (r.solver, r.aggregation_level as f64, v.log10()))
        })
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if pts.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, W / 2.0, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(_, x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let _ = writeln!(
        svg,
        r#"<path d="M{M} {M} V{} H{}" fill="none" stroke="black"/>"#,
        H - M,
        W - M
    );
    let mut tick = y0;
    while tick <= y1 {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">1e{}</text>"#,
            M - 6.0,
            sy(tick) + 4.0,
            tick as i64
        );
        tick += 1.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">aggregation level</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">NDE</text>"#,
        H / 2.0,
        H / 2.0
    );
    let mut solvers: Vec<SolverKind> = pts.iter().map(|p| p.0).collect();
    solvers.sort();
    solvers.dedup();
    for (n, s) in solvers.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let mut line: Vec<(f64, f64)> = pts.iter().filter(|p| p.0 == *s).map(|p| (p.1, p.2)).collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        // several instances at one level are averaged in log space
        let mut merged: Vec<(f64, f64, usize)> = Vec::new();
        for (x, y) in line {
            match merged.last_mut() {
                Some(m) if m.0 == x => {
                    m.1 += y;
                    m.2 += 1;
                }
                _ => merged.push((x, y, 1)),
            }
        }
        let path: Vec<String> = merged
            .iter()
            .enumerate()
            .map(|(i, &(x, y, c))| {
                format!("{}{:.1} {:.1}", if i == 0 { 'M' } else { 'L' }, sx(x), sy(y / c as f64))
            })
            .collect();
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        for &(x, y, c) in &merged {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y / c as f64)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - M + 5.0,
            M + 16.0 * n as f64,
            s
        );
    }
    svg.push_str("</svg>\n");
    svg
}
