//! CPU vs XPU backend selection with a polynomial-kernel SVM.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_LAUNCH_OVERHEAD: Duration = Duration::from_millis(2);
pub const DEFAULT_REPS: usize = 5;

/// Shape ratios (m, n, k) as multiples of a base magnitude.
pub const RATIOS: [[usize; 3]; 4] = [[1, 1, 1], [1, 2, 3], [3, 1, 2], [1, 3, 6]];
pub const TRAIN_MAGNITUDES: [usize; 20] = [4, 5, 7, 8, 10, 12, 15, 19, 23, 29, 36, 44, 55, 69, 86, 107, 133, 165, 206, 256];
pub const HELDOUT_MAGNITUDES: [usize; 5] = [6, 20, 40, 80, 112];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfitError {
    #[error("backend `{backend}` failed: {msg}")]
    BackendFailure { backend: String, msg: String },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("bad sampling request: {0}")]
    BadRequest(String),
    #[error("io error on `{path}`: {msg}")]
    Io { path: String, msg: String },
    #[error("malformed model: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    Cpu,
    Xpu,
}

/// Row-major single-precision GEMM `C = A·B`.
pub trait GemmBackend {
    fn name(&self) -> &str;
    fn gemm(&self, a: &[f32], b: &[f32], c: &mut [f32], m: usize, n: usize, k: usize) -> Result<(), ProfitError>;
}

fn check_shapes(name: &str, a: &[f32], b: &[f32], c: &[f32], m: usize, n: usize, k: usize) -> Result<(), ProfitError> {
    if a.len() != m * k || b.len() != k * n || c.len() != m * n {
        return Err(ProfitError::BackendFailure {
            backend: name.into(),
            msg: format!("buffers {}/{}/{} do not fit {m}x{n}x{k}", a.len(), b.len(), c.len()),
        });
    }
    Ok(())
}

/// Textbook triple loop.
#[derive(Debug, Clone, Default)]
pub struct NaiveCpu;

impl GemmBackend for NaiveCpu {
    fn name(&self) -> &str {
        "cpu-naive"
    }

    fn gemm(&self, a: &[f32], b: &[f32], c: &mut [f32], m: usize, n: usize, k: usize) -> Result<(), ProfitError> {
        check_shapes(self.name(), a, b, c, m, n, k)?;
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        Ok(())
    }
}

/// Cache-blocked, row-parallel GEMM behind a fixed per-call launch cost.
#[derive(Debug, Clone)]
pub struct BlockedXpu {
    pub launch_overhead: Duration,
    pub threads: usize,
    pub block: usize,
}

impl Default for BlockedXpu {
    fn default() -> Self {
        BlockedXpu {
            launch_overhead: DEFAULT_LAUNCH_OVERHEAD,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            block: 64,
        }
    }
}

fn blocked_rows(a: &[f32], b: &[f32], c: &mut [f32], rows: usize, n: usize, k: usize, bs: usize) {
    c.iter_mut().for_each(|v| *v = 0.0);
    for p0 in (0..k).step_by(bs) {
        let p1 = (p0 + bs).min(k);
        for j0 in (0..n).step_by(bs) {
            let j1 = (j0 + bs).min(n);
            for i in 0..rows {
                let crow = &mut c[i * n + j0..i * n + j1];
                for p in p0..p1 {
                    let av = a[i * k + p];
                    let brow = &b[p * n + j0..p * n + j1];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
    }
}

impl GemmBackend for BlockedXpu {
    fn name(&self) -> &str {
        "xpu-blocked"
    }

    fn gemm(&self, a: &[f32], b: &[f32], c: &mut [f32], m: usize, n: usize, k: usize) -> Result<(), ProfitError> {
        check_shapes(self.name(), a, b, c, m, n, k)?;
        let start = Instant::now();
        while start.elapsed() < self.launch_overhead {
            std::hint::spin_loop();
        }
        let threads = self.threads.clamp(1, m.max(1));
        let rows_per = m.div_ceil(threads).max(1);
        let bs = self.block.max(1);
        if threads == 1 {
            blocked_rows(a, b, c, m, n, k, bs);
            return Ok(());
        }
        std::thread::scope(|s| {
            for (t, chunk) in c.chunks_mut(rows_per * n).enumerate() {
                let rows = chunk.len() / n.max(1);
                let a_rows = &a[t * rows_per * k..(t * rows_per + rows) * k];
                s.spawn(move || blocked_rows(a_rows, b, chunk, rows, n, k, bs));
            }
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub sizes: Vec<usize>,
    pub t_cpu: f64,
    pub t_xpu: f64,
    /// 1 when the XPU is faster.
    pub label: u8,
}

impl TimingSample {
    pub fn new(sizes: Vec<usize>, t_cpu: f64, t_xpu: f64) -> Self {
        let label = u8::from(t_xpu < t_cpu);
        TimingSample { sizes, t_cpu, t_xpu, label }
    }

    pub fn work(&self) -> f64 {
        self.sizes.iter().map(|&s| s as f64).product()
    }
}

fn grid(mags: &[usize]) -> Vec<Vec<usize>> {
    RATIOS.iter().flat_map(|r| mags.iter().map(move |&m| r.iter().map(|x| x * m).collect())).collect()
}

/// 4 shape ratios × 20 magnitudes.
pub fn default_training_grid() -> Vec<Vec<usize>> {
    grid(&TRAIN_MAGNITUDES)
}

/// 4 shape ratios × 5 magnitudes disjoint from the training grid.
pub fn default_heldout_grid() -> Vec<Vec<usize>> {
    grid(&HELDOUT_MAGNITUDES)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn time_backend(be: &dyn GemmBackend, a: &[f32], b: &[f32], c: &mut [f32], s: &[usize], reps: usize) -> Result<f64, ProfitError> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        be.gemm(a, b, c, s[0], s[1], s[2])?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Median-of-`reps` wall-clock timings of both backends on each `(m, n, k)` point.
pub fn sample_timings(
    cpu: &dyn GemmBackend,
    xpu: &dyn GemmBackend,
    grid: &[Vec<usize>],
    reps: usize,
) -> Result<Vec<TimingSample>, ProfitError> {
    if grid.is_empty() {
        return Err(ProfitError::BadRequest("empty grid".into()));
    }
    if reps < 3 {
        return Err(ProfitError::BadRequest(format!("{reps} repetitions, need at least 3")));
    }
    let mut out = Vec::with_capacity(grid.len());
    for s in grid {
        if s.len() != 3 || s.iter().any(|&v| v == 0) {
            return Err(ProfitError::BadRequest(format!("bad size tuple {s:?}")));
        }
        let (m, n, k) = (s[0], s[1], s[2]);
        let a: Vec<f32> = (0..m * k).map(|i| ((i % 7) as f32 - 3.0) / 4.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i % 5) as f32 - 2.0) / 3.0).collect();
        let mut c = vec![0.0f32; m * n];
        let t_cpu = time_backend(cpu, &a, &b, &mut c, s, reps)?;
        let t_xpu = time_backend(xpu, &a, &b, &mut c, s, reps)?;
        out.push(TimingSample::new(s.clone(), t_cpu, t_xpu));
    }
    Ok(out)
}

pub fn write_csv(path: &Path, dims: &[&str], data: &[TimingSample]) -> Result<(), ProfitError> {
    let io = |e: &dyn std::fmt::Display| ProfitError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    let mut header: Vec<&str> = dims.to_vec();
    header.extend(["t_cpu", "t_xpu", "label"]);
    w.write_record(&header).map_err(|e| io(&e))?;
    for s in data {
        let mut rec: Vec<String> = s.sizes.iter().map(|v| v.to_string()).collect();
        rec.extend([format!("{:e}", s.t_cpu), format!("{:e}", s.t_xpu), s.label.to_string()]);
        w.write_record(&rec).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

pub fn read_csv(path: &Path) -> Result<Vec<TimingSample>, ProfitError> {
    let io = |e: &dyn std::fmt::Display| ProfitError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut r = csv::Reader::from_path(path).map_err(|e| io(&e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io(&e))?;
        let n = rec.len();
        if n < 4 {
            return Err(io(&"short record"));
        }
        let sizes = (0..n - 3).map(|i| rec[i].parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|e| io(&e))?;
        let t_cpu: f64 = rec[n - 3].parse().map_err(|e| io(&e))?;
        let t_xpu: f64 = rec[n - 2].parse().map_err(|e| io(&e))?;
        out.push(TimingSample::new(sizes, t_cpu, t_xpu));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyper {
    pub degree: i32,
    pub gamma: f64,
    pub c: f64,
    pub coef0: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper { degree: 3, gamma: 1.0, c: 100.0, coef0: 0.0, tol: 1e-3, max_iter: 1_000_000 }
    }
}

impl SvmHyper {
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        (self.gamma * dot + self.coef0).powi(self.degree)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub schema_version: u32,
    pub hyper: SvmHyper,
    /// Normalized size tuples.
    pub support_vectors: Vec<Vec<f64>>,
    /// αᵢ·yᵢ per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    /// Training size range per dimension.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub training_accuracy: f64,
    pub iterations: usize,
}

/// Log-size per dimension, scaled so the training range maps to [0, 1].
fn normalize(x: &[usize], min: &[f64], max: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(min.iter().zip(max))
        .map(|(&v, (lo, hi))| if hi > lo { ((v as f64).ln() - lo.ln()) / (hi.ln() - lo.ln()) } else { 0.0 })
        .collect()
}

/// Soft-margin dual solved by pairwise (SMO) updates with second-order working-set selection.
pub fn train_svm(data: &[TimingSample], hp: &SvmHyper) -> Result<SvmModel, ProfitError> {
    // repeated (sizes, label) points carry no extra information
    let mut uniq: Vec<&TimingSample> = Vec::new();
    for s in data {
        if !uniq.iter().any(|u| u.sizes == s.sizes && u.label == s.label) {
            uniq.push(s);
        }
    }
    if !uniq.iter().any(|s| s.label == 0) || !uniq.iter().any(|s| s.label == 1) {
        return Err(ProfitError::DegenerateData("both CPU and XPU labels are required".into()));
    }
    if data.len() < 10 {
        return Err(ProfitError::DegenerateData(format!("{} samples, need at least 10", data.len())));
    }
    let dim = uniq[0].sizes.len();
    if uniq.iter().any(|s| s.sizes.len() != dim) {
        return Err(ProfitError::DegenerateData("mixed size-tuple lengths".into()));
    }
    let min: Vec<f64> = (0..dim).map(|d| uniq.iter().map(|s| s.sizes[d] as f64).fold(f64::INFINITY, f64::min)).collect();
    let max: Vec<f64> = (0..dim).map(|d| uniq.iter().map(|s| s.sizes[d] as f64).fold(f64::NEG_INFINITY, f64::max)).collect();
    let x: Vec<Vec<f64>> = uniq.iter().map(|s| normalize(&s.sizes, &min, &max)).collect();
    let y: Vec<f64> = uniq.iter().map(|s| if s.label == 1 { 1.0 } else { -1.0 }).collect();
    let l = x.len();
    let k: Vec<Vec<f64>> = (0..l).map(|i| (0..l).map(|j| hp.kernel(&x[i], &x[j])).collect()).collect();
    let c = hp.c;
    let mut alpha = vec![0.0; l];
    let mut grad = vec![-1.0; l];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let mut iter = 0;
    while iter < hp.max_iter {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..l {
            if up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..l {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (k[i][i] + k[t][t] - 2.0 * k[i][t]).max(1e-12);
                if -b * b / a < best {
                    best = -b * b / a;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < hp.tol {
            break;
        }
        iter += 1;
        let (oi, oj) = (alpha[i], alpha[j]);
        let quad = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(1e-12);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = oi - oj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= 0.0 && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = oi + oj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - oi, alpha[j] - oj);
        for t in 0..l {
            grad[t] += y[t] * (y[i] * k[i][t] * di + y[j] * k[j][t] * dj);
        }
    }
    // offset from free vectors, else the midpoint of the feasible interval
    let (mut sum, mut nfree) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..l {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            nfree += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if nfree > 0 { sum / nfree as f64 } else { (ub + lb) / 2.0 };
    let (mut sv, mut coef) = (Vec::new(), Vec::new());
    for t in 0..l {
        if alpha[t] > 0.0 {
            sv.push(x[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    let mut model = SvmModel {
        schema_version: MODEL_SCHEMA_VERSION,
        hyper: *hp,
        support_vectors: sv,
        dual_coef: coef,
        bias: -rho,
        min,
        max,
        training_accuracy: 0.0,
        iterations: iter,
    };
    let correct = data.iter().filter(|s| model.predict(&s.sizes) == label_backend(s.label)).count();
    model.training_accuracy = correct as f64 / data.len() as f64;
    Ok(model)
}

fn label_backend(label: u8) -> Backend {
    if label == 1 {
        Backend::Xpu
    } else {
        Backend::Cpu
    }
}

impl SvmModel {
    pub fn decision(&self, sizes: &[usize]) -> f64 {
        let x = normalize(sizes, &self.min, &self.max);
        self.support_vectors.iter().zip(&self.dual_coef).map(|(s, a)| a * self.hyper.kernel(s, &x)).sum::<f64>() + self.bias
    }

    pub fn predict(&self, sizes: &[usize]) -> Backend {
        if self.decision(sizes) > 0.0 {
            Backend::Xpu
        } else {
            Backend::Cpu
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ProfitError> {
        let m: SvmModel = serde_json::from_str(text).map_err(|e| ProfitError::Json(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ProfitError::Json(format!("schema version {} unsupported", m.schema_version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfitError> {
        let mut f = std::fs::File::create(path).map_err(|e| ProfitError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        writeln!(f, "{}", self.to_json()).map_err(|e| ProfitError::Io { path: path.display().to_string(), msg: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ProfitError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProfitError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_json(&text)
    }
}

/// Backend choice plus the time the decision took.
pub fn predict_backend(model: &SvmModel, sizes: &[usize]) -> (Backend, Duration) {
    let t = Instant::now();
    let b = model.predict(sizes);
    (b, t.elapsed())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Size tuple divided by the gcd of its entries.
pub fn shape_ratio(sizes: &[usize]) -> Vec<usize> {
    let g = sizes.iter().fold(0, |g, &v| gcd(g, v)).max(1);
    sizes.iter().map(|v| v / g).collect()
}

/// Work interval between the same-ratio training points bracketing `sizes`, when
/// those two neighbours carry opposite labels.
pub fn crossover_band(train: &[TimingSample], sizes: &[usize]) -> Option<(f64, f64)> {
    let r = shape_ratio(sizes);
    let w: f64 = sizes.iter().map(|&v| v as f64).product();
    let same = train.iter().filter(|s| shape_ratio(&s.sizes) == r);
    let below = same.clone().filter(|s| s.work() <= w).max_by(|a, b| a.work().total_cmp(&b.work()))?;
    let above = same.filter(|s| s.work() >= w).min_by(|a, b| a.work().total_cmp(&b.work()))?;
    (below.label != above.label).then(|| (below.work(), above.work()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mispredicted: Vec<Vec<usize>>,
    /// Every misprediction lies in its crossover band.
    pub errors_in_band: bool,
    pub median_latency_ms: f64,
}

pub fn evaluate(model: &SvmModel, train: &[TimingSample], heldout: &[TimingSample]) -> HeldOutReport {
    let mut lat = Vec::with_capacity(heldout.len());
    let mut mispredicted = Vec::new();
    let mut in_band = true;
    for s in heldout {
        let (b, dt) = predict_backend(model, &s.sizes);
        lat.push(dt.as_secs_f64() * 1e3);
        if b != label_backend(s.label) {
            mispredicted.push(s.sizes.clone());
            in_band &= crossover_band(train, &s.sizes).is_some_and(|(lo, hi)| (lo..=hi).contains(&s.work()));
        }
    }
    let correct = heldout.len() - mispredicted.len();
    HeldOutReport {
        total: heldout.len(),
        correct,
        accuracy: if heldout.is_empty() { 0.0 } else { correct as f64 / heldout.len() as f64 },
        mispredicted,
        errors_in_band: in_band,
        median_latency_ms: if lat.is_empty() { 0.0 } else { median(lat) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(threshold: f64) -> Vec<TimingSample> {
        default_training_grid()
            .into_iter()
            .map(|s| {
                let w: f64 = s.iter().map(|&v| v as f64).product();
                let (c, x) = if w > threshold { (2.0, 1.0) } else { (1.0, 2.0) };
                TimingSample::new(s, c, x)
            })
            .collect()
    }

    #[test]
    fn kernel_arithmetic() {
        let hp = SvmHyper::default();
        assert_eq!(hp.kernel(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]), 27.0);
        assert_eq!(hp.kernel(&[1.0, 0.0, 2.0], &[0.5, 3.0, 0.25]), 1.0);
    }

    #[test]
    fn backends_agree() {
        let (m, n, k) = (37, 70, 19);
        let a: Vec<f32> = (0..m * k).map(|i| (i % 11) as f32 * 0.1).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i % 13) as f32 * 0.1 - 0.5).collect();
        let mut c1 = vec![0.0; m * n];
        let mut c2 = vec![9.0; m * n];
        NaiveCpu.gemm(&a, &b, &mut c1, m, n, k).unwrap();
        let xpu = BlockedXpu { launch_overhead: Duration::ZERO, threads: 3, block: 16 };
        xpu.gemm(&a, &b, &mut c2, m, n, k).unwrap();
        assert!(c1.iter().zip(&c2).all(|(x, y)| (x - y).abs() < 1e-4));
        assert!(matches!(NaiveCpu.gemm(&a, &b, &mut c1, m, n, k + 1), Err(ProfitError::BackendFailure { .. })));
    }

    #[test]
    fn separable_synthetic_set_is_learned() {
        let data = synthetic(1e5);
        let m = train_svm(&data, &SvmHyper::default()).unwrap();
        assert_eq!(m.training_accuracy, 1.0);
        assert_eq!(m.predict(&[4, 4, 4]), Backend::Cpu);
        assert_eq!(m.predict(&[128, 128, 128]), Backend::Xpu);
        let twice: Vec<_> = data.iter().chain(&data).cloned().collect();
        let m2 = train_svm(&twice, &SvmHyper::default()).unwrap();
        assert_eq!(m2.support_vectors, m.support_vectors);
        assert_eq!(m2.dual_coef, m.dual_coef);
        assert_eq!(m2.bias, m.bias);
        assert_eq!(SvmModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn single_class_is_degenerate() {
        let data = synthetic(f64::INFINITY);
        assert!(matches!(train_svm(&data, &SvmHyper::default()), Err(ProfitError::DegenerateData(_))));
    }

    #[test]
    fn bands_and_ratios() {
        assert_eq!(shape_ratio(&[12, 24, 36]), vec![1, 2, 3]);
        let data = synthetic(1e5);
        assert_eq!(crossover_band(&data, &[50, 50, 50]), Some((44.0f64.powi(3), 55.0f64.powi(3))));
        assert_eq!(crossover_band(&data, &[6, 6, 6]), None);
        assert_eq!(crossover_band(&data, &[2, 2, 2]), None);
    }

    #[test]
    fn sampler_preconditions() {
        let xpu = BlockedXpu { launch_overhead: Duration::ZERO, threads: 1, block: 8 };
        assert!(sample_timings(&NaiveCpu, &xpu, &[], 3).is_err());
        assert!(sample_timings(&NaiveCpu, &xpu, &[vec![2, 2, 2]], 2).is_err());
        let s = sample_timings(&NaiveCpu, &xpu, &[vec![2, 3, 4], vec![5, 5, 5]], 3).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|t| t.label == u8::from(t.t_xpu < t.t_cpu)));
    }
}
