use std::collections::{BTreeSet, HashMap};

use super::sizes::{SizeMap, SizeRules};
use super::{AnalysisError, DimSpec};
use crate::exec::{Buffer, Engine, ExecStatus, MemoryImage, DEFAULT_SCRATCH_VALUE, DEFAULT_STEP_LIMIT};
use crate::minilang::{FunctionIR, ParamKind};

pub const GEMM_PROBE_POOL: &[i64] = &[7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47];
pub const GEMM_PROBE_POOL_ALT: &[i64] = &[5, 9, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
pub const CONV_PROBE_POOL: &[i64] = &[2, 3, 5, 7, 11, 13, 17, 19, 23];
pub const CONV_PROBE_POOL_ALT: &[i64] = &[3, 2, 7, 5, 13, 11, 19, 17, 23];

const MAX_LEAVES: usize = 200_000;
const POOL_EXTRA: usize = 8;

/// Which pool a caller probes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbePool {
    Gemm,
    GemmAlt,
    Conv,
    ConvAlt,
}

impl ProbePool {
    pub fn values(self) -> &'static [i64] {
        match self {
            ProbePool::Gemm => GEMM_PROBE_POOL,
            ProbePool::GemmAlt => GEMM_PROBE_POOL_ALT,
            ProbePool::Conv => CONV_PROBE_POOL,
            ProbePool::ConvAlt => CONV_PROBE_POOL_ALT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimDetection {
    pub spec: DimSpec,
    pub extent: i64,
    pub max_index: i64,
    /// Candidates whose extent was checked before the winner.
    pub rejected: usize,
}

fn is_prime(n: i64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

fn pool_at(pool: &[i64], i: usize) -> i64 {
    if let Some(v) = pool.get(i) {
        return *v;
    }
    let mut v = pool.iter().copied().max().unwrap_or(1);
    for _ in pool.len()..=i {
        v += 1;
        while !is_prime(v) {
            v += 1;
        }
    }
    v
}

/// Multisets of positions `0..n` with at most `max_rank` elements, as non-decreasing vectors.
fn multisets(n: usize, max_rank: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, max_rank, &mut Vec::new(), &mut out);
    out
}

fn product(values: &[i64], positions: &[usize]) -> Option<i64> {
    positions.iter().try_fold(1i64, |acc, &p| acc.checked_mul(values[p]))
}

/// Extent-collision counter over all rank ≤ `max_rank` multisets of a fixed parameter list.
/// Positions in the same class are interchangeable and never count against each other.
struct Collisions {
    sets: Vec<Vec<usize>>,
    keys: Vec<u32>,
}

impl Collisions {
    fn new(classes: &[usize], max_rank: usize) -> Self {
        let sets = multisets(classes.len(), max_rank);
        let mut interned: HashMap<Vec<usize>, u32> = HashMap::new();
        let keys = sets
            .iter()
            .map(|m| {
                let mut key: Vec<usize> = m.iter().map(|&i| classes[i]).collect();
                key.sort_unstable();
                let next = interned.len() as u32;
                *interned.entry(key).or_insert(next)
            })
            .collect();
        Collisions { sets, keys }
    }

    /// Number of multisets sharing an extent with a different one; with `strict`, stops at
    /// the first collision. `None` on overflow.
    fn count(&self, values: &[i64], buf: &mut Vec<(i64, u32)>, strict: bool) -> Option<usize> {
        buf.clear();
        for (m, k) in self.sets.iter().zip(&self.keys) {
            buf.push((product(values, m)?, *k));
        }
        buf.sort_unstable();
        buf.dedup();
        let mut n = 0;
        for w in buf.windows(2) {
            if w[0].0 == w[1].0 {
                n += 1;
                if strict {
                    break;
                }
            }
        }
        Some(n)
    }
}

struct ProbeSearch<'a> {
    f: &'a FunctionIR,
    rules: SizeRules,
    ints: Vec<&'a str>,
    check: Collisions,
    buf: Vec<(i64, u32)>,
    free: Vec<&'a str>,
    options: Vec<Vec<i64>>,
    leaves: usize,
    /// When set, only collision-free assignments are accepted.
    strict: bool,
    best: Option<(usize, f64, SizeMap)>,
}

impl ProbeSearch<'_> {
    fn go(&mut self, depth: usize, sizes: &mut SizeMap, used: &mut BTreeSet<i64>, cost: f64) {
        if self.leaves >= MAX_LEAVES || self.best.as_ref().is_some_and(|(c, b, _)| *c == 0 && cost >= *b) {
            return;
        }
        if depth == self.free.len() {
            self.leaves += 1;
            let mut full = sizes.clone();
            if self.rules.derive(&mut full).is_err() {
                return;
            }
            let values: Vec<i64> = self.ints.iter().map(|p| full[*p]).collect();
            if values.iter().any(|v| *v < 2) {
                return;
            }
            let c = match self.check.count(&values, &mut self.buf, self.strict) {
                Some(c) if !self.strict || c == 0 => c,
                _ => return,
            };
            if self.best.as_ref().is_none_or(|(bc, bcost, _)| (c, cost) < (*bc, *bcost)) {
                self.best = Some((c, cost, full));
            }
            return;
        }
        let p = self.free[depth];
        for i in 0..self.options[depth].len() {
            let v = self.options[depth][i];
            if !used.insert(v) {
                continue;
            }
            sizes.insert(p.to_string(), v);
            self.go(depth + 1, sizes, used, cost * v as f64);
            sizes.remove(p);
            used.remove(&v);
        }
    }
}

/// Assigns pairwise-distinct probe values from `pool` honouring size hints so that
/// dimension multisets of rank ≤ `max_rank` have distinct extents where the hints
/// allow it. Fewest collisions wins, then the smallest product, then pool order.
pub fn choose_probe_values(f: &FunctionIR, pool: &[i64], max_rank: usize) -> Result<SizeMap, AnalysisError> {
    let rules = SizeRules::of(f);
    let ints: Vec<&str> = f.int_params().map(|p| p.name.as_str()).collect();
    let free: Vec<&str> = ints.iter().copied().filter(|p| !rules.is_derived(p) && rules.fixed(p).is_none()).collect();
    // params pinned to the same constant are indistinguishable by construction
    let classes: Vec<usize> = ints
        .iter()
        .enumerate()
        .map(|(i, p)| match rules.fixed(p) {
            Some(v) => ints.iter().position(|q| rules.fixed(q) == Some(v)).unwrap_or(i),
            None => i,
        })
        .collect();
    let span = pool.len() + POOL_EXTRA;
    let options = free
        .iter()
        .map(|p| {
            let mut seen = BTreeSet::new();
            (0..span).map(|i| rules.conform(p, pool_at(pool, i))).filter(|v| seen.insert(*v)).collect()
        })
        .collect();
    let mut sizes = SizeMap::new();
    let mut used = BTreeSet::new();
    for p in &ints {
        if let Some(v) = rules.fixed(p) {
            sizes.insert(p.to_string(), v);
            used.insert(v);
        }
    }
    let mut search = ProbeSearch {
        f,
        rules,
        ints,
        check: Collisions::new(&classes, max_rank),
        buf: Vec::new(),
        free,
        options,
        leaves: 0,
        strict: true,
        best: None,
    };
    search.go(0, &mut sizes.clone(), &mut used.clone(), 1.0);
    if search.best.is_none() {
        search.strict = false;
        search.leaves = 0;
        search.go(0, &mut sizes, &mut used, 1.0);
    }
    match search.best {
        Some((c, _, sizes)) => {
            if c > 0 {
                log::debug!("{}: probe values leave {c} extent collisions", search.f.name);
            }
            Ok(sizes)
        }
        None => Err(AnalysisError::ProbeValues(format!("no admissible probe values for `{}`", search.f.name))),
    }
}

/// Coordinates that change between flat indices `a` and `b` under row-major `extents`.
fn changed_coords(mut a: i64, mut b: i64, extents: &[i64]) -> u64 {
    let mut n = 0;
    for e in extents.iter().rev() {
        if a == b {
            break;
        }
        n += (a % e != b % e) as u64;
        a /= e;
        b /= e;
    }
    n
}

/// Sampled access pairs that a layout cannot explain: more than one coordinate changes and
/// the stride is not that of a single dimension carrying into the next. Lower fits better.
pub fn layout_conflicts(pairs: &[(i64, i64)], extents: &[i64]) -> usize {
    let mut strides = Vec::with_capacity(extents.len());
    let mut acc = 1i64;
    for e in extents.iter().rev() {
        strides.push(acc);
        acc = acc.saturating_mul(*e);
    }
    pairs
        .iter()
        .filter(|&&(a, b)| changed_coords(a, b, extents) > 1 && !strides.contains(&(b - a).abs()))
        .count()
}

/// Candidate dimension tuples by ascending extent, then fewer repeated parameters, then parameter positions.
pub fn enumerate_dim_candidates(int_params: &[String], probe: &SizeMap, max_rank: usize) -> Vec<Vec<String>> {
    let Some(values) = int_params.iter().map(|p| probe.get(p).copied()).collect::<Option<Vec<i64>>>() else {
        return Vec::new();
    };
    let repeats = |m: &[usize]| m.windows(2).filter(|w| w[0] == w[1]).count();
    let mut cands: Vec<(i64, usize, Vec<usize>)> = multisets(int_params.len(), max_rank)
        .into_iter()
        .filter_map(|m| Some((product(&values, &m)?, repeats(&m), m)))
        .collect();
    cands.sort();
    cands.into_iter().map(|(_, _, m)| m.into_iter().map(|i| int_params[i].clone()).collect()).collect()
}

fn distinct_permutations(items: &[usize]) -> Vec<Vec<usize>> {
    fn go(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
        if rest.is_empty() {
            out.insert(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            cur.push(v);
            go(rest, cur, out);
            cur.pop();
            rest.insert(i, v);
        }
    }
    let mut out = BTreeSet::new();
    go(&mut items.to_vec(), &mut Vec::new(), &mut out);
    out.into_iter().collect()
}

fn probe_image(f: &FunctionIR, probe: &SizeMap) -> Result<MemoryImage, AnalysisError> {
    let mut img = MemoryImage::new();
    for p in &f.params {
        match p.kind() {
            ParamKind::Pointer => {
                let elem = p.element_type().expect("pointer has an element type");
                img = img.with_region(&p.name, Buffer::new(elem, vec![DEFAULT_SCRATCH_VALUE]));
            }
            ParamKind::IntScalar => {
                let v = probe.get(&p.name).ok_or_else(|| AnalysisError::ProbeValues(format!("no value for `{}`", p.name)))?;
                img = img.with_int(&p.name, *v);
            }
            ParamKind::FloatScalar => img = img.with_float(&p.name, DEFAULT_SCRATCH_VALUE),
        }
    }
    Ok(img)
}

/// Finds the extent-minimal dimension tuple under which probing `arr` never traps,
/// then orders it slowest-varying first from the observed access trace.
pub fn detect_dims(
    engine: &Engine,
    f: &FunctionIR,
    arr: &str,
    probe: &SizeMap,
    max_rank: usize,
) -> Result<DimDetection, AnalysisError> {
    detect_dims_with_limit(engine, f, arr, probe, max_rank, DEFAULT_STEP_LIMIT)
}

/// [`detect_dims`] with an explicit step limit for the probe run.
pub fn detect_dims_with_limit(
    engine: &Engine,
    f: &FunctionIR,
    arr: &str,
    probe: &SizeMap,
    max_rank: usize,
    step_limit: u64,
) -> Result<DimDetection, AnalysisError> {
    let ints: Vec<String> = f.int_params().map(|p| p.name.clone()).collect();
    let img = probe_image(f, probe)?;
    let measure = engine.measure_probe(&f.name, &img, arr, DEFAULT_SCRATCH_VALUE, step_limit)?;
    if measure.status != ExecStatus::Normal {
        return Err(AnalysisError::NoDimsFound(arr.to_string()));
    }
    let Some(max_index) = measure.max_index else {
        return Err(AnalysisError::NoDimsFound(arr.to_string()));
    };
    let cands = enumerate_dim_candidates(&ints, probe, max_rank);
    // a bounded probe traps exactly when its extent does not exceed the largest index touched
    let Some(rejected) = cands.iter().position(|c| c.iter().map(|d| probe[d]).product::<i64>() > max_index) else {
        return Err(AnalysisError::NoDimsFound(arr.to_string()));
    };
    let cand = &cands[rejected];
    let extent: i64 = cand.iter().map(|d| probe[d]).product();
    let positions: Vec<usize> = cand.iter().map(|d| ints.iter().position(|p| p == d).expect("int param")).collect();
    let perms = distinct_permutations(&positions);
    // each (site, loop depth) stratum weighs equally, so rare outer-loop strides still count
    let score = |perm: &Vec<usize>| -> f64 {
        let extents: Vec<i64> = perm.iter().map(|&i| probe[&ints[i]]).collect();
        measure.strata.iter().map(|s| layout_conflicts(s, &extents) as f64 / s.len() as f64).sum()
    };
    let scores: Vec<f64> = perms.iter().map(score).collect();
    // first minimum wins, so ties fall to the lexicographically smallest permutation
    let mut best = 0;
    for (i, sc) in scores.iter().enumerate() {
        if *sc < scores[best] {
            best = i;
        }
    }
    Ok(DimDetection {
        spec: DimSpec { array: arr.to_string(), dims: perms[best].iter().map(|&i| ints[i].clone()).collect() },
        extent,
        max_index,
        rejected,
    })
}
