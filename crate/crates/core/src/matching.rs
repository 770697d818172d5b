//! Candidate bindings between user parameters and API parameters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{DimSpec, Liveness, LivenessReport};
use crate::api::{ApiParamKind, ApiSpec};
use crate::minilang::{FunctionIR, ParamKind};

pub const DEFAULT_CANDIDATE_CAP: usize = 100;

/// Edit distance over Unicode scalar values (insertions, deletions, substitutions).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] } else { 1 + prev[j].min(prev[j + 1]).min(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserArray {
    pub name: String,
    pub liveness: Liveness,
    /// Empty when no dimensions were found; such arrays never bind.
    pub dims: Vec<String>,
}

/// What the matcher needs to know about a user function.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserSignature {
    pub arrays: Vec<UserArray>,
    pub ints: Vec<String>,
    pub floats: Vec<String>,
}

impl UserSignature {
    pub fn new(f: &FunctionIR, liveness: &LivenessReport, dims: &[DimSpec]) -> Self {
        let mut sig = UserSignature::default();
        for p in &f.params {
            match p.kind() {
                ParamKind::Pointer => sig.arrays.push(UserArray {
                    name: p.name.clone(),
                    liveness: liveness.get(&p.name).unwrap_or(Liveness::LiveIn),
                    dims: dims.iter().find(|d| d.array == p.name).map(|d| d.dims.clone()).unwrap_or_default(),
                }),
                ParamKind::IntScalar => sig.ints.push(p.name.clone()),
                ParamKind::FloatScalar => sig.floats.push(p.name.clone()),
            }
        }
        sig
    }
}

/// Accumulates (user dim, API dim) pairs with user array `idx` placed on API array `p[idx]`;
/// the arrays line up iff exactly `n` distinct pairs result.
pub fn dims_match(f1a: &[Vec<String>], f2a: &[Vec<String>], p: &[usize], n: usize) -> bool {
    let mut s = BTreeSet::new();
    for (idx, args1) in f1a.iter().enumerate() {
        let args2 = &f2a[p[idx]];
        if args1.len() != args2.len() {
            return false;
        }
        s.extend(args1.iter().zip(args2));
    }
    s.len() == n
}

/// Every output array lands on an output position and every input on an input.
pub fn out_match(f1o: &[bool], f2o: &[bool], p: &[usize]) -> bool {
    f1o.iter().enumerate().all(|(idx, out)| f2o[p[idx]] == *out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateBinding {
    /// API array → user pointer.
    pub arrays: BTreeMap<String, String>,
    /// API size param → user int param.
    pub sizes: BTreeMap<String, String>,
    /// Remaining API scalars → user scalars.
    pub scalars: BTreeMap<String, String>,
    /// Sum of Levenshtein distances over normalized names.
    pub score: usize,
    /// Index of the array assignment in enumeration order.
    pub provenance: usize,
}

impl CandidateBinding {
    /// User parameter bound to an API parameter of any kind.
    pub fn user_for(&self, api_param: &str) -> Option<&str> {
        self.arrays
            .get(api_param)
            .or_else(|| self.sizes.get(api_param))
            .or_else(|| self.scalars.get(api_param))
            .map(String::as_str)
    }

    /// Every API parameter with its user parameter.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.arrays.iter().chain(&self.sizes).chain(&self.scalars).map(|(a, u)| (a.as_str(), u.as_str()))
    }

    /// Whether this binding maps exactly the given API → user pairs.
    pub fn same_as(&self, truth: &BTreeMap<String, String>) -> bool {
        self.pairs().count() == truth.len() && self.pairs().all(|(a, u)| truth.get(a).is_some_and(|t| t == u))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSet {
    pub candidates: Vec<CandidateBinding>,
    /// Type-respecting injective maps of all API params onto user params.
    pub raw: u128,
    /// Injective array assignments enumerated.
    pub assignments: usize,
    /// User has more arrays than the API, so partial permutations were enumerated.
    pub k_permutations: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatchError {
    #[error("no candidate binding survives ({assignments} array assignments tried)")]
    NoCandidates { assignments: usize },
    #[error("user function has {user} arrays but the API needs {api}")]
    TooFewArrays { user: usize, api: usize },
}

fn falling_factorial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    ((n - k + 1)..=n).map(|v| v as u128).product()
}

/// Count of type-respecting maps from API params to user params: arrays and free scalars
/// injective, size params unrestricted since several may share one user size.
pub fn raw_binding_count(user: &UserSignature, api: &ApiSpec) -> u128 {
    let sizes = api.size_params().len() as u32;
    let free = api.free_scalars();
    let free_of = |k: ApiParamKind| free.iter().filter(|p| p.kind == k).count();
    let ints = user.ints.len() as u128;
    falling_factorial(user.arrays.len(), api.arrays().count())
        .saturating_mul(ints.saturating_pow(sizes))
        .saturating_mul(falling_factorial(user.ints.len(), free_of(ApiParamKind::Int)))
        .saturating_mul(falling_factorial(user.floats.len(), free_of(ApiParamKind::Float)))
}

/// Injective maps from `k` slots onto `0..n`, in lexicographic order.
pub(crate) fn k_permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, k: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                go(n, k, used, cur, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    if k <= n {
        go(n, k, &mut vec![false; n], &mut Vec::new(), &mut out);
    }
    out
}

/// Binds the API scalars not fixed by dims to unused user scalars of the same kind, minimizing
/// the summed distance; ties go to the first assignment in parameter order.
fn bind_free_scalars(
    user: &UserSignature,
    api: &ApiSpec,
    sizes: &BTreeMap<String, String>,
) -> Option<(BTreeMap<String, String>, usize)> {
    let mut scalars = BTreeMap::new();
    let mut total = 0;
    for kind in [ApiParamKind::Int, ApiParamKind::Float] {
        let wanted: Vec<&str> =
            api.free_scalars().into_iter().filter(|p| p.kind == kind).map(|p| p.name.as_str()).collect();
        if wanted.is_empty() {
            continue;
        }
        let pool = if kind == ApiParamKind::Int { &user.ints } else { &user.floats };
        let avail: Vec<&String> = pool.iter().filter(|u| !sizes.values().any(|v| v == *u)).collect();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for perm in k_permutations(avail.len(), wanted.len()) {
            let cost: usize = wanted
                .iter()
                .zip(&perm)
                .map(|(a, &u)| levenshtein(&api.normalize(a), &avail[u].to_lowercase()))
                .sum();
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, perm));
            }
        }
        let (cost, perm) = best?;
        total += cost;
        for (a, u) in wanted.iter().zip(perm) {
            scalars.insert(a.to_string(), avail[u].clone());
        }
    }
    Some((scalars, total))
}

/// Enumerates injective API-array → user-array assignments (permutations, or partial
/// permutations when the user has extra arrays), keeping those that pass the liveness,
/// dimension and output predicates.
pub fn find_matchings(user: &UserSignature, api: &ApiSpec) -> Result<MatchSet, MatchError> {
    let api_arrays: Vec<_> = api.arrays().collect();
    if user.arrays.len() < api_arrays.len() {
        return Err(MatchError::TooFewArrays { user: user.arrays.len(), api: api_arrays.len() });
    }
    let f2a: Vec<Vec<String>> = api_arrays.iter().map(|a| a.dims.clone()).collect();
    let f2o: Vec<bool> = api_arrays.iter().map(|a| a.liveness.is_some_and(Liveness::is_output)).collect();
    let n = api.size_params().len();
    let assignments = k_permutations(user.arrays.len(), api_arrays.len());
    let mut candidates = Vec::new();
    for (provenance, sel) in assignments.iter().enumerate() {
        if sel.iter().zip(&api_arrays).any(|(&u, a)| Some(user.arrays[u].liveness) != a.liveness) {
            continue;
        }
        // selected user arrays in declaration order; p sends each to its API slot
        let mut chosen: Vec<(usize, usize)> = sel.iter().enumerate().map(|(j, &u)| (u, j)).collect();
        chosen.sort_unstable();
        let f1a: Vec<Vec<String>> = chosen.iter().map(|&(u, _)| user.arrays[u].dims.clone()).collect();
        let f1o: Vec<bool> = chosen.iter().map(|&(u, _)| user.arrays[u].liveness.is_output()).collect();
        let p: Vec<usize> = chosen.iter().map(|&(_, j)| j).collect();
        if !dims_match(&f1a, &f2a, &p, n) || !out_match(&f1o, &f2o, &p) {
            continue;
        }
        let mut sizes = BTreeMap::new();
        for (&u, a) in sel.iter().zip(&api_arrays) {
            for (ud, ad) in user.arrays[u].dims.iter().zip(&a.dims) {
                sizes.insert(ad.clone(), ud.clone());
            }
        }
        let Some((scalars, scalar_score)) = bind_free_scalars(user, api, &sizes) else {
            continue;
        };
        let arrays: BTreeMap<String, String> =
            sel.iter().zip(&api_arrays).map(|(&u, a)| (a.name.clone(), user.arrays[u].name.clone())).collect();
        let lex = |m: &BTreeMap<String, String>| -> usize {
            m.iter().map(|(a, u)| levenshtein(&api.normalize(a), &u.to_lowercase())).sum()
        };
        let score = lex(&arrays) + lex(&sizes) + scalar_score;
        candidates.push(CandidateBinding { arrays, sizes, scalars, score, provenance });
    }
    if candidates.is_empty() {
        return Err(MatchError::NoCandidates { assignments: assignments.len() });
    }
    Ok(MatchSet {
        candidates,
        raw: raw_binding_count(user, api),
        assignments: assignments.len(),
        k_permutations: user.arrays.len() > api_arrays.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranked {
    pub candidates: Vec<CandidateBinding>,
    /// Candidates before truncation.
    pub total: usize,
    pub truncated: bool,
}

/// Ascending lexical score, ties by provenance, cut to `cap`.
pub fn rank_candidates(mut cands: Vec<CandidateBinding>, cap: usize) -> Ranked {
    let cap = cap.max(1);
    cands.sort_by_key(|c| (c.score, c.provenance));
    let total = cands.len();
    cands.truncate(cap);
    Ranked { candidates: cands, total, truncated: total > cap }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|d| d.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("a", ""), 1);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("lda", "lda"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
    }

    #[test]
    fn figure_five_instance() {
        let user = dims(&[&["x0", "x1"], &["x1", "x2"], &["x2", "x0"]]);
        let api = dims(&[&["y0", "y1"], &["y1", "y2"], &["y2", "y0"]]);
        assert!(dims_match(&user, &api, &[0, 1, 2], 3));
        assert!(!dims_match(&user, &api, &[1, 0, 2], 3));
        assert!(dims_match(&dims(&[&["x"]]), &dims(&[&["y"]]), &[0], 1));
        // the cyclic shift keeps constraints consistent but moves the output
        assert!(dims_match(&user, &api, &[1, 2, 0], 3));
        assert!(!out_match(&[false, false, true], &[false, false, true], &[1, 2, 0]));
        assert!(out_match(&[false, false, true], &[false, false, true], &[0, 1, 2]));
        assert!(!out_match(&[false, false, true], &[false, false, true], &[0, 2, 1]));
    }

    #[test]
    fn rank_mismatch_never_matches() {
        assert!(!dims_match(&dims(&[&["x0", "x1"]]), &dims(&[&["y0"]]), &[0], 2));
    }

    #[test]
    fn ranking_is_stable() {
        let mk = |score, provenance| CandidateBinding {
            arrays: BTreeMap::new(),
            sizes: BTreeMap::new(),
            scalars: BTreeMap::new(),
            score,
            provenance,
        };
        let r = rank_candidates(vec![mk(7, 0), mk(0, 1), mk(3, 2), mk(3, 0)], 100);
        let order: Vec<(usize, usize)> = r.candidates.iter().map(|c| (c.score, c.provenance)).collect();
        assert_eq!(order, vec![(0, 1), (3, 0), (3, 2), (7, 0)]);
        assert!(!r.truncated);
        let many: Vec<_> = (0..280).map(|i| mk(i % 7, i)).collect();
        let r = rank_candidates(many, 100);
        assert_eq!((r.candidates.len(), r.total, r.truncated), (100, 280, true));
    }

    #[test]
    fn k_permutation_counts() {
        assert_eq!(k_permutations(3, 3).len(), 6);
        assert_eq!(k_permutations(4, 3).len(), 24);
        assert_eq!(k_permutations(2, 3).len(), 0);
        assert_eq!(k_permutations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(falling_factorial(9, 9), 362_880);
    }
}
