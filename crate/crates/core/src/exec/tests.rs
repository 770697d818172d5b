use super::*;
use crate::minilang::parse_program;

const NAIVE: &str = "
fn gemm(A: *f32, B: *f32, C: *f32, m: i64, n: i64, k: i64) -> void {
  for i in 0..m {
    for j in 0..n {
      let acc: f32 = 0.0;
      for p in 0..k {
        acc += A[i * k + p] * B[p * n + j];
      }
      C[i * n + j] = acc;
    }
  }
}
fn copy(A: *f64, B: *f64, n: i64) -> void {
  for i in 0..n { B[i] = A[i]; }
}
fn spin(n: i64) -> void {
  while n > 0 { n = n + 1; }
}
fn bad(A: *f32, n: i64) -> f32 {
  return A[n] / to_f32(n - n);
}
fn idiv(n: i64) -> i64 {
  return 7 / (n - n);
}
fn helper(A: *f32, i: i64) -> f32 { return A[i] * 2.0; }
fn caller(A: *f32, B: *f32, n: i64) -> void {
  let tmp: *f32 = alloc(n);
  for i in 0..n { tmp[i] = helper(A, i); }
  for i in 0..n { B[i] = tmp[i] + 1.0; }
}
fn vec(A: *f32, B: *f32, n: i64) -> void {
  for i in 0..n step 4 { vfma4(B[i], splat(2.0), A[i]); }
}
";

fn engine() -> Engine {
    Engine::new(&parse_program(NAIVE).unwrap()).unwrap()
}

fn gemm_image(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, m: i64, n: i64, k: i64) -> MemoryImage {
    MemoryImage::new()
        .with_region("A", Buffer::new(ElemType::F32, a))
        .with_region("B", Buffer::new(ElemType::F32, b))
        .with_region("C", Buffer::new(ElemType::F32, c))
        .with_int("m", m)
        .with_int("n", n)
        .with_int("k", k)
}

fn probe_image(len: usize) -> MemoryImage {
    gemm_image(vec![0.0; len], vec![0.0; 1], vec![0.0; 1], 7, 11, 13)
}

#[test]
fn identity_gemm() {
    let img = gemm_image(vec![1.0, 0.0, 0.0, 1.0], vec![5.0, 6.0, 7.0, 8.0], vec![0.0; 4], 2, 2, 2);
    let out = engine().execute("gemm", &img, &InstrumentationPolicy::plain(), DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(out.status, ExecStatus::Normal);
    assert_eq!(out.final_image.unwrap().region("C").unwrap(), &[5.0, 6.0, 7.0, 8.0]);
}

#[test]
fn dim_probe_traps_below_true_extent() {
    let e = engine();
    let ok = e.execute("gemm", &probe_image(1), &InstrumentationPolicy::dim_probe("A", 7 * 13), DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(ok.status, ExecStatus::Normal);
    let trap = e.execute("gemm", &probe_image(1), &InstrumentationPolicy::dim_probe("A", 7 * 11), DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(trap.status, ExecStatus::OutOfBounds);
    assert!(trap.final_image.is_none());
    let c = e.execute("gemm", &probe_image(1), &InstrumentationPolicy::dim_probe("C", 7 * 11), DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(c.status, ExecStatus::Normal);
}

#[test]
fn measure_agrees_with_probing() {
    let e = engine();
    let m = e.measure_probe("gemm", &probe_image(1), "B", 1.0, DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(m.status, ExecStatus::Normal);
    assert_eq!(m.max_index, Some(11 * 13 - 1));
    for extent in [11 * 13 - 1, 11 * 13, 11 * 13 + 5] {
        let out = e.execute("gemm", &probe_image(1), &InstrumentationPolicy::dim_probe("B", extent), DEFAULT_STEP_LIMIT).unwrap();
        let trapped = m.max_index.unwrap() >= extent as i64;
        assert_eq!(out.status == ExecStatus::OutOfBounds, trapped, "extent {extent}");
    }
}

#[test]
fn plain_mode_bounds_are_runtime_faults() {
    let img = gemm_image(vec![1.0; 3], vec![1.0; 4], vec![0.0; 4], 2, 2, 2);
    let out = engine().execute("gemm", &img, &InstrumentationPolicy::plain(), DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(out.status, ExecStatus::RuntimeFault);
    assert!(out.fault.unwrap().contains("out of bounds"));
}

#[test]
fn snapshot_diff_reports_changed_regions() {
    let e = engine();
    let img = gemm_image(vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0], vec![0.0; 4], 2, 2, 2);
    assert!(snapshot_diff(&img, &img).unwrap().is_empty());
    let out = e.execute("gemm", &img, &InstrumentationPolicy::plain(), DEFAULT_STEP_LIMIT).unwrap();
    let fin = out.final_image.unwrap();
    assert_eq!(fin.region("C").unwrap(), &[19.0, 22.0, 43.0, 50.0]);
    assert_eq!(snapshot_diff(&img, &fin).unwrap(), BTreeSet::from(["C".to_string()]));

    let img = MemoryImage::new()
        .with_region("A", Buffer::new(ElemType::F64, vec![1.0, 2.0, 3.0]))
        .with_region("B", Buffer::zeros(ElemType::F64, 3))
        .with_int("n", 3);
    let fin = e.execute("copy", &img, &InstrumentationPolicy::plain(), DEFAULT_STEP_LIMIT).unwrap().final_image.unwrap();
    assert_eq!(snapshot_diff(&img, &fin).unwrap(), BTreeSet::from(["B".to_string()]));

    let mut short = img.clone();
    short.regions.get_mut("B").unwrap().data.pop();
    assert!(matches!(snapshot_diff(&img, &short), Err(ExecError::ShapeMismatch(_))));
}

#[test]
fn step_limit_and_faults() {
    let e = engine();
    let spin = e.execute("spin", &MemoryImage::new().with_int("n", 1), &InstrumentationPolicy::plain(), 10_000).unwrap();
    assert_eq!(spin.status, ExecStatus::StepLimit);
    let img = MemoryImage::new().with_region("A", Buffer::new(ElemType::F32, vec![1.0; 4])).with_int("n", 2);
    let out = e.execute("bad", &img, &InstrumentationPolicy::plain(), 1000).unwrap();
    assert_eq!(out.status, ExecStatus::RuntimeFault);
    let out = e.execute("bad", &img.clone().with_int("n", -1), &InstrumentationPolicy::plain(), 1000).unwrap();
    assert!(out.fault.unwrap().contains("negative"));
    let out = e.execute("idiv", &MemoryImage::new().with_int("n", 3), &InstrumentationPolicy::plain(), 1000).unwrap();
    assert_eq!(out.status, ExecStatus::RuntimeFault);
}

#[test]
fn calls_allocs_and_vectors() {
    let e = engine();
    let img = MemoryImage::new()
        .with_region("A", Buffer::new(ElemType::F32, vec![1.0, 2.0, 3.0, 4.0]))
        .with_region("B", Buffer::zeros(ElemType::F32, 4))
        .with_int("n", 4);
    let out = e.execute("caller", &img, &InstrumentationPolicy::plain(), 1000).unwrap();
    assert_eq!(out.final_image.unwrap().region("B").unwrap(), &[3.0, 5.0, 7.0, 9.0]);
    let img = img.with_region("B", Buffer::new(ElemType::F32, vec![1.0; 8])).with_int("n", 8);
    let img = img.with_region("A", Buffer::new(ElemType::F32, (0..8).map(f64::from).collect()));
    let out = e.execute("vec", &img, &InstrumentationPolicy::plain(), 1000).unwrap();
    assert_eq!(out.final_image.unwrap().region("B").unwrap(), &[1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0]);
}

#[test]
fn binding_errors() {
    let e = engine();
    let p = InstrumentationPolicy::plain();
    assert!(matches!(e.execute("nope", &MemoryImage::new(), &p, 10), Err(ExecError::UnknownFunction(_))));
    assert!(matches!(e.execute("spin", &MemoryImage::new(), &p, 10), Err(ExecError::MissingBinding(_))));
    let img = gemm_image(vec![1.0], vec![1.0], vec![], 1, 1, 1);
    assert!(matches!(e.execute("gemm", &img, &p, 10), Err(ExecError::BadBinding { .. })));
    let bad = InstrumentationPolicy { target_extent: None, ..InstrumentationPolicy::dim_probe("A", 1) };
    assert!(matches!(e.execute("gemm", &probe_image(1), &bad, 10), Err(ExecError::InvalidPolicy(_))));
    let wrong = InstrumentationPolicy::dim_probe("m", 1);
    assert!(matches!(e.execute("gemm", &probe_image(1), &wrong, 10), Err(ExecError::InvalidPolicy(_))));
}

#[test]
fn execution_is_deterministic() {
    let img = gemm_image((0..6).map(|v| v as f64 * 0.37).collect(), (0..6).map(|v| 1.0 - v as f64).collect(), vec![0.0; 4], 2, 2, 3);
    let e = engine();
    let a = e.execute("gemm", &img, &InstrumentationPolicy::plain(), DEFAULT_STEP_LIMIT).unwrap();
    let b = e.execute("gemm", &img, &InstrumentationPolicy::plain(), DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(a, b);
}

#[test]
fn measure_samples_loop_aligned_pairs() {
    let e = engine();
    // B is k x n = 13 x 11: the p loop strides by n, the j loop by one
    let m = e.measure_probe("gemm", &probe_image(1), "B", 1.0, DEFAULT_STEP_LIMIT).unwrap();
    assert_eq!(m.max_index, Some(142));
    let deltas: Vec<BTreeSet<i64>> = m.strata.iter().map(|s| s.iter().map(|(a, b)| b - a).collect()).collect();
    assert_eq!(deltas, vec![BTreeSet::from([11]), BTreeSet::from([1])]);
}
