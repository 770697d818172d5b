use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sizes::{SizeMap, SizeRules};
use super::{AnalysisError, Liveness, LivenessReport, ParamLiveness};
use crate::exec::{
    snapshot_diff, Buffer, Engine, ExecStatus, InstrumentationPolicy, MemoryImage, DEFAULT_STEP_LIMIT,
};
use crate::minilang::{ElemType, FunctionIR, ParamKind};

pub const LIVENESS_BUFFER_LEN: usize = 65_536;
const SIZE_RANGE: (i64, i64) = (2, 8);
const TRIALS: usize = 3;
const MAX_ATTEMPTS: u64 = 5;

fn random_buffer(rng: &mut ChaCha8Rng, elem: ElemType) -> Buffer {
    Buffer::new(elem, (0..LIVENESS_BUFFER_LEN).map(|_| rng.gen_range(-1.0..=1.0)).collect())
}

fn random_sizes(f: &FunctionIR, rng: &mut ChaCha8Rng) -> Result<SizeMap, String> {
    let rules = SizeRules::of(f);
    let mut sizes = SizeMap::new();
    for p in f.int_params() {
        if !rules.is_derived(&p.name) {
            sizes.insert(p.name.clone(), rules.conform(&p.name, rng.gen_range(SIZE_RANGE.0..=SIZE_RANGE.1)));
        }
    }
    rules.derive(&mut sizes)?;
    Ok(sizes)
}

fn random_image(f: &FunctionIR, rng: &mut ChaCha8Rng) -> Result<MemoryImage, String> {
    let sizes = random_sizes(f, rng)?;
    let mut img = MemoryImage::new();
    for p in &f.params {
        match p.kind() {
            ParamKind::Pointer => {
                let elem = p.element_type().expect("pointer has an element type");
                img = img.with_region(&p.name, random_buffer(rng, elem));
            }
            ParamKind::IntScalar => img = img.with_int(&p.name, sizes[&p.name]),
            ParamKind::FloatScalar => img = img.with_float(&p.name, rng.gen_range(-1.0..=1.0)),
        }
    }
    Ok(img)
}

fn attempt(engine: &Engine, f: &FunctionIR, rng: &mut ChaCha8Rng) -> Result<LivenessReport, String> {
    let input = random_image(f, rng)?;
    let policy = InstrumentationPolicy::plain();
    let first = engine.execute(&f.name, &input, &policy, DEFAULT_STEP_LIMIT).map_err(|e| e.to_string())?;
    let Some(final1) = first.final_image else {
        return Err(format!("probe run ended {:?} {}", first.status, first.fault.unwrap_or_default()));
    };
    let changed = snapshot_diff(&input, &final1).map_err(|e| e.to_string())?;
    let mut params = Vec::new();
    for p in &f.params {
        let class = if !changed.contains(&p.name) {
            Liveness::LiveIn
        } else {
            let mut input2 = input.clone();
            let elem = p.element_type().expect("only pointers change");
            input2.regions.insert(p.name.clone(), random_buffer(rng, elem));
            let second = engine.execute(&f.name, &input2, &policy, DEFAULT_STEP_LIMIT).map_err(|e| e.to_string())?;
            if second.status != ExecStatus::Normal {
                return Err(format!("re-run ended {:?}", second.status));
            }
            let final2 = second.final_image.expect("normal run has an image");
            let (in1, out1) = (&input.regions[&p.name].data, &final1.regions[&p.name].data);
            let (in2, out2) = (&input2.regions[&p.name].data, &final2.regions[&p.name].data);
            // only positions written by either run are compared
            let depends = (0..out1.len()).any(|i| {
                let written = out1[i].to_bits() != in1[i].to_bits() || out2[i].to_bits() != in2[i].to_bits();
                written && out1[i].to_bits() != out2[i].to_bits()
            });
            if depends {
                Liveness::LiveInOut
            } else {
                Liveness::LiveOut
            }
        };
        params.push(ParamLiveness { param: p.name.clone(), class });
    }
    Ok(LivenessReport { params })
}

fn rank(l: Liveness) -> u8 {
    match l {
        Liveness::LiveIn => 0,
        Liveness::LiveOut => 1,
        Liveness::LiveInOut => 2,
    }
}

/// Classifies pointer parameters by diffing memory across randomized runs; scalars are always live-in.
/// Successful trials are merged so that a write seen under any size draw counts.
pub fn detect_liveness(engine: &Engine, f: &FunctionIR, seed: u64) -> Result<LivenessReport, AnalysisError> {
    let mut reasons = Vec::new();
    let mut merged: Option<LivenessReport> = None;
    let mut ok = 0;
    for round in 0..MAX_ATTEMPTS {
        if ok == TRIALS {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(round.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        match attempt(engine, f, &mut rng) {
            Ok(r) => {
                ok += 1;
                merged = Some(match merged {
                    None => r,
                    Some(mut m) => {
                        for (a, b) in m.params.iter_mut().zip(r.params) {
                            if rank(b.class) > rank(a.class) {
                                a.class = b.class;
                            }
                        }
                        m
                    }
                });
            }
            Err(e) => reasons.push(e),
        }
    }
    merged.ok_or_else(|| AnalysisError::AnalysisInconclusive(reasons.join("; ")))
}
