use std::path::PathBuf;

use liftc_core::classifier::{extract_features_in, train_classifier};
use liftc_core::corpus::Manifest;

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

#[test]
fn corpus_model_fits_and_gates_soundly() {
    let dir = corpus();
    let m = Manifest::load(&dir).unwrap();
    let data = m.labelled_features(&dir).unwrap();
    let model = train_classifier(&data).unwrap();
    assert_eq!(model.labels, vec!["conv2d", "gemm", "other"]);
    let mut correct = 0;
    for (fx, (fv, label)) in m.fixtures.iter().zip(&data) {
        let (got, p) = model.classify(fv);
        if &got == label {
            correct += 1;
        } else {
            eprintln!("{}: {label} classified {got} ({p:.3})", fx.file);
        }
        if label == "other" {
            assert!(got == "other" || p < 0.5, "{} classified {got} ({p:.3})", fx.file);
        }
    }
    assert!(correct as f64 >= 0.9 * data.len() as f64, "{correct}/{}", data.len());

    let check = |file: &str, want: &str| {
        let fx = m.fixtures.iter().find(|f| f.file == file).unwrap();
        let p = fx.load_program(&dir).unwrap();
        let (got, score) = model.classify(&extract_features_in(&p, p.function(&fx.function).unwrap()));
        assert_eq!(got, want, "{file}");
        score
    };
    assert!(check("gemm/unrolled_2x2.ml", "gemm") >= 0.5);
    check("other/bubblesort.ml", "other");
    check("conv/direct_nchw.ml", "conv2d");
}
