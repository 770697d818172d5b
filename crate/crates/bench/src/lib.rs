//! Fixture loading shared by the benchmarks.

use std::path::{Path, PathBuf};

use liftc_core::api::ApiSpec;
use liftc_core::minilang::Program;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn corpus_program(rel: &str) -> Program {
    liftc_core::corpus::load_source(&workspace_root().join("corpus").join(rel)).expect("corpus fixture parses")
}

pub fn api(name: &str) -> ApiSpec {
    ApiSpec::load(&workspace_root().join(format!("specs/{name}.json"))).expect("bundled api spec")
}
