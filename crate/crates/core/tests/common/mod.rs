#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hazmatch::rng::Stream;
use hazmatch::simulation::{generate_replicate, Confounding, PsSpec, Replicate, ScenarioConfig};

/// Fixed censoring bound giving roughly a quarter censored in the weak cell.
pub const C_MAX: f64 = 1.5;

pub fn scenario(n: usize, level: Confounding) -> ScenarioConfig {
    ScenarioConfig {
        n,
        ..ScenarioConfig::cell(level, PsSpec::Correct, 0.0)
    }
}

pub fn replicate(n: usize, level: Confounding, seed: u64) -> Replicate {
    let mut rng = Stream::root(seed).rng();
    generate_replicate(&scenario(n, level), C_MAX, &mut rng).unwrap()
}

/// Write a simulated dataset as `x1,x2,w,u,delta` and return its path.
pub fn write_fixture(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("data_{seed}.csv"));
    hazmatch::dataset::save_csv(&replicate(n, Confounding::Weak, seed).data, &path).unwrap();
    path
}
