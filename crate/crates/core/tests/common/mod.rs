#![allow(dead_code)]

use std::path::PathBuf;

use episwitch::config::load_model;
use episwitch::linalg::Matrix;
use episwitch::model::{CureRates, InfectionRates, ModelSpec, SwitchRates};

pub fn model(name: &str) -> ModelSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models").join(format!("{name}.json"));
    load_model(&path).unwrap()
}

pub fn scalar(b: [f64; 2]) -> ModelSpec {
    ModelSpec::scalar(&b, 1.0, Matrix::from_array([[-1.0, 1.0], [1.0, -1.0]])).unwrap()
}

/// Two groups, two environments, switching rate out of env 0 rising with
/// prevalence.
pub fn two_group_feedback() -> ModelSpec {
    ModelSpec::new(
        vec![0.3, 0.7],
        2,
        InfectionRates::LajmanovichYorke(vec![
            Matrix::from_array([[1.5, 2.0], [0.5, 2.5]]),
            Matrix::from_array([[0.2, 0.4], [0.3, 0.1]]),
        ]),
        CureRates::Constant(vec![vec![1.0, 1.2], vec![0.8, 1.0]]),
        SwitchRates::LinearInPrevalence {
            base: Matrix::from_array([[-0.5, 0.5], [1.0, -1.0]]),
            slope: Matrix::from_array([[-2.0, 2.0], [0.0, 0.0]]),
        },
    )
    .unwrap()
}
