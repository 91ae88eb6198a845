//! Frozen reference values from `tests/fixtures/oracles.toml`.

use toml::Value;

use crate::linalg::{CMatrix, C64};

const ORACLES: &str = include_str!("../tests/fixtures/oracles.toml");

pub fn cases(kind: &str) -> Vec<Value> {
    let root: Value = toml::from_str(ORACLES).expect("oracle fixture parses");
    root[kind].as_array().expect("fixture section").clone()
}

pub fn f(case: &Value, key: &str) -> f64 {
    let v = &case[key];
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).expect(key)
}

pub fn fs(case: &Value, key: &str) -> Vec<f64> {
    case[key].as_array().expect(key).iter().map(|v| v.as_float().expect(key)).collect()
}

pub fn cs(case: &Value, key: &str) -> Vec<C64> {
    let re = fs(case, &format!("{key}_re"));
    let im = fs(case, &format!("{key}_im"));
    re.into_iter().zip(im).map(|(r, i)| C64::new(r, i)).collect()
}

pub fn matrix(case: &Value, key: &str, rows: usize) -> CMatrix {
    let data = cs(case, key);
    let cols = data.len() / rows;
    CMatrix::from_rows(rows, cols, data)
}
