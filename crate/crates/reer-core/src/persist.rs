//! JSON persistence for estimator states.
//!
//! Each state is one small JSON document. All floating-point fields are
//! written with 17 significant digits, which is enough for every f64 to
//! survive a save/load cycle bit-for-bit; readers reject any unknown
//! `format_version`. The renewable document looks like
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "kind": "reer",
//!   "tau": 2.5000000000000000e-1,
//!   "p": 1,
//!   "n_seen": 1,
//!   "batches_seen": 1,
//!   "beta": [0.0000000000000000e0],
//!   "h": [5.0000000000000000e-1]
//! }
//! ```
//!
//! and the one-shot accumulators use the same envelope with
//! `"kind": "paer"` / `"dcer"` plus their accumulator fields. A reduced
//! `"kind": "coefficients"` document (just `tau`, `p`, `beta`) lets a
//! fitted vector from any source be evaluated against held-out data.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::baselines::{DcerState, PaerState, WeightMode};
use crate::error::{Error, Result};
use crate::expectile::{Coefficients, ExpectileLevel};
use crate::linalg::SymMatrix;
use crate::renewable::SummaryState;

pub const STATE_FORMAT_VERSION: u64 = 1;

/// Formats with 17 significant digits, the shortest width that
/// round-trips every finite f64 exactly.
pub fn fmt_f64_17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Any persistable estimator state.
#[derive(Debug, Clone, PartialEq)]
pub enum StateFile {
    Renewable(SummaryState),
    Paer(PaerState),
    Dcer(DcerState),
    Coefficients(Coefficients),
}

impl StateFile {
    pub fn kind(&self) -> &'static str {
        match self {
            StateFile::Renewable(_) => "reer",
            StateFile::Paer(_) => "paer",
            StateFile::Dcer(_) => "dcer",
            StateFile::Coefficients(_) => "coefficients",
        }
    }

    pub fn tau(&self) -> ExpectileLevel {
        match self {
            StateFile::Renewable(s) => s.tau(),
            StateFile::Paer(s) => s.tau(),
            StateFile::Dcer(s) => s.tau(),
            StateFile::Coefficients(c) => c.tau,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            StateFile::Renewable(s) => s.p(),
            StateFile::Paer(s) => s.p(),
            StateFile::Dcer(s) => s.p(),
            StateFile::Coefficients(c) => c.beta.len(),
        }
    }

    /// The coefficient vector this state currently implies; solves the
    /// aggregation system for the one-shot accumulators.
    pub fn coefficients(&self) -> Result<Coefficients> {
        match self {
            StateFile::Renewable(s) => Ok(s.estimate()),
            StateFile::Paer(s) => s.finalize(),
            StateFile::Dcer(s) => s.finalize(),
            StateFile::Coefficients(c) => Ok(c.clone()),
        }
    }
}

fn float_array(values: &[f64]) -> String {
    let mut out = String::from("[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_f64_17(*v));
    }
    out.push(']');
    out
}

/// Serializes a state to its canonical JSON text. Byte-deterministic:
/// equal states produce equal documents.
pub fn state_to_string(state: &StateFile) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"format_version\": {STATE_FORMAT_VERSION},");
    let _ = writeln!(s, "  \"kind\": \"{}\",", state.kind());
    let _ = writeln!(s, "  \"tau\": {},", fmt_f64_17(state.tau().value()));
    let _ = writeln!(s, "  \"p\": {},", state.p());
    match state {
        StateFile::Renewable(st) => {
            let _ = writeln!(s, "  \"n_seen\": {},", st.n_seen());
            let _ = writeln!(s, "  \"batches_seen\": {},", st.batches_seen());
            let _ = writeln!(s, "  \"beta\": {},", float_array(st.beta()));
            let _ = writeln!(s, "  \"h\": {}", float_array(st.hessian().data()));
        }
        StateFile::Paer(st) => {
            let _ = writeln!(s, "  \"weight_mode\": \"{}\",", st.weight_mode().as_str());
            let _ = writeln!(s, "  \"n_seen\": {},", st.n_seen());
            let _ = writeln!(s, "  \"batches_seen\": {},", st.batches_seen());
            let _ = writeln!(s, "  \"acc_mat\": {},", float_array(st.acc_mat().data()));
            let _ = writeln!(s, "  \"acc_vec\": {}", float_array(st.acc_vec()));
        }
        StateFile::Dcer(st) => {
            let _ = writeln!(s, "  \"n_seen\": {},", st.n_seen());
            let _ = writeln!(s, "  \"batches_seen\": {},", st.batches_seen());
            let _ = writeln!(s, "  \"acc_mat\": {},", float_array(st.acc_mat().data()));
            let _ = writeln!(s, "  \"acc_vec\": {}", float_array(st.acc_vec()));
        }
        StateFile::Coefficients(c) => {
            let _ = writeln!(s, "  \"beta\": {}", float_array(&c.beta));
        }
    }
    s.push_str("}\n");
    s
}

pub fn save_state(state: &StateFile, path: &Path) -> Result<()> {
    std::fs::write(path, state_to_string(state))?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<StateFile> {
    state_from_str(&std::fs::read_to_string(path)?)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadStateFile(msg.into())
}

fn get_u64(obj: &serde_json::Map<String, Value>, key: &str) -> Result<u64> {
    obj.get(key)
        .ok_or_else(|| bad(format!("missing field '{key}'")))?
        .as_u64()
        .ok_or_else(|| bad(format!("field '{key}' must be a nonnegative integer")))
}

fn get_f64(obj: &serde_json::Map<String, Value>, key: &str) -> Result<f64> {
    obj.get(key)
        .ok_or_else(|| bad(format!("missing field '{key}'")))?
        .as_f64()
        .ok_or_else(|| bad(format!("field '{key}' must be a number")))
}

fn get_float_array(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Vec<f64>> {
    let arr = obj
        .get(key)
        .ok_or_else(|| bad(format!("missing field '{key}'")))?
        .as_array()
        .ok_or_else(|| bad(format!("field '{key}' must be an array")))?;
    arr.iter()
        .map(|v| v.as_f64().ok_or_else(|| bad(format!("field '{key}' must contain only numbers"))))
        .collect()
}

/// Parses a state document, enforcing the format version and every shape
/// invariant of the underlying state type.
pub fn state_from_str(text: &str) -> Result<StateFile> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value.as_object().ok_or_else(|| bad("top level must be a JSON object"))?;

    let version = get_u64(obj, "format_version")?;
    if version != STATE_FORMAT_VERSION {
        return Err(Error::UnsupportedFormatVersion(version));
    }

    // minimal hand-built documents may omit "kind"; the renewable state is
    // the default reading
    let kind = match obj.get("kind") {
        None => "reer",
        Some(v) => v.as_str().ok_or_else(|| bad("field 'kind' must be a string"))?,
    };
    let tau = ExpectileLevel::new(get_f64(obj, "tau")?)?;
    let p = get_u64(obj, "p")? as usize;

    match kind {
        "reer" => {
            let beta = get_float_array(obj, "beta")?;
            let h = get_float_array(obj, "h")?;
            if beta.len() != p {
                return Err(bad(format!("beta has {} entries, p = {p}", beta.len())));
            }
            if h.len() != p * p {
                return Err(bad(format!("h has {} entries, p^2 = {}", h.len(), p * p)));
            }
            let n_seen = get_u64(obj, "n_seen")?;
            let batches_seen = match obj.get("batches_seen") {
                Some(v) => v.as_u64().ok_or_else(|| bad("field 'batches_seen' must be a nonnegative integer"))?,
                None => 1,
            };
            let h = SymMatrix::from_row_major(p, h)?;
            Ok(StateFile::Renewable(SummaryState::from_parts(h, beta, tau, n_seen, batches_seen)?))
        }
        "paer" => {
            let weight_mode = match obj.get("weight_mode") {
                None => WeightMode::FinalFraction,
                Some(v) => WeightMode::parse(v.as_str().ok_or_else(|| bad("field 'weight_mode' must be a string"))?)
                    .map_err(|_| bad("unknown weight_mode"))?,
            };
            let (acc_mat, acc_vec, n_seen, batches_seen) = accumulator_parts(obj, p)?;
            Ok(StateFile::Paer(PaerState::from_parts(tau, weight_mode, acc_mat, acc_vec, n_seen, batches_seen)?))
        }
        "dcer" => {
            let (acc_mat, acc_vec, n_seen, batches_seen) = accumulator_parts(obj, p)?;
            Ok(StateFile::Dcer(DcerState::from_parts(tau, acc_mat, acc_vec, n_seen, batches_seen)?))
        }
        "coefficients" => {
            let beta = get_float_array(obj, "beta")?;
            if beta.len() != p {
                return Err(bad(format!("beta has {} entries, p = {p}", beta.len())));
            }
            if beta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: "state coefficients".into() });
            }
            Ok(StateFile::Coefficients(Coefficients { beta, tau }))
        }
        other => Err(bad(format!("unknown state kind '{other}'"))),
    }
}

fn accumulator_parts(obj: &serde_json::Map<String, Value>, p: usize) -> Result<(SymMatrix, Vec<f64>, u64, u64)> {
    let acc_mat = get_float_array(obj, "acc_mat")?;
    let acc_vec = get_float_array(obj, "acc_vec")?;
    if acc_mat.len() != p * p {
        return Err(bad(format!("acc_mat has {} entries, p^2 = {}", acc_mat.len(), p * p)));
    }
    if acc_vec.len() != p {
        return Err(bad(format!("acc_vec has {} entries, p = {p}", acc_vec.len())));
    }
    let acc_mat = SymMatrix::from_row_major(p, acc_mat)?;
    Ok((acc_mat, acc_vec, get_u64(obj, "n_seen")?, get_u64(obj, "batches_seen")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectile::{Batch, IrlsConfig};

    fn tau(v: f64) -> ExpectileLevel {
        ExpectileLevel::new(v).unwrap()
    }

    fn sample_renewable() -> SummaryState {
        let first = Batch::new(vec![1.0, 0.3, 1.0, 0.8, 1.0, 0.1], vec![0.5, 1.25, -0.4], 2).unwrap();
        let st = SummaryState::from_first_batch(&first, tau(0.25), &IrlsConfig::default()).unwrap();
        st.update(&Batch::new(vec![1.0, 0.6], vec![0.9], 2).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let st = sample_renewable();
        let file = StateFile::Renewable(st.clone());
        let text = state_to_string(&file);
        match state_from_str(&text).unwrap() {
            StateFile::Renewable(back) => {
                assert_eq!(back.beta(), st.beta());
                assert_eq!(back.hessian().data(), st.hessian().data());
                assert_eq!(back.tau(), st.tau());
                assert_eq!(back.n_seen(), st.n_seen());
                assert_eq!(back.batches_seen(), st.batches_seen());
            }
            other => panic!("wrong kind: {}", other.kind()),
        }
        // serialization itself is deterministic
        assert_eq!(text, state_to_string(&state_from_str(&text).unwrap()));
    }

    #[test]
    fn round_trip_baseline_states() {
        let b = Batch::new(
            vec![1.0, 0.1, 1.0, 0.7, 1.0, 0.4, 1.0, 0.9],
            vec![0.3, 1.9, 1.1, 2.4],
            2,
        )
        .unwrap();
        let paer = PaerState::new(2, tau(0.4), WeightMode::CumulativeFraction)
            .unwrap()
            .update(&b, &IrlsConfig::default())
            .unwrap();
        let text = state_to_string(&StateFile::Paer(paer.clone()));
        match state_from_str(&text).unwrap() {
            StateFile::Paer(back) => {
                assert_eq!(back, paer);
            }
            other => panic!("wrong kind: {}", other.kind()),
        }

        let dcer = DcerState::new(2, tau(0.4)).unwrap().update(&b, &IrlsConfig::default()).unwrap();
        let text = state_to_string(&StateFile::Dcer(dcer.clone()));
        match state_from_str(&text).unwrap() {
            StateFile::Dcer(back) => assert_eq!(back, dcer),
            other => panic!("wrong kind: {}", other.kind()),
        }
    }

    #[test]
    fn round_trip_coefficients() {
        let c = Coefficients { beta: vec![0.1, -2.5, 3.0], tau: tau(0.8) };
        let text = state_to_string(&StateFile::Coefficients(c.clone()));
        match state_from_str(&text).unwrap() {
            StateFile::Coefficients(back) => assert_eq!(back, c),
            other => panic!("wrong kind: {}", other.kind()),
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = r#"{"format_version": 2, "tau": 0.5, "p": 1, "n_seen": 1, "beta": [0], "h": [0.5]}"#;
        assert!(matches!(state_from_str(text), Err(Error::UnsupportedFormatVersion(2))));
    }

    #[test]
    fn minimal_hand_built_document_loads_and_updates() {
        // no "kind", no "batches_seen": still a valid renewable state
        let text = r#"{"format_version": 1, "tau": 0.5, "p": 1, "n_seen": 1, "beta": [0], "h": [0.5]}"#;
        let file = state_from_str(text).unwrap();
        let st = match file {
            StateFile::Renewable(st) => st,
            other => panic!("wrong kind: {}", other.kind()),
        };
        let st = st.update(&Batch::new(vec![1.0], vec![2.0], 1).unwrap()).unwrap();
        assert!((st.beta()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_inconsistency_is_rejected() {
        let text = r#"{"format_version": 1, "tau": 0.5, "p": 2, "n_seen": 4, "beta": [0, 1], "h": [0.5]}"#;
        assert!(matches!(state_from_str(text), Err(Error::BadStateFile(_))));
    }

    #[test]
    fn asymmetric_hessian_is_rejected() {
        let text = r#"{"format_version": 1, "tau": 0.5, "p": 2, "n_seen": 4,
                       "beta": [0, 1], "h": [1.0, 0.25, 0.2, 1.0]}"#;
        assert!(matches!(state_from_str(text), Err(Error::BadStateFile(_))));
    }

    #[test]
    fn truncated_document_is_rejected() {
        let text = r#"{"format_version": 1, "tau": 0.5"#;
        assert!(matches!(state_from_str(text), Err(Error::Json(_))));
    }

    #[test]
    fn seventeen_digit_format_round_trips_awkward_values() {
        for v in [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0, 2.0_f64.powi(-40) + 1.0] {
            let s = fmt_f64_17(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s}");
        }
    }
}
