//! Instance and solution files.
//!
//! Instance JSON:
//! `{ "name", "n", "m", "objective": [..],
//!    "constraints": [{ "terms": [[j, a]], "rhs": b }], "metadata": {..} }`.
//! Constraints in a file may carry `"sense": "le" | "ge"`; `ge` rows are
//! negated on read and everything is re-serialized canonically as `<=` with
//! no sense field. Numbers are written as shortest round-trip decimals, so
//! write-then-read is exact on every field.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::ilp::{Constraint, Ilp, Solution};

#[derive(Serialize, Deserialize)]
struct IlpFile {
    name: String,
    n: usize,
    m: usize,
    objective: Vec<f64>,
    constraints: Vec<ConstraintFile>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ConstraintFile {
    terms: Vec<(usize, f64)>,
    rhs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sense: Option<String>,
}

pub fn read_ilp(path: impl AsRef<Path>) -> Result<Ilp> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_ilp(&text)
}

pub fn parse_ilp(text: &str) -> Result<Ilp> {
    let file: IlpFile = serde_json::from_str(text)?;
    if file.objective.len() != file.n {
        return Err(Error::Validation(format!(
            "field 'objective': length {} does not match n = {}",
            file.objective.len(),
            file.n
        )));
    }
    if file.constraints.len() != file.m {
        return Err(Error::Validation(format!(
            "field 'constraints': {} rows but m = {}",
            file.constraints.len(),
            file.m
        )));
    }
    let mut rows = Vec::with_capacity(file.constraints.len());
    for (i, row) in file.constraints.into_iter().enumerate() {
        let base = Constraint::new(row.terms, row.rhs);
        match row.sense.as_deref() {
            None | Some("le") => rows.push(base),
            Some("ge") => rows.push(base.negated()),
            Some(other) => {
                return Err(Error::Validation(format!(
                    "constraint {i}: unknown sense {other:?} (expected \"le\" or \"ge\")"
                )))
            }
        }
    }
    Ilp::new(file.name, file.objective, rows, file.metadata)
}

pub fn write_ilp(ilp: &Ilp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ilp_to_string(ilp))?;
    Ok(())
}

pub fn ilp_to_string(ilp: &Ilp) -> String {
    let file = IlpFile {
        name: ilp.name.clone(),
        n: ilp.num_vars(),
        m: ilp.num_constraints(),
        objective: ilp.objective().to_vec(),
        constraints: ilp
            .constraints()
            .iter()
            .map(|row| ConstraintFile {
                terms: row.terms.clone(),
                rhs: row.rhs,
                sense: None,
            })
            .collect(),
        metadata: ilp.metadata.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("ilp serialization cannot fail");
    text.push('\n');
    text
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    assignment: Bits,
    objective: f64,
}

pub fn write_solution(solution: &Solution, path: impl AsRef<Path>) -> Result<()> {
    let file = SolutionFile {
        assignment: solution.assignment.clone(),
        objective: solution.objective,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("solution serialization cannot fail");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a solution file and re-evaluates it against the instance, so the
/// returned feasibility/objective always reflect `ilp`.
pub fn read_solution(ilp: &Ilp, path: impl AsRef<Path>) -> Result<Solution> {
    let text = fs::read_to_string(path)?;
    let file: SolutionFile = serde_json::from_str(&text)?;
    let sol = ilp.evaluate(&file.assignment)?;
    if (sol.objective - file.objective).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "solution file objective {} disagrees with re-evaluation {}",
            file.objective, sol.objective
        )));
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilp::FEAS_TOL;

    fn sample_ilp() -> Ilp {
        let mut meta = BTreeMap::new();
        meta.insert("family".into(), "test".into());
        Ilp::new(
            "sample",
            vec![1.0, -2.5, 0.1],
            vec![
                Constraint::new(vec![(0, 1.0), (2, -1.0)], 0.5),
                Constraint::new(vec![(1, 3.0)], 2.0),
            ],
            meta,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.json");
        let ilp = sample_ilp();
        write_ilp(&ilp, &path).unwrap();
        let back = read_ilp(&path).unwrap();
        assert_eq!(back, ilp);
        // Writing again produces byte-identical output.
        let again = ilp_to_string(&back);
        assert_eq!(again, ilp_to_string(&ilp));
    }

    #[test]
    fn bit_exact_float_round_trip() {
        let tricky = vec![0.1 + 0.2, 1.0 / 3.0, -1e-17, 6.02e23];
        let ilp = Ilp::new("floats", tricky.clone(), vec![], BTreeMap::new()).unwrap();
        let back = parse_ilp(&ilp_to_string(&ilp)).unwrap();
        for (a, b) in tricky.iter().zip(back.objective()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ge_sense_normalized_to_le() {
        let text = r#"{
            "name": "ge",
            "n": 2,
            "m": 1,
            "objective": [1.0, 1.0],
            "constraints": [{ "terms": [[0, 1.0], [1, 1.0]], "rhs": 1.0, "sense": "ge" }],
            "metadata": {}
        }"#;
        let ilp = parse_ilp(text).unwrap();
        let row = &ilp.constraints()[0];
        assert_eq!(row.terms, vec![(0, -1.0), (1, -1.0)]);
        assert_eq!(row.rhs, -1.0);
        // x = (1,0) satisfies the original >= 1 row.
        assert!(row.activity(&Bits::from_bitstring("10").unwrap()) <= row.rhs + FEAS_TOL);
        // Canonical re-serialization carries no sense field.
        assert!(!ilp_to_string(&ilp).contains("sense"));
    }

    #[test]
    fn duplicate_index_in_file_rejected() {
        let text = r#"{
            "name": "dup",
            "n": 2,
            "m": 1,
            "objective": [1.0, 1.0],
            "constraints": [{ "terms": [[0, 1.0], [0, 2.0]], "rhs": 1.0 }],
            "metadata": {}
        }"#;
        assert!(matches!(parse_ilp(text), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_json_names_location() {
        let err = parse_ilp("{ \"name\": ").unwrap_err();
        match err {
            Error::Parse(msg) => assert!(msg.contains("line"), "got: {msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn solution_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.json");
        let ilp = sample_ilp();
        let sol = ilp.evaluate(&Bits::from_bitstring("010").unwrap()).unwrap();
        write_solution(&sol, &path).unwrap();
        let back = read_solution(&ilp, &path).unwrap();
        assert_eq!(back.assignment, sol.assignment);
        assert_eq!(back.objective, sol.objective);
    }
}
