//! Plain-text model files.
//!
//! ```text
//! # comment
//! [meta]
//! n = 3
//! omega = 0.01
//! T = 40
//! M = 6
//! [A]
//! 0 1 0.02        # row col value, 0-based
//! [mu]
//! 0 0.05          # index value
//! [B]
//! 0 0 1
//! [mu_stage 0]
//! 2 0.1
//! ```
//!
//! `T`, `M` and the `[mu_stage k]` blocks are optional; missing `mu`
//! entries are zero. `allow_unstable = true` in `[meta]` accepts branching
//! ratios at or above one.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::hawkes::{ModelOptions, NetworkModel};
use crate::linalg::CsrMatrix;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct ModelFile {
    pub model: NetworkModel,
    pub horizon: Option<f64>,
    pub stages: Option<usize>,
    /// Per-stage exogenous intensities, indexed by stage.
    pub stage_mu: Vec<DVector<f64>>,
}

fn parse_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Meta,
    A,
    Mu,
    B,
    Stage(usize),
}

fn number<T: std::str::FromStr>(line: usize, field: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(line, field, format!("cannot parse `{s}`")))
}

fn nonnegative(line: usize, field: &str, s: &str) -> Result<f64> {
    let v: f64 = number(line, field, s)?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(parse_err(line, field, format!("value {v} must be finite and nonnegative")));
    }
    Ok(v)
}

#[derive(Default)]
struct Raw {
    meta: BTreeMap<String, (usize, String)>,
    a: Vec<(usize, usize, usize, f64)>,
    mu: Vec<(usize, usize, f64)>,
    b: Vec<(usize, usize, usize, f64)>,
    stages: BTreeMap<usize, Vec<(usize, usize, f64)>>,
}

fn read_raw<R: BufRead>(reader: R) -> Result<Raw> {
    let mut raw = Raw::default();
    let mut section = Section::None;
    for (k, line) in reader.lines().enumerate() {
        let no = k + 1;
        let line = line?;
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(header) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            section = match header.trim() {
                "meta" => Section::Meta,
                "A" => Section::A,
                "mu" => Section::Mu,
                "B" => Section::B,
                other => match other.strip_prefix("mu_stage") {
                    Some(idx) => Section::Stage(number(no, "mu_stage", idx.trim())?),
                    None => return Err(parse_err(no, "section", format!("unknown section [{other}]"))),
                },
            };
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        match section {
            Section::None => return Err(parse_err(no, "section", "data before the first section header")),
            Section::Meta => {
                let (key, value) = text
                    .split_once('=')
                    .ok_or_else(|| parse_err(no, "meta", "expected `key = value`"))?;
                raw.meta.insert(key.trim().to_string(), (no, value.trim().to_string()));
            }
            Section::A | Section::B => {
                let name = if section == Section::A { "A" } else { "B" };
                if fields.len() != 3 {
                    return Err(parse_err(no, name, "expected `row col value`"));
                }
                let i: usize = number(no, name, fields[0])?;
                let j: usize = number(no, name, fields[1])?;
                let v = nonnegative(no, &format!("{name}[{i},{j}]"), fields[2])?;
                let target = if section == Section::A { &mut raw.a } else { &mut raw.b };
                target.push((no, i, j, v));
            }
            Section::Mu | Section::Stage(_) => {
                if fields.len() != 2 {
                    return Err(parse_err(no, "mu", "expected `index value`"));
                }
                let i: usize = number(no, "mu", fields[0])?;
                let v = nonnegative(no, &format!("mu[{i}]"), fields[1])?;
                match section {
                    Section::Mu => raw.mu.push((no, i, v)),
                    Section::Stage(s) => raw.stages.entry(s).or_default().push((no, i, v)),
                    _ => unreachable!(),
                }
            }
        }
    }
    Ok(raw)
}

fn meta<T: std::str::FromStr>(raw: &Raw, key: &str) -> Result<Option<T>> {
    match raw.meta.get(key) {
        Some((line, v)) => Ok(Some(number(*line, key, v)?)),
        None => Ok(None),
    }
}

fn dense(n: usize, entries: &[(usize, usize, f64)], what: &str) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(n);
    for &(line, i, x) in entries {
        if i >= n {
            return Err(parse_err(line, format!("{what}[{i}]"), format!("index outside 0..{n}")));
        }
        v[i] = x;
    }
    Ok(v)
}

fn sparse(n: usize, entries: &[(usize, usize, usize, f64)], what: &str) -> Result<CsrMatrix> {
    let mut triplets = Vec::with_capacity(entries.len());
    for &(line, i, j, v) in entries {
        if i >= n || j >= n {
            return Err(parse_err(line, format!("{what}[{i},{j}]"), format!("index outside 0..{n}")));
        }
        triplets.push((i, j, v));
    }
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

pub fn parse_model<R: BufRead>(reader: R) -> Result<ModelFile> {
    let raw = read_raw(reader)?;
    let n: usize = meta(&raw, "n")?.ok_or_else(|| parse_err(0, "n", "missing `n` in [meta]"))?;
    let omega: f64 = meta(&raw, "omega")?.ok_or_else(|| parse_err(0, "omega", "missing `omega` in [meta]"))?;
    let horizon: Option<f64> = meta(&raw, "T")?;
    let stages: Option<usize> = meta(&raw, "M")?;
    let allow_unstable = meta::<bool>(&raw, "allow_unstable")?.unwrap_or(false);
    if let Some((line, key)) = raw
        .meta
        .iter()
        .find(|(k, _)| !["n", "omega", "T", "M", "allow_unstable"].contains(&k.as_str()))
        .map(|(k, (l, _))| (*l, k.clone()))
    {
        return Err(parse_err(line, key, "unknown [meta] key"));
    }
    let a = sparse(n, &raw.a, "A")?;
    let b = sparse(n, &raw.b, "B")?;
    let mu = dense(n, &raw.mu, "mu")?;
    let mut stage_mu = Vec::with_capacity(raw.stages.len());
    for (expected, (s, entries)) in raw.stages.iter().enumerate() {
        if *s != expected {
            let line = entries.first().map_or(0, |e| e.0);
            return Err(parse_err(line, "mu_stage", format!("stage blocks must be 0..k without gaps; missing {expected}")));
        }
        stage_mu.push(dense(n, entries, "mu_stage")?);
    }
    if let (Some(m), false) = (stages, stage_mu.is_empty()) {
        if stage_mu.len() != m {
            return Err(parse_err(0, "mu_stage", format!("{} stage blocks but M = {m}", stage_mu.len())));
        }
    }
    let model = NetworkModel::new(a, omega, mu, b, ModelOptions { allow_unstable })?;
    Ok(ModelFile {
        model,
        horizon,
        stages,
        stage_mu,
    })
}

pub fn ingest_model(path: &Path) -> Result<ModelFile> {
    parse_model(BufReader::new(std::fs::File::open(path)?))
}

pub fn write_model<W: Write>(file: &ModelFile, mut w: W) -> Result<()> {
    let m = &file.model;
    writeln!(w, "[meta]")?;
    writeln!(w, "n = {}", m.n())?;
    writeln!(w, "omega = {:?}", m.omega())?;
    if let Some(t) = file.horizon {
        writeln!(w, "T = {t:?}")?;
    }
    if let Some(s) = file.stages {
        writeln!(w, "M = {s}")?;
    }
    if m.allow_unstable() {
        writeln!(w, "allow_unstable = true")?;
    }
    writeln!(w, "[A]")?;
    for (i, j, v) in m.a().triplets() {
        writeln!(w, "{i} {j} {v:?}")?;
    }
    writeln!(w, "[mu]")?;
    for (i, v) in m.mu().iter().enumerate() {
        writeln!(w, "{i} {v:?}")?;
    }
    writeln!(w, "[B]")?;
    for (i, j, v) in m.b().triplets() {
        writeln!(w, "{i} {j} {v:?}")?;
    }
    for (s, mu) in file.stage_mu.iter().enumerate() {
        writeln!(w, "[mu_stage {s}]")?;
        for (i, v) in mu.iter().enumerate() {
            writeln!(w, "{i} {v:?}")?;
        }
    }
    Ok(())
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(file, &mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ModelFile> {
        parse_model(text.as_bytes())
    }

    #[test]
    fn negative_influence_is_located() {
        let text = "[meta]\nn = 2\nomega = 1\n[A]\n0 1 0.1\n1 0 -0.2\n[B]\n0 0 1\n1 1 1\n";
        match parse(text) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 6);
                assert_eq!(field, "A[1,0]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn omega_on_the_spectrum_is_rejected() {
        // A = [[0.5, 0.5], [0.5, 0.5]] has eigenvalues 0 and 1
        let text = "[meta]\nn = 2\nomega = 1\nallow_unstable = true\n[A]\n0 0 0.5\n0 1 0.5\n1 0 0.5\n1 1 0.5\n[B]\n0 0 1\n1 1 1\n";
        let err = parse(text).unwrap_err();
        assert!(matches!(err, Error::SingularShift { .. }), "{err}");
        assert!(err.to_string().contains("Spectrum"));
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse("0 1 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("[meta]\nn = x\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("[meta]\nn = 2\nomega = 1\n[A]\n0 5 0.1\n"), Err(Error::Parse { line: 5, .. })));
        assert!(matches!(parse("[weird]\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("[meta]\nn = 1\nomega = 1\ncolour = 2\n"), Err(Error::Parse { line: 4, .. })));
    }
}
