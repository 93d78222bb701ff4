//! Instance and data-file parsing.
//!
//! One instance per line or flag value:
//! - `origin`: all zeros, width taken from the predictor
//! - `0.1,-0.3,2`: continuous values
//! - `bits:0,1,1`: binary values
//! - `text:not bad at all`: tokens (the prefix may be dropped for anything
//!   that is not a number list)
//! - `{"kind": "mixed", ...}`: the JSON form of any instance

use std::path::Path;

use anyhow::{bail, Context, Result};
use hiex_core::gateway::PredictorHandle;
use hiex_core::sampler::Instance;

fn numbers(text: &str) -> Option<Vec<f64>> {
    text.split(',').map(|t| t.trim().parse::<f64>().ok()).collect()
}

/// Feature count of the predictor when it is known without querying it.
pub fn predictor_width(f: &PredictorHandle) -> Option<usize> {
    f.builtin_function()
        .map(|b| b.p())
        .or_else(|| f.network_ref().map(|n| n.input_size()))
}

pub fn parse_instance(text: &str, f: &PredictorHandle) -> Result<Instance> {
    let text = text.trim();
    if text.is_empty() {
        bail!("empty instance");
    }
    if text == "origin" {
        let p = predictor_width(f).context("`origin` needs a builtin or network predictor to know the width")?;
        return Ok(Instance::continuous(vec![0.0; p]));
    }
    if text.starts_with('{') {
        let x: Instance = serde_json::from_str(text).with_context(|| format!("instance {text:?}"))?;
        x.validate()?;
        return Ok(x);
    }
    if let Some(rest) = text.strip_prefix("bits:") {
        let v = numbers(rest).with_context(|| format!("binary instance {text:?} must list 0/1 values"))?;
        return Ok(Instance::binary(v)?);
    }
    if let Some(rest) = text.strip_prefix("text:") {
        return Ok(Instance::sentence(rest)?);
    }
    if let Some(v) = numbers(text) {
        return Ok(Instance::continuous(v));
    }
    Ok(Instance::sentence(text)?)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Non-empty lines that do not start with `#`.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn read_instances(path: &Path, f: &PredictorHandle) -> Result<Vec<Instance>> {
    let text = read(path)?;
    data_lines(&text)
        .map(|(n, l)| parse_instance(l, f).with_context(|| format!("{}:{n}", path.display())))
        .collect()
}

/// `label<TAB>instance` per line.
pub fn read_labelled(path: &Path, f: &PredictorHandle) -> Result<(Vec<Instance>, Vec<f64>)> {
    let text = read(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, line) in data_lines(&text) {
        let (label, rest) = line
            .split_once('\t')
            .with_context(|| format!("{}:{n}: expected `label<TAB>instance`", path.display()))?;
        ys.push(
            label
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}:{n}: label {label:?}", path.display()))?,
        );
        xs.push(parse_instance(rest, f).with_context(|| format!("{}:{n}", path.display()))?);
    }
    Ok((xs, ys))
}

/// Line form of an instance, readable by [`parse_instance`].
pub fn format_instance(x: &Instance) -> String {
    match x {
        Instance::Continuous { values } => values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        Instance::Binary { values } => format!("bits:{}", values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
        Instance::TokenSequence { tokens } => format!("text:{}", tokens.join(" ")),
        Instance::Mixed { .. } => serde_json::to_string(x).expect("instances serialise"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hiex_core::synthbench::SyntheticFunction;

    fn f1() -> PredictorHandle {
        PredictorHandle::builtin(SyntheticFunction::F1)
    }

    #[test]
    fn instance_forms() {
        assert_eq!(parse_instance("origin", &f1()).unwrap(), Instance::continuous(vec![0.0; 10]));
        assert_eq!(parse_instance("1, -2.5", &f1()).unwrap(), Instance::continuous(vec![1.0, -2.5]));
        assert_eq!(parse_instance("bits:0,1", &f1()).unwrap(), Instance::binary(vec![0.0, 1.0]).unwrap());
        assert_eq!(parse_instance("not bad", &f1()).unwrap(), Instance::sentence("not bad").unwrap());
        assert_eq!(parse_instance("text:1 2", &f1()).unwrap(), Instance::sentence("1 2").unwrap());
        assert!(parse_instance("bits:0,2", &f1()).is_err());
        assert!(parse_instance("origin", &PredictorHandle::external("cat", hiex_core::gateway::Head::Regression)).is_err());
    }

    #[test]
    fn formatted_instances_parse_back() {
        for x in [
            Instance::continuous(vec![0.25, -1.0]),
            Instance::binary(vec![1.0, 0.0]).unwrap(),
            Instance::sentence("this is fine").unwrap(),
            Instance::Mixed {
                values: vec![0.5, 1.0],
                binary: vec![false, true],
            },
        ] {
            assert_eq!(parse_instance(&format_instance(&x), &f1()).unwrap(), x);
        }
    }

    #[test]
    fn labelled_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.tsv");
        std::fs::write(&path, "# header\n1\tnot bad\n0 no tab\n").unwrap();
        let err = read_labelled(&path, &f1()).unwrap_err();
        assert!(format!("{err:#}").contains(":3"), "{err:#}");
    }
}
