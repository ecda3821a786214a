//! Kept-sample serialization.
//!
//! One row per kept sample: `chain,iteration,config,log_lik` followed by one
//! `block:index=value` cell per active raw coordinate (1-based index within
//! the block). Values print in Rust's shortest round-trip form, so parsing
//! the file reproduces the samples bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rjmort::inference::Trace;
use rjmort::params::{BlockId, Params};

use crate::error::{CliError, Result};

pub fn render_traces<C: std::fmt::Display>(traces: &[Trace<C>]) -> String {
    let mut out = String::new();
    for trace in traces {
        for sample in &trace.samples {
            let _ = write!(
                out,
                "{},{},{},{}",
                trace.chain, sample.iteration, sample.config, sample.log_lik
            );
            for (block, values) in sample.params.iter() {
                for (i, v) in values.iter().enumerate() {
                    let _ = write!(out, ",{}:{}={}", block.name(), i + 1, v);
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_traces<C: std::fmt::Display>(path: &Path, traces: &[Trace<C>]) -> Result<()> {
    std::fs::write(path, render_traces(traces))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// A kept sample read back from a trace file; the configuration stays a
/// string so both families share the reader.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub chain: usize,
    pub iteration: u64,
    pub config: String,
    pub log_lik: f64,
    pub params: Params,
}

pub fn parse_traces(text: &str) -> Result<Vec<RawSample>> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let ctx = |what: &str| CliError::Data(format!("trace line {}: bad {what}", lineno + 1));
        let chain: usize =
            fields.next().ok_or_else(|| ctx("chain"))?.parse().map_err(|_| ctx("chain"))?;
        let iteration: u64 =
            fields.next().ok_or_else(|| ctx("iteration"))?.parse().map_err(|_| ctx("iteration"))?;
        let config = fields.next().ok_or_else(|| ctx("config"))?.to_string();
        let log_lik: f64 =
            fields.next().ok_or_else(|| ctx("log_lik"))?.parse().map_err(|_| ctx("log_lik"))?;
        let mut params = Params::new();
        for cell in fields {
            let (key, value) = cell
                .split_once('=')
                .ok_or_else(|| CliError::Data(format!("trace line {}: bad cell {cell:?}", lineno + 1)))?;
            let (name, idx) = key
                .split_once(':')
                .ok_or_else(|| CliError::Data(format!("trace line {}: bad key {key:?}", lineno + 1)))?;
            let block = BlockId::from_name(name).ok_or_else(|| {
                CliError::Data(format!("trace line {}: unknown block {name:?}", lineno + 1))
            })?;
            let idx: usize = idx
                .parse::<usize>()
                .map_err(|_| CliError::Data(format!("trace line {}: bad index {idx:?}", lineno + 1)))?;
            let value: f64 = value
                .parse()
                .map_err(|_| CliError::Data(format!("trace line {}: bad value {value:?}", lineno + 1)))?;
            if idx == 0 {
                return Err(CliError::Data(format!("trace line {}: indices are 1-based", lineno + 1)));
            }
            if !params.contains(block) {
                params.set(block, Vec::new());
            }
            let vec = params.get_mut(block).expect("just inserted");
            if vec.len() < idx {
                vec.resize(idx, 0.0);
            }
            vec[idx - 1] = value;
        }
        samples.push(RawSample { chain, iteration, config, log_lik, params });
    }
    if samples.is_empty() {
        return Err(CliError::Data("trace file has no samples".into()));
    }
    Ok(samples)
}

pub fn read_traces(path: &Path) -> Result<Vec<RawSample>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_traces(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rjmort::inference::{Diagnostics, Sample, Schedule};

    #[test]
    fn roundtrip_preserves_values_exactly() {
        let mut params = Params::new();
        params.set(BlockId::LevelAb, vec![-3.9999999999, 0.0123456789012345]);
        params.set(BlockId::K1, vec![0.1, -0.2, 0.1000000000000001]);
        let trace = Trace {
            chain: 1,
            seed: 42,
            schedule: Schedule::new(0, 1, 1).unwrap(),
            samples: vec![Sample {
                iteration: 7,
                config: rjmort::ap::ApConfig::new(2, 1, 1, 1).unwrap(),
                params: params.clone(),
                log_lik: -1234.567890123,
            }],
            diagnostics: Diagnostics::default(),
        };
        let text = render_traces(std::slice::from_ref(&trace));
        let samples = parse_traces(&text).unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.chain, 1);
        assert_eq!(s.iteration, 7);
        assert_eq!(s.config, "2111");
        assert_eq!(s.log_lik.to_bits(), (-1234.567890123f64).to_bits());
        assert_eq!(s.params.get(BlockId::LevelAb).unwrap(), params.get(BlockId::LevelAb).unwrap());
        assert_eq!(s.params.get(BlockId::K1).unwrap(), params.get(BlockId::K1).unwrap());
    }
}
