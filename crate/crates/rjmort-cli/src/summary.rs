//! Posterior summaries: configuration probabilities, indicator marginals,
//! credible intervals of log-mortality (pooled across configurations and
//! chains, so the intervals are model-averaged), crude rates, and sampler
//! diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rjmort::ap::{predict_eta_ap, ApConfig};
use rjmort::app::{predict_eta_app, AppConfig};
use rjmort::inference::MoveStats;

use crate::data_csv::Dataset;
use crate::error::{CliError, Result};
use crate::trace_csv::RawSample;

#[derive(Debug, Clone)]
pub struct CellLabel {
    pub age: i32,
    pub year: i32,
    pub product: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PciRow {
    pub cell: CellLabel,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct CrudeRow {
    pub cell: CellLabel,
    pub log_rate: f64,
    pub zero_deaths: bool,
    pub missing: bool,
}

#[derive(Debug, Clone)]
pub struct SummaryBundle {
    /// Configuration probability, descending.
    pub config_probabilities: Vec<(String, f64)>,
    /// Per indicator (1-based): value -> marginal probability.
    pub delta_marginals: Vec<Vec<(u8, f64)>>,
    /// 2.5% / 50% / 97.5% of log-mortality per cell.
    pub pci: Vec<PciRow>,
    pub crude: Vec<CrudeRow>,
    pub diagnostics: Vec<(String, MoveStats)>,
}

/// Empirical quantile with linear interpolation on the sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn summarize(
    samples: &[RawSample],
    dataset: &Dataset,
    diagnostics: Vec<(String, MoveStats)>,
) -> Result<SummaryBundle> {
    if samples.is_empty() {
        return Err(CliError::Data("no kept samples to summarize".into()));
    }

    // Pooled configuration frequencies.
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.config.clone()).or_insert(0) += 1;
    }
    let total = samples.len() as f64;
    let mut config_probabilities: Vec<(String, f64)> =
        counts.into_iter().map(|(c, n)| (c, n as f64 / total)).collect();
    config_probabilities.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    // Indicator marginals from the configuration table.
    let delta_count = config_probabilities[0].0.len();
    let mut delta_marginals = Vec::with_capacity(delta_count);
    for d in 0..delta_count {
        let mut per_value: BTreeMap<u8, f64> = BTreeMap::new();
        for (cfg, p) in &config_probabilities {
            let v = cfg.as_bytes()[d] - b'0';
            *per_value.entry(v).or_insert(0.0) += p;
        }
        delta_marginals.push(per_value.into_iter().collect());
    }

    // Log-mortality per cell across kept samples.
    let n_cells = match dataset {
        Dataset::Ap(d) => d.n_ages() * d.n_years(),
        Dataset::App(d) => d.n_ages() * d.n_years() * d.n_products(),
    };
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len()); n_cells];
    for s in samples {
        let eta = match dataset {
            Dataset::Ap(d) => {
                let cfg: ApConfig = s.config.parse()?;
                predict_eta_ap(cfg, &s.params, d.n_ages(), d.n_years())?
            }
            Dataset::App(d) => {
                let cfg: AppConfig = s.config.parse()?;
                predict_eta_app(cfg, &s.params, d.n_ages(), d.n_years(), d.n_products())?
            }
        };
        if eta.len() != n_cells {
            return Err(CliError::Data(
                "trace parameters do not match the dataset dimensions".into(),
            ));
        }
        for (cell, v) in eta.into_iter().enumerate() {
            per_cell[cell].push(v);
        }
    }

    let labels: Vec<CellLabel> = match dataset {
        Dataset::Ap(d) => d
            .ages
            .iter()
            .flat_map(|&age| d.years.iter().map(move |&year| CellLabel { age, year, product: None }))
            .collect(),
        Dataset::App(d) => d
            .ages
            .iter()
            .flat_map(|&age| {
                d.years.iter().flat_map(move |&year| {
                    d.products
                        .iter()
                        .map(move |p| CellLabel { age, year, product: Some(p.clone()) })
                })
            })
            .collect(),
    };

    let mut pci = Vec::with_capacity(n_cells);
    for (cell, values) in per_cell.iter_mut().enumerate() {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pci.push(PciRow {
            cell: labels[cell].clone(),
            lower: quantile(values, 0.025),
            median: quantile(values, 0.5),
            upper: quantile(values, 0.975),
        });
    }

    let (deaths, exposures): (&[f64], &[f64]) = match dataset {
        Dataset::Ap(d) => (&d.deaths, &d.exposures),
        Dataset::App(d) => (&d.deaths, &d.exposures),
    };
    let crude = labels
        .iter()
        .enumerate()
        .map(|(i, cell)| CrudeRow {
            cell: cell.clone(),
            log_rate: ((deaths[i] + 0.5) / (exposures[i] + 1.0)).ln(),
            zero_deaths: deaths[i] == 0.0,
            missing: exposures[i] == 0.0,
        })
        .collect();

    Ok(SummaryBundle { config_probabilities, delta_marginals, pci, crude, diagnostics })
}

/// Format with six significant digits for the human-readable outputs.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..=9).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Trim trailing zeros after the decimal point.
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn label_header(has_product: bool) -> &'static str {
    if has_product {
        "age,year,product"
    } else {
        "age,year"
    }
}

fn label_fields(cell: &CellLabel) -> String {
    match &cell.product {
        Some(p) => format!("{},{},{}", cell.age, cell.year, p),
        None => format!("{},{}", cell.age, cell.year),
    }
}

impl SummaryBundle {
    pub fn write_files(&self, out_dir: &Path) -> Result<()> {
        let write = |name: &str, content: String| -> Result<()> {
            let path = out_dir.join(name);
            std::fs::write(&path, content)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
        };

        let mut cfg = String::from("config,probability\n");
        for (c, p) in &self.config_probabilities {
            let _ = writeln!(cfg, "{c},{}", sig6(*p));
        }
        write("config_probabilities.csv", cfg)?;

        let mut dm = String::from("delta,value,probability\n");
        for (d, values) in self.delta_marginals.iter().enumerate() {
            for (v, p) in values {
                let _ = writeln!(dm, "{},{v},{}", d + 1, sig6(*p));
            }
        }
        write("delta_marginals.csv", dm)?;

        let has_product = self.pci.first().map(|r| r.cell.product.is_some()).unwrap_or(false);
        let mut pci = format!("{},lower,median,upper\n", label_header(has_product));
        for row in &self.pci {
            let _ = writeln!(
                pci,
                "{},{},{},{}",
                label_fields(&row.cell),
                sig6(row.lower),
                sig6(row.median),
                sig6(row.upper)
            );
        }
        write("pci.csv", pci)?;

        let mut crude = format!("{},log_crude_rate,zero_deaths,missing\n", label_header(has_product));
        for row in &self.crude {
            let _ = writeln!(
                crude,
                "{},{},{},{}",
                label_fields(&row.cell),
                sig6(row.log_rate),
                row.zero_deaths,
                row.missing
            );
        }
        write("crude_rates.csv", crude)?;

        let mut diag = String::from("move,proposed,accepted,acceptance_rate,laplace_failures\n");
        for (name, s) in &self.diagnostics {
            let rate = if s.proposed > 0 { s.accepted as f64 / s.proposed as f64 } else { 0.0 };
            let _ = writeln!(
                diag,
                "{name},{},{},{},{}",
                s.proposed,
                s.accepted,
                sig6(rate),
                s.laplace_failures
            );
        }
        write("diagnostics.csv", diag)?;

        write("report.txt", self.render_report())
    }

    pub fn render_report(&self) -> String {
        let mut out = String::new();
        out.push_str("Posterior model probabilities\n");
        out.push_str("-----------------------------\n");
        for (c, p) in self.config_probabilities.iter().take(10) {
            let _ = writeln!(out, "  {c}  {}", sig6(*p));
        }
        out.push_str("\nIndicator marginals\n");
        out.push_str("-------------------\n");
        for (d, values) in self.delta_marginals.iter().enumerate() {
            let parts: Vec<String> =
                values.iter().map(|(v, p)| format!("{v}: {}", sig6(*p))).collect();
            let _ = writeln!(out, "  delta{}  {}", d + 1, parts.join("  "));
        }
        out.push_str("\nLog-mortality credible band (2.5% / 50% / 97.5%)\n");
        out.push_str("------------------------------------------------\n");
        let _ = writeln!(out, "  {} cells; first and last shown", self.pci.len());
        for row in [self.pci.first(), self.pci.last()].into_iter().flatten() {
            let _ = writeln!(
                out,
                "  {}  {} / {} / {}",
                label_fields(&row.cell),
                sig6(row.lower),
                sig6(row.median),
                sig6(row.upper)
            );
        }
        if !self.diagnostics.is_empty() {
            out.push_str("\nSampler diagnostics\n");
            out.push_str("-------------------\n");
            for (name, s) in &self.diagnostics {
                let rate = if s.proposed > 0 { s.accepted as f64 / s.proposed as f64 } else { 0.0 };
                let _ = writeln!(
                    out,
                    "  {name}: accepted {}/{} ({}), laplace failures {}",
                    s.accepted,
                    s.proposed,
                    sig6(rate),
                    s.laplace_failures
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rjmort::params::{BlockId, Params};

    fn toy_dataset() -> Dataset {
        let text = "age,year,deaths,exposure\n\
                    60,1990,5,100\n60,1991,6,110\n60,1992,6,110\n\
                    61,1990,7,120\n61,1991,8,130\n61,1992,8,130\n\
                    62,1990,9,120\n62,1991,9,130\n62,1992,0,130\n";
        crate::data_csv::parse_dataset_csv(text).unwrap()
    }

    fn constant_sample(chain: usize, config: &str, level: f64) -> RawSample {
        let mut params = Params::new();
        params.set(BlockId::LevelAb, vec![level, 0.0]);
        params.set(BlockId::K1, vec![0.0, 0.0, 0.0]);
        RawSample {
            chain,
            iteration: 1,
            config: config.to_string(),
            log_lik: -10.0,
            params,
        }
    }

    #[test]
    fn single_config_probability_is_one() {
        let dataset = toy_dataset();
        let samples = vec![constant_sample(0, "2111", -3.0), constant_sample(1, "2111", -3.0)];
        let bundle = summarize(&samples, &dataset, Vec::new()).unwrap();
        assert_eq!(bundle.config_probabilities, vec![("2111".to_string(), 1.0)]);
        // Constant eta: the band collapses.
        for row in &bundle.pci {
            assert_eq!(row.lower, -3.0);
            assert_eq!(row.median, -3.0);
            assert_eq!(row.upper, -3.0);
        }
    }

    #[test]
    fn pooled_probabilities_weight_chains_equally() {
        let dataset = toy_dataset();
        // Chain 0: 3 of 5 in the base config; chain 1: 4 of 5.
        let mut samples = Vec::new();
        for i in 0..5 {
            let cfg = if i < 3 { "2111" } else { "1111" };
            let mut s = constant_sample(0, cfg, -3.0);
            if cfg == "1111" {
                s.params = Params::new();
                s.params.set(BlockId::Ax, vec![-3.0; 3]);
                s.params.set(BlockId::K1, vec![0.0; 3]);
            }
            samples.push(s);
        }
        for i in 0..5 {
            let cfg = if i < 4 { "2111" } else { "1111" };
            let mut s = constant_sample(1, cfg, -3.0);
            if cfg == "1111" {
                s.params = Params::new();
                s.params.set(BlockId::Ax, vec![-3.0; 3]);
                s.params.set(BlockId::K1, vec![0.0; 3]);
            }
            samples.push(s);
        }
        let bundle = summarize(&samples, &dataset, Vec::new()).unwrap();
        let p: BTreeMap<_, _> = bundle.config_probabilities.into_iter().collect();
        assert!((p["2111"] - 0.7).abs() < 1e-12);
        assert!((p["1111"] - 0.3).abs() < 1e-12);
        // Marginal of the first indicator follows.
        let d1 = &bundle.delta_marginals[0];
        assert!((d1.iter().find(|(v, _)| *v == 2).unwrap().1 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn crude_rows_flag_zero_deaths() {
        let dataset = toy_dataset();
        let samples = vec![constant_sample(0, "2111", -3.0)];
        let bundle = summarize(&samples, &dataset, Vec::new()).unwrap();
        let last = bundle.crude.last().unwrap();
        assert!(last.zero_deaths);
        assert!(!last.missing);
        assert!((last.log_rate - (0.5f64 / 131.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(-1234.56789), "-1234.57");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.000012345678), "1.23457e-5");
    }
}
