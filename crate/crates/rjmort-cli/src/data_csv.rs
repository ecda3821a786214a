//! Dataset CSV ingestion and serialization.
//!
//! Normalized long format, one row per cell. The header decides the family:
//! `age,year,deaths,exposure` for age-period data,
//! `age,year,product,deaths,exposure` for age-period-product data.
//! Cells absent from the file are structurally missing (zero exposure, zero
//! deaths); duplicate cells are an error. Age and year labels sort
//! ascending, products keep first-appearance order.

use std::collections::BTreeSet;
use std::collections::HashMap;

use rjmort::dataset::{ApDataset, AppDataset};

use crate::error::{CliError, Result};

pub enum Dataset {
    Ap(ApDataset),
    App(AppDataset),
}

impl Dataset {
    pub fn family(&self) -> &'static str {
        match self {
            Dataset::Ap(_) => "ap",
            Dataset::App(_) => "app",
        }
    }
}

const AP_HEADER: [&str; 4] = ["age", "year", "deaths", "exposure"];
const APP_HEADER: [&str; 5] = ["age", "year", "product", "deaths", "exposure"];

pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers == AP_HEADER {
        parse_ap(reader)
    } else if headers == APP_HEADER {
        parse_app(reader)
    } else {
        Err(CliError::Data(format!(
            "unrecognized header {:?}; expected {:?} or {:?}",
            headers, AP_HEADER, APP_HEADER
        )))
    }
}

struct RowCtx {
    line: usize,
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, what: &str, ctx: &RowCtx) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| CliError::Data(format!("row {}: missing {what}", ctx.line)))?;
    raw.parse::<T>()
        .map_err(|_| CliError::Data(format!("row {}: malformed {what} {raw:?}", ctx.line)))
}

fn check_counts(deaths: f64, exposure: f64, ctx: &RowCtx) -> Result<()> {
    if !deaths.is_finite() || deaths < 0.0 {
        return Err(CliError::Data(format!("row {}: deaths must be non-negative", ctx.line)));
    }
    if !exposure.is_finite() || exposure < 0.0 {
        return Err(CliError::Data(format!("row {}: exposure must be non-negative", ctx.line)));
    }
    if exposure == 0.0 && deaths > 0.0 {
        return Err(CliError::Data(format!(
            "row {}: deaths {deaths} recorded with zero exposure",
            ctx.line
        )));
    }
    Ok(())
}

fn parse_ap(mut reader: csv::Reader<&[u8]>) -> Result<Dataset> {
    let mut rows: Vec<(i32, i32, f64, f64)> = Vec::new();
    let mut ages = BTreeSet::new();
    let mut years = BTreeSet::new();
    let mut seen: HashMap<(i32, i32), usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let ctx = RowCtx { line: i + 2 };
        let record = record.map_err(|e| CliError::Data(format!("row {}: {e}", ctx.line)))?;
        if record.len() != 4 {
            return Err(CliError::Data(format!("row {}: expected 4 fields", ctx.line)));
        }
        let age: i32 = field(&record, 0, "age", &ctx)?;
        let year: i32 = field(&record, 1, "year", &ctx)?;
        let deaths: f64 = field(&record, 2, "deaths", &ctx)?;
        let exposure: f64 = field(&record, 3, "exposure", &ctx)?;
        check_counts(deaths, exposure, &ctx)?;
        if let Some(first) = seen.insert((age, year), ctx.line) {
            return Err(CliError::Data(format!(
                "row {}: duplicate cell age {age} year {year} (first at row {first})",
                ctx.line
            )));
        }
        ages.insert(age);
        years.insert(year);
        rows.push((age, year, deaths, exposure));
    }
    if rows.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    let ages: Vec<i32> = ages.into_iter().collect();
    let years: Vec<i32> = years.into_iter().collect();
    let t_n = years.len();
    let age_idx: HashMap<i32, usize> = ages.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let year_idx: HashMap<i32, usize> = years.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let mut deaths = vec![0.0; ages.len() * t_n];
    let mut exposures = vec![0.0; ages.len() * t_n];
    for (age, year, d, e) in rows {
        let i = age_idx[&age] * t_n + year_idx[&year];
        deaths[i] = d;
        exposures[i] = e;
    }
    Ok(Dataset::Ap(ApDataset::new(ages, years, deaths, exposures)?))
}

fn parse_app(mut reader: csv::Reader<&[u8]>) -> Result<Dataset> {
    let mut rows: Vec<(i32, i32, String, f64, f64)> = Vec::new();
    let mut ages = BTreeSet::new();
    let mut years = BTreeSet::new();
    let mut products: Vec<String> = Vec::new();
    let mut seen: HashMap<(i32, i32, String), usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let ctx = RowCtx { line: i + 2 };
        let record = record.map_err(|e| CliError::Data(format!("row {}: {e}", ctx.line)))?;
        if record.len() != 5 {
            return Err(CliError::Data(format!("row {}: expected 5 fields", ctx.line)));
        }
        let age: i32 = field(&record, 0, "age", &ctx)?;
        let year: i32 = field(&record, 1, "year", &ctx)?;
        let product: String = record.get(2).unwrap_or("").to_string();
        if product.is_empty() {
            return Err(CliError::Data(format!("row {}: empty product label", ctx.line)));
        }
        let deaths: f64 = field(&record, 3, "deaths", &ctx)?;
        let exposure: f64 = field(&record, 4, "exposure", &ctx)?;
        check_counts(deaths, exposure, &ctx)?;
        if let Some(first) = seen.insert((age, year, product.clone()), ctx.line) {
            return Err(CliError::Data(format!(
                "row {}: duplicate cell age {age} year {year} product {product:?} (first at row {first})",
                ctx.line
            )));
        }
        ages.insert(age);
        years.insert(year);
        if !products.contains(&product) {
            products.push(product.clone());
        }
        rows.push((age, year, product, deaths, exposure));
    }
    if rows.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    let ages: Vec<i32> = ages.into_iter().collect();
    let years: Vec<i32> = years.into_iter().collect();
    let (t_n, p_n) = (years.len(), products.len());
    let age_idx: HashMap<i32, usize> = ages.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let year_idx: HashMap<i32, usize> = years.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let product_idx: HashMap<String, usize> =
        products.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    let mut deaths = vec![0.0; ages.len() * t_n * p_n];
    let mut exposures = vec![0.0; ages.len() * t_n * p_n];
    for (age, year, product, d, e) in rows {
        let i = (age_idx[&age] * t_n + year_idx[&year]) * p_n + product_idx[&product];
        deaths[i] = d;
        exposures[i] = e;
    }
    Ok(Dataset::App(AppDataset::new(ages, years, products, deaths, exposures)?))
}

/// Serialize in the same normalized long format the parser reads.
pub fn write_ap_csv(data: &ApDataset) -> String {
    let mut out = String::from("age,year,deaths,exposure\n");
    for (x, &age) in data.ages.iter().enumerate() {
        for (t, &year) in data.years.iter().enumerate() {
            let i = data.idx(x, t);
            out.push_str(&format!("{age},{year},{},{}\n", data.deaths[i], data.exposures[i]));
        }
    }
    out
}

pub fn write_app_csv(data: &AppDataset) -> String {
    let mut out = String::from("age,year,product,deaths,exposure\n");
    for (x, &age) in data.ages.iter().enumerate() {
        for (t, &year) in data.years.iter().enumerate() {
            for (p, product) in data.products.iter().enumerate() {
                let i = data.idx(x, t, p);
                out.push_str(&format!(
                    "{age},{year},{product},{},{}\n",
                    data.deaths[i], data.exposures[i]
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_square_grid() {
        let text = "age,year,deaths,exposure\n\
                    60,1990,5,100\n60,1991,6,110\n60,1992,6,110\n\
                    61,1990,7,120\n61,1991,8,130\n61,1992,8,130\n\
                    62,1990,9,120\n62,1991,9,130\n62,1992,9,130\n";
        let Dataset::Ap(data) = parse_dataset_csv(text).unwrap() else {
            panic!("expected age-period dataset");
        };
        assert_eq!(data.ages, vec![60, 61, 62]);
        assert_eq!(data.years, vec![1990, 1991, 1992]);
        assert_eq!(data.deaths[0], 5.0);
    }

    #[test]
    fn omitted_cell_is_structurally_missing() {
        let mut text = String::from("age,year,deaths,exposure\n");
        for age in 60..63 {
            for year in 1990..1993 {
                if (age, year) == (61, 1991) {
                    continue;
                }
                text.push_str(&format!("{age},{year},3,50\n"));
            }
        }
        let Dataset::Ap(data) = parse_dataset_csv(&text).unwrap() else {
            panic!("expected age-period dataset");
        };
        let i = data.idx(1, 1);
        assert_eq!(data.deaths[i], 0.0);
        assert_eq!(data.exposures[i], 0.0);
    }

    #[test]
    fn deaths_without_exposure_rejected() {
        let text = "age,year,deaths,exposure\n60,1990,5,0\n";
        let err = parse_dataset_csv(text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn duplicate_cell_rejected() {
        let mut text = String::from("age,year,deaths,exposure\n");
        for age in 60..63 {
            for year in 1990..1993 {
                text.push_str(&format!("{age},{year},3,50\n"));
            }
        }
        text.push_str("60,1990,4,60\n");
        assert!(parse_dataset_csv(&text).is_err());
    }

    #[test]
    fn roundtrip_is_identity() {
        let mut text = String::from("age,year,deaths,exposure\n");
        for age in 60..64 {
            for year in 1990..1994 {
                text.push_str(&format!("{age},{year},{},{}\n", age - 57, 100 + year - 1990));
            }
        }
        let Dataset::Ap(data) = parse_dataset_csv(&text).unwrap() else {
            panic!()
        };
        let serialized = write_ap_csv(&data);
        let Dataset::Ap(back) = parse_dataset_csv(&serialized).unwrap() else {
            panic!()
        };
        assert_eq!(back.ages, data.ages);
        assert_eq!(back.years, data.years);
        assert_eq!(back.deaths, data.deaths);
        assert_eq!(back.exposures, data.exposures);
    }

    #[test]
    fn app_products_keep_first_appearance_order() {
        let mut text = String::from("age,year,product,deaths,exposure\n");
        for age in 50..53 {
            for year in 2016..2019 {
                for product in ["TA", "ACI"] {
                    text.push_str(&format!("{age},{year},{product},2,40\n"));
                }
            }
        }
        let Dataset::App(data) = parse_dataset_csv(&text).unwrap() else {
            panic!("expected product dataset");
        };
        assert_eq!(data.products, vec!["TA".to_string(), "ACI".to_string()]);
    }
}
