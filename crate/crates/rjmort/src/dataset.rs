//! Death/exposure grids for age-period and age-period-product data.
//!
//! Cells with zero exposure are treated as structurally missing: they carry no
//! information and must have zero deaths. Ages and years are mapped to internal
//! indices `1..=X` and `1..=T` regardless of their labels; the cohort index
//! `c = t - x` then runs over `1-X ..= T-1`, for `C = X + T - 1` cohorts.

use crate::error::{CoreError, Result};

/// Deaths and exposures on an age x year grid.
#[derive(Debug, Clone)]
pub struct ApDataset {
    pub ages: Vec<i32>,
    pub years: Vec<i32>,
    /// Row-major `X x T`: `deaths[x * T + t]`.
    pub deaths: Vec<f64>,
    pub exposures: Vec<f64>,
}

impl ApDataset {
    pub fn new(ages: Vec<i32>, years: Vec<i32>, deaths: Vec<f64>, exposures: Vec<f64>) -> Result<Self> {
        let x = ages.len();
        let t = years.len();
        if x < 3 || t < 3 {
            return Err(CoreError::Data(format!(
                "grid must be at least 3x3, got {x}x{t}"
            )));
        }
        check_sorted(&ages, "ages")?;
        check_sorted(&years, "years")?;
        check_cells(&deaths, &exposures, x * t)?;
        Ok(Self { ages, years, deaths, exposures })
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Number of cohorts, `C = X + T - 1`.
    pub fn n_cohorts(&self) -> usize {
        self.ages.len() + self.years.len() - 1
    }

    pub fn idx(&self, x: usize, t: usize) -> usize {
        x * self.years.len() + t
    }

    /// Total deaths for one age, summed over years.
    pub fn deaths_by_age(&self, x: usize) -> f64 {
        (0..self.n_years()).map(|t| self.deaths[self.idx(x, t)]).sum()
    }

    pub fn exposure_by_age(&self, x: usize) -> f64 {
        (0..self.n_years()).map(|t| self.exposures[self.idx(x, t)]).sum()
    }

    /// Smoothed crude log-rate `log((d + 0.5) / (E + 1))` for one age, pooled over years.
    pub fn crude_level_by_age(&self, x: usize) -> f64 {
        ((self.deaths_by_age(x) + 0.5) / (self.exposure_by_age(x) + 1.0)).ln()
    }
}

/// Deaths and exposures on an age x year x product grid.
#[derive(Debug, Clone)]
pub struct AppDataset {
    pub ages: Vec<i32>,
    pub years: Vec<i32>,
    pub products: Vec<String>,
    /// Row-major `X x T x P`: `deaths[(x * T + t) * P + p]`.
    pub deaths: Vec<f64>,
    pub exposures: Vec<f64>,
}

impl AppDataset {
    pub fn new(
        ages: Vec<i32>,
        years: Vec<i32>,
        products: Vec<String>,
        deaths: Vec<f64>,
        exposures: Vec<f64>,
    ) -> Result<Self> {
        let x = ages.len();
        let t = years.len();
        let p = products.len();
        if x < 3 || t < 3 {
            return Err(CoreError::Data(format!(
                "grid must be at least 3x3 in age x year, got {x}x{t}"
            )));
        }
        if p < 2 {
            return Err(CoreError::Data("at least 2 products required".into()));
        }
        check_sorted(&ages, "ages")?;
        check_sorted(&years, "years")?;
        for i in 1..p {
            if products[..i].contains(&products[i]) {
                return Err(CoreError::Data(format!("duplicate product label {:?}", products[i])));
            }
        }
        check_cells(&deaths, &exposures, x * t * p)?;
        Ok(Self { ages, years, products, deaths, exposures })
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_products(&self) -> usize {
        self.products.len()
    }

    pub fn n_cohorts(&self) -> usize {
        self.ages.len() + self.years.len() - 1
    }

    pub fn idx(&self, x: usize, t: usize, p: usize) -> usize {
        (x * self.years.len() + t) * self.products.len() + p
    }

    pub fn crude_level_by_age(&self, x: usize) -> f64 {
        let t_n = self.n_years();
        let p_n = self.n_products();
        let mut d = 0.0;
        let mut e = 0.0;
        for t in 0..t_n {
            for p in 0..p_n {
                d += self.deaths[self.idx(x, t, p)];
                e += self.exposures[self.idx(x, t, p)];
            }
        }
        ((d + 0.5) / (e + 1.0)).ln()
    }
}

fn check_sorted(labels: &[i32], what: &str) -> Result<()> {
    if labels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::Data(format!("{what} labels must be strictly increasing")));
    }
    Ok(())
}

fn check_cells(deaths: &[f64], exposures: &[f64], expected: usize) -> Result<()> {
    if deaths.len() != expected || exposures.len() != expected {
        return Err(CoreError::Data(format!(
            "expected {expected} cells, got {} deaths and {} exposures",
            deaths.len(),
            exposures.len()
        )));
    }
    for i in 0..expected {
        let (d, e) = (deaths[i], exposures[i]);
        if !d.is_finite() || !e.is_finite() || d < 0.0 || e < 0.0 {
            return Err(CoreError::Data(format!("cell {i}: deaths and exposures must be finite and non-negative")));
        }
        if e == 0.0 && d > 0.0 {
            return Err(CoreError::Data(format!("cell {i}: deaths {d} recorded with zero exposure")));
        }
    }
    Ok(())
}

/// Deviation of the internal age index from its mean: `(x+1) - (X+1)/2` for 0-based `x`.
pub fn age_dev(x: usize, n_ages: usize) -> f64 {
    x as f64 - (n_ages as f64 - 1.0) / 2.0
}

/// Deviation of the internal year index from its mean.
pub fn year_dev(t: usize, n_years: usize) -> f64 {
    t as f64 - (n_years as f64 - 1.0) / 2.0
}

/// Storage index of cohort `c = t - x` (0-based grid indices); runs over `0..C`.
pub fn cohort_index(x: usize, t: usize, n_ages: usize) -> usize {
    t + (n_ages - 1) - x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(x: usize, t: usize) -> (Vec<i32>, Vec<i32>) {
        ((0..x as i32).collect(), (100..100 + t as i32).collect())
    }

    #[test]
    fn rejects_undersized_grid() {
        let (ages, years) = grid(2, 3);
        let err = ApDataset::new(ages, years, vec![0.0; 6], vec![1.0; 6]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_deaths_with_zero_exposure() {
        let (ages, years) = grid(3, 3);
        let mut exposures = vec![10.0; 9];
        let mut deaths = vec![0.0; 9];
        exposures[4] = 0.0;
        deaths[4] = 2.0;
        assert!(ApDataset::new(ages, years, deaths, exposures).is_err());
    }

    #[test]
    fn zero_exposure_zero_deaths_is_fine() {
        let (ages, years) = grid(3, 3);
        let mut exposures = vec![10.0; 9];
        exposures[4] = 0.0;
        assert!(ApDataset::new(ages, years, vec![0.0; 9], exposures).is_ok());
    }

    #[test]
    fn cohort_index_covers_full_range() {
        // X=3, T=4: c = t - x in [-2, 3], storage 0..=5.
        assert_eq!(cohort_index(2, 0, 3), 0);
        assert_eq!(cohort_index(0, 3, 3), 5);
        assert_eq!(cohort_index(0, 0, 3), 2);
    }

    #[test]
    fn age_dev_is_centered() {
        let n = 20;
        let sum: f64 = (0..n).map(|x| age_dev(x, n)).sum();
        assert!(sum.abs() < 1e-12);
        assert_eq!(age_dev(0, 3), -1.0);
        assert_eq!(age_dev(2, 3), 1.0);
    }
}
