//! Threshold and rate sequences indexed by the sample size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `scale · n^(−decay)`, a threshold shrinking with the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub scale: f64,
    pub decay: f64,
}

impl PowerLaw {
    pub const fn new(scale: f64, decay: f64) -> Self {
        Self { scale, decay }
    }

    pub fn at(&self, n: u64) -> f64 {
        self.scale * (n as f64).powf(-self.decay)
    }
}

/// `scale · n^growth`, a convergence rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub scale: f64,
    pub growth: f64,
}

impl RateSpec {
    pub const ROOT_N: Self = Self {
        scale: 1.0,
        growth: 0.5,
    };
    pub const LINEAR: Self = Self {
        scale: 1.0,
        growth: 1.0,
    };

    pub fn at(&self, n: u64) -> f64 {
        if self.growth == 0.5 {
            self.scale * (n as f64).sqrt()
        } else {
            self.scale * (n as f64).powf(self.growth)
        }
    }
}

impl Default for RateSpec {
    fn default() -> Self {
        Self::ROOT_N
    }
}

/// Per-coordinate thresholds `a_nj` together with the rate `r_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub rate: RateSpec,
    pub thresholds: Vec<PowerLaw>,
}

impl ThresholdSchedule {
    pub fn new(rate: RateSpec, thresholds: Vec<PowerLaw>) -> Result<Self> {
        let s = Self { rate, thresholds };
        s.validate()?;
        Ok(s)
    }

    /// The same law for every coordinate.
    pub fn uniform(d: usize, rate: RateSpec, law: PowerLaw) -> Result<Self> {
        Self::new(rate, vec![law; d])
    }

    /// `a_n = n^(−1/4)`, `r_n = √n` in every coordinate.
    pub fn hodges_default(d: usize) -> Self {
        Self {
            rate: RateSpec::ROOT_N,
            thresholds: vec![PowerLaw::new(1.0, 0.25); d],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Schedule("schedule has no coordinates".into()));
        }
        if !(self.rate.scale > 0.0 && self.rate.scale.is_finite()) || !self.rate.growth.is_finite()
        {
            return Err(Error::Schedule(format!(
                "rate scale must be positive, got {}",
                self.rate.scale
            )));
        }
        for (j, law) in self.thresholds.iter().enumerate() {
            if !(law.scale > 0.0 && law.scale.is_finite()) || !law.decay.is_finite() {
                return Err(Error::Schedule(format!(
                    "threshold {j} must have a positive scale, got {}",
                    law.scale
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.thresholds.len()
    }

    pub fn rate_at(&self, n: u64) -> f64 {
        self.rate.at(n)
    }

    pub fn thresholds_at(&self, n: u64) -> Vec<f64> {
        self.thresholds.iter().map(|l| l.at(n)).collect()
    }

    pub fn max_threshold(&self, n: u64) -> f64 {
        self.thresholds_at(n)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_threshold(&self, n: u64) -> f64 {
        self.thresholds_at(n)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest `n ≥ 1` from which `r_n · min_j a_nj > 2k` holds for every
    /// larger sample size. `None` if the product does not grow without bound
    /// or the crossing lies beyond `u64`.
    pub fn min_sample_size(&self, k: f64) -> Option<u64> {
        let mut n_star: f64 = 1.0;
        for law in &self.thresholds {
            let expo = self.rate.growth - law.decay;
            if expo <= 0.0 {
                return None;
            }
            // r·a = rs·as·n^expo > 2k  ⇔  n > (2k / (rs·as))^(1/expo)
            let crossing = (2.0 * k / (self.rate.scale * law.scale)).powf(1.0 / expo);
            n_star = n_star.max(crossing.floor() + 1.0);
        }
        if n_star > u64::MAX as f64 / 2.0 {
            return None;
        }
        let mut n = n_star as u64;
        let holds = |n: u64| self.rate_at(n) * self.min_threshold(n) > 2.0 * k;
        // Settle floating-point rounding at the crossing.
        while n > 1 && holds(n - 1) {
            n -= 1;
        }
        while !holds(n) {
            n += 1;
        }
        Some(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub n: u64,
    pub max_threshold: f64,
    pub rate_times_min_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub rows: Vec<ScheduleRow>,
    /// `max_j a_nj` strictly decreasing over the supplied sample sizes.
    pub max_decreasing: bool,
    /// `r_n · min_j a_nj` strictly increasing over the supplied sample sizes.
    pub product_increasing: bool,
}

impl ScheduleReport {
    pub fn passed(&self) -> bool {
        self.max_decreasing && self.product_increasing
    }
}

/// Tabulates the two quantities whose limits define an admissible schedule
/// (`max_j a_nj → 0`, `r_n min_j a_nj → ∞`) and flags whether their trends
/// over `n_values` point the right way.
pub fn validate_schedule(schedule: &ThresholdSchedule, n_values: &[u64]) -> Result<ScheduleReport> {
    schedule.validate()?;
    if n_values.is_empty() {
        return Err(Error::Domain("no sample sizes supplied".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) || n_values[0] == 0 {
        return Err(Error::Domain(
            "sample sizes must be positive and strictly increasing".into(),
        ));
    }
    let rows: Vec<ScheduleRow> = n_values
        .iter()
        .map(|&n| ScheduleRow {
            n,
            max_threshold: schedule.max_threshold(n),
            rate_times_min_threshold: schedule.rate_at(n) * schedule.min_threshold(n),
        })
        .collect();
    for row in &rows {
        if !(row.max_threshold > 0.0) || !(row.rate_times_min_threshold > 0.0) {
            return Err(Error::Schedule(format!(
                "non-positive threshold or rate at n = {}",
                row.n
            )));
        }
    }
    let max_decreasing = rows
        .windows(2)
        .all(|w| w[1].max_threshold < w[0].max_threshold);
    let product_increasing = rows
        .windows(2)
        .all(|w| w[1].rate_times_min_threshold > w[0].rate_times_min_threshold);
    Ok(ScheduleReport {
        rows,
        max_decreasing,
        product_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_passes() {
        let s = ThresholdSchedule::hodges_default(3);
        let rep = validate_schedule(&s, &[10, 100, 1000]).unwrap();
        let max: Vec<f64> = rep.rows.iter().map(|r| r.max_threshold).collect();
        let prod: Vec<f64> = rep
            .rows
            .iter()
            .map(|r| r.rate_times_min_threshold)
            .collect();
        for (got, want) in
            max.iter()
                .zip([0.5623413251903491, 0.31622776601683794, 0.17782794100389226])
        {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in
            prod.iter()
                .zip([1.7782794100389228, 3.1622776601683795, 5.623413251903491])
        {
            assert!((got - want).abs() < 1e-14);
        }
        assert!(rep.passed());
    }

    #[test]
    fn fast_threshold_fails() {
        let s = ThresholdSchedule::uniform(1, RateSpec::ROOT_N, PowerLaw::new(1.0, 1.0)).unwrap();
        let rep = validate_schedule(&s, &[10, 100, 1000]).unwrap();
        assert!(rep.max_decreasing);
        assert!(!rep.product_increasing);
        assert!(!rep.passed());
    }

    #[test]
    fn constant_threshold_fails() {
        let s = ThresholdSchedule::uniform(1, RateSpec::ROOT_N, PowerLaw::new(0.5, 0.0)).unwrap();
        let rep = validate_schedule(&s, &[10, 100, 1000]).unwrap();
        assert!(!rep.max_decreasing);
        assert!(!rep.passed());
    }

    #[test]
    fn invalid_inputs() {
        assert!(
            ThresholdSchedule::uniform(1, RateSpec::ROOT_N, PowerLaw::new(-1.0, 0.25)).is_err()
        );
        assert!(ThresholdSchedule::uniform(
            1,
            RateSpec {
                scale: 0.0,
                growth: 0.5
            },
            PowerLaw::new(1.0, 0.25)
        )
        .is_err());
        let s = ThresholdSchedule::hodges_default(1);
        assert!(validate_schedule(&s, &[]).is_err());
        assert!(validate_schedule(&s, &[100, 10]).is_err());
    }

    #[test]
    fn min_sample_size_is_the_crossing() {
        let s = ThresholdSchedule::hodges_default(2);
        // n^{1/4} > 2  ⇔  n > 16
        assert_eq!(s.min_sample_size(1.0), Some(17));
        let n = s.min_sample_size(3.3).unwrap();
        assert!(s.rate_at(n) * s.min_threshold(n) > 6.6);
        assert!(s.rate_at(n - 1) * s.min_threshold(n - 1) <= 6.6);
        let flat =
            ThresholdSchedule::uniform(1, RateSpec::ROOT_N, PowerLaw::new(1.0, 0.5)).unwrap();
        assert_eq!(flat.min_sample_size(1.0), None);
    }
}
