//! Exact analytic characterization of soft-reset LIF responses to constant
//! input current.
//!
//! Along any fixed spike/no-spike branch the membrane potential is affine in
//! the input `X`, so each step's threshold crossing splits the input axis at
//! one exactly computable point. Enumerating branches therefore tiles
//! `[0, inf)` with half-open intervals, one firing pattern each. Arithmetic
//! is exact over rationals (every `f64` parameter is one), which keeps
//! interval endpoints free of float-ordering artifacts.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest supported step count for enumeration (worst case 2^T branches).
pub const MAX_ENUM_STEPS: usize = 24;

/// A length-T spike train of one neuron, e.g. `0101`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FiringPattern {
    bits: Vec<bool>,
}

impl FiringPattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Parse a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Format(format!(
                    "firing pattern may only contain 0/1, found {other:?}"
                ))),
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of spikes in the pattern.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for FiringPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

/// Half-open input interval `[lo, hi)` mapped to one firing pattern.
/// `hi = None` marks an unbounded upper end.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternBoundary {
    pub pattern: FiringPattern,
    pub lo: BigRational,
    pub hi: Option<BigRational>,
}

impl PatternBoundary {
    pub fn lo_f64(&self) -> f64 {
        self.lo.to_f64().expect("finite rational")
    }

    pub fn hi_f64(&self) -> f64 {
        self.hi
            .as_ref()
            .map(|h| h.to_f64().expect("finite rational"))
            .unwrap_or(f64::INFINITY)
    }

    /// Exact membership test for the half-open interval.
    pub fn contains(&self, x: &BigRational) -> bool {
        *x >= self.lo && self.hi.as_ref().map_or(true, |h| x < h)
    }
}

fn check_params(steps: usize, decay: f64, v_threshold: f64) -> Result<()> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::Contract(format!(
            "decay must lie in (0, 1), got {decay}"
        )));
    }
    if !(v_threshold > 0.0) {
        return Err(Error::Contract(format!(
            "threshold must be positive, got {v_threshold}"
        )));
    }
    if steps == 0 {
        return Err(Error::Contract("step count must be >= 1".into()));
    }
    Ok(())
}

/// Run the soft-reset LIF recursion with constant input `x` and rest start.
pub fn simulate_constant(x: f64, steps: usize, decay: f64, v_threshold: f64) -> Result<FiringPattern> {
    check_params(steps, decay, v_threshold)?;
    if !(x >= 0.0) {
        return Err(Error::Contract(format!(
            "constant input must be nonnegative, got {x}"
        )));
    }
    let mut v = 0.0;
    let mut bits = Vec::with_capacity(steps);
    for _ in 0..steps {
        let h = decay * v + (1.0 - decay) * x;
        let spike = h >= v_threshold;
        v = if spike { h - v_threshold } else { h };
        bits.push(spike);
    }
    Ok(FiringPattern::new(bits))
}

struct Branch {
    lo: BigRational,
    hi: Option<BigRational>,
    /// Membrane potential after the steps taken so far: `V = slope * X + intercept`.
    slope: BigRational,
    intercept: BigRational,
    bits: Vec<bool>,
}

/// Enumerate every firing pattern reachable under constant input, with its
/// exact half-open input interval, ordered by ascending `lo`.
pub fn enumerate_boundaries(
    steps: usize,
    decay: f64,
    v_threshold: f64,
) -> Result<Vec<PatternBoundary>> {
    check_params(steps, decay, v_threshold)?;
    if steps > MAX_ENUM_STEPS {
        return Err(Error::Contract(format!(
            "enumeration supports at most {MAX_ENUM_STEPS} steps, got {steps}"
        )));
    }
    let decay_r = BigRational::from_float(decay)
        .ok_or_else(|| Error::Numeric("decay is not finite".into()))?;
    let vth_r = BigRational::from_float(v_threshold)
        .ok_or_else(|| Error::Numeric("threshold is not finite".into()))?;
    let one = BigRational::one();

    let mut work = vec![Branch {
        lo: BigRational::zero(),
        hi: None,
        slope: BigRational::zero(),
        intercept: BigRational::zero(),
        bits: Vec::new(),
    }];
    let mut done = Vec::new();

    while let Some(branch) = work.pop() {
        if branch.bits.len() == steps {
            done.push(PatternBoundary {
                pattern: FiringPattern::new(branch.bits),
                lo: branch.lo,
                hi: branch.hi,
            });
            continue;
        }
        // H = decay * V + (1 - decay) * X is affine with positive slope.
        let h_slope = &decay_r * &branch.slope + (&one - &decay_r);
        let h_intercept = &decay_r * &branch.intercept;
        debug_assert!(h_slope.is_positive());
        let crossing = (&vth_r - &h_intercept) / &h_slope;

        // Below the crossing the neuron stays silent, at or above it fires.
        let quiet_hi = match &branch.hi {
            Some(hi) if *hi <= crossing => hi.clone(),
            _ => crossing.clone(),
        };
        if quiet_hi > branch.lo {
            let mut bits = branch.bits.clone();
            bits.push(false);
            work.push(Branch {
                lo: branch.lo.clone(),
                hi: Some(quiet_hi),
                slope: h_slope.clone(),
                intercept: h_intercept.clone(),
                bits,
            });
        }
        let fire_lo = if crossing > branch.lo {
            crossing
        } else {
            branch.lo.clone()
        };
        let fires = match &branch.hi {
            Some(hi) => fire_lo < *hi,
            None => true,
        };
        if fires {
            let mut bits = branch.bits;
            bits.push(true);
            work.push(Branch {
                lo: fire_lo,
                hi: branch.hi,
                slope: h_slope,
                intercept: h_intercept - &vth_r,
                bits,
            });
        }
    }

    done.sort_by(|a, b| a.lo.cmp(&b.lo));
    Ok(done)
}

/// Boundary-predicted pattern for a concrete input, by exact comparison.
pub fn pattern_for(boundaries: &[PatternBoundary], x: f64) -> Result<&FiringPattern> {
    let xr = BigRational::from_float(x)
        .ok_or_else(|| Error::Numeric(format!("input {x} is not finite")))?;
    boundaries
        .iter()
        .find(|b| b.contains(&xr))
        .map(|b| &b.pattern)
        .ok_or_else(|| Error::Contract(format!("input {x} outside [0, inf)")))
}

/// One simulation/prediction mismatch found by [`verify_boundaries`].
#[derive(Debug, Clone)]
pub struct Disagreement {
    pub input: f64,
    pub predicted: FiringPattern,
    pub simulated: FiringPattern,
}

/// Cross-validation report: simulation vs analytic prediction.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub samples: usize,
    pub agreements: usize,
    pub disagreements: Vec<Disagreement>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.disagreements.is_empty()
    }
}

/// Sample inputs uniformly over `[0, hi_max + 1]` and check that the direct
/// simulation reproduces the boundary-predicted pattern at every sample.
pub fn verify_boundaries(
    steps: usize,
    decay: f64,
    v_threshold: f64,
    n_samples: usize,
    seed: u64,
) -> Result<VerifyReport> {
    if n_samples == 0 {
        return Err(Error::Contract("n_samples must be >= 1".into()));
    }
    let boundaries = enumerate_boundaries(steps, decay, v_threshold)?;
    let hi_max = boundaries.last().expect("non-empty tiling").lo_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = VerifyReport {
        samples: n_samples,
        agreements: 0,
        disagreements: Vec::new(),
    };
    for _ in 0..n_samples {
        let x = rng.random_range(0.0..hi_max + 1.0);
        let predicted = pattern_for(&boundaries, x)?.clone();
        let simulated = simulate_constant(x, steps, decay, v_threshold)?;
        if predicted == simulated {
            report.agreements += 1;
        } else {
            report.disagreements.push(Disagreement {
                input: x,
                predicted,
                simulated,
            });
        }
    }
    Ok(report)
}

/// Render a nonnegative rational with exactly four decimals, ties to even.
pub fn format_4dp(r: &BigRational) -> String {
    let scale = BigInt::from(10_000);
    let n = r.numer() * &scale;
    let d = r.denom().clone();
    let q = &n / &d;
    let rem = &n - &q * &d;
    let doubled = BigInt::from(2) * rem;
    let rounded = match doubled.cmp(&d) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Equal => {
            if (&q % 2) == BigInt::zero() {
                q
            } else {
                q + 1
            }
        }
    };
    let whole = &rounded / &scale;
    let frac = &rounded % &scale;
    format!("{whole}.{:04}", frac)
}

/// CSV table `pattern,lo,hi`, boundaries rounded to four decimals, the open
/// upper end spelled `inf`.
pub fn boundaries_csv(boundaries: &[PatternBoundary]) -> String {
    let mut out = String::from("pattern,lo,hi\n");
    for b in boundaries {
        let hi = match &b.hi {
            Some(h) => format_4dp(h),
            None => "inf".to_string(),
        };
        out.push_str(&format!("{},{},{}\n", b.pattern, format_4dp(&b.lo), hi));
    }
    out
}

/// Aligned text table in the layout of the paper's firing-pattern listing.
pub fn boundaries_table(boundaries: &[PatternBoundary]) -> String {
    let mut out = String::from("Firing Pattern  Boundary Range\n");
    for b in boundaries {
        let range = match (&b.lo, &b.hi) {
            (lo, Some(hi)) if lo.is_zero() => format!("X < {}", format_4dp(hi)),
            (lo, Some(hi)) => format!("{} <= X < {}", format_4dp(lo), format_4dp(hi)),
            (lo, None) => format!("{} <= X", format_4dp(lo)),
        };
        out.push_str(&format!("{:<15} {}\n", b.pattern.to_string(), range));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn default_config_boundaries_are_exact_fractions() {
        let b = enumerate_boundaries(4, 0.5, 1.0).unwrap();
        let patterns: Vec<String> = b.iter().map(|x| x.pattern.to_string()).collect();
        assert_eq!(
            patterns,
            ["0000", "0001", "0010", "0101", "0110", "0111", "1111"]
        );
        let expected_los = [
            ratio(0, 1),
            ratio(16, 15),
            ratio(8, 7),
            ratio(4, 3),
            ratio(12, 7),
            ratio(28, 15),
            ratio(2, 1),
        ];
        for (boundary, lo) in b.iter().zip(&expected_los) {
            assert_eq!(&boundary.lo, lo);
        }
        assert!(b.last().unwrap().hi.is_none());
    }

    #[test]
    fn single_step_splits_at_two() {
        let b = enumerate_boundaries(1, 0.5, 1.0).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].pattern.to_string(), "0");
        assert_eq!(b[1].pattern.to_string(), "1");
        assert_eq!(b[1].lo, ratio(2, 1));
    }

    #[test]
    fn two_step_hand_recursion() {
        let b = enumerate_boundaries(2, 0.5, 1.0).unwrap();
        let got: Vec<(String, BigRational)> =
            b.iter().map(|x| (x.pattern.to_string(), x.lo.clone())).collect();
        assert_eq!(
            got,
            vec![
                ("00".to_string(), ratio(0, 1)),
                ("01".to_string(), ratio(4, 3)),
                ("11".to_string(), ratio(2, 1)),
            ]
        );
    }

    #[test]
    fn simulation_matches_paper_rows() {
        assert_eq!(simulate_constant(1.5, 4, 0.5, 1.0).unwrap().to_string(), "0101");
        assert_eq!(simulate_constant(1.9, 4, 0.5, 1.0).unwrap().to_string(), "0111");
        assert_eq!(simulate_constant(0.0, 4, 0.5, 1.0).unwrap().to_string(), "0000");
        assert_eq!(simulate_constant(0.5, 4, 0.5, 1.0).unwrap().to_string(), "0000");
        assert_eq!(simulate_constant(2.5, 4, 0.5, 1.0).unwrap().to_string(), "1111");
    }

    #[test]
    fn boundary_points_belong_to_upper_pattern() {
        let b = enumerate_boundaries(4, 0.5, 1.0).unwrap();
        assert_eq!(pattern_for(&b, 2.0).unwrap().to_string(), "1111");
        assert_eq!(simulate_constant(2.0, 4, 0.5, 1.0).unwrap().to_string(), "1111");
    }

    #[test]
    fn intervals_tile_the_axis() {
        for (steps, decay) in [(1, 0.5), (2, 0.5), (4, 0.5), (4, 0.3), (6, 0.5), (5, 0.7)] {
            let b = enumerate_boundaries(steps, decay, 1.0).unwrap();
            assert!(b[0].lo.is_zero());
            for pair in b.windows(2) {
                assert_eq!(pair[0].hi.as_ref(), Some(&pair[1].lo));
            }
            assert!(b.last().unwrap().hi.is_none());
        }
    }

    #[test]
    fn spike_count_is_monotone_in_input() {
        for (steps, decay) in [(4, 0.5), (4, 0.3), (6, 0.5), (3, 0.9)] {
            let b = enumerate_boundaries(steps, decay, 1.0).unwrap();
            for pair in b.windows(2) {
                assert!(
                    pair[0].pattern.count() <= pair[1].pattern.count(),
                    "count dropped between {} and {}",
                    pair[0].pattern,
                    pair[1].pattern
                );
            }
        }
    }

    #[test]
    fn verification_is_clean_at_defaults() {
        let report = verify_boundaries(4, 0.5, 1.0, 10_000, 0).unwrap();
        assert_eq!(report.agreements, 10_000);
        assert!(report.is_clean());
    }

    #[test]
    fn verification_is_clean_for_one_step() {
        let report = verify_boundaries(1, 0.5, 1.0, 2_000, 3).unwrap();
        assert!(report.is_clean());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(simulate_constant(-1.0, 4, 0.5, 1.0).is_err());
        assert!(simulate_constant(1.0, 0, 0.5, 1.0).is_err());
        assert!(simulate_constant(1.0, 4, 1.5, 1.0).is_err());
        assert!(simulate_constant(1.0, 4, 0.5, 0.0).is_err());
        assert!(enumerate_boundaries(25, 0.5, 1.0).is_err());
    }

    #[test]
    fn four_decimal_rounding_is_half_even() {
        assert_eq!(format_4dp(&ratio(16, 15)), "1.0667");
        assert_eq!(format_4dp(&ratio(8, 7)), "1.1429");
        assert_eq!(format_4dp(&ratio(4, 3)), "1.3333");
        assert_eq!(format_4dp(&ratio(12, 7)), "1.7143");
        assert_eq!(format_4dp(&ratio(28, 15)), "1.8667");
        assert_eq!(format_4dp(&ratio(2, 1)), "2.0000");
        // Ties round to the even neighbour.
        assert_eq!(format_4dp(&ratio(25, 100_000)), "0.0002");
        assert_eq!(format_4dp(&ratio(15, 100_000)), "0.0002");
        assert_eq!(format_4dp(&ratio(35, 100_000)), "0.0004");
    }

    #[test]
    fn csv_lists_all_rows() {
        let b = enumerate_boundaries(4, 0.5, 1.0).unwrap();
        let csv = boundaries_csv(&b);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], "pattern,lo,hi");
        assert_eq!(lines[1], "0000,0.0000,1.0667");
        assert_eq!(lines[7], "1111,2.0000,inf");
    }
}
