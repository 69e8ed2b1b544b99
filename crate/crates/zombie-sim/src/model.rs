//! Closed-form latency/slowdown model for ZBM.
//!
//! A fraction `flush_fraction` (F) of a program's L3 accesses follow a flush
//! of the same line, and with probability `identical_reload_prob` (R) the
//! reload brings back identical bytes — producing a valid zombie whose next
//! hit ZBM serves at miss latency. Those F·R hits migrate from the hit to
//! the miss side of the average L3 latency; the program-level slowdown then
//! scales by how much of execution time is L3-plus-memory time.

#[derive(Clone, Copy, Debug)]
pub struct ModelParams {
    /// Baseline L3 miss rate, in [0,1].
    pub miss_rate: f64,
    /// L3 hit cost in cycles.
    pub l3_hit_cycles: f64,
    /// Memory access cost in cycles.
    pub mem_cycles: f64,
    /// F: fraction of L3 accesses that re-touch a line after flushing it.
    pub flush_fraction: f64,
    /// R: probability a post-flush reload carries identical content.
    pub identical_reload_prob: f64,
    /// Fraction of baseline execution time spent in L3/memory accesses.
    pub mem_time_fraction: f64,
}

impl ModelParams {
    /// Reference-machine constants with a representative 50% miss rate and
    /// memory-bound half of execution time.
    pub fn reference() -> Self {
        ModelParams {
            miss_rate: 0.5,
            l3_hit_cycles: 24.0,
            mem_cycles: 145.0,
            flush_fraction: 1.0,
            identical_reload_prob: 1.0,
            mem_time_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = [
            ("miss_rate", self.miss_rate),
            ("flush_fraction", self.flush_fraction),
            ("identical_reload_prob", self.identical_reload_prob),
            ("mem_time_fraction", self.mem_time_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(format!("{name} must lie in [0,1], got {v}"));
            }
        }
        for (name, v) in [
            ("l3_hit_cycles", self.l3_hit_cycles),
            ("mem_cycles", self.mem_cycles),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Average L3 latency of the unprotected machine.
    pub fn l3lat_base(&self) -> f64 {
        self.l3_hit_cycles + self.miss_rate * self.mem_cycles
    }

    /// Effective miss rate under ZBM: every flush-then-identical-reload hit
    /// is served (and counted) as a miss.
    pub fn zbm_miss_rate(&self) -> f64 {
        self.miss_rate + (1.0 - self.miss_rate) * self.flush_fraction * self.identical_reload_prob
    }

    /// Average L3 latency under ZBM.
    pub fn l3lat_zbm(&self) -> f64 {
        self.l3_hit_cycles + self.zbm_miss_rate() * self.mem_cycles
    }

    /// ZBM L3 latency normalized to baseline.
    pub fn l3lat_norm(&self) -> f64 {
        (self.l3_hit_cycles + self.zbm_miss_rate() * self.mem_cycles)
            / (self.l3_hit_cycles + self.miss_rate * self.mem_cycles)
    }

    /// Whole-program slowdown: the L3 latency growth weighted by the share
    /// of execution time that is memory time.
    pub fn slowdown(&self) -> f64 {
        1.0 + (self.l3lat_norm() - 1.0) * self.mem_time_fraction
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SweepRow {
    pub flush_fraction: f64,
    pub identical_reload_prob: f64,
    pub l3lat_norm: f64,
    pub slowdown: f64,
}

/// Evaluates the model over the cartesian product of the two grids; rows in
/// row-major (F outer, R inner) order.
pub fn sweep(f_grid: &[f64], r_grid: &[f64], base: ModelParams) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(f_grid.len() * r_grid.len());
    for &f in f_grid {
        for &r in r_grid {
            let p = ModelParams {
                flush_fraction: f,
                identical_reload_prob: r,
                ..base
            };
            rows.push(SweepRow {
                flush_fraction: f,
                identical_reload_prob: r,
                l3lat_norm: p.l3lat_norm(),
                slowdown: p.slowdown(),
            });
        }
    }
    rows
}

/// 0.0 to 1.0 inclusive in the given step (e.g. 0.1 → 11 points).
pub fn unit_grid(step: f64) -> Vec<f64> {
    assert!(step > 0.0 && step <= 1.0, "grid step must lie in (0,1]");
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| (i as f64 * step).min(1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_with(f: f64, r: f64) -> ModelParams {
        ModelParams {
            flush_fraction: f,
            identical_reload_prob: r,
            ..ModelParams::reference()
        }
    }

    #[test]
    fn base_latency_blends_hit_and_miss_costs() {
        assert_eq!(ModelParams::reference().l3lat_base(), 96.5);
        let perfect = ModelParams {
            miss_rate: 0.0,
            ..ModelParams::reference()
        };
        assert_eq!(perfect.l3lat_base(), 24.0);
        let thrashing = ModelParams {
            miss_rate: 1.0,
            ..ModelParams::reference()
        };
        assert_eq!(thrashing.l3lat_base(), 169.0);
    }

    #[test]
    fn zbm_miss_rate_saturates_and_degenerates() {
        assert_eq!(reference_with(1.0, 1.0).zbm_miss_rate(), 1.0);
        assert_eq!(reference_with(0.0, 0.7).zbm_miss_rate(), 0.5);
        assert_eq!(reference_with(0.5, 0.5).zbm_miss_rate(), 0.625);
    }

    #[test]
    fn normalized_latency_matches_exact_rational_at_full_flush_reload() {
        let norm = reference_with(1.0, 1.0).l3lat_norm();
        assert!((norm - 169.0 / 96.5).abs() < 1e-12);
        assert_eq!(reference_with(0.0, 1.0).l3lat_norm(), 1.0);
        assert_eq!(reference_with(1.0, 0.0).l3lat_norm(), 1.0);
    }

    #[test]
    fn slowdown_stays_under_forty_percent_at_worst_case() {
        let s = reference_with(1.0, 1.0).slowdown();
        assert!((s - (1.0 + (169.0 / 96.5 - 1.0) * 0.5)).abs() < 1e-15);
        assert_eq!((s * 1e4).round() / 1e4, 1.3756);
        assert!(s < 1.40);
    }

    #[test]
    fn small_flush_reload_products_cost_at_most_four_percent() {
        for f in unit_grid(0.1) {
            for r in unit_grid(0.1) {
                if f * r <= 0.1 {
                    assert!(reference_with(f, r).slowdown() <= 1.04, "F={f} R={r}");
                }
            }
        }
    }

    #[test]
    fn compute_bound_program_sees_no_slowdown() {
        let p = ModelParams {
            mem_time_fraction: 0.0,
            ..reference_with(1.0, 1.0)
        };
        assert_eq!(p.slowdown(), 1.0);
    }

    #[test]
    fn normalization_is_the_latency_ratio_identically() {
        for i in 0..50 {
            let p = reference_with((i % 11) as f64 / 10.0, (i % 7) as f64 / 6.0);
            assert_eq!(p.l3lat_norm(), p.l3lat_zbm() / p.l3lat_base());
        }
    }

    #[test]
    fn default_sweep_covers_the_unit_square_with_corners() {
        let grid = unit_grid(0.1);
        assert_eq!(grid.len(), 11);
        let rows = sweep(&grid, &grid, ModelParams::reference());
        assert_eq!(rows.len(), 121);
        let corner = rows
            .iter()
            .find(|r| r.flush_fraction == 1.0 && r.identical_reload_prob == 1.0)
            .unwrap();
        assert!((corner.l3lat_norm - 169.0 / 96.5).abs() < 1e-12);
        for r in rows.iter().filter(|r| r.flush_fraction == 0.0) {
            assert_eq!(r.l3lat_norm, 1.0);
            assert_eq!(r.slowdown, 1.0);
        }
    }

    #[test]
    fn sweep_is_monotone_in_each_axis() {
        let grid = unit_grid(0.1);
        let rows = sweep(&grid, &grid, ModelParams::reference());
        let n = grid.len();
        for i in 0..n {
            for j in 0..n {
                let here = rows[i * n + j].slowdown;
                if j + 1 < n {
                    assert!(rows[i * n + j + 1].slowdown >= here);
                }
                if i + 1 < n {
                    assert!(rows[(i + 1) * n + j].slowdown >= here);
                }
            }
        }
    }

    #[test]
    fn empty_grids_produce_empty_tables() {
        assert!(sweep(&[], &[0.5], ModelParams::reference()).is_empty());
        assert!(sweep(&[0.5], &[], ModelParams::reference()).is_empty());
    }

    #[test]
    fn validation_rejects_out_of_range_fields() {
        let mut p = ModelParams::reference();
        p.miss_rate = 1.5;
        assert!(p.validate().unwrap_err().contains("miss_rate"));
        let mut p = ModelParams::reference();
        p.l3_hit_cycles = 0.0;
        assert!(p.validate().unwrap_err().contains("l3_hit_cycles"));
        assert!(ModelParams::reference().validate().is_ok());
    }

    proptest! {
        #[test]
        fn slowdown_and_norm_never_drop_below_one(
            miss_rate in 0.0f64..=1.0,
            f in 0.0f64..=1.0,
            r in 0.0f64..=1.0,
            mem_frac in 0.0f64..=1.0,
        ) {
            let p = ModelParams {
                miss_rate,
                flush_fraction: f,
                identical_reload_prob: r,
                mem_time_fraction: mem_frac,
                ..ModelParams::reference()
            };
            prop_assert!(p.validate().is_ok());
            prop_assert!(p.l3lat_norm() >= 1.0);
            prop_assert!(p.slowdown() >= 1.0);
            prop_assert!(p.zbm_miss_rate() <= 1.0 + 1e-12);
        }
    }
}
