//! Adaptive cluster-count controller.
//!
//! Starts with one cluster per client. While the round-average loss keeps
//! dropping by more than `w`, the count shrinks by a decrement that doubles
//! every consecutive improving round. A stalled round doubles the count back
//! (capped at `n`) and freezes it for `hold_rounds`. The SA and EXP modes may
//! instead keep the current count on a stall, with a probability that decays
//! with stagnation (SA) or follows the win rate recorded at that count (EXP).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude the previous loss is treated as zero.
const RATIO_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerMode {
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "EXP")]
    Exp,
}

impl ControllerMode {
    pub fn label(self) -> &'static str {
        match self {
            ControllerMode::Tcp => "TCP",
            ControllerMode::Sa => "SA",
            ControllerMode::Exp => "EXP",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub n: usize,
    /// Loss-reduction ratio a round must exceed to count as improving.
    pub w: f64,
    pub hold_rounds: usize,
    pub mode: ControllerMode,
    pub sa_temperature: f64,
}

impl ControllerConfig {
    pub fn new(n: usize, mode: ControllerMode) -> Self {
        Self {
            n,
            w: 0.01,
            hold_rounds: 5,
            mode,
            sa_temperature: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Invalid(format!(
                "controller needs n >= 2, got {}",
                self.n
            )));
        }
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::Invalid(format!(
                "threshold w = {} must be finite and >= 0",
                self.w
            )));
        }
        if !(self.sa_temperature.is_finite() && self.sa_temperature > 0.0) {
            return Err(Error::Invalid(format!(
                "SA temperature {} must be positive",
                self.sa_temperature
            )));
        }
        Ok(())
    }
}

/// Improving / non-improving rounds observed at one cluster count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Experience {
    pub good: u64,
    pub bad: u64,
}

impl Experience {
    /// Laplace-smoothed share of improving rounds; always in (0, 1).
    pub fn keep_probability(&self) -> f64 {
        (self.good + 1) as f64 / (self.good + self.bad + 2) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub p: usize,
    pub d: usize,
    pub hold_remaining: usize,
    /// Consecutive non-improving rounds at the current `p`.
    pub stall: usize,
    pub experience: BTreeMap<usize, Experience>,
}

impl ControllerState {
    /// `p = n`, `d = 1`, no history.
    pub fn new(n: usize) -> Self {
        Self {
            p: n,
            d: 1,
            hold_remaining: 0,
            stall: 0,
            experience: BTreeMap::new(),
        }
    }

    pub fn experience_at(&self, p: usize) -> Experience {
        self.experience.get(&p).copied().unwrap_or_default()
    }

    fn record(&mut self, improving: bool) {
        let e = self.experience.entry(self.p).or_default();
        if improving {
            e.good += 1;
        } else {
            e.bad += 1;
        }
    }

    fn set_p(&mut self, p: usize) {
        if p != self.p {
            self.p = p;
            self.stall = 0;
        }
    }

    /// Advances one round given the loss-reduction ratio `r`; returns the new
    /// cluster count.
    pub fn step(&mut self, cfg: &ControllerConfig, r: f64, draw: &mut impl UnitDraw) -> usize {
        let improving = r > cfg.w;
        if self.hold_remaining > 0 {
            self.hold_remaining -= 1;
            self.record(improving);
            return self.p;
        }
        if improving {
            self.record(true);
            self.set_p(self.p.saturating_sub(self.d).max(1));
            self.d = (2 * self.d).min(cfg.n);
            self.stall = 0;
            return self.p;
        }

        // Keep odds come from the history before this round is recorded.
        let exp_keep = self.experience_at(self.p).keep_probability();
        self.record(false);
        self.stall += 1;
        let keep = match cfg.mode {
            ControllerMode::Tcp => false,
            ControllerMode::Sa => draw.unit() < (-(self.stall as f64) / cfg.sa_temperature).exp(),
            ControllerMode::Exp => draw.unit() < exp_keep,
        };
        if keep {
            self.d = 1;
        } else {
            self.set_p((2 * self.p).min(cfg.n));
            self.d = 1;
            self.hold_remaining = cfg.hold_rounds;
        }
        self.p
    }
}

/// Source of uniform draws in `[0, 1)`.
pub trait UnitDraw {
    fn unit(&mut self) -> f64;
}

impl<R: Rng> UnitDraw for R {
    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// `(L_prev - L_cur) / |L_prev|`, or 0 when `|L_prev|` is below 1e-12.
pub fn reduction_ratio(prev: f64, cur: f64) -> Result<f64> {
    if !prev.is_finite() || !cur.is_finite() {
        return Err(Error::Invalid(format!(
            "non-finite loss signal ({prev}, {cur})"
        )));
    }
    if prev.abs() < RATIO_GUARD {
        return Ok(0.0);
    }
    Ok((prev - cur) / prev.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    /// Replays fixed draws.
    struct Scripted(Vec<f64>);

    impl UnitDraw for Scripted {
        fn unit(&mut self) -> f64 {
            assert!(
                !self.0.is_empty(),
                "controller drew more values than scripted"
            );
            self.0.remove(0)
        }
    }

    fn tcp(n: usize) -> ControllerConfig {
        ControllerConfig::new(n, ControllerMode::Tcp)
    }

    #[test]
    fn ratio_examples() {
        assert!((reduction_ratio(2.0, 1.9).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(reduction_ratio(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(reduction_ratio(0.0, 0.5).unwrap(), 0.0);
        assert!(reduction_ratio(f64::NAN, 1.0).is_err());
        assert!(reduction_ratio(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn improving_streak_shrinks_exponentially() {
        let cfg = tcp(8);
        let mut s = ControllerState::new(8);
        let mut none = Scripted(vec![]);
        assert_eq!(s.step(&cfg, 0.05, &mut none), 7);
        assert_eq!(s.d, 2);
        assert_eq!(s.step(&cfg, 0.05, &mut none), 5);
        assert_eq!(s.d, 4);
        assert_eq!(s.step(&cfg, 0.05, &mut none), 1);
        assert_eq!(s.d, 8);
        assert_eq!(s.step(&cfg, 0.05, &mut none), 1);
        assert_eq!(s.d, 8);
    }

    #[test]
    fn stall_doubles_and_holds() {
        let cfg = tcp(8);
        let mut s = ControllerState {
            p: 3,
            d: 4,
            ..ControllerState::new(8)
        };
        let mut none = Scripted(vec![]);
        assert_eq!(s.step(&cfg, 0.0, &mut none), 6);
        assert_eq!((s.d, s.hold_remaining), (1, 5));
        // Held rounds leave p alone but still log experience at p = 6.
        for left in (0..5).rev() {
            assert_eq!(s.step(&cfg, 0.5, &mut none), 6);
            assert_eq!(s.hold_remaining, left);
        }
        assert_eq!(s.experience_at(6), Experience { good: 5, bad: 0 });
        assert_eq!(s.step(&cfg, 0.5, &mut none), 5);
    }

    #[test]
    fn increase_caps_at_n() {
        let mut s = ControllerState {
            p: 5,
            ..ControllerState::new(8)
        };
        assert_eq!(s.step(&tcp(8), -0.2, &mut Scripted(vec![])), 8);
    }

    #[test]
    fn sa_keeps_on_low_draw() {
        let cfg = ControllerConfig::new(8, ControllerMode::Sa);
        let mut s = ControllerState {
            p: 4,
            d: 2,
            ..ControllerState::new(8)
        };
        // stall 0 -> 1, keep probability exp(-1/10) ~ 0.905.
        assert_eq!(s.step(&cfg, 0.0, &mut Scripted(vec![0.5])), 4);
        assert_eq!((s.d, s.stall, s.hold_remaining), (1, 1, 0));
        // stall 2: exp(-0.2) ~ 0.8187; a 0.9 draw escapes.
        assert_eq!(s.step(&cfg, 0.0, &mut Scripted(vec![0.9])), 8);
        assert_eq!((s.stall, s.hold_remaining), (0, 5));
    }

    #[test]
    fn exp_keep_follows_history() {
        let cfg = ControllerConfig::new(8, ControllerMode::Exp);
        let seeded = || {
            let mut s = ControllerState {
                p: 4,
                ..ControllerState::new(8)
            };
            s.experience.insert(4, Experience { good: 3, bad: 0 });
            s
        };
        assert_eq!(seeded().experience_at(4).keep_probability(), 0.8);
        let mut s = seeded();
        assert_eq!(s.step(&cfg, 0.0, &mut Scripted(vec![0.79])), 4);
        assert_eq!(s.experience_at(4), Experience { good: 3, bad: 1 });
        let mut s = seeded();
        assert_eq!(s.step(&cfg, 0.0, &mut Scripted(vec![0.81])), 8);
        assert_eq!(s.hold_remaining, 5);
    }

    #[test]
    fn never_improving_tcp_pins_p_at_n() {
        let cfg = tcp(8);
        let mut s = ControllerState::new(8);
        for _ in 0..50 {
            assert_eq!(s.step(&cfg, -0.1, &mut Scripted(vec![])), 8);
        }
    }

    #[test]
    fn improving_reaches_one_within_log_bound() {
        for n in 2..=64usize {
            let cfg = tcp(n);
            let mut s = ControllerState::new(n);
            let bound = (n as f64).log2().ceil() as usize + 1;
            let steps = (1..=bound).find(|_| s.step(&cfg, 1.0, &mut Scripted(vec![])) == 1);
            assert!(steps.is_some(), "n = {n} did not reach 1 in {bound} steps");
        }
    }

    fn mode_strategy() -> impl Strategy<Value = ControllerMode> {
        prop_oneof![
            Just(ControllerMode::Tcp),
            Just(ControllerMode::Sa),
            Just(ControllerMode::Exp)
        ]
    }

    proptest! {
        #[test]
        fn p_stays_in_range_and_runs_are_reproducible(
            n in 2usize..20,
            mode in mode_strategy(),
            ratios in prop::collection::vec(-0.5f64..0.5, 1..120),
            seed in any::<u64>(),
        ) {
            let cfg = ControllerConfig { w: 0.01, ..ControllerConfig::new(n, mode) };
            let run = || {
                let mut s = ControllerState::new(n);
                let mut rng = rng_from(seed);
                ratios.iter().map(|&r| s.step(&cfg, r, &mut rng)).collect::<Vec<_>>()
            };
            let a = run();
            prop_assert!(a.iter().all(|&p| (1..=n).contains(&p)));
            prop_assert_eq!(a, run());
        }

        #[test]
        fn exp_keep_probability_is_open_unit_interval(good in 0u64..1_000_000, bad in 0u64..1_000_000) {
            let k = Experience { good, bad }.keep_probability();
            prop_assert!(k > 0.0 && k < 1.0);
        }
    }
}
