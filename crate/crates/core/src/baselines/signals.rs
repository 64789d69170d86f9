use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Approach;

/// Pair of opposing approaches that share a green.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseGroup {
    NorthSouth,
    EastWest,
}

impl PhaseGroup {
    pub fn of(approach: Approach) -> Self {
        match approach {
            Approach::North | Approach::South => PhaseGroup::NorthSouth,
            Approach::East | Approach::West => PhaseGroup::EastWest,
        }
    }

    pub fn other(self) -> Self {
        match self {
            PhaseGroup::NorthSouth => PhaseGroup::EastWest,
            PhaseGroup::EastWest => PhaseGroup::NorthSouth,
        }
    }

    pub fn approaches(self) -> [Approach; 2] {
        match self {
            PhaseGroup::NorthSouth => [Approach::North, Approach::South],
            PhaseGroup::EastWest => [Approach::East, Approach::West],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Green,
    Yellow,
    Red,
}

/// Green/yellow durations of a two-group plan; actuated plans add bounds on green.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub name: String,
    pub green: f64,
    pub yellow: f64,
    pub min_green: Option<f64>,
    pub max_green: Option<f64>,
    /// Detection gap (s) that ends an actuated green.
    pub gap_threshold: f64,
    /// Detector position upstream of the stop line (m).
    pub detector_distance: f64,
}

impl SignalPlan {
    fn fixed(name: &str, green: f64, yellow: f64) -> Self {
        Self {
            name: name.into(),
            green,
            yellow,
            min_green: None,
            max_green: None,
            gap_threshold: 3.0,
            detector_distance: 30.0,
        }
    }

    fn actuated(name: &str, green: f64, yellow: f64, min: f64, max: f64) -> Self {
        Self { min_green: Some(min), max_green: Some(max), ..Self::fixed(name, green, yellow) }
    }

    pub fn fttl1() -> Self {
        Self::fixed("fttl1", 25.0, 5.0)
    }

    pub fn fttl2() -> Self {
        Self::fixed("fttl2", 32.0, 8.0)
    }

    pub fn fttlopt() -> Self {
        Self::fixed("fttlopt", 15.0, 2.0)
    }

    pub fn atl1() -> Self {
        Self::actuated("atl1", 25.0, 5.0, 10.0, 40.0)
    }

    pub fn atl2() -> Self {
        Self::actuated("atl2", 32.0, 8.0, 15.0, 50.0)
    }

    pub fn all() -> Vec<Self> {
        vec![Self::fttl1(), Self::fttl2(), Self::fttlopt(), Self::atl1(), Self::atl2()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|p| p.name == name)
    }

    pub fn is_actuated(&self) -> bool {
        self.min_green.is_some()
    }

    /// Length of a full fixed-time cycle (both groups).
    pub fn period(&self) -> f64 {
        2.0 * (self.green + self.yellow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub active_group: PhaseGroup,
    /// Phase of the active group; the other group is red.
    pub phase: Phase,
    pub phase_elapsed: f64,
    /// Seconds since the detector of each approach last saw a vehicle.
    pub detector_last_actuation: [f64; 4],
}

impl SignalState {
    /// North/south green at time zero.
    pub fn initial() -> Self {
        Self { active_group: PhaseGroup::NorthSouth, phase: Phase::Green, phase_elapsed: 0.0, detector_last_actuation: [0.0; 4] }
    }

    pub fn phase_for(&self, approach: Approach) -> Phase {
        if PhaseGroup::of(approach) == self.active_group {
            self.phase
        } else {
            Phase::Red
        }
    }
}

/// Fixed-time state at `t` seconds: N/S green, N/S yellow, E/W green, E/W yellow, repeating.
pub fn fttl_state_at(plan: &SignalPlan, t: f64) -> SignalState {
    let half = plan.green + plan.yellow;
    // Quantize to microseconds so that step-counted times like 250 × 0.1 land on the boundary.
    let mut tau = (t.rem_euclid(plan.period()) * 1e6).round() / 1e6;
    if tau >= plan.period() {
        tau -= plan.period();
    }
    let (group, within) = if tau < half { (PhaseGroup::NorthSouth, tau) } else { (PhaseGroup::EastWest, tau - half) };
    let (phase, elapsed) = if within < plan.green { (Phase::Green, within) } else { (Phase::Yellow, within - plan.green) };
    SignalState { active_group: group, phase, phase_elapsed: elapsed, detector_last_actuation: [0.0; 4] }
}

const EPS: f64 = 1e-9;

/// Advances an actuated signal by `dt`. `detections[a]` says whether the
/// detector of approach `a` is occupied after this step.
pub fn atl_step(state: &SignalState, plan: &SignalPlan, detections: [bool; 4], dt: f64) -> SignalState {
    let mut next = *state;
    next.phase_elapsed += dt;
    for (gap, &hit) in next.detector_last_actuation.iter_mut().zip(&detections) {
        *gap = if hit { 0.0 } else { *gap + dt };
    }
    let min = plan.min_green.unwrap_or(plan.green);
    let max = plan.max_green.unwrap_or(plan.green);
    match next.phase {
        Phase::Green => {
            let gap = next.active_group.approaches().iter().map(|a| next.detector_last_actuation[a.index()]).fold(f64::INFINITY, f64::min);
            let at_max = next.phase_elapsed >= max - EPS;
            let gapped_out = next.phase_elapsed >= min - EPS && gap >= plan.gap_threshold - EPS;
            if at_max || gapped_out {
                next.phase = Phase::Yellow;
                next.phase_elapsed = 0.0;
            }
        }
        Phase::Yellow => {
            if next.phase_elapsed >= plan.yellow - EPS {
                next.active_group = next.active_group.other();
                next.phase = Phase::Green;
                next.phase_elapsed = 0.0;
                // Gap timers of the new group restart with its green.
                for a in next.active_group.approaches() {
                    next.detector_last_actuation[a.index()] = 0.0;
                }
            }
        }
        Phase::Red => unreachable!("the active group is never red"),
    }
    next
}

/// Webster's optimal cycle C0 = (1.5 L + 5) / (1 − Y) for critical flow ratios summing to Y.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn webster_cycle(flow_ratios: &[f64], lost_time: f64) -> Result<f64> {
    if flow_ratios.iter().any(|y| !(y.is_finite() && *y >= 0.0)) || !(lost_time >= 0.0) {
        return Err(Error::Config("flow ratios and lost time must be finite and non-negative".into()));
    }
    let y: f64 = flow_ratios.iter().sum();
    if y >= 1.0 {
        return Err(Error::Config(format!("infeasible demand: flow ratio sum {y} must be below 1")));
    }
    Ok((1.5 * lost_time + 5.0) / (1.0 - y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fttl1_schedule() {
        let p = SignalPlan::fttl1();
        assert_eq!(p.period(), 60.0);
        let s = fttl_state_at(&p, 0.0);
        assert_eq!((s.active_group, s.phase), (PhaseGroup::NorthSouth, Phase::Green));
        assert_eq!(fttl_state_at(&p, 27.0).phase, Phase::Yellow);
        assert_eq!(fttl_state_at(&p, 60.0), s);
        let at = |t| {
            let s = fttl_state_at(&p, t);
            (s.active_group, s.phase)
        };
        assert_eq!(at(24.9), (PhaseGroup::NorthSouth, Phase::Green));
        assert_eq!(at(25.0), (PhaseGroup::NorthSouth, Phase::Yellow));
        assert_eq!(at(30.0), (PhaseGroup::EastWest, Phase::Green));
        assert_eq!(at(55.0), (PhaseGroup::EastWest, Phase::Yellow));
        assert_eq!(at(59.9), (PhaseGroup::EastWest, Phase::Yellow));
        assert_eq!(s.phase_for(Approach::East), Phase::Red);
    }

    fn green_length(plan: &SignalPlan, detect: impl Fn(u32) -> bool) -> f64 {
        let mut s = SignalState::initial();
        let mut k = 0;
        while s.phase == Phase::Green {
            k += 1;
            let hit = detect(k);
            s = atl_step(&s, plan, [hit, false, hit, false], 0.1);
        }
        k as f64 * 0.1
    }

    #[test]
    fn continuous_demand_runs_to_max() {
        assert!((green_length(&SignalPlan::atl1(), |_| true) - 40.0).abs() < 1e-6);
        assert!((green_length(&SignalPlan::atl2(), |_| true) - 50.0).abs() < 1e-6);
    }

    #[test]
    fn gap_out_after_min() {
        // Detections until the minimum green has elapsed, then silence.
        let len = green_length(&SignalPlan::atl1(), |k| k <= 100);
        assert!((len - 13.0).abs() < 1e-6, "{len}");
    }

    #[test]
    fn zero_demand_still_serves_min() {
        assert!((green_length(&SignalPlan::atl1(), |_| false) - 10.0).abs() < 1e-6);
        assert!((green_length(&SignalPlan::atl2(), |_| false) - 15.0).abs() < 1e-6);
    }

    #[test]
    fn webster_examples() {
        assert!((webster_cycle(&[0.25, 0.25], 4.0).unwrap() - 22.0).abs() < 1e-12);
        assert!((webster_cycle(&[], 4.0).unwrap() - 11.0).abs() < 1e-12);
        assert!(webster_cycle(&[0.5, 0.5], 4.0).is_err());
    }
}
