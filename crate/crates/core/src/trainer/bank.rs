use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::sim::{Intention, ScenarioSpec};

pub const SCENARIO_COUNT: usize = 81;
const INTENTIONS: [Intention; 3] = [Intention::Left, Intention::Straight, Intention::Right];

/// Intentions of scenario `index`, one base-3 digit per approach in N, E, S, W order.
pub fn scenario_intentions(index: usize) -> [Intention; 4] {
    let mut out = [Intention::Left; 4];
    let mut rest = index;
    for slot in out.iter_mut() {
        *slot = INTENTIONS[rest % 3];
        rest /= 3;
    }
    out
}

/// Short label such as `LSRL` (N, E, S, W).
pub fn scenario_label(index: usize) -> String {
    scenario_intentions(index)
        .iter()
        .map(|i| match i {
            Intention::Left => 'L',
            Intention::Straight => 'S',
            Intention::Right => 'R',
        })
        .collect()
}

/// Weights `1/(G_i − min G + c)` normalized to a distribution.
pub fn pre_floor_probabilities(returns: &[f64], shift: f64) -> Vec<f64> {
    let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = returns.iter().map(|g| 1.0 / (g - min + shift)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Raises every entry to at least `floor` and rescales the rest so the
/// vector still sums to one; repeats until no rescaled entry drops below
/// the floor.
pub fn apply_floor(p: &[f64], floor: f64) -> Vec<f64> {
    let n = p.len();
    assert!(floor * n as f64 <= 1.0 + 1e-12, "floor too large for {n} entries");
    let mut fixed = vec![false; n];
    loop {
        let free_mass: f64 = p.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(x, _)| x).sum();
        let budget = 1.0 - floor * fixed.iter().filter(|f| **f).count() as f64;
        let q: Vec<f64> = p
            .iter()
            .zip(&fixed)
            .map(|(&x, &f)| if f { floor } else if free_mass > 0.0 { x / free_mass * budget } else { budget })
            .collect();
        let mut changed = false;
        for i in 0..n {
            if !fixed[i] && q[i] < floor {
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            return q;
        }
    }
}

/// The 81 four-vehicle training scenarios and their sampling distribution.
#[derive(Debug, Clone)]
pub struct ScenarioBank {
    scenarios: Vec<ScenarioSpec>,
    probabilities: Vec<f64>,
    index: WeightedIndex<f64>,
    shift: f64,
    floor: f64,
}

impl ScenarioBank {
    pub fn new(shift: f64, floor: f64) -> Self {
        let scenarios = (0..SCENARIO_COUNT).map(|i| ScenarioSpec::four_way(scenario_intentions(i))).collect();
        let probabilities = vec![1.0 / SCENARIO_COUNT as f64; SCENARIO_COUNT];
        let index = WeightedIndex::new(&probabilities).expect("uniform weights");
        Self { scenarios, probabilities, index, shift, floor }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn scenario(&self, i: usize) -> &ScenarioSpec {
        &self.scenarios[i]
    }

    pub fn scenarios(&self) -> &[ScenarioSpec] {
        &self.scenarios
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Replaces the distribution from one return per scenario.
    pub fn update(&mut self, returns: &[f64]) -> Result<()> {
        if returns.len() != self.scenarios.len() {
            return Err(Error::Contract(format!("{} returns for {} scenarios", returns.len(), self.scenarios.len())));
        }
        if returns.iter().any(|g| !g.is_finite()) {
            return Err(Error::Contract("non-finite scenario return".into()));
        }
        self.set_probabilities(apply_floor(&pre_floor_probabilities(returns, self.shift), self.floor))
    }

    pub fn set_probabilities(&mut self, p: Vec<f64>) -> Result<()> {
        if p.len() != self.scenarios.len() {
            return Err(Error::Contract("probability vector length differs from bank size".into()));
        }
        self.index = WeightedIndex::new(&p).map_err(|e| Error::Contract(format!("invalid scenario distribution: {e}")))?;
        self.probabilities = p;
        Ok(())
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &ScenarioSpec {
        &self.scenarios[self.sample_index(rng)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bank_enumerates_all_assignments() {
        let bank = ScenarioBank::new(1.0, 0.2 / 81.0);
        assert_eq!(bank.len(), 81);
        let labels: std::collections::BTreeSet<String> = (0..81).map(scenario_label).collect();
        assert_eq!(labels.len(), 81);
        assert!(bank.scenarios().iter().all(|s| s.is_four_way()));
        assert_eq!(scenario_label(0), "LLLL");
    }

    #[test]
    fn hand_evaluated_weights() {
        let p = pre_floor_probabilities(&[0.0, 9.0], 1.0);
        assert!((p[0] - 10.0 / 11.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn equal_returns_give_uniform() {
        let mut bank = ScenarioBank::new(1.0, 0.2 / 81.0);
        bank.update(&[3.5; 81]).unwrap();
        assert!(bank.probabilities().iter().all(|p| (p - 1.0 / 81.0).abs() < 1e-15));
    }

    #[test]
    fn floor_is_respected_exactly() {
        let p = apply_floor(&[0.97, 0.01, 0.01, 0.01], 0.05);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|&x| (x - 0.05).abs() < 1e-15));
        assert!((p[0] - 0.85).abs() < 1e-12);
    }

    #[test]
    fn one_hot_always_sampled() {
        let mut bank = ScenarioBank::new(1.0, 0.0);
        let mut p = vec![0.0; 81];
        p[17] = 1.0;
        bank.set_probabilities(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|_| bank.sample_index(&mut rng) == 17));
    }
}
