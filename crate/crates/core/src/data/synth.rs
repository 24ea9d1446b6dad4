use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Response, MIN_LOGS};
use crate::error::{Error, Result};

/// Parameters of the synthetic DINA generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Range each exercise's guessing probability is drawn from.
    pub guess: (f64, f64),
    /// Range each exercise's slipping probability is drawn from.
    pub slip: (f64, f64),
    /// Probability a student masters a concept.
    pub prevalence: f64,
    /// Probability of each extra concept on an exercise beyond its primary one.
    pub q_density: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 300,
            m: 30,
            k: 5,
            guess: (0.05, 0.25),
            slip: (0.05, 0.25),
            prevalence: 0.5,
            q_density: 0.2,
            seed: 7,
        }
    }
}

fn unit_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::Config(format!(
            "{name} range [{lo}, {hi}] must satisfy 0 ≤ lo ≤ hi ≤ 1"
        )));
    }
    Ok(())
}

impl SynthSpec {
    /// Basic well-formedness; degenerate probabilities (0 or 1) are allowed.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::Config(format!(
                "synthetic spec needs N, M, K ≥ 1 (got {}, {}, {})",
                self.n, self.m, self.k
            )));
        }
        if self.m < MIN_LOGS {
            return Err(Error::Config(format!(
                "M = {} gives every student fewer than {MIN_LOGS} logs",
                self.m
            )));
        }
        unit_range("guess", self.guess)?;
        unit_range("slip", self.slip)?;
        unit_range("prevalence", (self.prevalence, self.prevalence))?;
        unit_range("q_density", (self.q_density, self.q_density))
    }

    /// The stricter condition `0 < g < 0.5 < 1 − sl < 1` under which the
    /// generating model is identifiable.
    pub fn check_identifiable(&self) -> Result<()> {
        self.validate()?;
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi < 0.5;
        if !ok(self.guess) || !ok(self.slip) {
            return Err(Error::Config(format!(
                "need 0 < g < 0.5 and 0 < sl < 0.5, got g ∈ [{}, {}], sl ∈ [{}, {}]",
                self.guess.0, self.guess.1, self.slip.0, self.slip.1
            )));
        }
        Ok(())
    }
}

/// Output of [`synth_dina`].
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// True binary mastery `N × K`.
    pub mastery: Vec<Vec<u8>>,
    pub guess: Vec<f64>,
    pub slip: Vec<f64>,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Samples mastery, a Q-matrix and one response per (student, exercise)
/// pair from `P(correct) = g^{1−nt}(1−sl)^{nt}`. Exercise `j` always covers
/// concept `j mod K`, so every concept is tested when `M ≥ K`.
pub fn synth_dina(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, m, k) = (spec.n, spec.m, spec.k);
    let mastery: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|_| u8::from(rng.gen_bool(spec.prevalence)))
                .collect()
        })
        .collect();
    let q: Vec<Vec<u8>> = (0..m)
        .map(|j| {
            (0..k)
                .map(|c| u8::from(c == j % k || rng.gen_bool(spec.q_density)))
                .collect()
        })
        .collect();
    let guess: Vec<f64> = (0..m).map(|_| draw(&mut rng, spec.guess)).collect();
    let slip: Vec<f64> = (0..m).map(|_| draw(&mut rng, spec.slip)).collect();

    let mut logs = Vec::with_capacity(n * m);
    for (s, know) in mastery.iter().enumerate() {
        for (j, row) in q.iter().enumerate() {
            let nt = row
                .iter()
                .zip(know)
                .all(|(need, has)| *need == 0 || *has == 1);
            let p = if nt { 1.0 - slip[j] } else { guess[j] };
            let score = u8::from(rng.gen::<f64>() < p);
            logs.push(Response {
                student: s,
                exercise: j,
                score,
            });
        }
    }
    let dataset = Dataset {
        student_ids: (0..n).map(|i| format!("s{i}")).collect(),
        exercise_ids: (0..m).map(|j| format!("e{j}")).collect(),
        concept_ids: (0..k).map(|c| format!("c{c}")).collect(),
        q,
        logs,
        split: None,
        source: format!("synthetic DINA (seed {})", spec.seed),
        min_logs: MIN_LOGS,
    };
    Ok(Synthetic {
        dataset,
        mastery,
        guess,
        slip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_parameters() {
        let spec = SynthSpec {
            n: 10,
            m: 15,
            k: 3,
            guess: (0.0, 0.0),
            slip: (0.0, 0.0),
            prevalence: 1.0,
            ..SynthSpec::default()
        };
        assert!(synth_dina(&spec)
            .unwrap()
            .dataset
            .logs
            .iter()
            .all(|r| r.score == 1));

        let spec = SynthSpec {
            guess: (1.0, 1.0),
            prevalence: 0.0,
            ..spec
        };
        assert!(synth_dina(&spec)
            .unwrap()
            .dataset
            .logs
            .iter()
            .all(|r| r.score == 1));
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_dina(&SynthSpec {
            n: 0,
            ..SynthSpec::default()
        })
        .is_err());
        assert!(synth_dina(&SynthSpec {
            guess: (0.3, 0.1),
            ..SynthSpec::default()
        })
        .is_err());
        assert!(SynthSpec {
            slip: (0.05, 0.6),
            ..SynthSpec::default()
        }
        .check_identifiable()
        .is_err());
        assert!(SynthSpec::default().check_identifiable().is_ok());
    }

    #[test]
    fn every_exercise_has_a_concept() {
        let s = synth_dina(&SynthSpec::default()).unwrap();
        assert!(s.dataset.q.iter().all(|r| r.contains(&1)));
        assert_eq!(s.dataset.logs.len(), 300 * 30);
    }
}
