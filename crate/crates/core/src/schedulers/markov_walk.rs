//! First-order Markov-chain patrol: each move is drawn from the current
//! site's transition row, with closed-form counterparts in the chain
//! analysis module.

use crate::error::{Error, Result};
use crate::markov::TransitionMatrix;
use crate::schedule::{GeneratorFactory, ScheduleGenerator, TravelTimes, Visit};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct MarkovChainGenerator {
    p: TransitionMatrix,
    travel: TravelTimes,
    rng: ChaCha8Rng,
    position: usize,
    time: u64,
}

impl MarkovChainGenerator {
    pub fn new(
        p: TransitionMatrix,
        travel: TravelTimes,
        start: usize,
        seed: u64,
    ) -> Result<Self> {
        if p.len() != travel.num_sites() {
            return Err(Error::Domain(format!(
                "matrix is over {} sites but travel times cover {}",
                p.len(),
                travel.num_sites()
            )));
        }
        if start >= p.len() {
            return Err(Error::Domain(format!(
                "start site {start} out of range for {} sites",
                p.len()
            )));
        }
        Ok(Self {
            p,
            travel,
            rng: ChaCha8Rng::seed_from_u64(seed),
            position: start,
            time: 0,
        })
    }
}

impl ScheduleGenerator for MarkovChainGenerator {
    fn num_sites(&self) -> usize {
        self.p.len()
    }

    fn position(&self) -> usize {
        self.position
    }

    fn next_site_distribution(&self) -> Option<Vec<f64>> {
        Some(self.p.row(self.position).to_vec())
    }

    fn step(&mut self) -> Visit {
        let row = self.p.row(self.position);
        let mut u: f64 = self.rng.gen();
        let mut next = row.iter().rposition(|&p| p > 0.0).expect("stochastic row");
        for (j, &pj) in row.iter().enumerate() {
            if u < pj {
                next = j;
                break;
            }
            u -= pj;
        }
        self.time += self.travel.gap(self.position, next);
        self.position = next;
        Visit {
            site: next,
            time: self.time,
        }
    }
}

/// Factory for independent chain walks from a fixed start site.
pub struct MarkovFactory {
    p: TransitionMatrix,
    travel: TravelTimes,
    start: usize,
}

impl MarkovFactory {
    pub fn new(p: TransitionMatrix, travel: TravelTimes, start: usize) -> Result<Self> {
        if start >= p.len() || p.len() != travel.num_sites() {
            return Err(Error::Domain("matrix, travel, and start must agree".into()));
        }
        Ok(Self { p, travel, start })
    }
}

impl GeneratorFactory for MarkovFactory {
    fn build(&self, seed: u64) -> Box<dyn ScheduleGenerator> {
        Box::new(
            MarkovChainGenerator::new(self.p.clone(), self.travel.clone(), self.start, seed)
                .expect("validated"),
        )
    }

    fn label(&self) -> String {
        "markov".into()
    }
}
