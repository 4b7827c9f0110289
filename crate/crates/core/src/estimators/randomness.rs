//! Random draws of an estimator step: an RNG stream for normal use, or a
//! script that replays a fixed sequence of outcomes for exact enumeration.

use rand::{Rng, RngCore};

use crate::rng::SimRng;

/// A replayable decision sequence. Each decision records its arity and the
/// probability of the chosen outcome; decisions past the prefix take outcome 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Script {
    pub choices: Vec<usize>,
    pub arities: Vec<usize>,
    pub probability: f64,
    pos: usize,
}

impl Script {
    pub fn from_prefix(prefix: Vec<usize>) -> Self {
        Self {
            choices: prefix,
            arities: Vec::new(),
            probability: 1.0,
            pos: 0,
        }
    }

    fn next(&mut self, arity: usize) -> usize {
        if self.pos == self.choices.len() {
            self.choices.push(0);
        }
        let c = self.choices[self.pos];
        assert!(c < arity, "script outcome {c} out of arity {arity}");
        self.arities.push(arity);
        self.pos += 1;
        c
    }

    /// Odometer increment over recorded arities; `None` after the last path.
    pub fn successor(&self) -> Option<Vec<usize>> {
        let mut ch = self.choices[..self.arities.len()].to_vec();
        while let Some(last) = ch.pop() {
            if last + 1 < self.arities[ch.len()] {
                ch.push(last + 1);
                return Some(ch);
            }
        }
        None
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Randomness {
    Rng(SimRng),
    Script(Script),
}

impl Randomness {
    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        match self {
            Randomness::Rng(r) => r.random_range(0..n),
            Randomness::Script(s) => {
                let c = s.next(n);
                s.probability /= n as f64;
                c
            }
        }
    }

    /// True with probability `p`.
    pub fn coin(&mut self, p: f64) -> bool {
        match self {
            Randomness::Rng(r) => {
                if p >= 1.0 {
                    true
                } else {
                    r.random::<f64>() < p
                }
            }
            Randomness::Script(s) => {
                let heads = s.next(2) == 0;
                s.probability *= if heads { p } else { 1.0 - p };
                heads
            }
        }
    }

    /// Opaque sample handle for expectation oracles.
    pub fn handle(&mut self) -> u64 {
        match self {
            Randomness::Rng(r) => r.next_u64(),
            Randomness::Script(_) => panic!("scripted randomness cannot enumerate oracle handles"),
        }
    }

    pub fn script(&self) -> Option<&Script> {
        match self {
            Randomness::Script(s) => Some(s),
            Randomness::Rng(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odometer_walks_all_paths() {
        // Coin then, on tails, an index in 0..3: paths H, T0, T1, T2.
        let mut prefix = Vec::new();
        let mut total = 0.0;
        let mut paths = 0;
        loop {
            let mut r = Randomness::Script(Script::from_prefix(prefix));
            if !r.coin(0.25) {
                r.index(3);
            }
            let s = r.script().unwrap().clone();
            total += s.probability;
            paths += 1;
            match s.successor() {
                Some(p) => prefix = p,
                None => break,
            }
        }
        assert_eq!(paths, 4);
        assert!((total - 1.0).abs() < 1e-15);
    }
}
