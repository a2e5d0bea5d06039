//! Classification metrics from a single confusion matrix.
//!
//! Precision, recall and F1 are macro-averaged over the classes; a class with
//! no predicted (or no true) members contributes 0 to the corresponding mean.

use crate::types::Metric;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    k: usize,
    /// counts[true * k + predicted]
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Confusion { k, counts: vec![0; k * k] }
    }

    pub fn from_pairs(k: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut c = Confusion::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.add(t, p);
        }
        c
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn correct(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    fn ratio(a: u64, b: u64) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.correct(), self.total())
    }

    pub fn error_rate(&self) -> f64 {
        Self::ratio(self.total() - self.correct(), self.total())
    }

    pub fn precision(&self, class: usize) -> f64 {
        let predicted: u64 = (0..self.k).map(|t| self.get(t, class)).sum();
        Self::ratio(self.get(class, class), predicted)
    }

    pub fn recall(&self, class: usize) -> f64 {
        let actual: u64 = (0..self.k).map(|p| self.get(class, p)).sum();
        Self::ratio(self.get(class, class), actual)
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn macro_mean(&self, f: impl Fn(usize) -> f64) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        (0..self.k).map(f).sum::<f64>() / self.k as f64
    }

    pub fn score(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy(),
            Metric::Precision => self.macro_mean(|c| self.precision(c)),
            Metric::Recall => self.macro_mean(|c| self.recall(c)),
            Metric::F1 => self.macro_mean(|c| self.f1(c)),
        }
    }
}
