/// Running squared and absolute error over a set of nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    pub sum_sq: f64,
    pub sum_abs: f64,
    pub count: usize,
}

impl ErrorAccumulator {
    pub fn add(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.sum_sq += e * e;
        self.sum_abs += e.abs();
        self.count += 1;
    }

    /// Adds the errors at `nodes`.
    pub fn add_nodes(&mut self, pred: &[f64], truth: &[f64], nodes: &[usize]) {
        for &i in nodes {
            self.add(pred[i], truth[i]);
        }
    }

    pub fn merge(&mut self, other: &ErrorAccumulator) {
        self.sum_sq += other.sum_sq;
        self.sum_abs += other.sum_abs;
        self.count += other.count;
    }

    pub fn rmse(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.sum_sq / self.count as f64).sqrt()
    }

    pub fn mae(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum_abs / self.count as f64
    }
}

/// Root-mean-square error of `pred` against `truth` at `nodes`.
pub fn rmse(pred: &[f64], truth: &[f64], nodes: &[usize]) -> f64 {
    let mut acc = ErrorAccumulator::default();
    acc.add_nodes(pred, truth, nodes);
    acc.rmse()
}

/// Mean absolute error of `pred` against `truth` at `nodes`.
pub fn mae(pred: &[f64], truth: &[f64], nodes: &[usize]) -> f64 {
    let mut acc = ErrorAccumulator::default();
    acc.add_nodes(pred, truth, nodes);
    acc.mae()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let truth = [1.0, 1.0, 1.0, 1.0];
        let pred = [1.01, 0.99, 1.0, 2.0];
        assert!((rmse(&pred, &truth, &[0, 1]) - 0.01).abs() < 1e-12);
        assert!((mae(&pred, &truth, &[0, 1, 2]) - 0.02 / 3.0).abs() < 1e-12);
        assert!(rmse(&pred, &truth, &[]).is_nan());
    }

    #[test]
    fn merge_equals_joint() {
        let truth = [1.0; 5];
        let pred = [1.1, 0.9, 1.05, 1.0, 0.97];
        let mut a = ErrorAccumulator::default();
        a.add_nodes(&pred, &truth, &[0, 1]);
        let mut b = ErrorAccumulator::default();
        b.add_nodes(&pred, &truth, &[2, 3, 4]);
        a.merge(&b);
        assert!((a.rmse() - rmse(&pred, &truth, &[0, 1, 2, 3, 4])).abs() < 1e-15);
    }
}
