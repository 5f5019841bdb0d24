use crate::error::{Error, Result};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::InsufficientData(
            "metric needs at least one value".into(),
        ));
    }
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_len(y.len(), y_hat.len())?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `100 · MAE / mean(y)`, in percent.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    let m = mae(y, y_hat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if mean == 0.0 {
        return Err(Error::invalid(
            "MAPE is undefined when the mean target is zero",
        ));
    }
    Ok(100.0 * m / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(labels: &[bool], preds: &[bool]) -> Result<Self> {
        check_len(labels.len(), preds.len())?;
        let mut c = Confusion::default();
        for (&l, &p) in labels.iter().zip(preds) {
            match (l, p) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn accuracy(&self) -> f64 {
        100.0 * (self.tp + self.tn) as f64 / (self.tp + self.tn + self.fp + self.fn_) as f64
    }

    pub fn f1(&self) -> Result<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp + self.fp + self.fn_ == 0 {
            return Err(Error::invalid(
                "F1 is undefined without positives in labels or predictions",
            ));
        }
        Ok(100.0 * (2 * self.tp) as f64 / denom as f64)
    }
}

/// Accuracy in percent.
pub fn acc(labels: &[bool], preds: &[bool]) -> Result<f64> {
    Ok(Confusion::from_labels(labels, preds)?.accuracy())
}

/// F1 of the positive class in percent.
pub fn f1(labels: &[bool], preds: &[bool]) -> Result<f64> {
    Confusion::from_labels(labels, preds)?.f1()
}

/// Average Euclidean distance over all `n × m` corresponding points.
pub fn ade(trajs: &[Vec<[f64; 2]>], pred: &[Vec<[f64; 2]>]) -> Result<f64> {
    check_len(trajs.len(), pred.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, p) in trajs.iter().zip(pred) {
        check_len(t.len(), p.len())?;
        for (a, b) in t.iter().zip(p) {
            total += (a[0] - b[0]).hypot(a[1] - b[1]);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// [`ade`] on rows flattened as `x0, y0, x1, y1, …`.
pub fn ade_flat(y: &[Vec<f64>], y_hat: &[Vec<f64>]) -> Result<f64> {
    let unflat = |v: &[Vec<f64>]| -> Vec<Vec<[f64; 2]>> {
        v.iter()
            .map(|r| r.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
            .collect()
    };
    ade(&unflat(y), &unflat(y_hat))
}
