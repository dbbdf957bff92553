use crate::error::{Error, Result};
use crate::tensor::LabelMap;

/// Per-class confusion counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoUStats {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    ignore: u8,
}

impl IoUStats {
    pub fn new(num_classes: usize, ignore: u8) -> Self {
        IoUStats { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes], ignore }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Counts every pixel whose truth is not the ignore label.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if (pred.n, pred.h, pred.w) != (truth.n, truth.h, truth.w) {
            return Err(Error::Shape(format!(
                "prediction ({},{},{}) vs truth ({},{},{})",
                pred.n, pred.h, pred.w, truth.n, truth.h, truth.w
            )));
        }
        let k = self.num_classes();
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            if t == self.ignore {
                continue;
            }
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return Err(Error::Data(format!("class index {} outside [0, {k})", p.max(t))));
            }
            if p == t {
                self.tp[t] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[t] += 1;
            }
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` for classes absent from both
    /// prediction and truth.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.num_classes())
            .map(|c| {
                let denom = self.tp[c] + self.fp[c] + self.fn_[c];
                (denom > 0).then(|| self.tp[c] as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean over present classes; 0 when nothing was counted.
    pub fn mean(&self) -> f64 {
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

pub fn miou(pred: &LabelMap, truth: &LabelMap, num_classes: usize, ignore: u8) -> Result<(Vec<Option<f64>>, f64)> {
    let mut s = IoUStats::new(num_classes, ignore);
    s.accumulate(pred, truth)?;
    Ok((s.per_class(), s.mean()))
}
