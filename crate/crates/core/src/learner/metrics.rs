//! Per-episode records, aggregate statistics and CSV export.

use crate::episodes::Split;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub split: Split,
    pub acc: f64,
    pub loss_ce: f64,
    pub loss_orth: f64,
    /// `‖self_conv(K_l) − I‖_F` per layer, for the orthogonality case each layer uses.
    pub residuals: Vec<f64>,
}

/// Mean, sample standard deviation and 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    /// False when fewer than two values were given; `ci95` is then 0.
    pub ci_defined: bool,
}

/// `1.96·std/√n` with the `n − 1` sample standard deviation.
pub fn confidence_interval(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            std: 0.0,
            ci95: 0.0,
            ci_defined: false,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Summary {
            n,
            mean,
            std: 0.0,
            ci95: 0.0,
            ci_defined: false,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    Summary {
        n,
        mean,
        std,
        ci95: 1.96 * std / (n as f64).sqrt(),
        ci_defined: true,
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.ci95)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<EpisodeRecord>,
}

impl RunMetrics {
    pub fn push(&mut self, r: EpisodeRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.acc).collect()
    }

    pub fn accuracy(&self) -> Summary {
        confidence_interval(&self.accuracies())
    }

    /// `loss_ce + loss_orth` per episode.
    pub fn total_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_ce + r.loss_orth).collect()
    }

    /// Mean over layers of the residuals logged in episode `i`.
    pub fn mean_residual(&self, i: usize) -> f64 {
        let r = &self.records[i].residuals;
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }

    /// Header `episode,split,acc,loss_ce,loss_orth,residual_l1..residual_lL`
    /// followed by one row per episode. Floats use the shortest exact form.
    pub fn to_csv(&self) -> String {
        let layers = self.records.iter().map(|r| r.residuals.len()).max().unwrap_or(0);
        let mut s = String::from("episode,split,acc,loss_ce,loss_orth");
        for l in 1..=layers {
            s.push_str(&format!(",residual_l{l}"));
        }
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}",
                r.episode, r.split, r.acc, r.loss_ce, r.loss_orth
            ));
            for v in &r.residuals {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_value_interval() {
        let s = confidence_interval(&[0.5, 0.7]);
        assert!((s.mean - 0.6).abs() < 1e-15);
        assert!((s.std - 0.02f64.sqrt()).abs() < 1e-15);
        assert!((s.ci95 - 1.96 * 0.02f64.sqrt() / 2f64.sqrt()).abs() < 1e-15);
        assert!((s.ci95 - 0.196).abs() < 1e-3);
        assert!(s.ci_defined);
    }

    #[test]
    fn single_value_has_zero_flagged_interval() {
        let s = confidence_interval(&[0.8]);
        assert_eq!((s.mean, s.ci95, s.ci_defined), (0.8, 0.0, false));
        assert_eq!(format!("{}", confidence_interval(&[1.0, 1.0])), "1.0000 ± 0.0000");
    }

    #[test]
    fn csv_layout() {
        let mut m = RunMetrics::default();
        m.push(EpisodeRecord {
            episode: 0,
            split: Split::Train,
            acc: 0.5,
            loss_ce: 1.25,
            loss_orth: 0.0,
            residuals: vec![2.0, 3.5],
        });
        assert_eq!(
            m.to_csv(),
            "episode,split,acc,loss_ce,loss_orth,residual_l1,residual_l2\n0,train,0.5,1.25,0,2,3.5\n"
        );
        assert_eq!(m.mean_residual(0), 2.75);
    }
}
