use crate::config::TrainConfig;

/// Loss values of one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_global: f64,
    pub l_dir: f64,
    pub l_patch: f64,
    pub l_content: f64,
    pub l_tv: f64,
    pub l_total: f64,
    pub per_patch: Vec<f64>,
    pub rejected: Vec<bool>,
}

impl LossReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.iter().filter(|r| **r).count()
    }

    /// Weighted sum of the individual terms under `config`.
    pub fn recomposed_total(&self, config: &TrainConfig) -> f64 {
        config.lambda_dir * self.l_dir
            + config.lambda_patch * self.l_patch
            + config.lambda_content * self.l_content
            + config.lambda_tv * self.l_tv
            + config.lambda_global * self.l_global
    }

    /// Checks the total recomposition, the rejection mask and the patch mean.
    pub fn is_consistent(&self, config: &TrainConfig, rel_tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1e-12);
        let n = self.per_patch.len();
        if n != self.rejected.len() {
            return false;
        }
        let mask_ok = self
            .per_patch
            .iter()
            .zip(&self.rejected)
            .all(|(l, r)| *r == (*l <= config.tau));
        let patch_mean = self
            .per_patch
            .iter()
            .zip(&self.rejected)
            .map(|(l, r)| if *r { 0.0 } else { *l })
            .sum::<f64>()
            / n.max(1) as f64;
        mask_ok
            && (n == 0 || close(patch_mean, self.l_patch) || (patch_mean - self.l_patch).abs() < 1e-9)
            && (close(self.recomposed_total(config), self.l_total)
                || (self.recomposed_total(config) - self.l_total).abs() < 1e-9)
    }

    pub const CSV_HEADER: &'static str =
        "iteration,lr,l_global,l_dir,l_patch,l_content,l_tv,l_total,rejected,n_patches";

    pub fn csv_row(&self, iteration: usize, lr: f64) -> String {
        format!(
            "{iteration},{lr},{},{},{},{},{},{},{},{}",
            self.l_global,
            self.l_dir,
            self.l_patch,
            self.l_content,
            self.l_tv,
            self.l_total,
            self.rejected_count(),
            self.per_patch.len()
        )
    }
}
