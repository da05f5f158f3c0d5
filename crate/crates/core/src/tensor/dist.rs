use super::tape::{Tape, Var};
use crate::error::{Error, Result};

impl Tape {
    /// Per-row `KL(N(μa, σa) ‖ N(μb, σb))` of diagonal Gaussians, `[m,n] → [m,1]`.
    pub fn gaussian_kl_rows(
        &mut self,
        mean_a: Var,
        std_a: Var,
        mean_b: Var,
        std_b: Var,
    ) -> Result<Var> {
        for s in [std_a, std_b] {
            if let Some(bad) = self.value(s).data().iter().find(|x| !(**x > 0.0)) {
                return Err(Error::Domain(format!("KL needs positive std, got {bad}")));
            }
        }
        let log_a = self.log(std_a);
        let log_b = self.log(std_b);
        let log_ratio = self.sub(log_b, log_a)?;
        let var_a = self.square(std_a);
        let diff = self.sub(mean_a, mean_b)?;
        let diff_sq = self.square(diff);
        let num = self.add(var_a, diff_sq)?;
        let var_b = self.square(std_b);
        let den = self.scale(var_b, 2.0);
        let frac = self.div(num, den)?;
        let terms = self.add(log_ratio, frac)?;
        let terms = self.add_const(terms, -0.5);
        self.sum_cols(terms)
    }

    /// Sum of the KL divergence over every dimension and row.
    pub fn gaussian_kl(&mut self, mean_a: Var, std_a: Var, mean_b: Var, std_b: Var) -> Result<Var> {
        let rows = self.gaussian_kl_rows(mean_a, std_a, mean_b, std_b)?;
        Ok(self.sum(rows))
    }
}
