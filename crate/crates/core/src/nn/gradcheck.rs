use super::Parameters;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)`.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max)
    }
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn finite_diff_check<T, P, F>(params: &P, analytic: &P, loss: F, h: f64, tolerance: f64) -> GradCheckReport
where
    T: Scalar,
    P: Parameters<T>,
    F: Fn(&P) -> T,
{
    let mut probe = params.clone();
    let analytic_blocks: Vec<(String, Vec<f64>)> =
        analytic.blocks().into_iter().map(|(n, b)| (n, b.data().iter().map(|x| x.as_f64()).collect())).collect();
    let mut blocks = Vec::new();
    for (bi, (name, a)) in analytic_blocks.iter().enumerate() {
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        let mut max_abs: f64 = 0.0;
        for (k, &ak) in a.iter().enumerate() {
            let orig = probe.blocks()[bi].1.data()[k];
            probe.blocks_mut()[bi].1.data_mut()[k] = orig + T::lit(h);
            let up = loss(&probe).as_f64();
            probe.blocks_mut()[bi].1.data_mut()[k] = orig - T::lit(h);
            let down = loss(&probe).as_f64();
            probe.blocks_mut()[bi].1.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let d = ak - numeric;
            diff_sq += d * d;
            a_sq += ak * ak;
            n_sq += numeric * numeric;
            max_abs = max_abs.max(d.abs());
        }
        let denom = a_sq.sqrt().max(n_sq.sqrt()).max(1e-6);
        let rel_error = diff_sq.sqrt() / denom;
        blocks.push(BlockCheck { name: name.clone(), rel_error, max_abs_error: max_abs, passed: rel_error < tolerance });
    }
    let passed = blocks.iter().all(|b| b.passed);
    GradCheckReport { blocks, tolerance, passed }
}
