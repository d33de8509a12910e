//! Central finite-difference gradient checks.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError, Var};

/// Denominator floor of [`relative_error`]. Without it, gradients that are
/// zero or near zero compare finite-difference noise against nothing.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub total: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(
                out,
                "{} {} checked={}/{} max_rel_err={:.3e} worst={}",
                if e.passed { "ok  " } else { "FAIL" },
                e.name,
                e.checked,
                e.total,
                e.max_rel_error,
                e.worst
            )
            .expect("writing to a String cannot fail");
        }
        writeln!(
            out,
            "{}: max relative error {:.3e} (tolerance {:.0e}, step {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance,
            self.step
        )
        .expect("writing to a String cannot fail");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many seeded-random elements per parameter.
    pub max_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, max_per_param: None, seed: 0 }
    }
}

fn evaluate<F>(f: &F, params: &[(String, Tensor)]) -> Result<(Tape, Vec<Var>, Var), TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

/// Compares backward gradients of the scalar `f(params)` with central
/// differences.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], opts: GradCheckOptions) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let (mut tape, vars, loss) = evaluate(&f, params)?;
    tape.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.to_vec();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, t)) in params.iter().enumerate() {
        let analytic: Vec<f64> = tape.grad(vars[pi]).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec);
        let indices: Vec<usize> = match opts.max_per_param {
            Some(k) if k < t.len() => {
                let mut v = rand::seq::index::sample(&mut rng, t.len(), k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..t.len()).collect(),
        };
        let (mut worst, mut max_err) = (0, 0.0);
        for &i in &indices {
            let orig = t.data()[i];
            probe[pi].1.data_mut()[i] = orig + opts.step;
            let (tp, _, lp) = evaluate(&f, &probe)?;
            let plus = tp.value(lp).item();
            probe[pi].1.data_mut()[i] = orig - opts.step;
            let (tm, _, lm) = evaluate(&f, &probe)?;
            let minus = tm.value(lm).item();
            probe[pi].1.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(analytic[i], numeric);
            if err > max_err || !err.is_finite() {
                max_err = err;
                worst = i;
            }
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            checked: indices.len(),
            total: t.len(),
            max_rel_error: max_err,
            worst,
            passed: max_err < opts.tolerance,
        });
    }
    Ok(GradCheckReport { step: opts.step, tolerance: opts.tolerance, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(name: &str, rows: usize, cols: usize, seed: u64) -> (String, Tensor) {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        (name.to_string(), Tensor::matrix(rows, cols, data).unwrap())
    }

    #[test]
    fn every_op_passes() {
        let params = vec![param("x", 4, 6, 1), param("w", 6, 6, 2), param("g", 1, 6, 3), param("b", 1, 6, 4)];
        let mask: Vec<bool> = (0..16).map(|i| i % 4 <= i / 4).collect();
        let report = grad_check(
            |tape, v| {
                let g = tape.reshape(v[2], &[6])?;
                let b = tape.reshape(v[3], &[6])?;
                let h = tape.matmul(v[0], v[1])?;
                let h = tape.rmsnorm(h, g, 1e-6)?;
                let h = tape.add_row(h, b)?;
                let h = tape.gelu(h);
                let q = tape.col_slice(h, 0, 3)?;
                let k = tape.col_slice(h, 3, 3)?;
                let q = tape.l2_normalize(q);
                let g3 = tape.col_slice(v[3], 0, 3)?;
                let k = tape.mul_row(k, g3)?;
                let s = tape.matmul_t(q, k)?;
                let s = tape.scale(s, 2.0);
                let p = tape.masked_softmax(s, &mask)?;
                let vv = tape.gather_rows(h, &[3, 1, 2, 0])?;
                let o = tape.matmul(p, vv)?;
                let t = tape.transpose(o)?;
                let t = tape.transpose(t)?;
                let c = tape.concat_cols(&[t, q])?;
                let base = tape.constant(Tensor::zeros(&[4, 9]));
                let c = tape.scatter_rows(base, c, &[2, 0, 1, 3])?;
                let prod = tape.mul(c, c)?;
                let d = tape.sub(prod, c)?;
                let ce = tape.cross_entropy(d, &[0, 5, 8, 2])?;
                let target = tape.constant(Tensor::zeros(&[4, 9]));
                let m = tape.mse(c, target)?;
                let mean = tape.mean(c)?;
                let s1 = tape.add(ce, m)?;
                tape.add(s1, mean)
            },
            &params,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn wrong_gradient_fails() {
        // `stop_grad` hides one path, so the analytic gradient is incomplete.
        let params = vec![param("x", 2, 2, 5)];
        let report = grad_check(
            |tape, v| {
                let frozen = tape.stop_grad(v[0]);
                let p = tape.mul(v[0], frozen)?;
                Ok(tape.sum(p))
            },
            &params,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 0.0) < 1e-6);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
