//! Central finite-difference check of tape gradients.

use super::tape::{Branches, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub denom_floor: f64,
    /// When set to `m`, a coordinate whose branch signature changes at
    /// `x ± h` or `x ± m·h` sits next to a kink and is skipped.
    pub kink_guard: Option<f64>,
    /// Evaluate the shifted points with the branch decisions of the
    /// unshifted input, differencing the smooth piece that contains it.
    pub freeze_branches: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tol: 1e-4,
            denom_floor: 1e-5,
            kink_guard: None,
            freeze_branches: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped by the kink guard.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub passed: bool,
}

/// Outcome of probing one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    Checked {
        numeric: f64,
        analytic: f64,
        abs_err: f64,
        rel_err: f64,
    },
    Kink,
}

/// Analytic gradients of `f` at `inputs`, compared coordinate by coordinate
/// against central differences.
pub struct GradChecker<F> {
    f: F,
    inputs: Vec<Tensor>,
    analytic: Vec<Tensor>,
    branches: Branches,
    signature: u64,
    cfg: GradCheckConfig,
}

impl<F> GradChecker<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    pub fn new(f: F, inputs: &[Tensor], cfg: GradCheckConfig) -> Result<Self> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::shape("grad_check needs a scalar function"));
        }
        let grads = tape.backward(out)?;
        let analytic = vars
            .iter()
            .zip(inputs)
            .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        Ok(GradChecker {
            branches: tape.branches(),
            signature: tape.branch_signature(),
            f,
            inputs: inputs.to_vec(),
            analytic,
            cfg,
        })
    }

    pub fn analytic(&self) -> &[Tensor] {
        &self.analytic
    }

    /// Function value and branch signature with coordinate `(i, j)` moved by `dx`.
    fn eval_at(&mut self, (i, j): (usize, usize), dx: f64) -> Result<(f64, u64)> {
        let orig = self.inputs[i].data()[j];
        self.inputs[i].data_mut()[j] = orig + dx;
        let mut tape = if self.cfg.freeze_branches {
            Tape::with_branches(self.branches.clone())
        } else {
            Tape::new()
        };
        let vars: Vec<Var> = self.inputs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = (self.f)(&mut tape, &vars);
        self.inputs[i].data_mut()[j] = orig;
        let out = out?;
        Ok((tape.value(out).item(), tape.branch_signature()))
    }

    pub fn probe(&mut self, coord: (usize, usize)) -> Result<Probe> {
        let (i, j) = coord;
        if i >= self.inputs.len() || j >= self.inputs[i].numel() {
            return Err(Error::shape(format!("grad_check coordinate {coord:?} out of range")));
        }
        let h = self.cfg.h;
        let (plus, sig_plus) = self.eval_at(coord, h)?;
        let (minus, sig_minus) = self.eval_at(coord, -h)?;
        if let Some(m) = self.cfg.kink_guard {
            if sig_plus != self.signature || sig_minus != self.signature {
                return Ok(Probe::Kink);
            }
            for dx in [m * h, -m * h] {
                if self.eval_at(coord, dx)?.1 != self.signature {
                    return Ok(Probe::Kink);
                }
            }
        }
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = self.analytic[i].data()[j];
        let abs_err = (numeric - analytic).abs();
        let rel_err = abs_err / numeric.abs().max(analytic.abs()).max(self.cfg.denom_floor);
        Ok(Probe::Checked {
            numeric,
            analytic,
            abs_err,
            rel_err,
        })
    }
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst: (0, 0),
            passed: true,
        }
    }

    /// Folds one probe into the report.
    pub fn record(&mut self, coord: (usize, usize), probe: Probe, tol: f64) {
        match probe {
            Probe::Kink => self.skipped += 1,
            Probe::Checked { abs_err, rel_err, .. } => {
                self.checked += 1;
                self.max_abs_err = self.max_abs_err.max(abs_err);
                if rel_err > self.max_rel_err {
                    self.max_rel_err = rel_err;
                    self.worst = coord;
                }
                self.passed = self.max_rel_err <= tol;
            }
        }
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Checks `f` over several inputs at the listed `(input, flat index)`
/// coordinates, or at every coordinate when `coords` is `None`.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    coords: Option<&[(usize, usize)]>,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut checker = GradChecker::new(f, inputs, cfg)?;
    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, x)| (0..x.numel()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };
    let mut report = GradCheckReport::new();
    for &coord in coords {
        let probe = checker.probe(coord)?;
        report.record(coord, probe, cfg.tol);
    }
    Ok(report)
}

/// Single-input convenience wrapper over [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), None, cfg)
}
