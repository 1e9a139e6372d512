use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::network::Network;
use super::{assemble, FlowSolution, PowerflowError, SolverKind};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcOptions {
    /// Convergence threshold on the infinity norm of the mismatch, pu.
    pub tol: f64,
    /// Newton iterations per reactive-limit pass.
    pub max_iter: usize,
    pub enforce_q_limits: bool,
}

impl Default for AcOptions {
    fn default() -> Self {
        AcOptions {
            tol: 1e-8,
            max_iter: 30,
            enforce_q_limits: true,
        }
    }
}

/// Polar power-flow equations of a grid, in the Newton state
/// `x = [θ(pv ∪ pq), |V|(pq)]`.
#[derive(Clone, Debug)]
pub struct AcModel {
    net: Network,
    pq: Vec<bool>,
    /// Fixed reactive generation of nodes switched to PQ, pu.
    q_fixed: Vec<f64>,
    ang_idx: Vec<Option<usize>>,
    mag_idx: Vec<Option<usize>>,
    dim: usize,
}

impl AcModel {
    pub fn new(grid: &Grid) -> Result<AcModel, PowerflowError> {
        let net = Network::build(grid)?;
        for (i, v) in net.v_set.iter().enumerate() {
            if let Some(v) = v {
                if !(0.8..=1.2).contains(v) {
                    return Err(PowerflowError::InvalidSetpoint {
                        detail: format!("voltage set point {v} pu at node {i}"),
                    });
                }
            }
        }
        let n = net.len();
        let pq = (0..n).map(|i| net.v_set[i].is_none()).collect();
        let mut model = AcModel {
            q_fixed: vec![0.0; n],
            net,
            pq,
            ang_idx: Vec::new(),
            mag_idx: Vec::new(),
            dim: 0,
        };
        model.index();
        Ok(model)
    }

    fn index(&mut self) {
        let n = self.net.len();
        let mut k = 0;
        self.ang_idx = (0..n)
            .map(|i| {
                (i != self.net.slack).then(|| {
                    k += 1;
                    k - 1
                })
            })
            .collect();
        self.mag_idx = (0..n)
            .map(|i| {
                (i != self.net.slack && self.pq[i]).then(|| {
                    k += 1;
                    k - 1
                })
            })
            .collect();
        self.dim = k;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.net.len()
    }

    /// Flat start: zero angles, set-point magnitudes on voltage-controlled
    /// nodes and 1 pu elsewhere.
    pub fn flat_start(&self) -> (Vec<f64>, Vec<f64>) {
        let vm = self.net.v_set.iter().map(|v| v.unwrap_or(1.0)).collect();
        (vm, vec![0.0; self.net.len()])
    }

    pub fn pack(&self, vm: &[f64], va: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for i in 0..self.net.len() {
            if let Some(k) = self.ang_idx[i] {
                x[k] = va[i];
            }
            if let Some(k) = self.mag_idx[i] {
                x[k] = vm[i];
            }
        }
        x
    }

    /// Writes the state `x` into full voltage vectors.
    pub fn unpack(&self, x: &[f64], vm: &mut [f64], va: &mut [f64]) {
        for i in 0..self.net.len() {
            if let Some(k) = self.ang_idx[i] {
                va[i] = x[k];
            }
            if let Some(k) = self.mag_idx[i] {
                vm[i] = x[k];
            }
        }
    }

    fn voltages(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
        vm.iter()
            .zip(va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }

    fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.net
            .ybus
            .iter()
            .map(|row| row.iter().map(|&(k, y)| y * v[k]).sum())
            .collect()
    }

    fn residual(&self, vm: &[f64], va: &[f64]) -> Vec<f64> {
        let v = Self::voltages(vm, va);
        let ibus = self.currents(&v);
        let mut f = vec![0.0; self.dim];
        for i in 0..self.net.len() {
            let s = v[i] * ibus[i].conj();
            if let Some(k) = self.ang_idx[i] {
                f[k] = s.re - self.net.p_spec[i];
            }
            if let Some(k) = self.mag_idx[i] {
                f[k] = s.im - (self.q_fixed[i] - self.net.q_load[i]);
            }
        }
        f
    }

    /// Mismatch `S(x) − S_spec` with voltages taken from `base` where the
    /// state does not set them.
    pub fn mismatch(&self, x: &[f64], base_vm: &[f64], base_va: &[f64]) -> Vec<f64> {
        let (mut vm, mut va) = (base_vm.to_vec(), base_va.to_vec());
        self.unpack(x, &mut vm, &mut va);
        self.residual(&vm, &va)
    }

    /// Analytic Jacobian of [`AcModel::mismatch`] with respect to `x`.
    pub fn jacobian(&self, x: &[f64], base_vm: &[f64], base_va: &[f64]) -> DMatrix<f64> {
        let (mut vm, mut va) = (base_vm.to_vec(), base_va.to_vec());
        self.unpack(x, &mut vm, &mut va);
        self.jacobian_at(&vm, &va)
    }

    fn jacobian_at(&self, vm: &[f64], va: &[f64]) -> DMatrix<f64> {
        let v = Self::voltages(vm, va);
        let ibus = self.currents(&v);
        let j = Complex64::i();
        let mut jac = DMatrix::<f64>::zeros(self.dim, self.dim);
        for i in 0..self.net.len() {
            let (rp, rq) = (self.ang_idx[i], self.mag_idx[i]);
            if rp.is_none() && rq.is_none() {
                continue;
            }
            for &(k, y) in &self.net.ybus[i] {
                let vk_unit = v[k] / vm[k];
                let mut ds_da = -j * v[i] * (y * v[k]).conj();
                let mut ds_dm = v[i] * (y * vk_unit).conj();
                if k == i {
                    ds_da += j * v[i] * ibus[i].conj();
                    ds_dm += ibus[i].conj() * vk_unit;
                }
                for (row, part) in [(rp, 0), (rq, 1)] {
                    let Some(r) = row else { continue };
                    let pick = |c: Complex64| if part == 0 { c.re } else { c.im };
                    if let Some(c) = self.ang_idx[k] {
                        jac[(r, c)] += pick(ds_da);
                    }
                    if let Some(c) = self.mag_idx[k] {
                        jac[(r, c)] += pick(ds_dm);
                    }
                }
            }
        }
        jac
    }

    /// Newton iterations from the given voltages. Returns iterations used
    /// and the final mismatch.
    fn newton(
        &self,
        vm: &mut [f64],
        va: &mut [f64],
        opts: &AcOptions,
    ) -> Result<(usize, f64), PowerflowError> {
        let norm = |f: &[f64]| f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut f = self.residual(vm, va);
        let mut err = norm(&f);
        let mut it = 0;
        while !(err < opts.tol) {
            if it >= opts.max_iter || !err.is_finite() {
                return Err(PowerflowError::Diverged {
                    iterations: it,
                    final_mismatch: err,
                });
            }
            it += 1;
            let jac = self.jacobian_at(vm, va);
            let rhs = DVector::from_vec(f.iter().map(|x| -x).collect());
            let dx = jac
                .lu()
                .solve(&rhs)
                .filter(|dx| dx.iter().all(|d| d.is_finite()))
                .ok_or(PowerflowError::SingularJacobian { iteration: it })?;
            for i in 0..self.net.len() {
                if let Some(k) = self.ang_idx[i] {
                    va[i] += dx[k];
                }
                if let Some(k) = self.mag_idx[i] {
                    vm[i] += dx[k];
                }
            }
            f = self.residual(vm, va);
            err = norm(&f);
        }
        Ok((it, err))
    }

    /// Reactive generation needed at each voltage-controlled node, pu.
    fn q_gen(&self, vm: &[f64], va: &[f64]) -> Vec<f64> {
        let v = Self::voltages(vm, va);
        let ibus = self.currents(&v);
        (0..self.net.len())
            .map(|i| (v[i] * ibus[i].conj()).im + self.net.q_load[i])
            .collect()
    }
}

/// Full AC load flow by Newton-Raphson. With `enforce_q_limits`, any
/// voltage-controlled node whose units exceed their reactive range is
/// pinned at the violated limit and solved as PQ; a switched node stays
/// PQ for the rest of the solve.
pub fn solve_ac(grid: &Grid, opts: &AcOptions) -> Result<FlowSolution, PowerflowError> {
    let mut model = AcModel::new(grid)?;
    let (mut vm, mut va) = model.flat_start();
    let base = grid.base_mva;
    let mut total_it = 0;
    loop {
        let (it, err) = match model.newton(&mut vm, &mut va, opts) {
            Ok(r) => r,
            Err(PowerflowError::Diverged {
                iterations,
                final_mismatch,
            }) => {
                return Err(PowerflowError::Diverged {
                    iterations: total_it + iterations,
                    final_mismatch,
                })
            }
            Err(e) => return Err(e),
        };
        total_it += it;
        if !opts.enforce_q_limits {
            return Ok(assemble(grid, &model.net, &vm, &va, SolverKind::Ac, total_it, err));
        }
        let qg = model.q_gen(&vm, &va);
        let mut switched = false;
        for i in 0..model.nodes() {
            if model.pq[i] || i == model.net.slack {
                continue;
            }
            let units = model.net.gens_at[i].iter().map(|g| &grid.generators[g.index()]);
            let (q_min, q_max) = units.fold((0.0, 0.0), |(lo, hi), g| (lo + g.q_min, hi + g.q_max));
            let q = qg[i] * base;
            let limit = if q > q_max + 1e-6 {
                q_max
            } else if q < q_min - 1e-6 {
                q_min
            } else {
                continue;
            };
            model.pq[i] = true;
            model.q_fixed[i] = limit / base;
            switched = true;
        }
        if !switched {
            return Ok(assemble(grid, &model.net, &vm, &va, SolverKind::Ac, total_it, err));
        }
        model.index();
    }
}
