//! C ABI over the Clarabel interior-point solver.
//!
//! Problem form: minimize q'x subject to s = b - A x, s in K, where K is a
//! product of zero, nonnegative, second-order, exponential and PSD-triangle
//! cones listed in order.

#![allow(non_snake_case)]

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use std::slice;

pub const CONE_ZERO: i32 = 0;
pub const CONE_NONNEG: i32 = 1;
pub const CONE_SOC: i32 = 2;
pub const CONE_EXP: i32 = 3;
pub const CONE_PSD_TRIANGLE: i32 = 4;

#[repr(C)]
pub struct ClarabelFfiSettings {
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub max_iter: u32,
    pub verbose: i32,
}

#[repr(C)]
pub struct ClarabelFfiResult {
    pub status: i32,
    pub obj_val: f64,
    pub obj_val_dual: f64,
    pub r_prim: f64,
    pub r_dual: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

/// Status codes: 0 solved, 1 almost solved, 2 primal infeasible,
/// 3 dual infeasible, 4 max iterations/time, 5 numerical error,
/// 6 insufficient progress, 7 setup error.
fn status_code(s: SolverStatus) -> i32 {
    match s {
        SolverStatus::Solved => 0,
        SolverStatus::AlmostSolved => 1,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => 2,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => 3,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => 4,
        SolverStatus::NumericalError => 5,
        SolverStatus::InsufficientProgress => 6,
        _ => 5,
    }
}

/// # Safety
/// All pointers must reference arrays of the documented lengths:
/// q, x: n; b, s, z: m; colptr: n+1; rowval/nzval: colptr[n];
/// cone_kinds/cone_dims: ncones.
#[no_mangle]
pub unsafe extern "C" fn clarabel_ffi_solve(
    n: usize,
    m: usize,
    q: *const f64,
    colptr: *const usize,
    rowval: *const usize,
    nzval: *const f64,
    b: *const f64,
    ncones: usize,
    cone_kinds: *const i32,
    cone_dims: *const usize,
    settings: *const ClarabelFfiSettings,
    x_out: *mut f64,
    s_out: *mut f64,
    z_out: *mut f64,
    result: *mut ClarabelFfiResult,
) -> i32 {
    let res = &mut *result;
    let q = slice::from_raw_parts(q, n).to_vec();
    let colptr = slice::from_raw_parts(colptr, n + 1).to_vec();
    let nnz = colptr[n];
    let rowval = slice::from_raw_parts(rowval, nnz).to_vec();
    let nzval = slice::from_raw_parts(nzval, nnz).to_vec();
    let b = slice::from_raw_parts(b, m).to_vec();
    let kinds = slice::from_raw_parts(cone_kinds, ncones);
    let dims = slice::from_raw_parts(cone_dims, ncones);

    let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(ncones);
    for (k, d) in kinds.iter().zip(dims.iter()) {
        let cone = match *k {
            CONE_ZERO => SupportedConeT::ZeroConeT(*d),
            CONE_NONNEG => SupportedConeT::NonnegativeConeT(*d),
            CONE_SOC => SupportedConeT::SecondOrderConeT(*d),
            CONE_EXP => SupportedConeT::ExponentialConeT(),
            CONE_PSD_TRIANGLE => SupportedConeT::PSDTriangleConeT(*d),
            _ => {
                res.status = 7;
                return 7;
            }
        };
        cones.push(cone);
    }

    let P = CscMatrix::<f64>::zeros((n, n));
    let A = CscMatrix::new(m, n, colptr, rowval, nzval);
    let st = &*settings;
    let settings = DefaultSettings::<f64> {
        tol_feas: st.tol_feas,
        tol_gap_abs: st.tol_gap_abs,
        tol_gap_rel: st.tol_gap_rel,
        max_iter: st.max_iter,
        verbose: st.verbose != 0,
        presolve_enable: false,
        ..DefaultSettings::default()
    };

    let mut solver = match DefaultSolver::new(&P, &q, &A, &b, &cones, settings) {
        Ok(s) => s,
        Err(_) => {
            res.status = 7;
            return 7;
        }
    };
    solver.solve();
    let sol = &solver.solution;
    slice::from_raw_parts_mut(x_out, n).copy_from_slice(&sol.x);
    slice::from_raw_parts_mut(s_out, m).copy_from_slice(&sol.s);
    slice::from_raw_parts_mut(z_out, m).copy_from_slice(&sol.z);
    res.status = status_code(sol.status);
    res.obj_val = sol.obj_val;
    res.obj_val_dual = sol.obj_val_dual;
    res.r_prim = sol.r_prim;
    res.r_dual = sol.r_dual;
    res.iterations = sol.iterations;
    res.solve_time = sol.solve_time;
    res.status
}
