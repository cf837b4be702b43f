#pragma once

// C ABI exported by third_party/clarabel_ffi.

#include <cstddef>
#include <cstdint>

extern "C" {

struct ClarabelFfiSettings {
  double tol_feas;
  double tol_gap_abs;
  double tol_gap_rel;
  std::uint32_t max_iter;
  std::int32_t verbose;
};

struct ClarabelFfiResult {
  std::int32_t status;
  double obj_val;
  double obj_val_dual;
  double r_prim;
  double r_dual;
  std::uint32_t iterations;
  double solve_time;
};

enum ClarabelFfiCone : std::int32_t {
  kClarabelZero = 0,
  kClarabelNonneg = 1,
  kClarabelSoc = 2,
  kClarabelExp = 3,
  kClarabelPsdTriangle = 4,
};

std::int32_t clarabel_ffi_solve(std::size_t n, std::size_t m, const double* q, const std::size_t* colptr,
                                const std::size_t* rowval, const double* nzval, const double* b,
                                std::size_t ncones, const std::int32_t* cone_kinds, const std::size_t* cone_dims,
                                const ClarabelFfiSettings* settings, double* x_out, double* s_out, double* z_out,
                                ClarabelFfiResult* result);
}
