#include "wbcran/conic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include <Eigen/Dense>

#include "clarabel_ffi.h"

namespace wbcran::conic {

namespace {

const double kSqrt2 = std::sqrt(2.0);

double norm_tail(const std::vector<double>& y, std::size_t from) {
  double s = 0.0;
  for (std::size_t i = from; i < y.size(); ++i) s += y[i] * y[i];
  return std::sqrt(s);
}

double cone_residual(const ConeConstraint& c, const std::vector<double>& y) {
  switch (c.kind) {
    case ConeKind::Zero: {
      double r = 0.0;
      for (double v : y) r = std::max(r, std::abs(v));
      return r;
    }
    case ConeKind::Nonnegative: {
      double r = -std::numeric_limits<double>::infinity();
      for (double v : y) r = std::max(r, -v);
      return y.empty() ? 0.0 : r;
    }
    case ConeKind::SecondOrder:
      return norm_tail(y, 1) - y[0];
    case ConeKind::RotatedSecondOrder: {
      const double a = (y[0] + y[1]) / kSqrt2;
      const double d = (y[0] - y[1]) / kSqrt2;
      const double tail = norm_tail(y, 2);
      return std::max({std::hypot(d, tail) - a, -y[0], -y[1]});
    }
    case ConeKind::Exponential: {
      const double x = y[0], t = y[1], z = y[2];
      if (t > 0.0) return t * std::exp(x / t) - z;
      return std::max(-t, std::max(x, -z));
    }
    case ConeKind::PsdTriangle: {
      const int n = psd_dimension(y.size());
      Eigen::MatrixXd X(n, n);
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i <= j; ++i) {
          X(i, j) = X(j, i) = y[static_cast<std::size_t>(psd_triangle_index(i, j))];
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X, Eigen::EigenvaluesOnly);
      return -es.eigenvalues().minCoeff();
    }
  }
  return 0.0;
}

std::size_t minimum_rows(ConeKind kind) {
  switch (kind) {
    case ConeKind::SecondOrder: return 1;
    case ConeKind::RotatedSecondOrder: return 2;
    case ConeKind::Exponential: return 3;
    case ConeKind::PsdTriangle: return 1;
    default: return 1;
  }
}

}  // namespace

std::string to_string(ConeKind kind) {
  switch (kind) {
    case ConeKind::Zero: return "zero";
    case ConeKind::Nonnegative: return "nonnegative";
    case ConeKind::SecondOrder: return "soc";
    case ConeKind::RotatedSecondOrder: return "rsoc";
    case ConeKind::Exponential: return "exp";
    case ConeKind::PsdTriangle: return "psd";
  }
  return "unknown";
}

ConeKind parse_cone_kind(const std::string& name) {
  for (auto k : {ConeKind::Zero, ConeKind::Nonnegative, ConeKind::SecondOrder, ConeKind::RotatedSecondOrder,
                 ConeKind::Exponential, ConeKind::PsdTriangle}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown cone kind: " + name);
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Inaccurate: return "inaccurate";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::Error: return "error";
  }
  return "error";
}

AffineExpr AffineExpr::var(int index, double coeff) {
  AffineExpr e;
  e.add(index, coeff);
  return e;
}

AffineExpr& AffineExpr::add(int index, double coeff) {
  if (coeff != 0.0) terms_.emplace_back(index, coeff);
  return *this;
}

AffineExpr& AffineExpr::operator+=(const AffineExpr& other) {
  terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
  constant_ += other.constant_;
  return *this;
}

AffineExpr& AffineExpr::operator-=(const AffineExpr& other) {
  for (const auto& [i, a] : other.terms_) terms_.emplace_back(i, -a);
  constant_ -= other.constant_;
  return *this;
}

AffineExpr& AffineExpr::operator*=(double s) {
  for (auto& t : terms_) t.second *= s;
  constant_ *= s;
  return *this;
}

double AffineExpr::evaluate(const std::vector<double>& x) const {
  double v = constant_;
  for (const auto& [i, a] : terms_) v += a * x.at(static_cast<std::size_t>(i));
  return v;
}

AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
AffineExpr operator-(AffineExpr a, const AffineExpr& b) { return a -= b; }
AffineExpr operator+(AffineExpr a, double c) { return a += c; }
AffineExpr operator-(AffineExpr a, double c) { return a += -c; }
AffineExpr operator*(double s, AffineExpr a) { return a *= s; }

int ConicProgram::add_variable(std::string name) {
  names_.push_back(std::move(name));
  objective_.push_back(0.0);
  return num_variables() - 1;
}

int ConicProgram::add_variables(int count, const std::string& prefix) {
  const int first = num_variables();
  for (int i = 0; i < count; ++i) add_variable(prefix.empty() ? std::string{} : prefix + "[" + std::to_string(i) + "]");
  return first;
}

void ConicProgram::add_objective(int var, double coeff) { objective_.at(static_cast<std::size_t>(var)) += coeff; }

double ConicProgram::objective_value(const std::vector<double>& x) const {
  double v = objective_constant_;
  for (std::size_t i = 0; i < objective_.size(); ++i) v += objective_[i] * x.at(i);
  return v;
}

void ConicProgram::add_constraint(ConeKind kind, std::vector<AffineExpr> rows, std::string tag) {
  constraints_.push_back(ConeConstraint{kind, std::move(rows), std::move(tag)});
}

std::size_t ConicProgram::count_tag(const std::string& tag) const {
  return static_cast<std::size_t>(
      std::count_if(constraints_.begin(), constraints_.end(), [&](const ConeConstraint& c) { return c.tag == tag; }));
}

void ConicProgram::validate() const {
  const int n = num_variables();
  for (const auto& c : constraints_) {
    if (c.rows.size() < minimum_rows(c.kind)) throw std::invalid_argument("cone '" + c.tag + "' has too few rows");
    if (c.kind == ConeKind::Exponential && c.rows.size() != 3) {
      throw std::invalid_argument("exponential cone needs exactly 3 rows");
    }
    if (c.kind == ConeKind::PsdTriangle) psd_dimension(c.rows.size());
    for (const auto& row : c.rows) {
      for (const auto& [i, a] : row.terms()) {
        if (i < 0 || i >= n) throw std::invalid_argument("constraint '" + c.tag + "' references unknown variable");
        if (!std::isfinite(a)) throw std::invalid_argument("constraint '" + c.tag + "' has non-finite coefficient");
      }
      if (!std::isfinite(row.constant())) throw std::invalid_argument("constraint '" + c.tag + "' has non-finite constant");
    }
  }
  for (double c : objective_) {
    if (!std::isfinite(c)) throw std::invalid_argument("non-finite objective coefficient");
  }
}

int psd_triangle_size(int n) { return n * (n + 1) / 2; }

int psd_dimension(std::size_t rows) {
  int n = 0;
  while (static_cast<std::size_t>(psd_triangle_size(n)) < rows) ++n;
  if (static_cast<std::size_t>(psd_triangle_size(n)) != rows) {
    throw std::invalid_argument("PSD triangle row count is not triangular");
  }
  return n;
}

int psd_triangle_index(int i, int j) {
  if (i > j) std::swap(i, j);
  return j * (j + 1) / 2 + i;
}

std::vector<double> residuals(const ConicProgram& prog, const std::vector<double>& point) {
  if (point.size() != static_cast<std::size_t>(prog.num_variables())) {
    throw std::invalid_argument("residuals: point has wrong dimension");
  }
  std::vector<double> out;
  out.reserve(prog.constraints().size());
  std::vector<double> y;
  for (const auto& c : prog.constraints()) {
    y.clear();
    for (const auto& row : c.rows) y.push_back(row.evaluate(point));
    out.push_back(cone_residual(c, y));
  }
  return out;
}

double max_residual(const ConicProgram& prog, const std::vector<double>& point) {
  const auto r = residuals(prog, point);
  return r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
}

ProgramSolution ClarabelBackend::solve(const ConicProgram& prog, double tol) {
  prog.validate();
  ProgramSolution out;
  const auto n = static_cast<std::size_t>(prog.num_variables());

  // s = b - A x in K with A = -(coefficients), b = constants.
  std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;  // (col, row, value)
  std::vector<double> b;
  std::vector<std::int32_t> kinds;
  std::vector<std::size_t> dims;
  auto push_row = [&](const AffineExpr& e, double scale) {
    const std::size_t r = b.size();
    for (const auto& [i, a] : e.terms()) triplets.emplace_back(static_cast<std::size_t>(i), r, -scale * a);
    b.push_back(scale * e.constant());
  };
  for (const auto& c : prog.constraints()) {
    switch (c.kind) {
      case ConeKind::Zero:
      case ConeKind::Nonnegative:
      case ConeKind::SecondOrder:
        for (const auto& row : c.rows) push_row(row, 1.0);
        kinds.push_back(c.kind == ConeKind::Zero          ? kClarabelZero
                        : c.kind == ConeKind::Nonnegative ? kClarabelNonneg
                                                          : kClarabelSoc);
        dims.push_back(c.rows.size());
        break;
      case ConeKind::RotatedSecondOrder: {
        const double s = 1.0 / kSqrt2;
        push_row(s * (c.rows[0] + c.rows[1]), 1.0);
        push_row(s * (c.rows[0] - c.rows[1]), 1.0);
        for (std::size_t i = 2; i < c.rows.size(); ++i) push_row(c.rows[i], 1.0);
        kinds.push_back(kClarabelSoc);
        dims.push_back(c.rows.size());
        break;
      }
      case ConeKind::Exponential:
        for (const auto& row : c.rows) push_row(row, 1.0);
        kinds.push_back(kClarabelExp);
        dims.push_back(3);
        break;
      case ConeKind::PsdTriangle: {
        const int dim = psd_dimension(c.rows.size());
        for (int j = 0; j < dim; ++j) {
          for (int i = 0; i <= j; ++i) {
            push_row(c.rows[static_cast<std::size_t>(psd_triangle_index(i, j))], i == j ? 1.0 : kSqrt2);
          }
        }
        kinds.push_back(kClarabelPsdTriangle);
        dims.push_back(static_cast<std::size_t>(dim));
        break;
      }
    }
  }
  const std::size_t m = b.size();

  if (n == 0) {
    out.x.clear();
    out.objective = prog.objective_constant();
    out.status = max_residual(prog, {}) <= tol ? SolveStatus::Optimal : SolveStatus::Infeasible;
    return out;
  }

  std::sort(triplets.begin(), triplets.end());
  std::vector<std::size_t> colptr(n + 1, 0);
  std::vector<std::size_t> rowval;
  std::vector<double> nzval;
  for (std::size_t t = 0; t < triplets.size(); ++t) {
    const auto& [col, row, val] = triplets[t];
    if (!rowval.empty() && t > 0 && std::get<0>(triplets[t - 1]) == col && std::get<1>(triplets[t - 1]) == row) {
      nzval.back() += val;
      continue;
    }
    rowval.push_back(row);
    nzval.push_back(val);
    colptr[col + 1] += 1;
  }
  std::partial_sum(colptr.begin(), colptr.end(), colptr.begin());

  const ClarabelFfiSettings settings{tol, tol, tol, static_cast<std::uint32_t>(max_iter_), verbose_ ? 1 : 0};
  std::vector<double> s(m), z(m);
  out.x.assign(n, 0.0);
  ClarabelFfiResult res{};
  // Rust's slice constructors reject null pointers even for empty slices.
  static const double kDummy = 0.0;
  static const std::size_t kDummyIndex = 0;
  static const std::int32_t kDummyKind = 0;
  double s_dummy = 0.0, z_dummy = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  clarabel_ffi_solve(n, m, prog.objective().data(), colptr.data(), rowval.empty() ? &kDummyIndex : rowval.data(),
                     nzval.empty() ? &kDummy : nzval.data(), b.empty() ? &kDummy : b.data(), kinds.size(),
                     kinds.empty() ? &kDummyKind : kinds.data(), dims.empty() ? &kDummyIndex : dims.data(), &settings,
                     out.x.data(), s.empty() ? &s_dummy : s.data(), z.empty() ? &z_dummy : z.data(), &res);
  out.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.iterations = static_cast<int>(res.iterations);
  out.objective = prog.objective_value(out.x);
  switch (res.status) {
    case 0: out.status = SolveStatus::Optimal; break;
    case 1: out.status = SolveStatus::Inaccurate; break;
    case 2: out.status = SolveStatus::Infeasible; break;
    case 3: out.status = SolveStatus::Unbounded; break;
    default: out.status = SolveStatus::Error; break;
  }
  out.diagnostics = "clarabel status " + std::to_string(res.status) + ", r_prim " + std::to_string(res.r_prim) +
                    ", r_dual " + std::to_string(res.r_dual);
  if (out.usable()) {
    for (double v : out.x) {
      if (!std::isfinite(v)) {
        out.status = SolveStatus::Error;
        out.diagnostics += ", non-finite primal";
        break;
      }
    }
  }
  if (out.status == SolveStatus::Optimal) {
    double scale = 1.0;
    for (double v : b) scale = std::max(scale, std::abs(v));
    const double worst = max_residual(prog, out.x);
    if (worst > 10.0 * tol * scale) {
      out.status = SolveStatus::Inaccurate;
      out.diagnostics += ", cone residual " + std::to_string(worst);
    }
  }
  return out;
}

ProgramSolution RecordingBackend::solve(const ConicProgram& prog, double tol) {
  ProgramSolution sol = inner_.solve(prog, tol);
  std::lock_guard lock(mutex_);
  log_.push_back(sol);
  return sol;
}

std::vector<ProgramSolution> RecordingBackend::recorded() const {
  std::lock_guard lock(mutex_);
  return log_;
}

ProgramSolution ReplayBackend::solve(const ConicProgram& prog, double /*tol*/) {
  if (next_ >= tape_.size()) throw std::runtime_error("replay tape exhausted");
  ProgramSolution sol = tape_[next_++];
  if (sol.usable() && sol.x.size() != static_cast<std::size_t>(prog.num_variables())) {
    throw std::runtime_error("replayed solution does not match program dimension");
  }
  return sol;
}

std::unique_ptr<ConicBackend> make_default_backend() { return std::make_unique<ClarabelBackend>(); }

void to_json(nlohmann::json& j, const ConicProgram& prog) {
  nlohmann::json names = nlohmann::json::array();
  for (int i = 0; i < prog.num_variables(); ++i) names.push_back(prog.variable_name(i));
  nlohmann::json cons = nlohmann::json::array();
  for (const auto& c : prog.constraints()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : c.rows) {
      nlohmann::json terms = nlohmann::json::array();
      for (const auto& [i, a] : r.terms()) terms.push_back(nlohmann::json::array({i, a}));
      rows.push_back({{"terms", terms}, {"constant", r.constant()}});
    }
    cons.push_back({{"kind", to_string(c.kind)}, {"tag", c.tag}, {"rows", rows}});
  }
  j = nlohmann::json{{"variables", names},
                     {"objective", prog.objective()},
                     {"objective_constant", prog.objective_constant()},
                     {"constraints", cons}};
}

void from_json(const nlohmann::json& j, ConicProgram& prog) {
  prog = ConicProgram{};
  for (const auto& name : j.at("variables")) prog.add_variable(name.get<std::string>());
  const auto obj = j.at("objective").get<std::vector<double>>();
  if (obj.size() != static_cast<std::size_t>(prog.num_variables())) {
    throw std::invalid_argument("objective length does not match variable count");
  }
  for (std::size_t i = 0; i < obj.size(); ++i) prog.add_objective(static_cast<int>(i), obj[i]);
  prog.add_objective_constant(j.at("objective_constant").get<double>());
  for (const auto& c : j.at("constraints")) {
    std::vector<AffineExpr> rows;
    for (const auto& r : c.at("rows")) {
      AffineExpr e(r.at("constant").get<double>());
      for (const auto& t : r.at("terms")) e.add(t.at(0).get<int>(), t.at(1).get<double>());
      rows.push_back(std::move(e));
    }
    prog.add_constraint(parse_cone_kind(c.at("kind").get<std::string>()), std::move(rows),
                        c.at("tag").get<std::string>());
  }
  prog.validate();
}

void to_json(nlohmann::json& j, const ProgramSolution& sol) {
  j = nlohmann::json{{"x", sol.x},
                     {"objective", sol.objective},
                     {"status", to_string(sol.status)},
                     {"iterations", sol.iterations},
                     {"diagnostics", sol.diagnostics}};
}

void from_json(const nlohmann::json& j, ProgramSolution& sol) {
  sol = ProgramSolution{};
  sol.x = j.at("x").get<std::vector<double>>();
  sol.objective = j.at("objective").get<double>();
  const auto status = j.at("status").get<std::string>();
  for (auto s : {SolveStatus::Optimal, SolveStatus::Inaccurate, SolveStatus::Infeasible, SolveStatus::Unbounded,
                 SolveStatus::Error}) {
    if (to_string(s) == status) sol.status = s;
  }
  sol.iterations = j.value("iterations", 0);
  sol.diagnostics = j.value("diagnostics", std::string{});
}

}  // namespace wbcran::conic
