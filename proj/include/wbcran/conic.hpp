#pragma once

// Backend-neutral conic programs: a linear objective minimized over affine
// expressions constrained to products of zero, nonnegative, second-order,
// rotated second-order, exponential and PSD cones.

#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace wbcran::conic {

enum class ConeKind {
  Zero,                // y == 0
  Nonnegative,         // y >= 0
  SecondOrder,         // y0 >= |y_1:|
  RotatedSecondOrder,  // 2 y0 y1 >= |y_2:|^2, y0, y1 >= 0
  Exponential,         // y1 exp(y0 / y1) <= y2, y1 > 0 (closure)
  PsdTriangle,         // upper triangle, column-major, of a symmetric PSD matrix
};

std::string to_string(ConeKind kind);
ConeKind parse_cone_kind(const std::string& name);

// sum_i coeff_i * x[var_i] + constant
class AffineExpr {
 public:
  AffineExpr() = default;
  explicit AffineExpr(double constant) : constant_(constant) {}

  static AffineExpr var(int index, double coeff = 1.0);

  AffineExpr& add(int index, double coeff);
  AffineExpr& operator+=(const AffineExpr& other);
  AffineExpr& operator-=(const AffineExpr& other);
  AffineExpr& operator+=(double c) {
    constant_ += c;
    return *this;
  }
  AffineExpr& operator*=(double s);

  const std::vector<std::pair<int, double>>& terms() const { return terms_; }
  double constant() const { return constant_; }
  double evaluate(const std::vector<double>& x) const;

  bool operator==(const AffineExpr&) const = default;

 private:
  std::vector<std::pair<int, double>> terms_;
  double constant_ = 0.0;
};

AffineExpr operator+(AffineExpr a, const AffineExpr& b);
AffineExpr operator-(AffineExpr a, const AffineExpr& b);
AffineExpr operator+(AffineExpr a, double c);
AffineExpr operator-(AffineExpr a, double c);
AffineExpr operator*(double s, AffineExpr a);

struct ConeConstraint {
  ConeKind kind = ConeKind::Nonnegative;
  std::vector<AffineExpr> rows;
  std::string tag;  // origin of the constraint, e.g. "sinr", "backhaul-rate"

  bool operator==(const ConeConstraint&) const = default;
};

class ConicProgram {
 public:
  int add_variable(std::string name = {});
  // Returns the index of the first of `count` consecutive variables.
  int add_variables(int count, const std::string& prefix = {});
  int num_variables() const { return static_cast<int>(names_.size()); }
  const std::string& variable_name(int i) const { return names_.at(static_cast<std::size_t>(i)); }

  void add_objective(int var, double coeff);
  void add_objective_constant(double c) { objective_constant_ += c; }
  const std::vector<double>& objective() const { return objective_; }
  double objective_constant() const { return objective_constant_; }
  double objective_value(const std::vector<double>& x) const;

  void add_constraint(ConeKind kind, std::vector<AffineExpr> rows, std::string tag = {});
  const std::vector<ConeConstraint>& constraints() const { return constraints_; }
  std::size_t count_tag(const std::string& tag) const;

  // Throws std::invalid_argument on out-of-range variables or bad cone sizes.
  void validate() const;

  bool operator==(const ConicProgram&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<double> objective_;
  double objective_constant_ = 0.0;
  std::vector<ConeConstraint> constraints_;
};

// Number of rows a PSD triangle of an n x n matrix needs, and the inverse.
int psd_triangle_size(int n);
int psd_dimension(std::size_t rows);
// Row index of entry (i, j), i <= j, in the column-major upper triangle.
int psd_triangle_index(int i, int j);

enum class SolveStatus { Optimal, Inaccurate, Infeasible, Unbounded, Error };

std::string to_string(SolveStatus s);

struct ProgramSolution {
  std::vector<double> x;
  double objective = 0.0;
  SolveStatus status = SolveStatus::Error;
  double solve_time = 0.0;
  int iterations = 0;
  std::string diagnostics;

  bool usable() const { return status == SolveStatus::Optimal || status == SolveStatus::Inaccurate; }
};

// Cone-membership residual of every constraint at `point`: <= 0 when the
// constraint holds, otherwise the size of the violation.
std::vector<double> residuals(const ConicProgram& prog, const std::vector<double>& point);
double max_residual(const ConicProgram& prog, const std::vector<double>& point);

class ConicBackend {
 public:
  virtual ~ConicBackend() = default;
  virtual ProgramSolution solve(const ConicProgram& prog, double tol) = 0;
  virtual std::string name() const = 0;
};

// Interior-point solver (Clarabel) behind the C ABI in third_party/.
class ClarabelBackend final : public ConicBackend {
 public:
  explicit ClarabelBackend(int max_iter = 200, bool verbose = false) : max_iter_(max_iter), verbose_(verbose) {}
  ProgramSolution solve(const ConicProgram& prog, double tol) override;
  std::string name() const override { return "clarabel"; }

 private:
  int max_iter_;
  bool verbose_;
};

// Forwards to another backend and keeps every solution it returns.
class RecordingBackend final : public ConicBackend {
 public:
  explicit RecordingBackend(ConicBackend& inner) : inner_(inner) {}
  ProgramSolution solve(const ConicProgram& prog, double tol) override;
  std::string name() const override { return "recording(" + inner_.name() + ")"; }
  std::vector<ProgramSolution> recorded() const;

 private:
  ConicBackend& inner_;
  mutable std::mutex mutex_;
  std::vector<ProgramSolution> log_;
};

// Replays recorded solutions in order; fails if a program's variable count
// does not match the recording or the tape runs out.
class ReplayBackend final : public ConicBackend {
 public:
  explicit ReplayBackend(std::vector<ProgramSolution> tape) : tape_(std::move(tape)) {}
  ProgramSolution solve(const ConicProgram& prog, double tol) override;
  std::string name() const override { return "replay"; }
  std::size_t consumed() const { return next_; }

 private:
  std::vector<ProgramSolution> tape_;
  std::size_t next_ = 0;
};

std::unique_ptr<ConicBackend> make_default_backend();

void to_json(nlohmann::json& j, const ConicProgram& prog);
void from_json(const nlohmann::json& j, ConicProgram& prog);
void to_json(nlohmann::json& j, const ProgramSolution& sol);
void from_json(const nlohmann::json& j, ProgramSolution& sol);

}  // namespace wbcran::conic
