#pragma once

// Joint clustering / multicast beamforming / backhaul bandwidth design by a
// smoothed l0 surrogate and the convex-concave procedure.
//
// Each outer iteration majorizes the concave log surrogate by its tangent,
// replaces the concave parts of the SINR and backhaul-SNR constraints by
// their affine minorants at the current iterate, and solves the resulting
// conic program. Infeasible linearizations are absorbed by penalized slacks.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "wbcran/conic.hpp"
#include "wbcran/model.hpp"
#include "wbcran/scenario.hpp"

namespace wbcran::ccp {

enum class Mode { Proposed, NoSC, NoCacheNoSC };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

// ln(1 + x / sigma) / ln(1 + 1 / sigma)
double smoothed_l0(double x, double sigma);

// Linearization constants, each M x L.
struct CcpCoefficients {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd q;
  Eigen::MatrixXd nu;
  Eigen::MatrixXd zeta;
  Eigen::MatrixXd pi;
};

CcpCoefficients linearize(const BeamformerSet& iterate, const CachePlacement& cache, const GroupStructure& groups,
                          const SystemConfig& cfg, double sigma);

struct CcpOptions {
  Mode mode = Mode::Proposed;
  double sigma_smooth = 1e-3;
  int max_iters = 50;
  double rel_obj_tol = 1e-3;
  double constraint_tol = 1e-6;
  double clustering_threshold = 1e-6;
  double b_min = 1e-4;
  double slack_weight = 1e3;
  double slack_growth = 10.0;
  double slack_weight_max = 1e5;
  bool polish = true;
  int polish_max_iters = 50;
  double polish_rel_tol = 1e-6;
  int init_retries = 3;
  int init_max_iters = 30;
  // Run the unweighted initialization CCP to convergence instead of stopping
  // at the first slack-free iterate.
  bool init_to_convergence = true;
  double nocache_mbs_power = 200.0;
  int anneal_rounds = 0;  // each extra round restarts with sigma / 10
  double backend_tol = 1e-9;

  void validate() const;
};

void to_json(nlohmann::json& j, const CcpOptions& o);
void from_json(const nlohmann::json& j, CcpOptions& o);

enum class BackhaulForm {
  Smoothed,  // zeta (theta |w|^2 + q) / b <= log2(1 + psi)
  Exact,     // c (1 - s) r / b <= log2(1 + psi) for a fixed clustering
};

// Which convex program an outer iteration builds.
struct Formulation {
  BackhaulForm backhaul = BackhaulForm::Smoothed;
  bool sparsity_weights = true;       // pi instead of eta on |w_ml|^2
  std::optional<Clustering> support;  // required for Exact; zero blocks are dropped
  bool fixed_bandwidth = false;       // pin b to the iterate's values
  double slack_weight = 0.0;          // 0 disables slacks
};

// Variable offsets of one subproblem; -1 marks an absent variable.
struct VariableLayout {
  std::vector<std::vector<int>> w;  // [l][m] -> first of 2*N_s reals (re, im interleaved)
  std::vector<int> v;               // [l] -> first of 2*N_m reals
  std::vector<int> b;               // [l]
  std::vector<int> sinr_slack;      // [k]
  std::vector<std::vector<int>> backhaul_slack;  // [l][m]
};

struct Subproblem {
  conic::ConicProgram program;
  VariableLayout layout;
  double objective_offset = 0.0;  // constant dropped from the program (sum nu * q)
};

Subproblem assemble_subproblem(const CcpCoefficients& coeffs, const BeamformerSet& iterate, const Instance& inst,
                               const Formulation& form, const CcpOptions& opts);

BeamformerSet decode_iterate(const Subproblem& sub, const std::vector<double>& x, const Instance& inst);
double max_slack(const Subproblem& sub, const std::vector<double>& x);

// Worst violation of the (non-convexified) constraints the formulation
// linearizes, evaluated exactly at W: SINR, backhaul in the formulation's
// form, power caps and bandwidth. A point with zero violation keeps the
// next linearization feasible without slacks.
double self_audit(const BeamformerSet& W, const Instance& inst, const Formulation& form, const CcpOptions& opts);

// Objective the majorizer is tight to: transmit power plus the smoothed
// decoding-power surrogate when sparsity weights are on.
double surrogate_objective(const BeamformerSet& W, const Instance& inst, const Formulation& form,
                           const CcpOptions& opts);

enum class Status { Converged, IterLimit, Infeasible };
std::string to_string(Status s);

struct TraceRecord {
  std::string phase;
  int iteration = 0;
  double objective = 0.0;
  double max_slack = 0.0;
  std::vector<double> group_sinr_gap;  // min member SINR / gamma - 1
};

struct Solution {
  Mode mode = Mode::Proposed;
  Status status = Status::Infeasible;
  BeamformerSet beamformers;
  Clustering clustering;
  PowerBreakdown power;
  std::vector<double> user_sinr;
  std::vector<double> group_rate;
  Eigen::MatrixXd backhaul_rate;             // M x L
  std::vector<double> objective_history;     // entry 0 is the starting point
  std::vector<double> polish_history;
  std::vector<TraceRecord> trace;
  FeasibilityReport feasibility;
  int iterations = 0;
  int polish_iterations = 0;
  int backhauled_groups = 0;
  std::string message;
};

void to_json(nlohmann::json& j, const Solution& s);
void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace);

class InfeasibleInstance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Feasible starting point for the formulation selected by opts.mode: full
// clustering, equal backhaul bandwidth and SINR constraints linearized at a
// random-phase matched filter. Throws InfeasibleInstance after the retry
// budget.
BeamformerSet initialize(const Instance& inst, std::uint64_t seed, conic::ConicBackend& backend,
                         const CcpOptions& opts = {});

// c_ml = 1 iff |w_ml|^2 > eps * max |w|^2. Blocks below the threshold are
// zeroed in W. Throws std::invalid_argument when W is entirely zero.
Clustering recover_clustering(BeamformerSet& W, int num_sbs, int sbs_antennas, double eps);

// Proposed algorithm from a given starting point.
Solution ccp_solve(const Instance& inst, const BeamformerSet& init, const CcpOptions& opts,
                   conic::ConicBackend& backend);

// "No SC" (all SBSs serve every group) and "No C&SC" (additionally no
// caching and a raised MBS power budget).
Solution run_baseline(const Instance& inst, Mode mode, const CcpOptions& opts, conic::ConicBackend& backend,
                      std::uint64_t seed = 0);

// Dispatches on opts.mode, including initialization.
Solution solve(const Instance& inst, const CcpOptions& opts, conic::ConicBackend& backend, std::uint64_t seed = 0);

// Instance as seen by a mode (No C&SC empties the caches and raises P_0).
Instance instance_for_mode(const Instance& inst, Mode mode, const CcpOptions& opts);

}  // namespace wbcran::ccp
