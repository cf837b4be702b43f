#include "wbcran/verify.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <thread>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "wbcran/seeding.hpp"

namespace wbcran::verify {

using conic::AffineExpr;
using conic::ConeKind;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct UserTerms {
  double signal = 0.0;
  double interference = 0.0;
};

UserTerms user_terms(int k, const BeamformerSet& W, const Instance& inst) {
  const auto uk = static_cast<std::size_t>(k);
  const CVector& h = inst.channels.access[uk];
  const int l = inst.groups.group_of_user[uk];
  UserTerms t;
  for (int j = 0; j < W.num_groups(); ++j) {
    const double g = std::norm(h.dot(W.w[static_cast<std::size_t>(j)]));
    if (j == l) {
      t.signal = g;
    } else {
      t.interference += g;
    }
  }
  return t;
}

// Hermitian n x n matrix X embedded as the real symmetric 2n x 2n
// Y = [[Re X, -Im X], [Im X, Re X]]; linear functionals tr(Q X) become
// tr(Q_hat Y) / 2.
struct HermitianVar {
  int base = -1;
  int n = 0;

  int entry(int i, int j) const { return base + conic::psd_triangle_index(std::min(i, j), std::max(i, j)); }
};

HermitianVar add_hermitian(conic::ConicProgram& prog, int n, const std::string& name) {
  HermitianVar h;
  h.n = n;
  const int dim = 2 * n;
  h.base = prog.add_variables(conic::psd_triangle_size(dim), name);
  std::vector<AffineExpr> rows;
  rows.reserve(static_cast<std::size_t>(conic::psd_triangle_size(dim)));
  for (int i = 0; i < conic::psd_triangle_size(dim); ++i) rows.push_back(AffineExpr::var(h.base + i));
  prog.add_constraint(ConeKind::PsdTriangle, std::move(rows), "psd-" + name);
  return h;
}

// tr(Q X) for Hermitian Q.
AffineExpr trace_form(const HermitianVar& X, const CMatrix& Q) {
  const int n = X.n;
  AffineExpr e;
  for (int i = 0; i < 2 * n; ++i) {
    for (int j = i; j < 2 * n; ++j) {
      const int bi = i % n;
      const int bj = j % n;
      const bool top_i = i < n;
      const bool top_j = j < n;
      double qhat = 0.0;
      if (top_i == top_j) {
        qhat = Q(bi, bj).real();
      } else if (!top_i && top_j) {
        qhat = Q(bi, bj).imag();
      } else {
        qhat = -Q(bi, bj).imag();
      }
      if (qhat == 0.0) continue;
      e.add(X.entry(i, j), i == j ? 0.5 * qhat : qhat);
    }
  }
  return e;
}

AffineExpr trace_of(const HermitianVar& X, const std::vector<int>& rows_subset) {
  AffineExpr e;
  for (int i : rows_subset) {
    e.add(X.entry(i, i), 0.5);
    e.add(X.entry(i + X.n, i + X.n), 0.5);
  }
  return e;
}

CMatrix recover_hermitian(const HermitianVar& X, const std::vector<double>& x) {
  const int n = X.n;
  auto y = [&](int i, int j) { return x[static_cast<std::size_t>(X.entry(i, j))]; };
  CMatrix out(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double re = 0.5 * (y(i, j) + y(i + n, j + n));
      const double im = 0.5 * (y(i + n, j) - y(i, j + n));
      out(i, j) = Complex(re, im);
    }
  }
  return 0.5 * (out + out.adjoint());
}

Complex complex_normal(Rng& rng) {
  const double re = standard_normal(rng);
  const double im = standard_normal(rng);
  return {re / std::sqrt(2.0), im / std::sqrt(2.0)};
}

// Principal direction first, then `count` Gaussian draws with covariance X.
std::vector<CVector> candidate_directions(const CMatrix& X, int count, Rng& rng) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(X);
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  const CMatrix& U = es.eigenvectors();
  std::vector<CVector> out;
  out.push_back(U.col(U.cols() - 1) * std::sqrt(std::max(lambda[lambda.size() - 1], 0.0)));
  const CMatrix factor = U * lambda.cwiseSqrt().asDiagonal();
  for (int s = 0; s < count; ++s) {
    CVector z(X.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = complex_normal(rng);
    out.push_back(factor * z);
  }
  return out;
}

struct AccessModel {
  std::vector<std::vector<int>> support;  // per group, indices into the stacked M N_s vector
  std::vector<CVector> h;                 // per user, noise-normalized
};

AccessModel access_model(const Instance& inst, const Clustering& C) {
  const int ns = inst.cfg.sbs_antennas;
  AccessModel am;
  am.support.resize(static_cast<std::size_t>(inst.num_groups()));
  for (int l = 0; l < inst.num_groups(); ++l) {
    for (int m = 0; m < inst.num_sbs(); ++m) {
      if (!C.at(m, l)) continue;
      for (int a = 0; a < ns; ++a) am.support[static_cast<std::size_t>(l)].push_back(m * ns + a);
    }
  }
  const double amp = std::sqrt(inst.channels.noise_user);
  for (const auto& h : inst.channels.access) am.h.push_back(h / amp);
  return am;
}

CVector restrict_to(const CVector& full, const std::vector<int>& idx) {
  CVector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = full[idx[i]];
  return out;
}

struct AccessRelaxation {
  double lower = kInf;
  bool solved = false;
  std::vector<CMatrix> X;
};

AccessRelaxation solve_access_relaxation(const Instance& inst, const AccessModel& am, conic::ConicBackend& backend,
                                         double tol) {
  const int L = inst.num_groups();
  const int ns = inst.cfg.sbs_antennas;
  const double gamma = inst.gamma();
  conic::ConicProgram prog;
  std::vector<HermitianVar> X(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const auto& idx = am.support[static_cast<std::size_t>(l)];
    if (idx.empty()) return {};
    X[static_cast<std::size_t>(l)] = add_hermitian(prog, static_cast<int>(idx.size()), "X" + std::to_string(l));
  }
  // objective through an epigraph variable so the PSD blocks stay pure
  const int t = prog.add_variable("t");
  prog.add_objective(t, 1.0);
  AffineExpr cost = AffineExpr::var(t);
  for (int l = 0; l < L; ++l) {
    const auto& idx = am.support[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double eta = inst.cfg.eta_of(idx[i] / ns + 1);
      const AffineExpr d = trace_of(X[static_cast<std::size_t>(l)], {static_cast<int>(i)});
      cost -= eta * d;
    }
  }
  prog.add_constraint(ConeKind::Nonnegative, {cost}, "objective-epigraph");

  for (int k = 0; k < inst.num_users(); ++k) {
    const int l = inst.groups.group_of_user[static_cast<std::size_t>(k)];
    AffineExpr row(-1.0);
    for (int j = 0; j < L; ++j) {
      const CVector hj = restrict_to(am.h[static_cast<std::size_t>(k)], am.support[static_cast<std::size_t>(j)]);
      const CMatrix Q = hj * hj.adjoint();
      const AffineExpr tr = trace_form(X[static_cast<std::size_t>(j)], Q);
      if (j == l) {
        row += (1.0 / gamma) * tr;
      } else {
        row -= tr;
      }
    }
    prog.add_constraint(ConeKind::Nonnegative, {row}, "sinr");
  }
  for (int m = 0; m < inst.num_sbs(); ++m) {
    AffineExpr cap(inst.cfg.sbs_power_cap);
    bool any = false;
    for (int l = 0; l < L; ++l) {
      const auto& idx = am.support[static_cast<std::size_t>(l)];
      std::vector<int> local;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] / ns == m) local.push_back(static_cast<int>(i));
      }
      if (local.empty()) continue;
      any = true;
      cap -= trace_of(X[static_cast<std::size_t>(l)], local);
    }
    if (any) prog.add_constraint(ConeKind::Nonnegative, {cap}, "sbs-power");
  }

  const conic::ProgramSolution sol = backend.solve(prog, tol);
  AccessRelaxation out;
  if (sol.status == conic::SolveStatus::Infeasible) return out;
  if (!sol.usable()) {
    // transmit power is nonnegative, which is all we can certify here
    out.lower = 0.0;
    return out;
  }
  out.solved = true;
  out.lower = std::max(0.0, sol.objective * (1.0 - 1e-7));
  for (int l = 0; l < L; ++l) out.X.push_back(recover_hermitian(X[static_cast<std::size_t>(l)], sol.x));
  return out;
}

// Minimal group powers for fixed directions (standard interference
// function iteration); nullopt when they diverge.
std::optional<std::vector<double>> fixed_direction_powers(const Instance& inst, const AccessModel& am,
                                                          const std::vector<CVector>& dirs,
                                                          const std::vector<double>& targets) {
  const int L = inst.num_groups();
  const int K = inst.num_users();
  Eigen::MatrixXd g(K, L);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < L; ++j) {
      const CVector hj = restrict_to(am.h[static_cast<std::size_t>(k)], am.support[static_cast<std::size_t>(j)]);
      g(k, j) = std::norm(hj.dot(dirs[static_cast<std::size_t>(j)]));
    }
  }
  std::vector<double> p(static_cast<std::size_t>(L), 0.0);
  for (int it = 0; it < 5000; ++it) {
    std::vector<double> next(static_cast<std::size_t>(L), 0.0);
    for (int k = 0; k < K; ++k) {
      const int l = inst.groups.group_of_user[static_cast<std::size_t>(k)];
      if (g(k, l) <= 0.0) return std::nullopt;
      double interference = 1.0;
      for (int j = 0; j < L; ++j) {
        if (j != l) interference += p[static_cast<std::size_t>(j)] * g(k, j);
      }
      const double gamma = targets[static_cast<std::size_t>(l)];
      next[static_cast<std::size_t>(l)] = std::max(next[static_cast<std::size_t>(l)], gamma * interference / g(k, l));
    }
    double change = 0.0;
    for (int l = 0; l < L; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      if (!std::isfinite(next[ul]) || next[ul] > 1e15) return std::nullopt;
      change = std::max(change, std::abs(next[ul] - p[ul]) / std::max(next[ul], 1e-300));
    }
    p = std::move(next);
    if (change < 1e-14) return p;
  }
  return std::nullopt;
}

struct AccessWitness {
  std::vector<CVector> w;  // full stacked vectors
  double cost = kInf;
};

AccessWitness randomize_access(const Instance& inst, const AccessModel& am, const AccessRelaxation& relax,
                               int samples, Rng& rng) {
  const int L = inst.num_groups();
  const int ns = inst.cfg.sbs_antennas;
  std::vector<std::vector<CVector>> cands;
  for (int l = 0; l < L; ++l) cands.push_back(candidate_directions(relax.X[static_cast<std::size_t>(l)], samples, rng));

  AccessWitness best;
  for (int s = 0; s <= samples; ++s) {
    std::vector<CVector> dirs;
    bool degenerate = false;
    for (int l = 0; l < L; ++l) {
      CVector d = cands[static_cast<std::size_t>(l)][static_cast<std::size_t>(s)];
      if (d.norm() == 0.0) degenerate = true;
      dirs.push_back(d.norm() > 0.0 ? CVector(d / d.norm()) : d);
    }
    if (degenerate) continue;
    const auto p = fixed_direction_powers(inst, am, dirs, std::vector<double>(static_cast<std::size_t>(L), inst.gamma()));
    if (!p) continue;
    std::vector<double> per_sbs(static_cast<std::size_t>(inst.num_sbs()), 0.0);
    double cost = 0.0;
    std::vector<CVector> w;
    for (int l = 0; l < L; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      const auto& idx = am.support[ul];
      CVector full = CVector::Zero(inst.num_sbs() * ns);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        full[idx[i]] = std::sqrt((*p)[ul]) * dirs[ul][static_cast<Eigen::Index>(i)];
        const double pw = std::norm(full[idx[i]]);
        per_sbs[static_cast<std::size_t>(idx[i] / ns)] += pw;
        cost += inst.cfg.eta_of(idx[i] / ns + 1) * pw;
      }
      w.push_back(std::move(full));
    }
    bool within_caps = true;
    for (double pw : per_sbs) within_caps = within_caps && pw <= inst.cfg.sbs_power_cap;
    if (within_caps && cost < best.cost) {
      best.cost = cost;
      best.w = std::move(w);
    }
  }
  return best;
}

struct BackhaulRelaxation {
  double lower = kInf;
  bool solved = false;
  std::vector<CMatrix> V;  // per backhauled group, in `groups` order
};

// min eta_0 sum tr V_l  s.t.  tr(H_m H_m^H V_l) / z^2 >= 2^(r / b_l) - 1 for
// m in S_l^B, sum tr V_l <= P_0.
BackhaulRelaxation solve_backhaul_relaxation(const Instance& inst, const ServingSets& sets,
                                             const std::vector<int>& groups, const std::vector<double>& b,
                                             conic::ConicBackend& backend, double tol) {
  const int nm = inst.cfg.mbs_antennas;
  conic::ConicProgram prog;
  std::vector<HermitianVar> V;
  std::vector<int> all(static_cast<std::size_t>(nm));
  for (int i = 0; i < nm; ++i) all[static_cast<std::size_t>(i)] = i;
  const int t = prog.add_variable("t");
  prog.add_objective(t, inst.cfg.eta_of(0));
  AffineExpr epi = AffineExpr::var(t);
  AffineExpr cap(inst.cfg.mbs_power_cap);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    V.push_back(add_hermitian(prog, nm, "V" + std::to_string(groups[g])));
    epi -= trace_of(V.back(), all);
    cap -= trace_of(V.back(), all);
    const double need = std::exp2(inst.cfg.rate_target / b[g]) - 1.0;
    if (!std::isfinite(need)) return {};
    for (int m : sets.backhaul[static_cast<std::size_t>(groups[g])]) {
      const CMatrix& H = inst.channels.backhaul[static_cast<std::size_t>(m)];
      const CMatrix Q = H * H.adjoint() / inst.channels.noise_sbs;
      prog.add_constraint(ConeKind::Nonnegative, {trace_form(V.back(), Q) - need}, "backhaul-snr");
    }
  }
  prog.add_constraint(ConeKind::Nonnegative, {epi}, "objective-epigraph");
  prog.add_constraint(ConeKind::Nonnegative, {cap}, "mbs-power");

  const conic::ProgramSolution sol = backend.solve(prog, tol);
  BackhaulRelaxation out;
  if (sol.status == conic::SolveStatus::Infeasible) return out;
  if (!sol.usable()) {
    out.lower = 0.0;
    return out;
  }
  out.solved = true;
  out.lower = std::max(0.0, sol.objective * (1.0 - 1e-7));
  for (const auto& v : V) out.V.push_back(recover_hermitian(v, sol.x));
  return out;
}

struct BackhaulWitness {
  std::vector<CVector> v;
  std::vector<double> b;
  double cost = kInf;
};

BackhaulWitness randomize_backhaul(const Instance& inst, const ServingSets& sets, const std::vector<int>& groups,
                                   const std::vector<double>& b, const BackhaulRelaxation& relax, int samples,
                                   Rng& rng) {
  BackhaulWitness out;
  out.b = b;
  double total = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double need = std::exp2(inst.cfg.rate_target / b[g]) - 1.0;
    CVector best;
    double best_power = kInf;
    for (const CVector& d : candidate_directions(relax.V[g], samples, rng)) {
      if (d.norm() == 0.0) continue;
      const CVector u = d / d.norm();
      double worst = kInf;
      for (int m : sets.backhaul[static_cast<std::size_t>(groups[g])]) worst = std::min(worst, bl_snr(m, u, inst.channels));
      if (worst <= 0.0) continue;
      // a hair above the threshold so rounding cannot undercut the rate
      const double power = need / worst * (1.0 + 1e-12);
      if (power < best_power) {
        best_power = power;
        best = std::sqrt(power) * u;
      }
    }
    if (!std::isfinite(best_power)) return {};
    out.v.push_back(best);
    total += best_power;
  }
  if (total > inst.cfg.mbs_power_cap) return {};
  out.cost = inst.cfg.eta_of(0) * total;
  return out;
}

std::uint64_t clustering_key(const Clustering& C) {
  std::uint64_t key = 0;
  for (int l = 0; l < C.num_groups(); ++l) {
    for (int m = 0; m < C.num_sbs(); ++m) key = key * 2 + (C.at(m, l) ? 1 : 0);
  }
  return key;
}

}  // namespace

double sbs_transmit_power(const BeamformerSet& W) {
  double p = 0.0;
  for (const auto& w : W.w) p += w.squaredNorm();
  return p;
}

ScaledSet scale_to_tightness(const BeamformerSet& W, const Instance& inst) {
  W.validate(inst);
  const double gamma = inst.gamma();
  const double noise = inst.channels.noise_user;
  double a = 0.0;
  for (int k = 0; k < inst.num_users(); ++k) {
    const UserTerms t = user_terms(k, W, inst);
    const double margin = t.signal / gamma - t.interference;
    if (!(t.signal > gamma * (t.interference + noise))) {
      throw std::invalid_argument("scale_to_tightness: user " + std::to_string(k) +
                                  " is not strictly above its SINR target; use iterative_tightening");
    }
    a = std::max(a, noise / margin);
  }
  ScaledSet out;
  out.a = a;
  out.W = W;
  for (auto& w : out.W.w) w *= std::sqrt(a);
  return out;
}

TighteningResult iterative_tightening(const BeamformerSet& W, const Instance& inst, int max_rounds, double tol) {
  W.validate(inst);
  if (max_rounds < 0 || tol <= 0.0) throw std::invalid_argument("iterative_tightening: bad limits");
  const int L = inst.num_groups();
  const double gamma = inst.gamma();
  const double noise = inst.channels.noise_user;

  TighteningResult out;
  out.W = W;
  out.power_trace.push_back(sbs_transmit_power(W));
  for (int l = 0; l < L; ++l) {
    if (min_group_sinr(l, W, inst.channels, inst.groups) < gamma * (1.0 - 1e-12)) {
      throw std::invalid_argument("iterative_tightening: group " + std::to_string(l) + " starts below target");
    }
  }

  while (true) {
    std::vector<bool> slack(static_cast<std::size_t>(L), false);
    bool any = false;
    out.residual = 0.0;
    for (int l = 0; l < L; ++l) {
      const double gap = min_group_sinr(l, out.W, inst.channels, inst.groups) / gamma - 1.0;
      out.residual = std::max(out.residual, gap);
      if (gap > tol) {
        slack[static_cast<std::size_t>(l)] = true;
        any = true;
      }
    }
    if (!any) {
      out.converged = true;
      return out;
    }
    if (out.rounds >= max_rounds) return out;

    // Smallest common factor on the slack set that keeps all its members
    // at or above target; groups outside the set only gain.
    double a = 0.0;
    for (int k = 0; k < inst.num_users(); ++k) {
      const auto uk = static_cast<std::size_t>(k);
      const int l = inst.groups.group_of_user[uk];
      if (!slack[static_cast<std::size_t>(l)]) continue;
      const CVector& h = inst.channels.access[uk];
      double signal = 0.0, slack_interf = 0.0, tight_interf = 0.0;
      for (int j = 0; j < L; ++j) {
        const double g = std::norm(h.dot(out.W.w[static_cast<std::size_t>(j)]));
        if (j == l) {
          signal = g;
        } else if (slack[static_cast<std::size_t>(j)]) {
          slack_interf += g;
        } else {
          tight_interf += g;
        }
      }
      a = std::max(a, gamma * (tight_interf + noise) / (signal - gamma * slack_interf));
    }
    const double s = std::sqrt(a);
    for (int l = 0; l < L; ++l) {
      if (slack[static_cast<std::size_t>(l)]) out.W.w[static_cast<std::size_t>(l)] *= s;
    }
    ++out.rounds;
    out.power_trace.push_back(sbs_transmit_power(out.W));
  }
}

FixedClusterBounds sdr_bounds(const Instance& inst, const Clustering& C, conic::ConicBackend& backend,
                              const SdrOptions& opts) {
  if (C.num_sbs() != inst.num_sbs() || C.num_groups() != inst.num_groups()) {
    throw std::invalid_argument("sdr_bounds: clustering shape does not match instance");
  }
  if (opts.grid_step <= 0.0 || opts.grid_step >= 1.0 || opts.randomizations < 0) {
    throw std::invalid_argument("sdr_bounds: bad options");
  }
  FixedClusterBounds out;
  const AccessModel am = access_model(inst, C);
  const AccessRelaxation access = solve_access_relaxation(inst, am, backend, opts.solver_tol);
  if (!std::isfinite(access.lower)) return out;

  const ServingSets sets = uncached_serving_sets(C, inst.cache, inst.groups);
  const std::vector<int>& bh = sets.backhauled_groups;
  if (bh.size() > 2) throw std::invalid_argument("sdr_bounds: bandwidth grid supports at most two backhauled groups");

  const double fixed_terms = total_power(BeamformerSet::zeros(inst), C, inst.cache, inst.groups, inst.cfg).total;
  Rng rng(derive_seed(opts.seed, {clustering_key(C), static_cast<std::uint64_t>(inst.num_groups())}));

  // lower bound over bandwidth cells; upper bound on grid points
  double backhaul_lower = 0.0;
  BackhaulWitness backhaul_best;
  if (bh.empty()) {
    backhaul_best.cost = 0.0;
  } else if (bh.size() == 1) {
    const auto relax = solve_backhaul_relaxation(inst, sets, bh, {1.0}, backend, opts.solver_tol);
    backhaul_lower = relax.lower;
    if (relax.solved) backhaul_best = randomize_backhaul(inst, sets, bh, {1.0}, relax, opts.randomizations, rng);
  } else {
    const int cells = static_cast<int>(std::lround(1.0 / opts.grid_step));
    backhaul_lower = kInf;
    for (int i = 0; i < cells; ++i) {
      const double lo = i * opts.grid_step;
      const double hi = std::min(1.0, (i + 1) * opts.grid_step);
      const auto relax = solve_backhaul_relaxation(inst, sets, bh, {hi, 1.0 - lo}, backend, opts.solver_tol);
      backhaul_lower = std::min(backhaul_lower, relax.lower);
    }
    for (int i = 1; i < cells; ++i) {
      const double t = i * opts.grid_step;
      const std::vector<double> b{t, 1.0 - t};
      const auto relax = solve_backhaul_relaxation(inst, sets, bh, b, backend, opts.solver_tol);
      if (!relax.solved) continue;
      auto cand = randomize_backhaul(inst, sets, bh, b, relax, opts.randomizations, rng);
      if (cand.cost < backhaul_best.cost) backhaul_best = std::move(cand);
    }
  }
  if (!std::isfinite(backhaul_lower)) return out;
  out.lower = fixed_terms + access.lower + backhaul_lower;

  if (!access.solved || !std::isfinite(backhaul_best.cost)) return out;
  const AccessWitness aw = randomize_access(inst, am, access, opts.randomizations, rng);
  if (!std::isfinite(aw.cost)) return out;

  BeamformerSet W = BeamformerSet::zeros(inst);
  W.w = aw.w;
  for (std::size_t g = 0; g < bh.size(); ++g) {
    W.v[static_cast<std::size_t>(bh[g])] = backhaul_best.v[g];
    W.b[static_cast<std::size_t>(bh[g])] = backhaul_best.b[g];
  }
  const FeasibilityReport audit = check_p0_feasibility(W, C, inst, opts.audit_tol);
  if (!audit.feasible) return out;
  out.upper = total_power(W, C, inst.cache, inst.groups, inst.cfg).total;
  out.witness = std::move(W);
  return out;
}

double sdr_lower_bound(const Instance& inst, const Clustering& C, conic::ConicBackend& backend,
                       const SdrOptions& opts) {
  return sdr_bounds(inst, C, backend, opts).lower;
}

PerClusterSolver sdr_cluster_solver(const SdrOptions& opts) {
  return [opts](const Instance& inst, const Clustering& C) {
    conic::ClarabelBackend backend;
    return sdr_bounds(inst, C, backend, opts);
  };
}

OracleResult brute_force_small(const Instance& inst, const PerClusterSolver& solver, int threads) {
  const int M = inst.num_sbs();
  const int L = inst.num_groups();
  if (M * L > 12) throw std::invalid_argument("brute_force_small: M * L must be at most 12");
  if (threads < 1) throw std::invalid_argument("brute_force_small: threads must be >= 1");
  const std::size_t total = std::size_t{1} << (M * L);

  std::vector<ClusterRecord> records(total);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t mask = next++; mask < total; mask = next++) {
      ClusterRecord rec;
      rec.clustering = Clustering(M, L);
      for (int l = 0; l < L; ++l) {
        for (int m = 0; m < M; ++m) rec.clustering.set(m, l, ((mask >> (l * M + m)) & 1U) != 0);
      }
      for (int l = 0; l < L && !rec.skipped; ++l) {
        bool served = false;
        for (int m = 0; m < M; ++m) served = served || rec.clustering.at(m, l);
        rec.skipped = !served;
      }
      if (!rec.skipped) {
        try {
          const FixedClusterBounds b = solver(inst, rec.clustering);
          rec.lower = b.lower;
          rec.upper = b.upper;
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
      records[mask] = std::move(rec);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  OracleResult out;
  for (const auto& rec : records) {
    if (rec.skipped) continue;
    out.global_lower = std::min(out.global_lower, rec.lower);
    if (rec.upper < out.best_upper) {
      out.best_upper = rec.upper;
      out.best = rec.clustering;
    }
  }
  out.records = std::move(records);
  return out;
}

Instance tiny_instance(std::uint64_t seed, int num_users, CacheStrategy strategy) {
  SystemConfig cfg = SystemConfig::desk();
  cfg.num_sbs = 2;
  cfg.num_users = num_users;
  cfg.sbs_antennas = 1;
  cfg.mbs_antennas = 2;
  cfg.num_files = 3;
  cfg.cache_capacity = 1;
  cfg.radius = 100.0;
  for (std::uint64_t attempt = 0;; ++attempt) {
    Instance inst = make_instance(cfg, strategy, derive_seed(seed, {0x71e9ULL, attempt}));
    if (inst.num_groups() <= 2) return inst;
  }
}

BeamformerSet random_feasible_beamformers(const Instance& inst, std::uint64_t seed, bool all_slack) {
  const int L = inst.num_groups();
  Rng rng(derive_seed(seed, "random-beamformers"));
  const AccessModel am = access_model(inst, Clustering::all_ones(inst.num_sbs(), L));
  std::vector<bool> slack(static_cast<std::size_t>(L), true);
  if (!all_slack && L > 1) {
    bool any_slack = false, any_tight = false;
    while (!any_slack || !any_tight) {
      any_slack = any_tight = false;
      for (int l = 0; l < L; ++l) {
        slack[static_cast<std::size_t>(l)] = uniform01(rng) < 0.5;
        (slack[static_cast<std::size_t>(l)] ? any_slack : any_tight) = true;
      }
    }
  }
  std::vector<double> targets;
  for (int l = 0; l < L; ++l) {
    const double margin = slack[static_cast<std::size_t>(l)] ? 0.01 + 0.99 * uniform01(rng) : 0.0;
    targets.push_back(inst.gamma() * (1.0 + margin));
  }
  const int n = inst.num_sbs() * inst.cfg.sbs_antennas;
  // Matched filter projected away from the other groups' users, plus a
  // random leak so the groups still interfere.
  double leak = 0.3;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    if (attempt > 0 && attempt % 50 == 0) leak *= 0.5;
    std::vector<CVector> dirs;
    for (int l = 0; l < L; ++l) {
      CVector mf = CVector::Zero(n);
      for (int k : inst.groups.members[static_cast<std::size_t>(l)]) {
        const CVector& h = am.h[static_cast<std::size_t>(k)];
        const double phi = 2.0 * 3.14159265358979323846 * uniform01(rng);
        mf += Complex(std::cos(phi), std::sin(phi)) * h / h.norm();
      }
      std::vector<int> others;
      for (int k = 0; k < inst.num_users(); ++k) {
        if (inst.groups.group_of_user[static_cast<std::size_t>(k)] != l) others.push_back(k);
      }
      CVector d = mf;
      if (!others.empty()) {
        CMatrix Hn(n, static_cast<Eigen::Index>(others.size()));
        for (std::size_t i = 0; i < others.size(); ++i) {
          Hn.col(static_cast<Eigen::Index>(i)) = am.h[static_cast<std::size_t>(others[i])];
        }
        const Eigen::HouseholderQR<CMatrix> qr(Hn);
        const CMatrix Q = qr.householderQ() * CMatrix::Identity(n, Hn.cols());
        d = mf - Q * (Q.adjoint() * mf);
      }
      CVector noise(n);
      for (int i = 0; i < n; ++i) noise[i] = complex_normal(rng);
      if (d.norm() == 0.0) d = noise;
      d = d / d.norm() + leak * noise / noise.norm();
      dirs.push_back(d / d.norm());
    }
    const auto p = fixed_direction_powers(inst, am, dirs, targets);
    if (!p) continue;
    BeamformerSet W = BeamformerSet::zeros(inst);
    // a hair above the fixed point so rounding cannot leave a group short
    for (int l = 0; l < L; ++l) {
      W.w[static_cast<std::size_t>(l)] = std::sqrt((*p)[static_cast<std::size_t>(l)] * (1.0 + 1e-10)) * dirs[static_cast<std::size_t>(l)];
    }
    return W;
  }
  throw std::runtime_error("random_feasible_beamformers: no feasible direction draw");
}

std::vector<ComparisonRow> differential_suite(std::uint64_t seed, int count, conic::ConicBackend& backend,
                                              const ccp::CcpOptions& opts, int threads) {
  std::vector<ComparisonRow> rows;
  const PerClusterSolver solver = sdr_cluster_solver();
  for (std::uint64_t i = 0; static_cast<int>(rows.size()) < count; ++i) {
    if (i > 100000) throw std::runtime_error("differential_suite: too few feasible tiny instances");
    const std::uint64_t s = derive_seed(seed, {0xd1ffULL, i});
    const Instance inst = tiny_instance(s, 2 + static_cast<int>(i % 2));
    const OracleResult oracle = brute_force_small(inst, solver, threads);
    if (!oracle.feasible()) continue;
    ccp::CcpOptions o = opts;
    o.mode = ccp::Mode::Proposed;
    const ccp::Solution sol = ccp::solve(inst, o, backend, s);
    ComparisonRow row;
    row.seed = s;
    row.groups = inst.num_groups();
    row.ccp_converged = sol.status == ccp::Status::Converged;
    row.ccp_power = sol.status == ccp::Status::Infeasible ? kInf : sol.power.total;
    row.oracle_lower = oracle.global_lower;
    row.oracle_upper = oracle.best_upper;
    rows.push_back(row);
  }
  return rows;
}

void to_json(nlohmann::json& j, const OracleResult& r) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& rec : r.records) {
    recs.push_back({{"clustering", rec.clustering},
                    {"skipped", rec.skipped},
                    {"lower", num(rec.lower)},
                    {"upper", num(rec.upper)}});
  }
  j = nlohmann::json{{"feasible", r.feasible()},
                     {"best_upper", num(r.best_upper)},
                     {"global_lower", num(r.global_lower)},
                     {"best", r.best ? nlohmann::json(*r.best) : nlohmann::json(nullptr)},
                     {"records", recs}};
}

void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
  os << "seed,groups,ccp_converged,ccp_power,oracle_lower,oracle_upper,ratio_to_upper\n";
  os.precision(12);
  for (const auto& r : rows) {
    os << r.seed << ',' << r.groups << ',' << (r.ccp_converged ? 1 : 0) << ',' << r.ccp_power << ',' << r.oracle_lower
       << ',' << r.oracle_upper << ',' << r.ccp_power / r.oracle_upper << '\n';
  }
}

}  // namespace wbcran::verify
