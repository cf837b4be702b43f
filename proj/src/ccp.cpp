#include "wbcran/ccp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "wbcran/seeding.hpp"

namespace wbcran::ccp {

using conic::AffineExpr;
using conic::ConeKind;

namespace {

constexpr double kPi = 3.14159265358979323846;
const double kLn2 = std::log(2.0);

// Re and Im of a^T x, where x is a complex vector stored as interleaved
// (re, im) variables starting at `base`.
void accumulate_complex_linear(const CVector& a, int base, AffineExpr& re, AffineExpr& im) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const int xr = base + 2 * static_cast<int>(i);
    const int xi = xr + 1;
    const double ar = a[i].real();
    const double ai = a[i].imag();
    re.add(xr, ar).add(xi, -ai);
    im.add(xi, ar).add(xr, ai);
  }
}

void push_reals(std::vector<AffineExpr>& rows, int base, int count) {
  for (int i = 0; i < count; ++i) rows.push_back(AffineExpr::var(base + i));
}

bool block_present(const Formulation& form, int m, int l) { return !form.support || form.support->at(m, l); }

bool needs_backhaul_block(const Formulation& form, const CcpCoefficients& coeffs, const Instance& inst, int m,
                          int l) {
  if (form.backhaul == BackhaulForm::Smoothed) return coeffs.zeta(m, l) > 0.0;
  return form.support->at(m, l) && inst.uncached(m, l);
}

CVector dominant_direction(const CMatrix& H) {
  Eigen::JacobiSVD<CMatrix> svd(H, Eigen::ComputeThinU);
  return svd.matrixU().col(0);
}

Complex random_phase(Rng& rng) {
  const double phi = 2.0 * kPi * uniform01(rng);
  return {std::cos(phi), std::sin(phi)};
}

std::vector<double> group_sinr_gaps(const BeamformerSet& W, const Instance& inst) {
  std::vector<double> gaps;
  for (int l = 0; l < inst.num_groups(); ++l) {
    gaps.push_back(min_group_sinr(l, W, inst.channels, inst.groups) / inst.gamma() - 1.0);
  }
  return gaps;
}

struct PhaseControl {
  std::string name;
  int max_iters = 50;
  double rel_tol = 1e-3;
  bool stop_when_feasible = false;
};

struct PhaseOutcome {
  BeamformerSet iterate;
  std::vector<double> history;
  int iterations = 0;
  bool converged = false;
  bool failed = false;
  double slack = std::numeric_limits<double>::infinity();
  std::string message;
};

PhaseOutcome run_phase(const Instance& inst, const BeamformerSet& start, const Formulation& form,
                       const CcpOptions& opts, const PhaseControl& ctl, double sigma, conic::ConicBackend& backend,
                       std::vector<TraceRecord>& trace) {
  PhaseOutcome out;
  out.iterate = start;
  CcpOptions local = opts;
  local.sigma_smooth = sigma;
  out.history.push_back(surrogate_objective(start, inst, form, local));
  double weight = form.slack_weight;

  for (int it = 1; it <= ctl.max_iters; ++it) {
    const CcpCoefficients coeffs = linearize(out.iterate, inst.cache, inst.groups, inst.cfg, sigma);
    Formulation f = form;
    f.slack_weight = weight;
    const Subproblem sub = assemble_subproblem(coeffs, out.iterate, inst, f, local);
    const conic::ProgramSolution sol = backend.solve(sub.program, opts.backend_tol);
    if (!sol.usable()) {
      out.failed = true;
      out.message = ctl.name + " iteration " + std::to_string(it) + ": backend returned " +
                    conic::to_string(sol.status) + " (" + sol.diagnostics + ")";
      break;
    }
    out.iterate = decode_iterate(sub, sol.x, inst);
    out.slack = max_slack(sub, sol.x);
    const double value = sol.objective + sub.objective_offset;
    out.history.push_back(value);
    out.iterations = it;
    trace.push_back(TraceRecord{ctl.name, it, value, out.slack, group_sinr_gaps(out.iterate, inst)});

    const bool feasible = out.slack <= opts.constraint_tol;
    if (ctl.stop_when_feasible && feasible) {
      out.converged = true;
      break;
    }
    const double prev = out.history[out.history.size() - 2];
    if (feasible && std::abs(value - prev) <= ctl.rel_tol * std::max(std::abs(prev), 1e-12)) {
      out.converged = true;
      break;
    }
    if (!feasible && weight > 0.0) weight = std::min(weight * opts.slack_growth, opts.slack_weight_max);
  }
  return out;
}

std::vector<bool> groups_uncached_somewhere(const Instance& inst) {
  std::vector<bool> needs(static_cast<std::size_t>(inst.num_groups()), false);
  for (int l = 0; l < inst.num_groups(); ++l) {
    for (int m = 0; m < inst.num_sbs(); ++m) {
      if (inst.uncached(m, l)) needs[static_cast<std::size_t>(l)] = true;
    }
  }
  return needs;
}

// Scales v_l so every SBS in `sbs_set` sees at least `margin` times the SNR
// needed for rate r at bandwidth b_l. A zero v_l gets a matched direction.
void scale_backhaul_beam(BeamformerSet& W, int l, const std::vector<int>& sbs_set, const Instance& inst,
                         double margin, Rng* rng) {
  const auto ul = static_cast<std::size_t>(l);
  if (sbs_set.empty()) return;
  if (W.v[ul].squaredNorm() == 0.0) {
    CVector dir = CVector::Zero(inst.cfg.mbs_antennas);
    for (int m : sbs_set) {
      const Complex phase = rng ? random_phase(*rng) : Complex(1.0, 0.0);
      dir += phase * dominant_direction(inst.channels.backhaul[static_cast<std::size_t>(m)]);
    }
    if (dir.squaredNorm() == 0.0) dir = dominant_direction(inst.channels.backhaul[static_cast<std::size_t>(sbs_set[0])]);
    W.v[ul] = dir.normalized();
  }
  const double need = std::exp2(inst.cfg.rate_target / W.b[ul]) - 1.0;
  double worst = std::numeric_limits<double>::infinity();
  for (int m : sbs_set) worst = std::min(worst, bl_snr(m, W.v[ul], inst.channels));
  if (worst > 0.0 && std::isfinite(need)) W.v[ul] *= std::sqrt(margin * need / worst);
}

BeamformerSet matched_filter_start(const Instance& inst, Rng& rng) {
  const int M = inst.num_sbs();
  const int L = inst.num_groups();
  const int ns = inst.cfg.sbs_antennas;
  const double gamma = inst.gamma();
  const double noise = inst.channels.noise_user;
  BeamformerSet W = BeamformerSet::zeros(inst);

  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    CVector w = CVector::Zero(M * ns);
    for (int k : inst.groups.members[ul]) {
      const CVector& h = inst.channels.access[static_cast<std::size_t>(k)];
      w += random_phase(rng) * h / h.norm();
    }
    if (w.squaredNorm() == 0.0) w = inst.channels.access[static_cast<std::size_t>(inst.groups.members[ul][0])];
    double weakest = std::numeric_limits<double>::infinity();
    for (int k : inst.groups.members[ul]) {
      weakest = std::min(weakest, std::norm(inst.channels.access[static_cast<std::size_t>(k)].dot(w)));
    }
    // interference-free SINR of (L + 1) gamma for the weakest member
    if (weakest > 0.0) w *= std::sqrt((L + 1.0) * gamma * noise / weakest);
    W.w[ul] = w;
  }
  double worst_ratio = 0.0;
  for (int m = 0; m < M; ++m) {
    double p = 0.0;
    for (int l = 0; l < L; ++l) p += W.block_power(m, l, ns);
    worst_ratio = std::max(worst_ratio, p / inst.cfg.sbs_power_cap);
  }
  if (worst_ratio > 0.5) {
    for (auto& w : W.w) w *= std::sqrt(0.5 / worst_ratio);
  }

  const auto needs = groups_uncached_somewhere(inst);
  const auto backhauled = std::count(needs.begin(), needs.end(), true);
  double pv = 0.0;
  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    if (!needs[ul]) continue;
    W.b[ul] = 1.0 / static_cast<double>(backhauled);
    std::vector<int> sbs_set;
    for (int m = 0; m < M; ++m) {
      if (inst.uncached(m, l)) sbs_set.push_back(m);
    }
    scale_backhaul_beam(W, l, sbs_set, inst, 2.0, &rng);
    pv += W.v[ul].squaredNorm();
  }
  if (pv > 0.9 * inst.cfg.mbs_power_cap) {
    for (auto& v : W.v) v *= std::sqrt(0.9 * inst.cfg.mbs_power_cap / pv);
  }
  return W;
}

// Fully cached single group: scale a matched filter until the weakest
// member meets its SINR target exactly.
std::optional<BeamformerSet> analytic_single_group_start(const Instance& inst) {
  if (inst.num_groups() != 1) return std::nullopt;
  for (int m = 0; m < inst.num_sbs(); ++m) {
    if (inst.uncached(m, 0)) return std::nullopt;
  }
  BeamformerSet W = BeamformerSet::zeros(inst);
  CVector w = CVector::Zero(inst.num_sbs() * inst.cfg.sbs_antennas);
  for (int k : inst.groups.members[0]) {
    const CVector& h = inst.channels.access[static_cast<std::size_t>(k)];
    w += h / h.norm();
  }
  double scale2 = 0.0;
  for (int k : inst.groups.members[0]) {
    const double g = std::norm(inst.channels.access[static_cast<std::size_t>(k)].dot(w));
    if (g == 0.0) return std::nullopt;
    scale2 = std::max(scale2, inst.gamma() * inst.channels.noise_user / g);
  }
  W.w[0] = std::sqrt(scale2) * w;
  for (int m = 0; m < inst.num_sbs(); ++m) {
    if (W.block_power(m, 0, inst.cfg.sbs_antennas) > inst.cfg.sbs_power_cap) return std::nullopt;
  }
  return W;
}

Formulation initialization_form(const Instance& inst, const CcpOptions& opts) {
  Formulation form;
  form.sparsity_weights = false;
  form.fixed_bandwidth = true;
  form.slack_weight = opts.slack_weight;
  if (opts.mode == Mode::Proposed) {
    form.backhaul = BackhaulForm::Smoothed;
  } else {
    form.backhaul = BackhaulForm::Exact;
    form.support = Clustering::all_ones(inst.num_sbs(), inst.num_groups());
  }
  return form;
}

Solution finalize(const Instance& inst, Mode mode, BeamformerSet W, Clustering C, const CcpOptions& opts) {
  Solution s;
  s.mode = mode;
  s.beamformers = std::move(W);
  s.clustering = std::move(C);
  s.power = total_power(s.beamformers, s.clustering, inst.cache, inst.groups, inst.cfg);
  for (int k = 0; k < inst.num_users(); ++k) {
    s.user_sinr.push_back(access_sinr(k, s.beamformers, inst.channels, inst.groups));
  }
  for (int l = 0; l < inst.num_groups(); ++l) {
    s.group_rate.push_back(al_group_rate(l, s.beamformers, inst.channels, inst.groups));
  }
  s.backhaul_rate = Eigen::MatrixXd::Zero(inst.num_sbs(), inst.num_groups());
  for (int l = 0; l < inst.num_groups(); ++l) {
    const auto ul = static_cast<std::size_t>(l);
    for (int m = 0; m < inst.num_sbs(); ++m) {
      s.backhaul_rate(m, l) = bl_rate(m, s.beamformers.v[ul], s.beamformers.b[ul], inst.channels);
    }
  }
  s.backhauled_groups =
      static_cast<int>(uncached_serving_sets(s.clustering, inst.cache, inst.groups).backhauled_groups.size());
  s.feasibility = check_p0_feasibility(s.beamformers, s.clustering, inst, opts.constraint_tol);
  return s;
}

Solution infeasible_solution(const Instance& inst, Mode mode, std::string message) {
  Solution s;
  s.mode = mode;
  s.status = Status::Infeasible;
  s.beamformers = BeamformerSet::zeros(inst);
  s.clustering = Clustering(inst.num_sbs(), inst.num_groups());
  s.backhaul_rate = Eigen::MatrixXd::Zero(inst.num_sbs(), inst.num_groups());
  s.message = std::move(message);
  return s;
}

void append_trace(Solution& s, std::vector<TraceRecord>& trace) {
  s.trace.insert(s.trace.end(), trace.begin(), trace.end());
  trace.clear();
}

Status phase_status(const PhaseOutcome& ph, double tol) {
  if (ph.failed || ph.slack > tol) return Status::Infeasible;
  return ph.converged ? Status::Converged : Status::IterLimit;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Proposed: return "proposed";
    case Mode::NoSC: return "no-sc";
    case Mode::NoCacheNoSC: return "no-cache";
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  if (name == "proposed") return Mode::Proposed;
  if (name == "no-sc" || name == "nosc") return Mode::NoSC;
  if (name == "no-cache" || name == "nocache" || name == "no-c-sc") return Mode::NoCacheNoSC;
  throw std::invalid_argument("unknown mode: " + name);
}

std::string to_string(Status s) {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::IterLimit: return "iter-limit";
    case Status::Infeasible: return "infeasible";
  }
  return "unknown";
}

double smoothed_l0(double x, double sigma) {
  if (x < 0.0) throw std::invalid_argument("smoothed_l0 needs x >= 0");
  if (sigma <= 0.0) throw std::invalid_argument("smoothed_l0 needs sigma > 0");
  return std::log1p(x / sigma) / std::log1p(1.0 / sigma);
}

CcpCoefficients linearize(const BeamformerSet& iterate, const CachePlacement& cache, const GroupStructure& groups,
                          const SystemConfig& cfg, double sigma) {
  const int M = cfg.num_sbs;
  const int L = groups.size();
  if (iterate.num_groups() != L) throw std::invalid_argument("linearize: iterate has wrong group count");
  const double denom = std::log1p(1.0 / sigma);
  CcpCoefficients c;
  c.theta.resize(M, L);
  c.q.resize(M, L);
  c.nu.resize(M, L);
  c.zeta.resize(M, L);
  c.pi.resize(M, L);
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < M; ++m) {
      const double p = iterate.block_power(m, l, cfg.sbs_antennas);
      const double theta = 1.0 / (p + sigma);
      const double uncached = cache.cached(m, groups.group_file[static_cast<std::size_t>(l)]) ? 0.0 : 1.0;
      c.theta(m, l) = theta;
      // ln(1+t) >= t/(1+t) makes q nonnegative; clamp rounding noise.
      c.q(m, l) = std::max(0.0, std::log1p(p / sigma) - theta * p);
      c.nu(m, l) = uncached * cfg.decode_power / denom;
      c.zeta(m, l) = uncached * cfg.rate_target / denom;
      c.pi(m, l) = cfg.eta_of(m + 1) + c.nu(m, l) * theta;
    }
  }
  return c;
}

void CcpOptions::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid CcpOptions: ") + what);
  };
  require(sigma_smooth > 0.0, "sigma_smooth must be > 0");
  require(max_iters >= 1, "max_iters must be >= 1");
  require(rel_obj_tol > 0.0, "rel_obj_tol must be > 0");
  require(constraint_tol > 0.0, "constraint_tol must be > 0");
  require(clustering_threshold > 0.0, "clustering_threshold must be > 0");
  require(b_min > 0.0 && b_min < 1.0, "b_min must be in (0, 1)");
  require(slack_weight >= 0.0 && slack_growth >= 1.0 && slack_weight_max >= slack_weight, "bad slack schedule");
  require(polish_max_iters >= 1 && polish_rel_tol > 0.0, "bad polish settings");
  require(init_retries >= 1 && init_max_iters >= 1, "bad initialization budget");
  require(nocache_mbs_power > 0.0, "nocache_mbs_power must be > 0");
  require(anneal_rounds >= 0, "anneal_rounds must be >= 0");
  require(backend_tol > 0.0, "backend_tol must be > 0");
}

void to_json(nlohmann::json& j, const CcpOptions& o) {
  j = nlohmann::json{{"mode", to_string(o.mode)},
                     {"sigma_smooth", o.sigma_smooth},
                     {"max_iters", o.max_iters},
                     {"rel_obj_tol", o.rel_obj_tol},
                     {"constraint_tol", o.constraint_tol},
                     {"clustering_threshold", o.clustering_threshold},
                     {"b_min", o.b_min},
                     {"slack_weight", o.slack_weight},
                     {"slack_growth", o.slack_growth},
                     {"slack_weight_max", o.slack_weight_max},
                     {"polish", o.polish},
                     {"polish_max_iters", o.polish_max_iters},
                     {"polish_rel_tol", o.polish_rel_tol},
                     {"init_retries", o.init_retries},
                     {"init_max_iters", o.init_max_iters},
                     {"init_to_convergence", o.init_to_convergence},
                     {"nocache_mbs_power", o.nocache_mbs_power},
                     {"anneal_rounds", o.anneal_rounds},
                     {"backend_tol", o.backend_tol}};
}

void from_json(const nlohmann::json& j, CcpOptions& o) {
  o = CcpOptions{};
  if (j.contains("mode")) o.mode = parse_mode(j.at("mode").get<std::string>());
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("sigma_smooth", o.sigma_smooth);
  opt("max_iters", o.max_iters);
  opt("rel_obj_tol", o.rel_obj_tol);
  opt("constraint_tol", o.constraint_tol);
  opt("clustering_threshold", o.clustering_threshold);
  opt("b_min", o.b_min);
  opt("slack_weight", o.slack_weight);
  opt("slack_growth", o.slack_growth);
  opt("slack_weight_max", o.slack_weight_max);
  opt("polish", o.polish);
  opt("polish_max_iters", o.polish_max_iters);
  opt("polish_rel_tol", o.polish_rel_tol);
  opt("init_retries", o.init_retries);
  opt("init_max_iters", o.init_max_iters);
  opt("init_to_convergence", o.init_to_convergence);
  opt("nocache_mbs_power", o.nocache_mbs_power);
  opt("anneal_rounds", o.anneal_rounds);
  opt("backend_tol", o.backend_tol);
}

Subproblem assemble_subproblem(const CcpCoefficients& coeffs, const BeamformerSet& iterate, const Instance& inst,
                               const Formulation& form, const CcpOptions& opts) {
  const int M = inst.num_sbs();
  const int L = inst.num_groups();
  const int K = inst.num_users();
  const int ns = inst.cfg.sbs_antennas;
  const int nm = inst.cfg.mbs_antennas;
  iterate.validate(inst);
  if (coeffs.theta.rows() != M || coeffs.theta.cols() != L) {
    throw std::invalid_argument("assemble_subproblem: coefficient shape does not match instance");
  }
  if (form.backhaul == BackhaulForm::Exact && !form.support) {
    throw std::invalid_argument("assemble_subproblem: exact backhaul form needs a fixed clustering");
  }
  if (form.support && (form.support->num_sbs() != M || form.support->num_groups() != L)) {
    throw std::invalid_argument("assemble_subproblem: clustering shape does not match instance");
  }
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < M; ++m) {
      if (coeffs.q(m, l) < 0.0) throw std::invalid_argument("assemble_subproblem: negative q coefficient");
    }
  }

  // Linearization point restricted to the blocks that exist.
  BeamformerSet point = iterate;
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < M; ++m) {
      if (!block_present(form, m, l)) point.set_block(m, l, ns, CVector::Zero(ns));
    }
  }

  Subproblem sub;
  auto& P = sub.program;
  auto& lay = sub.layout;

  lay.w.assign(static_cast<std::size_t>(L), std::vector<int>(static_cast<std::size_t>(M), -1));
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < M; ++m) {
      if (block_present(form, m, l)) {
        lay.w[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)] =
            P.add_variables(2 * ns, "w" + std::to_string(m) + "_" + std::to_string(l));
      }
    }
  }

  std::vector<std::vector<bool>> bh(static_cast<std::size_t>(L), std::vector<bool>(static_cast<std::size_t>(M), false));
  lay.v.assign(static_cast<std::size_t>(L), -1);
  lay.b.assign(static_cast<std::size_t>(L), -1);
  for (int l = 0; l < L; ++l) {
    bool any = false;
    for (int m = 0; m < M; ++m) {
      const bool need = needs_backhaul_block(form, coeffs, inst, m, l);
      bh[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)] = need;
      any = any || need;
    }
    if (any) {
      lay.v[static_cast<std::size_t>(l)] = P.add_variables(2 * nm, "v" + std::to_string(l));
      lay.b[static_cast<std::size_t>(l)] = P.add_variable("b" + std::to_string(l));
    }
  }

  // objective epigraphs: t >= |x|^2 as (t, 1/2, x) in the rotated cone
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < M; ++m) {
      const int base = lay.w[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)];
      if (base < 0) continue;
      const int t = P.add_variable("tw" + std::to_string(m) + "_" + std::to_string(l));
      P.add_objective(t, form.sparsity_weights ? coeffs.pi(m, l) : inst.cfg.eta_of(m + 1));
      std::vector<AffineExpr> rows{AffineExpr::var(t), AffineExpr(0.5)};
      push_reals(rows, base, 2 * ns);
      P.add_constraint(ConeKind::RotatedSecondOrder, std::move(rows), "objective-epigraph");
    }
    const int vbase = lay.v[static_cast<std::size_t>(l)];
    if (vbase >= 0) {
      const int t = P.add_variable("tv" + std::to_string(l));
      P.add_objective(t, inst.cfg.eta_of(0));
      std::vector<AffineExpr> rows{AffineExpr::var(t), AffineExpr(0.5)};
      push_reals(rows, vbase, 2 * nm);
      P.add_constraint(ConeKind::RotatedSecondOrder, std::move(rows), "objective-epigraph");
    }
  }
  if (form.sparsity_weights) {
    for (int l = 0; l < L; ++l) {
      for (int m = 0; m < M; ++m) sub.objective_offset += coeffs.nu(m, l) * coeffs.q(m, l);
    }
  }

  // penalized slacks
  lay.sinr_slack.assign(static_cast<std::size_t>(K), -1);
  lay.backhaul_slack.assign(static_cast<std::size_t>(L), std::vector<int>(static_cast<std::size_t>(M), -1));
  std::vector<AffineExpr> slack_rows;
  if (form.slack_weight > 0.0) {
    for (int k = 0; k < K; ++k) {
      const int s = P.add_variable("slack_sinr" + std::to_string(k));
      lay.sinr_slack[static_cast<std::size_t>(k)] = s;
      P.add_objective(s, form.slack_weight);
      slack_rows.push_back(AffineExpr::var(s));
    }
    for (int l = 0; l < L; ++l) {
      for (int m = 0; m < M; ++m) {
        if (!bh[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)]) continue;
        const int s = P.add_variable("slack_bh" + std::to_string(m) + "_" + std::to_string(l));
        lay.backhaul_slack[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)] = s;
        P.add_objective(s, form.slack_weight);
        slack_rows.push_back(AffineExpr::var(s));
      }
    }
    P.add_constraint(ConeKind::Nonnegative, std::move(slack_rows), "slack-nonneg");
  }

  // SINR, noise-normalized:
  //   gamma (sum_{j != l} |h^H w_j|^2 + 1) <= 2 Re{w0^H h h^H w_l} - |h^H w0|^2
  const double gamma = inst.gamma();
  const double noise_amp = std::sqrt(inst.channels.noise_user);
  for (int k = 0; k < K; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const int l = inst.groups.group_of_user[uk];
    const auto ul = static_cast<std::size_t>(l);
    const CVector h = inst.channels.access[uk] / noise_amp;
    const Complex c0 = h.dot(point.w[ul]);
    const CVector a = std::conj(c0) * h.conjugate();

    AffineExpr re, im;
    for (int m = 0; m < M; ++m) {
      const int base = lay.w[ul][static_cast<std::size_t>(m)];
      if (base >= 0) accumulate_complex_linear(a.segment(m * ns, ns), base, re, im);
    }
    AffineExpr affine = 2.0 * re - std::norm(c0);
    if (lay.sinr_slack[uk] >= 0) affine.add(lay.sinr_slack[uk], 1.0);

    std::vector<AffineExpr> interference;
    const CVector hc = h.conjugate();
    for (int j = 0; j < L; ++j) {
      if (j == l) continue;
      AffineExpr jr, ji;
      bool any = false;
      for (int m = 0; m < M; ++m) {
        const int base = lay.w[static_cast<std::size_t>(j)][static_cast<std::size_t>(m)];
        if (base < 0) continue;
        accumulate_complex_linear(hc.segment(m * ns, ns), base, jr, ji);
        any = true;
      }
      if (any) {
        interference.push_back(std::move(jr));
        interference.push_back(std::move(ji));
      }
    }
    if (interference.empty()) {
      P.add_constraint(ConeKind::Nonnegative, {affine - gamma}, "sinr");
    } else {
      std::vector<AffineExpr> rows{(1.0 / gamma) * affine - 1.0, AffineExpr(0.5)};
      for (auto& e : interference) rows.push_back(std::move(e));
      P.add_constraint(ConeKind::RotatedSecondOrder, std::move(rows), "sinr");
    }
  }

  // per-SBS and MBS power caps
  for (int m = 0; m < M; ++m) {
    std::vector<AffineExpr> rows{AffineExpr(std::sqrt(inst.cfg.sbs_power_cap))};
    for (int l = 0; l < L; ++l) {
      const int base = lay.w[static_cast<std::size_t>(l)][static_cast<std::size_t>(m)];
      if (base >= 0) push_reals(rows, base, 2 * ns);
    }
    if (rows.size() > 1) P.add_constraint(ConeKind::SecondOrder, std::move(rows), "sbs-power");
  }
  {
    std::vector<AffineExpr> rows{AffineExpr(std::sqrt(inst.cfg.mbs_power_cap))};
    for (int l = 0; l < L; ++l) {
      const int base = lay.v[static_cast<std::size_t>(l)];
      if (base >= 0) push_reals(rows, base, 2 * nm);
    }
    if (rows.size() > 1) P.add_constraint(ConeKind::SecondOrder, std::move(rows), "mbs-power");
  }

  // bandwidth simplex over groups that use the backhaul
  {
    AffineExpr simplex(1.0);
    bool any = false;
    for (int l = 0; l < L; ++l) {
      const int b = lay.b[static_cast<std::size_t>(l)];
      if (b < 0) continue;
      any = true;
      simplex.add(b, -1.0);
      if (form.fixed_bandwidth) {
        const double fixed = iterate.b[static_cast<std::size_t>(l)];
        if (fixed < opts.b_min) throw std::invalid_argument("assemble_subproblem: pinned bandwidth below b_min");
        P.add_constraint(ConeKind::Zero, {AffineExpr::var(b) - fixed}, "bandwidth-fixed");
      } else {
        P.add_constraint(ConeKind::Nonnegative, {AffineExpr::var(b) - opts.b_min}, "bandwidth-floor");
      }
    }
    if (any) P.add_constraint(ConeKind::Nonnegative, {simplex}, "bandwidth-simplex");
  }

  // backhaul blocks
  const double bl_noise_amp = std::sqrt(inst.channels.noise_sbs);
  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    for (int m = 0; m < M; ++m) {
      if (!bh[ul][static_cast<std::size_t>(m)]) continue;
      const std::string id = std::to_string(m) + "_" + std::to_string(l);
      const CMatrix H = inst.channels.backhaul[static_cast<std::size_t>(m)] / bl_noise_amp;
      const CVector c0 = H.adjoint() * point.v[ul];
      const CVector a = (H * c0).conjugate();

      // psi <= 2 Re{v0^H H H^H v} - |H^H v0|^2
      const int psi = P.add_variable("psi" + id);
      AffineExpr re, im;
      accumulate_complex_linear(a, lay.v[ul], re, im);
      P.add_constraint(ConeKind::Nonnegative, {2.0 * re - c0.squaredNorm() - AffineExpr::var(psi)}, "backhaul-snr");

      // rho <= ln(1 + psi)
      const int rho = P.add_variable("rho" + id);
      P.add_constraint(ConeKind::Exponential, {AffineExpr::var(rho), AffineExpr(1.0), AffineExpr::var(psi) + 1.0},
                       "backhaul-log");

      double quad_coeff = 0.0;
      double hyper_const = 0.0;
      if (form.backhaul == BackhaulForm::Smoothed) {
        quad_coeff = coeffs.zeta(m, l) * coeffs.theta(m, l);
        hyper_const = coeffs.zeta(m, l) * coeffs.q(m, l);
      } else {
        hyper_const = inst.cfg.rate_target;
      }
      const AffineExpr half_b = 0.5 * AffineExpr::var(lay.b[ul]);

      AffineExpr rate = (1.0 / kLn2) * AffineExpr::var(rho);
      const int slack = lay.backhaul_slack[ul][static_cast<std::size_t>(m)];
      if (slack >= 0) rate.add(slack, 1.0);
      const int wbase = lay.w[ul][static_cast<std::size_t>(m)];
      if (quad_coeff > 0.0 && wbase >= 0) {
        // u >= |w_ml|^2 / b
        const int u = P.add_variable("u" + id);
        std::vector<AffineExpr> rows{AffineExpr::var(u), half_b};
        push_reals(rows, wbase, 2 * ns);
        P.add_constraint(ConeKind::RotatedSecondOrder, std::move(rows), "backhaul-quad-over-lin");
        rate.add(u, -quad_coeff);
      }
      if (hyper_const > 0.0) {
        // g >= hyper_const / b
        const int g = P.add_variable("g" + id);
        P.add_constraint(ConeKind::RotatedSecondOrder,
                         {AffineExpr::var(g), half_b, AffineExpr(std::sqrt(hyper_const))}, "backhaul-hyperbolic");
        rate.add(g, -1.0);
      }
      P.add_constraint(ConeKind::Nonnegative, {rate}, "backhaul-rate");
    }
  }
  return sub;
}

BeamformerSet decode_iterate(const Subproblem& sub, const std::vector<double>& x, const Instance& inst) {
  const int M = inst.num_sbs();
  const int L = inst.num_groups();
  const int ns = inst.cfg.sbs_antennas;
  const int nm = inst.cfg.mbs_antennas;
  if (x.size() != static_cast<std::size_t>(sub.program.num_variables())) {
    throw std::invalid_argument("decode_iterate: solution has wrong dimension");
  }
  auto read = [&x](int base, int n) {
    CVector z(n);
    for (int i = 0; i < n; ++i) {
      z[i] = Complex(x[static_cast<std::size_t>(base + 2 * i)], x[static_cast<std::size_t>(base + 2 * i + 1)]);
    }
    return z;
  };
  BeamformerSet W = BeamformerSet::zeros(inst);
  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    for (int m = 0; m < M; ++m) {
      const int base = sub.layout.w[ul][static_cast<std::size_t>(m)];
      if (base >= 0) W.set_block(m, l, ns, read(base, ns));
    }
    if (sub.layout.v[ul] >= 0) W.v[ul] = read(sub.layout.v[ul], nm);
    if (sub.layout.b[ul] >= 0) W.b[ul] = std::clamp(x[static_cast<std::size_t>(sub.layout.b[ul])], 0.0, 1.0);
  }
  return W;
}

double max_slack(const Subproblem& sub, const std::vector<double>& x) {
  double worst = 0.0;
  for (int s : sub.layout.sinr_slack) {
    if (s >= 0) worst = std::max(worst, x.at(static_cast<std::size_t>(s)));
  }
  for (const auto& row : sub.layout.backhaul_slack) {
    for (int s : row) {
      if (s >= 0) worst = std::max(worst, x.at(static_cast<std::size_t>(s)));
    }
  }
  return worst;
}

double self_audit(const BeamformerSet& W, const Instance& inst, const Formulation& form, const CcpOptions& opts) {
  W.validate(inst);
  const int M = inst.num_sbs();
  const int L = inst.num_groups();
  const int ns = inst.cfg.sbs_antennas;
  double worst = 0.0;
  for (int k = 0; k < inst.num_users(); ++k) {
    worst = std::max(worst, 1.0 - access_sinr(k, W, inst.channels, inst.groups) / inst.gamma());
  }
  double bsum = 0.0;
  double pv = 0.0;
  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    bsum += W.b[ul];
    pv += W.v[ul].squaredNorm();
    for (int m = 0; m < M; ++m) {
      if (!inst.uncached(m, l)) continue;
      double demand = 0.0;
      if (form.backhaul == BackhaulForm::Smoothed) {
        demand = inst.cfg.rate_target * smoothed_l0(W.block_power(m, l, ns), opts.sigma_smooth);
      } else if (form.support->at(m, l)) {
        demand = inst.cfg.rate_target;
      }
      if (demand > 0.0) worst = std::max(worst, demand - bl_rate(m, W.v[ul], W.b[ul], inst.channels));
    }
  }
  for (int m = 0; m < M; ++m) {
    double p = 0.0;
    for (int l = 0; l < L; ++l) p += W.block_power(m, l, ns);
    worst = std::max(worst, p - inst.cfg.sbs_power_cap);
  }
  worst = std::max(worst, pv - inst.cfg.mbs_power_cap);
  worst = std::max(worst, bsum - 1.0);
  return worst;
}

double surrogate_objective(const BeamformerSet& W, const Instance& inst, const Formulation& form,
                           const CcpOptions& opts) {
  const int ns = inst.cfg.sbs_antennas;
  const double denom = std::log1p(1.0 / opts.sigma_smooth);
  double value = 0.0;
  for (int l = 0; l < inst.num_groups(); ++l) {
    for (int m = 0; m < inst.num_sbs(); ++m) {
      const double p = W.block_power(m, l, ns);
      value += inst.cfg.eta_of(m + 1) * p;
      if (form.sparsity_weights && inst.uncached(m, l)) {
        value += inst.cfg.decode_power / denom * std::log1p(p / opts.sigma_smooth);
      }
    }
    value += inst.cfg.eta_of(0) * W.v[static_cast<std::size_t>(l)].squaredNorm();
  }
  return value;
}

BeamformerSet initialize(const Instance& inst, std::uint64_t seed, conic::ConicBackend& backend,
                         const CcpOptions& opts) {
  opts.validate();
  const Formulation form = initialization_form(inst, opts);

  if (auto start = analytic_single_group_start(inst)) {
    if (self_audit(*start, inst, form, opts) <= opts.constraint_tol) return *start;
  }

  std::string last;
  for (int attempt = 0; attempt < opts.init_retries; ++attempt) {
    Rng rng(derive_seed(seed, {0x1417ULL, static_cast<std::uint64_t>(attempt)}));
    const BeamformerSet start = matched_filter_start(inst, rng);
    std::vector<TraceRecord> scratch;
    const PhaseOutcome ph = run_phase(inst, start, form, opts,
                                      PhaseControl{"init", opts.init_max_iters, opts.rel_obj_tol, !opts.init_to_convergence},
                                      opts.sigma_smooth, backend, scratch);
    if (ph.failed) {
      last = ph.message;
      continue;
    }
    if (ph.converged || ph.slack <= opts.constraint_tol) {
      const double audit = self_audit(ph.iterate, inst, form, opts);
      if (audit <= opts.constraint_tol) return ph.iterate;
      last = "initial point fails self-audit by " + std::to_string(audit);
    } else {
      last = "slacks stayed at " + std::to_string(ph.slack);
    }
  }
  throw InfeasibleInstance("initialization failed after " + std::to_string(opts.init_retries) +
                           " attempts: " + last);
}

Clustering recover_clustering(BeamformerSet& W, int num_sbs, int sbs_antennas, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("recover_clustering needs eps > 0");
  const int L = W.num_groups();
  double peak = 0.0;
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < num_sbs; ++m) peak = std::max(peak, W.block_power(m, l, sbs_antennas));
  }
  if (peak == 0.0) throw std::invalid_argument("recover_clustering: all beamformers are zero");
  Clustering C(num_sbs, L);
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < num_sbs; ++m) {
      if (W.block_power(m, l, sbs_antennas) > eps * peak) {
        C.set(m, l, true);
      } else {
        W.set_block(m, l, sbs_antennas, CVector::Zero(sbs_antennas));
      }
    }
  }
  return C;
}

namespace {

// Starting point for the fixed-clustering stage: groups that still need the
// backhaul share it equally and v_l is rescaled to meet the exact rate.
BeamformerSet repair_for_clustering(const BeamformerSet& W, const Clustering& C, const Instance& inst) {
  BeamformerSet out = W;
  const ServingSets sets = uncached_serving_sets(C, inst.cache, inst.groups);
  const auto backhauled = sets.backhauled_groups.size();
  for (int l = 0; l < inst.num_groups(); ++l) {
    const auto ul = static_cast<std::size_t>(l);
    if (sets.backhaul[ul].empty()) {
      out.v[ul].setZero();
      out.b[ul] = 0.0;
      continue;
    }
    out.b[ul] = 1.0 / static_cast<double>(backhauled);
    scale_backhaul_beam(out, l, sets.backhaul[ul], inst, 1.0, nullptr);
  }
  return out;
}

}  // namespace

Solution ccp_solve(const Instance& inst, const BeamformerSet& init, const CcpOptions& opts,
                   conic::ConicBackend& backend) {
  opts.validate();
  init.validate(inst);
  std::vector<TraceRecord> trace;

  Formulation main;
  main.backhaul = BackhaulForm::Smoothed;
  main.sparsity_weights = true;
  main.slack_weight = opts.slack_weight;
  double sigma = opts.sigma_smooth;
  PhaseOutcome ph = run_phase(inst, init, main, opts, PhaseControl{"ccp", opts.max_iters, opts.rel_obj_tol, false},
                              sigma, backend, trace);
  std::vector<double> history = ph.history;
  int iterations = ph.iterations;
  for (int round = 0; round < opts.anneal_rounds && !ph.failed; ++round) {
    sigma /= 10.0;
    ph = run_phase(inst, ph.iterate, main, opts, PhaseControl{"anneal", opts.max_iters, opts.rel_obj_tol, false},
                   sigma, backend, trace);
    history.insert(history.end(), ph.history.begin() + 1, ph.history.end());
    iterations += ph.iterations;
  }
  if (ph.failed) {
    Solution s = infeasible_solution(inst, Mode::Proposed, ph.message);
    s.objective_history = history;
    s.iterations = iterations;
    append_trace(s, trace);
    return s;
  }
  Status status = phase_status(ph, opts.constraint_tol);

  BeamformerSet W = ph.iterate;
  Clustering C;
  try {
    C = recover_clustering(W, inst.num_sbs(), inst.cfg.sbs_antennas, opts.clustering_threshold);
  } catch (const std::invalid_argument& e) {
    Solution s = infeasible_solution(inst, Mode::Proposed, e.what());
    s.objective_history = history;
    s.iterations = iterations;
    append_trace(s, trace);
    return s;
  }

  std::vector<double> polish_history;
  int polish_iterations = 0;
  std::string message;
  if (opts.polish) {
    Formulation fixed;
    fixed.backhaul = BackhaulForm::Exact;
    fixed.sparsity_weights = false;
    fixed.support = C;
    fixed.slack_weight = opts.slack_weight;
    const BeamformerSet start = repair_for_clustering(W, C, inst);
    const PhaseOutcome pp =
        run_phase(inst, start, fixed, opts, PhaseControl{"polish", opts.polish_max_iters, opts.polish_rel_tol, false},
                  opts.sigma_smooth, backend, trace);
    polish_history = pp.history;
    polish_iterations = pp.iterations;
    if (pp.failed) {
      status = Status::Infeasible;
      message = pp.message;
    } else {
      W = pp.iterate;
      if (pp.slack > opts.constraint_tol) {
        status = Status::Infeasible;
        message = "fixed-clustering stage left slack " + std::to_string(pp.slack);
      }
    }
  }

  Solution s = finalize(inst, Mode::Proposed, std::move(W), std::move(C), opts);
  s.objective_history = std::move(history);
  s.polish_history = std::move(polish_history);
  s.iterations = iterations;
  s.polish_iterations = polish_iterations;
  append_trace(s, trace);
  s.status = status;
  s.message = message;
  if (s.status != Status::Infeasible && !s.feasibility.feasible) {
    s.status = Status::Infeasible;
    s.message = "solution fails the feasibility audit (worst " + std::to_string(s.feasibility.worst()) + ")";
  }
  return s;
}

Instance instance_for_mode(const Instance& inst, Mode mode, const CcpOptions& opts) {
  if (mode != Mode::NoCacheNoSC) return inst;
  Instance out = with_cache(inst, inst.cache.strategy(), 0);
  out.cfg.mbs_power_cap = opts.nocache_mbs_power;
  return out;
}

Solution run_baseline(const Instance& inst, Mode mode, const CcpOptions& opts, conic::ConicBackend& backend,
                      std::uint64_t seed) {
  if (mode == Mode::Proposed) throw std::invalid_argument("run_baseline: proposed is not a baseline");
  CcpOptions local = opts;
  local.mode = mode;
  local.validate();
  const Instance mi = instance_for_mode(inst, mode, local);

  BeamformerSet init;
  try {
    init = initialize(mi, seed, backend, local);
  } catch (const InfeasibleInstance& e) {
    return infeasible_solution(mi, mode, e.what());
  }

  std::vector<TraceRecord> trace;
  Formulation form;
  form.backhaul = BackhaulForm::Exact;
  form.sparsity_weights = false;
  form.support = Clustering::all_ones(mi.num_sbs(), mi.num_groups());
  form.slack_weight = local.slack_weight;
  const PhaseOutcome ph = run_phase(mi, init, form, local,
                                    PhaseControl{"ccp", local.max_iters, local.rel_obj_tol, false},
                                    local.sigma_smooth, backend, trace);
  if (ph.failed) {
    Solution s = infeasible_solution(mi, mode, ph.message);
    s.objective_history = ph.history;
    s.iterations = ph.iterations;
    append_trace(s, trace);
    return s;
  }
  Solution s = finalize(mi, mode, ph.iterate, *form.support, local);
  s.objective_history = ph.history;
  s.iterations = ph.iterations;
  append_trace(s, trace);
  s.status = phase_status(ph, local.constraint_tol);
  if (s.status != Status::Infeasible && !s.feasibility.feasible) {
    s.status = Status::Infeasible;
    s.message = "solution fails the feasibility audit (worst " + std::to_string(s.feasibility.worst()) + ")";
  }
  return s;
}

Solution solve(const Instance& inst, const CcpOptions& opts, conic::ConicBackend& backend, std::uint64_t seed) {
  if (opts.mode != Mode::Proposed) return run_baseline(inst, opts.mode, opts, backend, seed);
  BeamformerSet init;
  try {
    init = initialize(inst, seed, backend, opts);
  } catch (const InfeasibleInstance& e) {
    return infeasible_solution(inst, Mode::Proposed, e.what());
  }
  return ccp_solve(inst, init, opts, backend);
}

void to_json(nlohmann::json& j, const Solution& s) {
  nlohmann::json rates = nlohmann::json::array();
  for (Eigen::Index m = 0; m < s.backhaul_rate.rows(); ++m) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index l = 0; l < s.backhaul_rate.cols(); ++l) row.push_back(s.backhaul_rate(m, l));
    rates.push_back(row);
  }
  j = nlohmann::json{{"mode", to_string(s.mode)},
                     {"status", to_string(s.status)},
                     {"message", s.message},
                     {"power", s.power},
                     {"feasibility", s.feasibility},
                     {"clustering", s.clustering},
                     {"iterations", s.iterations},
                     {"polish_iterations", s.polish_iterations},
                     {"objective_history", s.objective_history},
                     {"polish_history", s.polish_history},
                     {"user_sinr", s.user_sinr},
                     {"group_rate", s.group_rate},
                     {"backhaul_rate", rates},
                     {"backhauled_groups", s.backhauled_groups},
                     {"beamformers", s.beamformers}};
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace) {
  os << "phase,iteration,objective,max_slack,min_group_sinr_gap\n";
  os.precision(12);
  for (const auto& r : trace) {
    double gap = std::numeric_limits<double>::infinity();
    for (double g : r.group_sinr_gap) gap = std::min(gap, g);
    os << r.phase << ',' << r.iteration << ',' << r.objective << ',' << r.max_slack << ',';
    if (r.group_sinr_gap.empty()) {
      os << "";
    } else {
      os << gap;
    }
    os << '\n';
  }
}

}  // namespace wbcran::ccp
