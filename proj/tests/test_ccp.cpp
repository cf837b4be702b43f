#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "wbcran/ccp.hpp"

using namespace wbcran;
using namespace wbcran::ccp;
using testing::cvec;
using testing::hand_instance;

namespace {

Instance two_by_two() {
  // two single-antenna SBSs, one user per group, mild cross talk
  return hand_instance(2, 1, 1, {cvec({1.0, 0.3}), cvec({0.2, 1.0})}, {CMatrix::Ones(1, 1), CMatrix::Ones(1, 1)},
                       {0, 1});
}

void cache_everything(Instance& inst) {
  for (int m = 0; m < inst.num_sbs(); ++m) {
    for (int f = 1; f <= inst.cfg.num_files; ++f) inst.cache.set(m, f, true);
  }
}

}  // namespace

TEST_SUITE("ccp") {

TEST_CASE("smoothed l0 values") {
  const double s = 0.01;
  CHECK(smoothed_l0(s * (std::exp(1.0) - 1.0), s) == doctest::Approx(1.0 / std::log(101.0)).epsilon(1e-12));
  CHECK(smoothed_l0(s * (std::exp(1.0) - 1.0), s) == doctest::Approx(0.21672).epsilon(1e-4));
  CHECK(smoothed_l0(0.0, s) == 0.0);
  CHECK(smoothed_l0(1.0, s) == doctest::Approx(1.0));
  double prev = 0.0;
  for (int i = 1; i <= 100; ++i) {
    const double x = 0.02 * i;
    const double y = smoothed_l0(x, s);
    CHECK(y > prev);
    // concavity: midpoint lies above the chord
    const double lo = smoothed_l0(x - 0.01, s), hi = smoothed_l0(x + 0.01, s);
    CHECK(y >= 0.5 * (lo + hi) - 1e-15);
    prev = y;
  }
}

TEST_CASE("linearization constants") {
  Instance inst = two_by_two();
  BeamformerSet W = BeamformerSet::zeros(inst);
  W.w[0] = cvec({1.0, 0.0});
  CcpCoefficients c = linearize(W, inst.cache, inst.groups, inst.cfg, 1.0);
  CHECK(c.theta(0, 0) == doctest::Approx(0.5));
  CHECK(c.q(0, 0) == doctest::Approx(std::log(2.0) - 0.5));
  CHECK(c.q(0, 0) == doctest::Approx(0.19315).epsilon(1e-4));

  c = linearize(W, inst.cache, inst.groups, inst.cfg, 0.01);
  CHECK(c.theta(1, 0) == doctest::Approx(100.0));
  CHECK(c.q(1, 0) == 0.0);
  const double denom = std::log(101.0);
  CHECK(c.nu(1, 0) == doctest::Approx(inst.cfg.decode_power / denom));
  CHECK(c.zeta(1, 0) == doctest::Approx(inst.cfg.rate_target / denom));
  CHECK(c.pi(1, 0) == doctest::Approx(inst.cfg.eta_of(2) + c.nu(1, 0) * 100.0));

  cache_everything(inst);
  c = linearize(W, inst.cache, inst.groups, inst.cfg, 0.01);
  CHECK(c.nu.isZero());
  CHECK(c.zeta.isZero());
  CHECK(c.pi(0, 1) == inst.cfg.eta_of(1));
}

TEST_CASE("tangent majorizes the log surrogate") {
  const double s = 0.05;
  for (double p0 : {0.0, 0.01, 0.3, 2.0}) {
    const double theta = 1.0 / (p0 + s);
    const double q = std::log1p(p0 / s) - theta * p0;
    for (double p = 0.0; p < 4.0; p += 0.1) CHECK(theta * p + q >= std::log1p(p / s) - 1e-12);
  }
}

TEST_CASE("subproblem structure") {
  const Instance inst = two_by_two();
  const BeamformerSet W = BeamformerSet::zeros(inst);
  CcpOptions opts;
  const CcpCoefficients c = linearize(W, inst.cache, inst.groups, inst.cfg, opts.sigma_smooth);
  Formulation form;
  const Subproblem sub = assemble_subproblem(c, W, inst, form, opts);
  CHECK(sub.program.count_tag("backhaul-rate") == 4);
  CHECK(sub.program.count_tag("sinr") == 2);
  CHECK(sub.program.count_tag("sbs-power") + sub.program.count_tag("mbs-power") == 3);
  CHECK(sub.program.count_tag("bandwidth-simplex") == 1);
  CHECK(sub.program.count_tag("slack-nonneg") == 0);
  CHECK_NOTHROW(sub.program.validate());

  Instance cached = inst;
  cache_everything(cached);
  const CcpCoefficients cc = linearize(W, cached.cache, cached.groups, cached.cfg, opts.sigma_smooth);
  const Subproblem s2 = assemble_subproblem(cc, W, cached, form, opts);
  CHECK(s2.program.count_tag("backhaul-rate") == 0);
  CHECK(s2.program.count_tag("bandwidth-simplex") == 0);
  for (int b : s2.layout.b) CHECK(b == -1);
  for (int v : s2.layout.v) CHECK(v == -1);

  form.backhaul = BackhaulForm::Exact;
  CHECK_THROWS_AS(assemble_subproblem(c, W, inst, form, opts), std::invalid_argument);
  Clustering support(2, 2);
  support.set(0, 0, true);
  support.set(1, 1, true);
  form.support = support;
  const Subproblem s3 = assemble_subproblem(c, W, inst, form, opts);
  CHECK(s3.layout.w[0][1] == -1);
  CHECK(s3.layout.w[1][0] == -1);
  CHECK(s3.program.count_tag("backhaul-rate") == 2);
  // no interference term survives, so both SINR rows are linear
  CHECK(s3.program.count_tag("sinr") == 2);
}

TEST_CASE("clustering recovery") {
  const Instance inst = two_by_two();
  BeamformerSet W = BeamformerSet::zeros(inst);
  W.w[0] = cvec({1.0, 1e-5});
  W.w[1] = cvec({0.0, 0.5});
  const Clustering C = recover_clustering(W, 2, 1, 1e-6);
  CHECK(C.at(0, 0));
  CHECK_FALSE(C.at(1, 0));
  CHECK_FALSE(C.at(0, 1));
  CHECK(C.at(1, 1));
  CHECK(W.w[0][1] == Complex(0.0, 0.0));

  BeamformerSet Z = BeamformerSet::zeros(inst);
  CHECK_THROWS_AS(recover_clustering(Z, 2, 1, 1e-6), std::invalid_argument);
}

TEST_CASE("clustering threshold is relative to the largest block") {
  Instance inst = hand_instance(2, 1, 1, {cvec({1.0, 1.0})}, {CMatrix::Ones(1, 1), CMatrix::Ones(1, 1)}, {0});
  BeamformerSet W = BeamformerSet::zeros(inst);
  W.w[0] = cvec({1.0, std::sqrt(1e-9)});
  const Clustering C = recover_clustering(W, 2, 1, 1e-6);
  CHECK(C.at(0, 0));
  CHECK_FALSE(C.at(1, 0));
  CHECK(W.block_power(1, 0, 1) == 0.0);
}

TEST_CASE("infeasible SINR target") {
  // the SBS cap cannot lift a 1e-3 channel to SINR 1
  const Instance inst = hand_instance(1, 1, 1, {cvec({1e-3})}, {CMatrix::Ones(1, 1)}, {0});
  auto be = conic::make_default_backend();
  CcpOptions opts;
  opts.init_max_iters = 5;
  opts.init_retries = 1;
  const Solution s = solve(inst, opts, *be, 1);
  CHECK(s.status == Status::Infeasible);
  CHECK_THROWS_AS(initialize(inst, 1, *be, opts), InfeasibleInstance);
}

TEST_CASE("initialization passes its own audit") {
  const Instance inst = make_instance(SystemConfig::desk(), CacheStrategy::PopC, 11);
  auto be = conic::make_default_backend();
  CcpOptions opts;
  const BeamformerSet W = initialize(inst, 11, *be, opts);
  Formulation form;
  form.backhaul = BackhaulForm::Smoothed;
  CHECK(self_audit(W, inst, form, opts) <= opts.constraint_tol);
  double total_b = 0.0;
  for (double b : W.b) total_b += b;
  CHECK(total_b <= 1.0 + 1e-9);
}

TEST_CASE("solution on a desk scenario") {
  const Instance inst = make_instance(SystemConfig::desk(), CacheStrategy::PopC, 5);
  auto be = conic::make_default_backend();
  CcpOptions opts;
  const Solution s = solve(inst, opts, *be, 5);
  REQUIRE(s.status == Status::Converged);
  CHECK(s.feasibility.feasible);
  double total_b = 0.0;
  for (double b : s.beamformers.b) total_b += b;
  CHECK(total_b <= 1.0 + 1e-6);
  for (std::size_t i = 1; i < s.objective_history.size(); ++i) {
    CHECK(s.objective_history[i] <= s.objective_history[i - 1] * (1.0 + 1e-6));
  }
  for (int l = 0; l < inst.num_groups(); ++l) {
    CHECK(min_group_sinr(l, s.beamformers, inst.channels, inst.groups) >= inst.gamma() * (1.0 - 1e-6));
  }
}

TEST_CASE("fully cached scenario needs no backhaul") {
  Instance inst = two_by_two();
  cache_everything(inst);
  auto be = conic::make_default_backend();
  const Solution s = solve(inst, CcpOptions{}, *be, 2);
  REQUIRE(s.status == Status::Converged);
  for (const auto& v : s.beamformers.v) CHECK(v.squaredNorm() <= 1e-8);
  CHECK(s.backhauled_groups == 0);
  CHECK(s.power.signal_processing == 0.0);
}

TEST_CASE("no-sc keeps every link") {
  const Instance inst = make_instance(SystemConfig::desk(), CacheStrategy::PopC, 3);
  auto be = conic::make_default_backend();
  CcpOptions opts;
  opts.mode = Mode::NoSC;
  const Solution s = solve(inst, opts, *be, 3);
  REQUIRE(s.status == Status::Converged);
  CHECK(s.clustering == Clustering::all_ones(inst.num_sbs(), inst.num_groups()));
  CHECK(s.feasibility.feasible);
}

TEST_CASE("no-cache instance") {
  const Instance inst = make_instance(SystemConfig::desk(), CacheStrategy::PopC, 3);
  const Instance nc = instance_for_mode(inst, Mode::NoCacheNoSC, CcpOptions{});
  CHECK(nc.cfg.mbs_power_cap == 200.0);
  for (int m = 0; m < nc.num_sbs(); ++m) CHECK(nc.cache.row_count(m) == 0);
  CHECK(nc.channels.access[0] == inst.channels.access[0]);
  const Instance same = instance_for_mode(inst, Mode::NoSC, CcpOptions{});
  CHECK(same.cfg.mbs_power_cap == inst.cfg.mbs_power_cap);
}

TEST_CASE("outer loop replays from recorded subproblem solutions") {
  const Instance inst = make_instance(SystemConfig::desk(), CacheStrategy::PopC, 7);
  auto inner = conic::make_default_backend();
  conic::RecordingBackend rec(*inner);
  const Solution a = solve(inst, CcpOptions{}, rec, 7);
  conic::ReplayBackend replay(rec.recorded());
  const Solution b = solve(inst, CcpOptions{}, replay, 7);
  CHECK(replay.consumed() == rec.recorded().size());
  CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
}

TEST_CASE("option validation") {
  CcpOptions o;
  CHECK_NOTHROW(o.validate());
  o.slack_weight = 1e6;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = CcpOptions{};
  o.b_min = 0.0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = CcpOptions{};
  o.sigma_smooth = 0.1;
  o.max_iters = 7;
  const CcpOptions back = nlohmann::json(o).get<CcpOptions>();
  CHECK(back.sigma_smooth == 0.1);
  CHECK(back.max_iters == 7);
  CHECK(parse_mode(to_string(Mode::NoCacheNoSC)) == Mode::NoCacheNoSC);
  CHECK_THROWS(parse_mode("bogus"));
}

TEST_CASE("trace csv") {
  std::ostringstream os;
  write_trace_csv(os, {TraceRecord{"ccp", 1, 2.5, 0.0, {0.1, 0.2}}});
  const std::string s = os.str();
  CHECK(s.rfind("phase,iteration,objective,max_slack,min_group_sinr_gap\n", 0) == 0);
  CHECK(s.find("ccp,1,") != std::string::npos);
}

}
