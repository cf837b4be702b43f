#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "wbcran/scenario.hpp"
#include "wbcran/seeding.hpp"

using namespace wbcran;

TEST_SUITE("scenario") {

TEST_CASE("zipf probabilities") {
  const auto p2 = zipf_probabilities(2, 1.0);
  CHECK(p2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(p2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  for (double p : zipf_probabilities(10, 0.0)) CHECK(p == doctest::Approx(0.1).epsilon(1e-14));

  const auto p100 = zipf_probabilities(100, 1.0);
  CHECK(std::abs(std::accumulate(p100.begin(), p100.end(), 0.0) - 1.0) < 1e-12);
  for (std::size_t f = 1; f < p100.size(); ++f) CHECK(p100[f] < p100[f - 1]);
}

TEST_CASE("requests stay in range and are reproducible") {
  SystemConfig cfg = SystemConfig::paper();
  const auto a = sample_requests(cfg, 77);
  const auto b = sample_requests(cfg, 77);
  CHECK(a.files == b.files);
  REQUIRE(a.files.size() == 8);
  for (int f : a.files) CHECK((f >= 1 && f <= 100));
}

TEST_CASE("empirical zipf frequencies") {
  SystemConfig cfg = SystemConfig::desk();
  cfg.num_files = 3;
  cfg.num_users = 20000;
  const auto req = sample_requests(cfg, 5);
  std::vector<double> freq(3, 0.0);
  for (int f : req.files) freq[static_cast<std::size_t>(f - 1)] += 1.0 / cfg.num_users;
  const auto p = zipf_probabilities(3, 1.0);
  for (int f = 0; f < 3; ++f) CHECK(std::abs(freq[static_cast<std::size_t>(f)] - p[static_cast<std::size_t>(f)]) < 0.02);
}

TEST_CASE("groups from the evaluation request profile") {
  const GroupStructure g = build_groups(RequestProfile{{1, 3, 4, 64, 26, 100, 55, 3}});
  CHECK(g.size() == 7);
  CHECK(g.group_of_user[1] == g.group_of_user[7]);
  CHECK(g.group_file[static_cast<std::size_t>(g.group_of_user[1])] == 3);
  CHECK(g.members[static_cast<std::size_t>(g.group_of_user[1])] == std::vector<int>{1, 7});
  CHECK(g.group_file == std::vector<int>{1, 3, 4, 64, 26, 100, 55});
}

TEST_CASE("single group and singleton groups") {
  const GroupStructure one = build_groups(RequestProfile{{7, 7, 7, 7}});
  CHECK(one.size() == 1);
  CHECK(one.members[0] == std::vector<int>{0, 1, 2, 3});
  const GroupStructure distinct = build_groups(RequestProfile{{4, 2, 9}});
  CHECK(distinct.size() == 3);
  for (const auto& m : distinct.members) CHECK(m.size() == 1);
}

TEST_CASE("groups partition users for random profiles") {
  SystemConfig cfg = SystemConfig::desk();
  cfg.num_users = 30;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RequestProfile req = sample_requests(cfg, seed);
    const GroupStructure g = build_groups(req);
    std::size_t total = 0;
    std::set<int> seen;
    std::set<int> files;
    for (int l = 0; l < g.size(); ++l) {
      const auto ul = static_cast<std::size_t>(l);
      CHECK(files.insert(g.group_file[ul]).second);
      total += g.members[ul].size();
      for (int k : g.members[ul]) {
        CHECK(seen.insert(k).second);
        CHECK(g.group_of_user[static_cast<std::size_t>(k)] == l);
        CHECK(req.files[static_cast<std::size_t>(k)] == g.group_file[ul]);
      }
    }
    CHECK(total == static_cast<std::size_t>(cfg.num_users));
  }
}

TEST_CASE("cache placement strategies") {
  SystemConfig cfg = SystemConfig::paper();
  const auto order = popularity_order(cfg);
  CHECK(order.front() == 1);

  const CachePlacement mosc = place_cache(CacheStrategy::MosC, cfg, order, 1);
  for (int f = 1; f <= cfg.num_files; ++f) CHECK(mosc.cached(1, f) == (f >= 6 && f <= 10));

  const CachePlacement popc = place_cache(CacheStrategy::PopC, cfg, order, 1);
  for (int m = 0; m < cfg.num_sbs; ++m) {
    CHECK(popc.row_count(m) == 5);
    for (int f = 1; f <= 5; ++f) CHECK(popc.cached(m, f));
  }

  const CachePlacement ranc = place_cache(CacheStrategy::RanC, cfg, order, 9);
  const CachePlacement ranc2 = place_cache(CacheStrategy::RanC, cfg, order, 9);
  for (int m = 0; m < cfg.num_sbs; ++m) {
    CHECK(ranc.row_count(m) == 5);
    for (int f = 1; f <= cfg.num_files; ++f) CHECK(ranc.cached(m, f) == ranc2.cached(m, f));
  }

  SystemConfig empty = cfg;
  empty.cache_capacity = 0;
  for (auto s : {CacheStrategy::PopC, CacheStrategy::RanC, CacheStrategy::MosC}) {
    const CachePlacement none = place_cache(s, empty, order, 3);
    for (int m = 0; m < cfg.num_sbs; ++m) CHECK(none.row_count(m) == 0);
  }
}

TEST_CASE("MosC wraps around the library") {
  SystemConfig cfg = SystemConfig::desk();  // M=6, Z=3, F=20: 18 <= 20
  cfg.num_files = 10;
  const CachePlacement s = place_cache(CacheStrategy::MosC, cfg, popularity_order(cfg), 0);
  // SBS index 3 covers files 10, 11, 12 -> 10, 1, 2
  CHECK(s.cached(3, 10));
  CHECK(s.cached(3, 1));
  CHECK(s.cached(3, 2));
  for (int m = 0; m < cfg.num_sbs; ++m) CHECK(s.row_count(m) == 3);
}

TEST_CASE("noise conversion") {
  CHECK(dbw_to_watts(-65.0) == doctest::Approx(3.1623e-7).epsilon(1e-4));
  CHECK(dbw_to_watts(-90.0) == doctest::Approx(1e-9).epsilon(1e-12));
  const Instance inst = make_instance(SystemConfig::desk(), CacheStrategy::PopC, 3);
  CHECK(inst.channels.noise_user == doctest::Approx(std::pow(10.0, -6.5)));
}

TEST_CASE("channel entry") {
  CHECK(std::abs(channel_entry(1.0, 3.0, 1.0, Complex(1.0, 0.0)) - Complex(1.0, 0.0)) < 1e-15);
  CHECK(std::abs(channel_entry(2.0, 3.0, 1.0, Complex(1.0, 1.0)) - Complex(1.0, 1.0) / std::sqrt(8.0)) < 1e-15);
}

TEST_CASE("channel power without shadowing") {
  Rng rng(11);
  double acc = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Complex g(standard_normal(rng) / std::sqrt(2.0), standard_normal(rng) / std::sqrt(2.0));
    acc += std::norm(channel_entry(2.0, 3.0, 1.0, g));
  }
  CHECK(acc / n == doctest::Approx(0.125).epsilon(0.05));
}

TEST_CASE("generated channel statistics include log-normal shadowing") {
  SystemConfig cfg = SystemConfig::desk();
  cfg.num_sbs = 1;
  cfg.num_users = 1;
  cfg.mbs_antennas = 1;
  cfg.sbs_antennas = 1;
  Topology topo;
  topo.sbs = {{2.0, 0.0}};
  topo.users = {{2.0, 3.0}};  // 3 m from the SBS
  const double s_bl = cfg.shadow_std_bl() * std::log(10.0) / 10.0;
  const double s_al = cfg.shadow_std_al() * std::log(10.0) / 10.0;
  double bl = 0.0, al = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const ChannelSet ch = generate_channels(topo, cfg, static_cast<std::uint64_t>(i));
    bl += std::norm(ch.backhaul[0](0, 0));
    al += std::norm(ch.access[0][0]);
  }
  CHECK(bl / n == doctest::Approx(std::pow(2.0, -cfg.beta_bl) * std::exp(0.5 * s_bl * s_bl)).epsilon(0.05));
  CHECK(al / n == doctest::Approx(std::pow(3.0, -cfg.beta_al) * std::exp(0.5 * s_al * s_al)).epsilon(0.05));
}

TEST_CASE("coincident nodes are clamped to the minimum distance") {
  SystemConfig cfg = SystemConfig::desk();
  cfg.num_sbs = 1;
  cfg.num_users = 1;
  cfg.shadow_db_bl = 0.0;
  cfg.shadow_db_al = 0.0;
  Topology topo;
  topo.sbs = {{0.0, 0.0}};
  topo.users = {{0.0, 0.0}};
  const ChannelSet ch = generate_channels(topo, cfg, 1);
  for (Eigen::Index i = 0; i < ch.access[0].size(); ++i) CHECK(std::isfinite(std::abs(ch.access[0][i])));
  for (Eigen::Index i = 0; i < ch.backhaul[0].size(); ++i) CHECK(std::isfinite(std::abs(ch.backhaul[0](i))));
}

TEST_CASE("shadowing dB figure as variance") {
  SystemConfig cfg;
  CHECK(cfg.shadow_std_al() == doctest::Approx(4.0));
  cfg.shadow_db_is_variance = true;
  CHECK(cfg.shadow_std_al() == doctest::Approx(2.0));
}

TEST_CASE("topology stays inside the cell") {
  SystemConfig cfg = SystemConfig::paper();
  const Topology t = generate_topology(cfg, 42);
  CHECK(t.sbs.size() == 14);
  CHECK(t.users.size() == 8);
  for (const auto& p : t.sbs) CHECK(std::hypot(p.x, p.y) <= 250.0);
  for (const auto& p : t.users) CHECK(std::hypot(p.x, p.y) <= 250.0);
  CHECK(t.mbs.x == 0.0);
  CHECK(t.mbs.y == 0.0);
}

TEST_CASE("configuration validation") {
  SystemConfig cfg;
  cfg.num_sbs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SystemConfig{};
  cfg.cache_capacity = cfg.num_files + 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SystemConfig{};
  cfg.zipf_alpha = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_instance(cfg, CacheStrategy::PopC, 1), std::invalid_argument);
}

TEST_CASE("paper defaults") {
  const SystemConfig cfg = SystemConfig::paper();
  CHECK(cfg.num_sbs == 14);
  CHECK(cfg.num_users == 8);
  CHECK(cfg.mbs_antennas == 50);
  CHECK(cfg.sbs_antennas == 2);
  CHECK(cfg.num_files == 100);
  CHECK(cfg.cache_capacity == 5);
  CHECK(cfg.radius == 250.0);
  CHECK(cfg.sbs_power_cap == 10.0);
  CHECK(cfg.mbs_power_cap == 50.0);
  CHECK(cfg.decode_power == 1.0);
  CHECK(cfg.rate_target == 1.5);
  CHECK(cfg.sinr_target() == doctest::Approx(1.8284271247).epsilon(1e-9));
}

TEST_CASE("instances are deterministic and round-trip through JSON") {
  const Instance a = make_instance(SystemConfig::desk(), CacheStrategy::RanC, 123);
  const Instance b = make_instance(SystemConfig::desk(), CacheStrategy::RanC, 123);
  CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
  const Instance c = nlohmann::json(a).get<Instance>();
  CHECK(nlohmann::json(c).dump() == nlohmann::json(a).dump());
  const Instance d = make_instance(SystemConfig::desk(), CacheStrategy::RanC, 124);
  CHECK(nlohmann::json(d).dump() != nlohmann::json(a).dump());
}

TEST_CASE("fixed request profile is honoured") {
  const RequestProfile req{{1, 3, 4, 64, 26, 100, 55, 3}};
  const Instance inst = make_instance(SystemConfig::paper(), CacheStrategy::PopC, 1, req);
  CHECK(inst.requests.files == req.files);
  CHECK(inst.num_groups() == 7);
  SystemConfig small = SystemConfig::desk();
  CHECK_THROWS_AS(make_instance(small, CacheStrategy::PopC, 1, req), std::invalid_argument);
}

}
