#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "wbcran/harness.hpp"

using namespace wbcran;
using namespace wbcran::harness;

namespace {

std::map<std::string, std::string> kv_of(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

CampaignSpec small_spec() {
  return spec_from_key_values(kv_of("preset = desk\nM = 3\nK = 3\nN_m = 4\ntrials = 3\nseed_base = 17\n"));
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("key = value parsing") {
  const auto kv = kv_of("# comment\n a = 1 \n\nb=x, y # trailing\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "x, y");
  CHECK_THROWS_AS(kv_of("a = 1\na = 2\n"), std::invalid_argument);
  CHECK_THROWS_AS(kv_of("just words\n"), std::invalid_argument);
}

TEST_CASE("campaign spec from keys") {
  const CampaignSpec s = spec_from_key_values(
      kv_of("preset = paper\ntrials = 4\nstrategies = popc, mosc\nmodes = proposed\nrequests = 1,3,4,64,26,100,55,3\n"
            "ccp.max_iters = 12\nP_0 = 40\n"));
  CHECK(s.config.num_sbs == 14);
  CHECK(s.config.mbs_power_cap == 40.0);
  CHECK(s.trials == 4);
  CHECK(s.strategies == std::vector<CacheStrategy>{CacheStrategy::PopC, CacheStrategy::MosC});
  CHECK(s.modes == std::vector<ccp::Mode>{ccp::Mode::Proposed});
  REQUIRE(s.fixed_requests);
  CHECK(s.fixed_requests->files[3] == 64);
  CHECK(s.options.max_iters == 12);

  CHECK_THROWS_AS(spec_from_key_values(kv_of("modes = \n")), std::invalid_argument);
  CHECK_THROWS_AS(spec_from_key_values(kv_of("bogus = 1\n")), std::invalid_argument);
  CHECK_THROWS_AS(spec_from_key_values(kv_of("ccp.bogus = 1\n")), std::invalid_argument);
  CHECK_THROWS_AS(spec_from_key_values(kv_of("requests = 1,2\n")), std::invalid_argument);
  CHECK_THROWS_AS(spec_from_key_values(kv_of("trials = 0\n")), std::invalid_argument);
}

TEST_CASE("seeds") {
  const CampaignSpec s = small_spec();
  CHECK(scenario_seed(s, 0) != scenario_seed(s, 1));
  CHECK(solver_seed(s, 0, ccp::Mode::Proposed, CacheStrategy::PopC) !=
        solver_seed(s, 0, ccp::Mode::NoSC, CacheStrategy::PopC));
  // the scenario does not depend on the mode, so modes share channels
  const Instance a = trial_instance(s, 1, CacheStrategy::PopC);
  const Instance b = trial_instance(s, 1, CacheStrategy::MosC);
  CHECK(a.channels.access[0] == b.channels.access[0]);
}

TEST_CASE("fixed request profile is honored") {
  CampaignSpec s = small_spec();
  s.fixed_requests = RequestProfile{{2, 2, 7}};
  const Instance inst = trial_instance(s, 2, CacheStrategy::PopC);
  CHECK(inst.requests.files == std::vector<int>{2, 2, 7});
  CHECK(inst.num_groups() == 2);
}

TEST_CASE("trial records are reproducible") {
  const CampaignSpec s = small_spec();
  auto be = conic::make_default_backend();
  const TrialRecord a = run_trial(s, 0, ccp::Mode::Proposed, CacheStrategy::PopC, *be);
  const TrialRecord b = run_trial(s, 0, ccp::Mode::Proposed, CacheStrategy::PopC, *be);
  CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
  CHECK_FALSE(a.errored());
}

TEST_CASE("no-cache trials use the raised MBS budget") {
  const CampaignSpec s = small_spec();
  auto be = conic::make_default_backend();
  const TrialRecord r = run_trial(s, 1, ccp::Mode::NoCacheNoSC, CacheStrategy::PopC, *be);
  REQUIRE(r.usable());
  CHECK(r.audit_passed);
  CHECK(r.serving_links == s.config.num_sbs * r.groups);
}

TEST_CASE("campaign artifacts and thread invariance") {
  CampaignSpec s = small_spec();
  s.modes = {ccp::Mode::Proposed, ccp::Mode::NoSC};
  s.threads = 1;
  const CampaignResult one = run_campaign(s);
  s.threads = 3;
  const CampaignResult three = run_campaign(s);
  REQUIRE(one.records.size() == 6);
  for (std::size_t i = 0; i < one.records.size(); ++i) {
    CHECK(nlohmann::json(one.records[i]).dump() == nlohmann::json(three.records[i]).dump());
  }
  CHECK(one.records[0].trial == 0);
  CHECK(one.records[1].mode == ccp::Mode::NoSC);
  CHECK(one.error_count() == 0);

  const auto dir = std::filesystem::temp_directory_path() / "wbcran_harness_test";
  std::filesystem::remove_all(dir);
  write_artifacts(one, dir);
  for (const char* f : {"convergence.csv", "cdf.csv", "breakdown.csv", "summary.json", "trials.jsonl"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(lines_of(dir / "trials.jsonl").size() == 6);

  const auto cdf = lines_of(dir / "cdf.csv");
  REQUIRE(cdf.size() >= 2);
  std::string mode;
  double prev = -1.0;
  std::size_t rank = 0;
  for (std::size_t i = 1; i < cdf.size(); ++i) {
    std::istringstream row(cdf[i]);
    std::string m, strategy, r, power, frac;
    std::getline(row, m, ',');
    std::getline(row, strategy, ',');
    std::getline(row, r, ',');
    std::getline(row, power, ',');
    std::getline(row, frac, ',');
    if (m != mode) {
      mode = m;
      prev = -1.0;
      rank = 0;
    }
    ++rank;
    CHECK(std::stoul(r) == rank);
    CHECK(std::stod(power) >= prev);
    prev = std::stod(power);
    CHECK(std::stod(frac) == doctest::Approx(static_cast<double>(rank) / 3.0));
  }
  std::filesystem::remove_all(dir);
}

}
