#include "wbcran/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "wbcran/model.hpp"
#include "wbcran/seeding.hpp"

namespace wbcran::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

nlohmann::json value_to_json(const std::string& value) {
  const nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  if (value.find(',') != std::string::npos) {
    const nlohmann::json list = nlohmann::json::parse("[" + value + "]", nullptr, false);
    if (!list.is_discarded()) return list;
  }
  return value;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  const unsigned long long v = std::stoull(value, &used);
  if (used != value.size()) throw std::invalid_argument("bad integer for " + key + ": " + value);
  return v;
}

int parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  const int v = std::stoi(value, &used);
  if (used != value.size()) throw std::invalid_argument("bad integer for " + key + ": " + value);
  return v;
}

const std::set<std::string> kCampaignKeys{"preset", "trials", "seed_base", "strategies", "modes", "requests", "threads"};

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

nlohmann::json finite_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": repeated key " + key);
    }
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  return parse_key_values(in);
}

SystemConfig config_from_key_values(const std::map<std::string, std::string>& kv) {
  SystemConfig base = SystemConfig::desk();
  if (auto it = kv.find("preset"); it != kv.end()) {
    if (it->second == "desk") {
      base = SystemConfig::desk();
    } else if (it->second == "paper") {
      base = SystemConfig::paper();
    } else {
      throw std::invalid_argument("unknown preset: " + it->second);
    }
  }
  nlohmann::json j = base;
  for (const auto& [key, value] : kv) {
    if (kCampaignKeys.count(key) || key.rfind("ccp.", 0) == 0) continue;
    if (!j.contains(key)) throw std::invalid_argument("unknown configuration key: " + key);
    j[key] = value_to_json(value);
  }
  SystemConfig cfg = j.get<SystemConfig>();
  cfg.validate();
  return cfg;
}

CampaignSpec spec_from_key_values(const std::map<std::string, std::string>& kv) {
  CampaignSpec spec;
  spec.config = config_from_key_values(kv);
  nlohmann::json opts = spec.options;
  for (const auto& [key, value] : kv) {
    if (key == "trials") {
      spec.trials = parse_int(key, value);
    } else if (key == "seed_base") {
      spec.seed_base = parse_u64(key, value);
    } else if (key == "threads") {
      spec.threads = parse_int(key, value);
    } else if (key == "strategies") {
      spec.strategies.clear();
      for (const auto& s : split_list(value)) spec.strategies.push_back(parse_cache_strategy(s));
    } else if (key == "modes") {
      spec.modes.clear();
      for (const auto& s : split_list(value)) spec.modes.push_back(ccp::parse_mode(s));
    } else if (key == "requests") {
      if (value == "zipf") {
        spec.fixed_requests.reset();
      } else {
        RequestProfile req;
        for (const auto& s : split_list(value)) req.files.push_back(parse_int(key, s));
        spec.fixed_requests = req;
      }
    } else if (key.rfind("ccp.", 0) == 0) {
      const std::string name = key.substr(4);
      if (!opts.contains(name) || name == "mode") throw std::invalid_argument("unknown solver option: " + key);
      opts[name] = value_to_json(value);
    }
  }
  spec.options = opts.get<ccp::CcpOptions>();
  spec.validate();
  return spec;
}

void CampaignSpec::validate() const {
  config.validate();
  options.validate();
  if (trials < 1) throw std::invalid_argument("campaign needs at least one trial");
  if (modes.empty()) throw std::invalid_argument("campaign needs at least one mode");
  if (strategies.empty()) throw std::invalid_argument("campaign needs at least one cache strategy");
  if (threads < 0) throw std::invalid_argument("threads must be >= 0");
  if (fixed_requests) {
    if (fixed_requests->files.size() != static_cast<std::size_t>(config.num_users)) {
      throw std::invalid_argument("fixed request profile length must equal K");
    }
    for (int f : fixed_requests->files) {
      if (f < 1 || f > config.num_files) throw std::invalid_argument("requested file out of range");
    }
  }
}

void to_json(nlohmann::json& j, const CampaignSpec& spec) {
  nlohmann::json strategies = nlohmann::json::array();
  for (auto s : spec.strategies) strategies.push_back(to_string(s));
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : spec.modes) modes.push_back(ccp::to_string(m));
  j = nlohmann::json{{"config", spec.config},
                     {"trials", spec.trials},
                     {"seed_base", spec.seed_base},
                     {"strategies", strategies},
                     {"modes", modes},
                     {"requests", spec.fixed_requests ? nlohmann::json(spec.fixed_requests->files) : nlohmann::json("zipf")},
                     {"options", spec.options}};
}

void to_json(nlohmann::json& j, const TrialRecord& r) {
  j = nlohmann::json{{"trial", r.trial},
                     {"scenario_seed", r.scenario_seed},
                     {"solver_seed", r.solver_seed},
                     {"mode", ccp::to_string(r.mode)},
                     {"strategy", to_string(r.strategy)},
                     {"groups", r.groups},
                     {"status", r.status},
                     {"message", r.message},
                     {"power", r.power},
                     {"mbs_tx", r.power.mbs_tx},
                     {"iterations", r.iterations},
                     {"polish_iterations", r.polish_iterations},
                     {"backhauled_groups", r.backhauled_groups},
                     {"serving_links", r.serving_links},
                     {"audit_passed", r.audit_passed},
                     {"audit_worst", r.audit_worst},
                     {"objective_history", r.objective_history}};
}

std::uint64_t scenario_seed(const CampaignSpec& spec, int trial) {
  return derive_seed(spec.seed_base, {static_cast<std::uint64_t>(trial)});
}

std::uint64_t solver_seed(const CampaignSpec& spec, int trial, ccp::Mode mode, CacheStrategy strategy) {
  return derive_seed(spec.seed_base, {static_cast<std::uint64_t>(trial), tag_hash(ccp::to_string(mode)),
                                      tag_hash(to_string(strategy))});
}

Instance trial_instance(const CampaignSpec& spec, int trial, CacheStrategy strategy) {
  return make_instance(spec.config, strategy, scenario_seed(spec, trial), spec.fixed_requests);
}

TrialRecord run_trial(const CampaignSpec& spec, int trial, ccp::Mode mode, CacheStrategy strategy,
                      conic::ConicBackend& backend) {
  TrialRecord rec;
  rec.trial = trial;
  rec.mode = mode;
  rec.strategy = strategy;
  rec.scenario_seed = scenario_seed(spec, trial);
  rec.solver_seed = solver_seed(spec, trial, mode, strategy);
  try {
    const Instance inst = trial_instance(spec, trial, strategy);
    rec.groups = inst.num_groups();
    ccp::CcpOptions opts = spec.options;
    opts.mode = mode;
    const ccp::Solution sol = ccp::solve(inst, opts, backend, rec.solver_seed);
    rec.status = ccp::to_string(sol.status);
    rec.message = sol.message;
    rec.power = sol.power;
    rec.iterations = sol.iterations;
    rec.polish_iterations = sol.polish_iterations;
    rec.backhauled_groups = sol.backhauled_groups;
    rec.serving_links = sol.clustering.count();
    rec.audit_passed = sol.feasibility.feasible;
    rec.audit_worst = sol.feasibility.worst();
    rec.objective_history = sol.objective_history;
  } catch (const std::exception& e) {
    rec.status = "error";
    rec.message = e.what();
  }
  return rec;
}

int CampaignResult::error_count() const {
  return static_cast<int>(std::count_if(records.begin(), records.end(), [](const TrialRecord& r) { return r.errored(); }));
}

CampaignResult run_campaign(const CampaignSpec& spec, const BackendFactory& factory) {
  spec.validate();
  CampaignResult result;
  result.spec = spec;
  const std::size_t per_trial = spec.strategies.size() * spec.modes.size();
  const std::size_t total = static_cast<std::size_t>(spec.trials) * per_trial;
  result.records.resize(total);

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    const auto backend = factory();
    for (std::size_t i = next++; i < total; i = next++) {
      const int trial = static_cast<int>(i / per_trial);
      const std::size_t cell = i % per_trial;
      const CacheStrategy strategy = spec.strategies[cell / spec.modes.size()];
      const ccp::Mode mode = spec.modes[cell % spec.modes.size()];
      result.records[i] = run_trial(spec, trial, mode, strategy, *backend);
    }
  };
  int threads = spec.threads > 0 ? spec.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(total, 1)));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return result;
}

nlohmann::json CampaignResult::summary() const {
  nlohmann::json cells = nlohmann::json::array();
  for (auto strategy : spec.strategies) {
    for (auto mode : spec.modes) {
      std::map<std::string, int> counts;
      std::vector<double> total, sbs, mbs, sp, circuit, backhauled, iterations;
      int audit_failures = 0;
      for (const auto& r : records) {
        if (r.mode != mode || r.strategy != strategy) continue;
        ++counts[r.status];
        if (r.status == "converged" && !r.audit_passed) ++audit_failures;
        if (!r.usable()) continue;
        total.push_back(r.power.total);
        sbs.push_back(r.power.sbs_tx);
        mbs.push_back(r.power.mbs_tx);
        sp.push_back(r.power.signal_processing);
        circuit.push_back(r.power.circuit);
        backhauled.push_back(r.backhauled_groups);
        iterations.push_back(r.iterations);
      }
      cells.push_back({{"mode", ccp::to_string(mode)},
                       {"strategy", to_string(strategy)},
                       {"status_counts", counts},
                       {"converged_audit_failures", audit_failures},
                       {"usable", total.size()},
                       {"mean_total", finite_or_null(mean_of(total))},
                       {"mean_sbs_tx", finite_or_null(mean_of(sbs))},
                       {"mean_mbs_tx", finite_or_null(mean_of(mbs))},
                       {"mean_signal_processing", finite_or_null(mean_of(sp))},
                       {"mean_circuit", finite_or_null(mean_of(circuit))},
                       {"mean_backhauled_groups", finite_or_null(mean_of(backhauled))},
                       {"mean_iterations", finite_or_null(mean_of(iterations))}});
    }
  }
  return nlohmann::json{{"spec", spec}, {"records", records.size()}, {"errors", error_count()}, {"cells", cells}};
}

void write_artifacts(const CampaignResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&dir](const char* name) {
    std::ofstream os(dir / name);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    os.precision(12);
    return os;
  };

  {
    auto os = open("convergence.csv");
    os << "trial,mode,strategy,iteration,objective\n";
    for (const auto& r : result.records) {
      for (std::size_t i = 0; i < r.objective_history.size(); ++i) {
        os << r.trial << ',' << ccp::to_string(r.mode) << ',' << to_string(r.strategy) << ',' << i << ','
           << r.objective_history[i] << '\n';
      }
    }
  }
  {
    auto os = open("cdf.csv");
    os << "mode,strategy,rank,total_power,cdf\n";
    for (auto strategy : result.spec.strategies) {
      for (auto mode : result.spec.modes) {
        std::vector<double> powers;
        for (const auto& r : result.records) {
          if (r.mode == mode && r.strategy == strategy && r.usable()) powers.push_back(r.power.total);
        }
        std::sort(powers.begin(), powers.end());
        const auto n = powers.size();
        for (std::size_t k = 0; k < n; ++k) {
          os << ccp::to_string(mode) << ',' << to_string(strategy) << ',' << k + 1 << ',' << powers[k] << ','
             << static_cast<double>(k + 1) / static_cast<double>(n) << '\n';
        }
      }
    }
  }
  const nlohmann::json summary = result.summary();
  {
    auto os = open("breakdown.csv");
    os << "mode,strategy,usable,sbs_tx,mbs_tx,signal_processing,circuit,total,backhauled_groups\n";
    for (const auto& c : summary.at("cells")) {
      auto field = [&c](const char* key) {
        const auto& v = c.at(key);
        return v.is_null() ? std::string("nan") : v.dump();
      };
      os << c.at("mode").get<std::string>() << ',' << c.at("strategy").get<std::string>() << ','
         << c.at("usable").get<int>() << ',' << field("mean_sbs_tx") << ',' << field("mean_mbs_tx") << ','
         << field("mean_signal_processing") << ',' << field("mean_circuit") << ',' << field("mean_total") << ','
         << field("mean_backhauled_groups") << '\n';
    }
  }
  {
    auto os = open("summary.json");
    os << summary.dump(2) << '\n';
  }
  {
    auto os = open("trials.jsonl");
    for (const auto& r : result.records) os << nlohmann::json(r).dump() << '\n';
  }
}

}  // namespace wbcran::harness
