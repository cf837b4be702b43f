#include "wbcran/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "wbcran/seeding.hpp"

namespace wbcran {

namespace {

constexpr double kPi = 3.14159265358979323846;

Point uniform_in_disk(Rng& rng, double radius) {
  const double r = radius * std::sqrt(uniform01(rng));
  const double phi = 2.0 * kPi * uniform01(rng);
  return {r * std::cos(phi), r * std::sin(phi)};
}

Complex standard_complex_gaussian(Rng& rng) {
  const double re = standard_normal(rng);
  const double im = standard_normal(rng);
  return {re / std::sqrt(2.0), im / std::sqrt(2.0)};
}

double lognormal_shadow(Rng& rng, double std_db) {
  if (std_db <= 0.0) return 1.0;
  return std::pow(10.0, std_db * standard_normal(rng) / 10.0);
}

nlohmann::json complex_row(const CVector& v) {
  nlohmann::json row = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    row.push_back(v[i].real());
    row.push_back(v[i].imag());
  }
  return row;
}

CVector complex_from_row(const nlohmann::json& row) {
  if (row.size() % 2 != 0) throw std::invalid_argument("interleaved complex array has odd length");
  CVector v(static_cast<Eigen::Index>(row.size() / 2));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = Complex(row.at(2 * i).get<double>(), row.at(2 * i + 1).get<double>());
  }
  return v;
}

}  // namespace

std::string to_string(CacheStrategy s) {
  switch (s) {
    case CacheStrategy::PopC: return "popc";
    case CacheStrategy::RanC: return "ranc";
    case CacheStrategy::MosC: return "mosc";
  }
  return "unknown";
}

CacheStrategy parse_cache_strategy(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "popc") return CacheStrategy::PopC;
  if (n == "ranc") return CacheStrategy::RanC;
  if (n == "mosc") return CacheStrategy::MosC;
  throw std::invalid_argument("unknown cache strategy: " + name);
}

void SystemConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid SystemConfig: ") + what);
  };
  require(num_sbs >= 1, "M must be >= 1");
  require(num_users >= 1, "K must be >= 1");
  require(mbs_antennas >= 1, "N_m must be >= 1");
  require(sbs_antennas >= 1, "N_s must be >= 1");
  require(num_files >= 1, "F must be >= 1");
  require(cache_capacity >= 0 && cache_capacity <= num_files, "need 0 <= Z <= F");
  require(radius > 0.0, "radius must be > 0");
  require(min_distance > 0.0, "min_distance must be > 0");
  require(sbs_power_cap > 0.0 && mbs_power_cap > 0.0, "power caps must be > 0");
  require(decode_power >= 0.0, "P_sp must be >= 0");
  require(zipf_alpha >= 0.0, "alpha must be >= 0");
  require(rate_target > 0.0, "rate target must be > 0");
  require(shadow_db_bl >= 0.0 && shadow_db_al >= 0.0, "shadowing must be >= 0");
  const auto bs_count = static_cast<std::size_t>(num_sbs) + 1;
  require(eta.empty() || eta.size() == bs_count, "eta needs M+1 entries");
  require(circuit_power.empty() || circuit_power.size() == bs_count, "circuit power needs M+1 entries");
  for (double e : eta) require(e > 0.0, "eta must be > 0");
  for (double p : circuit_power) require(p >= 0.0, "circuit power must be >= 0");
  require(default_eta > 0.0, "eta must be > 0");
}

double SystemConfig::sinr_target() const { return std::exp2(rate_target) - 1.0; }

double SystemConfig::eta_of(int bs) const {
  return eta.empty() ? default_eta : eta.at(static_cast<std::size_t>(bs));
}

double SystemConfig::circuit_of(int bs) const {
  if (!circuit_power.empty()) return circuit_power.at(static_cast<std::size_t>(bs));
  return bs == 0 ? default_circuit_mbs : default_circuit_sbs;
}

double SystemConfig::shadow_std_bl() const {
  return shadow_db_is_variance ? std::sqrt(shadow_db_bl) : shadow_db_bl;
}

double SystemConfig::shadow_std_al() const {
  return shadow_db_is_variance ? std::sqrt(shadow_db_al) : shadow_db_al;
}

SystemConfig SystemConfig::paper() { return SystemConfig{}; }

SystemConfig SystemConfig::desk() {
  SystemConfig cfg;
  cfg.num_sbs = 6;
  cfg.num_users = 4;
  cfg.mbs_antennas = 8;
  cfg.sbs_antennas = 2;
  cfg.num_files = 20;
  cfg.cache_capacity = 3;
  return cfg;
}

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

CVector ChannelSet::access_block(int user, int sbs, int sbs_antennas) const {
  return access.at(static_cast<std::size_t>(user)).segment(sbs * sbs_antennas, sbs_antennas);
}

CachePlacement::CachePlacement(int num_sbs, int num_files, CacheStrategy strategy)
    : num_sbs_(num_sbs),
      num_files_(num_files),
      strategy_(strategy),
      bits_(static_cast<std::size_t>(num_sbs) * static_cast<std::size_t>(num_files), 0) {}

std::size_t CachePlacement::index(int sbs, int file) const {
  if (sbs < 0 || sbs >= num_sbs_ || file < 1 || file > num_files_) {
    throw std::out_of_range("cache index out of range");
  }
  return static_cast<std::size_t>(sbs) * static_cast<std::size_t>(num_files_) +
         static_cast<std::size_t>(file - 1);
}

int CachePlacement::row_count(int sbs) const {
  int n = 0;
  for (int f = 1; f <= num_files_; ++f) n += cached(sbs, f) ? 1 : 0;
  return n;
}

Topology generate_topology(const SystemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "topology"));
  Topology topo;
  topo.sbs.reserve(static_cast<std::size_t>(cfg.num_sbs));
  for (int m = 0; m < cfg.num_sbs; ++m) topo.sbs.push_back(uniform_in_disk(rng, cfg.radius));
  topo.users.reserve(static_cast<std::size_t>(cfg.num_users));
  for (int k = 0; k < cfg.num_users; ++k) topo.users.push_back(uniform_in_disk(rng, cfg.radius));
  return topo;
}

Complex channel_entry(double d, double beta, double chi, Complex g) {
  return std::sqrt(std::pow(d, -beta) * chi) * g;
}

ChannelSet generate_channels(const Topology& topo, const SystemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (topo.sbs.size() != static_cast<std::size_t>(cfg.num_sbs) ||
      topo.users.size() != static_cast<std::size_t>(cfg.num_users)) {
    throw std::invalid_argument("topology does not match config");
  }
  Rng rng(derive_seed(seed, "channels"));
  const int ns = cfg.sbs_antennas;
  ChannelSet ch;
  ch.noise_sbs = dbw_to_watts(cfg.noise_sbs_dbw);
  ch.noise_user = dbw_to_watts(cfg.noise_user_dbw);

  ch.backhaul.reserve(static_cast<std::size_t>(cfg.num_sbs));
  for (int m = 0; m < cfg.num_sbs; ++m) {
    const double d = std::max(cfg.min_distance, distance(topo.mbs, topo.sbs[static_cast<std::size_t>(m)]));
    const double chi = lognormal_shadow(rng, cfg.shadow_std_bl());
    CMatrix H(cfg.mbs_antennas, ns);
    for (int c = 0; c < ns; ++c) {
      for (int r = 0; r < cfg.mbs_antennas; ++r) {
        H(r, c) = channel_entry(d, cfg.beta_bl, chi, standard_complex_gaussian(rng));
      }
    }
    ch.backhaul.push_back(std::move(H));
  }

  ch.access.reserve(static_cast<std::size_t>(cfg.num_users));
  for (int k = 0; k < cfg.num_users; ++k) {
    CVector h(cfg.num_sbs * ns);
    for (int m = 0; m < cfg.num_sbs; ++m) {
      const double d = std::max(cfg.min_distance, distance(topo.sbs[static_cast<std::size_t>(m)],
                                                           topo.users[static_cast<std::size_t>(k)]));
      const double chi = lognormal_shadow(rng, cfg.shadow_std_al());
      for (int a = 0; a < ns; ++a) {
        h[m * ns + a] = channel_entry(d, cfg.beta_al, chi, standard_complex_gaussian(rng));
      }
    }
    ch.access.push_back(std::move(h));
  }
  return ch;
}

std::vector<double> zipf_probabilities(int num_files, double alpha) {
  if (num_files < 1) throw std::invalid_argument("zipf needs at least one file");
  std::vector<double> p(static_cast<std::size_t>(num_files));
  for (int f = 1; f <= num_files; ++f) p[static_cast<std::size_t>(f - 1)] = std::pow(f, -alpha);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& x : p) x /= total;
  return p;
}

RequestProfile sample_requests(const SystemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto p = zipf_probabilities(cfg.num_files, cfg.zipf_alpha);
  std::vector<double> cdf(p.size());
  std::partial_sum(p.begin(), p.end(), cdf.begin());
  Rng rng(derive_seed(seed, "requests"));
  RequestProfile req;
  req.files.reserve(static_cast<std::size_t>(cfg.num_users));
  for (int k = 0; k < cfg.num_users; ++k) {
    const double u = uniform01(rng);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    req.files.push_back(static_cast<int>(it - cdf.begin()) + 1);
  }
  return req;
}

GroupStructure build_groups(const RequestProfile& req) {
  GroupStructure g;
  g.group_of_user.resize(req.files.size());
  for (std::size_t k = 0; k < req.files.size(); ++k) {
    const int f = req.files[k];
    if (f < 1) throw std::invalid_argument("file ids are 1-based");
    auto it = std::find(g.group_file.begin(), g.group_file.end(), f);
    std::size_t l;
    if (it == g.group_file.end()) {
      l = g.group_file.size();
      g.group_file.push_back(f);
      g.members.emplace_back();
    } else {
      l = static_cast<std::size_t>(it - g.group_file.begin());
    }
    g.members[l].push_back(static_cast<int>(k));
    g.group_of_user[k] = static_cast<int>(l);
  }
  return g;
}

std::vector<int> popularity_order(const SystemConfig& cfg) {
  const auto p = zipf_probabilities(cfg.num_files, cfg.zipf_alpha);
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return p[static_cast<std::size_t>(a - 1)] > p[static_cast<std::size_t>(b - 1)];
  });
  return order;
}

CachePlacement place_cache(CacheStrategy strategy, const SystemConfig& cfg,
                           const std::vector<int>& popularity, std::uint64_t seed) {
  cfg.validate();
  const int M = cfg.num_sbs;
  const int F = cfg.num_files;
  const int Z = cfg.cache_capacity;
  CachePlacement S(M, F, strategy);
  if (Z == 0) return S;
  switch (strategy) {
    case CacheStrategy::PopC: {
      if (popularity.size() < static_cast<std::size_t>(Z)) {
        throw std::invalid_argument("popularity ranking shorter than cache capacity");
      }
      for (int m = 0; m < M; ++m) {
        for (int i = 0; i < Z; ++i) S.set(m, popularity[static_cast<std::size_t>(i)], true);
      }
      break;
    }
    case CacheStrategy::RanC: {
      Rng rng(derive_seed(seed, "ranc"));
      std::vector<int> files(static_cast<std::size_t>(F));
      for (int m = 0; m < M; ++m) {
        std::iota(files.begin(), files.end(), 1);
        // partial Fisher-Yates
        for (int i = 0; i < Z; ++i) {
          const int j = i + static_cast<int>(uniform01(rng) * (F - i));
          std::swap(files[static_cast<std::size_t>(i)], files[static_cast<std::size_t>(j)]);
          S.set(m, files[static_cast<std::size_t>(i)], true);
        }
      }
      break;
    }
    case CacheStrategy::MosC: {
      // [1..Z] + (m-1)Z, wrapped modulo F
      for (int m = 0; m < M; ++m) {
        for (int i = 0; i < Z; ++i) S.set(m, (m * Z + i) % F + 1, true);
      }
      break;
    }
  }
  return S;
}

Instance make_instance(const SystemConfig& cfg, CacheStrategy strategy, std::uint64_t seed,
                       const std::optional<RequestProfile>& fixed_requests) {
  cfg.validate();
  Instance inst;
  inst.cfg = cfg;
  inst.seed = seed;
  inst.topology = generate_topology(cfg, derive_seed(seed, "topology-stream"));
  inst.channels = generate_channels(inst.topology, cfg, derive_seed(seed, "channel-stream"));
  if (fixed_requests) {
    if (fixed_requests->files.size() != static_cast<std::size_t>(cfg.num_users)) {
      throw std::invalid_argument("fixed request profile length must equal K");
    }
    for (int f : fixed_requests->files) {
      if (f < 1 || f > cfg.num_files) throw std::invalid_argument("requested file out of range");
    }
    inst.requests = *fixed_requests;
  } else {
    inst.requests = sample_requests(cfg, derive_seed(seed, "request-stream"));
  }
  inst.groups = build_groups(inst.requests);
  inst.cache = place_cache(strategy, cfg, popularity_order(cfg), derive_seed(seed, "cache-stream"));
  return inst;
}

Instance with_cache(const Instance& inst, CacheStrategy strategy, int cache_capacity) {
  Instance out = inst;
  out.cfg.cache_capacity = cache_capacity;
  out.cfg.validate();
  out.cache = place_cache(strategy, out.cfg, popularity_order(out.cfg), derive_seed(inst.seed, "cache-stream"));
  return out;
}

void to_json(nlohmann::json& j, const SystemConfig& c) {
  j = nlohmann::json{{"M", c.num_sbs},
                     {"K", c.num_users},
                     {"N_m", c.mbs_antennas},
                     {"N_s", c.sbs_antennas},
                     {"F", c.num_files},
                     {"Z", c.cache_capacity},
                     {"radius", c.radius},
                     {"min_distance", c.min_distance},
                     {"beta_bl", c.beta_bl},
                     {"beta_al", c.beta_al},
                     {"shadow_db_bl", c.shadow_db_bl},
                     {"shadow_db_al", c.shadow_db_al},
                     {"shadow_db_is_variance", c.shadow_db_is_variance},
                     {"noise_sbs_dbw", c.noise_sbs_dbw},
                     {"noise_user_dbw", c.noise_user_dbw},
                     {"P_m", c.sbs_power_cap},
                     {"P_0", c.mbs_power_cap},
                     {"P_sp", c.decode_power},
                     {"eta", c.eta},
                     {"circuit_power", c.circuit_power},
                     {"default_eta", c.default_eta},
                     {"default_circuit_sbs", c.default_circuit_sbs},
                     {"default_circuit_mbs", c.default_circuit_mbs},
                     {"r_l", c.rate_target},
                     {"alpha", c.zipf_alpha}};
}

void from_json(const nlohmann::json& j, SystemConfig& c) {
  c = SystemConfig{};
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("M", c.num_sbs);
  opt("K", c.num_users);
  opt("N_m", c.mbs_antennas);
  opt("N_s", c.sbs_antennas);
  opt("F", c.num_files);
  opt("Z", c.cache_capacity);
  opt("radius", c.radius);
  opt("min_distance", c.min_distance);
  opt("beta_bl", c.beta_bl);
  opt("beta_al", c.beta_al);
  opt("shadow_db_bl", c.shadow_db_bl);
  opt("shadow_db_al", c.shadow_db_al);
  opt("shadow_db_is_variance", c.shadow_db_is_variance);
  opt("noise_sbs_dbw", c.noise_sbs_dbw);
  opt("noise_user_dbw", c.noise_user_dbw);
  opt("P_m", c.sbs_power_cap);
  opt("P_0", c.mbs_power_cap);
  opt("P_sp", c.decode_power);
  opt("eta", c.eta);
  opt("circuit_power", c.circuit_power);
  opt("default_eta", c.default_eta);
  opt("default_circuit_sbs", c.default_circuit_sbs);
  opt("default_circuit_mbs", c.default_circuit_mbs);
  opt("r_l", c.rate_target);
  opt("alpha", c.zipf_alpha);
}

void to_json(nlohmann::json& j, const Instance& inst) {
  auto point = [](const Point& p) { return nlohmann::json::array({p.x, p.y}); };
  nlohmann::json sbs = nlohmann::json::array();
  for (const auto& p : inst.topology.sbs) sbs.push_back(point(p));
  nlohmann::json users = nlohmann::json::array();
  for (const auto& p : inst.topology.users) users.push_back(point(p));

  nlohmann::json backhaul = nlohmann::json::array();
  for (const auto& H : inst.channels.backhaul) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < H.rows(); ++r) rows.push_back(complex_row(H.row(r).transpose()));
    backhaul.push_back(std::move(rows));
  }
  nlohmann::json access = nlohmann::json::array();
  for (const auto& h : inst.channels.access) access.push_back(complex_row(h));

  nlohmann::json cache = nlohmann::json::array();
  for (int m = 0; m < inst.cache.num_sbs(); ++m) {
    nlohmann::json row = nlohmann::json::array();
    for (int f = 1; f <= inst.cache.num_files(); ++f) row.push_back(inst.cache.cached(m, f) ? 1 : 0);
    cache.push_back(std::move(row));
  }

  j = nlohmann::json{{"config", inst.cfg},
                     {"seed", inst.seed},
                     {"topology", {{"mbs", point(inst.topology.mbs)}, {"sbs", sbs}, {"users", users}}},
                     {"channels",
                      {{"backhaul", backhaul},
                       {"access", access},
                       {"noise_sbs", inst.channels.noise_sbs},
                       {"noise_user", inst.channels.noise_user}}},
                     {"requests", inst.requests.files},
                     {"cache", {{"strategy", to_string(inst.cache.strategy())}, {"S", cache}}}};
}

void from_json(const nlohmann::json& j, Instance& inst) {
  inst = Instance{};
  j.at("config").get_to(inst.cfg);
  inst.cfg.validate();
  inst.seed = j.at("seed").get<std::uint64_t>();
  auto point = [](const nlohmann::json& p) { return Point{p.at(0).get<double>(), p.at(1).get<double>()}; };
  const auto& topo = j.at("topology");
  inst.topology.mbs = point(topo.at("mbs"));
  for (const auto& p : topo.at("sbs")) inst.topology.sbs.push_back(point(p));
  for (const auto& p : topo.at("users")) inst.topology.users.push_back(point(p));

  const auto& ch = j.at("channels");
  for (const auto& rows : ch.at("backhaul")) {
    CMatrix H(static_cast<Eigen::Index>(rows.size()), inst.cfg.sbs_antennas);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const CVector row = complex_from_row(rows[r]);
      if (row.size() != H.cols()) throw std::invalid_argument("backhaul row width mismatch");
      H.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    inst.channels.backhaul.push_back(std::move(H));
  }
  for (const auto& h : ch.at("access")) inst.channels.access.push_back(complex_from_row(h));
  inst.channels.noise_sbs = ch.at("noise_sbs").get<double>();
  inst.channels.noise_user = ch.at("noise_user").get<double>();

  inst.requests.files = j.at("requests").get<std::vector<int>>();
  inst.groups = build_groups(inst.requests);

  const auto& cache = j.at("cache");
  inst.cache = CachePlacement(inst.cfg.num_sbs, inst.cfg.num_files,
                              parse_cache_strategy(cache.at("strategy").get<std::string>()));
  const auto& S = cache.at("S");
  for (int m = 0; m < inst.cfg.num_sbs; ++m) {
    for (int f = 1; f <= inst.cfg.num_files; ++f) {
      inst.cache.set(m, f, S.at(static_cast<std::size_t>(m)).at(static_cast<std::size_t>(f - 1)).get<int>() != 0);
    }
  }
}

}  // namespace wbcran
