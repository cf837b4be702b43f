#pragma once

// Network scenario generation: topology, fading channels, Zipf requests,
// multicast groups and cache placement. Every generator is a pure function
// of its inputs and seed.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wbcran/types.hpp"

namespace wbcran {

enum class CacheStrategy { PopC, RanC, MosC };

std::string to_string(CacheStrategy s);
CacheStrategy parse_cache_strategy(const std::string& name);

struct SystemConfig {
  int num_sbs = 14;        // M
  int num_users = 8;       // K
  int mbs_antennas = 50;   // N_m
  int sbs_antennas = 2;    // N_s
  int num_files = 100;     // F
  int cache_capacity = 5;  // Z, files per SBS

  double radius = 250.0;  // cell radius e (m)
  double min_distance = 1.0;
  double beta_bl = 3.0;
  double beta_al = 3.2;
  double shadow_db_bl = 3.0;
  double shadow_db_al = 4.0;
  // Shadowing dB figures are standard deviations unless this is set, in
  // which case they are variances and the std is their square root.
  bool shadow_db_is_variance = false;
  double noise_sbs_dbw = -90.0;
  double noise_user_dbw = -65.0;

  double sbs_power_cap = 10.0;  // P_m (W)
  double mbs_power_cap = 50.0;  // P_0 (W)
  double decode_power = 1.0;    // P_sp (W)
  // Per-BS vectors of length M+1, index 0 is the MBS. Empty means defaults.
  std::vector<double> eta;
  std::vector<double> circuit_power;
  double default_eta = 4.0;
  double default_circuit_sbs = 1.0;
  double default_circuit_mbs = 10.0;

  double rate_target = 1.5;  // r_l (bit/s/Hz), common to all groups
  double zipf_alpha = 1.0;

  void validate() const;

  double sinr_target() const;  // 2^r - 1
  double eta_of(int bs) const;
  double circuit_of(int bs) const;
  double shadow_std_bl() const;
  double shadow_std_al() const;

  static SystemConfig paper();
  static SystemConfig desk();
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(const Point& a, const Point& b);

struct Topology {
  Point mbs;
  std::vector<Point> sbs;
  std::vector<Point> users;
};

struct ChannelSet {
  std::vector<CMatrix> backhaul;  // H_m, N_m x N_s
  std::vector<CVector> access;    // h_k, stacked M*N_s
  double noise_sbs = 0.0;         // z_m^2 (W)
  double noise_user = 0.0;        // sigma_k^2 (W)

  // Block of h_k belonging to SBS m.
  CVector access_block(int user, int sbs, int sbs_antennas) const;
};

struct RequestProfile {
  std::vector<int> files;  // 1-based file ids, one per user
};

struct GroupStructure {
  std::vector<int> group_file;            // f_l (1-based)
  std::vector<std::vector<int>> members;  // U_l
  std::vector<int> group_of_user;         // l_k

  int size() const { return static_cast<int>(group_file.size()); }
};

class CachePlacement {
 public:
  CachePlacement() = default;
  CachePlacement(int num_sbs, int num_files, CacheStrategy strategy);

  bool cached(int sbs, int file) const { return bits_[index(sbs, file)] != 0; }
  void set(int sbs, int file, bool value) { bits_[index(sbs, file)] = value ? 1 : 0; }
  int row_count(int sbs) const;
  int num_sbs() const { return num_sbs_; }
  int num_files() const { return num_files_; }
  CacheStrategy strategy() const { return strategy_; }

 private:
  std::size_t index(int sbs, int file) const;

  int num_sbs_ = 0;
  int num_files_ = 0;
  CacheStrategy strategy_ = CacheStrategy::PopC;
  std::vector<std::uint8_t> bits_;
};

Topology generate_topology(const SystemConfig& cfg, std::uint64_t seed);

// sqrt(d^-beta * chi) * g
Complex channel_entry(double d, double beta, double chi, Complex g);

ChannelSet generate_channels(const Topology& topo, const SystemConfig& cfg, std::uint64_t seed);

std::vector<double> zipf_probabilities(int num_files, double alpha);
RequestProfile sample_requests(const SystemConfig& cfg, std::uint64_t seed);

GroupStructure build_groups(const RequestProfile& req);

// Files ranked from most to least popular (1-based ids). Under Zipf the
// ranking is the identity; ties break toward the lower index.
std::vector<int> popularity_order(const SystemConfig& cfg);

CachePlacement place_cache(CacheStrategy strategy, const SystemConfig& cfg,
                           const std::vector<int>& popularity, std::uint64_t seed);

struct Instance {
  SystemConfig cfg;
  Topology topology;
  ChannelSet channels;
  RequestProfile requests;
  GroupStructure groups;
  CachePlacement cache;
  std::uint64_t seed = 0;

  int num_sbs() const { return cfg.num_sbs; }
  int num_users() const { return cfg.num_users; }
  int num_groups() const { return groups.size(); }
  double gamma() const { return cfg.sinr_target(); }
  // 1 - s_{m, f_l}
  bool uncached(int sbs, int group) const {
    return !cache.cached(sbs, groups.group_file[static_cast<std::size_t>(group)]);
  }
};

// Draws topology, channels and (unless given) requests from sub-seeds of
// `seed`, then groups users and places caches.
Instance make_instance(const SystemConfig& cfg, CacheStrategy strategy, std::uint64_t seed,
                       const std::optional<RequestProfile>& fixed_requests = std::nullopt);

// Same scenario with a different cache placement (used when comparing
// strategies or modes on one channel realization).
Instance with_cache(const Instance& inst, CacheStrategy strategy, int cache_capacity);

void to_json(nlohmann::json& j, const SystemConfig& cfg);
void from_json(const nlohmann::json& j, SystemConfig& cfg);
void to_json(nlohmann::json& j, const Instance& inst);
void from_json(const nlohmann::json& j, Instance& inst);

}  // namespace wbcran
