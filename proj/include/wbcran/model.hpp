#pragma once

// Physical quantities of the network: SINRs, access/backhaul rates, the
// total power model and an audit of a candidate solution against the
// original problem constraints.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "wbcran/scenario.hpp"
#include "wbcran/types.hpp"

namespace wbcran {

// Continuous decision variables: SBS beamformers w_l (stacked per-SBS
// blocks), MBS multicast beamformers v_l and backhaul bandwidth fractions.
struct BeamformerSet {
  std::vector<CVector> w;
  std::vector<CVector> v;
  std::vector<double> b;

  static BeamformerSet zeros(int num_groups, int num_sbs, int sbs_antennas, int mbs_antennas);
  static BeamformerSet zeros(const Instance& inst);

  int num_groups() const { return static_cast<int>(w.size()); }
  CVector block(int sbs, int group, int sbs_antennas) const;
  double block_power(int sbs, int group, int sbs_antennas) const;
  void set_block(int sbs, int group, int sbs_antennas, const CVector& value);

  // Throws std::invalid_argument on inconsistent shapes or b outside [0, 1].
  void validate(const Instance& inst) const;
};

class Clustering {
 public:
  Clustering() = default;
  Clustering(int num_sbs, int num_groups, bool value = false);

  static Clustering all_ones(int num_sbs, int num_groups) { return {num_sbs, num_groups, true}; }

  bool at(int sbs, int group) const { return bits_[index(sbs, group)] != 0; }
  void set(int sbs, int group, bool value) { bits_[index(sbs, group)] = value ? 1 : 0; }
  int num_sbs() const { return num_sbs_; }
  int num_groups() const { return num_groups_; }
  int count() const;

  bool operator==(const Clustering&) const = default;

 private:
  std::size_t index(int sbs, int group) const;

  int num_sbs_ = 0;
  int num_groups_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct PowerBreakdown {
  double sbs_tx = 0.0;
  double mbs_tx = 0.0;
  double signal_processing = 0.0;
  double circuit = 0.0;
  double total = 0.0;
};

struct ServingSets {
  std::vector<std::vector<int>> access;    // S_l^A
  std::vector<std::vector<int>> backhaul;  // S_l^B: serving SBSs without f_l cached
  std::vector<int> backhauled_groups;      // L_u
};

struct FeasibilityReport {
  double sinr = 0.0;       // worst relative shortfall (gamma - xi) / gamma
  double backhaul = 0.0;   // worst c(1-s) r - R^B (bit/s/Hz)
  double sbs_power = 0.0;  // worst sum_l |w_ml|^2 - P_m (W)
  double mbs_power = 0.0;  // sum_l |v_l|^2 - P_0 (W)
  double bandwidth = 0.0;  // worst simplex violation
  double off_cluster = 0.0;  // largest |w_ml|^2 with c_ml = 0 (W)
  double tolerance = 0.0;
  bool feasible = false;

  double worst() const;
};

double access_sinr(int user, const BeamformerSet& W, const ChannelSet& ch, const GroupStructure& groups);
double min_group_sinr(int group, const BeamformerSet& W, const ChannelSet& ch, const GroupStructure& groups);
double al_group_rate(int group, const BeamformerSet& W, const ChannelSet& ch, const GroupStructure& groups);

// |H_m^H v|^2 / z_m^2, the receive-combined backhaul SNR.
double bl_snr(int sbs, const CVector& v, const ChannelSet& ch);
double bl_rate(int sbs, const CVector& v, double b, const ChannelSet& ch);

PowerBreakdown total_power(const BeamformerSet& W, const Clustering& C, const CachePlacement& cache,
                           const GroupStructure& groups, const SystemConfig& cfg);

ServingSets uncached_serving_sets(const Clustering& C, const CachePlacement& cache, const GroupStructure& groups);

FeasibilityReport check_p0_feasibility(const BeamformerSet& W, const Clustering& C, const Instance& inst,
                                       double tol);

void to_json(nlohmann::json& j, const PowerBreakdown& p);
void to_json(nlohmann::json& j, const FeasibilityReport& r);
void to_json(nlohmann::json& j, const BeamformerSet& W);
void to_json(nlohmann::json& j, const Clustering& C);

}  // namespace wbcran
