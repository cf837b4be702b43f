#pragma once

#include <vector>

#include "wbcran/model.hpp"
#include "wbcran/scenario.hpp"

namespace testing {

// Instance with caller-supplied channels: unit noise, every user in the
// group given by `group_of_user`, group l requesting file l + 1.
inline wbcran::Instance hand_instance(int num_sbs, int sbs_antennas, int mbs_antennas,
                                      const std::vector<wbcran::CVector>& access,
                                      const std::vector<wbcran::CMatrix>& backhaul,
                                      const std::vector<int>& group_of_user, double rate_target = 1.0) {
  using namespace wbcran;
  Instance inst;
  inst.cfg = SystemConfig::desk();
  inst.cfg.num_sbs = num_sbs;
  inst.cfg.sbs_antennas = sbs_antennas;
  inst.cfg.mbs_antennas = mbs_antennas;
  inst.cfg.num_users = static_cast<int>(access.size());
  inst.cfg.num_files = 10;
  inst.cfg.cache_capacity = 0;
  inst.cfg.rate_target = rate_target;
  inst.channels.access = access;
  inst.channels.backhaul = backhaul;
  inst.channels.noise_sbs = 1.0;
  inst.channels.noise_user = 1.0;
  for (int l : group_of_user) inst.requests.files.push_back(l + 1);
  inst.groups = build_groups(inst.requests);
  inst.cache = CachePlacement(num_sbs, inst.cfg.num_files, CacheStrategy::PopC);
  return inst;
}

inline wbcran::CVector cvec(std::initializer_list<wbcran::Complex> xs) {
  wbcran::CVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (const auto& x : xs) v[i++] = x;
  return v;
}

}  // namespace testing
