#include "wbcran/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wbcran {

namespace {

nlohmann::json interleave(const CVector& v) {
  nlohmann::json row = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    row.push_back(v[i].real());
    row.push_back(v[i].imag());
  }
  return row;
}

}  // namespace

BeamformerSet BeamformerSet::zeros(int num_groups, int num_sbs, int sbs_antennas, int mbs_antennas) {
  BeamformerSet W;
  W.w.assign(static_cast<std::size_t>(num_groups), CVector::Zero(num_sbs * sbs_antennas));
  W.v.assign(static_cast<std::size_t>(num_groups), CVector::Zero(mbs_antennas));
  W.b.assign(static_cast<std::size_t>(num_groups), 0.0);
  return W;
}

BeamformerSet BeamformerSet::zeros(const Instance& inst) {
  return zeros(inst.num_groups(), inst.cfg.num_sbs, inst.cfg.sbs_antennas, inst.cfg.mbs_antennas);
}

CVector BeamformerSet::block(int sbs, int group, int sbs_antennas) const {
  return w.at(static_cast<std::size_t>(group)).segment(sbs * sbs_antennas, sbs_antennas);
}

double BeamformerSet::block_power(int sbs, int group, int sbs_antennas) const {
  return w.at(static_cast<std::size_t>(group)).segment(sbs * sbs_antennas, sbs_antennas).squaredNorm();
}

void BeamformerSet::set_block(int sbs, int group, int sbs_antennas, const CVector& value) {
  w.at(static_cast<std::size_t>(group)).segment(sbs * sbs_antennas, sbs_antennas) = value;
}

void BeamformerSet::validate(const Instance& inst) const {
  const auto L = static_cast<std::size_t>(inst.num_groups());
  if (w.size() != L || v.size() != L || b.size() != L) {
    throw std::invalid_argument("beamformer set has wrong group count");
  }
  const Eigen::Index nw = inst.cfg.num_sbs * inst.cfg.sbs_antennas;
  for (std::size_t l = 0; l < L; ++l) {
    if (w[l].size() != nw) throw std::invalid_argument("access beamformer has wrong length");
    if (v[l].size() != inst.cfg.mbs_antennas) throw std::invalid_argument("backhaul beamformer has wrong length");
    if (!(b[l] >= 0.0 && b[l] <= 1.0)) throw std::invalid_argument("bandwidth fraction outside [0, 1]");
  }
}

Clustering::Clustering(int num_sbs, int num_groups, bool value)
    : num_sbs_(num_sbs),
      num_groups_(num_groups),
      bits_(static_cast<std::size_t>(num_sbs) * static_cast<std::size_t>(num_groups), value ? 1 : 0) {}

std::size_t Clustering::index(int sbs, int group) const {
  if (sbs < 0 || sbs >= num_sbs_ || group < 0 || group >= num_groups_) {
    throw std::out_of_range("clustering index out of range");
  }
  return static_cast<std::size_t>(group) * static_cast<std::size_t>(num_sbs_) + static_cast<std::size_t>(sbs);
}

int Clustering::count() const {
  int n = 0;
  for (auto bit : bits_) n += bit;
  return n;
}

double FeasibilityReport::worst() const {
  return std::max({sinr, backhaul, sbs_power, mbs_power, bandwidth, off_cluster});
}

double access_sinr(int user, const BeamformerSet& W, const ChannelSet& ch, const GroupStructure& groups) {
  const auto k = static_cast<std::size_t>(user);
  const CVector& h = ch.access.at(k);
  const auto own = static_cast<std::size_t>(groups.group_of_user.at(k));
  double signal = 0.0;
  double interference = 0.0;
  for (std::size_t j = 0; j < W.w.size(); ++j) {
    const double g = std::norm(h.dot(W.w[j]));  // |h^H w_j|^2
    if (j == own) {
      signal = g;
    } else {
      interference += g;
    }
  }
  return signal / (interference + ch.noise_user);
}

double min_group_sinr(int group, const BeamformerSet& W, const ChannelSet& ch, const GroupStructure& groups) {
  double best = std::numeric_limits<double>::infinity();
  for (int k : groups.members.at(static_cast<std::size_t>(group))) {
    best = std::min(best, access_sinr(k, W, ch, groups));
  }
  return best;
}

double al_group_rate(int group, const BeamformerSet& W, const ChannelSet& ch, const GroupStructure& groups) {
  return std::log2(1.0 + min_group_sinr(group, W, ch, groups));
}

double bl_snr(int sbs, const CVector& v, const ChannelSet& ch) {
  const CMatrix& H = ch.backhaul.at(static_cast<std::size_t>(sbs));
  return (H.adjoint() * v).squaredNorm() / ch.noise_sbs;
}

double bl_rate(int sbs, const CVector& v, double b, const ChannelSet& ch) {
  if (b < 0.0 || b > 1.0) throw std::invalid_argument("bandwidth fraction outside [0, 1]");
  if (b == 0.0) return 0.0;
  return b * std::log2(1.0 + bl_snr(sbs, v, ch));
}

PowerBreakdown total_power(const BeamformerSet& W, const Clustering& C, const CachePlacement& cache,
                           const GroupStructure& groups, const SystemConfig& cfg) {
  const int M = cfg.num_sbs;
  const int L = groups.size();
  if (W.num_groups() != L || C.num_groups() != L || C.num_sbs() != M) {
    throw std::invalid_argument("total_power: inconsistent shapes");
  }
  PowerBreakdown p;
  for (int l = 0; l < L; ++l) {
    for (int m = 0; m < M; ++m) {
      p.sbs_tx += cfg.eta_of(m + 1) * W.block_power(m, l, cfg.sbs_antennas);
      if (C.at(m, l) && !cache.cached(m, groups.group_file[static_cast<std::size_t>(l)])) {
        p.signal_processing += cfg.decode_power;
      }
    }
    p.mbs_tx += cfg.eta_of(0) * W.v[static_cast<std::size_t>(l)].squaredNorm();
  }
  for (int bs = 0; bs <= M; ++bs) p.circuit += cfg.circuit_of(bs);
  p.total = p.sbs_tx + p.mbs_tx + p.signal_processing + p.circuit;
  return p;
}

ServingSets uncached_serving_sets(const Clustering& C, const CachePlacement& cache, const GroupStructure& groups) {
  const int L = groups.size();
  if (C.num_groups() != L || C.num_sbs() != cache.num_sbs()) {
    throw std::invalid_argument("uncached_serving_sets: inconsistent shapes");
  }
  ServingSets sets;
  sets.access.resize(static_cast<std::size_t>(L));
  sets.backhaul.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const int f = groups.group_file[static_cast<std::size_t>(l)];
    for (int m = 0; m < C.num_sbs(); ++m) {
      if (!C.at(m, l)) continue;
      sets.access[static_cast<std::size_t>(l)].push_back(m);
      if (!cache.cached(m, f)) sets.backhaul[static_cast<std::size_t>(l)].push_back(m);
    }
    if (!sets.backhaul[static_cast<std::size_t>(l)].empty()) sets.backhauled_groups.push_back(l);
  }
  return sets;
}

FeasibilityReport check_p0_feasibility(const BeamformerSet& W, const Clustering& C, const Instance& inst,
                                       double tol) {
  W.validate(inst);
  const int M = inst.cfg.num_sbs;
  const int L = inst.num_groups();
  if (C.num_sbs() != M || C.num_groups() != L) throw std::invalid_argument("clustering has wrong shape");
  const double gamma = inst.gamma();
  const int ns = inst.cfg.sbs_antennas;

  FeasibilityReport r;
  r.tolerance = tol;
  for (int k = 0; k < inst.num_users(); ++k) {
    const double xi = access_sinr(k, W, inst.channels, inst.groups);
    r.sinr = std::max(r.sinr, (gamma - xi) / gamma);
  }
  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    for (int m = 0; m < M; ++m) {
      if (!C.at(m, l)) r.off_cluster = std::max(r.off_cluster, W.block_power(m, l, ns));
      if (!C.at(m, l) || !inst.uncached(m, l)) continue;
      const double rb = bl_rate(m, W.v[ul], W.b[ul], inst.channels);
      r.backhaul = std::max(r.backhaul, inst.cfg.rate_target - rb);
    }
  }
  for (int m = 0; m < M; ++m) {
    double p = 0.0;
    for (int l = 0; l < L; ++l) p += W.block_power(m, l, ns);
    r.sbs_power = std::max(r.sbs_power, p - inst.cfg.sbs_power_cap);
  }
  double pv = 0.0;
  double bsum = 0.0;
  for (int l = 0; l < L; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    pv += W.v[ul].squaredNorm();
    bsum += W.b[ul];
    r.bandwidth = std::max({r.bandwidth, -W.b[ul], W.b[ul] - 1.0});
  }
  r.mbs_power = std::max(0.0, pv - inst.cfg.mbs_power_cap);
  r.bandwidth = std::max(r.bandwidth, bsum - 1.0);
  r.sinr = std::max(r.sinr, 0.0);
  r.backhaul = std::max(r.backhaul, 0.0);
  r.sbs_power = std::max(r.sbs_power, 0.0);
  r.feasible = r.worst() <= tol;
  return r;
}

void to_json(nlohmann::json& j, const PowerBreakdown& p) {
  j = nlohmann::json{{"sbs_tx", p.sbs_tx},
                     {"mbs_tx", p.mbs_tx},
                     {"signal_processing", p.signal_processing},
                     {"circuit", p.circuit},
                     {"total", p.total}};
}

void to_json(nlohmann::json& j, const FeasibilityReport& r) {
  j = nlohmann::json{{"sinr", r.sinr},         {"backhaul", r.backhaul},   {"sbs_power", r.sbs_power},
                     {"mbs_power", r.mbs_power}, {"bandwidth", r.bandwidth}, {"off_cluster", r.off_cluster},
                     {"tolerance", r.tolerance},
                     {"feasible", r.feasible}};
}

void to_json(nlohmann::json& j, const BeamformerSet& W) {
  nlohmann::json w = nlohmann::json::array();
  for (const auto& x : W.w) w.push_back(interleave(x));
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : W.v) v.push_back(interleave(x));
  j = nlohmann::json{{"w", w}, {"v", v}, {"b", W.b}};
}

void to_json(nlohmann::json& j, const Clustering& C) {
  j = nlohmann::json::array();
  for (int m = 0; m < C.num_sbs(); ++m) {
    nlohmann::json row = nlohmann::json::array();
    for (int l = 0; l < C.num_groups(); ++l) row.push_back(C.at(m, l) ? 1 : 0);
    j.push_back(std::move(row));
  }
}

}  // namespace wbcran
