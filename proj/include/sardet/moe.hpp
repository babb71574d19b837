#pragma once

#include <array>
#include <cstdint>

#include "sardet/experts.hpp"
#include "sardet/router.hpp"

// Shared + sparse aggregation: Y = S_shared(X) + sum_{e in T} w_e * E_e(X).
// Only selected experts are evaluated; an execution counter makes the lazy
// path auditable.

namespace sardet {

enum class PyramidLevel { p3 = 0, p4 = 1, p5 = 2 };

inline const char* level_name(PyramidLevel l) {
  switch (l) {
    case PyramidLevel::p3: return "p3";
    case PyramidLevel::p4: return "p4";
    case PyramidLevel::p5: return "p5";
  }
  return "?";
}

template <class Real>
struct LevelBankConfigT {
  PyramidLevel level = PyramidLevel::p3;
  std::vector<ExpertKind> roster;  // the sparse bank; the shared expert is implicit
  int k = 2;
  Real tau = Real(1);
  RouterVariant variant = RouterVariant::dual_branch;
};

// Scale-aware defaults: detail-preserving kinds at the shallow level,
// spectral kinds at the deep levels.
inline std::vector<ExpertKind> default_roster(PyramidLevel level) {
  if (level == PyramidLevel::p3)
    return {ExpertKind::wavelet, ExpertKind::wavelet, ExpertKind::spatial,
            ExpertKind::spatial};
  return {ExpertKind::frequency, ExpertKind::frequency, ExpertKind::hybrid,
          ExpertKind::hybrid};
}

template <class Real>
std::array<LevelBankConfigT<Real>, 3> default_banks(int k = 2, Real tau = Real(1),
                                                    RouterVariant v = RouterVariant::dual_branch) {
  std::array<LevelBankConfigT<Real>, 3> banks;
  for (int i = 0; i < 3; ++i) {
    banks[i].level = static_cast<PyramidLevel>(i);
    banks[i].roster = default_roster(banks[i].level);
    banks[i].k = k;
    banks[i].tau = tau;
    banks[i].variant = v;
  }
  return banks;
}

inline const std::vector<std::string>& expert_config_names() {
  static const std::vector<std::string> names{
      "shared_only", "p3_spatial", "p3_wavelet",  "p4_frequency",
      "p4_hybrid",   "p5_frequency", "p5_hybrid", "full"};
  return names;
}

// The eight expert-composition rows: single-expert rows make the named
// level's roster homogeneous; unmentioned levels keep the full default bank.
template <class Real>
std::array<LevelBankConfigT<Real>, 3> ablation_banks(const std::string& config_name,
                                                     int k = 2, Real tau = Real(1),
                                                     RouterVariant v = RouterVariant::dual_branch) {
  auto banks = default_banks<Real>(k, tau, v);
  auto homogeneous = [&](PyramidLevel level, ExpertKind kind) {
    auto& roster = banks[static_cast<int>(level)].roster;
    std::fill(roster.begin(), roster.end(), kind);
  };
  if (config_name == "full") return banks;
  if (config_name == "shared_only") {
    for (auto& b : banks) std::fill(b.roster.begin(), b.roster.end(), ExpertKind::shared);
    return banks;
  }
  if (config_name == "p3_spatial") { homogeneous(PyramidLevel::p3, ExpertKind::spatial); return banks; }
  if (config_name == "p3_wavelet") { homogeneous(PyramidLevel::p3, ExpertKind::wavelet); return banks; }
  if (config_name == "p4_frequency") { homogeneous(PyramidLevel::p4, ExpertKind::frequency); return banks; }
  if (config_name == "p4_hybrid") { homogeneous(PyramidLevel::p4, ExpertKind::hybrid); return banks; }
  if (config_name == "p5_frequency") { homogeneous(PyramidLevel::p5, ExpertKind::frequency); return banks; }
  if (config_name == "p5_hybrid") { homogeneous(PyramidLevel::p5, ExpertKind::hybrid); return banks; }
  fail("unknown expert configuration '", config_name,
       "' (expected one of: shared_only, p3_spatial, p3_wavelet, p4_frequency, "
       "p4_hybrid, p5_frequency, p5_hybrid, full)");
}

template <class Real>
struct MoeStatsT {
  std::vector<std::int64_t> exec_count;  // per sparse slot
  std::vector<double> weight_sum;        // cumulative routing weight per slot
  std::int64_t forwards = 0;
  std::vector<RouterDecisionT<Real>> decisions;

  void reset(int experts) {
    exec_count.assign(experts, 0);
    weight_sum.assign(experts, 0.0);
    forwards = 0;
    decisions.clear();
  }

  std::int64_t total_executions() const {
    std::int64_t s = 0;
    for (auto v : exec_count) s += v;
    return s;
  }

  // entropy of the empirical execution distribution, in nats; <= log E
  double execution_entropy() const {
    const double total = static_cast<double>(total_executions());
    if (total <= 0) return 0.0;
    double h = 0;
    for (auto v : exec_count) {
      if (v == 0) continue;
      const double p = static_cast<double>(v) / total;
      h -= p * std::log(p);
    }
    return h;
  }
};

template <class Real>
struct MoeLayerT {
  using Id = typename TapeT<Real>::Id;

  LevelBankConfigT<Real> bank;
  SharedExpertT<Real> shared;
  std::vector<ExpertT<Real>> sparse;
  RouterT<Real> router;
  MoeStatsT<Real> stats;

  void init(int channels, const LevelBankConfigT<Real>& cfg, const ExpertHyper& hp,
            Rng& rng) {
    require(!cfg.roster.empty(), "moe: empty expert roster");
    require(cfg.k >= 1 && cfg.k <= static_cast<int>(cfg.roster.size()),
            "moe: k=", cfg.k, " out of range for E=", cfg.roster.size());
    bank = cfg;
    shared.init(channels, hp, rng);
    sparse.clear();
    for (ExpertKind kind : cfg.roster)
      sparse.push_back(ExpertT<Real>::make(kind, channels, hp, rng));
    router.init(channels, static_cast<int>(sparse.size()), cfg.variant, rng);
    stats.reset(static_cast<int>(sparse.size()));
  }

  struct Forward {
    Id y;
    RouterDecisionT<Real> decision;
  };

  // weight_override (when given, length = |selected|) replaces the routed
  // gates with fixed constants; used by the aggregation-linearity checks
  Forward forward(TapeT<Real>& t, Id x, const std::vector<Real>* weight_override = nullptr) {
    auto routing = router.route(t, x, bank.k, bank.tau);
    Id y = shared.forward(t, x);
    const auto& sel = routing.decision.selected;
    for (std::size_t i = 0; i < sel.size(); ++i) {
      const int e = sel[i];
      Id out = sparse[e].forward(t, x);  // lazy: only selected slots run
      ++stats.exec_count[e];
      stats.weight_sum[e] += static_cast<double>(routing.decision.weights[i]);
      Id weighted = weight_override
                        ? t.scale(out, (*weight_override)[i])
                        : t.scale_by(out, routing.gates[i]);
      y = t.add(y, weighted);
    }
    ++stats.forwards;
    stats.decisions.push_back(routing.decision);
    return {y, routing.decision};
  }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    shared.visit(p + ".shared", fn);
    for (std::size_t i = 0; i < sparse.size(); ++i)
      sparse[i].visit(p + ".expert" + std::to_string(i), fn);
    router.visit(p + ".router", fn);
  }
};

}  // namespace sardet
