#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "sardet/experts.hpp"
#include "test_util.hpp"

using namespace sardet;
using Catch::Approx;
using testutil::param_grad_error;
using testutil::random_tensor;
using testutil::tape_grad_error;

namespace {

const ExpertHyper kHyper{};

ExpertT<float> make_expert(ExpertKind k, int c, std::uint64_t seed) {
  Rng rng(seed);
  return ExpertT<float>::make(k, c, kHyper, rng);
}

Tensor run(ExpertT<float>& e, const Tensor& x) {
  Tape t;
  auto y = e.forward(t, t.constant(x));
  return t.value(y);
}

const std::vector<ExpertKind> kAllKinds{ExpertKind::shared, ExpertKind::wavelet,
                                        ExpertKind::spatial, ExpertKind::frequency,
                                        ExpertKind::hybrid};

}  // namespace

TEST_CASE("every expert preserves shape on fuzzed inputs") {
  Rng rng(41);
  for (ExpertKind kind : kAllKinds) {
    for (int rep = 0; rep < 6; ++rep) {
      const int n = 1 + rep % 2;
      const int c = (rep % 2 == 0) ? 4 : 8;
      const int hw = (rep % 3 == 0) ? 4 : 8;
      auto e = make_expert(kind, c, 50 + rep);
      Tensor x = random_tensor<float>({n, c, hw, hw}, rng);
      Tensor y = run(e, x);
      INFO(expert_kind_name(kind));
      REQUIRE(y.shape == x.shape);
      REQUIRE(y.all_finite());
    }
  }
}

TEST_CASE("zero-merge residual identity, all kinds") {
  Rng rng(43);
  for (ExpertKind kind : kAllKinds) {
    auto e = make_expert(kind, 4, 61);
    e.zero_merge();
    Tensor x = random_tensor<float>({1, 4, 8, 8}, rng);
    Tensor y = run(e, x);
    INFO(expert_kind_name(kind));
    REQUIRE(max_abs_diff(y.data, x.data) == 0.0f);
  }
}

TEST_CASE("experts are deterministic: identical forwards bitwise") {
  Rng rng(47);
  for (ExpertKind kind : kAllKinds) {
    auto e = make_expert(kind, 4, 71);
    Tensor x = random_tensor<float>({1, 4, 8, 8}, rng);
    Tensor y1 = run(e, x);
    Tensor y2 = run(e, x);
    REQUIRE(y1.data == y2.data);
  }
}

TEST_CASE("shared expert: gates stay inside (0,1)") {
  auto e = make_expert(ExpertKind::shared, 4, 73);
  auto& se = std::get<SharedExpertT<float>>(e.impl);
  Rng rng(48);
  Tensor x = random_tensor<float>({1, 4, 8, 8}, rng);
  Tensor y = run(e, x);
  // y - x = g (.) h with h = relu(conv(x)) >= 0 and g in (0,1)
  Tape t;
  Tensor h = t.value(t.relu(se.conv.forward(t, t.constant(x))));
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    const float delta = y.data[i] - x.data[i];
    if (h.data[i] == 0.0f) {
      REQUIRE(delta == Approx(0.0f).margin(1e-7));
    } else {
      REQUIRE(delta > 0.0f);
      REQUIRE(delta < h.data[i]);
    }
  }
}

TEST_CASE("wavelet expert: low-pass residual with huge thresholds") {
  auto e = make_expert(ExpertKind::wavelet, 1, 79);
  auto& we = std::get<WaveletExpertT<float>>(e.impl);
  std::fill(we.thr_pre.data.begin(), we.thr_pre.data.end(), 30.0f);  // softplus(30) ~ 30
  std::fill(we.scales.data.begin(), we.scales.data.end(), 1.0f);
  we.merge.zero_weights();
  we.merge.w.data[0] = 1.0f;  // identity 1x1 conv

  Tensor x({1, 1, 2, 2});
  x.data = {1, 2, 3, 4};
  Tensor y = run(e, x);
  // details zeroed, LL-only reconstruction adds the block mean 2.5 everywhere
  REQUIRE(y.data[0] == Approx(1.0f + 2.5f));
  REQUIRE(y.data[1] == Approx(2.0f + 2.5f));
  REQUIRE(y.data[2] == Approx(3.0f + 2.5f));
  REQUIRE(y.data[3] == Approx(4.0f + 2.5f));

  // constant input: details are exactly zero, soft-threshold is a no-op on them
  Tensor c = Tensor::full({1, 1, 4, 4}, 3.0f);
  Tensor yc = run(e, c);
  for (float v : yc.data) REQUIRE(v == Approx(6.0f).margin(1e-6));
}

TEST_CASE("frequency expert: all-pass gains act as identity branch") {
  auto e = make_expert(ExpertKind::frequency, 2, 83);
  auto& fe = std::get<FrequencyExpertT<float>>(e.impl);
  std::fill(fe.gains.data.begin(), fe.gains.data.end(), 1.0f);
  // identity-initialized merge: y = x + branch = 2x
  fe.merge.zero_weights();
  for (int c = 0; c < 2; ++c) fe.merge.w.at(c, c, 0, 0) = 1.0f;
  Rng rng(51);
  Tensor x = random_tensor<float>({1, 2, 8, 8}, rng);
  Tensor y = run(e, x);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    REQUIRE(y.data[i] == Approx(2.0f * x.data[i]).margin(1e-4));

  // DC-only gain keeps a constant field intact
  std::fill(fe.gains.data.begin(), fe.gains.data.end(), 0.0f);
  for (int c = 0; c < 2; ++c) fe.gains.at(0, c, 0, 0) = 1.0f;  // band 0 holds DC
  Tensor cst = Tensor::full({1, 2, 8, 8}, 1.5f);
  Tensor yc = run(e, cst);
  for (float v : yc.data) REQUIRE(v == Approx(3.0f).margin(1e-4));
}

TEST_CASE("radially symmetric real masking preserves conjugate symmetry") {
  Rng rng(53);
  Tensor x = random_tensor<float>({1, 2, 8, 8}, rng);
  auto spec = fft2(x);
  auto masks = radial_band_mask<float>(8, 8, 4);
  const float gains[4] = {1.0f, 0.3f, 0.0f, 0.7f};
  for (int c = 0; c < 2; ++c)
    for (int v = 0; v < 8; ++v)
      for (int u = 0; u < 8; ++u) {
        const std::int64_t k = spec.index(0, c, v, u);
        const float g = gains[band_of(masks, v, u)];
        spec.re[k] *= g;
        spec.im[k] *= g;
      }
  auto back = ifft2(spec);
  REQUIRE(max_abs(back.im) < 1e-4f);
}

TEST_CASE("hybrid expert: all-pass branches average to the input") {
  auto e = make_expert(ExpertKind::hybrid, 2, 89);
  auto& he = std::get<HybridExpertT<float>>(e.impl);
  std::fill(he.freq.gains.data.begin(), he.freq.gains.data.end(), 1.0f);
  std::fill(he.wavelet.scales.data.begin(), he.wavelet.scales.data.end(), 1.0f);
  std::fill(he.wavelet.thr_pre.data.begin(), he.wavelet.thr_pre.data.end(), -40.0f);
  he.merge.zero_weights();
  for (int c = 0; c < 2; ++c) he.merge.w.at(c, c, 0, 0) = 1.0f;
  Rng rng(54);
  Tensor x = random_tensor<float>({1, 2, 8, 8}, rng);
  Tensor y = run(e, x);
  // both cores pass x through; the average is x, so y = 2x
  for (std::size_t i = 0; i < x.data.size(); ++i)
    REQUIRE(y.data[i] == Approx(2.0f * x.data[i]).margin(2e-4));
}

TEST_CASE("gradient checks: every expert, input path") {
  Rng rng(57);
  for (ExpertKind kind : kAllKinds) {
    auto e = make_expert(kind, 4, 90 + static_cast<int>(kind));
    // raise soft thresholds off the dead-zone edge: the FD oracle cannot
    // measure subgradients for coefficients straddling |x| = t
    if (auto* we = std::get_if<WaveletExpertT<float>>(&e.impl))
      std::fill(we->thr_pre.data.begin(), we->thr_pre.data.end(), 0.5f);
    if (auto* he = std::get_if<HybridExpertT<float>>(&e.impl))
      std::fill(he->wavelet.thr_pre.data.begin(), he->wavelet.thr_pre.data.end(), 0.5f);
    INFO(expert_kind_name(kind));
    for (int rep = 0; rep < 4; ++rep) {
      Tensor x = random_tensor<float>({1, 4, 8, 8}, rng);
      REQUIRE(tape_grad_error<float>(
                  [&](Tape& t, Tape::Id xi) { return e.forward(t, xi); }, x, 1e-3f,
                  testutil::ErrNorm::l2) < 1e-2);
    }
  }
}

TEST_CASE("gradient checks: expert parameter paths") {
  Rng rng(59);
  Tensor x = random_tensor<float>({1, 4, 8, 8}, rng);

  constexpr auto kL2 = testutil::ErrNorm::l2;

  auto wav = make_expert(ExpertKind::wavelet, 4, 97);
  auto& we = std::get<WaveletExpertT<float>>(wav.impl);
  // lift the thresholds off the dead-zone edge so few coefficients sit on the kink
  std::fill(we.thr_pre.data.begin(), we.thr_pre.data.end(), 0.5f);
  auto wav_build = [&](Tape& t) { return wav.forward(t, t.constant(x)); };
  REQUIRE(param_grad_error<float>(wav_build, we.scales, 1e-2f, kL2) < 1e-2);
  REQUIRE(param_grad_error<float>(wav_build, we.thr_pre, 1e-2f, kL2) < 1e-2);
  REQUIRE(param_grad_error<float>(wav_build, we.merge.w, 1e-2f, kL2) < 1e-2);

  auto freq = make_expert(ExpertKind::frequency, 4, 98);
  auto& fe = std::get<FrequencyExpertT<float>>(freq.impl);
  auto freq_build = [&](Tape& t) { return freq.forward(t, t.constant(x)); };
  REQUIRE(param_grad_error<float>(freq_build, fe.gains, 1e-2f, kL2) < 1e-2);

  auto sh = make_expert(ExpertKind::shared, 4, 99);
  auto& se = std::get<SharedExpertT<float>>(sh.impl);
  auto sh_build = [&](Tape& t) { return sh.forward(t, t.constant(x)); };
  REQUIRE(param_grad_error<float>(sh_build, se.fc2.w, 1e-2f, kL2) < 1e-2);
  REQUIRE(param_grad_error<float>(sh_build, se.fc1.w, 1e-3f, kL2) < 1e-2);

  auto sp = make_expert(ExpertKind::spatial, 4, 100);
  auto& pe = std::get<SpatialExpertT<float>>(sp.impl);
  auto sp_build = [&](Tape& t) { return sp.forward(t, t.constant(x)); };
  REQUIRE(param_grad_error<float>(sp_build, pe.primary.w, 1e-3f, kL2) < 1e-2);
  REQUIRE(param_grad_error<float>(sp_build, pe.merge.w, 1e-2f, kL2) < 1e-2);
}

TEST_CASE("expert contract errors") {
  Rng rng(61);
  REQUIRE_THROWS_AS(make_expert(ExpertKind::shared, 6, 1), Error);   // 6 % 4 != 0
  REQUIRE_THROWS_AS(make_expert(ExpertKind::spatial, 5, 1), Error);  // odd C

  auto wav = make_expert(ExpertKind::wavelet, 4, 2);
  Tensor odd = random_tensor<float>({1, 4, 5, 6}, rng);
  REQUIRE_THROWS_AS(run(wav, odd), Error);  // odd H

  auto freq = make_expert(ExpertKind::frequency, 4, 3);
  Tensor np2 = random_tensor<float>({1, 4, 6, 6}, rng);
  REQUIRE_THROWS_AS(run(freq, np2), Error);  // non-power-of-two
}
