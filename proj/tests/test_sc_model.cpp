#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "xsfl/objective.hpp"
#include "xsfl/sc_model.hpp"

using namespace xsfl;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SCArchitecture small_arch() {
  SCArchitecture a;
  a.image = {2, 6, 6};
  a.conv = {{3, 3, 3, 1}, {4, 2, 2, 2}};
  a.semantic_length = 5;
  a.decoder_hidden = 6;
  a.classes = 3;
  a.hidden_slope = 0.1;
  return a;
}

std::vector<double> block(const ParamVector& p, const std::string& name) { return p.block(name).values(); }

// Layer-by-layer reference of the encoder for small_arch().
std::vector<double> oracle_encode(const ParamVector& p, const std::vector<double>& x) {
  auto h = oracle::conv2d(x, 2, 6, 6, block(p, "conv1.weight"), 3, 3, 3, 1, block(p, "conv1.bias"));
  for (auto& v : h) v = oracle::leaky(v, 0.1);
  h = oracle::conv2d(h, 3, 4, 4, block(p, "conv2.weight"), 4, 2, 2, 2, block(p, "conv2.bias"));
  for (auto& v : h) v = oracle::leaky(v, 0.1);
  return oracle::dense(h, block(p, "channel_enc.weight"), block(p, "channel_enc.bias"));
}

std::vector<double> oracle_decode(const ParamVector& p, const std::vector<double>& y) {
  auto h = oracle::dense(y, block(p, "channel_dec.weight"), block(p, "channel_dec.bias"));
  for (auto& v : h) v = oracle::leaky(v, 0.1);
  return oracle::dense(h, block(p, "semantic_dec.weight"), block(p, "semantic_dec.bias"));
}

ParamVector random_params(const SCModel& m, std::mt19937_64& rng) {
  ParamVector p(m.manifest());
  auto v = oracle::random_vector(rng, p.size(), -0.5, 0.5);
  std::copy(v.begin(), v.end(), p.values().begin());
  return p;
}

}  // namespace

TEST_CASE("default architecture", "[sc_model]") {
  SCModel m;
  CHECK(m.architecture().feature_shape() == Shape{16, 12, 12});
  // conv1 8*1*9+8, conv2 16*8*9+16, enc 16*2304+16, dec 32*16+32, cls 2*32+2
  CHECK(m.parameter_count() == 80 + 1168 + 36880 + 544 + 66);
}

TEST_CASE("architecture validation", "[sc_model]") {
  SCArchitecture a;
  a.semantic_length = 256;
  CHECK_THROWS_AS(SCModel(a), ParameterError);
  a = {};
  a.classes = 1;
  CHECK_THROWS_AS(SCModel(a), ParameterError);
  a = {};
  a.conv = {{4, 20, 3, 1}};
  CHECK_THROWS_AS(SCModel(a), DimensionError);
  a = {};
  a.hidden_slope = 1.0;
  CHECK_THROWS_AS(SCModel(a), ParameterError);
}

TEST_CASE("encode", "[sc_model]") {
  SCModel m(small_arch());
  std::mt19937_64 rng(17);
  SECTION("output length is L") {
    auto [x, a] = m.encode(Tensor({2, 6, 6}, oracle::random_vector(rng, 72)), m.init_params(1));
    CHECK(x.size() == 5);
    CHECK(a.activations.shape() == Shape{4, 2, 2});
  }
  SECTION("zero input through a zero-bias network gives zeros") {
    auto [x, a] = m.encode(Tensor({2, 6, 6}), m.init_params(3));
    CHECK(x.values == std::vector<double>(5, 0.0));
  }
  SECTION("matches the layer-by-layer oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      ParamVector p = random_params(m, rng);
      auto img = oracle::random_vector(rng, 72, 0, 1);
      auto [x, a] = m.encode(Tensor({2, 6, 6}, img), p);
      CHECK(oracle::max_rel_err(x.values, oracle_encode(p, img)) < 1e-12);
    }
  }
  SECTION("wrong input shape") {
    CHECK_THROWS_AS(m.encode(Tensor({1, 6, 6}), m.init_params(1)), DimensionError);
  }
}

TEST_CASE("transmit", "[sc_model]") {
  SCModel m(small_arch());
  SemanticVector x{{2, 4, -1, 0, 3}};
  CHECK(m.transmit(x, {1.0, 0.0}, 5) == x);
  CHECK(m.transmit(SemanticVector{{2, 4}}, {0.5, 0.0}, 5).values == std::vector<double>{1, 2});
  CHECK_THROWS_AS(m.transmit(x, {0.0, 0.0}, 5), ParameterError);
  CHECK_THROWS_AS(m.transmit(x, {1.0, -1.0}, 5), ParameterError);

  SECTION("noise std by Monte Carlo") {
    const ChannelSpec chan{1.0, 0.1};
    SemanticVector zero{std::vector<double>(5, 0.0)};
    std::vector<double> sum(5, 0.0), sq(5, 0.0);
    const int draws = 20000;  // 10^5 symbols
    for (int i = 0; i < draws; ++i) {
      auto y = m.transmit(zero, chan, derive_seed(77, {static_cast<std::uint64_t>(i)}));
      for (std::size_t c = 0; c < 5; ++c) {
        sum[c] += y.values[c];
        sq[c] += y.values[c] * y.values[c];
      }
    }
    for (std::size_t c = 0; c < 5; ++c) {
      const double mean = sum[c] / draws;
      const double sd = std::sqrt(sq[c] / draws - mean * mean);
      CHECK_THAT(sd, WithinRel(0.1, 0.03));
    }
  }
  SECTION("same seed, same noise") {
    CHECK(m.transmit(x, {1.0, 0.3}, 9) == m.transmit(x, {1.0, 0.3}, 9));
    CHECK_FALSE(m.transmit(x, {1.0, 0.3}, 9) == m.transmit(x, {1.0, 0.3}, 10));
  }
}

TEST_CASE("decode", "[sc_model]") {
  SCModel m(small_arch());
  std::mt19937_64 rng(23);
  CHECK(m.decode(SemanticVector{std::vector<double>(5, 0.0)}, m.init_params(2)) == Tensor({3}));
  for (int trial = 0; trial < 10; ++trial) {
    ParamVector p = random_params(m, rng);
    auto y = oracle::random_vector(rng, 5, -2, 2);
    CHECK(oracle::max_rel_err(m.decode(SemanticVector{y}, p).values(), oracle_decode(p, y)) < 1e-12);
  }
  CHECK_THROWS_AS(m.decode(SemanticVector{{1, 2}}, m.init_params(2)), DimensionError);
}

TEST_CASE("forward loss", "[sc_model]") {
  SCModel m(small_arch());
  std::mt19937_64 rng(29);
  Tensor img({2, 6, 6}, oracle::random_vector(rng, 72, 0, 1));

  SECTION("untrained symmetric net gives ln M") {
    ParamVector zero(m.manifest());
    CHECK_THAT(m.forward_loss(zero, img, 1, {}, 0), WithinRel(std::log(3.0), 1e-15));
  }
  SECTION("saturated correct class gives ~0") {
    ParamVector p(m.manifest());
    p[p.offset("semantic_dec.bias") + 2] = 1000;
    CHECK(m.forward_loss(p, img, 2, {}, 0) < 1e-12);
  }
  SECTION("matches encode, noisy channel and decode composed with CE") {
    const ChannelSpec chan{0.8, 0.3};
    for (int trial = 0; trial < 10; ++trial) {
      ParamVector p = random_params(m, rng);
      const std::uint64_t seed = rng();
      auto x = oracle_encode(p, img.values());
      Tensor n = channel_noise(5, chan, seed);
      for (std::size_t i = 0; i < 5; ++i) x[i] = 0.8 * x[i] + n[i];
      const double expect = oracle::cross_entropy(oracle_decode(p, x), trial % 3);
      CHECK(oracle::rel_err(m.forward_loss(p, img, trial % 3, chan, seed), expect) < 1e-12);
    }
  }
  SECTION("noise-free channel equals the network without the channel stage") {
    ParamVector p = random_params(m, rng);
    auto [x, a] = m.encode(img, p);
    CHECK(m.logits(p, img, {1.0, 0.0}, 4) == m.decode(x, p));
  }
  SECTION("deterministic given params, input and seed") {
    ParamVector p = random_params(m, rng);
    CHECK(m.forward_loss(p, img, 0, {1.0, 0.5}, 8) == m.forward_loss(p, img, 0, {1.0, 0.5}, 8));
  }
}

TEST_CASE("parameter gradient against finite differences", "[sc_model][gradcheck]") {
  SCModel m(small_arch());
  std::mt19937_64 rng(31);
  const ChannelSpec chan{1.0, 0.2};
  for (int trial = 0; trial < 5; ++trial) {
    ParamVector p = random_params(m, rng);
    Tensor img({2, 6, 6}, oracle::random_vector(rng, 72, 0, 1));
    const std::size_t label = trial % 3;
    std::vector<double> g(p.size());
    m.loss_and_gradient(p, img, label, chan, 42, g);
    std::vector<double> flat(p.values().begin(), p.values().end());
    auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& v) {
          auto x = oracle_encode(ParamVector(m.manifest(), v), img.values());
          Tensor n = channel_noise(5, chan, 42);
          for (std::size_t i = 0; i < 5; ++i) x[i] += n[i];
          return oracle::cross_entropy(oracle_decode(ParamVector(m.manifest(), v), x), label);
        },
        flat);
    CHECK(oracle::rel_err(g, fd) < 1e-4);
  }
}

TEST_CASE("batched evaluation agrees with per-sample evaluation", "[sc_model]") {
  SCModel m(small_arch());
  std::mt19937_64 rng(37);
  ParamVector p = random_params(m, rng);
  Dataset data;
  for (std::size_t i = 0; i < 6; ++i) data.push_back({Tensor({2, 6, 6}, oracle::random_vector(rng, 72, 0, 1)), i % 3});
  const ChannelSpec chan{1.0, 0.4};
  SCObjective obj(m, data, chan);
  auto losses = obj.sample_losses(p, 5);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  Batch b = make_batch(data, idx, 5);
  std::vector<double> g(p.size()), gi(p.size()), mean(p.size(), 0.0);
  const double batch_loss = m.loss_and_gradient(p, b, chan, g);
  double total = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double li = obj.sample_loss_and_gradient(p, i, 5, gi);
    CHECK(oracle::rel_err(li, losses[i]) < 1e-12);
    CHECK(oracle::rel_err(li, obj.sample_loss(p, i, 5)) < 1e-12);
    total += li / 6;
    for (std::size_t j = 0; j < gi.size(); ++j) mean[j] += gi[j] / 6;
  }
  CHECK(oracle::rel_err(batch_loss, total) < 1e-12);
  CHECK(oracle::rel_err(g, mean) < 1e-12);
  CHECK(oracle::rel_err(mean_loss(obj, p, 5), total) < 1e-12);
}

TEST_CASE("model serialization", "[sc_model][io]") {
  SCModel m(small_arch());
  std::mt19937_64 rng(41);
  ParamVector p = random_params(m, rng);
  std::stringstream ss;
  save_model(ss, m.architecture(), p);
  const std::string bytes = ss.str();
  auto [arch, q] = load_model(ss);
  CHECK(arch == m.architecture());
  REQUIRE(q.manifest() == p.manifest());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(q[i] == static_cast<double>(static_cast<float>(p[i])));

  SECTION("second save is byte-identical") {
    std::stringstream again;
    save_model(again, arch, q);
    CHECK(again.str() == bytes);
  }
  SECTION("truncated data") {
    std::stringstream cut(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_model(cut), IngestionError);
  }
  SECTION("bad magic") {
    std::stringstream bad("not-a-model 1\n");
    CHECK_THROWS_AS(load_model(bad), IngestionError);
  }
  SECTION("layout mismatch on save") {
    CHECK_THROWS_AS(save_model(ss, SCArchitecture{}, p), DimensionError);
  }
}
