#include <cmath>

#include "doctest.h"
#include "eventmatch/enhancement.hpp"
#include "eventmatch/parallel.hpp"
#include "test_support.hpp"

using namespace eventmatch;
using eventmatch::testing::random_tensor;

namespace {

ModelConfig small_config(std::size_t blocks) {
  ModelConfig c;
  c.dim = 16;
  c.stem_channels = 8;
  c.block1_channels = 8;
  c.block2_channels = 8;
  c.enhancement.num_blocks = blocks;
  c.refine.gru_hidden = 8;
  c.refine.context_dim = 4;
  return c;
}

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t d, std::uint64_t seed) {
  return {random_tensor({h, w, d}, seed), 8};
}

}  // namespace

TEST_CASE("attention closed forms") {
  const auto v = random_tensor({1, 4}, 1);
  CHECK(attention(random_tensor({1, 4}, 2), random_tensor({1, 4}, 3), v) == v);

  SUBCASE("saturated query picks its key") {
    Tensor k({3, 4});
    for (std::size_t i = 0; i < 3; ++i) k(i, i) = 1.0f;
    Tensor q({1, 4});
    q(0, 0) = 2.0f * 60.0f;  // sqrt(d) * large
    const auto vv = random_tensor({3, 2}, 4);
    const auto out = attention(q, k, vv);
    CHECK(out(0, 0) == doctest::Approx(vv(0, 0)).epsilon(1e-6));
    CHECK(out(0, 1) == doctest::Approx(vv(0, 1)).epsilon(1e-6));
  }
  SUBCASE("identical keys average the values") {
    Tensor k({5, 3}, 0.7f);
    const auto vv = random_tensor({5, 2}, 5);
    const auto out = attention(random_tensor({2, 3}, 6), k, vv);
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 5; ++i) mean += vv(i, c) / 5.0;
      CHECK(out(0, c) == doctest::Approx(mean).epsilon(1e-5));
      CHECK(out(1, c) == doctest::Approx(mean).epsilon(1e-5));
    }
  }
  SUBCASE("rows are distributions") {
    const auto a = attention_weights(random_tensor({20, 8}, 7, 3.0), random_tensor({30, 8}, 8, 3.0));
    for (std::size_t i = 0; i < 20; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 30; ++j) {
        CHECK(a(i, j) >= 0.0f);
        s += a(i, j);
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
  CHECK_THROWS_AS(attention(random_tensor({2, 3}, 1), random_tensor({2, 4}, 1), random_tensor({2, 4}, 1)),
                  ShapeError);
  CHECK_THROWS_AS(attention(random_tensor({2, 3}, 1), random_tensor({2, 3}, 1), random_tensor({3, 4}, 1)),
                  ShapeError);
}

TEST_CASE("window partition indexing") {
  Tensor f({8, 8, 1});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) f(i, j, 0) = static_cast<float>(i * 8 + j);

  const auto whole = partition_windows(f, 1, false);
  REQUIRE(whole.tokens.size() == 1);
  CHECK(whole.tokens[0].reshaped({8, 8, 1}) == f);

  const auto p = partition_windows(f, 2, false);
  REQUIRE(p.tokens.size() == 4);
  CHECK(p.layout.window_h() == 4);
  const auto slot = locate_in_windows(p.layout, 5, 5, false);
  CHECK(slot.window_row == 1);
  CHECK(slot.window_col == 1);
  CHECK(slot.local_row == 1);
  CHECK(slot.local_col == 1);
  CHECK(p.tokens[3](1 * 4 + 1, 0) == 45.0f);

  const auto s = partition_windows(f, 2, true);
  CHECK(s.layout.shift_h == 2);
  CHECK(s.layout.shift_w == 2);
  const auto moved = locate_in_windows(s.layout, 0, 0, true);
  // (0, 0) sits at (6, 6) of the cycled map: window (1, 1), local (2, 2)
  CHECK(moved.window_row * 4 + moved.local_row == 6);
  CHECK(moved.window_col * 4 + moved.local_col == 6);
  CHECK(s.tokens[3](2 * 4 + 2, 0) == 0.0f);
  CHECK(s.tokens[0](0, 0) == 18.0f);  // cycled (0, 0) reads source (2, 2)
}

TEST_CASE("window partition round trip is bitwise") {
  std::uint64_t seed = 10;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {7, 13}, {16, 5}, {1, 1}, {32, 32}})
    for (std::size_t k : {1u, 2u, 3u, 8u})
      for (bool shifted : {false, true}) {
        const auto f = random_tensor({h, w, 3}, ++seed);
        const auto p = partition_windows(f, k, shifted);
        CHECK(p.layout.padded_h % (2 * k) == 0);
        CHECK(bitwise_equal(unpartition_windows(p), f));
      }
}

TEST_CASE("transformer symmetry") {
  set_deterministic(true);
  const auto cfg = small_config(6);
  const auto w = init_weights(3, cfg);
  const auto a = random_map(10, 12, 16, 20), b = random_map(10, 12, 16, 21);

  const auto same = transformer_block(a, a, w, cfg.enhancement, 1);
  CHECK(bitwise_equal(same.first.data, same.second.data));

  const auto ab = enhance(a, b, w, cfg.enhancement);
  const auto ba = enhance(b, a, w, cfg.enhancement);
  CHECK(bitwise_equal(ab.first.data, ba.second.data));
  CHECK(bitwise_equal(ab.second.data, ba.first.data));
  CHECK_FALSE(ab.first.data == a.data);
  set_deterministic(false);
}

TEST_CASE("enhance shapes and identity") {
  const auto cfg = small_config(2);
  const auto w = init_weights(4, cfg);
  const auto a = random_map(9, 14, 16, 30), b = random_map(9, 14, 16, 31);
  auto zero = cfg.enhancement;
  zero.num_blocks = 0;
  const auto id = enhance(a, b, w, zero);
  CHECK(id.first.data == a.data);
  CHECK(id.second.data == b.data);
  for (std::size_t k : {1u, 2u, 3u, 8u}) {
    auto e = cfg.enhancement;
    e.windows = k;
    const auto out = enhance(a, b, w, e);
    CHECK(out.first.data.dims() == a.data.dims());
    CHECK(out.second.data.dims() == b.data.dims());
  }
  CHECK_THROWS_AS(enhance(a, random_map(9, 13, 16, 1), w, cfg.enhancement), ShapeError);
  auto broken = w;
  broken.tensors["enh.block0.self.wq"] = Tensor({15, 16});
  CHECK_THROWS_AS(enhance(a, b, broken, cfg.enhancement), ShapeError);
}

TEST_CASE("zero attention projections reduce to the feed-forward path") {
  const auto cfg = small_config(1);
  auto w = init_weights(5, cfg);
  for (const char* sub : {"self", "cross"})
    for (const char* proj : {"wq", "wk", "wv", "wo"})
      w.tensors[std::string("enh.block0.") + sub + "." + proj] = Tensor({16, 16});
  const auto a = random_map(6, 6, 16, 40), b = random_map(6, 6, 16, 41);
  const auto out = transformer_block(a, b, w, cfg.enhancement, 0);

  // out = F + W2 gelu(W1 LN(F) + b1) + b2
  for (const auto& [in, got] : {std::pair{&a, &out.first}, std::pair{&b, &out.second}}) {
    Tensor h = linear(layer_norm(in->data, w.vec("enh.block0.ffn.norm.gamma"), w.vec("enh.block0.ffn.norm.beta"))
                          .reshaped({36, 16}),
                      w.get("enh.block0.ffn.w1"), w.vec("enh.block0.ffn.b1"));
    gelu_inplace(h);
    Tensor expect = linear(h, w.get("enh.block0.ffn.w2"), w.vec("enh.block0.ffn.b2")).reshaped({6, 6, 16});
    add_inplace(expect, in->data);
    CHECK(eventmatch::testing::max_abs_diff(expect, got->data) <= 1e-6);
  }
}

TEST_CASE("shifted windows mix across window borders") {
  auto influence_outside = [](std::size_t blocks) {
    const auto cfg = small_config(blocks);
    const auto w = init_weights(6, cfg);
    const auto a = random_map(8, 8, 16, 50), b = random_map(8, 8, 16, 51);
    auto a2 = a;
    a2.data(1, 1, 0) += 0.5f;  // inside window (0, 0)
    const auto base = enhance(a, b, w, cfg.enhancement);
    const auto moved = enhance(a2, b, w, cfg.enhancement);
    double worst = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        if (i < 4 && j < 4) continue;
        for (std::size_t c = 0; c < 16; ++c)
          worst = std::max(worst, static_cast<double>(std::abs(moved.first.data(i, j, c) - base.first.data(i, j, c))));
      }
    return worst;
  };
  CHECK(influence_outside(1) == 0.0);
  CHECK(influence_outside(2) > 1e-8);
}
