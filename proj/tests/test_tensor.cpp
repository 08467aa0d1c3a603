#include <cmath>

#include "doctest.h"
#include "eventmatch/tensor.hpp"
#include "test_support.hpp"

using namespace eventmatch;
using eventmatch::testing::max_abs_diff;
using eventmatch::testing::random_tensor;

TEST_CASE("tensor construction validates extents") {
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  t(1, 2, 3) = 7.0f;
  CHECK(t[23] == 7.0f);
}

TEST_CASE("matmul") {
  SUBCASE("identity . A = A") {
    Tensor eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0f;
    const auto a = random_tensor({3, 5}, 1);
    CHECK(matmul(eye, a) == a);
  }
  SUBCASE("hand product") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor b({2, 1}, {5, 6});
    const auto c = matmul(a, b);
    CHECK(c.dims() == Tensor::Shape{2, 1});
    CHECK(c(0, 0) == 17.0f);
    CHECK(c(1, 0) == 39.0f);
  }
  SUBCASE("row of ones times column of ones") {
    const auto c = matmul(Tensor({1, 8}, 1.0f), Tensor({8, 1}, 1.0f));
    CHECK(c(0, 0) == 8.0f);
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError); }
  SUBCASE("transposed variant agrees") {
    const auto a = random_tensor({4, 6}, 2), b = random_tensor({5, 6}, 3);
    Tensor bt({6, 5});
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) bt(j, i) = b(i, j);
    CHECK(max_abs_diff(matmul_transposed(a, b), matmul(a, bt)) < 1e-5);
  }
}

TEST_CASE("matmul associativity on random 16x16 triples") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = random_tensor({16, 16}, 100 + s), b = random_tensor({16, 16}, 200 + s),
               c = random_tensor({16, 16}, 300 + s);
    const auto lhs = matmul(matmul(a, b), c), rhs = matmul(a, matmul(b, c));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      num = std::max(num, std::abs(double(lhs[i]) - rhs[i]));
      den = std::max(den, std::abs(double(rhs[i])));
    }
    CHECK(num / den < 1e-5);
  }
}

TEST_CASE("softmax_lastdim") {
  SUBCASE("uniform") {
    const auto s = softmax_lastdim(Tensor({1, 3}, 0.0f));
    for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("large logits stay finite") {
    const auto s = softmax_lastdim(Tensor({1, 2}, {1000.0f, 0.0f}));
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] >= 0.0f);
    CHECK(s[1] < 1e-30);
  }
  SUBCASE("closed form [ln 2, 0]") {
    const auto s = softmax_lastdim(TensorD({1, 2}, {std::log(2.0), 0.0}));
    CHECK(s[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("rows sum to one and ignore per-row offsets") {
    auto t = random_tensor({32, 17}, 9, 5.0);
    const auto s = softmax_lastdim(t, 0.7f);
    auto shifted = t;
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t j = 0; j < 17; ++j) shifted(r, j) += static_cast<float>(r) * 3.5f - 20.0f;
    const auto s2 = softmax_lastdim(shifted, 0.7f);
    for (std::size_t r = 0; r < 32; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 17; ++j) sum += s(r, j);
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    CHECK(max_abs_diff(s, s2) < 1e-6);
  }
  SUBCASE("scale must be positive") { CHECK_THROWS_AS(softmax_lastdim(Tensor({1, 2}), 0.0f), DomainError); }
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity kernel") {
    const auto x = random_tensor({5, 6, 3}, 4);
    Tensor k({1, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) k(0, 0, c, c) = 1.0f;
    CHECK(conv2d(x, k, {}, {}) == x);
  }
  SUBCASE("3x3 box sum on constant input") {
    const auto y = conv2d(Tensor({6, 6, 1}, 1.0f), Tensor({3, 3, 1, 1}, 1.0f), {}, {1, 1});
    CHECK(y(2, 3, 0) == 9.0f);
    CHECK(y(0, 0, 0) == 4.0f);  // zero padding at the corner
  }
  SUBCASE("stride 2 extent") {
    const auto y = conv2d(Tensor({8, 8, 2}), Tensor({3, 3, 2, 4}), {}, {2, 1});
    CHECK(y.dims() == Tensor::Shape{4, 4, 4});
    CHECK(conv_output_extent(8, 3, 2, 1) == 4);
  }
  SUBCASE("matches the direct loop") {
    for (std::size_t stride : {1u, 2u, 4u})
      for (std::size_t pad : {0u, 1u, 3u}) {
        const auto x = random_tensor<double>({11, 9, 3}, 10 + stride + pad);
        const auto k = random_tensor<double>({3, 5, 3, 4}, 20 + stride + pad);
        if (9 + 2 * pad < 5) continue;
        CHECK(max_abs_diff(conv2d(x, k, {}, {stride, pad}),
                           eventmatch::testing::naive_conv2d(x, k, stride, pad)) < 1e-12);
      }
  }
  SUBCASE("bias and errors") {
    const std::vector<float> bias{1.0f, -2.0f};
    const auto y = conv2d(Tensor({2, 2, 1}), Tensor({1, 1, 1, 2}), std::span<const float>(bias), {});
    CHECK(y(1, 1, 0) == 1.0f);
    CHECK(y(1, 1, 1) == -2.0f);
    CHECK_THROWS_AS(conv2d(Tensor({4, 4, 2}), Tensor({3, 3, 3, 1}), {}, {}), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor({2, 2, 1}), Tensor({5, 5, 1, 1}), {}, {}), ShapeError);
  }
}

TEST_CASE("bilinear_sample") {
  SUBCASE("integer coordinates gather exactly") {
    const auto src = random_tensor({4, 5, 3}, 5);
    Tensor coords({4, 5, 2});
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        coords(i, j, 0) = static_cast<float>(4 - j);
        coords(i, j, 1) = static_cast<float>(3 - i);
      }
    const auto r = bilinear_sample(src, coords);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(r.valid(i, j) == 1);
        for (std::size_t c = 0; c < 3; ++c) CHECK(r.values(i, j, c) == src(3 - i, 4 - j, c));
      }
  }
  SUBCASE("midpoint between 2 and 4") {
    const Tensor src({1, 2, 1}, {2.0f, 4.0f});
    const auto r = bilinear_sample(src, Tensor({1, 1, 2}, {0.5f, 0.0f}));
    CHECK(r.values[0] == 3.0f);
    CHECK(r.valid[0] == 1);
  }
  SUBCASE("out of bounds is invalid and zero") {
    const Tensor src({1, 2, 1}, {2.0f, 4.0f});
    const auto r = bilinear_sample(src, Tensor({1, 1, 2}, {-1.0f, 0.0f}));
    CHECK(r.values[0] == 0.0f);
    CHECK(r.valid[0] == 0);
  }
  SUBCASE("linear in the source") {
    const auto a = random_tensor<double>({6, 7, 2}, 6), b = random_tensor<double>({6, 7, 2}, 7);
    auto coords = random_tensor<double>({5, 5, 2}, 8);
    for (auto& v : coords.values()) v = 2.5 + 2.0 * std::tanh(v);
    auto sum = a;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 2.0 * a[i] - 3.0 * b[i];
    const auto ra = bilinear_sample(a, coords), rb = bilinear_sample(b, coords),
               rs = bilinear_sample(sum, coords);
    for (std::size_t i = 0; i < rs.values.size(); ++i)
      CHECK(rs.values[i] == doctest::Approx(2.0 * ra.values[i] - 3.0 * rb.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("TNSR serialization") {
  SUBCASE("round trip is bit exact") {
    auto t = random_tensor({3, 4, 5}, 11);
    t[0] = -0.0f;
    t[1] = std::nextafter(1.0f, 2.0f);
    const auto back = read_tensor(write_tensor(t));
    CHECK(bitwise_equal(t, back));
  }
  SUBCASE("2x3 header is 20 bytes") {
    const auto bytes = write_tensor(Tensor({2, 3}));
    CHECK(tensor_header_size(2) == 4 + 4 + 4 + 8);
    CHECK(bytes.size() == 20 + 6 * 4);
    CHECK(bytes[0] == 'T');
    CHECK(bytes[3] == 'R');
    CHECK(bytes[8] == 2);    // ndim
    CHECK(bytes[12] == 2);   // dims[0]
    CHECK(bytes[16] == 3);   // dims[1]
  }
  SUBCASE("bad magic and truncation") {
    auto bytes = write_tensor(Tensor({2, 3}));
    auto bad = bytes;
    bad[3] = 'X';
    CHECK_THROWS_AS(read_tensor(bad), FormatError);
    bytes.pop_back();
    CHECK_THROWS_AS(read_tensor(bytes), FormatError);
  }
}

TEST_CASE("normalization helpers") {
  const auto x = random_tensor<double>({4, 4, 3}, 12, 3.0);
  const auto n = instance_norm(x);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      mean += n[i * 3 + c];
      sq += n[i * 3 + c] * n[i * 3 + c];
    }
    CHECK(std::abs(mean / 16) < 1e-12);
    CHECK(sq / 16 == doctest::Approx(1.0).epsilon(1e-5));
  }
  const std::vector<double> g(3, 2.0), b(3, 1.0);
  const auto l = layer_norm(x, std::span<const double>(g), std::span<const double>(b));
  double row = 0.0;
  for (std::size_t c = 0; c < 3; ++c) row += l[c];
  CHECK(row / 3 == doctest::Approx(1.0));
}
