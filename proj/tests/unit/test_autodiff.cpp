#include <doctest.h>

#include <functional>
#include <random>

#include "icil/numerics/ops.hpp"
#include "support/reference.hpp"

using namespace icil::num;

namespace {

struct Input {
  Shape shape;
  std::vector<float> values;
};

// Checks the autodiff gradient of L = sum(op(x...) * w) against central
// differences of the double-precision reference of the same op.
void gradcheck(const std::vector<Input>& inputs, const std::function<Tensor(const std::vector<Tensor>&)>& op,
               const std::function<ref::Vec(const std::vector<ref::Vec>&)>& reference, std::uint64_t seed) {
  std::vector<Tensor> leaves;
  std::vector<ref::Vec> ref_inputs;
  for (const auto& in : inputs) {
    leaves.push_back(Tensor::from(in.shape, in.values, true));
    ref_inputs.push_back(ref::to_double(in.values));
  }
  auto out = op(leaves);
  std::mt19937_64 rng(seed);
  auto weights = ref::random_floats(out.numel(), rng);
  auto loss = sum(mul(out, Tensor::from(out.shape(), weights)));
  backward(loss);

  const ref::Vec w = ref::to_double(weights);
  auto f = [&](const std::vector<ref::Vec>& x) { return ref::dot(reference(x), w); };
  const auto expect_out = reference(ref_inputs);
  for (std::size_t i = 0; i < expect_out.size(); ++i) REQUIRE(out.data()[i] == doctest::Approx(expect_out[i]).epsilon(1e-4));
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const auto numeric = ref::fd_gradient(f, ref_inputs, which);
    REQUIRE(leaves[which].has_grad());
    CAPTURE(which);
    CHECK(ref::max_rel_error(leaves[which].grad(), numeric) < 1e-3);
  }
}

Input random_input(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  return {shape, ref::random_floats(shape_numel(shape), rng, lo, hi)};
}

}  // namespace

TEST_CASE("gradient of sum is all ones") {
  auto x = Tensor::from({2, 3}, {1, -2, 3, 4, 5, -6}, true);
  backward(sum(x));
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("gradient of sum(x*x) is 2x") {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 2.0f);
  CHECK(x.grad()[1] == 4.0f);
  CHECK(x.grad()[2] == 6.0f);
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0f)), ShapeError);
}

TEST_CASE("shared subexpressions accumulate gradients once per use") {
  auto x = Tensor::from({2}, {3, -1}, true);
  auto y = scale(x, 2.0f);
  backward(sum(add(y, y)));  // d/dx (4x) = 4
  CHECK(x.grad()[0] == 4.0f);
  CHECK(x.grad()[1] == 4.0f);
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = scale(x, 3.0f);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("primitive gradients match finite differences") {
  std::mt19937_64 rng(2024);

  SUBCASE("matmul shared and batched") {
    gradcheck({random_input({4, 3}, rng), random_input({3, 5}, rng)},
              [](const auto& x) { return matmul(x[0], x[1]); },
              [](const auto& x) { return ref::matmul(x[0], x[1], 4, 3, 5); }, 1);
    gradcheck({random_input({2, 3, 4}, rng), random_input({2, 4, 2}, rng)},
              [](const auto& x) { return matmul(x[0], x[1]); },
              [](const auto& x) {
                ref::Vec out;
                for (int s = 0; s < 2; ++s) {
                  auto c = ref::matmul(ref::Vec(x[0].begin() + s * 12, x[0].begin() + (s + 1) * 12),
                                       ref::Vec(x[1].begin() + s * 8, x[1].begin() + (s + 1) * 8), 3, 4, 2);
                  out.insert(out.end(), c.begin(), c.end());
                }
                return out;
              },
              2);
  }
  SUBCASE("add sub mul with broadcast") {
    gradcheck({random_input({3, 4}, rng), random_input({4}, rng)}, [](const auto& x) { return add(x[0], x[1]); },
              [](const auto& x) { return ref::add_rows(x[0], x[1]); }, 3);
    gradcheck({random_input({3, 4}, rng), random_input({3, 4}, rng)}, [](const auto& x) { return sub(x[0], x[1]); },
              [](const auto& x) {
                auto o = x[0];
                for (std::size_t i = 0; i < o.size(); ++i) o[i] -= x[1][i];
                return o;
              },
              4);
    gradcheck({random_input({2, 3, 4}, rng), random_input({3, 4}, rng)}, [](const auto& x) { return mul(x[0], x[1]); },
              [](const auto& x) {
                auto o = x[0];
                for (std::size_t i = 0; i < o.size(); ++i) o[i] *= x[1][i % 12];
                return o;
              },
              5);
  }
  SUBCASE("unary ops") {
    gradcheck({random_input({10}, rng, -3.0f, 3.0f)}, [](const auto& x) { return silu(x[0]); },
              [](const auto& x) { return ref::silu(x[0]); }, 6);
    gradcheck({random_input({10}, rng)}, [](const auto& x) { return scale(x[0], -2.5f); },
              [](const auto& x) {
                auto o = x[0];
                for (auto& v : o) v *= -2.5;
                return o;
              },
              7);
    // keep away from the kink at zero
    Input away = random_input({8}, rng, 0.1f, 1.0f);
    for (std::size_t i = 0; i < away.values.size(); i += 2) away.values[i] = -away.values[i];
    gradcheck({away}, [](const auto& x) { return icil::num::abs(x[0]); },
              [](const auto& x) {
                auto o = x[0];
                for (auto& v : o) v = std::fabs(v);
                return o;
              },
              8);
  }
  SUBCASE("softmax and rmsnorm") {
    gradcheck({random_input({3, 5}, rng, -2.0f, 2.0f)}, [](const auto& x) { return softmax(x[0]); },
              [](const auto& x) { return ref::softmax_rows(x[0], 5); }, 9);
    gradcheck({random_input({3, 6}, rng), random_input({6}, rng, 0.5f, 1.5f)},
              [](const auto& x) { return rmsnorm(x[0], x[1]); },
              [](const auto& x) { return ref::rmsnorm_rows(x[0], x[1]); }, 10);
  }
  SUBCASE("concat slice reshape index_rows") {
    gradcheck({random_input({2, 3}, rng), random_input({2, 2}, rng)},
              [](const auto& x) { return concat(std::vector<Tensor>{x[0], x[1]}, 1); },
              [](const auto& x) {
                ref::Vec o;
                for (int r = 0; r < 2; ++r) {
                  o.insert(o.end(), x[0].begin() + r * 3, x[0].begin() + r * 3 + 3);
                  o.insert(o.end(), x[1].begin() + r * 2, x[1].begin() + r * 2 + 2);
                }
                return o;
              },
              11);
    gradcheck({random_input({4, 3}, rng)}, [](const auto& x) { return slice(reshape(x[0], {2, 6}), 1, 2, 5); },
              [](const auto& x) {
                ref::Vec o;
                for (int r = 0; r < 2; ++r) o.insert(o.end(), x[0].begin() + r * 6 + 2, x[0].begin() + r * 6 + 5);
                return o;
              },
              12);
    gradcheck({random_input({4, 3}, rng)},
              [](const auto& x) { return index_rows(x[0], std::vector<int>{3, 1, 3}); },
              [](const auto& x) {
                ref::Vec o;
                for (int r : {3, 1, 3}) o.insert(o.end(), x[0].begin() + r * 3, x[0].begin() + r * 3 + 3);
                return o;
              },
              13);
  }
  SUBCASE("rope and causal attention") {
    std::vector<int> pos{0, 3, 4, 9};
    gradcheck({random_input({4, 8}, rng)}, [&](const auto& x) { return rope(x[0], pos, 2); },
              [&](const auto& x) { return ref::rope(x[0], pos, 2); }, 14);
    gradcheck({random_input({5, 8}, rng), random_input({5, 8}, rng), random_input({5, 8}, rng)},
              [](const auto& x) { return causal_attention(x[0], x[1], x[2], 2); },
              [](const auto& x) { return ref::causal_attention(x[0], x[1], x[2], 5, 5, 8, 2); }, 15);
    gradcheck({random_input({2, 8}, rng), random_input({6, 8}, rng), random_input({6, 8}, rng)},
              [](const auto& x) { return causal_attention(x[0], x[1], x[2], 4); },
              [](const auto& x) { return ref::causal_attention(x[0], x[1], x[2], 2, 6, 8, 4); }, 16);
  }
  SUBCASE("mean") {
    gradcheck({random_input({7}, rng)}, [](const auto& x) { return reshape(mean(x[0]), {1}); },
              [](const auto& x) {
                double s = 0.0;
                for (double v : x[0]) s += v;
                return ref::Vec{s / 7.0};
              },
              17);
  }
}

TEST_CASE("masked L1 value and gradients") {
  // Residuals kept at least 0.2 away from the kink so finite differences are valid.
  const std::vector<float> pred{0.5f, -0.3f, 0.9f, 0.1f, -0.7f, 0.4f};
  const std::vector<float> target{0.1f, 0.2f, 0.2f, 0.6f, 0.0f, -0.4f};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
  auto p = Tensor::from({2, 3}, pred, true);
  auto t = Tensor::from({2, 3}, target, true);
  auto loss = masked_l1(p, t, mask);
  const double expected = (0.4 + 0.7 + 0.5 + 0.8) / 4.0;
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-6));
  backward(loss);
  const std::vector<float> gp{0.25f, 0.0f, 0.25f, -0.25f, 0.0f, 0.25f};
  for (int i = 0; i < 6; ++i) {
    CHECK(p.grad()[i] == gp[i]);
    CHECK(t.grad()[i] == -gp[i]);
  }
  CHECK_THROWS_AS(masked_l1(p, t, std::vector<std::uint8_t>(6, 0)), std::invalid_argument);
  CHECK_THROWS_AS(masked_l1(p, t, std::vector<std::uint8_t>(5, 1)), ShapeError);
  CHECK_THROWS_AS(masked_l1(p, Tensor::zeros({3, 2}), mask), ShapeError);
}
