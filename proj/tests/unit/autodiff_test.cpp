#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace evomoe;
using namespace evomoe::testing;

namespace {

const std::vector<GradCase>& cases() {
  static const std::vector<GradCase> all = gradient_cases();
  return all;
}

class GradientCase : public ::testing::TestWithParam<std::size_t> {};

}  // namespace

TEST_P(GradientCase, MatchesFiniteDifferences) {
  const auto& c = cases()[GetParam()];
  SCOPED_TRACE(c.name);
  const auto r = gradcheck(c, 40, 1000 + GetParam());
  EXPECT_EQ(r.probes, 40u);
  EXPECT_LT(r.max_rel_error, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCase, ::testing::Range<std::size_t>(0, gradient_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           std::string name = cases()[info.param].name;
                           for (auto& ch : name)
                             if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                           return name;
                         });

TEST(Autodiff, CaseNamesAreUnique) {
  std::set<std::string> names;
  for (const auto& c : cases()) EXPECT_TRUE(names.insert(c.name).second) << c.name;
}

TEST(Autodiff, RepeatedBackwardAccumulatesOnLeavesOnly) {
  std::mt19937_64 rng(7);
  const Tensor a = random_param({3, 4}, rng), b = random_param({4, 2}, rng);
  const Tensor loss = probe_loss(gelu(matmul(a, b)), 11);
  loss.backward();
  const std::vector<double> once(a.grad().begin(), a.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(a.grad()[i], 2.0 * once[i], 1e-14);
}

TEST(Autodiff, NoGradGuardBuildsNoGraph) {
  std::mt19937_64 rng(8);
  const Tensor a = random_param({2, 2}, rng);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(matmul(a, a).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(matmul(a, a).requires_grad());
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  std::mt19937_64 rng(9);
  const Tensor a = random_param({2, 3}, rng);
  const Tensor c = random_const({2, 3}, rng);
  sum(mul(a, c)).backward();
  EXPECT_FALSE(c.has_grad());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a.grad()[i], c.data()[i]);
}
