#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "tica/optim.hpp"

namespace tica {
namespace {

ParamStore<float> two_tensor_store() {
  ParamStore<float> s;
  s.add_param("enc.w", ParamGroup::Encoder, ParamKind::ConvWeight, {3});
  s.add_param("dec.w", ParamGroup::Decoder, ParamKind::ConvWeight, {2});
  s.add_param("enc.scale", ParamGroup::Encoder, ParamKind::NormScale, {2});
  for (auto& p : s.params())
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = 0.5f + 0.25f * static_cast<float>(i);
  return s;
}

void set_grads(ParamStore<float>& s, float g) {
  for (auto& p : s.params())
    for (auto& v : p.grad) v = g;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto s = two_tensor_store();
  Adam opt(s, {.lr = 0.01}, UpdateScope::All);
  const auto before = s.params();
  set_grads(s, 3.0f);
  opt.step(s);
  for (std::size_t k = 0; k < before.size(); ++k)
    for (std::size_t i = 0; i < before[k].value.size(); ++i)
      EXPECT_NEAR(s.params()[k].value[i], before[k].value[i] - 0.01, 1e-6);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Adam, MatchesScalarReferenceOverManySteps) {
  ParamStore<float> s;
  s.add_param("w", ParamGroup::Encoder, ParamKind::ConvWeight, {1});
  s.params()[0].value[0] = 2.0f;
  const AdamConfig cfg{.lr = 0.05, .weight_decay = 0.1};
  Adam opt(s, cfg, UpdateScope::All);
  double w = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 50; ++t) {
    // gradient of w^2 evaluated at the float parameter
    const double g = 2.0 * s.params()[0].value[0];
    s.params()[0].grad[0] = static_cast<float>(g);
    opt.step(s);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w = static_cast<float>(w * (1 - 0.05 * 0.1) - 0.05 * mh / (std::sqrt(vh) + 1e-8));
    ASSERT_NEAR(s.params()[0].value[0], w, 1e-5) << "step " << t;
  }
}

TEST(Adam, OutOfScopeTensorsAreNeverWritten) {
  for (auto scope : {UpdateScope::Encoder, UpdateScope::Decoder, UpdateScope::NormAffine, UpdateScope::None}) {
    auto s = two_tensor_store();
    Adam opt(s, {.lr = 0.1, .weight_decay = 0.5}, scope);
    const auto before = s.params();
    set_grads(s, 1.0f);
    opt.step(s);
    for (std::size_t k = 0; k < before.size(); ++k) {
      const bool changed = s.params()[k].value != before[k].value;
      EXPECT_EQ(changed, in_scope(scope, before[k].group, before[k].kind)) << before[k].name << " " << to_string(scope);
    }
  }
}

TEST(Adam, ZeroLearningRateIsBitExact) {
  auto s = two_tensor_store();
  Adam opt(s, {.lr = 0.0, .weight_decay = 0.1}, UpdateScope::All);
  const auto before = s.params();
  for (int i = 0; i < 5; ++i) {
    set_grads(s, static_cast<float>(i) - 2.0f);
    opt.step(s);
  }
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(s.params()[k].value, before[k].value);
}

TEST(Adam, GradientClippingBoundsFirstMoment) {
  auto s = two_tensor_store();
  Adam opt(s, {.lr = 0.1, .grad_clip = 1.0}, UpdateScope::All);
  set_grads(s, 10.0f);
  opt.step(s);
  double sq = 0.0;
  for (const auto& m : opt.first_moments())
    for (double x : m) sq += (x / 0.1) * (x / 0.1);
  EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
}

TEST(Adam, RestoreContinuesTrajectory) {
  auto a = two_tensor_store();
  Adam oa(a, {.lr = 0.02}, UpdateScope::All);
  for (int i = 0; i < 3; ++i) {
    set_grads(a, 1.0f + static_cast<float>(i));
    oa.step(a);
  }
  auto b = a;
  Adam ob(b, {.lr = 0.02}, UpdateScope::All);
  ob.restore(oa.step_count(), oa.first_moments(), oa.second_moments());
  set_grads(a, -0.5f);
  set_grads(b, -0.5f);
  oa.step(a);
  ob.step(b);
  for (std::size_t k = 0; k < a.params().size(); ++k) EXPECT_EQ(a.params()[k].value, b.params()[k].value);
  EXPECT_THROW(ob.restore(1, {}, {}), std::invalid_argument);
}

TEST(Adam, RejectsInvalidConfig) {
  auto s = two_tensor_store();
  EXPECT_THROW(Adam(s, {.lr = -1.0}, UpdateScope::All), std::invalid_argument);
  EXPECT_THROW(Adam(s, {.beta1 = 1.0}, UpdateScope::All), std::invalid_argument);
}

TEST(CosineLr, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 100), 0.1);
  EXPECT_NEAR(cosine_lr(0.1, 50, 100), 0.05, 1e-15);
  EXPECT_EQ(cosine_lr(0.1, 100, 100), 0.0);
  for (std::uint64_t t = 1; t < 100; ++t) EXPECT_LT(cosine_lr(0.1, t, 100), cosine_lr(0.1, t - 1, 100));
}

TEST(UpdateScope, MembershipTable) {
  EXPECT_TRUE(in_scope(UpdateScope::Encoder, ParamGroup::Encoder, ParamKind::NormShift));
  EXPECT_FALSE(in_scope(UpdateScope::Encoder, ParamGroup::Decoder, ParamKind::ConvWeight));
  EXPECT_TRUE(in_scope(UpdateScope::NormAffine, ParamGroup::Decoder, ParamKind::NormScale));
  EXPECT_FALSE(in_scope(UpdateScope::NormAffine, ParamGroup::Encoder, ParamKind::ConvWeight));
  EXPECT_FALSE(in_scope(UpdateScope::None, ParamGroup::Encoder, ParamKind::ConvWeight));
  for (auto s : {UpdateScope::None, UpdateScope::Encoder, UpdateScope::Decoder, UpdateScope::All, UpdateScope::NormAffine})
    EXPECT_EQ(parse_update_scope(to_string(s)), s);
}

}  // namespace
}  // namespace tica
