#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "support.hpp"
#include "tica/adapt.hpp"
#include "tica/checkpoint.hpp"
#include "tica/cli/commands.hpp"
#include "tica/geometry.hpp"
#include "tica/losses.hpp"
#include "tica/metrics.hpp"

namespace tica {
namespace {

namespace fs = std::filesystem;

// Pinned tolerances and budgets.
constexpr double kGradRelTol = 1e-3;
constexpr double kFdStep = 1e-4;
// smaller step for the network so rectifier kinks are rarely crossed
constexpr double kModelFdStep = 1e-6;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kRoundTripPx = 0.5;
constexpr double kConstantTol = 1e-6;
constexpr double kLinearityTol = 1e-6;
constexpr int kGeometryCases = 1000;
constexpr double kGeometryBudgetSeconds = 30.0;
constexpr int kBerOraclePairs = 200;
constexpr int kSeedsRequiredToImprove = 4;
constexpr double kMinMeanReduction = 0.10;
constexpr double kEndToEndBudgetSeconds = 600.0;
constexpr double kCombinedSlack = 0.05;
constexpr int kSweepEpochs = 10;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::map<int, Verdict>& verdicts() {
  static std::map<int, Verdict> v;
  return v;
}

void record(int id, bool pass, const std::string& detail) {
  verdicts()[id] = {pass, detail};
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(pass) << "criterion " << id << ": " << detail;
}

class Summary : public ::testing::Environment {
 public:
  void TearDown() override {
    std::printf("\nacceptance summary\n");
    for (int id = 1; id <= 9; ++id) {
      const auto it = verdicts().find(id);
      if (it == verdicts().end()) std::printf("  criterion %d: NOT RUN\n", id);
      else std::printf("  criterion %d: %s  %s\n", id, it->second.pass ? "PASS" : "FAIL", it->second.detail.c_str());
    }
  }
};

const auto* const kSummary = ::testing::AddGlobalTestEnvironment(new Summary);

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

// ---------------------------------------------------------------- criterion 1

std::vector<double> numeric(ShadowMask x, const std::function<double(const ShadowMask&)>& f) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + kFdStep;
    const double up = f(x);
    x[i] = keep - kFdStep;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * kFdStep);
  }
  return g;
}

std::vector<double> flat(const ShadowMask& m) { return {m.storage().begin(), m.storage().end()}; }

CanonicalPrediction whole(const ShadowMask& v) { return {v, BoolMask(v.rows(), v.cols(), 1, 1)}; }

double model_gradient_error(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_size = {16, 16};
  Rng rng(seed);
  Network<double> net(cfg, rng);
  for (auto& p : net.store().params())
    if (p.kind != ParamKind::ConvWeight)
      for (auto& v : p.value) v += rng.uniform(-0.2, 0.2);
  const ForwardOptions opts{true, false, -1.0};
  const auto x = make_batch<double>(test::random_images(rng, 2, 16));
  const auto cache = net.forward(x, opts);
  Tensor4<double> r(cache.probs.n, cache.probs.h, cache.probs.w, 1);
  for (auto& v : r.data) v = rng.uniform(-1, 1);
  net.store().zero_grad();
  const auto dx = net.backward(cache, r, true);
  auto loss = [&](const Tensor4<double>& in) {
    const auto c = net.forward(in, opts);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r.data[i] * c.probs.data[i];
    return s;
  };
  double worst = 0.0;
  for (auto& p : net.store().params()) {
    std::vector<double> ana, num;
    const std::size_t step = std::max<std::size_t>(1, p.value.size() / 16);
    for (std::size_t j = 0; j < p.value.size(); j += step) {
      const double keep = p.value[j];
      p.value[j] = keep + kModelFdStep;
      const double up = loss(x);
      p.value[j] = keep - kModelFdStep;
      const double down = loss(x);
      p.value[j] = keep;
      ana.push_back(p.grad[j]);
      num.push_back((up - down) / (2 * kModelFdStep));
    }
    worst = std::max(worst, test::relative_error(ana, num));
  }
  std::vector<double> ana, num;
  for (std::size_t j = 0; j < x.size(); j += 5) {
    auto xp = x, xm = x;
    xp.data[j] += kModelFdStep;
    xm.data[j] -= kModelFdStep;
    ana.push_back(dx.data[j]);
    num.push_back((loss(xp) - loss(xm)) / (2 * kModelFdStep));
  }
  return std::max(worst, test::relative_error(ana, num));
}

TEST(Acceptance, C1_GradientCorrectness) {
  const auto t0 = Clock::now();
  Rng rng(1);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& k, double e) { worst[k] = std::max(worst[k], e); };
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 16;
    const auto gt = test::random_binary(rng, n, n, 0.3);
    const auto pred = test::random_mask(rng, n, n, 0.02, 0.98);
    for (auto mode : {BbceWeighting::InverseFrequency, BbceWeighting::Literal}) {
      note(mode == BbceWeighting::Literal ? "bbce-literal" : "bbce",
           test::relative_error(flat(bbce(pred, gt, mode).grad_y1),
                                numeric(pred, [&](const ShadowMask& p) { return bbce(p, gt, mode).value; })));
    }
    ShadowMask a(n, n), b(n, n);
    for (std::size_t i = 0; i < a.size(); ++i) {
      // clear of the 0.5 threshold so finite steps keep the region masks fixed
      a[i] = rng.bernoulli(0.5) ? rng.uniform(0.55, 0.98) : rng.uniform(0.02, 0.45);
      b[i] = rng.bernoulli(0.5) ? rng.uniform(0.55, 0.98) : rng.uniform(0.02, 0.45);
    }
    const auto mask = intersection_masks(whole(a), whole(b));
    const auto fc = fc_loss(whole(a), whole(b), mask.fg);
    note("fc", test::relative_error(flat(fc.grad_y1), numeric(a, [&](const ShadowMask& v) {
                                      return fc_loss(whole(v), whole(b), mask.fg).value;
                                    })));
    note("fc", test::relative_error(flat(fc.grad_y2), numeric(b, [&](const ShadowMask& v) {
                                      return fc_loss(whole(a), whole(v), mask.fg).value;
                                    })));
    const auto bc = bc_loss(whole(a), whole(b), mask.bg);
    note("bc", test::relative_error(flat(bc.grad_y1), numeric(a, [&](const ShadowMask& v) {
                                      return bc_loss(whole(v), whole(b), mask.bg).value;
                                    })));
    note("bc", test::relative_error(flat(bc.grad_y2), numeric(b, [&](const ShadowMask& v) {
                                      return bc_loss(whole(a), whole(v), mask.bg).value;
                                    })));
    const LossWeights w{0.5, 1.0};
    const auto t = tica_loss(whole(a), whole(b), w);
    note("tica", test::relative_error(flat(t.total.grad_y1), numeric(a, [&](const ShadowMask& v) {
                                        return tica_loss(whole(v), whole(b), w).total.value;
                                      })));
    note("tica", test::relative_error(flat(t.total.grad_y2), numeric(b, [&](const ShadowMask& v) {
                                        return tica_loss(whole(a), whole(v), w).total.value;
                                      })));
    note("entropy", test::relative_error(flat(entropy_loss(pred).grad_y1),
                                         numeric(pred, [](const ShadowMask& p) { return entropy_loss(p).value; })));
  }
  for (std::uint64_t s = 1; s <= 2; ++s) note("model", model_gradient_error(100 + s));
  const double seconds = since(t0);
  bool ok = seconds < kGradBudgetSeconds;
  std::ostringstream os;
  for (const auto& [k, e] : worst) {
    os << k << " " << fmt("%.1e", e) << ", ";
    ok &= e <= kGradRelTol;
  }
  os << fmt("max allowed %.0e; %.1f s < %.0f s", kGradRelTol, seconds, kGradBudgetSeconds);
  record(1, ok, os.str());
}

// ---------------------------------------------------------------- criterion 2

TEST(Acceptance, C2_GeometrySuite) {
  const auto t0 = Clock::now();
  Rng rng(2);
  double round_trip = 0.0, constant = 0.0, linear = 0.0;
  int mask_violations = 0;
  for (int i = 0; i < kGeometryCases; ++i) {
    const Size2 canon{static_cast<int>(rng.uniform_int(16, 64)), static_cast<int>(rng.uniform_int(16, 64))};
    AugmentConfig cfg = AugmentConfig::defaults(canon);
    if (rng.bernoulli(0.5)) cfg.output_size = {};
    const auto t = sample_view_transform(rng, cfg);
    const Size2 view = t.output_size.rows > 0 ? t.output_size : t.crop_size;

    const auto p = test::random_mask(rng, view.rows, view.cols), q = test::random_mask(rng, view.rows, view.cols);
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    ShadowMask mix(view);
    for (std::size_t k = 0; k < mix.size(); ++k) mix[k] = alpha * p[k] + beta * q[k];
    const auto cp = to_canonical(p, t), cq = to_canonical(q, t), cm = to_canonical(mix, t);
    const float c = static_cast<float>(rng.uniform());
    const auto img = apply_transform(ImageTensor(canon, 3, c), t);
    const auto cc = to_canonical(ShadowMask(view, 1, c), t);
    for (std::size_t k = 0; k < img.size(); ++k) constant = std::max(constant, std::abs(double(img[k]) - c));
    for (std::size_t k = 0; k < cm.values.size(); ++k) {
      if (!cm.validity[k]) continue;
      linear = std::max(linear, std::abs(cm.values[k] - (alpha * cp.values[k] + beta * cq.values[k])));
      constant = std::max(constant, std::abs(cc.values[k] - double(c)));
      const Coord2 pt{double(k / canon.cols), double(k % canon.cols)};
      const auto back = t.to_canonical(t.to_view(pt));
      round_trip = std::max({round_trip, std::abs(back.row - pt.row), std::abs(back.col - pt.col)});
    }

    const auto t2 = sample_view_transform(rng, cfg);
    const Size2 view2 = t2.output_size.rows > 0 ? t2.output_size : t2.crop_size;
    const auto a = to_canonical(test::random_mask(rng, view.rows, view.cols), t);
    const auto b = to_canonical(test::random_mask(rng, view2.rows, view2.cols), t2);
    const auto m = intersection_masks(a, b, rng.uniform(0.1, 0.9));
    for (std::size_t k = 0; k < m.fg.size(); ++k) {
      if (m.fg[k] && m.bg[k]) ++mask_violations;
      if ((m.fg[k] || m.bg[k]) && !(a.validity[k] && b.validity[k])) ++mask_violations;
    }
  }
  const double seconds = since(t0);
  const bool ok = round_trip <= kRoundTripPx && constant <= kConstantTol && linear <= kLinearityTol &&
                  mask_violations == 0 && seconds < kGeometryBudgetSeconds;
  record(2, ok,
         fmt("%d cases: round trip %.2g px <= %.1f, constant %.1e <= %.0e, linearity %.1e <= %.0e, mask violations %d; "
             "%.1f s < %.0f s",
             kGeometryCases, round_trip, kRoundTripPx, constant, kConstantTol, linear, kLinearityTol, mask_violations,
             seconds, kGeometryBudgetSeconds));
}

// ---------------------------------------------------------------- criterion 3

TEST(Acceptance, C3_LossIdentities) {
  Rng rng(3);
  int failures = 0;
  std::vector<std::string> notes;
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    if (symmetric_kl(a, b) != symmetric_kl(b, a)) ++failures;
  }
  if (failures) notes.push_back("sym-KL asymmetric");
  for (int i = 0; i < 100; ++i) {
    const auto y1 = whole(test::random_mask(rng, 8, 8)), y2 = whole(test::random_mask(rng, 8, 8));
    const auto m = image_cast<std::uint8_t>(test::random_binary(rng, 8, 8));
    auto c1 = y1, c2 = y2;
    for (std::size_t k = 0; k < 64; ++k) {
      c1.values[k] = 1 - y1.values[k];
      c2.values[k] = 1 - y2.values[k];
    }
    if (std::abs(bc_loss(y1, y2, m).value - fc_loss(c1, c2, m).value) > 1e-12) {
      ++failures;
      notes.push_back("fc/bc complement");
      break;
    }
    if (tica_loss(y1, y1, {0.5, 1.0}).total.value != 0.0) {
      ++failures;
      notes.push_back("identical views nonzero");
      break;
    }
  }
  const CanonicalPrediction hi{ShadowMask(6, 6, 1, 0.9), BoolMask(6, 6, 1, 1)};
  const CanonicalPrediction lo{ShadowMask(6, 6, 1, 0.1), BoolMask(6, 6, 1, 1)};
  const auto empty = tica_loss(hi, lo, {0.5, 1.0});
  bool zero_grad = empty.total.value == 0.0;
  for (std::size_t k = 0; k < 36; ++k) zero_grad &= empty.total.grad_y1[k] == 0.0 && empty.total.grad_y2[k] == 0.0;
  if (!zero_grad) {
    ++failures;
    notes.push_back("empty intersection not inert");
  }
  std::string detail = "sym-KL symmetry, fc/bc complement, identical views, empty intersection";
  for (const auto& n : notes) detail += "; " + n;
  record(3, failures == 0, detail);
}

// ---------------------------------------------------------------- criterion 4

TEST(Acceptance, C4_ScopeAndDeterminism) {
  Rng rng(4);
  Model base(test::tiny_model(32), rng);
  base.forward(make_batch<float>(test::random_images(rng, 4, 32)), Mode::Train);
  const auto images = test::random_images(rng, 8, 32);
  auto cfg_for = [](AdaptMethod m) {
    AdaptConfig c;
    c.method = m;
    c.epochs = 2;
    c.lr = 1e-2;
    c.seed = 11;
    return c;
  };
  std::vector<std::string> problems;
  Model tica = base;
  adapt(tica, images, cfg_for(AdaptMethod::Tica));
  int decoder_changed = 0, encoder_changed = 0;
  for (const auto& name : changed_parameters(base, tica)) {
    (tica.store().param(name).group == ParamGroup::Decoder ? decoder_changed : encoder_changed)++;
  }
  if (decoder_changed) problems.push_back(fmt("tica changed %d decoder tensors", decoder_changed));
  if (!encoder_changed) problems.push_back("tica changed nothing");
  Model bn = base;
  adapt(bn, images, cfg_for(AdaptMethod::Bn));
  if (!same_parameters(base, bn)) problems.push_back("bn changed learnable tensors");
  for (AdaptMethod m : {AdaptMethod::None, AdaptMethod::Tica, AdaptMethod::Tent, AdaptMethod::Bn, AdaptMethod::Eta}) {
    Model a = base, b = base;
    adapt(a, images, cfg_for(m));
    adapt(b, images, cfg_for(m));
    if (serialize_checkpoint(a, {}) != serialize_checkpoint(b, {})) problems.push_back(std::string(to_string(m)) + " not reproducible");
  }
  std::string detail = fmt("tica changed %d encoder / 0 decoder tensors; bn learnables identical; 5 methods reproducible",
                           encoder_changed);
  for (const auto& p : problems) detail += "; " + p;
  record(4, problems.empty(), detail);
}

// ---------------------------------------------------------------- criterion 5

TEST(Acceptance, C5_BerOracle) {
  Rng rng(5);
  int mismatches = 0;
  for (int i = 0; i < kBerOraclePairs; ++i) {
    const int rows = static_cast<int>(rng.uniform_int(1, 12)), cols = static_cast<int>(rng.uniform_int(1, 12));
    const auto pred = test::random_mask(rng, rows, cols), gt = test::random_binary(rng, rows, cols, rng.uniform());
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t k = 0; k < gt.size(); ++k) {
      const bool p = pred[k] >= 0.5, g = gt[k] == 1.0;
      tp += p && g, fp += p && !g, tn += !p && !g, fn += !p && g;
    }
    const double rp = tp + fn ? double(tp) / double(tp + fn) : 1.0, rn = tn + fp ? double(tn) / double(tn + fp) : 1.0;
    const auto c = accumulate(pred, gt);
    if (c != ConfusionCounts{tp, fp, tn, fn} || ber(c).ber != 1.0 - 0.5 * (rp + rn)) ++mismatches;
  }
  const double spot = ber({.tp = 40, .fp = 20, .tn = 30, .fn = 10}).ber;
  const double perfect = ber({.tp = 3, .fp = 0, .tn = 5, .fn = 0}).ber;
  const double inverted = ber({.tp = 0, .fp = 5, .tn = 0, .fn = 3}).ber;
  const bool ok = mismatches == 0 && std::abs(spot - 0.30) < 1e-15 && perfect == 0.0 && inverted == 1.0;
  record(5, ok, fmt("%d/%d oracle pairs exact; perfect %.2f, inverted %.2f, (40,10,30,20) -> %.4f", kBerOraclePairs - mismatches,
                    kBerOraclePairs, perfect, inverted, spot));
}

// ---------------------------------------------------------- criteria 6 to 9

struct Benchmark {
  cli::RunConfig cfg;
  SyntheticDataset data;
  std::vector<std::uint64_t> seeds;
  std::vector<Model> trained;
  std::vector<double> none_ber;
  // BER after each adaptation epoch 1..kSweepEpochs, per seed
  std::vector<std::vector<double>> tica_curve;
  double end_to_end_seconds = 0.0;
  double generate_seconds = 0.0;
  double train_seconds = 0.0;
};

cli::RunConfig benchmark_config() {
  auto cfg = cli::load_config_file(fs::path(TICA_REPO_DIR) / "configs" / "benchmark.json");
  cfg.validate();
  return cfg;
}

Benchmark build_benchmark() {
  Benchmark b;
  b.cfg = benchmark_config();
  b.seeds = b.cfg.seeds;
  auto t0 = Clock::now();
  b.data = generate_synthetic(b.cfg.data);
  b.generate_seconds = since(t0);
  b.end_to_end_seconds += b.generate_seconds;
  const auto images = images_of(b.data.test);
  for (std::uint64_t seed : b.seeds) {
    t0 = Clock::now();
    Model m = cli::make_model(b.cfg.model, seed);
    TrainConfig tc = b.cfg.train;
    tc.seed = seed;
    train_supervised(m, b.data.train, tc);
    const double train = since(t0);
    b.train_seconds += train;
    t0 = Clock::now();
    b.none_ber.push_back(evaluate(m, b.data.test, b.cfg.eval_threshold).ber);
    double pipeline = train + since(t0);

    AdaptConfig ac = b.cfg.adapt;
    ac.method = AdaptMethod::Tica;
    ac.seed = seed;
    const int protocol_epochs = ac.epochs;
    ac.epochs = std::max(protocol_epochs, kSweepEpochs);
    // Adaptation RNG is drawn per epoch, so the first protocol_epochs of the
    // sweep are the protocol run itself. Sweep-only work is kept off the clock.
    Model adapted = m;
    std::vector<double> curve;
    double off_clock = 0.0;
    t0 = Clock::now();
    adapt(adapted, images, ac, [&](int epoch, const Model& cur) {
      const auto e0 = Clock::now();
      curve.push_back(evaluate(cur, b.data.test, b.cfg.eval_threshold).ber);
      if (epoch == protocol_epochs) pipeline += since(t0) - off_clock;
      else off_clock += since(e0);
    });
    b.tica_curve.push_back(curve);
    b.trained.push_back(std::move(m));
    b.end_to_end_seconds += pipeline;
    std::printf("  seed %llu: none %.4f, tica@%d %.4f (train %.1f s)\n", static_cast<unsigned long long>(seed),
                b.none_ber.back(), protocol_epochs, curve.at(protocol_epochs - 1), train);
    std::fflush(stdout);
  }
  return b;
}

Benchmark& benchmark() {
  static Benchmark b = build_benchmark();
  return b;
}

TEST(Acceptance, C6_EndToEndDirectional) {
  const auto& b = benchmark();
  const int epochs = b.cfg.adapt.epochs;
  int improved = 0;
  std::vector<double> reductions, tica;
  for (std::size_t i = 0; i < b.seeds.size(); ++i) {
    const double t = b.tica_curve[i].at(epochs - 1);
    tica.push_back(t);
    improved += t < b.none_ber[i];
    reductions.push_back((b.none_ber[i] - t) / b.none_ber[i]);
  }
  const double mean_red = mean(reductions);
  const bool ok = improved >= kSeedsRequiredToImprove && mean_red >= kMinMeanReduction &&
                  b.end_to_end_seconds < kEndToEndBudgetSeconds;
  record(6, ok,
         fmt("TICA < none in %d/%zu seeds (need %d); mean BER x100 %.2f -> %.2f, mean relative reduction %.1f%% (need "
             "%.0f%%); runtime %.0f s (generate %.0f s, train %.0f s) vs budget %.0f s",
             improved, b.seeds.size(), kSeedsRequiredToImprove, 100 * mean(b.none_ber), 100 * mean(tica),
             100 * mean_red, 100 * kMinMeanReduction, b.end_to_end_seconds, b.generate_seconds, b.train_seconds,
             kEndToEndBudgetSeconds));
}

TEST(Acceptance, C7_AblationStructure) {
  const auto& b = benchmark();
  const auto images = images_of(b.data.test);
  std::map<std::string, std::vector<double>> ber;
  for (std::size_t i = 0; i < b.seeds.size(); ++i) {
    for (const char* row : {"fc-only", "bc-only"}) {
      AdaptConfig ac = cli::row_config(b.cfg.adapt, row);
      ac.seed = b.seeds[i];
      Model m = b.trained[i];
      adapt(m, images, ac);
      ber[row].push_back(evaluate(m, b.data.test, b.cfg.eval_threshold).ber);
    }
    ber["combined"].push_back(b.tica_curve[i].at(b.cfg.adapt.epochs - 1));
  }
  const double none = mean(b.none_ber), fc = mean(ber["fc-only"]), bc = mean(ber["bc-only"]),
               both = mean(ber["combined"]);
  const double best_single = std::min(fc, bc);
  const bool ok = fc < none && bc < none && both < none && both <= best_single * (1 + kCombinedSlack);
  record(7, ok,
         fmt("mean BER x100: none %.2f, fc-only %.2f, bc-only %.2f, combined %.2f; combined/best single = %.3f "
             "(limit %.2f)",
             100 * none, 100 * fc, 100 * bc, 100 * both, both / best_single, 1 + kCombinedSlack));
}

TEST(Acceptance, C8_EpochSensitivity) {
  const auto& b = benchmark();
  std::vector<double> curve{mean(b.none_ber)};
  for (int e = 0; e < kSweepEpochs; ++e) {
    double s = 0.0;
    for (const auto& c : b.tica_curve) s += c.at(e);
    curve.push_back(s / double(b.tica_curve.size()));
  }
  const auto best = std::min_element(curve.begin(), curve.end()) - curve.begin();
  std::ostringstream os;
  os << "mean BER x100 by epoch:";
  for (double v : curve) os << fmt(" %.2f", 100 * v);
  os << fmt("; minimum at epoch %td", best);
  const bool deteriorates = best < kSweepEpochs && curve.back() > curve[best];
  os << (deteriorates ? fmt(", rises to %.2f by epoch %d (reported, not asserted)", 100 * curve.back(), kSweepEpochs)
                      : std::string(", no later rise"));
  record(8, best > 0, os.str());
}

TEST(Acceptance, C9_BaselineHarness) {
  const auto& b = benchmark();
  test::TempDir dir("acceptance_compare");
  cli::RunConfig cfg = b.cfg;
  cfg.output_root = dir.path();
  cli::cmd_gen_data(cfg, {dir.path() / "data", nullptr});
  fs::create_directories(dir.path() / "ckpt");
  for (std::size_t i = 0; i < b.seeds.size(); ++i) {
    save_checkpoint(dir.path() / "ckpt" / ("seed_" + std::to_string(b.seeds[i]) + ".ckpt"), b.trained[i],
                    {0, "train", b.seeds[i], cli::config_to_json(cfg, false), cli::config_hash(cfg)});
  }
  cli::CompareOptions opts;
  opts.methods = {"none", "tica", "tent", "bn", "eta"};
  opts.data = dir.path() / "data";
  opts.checkpoints = dir.path() / "ckpt";
  opts.out = dir.path() / "compare.json";
  std::string detail;
  bool ok = false;
  try {
    const auto t0 = Clock::now();
    const auto table = cli::cmd_compare(cfg, opts);
    const auto back = cli::compare_from_json(test::read_text(opts.out));
    bool complete = back.cells.size() == opts.methods.size() * b.seeds.size();
    for (const auto& m : opts.methods)
      for (auto s : b.seeds) {
        const auto& c = back.cell(m, s);
        complete &= std::isfinite(c.ber) && c.ber >= 0.0 && c.ber <= 1.0;
      }
    ok = complete;
    std::ostringstream os;
    os << fmt("%zu x %zu matrix complete in %.0f s; mean BER x100:", opts.methods.size(), b.seeds.size(), since(t0));
    for (const auto& m : opts.methods) os << " " << m << fmt(" %.2f", 100 * table.mean_ber(m));
    detail = os.str();
  } catch (const std::exception& e) {
    detail = std::string("compare failed: ") + e.what();
  }
  record(9, ok, detail);
}

}  // namespace
}  // namespace tica
