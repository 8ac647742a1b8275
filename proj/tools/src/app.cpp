#include "tica/cli/app.hpp"

#include <cstdlib>
#include <exception>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tica/cli/commands.hpp"

namespace tica::cli {
namespace fs = std::filesystem;

namespace {

template <typename T>
void set_if(T& dst, const std::optional<T>& v) {
  if (v) dst = *v;
}

struct Globals {
  std::optional<fs::path> config;
  std::optional<fs::path> output_root;
  std::vector<std::string> overrides;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg;
  if (g.config) cfg = load_config_file(*g.config);
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') cfg.output_root = env;
  for (const auto& o : g.overrides) apply_override(cfg, o);
  if (g.output_root) cfg.output_root = *g.output_root;
  return cfg;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time adaptation for shadow detection on synthetic scenes", "tica"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tica 0.1.0");

  Globals g;
  app.add_option("-c,--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("-o,--output-root", g.output_root, "Directory for default artifact locations");
  app.add_option("--set", g.overrides, "Override a config key, e.g. --set adapt.lr=2e-4")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shadow dataset");
  GenDataOptions gen_opts;
  std::optional<std::uint64_t> gen_seed;
  std::optional<int> gen_train, gen_test;
  std::optional<double> gen_gain, gen_gamma;
  gen->add_option("--out", gen_opts.out, "Dataset root (default <output-root>/data)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--train-count", gen_train);
  gen->add_option("--test-count", gen_test);
  gen->add_option("--gain", gen_gain, "Test-split intensity gain");
  gen->add_option("--gamma", gen_gamma, "Test-split gamma");

  // train
  auto* train = app.add_subcommand("train", "Supervised training on the train split");
  TrainOptions train_opts;
  std::optional<int> train_epochs, train_batch;
  std::optional<double> train_lr;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--data", train_opts.data, "Dataset root (default <output-root>/data)");
  train->add_option("--out", train_opts.out, "Checkpoint path (default <output-root>/model.ckpt)");
  train->add_option("--resume", train_opts.resume, "Continue from a checkpoint with optimizer state")
      ->check(CLI::ExistingFile);
  train->add_option("--epochs", train_epochs);
  train->add_option("--batch-size", train_batch);
  train->add_option("--lr", train_lr);
  train->add_option("--seed", train_seed);

  // adapt
  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a trained checkpoint to the test split");
  AdaptOptions adapt_opts;
  std::optional<std::string> method, scope, kl, mode;
  std::optional<int> adapt_epochs, adapt_batch;
  std::optional<double> adapt_lr, lambda_fg, lambda_bg, threshold, eta_threshold;
  std::optional<std::uint64_t> adapt_seed;
  bool eval_stats = false;
  adapt_cmd->add_option("--checkpoint", adapt_opts.checkpoint, "Trained checkpoint")->required();
  adapt_cmd->add_option("--data", adapt_opts.data, "Dataset root (default <output-root>/data)");
  adapt_cmd->add_option("--out", adapt_opts.out, "Adapted checkpoint (default <output-root>/adapted_<method>.ckpt)");
  adapt_cmd->add_option("--method", method)->check(CLI::IsMember({"none", "tica", "tent", "bn", "eta"}));
  adapt_cmd->add_option("--epochs", adapt_epochs);
  adapt_cmd->add_option("--batch-size", adapt_batch);
  adapt_cmd->add_option("--lr", adapt_lr);
  adapt_cmd->add_option("--lambda-fg", lambda_fg);
  adapt_cmd->add_option("--lambda-bg", lambda_bg);
  adapt_cmd->add_option("--threshold", threshold, "Binarisation threshold of the intersection masks");
  adapt_cmd->add_option("--eta-threshold", eta_threshold, "Entropy threshold for eta");
  adapt_cmd->add_option("--scope", scope)
      ->check(CLI::IsMember({"default", "none", "encoder", "decoder", "all", "norm-affine"}));
  adapt_cmd->add_option("--kl", kl)->check(CLI::IsMember({"sym", "fwd", "rev"}));
  adapt_cmd->add_option("--mode", mode)->check(CLI::IsMember({"continual", "episodic"}));
  adapt_cmd->add_flag("--eval-stats", eval_stats, "Forward with running statistics");
  adapt_cmd->add_option("--seed", adapt_seed);

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint with the balanced error rate");
  EvalOptions eval_opts;
  std::optional<double> eval_threshold;
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint to score");
  eval->add_option("--data", eval_opts.data, "Dataset root (default <output-root>/data)");
  eval->add_option("--split", eval_opts.split)->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--out", eval_opts.out, "Report path (default <output-root>/report.json)");
  eval->add_flag("--oracle", eval_opts.oracle, "Score the ground truth against itself");
  eval->add_option("--dump-masks", eval_opts.dump_masks, "Write predicted masks as PNG");
  eval->add_option("--threshold", eval_threshold);

  // compare
  auto* compare = app.add_subcommand("compare", "Method x seed comparison matrix");
  CompareOptions cmp_opts;
  std::optional<std::vector<std::uint64_t>> cmp_seeds;
  std::optional<int> cmp_epochs;
  compare->add_option("--methods", cmp_opts.methods, "Rows: none fc-only bc-only tica tent bn eta")->delimiter(',');
  compare->add_option("--seeds", cmp_seeds, "Comma-separated seeds (default from config)")->delimiter(',');
  compare->add_option("--epoch-sweep", cmp_opts.epoch_sweep, "Evaluate after each of the first N epochs");
  compare->add_option("--epochs", cmp_epochs, "Adaptation epochs per cell");
  compare->add_option("--data", cmp_opts.data, "Dataset root (default <output-root>/data)");
  compare->add_option("--checkpoints", cmp_opts.checkpoints, "Directory of seed_<s>.ckpt files");
  compare->add_option("--out", cmp_opts.out, "Table path (default <output-root>/compare.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = resolve(g);
    if (*gen) {
      set_if(cfg.data.seed, gen_seed);
      set_if(cfg.data.train_count, gen_train);
      set_if(cfg.data.test_count, gen_test);
      set_if(cfg.data.gain, gen_gain);
      set_if(cfg.data.gamma, gen_gamma);
      gen_opts.log = &out;
      cmd_gen_data(cfg, gen_opts);
    } else if (*train) {
      set_if(cfg.train.epochs, train_epochs);
      set_if(cfg.train.batch_size, train_batch);
      set_if(cfg.train.lr, train_lr);
      set_if(cfg.train.seed, train_seed);
      train_opts.log = &out;
      cmd_train(cfg, train_opts);
    } else if (*adapt_cmd) {
      if (method) cfg.adapt.method = parse_adapt_method(*method);
      set_if(cfg.adapt.epochs, adapt_epochs);
      set_if(cfg.adapt.batch_size, adapt_batch);
      set_if(cfg.adapt.lr, adapt_lr);
      set_if(cfg.adapt.weights.lambda_fg, lambda_fg);
      set_if(cfg.adapt.weights.lambda_bg, lambda_bg);
      set_if(cfg.adapt.threshold, threshold);
      set_if(cfg.adapt.eta_entropy_threshold, eta_threshold);
      if (scope) {
        if (*scope == "default") cfg.adapt.update_scope.reset();
        else cfg.adapt.update_scope = parse_update_scope(*scope);
      }
      if (kl) cfg.adapt.kl_mode = parse_kl_mode(*kl);
      if (mode) cfg.adapt.mode = parse_adapt_mode(*mode);
      if (eval_stats) cfg.adapt.eval_stats = true;
      set_if(cfg.adapt.seed, adapt_seed);
      adapt_opts.log = &out;
      cmd_adapt(cfg, adapt_opts);
    } else if (*eval) {
      set_if(cfg.eval_threshold, eval_threshold);
      eval_opts.log = &out;
      cmd_eval(cfg, eval_opts);
    } else if (*compare) {
      set_if(cfg.seeds, cmp_seeds);
      set_if(cfg.adapt.epochs, cmp_epochs);
      cmp_opts.log = &out;
      cmd_compare(cfg, cmp_opts);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace tica::cli
