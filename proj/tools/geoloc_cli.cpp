#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "geoloc/geoloc.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "run configuration file");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "run seed (overrides [run] seed)");
  cmd->add_option("--out", c.out, "output directory (overrides paths.out)");
}

geoloc::RunConfig resolve(const Common& c) {
  geoloc::RunConfig cfg = c.config.empty() ? geoloc::RunConfig{} : geoloc::load_run_config(c.config);
  if (c.seed) cfg.apply_seed(*c.seed);
  if (!c.out.empty()) cfg.paths.out = c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tweet geolocation: data generation, training, evaluation, prediction and ablation"};
  app.require_subcommand(1);

  Common gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic planted-signal corpus");
  add_common(gen_cmd, gen, true);

  Common tr;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint, history and report");
  add_common(train_cmd, tr, true);

  Common ev;
  geoloc::EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  add_common(eval_cmd, ev, false);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint.json")->required();
  eval_cmd->add_option("--corpus", eval_args.corpus, "labelled corpus")->required();
  eval_cmd->add_option("--format", eval_args.format, "jsonl or csv");
  eval_cmd->add_option("--regions", eval_args.regions, "GeoJSON regions used to label records by location");

  Common pr;
  std::string pred_ckpt, pred_input, pred_format = "jsonl";
  auto* predict_cmd = app.add_subcommand("predict", "predict locations for unlabelled tweets");
  add_common(predict_cmd, pr, false);
  predict_cmd->add_option("--checkpoint", pred_ckpt, "checkpoint.json")->required();
  predict_cmd->add_option("--input", pred_input, "tweets to locate")->required();
  predict_cmd->add_option("--format", pred_format, "jsonl or csv");

  Common ab;
  std::string study;
  std::vector<double> grid;
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep one augmentation parameter");
  add_common(ablate_cmd, ab, true);
  ablate_cmd->add_option("--study", study, "user_dict_frac, time_window, num_clusters or cluster_embedding")->required();
  ablate_cmd->add_option("--grid", grid, "grid values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : geoloc::kExitConfig;
  }

  return geoloc::run_guarded(
      [&]() -> int {
        if (*gen_cmd) {
          geoloc::RunConfig cfg = resolve(gen);
          return geoloc::cmd_gen_data(cfg, cfg.paths.out);
        }
        if (*train_cmd) return geoloc::cmd_train(resolve(tr));
        if (*eval_cmd) {
          eval_args.out = ev.out;
          return geoloc::cmd_eval(eval_args);
        }
        if (*predict_cmd) return geoloc::cmd_predict(pred_ckpt, pred_input, pred_format, pr.out);
        return geoloc::cmd_ablate(resolve(ab), study, grid);
      },
      std::cerr);
}
