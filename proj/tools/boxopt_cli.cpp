// boxopt command-line driver.
//
//   boxopt <oracle-exp|train|refine|eval|gp-fit|synth-gen> [--config FILE] [--seed N] [--out DIR]
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "boxopt/harness/experiments.hpp"

namespace {

using namespace boxopt;
using namespace boxopt::harness;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

ExperimentConfig load(const Options& o) {
  ConfigTable t;
  std::string base;
  if (!o.config.empty()) {
    t = ConfigTable::from_file(o.config);
    base = std::filesystem::path(o.config).parent_path().string();
  }
  if (o.seed) t.set("seed", {std::to_string(*o.seed)});
  if (o.out) t.set("out", {*o.out});
  return load_experiment_config(t, base);
}

void print_rows(const std::vector<ResultRow>& rows) {
  for (const auto& r : rows) {
    if (r.category != "all") continue;
    std::printf("  %-10s mAP@%.2f = %.4f\n", r.method.c_str(), r.iou_threshold, r.ap);
  }
}

int oracle_exp(const ExperimentConfig& c) {
  const auto r = run_oracle_experiment(c);
  std::size_t max_added = 0, total = 0;
  for (const auto& [id, n] : r.fgs_added_per_image()) {
    max_added = std::max(max_added, n);
    total += n;
  }
  std::printf("oracle-exp: %zu images, config %s\n", r.images, r.meta.config_hash.c_str());
  print_rows(r.rows);
  std::printf("  fgs boxes added per image: mean %.1f, max %zu\n",
              r.images ? double(total) / double(r.images) : 0.0, max_added);
  std::printf("  wall time %.1f s -> %s\n", r.seconds, c.out.c_str());
  return 0;
}

int train_cmd(const ExperimentConfig& c) {
  const auto r = run_train(c);
  for (const auto& ct : r.categories) {
    std::printf("train: %-12s positives %zu negatives %zu objective %.6g\n", ct.category.c_str(),
                ct.positives, ct.negatives, ct.result.objective);
  }
  std::printf("  model -> %s\n", out_path(c, "model.json").c_str());
  return 0;
}

int refine_cmd(const ExperimentConfig& c) {
  const auto r = run_refine(c);
  std::size_t added = 0;
  for (const auto& s : r.searches) added += s.fgs_added;
  std::printf("refine: %zu detections, %zu boxes added by search\n", r.detections.size(), added);
  std::printf("  detections -> %s\n", out_path(c, "detections.csv").c_str());
  return 0;
}

int eval_cmd(const ExperimentConfig& c) {
  const auto r = run_eval(c);
  std::printf("eval: %s\n", c.eval.detections.c_str());
  print_rows(r.rows);
  return 0;
}

int gp_fit_cmd(const ExperimentConfig& c) {
  const auto r = run_gp_fit(c);
  const auto& h = r.fit.hyper;
  std::printf("gp-fit: %s\n", describe_fit(r).c_str());
  std::printf("  beta %.6g m0 %.6g eta %.6g lambda (%.6g, %.6g, %.6g, %.6g)\n", h.beta(), h.m0,
              h.eta(), h.lambda(0), h.lambda(1), h.lambda(2), h.lambda(3));
  std::printf("  params -> %s\n", out_path(c, "gp.json").c_str());
  return 0;
}

int synth_gen_cmd(const ExperimentConfig& c) {
  const auto r = run_synth_gen(c);
  std::size_t objects = 0, boxes = 0;
  for (const auto& im : r.manifest.images) objects += im.objects.size();
  for (const auto& [id, b] : r.proposals) boxes += b.size();
  std::printf("synth-gen: %zu images, %zu objects, %zu proposals -> %s\n",
              r.manifest.images.size(), objects, boxes, c.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bounding-box refinement by Bayesian optimization"};
  app.require_subcommand(1);
  Options opt;
  int (*action)(const ExperimentConfig&) = nullptr;

  const std::pair<const char*, int (*)(const ExperimentConfig&)> commands[] = {
      {"oracle-exp", oracle_exp}, {"train", train_cmd},   {"refine", refine_cmd},
      {"eval", eval_cmd},         {"gp-fit", gp_fit_cmd}, {"synth-gen", synth_gen_cmd},
  };
  const char* help[] = {
      "baseline / random search / FGS under the oracle scorer",
      "train one structured SVM per category",
      "score proposals, refine with FGS, threshold and NMS",
      "AP, PR curves and localization histograms for a detection file",
      "fit GP hyperparameters on observation sets around annotated objects",
      "write a synthetic manifest and perturbation proposals",
  };
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    auto* sub = app.add_subcommand(commands[i].first, help[i]);
    sub->add_option("--config", opt.config, "config file (TOML-like sections)");
    sub->add_option("--seed", opt.seed, "global seed");
    sub->add_option("--out", opt.out, "output directory");
    sub->callback([&action, f = commands[i].second] { action = f; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return action(load(opt));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
