#pragma once

/// @file experiments.hpp
/// Orchestration behind the CLI subcommands. Each run_* function writes its
/// artifacts under config.out and returns what it wrote.

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "boxopt/eval.hpp"
#include "boxopt/fgs.hpp"
#include "boxopt/gp.hpp"
#include "boxopt/harness/config.hpp"
#include "boxopt/harness/dataset.hpp"
#include "boxopt/harness/gp_training.hpp"
#include "boxopt/harness/io.hpp"
#include "boxopt/harness/parallel.hpp"
#include "boxopt/proposals.hpp"
#include "boxopt/scoring.hpp"
#include "boxopt/structsvm.hpp"

namespace boxopt::harness {

// ---------------------------------------------------------------------------
// Inputs

inline ArtifactMeta meta_for(const ExperimentConfig& c) { return {config_hash(c), c.seed}; }

inline std::string prepare_out_dir(const ExperimentConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.out, ec);
  if (ec) throw DataError("cannot create output directory " + c.out + ": " + ec.message());
  std::ofstream os(std::filesystem::path(c.out) / "config.toml", std::ios::binary);
  if (!os) throw DataError("cannot write to output directory " + c.out);
  os << "# " << meta_for(c).comment() << '\n' << effective_config_text(c);
  return c.out;
}

inline std::string out_path(const ExperimentConfig& c, const std::string& name) {
  return (std::filesystem::path(c.out) / name).string();
}

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  return boxopt::detail::hash_string(tag, seed ^ 0x9e3779b97f4a7c15ULL);
}

/// dataset.manifest (filtered by dataset.split when set), or a synthesized
/// dataset.
inline DatasetManifest load_dataset(const ExperimentConfig& c) {
  DatasetManifest m = c.manifest.empty() ? synthesize_dataset(c.synth) : read_manifest(c.manifest);
  if (!c.split.empty()) m = m.filter_split(c.split);
  return m;
}

/// Perturbation proposals, seeded per image from its id.
inline ProposalMap perturbation_proposal_map(const DatasetManifest& m, PerturbConfig pc) {
  const auto base = pc.seed;
  ProposalMap out;
  for (const auto& im : m.images) {
    std::vector<BoundingBox> gts;
    for (const auto& o : im.objects) gts.push_back(o.box);
    pc.seed = derive_seed(base, im.id);
    out[im.id] = perturbation_proposals(gts, pc, {im.width, im.height});
  }
  return out;
}

inline ProposalMap load_or_make_proposals(const ExperimentConfig& c, const DatasetManifest& m) {
  return c.proposals.empty() ? perturbation_proposal_map(m, c.perturb) : load_proposals(c.proposals);
}

inline std::vector<std::string> manifest_categories(const DatasetManifest& m) {
  const auto s = m.categories();
  return {s.begin(), s.end()};
}

inline std::vector<std::string> feature_categories(const ExperimentConfig& c,
                                                   const DatasetManifest& m) {
  return c.features.categories.empty() ? manifest_categories(m) : c.features.categories;
}

inline std::shared_ptr<const FeatureProvider> make_feature_provider(const ExperimentConfig& c,
                                                                    const DatasetManifest& m) {
  if (c.features.kind == "file") return std::make_shared<FileFeatureProvider>(c.features.path);
  const auto cats = feature_categories(c, m);
  if (cats.size() + 1 > c.features.dim) {
    throw ConfigError("features.dim: must exceed the number of categories (" +
                      std::to_string(cats.size()) + ")");
  }
  auto world = std::make_shared<SyntheticWorld>(
      world_for(m, cats, c.features.dim, c.features.noise, c.features.seed));
  return std::make_shared<SyntheticFeatureProvider>(std::move(world));
}

struct ScorerBundle {
  std::unique_ptr<Scorer> scorer;
  std::vector<std::string> categories;
};

/// The oracle scores against the manifest's annotations; the linear scorer
/// needs scorer.model.
inline ScorerBundle make_scorer(const ExperimentConfig& c, const DatasetManifest& m) {
  ScorerBundle b;
  if (c.scorer == "oracle") {
    b.scorer = std::make_unique<OracleScorer>(m.objects_by_image());
    b.categories = manifest_categories(m);
    return b;
  }
  if (c.model.empty()) throw ConfigError("scorer.model: required when scorer.kind = \"linear\"");
  detail::require_file("scorer.model", c.model);
  auto model = read_model(c.model);
  auto provider = make_feature_provider(c, m);
  for (const auto& [cat, w] : model) {
    if (static_cast<std::size_t>(w.size()) != provider->dim()) {
      throw DataError(c.model + ": " + cat + ": weight dimension " + std::to_string(w.size()) +
                      " does not match feature dimension " + std::to_string(provider->dim()));
    }
    b.categories.push_back(cat);
  }
  b.scorer = std::make_unique<LinearScorer>(std::move(provider), std::move(model));
  return b;
}

// ---------------------------------------------------------------------------
// GP hyperparameters

struct GpFitOutput {
  HyperFitResult fit;
  std::size_t sets = 0;
  std::size_t dropped = 0;
  std::size_t median_set_size = 0;
};

inline GpFitOutput fit_gp_on(const DatasetManifest& m, const ProposalMap& proposals,
                             const Scorer& scorer, const GpSpec& spec) {
  auto sets = build_gp_training_sets(m, proposals, scorer, spec.rho, spec.random_extra,
                                     derive_seed(spec.seed, "gp-sets"));
  if (sets.sets.empty()) throw DataError("gp-fit: no usable observation sets");
  GpFitOutput out;
  out.sets = sets.sets.size();
  out.dropped = sets.dropped;
  std::vector<std::size_t> sizes;
  for (const auto& s : sets.sets) sizes.push_back(s.size());
  std::nth_element(sizes.begin(), sizes.begin() + sizes.size() / 2, sizes.end());
  out.median_set_size = sizes[sizes.size() / 2];
  out.fit = fit_gp_hyperparameters(sets.sets, spec.fit);
  return out;
}

inline std::string describe_fit(const GpFitOutput& g) {
  return "fitted on " + std::to_string(g.sets) + " observation sets (" +
         std::to_string(g.dropped) + " dropped, median size " +
         std::to_string(g.median_set_size) + ")";
}

/// gp-fit: observation sets around every annotated object of the dataset,
/// scored by the configured scorer.
inline GpFitOutput run_gp_fit(const ExperimentConfig& c) {
  prepare_out_dir(c);
  const auto m = load_dataset(c);
  const auto proposals = load_or_make_proposals(c, m);
  const auto sc = make_scorer(c, m);
  auto out = fit_gp_on(m, proposals, *sc.scorer, c.gp);
  write_gp_params(out_path(c, "gp.json"), out.fit.hyper, describe_fit(out), meta_for(c));
  return out;
}

// ---------------------------------------------------------------------------
// Oracle experiment

struct SearchRecord {
  std::string image_id;
  std::string category;
  std::size_t initial = 0;
  std::size_t fgs_added = 0;
  std::size_t fgs_bound = 0;
  std::size_t random_added = 0;
  std::vector<double> trace;
};

struct OracleExperimentResult {
  /// One row per (method, threshold); category "all" holds the mAP.
  std::vector<ResultRow> rows;
  std::map<std::string, std::vector<EvalResult>> evals;
  std::vector<SearchRecord> searches;
  GpHyperParams hyper;
  std::size_t images = 0;
  double seconds = 0.0;
  ArtifactMeta meta;

  double map(const std::string& method, double threshold) const {
    for (const auto& r : rows) {
      if (r.method == method && r.iou_threshold == threshold) return r.ap;
    }
    throw std::out_of_range("no result for " + method);
  }
  /// Boxes added by FGS, summed over categories, per image.
  std::map<std::string, std::size_t> fgs_added_per_image() const {
    std::map<std::string, std::size_t> out;
    for (const auto& s : searches) out[s.image_id] += s.fgs_added;
    return out;
  }
};

inline const std::vector<std::string>& oracle_methods() {
  static const std::vector<std::string> m{"baseline", "random", "fgs"};
  return m;
}

inline std::vector<std::vector<std::string>> trace_rows(const std::vector<SearchRecord>& s) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : s) {
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
      rows.push_back({r.image_id, r.category, std::to_string(t), format_double(r.trace[t])});
    }
  }
  return rows;
}

/// Baseline, local random search at FGS's realized budget, and FGS, all
/// under the oracle scorer, evaluated over the threshold sweep. Without
/// gp.params, hyperparameters are fitted on a separately synthesized
/// training set of gp.train_images images.
inline OracleExperimentResult run_oracle_experiment(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  prepare_out_dir(c);
  OracleExperimentResult res;
  res.meta = meta_for(c);

  const auto m = load_dataset(c);
  const auto proposals = load_or_make_proposals(c, m);
  const OracleScorer oracle(m.objects_by_image());
  const auto cats = manifest_categories(m);
  res.images = m.images.size();

  if (!c.gp.params.empty()) {
    detail::require_file("gp.params", c.gp.params);
    res.hyper = read_gp_params(c.gp.params);
  } else {
    SynthConfig sc = c.synth;
    sc.images = c.gp.train_images;
    sc.seed = derive_seed(c.gp.seed, "gp-train-images");
    sc.id_prefix = "gptrain";
    const auto train = synthesize_dataset(sc);
    const OracleScorer train_oracle(train.objects_by_image());
    PerturbConfig pc = c.perturb;
    pc.seed = derive_seed(c.gp.seed, "gp-train-proposals");
    const auto fit = fit_gp_on(train, perturbation_proposal_map(train, pc), train_oracle, c.gp);
    res.hyper = fit.fit.hyper;
    write_gp_params(out_path(c, "gp.json"), res.hyper, describe_fit(fit), res.meta);
  }

  struct Work {
    const ImageRecord* image;
    std::string category;
  };
  std::vector<Work> work;
  for (const auto& im : m.images) {
    for (const auto& cat : cats) work.push_back({&im, cat});
  }
  std::vector<SearchRecord> records(work.size());
  std::vector<std::array<std::vector<Detection>, 3>> dets(work.size());

  parallel_for(work.size(), [&](std::size_t i) {
    const auto& im = *work[i].image;
    const auto& cat = work[i].category;
    const auto pit = proposals.find(im.id);
    if (pit == proposals.end() || pit->second.empty()) {
      records[i] = {im.id, cat, 0, 0, 0, 0, {}};
      return;
    }
    const auto init = score_boxes(oracle, im.id, cat, pit->second);
    const auto f = local_fgs(oracle, init, res.hyper, c.fgs);
    const auto regions = local_optima(init, c.fgs.f_prune, c.fgs.nms_threshold).size();
    const auto r = local_random_search(oracle, init, split_budget(f.proposals_added, regions),
                                       c.fgs.f_prune, c.fgs.nms_threshold,
                                       derive_seed(c.seed, im.id + "/" + cat), c.oracle.random_rho);
    records[i] = {im.id, cat, init.size(), f.proposals_added, f.proposal_bound, r.sampled,
                  f.best_score_trace};
    const ScoredBoxSet* sets[3] = {&init, &r.boxes, &f.boxes};
    for (int k = 0; k < 3; ++k) {
      for (const auto& b : postprocess(sets[k]->scored_boxes(), c.refine.score_threshold,
                                       c.refine.nms_threshold)) {
        dets[i][k].push_back({im.id, cat, b.box, b.score});
      }
    }
  });

  const auto gts = m.objects_by_image();
  for (int k = 0; k < 3; ++k) {
    std::vector<Detection> all;
    for (const auto& d : dets) all.insert(all.end(), d[k].begin(), d[k].end());
    const auto& method = oracle_methods()[k];
    for (double thr : c.eval.thresholds) {
      auto e = evaluate(all, gts, thr, c.eval.mode);
      res.rows.push_back({method, thr, "all", e.map});
      res.evals[method].push_back(std::move(e));
    }
  }
  res.searches = std::move(records);

  write_results(out_path(c, "results.csv"), res.rows, res.meta);
  std::map<std::string, std::array<std::size_t, 3>> counts;
  for (const auto& s : res.searches) {
    auto& n = counts[s.image_id];
    n[0] += s.initial;
    n[1] += s.initial + s.random_added;
    n[2] += s.initial + s.fgs_added;
  }
  std::vector<std::vector<std::string>> count_rows;
  for (const auto& [id, n] : counts) {
    for (int k = 0; k < 3; ++k) {
      count_rows.push_back({id, oracle_methods()[k], std::to_string(n[k]),
                            std::to_string(n[k] - n[0])});
    }
  }
  write_table(out_path(c, "box_counts.csv"), "image_id,method,boxes,added", count_rows, res.meta);
  write_table(out_path(c, "fgs_trace.csv"), "image_id,category,iteration,best_score",
              trace_rows(res.searches), res.meta);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Detector training

/// Per image, for `category`: one positive per non-difficult object whose
/// candidates are the image's proposals minus those sitting on another
/// object of the category, and one negative holding the proposals that
/// overlap no object of the category (IoU < negative_iou).
inline std::vector<TrainingExample> build_training_examples(const DatasetManifest& m,
                                                            const ProposalMap& proposals,
                                                            const FeatureProvider& provider,
                                                            const std::string& category,
                                                            const TrainSpec& spec) {
  std::vector<TrainingExample> out;
  for (const auto& im : m.images) {
    const auto pit = proposals.find(im.id);
    const std::vector<BoundingBox> none;
    const auto& props = pit == proposals.end() ? none : pit->second;
    std::vector<const GroundTruthObject*> same;
    for (const auto& o : im.objects) {
      if (o.category == category) same.push_back(&o);
    }
    for (const auto* o : same) {
      if (o->difficult) continue;
      std::vector<BoundingBox> cands;
      for (const auto& b : props) {
        const bool on_other = std::any_of(same.begin(), same.end(), [&](const auto* p) {
          return p != o && iou(b, p->box) >= spec.other_object_iou;
        });
        if (!on_other) cands.push_back(b);
      }
      out.push_back(TrainingExample::make_positive(im.id, o->box, std::move(cands), provider));
    }
    std::vector<BoundingBox> neg;
    for (const auto& b : props) {
      const bool overlaps = std::any_of(same.begin(), same.end(), [&](const auto* p) {
        return iou(b, p->box) >= spec.negative_iou;
      });
      if (!overlaps) neg.push_back(b);
    }
    if (!neg.empty()) out.push_back(TrainingExample::make_negative(im.id, std::move(neg), provider));
  }
  return out;
}

struct CategoryTraining {
  std::string category;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  TrainResult result;
};

struct TrainOutput {
  ModelWeights model;
  std::vector<CategoryTraining> categories;
  ArtifactMeta meta;
};

/// train: one classifier per category, written to model.json.
inline TrainOutput run_train(const ExperimentConfig& c) {
  prepare_out_dir(c);
  TrainOutput out;
  out.meta = meta_for(c);
  const auto m = load_dataset(c);
  const auto proposals = load_or_make_proposals(c, m);
  const auto provider = make_feature_provider(c, m);
  const auto cats = feature_categories(c, m);
  out.categories.resize(cats.size());
  parallel_for(cats.size(), [&](std::size_t k) {
    const auto data = build_training_examples(m, proposals, *provider, cats[k], c.train);
    auto& ct = out.categories[k];
    ct.category = cats[k];
    for (const auto& ex : data) (ex.positive() ? ct.positives : ct.negatives) += 1;
    if (ct.positives == 0 || ct.negatives == 0) {
      throw DataError("train: category '" + cats[k] + "' needs positive and negative examples");
    }
    ct.result = c.train.mining ? train_with_mining(data, c.train.svm) : train(data, c.train.svm);
  });
  for (const auto& ct : out.categories) out.model[ct.category] = ct.result.w;
  write_model(out_path(c, "model.json"), out.model, out.meta);
  return out;
}

// ---------------------------------------------------------------------------
// Refinement

struct RefineOutput {
  std::vector<Detection> detections;
  std::vector<SearchRecord> searches;
  ArtifactMeta meta;
};

/// refine: per (image, category), score the proposals, run FGS (unless
/// refine.fgs is false or t_max is 0), then threshold and NMS.
inline RefineOutput run_refine(const ExperimentConfig& c) {
  prepare_out_dir(c);
  RefineOutput out;
  out.meta = meta_for(c);
  const auto m = load_dataset(c);
  const auto proposals = load_or_make_proposals(c, m);
  const auto sc = make_scorer(c, m);
  const bool search = c.refine.fgs && c.fgs.t_max > 0;
  GpHyperParams hyper;
  if (search) {
    if (c.gp.params.empty()) throw ConfigError("gp.params: required when refining with FGS");
    detail::require_file("gp.params", c.gp.params);
    hyper = read_gp_params(c.gp.params);
  }

  std::vector<std::pair<const ImageRecord*, std::string>> work;
  for (const auto& im : m.images) {
    for (const auto& cat : sc.categories) work.emplace_back(&im, cat);
  }
  std::vector<std::vector<Detection>> dets(work.size());
  std::vector<SearchRecord> records(work.size());
  parallel_for(work.size(), [&](std::size_t i) {
    const auto& [im, cat] = work[i];
    const auto pit = proposals.find(im->id);
    records[i] = {im->id, cat, 0, 0, 0, 0, {}};
    if (pit == proposals.end() || pit->second.empty()) return;
    auto boxes = score_boxes(*sc.scorer, im->id, cat, pit->second);
    records[i].initial = boxes.size();
    if (search) {
      auto f = local_fgs(*sc.scorer, boxes, hyper, c.fgs);
      records[i].fgs_added = f.proposals_added;
      records[i].fgs_bound = f.proposal_bound;
      records[i].trace = std::move(f.best_score_trace);
      boxes = std::move(f.boxes);
    }
    for (const auto& b : postprocess(boxes.scored_boxes(), c.refine.score_threshold,
                                     c.refine.nms_threshold)) {
      dets[i].push_back({im->id, cat, b.box, b.score});
    }
  });
  for (auto& d : dets) out.detections.insert(out.detections.end(), d.begin(), d.end());
  out.searches = std::move(records);
  write_detections(out_path(c, "detections.csv"), out.detections, out.meta);
  if (search) {
    write_table(out_path(c, "fgs_trace.csv"), "image_id,category,iteration,best_score",
                trace_rows(out.searches), out.meta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOutput {
  /// Per (threshold, category) plus an "all" row carrying the mAP.
  std::vector<ResultRow> rows;
  std::vector<EvalResult> results;
  LocalizationResult localization;
  ArtifactMeta meta;
};

inline EvalOutput evaluate_detections(const std::vector<Detection>& dets,
                                      const GroundTruthIndex& gts, const ExperimentConfig& c) {
  EvalOutput out;
  out.meta = meta_for(c);
  for (double thr : c.eval.thresholds) {
    auto e = evaluate(dets, gts, thr, c.eval.mode);
    for (const auto& [cat, ce] : e.categories) out.rows.push_back({c.eval.method, thr, cat, ce.ap});
    out.rows.push_back({c.eval.method, thr, "all", e.map});
    out.results.push_back(std::move(e));
  }
  out.localization = localization_distribution(dets, gts);
  return out;
}

/// eval: AP/mAP table, PR curves and localization histograms for
/// eval.detections against the dataset's annotations.
inline EvalOutput run_eval(const ExperimentConfig& c) {
  if (c.eval.detections.empty()) throw ConfigError("eval.detections: required for eval");
  prepare_out_dir(c);
  const auto m = load_dataset(c);
  detail::require_file("eval.detections", c.eval.detections);
  const auto dets = read_detections(c.eval.detections);
  auto out = evaluate_detections(dets, m.objects_by_image(), c);

  write_results(out_path(c, "results.csv"), out.rows, out.meta);
  std::vector<std::vector<std::string>> pr;
  for (const auto& e : out.results) {
    for (const auto& [cat, ce] : e.categories) {
      for (std::size_t r = 0; r < ce.pr.size(); ++r) {
        pr.push_back({cat, format_double(e.iou_threshold), std::to_string(r + 1),
                      format_double(ce.pr[r].recall), format_double(ce.pr[r].precision)});
      }
    }
  }
  write_table(out_path(c, "pr.csv"), "category,iou_threshold,rank,recall,precision", pr, out.meta);
  std::vector<std::vector<std::string>> loc;
  for (const auto& [cat, h] : out.localization.histograms) {
    for (std::size_t b = 0; b < h.size(); ++b) {
      loc.push_back({cat, format_double(b / 10.0), format_double((b + 1) / 10.0),
                     std::to_string(h[b])});
    }
  }
  write_table(out_path(c, "localization.csv"), "category,iou_lo,iou_hi,count", loc, out.meta);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOutput {
  DatasetManifest manifest;
  ProposalMap proposals;
};

/// synth-gen: manifest.jsonl and proposals.csv for a synthesized dataset.
inline SynthOutput run_synth_gen(const ExperimentConfig& c) {
  prepare_out_dir(c);
  SynthOutput out;
  out.manifest = synthesize_dataset(c.synth);
  out.proposals = perturbation_proposal_map(out.manifest, c.perturb);
  const auto meta = meta_for(c);
  write_manifest(out_path(c, "manifest.jsonl"), out.manifest,
                 nlohmann::ordered_json{{"config_hash", meta.config_hash}, {"seed", meta.seed}});
  save_proposals(out_path(c, "proposals.csv"), out.proposals, meta.comment());
  return out;
}

}  // namespace boxopt::harness
