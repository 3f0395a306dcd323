#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "boxopt/harness/experiments.hpp"

using namespace boxopt;
using namespace boxopt::harness;
namespace fs = std::filesystem;

namespace {

/// Fresh directory per test.
fs::path scratch() {
  const auto* info = testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() /
             ("boxopt_" + std::string(info->test_suite_name()) + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

ExperimentConfig config_from(const std::string& text, const fs::path& out = {}) {
  auto t = ConfigTable::from_string(text);
  if (!out.empty()) t.set("out", {out.string()});
  return load_experiment_config(t);
}

/// Small oracle benchmark: a handful of images, short GP fit.
std::string small_benchmark(std::size_t images = 6) {
  return "seed = 5\n[synth]\nimages = " + std::to_string(images) +
         "\n[gp]\ntrain_images = 6\nmax_iterations = 40\n";
}

std::string config_error(const std::string& text) {
  try {
    config_from(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BOXOPT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsAndSections) {
  const auto c = config_from(
      "seed = 9\n"
      "[fgs]\n"
      "t_max = 4\n"
      "rho_levels = [0.4, 0.6]\n"
      "[eval]\n"
      "thresholds = [0.5, 0.7]\n"
      "mode = \"all_points\"\n"
      "[synth]\n"
      "categories = [\"cat\", \"dog\"]\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.fgs.t_max, 4);
  EXPECT_EQ(c.fgs.rho_levels, (std::vector<double>{0.4, 0.6}));
  EXPECT_EQ(c.eval.thresholds, (std::vector<double>{0.5, 0.7}));
  EXPECT_EQ(c.eval.mode, ApMode::all_points);
  EXPECT_EQ(c.synth.categories, (std::vector<std::string>{"cat", "dog"}));
  // Sub-seeds follow the global seed unless set.
  EXPECT_EQ(c.synth.seed, 9u);
  EXPECT_EQ(c.perturb.seed, 9u);
  EXPECT_EQ(c.gp.seed, 9u);
  // Untouched sections keep their defaults.
  EXPECT_DOUBLE_EQ(c.train.svm.C1, 2.0);
  EXPECT_DOUBLE_EQ(c.train.svm.C2, 1.0);
  EXPECT_EQ(c.scorer, "oracle");
  EXPECT_DOUBLE_EQ(c.fgs.f_prune, 0.05);
}

TEST(Config, LinearScorerPrunesAtZero) {
  const auto dir = scratch();
  spit(dir / "model.json", "{}");
  const auto c = config_from("[scorer]\nkind = \"linear\"\nmodel = \"" +
                             (dir / "model.json").string() + "\"\n");
  EXPECT_DOUBLE_EQ(c.fgs.f_prune, 0.0);
}

TEST(Config, ExplicitSubSeedWins) {
  const auto c = config_from("seed = 9\n[synth]\nseed = 4\n");
  EXPECT_EQ(c.synth.seed, 4u);
  EXPECT_EQ(c.perturb.seed, 9u);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(config_error("[fgs]\nt_maxx = 3\n").find("fgs.t_maxx: unknown key"),
            std::string::npos);
  EXPECT_NE(config_error("[fgs]\nt_max = three\n").find("fgs.t_max"), std::string::npos);
  EXPECT_NE(config_error("[fgs]\nt_max = -1\n").find("fgs.t_max"), std::string::npos);
  EXPECT_NE(config_error("[fgs]\nrho_levels = [0.5, 0.3]\n").find("fgs.rho_levels"),
            std::string::npos);
  EXPECT_NE(config_error("[eval]\nthresholds = [0.5, 0.5]\n").find("eval.thresholds"),
            std::string::npos);
  EXPECT_NE(config_error("[eval]\nthresholds = [0.5, 1.0]\n").find("eval.thresholds"),
            std::string::npos);
  EXPECT_NE(config_error("[eval]\nmode = \"voc\"\n").find("eval.mode"), std::string::npos);
  EXPECT_NE(config_error("[scorer]\nkind = \"cnn\"\n").find("scorer.kind"), std::string::npos);
  EXPECT_NE(config_error("[gp]\nrho = 1.5\n").find("gp.rho"), std::string::npos);
  EXPECT_NE(config_error("[train]\nC1 = -1\n").find("C1"), std::string::npos);
  EXPECT_NE(config_error("[dataset]\nmanifest = \"/nonexistent/m.jsonl\"\n")
                .find("dataset.manifest"),
            std::string::npos);
  // A repeated key reads back as a two-valued scalar.
  EXPECT_NE(config_error("seed = 1\nseed = 2\n").find("seed:"), std::string::npos);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const auto dir = scratch();
  spit(dir / "p.csv", "image_id,u1,v1,u2,v2\n");
  spit(dir / "exp.toml", "[proposals]\npath = \"p.csv\"\n");
  const auto c = load_experiment_config_file((dir / "exp.toml").string());
  EXPECT_EQ(fs::path(c.proposals), dir / "p.csv");
}

TEST(Config, EffectiveTextReloadsToSameHash) {
  const auto c = config_from(
      "seed = 3\n[fgs]\nt_max = 5\n[eval]\nthresholds = [0.3, 0.6]\n[synth]\n"
      "categories = [\"a\", \"b\"]\nid_prefix = \"x\"\n");
  const auto again = config_from(effective_config_text(c));
  EXPECT_EQ(effective_config_text(again), effective_config_text(c));
  EXPECT_EQ(config_hash(again), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  const auto a = config_from("seed = 3\n", "/tmp/a");
  const auto b = config_from("seed = 3\n", "/tmp/b");
  const auto c = config_from("seed = 4\n", "/tmp/a");
  const auto d = config_from("seed = 3\n[fgs]\nt_max = 7\n", "/tmp/a");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_NE(config_hash(a), config_hash(d));
}

// ---------------------------------------------------------------------------
// File formats

TEST(Formats, ManifestRoundTrip) {
  const auto dir = scratch();
  SynthConfig sc;
  sc.images = 12;
  sc.categories = {"a", "b"};
  sc.max_objects = 3;
  sc.split = "train";
  auto m = synthesize_dataset(sc);
  m.images[0].objects[0].difficult = true;
  m.images[1].width = 400.25;
  m.images[1].objects[0].box = BoundingBox(1.125, 2.5, 30.75, 40.0625);
  write_manifest((dir / "m.jsonl").string(), m, {{"config_hash", "abc"}, {"seed", 1}});
  const auto back = read_manifest((dir / "m.jsonl").string());
  ASSERT_EQ(back.images.size(), m.images.size());
  for (std::size_t i = 0; i < m.images.size(); ++i) {
    const auto &x = m.images[i], &y = back.images[i];
    EXPECT_EQ(x.id, y.id);
    EXPECT_EQ(x.width, y.width);
    EXPECT_EQ(x.height, y.height);
    EXPECT_EQ(x.split, y.split);
    ASSERT_EQ(x.objects.size(), y.objects.size());
    for (std::size_t k = 0; k < x.objects.size(); ++k) {
      EXPECT_EQ(x.objects[k].category, y.objects[k].category);
      EXPECT_EQ(x.objects[k].difficult, y.objects[k].difficult);
      EXPECT_EQ(x.objects[k].box, y.objects[k].box);
    }
  }
  // Write, read, write is a fixed point.
  write_manifest((dir / "m2.jsonl").string(), back, {{"config_hash", "abc"}, {"seed", 1}});
  EXPECT_EQ(slurp(dir / "m.jsonl"), slurp(dir / "m2.jsonl"));
}

TEST(Formats, ManifestErrorsCarryLine) {
  const auto dir = scratch();
  spit(dir / "bad.jsonl",
       "{\"id\":\"a\",\"w\":10,\"h\":10,\"objects\":[]}\n{\"id\":\"b\",\"w\":10}\n");
  try {
    read_manifest((dir / "bad.jsonl").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
  spit(dir / "dup.jsonl",
       "{\"id\":\"a\",\"w\":10,\"h\":10,\"objects\":[]}\n"
       "{\"id\":\"a\",\"w\":10,\"h\":10,\"objects\":[]}\n");
  EXPECT_THROW(read_manifest((dir / "dup.jsonl").string()), DataError);
  spit(dir / "oob.jsonl",
       "{\"id\":\"a\",\"w\":10,\"h\":10,\"objects\":[{\"cat\":\"x\",\"box\":[0,0,11,5],"
       "\"difficult\":false}]}\n");
  EXPECT_THROW(read_manifest((dir / "oob.jsonl").string()), DataError);
}

TEST(Formats, DetectionsRoundTrip) {
  const auto dir = scratch();
  const std::vector<Detection> dets{
      {"img1", "a", {0.5, 1.25, 10.0, 20.125}, 0.875},
      {"img2", "b", {3.0, 4.0, 5.0, 6.0}, -1.5e-7},
  };
  write_detections((dir / "d.csv").string(), dets, {"0123456789abcdef", 7});
  const auto text = slurp(dir / "d.csv");
  EXPECT_EQ(text.rfind("# config_hash=0123456789abcdef seed=7\n", 0), 0u);
  EXPECT_NE(text.find("\nimage_id,category,u1,v1,u2,v2,score\n"), std::string::npos);
  const auto back = read_detections((dir / "d.csv").string());
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].image_id, dets[i].image_id);
    EXPECT_EQ(back[i].category, dets[i].category);
    EXPECT_EQ(back[i].box, dets[i].box);
    EXPECT_EQ(back[i].score, dets[i].score);
  }
}

TEST(Formats, DetectionErrors) {
  const auto dir = scratch();
  spit(dir / "h.csv", "image,category,u1,v1,u2,v2,score\n");
  EXPECT_THROW(read_detections((dir / "h.csv").string()), DataError);
  spit(dir / "f.csv", "image_id,category,u1,v1,u2,v2,score\nimg,a,0,0,1,1\n");
  EXPECT_THROW(read_detections((dir / "f.csv").string()), DataError);
  spit(dir / "b.csv", "image_id,category,u1,v1,u2,v2,score\nimg,a,0,0,1,1,0.5\nimg,a,5,0,1,1,0.5\n");
  try {
    read_detections((dir / "b.csv").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("b.csv:3"), std::string::npos) << e.what();
  }
  spit(dir / "n.csv", "image_id,category,u1,v1,u2,v2,score\nimg,a,0,0,1,1,x\n");
  EXPECT_THROW(read_detections((dir / "n.csv").string()), DataError);
  EXPECT_THROW(read_detections((dir / "missing.csv").string()), DataError);
}

TEST(Formats, ResultsRoundTrip) {
  const auto dir = scratch();
  const std::vector<ResultRow> rows{{"fgs", 0.5, "all", 0.75}, {"baseline", 0.9, "cat", 0.1}};
  write_results((dir / "r.csv").string(), rows, {"h", 1});
  EXPECT_EQ(read_results((dir / "r.csv").string()), rows);
}

TEST(Formats, ProposalsRoundTripWithComment) {
  const auto dir = scratch();
  ProposalMap p{{"a", {{0.1, 0.2, 3.3, 4.4}}}, {"b", {{1, 1, 2, 2}, {0, 0, 5, 5}}}};
  save_proposals((dir / "p.csv").string(), p, "config_hash=x seed=1");
  EXPECT_EQ(load_proposals((dir / "p.csv").string()), p);
}

TEST(Formats, ModelRoundTrip) {
  const auto dir = scratch();
  ModelWeights m;
  m["a"] = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  m["b"] = Eigen::VectorXd::Constant(5, 0.1);
  write_model((dir / "model.json").string(), m, {"feedbeef", 3});
  const auto j = nlohmann::json::parse(slurp(dir / "model.json"));
  EXPECT_EQ(j.at("a").at("config_hash"), "feedbeef");
  EXPECT_EQ(j.at("a").at("seed"), 3);
  const auto back = read_model((dir / "model.json").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("a"), m["a"]);
  EXPECT_EQ(back.at("b"), m["b"]);

  spit(dir / "mismatch.json", R"({"a":{"w":[1,2]},"b":{"w":[1,2,3]}})");
  EXPECT_THROW(read_model((dir / "mismatch.json").string()), DataError);
  spit(dir / "empty.json", "{}");
  EXPECT_THROW(read_model((dir / "empty.json").string()), DataError);
  spit(dir / "junk.json", "{\"a\":");
  EXPECT_THROW(read_model((dir / "junk.json").string()), DataError);
}

TEST(Formats, GpParamsRoundTrip) {
  const auto dir = scratch();
  const auto h = GpHyperParams::from_natural(150.0, 0.4, 0.02, {1.5, 2.5, 6.0, 7.0});
  write_gp_params((dir / "gp.json").string(), h, "test", {"x", 1});
  const auto j = nlohmann::json::parse(slurp(dir / "gp.json"));
  for (const char* k : {"beta", "m0", "eta", "lambda", "note", "config_hash", "seed"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  const auto back = read_gp_params((dir / "gp.json").string());
  EXPECT_NEAR(back.beta(), 150.0, 1e-9);
  EXPECT_NEAR(back.m0, 0.4, 1e-12);
  EXPECT_NEAR(back.eta(), 0.02, 1e-12);
  for (int d = 0; d < 4; ++d) EXPECT_NEAR(back.lambda(d), h.lambda(d), 1e-9);

  spit(dir / "bad.json", R"({"beta":1,"m0":0,"eta":1,"lambda":[1,1,1]})");
  EXPECT_THROW(read_gp_params((dir / "bad.json").string()), DataError);
  spit(dir / "neg.json", R"({"beta":-1,"m0":0,"eta":1,"lambda":[1,1,1,1]})");
  EXPECT_THROW(read_gp_params((dir / "neg.json").string()), DataError);
}

// ---------------------------------------------------------------------------
// Worker pool

TEST(Parallel, VisitsEveryIndexOnce) {
  for (std::size_t threads : {1u, 3u, 8u}) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; }, threads);
    EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 100);
  }
  parallel_for(0, [](std::size_t) { FAIL(); }, 4);
}

TEST(Parallel, RethrowsLowestFailingIndex) {
  try {
    parallel_for(50, [](std::size_t i) {
      if (i == 7 || i == 30) throw std::runtime_error(std::to_string(i));
    }, 1);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(Parallel, ThreadCountFromEnvironment) {
  setenv("BOXOPT_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  setenv("BOXOPT_THREADS", "zero", 1);
  EXPECT_GE(worker_count(), 1u);
  unsetenv("BOXOPT_THREADS");
}

// ---------------------------------------------------------------------------
// GP training sets

TEST(GpTrainingSets, RhoNearOneDropsEverySet) {
  SynthConfig sc;
  sc.images = 10;
  const auto m = synthesize_dataset(sc);
  const auto p = perturbation_proposal_map(m, {});
  const OracleScorer oracle(m.objects_by_image());
  const auto s = build_gp_training_sets(m, p, oracle, 0.999, 50, 1);
  EXPECT_TRUE(s.sets.empty());
  std::size_t objects = 0;
  for (const auto& im : m.images) objects += im.objects.size();
  EXPECT_EQ(s.dropped, objects);
}

TEST(GpTrainingSets, DefaultMedianSizeInCalibratedRange) {
  SynthConfig sc;
  sc.images = 60;
  const auto m = synthesize_dataset(sc);
  const auto p = perturbation_proposal_map(m, {});
  const OracleScorer oracle(m.objects_by_image());
  const GpSpec spec;
  const auto s = build_gp_training_sets(m, p, oracle, spec.rho, spec.random_extra, 1);
  std::vector<std::size_t> sizes;
  for (const auto& o : s.sets) sizes.push_back(o.size());
  std::sort(sizes.begin(), sizes.end());
  const auto median = sizes[sizes.size() / 2];
  EXPECT_GE(median, 10u);
  EXPECT_LE(median, 80u);
}

// ---------------------------------------------------------------------------
// Orchestration

TEST(OracleExperiment, SchemaAndBounds) {
  const auto dir = scratch();
  const auto c = config_from(small_benchmark() + "[eval]\nthresholds = [0.5, 0.7, 0.9]\n", dir);
  const auto r = run_oracle_experiment(c);
  const auto rows = read_results((dir / "results.csv").string());
  ASSERT_EQ(rows.size(), oracle_methods().size() * c.eval.thresholds.size());
  EXPECT_EQ(rows, r.rows);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].method, oracle_methods()[k / 3]);
    EXPECT_EQ(rows[k].iou_threshold, c.eval.thresholds[k % 3]);
  }
  for (const auto& s : r.searches) {
    EXPECT_LE(s.fgs_added, s.fgs_bound);
    EXPECT_LE(s.random_added, s.fgs_added);
    for (std::size_t t = 1; t < s.trace.size(); ++t) EXPECT_GE(s.trace[t], s.trace[t - 1]);
  }
  // box_counts.csv: one row per (image, method).
  std::istringstream counts(slurp(dir / "box_counts.csv"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(counts, line)) n += (line.empty() || line[0] == '#') ? 0 : 1;
  EXPECT_EQ(n, 1 + 6 * oracle_methods().size());
  for (const char* f : {"results.csv", "box_counts.csv", "fgs_trace.csv", "gp.json"}) {
    EXPECT_NE(slurp(dir / f).find(r.meta.config_hash), std::string::npos) << f;
  }
  EXPECT_EQ(config_from(slurp(dir / "config.toml")).seed, c.seed);
}

TEST(OracleExperiment, ExactProposalsGiveBaselinePerfectAtLowThreshold) {
  const auto dir = scratch();
  const auto c = config_from(small_benchmark() +
                                 "[proposals]\ncenter_jitter = 0\nlog_size_jitter = 0\n"
                                 "boxes_per_gt = 1\n[eval]\nthresholds = [0.1]\n",
                             dir);
  const auto r = run_oracle_experiment(c);
  EXPECT_DOUBLE_EQ(r.map("baseline", 0.1), 1.0);
}

TEST(OracleExperiment, ByteIdenticalReruns) {
  const auto dir = scratch();
  const auto text = small_benchmark();
  setenv("BOXOPT_THREADS", "1", 1);
  run_oracle_experiment(config_from(text, dir / "a"));
  setenv("BOXOPT_THREADS", "4", 1);
  run_oracle_experiment(config_from(text, dir / "b"));
  unsetenv("BOXOPT_THREADS");
  for (const char* f :
       {"results.csv", "box_counts.csv", "fgs_trace.csv", "gp.json", "config.toml"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(Refine, ZeroIterationsIsPlainPostprocessing) {
  const auto dir = scratch();
  const auto c = config_from("seed = 2\n[synth]\nimages = 5\n[fgs]\nt_max = 0\n", dir);
  const auto r = run_refine(c);

  const auto m = load_dataset(c);
  const auto props = load_or_make_proposals(c, m);
  const OracleScorer oracle(m.objects_by_image());
  std::vector<Detection> expect;
  for (const auto& im : m.images) {
    const auto s = score_boxes(oracle, im.id, "object", props.at(im.id));
    for (const auto& b : postprocess(s.scored_boxes(), 0.0, 0.3)) {
      expect.push_back({im.id, "object", b.box, b.score});
    }
  }
  ASSERT_EQ(r.detections.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    EXPECT_EQ(r.detections[i].image_id, expect[i].image_id);
    EXPECT_EQ(r.detections[i].box, expect[i].box);
    EXPECT_EQ(r.detections[i].score, expect[i].score);
  }
  EXPECT_FALSE(fs::exists(dir / "fgs_trace.csv"));
}

TEST(Refine, SearchNeedsGpParams) {
  const auto dir = scratch();
  EXPECT_THROW(run_refine(config_from("[synth]\nimages = 2\n", dir)), ConfigError);

  // A missing params file is reported by the command that reads it.
  const auto c = config_from("[synth]\nimages = 2\n[gp]\nparams = \"/nonexistent/gp.json\"\n", dir);
  try {
    run_refine(c);
    ADD_FAILURE() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gp.params"), std::string::npos);
  }
}

TEST(Eval, GroundTruthDetectionsScorePerfect) {
  const auto dir = scratch();
  SynthConfig sc;
  sc.images = 8;
  sc.categories = {"a", "b"};
  const auto m = synthesize_dataset(sc);
  write_manifest((dir / "m.jsonl").string(), m);
  std::vector<Detection> dets;
  for (const auto& im : m.images) {
    for (const auto& o : im.objects) dets.push_back({im.id, o.category, o.box, 1.0});
  }
  write_detections((dir / "d.csv").string(), dets, {"x", 0});
  const auto c = config_from("[dataset]\nmanifest = \"" + (dir / "m.jsonl").string() +
                                 "\"\n[eval]\ndetections = \"" + (dir / "d.csv").string() +
                                 "\"\n",
                             dir / "out");
  const auto r = run_eval(c);
  ASSERT_EQ(r.results.size(), c.eval.thresholds.size());
  for (const auto& e : r.results) EXPECT_DOUBLE_EQ(e.map, 1.0) << e.iou_threshold;
  // Per-category rows plus one "all" row per threshold.
  EXPECT_EQ(read_results((dir / "out" / "results.csv").string()).size(),
            3 * c.eval.thresholds.size());
  for (const char* f : {"pr.csv", "localization.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
}

TEST(TrainRefineEval, SmallPipelineRuns) {
  const auto dir = scratch();
  const std::string base =
      "seed = 4\n[synth]\nimages = 12\ncategories = [\"a\", \"b\"]\n"
      "[train]\nupdate_threshold = 50\n";
  const auto tc = config_from(base, dir / "train");
  const auto t = run_train(tc);
  ASSERT_EQ(t.model.size(), 2u);
  for (const auto& ct : t.categories) {
    EXPECT_GT(ct.positives, 0u);
    EXPECT_GT(ct.negatives, 0u);
  }
  const auto model = read_model((dir / "train" / "model.json").string());
  // Prototype dimension plus the trailing bias entry.
  EXPECT_EQ(model.at("a").size(), static_cast<Eigen::Index>(tc.features.dim + 1));

  const auto rc = config_from(base + "[scorer]\nkind = \"linear\"\nmodel = \"" +
                                  (dir / "train" / "model.json").string() +
                                  "\"\n[refine]\nfgs = false\n",
                              dir / "refine");
  const auto r = run_refine(rc);
  EXPECT_FALSE(r.detections.empty());

  const auto ec = config_from(base + "[eval]\ndetections = \"" +
                                  (dir / "refine" / "detections.csv").string() + "\"\n",
                              dir / "eval");
  const auto e = run_eval(ec);
  EXPECT_GT(e.results.front().map, 0.5);
}

TEST(Train, WrongFeatureDimensionIsDataError) {
  const auto dir = scratch();
  spit(dir / "model.json", R"({"object":{"w":[1,2,3]}})");
  const auto c = config_from("[synth]\nimages = 2\n[scorer]\nkind = \"linear\"\nmodel = \"" +
                                 (dir / "model.json").string() + "\"\n[refine]\nfgs = false\n",
                             dir / "out");
  EXPECT_THROW(run_refine(c), DataError);
}

// ---------------------------------------------------------------------------
// CLI

TEST(Cli, ExitCodes) {
  const auto dir = scratch();
  const auto out = (dir / "out").string();
  spit(dir / "small.toml", "[synth]\nimages = 3\n");
  EXPECT_EQ(run_cli("synth-gen --config " + (dir / "small.toml").string() + " --out " + out), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "out" / "proposals.csv"));

  spit(dir / "typo.toml", "[fgs]\ntmax = 3\n");
  EXPECT_EQ(run_cli("oracle-exp --config " + (dir / "typo.toml").string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("oracle-exp --config " + (dir / "missing.toml").string()), 2);
  EXPECT_EQ(run_cli("oracle-exp --bogus"), 2);
  EXPECT_EQ(run_cli(""), 2);

  spit(dir / "broken.jsonl", "{not json}\n");
  spit(dir / "data.toml", "[dataset]\nmanifest = \"broken.jsonl\"\n");
  EXPECT_EQ(run_cli("eval --config " + (dir / "data.toml").string() + " --out " + out), 2);
  spit(dir / "data2.toml",
       "[dataset]\nmanifest = \"broken.jsonl\"\n[eval]\ndetections = \"broken.jsonl\"\n");
  EXPECT_EQ(run_cli("eval --config " + (dir / "data2.toml").string() + " --out " + out), 3);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, SeedFlagOverridesConfig) {
  const auto dir = scratch();
  spit(dir / "c.toml", "seed = 1\n[synth]\nimages = 2\n");
  const auto cfg = (dir / "c.toml").string();
  ASSERT_EQ(run_cli("synth-gen --config " + cfg + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli("synth-gen --config " + cfg + " --seed 2 --out " + (dir / "b").string()), 0);
  ASSERT_EQ(run_cli("synth-gen --config " + cfg + " --seed 1 --out " + (dir / "c").string()), 0);
  EXPECT_NE(slurp(dir / "a" / "manifest.jsonl"), slurp(dir / "b" / "manifest.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "manifest.jsonl"), slurp(dir / "c" / "manifest.jsonl"));
  EXPECT_NE(slurp(dir / "b" / "config.toml").find("seed = 2"), std::string::npos);
}
