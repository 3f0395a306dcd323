// Refines the proposals of one synthetic image with FGS under the oracle
// scorer and prints how the best box improves per iteration.
//
//   oracle_refine_demo [seed]

#include <cstdio>
#include <cstdlib>

#include "boxopt/harness/experiments.hpp"

using namespace boxopt;
using namespace boxopt::harness;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;

  // Hyperparameters from a small training set of other synthetic images.
  SynthConfig train_cfg;
  train_cfg.images = 20;
  train_cfg.seed = seed + 1000;
  train_cfg.id_prefix = "train";
  const auto train = synthesize_dataset(train_cfg);
  PerturbConfig perturb;
  perturb.seed = seed + 2000;
  GpSpec gp;
  const auto fit = fit_gp_on(train, perturbation_proposal_map(train, perturb),
                             OracleScorer(train.objects_by_image()), gp);
  const auto& h = fit.fit.hyper;
  std::printf("GP %s\n  beta %.3g m0 %.3g eta %.3g lambda (%.3g %.3g %.3g %.3g)\n\n",
              describe_fit(fit).c_str(), h.beta(), h.m0, h.eta(), h.lambda(0), h.lambda(1),
              h.lambda(2), h.lambda(3));

  SynthConfig test_cfg;
  test_cfg.images = 1;
  test_cfg.seed = seed;
  const auto test = synthesize_dataset(test_cfg);
  const auto& im = test.images.front();
  perturb.seed = seed;
  const auto proposals = perturbation_proposal_map(test, perturb).at(im.id);
  const OracleScorer oracle(test.objects_by_image());

  const auto init = score_boxes(oracle, im.id, "object", proposals);
  FgsConfig fgs;
  fgs.f_prune = 0.05;
  const auto res = local_fgs(oracle, init, h, fgs);

  std::printf("image %s (%.0fx%.0f), %zu objects, %zu proposals\n", im.id.c_str(), im.width,
              im.height, im.objects.size(), proposals.size());
  for (std::size_t t = 0; t < res.best_score_trace.size(); ++t) {
    std::printf("  iteration %zu  best IoU %.4f\n", t, res.best_score_trace[t]);
  }
  std::printf("added %zu boxes (bound %zu)\n\n", res.proposals_added, res.proposal_bound);

  // Per object: best IoU among the initial proposals and after refinement.
  for (const auto& o : im.objects) {
    double before = 0.0, after = 0.0;
    for (const auto& c : res.boxes.items) {
      const double v = iou(c.box, o.box);
      after = std::max(after, v);
      if (c.origin == Provenance::initial) before = std::max(before, v);
    }
    std::printf("object [%.0f %.0f %.0f %.0f]  best IoU %.4f -> %.4f\n", o.box.u1(), o.box.v1(),
                o.box.u2(), o.box.v2(), before, after);
  }
  return 0;
}
