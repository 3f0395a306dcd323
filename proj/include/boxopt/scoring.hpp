#pragma once

/// @file scoring.hpp
/// Detector scores consumed by the box search and by evaluation: the IoU
/// oracle, linear scorers over pluggable feature providers, a synthetic
/// feature world for desk-scale experiments, and the binary feature file.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <cstdint>
#include <cstring>
#include <limits>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "boxopt/errors.hpp"
#include "boxopt/geometry.hpp"

namespace boxopt {

using WeightVector = Eigen::VectorXd;

/// A batch of boxes on one image, scored for one category.
struct ScoreRequest {
  std::string image_id;
  std::string category;
  std::vector<BoundingBox> boxes;
};

/// Scorers must be safe to call concurrently; batching policy is theirs.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> score(const ScoreRequest& request) const = 0;

  double score_one(const std::string& image_id, const std::string& category,
                   const BoundingBox& box) const {
    return score({image_id, category, {box}}).front();
  }
};

enum class Provenance : std::uint8_t { initial, fgs, random_search };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::initial: return "initial";
    case Provenance::fgs: return "fgs";
    case Provenance::random_search: return "random";
  }
  return "?";
}

struct ScoredCandidate {
  BoundingBox box;
  double score;
  Provenance origin = Provenance::initial;
};

/// The scored boxes D of one (image, category) search.
struct ScoredBoxSet {
  std::string image_id;
  std::string category;
  std::vector<ScoredCandidate> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }

  double best_score() const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : items) best = std::max(best, c.score);
    return best;
  }

  std::size_t count(Provenance p) const {
    return static_cast<std::size_t>(std::count_if(
        items.begin(), items.end(),
        [p](const ScoredCandidate& c) { return c.origin == p; }));
  }

  std::vector<ScoredBox> scored_boxes() const {
    std::vector<ScoredBox> out;
    out.reserve(items.size());
    for (const auto& c : items) out.push_back({c.box, c.score});
    return out;
  }
};

struct GroundTruthObject {
  std::string category;
  BoundingBox box;
  bool difficult = false;
};

/// max_k IoU(y, gt_k); 0 when there is no ground truth.
inline double oracle_score(const BoundingBox& y,
                           const std::vector<BoundingBox>& gt) {
  double best = 0.0;
  for (const auto& g : gt) best = std::max(best, iou(y, g));
  return best;
}

/// The ideal detector: a box scores its best IoU with the ground truth of the
/// requested category on that image.
class OracleScorer : public Scorer {
 public:
  explicit OracleScorer(
      std::map<std::string, std::vector<GroundTruthObject>> objects)
      : objects_(std::move(objects)) {}

  std::vector<double> score(const ScoreRequest& req) const override {
    std::vector<BoundingBox> gt;
    if (auto it = objects_.find(req.image_id); it != objects_.end()) {
      for (const auto& o : it->second) {
        if (req.category.empty() || o.category == req.category) {
          gt.push_back(o.box);
        }
      }
    }
    std::vector<double> out;
    out.reserve(req.boxes.size());
    for (const auto& b : req.boxes) out.push_back(oracle_score(b, gt));
    return out;
  }

 private:
  std::map<std::string, std::vector<GroundTruthObject>> objects_;
};

/// phi(x, y): a deterministic d-vector per (image, box).
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual Eigen::VectorXd features(const std::string& image_id,
                                   const BoundingBox& box) const = 0;
};

inline double linear_score(const WeightVector& w,
                           const FeatureProvider& provider,
                           const std::string& image_id, const BoundingBox& y) {
  if (static_cast<std::size_t>(w.size()) != provider.dim()) {
    throw DataError("weight vector has dimension " + std::to_string(w.size()) +
                    " but features have " + std::to_string(provider.dim()));
  }
  return w.dot(provider.features(image_id, y));
}

/// f(x, y; w) = w^T phi(x, y) with one weight vector per category.
class LinearScorer : public Scorer {
 public:
  LinearScorer(std::shared_ptr<const FeatureProvider> provider,
               std::map<std::string, WeightVector> weights)
      : provider_(std::move(provider)), weights_(std::move(weights)) {}

  std::vector<double> score(const ScoreRequest& req) const override {
    const auto it = weights_.find(req.category);
    if (it == weights_.end()) {
      throw DataError("no weights for category '" + req.category + "'");
    }
    std::vector<double> out;
    out.reserve(req.boxes.size());
    for (const auto& b : req.boxes) {
      out.push_back(linear_score(it->second, *provider_, req.image_id, b));
    }
    return out;
  }

 private:
  std::shared_ptr<const FeatureProvider> provider_;
  std::map<std::string, WeightVector> weights_;
};

/// Scores `boxes` in one batch and wraps them as an initial search set.
inline ScoredBoxSet score_boxes(const Scorer& scorer, const std::string& image_id,
                                const std::string& category,
                                std::vector<BoundingBox> boxes) {
  ScoredBoxSet out{image_id, category, {}};
  if (boxes.empty()) return out;
  const auto scores = scorer.score({image_id, category, boxes});
  out.items.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw DataError("scorer returned a non-finite score on image '" +
                      image_id + "'");
    }
    out.items.push_back({boxes[i], scores[i], Provenance::initial});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic features

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t hash_string(const std::string& s, std::uint64_t h) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace detail

/// Hidden ground truth plus per-category prototype directions. A box's
/// feature interpolates between the prototype of the object it overlaps most
/// and a background direction, by that overlap.
struct SyntheticWorld {
  std::map<std::string, std::vector<GroundTruthObject>> images;
  std::map<std::string, Eigen::VectorXd> prototypes;
  Eigen::VectorXd background;
  double noise_scale = 0.1;
  std::uint64_t seed = 0;
  /// Noise is a function of the box rounded to this grid (pixels).
  double quantum = 0.25;

  std::size_t prototype_dim() const { return background.size(); }
  /// Feature length including the trailing constant-1 bias entry.
  std::size_t feature_dim() const { return background.size() + 1; }

  /// Orthonormal prototypes (one per category, plus background) drawn from a
  /// seeded Gaussian and Gram-Schmidt orthogonalized.
  static SyntheticWorld with_prototypes(const std::vector<std::string>& cats,
                                        std::size_t dim, double noise_scale,
                                        std::uint64_t seed) {
    if (cats.size() + 1 > dim) {
      throw std::invalid_argument(
          "prototype dimension must exceed the number of categories");
    }
    SyntheticWorld w;
    w.noise_scale = noise_scale;
    w.seed = seed;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Eigen::VectorXd> basis;
    for (std::size_t k = 0; k <= cats.size(); ++k) {
      Eigen::VectorXd v(dim);
      for (std::size_t i = 0; i < dim; ++i) v[i] = g(rng);
      for (const auto& b : basis) v -= v.dot(b) * b;
      v.normalize();
      basis.push_back(v);
    }
    for (std::size_t k = 0; k < cats.size(); ++k) w.prototypes[cats[k]] = basis[k];
    w.background = basis.back();
    return w;
  }
};

inline Eigen::VectorXd synthetic_features(const SyntheticWorld& world,
                                          const std::string& image_id,
                                          const BoundingBox& y) {
  const std::size_t d = world.prototype_dim();
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(d + 1);

  double overlap = 0.0;
  const Eigen::VectorXd* proto = nullptr;
  if (auto it = world.images.find(image_id); it != world.images.end()) {
    for (const auto& o : it->second) {
      const double v = iou(y, o.box);
      if (v > overlap) {
        overlap = v;
        proto = &world.prototypes.at(o.category);
      }
    }
  }
  phi.head(d) = (1.0 - overlap) * world.background;
  if (proto) phi.head(d) += overlap * *proto;

  if (world.noise_scale > 0.0) {
    std::uint64_t h = detail::hash_string(image_id, world.seed * 0x100000001b3ULL + 7);
    for (double c : y.coords()) {
      const auto q = static_cast<std::int64_t>(std::llround(c / world.quantum));
      h = detail::fnv1a(&q, sizeof q, h);
    }
    std::mt19937_64 rng(h);
    std::normal_distribution<double> g(0.0, world.noise_scale);
    for (std::size_t i = 0; i < d; ++i) phi[i] += g(rng);
  }
  phi[d] = 1.0;
  return phi;
}

class SyntheticFeatureProvider : public FeatureProvider {
 public:
  explicit SyntheticFeatureProvider(std::shared_ptr<const SyntheticWorld> world)
      : world_(std::move(world)) {}
  std::size_t dim() const override { return world_->feature_dim(); }
  Eigen::VectorXd features(const std::string& image_id,
                           const BoundingBox& box) const override {
    return synthetic_features(*world_, image_id, box);
  }

 private:
  std::shared_ptr<const SyntheticWorld> world_;
};

// ---------------------------------------------------------------------------
// Binary feature file: "BXF1", u32 d, then records of
// (u32 length + image id bytes, 4 x f64 box, d x f32 features). Little-endian.

struct FeatureRecord {
  std::string image_id;
  BoundingBox box;
  std::vector<float> features;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  os.write(buf, sizeof(T));
}

template <typename T>
bool read_le(std::istream& is, T& value) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  std::memcpy(&value, buf, sizeof(T));
  return true;
}

}  // namespace detail

inline void write_feature_file(const std::string& path, std::uint32_t dim,
                               const std::vector<FeatureRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write("BXF1", 4);
  detail::write_le(os, dim);
  for (const auto& r : records) {
    if (r.features.size() != dim) {
      throw DataError("feature record for '" + r.image_id +
                      "' has wrong dimension");
    }
    detail::write_le(os, static_cast<std::uint32_t>(r.image_id.size()));
    os.write(r.image_id.data(), static_cast<std::streamsize>(r.image_id.size()));
    for (double c : r.box.coords()) detail::write_le(os, c);
    for (float f : r.features) detail::write_le(os, f);
  }
}

inline std::pair<std::uint32_t, std::vector<FeatureRecord>> read_feature_file(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "BXF1") {
    throw DataError(path + ": bad magic, expected BXF1");
  }
  std::uint32_t dim = 0;
  if (!detail::read_le(is, dim)) throw DataError(path + ": truncated header");
  std::vector<FeatureRecord> out;
  for (std::size_t rec = 0;; ++rec) {
    std::uint32_t len = 0;
    if (!detail::read_le(is, len)) break;
    std::string id(len, '\0');
    std::array<double, 4> c{};
    bool ok = static_cast<bool>(is.read(id.data(), len));
    for (auto& v : c) ok = ok && detail::read_le(is, v);
    std::vector<float> f(dim);
    for (auto& v : f) ok = ok && detail::read_le(is, v);
    if (!ok) {
      throw DataError(path + ": truncated record " + std::to_string(rec));
    }
    if (!BoundingBox::is_valid(c[0], c[1], c[2], c[3])) {
      throw DataError(path + ": invalid box in record " + std::to_string(rec));
    }
    out.push_back({std::move(id), BoundingBox(c[0], c[1], c[2], c[3]),
                   std::move(f)});
  }
  return {dim, std::move(out)};
}

/// Serves features exported by an external extractor. Lookups are exact on
/// (image id, box coordinates).
class FileFeatureProvider : public FeatureProvider {
 public:
  explicit FileFeatureProvider(const std::string& path) {
    auto [dim, records] = read_feature_file(path);
    dim_ = dim;
    for (auto& r : records) {
      Eigen::VectorXd v(dim_);
      for (std::size_t i = 0; i < dim_; ++i) v[i] = r.features[i];
      table_[key(r.image_id, r.box)] = std::move(v);
    }
  }

  std::size_t dim() const override { return dim_; }

  Eigen::VectorXd features(const std::string& image_id,
                           const BoundingBox& box) const override {
    const auto it = table_.find(key(image_id, box));
    if (it == table_.end()) {
      std::ostringstream msg;
      msg << "no features for image '" << image_id << "' box " << box;
      throw DataError(msg.str());
    }
    return it->second;
  }

  std::size_t size() const { return table_.size(); }

 private:
  static std::string key(const std::string& id, const BoundingBox& b) {
    std::string k = id;
    k.push_back('\0');
    for (double c : b.coords()) {
      k.append(reinterpret_cast<const char*>(&c), sizeof c);
    }
    return k;
  }

  std::size_t dim_ = 0;
  std::unordered_map<std::string, Eigen::VectorXd> table_;
};

}  // namespace boxopt
