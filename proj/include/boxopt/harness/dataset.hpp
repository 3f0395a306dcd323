#pragma once

/// @file dataset.hpp
/// Image manifests (JSON Lines) and synthetic dataset generation.

#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "boxopt/errors.hpp"
#include "boxopt/geometry.hpp"
#include "boxopt/scoring.hpp"
#include "json.hpp"

namespace boxopt::harness {

struct ImageRecord {
  std::string id;
  double width = 0.0;
  double height = 0.0;
  std::vector<GroundTruthObject> objects;
  std::string split;
};

struct DatasetManifest {
  std::vector<ImageRecord> images;

  std::set<std::string> categories() const {
    std::set<std::string> out;
    for (const auto& im : images) {
      for (const auto& o : im.objects) out.insert(o.category);
    }
    return out;
  }

  DatasetManifest filter_split(const std::string& split) const {
    DatasetManifest out;
    for (const auto& im : images) {
      if (im.split == split) out.images.push_back(im);
    }
    return out;
  }

  std::map<std::string, std::vector<GroundTruthObject>> objects_by_image() const {
    std::map<std::string, std::vector<GroundTruthObject>> out;
    for (const auto& im : images) out[im.id] = im.objects;
    return out;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& im : images) {
      if (!ids.insert(im.id).second) {
        throw DataError("manifest: duplicate image id '" + im.id + "'");
      }
      if (!(im.width > 0.0 && im.height > 0.0)) {
        throw DataError("manifest: image '" + im.id + "' has non-positive size");
      }
      for (const auto& o : im.objects) {
        const auto& b = o.box;
        if (b.u1() < 0.0 || b.v1() < 0.0 || b.u2() > im.width ||
            b.v2() > im.height) {
          throw DataError("manifest: object outside image '" + im.id + "'");
        }
      }
    }
  }
};

inline nlohmann::ordered_json to_json(const ImageRecord& im) {
  nlohmann::ordered_json j;
  j["id"] = im.id;
  j["w"] = im.width;
  j["h"] = im.height;
  auto objs = nlohmann::ordered_json::array();
  for (const auto& o : im.objects) {
    nlohmann::ordered_json oj;
    oj["cat"] = o.category;
    oj["box"] = {o.box.u1(), o.box.v1(), o.box.u2(), o.box.v2()};
    oj["difficult"] = o.difficult;
    objs.push_back(std::move(oj));
  }
  j["objects"] = std::move(objs);
  if (!im.split.empty()) j["split"] = im.split;
  return j;
}

inline ImageRecord image_from_json(const nlohmann::json& j) {
  ImageRecord im;
  im.id = j.at("id").get<std::string>();
  im.width = j.at("w").get<double>();
  im.height = j.at("h").get<double>();
  if (j.contains("split")) im.split = j.at("split").get<std::string>();
  for (const auto& oj : j.at("objects")) {
    const auto c = oj.at("box").get<std::vector<double>>();
    if (c.size() != 4 || !BoundingBox::is_valid(c[0], c[1], c[2], c[3])) {
      throw DataError("invalid box in image '" + im.id + "'");
    }
    im.objects.push_back({oj.at("cat").get<std::string>(),
                          BoundingBox(c[0], c[1], c[2], c[3]),
                          oj.value("difficult", false)});
  }
  return im;
}

/// `meta`, if given, is written first as {"_meta": meta}; readers skip it.
inline void write_manifest(const std::string& path, const DatasetManifest& m,
                           const nlohmann::ordered_json& meta = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  if (!meta.is_null()) os << nlohmann::ordered_json{{"_meta", meta}}.dump() << '\n';
  for (const auto& im : m.images) os << to_json(im).dump() << '\n';
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.is_object() && j.contains("_meta")) continue;
      m.images.push_back(image_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic datasets

struct SynthConfig {
  std::size_t images = 200;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::vector<std::string> categories{"object"};
  double min_image_side = 300.0;
  double max_image_side = 500.0;
  /// Object side lengths as fractions of the image side.
  double min_object_frac = 0.15;
  double max_object_frac = 0.5;
  /// Objects are re-drawn while they overlap an earlier one above this IoU.
  double max_object_overlap = 0.1;
  std::string split;
  std::string id_prefix = "img";
  std::uint64_t seed = 0;
};

inline DatasetManifest synthesize_dataset(const SynthConfig& c) {
  if (c.categories.empty()) throw ConfigError("synth: no categories");
  if (c.min_objects > c.max_objects) {
    throw ConfigError("synth: min_objects exceeds max_objects");
  }
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> count(c.min_objects, c.max_objects);
  std::uniform_int_distribution<std::size_t> cat(0, c.categories.size() - 1);

  DatasetManifest m;
  for (std::size_t i = 0; i < c.images; ++i) {
    ImageRecord im;
    char id[32];
    std::snprintf(id, sizeof id, "%05zu", i);
    im.id = c.id_prefix + id;
    im.split = c.split;
    im.width = std::round(c.min_image_side + (c.max_image_side - c.min_image_side) * unit(rng));
    im.height = std::round(c.min_image_side + (c.max_image_side - c.min_image_side) * unit(rng));
    const std::size_t n = count(rng);
    for (std::size_t k = 0; k < n; ++k) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double fw = c.min_object_frac + (c.max_object_frac - c.min_object_frac) * unit(rng);
        const double fh = c.min_object_frac + (c.max_object_frac - c.min_object_frac) * unit(rng);
        const double w = std::round(fw * im.width), h = std::round(fh * im.height);
        const double u1 = std::round((im.width - w) * unit(rng));
        const double v1 = std::round((im.height - h) * unit(rng));
        const BoundingBox b(u1, v1, u1 + w, v1 + h);
        const bool clash = std::any_of(im.objects.begin(), im.objects.end(), [&](const auto& o) {
          return iou(o.box, b) > c.max_object_overlap;
        });
        if (clash) continue;
        im.objects.push_back({c.categories[cat(rng)], b, false});
        break;
      }
    }
    m.images.push_back(std::move(im));
  }
  return m;
}

/// A feature world whose hidden objects are the manifest's annotations.
inline SyntheticWorld world_for(const DatasetManifest& m,
                                const std::vector<std::string>& categories,
                                std::size_t dim, double noise,
                                std::uint64_t seed) {
  auto w = SyntheticWorld::with_prototypes(categories, dim, noise, seed);
  w.images = m.objects_by_image();
  return w;
}

}  // namespace boxopt::harness
