#pragma once

/// @file io.hpp
/// Detection/result CSVs, model and GP-parameter JSON. CSVs may start with
/// "# " comment lines (artifact metadata), which readers skip.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "boxopt/errors.hpp"
#include "boxopt/eval.hpp"
#include "boxopt/gp.hpp"
#include "boxopt/proposals.hpp"
#include "boxopt/scoring.hpp"
#include "json.hpp"

namespace boxopt::harness {

/// What every emitted artifact carries.
struct ArtifactMeta {
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string comment() const {
    return "config_hash=" + config_hash + " seed=" + std::to_string(seed);
  }
};

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  return os;
}

/// Calls row(fields, "path:line") for each data line after the header.
template <typename F>
void read_csv(const std::string& path, const std::string& header, std::size_t fields,
              F&& row) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = path + ":" + std::to_string(lineno);
    if (!header_seen) {
      if (line != header) throw DataError(where + ": expected header '" + header + "'");
      header_seen = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != fields) {
      throw DataError(where + ": expected " + std::to_string(fields) + " fields");
    }
    row(f, where);
  }
}

inline double field_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  if (!parse_double(s, v)) throw DataError(where + ": cannot parse '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline constexpr const char* kDetectionsHeader = "image_id,category,u1,v1,u2,v2,score";
inline constexpr const char* kResultsHeader = "method,iou_threshold,category,ap";

inline void write_detections(const std::string& path, const std::vector<Detection>& dets,
                             const ArtifactMeta& meta) {
  auto os = detail::open_out(path);
  os << "# " << meta.comment() << '\n' << kDetectionsHeader << '\n';
  for (const auto& d : dets) {
    os << d.image_id << ',' << d.category << ',' << format_double(d.box.u1()) << ','
       << format_double(d.box.v1()) << ',' << format_double(d.box.u2()) << ','
       << format_double(d.box.v2()) << ',' << format_double(d.score) << '\n';
  }
}

inline std::vector<Detection> read_detections(const std::string& path) {
  std::vector<Detection> out;
  detail::read_csv(path, kDetectionsHeader, 7, [&](const auto& f, const std::string& where) {
    double c[4];
    for (int i = 0; i < 4; ++i) c[i] = detail::field_double(f[2 + i], where);
    if (!BoundingBox::is_valid(c[0], c[1], c[2], c[3])) {
      throw DataError(where + ": invalid box (need u1 < u2 and v1 < v2)");
    }
    const double score = detail::field_double(f[6], where);
    if (!std::isfinite(score)) throw DataError(where + ": non-finite score");
    out.push_back({std::string(f[0]), std::string(f[1]), {c[0], c[1], c[2], c[3]}, score});
  });
  return out;
}

struct ResultRow {
  std::string method;
  double iou_threshold = 0.0;
  std::string category;
  double ap = 0.0;

  bool operator==(const ResultRow&) const = default;
};

inline void write_results(const std::string& path, const std::vector<ResultRow>& rows,
                          const ArtifactMeta& meta) {
  auto os = detail::open_out(path);
  os << "# " << meta.comment() << '\n' << kResultsHeader << '\n';
  for (const auto& r : rows) {
    os << r.method << ',' << format_double(r.iou_threshold) << ',' << r.category << ','
       << format_double(r.ap) << '\n';
  }
}

inline std::vector<ResultRow> read_results(const std::string& path) {
  std::vector<ResultRow> out;
  detail::read_csv(path, kResultsHeader, 4, [&](const auto& f, const std::string& where) {
    out.push_back({std::string(f[0]), detail::field_double(f[1], where), std::string(f[2]),
                   detail::field_double(f[3], where)});
  });
  return out;
}

/// Generic CSV writer for the auxiliary tables (box counts, traces, PR
/// curves); cells are written verbatim.
inline void write_table(const std::string& path, const std::string& header,
                        const std::vector<std::vector<std::string>>& rows,
                        const ArtifactMeta& meta) {
  auto os = detail::open_out(path);
  os << "# " << meta.comment() << '\n' << header << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Model file: {category: {"w": [...], "config_hash": ..., "seed": ...}}

using ModelWeights = std::map<std::string, WeightVector>;

inline void write_model(const std::string& path, const ModelWeights& model,
                        const ArtifactMeta& meta) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [cat, w] : model) {
    nlohmann::ordered_json e;
    e["w"] = std::vector<double>(w.data(), w.data() + w.size());
    e["config_hash"] = meta.config_hash;
    e["seed"] = meta.seed;
    j[cat] = std::move(e);
  }
  detail::open_out(path) << j.dump(2) << '\n';
}

inline ModelWeights read_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  ModelWeights out;
  try {
    const auto j = nlohmann::json::parse(is);
    if (!j.is_object()) throw DataError(path + ": expected a JSON object");
    std::size_t dim = 0;
    for (const auto& [cat, e] : j.items()) {
      const auto w = e.at("w").get<std::vector<double>>();
      if (w.empty()) throw DataError(path + ": " + cat + ": empty weight vector");
      if (dim && w.size() != dim) throw DataError(path + ": " + cat + ": dimension mismatch");
      dim = w.size();
      out[cat] = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (out.empty()) throw DataError(path + ": no categories");
  return out;
}

// ---------------------------------------------------------------------------
// GP parameters: {"beta", "m0", "eta", "lambda": [4], "note", ...}

inline void write_gp_params(const std::string& path, const GpHyperParams& h,
                            const std::string& note, const ArtifactMeta& meta) {
  nlohmann::ordered_json j;
  j["beta"] = h.beta();
  j["m0"] = h.m0;
  j["eta"] = h.eta();
  j["lambda"] = {h.lambda(0), h.lambda(1), h.lambda(2), h.lambda(3)};
  j["note"] = note;
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  detail::open_out(path) << j.dump(2) << '\n';
}

inline GpHyperParams read_gp_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  try {
    const auto j = nlohmann::json::parse(is);
    const auto lam = j.at("lambda").get<std::vector<double>>();
    if (lam.size() != 4) throw DataError(path + ": lambda must have 4 entries");
    return GpHyperParams::from_natural(j.at("beta").get<double>(), j.at("m0").get<double>(),
                                       j.at("eta").get<double>(),
                                       {lam[0], lam[1], lam[2], lam[3]});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace boxopt::harness
