#pragma once

// On-disk data model: manifests, attribution arrays, group labels and the
// feature bundle consumed by test-time attenuation.
//
// Manifest JSON:
//   { "version": 1, "shape": [H, W(, D)],
//     "images": [ {"id", "ba", "ts", "sa", "y"?, "a"?, "raw"?}, ... ],
//     "features"?: {"path", "weights", "bias"} }
// Relative paths resolve against the manifest's directory.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "oscar/error.hpp"
#include "oscar/npy.hpp"
#include "oscar/parallel.hpp"
#include "oscar/tensor.hpp"

namespace oscar {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class ModelTag { BA = 0, TS = 1, SA = 2 };

inline constexpr std::array<ModelTag, 3> kAllModels{ModelTag::BA, ModelTag::TS, ModelTag::SA};

inline std::string to_string(ModelTag tag) {
  switch (tag) {
    case ModelTag::BA: return "BA";
    case ModelTag::TS: return "TS";
    case ModelTag::SA: return "SA";
  }
  return "?";
}

inline ModelTag parse_model_tag(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "BA") return ModelTag::BA;
  if (s == "TS") return ModelTag::TS;
  if (s == "SA") return ModelTag::SA;
  throw Error(ErrorCode::InvalidArgument, "interchange", "unknown model tag '" + s + "'");
}

inline std::size_t index_of(ModelTag tag) { return static_cast<std::size_t>(tag); }

struct AttributionMap {
  std::string image_id;
  ModelTag model_tag = ModelTag::BA;
  RealArray values;
};

struct GroupLabels {
  std::vector<std::string> image_ids;
  std::vector<int> y;
  std::vector<int> a;

  std::size_t size() const { return y.size(); }
};

struct ImageEntry {
  std::string id;
  std::array<std::string, 3> maps;  // indexed by ModelTag
  std::optional<int> y;
  std::optional<int> a;
  std::optional<std::string> raw;
};

struct FeatureRef {
  std::string path;
  std::string weights;
  std::string bias;
};

struct Manifest {
  int version = 1;
  Shape shape;
  std::vector<ImageEntry> images;
  std::optional<FeatureRef> features;
  fs::path base_dir;

  std::size_t size() const { return images.size(); }

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(images.size());
    for (const auto& im : images) out.push_back(im.id);
    return out;
  }

  bool has_labels() const {
    return !images.empty() &&
           std::all_of(images.begin(), images.end(), [](const ImageEntry& e) { return e.y && e.a; });
  }

  bool has_raw() const {
    return !images.empty() &&
           std::all_of(images.begin(), images.end(), [](const ImageEntry& e) { return e.raw.has_value(); });
  }

  GroupLabels labels() const {
    if (!has_labels())
      throw Error(ErrorCode::BadConfig, "interchange", "manifest does not carry (y, a) for every image");
    GroupLabels g;
    for (const auto& im : images) {
      g.image_ids.push_back(im.id);
      g.y.push_back(*im.y);
      g.a.push_back(*im.a);
    }
    return g;
  }
};

/// Penultimate features (B x C x H' x W') plus the final linear head.
struct FeatureBundle {
  RealArray features;
  RealArray weights;  // K x C
  std::vector<double> bias;
  std::vector<std::string> image_ids;

  std::size_t batch() const { return features.shape[0]; }
  std::size_t channels() const { return features.shape[1]; }
  std::size_t height() const { return features.shape[2]; }
  std::size_t width() const { return features.shape[3]; }
  std::size_t classes() const { return weights.shape[0]; }
};

namespace detail {

inline const char* model_key(ModelTag tag) {
  switch (tag) {
    case ModelTag::BA: return "ba";
    case ModelTag::TS: return "ts";
    case ModelTag::SA: return "sa";
  }
  return "";
}

inline int parse_binary_label(const json& v, const std::string& what) {
  if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
    throw Error(ErrorCode::FormatError, "interchange", what + " must be 0 or 1");
  return v.get<int>();
}

}  // namespace detail

inline Manifest parse_manifest(const json& j, const fs::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  if (!j.is_object()) throw Error(ErrorCode::FormatError, "interchange", "manifest must be a JSON object");
  m.version = j.value("version", 1);
  if (!j.contains("shape") || !j["shape"].is_array() || j["shape"].empty())
    throw Error(ErrorCode::FormatError, "interchange", "manifest lacks a spatial shape");
  for (const auto& d : j["shape"]) m.shape.push_back(d.get<std::size_t>());
  if (!j.contains("images") || !j["images"].is_array() || j["images"].empty())
    throw Error(ErrorCode::EmptyInput, "interchange", "manifest lists no images");

  std::array<std::size_t, 3> present{0, 0, 0};
  for (const auto& row : j["images"]) {
    ImageEntry e;
    e.id = row.at("id").get<std::string>();
    for (ModelTag tag : kAllModels) {
      if (row.contains(detail::model_key(tag))) {
        e.maps[index_of(tag)] = row[detail::model_key(tag)].get<std::string>();
        ++present[index_of(tag)];
      }
    }
    if (row.contains("y")) e.y = detail::parse_binary_label(row["y"], "label y of " + e.id);
    if (row.contains("a")) e.a = detail::parse_binary_label(row["a"], "attribute a of " + e.id);
    if (row.contains("raw")) e.raw = row["raw"].get<std::string>();
    m.images.push_back(std::move(e));
  }
  for (ModelTag tag : kAllModels) {
    if (present[index_of(tag)] == 0)
      throw Error(ErrorCode::MissingModel, "interchange", "no attribution maps for model " + to_string(tag));
  }
  for (ModelTag tag : kAllModels) {
    for (const auto& e : m.images) {
      if (e.maps[index_of(tag)].empty())
        throw Error(ErrorCode::IdMismatch, "interchange",
                    "model " + to_string(tag) + " does not cover image '" + e.id + "'");
    }
  }
  {
    std::vector<std::string> ids = m.ids();
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw Error(ErrorCode::IdMismatch, "interchange", "duplicate image id in manifest");
  }
  if (j.contains("features") && !j["features"].is_null()) {
    const auto& f = j["features"];
    m.features = FeatureRef{f.at("path").get<std::string>(), f.at("weights").get<std::string>(),
                            f.at("bias").get<std::string>()};
  }
  return m;
}

inline json manifest_to_json(const Manifest& m) {
  json j;
  j["version"] = m.version;
  j["shape"] = m.shape;
  j["images"] = json::array();
  for (const auto& e : m.images) {
    json row;
    row["id"] = e.id;
    for (ModelTag tag : kAllModels) row[detail::model_key(tag)] = e.maps[index_of(tag)];
    if (e.y) row["y"] = *e.y;
    if (e.a) row["a"] = *e.a;
    if (e.raw) row["raw"] = *e.raw;
    j["images"].push_back(row);
  }
  if (m.features) j["features"] = {{"path", m.features->path}, {"weights", m.features->weights}, {"bias", m.features->bias}};
  return j;
}

inline void save_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "interchange", "cannot write " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "interchange", "write failed for " + path.string());
}

/// Parses and validates a manifest: model coverage, id alignment, and the
/// shape of every referenced attribution array.
inline Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "interchange", "cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, "interchange", path.string() + ": " + e.what());
  }
  Manifest m = parse_manifest(j, path.parent_path());
  for (const auto& e : m.images) {
    for (ModelTag tag : kAllModels) {
      const fs::path p = m.resolve(e.maps[index_of(tag)]);
      if (!fs::exists(p)) throw Error(ErrorCode::IoError, "interchange", "missing array file " + p.string());
      const auto header = npy::read_header(p);
      if (header.shape != m.shape)
        throw Error(ErrorCode::ShapeMismatch, "interchange",
                    p.string() + " has shape " + shape_string(header.shape) + ", manifest declares " +
                        shape_string(m.shape));
    }
  }
  return m;
}

enum class PreprocessMode { ReluL1, L1Only, None };

inline PreprocessMode parse_preprocess_mode(const std::string& s) {
  if (s == "relu_l1") return PreprocessMode::ReluL1;
  if (s == "l1_only") return PreprocessMode::L1Only;
  if (s == "none") return PreprocessMode::None;
  throw Error(ErrorCode::InvalidArgument, "interchange", "unknown preprocessing mode '" + s + "'");
}

inline std::string to_string(PreprocessMode mode) {
  switch (mode) {
    case PreprocessMode::ReluL1: return "relu_l1";
    case PreprocessMode::L1Only: return "l1_only";
    case PreprocessMode::None: return "none";
  }
  return "?";
}

/// ReLU then l1 normalisation (relu_l1), l1 normalisation only (l1_only), or
/// passthrough. A map with no mass after clamping is rejected.
inline std::vector<double> preprocess_map(std::span<const double> raw, PreprocessMode mode) {
  std::vector<double> out(raw.begin(), raw.end());
  for (double v : out) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "interchange", "attribution map has non-finite values");
  }
  if (mode == PreprocessMode::None) return out;
  if (mode == PreprocessMode::ReluL1) {
    for (double& v : out) v = v > 0.0 ? v : 0.0;
  }
  double mass = 0.0;
  for (double v : out) mass += std::abs(v);
  if (!(mass > 0.0)) throw Error(ErrorCode::DegenerateMap, "interchange", "attribution map has zero mass");
  for (double& v : out) v /= mass;
  return out;
}

inline RealArray preprocess_map(const RealArray& raw, PreprocessMode mode) {
  return RealArray(raw.shape, preprocess_map(std::span<const double>(raw.data), mode));
}

/// Loads and preprocesses every map of one model, in manifest order.
inline std::vector<RealArray> load_model_maps(const Manifest& m, ModelTag tag, PreprocessMode mode,
                                              std::size_t workers = 1) {
  std::vector<RealArray> maps(m.size());
  parallel_for(m.size(), workers, [&](std::size_t i) {
    const fs::path p = m.resolve(m.images[i].maps[index_of(tag)]);
    RealArray raw = npy::load<double>(p);
    if (raw.shape != m.shape)
      throw Error(ErrorCode::ShapeMismatch, "interchange", p.string() + " does not match manifest shape");
    try {
      maps[i] = preprocess_map(raw, mode);
    } catch (const Error& e) {
      throw Error(e.code(), "interchange", p.string() + ": " + e.what());
    }
  });
  return maps;
}

inline FeatureBundle load_feature_bundle(const Manifest& m) {
  if (!m.features) throw Error(ErrorCode::BadConfig, "interchange", "manifest has no feature bundle");
  FeatureBundle fb;
  fb.features = npy::load<double>(m.resolve(m.features->path));
  fb.weights = npy::load<double>(m.resolve(m.features->weights));
  fb.bias = npy::load<double>(m.resolve(m.features->bias)).data;
  fb.image_ids = m.ids();
  if (fb.features.ndim() != 4)
    throw Error(ErrorCode::ShapeMismatch, "interchange", "features must be B x C x H x W");
  if (fb.weights.ndim() != 2 || fb.weights.shape[1] != fb.channels())
    throw Error(ErrorCode::ShapeMismatch, "interchange", "classifier weights must be K x C");
  if (fb.weights.shape[0] < 2) throw Error(ErrorCode::ShapeMismatch, "interchange", "classifier needs K >= 2");
  if (fb.bias.size() != fb.classes())
    throw Error(ErrorCode::ShapeMismatch, "interchange", "classifier bias must have K entries");
  if (fb.batch() != m.size())
    throw Error(ErrorCode::IdMismatch, "interchange", "feature batch size does not match manifest image count");
  return fb;
}

}  // namespace oscar
