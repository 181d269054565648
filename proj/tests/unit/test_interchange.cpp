#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "oscar/interchange.hpp"
#include "oscar/npy.hpp"
#include "oscar/report.hpp"
#include "support.hpp"

using namespace oscar;
using Catch::Matchers::WithinAbs;
using test::code_of;

namespace {

// Writes a manifest with one map per (image, model), all of `shape`.
json write_bundle(const test::TempDir& dir, std::size_t images, const Shape& shape) {
  json j = {{"version", 1}, {"shape", shape}, {"images", json::array()}};
  Rng rng = make_rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < images; ++i) {
    json row = {{"id", "im" + std::to_string(i)}, {"y", int(i % 2)}, {"a", int((i / 2) % 2)}};
    for (const char* key : {"ba", "ts", "sa"}) {
      RealArray a(shape);
      for (auto& v : a.data) v = u(rng);
      const std::string rel = std::string(key) + std::to_string(i) + ".npy";
      npy::save(dir / rel, a);
      row[key] = rel;
    }
    j["images"].push_back(row);
  }
  std::ofstream(dir / "manifest.json") << j.dump();
  return j;
}

}  // namespace

TEST_CASE("npy round trip is bit exact for every stored dtype", "[npy]") {
  test::TempDir dir("npy");
  RealArray d(Shape{3, 4});
  for (std::size_t i = 0; i < d.size(); ++i) d.data[i] = std::sin(1.0 + i) * 1e-3 + 1.0 / 3.0;
  npy::save(dir / "d.npy", d);
  CHECK(npy::load<double>(dir / "d.npy") == d);

  LabelArray l(Shape{2, 2, 2});
  for (std::size_t i = 0; i < l.size(); ++i) l.data[i] = static_cast<std::int32_t>(i) - 3;
  npy::save(dir / "l.npy", l);
  CHECK(npy::load<std::int32_t>(dir / "l.npy") == l);

  Tensor<float> f(Shape{5}, std::vector<float>{0.1f, -2.5f, 3e7f, 0.f, 1.f});
  npy::save(dir / "f.npy", f);
  const auto back = npy::load<double>(dir / "f.npy");
  for (std::size_t i = 0; i < 5; ++i) CHECK(back.data[i] == static_cast<double>(f.data[i]));
}

TEST_CASE("npy header is padded to a 64-byte boundary and declares C order", "[npy]") {
  test::TempDir dir("npyhdr");
  npy::save(dir / "x.npy", RealArray(Shape{7, 3}, 1.0));
  std::ifstream in(dir / "x.npy", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.substr(0, 6) == "\x93NUMPY");
  const auto header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
  CHECK((10 + header_len) % 64 == 0);
  const std::string dict = bytes.substr(10, header_len);
  CHECK(dict.find("'descr': '<f8'") != std::string::npos);
  CHECK(dict.find("'fortran_order': False") != std::string::npos);
  CHECK(dict.find("'shape': (7, 3)") != std::string::npos);
  CHECK(dict.back() == '\n');
  CHECK(bytes.size() == std::size_t(10 + header_len + 21 * 8));
}

TEST_CASE("npy rejects garbage and truncated payloads", "[npy]") {
  test::TempDir dir("npybad");
  std::ofstream(dir / "junk.npy") << "not an array";
  CHECK(code_of([&] { npy::read_raw(dir / "junk.npy"); }) == ErrorCode::FormatError);
  npy::save(dir / "x.npy", RealArray(Shape{10}, 2.0));
  std::filesystem::resize_file(dir / "x.npy", std::filesystem::file_size(dir / "x.npy") - 8);
  CHECK(code_of([&] { npy::read_raw(dir / "x.npy"); }) == ErrorCode::FormatError);
  CHECK(code_of([&] { npy::read_raw(dir / "missing.npy"); }) == ErrorCode::IoError);
}

TEST_CASE("minimal manifest: 2 images x 3 models", "[manifest]") {
  test::TempDir dir("man");
  write_bundle(dir, 2, Shape{4, 4});
  const Manifest m = load_manifest(dir / "manifest.json");
  CHECK(m.size() == 2);
  CHECK(m.shape == Shape{4, 4});
  CHECK(m.ids() == std::vector<std::string>{"im0", "im1"});
  CHECK(m.has_labels());
  CHECK_FALSE(m.has_raw());
  const auto maps = load_model_maps(m, ModelTag::TS, PreprocessMode::ReluL1);
  REQUIRE(maps.size() == 2);
  for (const auto& map : maps) {
    double s = 0.0;
    for (double v : map.data) s += v;
    CHECK_THAT(s, WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("manifest missing one TS entry is an id mismatch", "[manifest]") {
  test::TempDir dir("man_ts");
  json j = write_bundle(dir, 3, Shape{2, 2});
  j["images"][1].erase("ts");
  CHECK(code_of([&] { parse_manifest(j, dir.path()); }) == ErrorCode::IdMismatch);
}

TEST_CASE("manifest without any SA maps is a missing model", "[manifest]") {
  test::TempDir dir("man_sa");
  json j = write_bundle(dir, 2, Shape{2, 2});
  for (auto& row : j["images"]) row.erase("sa");
  CHECK(code_of([&] { parse_manifest(j, dir.path()); }) == ErrorCode::MissingModel);
}

TEST_CASE("duplicate image ids are rejected", "[manifest]") {
  test::TempDir dir("man_dup");
  json j = write_bundle(dir, 2, Shape{2, 2});
  j["images"][1]["id"] = "im0";
  CHECK(code_of([&] { parse_manifest(j, dir.path()); }) == ErrorCode::IdMismatch);
}

TEST_CASE("a 112x112 map in a 224x224 manifest is a shape mismatch", "[manifest]") {
  test::TempDir dir("man_shape");
  json j = write_bundle(dir, 2, Shape{224, 224});
  npy::save(dir / "small.npy", RealArray(Shape{112, 112}, 1.0));
  j["images"][0]["sa"] = "small.npy";
  std::ofstream(dir / "manifest.json") << j.dump();
  CHECK(code_of([&] { load_manifest(dir / "manifest.json"); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("missing referenced arrays and malformed JSON are reported", "[manifest]") {
  test::TempDir dir("man_io");
  json j = write_bundle(dir, 2, Shape{2, 2});
  j["images"][0]["ba"] = "nowhere.npy";
  std::ofstream(dir / "manifest.json") << j.dump();
  CHECK(code_of([&] { load_manifest(dir / "manifest.json"); }) == ErrorCode::IoError);
  std::ofstream(dir / "bad.json") << "{ \"shape\": [";
  CHECK(code_of([&] { load_manifest(dir / "bad.json"); }) == ErrorCode::FormatError);
  CHECK(code_of([&] { load_manifest(dir / "absent.json"); }) == ErrorCode::IoError);
  json bad_label = write_bundle(dir, 2, Shape{2, 2});
  bad_label["images"][0]["y"] = 2;
  CHECK(code_of([&] { parse_manifest(bad_label, dir.path()); }) == ErrorCode::FormatError);
}

TEST_CASE("manifest save and load round trip", "[manifest]") {
  test::TempDir dir("man_rt");
  write_bundle(dir, 3, Shape{3, 5});
  const Manifest m = load_manifest(dir / "manifest.json");
  save_manifest(m, dir / "copy.json");
  const Manifest back = load_manifest(dir / "copy.json");
  CHECK(manifest_to_json(back) == manifest_to_json(m));
  for (ModelTag tag : kAllModels) {
    const auto a = load_model_maps(m, tag, PreprocessMode::None);
    const auto b = load_model_maps(back, tag, PreprocessMode::None);
    CHECK(a == b);
  }
}

TEST_CASE("preprocess_map worked examples", "[preprocess]") {
  const std::vector<double> x{-1.0, 1.0, 3.0};
  const auto r = preprocess_map(x, PreprocessMode::ReluL1);
  CHECK(r == std::vector<double>{0.0, 0.25, 0.75});
  CHECK(preprocess_map(std::vector<double>{2.0, 2.0}, PreprocessMode::L1Only) == std::vector<double>{0.5, 0.5});
  CHECK(code_of([] { preprocess_map(std::vector<double>{0.0, 0.0, 0.0}, PreprocessMode::ReluL1); }) ==
        ErrorCode::DegenerateMap);
  CHECK(code_of([] { preprocess_map(std::vector<double>{-1.0, -2.0}, PreprocessMode::ReluL1); }) ==
        ErrorCode::DegenerateMap);
  CHECK(code_of([] { preprocess_map(std::vector<double>{1.0, NAN}, PreprocessMode::ReluL1); }) ==
        ErrorCode::InvalidArgument);
  CHECK(preprocess_map(std::vector<double>{-3.0, 5.0}, PreprocessMode::None) == std::vector<double>{-3.0, 5.0});
}

TEST_CASE("relu_l1 output is a probability vector and idempotent", "[preprocess][property]") {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = test::normal_vector(1 + trial % 50, rng);
    x[0] = std::abs(x[0]) + 0.1;
    const auto p = preprocess_map(x, PreprocessMode::ReluL1);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK_THAT(s, WithinAbs(1.0, 1e-9));
    const auto q = preprocess_map(p, PreprocessMode::ReluL1);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK_THAT(q[i], WithinAbs(p[i], 1e-15));
  }
}

TEST_CASE("feature bundle validation", "[features]") {
  test::TempDir dir("feat");
  json j = write_bundle(dir, 4, Shape{2, 2});
  npy::save(dir / "f.npy", RealArray(Shape{4, 3, 2, 2}, 0.5));
  npy::save(dir / "w.npy", RealArray(Shape{2, 3}, 1.0));
  npy::save(dir / "b.npy", std::vector<double>{0.0, 0.0});
  j["features"] = {{"path", "f.npy"}, {"weights", "w.npy"}, {"bias", "b.npy"}};
  const FeatureBundle fb = load_feature_bundle(parse_manifest(j, dir.path()));
  CHECK(fb.batch() == 4);
  CHECK(fb.channels() == 3);
  CHECK(fb.classes() == 2);
  CHECK(fb.image_ids.size() == 4);

  npy::save(dir / "w1.npy", RealArray(Shape{1, 3}, 1.0));
  j["features"]["weights"] = "w1.npy";
  CHECK(code_of([&] { load_feature_bundle(parse_manifest(j, dir.path())); }) == ErrorCode::ShapeMismatch);
  j["features"]["weights"] = "w.npy";
  npy::save(dir / "f3.npy", RealArray(Shape{3, 3, 2, 2}, 0.5));
  j["features"]["path"] = "f3.npy";
  CHECK(code_of([&] { load_feature_bundle(parse_manifest(j, dir.path())); }) == ErrorCode::IdMismatch);
}

TEST_CASE("report writer: schema, CSV rows, heatmap size, determinism", "[report]") {
  test::TempDir dir("report");
  InferenceResult r;
  r.rho_obs = 0.5;
  r.p_value = 0.01;
  r.ci_low = 0.2;
  r.ci_high = 0.7;
  r.n_regions = 16;
  r.seed = 9;
  ReportBundle b;
  b.summary["result"] = inference_to_json(r);
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i) - 7.5;
  b.tables.push_back({"rcs", v});
  b.heatmaps.push_back({"rcs", RealArray(Shape{4, 4}, v), Colormap::Diverging});
  write_report(b, dir / "out");

  std::ifstream js(dir / "out" / "report.json");
  const json j = json::parse(js);
  for (const char* key : {"rho", "p", "ci_lo", "ci_hi", "n_regions", "seed"}) CHECK(j["result"].contains(key));

  std::ifstream csv(dir / "out" / "rcs.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "region,value");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 16);

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_file(&img, (dir / "out" / "rcs.png").string().c_str()));
  CHECK(img.width == 4);
  CHECK(img.height == 4);
  png_image_free(&img);

  write_report(b, dir / "again");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  CHECK(slurp(dir / "out" / "report.json") == slurp(dir / "again" / "report.json"));
  CHECK(slurp(dir / "out" / "rcs.csv") == slurp(dir / "again" / "rcs.csv"));
}

TEST_CASE("report into an unwritable location is an IoError", "[report]") {
  test::TempDir dir("report_bad");
  std::ofstream(dir / "file") << "x";
  ReportBundle b;
  CHECK(code_of([&] { write_report(b, dir / "file" / "sub"); }) == ErrorCode::IoError);
}

TEST_CASE("diverging colormap maps zero to white", "[report]") {
  test::TempDir dir("cmap");
  write_heatmap_png(dir / "z.png", RealArray(Shape{1, 3}, std::vector<double>{-1.0, 0.0, 1.0}), Colormap::Diverging);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_file(&img, (dir / "z.png").string().c_str()));
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(img));
  REQUIRE(png_image_finish_read(&img, nullptr, px.data(), 0, nullptr));
  CHECK(std::vector<int>(px.begin(), px.end()) == std::vector<int>{0, 0, 255, 255, 255, 255, 255, 0, 0});
}
