#include <gtest/gtest.h>

#include <map>
#include <set>

#include "infip/fingerprint.hpp"
#include "test_util.hpp"

using namespace infip;
using infip::testing::random_image;
using infip::testing::TempDir;
using infip::testing::tiny_model;

namespace {

LabeledDataset labelled(std::size_t classes, std::size_t per_class, std::uint64_t seed = 1, Shape shape = {1, 8, 8}) {
  Rng rng(seed);
  LabeledDataset d{"unit", shape, classes, {}, {}, {}};
  for (std::size_t i = 0; i < classes * per_class; ++i) {
    d.images.push_back(random_image(shape, rng));
    d.labels.push_back(i % classes);
    d.ids.push_back("x" + std::to_string(i));
  }
  return d;
}

RelevanceMap map_of(std::vector<double> v, std::size_t h, std::size_t w) {
  RelevanceMap m;
  m.values = Tensor({h, w}, std::move(v));
  m.root_relevance = 1.0;
  return m;
}

}  // namespace

TEST(KeySelection, WholeDatasetSelectsEveryInstanceOnce) {
  const LabeledDataset d = labelled(5, 7);
  const KeyInstanceSet k = select_key_instances(d, d.size(), 3);
  EXPECT_EQ(k.size(), d.size());
  const std::set<std::string> ids(k.source_ids.begin(), k.source_ids.end());
  EXPECT_EQ(ids.size(), d.size());
  EXPECT_TRUE(k.stratified);
}

TEST(KeySelection, FourPerClassOverHundredClasses) {
  const LabeledDataset d = labelled(100, 6, 2, {1, 2, 2});
  const KeyInstanceSet k = select_key_instances(d, 400, 9);
  std::map<std::size_t, int> per_class;
  for (std::size_t y : k.labels) ++per_class[y];
  EXPECT_EQ(per_class.size(), 100u);
  for (const auto& [y, count] : per_class) EXPECT_EQ(count, 4) << "class " << y;
}

TEST(KeySelection, UnevenCountsDifferByAtMostOne) {
  const LabeledDataset d = labelled(7, 10);
  const KeyInstanceSet k = select_key_instances(d, 30, 4);
  std::map<std::size_t, int> per_class;
  for (std::size_t y : k.labels) ++per_class[y];
  int lo = 100, hi = 0;
  for (const auto& [y, c] : per_class) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  EXPECT_LE(hi - lo, 1);
}

TEST(KeySelection, SeededAndNested) {
  const LabeledDataset d = labelled(4, 10);
  const KeyInstanceSet a = select_key_instances(d, 20, 5), b = select_key_instances(d, 20, 5);
  EXPECT_EQ(a.set_hash, b.set_hash);
  EXPECT_EQ(a.source_ids, b.source_ids);
  EXPECT_NE(select_key_instances(d, 20, 6).set_hash, a.set_hash);
  const KeyInstanceSet small = select_key_instances(d, 8, 5);
  EXPECT_TRUE(std::equal(small.source_ids.begin(), small.source_ids.end(), a.source_ids.begin()));
}

TEST(KeySelection, HashCoversPixelsAndIds) {
  const LabeledDataset d = labelled(2, 3);
  KeyInstanceSet k = select_key_instances(d, 4, 1);
  auto instances = k.instances;
  instances[0][0] = instances[0][0] > 0.5 ? 0.0 : 1.0;
  EXPECT_NE(key_set_hash(instances, k.source_ids), k.set_hash);
  auto ids = k.source_ids;
  ids[1] += "'";
  EXPECT_NE(key_set_hash(k.instances, ids), k.set_hash);
}

TEST(KeySelection, EmptyClassFallsBackToUniform) {
  LabeledDataset d = labelled(3, 4);
  d.num_classes = 4;
  const KeyInstanceSet k = select_key_instances(d, 6, 2);
  EXPECT_FALSE(k.stratified);
  EXPECT_EQ(k.size(), 6u);
}

TEST(KeySelection, Errors) {
  const LabeledDataset d = labelled(2, 3);
  EXPECT_THROW(select_key_instances(d, 7, 1), InvalidArgument);
  EXPECT_THROW(select_key_instances(d, 0, 1), InvalidArgument);
}

TEST(KeySelection, FileRoundTrip) {
  TempDir dir;
  const KeyInstanceSet k = select_key_instances(labelled(3, 5), 9, 8);
  save_key_set(k, dir / "keys.json");
  const KeyInstanceSet back = load_key_set(dir / "keys.json");
  EXPECT_EQ(back.set_hash, k.set_hash);
  EXPECT_EQ(back.instances, k.instances);
  EXPECT_EQ(back.labels, k.labels);
  EXPECT_EQ(back.seed, 8u);
  EXPECT_EQ(back.dataset_id, k.dataset_id);

  auto j = nlohmann::json::parse(read_file_bytes(dir / "keys.json"));
  j["instances"][0]["pixels"][0] = (j["instances"][0]["pixels"][0].get<int>() + 1) % 256;
  write_file_bytes(dir / "bad.json", j.dump());
  EXPECT_THROW(load_key_set(dir / "bad.json"), CorruptionError);

  KeyInstanceSet odd = k;
  odd.instances[0][0] = 0.123;
  EXPECT_THROW(save_key_set(odd, dir / "odd.json"), FormatError);
}

TEST(Render, ZeroMapIsBlackForAnyLambda) {
  for (double lambda : {1.0, 5000.0, 1e9}) {
    const Fingerprint fp = render_fingerprint(map_of({0, 0, 0, 0}, 2, 2), lambda);
    EXPECT_EQ(fp.image.pixels, std::vector<std::uint8_t>(4, 0));
  }
}

TEST(Render, ArithmeticExamples) {
  const Fingerprint fp = render_fingerprint(map_of({0.001, 0.1}, 1, 2), 5000);
  EXPECT_EQ(fp.image.pixels[0], 5);
  EXPECT_EQ(fp.image.pixels[1], 255);
  EXPECT_EQ(fp.image.height, 1u);
  EXPECT_EQ(fp.image.width, 2u);
}

TEST(Render, RoundsHalfAwayFromZero) {
  const Fingerprint fp = render_fingerprint(map_of({0.5, 1.49, 2.5}, 1, 3), 1.0);
  EXPECT_EQ(fp.image.pixels, (std::vector<std::uint8_t>{1, 1, 3}));
}

TEST(Render, CopiesFlagsAndRejectsBadLambda) {
  RelevanceMap m = map_of({0, 0}, 1, 2);
  m.degenerate = true;
  m.root_class = 4;
  const Fingerprint fp = render_fingerprint(m, 10);
  EXPECT_TRUE(fp.degenerate);
  EXPECT_EQ(fp.predicted_class, 4u);
  EXPECT_THROW(render_fingerprint(m, 0), InvalidArgument);
  EXPECT_THROW(render_fingerprint(m, -5), InvalidArgument);
  EXPECT_THROW(render_fingerprint(m, std::numeric_limits<double>::infinity()), InvalidArgument);
}

TEST(Render, MonotoneInLambdaAndOrderPreserving) {
  Rng rng(3);
  std::vector<double> v(64);
  for (double& x : v) x = rng.uniform() * 0.01;
  const RelevanceMap m = map_of(v, 8, 8);
  Fingerprint prev = render_fingerprint(m, 100);
  for (double lambda : {500.0, 1000.0, 5000.0, 10000.0, 50000.0}) {
    const Fingerprint cur = render_fingerprint(m, lambda);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_GE(cur.image.pixels[i], prev.image.pixels[i]);
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 64; ++j)
        if (v[i] < v[j] && lambda * v[j] < 255) EXPECT_LE(cur.image.pixels[i], cur.image.pixels[j]);
    prev = cur;
  }
}

TEST(FingerprintSet, ExtractionIsDeterministicAndModelSpecific) {
  const KeyInstanceSet keys = select_key_instances(labelled(3, 4), 12, 1);
  const Model m = tiny_model(1);
  const FingerprintSet a = extract_fingerprint_set(m, keys, 5000, 1), b = extract_fingerprint_set(m, keys, 5000, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.model_hash, m.hash());
  EXPECT_EQ(a.key_set_hash, keys.set_hash);
  EXPECT_EQ(a.lambda, 5000);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    EXPECT_EQ(a.fingerprints[i].instance_id, keys.source_ids[i]);
    EXPECT_EQ(a.fingerprints[i].predicted_class, predict(m, keys.instances[i]));
    EXPECT_EQ(a.fingerprints[i].image.height, 8u);
  }
  EXPECT_NE(extract_fingerprint_set(tiny_model(2), keys, 5000), a);
}

TEST(FingerprintSet, RejectsIncompatibleKeys) {
  const KeyInstanceSet keys = select_key_instances(labelled(2, 2, 1, {1, 4, 4}), 2, 1);
  EXPECT_THROW(extract_fingerprint_set(tiny_model(1), keys, 5000), ShapeError);
}

TEST(FingerprintSet, DirectoryRoundTrip) {
  TempDir dir;
  const KeyInstanceSet keys = select_key_instances(labelled(3, 4), 6, 1);
  const FingerprintSet s = extract_fingerprint_set(tiny_model(3), keys, 2000);
  save_fingerprint_set(s, dir / "fp");
  EXPECT_TRUE(std::filesystem::exists(dir / "fp" / "fp_0000.pgm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "fp" / "fp_0005.pgm"));
  const FingerprintSet back = load_fingerprint_set(dir / "fp");
  EXPECT_EQ(back, s);
  save_fingerprint_set(back, dir / "fp2");
  EXPECT_EQ(directory_digest(dir / "fp"), directory_digest(dir / "fp2"));

  const std::string pgm = read_file_bytes(dir / "fp" / "fp_0001.pgm");
  EXPECT_EQ(pgm.substr(0, 2), "P5");
  const auto manifest = nlohmann::json::parse(read_file_bytes(dir / "fp" / "manifest.json"));
  EXPECT_EQ(manifest["schema_version"], 1);
  EXPECT_EQ(manifest["entries"].size(), 6u);
  EXPECT_EQ(manifest["entries"][1]["image_digest"], sha256_hex(pgm));
}

TEST(FingerprintSet, MissingImageNamesFile) {
  TempDir dir;
  const FingerprintSet s = extract_fingerprint_set(tiny_model(3), select_key_instances(labelled(2, 2), 4, 1), 5000);
  save_fingerprint_set(s, dir.path());
  std::filesystem::remove(dir / "fp_0002.pgm");
  try {
    load_fingerprint_set(dir.path());
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("fp_0002.pgm"), std::string::npos) << e.what();
  }
}

TEST(FingerprintSet, TamperedPixelIsDetected) {
  TempDir dir;
  const FingerprintSet s = extract_fingerprint_set(tiny_model(3), select_key_instances(labelled(2, 2), 4, 1), 5000);
  save_fingerprint_set(s, dir.path());
  std::string bytes = read_file_bytes(dir / "fp_0003.pgm");
  bytes.back() = static_cast<char>(bytes.back() ^ 1);
  write_file_bytes(dir / "fp_0003.pgm", bytes);
  EXPECT_THROW(load_fingerprint_set(dir.path()), CorruptionError);
}

TEST(FingerprintSet, VisibilitySummary) {
  FingerprintSet s;
  for (int peak : {10, 200, 255}) {
    Fingerprint fp;
    fp.image = GrayImage{1, 2, {0, static_cast<std::uint8_t>(peak)}};
    s.fingerprints.push_back(fp);
  }
  EXPECT_EQ(median_peak_intensity(s), 200);
  EXPECT_FALSE(low_visibility(s));
  s.fingerprints[2].image.pixels[1] = 20;
  EXPECT_EQ(median_peak_intensity(s), 20);
  EXPECT_TRUE(low_visibility(s));
}

TEST(Montage, TilesWithGutter) {
  const GrayImage a{2, 2, {1, 2, 3, 4}}, b{2, 2, {5, 6, 7, 8}};
  const GrayImage m = make_montage({{&a, &b}, {&b}});
  EXPECT_EQ(m.height, 5u);
  EXPECT_EQ(m.width, 5u);
  EXPECT_EQ(m.at(0, 0), 1);
  EXPECT_EQ(m.at(0, 2), 128);
  EXPECT_EQ(m.at(1, 4), 8);
  EXPECT_EQ(m.at(3, 0), 5);
  const RgbImage c = colorize(m);
  EXPECT_EQ(c.pixels.size(), 3 * m.pixels.size());
}
