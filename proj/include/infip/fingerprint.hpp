#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "infip/dataset.hpp"
#include "infip/digest.hpp"
#include "infip/error.hpp"
#include "infip/model.hpp"
#include "infip/parallel.hpp"
#include "infip/pgm.hpp"
#include "infip/relevance.hpp"
#include "infip/rng.hpp"

namespace infip {

inline constexpr double kDefaultLambda = 5000.0;
inline constexpr std::size_t kDefaultKeyCount = 400;
inline constexpr int kFingerprintSchemaVersion = 1;
inline constexpr int kKeySetSchemaVersion = 1;

struct KeyInstanceSet {
  std::vector<Tensor> instances;
  std::vector<std::string> source_ids;
  std::vector<std::size_t> labels;
  std::uint64_t seed = 0;
  std::string dataset_id;
  bool stratified = true;  // false when selection fell back to global uniform sampling
  std::string set_hash;

  std::size_t size() const noexcept { return instances.size(); }
};

// Digest over every pixel and identifier, in order.
inline std::string key_set_hash(const std::vector<Tensor>& instances, const std::vector<std::string>& ids) {
  Sha256 h;
  h.update(std::string_view("infip-keys"));
  h.update_u64(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    h.update(ids.at(i));
    h.update_u64(instances[i].rank());
    for (auto d : instances[i].shape()) h.update_u64(d);
    for (double v : instances[i].values()) h.update_f64(v);
  }
  return h.finish_hex();
}

/// Seeded stratified sampling. Each class is shuffled, then classes are
/// visited round-robin in label order, so per-class counts differ by at
/// most one and a smaller selection is always a prefix of a larger one
/// under the same seed.
inline KeyInstanceSet select_key_instances(const LabeledDataset& data, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("key selection: n must be positive");
  if (n > data.size())
    throw InvalidArgument("key selection: requested " + std::to_string(n) + " instances but dataset " + data.id +
                          " has only " + std::to_string(data.size()));
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(data.labels[i]).push_back(i);
  const bool stratified = std::none_of(by_class.begin(), by_class.end(), [](const auto& v) { return v.empty(); });

  std::vector<std::size_t> order;
  if (stratified) {
    for (auto& members : by_class) rng.shuffle(members);
    for (std::size_t round = 0; order.size() < n; ++round)
      for (const auto& members : by_class)
        if (round < members.size() && order.size() < n) order.push_back(members[round]);
  } else {
    order = rng.permutation(data.size());
    order.resize(n);
  }

  KeyInstanceSet keys;
  keys.seed = seed;
  keys.dataset_id = data.id;
  keys.stratified = stratified;
  for (std::size_t i : order) {
    keys.instances.push_back(data.images[i]);
    keys.source_ids.push_back(data.ids[i]);
    keys.labels.push_back(data.labels[i]);
  }
  keys.set_hash = key_set_hash(keys.instances, keys.source_ids);
  return keys;
}

// Keys are stored as 8-bit pixel values; instances must be multiples of 1/255.
inline void save_key_set(const KeyInstanceSet& keys, const std::filesystem::path& path) {
  nlohmann::json j;
  j["schema_version"] = kKeySetSchemaVersion;
  j["seed"] = keys.seed;
  j["dataset_id"] = keys.dataset_id;
  j["stratified"] = keys.stratified;
  j["set_hash"] = keys.set_hash;
  j["instances"] = nlohmann::json::array();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::vector<int> pixels;
    pixels.reserve(keys.instances[i].size());
    for (double v : keys.instances[i].values()) {
      const double q = std::round(v * 255.0);
      if (q / 255.0 != v) throw FormatError("key set: instance " + keys.source_ids[i] + " is not 8-bit representable");
      pixels.push_back(static_cast<int>(q));
    }
    j["instances"].push_back({{"id", keys.source_ids[i]},
                              {"label", keys.labels.at(i)},
                              {"shape", keys.instances[i].shape()},
                              {"pixels", pixels}});
  }
  write_file_bytes(path, j.dump() + "\n");
}

inline KeyInstanceSet load_key_set(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != kKeySetSchemaVersion)
      throw VersionError(path.string() + ": key set schema version " + j.at("schema_version").dump() +
                         " is not supported (expected " + std::to_string(kKeySetSchemaVersion) + ")");
    KeyInstanceSet keys;
    keys.seed = j.at("seed").get<std::uint64_t>();
    keys.dataset_id = j.at("dataset_id").get<std::string>();
    keys.stratified = j.at("stratified").get<bool>();
    for (const auto& e : j.at("instances")) {
      const auto pixels = e.at("pixels").get<std::vector<int>>();
      std::vector<double> data(pixels.size());
      for (std::size_t i = 0; i < pixels.size(); ++i) {
        if (pixels[i] < 0 || pixels[i] > 255) throw FormatError(path.string() + ": pixel value out of range");
        data[i] = pixels[i] / 255.0;
      }
      keys.instances.emplace_back(e.at("shape").get<Shape>(), std::move(data));
      keys.source_ids.push_back(e.at("id").get<std::string>());
      keys.labels.push_back(e.at("label").get<std::size_t>());
    }
    if (keys.instances.empty()) throw FormatError(path.string() + ": key set is empty");
    keys.set_hash = key_set_hash(keys.instances, keys.source_ids);
    if (keys.set_hash != j.at("set_hash").get<std::string>())
      throw CorruptionError(path.string() + ": key set digest mismatch");
    return keys;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct Fingerprint {
  GrayImage image;
  std::string instance_id;
  std::size_t predicted_class = 0;
  bool degenerate = false;

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

struct FingerprintSet {
  std::vector<Fingerprint> fingerprints;
  std::string model_hash;
  std::string key_set_hash;
  double lambda = kDefaultLambda;

  std::size_t size() const noexcept { return fingerprints.size(); }
  friend bool operator==(const FingerprintSet&, const FingerprintSet&) = default;
};

inline void validate_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be a positive finite number");
}

/// Magnifies a relevance map by lambda into an 8-bit image:
/// pixel = clamp(round(lambda * value), 0, 255).
inline Fingerprint render_fingerprint(const RelevanceMap& map, double lambda) {
  validate_lambda(lambda);
  if (map.values.rank() != 2) throw ShapeError("render: relevance map must be H x W, got " + shape_string(map.values.shape()));
  Fingerprint fp;
  fp.image = GrayImage{map.values.dim(0), map.values.dim(1), std::vector<std::uint8_t>(map.values.size())};
  for (std::size_t i = 0; i < map.values.size(); ++i)
    fp.image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::round(lambda * map.values[i]), 0.0, 255.0));
  fp.predicted_class = map.root_class;
  fp.degenerate = map.degenerate;
  return fp;
}

inline FingerprintSet extract_fingerprint_set(const Model& model, const KeyInstanceSet& keys, double lambda,
                                              std::size_t workers = worker_count()) {
  validate_lambda(lambda);
  if (keys.size() == 0) throw InvalidArgument("extract: key set is empty");
  for (const Tensor& k : keys.instances)
    if (k.shape() != model.input_shape())
      throw ShapeError("extract: key instance shape " + shape_string(k.shape()) + " does not match model input " +
                       shape_string(model.input_shape()));
  FingerprintSet set;
  set.model_hash = model.hash();
  set.key_set_hash = keys.set_hash;
  set.lambda = lambda;
  set.fingerprints.resize(keys.size());
  parallel_for(
      keys.size(),
      [&](std::size_t i) {
        const Tensor& x = keys.instances[i];
        Fingerprint fp = render_fingerprint(dtd_extract(model, x, forward(model, x)), lambda);
        fp.instance_id = keys.source_ids[i];
        set.fingerprints[i] = std::move(fp);
      },
      workers);
  return set;
}

inline std::string fingerprint_filename(std::size_t index) {
  std::ostringstream os;
  os << "fp_" << std::setw(4) << std::setfill('0') << index << ".pgm";
  return os.str();
}

/// Writes manifest.json plus fp_0000.pgm ... into `dir`.
inline void save_fingerprint_set(const FingerprintSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = kFingerprintSchemaVersion;
  manifest["model_hash"] = set.model_hash;
  manifest["key_set_hash"] = set.key_set_hash;
  manifest["lambda"] = set.lambda;
  manifest["entries"] = nlohmann::json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Fingerprint& fp = set.fingerprints[i];
    const std::string bytes = encode_pgm(fp.image);
    write_file_bytes(dir / fingerprint_filename(i), bytes);
    manifest["entries"].push_back({{"index", i},
                                   {"instance_id", fp.instance_id},
                                   {"predicted_class", fp.predicted_class},
                                   {"degenerate", fp.degenerate},
                                   {"image_digest", sha256_hex(bytes)}});
  }
  write_file_bytes(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline FingerprintSet load_fingerprint_set(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw IoError(dir.string() + ": missing manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file_bytes(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  try {
    if (m.at("schema_version").get<int>() != kFingerprintSchemaVersion)
      throw VersionError(manifest_path.string() + ": schema version " + m.at("schema_version").dump() +
                         " is not supported (expected " + std::to_string(kFingerprintSchemaVersion) + ")");
    FingerprintSet set;
    set.model_hash = m.at("model_hash").get<std::string>();
    set.key_set_hash = m.at("key_set_hash").get<std::string>();
    set.lambda = m.at("lambda").get<double>();
    const auto& entries = m.at("entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.at("index").get<std::size_t>() != i)
        throw FormatError(manifest_path.string() + ": entry " + std::to_string(i) + " is out of order");
      const std::string file = fingerprint_filename(i);
      const auto path = dir / file;
      if (!std::filesystem::exists(path)) throw IoError(dir.string() + ": fingerprint image " + file + " is missing");
      const std::string bytes = read_file_bytes(path);
      if (sha256_hex(bytes) != e.at("image_digest").get<std::string>())
        throw CorruptionError(dir.string() + ": digest mismatch for " + file);
      Fingerprint fp;
      fp.image = decode_pgm(bytes, path.string());
      fp.instance_id = e.at("instance_id").get<std::string>();
      fp.predicted_class = e.at("predicted_class").get<std::size_t>();
      fp.degenerate = e.at("degenerate").get<bool>();
      set.fingerprints.push_back(std::move(fp));
    }
    if (set.fingerprints.empty()) throw FormatError(manifest_path.string() + ": no entries");
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

// Digest of every regular file (name and bytes) under `dir`, in name order.
inline std::string directory_digest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(std::filesystem::relative(entry.path(), dir));
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    h.update(f.generic_string());
    h.update(read_file_bytes(dir / f));
  }
  return h.finish_hex();
}

// Median over fingerprints of the brightest pixel.
inline double median_peak_intensity(const FingerprintSet& set) {
  std::vector<int> peaks;
  for (const auto& fp : set.fingerprints)
    peaks.push_back(fp.image.pixels.empty() ? 0 : *std::max_element(fp.image.pixels.begin(), fp.image.pixels.end()));
  if (peaks.empty()) return 0.0;
  std::sort(peaks.begin(), peaks.end());
  return peaks[peaks.size() / 2];
}

inline constexpr double kLowVisibilityPeak = 192.0;

// Dim fingerprints: the typical image peaks below three quarters of full scale.
inline bool low_visibility(const FingerprintSet& set) { return median_peak_intensity(set) < kLowVisibilityPeak; }

/// Tiles rows of equally sized images with a one-pixel mid-grey gutter.
inline GrayImage make_montage(const std::vector<std::vector<const GrayImage*>>& rows) {
  if (rows.empty() || rows.front().empty()) throw InvalidArgument("montage: nothing to tile");
  const std::size_t h = rows.front().front()->height, w = rows.front().front()->width;
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  GrayImage out{rows.size() * (h + 1) - 1, cols * (w + 1) - 1, {}};
  out.pixels.assign(out.height * out.width, 128);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const GrayImage& img = *rows[r][c];
      if (img.height != h || img.width != w) throw ShapeError("montage: images differ in size");
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.pixels[(r * (h + 1) + y) * out.width + c * (w + 1) + x] = img.at(y, x);
    }
  return out;
}

/// Fixed five-stop heat palette (black, purple, red, orange, pale yellow),
/// linearly interpolated. For human viewing only.
inline RgbImage colorize(const GrayImage& img) {
  static constexpr std::uint8_t kStops[5][3] = {{0, 0, 0}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}};
  RgbImage out{img.height, img.width, std::vector<std::uint8_t>(img.pixels.size() * 3)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double t = img.pixels[i] / 255.0 * 4.0;
    const std::size_t lo = std::min<std::size_t>(3, static_cast<std::size_t>(t));
    const double f = t - static_cast<double>(lo);
    for (int ch = 0; ch < 3; ++ch)
      out.pixels[i * 3 + ch] =
          static_cast<std::uint8_t>(std::lround(kStops[lo][ch] + f * (kStops[lo + 1][ch] - kStops[lo][ch])));
  }
  return out;
}

}  // namespace infip
