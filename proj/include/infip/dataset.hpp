#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "infip/error.hpp"
#include "infip/pgm.hpp"
#include "infip/rng.hpp"
#include "infip/tensor.hpp"

namespace infip {

struct LabeledDataset {
  std::string id;
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }

  void validate() const {
    if (images.size() != labels.size() || images.size() != ids.size())
      throw InvalidArgument("dataset " + id + ": images, labels and ids differ in length");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].shape() != input_shape)
        throw ShapeError("dataset " + id + ": instance " + ids[i] + " has shape " +
                         shape_string(images[i].shape()) + ", expected " + shape_string(input_shape));
      if (labels[i] >= num_classes)
        throw InvalidArgument("dataset " + id + ": label " + std::to_string(labels[i]) + " of " + ids[i] +
                              " outside [0, " + std::to_string(num_classes) + ")");
    }
  }

  LabeledDataset subset(const std::vector<std::size_t>& indices) const {
    LabeledDataset out{id, input_shape, num_classes, {}, {}, {}};
    for (std::size_t i : indices) {
      out.images.push_back(images.at(i));
      out.labels.push_back(labels.at(i));
      out.ids.push_back(ids.at(i));
    }
    return out;
  }
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset test;
};

/// Class-conditional blob images. Each class owns a fixed arrangement of
/// Gaussian blobs; samples jitter the arrangement and add background noise.
/// Pixel values are multiples of 1/255, so PGM export is lossless.
struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t num_classes = 10;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t blobs_per_class = 3;
  int max_shift = 2;
  double background_level = 0.5;
  double background_noise = 0.2;
};

namespace detail {

struct Blob {
  double cy, cx, sigma, amplitude;  // amplitude is signed
};

inline LabeledDataset synthesize_split(const SyntheticSpec& spec, const std::vector<std::vector<Blob>>& classes,
                                       std::size_t per_class, Rng rng, const std::string& split) {
  LabeledDataset ds;
  ds.id = "synthetic:seed=" + std::to_string(spec.seed) + ":" + split;
  ds.input_shape = {1, spec.height, spec.width};
  ds.num_classes = spec.num_classes;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double dy = static_cast<double>(static_cast<int>(rng.below(2 * spec.max_shift + 1)) - spec.max_shift);
      const double dx = static_cast<double>(static_cast<int>(rng.below(2 * spec.max_shift + 1)) - spec.max_shift);
      std::vector<double> gains(classes[c].size());
      for (double& g : gains) g = rng.uniform(0.8, 1.1);
      Tensor img(ds.input_shape);
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) {
          double v = spec.background_level + rng.uniform(-0.5, 0.5) * spec.background_noise;
          for (std::size_t b = 0; b < classes[c].size(); ++b) {
            const Blob& blob = classes[c][b];
            const double ry = static_cast<double>(y) - (blob.cy + dy);
            const double rx = static_cast<double>(x) - (blob.cx + dx);
            v += gains[b] * blob.amplitude * std::exp(-(ry * ry + rx * rx) / (2.0 * blob.sigma * blob.sigma));
          }
          img.at(0, y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
        }
      std::ostringstream name;
      name << split << '-' << std::setw(5) << std::setfill('0') << ds.images.size();
      ds.images.push_back(std::move(img));
      ds.labels.push_back(c);
      ds.ids.push_back(name.str());
    }
  }
  return ds;
}

}  // namespace detail

inline DatasetSplits make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes == 0 || spec.height < 8 || spec.width < 8)
    throw InvalidArgument("synthetic dataset: need at least one class and 8x8 images");
  Rng root(spec.seed);
  Rng layout = root.fork(1);
  std::vector<std::vector<detail::Blob>> classes(spec.num_classes);
  const double margin = 5.0;
  for (auto& blobs : classes)
    for (std::size_t b = 0; b < spec.blobs_per_class; ++b)
      blobs.push_back({layout.uniform(margin, spec.height - 1 - margin), layout.uniform(margin, spec.width - 1 - margin),
                       layout.uniform(1.6, 3.0), (layout.below(2) ? 1.0 : -1.0) * layout.uniform(0.3, 0.45)});
  DatasetSplits splits;
  splits.train = detail::synthesize_split(spec, classes, spec.train_per_class, root.fork(2), "train");
  splits.test = detail::synthesize_split(spec, classes, spec.test_per_class, root.fork(3), "test");
  return splits;
}

/// Directory dataset: labels.csv (filename,label; optional header) plus one
/// P5 PGM per row.
inline LabeledDataset load_dataset_dir(const std::filesystem::path& dir, std::size_t num_classes = 0) {
  const auto csv_path = dir / "labels.csv";
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  std::ifstream csv(csv_path);
  if (!csv) throw IoError("dataset " + dir.string() + ": missing labels.csv");
  LabeledDataset ds;
  ds.id = "dir:" + dir.filename().string();
  std::string line;
  std::size_t line_no = 0, max_label = 0;
  while (std::getline(csv, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(csv_path.string() + ":" + std::to_string(line_no) + ": expected filename,label");
    const std::string file = line.substr(0, comma), label_text = line.substr(comma + 1);
    if (line_no == 1 && file == "filename") continue;
    std::size_t label = 0;
    try {
      std::size_t used = 0;
      label = std::stoul(label_text, &used);
      if (used != label_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(csv_path.string() + ":" + std::to_string(line_no) + ": bad label '" + label_text + "'");
    }
    Tensor img = image_to_tensor(read_pgm(dir / file));
    if (ds.images.empty()) ds.input_shape = img.shape();
    max_label = std::max(max_label, label);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
    ds.ids.push_back(file);
  }
  if (ds.empty()) throw FormatError("dataset " + dir.string() + ": labels.csv lists no images");
  ds.num_classes = num_classes ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

// Uses train/ and test/ subdirectories when present, else a seeded 80/20 split.
inline DatasetSplits load_dataset_splits(const std::filesystem::path& dir, std::uint64_t seed) {
  if (std::filesystem::is_directory(dir / "train") && std::filesystem::is_directory(dir / "test")) {
    DatasetSplits s{load_dataset_dir(dir / "train"), load_dataset_dir(dir / "test")};
    const std::size_t k = std::max(s.train.num_classes, s.test.num_classes);
    s.train.num_classes = s.test.num_classes = k;
    return s;
  }
  LabeledDataset all = load_dataset_dir(dir);
  if (all.size() < 2) throw InvalidArgument("dataset " + dir.string() + ": need at least two images to split");
  Rng rng(seed);
  auto order = rng.permutation(all.size());
  const std::size_t n_train = std::max<std::size_t>(1, all.size() * 4 / 5);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {all.subset(train), all.subset(test)};
}

inline void save_dataset_dir(const LabeledDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "filename,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string file = ds.ids[i] + ".pgm";
    write_pgm(dir / file, tensor_to_image(ds.images[i]));
    csv << file << ',' << ds.labels[i] << '\n';
  }
  write_file_bytes(dir / "labels.csv", csv.str());
}

}  // namespace infip
