#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "infip/error.hpp"
#include "infip/fingerprint.hpp"
#include "infip/parallel.hpp"
#include "infip/pgm.hpp"

namespace infip {

inline constexpr double kSsimC1 = 0.0001;
inline constexpr double kSsimC2 = 0.0009;
inline constexpr double kDefaultThreshold = 0.85;
inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kToolkitVersion = "1.0.0";

/// Structural similarity with a single window covering the whole image.
/// Pixels are scaled to [0, 1]; variances and covariance use the population
/// divisor.
inline double ssim(const GrayImage& a, const GrayImage& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("ssim: image sizes differ (" + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  const std::size_t n = a.pixels.size();
  if (n == 0) throw ShapeError("ssim: empty images");
  double sum_a = 0.0, sum_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum_a += a.pixels[i] / 255.0;
    sum_b += b.pixels[i] / 255.0;
  }
  const double mean_a = sum_a / static_cast<double>(n), mean_b = sum_b / static_cast<double>(n);
  double var_a = 0.0, var_b = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.pixels[i] / 255.0 - mean_a, db = b.pixels[i] / 255.0 - mean_b;
    var_a += da * da;
    var_b += db * db;
    cov += da * db;
  }
  var_a /= static_cast<double>(n);
  var_b /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  return ((2.0 * mean_a * mean_b + kSsimC1) * (2.0 * cov + kSsimC2)) /
         ((mean_a * mean_a + mean_b * mean_b + kSsimC1) * (var_a + var_b + kSsimC2));
}

inline double ssim(const Fingerprint& a, const Fingerprint& b) { return ssim(a.image, b.image); }

inline void require_comparable(const FingerprintSet& s, const FingerprintSet& s_prime) {
  if (s.size() != s_prime.size())
    throw MismatchError("fingerprint sets differ in size (" + std::to_string(s.size()) + " vs " +
                        std::to_string(s_prime.size()) + ")");
  if (s.size() == 0) throw MismatchError("fingerprint sets are empty");
  if (s.key_set_hash != s_prime.key_set_hash)
    throw MismatchError("fingerprint sets were extracted from different key sets (" + s.key_set_hash + " vs " +
                        s_prime.key_set_hash + ")");
}

inline std::vector<double> pairwise_ssim(const FingerprintSet& s, const FingerprintSet& s_prime,
                                         std::size_t workers = worker_count()) {
  require_comparable(s, s_prime);
  std::vector<double> out(s.size());
  parallel_for(
      s.size(), [&](std::size_t i) { out[i] = ssim(s.fingerprints[i], s_prime.fingerprints[i]); }, workers);
  return out;
}

inline double mean(const std::vector<double>& values) {
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

// Average positional SSIM of two fingerprint sets over the same key set.
inline double assim(const FingerprintSet& s, const FingerprintSet& s_prime) { return mean(pairwise_ssim(s, s_prime)); }

enum class Verdict { Pirated, NotPirated };

inline const char* verdict_name(Verdict v) { return v == Verdict::Pirated ? "pirated" : "not_pirated"; }

struct SetProvenance {
  std::string model_hash;
  std::string key_set_hash;
  double lambda = 0.0;
};

struct VerificationReport {
  std::vector<double> per_instance_ssim;
  double assim = 0.0;
  double threshold = kDefaultThreshold;
  Verdict decision = Verdict::NotPirated;
  SetProvenance reference;
  SetProvenance suspect;
  std::vector<std::string> mismatch_notes;
};

inline Verdict decide(double assim_value, double threshold) {
  return assim_value >= threshold ? Verdict::Pirated : Verdict::NotPirated;
}

inline void validate_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must lie in (0, 1]");
}

/// Ownership decision: the suspect is pirated iff ASSIM >= threshold.
inline VerificationReport verify(const FingerprintSet& s, const FingerprintSet& s_prime, double threshold = kDefaultThreshold) {
  validate_threshold(threshold);
  VerificationReport report;
  report.per_instance_ssim = pairwise_ssim(s, s_prime);
  report.assim = mean(report.per_instance_ssim);
  report.threshold = threshold;
  report.decision = decide(report.assim, threshold);
  report.reference = {s.model_hash, s.key_set_hash, s.lambda};
  report.suspect = {s_prime.model_hash, s_prime.key_set_hash, s_prime.lambda};
  if (s.lambda != s_prime.lambda) {
    std::ostringstream os;
    os << "lambda differs: reference " << s.lambda << ", suspect " << s_prime.lambda;
    report.mismatch_notes.push_back(os.str());
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& a = s.fingerprints[i];
    const auto& b = s_prime.fingerprints[i];
    if (a.degenerate || b.degenerate)
      report.mismatch_notes.push_back("instance " + std::to_string(i) + " (" + a.instance_id + "): degenerate relevance map in " +
                                      (a.degenerate && b.degenerate ? "both sets" : a.degenerate ? "reference" : "suspect"));
    if (a.predicted_class != b.predicted_class)
      report.mismatch_notes.push_back("instance " + std::to_string(i) + " (" + a.instance_id + "): predicted class " +
                                      std::to_string(a.predicted_class) + " vs " + std::to_string(b.predicted_class));
    if (a.instance_id != b.instance_id)
      report.mismatch_notes.push_back("instance " + std::to_string(i) + ": id " + a.instance_id + " vs " + b.instance_id);
  }
  return report;
}

inline nlohmann::json report_to_json(const VerificationReport& r) {
  auto provenance = [](const SetProvenance& p) {
    return nlohmann::json{{"model_hash", p.model_hash}, {"key_set_hash", p.key_set_hash}, {"lambda", p.lambda}};
  };
  return {{"schema_version", kReportSchemaVersion},
          {"toolkit_version", kToolkitVersion},
          {"per_instance_ssim", r.per_instance_ssim},
          {"assim", r.assim},
          {"threshold", r.threshold},
          {"decision", verdict_name(r.decision)},
          {"provenance", {{"reference", provenance(r.reference)}, {"suspect", provenance(r.suspect)}}},
          {"mismatch_notes", r.mismatch_notes}};
}

inline VerificationReport report_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != kReportSchemaVersion)
    throw VersionError("report schema version " + j.at("schema_version").dump() + " is not supported");
  auto provenance = [](const nlohmann::json& p) {
    return SetProvenance{p.at("model_hash").get<std::string>(), p.at("key_set_hash").get<std::string>(),
                         p.at("lambda").get<double>()};
  };
  VerificationReport r;
  r.per_instance_ssim = j.at("per_instance_ssim").get<std::vector<double>>();
  r.assim = j.at("assim").get<double>();
  r.threshold = j.at("threshold").get<double>();
  const auto decision = j.at("decision").get<std::string>();
  if (decision != "pirated" && decision != "not_pirated") throw FormatError("report: unknown decision " + decision);
  r.decision = decision == "pirated" ? Verdict::Pirated : Verdict::NotPirated;
  r.reference = provenance(j.at("provenance").at("reference"));
  r.suspect = provenance(j.at("provenance").at("suspect"));
  r.mismatch_notes = j.at("mismatch_notes").get<std::vector<std::string>>();
  return r;
}

}  // namespace infip
