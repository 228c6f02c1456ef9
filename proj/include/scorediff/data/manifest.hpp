#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorediff/core/io.hpp"
#include "scorediff/core/rng.hpp"
#include "scorediff/data/config.hpp"

namespace scorediff::data {

inline constexpr double kClipSeconds = 10.0;

struct ClipRecord {
  std::string id;
  std::string film_title;
  std::string composer;
  std::vector<std::string> styles;
  std::string source_segment;
  double start = 0, end = 0;
  std::string audio_path;
  std::string frames_path;
  std::size_t emotion = 0;
  std::string attributes_path;
  std::vector<float> theme;
  std::string split;  // "", "train", "val" or "test"
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClipRecord, id, film_title, composer, styles, source_segment, start, end,
                                                audio_path, frames_path, emotion, attributes_path, theme, split)

struct Manifest {
  std::uint32_t version = 1;
  std::string config_digest;
  double clip_seconds = kClipSeconds;
  std::vector<ClipRecord> records;
};

/// One header line, then one JSON object per record.
inline std::string encode_manifest(const Manifest& m) {
  std::string out = nlohmann::json{{"format", "scorediff-manifest"}, {"version", m.version}, {"config_digest", m.config_digest},
                                   {"clip_seconds", m.clip_seconds}}.dump();
  out += "\n";
  for (const auto& r : m.records) out += nlohmann::json(r).dump() + "\n";
  return out;
}

inline Manifest decode_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Manifest m;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!header) {
      if (j.value("format", "") != "scorediff-manifest") throw FormatError("manifest header missing");
      m.version = j.value("version", 1u);
      m.config_digest = j.value("config_digest", "");
      m.clip_seconds = j.value("clip_seconds", kClipSeconds);
      header = true;
      continue;
    }
    m.records.push_back(j.get<ClipRecord>());
  }
  if (!header) throw FormatError("manifest is empty");
  return m;
}

inline void write_manifest(const std::string& path, const Manifest& m) { write_file_atomic(path, encode_manifest(m)); }
inline Manifest read_manifest(const std::string& path) { return decode_manifest(read_file(path)); }

struct RawSegment {
  std::string id;
  double duration = 0;
  std::string film_title, composer;
  std::vector<std::string> styles;
  std::string audio_path;
};

/// Drops segments shorter than 10 s and cuts the rest into consecutive
/// 10 s clips from offset 0; the trailing remainder is dropped.
inline std::vector<ClipRecord> segment_clips(const std::vector<RawSegment>& raw, double clip_seconds = kClipSeconds) {
  std::vector<ClipRecord> out;
  for (const auto& s : raw) {
    detail::require(s.duration >= 0 && std::isfinite(s.duration), "segment " + s.id + " has a negative duration");
    // tolerate representation error so 20.0 s yields two clips
    const auto n = std::size_t(std::floor(s.duration / clip_seconds + 1e-9));
    for (std::size_t k = 0; k < n; ++k) {
      ClipRecord r;
      r.id = s.id + "#" + std::to_string(k);
      r.source_segment = s.id;
      r.film_title = s.film_title;
      r.composer = s.composer;
      r.styles = s.styles;
      r.audio_path = s.audio_path;
      r.start = double(k) * clip_seconds;
      r.end = r.start + clip_seconds;
      out.push_back(std::move(r));
    }
  }
  return out;
}

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Rounded val/test counts; train takes the remainder.
inline SplitCounts split_counts(std::size_t n, double train, double val, double test) {
  detail::require(train >= 0 && val >= 0 && test >= 0 && std::abs(train + val + test - 1.0) <= 1e-9,
                  "split ratios must be non-negative and sum to 1");
  SplitCounts c;
  c.val = std::size_t(std::llround(double(n) * val));
  c.test = std::size_t(std::llround(double(n) * test));
  if (c.val + c.test > n) c.test = n - std::min(n, c.val);
  c.train = n - c.val - c.test;
  return c;
}

/// Seeded Fisher-Yates shuffle, then contiguous train/val/test partition.
inline Manifest split_dataset(Manifest m, const SplitConfig& cfg) {
  detail::require(!m.records.empty(), "cannot split an empty manifest");
  const auto counts = split_counts(m.records.size(), cfg.train, cfg.val, cfg.test);
  std::vector<std::size_t> order(m.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(cfg.seed);
  for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[std::size_t(rng.integer(0, std::int64_t(i)))]);
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& r = m.records[order[k]];
    r.split = k < counts.train ? "train" : (k < counts.train + counts.val ? "val" : "test");
  }
  return m;
}

struct Issue {
  std::string record;
  std::string kind;
  std::string message;
};

struct ValidateOptions {
  std::string base_dir;  // relative paths resolve against this
  bool check_paths = true;
  std::optional<SplitConfig> expected_split;
};

inline std::vector<Issue> validate_manifest(const Manifest& m, const ValidateOptions& opt = {}) {
  std::vector<Issue> issues;
  std::set<std::string> seen;
  std::map<std::string, std::size_t> split_sizes;
  bool all_assigned = true;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !opt.base_dir.empty() ? std::filesystem::path(opt.base_dir) / path : path;
  };
  for (const auto& r : m.records) {
    if (r.id.empty()) issues.push_back({r.id, "id", "record without id"});
    if (!seen.insert(r.id).second) issues.push_back({r.id, "duplicate_id", "duplicate record id " + r.id});
    if (std::abs((r.end - r.start) - m.clip_seconds) > 1e-6)
      issues.push_back({r.id, "duration", "clip " + r.id + " lasts " + std::to_string(r.end - r.start) + " s"});
    if (r.split.empty()) all_assigned = false;
    else if (r.split != "train" && r.split != "val" && r.split != "test")
      issues.push_back({r.id, "split", "unknown split tag '" + r.split + "'"});
    else ++split_sizes[r.split];
    if (opt.check_paths)
      for (const auto* p : {&r.audio_path, &r.frames_path, &r.attributes_path})
        if (!p->empty() && !std::filesystem::exists(resolve(*p)))
          issues.push_back({r.id, "path", "missing file " + *p});
  }
  if (opt.expected_split && all_assigned && !m.records.empty()) {
    const auto c = split_counts(m.records.size(), opt.expected_split->train, opt.expected_split->val, opt.expected_split->test);
    if (split_sizes["train"] != c.train || split_sizes["val"] != c.val || split_sizes["test"] != c.test)
      issues.push_back({"", "split_sizes", "split sizes " + std::to_string(split_sizes["train"]) + "/" +
                                               std::to_string(split_sizes["val"]) + "/" + std::to_string(split_sizes["test"]) +
                                               " differ from expected " + std::to_string(c.train) + "/" +
                                               std::to_string(c.val) + "/" + std::to_string(c.test)});
  }
  return issues;
}

struct DatasetStats {
  std::size_t clips = 0;
  double total_seconds = 0;
  std::map<std::string, std::size_t> styles, composers, splits;
  std::map<std::size_t, std::size_t> emotions;
};

inline DatasetStats dataset_stats(const Manifest& m) {
  DatasetStats s;
  for (const auto& r : m.records) {
    ++s.clips;
    s.total_seconds += r.end - r.start;
    for (const auto& st : r.styles) ++s.styles[st];
    if (!r.composer.empty()) ++s.composers[r.composer];
    ++s.splits[r.split.empty() ? "unassigned" : r.split];
    ++s.emotions[r.emotion];
  }
  return s;
}

}  // namespace scorediff::data
