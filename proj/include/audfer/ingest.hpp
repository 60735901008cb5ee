#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "audfer/csv.hpp"
#include "audfer/domain.hpp"
#include "audfer/error.hpp"

namespace audfer {

/// One video frame as reported by the AU tracker.
struct FrameAURecord {
  std::string video_id;
  long long frame_index = 1;
  double timestamp = 0.0;
  double confidence = 1.0;
  bool success = true;
  std::array<double, kNumIntensityAus> intensities{};
  std::array<std::uint8_t, kNumAus> presences{};
  std::array<bool, kNumIntensityAus> interpolated_mask{};

  bool operator==(const FrameAURecord&) const = default;
};

/// Per-frame expression scores from an external classifier.
struct FramePrediction {
  std::string video_id;
  long long frame_index = 1;
  std::array<double, kNumExpressions> scores{};
  Expression label = Expression::Happy;
};

inline std::string intensity_column(std::size_t slot) { return au_name(intensity_slot_to_au(slot)) + "_r"; }
inline std::string presence_column(std::size_t au) { return au_name(au) + "_c"; }

/// Header-driven parser for OpenFace 2.2.0 per-frame output.
///
/// Column order is irrelevant; OpenFace pads names with a leading space, which
/// is trimmed. Rows with success = 0 are kept (flagged through `success`), rows
/// belonging to a secondary face (face_id > 0) are dropped with a warning.
inline std::vector<FrameAURecord> parse_openface_csv(std::istream& in, const std::string& video_id,
                                                     Diagnostics* diag = nullptr) {
  std::string line;
  if (!csv::read_line(in, line)) throw ContractError("empty OpenFace file for video " + video_id);
  std::vector<std::string> header;
  for (auto h : csv::split(line)) header.emplace_back(h);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(header[i], i);

  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw ContractError("missing column \"" + name + "\" in video " + video_id);
    return it->second;
  };
  auto optional = [&](const std::string& name) -> std::ptrdiff_t {
    auto it = col.find(name);
    return it == col.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  };

  const std::size_t frame_col = require("frame");
  const std::size_t conf_col = require("confidence");
  const std::size_t success_col = require("success");
  std::array<std::size_t, kNumIntensityAus> r_cols{};
  std::array<std::size_t, kNumAus> c_cols{};
  for (std::size_t s = 0; s < kNumIntensityAus; ++s) r_cols[s] = require(intensity_column(s));
  for (std::size_t a = 0; a < kNumAus; ++a) c_cols[a] = require(presence_column(a));
  const auto ts_col = optional("timestamp");
  const auto face_col = optional("face_id");

  std::vector<FrameAURecord> out;
  std::size_t row = 1;
  std::size_t dropped_faces = 0;
  while (csv::read_line(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (cells.size() < header.size()) {
      throw ContractError("row " + std::to_string(row) + " of video " + video_id + " has " +
                          std::to_string(cells.size()) + " cells, header has " +
                          std::to_string(header.size()));
    }
    auto num = [&](std::size_t c) {
      if (auto v = csv::try_parse_double(cells[c])) return *v;
      throw ContractError("non-numeric cell at row " + std::to_string(row) + ", column \"" +
                          header[c] + "\" in video " + video_id);
    };
    if (face_col >= 0 && num(static_cast<std::size_t>(face_col)) > 0) {
      ++dropped_faces;
      continue;
    }
    FrameAURecord r;
    r.video_id = video_id;
    r.frame_index = static_cast<long long>(std::llround(num(frame_col)));
    r.timestamp = ts_col >= 0 ? num(static_cast<std::size_t>(ts_col)) : 0.0;
    r.confidence = num(conf_col);
    r.success = num(success_col) != 0.0;
    for (std::size_t s = 0; s < kNumIntensityAus; ++s) {
      const double v = num(r_cols[s]);
      if (!(v >= 0.0 && v <= 5.0)) {
        throw ContractError("intensity " + csv::format_double(v) + " out of range [0,5] at row " +
                            std::to_string(row) + ", column " + intensity_column(s) +
                            " in video " + video_id);
      }
      r.intensities[s] = v;
    }
    for (std::size_t a = 0; a < kNumAus; ++a) {
      const double v = num(c_cols[a]);
      if (v != 0.0 && v != 1.0) {
        throw ContractError("presence " + csv::format_double(v) + " not in {0,1} at row " +
                            std::to_string(row) + ", column " + presence_column(a) +
                            " in video " + video_id);
      }
      r.presences[a] = v == 1.0 ? 1 : 0;
    }
    out.push_back(std::move(r));
  }
  if (dropped_faces > 0) {
    warn(diag, "video " + video_id + ": dropped " + std::to_string(dropped_faces) +
                   " rows with face_id > 0");
  }
  return out;
}

/// Writes records in the OpenFace column layout (the subset this library reads).
inline void write_openface_csv(std::ostream& out, const std::vector<FrameAURecord>& records) {
  out << "frame, face_id, timestamp, confidence, success";
  for (std::size_t s = 0; s < kNumIntensityAus; ++s) out << ", " << intensity_column(s);
  for (std::size_t a = 0; a < kNumAus; ++a) out << ", " << presence_column(a);
  out << '\n';
  for (const auto& r : records) {
    out << r.frame_index << ", 0, " << csv::format_double(r.timestamp) << ", "
        << csv::format_double(r.confidence) << ", " << (r.success ? 1 : 0);
    for (double v : r.intensities) out << ", " << csv::format_double(v);
    for (auto p : r.presences) out << ", " << (p ? "1.0" : "0.0");
    out << '\n';
  }
}

struct InterpolationResult {
  std::vector<FrameAURecord> records;
  /// One entry per AU series that was entirely zero, e.g. "AU04 all-zero".
  std::vector<std::string> flags;
};

/// Replaces exactly-zero intensities of one video by linear interpolation in
/// frame order. Leading and trailing zeros copy the nearest nonzero value.
inline InterpolationResult interpolate_zero_intensities(std::vector<FrameAURecord> records) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].video_id != records[0].video_id) {
      throw ContractError("interpolation input mixes videos \"" + records[0].video_id + "\" and \"" +
                          records[i].video_id + "\"");
    }
    if (records[i].frame_index <= records[i - 1].frame_index) {
      throw ContractError("interpolation input for video " + records[0].video_id +
                          " is not sorted by frame index");
    }
  }
  InterpolationResult result;
  const std::size_t n = records.size();
  std::vector<std::size_t> nonzero;
  for (std::size_t s = 0; s < kNumIntensityAus && n > 0; ++s) {
    nonzero.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (records[i].intensities[s] != 0.0) nonzero.push_back(i);
    if (nonzero.empty()) {
      result.flags.push_back(au_name(intensity_slot_to_au(s)) + " all-zero");
      continue;
    }
    std::size_t next = 0;  // position in `nonzero` of the first nonzero index >= i
    for (std::size_t i = 0; i < n; ++i) {
      while (next < nonzero.size() && nonzero[next] < i) ++next;
      if (records[i].intensities[s] != 0.0) continue;
      double v;
      if (next == 0) {
        v = records[nonzero.front()].intensities[s];
      } else if (next == nonzero.size()) {
        v = records[nonzero.back()].intensities[s];
      } else {
        const auto& lo = records[nonzero[next - 1]];
        const auto& hi = records[nonzero[next]];
        const double t = static_cast<double>(records[i].frame_index - lo.frame_index) /
                         static_cast<double>(hi.frame_index - lo.frame_index);
        v = lo.intensities[s] + t * (hi.intensities[s] - lo.intensities[s]);
      }
      records[i].intensities[s] = v;
      records[i].interpolated_mask[s] = true;
    }
  }
  result.records = std::move(records);
  return result;
}

/// Loads per-frame expression predictions: video_id, frame, label, s0..s6.
inline std::vector<FramePrediction> load_frame_predictions(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw ContractError("empty prediction file");
  const auto header = csv::split(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(std::string(header[i]), i);
  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw ContractError("prediction file missing column \"" + name + "\"");
    return it->second;
  };
  const std::size_t vid = require("video_id");
  const std::size_t frame = require("frame");
  const std::size_t label = require("label");
  std::array<std::size_t, kNumExpressions> sc{};
  for (std::size_t k = 0; k < kNumExpressions; ++k) sc[k] = require("s" + std::to_string(k));

  std::vector<FramePrediction> out;
  std::size_t row = 1;
  while (csv::read_line(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (cells.size() < header.size()) {
      throw ContractError("prediction row " + std::to_string(row) + " is short");
    }
    const std::string ctx = "prediction row " + std::to_string(row);
    FramePrediction p;
    p.video_id = std::string(cells[vid]);
    p.frame_index = csv::parse_int(cells[frame], ctx);
    p.label = to_expression(expression_index(cells[label]));
    double sum = 0.0;
    for (std::size_t k = 0; k < kNumExpressions; ++k) {
      const double v = csv::parse_double(cells[sc[k]], ctx);
      if (v < 0.0 || !std::isfinite(v)) {
        throw ContractError("negative score " + csv::format_double(v) + " in " + ctx);
      }
      p.scores[k] = v;
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-3) {
      throw ContractError("scores in " + ctx + " sum to " + csv::format_double(sum) +
                          ", outside 1 +/- 1e-3");
    }
    for (double& v : p.scores) v /= sum;
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_frame_predictions(std::ostream& out, const std::vector<FramePrediction>& preds) {
  out << "video_id,frame,label";
  for (std::size_t k = 0; k < kNumExpressions; ++k) out << ",s" << k;
  out << '\n';
  for (const auto& p : preds) {
    out << p.video_id << ',' << p.frame_index << ',' << expression_name(p.label);
    for (double v : p.scores) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Normalized frame store: newline-delimited JSON, first line is a header.

inline constexpr int kFrameStoreVersion = 1;

inline nlohmann::json to_json(const FrameAURecord& r) {
  return {{"video", r.video_id},       {"frame", r.frame_index},
          {"t", r.timestamp},          {"conf", r.confidence},
          {"success", r.success},      {"r", r.intensities},
          {"c", r.presences},          {"interp", r.interpolated_mask}};
}

inline FrameAURecord frame_from_json(const nlohmann::json& j) {
  FrameAURecord r;
  r.video_id = j.at("video").get<std::string>();
  r.frame_index = j.at("frame").get<long long>();
  r.timestamp = j.at("t").get<double>();
  r.confidence = j.at("conf").get<double>();
  r.success = j.at("success").get<bool>();
  r.intensities = j.at("r").get<std::array<double, kNumIntensityAus>>();
  r.presences = j.at("c").get<std::array<std::uint8_t, kNumAus>>();
  r.interpolated_mask = j.at("interp").get<std::array<bool, kNumIntensityAus>>();
  return r;
}

inline void write_frame_store(std::ostream& out, const std::vector<FrameAURecord>& records) {
  out << nlohmann::json{{"format", "audfer-frame-store"},
                        {"version", kFrameStoreVersion},
                        {"count", records.size()}}
             .dump()
      << '\n';
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<FrameAURecord> read_frame_store(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw ContractError("empty frame store");
  std::size_t expected = 0;
  try {
    const auto h = nlohmann::json::parse(line);
    if (h.at("format") != "audfer-frame-store") throw ContractError("not a frame store");
    if (h.at("version").get<int>() != kFrameStoreVersion) {
      throw ContractError("frame store version " + h.at("version").dump() + " unsupported");
    }
    expected = h.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("corrupt frame store header: ") + e.what());
  }
  std::vector<FrameAURecord> out;
  out.reserve(expected);
  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(frame_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ContractError("corrupt frame store record at line " + std::to_string(lineno) + ": " +
                          e.what());
    }
  }
  if (out.size() != expected) {
    throw ContractError("frame store truncated: expected " + std::to_string(expected) +
                        " records, found " + std::to_string(out.size()));
  }
  return out;
}

/// Groups records by video, each group sorted by frame index.
inline std::map<std::string, std::vector<FrameAURecord>> group_by_video(std::vector<FrameAURecord> records) {
  std::map<std::string, std::vector<FrameAURecord>> out;
  for (auto& r : records) out[r.video_id].push_back(std::move(r));
  for (auto& [_, v] : out) {
    std::stable_sort(v.begin(), v.end(),
                     [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; });
  }
  return out;
}

/// Parses and repairs every `*.csv` in a directory; video id = file stem.
inline std::vector<FrameAURecord> ingest_openface_directory(const std::filesystem::path& dir,
                                                            Diagnostics* diag = nullptr) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<FrameAURecord> all;
  for (const auto& f : files) {
    auto in = csv::open_in(f.string());
    const std::string vid = f.stem().string();
    auto grouped = group_by_video(parse_openface_csv(in, vid, diag));
    for (auto& [_, recs] : grouped) {
      auto repaired = interpolate_zero_intensities(std::move(recs));
      for (const auto& flag : repaired.flags) warn(diag, "video " + vid + ": " + flag);
      for (auto& r : repaired.records) all.push_back(std::move(r));
    }
  }
  return all;
}

}  // namespace audfer
