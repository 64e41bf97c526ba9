#ifndef STF_EVENTS_HPP
#define STF_EVENTS_HPP

// Event data model, CSV event files, JSON dataset manifests and timestamp jitter.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stf/common.hpp"

namespace stf {

struct Event {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int64_t t = 0;  // microseconds
  std::int8_t polarity = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

struct SensorGeometry {
  int width = 0;
  int height = 0;

  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

struct EventRecording {
  std::vector<Event> events;
  SensorGeometry geometry;
  std::optional<int> label;
  std::string subject_id;
  std::map<std::string, std::string> metadata;

  std::size_t size() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }
  std::int64_t t_first() const { return events.empty() ? 0 : events.front().t; }
  std::int64_t t_last() const { return events.empty() ? 0 : events.back().t; }
};

inline bool in_bounds(const Event& e, const SensorGeometry& g) noexcept {
  return e.x >= 0 && e.y >= 0 && e.x < g.width && e.y < g.height && e.t >= 0;
}

inline void sort_by_time(std::vector<Event>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
}

/// Throws GeometryError naming the first event outside the sensor.
inline void check_geometry(const std::vector<Event>& events, const SensorGeometry& g) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (!in_bounds(e, g)) {
      std::ostringstream os;
      os << "event " << i << " (t=" << e.t << ", x=" << e.x << ", y=" << e.y
         << ") lies outside the " << g.width << "x" << g.height << " sensor";
      throw GeometryError(os.str());
    }
  }
}

namespace detail {

template <class Int>
Int parse_field(std::string_view field, std::size_t line, const char* name) {
  Int value{};
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw ParseError(std::string("bad ") + name + " field '" + std::string(field) + "'", line);
  return value;
}

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline constexpr std::string_view kEventCsvHeader = "t_us,x,y,p";

/// Parses the CSV event format: header "t_us,x,y,p", then one event per line,
/// p in {0,1} encoding polarity {-1,+1}.
inline std::vector<Event> parse_events_csv(std::istream& in) {
  std::vector<Event> events;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = detail::trim_cr(line);
    if (!header_seen) {
      if (s != kEventCsvHeader)
        throw ParseError("expected header '" + std::string(kEventCsvHeader) + "'", lineno);
      header_seen = true;
      continue;
    }
    if (s.empty()) continue;
    std::string_view fields[4];
    std::size_t n = 0, start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (i == s.size() || s[i] == ',') {
        if (n == 4) throw ParseError("too many fields", lineno);
        fields[n++] = s.substr(start, i - start);
        start = i + 1;
      }
    }
    if (n != 4) throw ParseError("expected 4 fields, got " + std::to_string(n), lineno);
    Event e;
    e.t = detail::parse_field<std::int64_t>(fields[0], lineno, "t_us");
    e.x = detail::parse_field<std::int32_t>(fields[1], lineno, "x");
    e.y = detail::parse_field<std::int32_t>(fields[2], lineno, "y");
    const int p = detail::parse_field<int>(fields[3], lineno, "p");
    if (p != 0 && p != 1) throw ParseError("polarity must be 0 or 1", lineno);
    if (e.t < 0) throw ParseError("negative timestamp", lineno);
    e.polarity = p == 1 ? 1 : -1;
    events.push_back(e);
  }
  return events;
}

inline void write_events_csv(std::ostream& out, const std::vector<Event>& events) {
  out << kEventCsvHeader << '\n';
  std::string line;
  char num[24];
  auto append = [&](auto v) {
    const auto r = std::to_chars(num, num + sizeof num, v);
    line.append(num, r.ptr);
  };
  for (const Event& e : events) {
    line.clear();
    append(e.t);
    line += ',';
    append(e.x);
    line += ',';
    append(e.y);
    line += e.polarity > 0 ? ",1\n" : ",0\n";
    out << line;
  }
}

/// Loads an event CSV. Events are sorted by timestamp; events outside the
/// geometry raise GeometryError.
inline EventRecording load_recording(const std::filesystem::path& path, SensorGeometry geometry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file " + path.string());
  EventRecording rec;
  rec.geometry = geometry;
  try {
    rec.events = parse_events_csv(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
  sort_by_time(rec.events);
  check_geometry(rec.events, geometry);
  return rec;
}

inline void save_recording(const EventRecording& rec, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event file " + path.string());
  write_events_csv(out, rec.events);
  if (!out) throw IoError("write failed for " + path.string());
}

/// Shifts every timestamp by an independent integer draw from [-t_delta, t_delta],
/// clamps at zero and re-sorts.
inline EventRecording add_timestamp_noise(const EventRecording& rec, std::int64_t t_delta,
                                          std::uint64_t seed) {
  if (t_delta < 0) throw PreconditionError("t_delta must be non-negative");
  EventRecording out = rec;
  if (t_delta == 0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> shift(-t_delta, t_delta);
  for (Event& e : out.events) e.t = std::max<std::int64_t>(0, e.t + shift(rng));
  sort_by_time(out.events);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest

enum class Split { train, test };

struct ManifestEntry {
  std::filesystem::path path;  // absolute or relative to the manifest directory
  int label = 0;               // index into categories
  std::string subject;
  Split split = Split::train;
};

struct DatasetManifest {
  SensorGeometry geometry;
  std::vector<std::string> categories;
  std::vector<ManifestEntry> recordings;
  std::filesystem::path base_dir;  // directory relative paths resolve against

  std::filesystem::path resolve(const ManifestEntry& e) const {
    return e.path.is_absolute() ? e.path : base_dir / e.path;
  }

  std::vector<const ManifestEntry*> entries(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& r : recordings)
      if (r.split == split) out.push_back(&r);
    return out;
  }

  EventRecording load(const ManifestEntry& e) const {
    EventRecording rec = load_recording(resolve(e), geometry);
    rec.label = e.label;
    rec.subject_id = e.subject;
    return rec;
  }

  std::size_t count(Split split) const { return entries(split).size(); }
};

/// Throws PreconditionError if a subject appears in both splits.
inline void check_subject_disjoint(const DatasetManifest& m) {
  std::map<std::string, Split> seen;
  for (const auto& r : m.recordings) {
    auto [it, inserted] = seen.emplace(r.subject, r.split);
    if (!inserted && it->second != r.split)
      throw PreconditionError("subject '" + r.subject + "' appears in both train and test splits");
  }
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["sensor_width"] = m.geometry.width;
  j["sensor_height"] = m.geometry.height;
  j["categories"] = m.categories;
  j["recordings"] = nlohmann::json::array();
  for (const auto& r : m.recordings) {
    j["recordings"].push_back({{"path", r.path.generic_string()},
                               {"label", m.categories.at(r.label)},
                               {"subject", r.subject},
                               {"split", r.split == Split::train ? "train" : "test"}});
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    m.geometry = {j.at("sensor_width").get<int>(), j.at("sensor_height").get<int>()};
    m.categories = j.at("categories").get<std::vector<std::string>>();
    for (const auto& r : j.at("recordings")) {
      ManifestEntry e;
      e.path = r.at("path").get<std::string>();
      const auto label = r.at("label").get<std::string>();
      auto it = std::find(m.categories.begin(), m.categories.end(), label);
      if (it == m.categories.end()) throw Error("unknown category '" + label + "'");
      e.label = static_cast<int>(it - m.categories.begin());
      e.subject = r.at("subject").get<std::string>();
      const auto split = r.at("split").get<std::string>();
      if (split == "train") e.split = Split::train;
      else if (split == "test") e.split = Split::test;
      else throw Error("split must be 'train' or 'test', got '" + split + "'");
      m.recordings.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  if (m.geometry.width <= 0 || m.geometry.height <= 0)
    throw GeometryError("manifest sensor geometry must be positive");
  check_subject_disjoint(m);
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

}  // namespace stf

#endif  // STF_EVENTS_HPP
