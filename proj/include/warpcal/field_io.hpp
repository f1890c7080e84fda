#pragma once

// Field files: a directory holding field.json
//   {"nx": .., "ny": .., "channels": n, "channel_names": [...], "domain": "unit_square"}
// and one <channel_name>.csv per channel. Each csv has ny rows (j = 0 first)
// of nx comma-separated values (i = 0 first). Values are written in shortest
// round-trip form; "nan" is accepted on read.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "warpcal/error.hpp"
#include "warpcal/grid_image.hpp"

namespace warpcal {

namespace fs = std::filesystem;

/// Channel-labelled raw grid data as stored on disk. Values may contain NaN
/// (masked cells); GridImage conversion happens after validation.
struct FieldData {
  int nx = 0;
  int ny = 0;
  std::vector<std::string> channel_names;
  std::vector<std::vector<double>> channels;  // each nx*ny, index j*nx + i
  nlohmann::json extra = nlohmann::json::object();  // e.g. physical extent

  int channel_index(const std::string& name) const {
    for (std::size_t c = 0; c < channel_names.size(); ++c)
      if (channel_names[c] == name) return static_cast<int>(c);
    return -1;
  }

  static FieldData from_image(const GridImage& img, std::vector<std::string> names = {}) {
    FieldData d;
    d.nx = img.nx();
    d.ny = img.ny();
    if (names.empty())
      for (int c = 0; c < img.channels(); ++c) names.push_back("c" + std::to_string(c));
    require(static_cast<int>(names.size()) == img.channels(), "FieldData: channel name count mismatch");
    d.channel_names = std::move(names);
    for (int c = 0; c < img.channels(); ++c) {
      std::vector<double> v(img.node_count());
      for (int j = 0; j < img.ny(); ++j)
        for (int i = 0; i < img.nx(); ++i) v[static_cast<std::size_t>(j) * img.nx() + i] = img.at(i, j, c);
      d.channels.push_back(std::move(v));
    }
    return d;
  }

  GridImage to_image() const {
    const int n = static_cast<int>(channels.size());
    std::vector<double> vals(static_cast<std::size_t>(nx) * ny * n);
    for (int c = 0; c < n; ++c)
      for (std::size_t k = 0; k < static_cast<std::size_t>(nx) * ny; ++k) vals[k * n + c] = channels[c][k];
    return GridImage(nx, ny, n, std::move(vals));
  }
};

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("cannot parse number '" + std::string(s) + "' in " + where);
  return v;
}

inline fs::path field_manifest_path(const fs::path& p) {
  return fs::is_directory(p) ? p / "field.json" : p;
}

inline void write_field(const fs::path& dir, const FieldData& d) {
  fs::create_directories(dir);
  nlohmann::ordered_json m;
  m["nx"] = d.nx;
  m["ny"] = d.ny;
  m["channels"] = d.channel_names.size();
  m["channel_names"] = d.channel_names;
  m["domain"] = "unit_square";
  for (auto it = d.extra.begin(); it != d.extra.end(); ++it) m[it.key()] = it.value();
  std::ofstream(dir / "field.json") << m.dump(2) << "\n";
  for (std::size_t c = 0; c < d.channels.size(); ++c) {
    std::ofstream out(dir / (d.channel_names[c] + ".csv"));
    std::string line;
    for (int j = 0; j < d.ny; ++j) {
      line.clear();
      for (int i = 0; i < d.nx; ++i) {
        if (i) line += ',';
        line += format_double(d.channels[c][static_cast<std::size_t>(j) * d.nx + i]);
      }
      out << line << '\n';
    }
  }
}

inline void write_field(const fs::path& dir, const GridImage& img, std::vector<std::string> names = {}) {
  write_field(dir, FieldData::from_image(img, std::move(names)));
}

inline FieldData read_field(const fs::path& path) {
  const fs::path manifest = field_manifest_path(path);
  std::ifstream in(manifest);
  if (!in) throw MissingArtifactError("field manifest not found: " + manifest.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed field manifest " + manifest.string() + ": " + e.what());
  }
  for (const char* key : {"nx", "ny", "channels", "channel_names"})
    if (!m.contains(key)) throw ValidationError("field manifest " + manifest.string() + " lacks key '" + key + "'");
  if (m.contains("domain") && m["domain"] != "unit_square")
    throw ValidationError("field manifest " + manifest.string() + ": unsupported domain");

  FieldData d;
  d.nx = m["nx"].get<int>();
  d.ny = m["ny"].get<int>();
  d.channel_names = m["channel_names"].get<std::vector<std::string>>();
  require(m["channels"].get<std::size_t>() == d.channel_names.size(),
          "field manifest " + manifest.string() + ": channels does not match channel_names");
  require(d.nx >= kMinGridSize && d.ny >= kMinGridSize, "field manifest " + manifest.string() + ": grid too small");
  for (auto it = m.begin(); it != m.end(); ++it)
    if (it.key() != "nx" && it.key() != "ny" && it.key() != "channels" && it.key() != "channel_names" &&
        it.key() != "domain")
      d.extra[it.key()] = it.value();

  const fs::path dir = manifest.parent_path();
  for (const auto& name : d.channel_names) {
    const fs::path file = dir / (name + ".csv");
    std::ifstream cin(file);
    if (!cin) throw MissingArtifactError("channel file not found: " + file.string());
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(d.nx) * d.ny);
    std::string line;
    int row = 0;
    while (std::getline(cin, line)) {
      if (line.empty() || line == "\r") continue;
      std::string_view sv(line);
      int col = 0;
      while (true) {
        const auto comma = sv.find(',');
        vals.push_back(parse_double(sv.substr(0, comma), file.string() + " row " + std::to_string(row)));
        ++col;
        if (comma == std::string_view::npos) break;
        sv.remove_prefix(comma + 1);
      }
      if (col != d.nx)
        throw ValidationError(file.string() + " row " + std::to_string(row) + " has " + std::to_string(col) +
                              " columns, expected " + std::to_string(d.nx));
      ++row;
    }
    if (row != d.ny)
      throw ValidationError(file.string() + " has " + std::to_string(row) + " rows, expected " + std::to_string(d.ny));
    d.channels.push_back(std::move(vals));
  }
  return d;
}

inline GridImage read_image(const fs::path& path) { return read_field(path).to_image(); }

}  // namespace warpcal
