#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "racanet/data/scene.hpp"
#include "racanet/io/png_io.hpp"

namespace racanet {

namespace fs = std::filesystem;

// On-disk sample format: <id>_rgb.png (8-bit, 3-channel), <id>_t.png (8-bit,
// 1-channel), <id>.json with {"points": [[x,y],...]} and optional "meta".

inline std::string sample_id(int index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

inline void write_sample(const std::string& dir, const std::string& id, const SamplePair& s) {
  write_png(dir + "/" + id + "_rgb.png", s.rgb);
  write_png(dir + "/" + id + "_t.png", s.thermal);
  json j;
  j["points"] = json::array();
  for (const auto& p : s.points) j["points"].push_back({p.x, p.y});
  if (!s.meta.is_null()) j["meta"] = s.meta;
  std::ofstream f(dir + "/" + id + ".json", std::ios::trunc);
  if (!f) throw DataError("malformed-file", "cannot write annotation for " + id);
  f << j.dump(2) << "\n";
}

inline void write_dataset(const std::string& dir, const std::vector<SamplePair>& samples) {
  fs::create_directories(dir);
  for (size_t i = 0; i < samples.size(); ++i) write_sample(dir, sample_id(static_cast<int>(i)), samples[i]);
}

inline SamplePair read_sample(const std::string& dir, const std::string& id) {
  SamplePair s;
  std::string rgb_path = dir + "/" + id + "_rgb.png";
  std::string t_path = dir + "/" + id + "_t.png";
  std::string ann_path = dir + "/" + id + ".json";
  if (!fs::exists(ann_path)) throw DataError("missing-annotation", "sample " + id);
  s.rgb = read_png(rgb_path);
  if (s.rgb.dim(0) != 3) throw DataError("malformed-file", rgb_path + " is not 3-channel");
  if (!fs::exists(t_path)) throw DataError("malformed-file", "missing thermal image for " + id);
  s.thermal = read_png(t_path);
  if (s.thermal.dim(0) != 1) throw DataError("malformed-file", t_path + " is not 1-channel");
  if (s.thermal.dim(1) != s.rgb.dim(1) || s.thermal.dim(2) != s.rgb.dim(2))
    throw DataError("malformed-file", "mismatched image sizes for sample " + id);

  std::ifstream f(ann_path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("malformed-file", ann_path + ": " + e.what());
  }
  if (!j.contains("points") || !j["points"].is_array())
    throw DataError("malformed-file", ann_path + ": missing points array");
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 2) throw DataError("malformed-file", ann_path + ": bad point");
    double x = p[0].get<double>(), y = p[1].get<double>();
    if (x < 0 || x >= s.rgb.dim(2) || y < 0 || y >= s.rgb.dim(1))
      throw DataError("malformed-file", ann_path + ": point out of bounds");
    s.points.push_back({x, y});
  }
  if (j.contains("meta")) s.meta = j["meta"];
  return s;
}

inline std::vector<SamplePair> read_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset-missing", dir);
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string name = e.path().filename().string();
    const std::string suffix = "_rgb.png";
    if (name.size() > suffix.size() && name.substr(name.size() - suffix.size()) == suffix)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  std::vector<SamplePair> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(read_sample(dir, id));
  return out;
}

}  // namespace racanet
