#include "raddet/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace raddet {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

void write_bytes(const fs::path& path, const std::vector<float>& data) {
  std::vector<std::uint32_t> words(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(data[i]));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw DataError("write failed for " + path.string());
}

std::string frame_id(int seq, int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%04d_f%02d", seq, t);
  return buf;
}

json geometry_to_json(const RadarGeometry& g) {
  return {{"r_bins", g.r_bins},   {"a_bins", g.a_bins},   {"d_bins", g.d_bins},
          {"r_max_m", g.r_max_m}, {"fov_deg", g.fov_deg}, {"v_max_mps", g.v_max_mps}};
}

RadarGeometry geometry_from_json(const json& j) {
  RadarGeometry g;
  g.r_bins = j.at("r_bins").get<int>();
  g.a_bins = j.at("a_bins").get<int>();
  g.d_bins = j.at("d_bins").get<int>();
  g.r_max_m = j.at("r_max_m").get<double>();
  g.fov_deg = j.at("fov_deg").get<double>();
  g.v_max_mps = j.at("v_max_mps").get<double>();
  return g;
}

json annotation_to_json(const Annotation& a) {
  return {{"class_id", a.class_id},     {"center_bin_r", a.center_r}, {"center_bin_a", a.center_a},
          {"box_ra", a.box_ra},         {"box_rd", a.box_rd},         {"heading_rad", a.heading_rad}};
}

Annotation annotation_from_json(const json& j) {
  Annotation a;
  a.class_id = j.at("class_id").get<int>();
  a.center_r = j.at("center_bin_r").get<double>();
  a.center_a = j.at("center_bin_a").get<double>();
  a.box_ra = j.at("box_ra").get<BinBox>();
  a.box_rd = j.at("box_rd").get<BinBox>();
  a.heading_rad = j.at("heading_rad").get<double>();
  return a;
}

const char* kTargetNames[] = {"heatmap", "offset", "offset_mask", "heading", "heading_mask"};

std::vector<double> widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

void write_f32(const fs::path& path, const std::vector<float>& data) { write_bytes(path, data); }

void write_f32(const fs::path& path, const std::vector<double>& data) {
  write_bytes(path, std::vector<float>(data.begin(), data.end()));
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("missing file " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected_count * 4) {
    throw DataError(path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected_count * 4) + " (" + std::to_string(expected_count) + " floats)");
  }
  in.seekg(0);
  std::vector<std::uint32_t> words(expected_count);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("read failed for " + path.string());
  std::vector<float> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) out[i] = std::bit_cast<float>(to_le(words[i]));
  return out;
}

Manifest read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  Manifest m;
  std::string where = "manifest";
  try {
    m.version = j.at("version").get<int>();
    m.geometry = geometry_from_json(j.at("geometry"));
    m.seed = j.value("seed", std::uint64_t{0});
    for (auto& [name, ids] : j.at("splits").items()) m.splits[name] = ids.get<std::vector<int>>();
    if (j.contains("labels")) {
      LabelConfig lc;
      const auto& l = j["labels"];
      lc.mode = parse_label_mode(l.at("mode").get<std::string>());
      lc.mask_threshold = l.at("mask_threshold").get<double>();
      lc.offset_patch = l.at("offset_patch").get<int>();
      m.labels = lc;
    }
    for (const auto& fj : j.at("frames")) {
      FrameRecord r;
      r.id = fj.at("id").get<std::string>();
      where = "frame " + r.id;
      r.sequence = fj.at("sequence").get<int>();
      r.frame_index = fj.at("frame_index").get<int>();
      for (const auto& aj : fj.at("annotations")) r.annotations.push_back(annotation_from_json(aj));
      m.frames.push_back(std::move(r));
    }
    m.geometry.validate();
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + ", " + where + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError("manifest " + path.string() + ", " + where + ": " + e.what());
  }
  return m;
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["geometry"] = geometry_to_json(m.geometry);
  j["splits"] = json::object();
  for (const auto& [name, ids] : m.splits) j["splits"][name] = ids;
  if (m.labels) {
    j["labels"] = {{"mode", to_string(m.labels->mode)},
                   {"mask_threshold", m.labels->mask_threshold},
                   {"offset_patch", m.labels->offset_patch}};
  }
  j["frames"] = json::array();
  for (const auto& r : m.frames) {
    json fj = {{"id", r.id}, {"sequence", r.sequence}, {"frame_index", r.frame_index}};
    fj["files"] = {{"ra", r.id + "_ra.f32"}, {"rd", r.id + "_rd.f32"}, {"ad", r.id + "_ad.f32"}};
    if (m.labels) {
      json tj;
      for (const char* name : kTargetNames) tj[name] = r.id + "_" + name + ".f32";
      fj["targets"] = tj;
    }
    fj["annotations"] = json::array();
    for (const auto& a : r.annotations) fj["annotations"].push_back(annotation_to_json(a));
    j["frames"].push_back(std::move(fj));
  }
  const auto path = dir / "manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

std::map<std::string, std::vector<int>> split_sequences(int n, std::uint64_t seed) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  Rng rng(Rng::mix(seed ^ 0x73706c6974ULL));
  for (int i = n - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  const int n_train = static_cast<int>(std::lround(0.7 * n));
  const int n_val = static_cast<int>(std::lround(0.1 * n));
  std::map<std::string, std::vector<int>> out;
  out["train"].assign(ids.begin(), ids.begin() + n_train);
  out["val"].assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  out["test"].assign(ids.begin() + n_train + n_val, ids.end());
  for (auto& [_, v] : out) std::sort(v.begin(), v.end());
  return out;
}

void generate_dataset(const SimConfig& config, const fs::path& dir) {
  if (config.n_sequences < 10) {
    throw std::invalid_argument("generate_dataset: need at least 10 sequences, got " +
                                std::to_string(config.n_sequences));
  }
  config.geometry.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create dataset directory " + dir.string());

  Manifest m;
  m.geometry = config.geometry;
  m.seed = config.seed;
  m.splits = split_sequences(config.n_sequences, config.seed);
  for (int s = 0; s < config.n_sequences; ++s) {
    Rng rng(Rng::mix(config.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(s)));
    const auto scenes = simulate_sequence(config, rng);
    for (int t = 0; t < static_cast<int>(scenes.size()); ++t) {
      const auto [frame, anns] = render_frame(scenes[t], config.geometry, config.noise_sigma, rng.derive(t), t);
      FrameRecord r;
      r.id = frame_id(s, t);
      r.sequence = s;
      r.frame_index = t;
      r.annotations = anns;
      write_f32(dir / (r.id + "_ra.f32"), frame.ra);
      write_f32(dir / (r.id + "_rd.f32"), frame.rd);
      write_f32(dir / (r.id + "_ad.f32"), frame.ad);
      m.frames.push_back(std::move(r));
    }
  }
  write_manifest(dir, m);
}

Dataset::Dataset(fs::path dir) : dir_(std::move(dir)), manifest_(read_manifest(dir_)) {
  for (std::size_t i = 0; i < manifest_.frames.size(); ++i) {
    const auto& r = manifest_.frames[i];
    if (!by_seq_frame_.emplace(std::make_pair(r.sequence, r.frame_index), i).second) {
      throw DataError("manifest: frame " + r.id + " duplicates sequence " + std::to_string(r.sequence) +
                      " frame " + std::to_string(r.frame_index));
    }
  }
}

std::vector<std::size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  if (split == "all") {
    for (std::size_t i = 0; i < manifest_.frames.size(); ++i) out.push_back(i);
    return out;
  }
  const auto it = manifest_.splits.find(split);
  if (it == manifest_.splits.end()) throw DataError("dataset has no split named '" + split + "'");
  for (std::size_t i = 0; i < manifest_.frames.size(); ++i) {
    const int s = manifest_.frames[i].sequence;
    if (std::find(it->second.begin(), it->second.end(), s) != it->second.end()) out.push_back(i);
  }
  return out;
}

RadarFrame Dataset::load_frame(std::size_t i) const {
  const auto& r = record(i);
  const auto& g = manifest_.geometry;
  RadarFrame f;
  f.geometry = g;
  f.frame_index = r.frame_index;
  try {
    f.ra = read_f32(dir_ / (r.id + "_ra.f32"), static_cast<std::size_t>(g.r_bins) * g.a_bins);
    f.rd = read_f32(dir_ / (r.id + "_rd.f32"), static_cast<std::size_t>(g.r_bins) * g.d_bins);
    f.ad = read_f32(dir_ / (r.id + "_ad.f32"), static_cast<std::size_t>(g.a_bins) * g.d_bins);
  } catch (const DataError& e) {
    throw DataError("frame " + r.id + ": " + e.what());
  }
  return f;
}

TargetMaps Dataset::load_targets(std::size_t i) const {
  const auto& r = record(i);
  if (!manifest_.labels) throw DataError("dataset has no cached targets; run the label step first");
  const int R = manifest_.geometry.r_bins, A = manifest_.geometry.a_bins;
  TargetMaps t = empty_targets(R, A);
  std::vector<double>* bufs[] = {&t.heatmap, &t.offset, &t.offset_mask, &t.heading, &t.heading_mask};
  try {
    for (int k = 0; k < 5; ++k) {
      *bufs[k] = widen(read_f32(dir_ / (r.id + "_" + kTargetNames[k] + ".f32"), bufs[k]->size()));
    }
  } catch (const DataError& e) {
    throw DataError("frame " + r.id + ": " + e.what());
  }
  return t;
}

std::vector<RadarFrame> Dataset::load_stack(std::size_t i, int t_frames) const {
  const auto& r = record(i);
  std::vector<RadarFrame> out;
  for (int k = t_frames - 1; k >= 0; --k) {
    int fi = std::max(0, r.frame_index - k);
    auto it = by_seq_frame_.find({r.sequence, fi});
    while (it == by_seq_frame_.end() && fi < r.frame_index) it = by_seq_frame_.find({r.sequence, ++fi});
    out.push_back(load_frame(it == by_seq_frame_.end() ? i : it->second));
  }
  return out;
}

void Dataset::write_targets(const LabelConfig& config) {
  for (std::size_t i = 0; i < manifest_.frames.size(); ++i) {
    const auto& r = manifest_.frames[i];
    const auto t = make_targets(load_frame(i), r.annotations, config);
    const std::vector<double>* bufs[] = {&t.heatmap, &t.offset, &t.offset_mask, &t.heading, &t.heading_mask};
    for (int k = 0; k < 5; ++k) write_f32(dir_ / (r.id + "_" + kTargetNames[k] + ".f32"), *bufs[k]);
  }
  manifest_.labels = config;
  write_manifest(dir_, manifest_);
}

}  // namespace raddet
