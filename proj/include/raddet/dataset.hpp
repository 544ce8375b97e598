#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raddet/labeling.hpp"
#include "raddet/scene.hpp"

namespace raddet {

/// Missing, truncated or inconsistent data on disk.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FrameRecord {
  std::string id;
  int sequence = 0;
  int frame_index = 0;
  std::vector<Annotation> annotations;
};

struct Manifest {
  int version = 1;
  RadarGeometry geometry;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<int>> splits;  // split name -> sequence ids
  std::vector<FrameRecord> frames;
  std::optional<LabelConfig> labels;  // set once targets are cached
};

// Binary helpers for headerless little-endian float32 files.
void write_f32(const std::filesystem::path& path, const std::vector<float>& data);
void write_f32(const std::filesystem::path& path, const std::vector<double>& data);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

Manifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);

/// Splits sequence ids 70/10/20 after a seeded shuffle.
std::map<std::string, std::vector<int>> split_sequences(int n_sequences, std::uint64_t seed);

/// Simulates `config.n_sequences` sequences and writes them to `dir`.
void generate_dataset(const SimConfig& config, const std::filesystem::path& dir);

/// Random-access view of a dataset directory. Frames and targets are read
/// from disk on demand.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path dir);

  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  const RadarGeometry& geometry() const { return manifest_.geometry; }

  /// Indices into manifest().frames belonging to `split` ("all" for every frame).
  std::vector<std::size_t> split_indices(const std::string& split) const;

  std::size_t size() const { return manifest_.frames.size(); }
  const FrameRecord& record(std::size_t i) const { return manifest_.frames.at(i); }

  RadarFrame load_frame(std::size_t i) const;
  bool has_targets() const { return manifest_.labels.has_value(); }
  TargetMaps load_targets(std::size_t i) const;

  /// Frames t-T+1..t of the record's sequence, oldest first. Missing early
  /// frames repeat the first available one.
  std::vector<RadarFrame> load_stack(std::size_t i, int t_frames) const;

  /// Computes targets for every frame and records them in the manifest.
  void write_targets(const LabelConfig& config);

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
  std::map<std::pair<int, int>, std::size_t> by_seq_frame_;
};

}  // namespace raddet
