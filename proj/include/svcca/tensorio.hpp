#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "svcca/types.hpp"

namespace svcca::tensorio {

inline constexpr std::array<char, 8> kMagic = {'S', 'V', 'C', 'C', 'A', 'D', 'M', 'P'};
inline constexpr std::uint16_t kVersion = 1;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };
enum class Kind : std::uint8_t { dense = 0, conv = 1 };

/// One layer's activations over the probe set.
///
/// Dense dumps have dims (m, d); conv dumps (h, w, c, d). Values are stored
/// row-major with datapoints varying fastest. f32 dumps keep their values
/// as doubles in memory; every value must be exactly representable in f32.
struct ActivationDump {
  Dtype dtype = Dtype::f64;
  Kind kind = Kind::dense;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
  std::string layer_name;
  std::optional<std::uint64_t> step;

  std::uint64_t datapoints() const { return dims.empty() ? 0 : dims.back(); }
  std::uint64_t element_count() const;

  bool operator==(const ActivationDump&) const = default;
};

/// Throws FormatError describing the first violated invariant.
void validate(const ActivationDump& dump);

std::size_t header_size(const ActivationDump& dump);

void write_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump read_dump(const std::filesystem::path& path);

std::vector<std::uint8_t> encode(const ActivationDump& dump);
ActivationDump decode(const std::vector<std::uint8_t>& bytes);

/// Dense dump from an m x d matrix. f32 rounds each value to the nearest float.
ActivationDump make_dense(const MatrixXd& acts, std::string name, Dtype dtype = Dtype::f64,
                          std::optional<std::uint64_t> step = std::nullopt);

/// Dense m x d view of a dense dump.
MatrixXd dense_matrix(const ActivationDump& dump);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct LayerRef {
  std::string name;
  std::filesystem::path path;  ///< relative paths resolve against the manifest directory
  bool operator==(const LayerRef&) const = default;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<LayerRef> layers;
  bool operator==(const Checkpoint&) const = default;
};

struct Manifest {
  std::string model_id;
  std::string dataset_id;
  std::uint64_t datapoint_count = 0;
  std::vector<Checkpoint> checkpoints;
  bool operator==(const Manifest&) const = default;
};

/// Parses and checks schema-level invariants (steps strictly increasing).
Manifest parse_manifest(const std::string& json_text);
std::string serialize_manifest(const Manifest& manifest);

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Every referenced dump exists and its datapoint count matches the manifest.
void validate_manifest_files(const Manifest& manifest, const std::filesystem::path& base_dir);

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::filesystem::path& p);

}  // namespace svcca::tensorio
