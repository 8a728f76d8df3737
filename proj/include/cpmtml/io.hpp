#pragma once

// On-disk formats. Binary files are little-endian regardless of host.
//
// Feature file:  "FVEC" | u32 version | u32 count | u32 dim | u8 dtype (0=f32, 1=f64) | count*dim values
// Model file:    "CPML" | u32 version | u8 variant | u32 T | u32 d | u32 D | f64 gamma
//                | f64[T] biases | f64[d*D] L0 | CP-mtML: T x f64[d*D] Lt | mtLMCA: T x f64[d*d] Rt
// Labels:        text, one integer per line, aligned with feature rows
// Pairs:         text lines "i,j,y" with y in {-1, 1}

#include "cpmtml/core.hpp"

#include <filesystem>

namespace cpmtml {

inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class Dtype : std::uint8_t { kF32 = 0, kF64 = 1 };

struct FeatureHeader {
  std::uint32_t version = kFeatureFormatVersion;
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  Dtype dtype = Dtype::kF64;
};

void save_features(const FeatureSet& set, const std::filesystem::path& path, Dtype dtype = Dtype::kF64);
FeatureSet load_features(const std::filesystem::path& path);
FeatureHeader read_feature_header(const std::filesystem::path& path);

void save_labels(const Labels& labels, const std::filesystem::path& path);
Labels load_labels(const std::filesystem::path& path);

void save_pairs(const PairSet& ps, const std::filesystem::path& path);
PairSet load_pairs(const std::filesystem::path& path);

void save_model(const CoupledModel& m, const std::filesystem::path& path);
CoupledModel load_model(const std::filesystem::path& path);

/// In-memory forms of the binary formats.
std::string encode_features(const FeatureSet& set, Dtype dtype);
FeatureSet decode_features(std::string_view bytes);
std::string encode_model(const CoupledModel& m);
CoupledModel decode_model(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace cpmtml
