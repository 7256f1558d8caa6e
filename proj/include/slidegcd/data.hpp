#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slidegcd/matrix.hpp"

namespace slidegcd {

// One slide: its patch-embedding matrix (M × D) and label.
struct PatchBag {
  std::string slide_id;
  MatrixF embeddings;
  int label = 0;

  friend bool operator==(const PatchBag&, const PatchBag&) = default;
};

struct Dataset {
  std::vector<PatchBag> bags;
  int num_classes = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  std::size_t patch_dim() const { return bags.empty() ? 0 : bags.front().embeddings.cols(); }

  // Throws InputError if splits overlap, miss a bag, or train lacks a class.
  void validate() const;
};

struct SyntheticSpec {
  int num_classes = 2;
  int slides_per_class = 150;
  int min_patches = 16;
  int max_patches = 48;
  int patch_dim = 32;
  // Norm of each class-specific (and the background) mixture mean.
  double class_separation = 4.0;
  // Isotropic noise standard deviation shared by every component.
  double noise_scale = 1.0;
  // Fraction of each bag's patches drawn from its class component.
  double signal_fraction = 0.5;
  int val_per_class = 0;
  int test_per_class = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

inline constexpr char kBagMagic[4] = {'S', 'G', 'C', 'D'};
inline constexpr std::uint32_t kBagVersion = 1;
inline constexpr std::size_t kBagHeaderBytes = 16;

// Layout: "SGCD", u32 version, u32 M, u32 D, then M·D f32, all little-endian.
void write_bag_file(const PatchBag& bag, const std::filesystem::path& path);

// Slide id defaults to the file stem; the label is not stored in the file.
PatchBag load_bag_file(const std::filesystem::path& path, std::string slide_id = {},
                       int label = 0);

struct ManifestRecord {
  std::string slide_id;
  std::string path;
  int label = 0;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

// Tab-separated `slide_id<TAB>path<TAB>label`; '#' lines and blank lines skipped.
std::vector<ManifestRecord> parse_manifest(const std::filesystem::path& path);

void write_manifest(const std::vector<ManifestRecord>& records,
                    const std::filesystem::path& path);

// Relative bag paths are resolved against the manifest's directory.
std::vector<PatchBag> load_manifest_bags(const std::filesystem::path& manifest);

// Builds a dataset from per-split manifests (val may be empty).
Dataset dataset_from_manifests(const std::filesystem::path& train,
                               const std::filesystem::path& val,
                               const std::filesystem::path& test, int num_classes);

}  // namespace slidegcd
