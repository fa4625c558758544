#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "teddy/tensor.hpp"

namespace teddy {

// An image classification dataset held in memory. Images are channels-first
// doubles in [0,1]; per-channel normalization is a model concern and never
// happens here.
struct LabeledDataset {
  Tensor images;            // [N, C, H, W]
  std::vector<int> labels;  // [N], values in [0, class_count)
  int class_count = 0;
  std::string name;

  Index size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  Shape image_shape() const { return {images.shape[1], images.shape[2], images.shape[3]}; }

  void validate() const;
  std::vector<std::vector<Index>> class_indices() const;
};

// The artifact's product: learnable images with fixed hard labels and, after
// relabeling, soft labels.
struct SyntheticDataset {
  Tensor images;                      // [N_s, C, H, W]
  std::vector<int> hard_labels;       // [N_s], class-major: index = class * ipc + i
  std::optional<Tensor> soft_labels;  // [N_s, class_count]
  int ipc = 0;
  int class_count = 0;

  Index size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  void validate() const;
};

enum class InitMode { noise, real };

InitMode parse_init_mode(const std::string& s);
std::string init_mode_name(InitMode mode);

// Loads a dataset by id from a root directory. Known ids:
//   cifar10-train / cifar10-test   standard CIFAR-10 binary batches under <root>/cifar10/
//   toy-2class                     8-image linearly separable fixture
//   gauss-grid-4                   4-class Gaussians-on-grid fixture, 200 images
//   desk10-train / desk10-test     10-class procedural desk benchmark, 5000 / 1000 images
// Fixture ids materialize deterministically under <root>/<id>/ on first use;
// CIFAR files must already exist.
LabeledDataset load_dataset(const std::string& name, const std::filesystem::path& root);

// Writes <dir>/data.tdy plus the sidecar manifest.json
// {name, class_count, shape, checksum}; pixels stored as u8.
void save_dataset_fixture(const LabeledDataset& ds, const std::filesystem::path& dir);
LabeledDataset load_dataset_fixture(const std::filesystem::path& dir);

// Per-class random subsampling: class k keeps ceil(frac_k * n_k) samples with
// frac_k ~ Uniform[min_frac, max_frac]; sample membership changes, pixel
// values and relative order never do.
LabeledDataset subsample_imbalanced(const LabeledDataset& ds, double min_frac, double max_frac,
                                    std::uint64_t seed);

// Balanced synthetic initialization: ipc images per class, hard labels
// class-major, no soft labels. Noise mode draws pixels from Uniform[0,1];
// real mode copies ipc distinct real samples per class chosen uniformly.
SyntheticDataset init_synthetic(const LabeledDataset& ds, int ipc, InitMode mode, std::uint64_t seed);

// Synthetic set on disk: data.tdy (images f64, hard_labels i64, optional
// soft_labels f64) + manifest.json. `extra_manifest` merges additional fields
// (pool checksum, config hash, loss history path) into the manifest.
void save_synthetic(const SyntheticDataset& synth, const std::filesystem::path& dir,
                    const std::string& extra_manifest_json = "{}");
SyntheticDataset load_synthetic(const std::filesystem::path& dir);
std::string load_synthetic_manifest(const std::filesystem::path& dir);

// Deterministic fixture generators (exposed for tests; load_dataset calls
// these on first use of a fixture id).
LabeledDataset make_toy_2class();
LabeledDataset make_gauss_grid_4();
LabeledDataset make_desk10(bool train);
// Ad hoc Gaussians-on-grid generator for tiny theory fixtures.
LabeledDataset make_blob_dataset(int class_count, Index per_class, Index channels, Index height,
                                 Index width, double noise_sigma, std::uint64_t seed,
                                 const std::string& name = "blobs");

}  // namespace teddy
