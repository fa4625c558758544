#include "teddy/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <numeric>

#include <nlohmann/json.hpp>

#include "teddy/container.hpp"
#include "teddy/rng.hpp"

namespace teddy {

using nlohmann::json;

void LabeledDataset::validate() const {
  require(images.rank() == 4, ErrorCode::shape_mismatch, "dataset images must be [N,C,H,W]");
  require(size() > 0, ErrorCode::invalid_argument, "dataset is empty");
  require(static_cast<Index>(labels.size()) == size(), ErrorCode::shape_mismatch,
          "label count does not match image count");
  for (int label : labels)
    require(label >= 0 && label < class_count, ErrorCode::corrupt_record,
            "label out of range for class_count");
}

std::vector<std::vector<Index>> LabeledDataset::class_indices() const {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(class_count));
  for (Index i = 0; i < size(); ++i) out[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  return out;
}

void SyntheticDataset::validate() const {
  require(images.rank() == 4, ErrorCode::shape_mismatch, "synthetic images must be [N,C,H,W]");
  require(size() == static_cast<Index>(ipc) * class_count, ErrorCode::invalid_argument,
          "synthetic set must hold exactly ipc images per class");
  require(images.all_finite(), ErrorCode::nan_in_activation, "synthetic images must be finite");
  std::vector<Index> counts(static_cast<std::size_t>(class_count), 0);
  for (int label : hard_labels) {
    require(label >= 0 && label < class_count, ErrorCode::corrupt_record, "hard label out of range");
    counts[static_cast<std::size_t>(label)]++;
  }
  for (Index c : counts)
    require(c == ipc, ErrorCode::invalid_argument, "hard labels are not balanced at ipc per class");
  if (soft_labels) {
    require(soft_labels->shape == Shape{size(), class_count}, ErrorCode::shape_mismatch,
            "soft labels must be [N_s, class_count]");
    for (Index i = 0; i < size(); ++i) {
      double row_sum = 0.0;
      for (Index c = 0; c < class_count; ++c) {
        double p = soft_labels->at2(i, c);
        require(p >= 0.0, ErrorCode::invalid_argument, "soft label entries must be nonnegative");
        row_sum += p;
      }
      require(std::abs(row_sum - 1.0) <= 1e-5, ErrorCode::invalid_argument,
              "soft label rows must sum to 1");
    }
  }
}

InitMode parse_init_mode(const std::string& s) {
  if (s == "noise") return InitMode::noise;
  if (s == "real") return InitMode::real;
  fail(ErrorCode::unknown_mode, "init mode must be noise or real, got " + s);
}

std::string init_mode_name(InitMode mode) { return mode == InitMode::noise ? "noise" : "real"; }

namespace {

// ----------------------------------------------------------------- fixtures

void add_blob(Tensor& images, Index n, double cx, double cy, double sigma, const double color[3]) {
  const Index H = images.shape[2], W = images.shape[3];
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Index h = 0; h < H; ++h) {
    for (Index w = 0; w < W; ++w) {
      double d2 = (h - cy) * (h - cy) + (w - cx) * (w - cx);
      double g = std::exp(-d2 * inv);
      if (g < 1e-4) continue;
      for (Index c = 0; c < 3; ++c) {
        double& px = images.at4(n, c, h, w);
        px += g * color[c];
      }
    }
  }
}

void clamp01(Tensor& t) {
  for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
}

struct Desk10Class {
  double blob_cx[3], blob_cy[3], blob_sigma[3];
  double blob_color[3][3];
  double stripe_theta, stripe_freq, stripe_amp;
  double stripe_color[3];
};

Desk10Class desk10_class_params(int k) {
  Rng rng = make_rng(derive_seed(0xDE5C10, "class", static_cast<std::uint64_t>(k)));
  Desk10Class p{};
  // Blob centers on a coarse grid so layouts differ structurally per class.
  std::vector<int> slots(16);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  for (int b = 0; b < 3; ++b) {
    int slot = slots[static_cast<std::size_t>(b)];
    p.blob_cx[b] = 4.0 + 8.0 * (slot % 4) + uniform(rng, -1.5, 1.5);
    p.blob_cy[b] = 4.0 + 8.0 * (slot / 4) + uniform(rng, -1.5, 1.5);
    p.blob_sigma[b] = uniform(rng, 2.2, 4.5);
    for (int c = 0; c < 3; ++c) p.blob_color[b][c] = uniform(rng, 0.15, 0.9);
  }
  p.stripe_theta = uniform(rng, 0.0, 3.14159265358979);
  p.stripe_freq = uniform(rng, 0.18, 0.55);
  p.stripe_amp = uniform(rng, 0.10, 0.22);
  for (int c = 0; c < 3; ++c) p.stripe_color[c] = uniform(rng, -1.0, 1.0);
  return p;
}

void render_desk10_sample(Tensor& images, Index n, int k, Rng& rng) {
  const Index H = images.shape[2], W = images.shape[3];
  Desk10Class p = desk10_class_params(k);

  // Background: per-channel DC plus two smooth sinusoidal fields.
  double dc[3];
  for (int c = 0; c < 3; ++c) dc[c] = uniform(rng, 0.15, 0.45);
  double bg_theta[2], bg_freq[2], bg_phase[2], bg_amp[2];
  for (int s = 0; s < 2; ++s) {
    bg_theta[s] = uniform(rng, 0.0, 3.14159265358979);
    bg_freq[s] = uniform(rng, 0.04, 0.16);
    bg_phase[s] = uniform(rng, 0.0, 6.28318530717959);
    bg_amp[s] = uniform(rng, 0.02, 0.09);
  }
  double stripe_phase = uniform(rng, 0.0, 6.28318530717959);
  double brightness = uniform(rng, 0.85, 1.15);

  for (Index h = 0; h < H; ++h) {
    for (Index w = 0; w < W; ++w) {
      double bg = 0.0;
      for (int s = 0; s < 2; ++s) {
        double u = std::cos(bg_theta[s]) * w + std::sin(bg_theta[s]) * h;
        bg += bg_amp[s] * std::sin(bg_freq[s] * u * 6.28318530717959 + bg_phase[s]);
      }
      double su = std::cos(p.stripe_theta) * w + std::sin(p.stripe_theta) * h;
      double stripe = p.stripe_amp * std::sin(p.stripe_freq * su * 6.28318530717959 + stripe_phase);
      for (Index c = 0; c < 3; ++c)
        images.at4(n, c, h, w) = dc[c] + bg + stripe * p.stripe_color[c];
    }
  }

  for (int b = 0; b < 3; ++b) {
    double jitter_x = normal(rng, 0.0, 2.5);
    double jitter_y = normal(rng, 0.0, 2.5);
    double color[3];
    for (int c = 0; c < 3; ++c) color[c] = p.blob_color[b][c] + uniform(rng, -0.12, 0.12);
    add_blob(images, n, p.blob_cx[b] + jitter_x, p.blob_cy[b] + jitter_y, p.blob_sigma[b], color);
  }

  for (Index c = 0; c < 3; ++c)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) {
        double& px = images.at4(n, c, h, w);
        px = px * brightness + normal(rng, 0.0, 0.06);
      }
}

}  // namespace

LabeledDataset make_toy_2class() {
  const Index N = 8, C = 3, H = 32, W = 32;
  LabeledDataset ds;
  ds.name = "toy-2class";
  ds.class_count = 2;
  ds.images = Tensor({N, C, H, W});
  Rng rng = make_rng(derive_seed(0x70F1, "toy-2class"));
  for (Index n = 0; n < N; ++n) {
    int label = static_cast<int>(n % 2);
    ds.labels.push_back(label);
    double hi = uniform(rng, 0.82, 0.95), lo = uniform(rng, 0.05, 0.18);
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w) {
          bool left = w < W / 2;
          double base = (left == (label == 0)) ? hi : lo;
          ds.images.at4(n, c, h, w) = std::clamp(base + normal(rng, 0.0, 0.02), 0.0, 1.0);
        }
  }
  return ds;
}

LabeledDataset make_gauss_grid_4() {
  const int classes = 4;
  const Index per_class = 50, C = 3, H = 32, W = 32;
  LabeledDataset ds;
  ds.name = "gauss-grid-4";
  ds.class_count = classes;
  ds.images = Tensor({per_class * classes, C, H, W});
  const double centers[4][2] = {{8, 8}, {8, 24}, {24, 8}, {24, 24}};
  const double colors[4][3] = {{0.9, 0.2, 0.2}, {0.2, 0.9, 0.2}, {0.2, 0.3, 0.9}, {0.8, 0.8, 0.2}};
  Rng rng = make_rng(derive_seed(0x6A55, "gauss-grid-4"));
  Index n = 0;
  for (int k = 0; k < classes; ++k) {
    for (Index i = 0; i < per_class; ++i, ++n) {
      ds.labels.push_back(k);
      for (double& v : std::span(ds.images.ptr() + n * C * H * W, static_cast<std::size_t>(C * H * W)))
        v = 0.2 + normal(rng, 0.0, 0.08);
      add_blob(ds.images, n, centers[k][0] + normal(rng, 0.0, 1.5), centers[k][1] + normal(rng, 0.0, 1.5),
               4.0, colors[k]);
    }
  }
  clamp01(ds.images);
  return ds;
}

LabeledDataset make_desk10(bool train) {
  const int classes = 10;
  const Index per_class = train ? 500 : 100;
  const Index C = 3, H = 32, W = 32;
  LabeledDataset ds;
  ds.name = train ? "desk10-train" : "desk10-test";
  ds.class_count = classes;
  ds.images = Tensor({per_class * classes, C, H, W});
  Index n = 0;
  for (int k = 0; k < classes; ++k) {
    for (Index i = 0; i < per_class; ++i, ++n) {
      ds.labels.push_back(k);
      Rng rng = make_rng(derive_seed(train ? 0xD35C : 0xD35D, "sample", static_cast<std::uint64_t>(n)));
      render_desk10_sample(ds.images, n, k, rng);
    }
  }
  clamp01(ds.images);
  return ds;
}

LabeledDataset make_blob_dataset(int class_count, Index per_class, Index channels, Index height,
                                 Index width, double noise_sigma, std::uint64_t seed,
                                 const std::string& name) {
  LabeledDataset ds;
  ds.name = name;
  ds.class_count = class_count;
  ds.images = Tensor({per_class * class_count, channels, height, width});
  Rng class_rng = make_rng(derive_seed(seed, "blob-classes"));
  std::vector<std::array<double, 2>> centers;
  std::vector<std::array<double, 3>> colors;
  for (int k = 0; k < class_count; ++k) {
    centers.push_back({uniform(class_rng, width * 0.2, width * 0.8),
                       uniform(class_rng, height * 0.2, height * 0.8)});
    colors.push_back({uniform(class_rng, 0.3, 1.0), uniform(class_rng, 0.3, 1.0),
                      uniform(class_rng, 0.3, 1.0)});
  }
  Rng rng = make_rng(derive_seed(seed, "blob-samples"));
  Index n = 0;
  for (int k = 0; k < class_count; ++k) {
    for (Index i = 0; i < per_class; ++i, ++n) {
      ds.labels.push_back(k);
      for (double& v : std::span(ds.images.ptr() + n * channels * height * width,
                                 static_cast<std::size_t>(channels * height * width)))
        v = 0.2 + normal(rng, 0.0, noise_sigma);
      double color[3] = {colors[static_cast<std::size_t>(k)][0], colors[static_cast<std::size_t>(k)][1],
                         colors[static_cast<std::size_t>(k)][2]};
      if (channels < 3) color[1] = color[2] = color[0];
      double cx = centers[static_cast<std::size_t>(k)][0] + normal(rng, 0.0, 1.0);
      double cyv = centers[static_cast<std::size_t>(k)][1] + normal(rng, 0.0, 1.0);
      double sigma = std::max(1.5, std::min(height, width) / 6.0);
      const double inv = 1.0 / (2.0 * sigma * sigma);
      for (Index h = 0; h < height; ++h)
        for (Index w = 0; w < width; ++w) {
          double g = std::exp(-((h - cyv) * (h - cyv) + (w - cx) * (w - cx)) * inv);
          if (g < 1e-4) continue;
          for (Index c = 0; c < channels; ++c) ds.images.at4(n, c, h, w) += g * color[c % 3];
        }
    }
  }
  clamp01(ds.images);
  return ds;
}

// ----------------------------------------------------------------- fixture io

void save_dataset_fixture(const LabeledDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  ArrayContainer c;
  std::vector<std::uint8_t> pixels(ds.images.data.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(ds.images.data[i], 0.0, 1.0) * 255.0));
  c.put_u8("images", ds.images.shape, pixels);
  std::vector<std::int64_t> labels(ds.labels.begin(), ds.labels.end());
  c.put_i64("labels", {static_cast<Index>(labels.size())}, labels);
  const auto data_path = dir / "data.tdy";
  c.save(data_path);

  json manifest;
  manifest["name"] = ds.name;
  manifest["class_count"] = ds.class_count;
  manifest["shape"] = ds.images.shape;
  manifest["checksum"] = checksum_hex(file_checksum(data_path));
  std::ofstream f(dir / "manifest.json");
  f << manifest.dump(2) << "\n";
}

LabeledDataset load_dataset_fixture(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf.good()) fail(ErrorCode::missing_files, manifest_path.string());
  json manifest = json::parse(mf, nullptr, false);
  if (manifest.is_discarded()) fail(ErrorCode::corrupt_record, "unparseable manifest: " + manifest_path.string());

  const auto data_path = dir / "data.tdy";
  std::string expected = manifest.value("checksum", "");
  if (!expected.empty() && checksum_hex(file_checksum(data_path)) != expected)
    fail(ErrorCode::checksum_failure, "fixture data checksum mismatch: " + data_path.string());

  ArrayContainer c = ArrayContainer::load(data_path);
  Shape img_shape;
  std::vector<std::uint8_t> pixels = c.get_u8("images", &img_shape);

  LabeledDataset ds;
  ds.name = manifest.value("name", dir.filename().string());
  ds.class_count = manifest.value("class_count", 0);
  ds.images = Tensor(img_shape);
  for (std::size_t i = 0; i < pixels.size(); ++i) ds.images.data[i] = pixels[i] / 255.0;
  for (std::int64_t l : c.get_i64("labels")) ds.labels.push_back(static_cast<int>(l));
  ds.validate();
  return ds;
}

namespace {

LabeledDataset load_cifar10(const std::filesystem::path& root, bool train) {
  const Index C = 3, H = 32, W = 32;
  const std::size_t record = 1 + static_cast<std::size_t>(C * H * W);
  std::vector<std::filesystem::path> files;
  if (train) {
    for (int b = 1; b <= 5; ++b) files.push_back(root / "cifar10" / ("data_batch_" + std::to_string(b) + ".bin"));
  } else {
    files.push_back(root / "cifar10" / "test_batch.bin");
  }

  std::vector<std::vector<unsigned char>> blobs;
  Index total = 0;
  for (const auto& path : files) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) fail(ErrorCode::missing_files, path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() % record != 0)
      fail(ErrorCode::corrupt_record,
           path.string() + ": truncated at record " + std::to_string(bytes.size() / record));
    total += static_cast<Index>(bytes.size() / record);
    blobs.push_back(std::move(bytes));
  }

  LabeledDataset ds;
  ds.name = train ? "cifar10-train" : "cifar10-test";
  ds.class_count = 10;
  ds.images = Tensor({total, C, H, W});
  Index n = 0;
  for (std::size_t bi = 0; bi < blobs.size(); ++bi) {
    const auto& bytes = blobs[bi];
    for (std::size_t r = 0; r * record < bytes.size(); ++r, ++n) {
      const unsigned char* rec = bytes.data() + r * record;
      int label = rec[0];
      if (label < 0 || label > 9)
        fail(ErrorCode::corrupt_record, files[bi].string() + ": bad label at record " + std::to_string(r));
      ds.labels.push_back(label);
      double* dst = ds.images.ptr() + n * C * H * W;
      for (std::size_t i = 0; i < static_cast<std::size_t>(C * H * W); ++i) dst[i] = rec[1 + i] / 255.0;
    }
  }
  return ds;
}

}  // namespace

LabeledDataset load_dataset(const std::string& name, const std::filesystem::path& root) {
  if (name == "cifar10-train") return load_cifar10(root, true);
  if (name == "cifar10-test") return load_cifar10(root, false);

  const bool is_fixture = name == "toy-2class" || name == "gauss-grid-4" || name == "desk10-train" ||
                          name == "desk10-test";
  if (!is_fixture) fail(ErrorCode::missing_files, "unknown dataset id: " + name);

  const auto dir = root / name;
  if (!std::filesystem::exists(dir / "data.tdy")) {
    LabeledDataset ds;
    if (name == "toy-2class") ds = make_toy_2class();
    else if (name == "gauss-grid-4") ds = make_gauss_grid_4();
    else ds = make_desk10(name == "desk10-train");
    save_dataset_fixture(ds, dir);
  }
  return load_dataset_fixture(dir);
}

// --------------------------------------------------------------- operations

LabeledDataset subsample_imbalanced(const LabeledDataset& ds, double min_frac, double max_frac,
                                    std::uint64_t seed) {
  require(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0, ErrorCode::invalid_argument,
          "need 0 < min_frac <= max_frac <= 1");
  ds.validate();

  auto per_class = ds.class_indices();
  std::vector<Index> keep;
  for (int k = 0; k < ds.class_count; ++k) {
    auto& idx = per_class[static_cast<std::size_t>(k)];
    if (idx.empty()) fail(ErrorCode::empty_class, "class " + std::to_string(k) + " has no samples");
    Rng rng = make_rng(derive_seed(seed, "class-frac", static_cast<std::uint64_t>(k)));
    double frac = uniform(rng, min_frac, max_frac);
    auto n_keep = static_cast<Index>(std::ceil(frac * static_cast<double>(idx.size())));
    if (n_keep <= 0) fail(ErrorCode::empty_class, "class " + std::to_string(k) + " would drop to 0 samples");
    std::vector<Index> chosen = idx;
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(static_cast<std::size_t>(std::min<Index>(n_keep, static_cast<Index>(chosen.size()))));
    std::sort(chosen.begin(), chosen.end());
    keep.insert(keep.end(), chosen.begin(), chosen.end());
  }
  std::sort(keep.begin(), keep.end());

  const Index C = ds.images.shape[1], H = ds.images.shape[2], W = ds.images.shape[3];
  const Index per_image = C * H * W;
  LabeledDataset out;
  out.name = ds.name + "-imbalanced";
  out.class_count = ds.class_count;
  out.images = Tensor({static_cast<Index>(keep.size()), C, H, W});
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy_n(ds.images.ptr() + keep[i] * per_image, static_cast<std::size_t>(per_image),
                out.images.ptr() + static_cast<Index>(i) * per_image);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(keep[i])]);
  }
  return out;
}

SyntheticDataset init_synthetic(const LabeledDataset& ds, int ipc, InitMode mode, std::uint64_t seed) {
  require(ipc >= 1, ErrorCode::invalid_argument, "ipc must be >= 1");
  ds.validate();

  const Index C = ds.images.shape[1], H = ds.images.shape[2], W = ds.images.shape[3];
  const Index per_image = C * H * W;
  SyntheticDataset synth;
  synth.ipc = ipc;
  synth.class_count = ds.class_count;
  synth.images = Tensor({static_cast<Index>(ipc) * ds.class_count, C, H, W});
  synth.hard_labels.resize(static_cast<std::size_t>(synth.images.shape[0]));

  if (mode == InitMode::real) {
    auto per_class = ds.class_indices();
    std::vector<int> deficient;
    for (int k = 0; k < ds.class_count; ++k)
      if (per_class[static_cast<std::size_t>(k)].size() < static_cast<std::size_t>(ipc)) deficient.push_back(k);
    if (!deficient.empty()) {
      std::string names;
      for (int k : deficient) names += (names.empty() ? "" : ", ") + std::to_string(k);
      fail(ErrorCode::insufficient_samples, "classes with fewer than ipc samples: " + names);
    }
    for (int k = 0; k < ds.class_count; ++k) {
      auto chosen = per_class[static_cast<std::size_t>(k)];
      Rng rng = make_rng(derive_seed(seed, "real-init", static_cast<std::uint64_t>(k)));
      std::shuffle(chosen.begin(), chosen.end(), rng);
      for (int i = 0; i < ipc; ++i) {
        Index dst = static_cast<Index>(k) * ipc + i;
        std::copy_n(ds.images.ptr() + chosen[static_cast<std::size_t>(i)] * per_image,
                    static_cast<std::size_t>(per_image), synth.images.ptr() + dst * per_image);
        synth.hard_labels[static_cast<std::size_t>(dst)] = k;
      }
    }
  } else {
    Rng rng = make_rng(derive_seed(seed, "noise-init"));
    for (double& v : synth.images.data) v = uniform(rng);
    for (int k = 0; k < ds.class_count; ++k)
      for (int i = 0; i < ipc; ++i) synth.hard_labels[static_cast<std::size_t>(k) * static_cast<std::size_t>(ipc) + static_cast<std::size_t>(i)] = k;
  }
  synth.validate();
  return synth;
}

void save_synthetic(const SyntheticDataset& synth, const std::filesystem::path& dir,
                    const std::string& extra_manifest_json) {
  synth.validate();
  std::filesystem::create_directories(dir);
  ArrayContainer c;
  c.put_f64("images", synth.images);
  std::vector<std::int64_t> labels(synth.hard_labels.begin(), synth.hard_labels.end());
  c.put_i64("hard_labels", {static_cast<Index>(labels.size())}, labels);
  if (synth.soft_labels) c.put_f64("soft_labels", *synth.soft_labels);
  const auto data_path = dir / "data.tdy";
  c.save(data_path);

  json manifest = json::parse(extra_manifest_json);
  manifest["ipc"] = synth.ipc;
  manifest["class_count"] = synth.class_count;
  manifest["checksum"] = checksum_hex(file_checksum(data_path));
  manifest["has_soft_labels"] = synth.soft_labels.has_value();
  std::ofstream f(dir / "manifest.json");
  f << manifest.dump(2) << "\n";
}

SyntheticDataset load_synthetic(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf.good()) fail(ErrorCode::missing_files, manifest_path.string());
  json manifest = json::parse(mf);

  const auto data_path = dir / "data.tdy";
  std::string expected = manifest.value("checksum", "");
  if (!expected.empty() && checksum_hex(file_checksum(data_path)) != expected)
    fail(ErrorCode::checksum_failure, "synthetic data checksum mismatch: " + data_path.string());

  ArrayContainer c = ArrayContainer::load(data_path);
  SyntheticDataset synth;
  synth.images = c.get_f64("images");
  for (std::int64_t l : c.get_i64("hard_labels")) synth.hard_labels.push_back(static_cast<int>(l));
  if (c.has("soft_labels")) synth.soft_labels = c.get_f64("soft_labels");
  synth.ipc = manifest.value("ipc", 0);
  synth.class_count = manifest.value("class_count", 0);
  synth.validate();
  return synth;
}

std::string load_synthetic_manifest(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf.good()) fail(ErrorCode::missing_files, (dir / "manifest.json").string());
  return std::string((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
}

}  // namespace teddy
