#include <doctest.h>

#include <fstream>
#include <set>

#include "teddy/dataset.hpp"
#include "teddy/rng.hpp"
#include "test_util.hpp"

using namespace teddy;
using teddy::testutil::TempDir;

TEST_CASE("toy-2class fixture materializes with 8 stored images and 2 classes") {
  TempDir root("data_toy");
  LabeledDataset ds = load_dataset("toy-2class", root.path());
  CHECK(ds.size() == 8);
  CHECK(ds.class_count == 2);
  CHECK(std::filesystem::exists(root.path() / "toy-2class" / "data.tdy"));
  CHECK(std::filesystem::exists(root.path() / "toy-2class" / "manifest.json"));

  // Reloading from disk is deterministic.
  LabeledDataset again = load_dataset("toy-2class", root.path());
  CHECK(bitwise_equal(ds.images, again.images));
  CHECK(ds.labels == again.labels);
}

TEST_CASE("fixture pixels stay inside [0,1]") {
  TempDir root("data_range");
  for (const char* name : {"toy-2class", "gauss-grid-4"}) {
    LabeledDataset ds = load_dataset(name, root.path());
    for (double v : ds.images.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("unknown dataset id is a missing-files error") {
  TempDir root("data_unknown");
  CHECK(testutil::threw_code(ErrorCode::missing_files, [&] { load_dataset("imagenet-22k", root.path()); }));
}

namespace {

// Standard binary batch layout: label byte + 3072 channel-major pixel bytes.
void write_cifar_batch(const std::filesystem::path& path, int records, unsigned seed) {
  std::ofstream f(path, std::ios::binary);
  Rng rng = make_rng(seed);
  for (int r = 0; r < records; ++r) {
    unsigned char label = static_cast<unsigned char>(uniform_index(rng, 10));
    f.put(static_cast<char>(label));
    for (int i = 0; i < 3072; ++i) f.put(static_cast<char>(uniform_index(rng, 256)));
  }
}

}  // namespace

TEST_CASE("cifar10 loader parses the binary batch layout") {
  TempDir root("data_cifar");
  std::filesystem::create_directories(root.path() / "cifar10");
  for (int b = 1; b <= 5; ++b)
    write_cifar_batch(root.path() / "cifar10" / ("data_batch_" + std::to_string(b) + ".bin"), 6,
                      static_cast<unsigned>(b));
  write_cifar_batch(root.path() / "cifar10" / "test_batch.bin", 4, 99);

  LabeledDataset train = load_dataset("cifar10-train", root.path());
  CHECK(train.size() == 30);
  CHECK(train.class_count == 10);
  CHECK(train.image_shape() == Shape{3, 32, 32});
  for (double v : train.images.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  LabeledDataset test = load_dataset("cifar10-test", root.path());
  CHECK(test.size() == 4);

  // Deterministic ordering: loading twice gives identical bytes.
  LabeledDataset again = load_dataset("cifar10-train", root.path());
  CHECK(bitwise_equal(train.images, again.images));

  SUBCASE("missing batch file names the absent path") {
    std::filesystem::remove(root.path() / "cifar10" / "data_batch_3.bin");
    try {
      load_dataset("cifar10-train", root.path());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::missing_files);
      CHECK(std::string(e.what()).find("data_batch_3.bin") != std::string::npos);
    }
  }

  SUBCASE("truncated record is a corrupt-record error with the index") {
    std::ofstream f(root.path() / "cifar10" / "test_batch.bin", std::ios::binary | std::ios::app);
    f.put(0);
    f.close();
    try {
      load_dataset("cifar10-test", root.path());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::corrupt_record);
      CHECK(std::string(e.what()).find("4") != std::string::npos);
    }
  }
}

TEST_CASE("real cifar10 counts (only when a data root provides it)") {
  const char* env = std::getenv("TEDDY_DATA_ROOT");
  if (!env || !std::filesystem::exists(std::filesystem::path(env) / "cifar10" / "data_batch_1.bin")) return;
  LabeledDataset train = load_dataset("cifar10-train", env);
  CHECK(train.size() == 50000);
  CHECK(train.class_count == 10);
  LabeledDataset test = load_dataset("cifar10-test", env);
  CHECK(test.size() == 10000);
}

TEST_CASE("imbalanced subsampling") {
  TempDir root("data_imb");
  LabeledDataset ds = load_dataset("gauss-grid-4", root.path());  // 50 per class

  SUBCASE("identity fractions change nothing") {
    LabeledDataset out = subsample_imbalanced(ds, 1.0, 1.0, 7);
    CHECK(out.size() == ds.size());
    CHECK(bitwise_equal(out.images, ds.images));
    CHECK(out.labels == ds.labels);
  }

  SUBCASE("fraction window bounds every class size") {
    LabeledDataset out = subsample_imbalanced(ds, 0.6, 1.0, 21);
    auto per_class = out.class_indices();
    for (const auto& idx : per_class) {
      CHECK(idx.size() >= 30);
      CHECK(idx.size() <= 50);
    }
  }

  SUBCASE("fixed fraction gives ceil(frac * n) exactly") {
    // 10 per class fixture: ceil(0.4 * 10) = 4.
    LabeledDataset small = make_blob_dataset(3, 10, 3, 16, 16, 0.05, 11, "fixture10");
    LabeledDataset out = subsample_imbalanced(small, 0.4, 0.4, 5);
    for (const auto& idx : out.class_indices()) CHECK(idx.size() == 4);
  }

  SUBCASE("membership changes, pixels never do") {
    LabeledDataset out = subsample_imbalanced(ds, 0.5, 0.9, 3);
    const Index per_image = ds.images.numel() / ds.size();
    // Every retained image appears bit-identically in the source.
    for (Index i = 0; i < out.size(); ++i) {
      bool found = false;
      for (Index j = 0; j < ds.size() && !found; ++j) {
        if (ds.labels[static_cast<std::size_t>(j)] != out.labels[static_cast<std::size_t>(i)]) continue;
        found = std::equal(out.images.ptr() + i * per_image, out.images.ptr() + (i + 1) * per_image,
                           ds.images.ptr() + j * per_image);
      }
      CHECK(found);
    }
  }

  SUBCASE("determinism in the seed") {
    LabeledDataset a = subsample_imbalanced(ds, 0.5, 0.9, 17);
    LabeledDataset b = subsample_imbalanced(ds, 0.5, 0.9, 17);
    CHECK(bitwise_equal(a.images, b.images));
    CHECK(a.labels == b.labels);
  }

  SUBCASE("invalid fraction window") {
    CHECK(testutil::threw_code(ErrorCode::invalid_argument, [&] { subsample_imbalanced(ds, 0.9, 0.5, 1); }));
  }
}

TEST_CASE("synthetic initialization") {
  TempDir root("data_init");
  LabeledDataset ds = load_dataset("gauss-grid-4", root.path());

  SUBCASE("noise mode: one per class, all labels distinct") {
    SyntheticDataset s = init_synthetic(ds, 1, InitMode::noise, 5);
    CHECK(s.size() == 4);
    std::set<int> labels(s.hard_labels.begin(), s.hard_labels.end());
    CHECK(labels.size() == 4);
    CHECK_FALSE(s.soft_labels.has_value());
  }

  SUBCASE("real mode copies members of the dataset exactly") {
    SyntheticDataset s = init_synthetic(ds, 3, InitMode::real, 5);
    const Index per_image = ds.images.numel() / ds.size();
    for (Index i = 0; i < s.size(); ++i) {
      bool found = false;
      for (Index j = 0; j < ds.size() && !found; ++j)
        found = std::equal(s.images.ptr() + i * per_image, s.images.ptr() + (i + 1) * per_image,
                           ds.images.ptr() + j * per_image);
      CHECK(found);
    }
  }

  SUBCASE("exhaustive real mode is a permutation of the source") {
    LabeledDataset small = make_blob_dataset(2, 4, 3, 16, 16, 0.05, 3, "perm-fixture");
    SyntheticDataset s = init_synthetic(small, 4, InitMode::real, 9);
    const Index per_image = small.images.numel() / small.size();
    std::multiset<std::vector<double>> source, synth;
    for (Index j = 0; j < small.size(); ++j)
      source.insert(std::vector<double>(small.images.ptr() + j * per_image,
                                        small.images.ptr() + (j + 1) * per_image));
    for (Index i = 0; i < s.size(); ++i)
      synth.insert(std::vector<double>(s.images.ptr() + i * per_image,
                                       s.images.ptr() + (i + 1) * per_image));
    CHECK(source == synth);
  }

  SUBCASE("insufficient samples lists the deficient classes") {
    LabeledDataset small = make_blob_dataset(2, 4, 3, 16, 16, 0.05, 3, "small");
    try {
      init_synthetic(small, 9, InitMode::real, 1);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::insufficient_samples);
      CHECK(std::string(e.what()).find("0") != std::string::npos);
      CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
  }

  SUBCASE("balanced construction and determinism") {
    SyntheticDataset a = init_synthetic(ds, 5, InitMode::noise, 123);
    SyntheticDataset b = init_synthetic(ds, 5, InitMode::noise, 123);
    CHECK(bitwise_equal(a.images, b.images));
    std::vector<int> counts(4, 0);
    for (int l : a.hard_labels) counts[static_cast<std::size_t>(l)]++;
    for (int c : counts) CHECK(c == 5);
  }
}

TEST_CASE("synthetic dataset round trips through its on-disk layout") {
  TempDir root("data_synth_io");
  LabeledDataset ds = load_dataset("gauss-grid-4", root.path());
  SyntheticDataset s = init_synthetic(ds, 2, InitMode::real, 5);
  Tensor soft({s.size(), s.class_count});
  for (Index i = 0; i < s.size(); ++i)
    for (Index c = 0; c < s.class_count; ++c) soft.at2(i, c) = 1.0 / static_cast<double>(s.class_count);
  s.soft_labels = soft;

  save_synthetic(s, root.path() / "synth", "{\"config_hash\":\"abc\"}");
  SyntheticDataset back = load_synthetic(root.path() / "synth");
  CHECK(bitwise_equal(back.images, s.images));
  CHECK(back.hard_labels == s.hard_labels);
  CHECK(back.soft_labels.has_value());
  CHECK(bitwise_equal(*back.soft_labels, *s.soft_labels));
  CHECK(load_synthetic_manifest(root.path() / "synth").find("config_hash") != std::string::npos);
}

TEST_CASE("desk10 fixture is shaped like the desk benchmark expects") {
  TempDir root("data_desk");
  // The test split is the small one; generating it keeps this test quick.
  LabeledDataset test = load_dataset("desk10-test", root.path());
  CHECK(test.size() == 1000);
  CHECK(test.class_count == 10);
  CHECK(test.image_shape() == Shape{3, 32, 32});
  auto per_class = test.class_indices();
  for (const auto& idx : per_class) CHECK(idx.size() == 100);
}
