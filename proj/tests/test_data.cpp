#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "divtrain/data.hpp"
#include "divtrain/rng.hpp"
#include "divtrain/trainer.hpp"

using namespace divtrain;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void check_bundle_domain(const data::DatasetBundle& d, std::int64_t classes) {
  for (std::int64_t i = 0; i < d.images.numel(); ++i) {
    CHECK(d.images[i] >= 0.0);
    CHECK(d.images[i] <= 1.0);
  }
  for (std::int64_t l : d.labels) {
    CHECK(l >= 0);
    CHECK(l < classes);
  }
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("idx round-trip, scaling and error cases") {
  data::DatasetBundle src = data::synth_digits(3, 42);
  const std::string img_path = temp_path("divtrain_idx_images");
  const std::string lab_path = temp_path("divtrain_idx_labels");
  data::save_idx(src, img_path, lab_path);

  data::DatasetBundle loaded = data::load_idx(img_path, lab_path);
  CHECK(loaded.size() == src.size());
  CHECK(loaded.images.shape() == src.images.shape());
  CHECK(loaded.labels == src.labels);
  // u8 round-trip: within half a quantization step
  for (std::int64_t i = 0; i < src.images.numel(); ++i)
    CHECK(std::fabs(loaded.images[i] - src.images[i]) <= 0.5 / 255.0 + 1e-12);

  // pixel value 255 loads as exactly 1.0
  {
    std::ifstream in(img_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes[16] = static_cast<char>(255);
    std::ofstream out(img_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK(data::load_idx(img_path, lab_path).images[0] == 1.0);

  // swapped files: label magic where image magic is expected
  CHECK_THROWS_AS(data::load_idx(lab_path, img_path), IoError);

  // truncated image payload
  {
    std::ifstream in(img_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(img_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
  }
  CHECK_THROWS_AS(data::load_idx(img_path, lab_path), IoError);

  std::filesystem::remove(img_path);
  std::filesystem::remove(lab_path);
}

TEST_CASE("synth_blobs: determinism, separability") {
  data::DatasetBundle a = data::synth_blobs(2, 100, {1, 4, 4}, 7);
  data::DatasetBundle b = data::synth_blobs(2, 100, {1, 4, 4}, 7);
  CHECK(a.size() == 200);
  check_bundle_domain(a, 2);
  for (std::int64_t i = 0; i < a.images.numel(); ++i) CHECK(a.images[i] == b.images[i]);

  data::DatasetBundle c = data::synth_blobs(2, 100, {1, 4, 4}, 8);
  bool differs = false;
  for (std::int64_t i = 0; i < a.images.numel() && !differs; ++i)
    if (a.images[i] != c.images[i]) differs = true;
  CHECK(differs);

  // a linear model separates well-spaced blobs essentially perfectly
  data::DatasetBundle train_set = data::synth_blobs(10, 60, {1, 4, 4}, 11);
  data::DatasetBundle test_set = data::synth_blobs(10, 30, {1, 4, 4}, 12);
  nn::ModelSpec spec = nn::parse_spec("FC10", {1, 4, 4});
  nn::Ensemble model = nn::make_ensemble({spec}, {5});
  train::TrainConfig tc;
  tc.recipe = train::Recipe::Base;
  tc.epochs = 20;
  tc.learning_rate = 0.01;
  tc.augment = {0, 0, false, 0};
  tc.master_seed = 3;
  train::train(model, train_set, std::nullopt, tc);
  CHECK(nn::accuracy(model, test_set.images, test_set.labels) >= 99.0);
}

TEST_CASE("augment: identity, shape, determinism, label preservation") {
  data::DatasetBundle batch = data::synth_digits(4, 21);

  data::AugmentConfig identity{0, 0, false, 9};
  data::DatasetBundle same = data::augment(batch, identity);
  for (std::int64_t i = 0; i < batch.images.numel(); ++i)
    CHECK(same.images[i] == batch.images[i]);

  data::AugmentConfig shifty{2, 2, false, 9};
  data::DatasetBundle moved = data::augment(batch, shifty);
  CHECK(moved.images.shape() == batch.images.shape());
  CHECK(moved.labels == batch.labels);

  data::DatasetBundle again = data::augment(batch, shifty);
  for (std::int64_t i = 0; i < moved.images.numel(); ++i)
    CHECK(moved.images[i] == again.images[i]);

  // identity also holds with padding but zero shift
  data::AugmentConfig pad_only{0, 2, false, 9};
  data::DatasetBundle padded = data::augment(batch, pad_only);
  for (std::int64_t i = 0; i < batch.images.numel(); ++i)
    CHECK(padded.images[i] == batch.images[i]);

  data::AugmentConfig bad{3, 2, false, 9};
  CHECK_THROWS_AS(data::augment(batch, bad), ValueError);
}

TEST_CASE("noise dataset: bounds and sample statistics") {
  data::DatasetBundle base = data::synth_digits(20, 33);

  // vanishing sigma leaves images in place
  data::DatasetBundle tiny =
      data::make_noise_dataset(base, data::NoiseConfig::from_epsilon(1e-12), 5);
  for (std::int64_t i = 0; i < base.images.numel(); ++i)
    CHECK(std::fabs(tiny.images[i] - base.images[i]) < 1e-9);

  const double eps = 0.3;
  data::DatasetBundle noisy = data::make_noise_dataset(base, data::NoiseConfig::from_epsilon(eps), 5);
  CHECK(noisy.labels == base.labels);
  check_bundle_domain(noisy, 10);
  for (std::int64_t i = 0; i < base.images.numel(); ++i)
    CHECK(std::fabs(noisy.images[i] - base.images[i]) <= eps + 1e-12);

  // empirical std on interior pixels (where [0,1] clipping cannot bite)
  // against the truncated-normal moment: var = sigma^2 (1 - 2a phi(a) / (2Phi(a)-1)), a = 2
  double sum = 0.0, sum2 = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < base.images.numel(); ++i) {
    if (base.images[i] < eps || base.images[i] > 1.0 - eps) continue;
    const double d = noisy.images[i] - base.images[i];
    sum += d;
    sum2 += d * d;
    ++n;
  }
  REQUIRE(n > 1000);
  const double var = sum2 / static_cast<double>(n) - (sum / n) * (sum / n);
  const double phi2 = std::exp(-2.0) / std::sqrt(2.0 * 3.14159265358979323846);
  const double Phi2 = 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)));
  const double sigma = eps / 2.0;
  const double expected_std = sigma * std::sqrt(1.0 - 2.0 * 2.0 * phi2 / (2.0 * Phi2 - 1.0));
  CHECK(std::sqrt(var) > 0.85 * expected_std);
  CHECK(std::sqrt(var) < 1.15 * expected_std);
}

TEST_CASE("adversarial dataset from a static model") {
  data::DatasetBundle base = data::synth_digits(30, 44);
  nn::ModelSpec spec = nn::parse_spec("FC32-FC10", {1, 28, 28});
  nn::Ensemble trained = nn::make_ensemble({spec}, {9});
  train::TrainConfig tc;
  tc.recipe = train::Recipe::Base;
  tc.epochs = 10;
  tc.master_seed = 31;
  train::train(trained, base, std::nullopt, tc);
  const nn::Model& static_model = trained.members.front();

  // zero budget copies the base set
  data::DatasetBundle copy = data::make_adv_dataset(static_model, base, 0.0, 77);
  for (std::int64_t i = 0; i < base.images.numel(); ++i)
    CHECK(copy.images[i] == base.images[i]);

  const double eps = 0.3;
  data::DatasetBundle adv = data::make_adv_dataset(static_model, base, eps, 77);
  CHECK(adv.labels == base.labels);
  check_bundle_domain(adv, 10);
  const std::int64_t per = base.images.numel() / base.size();
  for (std::int64_t i = 0; i < base.size(); ++i) {
    double linf = 0.0;
    for (std::int64_t j = 0; j < per; ++j)
      linf = std::max(linf, std::fabs(adv.images[i * per + j] - base.images[i * per + j]));
    CHECK(linf <= eps + 1e-12);  // per-example budgets are all within eps
  }

  // the static model does worse on its own adversarial set
  const double clean_acc = nn::accuracy(trained, base.images, base.labels);
  const double adv_acc = nn::accuracy(trained, adv.images, adv.labels);
  CHECK(adv_acc < clean_acc);

  // determinism
  data::DatasetBundle adv2 = data::make_adv_dataset(static_model, base, eps, 77);
  for (std::int64_t i = 0; i < adv.images.numel(); ++i) CHECK(adv.images[i] == adv2.images[i]);
}

TEST_CASE("cifar10 binary loader") {
  // two records with known bytes
  const std::string path = temp_path("divtrain_cifar_batch.bin");
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (int rec = 0; rec < 2; ++rec) {
      const unsigned char label = rec == 0 ? 3 : 9;
      out.write(reinterpret_cast<const char*>(&label), 1);
      for (int i = 0; i < 3072; ++i) {
        const unsigned char px = static_cast<unsigned char>((i + rec) % 256);
        out.write(reinterpret_cast<const char*>(&px), 1);
      }
    }
  }
  data::DatasetBundle d = data::load_cifar10_bin({path});
  CHECK(d.size() == 2);
  CHECK(d.images.shape() == std::vector<std::int64_t>{2, 3, 32, 32});
  CHECK(d.labels == std::vector<std::int64_t>{3, 9});
  CHECK(d.images[0] == 0.0);
  CHECK(d.images[1] == doctest::Approx(1.0 / 255.0));

  // truncated record
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.put(1);
  }
  CHECK_THROWS_AS(data::load_cifar10_bin({path}), IoError);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
