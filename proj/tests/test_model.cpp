#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "divtrain/checkpoint.hpp"
#include "divtrain/model.hpp"
#include "divtrain/rng.hpp"

using namespace divtrain;
using nn::InputShape;

namespace {

const InputShape kMnistShape{1, 28, 28};

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parse_spec accepts the reference structures") {
  nn::ModelSpec conv3 = nn::parse_spec("C32-C64-M-C128-M-FC1024-FC10", kMnistShape);
  CHECK(conv3.layers.size() == 7);
  CHECK(conv3.classes() == 10);
  CHECK(conv3.to_string() == "C32-C64-M-C128-M-FC1024-FC10");

  nn::ModelSpec conv4 = nn::parse_spec("C32-C64-C128-M-C128-M-FC1024-FC10", {3, 32, 32});
  CHECK(conv4.to_string() == "C32-C64-C128-M-C128-M-FC1024-FC10");

  // degenerate linear classifier
  nn::ModelSpec linear = nn::parse_spec("FC10", kMnistShape);
  CHECK(linear.layers.size() == 1);
  CHECK(linear.layers[0].kind == nn::LayerKind::Output);

  // desk-scale default
  nn::ModelSpec desk = nn::parse_spec("C8-C16-M-C32-M-FC128-FC10", kMnistShape);
  CHECK(desk.to_string() == "C8-C16-M-C32-M-FC128-FC10");
}

TEST_CASE("parse_spec round-trips random well-formed strings") {
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    std::string text;
    int pools = 0;
    const int convs = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < convs; ++i) {
      text += "C" + std::to_string(1 + rng.below(32)) + "-";
      if (pools < 2 && rng.uniform01() < 0.5) {
        text += "M-";
        ++pools;
      }
    }
    if (rng.uniform01() < 0.5) text += "FC" + std::to_string(1 + rng.below(64)) + "-";
    text += "FC10";
    CHECK(nn::parse_spec(text, kMnistShape).to_string() == text);
  }
}

TEST_CASE("parse_spec error cases") {
  CHECK_THROWS_AS(nn::parse_spec("C32-Q5-FC10", kMnistShape), ParseError);
  CHECK_THROWS_AS(nn::parse_spec("C32-M", kMnistShape), ParseError);          // no output layer
  CHECK_THROWS_AS(nn::parse_spec("C32-FC10-C8-FC10", kMnistShape), ParseError);
  CHECK_THROWS_AS(nn::parse_spec("", kMnistShape), ParseError);
  CHECK_THROWS_AS(nn::parse_spec("C8-FC", kMnistShape), ParseError);
  CHECK_THROWS_AS(nn::parse_spec("RES16-FC10", kMnistShape), ParseError);     // reserved
  // pooling underflow: 2x2 input pooled twice
  CHECK_THROWS_AS(nn::parse_spec("C4-M-M-FC10", {1, 2, 2}), ParseError);

  try {
    nn::parse_spec("C32-Q5-FC10", kMnistShape);
  } catch (const ParseError& e) {
    CHECK(e.position == 4);  // offset of the bad token
  }
}

TEST_CASE("init_params determinism and He scaling") {
  nn::ModelSpec spec = nn::parse_spec("C8-M-FC32-FC10", kMnistShape);
  nn::Parameters a = nn::init_params(spec, 1234);
  nn::Parameters b = nn::init_params(spec, 1234);
  REQUIRE(a.items.size() == b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i)
    for (std::int64_t j = 0; j < a.items[i].tensor.numel(); ++j)
      CHECK(a.items[i].tensor[j] == b.items[i].tensor[j]);

  nn::Parameters c = nn::init_params(spec, 4321);
  bool any_diff = false;
  for (std::int64_t j = 0; j < a.items[0].tensor.numel(); ++j)
    if (a.items[0].tensor[j] != c.items[0].tensor[j]) any_diff = true;
  CHECK(any_diff);

  // FC(784 -> 10): weight std within 20% of sqrt(2/784)
  nn::ModelSpec linear = nn::parse_spec("FC10", kMnistShape);
  nn::Parameters lp = nn::init_params(linear, 7);
  const Tensor& w = lp.items[0].tensor;
  double mean = 0.0;
  for (std::int64_t j = 0; j < w.numel(); ++j) mean += w[j];
  mean /= static_cast<double>(w.numel());
  double var = 0.0;
  for (std::int64_t j = 0; j < w.numel(); ++j) var += (w[j] - mean) * (w[j] - mean);
  var /= static_cast<double>(w.numel());
  const double expected = std::sqrt(2.0 / 784.0);
  CHECK(std::sqrt(var) > 0.8 * expected);
  CHECK(std::sqrt(var) < 1.2 * expected);

  // biases start at zero
  CHECK(lp.items[1].tensor[0] == 0.0);
}

TEST_CASE("forward_logits shapes and zero-parameter output") {
  nn::ModelSpec spec = nn::parse_spec("C8-C16-M-C32-M-FC128-FC10", kMnistShape);
  nn::Model model{spec, nn::init_params(spec, 5)};

  Rng rng(3);
  Tensor batch({3, 1, 28, 28});
  for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform01();
  Tensor logits = nn::forward_logits(model, batch);
  CHECK(logits.shape() == std::vector<std::int64_t>{3, 10});

  // zero weights and biases -> all-zero logits
  nn::Model zero = model;
  for (auto& item : zero.params.items)
    for (std::int64_t i = 0; i < item.tensor.numel(); ++i) item.tensor[i] = 0.0;
  Tensor zlogits = nn::forward_logits(zero, batch);
  for (std::int64_t i = 0; i < zlogits.numel(); ++i) CHECK(zlogits[i] == 0.0);

  CHECK_THROWS_AS(nn::forward_logits(model, Tensor::zeros({2, 1, 14, 14})), ShapeError);
}

TEST_CASE("forward_logits batch rows are independent") {
  nn::ModelSpec spec = nn::parse_spec("C4-M-FC16-FC10", kMnistShape);
  nn::Model model{spec, nn::init_params(spec, 11)};
  Rng rng(12);
  Tensor batch({3, 1, 28, 28});
  for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform01();
  Tensor out = nn::forward_logits(model, batch);

  // permute rows 0 and 2 of the batch; logits rows permute identically
  Tensor permuted = batch;
  const std::int64_t per = 28 * 28;
  for (std::int64_t j = 0; j < per; ++j) std::swap(permuted[j], permuted[2 * per + j]);
  Tensor pout = nn::forward_logits(model, permuted);
  for (std::int64_t j = 0; j < 10; ++j) {
    CHECK(pout[j] == out[2 * 10 + j]);
    CHECK(pout[2 * 10 + j] == out[j]);
    CHECK(pout[10 + j] == out[10 + j]);
  }
}

TEST_CASE("ensemble_predict: mean softmax and tie-breaking") {
  // two members whose softmax outputs are [0.6,0.4] and [0.1,0.9]:
  // mean [0.35,0.65] -> class 1
  nn::ModelSpec spec = nn::parse_spec("FC2", {2, 1, 1});
  nn::Model m1{spec, nn::init_params(spec, 1)};
  nn::Model m2{spec, nn::init_params(spec, 2)};
  auto set_logits = [](nn::Model& m, double l0, double l1) {
    for (std::int64_t i = 0; i < m.params.items[0].tensor.numel(); ++i)
      m.params.items[0].tensor[i] = 0.0;
    m.params.items[1].tensor[0] = l0;
    m.params.items[1].tensor[1] = l1;
  };
  set_logits(m1, std::log(0.6), std::log(0.4));
  set_logits(m2, std::log(0.1), std::log(0.9));
  nn::Ensemble ens{{m1, m2}};
  Tensor x = Tensor::zeros({1, 2, 1, 1});
  CHECK(nn::ensemble_predict(ens, x)[0] == 1);

  // identical members act like a single model
  nn::Ensemble same{{m1, m1, m1}};
  CHECK(nn::ensemble_predict(same, x)[0] == 0);

  // all-zero logits everywhere: tie broken toward class 0
  set_logits(m1, 0.0, 0.0);
  set_logits(m2, 0.0, 0.0);
  nn::Ensemble zeros{{m1, m2}};
  CHECK(nn::ensemble_predict(zeros, x)[0] == 0);
}

TEST_CASE("ensemble_predict invariant under member reordering") {
  nn::ModelSpec spec = nn::parse_spec("C4-M-FC8-FC10", kMnistShape);
  nn::Ensemble ens = nn::make_ensemble({spec, spec, spec}, {21, 22, 23});
  nn::Ensemble reversed;
  reversed.members = {ens.members[2], ens.members[1], ens.members[0]};

  Rng rng(31);
  Tensor batch({4, 1, 28, 28});
  for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform01();
  CHECK(nn::ensemble_predict(ens, batch) == nn::ensemble_predict(reversed, batch));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  nn::ModelSpec spec = nn::parse_spec("C4-M-FC16-FC10", kMnistShape);
  nn::Ensemble ens = nn::make_ensemble({spec, spec}, {100, 200});
  const std::string path = temp_path("divtrain_ckpt_test.ckpt");

  nn::save_checkpoint(ens, path);
  nn::Ensemble loaded = nn::load_checkpoint(path);
  REQUIRE(loaded.size() == ens.size());
  for (std::size_t m = 0; m < ens.size(); ++m) {
    CHECK(loaded.members[m].spec.to_string() == ens.members[m].spec.to_string());
    REQUIRE(loaded.members[m].params.items.size() == ens.members[m].params.items.size());
    for (std::size_t p = 0; p < ens.members[m].params.items.size(); ++p) {
      const Tensor& a = ens.members[m].params.items[p].tensor;
      const Tensor& b = loaded.members[m].params.items[p].tensor;
      REQUIRE(a.numel() == b.numel());
      for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    }
  }
  CHECK(nn::checkpoint_digest(ens) == nn::checkpoint_digest(loaded));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects corrupted files") {
  nn::ModelSpec spec = nn::parse_spec("FC10", kMnistShape);
  nn::Ensemble ens = nn::make_ensemble({spec}, {42});
  const std::string path = temp_path("divtrain_ckpt_bad.ckpt");
  nn::save_checkpoint(ens, path);

  // truncated: cut the blob section short
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  }
  CHECK_THROWS_AS(nn::load_checkpoint(path), IoError);

  // bad magic
  {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
  }
  CHECK_THROWS_AS(nn::load_checkpoint(path), IoError);

  // manifest/tensor mismatch: declared classes != spec output width
  {
    std::string corrupt = bytes;
    const std::size_t pos = corrupt.find("\"classes\":10");
    REQUIRE(pos != std::string::npos);
    corrupt.replace(pos, 12, "\"classes\":12");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
  }
  CHECK_THROWS_AS(nn::load_checkpoint(path), IoError);

  std::filesystem::remove(path);
}

}  // TEST_SUITE
