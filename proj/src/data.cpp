#include "divtrain/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "divtrain/attacks.hpp"
#include "divtrain/rng.hpp"

namespace divtrain::data {

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::uint32_t read_u32_be(std::istream& in, const std::string& origin) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError(origin + ": truncated header");
  return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
         (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(buf), 4);
}

// 5x7 glyph bitmaps for digits 0-9.
const char* kGlyphs[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
};

}  // namespace

std::int64_t DatasetBundle::classes() const {
  std::int64_t top = 0;
  for (std::int64_t l : labels) top = std::max(top, l);
  return top + 1;
}

DatasetBundle slice(const DatasetBundle& d, std::int64_t start, std::int64_t count) {
  if (start < 0 || count < 0 || start + count > d.size())
    throw ValueError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside dataset of size " +
                     std::to_string(d.size()));
  const std::int64_t per = d.images.numel() / d.size();
  std::vector<std::int64_t> shape = d.images.shape();
  shape[0] = count;
  Tensor images(shape, std::vector<double>(d.images.data() + start * per,
                                           d.images.data() + (start + count) * per));
  std::vector<std::int64_t> labels(d.labels.begin() + start, d.labels.begin() + start + count);
  return {std::move(images), std::move(labels), d.name};
}

Tensor image_at(const DatasetBundle& d, std::int64_t index) {
  DatasetBundle one = slice(d, index, 1);
  return one.images;
}

DatasetBundle load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path);
  const std::uint32_t imagic = read_u32_be(img, images_path);
  if (imagic != kImageMagic)
    throw IoError(images_path + ": magic " + std::to_string(imagic) + ", expected " +
                  std::to_string(kImageMagic));
  const std::uint32_t count = read_u32_be(img, images_path);
  const std::uint32_t rows = read_u32_be(img, images_path);
  const std::uint32_t cols = read_u32_be(img, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path);
  const std::uint32_t lmagic = read_u32_be(lab, labels_path);
  if (lmagic != kLabelMagic)
    throw IoError(labels_path + ": magic " + std::to_string(lmagic) + ", expected " +
                  std::to_string(kLabelMagic));
  const std::uint32_t lcount = read_u32_be(lab, labels_path);
  if (count != lcount)
    throw IoError("image count " + std::to_string(count) + " does not match label count " +
                  std::to_string(lcount));

  const std::int64_t n = count, h = rows, w = cols;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n * h * w));
  img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!img) throw IoError(images_path + ": truncated image data");
  std::vector<unsigned char> raw_labels(static_cast<std::size_t>(n));
  lab.read(reinterpret_cast<char*>(raw_labels.data()), n);
  if (!lab) throw IoError(labels_path + ": truncated label data");

  Tensor images({n, 1, h, w});
  for (std::int64_t i = 0; i < images.numel(); ++i)
    images[i] = static_cast<double>(pixels[static_cast<std::size_t>(i)]) / 255.0;
  std::vector<std::int64_t> labels(raw_labels.begin(), raw_labels.end());
  return {std::move(images), std::move(labels), "idx"};
}

void save_idx(const DatasetBundle& d, const std::string& images_path,
              const std::string& labels_path) {
  if (d.images.dim(1) != 1) throw ValueError("save_idx: only single-channel images");
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  if (!img) throw IoError("cannot open " + images_path + " for writing");
  write_u32_be(img, kImageMagic);
  write_u32_be(img, static_cast<std::uint32_t>(d.size()));
  write_u32_be(img, static_cast<std::uint32_t>(d.images.dim(2)));
  write_u32_be(img, static_cast<std::uint32_t>(d.images.dim(3)));
  for (std::int64_t i = 0; i < d.images.numel(); ++i) {
    const double v = std::min(1.0, std::max(0.0, d.images[i]));
    const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
    img.write(reinterpret_cast<const char*>(&byte), 1);
  }

  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!lab) throw IoError("cannot open " + labels_path + " for writing");
  write_u32_be(lab, kLabelMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(d.size()));
  for (std::int64_t l : d.labels) {
    const unsigned char byte = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

DatasetBundle load_cifar10_bin(const std::vector<std::string>& batch_paths) {
  constexpr std::int64_t kRecord = 1 + 3 * 32 * 32;
  std::vector<double> pixels;
  std::vector<std::int64_t> labels;
  for (const std::string& path : batch_paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.empty() || buf.size() % kRecord != 0)
      throw IoError(path + ": size " + std::to_string(buf.size()) +
                    " is not a multiple of the 3073-byte record");
    const std::size_t n = buf.size() / kRecord;
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char* rec = buf.data() + i * kRecord;
      labels.push_back(rec[0]);
      for (std::int64_t j = 0; j < kRecord - 1; ++j)
        pixels.push_back(static_cast<double>(rec[1 + j]) / 255.0);
    }
  }
  const std::int64_t n = static_cast<std::int64_t>(labels.size());
  return {Tensor({n, 3, 32, 32}, std::move(pixels)), std::move(labels), "cifar10"};
}

DatasetBundle synth_blobs(std::int64_t classes, std::int64_t per_class, nn::InputShape dims,
                          std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t d = dims.numel();
  // class means are a fixed function of the geometry, so bundles drawn with
  // different seeds share the same classes
  Rng mean_rng(fnv1a64("blob-means") ^ static_cast<std::uint64_t>(classes * 1315423911 + d));
  std::vector<std::vector<double>> means(static_cast<std::size_t>(classes));
  for (auto& m : means) {
    m.resize(static_cast<std::size_t>(d));
    for (double& v : m) v = mean_rng.uniform01() < 0.5 ? 0.25 : 0.75;
  }
  // blob spread well under the mean separation (|0.75-0.25| = 10 sigma)
  const double sigma = 0.05;
  const std::int64_t n = classes * per_class;
  Tensor images({n, dims.channels, dims.height, dims.width});
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t cls = i % classes;
    labels[static_cast<std::size_t>(i)] = cls;
    for (std::int64_t j = 0; j < d; ++j) {
      const double v = means[static_cast<std::size_t>(cls)][static_cast<std::size_t>(j)] +
                       rng.normal(0.0, sigma);
      images[i * d + j] = std::min(1.0, std::max(0.0, v));
    }
  }
  return {std::move(images), std::move(labels), "blobs"};
}

DatasetBundle synth_digits(std::int64_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  const std::int64_t n = 10 * per_class;
  Tensor images({n, 1, 28, 28});
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  constexpr std::int64_t kScale = 3;  // 5x7 glyph -> 15x21
  std::vector<double> canvas(28 * 28);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t cls = i % 10;
    labels[static_cast<std::size_t>(i)] = cls;
    const double intensity = rng.uniform(0.55, 1.0);
    const std::int64_t oy = 3 + static_cast<std::int64_t>(rng.below(7)) - 3;  // 3 +- 3
    const std::int64_t ox = 6 + static_cast<std::int64_t>(rng.below(7)) - 3;  // 6 +- 3
    const double shear = rng.uniform(-0.25, 0.25);
    const bool thick = rng.uniform01() < 0.3;
    const bool thin = !thick && rng.uniform01() < 0.35;

    std::fill(canvas.begin(), canvas.end(), 0.0);
    for (std::int64_t gy = 0; gy < 7; ++gy) {
      for (std::int64_t gx = 0; gx < 5; ++gx) {
        if (kGlyphs[cls][gy][gx] != '1') continue;
        if (rng.uniform01() < 0.06) continue;  // broken stroke
        for (std::int64_t sy = 0; sy < kScale; ++sy) {
          for (std::int64_t sx = 0; sx < kScale; ++sx) {
            if (thin && (sx == kScale - 1 || sy == kScale - 1)) continue;
            const std::int64_t y = oy + gy * kScale + sy;
            const std::int64_t row_shift =
                static_cast<std::int64_t>(std::lround(shear * static_cast<double>(y - 14)));
            const std::int64_t x = ox + gx * kScale + sx + row_shift;
            if (y >= 0 && y < 28 && x >= 0 && x < 28) canvas[y * 28 + x] = intensity;
          }
        }
      }
    }
    if (thick) {  // dilate right/down by one pixel
      for (std::int64_t y = 27; y >= 0; --y)
        for (std::int64_t x = 27; x >= 0; --x) {
          double v = canvas[y * 28 + x];
          if (x > 0) v = std::max(v, canvas[y * 28 + x - 1]);
          if (y > 0) v = std::max(v, canvas[(y - 1) * 28 + x]);
          canvas[y * 28 + x] = v;
        }
    }

    // clutter: faint blobs and stroke-like segments
    const int blobs = 1 + static_cast<int>(rng.below(3));
    for (int b = 0; b < blobs; ++b) {
      const std::int64_t by = rng.below(24), bx = rng.below(24);
      const std::int64_t bh = 2 + rng.below(4), bw = 2 + rng.below(4);
      const double level = rng.uniform(0.15, 0.45);
      for (std::int64_t y = by; y < std::min<std::int64_t>(28, by + bh); ++y)
        for (std::int64_t x = bx; x < std::min<std::int64_t>(28, bx + bw); ++x)
          canvas[y * 28 + x] = std::max(canvas[y * 28 + x], level);
    }
    const int segments = static_cast<int>(rng.below(3));
    for (int s = 0; s < segments; ++s) {
      std::int64_t y = rng.below(28), x = rng.below(28);
      const std::int64_t len = 4 + rng.below(7);
      const std::int64_t dy = static_cast<std::int64_t>(rng.below(3)) - 1;
      const std::int64_t dx = static_cast<std::int64_t>(rng.below(3)) - 1;
      const double level = rng.uniform(0.3, 0.6);
      for (std::int64_t t = 0; t < len; ++t, y += dy, x += dx)
        if (y >= 0 && y < 28 && x >= 0 && x < 28)
          canvas[y * 28 + x] = std::max(canvas[y * 28 + x], level);
    }

    // 3x3 box blur softens stroke edges
    double* img = images.data() + i * 28 * 28;
    for (std::int64_t y = 0; y < 28; ++y) {
      for (std::int64_t x = 0; x < 28; ++x) {
        double sum = 0.0;
        int cells = 0;
        for (std::int64_t yy = std::max<std::int64_t>(0, y - 1);
             yy <= std::min<std::int64_t>(27, y + 1); ++yy)
          for (std::int64_t xx = std::max<std::int64_t>(0, x - 1);
               xx <= std::min<std::int64_t>(27, x + 1); ++xx) {
            sum += canvas[yy * 28 + xx];
            ++cells;
          }
        img[y * 28 + x] = 0.4 * canvas[y * 28 + x] + 0.6 * sum / cells;
      }
    }

    for (std::int64_t p = 0; p < 28 * 28; ++p)
      img[p] = std::min(1.0, std::max(0.0, img[p] + rng.normal(0.0, 0.14)));
  }
  return {std::move(images), std::move(labels), "digits"};
}

DatasetBundle augment(const DatasetBundle& batch, const AugmentConfig& cfg) {
  if (cfg.shift > cfg.pad) throw ValueError("augment: shift must not exceed pad");
  if (cfg.shift < 0 || cfg.pad < 0) throw ValueError("augment: negative shift or pad");
  Rng rng(cfg.seed);
  const std::int64_t n = batch.size(), c = batch.images.dim(1), h = batch.images.dim(2),
                     w = batch.images.dim(3);
  const std::int64_t ph = h + 2 * cfg.pad, pw = w + 2 * cfg.pad;

  Tensor out(batch.images.shape());
  std::vector<double> padded(static_cast<std::size_t>(ph * pw));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t oy = cfg.pad - cfg.shift + static_cast<std::int64_t>(rng.below(
                                static_cast<std::uint64_t>(2 * cfg.shift + 1)));
    const std::int64_t ox = cfg.pad - cfg.shift + static_cast<std::int64_t>(rng.below(
                                static_cast<std::uint64_t>(2 * cfg.shift + 1)));
    const bool flip = cfg.flip && rng.uniform01() < 0.5;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* src = batch.images.data() + (i * c + ch) * h * w;
      // reflect padding
      for (std::int64_t y = 0; y < ph; ++y) {
        std::int64_t sy = y - cfg.pad;
        if (sy < 0) sy = -sy;
        if (sy >= h) sy = 2 * h - 2 - sy;
        for (std::int64_t x = 0; x < pw; ++x) {
          std::int64_t sx = x - cfg.pad;
          if (sx < 0) sx = -sx;
          if (sx >= w) sx = 2 * w - 2 - sx;
          padded[static_cast<std::size_t>(y * pw + x)] = src[sy * w + sx];
        }
      }
      double* dst = out.data() + (i * c + ch) * h * w;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t px = flip ? (w - 1 - x) : x;
          dst[y * w + x] = padded[static_cast<std::size_t>((y + oy) * pw + (px + ox))];
        }
    }
  }
  return {std::move(out), batch.labels, batch.name};
}

DatasetBundle make_noise_dataset(const DatasetBundle& base, const NoiseConfig& cfg,
                                 std::uint64_t seed) {
  if (cfg.sigma <= 0.0) throw ValueError("make_noise_dataset: sigma must be positive");
  Rng rng(seed);
  Tensor images(base.images.shape());
  for (std::int64_t i = 0; i < images.numel(); ++i) {
    const double noise = rng.truncated_normal(cfg.sigma, cfg.bound);
    images[i] = std::min(1.0, std::max(0.0, base.images[i] + noise));
  }
  return {std::move(images), base.labels, base.name + "+noise"};
}

DatasetBundle make_adv_dataset(const nn::Model& static_model, const DatasetBundle& base,
                               double eps, std::uint64_t seed) {
  if (eps < 0.0) throw ValueError("make_adv_dataset: eps must be nonnegative");
  Rng rng(seed);
  nn::Ensemble one;
  one.members.push_back(static_model);

  const std::int64_t n = base.size();
  const std::int64_t per = base.images.numel() / n;
  Tensor images(base.images.shape());
  constexpr std::int64_t kShard = 128;
  for (std::int64_t start = 0; start < n; start += kShard) {
    const std::int64_t count = std::min(kShard, n - start);
    DatasetBundle shard = slice(base, start, count);
    // per-example budgets; the CE losses are separable across the batch, so
    // the batch-mean gradient sign equals each example's own gradient sign
    ad::Var xv = ad::leaf(shard.images, true);
    ad::Var loss = attacks::surrogate_loss(one, xv, shard.labels);
    Tensor dir = sign(ad::grad(loss, {xv})[0]->value);
    for (std::int64_t i = 0; i < count; ++i) {
      const double eps_i = eps > 0.0 ? std::fabs(rng.truncated_normal(eps / 2.0, eps)) : 0.0;
      for (std::int64_t j = 0; j < per; ++j) {
        const std::int64_t idx = (start + i) * per + j;
        images[idx] = std::min(1.0, std::max(0.0, base.images[idx] + eps_i * dir[i * per + j]));
      }
    }
  }
  return {std::move(images), base.labels, base.name + "+adv"};
}

}  // namespace divtrain::data
