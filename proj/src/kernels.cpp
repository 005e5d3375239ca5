#include "kernels.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace divtrain::ad::kernels {

namespace {

// Training allocates and frees megabyte tensors every op; keeping freed
// blocks in the heap instead of returning them to the kernel roughly halves
// step time on page-fault-heavy hosts.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  }
};
const MallocTuning malloc_tuning;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: operands must be 2-D, got " + a.shape_str() + " and " + b.shape_str());
  require(a.dim(1) == b.dim(0),
          "matmul: inner dims disagree, " + a.shape_str() + " vs " + b.shape_str());
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for if (m * n * k > 16384)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: operand must be 2-D, got " + a.shape_str());
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

// The three conv kernels share a shift-and-accumulate structure: for each
// kernel offset, a contiguous run of the source row feeds a contiguous run of
// the destination row. Accumulation order per output element is fixed by the
// (channel, ky, kx) loop order, so results do not depend on the thread count.

Tensor conv2d(const Tensor& x, const Tensor& w) {
  require(x.rank() == 4, "conv2d: input must be NCHW 4-D, got " + x.shape_str());
  require(w.rank() == 4, "conv2d: weight must be [out,in,k,k], got " + w.shape_str());
  require(w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1,
          "conv2d: kernel must be square with odd size, got " + w.shape_str());
  require(x.dim(1) == w.dim(1),
          "conv2d: channel mismatch, input " + x.shape_str() + " vs weight " + w.shape_str());
  const std::int64_t bsz = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const std::int64_t co = w.dim(0), k = w.dim(2), pad = (k - 1) / 2;
  Tensor y({bsz, co, h, ww});
  const double* px = x.data();
  const double* pw = w.data();
  double* py = y.data();
#pragma omp parallel for collapse(2) if (bsz * co * h * ww * ci * k * k > 32768)
  for (std::int64_t b = 0; b < bsz; ++b) {
    for (std::int64_t oc = 0; oc < co; ++oc) {
      double* out_plane = py + (b * co + oc) * h * ww;
      for (std::int64_t ic = 0; ic < ci; ++ic) {
        const double* in_plane = px + (b * ci + ic) * h * ww;
        const double* wc = pw + (oc * ci + ic) * k * k;
        for (std::int64_t ky = 0; ky < k; ++ky) {
          const std::int64_t dy = ky - pad;
          const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
          const std::int64_t y1 = std::min(h, h - dy);
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const double wv = wc[ky * k + kx];
            if (wv == 0.0) continue;
            const std::int64_t dx = kx - pad;
            const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
            const std::int64_t x1 = std::min(ww, ww - dx);
            for (std::int64_t yy = y0; yy < y1; ++yy) {
              double* dst = out_plane + yy * ww;
              const double* src = in_plane + (yy + dy) * ww + dx;
              for (std::int64_t xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor conv2d_grad_input(const Tensor& g, const Tensor& w) {
  require(g.rank() == 4 && w.rank() == 4, "conv2d_grad_input: operands must be 4-D");
  require(g.dim(1) == w.dim(0), "conv2d_grad_input: channel mismatch, grad " + g.shape_str() +
                                    " vs weight " + w.shape_str());
  const std::int64_t bsz = g.dim(0), co = g.dim(1), h = g.dim(2), ww = g.dim(3);
  const std::int64_t ci = w.dim(1), k = w.dim(2), pad = (k - 1) / 2;
  Tensor gx({bsz, ci, h, ww});
  const double* pg = g.data();
  const double* pw = w.data();
  double* px = gx.data();
#pragma omp parallel for collapse(2) if (bsz * co * h * ww * ci * k * k > 32768)
  for (std::int64_t b = 0; b < bsz; ++b) {
    for (std::int64_t ic = 0; ic < ci; ++ic) {
      double* out_plane = px + (b * ci + ic) * h * ww;
      for (std::int64_t oc = 0; oc < co; ++oc) {
        const double* g_plane = pg + (b * co + oc) * h * ww;
        const double* wc = pw + (oc * ci + ic) * k * k;
        for (std::int64_t ky = 0; ky < k; ++ky) {
          const std::int64_t dy = pad - ky;  // gx[y] pulls from g[y + dy]
          const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
          const std::int64_t y1 = std::min(h, h - dy);
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const double wv = wc[ky * k + kx];
            if (wv == 0.0) continue;
            const std::int64_t dx = pad - kx;
            const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
            const std::int64_t x1 = std::min(ww, ww - dx);
            for (std::int64_t yy = y0; yy < y1; ++yy) {
              double* dst = out_plane + yy * ww;
              const double* src = g_plane + (yy + dy) * ww + dx;
              for (std::int64_t xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
            }
          }
        }
      }
    }
  }
  return gx;
}

Tensor conv2d_grad_weight(const Tensor& g, const Tensor& x, std::int64_t kernel) {
  require(g.rank() == 4 && x.rank() == 4, "conv2d_grad_weight: operands must be 4-D");
  require(g.dim(0) == x.dim(0) && g.dim(2) == x.dim(2) && g.dim(3) == x.dim(3),
          "conv2d_grad_weight: batch/spatial mismatch, " + g.shape_str() + " vs " + x.shape_str());
  const std::int64_t bsz = g.dim(0), co = g.dim(1), h = g.dim(2), ww = g.dim(3);
  const std::int64_t ci = x.dim(1), k = kernel, pad = (k - 1) / 2;
  Tensor gw({co, ci, k, k});
  const double* pg = g.data();
  const double* px = x.data();
  double* pw = gw.data();
#pragma omp parallel for collapse(2) if (bsz * co * h * ww * ci * k * k > 32768)
  for (std::int64_t oc = 0; oc < co; ++oc) {
    for (std::int64_t ic = 0; ic < ci; ++ic) {
      double* wc = pw + (oc * ci + ic) * k * k;
      for (std::int64_t ky = 0; ky < k; ++ky) {
        const std::int64_t dy = ky - pad;  // x row yy+dy pairs with g row yy
        const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
        const std::int64_t y1 = std::min(h, h - dy);
        for (std::int64_t kx = 0; kx < k; ++kx) {
          const std::int64_t dx = kx - pad;
          const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
          const std::int64_t x1 = std::min(ww, ww - dx);
          double acc = 0.0;
          for (std::int64_t b = 0; b < bsz; ++b) {
            const double* g_plane = pg + (b * co + oc) * h * ww;
            const double* x_plane = px + (b * ci + ic) * h * ww;
            for (std::int64_t yy = y0; yy < y1; ++yy) {
              const double* grow = g_plane + yy * ww;
              const double* xrow = x_plane + (yy + dy) * ww + dx;
              double row_acc = 0.0;
              for (std::int64_t xx = x0; xx < x1; ++xx) row_acc += grow[xx] * xrow[xx];
              acc += row_acc;
            }
          }
          wc[ky * k + kx] = acc;
        }
      }
    }
  }
  return gw;
}

Tensor maxpool2x2(const Tensor& x, std::vector<std::int64_t>& argmax_flat) {
  require(x.rank() == 4, "maxpool2x2: input must be NCHW 4-D, got " + x.shape_str());
  require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
          "maxpool2x2: spatial dims must be even, got " + x.shape_str());
  const std::int64_t bsz = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor y({bsz, c, oh, ow});
  argmax_flat.assign(static_cast<std::size_t>(y.numel()), 0);
  for (std::int64_t b = 0; b < bsz; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (b * c + ch) * h * w;
      for (std::int64_t yy = 0; yy < oh; ++yy) {
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          std::int64_t best_idx = base + (2 * yy) * w + 2 * xx;
          double best = x[best_idx];
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t idx = base + (2 * yy + dy) * w + (2 * xx + dx);
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          const std::int64_t out_idx = ((b * c + ch) * oh + yy) * ow + xx;
          y[out_idx] = best;
          argmax_flat[static_cast<std::size_t>(out_idx)] = best_idx;
        }
      }
    }
  }
  return y;
}

Tensor max_unpool(const Tensor& pooled, const std::vector<std::int64_t>& argmax_flat,
                  const std::vector<std::int64_t>& input_shape) {
  require(static_cast<std::size_t>(pooled.numel()) == argmax_flat.size(),
          "max_unpool: pooled size does not match recorded indices");
  Tensor out(input_shape);
  for (std::int64_t i = 0; i < pooled.numel(); ++i)
    out[argmax_flat[static_cast<std::size_t>(i)]] += pooled[i];
  return out;
}

Tensor take_flat(const Tensor& src, const std::vector<std::int64_t>& argmax_flat,
                 const std::vector<std::int64_t>& out_shape) {
  Tensor out(out_shape);
  require(static_cast<std::size_t>(out.numel()) == argmax_flat.size(),
          "take_flat: output size does not match recorded indices");
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = src[argmax_flat[static_cast<std::size_t>(i)]];
  return out;
}

Tensor log_softmax_nll(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  require(logits.rank() == 2, "log_softmax_nll: logits must be [B,C], got " + logits.shape_str());
  const std::int64_t bsz = logits.dim(0), c = logits.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == bsz,
          "log_softmax_nll: label count does not match batch size");
  double total = 0.0;
  for (std::int64_t b = 0; b < bsz; ++b) {
    const std::int64_t y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= c)
      throw ValueError("log_softmax_nll: label " + std::to_string(y) + " out of range [0," +
                       std::to_string(c) + ")");
    const double* row = logits.data() + b * c;
    double m = row[0];
    for (std::int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - m);
    total += (m + std::log(sum)) - row[y];
  }
  return Tensor::scalar(total / static_cast<double>(bsz));
}

}  // namespace divtrain::ad::kernels
