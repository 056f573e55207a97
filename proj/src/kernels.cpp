#include "unirep/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#include <omp.h>

namespace unirep::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelThreshold = 1L << 15;

inline std::size_t idx(long a) { return static_cast<std::size_t>(a); }

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, const float* b, float beta, float* c) {
  const long work = static_cast<long>(m) * n * k;
  if (!trans_b) {
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int i = 0; i < m; ++i) {
      float* crow = c + idx(static_cast<long>(i) * n);
      if (beta == 0.0f) {
        std::fill(crow, crow + n, 0.0f);
      } else if (beta != 1.0f) {
        for (int j = 0; j < n; ++j) crow[j] *= beta;
      }
      for (int p = 0; p < k; ++p) {
        const float aip = alpha * (trans_a ? a[idx(static_cast<long>(p) * m + i)]
                                           : a[idx(static_cast<long>(i) * k + p)]);
        if (aip == 0.0f) continue;
        const float* brow = b + idx(static_cast<long>(p) * n);
#pragma omp simd
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
    return;
  }
  // op(B) = B^T with B stored n x k: each output is a contiguous dot product
  // when A is not transposed.
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (int i = 0; i < m; ++i) {
    float* crow = c + idx(static_cast<long>(i) * n);
    std::vector<float> arow;
    const float* ai = nullptr;
    if (trans_a) {
      arow.resize(idx(k));
      for (int p = 0; p < k; ++p) arow[idx(p)] = a[idx(static_cast<long>(p) * m + i)];
      ai = arow.data();
    } else {
      ai = a + idx(static_cast<long>(i) * k);
    }
    for (int j = 0; j < n; ++j) {
      const float* bj = b + idx(static_cast<long>(j) * k);
      float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      crow[j] = (beta == 0.0f ? 0.0f : beta * crow[j]) + alpha * acc;
    }
  }
}

void im2col(const ConvGeometry& g, const float* image, float* col) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int ch = 0; ch < g.in_channels; ++ch) {
    const float* plane = image + idx(static_cast<long>(ch) * g.in_h * g.in_w);
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + idx((static_cast<long>(ch) * k * k + ki * k + kj) * oh * ow);
        for (int y = 0; y < oh; ++y) {
          const int iy = y * g.stride - g.pad + ki;
          float* out = row + idx(static_cast<long>(y) * ow);
          if (iy < 0 || iy >= g.in_h) {
            std::fill(out, out + ow, 0.0f);
            continue;
          }
          const float* in = plane + idx(static_cast<long>(iy) * g.in_w);
          for (int x = 0; x < ow; ++x) {
            const int ix = x * g.stride - g.pad + kj;
            out[x] = (ix >= 0 && ix < g.in_w) ? in[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const float* col, float* image) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int ch = 0; ch < g.in_channels; ++ch) {
    float* plane = image + idx(static_cast<long>(ch) * g.in_h * g.in_w);
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col + idx((static_cast<long>(ch) * k * k + ki * k + kj) * oh * ow);
        for (int y = 0; y < oh; ++y) {
          const int iy = y * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.in_h) continue;
          const float* in = row + idx(static_cast<long>(y) * ow);
          float* out = plane + idx(static_cast<long>(iy) * g.in_w);
          for (int x = 0; x < ow; ++x) {
            const int ix = x * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.in_w) out[ix] += in[x];
          }
        }
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> y, std::span<float> col_cache) {
  const long in_size = static_cast<long>(g.in_channels) * g.in_h * g.in_w;
  const long col_size = static_cast<long>(g.col_rows()) * g.col_cols();
  const int npos = g.col_cols();
  const long out_size = static_cast<long>(g.out_channels) * npos;
  const bool cache = !col_cache.empty();
#pragma omp parallel if (batch > 1)
  {
    std::vector<float> local;
    if (!cache) local.resize(idx(col_size));
#pragma omp for schedule(static)
    for (int n = 0; n < batch; ++n) {
      float* col = cache ? col_cache.data() + idx(n * col_size) : local.data();
      im2col(g, x.data() + idx(n * in_size), col);
      float* yn = y.data() + idx(n * out_size);
      gemm(false, false, g.out_channels, npos, g.col_rows(), 1.0f, weight.data(), col, 0.0f, yn);
      if (!bias.empty()) {
        for (int oc = 0; oc < g.out_channels; ++oc) {
          const float bv = bias[idx(oc)];
          float* row = yn + idx(static_cast<long>(oc) * npos);
#pragma omp simd
          for (int p = 0; p < npos; ++p) row[p] += bv;
        }
      }
    }
  }
}

void conv2d_backward_data(const ConvGeometry& g, int batch, std::span<const float> dy,
                          std::span<const float> weight, std::span<float> dx) {
  const long in_size = static_cast<long>(g.in_channels) * g.in_h * g.in_w;
  const long col_size = static_cast<long>(g.col_rows()) * g.col_cols();
  const int npos = g.col_cols();
  const long out_size = static_cast<long>(g.out_channels) * npos;
#pragma omp parallel if (batch > 1)
  {
    std::vector<float> col(idx(col_size));
#pragma omp for schedule(static)
    for (int n = 0; n < batch; ++n) {
      gemm(true, false, g.col_rows(), npos, g.out_channels, 1.0f, weight.data(),
           dy.data() + idx(n * out_size), 0.0f, col.data());
      float* dxn = dx.data() + idx(n * in_size);
      std::fill(dxn, dxn + in_size, 0.0f);
      col2im(g, col.data(), dxn);
    }
  }
}

void conv2d_backward_filter(const ConvGeometry& g, int batch, std::span<const float> dy,
                            std::span<const float> col_cache, std::span<float> dweight,
                            std::span<float> dbias) {
  const long col_size = static_cast<long>(g.col_rows()) * g.col_cols();
  const int npos = g.col_cols();
  const long out_size = static_cast<long>(g.out_channels) * npos;
  // Images are reduced in order; the filter rows are split across threads
  // inside gemm, which keeps the sum order fixed.
  for (int n = 0; n < batch; ++n) {
    gemm(false, true, g.out_channels, g.col_rows(), npos, 1.0f, dy.data() + idx(n * out_size),
         col_cache.data() + idx(n * col_size), 1.0f, dweight.data());
  }
  if (!dbias.empty()) {
    for (int oc = 0; oc < g.out_channels; ++oc) {
      float acc = 0.0f;
      for (int n = 0; n < batch; ++n) {
        const float* row = dy.data() + idx(n * out_size + static_cast<long>(oc) * npos);
        for (int p = 0; p < npos; ++p) acc += row[p];
      }
      dbias[idx(oc)] += acc;
    }
  }
}

void conv_transpose2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                              std::span<const float> weight, std::span<const float> bias,
                              std::span<float> y) {
  // Transposed convolution = data gradient of the forward convolution `g`.
  conv2d_backward_data(g, batch, x, weight, y);
  if (bias.empty()) return;
  const long plane = static_cast<long>(g.in_h) * g.in_w;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < g.in_channels; ++c) {
      float* row = y.data() + idx((static_cast<long>(n) * g.in_channels + c) * plane);
      const float bv = bias[idx(c)];
      for (long p = 0; p < plane; ++p) row[p] += bv;
    }
  }
}

void conv_transpose2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                               std::span<const float> dy, std::span<const float> weight,
                               std::span<float> dx, std::span<float> dweight,
                               std::span<float> dbias) {
  const long col_size = static_cast<long>(g.col_rows()) * g.col_cols();
  std::vector<float> cols(idx(batch * col_size));
  // dx = conv(dy); the im2col buffers double as the filter-gradient operand.
  std::vector<float> zero_bias;
  conv2d_forward(g, batch, dy, weight, zero_bias, dx, cols);
  const int npos = g.col_cols();
  const long in_size = static_cast<long>(g.out_channels) * npos;
  for (int n = 0; n < batch; ++n) {
    gemm(false, true, g.out_channels, g.col_rows(), npos, 1.0f, x.data() + idx(n * in_size),
         cols.data() + idx(n * col_size), 1.0f, dweight.data());
  }
  if (!dbias.empty()) {
    const long plane = static_cast<long>(g.in_h) * g.in_w;
    for (int c = 0; c < g.in_channels; ++c) {
      float acc = 0.0f;
      for (int n = 0; n < batch; ++n) {
        const float* row = dy.data() + idx((static_cast<long>(n) * g.in_channels + c) * plane);
        for (long p = 0; p < plane; ++p) acc += row[p];
      }
      dbias[idx(c)] += acc;
    }
  }
}

}  // namespace unirep::kernels
