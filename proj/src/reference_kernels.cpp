#include <algorithm>
#include <cstddef>

#include "unirep/kernels.hpp"

namespace unirep::reference {

namespace {

inline std::size_t at4(int a, int b, int c, int d, int nb, int nc, int nd) {
  return static_cast<std::size_t>(((static_cast<long>(a) * nb + b) * nc + c) * nd + d);
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, const float* b, float beta, float* c) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const float av = trans_a ? a[p * m + i] : a[i * k + p];
        const float bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += static_cast<double>(av) * bv;
      }
      const float prev = beta == 0.0f ? 0.0f : beta * c[i * n + j];
      c[i * n + j] = prev + alpha * static_cast<float>(acc);
    }
  }
}

void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> y) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < batch; ++n)
    for (int oc = 0; oc < g.out_channels; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < g.in_channels; ++ic)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * g.stride - g.pad + ki;
                const int ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += static_cast<double>(x[at4(n, ic, iy, ix, g.in_channels, g.in_h, g.in_w)]) *
                       weight[at4(oc, ic, ki, kj, g.in_channels, k, k)];
              }
          y[at4(n, oc, oy, ox, g.out_channels, oh, ow)] = static_cast<float>(acc);
        }
}

void conv2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                     std::span<const float> dy, std::span<const float> weight,
                     std::span<float> dx, std::span<float> dweight, std::span<float> dbias) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  std::fill(dx.begin(), dx.end(), 0.0f);
  for (int n = 0; n < batch; ++n)
    for (int oc = 0; oc < g.out_channels; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const float d = dy[at4(n, oc, oy, ox, g.out_channels, oh, ow)];
          if (!dbias.empty()) dbias[static_cast<std::size_t>(oc)] += d;
          for (int ic = 0; ic < g.in_channels; ++ic)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * g.stride - g.pad + ki;
                const int ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const std::size_t xi = at4(n, ic, iy, ix, g.in_channels, g.in_h, g.in_w);
                const std::size_t wi = at4(oc, ic, ki, kj, g.in_channels, k, k);
                dx[xi] += d * weight[wi];
                dweight[wi] += d * x[xi];
              }
        }
}

// The transposed convolution scatters every input pixel through the kernel:
// y[n, c, oy*s - p + ki, ox*s - p + kj] += x[n, ic, oy, ox] * w[ic, c, ki, kj].
void conv_transpose2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                              std::span<const float> weight, std::span<const float> bias,
                              std::span<float> y) {
  const int ih = g.out_h(), iw = g.out_w(), k = g.kernel;
  const int cin = g.out_channels, cout = g.in_channels;
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < cout; ++c)
      for (int p = 0; p < g.in_h * g.in_w; ++p)
        y[at4(n, c, 0, p, cout, 1, g.in_h * g.in_w)] =
            bias.empty() ? 0.0f : bias[static_cast<std::size_t>(c)];
  for (int n = 0; n < batch; ++n)
    for (int ic = 0; ic < cin; ++ic)
      for (int sy = 0; sy < ih; ++sy)
        for (int sx = 0; sx < iw; ++sx) {
          const float v = x[at4(n, ic, sy, sx, cin, ih, iw)];
          for (int c = 0; c < cout; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int ty = sy * g.stride - g.pad + ki;
                const int tx = sx * g.stride - g.pad + kj;
                if (ty < 0 || ty >= g.in_h || tx < 0 || tx >= g.in_w) continue;
                y[at4(n, c, ty, tx, cout, g.in_h, g.in_w)] +=
                    v * weight[at4(ic, c, ki, kj, cout, k, k)];
              }
        }
}

void conv_transpose2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                               std::span<const float> dy, std::span<const float> weight,
                               std::span<float> dx, std::span<float> dweight,
                               std::span<float> dbias) {
  const int ih = g.out_h(), iw = g.out_w(), k = g.kernel;
  const int cin = g.out_channels, cout = g.in_channels;
  std::fill(dx.begin(), dx.end(), 0.0f);
  if (!dbias.empty())
    for (int n = 0; n < batch; ++n)
      for (int c = 0; c < cout; ++c)
        for (int p = 0; p < g.in_h * g.in_w; ++p)
          dbias[static_cast<std::size_t>(c)] += dy[at4(n, c, 0, p, cout, 1, g.in_h * g.in_w)];
  for (int n = 0; n < batch; ++n)
    for (int ic = 0; ic < cin; ++ic)
      for (int sy = 0; sy < ih; ++sy)
        for (int sx = 0; sx < iw; ++sx) {
          const std::size_t xi = at4(n, ic, sy, sx, cin, ih, iw);
          for (int c = 0; c < cout; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int ty = sy * g.stride - g.pad + ki;
                const int tx = sx * g.stride - g.pad + kj;
                if (ty < 0 || ty >= g.in_h || tx < 0 || tx >= g.in_w) continue;
                const float d = dy[at4(n, c, ty, tx, cout, g.in_h, g.in_w)];
                const std::size_t wi = at4(ic, c, ki, kj, cout, k, k);
                dx[xi] += d * weight[wi];
                dweight[wi] += d * x[xi];
              }
        }
}

}  // namespace unirep::reference
