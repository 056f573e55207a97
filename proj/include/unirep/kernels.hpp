#pragma once

#include <span>

namespace unirep::kernels {

/// Geometry of a 2-D cross-correlation with square kernel, symmetric padding.
struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int in_h = 0;
  int in_w = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  /// Rows of the im2col matrix.
  int col_rows() const { return in_channels * kernel * kernel; }
  int col_cols() const { return out_h() * out_w(); }
};

/// Row-major C = alpha * op(A) * op(B) + beta * C with op(A): MxK, op(B): KxN.
/// Rows of C are distributed over OpenMP threads; each row is reduced by a
/// single thread, so results do not depend on the thread count.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, const float* b, float beta, float* c);

void im2col(const ConvGeometry& g, const float* image, float* col);
/// Accumulates columns back into an image (image is NOT cleared).
void col2im(const ConvGeometry& g, const float* col, float* image);

/// y[n] = W * im2col(x[n]) + bias. W is out_channels x col_rows.
/// `col_cache` (batch * col_rows * col_cols) receives the im2col buffers when
/// non-empty so the filter gradient can reuse them.
void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> y, std::span<float> col_cache = {});
/// dx[n] = col2im(W^T * dy[n]); dx is overwritten.
void conv2d_backward_data(const ConvGeometry& g, int batch, std::span<const float> dy,
                          std::span<const float> weight, std::span<float> dx);
/// dW += sum_n dy[n] * col[n]^T, db += sum over positions of dy.
void conv2d_backward_filter(const ConvGeometry& g, int batch, std::span<const float> dy,
                            std::span<const float> col_cache, std::span<float> dweight,
                            std::span<float> dbias);

/// Transposed convolution expressed through `g`, the geometry of the forward
/// convolution it transposes: input has g.out_channels channels at
/// g.out_h() x g.out_w(), output has g.in_channels channels at g.in_h x g.in_w.
/// Weight layout (g.out_channels, g.in_channels, k, k).
void conv_transpose2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                              std::span<const float> weight, std::span<const float> bias,
                              std::span<float> y);
void conv_transpose2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                               std::span<const float> dy, std::span<const float> weight,
                               std::span<float> dx, std::span<float> dweight,
                               std::span<float> dbias);

}  // namespace unirep::kernels

/// Direct-loop serial implementations. They are slow and kept for testing
/// and benchmarking the kernels above.
namespace unirep::reference {

using kernels::ConvGeometry;

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, const float* b, float beta, float* c);
void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> y);
void conv2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                     std::span<const float> dy, std::span<const float> weight,
                     std::span<float> dx, std::span<float> dweight, std::span<float> dbias);
void conv_transpose2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                              std::span<const float> weight, std::span<const float> bias,
                              std::span<float> y);
void conv_transpose2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                               std::span<const float> dy, std::span<const float> weight,
                               std::span<float> dx, std::span<float> dweight,
                               std::span<float> dbias);

}  // namespace unirep::reference
