#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace iapnet {

// Dense NCHW float tensor.
struct Tensor {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return c * h * w; }
  std::size_t plane() const { return h * w; }
  float* sample(std::size_t i) { return data.data() + i * sample_size(); }
  const float* sample(std::size_t i) const { return data.data() + i * sample_size(); }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel * kernel; }
  std::size_t weight_count() const { return out_channels * patch_size(); }
};

// Row-major matrix with `rows` samples of `cols` features.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
  float* row(std::size_t i) { return data.data() + i * cols; }
  const float* row(std::size_t i) const { return data.data() + i * cols; }
};

// OpenMP kernels used by the network. Every output element is produced by a
// single thread with a fixed summation order, so results do not depend on
// the thread count. Gradient outputs are overwritten, not accumulated.
namespace kernels {

void conv2d_forward(const Tensor& input, std::span<const float> weight, std::span<const float> bias,
                    const ConvGeometry& g, Tensor& output);

// grad_input may be null (first layer).
void conv2d_backward(const Tensor& input, std::span<const float> weight, const Tensor& grad_output,
                     const ConvGeometry& g, Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);

void linear_forward(const Matrix& input, std::span<const float> weight, std::span<const float> bias,
                    Matrix& output);
void linear_backward(const Matrix& input, std::span<const float> weight, const Matrix& grad_output,
                     Matrix* grad_input, std::span<float> grad_weight, std::span<float> grad_bias);

void relu_forward(Tensor& x);
// Zeroes grad where the forward output was not positive.
void relu_backward(const Tensor& output, Tensor& grad);

void add_inplace(Tensor& x, const Tensor& y);

// Average pooling down to pooled x pooled; h and w must be multiples of it.
void avgpool_forward(const Tensor& input, std::size_t pooled, Tensor& output);
void avgpool_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w, Tensor& grad_input);

// C[m x n] = A[m x k] * B[k x n], row-major.
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);

}  // namespace kernels

// Straightforward serial loops with the same contracts; the tests and the
// benchmark compare the parallel kernels against these.
namespace kernels::reference {

void conv2d_forward(const Tensor& input, std::span<const float> weight, std::span<const float> bias,
                    const ConvGeometry& g, Tensor& output);
void conv2d_backward(const Tensor& input, std::span<const float> weight, const Tensor& grad_output,
                     const ConvGeometry& g, Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);
void linear_forward(const Matrix& input, std::span<const float> weight, std::span<const float> bias,
                    Matrix& output);
void linear_backward(const Matrix& input, std::span<const float> weight, const Matrix& grad_output,
                     Matrix* grad_input, std::span<float> grad_weight, std::span<float> grad_bias);
void avgpool_forward(const Tensor& input, std::size_t pooled, Tensor& output);
void avgpool_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w, Tensor& grad_input);
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);

}  // namespace kernels::reference

}  // namespace iapnet
