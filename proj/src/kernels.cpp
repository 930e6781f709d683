#include "iapnet/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstring>

#include "iapnet/error.hpp"

namespace iapnet::kernels {

namespace {

// C[m x n] += A[m x k] * B[k x n] with leading dimensions equal to the
// logical widths. Four rows of C share each streamed row of B.
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const float* __restrict a,
                     const float* __restrict b, float* __restrict c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    float* __restrict c0 = c + (i + 0) * n;
    float* __restrict c1 = c + (i + 1) * n;
    float* __restrict c2 = c + (i + 2) * n;
    float* __restrict c3 = c + (i + 3) * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float a0 = a[(i + 0) * k + p];
      const float a1 = a[(i + 1) * k + p];
      const float a2 = a[(i + 2) * k + p];
      const float a3 = a[(i + 3) * k + p];
      const float* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const float bv = brow[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    float* __restrict ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      const float* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * brow[j];
    }
  }
}

// col[kk][p] with kk = (ci*K + ky)*K + kx and p = oy*Wo + ox.
void im2col(const float* src, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t ho,
            std::size_t wo, float* col) {
  const std::size_t k = g.kernel;
  const std::size_t plane_out = ho * wo;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const float* chan = src + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* dst = col + ((ci * k + ky) * k + kx) * plane_out;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          float* row = dst + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row, row + wo, 0.0f);
            continue;
          }
          const float* srow = chan + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? 0.0f : srow[ix];
          }
        }
      }
    }
  }
}

// Transposed layout colt[p][kk].
void im2col_transposed(const float* src, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t ho,
                       std::size_t wo, float* colt) {
  const std::size_t k = g.kernel;
  const std::size_t patch = g.patch_size();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      float* dst = colt + (oy * wo + ox) * patch;
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const float* chan = src + ci * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          const bool row_ok = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            *dst++ = (row_ok && ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
                         ? chan[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)]
                         : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t ho, std::size_t wo,
            float* dst) {
  const std::size_t k = g.kernel;
  const std::size_t plane_out = ho * wo;
  std::fill(dst, dst + g.in_channels * h * w, 0.0f);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    float* chan = dst + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* src = col + ((ci * k + ky) * k + kx) * plane_out;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          float* drow = chan + static_cast<std::size_t>(iy) * w;
          const float* srow = src + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

void check_conv(const Tensor& input, std::span<const float> weight, const ConvGeometry& g) {
  if (input.c != g.in_channels) throw ShapeError("conv2d: input channel mismatch");
  if (weight.size() != g.weight_count()) throw ShapeError("conv2d: weight size mismatch");
  if (input.h + 2 * g.pad < g.kernel || input.w + 2 * g.pad < g.kernel) throw ShapeError("conv2d: input too small");
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  constexpr std::size_t kRowBlock = 16;
  const auto blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - r0);
    std::fill(c + r0 * n, c + (r0 + rows) * n, 0.0f);
    gemm_accumulate(rows, n, k, a + r0 * k, b, c + r0 * n);
  }
}

void conv2d_forward(const Tensor& input, std::span<const float> weight, std::span<const float> bias,
                    const ConvGeometry& g, Tensor& output) {
  check_conv(input, weight, g);
  const std::size_t ho = g.out_extent(input.h), wo = g.out_extent(input.w);
  if (!(output.n == input.n && output.c == g.out_channels && output.h == ho && output.w == wo)) {
    output = Tensor(input.n, g.out_channels, ho, wo);
  }
  const std::size_t plane_out = ho * wo;
  const auto n = static_cast<std::ptrdiff_t>(input.n);
#pragma omp parallel
  {
    std::vector<float> col(g.patch_size() * plane_out);
#pragma omp for schedule(static)
    for (std::ptrdiff_t s = 0; s < n; ++s) {
      im2col(input.sample(static_cast<std::size_t>(s)), input.h, input.w, g, ho, wo, col.data());
      float* out = output.sample(static_cast<std::size_t>(s));
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        std::fill(out + co * plane_out, out + (co + 1) * plane_out, bias.empty() ? 0.0f : bias[co]);
      }
      gemm_accumulate(g.out_channels, plane_out, g.patch_size(), weight.data(), col.data(), out);
    }
  }
}

void conv2d_backward(const Tensor& input, std::span<const float> weight, const Tensor& grad_output,
                     const ConvGeometry& g, Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias) {
  check_conv(input, weight, g);
  const std::size_t ho = g.out_extent(input.h), wo = g.out_extent(input.w);
  if (!(grad_output.n == input.n && grad_output.c == g.out_channels && grad_output.h == ho && grad_output.w == wo)) {
    throw ShapeError("conv2d_backward: grad_output shape mismatch");
  }
  if (grad_weight.size() != g.weight_count()) throw ShapeError("conv2d_backward: grad_weight size mismatch");
  const std::size_t plane_out = ho * wo;
  const std::size_t patch = g.patch_size();
  const std::size_t wcount = g.weight_count();
  if (grad_input && !(grad_input->n == input.n && grad_input->c == input.c && grad_input->h == input.h &&
                      grad_input->w == input.w)) {
    *grad_input = Tensor(input.n, input.c, input.h, input.w);
  }

  // Transposed weights [patch x out_channels] for the input gradient.
  std::vector<float> weight_t(wcount);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t kk = 0; kk < patch; ++kk) weight_t[kk * g.out_channels + co] = weight[co * patch + kk];
  }

  std::vector<float> partial(input.n * wcount, 0.0f);
  const auto n = static_cast<std::ptrdiff_t>(input.n);
#pragma omp parallel
  {
    std::vector<float> colt(plane_out * patch);
    std::vector<float> gcol(grad_input ? patch * plane_out : 0);
#pragma omp for schedule(static)
    for (std::ptrdiff_t s = 0; s < n; ++s) {
      const auto si = static_cast<std::size_t>(s);
      const float* gout = grad_output.sample(si);
      im2col_transposed(input.sample(si), input.h, input.w, g, ho, wo, colt.data());
      gemm_accumulate(g.out_channels, patch, plane_out, gout, colt.data(), partial.data() + si * wcount);
      if (grad_input) {
        std::fill(gcol.begin(), gcol.end(), 0.0f);
        gemm_accumulate(patch, plane_out, g.out_channels, weight_t.data(), gout, gcol.data());
        col2im(gcol.data(), input.h, input.w, g, ho, wo, grad_input->sample(si));
      }
    }
  }

  const auto wc = static_cast<std::ptrdiff_t>(wcount);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < wc; ++j) {
    float acc = 0.0f;
    for (std::size_t s = 0; s < input.n; ++s) acc += partial[s * wcount + static_cast<std::size_t>(j)];
    grad_weight[static_cast<std::size_t>(j)] = acc;
  }
  if (!grad_bias.empty()) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      float acc = 0.0f;
      for (std::size_t s = 0; s < input.n; ++s) {
        const float* gp = grad_output.sample(s) + co * plane_out;
        float plane_sum = 0.0f;
        for (std::size_t p = 0; p < plane_out; ++p) plane_sum += gp[p];
        acc += plane_sum;
      }
      grad_bias[co] = acc;
    }
  }
}

void linear_forward(const Matrix& input, std::span<const float> weight, std::span<const float> bias,
                    Matrix& output) {
  const std::size_t out_features = bias.size();
  if (weight.size() != out_features * input.cols) throw ShapeError("linear: weight size mismatch");
  if (output.rows != input.rows || output.cols != out_features) output = Matrix(input.rows, out_features);
  const auto rows = static_cast<std::ptrdiff_t>(input.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const float* x = input.row(static_cast<std::size_t>(r));
    float* y = output.row(static_cast<std::size_t>(r));
    for (std::size_t o = 0; o < out_features; ++o) {
      const float* wrow = weight.data() + o * input.cols;
      float acc = 0.0f;
      for (std::size_t f = 0; f < input.cols; ++f) acc += wrow[f] * x[f];
      y[o] = acc + bias[o];
    }
  }
}

void linear_backward(const Matrix& input, std::span<const float> weight, const Matrix& grad_output,
                     Matrix* grad_input, std::span<float> grad_weight, std::span<float> grad_bias) {
  const std::size_t out_features = grad_output.cols;
  const std::size_t features = input.cols;
  if (grad_output.rows != input.rows || weight.size() != out_features * features ||
      grad_weight.size() != weight.size() || grad_bias.size() != out_features) {
    throw ShapeError("linear_backward: shape mismatch");
  }
  const auto outs = static_cast<std::ptrdiff_t>(out_features);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t oi = 0; oi < outs; ++oi) {
    const auto o = static_cast<std::size_t>(oi);
    float* gw = grad_weight.data() + o * features;
    std::fill(gw, gw + features, 0.0f);
    float gb = 0.0f;
    for (std::size_t r = 0; r < input.rows; ++r) {
      const float go = grad_output.row(r)[o];
      gb += go;
      const float* x = input.row(r);
      for (std::size_t f = 0; f < features; ++f) gw[f] += go * x[f];
    }
    grad_bias[o] = gb;
  }
  if (grad_input) {
    if (grad_input->rows != input.rows || grad_input->cols != features) *grad_input = Matrix(input.rows, features);
    const auto rows = static_cast<std::ptrdiff_t>(input.rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      float* gx = grad_input->row(static_cast<std::size_t>(r));
      std::fill(gx, gx + features, 0.0f);
      const float* go = grad_output.row(static_cast<std::size_t>(r));
      for (std::size_t o = 0; o < out_features; ++o) {
        const float* wrow = weight.data() + o * features;
        for (std::size_t f = 0; f < features; ++f) gx[f] += go[o] * wrow[f];
      }
    }
  }
}

void relu_forward(Tensor& x) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  float* d = x.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) d[i] = d[i] > 0.0f ? d[i] : 0.0f;
}

void relu_backward(const Tensor& output, Tensor& grad) {
  if (!output.same_shape(grad)) throw ShapeError("relu_backward: shape mismatch");
  const auto n = static_cast<std::ptrdiff_t>(grad.size());
  const float* o = output.data.data();
  float* g = grad.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) g[i] = o[i] > 0.0f ? g[i] : 0.0f;
}

void add_inplace(Tensor& x, const Tensor& y) {
  if (!x.same_shape(y)) throw ShapeError("add_inplace: shape mismatch");
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  float* a = x.data.data();
  const float* b = y.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) a[i] += b[i];
}

void avgpool_forward(const Tensor& input, std::size_t pooled, Tensor& output) {
  if (pooled == 0 || input.h % pooled != 0 || input.w % pooled != 0) {
    throw ShapeError("avgpool: extent must be a multiple of the pooled size");
  }
  const std::size_t bh = input.h / pooled, bw = input.w / pooled;
  if (!(output.n == input.n && output.c == input.c && output.h == pooled && output.w == pooled)) {
    output = Tensor(input.n, input.c, pooled, pooled);
  }
  const float inv = 1.0f / static_cast<float>(bh * bw);
  const auto planes = static_cast<std::ptrdiff_t>(input.n * input.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < planes; ++pi) {
    const float* src = input.data.data() + static_cast<std::size_t>(pi) * input.plane();
    float* dst = output.data.data() + static_cast<std::size_t>(pi) * pooled * pooled;
    for (std::size_t py = 0; py < pooled; ++py) {
      for (std::size_t px = 0; px < pooled; ++px) {
        float acc = 0.0f;
        for (std::size_t y = py * bh; y < (py + 1) * bh; ++y) {
          for (std::size_t x = px * bw; x < (px + 1) * bw; ++x) acc += src[y * input.w + x];
        }
        dst[py * pooled + px] = acc * inv;
      }
    }
  }
}

void avgpool_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w, Tensor& grad_input) {
  const std::size_t pooled = grad_output.h;
  if (pooled == 0 || grad_output.w != pooled || in_h % pooled != 0 || in_w % pooled != 0) {
    throw ShapeError("avgpool_backward: shape mismatch");
  }
  const std::size_t bh = in_h / pooled, bw = in_w / pooled;
  if (!(grad_input.n == grad_output.n && grad_input.c == grad_output.c && grad_input.h == in_h &&
        grad_input.w == in_w)) {
    grad_input = Tensor(grad_output.n, grad_output.c, in_h, in_w);
  }
  const float inv = 1.0f / static_cast<float>(bh * bw);
  const auto planes = static_cast<std::ptrdiff_t>(grad_output.n * grad_output.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < planes; ++pi) {
    const float* src = grad_output.data.data() + static_cast<std::size_t>(pi) * pooled * pooled;
    float* dst = grad_input.data.data() + static_cast<std::size_t>(pi) * in_h * in_w;
    for (std::size_t y = 0; y < in_h; ++y) {
      for (std::size_t x = 0; x < in_w; ++x) dst[y * in_w + x] = src[(y / bh) * pooled + x / bw] * inv;
    }
  }
}

}  // namespace iapnet::kernels
