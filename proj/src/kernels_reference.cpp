#include <algorithm>

#include "iapnet/error.hpp"
#include "iapnet/kernels.hpp"

namespace iapnet::kernels::reference {

namespace {

float input_at(const Tensor& t, std::size_t n, std::size_t c, std::ptrdiff_t y, std::ptrdiff_t x) {
  if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(t.h) || x >= static_cast<std::ptrdiff_t>(t.w)) return 0.0f;
  return t.data[((n * t.c + c) * t.h + static_cast<std::size_t>(y)) * t.w + static_cast<std::size_t>(x)];
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<float>(acc);
    }
  }
}

void conv2d_forward(const Tensor& input, std::span<const float> weight, std::span<const float> bias,
                    const ConvGeometry& g, Tensor& output) {
  if (input.c != g.in_channels || weight.size() != g.weight_count()) throw ShapeError("conv2d: shape mismatch");
  const std::size_t ho = g.out_extent(input.h), wo = g.out_extent(input.w), k = g.kernel;
  output = Tensor(input.n, g.out_channels, ho, wo);
  for (std::size_t n = 0; n < input.n; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                acc += static_cast<double>(weight[((co * g.in_channels + ci) * k + ky) * k + kx]) *
                       input_at(input, n, ci, iy, ix);
              }
            }
          }
          output.data[((n * g.out_channels + co) * ho + oy) * wo + ox] = static_cast<float>(acc);
        }
      }
    }
  }
}

void conv2d_backward(const Tensor& input, std::span<const float> weight, const Tensor& grad_output,
                     const ConvGeometry& g, Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias) {
  const std::size_t ho = g.out_extent(input.h), wo = g.out_extent(input.w), k = g.kernel;
  if (grad_output.c != g.out_channels || grad_output.h != ho || grad_output.w != wo ||
      grad_weight.size() != g.weight_count()) {
    throw ShapeError("conv2d_backward: shape mismatch");
  }
  std::vector<double> gw(g.weight_count(), 0.0), gb(g.out_channels, 0.0);
  std::vector<double> gi(input.size(), 0.0);
  for (std::size_t n = 0; n < input.n; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double go = grad_output.data[((n * g.out_channels + co) * ho + oy) * wo + ox];
          gb[co] += go;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                const std::size_t widx = ((co * g.in_channels + ci) * k + ky) * k + kx;
                gw[widx] += go * input_at(input, n, ci, iy, ix);
                if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(input.h) &&
                    ix < static_cast<std::ptrdiff_t>(input.w)) {
                  gi[((n * input.c + ci) * input.h + static_cast<std::size_t>(iy)) * input.w +
                     static_cast<std::size_t>(ix)] += go * weight[widx];
                }
              }
            }
          }
        }
      }
    }
  }
  std::transform(gw.begin(), gw.end(), grad_weight.begin(), [](double v) { return static_cast<float>(v); });
  if (!grad_bias.empty()) {
    std::transform(gb.begin(), gb.end(), grad_bias.begin(), [](double v) { return static_cast<float>(v); });
  }
  if (grad_input) {
    *grad_input = Tensor(input.n, input.c, input.h, input.w);
    std::transform(gi.begin(), gi.end(), grad_input->data.begin(), [](double v) { return static_cast<float>(v); });
  }
}

void linear_forward(const Matrix& input, std::span<const float> weight, std::span<const float> bias,
                    Matrix& output) {
  const std::size_t outs = bias.size();
  if (weight.size() != outs * input.cols) throw ShapeError("linear: weight size mismatch");
  output = Matrix(input.rows, outs);
  for (std::size_t r = 0; r < input.rows; ++r) {
    for (std::size_t o = 0; o < outs; ++o) {
      double acc = bias[o];
      for (std::size_t f = 0; f < input.cols; ++f) acc += static_cast<double>(weight[o * input.cols + f]) * input.row(r)[f];
      output.row(r)[o] = static_cast<float>(acc);
    }
  }
}

void linear_backward(const Matrix& input, std::span<const float> weight, const Matrix& grad_output,
                     Matrix* grad_input, std::span<float> grad_weight, std::span<float> grad_bias) {
  const std::size_t outs = grad_output.cols, features = input.cols;
  for (std::size_t o = 0; o < outs; ++o) {
    double gb = 0.0;
    for (std::size_t r = 0; r < input.rows; ++r) gb += grad_output.row(r)[o];
    grad_bias[o] = static_cast<float>(gb);
    for (std::size_t f = 0; f < features; ++f) {
      double acc = 0.0;
      for (std::size_t r = 0; r < input.rows; ++r) acc += static_cast<double>(grad_output.row(r)[o]) * input.row(r)[f];
      grad_weight[o * features + f] = static_cast<float>(acc);
    }
  }
  if (grad_input) {
    *grad_input = Matrix(input.rows, features);
    for (std::size_t r = 0; r < input.rows; ++r) {
      for (std::size_t f = 0; f < features; ++f) {
        double acc = 0.0;
        for (std::size_t o = 0; o < outs; ++o) acc += static_cast<double>(grad_output.row(r)[o]) * weight[o * features + f];
        grad_input->row(r)[f] = static_cast<float>(acc);
      }
    }
  }
}

void avgpool_forward(const Tensor& input, std::size_t pooled, Tensor& output) {
  if (pooled == 0 || input.h % pooled || input.w % pooled) throw ShapeError("avgpool: bad pooled size");
  const std::size_t bh = input.h / pooled, bw = input.w / pooled;
  output = Tensor(input.n, input.c, pooled, pooled);
  for (std::size_t n = 0; n < input.n; ++n) {
    for (std::size_t c = 0; c < input.c; ++c) {
      for (std::size_t py = 0; py < pooled; ++py) {
        for (std::size_t px = 0; px < pooled; ++px) {
          double acc = 0.0;
          for (std::size_t y = 0; y < bh; ++y) {
            for (std::size_t x = 0; x < bw; ++x) {
              acc += input.data[((n * input.c + c) * input.h + py * bh + y) * input.w + px * bw + x];
            }
          }
          output.data[((n * input.c + c) * pooled + py) * pooled + px] = static_cast<float>(acc / static_cast<double>(bh * bw));
        }
      }
    }
  }
}

void avgpool_backward(const Tensor& grad_output, std::size_t in_h, std::size_t in_w, Tensor& grad_input) {
  const std::size_t pooled = grad_output.h;
  const std::size_t bh = in_h / pooled, bw = in_w / pooled;
  grad_input = Tensor(grad_output.n, grad_output.c, in_h, in_w);
  for (std::size_t n = 0; n < grad_output.n; ++n) {
    for (std::size_t c = 0; c < grad_output.c; ++c) {
      for (std::size_t y = 0; y < in_h; ++y) {
        for (std::size_t x = 0; x < in_w; ++x) {
          grad_input.data[((n * grad_output.c + c) * in_h + y) * in_w + x] =
              grad_output.data[((n * grad_output.c + c) * pooled + y / bh) * pooled + x / bw] /
              static_cast<float>(bh * bw);
        }
      }
    }
  }
}

}  // namespace iapnet::kernels::reference
