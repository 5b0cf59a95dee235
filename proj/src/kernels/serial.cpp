// Reference kernels: direct loops, one output element at a time.

#include <algorithm>
#include <limits>

#include "bwft/kernels.hpp"

namespace bwft::kernels::serial {

namespace {

inline std::size_t nhwc(std::size_t n, std::size_t y, std::size_t x, std::size_t c, std::size_t h,
                        std::size_t w, std::size_t ch) {
  return ((n * h + y) * w + x) * ch + c;
}

inline std::size_t hwio(std::size_t ky, std::size_t kx, std::size_t ci, std::size_t co,
                        std::size_t k, std::size_t in_c, std::size_t out_c) {
  return ((ky * k + kx) * in_c + ci) * out_c + co;
}

// Input coordinate for output position `o` and kernel tap `k`, or -1 when it
// falls in the padding.
inline long tap(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent) {
  const long pos = static_cast<long>(o * stride + k) - static_cast<long>(pad);
  return (pos < 0 || pos >= static_cast<long>(extent)) ? -1 : pos;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t co = 0; co < g.out_c; ++co) {
          float acc = bias[co];
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
            if (iy < 0) continue;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
              if (ix < 0) continue;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) {
                acc += input[nhwc(n, iy, ix, ci, g.in_h, g.in_w, g.in_c)] *
                       weight[hwio(ky, kx, ci, co, g.kernel, g.in_c, g.out_c)];
              }
            }
          }
          output[nhwc(n, oy, ox, co, g.out_h, g.out_w, g.out_c)] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> weight, std::span<float> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
            if (ix < 0) continue;
            for (std::size_t ci = 0; ci < g.in_c; ++ci) {
              float acc = 0.0f;
              for (std::size_t co = 0; co < g.out_c; ++co) {
                acc += grad_out[nhwc(n, oy, ox, co, g.out_h, g.out_w, g.out_c)] *
                       weight[hwio(ky, kx, ci, co, g.kernel, g.in_c, g.out_c)];
              }
              grad_in[nhwc(n, iy, ix, ci, g.in_h, g.in_w, g.in_c)] += acc;
            }
          }
        }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const float> input,
                            std::span<const float> grad_out, std::span<float> grad_weight,
                            std::span<float> grad_bias) {
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0f);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0f);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t co = 0; co < g.out_c; ++co) {
          const float go = grad_out[nhwc(n, oy, ox, co, g.out_h, g.out_w, g.out_c)];
          grad_bias[co] += go;
          for (std::size_t ky = 0; ky < g.kernel; ++ky) {
            const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
            if (iy < 0) continue;
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
              const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
              if (ix < 0) continue;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) {
                grad_weight[hwio(ky, kx, ci, co, g.kernel, g.in_c, g.out_c)] +=
                    input[nhwc(n, iy, ix, ci, g.in_h, g.in_w, g.in_c)] * go;
              }
            }
          }
        }
}

void dense_forward(std::size_t rows, std::size_t in_f, std::size_t out_f,
                   std::span<const float> input, std::span<const float> weight,
                   std::span<const float> bias, std::span<float> output) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_f; ++o) {
      float acc = bias[o];
      for (std::size_t i = 0; i < in_f; ++i) acc += input[r * in_f + i] * weight[i * out_f + o];
      output[r * out_f + o] = acc;
    }
}

void dense_backward_input(std::size_t rows, std::size_t in_f, std::size_t out_f,
                          std::span<const float> grad_out, std::span<const float> weight,
                          std::span<float> grad_in) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < in_f; ++i) {
      float acc = 0.0f;
      for (std::size_t o = 0; o < out_f; ++o) acc += grad_out[r * out_f + o] * weight[i * out_f + o];
      grad_in[r * in_f + i] = acc;
    }
}

void dense_backward_params(std::size_t rows, std::size_t in_f, std::size_t out_f,
                           std::span<const float> input, std::span<const float> grad_out,
                           std::span<float> grad_weight, std::span<float> grad_bias) {
  for (std::size_t o = 0; o < out_f; ++o) {
    float acc = 0.0f;
    for (std::size_t r = 0; r < rows; ++r) acc += grad_out[r * out_f + o];
    grad_bias[o] = acc;
  }
  for (std::size_t i = 0; i < in_f; ++i)
    for (std::size_t o = 0; o < out_f; ++o) {
      float acc = 0.0f;
      for (std::size_t r = 0; r < rows; ++r) acc += input[r * in_f + i] * grad_out[r * out_f + o];
      grad_weight[i * out_f + o] = acc;
    }
}

void maxpool2d_forward(const PoolGeometry& g, std::span<const float> input,
                       std::span<float> output, std::span<std::uint32_t> argmax) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox)
        for (std::size_t c = 0; c < g.channels; ++c) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_at = 0;
          for (std::size_t wy = 0; wy < g.window; ++wy)
            for (std::size_t wx = 0; wx < g.window; ++wx) {
              const std::size_t iy = oy * g.stride + wy;
              const std::size_t ix = ox * g.stride + wx;
              if (iy >= g.in_h || ix >= g.in_w) continue;
              const std::size_t at = nhwc(n, iy, ix, c, g.in_h, g.in_w, g.channels);
              if (input[at] > best) {
                best = input[at];
                best_at = at;
              }
            }
          const std::size_t out = nhwc(n, oy, ox, c, g.out_h, g.out_w, g.channels);
          output[out] = best;
          argmax[out] = static_cast<std::uint32_t>(best_at);
        }
}

void maxpool2d_backward(const PoolGeometry& g, std::span<const float> grad_out,
                        std::span<const std::uint32_t> argmax, std::span<float> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  for (std::size_t i = 0; i < g.output_size(); ++i) grad_in[argmax[i]] += grad_out[i];
}

}  // namespace bwft::kernels::serial
