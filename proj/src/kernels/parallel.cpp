// OpenMP kernels. Loops are ordered so the innermost one runs over a
// contiguous channel axis and vectorizes; work is split over batch items,
// rows or weight taps, never over a single output's reduction. Nested calls
// (e.g. from inside a parallel candidate sweep) run on the calling thread.

#include <omp.h>

#include <algorithm>
#include <limits>
#include <vector>

#include "bwft/kernels.hpp"

namespace bwft::kernels::parallel {

namespace {

inline bool go_parallel(std::size_t work) { return work >= 4096 && !omp_in_parallel(); }

inline long tap(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent) {
  const long pos = static_cast<long>(o * stride + k) - static_cast<long>(pad);
  return (pos < 0 || pos >= static_cast<long>(extent)) ? -1 : pos;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output) {
  const long rows = static_cast<long>(g.batch * g.out_h);
  const float* in = input.data();
  const float* w = weight.data();
  const std::size_t oc = g.out_c;
#pragma omp parallel for schedule(static) if (go_parallel(g.output_size() * g.kernel * g.kernel * g.in_c))
  for (long row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / g.out_h;
    const std::size_t oy = static_cast<std::size_t>(row) % g.out_h;
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      float* o = output.data() + ((n * g.out_h + oy) * g.out_w + ox) * oc;
      std::copy(bias.begin(), bias.end(), o);
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
        if (iy < 0) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
          if (ix < 0) continue;
          const float* x = in + ((n * g.in_h + iy) * g.in_w + ix) * g.in_c;
          const float* wk = w + (ky * g.kernel + kx) * g.in_c * oc;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const float xv = x[ci];
            const float* wr = wk + ci * oc;
            for (std::size_t co = 0; co < oc; ++co) o[co] += xv * wr[co];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> weight, std::span<float> grad_in) {
  // Transposed taps [kh][kw][out_c][in_c] so the inner loop runs over in_c.
  const std::size_t taps = g.kernel * g.kernel;
  std::vector<float> wt(weight.size());
  for (std::size_t t = 0; t < taps; ++t)
    for (std::size_t ci = 0; ci < g.in_c; ++ci)
      for (std::size_t co = 0; co < g.out_c; ++co)
        wt[(t * g.out_c + co) * g.in_c + ci] = weight[(t * g.in_c + ci) * g.out_c + co];

  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  const long batch = static_cast<long>(g.batch);
#pragma omp parallel for schedule(static) if (go_parallel(g.output_size() * taps * g.in_c))
  for (long nl = 0; nl < batch; ++nl) {
    const std::size_t n = static_cast<std::size_t>(nl);
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const float* go = grad_out.data() + ((n * g.out_h + oy) * g.out_w + ox) * g.out_c;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
            if (ix < 0) continue;
            float* dx = grad_in.data() + ((n * g.in_h + iy) * g.in_w + ix) * g.in_c;
            const float* wr = wt.data() + (ky * g.kernel + kx) * g.out_c * g.in_c;
            for (std::size_t co = 0; co < g.out_c; ++co) {
              const float gv = go[co];
              const float* wc = wr + co * g.in_c;
              for (std::size_t ci = 0; ci < g.in_c; ++ci) dx[ci] += gv * wc[ci];
            }
          }
        }
      }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const float> input,
                            std::span<const float> grad_out, std::span<float> grad_weight,
                            std::span<float> grad_bias) {
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0f);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0f);
  const std::size_t oc = g.out_c;
  const long taps = static_cast<long>(g.kernel * g.kernel);
  // Each kernel tap owns a disjoint slab of grad_weight.
#pragma omp parallel for schedule(static) if (go_parallel(g.output_size() * taps * g.in_c))
  for (long t = 0; t < taps; ++t) {
    const std::size_t ky = static_cast<std::size_t>(t) / g.kernel;
    const std::size_t kx = static_cast<std::size_t>(t) % g.kernel;
    float* dw = grad_weight.data() + static_cast<std::size_t>(t) * g.in_c * oc;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        const long iy = tap(oy, ky, g.stride, g.pad_top, g.in_h);
        if (iy < 0) continue;
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const long ix = tap(ox, kx, g.stride, g.pad_left, g.in_w);
          if (ix < 0) continue;
          const float* x = input.data() + ((n * g.in_h + iy) * g.in_w + ix) * g.in_c;
          const float* go = grad_out.data() + ((n * g.out_h + oy) * g.out_w + ox) * oc;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const float xv = x[ci];
            float* dr = dw + ci * oc;
            for (std::size_t co = 0; co < oc; ++co) dr[co] += xv * go[co];
          }
        }
      }
  }
  const std::size_t pixels = g.batch * g.out_h * g.out_w;
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* go = grad_out.data() + p * oc;
    for (std::size_t co = 0; co < oc; ++co) grad_bias[co] += go[co];
  }
}

void dense_forward(std::size_t rows, std::size_t in_f, std::size_t out_f,
                   std::span<const float> input, std::span<const float> weight,
                   std::span<const float> bias, std::span<float> output) {
  const long nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (go_parallel(rows * in_f * out_f))
  for (long rl = 0; rl < nrows; ++rl) {
    const std::size_t r = static_cast<std::size_t>(rl);
    float* o = output.data() + r * out_f;
    std::copy(bias.begin(), bias.end(), o);
    const float* x = input.data() + r * in_f;
    for (std::size_t i = 0; i < in_f; ++i) {
      const float xv = x[i];
      const float* wr = weight.data() + i * out_f;
      for (std::size_t o2 = 0; o2 < out_f; ++o2) o[o2] += xv * wr[o2];
    }
  }
}

void dense_backward_input(std::size_t rows, std::size_t in_f, std::size_t out_f,
                          std::span<const float> grad_out, std::span<const float> weight,
                          std::span<float> grad_in) {
  const long n_in = static_cast<long>(in_f);
#pragma omp parallel for schedule(static) if (go_parallel(rows * in_f * out_f))
  for (long il = 0; il < n_in; ++il) {
    const std::size_t i = static_cast<std::size_t>(il);
    const float* wr = weight.data() + i * out_f;
    for (std::size_t r = 0; r < rows; ++r) {
      const float* go = grad_out.data() + r * out_f;
      float acc = 0.0f;
      for (std::size_t o = 0; o < out_f; ++o) acc += go[o] * wr[o];
      grad_in[r * in_f + i] = acc;
    }
  }
}

void dense_backward_params(std::size_t rows, std::size_t in_f, std::size_t out_f,
                           std::span<const float> input, std::span<const float> grad_out,
                           std::span<float> grad_weight, std::span<float> grad_bias) {
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0f);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_f; ++o) grad_bias[o] += grad_out[r * out_f + o];

  const long n_in = static_cast<long>(in_f);
#pragma omp parallel for schedule(static) if (go_parallel(rows * in_f * out_f))
  for (long il = 0; il < n_in; ++il) {
    const std::size_t i = static_cast<std::size_t>(il);
    float* dw = grad_weight.data() + i * out_f;
    std::fill(dw, dw + out_f, 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
      const float xv = input[r * in_f + i];
      const float* go = grad_out.data() + r * out_f;
      for (std::size_t o = 0; o < out_f; ++o) dw[o] += xv * go[o];
    }
  }
}

void maxpool2d_forward(const PoolGeometry& g, std::span<const float> input,
                       std::span<float> output, std::span<std::uint32_t> argmax) {
  const long rows = static_cast<long>(g.batch * g.out_h);
  const std::size_t ch = g.channels;
#pragma omp parallel for schedule(static) if (go_parallel(g.input_size()))
  for (long row = 0; row < rows; ++row) {
    const std::size_t n = static_cast<std::size_t>(row) / g.out_h;
    const std::size_t oy = static_cast<std::size_t>(row) % g.out_h;
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const std::size_t out = ((n * g.out_h + oy) * g.out_w + ox) * ch;
      float* o = output.data() + out;
      std::uint32_t* a = argmax.data() + out;
      std::fill(o, o + ch, -std::numeric_limits<float>::infinity());
      std::fill(a, a + ch, 0u);
      for (std::size_t wy = 0; wy < g.window; ++wy) {
        const std::size_t iy = oy * g.stride + wy;
        if (iy >= g.in_h) continue;
        for (std::size_t wx = 0; wx < g.window; ++wx) {
          const std::size_t ix = ox * g.stride + wx;
          if (ix >= g.in_w) continue;
          const std::size_t base = ((n * g.in_h + iy) * g.in_w + ix) * ch;
          for (std::size_t c = 0; c < ch; ++c) {
            if (input[base + c] > o[c]) {
              o[c] = input[base + c];
              a[c] = static_cast<std::uint32_t>(base + c);
            }
          }
        }
      }
    }
  }
}

void maxpool2d_backward(const PoolGeometry& g, std::span<const float> grad_out,
                        std::span<const std::uint32_t> argmax, std::span<float> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  // Windows may overlap when stride < window, so scatter stays per batch item.
  const long batch = static_cast<long>(g.batch);
  const std::size_t per_item = g.out_h * g.out_w * g.channels;
#pragma omp parallel for schedule(static) if (go_parallel(g.input_size()))
  for (long nl = 0; nl < batch; ++nl) {
    const std::size_t begin = static_cast<std::size_t>(nl) * per_item;
    for (std::size_t i = begin; i < begin + per_item; ++i) grad_in[argmax[i]] += grad_out[i];
  }
}

}  // namespace bwft::kernels::parallel
