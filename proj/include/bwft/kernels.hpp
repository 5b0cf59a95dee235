#pragma once

// Compute kernels behind the conv, dense and pooling layers. Each kernel has
// a straightforward serial reference and an OpenMP version; the layers call
// the OpenMP version, tests check it against the reference, and bench/
// compares their speed.
//
// Layouts: activations NHWC, conv kernels [kh][kw][in_c][out_c], dense
// weights [in][out]. Parallel kernels never split the reduction of a single
// output element across threads, so results do not depend on thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace bwft::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_h = 0, out_w = 0, out_c = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad_top = 0, pad_left = 0;

  std::size_t input_size() const { return batch * in_h * in_w * in_c; }
  std::size_t output_size() const { return batch * out_h * out_w * out_c; }
  std::size_t weight_size() const { return kernel * kernel * in_c * out_c; }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t in_h = 0, in_w = 0, channels = 0;
  std::size_t out_h = 0, out_w = 0;
  std::size_t window = 2;
  std::size_t stride = 2;

  std::size_t input_size() const { return batch * in_h * in_w * channels; }
  std::size_t output_size() const { return batch * out_h * out_w * channels; }
};

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> weight, std::span<float> grad_in);
void conv2d_backward_params(const ConvGeometry& g, std::span<const float> input,
                            std::span<const float> grad_out, std::span<float> grad_weight,
                            std::span<float> grad_bias);

void dense_forward(std::size_t rows, std::size_t in_f, std::size_t out_f,
                   std::span<const float> input, std::span<const float> weight,
                   std::span<const float> bias, std::span<float> output);
void dense_backward_input(std::size_t rows, std::size_t in_f, std::size_t out_f,
                          std::span<const float> grad_out, std::span<const float> weight,
                          std::span<float> grad_in);
void dense_backward_params(std::size_t rows, std::size_t in_f, std::size_t out_f,
                           std::span<const float> input, std::span<const float> grad_out,
                           std::span<float> grad_weight, std::span<float> grad_bias);

/// argmax holds, per output element, the flat input offset that won.
void maxpool2d_forward(const PoolGeometry& g, std::span<const float> input,
                       std::span<float> output, std::span<std::uint32_t> argmax);
void maxpool2d_backward(const PoolGeometry& g, std::span<const float> grad_out,
                        std::span<const std::uint32_t> argmax, std::span<float> grad_in);

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weight, std::span<const float> bias,
                    std::span<float> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> weight, std::span<float> grad_in);
void conv2d_backward_params(const ConvGeometry& g, std::span<const float> input,
                            std::span<const float> grad_out, std::span<float> grad_weight,
                            std::span<float> grad_bias);

void dense_forward(std::size_t rows, std::size_t in_f, std::size_t out_f,
                   std::span<const float> input, std::span<const float> weight,
                   std::span<const float> bias, std::span<float> output);
void dense_backward_input(std::size_t rows, std::size_t in_f, std::size_t out_f,
                          std::span<const float> grad_out, std::span<const float> weight,
                          std::span<float> grad_in);
void dense_backward_params(std::size_t rows, std::size_t in_f, std::size_t out_f,
                           std::span<const float> input, std::span<const float> grad_out,
                           std::span<float> grad_weight, std::span<float> grad_bias);

void maxpool2d_forward(const PoolGeometry& g, std::span<const float> input,
                       std::span<float> output, std::span<std::uint32_t> argmax);
void maxpool2d_backward(const PoolGeometry& g, std::span<const float> grad_out,
                        std::span<const std::uint32_t> argmax, std::span<float> grad_in);

}  // namespace parallel

}  // namespace bwft::kernels
