#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "pcam/jsonio.hpp"
#include "pcam/pcam.hpp"
#include "pcam/tensor.hpp"

namespace pcam {

struct NetworkConfig {
  std::size_t stages = 3;
  std::size_t base_channels = 8;
  std::size_t num_classes = 2;
  // Upsampling-layer index counted from the coarsest level; 0 disables the
  // attention plug and its side output.
  std::size_t pcam_location = 3;
  double leaky_slope = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

Json network_config_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const Json& j);

// conv(3x3x3, zero-padded) -> instance norm -> leaky relu.
struct ConvBlock {
  Tensor weight;  // C_out x C_in x 3 x 3 x 3
  Tensor bias;    // C_out
  Tensor gamma;   // C_out
  Tensor beta;    // C_out
};

// 1x1x1 projection to per-class scores.
struct HeadConv {
  Tensor weight;  // N x C_in x 1 x 1 x 1
  Tensor bias;    // N
};

struct ForwardOutputs {
  Tensor logits;                     // N x H x W x S
  std::vector<Tensor> side_outputs;  // softmax maps at the plug level
  Tensor plug_input;                 // features entering the plug, if any
  Tensor plug_output;                // features leaving it; == plug_input
                                     // when the plug did not run
  std::optional<PcamPath> pcam_path;
};

// Encoder-decoder with maxpool downsampling, trilinear upsampling, skip
// concatenation, and an optional attention plug behind one upsampling
// layer. Channel width doubles per level from base_channels. Parameters
// are He-initialized from the config seed; the side head is drawn last so
// equal seeds give equal main-path weights at every plug location.
class Network {
 public:
  explicit Network(const NetworkConfig& config);

  const NetworkConfig& config() const { return config_; }

  // Registration order: encoder blocks coarse-ward, bottleneck, decoder
  // blocks fine-ward, final head, then the side head when present. Each
  // block contributes weight, bias, gamma, beta; heads weight, bias.
  const std::vector<Tensor>& parameters() const { return params_; }
  std::vector<Tensor>& parameters() { return params_; }
  std::size_t parameter_count() const;

  // x is 1 x H x W x S with every spatial extent divisible by 2^stages.
  // With use_pcam=false the plug passes features through untouched but the
  // side output is still produced.
  ForwardOutputs forward(const Tensor& x, bool use_pcam = true) const;

  // Same pass, but the plug clusters against the given priors instead of
  // ones rebuilt from the side output. Mask construction is not
  // differentiable, so holding the priors fixed keeps the loss smooth in
  // the parameters — what a finite-difference probe needs.
  ForwardOutputs forward(const Tensor& x,
                         const std::vector<BinaryVolume>& plug_masks) const;

 private:
  ForwardOutputs forward_impl(const Tensor& x, bool use_pcam,
                              const std::vector<BinaryVolume>* plug_masks)
      const;

  NetworkConfig config_;
  std::vector<ConvBlock> encoder_;
  ConvBlock bottleneck_;
  std::vector<ConvBlock> decoder_;
  HeadConv final_head_;
  std::optional<HeadConv> side_head_;
  std::vector<Tensor> params_;
};

// Checkpoint container: magic "PCAMN1", canonical config JSON (64-bit
// length + bytes), parameter count, then every parameter in registration
// order via the tensor container format.
void write_network(std::ostream& out, const Network& net);
Network read_network(std::istream& in);
void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(const std::filesystem::path& path);

}  // namespace pcam
