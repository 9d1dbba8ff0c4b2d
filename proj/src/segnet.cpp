#include "pcam/segnet.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pcam/errors.hpp"
#include "pcam/ops.hpp"
#include "pcam/rng.hpp"
#include "pcam/serialize.hpp"

namespace pcam {

namespace {

constexpr char kNetworkMagic[] = "PCAMN1";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kKernel = 3;

// Channel width of encoder level `level` in [1, stages]; stages+1 is the
// bottleneck.
std::size_t level_channels(const NetworkConfig& c, std::size_t level) {
  return c.base_channels << (level - 1);
}

Tensor he_tensor(Rng& rng, Shape shape, std::size_t fan_in) {
  std::size_t numel = 1;
  for (std::size_t e : shape) numel *= e;
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> values(numel);
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(values), true);
}

ConvBlock make_block(Rng& rng, std::size_t in, std::size_t out) {
  ConvBlock block;
  block.weight =
      he_tensor(rng, {out, in, kKernel, kKernel, kKernel},
                in * kKernel * kKernel * kKernel);
  block.bias = Tensor({out}, 0.0, true);
  block.gamma = Tensor({out}, 1.0, true);
  block.beta = Tensor({out}, 0.0, true);
  return block;
}

HeadConv make_head(Rng& rng, std::size_t in, std::size_t classes) {
  HeadConv head;
  head.weight = he_tensor(rng, {classes, in, 1, 1, 1}, in);
  head.bias = Tensor({classes}, 0.0, true);
  return head;
}

Tensor run_block(const ConvBlock& block, const Tensor& x, double slope) {
  const Tensor convolved = conv3d(x, block.weight, block.bias, 1, 1);
  return leaky_relu(instance_norm(convolved, block.gamma, block.beta), slope);
}

Tensor run_head(const HeadConv& head, const Tensor& x) {
  return conv3d(x, head.weight, head.bias, 1, 0);
}

void push_block(std::vector<Tensor>& params, const ConvBlock& block) {
  params.push_back(block.weight);
  params.push_back(block.bias);
  params.push_back(block.gamma);
  params.push_back(block.beta);
}

void push_head(std::vector<Tensor>& params, const HeadConv& head) {
  params.push_back(head.weight);
  params.push_back(head.bias);
}

}  // namespace

void NetworkConfig::validate() const {
  if (stages < 1 || stages > 8)
    throw ConfigError("network config: stages must be between 1 and 8");
  if (num_classes < 2)
    throw ConfigError("network config: at least 2 classes required");
  if (base_channels < num_classes)
    throw ConfigError(
        "network config: base_channels must be at least num_classes");
  if (pcam_location > stages)
    throw ConfigError("network config: pcam_location exceeds stage count");
  if (!std::isfinite(leaky_slope) || leaky_slope < 0.0 || leaky_slope >= 1.0)
    throw ConfigError("network config: leaky_slope must lie in [0, 1)");
}

Json network_config_json(const NetworkConfig& config) {
  Json j;
  j["stages"] = config.stages;
  j["base_channels"] = config.base_channels;
  j["num_classes"] = config.num_classes;
  j["pcam_location"] = config.pcam_location;
  j["leaky_slope"] = config.leaky_slope;
  j["seed"] = config.seed;
  return j;
}

NetworkConfig network_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("network config: expected an object");
  NetworkConfig config;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "stages") {
        config.stages = value.get<std::size_t>();
      } else if (key == "base_channels") {
        config.base_channels = value.get<std::size_t>();
      } else if (key == "num_classes") {
        config.num_classes = value.get<std::size_t>();
      } else if (key == "pcam_location") {
        config.pcam_location = value.get<std::size_t>();
      } else if (key == "leaky_slope") {
        config.leaky_slope = value.get<double>();
      } else if (key == "seed") {
        config.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("network config: unknown key \"" + key + "\"");
      }
    } catch (const Json::exception&) {
      throw ConfigError("network config: key \"" + key +
                        "\" has the wrong type");
    }
  }
  config.validate();
  return config;
}

Network::Network(const NetworkConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  std::size_t in = 1;
  for (std::size_t level = 1; level <= config_.stages; ++level) {
    encoder_.push_back(make_block(rng, in, level_channels(config_, level)));
    in = level_channels(config_, level);
  }
  bottleneck_ =
      make_block(rng, in, level_channels(config_, config_.stages + 1));
  for (std::size_t step = 1; step <= config_.stages; ++step) {
    const std::size_t level = config_.stages - step + 1;
    const std::size_t arriving = level_channels(config_, level + 1);
    const std::size_t skip = level_channels(config_, level);
    decoder_.push_back(make_block(rng, arriving + skip, skip));
  }
  final_head_ = make_head(rng, config_.base_channels, config_.num_classes);
  if (config_.pcam_location != 0) {
    const std::size_t level = config_.stages - config_.pcam_location + 1;
    side_head_ =
        make_head(rng, level_channels(config_, level), config_.num_classes);
  }

  for (const ConvBlock& block : encoder_) push_block(params_, block);
  push_block(params_, bottleneck_);
  for (const ConvBlock& block : decoder_) push_block(params_, block);
  push_head(params_, final_head_);
  if (side_head_) push_head(params_, *side_head_);
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const Tensor& p : params_) total += p.size();
  return total;
}

ForwardOutputs Network::forward(const Tensor& x, bool use_pcam) const {
  return forward_impl(x, use_pcam, nullptr);
}

ForwardOutputs Network::forward(
    const Tensor& x, const std::vector<BinaryVolume>& plug_masks) const {
  if (config_.pcam_location == 0)
    throw ContractError("forward: network has no attention plug to feed "
                        "priors into");
  return forward_impl(x, true, &plug_masks);
}

ForwardOutputs Network::forward_impl(
    const Tensor& x, bool use_pcam,
    const std::vector<BinaryVolume>* plug_masks) const {
  if (!x.defined() || x.rank() != 4)
    throw DimensionError("forward: input must be 1 x H x W x S");
  if (x.extent(0) != 1)
    throw DimensionError("forward: expected one input channel, got " +
                         std::to_string(x.extent(0)));
  const std::size_t divisor = std::size_t{1} << config_.stages;
  for (std::size_t axis = 1; axis < 4; ++axis)
    if (x.extent(axis) == 0 || x.extent(axis) % divisor != 0)
      throw DimensionError("forward: spatial extent " +
                           std::to_string(x.extent(axis)) +
                           " is not divisible by " + std::to_string(divisor));

  Tensor cur = x;
  std::vector<Tensor> skips;
  for (std::size_t level = 0; level < config_.stages; ++level) {
    cur = run_block(encoder_[level], cur, config_.leaky_slope);
    skips.push_back(cur);
    cur = maxpool3d(cur, 2, 2);
  }
  cur = run_block(bottleneck_, cur, config_.leaky_slope);

  ForwardOutputs out;
  for (std::size_t step = 1; step <= config_.stages; ++step) {
    cur = trilinear_upsample2(cur);
    cur = concat({cur, skips[config_.stages - step]}, 0);
    cur = run_block(decoder_[step - 1], cur, config_.leaky_slope);
    if (config_.pcam_location == step) {
      const Tensor side = softmax(run_head(*side_head_, cur), 0);
      out.side_outputs.push_back(side);
      out.plug_input = cur;
      if (plug_masks != nullptr) {
        const PcamResult result = pcam_apply(cur, *plug_masks);
        cur = result.features;
        out.pcam_path = result.path;
      } else if (use_pcam) {
        const PcamResult result =
            pcam_forward(cur, side, StructureElement::square3());
        cur = result.features;
        out.pcam_path = result.path;
      }
      out.plug_output = cur;
    }
  }
  out.logits = run_head(final_head_, cur);
  return out;
}

void write_network(std::ostream& out, const Network& net) {
  out.write(kNetworkMagic, static_cast<std::streamsize>(kMagicLen));
  const std::string config_text =
      canonical_json(network_config_json(net.config()));
  write_u64_le(out, config_text.size());
  out.write(config_text.data(),
            static_cast<std::streamsize>(config_text.size()));
  write_u64_le(out, net.parameters().size());
  for (const Tensor& p : net.parameters()) write_tensor(out, p);
  if (!out) throw DataError("write_network: stream write failed");
}

Network read_network(std::istream& in) {
  char magic[kMagicLen];
  in.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!in || std::string(magic, kMagicLen) != kNetworkMagic)
    throw DataError("read_network: bad magic, not a checkpoint stream");
  const std::uint64_t config_len = read_u64_le(in, "config length");
  if (config_len > (1u << 20))
    throw DataError("read_network: implausible config length");
  std::string config_text(config_len, '\0');
  in.read(config_text.data(), static_cast<std::streamsize>(config_len));
  if (!in) throw DataError("read_network: truncated config");
  Network net(network_config_from_json(
      parse_json(config_text, "checkpoint config")));
  const std::uint64_t count = read_u64_le(in, "parameter count");
  if (count != net.parameters().size())
    throw DataError("read_network: checkpoint holds " + std::to_string(count) +
                    " tensors, config implies " +
                    std::to_string(net.parameters().size()));
  for (Tensor& p : net.parameters()) {
    const Tensor stored = read_tensor(in);
    if (stored.shape() != p.shape())
      throw DataError("read_network: parameter shape mismatch");
    p.mutable_values() = stored.values();
  }
  return net;
}

void save_network(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_network: cannot open " + path.string());
  write_network(out, net);
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_network: cannot open " + path.string());
  return read_network(in);
}

}  // namespace pcam
