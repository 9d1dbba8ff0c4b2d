#include "pcam/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <utility>

#include "pcam/losses.hpp"
#include "pcam/morphology.hpp"
#include "pcam/ops.hpp"
#include "pcam/pcam.hpp"
#include "pcam/rng.hpp"
#include "pcam/segnet.hpp"
#include "pcam/tensor.hpp"

namespace pcam {

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;
constexpr double kAbsFloor = 1e-7;

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi,
                     bool requires_grad) {
  std::size_t numel = 1;
  for (std::size_t e : shape) numel *= e;
  std::vector<double> values(numel);
  for (double& v : values) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

// Central-difference sweep of d(loss)/d(param); parameters are perturbed
// through their shared storage. A negative entry budget checks everything.
void fd_sweep(GradCheck& out, const std::function<Tensor()>& loss,
              const std::vector<Tensor>& params, std::size_t max_entries,
              Rng& picker) {
  std::vector<Tensor> analytic;
  {
    GradTape tape;
    tape.backward(loss());
    for (const Tensor& p : params) analytic.push_back(tape.grad_or_zeros(p));
  }
  NoGradGuard guard;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& p = params[pi];
    std::vector<std::size_t> entries;
    if (p.size() <= max_entries) {
      entries.resize(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) entries[i] = i;
    } else {
      for (std::size_t i = 0; i < max_entries; ++i)
        entries.push_back(picker.below(p.size()));
    }
    std::vector<double>& v = const_cast<Tensor&>(p).mutable_values();
    for (std::size_t e : entries) {
      const double saved = v[e];
      v[e] = saved + kStep;
      const double up = loss().item();
      v[e] = saved - kStep;
      const double down = loss().item();
      v[e] = saved;
      const double fd = (up - down) / (2.0 * kStep);
      const double an = analytic[pi].flat(e);
      ++out.checked;
      const double gap = std::abs(an - fd) -
                         kRelTol * std::max(std::abs(an), std::abs(fd));
      if (gap > out.worst_gap) out.worst_gap = gap;
      if (gap > kAbsFloor) out.ok = false;
    }
  }
}

void check_elementwise(GradCheck& out, Rng& rng) {
  const Tensor a = random_tensor(rng, {2, 3, 4}, -1.0, 1.0, true);
  const Tensor b = random_tensor(rng, {2, 3, 4}, -1.0, 1.0, true);
  const auto loss = [&] {
    const Tensor denom = scalar_add(mul(b, b), 1.5);
    const Tensor gate = leaky_relu(sub(a, scalar_mul(b, 0.5)), 0.1);
    return reduce_sum_all(mul(divide(add(a, b), denom), gate));
  };
  fd_sweep(out, loss, {a, b}, SIZE_MAX, rng);
}

void check_log_reduce(GradCheck& out, Rng& rng) {
  const Tensor x = random_tensor(rng, {3, 4}, -1.0, 1.0, true);
  const auto loss = [&] {
    const Tensor smooth = reduce_sum_all(log(scalar_add(mul(x, x), 1.0)));
    const Tensor rows = reduce_mean(x, 1);
    const Tensor cols = reduce_sum(x, 0);
    return add(add(smooth, reduce_sum_all(mul(rows, rows))),
               scalar_mul(reduce_mean_all(mul(cols, cols)), 0.5));
  };
  fd_sweep(out, loss, {x}, SIZE_MAX, rng);
}

void check_shape_ops(GradCheck& out, Rng& rng) {
  const Tensor a = random_tensor(rng, {2, 3}, -1.0, 1.0, true);
  const Tensor b = random_tensor(rng, {2, 3}, -1.0, 1.0, true);
  const auto loss = [&] {
    const Tensor stacked = concat({a, b}, 0);
    const Tensor turned = permute(stacked, {1, 0});
    const Tensor flat = reshape(turned, {2, 6});
    const Tensor row = select(flat, 0, 1);
    return add(reduce_sum_all(mul(row, row)), reduce_mean_all(flat));
  };
  fd_sweep(out, loss, {a, b}, SIZE_MAX, rng);
}

void check_matmul_softmax(GradCheck& out, Rng& rng) {
  const Tensor a = random_tensor(rng, {3, 4}, -1.0, 1.0, true);
  const Tensor b = random_tensor(rng, {4, 2}, -1.0, 1.0, true);
  const Tensor wt = random_tensor(rng, {3, 2}, -1.0, 1.0, false);
  const auto loss = [&] {
    return reduce_sum_all(mul(softmax(matmul(a, b), 0), wt));
  };
  fd_sweep(out, loss, {a, b}, SIZE_MAX, rng);
}

void check_conv(GradCheck& out, Rng& rng) {
  const Tensor x = random_tensor(rng, {2, 4, 4, 3}, -1.0, 1.0, true);
  const Tensor w = random_tensor(rng, {3, 2, 3, 3, 3}, -0.5, 0.5, true);
  const Tensor bias = random_tensor(rng, {3}, -0.5, 0.5, true);
  const Tensor proj = random_tensor(rng, {2, 2, 1, 1, 1}, -0.5, 0.5, true);
  const Tensor wt1 = random_tensor(rng, {3, 4, 4, 3}, -1.0, 1.0, false);
  const Tensor wt2 = random_tensor(rng, {2, 4, 4, 3}, -1.0, 1.0, false);
  const auto loss = [&] {
    const Tensor same = conv3d(x, w, bias, 1, 1);
    const Tensor pointwise = conv3d(x, proj, 1, 0);
    return add(reduce_sum_all(mul(same, wt1)),
               reduce_sum_all(mul(pointwise, wt2)));
  };
  fd_sweep(out, loss, {x, w, bias, proj}, SIZE_MAX, rng);
}

void check_pool_upsample(GradCheck& out, Rng& rng) {
  const Tensor x = random_tensor(rng, {2, 4, 4, 2}, -1.0, 1.0, true);
  const Tensor wt = random_tensor(rng, {2, 4, 4, 2}, -1.0, 1.0, false);
  const auto loss = [&] {
    const Tensor up = trilinear_upsample2(x);
    const Tensor pooled = maxpool3d(up, 2, 2);
    return reduce_sum_all(mul(pooled, wt));
  };
  fd_sweep(out, loss, {x}, SIZE_MAX, rng);
}

void check_instance_norm(GradCheck& out, Rng& rng) {
  const Tensor x = random_tensor(rng, {2, 3, 3, 2}, -1.0, 1.0, true);
  const Tensor gamma = random_tensor(rng, {2}, 0.5, 1.5, true);
  const Tensor beta = random_tensor(rng, {2}, -0.5, 0.5, true);
  const Tensor wt = random_tensor(rng, {2, 3, 3, 2}, -1.0, 1.0, false);
  const auto loss = [&] {
    return reduce_sum_all(mul(instance_norm(x, gamma, beta), wt));
  };
  fd_sweep(out, loss, {x, gamma, beta}, SIZE_MAX, rng);
}

void check_attention(GradCheck& out, Rng& rng) {
  const Tensor f = random_tensor(rng, {3, 3, 3, 2}, -1.0, 1.0, true);
  const Tensor raw = random_tensor(rng, {2, 3, 3, 2}, -2.0, 2.0, false);
  const Tensor side = softmax(raw, 0);
  const Tensor wt = random_tensor(rng, {3, 3, 3, 2}, -1.0, 1.0, false);
  const auto loss = [&] {
    const PcamResult result =
        pcam_forward(f, side, StructureElement::square3());
    return reduce_sum_all(mul(result.features, wt));
  };
  fd_sweep(out, loss, {f}, SIZE_MAX, rng);
}

void check_loss_heads(GradCheck& out, Rng& rng) {
  const Tensor final_logits = random_tensor(rng, {2, 2, 2, 2}, -1.0, 1.0, true);
  const Tensor side_logits = random_tensor(rng, {2, 2, 2, 2}, -1.0, 1.0, true);
  std::vector<std::uint8_t> labels(8);
  for (auto& v : labels) v = static_cast<std::uint8_t>(rng.below(2));
  const Tensor target = one_hot(labels, {2, 2, 2}, 2);
  const auto loss = [&] {
    std::vector<HeadPrediction> heads;
    heads.push_back({"final", softmax(final_logits, 0), 1.0});
    heads.push_back({"side", softmax(side_logits, 0), 0.5});
    return total_loss(heads, target).total;
  };
  fd_sweep(out, loss, {final_logits, side_logits}, SIZE_MAX, rng);
}

// The plug runs against fixed priors here: rebuilding masks from a
// perturbed side output would step across binarize thresholds, and mask
// construction carries no gradient anyway.
void check_network(GradCheck& out, Rng& rng) {
  NetworkConfig config;
  config.stages = 1;
  config.base_channels = 2;
  config.pcam_location = 1;
  config.seed = rng.next_u64();
  const Network net{config};
  const Tensor x = random_tensor(rng, {1, 4, 4, 4}, 0.0, 1.0, false);
  std::vector<std::uint8_t> labels(64);
  for (auto& v : labels) v = static_cast<std::uint8_t>(rng.below(2));
  const Tensor target = one_hot(labels, {4, 4, 4}, 2);
  std::vector<BinaryVolume> masks(2, BinaryVolume({4, 4, 4}));
  for (BinaryVolume& mask : masks) {
    for (auto& v : mask.voxels)
      v = static_cast<std::uint8_t>(rng.below(2));
    mask.voxels[rng.below(mask.voxels.size())] = 1;
  }
  const auto loss = [&] {
    const ForwardOutputs fwd = net.forward(x, masks);
    std::vector<HeadPrediction> heads;
    heads.push_back({"final", softmax(fwd.logits, 0), 1.0});
    heads.push_back({"side", fwd.side_outputs.front(), 0.5});
    return total_loss(heads, target).total;
  };
  fd_sweep(out, loss, net.parameters(), 5, rng);
}

}  // namespace

std::vector<GradCheck> gradcheck_suite(std::uint64_t seed,
                                       std::size_t instances) {
  using CheckFn = void (*)(GradCheck&, Rng&);
  const std::pair<const char*, CheckFn> families[] = {
      {"elementwise", check_elementwise},
      {"log-reduce", check_log_reduce},
      {"shape-ops", check_shape_ops},
      {"matmul-softmax", check_matmul_softmax},
      {"conv3d", check_conv},
      {"pool-upsample", check_pool_upsample},
      {"instance-norm", check_instance_norm},
      {"attention", check_attention},
      {"loss-heads", check_loss_heads},
      {"network", check_network},
  };
  std::vector<GradCheck> checks;
  std::uint64_t family_index = 0;
  for (const auto& [name, fn] : families) {
    GradCheck check;
    check.name = name;
    for (std::size_t i = 0; i < instances; ++i) {
      Rng rng(derive_seed(seed, family_index * 10000 + i));
      fn(check, rng);
    }
    checks.push_back(std::move(check));
    ++family_index;
  }
  return checks;
}

bool gradcheck_passed(const std::vector<GradCheck>& checks) {
  for (const GradCheck& c : checks)
    if (!c.ok) return false;
  return !checks.empty();
}

}  // namespace pcam
