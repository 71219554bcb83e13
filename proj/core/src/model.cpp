#include "dmeta/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dmeta {

int NetworkSpec::feature_h() const {
  int h = input_h;
  if (use_maxpool) {
    for (int i = 0; i < kConvLayers; ++i) h /= 2;
  }
  return h;
}

int NetworkSpec::feature_w() const {
  int w = input_w;
  if (use_maxpool) {
    for (int i = 0; i < kConvLayers; ++i) w /= 2;
  }
  return w;
}

void NetworkSpec::validate() const {
  if (input_h < 1 || input_w < 1 || input_c < 1) {
    throw std::invalid_argument("network spec: bad input shape");
  }
  if (channels < 1) throw std::invalid_argument("network spec: channels must be >= 1");
  if (num_logits < 2) throw std::invalid_argument("network spec: num_logits must be >= 2");
  if (feature_h() < 1 || feature_w() < 1) {
    throw std::invalid_argument("network spec: input too small for pooling depth");
  }
}

Model::Model(NetworkSpec spec) : spec_(spec) { spec_.validate(); }

ParameterSet Model::init_params(RngStream rng) const {
  ParameterSet out;
  const int k = NetworkSpec::kKernel;
  for (int l = 0; l < NetworkSpec::kConvLayers; ++l) {
    const int in_c = (l == 0) ? spec_.input_c : spec_.channels;
    const int f = spec_.channels;
    const std::string pre = "conv" + std::to_string(l);
    Tensor w({f, in_c, k, k});
    const double fan_in = static_cast<double>(in_c) * k * k;
    const double fan_out = static_cast<double>(f) * k * k;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      w[i] = static_cast<float>(rng.uniform(-a, a));
    }
    out.add({pre + ".weight", ParamRole::ConvWeight, false, true, std::move(w)});
    out.add({pre + ".bias", ParamRole::ConvBias, false, true, Tensor({f})});
    const std::string bn = "bn" + std::to_string(l);
    out.add({bn + ".gamma", ParamRole::BnGamma, false, true, Tensor({f}, 1.0f)});
    out.add({bn + ".beta", ParamRole::BnBeta, false, true, Tensor({f})});
    out.add({bn + ".running_mean", ParamRole::BnRunningMean, false, false, Tensor({f})});
    out.add({bn + ".running_var", ParamRole::BnRunningVar, false, false, Tensor({f}, 1.0f)});
  }
  out.add({"fc.weight", ParamRole::FcWeight, true, true,
           Tensor({spec_.feature_dim(), spec_.num_logits})});
  out.add({"fc.bias", ParamRole::FcBias, true, true, Tensor({spec_.num_logits})});
  return out;
}

namespace {

struct LayerIds {
  int w = -1, b = -1, gamma = -1, beta = -1;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

}  // namespace

Model::Graph Model::build(TapeF& tape, const ParameterSet& params,
                          const Tensor& images, const ForwardOptions& opts,
                          TrainScope scope) const {
  if (opts.bn_mode == BnMode::Train) {
    throw std::invalid_argument("build: Train mode requires a mutable ParameterSet");
  }
  return build(tape, const_cast<ParameterSet&>(params), images, opts, scope);
}

Model::Graph Model::build(TapeF& tape, ParameterSet& params, const Tensor& images,
                          const ForwardOptions& opts, TrainScope scope) const {
  if (images.ndim() != 4 || images.dim(1) != spec_.input_c ||
      images.dim(2) != spec_.input_h || images.dim(3) != spec_.input_w) {
    throw std::invalid_argument("forward: images do not match the network input shape " +
                                shape_str({-1, spec_.input_c, spec_.input_h, spec_.input_w}));
  }
  if (opts.head_dropout > 0.0f && opts.dropout_rng == nullptr) {
    throw std::invalid_argument("forward: head_dropout requires an rng stream");
  }

  Graph g;
  g.leaves.assign(params.size(), -1);
  std::vector<LayerIds> layers(NetworkSpec::kConvLayers);
  int fc_w = -1, fc_b = -1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamItem& it = params.item(i);
    switch (it.role) {
      case ParamRole::BnRunningMean:
      case ParamRole::BnRunningVar:
        break;  // passed to the op directly, not tape leaves
      default:
        g.leaves[i] = tape.leaf(it.tensor, params.in_scope(i, scope));
    }
  }
  // map items to layers by declaration order
  int conv_seen = 0, bn_seen = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamItem& it = params.item(i);
    switch (it.role) {
      case ParamRole::ConvWeight: layers[conv_seen].w = g.leaves[i]; break;
      case ParamRole::ConvBias: layers[conv_seen++].b = g.leaves[i]; break;
      case ParamRole::BnGamma: layers[bn_seen].gamma = g.leaves[i]; break;
      case ParamRole::BnBeta: layers[bn_seen].beta = g.leaves[i]; break;
      case ParamRole::BnRunningMean: layers[bn_seen].running_mean = &it.tensor; break;
      case ParamRole::BnRunningVar: layers[bn_seen++].running_var = &it.tensor; break;
      case ParamRole::FcWeight: fc_w = g.leaves[i]; break;
      case ParamRole::FcBias: fc_b = g.leaves[i]; break;
    }
  }

  int x = tape.constant(images);
  for (int l = 0; l < NetworkSpec::kConvLayers; ++l) {
    x = tape.conv2d(x, layers[l].w, layers[l].b);
    x = tape.batchnorm(x, layers[l].gamma, layers[l].beta, opts.bn_mode,
                       layers[l].running_mean, layers[l].running_var);
    if (spec_.use_maxpool) x = tape.maxpool2x2(x);
    x = tape.relu(x);
  }
  x = tape.flatten(x);
  g.flat = x;
  if (opts.head_dropout > 0.0f) {
    x = tape.dropout(x, opts.head_dropout, *opts.dropout_rng);
  }
  g.logits = tape.fully_connected(x, fc_w, fc_b);
  return g;
}

Tensor Model::features(const ParameterSet& params, const Tensor& images,
                       const ForwardOptions& opts) const {
  TapeF tape;
  Graph g = build(tape, params, images, opts, TrainScope::All);
  return tape.value(g.flat);
}

Tensor Model::logits(const ParameterSet& params, const Tensor& images,
                     const ForwardOptions& opts) const {
  TapeF tape;
  Graph g = build(tape, params, images, opts, TrainScope::All);
  return tape.value(g.logits);
}

std::vector<int> Model::predict(const ParameterSet& params, const Tensor& images,
                                const ForwardOptions& opts) const {
  return argmax_rows(logits(params, images, opts));
}

std::vector<Tensor> Model::gather_grads(const TapeF& tape, const Graph& g) const {
  std::vector<Tensor> out(g.leaves.size());
  for (std::size_t i = 0; i < g.leaves.size(); ++i) {
    const int id = g.leaves[i];
    if (id < 0) continue;
    if (!tape.needs_grad(id)) continue;
    out[i] = tape.grad(id);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw std::invalid_argument("argmax_rows: need [B,C]");
  const int B = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const float* p = logits.ptr() + static_cast<std::int64_t>(b) * C;
    int best = 0;
    for (int c = 1; c < C; ++c) {
      if (p[c] > p[best]) best = c;
    }
    out[static_cast<std::size_t>(b)] = best;
  }
  return out;
}

}  // namespace dmeta
