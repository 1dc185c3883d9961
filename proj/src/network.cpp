#include "advdet/network.hpp"

#include <cmath>
#include <set>

#include "advdet/error.hpp"
#include "advdet/ops.hpp"
#include "advdet/random.hpp"

namespace advdet {

namespace {

constexpr double kBatchNormEps = 1e-5;

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::kIdentity, "identity"},
    {LayerKind::kDense, "dense"},
    {LayerKind::kConv, "conv"},
    {LayerKind::kMaxPool, "max_pool"},
    {LayerKind::kGlobalAvgPool, "global_avg_pool"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kTanh, "tanh"},
    {LayerKind::kSigmoid, "sigmoid"},
    {LayerKind::kSoftmax, "softmax"},
    {LayerKind::kBatchNorm, "batch_norm"},
    {LayerKind::kResidual, "residual"},
    {LayerKind::kNormalize, "normalize"},
};

std::size_t conv_out(std::size_t extent, std::size_t kernel, std::size_t stride) {
  return (extent + 2 * (kernel / 2) - kernel) / stride + 1;
}

std::string layer_context(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
}

Shape propagate(const Shape& in, const LayerSpec& l, std::size_t i) {
  auto need_image = [&] {
    if (in.size() != 3) {
      throw ConfigError(layer_context(i, l) + " needs a (C, H, W) input, got " + shape_str(in));
    }
  };
  switch (l.kind) {
    case LayerKind::kIdentity:
    case LayerKind::kRelu:
    case LayerKind::kTanh:
    case LayerKind::kSigmoid:
      return in;
    case LayerKind::kNormalize:
      if (!(l.spread > 0.0) || !std::isfinite(l.center) || !std::isfinite(l.spread)) {
        throw ConfigError(layer_context(i, l) + " needs a finite center and spread > 0");
      }
      return in;
    case LayerKind::kBatchNorm:
      if (in.size() != 1 && in.size() != 3) {
        throw ConfigError(layer_context(i, l) + " needs a feature or image input");
      }
      return in;
    case LayerKind::kSoftmax:
      if (in.size() != 1) throw ConfigError(layer_context(i, l) + " needs a feature vector");
      return in;
    case LayerKind::kDense:
      if (l.units == 0) throw ConfigError(layer_context(i, l) + " needs units > 0");
      return {l.units};
    case LayerKind::kConv:
      need_image();
      if (l.units == 0 || l.kernel % 2 == 0 || l.stride == 0) {
        throw ConfigError(layer_context(i, l) + " needs channels > 0, odd kernel, stride > 0");
      }
      return {l.units, conv_out(in[1], l.kernel, l.stride), conv_out(in[2], l.kernel, l.stride)};
    case LayerKind::kResidual:
      need_image();
      if (l.units == 0 || l.stride == 0) {
        throw ConfigError(layer_context(i, l) + " needs channels > 0, stride > 0");
      }
      return {l.units, conv_out(in[1], 3, l.stride), conv_out(in[2], 3, l.stride)};
    case LayerKind::kMaxPool:
      need_image();
      if (in[1] < 2 || in[2] < 2) {
        throw ConfigError(layer_context(i, l) + " input " + shape_str(in) + " is too small");
      }
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::kGlobalAvgPool:
      need_image();
      return {in[0]};
  }
  throw ConfigError("unknown layer kind");
}

std::size_t numel(const Shape& s) { return shape_numel(s); }

void add_conv_params(ParameterSet& p, const std::string& prefix, std::size_t out,
                     std::size_t in, std::size_t k, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  Tensor w({out, in, k, k});
  for (auto& v : w.data()) v = stddev * rng.normal();
  p.add(prefix + "weight", std::move(w), true);
  p.add(prefix + "bias", Tensor({out}, 0.0), true);
}

void add_bn_params(ParameterSet& p, const std::string& prefix, std::size_t c) {
  p.add(prefix + "gamma", Tensor({c}, 1.0), true);
  p.add(prefix + "beta", Tensor({c}, 0.0), true);
  p.add(prefix + "running_mean", Tensor({c}, 0.0), false);
  p.add(prefix + "running_var", Tensor({c}, 1.0), false);
}

struct Builder {
  Tape& tape;
  const ParameterSet& params;
  const ForwardOptions& opt;
  ForwardTrace& trace;

  NodeId param(const std::string& key) {
    const Tensor& t = params.get(key);
    return opt.param_grads ? tape.parameter(t, key) : tape.constant(t);
  }

  NodeId conv(NodeId x, const std::string& prefix, std::size_t stride) {
    return ops::conv2d(tape, x, param(prefix + "weight"), param(prefix + "bias"), stride);
  }

  NodeId batch_norm(NodeId x, const std::string& prefix) {
    const NodeId g = param(prefix + "gamma");
    const NodeId b = param(prefix + "beta");
    if (opt.mode == Mode::kTrain) {
      const NodeId y = ops::batch_norm_train(tape, x, g, b, kBatchNormEps);
      trace.batch_norms.emplace_back(prefix, y);
      return y;
    }
    const auto& rm = params.get(prefix + "running_mean").values();
    const auto& rv = params.get(prefix + "running_var").values();
    return ops::batch_norm_eval(tape, x, g, b, rm, rv, kBatchNormEps);
  }

  NodeId layer(NodeId x, const LayerSpec& l, const Shape& in_shape, const std::string& p) {
    switch (l.kind) {
      case LayerKind::kIdentity:
        return x;
      case LayerKind::kDense:
        return ops::dense(tape, x, param(p + "weight"), param(p + "bias"));
      case LayerKind::kConv:
        return conv(x, p, l.stride);
      case LayerKind::kMaxPool:
        return ops::max_pool2(tape, x);
      case LayerKind::kGlobalAvgPool:
        return ops::global_avg_pool(tape, x);
      case LayerKind::kRelu:
        return ops::relu(tape, x);
      case LayerKind::kTanh:
        return ops::tanh(tape, x);
      case LayerKind::kSigmoid:
        return ops::sigmoid(tape, x);
      case LayerKind::kSoftmax:
        return ops::softmax(tape, x);
      case LayerKind::kNormalize:
        return ops::affine(tape, x, 1.0 / l.spread, -l.center / l.spread);
      case LayerKind::kBatchNorm:
        return batch_norm(x, p);
      case LayerKind::kResidual: {
        NodeId h = conv(x, p + "conv1.", l.stride);
        h = ops::relu(tape, batch_norm(h, p + "bn1."));
        h = batch_norm(conv(h, p + "conv2.", 1), p + "bn2.");
        NodeId shortcut = x;
        if (in_shape[0] != l.units || l.stride != 1) shortcut = conv(x, p + "shortcut.", l.stride);
        return ops::relu(tape, ops::add(tape, h, shortcut));
      }
    }
    throw ConfigError("unknown layer kind");
  }
};

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (const auto& kn : kKindNames)
    if (name == kn.name) return kn.kind;
  throw ConfigError("unknown layer type '" + name + "'");
}

LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride) {
  return {LayerKind::kConv, channels, kernel, stride};
}
LayerSpec dense(std::size_t units) { return {LayerKind::kDense, units, 0, 1}; }
LayerSpec residual(std::size_t channels, std::size_t stride) {
  return {LayerKind::kResidual, channels, 3, stride};
}
LayerSpec layer(LayerKind kind) { return {kind, 0, 0, 1}; }
LayerSpec normalize(double center, double spread) {
  LayerSpec l = layer(LayerKind::kNormalize);
  l.center = center;
  l.spread = spread;
  return l;
}

std::vector<Shape> NetworkSpec::activation_shapes() const {
  if (input_shape.empty() || numel(input_shape) == 0) {
    throw ConfigError("input shape " + shape_str(input_shape) + " is empty or has a zero extent");
  }
  std::vector<Shape> shapes{input_shape};
  for (std::size_t i = 0; i < layers.size(); ++i)
    shapes.push_back(propagate(shapes.back(), layers[i], i));
  return shapes;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  activation_shapes();
  std::set<int> indices;
  std::set<std::size_t> positions;
  bool has_input_point = false;
  for (const auto& ap : attach_points) {
    if (ap.index < 0) throw ConfigError("negative attachment index AD(" + std::to_string(ap.index) + ")");
    if (!indices.insert(ap.index).second) {
      throw ConfigError("duplicate attachment index AD(" + std::to_string(ap.index) + ")");
    }
    if (!positions.insert(ap.position).second) {
      throw ConfigError("two attachment points share position " + std::to_string(ap.position));
    }
    if (ap.position > layers.size()) {
      throw ConfigError("AD(" + std::to_string(ap.index) + ") position " +
                        std::to_string(ap.position) + " beyond " + std::to_string(layers.size()) +
                        " layers");
    }
    if (ap.index == 0) {
      if (ap.position != 0) throw ConfigError("AD(0) must denote the raw input (position 0)");
      has_input_point = true;
    }
  }
  if (!attach_points.empty() && !has_input_point) throw ConfigError("missing AD(0)");
}

bool NetworkSpec::has_attach_point(int ad_index) const {
  if (ad_index == 0) return true;
  for (const auto& ap : attach_points)
    if (ap.index == ad_index) return true;
  return false;
}

std::size_t NetworkSpec::position_of(int ad_index) const {
  for (const auto& ap : attach_points)
    if (ap.index == ad_index) return ap.position;
  if (ad_index == 0) return 0;
  throw ConfigError("unknown attachment point AD(" + std::to_string(ad_index) + ")");
}

nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json j{{"type", layer_kind_name(l.kind)}};
    switch (l.kind) {
      case LayerKind::kConv:
        j["channels"] = l.units;
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        break;
      case LayerKind::kResidual:
        j["channels"] = l.units;
        j["stride"] = l.stride;
        break;
      case LayerKind::kDense:
        j["units"] = l.units;
        break;
      case LayerKind::kNormalize:
        j["center"] = l.center;
        j["spread"] = l.spread;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& ap : spec.attach_points)
    aps.push_back({{"index", ap.index}, {"position", ap.position}});
  return {{"input_shape", spec.input_shape}, {"layers", layers}, {"attach_points", aps}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  try {
    spec.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l = layer(layer_kind_from_name(lj.at("type").get<std::string>()));
      switch (l.kind) {
        case LayerKind::kConv:
          l.units = lj.at("channels").get<std::size_t>();
          l.kernel = lj.value("kernel", std::size_t{3});
          l.stride = lj.value("stride", std::size_t{1});
          break;
        case LayerKind::kResidual:
          l.units = lj.at("channels").get<std::size_t>();
          l.kernel = 3;
          l.stride = lj.value("stride", std::size_t{1});
          break;
        case LayerKind::kDense:
          l.units = lj.at("units").get<std::size_t>();
          break;
        case LayerKind::kNormalize:
          l.center = lj.at("center").get<double>();
          l.spread = lj.at("spread").get<double>();
          break;
        default:
          break;
      }
      spec.layers.push_back(l);
    }
    if (j.contains("attach_points")) {
      for (const auto& aj : j.at("attach_points"))
        spec.attach_points.push_back({aj.at("index").get<int>(), aj.at("position").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network spec: ") + e.what());
  }
  return spec;
}

void ParameterSet::add(std::string key, Tensor value, bool trainable) {
  if (index_.count(key)) throw ConfigError("duplicate parameter key " + key);
  index_[key] = keys_.size();
  keys_.push_back(std::move(key));
  values_.push_back(std::move(value));
  trainable_.push_back(trainable);
}

const Tensor& ParameterSet::get(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw ConfigError("missing parameter " + key);
  return values_[it->second];
}

Tensor& ParameterSet::get(const std::string& key) {
  auto it = index_.find(key);
  if (it == index_.end()) throw ConfigError("missing parameter " + key);
  return values_[it->second];
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (trainable_[i]) n += values_[i].size();
  return n;
}

ParameterSet init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto shapes = spec.activation_shapes();
  Rng rng(seed);
  ParameterSet p;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const Shape& in = shapes[i];
    const std::string prefix = std::to_string(i) + ".";
    switch (l.kind) {
      case LayerKind::kDense: {
        const std::size_t fan_in = numel(in);
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        Tensor w({l.units, fan_in});
        for (auto& v : w.data()) v = stddev * rng.normal();
        p.add(prefix + "weight", std::move(w), true);
        p.add(prefix + "bias", Tensor({l.units}, 0.0), true);
        break;
      }
      case LayerKind::kConv:
        add_conv_params(p, prefix, l.units, in[0], l.kernel, rng);
        break;
      case LayerKind::kBatchNorm:
        add_bn_params(p, prefix, in[0]);
        break;
      case LayerKind::kResidual:
        add_conv_params(p, prefix + "conv1.", l.units, in[0], 3, rng);
        add_bn_params(p, prefix + "bn1.", l.units);
        add_conv_params(p, prefix + "conv2.", l.units, l.units, 3, rng);
        add_bn_params(p, prefix + "bn2.", l.units);
        if (in[0] != l.units || l.stride != 1)
          add_conv_params(p, prefix + "shortcut.", l.units, in[0], 1, rng);
        break;
      default:
        break;
    }
  }
  return p;
}

ForwardTrace forward(Tape& tape, const NetworkSpec& spec, const ParameterSet& params,
                     NodeId input, const ForwardOptions& options) {
  const Tensor& x = tape.value(input);
  Shape expected{x.rank() ? x.dim(0) : 0};
  expected.insert(expected.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (x.shape() != expected) {
    throw ShapeError("network expects a batch of " + shape_str(spec.input_shape) +
                     " inputs, got " + shape_str(x.shape()));
  }
  const std::size_t stop = options.stop_at.value_or(spec.layers.size());
  if (stop > spec.layers.size()) {
    throw ConfigError("stop position " + std::to_string(stop) + " beyond network depth");
  }
  const auto shapes = spec.activation_shapes();
  ForwardTrace trace;
  Builder b{tape, params, options, trace};
  NodeId h = input;
  trace.activations.push_back(h);
  for (std::size_t i = 0; i < stop; ++i) {
    h = b.layer(h, spec.layers[i], shapes[i], std::to_string(i) + ".");
    trace.activations.push_back(h);
  }
  trace.output = h;
  return trace;
}

ForwardResult run_forward(const NetworkSpec& spec, const ParameterSet& params, Tensor input,
                          const ForwardOptions& options) {
  ForwardResult r;
  r.input = r.tape.input(std::move(input));
  r.trace = forward(r.tape, spec, params, r.input, options);
  r.output = r.tape.value(r.trace.output);
  return r;
}

void update_running_stats(const Tape& tape, const ForwardTrace& trace, ParameterSet& params,
                          double momentum) {
  for (const auto& [prefix, node] : trace.batch_norms) {
    auto [mean, var] = ops::batch_norm_stats(tape, node);
    Tensor& rm = params.get(prefix + "running_mean");
    Tensor& rv = params.get(prefix + "running_var");
    for (std::size_t c = 0; c < mean.size(); ++c) {
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mean[c];
      rv[c] = (1.0 - momentum) * rv[c] + momentum * var[c];
    }
  }
}

}  // namespace advdet
