#include "advdet/models.hpp"

#include <algorithm>
#include <cmath>

#include "advdet/error.hpp"
#include "advdet/ops.hpp"
#include "advdet/random.hpp"

namespace advdet {

bool TrainedModel::is_binary() const {
  return !spec.layers.empty() && spec.layers.back().kind == LayerKind::kSigmoid;
}

std::size_t TrainedModel::output_size() const {
  return shape_numel(spec.activation_shapes().back());
}

// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (lr_schedule.empty()) throw ConfigError("learning-rate schedule is empty");
  for (const auto& [epoch, lr] : lr_schedule) {
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0, 1)");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

double OptimizerConfig::lr_at(std::size_t epoch) const {
  double lr = lr_schedule.front().second;
  for (const auto& [start, rate] : lr_schedule)
    if (start <= epoch) lr = rate;
  return lr;
}

OptimizerConfig OptimizerConfig::detector_defaults() { return OptimizerConfig{}; }

OptimizerConfig OptimizerConfig::classifier_defaults() {
  OptimizerConfig c;
  c.kind = OptimizerKind::kSgdMomentum;
  c.lr_schedule = {{0, 0.1}, {41, 0.01}, {61, 0.001}};
  c.momentum = 0.9;
  c.epochs = 100;
  c.batch_size = 128;
  return c;
}

nlohmann::json to_json(const OptimizerConfig& c) {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& [e, lr] : c.lr_schedule) sched.push_back({e, lr});
  return {{"kind", c.kind == OptimizerKind::kAdam ? "adam" : "sgd_momentum"},
          {"lr_schedule", sched},
          {"momentum", c.momentum},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, OptimizerConfig c) {
  try {
    if (j.contains("kind")) {
      const auto k = j.at("kind").get<std::string>();
      if (k == "adam") c.kind = OptimizerKind::kAdam;
      else if (k == "sgd_momentum") c.kind = OptimizerKind::kSgdMomentum;
      else throw ConfigError("unknown optimizer kind '" + k + "'");
    }
    if (j.contains("lr_schedule")) {
      c.lr_schedule.clear();
      for (const auto& p : j.at("lr_schedule"))
        c.lr_schedule.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<double>());
    }
    c.momentum = j.value("momentum", c.momentum);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed optimizer config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

NetworkSpec desk_classifier_spec(const Shape& input_shape, std::size_t classes,
                                 std::size_t base_channels, bool batch_norm,
                                 double input_center, double input_spread) {
  NetworkSpec s;
  s.input_shape = input_shape;
  s.attach_points.push_back({0, 0});
  s.layers.push_back(normalize(input_center, input_spread));
  auto block = [&](std::size_t channels, int ad) {
    s.layers.push_back(conv(channels));
    if (batch_norm) s.layers.push_back(layer(LayerKind::kBatchNorm));
    s.layers.push_back(layer(LayerKind::kRelu));
    s.attach_points.push_back({ad, s.layers.size()});
  };
  block(base_channels, 1);
  block(base_channels, 2);
  s.layers.push_back(layer(LayerKind::kMaxPool));
  block(base_channels * 2, 3);
  s.layers.push_back(layer(LayerKind::kMaxPool));
  block(base_channels * 4, 4);
  s.layers.push_back(layer(LayerKind::kGlobalAvgPool));
  s.layers.push_back(dense(classes));
  return s;
}

NetworkSpec detector_spec(const Shape& input_shape, const DetectorTopology& t) {
  if (t.conv_layers == 0 || t.channels == 0) throw ConfigError("detector needs conv layers");
  NetworkSpec s;
  s.input_shape = input_shape;
  if (t.normalize_input) s.layers.push_back(normalize(t.input_center, t.input_spread));
  if (input_shape.size() == 3) {
    for (std::size_t i = 0; i < t.conv_layers; ++i) {
      s.layers.push_back(conv(t.channels));
      if (t.batch_norm) s.layers.push_back(layer(LayerKind::kBatchNorm));
      s.layers.push_back(layer(LayerKind::kRelu));
      if (i == 0 && t.pool) s.layers.push_back(layer(LayerKind::kMaxPool));
    }
    s.layers.push_back(layer(LayerKind::kGlobalAvgPool));
  } else {
    s.layers.push_back(dense(t.channels));
    s.layers.push_back(layer(LayerKind::kRelu));
  }
  s.layers.push_back(dense(1));
  s.layers.push_back(layer(LayerKind::kSigmoid));
  s.attach_points.push_back({0, 0});
  return s;
}

TrainedModel build_classifier(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  return TrainedModel{spec, init_parameters(spec, seed), false};
}

TrainedModel build_detector(const Shape& input_shape, const DetectorTopology& topology,
                            std::uint64_t seed) {
  const auto spec = detector_spec(input_shape, topology);
  spec.validate();
  return TrainedModel{spec, init_parameters(spec, seed), false};
}

Shape features_shape(const TrainedModel& classifier, int ad_index) {
  return classifier.spec.activation_shapes().at(classifier.spec.position_of(ad_index));
}

DetectorTopology topology_for_attachment(const TrainedModel& classifier, int ad_index,
                                         DetectorTopology base) {
  const Shape fs = features_shape(classifier, ad_index);
  const Shape& in = classifier.spec.input_shape;
  base.pool = base.pool && fs.size() == 3 && in.size() == 3 && fs[1] == in[1] && fs[2] == in[2];
  const auto& first = classifier.spec.layers.front();
  if (classifier.spec.position_of(ad_index) == 0 && first.kind == LayerKind::kNormalize) {
    base.normalize_input = true;
    base.input_center = first.center;
    base.input_spread = first.spread;
  }
  return base;
}

// ---------------------------------------------------------------------------

namespace {

NodeId build_loss(Tape& tape, const TrainedModel& model, const ForwardTrace& trace,
                  std::span<const int> labels) {
  const auto& last = model.spec.layers.back();
  const NodeId pre = trace.activations[trace.activations.size() - 2];
  if (last.kind == LayerKind::kSigmoid) return ops::sigmoid_binary_cross_entropy(tape, pre, labels);
  if (last.kind == LayerKind::kSoftmax) return ops::softmax_cross_entropy(tape, pre, labels);
  return ops::softmax_cross_entropy(tape, trace.output, labels);
}

}  // namespace

Optimizer::Optimizer(const OptimizerConfig& cfg, const ParameterSet& params) : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t i = 0; i < params.size(); ++i) {
    index_of_[params.key(i)] = i;
    first_.emplace_back(params.value(i).shape(), 0.0);
    second_.emplace_back(params.value(i).shape(), 0.0);
  }
}

void Optimizer::apply(ParameterSet& params, const Tape& tape, const Gradients& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto id : tape.parameter_nodes()) {
    if (!grads.has(id)) continue;
    const std::size_t index = index_of_.at(tape.parameter_key(id));
    const Tensor& grad = grads.of(id);
    Tensor& p = params.value(index);
    Tensor& m = first_[index];
    if (cfg_.kind == OptimizerKind::kSgdMomentum) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.momentum * m[i] + grad[i];
        p[i] -= lr * m[i];
      }
      continue;
    }
    Tensor& v = second_[index];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
    }
  }
}

double train_step(TrainedModel& model, Optimizer& optimizer, const Tensor& batch,
                  std::span<const int> labels, double lr) {
  if (model.frozen) throw ConfigError("cannot train a frozen model");
  Tape tape;
  const NodeId x = tape.constant(batch);
  const auto trace = forward(tape, model.spec, model.params, x, {Mode::kTrain, true, {}});
  const NodeId loss = build_loss(tape, model, trace, labels);
  const auto grads = tape.backward(loss);
  update_running_stats(tape, trace, model.params);
  optimizer.apply(model.params, tape, grads, lr);
  return tape.value(loss)[0];
}

TrainResult train_supervised(const TrainedModel& model, const LabeledDataset& train,
                             const LabeledDataset& val, const OptimizerConfig& opt) {
  if (model.frozen) throw ConfigError("cannot train a frozen model");
  if (train.empty()) throw ConfigError("training set is empty");
  opt.validate();
  if (train.item_shape() != model.spec.input_shape) {
    throw ShapeError("training items " + shape_str(train.item_shape()) +
                     " do not match model input " + shape_str(model.spec.input_shape));
  }

  TrainResult result{model, {}, 0};
  if (opt.epochs == 0) return result;

  TrainedModel current = model;
  Optimizer optimizer(opt, current.params);
  Rng rng(opt.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double best = -1.0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = opt.lr_at(epoch);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const std::size_t count = std::min(opt.batch_size, order.size() - begin);
      std::span<const std::size_t> idx(order.data() + begin, count);
      loss_sum += train_step(current, optimizer, train.gather(idx), train.gather_labels(idx), lr);
      ++batches;
    }
    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(batches), 0.0};
    rec.val_accuracy = val.empty() ? 0.0 : accuracy(current, val);
    result.history.push_back(rec);
    // Without validation data the last epoch wins.
    if (val.empty() || rec.val_accuracy > best) {
      best = rec.val_accuracy;
      result.model = current;
      result.best_epoch = epoch + 1;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

Tensor predict_raw(const TrainedModel& model, const Tensor& batch) {
  const std::size_t n = batch.dim(0);
  std::vector<double> out;
  Shape out_shape;
  for (std::size_t begin = 0; begin < n; begin += kInferenceChunk) {
    const std::size_t count = std::min(kInferenceChunk, n - begin);
    Tape tape;
    const NodeId x = tape.constant(count == n ? batch : batch.rows(begin, count));
    const auto trace = forward(tape, model.spec, model.params, x);
    const Tensor& y = tape.value(trace.output);
    if (out_shape.empty()) out_shape = y.shape();
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  out_shape[0] = n;
  return Tensor(std::move(out_shape), std::move(out));
}

namespace {

Prediction to_prediction(const TrainedModel& model, std::span<const double> row) {
  Prediction p;
  const auto last = model.spec.layers.back().kind;
  if (last == LayerKind::kSigmoid) {
    p.probabilities = {1.0 - row[0], row[0]};
  } else if (last == LayerKind::kSoftmax) {
    p.probabilities.assign(row.begin(), row.end());
  } else {
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    p.probabilities.resize(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      p.probabilities[j] = std::exp(row[j] - m);
      s += p.probabilities[j];
    }
    for (auto& v : p.probabilities) v /= s;
  }
  // Ties resolve to the lowest index; for sigmoid heads p = 0.5 maps to 0.
  if (last == LayerKind::kSigmoid) {
    p.label = row[0] > 0.5 ? 1 : 0;
  } else {
    p.label = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return p;
}

}  // namespace

std::vector<Prediction> classify_batch(const TrainedModel& model, const Tensor& batch) {
  const Tensor raw = predict_raw(model, batch);
  const std::size_t k = raw.row_size();
  std::vector<Prediction> out;
  out.reserve(raw.dim(0));
  for (std::size_t i = 0; i < raw.dim(0); ++i)
    out.push_back(to_prediction(model, raw.data().subspan(i * k, k)));
  return out;
}

Prediction classify(const TrainedModel& model, const Tensor& input) {
  Shape s{1};
  s.insert(s.end(), input.shape().begin(), input.shape().end());
  return classify_batch(model, input.reshaped(std::move(s))).front();
}

std::vector<int> predict_labels(const TrainedModel& model, const Tensor& batch) {
  std::vector<int> out;
  for (const auto& p : classify_batch(model, batch)) out.push_back(p.label);
  return out;
}

double accuracy(const TrainedModel& model, const LabeledDataset& data) {
  if (data.empty()) throw ConfigError("accuracy of an empty dataset");
  const auto pred = predict_labels(model, data.images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Tensor features_at_batch(const TrainedModel& model, const Tensor& batch, int ad_index) {
  const std::size_t pos = model.spec.position_of(ad_index);
  if (pos == 0) {
    Shape expected{batch.dim(0)};
    expected.insert(expected.end(), model.spec.input_shape.begin(), model.spec.input_shape.end());
    if (batch.shape() != expected) {
      throw ShapeError("network expects a batch of " + shape_str(model.spec.input_shape) +
                       " inputs, got " + shape_str(batch.shape()));
    }
    return batch;
  }
  const std::size_t n = batch.dim(0);
  std::vector<double> out;
  Shape out_shape;
  for (std::size_t begin = 0; begin < n; begin += kInferenceChunk) {
    const std::size_t count = std::min(kInferenceChunk, n - begin);
    Tape tape;
    const NodeId x = tape.constant(count == n ? batch : batch.rows(begin, count));
    const auto trace = forward(tape, model.spec, model.params, x, {Mode::kEval, false, pos});
    const Tensor& y = tape.value(trace.output);
    if (out_shape.empty()) out_shape = y.shape();
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  out_shape[0] = n;
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor features_at(const TrainedModel& model, const Tensor& input, int ad_index) {
  Shape s{1};
  s.insert(s.end(), input.shape().begin(), input.shape().end());
  return unstack_one(features_at_batch(model, input.reshaped(std::move(s)), ad_index), 0);
}

}  // namespace advdet
