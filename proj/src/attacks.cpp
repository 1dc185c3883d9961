#include "advdet/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advdet/error.hpp"
#include "advdet/ops.hpp"

namespace advdet {

namespace {

constexpr const char* kFamilyNames[] = {"fast",        "iterative_linf", "iterative_l2",
                                        "deepfool_l2", "deepfool_linf",  "dynamic"};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

int argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best);
}

Shape batch_shape(std::size_t n, const Shape& item) {
  Shape s{n};
  s.insert(s.end(), item.begin(), item.end());
  return s;
}

Tensor as_batch(const Tensor& x) { return x.reshaped(batch_shape(1, x.shape())); }

// Logit node of a classifier trace: the layer before a trailing softmax, if any.
NodeId logits_node(const TrainedModel& model, const ForwardTrace& trace) {
  if (model.spec.layers.back().kind == LayerKind::kSoftmax)
    return trace.activations[trace.activations.size() - 2];
  return trace.output;
}

NodeId detector_logit_node(const TrainedModel& detector, const ForwardTrace& trace) {
  if (detector.spec.layers.back().kind != LayerKind::kSigmoid)
    throw ConfigError("detector must end in a sigmoid unit");
  return trace.activations[trace.activations.size() - 2];
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t k = logits.row_size();
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(logits.data().subspan(i * k, k));
  return out;
}

Tensor eval_logits(const TrainedModel& model, const Tensor& batch) {
  Tape tape;
  const NodeId x = tape.constant(batch);
  const auto trace = forward(tape, model.spec, model.params, x);
  return tape.value(logits_node(model, trace));
}

struct ClassGrad {
  Tensor logits;
  Tensor grad;  // d J_cls / d x, per example
};

ClassGrad class_loss_grad(const TrainedModel& model, const Tensor& batch,
                          std::span<const int> labels) {
  Tape tape;
  const NodeId x = tape.input(batch);
  const auto trace = forward(tape, model.spec, model.params, x);
  const NodeId logits = logits_node(model, trace);
  const NodeId loss = ops::softmax_cross_entropy(tape, logits, labels, ops::Reduction::kSum);
  Tensor g = grad_input(tape, loss, x);
  g.check_finite("classifier loss gradient");
  return {tape.value(logits), std::move(g)};
}

struct DynamicGrad {
  Tensor logits;
  Tensor grad_cls;
  Tensor grad_det;  // d J_det(x, 1) / d x
  Tensor p_adv;
};

DynamicGrad dynamic_grads(const TrainedModel& model, const DetectorRef& det, const Tensor& batch,
                          std::span<const int> labels) {
  Tape tape;
  const NodeId x = tape.input(batch);
  const auto trace = forward(tape, model.spec, model.params, x);
  const NodeId logits = logits_node(model, trace);
  const std::size_t pos = model.spec.position_of(det.ad_index);
  const auto dtrace = forward(tape, det.detector->spec, det.detector->params,
                              trace.activations.at(pos));
  const NodeId dlogit = detector_logit_node(*det.detector, dtrace);
  const NodeId j_cls = ops::softmax_cross_entropy(tape, logits, labels, ops::Reduction::kSum);
  const std::vector<int> ones(labels.size(), 1);
  const NodeId j_det = ops::sigmoid_binary_cross_entropy(tape, dlogit, ones, ops::Reduction::kSum);
  Tensor gc = grad_input(tape, j_cls, x);
  Tensor gd = grad_input(tape, j_det, x);
  gc.check_finite("classifier loss gradient");
  gd.check_finite("detector loss gradient");
  return {tape.value(logits), std::move(gc), std::move(gd), tape.value(dtrace.output)};
}

Tensor detector_output(const TrainedModel& model, const DetectorRef& det, const Tensor& batch) {
  Tape tape;
  const NodeId x = tape.constant(batch);
  const auto trace = forward(tape, model.spec, model.params, x,
                             {Mode::kEval, false, model.spec.position_of(det.ad_index)});
  const auto dtrace = forward(tape, det.detector->spec, det.detector->params, trace.output);
  return tape.value(dtrace.output);
}

double clip_coord(double v, double c, double eps, double lo, double hi) {
  v = std::clamp(v, c - eps, c + eps);
  while (std::abs(v - c) > eps) v = std::nextafter(v, c);
  return std::clamp(v, lo, hi);
}

void check_inputs(const TrainedModel& model, const Tensor& batch, std::span<const int> labels,
                  const AttackConfig& cfg) {
  cfg.validate();
  if (batch.rank() < 1 || batch.dim(0) != labels.size())
    throw ShapeError("attack batch holds " + shape_str(batch.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  if (batch.row_shape() != model.spec.input_shape)
    throw ShapeError("attack inputs " + shape_str(batch.row_shape()) + " do not match model input " +
                     shape_str(model.spec.input_shape));
  const std::size_t classes = model.output_size();
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
  for (double v : batch.data())
    if (!(v >= cfg.pixel_min && v <= cfg.pixel_max))
      throw ConfigError("attack input outside the pixel range");
}

std::vector<AdversarialExample> finish(const TrainedModel& model, const Tensor& batch,
                                       const Tensor& adv, std::span<const int> labels,
                                       const std::vector<int>& before,
                                       const std::vector<std::size_t>& iterations,
                                       const std::vector<AttackStatus>& status) {
  const auto after = argmax_rows(eval_logits(model, adv));
  const std::size_t n = labels.size();
  std::vector<AdversarialExample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = out[i];
    e.original = unstack_one(batch, i);
    e.perturbed = unstack_one(adv, i);
    e.true_label = labels[i];
    e.pred_before = before[i];
    e.pred_after = after[i];
    e.iterations = iterations[i];
    e.linf = distance_linf(e.perturbed.data(), e.original.data());
    e.l2 = distance_l2(e.perturbed.data(), e.original.data());
    e.fooled = e.pred_after != e.true_label;
    e.status = status[i];
  }
  return out;
}

// Shared loop for the fast and both iterative methods: each step evaluates
// the gradient at the current (clipped) iterate.
std::vector<AdversarialExample> gradient_attack(const TrainedModel& model, const Tensor& batch,
                                                std::span<const int> labels,
                                                const AttackConfig& cfg) {
  const std::size_t n = labels.size();
  const std::size_t d = batch.row_size();
  const bool l2 = cfg.family == AttackFamily::kIterativeL2;
  const double step = cfg.family == AttackFamily::kFast ? cfg.epsilon : cfg.alpha;
  const std::size_t steps = cfg.family == AttackFamily::kFast ? 1 : cfg.max_iter;

  Tensor adv = batch;
  std::vector<int> before;
  std::vector<std::size_t> iterations(n, 0);
  std::vector<AttackStatus> status(n, AttackStatus::kOk);
  std::vector<bool> active(n, true);
  for (std::size_t it = 0; it < steps; ++it) {
    const auto cg = class_loss_grad(model, adv, labels);
    if (it == 0) before = argmax_rows(cg.logits);
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      auto g = cg.grad.data().subspan(i * d, d);
      auto x = batch.data().subspan(i * d, d);
      auto a = adv.data().subspan(i * d, d);
      if (l2) {
        const double gn = norm_l2(g);
        if (gn == 0.0) {
          if (it == 0) status[i] = AttackStatus::kDegenerate;
          active[i] = false;
          continue;
        }
        std::vector<double> moved(d);
        for (std::size_t j = 0; j < d; ++j) moved[j] = a[j] + step * g[j] / gn;
        const Shape s = batch.row_shape();
        const Tensor projected =
            project_l2_ball(Tensor(s, std::move(moved)), Tensor(s, {x.begin(), x.end()}), cfg.epsilon);
        for (std::size_t j = 0; j < d; ++j)
          a[j] = std::clamp(projected[j], cfg.pixel_min, cfg.pixel_max);
      } else {
        for (std::size_t j = 0; j < d; ++j)
          a[j] = clip_coord(a[j] + step * sign(g[j]), x[j], cfg.epsilon, cfg.pixel_min, cfg.pixel_max);
      }
      ++iterations[i];
    }
  }
  if (before.empty()) before = argmax_rows(eval_logits(model, batch));
  return finish(model, batch, adv, labels, before, iterations, status);
}

std::vector<AdversarialExample> dynamic_batch(const TrainedModel& model, const DetectorRef& det,
                                              const Tensor& batch, std::span<const int> labels,
                                              const AttackConfig& cfg,
                                              std::span<const double> sigmas) {
  if (det.detector == nullptr) throw ConfigError("dynamic attack needs a detector");
  const std::size_t n = labels.size();
  const std::size_t d = batch.row_size();
  const double s_det = cfg.detector_objective == DetectorObjective::kEvade ? 1.0 : -1.0;
  Tensor adv = batch;
  std::vector<int> before;
  std::vector<std::size_t> iterations(n, 0);
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    const auto g = dynamic_grads(model, det, adv, labels);
    if (it == 0) before = argmax_rows(g.logits);
    for (std::size_t i = 0; i < n; ++i) {
      auto gc = g.grad_cls.data().subspan(i * d, d);
      auto gd = g.grad_det.data().subspan(i * d, d);
      auto x = batch.data().subspan(i * d, d);
      auto a = adv.data().subspan(i * d, d);
      for (std::size_t j = 0; j < d; ++j) {
        const double dir = (1.0 - sigmas[i]) * sign(gc[j]) + sigmas[i] * s_det * sign(gd[j]);
        a[j] = clip_coord(a[j] + cfg.alpha * dir, x[j], cfg.epsilon, cfg.pixel_min, cfg.pixel_max);
      }
      ++iterations[i];
    }
  }
  if (before.empty()) before = argmax_rows(eval_logits(model, batch));
  auto out = finish(model, batch, adv, labels, before, iterations,
                    std::vector<AttackStatus>(n, AttackStatus::kOk));
  const Tensor p = detector_output(model, det, adv);
  for (std::size_t i = 0; i < n; ++i) out[i].p_adv = p[i];
  return out;
}

// Gradients of every logit with respect to the input, one backward sweep per
// class over a shared tape.
struct LogitJacobian {
  Tensor logits;
  std::vector<Tensor> grads;  // per class, same shape as the batch
};

LogitJacobian logit_jacobian(const TrainedModel& model, const Tensor& batch) {
  Tape tape;
  const NodeId x = tape.input(batch);
  const auto trace = forward(tape, model.spec, model.params, x);
  const NodeId logits = logits_node(model, trace);
  const std::size_t k = tape.value(logits).row_size();
  LogitJacobian jac{tape.value(logits), {}};
  for (std::size_t c = 0; c < k; ++c) {
    Tensor g = grad_input(tape, ops::column_sum(tape, logits, c), x);
    g.check_finite("logit gradient");
    jac.grads.push_back(std::move(g));
  }
  return jac;
}

std::vector<AdversarialExample> deepfool_batch(const TrainedModel& model, const Tensor& batch,
                                               std::span<const int> labels,
                                               const AttackConfig& cfg) {
  const std::size_t n = labels.size();
  const std::size_t d = batch.row_size();
  const bool l2 = cfg.family == AttackFamily::kDeepFoolL2;
  const Shape item = batch.row_shape();

  Tensor adv = batch;
  std::vector<int> before(n, 0);
  std::vector<std::size_t> iterations(n, 0);
  std::vector<AttackStatus> status(n, AttackStatus::kExhausted);
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;

  for (std::size_t it = 0; it <= cfg.max_iter && !active.empty(); ++it) {
    std::vector<Tensor> rows;
    rows.reserve(active.size());
    for (auto i : active) rows.push_back(unstack_one(adv, i));
    const auto jac = logit_jacobian(model, stack(rows));
    const std::size_t k = jac.logits.row_size();
    std::vector<std::size_t> still;
    for (std::size_t r = 0; r < active.size(); ++r) {
      const std::size_t i = active[r];
      auto f = jac.logits.data().subspan(r * k, k);
      const int pred = argmax(f);
      if (it == 0) before[i] = pred;
      if (pred != labels[i]) {
        status[i] = AttackStatus::kOk;
        continue;
      }
      if (it == cfg.max_iter) continue;
      const auto y = static_cast<std::size_t>(labels[i]);
      auto gy = jac.grads[y].data().subspan(r * d, d);
      double best = kUnbounded;
      std::size_t best_k = k;
      double best_norm = 0.0;
      std::vector<double> w(d), best_w;
      for (std::size_t c = 0; c < k; ++c) {
        if (c == y) continue;
        auto gc = jac.grads[c].data().subspan(r * d, d);
        double q = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          w[j] = gc[j] - gy[j];
          q += l2 ? w[j] * w[j] : std::abs(w[j]);
        }
        if (q == 0.0) continue;
        const double dist = std::abs(f[c] - f[y]) / (l2 ? std::sqrt(q) : q);
        if (dist < best) {
          best = dist;
          best_k = c;
          best_norm = q;
          best_w = w;
        }
      }
      if (best_k == k) {
        status[i] = AttackStatus::kDegenerate;
        std::copy(batch.data().begin() + i * d, batch.data().begin() + (i + 1) * d,
                  adv.data().begin() + i * d);
        continue;
      }
      const double mag =
          cfg.overshoot * (std::abs(f[best_k] - f[y]) + cfg.boundary_push) / best_norm;
      auto x = batch.data().subspan(i * d, d);
      auto a = adv.data().subspan(i * d, d);
      std::vector<double> moved(d);
      for (std::size_t j = 0; j < d; ++j)
        moved[j] = a[j] + mag * (l2 ? best_w[j] : sign(best_w[j]));
      if (l2) {
        Tensor p(item, std::move(moved));
        if (std::isfinite(cfg.epsilon)) p = project_l2_ball(p, Tensor(item, {x.begin(), x.end()}), cfg.epsilon);
        for (std::size_t j = 0; j < d; ++j) a[j] = std::clamp(p[j], cfg.pixel_min, cfg.pixel_max);
      } else {
        for (std::size_t j = 0; j < d; ++j)
          a[j] = clip_coord(moved[j], x[j], cfg.epsilon, cfg.pixel_min, cfg.pixel_max);
      }
      ++iterations[i];
      still.push_back(i);
    }
    active = std::move(still);
  }
  return finish(model, batch, adv, labels, before, iterations, status);
}

}  // namespace

const char* attack_family_name(AttackFamily family) {
  return kFamilyNames[static_cast<int>(family)];
}

AttackFamily attack_family_from_name(const std::string& name) {
  for (int i = 0; i < 6; ++i)
    if (name == kFamilyNames[i]) return static_cast<AttackFamily>(i);
  throw ConfigError("unknown attack family '" + name + "'");
}

bool is_deepfool(AttackFamily family) {
  return family == AttackFamily::kDeepFoolL2 || family == AttackFamily::kDeepFoolLinf;
}

bool is_l2(AttackFamily family) {
  return family == AttackFamily::kIterativeL2 || family == AttackFamily::kDeepFoolL2;
}

const char* attack_status_name(AttackStatus status) {
  switch (status) {
    case AttackStatus::kOk: return "ok";
    case AttackStatus::kDegenerate: return "degenerate";
    case AttackStatus::kExhausted: return "exhausted";
  }
  return "?";
}

AttackConfig AttackConfig::defaults(AttackFamily family, double epsilon) {
  AttackConfig c;
  c.family = family;
  c.epsilon = epsilon;
  switch (family) {
    case AttackFamily::kFast:
      c.alpha = epsilon > 0.0 ? epsilon : 1.0;
      c.max_iter = 1;
      break;
    case AttackFamily::kIterativeLinf:
      c.alpha = 1.0;
      c.max_iter = 10;
      break;
    case AttackFamily::kIterativeL2:
      c.alpha = 20.0;
      c.max_iter = 10;
      break;
    case AttackFamily::kDeepFoolL2:
    case AttackFamily::kDeepFoolLinf:
      c.max_iter = 50;
      break;
    case AttackFamily::kDynamic:
      c.alpha = 0.25;
      c.max_iter = 10;
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (!is_deepfool(family) && !std::isfinite(epsilon))
    throw ConfigError("epsilon must be finite for " + std::string(attack_family_name(family)));
  const bool stepped = family == AttackFamily::kIterativeLinf ||
                       family == AttackFamily::kIterativeL2 || family == AttackFamily::kDynamic;
  if (stepped && !(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (max_iter == 0) throw ConfigError("max_iter must be positive");
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw ConfigError("sigma must lie in [0, 1]");
  if (!(pixel_min < pixel_max)) throw ConfigError("pixel range is empty");
  if (!(overshoot > 0.0)) throw ConfigError("overshoot must be > 0");
  if (!(boundary_push >= 0.0)) throw ConfigError("boundary_push must be >= 0");
}

std::string AttackConfig::id() const {
  std::ostringstream os;
  os << attack_family_name(family);
  if (std::isfinite(epsilon)) os << ":eps=" << epsilon;
  if (family == AttackFamily::kDynamic) os << ":sigma=" << sigma;
  return os.str();
}

nlohmann::json to_json(const AttackConfig& c) {
  return {{"family", attack_family_name(c.family)},
          {"epsilon", std::isfinite(c.epsilon) ? nlohmann::json(c.epsilon) : nlohmann::json()},
          {"alpha", c.alpha},
          {"max_iter", c.max_iter},
          {"sigma", c.sigma},
          {"pixel_range", {c.pixel_min, c.pixel_max}},
          {"overshoot", c.overshoot},
          {"boundary_push", c.boundary_push},
          {"detector_objective",
           c.detector_objective == DetectorObjective::kEvade ? "evade" : "reinforce"}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  try {
    const auto family = attack_family_from_name(j.at("family").get<std::string>());
    AttackConfig c = AttackConfig::defaults(family);
    if (j.contains("epsilon"))
      c.epsilon = j["epsilon"].is_null() ? kUnbounded : j["epsilon"].get<double>();
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("max_iter")) c.max_iter = j["max_iter"].get<std::size_t>();
    if (j.contains("sigma")) c.sigma = j["sigma"].get<double>();
    if (j.contains("pixel_range")) {
      c.pixel_min = j["pixel_range"].at(0).get<double>();
      c.pixel_max = j["pixel_range"].at(1).get<double>();
    }
    if (j.contains("overshoot")) c.overshoot = j["overshoot"].get<double>();
    if (j.contains("boundary_push")) c.boundary_push = j["boundary_push"].get<double>();
    if (j.contains("detector_objective")) {
      const auto o = j["detector_objective"].get<std::string>();
      if (o == "evade") c.detector_objective = DetectorObjective::kEvade;
      else if (o == "reinforce") c.detector_objective = DetectorObjective::kReinforce;
      else throw ConfigError("unknown detector_objective '" + o + "'");
    }
    if (family == AttackFamily::kFast && !j.contains("alpha")) c.alpha = c.epsilon > 0 ? c.epsilon : 1.0;
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attack config: ") + e.what());
  }
}

Tensor project_l2_ball(const Tensor& p, const Tensor& center, double epsilon) {
  if (p.shape() != center.shape())
    throw ShapeError("projection of " + shape_str(p.shape()) + " around " + shape_str(center.shape()));
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  const double dist = distance_l2(p.data(), center.data());
  if (dist <= epsilon) return p;
  Tensor out = center;
  const double f = epsilon / dist;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += f * (p[i] - center[i]);
  return out;
}

Tensor clip_linf(const Tensor& p, const Tensor& center, double epsilon, double lo, double hi) {
  if (p.shape() != center.shape())
    throw ShapeError("clip of " + shape_str(p.shape()) + " around " + shape_str(center.shape()));
  Tensor out = p;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clip_coord(p[i], center[i], epsilon, lo, hi);
  return out;
}

Tensor clip_box(const Tensor& p, double lo, double hi) {
  Tensor out = p;
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return out;
}

std::vector<AdversarialExample> attack_batch(const TrainedModel& model, const Tensor& batch,
                                             std::span<const int> labels, const AttackConfig& cfg,
                                             const DetectorRef* detector) {
  check_inputs(model, batch, labels, cfg);
  if (labels.empty()) return {};
  switch (cfg.family) {
    case AttackFamily::kFast:
    case AttackFamily::kIterativeLinf:
    case AttackFamily::kIterativeL2:
      return gradient_attack(model, batch, labels, cfg);
    case AttackFamily::kDeepFoolL2:
    case AttackFamily::kDeepFoolLinf:
      return deepfool_batch(model, batch, labels, cfg);
    case AttackFamily::kDynamic:
      if (detector == nullptr) throw ConfigError("dynamic attack needs a detector");
      return dynamic_batch(model, *detector, batch, labels, cfg,
                           std::vector<double>(labels.size(), cfg.sigma));
  }
  throw ConfigError("unknown attack family");
}

namespace {

AdversarialExample single(const TrainedModel& model, const Tensor& x, int y, AttackConfig cfg,
                          AttackFamily expect, const DetectorRef* det = nullptr) {
  if (cfg.family != expect && !(is_deepfool(expect) && is_deepfool(cfg.family)))
    cfg.family = expect;
  const int labels[1] = {y};
  return attack_batch(model, as_batch(x), labels, cfg, det).front();
}

}  // namespace

AdversarialExample fast_gradient_sign(const TrainedModel& model, const Tensor& x, int y_true,
                                      const AttackConfig& cfg) {
  return single(model, x, y_true, cfg, AttackFamily::kFast);
}

AdversarialExample basic_iterative_linf(const TrainedModel& model, const Tensor& x, int y_true,
                                        const AttackConfig& cfg) {
  return single(model, x, y_true, cfg, AttackFamily::kIterativeLinf);
}

AdversarialExample basic_iterative_l2(const TrainedModel& model, const Tensor& x, int y_true,
                                      const AttackConfig& cfg) {
  return single(model, x, y_true, cfg, AttackFamily::kIterativeL2);
}

AdversarialExample deepfool(const TrainedModel& model, const Tensor& x, int y_true,
                            const AttackConfig& cfg) {
  if (!is_deepfool(cfg.family)) throw ConfigError("deepfool needs a deepfool_l2 or deepfool_linf config");
  return single(model, x, y_true, cfg, cfg.family);
}

AdversarialExample dynamic_attack(const TrainedModel& model, const DetectorRef& detector,
                                  const Tensor& x, int y_true, const AttackConfig& cfg) {
  return single(model, x, y_true, cfg, AttackFamily::kDynamic, &detector);
}

std::vector<AdversarialExample> attack_dataset(const TrainedModel& model,
                                               const LabeledDataset& data, const AttackConfig& cfg,
                                               const DetectorRef* detector) {
  std::vector<AdversarialExample> out;
  out.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += kAttackChunk) {
    const std::size_t count = std::min(kAttackChunk, data.size() - begin);
    const std::span<const int> labels(data.labels.data() + begin, count);
    auto part = attack_batch(model, data.batch(begin, count), labels, cfg, detector);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<AdversarialExample> dynamic_attack_batch(const TrainedModel& model,
                                                     const DetectorRef& detector,
                                                     const Tensor& batch,
                                                     std::span<const int> labels,
                                                     const AttackConfig& cfg,
                                                     std::span<const double> sigmas) {
  if (cfg.family != AttackFamily::kDynamic) throw ConfigError("expected a dynamic attack config");
  check_inputs(model, batch, labels, cfg);
  if (sigmas.size() != labels.size()) throw ShapeError("one sigma per example required");
  for (double s : sigmas)
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("sigma must lie in [0, 1]");
  if (labels.empty()) return {};
  return dynamic_batch(model, detector, batch, labels, cfg, sigmas);
}

LabeledDataset perturbed_dataset(std::span<const AdversarialExample> examples,
                                 std::size_t class_count, Split split) {
  std::vector<Tensor> items;
  std::vector<int> labels;
  items.reserve(examples.size());
  for (const auto& e : examples) {
    items.push_back(e.perturbed);
    labels.push_back(e.true_label);
  }
  return make_dataset(items, std::move(labels), class_count, split);
}

}  // namespace advdet
