#include "platesym/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <numbers>
#include <random>
#include <sstream>

namespace platesym::training {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

double sign(double v) { return v > 0 ? 1.0 : v < 0 ? -1.0 : 0.0; }

struct LossParts {
  double value, d_dx, d_dy;
};

LossParts locate_parts(double dx, double dy, const LocateLossConfig& cfg) {
  const double s = cfg.face_mm;
  const double c2 = cfg.clamp_mm() * cfg.clamp_mm();
  const double d2 = dx * dx + dy * dy;
  const double m = std::max(d2, c2);
  const double dm_dx = d2 > c2 ? 2.0 * dx : 0.0;
  const double dm_dy = d2 > c2 ? 2.0 * dy : 0.0;

  const double ox = std::max(0.0, s - std::abs(dx)), oy = std::max(0.0, s - std::abs(dy));
  const double inter = ox * oy;
  const double di_dx = ox > 0.0 ? -sign(dx) * oy : 0.0;
  const double di_dy = oy > 0.0 ? -sign(dy) * ox : 0.0;
  double a = 0.0, da_di = 0.0;
  if (cfg.overlap == Overlap::face) {
    a = inter / (s * s);
    da_di = 1.0 / (s * s);
  } else {
    const double uni = 2.0 * s * s - inter;
    a = inter / uni;
    da_di = 2.0 * s * s / (uni * uni);
  }
  return {m * (1.0 - a), dm_dx * (1.0 - a) - m * da_di * di_dx, dm_dy * (1.0 - a) - m * da_di * di_dy};
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Views of one group, in order of first appearance.
std::vector<std::vector<std::size_t>> groups_of(const signals::TaskSet& set) {
  std::map<std::size_t, std::size_t> slot;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < set.count(); ++i) {
    auto [it, fresh] = slot.try_emplace(set.group[i], out.size());
    if (fresh) out.emplace_back();
    out[it->second].push_back(i);
  }
  return out;
}

void write_history(std::ofstream& os, const nlohmann::json& rec) {
  os << rec.dump() << '\n';
  os.flush();
}

}  // namespace

// ---- losses ------------------------------------------------------------------

double overlap_area(double dx, double dy, double face) {
  return std::max(0.0, face - std::abs(dx)) * std::max(0.0, face - std::abs(dy));
}

double overlap_fraction(double dx, double dy, const LocateLossConfig& cfg) {
  const double inter = overlap_area(dx, dy, cfg.face_mm);
  const double face = cfg.face_mm * cfg.face_mm;
  return cfg.overlap == Overlap::face ? inter / face : inter / (2.0 * face - inter);
}

double locate_loss(signals::Point pred, signals::Point truth, const LocateLossConfig& cfg) {
  return locate_parts(pred[0] - truth[0], pred[1] - truth[1], cfg).value;
}

ad::Tensor locate_loss(const ad::Tensor& pred, std::span<const double> target,
                       const LocateLossConfig& cfg) {
  require(pred.rank() == 2 && pred.dim(1) == 2, "locate_loss: predictions must be [B, 2]");
  require(target.size() == pred.numel(), "locate_loss: target count does not match predictions");
  const std::size_t batch = pred.dim(0);
  std::vector<double> value(batch), jac(2 * batch);
  const auto p = pred.value();
  for (std::size_t b = 0; b < batch; ++b) {
    const auto parts = locate_parts(p[2 * b] - target[2 * b], p[2 * b + 1] - target[2 * b + 1], cfg);
    value[b] = parts.value;
    jac[2 * b] = parts.d_dx;
    jac[2 * b + 1] = parts.d_dy;
  }
  ad::Node* in = &pred.node();
  return pred.graph().record({batch}, std::move(value), pred.requires_grad(),
                             [in, jac = std::move(jac)](ad::Node& self) {
                               auto& g = in->grad_buffer();
                               for (std::size_t b = 0; b < self.grad.size(); ++b) {
                                 g[2 * b] += self.grad[b] * jac[2 * b];
                                 g[2 * b + 1] += self.grad[b] * jac[2 * b + 1];
                               }
                             });
}

double detect_loss(double logit, double label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

ad::Tensor detect_loss(const ad::Tensor& logits, std::span<const double> labels) {
  require(logits.rank() == 2 && logits.dim(1) == 1, "detect_loss: logits must be [B, 1]");
  require(labels.size() == logits.dim(0), "detect_loss: one label per logit");
  const std::size_t batch = labels.size();
  std::vector<double> value(batch), slope(batch);
  const auto z = logits.value();
  for (std::size_t b = 0; b < batch; ++b) {
    require(labels[b] == 0.0 || labels[b] == 1.0, "detect_loss: labels must be 0 or 1");
    value[b] = detect_loss(z[b], labels[b]);
    slope[b] = sigmoid(z[b]) - labels[b];
  }
  ad::Node* in = &logits.node();
  return logits.graph().record({batch}, std::move(value), logits.requires_grad(),
                               [in, slope = std::move(slope)](ad::Node& self) {
                                 auto& g = in->grad_buffer();
                                 for (std::size_t b = 0; b < slope.size(); ++b) g[b] += self.grad[b] * slope[b];
                               });
}

// ---- schedule and optimiser --------------------------------------------------

OneCycle OneCycle::for_task(models::Task task, std::size_t epochs) {
  OneCycle s;
  s.epochs = epochs;
  s.lr_final = task == models::Task::locate ? 1e-3 : 1e-7;
  return s;
}

std::size_t OneCycle::ramp_epochs() const {
  const auto r = static_cast<std::size_t>(std::llround(ramp_fraction * static_cast<double>(epochs)));
  return epochs == 0 ? 0 : std::min(r, epochs - 1);
}

double OneCycle::lr_at(std::size_t epoch) const {
  if (epoch >= epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(epochs) + ")");
  }
  const std::size_t ramp = ramp_epochs();
  if (epoch < ramp) {
    return lr_init + (lr_peak - lr_init) * static_cast<double>(epoch) / static_cast<double>(ramp);
  }
  if (epochs - 1 == ramp) return lr_peak;
  const double f = static_cast<double>(epoch - ramp) / static_cast<double>(epochs - 1 - ramp);
  const double shape = descent == Descent::cosine ? 0.5 * (1.0 + std::cos(std::numbers::pi * f)) : 1.0 - f;
  return lr_final + (lr_peak - lr_final) * shape;
}

Adam::Adam(const std::vector<ad::Parameter>& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(std::vector<ad::Parameter>& params, double lr) {
  require(params.size() == m_.size(), "adam: parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].value();
    const auto& grad = params[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      value[k] = value[k] * decay - lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

// ---- metrics -----------------------------------------------------------------

nlohmann::json LocatorMetrics::to_json() const {
  return {{"count", count}, {"mde", mde}, {"var", var}, {"std", std}, {"rmse", rmse}};
}

nlohmann::json DetectorMetrics::to_json() const {
  return {{"count", count}, {"accuracy", accuracy}, {"bce", bce}, {"perplexity", perplexity}};
}

std::vector<double> predict_all(const models::Model& model, const signals::TaskSet& set, std::size_t chunk) {
  require(set.time_len == model.spec().input_length, "predict: set length does not match the model input");
  const std::size_t per = signals::kPairs * set.time_len, n = set.count();
  std::vector<double> out;
  out.reserve(n * model.spec().output_size());
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t b = std::min(chunk, n - start);
    const auto y = model.predict(std::span<const double>(set.inputs.data() + start * per, b * per), b);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

LocatorMetrics locator_metrics(std::span<const double> pred, const signals::TaskSet& set,
                               const LocateLossConfig& cfg) {
  require(set.count() > 0, "evaluate: empty set");
  require(pred.size() == 2 * set.count() && set.target_size() == 2, "evaluate: not a locator set");
  LocatorMetrics m;
  std::vector<double> dist;
  double loss = 0.0;
  for (const auto& views : groups_of(set)) {
    // Offsets from the first view keep identical views exact.
    const std::size_t first = views[0];
    double px = 0.0, py = 0.0;
    for (std::size_t i : views) {
      px += pred[2 * i] - pred[2 * first];
      py += pred[2 * i + 1] - pred[2 * first + 1];
    }
    px = pred[2 * first] + px / static_cast<double>(views.size());
    py = pred[2 * first + 1] + py / static_cast<double>(views.size());
    const double tx = set.targets[2 * views[0]], ty = set.targets[2 * views[0] + 1];
    dist.push_back(std::hypot(px - tx, py - ty));
    loss += locate_loss({px, py}, {tx, ty}, cfg);
  }
  m.count = dist.size();
  const double n = static_cast<double>(m.count);
  for (double d : dist) m.mde += d / n;
  for (double d : dist) m.var += (d - m.mde) * (d - m.mde) / n;
  m.std = std::sqrt(m.var);
  m.rmse = std::sqrt(loss / n);
  return m;
}

LocatorMetrics evaluate_locator(const models::Model& model, const signals::TaskSet& set,
                                const LocateLossConfig& cfg) {
  require(set.count() > 0, "evaluate: empty set");
  return locator_metrics(predict_all(model, set), set, cfg);
}

DetectorMetrics detector_metrics(std::span<const double> logits, const signals::TaskSet& set,
                                 bool average_logits) {
  require(set.count() > 0, "evaluate: empty set");
  require(logits.size() == set.count() && set.target_size() == 1, "evaluate: not a detector set");
  DetectorMetrics m;
  std::size_t correct = 0;
  double bce = 0.0;
  for (const auto& views : groups_of(set)) {
    double acc = 0.0;
    for (std::size_t i : views) acc += average_logits ? logits[i] : sigmoid(logits[i]);
    acc /= static_cast<double>(views.size());
    const double p = average_logits ? sigmoid(acc) : acc;
    const double label = set.targets[views[0]];
    correct += (p >= 0.5) == (label == 1.0);
    const double pc = std::clamp(p, 1e-300, 1.0 - 1e-16);
    bce += average_logits ? detect_loss(acc, label)
                          : -(label * std::log(pc) + (1.0 - label) * std::log1p(-pc));
    ++m.count;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
  m.bce = bce / static_cast<double>(m.count);
  m.perplexity = std::exp(m.bce);
  return m;
}

DetectorMetrics evaluate_detector(const models::Model& model, const signals::TaskSet& set,
                                  bool average_logits) {
  require(set.count() > 0, "evaluate: empty set");
  return detector_metrics(predict_all(model, set), set, average_logits);
}

// ---- training ----------------------------------------------------------------

nlohmann::json evaluate(const models::Model& model, const signals::TaskSet& train_set,
                        const signals::TaskSet& test_set, const TrainConfig& cfg) {
  nlohmann::json out;
  if (model.spec().task == models::Task::locate) {
    const auto tr = evaluate_locator(model, train_set, cfg.loss);
    const auto te = evaluate_locator(model, test_set, cfg.loss);
    out["train"] = tr.to_json();
    out["test"] = te.to_json();
    out["gap"] = cfg.gap_on_mde ? te.mde - tr.mde : te.rmse - tr.rmse;
  } else {
    const auto tr = evaluate_detector(model, train_set, cfg.average_logits);
    const auto te = evaluate_detector(model, test_set, cfg.average_logits);
    out["train"] = tr.to_json();
    out["test"] = te.to_json();
    out["gap"] = te.bce - tr.bce;
  }
  return out;
}

TrainResult train(models::Model& model, const signals::TaskSet& train_set,
                  const signals::TaskSet& test_set, const TrainConfig& cfg) {
  const auto& spec = model.spec();
  const bool locate = spec.task == models::Task::locate;
  require(train_set.count() > 0, "train: empty training set");
  require(test_set.count() > 0, "train: empty test set");
  require(train_set.time_len == spec.input_length && test_set.time_len == spec.input_length,
          "train: sequence length does not match the model input");
  require(train_set.target_size() == (locate ? 2u : 1u), "train: targets do not match the task");
  require(cfg.batch_size > 0 && cfg.epochs > 0, "train: batch size and epochs must be positive");
  require(cfg.schedule.epochs == cfg.epochs, "train: schedule length differs from the epoch count");

  std::ofstream history;
  if (!cfg.history_path.empty()) {
    history.open(cfg.history_path, std::ios::trunc);
    if (!history) throw std::runtime_error("train: cannot write history to " + cfg.history_path.string());
  }
  if (cfg.checkpoint_every > 0) std::filesystem::create_directories(cfg.checkpoint_dir);

  ad::Rng rng(signals::mix_seed(cfg.seed, 0x7a11));
  Adam adam(model.parameters(), cfg.adam);
  const std::size_t n = train_set.count(), per = signals::kPairs * train_set.time_len;
  const std::size_t tsize = train_set.target_size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      std::vector<double> x(b * per), t(b * tsize);
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t i = order[start + k];
        std::copy_n(train_set.inputs.begin() + static_cast<long>(i * per), per, x.begin() + static_cast<long>(k * per));
        std::copy_n(train_set.targets.begin() + static_cast<long>(i * tsize), tsize,
                    t.begin() + static_cast<long>(k * tsize));
      }
      ad::Graph g;
      auto y = model.forward(g, g.constant({b, 4, 4, train_set.time_len}, std::move(x)), models::Mode::train, rng);
      auto loss = ad::mean(locate ? locate_loss(y, t, cfg.loss) : detect_loss(y, t));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", lr " +
                              std::to_string(lr));
      }
      model.zero_grad();
      g.backward(loss);
      adam.step(model.parameters(), lr);
      total += value * static_cast<double>(b);
    }

    nlohmann::json rec;
    rec["epoch"] = epoch;
    rec["lr"] = lr;
    rec["train_loss"] = total / static_cast<double>(n);
    const bool last = epoch + 1 == cfg.epochs;
    if (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)) {
      if (locate) {
        const auto m = evaluate_locator(model, test_set, cfg.loss);
        rec["test_loss"] = m.rmse * m.rmse;
        rec["test_rmse"] = m.rmse;
        rec["test_mde"] = m.mde;
      } else {
        const auto m = evaluate_detector(model, test_set, cfg.average_logits);
        rec["test_loss"] = m.bce;
        rec["test_accuracy"] = m.accuracy;
        rec["test_perplexity"] = m.perplexity;
      }
      if (!std::isfinite(rec["test_loss"].get<double>())) {
        throw DivergenceError("train: non-finite test loss at epoch " + std::to_string(epoch));
      }
    }
    if (history.is_open()) write_history(history, rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
    result.history.push_back(rec);

    if (cfg.checkpoint_every > 0 && ((epoch + 1) % cfg.checkpoint_every == 0 || last)) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch + 1 << ".ckpt";
      models::save_checkpoint(cfg.checkpoint_dir / name.str(), model, rng,
                              {{"epoch", epoch + 1}, {"seed", cfg.seed}, {"adam_steps", adam.steps()}});
    }
  }
  result.final_metrics = evaluate(model, train_set, test_set, cfg);
  return result;
}

// ---- window ablation ---------------------------------------------------------

std::string Window::label() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << t0_ms << "-" << t1_ms;
  return os.str();
}

std::vector<Window> ablation_windows() { return {{0.07, 0.40}, {0.16, 0.40}, {0.07, 0.24}, {0.16, 0.24}}; }

signals::TaskSet windowed(const signals::TaskSet& set, const Window& w, const signals::CompressConfig& cc) {
  require(cc.output_length() == set.time_len, "window: set length does not match the compression");
  auto out = set;
  signals::apply_window(out.inputs, set.time_len, signals::window_samples(w.t0_ms, w.t1_ms, cc));
  return out;
}

std::vector<AblationRow> ablate_windows(const models::ModelSpec& spec, const signals::TaskSet& train_set,
                                        const signals::TaskSet& test_set, const TrainConfig& cfg,
                                        const std::vector<Window>& windows) {
  require(spec.task == models::Task::locate, "ablation: only defined for localisation");
  std::vector<AblationRow> rows;
  for (const auto& w : windows) {
    AblationRow row;
    row.window = w;
    row.samples = signals::window_samples(w.t0_ms, w.t1_ms);
    models::Model model(spec);
    auto run_cfg = cfg;
    run_cfg.history_path.clear();
    run_cfg.checkpoint_every = 0;
    const auto tr = windowed(train_set, w), te = windowed(test_set, w);
    train(model, tr, te, run_cfg);
    row.test = evaluate_locator(model, te, cfg.loss);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace platesym::training
