#include "tbc/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <thread>

#include "tbc/weights.hpp"

namespace tbc {

using json = nlohmann::json;

namespace {

// Rng stream namespaces; tuple indices used by the synthesizer stay far below.
constexpr std::uint64_t kInitStream = 1ULL << 40;
constexpr std::uint64_t kShuffleStream = 1ULL << 41;

}  // namespace

// --- config -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (epochs < 1) throw std::invalid_argument("epoch count must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(decay_factor > 0.0)) throw std::invalid_argument("decay factor must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw std::invalid_argument("invalid adaptive-moment hyperparameters");
  }
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) throw std::invalid_argument("decay epochs must be strictly increasing");
  }
}

std::vector<int> TrainConfig::resolved_decay() const {
  if (!decay_epochs.empty()) return decay_epochs;
  const int a = static_cast<int>(std::lround(0.7 * epochs));
  const int b = static_cast<int>(std::lround(0.9 * epochs));
  std::vector<int> d{a};
  if (b > a) d.push_back(b);
  return d;
}

double TrainConfig::lr_at(int epoch) const {
  double r = lr;
  for (int e : resolved_decay()) {
    if (epoch >= e) r *= decay_factor;
  }
  return r;
}

namespace {

json config_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"decay_epochs", c.decay_epochs},
              {"decay_factor", c.decay_factor},
              {"lambda", c.lambda},
              {"seed", c.seed},
              {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"workers", c.workers},
              {"patience", c.patience}};
}

json loss_json(const LossBreakdown& l) {
  return json{{"l_l1", l.l_l1}, {"l_ssim", l.l_ssim}, {"l_t", l.l_t}, {"l_b", l.l_b},
              {"l_c", l.l_c},   {"total", l.total},   {"lambda", l.lambda}};
}

LossBreakdown loss_from_json(const json& j) {
  LossBreakdown l;
  l.l_l1 = j.at("l_l1");
  l.l_ssim = j.at("l_ssim");
  l.l_t = j.at("l_t");
  l.l_b = j.at("l_b");
  l.l_c = j.at("l_c");
  l.total = j.at("total");
  l.lambda = j.at("lambda");
  return l;
}

json log_json(const TrainLog& log) {
  json ep = json::array();
  for (const auto& r : log.epochs) {
    json e{{"epoch", r.epoch}, {"lr", r.lr}, {"loss", loss_json(r.loss)}, {"seconds", r.seconds}};
    e["accuracy"] = std::isnan(r.accuracy) ? json(nullptr) : json(r.accuracy);
    ep.push_back(std::move(e));
  }
  return json{{"epochs", ep}, {"warnings", log.warnings}};
}

TrainLog log_from_json(const json& j) {
  TrainLog log;
  for (const auto& e : j.at("epochs")) {
    EpochRecord r;
    r.epoch = e.at("epoch");
    r.lr = e.at("lr");
    r.loss = loss_from_json(e.at("loss"));
    r.seconds = e.at("seconds");
    if (!e.at("accuracy").is_null()) r.accuracy = e.at("accuracy");
    log.epochs.push_back(r);
  }
  log.warnings = j.at("warnings").get<std::vector<std::string>>();
  return log;
}

}  // namespace

TrainConfig scm_defaults() {
  TrainConfig c;
  c.lr = 0.001;
  return c;
}

std::string to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2); }
std::string to_json(const TrainLog& log) { return log_json(log).dump(2); }

TrainConfig train_config_from_json(const std::string& text, TrainConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config is not valid JSON: ") + e.what());
  }
  if (j.contains("config")) j = j["config"];
  if (!j.is_object()) throw DataError("config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "batch_size") c.batch_size = v;
      else if (k == "epochs") c.epochs = v;
      else if (k == "lr") c.lr = v;
      else if (k == "decay_epochs") c.decay_epochs = v.get<std::vector<int>>();
      else if (k == "decay_factor") c.decay_factor = v;
      else if (k == "lambda") c.lambda = v;
      else if (k == "seed") c.seed = v;
      else if (k == "optimizer") {
        const auto s = v.get<std::string>();
        if (s != "adam" && s != "sgd") throw DataError("optimizer must be \"adam\" or \"sgd\"");
        c.optimizer = s == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
      } else if (k == "beta1") c.beta1 = v;
      else if (k == "beta2") c.beta2 = v;
      else if (k == "eps") c.eps = v;
      else if (k == "workers") c.workers = v;
      else if (k == "patience") c.patience = v;
      else throw DataError("unknown config key \"" + k + "\"");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad config value: ") + e.what());
  }
  return c;
}

int default_workers() {
  if (const char* env = std::getenv("TBC_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min(v, 1024L));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// --- optimizers ---------------------------------------------------------------

namespace {

void check_grads(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) throw ShapeError("parameter/gradient shape mismatch at index " + std::to_string(i));
  }
}

}  // namespace

void sgd_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
  check_grads(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = *params[i];
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<real>(w[j] - lr * grads[i][j]);
  }
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& st, double lr,
               double beta1, double beta2, double eps) {
  check_grads(params, grads);
  if (st.m.empty()) {
    for (const auto* p : params) {
      st.m.emplace_back(p->shape());
      st.v.emplace_back(p->shape());
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = *params[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j];
      const double mj = beta1 * m[j] + (1.0 - beta1) * g;
      const double vj = beta2 * v[j] + (1.0 - beta2) * g * g;
      m[j] = static_cast<real>(mj);
      v[j] = static_cast<real>(vj);
      w[j] = static_cast<real>(w[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + eps));
    }
  }
}

// --- shared batch machinery ------------------------------------------------------

namespace {

struct SampleOut {
  LossBreakdown loss;
  std::vector<Tensor> grads;
  bool correct = false;
};

/// Runs fn(i) for every position in `items`, spread over `workers` threads.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), std::max<std::size_t>(n, 1));
  if (nw <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += nw) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Sums per-sample gradients in index order and divides by the count, so the
/// result does not depend on how samples were spread over workers.
std::vector<Tensor> reduce_mean(std::vector<SampleOut>& outs) {
  std::vector<Tensor> g = std::move(outs[0].grads);
  for (std::size_t s = 1; s < outs.size(); ++s) {
    for (std::size_t i = 0; i < g.size(); ++i) accumulate(g[i], outs[s].grads[i]);
  }
  const double inv = 1.0 / static_cast<double>(outs.size());
  for (auto& t : g) {
    for (auto& v : t.data()) v = static_cast<real>(v * inv);
  }
  return g;
}

bool all_finite(const LossBreakdown& l, const std::vector<Tensor>& grads) {
  if (!std::isfinite(l.total)) return false;
  for (const auto& t : grads) {
    for (real v : t.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, kShuffleStream + static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

void note_stall(TrainLog& log, int patience, double& best, int& best_epoch, int epoch, double loss) {
  if (loss < best) {
    best = loss;
    best_epoch = epoch;
  } else if (patience > 0 && epoch - best_epoch == patience) {
    log.warnings.push_back("loss has not improved for " + std::to_string(patience) + " epochs (epoch " +
                           std::to_string(epoch) + ")");
  }
}

std::filesystem::path dump_batch(const std::filesystem::path& dir_hint, const Dataset& data,
                                 const std::vector<std::size_t>& batch, int epoch, std::size_t batch_no) {
  auto dir = dir_hint.empty() ? std::filesystem::temp_directory_path() / "tbc_nan_dump" : dir_hint;
  dir /= "epoch" + std::to_string(epoch) + "_batch" + std::to_string(batch_no);
  std::filesystem::create_directories(dir);
  json info{{"epoch", epoch}, {"batch", batch_no}, {"samples", json::array()}};
  for (auto i : batch) {
    const auto& t = data.tuples[i];
    const std::string name = "sample_" + std::to_string(t.seed_index);
    save_tensor(dir / (name + "_d.tbct"), to_tensor(t.f_d));
    save_tensor(dir / (name + "_t.tbct"), to_tensor(t.f_t));
    info["samples"].push_back({{"index", i}, {"seed_index", t.seed_index}, {"y_T", t.y_t}});
  }
  std::ofstream(dir / "batch.json") << info.dump(2) << '\n';
  return dir;
}

void check_dataset(const Dataset& data, const char* what) {
  if (data.tuples.empty()) throw DataError(std::string(what) + ": empty dataset");
  const auto& first = data.tuples.front().f_d;
  for (const auto& t : data.tuples) {
    if (!t.f_d.same_extents(first) || !t.f_t.same_extents(first)) {
      throw DataError(std::string(what) + ": tuples have mixed extents");
    }
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// --- stage 1 ------------------------------------------------------------------

double scm_accuracy(const ScmNet& net, const Dataset& data, int workers) {
  if (data.tuples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::uint8_t> hit(data.tuples.size(), 0);
  parallel_for(data.tuples.size(), workers, [&](std::size_t i) {
    const Tensor p = classify(net, data.tuples[i].f_t);
    const auto best = std::max_element(p.data().begin(), p.data().end()) - p.data().begin();
    hit[i] = best == data.tuples[i].y_t;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(hit.size());
}

ScmTraining train_scm(const Dataset& train, const Dataset& validation, const TrainConfig& cfg, int classes) {
  cfg.validate();
  check_dataset(train, "train_scm");
  for (const auto& t : train.tuples) {
    if (t.y_t < 0 || t.y_t >= classes) throw DataError("label " + std::to_string(t.y_t) + " outside the class range");
  }
  Rng init = Rng::derive(cfg.seed, kInitStream);
  const auto& f0 = train.tuples.front().f_t;
  ScmTraining out{build_scm(classes, f0.height, f0.width, init), {}};
  AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cfg.lr_at(epoch);
    const auto order = epoch_order(train.tuples.size(), cfg.seed, epoch);
    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t n = std::min(bs, order.size() - start);
      std::vector<SampleOut> outs(n);
      parallel_for(n, cfg.workers, [&](std::size_t s) {
        const auto& t = train.tuples[order[start + s]];
        auto r = scm_forward_backward(out.net, to_tensor(t.f_t), static_cast<std::size_t>(t.y_t), true);
        outs[s].loss.l_c = r.loss;
        outs[s].loss.finalize();
        outs[s].grads = std::move(r.d_params);
      });
      LossBreakdown batch;
      for (const auto& o : outs) batch += o.loss;
      auto grads = reduce_mean(outs);
      if (!all_finite(batch, grads)) {
        throw NumericalError("non-finite classifier loss or gradient at epoch " + std::to_string(epoch));
      }
      sum += batch;
      auto params = out.net.parameters();
      if (cfg.optimizer == OptimizerKind::adam) {
        adam_step(params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps);
      } else {
        sgd_step(params, grads, lr);
      }
    }
    sum /= static_cast<double>(train.tuples.size());
    EpochRecord rec{epoch, lr, sum, scm_accuracy(out.net, validation, cfg.workers), seconds_since(t0)};
    out.log.epochs.push_back(rec);
    note_stall(out.log, cfg.patience, best, best_epoch, epoch, sum.total);
  }
  return out;
}

FrozenScm::FrozenScm(ScmNet net) : net_(std::move(net)), hash_(weights_hash(net_)) {}

bool FrozenScm::intact() const { return weights_hash(net_) == hash_; }

// --- stage 2 ------------------------------------------------------------------

SampleGrad tem_sample_grad(const TemNet& net, const ScmNet* scm, const TrainingTuple& tuple, double lambda,
                           LossMode mode) {
  const Tensor x = to_tensor(tuple.f_d);
  const Tensor target = to_tensor(tuple.f_t);
  TemCache cache;
  const Tensor y = tem_forward(net, x, &cache);
  SampleGrad out;
  Tensor d_out;
  if (mode == LossMode::tbc) {
    if (!scm) throw std::invalid_argument("joint loss needs the classifier");
    auto s = scm_forward_backward(*scm, y, static_cast<std::size_t>(tuple.y_t), false);
    const ClassifierTerm ct{s.loss, std::move(s.d_input)};
    auto j = loss_tbc(y, target, &ct, lambda);
    out.loss = j.parts;
    d_out = std::move(j.grad);
  } else {
    auto t = loss_t(y, target);
    out.loss.l_l1 = t.l1;
    out.loss.l_ssim = t.ssim_loss;
    out.loss.lambda = 0.0;
    out.loss.finalize();
    d_out = std::move(t.grad);
  }
  out.grads = tem_backward(net, cache, d_out).d_weights;
  return out;
}

namespace {

std::vector<Tensor*> tem_params(TemNet& net) {
  std::vector<Tensor*> p;
  for (auto* c : net.layers()) p.push_back(&c->weights);
  return p;
}

void save_tem_checkpoint(const std::filesystem::path& dir, const TemNet& net, const NetConfig& nc,
                         const TrainConfig& cfg, const TrainLog& log, const AdamState& adam, int epochs_done,
                         LossMode mode) {
  std::filesystem::create_directories(dir);
  save_weights(dir / "tem.tbcw", net);
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    save_tensor(dir / ("adam_m_" + std::to_string(i) + ".tbct"), adam.m[i]);
    save_tensor(dir / ("adam_v_" + std::to_string(i) + ".tbct"), adam.v[i]);
  }
  json state{{"stage", mode == LossMode::tbc ? "tem" : "tem_target_only"},
             {"net", {{"bc", nc.bc}, {"l", nc.l}, {"height", nc.height}, {"width", nc.width}}},
             {"config", config_json(cfg)},
             {"epochs_done", epochs_done},
             {"adam_step", adam.step},
             {"adam_tensors", adam.m.size()},
             {"log", log_json(log)}};
  const auto tmp = dir / "state.json.tmp";
  std::ofstream(tmp) << state.dump(2) << '\n';
  std::filesystem::rename(tmp, dir / "state.json");
}

TemTraining run_tem(const Dataset& data, const ScmNet* scm, const FrozenScm* frozen, const NetConfig& nc,
                    const TrainConfig& cfg, const CheckpointOptions& ckpt, LossMode mode) {
  cfg.validate();
  check_dataset(data, "train_tem");
  NetConfig shaped = nc;
  shaped.height = data.tuples.front().f_d.height;
  shaped.width = data.tuples.front().f_d.width;
  shaped.validate();
  Rng init = Rng::derive(cfg.seed, kInitStream + 1);
  TemTraining out{build_tem(shaped, init), {}};
  AdamState adam;
  int start_epoch = 0;

  if (ckpt.resume && !ckpt.dir.empty() && std::filesystem::exists(ckpt.dir / "state.json")) {
    std::ifstream in(ckpt.dir / "state.json");
    const json st = json::parse(in);
    const auto& n = st.at("net");
    if (n.at("bc") != shaped.bc || n.at("l") != shaped.l) throw DataError("checkpoint network does not match");
    out.net = load_tem(ckpt.dir / "tem.tbcw");
    out.log = log_from_json(st.at("log"));
    start_epoch = st.at("epochs_done");
    adam.step = st.at("adam_step");
    const std::size_t nt = st.at("adam_tensors");
    for (std::size_t i = 0; i < nt; ++i) {
      adam.m.push_back(load_tensor(ckpt.dir / ("adam_m_" + std::to_string(i) + ".tbct")));
      adam.v.push_back(load_tensor(ckpt.dir / ("adam_v_" + std::to_string(i) + ".tbct")));
    }
  }

  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (const auto& r : out.log.epochs) note_stall(out.log, 0, best, best_epoch, r.epoch, r.loss.total);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cfg.lr_at(epoch);
    const auto order = epoch_order(data.tuples.size(), cfg.seed, epoch);
    LossBreakdown sum;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_no) {
      const std::size_t n = std::min(bs, order.size() - start);
      std::vector<SampleOut> outs(n);
      parallel_for(n, cfg.workers, [&](std::size_t s) {
        auto g = tem_sample_grad(out.net, scm, data.tuples[order[start + s]], cfg.lambda, mode);
        outs[s].loss = g.loss;
        outs[s].grads = std::move(g.grads);
      });
      LossBreakdown batch;
      for (const auto& o : outs) batch += o.loss;
      auto grads = reduce_mean(outs);
      if (!all_finite(batch, grads)) {
        const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(start + n));
        const auto where = dump_batch(ckpt.dump_dir.empty() ? ckpt.dir : ckpt.dump_dir, data, idx, epoch, batch_no);
        throw NumericalError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no) + "; batch written to " + where.string());
      }
      sum += batch;
      auto params = tem_params(out.net);
      if (cfg.optimizer == OptimizerKind::adam) {
        adam_step(params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps);
      } else {
        sgd_step(params, grads, lr);
      }
    }
    sum /= static_cast<double>(data.tuples.size());
    sum.lambda = mode == LossMode::tbc ? cfg.lambda : 0.0;
    out.log.epochs.push_back(EpochRecord{epoch, lr, sum, std::numeric_limits<double>::quiet_NaN(), seconds_since(t0)});
    note_stall(out.log, cfg.patience, best, best_epoch, epoch, sum.total);
    if (frozen && !frozen->intact()) throw std::logic_error("classifier weights changed during TEM training");
    if (!ckpt.dir.empty()) save_tem_checkpoint(ckpt.dir, out.net, shaped, cfg, out.log, adam, epoch + 1, mode);
  }
  return out;
}

}  // namespace

TemTraining train_tem(const Dataset& data, const FrozenScm& scm, const NetConfig& net_cfg, const TrainConfig& cfg,
                      const CheckpointOptions& ckpt) {
  return run_tem(data, &scm.net(), &scm, net_cfg, cfg, ckpt, LossMode::tbc);
}

TemTraining train_tem_target_only(const Dataset& data, const NetConfig& net_cfg, const TrainConfig& cfg,
                                  const CheckpointOptions& ckpt) {
  return run_tem(data, nullptr, nullptr, net_cfg, cfg, ckpt, LossMode::target_only);
}

}  // namespace tbc
