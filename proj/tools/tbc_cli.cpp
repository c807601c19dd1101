// tbc: command-line front end for synthesis, training, detection and evaluation.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "tbc/detect.hpp"
#include "tbc/eval.hpp"
#include "tbc/synth.hpp"
#include "tbc/train.hpp"
#include "tbc/weights.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Table2Row {
  int bc, l;
  double m_m, m_p, m_total;
  int ops;
};

// Reference storage/compute figures at 256x256, in units of 2^20.
constexpr Table2Row kTable2[] = {
    {8, 3, 1.750, 0.046, 1.796, 54},    {8, 4, 1.938, 0.187, 2.124, 72},    {8, 5, 2.031, 0.749, 2.781, 90},
    {8, 6, 2.078, 2.999, 5.078, 108},   {16, 3, 3.375, 0.185, 3.560, 216},  {16, 4, 3.750, 0.747, 4.497, 288},
    {16, 5, 3.938, 2.997, 6.935, 360},  {16, 6, 4.031, 11.997, 16.029, 432},
};

std::string mebi3(std::uint64_t v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", tbc::BudgetReport::in_mebi(v));
  return b;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw tbc::DataError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw tbc::DataError("cannot write " + p.string());
  out << s;
}

std::vector<int> parse_counts(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--counts expects comma-separated non-negative integers, got \"" + s + "\"");
    }
  }
  if (out.empty()) throw UsageError("--counts is empty");
  return out;
}

std::string frame_name(const tbc::TrainingTuple& t) {
  char b[32];
  std::snprintf(b, sizeof b, "%06llu", static_cast<unsigned long long>(t.seed_index));
  return b;
}

// --- shared option blocks ---------------------------------------------------

struct TrainFlags {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch, patience;
  std::optional<double> lr, lambda;
  std::optional<std::string> optimizer;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--seed", f.seed, "RNG seed (required here or in --config)");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch", f.batch, "batch size");
  cmd->add_option("--lr", f.lr, "initial learning rate");
  cmd->add_option("--lambda", f.lambda, "classifier loss weight");
  cmd->add_option("--patience", f.patience, "epochs without improvement before a warning");
  cmd->add_option("--optimizer", f.optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
}

tbc::TrainConfig resolve_train(const std::string& config_path, const TrainFlags& f, int workers,
                               tbc::TrainConfig c = {}) {
  bool seeded = false;
  if (!config_path.empty()) {
    const auto text = read_text(config_path);
    c = tbc::train_config_from_json(text, c);
    auto j = json::parse(text);
    if (j.contains("config")) j = j["config"];
    seeded = j.contains("seed");
  }
  if (f.seed) {
    c.seed = *f.seed;
    seeded = true;
  }
  if (!seeded) throw UsageError("an explicit --seed is required for reproducible runs");
  if (f.epochs) c.epochs = *f.epochs;
  if (f.batch) c.batch_size = *f.batch;
  if (f.lr) c.lr = *f.lr;
  if (f.lambda) c.lambda = *f.lambda;
  if (f.patience) c.patience = *f.patience;
  if (f.optimizer) c.optimizer = *f.optimizer == "sgd" ? tbc::OptimizerKind::sgd : tbc::OptimizerKind::adam;
  c.workers = workers;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

void print_log_tail(const tbc::TrainLog& log) {
  for (const auto& r : log.epochs) {
    std::printf("epoch %3d  lr %.2e  total %.6f  l1 %.6f  ssim %.6f  b %.6f  c %.6f", r.epoch, r.lr, r.loss.total,
                r.loss.l_l1, r.loss.l_ssim, r.loss.l_b, r.loss.l_c);
    if (!std::isnan(r.accuracy)) std::printf("  acc %.4f", r.accuracy);
    std::printf("  %.1fs\n", r.seconds);
  }
  for (const auto& w : log.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

// --- subcommands ----------------------------------------------------------------

int cmd_budget(int bc, int l, int h, int w, bool table2) {
  if (table2) {
    int pass = 0;
    std::printf("%4s %2s %10s %10s %10s %6s  %s\n", "BC", "L", "M_m", "M_p", "M_TBC", "OPs", "match");
    for (const auto& row : kTable2) {
      const auto r = tbc::budget({row.bc, row.l, 256, 256});
      char ops[32];
      std::snprintf(ops, sizeof ops, "%.0f", tbc::BudgetReport::in_mebi(r.ops));
      char ref_mm[16], ref_mp[16], ref_mt[16];
      std::snprintf(ref_mm, sizeof ref_mm, "%.3f", row.m_m);
      std::snprintf(ref_mp, sizeof ref_mp, "%.3f", row.m_p);
      std::snprintf(ref_mt, sizeof ref_mt, "%.3f", row.m_total);
      const bool ok = mebi3(r.m_m) == ref_mm && mebi3(r.m_p) == ref_mp && mebi3(r.m_total) == ref_mt &&
                      std::string(ops) == std::to_string(row.ops);
      pass += ok;
      std::printf("%4d %2d %10s %10s %10s %6s  %s\n", row.bc, row.l, mebi3(r.m_m).c_str(), mebi3(r.m_p).c_str(),
                  mebi3(r.m_total).c_str(), ops, ok ? "PASS" : "FAIL");
    }
    std::printf("%d/8 PASS\n", pass);
    return pass == 8 ? kOk : kData;
  }
  const tbc::NetConfig cfg{bc, l, h, w};
  try {
    cfg.validate();
  } catch (const tbc::ShapeError& e) {
    throw UsageError(e.what());
  }
  const auto r = tbc::budget(cfg);
  std::printf("BC=%d L=%d H=%d W=%d\n", bc, l, h, w);
  std::printf("%-6s %16s %12s\n", "", "raw", "x2^20");
  const auto line = [](const char* name, std::uint64_t v) {
    std::printf("%-6s %16llu %12s\n", name, static_cast<unsigned long long>(v), mebi3(v).c_str());
  };
  line("OPs", r.ops);
  line("M_m", r.m_m);
  line("M_p", r.m_p);
  line("M_TBC", r.m_total);
  return kOk;
}

struct SynthArgs {
  std::string backgrounds, out, counts = "10,10,10,10", templates;
  bool builtin = false;
  std::optional<std::uint64_t> seed;
  int size = 64;
};

int cmd_synth(const SynthArgs& a, int workers) {
  if (!a.seed) throw UsageError("synth requires an explicit --seed");
  if (a.backgrounds.empty() == !a.builtin) throw UsageError("give exactly one of --backgrounds DIR or --builtin-backgrounds");
  tbc::SynthConfig cfg;
  cfg.width = cfg.height = a.size;
  const auto counts = parse_counts(a.counts);
  cfg.classes = static_cast<int>(counts.size());
  if (cfg.classes < 2) throw UsageError("--counts needs at least two classes");
  tbc::BackgroundSource bg;
  if (!a.backgrounds.empty()) bg.images = tbc::load_image_dir(a.backgrounds);
  const auto templates = a.templates.empty() ? tbc::builtin_templates(cfg) : tbc::load_image_dir(a.templates);
  const auto ds = tbc::make_dataset(bg, counts, *a.seed, cfg, templates, workers);
  const std::size_t requested = ds.tuples.size() + ds.skipped;
  if (ds.skipped) std::fprintf(stderr, "warning: skipped %zu of %zu tuples (targets could not be placed)\n", ds.skipped, requested);
  if (ds.skipped * 10 > requested) throw tbc::DataError("more than 10% of the requested tuples could not be synthesized");
  tbc::write_dataset(a.out, ds);
  const auto hist = ds.histogram(cfg.classes);
  std::printf("wrote %zu tuples to %s (labels:", ds.tuples.size(), a.out.c_str());
  for (int c : hist) std::printf(" %d", c);
  std::printf(")\n");
  return kOk;
}

struct TrainScmArgs {
  std::string data, out;
  double val_fraction = 0.2;
  int classes = tbc::kDefaultScmClasses;
};

int cmd_train_scm(const TrainScmArgs& a, const tbc::TrainConfig& cfg) {
  if (!(a.val_fraction >= 0.0 && a.val_fraction < 1.0)) throw UsageError("--val-fraction must be in [0,1)");
  auto all = tbc::read_dataset(a.data);
  tbc::Dataset train, val;
  const std::size_t n_val = static_cast<std::size_t>(std::floor(a.val_fraction * static_cast<double>(all.tuples.size())));
  for (std::size_t i = 0; i < all.tuples.size(); ++i) {
    (i + n_val >= all.tuples.size() ? val : train).tuples.push_back(std::move(all.tuples[i]));
  }
  auto res = tbc::train_scm(train, val, cfg, a.classes);
  print_log_tail(res.log);
  fs::create_directories(a.out);
  tbc::save_weights(fs::path(a.out) / "scm.tbcw", res.net);
  json side{{"stage", "scm"}, {"config", json::parse(tbc::to_json(cfg))}, {"log", json::parse(tbc::to_json(res.log))}};
  write_text(fs::path(a.out) / "scm.json", side.dump(2) + "\n");
  if (!res.log.epochs.empty() && !std::isnan(res.log.epochs.back().accuracy)) {
    std::printf("held-out accuracy %.4f\n", res.log.epochs.back().accuracy);
  }
  return kOk;
}

struct TrainTemArgs {
  std::string data, out, scm;
  int bc = 4, l = 3;
  bool resume = false, target_only = false;
};

int cmd_train_tem(const TrainTemArgs& a, const tbc::TrainConfig& cfg) {
  if (a.scm.empty() && !a.target_only) {
    throw UsageError("SCM checkpoint required (stage 1: run train-scm first and pass --scm)");
  }
  std::optional<tbc::FrozenScm> frozen;
  if (!a.target_only) frozen.emplace(tbc::load_scm(a.scm));
  const auto data = tbc::read_dataset(a.data);
  const tbc::NetConfig nc{a.bc, a.l, data.tuples.front().f_d.height, data.tuples.front().f_d.width};
  try {
    nc.validate();
  } catch (const tbc::ShapeError& e) {
    throw UsageError(e.what());
  }
  const tbc::CheckpointOptions ck{fs::path(a.out) / "checkpoint", fs::path(a.out) / "nan_dump", a.resume};
  auto res = a.target_only ? tbc::train_tem_target_only(data, nc, cfg, ck) : tbc::train_tem(data, *frozen, nc, cfg, ck);
  print_log_tail(res.log);
  tbc::save_weights(fs::path(a.out) / "tem.tbcw", res.net);
  json side{{"stage", a.target_only ? "tem_target_only" : "tem"},
            {"net", {{"bc", a.bc}, {"l", a.l}}},
            {"config", json::parse(tbc::to_json(cfg))},
            {"log", json::parse(tbc::to_json(res.log))}};
  if (frozen) side["scm_hash"] = frozen->hash();
  write_text(fs::path(a.out) / "tem.json", side.dump(2) + "\n");
  return kOk;
}

struct Frame {
  std::string name;
  tbc::GrayImage image;
  tbc::GroundTruth gt;
};

std::vector<Frame> load_frames(const fs::path& input) {
  std::vector<Frame> frames;
  if (input.extension() == ".jsonl") {
    auto ds = tbc::read_dataset(input);
    for (auto& t : ds.tuples) frames.push_back({frame_name(t), std::move(t.f_d), t.boxes});
  } else if (fs::is_directory(input)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.path().extension() == ".pgm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) frames.push_back({f.stem().string(), tbc::read_pgm(f), {}});
  } else {
    frames.push_back({input.stem().string(), tbc::read_pgm(input), {}});
  }
  if (frames.empty()) throw tbc::DataError("no input frames in " + input.string());
  return frames;
}

int cmd_detect(const std::string& model, const std::string& input, const std::string& out, double k, int workers) {
  if (!(k > 0)) throw UsageError("--k must be positive");
  const auto net = tbc::load_tem(model);
  const auto frames = load_frames(input);
  fs::create_directories(out);
  std::vector<tbc::DetectResult> results(frames.size());
  std::vector<std::exception_ptr> errs(frames.size());
  {
    const std::size_t nw = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(workers), frames.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nw; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < frames.size(); i += nw) {
          try {
            results[i] = tbc::detect(net, frames[i].image, k);
          } catch (...) {
            errs[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
  std::ofstream jl(fs::path(out) / "detections.jsonl");
  std::size_t total = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& r = results[i];
    const auto base = fs::path(out) / frames[i].name;
    tbc::save_tensor(base.string() + "_score.tbct", tbc::to_tensor(r.target));
    tbc::write_pgm(base.string() + "_target.pgm", r.normalized, 8);
    tbc::GrayImage mask(r.mask.width, r.mask.height);
    for (std::size_t p = 0; p < mask.size(); ++p) mask.px[p] = r.mask.bits[p] ? 1.0f : 0.0f;
    tbc::write_pgm(base.string() + "_mask.pgm", mask, 8);
    for (const auto& d : r.detections) {
      json j{{"frame", frames[i].name},
             {"centroid", {d.cx, d.cy}},
             {"pixel_count", d.pixel_count},
             {"peak", d.peak_value},
             {"bbox", {d.bbox.x0, d.bbox.y0, d.bbox.h0, d.bbox.w0}}};
      jl << j.dump() << '\n';
      ++total;
    }
  }
  std::printf("%zu frames, %zu detections -> %s\n", frames.size(), total, out.c_str());
  return kOk;
}

struct EvalArgs {
  std::string data, detections, out, baseline, plot, sweep = "fixed";
  double radius = tbc::kMatchRadius;
  double lambda = tbc::kStabilizer;
};

int cmd_eval(const EvalArgs& a) {
  if (a.detections.empty() == a.baseline.empty()) throw UsageError("give exactly one of --detections DIR or --baseline NAME");
  auto ds = tbc::read_dataset(a.data);
  std::vector<tbc::GrayImage> scores;
  std::vector<tbc::GroundTruth> gts;
  for (const auto& t : ds.tuples) {
    if (!a.baseline.empty()) {
      if (a.baseline == "tophat") scores.push_back(tbc::tophat(t.f_d));
      else if (a.baseline == "maxmean") scores.push_back(tbc::max_mean(t.f_d));
      else scores.push_back(tbc::max_median(t.f_d));
    } else {
      const auto p = fs::path(a.detections) / (frame_name(t) + "_score.tbct");
      if (!fs::exists(p)) throw tbc::DataError("missing score image " + p.string() + " (run detect on the same manifest)");
      scores.push_back(tbc::to_image(tbc::load_tensor(p)));
    }
    gts.push_back(t.boxes);
  }
  std::vector<double> th;
  tbc::RocCurve curve;
  if (a.sweep == "k") {
    for (double k = 1; k <= 40; k += 1) th.push_back(k);
    curve = tbc::roc_adaptive(scores, gts, th, a.radius);
  } else {
    th.push_back(-0.01);
    for (int i = 1; i <= 99; ++i) th.push_back(i / 100.0);
    th.push_back(1.0);
    curve = tbc::roc(scores, gts, th, a.radius);
  }
  fs::create_directories(a.out);
  {
    std::ofstream csv(fs::path(a.out) / "roc.csv");
    tbc::write_roc_csv(csv, curve);
  }
  std::ofstream m(fs::path(a.out) / "metrics.csv");
  m << "frame,target,scr_in,scr_out,scrg,bsf\n";
  std::size_t rows = 0;
  for (std::size_t f = 0; f < ds.tuples.size(); ++f) {
    const tbc::GrayImage out_img = tbc::normalize(scores[f]);
    for (std::size_t b = 0; b < gts[f].size(); ++b) {
      try {
        const double si = tbc::scr(ds.tuples[f].f_d, gts[f][b], a.lambda);
        const double so = tbc::scr(out_img, gts[f][b], a.lambda);
        m << frame_name(ds.tuples[f]) << ',' << b << ',' << tbc::format_g6(si) << ',' << tbc::format_g6(so) << ','
          << tbc::format_g6(tbc::scrg(ds.tuples[f].f_d, out_img, gts[f][b], a.lambda)) << ','
          << tbc::format_g6(tbc::bsf(ds.tuples[f].f_d, out_img, gts[f][b], a.lambda)) << '\n';
        ++rows;
      } catch (const tbc::ShapeError&) {
        // The ring leaves the frame; the target is skipped for contrast metrics.
      }
    }
  }
  if (!a.plot.empty()) tbc::write_pgm(a.plot, tbc::render_roc(curve), 8);
  std::printf("%zu frames, %lld targets; roc.csv (%zu points), metrics.csv (%zu rows)\n", ds.tuples.size(),
              curve.total_targets, curve.points.size(), rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TBC-Net infrared small-target toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may also follow the subcommand
  std::string config;
  int workers = 0;
  app.add_option("--config", config, "JSON training config; flags override its values")->check(CLI::ExistingFile);
  app.add_option("--workers", workers, "worker threads (default: TBC_WORKERS or all cores)")->check(CLI::PositiveNumber);

  int bc = 16, l = 5, h = 256, w = 256;
  bool table2 = false;
  auto* budget = app.add_subcommand("budget", "storage and compute budget of a TEM configuration");
  budget->add_option("--bc", bc, "base channels")->check(CLI::PositiveNumber);
  budget->add_option("--l", l, "maximum scale level")->check(CLI::PositiveNumber);
  budget->add_option("--height", h, "input height");
  budget->add_option("--width", w, "input width");
  budget->add_flag("--table2", table2, "check all eight reference configurations at 256x256");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "synthesize a training set");
  synth->add_option("--backgrounds", sa.backgrounds, "directory of background PGMs");
  synth->add_flag("--builtin-backgrounds", sa.builtin, "use the procedural background generator");
  synth->add_option("--templates", sa.templates, "directory of target template PGMs (default: Gaussian blobs)");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--counts", sa.counts, "tuples per class, comma separated");
  synth->add_option("--seed", sa.seed, "RNG seed (required)");
  synth->add_option("--size", sa.size, "tile extent in pixels")->check(CLI::PositiveNumber);

  TrainScmArgs ts;
  TrainFlags fs_scm;
  auto* train_scm = app.add_subcommand("train-scm", "stage 1: train the semantic constraint module");
  train_scm->add_option("--data", ts.data, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  train_scm->add_option("--out", ts.out, "output directory")->required();
  train_scm->add_option("--val-fraction", ts.val_fraction, "trailing fraction held out for accuracy");
  train_scm->add_option("--classes", ts.classes, "class count")->check(CLI::Range(2, 64));
  add_train_flags(train_scm, fs_scm);

  TrainTemArgs tt;
  TrainFlags fs_tem;
  auto* train_tem = app.add_subcommand("train-tem", "stage 2: train the target extraction module");
  train_tem->add_option("--data", tt.data, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  train_tem->add_option("--scm", tt.scm, "frozen SCM weights from train-scm");
  train_tem->add_option("--out", tt.out, "output directory")->required();
  train_tem->add_option("--bc", tt.bc, "base channels")->check(CLI::PositiveNumber);
  train_tem->add_option("--l", tt.l, "maximum scale level")->check(CLI::PositiveNumber);
  train_tem->add_flag("--resume", tt.resume, "continue from <out>/checkpoint");
  train_tem->add_flag("--target-only", tt.target_only, "ablation: train with the target term only");
  add_train_flags(train_tem, fs_tem);

  std::string model, input, dout;
  double k = tbc::kDefaultK;
  auto* det = app.add_subcommand("detect", "run extraction and adaptive-threshold detection");
  det->add_option("--model", model, "TEM weights")->required()->check(CLI::ExistingFile);
  det->add_option("--input", input, "PGM file, directory of PGMs, or manifest.jsonl")->required()->check(CLI::ExistingPath);
  det->add_option("--out", dout, "output directory")->required();
  det->add_option("--k", k, "threshold factor");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "ROC and contrast metrics against ground truth");
  ev->add_option("--data", ea.data, "manifest.jsonl with ground-truth boxes")->required()->check(CLI::ExistingFile);
  ev->add_option("--detections", ea.detections, "detect output directory")->check(CLI::ExistingDirectory);
  ev->add_option("--baseline", ea.baseline, "score with a baseline filter instead")
      ->check(CLI::IsMember({"tophat", "maxmean", "maxmedian"}));
  ev->add_option("--out", ea.out, "output directory")->required();
  ev->add_option("--sweep", ea.sweep, "fixed thresholds or adaptive k")->check(CLI::IsMember({"fixed", "k"}));
  ev->add_option("--radius", ea.radius, "match radius in pixels")->check(CLI::NonNegativeNumber);
  ev->add_option("--lambda", ea.lambda, "contrast-metric stabilizer (0 = strict)")->check(CLI::NonNegativeNumber);
  ev->add_option("--plot", ea.plot, "write the ROC as a PGM plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (workers <= 0) workers = tbc::default_workers();

  try {
    if (*budget) return cmd_budget(bc, l, h, w, table2);
    if (*synth) return cmd_synth(sa, workers);
    if (*train_scm) return cmd_train_scm(ts, resolve_train(config, fs_scm, workers, tbc::scm_defaults()));
    if (*train_tem) return cmd_train_tem(tt, resolve_train(config, fs_tem, workers));
    if (*det) return cmd_detect(model, input, dout, k, workers);
    if (*ev) return cmd_eval(ea);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const tbc::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
