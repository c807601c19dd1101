#include "tbc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <thread>

namespace tbc {

FuseResult fuse_with_alpha(const GrayImage& f_b, const GrayImage& t, const Box& loc, double alpha) {
  if (t.empty()) throw ShapeError("empty target template");
  if (!loc.inside(f_b.width, f_b.height)) {
    throw ShapeError("fusion box (" + std::to_string(loc.x0) + "," + std::to_string(loc.y0) + "," +
                     std::to_string(loc.h0) + "," + std::to_string(loc.w0) + ") outside the background");
  }
  const GrayImage r = resize_bilinear(t, loc.w0, loc.h0);
  FuseResult out{f_b, 0, false};
  for (int y = 0; y < loc.h0; ++y) {
    for (int x = 0; x < loc.w0; ++x) {
      const float v = static_cast<float>(alpha * r(x, y));
      float& dst = out.fused(loc.x0 + x, loc.y0 + y);
      if (v > dst) {
        dst = v;
        ++out.fused_pixels;
      }
    }
  }
  out.success = out.fused_pixels > 1;
  return out;
}

FuseResult fuse_one(const GrayImage& f_b, const GrayImage& t, const Box& loc, Rng& rng) {
  return fuse_with_alpha(f_b, t, loc, rng.uniform(0.75, 1.0));
}

GrayImage gaussian_template(double sigma, double amplitude, int extent) {
  if (!(sigma > 0.0)) throw std::invalid_argument("template sigma must be positive");
  if (extent < 1 || extent % 2 == 0) throw std::invalid_argument("template extent must be odd");
  GrayImage g(extent, extent);
  const int c = extent / 2;
  for (int y = 0; y < extent; ++y) {
    for (int x = 0; x < extent; ++x) {
      const double r2 = static_cast<double>((x - c) * (x - c) + (y - c) * (y - c));
      g(x, y) = static_cast<float>(std::clamp(amplitude * std::exp(-r2 / (2.0 * sigma * sigma)), 0.0, 1.0));
    }
  }
  return g;
}

namespace {

// Catmull-Rom weights for fractional offset f.
void cubic_weights(double f, double w[4]) {
  const double f2 = f * f, f3 = f2 * f;
  w[0] = 0.5 * (-f3 + 2 * f2 - f);
  w[1] = 0.5 * (3 * f3 - 5 * f2 + 2);
  w[2] = 0.5 * (-3 * f3 + 4 * f2 + f);
  w[3] = 0.5 * (f3 - f2);
}

}  // namespace

GrayImage make_background(int width, int height, Rng& rng, const BackgroundParams& p) {
  if (p.lattice < 1) throw std::invalid_argument("background lattice must be positive");
  const int gw = width / p.lattice + 4, gh = height / p.lattice + 4;
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (auto& v : lattice) v = rng.uniform();
  const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
  const double lo = rng.uniform(p.lo_min, p.lo_max);
  const double span = rng.uniform(p.span_min, p.span_max);

  std::vector<double> v(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    const double fy = static_cast<double>(y) / p.lattice + 1.0;
    const int iy = static_cast<int>(fy);
    double wy[4];
    cubic_weights(fy - iy, wy);
    for (int x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) / p.lattice + 1.0;
      const int ix = static_cast<int>(fx);
      double wx[4];
      cubic_weights(fx - ix, wx);
      double s = 0.0;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) s += wy[a] * wx[b] * lattice[static_cast<std::size_t>(iy - 1 + a) * gw + ix - 1 + b];
      }
      s += p.ramp * (gx * (x - 0.5 * (width - 1)) / width + gy * (y - 0.5 * (height - 1)) / height);
      v[static_cast<std::size_t>(y) * width + x] = s;
    }
  }
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double range = *mx - *mn;
  GrayImage img(width, height);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double u = range > 0 ? (v[i] - *mn) / range : 0.0;
    img.px[i] = static_cast<float>(std::clamp(lo + span * u, 0.0, 1.0));
  }
  return img;
}

std::vector<GrayImage> builtin_templates(const SynthConfig& cfg) {
  std::vector<GrayImage> out;
  for (double s : cfg.template_sigmas) {
    for (double a : cfg.template_amplitudes) out.push_back(gaussian_template(s, a, cfg.template_extent));
  }
  if (out.empty()) throw std::invalid_argument("template set is empty");
  return out;
}

std::vector<GrayImage> load_image_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<GrayImage> out;
  for (const auto& f : files) out.push_back(read_pgm(f));
  if (out.empty()) throw DataError("no .pgm images in " + dir.string());
  return out;
}

int count_components(const GrayImage& img) {
  std::vector<std::uint8_t> seen(img.size(), 0);
  std::vector<int> stack;
  int n = 0;
  for (int i = 0; i < static_cast<int>(img.size()); ++i) {
    if (seen[i] || !(img.px[i] > 0.0f)) continue;
    ++n;
    seen[i] = 1;
    stack.assign(1, i);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int px = p % img.width, py = p / img.width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = px + dx, ny = py + dy;
          if (nx < 0 || ny < 0 || nx >= img.width || ny >= img.height) continue;
          const int q = ny * img.width + nx;
          if (!seen[q] && img.px[q] > 0.0f) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
  }
  return n;
}

namespace {

GrayImage difference(const GrayImage& a, const GrayImage& b) {
  GrayImage d(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) d.px[i] = a.px[i] - b.px[i];
  return d;
}

}  // namespace

TrainingTuple make_tuple(const GrayImage& f_b, int n_t, const std::vector<GrayImage>& templates, Rng& rng,
                         const SynthConfig& cfg) {
  if (n_t < 1 || n_t > cfg.classes - 1) {
    throw std::invalid_argument("target count " + std::to_string(n_t) + " outside [1," +
                                std::to_string(cfg.classes - 1) + "]");
  }
  if (templates.empty()) throw std::invalid_argument("template set is empty");
  TrainingTuple tup;
  GrayImage f_d = f_b;
  for (int k = 0; k < n_t; ++k) {
    Box box;
    bool placed = false;
    for (int a = 0; a < cfg.place_attempts && !placed; ++a) {
      box.h0 = static_cast<int>(rng.uniform_int(cfg.min_extent, cfg.max_extent));
      box.w0 = static_cast<int>(rng.uniform_int(cfg.min_extent, cfg.max_extent));
      if (box.w0 > f_b.width || box.h0 > f_b.height) continue;
      box.x0 = static_cast<int>(rng.uniform_int(0, f_b.width - box.w0));
      box.y0 = static_cast<int>(rng.uniform_int(0, f_b.height - box.h0));
      placed = std::none_of(tup.boxes.begin(), tup.boxes.end(), [&](const Box& o) { return box.near(o, cfg.margin); });
    }
    if (!placed) throw DataError("cannot place " + std::to_string(n_t) + " disjoint targets on the background");
    const auto& t = templates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(templates.size()) - 1))];
    auto fr = fuse_with_alpha(f_d, t, box, rng.uniform(cfg.alpha_lo, cfg.alpha_hi));
    if (!fr.success) continue;
    // A fusion that splits into several blobs would be counted more than once.
    const GrayImage blob = crop(difference(fr.fused, f_d), box.x0, box.y0, box.w0, box.h0);
    if (count_components(blob) != 1) continue;
    f_d = std::move(fr.fused);
    tup.boxes.push_back(box);
  }
  tup.y_t = static_cast<int>(tup.boxes.size());
  tup.f_t = difference(f_d, f_b);
  tup.f_d = std::move(f_d);
  return tup;
}

TrainingTuple make_negative(const GrayImage& f_b) {
  TrainingTuple tup;
  tup.f_d = f_b;
  tup.f_t = GrayImage(f_b.width, f_b.height, 0.0f);
  tup.y_t = 0;
  return tup;
}

GrayImage BackgroundSource::draw(int width, int height, Rng& rng, const BackgroundParams& p) const {
  if (images.empty()) return make_background(width, height, rng, p);
  const auto& img = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(images.size()) - 1))];
  if (img.width < width || img.height < height) {
    throw DataError("background " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " is smaller than the " + std::to_string(width) + "x" + std::to_string(height) + " tile");
  }
  const int x0 = static_cast<int>(rng.uniform_int(0, img.width - width));
  const int y0 = static_cast<int>(rng.uniform_int(0, img.height - height));
  return crop(img, x0, y0, width, height);
}

std::vector<int> Dataset::histogram(int classes) const {
  std::vector<int> h(static_cast<std::size_t>(classes), 0);
  for (const auto& t : tuples) {
    if (t.y_t >= 0 && t.y_t < classes) ++h[static_cast<std::size_t>(t.y_t)];
  }
  return h;
}

Dataset make_dataset(const BackgroundSource& backgrounds, const std::vector<int>& counts, std::uint64_t seed,
                     const SynthConfig& cfg, const std::vector<GrayImage>& templates, int workers) {
  if (static_cast<int>(counts.size()) != cfg.classes) {
    throw std::invalid_argument("expected " + std::to_string(cfg.classes) + " class counts, got " +
                                std::to_string(counts.size()));
  }
  for (const auto& img : backgrounds.images) {
    if (img.width < cfg.width || img.height < cfg.height) throw DataError("insufficient background extents");
  }
  std::vector<int> labels;
  for (int c = 0; c < cfg.classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < 0) throw std::invalid_argument("negative class count");
    labels.insert(labels.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(c)]), c);
  }
  // The label order uses a stream no tuple index can reach.
  Rng order = Rng::derive(seed, ~0ULL - 1);
  order.shuffle(std::span<int>(labels));

  std::vector<TrainingTuple> slots(labels.size());
  std::vector<std::uint8_t> ok(labels.size(), 0);
  auto make = [&](std::size_t i) {
    Rng rng = Rng::derive(seed, i);
    const int want = labels[i];
    for (int attempt = 0; attempt < cfg.tuple_attempts; ++attempt) {
      GrayImage f_b = backgrounds.draw(cfg.width, cfg.height, rng, cfg.background);
      TrainingTuple t;
      if (want == 0) {
        t = make_negative(f_b);
      } else {
        try {
          t = tbc::make_tuple(f_b, want, templates, rng, cfg);
        } catch (const DataError&) {
          continue;
        }
      }
      if (t.y_t != want) continue;
      t.seed_index = i;
      slots[i] = std::move(t);
      ok[i] = 1;
      return;
    }
  };

  const std::size_t n = labels.size();
  const std::size_t nw = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += nw) make(i);
    });
  }
  for (auto& th : pool) th.join();

  Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      ds.tuples.push_back(std::move(slots[i]));
    } else {
      ++ds.skipped;
    }
  }
  return ds;
}

// --- on-disk datasets -------------------------------------------------------

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.jsonl").string());
  char name[64];
  for (const auto& t : ds.tuples) {
    std::snprintf(name, sizeof name, "%06llu", static_cast<unsigned long long>(t.seed_index));
    const std::string d = std::string("images/") + name + "_d.pgm";
    const std::string g = std::string("images/") + name + "_t.pgm";
    write_pgm(dir / d, t.f_d, 16);
    write_pgm(dir / g, t.f_t, 16);
    nlohmann::json j;
    j["f_D"] = d;
    j["f_T"] = g;
    j["y_T"] = t.y_t;
    j["boxes"] = nlohmann::json::array();
    for (const auto& b : t.boxes) j["boxes"].push_back({b.x0, b.y0, b.h0, b.w0});
    j["seed_index"] = t.seed_index;
    manifest << j.dump() << '\n';
  }
  if (!manifest) throw DataError("failed writing the manifest");
}

Dataset read_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainingTuple t;
      t.f_d = read_pgm(base / j.at("f_D").get<std::string>());
      t.f_t = read_pgm(base / j.at("f_T").get<std::string>());
      t.y_t = j.at("y_T").get<int>();
      for (const auto& b : j.at("boxes")) t.boxes.push_back(Box{b.at(0), b.at(1), b.at(2), b.at(3)});
      t.seed_index = j.value("seed_index", static_cast<std::uint64_t>(lineno - 1));
      if (!t.f_d.same_extents(t.f_t)) throw DataError("f_D and f_T extents differ");
      for (const auto& b : t.boxes) {
        if (!b.inside(t.f_d.width, t.f_d.height)) throw DataError("box outside the image");
      }
      ds.tuples.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (ds.tuples.empty()) throw DataError("manifest " + manifest.string() + " lists no tuples");
  return ds;
}

}  // namespace tbc
