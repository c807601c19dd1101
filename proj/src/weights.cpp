#include "tbc/weights.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace tbc {

namespace {

constexpr char kMagic[4] = {'T', 'B', 'C', 'W'};
constexpr std::uint32_t kVersion = 1;

void write_header(std::ostream& out, WeightKind kind) {
  out.write(kMagic, 4);
  detail::put_u32(out, kVersion);
  out.put(static_cast<char>(kind));
}

void write_values(std::ostream& out, const Tensor& t) {
  for (real v : t.data()) detail::put_f32(out, static_cast<float>(v));
}

std::string with_trailer(const std::string& body) {
  const auto* p = reinterpret_cast<const unsigned char*>(body.data());
  std::ostringstream os;
  os << body;
  detail::put_u64(os, fnv1a64({p, body.size()}));
  return os.str();
}

std::string tem_bytes(const TemNet& net) {
  std::ostringstream os;
  write_header(os, WeightKind::tem);
  detail::put_u32(os, static_cast<std::uint32_t>(net.bc));
  detail::put_u32(os, static_cast<std::uint32_t>(net.l));
  for (const auto* c : net.layers()) write_values(os, c->weights);
  return with_trailer(os.str());
}

std::string scm_bytes(const ScmNet& net) {
  std::ostringstream os;
  write_header(os, WeightKind::scm);
  detail::put_u32(os, static_cast<std::uint32_t>(net.classes()));
  for (const auto* t : net.parameters()) write_values(os, *t);
  return with_trailer(os.str());
}

void read_values(std::istream& in, Tensor& t) {
  for (auto& v : t.data()) v = static_cast<real>(detail::get_f32(in));
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_tem(std::ostream& out, const TemNet& net) { out << tem_bytes(net); }
void write_scm(std::ostream& out, const ScmNet& net) { out << scm_bytes(net); }

void save_weights(const std::filesystem::path& path, const TemNet& net) { write_file(path, tem_bytes(net)); }
void save_weights(const std::filesystem::path& path, const ScmNet& net) { write_file(path, scm_bytes(net)); }

AnyNet read_weights(std::istream& in) {
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 + 1 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("not a TBCW weight stream");
  }
  const std::size_t body = bytes.size() - 8;
  std::istringstream trailer(bytes.substr(body));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (detail::get_u64(trailer) != fnv1a64({p, body})) throw DataError("TBCW checksum mismatch");

  std::istringstream is(bytes.substr(0, body));
  is.ignore(4);
  const auto version = detail::get_u32(is);
  if (version != kVersion) throw DataError("unsupported TBCW version " + std::to_string(version));
  const int kind = is.get();
  Rng scratch(0);
  if (kind == static_cast<int>(WeightKind::tem)) {
    NetConfig cfg;
    cfg.bc = static_cast<int>(detail::get_u32(is));
    cfg.l = static_cast<int>(detail::get_u32(is));
    if (cfg.bc < 1 || cfg.bc > 4096 || cfg.l < 1 || cfg.l > 12) throw DataError("implausible TEM header");
    TemNet net = build_tem(cfg, scratch);
    if (body != 17 + 4 * net.parameter_count()) throw DataError("TEM weight payload has the wrong length");
    for (auto* c : net.layers()) read_values(is, c->weights);
    return net;
  }
  if (kind == static_cast<int>(WeightKind::scm)) {
    const auto classes = detail::get_u32(is);
    if (classes < 2 || classes > 1024) throw DataError("implausible SCM class count");
    // Everything except the classifier weights is fixed; solve for its width.
    std::size_t fixed = 0, c_in = 1;
    for (auto c : kScmChannels) {
      fixed += c * c_in * 9 + c;
      c_in = c;
    }
    fixed += classes;
    const std::size_t payload = (body - 13) / 4;
    if ((body - 13) % 4 || payload <= fixed || (payload - fixed) % classes) {
      throw DataError("SCM weight payload has the wrong length");
    }
    const std::size_t fc_in = (payload - fixed) / classes;
    ScmNet net = build_scm(static_cast<int>(classes), 16, 16, scratch);
    net.fc = nn::DenseLayer{Tensor({classes, fc_in}), Tensor({classes})};
    for (auto* t : net.parameters()) read_values(is, *t);
    return net;
  }
  throw DataError("unknown TBCW kind " + std::to_string(kind));
}

AnyNet load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_weights(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

TemNet load_tem(const std::filesystem::path& path) {
  auto any = load_weights(path);
  if (auto* t = std::get_if<TemNet>(&any)) return std::move(*t);
  throw DataError(path.string() + " holds SCM weights, expected TEM");
}

ScmNet load_scm(const std::filesystem::path& path) {
  auto any = load_weights(path);
  if (auto* s = std::get_if<ScmNet>(&any)) return std::move(*s);
  throw DataError(path.string() + " holds TEM weights, expected SCM");
}

std::uint64_t weights_hash(const TemNet& net) {
  const auto b = tem_bytes(net);
  return fnv1a64({reinterpret_cast<const unsigned char*>(b.data()), b.size()});
}

std::uint64_t weights_hash(const ScmNet& net) {
  const auto b = scm_bytes(net);
  return fnv1a64({reinterpret_cast<const unsigned char*>(b.data()), b.size()});
}

}  // namespace tbc
