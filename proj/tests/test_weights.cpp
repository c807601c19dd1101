#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "tbc/weights.hpp"

using namespace tbc;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const char* name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
  const unsigned char a[] = {'a'};
  CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cULL);
  const unsigned char foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  CHECK(fnv1a64(foobar) == 0x85944171f73967e8ULL);
}

TEST_CASE("TEM weights round trip byte-exactly") {
  Rng rng(1);
  const auto net = build_tem({3, 2, 16, 16}, rng);
  std::stringstream s1;
  write_tem(s1, net);
  const std::string bytes = s1.str();
  CHECK(bytes.substr(0, 4) == "TBCW");
  CHECK(bytes.size() == 17 + 4 * net.parameter_count() + 8);

  std::stringstream in(bytes);
  const auto back = std::get<TemNet>(read_weights(in));
  std::stringstream s2;
  write_tem(s2, back);
  CHECK(s2.str() == bytes);
  CHECK(weights_hash(back) == weights_hash(net));

  const auto p = tmp("tbc_test.tbcw");
  save_weights(p, net);
  CHECK(weights_hash(load_tem(p)) == weights_hash(net));
  CHECK_THROWS_AS(load_scm(p), DataError);
  fs::remove(p);
}

TEST_CASE("SCM weights round trip") {
  Rng rng(2);
  const auto net = build_scm(4, 64, 64, rng);
  const auto p = tmp("tbc_test_scm.tbcw");
  save_weights(p, net);
  const auto back = load_scm(p);
  CHECK(back.fc.in_features() == 16);
  CHECK(weights_hash(back) == weights_hash(net));
  CHECK_THROWS_AS(load_tem(p), DataError);
  fs::remove(p);
}

TEST_CASE("corruption is detected") {
  Rng rng(3);
  const auto net = build_tem({2, 1, 4, 4}, rng);
  std::stringstream s;
  write_tem(s, net);
  std::string bytes = s.str();
  bytes[40] ^= 0x10;
  std::stringstream flipped(bytes);
  CHECK_THROWS_WITH_AS(read_weights(flipped), doctest::Contains("checksum"), DataError);
  std::stringstream cut(s.str().substr(0, 30));
  CHECK_THROWS_AS(read_weights(cut), DataError);
  std::stringstream junk("NOPE and more bytes to fill the header");
  CHECK_THROWS_AS(read_weights(junk), DataError);
  CHECK_THROWS_AS(load_tem("/nonexistent.tbcw"), DataError);
}
