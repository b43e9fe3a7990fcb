#include <doctest.h>

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ae/module.hpp"
#include "ae/rng.hpp"
#include "ae/tensor.hpp"

using namespace ae;

namespace {

std::string temp_path(const char* stem) {
  return std::string("/tmp/ae_test_") + stem + "_" + std::to_string(::getpid()) + ".aew1";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

struct RemoveOnExit {
  std::string path;
  ~RemoveOnExit() { std::remove(path.c_str()); }
};

ModuleGraph small_graph(Rng& rng) {
  ModuleGraph g;
  g.add_param("layer.weight", Tensor::rand_uniform({3, 4}, rng, -1.0, 1.0));
  g.add_param("layer.bias", Tensor::rand_uniform({4}, rng, -1.0, 1.0));
  g.add_buffer("layer.running_mean", Tensor::rand_uniform({4}, rng, -1.0, 1.0));
  return g;
}

}  // namespace

TEST_CASE("weight round-trip restores every byte of every tensor") {
  Rng rng(41);
  ModuleGraph g = small_graph(rng);
  const std::string path = temp_path("roundtrip");
  RemoveOnExit cleanup{path};
  save_weights(g, path);

  Rng rng2(999);  // different init, must be fully overwritten
  ModuleGraph g2 = small_graph(rng2);
  load_weights(g2, path);

  for (size_t i = 0; i < g.params().size(); ++i) {
    CHECK(g2.params()[i].tensor.to_vector() == g.params()[i].tensor.to_vector());
  }
  CHECK(g2.buffers()[0].tensor.to_vector() == g.buffers()[0].tensor.to_vector());

  SUBCASE("a second save produces identical bytes") {
    const std::string path2 = temp_path("roundtrip2");
    RemoveOnExit cleanup2{path2};
    save_weights(g2, path2);
    CHECK(slurp(path) == slurp(path2));
  }
}

TEST_CASE("file header matches the documented layout") {
  ModuleGraph g;
  g.add_param("w", Tensor({2}, {1.5, -2.5}));
  const std::string path = temp_path("golden");
  RemoveOnExit cleanup{path};
  save_weights(g, path);

  const std::string bytes = slurp(path);
  // magic, u64 count, u64 name len, "w", u64 rank, u64 extent, 2 doubles
  REQUIRE(bytes.size() == 4 + 8 + 8 + 1 + 8 + 8 + 16);
  CHECK(bytes.compare(0, 4, "AEW1") == 0);

  auto u64_at = [&](size_t off) {
    uint64_t v;
    std::memcpy(&v, bytes.data() + off, 8);
    return v;
  };
  CHECK(u64_at(4) == 1);    // entry count
  CHECK(u64_at(12) == 1);   // name length
  CHECK(bytes[20] == 'w');
  CHECK(u64_at(21) == 1);   // rank
  CHECK(u64_at(29) == 2);   // extent

  double d0, d1;
  std::memcpy(&d0, bytes.data() + 37, 8);
  std::memcpy(&d1, bytes.data() + 45, 8);
  CHECK(d0 == 1.5);
  CHECK(d1 == -2.5);
}

TEST_CASE("strict load rejects mismatches") {
  Rng rng(42);
  ModuleGraph g = small_graph(rng);
  const std::string path = temp_path("strict");
  RemoveOnExit cleanup{path};
  save_weights(g, path);

  SUBCASE("missing registered tensor") {
    ModuleGraph bigger = small_graph(rng);
    bigger.add_param("extra.weight", Tensor::zeros({2}));
    CHECK_THROWS_AS(load_weights(bigger, path), IoError);
  }

  SUBCASE("unknown file entry") {
    ModuleGraph smaller;
    smaller.add_param("layer.weight", Tensor::zeros({3, 4}));
    CHECK_THROWS_AS(load_weights(smaller, path), IoError);
  }

  SUBCASE("shape mismatch names the offender") {
    ModuleGraph wrong;
    wrong.add_param("layer.weight", Tensor::zeros({4, 3}));
    wrong.add_param("layer.bias", Tensor::zeros({4}));
    wrong.add_buffer("layer.running_mean", Tensor::zeros({4}));
    try {
      load_weights(wrong, path);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
    }
  }

  SUBCASE("bad magic") {
    std::string bytes = slurp(path);
    bytes[0] = 'X';
    const std::string bad = temp_path("badmagic");
    RemoveOnExit cleanup2{bad};
    std::ofstream(bad, std::ios::binary) << bytes;
    ModuleGraph g2 = small_graph(rng);
    CHECK_THROWS_AS(load_weights(g2, bad), IoError);
  }

  SUBCASE("truncated file") {
    std::string bytes = slurp(path);
    bytes.resize(bytes.size() / 2);
    const std::string cut = temp_path("truncated");
    RemoveOnExit cleanup2{cut};
    std::ofstream(cut, std::ios::binary) << bytes;
    ModuleGraph g2 = small_graph(rng);
    CHECK_THROWS_AS(load_weights(g2, cut), IoError);
  }
}

TEST_CASE("partial load copies matches and reports strangers") {
  Rng rng(43);
  ModuleGraph donor;
  donor.add_param("shared.weight", Tensor::rand_uniform({2, 2}, rng, -1.0, 1.0));
  donor.add_param("donor_only.bias", Tensor::rand_uniform({3}, rng, -1.0, 1.0));
  const std::string path = temp_path("partial");
  RemoveOnExit cleanup{path};
  save_weights(donor, path);

  ModuleGraph target;
  target.add_param("shared.weight", Tensor::zeros({2, 2}));
  target.add_param("target_only.weight", Tensor::full({2}, 7.0));

  const std::vector<std::string> unmatched = load_weights_partial(target, path);
  CHECK(target.params()[0].tensor.to_vector() == donor.params()[0].tensor.to_vector());
  CHECK(target.params()[1].tensor.to_vector() == std::vector<double>{7.0, 7.0});
  REQUIRE(unmatched.size() == 1);
  CHECK(unmatched[0] == "donor_only.bias");
}

TEST_CASE("registration rejects duplicates and anonymous tensors") {
  ModuleGraph g;
  g.add_param("a", Tensor::zeros({1}));
  CHECK_THROWS_AS(g.add_param("a", Tensor::zeros({1})), ValueError);
  CHECK_THROWS_AS(g.add_buffer("a", Tensor::zeros({1})), ValueError);
  CHECK_THROWS_AS(g.add_param("", Tensor::zeros({1})), ValueError);
  CHECK_THROWS_AS(g.add_param("b", Tensor()), ValueError);
}

TEST_CASE("count_params honors prefixes and skips buffers") {
  Rng rng(44);
  ModuleGraph g = small_graph(rng);
  CHECK(g.count_params() == 12 + 4);
  CHECK(g.count_params("layer.weight") == 12);
  CHECK(g.count_params("nothing") == 0);
}
