#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "korr/checkpoint.hpp"

using namespace korr;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("roundtrip of all section types") {
  Checkpoint ck;
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6.5;
  ck.put("m", m);
  ck.put("pi", 3.14159);
  ck.put("name", std::string("hello"));
  const std::string path = temp_path("korr_test_ck1.bin");
  ck.save(path);
  const Checkpoint loaded = Checkpoint::load(path);
  CHECK(loaded.matrix("m") == m);
  CHECK(loaded.scalar("pi") == 3.14159);
  CHECK(loaded.str("name") == "hello");
  CHECK_THROWS_AS(loaded.matrix("missing"), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("mlp and normalizer helpers roundtrip bit-exactly") {
  Rng rng(1);
  Mlp mlp = make_mlp({11, 32, 6}, rng);
  Normalizer norm;
  norm.mean = Vector::Random(11);
  norm.inv_std = Vector::Random(11).cwiseAbs() + Vector::Ones(11);
  Checkpoint ck;
  ck.put_mlp("net", mlp);
  ck.put_normalizer("stats", norm);
  const std::string path = temp_path("korr_test_ck2.bin");
  ck.save(path);
  const Checkpoint loaded = Checkpoint::load(path);
  const Mlp mlp2 = loaded.get_mlp("net");
  REQUIRE(mlp2.layer_sizes == mlp.layer_sizes);
  for (int i = 0; i < mlp.num_layers(); ++i) {
    CHECK(mlp2.weights[i] == mlp.weights[i]);
    CHECK(mlp2.biases[i] == mlp.biases[i]);
  }
  const Normalizer norm2 = loaded.get_normalizer("stats");
  CHECK(norm2.mean == norm.mean);
  CHECK(norm2.inv_std == norm.inv_std);
  std::remove(path.c_str());
}

TEST_CASE("bad magic rejected") {
  const std::string path = temp_path("korr_test_ck3.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTAKORR checkpoint";
  }
  CHECK_THROWS_AS(Checkpoint::load(path), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("missing file rejected") {
  CHECK_THROWS_AS(Checkpoint::load(temp_path("korr_does_not_exist.bin")),
                  ConfigError);
}

}  // TEST_SUITE
