#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "poex/checkpoint.hpp"
#include "poex/rng.hpp"

using namespace poex;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Checkpoint sample_ck(std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint ck;
  ck.manifest_json = "{\"version\":1,\"note\":\"test\"}";
  ck.arrays["b.second"] = Eigen::MatrixXd::NullaryExpr(
      3, 4, [&](int) { return rand_normal(rng); });
  ck.arrays["a.first"] = Eigen::MatrixXd::NullaryExpr(
      2, 2, [&](int) { return rand_normal(rng); });
  ck.arrays["c/third"] = Eigen::MatrixXd::NullaryExpr(
      1, 7, [&](int) { return rand_normal(rng); });
  return ck;
}

}  // namespace

TEST_CASE("checkpoint: round trip preserves names and f32-rounded values") {
  std::string path = tmp_path("poex_ck_roundtrip.zip");
  Checkpoint ck = sample_ck(1);
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);

  CHECK(back.manifest_json == ck.manifest_json);
  REQUIRE(back.arrays.size() == ck.arrays.size());
  for (const auto& [name, mat] : ck.arrays) {
    REQUIRE(back.arrays.count(name) == 1);
    const Eigen::MatrixXd& got = back.arrays.at(name);
    // loader returns flat rows; compare against the f32-rounded original
    REQUIRE(got.size() == mat.size());
    int idx = 0;
    for (int i = 0; i < mat.rows(); ++i)
      for (int j = 0; j < mat.cols(); ++j) {
        float f = static_cast<float>(mat(i, j));
        CHECK(got(idx / got.cols(), idx % got.cols()) == static_cast<double>(f));
        ++idx;
      }
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: identical state writes byte-identical archives") {
  std::string p1 = tmp_path("poex_ck_a.zip");
  std::string p2 = tmp_path("poex_ck_b.zip");
  save_checkpoint(p1, sample_ck(7));
  save_checkpoint(p2, sample_ck(7));
  CHECK(slurp(p1) == slurp(p2));

  // any value change must show up in the bytes
  Checkpoint ck = sample_ck(7);
  ck.arrays["a.first"](0, 0) += 1.0;
  save_checkpoint(p2, ck);
  CHECK(slurp(p1) != slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint: corrupt and missing archives raise checkpoint errors") {
  CHECK_THROWS_AS((void)load_checkpoint(tmp_path("poex_ck_nonexistent.zip")),
                  CheckpointError);

  std::string path = tmp_path("poex_ck_corrupt.zip");
  {
    std::ofstream out(path, std::ios::binary);
    out << "this is not a zip archive";
  }
  CHECK_THROWS_AS((void)load_checkpoint(path), CheckpointError);

  // truncated real archive
  std::string good = tmp_path("poex_ck_good.zip");
  save_checkpoint(good, sample_ck(3));
  std::string bytes = slurp(good);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS((void)load_checkpoint(path), CheckpointError);
  std::remove(path.c_str());
  std::remove(good.c_str());
}
