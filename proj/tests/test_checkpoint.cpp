#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "auglab/checkpoint.hpp"
#include "auglab/rng.hpp"
#include "auglab/tensor.hpp"

using namespace auglab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("auglab_ckpt_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("tensor container round-trips bit-exactly") {
  TempDir dir;
  RngStream rng(3);
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<double> odd = {0.0, -0.0, 1e-308, -1e300, 0.1, 3.0};
  tensors.emplace_back("odd_values", Tensor({6}, odd));
  std::vector<double> big(2 * 3 * 4);
  for (auto& v : big) v = rng.normal() * 1e3;
  tensors.emplace_back("weights", Tensor({2, 3, 4}, big));

  const std::string path = dir.file("roundtrip.tn");
  write_tensor_file(path, tensors);
  auto back = read_tensor_file(path);

  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(back[i].first == tensors[i].first);
    CHECK(back[i].second.shape() == tensors[i].second.shape());
    const auto& a = tensors[i].second.value();
    const auto& b = back[i].second.value();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }

  // Writing the same tensors again produces an identical file.
  const std::string path2 = dir.file("roundtrip2.tn");
  write_tensor_file(path2, tensors);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
}

TEST_CASE("truncated payload names the offending tensor") {
  TempDir dir;
  const std::string path = dir.file("truncated.tn");
  write_tensor_file(path, {{"first", Tensor::full({2}, 1.0)},
                           {"second", Tensor::full({4}, 2.0)}});
  auto size = fs::file_size(path);
  fs::resize_file(path, size - 9);  // cut into "second"
  try {
    read_tensor_file(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("second") != std::string::npos);
  }
}

TEST_CASE("payload byte count must match header shapes") {
  TempDir dir;
  const std::string path = dir.file("mismatch.tn");
  {
    std::ofstream out(path, std::ios::binary);
    out << R"([{"name":"t","shape":[2,2]}])" << "\n";
    double vals[3] = {1.0, 2.0, 3.0};  // header promises 4
    out.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }
  CHECK_THROWS_AS(read_tensor_file(path), IoError);

  const std::string path2 = dir.file("surplus.tn");
  {
    std::ofstream out(path2, std::ios::binary);
    out << R"([{"name":"t","shape":[2]}])" << "\n";
    double vals[3] = {1.0, 2.0, 3.0};  // header promises 2
    out.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }
  CHECK_THROWS_AS(read_tensor_file(path2), IoError);
}

TEST_CASE("malformed header is rejected") {
  TempDir dir;
  const std::string path = dir.file("badheader.tn");
  {
    std::ofstream out(path, std::ios::binary);
    out << "this is not a header\n";
  }
  CHECK_THROWS_AS(read_tensor_file(path), IoError);

  const std::string path2 = dir.file("badentry.tn");
  {
    std::ofstream out(path2, std::ios::binary);
    out << R"([{"label":"t"}])" << "\n";
  }
  CHECK_THROWS_AS(read_tensor_file(path2), IoError);

  CHECK_THROWS_AS(read_tensor_file(dir.file("does_not_exist.tn")), IoError);
}

TEST_CASE("read_tensor_map rejects duplicate names") {
  TempDir dir;
  const std::string path = dir.file("dup.tn");
  write_tensor_file(path, {{"t", Tensor::full({1}, 1.0)}, {"t", Tensor::full({1}, 2.0)}});
  CHECK_THROWS_AS(read_tensor_map(path), IoError);
}
