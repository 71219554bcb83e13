#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dmeta/checkpoint.hpp"
#include "dmeta/errors.hpp"

using namespace dmeta;

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("round trip is bit exact") {
  const Model model(NetworkSpec::omniglot(5, 8));
  RngStream rng(17);
  const ParameterSet params = model.init_params(rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "dmeta_ckpt_test.dmeta").string();
  save_checkpoint(path, model.spec(), params);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.spec == model.spec());
  CHECK(loaded.params.equals(params));
  std::remove(path.c_str());
}

TEST_CASE("missing file raises IoError") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nowhere.dmeta"), IoError);
}

TEST_CASE("malformed content raises IoError") {
  const auto dir = std::filesystem::temp_directory_path();
  SUBCASE("wrong magic") {
    const std::string path = (dir / "dmeta_bad_magic.dmeta").string();
    std::ofstream(path) << "NOTADMETA_FILE_AT_ALL";
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    std::remove(path.c_str());
  }
  SUBCASE("truncated payload") {
    const Model model(NetworkSpec::omniglot(5, 8));
    RngStream rng(19);
    const ParameterSet params = model.init_params(rng);
    const std::string full = (dir / "dmeta_full.dmeta").string();
    save_checkpoint(full, model.spec(), params);
    std::ifstream in(full, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    const std::string path = (dir / "dmeta_truncated.dmeta").string();
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    std::remove(full.c_str());
    std::remove(path.c_str());
  }
}

TEST_SUITE_END();
