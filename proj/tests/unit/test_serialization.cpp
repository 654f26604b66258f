#include "eoskit/serialization.hpp"

#include "helpers.hpp"

using namespace eoskit;

TEST_CASE("binary matrices round-trip bit-exactly") {
  auto path = std::filesystem::temp_directory_path() / "eoskit_matrix_test.bin";
  Mat m = testing::random_matrix(4, 3, 5);
  m(0, 0) = -0.0;
  m(1, 1) = 1e-300;
  io::write_matrix(path, {{"rows", 4}, {"cols", 3}}, m);
  io::json h;
  Mat back = io::read_matrix(path, &h);
  CHECK(back == m);
  CHECK(h["dtype"] == "f64");
  std::filesystem::remove(path);
}

TEST_CASE("header shape must match the data") {
  auto path = std::filesystem::temp_directory_path() / "eoskit_matrix_bad.bin";
  CHECK_THROWS_AS(io::write_matrix(path, {{"rows", 2}, {"cols", 2}}, Mat::Zero(3, 3)), ConfigError);
}

TEST_CASE("unknown keys are rejected by name") {
  io::json j = {{"a", 1}, {"typo_key", 2}};
  try {
    io::reject_unknown_keys(j, {"a", "b"}, "section");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("typo_key") != std::string::npos);
  }
}

TEST_CASE("infinity is written as a string") {
  CHECK(io::number_or_inf(kInf) == "inf");
  CHECK(io::number_or_inf(io::json("inf")) == kInf);
  CHECK(io::number_or_inf(io::json(3.5)) == 3.5);
}
