// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include <set>
#include <thread>

#include "doctest.h"
#include "json.hpp"
#include "scanstereo/config.hpp"
#include "scanstereo/parallel.hpp"

using namespace scanstereo;

TEST_SUITE("config") {

TEST_CASE("defaults description") {
  const auto j = nlohmann::json::parse(describe_defaults_json());
  CHECK(j["d_state"] == 4);
  CHECK(j["ssm_ratio"].get<double>() == 1.0);
  CHECK(j["inference_iterations"] == 32);
  CHECK(j["training_iterations"] == 22);
  CHECK(j["scan_directions"] == 4);
  CHECK(j["pyramid_levels"] == 4);
  CHECK(j["lookup_radius"] == 4);
  CHECK(j["patch_window"] == 5);
  CHECK(j["sequence_loss_gamma"].get<double>() == 0.9);
  CHECK(j["scan_mode"] == "line_reset");
  CHECK(j["precision"] == "f32");
}

TEST_CASE("storage rounding") {
  CHECK(store(0.1, Precision::kFloat64) == 0.1);
  CHECK(store(0.1, Precision::kFloat32) == static_cast<double>(0.1f));
}

}  // TEST_SUITE

TEST_SUITE("parallel") {

TEST_CASE("every index visited once for any worker count") {
  for (std::size_t threads : {1, 2, 3, 8}) {
    set_num_threads(threads);
    CHECK(num_threads() == threads);
    for (std::size_t count : {0, 1, 5, 97}) {
      std::vector<int> hits(count, 0);
      parallel_for(count, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) ++hits[i];
      });
      for (int h : hits) CHECK(h == 1);
    }
  }
  set_num_threads(0);
  CHECK(num_threads() >= 1);
}

}  // TEST_SUITE
