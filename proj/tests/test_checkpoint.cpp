#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cfa/checkpoint.hpp"
#include "cfa/errors.hpp"
#include "cfa/nn.hpp"
#include "cfa/rng.hpp"

using namespace cfa;
using nn::ParamGroup;
using nn::TensorRef;

namespace {

std::filesystem::path tmp(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

nn::ParameterSet demo_params(uint64_t seed) {
  Rng rng(seed);
  nn::ParameterSet ps;
  auto add = [&](const std::string& name, ParamGroup g,
                 std::vector<int> shape) {
    auto t = nn::make_param(std::move(shape));
    for (auto& x : t->v) x = rng.normal(0.0, 1.0);
    ps.add(name, g, t);
  };
  add("enc.w", ParamGroup::generative, {4, 3});
  add("enc.b", ParamGroup::generative, {3});
  add("disc.w", ParamGroup::discriminative, {3, 2, 2});
  return ps;
}

}  // namespace

TEST_CASE("round trip restores every value bit for bit") {
  const auto path = tmp("cfa_ckpt_roundtrip.bin");
  auto src = demo_params(1);
  nlohmann::json hyper{{"d_model", 32}, {"n_heads", 4}};
  nn::save_checkpoint(path.string(), "cfa", hyper, src);

  auto dst = demo_params(2);
  for (size_t i = 0; i < src.entries().size(); ++i)
    REQUIRE(dst.entries()[i].tensor->v != src.entries()[i].tensor->v);

  const auto meta = nn::load_checkpoint(path.string(), dst);
  CHECK(meta.model == "cfa");
  CHECK(meta.hyper == hyper);
  for (size_t i = 0; i < src.entries().size(); ++i) {
    const auto& a = *src.entries()[i].tensor;
    const auto& b = *dst.entries()[i].tensor;
    CHECK(a.shape == b.shape);
    CHECK(a.v == b.v);
  }
  std::filesystem::remove(path);
}

TEST_CASE("peek reads the manifest without parameters") {
  const auto path = tmp("cfa_ckpt_peek.bin");
  auto src = demo_params(3);
  nn::save_checkpoint(path.string(), "lstm", {{"hidden", 64}}, src);
  const auto meta = nn::peek_checkpoint(path.string());
  CHECK(meta.model == "lstm");
  CHECK(meta.hyper.at("hidden").get<int>() == 64);
  std::filesystem::remove(path);
}

TEST_CASE("wrong magic and truncation are io errors") {
  const auto path = tmp("cfa_ckpt_bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPTxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_WITH_AS(nn::peek_checkpoint(path.string()),
                       doctest::Contains("not a checkpoint"), IoError);

  auto src = demo_params(4);
  nn::save_checkpoint(path.string(), "cfa", {}, src);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 16);
  auto dst = demo_params(5);
  CHECK_THROWS_WITH_AS(nn::load_checkpoint(path.string(), dst),
                       doctest::Contains("truncated"), IoError);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(nn::peek_checkpoint(path.string()), IoError);
}

TEST_CASE("mismatched receivers are rejected by name, shape, and group") {
  const auto path = tmp("cfa_ckpt_mismatch.bin");
  auto src = demo_params(6);
  nn::save_checkpoint(path.string(), "cfa", {}, src);

  // Unknown parameter name.
  {
    nn::ParameterSet other;
    other.add("something.else", ParamGroup::generative, nn::make_param({4, 3}));
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path.string(), other),
                         doctest::Contains("unknown parameter"), IoError);
  }
  // Right name, wrong shape.
  {
    nn::ParameterSet other;
    other.add("enc.w", ParamGroup::generative, nn::make_param({3, 4}));
    other.add("enc.b", ParamGroup::generative, nn::make_param({3}));
    other.add("disc.w", ParamGroup::discriminative,
              nn::make_param({3, 2, 2}));
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path.string(), other),
                         doctest::Contains("shape mismatch"), IoError);
  }
  // Right name and shape, wrong group.
  {
    nn::ParameterSet other;
    other.add("enc.w", ParamGroup::discriminative, nn::make_param({4, 3}));
    other.add("enc.b", ParamGroup::generative, nn::make_param({3}));
    other.add("disc.w", ParamGroup::discriminative,
              nn::make_param({3, 2, 2}));
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path.string(), other),
                         doctest::Contains("group mismatch"), IoError);
  }
  // Receiver has a parameter the file does not cover.
  {
    auto other = demo_params(7);
    other.add("extra.w", ParamGroup::generative, nn::make_param({2}));
    CHECK_THROWS_WITH_AS(nn::load_checkpoint(path.string(), other),
                         doctest::Contains("does not cover"), IoError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupt manifest bytes are io errors") {
  const auto path = tmp("cfa_ckpt_garbage.bin");
  auto src = demo_params(8);
  nn::save_checkpoint(path.string(), "cfa", {}, src);
  {
    // Flip a byte inside the JSON manifest, just past magic and length.
    std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(20);
    fs.put('\x01');
  }
  auto dst = demo_params(9);
  CHECK_THROWS_AS(nn::load_checkpoint(path.string(), dst), IoError);
  std::filesystem::remove(path);
}
