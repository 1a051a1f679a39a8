#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "ambireg/error.hpp"
#include "ambireg/phantom.hpp"

using namespace ambireg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name)
{
  const fs::path p = fs::temp_directory_path() / ("ambireg_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string from_hex(const std::string& hex)
{
  std::string out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
    out.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  }
  return out;
}

// Written by an independent byte-level script: header JSON, newline, eight f32le values.
const char* kVolumeHex =
    "7b2264696d73223a5b322c322c325d2c2273706163696e675f6d6d223a5b312e352c322e302c302e355d2c226474797065223a2266"
    "33326c65222c226f72646572223a22782d66617374657374227d0a000000000000003e0000803e0000c03e0000003f0000203f0000"
    "403f0000803f";

PhantomSpec small_spec()
{
  PhantomSpec s;
  s.dims = {64, 64, 64};
  s.spacing = {2.0, 4.0, 2.0};
  s.seed = 3;
  return s;
}

}  // namespace

TEST_SUITE("phantom")
{
  TEST_CASE("marker-free phantom is voxel-exact symmetric under the half turn")
  {
    const Volume v = make_phantom(small_spec());
    CHECK(v.data.size() == v.size());
    bool nonzero = false;
    for (int k = 0; k < v.dims[2]; ++k) {
      for (int j = 0; j < v.dims[1]; ++j) {
        for (int i = 0; i < v.dims[0]; ++i) {
          const auto r = rot180_index(v, i, j, k);
          REQUIRE(v.at(i, j, k) == v.at(r[0], r[1], r[2]));
          nonzero = nonzero || v.at(i, j, k) > 0.0f;
        }
      }
    }
    CHECK(nonzero);
    for (float x : v.data) {
      CHECK((x >= 0.0f && x <= 1.0f));
    }
  }

  TEST_CASE("a marker breaks the symmetry")
  {
    PhantomSpec s = small_spec();
    s.marker = Marker{Eigen::Vector3d(10.0, 0.0, 0.0), 8.0, 1.0};
    const Volume v = make_phantom(s);
    double worst = 0.0;
    for (int k = 0; k < v.dims[2]; ++k) {
      for (int j = 0; j < v.dims[1]; ++j) {
        for (int i = 0; i < v.dims[0]; ++i) {
          const auto r = rot180_index(v, i, j, k);
          worst = std::max(worst, double(std::abs(v.at(i, j, k) - v.at(r[0], r[1], r[2]))));
        }
      }
    }
    CHECK(worst > 0.1);
  }

  TEST_CASE("rot180_volume is an involution fixing symmetric phantoms")
  {
    PhantomSpec s = small_spec();
    CHECK(rot180_volume(make_phantom(s)) == make_phantom(s));
    s.marker = Marker{Eigen::Vector3d(10.0, 0.0, 0.0), 8.0, 1.0};
    const Volume v = make_phantom(s);
    const Volume r = rot180_volume(v);
    CHECK(r != v);
    CHECK(rot180_volume(r) == v);
    CHECK(r.at(1, 2, 3) == v.at(v.dims[0] - 2, 2, v.dims[2] - 4));
  }

  TEST_CASE("phantom generation is deterministic and seed dependent")
  {
    CHECK(make_phantom(small_spec()) == make_phantom(small_spec()));
    PhantomSpec other = small_spec();
    other.seed = 4;
    CHECK_FALSE(make_phantom(other) == make_phantom(small_spec()));
  }

  TEST_CASE("zero vertebrae give an empty volume")
  {
    PhantomSpec s = small_spec();
    s.n_vertebrae = 0;
    const Volume v = make_phantom(s);
    for (float x : v.data) {
      REQUIRE(x == 0.0f);
    }
  }

  TEST_CASE("invalid specs are rejected")
  {
    PhantomSpec s = small_spec();
    s.dims = {4, 64, 64};
    CHECK_THROWS_AS(make_phantom(s), ParameterError);
    s = small_spec();
    s.spacing = {0.0, 1.0, 1.0};
    CHECK_THROWS_AS(make_phantom(s), ParameterError);
    s = small_spec();
    s.n_vertebrae = -1;
    CHECK_THROWS_AS(make_phantom(s), ParameterError);
  }

  TEST_CASE("trilinear sampling at nodes, midpoints and outside")
  {
    Volume v;
    v.dims = {2, 2, 2};
    v.data = {0.0f, 1.0f, 0.0f, 1.0f, 0.0f, 1.0f, 0.0f, 1.0f};
    CHECK(sample_trilinear(v, {0.0, 0.0, 0.0}) == 0.0);
    CHECK(sample_trilinear(v, {1.0, 1.0, 1.0}) == 1.0);
    CHECK(sample_trilinear(v, {0.5, 0.3, 0.7}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sample_trilinear(v, {-5.0, 0.0, 0.0}) == 0.0);
    CHECK(sample_trilinear(v, {0.5, 1.2, 0.5}) == 0.0);

    const Volume p = make_phantom(small_spec());
    for (int n = 0; n < 200; ++n) {
      const int i = (n * 7) % 64;
      const int j = (n * 13) % 64;
      const int k = (n * 29) % 64;
      REQUIRE(sample_trilinear(p, Eigen::Vector3d(i, j, k)) == p.at(i, j, k));
    }
  }

  TEST_CASE("resampling to the same grid is the identity")
  {
    const Volume v = make_phantom(small_spec());
    const Volume r = resample_trilinear(v, v.dims);
    CHECK(r.dims == v.dims);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      REQUIRE(r.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));
    }
    const Volume half = resample_trilinear(v, {32, 32, 32});
    CHECK(half.extent_mm().isApprox(v.extent_mm(), 1e-12));
  }

  TEST_CASE("volume file round trip and frozen byte layout")
  {
    const fs::path dir = temp_dir("phantom_io");
    Volume v;
    v.dims = {2, 2, 2};
    v.spacing = {1.5, 2.0, 0.5};
    v.data = {0.0f, 0.125f, 0.25f, 0.375f, 0.5f, 0.625f, 0.75f, 1.0f};
    save_volume(v, dir / "a.vol");
    CHECK(read_bytes(dir / "a.vol") == from_hex(kVolumeHex));

    {
      std::ofstream out(dir / "b.vol", std::ios::binary);
      const std::string bytes = from_hex(kVolumeHex);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK(load_volume(dir / "b.vol") == v);

    const Volume p = make_phantom(small_spec());
    save_volume(p, dir / "p.vol");
    CHECK(load_volume(dir / "p.vol") == p);
  }

  TEST_CASE("corrupted volume files raise format errors")
  {
    const fs::path dir = temp_dir("phantom_bad");
    const std::string bytes = from_hex(kVolumeHex);
    {
      std::ofstream out(dir / "short.vol", std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
    }
    CHECK_THROWS_AS(load_volume(dir / "short.vol"), FormatError);
    {
      std::ofstream out(dir / "junk.vol", std::ios::binary);
      out << "not a header\n1234";
    }
    CHECK_THROWS_AS(load_volume(dir / "junk.vol"), FormatError);
  }
}
