#include <doctest.h>

#include <fstream>

#include "cravl/synth.hpp"
#include "cravl/types.hpp"
#include "test_helpers.hpp"

using namespace cravl;
using cravl::testing::TempDir;

TEST_CASE("rating scale round-trips exactly the five strings") {
  const char* names[] = {"G", "PG", "M", "MA15+", "R18+"};
  for (int i = 0; i < kNumRatings; ++i) {
    const ContentRating r = rating_from_ordinal(i);
    CHECK(std::string(to_string(r)) == names[i]);
    CHECK(rating_from_string(names[i]) == r);
    CHECK(ordinal(r) == i);
  }
  CHECK(!rating_from_string("E10+"));
  CHECK(!rating_from_string("g"));
  CHECK_THROWS_AS(rating_from_ordinal(5), UsageError);
  CHECK_THROWS_AS(rating_from_ordinal(-1), UsageError);
}

TEST_CASE("rating_distance is the signed ordinal difference") {
  CHECK(rating_distance(ContentRating::M, ContentRating::G) == 2);
  CHECK(rating_distance(ContentRating::G, ContentRating::G) == 0);
  CHECK(rating_distance(ContentRating::G, ContentRating::R18) == -4);

  // antisymmetry and bound over the whole scale
  for (int a = 0; a < kNumRatings; ++a) {
    for (int b = 0; b < kNumRatings; ++b) {
      const auto ra = rating_from_ordinal(a), rb = rating_from_ordinal(b);
      CHECK(rating_distance(ra, rb) == -rating_distance(rb, ra));
      CHECK(std::abs(rating_distance(ra, rb)) <= 4);
    }
  }
}

TEST_CASE("manifest: empty file, single record, error paths") {
  TempDir dir("manifest");
  const std::string path = dir.str() + "/m.jsonl";

  {
    std::ofstream(path) << "";
    CHECK(read_manifest(path).empty());
  }
  {
    std::ofstream(path) << R"({"app_id":"a","declared":"MA15+","icon":"i.ppm","screenshots":[],)"
                           R"("description":"d","downloads":3,"snapshots":[]})"
                        << "\n";
    const auto records = read_manifest(path);
    REQUIRE(records.size() == 1);
    CHECK(ordinal(records[0].declared) == 3);
    CHECK(records[0].app_id == "a");
  }
  {
    std::ofstream(path) << "{not json}\n";
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("line 1"), DataError);
  }
  {
    std::ofstream out(path);
    out << R"({"app_id":"a","declared":"G","icon":"i","screenshots":[],"description":"",)"
           R"("downloads":0,"snapshots":[]})"
        << "\n";
    out << R"({"app_id":"a","declared":"G","icon":"i","screenshots":[],"description":"",)"
           R"("downloads":0,"snapshots":[]})"
        << "\n";
    out.close();
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("duplicate app_id"), DataError);
  }
  {
    std::ofstream(path) << R"({"app_id":"a","declared":"E","icon":"i","screenshots":[],)"
                           R"("description":"","downloads":0,"snapshots":[]})"
                        << "\n";
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("unknown rating"), DataError);
  }
  {
    std::ofstream(path) << R"({"app_id":"a","declared":"G","icon":"i","screenshots":[],)"
                           R"("description":"","downloads":0,)"
                           R"("snapshots":[{"ts":5,"alive":true},{"ts":1,"alive":true}]})"
                        << "\n";
    CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("sorted"), DataError);
  }
}

TEST_CASE("manifest round-trip over generated fixtures is field-identical") {
  TempDir dir("roundtrip");
  DataSpec spec;
  spec.n_apps = 25;
  spec.seed = 11;
  const auto written = gen_dataset(spec, dir.str());
  const auto read_back = read_manifest(dir.str() + "/manifest.jsonl");
  REQUIRE(read_back.size() == written.size());
  for (size_t i = 0; i < written.size(); ++i) {
    CHECK(read_back[i] == written[i]);
  }

  // write -> read -> write is the identity on the file too
  const std::string copy = dir.str() + "/copy.jsonl";
  write_manifest(copy, read_back);
  CHECK(cravl::testing::hash_file(copy) == cravl::testing::hash_file(dir.str() + "/manifest.jsonl"));
}

TEST_CASE("ppm round-trip preserves bytes") {
  TempDir dir("ppm");
  Rng rng(3);
  ImageBuffer img = ImageBuffer::filled(16, 16, 0, 0, 0);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  const std::string path = dir.str() + "/x.ppm";
  write_ppm(path, img);

  const ImageU8 u8 = read_ppm_u8(path);
  CHECK(u8.width == 16);
  CHECK(u8.height == 16);
  const std::string path2 = dir.str() + "/y.ppm";
  write_ppm(path2, u8.to_float());
  CHECK(cravl::testing::hash_file(path) == cravl::testing::hash_file(path2));

  CHECK_THROWS_AS(read_ppm(dir.str() + "/missing.ppm"), DataError);
}
