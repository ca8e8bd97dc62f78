#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "core/error.hpp"
#include "core/image.hpp"
#include "core/rng.hpp"
#include "core/tiling.hpp"

using namespace stainkit;
using tiling::TileSpec;

namespace {

namespace fs = std::filesystem;

ImageTile solid(int w, int h, double r, double g, double b) {
  ImageTile tile(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      tile.at(y, x, 0) = r;
      tile.at(y, x, 1) = g;
      tile.at(y, x, 2) = b;
    }
  }
  return tile;
}

// Left half saturated pink, right half white.
ImageTile half_tissue(int w, int h) {
  ImageTile tile = solid(w, h, 1.0, 1.0, 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w / 2; ++x) {
      tile.at(y, x, 0) = 0.85;
      tile.at(y, x, 1) = 0.25;
      tile.at(y, x, 2) = 0.55;
    }
  }
  return tile;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("grid positions cover the reference layouts exactly") {
  // 512 with 256-wide tiles at stride 128: 3 starts per axis, 9 tiles.
  CHECK(tiling::tile_positions(512, 256, 128) == std::vector<int>{0, 128, 256});
  // 256 exactly one tile.
  CHECK(tiling::tile_positions(256, 256, 192) == std::vector<int>{0});
  // 448 at stride 192: the second start already touches the border, 4 tiles.
  CHECK(tiling::tile_positions(448, 256, 192) == std::vector<int>{0, 192});
}

TEST_CASE("a trailing partial step shifts the last tile onto the border") {
  CHECK(tiling::tile_positions(500, 256, 128) == std::vector<int>{0, 128, 244});
  CHECK(tiling::tile_positions(300, 256, 256) == std::vector<int>{0, 44});
  CHECK(tiling::tile_positions(257, 256, 192) == std::vector<int>{0, 1});
}

TEST_CASE("stride rounds half away from zero") {
  TileSpec spec;
  spec.tile_px = 256;
  spec.overlap_fraction = 0.25;
  CHECK(spec.stride() == 192);
  spec.overlap_fraction = 0.0;
  CHECK(spec.stride() == 256);
  spec.tile_px = 255;
  spec.overlap_fraction = 0.25;
  CHECK(spec.stride() == 191);  // 191.25 rounds down
  spec.tile_px = 999;
  spec.overlap_fraction = 0.5;
  CHECK(spec.stride() == 500);  // 499.5 rounds up
}

TEST_CASE("tile spec validation rejects degenerate settings") {
  TileSpec spec;
  spec.tile_px = 16;
  CHECK_THROWS_AS(tiling::validate(spec), Error);
  spec = TileSpec{};
  spec.overlap_fraction = 1.0;
  CHECK_THROWS_AS(tiling::validate(spec), Error);
  spec = TileSpec{};
  spec.tile_px = 32;
  spec.overlap_fraction = 0.999;  // stride rounds to zero
  CHECK_THROWS_AS(tiling::validate(spec), Error);
  spec = TileSpec{};
  spec.tissue_threshold = 1.5;
  CHECK_THROWS_AS(tiling::validate(spec), Error);
  CHECK_NOTHROW(tiling::validate(TileSpec{}));
}

TEST_CASE("extracted tiles copy the right pixels and carry provenance") {
  ImageTile source(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      source.at(y, x, 0) = x / 64.0;
      source.at(y, x, 1) = y / 64.0;
      source.at(y, x, 2) = 0.25;
    }
  }
  source.source_id = "s1";
  source.domain_label = "lab_a";

  TileSpec spec;
  spec.tile_px = 32;
  spec.overlap_fraction = 0.5;  // stride 16
  std::vector<ImageTile> tiles = tiling::extract_tiles(source, spec);
  REQUIRE(tiles.size() == 9);

  // Row-major order over (y, x) starts 0, 16, 32.
  CHECK(tiles[0].origin_xy == std::make_pair(0, 0));
  CHECK(tiles[1].origin_xy == std::make_pair(16, 0));
  CHECK(tiles[3].origin_xy == std::make_pair(0, 16));
  CHECK(tiles[8].origin_xy == std::make_pair(32, 32));
  for (const auto& tile : tiles) {
    CHECK(tile.width == 32);
    CHECK(tile.height == 32);
    CHECK(tile.source_id == std::optional<std::string>("s1"));
    CHECK(tile.domain_label == std::optional<std::string>("lab_a"));
    auto [x0, y0] = *tile.origin_xy;
    bool match = true;
    for (int y = 0; y < 32 && match; ++y) {
      for (int x = 0; x < 32 && match; ++x) {
        for (int c = 0; c < 3; ++c) {
          match = match && tile.at(y, x, c) == source.at(y0 + y, x0 + x, c);
        }
      }
    }
    CHECK(match);
  }
}

TEST_CASE("sources smaller than one tile are refused") {
  ImageTile tiny = solid(16, 16, 0.5, 0.5, 0.5);
  TileSpec spec;
  spec.tile_px = 32;
  try {
    tiling::extract_tiles(tiny, spec);
    FAIL("expected SourceTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SourceTooSmall);
  }
}

TEST_CASE("tissue fraction separates saturated tissue from white glass") {
  // Uniformly white: nothing clears the split.
  CHECK(tiling::tissue_fraction(solid(32, 32, 1.0, 1.0, 1.0)) == 0.0);
  // Uniformly saturated: everything counts as tissue.
  CHECK(tiling::tissue_fraction(solid(32, 32, 0.9, 0.2, 0.5)) == 1.0);
  // Half and half splits cleanly.
  CHECK(tiling::tissue_fraction(half_tissue(32, 32)) == 0.5);

  // A weakly and a strongly saturated half still split at the valley.
  ImageTile mixed(32, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      double s = x < 16 ? 0.1 : 0.8;
      mixed.at(y, x, 0) = 0.9;
      mixed.at(y, x, 1) = 0.9 * (1.0 - s);
      mixed.at(y, x, 2) = 0.9 * (1.0 - s);
    }
  }
  CHECK(tiling::tissue_fraction(mixed) == 0.5);
}

TEST_CASE("manifests list surviving tiles in sorted order") {
  fs::path dir = fs::temp_directory_path() / "stainkit_test_tiling";
  fs::remove_all(dir);
  fs::create_directories(dir / "src");
  save_png(half_tissue(64, 64), dir / "src" / "a.png");
  save_png(solid(64, 64, 0.8, 0.3, 0.5), dir / "src" / "b.png");

  TileSpec spec;
  spec.tile_px = 32;
  spec.overlap_fraction = 0.0;
  std::vector<tiling::SourceSpec> sources = {
      {(dir / "src" / "a.png").string(), "a", "lab_a", false},
      {(dir / "src" / "b.png").string(), "b", "lab_b", true},
  };
  tiling::ManifestResult result = tiling::build_manifest(sources, spec, (dir / "out").string());
  CHECK(result.failures.empty());
  // a: only the two left tiles are tissue; b: all four pass.
  REQUIRE(result.rows.size() == 6);
  CHECK(result.rows[0].source_id == "a");
  CHECK(result.rows[0].x == 0);
  CHECK(result.rows[0].y == 0);
  CHECK(result.rows[0].tile_path == "a_y0_x0.png");
  CHECK(result.rows[0].domain_label == "lab_a");
  CHECK_FALSE(result.rows[0].annotated);
  CHECK(result.rows[1].tile_path == "a_y32_x0.png");
  CHECK(result.rows[2].source_id == "b");
  CHECK(result.rows[5].tile_path == "b_y32_x32.png");
  CHECK(result.rows[2].annotated);

  for (const auto& row : result.rows) {
    CHECK(fs::exists(dir / "out" / row.tile_path));
  }
  std::string manifest = read_file(result.manifest_path);
  CHECK(manifest.rfind("source_id,x,y,tile_path,domain_label,annotated,tissue_fraction\n", 0) ==
        0);
  CHECK(manifest.find("a,0,0,a_y0_x0.png,lab_a,false,1.000000") != std::string::npos);
  CHECK(manifest.find("b,32,32,b_y32_x32.png,lab_b,true,1.000000") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("rebuilding a manifest reproduces every byte") {
  fs::path dir = fs::temp_directory_path() / "stainkit_test_tiling_rerun";
  fs::remove_all(dir);
  fs::create_directories(dir / "src");
  rng::Engine gen(15);
  ImageTile noisy(48, 48);
  for (double& p : noisy.pixels) p = rng::uniform(gen, 0.0, 1.0);
  save_png(noisy, dir / "src" / "n.png");

  TileSpec spec;
  spec.tile_px = 32;
  spec.overlap_fraction = 0.25;
  spec.tissue_threshold = 0.0;
  std::vector<tiling::SourceSpec> sources = {{(dir / "src" / "n.png").string(), "n", "d0", false}};
  tiling::ManifestResult first = tiling::build_manifest(sources, spec, (dir / "o1").string());
  tiling::ManifestResult second = tiling::build_manifest(sources, spec, (dir / "o2").string());
  REQUIRE(first.rows.size() == second.rows.size());
  CHECK(read_file(first.manifest_path) == read_file(second.manifest_path));
  for (const auto& row : first.rows) {
    CHECK(read_file(dir / "o1" / row.tile_path) == read_file(dir / "o2" / row.tile_path));
  }
  fs::remove_all(dir);
}

TEST_CASE("unreadable sources are reported without aborting the run") {
  fs::path dir = fs::temp_directory_path() / "stainkit_test_tiling_fail";
  fs::remove_all(dir);
  fs::create_directories(dir / "src");
  save_png(solid(64, 64, 0.8, 0.3, 0.5), dir / "src" / "good.png");
  std::ofstream(dir / "src" / "bad.png") << "not a png";

  TileSpec spec;
  spec.tile_px = 32;
  spec.overlap_fraction = 0.0;
  std::vector<tiling::SourceSpec> sources = {
      {(dir / "src" / "bad.png").string(), "bad", "d", false},
      {(dir / "src" / "missing.png").string(), "gone", "d", false},
      {(dir / "src" / "good.png").string(), "good", "d", false},
  };
  tiling::ManifestResult result = tiling::build_manifest(sources, spec, (dir / "out").string());
  CHECK(result.failures.size() == 2);
  CHECK(result.rows.size() == 4);
  for (const auto& row : result.rows) CHECK(row.source_id == "good");
  fs::remove_all(dir);
}
