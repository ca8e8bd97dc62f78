#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "stainkit.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// RAII wrappers keep the test cases focused on the calls under test.
struct Image {
  sk_image* ptr = nullptr;
  ~Image() { sk_image_free(ptr); }
};

struct Profile {
  sk_stain_profile* ptr = nullptr;
  ~Profile() { sk_profile_free(ptr); }
};

struct Gan {
  sk_gan* ptr = nullptr;
  ~Gan() { sk_gan_free(ptr); }
};

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { sk_string_free(ptr); }
};

sk_image* make_image(int w, int h, const std::vector<double>& pixels) {
  sk_image* img = nullptr;
  REQUIRE(sk_image_create(w, h, &img) == SK_OK);
  std::memcpy(sk_image_pixels(img), pixels.data(), pixels.size() * sizeof(double));
  return img;
}

std::vector<double> grab(sk_image* img) {
  std::size_t n = static_cast<std::size_t>(sk_image_width(img)) * sk_image_height(img) * 3;
  double* p = sk_image_pixels(img);
  return std::vector<double>(p, p + n);
}

// Intensity for one absorbance value under the library's optical model.
double to_intensity(double od) {
  double v = (240.0 * std::pow(10.0, -od) - 1.0) / 255.0;
  return std::min(1.0, std::max(0.0, v));
}

// Two-stain tile built from unit columns whose entries all stay well above
// the absorbance floor, so near-pure pixels survive the tissue filter and
// the angular estimators can see both axes.
std::vector<double> stain_pixels(int w, int h, unsigned rng_seed) {
  const double m1[3] = {0.424, 0.566, 0.707};
  const double m2[3] = {0.297, 0.890, 0.346};
  std::mt19937_64 gen(rng_seed);
  auto uni = [&gen](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(gen() >> 11) * 0x1.0p-53);
  };
  std::vector<double> pixels(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t p = 0; p < pixels.size() / 3; ++p) {
    double draw = uni(0.0, 1.0);
    double c1, c2;
    if (draw < 0.4) {
      c1 = uni(0.9, 1.5);
      c2 = uni(0.0, 0.02);
    } else if (draw < 0.8) {
      c1 = uni(0.0, 0.02);
      c2 = uni(0.9, 1.5);
    } else {
      c1 = uni(0.3, 1.0);
      c2 = uni(0.3, 1.0);
    }
    for (int c = 0; c < 3; ++c) pixels[p * 3 + c] = to_intensity(c1 * m1[c] + c2 * m2[c]);
  }
  return pixels;
}

std::vector<double> random_pixels(int w, int h, unsigned rng_seed) {
  std::mt19937_64 gen(rng_seed);
  std::vector<double> pixels(static_cast<std::size_t>(w) * h * 3);
  for (double& p : pixels) p = static_cast<double>(gen() >> 11) * 0x1.0p-53;
  return pixels;
}

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void collect_line(const char* epoch_json, void* user_data) {
  static_cast<std::vector<std::string>*>(user_data)->push_back(epoch_json);
}

// Scaled-down settings so training epochs finish in milliseconds.
std::string tiny_config() {
  OwnedString defaults{sk_gan_default_config()};
  json doc = json::parse(defaults.ptr);
  doc["generator"]["depth"] = 1;
  doc["generator"]["innermost_filters"] = 4;
  doc["generator"]["input_size"] = 8;
  doc["discriminator"]["blocks"] = 1;
  doc["discriminator"]["base_filters"] = 4;
  doc["train"]["total_epochs"] = 2;
  doc["train"]["decay_epochs"] = 0;
  doc["train"]["buffer_size"] = 4;
  doc["train"]["rng_seed"] = 9;
  return doc.dump();
}

}  // namespace

TEST_CASE("version and error state are reachable") {
  REQUIRE(sk_version() != nullptr);
  CHECK(std::string(sk_version()) == "1.0.0");
  REQUIRE(sk_last_error() != nullptr);
}

TEST_CASE("null arguments come back as invalid-argument failures") {
  CHECK(sk_image_load_png(nullptr, nullptr) == SK_ERR_INVALID_ARGUMENT);
  CHECK(std::string(sk_last_error()).size() > 0);
  CHECK(sk_image_create(8, 8, nullptr) == SK_ERR_INVALID_ARGUMENT);
  CHECK(sk_profile_fit("reinhard", nullptr, nullptr) == SK_ERR_INVALID_ARGUMENT);
  CHECK(sk_ssim(nullptr, nullptr, nullptr) == SK_ERR_INVALID_ARGUMENT);
  CHECK(sk_image_create(0, 8, nullptr) == SK_ERR_INVALID_ARGUMENT);
}

TEST_CASE("missing files map to io errors and junk to format errors") {
  sk_image* img = nullptr;
  CHECK(sk_image_load_png("/nonexistent/path.png", &img) == SK_ERR_IO);
  fs::path dir = fresh_dir("stainkit_capi_fmt");
  std::ofstream(dir / "junk.json") << "{ not json";
  sk_stain_profile* profile = nullptr;
  CHECK(sk_profile_load((dir / "junk.json").string().c_str(), &profile) == SK_ERR_BAD_FORMAT);
  sk_gan* gan = nullptr;
  std::ofstream(dir / "junk.ckpt") << "junk";
  CHECK(sk_gan_load((dir / "junk.ckpt").string().c_str(), &gan) == SK_ERR_BAD_FORMAT);
  fs::remove_all(dir);
}

TEST_CASE("images round-trip through png on the 8-bit grid") {
  fs::path dir = fresh_dir("stainkit_capi_png");
  std::vector<double> pixels(8 * 6 * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<double>((i * 7) % 256) / 255.0;
  }
  Image img{make_image(8, 6, pixels)};
  CHECK(sk_image_width(img.ptr) == 8);
  CHECK(sk_image_height(img.ptr) == 6);

  fs::path path = dir / "t.png";
  REQUIRE(sk_image_save_png(img.ptr, path.string().c_str()) == SK_OK);
  Image back;
  REQUIRE(sk_image_load_png(path.string().c_str(), &back.ptr) == SK_OK);
  std::vector<double> got = grab(back.ptr);
  REQUIRE(got.size() == pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) CHECK(got[i] == pixels[i]);
  fs::remove_all(dir);
}

TEST_CASE("grayscale and jitter behave like the imaging pipeline") {
  Image img{make_image(8, 8, random_pixels(8, 8, 31))};
  Image gray;
  REQUIRE(sk_image_grayscale(img.ptr, &gray.ptr) == SK_OK);
  std::vector<double> g = grab(gray.ptr);
  for (std::size_t p = 0; p < g.size(); p += 3) {
    CHECK(g[p] == g[p + 1]);
    CHECK(g[p] == g[p + 2]);
  }

  Image identity;
  REQUIRE(sk_image_jitter(img.ptr, 0.0, 0.0, 0.0, 0.0, 5, &identity.ptr) == SK_OK);
  CHECK(grab(identity.ptr) == grab(img.ptr));

  Image j1, j2;
  REQUIRE(sk_image_jitter(img.ptr, 0.5, 0.5, 0.5, 0.1, 42, &j1.ptr) == SK_OK);
  REQUIRE(sk_image_jitter(img.ptr, 0.5, 0.5, 0.5, 0.1, 42, &j2.ptr) == SK_OK);
  CHECK(grab(j1.ptr) == grab(j2.ptr));
  CHECK(grab(j1.ptr) != grab(img.ptr));
}

TEST_CASE("reinhard profiles fit, persist and reproduce their template") {
  fs::path dir = fresh_dir("stainkit_capi_reinhard");
  Image tmpl{make_image(16, 16, stain_pixels(16, 16, 7))};
  Profile profile;
  REQUIRE(sk_profile_fit("reinhard", tmpl.ptr, &profile.ptr) == SK_OK);
  CHECK(std::string(sk_profile_method(profile.ptr)) == "reinhard");

  fs::path path = dir / "profile.json";
  REQUIRE(sk_profile_save(profile.ptr, path.string().c_str()) == SK_OK);
  Profile loaded;
  REQUIRE(sk_profile_load(path.string().c_str(), &loaded.ptr) == SK_OK);
  CHECK(std::string(sk_profile_method(loaded.ptr)) == "reinhard");

  Image out;
  REQUIRE(sk_profile_normalize(loaded.ptr, tmpl.ptr, &out.ptr) == SK_OK);
  std::vector<double> a = grab(tmpl.ptr), b = grab(out.ptr);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= 2e-3);
  fs::remove_all(dir);
}

TEST_CASE("macenko profiles normalize stain tiles and persist") {
  fs::path dir = fresh_dir("stainkit_capi_macenko");
  Image tmpl{make_image(24, 24, stain_pixels(24, 24, 11))};
  Profile profile;
  REQUIRE(sk_profile_fit("macenko", tmpl.ptr, &profile.ptr) == SK_OK);

  fs::path path = dir / "profile.json";
  REQUIRE(sk_profile_save(profile.ptr, path.string().c_str()) == SK_OK);
  Profile loaded;
  REQUIRE(sk_profile_load(path.string().c_str(), &loaded.ptr) == SK_OK);
  CHECK(std::string(sk_profile_method(loaded.ptr)) == "macenko");

  Image out;
  REQUIRE(sk_profile_normalize(loaded.ptr, tmpl.ptr, &out.ptr) == SK_OK);
  std::vector<double> a = grab(tmpl.ptr), b = grab(out.ptr);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= 0.02);

  CHECK(sk_profile_fit("mystery", tmpl.ptr, &profile.ptr) == SK_ERR_INVALID_ARGUMENT);
  fs::remove_all(dir);
}

TEST_CASE("an all-white image cannot support a stain fit") {
  Image white{make_image(24, 24, std::vector<double>(24 * 24 * 3, 1.0))};
  sk_stain_profile* profile = nullptr;
  CHECK(sk_profile_fit("macenko", white.ptr, &profile) == SK_ERR_INSUFFICIENT_TISSUE);
  CHECK(std::string(sk_last_error()).size() > 0);
}

TEST_CASE("the default gan config exposes every tunable block") {
  OwnedString config{sk_gan_default_config()};
  REQUIRE(config.ptr != nullptr);
  json doc = json::parse(config.ptr);
  CHECK(doc["generator"]["depth"] == 6);
  CHECK(doc["generator"]["innermost_filters"] == 32);
  CHECK(doc["generator"]["input_size"] == 256);
  CHECK(doc["discriminator"]["blocks"] == 3);
  CHECK(doc["discriminator"]["base_filters"] == 16);
  CHECK(doc["train"]["total_epochs"] == 100);
  CHECK(doc["train"]["decay_epochs"] == 50);
  CHECK(doc["train"]["buffer_size"] == 50);
  CHECK(doc["train"]["d_loss_threshold"] == 0.1);
  CHECK(doc["train"]["lambda_cyc"] == 10.0);
  CHECK(doc["train"]["lambda_idt"] == 0.5);
  CHECK(doc["train"]["learning_rate"] == 1e-5);
  CHECK(doc["train"]["batch_size"] == 1);
}

TEST_CASE("gans train from directories, checkpoint and normalize") {
  fs::path dir = fresh_dir("stainkit_capi_gan");
  fs::create_directories(dir / "x");
  fs::create_directories(dir / "y");
  for (int i = 0; i < 2; ++i) {
    Image ix{make_image(8, 8, random_pixels(8, 8, 100 + i))};
    Image iy{make_image(8, 8, random_pixels(8, 8, 200 + i))};
    REQUIRE(sk_image_save_png(ix.ptr, (dir / "x" / ("x" + std::to_string(i) + ".png"))
                                          .string()
                                          .c_str()) == SK_OK);
    REQUIRE(sk_image_save_png(iy.ptr, (dir / "y" / ("y" + std::to_string(i) + ".png"))
                                          .string()
                                          .c_str()) == SK_OK);
  }

  std::string config = tiny_config();
  Gan gan;
  REQUIRE(sk_gan_create(config.c_str(), &gan.ptr) == SK_OK);
  CHECK(sk_gan_epoch(gan.ptr) == 0);
  OwnedString echoed{sk_gan_config_json(gan.ptr)};
  json doc = json::parse(echoed.ptr);
  CHECK(doc["generator"]["depth"] == 1);
  CHECK(doc["train"]["total_epochs"] == 2);

  std::vector<std::string> lines;
  REQUIRE(sk_gan_train_dirs(gan.ptr, (dir / "x").string().c_str(), (dir / "y").string().c_str(),
                            1, collect_line, &lines) == SK_OK);
  CHECK(sk_gan_epoch(gan.ptr) == 1);
  REQUIRE(lines.size() == 1);
  json line = json::parse(lines[0]);
  CHECK(line["epoch"] == 0);
  CHECK(line["steps"] == 2);
  CHECK(line.contains("g_total"));
  CHECK(line.contains("d_x_updates"));

  // A zero cap means run to the configured total.
  REQUIRE(sk_gan_train_dirs(gan.ptr, (dir / "x").string().c_str(), (dir / "y").string().c_str(),
                            0, collect_line, &lines) == SK_OK);
  CHECK(sk_gan_epoch(gan.ptr) == 2);
  CHECK(lines.size() == 2);

  fs::path ckpt = dir / "model.ckpt";
  REQUIRE(sk_gan_save(gan.ptr, ckpt.string().c_str()) == SK_OK);
  Gan loaded;
  REQUIRE(sk_gan_load(ckpt.string().c_str(), &loaded.ptr) == SK_OK);
  CHECK(sk_gan_epoch(loaded.ptr) == 2);

  Image input{make_image(8, 8, random_pixels(8, 8, 300))};
  Image to_x, to_y;
  REQUIRE(sk_gan_normalize(loaded.ptr, input.ptr, 1, &to_x.ptr) == SK_OK);
  REQUIRE(sk_gan_normalize(loaded.ptr, input.ptr, 0, &to_y.ptr) == SK_OK);
  CHECK(sk_image_width(to_x.ptr) == 8);
  CHECK(grab(to_x.ptr) != grab(to_y.ptr));
  for (double p : grab(to_x.ptr)) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }

  // An empty training directory is a usage error, not a crash.
  fs::create_directories(dir / "empty");
  CHECK(sk_gan_train_dirs(gan.ptr, (dir / "empty").string().c_str(),
                          (dir / "y").string().c_str(), 1, nullptr,
                          nullptr) == SK_ERR_TOO_FEW_SAMPLES);
  fs::remove_all(dir);
}

TEST_CASE("gan config parsing separates defaults from malformed input") {
  sk_gan* gan = nullptr;
  CHECK(sk_gan_create("{ nope", &gan) == SK_ERR_BAD_FORMAT);
  // A present block must be complete.
  CHECK(sk_gan_create("{\"train\":{}}", &gan) == SK_ERR_BAD_FORMAT);
  // Missing blocks fall back to the defaults.
  Gan with_defaults;
  REQUIRE(sk_gan_create("{}", &with_defaults.ptr) == SK_OK);
  OwnedString echoed{sk_gan_config_json(with_defaults.ptr)};
  json doc = json::parse(echoed.ptr);
  CHECK(doc["train"]["total_epochs"] == 100);
  CHECK(doc["generator"]["depth"] == 6);
}

TEST_CASE("ssim through the c api agrees with the identity oracle") {
  Image a{make_image(12, 12, random_pixels(12, 12, 55))};
  double value = 0.0;
  REQUIRE(sk_ssim(a.ptr, a.ptr, &value) == SK_OK);
  CHECK(value == 1.0);

  Image b{make_image(12, 12, random_pixels(12, 12, 56))};
  REQUIRE(sk_ssim(a.ptr, b.ptr, &value) == SK_OK);
  CHECK(value < 1.0);

  Image small{make_image(4, 4, std::vector<double>(4 * 4 * 3, 0.5))};
  CHECK(sk_ssim(small.ptr, small.ptr, &value) == SK_ERR_WINDOW_TOO_LARGE);
}

TEST_CASE("fid over directories reports the full result record") {
  fs::path dir = fresh_dir("stainkit_capi_fid");
  fs::create_directories(dir / "a");
  for (int i = 0; i < 6; ++i) {
    Image img{make_image(8, 8, random_pixels(8, 8, 400 + i))};
    REQUIRE(sk_image_save_png(img.ptr, (dir / "a" / ("i" + std::to_string(i) + ".png"))
                                           .string()
                                           .c_str()) == SK_OK);
  }
  const char* spec = "{\"kind\":\"seeded_random\",\"feature_dim\":16,\"seed\":3}";
  OwnedString result;
  REQUIRE(sk_fid_dirs(spec, (dir / "a").string().c_str(), (dir / "a").string().c_str(),
                      &result.ptr) == SK_OK);
  json doc = json::parse(result.ptr);
  CHECK(doc["fid"].get<double>() <= 1e-6);
  CHECK(doc["n_ref"] == 6);
  CHECK(doc["n_cand"] == 6);
  CHECK(doc["feature_dim"] == 16);
  CHECK(doc["rank_deficient"] == true);

  OwnedString bad;
  CHECK(sk_fid_dirs("{ nope", (dir / "a").string().c_str(), (dir / "a").string().c_str(),
                    &bad.ptr) == SK_ERR_BAD_FORMAT);
  fs::remove_all(dir);
}

TEST_CASE("tile extraction over a directory writes tiles and a manifest") {
  fs::path dir = fresh_dir("stainkit_capi_tiles");
  fs::create_directories(dir / "in");
  Image src{make_image(64, 64, stain_pixels(64, 64, 77))};
  REQUIRE(sk_image_save_png(src.ptr, (dir / "in" / "slide.png").string().c_str()) == SK_OK);

  OwnedString result;
  REQUIRE(sk_extract_tiles((dir / "in").string().c_str(), (dir / "out").string().c_str(), 32,
                           0.0, 0.0, "lab_a", 0, &result.ptr) == SK_OK);
  json doc = json::parse(result.ptr);
  CHECK(doc["tiles"] == 4);
  CHECK(doc["sources"] == 1);
  CHECK(doc["failures"].empty());
  CHECK(fs::exists(dir / "out" / "manifest.csv"));
  CHECK(fs::exists(dir / "out" / "slide_y0_x0.png"));
  fs::remove_all(dir);
}
