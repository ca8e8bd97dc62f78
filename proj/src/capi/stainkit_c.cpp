#include "stainkit.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "core/color.hpp"
#include "core/error.hpp"
#include "core/gan.hpp"
#include "core/image.hpp"
#include "core/metrics.hpp"
#include "core/stain.hpp"
#include "core/tiling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

struct sk_image {
  stainkit::ImageTile tile;
};

struct sk_stain_profile {
  std::string method;
  stainkit::StainModel model;    // macenko / vahadane
  stainkit::TemplateStats stats;  // reinhard
};

struct sk_gan {
  stainkit::gan::MsGan gan;
};

namespace {

thread_local std::string g_last_error;

sk_status map_code(stainkit::ErrorCode code) {
  int value = static_cast<int>(code);
  if (value >= 1 && value <= 15) return static_cast<sk_status>(value);
  return SK_ERR_UNKNOWN;
}

template <typename Fn>
sk_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SK_OK;
  } catch (const stainkit::Error& e) {
    g_last_error = e.what();
    return map_code(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SK_ERR_UNKNOWN;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* message) {
  if (!ok) stainkit::fail(stainkit::ErrorCode::InvalidArgument, message);
}

// Non-recursive scan for .png files, sorted by filename for reproducibility.
std::vector<fs::path> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir))
    stainkit::fail(stainkit::ErrorCode::Io, "not a directory: " + dir);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

std::vector<stainkit::ImageTile> load_dir(const std::string& dir) {
  std::vector<stainkit::ImageTile> tiles;
  for (const auto& path : list_pngs(dir)) tiles.push_back(stainkit::load_png(path));
  if (tiles.empty())
    stainkit::fail(stainkit::ErrorCode::TooFewSamples, "no .png files in " + dir);
  return tiles;
}

json parse_json(const char* text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    stainkit::fail(stainkit::ErrorCode::BadFormat, std::string(what) + ": " + e.what());
  }
}

}  // namespace

extern "C" {

const char* sk_version(void) { return "1.0.0"; }

const char* sk_last_error(void) { return g_last_error.c_str(); }

void sk_string_free(char* s) { std::free(s); }

sk_status sk_image_load_png(const char* path, sk_image** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new sk_image{stainkit::load_png(path)};
  });
}

sk_status sk_image_save_png(const sk_image* image, const char* path) {
  return guarded([&] {
    require(image && path, "null argument");
    stainkit::save_png(image->tile, path);
  });
}

sk_status sk_image_create(int width, int height, sk_image** out) {
  return guarded([&] {
    require(out, "null argument");
    require(width > 0 && height > 0, "image dimensions must be positive");
    *out = new sk_image{stainkit::ImageTile(width, height, 0.0)};
  });
}

void sk_image_free(sk_image* image) { delete image; }

int sk_image_width(const sk_image* image) { return image ? image->tile.width : 0; }

int sk_image_height(const sk_image* image) { return image ? image->tile.height : 0; }

double* sk_image_pixels(sk_image* image) { return image ? image->tile.pixels.data() : nullptr; }

sk_status sk_image_grayscale(const sk_image* image, sk_image** out) {
  return guarded([&] {
    require(image && out, "null argument");
    *out = new sk_image{stainkit::to_grayscale3(image->tile)};
  });
}

sk_status sk_image_jitter(const sk_image* image, double brightness, double contrast,
                          double saturation, double hue, uint64_t seed, sk_image** out) {
  return guarded([&] {
    require(image && out, "null argument");
    stainkit::JitterParams params{brightness, contrast, saturation, hue};
    *out = new sk_image{stainkit::color_jitter(image->tile, params, seed)};
  });
}

sk_status sk_profile_fit(const char* method, const sk_image* template_image,
                         sk_stain_profile** out) {
  return guarded([&] {
    require(method && template_image && out, "null argument");
    std::string name = method;
    auto profile = std::make_unique<sk_stain_profile>();
    profile->method = name;
    if (name == "reinhard") {
      profile->stats = stainkit::reinhard_fit(template_image->tile);
    } else if (name == "macenko") {
      profile->model = stainkit::macenko_fit(template_image->tile);
    } else if (name == "vahadane") {
      profile->model = stainkit::vahadane_fit(template_image->tile);
    } else {
      stainkit::fail(stainkit::ErrorCode::InvalidArgument, "unknown method: " + name);
    }
    *out = profile.release();
  });
}

sk_status sk_profile_save(const sk_stain_profile* profile, const char* path) {
  return guarded([&] {
    require(profile && path, "null argument");
    json doc = profile->method == "reinhard"
                   ? stainkit::template_stats_to_json(profile->stats)
                   : stainkit::stain_model_to_json(profile->model, profile->method);
    std::ofstream stream(path, std::ios::trunc);
    if (!stream) stainkit::fail(stainkit::ErrorCode::Io, std::string("cannot write ") + path);
    stream << doc.dump(2) << "\n";
    if (!stream) stainkit::fail(stainkit::ErrorCode::Io, std::string("write failed: ") + path);
  });
}

sk_status sk_profile_load(const char* path, sk_stain_profile** out) {
  return guarded([&] {
    require(path && out, "null argument");
    std::ifstream stream(path);
    if (!stream) stainkit::fail(stainkit::ErrorCode::Io, std::string("cannot read ") + path);
    json doc;
    try {
      stream >> doc;
    } catch (const json::exception& e) {
      stainkit::fail(stainkit::ErrorCode::BadFormat, std::string("profile json: ") + e.what());
    }
    auto profile = std::make_unique<sk_stain_profile>();
    std::string kind = doc.value("kind", "");
    if (kind == "template_stats") {
      profile->stats = stainkit::template_stats_from_json(doc);
      profile->method = "reinhard";
    } else if (kind == "stain_model") {
      profile->model = stainkit::stain_model_from_json(doc);
      profile->method = doc.value("method", "macenko");
    } else {
      stainkit::fail(stainkit::ErrorCode::BadFormat, "unknown profile kind: " + kind);
    }
    *out = profile.release();
  });
}

const char* sk_profile_method(const sk_stain_profile* profile) {
  return profile ? profile->method.c_str() : "";
}

sk_status sk_profile_normalize(const sk_stain_profile* profile, const sk_image* image,
                               sk_image** out) {
  return guarded([&] {
    require(profile && image && out, "null argument");
    stainkit::ImageTile result(1, 1, 0.0);
    if (profile->method == "reinhard") {
      result = stainkit::reinhard_apply(image->tile, profile->stats);
    } else if (profile->method == "macenko") {
      auto source = stainkit::macenko_fit(image->tile);
      result = stainkit::macenko_apply(image->tile, source, profile->model);
    } else if (profile->method == "vahadane") {
      auto source = stainkit::vahadane_fit(image->tile);
      result = stainkit::vahadane_apply(image->tile, source, profile->model);
    } else {
      stainkit::fail(stainkit::ErrorCode::InvalidArgument,
                     "unknown method: " + profile->method);
    }
    *out = new sk_image{std::move(result)};
  });
}

void sk_profile_free(sk_stain_profile* profile) { delete profile; }

char* sk_gan_default_config(void) {
  json doc;
  doc["generator"] = stainkit::gan::generator_config_to_json(stainkit::nn::GeneratorConfig{});
  doc["discriminator"] =
      stainkit::gan::discriminator_config_to_json(stainkit::nn::DiscriminatorConfig{});
  doc["train"] = stainkit::gan::train_config_to_json(stainkit::gan::TrainConfig{});
  return dup_string(doc.dump(2));
}

sk_status sk_gan_create(const char* config_json, sk_gan** out) {
  return guarded([&] {
    require(config_json && out, "null argument");
    json doc = parse_json(config_json, "gan config");
    stainkit::nn::GeneratorConfig gcfg;
    stainkit::nn::DiscriminatorConfig dcfg;
    stainkit::gan::TrainConfig tcfg;
    if (doc.contains("generator")) gcfg = stainkit::gan::generator_config_from_json(doc["generator"]);
    if (doc.contains("discriminator"))
      dcfg = stainkit::gan::discriminator_config_from_json(doc["discriminator"]);
    if (doc.contains("train")) tcfg = stainkit::gan::train_config_from_json(doc["train"]);
    *out = new sk_gan{stainkit::gan::MsGan(gcfg, dcfg, tcfg)};
  });
}

sk_status sk_gan_load(const char* path, sk_gan** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new sk_gan{stainkit::gan::MsGan::load_checkpoint(path)};
  });
}

sk_status sk_gan_save(sk_gan* gan, const char* path) {
  return guarded([&] {
    require(gan && path, "null argument");
    gan->gan.save_checkpoint(path);
  });
}

void sk_gan_free(sk_gan* gan) { delete gan; }

int sk_gan_epoch(const sk_gan* gan) { return gan ? gan->gan.epoch() : -1; }

char* sk_gan_config_json(const sk_gan* gan) {
  if (!gan) return dup_string("{}");
  json doc;
  doc["generator"] = stainkit::gan::generator_config_to_json(gan->gan.generator_config());
  doc["discriminator"] =
      stainkit::gan::discriminator_config_to_json(gan->gan.discriminator_config());
  doc["train"] = stainkit::gan::train_config_to_json(gan->gan.train_config());
  doc["epoch"] = gan->gan.epoch();
  return dup_string(doc.dump(2));
}

sk_status sk_gan_train_dirs(sk_gan* gan, const char* dir_x, const char* dir_y, int max_epochs,
                            sk_epoch_callback callback, void* user_data) {
  return guarded([&] {
    require(gan && dir_x && dir_y, "null argument");
    auto data_x = load_dir(dir_x);
    auto data_y = load_dir(dir_y);
    int total = gan->gan.train_config().total_epochs;
    int run = 0;
    while (gan->gan.epoch() < total && (max_epochs <= 0 || run < max_epochs)) {
      auto report = gan->gan.run_epoch(data_x, data_y);
      ++run;
      if (callback) {
        std::string line = stainkit::gan::epoch_report_to_json(report).dump();
        callback(line.c_str(), user_data);
      }
    }
  });
}

sk_status sk_gan_normalize(const sk_gan* gan, const sk_image* image, int to_x, sk_image** out) {
  return guarded([&] {
    require(gan && image && out, "null argument");
    auto direction = to_x ? stainkit::gan::Direction::to_x : stainkit::gan::Direction::to_y;
    *out = new sk_image{gan->gan.normalize(image->tile, direction)};
  });
}

sk_status sk_ssim(const sk_image* a, const sk_image* b, double* out) {
  return guarded([&] {
    require(a && b && out, "null argument");
    *out = stainkit::metrics::ssim(a->tile, b->tile);
  });
}

sk_status sk_fid_dirs(const char* encoder_spec_json, const char* dir_a, const char* dir_b,
                      char** result_json) {
  return guarded([&] {
    require(encoder_spec_json && dir_a && dir_b && result_json, "null argument");
    auto spec =
        stainkit::metrics::encoder_spec_from_json(parse_json(encoder_spec_json, "encoder spec"));
    auto result = stainkit::metrics::fid_between_sets(spec, load_dir(dir_a), load_dir(dir_b));
    json doc;
    doc["fid"] = result.value;
    doc["n_ref"] = result.count_a;
    doc["n_cand"] = result.count_b;
    doc["feature_dim"] = result.feature_dim;
    doc["rank_deficient"] = result.rank_deficient;
    *result_json = dup_string(doc.dump(2));
  });
}

sk_status sk_extract_tiles(const char* in_dir, const char* out_dir, int tile_px,
                           double overlap_fraction, double tissue_threshold,
                           const char* domain_label, int annotated, char** result_json) {
  return guarded([&] {
    require(in_dir && out_dir && result_json, "null argument");
    stainkit::tiling::TileSpec spec;
    spec.tile_px = tile_px;
    spec.overlap_fraction = overlap_fraction;
    spec.tissue_threshold = tissue_threshold;
    stainkit::tiling::validate(spec);
    std::vector<stainkit::tiling::SourceSpec> sources;
    for (const auto& path : list_pngs(in_dir)) {
      stainkit::tiling::SourceSpec source;
      source.path = path.string();
      source.source_id = path.stem().string();
      source.domain_label = domain_label ? domain_label : "";
      source.annotated = annotated != 0;
      sources.push_back(std::move(source));
    }
    auto result = stainkit::tiling::build_manifest(sources, spec, out_dir);
    json doc;
    doc["tiles"] = result.rows.size();
    doc["sources"] = sources.size();
    doc["failures"] = result.failures;
    doc["manifest"] = result.manifest_path;
    *result_json = dup_string(doc.dump(2));
  });
}

}  // extern "C"
