// stainkit command-line tool. Talks to the core exclusively through the C
// API in stainkit.h; everything here is argument plumbing, file walking and
// report assembly. Exit codes: 0 success, 1 partial data failure, 2
// configuration or fit failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "stainkit.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError {
  int exit_code;
  std::string error;
  std::string message;
};

const char* status_name(sk_status st) {
  switch (st) {
    case SK_OK: return "Ok";
    case SK_ERR_IO: return "IoError";
    case SK_ERR_INVALID_ARGUMENT: return "InvalidArgument";
    case SK_ERR_BAD_FORMAT: return "BadFormat";
    case SK_ERR_SHAPE_MISMATCH: return "ShapeMismatch";
    case SK_ERR_DIMENSION_MISMATCH: return "DimensionMismatch";
    case SK_ERR_WINDOW_TOO_LARGE: return "WindowTooLarge";
    case SK_ERR_DEGENERATE_TEMPLATE: return "DegenerateTemplate";
    case SK_ERR_DEGENERATE_INPUT: return "DegenerateInput";
    case SK_ERR_INSUFFICIENT_TISSUE: return "InsufficientTissue";
    case SK_ERR_NUMERICAL_FAILURE: return "NumericalFailure";
    case SK_ERR_TOO_FEW_SAMPLES: return "TooFewSamples";
    case SK_ERR_BAD_WEIGHTS: return "BadWeights";
    case SK_ERR_EPOCH_OUT_OF_RANGE: return "EpochOutOfRange";
    case SK_ERR_NON_FINITE_LOSS: return "NonFiniteLoss";
    case SK_ERR_SOURCE_TOO_SMALL: return "SourceTooSmall";
    default: return "UnknownError";
  }
}

void check(sk_status st, int exit_code = 2) {
  if (st != SK_OK) throw CliError{exit_code, status_name(st), sk_last_error()};
}

[[noreturn]] void bad_config(const std::string& message) {
  throw CliError{2, "InvalidArgument", message};
}

struct ImageDeleter {
  void operator()(sk_image* p) const { sk_image_free(p); }
};
struct ProfileDeleter {
  void operator()(sk_stain_profile* p) const { sk_profile_free(p); }
};
struct GanDeleter {
  void operator()(sk_gan* p) const { sk_gan_free(p); }
};
struct StringDeleter {
  void operator()(char* p) const { sk_string_free(p); }
};
using ImagePtr = std::unique_ptr<sk_image, ImageDeleter>;
using ProfilePtr = std::unique_ptr<sk_stain_profile, ProfileDeleter>;
using GanPtr = std::unique_ptr<sk_gan, GanDeleter>;
using CString = std::unique_ptr<char, StringDeleter>;

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream stream(path);
  if (!stream) throw CliError{2, "IoError", "cannot read " + path};
  try {
    json doc;
    stream >> doc;
    return doc;
  } catch (const json::exception& e) {
    throw CliError{2, "BadFormat", path + ": " + e.what()};
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream stream(path, std::ios::trunc | std::ios::binary);
  if (!stream) throw CliError{2, "IoError", "cannot write " + path};
  stream << text;
  if (!stream) throw CliError{2, "IoError", "write failed: " + path};
}

void write_json_file(const std::string& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

// Recursive, sorted by relative path for reproducible processing order.
std::vector<fs::path> list_pngs_recursive(const std::string& dir) {
  if (!fs::is_directory(dir)) throw CliError{2, "IoError", "not a directory: " + dir};
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream stream(line);
  while (std::getline(stream, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  int count = 0;
};

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  out.count = static_cast<int>(values.size());
  if (out.count == 0) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / out.count;
  if (out.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (out.count - 1));
  }
  return out;
}

// Bridges CLI options, an optional JSON config file and defaults with the
// precedence flags > config file > defaults. Unknown config keys reject.
class Binder {
public:
  template <typename T>
  void bind(CLI::Option* opt, const std::string& key, T* var) {
    Entry entry;
    entry.opt = opt;
    entry.set = [var, key](const json& v) {
      try {
        *var = v.get<T>();
      } catch (const json::exception&) {
        bad_config("config key '" + key + "' has the wrong type");
      }
    };
    entry.get = [var]() { return json(*var); };
    entries_[key] = std::move(entry);
  }

  // Whole JSON blocks without a CLI flag (model configuration sections).
  void bind_block(const std::string& key, json* var) {
    Entry entry;
    entry.opt = nullptr;
    entry.set = [var, key](const json& v) {
      if (!v.is_object()) bad_config("config key '" + key + "' must be an object");
      var->update(v);
    };
    entry.get = [var]() { return *var; };
    entries_[key] = std::move(entry);
  }

  void overlay(const json& cfg) {
    if (!cfg.is_object()) bad_config("config file must hold a JSON object");
    for (const auto& item : cfg.items()) {
      auto found = entries_.find(item.key());
      if (found == entries_.end()) bad_config("unknown config key '" + item.key() + "'");
      const Entry& entry = found->second;
      if (entry.opt && entry.opt->count() > 0) continue;  // flag wins
      entry.set(item.value());
    }
  }

  json resolved() const {
    json out = json::object();
    for (const auto& [key, entry] : entries_) out[key] = entry.get();
    return out;
  }

private:
  struct Entry {
    CLI::Option* opt = nullptr;
    std::function<void(const json&)> set;
    std::function<json()> get;
  };
  std::map<std::string, Entry> entries_;
};

struct GlobalOpts {
  std::uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
  std::string config_path;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* quiet_opt = nullptr;

  void bind_into(Binder& binder) {
    binder.bind(seed_opt, "seed", &seed);
    binder.bind(threads_opt, "threads", &threads);
    binder.bind(quiet_opt, "quiet", &quiet);
  }

  void finish(Binder& binder) const {
    if (!config_path.empty()) binder.overlay(read_json_file(config_path));
    if (threads < 1) bad_config("--threads must be at least 1");
  }

  void say(const std::string& line) const {
    if (!quiet) std::cout << line << "\n";
  }
};

// ---------------------------------------------------------------- fit ----

struct FitOpts {
  std::string method;
  std::string template_path;
  std::string out_path;
  Binder binder;
};

int run_fit(const GlobalOpts& g, FitOpts& o) {
  g.finish(o.binder);
  ImagePtr tmpl;
  {
    sk_image* raw = nullptr;
    check(sk_image_load_png(o.template_path.c_str(), &raw));
    tmpl.reset(raw);
  }
  ProfilePtr profile;
  {
    sk_stain_profile* raw = nullptr;
    check(sk_profile_fit(o.method.c_str(), tmpl.get(), &raw));
    profile.reset(raw);
  }
  check(sk_profile_save(profile.get(), o.out_path.c_str()));
  write_json_file(o.out_path + ".config.json", o.binder.resolved());
  g.say("fit " + o.method + ": wrote " + o.out_path);
  return 0;
}

// ---------------------------------------------------------- normalize ----

struct NormalizeOpts {
  std::string method;
  std::string model_path;
  std::string checkpoint_path;
  std::string in_dir;
  std::string out_dir;
  Binder binder;
};

int run_normalize(const GlobalOpts& g, NormalizeOpts& o) {
  g.finish(o.binder);
  bool use_gan = o.method == "gan";
  if (!use_gan && o.method != "reinhard" && o.method != "macenko" && o.method != "vahadane")
    bad_config("unknown method: " + o.method);
  if (use_gan && o.checkpoint_path.empty()) bad_config("--checkpoint required for method gan");
  if (!use_gan && o.model_path.empty()) bad_config("--model required for method " + o.method);

  ProfilePtr profile;
  GanPtr gan;
  if (use_gan) {
    sk_gan* raw = nullptr;
    check(sk_gan_load(o.checkpoint_path.c_str(), &raw));
    gan.reset(raw);
  } else {
    sk_stain_profile* raw = nullptr;
    check(sk_profile_load(o.model_path.c_str(), &raw));
    profile.reset(raw);
    if (o.method != sk_profile_method(profile.get()))
      bad_config(std::string("profile method is ") + sk_profile_method(profile.get()) +
                 ", not " + o.method);
  }

  fs::create_directories(o.out_dir);
  auto inputs = list_pngs_recursive(o.in_dir);
  json failures = json::array();
  int ok = 0;
  for (const auto& path : inputs) {
    fs::path rel = fs::relative(path, o.in_dir);
    fs::path dest = fs::path(o.out_dir) / rel;
    sk_image* in_raw = nullptr;
    sk_status st = sk_image_load_png(path.string().c_str(), &in_raw);
    ImagePtr in(in_raw);
    sk_image* out_raw = nullptr;
    if (st == SK_OK) {
      // GAN direction: toward domain X, the trained reference appearance.
      st = use_gan ? sk_gan_normalize(gan.get(), in.get(), 1, &out_raw)
                   : sk_profile_normalize(profile.get(), in.get(), &out_raw);
    }
    ImagePtr out(out_raw);
    if (st == SK_OK) {
      fs::create_directories(dest.parent_path());
      st = sk_image_save_png(out.get(), dest.string().c_str());
    }
    if (st == SK_OK) {
      ++ok;
    } else {
      failures.push_back(
          {{"path", rel.generic_string()}, {"error", status_name(st)}, {"message", sk_last_error()}});
    }
  }

  json summary;
  summary["kind"] = "normalize_summary";
  summary["method"] = o.method;
  summary["inputs"] = inputs.size();
  summary["succeeded"] = ok;
  summary["failed"] = failures.size();
  summary["failures"] = failures;
  write_json_file((fs::path(o.out_dir) / "summary.json").string(), summary);
  write_json_file((fs::path(o.out_dir) / "resolved_config.json").string(), o.binder.resolved());
  g.say("normalize " + o.method + ": " + std::to_string(ok) + " ok, " +
        std::to_string(failures.size()) + " failed");
  return failures.empty() ? 0 : 1;
}

// -------------------------------------------------------------- train ----

struct TrainOpts {
  std::string data_x;
  std::string data_y;
  std::string out_path;
  int epochs = 0;
  int batch_size = 0;
  bool resume = false;
  json generator = json::object();
  json discriminator = json::object();
  json train_block = json::object();
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  Binder binder;
};

struct EpochSink {
  std::ofstream log;
  bool quiet = false;
};

void on_epoch_line(const char* line, void* user_data) {
  auto* sink = static_cast<EpochSink*>(user_data);
  sink->log << line << "\n";
  sink->log.flush();
  if (!sink->quiet) std::cout << line << "\n";
}

int run_train(const GlobalOpts& g, TrainOpts& o) {
  // Seed the block defaults before the config file overlays them.
  {
    CString defaults(sk_gan_default_config());
    json base = json::parse(defaults.get());
    o.generator = base["generator"];
    o.discriminator = base["discriminator"];
    o.train_block = base["train"];
  }
  g.finish(o.binder);

  GanPtr gan;
  // The schedule always comes from the train block (or the checkpoint);
  // --epochs only caps how many epochs this invocation runs.
  if (o.epochs_opt->count() > 0 && o.epochs < 1) {
    throw CliError{2, "InvalidArgument", "--epochs must be at least 1"};
  }
  int cap = o.epochs_opt->count() > 0 ? o.epochs : 0;
  if (o.resume) {
    if (o.batch_opt->count() > 0) {
      throw CliError{2, "InvalidArgument", "batch size is fixed in the checkpoint"};
    }
    sk_gan* raw = nullptr;
    check(sk_gan_load(o.out_path.c_str(), &raw));
    gan.reset(raw);
  } else {
    if (o.batch_opt->count() > 0) o.train_block["batch_size"] = o.batch_size;
    if (g.seed_opt->count() > 0) o.train_block["rng_seed"] = g.seed;
    json cfg;
    cfg["generator"] = o.generator;
    cfg["discriminator"] = o.discriminator;
    cfg["train"] = o.train_block;
    sk_gan* raw = nullptr;
    check(sk_gan_create(cfg.dump().c_str(), &raw));
    gan.reset(raw);
  }

  EpochSink sink;
  sink.quiet = g.quiet;
  std::string log_path = o.out_path + ".log.jsonl";
  sink.log.open(log_path, o.resume ? std::ios::app : std::ios::trunc);
  if (!sink.log) throw CliError{2, "IoError", "cannot write " + log_path};

  check(sk_gan_train_dirs(gan.get(), o.data_x.c_str(), o.data_y.c_str(), cap, on_epoch_line,
                          &sink));
  check(sk_gan_save(gan.get(), o.out_path.c_str()));

  json resolved = o.binder.resolved();
  {
    CString actual(sk_gan_config_json(gan.get()));
    json doc = json::parse(actual.get());
    resolved["generator"] = doc["generator"];
    resolved["discriminator"] = doc["discriminator"];
    resolved["train"] = doc["train"];
  }
  write_json_file(o.out_path + ".config.json", resolved);
  g.say("train: checkpoint at epoch " + std::to_string(sk_gan_epoch(gan.get())) + " -> " +
        o.out_path);
  return 0;
}

// ---------------------------------------------------------------- eval ----

struct EvalSsimOpts {
  std::string pairs_path;
  std::string out_prefix = "ssim_eval";
  std::string label = "unlabeled";
  Binder binder;
};

int run_eval_ssim(const GlobalOpts& g, EvalSsimOpts& o) {
  g.finish(o.binder);
  std::ifstream stream(o.pairs_path);
  if (!stream) throw CliError{2, "IoError", "cannot read " + o.pairs_path};
  std::string line;
  if (!std::getline(stream, line)) throw CliError{2, "BadFormat", "empty pairs file"};
  auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw CliError{2, "BadFormat", "pairs file lacks column '" + name + "'"};
    return static_cast<int>(it - header.begin());
  };
  int col_a = col("a");
  int col_b = col("b");

  std::vector<double> values;
  std::string rows = "label,a,b,ssim\n";
  while (std::getline(stream, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) <= std::max(col_a, col_b))
      throw CliError{2, "BadFormat", "short row in " + o.pairs_path};
    ImagePtr a, b;
    {
      sk_image* raw = nullptr;
      check(sk_image_load_png(fields[col_a].c_str(), &raw));
      a.reset(raw);
      raw = nullptr;
      check(sk_image_load_png(fields[col_b].c_str(), &raw));
      b.reset(raw);
    }
    double value = 0.0;
    check(sk_ssim(a.get(), b.get(), &value));
    values.push_back(value);
    rows += o.label + "," + fields[col_a] + "," + fields[col_b] + "," + fmt6(value) + "\n";
  }

  MeanStd stats = mean_std(values);
  json summary;
  summary["kind"] = "ssim_summary";
  summary["label"] = o.label;
  summary["count"] = stats.count;
  summary["mean"] = stats.mean;
  summary["std"] = stats.std;
  write_text_file(o.out_prefix + ".csv", rows);
  write_json_file(o.out_prefix + ".json", summary);
  write_json_file(o.out_prefix + ".config.json", o.binder.resolved());
  g.say("eval ssim [" + o.label + "]: " + fmt6(stats.mean) + " +/- " + fmt6(stats.std) + " (n=" +
        std::to_string(stats.count) + ")");
  return 0;
}

struct EvalFidOpts {
  std::string ref_dir;
  std::string cand_dir;
  std::string encoder_path;
  std::string out_path = "fid_eval.json";
  std::string label = "unlabeled";
  Binder binder;
};

int run_eval_fid(const GlobalOpts& g, EvalFidOpts& o) {
  g.finish(o.binder);
  json spec;
  if (o.encoder_path.empty()) {
    spec = {{"kind", "seeded_random"}, {"feature_dim", 64}, {"seed", g.seed}};
  } else {
    spec = read_json_file(o.encoder_path);
  }
  CString result;
  {
    char* raw = nullptr;
    check(sk_fid_dirs(spec.dump().c_str(), o.ref_dir.c_str(), o.cand_dir.c_str(), &raw));
    result.reset(raw);
  }
  json doc = json::parse(result.get());
  doc["kind"] = "fid_summary";
  doc["label"] = o.label;
  write_json_file(o.out_path, doc);
  json resolved = o.binder.resolved();
  resolved["encoder_spec"] = spec;
  write_json_file(o.out_path + ".config.json", resolved);
  g.say("eval fid [" + o.label + "]: " + fmt6(doc["fid"].get<double>()) + " (n_ref=" +
        std::to_string(doc["n_ref"].get<int>()) + ", n_cand=" +
        std::to_string(doc["n_cand"].get<int>()) + ")");
  return 0;
}

// --------------------------------------------------------------- tiles ----

struct TilesOpts {
  std::string in_dir;
  std::string out_dir;
  int tile = 256;
  double overlap = 0.25;
  double tissue = 0.5;
  std::string label;
  bool annotated = false;
  Binder binder;
};

int run_tiles(const GlobalOpts& g, TilesOpts& o) {
  g.finish(o.binder);
  CString result;
  {
    char* raw = nullptr;
    check(sk_extract_tiles(o.in_dir.c_str(), o.out_dir.c_str(), o.tile, o.overlap, o.tissue,
                           o.label.c_str(), o.annotated ? 1 : 0, &raw));
    result.reset(raw);
  }
  json doc = json::parse(result.get());
  doc["kind"] = "tiles_summary";
  write_json_file((fs::path(o.out_dir) / "tiles_summary.json").string(), doc);
  write_json_file((fs::path(o.out_dir) / "resolved_config.json").string(), o.binder.resolved());
  g.say("tiles: " + std::to_string(doc["tiles"].get<long long>()) + " tiles from " +
        std::to_string(doc["sources"].get<long long>()) + " sources");
  return doc["failures"].empty() ? 0 : 1;
}

// -------------------------------------------------------------- report ----

struct ReportRow {
  std::optional<MeanStd> ssim;
  std::optional<double> fid;
  std::optional<MeanStd> domain_accuracy;
  std::optional<MeanStd> tumor_accuracy;
};

struct ReportOpts {
  std::vector<std::string> inputs;
  std::string out_dir = ".";
  std::string baseline = "unnormalized";
  Binder binder;
};

MeanStd parse_mean_std(const json& doc, const std::string& context) {
  try {
    MeanStd out;
    out.mean = doc.at("mean").get<double>();
    out.std = doc.at("std").get<double>();
    out.count = doc.value("count", 0);
    return out;
  } catch (const json::exception& e) {
    throw CliError{2, "BadFormat", context + ": " + e.what()};
  }
}

void absorb_json(std::map<std::string, ReportRow>& rows, const json& doc,
                 const std::string& path) {
  std::string kind = doc.value("kind", "");
  std::string label = doc.value("label", "");
  if (label.empty()) throw CliError{2, "BadFormat", path + ": missing label"};
  ReportRow& row = rows[label];
  if (kind == "ssim_summary") {
    row.ssim = parse_mean_std(doc, path);
  } else if (kind == "fid_summary") {
    if (!doc.contains("fid") || !doc["fid"].is_number())
      throw CliError{2, "BadFormat", path + ": missing fid"};
    row.fid = doc["fid"].get<double>();
  } else if (kind == "classifier_summary") {
    if (doc.contains("domain_accuracy"))
      row.domain_accuracy = parse_mean_std(doc["domain_accuracy"], path);
    if (doc.contains("tumor_accuracy"))
      row.tumor_accuracy = parse_mean_std(doc["tumor_accuracy"], path);
  } else {
    throw CliError{2, "BadFormat", path + ": unknown kind '" + kind + "'"};
  }
}

void absorb_csv(std::map<std::string, ReportRow>& rows, const std::string& path) {
  std::ifstream stream(path);
  if (!stream) throw CliError{2, "IoError", "cannot read " + path};
  std::string line;
  if (!std::getline(stream, line)) throw CliError{2, "BadFormat", path + ": empty"};
  auto header = split_csv_line(line);
  auto find = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  int col_label = find("label");
  int col_ssim = find("ssim");
  if (col_label < 0 || col_ssim < 0)
    throw CliError{2, "BadFormat", path + ": need 'label' and 'ssim' columns"};
  std::map<std::string, std::vector<double>> groups;
  while (std::getline(stream, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) <= std::max(col_label, col_ssim))
      throw CliError{2, "BadFormat", path + ": short row"};
    try {
      groups[fields[col_label]].push_back(std::stod(fields[col_ssim]));
    } catch (const std::exception&) {
      throw CliError{2, "BadFormat", path + ": bad ssim value '" + fields[col_ssim] + "'"};
    }
  }
  for (const auto& [label, values] : groups) rows[label].ssim = mean_std(values);
}

int run_report(const GlobalOpts& g, ReportOpts& o) {
  g.finish(o.binder);
  std::map<std::string, ReportRow> rows;
  for (const auto& path : o.inputs) {
    std::string ext = fs::path(path).extension().string();
    if (ext == ".json") {
      absorb_json(rows, read_json_file(path), path);
    } else if (ext == ".csv") {
      absorb_csv(rows, path);
    } else {
      throw CliError{2, "BadFormat", path + ": expected .json or .csv"};
    }
  }
  if (rows.empty()) throw CliError{2, "BadFormat", "no usable report inputs"};

  // Sustained performance: the method's mu +/- sigma band overlaps with or
  // exceeds the baseline's, i.e. mu + sigma >= mu0 - sigma0.
  std::optional<MeanStd> baseline;
  auto base_it = rows.find(o.baseline);
  if (base_it != rows.end() && base_it->second.tumor_accuracy)
    baseline = base_it->second.tumor_accuracy;

  auto cell = [](const std::optional<double>& v) { return v ? fmt6(*v) : std::string("n/a"); };
  std::string table_csv =
      "label,ssim_mean,ssim_std,fid,domain_accuracy_mean,domain_accuracy_std,"
      "tumor_accuracy_mean,tumor_accuracy_std,sustained\n";
  std::string table_md =
      "| label | ssim | fid | domain accuracy | tumor accuracy | sustained |\n"
      "|---|---|---|---|---|---|\n";
  std::string scatter_csv = "label,ssim_mean,fid,domain_accuracy_mean,tumor_accuracy_mean\n";
  auto pm = [&](const std::optional<MeanStd>& v) {
    return v ? fmt6(v->mean) + " \xc2\xb1 " + fmt6(v->std) : std::string("n/a");
  };
  for (const auto& [label, row] : rows) {
    std::string sustained = "n/a";
    if (baseline && row.tumor_accuracy) {
      bool ok = row.tumor_accuracy->mean + row.tumor_accuracy->std >=
                baseline->mean - baseline->std;
      sustained = ok ? "yes" : "no";
    }
    auto ms = [&](const std::optional<MeanStd>& v, bool stddev) -> std::string {
      if (!v) return "n/a";
      return fmt6(stddev ? v->std : v->mean);
    };
    table_csv += label + "," + ms(row.ssim, false) + "," + ms(row.ssim, true) + "," +
                 cell(row.fid) + "," + ms(row.domain_accuracy, false) + "," +
                 ms(row.domain_accuracy, true) + "," + ms(row.tumor_accuracy, false) + "," +
                 ms(row.tumor_accuracy, true) + "," + sustained + "\n";
    table_md += "| " + label + " | " + pm(row.ssim) + " | " + cell(row.fid) + " | " +
                pm(row.domain_accuracy) + " | " + pm(row.tumor_accuracy) + " | " + sustained +
                " |\n";
    scatter_csv += label + "," + ms(row.ssim, false) + "," + cell(row.fid) + "," +
                   ms(row.domain_accuracy, false) + "," + ms(row.tumor_accuracy, false) + "\n";
  }

  fs::create_directories(o.out_dir);
  write_text_file((fs::path(o.out_dir) / "table.csv").string(), table_csv);
  write_text_file((fs::path(o.out_dir) / "table.md").string(), table_md);
  write_text_file((fs::path(o.out_dir) / "scatter.csv").string(), scatter_csv);
  write_json_file((fs::path(o.out_dir) / "resolved_config.json").string(), o.binder.resolved());
  g.say("report: " + std::to_string(rows.size()) + " rows -> " + o.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stainkit: histopathology stain normalization toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sk_version());

  GlobalOpts g;
  g.seed_opt = app.add_option("--seed", g.seed, "global RNG seed");
  g.threads_opt = app.add_option("--threads", g.threads, "worker threads (never affects results)");
  g.quiet_opt = app.add_flag("--quiet", g.quiet, "suppress progress lines");
  app.add_option("--config", g.config_path, "JSON config file (flags take precedence)");

  FitOpts fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit a classical normalization profile");
  fit_cmd->fallthrough();
  fit.binder.bind(fit_cmd->add_option("--method", fit.method, "reinhard|macenko|vahadane")
                      ->required()
                      ->check(CLI::IsMember({"reinhard", "macenko", "vahadane"})),
                  "method", &fit.method);
  fit.binder.bind(fit_cmd->add_option("--template", fit.template_path, "template PNG")->required(),
                  "template", &fit.template_path);
  fit.binder.bind(fit_cmd->add_option("--out", fit.out_path, "profile JSON path")->required(),
                  "out", &fit.out_path);
  g.bind_into(fit.binder);

  NormalizeOpts norm;
  auto* norm_cmd = app.add_subcommand("normalize", "normalize a directory of PNG tiles");
  norm_cmd->fallthrough();
  norm.binder.bind(
      norm_cmd->add_option("--method", norm.method, "reinhard|macenko|vahadane|gan")->required(),
      "method", &norm.method);
  norm.binder.bind(norm_cmd->add_option("--model", norm.model_path, "profile JSON from fit"),
                   "model", &norm.model_path);
  norm.binder.bind(
      norm_cmd->add_option("--checkpoint", norm.checkpoint_path, "GAN checkpoint from train"),
      "checkpoint", &norm.checkpoint_path);
  norm.binder.bind(norm_cmd->add_option("--in", norm.in_dir, "input directory")->required(), "in",
                   &norm.in_dir);
  norm.binder.bind(norm_cmd->add_option("--out", norm.out_dir, "output directory")->required(),
                   "out", &norm.out_dir);
  g.bind_into(norm.binder);

  TrainOpts train;
  auto* train_cmd = app.add_subcommand("train", "train the MultiStain-CycleGAN");
  train_cmd->fallthrough();
  train.binder.bind(train_cmd->add_option("--data-x", train.data_x, "domain X tiles")->required(),
                    "data-x", &train.data_x);
  train.binder.bind(train_cmd->add_option("--data-y", train.data_y, "domain Y tiles")->required(),
                    "data-y", &train.data_y);
  train.binder.bind(train_cmd->add_option("--out", train.out_path, "checkpoint path")->required(),
                    "out", &train.out_path);
  train.epochs_opt = train_cmd->add_option(
      "--epochs", train.epochs, "epochs to run this invocation (default: up to total_epochs)");
  train.batch_opt = train_cmd->add_option("--batch-size", train.batch_size, "tiles per step");
  train.binder.bind(train.batch_opt, "batch-size", &train.batch_size);
  train.binder.bind(train_cmd->add_flag("--resume", train.resume, "continue from --out"),
                    "resume", &train.resume);
  train.binder.bind_block("generator", &train.generator);
  train.binder.bind_block("discriminator", &train.discriminator);
  train.binder.bind_block("train", &train.train_block);
  g.bind_into(train.binder);

  auto* eval_cmd = app.add_subcommand("eval", "compute metrics");
  eval_cmd->require_subcommand(1);
  eval_cmd->fallthrough();

  EvalSsimOpts essim;
  auto* essim_cmd = eval_cmd->add_subcommand("ssim", "SSIM over a pairs manifest");
  essim_cmd->fallthrough();
  essim.binder.bind(
      essim_cmd->add_option("--pairs", essim.pairs_path, "CSV with columns a,b")->required(),
      "pairs", &essim.pairs_path);
  essim.binder.bind(essim_cmd->add_option("--out", essim.out_prefix, "output prefix"), "out",
                    &essim.out_prefix);
  essim.binder.bind(essim_cmd->add_option("--label", essim.label, "row label for report"),
                    "label", &essim.label);
  g.bind_into(essim.binder);

  EvalFidOpts efid;
  auto* efid_cmd = eval_cmd->add_subcommand("fid", "FID between two directories");
  efid_cmd->fallthrough();
  efid.binder.bind(efid_cmd->add_option("--ref", efid.ref_dir, "reference tiles")->required(),
                   "ref", &efid.ref_dir);
  efid.binder.bind(efid_cmd->add_option("--cand", efid.cand_dir, "candidate tiles")->required(),
                   "cand", &efid.cand_dir);
  efid.binder.bind(efid_cmd->add_option("--encoder", efid.encoder_path, "encoder spec JSON"),
                   "encoder", &efid.encoder_path);
  efid.binder.bind(efid_cmd->add_option("--out", efid.out_path, "output JSON path"), "out",
                   &efid.out_path);
  efid.binder.bind(efid_cmd->add_option("--label", efid.label, "row label for report"), "label",
                   &efid.label);
  g.bind_into(efid.binder);

  TilesOpts tiles;
  auto* tiles_cmd = app.add_subcommand("tiles", "extract tiles from source images");
  tiles_cmd->fallthrough();
  tiles.binder.bind(tiles_cmd->add_option("--in", tiles.in_dir, "source PNG directory")->required(),
                    "in", &tiles.in_dir);
  tiles.binder.bind(tiles_cmd->add_option("--out", tiles.out_dir, "tile output directory")->required(),
                    "out", &tiles.out_dir);
  tiles.binder.bind(tiles_cmd->add_option("--tile", tiles.tile, "tile edge in pixels"), "tile",
                    &tiles.tile);
  tiles.binder.bind(tiles_cmd->add_option("--overlap", tiles.overlap, "overlap fraction [0,1)"),
                    "overlap", &tiles.overlap);
  tiles.binder.bind(tiles_cmd->add_option("--tissue", tiles.tissue, "minimum tissue fraction"),
                    "tissue", &tiles.tissue);
  tiles.binder.bind(tiles_cmd->add_option("--label", tiles.label, "domain label for the manifest"),
                    "label", &tiles.label);
  tiles.binder.bind(tiles_cmd->add_flag("--annotated", tiles.annotated, "mark tiles annotated"),
                    "annotated", &tiles.annotated);
  g.bind_into(tiles.binder);

  ReportOpts report;
  auto* report_cmd = app.add_subcommand("report", "assemble a results table");
  report_cmd->fallthrough();
  report.binder.bind(
      report_cmd->add_option("inputs", report.inputs, "eval outputs (.json/.csv)")->required(),
      "inputs", &report.inputs);
  report.binder.bind(report_cmd->add_option("--out", report.out_dir, "output directory"), "out",
                     &report.out_dir);
  report.binder.bind(
      report_cmd->add_option("--baseline", report.baseline, "label of the unnormalized row"),
      "baseline", &report.baseline);
  g.bind_into(report.binder);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "InvalidArgument"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (*fit_cmd) return run_fit(g, fit);
    if (*norm_cmd) return run_normalize(g, norm);
    if (*train_cmd) return run_train(g, train);
    if (*essim_cmd) return run_eval_ssim(g, essim);
    if (*efid_cmd) return run_eval_fid(g, efid);
    if (*tiles_cmd) return run_tiles(g, tiles);
    if (*report_cmd) return run_report(g, report);
  } catch (const CliError& e) {
    std::cerr << json{{"error", e.error}, {"message", e.message}}.dump() << "\n";
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "UnknownError"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
  return 2;
}
