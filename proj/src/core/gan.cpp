#include "core/gan.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "core/autodiff.hpp"
#include "core/container.hpp"
#include "core/convert.hpp"
#include "core/error.hpp"

namespace stainkit::gan {

namespace {

using nlohmann::json;

// Tags deriving independent seed streams from the one configured seed.
constexpr std::uint64_t kStreamJitterX = 1;
constexpr std::uint64_t kStreamJitterY = 2;
constexpr std::uint64_t kStreamTrain = 3;
constexpr std::uint64_t kStreamBufferX = 4;
constexpr std::uint64_t kStreamBufferY = 5;

double mean_square_minus(const Tensor& t, double target) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double d = t[i] - target;
    s += d * d;
  }
  return s / static_cast<double>(t.size());
}

double mean_abs_between(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, "loss inputs differ in shape");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

void require_finite(double value, const char* term) {
  if (!std::isfinite(value)) {
    fail(ErrorCode::NonFiniteLoss, std::string("loss term diverged: ") + term);
  }
}

std::vector<ad::Var> vars_of(const std::vector<nn::NamedVar>& named) {
  std::vector<ad::Var> out;
  out.reserve(named.size());
  for (const auto& nv : named) out.push_back(nv.var);
  return out;
}

// Routes a batch of fakes through the buffer one image at a time.
Tensor submit_batch(ImageBuffer& buffer, const Tensor& fakes) {
  const auto& s = fakes.shape();
  int b = s[0];
  std::size_t per = fakes.size() / static_cast<std::size_t>(b);
  Tensor out(s);
  for (int i = 0; i < b; ++i) {
    Tensor single({1, s[1], s[2], s[3]});
    std::copy(fakes.data() + static_cast<std::size_t>(i) * per,
              fakes.data() + static_cast<std::size_t>(i + 1) * per, single.data());
    Tensor got = buffer.submit(single);
    std::copy(got.data(), got.data() + per, out.data() + static_cast<std::size_t>(i) * per);
  }
  return out;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.lambda_cyc <= 0.0 || cfg.lambda_idt <= 0.0 || cfg.learning_rate <= 0.0 ||
      cfg.d_loss_threshold <= 0.0) {
    fail(ErrorCode::InvalidArgument, "loss weights, learning rate and threshold must be > 0");
  }
  if (cfg.total_epochs < 1 || cfg.decay_epochs < 0 || cfg.decay_epochs > cfg.total_epochs) {
    fail(ErrorCode::InvalidArgument, "need 0 <= decay_epochs <= total_epochs and total >= 1");
  }
  if (cfg.buffer_size < 1) fail(ErrorCode::InvalidArgument, "buffer_size must be >= 1");
  if (cfg.batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.total_epochs) {
    fail(ErrorCode::EpochOutOfRange, "epoch outside [0, total_epochs)");
  }
  int constant = cfg.total_epochs - cfg.decay_epochs;
  if (epoch < constant) return cfg.learning_rate;
  double frac = static_cast<double>(epoch - constant + 1) / static_cast<double>(cfg.decay_epochs + 1);
  return cfg.learning_rate * (1.0 - frac);
}

double lsgan_loss_d(const Tensor& scores_real, const Tensor& scores_fake) {
  return 0.5 * mean_square_minus(scores_real, 1.0) + 0.5 * mean_square_minus(scores_fake, 0.0);
}

double lsgan_loss_g(const Tensor& scores_fake) {
  return mean_square_minus(scores_fake, 1.0);
}

double cycle_loss(const Tensor& x, const Tensor& rec_x, const Tensor& y, const Tensor& rec_y) {
  return mean_abs_between(rec_x, x) + mean_abs_between(rec_y, y);
}

double identity_loss_legacy(const Tensor& g_of_y, const Tensor& y, const Tensor& f_of_x,
                            const Tensor& x) {
  return mean_abs_between(g_of_y, y) + mean_abs_between(f_of_x, x);
}

double idt_rec_loss(const Tensor& g_of_yprime, const Tensor& y, const Tensor& f_of_xprime,
                    const Tensor& x) {
  return mean_abs_between(g_of_yprime, y) + mean_abs_between(f_of_xprime, x);
}

double total_objective(double adv_g, double adv_f, double cyc, double idt_rec,
                       double lambda_cyc, double lambda_idt) {
  return adv_g + adv_f + lambda_cyc * cyc + lambda_idt * idt_rec;
}

json generator_config_to_json(const nn::GeneratorConfig& cfg) {
  return json{{"depth", cfg.depth},
              {"innermost_filters", cfg.innermost_filters},
              {"input_size", cfg.input_size},
              {"leaky_slope", cfg.leaky_slope},
              {"in_channels", cfg.in_channels},
              {"out_channels", cfg.out_channels}};
}

nn::GeneratorConfig generator_config_from_json(const json& doc) {
  try {
    nn::GeneratorConfig cfg;
    cfg.depth = doc.at("depth").get<int>();
    cfg.innermost_filters = doc.at("innermost_filters").get<int>();
    cfg.input_size = doc.at("input_size").get<int>();
    cfg.leaky_slope = doc.at("leaky_slope").get<double>();
    cfg.in_channels = doc.at("in_channels").get<int>();
    cfg.out_channels = doc.at("out_channels").get<int>();
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("generator config: ") + e.what());
  }
}

json discriminator_config_to_json(const nn::DiscriminatorConfig& cfg) {
  return json{{"blocks", cfg.blocks},
              {"base_filters", cfg.base_filters},
              {"power_iterations", cfg.power_iterations},
              {"leaky_slope", cfg.leaky_slope},
              {"in_channels", cfg.in_channels}};
}

nn::DiscriminatorConfig discriminator_config_from_json(const json& doc) {
  try {
    nn::DiscriminatorConfig cfg;
    cfg.blocks = doc.at("blocks").get<int>();
    cfg.base_filters = doc.at("base_filters").get<int>();
    cfg.power_iterations = doc.at("power_iterations").get<int>();
    cfg.leaky_slope = doc.at("leaky_slope").get<double>();
    cfg.in_channels = doc.at("in_channels").get<int>();
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("discriminator config: ") + e.what());
  }
}

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"lambda_cyc", cfg.lambda_cyc},
              {"lambda_idt", cfg.lambda_idt},
              {"learning_rate", cfg.learning_rate},
              {"total_epochs", cfg.total_epochs},
              {"decay_epochs", cfg.decay_epochs},
              {"buffer_size", cfg.buffer_size},
              {"d_loss_threshold", cfg.d_loss_threshold},
              {"jitter",
               {{"brightness", cfg.jitter.brightness},
                {"contrast", cfg.jitter.contrast},
                {"saturation", cfg.jitter.saturation},
                {"hue", cfg.jitter.hue}}},
              {"batch_size", cfg.batch_size},
              {"rng_seed", cfg.rng_seed}};
}

TrainConfig train_config_from_json(const json& doc) {
  try {
    TrainConfig cfg;
    cfg.lambda_cyc = doc.at("lambda_cyc").get<double>();
    cfg.lambda_idt = doc.at("lambda_idt").get<double>();
    cfg.learning_rate = doc.at("learning_rate").get<double>();
    cfg.total_epochs = doc.at("total_epochs").get<int>();
    cfg.decay_epochs = doc.at("decay_epochs").get<int>();
    cfg.buffer_size = doc.at("buffer_size").get<int>();
    cfg.d_loss_threshold = doc.at("d_loss_threshold").get<double>();
    const json& j = doc.at("jitter");
    cfg.jitter.brightness = j.at("brightness").get<double>();
    cfg.jitter.contrast = j.at("contrast").get<double>();
    cfg.jitter.saturation = j.at("saturation").get<double>();
    cfg.jitter.hue = j.at("hue").get<double>();
    cfg.batch_size = doc.at("batch_size").get<int>();
    cfg.rng_seed = doc.at("rng_seed").get<std::uint64_t>();
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("train config: ") + e.what());
  }
}

json epoch_report_to_json(const EpochReport& r) {
  return json{{"epoch", r.epoch},
              {"steps", r.steps},
              {"lr", r.lr},
              {"adv_xy", r.adv_xy},
              {"adv_yx", r.adv_yx},
              {"cycle", r.cycle},
              {"idt_rec", r.idt_rec},
              {"g_total", r.g_total},
              {"d_x", r.d_x},
              {"d_y", r.d_y},
              {"d_x_updates", r.d_x_updates},
              {"d_y_updates", r.d_y_updates}};
}

ImageBuffer::ImageBuffer(int capacity, std::uint64_t seed) : rng_(seed), capacity_(capacity) {
  if (capacity < 1) fail(ErrorCode::InvalidArgument, "buffer capacity must be >= 1");
  stored_.reserve(static_cast<std::size_t>(capacity));
}

Tensor ImageBuffer::submit(const Tensor& fresh) {
  if (static_cast<int>(stored_.size()) < capacity_) {
    stored_.push_back(fresh);
    return fresh;
  }
  if (rng::uniform01(rng_) < 0.5) {
    std::size_t idx = rng::uniform_index(rng_, stored_.size());
    Tensor out = std::move(stored_[idx]);
    stored_[idx] = fresh;
    return out;
  }
  return fresh;
}

MsGan::MsGan(nn::GeneratorConfig gcfg, nn::DiscriminatorConfig dcfg, TrainConfig tcfg)
    : gen_cfg_(gcfg), disc_cfg_(dcfg), train_cfg_(tcfg) {
  validate(tcfg);
  rng::Engine init(tcfg.rng_seed);
  g_xy = nn::UNetGenerator(gcfg, init);
  f_yx = nn::UNetGenerator(gcfg, init);
  d_x = nn::PatchDiscriminator(dcfg, init);
  d_y = nn::PatchDiscriminator(dcfg, init);
  // Align u, v with the weights right away so sigma is a true norm estimate
  // even for the first generator-side discriminator forwards.
  d_x.power_iterate_all();
  d_y.power_iterate_all();
  buffer_x = ImageBuffer(tcfg.buffer_size, rng::mix(tcfg.rng_seed, kStreamBufferX));
  buffer_y = ImageBuffer(tcfg.buffer_size, rng::mix(tcfg.rng_seed, kStreamBufferY));
  train_rng_ = rng::Engine(rng::mix(tcfg.rng_seed, kStreamTrain));
  std::vector<nn::NamedVar> gp, dxp, dyp;
  std::vector<nn::NamedTensor> state;
  collect_all(gp, dxp, dyp, state);
  opt_g = nn::Adam(vars_of(gp));
  opt_dx = nn::Adam(vars_of(dxp));
  opt_dy = nn::Adam(vars_of(dyp));
}

void MsGan::collect_all(std::vector<nn::NamedVar>& g_params, std::vector<nn::NamedVar>& dx_params,
                        std::vector<nn::NamedVar>& dy_params,
                        std::vector<nn::NamedTensor>& state) {
  g_xy.collect("g_xy", g_params);
  f_yx.collect("f_yx", g_params);
  d_x.collect("d_x", dx_params, state);
  d_y.collect("d_y", dy_params, state);
}

StepReport MsGan::train_step(const std::vector<ImageTile>& batch_x,
                             const std::vector<ImageTile>& batch_y,
                             const std::vector<long long>& index_x,
                             const std::vector<long long>& index_y) {
  if (batch_x.empty() || batch_y.empty() || batch_x.size() != index_x.size() ||
      batch_y.size() != index_y.size()) {
    fail(ErrorCode::InvalidArgument, "train_step: batches must be non-empty and indexed");
  }
  double lr = lr_at_epoch(train_cfg_, epoch_);

  std::uint64_t jx_seed = rng::mix(train_cfg_.rng_seed, kStreamJitterX);
  std::uint64_t jy_seed = rng::mix(train_cfg_.rng_seed, kStreamJitterY);
  std::vector<ImageTile> wx, wy, xp, yp;
  for (std::size_t i = 0; i < batch_x.size(); ++i) {
    std::uint64_t seed = rng::mix(jx_seed, static_cast<std::uint64_t>(epoch_),
                                  static_cast<std::uint64_t>(index_x[i]));
    wx.push_back(augment_gray(batch_x[i], train_cfg_.jitter, seed));
    xp.push_back(to_grayscale3(batch_x[i]));
  }
  for (std::size_t i = 0; i < batch_y.size(); ++i) {
    std::uint64_t seed = rng::mix(jy_seed, static_cast<std::uint64_t>(epoch_),
                                  static_cast<std::uint64_t>(index_y[i]));
    wy.push_back(augment_gray(batch_y[i], train_cfg_.jitter, seed));
    yp.push_back(to_grayscale3(batch_y[i]));
  }

  ad::Var x_real = ad::leaf(stack_tiles(batch_x));
  ad::Var y_real = ad::leaf(stack_tiles(batch_y));
  ad::Var x_gray = ad::leaf(stack_tiles(xp));
  ad::Var y_gray = ad::leaf(stack_tiles(yp));
  ad::Var w_x = ad::leaf(stack_tiles(wx));
  ad::Var w_y = ad::leaf(stack_tiles(wy));

  opt_g.zero_grad();
  opt_dx.zero_grad();
  opt_dy.zero_grad();

  ad::Var fake_y = g_xy.forward(w_x);
  ad::Var fake_x = f_yx.forward(w_y);
  ad::Var rec_x = f_yx.forward(ad::luma_gray3(fake_y));
  ad::Var rec_y = g_xy.forward(ad::luma_gray3(fake_x));
  ad::Var idt_y = g_xy.forward(y_gray);
  ad::Var idt_x = f_yx.forward(x_gray);

  ad::Var adv_xy = ad::mean_square_to(d_y.forward(fake_y), 1.0);
  ad::Var adv_yx = ad::mean_square_to(d_x.forward(fake_x), 1.0);
  ad::Var cyc = ad::add(ad::mean_abs_diff(rec_x, x_real), ad::mean_abs_diff(rec_y, y_real));
  ad::Var idt = ad::add(ad::mean_abs_diff(idt_y, y_real), ad::mean_abs_diff(idt_x, x_real));
  ad::Var total = ad::add(ad::add(adv_xy, adv_yx),
                          ad::add(ad::scale(cyc, train_cfg_.lambda_cyc),
                                  ad::scale(idt, train_cfg_.lambda_idt)));

  StepReport report;
  report.adv_xy = adv_xy->value[0];
  report.adv_yx = adv_yx->value[0];
  report.cycle = cyc->value[0];
  report.idt_rec = idt->value[0];
  report.g_total = total->value[0];
  require_finite(report.adv_xy, "adv_xy");
  require_finite(report.adv_yx, "adv_yx");
  require_finite(report.cycle, "cycle");
  require_finite(report.idt_rec, "idt_rec");

  ad::backward(total);

  Tensor buffered_x = submit_batch(buffer_x, fake_x->value);
  Tensor buffered_y = submit_batch(buffer_y, fake_y->value);

  d_x.power_iterate_all();
  d_y.power_iterate_all();
  // The generator backward also reached discriminator weights; those
  // gradients belong to the frozen copy and are dropped here.
  opt_dx.zero_grad();
  opt_dy.zero_grad();

  ad::Var dx_real = d_x.forward(x_real);
  ad::Var dx_fake = d_x.forward(ad::leaf(buffered_x));
  ad::Var loss_dx = ad::scale(
      ad::add(ad::mean_square_to(dx_real, 1.0), ad::mean_square_to(dx_fake, 0.0)), 0.5);
  ad::Var dy_real = d_y.forward(y_real);
  ad::Var dy_fake = d_y.forward(ad::leaf(buffered_y));
  ad::Var loss_dy = ad::scale(
      ad::add(ad::mean_square_to(dy_real, 1.0), ad::mean_square_to(dy_fake, 0.0)), 0.5);

  report.d_x = loss_dx->value[0];
  report.d_y = loss_dy->value[0];
  require_finite(report.d_x, "d_x");
  require_finite(report.d_y, "d_y");

  ad::backward(loss_dx);
  ad::backward(loss_dy);

  opt_g.step(lr);
  report.d_x_updated = report.d_x >= train_cfg_.d_loss_threshold;
  if (report.d_x_updated) opt_dx.step(lr);
  report.d_y_updated = report.d_y >= train_cfg_.d_loss_threshold;
  if (report.d_y_updated) opt_dy.step(lr);
  return report;
}

EpochReport MsGan::run_epoch(const std::vector<ImageTile>& data_x,
                             const std::vector<ImageTile>& data_y) {
  int b = train_cfg_.batch_size;
  if (static_cast<int>(data_x.size()) < b || static_cast<int>(data_y.size()) < b) {
    fail(ErrorCode::InvalidArgument, "dataset smaller than one batch");
  }
  auto shuffled = [this](std::size_t n) {
    std::vector<long long> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) {
      std::size_t j = rng::uniform_index(train_rng_, i + 1);
      std::swap(perm[i], perm[j]);
    }
    return perm;
  };
  std::vector<long long> perm_x = shuffled(data_x.size());
  std::vector<long long> perm_y = shuffled(data_y.size());
  int steps = static_cast<int>(std::min(data_x.size(), data_y.size())) / b;

  EpochReport er;
  er.epoch = epoch_;
  er.lr = lr_at_epoch(train_cfg_, epoch_);
  er.steps = steps;
  for (int s = 0; s < steps; ++s) {
    std::vector<ImageTile> bx, by;
    std::vector<long long> ix, iy;
    for (int j = 0; j < b; ++j) {
      long long px = perm_x[static_cast<std::size_t>(s * b + j)];
      long long py = perm_y[static_cast<std::size_t>(s * b + j)];
      bx.push_back(data_x[static_cast<std::size_t>(px)]);
      by.push_back(data_y[static_cast<std::size_t>(py)]);
      ix.push_back(px);
      iy.push_back(py);
    }
    StepReport r = train_step(bx, by, ix, iy);
    er.adv_xy += r.adv_xy;
    er.adv_yx += r.adv_yx;
    er.cycle += r.cycle;
    er.idt_rec += r.idt_rec;
    er.g_total += r.g_total;
    er.d_x += r.d_x;
    er.d_y += r.d_y;
    er.d_x_updates += r.d_x_updated ? 1 : 0;
    er.d_y_updates += r.d_y_updated ? 1 : 0;
  }
  if (steps > 0) {
    double inv = 1.0 / steps;
    er.adv_xy *= inv;
    er.adv_yx *= inv;
    er.cycle *= inv;
    er.idt_rec *= inv;
    er.g_total *= inv;
    er.d_x *= inv;
    er.d_y *= inv;
  }
  ++epoch_;
  return er;
}

std::vector<EpochReport> MsGan::train(const std::vector<ImageTile>& data_x,
                                      const std::vector<ImageTile>& data_y,
                                      const EpochCallback& callback) {
  std::vector<EpochReport> reports;
  while (epoch_ < train_cfg_.total_epochs) {
    EpochReport er = run_epoch(data_x, data_y);
    if (callback) callback(er);
    reports.push_back(er);
  }
  return reports;
}

ImageTile MsGan::normalize(const ImageTile& tile, Direction direction) const {
  ImageTile gray = to_grayscale3(tile);
  const nn::UNetGenerator& gen = direction == Direction::to_x ? f_yx : g_xy;
  ImageTile out = nchw_to_tile(gen.infer(tile_to_nchw(gray)));
  out.domain_label = tile.domain_label;
  out.source_id = tile.source_id;
  out.origin_xy = tile.origin_xy;
  return out;
}

std::map<std::string, Tensor*> MsGan::tensor_directory() {
  std::vector<nn::NamedVar> gp, dxp, dyp;
  std::vector<nn::NamedTensor> state;
  collect_all(gp, dxp, dyp, state);
  std::map<std::string, Tensor*> directory;
  auto add = [&directory](const std::vector<nn::NamedVar>& params, nn::Adam& opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      directory[params[i].name] = &params[i].var->value;
      directory[params[i].name + ".adam_m"] = &opt.m1[i];
      directory[params[i].name + ".adam_v"] = &opt.m2[i];
    }
  };
  add(gp, opt_g);
  add(dxp, opt_dx);
  add(dyp, opt_dy);
  for (const auto& s : state) directory[s.name] = s.tensor;
  return directory;
}

void MsGan::save_checkpoint(const std::string& path) {
  std::map<std::string, Tensor*> directory = tensor_directory();
  std::map<std::string, const Tensor*> tensors(directory.begin(), directory.end());

  json header;
  header["kind"] = "msgan_checkpoint";
  header["schema_version"] = 1;
  header["generator"] = generator_config_to_json(gen_cfg_);
  header["discriminator"] = discriminator_config_to_json(disc_cfg_);
  header["train"] = train_config_to_json(train_cfg_);
  header["epoch"] = epoch_;
  header["rng"] = json{{"train", rng::save_state(train_rng_)},
                       {"buffer_x", rng::save_state(buffer_x.engine())},
                       {"buffer_y", rng::save_state(buffer_y.engine())}};
  header["opt_steps"] = json{{"g", opt_g.t}, {"d_x", opt_dx.t}, {"d_y", opt_dy.t}};
  container::write(path, header, tensors);
}

MsGan MsGan::load_checkpoint(const std::string& path) {
  std::map<std::string, Tensor> loaded;
  json header = container::read(path, loaded);
  if (header.value("kind", std::string()) != "msgan_checkpoint") {
    fail(ErrorCode::BadFormat, "not a training checkpoint: " + path);
  }

  nn::GeneratorConfig gcfg;
  nn::DiscriminatorConfig dcfg;
  TrainConfig tcfg;
  try {
    gcfg = generator_config_from_json(header.at("generator"));
    dcfg = discriminator_config_from_json(header.at("discriminator"));
    tcfg = train_config_from_json(header.at("train"));
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("checkpoint header: ") + e.what());
  }
  MsGan gan(gcfg, dcfg, tcfg);
  try {
    gan.epoch_ = header.at("epoch").get<int>();
    const json& rng_doc = header.at("rng");
    gan.train_rng_ = rng::load_state(rng_doc.at("train").get<std::string>());
    gan.buffer_x.engine() = rng::load_state(rng_doc.at("buffer_x").get<std::string>());
    gan.buffer_y.engine() = rng::load_state(rng_doc.at("buffer_y").get<std::string>());
    const json& opt_doc = header.at("opt_steps");
    gan.opt_g.t = opt_doc.at("g").get<long long>();
    gan.opt_dx.t = opt_doc.at("d_x").get<long long>();
    gan.opt_dy.t = opt_doc.at("d_y").get<long long>();
  } catch (const json::exception& e) {
    fail(ErrorCode::BadFormat, std::string("checkpoint header: ") + e.what());
  }

  std::map<std::string, Tensor*> directory = gan.tensor_directory();
  if (loaded.size() != directory.size()) {
    fail(ErrorCode::BadWeights, "checkpoint tensor directory is incomplete");
  }
  for (const auto& [name, source] : loaded) {
    auto it = directory.find(name);
    if (it == directory.end()) fail(ErrorCode::BadWeights, "unknown tensor in checkpoint: " + name);
    Tensor* target = it->second;
    if (target->shape() != source.shape()) {
      fail(ErrorCode::BadWeights, "shape mismatch for tensor: " + name);
    }
    if (!source.all_finite()) fail(ErrorCode::BadWeights, "non-finite values in tensor: " + name);
    *target = source;
  }
  return gan;
}

}  // namespace stainkit::gan
