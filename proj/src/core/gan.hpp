#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "core/color.hpp"
#include "core/image.hpp"
#include "core/nn.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace stainkit::gan {

struct TrainConfig {
  double lambda_cyc = 10.0;
  double lambda_idt = 0.5;
  double learning_rate = 1e-5;
  int total_epochs = 100;
  int decay_epochs = 50;
  int buffer_size = 50;
  double d_loss_threshold = 0.1;
  JitterParams jitter{0.75, 0.5, 0.75, 0.0};
  int batch_size = 1;
  std::uint64_t rng_seed = 0;
};

void validate(const TrainConfig& cfg);

nlohmann::json generator_config_to_json(const nn::GeneratorConfig& cfg);
nn::GeneratorConfig generator_config_from_json(const nlohmann::json& doc);
nlohmann::json discriminator_config_to_json(const nn::DiscriminatorConfig& cfg);
nn::DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& doc);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& doc);

// Constant learning rate for the first total-decay epochs, then a linear
// ramp that would hit zero one epoch past the last.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

// --- loss formulas on plain score maps / images ---
double lsgan_loss_d(const Tensor& scores_real, const Tensor& scores_fake);
double lsgan_loss_g(const Tensor& scores_fake);
double cycle_loss(const Tensor& x, const Tensor& rec_x, const Tensor& y, const Tensor& rec_y);
// Plain CycleGAN identity term, kept for ablations only.
double identity_loss_legacy(const Tensor& g_of_y, const Tensor& y, const Tensor& f_of_x,
                            const Tensor& x);
// Reconstruction from the gray projection of a domain's own images.
double idt_rec_loss(const Tensor& g_of_yprime, const Tensor& y, const Tensor& f_of_xprime,
                    const Tensor& x);
double total_objective(double adv_g, double adv_f, double cyc, double idt_rec,
                       double lambda_cyc, double lambda_idt);

// History of generated images shown to the discriminators. While filling,
// fresh images pass through; once full, each fresh image replaces a random
// stored one with probability one half.
class ImageBuffer {
public:
  ImageBuffer() = default;
  ImageBuffer(int capacity, std::uint64_t seed);
  Tensor submit(const Tensor& fresh);
  int size() const { return static_cast<int>(stored_.size()); }
  int capacity() const { return capacity_; }
  rng::Engine& engine() { return rng_; }

private:
  std::vector<Tensor> stored_;
  rng::Engine rng_;
  int capacity_ = 0;
};

struct StepReport {
  double adv_xy = 0.0;   // LSGAN generator term for G through D_y
  double adv_yx = 0.0;   // LSGAN generator term for F through D_x
  double cycle = 0.0;
  double idt_rec = 0.0;
  double g_total = 0.0;
  double d_x = 0.0;
  double d_y = 0.0;
  bool d_x_updated = false;
  bool d_y_updated = false;
};

struct EpochReport {
  int epoch = 0;
  int steps = 0;
  double lr = 0.0;
  double adv_xy = 0.0;
  double adv_yx = 0.0;
  double cycle = 0.0;
  double idt_rec = 0.0;
  double g_total = 0.0;
  double d_x = 0.0;
  double d_y = 0.0;
  int d_x_updates = 0;
  int d_y_updates = 0;
};

nlohmann::json epoch_report_to_json(const EpochReport& report);

enum class Direction { to_x, to_y };

// The full training state: G maps gray to domain Y, F maps gray to domain
// X, each discriminator judges one RGB domain. Either generator normalizes
// at inference because both consume only the gray projection.
class MsGan {
public:
  MsGan(nn::GeneratorConfig gcfg, nn::DiscriminatorConfig dcfg, TrainConfig tcfg);

  // One optimizer step on a batch from each domain. Dataset indices seed
  // the per-tile jitter draws so worker scheduling cannot change results.
  StepReport train_step(const std::vector<ImageTile>& batch_x,
                        const std::vector<ImageTile>& batch_y,
                        const std::vector<long long>& index_x,
                        const std::vector<long long>& index_y);

  // Shuffles both domains, runs floor(min/batch) steps, advances the epoch
  // counter.
  EpochReport run_epoch(const std::vector<ImageTile>& data_x,
                        const std::vector<ImageTile>& data_y);

  using EpochCallback = std::function<void(const EpochReport&)>;
  // Runs epochs from the current counter up to total_epochs.
  std::vector<EpochReport> train(const std::vector<ImageTile>& data_x,
                                 const std::vector<ImageTile>& data_y,
                                 const EpochCallback& callback = nullptr);

  ImageTile normalize(const ImageTile& tile, Direction direction) const;

  void save_checkpoint(const std::string& path);
  static MsGan load_checkpoint(const std::string& path);

  const nn::GeneratorConfig& generator_config() const { return gen_cfg_; }
  const nn::DiscriminatorConfig& discriminator_config() const { return disc_cfg_; }
  const TrainConfig& train_config() const { return train_cfg_; }
  int epoch() const { return epoch_; }

  nn::UNetGenerator g_xy;  // gray -> Y
  nn::UNetGenerator f_yx;  // gray -> X
  nn::PatchDiscriminator d_x;
  nn::PatchDiscriminator d_y;
  nn::Adam opt_g;
  nn::Adam opt_dx;
  nn::Adam opt_dy;
  ImageBuffer buffer_x;  // fakes shown to d_x
  ImageBuffer buffer_y;

private:
  void collect_all(std::vector<nn::NamedVar>& g_params, std::vector<nn::NamedVar>& dx_params,
                   std::vector<nn::NamedVar>& dy_params, std::vector<nn::NamedTensor>& state);
  std::map<std::string, Tensor*> tensor_directory();

  nn::GeneratorConfig gen_cfg_;
  nn::DiscriminatorConfig disc_cfg_;
  TrainConfig train_cfg_;
  rng::Engine train_rng_;
  int epoch_ = 0;
};

}  // namespace stainkit::gan
