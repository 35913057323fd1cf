#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainloop/error.hpp"

namespace brainloop::align {

enum class EncoderInit { identity, random };

struct EncoderSpec {
  std::vector<int> hidden{256};
  int output_dim = 64;
  EncoderInit init = EncoderInit::identity;
  double init_scale = 0.1;  ///< scale of the random entries
};

struct RefinerSpec {
  int layers = 3;  ///< 0 disables the refiner
  int heads = 4;
  int head_dim = 16;
};

enum class Alternation { per_batch, per_epoch };

struct AlignmentConfig {
  double epsilon = 1.0;
  double lambda1 = 0.1;
  double lambda2 = 100.0;
  int k1 = 20;
  int k2 = 20;
  int sinkhorn_iters = 100;
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 256;
  int epochs = 50;
  std::uint64_t seed = 0;

  int anchors_per_batch = 32;      ///< local structures built per step B
  double gw_epsilon = 1.0;         ///< mirror-descent step of the in-loss GW coupling
  int gw_outer_iters = 50;
  bool detach_plan = false;        ///< L_W: treat the Sinkhorn plan as a constant
  bool unroll_gw = false;          ///< L_GW: differentiate through the GW coupling
  bool gumbel_noise = true;
  double signal_lr_scale = 1.0;    ///< signal encoder learning rate relative to lr
  int warmup_epochs = 0;           ///< linear learning-rate ramp over the first epochs
  bool reshuffle_each_epoch = false;  ///< redraw batch pairing and sampler seeds every epoch
  bool use_loss_w = true;
  bool use_loss_gw = true;
  Alternation alternation = Alternation::per_batch;

  EncoderSpec image_encoder;
  EncoderSpec signal_encoder;
  RefinerSpec refiner;

  void validate() const {
    require(epsilon > 0.0 && gw_epsilon > 0.0, ErrorKind::config, "alignment.epsilon must be positive");
    require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorKind::config, "alignment.lambda1/lambda2 must be non-negative");
    require(k1 >= 1 && k2 >= 1, ErrorKind::config, "alignment.k1/k2 must be positive");
    require(k1 < batch_size && k2 < batch_size, ErrorKind::config, "alignment.k1/k2 must be below batch_size");
    require(sinkhorn_iters >= 1 && gw_outer_iters >= 1, ErrorKind::config, "alignment iteration counts must be positive");
    require(lr >= 0.0 && signal_lr_scale >= 0.0, ErrorKind::config, "alignment.lr/signal_lr_scale must be non-negative");
    require(warmup_epochs >= 0, ErrorKind::config, "alignment.warmup_epochs must be non-negative");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::config,
            "alignment.beta1/beta2 must lie in [0, 1)");
    require(batch_size >= 2 && epochs >= 0 && anchors_per_batch >= 1, ErrorKind::config,
            "alignment.batch_size/epochs/anchors_per_batch out of range");
    require(image_encoder.output_dim == signal_encoder.output_dim, ErrorKind::config,
            "encoders must share output_dim");
    require(image_encoder.output_dim >= 1, ErrorKind::config, "encoder output_dim must be positive");
    require(refiner.layers >= 0 && refiner.heads >= 1 && refiner.head_dim >= 1, ErrorKind::config,
            "refiner.layers must be >= 0 and heads/head_dim >= 1");
  }
};

}  // namespace brainloop::align
