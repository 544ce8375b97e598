#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "raddet/ops.hpp"
#include "raddet/scene.hpp"
#include "raddet/tensor.hpp"

namespace raddet {

enum class ModelVariant { cross_attention, ra_only, three_decoder };

ModelVariant parse_variant(const std::string& s);
const char* to_string(ModelVariant v);

struct ModelConfig {
  RadarGeometry geometry;
  int t_frames = 1;
  std::vector<int> enc_channels{16, 32, 64, 64, 128, 128};
  std::vector<int> enc_strides{2, 1, 2, 1, 2, 2};      // RA both axes; range/angle axis of RD/AD
  std::vector<int> doppler_strides{2, 1, 1, 1, 2, 1};  // Doppler axis of RD/AD
  std::vector<int> dec_channels{128, 64, 32, 16};
  ModelVariant variant = ModelVariant::cross_attention;
  double heatmap_prior = 0.01;  // initial heatmap head output

  /// Throws std::invalid_argument when shapes cannot line up.
  void validate() const;
};

struct NamedParam {
  std::string name;
  Tensor value;
};

struct ModelInput {
  Tensor ra;  // [N,T,R,A]
  Tensor rd;  // [N,T,R,D]
  Tensor ad;  // [N,T,A,D]
};

struct NetworkOutput {
  Tensor heatmap;  // [N,3,R,A], sigmoid
  Tensor offset;   // [N,2,R,A], sigmoid; decoded offset is 2p-1
  Tensor heading;  // [N,2,R/4,A/4], tanh
};

/// Attention of the Doppler views over the RA features. Accepts [C,h,w] /
/// [C,h,d] / [C,w,d] or the same with a leading batch axis. gamma and beta
/// are the layer-norm affine parameters of size C.
Tensor cross_attention(const Tensor& f_ra, const Tensor& f_rd, const Tensor& f_ad, const Tensor& gamma,
                       const Tensor& beta);

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Trainable parameters in a fixed order.
  std::vector<Tensor> parameters() const;
  const std::vector<NamedParam>& named_parameters() const { return params_; }
  std::size_t parameter_count() const;

  NetworkOutput forward(const ModelInput& input, bool training);

  void save(const std::filesystem::path& path, const std::string& extra_json = "{}") const;
  static Model load(const std::filesystem::path& path, std::string* extra_json = nullptr);

  /// Byte-level equality of parameters and running statistics.
  bool same_state(const Model& other) const;

 private:
  struct ConvBlock {
    std::size_t weight, gamma, beta, alpha;  // indices into params_
    std::size_t bn;                          // index into bn_
    Pair2 stride;
    bool transpose = false;
  };
  struct Head {
    std::size_t weight, bias;
  };

  ConvBlock add_block(const std::string& name, int cin, int cout, Pair2 stride, bool transpose, std::uint64_t& seed);
  Head add_head(const std::string& name, int cin, int cout, double bias, bool zero_weight, std::uint64_t& seed);
  std::size_t add_param(std::string name, Shape shape, std::vector<double> values);
  Tensor run_block(const ConvBlock& b, const Tensor& x, bool training);
  Tensor run_head(const Head& h, const Tensor& x) const;
  Tensor decode(const std::vector<ConvBlock>& dec, const Tensor& x, bool training, Tensor* quarter);

  ModelConfig config_;
  std::vector<NamedParam> params_;
  std::vector<std::pair<std::string, BatchNormState>> bn_;
  std::vector<ConvBlock> enc_ra_, enc_rd_, enc_ad_;
  std::vector<std::vector<ConvBlock>> decoders_;
  std::size_t ln_gamma_ = 0, ln_beta_ = 0;
  Head heat_{}, off_{}, head_{};
  std::size_t merge_weight_ = 0, merge_bias_ = 0;  // three_decoder only
};

/// Stacks frames into a model input of batch 1; frames are oldest first.
ModelInput make_input(const std::vector<RadarFrame>& stack);
/// Concatenates per-sample inputs along the batch axis.
ModelInput batch_inputs(const std::vector<ModelInput>& samples);

}  // namespace raddet
