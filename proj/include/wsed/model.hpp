#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wsed/layers.hpp"

namespace wsed {

// Architecture of the stacked convolutional-recurrent net. Head width lists
// include the final C-wide layer.
struct ModelConfig {
  size_t num_classes = 17;
  size_t input_bands = 40;
  std::vector<size_t> conv_filters = {102, 102, 102};
  std::vector<size_t> conv_pools = {5, 4, 2};
  size_t gru_units = 32;  // per direction
  std::vector<size_t> strong_dense = {32, 17};
  std::vector<size_t> weak_dense = {16, 17};
  double dropout_rate = 0.0;
  uint64_t seed = 1;

  // Default stack rescaled to num_classes / input_bands.
  static ModelConfig defaults(size_t num_classes, size_t input_bands = 40);
  void validate() const;
};

struct ModelOutput {
  Tensor strong;  // [B,T,C] probabilities
  Tensor weak;    // [B,C] probabilities (empty when has_weak is false)
  bool has_weak = false;
};

// Common surface of the trainable detectors.
class SedModel {
 public:
  virtual ~SedModel() = default;
  // x is [B,T,F]
  virtual ModelOutput forward(const Tensor& x, RunMode mode) = 0;
  // dweak may be null (ignored by models without a weak head); returns dx.
  virtual Tensor backward(const Tensor& dstrong, const Tensor* dweak) = 0;
  virtual bool has_weak_head() const = 0;
  virtual std::vector<std::pair<std::string, Tensor*>> named_params() = 0;
  virtual std::vector<std::pair<std::string, Tensor*>> named_state() = 0;
  virtual size_t count_parameters() const = 0;
  virtual size_t num_classes() const = 0;
  virtual size_t input_bands() const = 0;
  virtual std::string type() const = 0;
  virtual std::map<std::string, std::string> config_map() const = 0;
};

// CNN blocks (conv3x3 -> batchnorm -> dropout -> freq maxpool) stacked until
// the frequency axis collapses to 1, a BiGRU over time, a time-distributed
// strong head ending in per-frame sigmoids, and a weak head fed by the
// time-mean of the strong head's pre-sigmoid activations.
class CrnnModel : public SedModel {
 public:
  explicit CrnnModel(const ModelConfig& cfg);

  ModelOutput forward(const Tensor& x, RunMode mode) override;
  Tensor backward(const Tensor& dstrong, const Tensor* dweak) override;
  bool has_weak_head() const override { return true; }
  std::vector<std::pair<std::string, Tensor*>> named_params() override;
  std::vector<std::pair<std::string, Tensor*>> named_state() override;
  size_t count_parameters() const override { return param_count_; }
  size_t num_classes() const override { return cfg_.num_classes; }
  size_t input_bands() const override { return cfg_.input_bands; }
  std::string type() const override { return "crnn"; }
  std::map<std::string, std::string> config_map() const override;
  const ModelConfig& config() const { return cfg_; }

  // Exposed for tests: mean over time of the strong head pre-sigmoid
  // activations, the aggregation feeding the weak head.
  Tensor collapse_time(const Tensor& strong_pre);

 private:
  ModelConfig cfg_;
  std::vector<std::unique_ptr<Conv2d>> convs_;
  std::vector<std::unique_ptr<BatchNorm>> bns_;
  std::vector<std::unique_ptr<Dropout>> conv_drops_;
  std::vector<std::unique_ptr<MaxPoolFreq>> pools_;
  std::unique_ptr<BiGru> gru_;
  std::unique_ptr<Dropout> gru_drop_;
  std::vector<std::unique_ptr<Dense>> strong_dense_;
  std::vector<std::unique_ptr<Dropout>> strong_drops_;  // after hidden layers
  ActivationLayer strong_sigmoid_{Activation::kSigmoid};
  MeanOverTime collapse_;
  std::vector<std::unique_ptr<Dense>> weak_dense_;
  std::vector<std::unique_ptr<Dropout>> weak_drops_;
  ActivationLayer weak_sigmoid_{Activation::kSigmoid};
  Rng rng_;
  size_t param_count_ = 0;
  std::vector<size_t> in_shape_;
};

// The comparison system: an MLP over a fixed context of frames around each
// time step, predicting per-frame strong labels only.
class BaselineMlp : public SedModel {
 public:
  BaselineMlp(size_t num_classes, size_t input_bands = 40,
              size_t context_frames = 5, double dropout_rate = 0.2,
              uint64_t seed = 1, std::vector<size_t> hidden = {50, 50});

  ModelOutput forward(const Tensor& x, RunMode mode) override;
  Tensor backward(const Tensor& dstrong, const Tensor* dweak) override;
  bool has_weak_head() const override { return false; }
  std::vector<std::pair<std::string, Tensor*>> named_params() override;
  std::vector<std::pair<std::string, Tensor*>> named_state() override { return {}; }
  size_t count_parameters() const override { return param_count_; }
  size_t num_classes() const override { return num_classes_; }
  size_t input_bands() const override { return input_bands_; }
  std::string type() const override { return "baseline"; }
  std::map<std::string, std::string> config_map() const override;
  size_t context_frames() const { return context_; }

 private:
  Tensor build_context(const Tensor& x) const;

  size_t num_classes_, input_bands_, context_;
  double dropout_rate_;
  uint64_t seed_;
  std::vector<size_t> hidden_;
  std::vector<std::unique_ptr<Dense>> dense_;
  std::vector<std::unique_ptr<Dropout>> drops_;
  ActivationLayer out_sigmoid_{Activation::kSigmoid};
  Rng rng_;
  size_t param_count_ = 0;
  std::vector<size_t> in_shape_;
};

enum class SaliencyHead { kStrong, kWeak };

// |d (sum over time of the class output) / d features|, computed by a full
// backward pass to the input; same shape as `features` ([T,F]).
Tensor saliency(SedModel& model, const Tensor& features, size_t class_index,
                SaliencyHead head);

// "WSEDM1" checkpoint: magic, u32 format version, length-prefixed canonical
// key=value config block, then each tensor as (name, rank, dims, f32 data)
// in deterministic layer order.
void save_checkpoint(const std::string& path, SedModel& model,
                     const std::map<std::string, std::string>& extra = {});

struct LoadedCheckpoint {
  std::unique_ptr<SedModel> model;
  std::map<std::string, std::string> config;  // full block, incl. extras
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Builds a model from a checkpoint-style config map (fresh parameters).
std::unique_ptr<SedModel> model_from_config(
    const std::map<std::string, std::string>& config);

}  // namespace wsed
