#include "wsed/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wsed {

ModelConfig ModelConfig::defaults(size_t num_classes, size_t input_bands) {
  ModelConfig cfg;
  cfg.num_classes = num_classes;
  cfg.input_bands = input_bands;
  if (input_bands == 40) {
    cfg.conv_filters = {102, 102, 102};
    cfg.conv_pools = {5, 4, 2};
  } else {
    cfg.conv_filters = {102};
    cfg.conv_pools = {input_bands};
  }
  cfg.strong_dense = {32, num_classes};
  cfg.weak_dense = {16, num_classes};
  return cfg;
}

void ModelConfig::validate() const {
  if (num_classes == 0) throw UsageError("model config: num_classes must be >= 1");
  if (input_bands == 0) throw UsageError("model config: input_bands must be >= 1");
  if (conv_filters.empty() || conv_filters.size() != conv_pools.size())
    throw UsageError("model config: conv_filters and conv_pools must be "
                     "nonempty and the same length");
  size_t prod = 1;
  for (size_t p : conv_pools) {
    if (p == 0) throw UsageError("model config: pool factor must be >= 1");
    prod *= p;
  }
  if (prod != input_bands)
    throw UsageError("model config: product of conv_pools (" +
                     std::to_string(prod) + ") must equal input_bands (" +
                     std::to_string(input_bands) + ")");
  if (gru_units == 0) throw UsageError("model config: gru_units must be >= 1");
  if (strong_dense.empty() || strong_dense.back() != num_classes)
    throw UsageError("model config: strong_dense must end in num_classes");
  if (weak_dense.empty() || weak_dense.back() != num_classes)
    throw UsageError("model config: weak_dense must end in num_classes");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw UsageError("model config: dropout_rate must be in [0, 1)");
}

// ---------------------------------------------------------------------------
// CrnnModel

CrnnModel::CrnnModel(const ModelConfig& cfg)
    : cfg_(cfg), rng_(cfg.seed ^ 0xd50f0ff00ff00ffull) {
  cfg_.validate();
  Rng init_rng(cfg_.seed);

  size_t channels = 1;
  for (size_t i = 0; i < cfg_.conv_filters.size(); ++i) {
    const std::string idx = std::to_string(i);
    convs_.push_back(std::make_unique<Conv2d>(channels, cfg_.conv_filters[i],
                                              "conv" + idx));
    convs_.back()->init(init_rng);
    bns_.push_back(std::make_unique<BatchNorm>(cfg_.conv_filters[i], "bn" + idx));
    conv_drops_.push_back(std::make_unique<Dropout>(cfg_.dropout_rate));
    pools_.push_back(std::make_unique<MaxPoolFreq>(cfg_.conv_pools[i]));
    channels = cfg_.conv_filters[i];
  }

  gru_ = std::make_unique<BiGru>(channels, cfg_.gru_units, "gru");
  gru_->init(init_rng);
  gru_drop_ = std::make_unique<Dropout>(cfg_.dropout_rate);

  size_t dim = 2 * cfg_.gru_units;
  for (size_t i = 0; i < cfg_.strong_dense.size(); ++i) {
    strong_dense_.push_back(std::make_unique<Dense>(
        dim, cfg_.strong_dense[i], Activation::kLinear,
        "strong" + std::to_string(i)));
    strong_dense_.back()->init(init_rng);
    if (i + 1 < cfg_.strong_dense.size())
      strong_drops_.push_back(std::make_unique<Dropout>(cfg_.dropout_rate));
    dim = cfg_.strong_dense[i];
  }

  dim = cfg_.num_classes;
  for (size_t i = 0; i < cfg_.weak_dense.size(); ++i) {
    weak_dense_.push_back(std::make_unique<Dense>(
        dim, cfg_.weak_dense[i], Activation::kLinear,
        "weak" + std::to_string(i)));
    weak_dense_.back()->init(init_rng);
    if (i + 1 < cfg_.weak_dense.size())
      weak_drops_.push_back(std::make_unique<Dropout>(cfg_.dropout_rate));
    dim = cfg_.weak_dense[i];
  }

  for (auto& [name, t] : named_params()) param_count_ += t->size();
}

ModelOutput CrnnModel::forward(const Tensor& x, RunMode mode) {
  if (x.rank() != 3 || x.dim(2) != cfg_.input_bands)
    throw ShapeError("crnn forward: expected [B,T," +
                     std::to_string(cfg_.input_bands) + "], got " +
                     x.shape_str());
  in_shape_ = x.shape();
  const size_t B = x.dim(0), T = x.dim(1);

  Tensor h = x.reshaped({B, T, cfg_.input_bands, 1});
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i]->forward(h, mode, rng_);
    h = bns_[i]->forward(h, mode, rng_);
    h = conv_drops_[i]->forward(h, mode, rng_);
    h = pools_[i]->forward(h, mode, rng_);
  }
  if (h.dim(2) != 1)
    throw ShapeError("crnn forward: frequency axis not reduced to 1");
  h = h.reshaped({B, T, cfg_.conv_filters.back()});

  h = gru_->forward(h, mode, rng_);
  h = gru_drop_->forward(h, mode, rng_);

  for (size_t i = 0; i < strong_dense_.size(); ++i) {
    h = strong_dense_[i]->forward(h, mode, rng_);
    if (i + 1 < strong_dense_.size())
      h = strong_drops_[i]->forward(h, mode, rng_);
  }
  // h is now the strong pre-sigmoid activation [B,T,C]
  ModelOutput out;
  out.strong = strong_sigmoid_.forward(h, mode, rng_);

  Tensor w = collapse_.forward(h, mode, rng_);
  for (size_t i = 0; i < weak_dense_.size(); ++i) {
    w = weak_dense_[i]->forward(w, mode, rng_);
    if (i + 1 < weak_dense_.size()) w = weak_drops_[i]->forward(w, mode, rng_);
  }
  out.weak = weak_sigmoid_.forward(w, mode, rng_);
  out.has_weak = true;
  return out;
}

Tensor CrnnModel::backward(const Tensor& dstrong, const Tensor* dweak) {
  const size_t B = in_shape_[0], T = in_shape_[1];
  const size_t C = cfg_.num_classes;
  require_shape(dstrong, {B, T, C}, "crnn backward (strong)");

  // strong head output path
  Tensor d = strong_sigmoid_.backward(dstrong);

  // weak head path joins at the strong pre-sigmoid activation
  if (dweak != nullptr) {
    require_shape(*dweak, {B, C}, "crnn backward (weak)");
    Tensor dw = weak_sigmoid_.backward(*dweak);
    for (size_t i = weak_dense_.size(); i-- > 0;) {
      dw = weak_dense_[i]->backward(dw);
      if (i > 0) dw = weak_drops_[i - 1]->backward(dw);
    }
    Tensor dcollapse = collapse_.backward(dw);
    for (size_t i = 0; i < d.size(); ++i) d.v(i) += dcollapse.v(i);
  }

  for (size_t i = strong_dense_.size(); i-- > 0;) {
    d = strong_dense_[i]->backward(d);
    if (i > 0) d = strong_drops_[i - 1]->backward(d);
  }

  d = gru_drop_->backward(d);
  d = gru_->backward(d);
  d = d.reshaped({B, T, 1, cfg_.conv_filters.back()});

  for (size_t i = convs_.size(); i-- > 0;) {
    d = pools_[i]->backward(d);
    d = conv_drops_[i]->backward(d);
    d = bns_[i]->backward(d);
    d = convs_[i]->backward(d);
  }
  return d.reshaped({B, T, cfg_.input_bands});
}

Tensor CrnnModel::collapse_time(const Tensor& strong_pre) {
  MeanOverTime mean;
  Rng r(0);
  return mean.forward(strong_pre, RunMode::kInfer, r);
}

std::vector<std::pair<std::string, Tensor*>> CrnnModel::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto append = [&out](std::vector<std::pair<std::string, Tensor*>> v) {
    for (auto& p : v) out.push_back(std::move(p));
  };
  for (size_t i = 0; i < convs_.size(); ++i) {
    append(convs_[i]->named_params());
    append(bns_[i]->named_params());
  }
  append(gru_->named_params());
  for (auto& l : strong_dense_) append(l->named_params());
  for (auto& l : weak_dense_) append(l->named_params());
  return out;
}

std::vector<std::pair<std::string, Tensor*>> CrnnModel::named_state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& bn : bns_)
    for (auto& p : bn->named_state()) out.push_back(std::move(p));
  return out;
}

namespace {

std::string join_sizes(const std::vector<size_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::map<std::string, std::string> CrnnModel::config_map() const {
  return {
      {"type", "crnn"},
      {"num_classes", std::to_string(cfg_.num_classes)},
      {"input_bands", std::to_string(cfg_.input_bands)},
      {"conv_filters", join_sizes(cfg_.conv_filters)},
      {"conv_pools", join_sizes(cfg_.conv_pools)},
      {"gru_units", std::to_string(cfg_.gru_units)},
      {"strong_dense", join_sizes(cfg_.strong_dense)},
      {"weak_dense", join_sizes(cfg_.weak_dense)},
      {"dropout", fmt_double(cfg_.dropout_rate)},
      {"seed", std::to_string(cfg_.seed)},
  };
}

// ---------------------------------------------------------------------------
// BaselineMlp

BaselineMlp::BaselineMlp(size_t num_classes, size_t input_bands,
                         size_t context_frames, double dropout_rate,
                         uint64_t seed, std::vector<size_t> hidden)
    : num_classes_(num_classes),
      input_bands_(input_bands),
      context_(context_frames),
      dropout_rate_(dropout_rate),
      seed_(seed),
      hidden_(std::move(hidden)),
      rng_(seed ^ 0xba5e11fe77aa33ull) {
  if (num_classes_ == 0) throw UsageError("baseline: num_classes must be >= 1");
  if (context_ == 0) throw UsageError("baseline: context_frames must be >= 1");
  Rng init_rng(seed_);
  size_t dim = context_ * input_bands_;
  for (size_t i = 0; i < hidden_.size(); ++i) {
    dense_.push_back(std::make_unique<Dense>(dim, hidden_[i],
                                             Activation::kTanh,
                                             "mlp" + std::to_string(i)));
    dense_.back()->init(init_rng);
    drops_.push_back(std::make_unique<Dropout>(dropout_rate_));
    dim = hidden_[i];
  }
  dense_.push_back(std::make_unique<Dense>(dim, num_classes_,
                                           Activation::kLinear, "mlp_out"));
  dense_.back()->init(init_rng);
  for (auto& [name, t] : named_params()) param_count_ += t->size();
}

Tensor BaselineMlp::build_context(const Tensor& x) const {
  const size_t B = x.dim(0), T = x.dim(1), F = x.dim(2);
  const long half = static_cast<long>(context_) / 2;
  Tensor cw({B, T, context_ * F});
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t)
      for (size_t j = 0; j < context_; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - half;
        if (src < 0 || src >= static_cast<long>(T)) continue;  // zero pad
        const double* xrow = x.data() + (b * T + src) * F;
        double* crow = cw.data() + (b * T + t) * context_ * F + j * F;
        std::memcpy(crow, xrow, F * sizeof(double));
      }
  return cw;
}

ModelOutput BaselineMlp::forward(const Tensor& x, RunMode mode) {
  if (x.rank() != 3 || x.dim(2) != input_bands_)
    throw ShapeError("baseline forward: expected [B,T," +
                     std::to_string(input_bands_) + "], got " + x.shape_str());
  in_shape_ = x.shape();
  Tensor h = build_context(x);
  for (size_t i = 0; i < dense_.size(); ++i) {
    h = dense_[i]->forward(h, mode, rng_);
    if (i + 1 < dense_.size()) h = drops_[i]->forward(h, mode, rng_);
  }
  ModelOutput out;
  out.strong = out_sigmoid_.forward(h, mode, rng_);
  out.has_weak = false;
  return out;
}

Tensor BaselineMlp::backward(const Tensor& dstrong, const Tensor*) {
  const size_t B = in_shape_[0], T = in_shape_[1], F = in_shape_[2];
  require_shape(dstrong, {B, T, num_classes_}, "baseline backward");
  Tensor d = out_sigmoid_.backward(dstrong);
  for (size_t i = dense_.size(); i-- > 0;) {
    d = dense_[i]->backward(d);
    if (i > 0) d = drops_[i - 1]->backward(d);
  }
  // scatter the context-window gradient back onto the frames
  Tensor dx({B, T, F});
  const long half = static_cast<long>(context_) / 2;
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t)
      for (size_t j = 0; j < context_; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - half;
        if (src < 0 || src >= static_cast<long>(T)) continue;
        const double* drow = d.data() + (b * T + t) * context_ * F + j * F;
        double* xrow = dx.data() + (b * T + src) * F;
        for (size_t f = 0; f < F; ++f) xrow[f] += drow[f];
      }
  return dx;
}

std::vector<std::pair<std::string, Tensor*>> BaselineMlp::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& l : dense_)
    for (auto& p : l->named_params()) out.push_back(std::move(p));
  return out;
}

std::map<std::string, std::string> BaselineMlp::config_map() const {
  return {
      {"type", "baseline"},
      {"num_classes", std::to_string(num_classes_)},
      {"input_bands", std::to_string(input_bands_)},
      {"context_frames", std::to_string(context_)},
      {"hidden", join_sizes(hidden_)},
      {"dropout", fmt_double(dropout_rate_)},
      {"seed", std::to_string(seed_)},
  };
}

// ---------------------------------------------------------------------------
// Saliency

Tensor saliency(SedModel& model, const Tensor& features, size_t class_index,
                SaliencyHead head) {
  if (features.rank() != 2)
    throw ShapeError("saliency: features must be [T,F]");
  const size_t T = features.dim(0), F = features.dim(1);
  const size_t C = model.num_classes();
  if (class_index >= C)
    throw UsageError("saliency: class index " + std::to_string(class_index) +
                     " out of range (C=" + std::to_string(C) + ")");
  if (head == SaliencyHead::kWeak && !model.has_weak_head())
    throw UsageError("saliency: model has no weak head");

  Tensor x = features.reshaped({1, T, F});
  model.forward(x, RunMode::kInfer);

  Tensor dstrong({1, T, C});
  Tensor dweak({1, C});
  if (head == SaliencyHead::kStrong) {
    for (size_t t = 0; t < T; ++t) dstrong.v(t * C + class_index) = 1.0;
  } else {
    dweak.v(class_index) = 1.0;
  }
  Tensor dx = model.backward(
      dstrong, model.has_weak_head() ? &dweak : nullptr);

  Tensor map({T, F});
  for (size_t i = 0; i < map.size(); ++i) map.v(i) = std::fabs(dx.v(i));
  return map;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kCkptMagic[6] = {'W', 'S', 'E', 'D', 'M', '1'};
constexpr uint32_t kCkptVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v & 0xff),
                  static_cast<uint8_t>((v >> 8) & 0xff),
                  static_cast<uint8_t>((v >> 16) & 0xff),
                  static_cast<uint8_t>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& f) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw DataError("checkpoint: unexpected end of file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

std::vector<std::pair<std::string, Tensor*>> all_tensors(SedModel& model) {
  auto out = model.named_params();
  for (auto& p : model.named_state()) out.push_back(std::move(p));
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, SedModel& model,
                     const std::map<std::string, std::string>& extra) {
  std::map<std::string, std::string> config = model.config_map();
  for (const auto& [k, v] : extra) config[k] = v;

  std::string block;
  for (const auto& [k, v] : config) block += k + "=" + v + "\n";

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(kCkptMagic, 6);
  write_u32(f, kCkptVersion);
  write_u32(f, static_cast<uint32_t>(block.size()));
  f.write(block.data(), static_cast<std::streamsize>(block.size()));

  auto tensors = all_tensors(model);
  write_u32(f, static_cast<uint32_t>(tensors.size()));
  for (auto& [name, t] : tensors) {
    write_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(f, static_cast<uint32_t>(t->rank()));
    for (size_t d : t->shape()) write_u32(f, static_cast<uint32_t>(d));
    for (size_t i = 0; i < t->size(); ++i) {
      float x = static_cast<float>(t->v(i));
      uint32_t raw;
      std::memcpy(&raw, &x, 4);
      write_u32(f, raw);
    }
  }
  if (!f) throw DataError("short write on checkpoint: " + path);
}

std::unique_ptr<SedModel> model_from_config(
    const std::map<std::string, std::string>& config) {
  auto get = [&config](const std::string& key) -> const std::string& {
    auto it = config.find(key);
    if (it == config.end())
      throw DataError("checkpoint config missing key '" + key + "'");
    return it->second;
  };
  auto to_size = [](const std::string& s) {
    return static_cast<size_t>(std::stoull(s));
  };
  auto to_list = [&to_size](const std::string& s) {
    std::vector<size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_size(item));
    return out;
  };

  const std::string& type = get("type");
  if (type == "crnn") {
    ModelConfig cfg;
    cfg.num_classes = to_size(get("num_classes"));
    cfg.input_bands = to_size(get("input_bands"));
    cfg.conv_filters = to_list(get("conv_filters"));
    cfg.conv_pools = to_list(get("conv_pools"));
    cfg.gru_units = to_size(get("gru_units"));
    cfg.strong_dense = to_list(get("strong_dense"));
    cfg.weak_dense = to_list(get("weak_dense"));
    cfg.dropout_rate = std::stod(get("dropout"));
    cfg.seed = std::stoull(get("seed"));
    return std::make_unique<CrnnModel>(cfg);
  }
  if (type == "baseline") {
    return std::make_unique<BaselineMlp>(
        to_size(get("num_classes")), to_size(get("input_bands")),
        to_size(get("context_frames")), std::stod(get("dropout")),
        std::stoull(get("seed")), to_list(get("hidden")));
  }
  throw DataError("checkpoint has unknown model type '" + type + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, kCkptMagic, 6) != 0)
    throw DataError("bad magic in checkpoint: " + path);
  const uint32_t version = read_u32(f);
  if (version != kCkptVersion)
    throw DataError("unsupported checkpoint format version " +
                    std::to_string(version) + " in " + path);

  const uint32_t block_len = read_u32(f);
  std::string block(block_len, '\0');
  f.read(block.data(), block_len);
  if (!f) throw DataError("truncated checkpoint config block: " + path);

  std::map<std::string, std::string> config;
  std::stringstream ss(block);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("malformed checkpoint config line: " + line);
    config[line.substr(0, eq)] = line.substr(eq + 1);
  }

  LoadedCheckpoint out;
  out.config = config;
  out.model = model_from_config(config);

  std::map<std::string, Tensor*> lookup;
  for (auto& [name, t] : all_tensors(*out.model)) lookup[name] = t;

  const uint32_t ntensors = read_u32(f);
  if (ntensors != lookup.size())
    throw DataError("checkpoint tensor count mismatch (file " +
                    std::to_string(ntensors) + ", model " +
                    std::to_string(lookup.size()) + "): " + path);
  for (uint32_t i = 0; i < ntensors; ++i) {
    const uint32_t name_len = read_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const uint32_t rank = read_u32(f);
    std::vector<size_t> dims(rank);
    size_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      dims[d] = read_u32(f);
      count *= dims[d];
    }
    auto it = lookup.find(name);
    if (it == lookup.end())
      throw DataError("checkpoint tensor '" + name +
                      "' not present in model: " + path);
    Tensor* t = it->second;
    if (t->shape() != dims)
      throw DataError("checkpoint tensor '" + name + "' shape mismatch: " +
                      path);
    for (size_t j = 0; j < count; ++j) {
      const uint32_t raw = read_u32(f);
      float x;
      std::memcpy(&x, &raw, 4);
      t->v(j) = x;
    }
  }
  return out;
}

}  // namespace wsed
