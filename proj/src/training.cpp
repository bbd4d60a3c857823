#include "svae/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "svae/ad/ops.hpp"
#include "svae/binary_io.hpp"
#include "svae/errors.hpp"
#include "svae/rng.hpp"

namespace svae::train {

namespace fs = std::filesystem;
using model::Likelihood;

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4b435653;  // "SVCK"
constexpr std::uint32_t kCheckpointVersion = 1;

// Stream tags for mix_seed.
constexpr std::uint64_t kOrderStream = 1, kStepStream = 2, kEvalStream = 3;

void write_config(io::ByteWriter& w, const model::ModelConfig& c) {
  w.u64(c.image_size);
  w.u64(c.latent_dim);
  w.u64(c.channels.size());
  for (auto ch : c.channels) w.u64(ch);
  w.u64(c.dense_units);
  w.u64(c.patch_size);
  w.u64(c.dilation);
  w.u64(c.basis_size);
  w.u8(static_cast<std::uint8_t>(c.likelihood));
  w.u8(static_cast<std::uint8_t>(c.chroma_sigma));
  w.u8(c.grayscale ? 1 : 0);
  w.u64(c.chroma_factor);
  w.f64(c.beta);
  w.f64(c.alpha);
  w.f64(c.gamma);
}

model::ModelConfig read_config(io::ByteReader& r) {
  model::ModelConfig c;
  c.image_size = r.u64();
  c.latent_dim = r.u64();
  c.channels.resize(r.u64());
  for (auto& ch : c.channels) ch = r.u64();
  c.dense_units = r.u64();
  c.patch_size = r.u64();
  c.dilation = r.u64();
  c.basis_size = r.u64();
  const auto lik = r.u8(), cs = r.u8();
  if (lik > 2 || cs > 1) throw FormatError("checkpoint model config is corrupt");
  c.likelihood = static_cast<Likelihood>(lik);
  c.chroma_sigma = static_cast<model::ChromaSigma>(cs);
  c.grayscale = r.u8() != 0;
  c.chroma_factor = r.u64();
  c.beta = r.f64();
  c.alpha = r.f64();
  c.gamma = r.f64();
  return c;
}

bool same_schedule(const Schedule& a, const Schedule& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].epochs != b[i].epochs || a[i].likelihood != b[i].likelihood ||
        a[i].trainable != b[i].trainable) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::string to_string(ParamSet set) {
  switch (set) {
    case ParamSet::All: return "all";
    case ParamSet::CovarianceOnly: return "covariance-only";
    case ParamSet::AllButCovariance: return "all-but-covariance";
    case ParamSet::AllButYSigma: return "all-but-y-sigma";
  }
  return "all";
}

bool in_param_set(ParamSet set, const std::string& name) {
  switch (set) {
    case ParamSet::All: return true;
    case ParamSet::CovarianceOnly: return model::is_cov_param(name);
    case ParamSet::AllButCovariance: return !model::is_cov_param(name);
    case ParamSet::AllButYSigma: return name.rfind("head.y_sigma.", 0) != 0;
  }
  return true;
}

Schedule default_schedule(Likelihood target, std::size_t total, std::size_t pretrain,
                          std::size_t warmup) {
  if (total == 0) throw ConfigError("epochs must be positive");
  if (target != Likelihood::Structured) {
    return {{"train", total, target, ParamSet::AllButCovariance}};
  }
  if (pretrain == 0 || warmup == 0 || total <= pretrain + warmup) {
    throw ConfigError("epochs (" + std::to_string(total) + ") must exceed pretrain_epochs (" +
                      std::to_string(pretrain) + ") + warmup_epochs (" + std::to_string(warmup) +
                      "), both positive");
  }
  return {{"pretrain", pretrain, Likelihood::Spherical, ParamSet::AllButCovariance},
          {"warmup", warmup, Likelihood::Structured, ParamSet::CovarianceOnly},
          {"joint", total - pretrain - warmup, Likelihood::Structured, ParamSet::AllButYSigma}};
}

void validate_schedule(const Schedule& schedule, const model::ModelConfig& config) {
  if (schedule.empty()) throw ConfigError("training schedule has no phases");
  for (const auto& p : schedule) {
    if (p.epochs == 0) throw ConfigError("phase '" + p.name + "' has zero epochs");
    if (p.likelihood == Likelihood::Structured && config.likelihood != Likelihood::Structured) {
      throw ConfigError("phase '" + p.name + "' needs the structured likelihood");
    }
  }
}

std::size_t total_epochs(const Schedule& schedule) {
  std::size_t n = 0;
  for (const auto& p : schedule) n += p.epochs;
  return n;
}

std::size_t phase_of_epoch(const Schedule& schedule, std::size_t epoch) {
  std::size_t end = 0;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    end += schedule[i].epochs;
    if (epoch < end) return i;
  }
  return schedule.size() - 1;
}

std::string format_metrics(const StepMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%llu\t%llu\t%s\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g",
                static_cast<unsigned long long>(m.step), static_cast<unsigned long long>(m.epoch),
                m.phase.c_str(), m.loss, m.nll, m.kl, m.alpha_term, m.gamma_term);
  return buf;
}

Trainer::Trainer(model::VaeModel& model, const data::Dataset& dataset, Schedule schedule,
                 TrainOptions options)
    : model_(model), dataset_(dataset), schedule_(std::move(schedule)), options_(std::move(options)) {
  const auto& cfg = model_.config();
  validate_schedule(schedule_, cfg);
  if (options_.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(options_.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(options_.validation_fraction >= 0.0 && options_.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  if (dataset_.records.empty()) throw ConfigError("dataset is empty");
  if (dataset_.size != cfg.image_size) {
    throw ConfigError("dataset images are " + std::to_string(dataset_.size) + " pixels, image_size is " +
                      std::to_string(cfg.image_size));
  }
  state_.adam.learning_rate = options_.learning_rate;

  const auto n = dataset_.records.size();
  const auto n_val = static_cast<std::size_t>(std::floor(options_.validation_fraction * n));
  for (std::size_t i = 0; i < n; ++i) (i < n - n_val ? train_ : validation_).push_back(i);

  const auto f = cfg.effective_chroma_factor();
  for (const auto& r : dataset_.records) {
    plain_.push_back(data::to_ycc(r.rgb, f));
    flipped_.push_back(options_.flip ? data::to_ycc(data::flip_horizontal(r.rgb), f) : plain_.back());
  }
}

const color::YccImage& Trainer::image(std::size_t index, bool flipped) const {
  return flipped ? flipped_.at(index) : plain_.at(index);
}

void Trainer::epoch_plan(std::uint64_t epoch, std::vector<std::size_t>& order,
                         std::vector<char>& flips) const {
  std::mt19937_64 rng(mix_seed(mix_seed(options_.seed, kOrderStream), epoch));
  order = train_;
  std::shuffle(order.begin(), order.end(), rng);
  flips.assign(order.size(), 0);
  if (options_.flip) {
    std::bernoulli_distribution coin(0.5);
    for (auto& f : flips) f = coin(rng) ? 1 : 0;
  }
}

void Trainer::apply_mask(std::size_t phase) const {
  const auto set = schedule_[phase].trainable;
  model_.params().set_trainable([set](const std::string& name) { return in_param_set(set, name); });
}

double Trainer::evaluate_loss(const std::vector<std::size_t>& indices, Likelihood mode) const {
  if (indices.empty()) return 0.0;
  ad::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t begin = 0; begin < indices.size(); begin += options_.batch_size) {
    const auto end = std::min(indices.size(), begin + options_.batch_size);
    std::vector<const color::YccImage*> imgs;
    std::vector<char> flips(end - begin, 0);
    for (std::size_t i = begin; i < end; ++i) imgs.push_back(&plain_[indices[i]]);
    const auto batch = model::make_batch(model_.config(), imgs);
    model::LossOptions opts;
    if (options_.batch_options) {
      opts = options_.batch_options(std::span<const std::size_t>(indices).subspan(begin, end - begin), flips);
    }
    const auto seed = mix_seed(mix_seed(options_.seed, kEvalStream), begin);
    total += model::loss(model_, batch, seed, mode, opts).total.item() * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(indices.size());
}

std::string Trainer::checkpoint_name(std::uint64_t epoch) const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%04llu.bin", static_cast<unsigned long long>(epoch));
  return (fs::path(options_.out_dir) / buf).string();
}

void Trainer::append_metrics(const StepMetrics& m) { metrics_.push_back(m); }

void Trainer::run() {
  const auto epochs = total_epochs(schedule_);
  std::ofstream log;
  if (!options_.out_dir.empty()) {
    fs::create_directories(options_.out_dir);
    const auto path = (fs::path(options_.out_dir) / "metrics.tsv").string();
    if (state_.step == 0) {
      log.open(path, std::ios::trunc);
      log << kMetricsHeader << "\n";
    } else {
      // Resumed: keep only lines written before the checkpoint.
      std::ifstream in(path);
      std::vector<std::string> keep;
      std::string line;
      while (std::getline(in, line)) {
        if (keep.empty() || std::stoull(line.substr(0, line.find('\t'))) < state_.step) keep.push_back(line);
      }
      in.close();
      log.open(path, std::ios::trunc);
      if (keep.empty()) keep.push_back(kMetricsHeader);
      for (const auto& l : keep) log << l << "\n";
    }
  }

  std::vector<std::size_t> order;
  std::vector<char> flips;
  while (state_.epoch < epochs) {
    const auto phase = phase_of_epoch(schedule_, state_.epoch);
    const auto& ph = schedule_[phase];
    apply_mask(phase);
    epoch_plan(state_.epoch, order, flips);
    const auto batches = (order.size() + options_.batch_size - 1) / options_.batch_size;

    while (state_.step_in_epoch < batches) {
      if (options_.max_steps != 0 && state_.step >= options_.max_steps) {
        if (log.is_open()) log.flush();
        return;
      }
      const auto begin = state_.step_in_epoch * options_.batch_size;
      const auto end = std::min(order.size(), begin + options_.batch_size);
      std::vector<const color::YccImage*> imgs;
      for (std::size_t i = begin; i < end; ++i) imgs.push_back(&image(order[i], flips[i] != 0));
      const auto batch = model::make_batch(model_.config(), imgs);
      model::LossOptions opts;
      if (options_.batch_options) {
        opts = options_.batch_options(std::span<const std::size_t>(order).subspan(begin, end - begin),
                                      std::span<const char>(flips).subspan(begin, end - begin));
      }

      StepMetrics m;
      try {
        const auto seed = mix_seed(mix_seed(options_.seed, kStepStream), state_.step);
        auto terms = model::loss(model_, batch, seed, ph.likelihood, opts);
        ad::backward(terms.total);
        ad::adam_step(model_.params(), state_.adam);
        m = {state_.step, state_.epoch, ph.name, terms.total.item(), terms.nll, terms.kl,
             terms.alpha_term, terms.gamma_term};
      } catch (const NumericFault& e) {
        model_.params().zero_grad();
        throw NumericFault("step " + std::to_string(state_.step) + " (epoch " + std::to_string(state_.epoch) +
                           ", phase " + ph.name + "): " + e.what());
      }
      if (log.is_open()) log << format_metrics(m) << "\n";
      append_metrics(m);
      ++state_.step;
      ++state_.step_in_epoch;
    }

    if (!validation_.empty()) {
      const double v = evaluate_loss(validation_, ph.likelihood);
      state_.best_validation_loss = std::min(state_.best_validation_loss, v);
      if (options_.verbose) {
        std::cerr << "epoch " << state_.epoch + 1 << "/" << epochs << " [" << ph.name << "] train loss "
                  << metrics_.back().loss << " validation loss " << v << "\n";
      }
    } else if (options_.verbose) {
      std::cerr << "epoch " << state_.epoch + 1 << "/" << epochs << " [" << ph.name << "] train loss "
                << metrics_.back().loss << "\n";
    }
    ++state_.epoch;
    state_.step_in_epoch = 0;
    if (log.is_open()) log.flush();
    if (!options_.out_dir.empty() && options_.checkpoint_each_epoch) {
      save_checkpoint(checkpoint_name(state_.epoch));
      save_checkpoint((fs::path(options_.out_dir) / "checkpoint_latest.bin").string());
    }
    if (options_.on_epoch_end) options_.on_epoch_end(state_, model_);
  }
}

void Trainer::save_checkpoint(const std::string& path) const {
  CheckpointData data;
  data.config = model_.config();
  data.schedule = schedule_;
  data.state = state_;
  data.seed = options_.seed;
  data.batch_size = options_.batch_size;
  data.validation_fraction = options_.validation_fraction;
  data.flip = options_.flip;
  data.params = model_.params().entries();
  io::write_file_atomic(path, encode_checkpoint(data));
}

void Trainer::resume(const std::string& checkpoint_path) {
  const auto data = read_checkpoint(checkpoint_path);
  if (!(data.config == model_.config())) {
    throw ConfigError("checkpoint '" + checkpoint_path + "' was written for a different model config");
  }
  if (!same_schedule(data.schedule, schedule_)) {
    throw ConfigError("checkpoint '" + checkpoint_path + "' was written for a different schedule");
  }
  if (data.seed != options_.seed || data.batch_size != options_.batch_size ||
      data.validation_fraction != options_.validation_fraction || data.flip != options_.flip ||
      data.state.adam.learning_rate != options_.learning_rate) {
    throw ConfigError("checkpoint '" + checkpoint_path + "' was written with different training options");
  }
  load_parameters(model_, data);
  state_ = data.state;
  metrics_.clear();
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& d) {
  io::ByteWriter b;
  write_config(b, d.config);
  b.u64(d.schedule.size());
  for (const auto& p : d.schedule) {
    b.str(p.name);
    b.u64(p.epochs);
    b.u8(static_cast<std::uint8_t>(p.likelihood));
    b.u8(static_cast<std::uint8_t>(p.trainable));
  }
  b.u64(d.seed);
  b.u64(d.batch_size);
  b.f64(d.validation_fraction);
  b.u8(d.flip ? 1 : 0);

  const auto& s = d.state;
  b.u64(s.epoch);
  b.u64(s.step);
  b.u64(s.step_in_epoch);
  b.f64(s.best_validation_loss);
  b.f64(s.adam.learning_rate);
  b.f64(s.adam.beta1);
  b.f64(s.adam.beta2);
  b.f64(s.adam.epsilon);
  b.u64(s.adam.step);

  b.u64(d.params.size());
  for (const auto& [name, t] : d.params) {
    b.str(name);
    b.u64(t.rank());
    for (auto dim : t.shape()) b.u64(dim);
    b.f64s(t.values());
  }
  b.u64(s.adam.moments.size());
  for (const auto& [name, m] : s.adam.moments) {
    b.str(name);
    b.u64(m.first.size());
    b.f64s(m.first);
    b.f64s(m.second);
  }

  io::ByteWriter out;
  out.u32(kCheckpointMagic);
  out.u32(kCheckpointVersion);
  out.u64(b.bytes().size());
  out.raw(b.bytes());
  out.u32(io::crc32(b.bytes()));
  return out.take();
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  if (in.u32() != kCheckpointMagic) throw FormatError("not a checkpoint file");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto size = in.u64();
  if (size > in.remaining()) throw FormatError("truncated checkpoint");
  const auto body = in.raw(size);
  if (in.u32() != io::crc32(body)) throw FormatError("checkpoint checksum mismatch (corrupted payload)");

  io::ByteReader b(body);
  CheckpointData d;
  d.config = read_config(b);
  d.schedule.resize(b.u64());
  for (auto& p : d.schedule) {
    p.name = b.str();
    p.epochs = b.u64();
    const auto lik = b.u8(), set = b.u8();
    if (lik > 2 || set > 3) throw FormatError("checkpoint schedule is corrupt");
    p.likelihood = static_cast<Likelihood>(lik);
    p.trainable = static_cast<ParamSet>(set);
  }
  d.seed = b.u64();
  d.batch_size = b.u64();
  d.validation_fraction = b.f64();
  d.flip = b.u8() != 0;

  auto& s = d.state;
  s.epoch = b.u64();
  s.step = b.u64();
  s.step_in_epoch = b.u64();
  s.best_validation_loss = b.f64();
  s.adam.learning_rate = b.f64();
  s.adam.beta1 = b.f64();
  s.adam.beta2 = b.f64();
  s.adam.epsilon = b.f64();
  s.adam.step = b.u64();

  const auto n_params = b.u64();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    auto name = b.str();
    ad::Shape shape(b.u64());
    for (auto& dim : shape) dim = b.u64();
    auto values = b.f64s(ad::shape_numel(shape));
    d.params.emplace_back(std::move(name), ad::Tensor::parameter(std::move(shape), std::move(values)));
  }
  const auto n_moments = b.u64();
  for (std::uint64_t i = 0; i < n_moments; ++i) {
    auto name = b.str();
    const auto len = b.u64();
    ad::AdamMoments m;
    m.first = b.f64s(len);
    m.second = b.f64s(len);
    s.adam.moments.emplace(std::move(name), std::move(m));
  }
  if (!b.done()) throw FormatError("trailing bytes in checkpoint");
  return d;
}

CheckpointData read_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

void load_parameters(model::VaeModel& model, const CheckpointData& data) {
  auto& store = model.params();
  if (data.params.size() != store.size()) {
    throw ConfigError("checkpoint has " + std::to_string(data.params.size()) + " parameters, model has " +
                      std::to_string(store.size()));
  }
  for (const auto& [name, t] : data.params) {
    if (!store.contains(name)) throw ConfigError("checkpoint parameter '" + name + "' is not in the model");
    auto& dst = store.at(name);
    if (dst.shape() != t.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + ad::shape_string(t.shape()) +
                        ", model expects " + ad::shape_string(dst.shape()));
    }
    auto out = dst.mutable_values();
    std::copy(t.values().begin(), t.values().end(), out.begin());
  }
}

}  // namespace svae::train
