#include "svae/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "svae/errors.hpp"

namespace svae::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string bad(const std::string& key, const std::string& value, const std::string& want) {
  return key + ": expected " + want + ", got '" + value + "'";
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw ConfigError(bad(key, v, "a non-negative integer"));
  return out;
}

double to_f64(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw ConfigError(bad(key, v, "a number"));
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(bad(key, v, "true or false"));
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_u64(key, trim(item)));
  if (out.empty()) throw ConfigError(bad(key, v, "a comma-separated list of integers"));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SVAE_U64(NAME, MEMBER, HELP)                                                              \
  Field {                                                                                         \
    {NAME, HELP}, [](RunConfig& c, const std::string& v) { c.MEMBER = to_u64(NAME, v); },         \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                               \
  }
#define SVAE_F64(NAME, MEMBER, HELP)                                                              \
  Field {                                                                                         \
    {NAME, HELP}, [](RunConfig& c, const std::string& v) { c.MEMBER = to_f64(NAME, v); },         \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                                          \
  }
#define SVAE_BOOL(NAME, MEMBER, HELP)                                                             \
  Field {                                                                                         \
    {NAME, HELP}, [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(NAME, v); },        \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                                          \
  }
#define SVAE_STR(NAME, MEMBER, HELP)                                                              \
  Field {                                                                                         \
    {NAME, HELP}, [](RunConfig& c, const std::string& v) { c.MEMBER = v; },                       \
        [](const RunConfig& c) { return c.MEMBER; }                                               \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SVAE_U64("image_size", model.image_size, "square image side in pixels"),
      SVAE_U64("latent_dim", model.latent_dim, "latent dimension d_z"),
      Field{{"channels", "encoder conv widths, comma separated (decoder mirrors)"},
            [](RunConfig& c, const std::string& v) { c.model.channels = to_list("channels", v); },
            [](const RunConfig& c) {
              std::string s;
              for (auto ch : c.model.channels) s += (s.empty() ? "" : ",") + std::to_string(ch);
              return s;
            }},
      SVAE_U64("dense_units", model.dense_units, "width of the dense layers"),
      SVAE_U64("patch_size", model.patch_size, "odd neighbourhood side n_f of the precision factor"),
      SVAE_U64("dilation", model.dilation, "neighbour spacing of the factor pattern"),
      SVAE_U64("basis_size", model.basis_size, "learned basis size, 0 = direct coefficients"),
      Field{{"likelihood", "spherical | diagonal | structured"},
            [](RunConfig& c, const std::string& v) { c.model.likelihood = model::parse_likelihood(v); },
            [](const RunConfig& c) { return model::to_string(c.model.likelihood); }},
      Field{{"chroma_sigma", "scalar | per_pixel chroma standard deviation"},
            [](RunConfig& c, const std::string& v) { c.model.chroma_sigma = model::parse_chroma_sigma(v); },
            [](const RunConfig& c) { return model::to_string(c.model.chroma_sigma); }},
      SVAE_BOOL("grayscale", model.grayscale, "model luma only"),
      SVAE_U64("chroma_factor", model.chroma_factor, "chroma subsampling, 0 = chroma at 16x16"),
      SVAE_F64("beta", model.beta, "KL weight"),
      SVAE_F64("alpha", model.alpha, "weight of the squared mean error term"),
      SVAE_F64("gamma", model.gamma, "L1 weight on off-diagonal factor entries"),
      SVAE_U64("epochs", epochs, "total epochs over all phases"),
      SVAE_U64("pretrain_epochs", pretrain_epochs, "spherical pretraining epochs (structured target)"),
      SVAE_U64("warmup_epochs", warmup_epochs, "covariance-branch-only epochs (structured target)"),
      SVAE_U64("batch_size", batch_size, "minibatch size"),
      SVAE_F64("learning_rate", learning_rate, "Adam learning rate"),
      SVAE_U64("seed", seed, "seed for initialization, data order and sampling"),
      SVAE_BOOL("flip", flip, "random left-right flips"),
      SVAE_F64("validation_fraction", validation_fraction, "share of records held out (the last ones)"),
      SVAE_U64("max_steps", max_steps, "stop after this many steps, 0 = full schedule"),
      SVAE_STR("dataset", dataset, "folder | synthetic"),
      SVAE_STR("data_dir", data_dir, "image folder (dataset = folder)"),
      SVAE_U64("limit", limit, "maximum images loaded from data_dir, 0 = all"),
      SVAE_U64("synthetic_count", synthetic_count, "number of synthetic images"),
      SVAE_STR("synthetic_family", synthetic_family, "smooth | shapes | texture"),
      SVAE_F64("synthetic_noise_sigma", synthetic_noise_sigma, "luma noise scale in [0,255] units"),
      SVAE_F64("synthetic_noise_correlation", synthetic_noise_correlation, "neighbour coupling of the noise"),
      SVAE_F64("synthetic_chroma_sigma", synthetic_chroma_sigma, "chroma noise std in [0,255] units"),
      SVAE_U64("synthetic_seed", synthetic_seed, "seed of the synthetic generator"),
      SVAE_STR("out_dir", out_dir, "output directory"),
      SVAE_U64("eval_samples", eval_samples, "importance samples K for the NLL bound"),
      SVAE_STR("eval_split", eval_split, "validation | all"),
      SVAE_U64("eval_limit", eval_limit, "maximum images evaluated, 0 = all"),
      SVAE_BOOL("verbose", verbose, "per-epoch progress on stderr"),
  };
  return table;
}

#undef SVAE_U64
#undef SVAE_F64
#undef SVAE_BOOL
#undef SVAE_STR

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key.name == key) {
      try {
        f.set(config, value);
      } catch (const ConfigError& e) {
        const std::string msg = e.what();
        if (msg.rfind(key, 0) == 0) throw;
        throw ConfigError(key + ": " + msg);
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_assignment(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  apply(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  for (std::size_t n = 1; std::getline(ss, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(config, line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  apply_text(c, ss.str(), path);
  return c;
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key.name + " = " + f.get(config) + "\n";
  return out;
}

void validate(const RunConfig& c) {
  c.model.validate();
  if (c.dataset != "folder" && c.dataset != "synthetic") {
    throw ConfigError(bad("dataset", c.dataset, "folder or synthetic"));
  }
  if (c.dataset == "folder" && c.data_dir.empty()) {
    throw ConfigError("data_dir: required when dataset = folder");
  }
  if (c.dataset == "synthetic") {
    data::parse_mean_family(c.synthetic_family);
    if (c.synthetic_count == 0) throw ConfigError("synthetic_count must be positive");
  }
  if (c.eval_split != "validation" && c.eval_split != "all") {
    throw ConfigError(bad("eval_split", c.eval_split, "validation or all"));
  }
  if (c.eval_samples == 0) throw ConfigError("eval_samples must be at least 1");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  schedule_of(c);
}

data::SyntheticSpec synthetic_spec(const RunConfig& c) {
  data::SyntheticSpec s;
  s.size = c.model.image_size;
  s.family = data::parse_mean_family(c.synthetic_family);
  s.grayscale = c.model.grayscale;
  s.noise_sigma = c.synthetic_noise_sigma;
  s.noise_correlation = c.synthetic_noise_correlation;
  s.chroma_sigma = c.synthetic_chroma_sigma;
  s.seed = c.synthetic_seed;
  return s;
}

data::Dataset load_dataset(const RunConfig& c) {
  if (c.dataset == "synthetic") return data::gen_synthetic(synthetic_spec(c), c.synthetic_count).dataset;
  if (c.data_dir.empty()) throw ConfigError("data_dir: required when dataset = folder");
  if (!std::filesystem::is_directory(c.data_dir)) {
    throw ConfigError("data_dir: '" + c.data_dir + "' is not a directory");
  }
  auto ds = data::load_folder(c.data_dir, c.model.image_size, c.limit);
  ds.grayscale = c.model.grayscale;
  return ds;
}

train::Schedule schedule_of(const RunConfig& c) {
  return train::default_schedule(c.model.likelihood, c.epochs, c.pretrain_epochs, c.warmup_epochs);
}

train::TrainOptions train_options(const RunConfig& c) {
  train::TrainOptions o;
  o.batch_size = c.batch_size;
  o.learning_rate = c.learning_rate;
  o.seed = c.seed;
  o.flip = c.flip;
  o.validation_fraction = c.validation_fraction;
  o.max_steps = c.max_steps;
  o.out_dir = c.out_dir;
  o.verbose = c.verbose;
  return o;
}

std::vector<std::size_t> eval_indices(const RunConfig& c, std::size_t n) {
  std::size_t begin = 0;
  if (c.eval_split == "validation") {
    const auto n_val = static_cast<std::size_t>(std::floor(c.validation_fraction * static_cast<double>(n)));
    if (n_val == 0) throw ConfigError("eval_split: validation split is empty (validation_fraction too small)");
    begin = n - n_val;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = begin; i < n && (c.eval_limit == 0 || out.size() < c.eval_limit); ++i) out.push_back(i);
  return out;
}

}  // namespace svae::cli
