// svae: train, evaluate, sample and verify structured-uncertainty VAEs.
//
// Exit codes: 0 ok, 1 numeric fault or failed oracle check, 2 configuration
// error (bad keys or values, missing inputs, unreadable or mismatched
// checkpoints).

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "svae/errors.hpp"
#include "svae/evaluation.hpp"
#include "svae/rng.hpp"
#include "svae/run_config.hpp"
#include "svae/structured/gaussian.hpp"
#include "svae/structured/oracle_suite.hpp"
#include "svae/training.hpp"

namespace fs = std::filesystem;
using namespace svae;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("-c,--config", a.config_path, "key = value config file");
  cmd->add_option("-s,--set", a.sets, "override one key (key=value), repeatable");
  cmd->add_option("-o,--out", a.out_dir, "output directory (overrides out_dir)");
  cmd->add_option("--seed", a.seed, "seed (overrides seed)");
}

cli::RunConfig resolve(const CommonArgs& a, const std::string& fallback_config = "") {
  cli::RunConfig c;
  if (!a.config_path.empty()) {
    c = cli::load_config(a.config_path);
  } else if (!fallback_config.empty() && fs::exists(fallback_config)) {
    c = cli::load_config(fallback_config);
  }
  for (const auto& s : a.sets) cli::apply_assignment(c, s);
  if (!a.out_dir.empty()) c.out_dir = a.out_dir;
  if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
  return c;
}

void echo_config(const cli::RunConfig& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  std::ofstream out(fs::path(c.out_dir) / name, std::ios::trunc);
  out << cli::to_text(c);
}

/// Model fields of `c` must equal the checkpoint's; names the differing keys.
void check_compatible(const cli::RunConfig& c, const model::ModelConfig& ck, const std::string& path) {
  if (c.model == ck) return;
  auto other = c;
  other.model = ck;
  std::istringstream a(cli::to_text(c)), b(cli::to_text(other));
  std::string la, lb, diff;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la != lb) diff += "\n  config: " + la + "\n  checkpoint: " + lb;
  }
  throw ConfigError("config/checkpoint mismatch for '" + path + "':" + diff);
}

struct Loaded {
  cli::RunConfig config;
  train::CheckpointData checkpoint;
};

Loaded load_for_checkpoint(const CommonArgs& a, const std::string& ck_path) {
  if (!fs::exists(ck_path)) throw ConfigError("checkpoint: '" + ck_path + "' does not exist");
  Loaded l;
  try {
    l.checkpoint = train::read_checkpoint(ck_path);
  } catch (const FormatError& e) {
    throw ConfigError("checkpoint '" + ck_path + "': " + e.what());
  }
  const auto echoed = (fs::path(ck_path).parent_path() / "config.txt").string();
  const bool have_config = !a.config_path.empty() || fs::exists(echoed);
  l.config = resolve(a, echoed);
  if (have_config) {
    check_compatible(l.config, l.checkpoint.config, ck_path);
  } else {
    l.config.model = l.checkpoint.config;
  }
  return l;
}

std::unique_ptr<model::VaeModel> model_from(const Loaded& l) {
  auto m = std::make_unique<model::VaeModel>(l.checkpoint.config, l.checkpoint.seed);
  train::load_parameters(*m, l.checkpoint);
  return m;
}

int cmd_train(const CommonArgs& a, std::int64_t epochs, const std::string& resume) {
  auto c = resolve(a);
  if (epochs > 0) c.epochs = static_cast<std::size_t>(epochs);
  cli::validate(c);
  const auto ds = cli::load_dataset(c);
  echo_config(c, "config.txt");
  if (c.dataset == "synthetic") {
    const auto truth = data::gen_synthetic(cli::synthetic_spec(c), 1).truth;
    data::save_truth(truth, (fs::path(c.out_dir) / "synthetic_truth.bin").string());
  }
  model::VaeModel m(c.model, c.seed);
  train::Trainer t(m, ds, cli::schedule_of(c), cli::train_options(c));
  if (!resume.empty()) {
    try {
      t.resume(resume);
    } catch (const FormatError& e) {
      throw ConfigError("resume '" + resume + "': " + e.what());
    }
  }
  t.run();
  t.save_checkpoint((fs::path(c.out_dir) / "checkpoint_latest.bin").string());
  std::cout << "trained " << t.state().step << " steps over " << t.state().epoch << " epochs; checkpoint "
            << (fs::path(c.out_dir) / "checkpoint_latest.bin").string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& ck, std::int64_t k) {
  auto l = load_for_checkpoint(a, ck);
  auto& c = l.config;
  if (k > 0) c.eval_samples = static_cast<std::size_t>(k);
  cli::validate(c);
  const auto m = model_from(l);
  const auto ds = cli::load_dataset(c);
  eval::EvalOptions o;
  o.samples = c.eval_samples;
  o.seed = c.seed;
  const auto report = eval::evaluate(*m, ds, cli::eval_indices(c, ds.records.size()), o);
  echo_config(c, "eval_config.txt");
  std::ofstream table(fs::path(c.out_dir) / "eval_report.txt", std::ios::trunc);
  eval::write_table(table, report);
  eval::write_jsonl((fs::path(c.out_dir) / "eval_report.jsonl").string(), report);
  eval::write_table(std::cout, report);
  return 0;
}

int cmd_sample(const CommonArgs& a, const std::string& ck, std::size_t n) {
  auto l = load_for_checkpoint(a, ck);
  const auto& c = l.config;
  const auto m = model_from(l);
  const auto dir = (fs::path(c.out_dir) / "samples").string();
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix_seed(c.seed, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(c.model.latent_dim);
    for (auto& v : z) v = normal(rng);
    const auto p = eval::make_panels(*m, ad::Tensor::constant({1, z.size()}, z), nullptr, rng());
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample_%03zu", i);
    eval::write_panels(p, c.model.grayscale, dir, stem);
  }
  std::cout << "wrote " << n << " sample panel sets to " << dir << "\n";
  return 0;
}

int cmd_reconstruct(const CommonArgs& a, const std::string& ck, std::size_t n) {
  auto l = load_for_checkpoint(a, ck);
  auto& c = l.config;
  cli::validate(c);
  const auto m = model_from(l);
  const auto ds = cli::load_dataset(c);
  const auto idx = cli::eval_indices(c, ds.records.size());
  if (n > idx.size()) {
    throw ConfigError("n: asked for " + std::to_string(n) + " reconstructions, split has " +
                      std::to_string(idx.size()) + " images");
  }
  const auto dir = (fs::path(c.out_dir) / "reconstructions").string();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rgb = ds.records[idx[i]].rgb;
    const auto x = data::to_ycc(rgb, c.model.effective_chroma_factor());
    char stem[32];
    std::snprintf(stem, sizeof(stem), "recon_%03zu", i);
    eval::emit_visuals(*m, x, rgb, mix_seed(c.seed, idx[i]), dir, stem);
  }
  std::cout << "wrote " << n << " reconstruction panel sets to " << dir << "\n";
  return 0;
}

int cmd_oracle_check(std::uint64_t seed, bool inject) {
  structured::testing::set_logdet_sign_fault(inject);
  const auto report = structured::run_oracle_suites(seed);
  structured::testing::set_logdet_sign_fault(false);
  for (const auto& s : report.suites) {
    std::cout << std::left << std::setw(20) << s.name << " cases " << std::setw(7) << s.cases << " failures "
              << std::setw(5) << s.failures << " max error " << std::scientific << std::setprecision(3)
              << s.max_error << " (tolerance " << s.tolerance << ") " << std::defaultfloat
              << std::setprecision(3) << s.seconds << " s  " << (s.pass() ? "PASS" : "FAIL") << "\n";
    constexpr std::size_t kShown = 10;
    for (std::size_t i = 0; i < std::min(kShown, s.failing.size()); ++i) std::cout << "  " << s.failing[i] << "\n";
    if (s.failing.size() > kShown) std::cout << "  ... " << s.failing.size() - kShown << " more\n";
  }
  for (const auto& s : report.suites) {
    if (s.name.find("equivalence") != std::string::npos) {
      std::cout << "equivalence summary: " << s.cases - s.failures << "/" << s.cases
                << " instances within " << s.tolerance << " of the dense oracle\n";
    }
  }
  std::cout << (report.pass() ? "oracle-check passed" : "oracle-check FAILED") << "\n";
  return report.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"svae: VAEs with structured luma uncertainty"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, sample_args, recon_args;
  std::int64_t epochs = 0, eval_k = 0;
  std::string resume, eval_ck, sample_ck, recon_ck;
  std::size_t sample_n = 8, recon_n = 8;
  std::uint64_t oracle_seed = 2024;
  bool inject = false;

  auto* train = app.add_subcommand("train", "run the training schedule");
  add_common(train, train_args);
  train->add_option("--epochs", epochs, "total epochs (overrides epochs)");
  train->add_option("--resume", resume, "continue from a checkpoint");

  auto* ev = app.add_subcommand("eval", "NLL bound, KL and MSE of a checkpoint");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
  ev->add_option("-K,--samples", eval_k, "importance samples (overrides eval_samples, default 500)");

  auto* sample = app.add_subcommand("sample", "decode prior samples into mean / noise panels");
  add_common(sample, sample_args);
  sample->add_option("--checkpoint", sample_ck, "checkpoint file")->required();
  sample->add_option("-n", sample_n, "number of panel sets");

  auto* recon = app.add_subcommand("reconstruct", "input / mean / sample / residual panels");
  add_common(recon, recon_args);
  recon->add_option("--checkpoint", recon_ck, "checkpoint file")->required();
  recon->add_option("-n", recon_n, "number of panel sets");

  auto* oracle = app.add_subcommand("oracle-check", "structured Gaussian oracle and gradient suites");
  oracle->add_option("--seed", oracle_seed, "suite seed");
  oracle->add_flag("--inject-logdet-fault", inject, "flip the log-det sign (test hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(train_args, epochs, resume);
    if (*ev) return cmd_eval(eval_args, eval_ck, eval_k);
    if (*sample) return cmd_sample(sample_args, sample_ck, sample_n);
    if (*recon) return cmd_reconstruct(recon_args, recon_ck, recon_n);
    if (*oracle) return cmd_oracle_check(oracle_seed, inject);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
