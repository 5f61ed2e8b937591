#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "poex/checkpoint.hpp"
#include "poex/config.hpp"
#include "poex/experiments.hpp"
#include "poex/idx.hpp"
#include "poex/metrics.hpp"
#include "poex/model.hpp"
#include "poex/png.hpp"
#include "poex/train.hpp"
#include "poex/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheckpoint = 4;

std::string resolve_data_path(const std::string& path) {
  if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
  if (const char* dir = std::getenv("POEX_DATA_DIR"))
    return (std::filesystem::path(dir) / path).string();
  return path;
}

int thread_count() {
  if (const char* t = std::getenv("POEX_THREADS")) {
    int n = std::atoi(t);
    if (n > 0) return n;
  }
  return 1;
}

// ---- generate-data ----

int cmd_generate_data(const std::string& kind, const std::string& out, int count,
                      std::uint64_t seed, int k_tasks, double corr) {
  std::vector<poex::AnySet> sets;
  poex::Rng rng(seed);
  if (kind == "mtgp") {
    poex::MtgpSpec spec;
    spec.k_tasks = k_tasks;
    spec.c = corr;
    for (int i = 0; i < count; ++i) sets.emplace_back(poex::generate_mtgp(spec, rng).fs);
  } else if (kind == "biased-cloud") {
    poex::BiasedCloudSpec spec;
    for (int i = 0; i < count; ++i) sets.emplace_back(poex::generate_biased_cloud(spec, rng).biased);
  } else if (kind == "glyph-sets") {
    auto images = poex::load_idx_images(resolve_data_path("digits-images.idx3-ubyte"));
    auto raw_labels = poex::load_idx_labels(resolve_data_path("digits-labels.idx1-ubyte"));
    int n = static_cast<int>(images.images.size());
    Eigen::MatrixXd flat(n, images.h * images.w);
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < images.h; ++r)
        for (int c = 0; c < images.w; ++c)
          flat(i, r * images.w + c) = images.images[i](r, c);
    std::vector<int> labels(raw_labels.begin(), raw_labels.end());
    std::vector<int> classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::array<int, 3> grid = {images.h, images.w, 1};
    auto glyphs = poex::glyph_sets(flat, labels, classes, 5, count, grid, rng);
    for (auto& g : glyphs) sets.emplace_back(std::move(g));
  } else {
    std::cerr << "unknown generator \"" << kind << "\" (mtgp|biased-cloud|glyph-sets)\n";
    return kExitConfig;
  }
  poex::write_jsonl_file(sets, out);
  std::cout << "wrote " << sets.size() << " sets to " << out << "\n";
  return kExitOk;
}

// ---- train ----

poex::MaskStrategy default_mask_for(const std::string& task, const poex::ModelConfig& mc) {
  if (task == "impute" && mc.grid) return poex::SquareMask{(*mc.grid)[0] / 2, (*mc.grid)[1] / 2};
  if (task == "impute") return poex::BernoulliMask{0.5};
  if (task == "expand") return poex::ExpansionSplit{2};
  if (task == "np") return poex::ContextTarget{5};
  if (task == "mtnp") return poex::FunctionSubset{10};
  throw poex::ConfigError("unknown task \"" + task + "\" (impute|expand|np|mtnp)");
}

int cmd_train(const std::string& config_path, const std::string& task, std::uint64_t seed,
              const std::string& out_dir, bool idp, const std::string& resume) {
  poex::ExperimentConfig cfg = poex::load_experiment_config(config_path);
  if (seed != 0) {
    cfg.model.seed = seed;
    cfg.train.seed = seed;
  }
  if (idp) cfg.model.idp = true;
  if (!task.empty()) cfg.mask = default_mask_for(task, cfg.model);

  auto dataset = poex::read_jsonl_file(resolve_data_path(cfg.data));
  if (dataset.empty()) {
    std::cerr << "dataset " << cfg.data << " is empty\n";
    return kExitConfig;
  }

  std::unique_ptr<poex::PoexModel> model;
  int start_step = 0;
  if (!resume.empty()) {
    auto loaded = poex::load_model(resume);
    model = std::move(loaded.model);
    start_step = loaded.step;
  } else {
    model = std::make_unique<poex::PoexModel>(cfg.model);
  }

  auto result = poex::train_model(*model, dataset, cfg.train, cfg.mask, out_dir, start_step);
  const auto& last = result.metrics.back();
  std::cout << "trained " << cfg.train.steps << " steps, final elbo " << last.elbo
            << ", checkpoint " << result.checkpoint_path << "\n";
  std::vector<double> curve;
  for (const auto& r : result.metrics) curve.push_back(r.elbo);
  poex::write_png_plot(out_dir + "/elbo.png", {curve});
  return kExitOk;
}

// ---- eval ----

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& task, std::uint64_t seed, const std::string& out) {
  auto loaded = poex::load_model(checkpoint);
  auto& model = *loaded.model;
  auto dataset = poex::read_jsonl_file(resolve_data_path(data_path));
  poex::Rng rng(seed);

  nlohmann::json report;
  report["checkpoint"] = checkpoint;
  report["n_sets"] = dataset.size();
  double sum_psnr = 0, sum_ll = 0;
  int n_psnr = 0, n_ll = 0;

  for (const auto& any : dataset) {
    if (task == "mtnp") {
      const auto& fs = std::get<poex::FunctionSet>(any);
      auto parts = model.elbo(fs, 4, seed);
      sum_ll += parts.elbo;
      ++n_ll;
      continue;
    }
    const auto& s = std::get<poex::MaskedSet>(any);
    Eigen::MatrixXd filled = model.impute(s, rng, true);
    for (int i = 0; i < s.size(); ++i) {
      const auto& e = s.elements[i];
      if (e.mask.query.sum() == 0) continue;
      double p = poex::psnr(e.values, filled.row(i).transpose(), e.mask.query);
      if (std::isfinite(p)) {
        sum_psnr += p;
        ++n_psnr;
      }
    }
    if (model.config().nets.latent_dim <= 2) {
      sum_ll += model.marginal_loglik_quadrature(s, 120);
      ++n_ll;
    }
  }
  if (n_psnr) report["psnr_mean"] = sum_psnr / n_psnr;
  if (n_ll) report[task == "mtnp" ? "elbo_mean" : "loglik_mean"] = sum_ll / n_ll;

  std::string text = report.dump(2);
  if (out.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream f(out);
    f << text << "\n";
    std::cout << "wrote " << out << "\n";
  }
  return kExitOk;
}

// ---- compress ----

int cmd_compress(const std::string& checkpoint, const std::string& data_path, int budget,
                 const std::string& out) {
  auto loaded = poex::load_model(checkpoint);
  auto dataset = poex::read_jsonl_file(resolve_data_path(data_path));
  std::vector<poex::AnySet> kept;
  for (const auto& any : dataset) {
    const auto& s = std::get<poex::MaskedSet>(any);
    auto sel = poex::greedy_compress(s, budget, *loaded.model);
    poex::MaskedSet small;
    small.d = s.d;
    small.grid = s.grid;
    for (int i : sel) small.elements.push_back(s.elements[i]);
    kept.emplace_back(std::move(small));
  }
  poex::write_jsonl_file(kept, out);
  std::cout << "compressed " << dataset.size() << " sets to budget " << budget << " -> " << out
            << "\n";
  return kExitOk;
}

// ---- verify / report ----

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  auto results = poex::run_verify_suite(suite, seed);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : 1;
}

int cmd_report(const std::string& metrics_csv, const std::string& out) {
  std::ifstream f(metrics_csv);
  if (!f) {
    std::cerr << "cannot open " << metrics_csv << "\n";
    return kExitConfig;
  }
  std::string line;
  std::getline(f, line);  // header
  std::vector<double> elbo, recon, kl;
  while (std::getline(f, line)) {
    double v[4];
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3]) == 4) {
      elbo.push_back(v[1]);
      recon.push_back(v[2]);
      kl.push_back(v[3]);
    }
  }
  if (elbo.size() < 2) {
    std::cerr << metrics_csv << " holds fewer than two steps\n";
    return kExitConfig;
  }
  poex::write_png_plot(out, {elbo, recon, kl});
  std::cout << "wrote " << out << " (" << elbo.size() << " steps, final elbo " << elbo.back()
            << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(thread_count());

  CLI::App app{"poex: conditional latent-variable models over partially observed sets"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Write a synthetic JSONL dataset");
  std::string gen_kind, gen_out = "data.jsonl";
  int gen_count = 64, gen_tasks = 5;
  double gen_corr = 0.9;
  std::uint64_t gen_seed = 1;
  gen->add_option("--kind", gen_kind, "mtgp | biased-cloud | glyph-sets")->required();
  gen->add_option("--out", gen_out, "output JSONL path");
  gen->add_option("--count", gen_count, "number of sets");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--tasks", gen_tasks, "mtgp: number of tasks");
  gen->add_option("--corr", gen_corr, "mtgp: cross-task correlation");

  // train
  auto* tr = app.add_subcommand("train", "Train a model from a JSON config");
  std::string tr_config, tr_task, tr_out = "run", tr_resume;
  std::uint64_t tr_seed = 0;
  bool tr_idp = false;
  tr->add_option("--config", tr_config, "experiment config JSON")->required();
  tr->add_option("--task", tr_task, "impute | expand | np | mtnp (overrides the config mask)");
  tr->add_option("--seed", tr_seed, "override both model and train seeds (0 = keep config)");
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->add_flag("--idp", tr_idp, "ablation: decoder ignores the latent context");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_task = "impute", ev_out;
  std::uint64_t ev_seed = 1;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--task", ev_task, "impute | expand | np | mtnp");
  ev->add_option("--seed", ev_seed);
  ev->add_option("--out", ev_out, "write the JSON report here instead of stdout");

  // compress
  auto* cp = app.add_subcommand("compress", "Greedy likelihood-guided subset selection");
  std::string cp_ckpt, cp_data, cp_out = "compressed.jsonl";
  int cp_budget = 16;
  cp->add_option("--checkpoint", cp_ckpt)->required();
  cp->add_option("--data", cp_data)->required();
  cp->add_option("--budget", cp_budget, "elements kept per set");
  cp->add_option("--out", cp_out);

  // verify
  auto* vf = app.add_subcommand("verify", "Run internal consistency suites");
  std::string vf_suite = "all";
  std::uint64_t vf_seed = 1;
  vf->add_option("--suite", vf_suite, "theorem1 | gradients | invariance | flows | bound | all");
  vf->add_option("--seed", vf_seed);

  // report
  auto* rp = app.add_subcommand("report", "Plot a metrics.csv training curve");
  std::string rp_csv, rp_out = "report.png";
  rp->add_option("--metrics", rp_csv, "metrics.csv from a training run")->required();
  rp->add_option("--out", rp_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed())
      return cmd_generate_data(gen_kind, gen_out, gen_count, gen_seed, gen_tasks, gen_corr);
    if (tr->parsed()) return cmd_train(tr_config, tr_task, tr_seed, tr_out, tr_idp, tr_resume);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_task, ev_seed, ev_out);
    if (cp->parsed()) return cmd_compress(cp_ckpt, cp_data, cp_budget, cp_out);
    if (vf->parsed()) return cmd_verify(vf_suite, vf_seed);
    if (rp->parsed()) return cmd_report(rp_csv, rp_out);
  } catch (const poex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const poex::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const poex::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
