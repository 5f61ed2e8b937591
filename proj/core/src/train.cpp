#include "poex/train.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "poex/checkpoint.hpp"

namespace poex {

using nlohmann::json;

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  // wallclock stays out of the file so identical runs are byte-identical
  f << "step,elbo,recon,kl\n";
  f << std::setprecision(10);
  for (const auto& r : rows)
    f << r.step << ',' << r.elbo << ',' << r.recon << ',' << r.kl << '\n';
}

void save_model(const std::string& path, const PoexModel& model, int step) {
  Checkpoint ck;
  json manifest;
  manifest["format"] = "poex";
  manifest["version"] = 1;
  manifest["step"] = step;
  manifest["trained"] = model.trained;
  manifest["adam_steps"] = model.params().step_count();
  manifest["model"] = json::parse(model_config_to_json(model.config()));
  json shapes = json::object();
  auto& ps = const_cast<PoexModel&>(model).params();
  for (const auto& [name, m] : ps.values()) {
    shapes[name] = {m.rows(), m.cols()};
    ck.arrays[name] = m;
    auto mi = ps.adam_m().find(name);
    auto vi = ps.adam_v().find(name);
    if (mi != ps.adam_m().end()) ck.arrays["opt.m." + name] = mi->second;
    if (vi != ps.adam_v().end()) ck.arrays["opt.v." + name] = vi->second;
  }
  manifest["shapes"] = shapes;
  ck.manifest_json = manifest.dump(2);
  save_checkpoint(path, ck);
}

LoadedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  json manifest;
  try {
    manifest = json::parse(ck.manifest_json);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "poex" || manifest.value("version", 0) != 1)
    throw CheckpointError("unrecognized checkpoint format in " + path);

  LoadedModel out;
  out.step = manifest.value("step", 0);
  out.model = std::make_unique<PoexModel>(model_config_from_json(manifest.at("model").dump()));
  out.model->trained = manifest.value("trained", false);
  auto& ps = out.model->params();
  ps.set_step_count(manifest.value("adam_steps", 0L));

  auto reshape = [&](const std::string& name, const Eigen::MatrixXd& flat) {
    auto sh = manifest.at("shapes").at(name);
    Eigen::Index rows = sh[0].get<Eigen::Index>(), cols = sh[1].get<Eigen::Index>();
    if (flat.size() != rows * cols)
      throw CheckpointError("array " + name + " does not match its manifest shape");
    Eigen::MatrixXd m(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat(0, k++);
    return m;
  };

  for (const auto& [name, flat] : ck.arrays) {
    if (name.starts_with("opt.m.")) {
      std::string base = name.substr(6);
      ps.adam_m()[base] = reshape(base, flat);
    } else if (name.starts_with("opt.v.")) {
      std::string base = name.substr(6);
      ps.adam_v()[base] = reshape(base, flat);
    } else {
      if (!ps.has(name))
        throw CheckpointError("checkpoint parameter " + name + " unknown to this model");
      ps.value(name) = reshape(name, flat);
    }
  }
  return out;
}

namespace {

AnySet resample(const AnySet& s, const MaskStrategy& mask, Rng& rng) {
  if (const auto* ms = std::get_if<MaskedSet>(&s)) {
    auto masks = sample_mask(ms->size(), ms->d, mask, rng, ms->grid);
    return with_masks(*ms, masks);
  }
  return with_function_masks(std::get<FunctionSet>(s), mask, rng);
}

}  // namespace

TrainResult train_model(PoexModel& model, const std::vector<AnySet>& dataset,
                        const TrainConfig& tcfg, const MaskStrategy& mask,
                        const std::string& out_dir, int resume_step) {
  if (dataset.empty()) throw std::invalid_argument("empty training dataset");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  int warmup = std::max(1, static_cast<int>(tcfg.kl_warmup_frac * tcfg.steps));
  auto t0 = std::chrono::steady_clock::now();

  for (int step = resume_step; step < tcfg.steps; ++step) {
    Rng step_rng(combine_seed(tcfg.seed, static_cast<std::uint64_t>(step) + 100));
    double kl_w = std::min(1.0, static_cast<double>(step + 1) / warmup);

    model.params().zero_grads();
    double elbo = 0, recon = 0, kl = 0;
    for (int b = 0; b < tcfg.batch; ++b) {
      const AnySet& base = dataset[std::uniform_int_distribution<size_t>(0, dataset.size() - 1)(step_rng)];
      AnySet masked = resample(base, mask, step_rng);
      std::uint64_t sample_seed =
          combine_seed(tcfg.seed, static_cast<std::uint64_t>(step) * 1000 + b);
      auto parts = model.elbo_backward(masked, tcfg.kl_samples, sample_seed, kl_w,
                                       1.0 / tcfg.batch);
      elbo += parts.elbo;
      recon += parts.recon;
      kl += parts.kl;
    }
    elbo /= tcfg.batch;
    recon /= tcfg.batch;
    kl /= tcfg.batch;
    if (!std::isfinite(elbo)) throw NumericError("elbo turned non-finite at step " +
                                                 std::to_string(step));
    model.params().adam_step(tcfg.lr, 0.9, 0.999, 1e-8, tcfg.clip);

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back({step, elbo, recon, kl, wall});

    if (tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0 &&
        step + 1 < tcfg.steps) {
      std::ostringstream name;
      name << out_dir << "/step-" << std::setw(6) << std::setfill('0') << (step + 1) << ".zip";
      save_model(name.str(), model, step + 1);
    }
  }

  model.trained = true;
  result.checkpoint_path = out_dir + "/final.zip";
  save_model(result.checkpoint_path, model, tcfg.steps);
  write_metrics_csv(out_dir + "/metrics.csv", result.metrics);
  return result;
}

}  // namespace poex
