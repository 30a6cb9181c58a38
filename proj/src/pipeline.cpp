#include "cravl/pipeline.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cravl/attnviz.hpp"
#include "cravl/audit.hpp"

namespace cravl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kTrainSplitSalt = 0x11aa;
constexpr uint64_t kTestSplitSalt = 0x22bb;

RunConfig load_config(const std::string& path, int64_t seed_override) {
  RunConfig cfg = RunConfig::load(path);
  if (seed_override >= 0) {
    cfg.data.seed = static_cast<uint64_t>(seed_override);
    cfg.train.seed = static_cast<uint64_t>(seed_override);
    cfg.head.seed = static_cast<uint64_t>(seed_override);
    cfg.pretrain.seed = static_cast<uint64_t>(seed_override);
  } else {
    cfg.pretrain.seed = cfg.train.seed;
  }
  return cfg;
}

std::vector<AppRecord> manifest_of(const std::string& data_dir) {
  return read_manifest(data_dir + "/manifest.jsonl");
}

template <typename T>
void setup_model(Model<T>& model, const RunConfig& cfg) {
  model.dims = cfg.dims;
  model.style_encoder = cfg.style_encoder;
  model.cross_attention = cfg.cross_attention;
  model.alpha = cfg.train.alpha;
  model.variant = cfg.loss;
  model.init(cfg.train.seed, LossConfig{cfg.loss, 10.0, 10.0, cfg.train.lambda});
}

// Dispatch a templated callable on the checkpoint's stored precision.
template <typename F>
auto with_checkpoint_model(const std::string& ckpt_path, F&& fn) {
  const Checkpoint c = Checkpoint::read(ckpt_path);
  if (c.i64("precision") == 1) {
    Model<float> model;
    model_from_checkpoint(c, model);
    return fn(model);
  }
  Model<double> model;
  model_from_checkpoint(c, model);
  return fn(model);
}

template <typename T>
void train_impl(const RunConfig& cfg, const std::string& data_dir, const std::string& out_ckpt,
                const std::string& text_ckpt, bool random_frozen,
                const std::string& resume_ckpt) {
  Model<T> model;
  setup_model(model, cfg);

  std::optional<Checkpoint> resume;
  if (!resume_ckpt.empty()) {
    resume = Checkpoint::read(resume_ckpt);
  } else if (!text_ckpt.empty()) {
    load_text_encoder(Checkpoint::read(text_ckpt), model);
  } else if (random_frozen) {
    model.text.set_frozen(true);
  } else {
    throw UsageError(
        "train needs --text-ckpt (from pretrain-text), --random-frozen, or --resume");
  }

  const auto records = manifest_of(data_dir);
  fit(model, cfg.train, records, data_dir, out_ckpt, resume ? &*resume : nullptr,
      [](int epoch, const StepResult& r) {
        std::printf("epoch %d: loss %.6f (contrastive %.6f, mse %.6f)\n", epoch, r.total,
                    r.contrastive, r.mse);
        std::fflush(stdout);
      });
}

int effective_threads(int threads) { return threads <= 0 ? 1 : threads; }

}  // namespace

void gen_data(const std::string& config_path, const std::string& out_dir, int64_t seed_override) {
  RunConfig cfg = load_config(config_path, seed_override);

  DataSpec train_spec = cfg.data;
  train_spec.n_apps = cfg.n_train_apps;
  train_spec.seed = Rng::mix(cfg.data.seed, kTrainSplitSalt);
  gen_dataset(train_spec, out_dir + "/train");

  DataSpec test_spec = cfg.data;
  test_spec.n_apps = cfg.n_test_apps;
  test_spec.seed = Rng::mix(cfg.data.seed, kTestSplitSalt);
  gen_dataset(test_spec, out_dir + "/test");

  echo_config(cfg, out_dir + "/config_echo.ini");
}

void pretrain_text(const std::string& config_path, const std::string& data_dir,
                   const std::string& out_ckpt, int64_t seed_override) {
  RunConfig cfg = load_config(config_path, seed_override);
  const auto records = manifest_of(data_dir);
  auto run = [&](auto&& model) {
    setup_model(model, cfg);
    const auto losses = cravl::pretrain_text(model, cfg.pretrain, records);
    if (!losses.empty()) {
      std::printf("pretrain-text: %zu steps, first loss %.4f, last loss %.4f\n", losses.size(),
                  losses.front(), losses.back());
    }
    text_to_checkpoint(model).write(out_ckpt);
  };
  if (cfg.train.f64) {
    Model<double> model;
    run(model);
  } else {
    Model<float> model;
    run(model);
  }
  echo_config(cfg, out_ckpt + ".config.ini");
}

void train(const std::string& config_path, const std::string& data_dir,
           const std::string& out_ckpt, const std::string& text_ckpt, bool random_frozen,
           const std::string& resume_ckpt, int64_t seed_override) {
  RunConfig cfg = load_config(config_path, seed_override);
  if (cfg.train.f64) {
    train_impl<double>(cfg, data_dir, out_ckpt, text_ckpt, random_frozen, resume_ckpt);
  } else {
    train_impl<float>(cfg, data_dir, out_ckpt, text_ckpt, random_frozen, resume_ckpt);
  }
  echo_config(cfg, out_ckpt + ".config.ini");
}

void train_head(const std::string& config_path, const std::string& model_ckpt,
                const std::string& data_dir, const std::string& out_head, int64_t seed_override) {
  RunConfig cfg = load_config(config_path, seed_override);
  const auto records = manifest_of(data_dir);
  with_checkpoint_model(model_ckpt, [&](auto& model) {
    using T = typename std::decay_t<decltype(model)>::Scalar;
    auto pairs = embed_dataset(model, records, data_dir);
    Head<T> head;
    head.init(model.dims.d_joint, cfg.head.seed);
    const auto losses = cravl::train_head(head, pairs, cfg.head);
    if (!losses.empty()) {
      std::printf("train-head: %zu steps, first loss %.4f, last loss %.4f\n", losses.size(),
                  losses.front(), losses.back());
    }
    head_to_checkpoint(head).write(out_head);
  });
  echo_config(cfg, out_head + ".config.ini");
}

template <typename T>
void predict_records(Model<T>& model, Head<T>& head, const std::vector<AppRecord>& records,
                     const std::string& data_dir, const std::string& out_jsonl, int threads) {
  if (head.d_joint != model.dims.d_joint) {
    throw DataError("head checkpoint dimension does not match the model");
  }
  std::vector<PredictionRecord> predictions(records.size());
  const int n_threads = effective_threads(threads);
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      try {
        predictions[i] = predict_app(model, head, records[i], data_dir);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  write_predictions(out_jsonl, predictions);
}

void predict(const std::string& model_ckpt, const std::string& head_ckpt,
             const std::string& data_dir, const std::string& out_jsonl, int threads) {
  const auto records = manifest_of(data_dir);
  with_checkpoint_model(model_ckpt, [&](auto& model) {
    using T = typename std::decay_t<decltype(model)>::Scalar;
    Head<T> head;
    head_from_checkpoint(Checkpoint::read(head_ckpt), head);
    predict_records(model, head, records, data_dir, out_jsonl, threads);
  });
}

GradCheckSummary run_grad_check(const std::string& ckpt_path, double h, int samples, uint64_t seed,
                                double lambda) {
  Model<double> model;
  if (!ckpt_path.empty()) {
    model_from_checkpoint(Checkpoint::read(ckpt_path), model);
  } else {
    // Toy dimensions keep the finite-difference sweep fast.
    model.dims.image = 32;
    model.dims.patch = 8;
    model.dims.d = 8;
    model.dims.heads = 2;
    model.dims.d_joint = 8;
    model.dims.vocab = vocab_size();
    model.init(seed);
    model.text.set_frozen(true);
  }
  TrainBatch<double> batch = random_batch<double>(model.dims, 4, seed);
  const GradCheckResult res = grad_check(model, batch, h, samples, seed, lambda);
  return {res.max_rel_err, res.n_checked};
}

void audit(const std::string& predictions_path, const std::string& data_dir,
           const std::string& out_json, int min_severity) {
  if (min_severity < 0 || min_severity > 4) {
    throw UsageError("min_severity must lie in [0, 4]");
  }
  const auto predictions = read_predictions(predictions_path);
  if (!data_dir.empty()) {
    const auto records = manifest_of(data_dir);
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.app_id);
    for (const auto& p : predictions) {
      if (!ids.count(p.app_id)) {
        throw DataError("predictions reference unknown app '" + p.app_id + "'");
      }
    }
  }
  const AuditReport report = audit_report(predictions, min_severity);
  std::ofstream out(out_json, std::ios::binary);
  if (!out) throw DataError("cannot write report: " + out_json);
  out << report_to_json(report) << "\n";
  if (!out) throw DataError("short write on report: " + out_json);
}

void deletion_rates(const std::string& predictions_path, const std::string& data_dir,
                    const std::string& out_csv) {
  const auto predictions = read_predictions(predictions_path);
  const auto records = manifest_of(data_dir);
  const DeletionTable table = cravl::deletion_rates(predictions, records);
  std::ofstream out(out_csv, std::ios::binary);
  if (!out) throw DataError("cannot write deletion-rate table: " + out_csv);
  out << deletion_table_to_csv(table);
  if (!out) throw DataError("short write on deletion-rate table: " + out_csv);
}

template <typename T>
void viz_records(Model<T>& model, const std::vector<AppRecord>& records,
                 const std::string& data_dir, const std::string& app_id, int image_index,
                 const std::string& regions, int k, int head, int layer,
                 const std::string& out_dir) {
  const AppRecord* app = nullptr;
  for (const auto& r : records) {
    if (r.app_id == app_id) {
      app = &r;
      break;
    }
  }
  if (!app) throw DataError("app '" + app_id + "' not found in manifest");
  const auto paths = app->image_paths();
  if (image_index < 0 || image_index >= static_cast<int>(paths.size())) {
    throw UsageError("image index out of range (app has " + std::to_string(paths.size()) +
                     " images)");
  }
  const ImageBuffer image = read_ppm(data_dir + "/" + paths[static_cast<size_t>(image_index)]);
  const TokenSequence tokens = tokenize(app->description);
  if (tokens.empty()) throw DataError("app '" + app_id + "' has an empty description");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory: " + out_dir);

  const AttentionTensor attn =
      extract_attention(model, image, tokens, layer, FusionSideKind::image_to_text);
  const auto& stoplist = default_stoplist();
  const auto per_patch = top_tokens_per_patch(attn, tokens, stoplist, k, head);

  json j;
  j["app_id"] = app_id;
  j["image_index"] = image_index;
  j["layer"] = layer;
  j["head"] = head;
  j["k"] = k;
  json patches = json::array();
  for (const auto& ranking : per_patch) {
    json row = json::array();
    for (const auto& t : ranking) {
      row.push_back({{"token", t.text}, {"weight", t.weight}, {"key", t.key}});
    }
    patches.push_back(row);
  }
  j["patches"] = patches;

  json region_out = json::array();
  if (!regions.empty()) {
    std::istringstream rs(regions);
    std::string region_text;
    int region_idx = 0;
    while (std::getline(rs, region_text, ';')) {
      std::vector<int> ids;
      std::istringstream ps(region_text);
      std::string part;
      while (std::getline(ps, part, ',')) {
        if (!part.empty()) ids.push_back(std::stoi(part));
      }
      const PatchRegion region = PatchRegion::validate(std::move(ids), attn.queries);
      const auto ranked = region_top_tokens(attn, region, tokens, stoplist, k, head);
      json rj;
      rj["patches"] = region.patches;
      json top = json::array();
      for (const auto& t : ranked) {
        top.push_back({{"token", t.text}, {"weight", t.weight}, {"key", t.key}});
      }
      rj["top_tokens"] = top;
      if (!ranked.empty()) {
        const std::string heatmap =
            out_dir + "/heatmap_region" + std::to_string(region_idx) + ".ppm";
        export_heatmap(heatmap, image, attn, ranked.front().key, head, model.dims.patch);
        rj["heatmap"] = heatmap;
      }
      region_out.push_back(rj);
      ++region_idx;
    }
  }
  j["regions"] = region_out;

  std::ofstream out(out_dir + "/attention.json", std::ios::binary);
  if (!out) throw DataError("cannot write attention report");
  out << j.dump(2) << "\n";
  if (!out) throw DataError("short write on attention report");
}

void viz_attention(const std::string& model_ckpt, const std::string& data_dir,
                   const std::string& app_id, int image_index, const std::string& regions, int k,
                   int head, int layer, const std::string& out_dir) {
  const auto records = manifest_of(data_dir);
  with_checkpoint_model(model_ckpt, [&](auto& model) {
    viz_records(model, records, data_dir, app_id, image_index, regions, k, head, layer, out_dir);
  });
}

std::string metrics_report(const std::string& cm_path) {
  return metrics_to_json(metrics(read_confusion(cm_path)));
}

template void predict_records<float>(Model<float>&, Head<float>&, const std::vector<AppRecord>&,
                                     const std::string&, const std::string&, int);
template void predict_records<double>(Model<double>&, Head<double>&, const std::vector<AppRecord>&,
                                      const std::string&, const std::string&, int);
template void viz_records<float>(Model<float>&, const std::vector<AppRecord>&, const std::string&,
                                 const std::string&, int, const std::string&, int, int, int,
                                 const std::string&);
template void viz_records<double>(Model<double>&, const std::vector<AppRecord>&,
                                  const std::string&, const std::string&, int, const std::string&,
                                  int, int, int, const std::string&);

}  // namespace cravl::pipeline
